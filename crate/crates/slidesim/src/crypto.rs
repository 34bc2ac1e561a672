//! Key generation, signing and verification.
//!
//! Two interchangeable backends sit behind [`SigningKey`] and [`Directory`]:
//! a ledger oracle that records every issued signature and verifies by
//! lookup, and real Ed25519. Corrupt nodes keep their own keys but have no
//! handle that signs as anybody else.

use std::collections::{BTreeMap, HashSet};
use std::sync::{Arc, Mutex};

use ed25519_dalek::{Signer, Verifier};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("unknown signer {0}")]
    UnknownSigner(NodeId),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    Ledger,
    Ed25519,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Signature {
    Tag(u64),
    Ed25519(Box<[u8; 64]>),
}

/// Canonical byte encoding of values that get signed.
pub trait Canonical {
    fn encode(&self, out: &mut Vec<u8>);

    fn to_canonical(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.encode(&mut v);
        v
    }
}

macro_rules! canonical_int {
    ($($t:ty),*) => {$(
        impl Canonical for $t {
            fn encode(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&(*self as i64).to_le_bytes());
            }
        }
    )*};
}
canonical_int!(u8, u16, u32, u64, usize, i32, i64);

impl Canonical for bool {
    fn encode(&self, out: &mut Vec<u8>) {
        out.push(*self as u8);
    }
}

impl<T: Canonical> Canonical for Option<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            None => out.push(0),
            Some(v) => {
                out.push(1);
                v.encode(out);
            }
        }
    }
}

impl Canonical for [u8] {
    fn encode(&self, out: &mut Vec<u8>) {
        (self.len() as u64).encode(out);
        out.extend_from_slice(self);
    }
}

impl<A: Canonical, B: Canonical> Canonical for (A, B) {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
        self.1.encode(out);
    }
}

impl Canonical for Signature {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Signature::Tag(t) => {
                out.push(0);
                t.encode(out);
            }
            Signature::Ed25519(b) => {
                out.push(1);
                out.extend_from_slice(&b[..]);
            }
        }
    }
}

impl<T: Canonical> Canonical for Signed<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        self.value.encode(out);
        self.signer.encode(out);
        self.sig.encode(out);
    }
}

#[derive(Default)]
struct LedgerOracle {
    issued: Mutex<HashSet<u64>>,
}

fn fingerprint(signer: NodeId, msg: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update((signer as u64).to_le_bytes());
    h.update(msg);
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Clone)]
enum SignInner {
    Ledger(Arc<LedgerOracle>),
    Ed(Box<ed25519_dalek::SigningKey>),
}

#[derive(Clone)]
enum VerifyInner {
    Ledger(Arc<LedgerOracle>),
    Ed(ed25519_dalek::VerifyingKey),
}

/// A node's private signing capability.
#[derive(Clone)]
pub struct SigningKey {
    node: NodeId,
    inner: SignInner,
}

impl std::fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SigningKey({})", self.node)
    }
}

impl SigningKey {
    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn sign_bytes(&self, msg: &[u8]) -> Signature {
        match &self.inner {
            SignInner::Ledger(oracle) => {
                let fp = fingerprint(self.node, msg);
                oracle.issued.lock().expect("ledger lock").insert(fp);
                Signature::Tag(fp)
            }
            SignInner::Ed(key) => Signature::Ed25519(Box::new(key.sign(msg).to_bytes())),
        }
    }

    pub fn sign<T: Canonical>(&self, value: T) -> Signed<T> {
        let sig = self.sign_bytes(&value.to_canonical());
        Signed { value, signer: self.node, sig }
    }
}

/// Public keys of every node.
#[derive(Clone)]
pub struct Directory {
    keys: BTreeMap<NodeId, VerifyInner>,
}

impl Directory {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn verify_bytes(&self, signer: NodeId, msg: &[u8], sig: &Signature) -> Result<bool, CryptoError> {
        let key = self.keys.get(&signer).ok_or(CryptoError::UnknownSigner(signer))?;
        Ok(match (key, sig) {
            (VerifyInner::Ledger(oracle), Signature::Tag(tag)) => {
                let fp = fingerprint(signer, msg);
                *tag == fp && oracle.issued.lock().expect("ledger lock").contains(&fp)
            }
            (VerifyInner::Ed(vk), Signature::Ed25519(bytes)) => {
                vk.verify(msg, &ed25519_dalek::Signature::from_bytes(bytes)).is_ok()
            }
            _ => false,
        })
    }

    /// Verification that treats an unknown signer as a plain rejection.
    pub fn check<T: Canonical>(&self, signed: &Signed<T>) -> bool {
        self.verify(signed).unwrap_or(false)
    }

    pub fn verify<T: Canonical>(&self, signed: &Signed<T>) -> Result<bool, CryptoError> {
        self.verify_bytes(signed.signer, &signed.value.to_canonical(), &signed.sig)
    }
}

/// A value together with its signer and signature.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signed<T> {
    pub value: T,
    pub signer: NodeId,
    pub sig: Signature,
}

pub struct KeyPair {
    pub node_id: NodeId,
    pub signing: SigningKey,
}

/// Generate one key per node. The seed only matters for the Ed25519 backend.
pub fn keygen(
    ids: &[NodeId],
    backend: Backend,
    seed: u64,
) -> Result<(BTreeMap<NodeId, KeyPair>, Directory), CryptoError> {
    let mut pairs = BTreeMap::new();
    let mut keys = BTreeMap::new();
    let oracle = Arc::new(LedgerOracle::default());
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for &id in ids {
        if pairs.contains_key(&id) {
            return Err(CryptoError::DuplicateId(id));
        }
        let (sign, verify) = match backend {
            Backend::Ledger => (SignInner::Ledger(oracle.clone()), VerifyInner::Ledger(oracle.clone())),
            Backend::Ed25519 => {
                let mut secret = [0u8; 32];
                rng.fill_bytes(&mut secret);
                let sk = ed25519_dalek::SigningKey::from_bytes(&secret);
                let vk = sk.verifying_key();
                (SignInner::Ed(Box::new(sk)), VerifyInner::Ed(vk))
            }
        };
        pairs.insert(id, KeyPair { node_id: id, signing: SigningKey { node: id, inner: sign } });
        keys.insert(id, verify);
    }
    Ok((pairs, Directory { keys }))
}
