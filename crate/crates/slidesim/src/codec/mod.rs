//! Systematic Reed–Solomon erasure code over GF(2^16).
//!
//! A message is split into `threshold` data symbols, each symbol being a
//! fragment of `payload_bytes / 2` field elements. Fragment `i` is the value
//! of the degree-`< threshold` interpolating polynomial at the field point `i`,
//! so any `threshold` distinct fragments determine the message and any fewer
//! leave it undetermined.

pub mod gf;
mod packet;

pub use packet::{decode_packets, sign_codeword, Packet, PacketRef};

use std::sync::Arc;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest codeword length representable with distinct evaluation points.
const MAX_LEN: u64 = 65536;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("invalid coding parameters: {0}")]
    Param(String),
    #[error("message payload has {got} bytes, expected {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("insufficient fragments: have {have}, need {need}")]
    Insufficient { have: usize, need: usize },
    #[error("fragments belong to different codewords")]
    MixedCodewords,
    #[error("fragment index {0} out of range")]
    BadIndex(usize),
}

/// Packet sizing: total packet bits and the signature overhead reserved in
/// authenticated mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketSizing {
    pub packet_bits: u32,
    pub security_bits: u32,
    pub authenticated: bool,
}

impl Default for PacketSizing {
    fn default() -> Self {
        PacketSizing { packet_bits: 256, security_bits: 64, authenticated: false }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingParams {
    pub n: usize,
    pub lambda: Ratio<u64>,
    pub sigma: Ratio<u64>,
    pub security_bits: u32,
    pub packet_bits: u32,
    /// Fragments per codeword.
    pub d: usize,
    /// Distinct fragments required to decode, `(1-λ)D = D - 6n³`.
    pub threshold: usize,
    /// Bytes of message data carried by each fragment.
    pub payload_bytes: usize,
    /// Bytes per message.
    pub message_bytes: usize,
}

/// Derive parameters with the default packet sizing for edge-scheduling mode.
pub fn derive_params(n: usize, lambda: Ratio<u64>, sigma: Ratio<u64>) -> Result<CodingParams, CodecError> {
    derive_params_sized(n, lambda, sigma, PacketSizing::default())
}

pub fn derive_params_sized(
    n: usize,
    lambda: Ratio<u64>,
    sigma: Ratio<u64>,
    sizing: PacketSizing,
) -> Result<CodingParams, CodecError> {
    if n < 4 {
        return Err(CodecError::Param(format!("n = {n}; at least 4 nodes are required")));
    }
    let zero = Ratio::from_integer(0u64);
    let half = Ratio::new(1u64, 2);
    if lambda <= zero || lambda >= half {
        return Err(CodecError::Param(format!("lambda = {lambda}; must lie strictly between 0 and 1/2")));
    }
    if sigma <= zero || sigma > Ratio::from_integer(1) {
        return Err(CodecError::Param(format!("sigma = {sigma}; must lie in (0, 1]")));
    }
    let cube = 6 * (n as u64).pow(3);
    let d = Ratio::from_integer(cube) / lambda;
    if !d.is_integer() {
        return Err(CodecError::Param(format!("6n^3/lambda = {d} is not an integer")));
    }
    let d = d.to_integer();
    if d > MAX_LEN {
        return Err(CodecError::Param(format!("codeword length {d} exceeds {MAX_LEN}")));
    }
    let threshold = d - cube;
    let overhead = if sizing.authenticated { 2 * sizing.security_bits } else { 0 };
    if sizing.packet_bits <= overhead || !(sizing.packet_bits - overhead).is_multiple_of(16) {
        return Err(CodecError::Param(format!(
            "packet payload of {} bits must be a positive multiple of 16",
            sizing.packet_bits as i64 - overhead as i64
        )));
    }
    let payload_bytes = ((sizing.packet_bits - overhead) / 8) as usize;
    let message = sigma * Ratio::from_integer(d * payload_bytes as u64);
    if !message.is_integer() {
        return Err(CodecError::Param(format!("message size sigma*D*payload = {message} bytes is not integral")));
    }
    let message_bytes = message.to_integer() as usize;
    if message_bytes > threshold as usize * payload_bytes {
        return Err(CodecError::Param(format!(
            "sigma = {sigma} exceeds the code rate 1 - lambda = {}",
            Ratio::from_integer(1u64) - lambda
        )));
    }
    Ok(CodingParams {
        n,
        lambda,
        sigma,
        security_bits: sizing.security_bits,
        packet_bits: sizing.packet_bits,
        d: d as usize,
        threshold: threshold as usize,
        payload_bytes,
        message_bytes,
    })
}

/// An input-stream message.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub index: u64,
    pub payload: Vec<u8>,
}

/// The `D` fragments of one encoded message.
#[derive(Clone, Debug)]
pub struct Codeword {
    pub message_index: u64,
    pub fragments: Vec<Arc<[u8]>>,
}

/// Encoder/decoder with the parity coefficients precomputed.
pub struct ReedSolomon {
    params: CodingParams,
    words: usize,
    /// Row `j` holds the Lagrange coefficients of parity point `threshold + j`
    /// with respect to the data points.
    parity: Vec<u16>,
}

impl ReedSolomon {
    pub fn new(params: &CodingParams) -> Self {
        let k = params.threshold;
        let d = params.d;
        let data_points: Vec<u16> = (0..k).map(|i| i as u16).collect();
        let weights = barycentric_weights(&data_points);
        let mut parity = vec![0u16; (d - k) * k];
        for j in 0..d - k {
            let x = (k + j) as u16;
            let ell = data_points.iter().fold(1u16, |acc, &xi| gf::mul(acc, gf::add(x, xi)));
            let row = &mut parity[j * k..(j + 1) * k];
            for (i, &xi) in data_points.iter().enumerate() {
                row[i] = gf::mul(ell, gf::div(weights[i], gf::add(x, xi)));
            }
        }
        ReedSolomon { params: params.clone(), words: params.payload_bytes / 2, parity }
    }

    pub fn params(&self) -> &CodingParams {
        &self.params
    }

    pub fn encode(&self, msg: &Message) -> Result<Codeword, CodecError> {
        if msg.payload.len() != self.params.message_bytes {
            return Err(CodecError::WrongLength { expected: self.params.message_bytes, got: msg.payload.len() });
        }
        let k = self.params.threshold;
        let w = self.words;
        let mut data = vec![0u16; k * w];
        for (i, chunk) in msg.payload.chunks(2).enumerate() {
            let lo = chunk[0] as u16;
            let hi = chunk.get(1).copied().unwrap_or(0) as u16;
            data[i] = lo | hi << 8;
        }
        let mut fragments: Vec<Arc<[u8]>> = Vec::with_capacity(self.params.d);
        for i in 0..k {
            fragments.push(words_to_bytes(&data[i * w..(i + 1) * w]));
        }
        let mut acc = vec![0u16; w];
        for j in 0..self.params.d - k {
            acc.iter_mut().for_each(|a| *a = 0);
            let row = &self.parity[j * k..(j + 1) * k];
            for (i, &c) in row.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let sym = &data[i * w..(i + 1) * w];
                for (a, &s) in acc.iter_mut().zip(sym) {
                    *a ^= gf::mul(c, s);
                }
            }
            fragments.push(words_to_bytes(&acc));
        }
        Ok(Codeword { message_index: msg.index, fragments })
    }

    /// Decode from `(fragment index, payload)` pairs. Duplicated indices count
    /// once. Returns the message payload or `Insufficient`.
    pub fn decode(&self, fragments: &[(usize, &[u8])]) -> Result<Vec<u8>, CodecError> {
        let k = self.params.threshold;
        let w = self.words;
        let mut chosen: Vec<Option<&[u8]>> = vec![None; self.params.d];
        for &(idx, payload) in fragments {
            if idx >= self.params.d {
                return Err(CodecError::BadIndex(idx));
            }
            if payload.len() != self.params.payload_bytes {
                return Err(CodecError::WrongLength { expected: self.params.payload_bytes, got: payload.len() });
            }
            chosen[idx].get_or_insert(payload);
        }
        let have = chosen.iter().filter(|c| c.is_some()).count();
        if have < k {
            return Err(CodecError::Insufficient { have, need: k });
        }
        let picked: Vec<(u16, Vec<u16>)> = chosen
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|p| (i as u16, bytes_to_words(p))))
            .take(k)
            .collect();
        let mut data = vec![0u16; k * w];
        let missing: Vec<usize> = (0..k).filter(|&i| chosen[i].is_none()).collect();
        for (x, sym) in &picked {
            if (*x as usize) < k {
                data[*x as usize * w..(*x as usize + 1) * w].copy_from_slice(sym);
            }
        }
        if !missing.is_empty() {
            let xs: Vec<u16> = picked.iter().map(|(x, _)| *x).collect();
            let weights = barycentric_weights(&xs);
            for &m in &missing {
                let x = m as u16;
                let ell = xs.iter().fold(1u16, |acc, &xi| gf::mul(acc, gf::add(x, xi)));
                let out = &mut data[m * w..(m + 1) * w];
                for (s, (xi, sym)) in picked.iter().enumerate() {
                    let c = gf::mul(ell, gf::div(weights[s], gf::add(x, *xi)));
                    for (o, &v) in out.iter_mut().zip(sym) {
                        *o ^= gf::mul(c, v);
                    }
                }
            }
        }
        let mut bytes = Vec::with_capacity(k * w * 2);
        for v in data {
            bytes.push(v as u8);
            bytes.push((v >> 8) as u8);
        }
        bytes.truncate(self.params.message_bytes);
        Ok(bytes)
    }
}

/// `w_i = 1 / prod_{j != i} (x_i - x_j)`.
fn barycentric_weights(xs: &[u16]) -> Vec<u16> {
    xs.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let prod = xs
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .fold(1u16, |acc, (_, &xj)| gf::mul(acc, gf::add(xi, xj)));
            gf::inv(prod)
        })
        .collect()
}

fn words_to_bytes(words: &[u16]) -> Arc<[u8]> {
    let mut out = Vec::with_capacity(words.len() * 2);
    for &v in words {
        out.push(v as u8);
        out.push((v >> 8) as u8);
    }
    out.into()
}

fn bytes_to_words(bytes: &[u8]) -> Vec<u16> {
    bytes.chunks(2).map(|c| c[0] as u16 | (c[1] as u16) << 8).collect()
}
