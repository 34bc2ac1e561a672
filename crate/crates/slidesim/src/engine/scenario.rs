//! Scenario files: network size, mode, coding parameters, edge schedule,
//! corruption plan and run length, in TOML.

use std::collections::BTreeSet;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adversary::{complete, edge, Behavior, Corruption, CorruptionPlan, Edge, Phase, Schedule, ScheduleError, Violation};
use crate::codec::{derive_params_sized, CodecError, CodingParams, PacketSizing};
use crate::crypto::{Backend, NodeId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Edge-scheduling adversary only: plain Slide.
    #[default]
    Slide,
    /// Node-controlling adversary: the authenticated protocol.
    Auth,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slide" => Ok(Mode::Slide),
            "auth" => Ok(Mode::Auth),
            _ => Err(format!("unknown mode {s:?}; expected slide or auth")),
        }
    }
}

/// An edge list, or a preset name: `complete` or `no-direct` (every edge
/// except sender-receiver).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeSpec {
    Preset(String),
    List(Vec<Edge>),
}

impl Default for EdgeSpec {
    fn default() -> Self {
        EdgeSpec::Preset("complete".into())
    }
}

impl EdgeSpec {
    pub fn resolve(&self, n: usize) -> Result<Vec<Edge>, ConfigError> {
        match self {
            EdgeSpec::List(v) => Ok(v.iter().map(|&(a, b)| edge(a, b)).collect::<BTreeSet<_>>().into_iter().collect()),
            EdgeSpec::Preset(p) if p == "complete" => Ok(complete(n).into_iter().collect()),
            EdgeSpec::Preset(p) if p == "no-direct" => Ok(complete(n).into_iter().filter(|&e| e != (0, n - 1)).collect()),
            EdgeSpec::Preset(p) => Err(ConfigError::Invalid(format!("unknown edge preset {p:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub from: u64,
    pub to: u64,
    pub edges: EdgeSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleSpec {
    Static {
        #[serde(default)]
        edges: EdgeSpec,
    },
    Churn {
        p: f64,
        /// Defaults to the scenario seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default)]
        edges: EdgeSpec,
        /// Defaults to the smallest path through never-corrupted nodes.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        backbone: Option<Vec<NodeId>>,
    },
    Scripted {
        phases: Vec<PhaseSpec>,
        #[serde(default)]
        default: EdgeSpec,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptSpec {
    pub node: NodeId,
    pub behavior: Behavior,
    #[serde(default = "one")]
    pub round: u64,
}

fn one() -> u64 {
    1
}

fn default_packet_bits() -> u32 {
    256
}

fn default_security_bits() -> u32 {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    #[serde(default)]
    pub mode: Mode,
    /// Error rate as a fraction, e.g. "3/8".
    pub lambda: String,
    /// Information rate as a fraction.
    pub sigma: String,
    #[serde(default = "default_packet_bits")]
    pub packet_bits: u32,
    #[serde(default = "default_security_bits")]
    pub security_bits: u32,
    /// Transmissions to run. In slide mode transmission T carries message T.
    pub transmissions: u64,
    pub seed: u64,
    #[serde(default)]
    pub backend: Backend,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub corrupt: Vec<CorruptSpec>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid fraction {0:?}")]
    Fraction(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("{0}")]
    Invalid(String),
}

/// Why a scenario cannot run.
#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("schedule is not conforming: {0}")]
    Conforming(#[from] Violation),
}

pub fn parse_ratio(s: &str) -> Result<Ratio<u64>, ConfigError> {
    let bad = || ConfigError::Fraction(s.to_string());
    let (a, b) = match s.split_once('/') {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => (s.trim().parse().map_err(|_| bad())?, 1),
    };
    if b == 0 {
        return Err(bad());
    }
    Ok(Ratio::new(a, b))
}

/// A scenario with parameters derived and the schedule validated.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub scenario: Scenario,
    pub params: CodingParams,
    pub schedule: Schedule,
    pub plan: CorruptionPlan,
    /// Rounds per transmission.
    pub length: u64,
    pub digest: String,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn plan(&self) -> Result<CorruptionPlan, ConfigError> {
        let mut plan = CorruptionPlan::new();
        for c in &self.corrupt {
            if plan.insert(c.node, Corruption { round: c.round.max(1), behavior: c.behavior }).is_some() {
                return Err(ConfigError::Invalid(format!("node {} corrupted twice", c.node)));
            }
        }
        Ok(plan)
    }

    pub fn build_schedule(&self, plan: &CorruptionPlan) -> Result<Schedule, ConfigError> {
        let n = self.n;
        Ok(match &self.schedule {
            ScheduleSpec::Static { edges } => Schedule::Static { edges: edges.resolve(n)? },
            ScheduleSpec::Churn { p, seed, edges, backbone } => {
                let base = edges.resolve(n)?;
                let backbone = match backbone {
                    Some(b) => b.clone(),
                    None => Schedule::default_backbone(n, &base, plan).ok_or(ScheduleError::Backbone)?,
                };
                Schedule::Churn { p: *p, seed: seed.unwrap_or(self.seed), base, backbone }
            }
            ScheduleSpec::Scripted { phases, default } => Schedule::Scripted {
                phases: phases
                    .iter()
                    .map(|p| Ok(Phase { from: p.from, to: p.to, edges: p.edges.resolve(n)? }))
                    .collect::<Result<_, ConfigError>>()?,
                default: default.resolve(n)?,
            },
        })
    }

    /// Derive parameters, build the schedule and check that it conforms
    /// over the whole run.
    pub fn resolve(&self) -> Result<Resolved, SetupError> {
        if self.n > 32 {
            return Err(ConfigError::Invalid(format!("n = {} exceeds the supported 32 nodes", self.n)).into());
        }
        let sizing = PacketSizing {
            packet_bits: self.packet_bits,
            security_bits: self.security_bits,
            authenticated: self.mode == Mode::Auth,
        };
        let params = derive_params_sized(self.n, parse_ratio(&self.lambda)?, parse_ratio(&self.sigma)?, sizing)
            .map_err(ConfigError::from)?;
        let plan = self.plan()?;
        if self.mode == Mode::Slide && !plan.is_empty() {
            return Err(ConfigError::Invalid("node corruption needs the authenticated mode".into()).into());
        }
        let schedule = self.build_schedule(&plan)?;
        schedule.check(self.n, &plan).map_err(ConfigError::from)?;
        let per = if self.mode == Mode::Auth { 4 } else { 3 };
        let length = per * params.d as u64;
        schedule.validate(self.n, &plan, length * self.transmissions)?;
        let digest = hex::encode(Sha256::digest(self.to_toml().as_bytes()));
        Ok(Resolved { scenario: self.clone(), params, schedule, plan, length, digest })
    }
}

/// Scenario templates used by `gen`, the examples and the test suites.
impl Scenario {
    fn base(name: String, n: usize, mode: Mode, transmissions: u64, seed: u64, schedule: ScheduleSpec) -> Self {
        Scenario {
            name,
            n,
            mode,
            lambda: "3/8".into(),
            sigma: "1/2".into(),
            packet_bits: default_packet_bits(),
            security_bits: default_security_bits(),
            transmissions,
            seed,
            backend: Backend::default(),
            schedule,
            corrupt: Vec::new(),
        }
    }

    /// All nodes honest on the complete graph.
    pub fn honest(n: usize, mode: Mode, transmissions: u64, seed: u64) -> Self {
        Self::base(format!("honest-n{n}"), n, mode, transmissions, seed, ScheduleSpec::Static { edges: EdgeSpec::default() })
    }

    /// Random churn over the complete graph around a fixed backbone.
    pub fn churn(n: usize, mode: Mode, p: f64, transmissions: u64, seed: u64, backbone: Option<Vec<NodeId>>) -> Self {
        let schedule = ScheduleSpec::Churn { p, seed: None, edges: EdgeSpec::default(), backbone };
        Self::base(format!("churn-n{n}-s{seed}"), n, mode, transmissions, seed, schedule)
    }

    /// One corrupt internal node on the graph without the direct
    /// sender-receiver edge, so traffic has to cross internal nodes.
    pub fn attack(n: usize, behavior: Behavior, node: NodeId, transmissions: u64, seed: u64) -> Self {
        let name = format!("{}-n{n}", serde_json::to_value(behavior).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default());
        let mut s = Self::base(name, n, Mode::Auth, transmissions, seed, ScheduleSpec::Static { edges: EdgeSpec::Preset("no-direct".into()) });
        s.corrupt.push(CorruptSpec { node, behavior, round: 1 });
        s
    }

    /// Two corrupt internal nodes with different behaviors. With `n = 4`
    /// the only honest path is the direct edge, so the graph is complete.
    pub fn mixed(n: usize, transmissions: u64, seed: u64) -> Self {
        let mut s = Self::honest(n, Mode::Auth, transmissions, seed);
        s.name = format!("mixed-n{n}");
        s.corrupt.push(CorruptSpec { node: 1, behavior: Behavior::Duplicator, round: 1 });
        s.corrupt.push(CorruptSpec { node: 2, behavior: Behavior::Deleter, round: 1 });
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HONEST: &str = r#"
name = "honest"
n = 4
lambda = "3/8"
sigma = "1/2"
transmissions = 1
seed = 1

[schedule]
kind = "static"
"#;

    #[test]
    fn parses_and_resolves() {
        let s = Scenario::from_toml(HONEST).unwrap();
        let r = s.resolve().unwrap();
        assert_eq!(r.params.d, 1024);
        assert_eq!(r.length, 3072);
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn bad_lambda_is_config_error() {
        let s = Scenario::from_toml(&HONEST.replace("3/8", "1/2")).unwrap();
        assert!(matches!(s.resolve(), Err(SetupError::Config(ConfigError::Codec(_)))));
        assert!(matches!(parse_ratio("x/2"), Err(ConfigError::Fraction(_))));
    }

    #[test]
    fn corruption_requires_auth() {
        let text = format!("{HONEST}\n[[corrupt]]\nnode = 1\nbehavior = \"deleter\"\n");
        let s = Scenario::from_toml(&text).unwrap();
        assert!(matches!(s.resolve(), Err(SetupError::Config(ConfigError::Invalid(_)))));
        let s = Scenario::from_toml(&text.replace("n = 4", "n = 4\nmode = \"auth\"")).unwrap();
        let r = s.resolve().unwrap();
        assert_eq!(r.length, 4096);
    }

    #[test]
    fn nonconforming_script_detected() {
        let text = HONEST.replace(
            "kind = \"static\"",
            "kind = \"scripted\"\ndefault = \"complete\"\nphases = [{ from = 5, to = 9, edges = [[1, 2], [2, 3]] }]",
        );
        let s = Scenario::from_toml(&text).unwrap();
        assert!(matches!(s.resolve(), Err(SetupError::Conforming(Violation { round: 5 }))));
    }
}
