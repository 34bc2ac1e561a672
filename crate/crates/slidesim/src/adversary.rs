//! Conforming adversaries: per-round edge activation, node corruption and
//! the check that every round keeps an honest sender-to-receiver path.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::NodeId;

/// Undirected edge stored with the smaller endpoint first.
pub type Edge = (NodeId, NodeId);

pub fn edge(a: NodeId, b: NodeId) -> Edge {
    if a < b { (a, b) } else { (b, a) }
}

pub fn complete(n: usize) -> BTreeSet<Edge> {
    (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect()
}

/// Overrides a corrupt node applies on top of the honest handlers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    /// Accepts packets and empties its incoming buffers every round.
    Deleter,
    /// Puts a copy of every confirmed packet back into the buffer it left.
    Duplicator,
    /// Forwards a copy of its first forwarded packet in place of each later one.
    Replacer,
    /// Reports empty incoming buffers in every reply.
    Liar,
    /// Absorbs packets like a deleter; once blacklisted it falls silent.
    Ghost,
    /// Absorbs packets and reports the earliest proofs it holds.
    ReportForger,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corruption {
    /// First global round (1-based) the behavior is active.
    pub round: u64,
    pub behavior: Behavior,
}

pub type CorruptionPlan = BTreeMap<NodeId, Corruption>;

/// A span of global rounds with a fixed edge set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub from: u64,
    pub to: u64,
    pub edges: Vec<Edge>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Schedule {
    /// The same edge set every round.
    Static { edges: Vec<Edge> },
    /// Every edge of `base` off the backbone flips state with probability
    /// `p` each round; backbone edges stay active.
    Churn { p: f64, seed: u64, base: Vec<Edge>, backbone: Vec<NodeId> },
    /// Explicit phases; rounds outside every phase use `default`.
    Scripted { phases: Vec<Phase>, default: Vec<Edge> },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("node {0} out of range")]
    Node(NodeId),
    #[error("self-loop at node {0}")]
    SelfLoop(NodeId),
    #[error("sender or receiver cannot be corrupted")]
    Endpoint,
    #[error("backbone is not a path from sender to receiver in the base graph")]
    Backbone,
    #[error("backbone node {0} is corrupted")]
    CorruptBackbone(NodeId),
    #[error("phase {from}..={to} is empty or reversed")]
    Phase { from: u64, to: u64 },
    #[error("churn probability {0} outside [0, 1]")]
    Probability(String),
}

/// First round without an honest sender-to-receiver path.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("round {round}: no active honest path from sender to receiver")]
pub struct Violation {
    pub round: u64,
}

/// Nodes corrupted at or before `round`.
pub fn corrupted_by(plan: &CorruptionPlan, round: u64) -> BTreeSet<NodeId> {
    plan.iter().filter(|(_, c)| c.round <= round).map(|(&x, _)| x).collect()
}

/// Lexicographically smallest simple path from 0 to `n-1` over `edges`
/// avoiding `bad`.
pub fn smallest_path(n: usize, edges: &BTreeSet<Edge>, bad: &BTreeSet<NodeId>) -> Option<Vec<NodeId>> {
    fn reach(n: usize, edges: &BTreeSet<Edge>, bad: &BTreeSet<NodeId>, from: NodeId, seen: &BTreeSet<NodeId>) -> bool {
        let mut stack = vec![from];
        let mut vis = seen.clone();
        vis.insert(from);
        while let Some(x) = stack.pop() {
            if x == n - 1 {
                return true;
            }
            for y in 0..n {
                if !vis.contains(&y) && !bad.contains(&y) && edges.contains(&edge(x, y)) {
                    vis.insert(y);
                    stack.push(y);
                }
            }
        }
        false
    }
    if bad.contains(&0) || bad.contains(&(n - 1)) {
        return None;
    }
    let mut path = vec![0];
    let mut seen: BTreeSet<NodeId> = [0].into();
    let mut at = 0;
    while at != n - 1 {
        let next = (0..n).find(|&y| {
            !seen.contains(&y) && !bad.contains(&y) && edges.contains(&edge(at, y)) && reach(n, edges, bad, y, &seen)
        })?;
        path.push(next);
        seen.insert(next);
        at = next;
    }
    Some(path)
}

fn check_edges(n: usize, edges: &[Edge]) -> Result<(), ScheduleError> {
    for &(a, b) in edges {
        if a >= n {
            return Err(ScheduleError::Node(a));
        }
        if b >= n {
            return Err(ScheduleError::Node(b));
        }
        if a == b {
            return Err(ScheduleError::SelfLoop(a));
        }
    }
    Ok(())
}

fn norm(edges: &[Edge]) -> BTreeSet<Edge> {
    edges.iter().map(|&(a, b)| edge(a, b)).collect()
}

impl Schedule {
    /// Structural checks that do not depend on the run length.
    pub fn check(&self, n: usize, plan: &CorruptionPlan) -> Result<(), ScheduleError> {
        if plan.contains_key(&0) || plan.contains_key(&(n - 1)) {
            return Err(ScheduleError::Endpoint);
        }
        if let Some(&x) = plan.keys().find(|&&x| x >= n) {
            return Err(ScheduleError::Node(x));
        }
        match self {
            Schedule::Static { edges } => check_edges(n, edges),
            Schedule::Churn { p, base, backbone, .. } => {
                check_edges(n, base)?;
                if !(0.0..=1.0).contains(p) {
                    return Err(ScheduleError::Probability(p.to_string()));
                }
                let base = norm(base);
                let ok = backbone.first() == Some(&0)
                    && backbone.last() == Some(&(n - 1))
                    && backbone.iter().collect::<BTreeSet<_>>().len() == backbone.len()
                    && backbone.windows(2).all(|w| base.contains(&edge(w[0], w[1])));
                if !ok {
                    return Err(ScheduleError::Backbone);
                }
                if let Some(&x) = backbone.iter().find(|x| plan.contains_key(x)) {
                    return Err(ScheduleError::CorruptBackbone(x));
                }
                Ok(())
            }
            Schedule::Scripted { phases, default } => {
                check_edges(n, default)?;
                for ph in phases {
                    check_edges(n, &ph.edges)?;
                    if ph.from == 0 || ph.to < ph.from {
                        return Err(ScheduleError::Phase { from: ph.from, to: ph.to });
                    }
                }
                Ok(())
            }
        }
    }

    /// Every edge the schedule can ever activate.
    pub fn universe(&self) -> BTreeSet<Edge> {
        match self {
            Schedule::Static { edges } => norm(edges),
            Schedule::Churn { base, .. } => norm(base),
            Schedule::Scripted { phases, default } => {
                let mut all = norm(default);
                for p in phases {
                    all.extend(norm(&p.edges));
                }
                all
            }
        }
    }

    /// Default churn backbone: the smallest path through nodes never corrupted.
    pub fn default_backbone(n: usize, base: &[Edge], plan: &CorruptionPlan) -> Option<Vec<NodeId>> {
        smallest_path(n, &norm(base), &plan.keys().copied().collect())
    }

    /// Edge set of a scripted schedule at a round.
    fn scripted_at(phases: &[Phase], default: &[Edge], round: u64) -> BTreeSet<Edge> {
        match phases.iter().rev().find(|p| p.from <= round && round <= p.to) {
            Some(p) => norm(&p.edges),
            None => norm(default),
        }
    }

    /// Check that every round in `1..=rounds` keeps an active path through
    /// nodes not yet corrupted. Churn schedules pass by construction once
    /// `check` accepts the backbone.
    pub fn validate(&self, n: usize, plan: &CorruptionPlan, rounds: u64) -> Result<(), Violation> {
        // Rounds where the edge set or the corrupted set may change.
        let mut marks: BTreeSet<u64> = plan.values().map(|c| c.round.max(1)).collect();
        marks.insert(1);
        let at: Box<dyn Fn(u64) -> BTreeSet<Edge>> = match self {
            Schedule::Static { edges } => {
                let e = norm(edges);
                Box::new(move |_| e.clone())
            }
            Schedule::Churn { backbone, .. } => {
                let e: BTreeSet<Edge> = backbone.windows(2).map(|w| edge(w[0], w[1])).collect();
                Box::new(move |_| e.clone())
            }
            Schedule::Scripted { phases, default } => {
                for p in phases {
                    marks.insert(p.from);
                    marks.insert(p.to + 1);
                }
                let (phases, default) = (phases.clone(), default.clone());
                Box::new(move |r| Self::scripted_at(&phases, &default, r))
            }
        };
        for &r in marks.iter().filter(|&&r| r <= rounds) {
            if smallest_path(n, &at(r), &corrupted_by(plan, r)).is_none() {
                return Err(Violation { round: r });
            }
        }
        Ok(())
    }

    pub fn runner(&self) -> ScheduleRunner {
        let state = match self {
            Schedule::Churn { seed, base, .. } => {
                Some((ChaCha20Rng::seed_from_u64(*seed ^ 0x5C4E_D11E), norm(base)))
            }
            _ => None,
        };
        ScheduleRunner { schedule: self.clone(), churn: state, round: 0 }
    }
}

/// Produces the active edge set round by round.
pub struct ScheduleRunner {
    schedule: Schedule,
    churn: Option<(ChaCha20Rng, BTreeSet<Edge>)>,
    round: u64,
}

impl ScheduleRunner {
    /// Active edges for the next round. Must be called once per round in order.
    pub fn next_round(&mut self) -> BTreeSet<Edge> {
        self.round += 1;
        match &self.schedule {
            Schedule::Static { edges } => norm(edges),
            Schedule::Scripted { phases, default } => Schedule::scripted_at(phases, default, self.round),
            Schedule::Churn { p, base, backbone, .. } => {
                let (rng, active) = self.churn.as_mut().expect("churn state");
                let spine: BTreeSet<Edge> = backbone.windows(2).map(|w| edge(w[0], w[1])).collect();
                if self.round > 1 {
                    for e in norm(base) {
                        if !spine.contains(&e) && rng.gen_bool(*p) && !active.remove(&e) {
                            active.insert(e);
                        }
                    }
                }
                active.extend(spine);
                active.clone()
            }
        }
    }

    /// Path used to count wasted rounds in the current round.
    pub fn designated(&self, n: usize, active: &BTreeSet<Edge>, corrupted: &BTreeSet<NodeId>) -> Option<Vec<NodeId>> {
        match &self.schedule {
            Schedule::Churn { backbone, .. } => Some(backbone.clone()),
            _ => smallest_path(n, active, corrupted),
        }
    }
}
