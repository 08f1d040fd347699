//! Paired Monte Carlo roll-outs through two empirical transition tables and
//! detection of the first point where they diverge.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::state::{ActionVector, QuantizedState, Schema};
use crate::transition::{common_states, Corpus, EmpiricalTransition};

/// One roll-out step: the state reached, the action on the edge that reached
/// it, and the edge probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub state: QuantizedState,
    pub action: ActionVector,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub origin: QuantizedState,
    pub corpus: Corpus,
    pub steps: Vec<RolloutStep>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Origin followed by every visited state.
    pub fn states(&self) -> impl Iterator<Item = &QuantizedState> {
        std::iter::once(&self.origin).chain(self.steps.iter().map(|s| &s.state))
    }
}

/// Samples a chain from `origin`, each step proportional to edge counts.
/// Stops after `max_len` steps or at a state with no outgoing edges.
///
/// Every step consumes exactly one uniform draw, inverted through the edge
/// CDF, so two tables rolled out from the same stream stay step-aligned.
pub fn rollout<R: Rng + ?Sized>(
    et: &EmpiricalTransition,
    origin: &QuantizedState,
    max_len: usize,
    rng: &mut R,
) -> Result<Rollout> {
    if !et.knows(origin) {
        return Err(Error::Origin(origin.to_string()));
    }
    let mut steps = Vec::new();
    let mut current = origin.clone();
    while steps.len() < max_len {
        let edges = et.edges(&current);
        if edges.is_empty() {
            break;
        }
        let total: u64 = edges.iter().map(|e| e.count).sum();
        let u: f64 = rng.gen();
        let target = u * total as f64;
        let mut acc = 0u64;
        let e = edges
            .iter()
            .find(|e| {
                acc += e.count;
                target < acc as f64
            })
            .unwrap_or(&edges[edges.len() - 1]);
        steps.push(RolloutStep {
            state: e.to.clone(),
            action: e.action.clone(),
            probability: e.probability,
        });
        current = e.to.clone();
    }
    Ok(Rollout {
        origin: origin.clone(),
        corpus: et.corpus,
        steps,
    })
}

pub fn rollout_seeded(
    et: &EmpiricalTransition,
    origin: &QuantizedState,
    max_len: usize,
    seed: u64,
) -> Result<Rollout> {
    rollout(et, origin, max_len, &mut rng::stream(seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub state: QuantizedState,
    pub action: ActionVector,
    pub probability: f64,
}

impl From<&RolloutStep> for Anchor {
    fn from(s: &RolloutStep) -> Self {
        Anchor {
            state: s.state.clone(),
            action: s.action.clone(),
            probability: s.probability,
        }
    }
}

/// First paired position where the roll-outs differ both in state and in
/// branch probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    /// Step index in the paired roll-outs at which the branches split.
    pub position: usize,
    /// Last common point before the split.
    pub anchor: Anchor,
    pub sim: Anchor,
    pub phy: Anchor,
    /// Physical roll-out steps after `phy`, in order.
    pub phy_continuation: Vec<RolloutStep>,
}

impl Divergence {
    /// Re-checks both gates from the divergence's own fields.
    pub fn satisfies_gates(&self, schema: &Schema, eps_c: f64, eps_p: f64) -> bool {
        let s = schema.representative(&self.sim.state);
        let p = schema.representative(&self.phy.state);
        schema.distance_unchecked(s.values(), p.values()) > eps_c
            && (self.sim.probability - self.phy.probability).abs() > eps_p
    }
}

fn diverges_at(
    schema: &Schema,
    sim: &RolloutStep,
    phy: &RolloutStep,
    eps_c: f64,
    eps_p: f64,
) -> bool {
    let d = schema.distance_unchecked(
        schema.representative(&sim.state).values(),
        schema.representative(&phy.state).values(),
    );
    d > eps_c && (sim.probability - phy.probability).abs() > eps_p
}

/// Lock-step scan for the first position where the states differ by more than
/// `eps_c` and the branch probabilities by more than `eps_p`.
pub fn find_divergence(
    r_sim: &Rollout,
    r_phy: &Rollout,
    schema: &Schema,
    eps_c: f64,
    eps_p: f64,
) -> Result<Option<Divergence>> {
    if r_sim.origin != r_phy.origin {
        return Err(Error::Pairing);
    }
    for (t, (s, p)) in r_sim.steps.iter().zip(&r_phy.steps).enumerate() {
        if !diverges_at(schema, s, p, eps_c, eps_p) {
            continue;
        }
        let anchor = if t == 0 {
            Anchor {
                state: r_phy.origin.clone(),
                action: p.action.clone(),
                probability: 1.0,
            }
        } else {
            Anchor::from(&r_phy.steps[t - 1])
        };
        return Ok(Some(Divergence {
            position: t,
            anchor,
            sim: Anchor::from(s),
            phy: Anchor::from(p),
            phy_continuation: r_phy.steps[t + 1..].to_vec(),
        }));
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_rollouts: usize,
    pub max_len: usize,
    pub eps_c: f64,
    pub eps_p: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n_rollouts: 100,
            max_len: 20,
            eps_c: 0.5,
            eps_p: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub n_rollouts: usize,
    pub common_states: usize,
    /// Divergences in iteration order.
    pub divergences: Vec<Divergence>,
}

impl SweepResult {
    /// Indices of divergences whose anchors are not within `eps_c` of an
    /// earlier anchor.
    pub fn unique(&self, schema: &Schema, eps_c: f64) -> Vec<usize> {
        let mut kept: Vec<(usize, Vec<f64>)> = Vec::new();
        for (i, d) in self.divergences.iter().enumerate() {
            let rep = schema.representative(&d.anchor.state).0;
            if kept
                .iter()
                .all(|(_, k)| schema.distance_unchecked(k, &rep) > eps_c)
            {
                kept.push((i, rep));
            }
        }
        kept.into_iter().map(|(i, _)| i).collect()
    }
}

/// Runs `n_rollouts` paired roll-outs from origins drawn uniformly from the
/// common source states. Iteration `i` uses its own stream derived from
/// `seed`, and results are kept in iteration order. Both roll-outs of a pair
/// share one random stream, so identical tables never diverge.
pub fn paired_sweep(
    et_sim: &EmpiricalTransition,
    et_phy: &EmpiricalTransition,
    schema: &Schema,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<SweepResult> {
    if cfg.n_rollouts == 0 || cfg.max_len == 0 {
        return Err(Error::Sweep("n_rollouts and max_len must be >= 1".into()));
    }
    let origins: Vec<QuantizedState> = common_states(et_sim, et_phy)?.into_iter().collect();
    if origins.is_empty() {
        return Err(Error::Sweep(
            "no common states between the two corpora; the quantization grid is probably too fine"
                .into(),
        ));
    }
    let mut divergences = Vec::new();
    for i in 0..cfg.n_rollouts {
        let mut r = rng::stream(rng::nth(seed, i as u64));
        let origin = origins.choose(&mut r).expect("non-empty");
        let pair_seed: u64 = r.gen();
        let rs = rollout_seeded(et_sim, origin, cfg.max_len, pair_seed)?;
        let rp = rollout_seeded(et_phy, origin, cfg.max_len, pair_seed)?;
        if let Some(d) = find_divergence(&rs, &rp, schema, cfg.eps_c, cfg.eps_p)? {
            divergences.push(d);
        }
    }
    Ok(SweepResult {
        n_rollouts: cfg.n_rollouts,
        common_states: origins.len(),
        divergences,
    })
}
