//! Tabular SARSA over any episodic environment with a discrete action set.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manager::Policy;
use crate::rng;
use crate::state::{ActionVector, QuantizedState, Schema, StateVector};

pub trait Episodic {
    /// Starts episode `episode` and returns its initial state.
    fn reset(&mut self, episode: u64) -> Result<StateVector>;

    /// `(next_state, reward, done)`.
    fn step(&mut self, action: &ActionVector) -> Result<(StateVector, f64, bool)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SarsaConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// Exploration rate at the first episode; decays linearly to zero.
    pub epsilon: f64,
    pub episodes: u64,
    /// Value of every table entry before its first update.
    pub q_init: f64,
    /// Extra initial value on the prior's preferred action, when a prior is
    /// given to training.
    pub prior_bonus: f64,
}

impl Default for SarsaConfig {
    fn default() -> Self {
        SarsaConfig {
            alpha: 0.1,
            gamma: 0.95,
            epsilon: 0.1,
            episodes: 20_000,
            q_init: -10.0,
            prior_bonus: 10.0,
        }
    }
}

impl SarsaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Usage("episodes must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Input(format!(
                "alpha {} is outside (0, 1]",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Input(format!(
                "gamma {} is outside [0, 1]",
                self.gamma
            )));
        }
        if !(self.q_init.is_finite() && self.prior_bonus.is_finite()) {
            return Err(Error::Input("q_init and prior_bonus must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Input(format!(
                "epsilon {} is outside [0, 1]",
                self.epsilon
            )));
        }
        Ok(())
    }

    fn epsilon_at(&self, episode: u64) -> f64 {
        self.epsilon * (1.0 - episode as f64 / self.episodes as f64)
    }
}

pub const POLICY_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QRow {
    state: QuantizedState,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PolicyFile {
    version: u32,
    schema_digest: String,
    config: SarsaConfig,
    seed: u64,
    actions: Vec<ActionVector>,
    q: Vec<QRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SarsaPolicy {
    pub schema_digest: String,
    pub config: SarsaConfig,
    pub seed: u64,
    pub actions: Vec<ActionVector>,
    pub q: BTreeMap<QuantizedState, Vec<f64>>,
}

impl SarsaPolicy {
    pub fn new(
        schema: &Schema,
        actions: Vec<ActionVector>,
        config: SarsaConfig,
        seed: u64,
    ) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::Input("empty action set".into()));
        }
        for a in &actions {
            schema.check_action(a)?;
        }
        Ok(SarsaPolicy {
            schema_digest: schema.digest(),
            config,
            seed,
            actions,
            q: BTreeMap::new(),
        })
    }

    pub fn values(&self, q: &QuantizedState) -> Option<&[f64]> {
        self.q.get(q).map(Vec::as_slice)
    }

    /// Argmax action index; ties go to the lowest index, unseen states to 0.
    pub fn greedy(&self, q: &QuantizedState) -> usize {
        self.q.get(q).map_or(0, |vals| argmax(vals))
    }

    /// Like [`greedy`](Self::greedy), but an unseen state borrows the row of
    /// the nearest visited state (schema distance between bin centers, ties
    /// to the smallest state).
    pub fn greedy_nearest(&self, q: &QuantizedState, schema: &Schema) -> usize {
        if let Some(vals) = self.q.get(q) {
            return argmax(vals);
        }
        let here = schema.representative(q);
        let mut best: Option<(f64, &Vec<f64>)> = None;
        for (k, vals) in &self.q {
            let d = schema.distance_unchecked(schema.representative(k).values(), here.values());
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, vals));
            }
        }
        best.map_or(0, |(_, vals)| argmax(vals))
    }

    fn row(&mut self, q: &QuantizedState, prior: Option<&Prior>) -> &mut Vec<f64> {
        let (n, init, bonus) = (
            self.actions.len(),
            self.config.q_init,
            self.config.prior_bonus,
        );
        self.q.entry(q.clone()).or_insert_with(|| {
            let mut v = vec![init; n];
            if let Some((f, schema)) = prior {
                if let Some(x) = v.get_mut(f(&schema.representative(q))) {
                    *x += bonus;
                }
            }
            v
        })
    }

    pub fn bind<'a>(&'a self, schema: &'a Schema) -> Result<GreedyPolicy<'a>> {
        if schema.digest() != self.schema_digest {
            return Err(Error::Input(
                "policy was trained under a different schema".into(),
            ));
        }
        Ok(GreedyPolicy {
            policy: self,
            schema,
        })
    }

    pub fn to_json(&self) -> String {
        let file = PolicyFile {
            version: POLICY_FILE_VERSION,
            schema_digest: self.schema_digest.clone(),
            config: self.config,
            seed: self.seed,
            actions: self.actions.clone(),
            q: self
                .q
                .iter()
                .map(|(state, values)| QRow {
                    state: state.clone(),
                    values: values.clone(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string(&file).expect("policy serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PolicyFile = serde_json::from_str(text).map_err(|e| {
            Error::format(
                "policy file",
                format!("line {} column {}: {e}", e.line(), e.column()),
            )
        })?;
        if file.version != POLICY_FILE_VERSION {
            return Err(Error::format(
                "policy file",
                format!("unsupported version {}", file.version),
            ));
        }
        let n = file.actions.len();
        if n == 0 {
            return Err(Error::format("policy file", "empty action set"));
        }
        let mut q = BTreeMap::new();
        for row in file.q {
            if row.values.len() != n || row.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(
                    "policy file",
                    format!("bad q-row for state {}", row.state),
                ));
            }
            q.insert(row.state, row.values);
        }
        Ok(SarsaPolicy {
            schema_digest: file.schema_digest,
            config: file.config,
            seed: file.seed,
            actions: file.actions,
            q,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }
}

fn argmax(vals: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in vals.iter().enumerate() {
        if v > vals[best] {
            best = i;
        }
    }
    best
}

/// Greedy action choice from a trained table.
pub struct GreedyPolicy<'a> {
    policy: &'a SarsaPolicy,
    schema: &'a Schema,
}

impl Policy for GreedyPolicy<'_> {
    fn act(&mut self, s: &StateVector) -> ActionVector {
        let i = match self.schema.quantize(s) {
            Ok(q) => self.policy.greedy_nearest(&q, self.schema),
            Err(_) => 0,
        };
        self.policy.actions[i].clone()
    }
}

/// `n` velocities evenly spanning `[-v_max, v_max]`.
pub fn velocity_set(v_max: f64, n: usize) -> Vec<ActionVector> {
    if n == 1 {
        return vec![ActionVector(vec![0.0])];
    }
    (0..n)
        .map(|i| ActionVector(vec![-v_max + 2.0 * v_max * i as f64 / (n - 1) as f64]))
        .collect()
}

/// Preferred action index for a state, used to initialize new table rows.
pub type PriorFn<'a> = dyn Fn(&StateVector) -> usize + 'a;
type Prior<'a, 'b> = (&'a PriorFn<'b>, &'a Schema);

fn choose<R: Rng>(
    p: &mut SarsaPolicy,
    q: &QuantizedState,
    eps: f64,
    rng: &mut R,
    prior: Option<&Prior>,
) -> usize {
    p.row(q, prior);
    if eps > 0.0 && rng.gen::<f64>() < eps {
        rng.gen_range(0..p.actions.len())
    } else {
        p.greedy(q)
    }
}

/// Index of the action closest (L1) to `target`, ties to the lowest index.
pub fn nearest_action(actions: &[ActionVector], target: &ActionVector) -> usize {
    let l1 = |a: &ActionVector| -> f64 {
        a.values()
            .iter()
            .zip(target.values())
            .map(|(x, y)| (x - y).abs())
            .sum()
    };
    let mut best = 0;
    for (i, a) in actions.iter().enumerate() {
        if l1(a) < l1(&actions[best]) {
            best = i;
        }
    }
    best
}

/// On-policy SARSA with epsilon-greedy exploration. Returns the table and the
/// total reward of every training episode.
pub fn sarsa_train<E: Episodic + ?Sized>(
    env: &mut E,
    schema: &Schema,
    actions: Vec<ActionVector>,
    cfg: &SarsaConfig,
    seed: u64,
) -> Result<(SarsaPolicy, Vec<f64>)> {
    sarsa_train_with_prior(env, schema, actions, cfg, seed, None)
}

/// SARSA whose new table rows start with `prior_bonus` on the action the
/// prior prefers, so learning refines an existing controller.
pub fn sarsa_train_with_prior<E: Episodic + ?Sized>(
    env: &mut E,
    schema: &Schema,
    actions: Vec<ActionVector>,
    cfg: &SarsaConfig,
    seed: u64,
    prior: Option<&PriorFn<'_>>,
) -> Result<(SarsaPolicy, Vec<f64>)> {
    cfg.validate()?;
    let prior = prior.map(|f| (f, schema));
    let prior = prior.as_ref();
    let mut policy = SarsaPolicy::new(schema, actions, *cfg, seed)?;
    let mut rng = rng::stream(seed);
    let mut returns = Vec::with_capacity(cfg.episodes as usize);
    for ep in 0..cfg.episodes {
        let eps = cfg.epsilon_at(ep);
        let mut q = schema.quantize(&env.reset(ep)?)?;
        let mut a = choose(&mut policy, &q, eps, &mut rng, prior);
        let mut total = 0.0;
        loop {
            let (next, r, done) = env.step(&policy.actions[a].clone())?;
            total += r;
            if done {
                let cell = &mut policy.row(&q, prior)[a];
                *cell += cfg.alpha * (r - *cell);
                check(*cell, &q)?;
                break;
            }
            let q2 = schema.quantize(&next)?;
            let a2 = choose(&mut policy, &q2, eps, &mut rng, prior);
            let next_val = policy.row(&q2, prior)[a2];
            let cell = &mut policy.row(&q, prior)[a];
            *cell += cfg.alpha * (r + cfg.gamma * next_val - *cell);
            check(*cell, &q)?;
            q = q2;
            a = a2;
        }
        returns.push(total);
    }
    Ok((policy, returns))
}

fn check(v: f64, q: &QuantizedState) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Invariant(format!("q-value diverged at state {q}")))
    }
}
