//! Kernel Manager: wraps a black-box simulator session and, whenever a kernel
//! is active at the current state, coerces the simulator through its writable
//! configuration channels so that the step's result is the kernel's
//! prediction instead of the simulator's own dynamics.
//!
//! Per step the manager sees only what the simulator emits. The policy picks
//! `a` from the current state `s`; the action goes to the simulator; if a
//! kernel was active at `s`, the manager then writes `f_k(s, a)` into every
//! writable channel whose emitted value differs. Those writes land before the
//! simulator's next dynamics step (on the wire they precede the next action
//! line), so the following observation continues from the coerced state.

use std::collections::BTreeMap;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelSet};
use crate::rng::{self, StageRng};
use crate::state::{ActionVector, Schema, StateVector};
use crate::transition::TransitionRecord;

/// Request to overwrite one observable simulator channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigCommand {
    pub channel: String,
    pub value: f64,
}

/// Channels the simulator lets the manager overwrite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhiManifest {
    pub writable: Vec<String>,
}

impl PhiManifest {
    pub fn allows(&self, channel: &str) -> bool {
        self.writable.iter().any(|w| w == channel)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub state: StateVector,
    pub reward: f64,
    pub done: bool,
}

/// Step-locked contract with a black-box simulator.
pub trait SimSession {
    fn manifest(&self) -> &PhiManifest;

    /// The observation the simulator emits at mission start.
    fn initial(&mut self) -> Result<Observation>;

    /// Applies one action and advances the dynamics by one step.
    fn act(&mut self, action: &ActionVector) -> Result<Observation>;

    /// Overwrites a writable channel; takes effect before the next `act`.
    fn configure(&mut self, cmd: &ConfigCommand) -> Result<()>;
}

impl<T: SimSession + ?Sized> SimSession for &mut T {
    fn manifest(&self) -> &PhiManifest {
        (**self).manifest()
    }
    fn initial(&mut self) -> Result<Observation> {
        (**self).initial()
    }
    fn act(&mut self, action: &ActionVector) -> Result<Observation> {
        (**self).act(action)
    }
    fn configure(&mut self, cmd: &ConfigCommand) -> Result<()> {
        (**self).configure(cmd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApplyMode {
    /// An active kernel is always applied.
    #[default]
    Always,
    /// Each time a kernel becomes active it is switched on with probability
    /// `p_p`, and stays on (or off) until it goes inactive again or the
    /// mission ends.
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManagerConfig {
    pub theta_act: f64,
    pub apply_mode: ApplyMode,
    pub rng_seed: u64,
}

impl ManagerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_act > 0.0 && self.theta_act <= 1.0) {
            return Err(Error::Input(format!(
                "theta_act {} is outside (0, 1]",
                self.theta_act
            )));
        }
        Ok(())
    }
}

impl Default for ManagerConfig {
    fn default() -> Self {
        ManagerConfig {
            theta_act: 0.1,
            apply_mode: ApplyMode::Always,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManagerStats {
    pub steps: u64,
    pub fired: u64,
    pub commands: u64,
    pub clamp_events: u64,
    pub rejected_writes: u64,
    pub nonfinite_skipped: u64,
    pub stochastic_skipped: u64,
}

impl ManagerStats {
    pub fn merge(&mut self, o: &ManagerStats) {
        self.steps += o.steps;
        self.fired += o.fired;
        self.commands += o.commands;
        self.clamp_events += o.clamp_events;
        self.rejected_writes += o.rejected_writes;
        self.nonfinite_skipped += o.nonfinite_skipped;
        self.stochastic_skipped += o.stochastic_skipped;
    }
}

/// Lowest-id kernel whose activation at `s` reaches `theta_act`.
pub fn select_kernel<'k>(
    ks: &'k KernelSet,
    s: &StateVector,
    schema: &Schema,
    theta_act: f64,
) -> Option<&'k Kernel> {
    ks.kernels.iter().find(|k| {
        let d = schema.distance_unchecked(k.mean.values(), s.values());
        crate::kernel::gaussian(d, k.sigma) >= theta_act
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub kernel_id: u32,
    /// Kernel output clamped to the schema bounds.
    pub state: StateVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManagedStep {
    /// State the control software observes after this step.
    pub state: StateVector,
    /// What the simulator itself emitted before any coercion.
    pub sim: Observation,
    pub kernel: Option<u32>,
    pub commands: Vec<ConfigCommand>,
}

pub struct KernelManager<'a> {
    kernels: &'a KernelSet,
    schema: &'a Schema,
    cfg: ManagerConfig,
    rng: StageRng,
    stats: ManagerStats,
    /// Gate decisions of currently active kernels, stochastic mode only.
    gates: BTreeMap<u32, bool>,
}

impl<'a> KernelManager<'a> {
    pub fn new(kernels: &'a KernelSet, schema: &'a Schema, cfg: ManagerConfig) -> Result<Self> {
        cfg.validate()?;
        kernels.check_schema(schema)?;
        Ok(KernelManager {
            kernels,
            schema,
            cfg,
            rng: rng::stream(cfg.rng_seed),
            stats: ManagerStats::default(),
            gates: BTreeMap::new(),
        })
    }

    pub fn stats(&self) -> &ManagerStats {
        &self.stats
    }

    pub fn kernels(&self) -> &KernelSet {
        self.kernels
    }

    pub fn select(&self, s: &StateVector) -> Option<&'a Kernel> {
        select_kernel(self.kernels, s, self.schema, self.cfg.theta_act)
    }

    /// Forgets held gate decisions. Called at the start of every mission.
    pub fn begin_mission(&mut self) {
        self.gates.clear();
    }

    /// Drops decisions of kernels that are no longer active at `s`.
    fn prune_gates(&mut self, s: &StateVector) {
        let (schema, theta, kernels) = (self.schema, self.cfg.theta_act, self.kernels);
        self.gates.retain(|id, _| {
            kernels.kernels.iter().any(|m| {
                m.id == *id
                    && crate::kernel::gaussian(
                        schema.distance_unchecked(m.mean.values(), s.values()),
                        m.sigma,
                    ) >= theta
            })
        });
    }

    /// Kernel prediction for `(s, a)`, or `None` when no kernel applies.
    pub fn predict(&mut self, s: &StateVector, a: &ActionVector) -> Option<Prediction> {
        let stochastic = self.cfg.apply_mode == ApplyMode::Stochastic;
        if stochastic {
            self.prune_gates(s);
        }
        let k = self.select(s)?;
        let rng = &mut self.rng;
        if stochastic
            && !*self
                .gates
                .entry(k.id)
                .or_insert_with(|| rng.gen::<f64>() < k.p_phy())
        {
            self.stats.stochastic_skipped += 1;
            return None;
        }
        let raw = k.predict(s, a);
        if !raw.is_finite() {
            warn!("kernel {} produced a non-finite prediction; skipped", k.id);
            self.stats.nonfinite_skipped += 1;
            return None;
        }
        let (state, moved) = self.schema.clamp_state(&raw);
        self.stats.clamp_events += moved as u64;
        Some(Prediction {
            kernel_id: k.id,
            state,
        })
    }

    /// One managed simulation step. Without an active kernel the simulator's
    /// observation is returned untouched and no commands are issued.
    pub fn step<S: SimSession + ?Sized>(
        &mut self,
        session: &mut S,
        s: &StateVector,
        a: &ActionVector,
    ) -> Result<ManagedStep> {
        self.stats.steps += 1;
        let prediction = self.predict(s, a);
        let obs = session.act(a)?;
        let Some(pred) = prediction else {
            return Ok(ManagedStep {
                state: obs.state.clone(),
                sim: obs,
                kernel: None,
                commands: Vec::new(),
            });
        };
        self.stats.fired += 1;
        let mut state = obs.state.clone();
        let mut commands = Vec::new();
        for (i, ch) in self.schema.state.iter().enumerate() {
            let want = pred.state.0[i];
            if want == obs.state.0[i] {
                continue;
            }
            if !session.manifest().allows(&ch.name) {
                warn!(
                    "channel '{}' is not writable; prediction skipped for it",
                    ch.name
                );
                self.stats.rejected_writes += 1;
                continue;
            }
            let cmd = ConfigCommand {
                channel: ch.name.clone(),
                value: want,
            };
            session.configure(&cmd)?;
            state.0[i] = want;
            commands.push(cmd);
        }
        self.stats.commands += commands.len() as u64;
        Ok(ManagedStep {
            state,
            sim: obs,
            kernel: Some(pred.kernel_id),
            commands,
        })
    }
}

/// Instrumented performance monitor: scores the state the control software
/// observes and decides when a mission ends.
pub trait Monitor {
    /// `(reward, done)` after the `step`-th step (1-based) lands in `state`.
    fn evaluate(&mut self, state: &StateVector, step: u64) -> (f64, bool);
}

pub trait Policy {
    fn act(&mut self, s: &StateVector) -> ActionVector;
}

impl<F: FnMut(&StateVector) -> ActionVector> Policy for F {
    fn act(&mut self, s: &StateVector) -> ActionVector {
        self(s)
    }
}

/// A mission in progress: session plus optional manager plus monitor.
pub struct Mission<'s, 'm, 'k, S: SimSession + ?Sized, M: Monitor> {
    session: &'s mut S,
    manager: Option<&'m mut KernelManager<'k>>,
    monitor: M,
    state: StateVector,
    step: u64,
    done: bool,
}

pub const MISSION_STEP_CAP: u64 = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: StateVector,
    pub reward: f64,
    pub done: bool,
}

impl<'s, 'm, 'k, S: SimSession + ?Sized, M: Monitor> Mission<'s, 'm, 'k, S, M> {
    pub fn start(
        session: &'s mut S,
        mut manager: Option<&'m mut KernelManager<'k>>,
        monitor: M,
    ) -> Result<Self> {
        let obs = session.initial()?;
        if let Some(m) = manager.as_deref_mut() {
            m.begin_mission();
        }
        Ok(Mission {
            session,
            manager,
            monitor,
            state: obs.state,
            step: 0,
            done: false,
        })
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn advance(&mut self, a: &ActionVector) -> Result<StepResult> {
        if self.done {
            return Err(Error::Session("mission already finished".into()));
        }
        if self.step >= MISSION_STEP_CAP {
            return Err(Error::Session(
                "monitor never terminated the mission".into(),
            ));
        }
        let next = match self.manager.as_deref_mut() {
            Some(m) => m.step(self.session, &self.state, a)?.state,
            None => self.session.act(a)?.state,
        };
        self.step += 1;
        let (reward, done) = self.monitor.evaluate(&next, self.step);
        self.state = next.clone();
        self.done = done;
        Ok(StepResult {
            state: next,
            reward,
            done,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionOutcome {
    pub total_reward: f64,
    pub records: Vec<TransitionRecord>,
}

/// Runs observe → policy → (manager) step → monitor until the monitor ends the
/// mission, logging every transition under `run`.
pub fn run_managed_mission<S, P, M>(
    session: &mut S,
    policy: &mut P,
    manager: Option<&mut KernelManager<'_>>,
    monitor: M,
    run: u64,
) -> Result<MissionOutcome>
where
    S: SimSession + ?Sized,
    P: Policy + ?Sized,
    M: Monitor,
{
    let mut mission = Mission::start(session, manager, monitor)?;
    let mut records = Vec::new();
    let mut total = 0.0;
    while !mission.is_done() {
        let s = mission.state().clone();
        let a = policy.act(&s);
        let res = mission.advance(&a)?;
        total += res.reward;
        records.push(TransitionRecord {
            run,
            step: records.len() as u64,
            s,
            a,
            r: res.reward,
            s_next: res.state,
        });
    }
    Ok(MissionOutcome {
        total_reward: total,
        records,
    })
}
