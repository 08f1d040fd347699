//! The 1-D testbed: a point robot driving along a track toward a goal. The
//! deploy variant adds one difficult region per mission where motion is
//! attenuated and a binary terrain sensor reads 1.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manager::{
    run_managed_mission, ConfigCommand, KernelManager, Monitor, Observation, PhiManifest, Policy,
    SimSession,
};
use crate::rng;
use crate::sarsa::Episodic;
use crate::state::{ActionVector, ChannelSchema, Schema, StateVector};
use crate::transition::TransitionRecord;

pub const POSITION: &str = "position";
pub const TERRAIN: &str = "terrain_sensor";
pub const VELOCITY: &str = "velocity";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OneDParams {
    pub dt: f64,
    pub v_max: f64,
    pub gain: f64,
    pub goal: f64,
    pub epsilon_goal: f64,
    pub deadline_steps: u64,
    pub attenuation: f64,
    pub start_lo: f64,
    pub start_hi: f64,
    pub region_width_lo: f64,
    pub region_width_hi: f64,
    /// Distance weight of the terrain channel in the default schema.
    pub terrain_weight: f64,
}

impl Default for OneDParams {
    fn default() -> Self {
        OneDParams {
            dt: 0.1,
            v_max: 10.0,
            gain: 5.0,
            goal: 20.0,
            epsilon_goal: 0.1,
            deadline_steps: 30,
            attenuation: 0.25,
            start_lo: 0.0,
            start_hi: 10.0,
            region_width_lo: 2.0,
            region_width_hi: 5.0,
            terrain_weight: 1.0,
        }
    }
}

impl OneDParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Input(format!("{name} must be > 0")))
            }
        };
        pos(self.dt, "dt")?;
        pos(self.v_max, "v_max")?;
        pos(self.gain, "gain")?;
        pos(self.epsilon_goal, "epsilon_goal")?;
        if !(self.attenuation > 0.0 && self.attenuation <= 1.0) {
            return Err(Error::Input("attenuation must lie in (0, 1]".into()));
        }
        if self.deadline_steps == 0 {
            return Err(Error::Input("deadline_steps must be >= 1".into()));
        }
        if !(self.start_lo <= self.start_hi && self.start_hi <= self.goal) {
            return Err(Error::Input("need start_lo <= start_hi <= goal".into()));
        }
        if !(0.0 < self.region_width_lo && self.region_width_lo <= self.region_width_hi) {
            return Err(Error::Input(
                "need 0 < region_width_lo <= region_width_hi".into(),
            ));
        }
        Ok(())
    }

    /// Position bins as wide as one full-speed step on difficult terrain and
    /// centered on multiples of that width, so saturated motion inside and
    /// outside a region moves a whole number of bins.
    pub fn default_schema(&self) -> Schema {
        let bw = self.v_max * self.dt * self.attenuation;
        let lo = ((self.start_lo - 5.0) / bw).floor() * bw - bw / 2.0;
        let hi = ((self.goal + 5.0) / bw).ceil() * bw + bw / 2.0;
        let dv = 2.0 * self.v_max / 10.0;
        Schema::new(
            vec![
                ChannelSchema::new(POSITION, lo, hi, bw, 1.0),
                ChannelSchema::new(TERRAIN, -0.5, 1.5, 1.0, self.terrain_weight),
            ],
            vec![ChannelSchema::new(
                VELOCITY,
                -self.v_max - dv / 2.0,
                self.v_max + dv / 2.0,
                dv,
                1.0,
            )],
            0.5,
        )
        .expect("default schema is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimKind {
    Design,
    Deploy,
}

impl std::str::FromStr for SimKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "design" => Ok(SimKind::Design),
            "deploy" => Ok(SimKind::Deploy),
            _ => Err(Error::Usage(format!(
                "unknown simulator kind '{s}' (design|deploy)"
            ))),
        }
    }
}

/// Start position and (deploy only) difficult region of one mission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissionSpec {
    pub start: f64,
    pub region: Option<(f64, f64)>,
}

impl MissionSpec {
    /// Draws mission `index` of a suite. Design and deploy suites with the
    /// same seed share start positions.
    pub fn draw(kind: SimKind, p: &OneDParams, suite_seed: u64, index: u64) -> Self {
        let mut r = rng::stream(rng::nth(suite_seed, index));
        let start = uniform(&mut r, p.start_lo, p.start_hi);
        let width = uniform(&mut r, p.region_width_lo, p.region_width_hi);
        let lo = uniform(&mut r, start, (p.goal - width).max(start));
        let region = match kind {
            SimKind::Design => None,
            SimKind::Deploy => Some((lo, lo + width)),
        };
        MissionSpec { start, region }
    }
}

fn uniform<R: Rng>(r: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = r.gen();
    lo + (hi - lo) * u
}

#[derive(Debug, Clone)]
pub struct OneDWorld {
    params: OneDParams,
    position: f64,
    region: Option<(f64, f64)>,
    terrain_override: Option<f64>,
    step_count: u64,
    manifest: PhiManifest,
}

pub fn phi_manifest() -> PhiManifest {
    PhiManifest {
        writable: vec![POSITION.into(), TERRAIN.into()],
    }
}

impl OneDWorld {
    pub fn new(params: OneDParams, spec: MissionSpec) -> Self {
        OneDWorld {
            params,
            position: spec.start,
            region: spec.region,
            terrain_override: None,
            step_count: 0,
            manifest: phi_manifest(),
        }
    }

    pub fn position(&self) -> f64 {
        self.position
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    fn inside(&self, x: f64) -> bool {
        self.region.is_some_and(|(lo, hi)| lo <= x && x <= hi)
    }

    pub fn terrain_sensor(&self) -> f64 {
        match self.terrain_override {
            Some(v) => v,
            None if self.inside(self.position) => 1.0,
            None => 0.0,
        }
    }

    pub fn state(&self) -> StateVector {
        StateVector(vec![self.position, self.terrain_sensor()])
    }

    /// Advances the dynamics one step and scores the result.
    pub fn sim_step(&mut self, velocity: f64) -> (StateVector, f64, bool) {
        let was_inside = self.inside(self.position);
        let v = if was_inside {
            velocity * self.params.attenuation
        } else {
            velocity
        };
        let v = v.clamp(-self.params.v_max, self.params.v_max);
        self.position += v * self.params.dt;
        self.step_count += 1;
        if self.inside(self.position) != was_inside {
            self.terrain_override = None;
        }
        let s = self.state();
        let (r, done) = RewardMonitor::new(&self.params).evaluate(&s, self.step_count);
        (s, r, done)
    }
}

impl SimSession for OneDWorld {
    fn manifest(&self) -> &PhiManifest {
        &self.manifest
    }

    fn initial(&mut self) -> Result<Observation> {
        Ok(Observation {
            state: self.state(),
            reward: 0.0,
            done: false,
        })
    }

    fn act(&mut self, action: &ActionVector) -> Result<Observation> {
        let v = *action.values().first().ok_or(Error::Dimension {
            expected: 1,
            got: 0,
        })?;
        if !v.is_finite() {
            return Err(Error::Input("non-finite velocity".into()));
        }
        let (state, reward, done) = self.sim_step(v);
        Ok(Observation {
            state,
            reward,
            done,
        })
    }

    fn configure(&mut self, cmd: &ConfigCommand) -> Result<()> {
        if !cmd.value.is_finite() {
            return Err(Error::Input(format!(
                "non-finite write to '{}'",
                cmd.channel
            )));
        }
        match cmd.channel.as_str() {
            POSITION => self.position = cmd.value,
            TERRAIN => self.terrain_override = Some(if cmd.value >= 0.5 { 1.0 } else { 0.0 }),
            other => {
                warn!("write to '{other}' rejected: not in the manifest");
                return Err(Error::Input(format!("channel '{other}' is not writable")));
            }
        }
        Ok(())
    }
}

/// +10 on arrival within tolerance by the deadline, -10 once the deadline has
/// passed, 0 otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardMonitor {
    pub goal: f64,
    pub epsilon_goal: f64,
    pub deadline_steps: u64,
}

impl RewardMonitor {
    pub fn new(p: &OneDParams) -> Self {
        RewardMonitor {
            goal: p.goal,
            epsilon_goal: p.epsilon_goal,
            deadline_steps: p.deadline_steps,
        }
    }
}

impl Monitor for RewardMonitor {
    fn evaluate(&mut self, state: &StateVector, step: u64) -> (f64, bool) {
        if (state.0[0] - self.goal).abs() <= self.epsilon_goal && step <= self.deadline_steps {
            (10.0, true)
        } else if step > self.deadline_steps {
            (-10.0, true)
        } else {
            (0.0, false)
        }
    }
}

/// Proportional controller `vel = gain·(goal - position)`, saturated.
#[derive(Debug, Clone, Copy)]
pub struct Baseline {
    pub goal: f64,
    pub gain: f64,
    pub v_max: f64,
}

impl Baseline {
    pub fn new(p: &OneDParams) -> Self {
        Baseline {
            goal: p.goal,
            gain: p.gain,
            v_max: p.v_max,
        }
    }

    pub fn velocity(&self, position: f64) -> f64 {
        (self.gain * (self.goal - position)).clamp(-self.v_max, self.v_max)
    }
}

impl Policy for Baseline {
    fn act(&mut self, s: &StateVector) -> ActionVector {
        ActionVector(vec![self.velocity(s.0[0])])
    }
}

pub fn baseline_policy(s: &StateVector, p: &OneDParams) -> f64 {
    Baseline::new(p).velocity(s.0[0])
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuiteResult {
    pub records: Vec<TransitionRecord>,
    pub rewards: Vec<f64>,
    pub aborted: usize,
}

/// Runs `n` missions. Mission `i` draws its start (and region) from
/// `rng::nth(seed, i)`, so suites with one seed are comparable across kinds.
pub fn run_mission_suite(
    kind: SimKind,
    n: u64,
    params: &OneDParams,
    seed: u64,
    policy: &mut dyn Policy,
    mut manager: Option<&mut KernelManager<'_>>,
) -> Result<SuiteResult> {
    if n == 0 {
        return Err(Error::Usage("n_missions must be >= 1".into()));
    }
    params.validate()?;
    let mut out = SuiteResult::default();
    for i in 0..n {
        let mut world = OneDWorld::new(*params, MissionSpec::draw(kind, params, seed, i));
        let monitor = RewardMonitor::new(params);
        match run_managed_mission(&mut world, policy, manager.as_deref_mut(), monitor, i) {
            Ok(m) => {
                out.rewards.push(m.total_reward);
                out.records.extend(m.records);
            }
            Err(Error::Session(msg)) => {
                warn!("mission {i} aborted: {msg}");
                out.aborted += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Episodic view of the testbed for training, optionally under a manager.
pub struct OneDEnv<'m, 'k> {
    kind: SimKind,
    params: OneDParams,
    seed: u64,
    manager: Option<&'m mut KernelManager<'k>>,
    world: OneDWorld,
    monitor: RewardMonitor,
    state: StateVector,
    steps: u64,
}

impl<'m, 'k> OneDEnv<'m, 'k> {
    pub fn new(
        kind: SimKind,
        params: OneDParams,
        seed: u64,
        manager: Option<&'m mut KernelManager<'k>>,
    ) -> Self {
        let world = OneDWorld::new(params, MissionSpec::draw(kind, &params, seed, 0));
        let state = world.state();
        OneDEnv {
            kind,
            params,
            seed,
            manager,
            world,
            monitor: RewardMonitor::new(&params),
            state,
            steps: 0,
        }
    }
}

impl Episodic for OneDEnv<'_, '_> {
    fn reset(&mut self, episode: u64) -> Result<StateVector> {
        self.world = OneDWorld::new(
            self.params,
            MissionSpec::draw(self.kind, &self.params, self.seed, episode),
        );
        self.state = self.world.state();
        self.steps = 0;
        if let Some(m) = self.manager.as_deref_mut() {
            m.begin_mission();
        }
        Ok(self.state.clone())
    }

    fn step(&mut self, a: &ActionVector) -> Result<(StateVector, f64, bool)> {
        let next = match self.manager.as_deref_mut() {
            Some(m) => m.step(&mut self.world, &self.state, a)?.state,
            None => self.world.act(a)?.state,
        };
        self.steps += 1;
        let (r, done) = self.monitor.evaluate(&next, self.steps);
        self.state = next.clone();
        Ok((next, r, done))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> OneDParams {
        OneDParams::default()
    }

    #[test]
    fn start_at_goal_scores_on_first_step() {
        let mut w = OneDWorld::new(
            p(),
            MissionSpec {
                start: 20.0,
                region: None,
            },
        );
        assert_eq!(w.sim_step(0.0), (StateVector(vec![20.0, 0.0]), 10.0, true));
    }

    #[test]
    fn never_arriving_scores_minus_ten_after_deadline() {
        let mut w = OneDWorld::new(
            p(),
            MissionSpec {
                start: 0.0,
                region: None,
            },
        );
        for _ in 0..p().deadline_steps {
            let (s, r, done) = w.sim_step(0.0);
            assert_eq!((s.0[0], r, done), (0.0, 0.0, false));
        }
        let (_, r, done) = w.sim_step(0.0);
        assert_eq!((r, done), (-10.0, true));
        assert_eq!(w.step_count(), p().deadline_steps + 1);
    }

    #[test]
    fn baseline_examples() {
        let b = Baseline::new(&p());
        assert_eq!(b.velocity(20.0), 0.0);
        assert_eq!(b.velocity(19.0), 5.0);
        assert_eq!(b.velocity(-80.0), 10.0);
    }

    #[test]
    fn region_attenuates_and_sets_sensor() {
        let mut w = OneDWorld::new(
            p(),
            MissionSpec {
                start: 5.0,
                region: Some((4.0, 8.0)),
            },
        );
        assert_eq!(w.terrain_sensor(), 1.0);
        let (s, _, _) = w.sim_step(10.0);
        assert!((s.0[0] - 5.25).abs() < 1e-12);
        assert_eq!(s.0[1], 1.0);
    }

    #[test]
    fn phi_contract() {
        assert_eq!(phi_manifest().writable, vec!["position", "terrain_sensor"]);
        let mut w = OneDWorld::new(
            p(),
            MissionSpec {
                start: 0.0,
                region: None,
            },
        );
        let cmd = |c: &str, v: f64| ConfigCommand {
            channel: c.into(),
            value: v,
        };
        w.configure(&cmd(POSITION, 3.0)).unwrap();
        assert_eq!(w.state().0[0], 3.0);
        w.configure(&cmd(TERRAIN, 1.0)).unwrap();
        w.sim_step(10.0);
        assert_eq!(w.terrain_sensor(), 1.0, "override is sticky on open track");
        assert!(w.configure(&cmd(VELOCITY, 1.0)).is_err());
    }

    #[test]
    fn override_clears_on_region_entry() {
        let mut w = OneDWorld::new(
            p(),
            MissionSpec {
                start: 0.0,
                region: Some((0.5, 3.0)),
            },
        );
        w.configure(&ConfigCommand {
            channel: TERRAIN.into(),
            value: 0.0,
        })
        .unwrap();
        assert_eq!(w.terrain_sensor(), 0.0);
        w.sim_step(10.0);
        assert_eq!(w.terrain_sensor(), 1.0);
    }

    #[test]
    fn design_and_deploy_share_starts() {
        for i in 0..20 {
            let a = MissionSpec::draw(SimKind::Design, &p(), 5, i);
            let b = MissionSpec::draw(SimKind::Deploy, &p(), 5, i);
            assert_eq!(a.start, b.start);
            assert!(a.region.is_none());
            let (lo, hi) = b.region.unwrap();
            assert!(lo >= b.start && hi <= p().goal + 1e-12);
            assert!((2.0..=5.0).contains(&(hi - lo)));
        }
    }

    #[test]
    fn schema_grid_matches_motion() {
        let s = p().default_schema();
        let c = &s.state[0];
        assert!((c.bin_width - 0.25).abs() < 1e-15);
        assert!((c.center(c.bin(15.0)) - 15.0).abs() < 1e-9);
        assert!((c.center(c.bin(20.0)) - 20.0).abs() < 1e-9);
        let a = &s.action[0];
        for v in crate::sarsa::velocity_set(10.0, 11) {
            assert!((a.center(a.bin(v.0[0])) - v.0[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn design_suite_always_arrives() {
        let mut b = Baseline::new(&p());
        let res = run_mission_suite(SimKind::Design, 200, &p(), 1, &mut b, None).unwrap();
        assert!(res.rewards.iter().all(|&r| r == 10.0));
    }
}
