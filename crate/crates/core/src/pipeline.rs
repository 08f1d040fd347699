//! End-to-end experiment stages on the 1-D testbed: design and deploy runs,
//! kernel generation, managed rerun, redesign, redeploy and a recounting
//! report. Every stage reads and writes plain files in one run directory.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::atr::AtrSeries;
use crate::error::{Error, Result};
use crate::kernel::{forge, ForgeConfig, ForgeStats, KernelSet};
use crate::manager::{ApplyMode, KernelManager, ManagerConfig, ManagerStats, Policy};
use crate::oned::{run_mission_suite, Baseline, OneDEnv, OneDParams, SimKind, SuiteResult};
use crate::rng;
use crate::rollout::{paired_sweep, SweepConfig};
use crate::sarsa::{
    nearest_action, sarsa_train_with_prior, velocity_set, SarsaConfig, SarsaPolicy,
};
use crate::state::{ActionVector, QuantizedState, Schema, StateVector};
use crate::transition::{
    common_states, common_states_near, estimate, ingest_log, write_log, Corpus,
    EmpiricalTransition, History, TransitionRecord,
};

pub const OUT_DIR_ENV: &str = "SIMGAP_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub n_missions: u64,
    /// Schema file; when absent the testbed's default schema is used.
    pub schema: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub eps_c: f64,
    pub eps_p: f64,
    pub sigma: f64,
    pub theta_act: f64,
    pub window: usize,
    pub n_rollouts: usize,
    pub max_len: usize,
    pub per_action_maps: bool,
    pub apply_mode: ApplyMode,
    pub testbed: OneDParams,
    pub sarsa: SarsaConfig,
    /// Velocities in the learner's action set.
    pub n_actions: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            n_missions: 1000,
            schema: None,
            out_dir: PathBuf::from("simgap-out"),
            eps_c: 0.5,
            eps_p: 0.1,
            sigma: 1.0,
            theta_act: 0.1,
            window: 4,
            n_rollouts: 100,
            max_len: 20,
            per_action_maps: false,
            apply_mode: ApplyMode::Stochastic,
            testbed: OneDParams::default(),
            sarsa: SarsaConfig::default(),
            n_actions: 11,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(p), Some(base)) = (&cfg.schema, path.parent()) {
            if p.is_relative() {
                cfg.schema = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Input(format!("{name} must be > 0")))
            }
        };
        positive(self.eps_c, "eps_c")?;
        positive(self.eps_p, "eps_p")?;
        positive(self.sigma, "sigma")?;
        if !(self.theta_act > 0.0 && self.theta_act <= 1.0) {
            return Err(Error::Input("theta_act must lie in (0, 1]".into()));
        }
        if self.window < 2 {
            return Err(Error::Input("window must be >= 2".into()));
        }
        if self.n_missions == 0 {
            return Err(Error::Input("n_missions must be >= 1".into()));
        }
        if self.n_rollouts == 0 || self.max_len == 0 {
            return Err(Error::Input("n_rollouts and max_len must be >= 1".into()));
        }
        if self.n_actions < 2 {
            return Err(Error::Input("n_actions must be >= 2".into()));
        }
        self.testbed.validate()?;
        self.sarsa.validate()
    }

    pub fn schema(&self) -> Result<Schema> {
        match &self.schema {
            Some(p) => Schema::load(p),
            None => Ok(self.testbed.default_schema()),
        }
    }

    pub fn stage_seed(&self, label: &str) -> u64 {
        rng::derive(self.seed, label)
    }

    /// Missions of every evaluation suite share this seed, so curves differ
    /// only in simulator, manager and policy.
    pub fn mission_seed(&self) -> u64 {
        self.stage_seed("missions")
    }

    pub fn forge_config(&self) -> ForgeConfig {
        ForgeConfig {
            eps_c: self.eps_c,
            sigma: self.sigma,
            theta_act: self.theta_act,
            window: self.window,
            per_action_maps: self.per_action_maps,
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            n_rollouts: self.n_rollouts,
            max_len: self.max_len,
            eps_c: self.eps_c,
            eps_p: self.eps_p,
        }
    }

    pub fn manager_config(&self) -> ManagerConfig {
        ManagerConfig {
            theta_act: self.theta_act,
            apply_mode: self.apply_mode,
            rng_seed: self.stage_seed("manager"),
        }
    }
}

/// File names inside a run directory.
pub mod files {
    pub const SCHEMA: &str = "schema.toml";
    pub const KERNELS: &str = "kernels.json";
    pub const POLICY: &str = "policy.json";
    pub const GENKER_SUMMARY: &str = "genker.summary.json";
    pub const REDESIGN_SUMMARY: &str = "redesign.summary.json";
    pub const TRAIN_ATR: &str = "redesign_train_atr.csv";
    pub const REPORT_JSON: &str = "report.json";
    pub const REPORT_TXT: &str = "report.txt";

    /// Curves in plotting order.
    pub const CURVES: [&str; 5] = ["design", "deploy", "kernels", "redes_k", "redeploy"];

    pub fn log(curve: &str) -> String {
        format!("{curve}.jsonl")
    }

    pub fn atr(curve: &str) -> String {
        format!("{curve}_atr.csv")
    }

    pub fn summary(curve: &str) -> String {
        format!("{curve}.summary.json")
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

fn prepare_dir(cfg: &PipelineConfig, schema: &Schema) -> Result<PathBuf> {
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    schema.save(&dir.join(files::SCHEMA))?;
    Ok(dir)
}

/// Per-curve statistics stored next to its log and ATR file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub curve: String,
    pub simulator: SimKind,
    pub policy: String,
    pub managed: bool,
    pub missions: u64,
    pub completed: u64,
    pub aborted: u64,
    pub transitions: u64,
    pub final_atr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manager: Option<ManagerStats>,
}

fn write_curve(
    dir: &Path,
    curve: &str,
    kind: SimKind,
    policy: &str,
    res: &SuiteResult,
    n: u64,
    manager: Option<ManagerStats>,
) -> Result<CurveSummary> {
    write_log(&dir.join(files::log(curve)), &res.records)?;
    let atr = AtrSeries::from_rewards(&res.rewards);
    atr.save(&dir.join(files::atr(curve)))?;
    let summary = CurveSummary {
        curve: curve.to_string(),
        simulator: kind,
        policy: policy.to_string(),
        managed: manager.is_some(),
        missions: n,
        completed: res.rewards.len() as u64,
        aborted: res.aborted as u64,
        transitions: res.records.len() as u64,
        final_atr: atr.last().unwrap_or(f64::NAN),
        manager,
    };
    write_json(&dir.join(files::summary(curve)), &summary)?;
    info!(
        "{curve}: {} missions, {} transitions, final ATR {:.4}",
        summary.completed, summary.transitions, summary.final_atr
    );
    Ok(summary)
}

/// Baseline controller on the design or deploy simulator.
pub fn cmd_simulate(cfg: &PipelineConfig, kind: SimKind, n: u64) -> Result<CurveSummary> {
    if n == 0 {
        return Err(Error::Usage("n must be >= 1".into()));
    }
    let schema = cfg.schema()?;
    let dir = prepare_dir(cfg, &schema)?;
    let mut policy = Baseline::new(&cfg.testbed);
    let res = run_mission_suite(kind, n, &cfg.testbed, cfg.mission_seed(), &mut policy, None)?;
    let curve = match kind {
        SimKind::Design => "design",
        SimKind::Deploy => "deploy",
    };
    write_curve(&dir, curve, kind, "baseline", &res, n, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub log: String,
    pub records: u64,
    pub runs: u64,
    pub dropped_lines: u64,
    pub continuity_warnings: u64,
    pub source_states: u64,
    pub edges: u64,
    /// Out-degree → number of source states with that out-degree.
    pub branching: BTreeMap<usize, usize>,
}

impl CorpusStats {
    fn new(log: &Path, h: &History, et: &EmpiricalTransition) -> Self {
        let runs = h
            .records
            .iter()
            .map(|r| r.run)
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        CorpusStats {
            log: file_name(log),
            records: h.records.len() as u64,
            runs: runs as u64,
            dropped_lines: h.stats.dropped_lines as u64,
            continuity_warnings: h.stats.continuity_warnings as u64,
            source_states: et.source_count() as u64,
            edges: et.edge_count() as u64,
            branching: et.branching_histogram(),
        }
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenkerSummary {
    pub sim: CorpusStats,
    pub phy: CorpusStats,
    pub common_states: u64,
    pub common_states_within_eps_c: u64,
    pub n_rollouts: u64,
    pub max_len: u64,
    pub divergences: u64,
    pub unique_divergences: u64,
    pub forge: ForgeStats,
    pub kernels: u64,
    pub kernel_means: Vec<Vec<f64>>,
}

/// Estimate both corpora, sweep paired roll-outs and forge kernels.
pub fn cmd_genker(cfg: &PipelineConfig, sim_log: &Path, phy_log: &Path) -> Result<GenkerSummary> {
    let schema = cfg.schema()?;
    let dir = prepare_dir(cfg, &schema)?;
    let h_sim = ingest_log(sim_log, &schema, Corpus::Sim)?;
    let h_phy = ingest_log(phy_log, &schema, Corpus::Phy)?;
    let et_sim = estimate(&h_sim, &schema)?;
    let et_phy = estimate(&h_phy, &schema)?;
    let common = common_states(&et_sim, &et_phy)?.len();
    let sweep = paired_sweep(
        &et_sim,
        &et_phy,
        &schema,
        &cfg.sweep_config(),
        cfg.stage_seed("sweep"),
    )?;
    let unique = sweep.unique(&schema, cfg.eps_c).len();
    let (kernels, forge_stats) = forge(&sweep.divergences, &schema, &cfg.forge_config())?;
    kernels.save(&dir.join(files::KERNELS))?;
    let summary = GenkerSummary {
        sim: CorpusStats::new(sim_log, &h_sim, &et_sim),
        phy: CorpusStats::new(phy_log, &h_phy, &et_phy),
        common_states: common as u64,
        common_states_within_eps_c: common_states_near(&et_sim, &et_phy, &schema) as u64,
        n_rollouts: sweep.n_rollouts as u64,
        max_len: cfg.max_len as u64,
        divergences: sweep.divergences.len() as u64,
        unique_divergences: unique as u64,
        forge: forge_stats,
        kernels: kernels.len() as u64,
        kernel_means: kernels.kernels.iter().map(|k| k.mean.0.clone()).collect(),
    };
    write_json(&dir.join(files::GENKER_SUMMARY), &summary)?;
    info!(
        "genker: {} common states, {} divergences ({} unique), {} kernels",
        summary.common_states, summary.divergences, summary.unique_divergences, summary.kernels
    );
    Ok(summary)
}

fn load_kernels(path: &Path, schema: &Schema) -> Result<KernelSet> {
    let ks = KernelSet::load(path)?;
    ks.check_schema(schema)?;
    Ok(ks)
}

/// Baseline controller on the design simulator wrapped by the manager.
pub fn cmd_rerun(cfg: &PipelineConfig, kernels: &Path, n: u64) -> Result<CurveSummary> {
    if n == 0 {
        return Err(Error::Usage("n must be >= 1".into()));
    }
    let schema = cfg.schema()?;
    let ks = load_kernels(kernels, &schema)?;
    let dir = prepare_dir(cfg, &schema)?;
    let mut manager = KernelManager::new(&ks, &schema, cfg.manager_config())?;
    let mut policy = Baseline::new(&cfg.testbed);
    let res = run_mission_suite(
        SimKind::Design,
        n,
        &cfg.testbed,
        cfg.mission_seed(),
        &mut policy,
        Some(&mut manager),
    )?;
    write_curve(
        &dir,
        "kernels",
        SimKind::Design,
        "baseline",
        &res,
        n,
        Some(*manager.stats()),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedesignSummary {
    pub episodes: u64,
    pub q_states: u64,
    pub train_final_atr: f64,
    pub evaluation: CurveSummary,
}

/// Trains SARSA on the managed design simulator, saves the greedy table and
/// evaluates it there on the shared evaluation missions.
pub fn cmd_redesign(cfg: &PipelineConfig, kernels: &Path) -> Result<RedesignSummary> {
    let schema = cfg.schema()?;
    let ks = load_kernels(kernels, &schema)?;
    let dir = prepare_dir(cfg, &schema)?;
    let actions = velocity_set(cfg.testbed.v_max, cfg.n_actions);

    let mut train_manager = KernelManager::new(&ks, &schema, cfg.manager_config())?;
    let mut env = OneDEnv::new(
        SimKind::Design,
        cfg.testbed,
        cfg.stage_seed("training"),
        Some(&mut train_manager),
    );
    // New table rows favour what the baseline controller would do.
    let baseline = Baseline::new(&cfg.testbed);
    let prior_actions = actions.clone();
    let prior = move |s: &StateVector| {
        nearest_action(
            &prior_actions,
            &ActionVector(vec![baseline.velocity(s.values()[0])]),
        )
    };
    let (policy, returns) = sarsa_train_with_prior(
        &mut env,
        &schema,
        actions,
        &cfg.sarsa,
        cfg.stage_seed("sarsa"),
        Some(&prior),
    )?;
    policy.save(&dir.join(files::POLICY))?;
    let train_atr = AtrSeries::from_rewards(&returns);
    train_atr.save(&dir.join(files::TRAIN_ATR))?;

    let mut manager = KernelManager::new(&ks, &schema, cfg.manager_config())?;
    let mut greedy = policy.bind(&schema)?;
    let res = run_mission_suite(
        SimKind::Design,
        cfg.n_missions,
        &cfg.testbed,
        cfg.mission_seed(),
        &mut greedy,
        Some(&mut manager),
    )?;
    let evaluation = write_curve(
        &dir,
        "redes_k",
        SimKind::Design,
        "sarsa",
        &res,
        cfg.n_missions,
        Some(*manager.stats()),
    )?;
    let summary = RedesignSummary {
        episodes: cfg.sarsa.episodes,
        q_states: policy.q.len() as u64,
        train_final_atr: train_atr.last().unwrap_or(f64::NAN),
        evaluation,
    };
    write_json(&dir.join(files::REDESIGN_SUMMARY), &summary)?;
    Ok(summary)
}

/// Trained policy on the deploy simulator with no manager.
pub fn cmd_redeploy(cfg: &PipelineConfig, policy: &Path, n: u64) -> Result<CurveSummary> {
    if n == 0 {
        return Err(Error::Usage("n must be >= 1".into()));
    }
    let schema = cfg.schema()?;
    let policy = SarsaPolicy::load(policy)?;
    let dir = prepare_dir(cfg, &schema)?;
    let mut greedy = policy.bind(&schema)?;
    redeploy_with(cfg, &dir, &mut greedy, "sarsa", n)
}

fn redeploy_with(
    cfg: &PipelineConfig,
    dir: &Path,
    policy: &mut dyn Policy,
    name: &str,
    n: u64,
) -> Result<CurveSummary> {
    let res = run_mission_suite(
        SimKind::Deploy,
        n,
        &cfg.testbed,
        cfg.mission_seed(),
        policy,
        None,
    )?;
    write_curve(dir, "redeploy", SimKind::Deploy, name, &res, n, None)
}

/// Recount of one curve from its log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveCheck {
    pub curve: String,
    pub transitions: u64,
    pub missions: u64,
    pub final_atr: f64,
    pub max_atr_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingRecount {
    pub log: String,
    pub records: u64,
    pub source_states: u64,
    pub edges: u64,
    pub branching: BTreeMap<usize, usize>,
    pub mode: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub curves: Vec<CurveCheck>,
    pub corpora: Vec<BranchingRecount>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genker: Option<GenkerSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub redesign: Option<RedesignSummary>,
    pub final_atr: BTreeMap<String, f64>,
    pub mismatches: Vec<String>,
    pub gaps: Vec<String>,
}

impl PipelineReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut t = String::new();
        t.push_str("curve        missions  transitions  final_atr\n");
        for c in &self.curves {
            t.push_str(&format!(
                "{:<12} {:>8}  {:>11}  {:>9.4}\n",
                c.curve, c.missions, c.transitions, c.final_atr
            ));
        }
        for c in &self.corpora {
            t.push_str(&format!(
                "\n{}: {} records, {} source states, {} edges, branching mode {}\n",
                c.log,
                c.records,
                c.source_states,
                c.edges,
                c.mode.map_or("-".to_string(), |m| m.to_string())
            ));
            for (k, v) in &c.branching {
                t.push_str(&format!("  out-degree {k}: {v}\n"));
            }
        }
        if let Some(g) = &self.genker {
            t.push_str(&format!(
                "\ncommon states {} ({} within eps_c)\nroll-outs {}, divergences {} ({} unique)\nkernels {} (skipped: {} duplicate, {} insufficient)\n",
                g.common_states,
                g.common_states_within_eps_c,
                g.n_rollouts,
                g.divergences,
                g.unique_divergences,
                g.kernels,
                g.forge.skipped_duplicate,
                g.forge.skipped_insufficient
            ));
        }
        if let Some(r) = &self.redesign {
            t.push_str(&format!(
                "\nredesign: {} episodes, {} table states, training ATR {:.4}\n",
                r.episodes, r.q_states, r.train_final_atr
            ));
        }
        t.push_str(&format!("\nmismatches: {}\n", self.mismatches.len()));
        for m in &self.mismatches {
            t.push_str(&format!("  {m}\n"));
        }
        if !self.gaps.is_empty() {
            t.push_str(&format!("missing: {}\n", self.gaps.join(", ")));
        }
        t
    }
}

/// Recounts everything in `dir` from the raw logs and compares against the
/// stored summaries. Missing artifacts are listed as gaps.
pub fn cmd_report(dir: &Path) -> Result<PipelineReport> {
    let schema_path = dir.join(files::SCHEMA);
    if !schema_path.exists() {
        return Err(Error::Input(format!(
            "{} is not a run directory (no {})",
            dir.display(),
            files::SCHEMA
        )));
    }
    let schema = Schema::load(&schema_path)?;
    let mut report = PipelineReport {
        curves: Vec::new(),
        corpora: Vec::new(),
        genker: None,
        redesign: None,
        final_atr: BTreeMap::new(),
        mismatches: Vec::new(),
        gaps: Vec::new(),
    };
    let mut loaded_logs: BTreeMap<String, Vec<TransitionRecord>> = BTreeMap::new();

    for curve in files::CURVES {
        let log = dir.join(files::log(curve));
        let atr_path = dir.join(files::atr(curve));
        let sum_path = dir.join(files::summary(curve));
        let missing: Vec<_> = [&log, &atr_path, &sum_path]
            .into_iter()
            .filter(|p| !p.exists())
            .map(|p| file_name(p))
            .collect();
        if !missing.is_empty() {
            report.gaps.extend(missing);
            continue;
        }
        let records = read_records(&log)?;
        let rewards = rewards_by_run(&records);
        let recount = AtrSeries::from_rewards(&rewards);
        let stored = AtrSeries::load(&atr_path)?;
        let summary: CurveSummary = read_json(&sum_path)?;
        let dev = recount.max_abs_diff(&stored);
        let mut mismatch = |what: String| report.mismatches.push(format!("{curve}: {what}"));
        match dev {
            None => mismatch(format!(
                "ATR file has {} rows, log has {} missions",
                stored.len(),
                recount.len()
            )),
            Some(d) if d > 1e-12 => mismatch(format!("ATR deviates from log by {d:e}")),
            _ => {}
        }
        if summary.transitions != records.len() as u64 {
            mismatch(format!(
                "summary says {} transitions, log has {}",
                summary.transitions,
                records.len()
            ));
        }
        if summary.completed != rewards.len() as u64 {
            mismatch(format!(
                "summary says {} missions, log has {}",
                summary.completed,
                rewards.len()
            ));
        }
        let final_atr = recount.last().unwrap_or(f64::NAN);
        if final_atr.to_bits() != summary.final_atr.to_bits()
            && !(final_atr.is_nan() && summary.final_atr.is_nan())
        {
            mismatch(format!(
                "summary final ATR {} vs recount {}",
                summary.final_atr, final_atr
            ));
        }
        report.final_atr.insert(curve.to_string(), final_atr);
        report.curves.push(CurveCheck {
            curve: curve.to_string(),
            transitions: records.len() as u64,
            missions: rewards.len() as u64,
            final_atr,
            max_atr_deviation: dev.unwrap_or(f64::INFINITY),
        });
        loaded_logs.insert(file_name(&log), records);
    }

    let genker_path = dir.join(files::GENKER_SUMMARY);
    if genker_path.exists() {
        let g: GenkerSummary = read_json(&genker_path)?;
        for stats in [&g.sim, &g.phy] {
            let records = match loaded_logs.get(&stats.log) {
                Some(r) => r.clone(),
                None => {
                    let p = dir.join(&stats.log);
                    if !p.exists() {
                        report.gaps.push(stats.log.clone());
                        continue;
                    }
                    read_records(&p)?
                }
            };
            let rc = recount_branching(&stats.log, &records, &schema)?;
            let mut mismatch =
                |what: String| report.mismatches.push(format!("{}: {what}", stats.log));
            if rc.records != stats.records {
                mismatch(format!(
                    "{} records stored, {} recounted",
                    stats.records, rc.records
                ));
            }
            if rc.source_states != stats.source_states {
                mismatch(format!(
                    "{} source states stored, {} recounted",
                    stats.source_states, rc.source_states
                ));
            }
            if rc.edges != stats.edges {
                mismatch(format!(
                    "{} edges stored, {} recounted",
                    stats.edges, rc.edges
                ));
            }
            if rc.branching != stats.branching {
                mismatch("branching histogram differs from recount".into());
            }
            report.corpora.push(rc);
        }
        let kernel_path = dir.join(files::KERNELS);
        if kernel_path.exists() {
            let ks = KernelSet::load(&kernel_path)?;
            if ks.len() as u64 != g.kernels {
                report.mismatches.push(format!(
                    "kernels: summary says {}, file has {}",
                    g.kernels,
                    ks.len()
                ));
            }
            if ks.check_schema(&schema).is_err() {
                report
                    .mismatches
                    .push("kernels: schema digest differs from run schema".into());
            }
        } else {
            report.gaps.push(files::KERNELS.into());
        }
        if g.forge.forged + g.forge.skipped_duplicate + g.forge.skipped_insufficient
            != g.forge.candidates
        {
            report
                .mismatches
                .push("genker: forge tallies do not add up".into());
        }
        report.genker = Some(g);
    } else {
        report.gaps.push(files::GENKER_SUMMARY.into());
    }

    let redesign_path = dir.join(files::REDESIGN_SUMMARY);
    if redesign_path.exists() {
        let r: RedesignSummary = read_json(&redesign_path)?;
        let train = dir.join(files::TRAIN_ATR);
        if train.exists() {
            let t = AtrSeries::load(&train)?;
            if t.len() as u64 != r.episodes
                || t.last().map(f64::to_bits) != Some(r.train_final_atr.to_bits())
            {
                report
                    .mismatches
                    .push("redesign: training ATR file disagrees with summary".into());
            }
        } else {
            report.gaps.push(files::TRAIN_ATR.into());
        }
        if !dir.join(files::POLICY).exists() {
            report.gaps.push(files::POLICY.into());
        }
        report.redesign = Some(r);
    } else {
        report.gaps.push(files::REDESIGN_SUMMARY.into());
    }

    write_json(&dir.join(files::REPORT_JSON), &report)?;
    std::fs::write(dir.join(files::REPORT_TXT), report.to_text())
        .map_err(|e| Error::io(format!("writing {}", files::REPORT_TXT), e))?;
    Ok(report)
}

fn read_records(path: &Path) -> Result<Vec<TransitionRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Total reward per run, in order of first appearance.
pub fn rewards_by_run(records: &[TransitionRecord]) -> Vec<f64> {
    let mut order = Vec::new();
    let mut totals: HashMap<u64, f64> = HashMap::new();
    for r in records {
        let t = totals.entry(r.run).or_insert_with(|| {
            order.push(r.run);
            0.0
        });
        *t += r.r;
    }
    order.iter().map(|run| totals[run]).collect()
}

/// Brute-force transition recount that does not go through the estimator.
pub fn recount_branching(
    log: &str,
    records: &[TransitionRecord],
    schema: &Schema,
) -> Result<BranchingRecount> {
    let mut pairs: HashMap<(QuantizedState, QuantizedState), u64> = HashMap::new();
    for r in records {
        *pairs
            .entry((schema.quantize(&r.s)?, schema.quantize(&r.s_next)?))
            .or_default() += 1;
    }
    let mut degree: HashMap<QuantizedState, usize> = HashMap::new();
    for (from, _) in pairs.keys() {
        *degree.entry(from.clone()).or_default() += 1;
    }
    let mut branching: BTreeMap<usize, usize> = BTreeMap::new();
    for d in degree.values() {
        *branching.entry(*d).or_default() += 1;
    }
    let mode = branching
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(k, _)| *k);
    Ok(BranchingRecount {
        log: log.to_string(),
        records: records.len() as u64,
        source_states: degree.len() as u64,
        edges: pairs.len() as u64,
        branching,
        mode,
    })
}

/// Every stage in order, all artifacts in `cfg.out_dir`.
pub fn run_all(cfg: &PipelineConfig) -> Result<PipelineReport> {
    let dir = cfg.out_dir.clone();
    cmd_simulate(cfg, SimKind::Design, cfg.n_missions)?;
    cmd_simulate(cfg, SimKind::Deploy, cfg.n_missions)?;
    cmd_genker(
        cfg,
        &dir.join(files::log("design")),
        &dir.join(files::log("deploy")),
    )?;
    cmd_rerun(cfg, &dir.join(files::KERNELS), cfg.n_missions)?;
    cmd_redesign(cfg, &dir.join(files::KERNELS))?;
    cmd_redeploy(cfg, &dir.join(files::POLICY), cfg.n_missions)?;
    cmd_report(&dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_and_rejects_typos() {
        let cfg = PipelineConfig::default();
        let back = PipelineConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert!(PipelineConfig::from_toml_str("sigmaa = 1.0").is_err());
        assert!(PipelineConfig::from_toml_str("theta_act = 0.0").is_err());
        let c =
            PipelineConfig::from_toml_str("seed = 7\n[testbed]\ndeadline_steps = 40\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.testbed.deadline_steps, 40);
        assert_eq!(c.testbed.goal, 20.0);
    }

    #[test]
    fn rewards_group_by_run() {
        let rec = |run, r| TransitionRecord {
            run,
            step: 0,
            s: crate::state::StateVector(vec![0.0, 0.0]),
            a: crate::state::ActionVector(vec![0.0]),
            r,
            s_next: crate::state::StateVector(vec![0.0, 0.0]),
        };
        let rs = rewards_by_run(&[rec(0, 0.0), rec(0, 10.0), rec(1, 0.0), rec(1, -10.0)]);
        assert_eq!(rs, vec![10.0, -10.0]);
    }
}
