//! State-space kernels: a Gaussian activation region around the state that
//! preceded a divergence, the normalized divergence distribution, and a
//! least-squares affine transfer function fitted to the physical branch.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsq::{fit_affine, AffineMap};
use crate::rollout::Divergence;
use crate::state::{ActionVector, Schema, StateVector};

pub const KERNEL_FILE_VERSION: u32 = 1;

/// Affine map fitted to rows that share one quantized action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionMap {
    pub signature: ActionVector,
    #[serde(flatten)]
    pub map: AffineMap,
}

/// `s' = m·[s; a] + b`, optionally refined per action signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    #[serde(flatten)]
    pub map: AffineMap,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub by_action: Vec<ActionMap>,
}

impl Transfer {
    pub fn select(&self, a: &ActionVector) -> &AffineMap {
        let l1 = |sig: &ActionVector| -> f64 {
            sig.values()
                .iter()
                .zip(a.values())
                .map(|(x, y)| (x - y).abs())
                .sum()
        };
        let mut best: Option<(&ActionMap, f64)> = None;
        for am in &self.by_action {
            let d = l1(&am.signature);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((am, d));
            }
        }
        best.map_or(&self.map, |(am, _)| &am.map)
    }

    pub fn apply(&self, s: &StateVector, a: &ActionVector) -> StateVector {
        let x: Vec<f64> = s.values().iter().chain(a.values()).copied().collect();
        StateVector(self.select(a).apply(&x))
    }

    fn is_finite(&self) -> bool {
        self.map.is_finite() && self.by_action.iter().all(|am| am.map.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub id: u32,
    /// State preceding the divergence; center of the activation region.
    pub mean: StateVector,
    pub sigma: f64,
    /// Normalized `(p_s, p_p)`.
    pub dist: [f64; 2],
    pub transfer: Transfer,
    pub fit_window: usize,
}

impl Kernel {
    /// Peak-normalized Gaussian of the distance to the kernel mean.
    pub fn activation(&self, s: &StateVector, schema: &Schema) -> Result<f64> {
        let d = schema.distance(&self.mean, s)?;
        Ok(gaussian(d, self.sigma))
    }

    pub fn predict(&self, s: &StateVector, a: &ActionVector) -> StateVector {
        self.transfer.apply(s, a)
    }

    pub fn p_sim(&self) -> f64 {
        self.dist[0]
    }

    pub fn p_phy(&self) -> f64 {
        self.dist[1]
    }
}

#[inline]
pub fn gaussian(d: f64, sigma: f64) -> f64 {
    (-(d * d) / (2.0 * sigma * sigma)).exp()
}

/// Largest distance at which a kernel of width `sigma` still reaches `theta`.
pub fn activation_radius(sigma: f64, theta: f64) -> f64 {
    sigma * (-2.0 * theta.ln()).sqrt()
}

/// Scales `(p_s, p_p)` to sum to one. A zero pair becomes `(0.5, 0.5)`.
pub fn normalize(p_s: f64, p_p: f64) -> [f64; 2] {
    let sum = p_s + p_p;
    if sum > 0.0 {
        [p_s / sum, p_p / sum]
    } else {
        [0.5, 0.5]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForgeConfig {
    pub eps_c: f64,
    pub sigma: f64,
    pub theta_act: f64,
    pub window: usize,
    /// Fit one map per quantized action in addition to the pooled map.
    #[serde(default)]
    pub per_action_maps: bool,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig {
            eps_c: 0.5,
            sigma: 1.0,
            theta_act: 0.1,
            window: 4,
            per_action_maps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitOutcome {
    Fitted(Transfer),
    /// Fewer transitions than unknowns per output.
    Insufficient {
        rows: usize,
        needed: usize,
    },
}

/// Builds the regression rows `([s_t; a_t], s_{t+1})` from the anchor state
/// followed by at most `window` physical steps.
fn regression_rows(
    d: &Divergence,
    window: usize,
    schema: &Schema,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<ActionVector>) {
    let path: Vec<_> = std::iter::once(&d.phy)
        .map(|a| (&a.state, &a.action))
        .chain(d.phy_continuation.iter().map(|s| (&s.state, &s.action)))
        .take(window)
        .collect();
    let mut inputs = Vec::with_capacity(path.len());
    let mut outputs = Vec::with_capacity(path.len());
    let mut actions = Vec::with_capacity(path.len());
    let mut prev = schema.representative(&d.anchor.state);
    for (state, action) in path {
        let next = schema.representative(state);
        inputs.push(
            prev.values()
                .iter()
                .chain(action.values())
                .copied()
                .collect(),
        );
        outputs.push(next.0.clone());
        actions.push(action.clone());
        prev = next;
    }
    (inputs, outputs, actions)
}

pub fn fit_transfer(d: &Divergence, window: usize, schema: &Schema) -> Result<FitOutcome> {
    fit_transfer_with(d, window, schema, false)
}

pub fn fit_transfer_with(
    d: &Divergence,
    window: usize,
    schema: &Schema,
    per_action: bool,
) -> Result<FitOutcome> {
    if window < 2 {
        return Err(Error::Input("fit window must be >= 2".into()));
    }
    let needed = schema.state_dim() + schema.action_dim() + 1;
    let (inputs, outputs, actions) = regression_rows(d, window, schema);
    if inputs.len() < needed {
        return Ok(FitOutcome::Insufficient {
            rows: inputs.len(),
            needed,
        });
    }
    let map = fit_affine(&inputs, &outputs)?;
    let mut by_action = Vec::new();
    if per_action {
        let mut groups: std::collections::BTreeMap<_, Vec<usize>> =
            std::collections::BTreeMap::new();
        for (i, a) in actions.iter().enumerate() {
            groups
                .entry(schema.quantize_action(a)?)
                .or_default()
                .push(i);
        }
        if groups.len() > 1 {
            for rows in groups.values().filter(|r| r.len() >= needed) {
                let xi: Vec<_> = rows.iter().map(|&i| inputs[i].clone()).collect();
                let yi: Vec<_> = rows.iter().map(|&i| outputs[i].clone()).collect();
                let n = rows.len() as f64;
                let mut sig = vec![0.0; schema.action_dim()];
                for &i in rows {
                    for (s, v) in sig.iter_mut().zip(actions[i].values()) {
                        *s += v / n;
                    }
                }
                by_action.push(ActionMap {
                    signature: ActionVector(sig),
                    map: fit_affine(&xi, &yi)?,
                });
            }
        }
    }
    Ok(FitOutcome::Fitted(Transfer { map, by_action }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub eps_c: f64,
    pub sigma: f64,
    pub theta_act: f64,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSet {
    pub version: u32,
    pub schema_digest: String,
    pub config: KernelConfig,
    pub kernels: Vec<Kernel>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgeStats {
    pub candidates: usize,
    pub forged: usize,
    pub skipped_duplicate: usize,
    pub skipped_insufficient: usize,
}

impl KernelSet {
    pub fn empty(schema: &Schema, cfg: &ForgeConfig) -> Self {
        KernelSet {
            version: KERNEL_FILE_VERSION,
            schema_digest: schema.digest(),
            config: KernelConfig {
                eps_c: cfg.eps_c,
                sigma: cfg.sigma,
                theta_act: cfg.theta_act,
                window: cfg.window,
            },
            kernels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("kernel set serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format { context, msg } => {
                Error::format(format!("{}: {context}", path.display()), msg)
            }
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| {
            Error::format(
                format!("line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        match v.get("version").and_then(|x| x.as_u64()) {
            Some(ver) if ver == KERNEL_FILE_VERSION as u64 => {}
            Some(ver) => {
                return Err(Error::format(
                    "version",
                    format!("unsupported version {ver}, expected {KERNEL_FILE_VERSION}"),
                ))
            }
            None => return Err(Error::format("version", "missing or not an integer")),
        }
        let ks: KernelSet =
            serde_json::from_value(v).map_err(|e| Error::format("kernel set", e.to_string()))?;
        ks.validate()?;
        Ok(ks)
    }

    /// Checks the per-kernel invariants a loaded file must satisfy.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        if !(c.sigma > 0.0 && c.theta_act > 0.0 && c.theta_act <= 1.0 && c.eps_c >= 0.0) {
            return Err(Error::format(
                "config",
                "requires sigma > 0, 0 < theta_act <= 1, eps_c >= 0",
            ));
        }
        for (i, k) in self.kernels.iter().enumerate() {
            let ctx = |field: &str| format!("kernels[{i}].{field}");
            if !(k.sigma.is_finite() && k.sigma > 0.0) {
                return Err(Error::format(ctx("sigma"), "must be finite and > 0"));
            }
            let [ps, pp] = k.dist;
            if !(0.0..=1.0).contains(&ps)
                || !(0.0..=1.0).contains(&pp)
                || ((ps + pp) - 1.0).abs() > 1e-9
            {
                return Err(Error::format(
                    ctx("dist"),
                    format!("[{ps}, {pp}] is not a normalized pair"),
                ));
            }
            if !k.mean.is_finite() {
                return Err(Error::format(ctx("mean"), "non-finite value"));
            }
            if !k.transfer.is_finite() {
                return Err(Error::format(ctx("transfer"), "non-finite coefficient"));
            }
            let sd = k.mean.len();
            let maps =
                std::iter::once(&k.transfer.map).chain(k.transfer.by_action.iter().map(|a| &a.map));
            for m in maps {
                if m.output_dim() != sd
                    || m.m.len() != sd
                    || m.m.iter().any(|r| r.len() != m.input_dim())
                {
                    return Err(Error::format(
                        ctx("transfer"),
                        "shape does not match the mean state",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Checks that every kernel matches `schema` dimensionally.
    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        if self.schema_digest != schema.digest() {
            return Err(Error::Schema(format!(
                "kernel file was built for schema {} but the configured schema is {}",
                self.schema_digest,
                schema.digest()
            )));
        }
        Ok(())
    }

    /// Smallest pairwise kernel-mean distance (infinite for fewer than two kernels).
    pub fn min_mean_separation(&self, schema: &Schema) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.kernels.iter().enumerate() {
            for b in &self.kernels[i + 1..] {
                best = best.min(schema.distance_unchecked(a.mean.values(), b.mean.values()));
            }
        }
        best
    }
}

/// Turns divergences into kernels in order: normalize the divergence
/// distribution, fit the transfer, drop candidates without enough data, then
/// drop any whose mean lies within `eps_c` of an earlier kernel.
pub fn forge(
    divergences: &[Divergence],
    schema: &Schema,
    cfg: &ForgeConfig,
) -> Result<(KernelSet, ForgeStats)> {
    let mut set = KernelSet::empty(schema, cfg);
    let mut stats = ForgeStats {
        candidates: divergences.len(),
        ..ForgeStats::default()
    };
    for d in divergences {
        let dist = normalize(d.sim.probability, d.phy.probability);
        let transfer = match fit_transfer_with(d, cfg.window, schema, cfg.per_action_maps)? {
            FitOutcome::Fitted(t) => t,
            FitOutcome::Insufficient { .. } => {
                stats.skipped_insufficient += 1;
                continue;
            }
        };
        let mean = schema.representative(&d.anchor.state);
        let duplicate = set
            .kernels
            .iter()
            .any(|k| schema.distance_unchecked(k.mean.values(), mean.values()) <= cfg.eps_c);
        if duplicate {
            stats.skipped_duplicate += 1;
            continue;
        }
        set.kernels.push(Kernel {
            id: set.kernels.len() as u32,
            mean,
            sigma: cfg.sigma,
            dist,
            transfer,
            fit_window: cfg.window,
        });
        stats.forged += 1;
    }
    Ok((set, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::{Anchor, RolloutStep};
    use crate::state::{ChannelSchema, QuantizedState};

    fn schema() -> Schema {
        Schema::new(
            vec![ChannelSchema::new("x", 0.0, 1000.0, 1.0, 1.0)],
            vec![ChannelSchema::new("u", -10.0, 10.0, 1.0, 1.0)],
            0.5,
        )
        .unwrap()
    }

    fn anchor(bin: i64, a: f64, p: f64) -> Anchor {
        Anchor {
            state: QuantizedState(vec![bin]),
            action: ActionVector(vec![a]),
            probability: p,
        }
    }

    /// Divergence whose physical branch follows bins `path` with actions `acts`.
    fn divergence(start: i64, path: &[(i64, f64)]) -> Divergence {
        Divergence {
            position: 1,
            anchor: anchor(start, 0.0, 1.0),
            sim: anchor(start + 1, path[0].1, 0.8),
            phy: anchor(path[0].0, path[0].1, 0.2),
            phy_continuation: path[1..]
                .iter()
                .map(|&(b, a)| RolloutStep {
                    state: QuantizedState(vec![b]),
                    action: ActionVector(vec![a]),
                    probability: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn activation_examples() {
        let s = schema();
        let k = Kernel {
            id: 0,
            mean: StateVector(vec![15.0]),
            sigma: 2.0,
            dist: [0.5, 0.5],
            transfer: Transfer {
                map: AffineMap::identity(1, 2),
                by_action: vec![],
            },
            fit_window: 4,
        };
        assert_eq!(k.activation(&StateVector(vec![15.0]), &s).unwrap(), 1.0);
        let a = k.activation(&StateVector(vec![17.0]), &s).unwrap();
        assert!((a - (-0.5f64).exp()).abs() < 1e-15);
        assert!(k.activation(&StateVector(vec![35.0]), &s).unwrap() < 1e-21);
        assert!((gaussian(activation_radius(1.3, 0.1), 1.3) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn insufficient_when_branch_is_short() {
        let s = schema();
        let d = divergence(0, &[(3, 1.0), (4, 1.0)]);
        assert_eq!(
            fit_transfer(&d, 4, &s).unwrap(),
            FitOutcome::Insufficient { rows: 2, needed: 3 }
        );
        assert!(fit_transfer(&d, 1, &s).is_err());
    }

    #[test]
    fn fits_exact_affine_branch() {
        // bin centers are b + 0.5; x' = x + a with actions varying
        let s = schema();
        let d = divergence(0, &[(2, 2.0), (3, 1.0), (6, 3.0), (8, 2.0)]);
        let FitOutcome::Fitted(t) = fit_transfer(&d, 4, &s).unwrap() else {
            panic!("expected a fit")
        };
        assert!((t.map.m[0][0] - 1.0).abs() < 1e-9);
        assert!((t.map.m[0][1] - 1.0).abs() < 1e-9);
        assert!(t.map.b[0].abs() < 1e-9);
        let y = t.apply(&StateVector(vec![10.0]), &ActionVector(vec![-2.0]));
        assert!((y.0[0] - 8.0).abs() < 1e-9);
    }

    #[test]
    fn forge_dedups_and_counts() {
        let s = schema();
        let d = divergence(0, &[(2, 2.0), (3, 1.0), (6, 3.0), (8, 2.0)]);
        let short = divergence(40, &[(41, 1.0)]);
        let far = divergence(20, &[(22, 2.0), (23, 1.0), (26, 3.0)]);
        let cfg = ForgeConfig::default();
        let (ks, stats) = forge(&[d.clone(), d.clone(), short, far], &s, &cfg).unwrap();
        assert_eq!(ks.len(), 2);
        assert_eq!(ks.kernels[0].id, 0);
        assert_eq!(ks.kernels[1].id, 1);
        assert_eq!(ks.kernels[1].mean.0, vec![20.5]);
        assert_eq!(
            stats,
            ForgeStats {
                candidates: 4,
                forged: 2,
                skipped_duplicate: 1,
                skipped_insufficient: 1
            }
        );
        assert_eq!(ks.kernels[0].dist, [0.8, 0.2]);
        assert!(ks.min_mean_separation(&s) > cfg.eps_c);

        let (empty, stats) = forge(&[], &s, &cfg).unwrap();
        assert!(empty.is_empty());
        assert_eq!(stats.forged, 0);
    }

    #[test]
    fn per_action_maps_are_selected_by_nearest_signature() {
        let s = schema();
        // action 1 rows: x' = x + 1 ; action 3 rows: x' = 2x + 0.5
        let d = divergence(
            0,
            &[(1, 1.0), (2, 1.0), (3, 1.0), (7, 3.0), (15, 3.0), (31, 3.0)],
        );
        let FitOutcome::Fitted(t) = fit_transfer_with(&d, 6, &s, true).unwrap() else {
            panic!("expected a fit")
        };
        assert_eq!(t.by_action.len(), 2);
        let y = t.apply(&StateVector(vec![50.0]), &ActionVector(vec![3.0]));
        assert!((y.0[0] - 100.5).abs() < 1e-9);
        let y = t.apply(&StateVector(vec![50.0]), &ActionVector(vec![1.0]));
        assert!((y.0[0] - 51.0).abs() < 1e-9);
        assert_eq!(t.select(&ActionVector(vec![1.9])).b, t.by_action[0].map.b);
        assert_eq!(t.select(&ActionVector(vec![2.1])).b, t.by_action[1].map.b);
    }

    #[test]
    fn normalize_pairs() {
        assert_eq!(normalize(0.9, 0.1), [0.9, 0.1]);
        let [a, b] = normalize(0.51, 0.48);
        assert!((a + b - 1.0).abs() < 1e-12);
        assert_eq!(normalize(0.0, 0.0), [0.5, 0.5]);
    }
}
