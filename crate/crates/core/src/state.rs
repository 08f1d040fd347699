//! State and action schemas, quantization, and the weighted-L1 state distance.
//!
//! A [`Schema`] lists the scalar sensor channels that make up a state and the
//! control-output channels that make up an action. Every channel carries a
//! uniform quantization grid (`lo`, `bin_width`) used for frequentist counting
//! and a non-negative weight used by [`Schema::distance`]. Channels with weight
//! zero never make two states differ.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSchema {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub bin_width: f64,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

impl ChannelSchema {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64, bin_width: f64, weight: f64) -> Self {
        ChannelSchema {
            name: name.into(),
            lo,
            hi,
            bin_width,
            weight,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Schema(format!("channel '{}': {msg}", self.name)));
        if self.name.is_empty() {
            return Err(Error::Schema("channel with empty name".into()));
        }
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo >= self.hi {
            return bad("requires finite lo < hi");
        }
        if !(self.bin_width.is_finite() && self.bin_width > 0.0) {
            return bad("bin_width must be finite and > 0");
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return bad("weight must be finite and >= 0");
        }
        Ok(())
    }

    #[inline]
    pub fn bin(&self, value: f64) -> i64 {
        ((value - self.lo) / self.bin_width).floor() as i64
    }

    #[inline]
    pub fn center(&self, bin: i64) -> f64 {
        self.lo + (bin as f64 + 0.5) * self.bin_width
    }
}

/// Ordered sensor readings, one per state channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(pub Vec<f64>);

/// Ordered control outputs, one per action channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionVector(pub Vec<f64>);

/// Per-channel bin indices of a state. Ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuantizedState(pub Vec<i64>);

macro_rules! vector_common {
    ($t:ident) => {
        impl $t {
            pub fn new(values: Vec<f64>) -> Self {
                $t(values)
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn values(&self) -> &[f64] {
                &self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl From<Vec<f64>> for $t {
            fn from(v: Vec<f64>) -> Self {
                $t(v)
            }
        }
    };
}

vector_common!(StateVector);
vector_common!(ActionVector);

impl QuantizedState {
    pub fn bins(&self) -> &[i64] {
        &self.0
    }
}

impl fmt::Display for QuantizedState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{b}")?;
        }
        write!(f, ")")
    }
}

/// Channel layout shared by every corpus, kernel and simulator in one study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    /// Distance above which two states are considered different.
    pub eps_c: f64,
    pub state: Vec<ChannelSchema>,
    pub action: Vec<ChannelSchema>,
}

impl Schema {
    pub fn new(state: Vec<ChannelSchema>, action: Vec<ChannelSchema>, eps_c: f64) -> Result<Self> {
        let schema = Schema {
            eps_c,
            state,
            action,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.state.is_empty() {
            return Err(Error::Schema(
                "at least one state channel is required".into(),
            ));
        }
        if !(self.eps_c.is_finite() && self.eps_c >= 0.0) {
            return Err(Error::Schema("eps_c must be finite and >= 0".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for c in self.state.iter().chain(&self.action) {
            c.validate()?;
            if !names.insert(c.name.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate channel name '{}'",
                    c.name
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: Schema =
            toml::from_str(text).map_err(|e| Error::format("schema", e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Format { msg, .. } => Error::format(path.display().to_string(), msg),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn state_dim(&self) -> usize {
        self.state.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action.len()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.state.iter().position(|c| c.name == name)
    }

    /// Hex SHA-256 over the channel layout (names, bounds, grids and weights).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (kind, chans) in [("state", &self.state), ("action", &self.action)] {
            for c in chans {
                h.update(kind.as_bytes());
                h.update([0u8]);
                h.update(c.name.as_bytes());
                h.update([0u8]);
                for v in [c.lo, c.hi, c.bin_width, c.weight] {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    pub fn check_state(&self, s: &StateVector) -> Result<()> {
        if s.len() != self.state.len() {
            return Err(Error::Dimension {
                expected: self.state.len(),
                got: s.len(),
            });
        }
        Ok(())
    }

    pub fn check_action(&self, a: &ActionVector) -> Result<()> {
        if a.len() != self.action.len() {
            return Err(Error::Dimension {
                expected: self.action.len(),
                got: a.len(),
            });
        }
        Ok(())
    }

    /// Weighted L1 distance `sum_i w_i * |a_i - b_i|`.
    pub fn distance(&self, a: &StateVector, b: &StateVector) -> Result<f64> {
        self.check_state(a)?;
        self.check_state(b)?;
        Ok(self.distance_unchecked(a.values(), b.values()))
    }

    pub(crate) fn distance_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        self.state
            .iter()
            .zip(a.iter().zip(b))
            .filter(|(c, _)| c.weight > 0.0)
            .map(|(c, (x, y))| c.weight * (x - y).abs())
            .sum()
    }

    /// Strict test: `distance(a, b) > eps_c`.
    pub fn states_differ(&self, a: &StateVector, b: &StateVector, eps_c: f64) -> Result<bool> {
        Ok(self.distance(a, b)? > eps_c)
    }

    pub fn quantize(&self, s: &StateVector) -> Result<QuantizedState> {
        self.check_state(s)?;
        let mut bins = Vec::with_capacity(s.len());
        for (c, &v) in self.state.iter().zip(s.values()) {
            if !v.is_finite() {
                return Err(Error::Input(format!(
                    "non-finite value {v} on channel '{}'",
                    c.name
                )));
            }
            bins.push(c.bin(v));
        }
        Ok(QuantizedState(bins))
    }

    /// Bin-center representative of a quantized state.
    pub fn representative(&self, q: &QuantizedState) -> StateVector {
        StateVector(
            self.state
                .iter()
                .zip(q.bins())
                .map(|(c, &b)| c.center(b))
                .collect(),
        )
    }

    pub fn quantize_action(&self, a: &ActionVector) -> Result<QuantizedState> {
        self.check_action(a)?;
        if !a.is_finite() {
            return Err(Error::Input("non-finite action value".into()));
        }
        Ok(QuantizedState(
            self.action
                .iter()
                .zip(a.values())
                .map(|(c, &v)| c.bin(v))
                .collect(),
        ))
    }

    /// Clamp every state channel into `[lo, hi]`. Returns the clamped state and
    /// the number of channels that were moved.
    pub fn clamp_state(&self, s: &StateVector) -> (StateVector, usize) {
        let mut moved = 0;
        let values = self
            .state
            .iter()
            .zip(s.values())
            .map(|(c, &v)| {
                let x = v.clamp(c.lo, c.hi);
                if x != v {
                    moved += 1;
                }
                x
            })
            .collect();
        (StateVector(values), moved)
    }
}
