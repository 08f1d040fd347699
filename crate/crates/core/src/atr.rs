//! Average Total Reward: the running mean of per-mission rewards.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AtrSeries(pub Vec<f64>);

impl AtrSeries {
    /// `atr[k-1] = (r_1 + ... + r_k) / k`.
    pub fn from_rewards(rewards: &[f64]) -> Self {
        let mut sum = 0.0;
        AtrSeries(
            rewards
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    sum += r;
                    sum / (i + 1) as f64
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<f64> {
        self.0.last().copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mission_index,atr\n");
        for (i, v) in self.0.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, v));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "mission_index,atr")) => {}
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    msg: "expected header 'mission_index,atr'".into(),
                })
            }
        }
        let mut values = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once(',')
                .ok_or_else(|| bad("expected two columns".into()))?;
            let k: usize = k
                .trim()
                .parse()
                .map_err(|e| bad(format!("mission_index: {e}")))?;
            let v: f64 = v.trim().parse().map_err(|e| bad(format!("atr: {e}")))?;
            if k != values.len() + 1 {
                return Err(bad(format!("mission_index {k} out of sequence")));
            }
            values.push(v);
        }
        Ok(AtrSeries(values))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_csv(&text, path)
    }

    /// Largest absolute elementwise difference, or `None` on length mismatch.
    pub fn max_abs_diff(&self, other: &AtrSeries) -> Option<f64> {
        (self.len() == other.len()).then(|| {
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
    }
}
