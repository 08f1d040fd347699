//! Trajectory logs and frequentist empirical transition tables.
//!
//! Logs are JSON lines, one transition per line:
//!
//! ```text
//! {"run":0,"step":0,"s":[1.0,0.0],"a":[5.0],"r":0.0,"s_next":[1.5,0.0]}
//! ```
//!
//! Counting is state to state over quantized states. The logs are on-policy,
//! so the controller's action choice is already folded into the counts; the
//! action stored on each edge is the mean of the actions observed on it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{ActionVector, QuantizedState, Schema, StateVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub run: u64,
    pub step: u64,
    pub s: StateVector,
    pub a: ActionVector,
    pub r: f64,
    pub s_next: StateVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corpus {
    Sim,
    Phy,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    /// Lines that were not valid JSON records and were skipped.
    pub dropped_lines: usize,
    /// Continuity violations inside a run (step gaps or `s_next` != next `s`).
    pub continuity_warnings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub corpus: Corpus,
    pub records: Vec<TransitionRecord>,
    pub stats: IngestStats,
}

impl History {
    pub fn new(corpus: Corpus, records: Vec<TransitionRecord>) -> Self {
        let mut h = History {
            corpus,
            records,
            stats: IngestStats::default(),
        };
        h.stats.continuity_warnings = h.continuity_violations();
        h
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn continuity_violations(&self) -> usize {
        self.records
            .windows(2)
            .filter(|w| {
                w[0].run == w[1].run && (w[1].step != w[0].step + 1 || w[0].s_next != w[1].s)
            })
            .count()
    }
}

/// Reads a JSONL trajectory log. Malformed lines are dropped and counted; a
/// record whose vectors do not match the schema is a hard error.
pub fn ingest_log(path: &Path, schema: &Schema, corpus: Corpus) -> Result<History> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut dropped = 0;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TransitionRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                warn!("{}:{lineno}: dropping malformed line: {e}", path.display());
                dropped += 1;
                continue;
            }
        };
        let arity = |what: &str, got: usize, want: usize| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: format!("{what} has {got} values, schema expects {want}"),
        };
        if rec.s.len() != schema.state_dim() {
            return Err(arity("s", rec.s.len(), schema.state_dim()));
        }
        if rec.s_next.len() != schema.state_dim() {
            return Err(arity("s_next", rec.s_next.len(), schema.state_dim()));
        }
        if rec.a.len() != schema.action_dim() {
            return Err(arity("a", rec.a.len(), schema.action_dim()));
        }
        records.push(rec);
    }
    if records.is_empty() {
        warn!("{}: log contains no records", path.display());
    }
    let mut h = History::new(corpus, records);
    h.stats.dropped_lines = dropped;
    if h.stats.continuity_warnings > 0 {
        warn!(
            "{}: {} continuity gaps between consecutive steps",
            path.display(),
            h.stats.continuity_warnings
        );
    }
    Ok(h)
}

pub fn write_log(path: &Path, records: &[TransitionRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// One outgoing edge of a quantized source state.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub to: QuantizedState,
    pub count: u64,
    pub probability: f64,
    /// Mean of the actions observed on this edge.
    pub action: ActionVector,
    /// Indices into the history's records that produced this edge.
    pub samples: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalTransition {
    pub corpus: Corpus,
    schema_digest: String,
    table: BTreeMap<QuantizedState, Vec<Edge>>,
    /// Every state seen either as a source or as a successor.
    known: BTreeSet<QuantizedState>,
    records: usize,
}

#[derive(Default)]
struct EdgeAcc {
    count: u64,
    action_sum: Vec<f64>,
    samples: Vec<usize>,
}

/// Frequentist estimate: per quantized source state, successor probability is
/// the edge count divided by the number of records leaving that state.
pub fn estimate(h: &History, schema: &Schema) -> Result<EmpiricalTransition> {
    if h.is_empty() {
        return Err(Error::Estimation("history has no records".into()));
    }
    let mut acc: BTreeMap<QuantizedState, BTreeMap<QuantizedState, EdgeAcc>> = BTreeMap::new();
    for (i, rec) in h.records.iter().enumerate() {
        schema.check_action(&rec.a)?;
        let from = schema.quantize(&rec.s)?;
        let to = schema.quantize(&rec.s_next)?;
        let e = acc.entry(from).or_default().entry(to).or_default();
        if e.action_sum.is_empty() {
            e.action_sum = vec![0.0; rec.a.len()];
        }
        e.count += 1;
        for (sum, v) in e.action_sum.iter_mut().zip(rec.a.values()) {
            *sum += v;
        }
        e.samples.push(i);
    }
    let known = acc
        .iter()
        .flat_map(|(from, succ)| std::iter::once(from).chain(succ.keys()))
        .cloned()
        .collect();
    let table = acc
        .into_iter()
        .map(|(from, succ)| {
            let total: u64 = succ.values().map(|e| e.count).sum();
            let edges = succ
                .into_iter()
                .map(|(to, e)| Edge {
                    to,
                    count: e.count,
                    probability: e.count as f64 / total as f64,
                    action: ActionVector(e.action_sum.iter().map(|s| s / e.count as f64).collect()),
                    samples: e.samples,
                })
                .collect();
            (from, edges)
        })
        .collect();
    Ok(EmpiricalTransition {
        corpus: h.corpus,
        schema_digest: schema.digest(),
        table,
        known,
        records: h.len(),
    })
}

impl EmpiricalTransition {
    pub fn schema_digest(&self) -> &str {
        &self.schema_digest
    }

    pub fn record_count(&self) -> usize {
        self.records
    }

    pub fn source_count(&self) -> usize {
        self.table.len()
    }

    pub fn edge_count(&self) -> usize {
        self.table.values().map(Vec::len).sum()
    }

    pub fn sources(&self) -> impl Iterator<Item = &QuantizedState> {
        self.table.keys()
    }

    /// True when `q` has outgoing edges.
    pub fn contains(&self, q: &QuantizedState) -> bool {
        self.table.contains_key(q)
    }

    /// True when `q` was observed at all, as a source or as a successor.
    pub fn knows(&self, q: &QuantizedState) -> bool {
        self.known.contains(q)
    }

    /// Outgoing edges of `q`; empty when `q` was never a source.
    pub fn edges(&self, q: &QuantizedState) -> &[Edge] {
        self.table.get(q).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn successors(&self, q: &QuantizedState) -> Vec<(QuantizedState, f64)> {
        self.edges(q)
            .iter()
            .map(|e| (e.to.clone(), e.probability))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&QuantizedState, &[Edge])> {
        self.table.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// Histogram of out-degree over source states.
    pub fn branching_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for edges in self.table.values() {
            *hist.entry(edges.len()).or_insert(0) += 1;
        }
        hist
    }

    /// Exact key if present, otherwise the source whose representative is
    /// closest and within `eps_c`; ties go to the lexicographically smallest key.
    pub fn nearest_source(&self, q: &QuantizedState, schema: &Schema) -> Option<&QuantizedState> {
        if let Some((k, _)) = self.table.get_key_value(q) {
            return Some(k);
        }
        let target = schema.representative(q);
        let mut best: Option<(&QuantizedState, f64)> = None;
        for k in self.table.keys() {
            let d = schema.distance_unchecked(schema.representative(k).values(), target.values());
            if d <= schema.eps_c && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        best.map(|(k, _)| k)
    }
}

/// Exact intersection of the source states of two tables.
pub fn common_states(
    a: &EmpiricalTransition,
    b: &EmpiricalTransition,
) -> Result<BTreeSet<QuantizedState>> {
    if a.schema_digest != b.schema_digest {
        return Err(Error::Schema(
            "transition tables were built over different schemas".into(),
        ));
    }
    Ok(a.table
        .keys()
        .filter(|k| b.table.contains_key(*k))
        .cloned()
        .collect())
}

/// Source states of `a` that have a counterpart in `b` under the nearest-key
/// rule (exact key or a key within `eps_c`).
pub fn common_states_near(
    a: &EmpiricalTransition,
    b: &EmpiricalTransition,
    schema: &Schema,
) -> usize {
    a.table
        .keys()
        .filter(|k| b.nearest_source(k, schema).is_some())
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::ChannelSchema;

    fn schema() -> Schema {
        Schema::new(
            vec![ChannelSchema::new("x", 0.0, 100.0, 1.0, 1.0)],
            vec![ChannelSchema::new("u", -10.0, 10.0, 1.0, 1.0)],
            0.5,
        )
        .unwrap()
    }

    fn rec(run: u64, step: u64, s: f64, a: f64, s_next: f64) -> TransitionRecord {
        TransitionRecord {
            run,
            step,
            s: StateVector(vec![s]),
            a: ActionVector(vec![a]),
            r: 0.0,
            s_next: StateVector(vec![s_next]),
        }
    }

    fn q(b: i64) -> QuantizedState {
        QuantizedState(vec![b])
    }

    #[test]
    fn three_record_history() {
        let h = History::new(
            Corpus::Sim,
            vec![
                rec(0, 0, 0.5, 1.0, 1.5),
                rec(1, 0, 0.2, 3.0, 1.1),
                rec(2, 0, 0.7, 2.0, 2.5),
            ],
        );
        let et = estimate(&h, &schema()).unwrap();
        let succ = et.successors(&q(0));
        assert_eq!(succ, vec![(q(1), 2.0 / 3.0), (q(2), 1.0 / 3.0)]);
        let edges = et.edges(&q(0));
        assert_eq!(edges[0].count, 2);
        assert_eq!(edges[0].action.0, vec![2.0]);
        assert_eq!(edges[0].samples, vec![0, 1]);
        assert_eq!(edges[1].samples, vec![2]);
        assert!(et.successors(&q(7)).is_empty());
    }

    #[test]
    fn single_record() {
        let h = History::new(Corpus::Phy, vec![rec(0, 0, 0.5, 1.0, 1.5)]);
        let et = estimate(&h, &schema()).unwrap();
        assert_eq!(et.successors(&q(0)), vec![(q(1), 1.0)]);
        assert_eq!(et.edge_count(), 1);
        assert_eq!(et.branching_histogram(), BTreeMap::from([(1, 1)]));
    }

    #[test]
    fn empty_history_is_an_error() {
        let h = History::new(Corpus::Sim, vec![]);
        assert!(matches!(estimate(&h, &schema()), Err(Error::Estimation(_))));
    }

    #[test]
    fn continuity_is_checked() {
        let h = History::new(
            Corpus::Sim,
            vec![
                rec(0, 0, 0.5, 1.0, 1.5),
                rec(0, 1, 1.5, 1.0, 2.5),
                rec(0, 3, 9.0, 1.0, 2.5),
            ],
        );
        assert_eq!(h.stats.continuity_warnings, 1);
    }

    #[test]
    fn common_states_cases() {
        let s = schema();
        let a = estimate(
            &History::new(
                Corpus::Sim,
                vec![rec(0, 0, 0.5, 1.0, 1.5), rec(0, 1, 1.5, 1.0, 2.5)],
            ),
            &s,
        )
        .unwrap();
        let b = estimate(
            &History::new(Corpus::Phy, vec![rec(0, 0, 5.5, 1.0, 6.5)]),
            &s,
        )
        .unwrap();
        assert_eq!(common_states(&a, &a).unwrap(), BTreeSet::from([q(0), q(1)]));
        assert!(common_states(&a, &b).unwrap().is_empty());

        let other = Schema::new(
            vec![ChannelSchema::new("x", 0.0, 100.0, 2.0, 1.0)],
            s.action.clone(),
            0.5,
        )
        .unwrap();
        let c = estimate(
            &History::new(Corpus::Phy, vec![rec(0, 0, 0.5, 1.0, 1.5)]),
            &other,
        )
        .unwrap();
        assert!(common_states(&a, &c).is_err());
    }

    #[test]
    fn nearest_source_fallback() {
        let s = Schema::new(
            vec![ChannelSchema::new("x", 0.0, 100.0, 0.25, 1.0)],
            vec![],
            0.5,
        )
        .unwrap();
        let rec0 = |x: f64| TransitionRecord {
            run: 0,
            step: 0,
            s: StateVector(vec![x]),
            a: ActionVector(vec![]),
            r: 0.0,
            s_next: StateVector(vec![x]),
        };
        let et = estimate(&History::new(Corpus::Sim, vec![rec0(1.1), rec0(1.6)]), &s).unwrap();
        // bins 4 (center 1.125) and 6 (center 1.625)
        assert_eq!(et.nearest_source(&q(4), &s), Some(&q(4)));
        // bin 5 (center 1.375) is 0.25 from both; lexicographic tie-break
        assert_eq!(et.nearest_source(&q(5), &s), Some(&q(4)));
        assert_eq!(et.nearest_source(&q(7), &s), Some(&q(6)));
        assert_eq!(et.nearest_source(&q(20), &s), None);
    }
}
