//! Interaction-event datasets.
//!
//! An interaction is a K-tuple of node indices, one per node type (mode).
//! Each observed interaction carries a sorted sequence of event times on a
//! shared horizon `[0, T]`. Node indices are 0-based and contiguous per mode;
//! ingestion orders them by descending event count so that the most active
//! nodes get the first sticks in the stick-breaking prior.

mod io;
mod synth;

pub use io::{load_events, read_raw_rows, write_events, write_mapping, RawRow};
pub use synth::{synth_from_model, thin, GeneratorSpec, RateFamily};

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;

use crate::error::{NeshError, Result};
use crate::rng::{derive_seed, domain, stream};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InteractionKey(pub Vec<usize>);

impl InteractionKey {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Event times of one interaction, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    pub key: InteractionKey,
    pub timestamps: Vec<f64>,
}

impl EventSequence {
    pub fn count(&self) -> usize {
        self.timestamps.len()
    }
}

/// Internal index -> raw ID, per mode.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodeMapping {
    pub raw_ids: Vec<Vec<u64>>,
}

impl NodeMapping {
    /// Identity mapping for the given mode sizes.
    pub fn identity(mode_sizes: &[usize]) -> Self {
        NodeMapping {
            raw_ids: mode_sizes
                .iter()
                .map(|&d| (0..d as u64).collect())
                .collect(),
        }
    }

    pub fn raw_id(&self, mode: usize, internal: usize) -> u64 {
        self.raw_ids[mode][internal]
    }

    /// Raw ID -> internal index tables.
    pub fn inverse(&self) -> Vec<HashMap<u64, usize>> {
        self.raw_ids
            .iter()
            .map(|ids| ids.iter().enumerate().map(|(i, &r)| (r, i)).collect())
            .collect()
    }
}

/// How raw timestamps map to the normalized horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeFrame {
    /// Shift so the earliest event is at 0; `T` is the raw span.
    FromData,
    /// Use a known offset and horizon.
    Fixed { offset: f64, horizon: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventDataset {
    pub k: usize,
    pub mode_sizes: Vec<usize>,
    pub sequences: Vec<EventSequence>,
    pub horizon: f64,
    pub time_offset: f64,
    pub time_scale: f64,
    pub mapping: NodeMapping,
}

impl EventDataset {
    /// Builds a dataset from already-indexed sequences, validating the
    /// invariants. Timestamps are sorted.
    pub fn new(
        k: usize,
        mode_sizes: Vec<usize>,
        mut sequences: Vec<EventSequence>,
        horizon: f64,
    ) -> Result<Self> {
        if k == 0 || mode_sizes.len() != k {
            return Err(NeshError::invalid(format!(
                "need {k} mode sizes, got {}",
                mode_sizes.len()
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(NeshError::invalid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for seq in &mut sequences {
            if seq.key.len() != k {
                return Err(NeshError::invalid(format!(
                    "key {:?} has wrong arity",
                    seq.key.0
                )));
            }
            for (m, &i) in seq.key.0.iter().enumerate() {
                if i >= mode_sizes[m] {
                    return Err(NeshError::invalid(format!(
                        "node {i} out of range for mode {m} of size {}",
                        mode_sizes[m]
                    )));
                }
            }
            if seq.timestamps.is_empty() {
                return Err(NeshError::invalid(format!(
                    "sequence {:?} has no events",
                    seq.key.0
                )));
            }
            if seq
                .timestamps
                .iter()
                .any(|t| !t.is_finite() || *t < 0.0 || *t > horizon)
            {
                return Err(NeshError::invalid(format!(
                    "sequence {:?} has timestamps outside [0, {horizon}]",
                    seq.key.0
                )));
            }
            if !seen.insert(seq.key.clone()) {
                return Err(NeshError::invalid(format!("duplicate key {:?}", seq.key.0)));
            }
            seq.timestamps.sort_by(f64::total_cmp);
        }
        let mapping = NodeMapping::identity(&mode_sizes);
        Ok(EventDataset {
            k,
            mode_sizes,
            sequences,
            horizon,
            time_offset: 0.0,
            time_scale: 1.0,
            mapping,
        })
    }

    /// Groups raw `(ids, t)` rows into sequences and re-indexes each mode by
    /// descending event count (ties: first appearance). Sequences keep the
    /// order in which their keys first appear.
    pub fn from_raw_rows(rows: &[RawRow], k: usize, frame: TimeFrame) -> Result<Self> {
        if rows.is_empty() {
            return Err(NeshError::NoEvents);
        }
        let (offset, horizon) = match frame {
            TimeFrame::FromData => {
                let lo = rows.iter().map(|r| r.t).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r.t).fold(f64::NEG_INFINITY, f64::max);
                let span = hi - lo;
                (lo, if span > 0.0 { span } else { 1.0 })
            }
            TimeFrame::Fixed { offset, horizon } => (offset, horizon),
        };

        // per-mode counts and first appearance
        let mut stats: Vec<HashMap<u64, (usize, usize)>> = vec![HashMap::new(); k];
        for (pos, row) in rows.iter().enumerate() {
            for (m, &id) in row.ids.iter().enumerate() {
                stats[m].entry(id).or_insert((0, pos)).0 += 1;
            }
        }
        let mut raw_ids = Vec::with_capacity(k);
        for s in &stats {
            let mut nodes: Vec<(u64, usize, usize)> =
                s.iter().map(|(&id, &(c, f))| (id, c, f)).collect();
            nodes.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
            raw_ids.push(nodes.into_iter().map(|n| n.0).collect::<Vec<_>>());
        }
        let mapping = NodeMapping { raw_ids };
        let inverse = mapping.inverse();

        let mut order: HashMap<InteractionKey, usize> = HashMap::new();
        let mut sequences: Vec<EventSequence> = Vec::new();
        for row in rows {
            let key = InteractionKey(
                row.ids
                    .iter()
                    .enumerate()
                    .map(|(m, id)| inverse[m][id])
                    .collect(),
            );
            let t = row.t - offset;
            let idx = *order.entry(key.clone()).or_insert_with(|| {
                sequences.push(EventSequence {
                    key,
                    timestamps: Vec::new(),
                });
                sequences.len() - 1
            });
            sequences[idx].timestamps.push(t.clamp(0.0, horizon));
        }
        let mode_sizes = mapping.raw_ids.iter().map(Vec::len).collect();
        let mut ds = EventDataset::new(k, mode_sizes, sequences, horizon)?;
        ds.time_offset = offset;
        ds.mapping = mapping;
        Ok(ds)
    }

    pub fn num_sequences(&self) -> usize {
        self.sequences.len()
    }

    pub fn num_events(&self) -> usize {
        self.sequences.iter().map(EventSequence::count).sum()
    }

    /// `N / prod_k D_k`.
    pub fn sparsity(&self) -> f64 {
        let vol: f64 = self.mode_sizes.iter().map(|&d| d as f64).product();
        self.num_sequences() as f64 / vol
    }

    /// Maps a normalized time back to the raw clock.
    pub fn raw_time(&self, t: f64) -> f64 {
        t * self.time_scale + self.time_offset
    }

    fn with_sequences(&self, sequences: Vec<EventSequence>) -> Self {
        EventDataset {
            sequences,
            ..self.clone()
        }
    }
}

/// Whole-sequence random split. Both halves share K, mode sizes, horizon
/// and node mapping.
pub fn split_sequences(
    ds: &EventDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(EventDataset, EventDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(NeshError::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = ds.num_sequences();
    if n < 2 {
        return Err(NeshError::invalid("need at least two sequences to split"));
    }
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(NeshError::invalid(format!(
            "train fraction {train_fraction} leaves an empty split for {n} sequences"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(derive_seed(seed, domain::SPLIT), 0));
    let (train_idx, test_idx) = idx.split_at(n_train);
    let pick = |ids: &[usize]| {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.into_iter()
            .map(|i| ds.sequences[i].clone())
            .collect::<Vec<_>>()
    };
    Ok((
        ds.with_sequences(pick(train_idx)),
        ds.with_sequences(pick(test_idx)),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub k: usize,
    pub mode_sizes: Vec<usize>,
    pub num_sequences: usize,
    pub num_events: usize,
    pub horizon: f64,
    pub sparsity: f64,
}

pub fn dataset_stats(ds: &EventDataset) -> DatasetStats {
    DatasetStats {
        k: ds.k,
        mode_sizes: ds.mode_sizes.clone(),
        num_sequences: ds.num_sequences(),
        num_events: ds.num_events(),
        horizon: ds.horizon,
        sparsity: ds.sparsity(),
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sizes: Vec<String> = self.mode_sizes.iter().map(|d| d.to_string()).collect();
        writeln!(f, "K={}", self.k)?;
        writeln!(f, "mode_sizes={}", sizes.join(","))?;
        writeln!(f, "N={}", self.num_sequences)?;
        writeln!(f, "m={}", self.num_events)?;
        writeln!(f, "T={}", self.horizon)?;
        write!(f, "sparsity={}", self.sparsity)
    }
}
