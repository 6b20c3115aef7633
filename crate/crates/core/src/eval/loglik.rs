use std::io::Write;

use crate::data::{EventDataset, EventSequence};
use crate::error::{NeshError, Result};
use crate::inference::{draw_noise, evaluate, Checkpoint, McSettings};
use crate::rng::{derive_seed, domain, stream};

/// Name of the reference scorer in reports.
pub const HOMOGENEOUS_BASELINE: &str = "homogeneous-mle";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceScore {
    /// Position of the sequence in the test dataset.
    pub index: usize,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub total: f64,
    pub mean: f64,
    pub per_sequence: Vec<SequenceScore>,
    /// Sequences with a node that never occurs in training.
    pub dropped: usize,
    pub samples: usize,
    pub time_samples: usize,
    pub seed: u64,
}

/// `-lambda T + m log lambda` at the MLE `lambda = m / T`.
pub fn homogeneous_loglik(count: usize, horizon: f64) -> f64 {
    if count == 0 {
        return 0.0;
    }
    let m = count as f64;
    -m + m * (m / horizon).ln()
}

/// Re-expresses a test sequence in the checkpoint's node ids and clock.
/// `None` if any node is unknown to, or unused in, training.
fn align(
    ck: &Checkpoint,
    inverse: &[std::collections::HashMap<u64, usize>],
    test: &EventDataset,
    seq: &EventSequence,
) -> Option<EventSequence> {
    let mut key = Vec::with_capacity(seq.key.len());
    for (k, &j) in seq.key.0.iter().enumerate() {
        let raw = test.mapping.raw_id(k, j);
        let internal = *inverse.get(k)?.get(&raw)?;
        if !ck.is_active(k, internal) {
            return None;
        }
        key.push(internal);
    }
    let timestamps = seq
        .timestamps
        .iter()
        .map(|&t| test.raw_time(t) - ck.time_offset)
        .collect();
    Some(EventSequence {
        key: crate::data::InteractionKey(key),
        timestamps,
    })
}

/// Variational expectation `E_q[log p(s_i | f)]` per test sequence.
///
/// Test times are mapped onto the training clock; events outside the
/// training window `[0, T]` are an error. Sequences touching nodes that
/// never occur in training are dropped and counted.
pub fn test_loglik(
    ck: &Checkpoint,
    test: &EventDataset,
    mc: &McSettings,
    seed: u64,
) -> Result<EvalReport> {
    if mc.samples == 0 || mc.time_samples == 0 {
        return Err(NeshError::invalid("need at least one sample of each kind"));
    }
    if test.k != ck.k() {
        return Err(NeshError::invalid(format!(
            "test data has {} modes, model has {}",
            test.k,
            ck.k()
        )));
    }
    let horizon = ck.model.horizon;
    let tol = 1e-9 * horizon;
    let inverse = ck.mapping.inverse();
    let mut kept = Vec::new();
    let mut index = Vec::new();
    for (i, seq) in test.sequences.iter().enumerate() {
        if let Some(mut s) = align(ck, &inverse, test, seq) {
            if let Some(t) = s
                .timestamps
                .iter()
                .find(|&&t| !(t >= -tol && t <= horizon + tol))
            {
                return Err(NeshError::invalid(format!(
                    "test sequence {i} has an event at model time {t}, outside [0, {horizon}]"
                )));
            }
            s.timestamps
                .iter_mut()
                .for_each(|t| *t = t.clamp(0.0, horizon));
            kept.push(s);
            index.push(i);
        }
    }
    let dropped = test.num_sequences() - kept.len();
    if kept.is_empty() {
        return Err(NeshError::invalid(format!(
            "all {dropped} test sequences reference nodes unseen in training"
        )));
    }
    let base = derive_seed(seed, domain::EVAL);
    let noise: Vec<_> = kept
        .iter()
        .zip(&index)
        .flat_map(|(s, &i)| draw_noise(&[s], horizon, mc, &mut stream(base, i as u64)))
        .collect();
    let refs: Vec<&EventSequence> = kept.iter().collect();
    let ev = evaluate(&ck.model, &refs, &noise, mc, 1.0, false)?;
    let per_sequence: Vec<SequenceScore> = index
        .iter()
        .zip(&ev.per_sequence)
        .map(|(&index, &(_, integral, event))| SequenceScore {
            index,
            loglik: integral + event,
        })
        .collect();
    let total: f64 = per_sequence.iter().map(|s| s.loglik).sum();
    Ok(EvalReport {
        total,
        mean: total / per_sequence.len() as f64,
        per_sequence,
        dropped,
        samples: mc.samples,
        time_samples: mc.time_samples,
        seed,
    })
}

/// `sequence_index,loglik` rows followed by a `# ...` summary line.
pub fn write_report_csv<W: Write>(mut w: W, r: &EvalReport) -> std::io::Result<()> {
    writeln!(w, "sequence_index,loglik")?;
    for s in &r.per_sequence {
        writeln!(w, "{},{:.16e}", s.index, s.loglik)?;
    }
    writeln!(
        w,
        "# total={:.16e} mean={:.16e} scored={} dropped={} samples={} time_samples={} seed={}",
        r.total,
        r.mean,
        r.per_sequence.len(),
        r.dropped,
        r.samples,
        r.time_samples,
        r.seed
    )?;
    w.flush()
}
