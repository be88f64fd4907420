//! Scoring and equal error rate.
//!
//! Spoof is the positive class and a higher score means "more likely spoof".
//! At threshold `t` a sample is flagged as spoof iff `score ≥ t`, giving
//!
//! * false acceptance `FAR(t) = #{bonafide: score ≥ t} / #bonafide`,
//! * false rejection `FRR(t) = #{spoof: score < t} / #spoof`.
//!
//! The operating points are taken at every distinct score, in increasing
//! order, followed by a terminal point `t = +∞` with `(FAR, FRR) = (0, 1)`.
//! `FRR − FAR` starts at `−1` and ends at `+1`; the EER is read off the first
//! pair of adjacent points where it becomes non-negative, by linear
//! interpolation (an exact zero is returned as is). The reported threshold is
//! interpolated the same way; when the crossing lies on the segment to the
//! terminal point the largest score is reported.

use std::path::Path;

use rayon::prelude::*;

use crate::data::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::prototypes::Label;
use crate::training::{forward_embed, logit_against, sigmoid, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRecord {
    pub index: usize,
    /// Probability of spoof.
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    /// A fraction in `[0, 1]`.
    pub eer: f64,
    pub threshold: f64,
}

/// `sigmoid(classifier_logit(forward_embed(x)))` for every original sample,
/// in dataset order. Augmented views are ignored.
pub fn score_dataset(params: &ModelParams, ds: &EmbeddingDataset) -> Result<Vec<ScoreRecord>> {
    if ds.d_in != params.d_in() {
        return Err(Error::InvalidInput(format!(
            "dataset dimension {} != model input dimension {}",
            ds.d_in,
            params.d_in()
        )));
    }
    ds.validate()?;
    let protos = params.bank.materialize().data;
    (0..ds.n())
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = ds.feature(i).iter().map(|v| f64::from(*v)).collect();
            let z = forward_embed(&x, params)?;
            let score = sigmoid(logit_against(&z, &protos, params));
            if !score.is_finite() {
                return Err(Error::NumericalInstability(format!(
                    "score of sample {i} is not finite"
                )));
            }
            Ok(ScoreRecord {
                index: i,
                score,
                label: ds.labels[i],
            })
        })
        .collect()
}

pub fn compute_eer(records: &[ScoreRecord]) -> Result<EerResult> {
    if let Some(r) = records.iter().find(|r| !r.score.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "score of record {} is not finite",
            r.index
        )));
    }
    let nb = records
        .iter()
        .filter(|r| r.label == Label::Bonafide)
        .count();
    let ns = records.len() - nb;
    if nb == 0 || ns == 0 {
        return Err(Error::InvalidInput(
            "EER needs both bonafide and spoof records".into(),
        ));
    }
    let mut sorted: Vec<(f64, Label)> = records.iter().map(|r| (r.score, r.label)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Walk distinct scores upward; before reaching group g, everything below
    // it is "< t".
    let mut below_b = 0usize;
    let mut below_s = 0usize;
    let mut prev: Option<(f64, f64, f64)> = None; // (t, far, frr)
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        let far = (nb - below_b) as f64 / nb as f64;
        let frr = below_s as f64 / ns as f64;
        if let Some(r) = crossing(prev, (t, far, frr)) {
            return Ok(r);
        }
        prev = Some((t, far, frr));
        while i < sorted.len() && sorted[i].0 == t {
            match sorted[i].1 {
                Label::Bonafide => below_b += 1,
                Label::Spoof => below_s += 1,
            }
            i += 1;
        }
    }
    let (t_max, far, frr) = prev.expect("non-empty");
    let diff_a = frr - far;
    let lambda = -diff_a / (1.0 - diff_a);
    Ok(EerResult {
        eer: far + lambda * (0.0 - far),
        threshold: t_max,
    })
}

/// Crossing on the segment from `prev` to `cur`, if `FRR − FAR` reaches zero there.
fn crossing(prev: Option<(f64, f64, f64)>, cur: (f64, f64, f64)) -> Option<EerResult> {
    let (t_b, far_b, frr_b) = cur;
    let diff_b = frr_b - far_b;
    if diff_b == 0.0 {
        return Some(EerResult {
            eer: far_b,
            threshold: t_b,
        });
    }
    let (t_a, far_a, frr_a) = prev?;
    let diff_a = frr_a - far_a;
    if diff_a < 0.0 && diff_b > 0.0 {
        let lambda = -diff_a / (diff_b - diff_a);
        return Some(EerResult {
            eer: far_a + lambda * (far_b - far_a),
            threshold: t_a + lambda * (t_b - t_a),
        });
    }
    None
}

/// CSV with header `index,score,label`; scores carry nine significant digits.
pub fn scores_to_csv(records: &[ScoreRecord]) -> String {
    let mut out = String::from("index,score,label\n");
    for r in records {
        out.push_str(&format!(
            "{},{:.8e},{}\n",
            r.index,
            r.score,
            r.label.as_u8()
        ));
    }
    out
}

pub fn write_scores_csv(records: &[ScoreRecord], path: &Path) -> Result<()> {
    write_atomic(path, scores_to_csv(records).as_bytes())
}

pub fn parse_scores_csv(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some("index,score,label") {
        return Err(Error::Format("missing score file header".into()));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let bad = || Error::Format(format!("malformed score row {}: {line:?}", n + 2));
            let mut parts = line.split(',');
            let (Some(i), Some(s), Some(l), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad());
            };
            let label = l
                .parse::<u8>()
                .ok()
                .and_then(Label::from_u8)
                .ok_or_else(bad)?;
            Ok(ScoreRecord {
                index: i.parse().map_err(|_| bad())?,
                score: s.parse().map_err(|_| bad())?,
                label,
            })
        })
        .collect()
}
