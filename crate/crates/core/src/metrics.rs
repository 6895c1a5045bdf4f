//! ROC staircase, AUROC, balanced accuracy and TPR at a fixed FPR.
//!
//! Scores are member-oriented: a threshold `t` predicts "member" for every
//! score `>= t`. Tied scores move together, so a tie between a member and a
//! nonmember produces one diagonal segment.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One operating point with its exact confusion counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub fp: usize,
    pub tp: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl RocCurve {
    fn point(&self, tp: usize, fp: usize) -> RocPoint {
        RocPoint {
            fpr: fp as f64 / self.n_neg as f64,
            tpr: tp as f64 / self.n_pos as f64,
            fp,
            tp,
        }
    }

    /// `fpr,tpr` rows with a header, for plotting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fpr,tpr\n");
        for p in &self.points {
            s.push_str(&format!("{:.17e},{:.17e}\n", p.fpr, p.tpr));
        }
        s
    }
}

/// Descending-threshold sweep over distinct scores.
pub fn roc_curve(member_scores: &[f64], nonmember_scores: &[f64]) -> Result<RocCurve> {
    if member_scores.is_empty() || nonmember_scores.is_empty() {
        return Err(Error::invalid("ROC needs at least one member and one nonmember score"));
    }
    if member_scores.iter().chain(nonmember_scores).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("attack score".into()));
    }
    let mut all: Vec<(f64, bool)> = member_scores
        .iter()
        .map(|&s| (s, true))
        .chain(nonmember_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut curve = RocCurve {
        points: Vec::new(),
        n_pos: member_scores.len(),
        n_neg: nonmember_scores.len(),
    };
    curve.points.push(curve.point(0, 0));
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        // -0.0 and 0.0 compare equal and belong to one threshold
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.points.push(curve.point(tp, fp));
    }
    Ok(curve)
}

/// Trapezoidal area; equals `P(member > nonmember) + ½ P(tie)` exactly.
pub fn auroc(curve: &RocCurve) -> f64 {
    // twice the area in units of (1/n_neg) x (1/n_pos)
    let twice: u128 = curve
        .points
        .windows(2)
        .map(|w| (w[1].fp - w[0].fp) as u128 * (w[0].tp + w[1].tp) as u128)
        .sum();
    twice as f64 / (2 * curve.n_pos as u128 * curve.n_neg as u128) as f64
}

/// `max (TPR + 1 − FPR) / 2` over the curve's operating points.
pub fn balanced_accuracy(curve: &RocCurve) -> f64 {
    curve
        .points
        .iter()
        .map(|p| (p.tpr + (1.0 - p.fpr)) / 2.0)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest TPR among operating points with `FPR <= fpr_target`.
pub fn tpr_at_fpr(curve: &RocCurve, fpr_target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&fpr_target) {
        return Err(Error::invalid(format!("fpr target {fpr_target} not in [0, 1]")));
    }
    Ok(curve
        .points
        .iter()
        .filter(|p| p.fpr <= fpr_target)
        .map(|p| p.tpr)
        .fold(0.0, f64::max))
}

/// Mean and standard deviation of AUROC under random relabelling of the
/// pooled scores, keeping the member count fixed.
pub fn permutation_null(
    member_scores: &[f64],
    nonmember_scores: &[f64],
    n_perm: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_perm < 2 {
        return Err(Error::invalid("permutation null needs at least 2 permutations"));
    }
    let mut pooled: Vec<f64> = member_scores.iter().chain(nonmember_scores).copied().collect();
    let p = member_scores.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aucs = Vec::with_capacity(n_perm);
    for _ in 0..n_perm {
        pooled.shuffle(&mut rng);
        let (a, b) = pooled.split_at(p);
        aucs.push(auroc(&roc_curve(a, b)?));
    }
    let mean = aucs.iter().sum::<f64>() / n_perm as f64;
    let var = aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n_perm - 1) as f64;
    Ok((mean, var.sqrt()))
}

/// Per-method metrics, serialized into `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub auroc: f64,
    pub bal_acc: f64,
    pub tpr_at: BTreeMap<String, f64>,
}

/// Default FPR targets, keyed `1e-1`, `1e-2`, `1e-3`.
pub const DEFAULT_FPR_TARGETS: [f64; 3] = [1e-1, 1e-2, 1e-3];

/// Short scientific key for an FPR target, e.g. `0.001 -> "1e-3"`.
pub fn fpr_key(target: f64) -> String {
    let s = format!("{target:e}");
    s.replace("e-0", "e-")
}

pub fn metric_report(method: &str, curve: &RocCurve, fpr_targets: &[f64]) -> Result<MetricReport> {
    let mut tpr_at = BTreeMap::new();
    for &t in fpr_targets {
        tpr_at.insert(fpr_key(t), tpr_at_fpr(curve, t)?);
    }
    Ok(MetricReport {
        method: method.to_string(),
        auroc: auroc(curve),
        bal_acc: balanced_accuracy(curve),
        tpr_at,
    })
}

pub fn write_roc_csv(curve: &RocCurve, path: &Path) -> Result<()> {
    crate::experiment::write_atomic(path, curve.to_csv().as_bytes())
}
