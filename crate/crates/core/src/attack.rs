//! Membership scores. Every score is oriented so that larger means "more
//! likely a member".
//!
//! The curvature tests fit a Gaussian to the IN and OUT shadow observations of
//! each example and compare log densities at the target model's observation.
//! `curv_lr` evaluates both densities with the pooled standard deviation (the
//! equal-variance model); `curv_nll` uses each side's own fit.

use serde::{Deserialize, Serialize};

use crate::data::MembershipLedger;
use crate::error::{Error, Result};
use crate::nn::PROB_CLIP;

/// Lower bound on fitted standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Per-example Gaussian fits of the IN and OUT score distributions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPair {
    pub mu_in: f64,
    pub sigma_in: f64,
    pub mu_out: f64,
    pub sigma_out: f64,
    pub n_in: usize,
    pub n_out: usize,
}

impl GaussianPair {
    /// Pooled two-sample standard deviation; returns the common value
    /// unchanged when both sides already agree.
    pub fn pooled_sigma(&self) -> f64 {
        if self.sigma_in == self.sigma_out {
            return self.sigma_in;
        }
        let a = (self.n_in.saturating_sub(1)) as f64;
        let b = (self.n_out.saturating_sub(1)) as f64;
        if a + b == 0.0 {
            return self.sigma_in.max(self.sigma_out);
        }
        ((a * self.sigma_in.powi(2) + b * self.sigma_out.powi(2)) / (a + b))
            .sqrt()
            .max(SIGMA_FLOOR)
    }

    /// The same pair with both standard deviations replaced by `sigma`.
    pub fn with_shared_sigma(&self, sigma: f64) -> Self {
        Self {
            sigma_in: sigma,
            sigma_out: sigma,
            ..*self
        }
    }

    /// Swaps the IN and OUT sides.
    pub fn swapped(&self) -> Self {
        Self {
            mu_in: self.mu_out,
            sigma_in: self.sigma_out,
            mu_out: self.mu_in,
            sigma_out: self.sigma_in,
            n_in: self.n_out,
            n_out: self.n_in,
        }
    }
}

/// Dense `[n_models x m]` matrix of one statistic over a shadow ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowScores {
    pub values: Vec<Vec<f64>>,
}

impl ShadowScores {
    pub fn n_models(&self) -> usize {
        self.values.len()
    }

    /// IN and OUT observations of `example` according to `ledger`.
    pub fn split(&self, ledger: &MembershipLedger, example: usize) -> (Vec<f64>, Vec<f64>) {
        let mut ins = Vec::new();
        let mut outs = Vec::new();
        for (j, row) in self.values.iter().enumerate() {
            if ledger.is_in(j, example) {
                ins.push(row[example]);
            } else {
                outs.push(row[example]);
            }
        }
        (ins, outs)
    }

    /// All observations of `example` across models.
    pub fn column(&self, example: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[example]).collect()
    }
}

/// Sample mean and unbiased sample standard deviation (floored).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt().max(SIGMA_FLOOR))
}

/// Fits one [`GaussianPair`] from raw IN/OUT observations.
pub fn fit_pair(ins: &[f64], outs: &[f64]) -> Option<GaussianPair> {
    if ins.len() < 2 || outs.len() < 2 {
        return None;
    }
    let (mu_in, sigma_in) = mean_std(ins);
    let (mu_out, sigma_out) = mean_std(outs);
    Some(GaussianPair {
        mu_in,
        sigma_in,
        mu_out,
        sigma_out,
        n_in: ins.len(),
        n_out: outs.len(),
    })
}

/// Fits a pair for every example. Fails listing every example that has fewer
/// than two IN or two OUT observations.
pub fn fit_gaussian_pairs(scores: &ShadowScores, ledger: &MembershipLedger) -> Result<Vec<GaussianPair>> {
    if scores.n_models() != ledger.n_models() {
        return Err(Error::DimensionMismatch {
            expected: ledger.n_models(),
            got: scores.n_models(),
        });
    }
    let m = ledger.n_examples();
    let mut pairs = Vec::with_capacity(m);
    let mut missing = Vec::new();
    for i in 0..m {
        let (ins, outs) = scores.split(ledger, i);
        match fit_pair(&ins, &outs) {
            Some(p) => pairs.push(p),
            None => missing.push(i),
        }
    }
    if missing.is_empty() {
        Ok(pairs)
    } else {
        Err(Error::InsufficientObservations { example_ids: missing })
    }
}

/// `ln N(x | mu, sigma²)`.
pub fn gaussian_log_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn log_density_ratio(target: f64, mu_in: f64, s_in: f64, mu_out: f64, s_out: f64) -> f64 {
    gaussian_log_pdf(target, mu_in, s_in) - gaussian_log_pdf(target, mu_out, s_out)
}

/// Likelihood-ratio test as a log ratio, under the shared pooled σ.
pub fn curv_lr_score(target: f64, pair: &GaussianPair) -> f64 {
    let s = pair.pooled_sigma();
    log_density_ratio(target, pair.mu_in, s, pair.mu_out, s)
}

/// `ln N(target | in) − ln N(target | out)` with per-side σ. This is the
/// negation of `log P(out) − log P(in)`, so that members score high.
pub fn curv_nll_score(target: f64, pair: &GaussianPair) -> f64 {
    log_density_ratio(target, pair.mu_in, pair.sigma_in, pair.mu_out, pair.sigma_out)
}

/// Attack methods understood by the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CurvLr,
    CurvNll,
    Yeom,
    Lira,
    WatsonOffline,
    Sablayrolles,
    SongMentr,
    YeQuantile,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::CurvLr,
        Method::CurvNll,
        Method::Yeom,
        Method::Lira,
        Method::WatsonOffline,
        Method::Sablayrolles,
        Method::SongMentr,
        Method::YeQuantile,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::CurvLr => "curv_lr",
            Method::CurvNll => "curv_nll",
            Method::Yeom => "yeom",
            Method::Lira => "lira",
            Method::WatsonOffline => "watson_offline",
            Method::Sablayrolles => "sablayrolles",
            Method::SongMentr => "song_mentr",
            Method::YeQuantile => "ye_quantile",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A membership score for one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackScore {
    pub example_id: usize,
    pub method: Method,
    pub value: f64,
    pub is_member_truth: bool,
}

/// Baseline methods computed from model outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    Yeom,
    Lira,
    WatsonOffline,
    Sablayrolles,
    SongMentr,
    YeQuantile,
}

/// Inputs available to baseline scores for one example. Fields a baseline
/// does not need may be left empty.
#[derive(Clone, Debug, Default)]
pub struct BaselineInputs<'a> {
    /// Target model loss at the example.
    pub loss: f64,
    /// Target model softmax output.
    pub probs: &'a [f64],
    pub label: usize,
    /// Target model scaled logit.
    pub logit: f64,
    /// Shadow scaled logits split by membership.
    pub logit_in: &'a [f64],
    pub logit_out: &'a [f64],
    /// Shadow losses split by membership.
    pub loss_in: &'a [f64],
    pub loss_out: &'a [f64],
}

/// Modified prediction entropy
/// `−(1−p_y) ln p_y − Σ_{i≠y} p_i ln(1−p_i)` on clamped probabilities.
pub fn modified_entropy(probs: &[f64], label: usize) -> f64 {
    let c = |p: f64| p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let p = c(p);
            if i == label {
                -(1.0 - p) * p.ln()
            } else {
                -p * (1.0 - p).ln()
            }
        })
        .sum()
}

/// Fraction of `out` strictly above `loss`, ties counted half: how deep the
/// target loss sits in the left tail of the OUT loss distribution.
pub fn left_tail_rank(loss: f64, out: &[f64]) -> f64 {
    let above = out.iter().filter(|&&o| o > loss).count() as f64;
    let ties = out.iter().filter(|&&o| o == loss).count() as f64;
    (above + 0.5 * ties) / out.len() as f64
}

pub fn baseline_score(kind: Baseline, inputs: &BaselineInputs<'_>) -> Result<f64> {
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    match kind {
        Baseline::Yeom => Ok(-inputs.loss),
        Baseline::Lira => {
            let pair = fit_pair(inputs.logit_in, inputs.logit_out).ok_or(Error::MissingShadowStats("lira"))?;
            Ok(curv_nll_score(inputs.logit, &pair))
        }
        Baseline::WatsonOffline => {
            if inputs.loss_out.is_empty() {
                return Err(Error::MissingShadowStats("watson_offline"));
            }
            Ok(-inputs.loss + mean(inputs.loss_out))
        }
        Baseline::Sablayrolles => {
            if inputs.loss_in.is_empty() && inputs.loss_out.is_empty() {
                return Err(Error::MissingShadowStats("sablayrolles"));
            }
            let all: Vec<f64> = inputs.loss_in.iter().chain(inputs.loss_out).copied().collect();
            Ok(-(inputs.loss - mean(&all)))
        }
        Baseline::SongMentr => {
            if inputs.label >= inputs.probs.len() {
                return Err(Error::invalid("song_mentr needs the softmax output and a valid label"));
            }
            Ok(-modified_entropy(inputs.probs, inputs.label))
        }
        Baseline::YeQuantile => {
            if inputs.loss_out.is_empty() {
                return Err(Error::MissingShadowStats("ye_quantile"));
            }
            Ok(left_tail_rank(inputs.loss, inputs.loss_out))
        }
    }
}

/// Mean of a statistic over input transforms; fit Gaussians on the result.
pub fn aggregate_augmented(scores_per_transform: &[f64]) -> Result<f64> {
    if scores_per_transform.is_empty() {
        return Err(Error::invalid("no transforms to aggregate"));
    }
    Ok(scores_per_transform.iter().sum::<f64>() / scores_per_transform.len() as f64)
}
