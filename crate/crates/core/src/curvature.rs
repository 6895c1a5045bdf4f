//! Input loss curvature: estimators of `tr(∇²_x loss(x))`.
//!
//! * [`zo_curvature`] needs only loss evaluations. Each probe evaluates the
//!   loss at the four corners `x ± h v ± h u` and forms
//!   `D = [f(x+hv+hu) - f(x-hv+hu) - f(x+hv-hu) + f(x-hv-hu)] / (4h²)`,
//!   a central estimate of `uᵀ H v`.
//! * [`hutchinson_curvature`] differences input gradients along Rademacher
//!   probes.
//! * [`exact_trace_oracle`] sums the diagonal second differences; it is
//!   probe-free and only meant for small inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::{self, derive_seed, hash_str_u64};
use crate::error::{Error, Result};
use crate::nn::{Example, MlpParams};

/// Largest input dimension the brute-force oracle accepts.
pub const EXACT_ORACLE_MAX_DIM: usize = 64;

/// How `u` and `v` are drawn in the four-point estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    /// Independent `u`, `v`; each probe contributes `D · (uᵀv)`.
    Paired,
    /// `u = v`; each probe contributes `D ≈ vᵀ H v`.
    Coupled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ZeroOrder,
    /// Mean of `vᵀ(Hv)`, unbiased for `tr H`.
    HutchinsonTrace,
    /// Mean of `‖Hv‖²`, which estimates `tr(H²)`.
    HutchinsonSqProxy,
    ExactOracle,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::ZeroOrder => "zero_order",
            Variant::HutchinsonTrace => "hutchinson_trace",
            Variant::HutchinsonSqProxy => "hutchinson_sq_proxy",
            Variant::ExactOracle => "exact_oracle",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurvatureConfig {
    pub h: f64,
    pub n_iter: usize,
    pub probe_mode: ProbeMode,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for CurvatureConfig {
    fn default() -> Self {
        Self {
            h: 1e-3,
            n_iter: 10,
            probe_mode: ProbeMode::Coupled,
            variant: Variant::ZeroOrder,
            seed: 0,
        }
    }
}

impl CurvatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::invalid(format!("curvature step h must be > 0, got {}", self.h)));
        }
        if self.n_iter == 0 {
            return Err(Error::invalid("curvature n_iter must be >= 1"));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest::digest_of(self)
    }

    /// The same settings with a different probe seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Probe seed for one `(example, model)` evaluation, so that every call owns
/// an independent stream regardless of evaluation order.
pub fn probe_seed(cfg_seed: u64, example_id: usize, model_digest: &str) -> u64 {
    derive_seed(derive_seed(cfg_seed, example_id as u64), hash_str_u64(model_digest))
}

fn rademacher(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Four-point estimate of `uᵀ H v`.
pub fn four_point<F>(f: &F, x: &[f64], u: &[f64], v: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let at = |sv: f64, su: f64| -> Result<f64> {
        let p: Vec<f64> = x
            .iter()
            .zip(v)
            .zip(u)
            .map(|((xi, vi), ui)| xi + sv * h * vi + su * h * ui)
            .collect();
        finite(f(&p), "loss oracle output")
    };
    let num = at(1.0, 1.0)? - at(-1.0, 1.0)? - at(1.0, -1.0)? + at(-1.0, -1.0)?;
    Ok(num / (4.0 * h * h))
}

/// Zero-order curvature: mean of the per-probe four-point trace estimates.
pub fn zo_curvature<F>(loss_oracle: &F, x: &[f64], cfg: &CurvatureConfig) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    cfg.validate()?;
    if cfg.variant != Variant::ZeroOrder {
        return Err(Error::invalid(format!(
            "zo_curvature called with variant {}",
            cfg.variant.as_str()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut total = 0.0;
    for _ in 0..cfg.n_iter {
        let v = rademacher(&mut rng, x.len());
        let est = match cfg.probe_mode {
            ProbeMode::Coupled => four_point(loss_oracle, x, &v, &v, cfg.h)?,
            ProbeMode::Paired => {
                let u = rademacher(&mut rng, x.len());
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                four_point(loss_oracle, x, &u, &v, cfg.h)? * dot
            }
        };
        total += est;
    }
    Ok(total / cfg.n_iter as f64)
}

/// Hutchinson estimate from an input-gradient oracle, using the forward
/// difference `Hv ≈ (∇f(x + hv) − ∇f(x)) / h`.
pub fn hutchinson_from_grad<G>(grad_oracle: &G, x: &[f64], cfg: &CurvatureConfig) -> Result<f64>
where
    G: Fn(&[f64]) -> Vec<f64> + ?Sized,
{
    cfg.validate()?;
    let sq = match cfg.variant {
        Variant::HutchinsonTrace => false,
        Variant::HutchinsonSqProxy => true,
        other => {
            return Err(Error::invalid(format!(
                "hutchinson estimator called with variant {}",
                other.as_str()
            )))
        }
    };
    let g0 = grad_oracle(x);
    if g0.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("input gradient".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut total = 0.0;
    for _ in 0..cfg.n_iter {
        let v = rademacher(&mut rng, x.len());
        let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + cfg.h * b).collect();
        let g1 = grad_oracle(&xp);
        let hv = g1.iter().zip(&g0).map(|(a, b)| (a - b) / cfg.h);
        let est: f64 = if sq {
            hv.map(|t| t * t).sum()
        } else {
            hv.zip(&v).map(|(t, vi)| t * vi).sum()
        };
        total += finite(est, "input gradient")?;
    }
    Ok(total / cfg.n_iter as f64)
}

/// Hutchinson curvature of a model's loss at `example`.
pub fn hutchinson_curvature(params: &MlpParams, example: &Example, cfg: &CurvatureConfig) -> Result<f64> {
    if example.x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: example.x.len(),
        });
    }
    hutchinson_from_grad(&params.grad_oracle(example.y), &example.x, cfg)
}

/// `Σ_i [f(x + h e_i) − 2 f(x) + f(x − h e_i)] / h²`.
pub fn exact_trace_oracle<F>(loss_oracle: &F, x: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    if x.len() > EXACT_ORACLE_MAX_DIM {
        return Err(Error::invalid(format!(
            "exact trace oracle limited to d <= {EXACT_ORACLE_MAX_DIM}, got {}",
            x.len()
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("step h must be > 0, got {h}")));
    }
    let f0 = finite(loss_oracle(x), "loss oracle output")?;
    let mut p = x.to_vec();
    let mut total = 0.0;
    for i in 0..x.len() {
        p[i] = x[i] + h;
        let fp = finite(loss_oracle(&p), "loss oracle output")?;
        p[i] = x[i] - h;
        let fm = finite(loss_oracle(&p), "loss oracle output")?;
        p[i] = x[i];
        total += (fp - 2.0 * f0 + fm) / (h * h);
    }
    Ok(total)
}

/// Curvature of `params` at `example` with the estimator named by
/// `cfg.variant`. The probe stream is `cfg.seed` as given; callers scoring many
/// `(example, model)` pairs derive it with [`probe_seed`].
pub fn curvature_score(params: &MlpParams, example: &Example, cfg: &CurvatureConfig) -> Result<f64> {
    if example.x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: example.x.len(),
        });
    }
    let oracle = params.loss_oracle(example.y);
    match cfg.variant {
        Variant::ZeroOrder => zo_curvature(&oracle, &example.x, cfg),
        Variant::HutchinsonTrace | Variant::HutchinsonSqProxy => hutchinson_curvature(params, example, cfg),
        Variant::ExactOracle => {
            cfg.validate()?;
            exact_trace_oracle(&oracle, &example.x, cfg.h)
        }
    }
}

/// One `(example, model, kind)` observation, one JSON object per line in
/// `scores.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub example_id: usize,
    pub model_digest: String,
    pub kind: String,
    pub value: f64,
    pub config_digest: String,
}

/// Serializes records as JSON lines with 17-digit floats.
pub fn write_jsonl<T: Serialize>(path: &std::path::Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        out.extend(digest::to_json_sig17(r).map_err(|e| Error::json(path, e))?);
        out.push(b'\n');
    }
    crate::experiment::write_atomic(path, &out)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}
