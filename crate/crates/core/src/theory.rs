//! KL divergences between IN/OUT score distributions and the bounds that
//! relate them to the privacy parameter `ε` and the training set size `m`.
//!
//! For an `ε`-DP learner with loss bounded by `L`:
//!
//! * output-probability scores: `KL <= ε`;
//! * curvature scores: `KL <= [L m (1 − e^{−ε}) + c]² / (2σ²)` with
//!   `c = (4m − 1)γ + 2(m − 1)Δ + ρ_term + L`;
//! * mean OUT curvature: `E[Curv] <= L (m (1 − e^{−ε}) + 1) + c₁`,
//!   `c₁ = (4m − 1)γ + 2(m − 1)Δ + ρ_term`;
//! * curvature scores beat probability scores once
//!   `m > (√(2σ²ε) − c) / (L (1 − e^{−ε}))`.

use serde::{Deserialize, Serialize};

use crate::attack::GaussianPair;
use crate::error::{Error, Result};
use crate::nn::loss_ceiling;

/// Constants of the bounds. `gamma`, `delta_bias` and `rho_term` are rarely
/// measurable and default to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundInputs {
    pub epsilon: f64,
    pub m: u64,
    /// Loss bound `L`.
    pub loss_bound: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub delta_bias: f64,
    /// `(ρ/6) E‖α‖³`.
    pub rho_term: f64,
    /// Confidence `δ`; the bounds hold with probability at least `1 − δ`.
    pub delta_conf: f64,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            m: 2,
            loss_bound: loss_ceiling(),
            sigma: 1.0,
            gamma: 0.0,
            delta_bias: 0.0,
            rho_term: 0.0,
            delta_conf: 0.05,
        }
    }
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64, name: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        nonneg(self.epsilon, "epsilon")?;
        nonneg(self.gamma, "gamma")?;
        nonneg(self.delta_bias, "delta_bias")?;
        nonneg(self.rho_term, "rho_term")?;
        if self.m < 2 {
            return Err(Error::invalid(format!("m must be >= 2, got {}", self.m)));
        }
        if !(self.loss_bound > 0.0 && self.loss_bound.is_finite()) {
            return Err(Error::invalid("loss bound L must be > 0"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma must be > 0"));
        }
        if !(self.delta_conf > 0.0 && self.delta_conf < 1.0) {
            return Err(Error::invalid("delta_conf must be in (0, 1)"));
        }
        Ok(())
    }

    /// True when none of γ, Δ, ρ_term were supplied, i.e. the bounds are
    /// evaluated with optimistic constants.
    pub fn constants_unknown(&self) -> bool {
        self.gamma == 0.0 && self.delta_bias == 0.0 && self.rho_term == 0.0
    }

    /// The stability term `β = L (1 − e^{−ε})`.
    pub fn beta(&self) -> f64 {
        self.loss_bound * (-(-self.epsilon).exp_m1())
    }
}

/// `KL(N(μ1, s1²) || N(μ2, s2²))`.
pub fn kl_gaussian(mu1: f64, s1: f64, mu2: f64, s2: f64) -> Result<f64> {
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(Error::invalid(format!(
            "standard deviations must be > 0, got {s1}, {s2}"
        )));
    }
    let kl = (s2 / s1).ln() + (s1 * s1 + (mu1 - mu2).powi(2)) / (2.0 * s2 * s2) - 0.5;
    Ok(kl.max(0.0))
}

/// Probability-score bound: the KL divergence is at most `ε`.
pub fn theorem1_bound(epsilon: f64) -> f64 {
    epsilon
}

/// `c₁ = (4m − 1)γ + 2(m − 1)Δ + ρ_term`, for real-valued `m`.
pub fn lemma_constant(b: &BoundInputs, m: f64) -> f64 {
    (4.0 * m - 1.0) * b.gamma + 2.0 * (m - 1.0) * b.delta_bias + b.rho_term
}

/// `c = c₁ + L`.
pub fn theorem2_constant(b: &BoundInputs, m: f64) -> f64 {
    lemma_constant(b, m) + b.loss_bound
}

/// Curvature KL bound at a real-valued dataset size.
pub fn theorem2_bound_at(b: &BoundInputs, m: f64) -> f64 {
    let c = theorem2_constant(b, m);
    let num = b.loss_bound * m * (-(-b.epsilon).exp_m1()) + c;
    num * num / (2.0 * b.sigma * b.sigma)
}

/// `[L m (1 − e^{−ε}) + c]² / (2σ²)`.
pub fn theorem2_bound(b: &BoundInputs) -> Result<f64> {
    b.validate()?;
    Ok(theorem2_bound_at(b, b.m as f64))
}

/// `L (m (1 − e^{−ε}) + 1) + c₁`.
pub fn lemma_curv_upper(b: &BoundInputs) -> Result<f64> {
    b.validate()?;
    let m = b.m as f64;
    Ok(b.loss_bound * (m * (-(-b.epsilon).exp_m1()) + 1.0) + lemma_constant(b, m))
}

/// `(√(2σ²ε) − c) / (L (1 − e^{−ε}))`, returned raw: values below 2 mean the
/// condition holds for every admissible `m`.
pub fn theorem3_crossover_m(b: &BoundInputs, c: f64) -> Result<f64> {
    if !(b.epsilon > 0.0 && b.epsilon.is_finite()) {
        return Err(Error::invalid("crossover size is undefined for epsilon = 0"));
    }
    if !(b.loss_bound > 0.0 && b.sigma > 0.0) {
        return Err(Error::invalid("L and sigma must be > 0"));
    }
    Ok(((2.0 * b.sigma * b.sigma * b.epsilon).sqrt() - c) / (b.loss_bound * (-(-b.epsilon).exp_m1())))
}

/// All bounds for one set of inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub beta: f64,
    pub theorem1_bound: f64,
    pub theorem2_c: f64,
    pub theorem2_bound: f64,
    pub lemma_c1: f64,
    pub lemma_curv_upper: f64,
    /// Absent when `ε = 0`.
    pub theorem3_crossover_m: Option<f64>,
    pub constants_unknown: bool,
    pub caveats: Vec<String>,
}

pub fn bound_report(b: &BoundInputs) -> Result<BoundReport> {
    b.validate()?;
    let m = b.m as f64;
    let c = theorem2_constant(b, m);
    let mut caveats = vec![
        "the curvature bound assumes nonnegative mean curvature; zero-order estimates can be negative".to_string(),
    ];
    if b.constants_unknown() {
        caveats.push("gamma, delta_bias and rho_term are zero: optimistic-constant evaluation".to_string());
    }
    Ok(BoundReport {
        inputs: b.clone(),
        beta: b.beta(),
        theorem1_bound: theorem1_bound(b.epsilon),
        theorem2_c: c,
        theorem2_bound: theorem2_bound(b)?,
        lemma_c1: lemma_constant(b, m),
        lemma_curv_upper: lemma_curv_upper(b)?,
        theorem3_crossover_m: if b.epsilon > 0.0 {
            Some(theorem3_crossover_m(b, c)?)
        } else {
            None
        },
        constants_unknown: b.constants_unknown(),
        caveats,
    })
}

/// Result of fitting `y = s_f (L_f (1 − e^{−ε}) + c_f)²`.
///
/// The model is invariant under `(s, L, c) -> (s/k², kL, kc)`; the fit fixes
/// that freedom with `L_f² + c_f² = 1` and `L_f >= 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub s_f: f64,
    pub l_f: f64,
    pub c_f: f64,
    /// Root-mean-square misfit over the input points.
    pub residual: f64,
    pub converged: bool,
    /// False when the data cannot pin down the curve shape (constant `y`).
    pub identifiable: bool,
}

impl FitResult {
    pub fn predict(&self, epsilon: f64) -> f64 {
        let g = -(-epsilon).exp_m1();
        self.s_f * (self.l_f * g + self.c_f).powi(2)
    }
}

/// Nelder-Mead minimizer state.
#[derive(Clone, Debug)]
pub struct NelderMead {
    pub max_iter: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// ... and the simplex diameter falls below this.
    pub x_tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            f_tol: 1e-15,
            x_tol: 1e-12,
        }
    }
}

impl NelderMead {
    /// Minimizes `f` from `x0` with initial edge length `step`. Returns the
    /// best point, its value, and whether the tolerances were met.
    pub fn minimize<F: Fn(&[f64]) -> f64>(&self, f: F, x0: &[f64], step: f64) -> (Vec<f64>, f64, bool) {
        let n = x0.len();
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((x0.to_vec(), f(x0)));
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += step;
            let fx = f(&x);
            simplex.push((x, fx));
        }
        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        for _ in 0..self.max_iter {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[n].1 - simplex[0].1;
            let diam = simplex[1..]
                .iter()
                .map(|(x, _)| {
                    x.iter()
                        .zip(&simplex[0].0)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if spread.abs() <= self.f_tol && diam <= self.x_tol {
                let (x, fx) = simplex.swap_remove(0);
                return (x, fx, true);
            }
            let centroid: Vec<f64> = (0..n)
                .map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n].0)
                    .map(|(c, w)| c + t * (w - c))
                    .collect()
            };
            let xr = along(-alpha);
            let fr = f(&xr);
            if fr < simplex[0].1 {
                let xe = along(-gamma);
                let fe = f(&xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[n].1 {
                    let xc = along(-rho);
                    let fc = f(&xc);
                    (xc, fc)
                } else {
                    let xc = along(rho);
                    let fc = f(&xc);
                    (xc, fc)
                };
                if fc < fr.min(simplex[n].1) {
                    simplex[n] = (xc, fc);
                } else {
                    let best = simplex[0].0.clone();
                    for (x, fx) in simplex.iter_mut().skip(1) {
                        for (xi, bi) in x.iter_mut().zip(&best) {
                            *xi = bi + sigma * (*xi - bi);
                        }
                        *fx = f(x);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, fx) = simplex.swap_remove(0);
        (x, fx, false)
    }
}

/// Number of starting angles in the multi-start grid of [`fit_bound_curve`].
pub const FIT_GRID_STARTS: usize = 24;

/// Least-squares fit of `y = s_f (L_f (1 − e^{−ε}) + c_f)²`.
///
/// With `(L_f, c_f) = (cos θ, sin θ)` the optimal `s_f` for fixed `θ` is
/// closed form, so the simplex search runs over `θ` alone, started from
/// `FIT_GRID_STARTS` evenly spaced angles in `[−π/2, π/2)`. Points are
/// sorted by `ε` first, so the result does not depend on input order.
pub fn fit_bound_curve(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(Error::invalid(format!("need at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|(e, y)| !e.is_finite() || !y.is_finite() || *e < 0.0) {
        return Err(Error::invalid("points must be finite with epsilon >= 0"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if pts.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid("epsilon values must be distinct"));
    }
    let g: Vec<f64> = pts.iter().map(|(e, _)| -(-e).exp_m1()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let n = y.len() as f64;

    let profile = |theta: f64| -> (f64, f64) {
        let (l, c) = (theta.cos(), theta.sin());
        let q: Vec<f64> = g.iter().map(|gi| (l * gi + c).powi(2)).collect();
        let qq: f64 = q.iter().map(|v| v * v).sum();
        let s = if qq > 0.0 {
            q.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / qq
        } else {
            0.0
        };
        let sse: f64 = q.iter().zip(&y).map(|(qi, yi)| (s * qi - yi).powi(2)).sum();
        (s, sse)
    };

    let nm = NelderMead::default();
    let mut best: Option<(f64, f64, bool)> = None;
    for k in 0..FIT_GRID_STARTS {
        let start = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * k as f64 / FIT_GRID_STARTS as f64;
        let (x, fx, ok) = nm.minimize(
            |t| profile(t[0]).1,
            &[start],
            std::f64::consts::PI / (2.0 * FIT_GRID_STARTS as f64),
        );
        if best.is_none_or(|(_, bf, _)| fx < bf) {
            best = Some((x[0], fx, ok));
        }
    }
    let (mut theta, sse, converged) = best.expect("grid is non-empty");
    // canonical representative: L_f >= 0 (θ and θ + π give the same curve)
    theta = theta.rem_euclid(std::f64::consts::PI);
    if theta > std::f64::consts::FRAC_PI_2 {
        theta -= std::f64::consts::PI;
    }
    let (s, _) = profile(theta);
    let identifiable = y.iter().any(|v| (v - y[0]).abs() > 1e-12 * y[0].abs().max(1.0));
    Ok(FitResult {
        s_f: s,
        l_f: theta.cos(),
        c_f: theta.sin(),
        residual: (sse / n).sqrt(),
        converged,
        identifiable,
    })
}

/// Summary of per-example equal-variance KL divergences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

/// `kl_gaussian(μ_in, σ, μ_out, σ)` with `σ` the pooled per-example σ,
/// aggregated over examples.
pub fn empirical_kl_report(pairs: &[GaussianPair]) -> Result<KlSummary> {
    if pairs.is_empty() {
        return Err(Error::invalid("no Gaussian pairs to summarize"));
    }
    let mut kls = pairs
        .iter()
        .map(|p| {
            let s = p.pooled_sigma();
            kl_gaussian(p.mu_in, s, p.mu_out, s)
        })
        .collect::<Result<Vec<f64>>>()?;
    kls.sort_by(f64::total_cmp);
    let n = kls.len();
    let median = if n % 2 == 1 {
        kls[n / 2]
    } else {
        0.5 * (kls[n / 2 - 1] + kls[n / 2])
    };
    Ok(KlSummary {
        n,
        mean: kls.iter().sum::<f64>() / n as f64,
        median,
        max: kls[n - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(epsilon: f64, m: u64, l: f64, sigma: f64) -> BoundInputs {
        BoundInputs {
            epsilon,
            m,
            loss_bound: l,
            sigma,
            gamma: 0.0,
            delta_bias: 0.0,
            rho_term: 0.0,
            delta_conf: 0.05,
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_gaussian(0.0, 1.0, 0.0, 1.0).unwrap(), 0.0);
        assert!((kl_gaussian(1.0, 1.0, 0.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((kl_gaussian(0.0, 2.0, 0.0, 1.0).unwrap() - 0.8068528194400547).abs() < 1e-12);
        assert!(kl_gaussian(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(kl_gaussian(0.0, 1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn theorem1_is_identity() {
        for e in [0.0, 1.0, 2.5] {
            assert_eq!(theorem1_bound(e), e);
        }
    }

    #[test]
    fn theorem2_examples() {
        assert!((theorem2_bound(&inputs(0.0, 10, 1.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        let b = inputs(1.0, 10, 1.0, 1.0);
        // (10 (1 - e^-1) + 1)^2 / 2, evaluated with 50-digit arithmetic
        assert!((theorem2_bound(&b).unwrap() - 26.800_025_632_971_98).abs() < 1e-9);
        let wide = BoundInputs {
            sigma: 2.0,
            ..b.clone()
        };
        assert!((theorem2_bound(&wide).unwrap() * 4.0 - theorem2_bound(&b).unwrap()).abs() < 1e-12);
        assert!(theorem2_bound(&inputs(1.0, 1, 1.0, 1.0)).is_err());
    }

    #[test]
    fn lemma_examples() {
        assert_eq!(lemma_curv_upper(&inputs(0.0, 10, 1.7, 1.0)).unwrap(), 1.7);
        // c1 = 0.5 via rho_term
        let b = BoundInputs {
            rho_term: 0.5,
            ..inputs(1.0, 10, 1.0, 1.0)
        };
        assert!((lemma_curv_upper(&b).unwrap() - 7.821_205_588_285_577).abs() < 1e-9);
        let mut last = 0.0;
        for m in 2..50 {
            let v = lemma_curv_upper(&BoundInputs {
                m,
                gamma: 0.1,
                ..b.clone()
            })
            .unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn crossover_examples() {
        let b = inputs(1.0, 10, 1.0, 1.0);
        assert!((theorem3_crossover_m(&b, 0.0).unwrap() - 2.237_252_914_212_928).abs() < 1e-9);
        assert!((theorem3_crossover_m(&b, 2.0).unwrap() + 0.926_700_499_525_725).abs() < 1e-9);
        assert_eq!(theorem3_crossover_m(&b, 2f64.sqrt()).unwrap(), 0.0);
        assert!(theorem3_crossover_m(&inputs(0.0, 10, 1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn report_flags_unknown_constants() {
        let r = bound_report(&inputs(2.0, 100, 1.0, 1.0)).unwrap();
        assert!(r.constants_unknown);
        assert_eq!(r.theorem1_bound, 2.0);
        assert!(r.theorem3_crossover_m.is_some());
        let r0 = bound_report(&inputs(0.0, 100, 1.0, 1.0)).unwrap();
        assert!(r0.theorem3_crossover_m.is_none());
        assert!(BoundInputs::default().loss_bound > 27.0);
    }

    #[test]
    fn fit_needs_three_distinct_points() {
        assert!(fit_bound_curve(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
        assert!(fit_bound_curve(&[(1.0, 1.0), (1.0, 2.0), (3.0, 2.0)]).is_err());
    }

    #[test]
    fn fit_constant_curve() {
        let pts: Vec<(f64, f64)> = [0.5, 1.0, 2.0, 5.0, 10.0].iter().map(|&e| (e, 4.0)).collect();
        let r = fit_bound_curve(&pts).unwrap();
        assert!(!r.identifiable);
        assert!(r.residual < 1e-6);
        assert!((r.l_f * (1.0 - (-0.5f64).exp())).abs() < 1e-6);
        assert!((r.s_f * r.c_f * r.c_f - 4.0).abs() < 1e-6);
    }

    #[test]
    fn fit_planted_curve() {
        let truth = |e: f64| 2.0 * (1.5 * (1.0 - (-e).exp()) + 0.3).powi(2);
        let pts: Vec<(f64, f64)> = [0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0]
            .iter()
            .map(|&e| (e, truth(e)))
            .collect();
        let r = fit_bound_curve(&pts).unwrap();
        assert!(r.converged);
        assert!(r.identifiable);
        assert!(r.residual <= 1e-6, "{r:?}");
        // gauge: (s/k^2, kL, kc) with k = 1/|(1.5, 0.3)|
        let k = 1.0 / (1.5f64.powi(2) + 0.3f64.powi(2)).sqrt();
        assert!((r.l_f - 1.5 * k).abs() < 1e-6);
        assert!((r.c_f - 0.3 * k).abs() < 1e-6);
        assert!((r.s_f - 2.0 / (k * k)).abs() < 1e-5);
    }

    #[test]
    fn fit_is_order_free() {
        let truth = |e: f64| 0.7 * (0.9 * (1.0 - (-e).exp()) + 0.1).powi(2);
        let mut pts: Vec<(f64, f64)> = [0.5, 1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&e| (e, truth(e) * 1.01))
            .collect();
        let a = fit_bound_curve(&pts).unwrap();
        pts.reverse();
        pts.swap(1, 3);
        assert_eq!(a, fit_bound_curve(&pts).unwrap());
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let nm = NelderMead {
            max_iter: 10_000,
            ..NelderMead::default()
        };
        let (x, fx, ok) = nm.minimize(f, &[-1.2, 1.0], 0.1);
        assert!(ok);
        assert!(fx < 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn kl_report_examples() {
        let p = GaussianPair {
            mu_in: 0.0,
            sigma_in: 1.0,
            mu_out: 2.0,
            sigma_out: 1.0,
            n_in: 4,
            n_out: 4,
        };
        let r = empirical_kl_report(&[p]).unwrap();
        assert!((r.mean - 2.0).abs() < 1e-15);
        let same = GaussianPair { mu_out: 0.0, ..p };
        let r = empirical_kl_report(&[same, same]).unwrap();
        assert_eq!((r.mean, r.median, r.max), (0.0, 0.0, 0.0));
        let q = GaussianPair { mu_out: 1.0, ..p };
        let a = empirical_kl_report(&[p, same, q]).unwrap();
        let b = empirical_kl_report(&[q, p, same]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.median, 0.5);
        assert!(empirical_kl_report(&[]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn theorem2_monotone(eps in 0.0f64..20.0, de in 0.0f64..5.0, m in 2u64..1000, dm in 0u64..100,
                                  gamma in 0.0f64..1.0, delta in 0.0f64..1.0) {
                let b = BoundInputs { epsilon: eps, m, gamma, delta_bias: delta, ..inputs(eps, m, 1.0, 1.0) };
                let v = theorem2_bound(&b).unwrap();
                let wider = BoundInputs { epsilon: eps + de, ..b.clone() };
                let larger = BoundInputs { m: m + dm, ..b.clone() };
                prop_assert!(theorem2_bound(&wider).unwrap() >= v);
                prop_assert!(theorem2_bound(&larger).unwrap() >= v);
            }

            #[test]
            fn kl_nonneg_zero_iff_equal(mu1 in -5.0f64..5.0, s1 in 0.1f64..3.0, mu2 in -5.0f64..5.0, s2 in 0.1f64..3.0) {
                let kl = kl_gaussian(mu1, s1, mu2, s2).unwrap();
                prop_assert!(kl >= 0.0);
                prop_assert_eq!(kl_gaussian(mu1, s1, mu1, s1).unwrap(), 0.0);
                if (mu1 - mu2).abs() > 1e-3 || (s1 - s2).abs() > 1e-3 {
                    prop_assert!(kl > 0.0);
                }
            }
        }
    }
}
