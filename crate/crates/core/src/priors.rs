//! Closed-form scalar denoisers for truncated-Gaussian, NNGM and
//! Bernoulli-NNGM priors observed through a Gaussian pseudo-likelihood.
//!
//! Every normalizer is handled in the log domain. The truncated-Gaussian
//! density used throughout is
//!
//! ```text
//! N+(x; θ, φ) = N(x; θ, φ) / Φc(-θ/√φ)   for x ≥ 0, and 0 otherwise,
//! ```
//!
//! i.e. the normalizer is the probability mass that `N(θ, φ)` puts on `[0, ∞)`.

use crate::error::{HutampError, Result};
use crate::mrf::BernoulliBelief;
use crate::special::{hazard, log_normal_pdf, log_phi_c, logit, sigmoid};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Activity probabilities are kept inside `[PI_FLOOR, 1 - PI_FLOOR]`.
pub const PI_FLOOR: f64 = 1e-12;

// Above this standardized truncation point the moments come from the
// continued fraction of the Mills ratio instead of `1 + a h - h²`.
const CF_SWITCH: f64 = 4.0;
const CF_DEPTH: usize = 400;

/// Truncated Gaussian `N+(θ, φ)` on `[0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncGauss {
    /// Location (not the mean).
    pub theta: f64,
    /// Scale (not the variance).
    pub phi: f64,
}

impl TruncGauss {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        check_scale("phi", phi)?;
        if !theta.is_finite() {
            return Err(HutampError::Parameter(format!("theta must be finite, got {theta}")));
        }
        Ok(Self { theta, phi })
    }

    pub fn moments(&self) -> TruncMoments {
        moments_unchecked(self.theta, self.phi)
    }

    /// `ln N+(x; θ, φ)`; `-inf` for negative `x`.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        log_normal_pdf(x, self.theta, self.phi) - log_phi_c(-self.theta / self.phi.sqrt())
    }
}

/// Mean, variance and `ln Φc(-θ/√φ)` of a truncated Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncMoments {
    pub mean: f64,
    pub var: f64,
    pub log_normalizer: f64,
}

/// Moments of the posterior `N+(x; θ, φ) N(x; r, ν)` plus its log evidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncPosterior {
    pub mean: f64,
    pub var: f64,
    pub log_evidence: f64,
}

fn check_scale(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || v.is_nan() {
        return Err(HutampError::Parameter(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// Backward evaluation of the Laplace continued fraction of the Mills
/// ratio, `1/R(a) = a + T1`, `Tj = j / (a + T(j+1))`. Returns `(T1, T2)`.
fn mills_tail(a: f64) -> (f64, f64) {
    let mut t = 0.0;
    let mut prev = 0.0;
    for j in (1..=CF_DEPTH).rev() {
        prev = t;
        t = j as f64 / (a + t);
    }
    (t, prev)
}

pub(crate) fn moments_unchecked(theta: f64, phi: f64) -> TruncMoments {
    let s = phi.sqrt();
    let a = -theta / s;
    let log_normalizer = log_phi_c(a);
    let (mean, var) = if a > CF_SWITCH {
        // mean/s = h - a = T1 and var/φ = 1 + a h - h² = T1 (T2 - T1)
        let (t1, t2) = mills_tail(a);
        (s * t1, phi * t1 * (t2 - t1))
    } else {
        let h = hazard(a);
        (theta + s * h, phi * (1.0 + a * h - h * h))
    };
    TruncMoments {
        mean,
        var: var.clamp(0.0, phi),
        log_normalizer,
    }
}

/// Mean, variance and log normalizer of `N+(θ, φ)`.
pub fn trunc_gauss_moments(theta: f64, phi: f64) -> Result<TruncMoments> {
    TruncGauss::new(theta, phi).map(|t| t.moments())
}

/// Product of two Gaussian densities in `x`, returned as `(mean, var)`.
/// An infinite variance acts as a flat factor.
pub fn gaussian_product(m1: f64, v1: f64, m2: f64, v2: f64) -> Result<(f64, f64)> {
    check_scale("v1", v1)?;
    check_scale("v2", v2)?;
    Ok(gaussian_product_unchecked(m1, v1, m2, v2))
}

#[inline]
pub(crate) fn gaussian_product_unchecked(m1: f64, v1: f64, m2: f64, v2: f64) -> (f64, f64) {
    let prec = 1.0 / v1 + 1.0 / v2;
    let v = 1.0 / prec;
    (v * (m1 / v1 + m2 / v2), v)
}

pub(crate) fn trunc_posterior_unchecked(theta: f64, phi: f64, rhat: f64, nu: f64) -> TruncPosterior {
    let (t_post, p_post) = gaussian_product_unchecked(theta, phi, rhat, nu);
    let mom = moments_unchecked(t_post, p_post);
    let log_evidence = log_normal_pdf(rhat, theta, phi + nu) + mom.log_normalizer
        - log_phi_c(-theta / phi.sqrt());
    TruncPosterior {
        mean: mom.mean,
        var: mom.var,
        log_evidence,
    }
}

/// Posterior of `x ~ N+(θ, φ)` observed as `r = x + N(0, ν)`.
pub fn trunc_gauss_posterior(prior: &TruncGauss, rhat: f64, nu: f64) -> Result<TruncPosterior> {
    check_scale("phi", prior.phi)?;
    check_scale("nu", nu)?;
    Ok(trunc_posterior_unchecked(prior.theta, prior.phi, rhat, nu))
}

/// One term of a non-negative Gaussian mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NngmComponent {
    pub weight: f64,
    pub theta: f64,
    pub phi: f64,
}

/// Non-negative Gaussian mixture `Σ ω_ℓ N+(θ_ℓ, φ_ℓ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NngmParams {
    pub components: Vec<NngmComponent>,
}

impl NngmParams {
    /// Validates weights (nonnegative, summing to one within 1e-12) and scales.
    pub fn new(components: Vec<NngmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(HutampError::Parameter("NNGM needs at least one component".into()));
        }
        let mut total = 0.0;
        for c in &components {
            if !(c.weight >= 0.0) {
                return Err(HutampError::Parameter(format!("NNGM weight {} is negative", c.weight)));
            }
            check_scale("NNGM phi", c.phi)?;
            if !c.theta.is_finite() {
                return Err(HutampError::Parameter("NNGM theta must be finite".into()));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(HutampError::Parameter(format!("NNGM weights sum to {total}, expected 1")));
        }
        Ok(Self { components })
    }

    pub fn single(theta: f64, phi: f64) -> Result<Self> {
        Self::new(vec![NngmComponent { weight: 1.0, theta, phi }])
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Mean and variance of the mixture.
    pub fn moments(&self) -> (f64, f64) {
        let mut mean = 0.0;
        let mut second = 0.0;
        for c in &self.components {
            let m = moments_unchecked(c.theta, c.phi);
            mean += c.weight * m.mean;
            second += c.weight * (m.var + m.mean * m.mean);
        }
        (mean, (second - mean * mean).max(0.0))
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        self.components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| c.weight.ln() + TruncGauss { theta: c.theta, phi: c.phi }.ln_pdf(x))
            .fold(f64::NEG_INFINITY, crate::special::log_add_exp)
    }

    /// Maximum-likelihood `L`-component fit to the uniform density on `[0, 1]`.
    pub fn uniform_fit(l: usize) -> Result<Self> {
        if l == 0 {
            return Err(HutampError::Parameter("L must be at least 1".into()));
        }
        static CACHE: OnceLock<Mutex<HashMap<usize, NngmParams>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(p) = cache.lock().expect("cache poisoned").get(&l) {
            return Ok(p.clone());
        }
        let fitted = fit_uniform(l);
        cache.lock().expect("cache poisoned").insert(l, fitted.clone());
        Ok(fitted)
    }
}

fn fit_uniform(l: usize) -> NngmParams {
    const GRID: usize = 2000;
    const ITERS: usize = 400;
    let xs: Vec<f64> = (0..GRID).map(|i| (i as f64 + 0.5) / GRID as f64).collect();
    let width = 1.0 / l as f64;
    let mut comps: Vec<NngmComponent> = (0..l)
        .map(|k| NngmComponent {
            weight: width,
            theta: (k as f64 + 0.5) * width,
            phi: (0.5 * width).powi(2),
        })
        .collect();
    let mut logw = vec![0.0; l];
    for _ in 0..ITERS {
        let mut acc = vec![(0.0, 0.0, 0.0); l];
        for &x in &xs {
            for (k, c) in comps.iter().enumerate() {
                logw[k] = c.weight.ln() + TruncGauss { theta: c.theta, phi: c.phi }.ln_pdf(x);
            }
            let lse = logw.iter().copied().fold(f64::NEG_INFINITY, crate::special::log_add_exp);
            for k in 0..l {
                let r = (logw[k] - lse).exp();
                acc[k].0 += r;
                acc[k].1 += r * x;
                acc[k].2 += r * x * x;
            }
        }
        for (c, &(r, s1, s2)) in comps.iter_mut().zip(&acc) {
            if r <= 0.0 {
                continue;
            }
            let fit = fit_trunc_gauss_moments(s1 / r, s2 / r);
            c.weight = r / GRID as f64;
            c.theta = fit.theta;
            c.phi = fit.phi;
        }
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        comps.iter_mut().for_each(|c| c.weight /= total);
    }
    NngmParams { components: comps }
}

/// Truncated Gaussian whose mean and second moment match the given ones.
///
/// This is the exact maximum-likelihood (and EM M-step) solution for the
/// `N+` family, which is exponential with sufficient statistics `(x, x²)`.
/// The coefficient of variation of any `N+` is below one; targets outside
/// that range are clamped to the exponential-like boundary.
pub fn fit_trunc_gauss_moments(mean: f64, second: f64) -> TruncGauss {
    let mean = mean.max(1e-300);
    let var = (second - mean * mean).max(0.0);
    let ratio = var / (mean * mean);
    // standardized mean and variance as functions of the truncation point
    let shape = |a: f64| -> (f64, f64) {
        let m = moments_unchecked(-a, 1.0);
        (m.mean, m.var)
    };
    let ratio_at = |a: f64| {
        let (m, v) = shape(a);
        v / (m * m)
    };
    const A_LO: f64 = -40.0;
    const A_HI: f64 = 1e4;
    if ratio <= ratio_at(A_LO) {
        // truncation has no visible effect
        return TruncGauss {
            theta: mean,
            phi: var.max(1e-300),
        };
    }
    let target = ratio.min(ratio_at(A_HI));
    let (mut lo, mut hi) = (A_LO, A_HI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    let a = 0.5 * (lo + hi);
    let (m1, _) = shape(a);
    let s = mean / m1;
    TruncGauss {
        theta: -a * s,
        phi: s * s,
    }
}

/// Bernoulli-NNGM (spike-and-slab) prior `(1-π) δ(a) + π ζ(a)`.
#[derive(Debug, Clone, Copy)]
pub struct SpikeSlab<'a> {
    pub pi: f64,
    pub slab: &'a NngmParams,
}

impl SpikeSlab<'_> {
    pub fn posterior(&self, rhat: f64, nu: f64) -> Result<SpikeSlabPosterior> {
        spike_slab_posterior(self.pi, self.slab, rhat, nu)
    }
}

/// Posterior summary of a spike-and-slab prior under `N(r; a, ν)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeSlabPosterior {
    /// Posterior activity probability.
    pub post_pi: f64,
    pub mean: f64,
    pub var: f64,
    /// `ln ∫ζ(a)N(a; r, ν)da − ln N(0; r, ν)`.
    pub llr_active: f64,
}

/// Per-component posterior pieces, conditional on the element being active.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ComponentPosterior {
    /// Responsibility of the component given activity.
    pub resp: f64,
    pub mean: f64,
    pub var: f64,
}

pub(crate) fn clamp_pi(pi: f64) -> f64 {
    pi.clamp(PI_FLOOR, 1.0 - PI_FLOOR)
}

/// Slab log evidence `ln ∫ζ(a)N(a; r, ν)da`, filling per-component pieces
/// into `comps` when given (its length must match the mixture).
pub(crate) fn slab_evidence(
    slab: &NngmParams,
    rhat: f64,
    nu: f64,
    mut comps: Option<&mut [ComponentPosterior]>,
) -> f64 {
    let mut log_slab = f64::NEG_INFINITY;
    let mut logw = [f64::NEG_INFINITY; 8];
    let l = slab.components.len();
    let mut spill = Vec::new();
    let logw: &mut [f64] = if l <= 8 {
        &mut logw[..l]
    } else {
        spill.resize(l, f64::NEG_INFINITY);
        &mut spill
    };
    for (k, c) in slab.components.iter().enumerate() {
        let tp = trunc_posterior_unchecked(c.theta, c.phi, rhat, nu);
        logw[k] = if c.weight > 0.0 {
            c.weight.ln() + tp.log_evidence
        } else {
            f64::NEG_INFINITY
        };
        log_slab = crate::special::log_add_exp(log_slab, logw[k]);
        if let Some(out) = comps.as_deref_mut() {
            out[k].mean = tp.mean;
            out[k].var = tp.var;
        }
    }
    if let Some(out) = comps {
        for k in 0..l {
            out[k].resp = (logw[k] - log_slab).exp();
        }
    }
    log_slab
}

pub(crate) fn spike_slab_unchecked(
    pi: f64,
    slab: &NngmParams,
    rhat: f64,
    nu: f64,
    comps: &mut [ComponentPosterior],
) -> SpikeSlabPosterior {
    let log_slab = slab_evidence(slab, rhat, nu, Some(comps));
    let llr_active = log_slab - log_normal_pdf(0.0, rhat, nu);
    let post_pi = sigmoid(logit(clamp_pi(pi)) + llr_active);
    let slab_mean: f64 = comps.iter().map(|c| c.resp * c.mean).sum();
    let slab_var: f64 = comps
        .iter()
        .map(|c| c.resp * (c.var + (c.mean - slab_mean).powi(2)))
        .sum();
    // law of total variance over {inactive, active}
    let var = post_pi * slab_var + post_pi * (1.0 - post_pi) * slab_mean * slab_mean;
    SpikeSlabPosterior {
        post_pi,
        mean: post_pi * slab_mean,
        var,
        llr_active,
    }
}

fn check_pi(pi: f64) -> Result<()> {
    if pi.is_nan() || !(0.0..=1.0).contains(&pi) {
        return Err(HutampError::Parameter(format!("activity probability {pi} outside [0, 1]")));
    }
    Ok(())
}

/// Posterior of `a ~ (1-π)δ(a) + π ζ(a)` given `r = a + N(0, ν)`.
pub fn spike_slab_posterior(pi: f64, slab: &NngmParams, rhat: f64, nu: f64) -> Result<SpikeSlabPosterior> {
    check_pi(pi)?;
    check_scale("nu", nu)?;
    let mut comps = vec![ComponentPosterior::default(); slab.len()];
    Ok(spike_slab_unchecked(pi, slab, rhat, nu, &mut comps))
}

/// Like [`spike_slab_posterior`], also returning the per-component pieces.
pub fn spike_slab_components(
    pi: f64,
    slab: &NngmParams,
    rhat: f64,
    nu: f64,
) -> Result<(SpikeSlabPosterior, Vec<ComponentPosterior>)> {
    check_pi(pi)?;
    check_scale("nu", nu)?;
    let mut comps = vec![ComponentPosterior::default(); slab.len()];
    let post = spike_slab_unchecked(pi, slab, rhat, nu, &mut comps);
    Ok((post, comps))
}

/// Activity belief sent from the abundance factor to its support variable.
/// It depends only on the incoming Gaussian and the slab, not on `π`.
pub fn gtod_message(slab: &NngmParams, rhat: f64, nu: f64) -> Result<BernoulliBelief> {
    check_scale("nu", nu)?;
    Ok(BernoulliBelief::new(gtod_unchecked(slab, rhat, nu)))
}

pub(crate) fn gtod_unchecked(slab: &NngmParams, rhat: f64, nu: f64) -> f64 {
    let llr = slab_evidence(slab, rhat, nu, None) - log_normal_pdf(0.0, rhat, nu);
    sigmoid(llr)
}
