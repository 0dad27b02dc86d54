//! Spectral coherence: exact Gaussian message passing on stationary
//! first-order Gauss-Markov chains, and the EM update of their parameters.
//!
//! Chain model for one endmember column `e_1..e_M`:
//!
//! ```text
//! e_1 ~ N(κ, σ²)
//! e_m | e_(m-1) ~ N((1-η) e_(m-1) + η κ, η(2-η) σ²)
//! ```
//!
//! The innovation variance `η(2-η)σ²` keeps every marginal at `N(κ, σ²)`.

use crate::error::{HutampError, Result};
use serde::{Deserialize, Serialize};

const SIGMA2_FLOOR: f64 = 1e-12;
const ETA_MIN: f64 = 1e-6;

/// Parameters of one Gauss-Markov chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmChainParams {
    pub kappa: f64,
    pub sigma2: f64,
    /// `0` gives a constant chain, `1` an i.i.d. one.
    pub eta: f64,
}

impl GmChainParams {
    pub fn new(kappa: f64, sigma2: f64, eta: f64) -> Result<Self> {
        if !kappa.is_finite() {
            return Err(HutampError::Parameter(format!("kappa must be finite, got {kappa}")));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(HutampError::Parameter(format!("sigma2 must be positive, got {sigma2}")));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(HutampError::Parameter(format!("eta must lie in [0, 1], got {eta}")));
        }
        Ok(Self { kappa, sigma2, eta })
    }

    fn innovation_var(&self) -> f64 {
        self.eta * (2.0 - self.eta) * self.sigma2
    }
}

/// A Gaussian message or marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: f64,
    pub var: f64,
}

impl GaussianBelief {
    pub fn new(mean: f64, var: f64) -> Self {
        Self { mean, var }
    }

    fn info(&self) -> Info {
        if self.var.is_infinite() {
            Info::FLAT
        } else {
            Info {
                prec: 1.0 / self.var,
                h: self.mean / self.var,
            }
        }
    }
}

/// Information-form Gaussian: precision and precision-weighted mean.
#[derive(Debug, Clone, Copy)]
struct Info {
    prec: f64,
    h: f64,
}

impl Info {
    const FLAT: Info = Info { prec: 0.0, h: 0.0 };

    fn combine(self, o: Info) -> Info {
        Info {
            prec: self.prec + o.prec,
            h: self.h + o.h,
        }
    }

    fn belief(self) -> GaussianBelief {
        GaussianBelief {
            mean: self.h / self.prec,
            var: 1.0 / self.prec,
        }
    }
}

/// Output of [`gm_smooth`].
#[derive(Debug, Clone)]
pub struct ChainSmoothing {
    /// Chain messages into each node, excluding that node's own input.
    pub extrinsic: Vec<GaussianBelief>,
    /// Full posterior marginals.
    pub posterior: Vec<GaussianBelief>,
    /// `E[e_m e_(m+1)]` under the full posterior, length `M - 1`.
    pub pair_cross: Vec<f64>,
}

/// Forward-backward smoothing of one chain given per-node Gaussian inputs.
pub fn gm_smooth(incoming: &[GaussianBelief], params: &GmChainParams) -> Result<ChainSmoothing> {
    let m = incoming.len();
    if m == 0 {
        return Err(HutampError::Dimension("chain must have at least one node".into()));
    }
    for (i, b) in incoming.iter().enumerate() {
        if !(b.var > 0.0) || b.mean.is_nan() {
            return Err(HutampError::Parameter(format!(
                "incoming message {i} has invalid variance {}",
                b.var
            )));
        }
    }
    let a = 1.0 - params.eta;
    let q = params.innovation_var();
    let drift = params.eta * params.kappa;
    let inc: Vec<Info> = incoming.iter().map(GaussianBelief::info).collect();

    let mut fwd = vec![Info::FLAT; m];
    fwd[0] = Info {
        prec: 1.0 / params.sigma2,
        h: params.kappa / params.sigma2,
    };
    for i in 1..m {
        let b = fwd[i - 1].combine(inc[i - 1]);
        fwd[i] = if a == 0.0 {
            Info {
                prec: 1.0 / q,
                h: params.kappa / q,
            }
        } else {
            let den = a * a + q * b.prec;
            Info {
                prec: b.prec / den,
                h: (a * b.h + drift * b.prec) / den,
            }
        };
    }

    let mut bwd = vec![Info::FLAT; m];
    for i in (0..m - 1).rev() {
        let b = bwd[i + 1].combine(inc[i + 1]);
        let den = 1.0 + q * b.prec;
        bwd[i] = Info {
            prec: a * a * b.prec / den,
            h: a * (b.h - drift * b.prec) / den,
        };
    }

    let extrinsic: Vec<GaussianBelief> = (0..m).map(|i| fwd[i].combine(bwd[i]).belief()).collect();
    let posterior: Vec<GaussianBelief> = (0..m)
        .map(|i| fwd[i].combine(bwd[i]).combine(inc[i]).belief())
        .collect();
    let pair_cross = (0..m.saturating_sub(1))
        .map(|i| {
            let p1 = fwd[i].prec + inc[i].prec;
            let p2 = bwd[i + 1].prec + inc[i + 1].prec;
            let cov = a / (q * p1 * p2 + p1 + a * a * p2);
            cov + posterior[i].mean * posterior[i + 1].mean
        })
        .collect();
    Ok(ChainSmoothing {
        extrinsic,
        posterior,
        pair_cross,
    })
}

/// Sufficient statistics of a chain posterior.
struct ChainStats<'a> {
    mean: Vec<f64>,
    second: Vec<f64>,
    cross: &'a [f64],
}

impl<'a> ChainStats<'a> {
    fn new(posterior: &[GaussianBelief], cross: &'a [f64]) -> Self {
        Self {
            mean: posterior.iter().map(|b| b.mean).collect(),
            second: posterior.iter().map(|b| b.var + b.mean * b.mean).collect(),
            cross,
        }
    }

    fn first_sq(&self, kappa: f64) -> f64 {
        self.second[0] - 2.0 * kappa * self.mean[0] + kappa * kappa
    }

    /// `Σ_m E[(e_m - a e_(m-1) - η κ)²]`.
    fn innovation_sq(&self, kappa: f64, eta: f64) -> f64 {
        let a = 1.0 - eta;
        let d = eta * kappa;
        (1..self.mean.len())
            .map(|i| {
                self.second[i] + a * a * self.second[i - 1] + d * d
                    - 2.0 * a * self.cross[i - 1]
                    - 2.0 * d * self.mean[i]
                    + 2.0 * a * d * self.mean[i - 1]
            })
            .sum()
    }

    /// Maximizer over `η ∈ [1e-6, 1]` of the transition terms, with `κ, σ²`
    /// held fixed. Stationary points come from bisection on the derivative.
    fn best_eta(&self, kappa: f64, sigma2: f64) -> f64 {
        let m = self.mean.len();
        let k = (m - 1) as f64;
        let eu2 = |i: usize| self.second[i] - 2.0 * kappa * self.mean[i] + kappa * kappa;
        let s0: f64 = (1..m).map(eu2).sum();
        let s1: f64 = (0..m - 1).map(eu2).sum();
        let c: f64 = (1..m)
            .map(|i| self.cross[i - 1] - kappa * (self.mean[i] + self.mean[i - 1]) + kappa * kappa)
            .sum();
        let value = |eta: f64| {
            let a = 1.0 - eta;
            let v = eta * (2.0 - eta) * sigma2;
            let b = (s0 - 2.0 * a * c + a * a * s1).max(0.0);
            -0.5 * (k * v.ln() + b / v)
        };
        let slope = |eta: f64| {
            let a = 1.0 - eta;
            let v = eta * (2.0 - eta) * sigma2;
            let dv = 2.0 * a * sigma2;
            let b = (s0 - 2.0 * a * c + a * a * s1).max(0.0);
            let db = 2.0 * c - 2.0 * a * s1;
            -0.5 * (k * dv / v + db / v - b * dv / (v * v))
        };
        const GRID: usize = 64;
        let lo = ETA_MIN.ln();
        let pts: Vec<f64> = (0..=GRID).map(|i| (lo * (1.0 - i as f64 / GRID as f64)).exp()).collect();
        let mut cands = vec![ETA_MIN, 1.0];
        for w in pts.windows(2) {
            let (mut x0, mut x1) = (w[0], w[1]);
            let (d0, d1) = (slope(x0), slope(x1));
            if d0 > 0.0 && d1 <= 0.0 {
                for _ in 0..200 {
                    let mid = 0.5 * (x0 + x1);
                    if slope(mid) > 0.0 {
                        x0 = mid;
                    } else {
                        x1 = mid;
                    }
                    if x1 - x0 <= 4.0 * f64::EPSILON * x1 {
                        break;
                    }
                }
                cands.push(0.5 * (x0 + x1));
            }
        }
        cands
            .into_iter()
            .map(|e| (e, value(e)))
            .fold((ETA_MIN, f64::NEG_INFINITY), |acc, (e, v)| if v > acc.1 { (e, v) } else { acc })
            .0
    }

    fn loglik(&self, p: &GmChainParams) -> f64 {
        use crate::special::LN_2PI;
        let m = self.mean.len();
        let mut q = -0.5 * (LN_2PI + p.sigma2.ln() + self.first_sq(p.kappa) / p.sigma2);
        if m > 1 {
            let v = p.innovation_var();
            let b = self.innovation_sq(p.kappa, p.eta);
            q += -0.5 * ((m - 1) as f64 * (LN_2PI + v.ln()) + b / v);
        }
        q
    }
}

/// Expected complete-data log-likelihood `E{ln p(e; κ, σ², η)}` under a
/// Gaussian chain posterior.
pub fn gm_expected_loglik(posterior: &[GaussianBelief], pair_cross: &[f64], params: &GmChainParams) -> f64 {
    ChainStats::new(posterior, pair_cross).loglik(params)
}

/// M-step for `(κ, σ², η)`.
///
/// Coordinate ascent on the expected complete-data log-likelihood started
/// from `old`: `κ` and `σ²` in closed form, `η` by a bounded 1-D search on
/// `[1e-6, 1]`. Every step is non-decreasing, so the result never scores
/// below `old`.
pub fn em_update_gm(posterior: &[GaussianBelief], pair_cross: &[f64], old: &GmChainParams) -> Result<GmChainParams> {
    let m = posterior.len();
    if m == 0 || pair_cross.len() + 1 != m {
        return Err(HutampError::Dimension(format!(
            "chain statistics of length {m} with {} cross terms",
            pair_cross.len()
        )));
    }
    let stats = ChainStats::new(posterior, pair_cross);
    let mean_all = stats.mean.iter().sum::<f64>() / m as f64;
    let spread = stats.mean.iter().fold(0.0f64, |acc, &x| acc.max((x - mean_all).abs()));
    let max_var = posterior.iter().fold(0.0f64, |acc, b| acc.max(b.var));
    if spread <= 1e-14 * (1.0 + mean_all.abs()) && max_var <= 1e-300 {
        return Ok(GmChainParams {
            kappa: mean_all,
            sigma2: SIGMA2_FLOOR,
            eta: old.eta,
        });
    }

    let mut p = GmChainParams {
        kappa: old.kappa,
        sigma2: old.sigma2.max(SIGMA2_FLOOR),
        eta: old.eta.clamp(ETA_MIN, 1.0),
    };
    if m == 1 {
        p.kappa = stats.mean[0];
        p.sigma2 = (stats.second[0] - p.kappa * p.kappa).max(SIGMA2_FLOOR);
        return Ok(p);
    }
    let mut best = stats.loglik(&p);
    for _ in 0..200 {
        let before = best;
        // κ given (σ², η)
        let eta = p.eta;
        let a = 1.0 - eta;
        let lead = stats.mean[0];
        let tail: f64 = (1..m).map(|i| stats.mean[i] - a * stats.mean[i - 1]).sum();
        let kappa = (lead + tail / (2.0 - eta)) / (1.0 + (m - 1) as f64 * eta / (2.0 - eta));
        let cand = GmChainParams { kappa, ..p };
        if stats.loglik(&cand) >= best {
            p = cand;
            best = stats.loglik(&p);
        }
        // σ² given (κ, η)
        let sigma2 = ((stats.first_sq(p.kappa) + stats.innovation_sq(p.kappa, p.eta) / (p.eta * (2.0 - p.eta)))
            / m as f64)
            .max(SIGMA2_FLOOR);
        let cand = GmChainParams { sigma2, ..p };
        if stats.loglik(&cand) >= best {
            p = cand;
            best = stats.loglik(&p);
        }
        // η given (κ, σ²)
        let eta = stats.best_eta(p.kappa, p.sigma2);
        let cand = GmChainParams { eta, ..p };
        let val = stats.loglik(&cand);
        if val >= best {
            p = cand;
            best = val;
        }
        if (best - before).abs() <= 1e-13 * (1.0 + best.abs()) {
            break;
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(m: usize) -> Vec<GaussianBelief> {
        vec![GaussianBelief::new(0.0, 1e12); m]
    }

    #[test]
    fn iid_chain_extrinsic_is_prior() {
        let p = GmChainParams::new(0.3, 0.5, 1.0).unwrap();
        let inc: Vec<_> = (0..5).map(|i| GaussianBelief::new(i as f64, 0.1)).collect();
        let out = gm_smooth(&inc, &p).unwrap();
        for e in &out.extrinsic {
            assert!((e.mean - 0.3).abs() < 1e-12 && (e.var - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn single_node_extrinsic_is_prior() {
        let p = GmChainParams::new(-1.0, 2.0, 0.2).unwrap();
        let out = gm_smooth(&[GaussianBelief::new(4.0, 1.0)], &p).unwrap();
        assert_eq!(out.extrinsic[0], GaussianBelief::new(-1.0, 2.0));
        assert!(out.pair_cross.is_empty());
    }

    #[test]
    fn flat_inputs_give_stationary_marginals() {
        let p = GmChainParams::new(0.5, 0.04, 0.1).unwrap();
        let out = gm_smooth(&flat(30), &p).unwrap();
        for b in &out.posterior {
            assert!((b.mean - 0.5).abs() < 1e-6 && (b.var - 0.04).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_chain_is_handled() {
        let p = GmChainParams::new(0.0, 1.0, 0.0).unwrap();
        let inc = vec![GaussianBelief::new(1.0, 1.0), GaussianBelief::new(3.0, 1.0)];
        let out = gm_smooth(&inc, &p).unwrap();
        // e1 = e2: prior N(0,1) times two unit observations
        assert!((out.posterior[0].mean - 4.0 / 3.0).abs() < 1e-12);
        assert!((out.posterior[1].mean - 4.0 / 3.0).abs() < 1e-12);
        let second = out.posterior[0].var + out.posterior[0].mean.powi(2);
        assert!((out.pair_cross[0] - second).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_incoming_variance() {
        let p = GmChainParams::new(0.0, 1.0, 0.5).unwrap();
        assert!(gm_smooth(&[GaussianBelief::new(0.0, 0.0)], &p).is_err());
    }

    #[test]
    fn degenerate_posterior_em() {
        let post = vec![GaussianBelief::new(0.7, 0.0); 4];
        let old = GmChainParams::new(0.0, 1.0, 0.3).unwrap();
        let new = em_update_gm(&post, &[0.49; 3], &old).unwrap();
        assert!((new.kappa - 0.7).abs() < 1e-15);
        assert_eq!(new.sigma2, SIGMA2_FLOOR);
        assert_eq!(new.eta, 0.3);
    }

    #[test]
    fn em_fixed_point_on_population_statistics() {
        let truth = GmChainParams::new(0.5, 0.04, 0.1).unwrap();
        let m = 50;
        let post = vec![GaussianBelief::new(truth.kappa, truth.sigma2); m];
        let cross = vec![truth.kappa.powi(2) + (1.0 - truth.eta) * truth.sigma2; m - 1];
        let new = em_update_gm(&post, &cross, &truth).unwrap();
        assert!((new.kappa - truth.kappa).abs() < 1e-9);
        assert!((new.sigma2 - truth.sigma2).abs() < 1e-9);
        assert!((new.eta - truth.eta).abs() < 1e-9);
    }
}
