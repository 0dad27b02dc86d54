//! Spatial coherence: loopy belief propagation on a 4-neighbor Ising field
//! over the pixel grid, and EM updates of the field parameters.
//!
//! Support variables take values `d ∈ {-1, +1}`; the field is
//!
//! ```text
//! p(d) ∝ exp( Σ_edges β d_i d_j  -  α Σ_t d_t )
//! ```
//!
//! with one coupling term per undirected edge. All messages are carried as
//! log-odds `ln m(+1)/m(-1)`.

use crate::error::{HutampError, Result};
use crate::priors::PI_FLOOR;
use crate::special::{logit, sigmoid};
use serde::{Deserialize, Serialize};

/// Probability that a support variable is active (`d = +1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernoulliBelief {
    pub p_active: f64,
}

impl BernoulliBelief {
    pub fn new(p_active: f64) -> Self {
        Self { p_active }
    }
}

/// Ising parameters: `alpha` favors sparsity, `beta` favors agreement
/// between neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrfParams {
    pub alpha: f64,
    pub beta: f64,
}

impl MrfParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() || beta < 0.0 {
            return Err(HutampError::Parameter(format!(
                "MRF parameters must be finite with beta >= 0, got alpha={alpha} beta={beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

/// Row-major `rows × cols` pixel grid; pixel `(r, c)` has index `r * cols + c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelGrid {
    pub rows: usize,
    pub cols: usize,
}

impl PixelGrid {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(HutampError::Dimension(format!("grid {rows}x{cols} is empty")));
        }
        Ok(Self { rows, cols })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Undirected 4-neighbor edges, each listed once as `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(2 * self.len());
        for r in 0..self.rows {
            for c in 0..self.cols {
                let i = r * self.cols + c;
                if c + 1 < self.cols {
                    out.push((i, i + 1));
                }
                if r + 1 < self.rows {
                    out.push((i, i + self.cols));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrfOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    /// Weight on the freshly computed message in each sweep.
    pub damping: f64,
}

impl Default for MrfOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_sweeps: 50,
            damping: 0.5,
        }
    }
}

/// Joint belief of the two ends of an edge, `pmf[a][b] = P(d_i = s(a), d_j = s(b))`
/// with `s(0) = -1`, `s(1) = +1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairBelief {
    pub i: usize,
    pub j: usize,
    pub pmf: [[f64; 2]; 2],
}

impl PairBelief {
    /// `E[d_i d_j]`.
    pub fn corr(&self) -> f64 {
        self.pmf[0][0] + self.pmf[1][1] - self.pmf[0][1] - self.pmf[1][0]
    }
}

#[derive(Debug, Clone)]
pub struct MrfOutput {
    /// Field-only activity probabilities `π_t` (exclude the pixel's own input).
    pub extrinsic: Vec<f64>,
    pub posterior: Vec<f64>,
    pub pairs: Vec<PairBelief>,
    pub converged: bool,
    pub sweeps: usize,
}

#[inline]
fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Log-odds message through a coupling `exp(β d_i d_j)` given cavity log-odds `l` at the sender.
#[inline]
fn pass(beta: f64, l: f64) -> f64 {
    ln_cosh(beta + 0.5 * l) - ln_cosh(beta - 0.5 * l)
}

/// Parallel-schedule loopy BP with incoming activity probabilities as
/// local evidence.
pub fn mrf_bp(incoming: &[f64], grid: PixelGrid, params: &MrfParams, opts: &MrfOptions) -> Result<MrfOutput> {
    let t = grid.len();
    if incoming.len() != t {
        return Err(HutampError::Dimension(format!(
            "{} incoming beliefs for a {}x{} grid",
            incoming.len(),
            grid.rows,
            grid.cols
        )));
    }
    let evidence: Vec<f64> = incoming
        .iter()
        .map(|&p| logit(p.clamp(PI_FLOOR, 1.0 - PI_FLOOR)))
        .collect();
    let unary = -2.0 * params.alpha;
    let edges = grid.edges();
    // msg[e] = (i -> j, j -> i)
    let mut msg = vec![(0.0f64, 0.0f64); edges.len()];
    let mut sum_in = vec![0.0f64; t];
    let mut converged = edges.is_empty();
    let mut sweeps = 0;
    let step = opts.damping.clamp(0.0, 1.0);

    while !converged && sweeps < opts.max_sweeps {
        sweeps += 1;
        sum_in.iter_mut().for_each(|s| *s = 0.0);
        for (&(i, j), &(ij, ji)) in edges.iter().zip(&msg) {
            sum_in[j] += ij;
            sum_in[i] += ji;
        }
        let mut delta = 0.0f64;
        for (&(i, j), m) in edges.iter().zip(msg.iter_mut()) {
            let cav_i = unary + evidence[i] + sum_in[i] - m.1;
            let cav_j = unary + evidence[j] + sum_in[j] - m.0;
            let new_ij = pass(params.beta, cav_i);
            let new_ji = pass(params.beta, cav_j);
            delta = delta.max((new_ij - m.0).abs()).max((new_ji - m.1).abs());
            m.0 += step * (new_ij - m.0);
            m.1 += step * (new_ji - m.1);
        }
        converged = delta < opts.tol;
    }

    sum_in.iter_mut().for_each(|s| *s = 0.0);
    for (&(i, j), &(ij, ji)) in edges.iter().zip(&msg) {
        sum_in[j] += ij;
        sum_in[i] += ji;
    }
    let extrinsic: Vec<f64> = sum_in.iter().map(|&s| sigmoid(unary + s)).collect();
    let posterior: Vec<f64> = (0..t).map(|k| sigmoid(unary + sum_in[k] + evidence[k])).collect();
    let pairs = edges
        .iter()
        .zip(&msg)
        .map(|(&(i, j), &(ij, ji))| {
            let li = unary + evidence[i] + sum_in[i] - ji;
            let lj = unary + evidence[j] + sum_in[j] - ij;
            let mut logp = [[0.0; 2]; 2];
            let mut mx = f64::NEG_INFINITY;
            for (a, row) in logp.iter_mut().enumerate() {
                for (b, v) in row.iter_mut().enumerate() {
                    let di = if a == 1 { 1.0 } else { -1.0 };
                    let dj = if b == 1 { 1.0 } else { -1.0 };
                    *v = params.beta * di * dj + 0.5 * li * di + 0.5 * lj * dj;
                    mx = mx.max(*v);
                }
            }
            let mut pmf = [[0.0; 2]; 2];
            let mut z = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    pmf[a][b] = (logp[a][b] - mx).exp();
                    z += pmf[a][b];
                }
            }
            pmf.iter_mut().flatten().for_each(|p| *p /= z);
            PairBelief { i, j, pmf }
        })
        .collect();

    Ok(MrfOutput {
        extrinsic,
        posterior,
        pairs,
        converged,
        sweeps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrfEmOptions {
    /// Ascent steps per EM call.
    pub steps: usize,
    pub max_backtrack: usize,
}

impl Default for MrfEmOptions {
    fn default() -> Self {
        Self {
            steps: 5,
            max_backtrack: 10,
        }
    }
}

/// Expected pseudo-log-likelihood of the field under the beliefs, per pixel.
struct PseudoLik {
    mean_d: Vec<f64>,
    /// `Σ_(j ∈ N(t)) E[d_t d_j]`.
    pair_sum: Vec<f64>,
    /// `Σ_(j ∈ N(t)) E[d_j]`.
    nbr_mean: Vec<f64>,
}

impl PseudoLik {
    fn value(&self, alpha: f64, beta: f64) -> f64 {
        let t = self.mean_d.len() as f64;
        (0..self.mean_d.len())
            .map(|k| {
                let h = beta * self.nbr_mean[k] - alpha;
                -alpha * self.mean_d[k] + beta * self.pair_sum[k] - ln_cosh(h) - std::f64::consts::LN_2
            })
            .sum::<f64>()
            / t
    }

    /// Gradient and Hessian in `(α, β)`.
    fn derivatives(&self, alpha: f64, beta: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let t = self.mean_d.len() as f64;
        let mut g = [0.0; 2];
        let mut h = [[0.0; 2]; 2];
        for k in 0..self.mean_d.len() {
            let s = self.nbr_mean[k];
            let th = (beta * s - alpha).tanh();
            let sech2 = 1.0 - th * th;
            g[0] += -self.mean_d[k] + th;
            g[1] += self.pair_sum[k] - s * th;
            h[0][0] -= sech2;
            h[0][1] += s * sech2;
            h[1][1] -= s * s * sech2;
        }
        h[1][0] = h[0][1];
        g.iter_mut().for_each(|x| *x /= t);
        h.iter_mut().flatten().for_each(|x| *x /= t);
        (g, h)
    }
}

/// Ascent on the belief-averaged pseudo-likelihood of the Ising field.
///
/// Each step takes a Newton direction when the Hessian is safely negative
/// definite and the gradient otherwise, projects `β` onto `[0, ∞)`, and
/// halves the step until the objective does not decrease.
pub fn em_update_mrf(
    posterior: &[f64],
    pairs: &[PairBelief],
    grid: PixelGrid,
    old: &MrfParams,
    opts: &MrfEmOptions,
) -> Result<MrfParams> {
    let t = grid.len();
    if posterior.len() != t {
        return Err(HutampError::Dimension(format!(
            "{} posterior beliefs for {} pixels",
            posterior.len(),
            t
        )));
    }
    let mean_d: Vec<f64> = posterior.iter().map(|&p| 2.0 * p - 1.0).collect();
    let mut pair_sum = vec![0.0; t];
    let mut nbr_mean = vec![0.0; t];
    for pb in pairs {
        let c = pb.corr();
        pair_sum[pb.i] += c;
        pair_sum[pb.j] += c;
        nbr_mean[pb.i] += mean_d[pb.j];
        nbr_mean[pb.j] += mean_d[pb.i];
    }
    let pl = PseudoLik {
        mean_d,
        pair_sum,
        nbr_mean,
    };

    let (mut alpha, mut beta) = (old.alpha, old.beta.max(0.0));
    let mut value = pl.value(alpha, beta);
    for _ in 0..opts.steps {
        let (g, h) = pl.derivatives(alpha, beta);
        if g[0].abs() + g[1].abs() < 1e-14 {
            break;
        }
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let dir = if h[0][0] < -1e-12 && det > 1e-12 * h[0][0].abs().max(h[1][1].abs()).powi(2) {
            // -H^{-1} g
            [
                -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
                -(-h[1][0] * g[0] + h[0][0] * g[1]) / det,
            ]
        } else {
            g
        };
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..=opts.max_backtrack {
            let na = alpha + step * dir[0];
            let nb = (beta + step * dir[1]).max(0.0);
            let nv = pl.value(na, nb);
            if nv.is_finite() && nv >= value {
                alpha = na;
                beta = nb;
                value = nv;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    MrfParams::new(alpha, beta)
}
