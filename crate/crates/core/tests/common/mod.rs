//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use hutamp::chain::{GaussianBelief, GmChainParams};
use hutamp::nalgebra::{DMatrix, DVector};
use rand::Rng;

// 7-point Gauss / 15-point Kronrod nodes and weights on [-1, 1]
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut fv = [(0.0, 0.0); 7];
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        fv[j] = (f(c - x), f(c + x));
        let s = fv[j].0 + fv[j].1;
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    // QUADPACK's rescaled error estimate
    let kh = 0.5 * k;
    let mut asc = WGK[7] * (fc - kh).abs();
    for j in 0..7 {
        asc += WGK[j] * ((fv[j].0 - kh).abs() + (fv[j].1 - kh).abs());
    }
    asc *= h.abs();
    let mut err = ((k - g) * h).abs();
    if asc != 0.0 && err != 0.0 {
        err = asc * (200.0 * err / asc).powf(1.5).min(1.0);
    }
    (k * h, err)
}

fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (k, err) = kronrod(f, a, b);
    if err <= tol.max(1e-14 * k.abs()) || depth == 0 {
        return k;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, 0.5 * tol, depth - 1) + adapt(f, m, b, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss-Kronrod quadrature of `f` over `[a, b]`, pre-split at
/// `breaks` and into `pieces` equal panels.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    let mut pts = vec![a, b];
    pts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    let pieces = 32;
    for i in 1..pieces {
        pts.push(a + (b - a) * i as f64 / pieces as f64);
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts.windows(2).map(|w| adapt(f, w[0], w[1], tol * (w[1] - w[0]) / (b - a), 30)).sum()
}

/// `(ln Z, mean, var)` of the unnormalized density `exp(logf)` on `[lo, hi]`,
/// where `peak` is near the mode.
pub fn density_moments(logf: &dyn Fn(f64) -> f64, lo: f64, hi: f64, peak: &[f64]) -> (f64, f64, f64) {
    let scan = 4001;
    let c = (0..scan)
        .map(|i| logf(lo + (hi - lo) * i as f64 / (scan - 1) as f64))
        .chain(peak.iter().filter(|&&p| p >= lo && p <= hi).map(|&p| logf(p)))
        .fold(f64::NEG_INFINITY, f64::max);
    let g = |x: f64| (logf(x) - c).exp();
    let z = integrate(&g, lo, hi, peak, 1e-13 * integrate(&g, lo, hi, peak, 1e-6));
    let mean = integrate(&|x| x * g(x), lo, hi, peak, 1e-13 * z * (1.0 + hi.abs())) / z;
    let var = integrate(&|x| (x - mean).powi(2) * g(x), lo, hi, peak, 1e-14 * z) / z;
    (z.ln() + c, mean, var)
}

pub fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}

/// `ln ∫_0^∞ N(x; θ, φ) dx` by quadrature.
pub fn ln_trunc_mass(theta: f64, phi: f64) -> f64 {
    let sd = phi.sqrt();
    let hi = theta.max(0.0) + 40.0 * sd;
    density_moments(&|x| ln_normal(x, theta, phi), 0.0, hi, &[theta.max(0.0)]).0
}

/// Upper integration limit covering every truncated component and a likelihood.
pub fn slab_upper(comps: &[(f64, f64, f64)], rhat: f64, nu: f64) -> f64 {
    comps
        .iter()
        .map(|&(_, t, p)| t.max(0.0) + 40.0 * p.sqrt())
        .fold(rhat.max(0.0) + 40.0 * nu.sqrt(), f64::max)
}

/// Exact chain posterior by conditioning the dense joint Gaussian of
/// `e_1..e_M` on observations `r_j = e_j + n_j` for `j` in `obs`.
pub fn dense_chain(
    incoming: &[GaussianBelief],
    p: &GmChainParams,
    obs: &[usize],
) -> (DVector<f64>, DMatrix<f64>) {
    let m = incoming.len();
    let rho = 1.0 - p.eta;
    let sigma = DMatrix::from_fn(m, m, |i, j| p.sigma2 * rho.powi((i as i32 - j as i32).abs()));
    let obs: Vec<usize> = obs.iter().copied().filter(|&j| incoming[j].var.is_finite()).collect();
    let k = obs.len();
    if k == 0 {
        return (DVector::from_element(m, p.kappa), sigma);
    }
    let sjj = DMatrix::from_fn(k, k, |a, b| {
        sigma[(obs[a], obs[b])] + if a == b { incoming[obs[a]].var } else { 0.0 }
    });
    let sxj = DMatrix::from_fn(m, k, |i, b| sigma[(i, obs[b])]);
    let resid = DVector::from_fn(k, |a, _| incoming[obs[a]].mean - p.kappa);
    let chol = sjj.cholesky().expect("observation covariance is positive definite");
    let gain_t = chol.solve(&sxj.transpose());
    let mean = DVector::from_element(m, p.kappa) + gain_t.transpose() * resid;
    let cov = &sigma - sxj * gain_t;
    (mean, cov)
}

/// Draw a chain from its generative model.
pub fn sample_chain<R: Rng>(rng: &mut R, p: &GmChainParams, m: usize) -> Vec<f64> {
    use rand_distr::StandardNormal;
    let mut e = Vec::with_capacity(m);
    let z: f64 = rng.sample(StandardNormal);
    e.push(p.kappa + p.sigma2.sqrt() * z);
    let sd = (p.eta * (2.0 - p.eta) * p.sigma2).sqrt();
    for i in 1..m {
        let z: f64 = rng.sample(StandardNormal);
        e.push((1.0 - p.eta) * e[i - 1] + p.eta * p.kappa + sd * z);
    }
    e
}

/// 4-neighbor edges of a row-major `rows × cols` grid.
pub fn grid_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                e.push((i, i + 1));
            }
            if r + 1 < rows {
                e.push((i, i + cols));
            }
        }
    }
    e
}

/// Exact marginals `P(d_t = +1)` of `exp(β Σ d_i d_j − α Σ d_t) Π γ_t^[d=+1] (1−γ_t)^[d=−1]`
/// by enumerating every configuration.
pub fn ising_marginals(incoming: &[f64], rows: usize, cols: usize, alpha: f64, beta: f64) -> Vec<f64> {
    let t = rows * cols;
    assert!(t <= 20);
    let edges = grid_edges(rows, cols);
    let spin = |s: u32, i: usize| if s >> i & 1 == 1 { 1.0 } else { -1.0 };
    let logw: Vec<f64> = (0..1u32 << t)
        .map(|s| {
            let mut lw = 0.0;
            for &(i, j) in &edges {
                lw += beta * spin(s, i) * spin(s, j);
            }
            for (i, &g) in incoming.iter().enumerate() {
                let d = spin(s, i);
                lw += -alpha * d + if d > 0.0 { g.ln() } else { (1.0 - g).ln() };
            }
            lw
        })
        .collect();
    let c = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - c).exp()).collect();
    let z: f64 = w.iter().sum();
    (0..t)
        .map(|i| (0..1u32 << t).filter(|s| s >> i & 1 == 1).map(|s| w[s as usize]).sum::<f64>() / z)
        .collect()
}

/// Checkerboard Gibbs sampler for the Ising field without evidence.
pub fn gibbs_ising<R: Rng>(rng: &mut R, rows: usize, cols: usize, alpha: f64, beta: f64, sweeps: usize) -> Vec<f64> {
    let mut d: Vec<f64> = (0..rows * cols).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    for _ in 0..sweeps {
        for parity in 0..2 {
            for r in 0..rows {
                for c in 0..cols {
                    if (r + c) % 2 != parity {
                        continue;
                    }
                    let mut s = 0.0;
                    if r > 0 {
                        s += d[(r - 1) * cols + c];
                    }
                    if r + 1 < rows {
                        s += d[(r + 1) * cols + c];
                    }
                    if c > 0 {
                        s += d[r * cols + c - 1];
                    }
                    if c + 1 < cols {
                        s += d[r * cols + c + 1];
                    }
                    let h = beta * s - alpha;
                    let p_up = 1.0 / (1.0 + (-2.0 * h).exp());
                    d[r * cols + c] = if rng.random::<f64>() < p_up { 1.0 } else { -1.0 };
                }
            }
        }
    }
    d
}

/// One randomized point of the scalar-denoiser grid.
#[derive(Debug, Clone)]
pub struct DenoiserCase {
    pub theta: f64,
    pub phi: f64,
    pub rhat: f64,
    pub nu: f64,
    pub pi: f64,
    /// `(weight, θ, φ)` per slab component.
    pub slab: Vec<(f64, f64, f64)>,
}

pub fn denoiser_case<R: Rng>(rng: &mut R) -> DenoiserCase {
    let logu = |rng: &mut R, lo: f64, hi: f64| (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp();
    let l = rng.random_range(1..=3);
    let mut slab: Vec<(f64, f64, f64)> = (0..l)
        .map(|_| (rng.random_range(0.1..1.0), rng.random_range(-1.0..2.0), logu(rng, 0.01, 1.0)))
        .collect();
    let tot: f64 = slab.iter().map(|c| c.0).sum();
    slab.iter_mut().for_each(|c| c.0 /= tot);
    DenoiserCase {
        theta: rng.random_range(-3.0..3.0),
        phi: logu(rng, 0.01, 4.0),
        rhat: rng.random_range(-1.0..3.0),
        nu: logu(rng, 1e-3, 2.0),
        pi: rng.random_range(0.05..0.95),
        slab,
    }
}

/// Quadrature reference for the spike-and-slab posterior:
/// `(post_pi, mean, var, llr_active)`.
pub fn spike_slab_oracle(slab: &[(f64, f64, f64)], pi: f64, rhat: f64, nu: f64) -> (f64, f64, f64, f64) {
    let masses: Vec<f64> = slab.iter().map(|&(_, t, p)| ln_trunc_mass(t, p)).collect();
    let ln_slab = |x: f64| {
        let terms: Vec<f64> = slab
            .iter()
            .zip(&masses)
            .map(|(&(w, t, p), lz)| w.ln() + ln_normal(x, t, p) - lz)
            .collect();
        let c = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        c + terms.iter().map(|v| (v - c).exp()).sum::<f64>().ln()
    };
    let mut peaks: Vec<f64> = vec![rhat.max(0.0), 0.0];
    for &(_, t, p) in slab {
        peaks.push(t.max(0.0));
        peaks.push(((t * nu + rhat * p) / (p + nu)).max(0.0));
    }
    let hi = slab_upper(slab, rhat, nu);
    let (lz, m, v) = density_moments(&|x| ln_slab(x) + ln_normal(rhat, x, nu), 0.0, hi, &peaks);
    let llr = lz - ln_normal(0.0, rhat, nu);
    let post_pi = 1.0 / (1.0 + (-(pi / (1.0 - pi)).ln() - llr).exp());
    let mean = post_pi * m;
    let second = post_pi * (v + m * m);
    (post_pi, mean, second - mean * mean, llr)
}

/// Maximum absolute deviation of each scalar denoiser from quadrature over
/// `points` random cases: `[moments, posterior, spike-slab, gtod]`.
pub fn denoiser_sweep(points: usize, seed: u64) -> [f64; 4] {
    use hutamp::priors::*;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 4];
    for _ in 0..points {
        let c = denoiser_case(&mut rng);
        let hi = c.theta.max(0.0) + 40.0 * c.phi.sqrt();
        let (lz, m, v) = density_moments(&|x| ln_normal(x, c.theta, c.phi), 0.0, hi, &[c.theta.max(0.0)]);
        let got = trunc_gauss_moments(c.theta, c.phi).unwrap();
        worst[0] = worst[0]
            .max((got.mean - m).abs())
            .max((got.var - v).abs())
            .max((got.log_normalizer - lz).abs());

        let lz0 = ln_trunc_mass(c.theta, c.phi);
        let pm = (c.theta * c.nu + c.rhat * c.phi) / (c.phi + c.nu);
        let hi = hi.max(c.rhat.max(0.0) + 40.0 * c.nu.sqrt());
        let (le, m, v) = density_moments(
            &|x| ln_normal(x, c.theta, c.phi) - lz0 + ln_normal(c.rhat, x, c.nu),
            0.0,
            hi,
            &[c.theta.max(0.0), pm.max(0.0), c.rhat.max(0.0)],
        );
        let got = trunc_gauss_posterior(&TruncGauss::new(c.theta, c.phi).unwrap(), c.rhat, c.nu).unwrap();
        worst[1] = worst[1]
            .max((got.mean - m).abs())
            .max((got.var - v).abs())
            .max((got.log_evidence - le).abs());

        let slab = NngmParams::new(
            c.slab.iter().map(|&(weight, theta, phi)| NngmComponent { weight, theta, phi }).collect(),
        )
        .unwrap();
        let (pp, m, v, llr) = spike_slab_oracle(&c.slab, c.pi, c.rhat, c.nu);
        let got = spike_slab_posterior(c.pi, &slab, c.rhat, c.nu).unwrap();
        worst[2] = worst[2]
            .max((got.post_pi - pp).abs())
            .max((got.mean - m).abs())
            .max((got.var - v).abs())
            .max((got.llr_active - llr).abs());

        let g = gtod_message(&slab, c.rhat, c.nu).unwrap().p_active;
        let want = 1.0 / (1.0 + (-llr).exp());
        worst[3] = worst[3].max((g - want).abs());
    }
    worst
}

/// Worst deviation of `gm_smooth` from dense joint-Gaussian inference over
/// random chains, and worst violation of `extrinsic × incoming = posterior`.
pub fn chain_sweep(lengths: &[usize], seeds: u64) -> (f64, f64) {
    use hutamp::chain::gm_smooth;
    use hutamp::priors::gaussian_product;
    let (mut worst, mut ident) = (0.0f64, 0.0f64);
    for &m in lengths {
        for seed in 0..seeds {
            let mut rng = seeded(seed * 1000 + m as u64);
            let p = GmChainParams::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-4.6f64..0.7).exp(),
                rng.random_range(0.05..1.0),
            )
            .unwrap();
            let incoming: Vec<GaussianBelief> = (0..m)
                .map(|_| {
                    let var = if rng.random::<f64>() < 0.1 { f64::INFINITY } else { (rng.random_range(-4.6f64..1.6)).exp() };
                    GaussianBelief::new(rng.random_range(-2.0..2.0), var)
                })
                .collect();
            let out = gm_smooth(&incoming, &p).unwrap();
            let all: Vec<usize> = (0..m).collect();
            let (mean, cov) = dense_chain(&incoming, &p, &all);
            for i in 0..m {
                worst = worst
                    .max((out.posterior[i].mean - mean[i]).abs())
                    .max((out.posterior[i].var - cov[(i, i)]).abs());
                if i + 1 < m {
                    worst = worst.max((out.pair_cross[i] - (cov[(i, i + 1)] + mean[i] * mean[i + 1])).abs());
                }
                let others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
                let (em, ec) = dense_chain(&incoming, &p, &others);
                worst = worst.max((out.extrinsic[i].mean - em[i]).abs()).max((out.extrinsic[i].var - ec[(i, i)]).abs());
                let (pm, pv) = gaussian_product(out.extrinsic[i].mean, out.extrinsic[i].var, incoming[i].mean, incoming[i].var).unwrap();
                ident = ident.max((pm - out.posterior[i].mean).abs()).max((pv - out.posterior[i].var).abs());
            }
        }
    }
    (worst, ident)
}

pub fn seeded(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Simulate a chain observed with tiny noise and run `sweeps` EM passes
/// starting from `start`.
pub fn gm_em_recovery(truth: &GmChainParams, start: &GmChainParams, m: usize, sweeps: usize, seed: u64) -> GmChainParams {
    use hutamp::chain::{em_update_gm, gm_smooth};
    use rand_distr::StandardNormal;
    let mut rng = seeded(seed);
    let e = sample_chain(&mut rng, truth, m);
    let nu: f64 = 1e-6;
    let incoming: Vec<GaussianBelief> = e
        .iter()
        .map(|&x| {
            let z: f64 = rng.sample(StandardNormal);
            GaussianBelief::new(x + nu.sqrt() * z, nu)
        })
        .collect();
    let mut p = *start;
    for _ in 0..sweeps {
        let sm = gm_smooth(&incoming, &p).unwrap();
        p = em_update_gm(&sm.posterior, &sm.pair_cross, &p).unwrap();
    }
    p
}

/// Worst errors of `mrf_bp` over random `(α, β, incoming)` draws, with
/// `α, β` uniform on `[0, ab_max]`: `chain` against enumeration on 1×9
/// chains (posterior and extrinsic), `loopy` per-node total variation
/// against enumeration on 3×3 grids, and `reference` against
/// [`reference_loopy_bp`] on the same grids.
#[derive(Debug, Clone, Copy)]
pub struct MrfSweep {
    pub chain: f64,
    pub loopy: f64,
    pub reference: f64,
    /// Grids whose worst node exceeds 0.05 total variation.
    pub loopy_over: usize,
}

pub fn mrf_sweep(seeds: u64, ab: Option<(f64, f64)>) -> MrfSweep {
    use hutamp::mrf::{mrf_bp, MrfOptions, MrfParams, PixelGrid};
    let tight = MrfOptions { tol: 1e-14, max_sweeps: 5000, ..MrfOptions::default() };
    let mut r = MrfSweep { chain: 0.0, loopy: 0.0, reference: 0.0, loopy_over: 0 };
    for seed in 0..seeds {
        let mut rng = seeded(7000 + seed);
        let (a, b) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let (a, b) = ab.unwrap_or((a, b));
        let p = MrfParams::new(a, b).unwrap();
        let inc: Vec<f64> = (0..9).map(|_| rng.random_range(0.02..0.98)).collect();

        let out = mrf_bp(&inc, PixelGrid::new(1, 9).unwrap(), &p, &tight).unwrap();
        let exact = ising_marginals(&inc, 1, 9, p.alpha, p.beta);
        for i in 0..9 {
            r.chain = r.chain.max((out.posterior[i] - exact[i]).abs());
            // extrinsic: marginal with node i's own evidence removed
            let mut without = inc.clone();
            without[i] = 0.5;
            let ex = ising_marginals(&without, 1, 9, p.alpha, p.beta)[i];
            r.chain = r.chain.max((out.extrinsic[i] - ex).abs());
        }

        let out = mrf_bp(&inc, PixelGrid::new(3, 3).unwrap(), &p, &tight).unwrap();
        let exact = ising_marginals(&inc, 3, 3, p.alpha, p.beta);
        let reference = reference_loopy_bp(&inc, 3, 3, p.alpha, p.beta, 3000);
        let mut grid_worst = 0.0f64;
        for i in 0..9 {
            grid_worst = grid_worst.max((out.posterior[i] - exact[i]).abs());
            r.reference = r.reference.max((out.posterior[i] - reference[i]).abs());
        }
        r.loopy = r.loopy.max(grid_worst);
        if grid_worst >= 0.05 {
            r.loopy_over += 1;
        }
    }
    r
}

/// Gibbs-sample an Ising field at `truth`, observe it through near-certain
/// beliefs, and run `rounds` EM calls of BP plus parameter update.
pub fn ising_em_recovery(truth: (f64, f64), start: (f64, f64), side: usize, rounds: usize, seed: u64) -> (f64, f64) {
    use hutamp::mrf::{em_update_mrf, mrf_bp, MrfEmOptions, MrfOptions, MrfParams, PixelGrid};
    let mut rng = seeded(seed);
    let d = gibbs_ising(&mut rng, side, side, truth.0, truth.1, 2000);
    let inc: Vec<f64> = d.iter().map(|&v| if v > 0.0 { 1.0 - 1e-6 } else { 1e-6 }).collect();
    let grid = PixelGrid::new(side, side).unwrap();
    let mut p = MrfParams::new(start.0, start.1).unwrap();
    for _ in 0..rounds {
        let out = mrf_bp(&inc, grid, &p, &MrfOptions::default()).unwrap();
        p = em_update_mrf(&out.posterior, &out.pairs, grid, &p, &MrfEmOptions::default()).unwrap();
    }
    (p.alpha, p.beta)
}

/// Textbook sum-product loopy BP in the probability domain (state 0 is
/// `d = -1`, state 1 is `d = +1`), damped synchronous updates.
pub fn reference_loopy_bp(incoming: &[f64], rows: usize, cols: usize, alpha: f64, beta: f64, iters: usize) -> Vec<f64> {
    let t = rows * cols;
    let edges = grid_edges(rows, cols);
    let spin = [-1.0, 1.0];
    let unary: Vec<[f64; 2]> = incoming
        .iter()
        .map(|&g| [(1.0 - g) * (alpha).exp(), g * (-alpha).exp()])
        .collect();
    // directed messages: 2k is i→j, 2k+1 is j→i
    let mut msg = vec![[0.5, 0.5]; 2 * edges.len()];
    let dir = |k: usize| if k % 2 == 0 { edges[k / 2] } else { (edges[k / 2].1, edges[k / 2].0) };
    for _ in 0..iters {
        let mut next = msg.clone();
        for k in 0..msg.len() {
            let (from, to) = dir(k);
            let mut b = unary[from];
            for (k2, m) in msg.iter().enumerate() {
                let (f2, t2) = dir(k2);
                if t2 == from && f2 != to {
                    b[0] *= m[0];
                    b[1] *= m[1];
                }
            }
            let mut out = [0.0; 2];
            for (xj, o) in out.iter_mut().enumerate() {
                *o = (0..2).map(|xi| b[xi] * (beta * spin[xi] * spin[xj]).exp()).sum();
            }
            let z = out[0] + out[1];
            next[k] = [0.5 * msg[k][0] + 0.5 * out[0] / z, 0.5 * msg[k][1] + 0.5 * out[1] / z];
        }
        msg = next;
    }
    (0..t)
        .map(|i| {
            let mut b = unary[i];
            for (k, m) in msg.iter().enumerate() {
                if dir(k).1 == i {
                    b[0] *= m[0];
                    b[1] *= m[1];
                }
            }
            b[1] / (b[0] + b[1])
        })
        .collect()
}

/// Draw `n` samples of `N+(θ, φ)`, observe them with variance `nu`, and run
/// `passes` NNGM EM updates of a one-component mixture from `start`.
pub fn nngm_em_recovery(truth: (f64, f64), start: (f64, f64), n: usize, passes: usize, seed: u64) -> Vec<(f64, f64)> {
    use hutamp::priors::NngmParams;
    use hutamp::turbo::em_update_nngm;
    use rand_distr::StandardNormal;
    let mut rng = seeded(seed);
    let nu: f64 = 1e-4;
    let rhat: Vec<f64> = (0..n)
        .map(|_| {
            let x = loop {
                let z: f64 = rng.sample(StandardNormal);
                let x = truth.0 + truth.1.sqrt() * z;
                if x >= 0.0 {
                    break x;
                }
            };
            let z: f64 = rng.sample(StandardNormal);
            x + nu.sqrt() * z
        })
        .collect();
    let nur = vec![nu; n];
    let pi = vec![1.0; n];
    let mut p = NngmParams::single(start.0, start.1).unwrap();
    let mut path = vec![start];
    for _ in 0..passes {
        p = em_update_nngm(&rhat, &nur, &pi, &p).unwrap().0;
        path.push((p.components[0].theta, p.components[0].phi));
    }
    path
}

/// `|Σ_n μ_n^a (1/M) Σ_m (s_mn − μ)|` for a random instance with `μ` taken
/// from the mean removal of `Y = SA (+ noise)`.
pub fn mean_removal_weighted_average(m: usize, n: usize, t: usize, snr_db: Option<f64>, seed: u64) -> f64 {
    use hutamp::data::{mean_remove, HsiCube};
    use rand_distr::{Distribution, Gamma, StandardNormal};
    let mut rng = seeded(seed);
    let s = DMatrix::from_fn(m, n, |_, _| rng.random_range(0.0f64..1.0));
    let g = Gamma::new(1.0, 1.0).unwrap();
    let mut a: DMatrix<f64> = DMatrix::from_fn(n, t, |_, _| g.sample(&mut rng));
    for mut col in a.column_iter_mut() {
        let tot = col.sum();
        col /= tot;
    }
    let z = &s * &a;
    let y = match snr_db {
        None => z,
        Some(snr) => {
            let sd: f64 = (z.norm_squared() / ((m * t) as f64 * 10f64.powf(snr / 10.0))).sqrt();
            z.map(|v| {
                let e: f64 = rng.sample(StandardNormal);
                v + sd * e
            })
        }
    };
    let (mu, _) = mean_remove(&HsiCube::new(y, 1, t).unwrap()).unwrap();
    let mua: Vec<f64> = a.row_iter().map(|r| r.mean()).collect();
    (0..n).map(|k| mua[k] * s.column(k).add_scalar(-mu).mean()).sum::<f64>().abs()
}
