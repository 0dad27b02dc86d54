//! The turbo schedule: BiG-AMP on the bilinear model alternating with
//! Gauss-Markov smoothing of each endmember and Ising BP on each abundance
//! support map, with one EM update of all parameters per turbo iteration.

use crate::baselines::fsnmf_extract;
use crate::bigamp::{run_bigamp, BigAmpInit, BigAmpOptions, BigAmpOutput, BigAmpStatus, PriorA, PriorS};
use crate::chain::{em_update_gm, gm_smooth, GaussianBelief, GmChainParams};
use crate::data::{augment, mean_remove, Abundances, AugmentedObs, Endmembers, HsiCube};
use crate::error::{HutampError, Result};
use crate::mrf::{em_update_mrf, mrf_bp, MrfEmOptions, MrfOptions, MrfParams, PixelGrid};
use crate::priors::{
    clamp_pi, fit_trunc_gauss_moments, gtod_unchecked, spike_slab_unchecked, ComponentPosterior, NngmComponent,
    NngmParams,
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::time::Instant;

const SIGMA2_FLOOR: f64 = 1e-12;
const ETA_RANGE: (f64, f64) = (1e-6, 1.0);
const PSI_FLOOR: f64 = 1e-300;
const PHI_FLOOR: f64 = 1e-12;
/// Total posterior activity below which a material's NNGM is left unchanged.
const ACTIVE_FLOOR: f64 = 1e-9;

/// All learned parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub psi: DVector<f64>,
    pub nngm: Vec<NngmParams>,
    pub gm: Vec<GmChainParams>,
    pub mrf: Vec<MrfParams>,
}

impl ModelParams {
    fn check(&self) -> Result<()> {
        if self.psi.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(HutampError::Numeric("noise variance left the positive reals".into()));
        }
        for p in &self.nngm {
            NngmParams::new(p.components.clone())?;
        }
        for g in &self.gm {
            GmChainParams::new(g.kappa, g.sigma2, g.eta)?;
        }
        for m in &self.mrf {
            MrfParams::new(m.alpha, m.beta)?;
        }
        Ok(())
    }

    /// Flat key → number/array map.
    pub fn to_flat_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert("psi".into(), self.psi.iter().copied().collect::<Vec<_>>().into());
        let per = |f: &dyn Fn(usize) -> f64| (0..self.gm.len()).map(f).collect::<Vec<f64>>();
        map.insert("kappa".into(), per(&|n| self.gm[n].kappa).into());
        map.insert("sigma2".into(), per(&|n| self.gm[n].sigma2).into());
        map.insert("eta".into(), per(&|n| self.gm[n].eta).into());
        map.insert("alpha".into(), per(&|n| self.mrf[n].alpha).into());
        map.insert("beta".into(), per(&|n| self.mrf[n].beta).into());
        let comp = |f: &dyn Fn(&NngmComponent) -> f64| {
            self.nngm
                .iter()
                .map(|p| p.components.iter().map(f).collect::<Vec<f64>>())
                .collect::<Vec<_>>()
        };
        map.insert("omega".into(), serde_json::to_value(comp(&|c| c.weight)).unwrap_or_default());
        map.insert("theta".into(), serde_json::to_value(comp(&|c| c.theta)).unwrap_or_default());
        map.insert("phi".into(), serde_json::to_value(comp(&|c| c.phi)).unwrap_or_default());
        serde_json::Value::Object(map)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnmixOptions {
    pub max_turbo: usize,
    /// Relative change of `Ẑ` that ends the turbo loop.
    pub turbo_tol: f64,
    /// NNGM components per material.
    pub l: usize,
    /// Initial SNR guess, in dB.
    pub snr0_db: f64,
    /// Gauss-Markov coupling across bands; off fixes `η = 1`.
    pub spectral_coherence: bool,
    /// Ising coupling across pixels; off fixes `β = 0`.
    pub spatial_coherence: bool,
    /// EM updates of the parameters.
    pub learn: bool,
    /// One noise variance shared by all bands.
    pub scalar_psi: bool,
    pub alpha0: f64,
    pub beta0: f64,
    pub bigamp: BigAmpOptions,
    pub mrf: MrfOptions,
    pub mrf_em: MrfEmOptions,
}

impl Default for UnmixOptions {
    fn default() -> Self {
        Self {
            max_turbo: 20,
            turbo_tol: 1e-6,
            l: 3,
            snr0_db: 10.0,
            spectral_coherence: true,
            spatial_coherence: true,
            learn: true,
            scalar_psi: false,
            alpha0: 0.4,
            beta0: 0.4,
            bigamp: BigAmpOptions::default(),
            mrf: MrfOptions::default(),
            mrf_em: MrfEmOptions::default(),
        }
    }
}

/// Per-iteration diagnostics, one `log.jsonl` line each.
#[derive(Debug, Clone, Serialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub residual: f64,
    pub bigamp_iterations: usize,
    pub bigamp_status: String,
    pub mrf_converged: bool,
    pub nngm_held: Vec<usize>,
    pub params: serde_json::Value,
}

/// Everything exchanged between the subgraphs, plus current estimates.
#[derive(Debug, Clone)]
pub struct TurboState {
    pub obs: AugmentedObs,
    pub grid: PixelGrid,
    pub params: ModelParams,
    pub opts: UnmixOptions,
    /// Endmember priors fed to BiG-AMP, from the chains.
    pub prior_s: PriorS,
    /// Chain inputs `N(q̂, ν^q)`, `M × N` each.
    pub chain_in: Vec<Vec<GaussianBelief>>,
    /// Activity beliefs sent to the fields, `N × T`.
    pub gtod: DMatrix<f64>,
    /// Field-to-abundance activity priors `π`, `N × T`.
    pub pi: DMatrix<f64>,
    /// Latest BiG-AMP output; holds `(q̂, ν^q)`, `(r̂, ν^r)` and all estimates.
    pub bigamp: BigAmpOutput,
    pub iteration: usize,
    pub residuals: Vec<f64>,
    pub log: Vec<IterationLog>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub residuals: Vec<f64>,
    pub turbo_iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    pub negative_endmember: bool,
    pub wall_time_s: f64,
    #[serde(skip)]
    pub log: Vec<IterationLog>,
}

#[derive(Debug, Clone)]
pub struct UnmixResult {
    pub endmembers: Endmembers,
    pub abundances: Abundances,
    pub omega: ModelParams,
    pub diagnostics: Diagnostics,
}

/// Euclidean projection of `v` onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

fn noise_init(ytilde: &DMatrix<f64>, snr0_db: f64) -> f64 {
    let (m, t) = ytilde.shape();
    let snr = 10f64.powf(snr0_db / 10.0);
    ytilde.norm_squared() / ((snr + 1.0) * (m * t) as f64)
}

/// Empirical mean and variance of each column, variance floored.
pub fn spectral_moment_init(s0: &DMatrix<f64>) -> Vec<(f64, f64)> {
    s0.column_iter()
        .map(|c| {
            let k = c.len() as f64;
            let mean = c.mean();
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
            (mean, var.max(SIGMA2_FLOOR))
        })
        .collect()
}

/// Band-to-band correlation initialization of `η`, shared by all materials.
pub fn eta_init(ytilde: &DMatrix<f64>, psi0: &DVector<f64>) -> f64 {
    let (m, t) = ytilde.shape();
    if m < 2 {
        return 1.0;
    }
    let mut acc = 0.0;
    let mut used = 0usize;
    for i in 0..m - 1 {
        let denom = ytilde.row(i).norm_squared() - t as f64 * psi0[i];
        if denom > 0.0 {
            acc += ytilde.row(i).dot(&ytilde.row(i + 1)).abs() / denom;
            used += 1;
        }
    }
    if used == 0 {
        return 1.0;
    }
    (1.0 - acc / (m - 1) as f64).clamp(ETA_RANGE.0, ETA_RANGE.1)
}

fn spike_slab_prior_moments(pi: f64, slab: &NngmParams) -> (f64, f64) {
    let (m, v) = slab.moments();
    (pi * m, pi * (v + m * m) - (pi * m).powi(2))
}

fn augmented_s(s: &DMatrix<f64>) -> DMatrix<f64> {
    let m = s.nrows();
    let mut out = s.clone().insert_row(m, 1.0);
    out.row_mut(m).fill(1.0);
    out
}

/// Build the starting state: extracted endmembers, agnostic abundance
/// prior, one BiG-AMP run with the endmembers held fixed, then the
/// remaining parameters.
pub fn initialize(cube: &HsiCube, n: usize, opts: &UnmixOptions) -> Result<TurboState> {
    if n < 2 {
        return Err(HutampError::Parameter(format!("initialization needs N >= 2, got {n}")));
    }
    let (mu, ytilde) = mean_remove(cube)?;
    let (m, t) = ytilde.shape();
    let (t1, t2) = cube.spatial();
    let grid = PixelGrid::new(t1, t2)?;

    let s0 = fsnmf_extract(cube, n, true).map_err(|e| HutampError::Init {
        step: "endmember extraction",
        reason: e.to_string(),
    })?;
    let s0 = s0.s.add_scalar(-mu);

    let psi0 = noise_init(&ytilde, opts.snr0_db);
    if !(psi0 > 0.0) {
        return Err(HutampError::Init {
            step: "noise variance",
            reason: "data has no energy after mean removal".into(),
        });
    }
    let psi = DVector::from_element(m, psi0);
    let obs = augment(&ytilde, mu, &psi)?;

    let slab = NngmParams::uniform_fit(opts.l)?;
    let nngm = vec![slab.clone(); n];
    let pi = DMatrix::from_element(n, t, 0.5);
    let prior_s = PriorS::dirac(augmented_s(&s0));
    let (am, av) = spike_slab_prior_moments(0.5, &slab);
    let init = BigAmpInit {
        shat: prior_s.mean.clone(),
        svar: DMatrix::zeros(m + 1, n),
        ahat: DMatrix::from_element(n, t, am),
        avar: DMatrix::from_element(n, t, av),
    };
    let prior_a = PriorA::SpikeSlab {
        pi: pi.clone(),
        slabs: nngm.clone(),
    };
    let out = run_bigamp(&obs.ybar, &prior_s, &prior_a, &obs.psi, &init, &opts.bigamp).map_err(|e| HutampError::Init {
        step: "initial BiG-AMP run",
        reason: e.to_string(),
    })?;

    let eta0 = if opts.spectral_coherence { eta_init(&ytilde, &psi) } else { 1.0 };
    let gm = spectral_moment_init(&s0)
        .into_iter()
        .map(|(k, v)| GmChainParams::new(k, v, eta0))
        .collect::<Result<Vec<_>>>()?;
    let beta0 = if opts.spatial_coherence { opts.beta0 } else { 0.0 };
    let mrf = vec![MrfParams::new(opts.alpha0, beta0)?; n];
    let params = ModelParams { psi, nngm, gm, mrf };
    params.check()?;

    let residual = (ytilde - out.zplug.rows(0, m)).norm();
    Ok(TurboState {
        obs,
        grid,
        params,
        opts: *opts,
        prior_s,
        chain_in: vec![Vec::new(); n],
        gtod: DMatrix::from_element(n, t, 0.5),
        pi,
        bigamp: out,
        iteration: 0,
        residuals: vec![residual],
        log: Vec::new(),
    })
}

/// NNGM M-step for one material from its abundance messages and priors.
/// Returns the old parameters and `false` when no element is active.
pub fn em_update_nngm(rhat: &[f64], nur: &[f64], pi: &[f64], old: &NngmParams) -> Result<(NngmParams, bool)> {
    let l = old.len();
    let mut comps = vec![ComponentPosterior::default(); l];
    let mut w = vec![0.0; l];
    let mut s1 = vec![0.0; l];
    let mut s2 = vec![0.0; l];
    let mut active = 0.0;
    for k in 0..rhat.len() {
        let post = spike_slab_unchecked(pi[k], old, rhat[k], nur[k], &mut comps);
        active += post.post_pi;
        for (j, c) in comps.iter().enumerate() {
            let r = post.post_pi * c.resp;
            w[j] += r;
            s1[j] += r * c.mean;
            s2[j] += r * (c.var + c.mean * c.mean);
        }
    }
    if !(active > ACTIVE_FLOOR) {
        return Ok((old.clone(), false));
    }
    let mut out = Vec::with_capacity(l);
    for j in 0..l {
        let c = &old.components[j];
        if w[j] <= ACTIVE_FLOOR * active {
            out.push(NngmComponent { weight: w[j] / active, ..*c });
            continue;
        }
        let fit = fit_trunc_gauss_moments(s1[j] / w[j], s2[j] / w[j]);
        out.push(NngmComponent {
            weight: w[j] / active,
            theta: fit.theta,
            phi: fit.phi.max(PHI_FLOOR),
        });
    }
    let total: f64 = out.iter().map(|c| c.weight).sum();
    out.iter_mut().for_each(|c| c.weight /= total);
    Ok((NngmParams::new(out)?, true))
}

/// Per-band noise variances from the BiG-AMP output-plane posterior.
pub fn em_update_psi(ytilde: &DMatrix<f64>, zhat: &DMatrix<f64>, zvar: &DMatrix<f64>, scalar: bool) -> DVector<f64> {
    let (m, t) = ytilde.shape();
    let per_band = DVector::from_fn(m, |i, _| {
        let s: f64 = (0..t)
            .map(|j| (ytilde[(i, j)] - zhat[(i, j)]).powi(2) + zvar[(i, j)])
            .sum();
        (s / t as f64).max(PSI_FLOOR)
    });
    if scalar {
        DVector::from_element(m, per_band.mean())
    } else {
        per_band
    }
}

/// Noise and NNGM updates from the current state. Also returns the
/// materials whose NNGM was held for lack of active elements.
pub fn em_update_noise_nngm(state: &TurboState) -> Result<(ModelParams, Vec<usize>)> {
    let m = state.obs.bands();
    let out = &state.bigamp;
    let ytilde = state.obs.ytilde();
    let psi = em_update_psi(&ytilde, &out.zhat.rows(0, m).into_owned(), &out.zvar.rows(0, m).into_owned(), state.opts.scalar_psi);
    let mut nngm = Vec::with_capacity(state.params.nngm.len());
    let mut held = Vec::new();
    for (n, old) in state.params.nngm.iter().enumerate() {
        let r: Vec<f64> = out.rhat.row(n).iter().copied().collect();
        let v: Vec<f64> = out.nur.row(n).iter().copied().collect();
        let p: Vec<f64> = state.pi.row(n).iter().copied().collect();
        let (upd, ok) = em_update_nngm(&r, &v, &p, old)?;
        if !ok {
            held.push(n);
        }
        nngm.push(upd);
    }
    let params = ModelParams {
        psi,
        nngm,
        ..state.params.clone()
    };
    Ok((params, held))
}

/// One turbo iteration: message conversions, chain smoothing, field BP,
/// one EM update, then BiG-AMP under the new priors.
pub fn turbo_iterate(mut state: TurboState) -> Result<TurboState> {
    let it = state.iteration + 1;
    let wrap = |e: HutampError| HutampError::Iteration {
        iteration: it,
        source: Box::new(e),
    };
    let m = state.obs.bands();
    let n = state.params.gm.len();
    let t = state.grid.len();
    let opts = state.opts;

    // endmember side: q-messages into the chains, extrinsic priors back
    let mut new_gm = state.params.gm.clone();
    let mut prior_mean = state.prior_s.mean.clone();
    let mut prior_var = state.prior_s.var.clone();
    for k in 0..n {
        let incoming: Vec<GaussianBelief> = (0..m)
            .map(|i| GaussianBelief::new(state.bigamp.qhat[(i, k)], state.bigamp.nuq[(i, k)]))
            .collect();
        let sm = gm_smooth(&incoming, &state.params.gm[k]).map_err(wrap)?;
        for i in 0..m {
            prior_mean[(i, k)] = sm.extrinsic[i].mean;
            prior_var[(i, k)] = sm.extrinsic[i].var;
        }
        if opts.learn {
            let mut upd = em_update_gm(&sm.posterior, &sm.pair_cross, &state.params.gm[k]).map_err(wrap)?;
            if !opts.spectral_coherence {
                upd.eta = 1.0;
            }
            new_gm[k] = upd;
        }
        state.chain_in[k] = incoming;
    }
    state.prior_s = PriorS {
        mean: prior_mean,
        var: prior_var,
    };

    // abundance side: activity beliefs into the fields, priors back
    let mut new_mrf = state.params.mrf.clone();
    let mut mrf_converged = true;
    for k in 0..n {
        let slab = &state.params.nngm[k];
        let gam: Vec<f64> = (0..t)
            .map(|j| gtod_unchecked(slab, state.bigamp.rhat[(k, j)], state.bigamp.nur[(k, j)]))
            .collect();
        let bp = mrf_bp(&gam, state.grid, &state.params.mrf[k], &opts.mrf).map_err(wrap)?;
        mrf_converged &= bp.converged;
        for j in 0..t {
            state.gtod[(k, j)] = gam[j];
            state.pi[(k, j)] = clamp_pi(bp.extrinsic[j]);
        }
        if opts.learn {
            let mut upd = em_update_mrf(&bp.posterior, &bp.pairs, state.grid, &state.params.mrf[k], &opts.mrf_em)
                .map_err(wrap)?;
            if !opts.spatial_coherence {
                upd.beta = 0.0;
            }
            new_mrf[k] = upd;
        }
    }

    let mut held = Vec::new();
    if opts.learn {
        let (p, h) = em_update_noise_nngm(&state).map_err(wrap)?;
        held = h;
        state.params = ModelParams {
            gm: new_gm,
            mrf: new_mrf,
            ..p
        };
        state.params.check().map_err(wrap)?;
        state.obs.psi = state.params.psi.clone();
    }

    let prior_a = PriorA::SpikeSlab {
        pi: state.pi.clone(),
        slabs: state.params.nngm.clone(),
    };
    let init = BigAmpInit {
        shat: state.bigamp.shat.clone(),
        svar: state.bigamp.svar.clone(),
        ahat: state.bigamp.ahat.clone(),
        avar: state.bigamp.avar.clone(),
    };
    let out = run_bigamp(&state.obs.ybar, &state.prior_s, &prior_a, &state.obs.psi, &init, &opts.bigamp).map_err(wrap)?;
    let residual = out.final_residual;
    state.log.push(IterationLog {
        iteration: it,
        residual,
        bigamp_iterations: out.iterations,
        bigamp_status: format!("{:?}", out.status),
        mrf_converged,
        nngm_held: held,
        params: state.params.to_flat_json(),
    });
    state.bigamp = out;
    state.residuals.push(residual);
    state.iteration = it;
    Ok(state)
}

fn finish(state: &TurboState, converged: bool, diverged: bool, start: Instant) -> Result<UnmixResult> {
    let m = state.obs.bands();
    let s = state.bigamp.shat.rows(0, m).add_scalar(state.obs.mu);
    let a_raw = &state.bigamp.ahat;
    let mut a = DMatrix::zeros(a_raw.nrows(), a_raw.ncols());
    for (j, col) in a_raw.column_iter().enumerate() {
        let p = project_simplex(col.as_slice());
        a.set_column(j, &DVector::from_vec(p));
    }
    let negative_endmember = s.iter().any(|&v| v < 0.0);
    Ok(UnmixResult {
        endmembers: Endmembers::new(s)?,
        abundances: Abundances::new(a)?,
        omega: state.params.clone(),
        diagnostics: Diagnostics {
            residuals: state.residuals.clone(),
            turbo_iterations: state.iteration,
            converged,
            diverged,
            negative_endmember,
            wall_time_s: start.elapsed().as_secs_f64(),
            log: state.log.clone(),
        },
    })
}

fn single_material(cube: &HsiCube, start: Instant) -> Result<UnmixResult> {
    let y = cube.data();
    let (m, t) = y.shape();
    let s = y.column_mean();
    let resid = (y - &s * DMatrix::from_element(1, t, 1.0)).norm();
    let psi = DVector::from_element(m, (resid * resid / (m * t) as f64).max(PSI_FLOOR));
    let (mean, var) = spectral_moment_init(&DMatrix::from_column_slice(m, 1, s.as_slice()))[0];
    Ok(UnmixResult {
        endmembers: Endmembers::new(DMatrix::from_column_slice(m, 1, s.as_slice()))?,
        abundances: Abundances::new(DMatrix::from_element(1, t, 1.0))?,
        omega: ModelParams {
            psi,
            nngm: vec![NngmParams::single(1.0, PHI_FLOOR)?],
            gm: vec![GmChainParams::new(mean, var, 1.0)?],
            mrf: vec![MrfParams::new(0.0, 0.0)?],
        },
        diagnostics: Diagnostics {
            residuals: vec![resid],
            turbo_iterations: 0,
            converged: true,
            diverged: false,
            negative_endmember: s.iter().any(|&v| v < 0.0),
            wall_time_s: start.elapsed().as_secs_f64(),
            log: Vec::new(),
        },
    })
}

/// Unmix `cube` into `n` materials.
pub fn unmix(cube: &HsiCube, n: usize, opts: &UnmixOptions) -> Result<UnmixResult> {
    let start = Instant::now();
    if n == 0 {
        return Err(HutampError::Parameter("N must be at least 1".into()));
    }
    if n == 1 {
        return single_material(cube, start);
    }
    let mut state = initialize(cube, n, opts)?;
    let mut best: Option<(f64, TurboState)> = None;
    let mut converged = false;
    let mut diverged = false;
    for _ in 0..opts.max_turbo {
        let prev = state.bigamp.zplug.clone();
        state = turbo_iterate(state)?;
        let resid = *state.residuals.last().expect("residual recorded");
        if state.bigamp.status == BigAmpStatus::Diverged {
            diverged = true;
            break;
        }
        if best.as_ref().is_none_or(|(r, _)| resid <= *r) {
            best = Some((resid, state.clone()));
        }
        let change = (&state.bigamp.zplug - &prev).norm() / state.bigamp.zplug.norm().max(f64::MIN_POSITIVE);
        if change < opts.turbo_tol {
            converged = true;
            break;
        }
    }
    if diverged {
        if let Some((_, b)) = best {
            state = b;
        }
    }
    finish(&state, converged, diverged, start)
}
