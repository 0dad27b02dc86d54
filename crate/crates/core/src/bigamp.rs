//! Bilinear generalized AMP on the augmented model `Ȳ ≈ S̄ A`.
//!
//! Rows `0..M` of `Ȳ` carry Gaussian noise with per-row variance `ψ_m`; the
//! last row is the noiseless sum-to-one constraint. Priors on `S̄` are
//! Gaussian per element (zero variance is a point mass); priors on `A` are
//! Gaussian or Bernoulli-NNGM per element.

use crate::error::{HutampError, Result};
use crate::priors::{gaussian_product_unchecked, spike_slab_unchecked, ComponentPosterior, NngmParams};
use nalgebra::{DMatrix, DVector};

/// Variances are capped here so that `0 · ∞` never arises.
pub(crate) const VAR_CAP: f64 = 1e20;

/// Likelihood of one row of `Ȳ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowKind {
    Gaussian(f64),
    Dirac,
}

/// Posterior mean and variance of `z` given `y` and the Gaussian message `N(z; p̂, ν^p)`.
pub fn likelihood_moments(y: f64, kind: RowKind, phat: f64, nup: f64) -> Result<(f64, f64)> {
    match kind {
        RowKind::Gaussian(psi) if !(psi > 0.0) => Err(HutampError::Parameter(format!(
            "noise variance must be positive, got {psi}"
        ))),
        RowKind::Gaussian(psi) => {
            if psi.is_infinite() {
                Ok((phat, nup))
            } else {
                Ok(gaussian_product_unchecked(y, psi, phat, nup))
            }
        }
        RowKind::Dirac => Ok((y, 0.0)),
    }
}

/// Element priors on `S̄`, `(M+1) × N`. A zero variance is a point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorS {
    pub mean: DMatrix<f64>,
    pub var: DMatrix<f64>,
}

impl PriorS {
    pub fn dirac(values: DMatrix<f64>) -> Self {
        let var = DMatrix::zeros(values.nrows(), values.ncols());
        Self { mean: values, var }
    }
}

/// Element priors on `A`, `N × T`.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorA {
    /// Zero variance is a point mass.
    Gaussian { mean: DMatrix<f64>, var: DMatrix<f64> },
    /// `(1-π_nt) δ(a) + π_nt ζ_n(a)`.
    SpikeSlab { pi: DMatrix<f64>, slabs: Vec<NngmParams> },
}

impl PriorA {
    fn shape(&self) -> (usize, usize) {
        match self {
            PriorA::Gaussian { mean, .. } => mean.shape(),
            PriorA::SpikeSlab { pi, .. } => pi.shape(),
        }
    }
}

/// Starting means and variances of both factors.
#[derive(Debug, Clone, PartialEq)]
pub struct BigAmpInit {
    pub shat: DMatrix<f64>,
    pub svar: DMatrix<f64>,
    pub ahat: DMatrix<f64>,
    pub avar: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BigAmpOptions {
    pub max_iters: usize,
    /// Initial damping step; `1` is undamped.
    pub step: f64,
    pub step_min: f64,
    pub adaptive: bool,
    /// Relative change of `ŜÂ` that counts as converged.
    pub tol: f64,
    pub var_floor: f64,
}

impl Default for BigAmpOptions {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            step: 0.3,
            step_min: 0.05,
            adaptive: true,
            tol: 1e-8,
            var_floor: 1e-13,
        }
    }
}

impl BigAmpOptions {
    fn validate(&self) -> Result<()> {
        let ok = self.step > 0.0
            && self.step <= 1.0
            && self.step_min > 0.0
            && self.step_min <= self.step
            && self.tol > 0.0
            && self.var_floor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(HutampError::Parameter(format!("invalid BiG-AMP options {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BigAmpStatus {
    Converged,
    MaxIters,
    /// Residual blew up at the smallest step; the output is the best state seen.
    Diverged,
}

#[derive(Debug, Clone)]
pub struct BigAmpOutput {
    pub qhat: DMatrix<f64>,
    pub nuq: DMatrix<f64>,
    pub rhat: DMatrix<f64>,
    pub nur: DMatrix<f64>,
    pub shat: DMatrix<f64>,
    pub svar: DMatrix<f64>,
    pub ahat: DMatrix<f64>,
    pub avar: DMatrix<f64>,
    /// Posterior of `Z̄` under the likelihood and the final output-plane message.
    pub zhat: DMatrix<f64>,
    pub zvar: DMatrix<f64>,
    /// Plug-in estimate `ŜÂ`.
    pub zplug: DMatrix<f64>,
    pub iterations: usize,
    pub final_residual: f64,
    pub status: BigAmpStatus,
}

struct Problem<'a> {
    ybar: &'a DMatrix<f64>,
    rows: Vec<RowKind>,
    prior_s: &'a PriorS,
    prior_a: &'a PriorA,
    floor: f64,
}

#[derive(Clone)]
struct State {
    shat: DMatrix<f64>,
    svar: DMatrix<f64>,
    ahat: DMatrix<f64>,
    avar: DMatrix<f64>,
    sbar: DMatrix<f64>,
    abar: DMatrix<f64>,
    uhat: DMatrix<f64>,
    uvar: DMatrix<f64>,
    nupbar: DMatrix<f64>,
    nup: DMatrix<f64>,
    qhat: DMatrix<f64>,
    nuq: DMatrix<f64>,
    rhat: DMatrix<f64>,
    nur: DMatrix<f64>,
    fresh: bool,
}

#[inline]
fn inv_capped(x: f64) -> f64 {
    if x > 1.0 / VAR_CAP {
        1.0 / x
    } else {
        VAR_CAP
    }
}

impl Problem<'_> {
    /// Weighted squared residual of the plug-in estimate.
    fn residual(&self, pbar: &DMatrix<f64>) -> f64 {
        let wmin = self
            .rows
            .iter()
            .filter_map(|r| match r {
                RowKind::Gaussian(p) => Some(*p),
                RowKind::Dirac => None,
            })
            .fold(f64::INFINITY, f64::min);
        let wdirac = if wmin.is_finite() { 1.0 / wmin } else { 1.0 };
        let mut acc = 0.0;
        for t in 0..pbar.ncols() {
            for (m, kind) in self.rows.iter().enumerate() {
                let d = self.ybar[(m, t)] - pbar[(m, t)];
                let w = match kind {
                    RowKind::Gaussian(p) => 1.0 / p,
                    RowKind::Dirac => wdirac,
                };
                acc += w * d * d;
            }
        }
        acc
    }

    /// Output-plane message `(p̂, ν^p, ν̄^p)` from the current estimates.
    fn output_plane(&self, st: &State) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let s2 = st.shat.component_mul(&st.shat);
        let a2 = st.ahat.component_mul(&st.ahat);
        let nupbar = &s2 * &st.avar + &st.svar * &a2;
        let nup = &nupbar + &st.svar * &st.avar;
        let pbar = &st.shat * &st.ahat;
        (pbar, nup, nupbar)
    }

    fn likelihood(&self, phat: &DMatrix<f64>, nup: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (mr, t) = phat.shape();
        let mut uhat = DMatrix::zeros(mr, t);
        let mut uvar = DMatrix::zeros(mr, t);
        let mut zhat = DMatrix::zeros(mr, t);
        let mut zvar = DMatrix::zeros(mr, t);
        for j in 0..t {
            for (m, kind) in self.rows.iter().enumerate() {
                let p = phat[(m, j)];
                let v = nup[(m, j)];
                let y = self.ybar[(m, j)];
                if v <= 0.0 {
                    zhat[(m, j)] = p;
                    continue;
                }
                let denom = match kind {
                    RowKind::Gaussian(psi) => v + psi,
                    RowKind::Dirac => v,
                };
                uhat[(m, j)] = (y - p) / denom;
                uvar[(m, j)] = 1.0 / denom;
                let (zh, zv) = match kind {
                    RowKind::Gaussian(psi) => gaussian_product_unchecked(y, *psi, p, v),
                    RowKind::Dirac => (y, 0.0),
                };
                zhat[(m, j)] = zh;
                zvar[(m, j)] = zv;
            }
        }
        (uhat, uvar, zhat, zvar)
    }

    fn denoise_s(&self, st: &mut State) {
        let floor = self.floor;
        for k in 0..st.qhat.len() {
            let pv = self.prior_s.var[k];
            if pv == 0.0 {
                st.shat[k] = self.prior_s.mean[k];
                st.svar[k] = 0.0;
            } else {
                let (m, v) = gaussian_product_unchecked(self.prior_s.mean[k], pv, st.qhat[k], st.nuq[k]);
                st.shat[k] = m;
                st.svar[k] = v.max(floor);
            }
        }
    }

    fn denoise_a(&self, st: &mut State, comps: &mut Vec<ComponentPosterior>) {
        let floor = self.floor;
        match self.prior_a {
            PriorA::Gaussian { mean, var } => {
                for k in 0..st.rhat.len() {
                    if var[k] == 0.0 {
                        st.ahat[k] = mean[k];
                        st.avar[k] = 0.0;
                    } else {
                        let (m, v) = gaussian_product_unchecked(mean[k], var[k], st.rhat[k], st.nur[k]);
                        st.ahat[k] = m;
                        st.avar[k] = v.max(floor);
                    }
                }
            }
            PriorA::SpikeSlab { pi, slabs } => {
                for t in 0..st.rhat.ncols() {
                    for (n, slab) in slabs.iter().enumerate() {
                        comps.resize(slab.len(), ComponentPosterior::default());
                        let post = spike_slab_unchecked(pi[(n, t)], slab, st.rhat[(n, t)], st.nur[(n, t)], comps);
                        st.ahat[(n, t)] = post.mean;
                        st.avar[(n, t)] = post.var.max(floor);
                    }
                }
            }
        }
    }

    /// One full sweep at damping `step`.
    fn sweep(&self, st: &mut State, step: f64, comps: &mut Vec<ComponentPosterior>) -> Result<()> {
        let (pbar, nup_new, nupbar_new) = self.output_plane(st);
        if st.fresh {
            st.nup = nup_new;
            st.nupbar = nupbar_new;
        } else {
            st.nup = &nup_new * step + &st.nup * (1.0 - step);
            st.nupbar = &nupbar_new * step + &st.nupbar * (1.0 - step);
        }
        let phat = pbar - st.uhat.component_mul(&st.nupbar);
        let (u_new, uvar_new, _, _) = self.likelihood(&phat, &st.nup);
        if st.fresh {
            st.uhat = u_new;
            st.uvar = uvar_new;
            st.sbar = st.shat.clone();
            st.abar = st.ahat.clone();
        } else {
            st.uhat = &u_new * step + &st.uhat * (1.0 - step);
            st.uvar = &uvar_new * step + &st.uvar * (1.0 - step);
            st.sbar = &st.shat * step + &st.sbar * (1.0 - step);
            st.abar = &st.ahat * step + &st.abar * (1.0 - step);
        }
        st.fresh = false;

        let sb2 = st.sbar.component_mul(&st.sbar);
        let ab2 = st.abar.component_mul(&st.abar);
        let r_prec = sb2.transpose() * &st.uvar;
        let r_onsager = st.svar.transpose() * &st.uvar;
        let r_lin = st.sbar.transpose() * &st.uhat;
        for k in 0..st.rhat.len() {
            let nu = inv_capped(r_prec[k]);
            st.nur[k] = nu;
            st.rhat[k] = st.abar[k] * (1.0 - nu * r_onsager[k]) + nu * r_lin[k];
        }
        let q_prec = &st.uvar * ab2.transpose();
        let q_onsager = &st.uvar * st.avar.transpose();
        let q_lin = &st.uhat * st.abar.transpose();
        for k in 0..st.qhat.len() {
            let nu = inv_capped(q_prec[k]);
            st.nuq[k] = nu;
            st.qhat[k] = st.sbar[k] * (1.0 - nu * q_onsager[k]) + nu * q_lin[k];
        }
        if st.rhat.iter().chain(st.qhat.iter()).any(|v| !v.is_finite()) {
            return Err(HutampError::Numeric("non-finite BiG-AMP message".into()));
        }
        self.denoise_a(st, comps);
        self.denoise_s(st);
        Ok(())
    }
}

fn check_shapes(ybar: &DMatrix<f64>, prior_s: &PriorS, prior_a: &PriorA, psi: &DVector<f64>, init: &BigAmpInit) -> Result<()> {
    let (mr, t) = ybar.shape();
    if mr < 1 {
        return Err(HutampError::Dimension("observation has no rows".into()));
    }
    let n = prior_s.mean.ncols();
    let bad = |what: &str, got: (usize, usize), want: (usize, usize)| {
        Err(HutampError::Dimension(format!("{what} is {got:?}, expected {want:?}")))
    };
    if psi.len() + 1 != mr {
        return Err(HutampError::Dimension(format!("psi has length {} for {} rows", psi.len(), mr)));
    }
    if prior_s.mean.shape() != (mr, n) || prior_s.var.shape() != (mr, n) {
        return bad("endmember prior", prior_s.var.shape(), (mr, n));
    }
    if prior_a.shape() != (n, t) {
        return bad("abundance prior", prior_a.shape(), (n, t));
    }
    if let PriorA::Gaussian { var, .. } = prior_a {
        if var.shape() != (n, t) {
            return bad("abundance prior variance", var.shape(), (n, t));
        }
    }
    if let PriorA::SpikeSlab { slabs, .. } = prior_a {
        if slabs.len() != n {
            return Err(HutampError::Dimension(format!("{} slabs for {n} materials", slabs.len())));
        }
    }
    if init.shat.shape() != (mr, n) || init.svar.shape() != (mr, n) {
        return bad("endmember init", init.shat.shape(), (mr, n));
    }
    if init.ahat.shape() != (n, t) || init.avar.shape() != (n, t) {
        return bad("abundance init", init.ahat.shape(), (n, t));
    }
    if prior_s.var.iter().chain(init.svar.iter()).chain(init.avar.iter()).any(|v| !(*v >= 0.0)) {
        return Err(HutampError::Parameter("variances must be nonnegative".into()));
    }
    Ok(())
}

/// Run BiG-AMP from `init` until `ŜÂ` settles.
pub fn run_bigamp(
    ybar: &DMatrix<f64>,
    prior_s: &PriorS,
    prior_a: &PriorA,
    psi: &DVector<f64>,
    init: &BigAmpInit,
    opts: &BigAmpOptions,
) -> Result<BigAmpOutput> {
    opts.validate()?;
    check_shapes(ybar, prior_s, prior_a, psi, init)?;
    if let Some(v) = psi.iter().find(|v| !(**v > 0.0)) {
        return Err(HutampError::Parameter(format!("noise variance must be positive, got {v}")));
    }
    let (mr, t) = ybar.shape();
    let n = init.shat.ncols();
    let mut rows: Vec<RowKind> = psi.iter().map(|&p| RowKind::Gaussian(p)).collect();
    rows.push(RowKind::Dirac);
    let prob = Problem {
        ybar,
        rows,
        prior_s,
        prior_a,
        floor: opts.var_floor,
    };

    let mut st = State {
        shat: init.shat.clone(),
        svar: init.svar.clone(),
        ahat: init.ahat.clone(),
        avar: init.avar.clone(),
        sbar: init.shat.clone(),
        abar: init.ahat.clone(),
        uhat: DMatrix::zeros(mr, t),
        uvar: DMatrix::zeros(mr, t),
        nupbar: DMatrix::zeros(mr, t),
        nup: DMatrix::zeros(mr, t),
        qhat: init.shat.clone(),
        nuq: DMatrix::from_element(mr, n, VAR_CAP),
        rhat: init.ahat.clone(),
        nur: DMatrix::from_element(n, t, VAR_CAP),
        fresh: true,
    };
    let mut comps = Vec::new();
    let mut step = opts.step;
    let mut prev: Option<(State, f64)> = None;
    let mut best: Option<(State, f64)> = None;
    let mut pbar_prev: Option<DMatrix<f64>> = None;
    let mut status = BigAmpStatus::MaxIters;
    let mut floor_hist: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut restored = false;

    while iterations < opts.max_iters {
        let pbar = &st.shat * &st.ahat;
        let resid = prob.residual(&pbar);
        if !resid.is_finite() {
            return Err(HutampError::Numeric("non-finite BiG-AMP residual".into()));
        }
        if opts.adaptive && !restored {
            if let Some((snap, r_prev)) = &prev {
                if resid > *r_prev && step > opts.step_min {
                    st = snap.clone();
                    step = (0.5 * step).max(opts.step_min);
                    iterations += 1;
                    restored = true;
                    continue;
                }
                step = (1.1 * step).min(1.0);
            }
        }
        if best.as_ref().is_none_or(|(_, r)| resid <= *r) {
            best = Some((st.clone(), resid));
        }
        if let Some(pp) = pbar_prev.as_ref().filter(|_| !restored) {
            let change = (&pbar - pp).norm() / pbar.norm().max(f64::MIN_POSITIVE);
            if change < opts.tol {
                status = BigAmpStatus::Converged;
                break;
            }
        }
        if step <= opts.step_min {
            floor_hist.push(resid);
            if floor_hist.len() > 20 {
                let old = floor_hist[floor_hist.len() - 21];
                if resid > 10.0 * old {
                    status = BigAmpStatus::Diverged;
                    break;
                }
            }
        } else {
            floor_hist.clear();
        }
        restored = false;
        pbar_prev = Some(pbar);
        if opts.adaptive {
            prev = Some((st.clone(), resid));
        }
        prob.sweep(&mut st, step, &mut comps)?;
        iterations += 1;
    }
    if status == BigAmpStatus::Diverged {
        if let Some((b, _)) = best {
            st = b;
        }
    }

    let (pbar, nup, nupbar) = prob.output_plane(&st);
    let phat = &pbar - st.uhat.component_mul(&nupbar);
    let (_, _, zhat, zvar) = prob.likelihood(&phat, &nup);
    let m = psi.len();
    let final_residual = (ybar.rows(0, m) - pbar.rows(0, m)).norm();
    Ok(BigAmpOutput {
        qhat: st.qhat,
        nuq: st.nuq,
        rhat: st.rhat,
        nur: st.nur,
        shat: st.shat,
        svar: st.svar,
        ahat: st.ahat,
        avar: st.avar,
        zhat,
        zvar,
        zplug: pbar,
        iterations,
        final_residual,
        status,
    })
}
