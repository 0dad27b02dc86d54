//! Synthetic scenes: endmembers, abundance patterns, and white noise at a
//! target SNR.

use crate::data::HsiCube;
use crate::error::{HutampError, Result};
use crate::metrics::sad;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

/// Minimum pairwise spectral angle, in degrees, for library draws.
pub const MIN_LIBRARY_SAD: f64 = 15.0;
const LIBRARY_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EndmemberKind {
    /// Entries i.i.d. `N+(0.5, 0.05)`.
    Iid,
    /// Columns drawn from a user library (`M × L`).
    Library(#[serde(skip)] DMatrix<f64>),
    /// Columns drawn from a generated library of smooth positive spectra.
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AbundanceKind {
    /// `p` pure pixels at random positions; every other pixel has `k`
    /// random active materials with Dirichlet(`alpha`) weights.
    KSparsePPure { k: usize, p: usize, alpha: f64 },
    Dirichlet { alpha: f64 },
    /// `N` equal vertical strips of pure pixels.
    Strips,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub m: usize,
    pub n: usize,
    pub t1: usize,
    pub t2: usize,
    pub endmembers: EndmemberKind,
    pub abundances: AbundanceKind,
    /// `None` is noiseless.
    pub snr_db: Option<f64>,
    pub seed: u64,
    /// Stream index, so trials of one seed are independent.
    pub trial: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let t = self.t1 * self.t2;
        if self.m == 0 || self.n == 0 || t == 0 {
            return Err(HutampError::Parameter("M, N, T1 and T2 must be positive".into()));
        }
        match self.abundances {
            AbundanceKind::KSparsePPure { k, p, alpha } => {
                if k == 0 || k > self.n {
                    return Err(HutampError::Parameter(format!("K={k} must lie in 1..={}", self.n)));
                }
                if p > t {
                    return Err(HutampError::Parameter(format!("P={p} exceeds T={t}")));
                }
                if !(alpha > 0.0) {
                    return Err(HutampError::Parameter(format!("Dirichlet alpha {alpha} must be positive")));
                }
            }
            AbundanceKind::Dirichlet { alpha } if !(alpha > 0.0) => {
                return Err(HutampError::Parameter(format!("Dirichlet alpha {alpha} must be positive")));
            }
            AbundanceKind::Strips if self.t2 < self.n => {
                return Err(HutampError::Parameter(format!(
                    "{} strips do not fit in {} columns",
                    self.n, self.t2
                )));
            }
            _ => {}
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(HutampError::Parameter("snr_db must be finite (use None for noiseless)".into()));
            }
        }
        if let EndmemberKind::Library(lib) = &self.endmembers {
            if lib.nrows() != self.m || lib.ncols() < self.n {
                return Err(HutampError::Parameter(format!(
                    "library is {}x{}, need {} bands and at least {} spectra",
                    lib.nrows(),
                    lib.ncols(),
                    self.m,
                    self.n
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub cube: HsiCube,
    pub s: DMatrix<f64>,
    pub a: DMatrix<f64>,
    /// Noise variance used (zero when noiseless).
    pub psi: f64,
}

pub fn rng_for(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Rejection sample of `N+(mean, var)`, falling back to inverse-cdf-free
/// exponential proposals deep in the tail.
fn trunc_normal<R: Rng>(rng: &mut R, mean: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    for _ in 0..1000 {
        let z: f64 = rng.sample(StandardNormal);
        let x = mean + sd * z;
        if x >= 0.0 {
            return x;
        }
    }
    // exponential proposal on the standardized tail beyond a = -mean/sd
    let a = -mean / sd;
    let lam = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let u: f64 = rng.random();
        let z = a - (1.0 - u).ln() / lam;
        let v: f64 = rng.random();
        if v <= (-(z - lam).powi(2) / 2.0).exp() {
            return mean + sd * z;
        }
    }
}

fn dirichlet<R: Rng>(rng: &mut R, k: usize, alpha: f64) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    loop {
        let mut w: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            w.iter_mut().for_each(|v| *v /= s);
            return w;
        }
    }
}

/// A library of `count` smooth, positive spectra over `m` bands.
pub fn smooth_library<R: Rng>(rng: &mut R, m: usize, count: usize) -> DMatrix<f64> {
    let mut lib = DMatrix::zeros(m, count);
    for j in 0..count {
        let base = rng.random_range(0.2..0.5);
        let bumps: Vec<(f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.random_range(-0.2..0.4),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.05..0.25),
                )
            })
            .collect();
        for i in 0..m {
            let x = if m > 1 { i as f64 / (m - 1) as f64 } else { 0.5 };
            let v = base
                + bumps
                    .iter()
                    .map(|&(h, c, w)| h * (-(x - c).powi(2) / (2.0 * w * w)).exp())
                    .sum::<f64>();
            lib[(i, j)] = v.max(0.01);
        }
    }
    lib
}

fn pick_from_library<R: Rng>(rng: &mut R, lib: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let mut idx: Vec<usize> = (0..lib.ncols()).collect();
    for _ in 0..LIBRARY_ATTEMPTS {
        idx.shuffle(rng);
        let pick = &idx[..n];
        let ok = (0..n).all(|i| {
            (i + 1..n).all(|j| {
                sad(lib.column(pick[i]).as_slice(), lib.column(pick[j]).as_slice())
                    .is_ok_and(|a| a >= MIN_LIBRARY_SAD)
            })
        });
        if ok {
            return Ok(lib.select_columns(pick));
        }
    }
    Err(HutampError::Input(format!(
        "no {n} library spectra with pairwise SAD >= {MIN_LIBRARY_SAD} degrees after {LIBRARY_ATTEMPTS} draws"
    )))
}

fn gen_abundances<R: Rng>(rng: &mut R, spec: &SyntheticSpec) -> DMatrix<f64> {
    let n = spec.n;
    let t = spec.t1 * spec.t2;
    let mut a = DMatrix::zeros(n, t);
    match spec.abundances {
        AbundanceKind::KSparsePPure { k, p, alpha } => {
            let mut cols: Vec<usize> = (0..t).collect();
            cols.shuffle(rng);
            let mut mats: Vec<usize> = (0..n).collect();
            mats.shuffle(rng);
            let mut pure = vec![false; t];
            for (i, &c) in cols[..p].iter().enumerate() {
                a[(mats[i % n], c)] = 1.0;
                pure[c] = true;
            }
            let mut support: Vec<usize> = (0..n).collect();
            for c in (0..t).filter(|&c| !pure[c]) {
                support.shuffle(rng);
                let w = dirichlet(rng, k, alpha);
                for (&row, v) in support[..k].iter().zip(w) {
                    a[(row, c)] = v;
                }
            }
        }
        AbundanceKind::Dirichlet { alpha } => {
            for c in 0..t {
                for (r, v) in dirichlet(rng, n, alpha).into_iter().enumerate() {
                    a[(r, c)] = v;
                }
            }
        }
        AbundanceKind::Strips => {
            for r in 0..spec.t1 {
                for c in 0..spec.t2 {
                    a[(c * n / spec.t2, r * spec.t2 + c)] = 1.0;
                }
            }
        }
    }
    a
}

/// Generate a scene; identical specs give bit-identical scenes.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, spec.trial);
    let s = match &spec.endmembers {
        EndmemberKind::Iid => DMatrix::from_fn(spec.m, spec.n, |_, _| trunc_normal(&mut rng, 0.5, 0.05)),
        EndmemberKind::Library(lib) => pick_from_library(&mut rng, lib, spec.n)?,
        EndmemberKind::Smooth => {
            let lib = smooth_library(&mut rng, spec.m, (4 * spec.n).max(24));
            pick_from_library(&mut rng, &lib, spec.n)?
        }
    };
    let a = gen_abundances(&mut rng, spec);
    let z = &s * &a;
    let t = spec.t1 * spec.t2;
    let (y, psi) = match spec.snr_db {
        None => (z, 0.0),
        Some(snr) => {
            let psi = z.norm_squared() / ((spec.m * t) as f64 * 10f64.powf(snr / 10.0));
            let sd = psi.sqrt();
            let mut y = z;
            y.iter_mut().for_each(|v| {
                let e: f64 = rng.sample(StandardNormal);
                *v += sd * e;
            });
            (y, psi)
        }
    };
    Ok(SyntheticScene {
        cube: HsiCube::new(y, spec.t1, spec.t2)?,
        s,
        a,
        psi,
    })
}
