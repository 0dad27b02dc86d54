//! Successive-projection endmember extraction and fully constrained least
//! squares abundance inversion.

use crate::data::{Abundances, Endmembers, HsiCube};
use crate::error::{HutampError, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Principal subspace of the row-mean-removed data.
#[derive(Debug, Clone)]
pub struct PcaSubspace {
    pub center: DVector<f64>,
    /// Orthonormal basis, `M × k`.
    pub basis: DMatrix<f64>,
}

impl PcaSubspace {
    pub fn fit(y: &DMatrix<f64>, k: usize) -> Result<Self> {
        let (m, t) = y.shape();
        if k == 0 || k > m {
            return Err(HutampError::Dimension(format!("subspace rank {k} invalid for {m} bands")));
        }
        let center = y.column_mean();
        let mut yc = y.clone();
        for mut col in yc.column_iter_mut() {
            col -= &center;
        }
        let cov = &yc * yc.transpose() / t as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
        let basis = DMatrix::from_fn(m, k, |r, c| eig.eigenvectors[(r, order[c])]);
        Ok(Self { center, basis })
    }

    /// Affine projection `c + U Uᵀ (x - c)` of every column.
    pub fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut xc = x.clone();
        for mut col in xc.column_iter_mut() {
            col -= &self.center;
        }
        let mut out = &self.basis * (self.basis.transpose() * xc);
        for mut col in out.column_iter_mut() {
            col += &self.center;
        }
        out
    }
}

/// Column indices picked by the successive projection algorithm.
pub fn spa_indices(y: &DMatrix<f64>, n: usize) -> Result<Vec<usize>> {
    let (m, t) = y.shape();
    if n == 0 || n > m.min(t) {
        return Err(HutampError::Extraction(format!(
            "cannot extract {n} endmembers from a {m}x{t} matrix"
        )));
    }
    let mut r = y.clone();
    let scale = y.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max);
    let mut picked = Vec::with_capacity(n);
    for k in 0..n {
        let (j, best) = r
            .column_iter()
            .map(|c| c.norm_squared())
            .enumerate()
            .fold((0, -1.0), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
        if !(best > 1e-24 * scale) || scale == 0.0 {
            return Err(HutampError::Extraction(format!(
                "data has rank {k}, fewer than the {n} requested endmembers"
            )));
        }
        picked.push(j);
        let u = r.column(j) / best.sqrt();
        let proj = u.transpose() * &r;
        r -= &u * proj;
    }
    Ok(picked)
}

/// Successive-projection endmember extraction. With `denoise`, selection
/// runs on the projection of the data onto its `N`-dimensional principal
/// subspace and the returned spectra are the projected columns.
pub fn fsnmf_extract(cube: &HsiCube, n: usize, denoise: bool) -> Result<Endmembers> {
    let y = cube.data();
    let (m, t) = y.shape();
    if n == 0 || n > m.min(t) {
        return Err(HutampError::Extraction(format!(
            "cannot extract {n} endmembers from {m} bands and {t} pixels"
        )));
    }
    let s = if denoise {
        let sub = PcaSubspace::fit(y, n)?;
        let yd = sub.project(y);
        let idx = spa_indices(&yd, n)?;
        yd.select_columns(&idx)
    } else {
        let idx = spa_indices(y, n)?;
        y.select_columns(&idx)
    };
    Endmembers::new(s)
}

/// Solve the equality-constrained quadratic over the free set `free`:
/// `min ½aᵀGa − cᵀa` with `Σ a_free = 1`, other entries zero.
fn eqp(g: &DMatrix<f64>, c: &DVector<f64>, free: &[usize]) -> Option<(DVector<f64>, f64)> {
    let k = free.len();
    let mut kkt = DMatrix::zeros(k + 1, k + 1);
    let mut rhs = DVector::zeros(k + 1);
    let ridge = 1e-14 * (0..g.nrows()).map(|i| g[(i, i)]).fold(0.0, f64::max).max(1e-300);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            kkt[(a, b)] = g[(i, j)];
        }
        kkt[(a, a)] += ridge;
        kkt[(a, k)] = 1.0;
        kkt[(k, a)] = 1.0;
        rhs[a] = c[i];
    }
    rhs[k] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = DVector::from_fn(g.nrows(), |i, _| free.iter().position(|&f| f == i).map_or(0.0, |a| sol[a]));
    Some((x, sol[k]))
}

/// Primal active-set solve of one pixel, starting from the free set `warm`.
fn fcls_pixel(g: &DMatrix<f64>, c: &DVector<f64>, warm: &[usize]) -> DVector<f64> {
    let n = g.nrows();
    let mut free: Vec<usize> = if warm.is_empty() { (0..n).collect() } else { warm.to_vec() };
    let mut x = DVector::zeros(n);
    for &i in &free {
        x[i] = 1.0 / free.len() as f64;
    }
    for _ in 0..(20 * n + 50) {
        let Some((cand, _)) = eqp(g, c, &free) else {
            // singular reduced problem: keep the best single vertex
            break;
        };
        let p = &cand - &x;
        if p.amax() <= 1e-15 * (1.0 + x.amax()) {
            // stationary on the working set; check bound multipliers
            let grad = g * &x - c;
            let nu = free.iter().map(|&i| grad[i]).sum::<f64>() / free.len() as f64;
            let worst = (0..n)
                .filter(|i| !free.contains(i))
                .map(|i| (i, grad[i] - nu))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let tol = 1e-12 * (1.0 + grad.amax());
            match worst {
                Some((i, mult)) if mult < -tol => {
                    free.push(i);
                    free.sort_unstable();
                }
                _ => return x,
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut block = None;
        for &i in &free {
            if p[i] < 0.0 {
                let a = -x[i] / p[i];
                if a < alpha {
                    alpha = a;
                    block = Some(i);
                }
            }
        }
        x += &p * alpha;
        if let Some(b) = block {
            x[b] = 0.0;
            free.retain(|&i| i != b);
        }
    }
    x
}

/// Per-pixel `min ||y_t - S a||²` subject to `a ≥ 0`, `Σa = 1`.
pub fn fcls(cube: &HsiCube, s: &Endmembers) -> Result<Abundances> {
    fcls_matrix(cube.data(), &s.s).and_then(Abundances::new)
}

/// FCLS on a raw `M × T` matrix.
pub fn fcls_matrix(y: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if y.nrows() != s.nrows() {
        return Err(HutampError::Dimension(format!(
            "data has {} bands, endmembers have {}",
            y.nrows(),
            s.nrows()
        )));
    }
    let n = s.ncols();
    let g = s.transpose() * s;
    let sty = s.transpose() * y;
    let mut out = DMatrix::zeros(n, y.ncols());
    let mut warm: Vec<usize> = Vec::new();
    for t in 0..y.ncols() {
        let c = sty.column(t).into_owned();
        let mut a = fcls_pixel(&g, &c, &warm);
        a.iter_mut().for_each(|v| *v = v.max(0.0));
        let sum = a.sum();
        if sum > 0.0 {
            a /= sum;
        } else {
            a.fill(1.0 / n as f64);
        }
        warm = (0..n).filter(|&i| a[i] > 0.0).collect();
        out.set_column(t, &a);
    }
    Ok(out)
}
