//! Spectral angle, permutation alignment, and normalized squared error.

use crate::error::{HutampError, Result};
use nalgebra::{DMatrix, DVectorView};
use serde::Serialize;

/// Reported in place of `-∞` dB.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// Default success threshold on endmember NMSE.
pub const SUCCESS_DB: f64 = -40.0;

/// Spectral angle between two spectra, in degrees.
pub fn sad(s1: &[f64], s2: &[f64]) -> Result<f64> {
    if s1.len() != s2.len() {
        return Err(HutampError::Metric(format!("spectra have lengths {} and {}", s1.len(), s2.len())));
    }
    let n1 = s1.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n2 = s2.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(HutampError::Metric("spectral angle of a zero vector".into()));
    }
    // 2 atan2(|u - v|, |u + v|) on unit vectors keeps small angles accurate
    let (mut dif, mut sum) = (0.0, 0.0);
    for (a, b) in s1.iter().zip(s2) {
        let (u, v) = (a / n1, b / n2);
        dif += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Ok((2.0 * dif.sqrt().atan2(sum.sqrt())).to_degrees())
}

fn sad_or_right(a: DVectorView<f64>, b: DVectorView<f64>) -> f64 {
    sad(a.as_slice(), b.as_slice()).unwrap_or(90.0)
}

/// `10 log10(||truth - est||² / ||truth||²)`, floored at [`NMSE_FLOOR_DB`].
pub fn nmse_db(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> f64 {
    let den = truth.norm_squared();
    let num = (truth - est).norm_squared();
    let ratio = if den > 0.0 { num / den } else if num == 0.0 { 0.0 } else { f64::INFINITY };
    if ratio == 0.0 {
        NMSE_FLOOR_DB
    } else {
        (10.0 * ratio.log10()).max(NMSE_FLOOR_DB)
    }
}

/// Minimum-cost assignment: `perm[i]` is the column matched to row `i`.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square cost matrix");
    if n <= 8 {
        exhaustive_assignment(cost)
    } else {
        hungarian(cost)
    }
}

fn exhaustive_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    fn rec(cost: &DMatrix<f64>, row: usize, used: &mut [bool], cur: &mut Vec<usize>, acc: f64, best: &mut (f64, Vec<usize>)) {
        let n = cost.nrows();
        if row == n {
            if acc < best.0 {
                *best = (acc, cur.clone());
            }
            return;
        }
        for j in 0..n {
            if !used[j] {
                let c = acc + cost[(row, j)];
                if c >= best.0 {
                    continue;
                }
                used[j] = true;
                cur.push(j);
                rec(cost, row + 1, used, cur, c, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let n = cost.nrows();
    let mut best = (f64::INFINITY, (0..n).collect());
    rec(cost, 0, &mut vec![false; n], &mut Vec::with_capacity(n), 0.0, &mut best);
    best.1
}

/// Shortest-augmenting-path Hungarian algorithm.
fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            perm[p[j] - 1] = j - 1;
        }
    }
    perm
}

/// Which axis of the matrices holds the materials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignKind {
    /// Endmembers, one per column.
    Columns,
    /// Abundance maps, one per row.
    Rows,
}

/// Match estimated materials to true ones by minimum total spectral angle.
/// `perm[k]` is the estimate index matched to truth index `k`.
pub fn align_by_sad(truth: &DMatrix<f64>, est: &DMatrix<f64>, kind: AlignKind) -> Result<Vec<usize>> {
    let (t, e) = match kind {
        AlignKind::Columns => (truth.clone(), est.clone()),
        AlignKind::Rows => (truth.transpose(), est.transpose()),
    };
    if t.shape() != e.shape() {
        return Err(HutampError::Metric(format!(
            "shape mismatch: truth {:?}, estimate {:?}",
            truth.shape(),
            est.shape()
        )));
    }
    let n = t.ncols();
    let cost = DMatrix::from_fn(n, n, |i, j| sad_or_right(t.column(i), e.column(j)));
    Ok(min_cost_assignment(&cost))
}

fn permute(est: &DMatrix<f64>, perm: &[usize], kind: AlignKind) -> DMatrix<f64> {
    match kind {
        AlignKind::Columns => est.select_columns(perm),
        AlignKind::Rows => est.select_rows(perm),
    }
}

/// NMSE after permutation alignment, with the permutation used.
pub fn aligned_nmse(truth: &DMatrix<f64>, est: &DMatrix<f64>, kind: AlignKind) -> Result<(f64, Vec<usize>)> {
    let perm = align_by_sad(truth, est, kind)?;
    Ok((nmse_db(truth, &permute(est, &perm, kind)), perm))
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub sad_per_material: Vec<f64>,
    pub sad_avg: f64,
    pub nmse_s_db: f64,
    pub nmse_a_db: f64,
    pub permutation: Vec<usize>,
    pub success: bool,
}

/// Endmember and abundance accuracy, with abundances aligned by the
/// endmember permutation.
pub fn evaluate(
    truth_s: &DMatrix<f64>,
    truth_a: &DMatrix<f64>,
    est_s: &DMatrix<f64>,
    est_a: &DMatrix<f64>,
    threshold_db: f64,
) -> Result<MetricsReport> {
    if truth_a.shape() != est_a.shape() || truth_s.ncols() != truth_a.nrows() {
        return Err(HutampError::Metric(format!(
            "abundance shapes {:?} and {:?} do not match endmembers {:?}",
            truth_a.shape(),
            est_a.shape(),
            truth_s.shape()
        )));
    }
    let perm = align_by_sad(truth_s, est_s, AlignKind::Columns)?;
    let s_al = permute(est_s, &perm, AlignKind::Columns);
    let a_al = permute(est_a, &perm, AlignKind::Rows);
    let sad_per_material = (0..truth_s.ncols())
        .map(|k| sad_or_right(truth_s.column(k), s_al.column(k)))
        .collect::<Vec<_>>();
    let sad_avg = sad_per_material.iter().sum::<f64>() / sad_per_material.len() as f64;
    let nmse_s_db = nmse_db(truth_s, &s_al);
    Ok(MetricsReport {
        sad_per_material,
        sad_avg,
        nmse_s_db,
        nmse_a_db: nmse_db(truth_a, &a_al),
        permutation: perm,
        success: nmse_s_db < threshold_db,
    })
}
