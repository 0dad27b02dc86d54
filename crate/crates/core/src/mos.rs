//! Model-order selection: incremental search over the number of materials
//! with an AICc-penalized log-likelihood.

use crate::data::HsiCube;
use crate::error::{HutampError, Result};
use crate::turbo::{unmix, UnmixOptions, UnmixResult};
use serde::Serialize;
use std::collections::BTreeMap;

/// Scalar degrees of freedom of an `N`-material model.
pub fn dof_count(n: usize, m: usize, t: usize, l: usize) -> Result<usize> {
    if n == 0 || m == 0 || t == 0 || l == 0 {
        return Err(HutampError::Parameter(format!(
            "dof_count needs positive arguments, got N={n} M={m} T={t} L={l}"
        )));
    }
    Ok(m * n + (n - 1) * t + 5 * n + 2 * n * l + n * (l - 1) + m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScoreFlag {
    Ok,
    /// `MT - n - 1 ≤ 0`; score is `-∞`.
    OutOfDomain,
    /// Zero residual; score is `+∞`.
    ExactFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MosScore {
    pub n: usize,
    pub score: f64,
    pub rss: f64,
    pub dof: usize,
    pub flag: ScoreFlag,
}

/// `-MT ln(rss/MT) - 2MT·dof/(MT - dof - 1)`.
pub fn aicc(rss: f64, m: usize, t: usize, dof: usize) -> (f64, ScoreFlag) {
    let mt = (m * t) as f64;
    let d = dof as f64;
    if mt - d - 1.0 <= 0.0 {
        return (f64::NEG_INFINITY, ScoreFlag::OutOfDomain);
    }
    if rss == 0.0 {
        return (f64::INFINITY, ScoreFlag::ExactFit);
    }
    (-mt * (rss / mt).ln() - 2.0 * mt * d / (mt - d - 1.0), ScoreFlag::Ok)
}

/// Score an `N`-material unmixing of `cube` on the original data scale.
pub fn mos_score(cube: &HsiCube, result: &UnmixResult, l: usize) -> Result<MosScore> {
    let y = cube.data();
    let (s, a) = (&result.endmembers.s, &result.abundances.a);
    if s.nrows() != y.nrows() || a.ncols() != y.ncols() || s.ncols() != a.nrows() {
        return Err(HutampError::Dimension(format!(
            "result {}x{} · {}x{} does not match cube {}x{}",
            s.nrows(),
            s.ncols(),
            a.nrows(),
            a.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    let n = s.ncols();
    let rss = (y - s * a).norm_squared();
    let dof = dof_count(n, y.nrows(), y.ncols(), l)?;
    let (score, flag) = aicc(rss, y.nrows(), y.ncols(), dof);
    Ok(MosScore { n, score, rss, dof, flag })
}

/// Outcome of [`incremental_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    pub n_hat: usize,
    /// Scores in evaluation order; `None` marks a failed candidate.
    pub evaluated: Vec<(usize, Option<f64>)>,
    /// The search ran to `n_max` without a decrease.
    pub boundary: bool,
}

/// Evaluate `n_min, n_min+1, ...` while the score does not decrease and
/// return the last order before the first decrease. Failed candidates are
/// skipped.
pub fn incremental_search<F>(n_min: usize, n_max: usize, mut eval: F) -> Result<SearchTrace>
where
    F: FnMut(usize) -> Option<f64>,
{
    if n_min == 0 || n_min > n_max {
        return Err(HutampError::Parameter(format!("empty order range {n_min}..={n_max}")));
    }
    let mut evaluated = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for n in n_min..=n_max {
        let score = eval(n);
        evaluated.push((n, score));
        let Some(sc) = score else { continue };
        match best {
            Some((bn, bs)) if sc < bs => {
                return Ok(SearchTrace { n_hat: bn, evaluated, boundary: false });
            }
            _ => best = Some((n, sc)),
        }
    }
    match best {
        Some((n_hat, _)) => Ok(SearchTrace { n_hat, evaluated, boundary: true }),
        None => Err(HutampError::ModelOrder(format!("every order in {n_min}..={n_max} failed"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosOptions {
    pub n_min: usize,
    /// Defaults to `min(M, 15)`.
    pub n_max: Option<usize>,
    pub unmix: UnmixOptions,
}

impl Default for MosOptions {
    fn default() -> Self {
        Self { n_min: 2, n_max: None, unmix: UnmixOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct MosResult {
    pub n_hat: usize,
    pub scores: BTreeMap<usize, MosScore>,
    /// Candidates whose unmixing failed, with the reason.
    pub skipped: Vec<(usize, String)>,
    pub boundary: bool,
    /// Unmixing results for the selected order and the runner-up.
    pub results: BTreeMap<usize, UnmixResult>,
    pub runs: usize,
}

impl MosResult {
    /// `N,score,rss,dof` table.
    pub fn scores_csv(&self) -> String {
        let mut out = String::from("N,score,rss,dof\n");
        for s in self.scores.values() {
            out.push_str(&format!("{},{},{},{}\n", s.n, s.score, s.rss, s.dof));
        }
        out
    }
}

pub fn select_model_order(cube: &HsiCube, opts: &MosOptions) -> Result<MosResult> {
    let m = cube.bands_len();
    let n_max = opts.n_max.unwrap_or(m.min(15)).min(m).min(cube.pixels());
    let l = opts.unmix.l;
    let mut scores = BTreeMap::new();
    let mut all = BTreeMap::new();
    let mut skipped = Vec::new();
    let trace = incremental_search(opts.n_min, n_max, |n| {
        match unmix(cube, n, &opts.unmix).and_then(|r| mos_score(cube, &r, l).map(|s| (r, s))) {
            Ok((r, s)) => {
                scores.insert(n, s);
                all.insert(n, r);
                Some(s.score)
            }
            Err(e) => {
                skipped.push((n, e.to_string()));
                None
            }
        }
    })?;
    let runner_up = scores
        .values()
        .filter(|s| s.n != trace.n_hat)
        .max_by(|a, b| a.score.total_cmp(&b.score))
        .map(|s| s.n);
    all.retain(|&n, _| n == trace.n_hat || Some(n) == runner_up);
    Ok(MosResult {
        n_hat: trace.n_hat,
        scores,
        skipped,
        boundary: trace.boundary,
        results: all,
        runs: trace.evaluated.len(),
    })
}
