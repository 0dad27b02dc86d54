//! Monte-Carlo trials of HUT-AMP against FSNMF+FCLS on synthetic scenes.

use crate::commands::{scene_spec, unmix_options, write_meta};
use crate::{CliError, Config, Outcome};
use hutamp::baselines::{fcls_matrix, fsnmf_extract};
use hutamp::metrics::{evaluate, MetricsReport, SUCCESS_DB};
use hutamp::synth::{gen_synthetic, AbundanceKind, SyntheticScene, SyntheticSpec};
use hutamp::turbo::{unmix, UnmixOptions};
use hutamp::Result;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::time::Instant;

/// Scores of both methods on one scene; `None` where a method failed.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub hutamp: Option<MetricsReport>,
    pub fsnmf: Option<MetricsReport>,
    /// `ok`, or the failure reasons.
    pub status: String,
}

fn fsnmf_fcls(sc: &SyntheticScene, n: usize, threshold_db: f64) -> Result<MetricsReport> {
    let s = fsnmf_extract(&sc.cube, n, true)?;
    let a = fcls_matrix(sc.cube.data(), &s.s)?;
    evaluate(&sc.s, &sc.a, &s.s, &a, threshold_db)
}

fn hut(sc: &SyntheticScene, n: usize, opts: &UnmixOptions, threshold_db: f64) -> Result<MetricsReport> {
    let r = unmix(&sc.cube, n, opts)?;
    evaluate(&sc.s, &sc.a, &r.endmembers.s, &r.abundances.a, threshold_db)
}

pub fn run_trial(spec: &SyntheticSpec, opts: &UnmixOptions, threshold_db: f64) -> TrialOutcome {
    let sc = match gen_synthetic(spec) {
        Ok(sc) => sc,
        Err(e) => return TrialOutcome { hutamp: None, fsnmf: None, status: format!("scene: {e}") },
    };
    let h = hut(&sc, spec.n, opts, threshold_db);
    let f = fsnmf_fcls(&sc, spec.n, threshold_db);
    let mut status = Vec::new();
    if let Err(e) = &h {
        status.push(format!("hutamp: {e}"));
    }
    if let Err(e) = &f {
        status.push(format!("fsnmf: {e}"));
    }
    TrialOutcome {
        hutamp: h.ok(),
        fsnmf: f.ok(),
        status: if status.is_empty() { "ok".into() } else { status.join("; ") },
    }
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub k: usize,
    pub p: usize,
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub base: SyntheticSpec,
    pub cells: Vec<Cell>,
    pub trials: usize,
    pub opts: UnmixOptions,
    pub threshold_db: f64,
}

impl SweepPlan {
    /// Each (cell, trial) pair draws from its own stream of the base seed.
    pub fn spec(&self, cell_index: usize, trial: usize) -> SyntheticSpec {
        let c = self.cells[cell_index];
        let abundances = match self.base.abundances {
            AbundanceKind::KSparsePPure { alpha, .. } => AbundanceKind::KSparsePPure { k: c.k, p: c.p, alpha },
            other => other,
        };
        SyntheticSpec {
            abundances,
            snr_db: c.snr_db,
            trial: ((cell_index as u64) << 32) | trial as u64,
            ..self.base.clone()
        }
    }
}

pub fn plan_from_config(cfg: &Config) -> std::result::Result<SweepPlan, CliError> {
    let base = scene_spec(cfg, (50, 5, 1, 60), "ksparse")?;
    let ks = cfg.list::<usize>("k", &[1])?;
    let ps = cfg.list::<usize>("p", &[1])?;
    let snrs = cfg
        .list::<String>("snr_db", &["80".to_string()])?
        .into_iter()
        .map(|s| match s.as_str() {
            "none" | "inf" => Ok(None),
            v => v.parse::<f64>().ok().filter(|x| x.is_finite()).map(Some).ok_or_else(|| CliError::Config {
                key: "snr_db".into(),
                msg: format!("cannot parse list entry {v:?}"),
            }),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut cells = Vec::new();
    for &snr_db in &snrs {
        for &k in &ks {
            for &p in &ps {
                cells.push(Cell { k, p, snr_db });
            }
        }
    }
    let plan = SweepPlan {
        base,
        cells,
        trials: cfg.positive("trials", 10)?,
        opts: unmix_options(cfg)?,
        threshold_db: cfg.f64("threshold_db", SUCCESS_DB)?,
    };
    for i in 0..plan.cells.len() {
        let spec = plan.spec(i, 0);
        if let Err(e) = gen_synthetic(&SyntheticSpec { snr_db: None, ..spec }) {
            let key = match e {
                hutamp::HutampError::Parameter(ref m) if m.starts_with("K=") => "k",
                hutamp::HutampError::Parameter(ref m) if m.starts_with("P=") => "p",
                _ => "n",
            };
            return Err(CliError::run(key)(e));
        }
    }
    Ok(plan)
}

/// Run every (cell, trial) on the worker pool and collect in grid order.
pub fn run_plan(plan: &SweepPlan) -> Vec<(usize, usize, TrialOutcome)> {
    let jobs: Vec<(usize, usize)> = (0..plan.cells.len())
        .flat_map(|c| (0..plan.trials).map(move |t| (c, t)))
        .collect();
    jobs.into_par_iter()
        .map(|(c, t)| (c, t, run_trial(&plan.spec(c, t), &plan.opts, plan.threshold_db)))
        .collect()
}

fn fmt_snr(s: Option<f64>) -> String {
    s.map_or("none".into(), |v| v.to_string())
}

fn num(v: Option<f64>) -> String {
    v.map_or("NaN".into(), |x| x.to_string())
}

pub const TRIAL_HEADER: &str = "k,p,snr_db,trial,hutamp_nmse_s_db,hutamp_nmse_a_db,hutamp_sad_deg,hutamp_success,\
fsnmf_nmse_s_db,fsnmf_nmse_a_db,fsnmf_sad_deg,fsnmf_success,status";

pub const AGGREGATE_HEADER: &str = "k,p,snr_db,trials,failed,\
hutamp_success_rate,hutamp_median_nmse_s_db,hutamp_mean_nmse_s_db,hutamp_median_nmse_a_db,hutamp_mean_nmse_a_db,hutamp_median_sad_deg,\
fsnmf_success_rate,fsnmf_median_nmse_s_db,fsnmf_mean_nmse_s_db,fsnmf_median_nmse_a_db,fsnmf_mean_nmse_a_db,fsnmf_median_sad_deg";

fn report_fields(r: &Option<MetricsReport>) -> String {
    format!(
        "{},{},{},{}",
        num(r.as_ref().map(|r| r.nmse_s_db)),
        num(r.as_ref().map(|r| r.nmse_a_db)),
        num(r.as_ref().map(|r| r.sad_avg)),
        r.as_ref().is_some_and(|r| r.success) as u8
    )
}

pub fn trials_csv(plan: &SweepPlan, rows: &[(usize, usize, TrialOutcome)]) -> String {
    let mut out = format!("{TRIAL_HEADER}\n");
    for (c, t, o) in rows {
        let cell = plan.cells[*c];
        let status = o.status.replace([',', '\n', '"'], " ");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            cell.k,
            cell.p,
            fmt_snr(cell.snr_db),
            t,
            report_fields(&o.hutamp),
            report_fields(&o.fsnmf),
            status
        );
    }
    out
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let h = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[h] } else { 0.5 * (s[h - 1] + s[h]) })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Success rate counts failed runs as failures.
fn summarize(reports: &[Option<&MetricsReport>]) -> String {
    let ok: Vec<&MetricsReport> = reports.iter().flatten().copied().collect();
    let s: Vec<f64> = ok.iter().map(|r| r.nmse_s_db).collect();
    let a: Vec<f64> = ok.iter().map(|r| r.nmse_a_db).collect();
    let sad: Vec<f64> = ok.iter().map(|r| r.sad_avg).collect();
    let rate = ok.iter().filter(|r| r.success).count() as f64 / reports.len().max(1) as f64;
    format!(
        "{},{},{},{},{},{}",
        rate,
        num(median(&s)),
        num(mean(&s)),
        num(median(&a)),
        num(mean(&a)),
        num(median(&sad))
    )
}

pub fn aggregate_csv(plan: &SweepPlan, rows: &[(usize, usize, TrialOutcome)]) -> String {
    let mut out = format!("{AGGREGATE_HEADER}\n");
    for (ci, cell) in plan.cells.iter().enumerate() {
        let mine: Vec<&TrialOutcome> = rows.iter().filter(|r| r.0 == ci).map(|r| &r.2).collect();
        let failed = mine.iter().filter(|o| o.status != "ok").count();
        let h: Vec<_> = mine.iter().map(|o| o.hutamp.as_ref()).collect();
        let f: Vec<_> = mine.iter().map(|o| o.fsnmf.as_ref()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            cell.k,
            cell.p,
            fmt_snr(cell.snr_db),
            mine.len(),
            failed,
            summarize(&h),
            summarize(&f)
        );
    }
    out
}

pub fn sweep(cfg: &Config) -> std::result::Result<Outcome, CliError> {
    let plan = plan_from_config(cfg)?;
    let out = cfg.out_dir()?;
    let workers = cfg.usize("workers", 0)?;
    cfg.bool("quiet", false)?;
    cfg.finish()?;
    std::fs::create_dir_all(&out).map_err(CliError::io("out"))?;

    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config { key: "workers".into(), msg: e.to_string() })?;
    let rows = pool.install(|| run_plan(&plan));
    let failed = rows.iter().filter(|r| r.2.status != "ok").count();

    std::fs::write(out.join("trials.csv"), trials_csv(&plan, &rows)).map_err(CliError::io("out"))?;
    std::fs::write(out.join("aggregate.csv"), aggregate_csv(&plan, &rows)).map_err(CliError::io("out"))?;
    write_meta(
        &out,
        serde_json::json!({
            "command": "sweep",
            "seed": plan.base.seed,
            "cells": plan.cells.len(),
            "trials": plan.trials,
            "failed": failed,
            "runtime_s": start.elapsed().as_secs_f64(),
        }),
    )?;
    Ok(Outcome {
        summary: format!(
            "{} cells x {} trials, {} failed, written to {}",
            plan.cells.len(),
            plan.trials,
            failed,
            out.display()
        ),
        partial: failed > 0,
    })
}
