//! `unmix`, `mos`, `synth` and `metrics`.

use crate::{CliError, Config, Outcome};
use hutamp::bundle::{read_result_bundle, write_result_bundle, write_truth_bundle};
use hutamp::data::{load_cube, read_matrix};
use hutamp::metrics::{evaluate, SUCCESS_DB};
use hutamp::mos::{mos_score, select_model_order, MosOptions};
use hutamp::synth::{gen_synthetic, AbundanceKind, EndmemberKind, SyntheticSpec};
use hutamp::turbo::{unmix as run_unmix, UnmixOptions};
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub fn unmix_options(cfg: &Config) -> Result<UnmixOptions, CliError> {
    let d = UnmixOptions::default();
    let mut o = UnmixOptions {
        max_turbo: cfg.usize("max_turbo", d.max_turbo)?,
        turbo_tol: cfg.f64("turbo_tol", d.turbo_tol)?,
        l: cfg.positive("l", d.l)?,
        snr0_db: cfg.f64("snr0_db", d.snr0_db)?,
        spectral_coherence: cfg.bool("spectral", d.spectral_coherence)?,
        spatial_coherence: cfg.bool("spatial", d.spatial_coherence)?,
        learn: cfg.bool("learn", d.learn)?,
        scalar_psi: cfg.bool("scalar_psi", d.scalar_psi)?,
        alpha0: cfg.f64("alpha0", d.alpha0)?,
        beta0: cfg.f64("beta0", d.beta0)?,
        ..d
    };
    o.bigamp.max_iters = cfg.usize("bigamp_iters", d.bigamp.max_iters)?;
    o.bigamp.tol = cfg.f64("bigamp_tol", d.bigamp.tol)?;
    if !(o.turbo_tol > 0.0) {
        return Err(CliError::Config { key: "turbo_tol".into(), msg: "must be positive".into() });
    }
    if !(o.bigamp.tol > 0.0) {
        return Err(CliError::Config { key: "bigamp_tol".into(), msg: "must be positive".into() });
    }
    Ok(o)
}

/// Scene spec from `m, n, t1, t2, endmembers, abundances, k, p, alpha,
/// snr_db, seed, trial`.
pub fn scene_spec(cfg: &Config, dims: (usize, usize, usize, usize), abundances: &str) -> Result<SyntheticSpec, CliError> {
    let m = cfg.positive("m", dims.0)?;
    let n = cfg.positive("n", dims.1)?;
    let t1 = cfg.positive("t1", dims.2)?;
    let t2 = cfg.positive("t2", dims.3)?;
    let endmembers = match cfg.string("endmembers", "iid").as_str() {
        "iid" => EndmemberKind::Iid,
        "smooth" => EndmemberKind::Smooth,
        _ => {
            let path = cfg.existing_path("endmembers")?;
            EndmemberKind::Library(read_matrix(&path).map_err(CliError::run("endmembers"))?)
        }
    };
    let alpha = cfg.f64("alpha", 1.0)?;
    let abundances = match cfg.string("abundances", abundances).as_str() {
        "strips" => AbundanceKind::Strips,
        "dirichlet" => AbundanceKind::Dirichlet { alpha },
        "ksparse" => AbundanceKind::KSparsePPure { k: 1, p: 0, alpha },
        other => {
            return Err(CliError::Config {
                key: "abundances".into(),
                msg: format!("expected strips, dirichlet or ksparse, got {other:?}"),
            })
        }
    };
    Ok(SyntheticSpec {
        m,
        n,
        t1,
        t2,
        endmembers,
        abundances,
        snr_db: None,
        seed: cfg.u64("seed", 0)?,
        trial: cfg.u64("trial", 0)?,
    })
}

pub fn write_meta(dir: &Path, mut meta: serde_json::Value) -> Result<(), CliError> {
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    meta["timestamp_unix"] = ts.into();
    meta["version"] = env!("CARGO_PKG_VERSION").into();
    let text = serde_json::to_string_pretty(&meta).map_err(|e| CliError::run("out")(e.into()))?;
    std::fs::write(dir.join("meta.json"), text).map_err(CliError::io("out"))
}

fn write_json(dir: &Path, name: &str, v: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::run("out")(e.into()))?;
    std::fs::write(dir.join(name), text).map_err(CliError::io("out"))
}

pub fn synth(cfg: &Config) -> Result<Outcome, CliError> {
    let mut spec = scene_spec(cfg, (50, 3, 20, 20), "strips")?;
    if let AbundanceKind::KSparsePPure { alpha, .. } = spec.abundances {
        spec.abundances = AbundanceKind::KSparsePPure { k: cfg.positive("k", 1)?, p: cfg.usize("p", 0)?, alpha };
    }
    spec.snr_db = cfg.snr("snr_db", Some(30.0))?;
    let out = cfg.out_dir()?;
    cfg.bool("quiet", false)?;
    cfg.finish()?;
    let key_of = |e: &hutamp::HutampError| match e.to_string() {
        m if m.contains("K=") => "k",
        m if m.contains("P=") => "p",
        m if m.contains("library") => "endmembers",
        _ => "n",
    };
    let scene = gen_synthetic(&spec).map_err(|e| CliError::run(key_of(&e))(e))?;
    write_truth_bundle(&out, &spec, &scene).map_err(CliError::run("out"))?;
    let back = load_cube(out.join("cube.csv")).map_err(CliError::run("out"))?;
    if back.data() != scene.cube.data() || back.spatial() != scene.cube.spatial() {
        return Err(CliError::run("out")(hutamp::HutampError::Input("cube did not survive the round trip".into())));
    }
    Ok(Outcome {
        summary: format!(
            "{}x{} cube with {} materials (psi {:e}) written to {}",
            spec.m,
            spec.t1 * spec.t2,
            spec.n,
            scene.psi,
            out.display()
        ),
        partial: false,
    })
}

/// Fixed-`N` unmixing, or model-order selection when `mos` is set.
pub fn unmix(cfg: &Config, force_mos: bool) -> Result<Outcome, CliError> {
    let input = cfg.existing_path("input")?;
    let mos = force_mos || cfg.bool("mos", false)?;
    let n = cfg.opt_usize("n")?;
    let opts = unmix_options(cfg)?;
    let n_min = cfg.positive("n_min", 2)?;
    let n_max = cfg.opt_usize("n_max")?;
    let out = cfg.out_dir()?;
    cfg.u64("seed", 0)?;
    cfg.bool("quiet", false)?;
    cfg.finish()?;
    let n = match (mos, n) {
        (false, None) => return Err(CliError::Config { key: "n".into(), msg: "is required unless mos is set".into() }),
        (false, Some(0)) => return Err(CliError::Config { key: "n".into(), msg: "must be at least 1".into() }),
        (_, n) => n,
    };
    let cube = load_cube(&input).map_err(CliError::run("input"))?;
    std::fs::create_dir_all(&out).map_err(CliError::io("out"))?;
    let start = Instant::now();

    let (result, report, partial) = if mos {
        let mo = MosOptions { n_min, n_max, unmix: opts };
        let r = select_model_order(&cube, &mo).map_err(CliError::run("n_max"))?;
        std::fs::write(out.join("scores.csv"), r.scores_csv()).map_err(CliError::io("out"))?;
        let report = serde_json::json!({
            "n_hat": r.n_hat,
            "boundary": r.boundary,
            "runs": r.runs,
            "scores": r.scores.values().collect::<Vec<_>>(),
            "skipped": r.skipped.iter().map(|(n, e)| serde_json::json!({"n": n, "error": e})).collect::<Vec<_>>(),
        });
        let partial = !r.skipped.is_empty();
        let best = r.results.get(&r.n_hat).cloned().expect("selected order keeps its result");
        (best, report, partial)
    } else {
        let n = n.expect("checked above");
        let r = run_unmix(&cube, n, &opts).map_err(CliError::run("n"))?;
        let score = mos_score(&cube, &r, opts.l).map_err(CliError::run("n"))?;
        let report = serde_json::json!({ "n": n, "score": score });
        (r, report, false)
    };
    write_result_bundle(&out, &result).map_err(CliError::run("out"))?;
    let d = &result.diagnostics;
    let mut report = report;
    report["turbo_iterations"] = d.turbo_iterations.into();
    report["converged"] = d.converged.into();
    report["diverged"] = d.diverged.into();
    report["negative_endmember"] = d.negative_endmember.into();
    report["final_residual"] = d.residuals.last().copied().unwrap_or(f64::NAN).into();
    write_json(&out, "report.json", &report)?;
    write_meta(&out, serde_json::json!({ "command": if mos { "mos" } else { "unmix" }, "runtime_s": start.elapsed().as_secs_f64() }))?;
    let summary = if mos {
        format!("selected N = {} ({} runs), written to {}", report["n_hat"], report["runs"], out.display())
    } else {
        format!("unmixed into {} materials in {} turbo iterations, written to {}", result.endmembers.count(), d.turbo_iterations, out.display())
    };
    Ok(Outcome { summary, partial })
}

/// Compare an estimate bundle (`est`, or `est_s` + `est_a`) with the truth.
pub fn metrics(cfg: &Config) -> Result<Outcome, CliError> {
    let truth_s = read_matrix(cfg.existing_path("truth_s")?).map_err(CliError::run("truth_s"))?;
    let truth_a = read_matrix(cfg.existing_path("truth_a")?).map_err(CliError::run("truth_a"))?;
    let (s, a) = if cfg.has("est") {
        read_result_bundle(cfg.existing_path("est")?).map_err(CliError::run("est"))?
    } else {
        (
            read_matrix(cfg.existing_path("est_s")?).map_err(CliError::run("est_s"))?,
            read_matrix(cfg.existing_path("est_a")?).map_err(CliError::run("est_a"))?,
        )
    };
    let threshold = cfg.f64("threshold_db", SUCCESS_DB)?;
    let out = if cfg.has("out") { Some(cfg.out_dir()?) } else { None };
    cfg.bool("quiet", false)?;
    cfg.finish()?;
    let key = if cfg.has("est") { "est" } else { "est_s" };
    let report = evaluate(&truth_s, &truth_a, &s, &a, threshold).map_err(CliError::run(key))?;
    let json = serde_json::to_value(&report).map_err(|e| CliError::run("out")(e.into()))?;
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(CliError::io("out"))?;
        write_json(&dir, "metrics.json", &json)?;
    }
    Ok(Outcome { summary: json.to_string(), partial: false })
}
