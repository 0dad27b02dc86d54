//! On-disk result and truth bundles.

use crate::data::{read_matrix, store_cube, write_matrix};
use crate::error::Result;
use crate::synth::{SyntheticScene, SyntheticSpec};
use crate::turbo::UnmixResult;
use nalgebra::DMatrix;
use std::fs;
use std::io::Write;
use std::path::Path;

/// Write `S.csv`, `A.csv`, `omega.json` and `log.jsonl` into `dir`.
pub fn write_result_bundle(dir: impl AsRef<Path>, result: &UnmixResult) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_matrix(dir.join("S.csv"), &result.endmembers.s)?;
    write_matrix(dir.join("A.csv"), &result.abundances.a)?;
    fs::write(dir.join("omega.json"), serde_json::to_string_pretty(&result.omega.to_flat_json())?)?;
    let mut log = fs::File::create(dir.join("log.jsonl"))?;
    for entry in &result.diagnostics.log {
        writeln!(log, "{}", serde_json::to_string(entry)?)?;
    }
    Ok(())
}

/// `(S, A)` from a result bundle.
pub fn read_result_bundle(dir: impl AsRef<Path>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let dir = dir.as_ref();
    Ok((read_matrix(dir.join("S.csv"))?, read_matrix(dir.join("A.csv"))?))
}

/// Write `cube.csv`, `S_true.csv`, `A_true.csv` and `meta.json` into `dir`.
pub fn write_truth_bundle(dir: impl AsRef<Path>, spec: &SyntheticSpec, scene: &SyntheticScene) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    store_cube(dir.join("cube.csv"), &scene.cube)?;
    write_matrix(dir.join("S_true.csv"), &scene.s)?;
    write_matrix(dir.join("A_true.csv"), &scene.a)?;
    let meta = serde_json::json!({ "spec": spec, "seed": spec.seed, "psi": scene.psi });
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}
