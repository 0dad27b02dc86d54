use hutamp::metrics::sad;
use hutamp::nalgebra::DMatrix;
use hutamp::synth::*;

fn spec(abundances: AbundanceKind, endmembers: EndmemberKind, snr_db: Option<f64>) -> SyntheticSpec {
    SyntheticSpec { m: 50, n: 4, t1: 10, t2: 20, endmembers, abundances, snr_db, seed: 9, trial: 0 }
}

#[test]
fn identical_specs_give_identical_scenes() {
    let sp = spec(AbundanceKind::KSparsePPure { k: 2, p: 4, alpha: 1.0 }, EndmemberKind::Smooth, Some(30.0));
    let a = gen_synthetic(&sp).unwrap();
    let b = gen_synthetic(&sp).unwrap();
    assert_eq!(a.cube.data(), b.cube.data());
    let c = gen_synthetic(&SyntheticSpec { trial: 1, ..sp }).unwrap();
    assert_ne!(a.cube.data(), c.cube.data());
}

#[test]
fn abundance_columns_are_on_the_simplex() {
    for kind in [
        AbundanceKind::KSparsePPure { k: 3, p: 10, alpha: 0.5 },
        AbundanceKind::Dirichlet { alpha: 1.0 },
        AbundanceKind::Strips,
    ] {
        let sc = gen_synthetic(&spec(kind, EndmemberKind::Iid, None)).unwrap();
        for col in sc.a.column_iter() {
            assert!(col.iter().all(|&v| v >= 0.0));
            assert!((col.sum() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn sparsity_and_purity_counts() {
    let sc = gen_synthetic(&spec(AbundanceKind::KSparsePPure { k: 2, p: 8, alpha: 1.0 }, EndmemberKind::Iid, None)).unwrap();
    let pure = sc.a.column_iter().filter(|c| c.iter().any(|&v| v == 1.0)).count();
    assert!(pure >= 8);
    assert!(sc.a.column_iter().all(|c| c.iter().filter(|&&v| v > 0.0).count() <= 2));
}

#[test]
fn empirical_snr_matches_target() {
    let sp = SyntheticSpec { m: 100, n: 3, t1: 10, t2: 20, endmembers: EndmemberKind::Iid, abundances: AbundanceKind::Dirichlet { alpha: 1.0 }, snr_db: Some(25.0), seed: 2, trial: 0 };
    let clean = gen_synthetic(&SyntheticSpec { snr_db: None, ..sp.clone() }).unwrap();
    let noisy = gen_synthetic(&sp).unwrap();
    let z = &clean.s * &clean.a;
    let w = noisy.cube.data() - &z;
    let snr = 10.0 * (z.norm_squared() / w.norm_squared()).log10();
    assert!((snr - 25.0).abs() < 0.1, "{snr}");
}

#[test]
fn iid_endmembers_are_positive_with_expected_moments() {
    let sp = SyntheticSpec { m: 200, n: 20, ..spec(AbundanceKind::Dirichlet { alpha: 1.0 }, EndmemberKind::Iid, None) };
    let sc = gen_synthetic(&sp).unwrap();
    assert!(sc.s.iter().all(|&v| v >= 0.0));
    let mean = sc.s.mean();
    let var = sc.s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / sc.s.len() as f64;
    // N+(0.5, 0.05): mean 0.5 + 0.2236 h(-2.236), truncation is mild
    assert!((mean - 0.5066).abs() < 0.01, "{mean}");
    assert!((var - 0.0466).abs() < 0.004, "{var}");
}

#[test]
fn library_draws_respect_the_angle_floor() {
    let sc = gen_synthetic(&spec(AbundanceKind::Strips, EndmemberKind::Smooth, None)).unwrap();
    for i in 0..4 {
        for j in i + 1..4 {
            assert!(sad(sc.s.column(i).as_slice(), sc.s.column(j).as_slice()).unwrap() >= MIN_LIBRARY_SAD);
        }
    }
}

#[test]
fn tiny_library_is_rejected() {
    let lib = DMatrix::from_fn(50, 4, |r, c| 1.0 + 0.001 * (r * c) as f64);
    let err = gen_synthetic(&spec(AbundanceKind::Strips, EndmemberKind::Library(lib), None)).unwrap_err();
    assert!(matches!(err, hutamp::HutampError::Input(_)));
}
