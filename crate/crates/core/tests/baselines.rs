mod common;

use common::*;
use hutamp::baselines::*;
use hutamp::data::HsiCube;
use hutamp::nalgebra::{DMatrix, DVector};
use hutamp::synth::*;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

/// Best objective over all supports, each solved as an equality-constrained
/// least-squares problem through its KKT system.
fn fcls_oracle(y: &DVector<f64>, s: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let n = s.ncols();
    let mut best = (f64::INFINITY, DVector::zeros(n));
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|k| mask >> k & 1 == 1).collect();
        let k = idx.len();
        let sk = s.select_columns(&idx);
        let mut kkt = DMatrix::zeros(k + 1, k + 1);
        kkt.view_mut((0, 0), (k, k)).copy_from(&(sk.transpose() * &sk));
        for i in 0..k {
            kkt[(i, k)] = 1.0;
            kkt[(k, i)] = 1.0;
        }
        let mut rhs = DVector::zeros(k + 1);
        rhs.rows_mut(0, k).copy_from(&(sk.transpose() * y));
        rhs[k] = 1.0;
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        if sol.rows(0, k).iter().any(|&v| v < -1e-12) {
            continue;
        }
        let mut a = DVector::zeros(n);
        for (i, &c) in idx.iter().enumerate() {
            a[c] = sol[i].max(0.0);
        }
        let obj = (y - s * &a).norm_squared();
        if obj < best.0 {
            best = (obj, a);
        }
    }
    best
}

#[test]
fn fcls_matches_support_enumeration() {
    let mut rng = seeded(31);
    for _ in 0..40 {
        let (m, n, t) = (8, 4, 20);
        let s = DMatrix::from_fn(m, n, |_, _| rng.random_range(0.0..1.0));
        let y = DMatrix::from_fn(m, t, |_, _| rng.random_range(-0.2..1.2));
        let a = fcls_matrix(&y, &s).unwrap();
        for j in 0..t {
            let (obj, _) = fcls_oracle(&y.column(j).into_owned(), &s);
            let got = (y.column(j) - &s * a.column(j)).norm_squared();
            assert!((got - obj).abs() < 1e-8 * (1.0 + obj), "{got} vs {obj}");
        }
    }
}

#[test]
fn fcls_satisfies_kkt() {
    let mut rng = seeded(32);
    let s = DMatrix::from_fn(10, 5, |_, _| rng.random_range(0.0..1.0));
    let y = DMatrix::from_fn(10, 50, |_, _| rng.random_range(0.0..1.0));
    let a = fcls_matrix(&y, &s).unwrap();
    for j in 0..50 {
        let aj = a.column(j);
        let g = s.transpose() * (&s * aj - y.column(j));
        // multiplier of the sum constraint from the free coordinates
        let free: Vec<usize> = (0..5).filter(|&k| aj[k] > 1e-12).collect();
        let lam = -free.iter().map(|&k| g[k]).sum::<f64>() / free.len() as f64;
        for k in 0..5 {
            let r = g[k] + lam;
            if aj[k] > 1e-12 {
                assert!(r.abs() < 1e-8, "stationarity {r}");
            } else {
                assert!(r > -1e-8, "dual feasibility {r}");
            }
        }
    }
}

#[test]
fn fcls_vertex_and_midpoint() {
    let s = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.2]);
    let y = DMatrix::from_columns(&[s.column(1).into_owned(), (s.column(0) + s.column(1)) * 0.5]);
    let a = fcls_matrix(&y, &s).unwrap();
    assert!((a.column(0) - DVector::from_vec(vec![0.0, 1.0])).amax() < 1e-12);
    assert!((a.column(1) - DVector::from_vec(vec![0.5, 0.5])).amax() < 1e-12);
}

#[test]
fn duplicated_pure_columns_are_found() {
    let s = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 0.3, 0.9, 0.5, 0.1]);
    let y = DMatrix::from_columns(&[s.column(0), s.column(1), s.column(0), s.column(1)]);
    let e = fsnmf_extract(&HsiCube::new(y, 1, 4).unwrap(), 2, false).unwrap();
    let cols: Vec<_> = e.s.column_iter().map(|c| c.into_owned()).collect();
    assert!(cols.contains(&s.column(0).into_owned()) && cols.contains(&s.column(1).into_owned()));
}

#[test]
fn separable_noiseless_data_is_recovered_exactly() {
    for trial in 0..10 {
        let spec = SyntheticSpec { m: 30, n: 4, t1: 1, t2: 50, endmembers: EndmemberKind::Iid, abundances: AbundanceKind::KSparsePPure { k: 3, p: 4, alpha: 1.0 }, snr_db: None, seed: 40, trial };
        let sc = gen_synthetic(&spec).unwrap();
        let e = fsnmf_extract(&sc.cube, 4, false).unwrap();
        for k in 0..4 {
            assert!(e.s.column_iter().any(|c| c == sc.s.column(k)), "trial {trial} material {k}");
        }
    }
}

#[test]
fn rank_deficient_data_is_an_extraction_error() {
    let y = DMatrix::from_fn(5, 10, |i, _| i as f64 + 1.0);
    assert!(fsnmf_extract(&HsiCube::new(y, 1, 10).unwrap(), 3, false).is_err());
    assert!(fsnmf_extract(&HsiCube::new(DMatrix::from_element(3, 2, 1.0), 1, 2).unwrap(), 4, false).is_err());
}

#[test]
fn subspace_denoising_helps_at_20_db() {
    let mut wins = 0;
    for trial in 0..50 {
        let spec = SyntheticSpec { m: 50, n: 3, t1: 1, t2: 300, endmembers: EndmemberKind::Iid, abundances: AbundanceKind::KSparsePPure { k: 3, p: 3, alpha: 1.0 }, snr_db: Some(20.0), seed: 41, trial };
        let sc = gen_synthetic(&spec).unwrap();
        let err = |denoise| {
            let e = fsnmf_extract(&sc.cube, 3, denoise).unwrap();
            let perm = hutamp::metrics::align_by_sad(&sc.s, &e.s, hutamp::metrics::AlignKind::Columns).unwrap();
            (e.s.select_columns(&perm) - &sc.s).norm()
        };
        if err(true) < err(false) {
            wins += 1;
        }
    }
    assert!(wins >= 40, "{wins}/50");
}

#[test]
fn pca_projection_is_idempotent() {
    let mut rng = seeded(33);
    let y = DMatrix::from_fn(6, 40, |_, _| rng.sample::<f64, _>(StandardNormal));
    let p = PcaSubspace::fit(&y, 2).unwrap();
    let once = p.project(&y);
    assert!((p.project(&once) - &once).amax() < 1e-12);
    assert!((p.basis.transpose() * &p.basis - DMatrix::identity(2, 2)).amax() < 1e-12);
}

proptest! {
    #[test]
    fn fcls_output_is_feasible(
        s in proptest::collection::vec(0.0f64..1.0, 12),
        y in proptest::collection::vec(-2.0f64..2.0, 18),
    ) {
        let s = DMatrix::from_vec(6, 2, s).insert_column(2, 0.3);
        let a = fcls_matrix(&DMatrix::from_vec(6, 3, y), &s).unwrap();
        for col in a.column_iter() {
            prop_assert!(col.iter().all(|&v| v >= -1e-12));
            prop_assert!((col.sum() - 1.0).abs() < 1e-10);
        }
    }
}
