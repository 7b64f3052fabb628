mod common;

use nalgebra::DMatrix;

use common::TestRng;
use qarma::data::{standardize, Panel};
use qarma::factors::{extract_factors, recursive_factors, select_num_factors};
use qarma::synth::{generate_synthetic, SyntheticSpec};

fn noise_panel(t: usize, n: usize, seed: u64) -> Panel {
    let mut rng = TestRng::new(seed);
    let x = DMatrix::from_fn(t, n, |_, _| rng.normal());
    let names = (1..=n).map(|i| format!("x{i}")).collect();
    standardize(&Panel::from_matrix(x, names).unwrap()).unwrap()
}

/// Factors are `U_k S_k / √N` from the thin SVD, up to column signs.
#[test]
fn factors_match_svd() {
    for (t, n, seed) in [(40, 9, 1), (9, 40, 2), (25, 25, 3)] {
        let p = noise_panel(t, n, seed);
        let svd = p.values().clone().svd(true, false);
        let u = svd.u.unwrap();
        let s = svd.singular_values;
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let est = extract_factors(&p, 3).unwrap();
        for (j, &c) in order.iter().take(3).enumerate() {
            let oracle = u.column(c) * (s[c] / (n as f64).sqrt());
            let f = est.factors.column(j);
            let sign = if f.dot(&oracle) < 0.0 { -1.0 } else { 1.0 };
            assert!((f - oracle * sign).amax() < 1e-8, "t={t} n={n} factor {j}");
            assert!((est.eigenvalues[j] - s[c] * s[c]).abs() < 1e-8 * s[c] * s[c]);
        }
        let gram = est.loadings.tr_mul(&est.loadings) / n as f64;
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-10);
    }
}

#[test]
fn recursive_windows_ignore_later_rows() {
    let p = noise_panel(60, 12, 4);
    let a = recursive_factors(&p, 2, 35, 24, None).unwrap();
    let mut v = p.values().clone();
    for i in 35..60 {
        v[(i, 0)] += 100.0;
    }
    let q = Panel::from_matrix(v, p.series_names().to_vec()).unwrap();
    let b = recursive_factors(&q, 2, 35, 24, None).unwrap();
    assert_eq!(a.factors, b.factors);
    assert!(recursive_factors(&p, 2, 20, 24, None).is_err());
}

#[test]
fn information_criterion_finds_two_factors() {
    let spec = SyntheticSpec {
        t: 200,
        n: 50,
        seed: 21,
        ..SyntheticSpec::default()
    }
    .with_signal_to_noise(4.0);
    let d = generate_synthetic(&spec).unwrap();
    let x = standardize(&d.predictors()).unwrap();
    assert_eq!(select_num_factors(&x, 8).unwrap(), 2);
}
