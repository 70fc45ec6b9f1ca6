use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use sketchyggn::network::{
    flatten_rows, forward, gradient, implicit_jacobian, init_network, ntk_kernel, unflatten_rows, Dataset,
    KernelMethod,
};
use sketchyggn::operator::{adjointness_error, LinearOperator, RowScaled, Transposed};
use sketchyggn::regression::{
    condition_composition_check, fast_regression, naive_normal_solve, RegressionConfig, RICHARDSON_CONTRACTION,
};
use sketchyggn::rng::rng_from_seed;
use sketchyggn::sketch::{build_sketch, fwht, sketch_matrix, SketchSpec};
use sketchyggn::trainer::{choose_eps0, EPS0_CAP};

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

fn unit_data(n: usize, d: usize, seed: u64) -> Dataset {
    let labels = gaussian(n, 1, seed ^ 0x55).column(0).into_owned();
    Dataset::normalized(gaussian(d, n, seed), labels).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fwht_preserves_norm_and_is_an_involution(log_len in 0u32..11, seed in any::<u64>()) {
        let v: Vec<f64> = gaussian(1 << log_len, 1, seed).iter().copied().collect();
        let h = fwht(&v).unwrap();
        let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!((norm(&h) - norm(&v)).abs() <= 1e-12 * norm(&v).max(1.0));
        let back = fwht(&h).unwrap();
        for (a, b) in back.iter().zip(&v) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn dense_and_scaled_operators_are_adjoint(rows in 1usize..40, cols in 1usize..12, seed in any::<u64>()) {
        let a = gaussian(rows, cols, seed);
        prop_assert!(adjointness_error(&a, seed) <= 1e-12);
        prop_assert!(adjointness_error(&Transposed(&a), seed) <= 1e-12);
        let scale = gaussian(rows, 1, seed.wrapping_add(1)).column(0).into_owned();
        let op = RowScaled::new(&a, scale).unwrap();
        prop_assert!(adjointness_error(&op, seed) <= 1e-12);
        let v = gaussian(cols, 1, seed.wrapping_add(2)).column(0).into_owned();
        let fused = a.normal_apply(&v);
        let plain = a.tr_mul(&(&a * &v));
        prop_assert!((&fused - &plain).amax() <= 1e-12 * plain.amax().max(1.0));
    }

    #[test]
    fn implicit_jacobian_is_adjoint_and_matches_rows(
        m in 1usize..16, d in 1usize..6, n in 1usize..6, seed in any::<u64>()
    ) {
        let net = init_network(m, d, seed).unwrap();
        let data = unit_data(n, d, seed);
        let jac = implicit_jacobian(&net, &data).unwrap();
        prop_assert!(adjointness_error(&jac, seed) <= 1e-12);
        let dense = jac.to_dense();
        for i in 0..n {
            let row = jac.jac_column(i);
            prop_assert!((dense.row(i).transpose() - row).amax() <= 1e-12);
        }
        let residual = forward(&net, &data).unwrap() - data.labels();
        let grad = flatten_rows(&gradient(&net, &data).unwrap());
        prop_assert!((jac.jac_apply_transpose(&residual) - grad).amax() <= 1e-12);
    }

    #[test]
    fn flatten_round_trips(rows in 1usize..10, cols in 1usize..10, seed in any::<u64>()) {
        let w = gaussian(rows, cols, seed);
        let flat = flatten_rows(&w);
        for r in 0..rows {
            for c in 0..cols {
                prop_assert_eq!(flat[r * cols + c], w[(r, c)]);
            }
        }
        prop_assert_eq!(unflatten_rows(rows, cols, &flat), w);
    }

    #[test]
    fn sketch_is_deterministic_and_linear(input in 1usize..300, seed in any::<u64>()) {
        let padded = input.next_power_of_two();
        let rows = (padded / 2).max(1);
        let spec = SketchSpec::new(input, rows, 0.1, seed).unwrap();
        let s1 = build_sketch(&spec).unwrap();
        let s2 = build_sketch(&spec).unwrap();
        prop_assert_eq!(s1.signs(), s2.signs());
        prop_assert_eq!(s1.sample_indices(), s2.sample_indices());
        let a = gaussian(input, 3, seed);
        let sa = sketch_matrix(&s1, &a).unwrap();
        let v = DVector::from_row_slice(&[0.5, -1.0, 2.0]);
        let direct = s1.apply((&a * &v).as_slice()).unwrap();
        let via = &sa * &v;
        for (x, y) in direct.iter().zip(via.iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn condition_composition_holds(seed in any::<u64>(), k in 1usize..9) {
        let a = gaussian(k, k, seed);
        let b = gaussian(k, k, seed.wrapping_mul(3).wrapping_add(1));
        prop_assert!(condition_composition_check(&a, &b).unwrap());
    }

    #[test]
    fn fast_regression_meets_its_target(rows in 64usize..400, cols in 1usize..10, seed in any::<u64>()) {
        let a = gaussian(rows, cols, seed);
        let y = gaussian(cols, 1, seed.wrapping_add(9)).column(0).into_owned();
        let report = fast_regression(&a, &y, &RegressionConfig::new(1e-10, seed)).unwrap();
        let achieved = (a.tr_mul(&(&a * &report.solution)) - &y).norm();
        prop_assert!(achieved <= 1e-10 * y.norm() * (1.0 + 1e-6));
        prop_assert!(report.max_contraction() <= RICHARDSON_CONTRACTION);
        let naive = naive_normal_solve(&a, &y).unwrap();
        prop_assert!((&report.solution - &naive).norm() <= 1e-8 * naive.norm());
    }

    #[test]
    fn eps0_never_exceeds_cap(lambda in 1e-9f64..10.0, n in 1usize..10_000) {
        let eps0 = choose_eps0(lambda, n, None).unwrap();
        prop_assert!(eps0 > 0.0 && eps0 <= EPS0_CAP);
        prop_assert!(eps0 <= (lambda / n as f64).sqrt() / 6.0 + 1e-15);
    }

    #[test]
    fn closed_form_kernel_is_symmetric_psd(n in 1usize..8, d in 2usize..6, seed in any::<u64>()) {
        let data = unit_data(n, d, seed);
        let k = ntk_kernel(&data, KernelMethod::ClosedForm, 0, seed).unwrap();
        prop_assert!((&k.matrix - k.matrix.transpose()).amax() == 0.0);
        prop_assert!(k.lambda_min >= -1e-8);
        for i in 0..n {
            prop_assert!((k.matrix[(i, i)] - 0.5).abs() <= 1e-15);
        }
    }
}
