use approx::assert_abs_diff_eq;
use coherent_usd::bounds::{bergou_bound, peres_terno_bound};
use coherent_usd::info::{capacity, finite_rate, mutual_information, ChannelModel};
use coherent_usd::lop::{apply_lop, extend_to_unitary, random_unitary};
use coherent_usd::numerics::{max_abs_diff, max_singular_value, null_space};
use coherent_usd::receiver::{design_class1, evaluate_receiver};
use coherent_usd::*;
use proptest::prelude::*;

fn random_code(c: usize, m: usize, seed: u64) -> Constellation {
    let mut rng = RngStream::new(seed, 0);
    let states = (0..c)
        .map(|_| {
            AmplitudeVector::new((0..m).map(|_| C64::new(rng.standard_normal(), rng.standard_normal()) * 0.7).collect())
                .unwrap()
        })
        .collect();
    Constellation::uniform(states).unwrap()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| C64::new(rng.standard_normal(), rng.standard_normal()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_matrices_are_lop_invariant(c in 1usize..5, m in 1usize..5, seed in any::<u64>()) {
        let code = random_code(c, m, seed);
        let u = random_unitary(m, &mut RngStream::new(seed, 1)).unwrap();
        let moved = Constellation::uniform(code.states().iter().map(|s| apply_lop(&u, s).unwrap()).collect()).unwrap();
        prop_assert!(max_abs_diff(&phase_space_gram(&code), &phase_space_gram(&moved)) < 1e-10);
        prop_assert!(max_abs_diff(&hilbert_gram(&code), &hilbert_gram(&moved)) < 1e-10);
        let g = phase_space_gram(&code);
        prop_assert!(max_abs_diff(&g, &g.adjoint()) < 1e-12);
        prop_assert!(numerics::hermitian_min_eigenvalue(&g) > -1e-10);
    }

    #[test]
    fn null_space_is_orthonormal_kernel(rows in 1usize..5, cols in 1usize..6, seed in any::<u64>()) {
        let a = random_matrix(rows, cols, &mut RngStream::new(seed, 0));
        let n = null_space(&a, 1e-10).unwrap();
        prop_assert_eq!(n.ncols(), cols.saturating_sub(rows));
        if n.ncols() > 0 {
            prop_assert!((&a * &n).iter().all(|z| z.norm() < 1e-10));
            let gram = n.adjoint() * &n;
            prop_assert!(max_abs_diff(&gram, &CMatrix::identity(n.ncols(), n.ncols())) < 1e-10);
        }
    }

    #[test]
    fn dilation_contains_the_block(rows in 1usize..4, cols in 1usize..4, shrink in 0.0f64..0.5, seed in any::<u64>()) {
        let a = random_matrix(rows, cols, &mut RngStream::new(seed, 0));
        let m = a.scale(1.0 / (max_singular_value(&a) * (1.0 + shrink)));
        let ext = extend_to_unitary(&m).unwrap();
        prop_assert!(max_abs_diff(&ext.unitary.block(rows, cols), &m) < 1e-10);
        let u = ext.unitary.matrix();
        prop_assert!(max_abs_diff(&(u.adjoint() * u), &CMatrix::identity(u.nrows(), u.nrows())) < 1e-10);
    }

    #[test]
    fn click_statistics_ignore_global_phase(seed in any::<u64>(), theta in 0.0f64..6.3) {
        let code = random_code(3, 3, seed);
        let r = design_class1(&code).unwrap().receiver;
        let phase = C64::from_polar(1.0, theta);
        for s in code.states() {
            let rotated: Vec<C64> = s.as_slice().iter().map(|a| a * phase).collect();
            let p = r.click_probabilities(s.as_slice()).unwrap();
            let q = r.click_probabilities(&rotated).unwrap();
            for (x, y) in p.iter().zip(&q) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn finite_rate_is_symmetric_about_one_half(c in 0.0f64..3.0, v in 0.0f64..5.0, l in 1u64..100_000, eps in 0.001f64..0.5) {
        let lo = finite_rate(c, v, l, eps).unwrap();
        let hi = finite_rate(c, v, l, 1.0 - eps).unwrap();
        prop_assert!(lo <= c + 1e-12);
        prop_assert!(((lo - c) + (hi - c)).abs() < 1e-9);
    }

    #[test]
    fn capacity_dominates_every_input(q in proptest::collection::vec(0.0f64..1.0, 3), w in proptest::collection::vec(0.01f64..1.0, 3)) {
        let ch = ChannelModel::from_inconclusive(&q).unwrap();
        let cap = capacity(&ch, 1e-10).unwrap();
        let total: f64 = w.iter().sum();
        let px: Vec<f64> = w.iter().map(|x| x / total).collect();
        prop_assert!(mutual_information(&ch, &px).unwrap() <= cap.capacity + 1e-9);
        prop_assert!(cap.capacity <= 3f64.log2() + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn class1_is_unambiguous_and_above_the_bound(seed in any::<u64>()) {
        let code = random_code(3, 3, seed);
        let design = design_class1(&code).unwrap();
        let ch = evaluate_receiver(&design.receiver, &code).unwrap();
        prop_assert!(ch.max_wrong_conclusive() < 1e-10);
        for row in ch.rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let bound = bergou_bound(&code).unwrap().p0;
        prop_assert!(design.p0_average >= bound - 1e-9);
        let pt = peres_terno_bound(&code).unwrap().p0;
        prop_assert!((pt - bound).abs() < 1e-6);
    }
}

#[test]
fn ppm_is_its_own_reduction() {
    let code = builtin_code(BuiltinCode::Ppm { modes: 4 }, C64::new(0.9, 0.0)).unwrap();
    let red = ppm_reduction(&code, false).unwrap();
    assert_abs_diff_eq!(red.residual, 0.0, epsilon = 1e-8);
    assert_abs_diff_eq!(red.tau, 0.81, epsilon = 1e-8);
}
