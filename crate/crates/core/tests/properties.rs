mod common;

use common::*;
use duallearn::certificates::{constraint_deviation_bound, dual_distance_bound, gamma1, gamma2, parametrization_gap_bound, ConstantEstimates};
use duallearn::dual::{dual_update, BatchSize};
use duallearn::harness::stats::oscillation_from;
use duallearn::harness::spearman;
use duallearn::models::{checkpoint, lagrangian_and_grad, Arch};
use duallearn::problem::DualVector;
use duallearn::unparam::{UnparamConfig, UnparamSolver};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dual_update_stays_in_the_orthant(
        lambda in prop::collection::vec(0.0f64..10.0, 1..6),
        slacks in prop::collection::vec(-5.0f64..5.0, 6),
        eta in 0.0f64..3.0,
    ) {
        let l = DualVector::new(lambda.clone()).unwrap();
        let next = dual_update(&l, &slacks[..lambda.len()], eta);
        prop_assert!(next.as_slice().iter().all(|v| *v >= 0.0));
        // projection is idempotent and zero slack is a fixed point
        prop_assert_eq!(dual_update(&next, &vec![0.0; lambda.len()], eta), next.clone());
        for ((n, l), s) in next.as_slice().iter().zip(&lambda).zip(&slacks) {
            if *s >= 0.0 { prop_assert!(*n >= *l); } else { prop_assert!(*n <= *l); }
        }
    }

    #[test]
    fn weak_duality_and_concavity_of_the_unparametrized_dual(
        a in prop::collection::vec(0.0f64..3.0, 2),
        b in prop::collection::vec(0.0f64..3.0, 2),
    ) {
        let p = regression(16, 3);
        let opt = UnparamSolver::new(&p).unwrap().solve(&UnparamConfig::default()).unwrap();
        let mut s = UnparamSolver::new(&p).unwrap();
        let ga = s.dual(&a).unwrap().value;
        let gb = s.dual(&b).unwrap().value;
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let gm = s.dual(&mid).unwrap().value;
        prop_assert!(ga <= opt.primal_value + 1e-9);
        prop_assert!(gb <= opt.primal_value + 1e-9);
        prop_assert!(gm >= 0.5 * (ga + gb) - 1e-10);
    }

    #[test]
    fn parametrized_lagrangian_dominates_the_unparametrized_dual(
        seed in 0u64..1000,
        l in prop::collection::vec(0.0f64..3.0, 2),
    ) {
        let p = regression(12, 5);
        let model = random_model(&p, Arch::Mlp2 { hidden_width: 4 }, seed, 1.0);
        let (value, _) = lagrangian_and_grad(&model, &p, &DualVector::new(l.clone()).unwrap()).unwrap();
        let g = UnparamSolver::new(&p).unwrap().dual(&l).unwrap().value;
        prop_assert!(value >= g - 1e-10);
    }

    #[test]
    fn bounds_are_nonnegative_and_monotone_in_nu(
        m in 1usize..8,
        lip in 0.1f64..5.0,
        beta in 0.1f64..5.0,
        mu0 in 0.01f64..2.0,
        sigma in 0.01f64..2.0,
        nu in 0.0f64..1.0,
        extra in 0.0f64..1.0,
        lu in 0.0f64..5.0,
        lp in 0.0f64..5.0,
    ) {
        let at = |nu: f64| ConstantEstimates::from_primitives(m, lip, beta, mu0, sigma, nu, lu, lp, lp);
        let (lo, hi) = (at(nu), at(nu + extra));
        for f in [gamma1, gamma2, constraint_deviation_bound, parametrization_gap_bound, dual_distance_bound] {
            prop_assert!(f(&lo) >= 0.0);
            prop_assert!(f(&hi) >= f(&lo));
            prop_assert_eq!(f(&at(0.0)), 0.0);
            // pure arithmetic: recomputation is bit-exact
            prop_assert_eq!(f(&lo).to_bits(), f(&at(nu)).to_bits());
        }
    }

    #[test]
    fn spearman_is_bounded_and_rank_invariant(
        x in prop::collection::vec(-10.0f64..10.0, 3..12),
        y in prop::collection::vec(-10.0f64..10.0, 12),
    ) {
        let y = &y[..x.len()];
        if let Some(r) = spearman(&x, y) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            prop_assert!((spearman(y, &x).unwrap() - r).abs() < 1e-12);
            let cubed: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0).collect();
            prop_assert!((spearman(&cubed, y).unwrap() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn oscillation_frequencies_are_consistent(
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..40),
        obj in prop::collection::vec(0.5f64..1.5, 40),
    ) {
        let s = oscillation_from(&obj[..rows.len()], &rows, 0.05);
        let max_single = s.violation_frequency.iter().cloned().fold(0.0, f64::max);
        prop_assert!(s.violation_frequency.iter().all(|f| (0.0..=1.0).contains(f)));
        prop_assert!(s.any_violation_frequency >= max_single);
        prop_assert!(s.any_violation_frequency <= s.violation_frequency.iter().sum::<f64>() + 1e-12);
        prop_assert!(s.max_violation >= 0.0);
    }

    #[test]
    fn checkpoints_round_trip(seed in 0u64..500, width in 1usize..6) {
        let p = regression(6, 1);
        let model = random_model(&p, Arch::Mlp2 { hidden_width: width }, seed, 2.0);
        let back = checkpoint::from_bytes(&checkpoint::to_bytes(&model)).unwrap();
        prop_assert_eq!(back, model);
    }

    #[test]
    fn batch_size_serde_round_trip(n in 1usize..100_000) {
        let b = BatchSize::Sources(n);
        prop_assert_eq!(serde_json::from_str::<BatchSize>(&serde_json::to_string(&b).unwrap()).unwrap(), b);
    }
}
