mod common;

use common::*;
use duallearn::models::{lagrangian_and_grad, Arch, ParamModel};
use duallearn::problem::{DualVector, FunctionTable, ProblemSpec};
use duallearn::unparam::UnparamSolver;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check_param_gradients(problem: &ProblemSpec, arch: Arch, draws: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for k in 0..draws {
        let model = random_model(problem, arch, k, 0.8);
        let lambda = DualVector::new(random_lambda(problem.m(), &mut rng, 3.0)).unwrap();
        let (_, grad) = lagrangian_and_grad(&model, problem, &lambda).unwrap();
        let fd = central_diff(
            |theta| {
                let m = ParamModel {
                    theta: theta.to_vec(),
                    ..model.clone()
                };
                lagrangian_and_grad(&m, problem, &lambda).unwrap().0
            },
            &model.theta,
            1e-6,
        );
        worst = worst.max(rel_err(&grad, &fd, 1e-8));
    }
    worst
}

#[test]
fn squared_and_group_mean_parameter_gradients() {
    let p = regression(12, 1);
    assert!(check_param_gradients(&p, Arch::Linear, 10) < 1e-5);
    assert!(check_param_gradients(&p, Arch::Mlp2 { hidden_width: 3 }, 10) < 1e-5);
}

#[test]
fn cross_entropy_and_kl_parameter_gradients() {
    let p = fairness(8, 2, 1e-2);
    assert!(check_param_gradients(&p, Arch::Linear, 5) < 1e-5);
    assert!(check_param_gradients(&p, Arch::Mlp2 { hidden_width: 3 }, 5) < 1e-5);
}

#[test]
fn cross_entropy_and_mean_logit_parameter_gradients() {
    let p = logit_mean(10, 3);
    assert!(check_param_gradients(&p, Arch::Mlp2 { hidden_width: 4 }, 10) < 1e-5);
}

#[test]
fn table_gradient_matches_finite_differences() {
    let p = fairness(6, 4, 1e-2);
    let n = p.dataset().support_size();
    let d = p.output_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lambda = random_lambda(p.m(), &mut rng, 2.0);
    let x: Vec<f64> = random_lambda(n * d, &mut rng, 2.0).iter().map(|v| v - 1.0).collect();
    let table = FunctionTable::from_vec(n, d, x.clone()).unwrap();
    let eval = p.lagrangian_grad(&table, &lambda).unwrap();
    let fd = central_diff(|v| p.lagrangian(&FunctionTable::from_vec(n, d, v.to_vec()).unwrap(), &lambda).unwrap().0, &x, 1e-6);
    assert!(rel_err(&eval.grad, &fd, 1e-8) < 1e-6);
}

#[test]
fn dual_gradient_is_the_slack_vector() {
    let p = regression(20, 9);
    let mut solver = UnparamSolver::new(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let lambda = random_lambda(p.m(), &mut rng, 2.0);
        let slacks = solver.dual(&lambda).unwrap().slacks;
        let mut s2 = UnparamSolver::new(&p).unwrap();
        let fd = central_diff(|l| s2.dual(l).unwrap().value, &lambda, 1e-5);
        assert!(rel_err(&slacks, &fd, 1e-8) < 1e-6, "{slacks:?} vs {fd:?}");
    }
}
