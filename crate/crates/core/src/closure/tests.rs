use super::*;
use crate::integrate::{ConstantHistory, FnHistory};
use crate::models::LinearModel;
use crate::nn::{arch, Activation, ClosureFamily, LayerSpec};

const OBS: [f64; 3] = [0.5, 1.3, 2.0];

fn tight() -> StepperSpec {
    StepperSpec::dopri(1e-10, 1e-10)
}

fn toy_system(kind: ClosureKind) -> AugmentedSystem {
    let a = arch::toy(kind.family());
    AugmentedSystem::new(Arc::new(LinearModel::toy()), ClosureModel { kind, f: a.f, g: a.g }).unwrap()
}

fn history() -> impl History {
    FnHistory::new(2, |t: f64, out: &mut [f64]| {
        out[0] = 1.0 + 0.3 * t.sin();
        out[1] = 0.5 * (2.0 * t).cos();
    })
}

fn targets() -> Vec<Vec<f64>> {
    vec![vec![0.4, -0.2], vec![-0.3, 0.1], vec![0.2, 0.6]]
}

/// `Σ ½‖u(T_j) − d_j‖²`
fn loss(sys: &AugmentedSystem, params: &[f64], stepper: &StepperSpec) -> Result<f64> {
    let h = history();
    let mut u0 = vec![0.0; 2];
    h.eval(0.0, &mut u0);
    let run = forward(sys, params, &h, 0.0, &u0, 2.0, stepper, &OBS)?;
    let preds = run.states_at(&OBS)?;
    Ok(preds
        .iter()
        .zip(targets())
        .map(|(p, d)| 0.5 * p.iter().zip(&d).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum())
}

fn adjoint_gradient(sys: &AugmentedSystem, params: &[f64], stepper: &StepperSpec, scale: f64) -> Vec<f64> {
    let h = history();
    let mut u0 = vec![0.0; 2];
    h.eval(0.0, &mut u0);
    let run = forward(sys, params, &h, 0.0, &u0, 2.0, stepper, &OBS).unwrap();
    let obs: Vec<Observation> = OBS
        .iter()
        .zip(targets())
        .map(|(&t, d)| {
            let p = run.state_at(t).unwrap();
            Observation { t, grad: p.iter().zip(&d).map(|(a, b)| scale * (a - b)).collect() }
        })
        .collect();
    adjoint(sys, params, &h, &run, &obs, stepper).unwrap().grad
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    d / b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300)
}

fn random_params(sys: &AugmentedSystem, seed: u64) -> Vec<f64> {
    sys.closure.init_params(seed, false)
}

#[test]
fn zero_closure_reproduces_base() {
    let sys = toy_system(ClosureKind::Discrete { delays: vec![0.3] });
    let p = vec![0.0; sys.n_params()];
    let h = ConstantHistory(vec![1.0, 0.5]);
    let run = forward(&sys, &p, &h, 0.0, &[1.0, 0.5], 2.0, &tight(), &[]).unwrap();
    let base = forward_base(sys.base.as_ref(), 0.0, &[1.0, 0.5], 2.0, &tight(), &[]).unwrap();
    let a = run.state_at(2.0).unwrap();
    let b = base.query(2.0, Side::Above).unwrap();
    assert!(rel_err(&a, &b) < 1e-9);
}

#[test]
fn constant_closure_matches_closed_form() {
    struct Decay;
    impl LowFidelityModel for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, u: &[f64], out: &mut [f64]) {
            out[0] = -u[0];
        }
    }
    let c = 0.7;
    let f = Network::new((1, 1), vec![LayerSpec::Dense { inp: 1, out: 1, act: Activation::Linear }]).unwrap();
    let sys = AugmentedSystem::new(Arc::new(Decay), ClosureModel { kind: ClosureKind::Markovian, f, g: None }).unwrap();
    let run = forward(&sys, &[0.0, c], &ConstantHistory(vec![2.0]), 0.0, &[2.0], 1.0, &tight(), &[]).unwrap();
    let exact = c + (2.0 - c) * (-1.0f64).exp();
    assert!((run.state_at(1.0).unwrap()[0] - exact).abs() < 1e-9);
}

#[test]
fn zero_memory_network_keeps_memory_at_zero() {
    let sys = toy_system(ClosureKind::Distributed { tau1: 0.1, tau2: 0.4, quad_panels: 8 });
    let mut p = random_params(&sys, 3);
    let nt = sys.closure.n_theta();
    p[nt..].fill(0.0);
    let h = history();
    let run = forward(&sys, &p, &h, 0.0, &[1.0, 0.5], 2.0, &tight(), &[]).unwrap();
    for t in [0.0, 0.7, 2.0] {
        assert!(run.memory_at(t).unwrap().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn discrete_adjoint_matches_finite_differences() {
    for delays in [vec![0.3], vec![0.25, 0.6]] {
        let sys = toy_system(ClosureKind::Discrete { delays });
        let p = random_params(&sys, 7);
        let adj = adjoint_gradient(&sys, &p, &tight(), 1.0);
        let fd = fd_gradient(&p, 1e-5, |q| loss(&sys, q, &tight())).unwrap();
        let e = rel_err(&adj, &fd);
        assert!(e < 1e-4, "relative error {e}");
    }
}

#[test]
fn distributed_adjoint_matches_finite_differences() {
    for (tau1, tau2) in [(0.0, 0.5), (0.2, 0.7)] {
        let sys = toy_system(ClosureKind::Distributed { tau1, tau2, quad_panels: 8 });
        let p = random_params(&sys, 11);
        let adj = adjoint_gradient(&sys, &p, &tight(), 1.0);
        let fd = fd_gradient(&p, 1e-5, |q| loss(&sys, q, &tight())).unwrap();
        let nt = sys.closure.n_theta();
        let (et, ep) = (rel_err(&adj[..nt], &fd[..nt]), rel_err(&adj[nt..], &fd[nt..]));
        assert!(et < 1e-4 && ep < 1e-4, "({tau1}, {tau2}): theta {et}, phi {ep}");
    }
}

#[test]
fn collapsed_window_leaves_only_history_term() {
    for tau in [0.3, 0.0] {
        let sys = toy_system(ClosureKind::Distributed { tau1: tau, tau2: tau, quad_panels: 8 });
        let p = random_params(&sys, 5);
        let adj = adjoint_gradient(&sys, &p, &tight(), 1.0);
        let nt = sys.closure.n_theta();
        assert!(adj[nt..].iter().all(|&v| v == 0.0));
        let fd = fd_gradient(&p, 1e-5, |q| loss(&sys, q, &tight())).unwrap();
        assert!(rel_err(&adj[..nt], &fd[..nt]) < 1e-4, "window at {tau}");
    }
}

#[test]
fn markovian_reduction_matches_reference() {
    let stepper = StepperSpec::Rk4 { dt: 0.01 };
    let sys = toy_system(ClosureKind::Discrete { delays: vec![] });
    let p = random_params(&sys, 13);
    let u0 = [1.0, 0.5];
    let h = ConstantHistory(u0.to_vec());
    let run = forward(&sys, &p, &h, 0.0, &u0, 2.0, &stepper, &OBS).unwrap();
    let d = targets();
    let obs: Vec<Observation> = OBS
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let u = run.state_at(t).unwrap();
            Observation { t, grad: u.iter().zip(&d[j]).map(|(a, b)| a - b).collect() }
        })
        .collect();
    let adj = adjoint(&sys, &p, &h, &run, &obs, &stepper).unwrap().grad;
    let lg = |j: usize, u: &[f64]| -> Vec<f64> { u.iter().zip(&d[j]).map(|(a, b)| a - b).collect() };
    let reference = markovian_reference_gradient(&sys, &p, 0.0, &u0, &OBS, &lg, &stepper).unwrap();
    let e = rel_err(&adj, &reference);
    assert!(e < 1e-10, "relative difference {e}");
}

#[test]
fn perfect_prediction_gives_zero_gradient() {
    let sys = toy_system(ClosureKind::Discrete { delays: vec![0.3] });
    let p = random_params(&sys, 2);
    let adj = adjoint_gradient(&sys, &p, &tight(), 0.0);
    assert!(adj.iter().all(|&v| v == 0.0));
}

#[test]
fn gradient_is_linear_in_loss_weights() {
    let sys = toy_system(ClosureKind::Distributed { tau1: 0.1, tau2: 0.5, quad_panels: 8 });
    let p = random_params(&sys, 4);
    let stepper = StepperSpec::Rk4 { dt: 0.02 };
    let g1 = adjoint_gradient(&sys, &p, &stepper, 1.0);
    let g2 = adjoint_gradient(&sys, &p, &stepper, 2.0);
    let doubled: Vec<f64> = g1.iter().map(|v| 2.0 * v).collect();
    assert!(rel_err(&g2, &doubled) < 1e-12);
}

#[test]
fn adjoint_vanishes_after_final_time() {
    let sys = toy_system(ClosureKind::Discrete { delays: vec![0.3] });
    let p = random_params(&sys, 8);
    let h = ConstantHistory(vec![1.0, 0.5]);
    let run = forward(&sys, &p, &h, 0.0, &[1.0, 0.5], 2.0, &tight(), &[1.0]).unwrap();
    let obs = [Observation { t: 1.0, grad: vec![1.0, -1.0] }];
    let a = adjoint(&sys, &p, &h, &run, &obs, &tight()).unwrap();
    assert_eq!(a.lambda_at(2.0).unwrap(), vec![0.0, 0.0]);
    assert!(a.lambda_at(1.5).unwrap().iter().all(|&v| v == 0.0));
    assert!(a.lambda_at(0.5).unwrap().iter().any(|&v| v != 0.0));
}

#[test]
fn finite_difference_of_quadratic_is_exact() {
    let g = fd_gradient(&[1.5, -2.0], 1e-3, |p| Ok(3.0 * p[0] * p[0] + p[1])).unwrap();
    assert!((g[0] - 9.0).abs() < 1e-9 && (g[1] - 1.0).abs() < 1e-9);
}

#[test]
fn shape_mismatches_are_rejected() {
    let a = arch::toy(ClosureFamily::Markovian);
    let bad = AugmentedSystem::new(
        Arc::new(LinearModel::toy()),
        ClosureModel { kind: ClosureKind::Discrete { delays: vec![0.2] }, f: a.f.clone(), g: None },
    );
    assert!(bad.is_err());
    let unsorted = ClosureKind::Discrete { delays: vec![0.5, 0.2] };
    assert!(unsorted.validate().is_err());
    let sys = toy_system(ClosureKind::Markovian);
    let h = ConstantHistory(vec![0.0, 0.0]);
    assert!(matches!(
        forward(&sys, &[0.0; 3], &h, 0.0, &[0.0, 0.0], 1.0, &tight(), &[]),
        Err(ClosureError::ParamLength { .. })
    ));
}
