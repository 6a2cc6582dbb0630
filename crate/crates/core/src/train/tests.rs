use std::sync::Arc;

use super::*;
use crate::closure::{fd_gradient, forward_base, ClosureKind, ClosureModel};
use crate::integrate::Side;
use crate::linalg::Mat;
use crate::models::{LinearModel, LowFidelityModel};
use crate::nn::arch;

fn toy_system(kind: ClosureKind) -> AugmentedSystem {
    let a = arch::toy(kind.family());
    AugmentedSystem::new(Arc::new(LinearModel::toy()), ClosureModel { kind, f: a.f, g: a.g }).unwrap()
}

/// Samples of a damped oscillator that the toy model gets slightly wrong.
fn truth(t_end: f64, dt: f64) -> SnapshotDataset {
    let model = LinearModel { a: Mat::from_rows(&[vec![-0.3, 1.2], vec![-1.2, -0.3]]).unwrap() };
    let stepper = StepperSpec::dopri(1e-10, 1e-10);
    let n = (t_end / dt).round() as usize;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
    let traj = forward_base(&model, 0.0, &[1.0, 0.0], t_end, &stepper, &times).unwrap();
    let states = times.iter().map(|&t| traj.query(t, Side::Above).unwrap()).collect();
    SnapshotDataset::new(times, states).unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch: BatchSpec::new(4),
        iterations_per_epoch: None,
        schedule: LrSchedule { lr0: 0.02, decay_rate: 0.97, decay_steps: 10, staircase: false },
        rho: 0.9,
        eps: 1e-7,
        loss: LossSpec::default(),
        reduction: GradReduction::Sum,
        train_span: (0.0, 2.0),
        val_span: (2.0, 3.0),
        forward: StepperSpec::Rk4 { dt: 0.025 },
        adjoint: None,
    }
}

#[test]
fn zero_epochs_leave_parameters_alone() {
    let sys = toy_system(ClosureKind::Discrete { delays: vec![0.2] });
    let data = truth(3.0, 0.05);
    let cfg = config(0);
    let p0 = sys.closure.init_params(1, true);
    let mut st = TrainState::new(p0.clone(), &cfg, 9);
    let recs = train(&sys, &data, &cfg, &mut st, |_, _| {}).unwrap();
    assert_eq!(st.params, p0);
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].epoch, 0);
    assert_eq!(recs[0].batch_loss, None);
}

#[test]
fn zero_residual_data_gives_no_update() {
    let sys = toy_system(ClosureKind::Discrete { delays: vec![0.2] });
    let times: Vec<f64> = (0..61).map(|i| i as f64 * 0.05).collect();
    let data = SnapshotDataset::new(times, vec![vec![0.0, 0.0]; 61]).unwrap();
    let cfg = config(1);
    let p0 = sys.closure.init_params(2, true);
    let mut st = TrainState::new(p0.clone(), &cfg, 3);
    let recs = train(&sys, &data, &cfg, &mut st, |_, _| {}).unwrap();
    assert_eq!(st.params, p0);
    assert_eq!(recs[1].batch_loss, Some(0.0));
}

#[test]
fn window_gradient_matches_finite_differences() {
    let data = truth(3.0, 0.05);
    let mut cfg = config(1);
    cfg.forward = StepperSpec::dopri(1e-10, 1e-10);
    cfg.loss = LossSpec { kind: LossKind::TimeAvgL2, positivity_weight: 0.5 };
    for kind in [
        ClosureKind::Discrete { delays: vec![0.1, 0.25] },
        ClosureKind::Distributed { tau1: 0.0, tau2: 0.2, quad_panels: 8 },
    ] {
        let sys = toy_system(kind);
        let p = sys.closure.init_params(4, false);
        let w = Window { start: 10, targets: vec![12, 14, 16] };
        let (_, g) = window_loss_grad(&sys, &p, &data, &w, &cfg).unwrap();
        let fd = fd_gradient(&p, 1e-5, |q| {
            window_loss_grad(&sys, q, &data, &w, &cfg).map(|r| r.0).map_err(|e| match e {
                TrainError::Closure(c) => c,
                other => panic!("{other}"),
            })
        })
        .unwrap();
        let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(num / den < 1e-4, "relative error {}", num / den);
    }
}

#[test]
fn mean_reduction_divides_by_batch_size() {
    let sys = toy_system(ClosureKind::Markovian);
    let data = truth(3.0, 0.05);
    let p = sys.closure.init_params(6, false);
    let ws = vec![Window { start: 3, targets: vec![5, 7, 9] }, Window { start: 20, targets: vec![22, 24, 26] }];
    let mut cfg = config(1);
    let (_, sum) = batch_loss_grad(&sys, &p, &data, &ws, &cfg).unwrap();
    cfg.reduction = GradReduction::Mean;
    let (_, mean) = batch_loss_grad(&sys, &p, &data, &ws, &cfg).unwrap();
    for (s, m) in sum.iter().zip(&mean) {
        assert!((s / 2.0 - m).abs() <= 1e-15 * s.abs().max(1.0));
    }
}

#[test]
fn training_reduces_the_loss() {
    let sys = toy_system(ClosureKind::Discrete { delays: vec![0.1] });
    let data = truth(3.0, 0.05);
    let cfg = config(25);
    let mut st = TrainState::new(sys.closure.init_params(7, true), &cfg, 11);
    let recs = train(&sys, &data, &cfg, &mut st, |_, _| {}).unwrap();
    let (first, last) = (&recs[0], recs.last().unwrap());
    assert_eq!(recs.len(), 26);
    assert!(last.train_loss < 0.5 * first.train_loss, "{} -> {}", first.train_loss, last.train_loss);
    assert!(last.val_loss < first.val_loss);
}

#[test]
fn resuming_reproduces_uninterrupted_run() {
    let sys = toy_system(ClosureKind::Distributed { tau1: 0.0, tau2: 0.15, quad_panels: 4 });
    let data = truth(3.0, 0.05);
    let p0 = sys.closure.init_params(8, true);
    let full_cfg = config(3);
    let mut full = TrainState::new(p0.clone(), &full_cfg, 5);
    let full_recs = train(&sys, &data, &full_cfg, &mut full, |_, _| {}).unwrap();

    let mut part = TrainState::new(p0, &config(1), 5);
    train(&sys, &data, &config(1), &mut part, |_, _| {}).unwrap();
    let json = serde_json::to_string(&part).unwrap();
    let mut resumed: TrainState = serde_json::from_str(&json).unwrap();
    let tail = train(&sys, &data, &full_cfg, &mut resumed, |_, _| {}).unwrap();
    assert_eq!(resumed.params, full.params);
    assert_eq!(tail.len(), 2);
    assert_eq!(tail[1], full_recs[3]);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let sys = toy_system(ClosureKind::Markovian);
    let data = truth(3.0, 0.05);
    let cfg = config(1);
    let mut st = TrainState::new(vec![0.0; 3], &cfg, 0);
    assert!(matches!(train(&sys, &data, &cfg, &mut st, |_, _| {}), Err(TrainError::Shape(_))));
    let mut bad = config(1);
    bad.val_span = (1.0, 3.0);
    let mut st = TrainState::new(sys.closure.init_params(0, true), &bad, 0);
    assert!(matches!(train(&sys, &data, &bad, &mut st, |_, _| {}), Err(TrainError::Config(_))));
}

#[test]
fn divergence_is_reported() {
    struct Blowup;
    impl LowFidelityModel for Blowup {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, u: &[f64], out: &mut [f64]) {
            out[0] = u[0] * u[0] * 1e3;
            out[1] = 0.0;
        }
    }
    let a = arch::toy(crate::nn::ClosureFamily::Markovian);
    let sys =
        AugmentedSystem::new(Arc::new(Blowup), ClosureModel { kind: ClosureKind::Markovian, f: a.f, g: a.g }).unwrap();
    let data = truth(3.0, 0.05);
    let cfg = config(1);
    let mut st = TrainState::new(sys.closure.init_params(0, true), &cfg, 0);
    assert!(train(&sys, &data, &cfg, &mut st, |_, _| {}).is_err());
}
