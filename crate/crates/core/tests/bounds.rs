use deepbound::data;
use deepbound::diagnostics::{self, DiagnosticSettings};
use deepbound::model::{self, Variant};
use deepbound::optim::{batch_loss_grad, sgd_step, BatchSampler, SgdState};
use deepbound::{Activation, InitKind, InitScheme, LossKind, ModelConfig, ParamModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn he(m: &ParamModel, seed: u64) -> Vec<f64> {
    m.init(InitScheme {
        kind: InitKind::He,
        seed,
    })
}

#[test]
fn jacobian_matches_central_differences_on_random_mlps() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let acts = [Activation::Tanh, Activation::Sigmoid, Activation::Relu];
    for trial in 0..10 {
        let mut cfg = ModelConfig::variant(Variant::B, 3, 2, rng.random_range(0..=3), rng.random_range(2..=8));
        cfg.activation = acts[trial % 3];
        let m = model::build(&cfg).unwrap();
        let theta = he(&m, trial as u64);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let j = m.jacobian(&theta, &x).unwrap();
        let h = 1e-6;
        for p in 0..theta.len() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[p] += h;
            tm[p] -= h;
            let (fp, fm) = (m.predict(&tp, &x).unwrap(), m.predict(&tm, &x).unwrap());
            for o in 0..2 {
                let fd = (fp[o] - fm[o]) / (2.0 * h);
                let got = j.get(p, o);
                let ok = (got - fd).abs() <= 1e-7 || (got - fd).abs() <= 1e-4 * fd.abs();
                // a ReLU kink inside the stencil is the only admissible miss
                assert!(
                    ok || cfg.activation == Activation::Relu,
                    "trial {trial} θ{p} out {o}: {got} vs {fd}"
                );
            }
        }
    }
}

#[test]
fn mse_sandwich_holds_through_training() {
    let ds = data::synthetic(3, 40, 5, 3.0, 2).unwrap();
    let mut cfg = ModelConfig::variant(Variant::B, 5, 3, 1, 8);
    cfg.activation = Activation::Tanh;
    let m = model::build(&cfg).unwrap();
    let mut state = SgdState::new(he(&m, 3), 0.02, 0.9).unwrap();
    let diag = ds.select(&(0..8).collect::<Vec<_>>());
    let mut sampler = BatchSampler::new(ds.len(), 16, 0).unwrap();
    let settings = DiagnosticSettings::default();
    for step in 0..150 {
        if step % 15 == 0 {
            let r = diagnostics::dataset_bounds(LossKind::Mse, &m, &state.theta, &diag, &settings).unwrap();
            if !r.degenerate() {
                assert!(
                    r.brackets(1e-12),
                    "step {step}: {} ≤ {} ≤ {}",
                    r.lower_bound,
                    r.excess_loss,
                    r.upper_bound
                );
            }
            for s in &r.samples {
                if !s.degenerate() {
                    assert!(s.brackets(1e-12));
                }
            }
        }
        let batch = ds.select(sampler.next_batch());
        let (_, g) = batch_loss_grad(LossKind::Mse, &m, &state.theta, &batch).unwrap();
        sgd_step(&mut state, &g).unwrap();
    }
}

#[test]
fn cross_entropy_lower_bound_holds_at_init() {
    let ds = data::synthetic(10, 4, 6, 2.0, 9).unwrap();
    let cfg = ModelConfig::variant(Variant::D, 6, 10, 1, 8);
    let m = model::build(&cfg).unwrap();
    let theta = he(&m, 1);
    let samples = ds.samples();
    let r = diagnostics::dataset_bounds(
        LossKind::SoftmaxCe,
        &m,
        &theta,
        &samples,
        &DiagnosticSettings::default(),
    )
    .unwrap();
    assert!(r.lower_bound <= r.excess_loss);
    assert!(r.q_min > 0.0 && r.q_min < 0.1);
}

#[test]
fn skips_keep_deep_sigmoid_spectra_away_from_zero() {
    let x: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
    let mut better = 0;
    for seed in 0..8 {
        let mut lam = [0.0; 2];
        for (k, skip) in [false, true].into_iter().enumerate() {
            let mut cfg = ModelConfig::variant(if skip { Variant::B } else { Variant::A }, 8, 4, 12, 16);
            cfg.activation = Activation::Sigmoid;
            let m = model::build(&cfg).unwrap();
            let a = diagnostics::structural_matrix(&m, &he(&m, seed), &x).unwrap();
            lam[k] = diagnostics::sym_eigenvalues(&a, None).unwrap()[0];
        }
        if lam[1] >= lam[0] {
            better += 1;
        }
    }
    assert!(better > 4, "{better}/8");
}
