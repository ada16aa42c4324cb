use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use bowsim_core::autodiff::{hvp, value_and_grad, ParamVector};
use bowsim_core::fdm::{simulate, step, InitialCondition, OscillatorConfig, REFERENCE_RATE};
use bowsim_core::nets::{DeepOnetArch, DeepOnetModel, PinnArch, PinnModel};
use bowsim_core::spectra::{top_eigenpairs, LanczosSettings};
use bowsim_core::train::{build_deeponet_dataset, collocation, DeepOnetObjective, LossWeights, PinnObjective};

fn desk_pinn() -> PinnArch {
    PinnArch { width: 32, depth: 2, c_rff: 16, sigma_prime: 1.0, scale_t: 0.02, scale_pq: 0.2, t_start: 0.0, rff_seed: 0 }
}

fn fdm(c: &mut Criterion) {
    let cfg = OscillatorConfig::standard(1000.0);
    c.bench_function("fdm step at 4.41 MHz", |b| b.iter(|| step(&cfg, black_box((0.1, -0.05)), 1.0 / REFERENCE_RATE)));
    c.bench_function("fdm 10 ms at 4.41 MHz", |b| {
        b.iter(|| simulate(&cfg, InitialCondition::zero(), REFERENCE_RATE, black_box(0.01)))
    });
}

fn pinn(c: &mut Criterion) {
    let arch = desk_pinn();
    let model = PinnModel::new(arch.clone(), 0).unwrap();
    let cfg = OscillatorConfig::standard(10.0);
    let t = collocation(&arch, 1000, 0);
    c.bench_function("pinn forward, 1000 points", |b| b.iter(|| model.eval(black_box(&t))));

    let obj = PinnObjective { model: &model, config: &cfg, t: &t, ic: InitialCondition::zero(), weights: LossWeights::manual() };
    c.bench_function("pinn loss gradient, 1000 points", |b| b.iter(|| value_and_grad(&obj, &model.params)));

    let v = ParamVector::from_flat(model.params.layout(), vec![1e-2; model.params.len()]).unwrap();
    c.bench_function("pinn hessian-vector product", |b| b.iter(|| hvp(&obj, &model.params, black_box(&v))));

    let settings = LanczosSettings { max_steps: 60, tol: 1e-4, seed: 0 };
    c.bench_function("pinn top eigenpair", |b| {
        b.iter_batched(|| settings, |s| top_eigenpairs(&obj, &model.params, 1, &s), BatchSize::SmallInput)
    });
}

fn deeponet(c: &mut Criterion) {
    let arch = DeepOnetArch { width: 48, depth: 3, c_rff: 24, sigma_prime: 1.0, output_dim: 48, scale_t: 0.01, scale_pq: 0.35, rff_seed: 0 };
    let model = DeepOnetModel::new(arch, 0).unwrap();
    let cfg = OscillatorConfig::standard(10.0);
    let data = build_deeponet_dataset(40, 100, 0.01, 0.35, 0).unwrap();
    let rows: Vec<usize> = (0..data.len()).collect();
    let batch = data.batch(&rows).unwrap();
    let obj = DeepOnetObjective { model: &model, config: &cfg, batch: &batch, observations: None, weights: LossWeights::manual() };
    c.bench_function("deeponet loss gradient, 4000 rows", |b| b.iter(|| value_and_grad(&obj, &model.params)));
}

criterion_group!(benches, fdm, pinn, deeponet);
criterion_main!(benches);
