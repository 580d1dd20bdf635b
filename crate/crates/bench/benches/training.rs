use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use decon_bench::Fixture;
use decon_core::trainer::{evaluate_state, train_step};
use decon_core::Algorithm;

fn steps(c: &mut Criterion) {
    for alg in [Algorithm::Decon, Algorithm::Fixmatch] {
        let fx = Fixture::new(alg);
        let (lab, unl) = fx.batch(fx.cfg.hyper.batch_size, fx.cfg.hyper.unlabeled_batch());
        c.bench_function(&format!("train_step/{}", alg.name()), |b| {
            b.iter_batched(
                || (fx.state.clone(), fx.net.clone()),
                |(mut state, mut net)| train_step(&mut state, &mut net, &lab, &unl).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
}

fn forward_backward(c: &mut Criterion) {
    let fx = Fixture::new(Algorithm::Decon);
    let xs: Vec<&[f64]> = fx.data.unlabeled.iter().take(96).map(|s| s.x.as_slice()).collect();
    c.bench_function("forward_backward/96", |b| {
        b.iter(|| {
            let (outs, tape) = fx.net.forward_batch(&xs).unwrap();
            let up: Vec<Vec<f64>> = outs.iter().map(|o| o.logits_std.clone()).collect();
            let down: Vec<Vec<f64>> = outs.iter().map(|o| o.logits_bal.clone()).collect();
            fx.net.backward(&tape, &up, &down).unwrap()
        })
    });
}

fn evaluation(c: &mut Criterion) {
    let fx = Fixture::new(Algorithm::Decon);
    c.bench_function("evaluate/default_task", |b| {
        b.iter(|| evaluate_state(&fx.cfg, &fx.data, &fx.net, &fx.state, 1.0).unwrap())
    });
}

criterion_group!(benches, steps, forward_backward, evaluation);
criterion_main!(benches);
