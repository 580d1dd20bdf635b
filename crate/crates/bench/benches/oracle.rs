use criterion::{criterion_group, criterion_main, Criterion};
use decon_core::datagen::{longtail_counts, make_mixture};
use decon_core::oracle::{bayes_accuracy, fit_balanced_softmax, verify_prior_concentration};
use decon_core::ClassPrior;

fn oracle(c: &mut Criterion) {
    let mix = make_mixture(6, 2, 2.5, 0).unwrap();
    let pi_l = ClassPrior::from_counts(&longtail_counts(200, 20.0, 6).unwrap()).unwrap();
    let mut g = c.benchmark_group("oracle");
    g.sample_size(10);
    g.bench_function("balanced_fit", |b| b.iter(|| fit_balanced_softmax(&mix, &pi_l, 0.2, 50, 3.0).unwrap()));
    g.bench_function("bayes_accuracy/1e4", |b| {
        b.iter(|| bayes_accuracy(&mix, &ClassPrior::uniform(6), &ClassPrior::uniform(6), 10_000, 0).unwrap())
    });
    let two = make_mixture(2, 2, 2.5, 0).unwrap();
    let pi_u = ClassPrior::new(vec![0.2, 0.8]).unwrap();
    g.bench_function("concentration/200x100", |b| {
        b.iter(|| verify_prior_concentration(&two, &pi_u, 100, 200, 0.05, 0).unwrap())
    });
    g.finish();
}

criterion_group!(benches, oracle);
criterion_main!(benches);
