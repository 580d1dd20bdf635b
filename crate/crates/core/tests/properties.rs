use decon_core::datagen::{longtail_counts, make_mixture, sample_dataset, unlabeled_counts};
use decon_core::inference::{adjusted_probs, margin_robustness_check, post_hoc_predict};
use decon_core::losses::{overlap_weight, plc_pseudo_label};
use decon_core::metrics::{kl_divergence, Classification};
use decon_core::net::{argmax, softmax};
use decon_core::oracle::{bayes_predict, decoupled_logits, log_class_conditional, BayesOracle};
use decon_core::rng;
use decon_core::{ClassPrior, DatasetSpec, DualNet, EmaPrior, NetConfig, RunConfig, Shape};
use proptest::prelude::*;

fn prior(c: usize) -> impl Strategy<Value = ClassPrior> {
    prop::collection::vec(0.01f64..1.0, c).prop_map(|w| ClassPrior::new(w).unwrap())
}

fn logits(c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-8.0f64..8.0, c)
}

fn sized<T: std::fmt::Debug, S: Strategy<Value = T>>(f: impl Fn(usize) -> S) -> impl Strategy<Value = (usize, T)> {
    (2usize..9).prop_flat_map(move |c| (Just(c), f(c)))
}

fn shape() -> impl Strategy<Value = Shape> {
    prop_oneof![
        Just(Shape::Consistent),
        Just(Shape::Uniform),
        Just(Shape::Reversed),
        Just(Shape::Middle),
        Just(Shape::HeadTail),
        (0.1f64..5.0, any::<u64>()).prop_map(|(alpha, seed)| Shape::DirichletRandom { alpha, seed }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn unlabeled_counts_positive_with_requested_ratio(
        c in 3usize..12, m1 in 5000usize..20000, gamma_l in 1.0f64..50.0, gamma_u in 1.0f64..50.0, shape in shape()
    ) {
        let spec = DatasetSpec { num_classes: c, m1, gamma_l, gamma_u, shape, ..Default::default() };
        let v = unlabeled_counts(&spec).unwrap();
        prop_assert_eq!(v.len(), c);
        prop_assert!(v.iter().all(|&n| n >= 1));
        let ratio = *v.iter().max().unwrap() as f64 / *v.iter().min().unwrap() as f64;
        let want = match shape {
            Shape::Consistent | Shape::Reversed => Some(gamma_l),
            Shape::Middle | Shape::HeadTail => Some(gamma_u),
            Shape::Uniform => Some(1.0),
            Shape::DirichletRandom { .. } => None,
        };
        if let Some(g) = want {
            prop_assert!((ratio / g - 1.0).abs() < 0.01, "ratio {} vs {}", ratio, g);
        }
    }

    #[test]
    fn sampled_class_frequencies_match_counts(c in 2usize..8, n1 in 1usize..300, gamma in 1.0f64..30.0, seed in any::<u64>()) {
        let counts = longtail_counts(n1, gamma, c).unwrap();
        let mix = make_mixture(c, 2, 2.5, seed).unwrap();
        let s = sample_dataset(&mix, &counts, seed).unwrap();
        let mut seen = vec![0usize; c];
        for x in &s {
            seen[x.label.unwrap()] += 1;
        }
        prop_assert_eq!(seen, counts);
    }

    #[test]
    fn mixture_separation_is_exact(c in 2usize..10, d in 2usize..6, sep in 0.5f64..6.0, seed in any::<u64>()) {
        let mix = make_mixture(c, d, sep, seed).unwrap();
        prop_assert!((mix.min_pairwise_distance() - sep).abs() < 1e-9);
    }

    #[test]
    fn heads_do_not_share_parameters(seed in any::<u64>(), k in 0usize..1000, delta in -1.0f64..1.0, x in prop::collection::vec(-3.0f64..3.0, 3)) {
        let net = DualNet::new(3, 4, &NetConfig::default(), &mut rng::from_seed(seed)).unwrap();
        let before = net.forward(&x).unwrap();
        let mut a = net.clone();
        let n = a.head_bal.weight.len();
        a.head_bal.weight[k % n] += delta;
        a.head_bal.bias[k % 4] += delta;
        prop_assert_eq!(&a.forward(&x).unwrap().logits_std, &before.logits_std);
        let mut b = net.clone();
        b.head_std.weight[k % n] += delta;
        b.head_std.bias[k % 4] += delta;
        prop_assert_eq!(&b.forward(&x).unwrap().logits_bal, &before.logits_bal);
    }

    #[test]
    fn forward_backward_deterministic(seed in any::<u64>(), xs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..6)) {
        let make = || DualNet::new(2, 3, &NetConfig::default(), &mut rng::from_seed(seed)).unwrap();
        let (n1, n2) = (make(), make());
        prop_assert_eq!(&n1, &n2);
        let (o1, t1) = n1.forward_batch(&xs).unwrap();
        let (o2, t2) = n2.forward_batch(&xs).unwrap();
        prop_assert_eq!(&o1, &o2);
        let up: Vec<Vec<f64>> = o1.iter().map(|o| softmax(&o.logits_std)).collect();
        let down: Vec<Vec<f64>> = o1.iter().map(|o| softmax(&o.logits_bal)).collect();
        prop_assert_eq!(n1.backward(&t1, &up, &down).unwrap(), n2.backward(&t2, &up, &down).unwrap());
    }

    #[test]
    fn ema_step_simplex_and_tracking(
        (c, seq) in sized(|c| prop::collection::vec(prior(c), 1..60)), m in 0.0f64..0.999
    ) {
        let mut ema = EmaPrior::uniform(c, m).unwrap();
        let mut err = ema.value().l1_distance(&seq[0]);
        let mut prev = seq[0].clone();
        for (t, p) in seq.iter().enumerate() {
            let old = ema.value().clone();
            ema.update(p).unwrap();
            let v = ema.value();
            prop_assert!(v.l1_distance(&old) <= 2.0 * (1.0 - m) + 1e-12);
            prop_assert!((v.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(v.probs().iter().all(|&x| x > 0.0));
            // error relative to the current target obeys R_t = m R_{t-1} + ||p_t - p_{t-1}||
            let drift = if t == 0 { 0.0 } else { p.l1_distance(&prev) };
            err = m * (err + drift);
            prop_assert!(v.l1_distance(p) <= err + 1e-9, "t={} {} > {}", t, v.l1_distance(p), err);
            prev = p.clone();
        }
    }

    #[test]
    fn plc_probability_and_logit_forms_agree((c, (z, pi)) in sized(|c| (logits(c), prior(c))), tau1 in 0.0f64..3.0) {
        let (q, dist) = plc_pseudo_label(&z, &pi, tau1).unwrap();
        let p = softmax(&z);
        let prob_form: Vec<f64> = p.iter().zip(pi.probs()).map(|(a, b)| a / b.powf(tau1)).collect();
        prop_assert_eq!(q, argmax(&prob_form));
        prop_assert_eq!(q, argmax(&dist));
        prop_assert_eq!(dist.len(), c);
    }

    #[test]
    fn overlap_gating_and_disagreement((_c, (a, b)) in sized(|c| (logits(c), logits(c)))) {
        let (p, q) = (softmax(&a), softmax(&b));
        let (eta, _) = overlap_weight(&p, &q, 1.0).unwrap();
        let (mp, mq) = (p[argmax(&p)], q[argmax(&q)]);
        prop_assert!(eta <= mp * mq + 1e-15);
        if argmax(&p) == argmax(&q) {
            prop_assert!((eta - mp * mq).abs() <= 1e-15);
        } else {
            prop_assert!(eta <= 1.0 - mp.min(mq) + 1e-15);
        }
    }

    #[test]
    fn post_hoc_probability_form((_c, (z, pi)) in sized(|c| (logits(c), prior(c))), tau3 in 0.0f64..3.0) {
        let got = adjusted_probs(&z, &pi, tau3).unwrap();
        let p = softmax(&z);
        let raw: Vec<f64> = p.iter().zip(pi.probs()).map(|(a, b)| a / b.powf(tau3)).collect();
        let s: f64 = raw.iter().sum();
        for (g, r) in got.iter().zip(&raw) {
            prop_assert!((g - r / s).abs() <= 1e-12);
        }
        prop_assert_eq!(post_hoc_predict(&z, &pi, tau3).unwrap().label, argmax(&got));
    }

    #[test]
    fn margin_premise_prevents_flips((_c, (z, pa, pb)) in sized(|c| (logits(c), prior(c), prior(c))), tau in 0.0f64..3.0) {
        let r = margin_robustness_check(&z, &pa, &pb, tau).unwrap();
        prop_assert!(!r.violated(), "{:?}", r);
    }

    #[test]
    fn kl_nonnegative_and_zero_on_self((_c, (p, q)) in sized(|c| (prior(c), prior(c)))) {
        prop_assert!(kl_divergence(&p, &q) >= 0.0);
        prop_assert!(kl_divergence(&p, &p).abs() < 1e-15);
        if p.l1_distance(&q) > 1e-6 {
            prop_assert!(kl_divergence(&p, &q) > 0.0);
        }
    }

    #[test]
    fn micro_recall_equals_accuracy_on_balanced_sets(c in 2usize..7, per in 1usize..30, preds in prop::collection::vec(0usize..100, 210)) {
        let truth: Vec<usize> = (0..c).flat_map(|k| std::iter::repeat_n(k, per)).collect();
        let pred: Vec<usize> = truth.iter().zip(&preds).map(|(_, p)| p % c).collect();
        let m = Classification::new(&pred, &truth, c).unwrap();
        prop_assert!((m.balanced_accuracy - m.accuracy).abs() < 1e-12);
    }

    #[test]
    fn classification_ignores_sample_order(c in 2usize..6, pairs in prop::collection::vec((0usize..6, 0usize..6), 1..80), rot in 0usize..80) {
        let pairs: Vec<(usize, usize)> = pairs.into_iter().map(|(p, t)| (p % c, t % c)).collect();
        let mut shuffled = pairs.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let split = |v: &[(usize, usize)]| -> (Vec<usize>, Vec<usize>) { v.iter().copied().unzip() };
        let (p1, t1) = split(&pairs);
        let (p2, t2) = split(&shuffled);
        prop_assert_eq!(Classification::new(&p1, &t1, c).unwrap(), Classification::new(&p2, &t2, c).unwrap());
    }

    #[test]
    fn decoupled_scores_give_bayes_under_any_prior(
        (c, pi) in sized(prior), seed in any::<u64>(), x in prop::collection::vec(-6.0f64..6.0, 2), b in -100.0f64..100.0
    ) {
        let mix = make_mixture(c, 2, 2.5, seed).unwrap();
        let s: Vec<f64> = decoupled_logits(&mix, &x, b).unwrap().iter().zip(pi.log()).map(|(a, l)| a + l).collect();
        let direct: Vec<f64> = log_class_conditional(&mix, &x).unwrap().iter().zip(pi.log()).map(|(a, l)| a + l).collect();
        let (top, second) = {
            let mut v = direct.clone();
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            (v[0], v[1])
        };
        prop_assume!(top - second > 1e-9);
        prop_assert_eq!(argmax(&s), bayes_predict(&BayesOracle::new(mix.clone(), pi.clone()).unwrap(), &x).unwrap());
    }

    #[test]
    fn config_survives_serialization(seed in any::<u64>(), epochs in 0usize..50, tau3 in 0.0f64..3.0, shape in shape()) {
        let mut cfg = RunConfig { seed, epochs, ..Default::default() };
        cfg.hyper.tau3 = tau3;
        cfg.dataset.shape = shape;
        let text = serde_json::to_string(&cfg).unwrap();
        prop_assert_eq!(decon_core::config::parse_config(&text).unwrap(), cfg);
    }
}
