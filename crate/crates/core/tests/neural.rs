use kc_core::neural::{
    focal_ls_loss, rdrop_loss, tokenize, total_loss, CompositeLossConfig, Encoder, EncoderConfig, Pooling,
};
use kc_core::{log_softmax, softmax, KcLabel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simplex(raw: [f64; 4]) -> [f64; 4] {
    softmax(&raw)
}

fn cfg(gamma: f64, epsilon: f64, lambda_rd: f64) -> CompositeLossConfig {
    CompositeLossConfig {
        gamma,
        epsilon,
        lambda_rd,
        ..CompositeLossConfig::default()
    }
}

/// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
#[allow(clippy::needless_range_loop)]
fn gradient_check(model: &Encoder, batch: &[(&[u32], KcLabel)], loss: &CompositeLossConfig, seed: u64) -> f64 {
    let eval = |m: &Encoder| total_loss(m, batch, loss, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let analytic = eval(model).grad;
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for i in 0..model.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = eval(&probe).loss;
        probe.params[i] = orig - h;
        let down = eval(&probe).loss;
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[test]
fn gradients_match_finite_differences_on_random_tiny_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..24 {
        let enc = EncoderConfig {
            vocab_size: 12,
            embed_dim: 8,
            max_seq_len: rng.random_range(3..7),
            dropout_rate: rng.random_range(0.05..0.5),
            pooling: if trial % 2 == 0 {
                Pooling::Mean
            } else {
                Pooling::ClsToken
            },
        };
        let mut model = Encoder::new(enc, trial).unwrap();
        // Larger head weights so the head gradients are not vanishingly small.
        for b in model.blocks() {
            if b.0 == "head_weight" || b.0 == "head_bias" {
                for p in &mut model.params[b.1..b.2] {
                    *p = rng.random_range(-1.0..1.0);
                }
            }
        }
        let words = ["a", "b", "c", "d", "e", "f", "g"];
        let text = |rng: &mut ChaCha8Rng| {
            (0..rng.random_range(1..6))
                .map(|_| words[rng.random_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(" ")
        };
        let t1 = tokenize(&text(&mut rng), &enc);
        let t2 = tokenize(&text(&mut rng), &enc);
        let batch = [
            (&t1[..], KcLabel::ALL[rng.random_range(0..4)]),
            (&t2[..], KcLabel::ALL[rng.random_range(0..4)]),
        ];
        let loss = cfg(
            rng.random_range(0.0..3.0),
            rng.random_range(0.0..0.2),
            rng.random_range(0.0..2.0),
        );
        let err = gradient_check(&model, &batch, &loss, 100 + trial);
        assert!(err < 1e-4, "trial {trial}: max relative error {err:e}");
    }
}

#[test]
fn rdrop_vanishes_without_dropout_and_is_ignored_at_zero_weight() {
    let enc = EncoderConfig {
        vocab_size: 50,
        embed_dim: 6,
        max_seq_len: 5,
        dropout_rate: 0.0,
        pooling: Pooling::Mean,
    };
    let model = Encoder::new(enc, 3).unwrap();
    let t = tokenize("one two three", &enc);
    let batch = [(&t[..], KcLabel::Explore)];
    let out = total_loss(&model, &batch, &cfg(2.0, 0.05, 1.0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(out.rdrop, 0.0);
    let p = model.predict_proba(&t).unwrap();
    let single = focal_ls_loss(&p, KcLabel::Explore, &cfg(2.0, 0.05, 1.0)).unwrap();
    assert!((out.loss - single).abs() < 1e-12);
}

#[test]
fn focusing_down_weights_easy_examples() {
    let at = |py: f64, gamma: f64| {
        let rest = (1.0 - py) / 3.0;
        focal_ls_loss(&[py, rest, rest, rest], KcLabel::NonKc, &cfg(gamma, 0.05, 1.0)).unwrap()
    };
    assert!(at(0.9, 2.0) / at(0.9, 0.0) < at(0.3, 2.0) / at(0.3, 0.0));
}

proptest! {
    #[test]
    fn focal_reduces_to_cross_entropy(raw in prop::array::uniform4(-8.0f64..8.0), y in 0usize..4) {
        let p = simplex(raw);
        let ce = -log_softmax(&raw)[y];
        let fl = focal_ls_loss(&p, KcLabel::ALL[y], &cfg(0.0, 0.0, 1.0)).unwrap();
        prop_assert!((fl - ce).abs() < 1e-12);
    }

    #[test]
    fn focal_strictly_decreasing_in_target_probability(
        a in 0.001f64..0.999, b in 0.001f64..0.999, gamma in 0.0f64..4.0, eps in 0.0f64..0.5,
    ) {
        prop_assume!((a - b).abs() > 1e-6);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let vec = |py: f64| { let r = (1.0 - py) / 3.0; [py, r, r, r] };
        let c = cfg(gamma, eps, 1.0);
        let l_lo = focal_ls_loss(&vec(lo), KcLabel::NonKc, &c).unwrap();
        let l_hi = focal_ls_loss(&vec(hi), KcLabel::NonKc, &c).unwrap();
        prop_assert!(l_lo > l_hi);
    }

    #[test]
    fn focal_bounded_by_smoothing(raw in prop::array::uniform4(-30.0f64..30.0), y in 0usize..4, gamma in 0.0f64..4.0, eps in 0.01f64..0.5) {
        let c = cfg(gamma, eps, 1.0);
        let l = focal_ls_loss(&simplex(raw), KcLabel::ALL[y], &c).unwrap();
        prop_assert!(l >= 0.0 && l <= c.focal_upper_bound() + 1e-12);
    }

    #[test]
    fn rdrop_symmetric_nonnegative_zero_iff_equal(a in prop::array::uniform4(-6.0f64..6.0), b in prop::array::uniform4(-6.0f64..6.0)) {
        let (p, q) = (simplex(a), simplex(b));
        let pq = rdrop_loss(&p, &q).unwrap();
        prop_assert!(pq >= 0.0);
        prop_assert_eq!(pq, rdrop_loss(&q, &p).unwrap());
        prop_assert_eq!(rdrop_loss(&p, &p).unwrap(), 0.0);
        let max_gap = p.iter().zip(&q).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if max_gap > 1e-3 {
            prop_assert!(pq > 1e-9);
        }
    }
}
