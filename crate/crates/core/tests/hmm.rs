mod common;

use bubblenet_core::hmm::*;
use bubblenet_core::model::RegimeParams;
use bubblenet_core::synth::{generate_series, Segment};
use bubblenet_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

fn arb_instance() -> impl Strategy<Value = (ModelParams, Vec<f64>, f64)> {
    (any::<u64>(), prop::collection::vec(-0.06..0.06f64, 1..=8), -0.3..0.3f64, 0.0..=1.0f64).prop_map(
        |(seed, steps, y0, p1)| {
            let params = random_params(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut ys = vec![y0];
            for s in steps {
                ys.push(ys.last().unwrap() + s);
            }
            (params, ys, p1)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn posteriors_match_path_enumeration((params, ys, p1) in arb_instance()) {
        let law = [1.0 - p1, p1];
        let f = hamilton_filter(&series(&ys), &params, law).unwrap();
        let sm = kim_smoother(&f).unwrap();
        let oracle = enumerate_posteriors(&ys, &params, law);
        for t in 0..ys.len() {
            prop_assert!((f.filtering.values[t] - oracle.filtering[t]).abs() < 1e-10);
            prop_assert!((sm.smoothing.values[t] - oracle.smoothing[t]).abs() < 1e-10);
        }
        for (a, b) in sm.pairwise.iter().zip(&oracle.pairwise) {
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((a[i][j] - b[i][j]).abs() < 1e-10);
                }
            }
        }
        prop_assert!((f.loglik - oracle.loglik).abs() < 1e-10 * oracle.loglik.abs().max(1.0));
    }

    #[test]
    fn smoothed_pairs_are_consistent((params, ys, p1) in arb_instance()) {
        let f = hamilton_filter(&series(&ys), &params, [1.0 - p1, p1]).unwrap();
        let sm = kim_smoother(&f).unwrap();
        let last = ys.len() - 1;
        prop_assert_eq!(sm.smoothing.values[last], f.filtering.values[last]);
        for (k, w) in sm.pairwise.iter().enumerate() {
            let total: f64 = w.iter().flatten().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!((w[1][0] + w[1][1] - sm.smoothing.values[k]).abs() < 1e-12);
            prop_assert!((w[0][1] + w[1][1] - sm.smoothing.values[k + 1]).abs() < 1e-12);
        }
    }
}

#[test]
fn near_certain_states_keep_relative_precision() {
    // Filtering probabilities within 1e-9 of one; the smoother must not
    // recover the complementary mass as `1 - p`.
    let params = ModelParams {
        regime: RegimeParams {
            mu0: -0.005419676454820869,
            sigma0: 0.006978195488669691,
            mu1: 0.015308518037402338,
            sigma1: 0.009676913727107064,
            n: 1.381067782073405,
            kappa: 0.12137436143816688,
        },
        q: [[0.4886251676087822, 0.5113748323912177], [0.17692420752629134, 0.8230757924737087]],
        switch_density: SwitchDensity::DriftHeight,
    };
    let ys = [
        -0.2966567073494295,
        -0.28308827097177613,
        -0.23300233702043577,
        -0.2617863662964065,
        -0.20300864838580943,
        -0.17729225033568946,
        -0.1860457770891429,
        -0.19034723379592222,
        -0.17484295577429476,
    ];
    let law = [0.79634988447042038, 0.20365011552957962];
    let sm = kim_smoother(&hamilton_filter(&series(&ys), &params, law).unwrap()).unwrap();
    let oracle = enumerate_posteriors(&ys, &params, law);
    for t in 0..ys.len() {
        assert!((sm.smoothing.values[t] - oracle.smoothing[t]).abs() < 1e-10, "t = {t}");
    }
}

fn two_regime(seed: u64) -> bubblenet_core::model::LogPriceSeries {
    let segs = [
        Segment::Normal { len: 600, mu0: 0.0002, sigma0: 0.01 },
        Segment::Bubble { len: 600, mu1: 0.0014, sigma1: 0.003, n: 0.5 },
    ];
    generate_series("two", day0(), 0.0, &segs, seed).unwrap()
}

#[test]
fn em_loglik_never_decreases() {
    for seed in 0..4 {
        let s = two_regime(seed);
        for initial in [InitialDistribution::Estimated, InitialDistribution::Stationary, InitialDistribution::Fixed([0.5, 0.5])] {
            let cfg = EmConfig { initial, multi_start: false, ..EmConfig::default() };
            let fit = em_fit(&s, &cfg).unwrap();
            assert!(fit.trace.max_loglik_decrease() <= 1e-9, "seed {seed} {initial:?}");
        }
    }
}

#[test]
fn multi_start_is_never_worse() {
    for seed in 10..13 {
        let s = two_regime(seed);
        let single = em_fit(&s, &EmConfig { multi_start: false, ..EmConfig::default() }).unwrap();
        let multi = em_fit(&s, &EmConfig::default()).unwrap();
        assert!(multi.filter.loglik >= single.filter.loglik);
    }
}

#[test]
fn pure_gbm_is_read_as_normal() {
    let segs = [Segment::Normal { len: 1500, mu0: 0.0003, sigma0: 0.012 }];
    let s = generate_series("gbm", day0(), 0.0, &segs, 5).unwrap();
    let fit = em_fit(&s, &EmConfig::default()).unwrap();
    let v = &fit.filter.filtering.values;
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    // Either regime can absorb a pure random walk; whichever is labeled
    // normal must carry the volatility when it dominates.
    if mean < 0.5 {
        assert!((fit.params.regime.sigma0 / 0.012 - 1.0).abs() < 0.1, "{:?}", fit.params);
    }
    assert!(fit.trace.max_loglik_decrease() <= 1e-9);
}

#[test]
fn feedback_exponent_from_all_bubble_weights() {
    let segs = [Segment::Bubble { len: 1000, mu1: 0.0014, sigma1: 0.003, n: 0.5 }];
    let s = generate_series("b", day0(), 0.0, &segs, 9).unwrap();
    let len = s.len();
    let smoother = SmootherOutput {
        smoothing: ProbabilitySeries::new("b", s.timestamps().to_vec(), vec![1.0; len]).unwrap(),
        pairwise: vec![[[0.0, 0.0], [0.0, 1.0]]; len - 1],
    };
    let n = solve_feedback_exponent_profiled(&smoother, &s, NSearch::default()).unwrap();
    assert!((0.35..=0.65).contains(&n), "n = {n}");
    let p = m_step_partial(&smoother, &s, n).unwrap();
    let (mu1, sigma1) = p.bubble.unwrap();
    // The profiled root solves the fixed-parameter condition at its own
    // closed forms.
    assert!(feedback_exponent_residual(&smoother, &s, mu1, sigma1, n).abs() < 1e-8);
    let fixed = solve_feedback_exponent(&smoother, &s, mu1, sigma1, NSearch::default()).unwrap();
    assert!(feedback_exponent_residual(&smoother, &s, mu1, sigma1, fixed).abs() < 1e-8);
    assert!(p.normal.is_none());
}

#[test]
fn degenerate_regimes_are_reported() {
    let s = two_regime(1);
    let len = s.len();
    let smoother = SmootherOutput {
        smoothing: ProbabilitySeries::new("t", s.timestamps().to_vec(), vec![0.0; len]).unwrap(),
        pairwise: vec![[[1.0, 0.0], [0.0, 0.0]]; len - 1],
    };
    assert!(matches!(m_step(&smoother, &s, 0.5), Err(Error::DegenerateRegime(_))));
    assert!(matches!(
        solve_feedback_exponent_profiled(&smoother, &s, NSearch::default()),
        Err(Error::DegenerateRegime(_))
    ));
}

#[test]
fn em_rejects_bad_settings() {
    let s = two_regime(2);
    let bad = [
        EmConfig { max_iterations: 0, ..EmConfig::default() },
        EmConfig { tolerance: -1.0, ..EmConfig::default() },
        EmConfig { q00_init: 1.5, ..EmConfig::default() },
        EmConfig { initial: InitialDistribution::Fixed([0.3, 0.3]), ..EmConfig::default() },
    ];
    for cfg in bad {
        assert!(em_fit(&s, &cfg).unwrap_err().is_validation());
    }
    let short = series(&[0.0, 0.01, 0.02]);
    assert!(matches!(em_fit(&short, &EmConfig::default()), Err(Error::InsufficientData { .. })));
}
