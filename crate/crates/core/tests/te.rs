mod common;

use bubblenet_core::hmm::ProbabilitySeries;
use bubblenet_core::te::*;
use bubblenet_core::Execution;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_te, day0};

fn arb_pair() -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>)> {
    (2usize..=6, 3usize..=50).prop_flat_map(|(b, len)| {
        (
            Just(b),
            prop::collection::vec(0..b, len),
            prop::collection::vec(0..b, len),
        )
    })
}

fn binned(bins: &[usize], b: usize) -> BinnedSeries {
    BinnedSeries::new(bins.to_vec(), b).unwrap()
}

fn probs(id: &str, values: Vec<f64>) -> ProbabilitySeries {
    let dates = day0().iter_days().take(values.len()).collect();
    ProbabilitySeries::new(id, dates, values).unwrap()
}

proptest! {
    #[test]
    fn matches_brute_force((b, u, v) in arb_pair()) {
        let te = transfer_entropy(&binned(&u, b), &binned(&v, b), 10.0).unwrap();
        prop_assert!((te - brute_te(&u, &v, 10.0).max(0.0)).abs() < 1e-12);
        let nats = transfer_entropy(&binned(&u, b), &binned(&v, b), std::f64::consts::E).unwrap();
        prop_assert!((nats - te * 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn invariant_under_bin_relabeling((b, u, v) in arb_pair(), shift in 1usize..6) {
        let perm = |x: &usize| (x + shift) % b;
        let u2: Vec<usize> = u.iter().map(perm).collect();
        let v2: Vec<usize> = v.iter().map(|x| (x + 2 * shift) % b).collect();
        let a = transfer_entropy(&binned(&u, b), &binned(&v, b), 10.0).unwrap();
        let c = transfer_entropy(&binned(&u2, b), &binned(&v2, b), 10.0).unwrap();
        prop_assert!((a - c).abs() < 1e-12);
    }

    #[test]
    fn bounded_by_target_entropy((b, u, v) in arb_pair()) {
        let te = transfer_entropy(&binned(&u, b), &binned(&v, b), 10.0).unwrap();
        prop_assert!(te >= 0.0);
        prop_assert!(te <= (b as f64).log10() + 1e-12);
    }
}

#[test]
fn histogram_marginals_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u: Vec<usize> = (0..200).map(|_| rng.gen_range(0..4)).collect();
    let v: Vec<usize> = (0..200).map(|_| rng.gen_range(0..4)).collect();
    let h = JointHistogram::new(&binned(&u, 4), &binned(&v, 4)).unwrap();
    assert_eq!(h.sample_size(), 199);
    for up in 0..4 {
        let from_triples: u64 = (0..4).flat_map(|ut| (0..4).map(move |vp| (ut, vp))).map(|(ut, vp)| h.triple_count(ut, up, vp)).sum();
        assert_eq!(from_triples, h.past_count(up));
        let from_pairs: u64 = (0..4).map(|ut| h.target_past_count(ut, up)).sum();
        assert_eq!(from_pairs, h.past_count(up));
    }
    let total: f64 = (0..4).map(|up| h.p_past(up)).sum();
    assert!((total - 1.0).abs() < 1e-15);
}

#[test]
fn discretization_edges() {
    assert_eq!(bin_of(0.0, 10).unwrap(), 0);
    assert_eq!(bin_of(0.0999, 10).unwrap(), 0);
    assert_eq!(bin_of(0.1, 10).unwrap(), 1);
    assert_eq!(bin_of(1.0, 10).unwrap(), 9);
    assert!(bin_of(1.01, 10).is_err());
    assert!(discretize_values(&[0.5], 1).is_err());
}

#[test]
fn leader_drives_follower() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let lead: Vec<f64> = (0..3000).map(|_| rng.gen()).collect();
    let follow: Vec<f64> = std::iter::once(0.5).chain(lead[..2999].iter().map(|v| 0.9 * v + 0.1 * rng.gen::<f64>())).collect();
    let (a, b) = (probs("lead", lead), probs("follow", follow));
    let opts = TeOptions::default();
    let forward = sii(&a, &b, &opts).unwrap();
    let backward = sii(&b, &a, &opts).unwrap();
    // The reverse direction only carries the small-sample bias.
    assert!(forward > 0.5 && backward < 0.1, "{forward} {backward}");

    let m = sii_matrix(&[a.clone(), b.clone()], &opts, Execution::Sequential).unwrap();
    assert_eq!(m.get("lead", "follow").unwrap(), forward);
    assert_eq!(nsii("lead", "follow", &m).unwrap(), forward - backward);
    assert_eq!(nsii("follow", "lead", &m).unwrap(), backward - forward);
    assert!(nsii("lead", "nobody", &m).is_err());
}

#[test]
fn matrix_is_strategy_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let assets: Vec<ProbabilitySeries> = (0..6)
        .map(|k| probs(&format!("a{k}"), (0..400).map(|_| rng.gen()).collect()))
        .collect();
    let opts = TeOptions::default();
    let seq = sii_matrix(&assets, &opts, Execution::Sequential).unwrap();
    let par = sii_matrix(&assets, &opts, Execution::Parallel).unwrap();
    assert_eq!(seq, par);
    for i in 0..6 {
        assert_eq!(seq.values()[i][i], 0.0);
    }
}

#[test]
fn bubble_day_filter_restricts_the_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = probs("a", (0..500).map(|_| rng.gen()).collect());
    let b = probs("b", (0..500).map(|_| rng.gen()).collect());
    let all = sii(&a, &b, &TeOptions::default()).unwrap();
    let hot = sii(&a, &b, &TeOptions { bubble_days: Some(0.5), ..TeOptions::default() }).unwrap();
    assert_ne!(all, hot);
    let none = sii(&a, &b, &TeOptions { bubble_days: Some(1.0), ..TeOptions::default() }).unwrap();
    assert_eq!(none, 0.0);
}

#[test]
fn misaligned_inputs_are_rejected() {
    let a = probs("a", vec![0.1, 0.2, 0.3, 0.4]);
    let dates = day0().succ_opt().unwrap().iter_days().take(4).collect();
    let b = ProbabilitySeries::new("b", dates, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let err = sii(&a, &b, &TeOptions::default()).unwrap_err().to_string();
    assert!(err.contains("`a`") && err.contains("`b`"), "{err}");
    assert!(sii(&a, &a, &TeOptions { base: 1.0, ..TeOptions::default() }).is_err());
    assert!(sii_matrix(&[a], &TeOptions::default(), Execution::Sequential).is_err());
}

#[test]
fn matrix_validation() {
    let ids = || vec!["a".to_string(), "b".to_string()];
    assert!(SIIMatrix::new(ids(), vec![vec![0.0, 0.1], vec![0.2, 0.0]], None).is_ok());
    assert!(SIIMatrix::new(ids(), vec![vec![0.3, 0.1], vec![0.2, 0.0]], None).is_err());
    assert!(SIIMatrix::new(ids(), vec![vec![0.0, 0.1]], None).is_err());
    assert!(SIIMatrix::new(vec!["a".into(), "a".into()], vec![vec![0.0, 0.1], vec![0.2, 0.0]], None).is_err());
    assert!(SIIMatrix::new(ids(), vec![vec![0.0, f64::NAN], vec![0.2, 0.0]], None).is_err());
}
