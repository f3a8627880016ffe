mod common;

use common::{naive_neg_log_sigmoid, pair};
use pdsel_core::math::{seeded_rng, Stream};
use pdsel_core::objectives::{
    dmpo_bounds, dmpo_loss, dpo_loss, estimate_bound_params, mild_condition, preference_margin, win_score,
};
use pdsel_core::{BoundParams, MarginRecord, Response};
use proptest::prelude::*;
use rand::Rng;

fn record(i: usize, margin: f64, pd: f64) -> MarginRecord {
    MarginRecord {
        pair_id: format!("m{i:04}"),
        margin,
        pd,
    }
}

fn random_records(rng: &mut impl Rng, n: usize, margin: f64, pd: f64) -> Vec<MarginRecord> {
    (0..n)
        .map(|i| record(i, rng.random_range(-margin..margin), rng.random_range(-pd..=pd)))
        .collect()
}

#[test]
fn margin_example() {
    let mut chosen = Response::new(vec![0.0], 1);
    let mut rejected = Response::new(vec![0.0], 1);
    chosen.logp_policy = Some(-1.0);
    chosen.logp_ref = Some(-1.2);
    rejected.logp_policy = Some(-2.0);
    rejected.logp_ref = Some(-1.5);
    let p = pair("x", 0, chosen, rejected);
    let m = preference_margin(&p, 0.1).unwrap();
    assert!((m - 0.07).abs() < 1e-15);
    assert_eq!(preference_margin(&p, 0.2).unwrap(), 2.0 * m);
}

#[test]
fn loss_matches_naive_sum() {
    let mut rng = seeded_rng(1, Stream::Theory, 20);
    for kappa in 1..=4usize {
        let records = random_records(&mut rng, 20, 3.0, (kappa - 1) as f64);
        for use_pd in [false, true] {
            let naive = records
                .iter()
                .map(|r| naive_neg_log_sigmoid(kappa as f64 * r.margin + if use_pd { r.pd } else { 0.0 }))
                .sum::<f64>()
                / records.len() as f64;
            assert!((dmpo_loss(&records, kappa, use_pd).unwrap() - naive).abs() <= 1e-12);
        }
        let naive_dpo = records.iter().map(|r| naive_neg_log_sigmoid(r.margin)).sum::<f64>() / 20.0;
        assert!((dpo_loss(&records).unwrap() - naive_dpo).abs() <= 1e-12);
    }
}

#[test]
fn reduction_identities() {
    let mut rng = seeded_rng(2, Stream::Theory, 21);
    let records = random_records(&mut rng, 1000, 10.0, 3.0);
    let a = dmpo_loss(&records, 1, false).unwrap();
    let b = dpo_loss(&records).unwrap();
    assert!((a - b).abs() <= 1e-15);
    let zeros: Vec<MarginRecord> = (0..10).map(|i| record(i, 0.0, 0.0)).collect();
    assert!((dmpo_loss(&zeros, 4, true).unwrap() - std::f64::consts::LN_2).abs() <= 1e-12);
    assert!(dmpo_loss(&[], 2, true).is_err());
}

#[test]
fn stable_at_extreme_arguments() {
    let big: Vec<MarginRecord> = (0..4).map(|i| record(i, 1e3, 0.0)).collect();
    let loss = dpo_loss(&big).unwrap();
    assert!(loss.is_finite() && (0.0..1e-300).contains(&loss));
    for x in [0.5, 30.0, 200.0, 699.0, 700.0] {
        let pos = dpo_loss(&[record(0, x, 0.0)]).unwrap();
        let neg = dpo_loss(&[record(0, -x, 0.0)]).unwrap();
        assert!(pos.is_finite() && neg.is_finite());
        assert!((neg - pos - x).abs() <= 1e-9, "x = {x}");
    }
    for m in [0.3, 2.0, 9.0] {
        let pair = [record(0, m, 0.0), record(1, -m, 0.0)];
        assert!(dpo_loss(&pair).unwrap() >= std::f64::consts::LN_2);
    }
}

proptest! {
    #[test]
    fn loss_decreases_in_margin_and_pd(seed in 0u64..1000, idx in 0usize..12, delta in 1e-3f64..2.0, kappa in 1usize..5) {
        let mut rng = seeded_rng(seed, Stream::Theory, 22);
        let records = random_records(&mut rng, 12, 4.0, 3.0);
        let base = dmpo_loss(&records, kappa, true).unwrap();
        let mut more_margin = records.clone();
        more_margin[idx].margin += delta;
        prop_assert!(dmpo_loss(&more_margin, kappa, true).unwrap() < base);
        let mut more_pd = records.clone();
        more_pd[idx].pd += delta;
        prop_assert!(dmpo_loss(&more_pd, kappa, true).unwrap() < base);
    }
}

#[test]
fn bound_params_match_recount() {
    let mut rng = seeded_rng(3, Stream::Theory, 23);
    let sel = random_records(&mut rng, 30, 2.0, 1.0);
    let comp = random_records(&mut rng, 70, 2.0, 1.0);
    let p = estimate_bound_params(&sel, &comp, 3, 1.0).unwrap();
    let margins: Vec<f64> = sel.iter().map(|r| r.margin).collect();
    assert_eq!(p.c1, margins.iter().cloned().fold(f64::INFINITY, f64::min));
    assert_eq!(p.c2, margins.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let c0 = comp.iter().map(|r| r.margin).sum::<f64>() / 70.0;
    assert!((p.c0 - c0).abs() <= 1e-12);
    let l1 = comp.iter().map(|r| naive_neg_log_sigmoid(3.0 * r.margin)).sum::<f64>() / 70.0;
    assert!((p.l1 - l1).abs() <= 1e-12);
    assert_eq!(p.lambda, 0.3);

    let same: Vec<MarginRecord> = (0..5).map(|i| record(i, 0.25, 0.0)).collect();
    let p = estimate_bound_params(&same, &[], 2, 1.0).unwrap();
    assert_eq!((p.c1, p.c2, p.c0, p.l1, p.lambda), (0.25, 0.25, 0.0, 0.0, 1.0));
}

#[test]
fn bounds_at_zero_are_ln2() {
    let params = BoundParams {
        c0: 0.0,
        c1: 0.0,
        c2: 0.0,
        l1: 0.0,
        lambda: 0.5,
        kappa: 3,
        r_bound: 1.0,
    };
    let b = dmpo_bounds(&[0.0; 4], &[0.0; 4], &params).unwrap();
    assert!((b.lower - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((b.upper - std::f64::consts::LN_2).abs() < 1e-15);
    let full = BoundParams {
        lambda: 1.0,
        c1: 0.4,
        ..params
    };
    let b = dmpo_bounds(&[0.2, -0.6], &[], &full).unwrap();
    let selected_term = (naive_neg_log_sigmoid(1.2 + 0.2) + naive_neg_log_sigmoid(1.2 - 0.6)) / 2.0;
    assert!((b.upper - selected_term).abs() < 1e-12);
}

#[test]
fn sandwich_on_honest_instances() {
    let mut rng = seeded_rng(4, Stream::Theory, 24);
    for instance in 0..50 {
        let kappa = rng.random_range(1..=4usize);
        let n = rng.random_range(2..=40usize);
        let records = random_records(&mut rng, n, 3.0, (kappa - 1) as f64);
        let k = if instance < 5 { n } else { rng.random_range(1..n) };
        let (sel, comp) = records.split_at(k);
        let params = estimate_bound_params(sel, comp, kappa, 1.0).unwrap();
        let pd_sel: Vec<f64> = sel.iter().map(|r| r.pd).collect();
        let pd_comp: Vec<f64> = comp.iter().map(|r| r.pd).collect();
        let b = dmpo_bounds(&pd_sel, &pd_comp, &params).unwrap();
        let measured = dmpo_loss(&records, kappa, true).unwrap();
        assert!(
            b.lower - 1e-9 <= measured && measured <= b.upper + 1e-9,
            "instance {instance}: {b:?} vs {measured}"
        );
    }
}

#[test]
fn mild_condition_examples() {
    let p = |kappa, c0, c2| BoundParams {
        c0,
        c1: 0.0,
        c2,
        l1: 0.0,
        lambda: 0.5,
        kappa,
        r_bound: 1.0,
    };
    assert!(mild_condition(&p(1, 0.3, 0.3)));
    assert!(!mild_condition(&p(4, 0.0, 1.4)));
    assert!(mild_condition(&p(4, 0.0, 2.0)));
}

#[test]
fn win_score_examples() {
    assert_eq!(win_score(6, 2, 10).unwrap(), 1.4);
    assert_eq!(win_score(0, 0, 7).unwrap(), 1.0);
    assert_eq!(win_score(5, 0, 5).unwrap(), 2.0);
    assert_eq!(win_score(0, 5, 5).unwrap(), 0.0);
    assert!(win_score(1, 1, 0).is_err());
    assert!(win_score(3, 3, 5).is_err());
}
