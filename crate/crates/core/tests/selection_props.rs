use pdsel_core::divergence::{PdRow, PdScoreTable, QuantileScales};
use pdsel_core::selection::{budget, select_baseline, select_pd, subset_pairs};
use pdsel_core::synth::{generate, SynthConfig};
use pdsel_core::{Error, SelectionReport, Strategy as Sel};
use proptest::prelude::*;
use std::collections::BTreeSet;

fn table(pds: &[f64]) -> PdScoreTable {
    PdScoreTable {
        aspect_names: vec!["a".into(), "b".into(), "c".into()],
        scales: QuantileScales {
            gamma: 0.9,
            q: vec![1.0; 3],
        },
        rows: pds
            .iter()
            .enumerate()
            .map(|(i, &pd)| PdRow {
                id: format!("r{i:04}"),
                aspect: i % 3,
                gaps: Vec::new(),
                pd,
            })
            .collect(),
    }
}

fn mean_pd(t: &PdScoreTable, r: &SelectionReport) -> f64 {
    let ids: BTreeSet<&str> = r.selected_ids.iter().map(String::as_str).collect();
    let v: Vec<f64> = t
        .rows
        .iter()
        .filter(|row| ids.contains(row.id.as_str()))
        .map(|row| row.pd)
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn pd_values() -> impl Strategy<Value = Vec<f64>> {
    // Quantized values so ties occur.
    prop::collection::vec((-8i32..=8).prop_map(|v| v as f64 / 4.0), 1..80)
}

proptest! {
    #[test]
    fn budget_size_and_uniqueness(pds in pd_values(), lambda in 0.001f64..=1.0, seed in 0u64..100) {
        let t = table(&pds);
        let m = budget(lambda, pds.len()).unwrap();
        for strategy in Sel::ALL {
            let r = select_baseline(&t, strategy, lambda, Some(seed)).unwrap();
            prop_assert_eq!(r.selected_ids.len(), m);
            let unique: BTreeSet<&String> = r.selected_ids.iter().collect();
            prop_assert_eq!(unique.len(), m);
        }
    }

    #[test]
    fn smaller_budget_selects_a_prefix(pds in pd_values(), a in 0.001f64..=1.0, b in 0.001f64..=1.0) {
        let t = table(&pds);
        let (small, large) = if a <= b { (a, b) } else { (b, a) };
        let s = select_pd(&t, small).unwrap();
        let l = select_pd(&t, large).unwrap();
        prop_assert_eq!(&l.selected_ids[..s.selected_ids.len()], &s.selected_ids[..]);
    }

    #[test]
    fn pd_selection_has_the_lowest_mean(pds in pd_values(), lambda in 0.001f64..=1.0, seed in 0u64..100) {
        let t = table(&pds);
        let pd = select_pd(&t, lambda).unwrap();
        prop_assume!(!pd.selected_ids.is_empty());
        let base = mean_pd(&t, &pd);
        for strategy in [Sel::Rand, Sel::High, Sel::Mid] {
            let other = select_baseline(&t, strategy, lambda, Some(seed)).unwrap();
            prop_assert!(base <= mean_pd(&t, &other) + 1e-12);
        }
    }

    #[test]
    fn high_and_pd_are_disjoint_without_straddling_ties(n in 2usize..80, lambda in 0.01f64..=0.5, shift in 0usize..1000) {
        // Distinct values in a scrambled order.
        let pds: Vec<f64> = (0..n).map(|i| ((i * 7919 + shift) % 1009) as f64 / 100.0 - 5.0).collect();
        let distinct: BTreeSet<u64> = pds.iter().map(|v| v.to_bits()).collect();
        prop_assume!(distinct.len() == n);
        let t = table(&pds);
        let m = budget(lambda, n).unwrap();
        prop_assume!(2 * m <= n);
        let pd: BTreeSet<String> = select_pd(&t, lambda).unwrap().selected_ids.into_iter().collect();
        let high: BTreeSet<String> = select_baseline(&t, Sel::High, lambda, None).unwrap().selected_ids.into_iter().collect();
        prop_assert!(pd.is_disjoint(&high));
    }

    #[test]
    fn selection_ignores_row_order(pds in pd_values(), lambda in 0.001f64..=1.0, rot in 0usize..80) {
        let t = table(&pds);
        let mut rotated = t.clone();
        let k = rot % rotated.rows.len();
        rotated.rows.rotate_left(k);
        for strategy in [Sel::Pd, Sel::High, Sel::Mid] {
            let a = select_baseline(&t, strategy, lambda, None).unwrap();
            let b = select_baseline(&rotated, strategy, lambda, None).unwrap();
            prop_assert_eq!(a.selected_ids, b.selected_ids);
        }
    }
}

#[test]
fn selected_ids_follow_pd_then_id_order() {
    let t = table(&[0.5, -0.5, 0.0, -0.5, 1.0]);
    let r = select_pd(&t, 0.8).unwrap();
    assert_eq!(r.selected_ids, vec!["r0001", "r0003", "r0002", "r0000"]);
}

#[test]
fn subset_round_trip_against_dataset() {
    let ds = generate(&SynthConfig {
        n_prompts: 200,
        ..SynthConfig::default()
    })
    .unwrap();
    let t = PdScoreTable {
        aspect_names: ds.aspect_names().to_vec(),
        scales: QuantileScales {
            gamma: 0.9,
            q: vec![1.0; 4],
        },
        rows: ds
            .pairs()
            .iter()
            .enumerate()
            .map(|(i, p)| PdRow {
                id: p.id.clone(),
                aspect: p.aspect,
                gaps: Vec::new(),
                pd: ((i * 37) % 11) as f64 - 5.0,
            })
            .collect(),
    };
    let all = select_pd(&t, 1.0).unwrap();
    assert_eq!(subset_pairs(&ds, &all).unwrap(), ds.pairs().to_vec());
    let some = select_pd(&t, 0.3).unwrap();
    assert_eq!(subset_pairs(&ds, &some).unwrap().len(), 60);
    let mut bad = some.clone();
    bad.selected_ids.push("nope".into());
    assert_eq!(subset_pairs(&ds, &bad), Err(Error::UnknownId("nope".into())));
}
