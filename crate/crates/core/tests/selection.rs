mod common;

use common::*;
use csc_transfer::classify::loso_cv;
use csc_transfer::selection::*;
use csc_transfer::transfer::{FeatureTable, Label, MinMax};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::Rng;

fn labelled(seed: u64, m: usize, d: usize) -> (Array2<f64>, Vec<Label>, Vec<bool>) {
    let mut r = rng(seed);
    let rows = random_matrix(&mut r, m, d);
    let flags: Vec<bool> = (0..m).map(|i| if i < 8 { i % 2 == 0 } else { r.gen_bool(0.5) }).collect();
    let labels = flags.iter().map(|&b| if b { Label::Positive } else { Label::Negative }).collect();
    (rows, labels, flags)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relief_matches_brute_force(seed in 0u64..10_000, m in 8usize..25, d in 1usize..8, r in 1usize..=3) {
        let (rows, labels, flags) = labelled(seed, m, d);
        let got = relief_weights(rows.view(), &labels, r).unwrap();
        let want = relief_oracle(&rows, &flags, r);
        for (a, b) in got.weights.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn relief_ignores_row_order_without_ties(seed in 0u64..10_000, m in 8usize..20, rot in 1usize..8) {
        let (rows, labels, _) = labelled(seed, m, 4);
        let mut perm: Vec<usize> = (0..m).rev().collect();
        perm.rotate_left(rot % m);
        let shuffled = rows.select(Axis(0), &perm);
        let shuffled_labels: Vec<Label> = perm.iter().map(|&i| labels[i]).collect();
        let a = relief_weights(rows.view(), &labels, 2).unwrap();
        let b = relief_weights(shuffled.view(), &shuffled_labels, 2).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn top_q_sets_are_nested(seed in 0u64..10_000, d in 2usize..12) {
        let (rows, labels, _) = labelled(seed, 12, d);
        let w = relief_weights(rows.view(), &labels, 2).unwrap();
        let mut previous: Vec<usize> = Vec::new();
        for q in 1..=d {
            let sel = select_columns(rows.view(), &w, q).unwrap();
            prop_assert_eq!(&sel.column_index[..q - 1], &previous[..]);
            prop_assert_eq!(sel.rows.ncols(), q);
            for (c, &src) in sel.column_index.iter().enumerate() {
                prop_assert_eq!(sel.rows.column(c), rows.column(src));
            }
            previous = sel.column_index;
        }
    }
}

#[test]
fn separating_feature_ranks_first() {
    let mut r = rng(11);
    let m = 20;
    let mut rows = random_matrix(&mut r, m, 6).mapv(|v| v * 0.5);
    let labels: Vec<Label> = (0..m).map(|i| if i % 2 == 0 { Label::Positive } else { Label::Negative }).collect();
    for (i, l) in labels.iter().enumerate() {
        rows[[i, 4]] = if *l == Label::Positive { 5.0 } else { -5.0 } + 0.01 * i as f64;
    }
    let rows = MinMax::fit(&rows, &(0..m).collect::<Vec<_>>()).unwrap().apply(&rows);
    let w = relief_weights(rows.view(), &labels, 3).unwrap();
    assert_eq!(w.order[0], 4);
    assert!(w.weights[4] > 0.5);
}

#[test]
fn duplicated_feature_gets_identical_weight() {
    let (mut rows, labels, _) = labelled(5, 14, 3);
    let copy = rows.column(1).to_owned();
    rows.push_column(copy.view()).unwrap();
    let w = relief_weights(rows.view(), &labels, 2).unwrap();
    assert_eq!(w.weights[1], w.weights[3]);
    // equal weights keep column order
    let p1 = w.order.iter().position(|&c| c == 1).unwrap();
    let p3 = w.order.iter().position(|&c| c == 3).unwrap();
    assert!(p1 < p3);
}

#[test]
fn q_out_of_range_is_rejected() {
    let (rows, labels, _) = labelled(5, 10, 3);
    let w = relief_weights(rows.view(), &labels, 1).unwrap();
    assert!(select_columns(rows.view(), &w, 0).is_err());
    assert!(select_columns(rows.view(), &w, 4).is_err());
    assert!(WeightVector::from_weights(vec![f64::NAN]).is_err());
}

#[test]
fn q_grid_evaluation_matches_single_q_runs() {
    let (rows, labels, _) = labelled(21, 16, 6);
    let ids: Vec<String> = (0..16).map(|i| format!("p{i}")).collect();
    let table = FeatureTable::new(rows, labels, ids).unwrap();
    let opts = EvalOptions::new(1, ReliefParams::new(2));
    let grid = evaluate_q_grid(&table, &[1, 3, 6], &opts).unwrap();
    for (q, report) in [1, 3, 6].iter().zip(&grid) {
        let single = ss_ck_from_table(&table, &EvalOptions::new(1, ReliefParams::new(*q))).unwrap();
        assert_eq!(&single, report);
        assert!(report.audit());
    }
    assert!(evaluate_q_grid(&table, &[7], &opts).is_err());
}

#[test]
fn global_scope_with_all_features_equals_plain_loso() {
    // with Q = N0 and global min-max, selection is a no-op permutation
    let (rows, labels, _) = labelled(8, 14, 4);
    let ids: Vec<String> = (0..14).map(|i| format!("p{i}")).collect();
    let table = FeatureTable::new(rows.clone(), labels.clone(), ids.clone()).unwrap();
    let mut opts = EvalOptions::new(1, ReliefParams::new(4));
    opts.relief_scope = ReliefScope::Global;
    opts.norm = csc_transfer::transfer::NormMode::AllRows;
    let got = ss_ck_from_table(&table, &opts).unwrap();
    let normed = MinMax::fit(&rows, &(0..14).collect::<Vec<_>>()).unwrap().apply(&rows);
    let w = relief_weights(normed.view(), &labels, 3).unwrap();
    let permuted = normed.select(Axis(1), &w.order);
    let plain = loso_cv(&permuted, &labels, &ids, 1.0).unwrap();
    assert_eq!(got.metrics, plain.metrics);
}

#[test]
fn a_separating_feature_wins_on_most_draws() {
    let mut wins = 0;
    for draw in 0..100u64 {
        let mut r = rng(10_000 + draw);
        let m = r.gen_range(12..=30);
        let d = r.gen_range(3..=20);
        let signal = r.gen_range(0..d);
        let flags: Vec<bool> = (0..m).map(|i| if i < 8 { i % 2 == 0 } else { r.gen_bool(0.5) }).collect();
        let rows = Array2::from_shape_fn((m, d), |(i, j)| {
            let u: f64 = r.gen_range(0.0..1.0);
            if j == signal {
                if flags[i] { 0.6 + 0.4 * u } else { 0.4 * u }
            } else {
                u
            }
        });
        let labels: Vec<Label> = flags.iter().map(|&b| if b { Label::Positive } else { Label::Negative }).collect();
        let w = relief_weights(rows.view(), &labels, 3).unwrap();
        let oracle = relief_oracle(&rows, &flags, 3);
        let oracle_top = (0..d).max_by(|&a, &b| oracle[a].total_cmp(&oracle[b]).then(b.cmp(&a))).unwrap();
        if w.order[0] == signal && oracle_top == signal {
            wins += 1;
        }
    }
    assert!(wins >= 95, "separating feature ranked first on {wins} of 100 draws");
}
