mod common;

use common::*;
use csc_transfer::ops::{FeatureMapStack, SubjectBlock};
use csc_transfer::solver::{initial_kernels, solve_coding, SolverConfig};
use csc_transfer::transfer::*;
use ndarray::{Array2, Array3};
use proptest::prelude::*;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

fn dataset(seed: u64, m: usize, shape: (usize, usize)) -> TargetDataset {
    let mut r = rng(seed);
    let blocks = (0..m)
        .map(|_| SubjectBlock::new(random_matrix(&mut r, shape.0, shape.1) * 3.0 + 1.0).unwrap())
        .collect();
    let labels = (0..m).map(|i| if i % 2 == 0 { Label::Positive } else { Label::Negative }).collect();
    TargetDataset::new(blocks, labels, ids(m)).unwrap()
}

proptest! {
    #[test]
    fn local_normalisation_centres_and_scales(v in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let block = SubjectBlock::new(Array2::from_shape_vec((3, 4), v).unwrap()).unwrap();
        let out = local_normalize_block(&block);
        let x = out.values();
        let mean = x.mean().unwrap();
        let var = x.mapv(|a| (a - mean).powi(2)).mean().unwrap();
        prop_assert!(mean.abs() <= 1e-10);
        // either a unit-variance block or the all-zero guard for flat input
        prop_assert!((var - 1.0).abs() <= 1e-9 || x.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn reshape_keeps_every_value(m in 1usize..5, h in 1usize..4, n in 1usize..5, seed in 0u64..1000) {
        let mut r = rng(seed);
        let maps: Vec<Array2<f64>> = (0..m).map(|_| random_matrix(&mut r, h, n)).collect();
        let rows = reshape_expand(&maps).unwrap();
        prop_assert_eq!(rows.dim(), (m, h * n));
        for (i, map) in maps.iter().enumerate() {
            let back = unflatten_row(rows.row(i).as_slice().unwrap(), (h, n)).unwrap();
            prop_assert_eq!(&back, map);
        }
    }

    #[test]
    fn train_statistics_ignore_row_order(seed in 0u64..500, m in 3usize..10) {
        let mut r = rng(seed);
        let rows = random_matrix(&mut r, m, 4);
        let train: Vec<usize> = (0..m).filter(|i| i % 3 != 0).collect();
        let mut shuffled = train.clone();
        shuffled.reverse();
        let a = MinMax::fit(&rows, &train).unwrap().apply(&rows);
        let b = MinMax::fit(&rows, &shuffled).unwrap().apply(&rows);
        prop_assert_eq!(&a, &b);
        for &i in &train {
            prop_assert!(a.row(i).iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        }
    }
}

#[test]
fn encoding_matches_per_block_coding_and_is_pure() {
    let target = dataset(4, 5, (6, 7));
    let cfg = SolverConfig::default();
    let bank = initial_kernels(3, (3, 3), (6, 7), 2).unwrap();
    let a = encode_target(&target, &bank, &cfg).unwrap();
    let b = encode_target(&target, &bank, &cfg).unwrap();
    assert_eq!(a, b);
    for (stack, block) in a.iter().zip(&target.blocks) {
        let single = solve_coding(&local_normalize_block(block), &bank, &cfg).unwrap();
        assert!(max_abs3(stack.as_array(), single.as_array()) <= 1e-12);
    }
}

#[test]
fn encoding_rejects_mismatched_grids() {
    let target = dataset(4, 2, (6, 7));
    let bank = initial_kernels(2, (3, 3), (6, 6), 2).unwrap();
    assert!(encode_target(&target, &bank, &SolverConfig::default()).is_err());
}

#[test]
fn map_selection_is_one_based() {
    let stack = FeatureMapStack::new(Array3::from_shape_fn((3, 2, 2), |(k, _, _)| k as f64)).unwrap();
    assert_eq!(select_feature_map(&stack, 1).unwrap()[[0, 0]], 0.0);
    assert_eq!(select_feature_map(&stack, 3).unwrap()[[1, 1]], 2.0);
    assert!(select_feature_map(&stack, 0).is_err());
    assert!(select_feature_map(&stack, 4).is_err());
    let concat = select_maps(&stack, 2, MapSelect::Concat).unwrap();
    assert_eq!(concat.dim(), (4, 2));
    assert_eq!(concat[[3, 0]], 1.0);
}

#[test]
fn all_rows_normalisation_sees_the_held_out_row() {
    let rows = ndarray::array![[0.0], [1.0], [3.0]];
    let table = FeatureTable::new(rows, vec![Label::Positive, Label::Negative, Label::Positive], ids(3)).unwrap();
    let all = normalize_table(&table, NormMode::AllRows).unwrap();
    assert_eq!(all.rows.column(0).to_vec(), vec![0.0, 1.0 / 3.0, 1.0]);
    let split = table.clone().with_split(vec![true, true, false]).unwrap();
    let train_only = normalize_table(&split, NormMode::TrainStats).unwrap();
    assert_eq!(train_only.rows.column(0).to_vec(), vec![0.0, 1.0, 3.0]);
}

#[test]
fn constant_columns_normalise_to_zero() {
    let rows = ndarray::array![[2.0, 1.0], [2.0, 5.0]];
    let mm = MinMax::fit(&rows, &[0, 1]).unwrap();
    let out = mm.apply(&rows);
    assert_eq!(out.column(0).to_vec(), vec![0.0, 0.0]);
    assert_eq!(out.column(1).to_vec(), vec![0.0, 1.0]);
}

#[test]
fn datasets_validate_alignment() {
    let block = || SubjectBlock::new(Array2::zeros((2, 3))).unwrap();
    assert!(TargetDataset::new(vec![block()], vec![], ids(1)).is_err());
    assert!(TargetDataset::new(vec![block(), block()], vec![Label::Positive; 2], vec!["a".into(), "a".into()]).is_err());
    let odd = SubjectBlock::new(Array2::zeros((3, 3))).unwrap();
    assert!(TargetDataset::new(vec![block(), odd], vec![Label::Positive; 2], ids(2)).is_err());
    let d = dataset(1, 4, (2, 2));
    assert_eq!(d.count(Label::Positive), 2);
    assert_eq!(d.subset(&[1, 3]).subject_ids, vec!["s1", "s3"]);
}

#[test]
fn labels_map_to_signs_and_csv() {
    assert_eq!(Label::from_csv(1), Some(Label::Positive));
    assert_eq!(Label::from_csv(2), None);
    assert_eq!(Label::Negative.sign(), -1.0);
    assert_eq!(Label::from_sign(0.0), Label::Positive);
    assert_eq!(Label::from_sign(-1e-300), Label::Negative);
}

#[test]
fn encoding_leaves_the_bank_untouched() {
    let target = dataset(9, 3, (5, 6));
    let bank = initial_kernels(2, (2, 2), (5, 6), 1).unwrap();
    let before: Vec<u64> = bank.kernels().iter().map(|v| v.to_bits()).collect();
    encode_target(&target, &bank, &SolverConfig::default()).unwrap();
    let after: Vec<u64> = bank.kernels().iter().map(|v| v.to_bits()).collect();
    assert_eq!(before, after);
}

#[test]
fn test_rows_do_not_move_training_statistics() {
    let mut r = rng(12);
    let rows = random_matrix(&mut r, 8, 3);
    let train = [0, 1, 2, 3, 4];
    let a = MinMax::fit(&rows, &train).unwrap();
    let mut permuted = rows.clone();
    for (dst, src) in [(5, 7), (6, 5), (7, 6)] {
        permuted.row_mut(dst).assign(&rows.row(src));
    }
    let b = MinMax::fit(&permuted, &train).unwrap();
    assert_eq!(a, b);
}
