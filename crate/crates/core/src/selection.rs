//! Relief feature weighting, top-Q column selection and the combined
//! encode/select/classify evaluation.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::classify::{loso_with, train_linear_svm, LosoReport, DEFAULT_C};
use crate::error::{Error, Result};
use crate::ops::KernelBank;
use crate::par;
use crate::solver::SolverConfig;
use crate::transfer::{
    encode_target, reshape_expand, select_maps, FeatureTable, Label, MapSelect, MinMax, NormMode,
    TargetDataset,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReliefParams {
    pub r_neighbors: usize,
    pub q_features: usize,
}

impl ReliefParams {
    pub const DEFAULT_R: usize = 3;

    pub fn new(q_features: usize) -> Self {
        ReliefParams {
            r_neighbors: Self::DEFAULT_R,
            q_features,
        }
    }
}

/// Feature weights and the column order they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    /// Columns by descending weight, ties by ascending column.
    pub order: Vec<usize>,
}

impl WeightVector {
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("non-finite feature weight"));
        }
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
        Ok(WeightVector { weights, order })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedTable {
    pub rows: Array2<f64>,
    pub column_index: Vec<usize>,
}

/// Relief weights over `rows`.
///
/// Neighbours are the `r` nearest rows of each class by Euclidean distance
/// over all columns, excluding the row itself, ties by ascending row index.
/// Each row subtracts its squared per-feature differences to same-class
/// neighbours and adds those to other-class neighbours.
pub fn relief_weights(rows: ArrayView2<f64>, labels: &[Label], r: usize) -> Result<WeightVector> {
    let (m, d) = rows.dim();
    if labels.len() != m {
        return Err(Error::shape(format!("{m} rows but {} labels", labels.len())));
    }
    if r == 0 {
        return Err(Error::invalid("Relief needs at least one neighbour"));
    }
    for class in [Label::Negative, Label::Positive] {
        let n = labels.iter().filter(|&&l| l == class).count();
        if n < r + 1 {
            return Err(Error::invalid(format!(
                "class {} has {n} rows, Relief with R = {r} needs {}",
                class.as_csv(),
                r + 1
            )));
        }
    }

    let contributions = par::map_range(m, |i| {
        let xi = rows.row(i);
        let mut same = Vec::with_capacity(m);
        let mut other = Vec::with_capacity(m);
        for j in 0..m {
            if j == i {
                continue;
            }
            let xj = rows.row(j);
            let dist: f64 = xi.iter().zip(xj.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            if labels[j] == labels[i] {
                same.push((dist, j));
            } else {
                other.push((dist, j));
            }
        }
        let nearest = |v: &mut Vec<(f64, usize)>| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            v.truncate(r);
        };
        nearest(&mut same);
        nearest(&mut other);
        let mut c = vec![0.0; d];
        for (f, cf) in c.iter_mut().enumerate() {
            for &(_, j) in &same {
                *cf -= (xi[f] - rows[[j, f]]).powi(2);
            }
            for &(_, j) in &other {
                *cf += (xi[f] - rows[[j, f]]).powi(2);
            }
        }
        c
    });

    let mut w = vec![0.0; d];
    for c in contributions {
        for (wf, cf) in w.iter_mut().zip(c) {
            *wf += cf;
        }
    }
    WeightVector::from_weights(w)
}

/// The `q` highest-weighted columns of `rows`, in weight order.
pub fn select_columns(rows: ArrayView2<f64>, weights: &WeightVector, q: usize) -> Result<SelectedTable> {
    if weights.weights.len() != rows.ncols() {
        return Err(Error::shape(format!(
            "{} weights for {} columns",
            weights.weights.len(),
            rows.ncols()
        )));
    }
    if q == 0 || q > rows.ncols() {
        return Err(Error::invalid(format!("Q = {q} outside 1..={}", rows.ncols())));
    }
    let column_index = weights.order[..q].to_vec();
    Ok(SelectedTable {
        rows: rows.select(Axis(1), &column_index),
        column_index,
    })
}

pub fn select_top_q(table: &FeatureTable, weights: &WeightVector, q: usize) -> Result<SelectedTable> {
    select_columns(table.rows.view(), weights, q)
}

/// Where Relief weights come from during LOSO.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReliefScope {
    /// Recomputed from each fold's training rows.
    #[default]
    PerFold,
    /// Computed once from every row of the all-rows-normalised table.
    Global,
}

/// Settings for one evaluation of a kernel bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub map_index: usize,
    pub map_select: MapSelect,
    pub norm: NormMode,
    pub relief_scope: ReliefScope,
    pub relief: ReliefParams,
    pub svm_c: f64,
}

impl EvalOptions {
    pub fn new(map_index: usize, relief: ReliefParams) -> Self {
        EvalOptions {
            map_index,
            map_select: MapSelect::Index,
            norm: NormMode::TrainStats,
            relief_scope: ReliefScope::PerFold,
            relief,
            svm_c: DEFAULT_C,
        }
    }
}

/// Encodes the target, selects the map and flattens subjects into rows.
pub fn feature_table(
    kernels: &KernelBank,
    target: &TargetDataset,
    map_index: usize,
    map_select: MapSelect,
    cfg: &SolverConfig,
) -> Result<FeatureTable> {
    let stacks = encode_target(target, kernels, cfg)?;
    let selected = stacks
        .iter()
        .map(|s| select_maps(s, map_index, map_select))
        .collect::<Result<Vec<_>>>()?;
    FeatureTable::new(
        reshape_expand(&selected)?,
        target.labels.clone(),
        target.subject_ids.clone(),
    )
}

/// Normalised rows and feature order for one fold.
struct FoldPrep {
    rows: Array2<f64>,
    order: WeightVector,
}

fn prepare_fold(
    raw: &Array2<f64>,
    labels: &[Label],
    train: &[usize],
    opts: &EvalOptions,
    global: Option<&WeightVector>,
) -> Result<FoldPrep> {
    let fit_rows: Vec<usize> = match opts.norm {
        NormMode::TrainStats => train.to_vec(),
        NormMode::AllRows => (0..raw.nrows()).collect(),
    };
    let rows = MinMax::fit(raw, &fit_rows)?.apply(raw);
    let order = match global {
        Some(w) => w.clone(),
        None => {
            let train_rows = rows.select(Axis(0), train);
            let train_labels: Vec<Label> = train.iter().map(|&i| labels[i]).collect();
            relief_weights(train_rows.view(), &train_labels, opts.relief.r_neighbors)?
        }
    };
    Ok(FoldPrep { rows, order })
}

/// LOSO evaluation of an un-normalised feature table for each `Q` in
/// `q_values`. Normalisation and Relief are computed once per fold and
/// shared by every `Q`.
pub fn evaluate_q_grid(table: &FeatureTable, q_values: &[usize], opts: &EvalOptions) -> Result<Vec<LosoReport>> {
    let n0 = table.n_features();
    if let Some(&q) = q_values.iter().find(|&&q| q == 0 || q > n0) {
        return Err(Error::invalid(format!("Q = {q} outside 1..={n0}")));
    }
    let labels = &table.labels;
    let ids = &table.subject_ids;
    let m = labels.len();

    let global = match opts.relief_scope {
        ReliefScope::PerFold => None,
        ReliefScope::Global => {
            let all: Vec<usize> = (0..m).collect();
            let rows = MinMax::fit(&table.rows, &all)?.apply(&table.rows);
            Some(relief_weights(rows.view(), labels, opts.relief.r_neighbors)?)
        }
    };

    let train_sets: Vec<Vec<usize>> = (0..m)
        .map(|h| (0..m).filter(|&i| ids[i] != ids[h]).collect())
        .collect();
    let preps = par::map_range(m, |h| {
        let train = &train_sets[h];
        let classes = train.iter().any(|&i| labels[i] == Label::Positive)
            && train.iter().any(|&i| labels[i] == Label::Negative);
        if !classes {
            return Ok(None);
        }
        prepare_fold(&table.rows, labels, train, opts, global.as_ref()).map(Some)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    q_values
        .iter()
        .map(|&q| {
            loso_with(labels, ids, |train, test| {
                let prep = preps[test].as_ref().expect("fold has both classes");
                let sel = select_columns(prep.rows.view(), &prep.order, q)?;
                let x = sel.rows.select(Axis(0), train);
                let y: Vec<f64> = train.iter().map(|&i| labels[i].sign()).collect();
                let model = train_linear_svm(x.view(), &y, opts.svm_c)?;
                Ok(Label::from_sign(model.decision(sel.rows.row(test))))
            })
        })
        .collect()
}

/// Full evaluation on a raw feature table.
pub fn ss_ck_from_table(table: &FeatureTable, opts: &EvalOptions) -> Result<LosoReport> {
    evaluate_q_grid(table, &[opts.relief.q_features], opts).map(|mut v| v.remove(0))
}

/// Encode, select map, reshape, normalise, Relief, top-Q and LOSO SVM.
pub fn ss_ck_with(
    kernels: &KernelBank,
    target: &TargetDataset,
    opts: &EvalOptions,
    cfg: &SolverConfig,
) -> Result<LosoReport> {
    let table = feature_table(kernels, target, opts.map_index, opts.map_select, cfg)?;
    ss_ck_from_table(&table, opts)
}

/// [`ss_ck_with`] under the default options.
pub fn ss_ck(
    kernels: &KernelBank,
    target: &TargetDataset,
    map_index: usize,
    params: ReliefParams,
    cfg: &SolverConfig,
) -> Result<LosoReport> {
    ss_ck_with(kernels, target, &EvalOptions::new(map_index, params), cfg)
}
