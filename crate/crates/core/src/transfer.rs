//! Encoding of the labelled target dataset with a fixed kernel bank and
//! assembly of the per-subject feature table.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{FeatureMapStack, KernelBank, SubjectBlock};
use crate::par;
use crate::solver::{CodingSystem, SolverConfig};

/// Class label. `Positive` is the patient class (CSV label 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_csv(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn as_csv(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    /// `+1` for the positive class, `-1` otherwise.
    pub fn sign(self) -> f64 {
        match self {
            Label::Negative => -1.0,
            Label::Positive => 1.0,
        }
    }

    pub fn from_sign(v: f64) -> Label {
        if v >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

/// Labelled target dataset: one `H0 x N` block, label and id per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDataset {
    pub blocks: Vec<SubjectBlock>,
    pub labels: Vec<Label>,
    pub subject_ids: Vec<String>,
}

impl TargetDataset {
    pub fn new(blocks: Vec<SubjectBlock>, labels: Vec<Label>, subject_ids: Vec<String>) -> Result<Self> {
        if blocks.len() != labels.len() || blocks.len() != subject_ids.len() {
            return Err(Error::invalid(format!(
                "{} blocks, {} labels, {} subject ids",
                blocks.len(),
                labels.len(),
                subject_ids.len()
            )));
        }
        if let Some(first) = blocks.first() {
            if blocks.iter().any(|b| b.dim() != first.dim()) {
                return Err(Error::invalid("subject blocks differ in shape"));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for id in &subject_ids {
            if !seen.insert(id) {
                return Err(Error::invalid(format!("duplicate subject id {id}")));
            }
        }
        Ok(TargetDataset {
            blocks,
            labels,
            subject_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Block shape `(H0, N)`.
    pub fn block_shape(&self) -> Option<(usize, usize)> {
        self.blocks.first().map(|b| b.dim())
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Subjects at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> TargetDataset {
        TargetDataset {
            blocks: indices.iter().map(|&i| self.blocks[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subject_ids: indices.iter().map(|&i| self.subject_ids[i].clone()).collect(),
        }
    }
}

/// `M x N0` table of reshaped subject rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub rows: Array2<f64>,
    pub labels: Vec<Label>,
    pub subject_ids: Vec<String>,
    /// `Some(mask)` marks training rows with `true`.
    pub train: Option<Vec<bool>>,
}

impl FeatureTable {
    pub fn new(rows: Array2<f64>, labels: Vec<Label>, subject_ids: Vec<String>) -> Result<Self> {
        if rows.nrows() != labels.len() || rows.nrows() != subject_ids.len() {
            return Err(Error::invalid("feature rows, labels and ids are not aligned"));
        }
        Ok(FeatureTable {
            rows,
            labels,
            subject_ids,
            train: None,
        })
    }

    pub fn with_split(mut self, train: Vec<bool>) -> Result<Self> {
        if train.len() != self.rows.nrows() {
            return Err(Error::invalid("split mask length differs from row count"));
        }
        self.train = Some(train);
        Ok(self)
    }

    pub fn n_features(&self) -> usize {
        self.rows.ncols()
    }
}

/// Where min–max statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    /// Training rows only; test rows may fall outside `[0, 1]`.
    #[default]
    TrainStats,
    /// Every row, training and test alike.
    AllRows,
}

/// How a feature map is chosen from the coded stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MapSelect {
    /// The `j`-th map alone.
    #[default]
    Index,
    /// The first `j` maps stacked.
    Concat,
}

const VARIANCE_GUARD: f64 = 1e-12;

/// Standardises a block to zero mean and unit variance over all entries.
/// Constant blocks map to zero.
pub fn local_normalize_block(block: &SubjectBlock) -> SubjectBlock {
    let v = block.values();
    let n = v.len() as f64;
    let mean = v.sum() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let out = if var < VARIANCE_GUARD {
        Array2::zeros(v.dim())
    } else {
        let sd = var.sqrt();
        v.mapv(|x| (x - mean) / sd)
    };
    SubjectBlock::new(out).expect("finite by construction")
}

/// Codes every locally normalised subject block with the fixed bank.
pub fn encode_target(
    target: &TargetDataset,
    kernels: &KernelBank,
    cfg: &SolverConfig,
) -> Result<Vec<FeatureMapStack>> {
    cfg.validate()?;
    if let Some(shape) = target.block_shape() {
        if shape != kernels.padded_shape() {
            return Err(Error::shape(format!(
                "target blocks are {}x{} but kernels are padded to {}x{}",
                shape.0,
                shape.1,
                kernels.padded_shape().0,
                kernels.padded_shape().1
            )));
        }
    }
    let spectra = kernels.spectra();
    par::try_map(&target.blocks, |block| {
        let x = local_normalize_block(block);
        let sys = CodingSystem::with_spectra(&spectra, &x, cfg)?;
        let (state, _) = sys.run(sys.zero_state(), cfg.coding_iters, cfg.residual_tol);
        FeatureMapStack::new(state.b)
    })
}

/// The `index`-th map (1-based) of a stack.
pub fn select_feature_map(stack: &FeatureMapStack, index: usize) -> Result<Array2<f64>> {
    if index == 0 || index > stack.len() {
        return Err(Error::invalid(format!(
            "feature map index {index} outside 1..={}",
            stack.len()
        )));
    }
    Ok(stack.map(index - 1).to_owned())
}

/// Map selection under either convention. `Concat` stacks maps `1..=index`
/// vertically so that flattening yields the maps one after another.
pub fn select_maps(stack: &FeatureMapStack, index: usize, mode: MapSelect) -> Result<Array2<f64>> {
    match mode {
        MapSelect::Index => select_feature_map(stack, index),
        MapSelect::Concat => {
            select_feature_map(stack, index)?;
            let views: Vec<ArrayView2<f64>> = (0..index).map(|k| stack.map(k)).collect();
            Ok(concatenate(Axis(0), &views).expect("maps share a shape"))
        }
    }
}

/// Flattens each subject matrix row-major into one row.
pub fn reshape_expand(selected: &[Array2<f64>]) -> Result<Array2<f64>> {
    let Some(first) = selected.first() else {
        return Err(Error::invalid("nothing to reshape"));
    };
    let shape = first.dim();
    let width = shape.0 * shape.1;
    let mut out = Array2::zeros((selected.len(), width));
    for (i, m) in selected.iter().enumerate() {
        if m.dim() != shape {
            return Err(Error::invalid(format!(
                "subject {i} matrix is {:?}, expected {:?}",
                m.dim(),
                shape
            )));
        }
        for (dst, src) in out.row_mut(i).iter_mut().zip(m.iter()) {
            *dst = *src;
        }
    }
    Ok(out)
}

/// Inverse of [`reshape_expand`] for a single row.
pub fn unflatten_row(row: &[f64], shape: (usize, usize)) -> Result<Array2<f64>> {
    Array2::from_shape_vec(shape, row.to_vec())
        .map_err(|_| Error::invalid(format!("row of {} values is not {:?}", row.len(), shape)))
}

/// Per-column affine map `v ↦ (v − min) / (max − min)`; constant columns
/// map to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub range: Vec<f64>,
}

impl MinMax {
    /// Fits on the rows at `indices`.
    pub fn fit(rows: &Array2<f64>, indices: &[usize]) -> Result<MinMax> {
        if indices.is_empty() {
            return Err(Error::invalid("no rows to fit normalisation on"));
        }
        let d = rows.ncols();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &i in indices {
            for (j, &v) in rows.row(i).iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let range = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
        Ok(MinMax { min: lo, range })
    }

    pub fn apply(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut out = rows.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if self.range[j] > 0.0 {
                    (*v - self.min[j]) / self.range[j]
                } else {
                    0.0
                };
            }
        }
        out
    }
}

/// Per-column min–max scaling of the table.
pub fn normalize_table(table: &FeatureTable, mode: NormMode) -> Result<FeatureTable> {
    let fit_rows: Vec<usize> = match mode {
        NormMode::AllRows => (0..table.rows.nrows()).collect(),
        NormMode::TrainStats => {
            let mask = table
                .train
                .as_ref()
                .ok_or_else(|| Error::invalid("train-stats normalisation needs a split"))?;
            (0..mask.len()).filter(|&i| mask[i]).collect()
        }
    };
    if fit_rows.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let scaler = MinMax::fit(&table.rows, &fit_rows)?;
    Ok(FeatureTable {
        rows: scaler.apply(&table.rows),
        ..table.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    #[test]
    fn constant_block_normalizes_to_zero() {
        let b = SubjectBlock::new(Array2::from_elem((3, 4), 2.5)).unwrap();
        assert!(local_normalize_block(&b).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalized_block_is_fixed_point() {
        let b = SubjectBlock::new(array![[1.0, 2.0, 7.0], [-3.0, 0.5, 4.0]]).unwrap();
        let once = local_normalize_block(&b);
        let v = once.values();
        let n = v.len() as f64;
        let mean = v.sum() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-10);
        let twice = local_normalize_block(&once);
        for (a, b) in twice.values().iter().zip(v.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn map_selection_is_one_based() {
        let stack = FeatureMapStack::new(Array3::from_shape_fn((3, 2, 2), |(k, _, _)| k as f64)).unwrap();
        assert_eq!(select_feature_map(&stack, 1).unwrap()[[0, 0]], 0.0);
        assert_eq!(select_feature_map(&stack, 3).unwrap()[[1, 1]], 2.0);
        assert!(select_feature_map(&stack, 4).is_err());
        assert!(select_feature_map(&stack, 0).is_err());
        let cat = select_maps(&stack, 2, MapSelect::Concat).unwrap();
        assert_eq!(cat.dim(), (4, 2));
        assert_eq!(cat[[3, 0]], 1.0);
    }

    #[test]
    fn reshape_is_row_major() {
        let g = reshape_expand(&[array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]]).unwrap();
        assert_eq!(g, array![[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]);
        let back = unflatten_row(g.row(0).as_slice().unwrap(), (2, 3)).unwrap();
        assert_eq!(back, array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert!(reshape_expand(&[Array2::zeros((2, 2)), Array2::zeros((1, 4))]).is_err());
    }

    #[test]
    fn min_max_uses_training_rows_only() {
        let rows = array![[2.0, 5.0], [6.0, 5.0], [4.0, 5.0], [8.0, 1.0]];
        let t = FeatureTable::new(rows, vec![Label::Positive; 4], (0..4).map(|i| i.to_string()).collect())
            .unwrap()
            .with_split(vec![true, true, true, false])
            .unwrap();
        let n = normalize_table(&t, NormMode::TrainStats).unwrap();
        assert!((n.rows[[2, 0]] - 0.5).abs() < 1e-15);
        assert!((n.rows[[3, 0]] - 1.5).abs() < 1e-15);
        assert!(n.rows.column(1).iter().all(|&v| v == 0.0));
        let all = normalize_table(&t, NormMode::AllRows).unwrap();
        assert!((all.rows[[3, 0]] - 1.0).abs() < 1e-15);

        let empty = t.clone().with_split(vec![false; 4]).unwrap();
        assert!(normalize_table(&empty, NormMode::TrainStats).is_err());
    }
}
