//! Seeded kernel search and the three end-to-end pipeline variants.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::SourceDomain;
use crate::classify::{FoldRecord, LosoReport, Metrics, DEFAULT_C};
use crate::error::{Error, Result};
use crate::ops::{KernelBank, SubjectBlock};
use crate::par;
use crate::selection::{evaluate_q_grid, feature_table, EvalOptions, ReliefParams, ReliefScope};
use crate::solver::{learn_kernels_from_blocks, SolverConfig};
use crate::transfer::{local_normalize_block, Label, MapSelect, NormMode, TargetDataset};

/// Default `Q` candidates for `n0` features: `⌈n0/16⌉, ⌈n0/8⌉, ⌈n0/4⌉,
/// ⌈n0/2⌉, n0`, deduplicated.
pub fn default_q_grid(n0: usize) -> Vec<usize> {
    let mut q: Vec<usize> = [16, 8, 4, 2, 1].iter().map(|&d| n0.div_ceil(d).max(1)).collect();
    q.dedup();
    q
}

/// Where kernels are learned from during the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LearnFrom {
    /// The source domain (the target's own blocks for `csc_s2`).
    #[default]
    Source,
    /// The kernel-optimisation split A1.
    A1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub kernel_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    /// `None` uses [`default_q_grid`] of each table's width.
    pub q_grid: Option<Vec<usize>>,
    pub split_ratio: f64,
    pub split_seed: u64,
    /// Evaluate only `Q = N0`, skipping the Relief top-Q reduction.
    pub relief_ablation: bool,
    pub learn_from: LearnFrom,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            kernel_counts: (2..=8).collect(),
            seeds: (0..10).collect(),
            q_grid: None,
            split_ratio: 0.5,
            split_seed: 0,
            relief_ablation: false,
            learn_from: LearnFrom::Source,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_counts.is_empty() || self.kernel_counts.contains(&0) {
            return Err(Error::config("kernel counts must be nonempty and positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        if let Some(q) = &self.q_grid {
            if q.is_empty() || q.contains(&0) {
                return Err(Error::config("Q grid must be nonempty and positive"));
            }
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::config(format!(
                "split ratio must lie in (0, 1), got {}",
                self.split_ratio
            )));
        }
        Ok(())
    }

    fn q_values(&self, n0: usize) -> Result<Vec<usize>> {
        if self.relief_ablation {
            return Ok(vec![n0]);
        }
        match &self.q_grid {
            None => Ok(default_q_grid(n0)),
            Some(q) => {
                if let Some(bad) = q.iter().find(|&&v| v > n0) {
                    return Err(Error::config(format!("Q = {bad} exceeds the {n0} available features")));
                }
                Ok(q.clone())
            }
        }
    }
}

/// One evaluated search coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub kernel_count: usize,
    pub featuremap_index: usize,
    pub seed: u64,
    pub q: usize,
    pub a1_metrics: Metrics,
    pub kernel_ref: String,
}

impl TrialResult {
    fn coordinates(&self) -> (usize, usize, u64, usize) {
        (self.kernel_count, self.featuremap_index, self.seed, self.q)
    }
}

pub fn kernel_ref(kernel_count: usize, seed: u64) -> String {
    format!("k{kernel_count}-s{seed}")
}

/// Index of the trial with the highest A1 accuracy, ties to the smallest
/// `(kernel_count, featuremap_index, seed, q)`. Undefined accuracy ranks last.
pub fn best_trial(trials: &[TrialResult]) -> Option<usize> {
    let score = |t: &TrialResult| t.a1_metrics.accuracy.unwrap_or(f64::NEG_INFINITY);
    let mut best: Option<usize> = None;
    for (i, t) in trials.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let (sb, st) = (score(&trials[b]), score(t));
                if st > sb || (st == sb && t.coordinates() < trials[b].coordinates()) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Subject-level stratified split into (A1, A2).
///
/// Each class contributes `round(ratio × size)` subjects to A1, clamped so
/// both sides keep at least one. Subjects keep their original order.
pub fn split_kernel_sets(target: &TargetDataset, ratio: f64, seed: u64) -> Result<(TargetDataset, TargetDataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a1 = Vec::new();
    let mut a2 = Vec::new();
    for class in [Label::Negative, Label::Positive] {
        let mut idx: Vec<usize> = (0..target.len()).filter(|&i| target.labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::invalid(format!(
                "class {} has {} subjects, the split needs at least 2",
                class.as_csv(),
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let take = ((ratio * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        a1.extend_from_slice(&idx[..take]);
        a2.extend_from_slice(&idx[take..]);
    }
    a1.sort_unstable();
    a2.sort_unstable();
    Ok((target.subset(&a1), target.subset(&a2)))
}

pub struct SearchOutcome {
    pub bank: KernelBank,
    pub selected: TrialResult,
    pub trials: Vec<TrialResult>,
}

/// Learns a bank for every `(kernel_count, seed)` pair from `learn_blocks`
/// and scores every feature map and `Q` on `a1`. Returns the best bank and
/// the full trial table in coordinate order.
pub fn search_optimal_kernel(
    learn_blocks: &[SubjectBlock],
    a1: &TargetDataset,
    space: &SearchSpace,
    kernel_size: (usize, usize),
    eval: &EvalOptions,
    cfg: &SolverConfig,
) -> Result<SearchOutcome> {
    space.validate()?;
    let cells: Vec<(usize, u64)> = space
        .kernel_counts
        .iter()
        .flat_map(|&k| space.seeds.iter().map(move |&s| (k, s)))
        .collect();

    let evaluated = par::try_map(&cells, |&(k, seed)| -> Result<(KernelBank, Vec<TrialResult>)> {
        let cfg = SolverConfig { seed, ..*cfg };
        let bank = learn_kernels_from_blocks(learn_blocks, k, kernel_size, &cfg, None)?;
        let mut trials = Vec::new();
        for j in 1..=k {
            let table = feature_table(&bank, a1, j, eval.map_select, &cfg)?;
            let qs = space.q_values(table.n_features())?;
            let opts = EvalOptions { map_index: j, ..*eval };
            for (q, report) in qs.iter().zip(evaluate_q_grid(&table, &qs, &opts)?) {
                trials.push(TrialResult {
                    kernel_count: k,
                    featuremap_index: j,
                    seed,
                    q: *q,
                    a1_metrics: report.metrics,
                    kernel_ref: kernel_ref(k, seed),
                });
            }
        }
        Ok((bank, trials))
    })?;

    let mut banks = BTreeMap::new();
    let mut trials = Vec::new();
    for (bank, t) in evaluated {
        if let Some(first) = t.first() {
            banks.insert(first.kernel_ref.clone(), bank);
        }
        trials.extend(t);
    }
    trials.sort_by_key(|t| t.coordinates());
    let best = best_trial(&trials).ok_or_else(|| Error::invalid("search produced no trials"))?;
    let selected = trials[best].clone();
    let bank = banks.remove(&selected.kernel_ref).expect("bank of the selected trial");
    Ok(SearchOutcome { bank, selected, trials })
}

/// Pipeline variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Kernels from the target's own blocks, single seed.
    #[serde(rename = "csc_s2")]
    CscS2,
    /// Kernels from the source domain, single seed.
    #[serde(rename = "cstl_s2")]
    CstlS2,
    /// Kernels from the source domain, chosen by search on A1, scored on A2.
    #[serde(rename = "cstlok_s2")]
    CstlokS2,
}

impl Variant {
    pub fn needs_source(self) -> bool {
        !matches!(self, Variant::CscS2)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::CscS2 => "csc_s2",
            Variant::CstlS2 => "cstl_s2",
            Variant::CstlokS2 => "cstlok_s2",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csc_s2" => Ok(Variant::CscS2),
            "cstl_s2" => Ok(Variant::CstlS2),
            "cstlok_s2" => Ok(Variant::CstlokS2),
            other => Err(Error::config(format!(
                "unknown variant {other:?} (expected csc_s2, cstl_s2 or cstlok_s2)"
            ))),
        }
    }
}

/// Everything that shapes a pipeline run apart from file locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub solver: SolverConfig,
    pub space: SearchSpace,
    pub kernel_size: (usize, usize),
    /// Bank size for the single-seed variants.
    pub kernel_count: usize,
    /// Feature map for the single-seed variants (1-based).
    pub map_index: usize,
    /// `Q` for the single-seed variants; `None` means `⌈N0/4⌉`.
    pub q: Option<usize>,
    pub r_neighbors: usize,
    pub norm: NormMode,
    pub map_select: MapSelect,
    pub relief_scope: ReliefScope,
    pub svm_c: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            solver: SolverConfig::default(),
            space: SearchSpace::default(),
            kernel_size: (3, 3),
            kernel_count: 8,
            map_index: 8,
            q: None,
            r_neighbors: ReliefParams::DEFAULT_R,
            norm: NormMode::TrainStats,
            map_select: MapSelect::Index,
            relief_scope: ReliefScope::PerFold,
            svm_c: DEFAULT_C,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.space.validate()?;
        if self.kernel_size.0 == 0 || self.kernel_size.1 == 0 {
            return Err(Error::config("kernel size must be positive"));
        }
        if self.kernel_count == 0 {
            return Err(Error::config("kernel count must be positive"));
        }
        if self.map_index == 0 || self.map_index > self.kernel_count {
            return Err(Error::config(format!(
                "map index {} outside 1..={}",
                self.map_index, self.kernel_count
            )));
        }
        if self.q == Some(0) {
            return Err(Error::config("Q must be positive"));
        }
        if self.r_neighbors == 0 {
            return Err(Error::config("Relief needs at least one neighbour"));
        }
        if !(self.svm_c > 0.0 && self.svm_c.is_finite()) {
            return Err(Error::config("C must be positive"));
        }
        Ok(())
    }

    pub fn eval_options(&self, map_index: usize, q: usize) -> EvalOptions {
        EvalOptions {
            map_index,
            map_select: self.map_select,
            norm: self.norm,
            relief_scope: self.relief_scope,
            relief: ReliefParams {
                r_neighbors: self.r_neighbors,
                q_features: q,
            },
            svm_c: self.svm_c,
        }
    }
}

/// Rates rendered as one-decimal percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Percentages {
    pub accuracy: String,
    pub sensitivity: String,
    pub specificity: String,
}

impl From<&Metrics> for Percentages {
    fn from(m: &Metrics) -> Self {
        let [accuracy, sensitivity, specificity] = m.percentages();
        Percentages {
            accuracy,
            sensitivity,
            specificity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub a1: Vec<String>,
    pub a2: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSummary {
    pub kernel_count: usize,
    pub kernel_size: (usize, usize),
    pub seed: u64,
    pub learned_from: String,
    pub map_index: usize,
    pub q: usize,
}

/// Result of a pipeline run. Everything except `timing` is a deterministic
/// function of the inputs and configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub variant: Variant,
    pub metrics: Metrics,
    pub percentages: Percentages,
    pub invalid_folds: usize,
    pub per_fold: Vec<FoldRecord>,
    pub kernels: BankSummary,
    pub split: Option<SplitRecord>,
    pub selected: Option<TrialResult>,
    pub trials: Vec<TrialResult>,
    pub config: serde_json::Value,
    pub versions: BTreeMap<String, String>,
    /// Wall-clock seconds per stage.
    pub timing: BTreeMap<String, f64>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// JSON with the timing block removed.
    pub fn to_json_without_timing(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serialises");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timing");
        }
        serde_json::to_string_pretty(&v).expect("report serialises")
    }

    /// Trial table as CSV (`kernel_count,featuremap_index,seed,q,a1_accuracy`).
    pub fn trial_csv(&self) -> String {
        trial_csv(&self.trials)
    }
}

pub fn trial_csv(trials: &[TrialResult]) -> String {
    let mut out = String::from("kernel_count,featuremap_index,seed,q,a1_accuracy\n");
    for t in trials {
        let acc = t.a1_metrics.accuracy.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            t.kernel_count, t.featuremap_index, t.seed, t.q, acc
        ));
    }
    out
}

fn normalized_blocks(blocks: &[SubjectBlock]) -> Vec<SubjectBlock> {
    par::map(blocks, local_normalize_block)
}

fn check_source_shape(source: &SourceDomain, target: &TargetDataset) -> Result<()> {
    if let Some(shape) = target.block_shape() {
        if (source.h0, source.n) != shape {
            return Err(Error::shape(format!(
                "source blocks are {}x{} but target blocks are {}x{}",
                source.h0, source.n, shape.0, shape.1
            )));
        }
    }
    if source.blocks.is_empty() {
        return Err(Error::invalid("source domain has no blocks"));
    }
    Ok(())
}

fn versions() -> BTreeMap<String, String> {
    let mut v = BTreeMap::new();
    v.insert("csc-transfer".to_string(), env!("CARGO_PKG_VERSION").to_string());
    v.insert(
        "backend".to_string(),
        if par::is_parallel() { "parallel" } else { "sequential" }.to_string(),
    );
    v
}

/// Runs one variant end to end.
pub fn run_pipeline(
    variant: Variant,
    source: Option<&SourceDomain>,
    target: &TargetDataset,
    cfg: &PipelineConfig,
) -> Result<Report> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(Error::invalid("target dataset is empty"));
    }
    let source = match (variant.needs_source(), source) {
        (true, None) => {
            return Err(Error::config(format!("variant {variant} needs a source domain")));
        }
        (true, Some(s)) => {
            check_source_shape(s, target)?;
            Some(s)
        }
        (false, _) => None,
    };
    let mut timing = BTreeMap::new();

    match variant {
        Variant::CscS2 | Variant::CstlS2 => {
            let t0 = Instant::now();
            let learn_blocks = match source {
                Some(s) => normalized_blocks(&s.blocks),
                None => normalized_blocks(&target.blocks),
            };
            let bank = learn_kernels_from_blocks(&learn_blocks, cfg.kernel_count, cfg.kernel_size, &cfg.solver, None)?;
            timing.insert("learn_kernels".to_string(), t0.elapsed().as_secs_f64());

            let t1 = Instant::now();
            let table = feature_table(&bank, target, cfg.map_index, cfg.map_select, &cfg.solver)?;
            timing.insert("encode".to_string(), t1.elapsed().as_secs_f64());

            let n0 = table.n_features();
            let q = cfg.q.unwrap_or_else(|| n0.div_ceil(4));
            if q > n0 {
                return Err(Error::config(format!("Q = {q} exceeds the {n0} available features")));
            }
            let t2 = Instant::now();
            let opts = cfg.eval_options(cfg.map_index, q);
            let loso = evaluate_q_grid(&table, &[q], &opts)?.remove(0);
            timing.insert("evaluate".to_string(), t2.elapsed().as_secs_f64());

            let learned_from = if source.is_some() { "source" } else { "target" };
            Ok(assemble(
                variant,
                loso,
                BankSummary {
                    kernel_count: cfg.kernel_count,
                    kernel_size: cfg.kernel_size,
                    seed: cfg.solver.seed,
                    learned_from: learned_from.to_string(),
                    map_index: cfg.map_index,
                    q,
                },
                None,
                None,
                Vec::new(),
                cfg,
                timing,
            ))
        }
        Variant::CstlokS2 => {
            let t0 = Instant::now();
            let (a1, a2) = split_kernel_sets(target, cfg.space.split_ratio, cfg.space.split_seed)?;
            let learn_blocks = match cfg.space.learn_from {
                LearnFrom::Source => normalized_blocks(&source.expect("checked above").blocks),
                LearnFrom::A1 => normalized_blocks(&a1.blocks),
            };
            let template = cfg.eval_options(1, 1);
            let outcome = search_optimal_kernel(&learn_blocks, &a1, &cfg.space, cfg.kernel_size, &template, &cfg.solver)?;
            timing.insert("search".to_string(), t0.elapsed().as_secs_f64());

            let t1 = Instant::now();
            let sel = &outcome.selected;
            let solver = SolverConfig {
                seed: sel.seed,
                ..cfg.solver
            };
            let table = feature_table(&outcome.bank, &a2, sel.featuremap_index, cfg.map_select, &solver)?;
            let opts = cfg.eval_options(sel.featuremap_index, sel.q);
            let loso = evaluate_q_grid(&table, &[sel.q], &opts)?.remove(0);
            timing.insert("evaluate".to_string(), t1.elapsed().as_secs_f64());

            let learned_from = match cfg.space.learn_from {
                LearnFrom::Source => "source",
                LearnFrom::A1 => "a1",
            };
            Ok(assemble(
                variant,
                loso,
                BankSummary {
                    kernel_count: sel.kernel_count,
                    kernel_size: cfg.kernel_size,
                    seed: sel.seed,
                    learned_from: learned_from.to_string(),
                    map_index: sel.featuremap_index,
                    q: sel.q,
                },
                Some(SplitRecord {
                    a1: a1.subject_ids.clone(),
                    a2: a2.subject_ids.clone(),
                }),
                Some(outcome.selected.clone()),
                outcome.trials,
                cfg,
                timing,
            ))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    variant: Variant,
    loso: LosoReport,
    kernels: BankSummary,
    split: Option<SplitRecord>,
    selected: Option<TrialResult>,
    trials: Vec<TrialResult>,
    cfg: &PipelineConfig,
    timing: BTreeMap<String, f64>,
) -> Report {
    Report {
        variant,
        percentages: Percentages::from(&loso.metrics),
        metrics: loso.metrics,
        invalid_folds: loso.invalid_folds,
        per_fold: loso.per_fold,
        kernels,
        split,
        selected,
        trials,
        config: serde_json::to_value(cfg).expect("config serialises"),
        versions: versions(),
        timing,
    }
}
