//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Later assignments override earlier ones, so command-line
//! overrides are applied after the file. [`RunConfig::echo`] writes every
//! key, and parsing the echo reproduces the configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::{LearnFrom, PipelineConfig, Variant};
use crate::selection::ReliefScope;
use crate::transfer::{MapSelect, NormMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::CstlokS2,
            source: None,
            target: None,
            out: None,
            pipeline: PipelineConfig::default(),
        }
    }
}

/// Splits a config file into `(line, key, value)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits `KEY=VALUE`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(format!("expected KEY=VALUE, got {s:?}")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {v:?}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

/// `a..b` (inclusive) or a comma list.
fn list(key: &str, v: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = v.split_once("..") {
        let a: u64 = num(key, a.trim())?;
        let b: u64 = num(key, b.trim())?;
        if a > b {
            return Err(Error::config(format!("{key}: empty range {v:?}")));
        }
        return Ok((a..=b).collect());
    }
    let items = v
        .split(',')
        .map(|s| num(key, s.trim()))
        .collect::<Result<Vec<u64>>>()?;
    if items.is_empty() {
        return Err(Error::config(format!("{key}: empty list")));
    }
    Ok(items)
}

fn counts(key: &str, v: &str) -> Result<Vec<usize>> {
    list(key, v)?
        .into_iter()
        .map(|x| usize::try_from(x).map_err(|_| Error::config(format!("{key}: {x} is too large"))))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn optional_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn size(key: &str, v: &str) -> Result<(usize, usize)> {
    let (a, b) = v
        .split_once('x')
        .ok_or_else(|| Error::config(format!("{key}: expected ROWSxCOLS, got {v:?}")))?;
    Ok((num(key, a.trim())?, num(key, b.trim())?))
}

impl RunConfig {
    /// Applies one assignment. Unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let p = &mut self.pipeline;
        match key {
            "variant" => self.variant = v.parse()?,
            "source" => self.source = optional_path(v),
            "target" => self.target = optional_path(v),
            "out" => self.out = optional_path(v),
            "seed" => {
                let s: u64 = num(key, v)?;
                p.solver.seed = s;
                p.space.split_seed = s;
                let n = p.space.seeds.len() as u64;
                p.space.seeds = (s..s + n).collect();
            }
            "lambda" => p.solver.lambda = num(key, v)?,
            "alpha" => p.solver.alpha = num(key, v)?,
            "gamma" => p.solver.gamma = num(key, v)?,
            "outer_iters" => p.solver.outer_iters = num(key, v)?,
            "coding_iters" => p.solver.coding_iters = num(key, v)?,
            "dict_iters" => p.solver.dict_iters = num(key, v)?,
            "residual_tol" => p.solver.residual_tol = num(key, v)?,
            "solver_seed" => p.solver.seed = num(key, v)?,
            "kernel_counts" => p.space.kernel_counts = counts(key, v)?,
            "seeds" => p.space.seeds = list(key, v)?,
            "q_grid" => {
                p.space.q_grid = if v == "auto" { None } else { Some(counts(key, v)?) };
            }
            "split_ratio" => p.space.split_ratio = num(key, v)?,
            "split_seed" => p.space.split_seed = num(key, v)?,
            "relief_ablation" => p.space.relief_ablation = boolean(key, v)?,
            "learn_from" => {
                p.space.learn_from = match v {
                    "source" => LearnFrom::Source,
                    "a1" => LearnFrom::A1,
                    _ => return Err(Error::config(format!("{key}: expected source or a1, got {v:?}"))),
                }
            }
            "kernel_size" => p.kernel_size = size(key, v)?,
            "kernel_count" => p.kernel_count = num(key, v)?,
            "map_index" => p.map_index = num(key, v)?,
            "q" => p.q = if v == "auto" { None } else { Some(num(key, v)?) },
            "r_neighbors" => p.r_neighbors = num(key, v)?,
            "norm" => {
                p.norm = match v {
                    "train-stats" => NormMode::TrainStats,
                    "all-rows" => NormMode::AllRows,
                    _ => return Err(Error::config(format!("{key}: expected train-stats or all-rows, got {v:?}"))),
                }
            }
            "map_select" => {
                p.map_select = match v {
                    "index" => MapSelect::Index,
                    "concat" => MapSelect::Concat,
                    _ => return Err(Error::config(format!("{key}: expected index or concat, got {v:?}"))),
                }
            }
            "relief_scope" => {
                p.relief_scope = match v {
                    "per-fold" => ReliefScope::PerFold,
                    "global" => ReliefScope::Global,
                    _ => return Err(Error::config(format!("{key}: expected per-fold or global, got {v:?}"))),
                }
            }
            "svm_c" => p.svm_c = num(key, v)?,
            _ => return Err(Error::config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (line, k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)
                .map_err(|e| Error::config(format!("line {line}: {e}")))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        RunConfig::from_text(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Every key in a fixed order.
    pub fn echo(&self) -> String {
        let p = &self.pipeline;
        let path = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("variant", self.variant.to_string());
        put("source", path(&self.source));
        put("target", path(&self.target));
        put("out", path(&self.out));
        put("lambda", p.solver.lambda.to_string());
        put("alpha", p.solver.alpha.to_string());
        put("gamma", p.solver.gamma.to_string());
        put("outer_iters", p.solver.outer_iters.to_string());
        put("coding_iters", p.solver.coding_iters.to_string());
        put("dict_iters", p.solver.dict_iters.to_string());
        put("residual_tol", p.solver.residual_tol.to_string());
        put("solver_seed", p.solver.seed.to_string());
        put("kernel_counts", join(&p.space.kernel_counts));
        put("seeds", join(&p.space.seeds));
        put(
            "q_grid",
            p.space.q_grid.as_ref().map_or("auto".to_string(), |q| join(q)),
        );
        put("split_ratio", p.space.split_ratio.to_string());
        put("split_seed", p.space.split_seed.to_string());
        put("relief_ablation", p.space.relief_ablation.to_string());
        put(
            "learn_from",
            match p.space.learn_from {
                LearnFrom::Source => "source",
                LearnFrom::A1 => "a1",
            }
            .to_string(),
        );
        put("kernel_size", format!("{}x{}", p.kernel_size.0, p.kernel_size.1));
        put("kernel_count", p.kernel_count.to_string());
        put("map_index", p.map_index.to_string());
        put("q", p.q.map_or("auto".to_string(), |q| q.to_string()));
        put("r_neighbors", p.r_neighbors.to_string());
        put(
            "norm",
            match p.norm {
                NormMode::TrainStats => "train-stats",
                NormMode::AllRows => "all-rows",
            }
            .to_string(),
        );
        put(
            "map_select",
            match p.map_select {
                MapSelect::Index => "index",
                MapSelect::Concat => "concat",
            }
            .to_string(),
        );
        put(
            "relief_scope",
            match p.relief_scope {
                ReliefScope::PerFold => "per-fold",
                ReliefScope::Global => "global",
            }
            .to_string(),
        );
        put("svm_c", p.svm_c.to_string());
        s
    }
}
