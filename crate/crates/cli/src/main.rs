use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use csc_transfer::augment::{expand_dataset, extract_toy_features, NoiseSpec};
use csc_transfer::classify::METRICS_CSV_HEADER;
use csc_transfer::config::{parse_assignment, RunConfig};
use csc_transfer::io;
use csc_transfer::search::{run_pipeline, search_optimal_kernel, split_kernel_sets, trial_csv, LearnFrom, Variant};
use csc_transfer::selection::{feature_table, ss_ck_from_table};
use csc_transfer::solver::learn_kernels;
use csc_transfer::synthetic::{planted_source, planted_target, PlantedSpec};
use csc_transfer::transfer::{local_normalize_block, TargetDataset};
use csc_transfer::{par, Error};

#[derive(Parser)]
#[command(name = "csct", version, about = "Convolutional sparse coding transfer learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Seed for every random stream
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Expand WAV signals with noise at given SNRs and extract feature rows
    Augment {
        #[command(flatten)]
        common: Common,
        /// Directory of clean signals
        #[arg(long)]
        signals: PathBuf,
        /// Directory of noise recordings
        #[arg(long)]
        noise: PathBuf,
        /// Comma-separated SNR levels in dB
        #[arg(long, value_delimiter = ',', default_value = "0,5,10", allow_hyphen_values = true)]
        snr: Vec<f64>,
        /// Features per row
        #[arg(long, default_value_t = 26)]
        features: usize,
        /// Also write the mixed signals to this directory
        #[arg(long)]
        wav_out: Option<PathBuf>,
        /// Output feature CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a kernel bank from source feature rows
    LearnKernels {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        source: Option<PathBuf>,
        /// Rows per source block
        #[arg(long)]
        h0: usize,
        /// Bank file (a `.json` sidecar is written next to it)
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode the target with a bank and write the feature table
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        kernels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// LOSO evaluation of a stored bank on the target
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        kernels: PathBuf,
        /// Write metrics JSON here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Kernel search on the A1 split; writes the trial table and best bank
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline for one variant
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render a report
    Report {
        /// report.json
        input: PathBuf,
        #[arg(long, value_parser = ["summary", "metrics", "trials", "config"], default_value = "summary")]
        format: String,
    },
    /// Write the planted synthetic fixture (target.csv, source.csv)
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        subjects: usize,
        #[arg(long, default_value_t = 16)]
        source_blocks: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("csct: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

/// File, then `--set`, then `--seed`.
fn resolve(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for s in &common.set {
        let (k, v) = parse_assignment(s)?;
        cfg.set(&k, &v)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        par::configure_threads(t);
    }
    Ok(cfg)
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf, Error> {
    path.ok_or_else(|| Error::Config(format!("missing --{what}")))
}

fn existing(path: &Path, what: &str) -> Result<(), Error> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("--{what} {} does not exist", path.display())))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn load_target(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<TargetDataset, Error> {
    let path = required(flag.or_else(|| cfg.target.clone()), "target")?;
    existing(&path, "target")?;
    io::load_target_csv(&path)
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Augment {
            common,
            signals,
            noise,
            snr,
            features,
            wav_out,
            out,
        } => {
            resolve(&common)?;
            existing(&signals, "signals")?;
            existing(&noise, "noise")?;
            let clean = io::wav_files(&signals)?
                .iter()
                .map(io::read_wav)
                .collect::<Result<Vec<_>, _>>()?;
            let mut bank = Vec::new();
            for path in io::wav_files(&noise)? {
                let n = io::read_wav(&path)?;
                for &db in &snr {
                    bank.push(NoiseSpec {
                        noise: n.clone(),
                        snr_db: db,
                    });
                }
            }
            if bank.is_empty() {
                return Err(Error::Config(format!("no noise recordings in {}", noise.display())));
            }
            let mixed = expand_dataset(&clean, &bank)?;
            if let Some(dir) = wav_out {
                for (i, s) in mixed.iter().enumerate() {
                    io::write_wav(dir.join(format!("mix_{i:05}.wav")), s)?;
                }
            }
            let rows = par::try_map(&mixed, |s| extract_toy_features(s, features))?;
            io::write_feature_rows(&out, &rows)?;
            eprintln!("{} signals x {} noise specs -> {} rows", clean.len(), bank.len(), rows.len());
            Ok(())
        }
        Command::LearnKernels { common, source, h0, out } => {
            let cfg = resolve(&common)?;
            let path = required(source.or(cfg.source.clone()), "source")?;
            existing(&path, "source")?;
            let mut domain = io::load_source_features(&path, h0)?;
            domain.blocks = domain.blocks.iter().map(local_normalize_block).collect();
            let p = &cfg.pipeline;
            let bank = learn_kernels(&domain, p.kernel_count, p.kernel_size, &p.solver)?;
            io::save_bank(&out, &bank, &p.solver)
        }
        Command::Encode {
            common,
            target,
            kernels,
            out,
        } => {
            let cfg = resolve(&common)?;
            let target = load_target(&cfg, target)?;
            let (bank, header) = io::load_bank(&kernels)?;
            let p = &cfg.pipeline;
            let table = feature_table(&bank, &target, p.map_index.min(header.kernel_count), p.map_select, &p.solver)?;
            io::write_feature_table(&out, &table)
        }
        Command::Evaluate {
            common,
            target,
            kernels,
            out,
        } => {
            let cfg = resolve(&common)?;
            let target = load_target(&cfg, target)?;
            let (bank, header) = io::load_bank(&kernels)?;
            let p = &cfg.pipeline;
            let map_index = p.map_index.min(header.kernel_count);
            let table = feature_table(&bank, &target, map_index, p.map_select, &p.solver)?;
            let q = p.q.unwrap_or_else(|| table.n_features().div_ceil(4));
            let report = ss_ck_from_table(&table, &p.eval_options(map_index, q))?;
            let json = serde_json::to_string_pretty(&report).expect("metrics serialise") + "\n";
            match out {
                Some(path) => write_text(&path, &json),
                None => {
                    print!("{json}");
                    Ok(())
                }
            }
        }
        Command::Search {
            common,
            source,
            target,
            out,
        } => {
            let cfg = resolve(&common)?;
            let p = &cfg.pipeline;
            let target_ds = load_target(&cfg, target)?;
            let out = required(out.or(cfg.out.clone()), "out")?;
            let (a1, _) = split_kernel_sets(&target_ds, p.space.split_ratio, p.space.split_seed)?;
            let blocks = match p.space.learn_from {
                LearnFrom::Source => {
                    let path = required(source.or(cfg.source.clone()), "source")?;
                    existing(&path, "source")?;
                    let (h0, _) = target_ds.block_shape().expect("nonempty target");
                    io::load_source_features(&path, h0)?.blocks
                }
                LearnFrom::A1 => a1.blocks.clone(),
            };
            let blocks: Vec<_> = blocks.iter().map(local_normalize_block).collect();
            let outcome = search_optimal_kernel(&blocks, &a1, &p.space, p.kernel_size, &p.eval_options(1, 1), &p.solver)?;
            write_text(&out.join("trials.csv"), &trial_csv(&outcome.trials))?;
            let selected = serde_json::to_string_pretty(&outcome.selected).expect("trial serialises") + "\n";
            write_text(&out.join("selected.json"), &selected)?;
            let solver = csc_transfer::solver::SolverConfig {
                seed: outcome.selected.seed,
                ..p.solver
            };
            io::save_bank(out.join("optimal.bank"), &outcome.bank, &solver)?;
            print!("{selected}");
            Ok(())
        }
        Command::Run {
            common,
            variant,
            source,
            target,
            out,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(v) = variant {
                cfg.variant = v.parse::<Variant>()?;
            }
            if source.is_some() {
                cfg.source = source;
            }
            if target.is_some() {
                cfg.target = target;
            }
            if out.is_some() {
                cfg.out = out;
            }
            let source = if cfg.variant.needs_source() {
                let path = required(cfg.source.clone(), "source")?;
                existing(&path, "source")?;
                Some(path)
            } else {
                None
            };
            let target = load_target(&cfg, None)?;
            let source = match source {
                Some(path) => {
                    let (h0, _) = target.block_shape().expect("nonempty target");
                    Some(io::load_source_features(&path, h0)?)
                }
                None => None,
            };
            let mut report = run_pipeline(cfg.variant, source.as_ref(), &target, &cfg.pipeline)?;
            // where the report goes is not part of the run
            let recorded = RunConfig { out: None, ..cfg.clone() };
            report.config = serde_json::json!({
                "run": recorded,
                "echo": recorded.echo().lines().collect::<Vec<_>>(),
            });
            match &cfg.out {
                Some(dir) => {
                    io::write_report(dir, &report)?;
                    write_text(&dir.join("config.txt"), &recorded.echo())?;
                    print!("{}", io::render_summary(&report));
                }
                None => println!("{}", report.to_json()),
            }
            Ok(())
        }
        Command::Report { input, format } => {
            existing(&input, "input")?;
            let report = io::read_report(&input)?;
            match format.as_str() {
                "summary" => print!("{}", io::render_summary(&report)),
                "metrics" => println!("{METRICS_CSV_HEADER}\n{}", report.metrics.csv_line()),
                "trials" => print!("{}", report.trial_csv()),
                _ => {
                    let lines = report.config.get("echo").and_then(|v| v.as_array()).ok_or_else(|| Error::Format {
                        path: input.display().to_string(),
                        message: "report has no config echo".into(),
                    })?;
                    for l in lines {
                        println!("{}", l.as_str().unwrap_or_default());
                    }
                }
            }
            Ok(())
        }
        Command::Synth {
            common,
            subjects,
            source_blocks,
            out,
        } => {
            let cfg = resolve(&common)?;
            let spec = PlantedSpec {
                subjects,
                source_blocks,
                seed: common.seed.unwrap_or(PlantedSpec::default().seed),
                kernel_size: cfg.pipeline.kernel_size,
                ..PlantedSpec::default()
            };
            let target = planted_target(&spec)?;
            let source = planted_source(&spec)?;
            io::write_target_csv(out.join("target.csv"), &target)?;
            let rows: Vec<Vec<f64>> = source
                .blocks
                .iter()
                .flat_map(|b| b.values().rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>())
                .collect();
            io::write_feature_rows(out.join("source.csv"), &rows)
        }
    }
}
