//! Dataset loaders and writers, WAV input, kernel-bank files and reports.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::augment::{build_source_domain, RawSignal, SourceDomain};
use crate::classify::METRICS_CSV_HEADER;
use crate::error::{Error, Result};
use crate::ops::{KernelBank, SubjectBlock};
use crate::search::Report;
use crate::solver::SolverConfig;
use crate::transfer::{FeatureTable, Label, TargetDataset};

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn load_err(path: &Path, row: usize, column: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Load {
        path: display(path),
        row,
        column: column.into(),
        message: message.into(),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    load_err(path, row, "-", e.to_string())
}

fn parse_value(path: &Path, row: usize, column: &str, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| load_err(path, row, column, format!("cannot parse {cell:?} as a number")))?;
    if !v.is_finite() {
        return Err(load_err(path, row, column, format!("non-finite value {cell:?}")));
    }
    Ok(v)
}

/// Reads a `subject_id,label,f1..fN` file. Subjects appear in order of first
/// appearance; every subject must have the same number of rows.
pub fn load_target_csv(path: impl AsRef<Path>) -> Result<TargetDataset> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.len() < 3 || header[0] != "subject_id" || header[1] != "label" {
        return Err(load_err(
            path,
            1,
            header.first().cloned().unwrap_or_default(),
            "header must be subject_id,label,f1..fN",
        ));
    }
    let n = header.len() - 2;

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, (Label, Vec<f64>, usize)> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != header.len() {
            return Err(load_err(
                path,
                line,
                "-",
                format!("expected {} columns, found {}", header.len(), record.len()),
            ));
        }
        let id = record[0].trim().to_string();
        if id.is_empty() {
            return Err(load_err(path, line, "subject_id", "empty subject id"));
        }
        let label = match record[1].trim() {
            "0" => Label::Negative,
            "1" => Label::Positive,
            other => return Err(load_err(path, line, "label", format!("label {other:?} is not 0 or 1"))),
        };
        let mut values = Vec::with_capacity(n);
        for (c, cell) in record.iter().enumerate().skip(2) {
            values.push(parse_value(path, line, &header[c], cell)?);
        }
        match rows.get_mut(&id) {
            Some((l, data, count)) => {
                if *l != label {
                    return Err(load_err(path, line, "label", format!("subject {id} changes label")));
                }
                data.extend(values);
                *count += 1;
            }
            None => {
                order.push(id.clone());
                rows.insert(id, (label, values, 1));
            }
        }
    }
    if order.is_empty() {
        return Err(load_err(path, 2, "-", "no data rows"));
    }

    let h0 = rows[&order[0]].2;
    let mut blocks = Vec::with_capacity(order.len());
    let mut labels = Vec::with_capacity(order.len());
    for id in &order {
        let (label, data, count) = rows.remove(id).expect("present");
        if count != h0 {
            return Err(load_err(
                path,
                0,
                "subject_id",
                format!("subject {id} has {count} rows, expected {h0}"),
            ));
        }
        let block = Array2::from_shape_vec((h0, n), data).expect("row count checked");
        blocks.push(SubjectBlock::new(block)?);
        labels.push(label);
    }
    TargetDataset::new(blocks, labels, order)
}

/// Reads an `f1..fN` feature file into rows.
pub fn read_feature_rows(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(load_err(path, 1, "-", "missing header"));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != header.len() {
            return Err(load_err(
                path,
                line,
                "-",
                format!("expected {} columns, found {}", header.len(), record.len()),
            ));
        }
        rows.push(
            record
                .iter()
                .enumerate()
                .map(|(c, cell)| parse_value(path, line, &header[c], cell))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(rows)
}

/// Feature rows blocked into groups of `h0`.
pub fn load_source_features(path: impl AsRef<Path>, h0: usize) -> Result<SourceDomain> {
    let path = path.as_ref();
    let rows = read_feature_rows(path)?;
    if rows.is_empty() {
        return Err(load_err(path, 1, "-", "source domain is empty"));
    }
    let domain = build_source_domain(&rows, h0)?;
    if domain.blocks.is_empty() {
        return Err(load_err(
            path,
            rows.len() + 1,
            "-",
            format!("{} rows do not fill one block of {h0}", rows.len()),
        ));
    }
    Ok(domain)
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_err(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: display(path),
        message: e.to_string(),
    }
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

pub fn write_feature_rows(path: impl AsRef<Path>, rows: &[Vec<f64>]) -> Result<()> {
    let path = path.as_ref();
    let n = rows.first().map_or(0, Vec::len);
    let mut w = writer(path)?;
    w.write_record(numbered("f", n)).map_err(|e| write_err(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_target_csv(path: impl AsRef<Path>, target: &TargetDataset) -> Result<()> {
    let path = path.as_ref();
    let n = target.block_shape().map_or(0, |s| s.1);
    let mut w = writer(path)?;
    let header = ["subject_id".to_string(), "label".to_string()].into_iter().chain(numbered("f", n));
    w.write_record(header).map_err(|e| write_err(path, e))?;
    for ((block, label), id) in target.blocks.iter().zip(&target.labels).zip(&target.subject_ids) {
        for row in block.values().rows() {
            let cells = [id.clone(), label.as_csv().to_string()]
                .into_iter()
                .chain(row.iter().map(|v| v.to_string()));
            w.write_record(cells).map_err(|e| write_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `subject_id,label,g1..gN0`.
pub fn write_feature_table(path: impl AsRef<Path>, table: &FeatureTable) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let header = ["subject_id".to_string(), "label".to_string()]
        .into_iter()
        .chain(numbered("g", table.n_features()));
    w.write_record(header).map_err(|e| write_err(path, e))?;
    for (i, row) in table.rows.rows().into_iter().enumerate() {
        let cells = [table.subject_ids[i].clone(), table.labels[i].as_csv().to_string()]
            .into_iter()
            .chain(row.iter().map(|v| v.to_string()));
        w.write_record(cells).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mono PCM (8/16/24/32-bit integer) or float WAV, scaled to `[-1, 1]`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<RawSignal> {
    let path = path.as_ref();
    let fmt = |m: String| Error::Format {
        path: display(path),
        message: m,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| fmt(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(fmt(format!("expected mono audio, found {} channels", spec.channels)));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = 2f64.powi(i32::from(spec.bits_per_sample) - 1);
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| fmt(e.to_string()))?;
    RawSignal::new(samples, spec.sample_rate).map_err(|e| fmt(e.to_string()))
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, signal: &RawSignal) -> Result<()> {
    let path = path.as_ref();
    let fmt = |e: hound::Error| Error::Format {
        path: display(path),
        message: e.to_string(),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = hound::WavWriter::create(path, spec).map_err(fmt)?;
    for &s in &signal.samples {
        w.write_sample(s as f32).map_err(fmt)?;
    }
    w.finalize().map_err(fmt)
}

/// Sorted `.wav` files in a directory.
pub fn wav_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

/// JSON sidecar describing a stored kernel bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankHeader {
    pub format: String,
    pub kernel_count: usize,
    pub k1: usize,
    pub k2: usize,
    pub h0: usize,
    pub n: usize,
    pub seed: u64,
    pub config: SolverConfig,
}

const BANK_FORMAT: &str = "csc-kernel-bank/1 f64-le";

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the kernels as little-endian `f64` in `(k, i, j)` order to `path`
/// and the header to `path.json`.
pub fn save_bank(path: impl AsRef<Path>, bank: &KernelBank, cfg: &SolverConfig) -> Result<()> {
    let path = path.as_ref();
    let (k1, k2) = bank.support();
    let (h0, n) = bank.padded_shape();
    let header = BankHeader {
        format: BANK_FORMAT.to_string(),
        kernel_count: bank.len(),
        k1,
        k2,
        h0,
        n,
        seed: cfg.seed,
        config: *cfg,
    };
    let mut bytes = Vec::with_capacity(bank.kernels().len() * 8);
    for v in bank.kernels().iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let json = serde_json::to_string_pretty(&header).expect("header serialises");
    let side = sidecar(path);
    fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<(KernelBank, BankHeader)> {
    let path = path.as_ref();
    let side = sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let header: BankHeader = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: display(&side),
        message: e.to_string(),
    })?;
    if header.format != BANK_FORMAT {
        return Err(Error::Format {
            path: display(&side),
            message: format!("unsupported format {:?}", header.format),
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = header.kernel_count * header.k1 * header.k2 * 8;
    if bytes.len() != expected {
        return Err(Error::Format {
            path: display(path),
            message: format!("payload is {} bytes, header implies {expected}", bytes.len()),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let kernels = Array3::from_shape_vec((header.kernel_count, header.k1, header.k2), values)
        .expect("length checked");
    let bank = KernelBank::new(kernels, (header.h0, header.n)).map_err(|e| Error::Format {
        path: display(path),
        message: e.to_string(),
    })?;
    Ok((bank, header))
}

/// Writes `report.json`, `trials.csv` and `metrics.csv` into `dir`.
pub fn write_report(dir: impl AsRef<Path>, report: &Report) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    put("report.json", report.to_json() + "\n")?;
    put("trials.csv", report.trial_csv())?;
    put(
        "metrics.csv",
        format!("{METRICS_CSV_HEADER}\n{}\n", report.metrics.csv_line()),
    )
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Report> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: display(path),
        message: e.to_string(),
    })
}

/// Plain-text summary of a report.
pub fn render_summary(report: &Report) -> String {
    let p = &report.percentages;
    let c = report.metrics.confusion;
    let mut out = format!(
        "variant      {}\naccuracy     {}\nsensitivity  {}\nspecificity  {}\nconfusion    tp={} fn={} tn={} fp={}\n",
        report.variant, p.accuracy, p.sensitivity, p.specificity, c.tp, c.fn_, c.tn, c.fp
    );
    let k = &report.kernels;
    out.push_str(&format!(
        "kernels      {} of {}x{} (seed {}, from {}), map {}, Q {}\n",
        k.kernel_count, k.kernel_size.0, k.kernel_size.1, k.seed, k.learned_from, k.map_index, k.q
    ));
    if report.invalid_folds > 0 {
        out.push_str(&format!("invalid folds {}\n", report.invalid_folds));
    }
    if !report.trials.is_empty() {
        out.push_str(&format!("trials       {}\n", report.trials.len()));
    }
    out
}
