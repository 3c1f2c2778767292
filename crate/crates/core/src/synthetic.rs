//! Planted two-class fixtures built from known convolutional textures.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::SourceDomain;
use crate::error::Result;
use crate::ops::{conv2_circular, SubjectBlock};
use crate::transfer::{Label, TargetDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub subjects: usize,
    pub h0: usize,
    pub n: usize,
    pub kernel_size: (usize, usize),
    /// Probability that a map entry carries a spike.
    pub density: f64,
    /// Ratio of texture power to additive white noise.
    pub snr_db: f64,
    /// Blocks in the matched source domain.
    pub source_blocks: usize,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            subjects: 20,
            h0: 13,
            n: 26,
            kernel_size: (3, 3),
            density: 0.1,
            snr_db: 30.0,
            source_blocks: 16,
            seed: 7,
        }
    }
}

/// The two generating textures: a horizontal and a vertical ridge, unit norm.
pub fn planted_kernels(size: (usize, usize)) -> [Array2<f64>; 2] {
    let (k1, k2) = size;
    let ridge = |i: usize, j: usize, horizontal: bool| {
        let (pos, len) = if horizontal { (i, k1) } else { (j, k2) };
        let centre = (len as f64 - 1.0) / 2.0;
        let t = (pos as f64 - centre) / (len as f64 / 2.0).max(1.0);
        1.0 - 2.0 * t * t
    };
    let unit = |mut a: Array2<f64>| {
        let mean = a.mean().unwrap_or(0.0);
        a.mapv_inplace(|v| v - mean);
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        a.mapv(|v| v / norm)
    };
    [
        unit(Array2::from_shape_fn(size, |(i, j)| ridge(i, j, true))),
        unit(Array2::from_shape_fn(size, |(i, j)| ridge(i, j, false))),
    ]
}

/// Spike layout shared by every block of one class.
fn class_template(spec: &PlantedSpec, rng: &mut ChaCha8Rng) -> Array2<bool> {
    Array2::from_shape_fn((spec.h0, spec.n), |_| rng.gen_bool(spec.density))
}

/// One block: the class template with per-subject dropout and amplitudes,
/// a few stray spikes, convolved with the class texture plus white noise.
fn textured_block(
    kernel: &Array2<f64>,
    template: &Array2<bool>,
    spec: &PlantedSpec,
    rng: &mut ChaCha8Rng,
) -> Result<SubjectBlock> {
    let map = template.mapv(|on| {
        let keep = if on { rng.gen_bool(KEEP) } else { rng.gen_bool(STRAY) };
        if keep {
            rng.gen_range(0.5..1.5)
        } else {
            0.0
        }
    });
    let clean = conv2_circular(kernel.view(), map.view())?;
    let power = clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64;
    let sigma = (power / 10f64.powf(spec.snr_db / 10.0)).sqrt();
    let noisy = clean.mapv(|v| {
        let z: f64 = StandardNormal.sample(rng);
        v + sigma * z
    });
    SubjectBlock::new(noisy)
}

const KEEP: f64 = 0.8;
const STRAY: f64 = 0.02;

struct Generator {
    kernels: [Array2<f64>; 2],
    templates: [Array2<bool>; 2],
}

impl Generator {
    fn new(spec: &PlantedSpec) -> Generator {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let templates = [class_template(spec, &mut rng), class_template(spec, &mut rng)];
        Generator {
            kernels: planted_kernels(spec.kernel_size),
            templates,
        }
    }

    fn block(&self, class: usize, spec: &PlantedSpec, rng: &mut ChaCha8Rng) -> Result<SubjectBlock> {
        textured_block(&self.kernels[class], &self.templates[class], spec, rng)
    }
}

/// Target with alternating labels: positive subjects carry the first
/// texture and layout, negative subjects the second.
pub fn planted_target(spec: &PlantedSpec) -> Result<TargetDataset> {
    let gen = Generator::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let mut blocks = Vec::with_capacity(spec.subjects);
    let mut labels = Vec::with_capacity(spec.subjects);
    for i in 0..spec.subjects {
        let label = if i % 2 == 0 { Label::Positive } else { Label::Negative };
        blocks.push(gen.block(usize::from(label == Label::Negative), spec, &mut rng)?);
        labels.push(label);
    }
    let ids = (0..spec.subjects).map(|i| format!("S{:02}", i + 1)).collect();
    TargetDataset::new(blocks, labels, ids)
}

/// Unlabelled source blocks drawn from both classes in turn.
pub fn planted_source(spec: &PlantedSpec) -> Result<SourceDomain> {
    let gen = Generator::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(2));
    let blocks = (0..spec.source_blocks)
        .map(|i| gen.block(i % 2, spec, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(SourceDomain {
        blocks,
        h0: spec.h0,
        n: spec.n,
    })
}

/// Both generating textures as a `(2, k1, k2)` array.
pub fn planted_bank_array(size: (usize, usize)) -> Array3<f64> {
    let [a, b] = planted_kernels(size);
    let mut out = Array3::zeros((2, size.0, size.1));
    out.index_axis_mut(ndarray::Axis(0), 0).assign(&a);
    out.index_axis_mut(ndarray::Axis(0), 1).assign(&b);
    out
}
