//! Primitive operators of the convolutional sparse coding solvers.
//!
//! All convolutions are circular on the block grid. Kernels are zero-padded
//! to the block shape with their support anchored at the top-left corner.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Dimension, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;

/// One subject's `H0 x N` feature matrix, treated as a 2-D image.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectBlock(Array2<f64>);

impl SubjectBlock {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (h, n) = values.dim();
        if h == 0 || n == 0 {
            return Err(Error::invalid("subject block must be at least 1x1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("subject block contains non-finite values"));
        }
        Ok(SubjectBlock(values))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// `K` feature maps, each with the shape of the coded block. Stored as a
/// `(K, H0, N)` array.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapStack {
    maps: Array3<f64>,
}

impl FeatureMapStack {
    pub fn new(maps: Array3<f64>) -> Result<Self> {
        if maps.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature maps contain non-finite values"));
        }
        Ok(FeatureMapStack { maps })
    }

    pub fn zeros(k: usize, shape: (usize, usize)) -> Self {
        FeatureMapStack {
            maps: Array3::zeros((k, shape.0, shape.1)),
        }
    }

    pub(crate) fn from_raw(maps: Array3<f64>) -> Self {
        FeatureMapStack { maps }
    }

    pub fn len(&self) -> usize {
        self.maps.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn map_shape(&self) -> (usize, usize) {
        let (_, h, n) = self.maps.dim();
        (h, n)
    }

    pub fn map(&self, k: usize) -> ArrayView2<'_, f64> {
        self.maps.slice(s![k, .., ..])
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.maps
    }

    pub fn into_array(self) -> Array3<f64> {
        self.maps
    }
}

/// Binary mask selecting a `k1 x k2` kernel support anchored at the origin of
/// an `H0 x N` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportMask {
    pub k1: usize,
    pub k2: usize,
    pub rows: usize,
    pub cols: usize,
}

impl SupportMask {
    pub fn new(support: (usize, usize), grid: (usize, usize)) -> Result<Self> {
        let (k1, k2) = support;
        let (rows, cols) = grid;
        if k1 == 0 || k2 == 0 {
            return Err(Error::invalid("kernel support must be at least 1x1"));
        }
        if k1 > rows || k2 > cols {
            return Err(Error::invalid(format!(
                "kernel support {k1}x{k2} does not fit in {rows}x{cols} grid"
            )));
        }
        Ok(SupportMask { k1, k2, rows, cols })
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.k1 && j < self.k2
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows, self.cols), |(i, j)| {
            if self.contains(i, j) {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// A bank of `K` convolution kernels of size `k1 x k2`, each inside the unit
/// 2-norm ball, together with the block shape they are padded to.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    kernels: Array3<f64>,
    padded_shape: (usize, usize),
}

/// Slack allowed on the unit-norm constraint when a bank is constructed.
pub const NORM_SLACK: f64 = 1e-9;

impl KernelBank {
    pub fn new(kernels: Array3<f64>, padded_shape: (usize, usize)) -> Result<Self> {
        let (k, k1, k2) = kernels.dim();
        if k == 0 {
            return Err(Error::invalid("kernel bank needs at least one kernel"));
        }
        SupportMask::new((k1, k2), padded_shape)?;
        if kernels.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("kernel bank contains non-finite values"));
        }
        for i in 0..k {
            let norm = l2(kernels.slice(s![i, .., ..]));
            if norm > 1.0 + NORM_SLACK {
                return Err(Error::invalid(format!(
                    "kernel {i} has norm {norm} outside the unit ball"
                )));
            }
        }
        Ok(KernelBank {
            kernels,
            padded_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.kernels.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn support(&self) -> (usize, usize) {
        let (_, k1, k2) = self.kernels.dim();
        (k1, k2)
    }

    pub fn padded_shape(&self) -> (usize, usize) {
        self.padded_shape
    }

    pub fn support_mask(&self) -> SupportMask {
        let (k1, k2) = self.support();
        SupportMask {
            k1,
            k2,
            rows: self.padded_shape.0,
            cols: self.padded_shape.1,
        }
    }

    pub fn kernel(&self, k: usize) -> ArrayView2<'_, f64> {
        self.kernels.slice(s![k, .., ..])
    }

    pub fn kernels(&self) -> &Array3<f64> {
        &self.kernels
    }

    /// Kernels zero-padded to the block shape, as a `(K, H0, N)` array.
    pub fn padded(&self) -> Array3<f64> {
        pad_stack(self.kernels.view(), self.padded_shape)
    }

    /// Spectra of the padded kernels.
    pub fn spectra(&self) -> Array3<Complex64> {
        let (h, n) = self.padded_shape;
        Fft2::for_shape(h, n).forward_stack(&self.padded())
    }

    /// Builds a bank from padded `(K, H0, N)` kernels by cropping them to
    /// their support.
    pub fn from_padded(padded: &Array3<f64>, support: (usize, usize)) -> Result<Self> {
        let (_, h, n) = padded.dim();
        SupportMask::new(support, (h, n))?;
        let cropped = padded.slice(s![.., ..support.0, ..support.1]).to_owned();
        KernelBank::new(cropped, (h, n))
    }
}

pub(crate) fn l2<D: Dimension>(a: ndarray::ArrayView<'_, f64, D>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Zero-pads a kernel to `shape`, anchored at the top-left corner.
pub fn pad_kernel(kernel: ArrayView2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let (k1, k2) = kernel.dim();
    let mut out = Array2::zeros(shape);
    out.slice_mut(s![..k1, ..k2]).assign(&kernel);
    out
}

pub(crate) fn pad_stack(kernels: ArrayView3<f64>, shape: (usize, usize)) -> Array3<f64> {
    let (k, k1, k2) = kernels.dim();
    let mut out = Array3::zeros((k, shape.0, shape.1));
    out.slice_mut(s![.., ..k1, ..k2]).assign(&kernels);
    out
}

/// Circular 2-D convolution of a zero-padded kernel with a map.
pub fn conv2_circular(kernel: ArrayView2<f64>, map: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (k1, k2) = kernel.dim();
    let (h, n) = map.dim();
    if k1 > h || k2 > n {
        return Err(Error::invalid(format!(
            "kernel {k1}x{k2} larger than map {h}x{n}"
        )));
    }
    if h == 0 || n == 0 {
        return Ok(Array2::zeros((h, n)));
    }
    let fft = Fft2::for_shape(h, n);
    let mut prod = fft.forward(pad_kernel(kernel, (h, n)).view());
    let spec = fft.forward(map);
    Zip::from(&mut prod).and(&spec).for_each(|a, &b| *a *= b);
    Ok(fft.inverse_real(prod))
}

#[inline]
pub fn shrink(x: f64, alpha: f64) -> f64 {
    if x > alpha {
        x - alpha
    } else if x < -alpha {
        x + alpha
    } else {
        0.0
    }
}

/// Elementwise soft threshold, the proximal operator of `alpha * |.|_1`.
pub fn soft_threshold<D: Dimension>(
    x: &ndarray::Array<f64, D>,
    alpha: f64,
) -> Result<ndarray::Array<f64, D>> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!("threshold must be >= 0, got {alpha}")));
    }
    Ok(x.mapv(|v| shrink(v, alpha)))
}

/// Masks `z` to the kernel support and projects the result onto the unit
/// 2-norm ball.
pub fn project_kernel(z: ArrayView2<f64>, support: &SupportMask) -> Result<Array2<f64>> {
    if z.dim() != (support.rows, support.cols) {
        return Err(Error::shape(format!(
            "projection input {:?} does not match mask {}x{}",
            z.dim(),
            support.rows,
            support.cols
        )));
    }
    let mut out = Array2::zeros(z.dim());
    project_into(z, support, out.view_mut());
    Ok(out)
}

pub(crate) fn project_into(
    z: ArrayView2<f64>,
    support: &SupportMask,
    mut out: ndarray::ArrayViewMut2<f64>,
) {
    out.fill(0.0);
    let (k1, k2) = (support.k1, support.k2);
    let block = z.slice(s![..k1, ..k2]);
    let norm = l2(block);
    let mut scale = if norm > 1.0 { 1.0 / norm } else { 1.0 };
    let mut dst = out.slice_mut(s![..k1, ..k2]);
    dst.assign(&block.mapv(|v| v * scale));
    // rounding in 1/norm can leave the result an ulp outside the ball
    while l2(dst.view()) > 1.0 {
        scale *= 1.0 - f64::EPSILON;
        dst.assign(&block.mapv(|v| v * scale));
    }
}

/// Sum of `d_k ⊛ e_k` over the bank, computed in the Fourier domain.
pub fn reconstruct(kernels: &KernelBank, maps: &FeatureMapStack) -> Result<Array2<f64>> {
    if maps.len() != kernels.len() {
        return Err(Error::shape(format!(
            "{} maps for {} kernels",
            maps.len(),
            kernels.len()
        )));
    }
    if maps.map_shape() != kernels.padded_shape() {
        return Err(Error::shape(format!(
            "maps {:?} vs kernel grid {:?}",
            maps.map_shape(),
            kernels.padded_shape()
        )));
    }
    let (h, n) = kernels.padded_shape();
    let fft = Fft2::for_shape(h, n);
    let ks = kernels.spectra();
    let es = fft.forward_stack(maps.as_array());
    let mut acc = Array2::<Complex64>::zeros((h, n));
    for k in 0..kernels.len() {
        Zip::from(&mut acc)
            .and(ks.slice(s![k, .., ..]))
            .and(es.slice(s![k, .., ..]))
            .for_each(|a, &d, &e| *a += d * e);
    }
    Ok(fft.inverse_real(acc))
}

/// `½ Σ_m ‖x_m − Σ_k d_k ⊛ e_{m,k}‖² + η Σ_m Σ_k ‖e_{m,k}‖₁`.
pub fn csc_objective(
    xs: &[SubjectBlock],
    kernels: &KernelBank,
    maps: &[FeatureMapStack],
    eta: f64,
) -> Result<f64> {
    if xs.len() != maps.len() {
        return Err(Error::shape(format!(
            "{} blocks but {} map stacks",
            xs.len(),
            maps.len()
        )));
    }
    let mut total = 0.0;
    for (x, e) in xs.iter().zip(maps) {
        if x.dim() != kernels.padded_shape() {
            return Err(Error::shape(format!(
                "block {:?} vs kernel grid {:?}",
                x.dim(),
                kernels.padded_shape()
            )));
        }
        let recon = reconstruct(kernels, e)?;
        let fit: f64 = Zip::from(x.values())
            .and(&recon)
            .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b));
        let l1: f64 = e.as_array().iter().map(|v| v.abs()).sum();
        total += 0.5 * fit + eta * l1;
    }
    Ok(total)
}

fn check_spectra(a: &Array3<Complex64>, b: &Array3<Complex64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "{what}: spectra {:?} vs rhs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Rank-one per-frequency system `I_K + λ d̂ d̂ᴴ` with its scalar
/// denominators precomputed.
#[derive(Debug, Clone)]
pub struct CodingLemma {
    d_hat: Array3<Complex64>,
    // λ / (1 + λ Σ_k |d̂_k|²) per frequency
    gain: Array2<f64>,
}

impl CodingLemma {
    pub fn new(d_hat: Array3<Complex64>, lambda: f64) -> Self {
        let (k, h, n) = d_hat.dim();
        let gain = Array2::from_shape_fn((h, n), |(i, j)| {
            let energy: f64 = (0..k).map(|kk| d_hat[[kk, i, j]].norm_sqr()).sum();
            lambda / (1.0 + lambda * energy)
        });
        CodingLemma { d_hat, gain }
    }

    pub fn apply(&self, rhs: &Array3<Complex64>) -> Result<Array3<Complex64>> {
        check_spectra(&self.d_hat, rhs, "coding solve")?;
        let mut out = rhs.clone();
        self.apply_in_place(&mut out);
        Ok(out)
    }

    pub(crate) fn apply_in_place(&self, r: &mut Array3<Complex64>) {
        let (k, h, n) = self.d_hat.dim();
        for i in 0..h {
            for j in 0..n {
                let mut proj = Complex64::default();
                for kk in 0..k {
                    proj += self.d_hat[[kk, i, j]].conj() * r[[kk, i, j]];
                }
                let coef = proj * self.gain[[i, j]];
                for kk in 0..k {
                    r[[kk, i, j]] -= self.d_hat[[kk, i, j]] * coef;
                }
            }
        }
    }
}

/// Solves `(I_K + λ d̂ d̂ᴴ) y = r` independently at every frequency using the
/// rank-one inversion lemma:
/// `y = r − λ d̂ (d̂ᴴ r) / (1 + λ Σ_k |d̂_k|²)`.
pub fn apply_inv_lemma_coding(
    d_hat: &Array3<Complex64>,
    rhs: &Array3<Complex64>,
    lambda: f64,
) -> Result<Array3<Complex64>> {
    check_spectra(d_hat, rhs, "coding solve")?;
    CodingLemma::new(d_hat.clone(), lambda).apply(rhs)
}

/// Per-frequency factorisation of `I_K + λ Êᴴ Ê` for `M` stacks of `K` map
/// spectra. When `M < K` the inversion lemma reduces each solve to the
/// `M x M` system `I_M + λ Ê Êᴴ`; otherwise the `K x K` system is factored
/// directly. Factors are Hermitian positive definite, so Cholesky is used.
#[derive(Debug, Clone)]
pub struct DictSystem {
    k: usize,
    m: usize,
    shape: (usize, usize),
    lambda: f64,
    reduced: bool,
    // frequency-major: Ê rows for each frequency, m*k entries
    e_rows: Vec<Complex64>,
    // frequency-major Cholesky factors, dim*dim entries each
    factors: Vec<Complex64>,
}

impl DictSystem {
    pub fn new(e_hat: &[Array3<Complex64>], lambda: f64) -> Result<Self> {
        let m = e_hat.len();
        if m == 0 {
            return Err(Error::invalid("dictionary solve needs at least one map stack"));
        }
        let (k, h, n) = e_hat[0].dim();
        if e_hat.iter().any(|e| e.dim() != (k, h, n)) {
            return Err(Error::shape("map spectra differ in shape"));
        }
        let p = h * n;
        let reduced = m < k;
        let dim = if reduced { m } else { k };
        let mut e_rows = vec![Complex64::default(); p * m * k];
        for (mi, e) in e_hat.iter().enumerate() {
            let flat = e.as_standard_layout();
            let flat = flat.as_slice().expect("standard layout");
            for kk in 0..k {
                for f in 0..p {
                    e_rows[f * m * k + mi * k + kk] = flat[kk * p + f];
                }
            }
        }
        let mut factors = vec![Complex64::default(); p * dim * dim];
        for f in 0..p {
            let rows = &e_rows[f * m * k..(f + 1) * m * k];
            let a = &mut factors[f * dim * dim..(f + 1) * dim * dim];
            if reduced {
                // I_M + λ Ê Êᴴ
                for r in 0..m {
                    for c in 0..=r {
                        let mut acc = Complex64::default();
                        for kk in 0..k {
                            acc += rows[r * k + kk] * rows[c * k + kk].conj();
                        }
                        a[r * dim + c] = acc * lambda;
                    }
                    a[r * dim + r] += 1.0;
                }
            } else {
                // I_K + λ Êᴴ Ê
                for r in 0..k {
                    for c in 0..=r {
                        let mut acc = Complex64::default();
                        for mi in 0..m {
                            acc += rows[mi * k + r].conj() * rows[mi * k + c];
                        }
                        a[r * dim + c] = acc * lambda;
                    }
                    a[r * dim + r] += 1.0;
                }
            }
            assert!(
                cholesky_in_place(a, dim),
                "dictionary system not positive definite (lambda = {lambda})"
            );
        }
        Ok(DictSystem {
            k,
            m,
            shape: (h, n),
            lambda,
            reduced,
            e_rows,
            factors,
        })
    }

    pub fn is_reduced(&self) -> bool {
        self.reduced
    }

    pub fn solve(&self, rhs: &Array3<Complex64>) -> Result<Array3<Complex64>> {
        let (k, h, n) = rhs.dim();
        if k != self.k || (h, n) != self.shape {
            return Err(Error::shape(format!(
                "rhs {:?} vs system ({}, {}, {})",
                rhs.dim(),
                self.k,
                self.shape.0,
                self.shape.1
            )));
        }
        let p = h * n;
        let rhs = rhs.as_standard_layout();
        let flat = rhs.as_slice().expect("standard layout");
        let mut out = vec![Complex64::default(); k * p];
        let (m, lambda) = (self.m, self.lambda);
        let dim = if self.reduced { m } else { k };
        let mut r = vec![Complex64::default(); k];
        let mut t = vec![Complex64::default(); dim];
        for f in 0..p {
            for kk in 0..k {
                r[kk] = flat[kk * p + f];
            }
            let rows = &self.e_rows[f * m * k..(f + 1) * m * k];
            let l = &self.factors[f * dim * dim..(f + 1) * dim * dim];
            if self.reduced {
                // y = r − λ Êᴴ (I + λ Ê Êᴴ)⁻¹ Ê r
                for mi in 0..m {
                    t[mi] = (0..k).map(|kk| rows[mi * k + kk] * r[kk]).sum();
                }
                cholesky_solve(l, dim, &mut t);
                for kk in 0..k {
                    let corr: Complex64 = (0..m).map(|mi| rows[mi * k + kk].conj() * t[mi]).sum();
                    out[kk * p + f] = r[kk] - corr * lambda;
                }
            } else {
                t.copy_from_slice(&r);
                cholesky_solve(l, dim, &mut t);
                for kk in 0..k {
                    out[kk * p + f] = t[kk];
                }
            }
        }
        Ok(Array3::from_shape_vec((k, h, n), out).expect("shape"))
    }
}

/// Solves `(I_K + λ Êᴴ Ê) y = r` per frequency, where row `m` of `Ê` holds the
/// `K` map spectra of block `m`.
pub fn apply_inv_lemma_dict(
    e_hat: &[Array3<Complex64>],
    rhs: &Array3<Complex64>,
    lambda: f64,
) -> Result<Array3<Complex64>> {
    DictSystem::new(e_hat, lambda)?.solve(rhs)
}

/// In-place lower Cholesky factorisation of a Hermitian matrix whose lower
/// triangle is stored row-major in `a`. Returns false if not positive definite.
fn cholesky_in_place(a: &mut [Complex64], n: usize) -> bool {
    for j in 0..n {
        let mut diag = a[j * n + j].re;
        for p in 0..j {
            diag -= a[j * n + p].norm_sqr();
        }
        if !(diag > 0.0) {
            return false;
        }
        let djj = diag.sqrt();
        a[j * n + j] = Complex64::new(djj, 0.0);
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for p in 0..j {
                v -= a[i * n + p] * a[j * n + p].conj();
            }
            a[i * n + j] = v / djj;
        }
    }
    true
}

/// Solves `L Lᴴ x = b` in place.
fn cholesky_solve(l: &[Complex64], n: usize, b: &mut [Complex64]) {
    for i in 0..n {
        let mut v = b[i];
        for p in 0..i {
            v -= l[i * n + p] * b[p];
        }
        b[i] = v / l[i * n + i].re;
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for p in i + 1..n {
            v -= l[p * n + i].conj() * b[p];
        }
        b[i] = v / l[i * n + i].re;
    }
}
