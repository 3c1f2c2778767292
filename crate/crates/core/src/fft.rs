//! Two-dimensional DFT on row-major grids.
//!
//! Convention used everywhere in the crate: the forward transform is
//! unnormalised and the inverse carries the full `1 / (rows * cols)` factor,
//! so the circular convolution theorem holds without extra scaling:
//! `fft(a ⊛ b) = fft(a) · fft(b)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

fn plan_cache() -> &'static Mutex<HashMap<(usize, usize), Fft2>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Fft2>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty transform grid");
        let mut planner = FftPlanner::new();
        Fft2 {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    /// Shared plan for a grid shape.
    pub fn for_shape(rows: usize, cols: usize) -> Self {
        let mut cache = plan_cache().lock().expect("fft plan cache poisoned");
        cache
            .entry((rows, cols))
            .or_insert_with(|| Fft2::new(rows, cols))
            .clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<Complex64> {
        assert_eq!(x.dim(), (self.rows, self.cols), "fft input shape");
        let mut out = x.mapv(|v| Complex64::new(v, 0.0));
        self.forward_in_place(&mut out);
        out
    }

    pub fn forward_in_place(&self, x: &mut Array2<Complex64>) {
        assert_eq!(x.dim(), (self.rows, self.cols), "fft input shape");
        standardize(x);
        self.process(x.as_slice_mut().expect("standard layout"), false);
    }

    /// Inverse transform including the `1 / (rows * cols)` factor.
    pub fn inverse_in_place(&self, x: &mut Array2<Complex64>) {
        assert_eq!(x.dim(), (self.rows, self.cols), "fft input shape");
        standardize(x);
        self.process(x.as_slice_mut().expect("standard layout"), true);
    }

    /// Inverse transform of a conjugate-symmetric spectrum; the imaginary
    /// residue is dropped.
    pub fn inverse_real(&self, mut x: Array2<Complex64>) -> Array2<f64> {
        self.inverse_in_place(&mut x);
        x.mapv(|v| v.re)
    }

    /// Forward transform of every `rows x cols` slice of a `(K, rows, cols)` stack.
    pub fn forward_stack(&self, x: &Array3<f64>) -> Array3<Complex64> {
        let mut out = x.mapv(|v| Complex64::new(v, 0.0));
        self.forward_stack_in_place(&mut out);
        out
    }

    pub fn forward_stack_in_place(&self, x: &mut Array3<Complex64>) {
        self.check_stack(x);
        standardize(x);
        for chunk in x.as_slice_mut().expect("standard layout").chunks_exact_mut(self.len()) {
            self.process(chunk, false);
        }
    }

    pub fn inverse_stack_real(&self, mut x: Array3<Complex64>) -> Array3<f64> {
        self.check_stack(&x);
        standardize(&mut x);
        for chunk in x.as_slice_mut().expect("standard layout").chunks_exact_mut(self.len()) {
            self.process(chunk, true);
        }
        x.mapv(|v| v.re)
    }

    fn check_stack<T>(&self, x: &Array3<T>) {
        let (_, r, c) = x.dim();
        assert_eq!((r, c), (self.rows, self.cols), "fft stack shape");
    }

    fn process(&self, data: &mut [Complex64], inverse: bool) {
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(data);

        let mut t = vec![Complex64::default(); self.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[c * self.rows + r] = data[r * self.cols + c];
            }
        }
        col.process(&mut t);
        let scale = if inverse { 1.0 / self.len() as f64 } else { 1.0 };
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[r * self.cols + c] = t[c * self.rows + r] * scale;
            }
        }
    }
}

fn standardize<D: ndarray::Dimension>(x: &mut ndarray::Array<Complex64, D>) {
    if !x.is_standard_layout() {
        *x = x.as_standard_layout().to_owned();
    }
}
