//! Independent reference implementations used as test oracles. None of these
//! go through the crate's Fourier-domain code paths.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.gen_range(-1.0..1.0))
}

pub fn random_complex(r: &mut ChaCha8Rng, k: usize, h: usize, n: usize) -> Array3<Complex64> {
    Array3::from_shape_fn((k, h, n), |_| {
        Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))
    })
}

/// Quadruple-loop circular convolution with the kernel anchored at the origin.
pub fn direct_conv(kernel: ArrayView2<f64>, map: ArrayView2<f64>) -> Array2<f64> {
    let (k1, k2) = kernel.dim();
    let (h, n) = map.dim();
    let mut out = Array2::zeros((h, n));
    for i in 0..h {
        for j in 0..n {
            let mut acc = 0.0;
            for a in 0..k1 {
                for b in 0..k2 {
                    acc += kernel[[a, b]] * map[[(i + h - a) % h, (j + n - b) % n]];
                }
            }
            out[[i, j]] = acc;
        }
    }
    out
}

pub fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs3(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs_c(a: &Array3<Complex64>, b: &Array3<Complex64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).norm()))
}

/// Dense `(I + λ A) y = r` at each frequency, where `A` is supplied per
/// frequency as a `K x K` matrix.
pub fn dense_per_frequency<F>(rhs: &Array3<Complex64>, lambda: f64, gram: F) -> Array3<Complex64>
where
    F: Fn(usize, usize) -> DMatrix<Complex64>,
{
    let (k, h, n) = rhs.dim();
    let mut out = Array3::zeros((k, h, n));
    for i in 0..h {
        for j in 0..n {
            let a = gram(i, j);
            let m = DMatrix::<Complex64>::identity(k, k) + a * Complex64::new(lambda, 0.0);
            let r = DVector::from_iterator(k, (0..k).map(|kk| rhs[[kk, i, j]]));
            let y = m.lu().solve(&r).expect("nonsingular");
            for kk in 0..k {
                out[[kk, i, j]] = y[kk];
            }
        }
    }
    out
}

/// Dense matrix of the map `e ↦ Σ_k d_k ⊛ e_k` with `e` flattened as
/// `(k, i, j)` row-major, built column by column from the direct convolution.
pub fn conv_operator(kernels: &Array3<f64>, shape: (usize, usize)) -> DMatrix<f64> {
    let (k, _, _) = kernels.dim();
    let (h, n) = shape;
    let p = h * n;
    let mut d = DMatrix::zeros(p, k * p);
    for kk in 0..k {
        let kernel = kernels.index_axis(ndarray::Axis(0), kk);
        for f in 0..p {
            let mut unit = Array2::zeros((h, n));
            unit[[f / n, f % n]] = 1.0;
            let col = direct_conv(kernel, unit.view());
            for (row, v) in col.iter().enumerate() {
                d[(row, kk * p + f)] = *v;
            }
        }
    }
    d
}

/// Dense matrix of `d ↦ Σ_k e_k ⊛ d_k` for padded kernels `d`.
pub fn map_operator(maps: &Array3<f64>) -> DMatrix<f64> {
    let (_, h, n) = maps.dim();
    // convolution is commutative, so the same construction applies with the
    // maps playing the role of full-size kernels
    conv_operator(maps, (h, n))
}

pub fn flatten3(a: &Array3<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len(), a.iter().copied())
}

pub fn unflatten3(v: &DVector<f64>, dim: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_vec(dim, v.iter().copied().collect()).unwrap()
}

pub fn flatten2(a: &Array2<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len(), a.iter().copied())
}

/// `argmin_e λ/2 ‖De − x‖² + ½ ‖e − p‖²` by dense normal equations.
pub fn dense_prox_fit(d: &DMatrix<f64>, x: &DVector<f64>, p: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let n = d.ncols();
    let lhs = d.transpose() * d * lambda + DMatrix::identity(n, n);
    let rhs = d.transpose() * x * lambda + p;
    lhs.lu().solve(&rhs).expect("positive definite")
}

pub fn soft(v: f64, a: f64) -> f64 {
    if v > a {
        v - a
    } else if v < -a {
        v + a
    } else {
        0.0
    }
}

/// Accelerated proximal gradient on `½ ‖De − x‖² + η ‖e‖₁`; returns the
/// iterate and its objective.
pub fn fista(d: &DMatrix<f64>, x: &DVector<f64>, eta: f64, iters: usize) -> (DVector<f64>, f64) {
    let gram = d.transpose() * d;
    let dtx = d.transpose() * x;
    // Lipschitz constant by power iteration
    let mut v = DVector::from_element(gram.ncols(), 1.0);
    let mut lip = 0.0;
    for _ in 0..200 {
        let w = &gram * &v;
        lip = w.norm();
        if lip == 0.0 {
            break;
        }
        v = w / lip;
    }
    let step = 1.0 / (lip * 1.0001).max(1e-12);
    let n = gram.ncols();
    let mut e = DVector::zeros(n);
    let mut y = e.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let grad = &gram * &y - &dtx;
        let z = &y - grad * step;
        let e_next = z.map(|v| soft(v, eta * step));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &e_next + (&e_next - &e) * ((t - 1.0) / t_next);
        e = e_next;
        t = t_next;
    }
    let obj = coding_objective(d, x, &e, eta);
    (e, obj)
}

pub fn coding_objective(d: &DMatrix<f64>, x: &DVector<f64>, e: &DVector<f64>, eta: f64) -> f64 {
    0.5 * (d * e - x).norm_squared() + eta * e.iter().map(|v| v.abs()).sum::<f64>()
}

/// Brute-force Relief: full sort of every candidate neighbour list.
pub fn relief_oracle(rows: &Array2<f64>, labels: &[bool], r: usize) -> Vec<f64> {
    let (m, d) = rows.dim();
    let mut w = vec![0.0; d];
    for i in 0..m {
        let mut same = Vec::new();
        let mut other = Vec::new();
        for j in 0..m {
            if j == i {
                continue;
            }
            let mut dist = 0.0;
            for f in 0..d {
                dist += (rows[[i, f]] - rows[[j, f]]).powi(2);
            }
            if labels[j] == labels[i] {
                same.push((dist, j));
            } else {
                other.push((dist, j));
            }
        }
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1));
        same.sort_by(order);
        other.sort_by(order);
        for f in 0..d {
            let mut contrib = 0.0;
            for &(_, j) in same.iter().take(r) {
                contrib -= (rows[[i, f]] - rows[[j, f]]).powi(2);
            }
            for &(_, j) in other.iter().take(r) {
                contrib += (rows[[i, f]] - rows[[j, f]]).powi(2);
            }
            w[f] += contrib;
        }
    }
    w
}

/// Exhaustive active-set solution of the box-constrained SVM dual
/// `min ½ αᵀQα − Σα, 0 ≤ α ≤ C` with `Q_ij = y_i y_j (x_i·x_j + 1)`.
pub fn svm_dual_oracle(x: &Array2<f64>, y: &[f64], c: f64) -> f64 {
    let m = y.len();
    let q = DMatrix::from_fn(m, m, |i, j| {
        let dot: f64 = (0..x.ncols()).map(|f| x[[i, f]] * x[[j, f]]).sum();
        y[i] * y[j] * (dot + 1.0)
    });
    let objective = |a: &DVector<f64>| 0.5 * (a.transpose() * &q * a)[(0, 0)] - a.sum();
    let mut best = f64::INFINITY;
    let combos = 3usize.pow(m as u32);
    for code in 0..combos {
        // 0 = at lower bound, 1 = at upper bound, 2 = free
        let mut state = vec![0u8; m];
        let mut c_code = code;
        for s in state.iter_mut() {
            *s = (c_code % 3) as u8;
            c_code /= 3;
        }
        let free: Vec<usize> = (0..m).filter(|&i| state[i] == 2).collect();
        let mut a = DVector::from_fn(m, |i, _| if state[i] == 1 { c } else { 0.0 });
        if !free.is_empty() {
            let qff = DMatrix::from_fn(free.len(), free.len(), |i, j| q[(free[i], free[j])]);
            let rhs = DVector::from_fn(free.len(), |i, _| {
                let fi = free[i];
                1.0 - (0..m)
                    .filter(|&j| state[j] == 1)
                    .map(|j| q[(fi, j)] * c)
                    .sum::<f64>()
            });
            let lu = qff.clone().lu();
            if lu.determinant().abs() < 1e-10 {
                continue;
            }
            let sol = lu.solve(&rhs).unwrap();
            if sol.iter().any(|&v| v < -1e-12 || v > c + 1e-12) {
                continue;
            }
            for (i, &fi) in free.iter().enumerate() {
                a[fi] = sol[i].clamp(0.0, c);
            }
        }
        best = best.min(objective(&a));
    }
    best
}
