//! ADMM solvers for the two alternating subproblems of convolutional sparse
//! coding: feature-map coding with the kernels fixed and dictionary learning
//! with the maps fixed.
//!
//! Both subproblems are provided in two forms. The relaxed form
//! ([`CodingSystem::step`], [`DictProblem::step`]) computes a trial point
//! `(b̄, ū)` and moves the split/dual pair towards it by the relaxation
//! factor `γ`. The as-written form ([`CodingSystem::step_unrelaxed`],
//! [`DictProblem::step_unrelaxed`]) is classical ADMM with the dual update
//! after the proximal step. Because the data-fit proximal map is affine, the
//! two forms at `γ = 1` generate the same split-variable sequence once the
//! starting states are related by [`CodingSystem::unrelaxed_start`].

use ndarray::{s, Array3, Zip};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::SourceDomain;
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::ops::{
    csc_objective, project_into, shrink, CodingLemma, DictSystem, FeatureMapStack,
    KernelBank, SubjectBlock, SupportMask,
};
use crate::par;

/// Parameters shared by the coding and dictionary solvers.
///
/// `lambda` weighs the data-fit term against the splitting penalty and
/// `alpha` is the soft-threshold level, so the sparse weight of the
/// underlying objective is `eta = alpha / lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub outer_iters: usize,
    pub coding_iters: usize,
    pub dict_iters: usize,
    pub residual_tol: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 1.0,
            alpha: 0.05,
            gamma: 1.0,
            outer_iters: 100,
            coding_iters: 10,
            dict_iters: 10,
            residual_tol: 0.0,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 2.0) {
            return Err(Error::config(format!("gamma must be in (0, 2], got {}", self.gamma)));
        }
        if self.outer_iters == 0 || self.coding_iters == 0 || self.dict_iters == 0 {
            return Err(Error::config("iteration counts must be >= 1"));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(Error::config("residual_tol must be >= 0"));
        }
        Ok(())
    }

    /// Weight of the l1 term in the coding objective.
    pub fn eta(&self) -> f64 {
        self.alpha / self.lambda
    }
}

/// Coding iterate `(e, b, u)`, each a `(K, H0, N)` array.
#[derive(Debug, Clone, PartialEq)]
pub struct CodingState {
    pub e: Array3<f64>,
    pub b: Array3<f64>,
    pub u: Array3<f64>,
}

impl CodingState {
    pub fn zeros(k: usize, shape: (usize, usize)) -> Self {
        let z = Array3::zeros((k, shape.0, shape.1));
        CodingState {
            e: z.clone(),
            b: z.clone(),
            u: z,
        }
    }
}

/// Dictionary iterate `(d, c, v)` over padded `(K, H0, N)` kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct DictState {
    pub d: Array3<f64>,
    pub c: Array3<f64>,
    pub v: Array3<f64>,
}

impl DictState {
    /// `d = c = kernels`, `v = 0`.
    pub fn from_kernels(bank: &KernelBank) -> Self {
        let padded = bank.padded();
        DictState {
            d: padded.clone(),
            v: Array3::zeros(padded.dim()),
            c: padded,
        }
    }
}

/// Primal (`max |ē − b̄|`) and dual (`max |b⁺ − b|`) residuals of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual)
    }
}

fn max_abs_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    Zip::from(a)
        .and(b)
        .fold(0.0f64, |m, &x, &y| m.max((x - y).abs()))
}

// old − γ (old − bar), taken exactly as `bar` when γ = 1
fn relax(old: &Array3<f64>, bar: Array3<f64>, gamma: f64) -> Array3<f64> {
    if gamma == 1.0 {
        return bar;
    }
    let mut out = bar;
    Zip::from(&mut out)
        .and(old)
        .for_each(|o, &x| *o = x - gamma * (x - *o));
    out
}

/// Feature-map coding problem for one block with the kernels fixed.
#[derive(Debug, Clone)]
pub struct CodingSystem {
    fft: Fft2,
    lemma: CodingLemma,
    // λ Dᵀ x in the Fourier domain
    dtx: Array3<Complex64>,
    k: usize,
    shape: (usize, usize),
    alpha: f64,
    gamma: f64,
}

impl CodingSystem {
    pub fn new(kernels: &KernelBank, x: &SubjectBlock, cfg: &SolverConfig) -> Result<Self> {
        Self::with_spectra(&kernels.spectra(), x, cfg)
    }

    /// Builds the system from precomputed kernel spectra `(K, H0, N)`.
    pub fn with_spectra(
        spectra: &Array3<Complex64>,
        x: &SubjectBlock,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        let (k, h, n) = spectra.dim();
        if x.dim() != (h, n) {
            return Err(Error::shape(format!(
                "block {:?} does not match kernel grid {h}x{n}",
                x.dim()
            )));
        }
        let fft = Fft2::for_shape(h, n);
        let xs = fft.forward(x.view());
        // the normal operator is Σ conj(d̂) d̂ᵀ, i.e. the lemma applied to conj(d̂)
        let adj = spectra.mapv(|v| v.conj());
        let mut dtx = adj.clone();
        for kk in 0..k {
            Zip::from(dtx.slice_mut(s![kk, .., ..]))
                .and(&xs)
                .for_each(|a, &xv| *a *= xv * cfg.lambda);
        }
        Ok(CodingSystem {
            fft,
            lemma: CodingLemma::new(adj, cfg.lambda),
            dtx,
            k,
            shape: (h, n),
            alpha: cfg.alpha,
            gamma: cfg.gamma,
        })
    }

    pub fn zero_state(&self) -> CodingState {
        CodingState::zeros(self.k, self.shape)
    }

    /// `argmin_e λ/2 ‖De − x‖² + ½ ‖e − p‖²` for `p = b − u`.
    pub fn solve_e(&self, b: &Array3<f64>, u: &Array3<f64>) -> Array3<f64> {
        let mut spec = (b - u).mapv(|v| Complex64::new(v, 0.0));
        self.fft.forward_stack_in_place(&mut spec);
        spec += &self.dtx;
        self.lemma.apply_in_place(&mut spec);
        self.fft.inverse_stack_real(spec)
    }

    /// One relaxed iteration; returns the new state and its residuals.
    pub fn step(&self, state: &CodingState) -> (CodingState, Residuals) {
        let e_bar = self.solve_e(&state.b, &state.u);
        let mut u_bar = &state.u + &e_bar;
        u_bar -= &state.b;
        let mut b_bar = &e_bar + &u_bar;
        b_bar.mapv_inplace(|v| shrink(v, self.alpha));
        let primal = max_abs_diff(&e_bar, &b_bar);
        let b = relax(&state.b, b_bar, self.gamma);
        let u = relax(&state.u, u_bar, self.gamma);
        let dual = max_abs_diff(&b, &state.b);
        (CodingState { e: e_bar, b, u }, Residuals { primal, dual })
    }

    /// One iteration of classical ADMM, thresholding `e⁺ + u` with the
    /// previous dual.
    pub fn step_unrelaxed(&self, state: &CodingState) -> CodingState {
        let e = self.solve_e(&state.b, &state.u);
        let mut b = &e + &state.u;
        b.mapv_inplace(|v| shrink(v, self.alpha));
        let mut u = &state.u + &e;
        u -= &b;
        CodingState { e, b, u }
    }

    /// Starting state of the classical iteration whose split variables match
    /// the relaxed iteration (at `γ = 1`) started from `relaxed`:
    /// `b = ē`, `u = ē − (b_r − u_r)` where `ē = solve_e(b_r, u_r)`.
    pub fn unrelaxed_start(&self, relaxed: &CodingState) -> CodingState {
        let e = self.solve_e(&relaxed.b, &relaxed.u);
        let mut u = &e - &relaxed.b;
        u += &relaxed.u;
        CodingState {
            e: e.clone(),
            b: e,
            u,
        }
    }

    /// Runs up to `iters` relaxed steps from `state`, stopping early once the
    /// larger residual falls to `tol` (disabled when `tol == 0`).
    pub fn run(&self, mut state: CodingState, iters: usize, tol: f64) -> (CodingState, usize) {
        for it in 0..iters {
            let (next, res) = self.step(&state);
            state = next;
            if tol > 0.0 && res.max() <= tol {
                return (state, it + 1);
            }
        }
        (state, iters)
    }
}

/// One relaxed coding step.
pub fn code_step(
    state: &CodingState,
    kernels: &KernelBank,
    x: &SubjectBlock,
    cfg: &SolverConfig,
) -> Result<CodingState> {
    cfg.validate()?;
    let sys = CodingSystem::new(kernels, x, cfg)?;
    check_state(&state.b, kernels.len(), x.dim())?;
    Ok(sys.step(state).0)
}

fn check_state(a: &Array3<f64>, k: usize, shape: (usize, usize)) -> Result<()> {
    if a.dim() != (k, shape.0, shape.1) {
        return Err(Error::shape(format!(
            "state {:?} vs expected ({k}, {}, {})",
            a.dim(),
            shape.0,
            shape.1
        )));
    }
    Ok(())
}

/// Codes one block with the kernels fixed, starting from `e = b = u = 0`.
/// Returns the sparse split variable `b`.
pub fn solve_coding(
    x: &SubjectBlock,
    kernels: &KernelBank,
    cfg: &SolverConfig,
) -> Result<FeatureMapStack> {
    cfg.validate()?;
    let sys = CodingSystem::new(kernels, x, cfg)?;
    let (state, _) = sys.run(sys.zero_state(), cfg.coding_iters, cfg.residual_tol);
    Ok(FeatureMapStack::from_raw(state.b))
}

/// Dictionary subproblem with the feature maps of `M` blocks fixed.
#[derive(Debug, Clone)]
pub struct DictProblem {
    fft: Fft2,
    system: DictSystem,
    // λ Σ_m Eᵐᵀ xᵐ in the Fourier domain
    etx: Array3<Complex64>,
    support: SupportMask,
    gamma: f64,
}

impl DictProblem {
    pub fn new(
        maps: &[FeatureMapStack],
        xs: &[SubjectBlock],
        support: SupportMask,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        if maps.is_empty() || maps.len() != xs.len() {
            return Err(Error::shape(format!(
                "{} map stacks for {} blocks",
                maps.len(),
                xs.len()
            )));
        }
        let (h, n) = (support.rows, support.cols);
        let k = maps[0].len();
        for (e, x) in maps.iter().zip(xs) {
            if e.len() != k || e.map_shape() != (h, n) || x.dim() != (h, n) {
                return Err(Error::shape("maps and blocks must share the kernel grid"));
            }
        }
        let fft = Fft2::for_shape(h, n);
        let e_hat: Vec<Array3<Complex64>> = par::map(maps, |e| fft.forward_stack(e.as_array()));
        let mut etx = Array3::<Complex64>::zeros((k, h, n));
        for (e, x) in e_hat.iter().zip(xs) {
            let xs_hat = fft.forward(x.view());
            for kk in 0..k {
                Zip::from(etx.slice_mut(s![kk, .., ..]))
                    .and(e.slice(s![kk, .., ..]))
                    .and(&xs_hat)
                    .for_each(|a, &ev, &xv| *a += ev.conj() * xv * cfg.lambda);
            }
        }
        Ok(DictProblem {
            fft,
            system: DictSystem::new(&e_hat, cfg.lambda)?,
            etx,
            support,
            gamma: cfg.gamma,
        })
    }

    /// `argmin_d λ/2 Σ_m ‖Eᵐ d − xᵐ‖² + ½ ‖d − p‖²` for `p = c − v`.
    pub fn solve_d(&self, c: &Array3<f64>, v: &Array3<f64>) -> Array3<f64> {
        let mut spec = (c - v).mapv(|x| Complex64::new(x, 0.0));
        self.fft.forward_stack_in_place(&mut spec);
        spec += &self.etx;
        let solved = self.system.solve(&spec).expect("rhs shape checked at construction");
        self.fft.inverse_stack_real(solved)
    }

    fn project(&self, z: &Array3<f64>) -> Array3<f64> {
        let mut out = Array3::zeros(z.dim());
        for kk in 0..z.dim().0 {
            project_into(
                z.slice(s![kk, .., ..]),
                &self.support,
                out.slice_mut(s![kk, .., ..]),
            );
        }
        out
    }

    /// One relaxed step; also returns the projected trial point `c̄`.
    pub fn step(&self, state: &DictState) -> (DictState, Array3<f64>) {
        let d_bar = self.solve_d(&state.c, &state.v);
        let mut v_bar = &state.v + &d_bar;
        v_bar -= &state.c;
        let c_bar = self.project(&(&d_bar + &v_bar));
        let c = relax(&state.c, c_bar.clone(), self.gamma);
        let v = relax(&state.v, v_bar, self.gamma);
        (DictState { d: d_bar, c, v }, c_bar)
    }

    pub fn step_unrelaxed(&self, state: &DictState) -> DictState {
        let d = self.solve_d(&state.c, &state.v);
        let c = self.project(&(&d + &state.v));
        let mut v = &state.v + &d;
        v -= &c;
        DictState { d, c, v }
    }

    /// Classical-iteration start matching the relaxed iteration from `relaxed`.
    pub fn unrelaxed_start(&self, relaxed: &DictState) -> DictState {
        let d = self.solve_d(&relaxed.c, &relaxed.v);
        let mut v = &d - &relaxed.c;
        v += &relaxed.v;
        DictState {
            d: d.clone(),
            c: d,
            v,
        }
    }
}

/// One relaxed dictionary step.
pub fn dict_step(
    state: &DictState,
    maps: &[FeatureMapStack],
    xs: &[SubjectBlock],
    support: SupportMask,
    cfg: &SolverConfig,
) -> Result<DictState> {
    cfg.validate()?;
    let problem = DictProblem::new(maps, xs, support, cfg)?;
    check_state(&state.c, maps[0].len(), (support.rows, support.cols))?;
    Ok(problem.step(state).0)
}

/// Seeded initial kernels: Gaussian entries on the support, scaled to unit norm.
pub fn initial_kernels(
    k: usize,
    kernel_size: (usize, usize),
    grid: (usize, usize),
    seed: u64,
) -> Result<KernelBank> {
    if k == 0 {
        return Err(Error::invalid("need at least one kernel"));
    }
    SupportMask::new(kernel_size, grid)?;
    let (k1, k2) = kernel_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kernels = Array3::<f64>::zeros((k, k1, k2));
    for mut kernel in kernels.outer_iter_mut() {
        kernel.mapv_inplace(|_| StandardNormal.sample(&mut rng));
        let norm = kernel.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            kernel.mapv_inplace(|v| v / norm);
        } else {
            kernel[[0, 0]] = 1.0;
        }
    }
    KernelBank::new(kernels, grid)
}

/// Per-outer-iteration record of kernel learning.
#[derive(Debug, Clone, Default)]
pub struct LearnTrace {
    /// Coding objective after each coding phase, evaluated with the kernels
    /// that phase used. Entry 0 is the objective at initialisation.
    pub objective: Vec<f64>,
}

/// Alternating kernel learning over the source blocks.
pub fn learn_kernels(
    source: &SourceDomain,
    k: usize,
    kernel_size: (usize, usize),
    cfg: &SolverConfig,
) -> Result<KernelBank> {
    learn_kernels_from_blocks(&source.blocks, k, kernel_size, cfg, None)
}

/// Like [`learn_kernels`], also recording the objective per outer iteration.
pub fn learn_kernels_traced(
    source: &SourceDomain,
    k: usize,
    kernel_size: (usize, usize),
    cfg: &SolverConfig,
) -> Result<(KernelBank, LearnTrace)> {
    let mut trace = LearnTrace::default();
    let bank = learn_kernels_from_blocks(&source.blocks, k, kernel_size, cfg, Some(&mut trace))?;
    Ok((bank, trace))
}

pub fn learn_kernels_from_blocks(
    blocks: &[SubjectBlock],
    k: usize,
    kernel_size: (usize, usize),
    cfg: &SolverConfig,
    mut trace: Option<&mut LearnTrace>,
) -> Result<KernelBank> {
    cfg.validate()?;
    let grid = blocks
        .first()
        .ok_or_else(|| Error::invalid("source domain has no blocks"))?
        .dim();
    if blocks.iter().any(|b| b.dim() != grid) {
        return Err(Error::shape("source blocks differ in shape"));
    }
    let support = SupportMask::new(kernel_size, grid)?;
    let mut bank = initial_kernels(k, kernel_size, grid, cfg.seed)?;

    for _ in 0..cfg.outer_iters {
        let spectra = bank.spectra();
        let maps: Vec<FeatureMapStack> = par::try_map(blocks, |x| {
            let sys = CodingSystem::with_spectra(&spectra, x, cfg)?;
            let (state, _) = sys.run(sys.zero_state(), cfg.coding_iters, cfg.residual_tol);
            Ok::<_, Error>(FeatureMapStack::from_raw(state.b))
        })?;
        if let Some(t) = trace.as_deref_mut() {
            t.objective.push(csc_objective(blocks, &bank, &maps, cfg.eta())?);
        }

        let problem = DictProblem::new(&maps, blocks, support, cfg)?;
        let mut state = DictState::from_kernels(&bank);
        for _ in 0..cfg.dict_iters {
            state = problem.step(&state).0;
        }
        // c is feasible for γ ≤ 1 already; the final projection also covers γ > 1
        let c = problem.project(&state.c);
        bank = KernelBank::from_padded(&c, kernel_size)?;
    }
    Ok(bank)
}

/// Codes every block with `kernels` and evaluates the objective.
pub fn coded_objective(
    blocks: &[SubjectBlock],
    kernels: &KernelBank,
    cfg: &SolverConfig,
) -> Result<f64> {
    let maps = par::try_map(blocks, |x| solve_coding(x, kernels, cfg))?;
    csc_objective(blocks, kernels, &maps, cfg.eta())
}

/// Constraint violation of a bank: mass outside the support plus the excess
/// of each kernel norm over 1.
pub fn constraint_violation(padded: &Array3<f64>, support: &SupportMask) -> f64 {
    let mut worst = 0.0f64;
    for kernel in padded.outer_iter() {
        let mut inside = 0.0;
        for ((i, j), v) in kernel.indexed_iter() {
            if support.contains(i, j) {
                inside += v * v;
            } else {
                worst = worst.max(v.abs());
            }
        }
        worst = worst.max(inside.sqrt() - 1.0);
    }
    worst.max(0.0)
}
