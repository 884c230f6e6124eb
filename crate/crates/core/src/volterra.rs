//! Green's function of the linear Heisenberg–Langevin equation:
//!
//! ```text
//! dV/dt = -iΔ V(t) - ∫₀ᵗ F(t - t') V(t') dt',    V(0) = I
//! ```
//!
//! Two solvers are provided. [`solve_volterra_general`] handles any kernel
//! with a product-trapezoidal convolution and trapezoidal (implicit) time
//! stepping, second order in the step. [`solve_volterra_expfast`] embeds an
//! exponential kernel exactly into a larger linear ODE and integrates it
//! adaptively; it serves as the oracle for the general solver.

use std::io::Write;

use thiserror::Error;

use crate::interp::{hermite, locate};
use crate::ode::{dopri5, Dopri5Options, OdeError};
use crate::spectral::{KernelSampler, SpectralError};
use crate::{fmt_f64, CMatrix, C64, I};

#[derive(Debug, Error)]
pub enum VolterraError {
    #[error("step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("need at least one step")]
    NoSteps,
    #[error("coupling matrix is {coupling}×{coupling} but the kernel acts on {kernel} modes")]
    DimensionMismatch { coupling: usize, kernel: usize },
    #[error("coupling matrix is not Hermitian (max |Δ - Δ†| = {0:.3e})")]
    NotHermitian(f64),
    #[error("implicit step matrix is singular; reduce the step (h = {step})")]
    SingularStep { step: f64 },
    #[error("kernel is not a sum of exponentials; use the general solver")]
    NonExponentialKernel,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

/// Hermitian detuning / inter-mode coupling matrix Δ.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix(CMatrix);

impl CouplingMatrix {
    pub fn new(matrix: CMatrix) -> Result<Self, VolterraError> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(VolterraError::DimensionMismatch {
                coupling: matrix.nrows(),
                kernel: matrix.ncols(),
            });
        }
        let asym = crate::max_abs(&(&matrix - matrix.adjoint()));
        let scale = 1.0 + crate::max_abs(&matrix);
        if asym > 1e-12 * scale {
            return Err(VolterraError::NotHermitian(asym));
        }
        Ok(Self(matrix))
    }

    pub fn diagonal(detunings: &[f64]) -> Self {
        let n = detunings.len();
        Self(CMatrix::from_fn(n, n, |j, k| {
            if j == k {
                C64::new(detunings[j], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }))
    }

    pub fn scalar(detuning: f64) -> Self {
        Self::diagonal(&[detuning])
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }
}

/// `V(t)` and `dV/dt` sampled on the uniform grid `t_n = n·h`.
#[derive(Debug, Clone)]
pub struct GreensTrajectory {
    step: f64,
    v: Vec<CMatrix>,
    dv: Vec<CMatrix>,
    det: Vec<C64>,
    min_abs_det: f64,
    singular_threshold: f64,
    segment_flags: Vec<bool>,
    near_singular_times: Vec<f64>,
}

/// Default near-singularity threshold relative to `max_n |det V_n|`.
pub const SINGULAR_RELATIVE_THRESHOLD: f64 = 1e-6;

const DIP_FRACTION: f64 = 0.5;

impl GreensTrajectory {
    /// Wraps samples and computes the singularity diagnostics.
    pub fn from_samples(step: f64, v: Vec<CMatrix>, dv: Vec<CMatrix>) -> Self {
        assert_eq!(v.len(), dv.len());
        assert!(v.len() >= 2, "trajectory needs at least two samples");
        let det: Vec<C64> = v.iter().map(|m| m.clone().lu().determinant()).collect();
        let max_det = det.iter().fold(0.0_f64, |a, d| a.max(d.norm()));
        let min_abs_det = det.iter().fold(f64::INFINITY, |a, d| a.min(d.norm()));
        let threshold = SINGULAR_RELATIVE_THRESHOLD * max_det;
        // A segment is flagged when the straight line between consecutive
        // determinants passes within the threshold of zero and well inside
        // both endpoints. Monotone decay towards zero is not a pole.
        let segment_flags: Vec<bool> = det
            .windows(2)
            .map(|d| {
                let dist = segment_distance(d[0], d[1]);
                dist < threshold && dist <= DIP_FRACTION * d[0].norm().min(d[1].norm())
            })
            .collect();
        let mut traj = Self {
            step,
            v,
            dv,
            det,
            min_abs_det,
            singular_threshold: threshold,
            segment_flags,
            near_singular_times: Vec::new(),
        };
        traj.near_singular_times = traj.locate_singular_times();
        traj
    }

    fn locate_singular_times(&self) -> Vec<f64> {
        let mut times = Vec::new();
        let mut n = 0;
        while n < self.segment_flags.len() {
            if !self.segment_flags[n] {
                n += 1;
                continue;
            }
            let start = n;
            while n < self.segment_flags.len() && self.segment_flags[n] {
                n += 1;
            }
            // Minimise |det V(t)| of the Hermite interpolant over the cluster.
            let (mut a, mut b) = (self.time(start), self.time(n));
            let f = |t: f64| self.at(t).0.lu().determinant().norm();
            let phi = 0.5 * (5f64.sqrt() - 1.0);
            let mut x1 = b - phi * (b - a);
            let mut x2 = a + phi * (b - a);
            let (mut f1, mut f2) = (f(x1), f(x2));
            for _ in 0..200 {
                if f1 <= f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - phi * (b - a);
                    f1 = f(x1);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + phi * (b - a);
                    f2 = f(x2);
                }
                if b - a < 1e-15 * (1.0 + b.abs()) {
                    break;
                }
            }
            times.push(0.5 * (a + b));
        }
        times
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of grid points (M + 1).
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.v[0].nrows()
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.step
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|n| self.time(n)).collect()
    }

    pub fn v(&self, n: usize) -> &CMatrix {
        &self.v[n]
    }

    pub fn dv(&self, n: usize) -> &CMatrix {
        &self.dv[n]
    }

    pub fn values(&self) -> &[CMatrix] {
        &self.v
    }

    pub fn derivatives(&self) -> &[CMatrix] {
        &self.dv
    }

    pub fn det(&self, n: usize) -> C64 {
        self.det[n]
    }

    pub fn min_abs_det(&self) -> f64 {
        self.min_abs_det
    }

    pub fn singular_threshold(&self) -> f64 {
        self.singular_threshold
    }

    /// One flag per grid interval `[t_n, t_{n+1}]`.
    pub fn segment_flags(&self) -> &[bool] {
        &self.segment_flags
    }

    /// One time per cluster of flagged intervals, at the minimum of
    /// `|det V(t)|` of the interpolant.
    pub fn near_singular_times(&self) -> &[f64] {
        &self.near_singular_times
    }

    /// Cubic Hermite interpolation of `V` using the stored derivatives.
    /// The returned derivative is the exact derivative of the interpolant.
    pub fn at(&self, t: f64) -> (CMatrix, CMatrix) {
        let (n, s) = locate(t, self.step, self.len());
        hermite(&self.v[n], &self.dv[n], &self.v[n + 1], &self.dv[n + 1], self.step, s)
    }

    /// CSV with columns `t, re_v{j}{k}, im_v{j}{k}` for every entry.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.dim();
        let mut header = vec!["t".to_string()];
        for j in 0..n {
            for k in 0..n {
                header.push(format!("re_v{j}{k}"));
                header.push(format!("im_v{j}{k}"));
            }
        }
        writeln!(out, "{}", header.join(","))?;
        for (idx, v) in self.v.iter().enumerate() {
            let mut row = vec![fmt_f64(self.time(idx))];
            for j in 0..n {
                for k in 0..n {
                    row.push(fmt_f64(v[(j, k)].re));
                    row.push(fmt_f64(v[(j, k)].im));
                }
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Distance from the origin to the segment `[a, b]` in the complex plane.
fn segment_distance(a: C64, b: C64) -> f64 {
    let d = b - a;
    let len2 = d.norm_sqr();
    if len2 == 0.0 {
        return a.norm();
    }
    let s = (-(a.re * d.re + a.im * d.im) / len2).clamp(0.0, 1.0);
    (a + d * s).norm()
}

fn check_inputs(coupling: &CouplingMatrix, kernel: &KernelSampler, step: f64, steps: usize) -> Result<(), VolterraError> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(VolterraError::InvalidStep(step));
    }
    if steps == 0 {
        return Err(VolterraError::NoSteps);
    }
    if coupling.dim() != kernel.dim() {
        return Err(VolterraError::DimensionMismatch {
            coupling: coupling.dim(),
            kernel: kernel.dim(),
        });
    }
    Ok(())
}

/// Row-major flattened N×N block access.
struct Blocks {
    n: usize,
    data: Vec<C64>,
}

impl Blocks {
    fn with_capacity(n: usize, count: usize) -> Self {
        Self {
            n,
            data: Vec::with_capacity(n * n * count),
        }
    }

    fn push(&mut self, m: &CMatrix) {
        for i in 0..self.n {
            for j in 0..self.n {
                self.data.push(m[(i, j)]);
            }
        }
    }

    fn block(&self, idx: usize) -> &[C64] {
        let nn = self.n * self.n;
        &self.data[idx * nn..(idx + 1) * nn]
    }
}

/// `acc += a·b` for flattened N×N blocks.
#[inline]
fn gemm_acc(acc: &mut [C64], a: &[C64], b: &[C64], n: usize) {
    if n == 1 {
        acc[0] += a[0] * b[0];
        return;
    }
    for i in 0..n {
        for l in 0..n {
            let ail = a[i * n + l];
            for j in 0..n {
                acc[i * n + j] += ail * b[l * n + j];
            }
        }
    }
}

/// Weights of the product-trapezoidal rule for the kernel `F(τ)e^{iωτ}`:
/// over `[kh, (k+1)h]`, `∫F(1 - s)dτ` and `∫F s dτ` with `s = τ/h - k`,
/// by seven-point Gauss–Legendre.
fn product_weights(kernel: &KernelSampler, omega: f64, h: f64, steps: usize) -> Result<(Blocks, Blocks), VolterraError> {
    let n = kernel.dim();
    let nodes = crate::quadrature::gauss7();
    let mut left = Blocks::with_capacity(n, steps + 1);
    let mut right = Blocks::with_capacity(n, steps + 1);
    for k in 0..=steps {
        let mut a = CMatrix::zeros(n, n);
        let mut b = CMatrix::zeros(n, n);
        for &(x, w) in &nodes {
            let s = 0.5 * (x + 1.0);
            let tau = (k as f64 + s) * h;
            let f = kernel.dissipation(tau)? * C64::from_polar(0.5 * h * w, omega * tau);
            a += &f * C64::new(1.0 - s, 0.0);
            b += f * C64::new(s, 0.0);
        }
        left.push(&a);
        right.push(&b);
    }
    Ok((left, right))
}

/// Product-trapezoidal convolution with trapezoidal time stepping.
///
/// The solver works with `W = e^{iω̄t}V`, where `ω̄` is the mean of the
/// diagonal of `Δ`; `W` obeys the same equation with `Δ - ω̄` and kernel
/// `F(τ)e^{iω̄τ}` and varies slowly when the detuning is large. `W` is
/// taken piecewise linear between grid points and integrated against the
/// kernel exactly up to the quadrature of the weights, so a kernel that
/// varies within a step costs no accuracy. With `R_n` the right-hand side
/// at `t_n`, each step solves
/// `[I + (h/2)(iΔ + L + ω₀)] V_{n+1} = V_n + (h/2)R_n - (h/2)S_{n+1}`,
/// where `ω₀` is the weight of the newest sample and `S_{n+1}` collects
/// the convolution terms not involving `V_{n+1}`.
pub fn solve_volterra_general(
    coupling: &CouplingMatrix,
    kernel: &KernelSampler,
    step: f64,
    steps: usize,
) -> Result<GreensTrajectory, VolterraError> {
    check_inputs(coupling, kernel, step, steps)?;
    let n = coupling.dim();
    let h = step;
    let c = |x: f64| C64::new(x, 0.0);

    let shift = coupling.matrix().trace().re / n as f64;
    // Lag k weight: right part of interval k-1 plus left part of interval k.
    let (alpha, beta) = product_weights(kernel, shift, h, steps)?;
    let mut weights = Blocks::with_capacity(n, steps + 1);
    weights.push(&CMatrix::from_row_slice(n, n, alpha.block(0)));
    for k in 1..=steps {
        let w = CMatrix::from_row_slice(n, n, beta.block(k - 1)) + CMatrix::from_row_slice(n, n, alpha.block(k));
        weights.push(&w);
    }
    let w0 = CMatrix::from_row_slice(n, n, alpha.block(0));
    let identity = CMatrix::identity(n, n);
    let generator = (coupling.matrix() - &identity * c(shift)) * I + kernel.local_dissipation();
    let implicit = &identity + (&generator + &w0) * c(0.5 * h);
    let lu = implicit.clone().lu();
    let det = lu.determinant();
    if !(det.norm() > 1e-14 * implicit.norm().powi(n as i32)) {
        return Err(VolterraError::SingularStep { step });
    }

    let mut v: Vec<CMatrix> = Vec::with_capacity(steps + 1);
    let mut dv: Vec<CMatrix> = Vec::with_capacity(steps + 1);
    let mut vflat = Blocks::with_capacity(n, steps + 1);
    v.push(identity.clone());
    vflat.push(&identity);
    dv.push(-&generator);

    let mut acc = vec![C64::new(0.0, 0.0); n * n];
    for m in 0..steps {
        // S_{m+1} = Σ_{j=1}^{m} ω_{m+1-j} V_j + β_m V_0
        acc.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
        for j in 1..=m {
            gemm_acc(&mut acc, weights.block(m + 1 - j), vflat.block(j), n);
        }
        gemm_acc(&mut acc, beta.block(m), vflat.block(0), n);
        let s = CMatrix::from_row_slice(n, n, &acc);

        let rhs = &v[m] + (&dv[m] - &s) * c(0.5 * h);
        let next = lu
            .solve(&rhs)
            .ok_or(VolterraError::SingularStep { step })?;
        let dnext = -(&generator * &next) - (s + &w0 * &next);
        vflat.push(&next);
        v.push(next);
        dv.push(dnext);
    }
    // V = e^{-iω̄t}W, V' = e^{-iω̄t}(W' - iω̄W)
    for (k, (w, dw)) in v.iter_mut().zip(dv.iter_mut()).enumerate() {
        let phase = C64::from_polar(1.0, -shift * k as f64 * h);
        *dw = (&*dw - &*w * (I * shift)) * phase;
        *w *= phase;
    }
    Ok(GreensTrajectory::from_samples(h, v, dv))
}

/// Exact embedding for `F(τ) = Σ_c A_c e^{-μ_c τ}` (plus any local part):
///
/// ```text
/// V'   = -(iΔ + L) V - Σ_c A_c u_c
/// u_c' = V - μ_c u_c,          u_c(t) = ∫₀ᵗ e^{-μ_c (t-t')} V(t') dt'
/// ```
///
/// integrated with an adaptive Dormand–Prince stepper and sampled on the
/// grid `n·h`, `n = 0..=steps`.
pub fn solve_volterra_expfast(
    coupling: &CouplingMatrix,
    kernel: &KernelSampler,
    step: f64,
    steps: usize,
) -> Result<GreensTrajectory, VolterraError> {
    solve_volterra_expfast_with(coupling, kernel, step, steps, Dopri5Options::default())
}

pub fn solve_volterra_expfast_with(
    coupling: &CouplingMatrix,
    kernel: &KernelSampler,
    step: f64,
    steps: usize,
    opts: Dopri5Options,
) -> Result<GreensTrajectory, VolterraError> {
    check_inputs(coupling, kernel, step, steps)?;
    let terms = kernel
        .exponential_terms()
        .ok_or(VolterraError::NonExponentialKernel)?;
    let n = coupling.dim();
    let blocks = 1 + terms.len();
    let generator = coupling.matrix() * I + kernel.local_dissipation();

    let rhs = |_t: f64, y: &CMatrix| -> CMatrix {
        let mut out = CMatrix::zeros(blocks * n, n);
        let vblk = y.rows(0, n);
        let mut dv = -(&generator * vblk);
        for (c, (amp, rate)) in terms.iter().enumerate() {
            let u = y.rows((c + 1) * n, n);
            dv -= amp * u;
            out.rows_mut((c + 1) * n, n).copy_from(&(vblk - u * *rate));
        }
        out.rows_mut(0, n).copy_from(&dv);
        out
    };

    let mut y0 = CMatrix::zeros(blocks * n, n);
    y0.rows_mut(0, n).fill_with_identity();
    let outputs: Vec<f64> = (1..=steps).map(|k| k as f64 * step).collect();
    let opts = Dopri5Options {
        initial_step: opts.initial_step.min(step),
        ..opts
    };
    let states = dopri5(&rhs, y0.clone(), 0.0, &outputs, opts)?;

    let mut v = Vec::with_capacity(steps + 1);
    let mut dv = Vec::with_capacity(steps + 1);
    for y in std::iter::once(&y0).chain(states.iter()) {
        v.push(y.rows(0, n).into_owned());
        dv.push(rhs(0.0, y).rows(0, n).into_owned());
    }
    Ok(GreensTrajectory::from_samples(step, v, dv))
}

/// Closed-form `V(t)` for a single-mode Lorentzian at `Δ = δ = 0`:
/// `V = e^{-λt/2}[cos νt + (λ/2ν) sin νt]`, `ν = √(g² - λ²/4)` (with the
/// hyperbolic continuation when `g < λ/2`).
pub fn lorentzian_resonant_green(coupling_squared: f64, width: f64, t: f64) -> f64 {
    let half = 0.5 * width;
    let disc = coupling_squared - half * half;
    let decay = (-half * t).exp();
    if disc > 0.0 {
        let nu = disc.sqrt();
        decay * ((nu * t).cos() + half / nu * (nu * t).sin())
    } else if disc < 0.0 {
        let kappa = (-disc).sqrt();
        decay * ((kappa * t).cosh() + half / kappa * (kappa * t).sinh())
    } else {
        decay * (1.0 + half * t)
    }
}
