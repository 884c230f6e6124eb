//! Time-local coefficients extracted from the Green's function:
//!
//! ```text
//! γ(t) = -V'(t) V(t)⁻¹
//! ξ(t) = [γ(t) + d/dt] (V∗Ω)(t)
//! W(t) = ∫₀ᵗ∫₀ᵗ V(t-t₁) G(t₁-t₂) V†(t-t₂) dt₁ dt₂
//! λ(t) = W'(t) + γ(t) W(t) + W(t) γ†(t)
//! ```
//!
//! Off-grid values use cubic Hermite interpolation of `V`, `V∗Ω` and `W`
//! (each with its stored derivative) and apply the definitions above to the
//! interpolants, so the interpolated coefficients are exactly those of a
//! nearby model whose Green's function is the interpolant. In particular
//! zeros of `det V` become exact simple poles of `γ`, and the evaluation
//! continues analytically to complex times.
//!
//! When the kernel is a finite sum of exponentials, the temperature is zero
//! and the drive is constant, [`CoefficientTrack::with_exact_continuation`]
//! replaces the interpolants by the exact propagator of the embedded linear
//! system, so the coefficients are analytic everywhere off their poles.

use std::io::Write;

use thiserror::Error;

use crate::interp::{hermite_complex, locate};
use crate::spectral::{KernelSampler, SpectralError};
use crate::volterra::{CouplingMatrix, GreensTrajectory};
use crate::{fmt_f64, CMatrix, CVector, C64};

#[derive(Debug, Error)]
pub enum CoeffsError {
    #[error("drive has {drive} components but the system has {system} modes")]
    DriveDimension { drive: usize, system: usize },
    #[error("sampled drive has {samples} points with step {step}; the trajectory needs {needed} with step {traj_step}")]
    DriveGrid {
        samples: usize,
        step: f64,
        needed: usize,
        traj_step: f64,
    },
    #[error("kernel acts on {kernel} modes but the trajectory on {traj}")]
    KernelDimension { kernel: usize, traj: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Coherent drive amplitude Ω(t), one component per system mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Drive {
    Constant(CVector),
    /// Samples on the uniform grid `n·step`.
    Sampled { step: f64, values: Vec<CVector> },
}

impl Drive {
    pub fn constant(values: &[C64]) -> Self {
        Drive::Constant(CVector::from_column_slice(values))
    }

    pub fn scalar(omega: f64) -> Self {
        Drive::constant(&[C64::new(omega, 0.0)])
    }

    pub fn none(dim: usize) -> Self {
        Drive::Constant(CVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        match self {
            Drive::Constant(v) => v.len(),
            Drive::Sampled { values, .. } => values.first().map_or(0, |v| v.len()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Drive::Constant(v) => v.iter().all(|z| *z == C64::new(0.0, 0.0)),
            Drive::Sampled { values, .. } => values.iter().all(|v| v.iter().all(|z| *z == C64::new(0.0, 0.0))),
        }
    }

    /// Value at grid index `n` of a trajectory with step `h`.
    fn sample(&self, n: usize) -> CVector {
        match self {
            Drive::Constant(v) => v.clone(),
            Drive::Sampled { values, .. } => values[n].clone(),
        }
    }

    fn check(&self, traj: &GreensTrajectory) -> Result<(), CoeffsError> {
        if self.dim() != traj.dim() {
            return Err(CoeffsError::DriveDimension {
                drive: self.dim(),
                system: traj.dim(),
            });
        }
        if let Drive::Sampled { step, values } = self {
            if (step - traj.step()).abs() > 1e-12 * traj.step() || values.len() < traj.len() {
                return Err(CoeffsError::DriveGrid {
                    samples: values.len(),
                    step: *step,
                    needed: traj.len(),
                    traj_step: traj.step(),
                });
            }
        }
        Ok(())
    }
}

/// `γ_n = -dV_n V_n⁻¹`. Exactly singular samples give non-finite entries.
pub fn gamma_track(traj: &GreensTrajectory) -> Vec<CMatrix> {
    traj.values()
        .iter()
        .zip(traj.derivatives())
        .map(|(v, dv)| match v.clone().try_inverse() {
            Some(inv) => -(dv * inv),
            None => CMatrix::from_element(v.nrows(), v.ncols(), C64::new(f64::INFINITY, f64::NAN)),
        })
        .collect()
}

/// `(V∗Ω)(t)` and its time derivative on the grid.
#[derive(Debug, Clone)]
pub struct ConvolutionTrack {
    pub conv: Vec<CVector>,
    pub dconv: Vec<CVector>,
}

/// Convolution `V∗Ω` with `d/dt (V∗Ω) = Ω + (V'∗Ω)`, and `ξ_n = γ_n conv_n + conv'_n`.
///
/// A constant drive uses the cumulative Hermite quadrature of `V` (fourth
/// order); a sampled drive uses the product trapezoidal rule.
pub fn xi_track(
    traj: &GreensTrajectory,
    drive: &Drive,
    gamma: &[CMatrix],
) -> Result<(ConvolutionTrack, Vec<CVector>), CoeffsError> {
    let conv = convolution_track(traj, drive)?;
    let xi = gamma
        .iter()
        .zip(conv.conv.iter().zip(&conv.dconv))
        .map(|(g, (c, dc))| g * c + dc)
        .collect();
    Ok((conv, xi))
}

/// `V∗Ω` and `d/dt (V∗Ω)` on the grid of `traj`.
pub fn convolution_track(traj: &GreensTrajectory, drive: &Drive) -> Result<ConvolutionTrack, CoeffsError> {
    drive.check(traj)?;
    let n = traj.dim();
    let h = traj.step();
    let len = traj.len();
    let mut conv = Vec::with_capacity(len);
    let mut dconv = Vec::with_capacity(len);
    match drive {
        Drive::Constant(omega) => {
            let mut integral = CMatrix::zeros(n, n);
            conv.push(CVector::zeros(n));
            dconv.push(omega.clone());
            for k in 1..len {
                let (v0, v1) = (traj.v(k - 1), traj.v(k));
                let (d0, d1) = (traj.dv(k - 1), traj.dv(k));
                integral += (v0 + v1) * C64::new(0.5 * h, 0.0) + (d0 - d1) * C64::new(h * h / 12.0, 0.0);
                conv.push(&integral * omega);
                dconv.push(v1 * omega);
            }
        }
        Drive::Sampled { .. } => {
            let omegas: Vec<CVector> = (0..len).map(|k| drive.sample(k)).collect();
            for k in 0..len {
                let mut c = CVector::zeros(n);
                let mut dc = omegas[k].clone();
                for j in (0..=k).filter(|_| k > 0) {
                    let w = if j == 0 || j == k { 0.5 * h } else { h };
                    c += traj.v(k - j) * &omegas[j] * C64::new(w, 0.0);
                    dc += traj.dv(k - j) * &omegas[j] * C64::new(w, 0.0);
                }
                conv.push(c);
                dconv.push(dc);
            }
        }
    }
    Ok(ConvolutionTrack { conv, dconv })
}

/// `W(t)` and `dW/dt` on the grid.
#[derive(Debug, Clone)]
pub struct NoiseTrack {
    pub w: Vec<CMatrix>,
    pub dw: Vec<CMatrix>,
}

/// Double product-trapezoidal rule for `W`, built incrementally:
///
/// ```text
/// Q_n = Σ_{a<n} c_a V_a G_{n-a},   c_0 = ½, c_a = 1
/// T_n = T_{n-1} + Q_n V_n† + V_n Q_n† + V_n G_0 V_n†
/// W_n = h² [T_n - ½(Q_n V_n† + V_n Q_n†) - ¾ V_n G_0 V_n†]
/// W'_n = V_n X_n† + X_n V_n†,      X_n = h (Q_n + ½ V_n G_0)
/// ```
///
/// with `G_k = G(k h)`. A delta-correlated part `G_loc δ(τ)` adds
/// `∫₀ᵗ V G_loc V†` to `W` and `V G_loc V†` to `W'`.
pub fn w_track(traj: &GreensTrajectory, kernel: &KernelSampler) -> Result<NoiseTrack, CoeffsError> {
    if kernel.dim() != traj.dim() {
        return Err(CoeffsError::KernelDimension {
            kernel: kernel.dim(),
            traj: traj.dim(),
        });
    }
    let n = traj.dim();
    let len = traj.len();
    let h = traj.step();
    let zero = CMatrix::zeros(n, n);
    if kernel.is_zero_temperature() {
        return Ok(NoiseTrack {
            w: vec![zero.clone(); len],
            dw: vec![zero; len],
        });
    }
    let g: Vec<CMatrix> = (0..len)
        .map(|k| kernel.noise(k as f64 * h))
        .collect::<Result<_, _>>()?;
    let g_loc = kernel.local_noise();
    let has_local = crate::max_abs(&g_loc) > 0.0;
    let c = |x: f64| C64::new(x, 0.0);

    let mut w = Vec::with_capacity(len);
    let mut dw = Vec::with_capacity(len);
    let mut total = zero.clone();
    let mut local = zero.clone();
    let mut prev_local_rate = zero.clone();
    for m in 0..len {
        let vm = traj.v(m);
        let mut q = zero.clone();
        for a in 0..m {
            let ca = if a == 0 { 0.5 } else { 1.0 };
            q += traj.v(a) * &g[m - a] * c(ca);
        }
        let qv = &q * vm.adjoint();
        let cross = &qv + qv.adjoint();
        let diag = vm * &g[0] * vm.adjoint();
        total += &cross + &diag;
        let mut wm = if m == 0 {
            zero.clone()
        } else {
            (&total - &cross * c(0.5) - &diag * c(0.75)) * c(h * h)
        };
        let x = if m == 0 { zero.clone() } else { (&q + vm * &g[0] * c(0.5)) * c(h) };
        let mut dwm = vm * x.adjoint() + &x * vm.adjoint();
        if has_local {
            let rate = vm * &g_loc * vm.adjoint();
            if m > 0 {
                local += (&prev_local_rate + &rate) * c(0.5 * h);
            }
            wm += &local;
            dwm += &rate;
            prev_local_rate = rate;
        }
        w.push(crate::hermitian_part(&wm));
        dw.push(crate::hermitian_part(&dwm));
    }
    Ok(NoiseTrack { w, dw })
}

/// `λ_n = W'_n + γ_n W_n + W_n γ_n†`.
pub fn lambda_track(noise: &NoiseTrack, gamma: &[CMatrix]) -> Vec<CMatrix> {
    noise
        .w
        .iter()
        .zip(&noise.dw)
        .zip(gamma)
        .map(|((w, dw), g)| {
            if crate::max_abs(w) == 0.0 {
                dw.clone()
            } else {
                dw + g * w + w * g.adjoint()
            }
        })
        .collect()
}

/// Coefficients at one (possibly complex) time. The `*_adj` fields are the
/// analytic continuations of the adjoints: `γ_adj(z) = γ(z̄)†`.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub gamma: CMatrix,
    pub gamma_adj: CMatrix,
    pub xi: CVector,
    pub xi_adj: CVector,
    pub lambda: CMatrix,
}

/// All coefficient tracks on the Green's-function grid plus the data needed
/// for consistent off-grid evaluation.
#[derive(Debug, Clone)]
pub struct CoefficientTrack {
    traj: GreensTrajectory,
    gamma: Vec<CMatrix>,
    conv: ConvolutionTrack,
    xi: Vec<CVector>,
    noise: NoiseTrack,
    lambda: Vec<CMatrix>,
    thermal: bool,
    exact: Option<Continuation>,
}

/// `Y = [V; U₁; …; U_C; ∫V]` with `U_c = ∫₀ᵗ e^{-μ_c(t-s)} V(s) ds` obeys
/// `Y' = M Y`; `states` holds `Y` on the grid.
#[derive(Debug, Clone)]
struct Continuation {
    generator: CMatrix,
    states: Vec<CMatrix>,
    omega: CVector,
    n: usize,
    step: f64,
}

impl Continuation {
    fn new(coupling: &CouplingMatrix, kernel: &KernelSampler, omega: &CVector, step: f64, len: usize) -> Option<Self> {
        let terms = kernel.exponential_terms()?;
        let n = coupling.dim();
        let blocks = terms.len() + 2;
        let last = (blocks - 1) * n;
        let mut m = CMatrix::zeros(blocks * n, blocks * n);
        let local = coupling.matrix() * C64::new(0.0, 1.0) + kernel.local_dissipation();
        m.view_mut((0, 0), (n, n)).copy_from(&(-local));
        let eye = CMatrix::identity(n, n);
        for (c, (amp, rate)) in terms.iter().enumerate() {
            let at = (c + 1) * n;
            m.view_mut((0, at), (n, n)).copy_from(&(-amp));
            m.view_mut((at, 0), (n, n)).copy_from(&eye);
            m.view_mut((at, at), (n, n)).copy_from(&(&eye * -*rate));
        }
        m.view_mut((last, 0), (n, n)).copy_from(&eye);
        let propagator = (&m * C64::new(step, 0.0)).exp();
        let mut y = CMatrix::zeros(blocks * n, n);
        y.view_mut((0, 0), (n, n)).copy_from(&eye);
        let mut states = Vec::with_capacity(len);
        for _ in 0..len {
            let next = &propagator * &y;
            states.push(std::mem::replace(&mut y, next));
        }
        Some(Self {
            generator: m,
            states,
            omega: omega.clone(),
            n,
            step,
        })
    }

    /// `(V, V', V∗Ω, (V∗Ω)')` at `z`.
    fn eval(&self, z: C64) -> (CMatrix, CMatrix, CVector, CVector) {
        let k = ((z.re / self.step).round().max(0.0) as usize).min(self.states.len() - 1);
        let dz = z - k as f64 * self.step;
        let y = (&self.generator * dz).exp() * &self.states[k];
        let dy = &self.generator * &y;
        let n = self.n;
        let v = y.rows(0, n).into_owned();
        let dv = dy.rows(0, n).into_owned();
        let conv = y.rows(y.nrows() - n, n) * &self.omega;
        let dconv = &v * &self.omega;
        (v, dv, conv, dconv)
    }
}

impl CoefficientTrack {
    /// `kernel = None` (or a zero-temperature kernel) gives `W ≡ λ ≡ 0`.
    pub fn build(traj: GreensTrajectory, drive: &Drive, kernel: Option<&KernelSampler>) -> Result<Self, CoeffsError> {
        let gamma = gamma_track(&traj);
        let (conv, xi) = xi_track(&traj, drive, &gamma)?;
        let noise = match kernel {
            Some(k) => w_track(&traj, k)?,
            None => {
                let zero = CMatrix::zeros(traj.dim(), traj.dim());
                NoiseTrack {
                    w: vec![zero.clone(); traj.len()],
                    dw: vec![zero; traj.len()],
                }
            }
        };
        let thermal = noise.w.iter().chain(&noise.dw).any(|m| crate::max_abs(m) > 0.0);
        let lambda = lambda_track(&noise, &gamma);
        Ok(Self {
            traj,
            gamma,
            conv,
            xi,
            noise,
            lambda,
            thermal,
            exact: None,
        })
    }

    /// Switches off-grid evaluation to the exact propagator when the model
    /// allows it (exponential kernel, zero temperature, constant drive);
    /// otherwise returns the track unchanged. `coupling`, `kernel` and
    /// `drive` must be those the trajectory was solved with.
    pub fn with_exact_continuation(mut self, coupling: &CouplingMatrix, kernel: &KernelSampler, drive: &Drive) -> Self {
        if self.thermal || coupling.dim() != self.dim() || kernel.dim() != self.dim() {
            return self;
        }
        if let Drive::Constant(omega) = drive {
            self.exact = Continuation::new(coupling, kernel, omega, self.step(), self.len());
        }
        self
    }

    /// True when off-grid coefficients come from the exact propagator.
    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn trajectory(&self) -> &GreensTrajectory {
        &self.traj
    }

    pub fn dim(&self) -> usize {
        self.traj.dim()
    }

    pub fn step(&self) -> f64 {
        self.traj.step()
    }

    pub fn len(&self) -> usize {
        self.traj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traj.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        self.traj.end_time()
    }

    pub fn gamma(&self) -> &[CMatrix] {
        &self.gamma
    }

    pub fn xi(&self) -> &[CVector] {
        &self.xi
    }

    pub fn lambda(&self) -> &[CMatrix] {
        &self.lambda
    }

    pub fn w(&self) -> &[CMatrix] {
        &self.noise.w
    }

    pub fn dw(&self) -> &[CMatrix] {
        &self.noise.dw
    }

    pub fn convolution(&self) -> &ConvolutionTrack {
        &self.conv
    }

    pub fn is_thermal(&self) -> bool {
        self.thermal
    }

    /// Times where `γ` has a pole (zeros of `det V`).
    pub fn poles(&self) -> &[f64] {
        self.traj.near_singular_times()
    }

    /// Grid points adjacent to a flagged near-singular interval.
    pub fn pole_flags(&self) -> Vec<bool> {
        let seg = self.traj.segment_flags();
        (0..self.len())
            .map(|n| (n > 0 && seg[n - 1]) || seg.get(n).copied().unwrap_or(false))
            .collect()
    }

    /// Interpolated `V`, `V'` at complex time.
    pub fn green_at(&self, z: C64) -> (CMatrix, CMatrix) {
        if let Some(c) = &self.exact {
            let (v, dv, _, _) = c.eval(z);
            return (v, dv);
        }
        let (k, s) = self.locate(z);
        hermite_complex(
            self.traj.v(k),
            self.traj.dv(k),
            self.traj.v(k + 1),
            self.traj.dv(k + 1),
            self.step(),
            s,
        )
    }

    /// Interpolated `V∗Ω` and its derivative at complex time.
    pub fn convolution_at(&self, z: C64) -> (CVector, CVector) {
        if let Some(c) = &self.exact {
            let (_, _, conv, dconv) = c.eval(z);
            return (conv, dconv);
        }
        let (k, s) = self.locate(z);
        let c = &self.conv;
        hermite_complex(&c.conv[k], &c.dconv[k], &c.conv[k + 1], &c.dconv[k + 1], self.step(), s)
    }

    fn locate(&self, z: C64) -> (usize, C64) {
        let (k, _) = locate(z.re, self.step(), self.len());
        // Unclamped offset, so evaluation past the ends extrapolates analytically.
        let s = (z - k as f64 * self.step()) / self.step();
        (k, s)
    }

    fn gamma_xi(&self, z: C64) -> (CMatrix, CVector, (CMatrix, CMatrix)) {
        let ((v, dv), (c, dc)) = match &self.exact {
            Some(e) => {
                let (v, dv, c, dc) = e.eval(z);
                ((v, dv), (c, dc))
            }
            None => (self.green_at(z), self.convolution_at(z)),
        };
        let gamma = match v.clone().try_inverse() {
            Some(inv) => -(dv * inv),
            None => CMatrix::from_element(v.nrows(), v.ncols(), C64::new(f64::INFINITY, f64::NAN)),
        };
        let xi = &gamma * &c + dc;
        let w = if self.thermal {
            let (k, s) = self.locate(z);
            hermite_complex(&self.noise.w[k], &self.noise.dw[k], &self.noise.w[k + 1], &self.noise.dw[k + 1], self.step(), s)
        } else {
            (CMatrix::zeros(0, 0), CMatrix::zeros(0, 0))
        };
        (gamma, xi, w)
    }

    /// Coefficients at complex time `z` (real `z` for ordinary use).
    pub fn at_complex(&self, z: C64) -> Coefficients {
        let (gamma, xi, (w, dw)) = self.gamma_xi(z);
        let (gamma_adj, xi_adj) = if z.im == 0.0 {
            (gamma.adjoint(), xi.map(|x| x.conj()))
        } else {
            let (g, x, _) = self.gamma_xi(z.conj());
            (g.adjoint(), x.map(|x| x.conj()))
        };
        let lambda = if self.thermal {
            // Continuation of W' + γW + Wγ†; W is Hermitian on the real axis.
            &dw + &gamma * &w + &w * &gamma_adj
        } else {
            CMatrix::zeros(self.dim(), self.dim())
        };
        Coefficients {
            gamma,
            gamma_adj,
            xi,
            xi_adj,
            lambda,
        }
    }

    pub fn at(&self, t: f64) -> Coefficients {
        self.at_complex(C64::new(t, 0.0))
    }

    /// CSV with columns `t`, `re/im_gamma{j}{k}`, `re/im_xi{j}`,
    /// `re/im_lambda{j}{k}`, `pole_flag`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.dim();
        let mut header = vec!["t".to_string()];
        for name in ["gamma", "xi", "lambda"] {
            for j in 0..n {
                if name == "xi" {
                    header.push(format!("re_xi{j}"));
                    header.push(format!("im_xi{j}"));
                    continue;
                }
                for k in 0..n {
                    header.push(format!("re_{name}{j}{k}"));
                    header.push(format!("im_{name}{j}{k}"));
                }
            }
        }
        header.push("pole_flag".into());
        writeln!(out, "{}", header.join(","))?;
        let flags = self.pole_flags();
        for idx in 0..self.len() {
            let mut row = vec![fmt_f64(self.traj.time(idx))];
            let push = |row: &mut Vec<String>, z: C64| {
                row.push(fmt_f64(z.re));
                row.push(fmt_f64(z.im));
            };
            for z in self.gamma[idx].transpose().iter() {
                push(&mut row, *z);
            }
            for z in self.xi[idx].iter() {
                push(&mut row, *z);
            }
            for z in self.lambda[idx].transpose().iter() {
                push(&mut row, *z);
            }
            row.push(u8::from(flags[idx]).to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}
