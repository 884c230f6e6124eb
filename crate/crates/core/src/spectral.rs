//! Spectral densities and the dissipation / noise kernels they generate.
//!
//! A subenvironment is described by a scalar density shape `J(ω)`, a
//! temperature, and a coupling vector `κ_j` over the system modes, so that
//! `J_jk(ω) = κ_j κ_k* J(ω)`. The kernels are
//!
//! ```text
//! F_jk(τ) = Σ_α ∫ J_αjk(ω) e^{-iωτ} dω
//! G_jk(τ) = Σ_α ∫ J_αjk(ω) n_α(ω) e^{-iωτ} dω,   n(ω) = 1/(e^{(ω+ω₀)/T} - 1)
//! ```
//!
//! Frequencies are measured from the reference (drive) frequency `ω₀`.

use std::f64::consts::PI;
use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

use crate::quadrature;
use crate::{CMatrix, C64};

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("kernel lag must be non-negative, got {0}")]
    NegativeLag(f64),
    #[error("invalid spectral model: {0}")]
    InvalidModel(String),
    #[error("tabulated density too coarse: estimated quadrature error {estimate:.3e} exceeds tolerance {tolerance:.3e} at τ = {tau}")]
    GridTooCoarse {
        estimate: f64,
        tolerance: f64,
        tau: f64,
    },
    #[error("Bose factor pole ω = -ω₀ = {pole} lies inside the integration window [{lo}, {hi}]")]
    BosePoleInWindow { pole: f64, lo: f64, hi: f64 },
    #[error("a Markovian subenvironment at finite temperature needs an explicit reference frequency ω₀")]
    MissingReferenceFrequency,
    #[error("kernel has no Laplace transform available: {0}")]
    NoLaplaceTransform(String),
    #[error("failed to read tabulated density: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Lorentzian line `J(ω) = (Γ/2π) λ² / ((ω - Δ + δ)² + λ²)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Lorentzian {
    /// Coupling strength Γ.
    pub gamma: f64,
    /// Linewidth λ.
    pub width: f64,
    /// Qubit–drive detuning Δ.
    pub detuning: f64,
    /// Offset δ of the line centre from the qubit.
    pub offset: f64,
}

impl Lorentzian {
    pub fn new(gamma: f64, width: f64, detuning: f64, offset: f64) -> Self {
        Self {
            gamma,
            width,
            detuning,
            offset,
        }
    }

    /// Line centre `Δ - δ`.
    pub fn center(&self) -> f64 {
        self.detuning - self.offset
    }

    pub fn density(&self, omega: f64) -> f64 {
        let x = omega - self.center();
        self.gamma / (2.0 * PI) * self.width * self.width / (x * x + self.width * self.width)
    }

    /// Squared pseudomode coupling `g² = λΓ/2`, also `F(0)`.
    pub fn coupling_squared(&self) -> f64 {
        0.5 * self.gamma * self.width
    }

    /// Complex decay rate `μ = λ + i(Δ - δ)` of `F(τ) = g² e^{-μτ}`.
    pub fn rate(&self) -> C64 {
        C64::new(self.width, self.center())
    }

    /// Closed-form `F(τ) = (Γλ/2) exp[-i(Δ-δ)τ - λτ]` for τ ≥ 0.
    pub fn kernel(&self, tau: f64) -> C64 {
        self.coupling_squared() * (-self.rate() * tau).exp()
    }
}

/// Density sampled on a strictly increasing frequency grid, linearly
/// interpolated between samples and zero outside the table.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedDensity {
    omega: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedDensity {
    pub fn new(omega: Vec<f64>, values: Vec<f64>) -> Result<Self, SpectralError> {
        if omega.len() != values.len() {
            return Err(SpectralError::InvalidModel(format!(
                "{} frequencies but {} density values",
                omega.len(),
                values.len()
            )));
        }
        if omega.len() < 2 {
            return Err(SpectralError::InvalidModel(
                "tabulated density needs at least two samples".into(),
            ));
        }
        if omega.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SpectralError::InvalidModel(
                "frequency grid must be strictly increasing".into(),
            ));
        }
        if let Some((w, j)) = omega
            .iter()
            .zip(&values)
            .find(|(w, j)| !w.is_finite() || !j.is_finite() || **j < 0.0)
        {
            return Err(SpectralError::InvalidModel(format!(
                "density must be finite and non-negative, got J({w}) = {j}"
            )));
        }
        Ok(Self { omega, values })
    }

    /// Reads a two-column `ω J` text table. Columns are whitespace separated;
    /// anything after `#` on a line is ignored.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, SpectralError> {
        let mut omega = Vec::new();
        let mut values = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let cols: Vec<&str> = content.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(SpectralError::Parse {
                    line: idx + 1,
                    message: format!("expected 2 columns, found {}", cols.len()),
                });
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| SpectralError::Parse {
                    line: idx + 1,
                    message: format!("`{s}`: {e}"),
                })
            };
            omega.push(parse(cols[0])?);
            values.push(parse(cols[1])?);
        }
        Self::new(omega, values)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, SpectralError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.omega
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn density(&self, omega: f64) -> f64 {
        let w = &self.omega;
        if omega < w[0] || omega > w[w.len() - 1] {
            return 0.0;
        }
        let k = w.partition_point(|&x| x <= omega).clamp(1, w.len() - 1);
        let s = (omega - w[k - 1]) / (w[k] - w[k - 1]);
        self.values[k - 1] * (1.0 - s) + self.values[k] * s
    }

    /// Every other sample (keeping both ends), for Richardson error estimates.
    fn coarsened(&self) -> Option<Self> {
        if self.omega.len() < 3 {
            return None;
        }
        let last = self.omega.len() - 1;
        let keep: Vec<usize> = (0..=last)
            .filter(|&i| i % 2 == 0 || i == last)
            .collect();
        Some(Self {
            omega: keep.iter().map(|&i| self.omega[i]).collect(),
            values: keep.iter().map(|&i| self.values[i]).collect(),
        })
    }

    /// Exact Fourier transform `∫ J(ω) e^{-iωτ} dω` of the interpolant.
    pub fn fourier(&self, tau: f64) -> C64 {
        self.omega
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(w, j)| {
                let h = w[1] - w[0];
                let theta = tau * h;
                let (e0, e1) = linear_phase_moments(theta);
                C64::new(0.0, -w[0] * tau).exp() * h * ((e0 - e1) * j[0] + e1 * j[1])
            })
            .sum()
    }

    /// `∫ J(ω) dω` of the interpolant.
    pub fn total_weight(&self) -> f64 {
        self.omega
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(w, j)| 0.5 * (w[1] - w[0]) * (j[0] + j[1]))
            .sum()
    }

    /// `F̂(0) = ∫₀^∞ F(τ)dτ = π J(0) - i P∫ J(ω)/ω dω` of the interpolant.
    fn laplace_at_zero(&self) -> Result<C64, SpectralError> {
        let w = &self.omega;
        let (lo, hi) = (w[0], w[w.len() - 1]);
        let j0 = self.density(0.0);
        if j0 > 0.0 && (lo == 0.0 || hi == 0.0) {
            return Err(SpectralError::NoLaplaceTransform(
                "density is non-zero at ω = 0 on the edge of the table".into(),
            ));
        }
        // P∫ J/ω = ∫ (J - J(0))/ω + J(0) P∫ dω/ω; the first integrand is bounded.
        let mut pv = if j0 > 0.0 { j0 * (hi.abs().ln() - lo.abs().ln()) } else { 0.0 };
        for (seg, j) in w.windows(2).zip(self.values.windows(2)) {
            let (a, b) = (seg[0], seg[1]);
            let q = (j[1] - j[0]) / (b - a);
            let p = j[0] - q * a;
            pv += q * (b - a);
            if a > 0.0 || b < 0.0 {
                pv += (p - j0) * (b.abs().ln() - a.abs().ln());
            }
        }
        Ok(C64::new(PI * j0, -pv))
    }
}

/// `(∫₀¹ e^{-iθs} ds, ∫₀¹ s e^{-iθs} ds)`, with a series near θ = 0.
fn linear_phase_moments(theta: f64) -> (C64, C64) {
    if theta.abs() < 0.5 {
        let z = C64::new(0.0, -theta);
        let mut term = C64::new(1.0, 0.0);
        let mut e0 = C64::new(0.0, 0.0);
        let mut e1 = C64::new(0.0, 0.0);
        for k in 0..24 {
            let kf = k as f64;
            e0 += term / (kf + 1.0);
            e1 += term / (kf + 2.0);
            term = term * z / (kf + 1.0);
        }
        (e0, e1)
    } else {
        let it = C64::new(0.0, theta);
        let ph = C64::new(0.0, -theta).exp();
        let e0 = (C64::new(1.0, 0.0) - ph) / it;
        let e1 = -ph / it + e0 / it;
        (e0, e1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpectralShape {
    Lorentzian(Lorentzian),
    /// Flat density `Γ/2π`: a delta-correlated kernel `F(τ) = Γ δ(τ)`.
    Markovian { gamma: f64 },
    Tabulated(TabulatedDensity),
}

/// One subenvironment.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    pub shape: SpectralShape,
    /// Temperature `T ≥ 0` in frequency units.
    pub temperature: f64,
    /// Reference frequency `ω₀` entering the Bose factor. `None` picks a
    /// default that keeps `ω + ω₀ > 0` across the integration window.
    pub reference_frequency: Option<f64>,
    /// Coupling of each system mode to this subenvironment.
    pub coupling: Vec<C64>,
}

impl SpectralModel {
    pub fn lorentzian(gamma: f64, width: f64, detuning: f64, offset: f64) -> Self {
        Self::single_mode(SpectralShape::Lorentzian(Lorentzian::new(
            gamma, width, detuning, offset,
        )))
    }

    pub fn markovian(gamma: f64) -> Self {
        Self::single_mode(SpectralShape::Markovian { gamma })
    }

    pub fn tabulated(table: TabulatedDensity) -> Self {
        Self::single_mode(SpectralShape::Tabulated(table))
    }

    fn single_mode(shape: SpectralShape) -> Self {
        Self {
            shape,
            temperature: 0.0,
            reference_frequency: None,
            coupling: vec![C64::new(1.0, 0.0)],
        }
    }

    pub fn with_temperature(mut self, temperature: f64, reference_frequency: Option<f64>) -> Self {
        self.temperature = temperature;
        self.reference_frequency = reference_frequency;
        self
    }

    pub fn with_coupling(mut self, coupling: Vec<C64>) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn density(&self, omega: f64) -> f64 {
        match &self.shape {
            SpectralShape::Lorentzian(l) => l.density(omega),
            SpectralShape::Markovian { gamma } => gamma / (2.0 * PI),
            SpectralShape::Tabulated(t) => t.density(omega),
        }
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        let bad = |m: &str| Err(SpectralError::InvalidModel(m.to_string()));
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return bad("temperature must be finite and ≥ 0");
        }
        if self.coupling.is_empty() || self.coupling.iter().any(|k| !k.is_finite()) {
            return bad("coupling vector must be non-empty and finite");
        }
        match &self.shape {
            SpectralShape::Lorentzian(l) => {
                if !(l.gamma >= 0.0) || !(l.width > 0.0) {
                    return bad("Lorentzian needs Γ ≥ 0 and λ > 0");
                }
                if !l.detuning.is_finite() || !l.offset.is_finite() {
                    return bad("Lorentzian detuning and offset must be finite");
                }
            }
            SpectralShape::Markovian { gamma } => {
                if !(*gamma >= 0.0) {
                    return bad("Markovian Γ must be ≥ 0");
                }
                if self.temperature > 0.0 && self.reference_frequency.is_none() {
                    return Err(SpectralError::MissingReferenceFrequency);
                }
            }
            SpectralShape::Tabulated(_) => {}
        }
        if let Some(w0) = self.reference_frequency {
            if !w0.is_finite() {
                return bad("reference frequency must be finite");
            }
        }
        Ok(())
    }

    fn weights(&self) -> CMatrix {
        let n = self.coupling.len();
        CMatrix::from_fn(n, n, |j, k| self.coupling[j] * self.coupling[k].conj())
    }
}

/// Tuning knobs for the numerical kernel paths.
#[derive(Debug, Clone, Copy)]
pub struct KernelOptions {
    /// Relative tolerance of the adaptive frequency quadrature.
    pub quadrature_tolerance: f64,
    /// Relative tolerance on the estimated interpolation error of tabulated
    /// densities (relative to `∫J dω`).
    pub tabulated_tolerance: f64,
    /// Half-width of the thermal integration window, in linewidths.
    pub window_widths: f64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            quadrature_tolerance: 1e-11,
            tabulated_tolerance: 1e-6,
            window_widths: 50.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Component {
    model: SpectralModel,
    weights: CMatrix,
    omega0: f64,
    coarse: Option<TabulatedDensity>,
}

impl Component {
    fn window(&self, opts: &KernelOptions) -> Option<(f64, f64)> {
        match &self.model.shape {
            SpectralShape::Lorentzian(l) => {
                let half = opts.window_widths * l.width;
                Some((l.center() - half, l.center() + half))
            }
            SpectralShape::Tabulated(t) => {
                let w = t.frequencies();
                Some((w[0], w[w.len() - 1]))
            }
            SpectralShape::Markovian { .. } => None,
        }
    }

    fn bose(&self, omega: f64) -> f64 {
        let t = self.model.temperature;
        if t == 0.0 {
            0.0
        } else {
            1.0 / ((omega + self.omega0) / t).exp_m1()
        }
    }
}

/// Immutable evaluator for `F(τ)` and `G(τ)` over a set of subenvironments.
#[derive(Debug, Clone)]
pub struct KernelSampler {
    dim: usize,
    components: Vec<Component>,
    options: KernelOptions,
}

impl KernelSampler {
    pub fn new(models: Vec<SpectralModel>, dim: usize) -> Result<Self, SpectralError> {
        Self::with_options(models, dim, KernelOptions::default())
    }

    pub fn with_options(
        models: Vec<SpectralModel>,
        dim: usize,
        options: KernelOptions,
    ) -> Result<Self, SpectralError> {
        if dim == 0 {
            return Err(SpectralError::InvalidModel("system dimension must be ≥ 1".into()));
        }
        let mut components = Vec::with_capacity(models.len());
        for model in models {
            model.validate()?;
            if model.coupling.len() != dim {
                return Err(SpectralError::InvalidModel(format!(
                    "coupling vector has length {} but the system has {dim} modes",
                    model.coupling.len()
                )));
            }
            let mut c = Component {
                weights: model.weights(),
                omega0: 0.0,
                coarse: match &model.shape {
                    SpectralShape::Tabulated(t) => t.coarsened(),
                    _ => None,
                },
                model,
            };
            c.omega0 = match c.model.reference_frequency {
                Some(w0) => w0,
                None => match c.window(&options) {
                    Some((lo, hi)) => 2.0 * lo.abs().max(hi.abs()) + 1.0,
                    None => 0.0,
                },
            };
            if c.model.temperature > 0.0 {
                if let Some((lo, hi)) = c.window(&options) {
                    if lo <= -c.omega0 {
                        return Err(SpectralError::BosePoleInWindow {
                            pole: -c.omega0,
                            lo,
                            hi,
                        });
                    }
                }
            }
            components.push(c);
        }
        Ok(Self {
            dim,
            components,
            options,
        })
    }

    /// Single-mode Lorentzian at zero temperature.
    pub fn lorentzian(gamma: f64, width: f64, detuning: f64, offset: f64) -> Result<Self, SpectralError> {
        Self::new(vec![SpectralModel::lorentzian(gamma, width, detuning, offset)], 1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn models(&self) -> impl Iterator<Item = &SpectralModel> {
        self.components.iter().map(|c| &c.model)
    }

    /// Reference frequency actually used for subenvironment `index`.
    pub fn reference_frequency(&self, index: usize) -> Option<f64> {
        self.components.get(index).map(|c| c.omega0)
    }

    /// True when `F` is evaluated in closed form (no tabulated component).
    pub fn is_analytic(&self) -> bool {
        self.components
            .iter()
            .all(|c| !matches!(c.model.shape, SpectralShape::Tabulated(_)))
    }

    pub fn is_zero_temperature(&self) -> bool {
        self.components.iter().all(|c| c.model.temperature == 0.0)
    }

    fn zeros(&self) -> CMatrix {
        CMatrix::zeros(self.dim, self.dim)
    }

    /// Regular part of the dissipation kernel `F(τ)`, τ ≥ 0. Markovian
    /// subenvironments contribute only through [`Self::local_dissipation`].
    pub fn dissipation(&self, tau: f64) -> Result<CMatrix, SpectralError> {
        if !(tau >= 0.0) {
            return Err(SpectralError::NegativeLag(tau));
        }
        let mut out = self.zeros();
        for c in &self.components {
            let f = match &c.model.shape {
                SpectralShape::Lorentzian(l) => l.kernel(tau),
                SpectralShape::Markovian { .. } => continue,
                SpectralShape::Tabulated(t) => {
                    let fine = t.fourier(tau);
                    if let Some(coarse) = &c.coarse {
                        let estimate = (fine - coarse.fourier(tau)).norm() / 3.0;
                        let tolerance = self.options.tabulated_tolerance * t.total_weight().max(f64::MIN_POSITIVE);
                        if estimate > tolerance {
                            return Err(SpectralError::GridTooCoarse {
                                estimate,
                                tolerance,
                                tau,
                            });
                        }
                    }
                    fine
                }
            };
            out += &c.weights * f;
        }
        Ok(out)
    }

    /// Coefficient `L` of the delta-correlated part, entering the Green's
    /// function equation as `-L V(t)` (half the delta weight at the endpoint).
    pub fn local_dissipation(&self) -> CMatrix {
        let mut out = self.zeros();
        for c in &self.components {
            if let SpectralShape::Markovian { gamma } = c.model.shape {
                out += &c.weights * C64::new(0.5 * gamma, 0.0);
            }
        }
        out
    }

    /// Noise kernel `G(τ)` for any real τ, by frequency quadrature.
    /// Markovian subenvironments contribute only through [`Self::local_noise`].
    pub fn noise(&self, tau: f64) -> Result<CMatrix, SpectralError> {
        if !tau.is_finite() {
            return Err(SpectralError::InvalidModel(format!("non-finite lag {tau}")));
        }
        let mut out = self.zeros();
        for c in &self.components {
            if c.model.temperature == 0.0 {
                continue;
            }
            let Some((lo, hi)) = c.window(&self.options) else {
                continue;
            };
            let value = match &c.model.shape {
                SpectralShape::Lorentzian(l) => {
                    let integrand = |w: f64| C64::new(0.0, -w * tau).exp() * (l.density(w) * c.bose(w));
                    let panels = 16 + ((hi - lo) * tau.abs() / PI).ceil() as usize;
                    quadrature::integrate(
                        integrand,
                        lo,
                        hi,
                        panels,
                        0.0,
                        self.options.quadrature_tolerance,
                        200_000,
                    )
                    .value
                }
                SpectralShape::Tabulated(t) => {
                    let w = t.frequencies();
                    let integrand = |x: f64| C64::new(0.0, -x * tau).exp() * (t.density(x) * c.bose(x));
                    w.windows(2)
                        .map(|seg| {
                            let panels = 1 + ((seg[1] - seg[0]) * tau.abs() / PI).ceil() as usize;
                            quadrature::integrate(
                                &integrand,
                                seg[0],
                                seg[1],
                                panels,
                                0.0,
                                self.options.quadrature_tolerance,
                                10_000,
                            )
                            .value
                        })
                        .sum()
                }
                SpectralShape::Markovian { .. } => continue,
            };
            out += &c.weights * value;
        }
        Ok(out)
    }

    /// Delta-correlated part of the noise: `G(τ) ⊃ Γ n(0) δ(τ)` for Markovian
    /// subenvironments.
    pub fn local_noise(&self) -> CMatrix {
        let mut out = self.zeros();
        for c in &self.components {
            if let SpectralShape::Markovian { gamma } = c.model.shape {
                if c.model.temperature > 0.0 {
                    out += &c.weights * C64::new(gamma * c.bose(0.0), 0.0);
                }
            }
        }
        out
    }

    /// Exponential decomposition `F(τ) = Σ A_c e^{-μ_c τ}` when every
    /// component is Lorentzian or Markovian; `None` otherwise.
    pub fn exponential_terms(&self) -> Option<Vec<(CMatrix, C64)>> {
        let mut terms = Vec::new();
        for c in &self.components {
            match &c.model.shape {
                SpectralShape::Lorentzian(l) => {
                    terms.push((&c.weights * C64::new(l.coupling_squared(), 0.0), l.rate()))
                }
                SpectralShape::Markovian { .. } => {}
                SpectralShape::Tabulated(_) => return None,
            }
        }
        Some(terms)
    }

    /// `F̂(0) = ∫₀^∞ F(τ) dτ` including the local part.
    pub fn laplace_at_zero(&self) -> Result<CMatrix, SpectralError> {
        let mut out = self.local_dissipation();
        for c in &self.components {
            let value = match &c.model.shape {
                SpectralShape::Lorentzian(l) => l.coupling_squared() / l.rate(),
                SpectralShape::Markovian { .. } => continue,
                SpectralShape::Tabulated(t) => t.laplace_at_zero()?,
            };
            out += &c.weights * value;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn simpson<F: Fn(f64) -> C64>(f: F, a: f64, b: f64, n: usize) -> C64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * (h / 3.0)
    }

    #[test]
    fn lorentzian_weight_is_gamma_lambda_over_two() {
        // Full-line integral via ω = c + λ tan θ, which makes J dω = Γλ/2π dθ.
        for &(g, l) in &[(1.0, 2.0), (0.3, 0.05), (2.0, 25.0)] {
            let lor = Lorentzian::new(g, l, 0.4, 0.1);
            let total = simpson(
                |th: f64| {
                    let w = lor.center() + l * th.tan();
                    C64::new(lor.density(w) * l / th.cos().powi(2), 0.0)
                },
                -PI / 2.0 + 1e-9,
                PI / 2.0 - 1e-9,
                20_000,
            );
            assert_abs_diff_eq!(total.re, g * l / 2.0, epsilon = 1e-7 * g * l);
        }
    }

    #[test]
    fn dissipation_examples() {
        let k = KernelSampler::lorentzian(1.0, 2.0, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(k.dissipation(0.0).unwrap()[(0, 0)].re, 1.0, epsilon = 1e-15);
        let k = KernelSampler::lorentzian(1.0, 1.0, 0.0, 0.0).unwrap();
        let f1 = k.dissipation(1.0).unwrap()[(0, 0)];
        assert_abs_diff_eq!(f1.re, 0.5 * (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(f1.im, 0.0, epsilon = 1e-15);
        let k = KernelSampler::lorentzian(0.0, 1.0, 0.3, 0.0).unwrap();
        assert_eq!(k.dissipation(1e-9).unwrap()[(0, 0)], C64::new(0.0, 0.0));
    }

    #[test]
    fn negative_lag_rejected() {
        let k = KernelSampler::lorentzian(1.0, 1.0, 0.0, 0.0).unwrap();
        assert!(matches!(k.dissipation(-0.1), Err(SpectralError::NegativeLag(_))));
    }

    #[test]
    fn zero_temperature_noise_vanishes() {
        let k = KernelSampler::lorentzian(1.0, 1.0, 0.2, 0.0).unwrap();
        for &t in &[-3.0, 0.0, 0.5, 4.0] {
            assert_eq!(k.noise(t).unwrap(), CMatrix::zeros(1, 1));
        }
        assert!(k.is_zero_temperature());
    }

    #[test]
    fn thermal_noise_at_zero_lag_matches_direct_quadrature() {
        let model = SpectralModel::lorentzian(1.0, 1.0, 0.0, 0.0).with_temperature(8.0, Some(60.0));
        let k = KernelSampler::new(vec![model], 1).unwrap();
        let g0 = k.noise(0.0).unwrap()[(0, 0)];
        let lor = Lorentzian::new(1.0, 1.0, 0.0, 0.0);
        let oracle = simpson(
            |w| C64::new(lor.density(w) / ((w + 60.0) / 8.0).exp_m1(), 0.0),
            -50.0,
            50.0,
            400_000,
        );
        assert!(g0.re > 0.0);
        assert_abs_diff_eq!(g0.im, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g0.re, oracle.re, epsilon = 1e-10 * oracle.re);
    }

    #[test]
    fn noise_is_hermitian_in_lag() {
        let model = SpectralModel::lorentzian(1.0, 0.7, 0.5, 0.1).with_temperature(3.0, Some(40.0));
        let k = KernelSampler::new(vec![model], 1).unwrap();
        for &t in &[0.3, 1.7] {
            let gp = k.noise(t).unwrap();
            let gm = k.noise(-t).unwrap();
            assert!((gm - gp.adjoint()).norm() < 1e-10);
        }
    }

    #[test]
    fn two_mode_noise_is_psd_at_zero_lag() {
        let model = SpectralModel::lorentzian(1.0, 0.5, 0.0, 0.0)
            .with_temperature(5.0, Some(30.0))
            .with_coupling(vec![C64::new(1.0, 0.0), C64::new(0.3, 0.4)]);
        let k = KernelSampler::new(vec![model], 2).unwrap();
        let g0 = k.noise(0.0).unwrap();
        assert!((&g0 - g0.adjoint()).norm() < 1e-12);
        assert!(crate::min_hermitian_eigenvalue(&g0) > -1e-12);
    }

    #[test]
    fn bose_pole_inside_window_is_rejected() {
        let model = SpectralModel::lorentzian(1.0, 1.0, 0.0, 0.0).with_temperature(1.0, Some(10.0));
        assert!(matches!(
            KernelSampler::new(vec![model], 1),
            Err(SpectralError::BosePoleInWindow { .. })
        ));
    }

    #[test]
    fn markovian_kernel_is_local() {
        let k = KernelSampler::new(vec![SpectralModel::markovian(1.0)], 1).unwrap();
        assert_eq!(k.dissipation(0.3).unwrap()[(0, 0)], C64::new(0.0, 0.0));
        assert_abs_diff_eq!(k.local_dissipation()[(0, 0)].re, 0.5);
        let thermal = SpectralModel::markovian(1.0).with_temperature(1.0, None);
        assert!(matches!(
            KernelSampler::new(vec![thermal], 1),
            Err(SpectralError::MissingReferenceFrequency)
        ));
    }

    fn sampled_lorentzian(n: usize, half: f64) -> TabulatedDensity {
        let lor = Lorentzian::new(1.0, 1.0, 0.0, 0.0);
        let w: Vec<f64> = (0..n).map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64).collect();
        let j = w.iter().map(|&x| lor.density(x)).collect();
        TabulatedDensity::new(w, j).unwrap()
    }

    #[test]
    fn tabulated_fourier_of_fine_table_tracks_lorentzian_shape() {
        let table = sampled_lorentzian(40_001, 200.0);
        let k = KernelSampler::new(vec![SpectralModel::tabulated(table.clone())], 1).unwrap();
        assert!(!k.is_analytic());
        // Truncating the Lorentzian at ±200λ removes ≈ Γ/(π·200) of weight.
        let tail = 1.0 / (PI * 200.0);
        let f0 = k.dissipation(0.0).unwrap()[(0, 0)];
        assert_abs_diff_eq!(f0.re, 0.5 - tail, epsilon = 1e-5);
        // Exact-interpolant transform agrees with brute-force Simpson on the same interpolant.
        let tau = 1.3;
        let brute = simpson(|w| C64::new(0.0, -w * tau).exp() * table.density(w), -200.0, 200.0, 800_000);
        assert_abs_diff_eq!(table.fourier(tau).re, brute.re, epsilon = 1e-8);
        assert_abs_diff_eq!(table.fourier(tau).im, brute.im, epsilon = 1e-8);
    }

    #[test]
    fn coarse_table_is_rejected() {
        let table = sampled_lorentzian(21, 20.0);
        let k = KernelSampler::new(vec![SpectralModel::tabulated(table)], 1).unwrap();
        assert!(matches!(k.dissipation(0.5), Err(SpectralError::GridTooCoarse { .. })));
    }

    #[test]
    fn tabulated_kernel_has_hermitian_symmetry() {
        let table = TabulatedDensity::new(vec![-1.0, 0.0, 0.5, 2.0], vec![0.0, 1.0, 0.7, 0.0]).unwrap();
        let f = table.fourier(0.8);
        let fm = table.fourier(-0.8);
        assert_abs_diff_eq!((fm - f.conj()).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn table_file_parsing() {
        let text = "# omega J\n-1.0 0.0\n 0.0\t1.0 # peak\n\n1.0 0.0\n";
        let t = TabulatedDensity::from_reader(text.as_bytes()).unwrap();
        assert_eq!(t.frequencies(), &[-1.0, 0.0, 1.0]);
        assert_abs_diff_eq!(t.density(0.5), 0.5);
        assert_eq!(t.density(2.0), 0.0);
        let bad = "0.0 1.0 2.0\n";
        assert!(matches!(
            TabulatedDensity::from_reader(bad.as_bytes()),
            Err(SpectralError::Parse { line: 1, .. })
        ));
        assert!(TabulatedDensity::new(vec![0.0, 1.0], vec![1.0, -0.1]).is_err());
    }

    #[test]
    fn tabulated_laplace_matches_time_integral() {
        let table = TabulatedDensity::new(vec![-1.0, -0.2, 0.4, 1.5], vec![0.0, 0.8, 0.6, 0.0]).unwrap();
        let k = KernelSampler::new(vec![SpectralModel::tabulated(table.clone())], 1).unwrap();
        let analytic = k.laplace_at_zero().unwrap()[(0, 0)];
        // ∫₀^T F(τ) e^{-ετ} dτ with a small regulator, by brute force.
        let eps = 1e-3;
        let numeric = simpson(|t| table.fourier(t) * (-eps * t).exp(), 0.0, 12_000.0, 2_400_000);
        assert_abs_diff_eq!(analytic.re, numeric.re, epsilon = 5e-3);
        assert_abs_diff_eq!(analytic.im, numeric.im, epsilon = 5e-3);
    }
}
