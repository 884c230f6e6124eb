//! Steady-state closed forms, the Bloch-proportionality constraint,
//! solver discrepancies and pole diagnostics.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::coeffs::{convolution_track, CoeffsError, Drive};
use crate::spectral::{KernelSampler, SpectralError};
use crate::volterra::GreensTrajectory;
use crate::{C64, I};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("V(t) has not decayed: |V(t_end)| = {residual:.3e} exceeds {threshold:.3e}")]
    NonDecaying { residual: f64, threshold: f64 },
    #[error("found {found} poles, need at least {needed}")]
    TooFewPoles { found: usize, needed: usize },
    #[error("steady-state ratio needs a single mode, got {0}")]
    Dimension(usize),
    #[error("time {needed} lies outside the reference grid ending at {available}")]
    GridMismatch { needed: f64, available: f64 },
    #[error("series lengths differ: {0} times vs {1} values")]
    LengthMismatch(usize, usize),
    #[error("empty series")]
    EmptySeries,
    #[error(transparent)]
    Coeffs(#[from] CoeffsError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Steady `⟨σ_z⟩` of the driven qubit for a Lorentzian line centred on the
/// qubit (δ = 0), with coupling rate `gamma`, linewidth `lambda`, detuning
/// `delta` and drive `omega`.
pub fn sigma_z_closed_form(gamma: f64, lambda: f64, delta: f64, omega: f64) -> f64 {
    if omega == 0.0 {
        return -1.0;
    }
    let g2 = 0.5 * lambda * gamma;
    let num = 2.0 * omega * omega * (lambda * lambda + delta * delta);
    let den = (g2 - delta * delta).powi(2) + lambda * lambda * delta * delta;
    if den == 0.0 {
        return 0.0;
    }
    -1.0 / (1.0 + num / den)
}

/// Steady state of the proportional-coefficient Bloch equations, fixed by
/// the asymptotic convolution `c = lim (V∗Ω)(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioSteadyState {
    pub convolution: C64,
    pub sigma_z: f64,
    pub sigma_minus: C64,
}

impl RatioSteadyState {
    pub fn from_convolution(c: C64) -> Self {
        let sigma_z = -1.0 / (1.0 + 2.0 * c.norm_sqr());
        Self {
            convolution: c,
            sigma_z,
            sigma_minus: I * c * sigma_z,
        }
    }
}

/// `|V(t_end)|` below which the trajectory counts as decayed.
pub const DECAY_THRESHOLD: f64 = 1e-4;

/// Steady state from the long-time limit of `γ(t)⁻¹ξ(t) = (V∗Ω) + γ⁻¹ d/dt (V∗Ω)`,
/// evaluated at the end of `traj`. The second term is the exponential tail
/// of the convolution beyond the window.
pub fn general_steady_state_from_ratio(
    traj: &GreensTrajectory,
    drive: &Drive,
    threshold: f64,
) -> Result<RatioSteadyState, AnalysisError> {
    if traj.dim() != 1 {
        return Err(AnalysisError::Dimension(traj.dim()));
    }
    let last = traj.len() - 1;
    let residual = traj.v(last)[(0, 0)].norm();
    if !(residual <= threshold) {
        return Err(AnalysisError::NonDecaying { residual, threshold });
    }
    let conv = convolution_track(traj, drive)?;
    let gamma = -traj.dv(last)[(0, 0)] / traj.v(last)[(0, 0)];
    let mut c = conv.conv[last][0];
    if residual > 0.0 && gamma.is_finite() && gamma.norm() > 0.0 {
        c += conv.dconv[last][0] / gamma;
    }
    Ok(RatioSteadyState::from_convolution(c))
}

/// Steady state from the Laplace value `V̂(0) = (iΔ + F̂(0))⁻¹` of the
/// Green's function, for constant drive `omega`.
pub fn laplace_steady_state(detuning: f64, kernel: &KernelSampler, omega: C64) -> Result<RatioSteadyState, AnalysisError> {
    if kernel.dim() != 1 {
        return Err(AnalysisError::Dimension(kernel.dim()));
    }
    let f0 = kernel.laplace_at_zero()?[(0, 0)];
    let c = omega / (I * detuning + f0);
    Ok(RatioSteadyState::from_convolution(c))
}

/// Floor on the normaliser of [`constraint_residual`].
pub const VIOLATION_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintResidual {
    /// `⟨σ_z⟩(⟨σ_z⟩+1) + 2|⟨σ₋⟩|²`
    pub residual: f64,
    /// Residual over `max(|⟨σ_z⟩(⟨σ_z⟩+1)|, 2|⟨σ₋⟩|², floor)`.
    pub normalized: f64,
}

pub fn constraint_residual(sigma_z: f64, sigma_minus: C64) -> ConstraintResidual {
    let lhs = sigma_z * (sigma_z + 1.0);
    let rhs = 2.0 * sigma_minus.norm_sqr();
    let residual = lhs + rhs;
    ConstraintResidual {
        residual,
        normalized: residual / lhs.abs().max(rhs).max(VIOLATION_FLOOR),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Discrepancy {
    pub max_abs: f64,
    /// `(∫ (a - b)² dt)^{1/2}` over the times of `a`.
    pub l2: f64,
    /// Difference of the final values.
    pub steady_state: f64,
}

/// Compares series `a` against `b`, interpolating `b` linearly onto the
/// times of `a`.
pub fn discrepancy_report(times_a: &[f64], a: &[f64], times_b: &[f64], b: &[f64]) -> Result<Discrepancy, AnalysisError> {
    for (t, v) in [(times_a, a), (times_b, b)] {
        if t.len() != v.len() {
            return Err(AnalysisError::LengthMismatch(t.len(), v.len()));
        }
        if t.is_empty() {
            return Err(AnalysisError::EmptySeries);
        }
    }
    let (lo, hi) = (times_b[0], times_b[times_b.len() - 1]);
    let eps = 1e-9 * (1.0 + hi.abs());
    let diff: Vec<f64> = times_a
        .iter()
        .zip(a)
        .map(|(&t, &va)| {
            if t < lo - eps || t > hi + eps {
                return Err(AnalysisError::GridMismatch { needed: t, available: hi });
            }
            Ok(va - interpolate(times_b, b, t))
        })
        .collect::<Result<_, _>>()?;
    let max_abs = diff.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    let l2 = times_a
        .windows(2)
        .zip(diff.windows(2))
        .map(|(t, d)| 0.5 * (t[1] - t[0]) * (d[0] * d[0] + d[1] * d[1]))
        .sum::<f64>()
        .sqrt();
    Ok(Discrepancy {
        max_abs,
        l2,
        steady_state: (a[a.len() - 1] - b[b.len() - 1]).abs(),
    })
}

fn interpolate(ts: &[f64], ys: &[f64], t: f64) -> f64 {
    let i = ts.partition_point(|&x| x <= t);
    if i == 0 {
        return ys[0];
    }
    if i == ts.len() {
        return ys[ts.len() - 1];
    }
    let s = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
    ys[i - 1] + s * (ys[i] - ys[i - 1])
}

/// Poles of `γ(t)` and their asymptotic spacing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoleSpectrum {
    pub poles: Vec<f64>,
    /// Least-squares spacing over the later half of the poles.
    pub asymptotic_spacing: f64,
    /// `π/g` when a coupling `g` was given.
    pub expected_spacing: Option<f64>,
    pub relative_error: Option<f64>,
}

pub const MIN_POLES: usize = 3;

/// Pole times of `γ = -V'V⁻¹` (zeros of `det V`) with a linear fit of
/// their spacing, compared with `π/g` when `coupling` is given.
pub fn pole_spectrum(traj: &GreensTrajectory, coupling: Option<f64>) -> Result<PoleSpectrum, AnalysisError> {
    let poles = traj.near_singular_times().to_vec();
    if poles.len() < MIN_POLES {
        return Err(AnalysisError::TooFewPoles {
            found: poles.len(),
            needed: MIN_POLES,
        });
    }
    let start = (poles.len() / 2).min(poles.len() - 2);
    let tail = &poles[start..];
    let n = tail.len() as f64;
    let mean_k = (n - 1.0) / 2.0;
    let mean_t = tail.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, &t) in tail.iter().enumerate() {
        let dk = k as f64 - mean_k;
        sxy += dk * (t - mean_t);
        sxx += dk * dk;
    }
    let spacing = sxy / sxx;
    let expected = coupling.map(|g| std::f64::consts::PI / g);
    Ok(PoleSpectrum {
        poles,
        asymptotic_spacing: spacing,
        expected_spacing: expected,
        relative_error: expected.map(|e| (spacing - e).abs() / e),
    })
}

/// Interior indices `i` with `y[i-1] < y[i] >= y[i+1]`.
pub fn local_maxima(ys: &[f64]) -> Vec<usize> {
    (1..ys.len().saturating_sub(1))
        .filter(|&i| ys[i] > ys[i - 1] && ys[i] >= ys[i + 1])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SteadyStateSource {
    ClosedForm,
    QubitTlme,
    Pseudomode,
}

impl std::fmt::Display for SteadyStateSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SteadyStateSource::ClosedForm => "closed-form",
            SteadyStateSource::QubitTlme => "qubit-tlme",
            SteadyStateSource::Pseudomode => "pseudomode",
        })
    }
}

/// One point of a steady-state sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyStateRecord {
    pub delta: f64,
    pub source: SteadyStateSource,
    pub sigma_z: f64,
    pub sigma_minus: [f64; 2],
    pub constraint: ConstraintResidual,
    pub cutoff: Option<usize>,
    pub converged: bool,
}

impl SteadyStateRecord {
    pub fn new(delta: f64, source: SteadyStateSource, sigma_z: f64, sigma_minus: C64) -> Self {
        Self {
            delta,
            source,
            sigma_z,
            sigma_minus: [sigma_minus.re, sigma_minus.im],
            constraint: constraint_residual(sigma_z, sigma_minus),
            cutoff: None,
            converged: true,
        }
    }

    pub fn failed(delta: f64, source: SteadyStateSource) -> Self {
        Self {
            delta,
            source,
            sigma_z: f64::NAN,
            sigma_minus: [f64::NAN, f64::NAN],
            constraint: ConstraintResidual {
                residual: f64::NAN,
                normalized: f64::NAN,
            },
            cutoff: None,
            converged: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub delta: f64,
    pub residual: f64,
    pub normalized: f64,
}

/// JSON report: `{preset, source, metrics, poles, violations}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub preset: String,
    pub source: String,
    pub metrics: BTreeMap<String, f64>,
    pub poles: Vec<f64>,
    pub violations: Vec<Violation>,
}

impl Report {
    pub fn new(preset: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            preset: preset.into(),
            source: source.into(),
            metrics: BTreeMap::new(),
            poles: Vec::new(),
            violations: Vec::new(),
        }
    }

    /// Metrics and violations of a sweep: local maxima of `⟨σ_z⟩` (count
    /// and positions, overall and for Δ > 0) and the largest normalised
    /// constraint violation.
    pub fn from_sweep(preset: impl Into<String>, source: SteadyStateSource, records: &[SteadyStateRecord]) -> Self {
        let mut report = Self::new(preset, source.to_string());
        let ok: Vec<&SteadyStateRecord> = records.iter().filter(|r| r.converged).collect();
        let sz: Vec<f64> = ok.iter().map(|r| r.sigma_z).collect();
        let maxima = local_maxima(&sz);
        let positive = maxima.iter().filter(|&&i| ok[i].delta > 0.0).count();
        let m = &mut report.metrics;
        m.insert("points".into(), records.len() as f64);
        m.insert("converged_points".into(), ok.len() as f64);
        m.insert("local_maxima".into(), maxima.len() as f64);
        m.insert("local_maxima_positive_delta".into(), positive as f64);
        for (k, &i) in maxima.iter().enumerate() {
            m.insert(format!("local_maximum_{k}_delta"), ok[i].delta);
        }
        let worst = ok.iter().map(|r| r.constraint.normalized.abs()).fold(0.0, f64::max);
        m.insert("max_normalized_violation".into(), worst);
        let worst_residual = ok.iter().map(|r| r.constraint.residual.abs()).fold(0.0, f64::max);
        m.insert("max_constraint_residual".into(), worst_residual);
        report.violations = ok
            .iter()
            .map(|r| Violation {
                delta: r.delta,
                residual: r.constraint.residual,
                normalized: r.constraint.normalized,
            })
            .collect();
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::SpectralModel;
    use crate::volterra::{solve_volterra_expfast, CouplingMatrix};

    #[test]
    fn closed_form_limits() {
        assert_eq!(sigma_z_closed_form(1.0, 3.0, 0.4, 0.0), -1.0);
        let omega = 1.0 / 8f64.sqrt();
        assert!((sigma_z_closed_form(1.0, 2.0, 0.0, omega) + 0.5).abs() < 1e-15);
        // λΓ/2 = Δ² with λΔ = 0 only when λ = 0 and Δ = 0.
        assert_eq!(sigma_z_closed_form(1.0, 0.0, 0.0, 0.3), 0.0);
    }

    #[test]
    fn closed_form_peaks_at_vacuum_rabi_splitting() {
        // g = 100λ with λ = 1.
        let (lambda, gamma) = (1.0, 2.0e4);
        let deltas: Vec<f64> = (0..=2600).map(|i| -130.0 + 0.1 * i as f64).collect();
        let ys: Vec<f64> = deltas.iter().map(|&d| sigma_z_closed_form(gamma, lambda, d, 4.0)).collect();
        let maxima = local_maxima(&ys);
        assert_eq!(maxima.len(), 2);
        assert!((deltas[maxima[0]] + 100.0).abs() <= 0.1);
        assert!((deltas[maxima[1]] - 100.0).abs() <= 0.1);
    }

    #[test]
    fn ratio_agrees_with_closed_form() {
        let (gamma, lambda, omega) = (1.0, 4.0, 0.5);
        for &delta in &[0.0, 0.7, -2.3] {
            let k = KernelSampler::lorentzian(gamma, lambda, delta, 0.0).unwrap();
            let traj = solve_volterra_expfast(&CouplingMatrix::scalar(delta), &k, 0.01, 6_000).unwrap();
            let numeric = general_steady_state_from_ratio(&traj, &Drive::scalar(omega), DECAY_THRESHOLD).unwrap();
            let laplace = laplace_steady_state(delta, &k, C64::new(omega, 0.0)).unwrap();
            let exact = sigma_z_closed_form(gamma, lambda, delta, omega);
            assert!((laplace.sigma_z - exact).abs() < 1e-12);
            assert!((numeric.sigma_z - exact).abs() < 1e-8, "{} vs {exact}", numeric.sigma_z);
            let c = constraint_residual(numeric.sigma_z, numeric.sigma_minus);
            assert!(c.residual.abs() < 1e-12);
        }
    }

    #[test]
    fn markov_ratio() {
        let k = KernelSampler::new(vec![SpectralModel::markovian(1.0)], 1).unwrap();
        let (delta, omega) = (0.8, 0.6);
        let s = laplace_steady_state(delta, &k, C64::new(omega, 0.0)).unwrap();
        let expected = -1.0 / (1.0 + 2.0 * omega * omega / (0.25 + delta * delta));
        assert!((s.sigma_z - expected).abs() < 1e-14);
        let traj = solve_volterra_expfast(&CouplingMatrix::scalar(delta), &k, 0.01, 3_000).unwrap();
        let n = general_steady_state_from_ratio(&traj, &Drive::scalar(omega), DECAY_THRESHOLD).unwrap();
        assert!((n.sigma_z - expected).abs() < 1e-8);
        let none = laplace_steady_state(delta, &k, C64::new(0.0, 0.0)).unwrap();
        assert_eq!(none.sigma_z, -1.0);
    }

    #[test]
    fn ratio_rejects_undecayed_and_multimode() {
        let k = KernelSampler::lorentzian(1.0, 4.0, 0.0, 0.0).unwrap();
        let traj = solve_volterra_expfast(&CouplingMatrix::scalar(0.0), &k, 0.01, 100).unwrap();
        assert!(matches!(
            general_steady_state_from_ratio(&traj, &Drive::scalar(1.0), DECAY_THRESHOLD),
            Err(AnalysisError::NonDecaying { .. })
        ));
    }

    #[test]
    fn constraint_normalisation() {
        let c = constraint_residual(-1.0, C64::new(0.0, 0.0));
        assert_eq!(c.residual, 0.0);
        assert_eq!(c.normalized, 0.0);
        // Both sides tiny: the floor keeps the ratio finite.
        let c = constraint_residual(-1.0 + 1e-9, C64::new(0.0, 0.0));
        assert!((c.normalized - c.residual / VIOLATION_FLOOR).abs() < 1e-18);
        // Right-hand side zero, left side large: a 100% violation.
        let c = constraint_residual(-0.5, C64::new(0.0, 0.0));
        assert!((c.normalized + 1.0).abs() < 1e-15);
    }

    #[test]
    fn discrepancy_of_shifted_series() {
        let t: Vec<f64> = (0..=100).map(|i| 0.1 * i as f64).collect();
        let a: Vec<f64> = t.iter().map(|x| x.sin()).collect();
        let zero = discrepancy_report(&t, &a, &t, &a).unwrap();
        assert_eq!(zero.max_abs, 0.0);
        assert_eq!(zero.l2, 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 0.25).collect();
        let d = discrepancy_report(&t, &a, &t, &b).unwrap();
        assert!((d.max_abs - 0.25).abs() < 1e-14);
        assert!((d.l2 - 0.25 * 10f64.sqrt()).abs() < 1e-12);
        assert!((d.steady_state - 0.25).abs() < 1e-14);
        assert!(matches!(
            discrepancy_report(&[0.0, 20.0], &[0.0, 0.0], &t, &a),
            Err(AnalysisError::GridMismatch { .. })
        ));
    }

    #[test]
    fn strong_coupling_pole_spacing() {
        // (Γ/2λ)^{1/2} = 5 with Γ = 1: λ = 0.02, g = 0.1.
        let (gamma, lambda) = (1.0_f64, 0.02);
        let g = (0.5 * lambda * gamma).sqrt();
        let k = KernelSampler::lorentzian(gamma, lambda, 0.0, 0.0).unwrap();
        let traj = solve_volterra_expfast(&CouplingMatrix::scalar(0.0), &k, 0.05, 4_000).unwrap();
        let spec = pole_spectrum(&traj, Some(g)).unwrap();
        assert!(spec.poles.len() >= 5);
        assert!(spec.relative_error.unwrap() < 0.02);
    }

    #[test]
    fn no_poles_in_markov_limit_or_without_coupling() {
        let k = KernelSampler::lorentzian(1.0, 25.0, 0.0, 0.0).unwrap();
        let traj = solve_volterra_expfast(&CouplingMatrix::scalar(0.0), &k, 0.01, 2_000).unwrap();
        assert!(matches!(pole_spectrum(&traj, None), Err(AnalysisError::TooFewPoles { found: 0, .. })));
        let free = KernelSampler::lorentzian(0.0, 1.0, 0.0, 0.0).unwrap();
        let traj = solve_volterra_expfast(&CouplingMatrix::scalar(1.5), &free, 0.01, 2_000).unwrap();
        assert!(traj.near_singular_times().is_empty());
    }

    #[test]
    fn maxima_and_report() {
        assert_eq!(local_maxima(&[0.0, 1.0, 0.0, 2.0, 2.0, 1.0, 3.0]), vec![1, 3]);
        let records: Vec<SteadyStateRecord> = [(-1.0, -0.9), (0.5, -0.5), (1.0, -0.8), (1.5, -0.7), (2.0, -0.9)]
            .iter()
            .map(|&(d, z)| SteadyStateRecord::new(d, SteadyStateSource::Pseudomode, z, C64::new(0.0, 0.0)))
            .collect();
        let r = Report::from_sweep("demo", SteadyStateSource::Pseudomode, &records);
        assert_eq!(r.metrics["local_maxima"], 2.0);
        assert_eq!(r.metrics["local_maximum_0_delta"], 0.5);
        assert_eq!(r.violations.len(), 5);
        assert_eq!(r.source, "pseudomode");
    }
}
