//! Qubit coupled to a damped harmonic oscillator (pseudomode), the exact
//! Lindblad equivalent of a Lorentzian environment:
//!
//! ```text
//! dρ/dt = -i[H, ρ] + λ (2bρb† - b†bρ - ρb†b)
//! H = Δσ₊σ₋ + (Δ-δ) b†b + Ω(σ₊ + σ₋) + g(σ₊b + b†σ₋),  g = (λΓ/2)^{1/2}
//! ```
//!
//! States live on the `QubitFock` basis, index `q + 2n`. Every solve is
//! repeated at a larger Fock cutoff and accepted only when the qubit
//! observables agree.

use serde::Serialize;
use thiserror::Error;

use crate::banded::{BandMatrix, BandedError};
use crate::evolve::{Basis, DensityMatrix, EvolveConfig, EvolveError, ObservableKind, Trajectory};
use crate::ode::{dopri5, Dopri5Options, OdeError, StepStats};
use crate::{max_abs, min_hermitian_eigenvalue, CMatrix, C64, I};

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("invalid pseudomode model: {0}")]
    InvalidModel(String),
    #[error("Fock cutoff not converged: observables moved by {shift:.3e} between cutoffs {cutoff} and {next} (tolerance {tolerance:.1e}, limit {limit})")]
    CutoffNotConverged {
        cutoff: usize,
        next: usize,
        shift: f64,
        tolerance: f64,
        limit: usize,
    },
    #[error("steady state not reached by t = {horizon}: relative change {change:.3e} over the last window")]
    SteadyStateNotReached { horizon: f64, change: f64 },
    #[error("initial state on basis {0:?} cannot seed the pseudomode model")]
    Basis(Basis),
    #[error("steady-state solve failed: {0}")]
    Singular(#[from] BandedError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
}

/// Cutoff increment used by the convergence check.
pub const CUTOFF_INCREMENT: usize = 5;
/// Largest cutoff solved through the generator null space; larger cutoffs
/// integrate to the steady state instead.
pub const NULL_SPACE_MAX_CUTOFF: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudomodeModel {
    /// Δ
    pub detuning: f64,
    /// δ
    pub offset: f64,
    /// λ
    pub linewidth: f64,
    /// g
    pub coupling: f64,
    /// Ω
    pub drive: f64,
    /// Starting Fock cutoff.
    pub cutoff: usize,
    /// Largest shift of `⟨σ_z⟩`, `⟨σ₋⟩` accepted between successive cutoffs.
    pub cutoff_tolerance: f64,
    pub max_cutoff: usize,
}

impl PseudomodeModel {
    /// Model for the Lorentzian `(Γ, λ, Δ, δ)` with `g = (λΓ/2)^{1/2}`.
    pub fn from_rate(gamma: f64, linewidth: f64, detuning: f64, offset: f64, drive: f64) -> Self {
        Self {
            detuning,
            offset,
            linewidth,
            coupling: (0.5 * linewidth * gamma).max(0.0).sqrt(),
            drive,
            cutoff: 10,
            cutoff_tolerance: 1e-6,
            max_cutoff: 60,
        }
    }

    pub fn with_cutoff(mut self, cutoff: usize) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn validate(&self) -> Result<(), ReferenceError> {
        let bad = |m: &str| Err(ReferenceError::InvalidModel(m.into()));
        let finite = [self.detuning, self.offset, self.linewidth, self.coupling, self.drive, self.cutoff_tolerance];
        if finite.iter().any(|x| !x.is_finite()) {
            return bad("parameters must be finite");
        }
        if self.linewidth < 0.0 {
            return bad("linewidth must be non-negative");
        }
        if self.coupling < 0.0 {
            return bad("coupling must be non-negative");
        }
        if self.cutoff < 2 {
            return bad("cutoff must be at least 2");
        }
        if self.max_cutoff < self.cutoff + CUTOFF_INCREMENT {
            return bad("max_cutoff leaves no room for the convergence check");
        }
        Ok(())
    }

    /// Hamiltonian on `QubitFock(cutoff)`.
    pub fn hamiltonian(&self, cutoff: usize) -> CMatrix {
        let d = 2 * (cutoff + 1);
        let mut h = CMatrix::zeros(d, d);
        let re = |x: f64| C64::new(x, 0.0);
        for n in 0..=cutoff {
            let (g, e) = (2 * n, 2 * n + 1);
            h[(e, e)] += re(self.detuning);
            h[(g, g)] += re((self.detuning - self.offset) * n as f64);
            h[(e, e)] += re((self.detuning - self.offset) * n as f64);
            h[(e, g)] += re(self.drive);
            h[(g, e)] += re(self.drive);
            if n > 0 {
                // σ₊b: |g,n⟩ → √n |e,n-1⟩
                let c = self.coupling * (n as f64).sqrt();
                h[(2 * (n - 1) + 1, g)] += re(c);
                h[(g, 2 * (n - 1) + 1)] += re(c);
            }
        }
        h
    }

    /// Generator `L` acting on `vec(ρ)` (column-major, `k = i + D j`) as
    /// `(row, col, value)` triplets.
    pub fn generator(&self, cutoff: usize) -> Vec<(usize, usize, C64)> {
        let d = 2 * (cutoff + 1);
        let h = self.hamiltonian(cutoff);
        let h_entries: Vec<(usize, usize, C64)> = (0..d)
            .flat_map(|r| (0..d).map(move |c| (r, c)))
            .filter(|&(r, c)| h[(r, c)] != C64::new(0.0, 0.0))
            .map(|(r, c)| (r, c, h[(r, c)]))
            .collect();
        let b = annihilation(cutoff);
        let lam = self.linewidth;
        let mut out = Vec::new();
        for &(r, c, v) in &h_entries {
            for j in 0..d {
                out.push((r + d * j, c + d * j, -I * v));
                out.push((j + d * c, j + d * r, I * v));
            }
        }
        if lam > 0.0 {
            for &(d1, s1, c1) in &b {
                for &(d2, s2, c2) in &b {
                    out.push((d1 + d * d2, s1 + d * s2, C64::new(2.0 * lam * c1 * c2, 0.0)));
                }
            }
            for j in 0..d {
                for i in 0..d {
                    let n = (i / 2 + j / 2) as f64;
                    if n > 0.0 {
                        out.push((i + d * j, i + d * j, C64::new(-lam * n, 0.0)));
                    }
                }
            }
        }
        out
    }
}

/// `b = Σ √n |q,n-1⟩⟨q,n|` as `(dst, src, √n)`.
fn annihilation(cutoff: usize) -> Vec<(usize, usize, f64)> {
    (1..=cutoff)
        .flat_map(|n| (0..2).map(move |q| (q + 2 * (n - 1), q + 2 * n, (n as f64).sqrt())))
        .collect()
}

/// `⟨σ_z⟩` and `⟨σ₋⟩` of the reduced qubit state.
pub fn qubit_observables(rho: &CMatrix) -> (f64, C64) {
    let levels = rho.nrows() / 2;
    let mut sz = 0.0;
    let mut sm = C64::new(0.0, 0.0);
    for n in 0..levels {
        let (g, e) = (2 * n, 2 * n + 1);
        sz += rho[(e, e)].re - rho[(g, g)].re;
        sm += rho[(e, g)];
    }
    (sz, sm)
}

/// Mean photon number of the oscillator.
pub fn photon_number(rho: &CMatrix) -> f64 {
    (0..rho.nrows()).map(|i| (i / 2) as f64 * rho[(i, i)].re).sum()
}

fn top_population(rho: &CMatrix) -> f64 {
    let d = rho.nrows();
    (rho[(d - 2, d - 2)].re + rho[(d - 1, d - 1)].re) / rho.trace().re
}

/// Embeds `ρ₀` on `QubitFock(cutoff)`: a qubit state is tensored with the
/// oscillator vacuum, a smaller `QubitFock` state is zero-padded.
fn embed(rho0: &DensityMatrix, cutoff: usize) -> Result<CMatrix, ReferenceError> {
    let d = 2 * (cutoff + 1);
    let mut out = CMatrix::zeros(d, d);
    match rho0.basis {
        Basis::Qubit => out.view_mut((0, 0), (2, 2)).copy_from(&rho0.rho),
        Basis::QubitFock(c) if c <= cutoff => {
            let k = 2 * (c + 1);
            out.view_mut((0, 0), (k, k)).copy_from(&rho0.rho);
        }
        ref other => return Err(ReferenceError::Basis(other.clone())),
    }
    Ok(out)
}

/// A pseudomode trajectory and the cutoff it was accepted at.
#[derive(Debug, Clone)]
pub struct PseudomodeRun {
    pub trajectory: Trajectory,
    pub cutoff: usize,
    /// Largest observable shift against the previous cutoff.
    pub cutoff_shift: f64,
}

fn run_at_cutoff(model: &PseudomodeModel, cfg: &EvolveConfig, rho0: &DensityMatrix, cutoff: usize) -> Result<Trajectory, ReferenceError> {
    let d = 2 * (cutoff + 1);
    let mut h_eff = model.hamiltonian(cutoff);
    for i in 0..d {
        h_eff[(i, i)] -= I * model.linewidth * (i / 2) as f64;
    }
    let h_eff_dag = h_eff.adjoint();
    let mut b = CMatrix::zeros(d, d);
    for (dst, src, c) in annihilation(cutoff) {
        b[(dst, src)] = C64::new(c, 0.0);
    }
    let b_dag = b.adjoint();
    let jump = C64::new(2.0 * model.linewidth, 0.0);
    let rhs = |_: f64, rho: &CMatrix| (&h_eff * rho - rho * &h_eff_dag) * (-I) + &b * rho * &b_dag * jump;
    let times = cfg.output_times();
    let opts = Dopri5Options {
        rtol: cfg.tolerance,
        atol: cfg.tolerance * 1e-2,
        initial_step: cfg.step.min(1e-3),
        ..Default::default()
    };
    let states = dopri5(rhs, embed(rho0, cutoff)?, 0.0, &times, opts)?;
    let mut traj = Trajectory {
        kind: ObservableKind::Qubit,
        times: times.clone(),
        moments: Vec::with_capacity(times.len()),
        populations: Vec::with_capacity(times.len()),
        trace_error: Vec::with_capacity(times.len()),
        hermiticity_error: Vec::with_capacity(times.len()),
        min_eigenvalue: Vec::with_capacity(times.len()),
        top_fock_population: 0.0,
        stats: StepStats::default(),
        final_state: DensityMatrix::basis_state(Basis::QubitFock(cutoff), 0),
    };
    for rho in &states {
        let (sz, sm) = qubit_observables(rho);
        traj.moments.push(vec![sm]);
        traj.populations.push(vec![sz]);
        traj.trace_error.push(rho.trace().re - 1.0);
        traj.hermiticity_error.push(max_abs(&(rho - rho.adjoint())));
        traj.min_eigenvalue.push(min_hermitian_eigenvalue(rho));
        traj.top_fock_population = traj.top_fock_population.max(top_population(rho));
    }
    if let Some(last) = states.into_iter().last() {
        traj.final_state = DensityMatrix {
            basis: Basis::QubitFock(cutoff),
            rho: last,
        };
    }
    Ok(traj)
}

fn trajectory_shift(a: &Trajectory, b: &Trajectory) -> f64 {
    let sz = a.sigma_z().iter().zip(b.sigma_z()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let sm = a.sigma_minus().iter().zip(b.sigma_minus()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    sz.max(sm)
}

/// Runs `f` at cutoffs `c, c+5, c+10, …` until two successive results
/// differ by at most the model tolerance; returns the later one.
fn escalate<T>(
    model: &PseudomodeModel,
    start: usize,
    mut f: impl FnMut(usize) -> Result<T, ReferenceError>,
    shift: impl Fn(&T, &T) -> f64,
) -> Result<(T, usize, f64), ReferenceError> {
    let mut cutoff = start;
    let mut previous = f(cutoff)?;
    loop {
        let next = cutoff + CUTOFF_INCREMENT;
        if next > model.max_cutoff {
            return Err(ReferenceError::CutoffNotConverged {
                cutoff: cutoff - CUTOFF_INCREMENT,
                next: cutoff,
                shift: f64::NAN,
                tolerance: model.cutoff_tolerance,
                limit: model.max_cutoff,
            });
        }
        let current = f(next)?;
        let s = shift(&previous, &current);
        if s <= model.cutoff_tolerance {
            return Ok((current, next, s));
        }
        if next + CUTOFF_INCREMENT > model.max_cutoff {
            return Err(ReferenceError::CutoffNotConverged {
                cutoff,
                next,
                shift: s,
                tolerance: model.cutoff_tolerance,
                limit: model.max_cutoff,
            });
        }
        previous = current;
        cutoff = next;
    }
}

/// Integrates the pseudomode master equation from `rho0` (a qubit state,
/// tensored with the oscillator vacuum, or a `QubitFock` state).
pub fn evolve_pseudomode(model: &PseudomodeModel, cfg: &EvolveConfig, rho0: &DensityMatrix) -> Result<PseudomodeRun, ReferenceError> {
    model.validate()?;
    cfg.validate()?;
    let start = match rho0.basis {
        Basis::QubitFock(c) => model.cutoff.max(c),
        _ => model.cutoff,
    };
    let (trajectory, cutoff, cutoff_shift) =
        escalate(model, start, |c| run_at_cutoff(model, cfg, rho0, c), trajectory_shift)?;
    Ok(PseudomodeRun {
        trajectory,
        cutoff,
        cutoff_shift,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SteadyStateMethod {
    NullSpace,
    Integration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudomodeSteadyState {
    pub sigma_z: f64,
    pub sigma_minus: C64,
    pub photon_number: f64,
    pub cutoff: usize,
    pub cutoff_shift: f64,
    pub method: SteadyStateMethod,
    /// `max |L vec(ρ)|`
    pub generator_residual: f64,
    pub trace_error: f64,
    pub min_eigenvalue: f64,
    pub top_fock_population: f64,
    #[serde(skip)]
    pub rho: CMatrix,
}

fn apply(entries: &[(usize, usize, C64)], x: &[C64]) -> Vec<C64> {
    let mut y = vec![C64::new(0.0, 0.0); x.len()];
    for &(r, c, v) in entries {
        y[r] += v * x[c];
    }
    y
}

fn finish(model: &PseudomodeModel, rho: CMatrix, cutoff: usize, method: SteadyStateMethod) -> PseudomodeSteadyState {
    let tr = rho.trace();
    let rho = crate::hermitian_part(&(rho / tr));
    let (sigma_z, sigma_minus) = qubit_observables(&rho);
    let vec: Vec<C64> = rho.iter().copied().collect();
    let residual = apply(&model.generator(cutoff), &vec).iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    PseudomodeSteadyState {
        sigma_z,
        sigma_minus,
        photon_number: photon_number(&rho),
        cutoff,
        cutoff_shift: 0.0,
        method,
        generator_residual: residual,
        trace_error: rho.trace().re - 1.0,
        min_eigenvalue: min_hermitian_eigenvalue(&rho),
        top_fock_population: top_population(&rho),
        rho,
    }
}

/// Null vector of the generator with the `|g,0⟩⟨g,0|` component fixed to
/// one. Its equation is redundant by trace preservation and is dropped,
/// which keeps the system banded.
fn null_space(model: &PseudomodeModel, cutoff: usize) -> Result<CMatrix, ReferenceError> {
    let d = 2 * (cutoff + 1);
    let n = d * d - 1;
    let mut rhs = vec![C64::new(0.0, 0.0); n];
    let mut entries = Vec::new();
    for (r, c, v) in model.generator(cutoff) {
        match (r, c) {
            (0, _) => {}
            (_, 0) => rhs[r - 1] -= v,
            _ => entries.push((r - 1, c - 1, v)),
        }
    }
    let x = BandMatrix::from_triplets(n, &entries).factor()?.solve(&rhs)?;
    let mut all = Vec::with_capacity(d * d);
    all.push(C64::new(1.0, 0.0));
    all.extend(x);
    Ok(CMatrix::from_vec(d, d, all))
}

fn integrate_to_steady(model: &PseudomodeModel, cfg: &EvolveConfig, cutoff: usize) -> Result<CMatrix, ReferenceError> {
    let window = cfg.step;
    let mut t = 0.0;
    let mut rho = embed(&DensityMatrix::basis_state(Basis::Qubit, 0), cutoff)?;
    let mut sz = qubit_observables(&rho).0;
    let mut change = f64::INFINITY;
    while t < cfg.t_end {
        let chunk = EvolveConfig {
            t_end: window,
            ..cfg.clone()
        };
        let seed = DensityMatrix {
            basis: Basis::QubitFock(cutoff),
            rho: rho.clone(),
        };
        let traj = run_at_cutoff(model, &chunk, &seed, cutoff)?;
        rho = traj.final_state.rho;
        t += window;
        let next = qubit_observables(&rho).0;
        change = (next - sz).abs() / next.abs().max(1e-12);
        sz = next;
        if change < 1e-6 {
            return Ok(rho);
        }
    }
    Err(ReferenceError::SteadyStateNotReached { horizon: t, change })
}

/// Steady state of the pseudomode model with cutoff escalation. Cutoffs up
/// to [`NULL_SPACE_MAX_CUTOFF`] use a banded null-space solve; larger ones
/// integrate from `|g,0⟩` in windows of `cfg.step` up to `cfg.t_end` until
/// `⟨σ_z⟩` changes by less than 1e-6 (relative) over a window.
pub fn steady_state_pseudomode(model: &PseudomodeModel, cfg: &EvolveConfig) -> Result<PseudomodeSteadyState, ReferenceError> {
    model.validate()?;
    if !(model.linewidth > 0.0) {
        return Err(ReferenceError::InvalidModel("steady state needs a positive linewidth".into()));
    }
    let solve = |cutoff: usize| -> Result<PseudomodeSteadyState, ReferenceError> {
        if cutoff <= NULL_SPACE_MAX_CUTOFF {
            Ok(finish(model, null_space(model, cutoff)?, cutoff, SteadyStateMethod::NullSpace))
        } else {
            cfg.validate()?;
            Ok(finish(model, integrate_to_steady(model, cfg, cutoff)?, cutoff, SteadyStateMethod::Integration))
        }
    };
    let shift = |a: &PseudomodeSteadyState, b: &PseudomodeSteadyState| {
        (a.sigma_z - b.sigma_z).abs().max((a.sigma_minus - b.sigma_minus).norm())
    };
    let (mut state, _, s) = escalate(model, model.cutoff, solve, shift)?;
    state.cutoff_shift = s;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::sigma_z_closed_form;
    use crate::evolve::InitialState;
    use crate::spectral::KernelSampler;
    use crate::volterra::{solve_volterra_expfast, CouplingMatrix};

    fn cfg(t_end: f64, step: f64) -> EvolveConfig {
        EvolveConfig {
            step,
            t_end,
            cutoff: 2,
            tolerance: 1e-10,
            min_step: 1e-9,
            initial: InitialState::Excited,
        }
    }

    fn model(g: f64, lambda: f64, delta: f64, offset: f64, omega: f64, cutoff: usize) -> PseudomodeModel {
        PseudomodeModel {
            detuning: delta,
            offset,
            linewidth: lambda,
            coupling: g,
            drive: omega,
            cutoff,
            cutoff_tolerance: 1e-6,
            max_cutoff: 40,
        }
    }

    #[test]
    fn vacuum_rabi_oscillation() {
        let g = 0.7;
        let m = model(g, 0.0, 0.0, 0.0, 0.0, 2);
        let rho0 = DensityMatrix::basis_state(Basis::Qubit, 1);
        let run = evolve_pseudomode(&m, &cfg(6.0, 0.05), &rho0).unwrap();
        assert_eq!(run.cutoff, 7);
        for (t, sz) in run.trajectory.times.iter().zip(run.trajectory.sigma_z()) {
            assert!((sz - (2.0 * g * t).cos()).abs() < 1e-8);
        }
    }

    #[test]
    fn one_excitation_sector_matches_green_function() {
        let (gamma, lambda, delta, offset) = (2.0, 0.4, 0.3, 0.1);
        let m = PseudomodeModel::from_rate(gamma, lambda, delta, offset, 0.0).with_cutoff(2);
        let rho0 = DensityMatrix::basis_state(Basis::Qubit, 1);
        let run = evolve_pseudomode(&m, &cfg(10.0, 0.05), &rho0).unwrap();
        let k = KernelSampler::lorentzian(gamma, lambda, delta, offset).unwrap();
        let traj = solve_volterra_expfast(&CouplingMatrix::scalar(delta), &k, 0.01, 1_000).unwrap();
        for (i, sz) in run.trajectory.sigma_z().iter().enumerate() {
            let v = traj.v(5 * i)[(0, 0)];
            assert!((sz - (2.0 * v.norm_sqr() - 1.0)).abs() < 1e-6);
        }
        assert!(run.trajectory.max_trace_error() < 1e-8);
        assert!(run.trajectory.min_eigenvalue_overall() > -1e-8);
    }

    #[test]
    fn uncoupled_qubit_rabi_flops() {
        let omega = 0.8;
        let m = model(0.0, 0.5, 0.0, 0.0, omega, 2);
        let rho0 = DensityMatrix::basis_state(Basis::Qubit, 0);
        let run = evolve_pseudomode(&m, &cfg(5.0, 0.05), &rho0).unwrap();
        for (t, sz) in run.trajectory.times.iter().zip(run.trajectory.sigma_z()) {
            assert!((sz + (2.0 * omega * t).cos()).abs() < 1e-8);
        }
        assert!(photon_number(&run.trajectory.final_state.rho).abs() < 1e-14);
        assert_eq!(run.trajectory.top_fock_population, 0.0);
    }

    #[test]
    fn undriven_steady_state_is_ground() {
        let m = PseudomodeModel::from_rate(1.0, 2.0, 0.4, 0.0, 0.0).with_cutoff(3);
        let s = steady_state_pseudomode(&m, &cfg(100.0, 5.0)).unwrap();
        assert!((s.sigma_z + 1.0).abs() < 1e-12);
        assert!(s.sigma_minus.norm() < 1e-12);
        assert_eq!(s.method, SteadyStateMethod::NullSpace);
    }

    #[test]
    fn weak_drive_matches_closed_form() {
        let (gamma, lambda, omega) = (1.0, 4.0, 0.005);
        for &delta in &[0.0, 0.5, -1.3, 3.0] {
            let m = PseudomodeModel::from_rate(gamma, lambda, delta, 0.0, omega).with_cutoff(3);
            let s = steady_state_pseudomode(&m, &cfg(100.0, 5.0)).unwrap();
            assert!((s.sigma_z + 1.0) / 2.0 < 1e-3);
            let exact = sigma_z_closed_form(gamma, lambda, delta, omega);
            let rel = ((s.sigma_z + 1.0) - (exact + 1.0)).abs() / (exact + 1.0);
            assert!(rel < 0.01, "Δ = {delta}: {} vs {exact}", s.sigma_z);
            assert!(s.generator_residual < 1e-12);
            assert!(s.min_eigenvalue > -1e-12);
        }
    }

    #[test]
    fn null_space_agrees_with_long_integration() {
        let m = PseudomodeModel::from_rate(2.0, 1.0, 0.5, 0.1, 0.6).with_cutoff(6);
        let direct = finish(&m, null_space(&m, 6).unwrap(), 6, SteadyStateMethod::NullSpace);
        let rho = integrate_to_steady(&m, &cfg(400.0, 10.0), 6).unwrap();
        let long = finish(&m, rho, 6, SteadyStateMethod::Integration);
        assert!((direct.sigma_z - long.sigma_z).abs() < 1e-6);
        assert!((direct.sigma_minus - long.sigma_minus).norm() < 1e-6);
    }

    #[test]
    fn generator_matches_dense_right_hand_side() {
        let m = PseudomodeModel::from_rate(2.0, 0.7, 0.3, 0.2, 0.4);
        let c = 3;
        let d = 2 * (c + 1);
        let rho = CMatrix::from_fn(d, d, |i, j| C64::new((i + 2 * j) as f64 * 0.01, (i as f64 - j as f64) * 0.02));
        let h = m.hamiltonian(c);
        let mut b = CMatrix::zeros(d, d);
        for (dst, src, v) in annihilation(c) {
            b[(dst, src)] = C64::new(v, 0.0);
        }
        let bd = b.adjoint();
        let lam = C64::new(m.linewidth, 0.0);
        let dense = (&h * &rho - &rho * &h) * (-I) + (&b * &rho * &bd * C64::new(2.0, 0.0) - &bd * &b * &rho - &rho * &bd * &b) * lam;
        let vec: Vec<C64> = rho.iter().copied().collect();
        let sparse = CMatrix::from_vec(d, d, apply(&m.generator(c), &vec));
        assert!(max_abs(&(dense - sparse)) < 1e-14);
        assert!(max_abs(&(&h - h.adjoint())) == 0.0);
    }

    #[test]
    fn cutoff_escalation_reports_non_convergence() {
        let mut m = PseudomodeModel::from_rate(2.0, 0.1, 0.0, 0.0, 3.0).with_cutoff(2);
        m.max_cutoff = 7;
        m.cutoff_tolerance = 1e-12;
        assert!(matches!(
            steady_state_pseudomode(&m, &cfg(100.0, 5.0)),
            Err(ReferenceError::CutoffNotConverged { cutoff: 2, next: 7, .. })
        ));
        m.max_cutoff = 6;
        assert!(matches!(m.validate(), Err(ReferenceError::InvalidModel(_))));
    }

    #[test]
    fn rejects_bad_initial_basis() {
        let m = model(1.0, 1.0, 0.0, 0.0, 0.0, 2);
        let rho0 = DensityMatrix::basis_state(Basis::BosonFock(vec![2]), 0);
        assert!(matches!(evolve_pseudomode(&m, &cfg(1.0, 0.1), &rho0), Err(ReferenceError::Basis(_))));
    }
}
