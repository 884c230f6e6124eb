//! Named parameter sets for the Lorentzian driven-qubit and boson
//! scenarios, plus the steady-state sweep runner they feed.
//!
//! Rates and frequencies are in units of `Γ`; the bottom-panel sweeps use
//! `λ = Γ/2·10⁴` so that `(Γ/2λ)^{1/2} = 100`.

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{laplace_steady_state, sigma_z_closed_form, SteadyStateRecord, SteadyStateSource};
use crate::coeffs::{CoefficientTrack, Drive};
use crate::evolve::{evolve_qubit_tlme, Basis, EvolveConfig, InitialState};
use crate::reference::{steady_state_pseudomode, PseudomodeModel};
use crate::spectral::{KernelSampler, SpectralModel};
use crate::volterra::{solve_volterra_expfast, CouplingMatrix, GreensTrajectory};
use crate::{Error, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepSpec {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.points < 2 {
            return Err(format!("sweep needs at least 2 points, got {}", self.points));
        }
        if !self.start.is_finite() || !self.stop.is_finite() {
            return Err("sweep endpoints must be finite".into());
        }
        if self.start == self.stop {
            return Err(format!("sweep endpoints coincide at {}", self.start));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let span = self.stop - self.start;
        (0..self.points)
            .map(|i| self.start + span * i as f64 / (self.points - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub provenance: &'static str,
    /// Γ
    pub gamma: f64,
    /// λ
    pub linewidth: f64,
    /// Δ
    pub detuning: f64,
    /// δ
    pub offset: f64,
    /// Ω
    pub drive: f64,
    pub temperature: f64,
    /// ω₀ of the Bose factor; only used when `temperature > 0`.
    pub reference_frequency: f64,
    pub initial: &'static str,
    /// Grid and output spacing.
    pub step: f64,
    pub t_end: f64,
    pub cutoff: usize,
    /// Sweep over Δ.
    pub sweep: Option<SweepSpec>,
    pub sweep_source: SteadyStateSource,
}

const BASE: Preset = Preset {
    name: "",
    provenance: "",
    gamma: 1.0,
    linewidth: 1.0,
    detuning: 0.0,
    offset: 0.0,
    drive: 0.0,
    temperature: 0.0,
    reference_frequency: 60.0,
    initial: "vacuum",
    step: 0.01,
    t_end: 10.0,
    cutoff: 10,
    sweep: None,
    sweep_source: SteadyStateSource::Pseudomode,
};

/// λ for `(Γ/2λ)^{1/2} = 100` at Γ = 1.
const BLOCKADE_LINEWIDTH: f64 = 5e-5;

pub fn all() -> Vec<Preset> {
    vec![
        Preset {
            name: "fig1-topleft",
            provenance: "Fig. 1 top left: decay from the excited state near the Markov limit (λ = 25, Δ = 0.3, Ω = 1, δ = 0.01)",
            linewidth: 25.0,
            detuning: 0.3,
            offset: 0.01,
            drive: 1.0,
            initial: "excited",
            step: 0.002,
            ..BASE
        },
        Preset {
            name: "fig1-topright",
            provenance: "Fig. 1 top right: weaker, detuned drive away from the Markov limit (λ = 0.05, Δ = 3.5, Ω = 0.4, δ = 0.01)",
            linewidth: 0.05,
            detuning: 3.5,
            offset: 0.01,
            drive: 0.4,
            initial: "excited",
            ..BASE
        },
        Preset {
            name: "fig1-bottomleft",
            provenance: "Fig. 1 bottom left: closed-form steady state vs Δ, (Γ/2λ)^{1/2} = 100, Ω/λ = 22, δ = 0",
            linewidth: BLOCKADE_LINEWIDTH,
            drive: 22.0 * BLOCKADE_LINEWIDTH,
            initial: "ground",
            step: 1.0e3,
            t_end: 1.0e8,
            sweep: Some(SweepSpec {
                start: -130.0 * BLOCKADE_LINEWIDTH,
                stop: 130.0 * BLOCKADE_LINEWIDTH,
                points: 521,
            }),
            sweep_source: SteadyStateSource::ClosedForm,
            ..BASE
        },
        Preset {
            name: "fig1-bottomright",
            provenance: "Fig. 1 bottom right: pseudomode steady state vs Δ/λ ∈ [0, 130], (Γ/2λ)^{1/2} = 100, Ω/λ = 22, δ = 0",
            linewidth: BLOCKADE_LINEWIDTH,
            drive: 22.0 * BLOCKADE_LINEWIDTH,
            initial: "ground",
            step: 1.0e3,
            t_end: 1.0e8,
            sweep: Some(SweepSpec {
                start: 0.0,
                stop: 130.0 * BLOCKADE_LINEWIDTH,
                points: 261,
            }),
            ..BASE
        },
        Preset {
            name: "fig1-bottomright-desk",
            provenance: "Fig. 1 bottom right, reduced: (Γ/2λ)^{1/2} = 10, Ω/λ = 2, δ = 0, Δ/λ ∈ [0, 13]",
            linewidth: 5e-3,
            drive: 1e-2,
            initial: "ground",
            step: 1.0e2,
            t_end: 1.0e7,
            sweep: Some(SweepSpec {
                start: 0.0,
                stop: 13.0 * 5e-3,
                points: 261,
            }),
            ..BASE
        },
        Preset {
            name: "fig2",
            provenance: "Fig. 2: strong coupling (Γ/2λ)^{1/2} = 5, Δ = δ = 0, constant Ω = λ, vacuum start, window 20/λ",
            linewidth: 0.02,
            drive: 0.02,
            step: 0.05,
            t_end: 1000.0,
            cutoff: 8,
            ..BASE
        },
        Preset {
            name: "driven",
            provenance: "resonant constant drive from vacuum (λ = 2, Ω = 0.5)",
            linewidth: 2.0,
            drive: 0.5,
            ..BASE
        },
        Preset {
            name: "detuned",
            provenance: "detuned drive with a shifted line (λ = 1, Δ = 1.5, δ = 0.2, Ω = 0.5)",
            detuning: 1.5,
            offset: 0.2,
            drive: 0.5,
            ..BASE
        },
        Preset {
            name: "strong-coupling",
            provenance: "non-Markovian drive with poles of γ in the window (λ = 0.1, Ω = 0.1, Δ = δ = 0)",
            linewidth: 0.1,
            drive: 0.1,
            t_end: 20.0,
            cutoff: 20,
            ..BASE
        },
        Preset {
            name: "boson-thermal",
            provenance: "driven boson mode in a thermal Lorentzian environment (λ = 2, Δ = 0.5, Ω = 0.3, T = 60, ω₀ = 150)",
            linewidth: 2.0,
            detuning: 0.5,
            drive: 0.3,
            temperature: 60.0,
            reference_frequency: 150.0,
            t_end: 5.0,
            cutoff: 20,
            ..BASE
        },
        Preset {
            name: "tlme-sweep",
            provenance: "qubit TLME steady state vs Δ ∈ [-4, 4] for comparison with the ratio formula (λ = 4, Ω = 0.5, δ = 0)",
            linewidth: 4.0,
            drive: 0.5,
            initial: "ground",
            step: 0.01,
            t_end: 60.0,
            sweep: Some(SweepSpec {
                start: -4.0,
                stop: 4.0,
                points: 50,
            }),
            sweep_source: SteadyStateSource::QubitTlme,
            ..BASE
        },
    ]
}

/// Defaults for runs assembled from flags alone.
pub fn custom() -> Preset {
    Preset {
        name: "custom",
        provenance: "command-line parameters",
        ..BASE
    }
}

pub fn find(name: &str) -> Result<Preset, Error> {
    all()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

impl Preset {
    /// `g = (λΓ/2)^{1/2}`
    pub fn coupling_strength(&self) -> f64 {
        (0.5 * self.linewidth * self.gamma).sqrt()
    }

    pub fn spectral_model(&self) -> SpectralModel {
        SpectralModel::lorentzian(self.gamma, self.linewidth, self.detuning, self.offset)
            .with_temperature(self.temperature, Some(self.reference_frequency))
    }

    pub fn kernel(&self) -> Result<KernelSampler, Error> {
        Ok(KernelSampler::new(vec![self.spectral_model()], 1)?)
    }

    pub fn coupling(&self) -> CouplingMatrix {
        CouplingMatrix::scalar(self.detuning)
    }

    pub fn drive(&self) -> Drive {
        Drive::scalar(self.drive)
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.step).round().max(1.0) as usize
    }

    /// Green's function on the preset grid (exponential embedding).
    pub fn green(&self) -> Result<GreensTrajectory, Error> {
        Ok(solve_volterra_expfast(&self.coupling(), &self.kernel()?, self.step, self.steps())?)
    }

    /// Coefficient track on the preset grid; the noise integral is
    /// included only at finite temperature, and zero-temperature tracks use
    /// the exact continuation.
    pub fn coefficients(&self) -> Result<CoefficientTrack, Error> {
        let kernel = self.kernel()?;
        let coupling = self.coupling();
        let traj = solve_volterra_expfast(&coupling, &kernel, self.step, self.steps())?;
        let noise = (self.temperature > 0.0).then_some(&kernel);
        let drive = self.drive();
        Ok(CoefficientTrack::build(traj, &drive, noise)?.with_exact_continuation(&coupling, &kernel, &drive))
    }

    pub fn evolve_config(&self) -> Result<EvolveConfig, Error> {
        Ok(EvolveConfig {
            step: self.step.max(0.01).min(self.t_end),
            t_end: self.t_end,
            cutoff: self.cutoff,
            initial: self.initial.parse()?,
            ..EvolveConfig::default()
        })
    }

    pub fn pseudomode(&self) -> PseudomodeModel {
        PseudomodeModel::from_rate(self.gamma, self.linewidth, self.detuning, self.offset, self.drive).with_cutoff(self.cutoff)
    }

    pub fn with_detuning(&self, detuning: f64) -> Self {
        Self { detuning, ..self.clone() }
    }
}

/// Steady state of one preset point from `source`. Failures are returned
/// as records with `converged = false`.
pub fn steady_state_record(preset: &Preset, source: SteadyStateSource) -> SteadyStateRecord {
    let delta = preset.detuning;
    let result: Result<SteadyStateRecord, Error> = (|| match source {
        SteadyStateSource::ClosedForm => {
            let sz = sigma_z_closed_form(preset.gamma, preset.linewidth, delta, preset.drive);
            let ratio = laplace_steady_state(delta, &preset.kernel()?, C64::new(preset.drive, 0.0))?;
            Ok(SteadyStateRecord::new(delta, source, sz, ratio.sigma_minus))
        }
        SteadyStateSource::QubitTlme => {
            let coeffs = preset.coefficients()?;
            let cfg = EvolveConfig {
                initial: InitialState::Ground,
                ..preset.evolve_config()?
            };
            let rho0 = cfg.initial.density(&Basis::Qubit)?;
            let traj = evolve_qubit_tlme(&coeffs, &cfg, &rho0)?;
            let sz = traj.sigma_z();
            let sm = traj.sigma_minus();
            let mut record = SteadyStateRecord::new(delta, source, sz[sz.len() - 1], sm[sm.len() - 1]);
            let tail = &sz[(sz.len() * 9) / 10..];
            let spread = tail.iter().fold(0.0_f64, |m, x| m.max((x - tail[tail.len() - 1]).abs()));
            record.converged = spread < 1e-6;
            Ok(record)
        }
        SteadyStateSource::Pseudomode => {
            let cfg = preset.evolve_config()?;
            let s = steady_state_pseudomode(&preset.pseudomode(), &cfg)?;
            let mut record = SteadyStateRecord::new(delta, source, s.sigma_z, s.sigma_minus);
            record.cutoff = Some(s.cutoff);
            Ok(record)
        }
    })();
    result.unwrap_or_else(|_| SteadyStateRecord::failed(delta, source))
}

/// Steady states over `values` of Δ, computed in parallel and returned in
/// input order.
pub fn run_sweep(preset: &Preset, source: SteadyStateSource, values: &[f64]) -> Vec<SteadyStateRecord> {
    values
        .par_iter()
        .map(|&d| steady_state_record(&preset.with_detuning(d), source))
        .collect()
}
