use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use num_complex::Complex64;
use serde::Deserialize;
use tlme::analysis::SteadyStateSource;
use tlme::presets::{self, Preset, SweepSpec};
use tlme::spectral::{KernelSampler, SpectralModel, TabulatedDensity};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    BosonTlme,
    QubitTlme,
    Pseudomode,
    ExactMoment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    /// Exponential embedding when the kernel allows it, otherwise general.
    #[default]
    Auto,
    General,
    Expfast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    ClosedForm,
    QubitTlme,
    Pseudomode,
}

impl From<Source> for SteadyStateSource {
    fn from(s: Source) -> Self {
        match s {
            Source::ClosedForm => SteadyStateSource::ClosedForm,
            Source::QubitTlme => SteadyStateSource::QubitTlme,
            Source::Pseudomode => SteadyStateSource::Pseudomode,
        }
    }
}

/// Run parameters. Every field may also be given in the `--config` TOML
/// file under the same kebab-case name; flags win.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Params {
    /// Built-in parameter set to start from (see --list-presets).
    #[arg(long)]
    pub preset: Option<String>,
    /// Lorentzian environment given as Γ,λ,Δ,δ.
    #[arg(long, value_name = "Γ,λ,Δ,δ")]
    pub lorentzian: Option<String>,
    /// Flat (Markovian) environment with decay rate Γ.
    #[arg(long, value_name = "Γ")]
    pub markov: Option<f64>,
    /// Two-column ω J(ω) table.
    #[arg(long, value_name = "PATH")]
    pub tabulated: Option<PathBuf>,
    /// Γ
    #[arg(long)]
    pub gamma: Option<f64>,
    /// λ
    #[arg(long)]
    pub linewidth: Option<f64>,
    /// Δ
    #[arg(long)]
    pub detuning: Option<f64>,
    /// δ
    #[arg(long)]
    pub offset: Option<f64>,
    /// Ω
    #[arg(long)]
    pub omega: Option<f64>,
    /// Ω in units of λ.
    #[arg(long)]
    pub omega_over_lambda: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// ω₀ of the Bose factor.
    #[arg(long)]
    pub reference_frequency: Option<f64>,
    /// Grid step h.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Fock cutoff.
    #[arg(long)]
    pub cutoff: Option<usize>,
    /// Local error tolerance of the integrators.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// ground, excited, vacuum, coherent(α) or matrix:<path>.
    #[arg(long)]
    pub initial: Option<String>,
    /// Initial ⟨a⟩ for the exact-moment engine, e.g. 1 or 0.5+0.2i.
    #[arg(long)]
    pub a0: Option<String>,
    #[arg(long, value_enum)]
    pub engine: Option<Engine>,
    #[arg(long, value_enum)]
    pub solver: Option<Solver>,
    #[arg(long, value_enum)]
    pub source: Option<Source>,
    /// First Δ of the sweep.
    #[arg(long, allow_negative_numbers = true)]
    pub start: Option<f64>,
    /// Last Δ of the sweep.
    #[arg(long, allow_negative_numbers = true)]
    pub stop: Option<f64>,
    /// Number of sweep or lag points.
    #[arg(long)]
    pub points: Option<usize>,
    /// Single kernel lag.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Largest kernel lag.
    #[arg(long)]
    pub tau_max: Option<f64>,
    /// CSV destination; stdout when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// JSON summary or report destination; stderr when absent.
    #[arg(long, alias = "report")]
    pub summary: Option<PathBuf>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        Params { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl Params {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fields of `self`, falling back to `lower`.
    pub fn over(self, lower: Params) -> Params {
        overlay!(
            self, lower, preset, lorentzian, markov, tabulated, gamma, linewidth, detuning, offset, omega,
            omega_over_lambda, temperature, reference_frequency, step, t_end, cutoff, tolerance, initial, a0,
            engine, solver, source, start, stop, points, tau, tau_max, output, summary
        )
    }
}

#[derive(Debug, Clone)]
pub enum Shape {
    Lorentzian,
    Markov,
    Tabulated(TabulatedDensity),
}

/// Resolved configuration: a preset with overrides applied.
#[derive(Debug, Clone)]
pub struct Run {
    pub preset: Preset,
    pub shape: Shape,
    pub initial: Option<String>,
    pub a0: Complex64,
    pub tolerance: Option<f64>,
    pub engine: Option<Engine>,
    pub solver: Solver,
    pub source: Option<Source>,
    pub sweep: Option<SweepSpec>,
    pub points: Option<usize>,
    pub tau: Option<f64>,
    pub tau_max: Option<f64>,
    pub output: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

fn bad(field: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {message}"))
}

fn parse_complex(field: &str, s: &str) -> Result<Complex64, CliError> {
    s.trim()
        .parse::<Complex64>().map_err(|_| bad(field, format!("`{s}` is not a complex number")))
}

impl Run {
    pub fn resolve(p: Params) -> Result<Self, CliError> {
        let mut preset = match &p.preset {
            Some(name) => presets::find(name).map_err(|e| bad("preset", e))?,
            None => presets::custom(),
        };
        let mut shape = Shape::Lorentzian;
        let sources = [p.lorentzian.is_some(), p.markov.is_some(), p.tabulated.is_some()];
        if sources.iter().filter(|&&s| s).count() > 1 {
            return Err(bad("lorentzian", "give at most one of --lorentzian, --markov, --tabulated"));
        }
        if let Some(spec) = &p.lorentzian {
            let v = spec
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad("lorentzian", e))?;
            let [g, l, d, o] = v[..] else {
                return Err(bad("lorentzian", format!("expected 4 values Γ,λ,Δ,δ, got {}", v.len())));
            };
            (preset.gamma, preset.linewidth, preset.detuning, preset.offset) = (g, l, d, o);
        }
        if let Some(g) = p.markov {
            shape = Shape::Markov;
            preset.gamma = g;
        }
        if let Some(path) = &p.tabulated {
            shape = Shape::Tabulated(TabulatedDensity::from_file(path).map_err(|e| bad("tabulated", e))?);
        }
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut preset.gamma, p.gamma);
        set(&mut preset.linewidth, p.linewidth);
        set(&mut preset.detuning, p.detuning);
        set(&mut preset.offset, p.offset);
        set(&mut preset.temperature, p.temperature);
        set(&mut preset.reference_frequency, p.reference_frequency);
        set(&mut preset.step, p.step);
        set(&mut preset.t_end, p.t_end);
        match (p.omega, p.omega_over_lambda) {
            (Some(_), Some(_)) => return Err(bad("omega", "give either --omega or --omega-over-lambda")),
            (Some(w), None) => preset.drive = w,
            (None, Some(r)) => preset.drive = r * preset.linewidth,
            (None, None) => {}
        }
        if let Some(c) = p.cutoff {
            preset.cutoff = c;
        }
        for (name, v) in [
            ("gamma", preset.gamma),
            ("linewidth", preset.linewidth),
            ("detuning", preset.detuning),
            ("offset", preset.offset),
            ("omega", preset.drive),
            ("temperature", preset.temperature),
        ] {
            if !v.is_finite() {
                return Err(bad(name, format!("must be finite, got {v}")));
            }
        }
        if !(preset.step > 0.0) || !preset.step.is_finite() {
            return Err(bad("step", format!("must be positive, got {}", preset.step)));
        }
        if !(preset.t_end > 0.0) || !preset.t_end.is_finite() {
            return Err(bad("t-end", format!("must be positive, got {}", preset.t_end)));
        }
        if preset.temperature < 0.0 {
            return Err(bad("temperature", "must be non-negative"));
        }
        if let Some(t) = p.tolerance {
            if !(t > 0.0) {
                return Err(bad("tolerance", format!("must be positive, got {t}")));
            }
        }
        let sweep = match (p.start, p.stop, p.points) {
            (None, None, None) => preset.sweep,
            (start, stop, points) => {
                let base = preset.sweep;
                let start = start.or(base.map(|s| s.start));
                let stop = stop.or(base.map(|s| s.stop));
                let points = points.or(base.map(|s| s.points));
                match (start, stop, points) {
                    (Some(start), Some(stop), Some(points)) => Some(SweepSpec { start, stop, points }),
                    _ => None,
                }
            }
        };
        let a0 = match &p.a0 {
            Some(s) => parse_complex("a0", s)?,
            None => Complex64::new(0.0, 0.0),
        };
        Ok(Self {
            preset,
            shape,
            initial: p.initial,
            a0,
            tolerance: p.tolerance,
            engine: p.engine,
            solver: p.solver.unwrap_or_default(),
            source: p.source,
            sweep,
            points: p.points,
            tau: p.tau,
            tau_max: p.tau_max,
            output: p.output,
            summary: p.summary,
        })
    }

    pub fn spectral_model(&self) -> SpectralModel {
        let p = &self.preset;
        let model = match &self.shape {
            Shape::Lorentzian => SpectralModel::lorentzian(p.gamma, p.linewidth, p.detuning, p.offset),
            Shape::Markov => SpectralModel::markovian(p.gamma),
            Shape::Tabulated(t) => SpectralModel::tabulated(t.clone()),
        };
        model.with_temperature(p.temperature, Some(p.reference_frequency))
    }

    pub fn kernel(&self) -> Result<KernelSampler, tlme::Error> {
        Ok(KernelSampler::new(vec![self.spectral_model()], 1)?)
    }

    pub fn is_lorentzian(&self) -> bool {
        matches!(self.shape, Shape::Lorentzian)
    }
}
