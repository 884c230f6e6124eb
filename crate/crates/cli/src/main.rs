//! `tlme` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver error,
//! 4 non-convergence.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;
use tlme::analysis::{Report, SteadyStateSource};
use tlme::coeffs::CoefficientTrack;
use tlme::evolve::{
    evolve_boson_tlme, evolve_qubit_tlme, exact_first_moment, weak_excitation_flag, Basis, EvolveConfig,
    InitialState, ObservableKind, Trajectory, WEAK_EXCITATION_THRESHOLD,
};
use tlme::reference::evolve_pseudomode;
use tlme::volterra::{solve_volterra_expfast, solve_volterra_general, GreensTrajectory};
use tlme::{fmt_f64, presets, CVector};

use config::{Engine, Params, Run, Solver, Source};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] tlme::Error),
    #[error("{0}")]
    NotConverged(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Core(e) if e.is_non_convergence() => 4,
            CliError::Core(e) if e.is_invalid_input() => 2,
            CliError::Core(_) => 3,
            CliError::NotConverged(_) => 4,
        }
    }
}

fn core(e: impl Into<tlme::Error>) -> CliError {
    CliError::Core(e.into())
}

#[derive(Parser)]
#[command(name = "tlme", version, about = "Time-local master equations for driven open quantum systems")]
struct Cli {
    /// Print the built-in presets with their provenance and exit.
    #[arg(long)]
    list_presets: bool,
    /// TOML file of run parameters; command-line flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Dissipation kernel F(τ) (and noise kernel G(τ) at finite temperature).
    Kernel(Params),
    /// Green's function V(t).
    Green(Params),
    /// Time-local coefficients γ, ξ, λ with pole flags.
    Coeffs(Params),
    /// Time evolution with one of the engines.
    Evolve(Params),
    /// Steady state over a range of Δ.
    Sweep(Params),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.list_presets {
        let mut out = io::stdout().lock();
        for p in presets::all() {
            writeln!(out, "{:<22} {}", p.name, p.provenance)?;
        }
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Config("no command given (try --help)".into()));
    };
    let file = match &cli.config {
        Some(path) => Params::from_file(path)?,
        None => Params::default(),
    };
    let resolve = |p: Params| Run::resolve(p.over(file.clone()));
    match command {
        Command::Kernel(p) => cmd_kernel(&resolve(p)?),
        Command::Green(p) => cmd_green(&resolve(p)?),
        Command::Coeffs(p) => cmd_coeffs(&resolve(p)?),
        Command::Evolve(p) => cmd_evolve(&resolve(p)?),
        Command::Sweep(p) => cmd_sweep(&resolve(p)?),
    }
}

fn with_output(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    match path {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            write(&mut w)?;
            w.flush()?;
        }
        None => {
            let mut w = BufWriter::new(io::stdout().lock());
            write(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn write_summary(run: &Run, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    match &run.summary {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => eprintln!("{text}"),
    }
    Ok(())
}

fn cmd_kernel(run: &Run) -> Result<(), CliError> {
    let kernel = run.kernel().map_err(|e| CliError::Config(e.to_string()))?;
    let taus = match run.tau {
        Some(t) => vec![t],
        None => {
            let max = run.tau_max.unwrap_or(run.preset.t_end);
            let n = run.points.unwrap_or(201);
            if n < 2 || !(max > 0.0) {
                return Err(CliError::Config("tau-max must be positive and points ≥ 2".into()));
            }
            (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect()
        }
    };
    let thermal = !kernel.is_zero_temperature();
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in &taus {
        let f = kernel.dissipation(tau).map_err(core)?[(0, 0)];
        let mut row = vec![fmt_f64(tau), fmt_f64(f.re), fmt_f64(f.im)];
        if thermal {
            let g = kernel.noise(tau).map_err(core)?[(0, 0)];
            row.extend([fmt_f64(g.re), fmt_f64(g.im)]);
        }
        rows.push(row.join(","));
    }
    with_output(run.output.as_deref(), |w| {
        writeln!(w, "{}", if thermal { "tau,re_f,im_f,re_g,im_g" } else { "tau,re_f,im_f" })?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })
}

fn green(run: &Run) -> Result<GreensTrajectory, CliError> {
    let kernel = run.kernel().map_err(core)?;
    let coupling = run.preset.coupling();
    let (h, n) = (run.preset.step, run.preset.steps());
    let expfast = match run.solver {
        Solver::Auto => kernel.exponential_terms().is_some(),
        Solver::Expfast => true,
        Solver::General => false,
    };
    let traj = if expfast {
        solve_volterra_expfast(&coupling, &kernel, h, n)
    } else {
        solve_volterra_general(&coupling, &kernel, h, n)
    };
    traj.map_err(core)
}

fn coefficients(run: &Run) -> Result<CoefficientTrack, CliError> {
    let traj = green(run)?;
    let kernel = run.kernel().map_err(core)?;
    let noise = (run.preset.temperature > 0.0).then_some(&kernel);
    let drive = run.preset.drive();
    let track = CoefficientTrack::build(traj, &drive, noise).map_err(core)?;
    Ok(track.with_exact_continuation(&run.preset.coupling(), &kernel, &drive))
}

fn cmd_green(run: &Run) -> Result<(), CliError> {
    let traj = green(run)?;
    with_output(run.output.as_deref(), |w| traj.write_csv(w))?;
    write_summary(
        run,
        &json!({
            "preset": run.preset.name,
            "step": traj.step(),
            "end_time": traj.end_time(),
            "min_abs_det": traj.min_abs_det(),
            "near_singular_times": traj.near_singular_times(),
        }),
    )
}

fn cmd_coeffs(run: &Run) -> Result<(), CliError> {
    let track = coefficients(run)?;
    with_output(run.output.as_deref(), |w| track.write_csv(w))?;
    write_summary(
        run,
        &json!({
            "preset": run.preset.name,
            "step": track.step(),
            "end_time": track.end_time(),
            "thermal": track.is_thermal(),
            "poles": track.poles(),
        }),
    )
}

fn evolve_config(run: &Run) -> Result<EvolveConfig, CliError> {
    let mut cfg = run.preset.evolve_config().map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(s) = &run.initial {
        cfg.initial = s.parse::<InitialState>().map_err(|e| CliError::Config(format!("initial: {e}")))?;
    }
    if let Some(t) = run.tolerance {
        cfg.tolerance = t;
    }
    Ok(cfg)
}

fn trajectory_summary(run: &Run, engine: &str, traj: &Trajectory) -> Value {
    let last = traj.len() - 1;
    let mut v = json!({
        "engine": engine,
        "preset": run.preset.name,
        "t_end": traj.times[last],
        "samples": traj.len(),
        "max_trace_error": traj.max_trace_error(),
        "max_hermiticity_error": traj.max_hermiticity_error(),
        "min_eigenvalue": traj.min_eigenvalue_overall(),
        "pole_crossings": traj.stats.pole_crossings,
        "accepted_steps": traj.stats.accepted,
        "rejected_steps": traj.stats.rejected,
    });
    let m = traj.moments[last][0];
    match traj.kind {
        ObservableKind::Qubit => {
            v["final"] = json!({ "sigma_z": traj.populations[last][0], "sigma_minus": [m.re, m.im] });
            v["weak_excitation"] = json!(weak_excitation_flag(traj, WEAK_EXCITATION_THRESHOLD));
        }
        ObservableKind::Boson => {
            v["final"] = json!({ "a": [m.re, m.im], "n": traj.populations[last][0] });
            v["top_fock_population"] = json!(traj.top_fock_population);
            v["cutoff_warning"] = json!(traj.cutoff_warning());
        }
    }
    v
}

fn cmd_evolve(run: &Run) -> Result<(), CliError> {
    let engine = run
        .engine
        .ok_or_else(|| CliError::Config("engine: choose one of boson-tlme, qubit-tlme, pseudomode, exact-moment".into()))?;
    let cfg = evolve_config(run)?;
    match engine {
        Engine::ExactMoment => {
            let traj = green(run)?;
            let a0 = CVector::from_element(1, run.a0);
            let moments = exact_first_moment(&traj, &run.preset.drive(), &a0).map_err(core)?;
            with_output(run.output.as_deref(), |w| {
                writeln!(w, "t,re_a0,im_a0")?;
                for (n, a) in moments.iter().enumerate() {
                    writeln!(w, "{},{},{}", fmt_f64(traj.time(n)), fmt_f64(a[0].re), fmt_f64(a[0].im))?;
                }
                Ok(())
            })?;
            let a = moments[moments.len() - 1][0];
            write_summary(
                run,
                &json!({
                    "engine": "exact-moment",
                    "preset": run.preset.name,
                    "t_end": traj.end_time(),
                    "final": { "a": [a.re, a.im] },
                }),
            )
        }
        Engine::BosonTlme | Engine::QubitTlme => {
            let coeffs = coefficients(run)?;
            let (basis, name) = if engine == Engine::BosonTlme {
                if cfg.cutoff < 2 {
                    return Err(CliError::Config(format!("cutoff: boson bases need cutoff ≥ 2, got {}", cfg.cutoff)));
                }
                (Basis::BosonFock(vec![cfg.cutoff]), "boson-tlme")
            } else {
                (Basis::Qubit, "qubit-tlme")
            };
            let rho0 = cfg.initial.density(&basis).map_err(|e| CliError::Config(e.to_string()))?;
            let traj = if engine == Engine::BosonTlme {
                evolve_boson_tlme(&coeffs, &cfg, &rho0)
            } else {
                evolve_qubit_tlme(&coeffs, &cfg, &rho0)
            }
            .map_err(core)?;
            with_output(run.output.as_deref(), |w| traj.write_csv(w))?;
            let mut summary = trajectory_summary(run, name, &traj);
            summary["poles"] = json!(coeffs.poles());
            write_summary(run, &summary)
        }
        Engine::Pseudomode => {
            if !run.is_lorentzian() {
                return Err(CliError::Config("engine: pseudomode needs a Lorentzian environment".into()));
            }
            if run.preset.temperature > 0.0 {
                return Err(CliError::Config("engine: pseudomode needs zero temperature".into()));
            }
            let rho0 = cfg.initial.density(&Basis::Qubit).map_err(|e| CliError::Config(e.to_string()))?;
            let out = evolve_pseudomode(&run.preset.pseudomode(), &cfg, &rho0).map_err(core)?;
            with_output(run.output.as_deref(), |w| out.trajectory.write_csv(w))?;
            let mut summary = trajectory_summary(run, "pseudomode", &out.trajectory);
            summary["cutoff"] = json!(out.cutoff);
            summary["cutoff_shift"] = json!(out.cutoff_shift);
            write_summary(run, &summary)
        }
    }
}

fn cmd_sweep(run: &Run) -> Result<(), CliError> {
    let spec = run
        .sweep
        .ok_or_else(|| CliError::Config("sweep: give --start, --stop and --points or a preset with a sweep".into()))?;
    spec.validate().map_err(|e| CliError::Config(format!("sweep: {e}")))?;
    let source: SteadyStateSource = run.source.map_or(run.preset.sweep_source, Source::into);
    if !run.is_lorentzian() {
        return Err(CliError::Config("source: steady-state sweeps need a Lorentzian environment".into()));
    }
    if run.preset.temperature > 0.0 && source != SteadyStateSource::QubitTlme {
        return Err(CliError::Config(format!("source: {source} needs zero temperature")));
    }
    let preset = &run.preset;
    let records = presets::run_sweep(preset, source, &spec.values());
    with_output(run.output.as_deref(), |w| {
        writeln!(
            w,
            "delta,sigma_z,re_sigma_minus,im_sigma_minus,constraint_residual,normalized_violation,cutoff,converged"
        )?;
        for r in &records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                fmt_f64(r.delta),
                fmt_f64(r.sigma_z),
                fmt_f64(r.sigma_minus[0]),
                fmt_f64(r.sigma_minus[1]),
                fmt_f64(r.constraint.residual),
                fmt_f64(r.constraint.normalized),
                r.cutoff.map_or(String::new(), |c| c.to_string()),
                r.converged
            )?;
        }
        Ok(())
    })?;
    let report = Report::from_sweep(preset.name, source, &records);
    write_summary(run, &serde_json::to_value(&report).map_err(io::Error::other)?)?;
    let failed = records.iter().filter(|r| !r.converged).count();
    if failed > 0 {
        return Err(CliError::NotConverged(format!("{failed} of {} sweep points did not converge", records.len())));
    }
    Ok(())
}
