//! Density-matrix integrators for the time-local master equations.
//!
//! Boson modes (`N ≤ 2`):
//!
//! ```text
//! dρ/dt = -i Σ_j [ξ_j a_j† + ξ_j* a_j, ρ]
//!       + Σ_jk { γ_jk [a_k ρ, a_j†] + γ_jk* [a_j, ρ a_k†] + λ_jk [[a_k, ρ], a_j†] }
//! ```
//!
//! and the qubit transcription with `a → σ₋` (no noise term). The exact
//! first moment `⟨a(t)⟩ = V(t) a₀ - i (V∗Ω)(t)` is provided as an oracle.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::coeffs::{convolution_track, CoeffsError, CoefficientTrack, Drive};
use crate::ode::{integrate_rk4, OdeError, StepControl, StepStats};
use crate::volterra::GreensTrajectory;
use crate::{fmt_f64, CMatrix, CVector, C64, I};

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid initial state: {0}")]
    InvalidState(String),
    #[error("basis {basis} does not fit coefficients for {modes} mode(s)")]
    BasisMismatch { basis: String, modes: usize },
    #[error("coefficients cover t ≤ {available} but the run needs t = {needed}")]
    HorizonTooLong { available: f64, needed: f64 },
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Coeffs(#[from] CoeffsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Hilbert-space layout. Fock cutoffs are the highest photon number kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Basis {
    /// Index 0 = |g⟩, 1 = |e⟩.
    Qubit,
    /// Index `n₀ + (c₀+1) n₁` for two modes.
    BosonFock(Vec<usize>),
    /// Index `q + 2n`, `q ∈ {g, e}`.
    QubitFock(usize),
}

impl Basis {
    pub fn dim(&self) -> usize {
        match self {
            Basis::Qubit => 2,
            Basis::BosonFock(c) => c.iter().map(|c| c + 1).product(),
            Basis::QubitFock(c) => 2 * (c + 1),
        }
    }

    fn describe(&self) -> String {
        match self {
            Basis::Qubit => "qubit".into(),
            Basis::BosonFock(c) => format!("boson Fock {c:?}"),
            Basis::QubitFock(c) => format!("qubit ⊗ Fock({c})"),
        }
    }
}

/// Sparse ladder operator `a = Σ coef |dst⟩⟨src|`.
#[derive(Debug, Clone)]
pub(crate) struct Ladder {
    entries: Vec<(usize, usize, f64)>,
}

impl Ladder {
    /// Annihilation operator of `mode` on a product of Fock spaces. `stride`
    /// lists the index stride of each factor (for a leading qubit, pass its
    /// factor as an extra mode with `cutoffs[q] = 1` and never ladder it).
    pub(crate) fn annihilation(cutoffs: &[usize], mode: usize) -> Self {
        let dims: Vec<usize> = cutoffs.iter().map(|c| c + 1).collect();
        let stride: usize = dims[..mode].iter().product();
        let total: usize = dims.iter().product();
        let entries = (0..total)
            .filter_map(|i| {
                let n = (i / stride) % dims[mode];
                (n > 0).then(|| (i, i - stride, (n as f64).sqrt()))
            })
            .collect();
        Self { entries }
    }

    /// `a X`
    pub(crate) fn left(&self, x: &CMatrix, out: &mut CMatrix, scale: C64) {
        let n = x.nrows();
        let (xs, os) = (x.as_slice(), out.as_mut_slice());
        for col in 0..x.ncols() {
            let (xc, oc) = (&xs[col * n..(col + 1) * n], &mut os[col * n..(col + 1) * n]);
            for &(src, dst, c) in &self.entries {
                oc[dst] += xc[src] * (scale * c);
            }
        }
    }

    /// `a† X`
    pub(crate) fn left_dag(&self, x: &CMatrix, out: &mut CMatrix, scale: C64) {
        let n = x.nrows();
        let (xs, os) = (x.as_slice(), out.as_mut_slice());
        for col in 0..x.ncols() {
            let (xc, oc) = (&xs[col * n..(col + 1) * n], &mut os[col * n..(col + 1) * n]);
            for &(src, dst, c) in &self.entries {
                oc[src] += xc[dst] * (scale * c);
            }
        }
    }

    /// `X a†`
    pub(crate) fn right_dag(&self, x: &CMatrix, out: &mut CMatrix, scale: C64) {
        let n = x.nrows();
        let (xs, os) = (x.as_slice(), out.as_mut_slice());
        for &(src, dst, c) in &self.entries {
            let s = scale * c;
            let (xc, oc) = (&xs[src * n..(src + 1) * n], &mut os[dst * n..(dst + 1) * n]);
            for (o, v) in oc.iter_mut().zip(xc) {
                *o += v * s;
            }
        }
    }

    /// `X a`
    pub(crate) fn right(&self, x: &CMatrix, out: &mut CMatrix, scale: C64) {
        let n = x.nrows();
        let (xs, os) = (x.as_slice(), out.as_mut_slice());
        for &(src, dst, c) in &self.entries {
            let s = scale * c;
            let (xc, oc) = (&xs[dst * n..(dst + 1) * n], &mut os[src * n..(src + 1) * n]);
            for (o, v) in oc.iter_mut().zip(xc) {
                *o += v * s;
            }
        }
    }

    /// `tr(a X)`
    pub(crate) fn expectation(&self, x: &CMatrix) -> C64 {
        self.entries.iter().map(|&(src, dst, c)| x[(src, dst)] * c).sum()
    }
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

fn one() -> C64 {
    C64::new(1.0, 0.0)
}

/// Density matrix with its basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub basis: Basis,
    pub rho: CMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity and unit trace to 1e-9.
    pub fn new(basis: Basis, rho: CMatrix) -> Result<Self, EvolveError> {
        let d = basis.dim();
        if rho.nrows() != d || rho.ncols() != d {
            return Err(EvolveError::InvalidState(format!(
                "matrix is {}×{} but the basis has dimension {d}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        let dm = Self { basis, rho };
        if dm.hermiticity_error() > 1e-9 {
            return Err(EvolveError::InvalidState("density matrix is not Hermitian".into()));
        }
        if (dm.trace() - 1.0).abs() > 1e-9 {
            return Err(EvolveError::InvalidState(format!("trace is {} instead of 1", dm.trace())));
        }
        Ok(dm)
    }

    pub fn pure(basis: Basis, psi: &CVector) -> Result<Self, EvolveError> {
        let norm = psi.norm();
        if !(norm > 0.0) {
            return Err(EvolveError::InvalidState("zero state vector".into()));
        }
        let psi = psi / C64::new(norm, 0.0);
        Self::new(basis, &psi * psi.adjoint())
    }

    pub fn basis_state(basis: Basis, index: usize) -> Self {
        let d = basis.dim();
        let mut rho = CMatrix::zeros(d, d);
        rho[(index, index)] = one();
        Self { basis, rho }
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        crate::max_abs(&(&self.rho - self.rho.adjoint()))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        crate::min_hermitian_eigenvalue(&self.rho)
    }
}

/// Initial-state specification: `ground`, `excited`, `vacuum`,
/// `coherent(α)` / `coherent(α₀,α₁)`, or `matrix:<path>`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Ground,
    Excited,
    Vacuum,
    Coherent(Vec<C64>),
    Matrix(CMatrix),
}

impl std::str::FromStr for InitialState {
    type Err = EvolveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "ground" => return Ok(InitialState::Ground),
            "excited" => return Ok(InitialState::Excited),
            "vacuum" => return Ok(InitialState::Vacuum),
            _ => {}
        }
        if let Some(inner) = s.strip_prefix("coherent(").and_then(|r| r.strip_suffix(')')) {
            let amps = inner
                .split(',')
                .map(|a| {
                    a.trim()
                        .parse::<C64>()
                        .map_err(|_| EvolveError::InvalidState(format!("bad coherent amplitude `{a}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(InitialState::Coherent(amps));
        }
        if let Some(path) = s.strip_prefix("matrix:") {
            return InitialState::from_matrix_file(path);
        }
        Err(EvolveError::InvalidState(format!(
            "`{s}` is not one of ground, excited, vacuum, coherent(α), matrix:<path>"
        )))
    }
}

impl InitialState {
    /// Rows of `re im re im ...` pairs separated by whitespace or commas.
    pub fn from_matrix_file(path: impl AsRef<Path>) -> Result<Self, EvolveError> {
        let text = std::fs::read_to_string(path)?;
        let mut rows: Vec<Vec<C64>> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let nums = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|x| !x.is_empty())
                .map(|x| x.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EvolveError::InvalidState(format!("line {}: {e}", n + 1)))?;
            if nums.len() % 2 != 0 {
                return Err(EvolveError::InvalidState(format!("line {}: odd number of values", n + 1)));
            }
            rows.push(nums.chunks(2).map(|p| C64::new(p[0], p[1])).collect());
        }
        let d = rows.len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(EvolveError::InvalidState("matrix file is not square".into()));
        }
        Ok(InitialState::Matrix(CMatrix::from_fn(d, d, |i, j| rows[i][j])))
    }

    pub fn density(&self, basis: &Basis) -> Result<DensityMatrix, EvolveError> {
        let bad = |what: &str| {
            Err(EvolveError::InvalidState(format!(
                "`{what}` is not defined for basis {}",
                basis.describe()
            )))
        };
        match (self, basis) {
            (InitialState::Matrix(m), _) => DensityMatrix::new(basis.clone(), m.clone()),
            (InitialState::Ground | InitialState::Vacuum, _) => Ok(DensityMatrix::basis_state(basis.clone(), 0)),
            (InitialState::Excited, Basis::Qubit | Basis::QubitFock(_)) => {
                Ok(DensityMatrix::basis_state(basis.clone(), 1))
            }
            (InitialState::Excited, _) => bad("excited"),
            (InitialState::Coherent(amps), Basis::BosonFock(cutoffs)) => {
                if amps.len() != cutoffs.len() {
                    return Err(EvolveError::InvalidState(format!(
                        "{} coherent amplitudes for {} modes",
                        amps.len(),
                        cutoffs.len()
                    )));
                }
                let mut psi = CVector::from_element(1, one());
                for (alpha, &c) in amps.iter().zip(cutoffs) {
                    let mut factor = CVector::zeros(c + 1);
                    let mut amp = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
                    for n in 0..=c {
                        if n > 0 {
                            amp *= alpha / (n as f64).sqrt();
                        }
                        factor[n] = amp;
                    }
                    psi = factor.kronecker(&psi);
                }
                DensityMatrix::pure(basis.clone(), &psi)
            }
            (InitialState::Coherent(_), _) => bad("coherent"),
        }
    }
}

/// Run parameters shared by the integrators.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolveConfig {
    /// Output spacing and largest internal step.
    pub step: f64,
    pub t_end: f64,
    /// Fock cutoff (highest photon number) for boson bases.
    pub cutoff: usize,
    /// Absolute local error per step.
    pub tolerance: f64,
    /// Smallest step the integrator may take, in particular near poles.
    pub min_step: f64,
    pub initial: InitialState,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            step: 0.05,
            t_end: 10.0,
            cutoff: 10,
            tolerance: 1e-10,
            min_step: 1e-9,
            initial: InitialState::Vacuum,
        }
    }
}

impl EvolveConfig {
    pub fn validate(&self) -> Result<(), EvolveError> {
        let bad = |m: String| Err(EvolveError::InvalidConfig(m));
        if !(self.step > 0.0) || !self.step.is_finite() {
            return bad(format!("step must be positive, got {}", self.step));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return bad(format!("t_end must be ≥ 0, got {}", self.t_end));
        }
        if !(self.tolerance > 0.0) || !(self.min_step > 0.0) || self.min_step > self.step {
            return bad("tolerance and min_step must be positive with min_step ≤ step".into());
        }
        Ok(())
    }

    pub fn output_times(&self) -> Vec<f64> {
        let n = (self.t_end / self.step - 1e-9).ceil().max(0.0) as usize;
        (0..=n).map(|k| (k as f64 * self.step).min(self.t_end)).collect()
    }

    /// Interpolated coefficients are only C¹ at the grid nodes, so steps
    /// stay within one grid cell and poles are crossed on small circles.
    /// Exact coefficients allow long steps and circles spanning a good part
    /// of the gap between poles.
    fn control(&self, coeffs: &CoefficientTrack) -> StepControl {
        if coeffs.is_exact() {
            let poles = coeffs.poles();
            let gap = poles
                .iter()
                .zip(std::iter::once(&0.0).chain(poles))
                .map(|(b, a)| b - a)
                .fold(f64::INFINITY, f64::min);
            StepControl {
                max_step: self.step,
                min_step: self.min_step,
                tolerance: self.tolerance,
                pole_radius: (0.45 * gap).max(self.step.min(coeffs.step())),
            }
        } else {
            StepControl {
                max_step: self.step.min(coeffs.step()),
                min_step: self.min_step,
                tolerance: self.tolerance,
                pole_radius: self.step,
            }
        }
    }
}

/// Which observables a trajectory carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservableKind {
    /// `⟨σ₋⟩` and `⟨σ_z⟩`.
    Qubit,
    /// `⟨a_j⟩` and `⟨a_j† a_j⟩` per mode.
    Boson,
}

/// Observables sampled at the output times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub kind: ObservableKind,
    pub times: Vec<f64>,
    /// `⟨σ₋⟩` (qubit) or `⟨a_j⟩` per mode.
    pub moments: Vec<Vec<C64>>,
    /// `⟨σ_z⟩` (qubit) or `⟨a_j† a_j⟩` per mode.
    pub populations: Vec<Vec<f64>>,
    pub trace_error: Vec<f64>,
    pub hermiticity_error: Vec<f64>,
    /// Smallest eigenvalue of ρ. Bases larger than 64 states are checked
    /// at 32 evenly spaced outputs and the last one; other entries are NaN.
    pub min_eigenvalue: Vec<f64>,
    /// Largest top-Fock population relative to the trace (bosons only).
    pub top_fock_population: f64,
    pub stats: StepStats,
    pub final_state: DensityMatrix,
}

/// Top-Fock population above which a cutoff warning is raised.
pub const CUTOFF_WARNING_THRESHOLD: f64 = 1e-6;

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn sigma_z(&self) -> Vec<f64> {
        self.populations.iter().map(|p| p[0]).collect()
    }

    pub fn sigma_minus(&self) -> Vec<C64> {
        self.moments.iter().map(|m| m[0]).collect()
    }

    pub fn max_trace_error(&self) -> f64 {
        self.trace_error.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }

    pub fn max_hermiticity_error(&self) -> f64 {
        self.hermiticity_error.iter().fold(0.0, |a, &b| a.max(b))
    }

    pub fn min_eigenvalue_overall(&self) -> f64 {
        self.min_eigenvalue.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    }

    pub fn cutoff_warning(&self) -> bool {
        self.kind == ObservableKind::Boson && self.top_fock_population > CUTOFF_WARNING_THRESHOLD
    }

    /// CSV: `t`, moments (`re_sigma_minus,im_sigma_minus,sigma_z` or
    /// `re_a{j},im_a{j},n{j}`), `trace_error`, `hermiticity_error`, `min_eigenvalue`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = vec!["t".to_string()];
        let modes = self.moments.first().map_or(0, |m| m.len());
        match self.kind {
            ObservableKind::Qubit => header.extend(["re_sigma_minus", "im_sigma_minus", "sigma_z"].map(String::from)),
            ObservableKind::Boson => {
                for j in 0..modes {
                    header.extend([format!("re_a{j}"), format!("im_a{j}"), format!("n{j}")]);
                }
            }
        }
        header.extend(["trace_error", "hermiticity_error", "min_eigenvalue"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![fmt_f64(self.times[i])];
            for j in 0..modes {
                row.push(fmt_f64(self.moments[i][j].re));
                row.push(fmt_f64(self.moments[i][j].im));
                row.push(fmt_f64(self.populations[i][j]));
            }
            row.push(fmt_f64(self.trace_error[i]));
            row.push(fmt_f64(self.hermiticity_error[i]));
            row.push(fmt_f64(self.min_eigenvalue[i]));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn check_horizon(coeffs: &CoefficientTrack, cfg: &EvolveConfig) -> Result<(), EvolveError> {
    if cfg.t_end > coeffs.end_time() * (1.0 + 1e-12) {
        return Err(EvolveError::HorizonTooLong {
            available: coeffs.end_time(),
            needed: cfg.t_end,
        });
    }
    Ok(())
}

struct Recorder {
    kind: ObservableKind,
    times: Vec<f64>,
    moments: Vec<Vec<C64>>,
    populations: Vec<Vec<f64>>,
    trace_error: Vec<f64>,
    hermiticity_error: Vec<f64>,
    min_eigenvalue: Vec<f64>,
    top: f64,
    outputs: usize,
    eigen_every: usize,
}

/// Bases up to this size get an eigenvalue check at every output.
const EIGEN_FULL_DIM: usize = 64;
/// Number of eigenvalue checks along a trajectory in larger bases.
const EIGEN_SAMPLES: usize = 32;

impl Recorder {
    fn new(kind: ObservableKind, dim: usize, outputs: usize) -> Self {
        let eigen_every = if dim <= EIGEN_FULL_DIM { 1 } else { outputs.div_ceil(EIGEN_SAMPLES).max(1) };
        Self {
            outputs,
            eigen_every,
            kind,
            times: Vec::new(),
            moments: Vec::new(),
            populations: Vec::new(),
            trace_error: Vec::new(),
            hermiticity_error: Vec::new(),
            min_eigenvalue: Vec::new(),
            top: 0.0,
        }
    }

    fn push_common(&mut self, index: usize, t: f64, rho: &CMatrix) {
        self.times.push(t);
        let tr = rho.trace();
        self.trace_error.push(tr.re - 1.0);
        self.hermiticity_error.push(crate::max_abs(&(rho - rho.adjoint())));
        let due = index % self.eigen_every == 0 || index + 1 == self.outputs;
        self.min_eigenvalue
            .push(if due { crate::min_hermitian_eigenvalue(rho) } else { f64::NAN });
    }

    fn finish(self, stats: StepStats, final_state: DensityMatrix) -> Trajectory {
        Trajectory {
            kind: self.kind,
            times: self.times,
            moments: self.moments,
            populations: self.populations,
            trace_error: self.trace_error,
            hermiticity_error: self.hermiticity_error,
            min_eigenvalue: self.min_eigenvalue,
            top_fock_population: self.top,
            stats,
            final_state,
        }
    }
}

/// Integrates the boson master equation with coefficients from `coeffs`.
pub fn evolve_boson_tlme(coeffs: &CoefficientTrack, cfg: &EvolveConfig, rho0: &DensityMatrix) -> Result<Trajectory, EvolveError> {
    cfg.validate()?;
    check_horizon(coeffs, cfg)?;
    let cutoffs = match &rho0.basis {
        Basis::BosonFock(c) if c.len() == coeffs.dim() && c.len() <= 2 && c.iter().all(|&c| c >= 2) => c.clone(),
        other => {
            return Err(EvolveError::BasisMismatch {
                basis: other.describe(),
                modes: coeffs.dim(),
            })
        }
    };
    let modes = cutoffs.len();
    let ladders: Vec<Ladder> = (0..modes).map(|j| Ladder::annihilation(&cutoffs, j)).collect();
    let d = rho0.dim();
    let number: Vec<Vec<f64>> = (0..modes)
        .map(|j| {
            let stride: usize = cutoffs[..j].iter().map(|c| c + 1).product();
            (0..d).map(|i| ((i / stride) % (cutoffs[j] + 1)) as f64).collect()
        })
        .collect();
    let top: Vec<Vec<usize>> = (0..modes)
        .map(|j| (0..d).filter(|&i| number[j][i] as usize == cutoffs[j]).collect())
        .collect();

    let rhs = |z: C64, rho: &CMatrix| -> CMatrix {
        let c = coeffs.at_complex(z);
        let mut out = CMatrix::zeros(d, d);
        let mut tmp = CMatrix::zeros(d, d);
        for j in 0..modes {
            let a = &ladders[j];
            // -i[ξ a† + ξ* a, ρ]
            a.left_dag(rho, &mut out, -I * c.xi[j]);
            a.right_dag(rho, &mut out, I * c.xi[j]);
            a.left(rho, &mut out, -I * c.xi_adj[j]);
            a.right(rho, &mut out, I * c.xi_adj[j]);
        }
        for k in 0..modes {
            // tmp = a_k ρ, used by the γ and λ terms
            tmp.fill(zero());
            ladders[k].left(rho, &mut tmp, one());
            let mut rho_akdag = CMatrix::zeros(d, d);
            ladders[k].right_dag(rho, &mut rho_akdag, one());
            for j in 0..modes {
                let g = c.gamma[(j, k)];
                let gs = c.gamma_adj[(k, j)];
                let l = if coeffs.is_thermal() { c.lambda[(j, k)] } else { zero() };
                let aj = &ladders[j];
                // γ_jk (a_k ρ a_j† - a_j† a_k ρ) + λ_jk (a_k ρ a_j† - a_j† a_k ρ)
                aj.right_dag(&tmp, &mut out, g + l);
                aj.left_dag(&tmp, &mut out, -(g + l));
                // γ*_jk (a_j ρ a_k† - ρ a_k† a_j)
                aj.left(&rho_akdag, &mut out, gs);
                aj.right(&rho_akdag, &mut out, -gs);
                if l != zero() {
                    // λ_jk (a_j† ρ a_k - ρ a_k a_j†)
                    let mut rho_ak = CMatrix::zeros(d, d);
                    ladders[k].right(rho, &mut rho_ak, one());
                    aj.left_dag(&rho_ak, &mut out, l);
                    aj.right_dag(&rho_ak, &mut out, -l);
                }
            }
        }
        out
    };

    let outputs = cfg.output_times();
    let mut rec = Recorder::new(ObservableKind::Boson, d, outputs.len());
    let (rho_end, stats) = integrate_rk4(rhs, rho0.rho.clone(), 0.0, &outputs, coeffs.poles(), cfg.control(coeffs), |i, t, rho| {
        rec.push_common(i, t, rho);
        rec.moments.push(ladders.iter().map(|a| a.expectation(rho)).collect());
        rec.populations.push(
            number
                .iter()
                .map(|n| (0..d).map(|i| n[i] * rho[(i, i)].re).sum())
                .collect(),
        );
        let tr = rho.trace().re.abs().max(f64::MIN_POSITIVE);
        for idx in &top {
            let p: f64 = idx.iter().map(|&i| rho[(i, i)].re.abs()).sum();
            rec.top = rec.top.max(p / tr);
        }
    })?;
    let final_state = DensityMatrix {
        basis: rho0.basis.clone(),
        rho: rho_end,
    };
    Ok(rec.finish(stats, final_state))
}

/// Integrates the qubit master equation `-i[ξσ₊ + ξ*σ₋, ρ] + γ[σ₋ρ, σ₊] + γ*[σ₋, ρσ₊]`.
/// With `ξ ≡ 0` this is exact spontaneous emission; with a drive it is the
/// weak-excitation transcription of the boson equation.
pub fn evolve_qubit_tlme(coeffs: &CoefficientTrack, cfg: &EvolveConfig, rho0: &DensityMatrix) -> Result<Trajectory, EvolveError> {
    cfg.validate()?;
    check_horizon(coeffs, cfg)?;
    if rho0.basis != Basis::Qubit || coeffs.dim() != 1 {
        return Err(EvolveError::BasisMismatch {
            basis: rho0.basis.describe(),
            modes: coeffs.dim(),
        });
    }
    let sm = Ladder {
        entries: vec![(1, 0, 1.0)],
    };
    let rhs = |z: C64, rho: &CMatrix| -> CMatrix {
        let c = coeffs.at_complex(z);
        let (g, gs, xi, xis) = (c.gamma[(0, 0)], c.gamma_adj[(0, 0)], c.xi[0], c.xi_adj[0]);
        let mut out = CMatrix::zeros(2, 2);
        sm.left_dag(rho, &mut out, -I * xi);
        sm.right_dag(rho, &mut out, I * xi);
        sm.left(rho, &mut out, -I * xis);
        sm.right(rho, &mut out, I * xis);
        let mut tmp = CMatrix::zeros(2, 2);
        sm.left(rho, &mut tmp, one());
        sm.right_dag(&tmp, &mut out, g + gs);
        sm.left_dag(&tmp, &mut out, -g);
        let mut tmp2 = CMatrix::zeros(2, 2);
        sm.right_dag(rho, &mut tmp2, one());
        sm.right(&tmp2, &mut out, -gs);
        out
    };
    let outputs = cfg.output_times();
    let mut rec = Recorder::new(ObservableKind::Qubit, 2, outputs.len());
    let (rho_end, stats) = integrate_rk4(rhs, rho0.rho.clone(), 0.0, &outputs, coeffs.poles(), cfg.control(coeffs), |i, t, rho| {
        rec.push_common(i, t, rho);
        rec.moments.push(vec![rho[(1, 0)]]);
        rec.populations.push(vec![rho[(1, 1)].re - rho[(0, 0)].re]);
    })?;
    Ok(rec.finish(
        stats,
        DensityMatrix {
            basis: Basis::Qubit,
            rho: rho_end,
        },
    ))
}

/// `⟨a(t_n)⟩ = V_n a₀ - i (V∗Ω)_n` on the Green's-function grid.
pub fn exact_first_moment(traj: &GreensTrajectory, drive: &Drive, a0: &CVector) -> Result<Vec<CVector>, EvolveError> {
    if a0.len() != traj.dim() {
        return Err(EvolveError::InvalidState(format!(
            "initial amplitude has {} components for {} modes",
            a0.len(),
            traj.dim()
        )));
    }
    let conv = convolution_track(traj, drive)?;
    Ok(traj
        .values()
        .iter()
        .zip(&conv.conv)
        .map(|(v, c)| v * a0 - c * I)
        .collect())
}

/// Exact first moment at the output times of `cfg`, from the interpolants
/// stored in `coeffs`.
pub fn exact_first_moment_at(coeffs: &CoefficientTrack, a0: &CVector, times: &[f64]) -> Vec<CVector> {
    times
        .iter()
        .map(|&t| {
            let z = C64::new(t, 0.0);
            let (v, _) = coeffs.green_at(z);
            let (c, _) = coeffs.convolution_at(z);
            v * a0 - c * I
        })
        .collect()
}

/// Summary of how far a qubit run strays from weak excitation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct WeakExcitationReport {
    pub max_excited_population: f64,
    pub threshold: f64,
    pub outside_regime: bool,
}

pub const WEAK_EXCITATION_THRESHOLD: f64 = 0.1;

/// Maximum of `P_e = (⟨σ_z⟩ + 1)/2` over the trajectory, flagged against `threshold`.
pub fn weak_excitation_flag(traj: &Trajectory, threshold: f64) -> WeakExcitationReport {
    let max_pe = traj
        .populations
        .iter()
        .map(|p| 0.5 * (p[0] + 1.0))
        .fold(0.0_f64, f64::max);
    WeakExcitationReport {
        max_excited_population: max_pe,
        threshold,
        outside_regime: max_pe > threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{KernelSampler, SpectralModel};
    use crate::volterra::{solve_volterra_expfast, solve_volterra_general, CouplingMatrix};

    fn track(gamma: f64, width: f64, delta: f64, offset: f64, omega: f64, h: f64, t_end: f64) -> CoefficientTrack {
        let k = KernelSampler::lorentzian(gamma, width, delta, offset).unwrap();
        let steps = (t_end / h).round() as usize;
        let traj = solve_volterra_expfast(&CouplingMatrix::scalar(delta), &k, h, steps).unwrap();
        CoefficientTrack::build(traj, &Drive::scalar(omega), Some(&k)).unwrap()
    }

    fn cfg(t_end: f64, initial: InitialState) -> EvolveConfig {
        EvolveConfig {
            step: 0.05,
            t_end,
            cutoff: 10,
            initial,
            ..Default::default()
        }
    }

    #[test]
    fn parses_initial_states() {
        assert_eq!("ground".parse::<InitialState>().unwrap(), InitialState::Ground);
        assert_eq!(
            "coherent(0.5-0.25i)".parse::<InitialState>().unwrap(),
            InitialState::Coherent(vec![C64::new(0.5, -0.25)])
        );
        assert_eq!(
            "coherent(1, 2i)".parse::<InitialState>().unwrap(),
            InitialState::Coherent(vec![C64::new(1.0, 0.0), C64::new(0.0, 2.0)])
        );
        assert!("thermal".parse::<InitialState>().is_err());
        assert!(InitialState::Excited.density(&Basis::BosonFock(vec![3])).is_err());
    }

    #[test]
    fn matrix_file_initial_state() {
        let dir = std::env::temp_dir().join(format!("tlme-evolve-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rho.txt");
        std::fs::write(&path, "0.5 0 0.5 0\n0.5 0 0.5 0\n").unwrap();
        let state: InitialState = format!("matrix:{}", path.display()).parse().unwrap();
        let rho = state.density(&Basis::Qubit).unwrap();
        assert_eq!(rho.rho[(0, 1)], C64::new(0.5, 0.0));
        std::fs::write(&path, "0.6 0 0 0\n0 0 0.6 0\n").unwrap();
        let bad: InitialState = format!("matrix:{}", path.display()).parse().unwrap();
        assert!(bad.density(&Basis::Qubit).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn coherent_state_moments() {
        let alpha = C64::new(0.6, -0.3);
        let rho = InitialState::Coherent(vec![alpha]).density(&Basis::BosonFock(vec![25])).unwrap();
        let a = Ladder::annihilation(&[25], 0);
        assert!((a.expectation(&rho.rho) - alpha).norm() < 1e-12);
        let two = InitialState::Coherent(vec![alpha, C64::new(0.0, 0.2)])
            .density(&Basis::BosonFock(vec![15, 12]))
            .unwrap();
        let a1 = Ladder::annihilation(&[15, 12], 1);
        assert!((a1.expectation(&two.rho) - C64::new(0.0, 0.2)).norm() < 1e-12);
        assert!((Ladder::annihilation(&[15, 12], 0).expectation(&two.rho) - alpha).norm() < 1e-12);
    }

    #[test]
    fn vacuum_is_dark_without_drive() {
        let t = track(1.0, 2.0, 0.3, 0.0, 0.0, 0.01, 5.0);
        let rho0 = InitialState::Vacuum.density(&Basis::BosonFock(vec![4])).unwrap();
        let out = evolve_boson_tlme(&t, &cfg(5.0, InitialState::Vacuum), &rho0).unwrap();
        assert!(crate::max_abs(&(&out.final_state.rho - &rho0.rho)) < 1e-14);
    }

    #[test]
    fn boson_first_moment_matches_exact() {
        let t = track(1.0, 1.0, 0.4, 0.1, 0.5, 0.01, 8.0);
        let c = cfg(8.0, InitialState::Coherent(vec![C64::new(0.3, 0.1)]));
        let rho0 = c.initial.density(&Basis::BosonFock(vec![12])).unwrap();
        let out = evolve_boson_tlme(&t, &c, &rho0).unwrap();
        let exact = exact_first_moment_at(&t, &CVector::from_element(1, C64::new(0.3, 0.1)), &out.times);
        for (m, e) in out.moments.iter().zip(&exact) {
            assert!((m[0] - e[0]).norm() < 1e-6, "{} vs {}", m[0], e[0]);
        }
        let grid = exact_first_moment(t.trajectory(), &Drive::scalar(0.5), &CVector::from_element(1, C64::new(0.3, 0.1))).unwrap();
        assert!((grid[100][0] - exact[20][0]).norm() < 1e-12);
        assert!(out.max_trace_error() < 1e-8);
        assert!(out.max_hermiticity_error() < 1e-8);
        assert!(!out.cutoff_warning());
    }

    #[test]
    fn thermal_population_follows_w() {
        let model = SpectralModel::lorentzian(1.0, 1.0, 0.0, 0.0).with_temperature(60.0, Some(60.0));
        let k = KernelSampler::new(vec![model], 1).unwrap();
        let traj = solve_volterra_general(&CouplingMatrix::scalar(0.5), &k, 0.01, 400).unwrap();
        let t = CoefficientTrack::build(traj, &Drive::scalar(0.0), Some(&k)).unwrap();
        let c = cfg(4.0, InitialState::Vacuum);
        let rho0 = InitialState::Vacuum.density(&Basis::BosonFock(vec![20])).unwrap();
        let out = evolve_boson_tlme(&t, &c, &rho0).unwrap();
        for (i, p) in out.populations.iter().enumerate() {
            let w = t.w()[5 * i][(0, 0)].re;
            assert!((p[0] - w).abs() < 1e-6, "t = {}: {} vs {w}", out.times[i], p[0]);
        }
        assert!(out.populations.last().unwrap()[0] > 0.1);
    }

    #[test]
    fn spontaneous_emission_is_exact() {
        let t = track(1.0, 0.5, 0.2, 0.05, 0.0, 0.01, 10.0);
        let c = cfg(10.0, InitialState::Excited);
        let rho0 = c.initial.density(&Basis::Qubit).unwrap();
        let out = evolve_qubit_tlme(&t, &c, &rho0).unwrap();
        for (i, sz) in out.sigma_z().iter().enumerate() {
            let v = t.trajectory().v(5 * i)[(0, 0)];
            assert!(((sz + 1.0) / 2.0 - v.norm_sqr()).abs() < 1e-8);
        }
        assert!(weak_excitation_flag(&out, WEAK_EXCITATION_THRESHOLD).outside_regime);
    }

    #[test]
    fn ground_state_is_stationary_without_drive() {
        let t = track(1.0, 0.5, 0.0, 0.0, 0.0, 0.01, 3.0);
        let c = cfg(3.0, InitialState::Ground);
        let rho0 = c.initial.density(&Basis::Qubit).unwrap();
        let out = evolve_qubit_tlme(&t, &c, &rho0).unwrap();
        assert!(out.sigma_z().iter().all(|&z| z == -1.0));
        let report = weak_excitation_flag(&out, WEAK_EXCITATION_THRESHOLD);
        assert_eq!(report.max_excited_population, 0.0);
        assert!(!report.outside_regime);
    }

    #[test]
    fn spontaneous_emission_through_poles() {
        // g = 2, λ = 0.2: V oscillates through zeros, P_e = |V|² touches 0.
        let t = track(40.0, 0.2, 0.0, 0.0, 0.0, 0.01, 6.0);
        assert!(t.poles().len() >= 3);
        let c = EvolveConfig {
            tolerance: 1e-12,
            ..cfg(6.0, InitialState::Excited)
        };
        let rho0 = c.initial.density(&Basis::Qubit).unwrap();
        let out = evolve_qubit_tlme(&t, &c, &rho0).unwrap();
        assert!(out.stats.pole_crossings >= 3);
        for (i, sz) in out.sigma_z().iter().enumerate() {
            let v = t.trajectory().v(5 * i)[(0, 0)];
            assert!(((sz + 1.0) / 2.0 - v.norm_sqr()).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_mismatched_basis_and_horizon() {
        let t = track(1.0, 0.5, 0.0, 0.0, 0.0, 0.01, 1.0);
        let rho = InitialState::Vacuum.density(&Basis::BosonFock(vec![3])).unwrap();
        assert!(matches!(
            evolve_qubit_tlme(&t, &cfg(1.0, InitialState::Vacuum), &rho),
            Err(EvolveError::BasisMismatch { .. })
        ));
        assert!(matches!(
            evolve_boson_tlme(&t, &cfg(2.0, InitialState::Vacuum), &rho),
            Err(EvolveError::HorizonTooLong { .. })
        ));
    }

    #[test]
    fn csv_columns() {
        let t = track(1.0, 0.5, 0.0, 0.0, 0.0, 0.01, 0.1);
        let c = cfg(0.1, InitialState::Excited);
        let out = evolve_qubit_tlme(&t, &c, &c.initial.density(&Basis::Qubit).unwrap()).unwrap();
        let mut buf = Vec::new();
        out.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "t,re_sigma_minus,im_sigma_minus,sigma_z,trace_error,hermiticity_error,min_eigenvalue"
        );
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn boson_moment_through_a_pole_matches_exact() {
        let p = crate::presets::Preset { t_end: 40.0, ..crate::presets::find("fig2").unwrap() };
        let coeffs = p.coefficients().unwrap();
        assert!(coeffs.poles().iter().any(|&t| t < 40.0));
        let cfg = p.evolve_config().unwrap();
        let rho0 = cfg.initial.density(&Basis::BosonFock(vec![cfg.cutoff])).unwrap();
        let traj = evolve_boson_tlme(&coeffs, &cfg, &rho0).unwrap();
        let exact = exact_first_moment_at(&coeffs, &CVector::zeros(1), &traj.times);
        for (m, e) in traj.moments.iter().zip(&exact) {
            assert!((m[0] - e[0]).norm() < 1e-8, "{} vs {}", m[0], e[0]);
        }
        assert!(traj.max_hermiticity_error() < 1e-9);
    }

    #[test]
    fn eigenvalue_check_survives_tiny_high_fock_entries() {
        let p = crate::presets::Preset { t_end: 0.05, cutoff: 30, ..crate::presets::find("strong-coupling").unwrap() };
        let coeffs = p.coefficients().unwrap();
        let cfg = p.evolve_config().unwrap();
        let rho0 = cfg.initial.density(&Basis::BosonFock(vec![cfg.cutoff])).unwrap();
        let traj = evolve_boson_tlme(&coeffs, &cfg, &rho0).unwrap();
        for e in &traj.min_eigenvalue {
            assert!(e.is_finite() && e.abs() < 1e-12, "{e}");
        }
    }

    #[test]
    fn driven_qubit_has_no_continuation_through_a_pole() {
        let p = crate::presets::Preset { t_end: 12.0, ..crate::presets::find("strong-coupling").unwrap() };
        let coeffs = p.coefficients().unwrap();
        assert!(coeffs.poles().iter().any(|&t| t < 12.0));
        let cfg = p.evolve_config().unwrap();
        let rho0 = cfg.initial.density(&Basis::Qubit).unwrap();
        let r = evolve_qubit_tlme(&coeffs, &cfg, &rho0);
        assert!(matches!(r, Err(EvolveError::Ode(OdeError::Monodromy { .. }))), "{:?}", r.map(|t| t.times.len()));
    }
}
