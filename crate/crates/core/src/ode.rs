//! Time steppers for matrix-valued ODEs.
//!
//! [`integrate_rk4`] is classical RK4 with step-doubling error control and
//! explicit handling of known coefficient poles. The right-hand side is
//! evaluated at complex times: a pole at `t_p` is crossed along semicircles
//! `|t - t_p| = r` in the upper and lower half planes. Solutions that are
//! analytic at the pole give the same result on both arcs; a branch point
//! (a genuinely singular solution) shows up as a mismatch.
//!
//! [`dopri5`] is an adaptive Dormand–Prince 5(4) integrator used for smooth,
//! non-singular systems.

use thiserror::Error;

use std::f64::consts::PI;

use crate::interp::hermite;
use crate::{max_abs, CMatrix, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("pole crossing at t = {time}: local error {error:.3e} still above tolerance at the minimum step")]
    PoleCrossing { time: f64, error: f64 },
    #[error("the solution is not single-valued around the pole at t = {time}: detours above and below land {mismatch:.3e} apart")]
    Monodromy { time: f64, mismatch: f64 },
    #[error("step size underflow at t = {time}: local error {error:.3e}")]
    StepTooSmall { time: f64, error: f64 },
    #[error("non-finite state at t = {time}")]
    NonFinite { time: f64 },
}

/// Step-size bounds and tolerance for [`integrate_rk4`].
#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub max_step: f64,
    pub min_step: f64,
    /// Absolute per-step tolerance on the max-abs state error.
    pub tolerance: f64,
    /// Radius of the semicircle used to cross a pole. Halved on rejection
    /// and capped at 0.45 of the distance to the next pole.
    pub pole_radius: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub pole_crossings: usize,
    pub smallest_step: f64,
}

fn rk4_step<F>(rhs: &F, t: C64, y: &CMatrix, f0: &CMatrix, h: C64) -> CMatrix
where
    F: Fn(C64, &CMatrix) -> CMatrix,
{
    let half = h * 0.5;
    let k1 = f0;
    let k2 = rhs(t + half, &(y + k1 * half));
    let k3 = rhs(t + half, &(y + &k2 * half));
    let k4 = rhs(t + h, &(y + &k3 * h));
    y + (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * (h / 6.0)
}

/// RK4 along the semicircle from `tp - r` to `tp + r` through `tp ± ir`,
/// parametrised by angle with `m` equal steps. Returns the final state and
/// the states at every step point, starting with `y0`.
fn arc<F>(rhs: &F, y0: &CMatrix, tp: f64, r: f64, upper: bool, m: usize) -> (CMatrix, Vec<CMatrix>)
where
    F: Fn(C64, &CMatrix) -> CMatrix,
{
    let sign = if upper { 1.0 } else { -1.0 };
    let point = |theta: f64| C64::new(tp, 0.0) + C64::from_polar(r, sign * (PI - theta));
    // dt/dθ = -i·sign·(t - tp)
    let g = |theta: f64, y: &CMatrix| rhs(point(theta), y) * (C64::new(0.0, -sign) * (point(theta) - tp));
    let h = PI / m as f64;
    let mut y = y0.clone();
    let mut samples = Vec::with_capacity(m + 1);
    samples.push(y.clone());
    for j in 0..m {
        let th = j as f64 * h;
        let k1 = g(th, &y);
        let k2 = g(th + 0.5 * h, &(&y + &k1 * C64::new(0.5 * h, 0.0)));
        let k3 = g(th + 0.5 * h, &(&y + &k2 * C64::new(0.5 * h, 0.0)));
        let k4 = g(th + h, &(&y + &k3 * C64::new(h, 0.0)));
        y += (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0);
        samples.push(y.clone());
    }
    (y, samples)
}

/// Solution samples on the full circle `|t - tp| = r` at equally spaced
/// angles, used to evaluate the solution inside it by Cauchy's formula.
struct Circle {
    tp: f64,
    points: Vec<(C64, CMatrix)>,
}

impl Circle {
    fn new(tp: f64, r: f64, upper: Vec<CMatrix>, lower: Vec<CMatrix>) -> Self {
        let m = upper.len() - 1;
        let mut points = Vec::with_capacity(2 * m);
        let at = |phi: f64| C64::new(tp, 0.0) + C64::from_polar(r, phi);
        for (j, y) in upper.iter().enumerate().take(m) {
            points.push((at(PI - j as f64 * PI / m as f64), y.clone()));
        }
        points.push((at(0.0), (&upper[m] + &lower[m]) * C64::new(0.5, 0.0)));
        for j in (1..m).rev() {
            points.push((at(-(PI - j as f64 * PI / m as f64)), lower[j].clone()));
        }
        Self { tp, points }
    }

    fn value(&self, t: f64) -> CMatrix {
        let s = C64::new(t, 0.0);
        let n = self.points.len() as f64;
        let mut acc = self.points[0].1.clone() * C64::new(0.0, 0.0);
        for (z, y) in &self.points {
            acc += y * ((z - self.tp) / (z - s) / n);
        }
        acc
    }
}
const ARC_MIN_STEPS: usize = 16;
const ARC_MAX_STEPS: usize = 512;
/// Landing disagreement, in tolerances, that no smaller circle is tried for.
const MONODROMY_FACTOR: f64 = 1e3;

/// Crosses the pole at `tp` starting from `tp - r`. Returns the state at
/// `tp + r`, the error estimate and the samples on the circle.
fn cross_pole<F>(rhs: &F, y0: &CMatrix, tp: f64, r: f64, tolerance: f64) -> Crossing
where
    F: Fn(C64, &CMatrix) -> CMatrix,
{
    let mut m = ARC_MIN_STEPS;
    let mut coarse = arc(rhs, y0, tp, r, true, m).0;
    loop {
        let (fine, upper_samples) = arc(rhs, y0, tp, r, true, 2 * m);
        let discretisation = max_abs(&(&fine - &coarse)) / 15.0;
        if discretisation <= tolerance || 2 * m >= ARC_MAX_STEPS || !discretisation.is_finite() {
            let upper = &fine + (&fine - &coarse) * C64::new(1.0 / 15.0, 0.0);
            let (lower, lower_samples) = arc(rhs, y0, tp, r, false, 2 * m);
            let branch = max_abs(&(&upper - &lower));
            let finite = discretisation.is_finite() && branch.is_finite() && upper.iter().all(|z| z.is_finite());
            return Crossing {
                y: (upper + lower) * C64::new(0.5, 0.0),
                discretisation: if finite { discretisation } else { f64::INFINITY },
                branch: if finite { branch } else { f64::INFINITY },
                circle: Circle::new(tp, r, upper_samples, lower_samples),
            };
        }
        coarse = fine;
        m *= 2;
    }
}

struct Crossing {
    y: CMatrix,
    /// Arc integration error.
    discretisation: f64,
    /// Disagreement of the two landings.
    branch: f64,
    circle: Circle,
}

/// RK4 step of `h` with a step-doubling error estimate; returns the
/// Richardson-extrapolated state and the estimate.
fn doubled_step<F>(rhs: &F, t: f64, y: &CMatrix, f: &CMatrix, h: f64) -> (CMatrix, f64)
where
    F: Fn(C64, &CMatrix) -> CMatrix,
{
    let re = |x: f64| C64::new(x, 0.0);
    let full = rk4_step(rhs, re(t), y, f, re(h));
    let half = rk4_step(rhs, re(t), y, f, re(0.5 * h));
    let f_half = rhs(re(t + 0.5 * h), &half);
    let fine = rk4_step(rhs, re(t + 0.5 * h), &half, &f_half, re(0.5 * h));
    let mut err = max_abs(&(&fine - &full)) / 15.0;
    if !err.is_finite() || fine.iter().chain(full.iter()).any(|z| !z.is_finite()) {
        err = f64::INFINITY;
    }
    (&fine + (&fine - &full) * re(1.0 / 15.0), err)
}

/// Adaptive RK4 along the real axis from `(t0, y0)` through `targets`,
/// which must be monotone in either direction and free of poles.
fn march<F>(rhs: &F, y0: &CMatrix, t0: f64, targets: &[f64], ctl: &StepControl) -> Result<Vec<CMatrix>, OdeError>
where
    F: Fn(C64, &CMatrix) -> CMatrix,
{
    let mut out = Vec::with_capacity(targets.len());
    let (mut t, mut y) = (t0, y0.clone());
    let mut k = ctl.max_step;
    for &target in targets {
        while (target - t).abs() > 1e-12 * (1.0 + target.abs()) {
            let step = k.min(ctl.max_step).min((target - t).abs());
            let h = step.copysign(target - t);
            let f = rhs(C64::new(t, 0.0), &y);
            let (y_new, err) = doubled_step(rhs, t, &y, &f, h);
            if err <= ctl.tolerance {
                t = if step == (target - t).abs() { target } else { t + h };
                y = y_new;
                let grow = if err == 0.0 { 2.0 } else { (0.9 * (ctl.tolerance / err).powf(0.2)).clamp(0.2, 2.0) };
                k = step * grow;
            } else if step <= ctl.min_step {
                return Err(if err.is_finite() {
                    OdeError::StepTooSmall { time: t, error: err }
                } else {
                    OdeError::NonFinite { time: t }
                });
            } else {
                k = (step * (0.9 * (ctl.tolerance / err).powf(0.2)).clamp(0.1, 0.5)).max(ctl.min_step);
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// States at the outputs strictly inside a crossing window: by Cauchy's
/// formula within half the radius of the pole, otherwise by marching
/// inwards from the nearer end of the window.
#[allow(clippy::too_many_arguments)]
fn window_outputs<F>(
    rhs: &F,
    circle: &Circle,
    r: f64,
    (t0, y0): (f64, &CMatrix),
    (t1, y1): (f64, &CMatrix),
    inside: &[f64],
    ctl: &StepControl,
) -> Result<Vec<CMatrix>, OdeError>
where
    F: Fn(C64, &CMatrix) -> CMatrix,
{
    let tp = circle.tp;
    let near = |o: f64| (o - tp).abs() <= 0.5 * r;
    let before: Vec<f64> = inside.iter().copied().filter(|&o| o < tp && !near(o)).collect();
    let mut after: Vec<f64> = inside.iter().copied().filter(|&o| o > tp && !near(o)).collect();
    after.reverse();
    let mut early = march(rhs, y0, t0, &before, ctl)?.into_iter();
    let mut late = march(rhs, y1, t1, &after, ctl)?;
    Ok(inside
        .iter()
        .map(|&o| {
            if near(o) {
                circle.value(o)
            } else if o < tp {
                early.next().unwrap_or_else(|| y0.clone())
            } else {
                late.pop().unwrap_or_else(|| y1.clone())
            }
        })
        .collect())
}

/// Integrates `y' = rhs(t, y)` from `t0` through every time in `outputs`
/// (ascending, ≥ t0), calling `observer(index, t, y)` at each. `poles` lists
/// real times where the right-hand side is singular; `rhs` must accept
/// complex times in a neighbourhood of each pole and be analytic there
/// apart from the pole itself.
pub fn integrate_rk4<F, O>(
    rhs: F,
    y0: CMatrix,
    t0: f64,
    outputs: &[f64],
    poles: &[f64],
    ctl: StepControl,
    mut observer: O,
) -> Result<(CMatrix, StepStats), OdeError>
where
    F: Fn(C64, &CMatrix) -> CMatrix,
    O: FnMut(usize, f64, &CMatrix),
{
    let re = |x: f64| C64::new(x, 0.0);
    let mut stats = StepStats {
        smallest_step: f64::INFINITY,
        ..Default::default()
    };
    let Some(&t_end) = outputs.last() else {
        return Ok((y0, stats));
    };
    let mut t = t0;
    let mut y = y0;
    let mut f = rhs(re(t), &y);
    let mut next_out = 0;
    let time_eps = 1e-12 * (1.0 + t_end.abs());
    while next_out < outputs.len() && outputs[next_out] <= t + time_eps {
        observer(next_out, outputs[next_out], &y);
        next_out += 1;
    }
    let mut pole_idx = poles.partition_point(|&p| p <= t0);
    let mut k = ctl.max_step;
    let mut radius: Option<f64> = None;

    while next_out < outputs.len() {
        let mut step = k.min(ctl.max_step).min(t_end - t);
        let mut crossing = None;
        let mut approaching = None;
        if let Some(&tp) = poles.get(pole_idx) {
            let gap = poles.get(pole_idx + 1).map_or(f64::INFINITY, |&q| q - tp);
            let r = radius.unwrap_or(ctl.pole_radius).min(0.45 * gap);
            let d = tp - t;
            if d <= r * (1.0 + 1e-9) || d - r < ctl.min_step.max(4.0 * f64::EPSILON * tp.abs().max(1.0)) {
                crossing = Some((tp, d, d > r * (1.0 + 1e-9)));
                step = 2.0 * d;
            } else if d < step + r {
                approaching = Some(tp);
                step = d - r;
            }
        }

        let mut circle = None;
        let mut monodromy = false;
        let (y_new, err) = match crossing {
            Some((tp, d, _)) => {
                let c = cross_pole(&rhs, &y, tp, d, ctl.tolerance);
                // Converged arcs that land far apart: the solution is not
                // single-valued around the pole, and a smaller circle
                // would only hide that.
                monodromy = c.discretisation <= ctl.tolerance && c.branch > MONODROMY_FACTOR * ctl.tolerance;
                circle = Some(c.circle);
                (c.y, c.discretisation.max(c.branch))
            }
            None => doubled_step(&rhs, t, &y, &f, step),
        };

        let at_floor = match crossing {
            Some((_, d, forced)) => forced || monodromy || d <= ctl.min_step,
            None => step <= ctl.min_step * (1.0 + 1e-9),
        };
        if err <= ctl.tolerance || at_floor {
            if err > ctl.tolerance {
                return Err(match crossing {
                    Some((tp, _, _)) if monodromy => OdeError::Monodromy { time: tp, mismatch: err },
                    Some((tp, _, _)) => OdeError::PoleCrossing { time: tp, error: err },
                    None if approaching.is_some() => OdeError::PoleCrossing {
                        time: approaching.unwrap_or(t),
                        error: err,
                    },
                    None if poles.get(pole_idx).is_some_and(|&tp| tp - t < 100.0 * step.max(ctl.pole_radius)) => {
                        OdeError::PoleCrossing { time: poles[pole_idx], error: err }
                    }
                    None if err.is_infinite() => OdeError::NonFinite { time: t },
                    None => OdeError::StepTooSmall { time: t, error: err },
                });
            }
            let t_new = t + step;
            let f_new = rhs(re(t_new), &y_new);
            let first = next_out;
            while next_out < outputs.len() && outputs[next_out] <= t_new + time_eps {
                next_out += 1;
            }
            let due = &outputs[first..next_out];
            match (&circle, crossing) {
                (Some(c), Some((_, d, _))) => {
                    let eps = 1e-9 * step;
                    let inside: Vec<f64> = due.iter().copied().filter(|&o| o - t > eps && t_new - o > eps).collect();
                    let mut values = window_outputs(&rhs, c, d, (t, &y), (t_new, &y_new), &inside, &ctl)?.into_iter();
                    for (i, &o) in due.iter().enumerate() {
                        let value = if o - t <= eps {
                            y.clone()
                        } else if t_new - o <= eps {
                            y_new.clone()
                        } else {
                            values.next().unwrap_or_else(|| y_new.clone())
                        };
                        observer(first + i, o, &value);
                    }
                }
                _ => {
                    for (i, &o) in due.iter().enumerate() {
                        let s = ((o - t) / step).clamp(0.0, 1.0);
                        observer(first + i, o, &hermite(&y, &f, &y_new, &f_new, step, s).0);
                    }
                }
            }
            stats.accepted += 1;
            stats.smallest_step = stats.smallest_step.min(step);
            if crossing.is_some() {
                stats.pole_crossings += 1;
                pole_idx += 1;
                radius = None;
            }
            while poles.get(pole_idx).is_some_and(|&p| p <= t_new) {
                pole_idx += 1;
            }
            t = t_new;
            y = y_new;
            f = f_new;
            if crossing.is_none() {
                let grow = if err == 0.0 { 2.0 } else { (0.9 * (ctl.tolerance / err).powf(0.2)).clamp(0.2, 2.0) };
                k = (step * grow).max(ctl.min_step);
            }
        } else {
            stats.rejected += 1;
            if let Some((_, d, _)) = crossing {
                // A smaller radius means approaching the pole more closely first.
                radius = Some(0.5 * d);
            } else {
                let shrink = (0.9 * (ctl.tolerance / err).powf(0.2)).clamp(0.1, 0.5);
                k = (step * shrink).max(ctl.min_step);
            }
        }
    }
    Ok((y, stats))
}

/// Tolerances for [`dopri5`].
#[derive(Debug, Clone, Copy)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-14,
            initial_step: 1e-3,
            max_steps: 10_000_000,
        }
    }
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Adaptive Dormand–Prince 5(4). Returns the state at each of `outputs`
/// (ascending, ≥ t0), landing exactly on every output time.
pub fn dopri5<F>(
    rhs: F,
    y0: CMatrix,
    t0: f64,
    outputs: &[f64],
    opts: Dopri5Options,
) -> Result<Vec<CMatrix>, OdeError>
where
    F: Fn(f64, &CMatrix) -> CMatrix,
{
    let c = |x: f64| C64::new(x, 0.0);
    let mut result = Vec::with_capacity(outputs.len());
    let mut t = t0;
    let mut y = y0;
    let mut h = opts.initial_step;
    let mut k1 = rhs(t, &y);
    let mut steps = 0usize;
    for &target in outputs {
        while t < target {
            if steps >= opts.max_steps {
                return Err(OdeError::StepTooSmall { time: t, error: f64::NAN });
            }
            steps += 1;
            let last = t + h >= target;
            let step = if last { target - t } else { h };
            let k2 = rhs(t + step / 5.0, &(&y + &k1 * c(step * A21)));
            let k3 = rhs(t + 0.3 * step, &(&y + (&k1 * c(A31) + &k2 * c(A32)) * c(step)));
            let k4 = rhs(
                t + 0.8 * step,
                &(&y + (&k1 * c(A41) + &k2 * c(A42) + &k3 * c(A43)) * c(step)),
            );
            let k5 = rhs(
                t + 8.0 / 9.0 * step,
                &(&y + (&k1 * c(A51) + &k2 * c(A52) + &k3 * c(A53) + &k4 * c(A54)) * c(step)),
            );
            let k6 = rhs(
                t + step,
                &(&y + (&k1 * c(A61) + &k2 * c(A62) + &k3 * c(A63) + &k4 * c(A64) + &k5 * c(A65)) * c(step)),
            );
            let y_new = &y + (&k1 * c(B1) + &k3 * c(B3) + &k4 * c(B4) + &k5 * c(B5) + &k6 * c(B6)) * c(step);
            let k7 = rhs(t + step, &y_new);
            let err_vec = (&k1 * c(E1) + &k3 * c(E3) + &k4 * c(E4) + &k5 * c(E5) + &k6 * c(E6) + &k7 * c(E7)) * c(step);
            let mut err = 0.0_f64;
            for (e, (a, b)) in err_vec.iter().zip(y.iter().zip(y_new.iter())) {
                let scale = opts.atol + opts.rtol * a.norm().max(b.norm());
                err = err.max(e.norm() / scale);
            }
            if !err.is_finite() {
                return Err(OdeError::NonFinite { time: t });
            }
            if err <= 1.0 {
                t = if last { target } else { t + step };
                y = y_new;
                k1 = k7;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if !(err <= 1.0 && last) {
                h = step * factor;
            }
            if h < 1e-14 * (1.0 + t.abs()) {
                return Err(OdeError::StepTooSmall { time: t, error: err });
            }
        }
        result.push(y.clone());
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(z: C64) -> CMatrix {
        CMatrix::from_element(1, 1, z)
    }

    #[test]
    fn dopri5_solves_oscillator() {
        let outputs: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let mu = C64::new(-0.3, 2.0);
        let ys = dopri5(|_, y: &CMatrix| y * mu, scalar(C64::new(1.0, 0.0)), 0.0, &outputs, Dopri5Options::default()).unwrap();
        for (t, y) in outputs.iter().zip(&ys) {
            assert!((y[(0, 0)] - (mu * t).exp()).norm() < 1e-10);
        }
    }

    #[test]
    fn rk4_crosses_a_regular_singular_point() {
        // y' = y/(t-1) + (t-1): every solution is C(t-1) + (t-1)^2, all smooth through t = 1.
        let rhs = |t: C64, y: &CMatrix| y * (1.0 / (t - 1.0)) + scalar(t - 1.0);
        let outputs: Vec<f64> = (1..=40).map(|i| 0.05 * i as f64).collect();
        let ctl = StepControl { max_step: 0.05, min_step: 1e-8, tolerance: 1e-12, pole_radius: 0.05 };
        let mut worst = 0.0_f64;
        let (_, stats) = integrate_rk4(rhs, scalar(C64::new(1.0, 0.0)), 0.0, &outputs, &[1.0], ctl, |_, t, y| {
            worst = worst.max((y[(0, 0)] - (t - 1.0).powi(2)).norm());
        })
        .unwrap();
        assert_eq!(stats.pole_crossings, 1);
        assert!(worst < 1e-8, "worst error {worst}");
    }

    #[test]
    fn rk4_crosses_oscillating_green_function_poles() {
        // y' = -γ(t) y with γ = -V'/V, V = cos t: y = cos t, crossing zeros of V.
        let rhs = |t: C64, y: &CMatrix| y * (-t.sin() / t.cos());
        let outputs: Vec<f64> = (1..=100).map(|i| 0.1 * i as f64).collect();
        let half_pi = std::f64::consts::FRAC_PI_2;
        let poles = [half_pi, 3.0 * half_pi, 5.0 * half_pi];
        let ctl = StepControl { max_step: 0.1, min_step: 1e-9, tolerance: 1e-12, pole_radius: 0.1 };
        let mut worst = 0.0_f64;
        let (_, stats) = integrate_rk4(rhs, scalar(C64::new(1.0, 0.0)), 0.0, &outputs, &poles, ctl, |_, t, y| {
            worst = worst.max((y[(0, 0)] - t.cos()).norm());
        })
        .unwrap();
        assert_eq!(stats.pole_crossings, 3);
        assert!(worst < 1e-8, "worst error {worst}");
    }

    #[test]
    fn outputs_next_to_a_pole_are_exact() {
        let rhs = |t: C64, y: &CMatrix| y * (-t.sin() / t.cos());
        let tp = std::f64::consts::FRAC_PI_2;
        let outputs = [tp - 0.02, tp - 1e-7, tp + 0.004, tp + 0.03, 2.0];
        let ctl = StepControl { max_step: 0.1, min_step: 1e-9, tolerance: 1e-12, pole_radius: 0.1 };
        let mut worst = 0.0_f64;
        integrate_rk4(rhs, scalar(C64::new(1.0, 0.0)), 0.0, &outputs, &[tp], ctl, |_, t, y| {
            worst = worst.max((y[(0, 0)] - t.cos()).norm());
        })
        .unwrap();
        assert!(worst < 1e-10, "worst error {worst}");
    }

    #[test]
    fn rk4_reports_unresolvable_pole() {
        // y' = 1/(t-1) has solutions log|t-1| + C: a branch point, not crossable.
        let rhs = |t: C64, y: &CMatrix| CMatrix::from_element(y.nrows(), y.ncols(), 1.0 / (t - 1.0));
        let ctl = StepControl { max_step: 0.1, min_step: 1e-6, tolerance: 1e-10, pole_radius: 0.1 };
        let r = integrate_rk4(rhs, scalar(C64::new(0.0, 0.0)), 0.0, &[2.0], &[1.0], ctl, |_, _, _| {});
        assert!(matches!(r, Err(OdeError::Monodromy { .. })), "{r:?}");
    }

    #[test]
    fn unresolvable_pole_fails_even_below_time_resolution() {
        // Harmless on the real axis, overflowing off it: every circle is
        // rejected until the radius drops below the resolution of t.
        let rhs = |t: C64, y: &CMatrix| y * C64::new(t.im.abs() * 1e300, 0.0);
        let ctl = StepControl { max_step: 0.1, min_step: 1e-17, tolerance: 1e-10, pole_radius: 0.4 };
        let r = integrate_rk4(rhs, scalar(C64::new(1.0, 0.0)), 0.0, &[2.0], &[1.0], ctl, |_, _, _| {});
        assert!(matches!(r, Err(OdeError::PoleCrossing { .. })), "{r:?}");
    }
}
