use proptest::prelude::*;

use tlme::analysis::{constraint_residual, laplace_steady_state, sigma_z_closed_form, RatioSteadyState};
use tlme::evolve::{evolve_boson_tlme, evolve_qubit_tlme, exact_first_moment, Basis, InitialState};
use tlme::presets::{self, Preset};
use tlme::spectral::{KernelSampler, Lorentzian};
use tlme::{CVector, C64};

/// Overdamped (`λ > 2Γ`) so that no pole of γ falls in the window.
fn overdamped(linewidth: f64, detuning: f64, drive: f64) -> Preset {
    Preset { linewidth, detuning, offset: 0.0, drive, t_end: 3.0, step: 0.01, cutoff: 12, ..presets::find("driven").unwrap() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lorentzian_density_is_positive_and_symmetric(
        gamma in 0.01f64..10.0, width in 0.01f64..10.0, detuning in -5.0f64..5.0, x in -50.0f64..50.0,
    ) {
        let l = Lorentzian::new(gamma, width, detuning, 0.0);
        let (a, b) = (l.density(l.center() + x), l.density(l.center() - x));
        prop_assert!(a > 0.0);
        prop_assert!((a - b).abs() <= 1e-14 * a);
        prop_assert!(a <= l.density(l.center()));
    }

    #[test]
    fn sampled_kernel_matches_closed_form(
        gamma in 0.1f64..5.0, width in 0.1f64..5.0, detuning in -3.0f64..3.0, offset in -1.0f64..1.0, tau in 0.0f64..20.0,
    ) {
        let l = Lorentzian::new(gamma, width, detuning, offset);
        let sampler = KernelSampler::lorentzian(gamma, width, detuning, offset).unwrap();
        let f = sampler.dissipation(tau).unwrap()[(0, 0)];
        prop_assert!((f - l.kernel(tau)).norm() <= 1e-10 * l.coupling_squared(), "{} vs {}", f, l.kernel(tau));
    }

    #[test]
    fn ratio_steady_state_saturates_the_constraint(re in -20.0f64..20.0, im in -20.0f64..20.0) {
        let s = RatioSteadyState::from_convolution(C64::new(re, im));
        prop_assert!((-1.0..0.0).contains(&s.sigma_z));
        prop_assert!(constraint_residual(s.sigma_z, s.sigma_minus).residual.abs() < 1e-12);
    }

    #[test]
    fn laplace_steady_state_matches_closed_form(
        width in 0.05f64..20.0, delta in -10.0f64..10.0, omega in 0.01f64..5.0,
    ) {
        let kernel = KernelSampler::lorentzian(1.0, width, delta, 0.0).unwrap();
        let s = laplace_steady_state(delta, &kernel, C64::new(omega, 0.0)).unwrap();
        let closed = sigma_z_closed_form(1.0, width, delta, omega);
        prop_assert!((s.sigma_z - closed).abs() < 1e-10, "{} vs {}", s.sigma_z, closed);
    }

    #[test]
    fn boson_tlme_preserves_trace_and_hermiticity(
        width in 2.5f64..10.0, detuning in -2.0f64..2.0, drive in 0.0f64..0.6,
    ) {
        let p = overdamped(width, detuning, drive);
        let coeffs = p.coefficients().unwrap();
        let cfg = p.evolve_config().unwrap();
        let rho0 = cfg.initial.density(&Basis::BosonFock(vec![cfg.cutoff])).unwrap();
        let traj = evolve_boson_tlme(&coeffs, &cfg, &rho0).unwrap();
        prop_assert!(traj.max_trace_error() < 1e-8 * p.t_end);
        prop_assert!(traj.max_hermiticity_error() < 1e-8);
        let exact = exact_first_moment(&p.green().unwrap(), &p.drive(), &CVector::zeros(1)).unwrap();
        let stride = exact.len() / (traj.moments.len() - 1);
        prop_assume!(stride * (traj.moments.len() - 1) == exact.len() - 1);
        for (k, m) in traj.moments.iter().enumerate() {
            prop_assert!((m[0] - exact[k * stride][0]).norm() < 1e-6, "{} vs {}", m[0], exact[k * stride][0]);
        }
    }

    #[test]
    fn qubit_tlme_preserves_trace_and_hermiticity(
        width in 2.5f64..10.0, detuning in -2.0f64..2.0, drive in 0.0f64..1.0, excited in any::<bool>(),
    ) {
        let p = overdamped(width, detuning, drive);
        let coeffs = p.coefficients().unwrap();
        let mut cfg = p.evolve_config().unwrap();
        cfg.initial = if excited { InitialState::Excited } else { InitialState::Ground };
        let rho0 = cfg.initial.density(&Basis::Qubit).unwrap();
        let traj = evolve_qubit_tlme(&coeffs, &cfg, &rho0).unwrap();
        prop_assert!(traj.max_trace_error() < 1e-8 * p.t_end);
        prop_assert!(traj.max_hermiticity_error() < 1e-8);
    }
}
