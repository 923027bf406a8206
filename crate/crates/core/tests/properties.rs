use std::f64::consts::{PI, TAU};

use normhyp::bundle::{unstable_branch_orbit, variational_angle};
use normhyp::cycles::divergence_integral;
use normhyp::lyapunov::{estimate_type_numbers, period_grid_ex1, ManifoldFrame};
use normhyp::ode::{integrate, integrate_variational, IntegratorConfig};
use normhyp::systems::{make_system, SystemKind};
use normhyp::torus::{backward_theta_limit, sweep_invariant_set};
use proptest::prelude::*;

fn cfg() -> IntegratorConfig {
    IntegratorConfig::default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn liouville_on_example2(x in -1.2f64..1.2, y in -0.8f64..0.8, c in -0.1f64..0.0, t in 0.5f64..5.0) {
        let sys = make_system(SystemKind::Example2, c).unwrap();
        // orbits outside the outer cycle escape in finite time; skip those
        let var = integrate_variational(&sys, &[x, y], (0.0, t), &cfg());
        prop_assume!(var.is_ok());
        let var = var.unwrap();
        let det = var.final_phi().determinant();
        // ∫ div f solved as an augmented ODE, independent of the Φ solve
        let expect = divergence_integral(&sys, [x, y], t, &cfg()).unwrap().exp();
        prop_assert!((det - expect).abs() <= 1e-6 * expect.abs(), "det {det} vs {expect}");
    }

    #[test]
    fn backward_forward_on_invariant_sets(theta in 0.0f64..TAU, zeta in 0.2f64..3.0, beta in 0.0f64..1.0, t in 0.5f64..10.0) {
        // example1 circle and the orbit E of example3 stay in their domains
        for (kind, p, x0) in [
            (SystemKind::Example1, beta, vec![0.0, theta]),
            (SystemKind::Example3, beta, vec![0.0, zeta, PI]),
        ] {
            let sys = make_system(kind, p).unwrap();
            let back = integrate(&sys, &x0, (0.0, -t), &cfg()).unwrap();
            let fwd = integrate(&sys, back.final_state(), (-t, 0.0), &cfg()).unwrap();
            let d = fwd.final_state().iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(d < 1e-7, "{kind}: {d}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn type_numbers_constant_along_trajectories(theta in 0.0f64..TAU, s in 0.0f64..5.0) {
        let sys = make_system(SystemKind::Example1, 1.0).unwrap();
        let grid = period_grid_ex1(1.0, 10);
        let p = [0.0, theta];
        let q = integrate(&sys, &p, (0.0, -s), &cfg()).unwrap().final_state().to_vec();
        let ep = estimate_type_numbers(&sys, &ManifoldFrame::CircleEx1, &p, &grid, &cfg()).unwrap();
        let eq = estimate_type_numbers(&sys, &ManifoldFrame::CircleEx1, &q, &grid, &cfg()).unwrap();
        prop_assert!((ep.nu_tail - eq.nu_tail).abs() < 1e-4);
        prop_assert!((ep.sigma_tail.unwrap() - eq.sigma_tail.unwrap()).abs() < 1e-4);

        let sys3 = make_system(SystemKind::Example3, 0.7).unwrap();
        let grid3: Vec<f64> = (1..=12).map(f64::from).collect();
        let a = estimate_type_numbers(&sys3, &ManifoldFrame::TorusEx3AtGamma, &[0.0, 0.0, theta], &grid3, &cfg()).unwrap();
        let b = estimate_type_numbers(&sys3, &ManifoldFrame::TorusEx3AtGamma, &[0.0, 0.0, theta + s], &grid3, &cfg()).unwrap();
        prop_assert!((a.nu_tail - b.nu_tail).abs() < 1e-4);
        prop_assert!((a.nu_tail - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    // near β_c the orbit shadows the saddle direction and both solves
    // lose digits; the property is checked away from it
    fn angle_system_matches_variational_flow(beta in prop_oneof![0.0f64..0.78, 0.86f64..1.0]) {
        let o = unstable_branch_orbit(beta, &cfg()).unwrap();
        let zetas: Vec<f64> = (0..=29).map(|k| 0.1 + 0.1 * k as f64).collect();
        let got = variational_angle(beta, o.alpha_at(0.1).unwrap(), 0.1, &zetas, &cfg()).unwrap();
        for (z, g) in zetas.iter().zip(got) {
            prop_assert!((g - o.alpha_at(*z).unwrap()).abs() < 1e-4, "ζ = {}", z);
        }
    }
}

#[test]
fn sweep_curves_wind_once() {
    for beta in [0.0, 0.65, 1.0] {
        let curves = sweep_invariant_set(beta, 0.01, &[0.5, 2.0, 0.95 * PI], 64, &cfg()).unwrap();
        for c in &curves {
            assert!(c.winding_defect(&cfg()).unwrap().abs() < 1e-9);
            assert!(c.samples.windows(2).all(|w| w[1].s > w[0].s));
        }
    }
}

#[test]
fn backward_limit_is_cauchy() {
    // increments of θ along the backward orbit shrink like the section
    // spacing; the last one is below 1e-3
    for beta in [0.5, 1.0] {
        for th in [0.5, 2.0, 4.0] {
            let t = backward_theta_limit(beta, PI / 2.0, th, &[1e-2, 1e-3, 1e-4], &cfg()).unwrap();
            let (d1, d2) = ((t[0] - t[1]).abs(), (t[1] - t[2]).abs());
            assert!(d2 <= 1e-3, "β = {beta}, θ = {th}: {t:?}");
            assert!(d2 <= 0.2 * d1 + 1e-12);
        }
    }
}
