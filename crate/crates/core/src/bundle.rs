//! Rotation of the normal bundle along `E = {a = 0, ζ ∈ (0, π), θ = π}`.
//!
//! Writing a normal variation as `(δa, δθ) = ρ (sin α, cos α)`, the
//! linearized flow along `E` projects to
//!
//! ```text
//! α' = −cos α sin α − sin²α − β² sin²ζ cos²α,   ζ' = sin²ζ,
//! ```
//!
//! integrated here with ζ as the independent variable. The orbit leaving
//! the fixed point `(α, ζ) = (0, 0)` defines the bundle; its winding in α
//! flips from 0 to −1 at the critical β.

use std::f64::consts::{FRAC_PI_4, PI};
use std::ops::ControlFlow;

use crate::error::{Error, Result};
use crate::ode::{integrate_variational_with, solve, FnRhs, IntegratorConfig, PhiErrorControl, Trajectory, VariationalOptions};
use crate::systems::{make_system, SystemKind};
use crate::torus::{time_to_zeta, transport, DEFAULT_ZETA0};

/// Launch section of the unstable branch.
pub const SEED_ZETA: f64 = 1e-4;
/// Section from which the launch point is relaxed onto the branch.
pub const SEED_ZETA_FINE: f64 = 1e-5;
pub const ZETA_CUTOFF: f64 = PI - 1e-4;
/// Distance (mod π) within which the terminal angle counts as converged.
pub const CLASS_THRESHOLD: f64 = 0.05;
/// The second fixed point of the angle system, `α = 3π/4`.
pub const ALPHA_SADDLE: f64 = 3.0 * FRAC_PI_4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalClass {
    HomoclinicToOrigin,
    Heteroclinic,
    Unresolved,
}

impl TerminalClass {
    pub fn name(self) -> &'static str {
        match self {
            TerminalClass::HomoclinicToOrigin => "homoclinic-to-origin",
            TerminalClass::Heteroclinic => "heteroclinic-to-(3pi/4,0)",
            TerminalClass::Unresolved => "unresolved",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AngularOrbit {
    pub beta: f64,
    /// `(ζ, α)` at the accepted steps, α unwrapped.
    pub samples: Vec<(f64, f64)>,
    pub w_alpha: i32,
    pub w_zeta: i32,
    pub terminal_alpha: f64,
    pub class: TerminalClass,
    /// Change of the launch angle from relaxing the first-order seed.
    pub seed_correction: f64,
    traj: Trajectory,
}

impl AngularOrbit {
    /// α at section ζ by dense interpolation.
    pub fn alpha_at(&self, zeta: f64) -> Option<f64> {
        self.traj.eval(zeta).map(|v| v[0])
    }

    pub fn zeta_range(&self) -> (f64, f64) {
        (self.traj.t_start(), self.traj.t_end())
    }
}

/// Right-hand side of the angle system at `(α, ζ)`.
pub fn angle_rhs(beta: f64, alpha: f64, zeta: f64) -> (f64, f64) {
    let (sa, ca) = alpha.sin_cos();
    let s2 = zeta.sin().powi(2);
    (-ca * sa - sa * sa - beta * beta * s2 * ca * ca, s2)
}

fn reduced_rhs(beta: f64) -> FnRhs<impl Fn(f64, &[f64], &mut [f64])> {
    FnRhs {
        dim: 1,
        f: move |z: f64, y: &[f64], dy: &mut [f64]| {
            let (da, dz) = angle_rhs(beta, y[0], z);
            dy[0] = da / dz;
        },
    }
}

/// Distance from `x` to the nearest point of `target + πℤ`.
pub fn dist_mod_pi(x: f64, target: f64) -> f64 {
    let r = (x - target).rem_euclid(PI);
    r.min(PI - r)
}

fn terminal_class(alpha: f64) -> TerminalClass {
    if dist_mod_pi(alpha, 0.0) <= CLASS_THRESHOLD {
        TerminalClass::HomoclinicToOrigin
    } else if dist_mod_pi(alpha, ALPHA_SADDLE) <= CLASS_THRESHOLD {
        TerminalClass::Heteroclinic
    } else {
        TerminalClass::Unresolved
    }
}

/// Integrates the angle system from `(alpha0, zeta0)` to `zeta_end`.
pub fn integrate_bundle_angle(beta: f64, alpha0: f64, zeta0: f64, zeta_end: f64, cfg: &IntegratorConfig) -> Result<AngularOrbit> {
    if !(zeta0 > 0.0 && zeta0 < zeta_end && zeta_end < PI) {
        return Err(Error::InvalidInput(format!(
            "need 0 < zeta0 < zeta_end < π, got {zeta0}, {zeta_end}"
        )));
    }
    let mut cfg = *cfg;
    cfg.dense_output = true;
    let traj = solve(&reduced_rhs(beta), zeta0, zeta_end, &[alpha0], &cfg, |_| ControlFlow::Continue(()))?;
    let samples: Vec<(f64, f64)> = traj.times.iter().zip(&traj.states).map(|(&z, s)| (z, s[0])).collect();
    let terminal = traj.final_state()[0];
    Ok(AngularOrbit {
        beta,
        w_alpha: ((terminal - alpha0) / PI).round() as i32,
        w_zeta: ((zeta_end - zeta0) / PI).round() as i32,
        terminal_alpha: terminal,
        class: terminal_class(terminal),
        samples,
        seed_correction: 0.0,
        traj,
    })
}

/// Leading-order graph `α ≈ −β² sin²ζ` of the branch leaving `(0, 0)`.
pub fn seed_alpha(beta: f64, zeta: f64) -> f64 {
    -beta * beta * zeta.sin().powi(2)
}

/// The orbit of the angle system leaving `(α, ζ) = (0, 0)`, from
/// [`SEED_ZETA`] to [`ZETA_CUTOFF`].
///
/// The launch angle at `SEED_ZETA` is obtained by transporting the
/// first-order seed from `SEED_ZETA_FINE`; the branch attracts nearby
/// angles there, so this removes the seed's truncation error.
pub fn unstable_branch_orbit(beta: f64, cfg: &IntegratorConfig) -> Result<AngularOrbit> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::ParamOutOfRange {
            system: "bundle-angle",
            value: beta,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let mut fine = *cfg;
    fine.dense_output = false;
    let relaxed = solve(
        &reduced_rhs(beta),
        SEED_ZETA_FINE,
        SEED_ZETA,
        &[seed_alpha(beta, SEED_ZETA_FINE)],
        &fine,
        |_| ControlFlow::Continue(()),
    )?
    .final_state()[0];
    let mut orbit = integrate_bundle_angle(beta, relaxed, SEED_ZETA, ZETA_CUTOFF, cfg)?;
    orbit.seed_correction = relaxed - seed_alpha(beta, SEED_ZETA);
    Ok(orbit)
}

/// `(w_α, class)`; unresolved orbits are an error.
pub fn classify_winding(orbit: &AngularOrbit) -> Result<(i32, TerminalClass)> {
    match orbit.class {
        TerminalClass::Unresolved => Err(Error::Unresolved(orbit.terminal_alpha)),
        c => Ok((orbit.w_alpha, c)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalBeta {
    pub lo: f64,
    pub hi: f64,
    pub estimate: f64,
    pub w_lo: i32,
    pub w_hi: i32,
    pub evaluations: usize,
}

/// Bisection on an integer-valued classifier.
pub fn bisect_transition<F>(mut lo: f64, mut hi: f64, tol: f64, mut winding: F) -> Result<CriticalBeta>
where
    F: FnMut(f64) -> Result<i32>,
{
    if !(lo < hi && tol > 0.0) {
        return Err(Error::InvalidInput(format!("bad bracket [{lo}, {hi}] or tolerance {tol}")));
    }
    let w_lo = winding(lo)?;
    let w_hi = winding(hi)?;
    if w_lo == w_hi {
        return Err(Error::NoStraddle(format!(
            "winding {w_lo} at both β = {lo} and β = {hi}"
        )));
    }
    let mut evaluations = 2;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let w = winding(mid)?;
        evaluations += 1;
        if w == w_lo {
            lo = mid;
        } else if w == w_hi {
            hi = mid;
        } else {
            return Err(Error::NoStraddle(format!("third winding value {w} at β = {mid}")));
        }
    }
    Ok(CriticalBeta {
        lo,
        hi,
        estimate: 0.5 * (lo + hi),
        w_lo,
        w_hi,
        evaluations,
    })
}

/// Critical β where the winding of the unstable branch changes.
pub fn bisect_beta_c(lo: f64, hi: f64, tol: f64, cfg: &IntegratorConfig) -> Result<CriticalBeta> {
    bisect_transition(lo, hi, tol, |b| Ok(classify_winding(&unstable_branch_orbit(b, cfg)?)?.0))
}

/// Winding of the unstable branch at each β.
pub fn winding_scan(betas: &[f64], cfg: &IntegratorConfig) -> Result<Vec<(f64, i32)>> {
    betas
        .iter()
        .map(|&b| Ok((b, classify_winding(&unstable_branch_orbit(b, cfg)?)?.0)))
        .collect()
}

/// Heteroclinic limit at the critical β, read off the two bracketing orbits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeteroclinicLimit {
    /// Largest ζ up to which the two orbits agree within the threshold.
    pub zeta_split: f64,
    /// Mean of the two angles there.
    pub alpha: f64,
    pub distance_to_saddle: f64,
}

/// Follows the orbits at both ends of the bracket until they separate by
/// more than [`CLASS_THRESHOLD`]; just before that both shadow the
/// heteroclinic connection, which tends to `α ≡ 3π/4` as ζ → π⁻.
pub fn heteroclinic_limit(crit: &CriticalBeta, cfg: &IntegratorConfig) -> Result<HeteroclinicLimit> {
    let lo = unstable_branch_orbit(crit.lo, cfg)?;
    let hi = unstable_branch_orbit(crit.hi, cfg)?;
    let mut last = None;
    for &(z, a_lo) in &lo.samples {
        let Some(a_hi) = hi.alpha_at(z) else { break };
        if (a_hi - a_lo).abs() > CLASS_THRESHOLD {
            break;
        }
        last = Some((z, 0.5 * (a_lo + a_hi)));
    }
    let (zeta_split, alpha) = last.ok_or_else(|| Error::InvalidInput("orbits disagree from the start".into()))?;
    Ok(HeteroclinicLimit {
        zeta_split,
        alpha,
        distance_to_saddle: dist_mod_pi(alpha, ALPHA_SADDLE),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleFrame {
    pub beta: f64,
    pub zetas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// `(a, θ)` components of the unit fiber vector `sin α ∂a + cos α ∂θ`.
    pub vectors: Vec<[f64; 2]>,
}

/// Fiber directions of the bundle at the sections in `zeta_grid`. Points
/// outside the integrated range use the fixed-point limits
/// (α = 0 below [`SEED_ZETA`], the terminal angle above the cutoff).
pub fn bundle_frame_vectors(beta: f64, zeta_grid: &[f64], cfg: &IntegratorConfig) -> Result<BundleFrame> {
    if zeta_grid.iter().any(|&z| !(z > 0.0 && z < PI)) {
        return Err(Error::InvalidInput("zeta grid must lie in (0, π)".into()));
    }
    let orbit = unstable_branch_orbit(beta, cfg)?;
    frame_from_orbit(&orbit, zeta_grid)
}

pub fn frame_from_orbit(orbit: &AngularOrbit, zeta_grid: &[f64]) -> Result<BundleFrame> {
    let (z0, z1) = orbit.zeta_range();
    let alphas: Vec<f64> = zeta_grid
        .iter()
        .map(|&z| {
            if z < z0 {
                seed_alpha(orbit.beta, z)
            } else if z > z1 {
                orbit.terminal_alpha
            } else {
                orbit.alpha_at(z).unwrap_or(f64::NAN)
            }
        })
        .collect();
    if alphas.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidInput("bundle angle unavailable on the grid".into()));
    }
    Ok(BundleFrame {
        beta: orbit.beta,
        zetas: zeta_grid.to_vec(),
        vectors: alphas.iter().map(|a| [a.sin(), a.cos()]).collect(),
        alphas,
    })
}

/// Angle of an actual normal vector `(sin α0, 0, cos α0)` at `(0, zeta0, π)`
/// pushed forward by the variational flow of `example3`, read at the
/// sections in `zetas` (ascending, above `zeta0`) and unwrapped.
pub fn variational_angle(beta: f64, alpha0: f64, zeta0: f64, zetas: &[f64], cfg: &IntegratorConfig) -> Result<Vec<f64>> {
    let sys = make_system(SystemKind::Example3, beta)?;
    let t_end = zetas
        .iter()
        .map(|&z| time_to_zeta(zeta0, z))
        .fold(0.0, f64::max);
    let opts = VariationalOptions {
        with_param: false,
        phi_control: PhiErrorControl::Entrywise,
    };
    let sol = integrate_variational_with(&sys, &[0.0, zeta0, PI], (0.0, t_end), cfg, opts, |_| {
        ControlFlow::Continue(())
    })?;
    let v0 = nalgebra::DVector::from_vec(vec![alpha0.sin(), 0.0, alpha0.cos()]);
    let mut prev = alpha0;
    let mut out = Vec::with_capacity(zetas.len());
    for &z in zetas {
        let phi = sol
            .phi(time_to_zeta(zeta0, z))
            .ok_or_else(|| Error::InvalidInput(format!("section {z} outside the integrated range")))?;
        let v = phi * &v0;
        let raw = v[0].atan2(v[2]);
        // lift to the branch nearest the previous value (mod π: a line, not a ray)
        let a = raw + PI * ((prev - raw) / PI).round();
        out.push(a);
        prev = a;
    }
    Ok(out)
}

/// Angle (mod π) between the bundle fiber and the tangent of the swept
/// invariant-set section at `(a, θ) = (0, π)` on `Σ_zeta`. The tangent is a
/// central difference in the sweep label.
pub fn tangency_defect(beta: f64, zeta: f64, cfg: &IntegratorConfig) -> Result<f64> {
    let h = 1e-5;
    let image = |s: f64| -> Result<(f64, f64)> {
        let a0 = beta * beta * DEFAULT_ZETA0.sin().powi(2) * s.sin();
        Ok(transport(beta, DEFAULT_ZETA0, a0, s, &[zeta], cfg)?[0])
    };
    let (p, m) = (image(PI + h)?, image(PI - h)?);
    let curve = (p.0 - m.0).atan2(p.1 - m.1);
    let orbit = unstable_branch_orbit(beta, cfg)?;
    let alpha = frame_from_orbit(&orbit, &[zeta])?.alphas[0];
    Ok(dist_mod_pi(curve - alpha, 0.0))
}
