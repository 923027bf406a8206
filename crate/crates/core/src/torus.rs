//! Section curves of the invariant set of `example3`.
//!
//! Since `ζ' = sin²ζ > 0` on `(0, π)`, orbits are transported between the
//! sections `Σ_ζ` with ζ as the independent variable:
//!
//! ```text
//! da/dζ = (−a + β² sin²ζ sin θ) / sin²ζ,   dθ/dζ = a / sin²ζ.
//! ```
//!
//! A section curve is the image of a labelled circle; the invariant set is
//! swept from a circle close to `Γ = {a = 0, ζ = 0}`, and the images of the
//! set `L` from its two boundary circles.

use std::f64::consts::{PI, TAU};
use std::ops::ControlFlow;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ode::{integrate, solve, FnRhs, IntegratorConfig};
use crate::systems::{make_system, SystemKind};

/// Default start section of a sweep.
pub const DEFAULT_ZETA0: f64 = 0.01;
/// Largest section reached; the reduced system is singular at π.
pub const ZETA_MAX: f64 = 0.999 * PI;
/// Section carrying the set `L`.
pub const L_ZETA: f64 = PI / 20.0;
pub const MIN_SAMPLES: usize = 64;
/// Label resolution of refined fold points.
pub const FOLD_LABEL_TOL: f64 = 1e-6;

pub fn l_half_width() -> f64 {
    L_ZETA.sin().powi(2) + 10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    LambdaSweep,
    LImage,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::LambdaSweep => "lambda-sweep",
            Provenance::LImage => "L-image",
        }
    }
}

/// How label `s` maps to a start point on the start section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurveInit {
    /// `a = β² sin²ζ₀ sin s`, the leading-order graph of the invariant set.
    Sweep,
    /// `a = a0` (a boundary circle of `L`).
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSample {
    pub s: f64,
    pub a: f64,
    /// Unwrapped.
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleFailure {
    pub s: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionCurve {
    pub zeta: f64,
    pub beta: f64,
    pub provenance: Provenance,
    /// Start section and initialization, if the curve came from a transport.
    pub source: Option<(f64, CurveInit)>,
    pub samples: Vec<CurveSample>,
    pub failures: Vec<SampleFailure>,
}

impl SectionCurve {
    /// A curve given directly by its samples (no re-transport possible).
    pub fn from_samples(zeta: f64, beta: f64, provenance: Provenance, samples: Vec<CurveSample>) -> Self {
        Self {
            zeta,
            beta,
            provenance,
            source: None,
            samples,
            failures: Vec::new(),
        }
    }

    /// Transports a single label to this curve's section.
    pub fn transport_label(&self, s: f64, cfg: &IntegratorConfig) -> Result<(f64, f64)> {
        let (z0, init) = self
            .source
            .ok_or_else(|| Error::InvalidInput("curve has no transport source".into()))?;
        let (a0, th0) = start_point(init, self.beta, z0, s);
        Ok(transport(self.beta, z0, a0, th0, &[self.zeta], cfg)?[0])
    }

    /// `θ(s + 2π) − θ(s) − 2π` at `s = 0`, by re-transporting both labels.
    pub fn winding_defect(&self, cfg: &IntegratorConfig) -> Result<f64> {
        let (_, t0) = self.transport_label(0.0, cfg)?;
        let (_, t1) = self.transport_label(TAU, cfg)?;
        Ok(t1 - t0 - TAU)
    }
}

fn start_point(init: CurveInit, beta: f64, zeta0: f64, s: f64) -> (f64, f64) {
    match init {
        CurveInit::Sweep => (beta * beta * zeta0.sin().powi(2) * s.sin(), s),
        CurveInit::Constant(a0) => (a0, s),
    }
}

fn reduced_rhs(beta: f64) -> FnRhs<impl Fn(f64, &[f64], &mut [f64])> {
    let b2 = beta * beta;
    FnRhs {
        dim: 2,
        f: move |z: f64, y: &[f64], dy: &mut [f64]| {
            let s2 = z.sin().powi(2);
            dy[0] = (-y[0] + b2 * s2 * y[1].sin()) / s2;
            dy[1] = y[0] / s2;
        },
    }
}

/// Transports `(a0, θ0)` on `Σ_{zeta0}` to each section in `targets`
/// (any order, each in `(0, π)`); returns `(a, θ)` per target.
pub fn transport(beta: f64, zeta0: f64, a0: f64, theta0: f64, targets: &[f64], cfg: &IntegratorConfig) -> Result<Vec<(f64, f64)>> {
    let rhs = reduced_rhs(beta);
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&i, &j| targets[i].total_cmp(&targets[j]));
    let mut cfg = *cfg;
    cfg.dense_output = false;
    let mut out = vec![(f64::NAN, f64::NAN); targets.len()];
    let (mut z, mut y) = (zeta0, vec![a0, theta0]);
    for i in order {
        let zt = targets[i];
        if zt != z {
            let traj = solve(&rhs, z, zt, &y, &cfg, |_| ControlFlow::Continue(()))?;
            y = traj.final_state().to_vec();
            z = zt;
        }
        out[i] = (y[0], y[1]);
    }
    Ok(out)
}

/// Time for `ζ' = sin²ζ` to go from `z0` to `z1`.
pub fn time_to_zeta(z0: f64, z1: f64) -> f64 {
    1.0 / z0.tan() - 1.0 / z1.tan()
}

/// Same transport as [`transport`] for one target, but through the full
/// time-parametrized flow; used to cross-check the reduction.
pub fn transport_by_time(beta: f64, zeta0: f64, a0: f64, theta0: f64, target: f64, cfg: &IntegratorConfig) -> Result<(f64, f64)> {
    let sys = make_system(SystemKind::Example3, beta)?;
    let mut cfg = *cfg;
    cfg.dense_output = false;
    let traj = integrate(&sys, &[a0, zeta0, theta0], (0.0, time_to_zeta(zeta0, target)), &cfg)?;
    let x = traj.final_state();
    Ok((x[0], x[2]))
}

fn check_targets(start: f64, targets: &[f64]) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::InvalidInput("no target sections".into()));
    }
    for &z in targets {
        if !(z > start && z <= ZETA_MAX) {
            return Err(Error::InvalidInput(format!(
                "target section {z} outside ({start}, {ZETA_MAX}]"
            )));
        }
    }
    Ok(())
}

fn transport_circle(
    beta: f64,
    zeta0: f64,
    init: CurveInit,
    provenance: Provenance,
    targets: &[f64],
    n: usize,
    cfg: &IntegratorConfig,
) -> Vec<SectionCurve> {
    let results: Vec<(f64, Result<Vec<(f64, f64)>>)> = (0..n)
        .into_par_iter()
        .map(|k| {
            let s = TAU * k as f64 / n as f64;
            let (a0, th0) = start_point(init, beta, zeta0, s);
            (s, transport(beta, zeta0, a0, th0, targets, cfg))
        })
        .collect();
    targets
        .iter()
        .enumerate()
        .map(|(j, &zeta)| {
            let mut curve = SectionCurve {
                zeta,
                beta,
                provenance,
                source: Some((zeta0, init)),
                samples: Vec::with_capacity(n),
                failures: Vec::new(),
            };
            for (s, r) in &results {
                match r {
                    Ok(v) => curve.samples.push(CurveSample {
                        s: *s,
                        a: v[j].0,
                        theta: v[j].1,
                    }),
                    Err(e) => curve.failures.push(SampleFailure {
                        s: *s,
                        message: e.to_string(),
                    }),
                }
            }
            curve
        })
        .collect()
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::ParamOutOfRange {
            system: "example3",
            value: beta,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}

/// Sections of the invariant set at each target, swept from the circle at
/// `zeta0` with labels `s = 2πk/n`.
pub fn sweep_invariant_set(beta: f64, zeta0: f64, targets: &[f64], n: usize, cfg: &IntegratorConfig) -> Result<Vec<SectionCurve>> {
    check_beta(beta)?;
    if !(zeta0 > 0.0 && zeta0 < PI) {
        return Err(Error::InvalidInput(format!("zeta0 = {zeta0} outside (0, π)")));
    }
    check_targets(zeta0, targets)?;
    if n < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!("need at least {MIN_SAMPLES} samples, got {n}")));
    }
    cfg.validate()?;
    Ok(transport_circle(beta, zeta0, CurveInit::Sweep, Provenance::LambdaSweep, targets, n, cfg))
}

/// Largest `|a| − sin²ζ` over all samples.
pub fn check_lemma_bound(curves: &[SectionCurve]) -> f64 {
    curves
        .iter()
        .flat_map(|c| {
            let s2 = c.zeta.sin().powi(2);
            c.samples.iter().map(move |p| p.a.abs() - s2)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Images of the two boundary circles `a = ±(sin²(π/20) + 10)` of `L`,
/// ordered `[+ at target 0, − at target 0, + at target 1, ...]`.
pub fn image_of_l(beta: f64, targets: &[f64], n: usize, cfg: &IntegratorConfig) -> Result<Vec<SectionCurve>> {
    check_beta(beta)?;
    check_targets(L_ZETA, targets)?;
    if n < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!("need at least {MIN_SAMPLES} samples, got {n}")));
    }
    cfg.validate()?;
    let w = l_half_width();
    let upper = transport_circle(beta, L_ZETA, CurveInit::Constant(w), Provenance::LImage, targets, n, cfg);
    let lower = transport_circle(beta, L_ZETA, CurveInit::Constant(-w), Provenance::LImage, targets, n, cfg);
    Ok(upper.into_iter().zip(lower).flat_map(|(u, l)| [u, l]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold_present: bool,
    /// Extrema of θ(s) where Δθ reverses sign.
    pub fold_points: Vec<CurveSample>,
    pub min_dtheta_ds: f64,
    pub sign_changes: usize,
}

fn in_window(theta: f64, window: Option<(f64, f64)>) -> bool {
    match window {
        None => true,
        Some((lo, hi)) => {
            let t = lo + (theta - lo).rem_euclid(TAU);
            t <= hi
        }
    }
}

/// Counts reversals of Δθ along the curve (inside `window`, a θ-interval
/// taken mod 2π). A fold needs at least two. Fold points are refined to
/// label resolution [`FOLD_LABEL_TOL`] when the curve can be re-transported.
pub fn detect_fold(curve: &SectionCurve, window: Option<(f64, f64)>, cfg: &IntegratorConfig) -> Result<FoldReport> {
    let p = &curve.samples;
    if p.len() < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            p.len()
        )));
    }
    let mut min_slope = f64::INFINITY;
    let mut last_sign = 0.0;
    let mut changes = Vec::new();
    for i in 1..p.len() {
        if !(in_window(p[i - 1].theta, window) && in_window(p[i].theta, window)) {
            last_sign = 0.0;
            continue;
        }
        let d = p[i].theta - p[i - 1].theta;
        min_slope = min_slope.min(d / (p[i].s - p[i - 1].s));
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            continue;
        };
        if last_sign != 0.0 && sign != last_sign {
            // extremum near p[i-1]
            changes.push((i - 1, last_sign));
        }
        last_sign = sign;
    }
    let mut fold_points = Vec::with_capacity(changes.len());
    for &(i, rising) in &changes {
        let lo = p[i.saturating_sub(1)].s;
        let hi = p[(i + 1).min(p.len() - 1)].s;
        let pt = if curve.source.is_some() {
            refine_extremum(curve, lo, hi, rising > 0.0, cfg)?
        } else {
            p[i]
        };
        fold_points.push(pt);
    }
    Ok(FoldReport {
        fold_present: changes.len() >= 2,
        fold_points,
        min_dtheta_ds: min_slope,
        sign_changes: changes.len(),
    })
}

/// Golden-section search for the extremum of θ(s) on `[lo, hi]`.
fn refine_extremum(curve: &SectionCurve, mut lo: f64, mut hi: f64, maximum: bool, cfg: &IntegratorConfig) -> Result<CurveSample> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let sign = if maximum { -1.0 } else { 1.0 };
    let f = |s: f64| -> Result<f64> { Ok(sign * curve.transport_label(s, cfg)?.1) };
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while hi - lo > FOLD_LABEL_TOL {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2)?;
        }
    }
    let s = 0.5 * (lo + hi);
    let (a, theta) = curve.transport_label(s, cfg)?;
    Ok(CurveSample { s, a, theta })
}

/// First section of `zeta_grid` (ascending) whose swept curve folds inside
/// `window`; `None` when no section folds.
pub fn fold_onset_zeta(
    beta: f64,
    zeta_grid: &[f64],
    n: usize,
    window: Option<(f64, f64)>,
    cfg: &IntegratorConfig,
) -> Result<Option<f64>> {
    let curves = sweep_invariant_set(beta, DEFAULT_ZETA0, zeta_grid, n, cfg)?;
    for c in &curves {
        if detect_fold(c, window, cfg)?.fold_present {
            return Ok(Some(c.zeta));
        }
    }
    Ok(None)
}

/// Bisection in β on fold presence of the swept curve at section `zeta`.
/// Returns the final bracket `(lo, hi)`; `lo` must be unfolded and `hi`
/// folded.
pub fn fold_onset_beta(mut lo: f64, mut hi: f64, tol: f64, zeta: f64, n: usize, cfg: &IntegratorConfig) -> Result<(f64, f64)> {
    let folded = |b: f64| -> Result<bool> {
        let c = sweep_invariant_set(b, DEFAULT_ZETA0, &[zeta], n, cfg)?;
        Ok(detect_fold(&c[0], None, cfg)?.fold_present)
    };
    if folded(lo)? || !folded(hi)? {
        return Err(Error::NoStraddle(format!("fold presence at β = {lo} and β = {hi}")));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if folded(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo, hi))
}

/// Backward orbit of the invariant-set point with angle `theta_t` on
/// `Σ_{zeta_t}`: θ at each section in `stops` (below `zeta_t`).
///
/// Direct backward integration is exponentially unstable in `a`, so the
/// orbit is found by shooting: the start label on the sweep circle at the
/// smallest stop is solved for (secant) so that its forward image hits
/// `theta_t`. Requires `s ↦ θ` monotone on the target section.
pub fn backward_theta_limit(beta: f64, zeta_t: f64, theta_t: f64, stops: &[f64], cfg: &IntegratorConfig) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let z0 = stops.iter().copied().fold(f64::INFINITY, f64::min);
    if !(z0 > 0.0) || stops.iter().any(|&z| z >= zeta_t) {
        return Err(Error::InvalidInput("stops must lie in (0, zeta_t)".into()));
    }
    let image = |s: f64| -> Result<f64> {
        let (a0, t0) = start_point(CurveInit::Sweep, beta, z0, s);
        Ok(transport(beta, z0, a0, t0, &[zeta_t], cfg)?[0].1)
    };
    let (mut s0, mut s1) = (theta_t, theta_t + 1e-3);
    let (mut r0, mut r1) = (image(s0)? - theta_t, image(s1)? - theta_t);
    for _ in 0..50 {
        if r1.abs() < 1e-13 {
            break;
        }
        let d = r1 - r0;
        if d == 0.0 {
            break;
        }
        let s2 = s1 - r1 * (s1 - s0) / d;
        (s0, r0) = (s1, r1);
        s1 = s2;
        r1 = image(s1)? - theta_t;
    }
    if r1.abs() > 1e-9 {
        return Err(Error::NewtonDiverged {
            residual: r1.abs(),
            iterate: vec![s1],
        });
    }
    let (a0, t0) = start_point(CurveInit::Sweep, beta, z0, s1);
    Ok(transport(beta, z0, a0, t0, stops, cfg)?.into_iter().map(|(_, t)| t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> IntegratorConfig {
        IntegratorConfig::with_tolerances(1e-10, 1e-12)
    }

    #[test]
    fn beta_zero_is_the_flat_torus() {
        let c = sweep_invariant_set(0.0, 0.01, &[0.5, 2.0, 0.95 * PI], 64, &cfg()).unwrap();
        for curve in &c {
            for p in &curve.samples {
                assert!(p.a.abs() < 1e-14);
                assert!((p.theta - p.s).abs() < 1e-14);
            }
        }
        assert!((check_lemma_bound(&c[..1]) + 0.5f64.sin().powi(2)).abs() < 1e-14);
    }

    #[test]
    fn lemma_bound_on_hand_built_curve() {
        let samples = vec![CurveSample { s: 0.0, a: 1.0, theta: 0.0 }];
        let c = SectionCurve::from_samples(PI / 6.0, 1.0, Provenance::LambdaSweep, samples);
        assert!((check_lemma_bound(&[c]) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn lemma_bound_at_beta_one() {
        let c = sweep_invariant_set(1.0, 0.01, &[PI / 4.0], 128, &cfg()).unwrap();
        assert!(check_lemma_bound(&c) <= 1e-6);
    }

    #[test]
    fn sweep_preconditions() {
        assert!(sweep_invariant_set(0.5, 0.01, &[0.005], 64, &cfg()).is_err());
        assert!(sweep_invariant_set(0.5, 0.01, &[1.0], 32, &cfg()).is_err());
        assert!(sweep_invariant_set(1.5, 0.01, &[1.0], 64, &cfg()).is_err());
        assert!(image_of_l(1.0, &[0.1], 64, &cfg()).is_err());
    }

    #[test]
    fn l_image_at_beta_zero_matches_closed_form() {
        let targets = [0.3, 1.0, 2.0];
        let c = image_of_l(0.0, &targets, 64, &cfg()).unwrap();
        assert_eq!(c.len(), 6);
        let w = l_half_width();
        for (k, curve) in c.iter().enumerate() {
            let a0 = if k % 2 == 0 { w } else { -w };
            let factor = (-time_to_zeta(L_ZETA, curve.zeta)).exp();
            for p in &curve.samples {
                assert!((p.a - a0 * factor).abs() < 1e-8 * w);
                assert!((p.theta - (p.s + a0 * (1.0 - factor))).abs() < 1e-8 * w);
            }
        }
    }

    #[test]
    fn reduced_and_timed_transport_agree() {
        for &s in &[0.3, 2.0, 4.5] {
            let (a0, t0) = start_point(CurveInit::Sweep, 1.0, 0.01, s);
            let r = transport(1.0, 0.01, a0, t0, &[0.9 * PI], &cfg()).unwrap()[0];
            let t = transport_by_time(1.0, 0.01, a0, t0, 0.9 * PI, &cfg()).unwrap();
            assert!((r.0 - t.0).abs() < 1e-6 && (r.1 - t.1).abs() < 1e-6, "{r:?} {t:?}");
        }
    }

    #[test]
    fn synthetic_monotone_curve_has_no_fold() {
        let samples = (0..64)
            .map(|k| {
                let s = TAU * k as f64 / 64.0;
                CurveSample { s, a: 0.0, theta: s }
            })
            .collect();
        let c = SectionCurve::from_samples(1.0, 0.0, Provenance::LambdaSweep, samples);
        let r = detect_fold(&c, None, &cfg()).unwrap();
        assert!(!r.fold_present);
        assert_eq!(r.sign_changes, 0);
    }

    #[test]
    fn synthetic_s_curve_has_fold() {
        let samples = (0..128)
            .map(|k| {
                let s = TAU * k as f64 / 128.0;
                CurveSample { s, a: 0.0, theta: s - 3.0 * (s - PI).sin() * (-(s - PI).powi(2)).exp() }
            })
            .collect();
        let c = SectionCurve::from_samples(1.0, 0.0, Provenance::LambdaSweep, samples);
        let r = detect_fold(&c, Some((PI - 1.5, PI + 1.5)), &cfg()).unwrap();
        assert!(r.fold_present);
        assert_eq!(r.fold_points.len(), 2);
    }

    #[test]
    fn window_membership_wraps() {
        assert!(in_window(PI + TAU, Some((PI - 0.1, PI + 0.1))));
        assert!(!in_window(0.0, Some((PI - 0.1, PI + 0.1))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn transport_commutes_with_label_shift(s in 0.0f64..TAU, beta in 0.0f64..1.0) {
            // the reduced field is 2π-periodic in θ
            let (a0, t0) = start_point(CurveInit::Sweep, beta, 0.05, s);
            let r0 = transport(beta, 0.05, a0, t0, &[2.0], &cfg()).unwrap()[0];
            let r1 = transport(beta, 0.05, a0, t0 + TAU, &[2.0], &cfg()).unwrap()[0];
            prop_assert!((r1.0 - r0.0).abs() < 1e-8);
            prop_assert!((r1.1 - r0.1 - TAU).abs() < 1e-8);
        }
    }
}
