//! Limit cycles of planar systems.
//!
//! Cycles are located by Newton iteration on the first-return map of a ray
//! section `{point + s·u : s > 0}`, where `u` is the normal rotated a quarter
//! turn clockwise. The return map is differentiated through the variational
//! flow (including the parameter sensitivity), which drives Newton's method,
//! pseudo-arclength continuation in `(s, c)`, fold refinement and the
//! Floquet data.

use std::ops::ControlFlow;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{dot, eigenvalues_2x2, norm};
use crate::ode::{
    integrate, integrate_variational_with, segment_crossings, solve, CrossingDirection, FnRhs, IntegratorConfig,
    PhiErrorControl, Section, SectionEvent, VariationalOptions,
};
use crate::systems::{DomainBox, SystemDef, SystemKind};

/// Return displacement below which a cycle counts as closed.
pub const CLOSURE_TOL: f64 = 1e-10;
/// Residual bound for an accepted equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;
/// Time budget for a single return to the section.
pub const RETURN_T_MAX: f64 = 400.0;
/// Crossings earlier than this are the start point leaving the section.
const RETURN_T_MIN: f64 = 1e-3;
const NEWTON_MAX_ITER: usize = 40;
const MAX_NEWTON_STEP: f64 = 0.05;
/// Allowed deviation of the trivial Floquet multiplier from one, and of the
/// two rate estimates from each other.
pub const FLOQUET_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquilibriumKind {
    Saddle,
    StableNode,
    StableFocus,
    UnstableNode,
    UnstableFocus,
    NonHyperbolic,
}

impl EquilibriumKind {
    pub fn name(self) -> &'static str {
        match self {
            EquilibriumKind::Saddle => "saddle",
            EquilibriumKind::StableNode => "stable-node",
            EquilibriumKind::StableFocus => "stable-focus",
            EquilibriumKind::UnstableNode => "unstable-node",
            EquilibriumKind::UnstableFocus => "unstable-focus",
            EquilibriumKind::NonHyperbolic => "non-hyperbolic",
        }
    }

    fn classify(eigs: [(f64, f64); 2]) -> Self {
        let [(r1, i1), (r2, _)] = eigs;
        if i1 != 0.0 {
            if r1 < 0.0 {
                EquilibriumKind::StableFocus
            } else if r1 > 0.0 {
                EquilibriumKind::UnstableFocus
            } else {
                EquilibriumKind::NonHyperbolic
            }
        } else if r1 > 0.0 && r2 < 0.0 {
            EquilibriumKind::Saddle
        } else if r1 < 0.0 {
            EquilibriumKind::StableNode
        } else if r2 > 0.0 {
            EquilibriumKind::UnstableNode
        } else {
            EquilibriumKind::NonHyperbolic
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub state: [f64; 2],
    pub c: f64,
    /// `(re, im)` pairs, larger real part first.
    pub eigenvalues: [(f64, f64); 2],
    pub kind: EquilibriumKind,
    pub residual: f64,
}

const EQ_GRID: usize = 25;

/// Equilibria of a planar system at parameter `c` inside a bounded box,
/// found by Newton's method from a grid of seeds.
pub fn find_equilibria(system: &SystemDef, c: f64, domain: &DomainBox) -> Result<Vec<Equilibrium>> {
    if system.dim != 2 {
        return Err(Error::InvalidInput("equilibrium search is implemented for planar systems".into()));
    }
    let bounds: Vec<(f64, f64)> = domain
        .bounds
        .iter()
        .map(|b| b.ok_or_else(|| Error::InvalidInput("equilibrium search needs a bounded box".into())))
        .collect::<Result<_>>()?;
    if bounds.len() != 2 {
        return Err(Error::InvalidInput("box must have two coordinates".into()));
    }
    let sys = system.with_param(c)?;
    let mut found: Vec<Equilibrium> = Vec::new();
    for i in 0..EQ_GRID {
        for j in 0..EQ_GRID {
            let frac = |k: usize| (k as f64 + 0.5) / EQ_GRID as f64;
            let seed = [
                bounds[0].0 + frac(i) * (bounds[0].1 - bounds[0].0),
                bounds[1].0 + frac(j) * (bounds[1].1 - bounds[1].0),
            ];
            let Some(x) = newton_equilibrium(&sys, seed) else { continue };
            if !domain.contains(&x) || found.iter().any(|e| norm(&[e.state[0] - x[0], e.state[1] - x[1]]) < 1e-7) {
                continue;
            }
            let eigenvalues = eigenvalues_2x2(&sys.jacobian(&x));
            found.push(Equilibrium {
                state: x,
                c,
                eigenvalues,
                kind: EquilibriumKind::classify(eigenvalues),
                residual: norm(&sys.rhs(&x)),
            });
        }
    }
    found.sort_by(|a, b| a.state[0].total_cmp(&b.state[0]).then(a.state[1].total_cmp(&b.state[1])));
    Ok(found)
}

fn newton_equilibrium(sys: &SystemDef, seed: [f64; 2]) -> Option<[f64; 2]> {
    let mut x = seed;
    let mut polish = 0;
    for _ in 0..60 {
        let f = sys.rhs(&x);
        if !f.iter().all(|v| v.is_finite()) {
            return None;
        }
        if norm(&f) <= EQUILIBRIUM_TOL * 1e-2 {
            return Some(x);
        }
        if norm(&f) <= EQUILIBRIUM_TOL {
            polish += 1;
            if polish > 3 {
                return Some(x);
            }
        }
        let j = sys.jacobian(&x);
        let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
        if det.abs() < 1e-14 {
            return None;
        }
        let dx = (j[(1, 1)] * f[0] - j[(0, 1)] * f[1]) / det;
        let dy = (-j[(1, 0)] * f[0] + j[(0, 0)] * f[1]) / det;
        x = [x[0] - dx, x[1] - dy];
    }
    (norm(&sys.rhs(&x)) <= EQUILIBRIUM_TOL).then_some(x)
}

/// The ray `{point + s·u : s > 0}` with `u = (n₁, −n₀)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleSection {
    pub point: [f64; 2],
    pub normal: [f64; 2],
}

impl CycleSection {
    pub fn new(point: [f64; 2], normal: [f64; 2]) -> Result<Self> {
        let n = norm(&normal);
        if !(n > 0.0) || !n.is_finite() || !point.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("section needs a finite point and a nonzero normal".into()));
        }
        Ok(Self {
            point,
            normal: [normal[0] / n, normal[1] / n],
        })
    }

    /// Ray along `y = x/2` starting at `(1, 1/2)`, just outside the right
    /// interior equilibrium of `example2`. Every equilibrium of that system
    /// lies on the line `y = x/2`, so the ray cuts the small right cycles and
    /// the large cycles around all three equilibria.
    pub fn example2() -> Self {
        Self::new([1.0, 0.5], [-1.0, 2.0]).expect("valid section")
    }

    pub fn along(&self) -> [f64; 2] {
        [self.normal[1], -self.normal[0]]
    }

    /// Ray coordinate `s` of the projection of `x`.
    pub fn coordinate(&self, x: &[f64]) -> f64 {
        dot(&[x[0] - self.point[0], x[1] - self.point[1]], &self.along())
    }

    pub fn anchor(&self, s: f64) -> [f64; 2] {
        let u = self.along();
        [self.point[0] + s * u[0], self.point[1] + s * u[1]]
    }

    fn hyperplane(&self) -> Section {
        Section {
            point: self.point.to_vec(),
            normal: self.normal.to_vec(),
        }
    }
}

/// First return of the ray point `anchor(s)` and its derivatives.
#[derive(Debug, Clone)]
pub struct FirstReturn {
    pub s: f64,
    pub s_return: f64,
    pub time: f64,
    pub state: [f64; 2],
    /// `Φ(time)`; the monodromy matrix once the orbit is closed.
    pub phi: DMatrix<f64>,
    pub dp_ds: f64,
    pub dp_dc: f64,
}

impl FirstReturn {
    pub fn displacement(&self) -> f64 {
        self.s_return - self.s
    }
}

/// `∫₀^t div f(x(τ)) dτ` along the orbit of `x0`, i.e. `log det Φ(t)`.
pub fn divergence_integral(system: &SystemDef, x0: [f64; 2], t: f64, cfg: &IntegratorConfig) -> Result<f64> {
    let rhs = FnRhs {
        dim: 3,
        f: |_t: f64, y: &[f64], dy: &mut [f64]| {
            let mut j = [0.0; 4];
            system.rhs_into(&y[..2], &mut dy[..2]);
            system.jacobian_into(&y[..2], &mut j);
            dy[2] = j[0] + j[3];
        },
    };
    let quad = solve(&rhs, 0.0, t, &[x0[0], x0[1], 0.0], cfg, |_| ControlFlow::Continue(()))?;
    Ok(quad.final_state()[2])
}

/// First return of `anchor(s)` to the ray, crossing in the same direction as
/// the flow at the anchor. Orbits that leave the system's domain box or do
/// not come back within `t_max` give [`Error::NoReturn`].
pub fn first_return(
    system: &SystemDef,
    section: &CycleSection,
    s: f64,
    t_max: f64,
    cfg: &IntegratorConfig,
) -> Result<FirstReturn> {
    if system.dim != 2 {
        return Err(Error::InvalidInput("return maps are implemented for planar systems".into()));
    }
    let x0 = section.anchor(s);
    let f0 = system.rhs(&x0);
    if norm(&f0) == 0.0 {
        return Err(Error::NoReturn);
    }
    let fn0 = dot(&section.normal, &f0);
    if fn0 == 0.0 {
        return Err(Error::InvalidInput("flow is tangent to the section at the anchor".into()));
    }
    let dir = if fn0 > 0.0 {
        CrossingDirection::Positive
    } else {
        CrossingDirection::Negative
    };
    let plane = section.hyperplane();
    let mut hit: Option<SectionEvent> = None;
    let opts = VariationalOptions {
        with_param: true,
        phi_control: PhiErrorControl::ColumnScaled,
    };
    integrate_variational_with(system, &x0, (0.0, t_max), cfg, opts, |seg| {
        for ev in segment_crossings(seg, &plane, dir) {
            if ev.t > RETURN_T_MIN && section.coordinate(&ev.state) > 0.0 {
                hit = Some(ev);
                return ControlFlow::Break(());
            }
        }
        if system.domain.contains(&seg.end_state()[..2]) {
            ControlFlow::Continue(())
        } else {
            ControlFlow::Break(())
        }
    })?;
    let ev = hit.ok_or(Error::NoReturn)?;
    let z = &ev.state;
    let x = [z[0], z[1]];
    let phi = DMatrix::from_row_slice(2, 2, &z[2..6]);
    let w = [z[6], z[7]];
    let f = system.rhs(&x);
    let nf = dot(&section.normal, &f);
    let u = section.along();
    // moving the start point also moves the hitting time: project along f
    let project = |v: [f64; 2]| {
        let dt = -dot(&section.normal, &v) / nf;
        dot(&u, &[v[0] + f[0] * dt, v[1] + f[1] * dt])
    };
    // Near a saddle passage Φu is huge and nearly parallel to f, so its
    // projection cancels; the planar identity P' = det Φ · (n·f₀)/(n·f₁)
    // with det Φ from the divergence integral keeps tiny multipliers exact.
    let log_det = divergence_integral(system, x0, ev.t, cfg)?;
    Ok(FirstReturn {
        s,
        s_return: section.coordinate(&x),
        time: ev.t,
        state: x,
        phi,
        dp_ds: log_det.exp() * fn0 / nf,
        dp_dc: project(w),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
}

impl Stability {
    pub fn name(self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
        }
    }
}

/// Names of the `example2` cycles: 1/2 are the small unstable cycles
/// around the right/left equilibrium, 5/6 the small stable ones, 3 the stable
/// and 4 the unstable cycle around all three equilibria.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleLabel {
    Gamma1,
    Gamma2,
    Gamma3,
    Gamma4,
    Gamma5,
    Gamma6,
    Unlabeled,
}

impl CycleLabel {
    pub fn name(self) -> &'static str {
        match self {
            CycleLabel::Gamma1 => "gamma1",
            CycleLabel::Gamma2 => "gamma2",
            CycleLabel::Gamma3 => "gamma3",
            CycleLabel::Gamma4 => "gamma4",
            CycleLabel::Gamma5 => "gamma5",
            CycleLabel::Gamma6 => "gamma6",
            CycleLabel::Unlabeled => "unlabeled",
        }
    }

    fn assign(system: &SystemDef, stability: Stability, x_range: (f64, f64)) -> Self {
        if system.kind != Some(SystemKind::Example2) {
            return CycleLabel::Unlabeled;
        }
        let stable = stability == Stability::Stable;
        match (x_range.0 < 0.0, x_range.1 > 0.0) {
            (true, true) if stable => CycleLabel::Gamma3,
            (true, true) => CycleLabel::Gamma4,
            (false, _) if stable => CycleLabel::Gamma5,
            (false, _) => CycleLabel::Gamma1,
            (true, false) if stable => CycleLabel::Gamma6,
            (true, false) => CycleLabel::Gamma2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitCycleSolution {
    pub c: f64,
    /// Ray coordinate of the anchor.
    pub s: f64,
    pub anchor: [f64; 2],
    pub period: f64,
    /// Nontrivial multiplier, i.e. the derivative of the return map.
    pub multiplier: f64,
    /// `multiplier^(1/period)`.
    pub lambda: f64,
    pub stability: Stability,
    pub label: CycleLabel,
    /// `|P(s) − s|` at convergence.
    pub closure: f64,
    /// Smallest distance from the orbit to the origin (the saddle of
    /// `example2`).
    pub saddle_distance: f64,
    pub x_range: (f64, f64),
}

/// Samples a closed orbit; returns `(x_min, x_max, min distance to origin)`.
fn orbit_profile(system: &SystemDef, anchor: [f64; 2], period: f64, cfg: &IntegratorConfig) -> Result<(f64, f64, f64)> {
    let traj = integrate(system, &anchor, (0.0, period), cfg)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut d = f64::INFINITY;
    let mut visit = |x: &[f64]| {
        lo = lo.min(x[0]);
        hi = hi.max(x[0]);
        d = d.min(norm(&x[..2]));
    };
    for seg in &traj.segments {
        for k in 0..8 {
            visit(&seg.eval(seg.t0 + seg.h * k as f64 / 8.0));
        }
    }
    visit(traj.final_state());
    Ok((lo, hi, d))
}

fn assemble(system: &SystemDef, r: &FirstReturn, cfg: &IntegratorConfig, section: &CycleSection) -> Result<LimitCycleSolution> {
    let m = r.dp_ds;
    if !(m > 0.0) {
        return Err(Error::InvalidInput(format!("return-map derivative {m} is not positive")));
    }
    let anchor = section.anchor(r.s);
    let (lo, hi, d) = orbit_profile(system, anchor, r.time, cfg)?;
    let stability = if m < 1.0 { Stability::Stable } else { Stability::Unstable };
    Ok(LimitCycleSolution {
        c: system.param,
        s: r.s,
        anchor,
        period: r.time,
        multiplier: m,
        lambda: m.powf(1.0 / r.time),
        stability,
        label: CycleLabel::assign(system, stability, (lo, hi)),
        closure: r.displacement().abs(),
        saddle_distance: d,
        x_range: (lo, hi),
    })
}

/// Newton's method on `P(s) − s` from the ray projection of `guess`, with a
/// residual-decrease line search.
pub fn refine_cycle(
    system: &SystemDef,
    section: &CycleSection,
    guess: &[f64],
    cfg: &IntegratorConfig,
) -> Result<LimitCycleSolution> {
    if guess.len() != 2 {
        return Err(Error::InvalidInput("guess must be a planar state".into()));
    }
    let mut r = first_return(system, section, section.coordinate(guess), RETURN_T_MAX, cfg)?;
    for _ in 0..NEWTON_MAX_ITER {
        let res = r.displacement();
        if res.abs() <= CLOSURE_TOL {
            return assemble(system, &r, cfg, section);
        }
        let slope = r.dp_ds - 1.0;
        let mut ds = (-res / slope).clamp(-MAX_NEWTON_STEP, MAX_NEWTON_STEP);
        if !ds.is_finite() {
            break;
        }
        let mut next = None;
        for _ in 0..30 {
            if let Ok(cand) = first_return(system, section, r.s + ds, RETURN_T_MAX, cfg) {
                if cand.displacement().abs() < res.abs() {
                    next = Some(cand);
                    break;
                }
            }
            ds *= 0.5;
        }
        match next {
            Some(cand) => r = cand,
            None => break,
        }
    }
    Err(Error::NewtonDiverged {
        residual: r.displacement().abs(),
        iterate: section.anchor(r.s).to_vec(),
    })
}

/// Integrates from `start` for time `t` (negative for backward time) and
/// returns the last crossing of the ray, a seed for [`refine_cycle`] when
/// the orbit settles on a cycle.
pub fn settle_on_section(
    system: &SystemDef,
    section: &CycleSection,
    start: &[f64],
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<[f64; 2]> {
    let sys = if t < 0.0 { system.reversed() } else { system.clone() };
    let plane = section.hyperplane();
    let mut last: Option<[f64; 2]> = None;
    solve(&sys, 0.0, t.abs(), start, cfg, |seg| {
        for ev in segment_crossings(seg, &plane, CrossingDirection::Either) {
            if section.coordinate(&ev.state) > 0.0 {
                last = Some([ev.state[0], ev.state[1]]);
            }
        }
        if sys.domain.contains(&seg.end_state()) {
            ControlFlow::Continue(())
        } else {
            ControlFlow::Break(())
        }
    })?;
    last.ok_or(Error::NoReturn)
}

/// Unit eigenvectors `(unstable, stable)` of a saddle, each oriented towards
/// the section point.
pub fn saddle_directions(system: &SystemDef, saddle: &[f64], section: &CycleSection) -> Result<([f64; 2], [f64; 2])> {
    let j = system.jacobian(saddle);
    let eigs = eigenvalues_2x2(&j);
    if EquilibriumKind::classify(eigs) != EquilibriumKind::Saddle {
        return Err(Error::InvalidInput(format!("{saddle:?} is not a saddle")));
    }
    let toward = [section.point[0] - saddle[0], section.point[1] - saddle[1]];
    let vec_for = |lam: f64| {
        let a = [j[(0, 1)], lam - j[(0, 0)]];
        let b = [lam - j[(1, 1)], j[(1, 0)]];
        let v = if norm(&a) >= norm(&b) { a } else { b };
        let n = norm(&v) * if dot(&v, &toward) < 0.0 { -1.0 } else { 1.0 };
        [v[0] / n, v[1] / n]
    };
    Ok((vec_for(eigs[0].0), vec_for(eigs[1].0)))
}

const MANIFOLD_OFFSET: f64 = 1e-7;

/// Seed from the unstable manifold branch of `saddle` that heads towards the
/// section: integrate for `t` and take the last crossing.
pub fn seed_from_unstable_manifold(
    system: &SystemDef,
    saddle: &[f64],
    section: &CycleSection,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<[f64; 2]> {
    let (vu, _) = saddle_directions(system, saddle, section)?;
    let start = [saddle[0] + MANIFOLD_OFFSET * vu[0], saddle[1] + MANIFOLD_OFFSET * vu[1]];
    settle_on_section(system, section, &start, t, cfg)
}

fn first_ray_hit(system: &SystemDef, start: [f64; 2], section: &CycleSection, cfg: &IntegratorConfig) -> Result<f64> {
    let plane = section.hyperplane();
    let mut hit = None;
    solve(system, 0.0, RETURN_T_MAX, &start, cfg, |seg| {
        for ev in segment_crossings(seg, &plane, CrossingDirection::Either) {
            let s = section.coordinate(&ev.state);
            if s > 0.0 {
                hit = Some(s);
                return ControlFlow::Break(());
            }
        }
        if system.domain.contains(&seg.end_state()) {
            ControlFlow::Continue(())
        } else {
            ControlFlow::Break(())
        }
    })?;
    hit.ok_or(Error::NoReturn)
}

/// Signed distance along the ray between the first hits of the unstable and
/// the stable manifold branches of `saddle` that head towards the section.
/// It vanishes at a homoclinic connection.
pub fn saddle_splitting(system: &SystemDef, saddle: &[f64], section: &CycleSection, cfg: &IntegratorConfig) -> Result<f64> {
    let (vu, vs) = saddle_directions(system, saddle, section)?;
    let off = |v: [f64; 2]| [saddle[0] + MANIFOLD_OFFSET * v[0], saddle[1] + MANIFOLD_OFFSET * v[1]];
    let su = first_ray_hit(system, off(vu), section, cfg)?;
    let ss = first_ray_hit(&system.reversed(), off(vs), section, cfg)?;
    Ok(su - ss)
}

/// Parameter of the homoclinic connection by bracketed root finding on
/// [`saddle_splitting`]; `saddle` must persist at the same point over the
/// bracket.
pub fn locate_homoclinic_by_splitting(
    system: &SystemDef,
    saddle: &[f64],
    section: &CycleSection,
    bracket: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let split = |c: f64| -> Result<f64> { saddle_splitting(&system.with_param(c)?, saddle, section, cfg) };
    let (mut a, mut b) = bracket;
    let (mut fa, mut fb) = (split(a)?, split(b)?);
    if fa * fb > 0.0 {
        return Err(Error::NoStraddle(format!(
            "splitting has the same sign at c = {a} ({fa:e}) and c = {b} ({fb:e})"
        )));
    }
    for it in 0..100 {
        if (b - a).abs() <= 1e-12 {
            break;
        }
        let mid = if it % 3 == 2 { 0.5 * (a + b) } else { b - fb * (b - a) / (fb - fa) };
        let mid = if (mid - a) * (mid - b) < 0.0 { mid } else { 0.5 * (a + b) };
        let fm = split(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
            fb = fm;
        }
    }
    Ok(if fa.abs() < fb.abs() { a } else { b })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloquetRates {
    /// Nontrivial eigenvalue of the monodromy matrix.
    pub multiplier: f64,
    pub trivial_multiplier: f64,
    pub determinant: f64,
    /// `exp((1/T) ∫ div f dt)` by quadrature along the orbit.
    pub lambda: f64,
    /// `multiplier^(1/T)`.
    pub lambda_monodromy: f64,
}

/// Floquet multiplier from the monodromy matrix and the per-unit-time rate
/// from the divergence integral, cross-checked against each other.
pub fn floquet_rates(cycle: &LimitCycleSolution, system: &SystemDef, cfg: &IntegratorConfig) -> Result<FloquetRates> {
    let sys = system.with_param(cycle.c)?;
    let opts = VariationalOptions {
        with_param: false,
        phi_control: PhiErrorControl::Entrywise,
    };
    let var = integrate_variational_with(&sys, &cycle.anchor, (0.0, cycle.period), cfg, opts, |_| {
        ControlFlow::Continue(())
    })?;
    let mono = var.final_phi();
    let [(l1, i1), (l2, _)] = eigenvalues_2x2(&mono);
    if i1 != 0.0 {
        return Err(Error::TrivialMultiplier(l1));
    }
    let (trivial, m) = if (l1 - 1.0).abs() <= (l2 - 1.0).abs() { (l1, l2) } else { (l2, l1) };
    if (trivial - 1.0).abs() > FLOQUET_TOL {
        return Err(Error::TrivialMultiplier(trivial));
    }
    let lambda = (divergence_integral(&sys, cycle.anchor, cycle.period, cfg)? / cycle.period).exp();
    let lambda_monodromy = m.powf(1.0 / cycle.period);
    if !((lambda_monodromy - lambda).abs() <= FLOQUET_TOL * lambda) {
        return Err(Error::FloquetMismatch {
            monodromy: lambda_monodromy,
            divergence: lambda,
        });
    }
    Ok(FloquetRates {
        multiplier: m,
        trivial_multiplier: trivial,
        determinant: mono.determinant(),
        lambda,
        lambda_monodromy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchEvent {
    Fold,
    HomoclinicApproach,
    Boundary,
}

impl BranchEvent {
    pub fn name(self) -> &'static str {
        match self {
            BranchEvent::Fold => "fold",
            BranchEvent::HomoclinicApproach => "homoclinic-approach",
            BranchEvent::Boundary => "boundary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    HomoclinicApproach,
    Boundary,
    PastFold,
    StepFloor,
    MaxPoints,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::HomoclinicApproach => "homoclinic-approach",
            Termination::Boundary => "boundary",
            Termination::PastFold => "past-fold",
            Termination::StepFloor => "step-floor",
            Termination::MaxPoints => "max-points",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint {
    pub arclength: f64,
    pub cycle: LimitCycleSolution,
    pub event: Option<BranchEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationBranch {
    pub section: CycleSection,
    pub points: Vec<BranchPoint>,
    pub termination: Termination,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationSettings {
    /// First predictor step, measured as a change in `c`.
    pub initial_dc: f64,
    /// Arclength step floor; reaching it ends the branch.
    pub min_step: f64,
    pub max_step: f64,
    pub max_points: usize,
    pub period_cap: f64,
    /// Homoclinic approach is declared once the orbit passes this close to
    /// the saddle.
    pub saddle_distance_min: f64,
    /// Stop this many points after the first fold; `None` keeps going.
    pub points_past_fold: Option<usize>,
    /// Largest relative period change accepted in one step. Keeps the
    /// predictor from jumping across a homoclinic point, where the return
    /// map's fixed-point curve continues onto a cycle of about half the
    /// period.
    pub max_period_change: f64,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        Self {
            initial_dc: 1e-6,
            min_step: 1e-9,
            max_step: 2e-4,
            max_points: 500,
            period_cap: 200.0,
            saddle_distance_min: 1e-4,
            points_past_fold: None,
            max_period_change: 0.2,
        }
    }
}

const CORRECTOR_MAX_ITER: usize = 8;

fn unit2(v: [f64; 2]) -> [f64; 2] {
    let n = norm(&v);
    [v[0] / n, v[1] / n]
}

/// Pseudo-arclength continuation of a cycle in `(s, c)`.
///
/// The branch starts at `start` heading towards increasing `c` when
/// `c_direction > 0`. Each accepted point is a closed cycle (return
/// displacement at most [`CLOSURE_TOL`]).
pub fn continue_branch(
    system: &SystemDef,
    section: &CycleSection,
    start: &LimitCycleSolution,
    c_direction: f64,
    settings: &ContinuationSettings,
    cfg: &IntegratorConfig,
) -> Result<ContinuationBranch> {
    if c_direction == 0.0 || !c_direction.is_finite() {
        return Err(Error::InvalidInput("c_direction must be ±1".into()));
    }
    let (lo, hi) = system.kind.map_or((f64::NEG_INFINITY, f64::INFINITY), SystemKind::param_range);
    let eval = |s: f64, c: f64| first_return(&system.with_param(c)?, section, s, RETURN_T_MAX, cfg);

    let r0 = eval(start.s, start.c)?;
    let mut tangent = unit2([-r0.dp_dc, r0.dp_ds - 1.0]);
    if tangent[1] * c_direction < 0.0 {
        tangent = [-tangent[0], -tangent[1]];
    }
    let mut h = (settings.initial_dc / tangent[1].abs().max(1e-300)).clamp(settings.min_step, settings.max_step);
    let mut x = [start.s, start.c];
    let mut branch = ContinuationBranch {
        section: *section,
        points: vec![BranchPoint {
            arclength: 0.0,
            cycle: start.clone(),
            event: None,
        }],
        termination: Termination::MaxPoints,
        diagnostic: None,
    };
    let mut arclength = 0.0;
    let mut since_fold: Option<usize> = None;

    while branch.points.len() < settings.max_points {
        let pred = [x[0] + h * tangent[0], x[1] + h * tangent[1]];
        if pred[1] < lo || pred[1] > hi {
            if let Some(last) = branch.points.last_mut() {
                last.event = Some(BranchEvent::Boundary);
            }
            branch.termination = Termination::Boundary;
            return Ok(branch);
        }
        let mut y = pred;
        let mut accepted: Option<(FirstReturn, usize)> = None;
        for it in 0..CORRECTOR_MAX_ITER {
            let Ok(r) = eval(y[0], y[1]) else { break };
            let g = r.displacement();
            if g.abs() <= CLOSURE_TOL && it > 0 {
                accepted = Some((r, it));
                break;
            }
            // [[G_s, G_c], [τ_s, τ_c]] Δ = −[G, τ·(y − pred)]
            let (a, b) = (r.dp_ds - 1.0, r.dp_dc);
            let (cc, d) = (tangent[0], tangent[1]);
            let rhs2 = -(cc * (y[0] - pred[0]) + d * (y[1] - pred[1]));
            let det = a * d - b * cc;
            if det == 0.0 || !det.is_finite() {
                break;
            }
            let ds = (-g * d - b * rhs2) / det;
            let dc = (a * rhs2 + cc * g) / det;
            y = [y[0] + ds, y[1] + dc];
            if y[1] < lo || y[1] > hi {
                break;
            }
        }
        let step_len = norm(&[y[0] - x[0], y[1] - x[1]]);
        let Some((r, iters)) = accepted.filter(|_| step_len <= 2.0 * h) else {
            h *= 0.5;
            if h < settings.min_step {
                branch.termination = Termination::StepFloor;
                branch.diagnostic = Some(format!(
                    "corrector failed at s = {}, c = {} with step below {}",
                    x[0], x[1], settings.min_step
                ));
                return Ok(branch);
            }
            continue;
        };
        let mut next_tangent = unit2([-r.dp_dc, r.dp_ds - 1.0]);
        if dot(&next_tangent, &tangent) < 0.0 {
            next_tangent = [-next_tangent[0], -next_tangent[1]];
        }
        let cycle = assemble(&system.with_param(y[1])?, &r, cfg, section)?;
        let prev_period = branch.points.last().map_or(cycle.period, |p| p.cycle.period);
        if (cycle.period - prev_period).abs() > settings.max_period_change * prev_period {
            h *= 0.5;
            if h < settings.min_step {
                branch.termination = Termination::StepFloor;
                branch.diagnostic = Some(format!("period jump at c = {} persists below the step floor", y[1]));
                return Ok(branch);
            }
            continue;
        }
        arclength += step_len;
        let mut event = None;
        if next_tangent[1] * tangent[1] < 0.0 && since_fold.is_none() {
            event = Some(BranchEvent::Fold);
            since_fold = Some(0);
        }
        let homoclinic = cycle.period > settings.period_cap || cycle.saddle_distance < settings.saddle_distance_min;
        if homoclinic {
            event = Some(BranchEvent::HomoclinicApproach);
        }
        branch.points.push(BranchPoint {
            arclength,
            cycle,
            event,
        });
        if homoclinic {
            branch.termination = Termination::HomoclinicApproach;
            return Ok(branch);
        }
        if let Some(k) = since_fold.as_mut() {
            if event.is_none() {
                *k += 1;
            }
            if settings.points_past_fold.is_some_and(|limit| *k >= limit) {
                branch.termination = Termination::PastFold;
                return Ok(branch);
            }
        }
        x = y;
        tangent = next_tangent;
        h = match iters {
            0..=2 => (h * 1.5).min(settings.max_step),
            3..=4 => h,
            _ => (h * 0.6).max(settings.min_step),
        };
    }
    Ok(branch)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldReport {
    pub c: f64,
    pub s: f64,
    /// Nontrivial multiplier at the refined fold (one in exact arithmetic).
    pub multiplier: f64,
    /// Spread of `c` over the final `s` bracket.
    pub c_width: f64,
}

/// Index `k` such that the fold lies between points `k` and `k + 1`.
fn fold_bracket(branch: &ContinuationBranch) -> Result<usize> {
    let p = &branch.points;
    let marked = p.iter().position(|q| q.event == Some(BranchEvent::Fold));
    let turn = (1..p.len().saturating_sub(1))
        .find(|&k| (p[k].cycle.c - p[k - 1].cycle.c) * (p[k + 1].cycle.c - p[k].cycle.c) < 0.0);
    let k = marked.map(|k| k.saturating_sub(1)).or(turn).ok_or(Error::NoFold)?;
    // widen until the multiplier straddles one
    let side = |i: usize| p[i].cycle.multiplier - 1.0;
    for w in 0..3usize {
        let (a, b) = (k.saturating_sub(w), (k + 1 + w).min(p.len() - 1));
        if a < b && side(a) * side(b) < 0.0 {
            return Ok(a * p.len() + b);
        }
    }
    Err(Error::NoFold)
}

/// Solves `P(s, c) = s` for `c` at fixed `s`.
fn close_at_s(system: &SystemDef, section: &CycleSection, s: f64, mut c: f64, cfg: &IntegratorConfig) -> Result<(f64, FirstReturn)> {
    let mut last = f64::INFINITY;
    for _ in 0..30 {
        let r = first_return(&system.with_param(c)?, section, s, RETURN_T_MAX, cfg)?;
        let g = r.displacement();
        if g.abs() <= CLOSURE_TOL * 1e-1 || (g.abs() <= CLOSURE_TOL && g.abs() >= last) {
            return Ok((c, r));
        }
        last = g.abs();
        c -= g / r.dp_dc;
    }
    Err(Error::NewtonDiverged {
        residual: last,
        iterate: vec![s, c],
    })
}

/// Refines a fold of the branch by bisection in `s` on `m(s) − 1`, where
/// `m(s)` is the multiplier of the cycle through `anchor(s)` (with `c`
/// solved for).
pub fn locate_fold(system: &SystemDef, branch: &ContinuationBranch, cfg: &IntegratorConfig) -> Result<FoldReport> {
    let code = fold_bracket(branch)?;
    let n = branch.points.len();
    let (pa, pb) = (&branch.points[code / n].cycle, &branch.points[code % n].cycle);
    let section = &branch.section;
    let (mut sa, mut ca, mut ma) = (pa.s, pa.c, pa.multiplier - 1.0);
    let (mut sb, mut cb) = (pb.s, pb.c);
    let mut best = (pa.c, pa.s, pa.multiplier);
    for _ in 0..80 {
        if (sa - sb).abs() <= 1e-10 {
            break;
        }
        let sm = 0.5 * (sa + sb);
        let (cm, r) = close_at_s(system, section, sm, 0.5 * (ca + cb), cfg)?;
        let mm = r.dp_ds - 1.0;
        best = (cm, sm, r.dp_ds);
        if (mm > 0.0) == (ma > 0.0) {
            sa = sm;
            ca = cm;
            ma = mm;
        } else {
            sb = sm;
            cb = cm;
        }
    }
    Ok(FoldReport {
        c: best.0,
        s: best.1,
        multiplier: best.2,
        c_width: (ca - cb).abs(),
    })
}

/// Fit of `T(c) = A − B·log(σ(c₂ − c))`, `σ` the direction of approach.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomoclinicFit {
    pub c2: f64,
    pub a: f64,
    pub b: f64,
    /// RMS residual relative to the mean period.
    pub residual: f64,
    pub points: usize,
    pub low_confidence: bool,
}

/// Relative RMS residual above which a fit is flagged.
pub const FIT_RESIDUAL_MAX: f64 = 0.01;
const FIT_POINTS: usize = 16;

fn log_fit_at(cs: &[f64], ts: &[f64], c2: f64, sign: f64) -> Option<(f64, f64, f64)> {
    let n = cs.len() as f64;
    let ls: Vec<f64> = cs.iter().map(|c| (sign * (c2 - c)).ln()).collect();
    if ls.iter().any(|l| !l.is_finite()) {
        return None;
    }
    let (ml, mt) = (ls.iter().sum::<f64>() / n, ts.iter().sum::<f64>() / n);
    let sll: f64 = ls.iter().map(|l| (l - ml).powi(2)).sum();
    let slt: f64 = ls.iter().zip(ts).map(|(l, t)| (l - ml) * (t - mt)).sum();
    if sll == 0.0 {
        return None;
    }
    let slope = slt / sll;
    let a = mt - slope * ml;
    let ssr = ls.iter().zip(ts).map(|(l, t)| (t - a - slope * l).powi(2)).sum();
    Some((a, -slope, ssr))
}

/// Fits the logarithmic period blow-up `T = A − B·log|c₂ − c|` to samples
/// approaching `c₂` monotonically (in either direction).
pub fn fit_log_divergence(cs: &[f64], ts: &[f64]) -> Result<HomoclinicFit> {
    if cs.len() != ts.len() || cs.len() < 4 {
        return Err(Error::InvalidInput("log fit needs at least four (c, T) pairs".into()));
    }
    let sign = (cs[cs.len() - 1] - cs[0]).signum();
    if sign == 0.0 || cs.windows(2).any(|w| (w[1] - w[0]) * sign <= 0.0) {
        return Err(Error::InvalidInput("log fit needs strictly monotone c".into()));
    }
    let edge = cs[cs.len() - 1];
    let span = (edge - cs[0]).abs();
    let c2_of = |u: f64| edge + sign * u.exp();
    let ssr = |u: f64| log_fit_at(cs, ts, c2_of(u), sign).map_or(f64::INFINITY, |f| f.2);
    // coarse scan in log-offset, then golden section
    let (u_lo, u_hi) = ((span * 1e-9).max(f64::MIN_POSITIVE).ln(), (span * 1e3).ln());
    let grid = 400;
    let us: Vec<f64> = (0..=grid).map(|k| u_lo + (u_hi - u_lo) * k as f64 / grid as f64).collect();
    let k_best = (0..=grid).min_by(|&i, &j| ssr(us[i]).total_cmp(&ssr(us[j]))).unwrap();
    let (mut a, mut b) = (us[k_best.saturating_sub(1)], us[(k_best + 1).min(grid)]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (b - g * (b - a), a + g * (b - a));
    let (mut f1, mut f2) = (ssr(x1), ssr(x2));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (1.0 + a.abs()) {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = ssr(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = ssr(x2);
        }
    }
    let u = if f1 <= f2 { x1 } else { x2 };
    let c2 = c2_of(u);
    let (fa, fb, s) = log_fit_at(cs, ts, c2, sign).ok_or_else(|| Error::InvalidInput("degenerate log fit".into()))?;
    let mean_t = ts.iter().sum::<f64>() / ts.len() as f64;
    let residual = (s / ts.len() as f64).sqrt() / mean_t.abs();
    Ok(HomoclinicFit {
        c2,
        a: fa,
        b: fb,
        residual,
        points: cs.len(),
        low_confidence: residual > FIT_RESIDUAL_MAX || fb <= 0.0,
    })
}

/// Extrapolates the homoclinic parameter from the trailing monotone stretch
/// of a branch that ended on a homoclinic approach.
pub fn locate_homoclinic(branch: &ContinuationBranch) -> Result<HomoclinicFit> {
    if branch.termination != Termination::HomoclinicApproach {
        return Err(Error::InvalidInput("branch did not end with a homoclinic approach".into()));
    }
    let p = &branch.points;
    let n = p.len();
    if n < 4 {
        return Err(Error::InvalidInput("branch too short for a fit".into()));
    }
    let dir = (p[n - 1].cycle.c - p[n - 2].cycle.c).signum();
    let mut first = n - 1;
    while first > 0 && (p[first].cycle.c - p[first - 1].cycle.c) * dir > 0.0 && n - first < FIT_POINTS {
        first -= 1;
    }
    let cs: Vec<f64> = p[first..].iter().map(|q| q.cycle.c).collect();
    let ts: Vec<f64> = p[first..].iter().map(|q| q.cycle.period).collect();
    fit_log_divergence(&cs, &ts)
}

/// Parameter at which the stable cycle around all three equilibria of
/// `example2` is seeded; it lies between the fold and the homoclinic value.
pub const EX2_GAMMA3_SEED_C: f64 = -0.060945;
/// Offset above the homoclinic value at which the small stable cycle is
/// seeded.
pub const EX2_GAMMA5_OFFSET: f64 = 2e-6;
const SEED_SETTLE_TIME: f64 = 300.0;
const EX2_SADDLE: [f64; 2] = [0.0, 0.0];

/// Everything computed for the `example2` bifurcation sequence.
#[derive(Debug, Clone)]
pub struct Example2Analysis {
    pub gamma3_start: LimitCycleSolution,
    /// Stable large cycle continued towards decreasing `c` through its fold.
    pub fold_branch: ContinuationBranch,
    /// Stable large cycle continued towards the homoclinic value.
    pub homoclinic_branch: ContinuationBranch,
    /// Small stable cycle continued towards increasing `c` through its fold.
    pub small_branch: ContinuationBranch,
    pub c1: FoldReport,
    pub c2_fit: HomoclinicFit,
    pub c2_splitting: f64,
    pub c3: FoldReport,
    /// Largest `λ` over the stable large-cycle points of both branches.
    pub gamma3_lambda_max: f64,
    /// `λ` at the last point of the homoclinic branch.
    pub gamma3_lambda_last: f64,
}

fn bracket_splitting(system: &SystemDef, section: &CycleSection, from: f64, cfg: &IntegratorConfig) -> Result<(f64, f64)> {
    let (_, hi) = SystemKind::Example2.param_range();
    let f0 = saddle_splitting(&system.with_param(from)?, &EX2_SADDLE, section, cfg)?;
    let mut step = 1e-7;
    while from + step <= hi {
        let f1 = saddle_splitting(&system.with_param(from + step)?, &EX2_SADDLE, section, cfg)?;
        if f0 * f1 <= 0.0 {
            return Ok((from, from + step));
        }
        step *= 2.0;
    }
    Err(Error::NoStraddle(format!("splitting keeps its sign above c = {from}")))
}

/// Runs the full `example2` pipeline: seeds the stable large cycle from the
/// saddle's unstable manifold, continues it to the fold `c₁` and towards
/// the homoclinic value `c₂` (log fit plus a manifold-splitting cross-check),
/// then seeds the small stable cycle just above `c₂` and continues it to the
/// fold `c₃`.
pub fn analyze_example2(settings: &ContinuationSettings, cfg: &IntegratorConfig) -> Result<Example2Analysis> {
    let section = CycleSection::example2();
    let sys = crate::systems::make_system(SystemKind::Example2, EX2_GAMMA3_SEED_C)?;
    let seed = seed_from_unstable_manifold(&sys, &EX2_SADDLE, &section, SEED_SETTLE_TIME, cfg)?;
    let gamma3 = refine_cycle(&sys, &section, &seed, cfg)?;

    let fold_settings = ContinuationSettings {
        points_past_fold: Some(settings.points_past_fold.unwrap_or(3)),
        ..settings.clone()
    };
    let fold_branch = continue_branch(&sys, &section, &gamma3, -1.0, &fold_settings, cfg)?;
    let c1 = locate_fold(&sys, &fold_branch, cfg)?;

    let homoclinic_branch = continue_branch(&sys, &section, &gamma3, 1.0, settings, cfg)?;
    let c2_fit = locate_homoclinic(&homoclinic_branch)?;
    let last = homoclinic_branch.points.last().expect("nonempty branch").cycle.c;
    let bracket = bracket_splitting(&sys, &section, last, cfg)?;
    let c2_splitting = locate_homoclinic_by_splitting(&sys, &EX2_SADDLE, &section, bracket, cfg)?;

    let c5 = c2_splitting + EX2_GAMMA5_OFFSET;
    let sys5 = sys.with_param(c5)?;
    let seed5 = seed_from_unstable_manifold(&sys5, &EX2_SADDLE, &section, SEED_SETTLE_TIME, cfg)?;
    let gamma5 = refine_cycle(&sys5, &section, &seed5, cfg)?;
    let small_branch = continue_branch(&sys5, &section, &gamma5, 1.0, &fold_settings, cfg)?;
    let c3 = locate_fold(&sys5, &small_branch, cfg)?;

    let stable_large = fold_branch
        .points
        .iter()
        .chain(&homoclinic_branch.points)
        .filter(|p| p.cycle.label == CycleLabel::Gamma3);
    let gamma3_lambda_max = stable_large.map(|p| p.cycle.lambda).fold(f64::NEG_INFINITY, f64::max);
    let gamma3_lambda_last = homoclinic_branch.points.last().expect("nonempty branch").cycle.lambda;
    Ok(Example2Analysis {
        gamma3_start: gamma3,
        fold_branch,
        homoclinic_branch,
        small_branch,
        c1,
        c2_fit,
        c2_splitting,
        c3,
        gamma3_lambda_max,
        gamma3_lambda_last,
    })
}
