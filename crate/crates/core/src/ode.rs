//! Adaptive Dormand–Prince 5(4) integration with dense output.
//!
//! [`solve`] is the single stepping loop; [`integrate`] and
//! [`integrate_variational`] wrap it for a [`SystemDef`], and
//! [`section_crossings`] locates hyperplane crossings on a dense trajectory.

use std::ops::ControlFlow;

use nalgebra::DMatrix;

use crate::error::{Error, IntegrationFailure, Result};
use crate::linalg::dot;
use crate::systems::SystemDef;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    pub dense_output: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
            max_steps: 1_000_000,
            dense_output: true,
        }
    }
}

impl IntegratorConfig {
    pub fn with_tolerances(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if self.max_steps == 0 || !(self.max_step > 0.0) {
            return Err(Error::InvalidInput("max_steps and max_step must be positive".into()));
        }
        Ok(())
    }
}

/// A (possibly non-autonomous) first-order system `y' = F(t, y)`.
pub trait OdeRhs {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Per-component error scale `atol + rtol·max(|y0|, |y1|)`.
    fn error_scale(&self, y0: &[f64], y1: &[f64], cfg: &IntegratorConfig, out: &mut [f64]) {
        for ((s, a), b) in out.iter_mut().zip(y0).zip(y1) {
            *s = cfg.abs_tol + cfg.rel_tol * a.abs().max(b.abs());
        }
    }
}

impl OdeRhs for SystemDef {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        self.rhs_into(y, dy);
    }
}

/// Adapter turning a closure into an [`OdeRhs`].
pub struct FnRhs<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> OdeRhs for FnRhs<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.f)(t, y, dy)
    }
}

/// Base state, row-major fundamental matrix and optionally the parameter
/// sensitivity `w' = J w + ∂f/∂p`, integrated together.
pub struct VariationalRhs<'a> {
    pub sys: &'a SystemDef,
    pub with_param: bool,
    pub phi_control: PhiErrorControl,
}

/// How the step controller weighs errors in the fundamental matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhiErrorControl {
    /// Absolute tolerance scaled by the norm of each column of `Φ`.
    #[default]
    ColumnScaled,
    /// Relative accuracy per entry; needed when logarithms of tiny projected
    /// entries are taken.
    Entrywise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VariationalOptions {
    pub with_param: bool,
    pub phi_control: PhiErrorControl,
}

impl OdeRhs for VariationalRhs<'_> {
    fn dim(&self) -> usize {
        let n = self.sys.dim;
        n + n * n + if self.with_param { n } else { 0 }
    }

    fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.sys.dim;
        let x = &y[..n];
        self.sys.rhs_into(x, &mut dy[..n]);
        let mut jac = [0.0; 9];
        let jac = &mut jac[..n * n];
        self.sys.jacobian_into(x, jac);
        let phi = &y[n..n + n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += jac[i * n + k] * phi[k * n + j];
                }
                dy[n + i * n + j] = acc;
            }
        }
        if self.with_param {
            let off = n + n * n;
            let w = &y[off..off + n];
            let dp = self.sys.param_derivative(x);
            for i in 0..n {
                dy[off + i] = dp[i] + (0..n).map(|k| jac[i * n + k] * w[k]).sum::<f64>();
            }
        }
    }

    // Φ columns decay or grow exponentially; scale the absolute tolerance of
    // each column by its norm so accuracy stays relative.
    fn error_scale(&self, y0: &[f64], y1: &[f64], cfg: &IntegratorConfig, out: &mut [f64]) {
        let n = self.sys.dim;
        for ((s, a), b) in out.iter_mut().zip(y0).zip(y1) {
            *s = cfg.abs_tol + cfg.rel_tol * a.abs().max(b.abs());
        }
        let floor = match self.phi_control {
            PhiErrorControl::ColumnScaled => 1.0,
            PhiErrorControl::Entrywise => f64::EPSILON,
        };
        for j in 0..n {
            let col = |y: &[f64]| (0..n).map(|i| y[n + i * n + j].powi(2)).sum::<f64>().sqrt();
            let scale = col(y0).max(col(y1)).min(1.0);
            for i in 0..n {
                let k = n + i * n + j;
                out[k] = (cfg.abs_tol * scale * floor + cfg.rel_tol * y0[k].abs().max(y1[k].abs()))
                    .max(f64::MIN_POSITIVE);
            }
        }
    }
}

/// Continuous extension of one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSegment {
    pub t0: f64,
    pub h: f64,
    coeffs: Vec<f64>,
}

impl DenseSegment {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len() / 5
    }

    pub fn contains(&self, t: f64) -> bool {
        let (a, b) = if self.h >= 0.0 { (self.t0, self.t1()) } else { (self.t1(), self.t0) };
        t >= a && t <= b
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let n = self.dim();
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let r = &self.coeffs;
        for i in 0..n {
            out[i] = r[i] + s * (r[n + i] + s1 * (r[2 * n + i] + s * (r[3 * n + i] + s1 * r[4 * n + i])));
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out);
        out
    }

    /// State at the segment end, exactly as stored by the stepper.
    pub fn end_state(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| self.coeffs[i] + self.coeffs[n + i]).collect()
    }
}

/// Sampled solution with optional dense output.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub segments: Vec<DenseSegment>,
}

impl Trajectory {
    fn start(t0: f64, y0: &[f64], dense: bool) -> Self {
        Self {
            dim: y0.len(),
            times: vec![t0],
            states: vec![y0.to_vec()],
            segments: if dense { Vec::new() } else { Vec::with_capacity(0) },
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    pub fn has_dense(&self) -> bool {
        !self.segments.is_empty() || self.times.len() == 1
    }

    /// Evaluates the dense interpolant at `t`. Sample times return the stored
    /// state exactly.
    pub fn eval(&self, t: f64) -> Option<Vec<f64>> {
        if let Ok(i) = self.search_sample(t) {
            return Some(self.states[i].clone());
        }
        let seg = self.segment_at(t)?;
        Some(seg.eval(t))
    }

    fn search_sample(&self, t: f64) -> std::result::Result<usize, usize> {
        let forward = self.t_end() >= self.t_start();
        self.times.binary_search_by(|probe| {
            let ord = probe.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less);
            if forward {
                ord
            } else {
                ord.reverse()
            }
        })
    }

    pub fn segment_at(&self, t: f64) -> Option<&DenseSegment> {
        if self.segments.is_empty() {
            return None;
        }
        let idx = match self.search_sample(t) {
            Ok(i) => i.min(self.segments.len() - 1),
            Err(i) => i.checked_sub(1)?,
        };
        self.segments.get(idx).filter(|s| s.contains(t))
    }
}

// Dormand–Prince 5(4) coefficients
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

fn error_norm(err: &[f64], scale: &[f64]) -> f64 {
    let n = err.len() as f64;
    let s: f64 = err.iter().zip(scale).map(|(e, sc)| (e / sc).powi(2)).sum();
    (s / n).sqrt()
}

fn initial_step<R: OdeRhs + ?Sized>(rhs: &R, t0: f64, y0: &[f64], f0: &[f64], dir: f64, cfg: &IntegratorConfig) -> f64 {
    let n = y0.len();
    let sc: Vec<f64> = y0.iter().map(|y| cfg.abs_tol + cfg.rel_tol * y.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt();
    let d0 = rms(y0);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(cfg.max_step);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + dir * h0 * f).collect();
    let mut f1 = vec![0.0; n];
    rhs.eval(t0 + dir * h0, &y1, &mut f1);
    let df: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&df) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(0.2)
    };
    (100.0 * h0).min(h1).min(cfg.max_step)
}

/// Integrates `rhs` from `(t0, y0)` to `t1`.
///
/// `observer` sees every accepted step (its dense segment and end state) and
/// may stop the integration early by returning `Break`. Failures return
/// [`Error::Integration`] carrying the partial trajectory.
pub fn solve<R, F>(rhs: &R, t0: f64, t1: f64, y0: &[f64], cfg: &IntegratorConfig, mut observer: F) -> Result<Trajectory>
where
    R: OdeRhs + ?Sized,
    F: FnMut(&DenseSegment) -> ControlFlow<()>,
{
    cfg.validate()?;
    let n = rhs.dim();
    if y0.len() != n {
        return Err(Error::InvalidInput(format!("state has length {}, expected {n}", y0.len())));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("initial state is not finite".into()));
    }
    let mut traj = Trajectory::start(t0, y0, cfg.dense_output);
    if t1 == t0 {
        return Ok(traj);
    }
    let dir = (t1 - t0).signum();

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    rhs.eval(t, &y, &mut k1);
    let mut h = initial_step(rhs, t, &y, &k1, dir, cfg);

    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut scale = vec![0.0; n];
    let mut steps = 0usize;
    let mut rejected_last = false;

    let fail = |traj: Trajectory, t: f64, reason| Error::Integration {
        t,
        reason,
        partial: Box::new(traj),
    };

    loop {
        if steps >= cfg.max_steps {
            return Err(fail(traj, t, IntegrationFailure::MaxSteps));
        }
        let remaining = (t1 - t).abs();
        let mut last = false;
        // absorb a roundoff-sized remainder into this step
        if h >= remaining || remaining - h <= 64.0 * f64::EPSILON * t1.abs().max(1.0) {
            h = remaining;
            last = true;
        }
        if h < 16.0 * f64::EPSILON * t.abs().max(1e-300) || h == 0.0 {
            return Err(fail(traj, t, IntegrationFailure::StepUnderflow));
        }
        let hs = dir * h;

        for i in 0..n {
            tmp[i] = y[i] + hs * A21 * k1[i];
        }
        rhs.eval(t + C2 * hs, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs.eval(t + C3 * hs, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs.eval(t + C4 * hs, &tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs.eval(t + C5 * hs, &tmp, &mut k5);
        for i in 0..n {
            tmp[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs.eval(t + hs, &tmp, &mut k6);
        for i in 0..n {
            y1[i] = y[i] + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        let t_new = if last { t1 } else { t + hs };
        rhs.eval(t_new, &y1, &mut k7);
        steps += 1;

        for i in 0..n {
            err[i] = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        rhs.error_scale(&y, &y1, cfg, &mut scale);
        let en = error_norm(&err, &scale);

        if !en.is_finite() || y1.iter().any(|v| !v.is_finite()) {
            // shrink hard; give up only if the step collapses
            h *= FAC_MIN;
            rejected_last = true;
            if h < 16.0 * f64::EPSILON * t.abs().max(1e-300) {
                return Err(fail(traj, t, IntegrationFailure::NonFinite));
            }
            continue;
        }

        let fac = if en == 0.0 { FAC_MAX } else { (SAFETY * en.powf(-0.2)).clamp(FAC_MIN, FAC_MAX) };
        if en <= 1.0 {
            let seg = DenseSegment {
                t0: t,
                h: t_new - t,
                coeffs: {
                    let mut c = Vec::with_capacity(5 * n);
                    // r1 = y0, r2 = Δy, r3 = h k1 − Δy, r4 = Δy − h k7 − r3, r5 = h Σ dᵢ kᵢ
                    c.extend_from_slice(&y);
                    c.extend(y.iter().zip(&y1).map(|(a, b)| b - a));
                    for i in 0..n {
                        c.push(hs * k1[i] - (y1[i] - y[i]));
                    }
                    for i in 0..n {
                        let dy = y1[i] - y[i];
                        c.push(dy - hs * k7[i] - (hs * k1[i] - dy));
                    }
                    for i in 0..n {
                        c.push(hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]));
                    }
                    c
                },
            };
            t = t_new;
            y.copy_from_slice(&y1);
            std::mem::swap(&mut k1, &mut k7);
            traj.times.push(t);
            traj.states.push(y.clone());
            let flow = observer(&seg);
            if cfg.dense_output {
                traj.segments.push(seg);
            }
            if last || flow.is_break() {
                return Ok(traj);
            }
            let grow = if rejected_last { fac.min(1.0) } else { fac };
            h = (h * grow).min(cfg.max_step);
            rejected_last = false;
        } else {
            h *= fac.min(1.0);
            rejected_last = true;
        }
    }
}

/// Integrates the flow of `system` from `x0` over `t_span` (backward when
/// `t_span.1 < t_span.0`).
pub fn integrate(system: &SystemDef, x0: &[f64], t_span: (f64, f64), cfg: &IntegratorConfig) -> Result<Trajectory> {
    solve(system, t_span.0, t_span.1, x0, cfg, |_| ControlFlow::Continue(()))
}

/// Trajectory paired with the fundamental matrix of the linearized flow
/// (and, when requested, the parameter sensitivity).
#[derive(Debug, Clone)]
pub struct VariationalSolution {
    pub dim: usize,
    pub with_param: bool,
    /// Augmented trajectory `[x, Φ (row-major), w?]`.
    pub augmented: Trajectory,
}

impl VariationalSolution {
    pub fn times(&self) -> &[f64] {
        &self.augmented.times
    }

    pub fn state_at(&self, i: usize) -> &[f64] {
        &self.augmented.states[i][..self.dim]
    }

    pub fn phi_at(&self, i: usize) -> DMatrix<f64> {
        let n = self.dim;
        DMatrix::from_row_slice(n, n, &self.augmented.states[i][n..n + n * n])
    }

    pub fn final_state(&self) -> &[f64] {
        self.state_at(self.augmented.len() - 1)
    }

    pub fn final_phi(&self) -> DMatrix<f64> {
        self.phi_at(self.augmented.len() - 1)
    }

    pub fn final_param_sensitivity(&self) -> Option<Vec<f64>> {
        let n = self.dim;
        self.with_param
            .then(|| self.augmented.final_state()[n + n * n..].to_vec())
    }

    /// Base trajectory (state components only, without dense output).
    pub fn base(&self) -> Trajectory {
        Trajectory {
            dim: self.dim,
            times: self.augmented.times.clone(),
            states: self.augmented.states.iter().map(|s| s[..self.dim].to_vec()).collect(),
            segments: Vec::new(),
        }
    }

    pub fn phi(&self, t: f64) -> Option<DMatrix<f64>> {
        let n = self.dim;
        let s = self.augmented.eval(t)?;
        Some(DMatrix::from_row_slice(n, n, &s[n..n + n * n]))
    }
}

fn variational_initial(x0: &[f64], with_param: bool) -> Vec<f64> {
    let n = x0.len();
    let mut y0 = x0.to_vec();
    for i in 0..n {
        for j in 0..n {
            y0.push(if i == j { 1.0 } else { 0.0 });
        }
    }
    if with_param {
        y0.extend(std::iter::repeat(0.0).take(n));
    }
    y0
}

/// Jointly integrates the state and the fundamental matrix `Φ' = J Φ`,
/// `Φ(t₀) = I`, on a single step sequence.
pub fn integrate_variational(
    system: &SystemDef,
    x0: &[f64],
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<VariationalSolution> {
    integrate_variational_with(system, x0, t_span, cfg, VariationalOptions::default(), |_| {
        ControlFlow::Continue(())
    })
}

/// As [`integrate_variational`], with options for the parameter sensitivity
/// and error control, and an observer that can stop the run early.
pub fn integrate_variational_with<F>(
    system: &SystemDef,
    x0: &[f64],
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
    opts: VariationalOptions,
    observer: F,
) -> Result<VariationalSolution>
where
    F: FnMut(&DenseSegment) -> ControlFlow<()>,
{
    if x0.len() != system.dim {
        return Err(Error::InvalidInput(format!(
            "state has length {}, expected {}",
            x0.len(),
            system.dim
        )));
    }
    let rhs = VariationalRhs {
        sys: system,
        with_param: opts.with_param,
        phi_control: opts.phi_control,
    };
    let y0 = variational_initial(x0, opts.with_param);
    let augmented = solve(&rhs, t_span.0, t_span.1, &y0, cfg, observer)?;
    Ok(VariationalSolution {
        dim: system.dim,
        with_param: opts.with_param,
        augmented,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingDirection {
    Positive,
    Negative,
    Either,
}

impl CrossingDirection {
    fn admits(self, sign: i8) -> bool {
        match self {
            CrossingDirection::Positive => sign > 0,
            CrossingDirection::Negative => sign < 0,
            CrossingDirection::Either => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionEvent {
    pub t: f64,
    pub state: Vec<f64>,
    /// Sign of `d/dt ⟨x − p, n⟩` at the crossing.
    pub direction: i8,
}

/// Hyperplane `⟨x − point, normal⟩ = 0` (only the first `normal.len()`
/// components of the state take part).
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub point: Vec<f64>,
    pub normal: Vec<f64>,
}

impl Section {
    pub fn new(point: Vec<f64>, normal: Vec<f64>) -> Result<Self> {
        let nn = crate::linalg::norm(&normal);
        if !(nn > 0.0) || !nn.is_finite() {
            return Err(Error::InvalidInput("section normal must be nonzero".into()));
        }
        Ok(Self {
            point,
            normal: normal.iter().map(|v| v / nn).collect(),
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let k = self.normal.len();
        let d: Vec<f64> = x[..k].iter().zip(&self.point).map(|(a, b)| a - b).collect();
        dot(&d, &self.normal)
    }
}

const EVENT_TOL: f64 = 1e-10;
const EVENT_MAX_ITER: usize = 60;
const EVENT_SUBSAMPLES: usize = 4;

/// Refines a sign change of `g` on `[ta, tb]` with an Illinois-style
/// bisection/secant hybrid.
fn refine_root<G: Fn(f64) -> f64>(g: G, mut ta: f64, mut ga: f64, mut tb: f64, mut gb: f64) -> f64 {
    let mut side = 0i8;
    let mut t = ta;
    for it in 0..EVENT_MAX_ITER {
        // alternate secant with plain bisection to guarantee shrinkage
        t = if it % 3 == 2 {
            0.5 * (ta + tb)
        } else {
            let s = tb - gb * (tb - ta) / (gb - ga);
            if s.is_finite() && (s - ta) * (s - tb) <= 0.0 {
                s
            } else {
                0.5 * (ta + tb)
            }
        };
        let gt = g(t);
        if gt.abs() <= EVENT_TOL * 1e-2 || ta == tb {
            return t;
        }
        if (gt > 0.0) == (gb > 0.0) {
            tb = t;
            gb = gt;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        } else {
            ta = t;
            ga = gt;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        }
        if (tb - ta).abs() <= 4.0 * f64::EPSILON * t.abs().max(1.0) {
            break;
        }
    }
    if ga.abs() < gb.abs() && g(ta).abs() <= g(t).abs() {
        ta
    } else {
        t
    }
}

/// Crossings of a dense segment with `section`.
pub fn segment_crossings(seg: &DenseSegment, section: &Section, direction: CrossingDirection) -> Vec<SectionEvent> {
    let mut out = Vec::new();
    let g = |t: f64| section.eval(&seg.eval(t));
    let mut ta = seg.t0;
    let mut ga = g(ta);
    for k in 1..=EVENT_SUBSAMPLES {
        let tb = if k == EVENT_SUBSAMPLES {
            seg.t1()
        } else {
            seg.t0 + seg.h * k as f64 / EVENT_SUBSAMPLES as f64
        };
        let gb = g(tb);
        // count a root sitting exactly on the right end once (the next interval skips its left end)
        let crosses = (ga < 0.0 && gb >= 0.0) || (ga > 0.0 && gb <= 0.0);
        if crosses {
            let increasing = gb > ga;
            let sign = if increasing == (seg.h > 0.0) { 1 } else { -1 };
            if direction.admits(sign) {
                let t = if gb == 0.0 { tb } else { refine_root(g, ta, ga, tb, gb) };
                out.push(SectionEvent {
                    t,
                    state: seg.eval(t),
                    direction: sign,
                });
            }
        }
        ta = tb;
        ga = gb;
    }
    out
}

/// Every crossing of `traj` with the hyperplane through `section_point` with
/// normal `section_normal`, in integration order.
pub fn section_crossings(
    traj: &Trajectory,
    section_point: &[f64],
    section_normal: &[f64],
    direction: CrossingDirection,
) -> Result<Vec<SectionEvent>> {
    let section = Section::new(section_point.to_vec(), section_normal.to_vec())?;
    if traj.segments.is_empty() && traj.len() > 1 {
        return Err(Error::InvalidInput("trajectory has no dense output".into()));
    }
    Ok(traj
        .segments
        .iter()
        .flat_map(|seg| segment_crossings(seg, &section, direction))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{closed_form_normal_factor_ex1, closed_form_variational_ex3, make_system, SystemKind};
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    fn decay() -> FnRhs<impl Fn(f64, &[f64], &mut [f64])> {
        FnRhs {
            dim: 1,
            f: |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -y[0],
        }
    }

    #[test]
    fn exponential_decay() {
        let cfg = IntegratorConfig::default();
        let tr = solve(&decay(), 0.0, 1.0, &[1.0], &cfg, |_| ControlFlow::Continue(())).unwrap();
        assert!((tr.final_state()[0] - (-1f64).exp()).abs() < 1e-9);
        assert_eq!(tr.t_end(), 1.0);
    }

    #[test]
    fn fifth_order_convergence() {
        // fixed steps: loose tolerances never reject, max_step pins h
        let err = |h: f64| {
            let cfg = IntegratorConfig {
                rel_tol: 1.0,
                abs_tol: 1.0,
                max_step: h,
                ..Default::default()
            };
            let tr = solve(&decay(), 0.0, 2.0, &[1.0], &cfg, |_| ControlFlow::Continue(())).unwrap();
            (tr.final_state()[0] - (-2f64).exp()).abs()
        };
        for h in [0.2, 0.1, 0.05] {
            let ratio = err(h) / err(h / 2.0);
            assert!((16.0..=80.0).contains(&ratio), "h={h} ratio={ratio}");
        }
    }

    #[test]
    fn error_proportional_to_tolerance() {
        let err = |rtol: f64| {
            let cfg = IntegratorConfig {
                rel_tol: rtol,
                abs_tol: rtol * 1e-3,
                ..Default::default()
            };
            let tr = solve(&decay(), 0.0, 1.0, &[1.0], &cfg, |_| ControlFlow::Continue(())).unwrap();
            (tr.final_state()[0] - (-1f64).exp()).abs()
        };
        for r in [1e-6, 1e-8, 1e-10] {
            let ratio = err(r) / err(r / 10.0);
            assert!((5.0..=20.0).contains(&ratio), "rtol={r} ratio={ratio}");
        }
    }

    #[test]
    fn ex1_period_matches_quadrature() {
        let sys = make_system(SystemKind::Example1, 1.0).unwrap();
        let tr = integrate(&sys, &[1.0, 0.0], (0.0, TAU), &IntegratorConfig::default()).unwrap();
        let expect = closed_form_normal_factor_ex1(TAU, 1.0, TAU);
        assert!((tr.final_state()[0] - expect).abs() < 1e-8);
        assert!((tr.final_state()[0] - (-PI).exp()).abs() < 1e-8);
    }

    #[test]
    fn ex3_circle_points_are_fixed() {
        let sys = make_system(SystemKind::Example3, 0.9).unwrap();
        let tr = integrate(&sys, &[0.0, 0.0, 2.5], (0.0, 37.0), &IntegratorConfig::default()).unwrap();
        assert_eq!(tr.final_state(), &[0.0, 0.0, 2.5]);
    }

    #[test]
    fn variational_matches_closed_form() {
        let sys = make_system(SystemKind::Example3, 0.0).unwrap();
        for t in [0.5, 1.0, 5.0] {
            let v = integrate_variational(&sys, &[0.0, 0.0, 1.3], (0.0, t), &IntegratorConfig::default()).unwrap();
            let diff = (v.final_phi() - closed_form_variational_ex3(t)).abs().max();
            assert!(diff < 1e-8, "t={t} diff={diff}");
        }
    }

    #[test]
    fn zero_span_is_identity() {
        let sys = make_system(SystemKind::Example2, -0.05).unwrap();
        let v = integrate_variational(&sys, &[0.4, 0.1], (3.0, 3.0), &IntegratorConfig::default()).unwrap();
        assert_eq!(v.final_phi(), DMatrix::identity(2, 2));
    }

    #[test]
    fn rotation_fundamental_matrix() {
        use crate::systems::{DomainBox, SystemDef};
        fn rhs(x: &[f64], _p: f64, out: &mut [f64]) {
            out[0] = x[1];
            out[1] = -x[0];
        }
        fn jac(_x: &[f64], _p: f64, out: &mut [f64]) {
            out.copy_from_slice(&[0.0, 1.0, -1.0, 0.0]);
        }
        fn dp(_x: &[f64], _p: f64, out: &mut [f64]) {
            out.fill(0.0);
        }
        let sys = SystemDef::custom("rotation", 2, 0.0, rhs, jac, dp, vec![], DomainBox::new(vec![None, None]).unwrap());
        let v = integrate_variational(&sys, &[1.0, 0.0], (0.0, FRAC_PI_2), &IntegratorConfig::default()).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((v.final_phi() - expect).abs().max() < 1e-9);
    }

    #[test]
    fn dense_output_hits_samples() {
        let sys = make_system(SystemKind::Example2, -0.06).unwrap();
        let tr = integrate(&sys, &[0.5, 0.2], (0.0, 10.0), &IntegratorConfig::default()).unwrap();
        for (seg, (t1, s1)) in tr.segments.iter().zip(tr.times.iter().zip(&tr.states).skip(1)) {
            assert_eq!(seg.eval(seg.t0), tr.eval(seg.t0).unwrap());
            let end = seg.end_state();
            assert_eq!(&end, s1);
            assert_eq!(tr.eval(*t1).unwrap(), *s1);
        }
        // interior point: compare with a direct integration
        let mid = tr.eval(4.321).unwrap();
        let direct = integrate(&sys, &[0.5, 0.2], (0.0, 4.321), &IntegratorConfig::default()).unwrap();
        for (a, b) in mid.iter().zip(direct.final_state()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn scalar_section_event() {
        let rhs = FnRhs {
            dim: 1,
            f: |_t: f64, _y: &[f64], dy: &mut [f64]| dy[0] = 1.0,
        };
        let tr = solve(&rhs, 0.0, 1.0, &[0.0], &IntegratorConfig::default(), |_| ControlFlow::Continue(())).unwrap();
        let ev = section_crossings(&tr, &[0.5], &[1.0], CrossingDirection::Either).unwrap();
        assert_eq!(ev.len(), 1);
        assert!((ev[0].t - 0.5).abs() < 1e-10);
        assert_eq!(ev[0].direction, 1);
    }

    #[test]
    fn ex3_section_crossing_time() {
        let sys = make_system(SystemKind::Example3, 0.0).unwrap();
        let tr = integrate(&sys, &[0.0, PI / 20.0, 0.0], (0.0, 10.0), &IntegratorConfig::default()).unwrap();
        let ev = section_crossings(&tr, &[0.0, FRAC_PI_2, 0.0], &[0.0, 1.0, 0.0], CrossingDirection::Either).unwrap();
        assert_eq!(ev.len(), 1);
        let expect = 1.0 / (PI / 20.0).tan();
        assert!((ev[0].t - expect).abs() < 1e-8, "{} vs {expect}", ev[0].t);
        assert!((ev[0].t - 6.3138).abs() < 1e-4);
    }

    #[test]
    fn direction_filter_halves_count() {
        let rhs = FnRhs {
            dim: 2,
            f: |_t: f64, y: &[f64], dy: &mut [f64]| {
                dy[0] = -y[1];
                dy[1] = y[0];
            },
        };
        let tr = solve(&rhs, 0.0, 5.0 * TAU + 0.1, &[1.0, 0.0], &IntegratorConfig::default(), |_| {
            ControlFlow::Continue(())
        })
        .unwrap();
        let both = section_crossings(&tr, &[0.0, 0.0], &[1.0, 0.0], CrossingDirection::Either).unwrap();
        let up = section_crossings(&tr, &[0.0, 0.0], &[1.0, 0.0], CrossingDirection::Positive).unwrap();
        assert_eq!(both.len(), 10);
        assert_eq!(up.len(), 5);
        for e in &both {
            assert!(e.state[0].abs() <= 1e-10);
        }
    }

    #[test]
    fn backward_forward_round_trip() {
        let cfg = IntegratorConfig::default();
        for (kind, p, x0) in [
            (SystemKind::Example1, 1.0, vec![0.7, 0.3]),
            (SystemKind::Example1, 0.0, vec![-1.2, 4.0]),
            (SystemKind::Example3, 1.0, vec![0.0, 0.6, PI]),
            (SystemKind::Example3, 0.5, vec![0.0, 2.5, PI]),
            (SystemKind::Example3, 0.0, vec![0.0, 1.0, 5.0]),
        ] {
            let sys = make_system(kind, p).unwrap();
            for t in [1.0, 5.0, 10.0] {
                let back = integrate(&sys, &x0, (0.0, -t), &cfg).unwrap();
                // only orbits that stay inside the declared domain are meaningful here
                assert!(back.states.iter().all(|s| sys.domain.contains(s)), "{kind} left domain");
                let fwd = integrate(&sys, back.final_state(), (-t, 0.0), &cfg).unwrap();
                let d: f64 = fwd.final_state().iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!(d < 1e-7, "{kind} t={t} d={d}");
            }
        }
    }

    #[test]
    fn max_steps_returns_partial() {
        let sys = make_system(SystemKind::Example2, -0.05).unwrap();
        let cfg = IntegratorConfig {
            max_steps: 5,
            ..Default::default()
        };
        match integrate(&sys, &[0.5, 0.2], (0.0, 100.0), &cfg) {
            Err(Error::Integration { reason, partial, .. }) => {
                assert_eq!(reason, IntegrationFailure::MaxSteps);
                assert_eq!(partial.len(), 6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn blow_up_is_reported() {
        let rhs = FnRhs {
            dim: 1,
            f: |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0],
        };
        let r = solve(&rhs, 0.0, 2.0, &[1.0], &IntegratorConfig::default(), |_| ControlFlow::Continue(()));
        assert!(matches!(r, Err(Error::Integration { .. })));
    }

    #[test]
    fn rejects_bad_input() {
        let sys = make_system(SystemKind::Example2, -0.05).unwrap();
        assert!(integrate(&sys, &[f64::NAN, 0.0], (0.0, 1.0), &IntegratorConfig::default()).is_err());
        assert!(integrate(&sys, &[0.0], (0.0, 1.0), &IntegratorConfig::default()).is_err());
        let bad = IntegratorConfig {
            rel_tol: 0.0,
            ..Default::default()
        };
        assert!(integrate(&sys, &[0.0, 0.0], (0.0, 1.0), &bad).is_err());
    }
}
