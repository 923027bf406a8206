//! The four vector fields studied by this crate.
//!
//! * `example1`: `ȧ = −(1/2 + sin θ) a`, `θ̇ = β` on `(a, θ)`.
//! * `example2`: `ẋ = −x/2 + y`, `ẏ = x − x³ + y (y²/2 − (x²/2 − x⁴/4) − c)`.
//! * `example3`: `ȧ = −a + β² sin²ζ sin θ`, `ζ̇ = sin²ζ`, `θ̇ = a`.
//! * `bundle-angle`: `α̇ = −cos α sin α − sin²α − β² sin²ζ cos²α`, `ζ̇ = sin²ζ`.
//!
//! Every system carries a hand-derived Jacobian and the derivative of the
//! right-hand side with respect to its parameter. Periodic coordinates are
//! never wrapped during integration; use [`SystemDef::wrap`] on output.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Right-hand side `f(x, p)` written into `out`.
pub type RhsFn = fn(x: &[f64], p: f64, out: &mut [f64]);
/// Jacobian `∂f/∂x (x, p)` written row-major into `out` (length `dim²`).
pub type JacobianFn = fn(x: &[f64], p: f64, out: &mut [f64]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemKind {
    Example1,
    Example2,
    Example3,
    BundleAngle,
}

impl SystemKind {
    pub const ALL: [SystemKind; 4] = [
        SystemKind::Example1,
        SystemKind::Example2,
        SystemKind::Example3,
        SystemKind::BundleAngle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Example1 => "example1",
            SystemKind::Example2 => "example2",
            SystemKind::Example3 => "example3",
            SystemKind::BundleAngle => "bundle-angle",
        }
    }

    /// Admissible parameter interval (inclusive).
    pub fn param_range(self) -> (f64, f64) {
        match self {
            SystemKind::Example1 => (f64::NEG_INFINITY, f64::INFINITY),
            SystemKind::Example2 => (-0.1, 0.0),
            SystemKind::Example3 | SystemKind::BundleAngle => (0.0, 1.0),
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownSystem(s.to_string()))
    }
}

/// Per-coordinate bounds. `None` marks an unbounded or periodic coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub bounds: Vec<Option<(f64, f64)>>,
}

impl DomainBox {
    pub fn new(bounds: Vec<Option<(f64, f64)>>) -> Result<Self> {
        for (i, b) in bounds.iter().enumerate() {
            if let Some((lo, hi)) = b {
                if !(lo < hi) {
                    return Err(Error::InvalidInput(format!(
                        "domain bound {i}: lower {lo} must be below upper {hi}"
                    )));
                }
            }
        }
        Ok(Self { bounds })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.bounds.iter().zip(x).all(|(b, &v)| match b {
            Some((lo, hi)) => v >= *lo && v <= *hi,
            None => v.is_finite(),
        })
    }
}

/// A parametrized vector field together with its analytic derivatives.
///
/// Values are immutable once built and are `Send + Sync`.
#[derive(Clone)]
pub struct SystemDef {
    pub name: &'static str,
    pub kind: Option<SystemKind>,
    pub dim: usize,
    pub param: f64,
    /// `(index, period)` for each angular coordinate.
    pub periodic_coords: Vec<(usize, f64)>,
    pub domain: DomainBox,
    rhs: RhsFn,
    jacobian: JacobianFn,
    dparam: RhsFn,
    /// `+1` for the forward flow, `−1` for the time-reversed field.
    time_sign: f64,
}

impl fmt::Debug for SystemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemDef")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("param", &self.param)
            .field("reversed", &(self.time_sign < 0.0))
            .finish()
    }
}

impl SystemDef {
    /// Builds a user-defined system. The Jacobian and parameter derivative
    /// are trusted as given; run them through a finite-difference check
    /// before relying on them.
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        name: &'static str,
        dim: usize,
        param: f64,
        rhs: RhsFn,
        jacobian: JacobianFn,
        dparam: RhsFn,
        periodic_coords: Vec<(usize, f64)>,
        domain: DomainBox,
    ) -> Self {
        Self {
            name,
            kind: None,
            dim,
            param,
            periodic_coords,
            domain,
            rhs,
            jacobian,
            dparam,
            time_sign: 1.0,
        }
    }

    /// The same field with time reversed, `ẋ = −f(x)`.
    pub fn reversed(&self) -> Self {
        Self {
            time_sign: -self.time_sign,
            ..self.clone()
        }
    }

    pub fn is_reversed(&self) -> bool {
        self.time_sign < 0.0
    }

    pub fn with_param(&self, param: f64) -> Result<Self> {
        match self.kind {
            Some(kind) => {
                let sys = make_system(kind, param)?;
                Ok(if self.is_reversed() { sys.reversed() } else { sys })
            }
            None => Ok(Self { param, ..self.clone() }),
        }
    }

    pub fn rhs_into(&self, x: &[f64], out: &mut [f64]) {
        (self.rhs)(x, self.param, out);
        if self.time_sign < 0.0 {
            out.iter_mut().for_each(|v| *v = -*v);
        }
    }

    pub fn rhs(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.rhs_into(x, &mut out);
        out
    }

    /// Row-major Jacobian into a caller-provided buffer of length `dim²`.
    pub fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        (self.jacobian)(x, self.param, out);
        if self.time_sign < 0.0 {
            out.iter_mut().for_each(|v| *v = -*v);
        }
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.dim * self.dim];
        self.jacobian_into(x, &mut buf);
        DMatrix::from_row_slice(self.dim, self.dim, &buf)
    }

    /// `∂f/∂p` at `x`.
    pub fn param_derivative(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.dparam)(x, self.param, &mut out);
        if self.time_sign < 0.0 {
            out.iter_mut().for_each(|v| *v = -*v);
        }
        out
    }

    pub fn divergence(&self, x: &[f64]) -> f64 {
        let j = self.jacobian(x);
        j.trace()
    }

    /// Wraps periodic coordinates into `[0, period)` for output.
    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for &(i, period) in &self.periodic_coords {
            y[i] = y[i].rem_euclid(period);
        }
        y
    }
}

/// Builds one of the builtin systems at the given parameter.
pub fn make_system(kind: SystemKind, param: f64) -> Result<SystemDef> {
    let (lo, hi) = kind.param_range();
    if !param.is_finite() || param < lo || param > hi {
        return Err(Error::ParamOutOfRange {
            system: kind.name(),
            value: param,
            lo,
            hi,
        });
    }
    let (dim, rhs, jacobian, dparam, periodic_coords, bounds): (
        usize,
        RhsFn,
        JacobianFn,
        RhsFn,
        Vec<(usize, f64)>,
        Vec<Option<(f64, f64)>>,
    ) = match kind {
        SystemKind::Example1 => (2, ex1_rhs, ex1_jac, ex1_dparam, vec![(1, TAU)], vec![None, None]),
        SystemKind::Example2 => (
            2,
            ex2_rhs,
            ex2_jac,
            ex2_dparam,
            vec![],
            vec![Some((-3.0, 3.0)), Some((-3.0, 3.0))],
        ),
        SystemKind::Example3 => (
            3,
            ex3_rhs,
            ex3_jac,
            ex3_dparam,
            vec![(1, PI), (2, TAU)],
            vec![Some((-2.0, 2.0)), None, None],
        ),
        SystemKind::BundleAngle => (
            2,
            bundle_rhs,
            bundle_jac,
            bundle_dparam,
            vec![(0, PI), (1, PI)],
            vec![None, None],
        ),
    };
    Ok(SystemDef {
        name: kind.name(),
        kind: Some(kind),
        dim,
        param,
        periodic_coords,
        domain: DomainBox::new(bounds)?,
        rhs,
        jacobian,
        dparam,
        time_sign: 1.0,
    })
}

/// Parses a system name and builds it.
pub fn make_system_by_name(name: &str, param: f64) -> Result<SystemDef> {
    make_system(name.parse()?, param)
}

// example1: state (a, θ), parameter β

fn ex1_rhs(x: &[f64], beta: f64, out: &mut [f64]) {
    let (a, th) = (x[0], x[1]);
    out[0] = -(0.5 + th.sin()) * a;
    out[1] = beta;
}

fn ex1_jac(x: &[f64], _beta: f64, out: &mut [f64]) {
    let (a, th) = (x[0], x[1]);
    out.copy_from_slice(&[-(0.5 + th.sin()), -a * th.cos(), 0.0, 0.0]);
}

fn ex1_dparam(_x: &[f64], _beta: f64, out: &mut [f64]) {
    out.copy_from_slice(&[0.0, 1.0]);
}

// example2: state (x, y), parameter c

fn ex2_rhs(s: &[f64], c: f64, out: &mut [f64]) {
    let (x, y) = (s[0], s[1]);
    let x2 = x * x;
    out[0] = -0.5 * x + y;
    out[1] = x - x * x2 + y * (0.5 * y * y - (0.5 * x2 - 0.25 * x2 * x2) - c);
}

fn ex2_jac(s: &[f64], c: f64, out: &mut [f64]) {
    let (x, y) = (s[0], s[1]);
    let x2 = x * x;
    out.copy_from_slice(&[
        -0.5,
        1.0,
        1.0 - 3.0 * x2 + y * (x * x2 - x),
        1.5 * y * y - 0.5 * x2 + 0.25 * x2 * x2 - c,
    ]);
}

fn ex2_dparam(s: &[f64], _c: f64, out: &mut [f64]) {
    out.copy_from_slice(&[0.0, -s[1]]);
}

// example3: state (a, ζ, θ), parameter β

fn ex3_rhs(x: &[f64], beta: f64, out: &mut [f64]) {
    let (a, z, th) = (x[0], x[1], x[2]);
    let s2 = z.sin().powi(2);
    out[0] = -a + beta * beta * s2 * th.sin();
    out[1] = s2;
    out[2] = a;
}

fn ex3_jac(x: &[f64], beta: f64, out: &mut [f64]) {
    let (z, th) = (x[1], x[2]);
    let (sz, cz) = z.sin_cos();
    let b2 = beta * beta;
    out.copy_from_slice(&[
        -1.0,
        2.0 * b2 * sz * cz * th.sin(),
        b2 * sz * sz * th.cos(),
        0.0,
        2.0 * sz * cz,
        0.0,
        1.0,
        0.0,
        0.0,
    ]);
}

fn ex3_dparam(x: &[f64], beta: f64, out: &mut [f64]) {
    let (z, th) = (x[1], x[2]);
    out.copy_from_slice(&[2.0 * beta * z.sin().powi(2) * th.sin(), 0.0, 0.0]);
}

// bundle-angle: state (α, ζ), parameter β

fn bundle_rhs(x: &[f64], beta: f64, out: &mut [f64]) {
    let (al, z) = (x[0], x[1]);
    let (sa, ca) = al.sin_cos();
    let s2 = z.sin().powi(2);
    out[0] = -ca * sa - sa * sa - beta * beta * s2 * ca * ca;
    out[1] = s2;
}

fn bundle_jac(x: &[f64], beta: f64, out: &mut [f64]) {
    let (al, z) = (x[0], x[1]);
    let (s2a, c2a) = (2.0 * al).sin_cos();
    let b2 = beta * beta;
    let sz2 = z.sin().powi(2);
    let s2z = (2.0 * z).sin();
    out.copy_from_slice(&[
        -c2a - s2a + b2 * sz2 * s2a,
        -b2 * s2z * al.cos().powi(2),
        0.0,
        s2z,
    ]);
}

fn bundle_dparam(x: &[f64], beta: f64, out: &mut [f64]) {
    let (al, z) = (x[0], x[1]);
    out.copy_from_slice(&[-2.0 * beta * z.sin().powi(2) * al.cos().powi(2), 0.0]);
}

/// Exact fundamental matrix of `example3` along its circle of equilibria
/// `{a = 0, ζ = 0}`, valid for every β (the β-terms vanish at ζ = 0).
pub fn closed_form_variational_ex3(t: f64) -> DMatrix<f64> {
    let e = (-t).exp();
    DMatrix::from_row_slice(3, 3, &[e, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0 - e, 0.0, 1.0])
}

/// `‖B_t(p)‖` for `example1` at `p = (0, θ)`: the factor by which the forward
/// flow from `φ^{−t}(p)` to `p` scales the normal direction.
pub fn closed_form_normal_factor_ex1(theta: f64, beta: f64, t: f64) -> f64 {
    if beta == 0.0 {
        (-(0.5 + theta.sin()) * t).exp()
    } else {
        (-t / 2.0 + (theta.cos() - (theta - beta * t).cos()) / beta).exp()
    }
}

/// Right interior equilibrium of `example2`: `y = x/2` with
/// `x² = (19 − √(233 + 64c)) / 4`.
pub fn ex2_interior_equilibrium(c: f64) -> [f64; 2] {
    let x = ((19.0 - (233.0 + 64.0 * c).sqrt()) / 4.0).sqrt();
    [x, x / 2.0]
}

/// Representative angle used by docs and the CLI for `example1`'s
/// not-normally-hyperbolic point.
pub const EX1_WORST_THETA: f64 = 3.0 * FRAC_PI_2;
