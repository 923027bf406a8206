//! Generalized Lyapunov-type numbers of an invariant manifold.
//!
//! For a point `p` on an invariant manifold `M` with the orthogonal splitting
//! `TRⁿ|_M = TM ⊕ N`, two linear operators are built from the linearized flow:
//!
//! * `A_t(p) = Dφ^{−t}(p)` restricted to `T_pM`, landing in `T_{φ^{−t}(p)}M`;
//! * `B_t(p) = Π_p Dφ^t(φ^{−t}(p))` restricted to `N_{φ^{−t}(p)}`, projected
//!   orthogonally onto `N_p`.
//!
//! The numbers are `ν(p) = lim sup ‖B_t‖^{1/t}` and
//! `σ(p) = lim sup log‖A_t‖ / (−log‖B_t‖)`. This module evaluates the
//! finite-time values on a user-supplied grid and summarizes the lim sup by
//! the maximum over the last quarter of the grid. `M` is normally hyperbolic
//! (with `r = 1`) when both summaries are below one at every sampled point.

use std::f64::consts::TAU;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, operator_norm};
use std::ops::ControlFlow;

use crate::ode::{integrate, integrate_variational_with, IntegratorConfig, PhiErrorControl, VariationalOptions, VariationalSolution};
use crate::systems::SystemDef;

/// Membership tolerance for points handed to a frame.
pub const ON_MANIFOLD_TOL: f64 = 1e-10;
/// Relative tangency residual above which a frame is declared non-invariant.
pub const TANGENCY_THRESHOLD: f64 = 1e-4;

/// Orthonormal tangent and normal bases at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBases {
    pub tangent: Vec<Vec<f64>>,
    pub normal: Vec<Vec<f64>>,
}

impl FrameBases {
    pub fn ambient_dim(&self) -> usize {
        self.tangent.len() + self.normal.len()
    }

    /// Largest deviation from orthonormality over all basis pairs.
    pub fn orthonormality_defect(&self) -> f64 {
        let all: Vec<&Vec<f64>> = self.tangent.iter().chain(&self.normal).collect();
        let mut worst = 0.0f64;
        for (i, u) in all.iter().enumerate() {
            for (j, v) in all.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(u, v) - target).abs());
            }
        }
        worst
    }
}

/// Candidate invariant manifolds with analytically known frames.
#[derive(Debug, Clone)]
pub enum ManifoldFrame {
    /// `{a = 0}` in `example1`; tangent `e_θ`, normal `e_a`.
    CircleEx1,
    /// `{a = 0, ζ = 0}` in `example3`; tangent `e_θ`, normal `{e_a, e_ζ}`.
    CircleEx3,
    /// `{a = 0}` in `example3` (the β = 0 torus, tangent to every continued
    /// torus along the circle `ζ = 0`); tangent `{e_ζ, e_θ}`, normal `e_a`.
    TorusEx3AtGamma,
    /// A planar periodic orbit of `system` with the given period: the
    /// tangent is the normalized vector field, the normal its rotation by a
    /// quarter turn. Orbit points are taken from a single period, so
    /// repelling cycles can be followed for many periods.
    PlanarCycle { system: SystemDef, period: f64 },
}

fn unit(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

impl ManifoldFrame {
    pub fn name(&self) -> &'static str {
        match self {
            ManifoldFrame::CircleEx1 => "circle-ex1",
            ManifoldFrame::CircleEx3 => "circle-ex3",
            ManifoldFrame::TorusEx3AtGamma => "torus-ex3-at-gamma",
            ManifoldFrame::PlanarCycle { .. } => "planar-cycle",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "circle-ex1" => Ok(ManifoldFrame::CircleEx1),
            "circle-ex3" => Ok(ManifoldFrame::CircleEx3),
            "torus-ex3-at-gamma" | "torus-ex3-at-Γ" => Ok(ManifoldFrame::TorusEx3AtGamma),
            other => Err(Error::InvalidInput(format!("unknown manifold `{other}`"))),
        }
    }

    fn membership_residual(&self, p: &[f64]) -> f64 {
        match self {
            ManifoldFrame::CircleEx1 | ManifoldFrame::TorusEx3AtGamma => p[0].abs(),
            ManifoldFrame::CircleEx3 => p[0].abs().max(p[1].sin().abs()),
            // cycles are checked by the caller that converged them
            ManifoldFrame::PlanarCycle { .. } => 0.0,
        }
    }

    fn expected_dim(&self) -> usize {
        match self {
            ManifoldFrame::CircleEx1 | ManifoldFrame::PlanarCycle { .. } => 2,
            ManifoldFrame::CircleEx3 | ManifoldFrame::TorusEx3AtGamma => 3,
        }
    }

    /// Frame at a point already known to be on the manifold (no membership
    /// check); used along backward orbits.
    fn bases_unchecked(&self, p: &[f64]) -> Result<FrameBases> {
        Ok(match self {
            ManifoldFrame::CircleEx1 => FrameBases {
                tangent: vec![unit(2, 1)],
                normal: vec![unit(2, 0)],
            },
            ManifoldFrame::CircleEx3 => FrameBases {
                tangent: vec![unit(3, 2)],
                normal: vec![unit(3, 0), unit(3, 1)],
            },
            ManifoldFrame::TorusEx3AtGamma => FrameBases {
                tangent: vec![unit(3, 1), unit(3, 2)],
                normal: vec![unit(3, 0)],
            },
            ManifoldFrame::PlanarCycle { system, .. } => {
                let f = system.rhs(p);
                let n = norm(&f);
                if !(n > 0.0) {
                    return Err(Error::InvalidInput("vector field vanishes on the cycle".into()));
                }
                let t = vec![f[0] / n, f[1] / n];
                FrameBases {
                    normal: vec![vec![-t[1], t[0]]],
                    tangent: vec![t],
                }
            }
        })
    }

    /// Tangent and normal bases at `p`, which must lie on the manifold.
    pub fn bases_at(&self, p: &[f64]) -> Result<FrameBases> {
        if p.len() != self.expected_dim() {
            return Err(Error::InvalidInput(format!(
                "point has dimension {}, manifold `{}` lives in dimension {}",
                p.len(),
                self.name(),
                self.expected_dim()
            )));
        }
        let r = self.membership_residual(p);
        if r > ON_MANIFOLD_TOL {
            return Err(Error::OffManifold {
                manifold: self.name(),
                point: p.to_vec(),
                residual: r,
            });
        }
        self.bases_unchecked(p)
    }
}

/// Tangent and normal bases of `manifold` at `p`.
pub fn frame_for(manifold: &ManifoldFrame, p: &[f64]) -> Result<FrameBases> {
    manifold.bases_at(p)
}

/// `A_t(p)` in tangent coordinates together with the relative size of the
/// image components that leave the tangent space.
#[derive(Debug, Clone)]
pub struct TangentialOperator {
    pub matrix: DMatrix<f64>,
    pub tangency_residual: f64,
}

fn apply(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|k| m[(i, k)] * v[k]).sum()).collect()
}

fn linearized_flow(system: &SystemDef, x0: &[f64], t: f64, cfg: &IntegratorConfig) -> Result<VariationalSolution> {
    let opts = VariationalOptions {
        with_param: false,
        phi_control: PhiErrorControl::Entrywise,
    };
    integrate_variational_with(system, x0, (0.0, t), cfg, opts, |_| ControlFlow::Continue(()))
}

/// Longest stretch of linearized flow integrated in one piece; the full
/// operator is the product of pieces anchored on the backward orbit, so
/// errors in one piece are not amplified along the whole horizon.
const PIECE_MAX: f64 = 1.0;

/// Points `x_i = φ^{−iτ}(p)`, `i = 0..=K`, with `Kτ = t`, and `τ`.
fn backward_orbit(
    system: &SystemDef,
    frame: &ManifoldFrame,
    p: &[f64],
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let k = (t / PIECE_MAX).ceil().max(1.0) as usize;
    let tau = t / k as f64;
    let period = match frame {
        ManifoldFrame::PlanarCycle { period, .. } => {
            if !(*period > 0.0) || !period.is_finite() {
                return Err(Error::InvalidInput(format!("cycle period must be positive, got {period}")));
            }
            Some(*period)
        }
        _ => None,
    };
    let horizon = period.map_or(t, |per| per.min(t));
    let traj = integrate(system, p, (0.0, -horizon), cfg)?;
    let orbit = (0..=k)
        .map(|i| {
            let s = i as f64 * tau;
            let s = period.map_or(s, |per| s.rem_euclid(per)).min(horizon);
            if s == 0.0 {
                p.to_vec()
            } else {
                traj.eval(-s).expect("time inside the backward trajectory")
            }
        })
        .collect();
    Ok((orbit, tau))
}

fn check_horizon(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidInput(format!("time horizon must be positive, got {t}")));
    }
    Ok(())
}

/// Block `⟨w_i, Φ v_j⟩` of a linear map between two bases.
fn block(phi: &DMatrix<f64>, from: &[Vec<f64>], to: &[Vec<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(to.len(), from.len());
    for (j, v) in from.iter().enumerate() {
        let img = apply(phi, v);
        for (i, w) in to.iter().enumerate() {
            out[(i, j)] = dot(w, &img);
        }
    }
    out
}

/// Relative size of the part of `Φ v` (v in `from`) that leaves span(`to`).
fn leakage(phi: &DMatrix<f64>, from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for v in from {
        let img = apply(phi, v);
        let mut inside = vec![0.0; img.len()];
        for w in to {
            let c = dot(w, &img);
            inside.iter_mut().zip(w).for_each(|(s, wi)| *s += c * wi);
        }
        let outside: Vec<f64> = img.iter().zip(&inside).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&outside) / norm(&img).max(f64::MIN_POSITIVE));
    }
    worst
}

/// Computes `A_t(p)`: the backward linearized flow restricted to `T_pM`,
/// expressed in the tangent basis at `φ^{−t}(p)`.
///
/// The tangent bundle is invariant, so the operator is the product of the
/// tangent blocks of short pieces along the backward orbit; projecting after
/// every piece keeps normal expansion from swamping the tangent image.
pub fn operator_a(
    system: &SystemDef,
    frame: &ManifoldFrame,
    p: &[f64],
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<TangentialOperator> {
    check_horizon(t)?;
    let at_p = frame.bases_at(p)?;
    let (orbit, tau) = backward_orbit(system, frame, p, t, cfg)?;
    let k = at_p.tangent.len();
    let mut matrix = DMatrix::identity(k, k);
    let mut residual = 0.0f64;
    let mut from = at_p;
    for w in orbit.windows(2) {
        let phi = linearized_flow(system, &w[0], -tau, cfg)?.final_phi();
        let to = frame.bases_unchecked(&w[1])?;
        residual = residual.max(leakage(&phi, &from.tangent, &to.tangent));
        matrix = block(&phi, &from.tangent, &to.tangent) * matrix;
        from = to;
    }
    if residual > TANGENCY_THRESHOLD {
        return Err(Error::FrameNotInvariant(residual));
    }
    Ok(TangentialOperator {
        matrix,
        tangency_residual: residual,
    })
}

/// Computes `B_t(p)`: the forward linearized flow from `φ^{−t}(p)` to `p`
/// applied to the normal basis at `φ^{−t}(p)` and projected onto `N_p`.
///
/// In the splitting `T ⊕ N` the linearized flow is block triangular (the
/// tangent bundle is invariant), so the projected operator is the product of
/// the normal blocks of the pieces.
pub fn operator_b(
    system: &SystemDef,
    frame: &ManifoldFrame,
    p: &[f64],
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<DMatrix<f64>> {
    check_horizon(t)?;
    let at_p = frame.bases_at(p)?;
    let (orbit, tau) = backward_orbit(system, frame, p, t, cfg)?;
    let m = at_p.normal.len();
    let mut out = DMatrix::identity(m, m);
    let mut from = frame.bases_unchecked(orbit.last().expect("nonempty orbit"))?;
    for i in (1..orbit.len()).rev() {
        let phi = linearized_flow(system, &orbit[i], tau, cfg)?.final_phi();
        let to = if i == 1 { at_p.clone() } else { frame.bases_unchecked(&orbit[i - 1])? };
        out = block(&phi, &from.normal, &to.normal) * out;
        from = to;
    }
    Ok(out)
}

/// Finite-time values of ν and σ on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeNumberEstimate {
    pub point: Vec<f64>,
    pub times: Vec<f64>,
    pub norm_a: Vec<f64>,
    pub norm_b: Vec<f64>,
    pub nu: Vec<f64>,
    /// `None` where `‖B_t‖ ≥ 1`, i.e. the normal direction does not contract.
    pub sigma: Vec<Option<f64>>,
    pub tangency_residual: f64,
    pub nu_tail: f64,
    pub sigma_tail: Option<f64>,
}

impl TypeNumberEstimate {
    /// `ν < 1` and `σ < 1` on the tail of the grid.
    pub fn normally_hyperbolic(&self) -> bool {
        self.nu_tail < 1.0 && self.sigma_tail.is_some_and(|s| s < 1.0)
    }
}

/// Index of the first grid point in the tail quarter.
pub fn tail_start(n: usize) -> usize {
    n - n.div_ceil(4).max(1)
}

/// Evaluates `ν_t = ‖B_t‖^{1/t}` and `σ_t = log‖A_t‖ / (−log‖B_t‖)` at each
/// grid time and summarizes the lim sup by the tail maximum.
pub fn estimate_type_numbers(
    system: &SystemDef,
    frame: &ManifoldFrame,
    p: &[f64],
    t_grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<TypeNumberEstimate> {
    if t_grid.is_empty() {
        return Err(Error::InvalidInput("time grid is empty".into()));
    }
    if t_grid.iter().any(|t| !(*t > 0.0)) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("time grid must be positive and increasing".into()));
    }
    let mut est = TypeNumberEstimate {
        point: p.to_vec(),
        times: t_grid.to_vec(),
        norm_a: Vec::with_capacity(t_grid.len()),
        norm_b: Vec::with_capacity(t_grid.len()),
        nu: Vec::with_capacity(t_grid.len()),
        sigma: Vec::with_capacity(t_grid.len()),
        tangency_residual: 0.0,
        nu_tail: 0.0,
        sigma_tail: None,
    };
    for &t in t_grid {
        let a = operator_a(system, frame, p, t, cfg)?;
        let b = operator_b(system, frame, p, t, cfg)?;
        let na = operator_norm(&a.matrix)?;
        let nb = operator_norm(&b)?;
        est.tangency_residual = est.tangency_residual.max(a.tangency_residual);
        est.nu.push(nb.powf(1.0 / t));
        est.sigma.push((nb < 1.0).then(|| na.ln() / (-nb.ln())));
        est.norm_a.push(na);
        est.norm_b.push(nb);
    }
    let start = tail_start(t_grid.len());
    est.nu_tail = est.nu[start..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    est.sigma_tail = est.sigma[start..].iter().flatten().copied().reduce(f64::max);
    Ok(est)
}

/// Result of sampling a manifold at several points.
#[derive(Debug, Clone)]
pub struct ManifoldAssessment {
    pub estimates: Vec<TypeNumberEstimate>,
}

impl ManifoldAssessment {
    pub fn normally_hyperbolic(&self) -> bool {
        !self.estimates.is_empty() && self.estimates.iter().all(TypeNumberEstimate::normally_hyperbolic)
    }

    pub fn max_nu(&self) -> f64 {
        self.estimates.iter().map(|e| e.nu_tail).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn assess_manifold(
    system: &SystemDef,
    frame: &ManifoldFrame,
    points: &[Vec<f64>],
    t_grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<ManifoldAssessment> {
    let estimates = points
        .iter()
        .map(|p| estimate_type_numbers(system, frame, p, t_grid, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(ManifoldAssessment { estimates })
}

/// Grid `{k·T}` for `k = 1..=count`, where `T = 2π/|β|` is the period of the
/// `example1` circle (or `T = 1` when `β = 0`).
pub fn period_grid_ex1(beta: f64, count: usize) -> Vec<f64> {
    let period = if beta == 0.0 { 1.0 } else { TAU / beta.abs() };
    (1..=count).map(|k| k as f64 * period).collect()
}
