use std::f64::consts::PI;

use serde_json::{json, Value};

use normhyp::bundle::{self, AngularOrbit};
use normhyp::cycles::{self, BranchPoint, ContinuationBranch, ContinuationSettings};
use normhyp::lyapunov::{self, ManifoldFrame, TypeNumberEstimate};
use normhyp::ode::IntegratorConfig;
use normhyp::systems::{make_system, make_system_by_name, SystemKind};
use normhyp::torus::{self, FoldReport, SectionCurve};

use crate::output::{Cell, Output};
use crate::{Cli, Command, CurveSource, Ex1Cmd, Ex2Cmd, Ex3Cmd, LyapunovCmd, RunError};

type Res = Result<(), RunError>;

pub fn run(cli: &Cli, out: &mut Output) -> Res {
    let cfg = IntegratorConfig::with_tolerances(cli.rtol, cli.atol);
    cfg.validate()?;
    match &cli.command {
        Command::Ex1(Ex1Cmd::TypeNumbers(a)) => ex1_type_numbers(a, &cfg, out),
        Command::Ex2(Ex2Cmd::Equilibria(a)) => ex2_equilibria(a.c, out),
        Command::Ex2(Ex2Cmd::Branch(a)) => ex2_pipeline(a, &cfg, out, false),
        Command::Ex2(Ex2Cmd::Bifurcations(a)) => ex2_pipeline(a, &cfg, out, true),
        Command::Ex3(Ex3Cmd::Sweep(a)) => ex3_sweep(a, &cfg, out),
        Command::Ex3(Ex3Cmd::ImageL(a)) => ex3_image_l(a, &cfg, out),
        Command::Ex3(Ex3Cmd::Fold(a)) => ex3_fold(a, &cfg, out),
        Command::Ex3(Ex3Cmd::BetaC(a)) => ex3_beta_c(a, &cfg, out),
        Command::Ex3(Ex3Cmd::BundleFrame(a)) => ex3_bundle_frame(a, &cfg, out),
        Command::Lyapunov(LyapunovCmd::Estimate(a)) => lyapunov_estimate(a, &cfg, out),
    }
}

fn type_number_rows(est: &TypeNumberEstimate) -> Vec<Vec<Cell>> {
    est.times
        .iter()
        .zip(&est.nu)
        .zip(&est.sigma)
        .map(|((&t, &nu), &s)| vec![t.into(), nu.into(), s.into()])
        .collect()
}

fn type_number_summary(est: &TypeNumberEstimate) -> Value {
    json!({
        "point": est.point,
        "nu_tail": est.nu_tail,
        "sigma_tail": est.sigma_tail,
        "normally_hyperbolic": est.normally_hyperbolic(),
        "tangency_residual": est.tangency_residual,
    })
}

/// Multiples of `period` up to `tmax`, with 1% of a period of slack so that
/// a rounded `tmax` (62.8 for 20π) still includes its endpoint.
fn period_grid(period: f64, tmax: f64) -> Vec<f64> {
    let count = ((tmax / period) + 0.01).floor() as usize;
    (1..=count).map(|k| k as f64 * period).collect()
}

fn ex1_type_numbers(a: &crate::Ex1TypeNumbers, cfg: &IntegratorConfig, out: &mut Output) -> Res {
    let sys = make_system(SystemKind::Example1, a.beta)?;
    let grid = match a.tmax {
        None => lyapunov::period_grid_ex1(a.beta, 10),
        Some(tmax) => {
            let period = lyapunov::period_grid_ex1(a.beta, 1)[0];
            period_grid(period, tmax)
        }
    };
    if grid.is_empty() {
        return Err(RunError::Usage("tmax is shorter than one grid period".into()));
    }
    let est = lyapunov::estimate_type_numbers(&sys, &ManifoldFrame::CircleEx1, &[0.0, a.theta], &grid, cfg)?;
    out.table("type_numbers", &["t", "nu_t", "sigma_t"], &type_number_rows(&est))?;
    let mut summary = type_number_summary(&est);
    summary["beta"] = json!(a.beta);
    summary["theta"] = json!(a.theta);
    out.json_value("summary.json", &summary)?;
    Ok(())
}

fn lyapunov_estimate(a: &crate::LyapunovEstimate, cfg: &IntegratorConfig, out: &mut Output) -> Res {
    let sys = make_system_by_name(&a.system, a.param)?;
    let frame = ManifoldFrame::parse(&a.manifold)?;
    let grid = match &a.grid {
        Some(g) => g.clone(),
        None => (1..=a.count).map(|k| k as f64 * a.dt).collect(),
    };
    let est = lyapunov::estimate_type_numbers(&sys, &frame, &a.point, &grid, cfg)?;
    out.table("type_numbers", &["t", "nu_t", "sigma_t"], &type_number_rows(&est))?;
    let mut summary = type_number_summary(&est);
    summary["system"] = json!(a.system);
    summary["param"] = json!(a.param);
    summary["manifold"] = json!(frame.name());
    out.json_value("summary.json", &summary)?;
    Ok(())
}

fn ex2_equilibria(c: f64, out: &mut Output) -> Res {
    let sys = make_system(SystemKind::Example2, c)?;
    let eqs = cycles::find_equilibria(&sys, c, &sys.domain)?;
    let rows: Vec<Vec<Cell>> = eqs
        .iter()
        .map(|e| {
            let [(r1, i1), (r2, i2)] = e.eigenvalues;
            vec![
                e.state[0].into(),
                e.state[1].into(),
                e.c.into(),
                e.kind.name().into(),
                r1.into(),
                i1.into(),
                r2.into(),
                i2.into(),
                e.residual.into(),
            ]
        })
        .collect();
    out.table(
        "equilibria",
        &["x", "y", "c", "kind", "eig1_re", "eig1_im", "eig2_re", "eig2_im", "residual"],
        &rows,
    )?;
    Ok(())
}

const BRANCH_COLUMNS: [&str; 9] = ["arclength", "c", "anchor_x", "anchor_y", "T", "m", "lambda", "stability", "event"];

fn branch_row(p: &BranchPoint, arclength: f64) -> Vec<Cell> {
    let c = &p.cycle;
    vec![
        arclength.into(),
        c.c.into(),
        c.anchor[0].into(),
        c.anchor[1].into(),
        c.period.into(),
        c.multiplier.into(),
        c.lambda.into(),
        c.stability.name().into(),
        p.event.map_or(Cell::Empty, |e| e.name().into()),
    ]
}

fn branch_rows(b: &ContinuationBranch) -> Vec<Vec<Cell>> {
    b.points.iter().map(|p| branch_row(p, p.arclength)).collect()
}

fn branch_summary(b: &ContinuationBranch) -> Value {
    json!({
        "points": b.points.len(),
        "termination": b.termination.name(),
        "diagnostic": b.diagnostic,
        "c_range": [
            b.points.iter().map(|p| p.cycle.c).fold(f64::INFINITY, f64::min),
            b.points.iter().map(|p| p.cycle.c).fold(f64::NEG_INFINITY, f64::max),
        ],
    })
}

fn ex2_pipeline(a: &crate::Ex2Continuation, cfg: &IntegratorConfig, out: &mut Output, bifurcations: bool) -> Res {
    let settings = ContinuationSettings {
        max_step: a.max_step,
        max_points: a.max_points,
        saddle_distance_min: a.saddle_distance_min,
        ..ContinuationSettings::default()
    };
    let r = cycles::analyze_example2(&settings, cfg)?;

    // the large cycle: fold-ward half reversed with negated arclength, then
    // the homoclinic-ward half without its duplicated start point
    let mut large: Vec<Vec<Cell>> = r
        .fold_branch
        .points
        .iter()
        .rev()
        .map(|p| branch_row(p, -p.arclength))
        .collect();
    large.extend(r.homoclinic_branch.points.iter().skip(1).map(|p| branch_row(p, p.arclength)));
    out.table("branch_gamma3", &BRANCH_COLUMNS, &large)?;
    out.table("branch_gamma5", &BRANCH_COLUMNS, &branch_rows(&r.small_branch))?;

    let branches = json!({
        "gamma3_fold_side": branch_summary(&r.fold_branch),
        "gamma3_homoclinic_side": branch_summary(&r.homoclinic_branch),
        "gamma5": branch_summary(&r.small_branch),
    });
    if !bifurcations {
        out.json_value("branch_summary.json", &branches)?;
        return Ok(());
    }
    let bound = (-0.4f64).exp();
    let target = (-0.5 - r.c2_fit.c2).exp();
    let summary = json!({
        "c1": r.c1.c,
        "c2": r.c2_fit.c2,
        "c3": r.c3.c,
        "c1_fold": { "s": r.c1.s, "multiplier": r.c1.multiplier, "c_width": r.c1.c_width },
        "c3_fold": { "s": r.c3.s, "multiplier": r.c3.multiplier, "c_width": r.c3.c_width },
        "c2_fit": {
            "a": r.c2_fit.a,
            "b": r.c2_fit.b,
            "residual": r.c2_fit.residual,
            "points": r.c2_fit.points,
            "low_confidence": r.c2_fit.low_confidence,
        },
        "c2_splitting": r.c2_splitting,
        "ordered": r.c1.c < r.c2_fit.c2 && r.c2_fit.c2 < r.c3.c,
        "gaps": [r.c2_fit.c2 - r.c1.c, r.c3.c - r.c2_fit.c2],
        "floquet": {
            "lambda_max": r.gamma3_lambda_max,
            "lambda_last": r.gamma3_lambda_last,
            "bound": bound,
            "limit": target,
            "below_bound": r.gamma3_lambda_max < bound,
            "last_within_0.02": (r.gamma3_lambda_last - target).abs() <= 0.02,
            "last_saddle_distance": r.homoclinic_branch.points.last().map(|p| p.cycle.saddle_distance),
            "last_period": r.homoclinic_branch.points.last().map(|p| p.cycle.period),
        },
        "branches": branches,
    });
    out.json_value("bifurcations.json", &summary)?;
    Ok(())
}

const CURVE_COLUMNS: [&str; 6] = ["s", "a", "theta_unwrapped", "zeta", "beta", "provenance"];

fn curve_rows(c: &SectionCurve) -> Vec<Vec<Cell>> {
    c.samples
        .iter()
        .map(|p| {
            vec![
                p.s.into(),
                p.a.into(),
                p.theta.into(),
                c.zeta.into(),
                c.beta.into(),
                c.provenance.name().into(),
            ]
        })
        .collect()
}

fn fold_json(r: &FoldReport) -> Value {
    json!({
        "fold_present": r.fold_present,
        "sign_changes": r.sign_changes,
        "min_dtheta_ds": r.min_dtheta_ds,
        "fold_points": r.fold_points.iter().map(|p| json!({"s": p.s, "a": p.a, "theta": p.theta})).collect::<Vec<_>>(),
    })
}

fn window_around_pi(half: f64) -> Option<(f64, f64)> {
    (half > 0.0).then(|| (PI - half, PI + half))
}

fn curve_json(c: &SectionCurve, fold: &FoldReport) -> Value {
    json!({
        "zeta": c.zeta,
        "zeta_over_pi": c.zeta / PI,
        "samples": c.samples.len(),
        "failures": c.failures.iter().map(|f| json!({"s": f.s, "message": f.message})).collect::<Vec<_>>(),
        "fold": fold_json(fold),
    })
}

fn zetas(zeta_pi: &[f64]) -> Vec<f64> {
    zeta_pi.iter().map(|z| z * PI).collect()
}

fn ex3_sweep(a: &crate::Ex3Sweep, cfg: &IntegratorConfig, out: &mut Output) -> Res {
    let curves = torus::sweep_invariant_set(a.beta, a.zeta0, &zetas(&a.zeta_pi), a.samples, cfg)?;
    let mut items = Vec::new();
    for (k, c) in curves.iter().enumerate() {
        out.table(&format!("sweep_z{k:02}"), &CURVE_COLUMNS, &curve_rows(c))?;
        let fold = torus::detect_fold(c, None, cfg)?;
        let mut j = curve_json(c, &fold);
        j["lemma_violation"] = if c.zeta <= PI / 2.0 {
            json!(torus::check_lemma_bound(std::slice::from_ref(c)))
        } else {
            Value::Null
        };
        j["winding_defect"] = json!(c.winding_defect(cfg)?);
        items.push(j);
    }
    let lemma: Vec<SectionCurve> = curves.iter().filter(|c| c.zeta <= PI / 2.0).cloned().collect();
    let summary = json!({
        "beta": a.beta,
        "zeta0": a.zeta0,
        "lemma_violation": (!lemma.is_empty()).then(|| torus::check_lemma_bound(&lemma)),
        "curves": items,
    });
    out.json_value("sweep.json", &summary)?;
    Ok(())
}

fn ex3_image_l(a: &crate::Ex3ImageL, cfg: &IntegratorConfig, out: &mut Output) -> Res {
    let curves = torus::image_of_l(a.beta, &zetas(&a.zeta_pi), a.samples, cfg)?;
    let mut items = Vec::new();
    for (k, c) in curves.iter().enumerate() {
        let side = if k % 2 == 0 { "upper" } else { "lower" };
        out.table(&format!("image_l_z{:02}_{side}", k / 2), &CURVE_COLUMNS, &curve_rows(c))?;
        let fold = torus::detect_fold(c, window_around_pi(1.0), cfg)?;
        let mut j = curve_json(c, &fold);
        j["boundary"] = json!(side);
        items.push(j);
    }
    out.json_value("image_l.json", &json!({ "beta": a.beta, "curves": items }))?;
    Ok(())
}

fn ex3_fold(a: &crate::Ex3Fold, cfg: &IntegratorConfig, out: &mut Output) -> Res {
    let targets = zetas(&a.zeta_pi);
    let curves = match a.source {
        CurveSource::LImage => torus::image_of_l(a.beta, &targets, a.samples, cfg)?,
        CurveSource::Sweep => torus::sweep_invariant_set(a.beta, torus::DEFAULT_ZETA0, &targets, a.samples, cfg)?,
    };
    let window = window_around_pi(a.window);
    let mut items = Vec::new();
    for c in &curves {
        let fold = torus::detect_fold(c, window, cfg)?;
        items.push(curve_json(c, &fold));
    }
    let mut summary = json!({
        "beta": a.beta,
        "source": a.source,
        "window": window,
        "fold_present": items.iter().any(|j| j["fold"]["fold_present"] == json!(true)),
        "curves": items,
    });
    if a.scan_onset {
        let grid: Vec<f64> = (500..=999).map(|k| k as f64 * 1e-3 * PI).collect();
        let onset = torus::fold_onset_zeta(a.beta, &grid, a.samples, window, cfg)?;
        summary["onset_zeta_over_pi"] = json!(onset.map(|z| z / PI));
    }
    out.json_value("fold.json", &summary)?;
    Ok(())
}

fn orbit_rows(o: &AngularOrbit) -> Vec<Vec<Cell>> {
    o.samples.iter().map(|&(z, al)| vec![o.beta.into(), z.into(), al.into()]).collect()
}

const ORBIT_COLUMNS: [&str; 3] = ["beta", "zeta", "alpha_unwrapped"];

fn orbit_json(o: &AngularOrbit) -> Value {
    json!({
        "beta": o.beta,
        "w_alpha": o.w_alpha,
        "w_zeta": o.w_zeta,
        "terminal_alpha": o.terminal_alpha,
        "terminal_class": o.class.name(),
        "seed_correction": o.seed_correction,
    })
}

fn ex3_beta_c(a: &crate::Ex3BetaC, cfg: &IntegratorConfig, out: &mut Output) -> Res {
    let crit = bundle::bisect_beta_c(a.lo, a.hi, a.tol, cfg)?;
    let het = bundle::heteroclinic_limit(&crit, cfg)?;
    let lo = bundle::unstable_branch_orbit(crit.lo, cfg)?;
    let hi = bundle::unstable_branch_orbit(crit.hi, cfg)?;
    out.table("orbit_lo", &ORBIT_COLUMNS, &orbit_rows(&lo))?;
    out.table("orbit_hi", &ORBIT_COLUMNS, &orbit_rows(&hi))?;
    let mut summary = json!({
        "bracket": [crit.lo, crit.hi],
        "beta_c": crit.estimate,
        "w_lo": crit.w_lo,
        "w_hi": crit.w_hi,
        "evaluations": crit.evaluations,
        "orbit_lo": orbit_json(&lo),
        "orbit_hi": orbit_json(&hi),
        "heteroclinic": {
            "zeta_split": het.zeta_split,
            "alpha": het.alpha,
            "distance_to_3pi_4": het.distance_to_saddle,
        },
    });
    if a.torus_check {
        let (flo, fhi) = torus::fold_onset_beta(a.lo, a.hi, a.tol, torus::ZETA_MAX, 512, cfg)?;
        summary["torus_fold_bracket"] = json!([flo, fhi]);
    }
    out.json_value("beta_c.json", &summary)?;
    Ok(())
}

fn ex3_bundle_frame(a: &crate::Ex3BundleFrame, cfg: &IntegratorConfig, out: &mut Output) -> Res {
    if a.points == 0 {
        return Err(RunError::Usage("points must be positive".into()));
    }
    let grid: Vec<f64> = (0..a.points).map(|k| PI * (k as f64 + 0.5) / a.points as f64).collect();
    let orbit = bundle::unstable_branch_orbit(a.beta, cfg)?;
    let frame = bundle::frame_from_orbit(&orbit, &grid)?;
    let rows: Vec<Vec<Cell>> = frame
        .zetas
        .iter()
        .zip(&frame.alphas)
        .zip(&frame.vectors)
        .map(|((&z, &al), v)| vec![a.beta.into(), z.into(), al.into(), v[0].into(), v[1].into()])
        .collect();
    out.table("bundle_frame", &["beta", "zeta", "alpha", "v_a", "v_theta"], &rows)?;
    out.table("orbit", &ORBIT_COLUMNS, &orbit_rows(&orbit))?;
    out.json_value("bundle.json", &orbit_json(&orbit))?;
    Ok(())
}
