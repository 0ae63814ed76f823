use navier_bubble::ball_green::BallGreen;
use navier_bubble::bubble::{Bubble, Dimension};
use navier_bubble::constants::{closed_form_constants, quadrature_constants, relative_deltas, UniversalConstants};
use navier_bubble::expansions::{self, FunctionalContext};
use navier_bubble::radial_pde::{self, BranchOptions, BranchPoint, RadialError, SolverOptions};
use navier_bubble::reduced::{self, BalanceForm, Extremum, Problem, RateOptions, RateOutcome, ScanGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{
    Command, ConstantsArgs, CriteriaArgs, ExpandArgs, ExtremumArg, FormArg, GreenArgs, LandscapeArgs, MethodArg,
    ProblemArg, ReduceArgs, RunConfig, SolveRadialArgs,
};
use crate::report::{indexed, Cell, Table};

/// Quadrature tolerance for the constants cross-check unless overridden.
const CONSTANTS_TOL: f64 = 1e-11;
const BUBBLE_SAMPLES: usize = 16;
const BUBBLE_STEP: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum RunError {
    /// Input the parser accepted but the owning module rejects.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

fn domain<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Domain(e.to_string())
}

/// Result of one subcommand.
pub struct Outcome {
    pub payload: Value,
    pub tables: Vec<Table>,
    pub warnings: Vec<String>,
    /// Set when the run finished with a domain diagnostic (exit code 1).
    pub diagnostic: Option<String>,
}

impl Outcome {
    fn ok(payload: Value, tables: Vec<Table>) -> Self {
        Outcome { payload, tables, warnings: Vec::new(), diagnostic: None }
    }
}

pub fn run(cfg: &RunConfig) -> Result<Outcome, RunError> {
    match &cfg.command {
        Command::Constants(a) => constants(cfg, a),
        Command::Green(a) => green(a),
        Command::Expand(a) => expand(cfg, a),
        Command::Reduce(a) => reduce(cfg, a),
        Command::Landscape(a) => landscape(cfg, a),
        Command::Criteria(a) => criteria(cfg, a),
        Command::SolveRadial(a) => solve_radial(a),
    }
}

fn context(cfg: &RunConfig, dim: Dimension, k: &navier_bubble::kfield::KField) -> Result<FunctionalContext, RunError> {
    let ctx = FunctionalContext::new(dim, k.clone());
    match cfg.tol {
        Some(tol) => ctx.with_tol(tol).map_err(domain),
        None => Ok(ctx),
    }
}

fn point(p: &crate::config::Point, dim: Dimension) -> Result<Vec<f64>, RunError> {
    p.resolve(dim).map_err(RunError::Usage)
}

fn constants_row(c: &UniversalConstants) -> Vec<Cell> {
    vec![c.dim.n().into(), format!("{:?}", c.method).to_lowercase().into(), c.c0.into(), c.sn.into(), c.c1.into(), c.c2.into(), c.c3.into()]
}

fn constants(cfg: &RunConfig, a: &ConstantsArgs) -> Result<Outcome, RunError> {
    let tol = cfg.tol.unwrap_or(CONSTANTS_TOL);
    let closed = closed_form_constants(a.dim);
    let quad = quadrature_constants(a.dim, tol).map_err(domain)?;
    let (primary, other) = match a.method {
        MethodArg::Closed => (closed, quad),
        MethodArg::Quad => (quad, closed),
    };
    let [sn, c1, c2, c3] = relative_deltas(&primary, &other);
    let n = a.dim.n();
    let bubble = Bubble::new(a.dim, vec![0.0; n], 1.0).map_err(domain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<Vec<f64>> = (0..BUBBLE_SAMPLES)
        .map(|_| {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let radius: f64 = 0.9 * rng.gen::<f64>();
            v.iter().map(|x| x * radius / norm).collect()
        })
        .collect();
    let residual = bubble.verify_entire_equation(&samples, BUBBLE_STEP).map_err(domain)?;
    let payload = json!({
        "formula": "master-integral",
        "constants": primary,
        "cross_check": {
            "formula": "radial-quadrature",
            "other": other,
            "relative_deltas": { "sn": sn, "c1": c1, "c2": c2, "c3": c3 },
            "tol": tol,
        },
        "bubble_equation": {
            "formula": "stencil-bilaplacian",
            "samples": BUBBLE_SAMPLES,
            "step": BUBBLE_STEP,
            "seed": cfg.seed,
            "max_abs_residual": residual,
        },
    });
    let mut table = Table::new(["dim", "method", "c0", "sn", "c1", "c2", "c3"]);
    table.push(constants_row(&primary));
    table.push(constants_row(&other));
    Ok(Outcome::ok(payload, vec![table]))
}

fn green(a: &GreenArgs) -> Result<Outcome, RunError> {
    let x = point(&a.x, a.dim)?;
    let y = point(&a.y, a.dim)?;
    let g = BallGreen::new(a.dim);
    let gv = g.green(&x, &y).map_err(domain)?;
    let h = g.regular_part(&x, &y).map_err(domain)?;
    let grad = g.grad_x_regular(&x, &y).map_err(domain)?;
    let payload = json!({ "formula": "spherical-harmonic-series", "x": x, "y": y, "g": gv, "h": h, "grad_h": grad });
    let mut header = vec!["g".to_string(), "h".to_string()];
    header.extend(indexed("grad_h", a.dim.n()));
    let mut table = Table::new(header);
    let mut row: Vec<Cell> = vec![gv.into(), h.into()];
    row.extend(grad.iter().map(|v| Cell::from(*v)));
    table.push(row);
    Ok(Outcome::ok(payload, vec![table]))
}

fn expand(cfg: &RunConfig, a: &ExpandArgs) -> Result<Outcome, RunError> {
    let x = point(&a.x, a.dim)?;
    if a.lambda_sweep.0.iter().any(|l| !(*l > 0.0)) {
        return Err(RunError::Usage("rates in --lambda-sweep must be positive".into()));
    }
    let ctx = context(cfg, a.dim, &a.k)?;
    let reports = expansions::sweep(&ctx, a.formula, &x, &a.lambda_sweep.0, a.eps).map_err(domain)?;
    let warnings = reports
        .iter()
        .filter(|r| r.flagged)
        .map(|r| format!("lambda-d-small: λd = {} at λ = {} (outside the asymptotic regime)", r.lambda_d, r.lambda))
        .collect();
    let n = a.dim.n();
    let mut header: Vec<String> = ["formula", "n", "k", "lambda", "eps"].iter().map(|s| s.to_string()).collect();
    header.extend(indexed("x", n));
    header.extend(
        ["direct", "expansion", "residual", "claimed_next_order", "fitted_slope", "envelope", "step_change", "lambda_d", "flagged"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut table = Table::new(header);
    for r in &reports {
        let mut row: Vec<Cell> = vec![r.formula.to_string().into(), r.n.into(), r.k.clone().into(), r.lambda.into(), r.eps.into()];
        row.extend(r.x.iter().map(|v| Cell::from(*v)));
        row.extend([
            r.direct.into(),
            r.expansion.into(),
            r.residual.into(),
            r.claimed_next_order.into(),
            r.fitted_slope.into(),
            r.envelope.into(),
            r.step_change.into(),
            r.lambda_d.into(),
            r.flagged.into(),
        ]);
        table.push(row);
    }
    let payload = json!({ "formula": a.formula.to_string(), "reports": reports });
    Ok(Outcome { payload, tables: vec![table], warnings, diagnostic: None })
}

fn problem(p: ProblemArg) -> Problem {
    match p {
        ProblemArg::P => Problem::Subcritical,
        ProblemArg::Q => Problem::Supercritical,
    }
}

fn reduce(cfg: &RunConfig, a: &ReduceArgs) -> Result<Outcome, RunError> {
    let x = point(&a.x, a.dim)?;
    let ctx = context(cfg, a.dim, &a.k)?;
    let opts = RateOptions {
        form: match a.form {
            FormArg::Gradient => BalanceForm::Gradient,
            FormArg::KWeighted => BalanceForm::KWeighted,
        },
        drop_delta_k: a.drop_delta_k,
        problem: problem(a.problem),
    };
    let outcome = reduced::solve_e_lambda(&ctx, &x, a.eps, opts).map_err(domain)?;
    let mut table = Table::new(["outcome", "eps", "t0", "t_eps", "lambda_eps", "residual"]);
    let diagnostic = match &outcome {
        RateOutcome::Root(r) => {
            table.push(vec!["root".into(), r.eps.into(), r.t0.into(), r.t_eps.into(), r.lambda_eps.into(), r.residual.into()]);
            None
        }
        RateOutcome::NoRoot(nr) => {
            table.push(vec!["no_root".into(), nr.eps.into(), nr.t0.into(), Cell::Empty, Cell::Empty, Cell::Empty]);
            Some(format!(
                "no-root: the rate balance keeps one sign on [{}, {}] (values {}, {})",
                nr.bracket.0, nr.bracket.1, nr.values.0, nr.values.1
            ))
        }
    };
    let payload = json!({ "formula": "rate-balance", "options": opts, "result": outcome });
    Ok(Outcome { payload, tables: vec![table], warnings: Vec::new(), diagnostic })
}

fn landscape(cfg: &RunConfig, a: &LandscapeArgs) -> Result<Outcome, RunError> {
    if a.lambda_count == 0 || a.lambda_min > a.lambda_max {
        return Err(RunError::Usage("need lambda-count ≥ 1 and lambda-min ≤ lambda-max".into()));
    }
    let xs = a
        .radii
        .0
        .iter()
        .map(|r| point(&crate::config::Point(vec![*r]), a.dim))
        .collect::<Result<Vec<_>, _>>()?;
    let ctx = context(cfg, a.dim, &a.k)?;
    let grid = ScanGrid::geometric(xs, a.lambda_min, a.lambda_max, a.lambda_count);
    let kind = match a.extremum {
        ExtremumArg::Min => Extremum::Min,
        ExtremumArg::Max => Extremum::Max,
    };
    let scan = reduced::landscape_scan(&ctx, &grid, a.eps, kind, cfg.workers()).map_err(domain)?;
    let n = a.dim.n();
    let mut header = indexed("x", n);
    header.extend(["lambda", "eps", "psi", "dpsi_dlambda"].iter().map(|s| s.to_string()));
    let mut table = Table::new(header);
    for s in &scan.states {
        let mut row: Vec<Cell> = s.x.iter().map(|v| Cell::from(*v)).collect();
        row.extend([s.lambda.into(), s.eps.into(), s.psi.into(), s.dpsi_dlambda.into()]);
        table.push(row);
    }
    let payload = json!({
        "formula": "reduced-energy",
        "extremum": scan.extremum,
        "index": scan.index,
        "interior": scan.interior,
        "states": scan.states,
    });
    Ok(Outcome { payload, tables: vec![table], warnings: scan.warnings, diagnostic: None })
}

fn criteria(cfg: &RunConfig, a: &CriteriaArgs) -> Result<Outcome, RunError> {
    let x0 = point(&a.x0, a.dim)?;
    let ctx = context(cfg, a.dim, &a.k)?;
    let v = reduced::criteria(&ctx, &x0, problem(a.problem)).map_err(domain)?;
    let mut table = Table::new(["rule", "verdict", "quantity"]);
    table.push(vec![serde_name(&v.rule).into(), serde_name(&v.verdict).into(), v.quantity.into()]);
    let payload = json!({ "formula": "sign-criteria", "verdict": v });
    Ok(Outcome::ok(payload, vec![table]))
}

/// serde name of a unit enum variant.
fn serde_name<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn branch_table(points: &[BranchPoint]) -> Table {
    let mut t = Table::new(["eps", "peak", "alpha_hat", "lambda_hat", "fit_error"]);
    for p in points {
        t.push(vec![p.eps.into(), p.peak.into(), p.alpha_hat.into(), p.lambda_hat.into(), p.fit_error.into()]);
    }
    t
}

fn solve_radial(a: &SolveRadialArgs) -> Result<Outcome, RunError> {
    if a.eps_end > a.eps_start {
        return Err(RunError::Usage("--eps-end must not exceed --eps-start".into()));
    }
    let opts = BranchOptions { steps: a.steps.max(1), solver: SolverOptions::default().with_nodes(a.mesh), ..BranchOptions::default() };
    let (points, last, diagnostic) = match radial_pde::continue_branch(a.dim, &a.k, a.eps_start, a.eps_end, &opts) {
        Ok(b) => (b.points, b.last, None),
        Err(RadialError::ContinuationStall { reached_eps, points, last }) => {
            (points, *last, Some(format!("continuation-stall: smallest eps reached {reached_eps}")))
        }
        Err(RadialError::Mesh(m)) => return Err(RunError::Usage(format!("--mesh needs at least 8 nodes, got {m}"))),
        Err(e) => return Err(domain(e)),
    };
    let profile = last.profile();
    let mut prof = Table::new(["r", "u", "w"]);
    for row in &profile {
        prof.push(vec![row.r.into(), row.u.into(), row.w.into()]);
    }
    let energy = last.energy_identity();
    let payload = json!({
        "formula": "radial-collocation",
        "reached_eps": last.eps(),
        "residual_norm": last.residual_norm(),
        "energy_identity": { "dirichlet": energy.dirichlet, "potential": energy.potential, "relative_gap": energy.relative_gap() },
        "points": points,
        "profile": profile,
    });
    let warnings = diagnostic.iter().cloned().collect();
    Ok(Outcome { payload, tables: vec![branch_table(&points), prof], warnings, diagnostic })
}
