//! Reduced one-parameter problem: the concentration-rate balance, grid
//! scans of the reduced energy, sign criteria and the Galerkin correction.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::expansions::{energy_direct, grad_direct, ExpansionError, FunctionalContext, MIN_LAMBDA_D};
use crate::galerkin::{GalerkinError, GalerkinOptions, GalerkinSolution, GalerkinSystem};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ReducedError {
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
    #[error(transparent)]
    Galerkin(#[from] GalerkinError),
    #[error("ε = {0} is outside (0, 0.1]")]
    Eps(f64),
    #[error("scan grid is empty")]
    EmptyGrid,
    #[error("no admissible λ > 0 in the grid")]
    Rate,
}

pub type Result<T> = std::result::Result<T, ReducedError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    /// Exponent `p - ε`.
    Subcritical,
    /// Exponent `p + ε`.
    Supercritical,
}

impl std::str::FromStr for Problem {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "P" | "p" | "subcritical" => Ok(Problem::Subcritical),
            "Q" | "q" | "supercritical" => Ok(Problem::Supercritical),
            _ => Err(format!("unknown problem `{s}` (expected P or Q)")),
        }
    }
}

/// Overall normalisation of the balance. Both forms differ by the positive
/// factor `nK/(n-4)` and share their roots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceForm {
    /// The bracket of `∂J/∂λ`.
    Gradient,
    /// The bracket multiplied by `nK(x)/(n-4)`.
    KWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateOptions {
    pub form: BalanceForm,
    pub drop_delta_k: bool,
    pub problem: Problem,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions { form: BalanceForm::Gradient, drop_delta_k: false, problem: Problem::Subcritical }
    }
}

/// `t_0(x) = (2n c_1 H(x,x) / ((n-4) S_n))^{1/(n-4)}`.
pub fn t0(ctx: &FunctionalContext, x: &[f64]) -> Result<f64> {
    let n = ctx.dim.nf();
    let c = &ctx.constants;
    let h = ctx.robin(x)?;
    Ok((2.0 * n * c.c1 * h / ((n - 4.0) * c.sn)).powf(1.0 / (n - 4.0)))
}

/// `g(t) = A/t³ - C/t^{n-3} + B/t` in the rescaled rate `λ = t ε^{-1/(n-4)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarBalance {
    pub dim: usize,
    /// Coefficient of `t^{-3}` (the `ΔK` term).
    pub a: f64,
    /// Coefficient of `-t^{-(n-3)}` (the `H` term).
    pub c: f64,
    /// Coefficient of `t^{-1}` (the `ε` term).
    pub b: f64,
}

impl ScalarBalance {
    pub fn new(ctx: &FunctionalContext, x: &[f64], eps: f64, opts: RateOptions) -> Result<Self> {
        let n = ctx.dim.nf();
        let k = &ctx.constants;
        let kx = ctx.k_at(x);
        let delta_k = if opts.drop_delta_k { 0.0 } else { ctx.laplacian_k(x) };
        let mut a = k.c2 * delta_k / (n * n * kx) * eps.powf((6.0 - n) / (n - 4.0));
        let mut c = k.c1 * ctx.robin(x)?;
        let b = (n - 4.0) * k.sn / (2.0 * n);
        if opts.problem == Problem::Supercritical {
            a = -a;
            c = -c;
        }
        let scale = match opts.form {
            BalanceForm::Gradient => 1.0,
            BalanceForm::KWeighted => n * kx / (n - 4.0),
        };
        Ok(ScalarBalance { dim: ctx.dim.n(), a: a * scale, c: c * scale, b: b * scale })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let e = self.dim as i32 - 3;
        self.a / t.powi(3) - self.c / t.powi(e) + self.b / t
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let e = self.dim as i32 - 3;
        -3.0 * self.a / t.powi(4) + e as f64 * self.c / t.powi(e + 1) - self.b / (t * t)
    }

    /// Largest term magnitude at `t`.
    pub fn scale(&self, t: f64) -> f64 {
        let e = self.dim as i32 - 3;
        (self.a / t.powi(3)).abs().max((self.c / t.powi(e)).abs()).max((self.b / t).abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSolution {
    pub x: Vec<f64>,
    pub eps: f64,
    pub t_eps: f64,
    pub t0: f64,
    /// `t_ε ε^{-1/(n-4)}`.
    pub lambda_eps: f64,
    pub residual: f64,
    /// Largest balance term at the root.
    pub scale: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoRoot {
    pub x: Vec<f64>,
    pub eps: f64,
    pub t0: f64,
    pub bracket: (f64, f64),
    /// Balance values at the bracket ends.
    pub values: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RateOutcome {
    Root(RateSolution),
    NoRoot(NoRoot),
}

impl RateOutcome {
    pub fn root(&self) -> Option<&RateSolution> {
        match self {
            RateOutcome::Root(r) => Some(r),
            RateOutcome::NoRoot(_) => None,
        }
    }
}

/// Root of the rate balance in `(t0/2, 3t0/2)` by bisection-safeguarded Newton.
pub fn solve_e_lambda(ctx: &FunctionalContext, x: &[f64], eps: f64, opts: RateOptions) -> Result<RateOutcome> {
    if !(eps > 0.0 && eps <= 0.1) {
        return Err(ReducedError::Eps(eps));
    }
    let t0 = t0(ctx, x)?;
    let g = ScalarBalance::new(ctx, x, eps, opts)?;
    let (mut lo, mut hi) = (0.5 * t0, 1.5 * t0);
    let (g_lo, g_hi) = (g.eval(lo), g.eval(hi));
    if g_lo * g_hi > 0.0 {
        return Ok(RateOutcome::NoRoot(NoRoot { x: x.to_vec(), eps, t0, bracket: (lo, hi), values: (g_lo, g_hi) }));
    }
    let rising = g_hi > g_lo;
    let mut t = t0.clamp(lo, hi);
    let mut iterations = 0;
    for _ in 0..200 {
        iterations += 1;
        let v = g.eval(t);
        if v.abs() <= 1e-14 * g.scale(t) {
            break;
        }
        if (v > 0.0) == rising {
            hi = t;
        } else {
            lo = t;
        }
        let newton = t - v / g.derivative(t);
        t = if newton > lo && newton < hi && newton.is_finite() { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * t {
            break;
        }
    }
    let n = ctx.dim.nf();
    Ok(RateOutcome::Root(RateSolution {
        x: x.to_vec(),
        eps,
        t_eps: t,
        t0,
        lambda_eps: t * eps.powf(-1.0 / (n - 4.0)),
        residual: g.eval(t).abs(),
        scale: g.scale(t),
        iterations,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedState {
    pub x: Vec<f64>,
    pub lambda: f64,
    pub eps: f64,
    pub psi: f64,
    pub dpsi_dlambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Extremum {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanGrid {
    pub xs: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
}

impl ScanGrid {
    /// Geometric `λ` grid of `count` points on `[lo, hi]`.
    pub fn geometric(xs: Vec<Vec<f64>>, lo: f64, hi: f64, count: usize) -> Self {
        let lambdas = if count <= 1 {
            vec![lo]
        } else {
            (0..count).map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64)).collect()
        };
        ScanGrid { xs, lambdas }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandscapeScan {
    pub states: Vec<ReducedState>,
    pub extremum: ReducedState,
    /// `(x index, λ index)` of the extremum.
    pub index: (usize, usize),
    pub interior: bool,
    pub warnings: Vec<String>,
}

/// `ψ_ε(x, λ, 0)` on the grid, evaluated on up to `threads` workers.
pub fn landscape_scan(
    ctx: &FunctionalContext,
    grid: &ScanGrid,
    eps: f64,
    kind: Extremum,
    threads: usize,
) -> Result<LandscapeScan> {
    if grid.xs.is_empty() || grid.lambdas.is_empty() {
        return Err(ReducedError::EmptyGrid);
    }
    if grid.lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(ReducedError::Rate);
    }
    let points: Vec<(usize, usize)> =
        (0..grid.xs.len()).flat_map(|i| (0..grid.lambdas.len()).map(move |j| (i, j))).collect();
    let eval = |&(i, j): &(usize, usize)| -> Result<ReducedState> {
        let x = &grid.xs[i];
        let lambda = grid.lambdas[j];
        Ok(ReducedState {
            x: x.clone(),
            lambda,
            eps,
            psi: energy_direct(ctx, x, lambda, eps)?,
            dpsi_dlambda: grad_direct(ctx, x, lambda, eps)?.value,
        })
    };
    let workers = threads.clamp(1, points.len());
    let chunk = points.len().div_ceil(workers);
    let results: Vec<Result<ReducedState>> = std::thread::scope(|s| {
        let handles: Vec<_> = points
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(eval).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("scan worker panicked")).collect()
    });
    let states = results.into_iter().collect::<Result<Vec<_>>>()?;

    let better = |a: f64, b: f64| match kind {
        Extremum::Min => a < b,
        Extremum::Max => a > b,
    };
    let mut best = 0;
    for (k, s) in states.iter().enumerate() {
        if better(s.psi, states[best].psi) {
            best = k;
        }
    }
    let index = points[best];
    let nl = grid.lambdas.len();
    let nx = grid.xs.len();
    let inside = |i: usize, len: usize| len >= 3 && i > 0 && i + 1 < len;
    let interior = inside(index.1, nl) && (nx < 3 || inside(index.0, nx));
    let mut warnings = Vec::new();
    if !interior {
        warnings.push(format!(
            "extremum on the grid boundary at x = {:?}, λ = {}",
            grid.xs[index.0], grid.lambdas[index.1]
        ));
    }
    for x in &grid.xs {
        let small = grid.lambdas.iter().filter(|&&l| ctx.lambda_d(x, l) < MIN_LAMBDA_D).count();
        if small > 0 {
            warnings.push(format!("{small} grid rates at x = {x:?} have λd < {MIN_LAMBDA_D}"));
        }
    }
    Ok(LandscapeScan { extremum: states[best].clone(), states, index, interior, warnings })
}

/// Statement a sign criterion belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Existence at a flat strict local minimum of `K`, any `n ≥ 5`.
    FlatMinimumExistence,
    /// Existence at a strict local minimum for `n = 5`, or `n = 6` with a positive balance quantity.
    LowDimensionExistence,
    /// Nonexistence of concentrating solutions of the subcritical problem.
    SubcriticalNonexistence,
    /// Nonexistence of concentrating solutions of the supercritical problem.
    SupercriticalNonexistence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ExistencePredicted,
    NonexistencePredicted,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionVerdict {
    pub rule: Rule,
    pub point: Vec<f64>,
    pub quantity: f64,
    pub verdict: Verdict,
}

/// Sign logic of the criteria. `quantity` is `c_1 H` for `n = 5`,
/// `c_1 H - c_2 ΔK/(36K)` for `n = 6`, `ΔK` (subcritical) or `-ΔK`
/// (supercritical) for `n ≥ 7`.
pub fn verdict(n: usize, quantity: f64, problem: Problem) -> (Rule, Verdict) {
    use Problem::*;
    use Rule::*;
    use Verdict::*;
    match (n, problem) {
        (5, Subcritical) => (LowDimensionExistence, ExistencePredicted),
        (5, Supercritical) => (SupercriticalNonexistence, NonexistencePredicted),
        (6, Subcritical) if quantity > 0.0 => (LowDimensionExistence, ExistencePredicted),
        (6, Subcritical) if quantity < 0.0 => (SubcriticalNonexistence, NonexistencePredicted),
        (6, Subcritical) => (LowDimensionExistence, Inconclusive),
        (6, Supercritical) if quantity > 0.0 => (SupercriticalNonexistence, NonexistencePredicted),
        (6, Supercritical) => (SupercriticalNonexistence, Inconclusive),
        (_, Subcritical) if quantity > 0.0 => (SubcriticalNonexistence, NonexistencePredicted),
        (_, Subcritical) => (FlatMinimumExistence, Inconclusive),
        (_, Supercritical) if quantity > 0.0 => (SupercriticalNonexistence, NonexistencePredicted),
        (_, Supercritical) => (SupercriticalNonexistence, Inconclusive),
    }
}

/// Dimension-appropriate criterion quantity at `x0`.
pub fn criterion_quantity(ctx: &FunctionalContext, x0: &[f64], problem: Problem) -> Result<f64> {
    let k = &ctx.constants;
    Ok(match ctx.dim.n() {
        5 => k.c1 * ctx.robin(x0)?,
        6 => k.c1 * ctx.robin(x0)? - k.c2 * ctx.laplacian_k(x0) / (36.0 * ctx.k_at(x0)),
        _ => match problem {
            Problem::Subcritical => ctx.laplacian_k(x0),
            Problem::Supercritical => -ctx.laplacian_k(x0),
        },
    })
}

pub fn criteria(ctx: &FunctionalContext, x0: &[f64], problem: Problem) -> Result<CriterionVerdict> {
    let quantity = criterion_quantity(ctx, x0, problem)?;
    let (rule, verdict) = verdict(ctx.dim.n(), quantity, problem);
    Ok(CriterionVerdict { rule, point: x0.to_vec(), quantity, verdict })
}

/// Galerkin minimiser of the quadratic model of `ψ_ε(x, λ, ·)`.
pub fn galerkin_v(ctx: &FunctionalContext, x: &[f64], lambda: f64, eps: f64, basis_size: usize) -> Result<GalerkinSolution> {
    let sys = Arc::new(GalerkinSystem::assemble(ctx, x, lambda, eps, GalerkinOptions::new(basis_size))?);
    Ok(sys.minimize()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubble::Dimension;
    use crate::kfield::KField;

    fn ctx(n: usize, k: KField) -> FunctionalContext {
        FunctionalContext::new(Dimension::new(n).unwrap(), k)
    }

    fn origin(n: usize) -> Vec<f64> {
        vec![0.0; n]
    }

    #[test]
    fn t0_at_centre() {
        let c = ctx(5, KField::one());
        let k = &c.constants;
        let expected = 10.0 * k.c1 * 1.2 / k.sn;
        assert!((t0(&c, &origin(5)).unwrap() / expected - 1.0).abs() < 1e-10);
        let q = ctx(5, "gauss:0.5,0.3".parse().unwrap());
        assert_eq!(t0(&q, &origin(5)).unwrap(), t0(&c, &origin(5)).unwrap());
        let mut x = origin(5);
        x[0] = 0.5;
        assert!(t0(&c, &x).unwrap() > t0(&c, &origin(5)).unwrap());
    }

    #[test]
    fn rate_root_tends_to_t0() {
        let c = ctx(5, KField::one());
        let sol = solve_e_lambda(&c, &origin(5), 1e-4, RateOptions::default()).unwrap();
        let r = sol.root().unwrap();
        assert!((r.t_eps / r.t0 - 1.0).abs() <= 0.05);
        assert!(r.t_eps > 0.5 * r.t0 && r.t_eps < 1.5 * r.t0);
        assert!(r.residual <= 1e-10 * r.scale);
        assert_eq!(r.lambda_eps, r.t_eps * 1e-4f64.powf(-1.0));
    }

    #[test]
    fn forms_share_roots() {
        let c = ctx(6, "quad:1,-0.2".parse().unwrap());
        let a = solve_e_lambda(&c, &origin(6), 1e-3, RateOptions::default()).unwrap();
        let opts = RateOptions { form: BalanceForm::KWeighted, ..RateOptions::default() };
        let b = solve_e_lambda(&c, &origin(6), 1e-3, opts).unwrap();
        let (a, b) = (a.root().unwrap(), b.root().unwrap());
        assert!((a.t_eps / b.t_eps - 1.0).abs() < 1e-12);
    }

    #[test]
    fn n6_root_moves_with_balance_quantity() {
        // t² = 6 Q / S_6 with Q = c_1 H - c_2 ΔK / (36 K)
        let mut prev_q = f64::NEG_INFINITY;
        let mut prev_t = 0.0;
        for b in [0.02, 0.0, -0.02, -0.05] {
            let c = ctx(6, format!("quad:1,{b}").parse().unwrap());
            let q = criterion_quantity(&c, &origin(6), Problem::Subcritical).unwrap();
            let t = solve_e_lambda(&c, &origin(6), 1e-3, RateOptions::default()).unwrap().root().unwrap().t_eps;
            assert!((t * t / (6.0 * q / c.constants.sn) - 1.0).abs() < 1e-10);
            assert!(q > prev_q && t > prev_t);
            prev_q = q;
            prev_t = t;
        }
    }

    #[test]
    fn dropping_delta_k_recovers_t0_for_n6() {
        let c = ctx(6, "quad:1,-0.1".parse().unwrap());
        let opts = RateOptions { drop_delta_k: true, ..RateOptions::default() };
        let r = solve_e_lambda(&c, &origin(6), 1e-3, opts).unwrap();
        let r = r.root().unwrap();
        assert!((r.t_eps / r.t0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn positive_laplacian_has_no_root_for_n7() {
        let c = ctx(7, "quad:1,1".parse().unwrap());
        let out = solve_e_lambda(&c, &origin(7), 1e-3, RateOptions::default()).unwrap();
        assert!(matches!(out, RateOutcome::NoRoot(_)));
    }

    #[test]
    fn rejects_eps_out_of_range() {
        let c = ctx(5, KField::one());
        for eps in [0.0, -1e-3, 0.2] {
            assert_eq!(solve_e_lambda(&c, &origin(5), eps, RateOptions::default()), Err(ReducedError::Eps(eps)));
        }
    }

    #[test]
    fn verdict_table() {
        use Problem::*;
        use Verdict::*;
        for n in 5..=8 {
            for q in [-1.0, 0.0, 1.0] {
                let (_, p) = verdict(n, q, Subcritical);
                let (_, s) = verdict(n, q, Supercritical);
                let (ep, es) = match n {
                    5 => (ExistencePredicted, NonexistencePredicted),
                    6 => (
                        if q > 0.0 {
                            ExistencePredicted
                        } else if q < 0.0 {
                            NonexistencePredicted
                        } else {
                            Inconclusive
                        },
                        if q > 0.0 { NonexistencePredicted } else { Inconclusive },
                    ),
                    _ => (
                        if q > 0.0 { NonexistencePredicted } else { Inconclusive },
                        if q > 0.0 { NonexistencePredicted } else { Inconclusive },
                    ),
                };
                assert_eq!((p, s), (ep, es), "n={n} q={q}");
            }
        }
    }

    #[test]
    fn criteria_examples() {
        let c5 = ctx(5, "gauss:0.3,0.5".parse().unwrap());
        assert_eq!(criteria(&c5, &origin(5), Problem::Supercritical).unwrap().verdict, Verdict::NonexistencePredicted);
        let c6 = ctx(6, KField::one());
        let v = criteria(&c6, &origin(6), Problem::Subcritical).unwrap();
        assert!((v.quantity / (c6.constants.c1 * 4.0 / 3.0) - 1.0).abs() < 1e-9);
        assert_eq!(v.verdict, Verdict::ExistencePredicted);
        assert_eq!(criteria(&c6, &origin(6), Problem::Supercritical).unwrap().verdict, Verdict::NonexistencePredicted);
        let c7 = ctx(7, "quad:1,1".parse().unwrap());
        let v = criteria(&c7, &origin(7), Problem::Subcritical).unwrap();
        assert!((v.quantity - 14.0).abs() < 1e-12);
        assert_eq!(v.verdict, Verdict::NonexistencePredicted);
    }

    #[test]
    fn scan_minimiser_matches_rate_root() {
        let c = ctx(5, KField::one());
        let eps = 1e-3;
        let root = solve_e_lambda(&c, &origin(5), eps, RateOptions::default()).unwrap();
        let lambda_eps = root.root().unwrap().lambda_eps;
        let grid = ScanGrid::geometric(vec![origin(5)], 0.5 * lambda_eps, 1.5 * lambda_eps, 41);
        let scan = landscape_scan(&c, &grid, eps, Extremum::Min, 4).unwrap();
        assert!(scan.interior);
        assert!((scan.extremum.lambda / lambda_eps - 1.0).abs() < 0.1);
        let cell = grid.lambdas[1] / grid.lambdas[0];
        let ratio = scan.extremum.lambda / lambda_eps;
        assert!(ratio < cell && 1.0 / ratio < cell, "{ratio} vs cell {cell}");
    }

    #[test]
    fn scan_finds_bump_maximum_of_k() {
        // the leading term K(x)^{-2/(p+1)} dominates: the energy is smallest where K peaks
        let c = ctx(5, "gauss:1,0.3".parse().unwrap());
        let xs: Vec<Vec<f64>> = [-0.2, -0.1, 0.0, 0.1, 0.2]
            .iter()
            .map(|&a| {
                let mut x = origin(5);
                x[0] = a;
                x
            })
            .collect();
        let grid = ScanGrid { xs, lambdas: vec![100.0] };
        let scan = landscape_scan(&c, &grid, 1e-3, Extremum::Min, 2).unwrap();
        assert_eq!(scan.index.0, 2);
    }

    #[test]
    fn single_point_grid_is_boundary() {
        let c = ctx(5, KField::one());
        let grid = ScanGrid { xs: vec![origin(5)], lambdas: vec![30.0] };
        let scan = landscape_scan(&c, &grid, 1e-3, Extremum::Min, 1).unwrap();
        assert!(!scan.interior);
        assert_eq!(scan.extremum.lambda, 30.0);
        assert!(!scan.warnings.is_empty());
    }

    #[test]
    fn galerkin_wrapper() {
        let c = ctx(5, KField::one());
        let sol = galerkin_v(&c, &origin(5), 40.0, 0.0, 8).unwrap();
        assert!(sol.coercivity > 0.0 && sol.norm > 0.0);
    }
}
