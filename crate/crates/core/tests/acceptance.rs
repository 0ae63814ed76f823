//! One PASS/FAIL line per acceptance criterion; exits nonzero on any failure.

use std::error::Error;
use std::process::ExitCode;
use std::time::Instant;

use navier_bubble::ball_green::BallGreen;
use navier_bubble::bubble::Dimension;
use navier_bubble::constants::{closed_form_constants, quadrature_constants, relative_deltas, sobolev_quotient_check};
use navier_bubble::expansions::{
    energy_direct, energy_expansion, fit_loglog, grad_direct, grad_terms, sweep, Formula, FunctionalContext,
};
use navier_bubble::galerkin::{GalerkinOptions, GalerkinSystem};
use navier_bubble::kfield::KField;
use navier_bubble::radial_pde::{continue_branch, log_slope, BranchOptions};
use navier_bubble::reduced::{criteria, galerkin_v, solve_e_lambda, t0, verdict, Problem, RateOptions, Verdict};

type Outcome = Result<(bool, String), Box<dyn Error>>;

fn dim(n: usize) -> Dimension {
    Dimension::new(n).expect("supported dimension")
}

fn origin(n: usize) -> Vec<f64> {
    vec![0.0; n]
}

fn ctx5() -> FunctionalContext {
    FunctionalContext::new(dim(5), KField::one())
}

fn constants_match_quadrature() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in 5..=10 {
        let a = closed_form_constants(dim(n));
        let b = quadrature_constants(dim(n), 1e-12)?;
        worst = relative_deltas(&a, &b).into_iter().fold(worst, f64::max);
    }
    Ok((worst <= 1e-8, format!("max relative delta {worst:.2e} over n=5..10")))
}

fn sobolev_quotient() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in [5, 6] {
        let q = sobolev_quotient_check(dim(n))?;
        worst = worst.max((q.quotient / q.expected - 1.0).abs());
    }
    Ok((worst <= 1e-6, format!("max relative gap {worst:.2e}")))
}

fn robin_at_centre() -> Outcome {
    let mut worst_h: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    for n in 5..=8 {
        let g = BallGreen::new(dim(n));
        let x = origin(n);
        let expected = (2.0 * n as f64 - 4.0) / n as f64;
        worst_h = worst_h.max((g.robin(&x)? - expected).abs());
        let grad = g.grad_x_regular(&x, &x)?;
        worst_grad = worst_grad.max(grad.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok((
        worst_h <= 1e-10 && worst_grad <= 1e-8,
        format!("|H(0,0) - (2n-4)/n| {worst_h:.2e}, |∇H| {worst_grad:.2e}"),
    ))
}

fn projected_norm_order() -> Outcome {
    let reports = sweep(&ctx5(), Formula::ProjectedNorm, &origin(5), &[5.0, 10.0, 20.0, 40.0, 80.0], 0.0)?;
    let slope = reports[0].fitted_slope.unwrap_or(f64::NAN);
    Ok(((slope + 3.0).abs() <= 0.3, format!("slope {slope:.3}")))
}

fn energy_order_and_shift() -> Outcome {
    let ctx = ctx5();
    let x = origin(5);
    let lambdas = [5.0, 10.0, 20.0, 40.0, 80.0];
    let reports = sweep(&ctx, Formula::Energy, &x, &lambdas, 0.0)?;
    let slope = reports[0].fitted_slope.unwrap_or(f64::NAN);
    let eps = 1e-3;
    let mut shift_ok = true;
    let mut max_shift: f64 = 0.0;
    for &l in &lambdas {
        let at_zero = (energy_direct(&ctx, &x, l, 0.0)? - energy_expansion(&ctx, &x, l, 0.0)?).abs();
        let at_eps = (energy_direct(&ctx, &x, l, eps)? - energy_expansion(&ctx, &x, l, eps)?).abs();
        shift_ok &= at_eps <= 2.0 * at_zero;
        max_shift = max_shift.max((energy_expansion(&ctx, &x, l, eps)? - energy_expansion(&ctx, &x, l, 0.0)?).abs());
    }
    Ok((
        slope <= -1.7 && shift_ok,
        format!("slope {slope:.3}, residual at eps=1e-3 within 2x: {shift_ok}, predicted shift up to {max_shift:.3e}"),
    ))
}

fn gradient_cancellation() -> Outcome {
    let ctx = ctx5();
    let x = origin(5);
    let eps = 1e-4;
    let lambda = t0(&ctx, &x)? / eps;
    let t = grad_terms(&ctx, &x, lambda, eps)?;
    let total = t.value().abs();
    let bound = 0.05 * (t.prefactor * t.robin).abs().min((t.prefactor * t.eps).abs());
    let below = grad_direct(&ctx, &x, 0.5 * lambda, eps)?.value;
    let above = grad_direct(&ctx, &x, 1.5 * lambda, eps)?.value;
    let flips = below.signum() != above.signum();
    Ok((
        total <= bound && flips,
        format!("|∂J| {total:.3e} vs bound {bound:.3e}, direct {below:.3e} -> {above:.3e}"),
    ))
}

fn rate_convergence() -> Outcome {
    let ctx = ctx5();
    let outcome = solve_e_lambda(&ctx, &origin(5), 1e-4, RateOptions::default())?;
    match outcome.root() {
        Some(r) => {
            let gap = (r.t_eps / r.t0 - 1.0).abs();
            Ok((gap <= 0.05, format!("t_eps {:.5}, t0 {:.5}, gap {gap:.2e}", r.t_eps, r.t0)))
        }
        None => Ok((false, "no root".into())),
    }
}

/// Expected verdict from the sign of the criterion quantity.
fn expected_verdict(n: usize, quantity: f64, problem: Problem) -> Verdict {
    let supercritical = matches!(problem, Problem::Supercritical);
    if n == 5 {
        return if supercritical { Verdict::NonexistencePredicted } else { Verdict::ExistencePredicted };
    }
    if quantity > 0.0 {
        if n == 6 && !supercritical {
            Verdict::ExistencePredicted
        } else {
            Verdict::NonexistencePredicted
        }
    } else if n == 6 && !supercritical && quantity < 0.0 {
        Verdict::NonexistencePredicted
    } else {
        Verdict::Inconclusive
    }
}

fn sign_criteria() -> Outcome {
    let problems = [Problem::Subcritical, Problem::Supercritical];
    let mut mismatches = Vec::new();
    let mut cases = 0;
    for n in 5..=8 {
        for q in [-1.0, 0.0, 1.0] {
            for problem in problems {
                cases += 1;
                let (_, got) = verdict(n, q, problem);
                if got != expected_verdict(n, q, problem) {
                    mismatches.push(format!("n={n} q={q} {problem:?}"));
                }
            }
        }
    }
    let c6 = closed_form_constants(dim(6));
    let steep = 8.0 * c6.c1 / c6.c2;
    let families = [
        KField::one(),
        KField::Quad { a: 1.0, b: 0.25 },
        KField::Quad { a: 1.0, b: -0.25 },
        KField::Quad { a: 1.0, b: steep },
        KField::Gauss { amp: 0.5, width: 0.5 },
        KField::Gauss { amp: -0.5, width: 0.1 },
    ];
    for n in 5..=8 {
        let nf = n as f64;
        for k in &families {
            let ctx = FunctionalContext::new(dim(n), k.clone());
            let x0 = origin(n);
            let lap = match k {
                KField::Quad { b, .. } => 2.0 * nf * b,
                KField::Gauss { amp, width } => -2.0 * nf * amp / (width * width),
                _ => 0.0,
            };
            let k0 = match k {
                KField::Quad { a, .. } => *a,
                KField::Gauss { amp, .. } => 1.0 + amp,
                _ => 1.0,
            };
            let c = closed_form_constants(dim(n));
            let h = (2.0 * nf - 4.0) / nf;
            for problem in problems {
                cases += 1;
                let quantity = match (n, problem) {
                    (5, _) => c.c1 * h,
                    (6, _) => c.c1 * h - c.c2 * lap / (36.0 * k0),
                    (_, Problem::Subcritical) => lap,
                    (_, Problem::Supercritical) => -lap,
                };
                let got = criteria(&ctx, &x0, problem)?;
                let close = (got.quantity - quantity).abs() <= 1e-6 * quantity.abs().max(1.0);
                if !close || got.verdict != expected_verdict(n, quantity, problem) {
                    mismatches.push(format!("n={n} {k:?} {problem:?}: {got:?}"));
                }
            }
        }
    }
    let detail = if mismatches.is_empty() { format!("{cases} cases agree") } else { mismatches.join("; ") };
    Ok((mismatches.is_empty(), detail))
}

fn radial_branch() -> Outcome {
    let d = dim(5);
    let k = KField::one();
    let branch = continue_branch(d, &k, 0.5, 1e-3, &BranchOptions { steps: 60, ..BranchOptions::default() })?;
    let pts = &branch.points;
    let eps_min = pts.last().map_or(f64::NAN, |p| p.eps);
    let decade: Vec<_> = pts.iter().filter(|p| p.eps <= 10.0 * eps_min).collect();
    let inv_eps: Vec<f64> = decade.iter().map(|p| 1.0 / p.eps).collect();
    let peaks: Vec<f64> = decade.iter().map(|p| p.peak).collect();
    let slope = log_slope(&inv_eps, &peaks);
    let half: Vec<f64> =
        pts.iter().filter(|p| p.eps <= 10f64.sqrt() * eps_min).map(|p| p.lambda_hat * p.eps).collect();
    let lo = half.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = half.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let variation = (hi - lo) / lo;
    let last = pts.last().ok_or("empty branch")?;
    let c = last.lambda_hat * last.eps;
    let t = t0(&FunctionalContext::new(d, k), &origin(5))?;
    let ok = eps_min <= 5e-3
        && (slope - 0.5).abs() <= 0.1
        && variation <= 0.15
        && (last.alpha_hat - 1.0).abs() <= 0.05
        && (c / t - 1.0).abs() <= 0.2;
    Ok((
        ok,
        format!(
            "eps {eps_min:.1e}, peak slope {slope:.3}, λ̂ε variation {variation:.2e}, α̂ {:.4}, λ̂ε {c:.3} vs t0 {t:.3}",
            last.alpha_hat
        ),
    ))
}

fn galerkin_coercivity() -> Outcome {
    let ctx = ctx5();
    let x = origin(5);
    let values = [8, 16, 32]
        .into_iter()
        .map(|b| GalerkinSystem::assemble(&ctx, &x, 20.0, 0.0, GalerkinOptions::new(b))?.coercivity())
        .collect::<Result<Vec<_>, _>>()?;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lambdas = [10.0, 20.0, 40.0, 80.0];
    let norms = lambdas
        .iter()
        .map(|&l| galerkin_v(&ctx, &x, l, 0.0, 16).map(|s| s.norm))
        .collect::<Result<Vec<_>, _>>()?;
    let slope = fit_loglog(&lambdas, &norms).unwrap_or(f64::NAN);
    Ok((
        lo > 0.0 && hi / lo - 1.0 <= 0.2 && slope < 0.0,
        format!("coercivity {lo:.4}..{hi:.4}, ‖v‖ slope {slope:.3}"),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("constants by quadrature", constants_match_quadrature),
        ("sobolev quotient", sobolev_quotient),
        ("robin function at the centre", robin_at_centre),
        ("projected norm order", projected_norm_order),
        ("energy order and eps shift", energy_order_and_shift),
        ("gradient cancellation", gradient_cancellation),
        ("rate convergence", rate_convergence),
        ("sign criteria", sign_criteria),
        ("radial branch", radial_branch),
        ("galerkin coercivity", galerkin_coercivity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        let status = if ok { "PASS" } else { "FAIL" };
        println!("criterion {}: {status} {name}: {detail} ({:.2?})", i + 1, start.elapsed());
        failed += usize::from(!ok);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
