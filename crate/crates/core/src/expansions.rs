//! Closed-form asymptotics of the energy functional on projected bubbles,
//! measured against direct quadrature on the unit ball.

use serde::Serialize;
use thiserror::Error;

use crate::ball_green::{BallGreen, CorrectionField, GreenError};
use crate::bubble::{Bubble, BubbleError, Dimension};
use crate::constants::{closed_form_constants, UniversalConstants};
use crate::galerkin::GalerkinField;
use crate::kfield::KField;
use crate::quadrature::{
    integrate_axisymmetric, integrate_radial, sphere_area, QuadratureError, QuadratureSpec, RadialRange,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExpansionError {
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Green(#[from] GreenError),
    #[error(transparent)]
    Bubble(#[from] BubbleError),
    #[error("rate λ = {0} must be positive")]
    Rate(f64),
    #[error("ε = {0} must be non-negative")]
    Eps(f64),
    #[error("field violates the orthogonality constraints by {violation:.3e}")]
    ConstraintViolation { violation: f64 },
    #[error("field was built for (x, λ, ε) = ({x:?}, {lambda}, {eps}), not the requested configuration")]
    FieldMismatch { x: Vec<f64>, lambda: f64, eps: f64 },
}

pub type Result<T> = std::result::Result<T, ExpansionError>;

/// Below this `λ·d(x, ∂B)` results are flagged as outside the asymptotic regime.
pub const MIN_LAMBDA_D: f64 = 10.0;

/// Standing distance from the boundary for the `l_ε` and gradient checks.
pub const STANDING_DISTANCE: f64 = 0.3;

/// Exponent offset `θ` in the pairing envelope.
pub const PAIRING_THETA: f64 = 0.25;

/// Polar-angle nodes for off-centre integrals.
const AXIAL_ORDER: usize = 32;

/// Relative finite-difference step for `∂J/∂λ`.
const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct FunctionalContext {
    pub dim: Dimension,
    pub k: KField,
    pub green: BallGreen,
    pub constants: UniversalConstants,
    pub spec: QuadratureSpec,
}

impl FunctionalContext {
    pub const DEFAULT_TOL: f64 = 1e-12;

    pub fn new(dim: Dimension, k: KField) -> Self {
        FunctionalContext {
            dim,
            k,
            green: BallGreen::new(dim),
            constants: closed_form_constants(dim),
            spec: QuadratureSpec::new(dim, Self::DEFAULT_TOL).expect("positive tolerance"),
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Result<Self> {
        self.spec = QuadratureSpec::new(self.dim, tol)?;
        Ok(self)
    }

    fn exponent(&self) -> f64 {
        self.dim.critical_exponent()
    }

    pub fn k_at(&self, x: &[f64]) -> f64 {
        self.k.eval(x)
    }

    pub fn laplacian_k(&self, x: &[f64]) -> f64 {
        self.k.laplacian(x)
    }

    pub fn robin(&self, x: &[f64]) -> Result<f64> {
        Ok(self.green.robin(x)?)
    }

    /// `⌊(n-4)/2⌋`.
    pub fn k_index(&self) -> usize {
        (self.dim.n() - 4) / 2
    }

    /// `∫_B F(ρ, τ)` with `y = x + ρω`, `τ = ω·x̂`, graded at scale `1/λ`.
    pub fn integrate<F: Fn(f64, f64) -> f64>(&self, x: &[f64], lambda: f64, f: F) -> Result<f64> {
        let c = norm(x);
        let spec = self.spec.clone().with_peak(x, lambda)?;
        let result = if c == 0.0 {
            integrate_radial(|rho| f(rho, 1.0), 0.0, RadialRange::Finite(1.0), &spec)
                .map(|r| r.value * sphere_area(self.dim.n() - 1))
        } else {
            integrate_axisymmetric(f, c, AXIAL_ORDER, &spec).map(|r| r.value)
        };
        match result {
            // every panel is at the rounding floor: the best estimate is final
            Err(QuadratureError::ToleranceUnreachable { best }) if c == 0.0 => {
                Ok(best.value * sphere_area(self.dim.n() - 1))
            }
            Err(QuadratureError::ToleranceUnreachable { best }) => Ok(best.value),
            other => Ok(other?),
        }
    }

    fn k_offset(&self, c: f64, rho: f64, tau: f64) -> f64 {
        self.k.profile(c * c + 2.0 * c * rho * tau + rho * rho, 0)
    }

    fn projected(&self, x: &[f64], lambda: f64) -> Result<(Bubble, CorrectionField)> {
        if !(lambda > 0.0) {
            return Err(ExpansionError::Rate(lambda));
        }
        let b = Bubble::new(self.dim, x.to_vec(), lambda)?;
        let phi = self.green.correction_field(&b)?;
        Ok((b, phi))
    }

    /// `‖Pδ_{x,λ}‖² = ∫_B |Δδ - Δφ|²`.
    pub fn projected_norm_sq(&self, x: &[f64], lambda: f64) -> Result<f64> {
        let (b, phi) = self.projected(x, lambda)?;
        self.integrate(x, lambda, |rho, tau| (b.laplacian_radial(rho) - phi.laplacian_offset(rho, tau)).powi(2))
    }

    /// `∫_B K (Pδ)_+^{q}`.
    pub fn projected_power(&self, x: &[f64], lambda: f64, q: f64) -> Result<f64> {
        let (b, phi) = self.projected(x, lambda)?;
        let c = norm(x);
        self.integrate(x, lambda, |rho, tau| {
            let pd = (b.eval_radial(rho) - phi.phi_offset(rho, tau)).max(0.0);
            self.k_offset(c, rho, tau) * pd.powf(q)
        })
    }

    pub fn lambda_d(&self, x: &[f64], lambda: f64) -> f64 {
        lambda * (1.0 - norm(x))
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_eps(eps: f64) -> Result<()> {
    if eps >= 0.0 {
        Ok(())
    } else {
        Err(ExpansionError::Eps(eps))
    }
}

/// `J_ε(Pδ_{x,λ})` by quadrature.
pub fn energy_direct(ctx: &FunctionalContext, x: &[f64], lambda: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let q = ctx.exponent() + 1.0 - eps;
    let num = ctx.projected_norm_sq(x, lambda)?;
    let den = ctx.projected_power(x, lambda, q)?;
    Ok(num / den.powf(2.0 / q))
}

/// `l_ε(Pδ_{x,λ}) = ‖Pδ‖² / ∫K (Pδ)^{p+1-ε}` by quadrature.
pub fn l_eps_direct(ctx: &FunctionalContext, x: &[f64], lambda: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let q = ctx.exponent() + 1.0 - eps;
    Ok(ctx.projected_norm_sq(x, lambda)? / ctx.projected_power(x, lambda, q)?)
}

/// Summands of the energy expansion: `value = leading·(1 + delta_k + eps + robin)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyTerms {
    pub leading: f64,
    pub delta_k: f64,
    pub eps: f64,
    pub robin: f64,
}

impl EnergyTerms {
    pub fn value(&self) -> f64 {
        self.leading * (1.0 + self.delta_k + self.eps + self.robin)
    }
}

pub fn energy_terms(ctx: &FunctionalContext, x: &[f64], lambda: f64, eps: f64) -> Result<EnergyTerms> {
    let n = ctx.dim.nf();
    let p = ctx.exponent();
    let c = &ctx.constants;
    let k = ctx.k_at(x);
    let h = ctx.robin(x)?;
    let leading = c.sn.powf((p - 1.0 - eps) / (p + 1.0 - eps)) / k.powf(2.0 / (p + 1.0 - eps));
    Ok(EnergyTerms {
        leading,
        delta_k: -(n - 4.0) * c.c2 * ctx.laplacian_k(x) / (2.0 * n * n * c.sn * k * lambda * lambda),
        eps: (n - 4.0) / n * eps * (ctx.dim.m() * lambda.ln() + c.c3 / c.sn),
        robin: c.c1 * h / (c.sn * lambda.powf(n - 4.0)),
    })
}

/// Truncated energy expansion with all remainders dropped.
pub fn energy_expansion(ctx: &FunctionalContext, x: &[f64], lambda: f64, eps: f64) -> Result<f64> {
    Ok(energy_terms(ctx, x, lambda, eps)?.value())
}

/// Summands of `∂J/∂λ`: `value = prefactor·(delta_k + robin + eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradTerms {
    pub prefactor: f64,
    pub delta_k: f64,
    pub robin: f64,
    pub eps: f64,
}

impl GradTerms {
    pub fn value(&self) -> f64 {
        self.prefactor * (self.delta_k + self.robin + self.eps)
    }
}

pub fn grad_terms(ctx: &FunctionalContext, x: &[f64], lambda: f64, eps: f64) -> Result<GradTerms> {
    let n = ctx.dim.nf();
    let p = ctx.exponent();
    let c = &ctx.constants;
    let k = ctx.k_at(x);
    let h = ctx.robin(x)?;
    Ok(GradTerms {
        prefactor: (c.sn * k).powf(-2.0 / (p + 1.0 - eps)),
        delta_k: c.c2 * (n - 4.0) * ctx.laplacian_k(x) / (n * n * k * lambda.powi(3)),
        robin: -c.c1 * (n - 4.0) * h / lambda.powf(n - 3.0),
        eps: (n - 4.0).powi(2) * c.sn * eps / (2.0 * n * lambda),
    })
}

pub fn grad_expansion(ctx: &FunctionalContext, x: &[f64], lambda: f64, eps: f64) -> Result<f64> {
    Ok(grad_terms(ctx, x, lambda, eps)?.value())
}

/// Richardson-refined central difference of `energy_direct` in `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradDirect {
    pub value: f64,
    /// `|D(h/2) - D(h)|` for the two raw central differences.
    pub step_change: f64,
}

pub fn grad_direct(ctx: &FunctionalContext, x: &[f64], lambda: f64, eps: f64) -> Result<GradDirect> {
    let h = lambda * FD_STEP;
    let central = |h: f64| -> Result<f64> {
        Ok((energy_direct(ctx, x, lambda + h, eps)? - energy_direct(ctx, x, lambda - h, eps)?) / (2.0 * h))
    };
    let coarse = central(h)?;
    let fine = central(h / 2.0)?;
    Ok(GradDirect { value: (4.0 * fine - coarse) / 3.0, step_change: (fine - coarse).abs() })
}

/// Which closed-form expansion a report measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formula {
    /// `J_ε(Pδ)`.
    Energy,
    /// `‖Pδ‖²`.
    ProjectedNorm,
    /// `l_ε(Pδ)`.
    LEps,
    /// `∂J_ε(Pδ)/∂λ`.
    GradLambda,
    /// `∫K δ^{p+1-ε}`.
    PowerIntegral,
    /// `∫K δ^{p-ε} φ`.
    CorrectionPairing,
    /// `∫K δ^{p-ε} ∂δ/∂λ`.
    RatePairing,
    /// `∫K δ^{p-1-ε} φ ∂δ/∂λ`.
    CorrectionRateCross,
    /// `∫K δ^{p-ε} ∂φ/∂λ`.
    CorrectionRatePairing,
}

impl Formula {
    pub const ALL: [Formula; 9] = [
        Formula::Energy,
        Formula::ProjectedNorm,
        Formula::LEps,
        Formula::GradLambda,
        Formula::PowerIntegral,
        Formula::CorrectionPairing,
        Formula::RatePairing,
        Formula::CorrectionRateCross,
        Formula::CorrectionRatePairing,
    ];

    pub const INTEGRALS: [Formula; 5] = [
        Formula::PowerIntegral,
        Formula::CorrectionPairing,
        Formula::RatePairing,
        Formula::CorrectionRateCross,
        Formula::CorrectionRatePairing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Formula::Energy => "energy",
            Formula::ProjectedNorm => "projected-norm",
            Formula::LEps => "l-eps",
            Formula::GradLambda => "grad-lambda",
            Formula::PowerIntegral => "power-integral",
            Formula::CorrectionPairing => "correction-pairing",
            Formula::RatePairing => "rate-pairing",
            Formula::CorrectionRateCross => "correction-rate-cross",
            Formula::CorrectionRatePairing => "correction-rate-pairing",
        }
    }

    /// Exponent of `λ` in the leading dropped remainder (`d` fixed).
    pub fn claimed_order(self, dim: Dimension) -> f64 {
        let n = dim.nf();
        match self {
            Formula::Energy => {
                let mut order = -(n - 3.0);
                if dim.n() < 8 {
                    order = order.max(-2.0 * (n - 4.0));
                }
                order
            }
            Formula::ProjectedNorm => -(n - 2.0),
            Formula::LEps => {
                let k = ((dim.n() - 4) / 2) as f64;
                -(n - 4.0).min(2.0 * k + 2.0)
            }
            Formula::GradLambda => {
                let mut order = -(n - 2.0);
                if dim.n() < 8 {
                    order = order.max(-(2.0 * n - 7.0));
                }
                order
            }
            Formula::PowerIntegral => -n,
            Formula::CorrectionPairing => -(n - 2.0),
            Formula::RatePairing => -(n - 2.0),
            Formula::CorrectionRateCross | Formula::CorrectionRatePairing => -(n - 1.0),
        }
    }
}

impl std::fmt::Display for Formula {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Formula {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Formula::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown formula `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionReport {
    pub formula: Formula,
    pub x: Vec<f64>,
    pub lambda: f64,
    pub eps: f64,
    pub n: usize,
    pub k: String,
    pub direct: f64,
    pub expansion: f64,
    pub residual: f64,
    /// Exponent of `λ` claimed for the remainder.
    pub claimed_next_order: f64,
    pub fitted_slope: Option<f64>,
    /// Error-envelope value, for formulas that come with one.
    pub envelope: Option<f64>,
    /// `|D(h/2) - D(h)|` of the finite-difference gradient.
    pub step_change: Option<f64>,
    pub lambda_d: f64,
    pub flagged: bool,
}

impl ExpansionReport {
    fn new(ctx: &FunctionalContext, formula: Formula, x: &[f64], lambda: f64, eps: f64, direct: f64, expansion: f64) -> Self {
        let lambda_d = ctx.lambda_d(x, lambda);
        ExpansionReport {
            formula,
            x: x.to_vec(),
            lambda,
            eps,
            n: ctx.dim.n(),
            k: ctx.k.to_string(),
            direct,
            expansion,
            residual: (direct - expansion).abs(),
            claimed_next_order: formula.claimed_order(ctx.dim),
            fitted_slope: None,
            envelope: None,
            step_change: None,
            lambda_d,
            flagged: lambda_d < MIN_LAMBDA_D,
        }
    }

    /// `residual / envelope`.
    pub fn envelope_ratio(&self) -> Option<f64> {
        self.envelope.map(|e| self.residual / e)
    }
}

/// Least-squares slope of `log y` against `log x`; `None` unless at least
/// two points have positive coordinates.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let len = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / len;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / len;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn energy_check(ctx: &FunctionalContext, x: &[f64], lambda: f64, eps: f64) -> Result<ExpansionReport> {
    let direct = energy_direct(ctx, x, lambda, eps)?;
    let expansion = energy_expansion(ctx, x, lambda, eps)?;
    Ok(ExpansionReport::new(ctx, Formula::Energy, x, lambda, eps, direct, expansion))
}

/// `‖Pδ‖²` against `S_n - c_1 H(x,x)/λ^{n-4}`.
pub fn norm_check(ctx: &FunctionalContext, x: &[f64], lambda: f64) -> Result<ExpansionReport> {
    let n = ctx.dim.nf();
    let c = &ctx.constants;
    let direct = ctx.projected_norm_sq(x, lambda)?;
    let expansion = c.sn - c.c1 * ctx.robin(x)? / lambda.powf(n - 4.0);
    Ok(ExpansionReport::new(ctx, Formula::ProjectedNorm, x, lambda, 0.0, direct, expansion))
}

/// Error bracket of the `l_ε` expansion.
pub fn l_eps_envelope(ctx: &FunctionalContext, x: &[f64], lambda: f64, eps: f64) -> f64 {
    let n = ctx.dim.n();
    let k = ctx.k_index();
    let mut env = lambda.powi(-(n as i32 - 4)) + eps * lambda.ln().abs() + lambda.powi(-(2 * k as i32 + 2));
    env += (2..=n - 4).map(|j| ctx.k.derivative_norm(x, j) / lambda.powi(j as i32)).sum::<f64>();
    env += (1..=k).map(|j| ctx.k.derivative_norm(x, j).powi(2) / lambda.powi(2 * j as i32)).sum::<f64>();
    env
}

/// `l_ε(Pδ)` against `1/K(x)`.
pub fn l_eps_expansion_check(ctx: &FunctionalContext, x: &[f64], lambda: f64, eps: f64) -> Result<ExpansionReport> {
    let direct = l_eps_direct(ctx, x, lambda, eps)?;
    let mut r = ExpansionReport::new(ctx, Formula::LEps, x, lambda, eps, direct, 1.0 / ctx.k_at(x));
    r.envelope = Some(l_eps_envelope(ctx, x, lambda, eps));
    r.flagged |= 1.0 - norm(x) < STANDING_DISTANCE;
    Ok(r)
}

pub fn grad_lambda_check(ctx: &FunctionalContext, x: &[f64], lambda: f64, eps: f64) -> Result<ExpansionReport> {
    let direct = grad_direct(ctx, x, lambda, eps)?;
    let expansion = grad_expansion(ctx, x, lambda, eps)?;
    let mut r = ExpansionReport::new(ctx, Formula::GradLambda, x, lambda, eps, direct.value, expansion);
    r.step_change = Some(direct.step_change);
    r.flagged |= 1.0 - norm(x) < STANDING_DISTANCE;
    Ok(r)
}

/// Leading terms of the bubble/correction integrals.
pub fn integral_expansion(ctx: &FunctionalContext, formula: Formula, x: &[f64], lambda: f64, eps: f64) -> Result<f64> {
    let n = ctx.dim.nf();
    let m = ctx.dim.m();
    let c = &ctx.constants;
    let k = ctx.k_at(x);
    let dk = ctx.laplacian_k(x);
    let value = match formula {
        Formula::PowerIntegral => {
            k * c.sn + c.c2 * dk / (2.0 * n * lambda * lambda) - eps * k * c.sn * (m * lambda.ln() + c.c3 / c.sn)
        }
        Formula::CorrectionPairing => c.c1 * k * ctx.robin(x)? / lambda.powf(n - 4.0),
        Formula::RatePairing => {
            -k * (n - 4.0).powi(2) * c.sn * eps / (4.0 * n * lambda)
                - (n - 4.0) * c.c2 * dk / (2.0 * n * n * lambda.powi(3))
        }
        Formula::CorrectionRateCross => {
            -((n - 4.0).powi(2) / (2.0 * (n + 4.0))) * c.c1 * k * ctx.robin(x)? / lambda.powf(n - 3.0)
        }
        Formula::CorrectionRatePairing => -((n - 4.0) / 2.0) * c.c1 * k * ctx.robin(x)? / lambda.powf(n - 3.0),
        other => unreachable!("{other} is not a bubble integral"),
    };
    Ok(value)
}

/// Direct quadrature of the bubble/correction integrals.
pub fn integral_direct(ctx: &FunctionalContext, formula: Formula, x: &[f64], lambda: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let p = ctx.exponent();
    let (b, phi) = ctx.projected(x, lambda)?;
    let c = norm(x);
    let kk = |rho: f64, tau: f64| ctx.k_offset(c, rho, tau);
    match formula {
        Formula::PowerIntegral => ctx.integrate(x, lambda, |r, t| kk(r, t) * b.eval_radial(r).powf(p + 1.0 - eps)),
        Formula::CorrectionPairing => {
            ctx.integrate(x, lambda, |r, t| kk(r, t) * b.eval_radial(r).powf(p - eps) * phi.phi_offset(r, t))
        }
        Formula::RatePairing => {
            ctx.integrate(x, lambda, |r, t| kk(r, t) * b.eval_radial(r).powf(p - eps) * b.radial_derivs(r).0)
        }
        Formula::CorrectionRateCross => ctx.integrate(x, lambda, |r, t| {
            kk(r, t) * b.eval_radial(r).powf(p - 1.0 - eps) * phi.phi_offset(r, t) * b.radial_derivs(r).0
        }),
        Formula::CorrectionRatePairing => {
            ctx.integrate(x, lambda, |r, t| kk(r, t) * b.eval_radial(r).powf(p - eps) * phi.dphi_offset(r, t))
        }
        other => unreachable!("{other} is not a bubble integral"),
    }
}

/// One of the five bubble/correction integrals against its leading terms.
pub fn integral_check(
    ctx: &FunctionalContext,
    formula: Formula,
    x: &[f64],
    lambda: f64,
    eps: f64,
) -> Result<ExpansionReport> {
    assert!(Formula::INTEGRALS.contains(&formula), "{formula} is not a bubble integral");
    let direct = integral_direct(ctx, formula, x, lambda, eps)?;
    let expansion = integral_expansion(ctx, formula, x, lambda, eps)?;
    Ok(ExpansionReport::new(ctx, formula, x, lambda, eps, direct, expansion))
}

pub fn check(ctx: &FunctionalContext, formula: Formula, x: &[f64], lambda: f64, eps: f64) -> Result<ExpansionReport> {
    match formula {
        Formula::Energy => energy_check(ctx, x, lambda, eps),
        Formula::ProjectedNorm => norm_check(ctx, x, lambda),
        Formula::LEps => l_eps_expansion_check(ctx, x, lambda, eps),
        Formula::GradLambda => grad_lambda_check(ctx, x, lambda, eps),
        f => integral_check(ctx, f, x, lambda, eps),
    }
}

/// Runs `formula` over a `λ` sweep and attaches the fitted residual slope
/// to every report.
pub fn sweep(
    ctx: &FunctionalContext,
    formula: Formula,
    x: &[f64],
    lambdas: &[f64],
    eps: f64,
) -> Result<Vec<ExpansionReport>> {
    let mut reports = lambdas
        .iter()
        .map(|&l| check(ctx, formula, x, l, eps))
        .collect::<Result<Vec<_>>>()?;
    let residuals: Vec<f64> = reports.iter().map(|r| r.residual).collect();
    let slope = fit_loglog(lambdas, &residuals);
    reports.iter_mut().for_each(|r| r.fitted_slope = slope);
    Ok(reports)
}

/// Pairing-bound envelope `ε + Σ|D^jK|/λ^j + λ^{-(k+1)} + (λd)^{-((n-4)/2+θ)}`.
pub fn pairing_envelope(ctx: &FunctionalContext, x: &[f64], lambda: f64, eps: f64) -> f64 {
    let k = ctx.k_index();
    let m = ctx.dim.m();
    eps + (1..=k).map(|j| ctx.k.derivative_norm(x, j) / lambda.powi(j as i32)).sum::<f64>()
        + lambda.powi(-(k as i32 + 1))
        + ctx.lambda_d(x, lambda).powf(-(m + PAIRING_THETA))
}

/// Largest admitted violation of the orthogonality constraints, relative
/// to `‖v‖` times the constraint direction norm.
pub const CONSTRAINT_TOL: f64 = 1e-8;

/// `|∫K (Pδ)^{p-ε} v| / (envelope · ‖v‖)`, zero for `v = 0`.
pub fn v_pairing_bound_check(ctx: &FunctionalContext, v: &GalerkinField) -> Result<f64> {
    let violation = v.constraint_violation();
    if violation > CONSTRAINT_TOL {
        return Err(ExpansionError::ConstraintViolation { violation });
    }
    let norm = v.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let env = pairing_envelope(ctx, v.center(), v.rate(), v.eps());
    Ok(v.pairing().abs() / (env * norm))
}
