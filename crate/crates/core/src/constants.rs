//! Universal constants `S_n`, `c_1`, `c_2`, `c_3` of the bubble family.
//!
//! Closed forms use the master integral
//! `I(s) = ∫_{R^n} (1+|y|²)^{-s} dy = π^{n/2} Γ(s - n/2) / Γ(s)`.

use serde::Serialize;
use statrs::function::gamma::{digamma, ln_gamma};
use thiserror::Error;

use crate::bubble::{Bubble, Dimension};
use crate::quadrature::{integrate_radial, sphere_area, IntegralResult, QuadratureError, QuadratureSpec, RadialRange};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConstantsError {
    #[error("quadrature for {constant} did not converge: {source}")]
    Nonconvergence {
        constant: &'static str,
        #[source]
        source: QuadratureError,
    },
}

impl ConstantsError {
    pub fn best_estimate(&self) -> Option<&IntegralResult> {
        match self {
            ConstantsError::Nonconvergence { source, .. } => source.best_estimate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniversalConstants {
    pub dim: Dimension,
    pub c0: f64,
    /// `S_n = ∫ δ^{p+1}`.
    pub sn: f64,
    /// `c_1 = c_0^{p+1} ∫ (1+|y|²)^{-(n+4)/2}`.
    pub c1: f64,
    /// `c_2 = ∫ |y|² δ^{p+1}`.
    pub c2: f64,
    /// `c_3 = ∫ δ^{p+1} log δ`.
    pub c3: f64,
    pub method: Method,
}

/// `I(s)` for `s > n/2`.
pub fn master_integral(dim: Dimension, s: f64) -> f64 {
    let h = dim.nf() / 2.0;
    (h * std::f64::consts::PI.ln() + ln_gamma(s - h) - ln_gamma(s)).exp()
}

pub fn closed_form_constants(dim: Dimension) -> UniversalConstants {
    let n = dim.nf();
    let c0 = dim.c0();
    let lead = c0.powf(dim.critical_exponent() + 1.0);
    let i = |s: f64| master_integral(dim, s);
    let sn = lead * i(n);
    let c1 = lead * i((n + 4.0) / 2.0);
    let c2 = lead * (i(n - 1.0) - i(n));
    let c3 = c0.ln() * sn - dim.m() * lead * i(n) * (digamma(n) - digamma(n / 2.0));
    UniversalConstants { dim, c0, sn, c1, c2, c3, method: Method::ClosedForm }
}

pub fn quadrature_constants(dim: Dimension, tol: f64) -> Result<UniversalConstants, ConstantsError> {
    let spec = QuadratureSpec::new(dim, tol)
        .map_err(|source| ConstantsError::Nonconvergence { constant: "spec", source })?;
    let b = Bubble::new(dim, vec![0.0; dim.n()], 1.0).expect("unit bubble is valid");
    let p = dim.critical_exponent();
    let area = sphere_area(dim.n() - 1);
    let radial = |name: &'static str, f: &dyn Fn(f64) -> f64| {
        integrate_radial(f, 0.0, RadialRange::WholeSpace, &spec)
            .map(|r| r.value * area)
            .map_err(|source| ConstantsError::Nonconvergence { constant: name, source })
    };
    let sn = radial("S_n", &|r| b.eval_radial(r).powf(p + 1.0))?;
    let c1 = radial("c_1", &|r| b.c0() * b.eval_radial(r).powf(p))?;
    let c2 = radial("c_2", &|r| r * r * b.eval_radial(r).powf(p + 1.0))?;
    let c3 = radial("c_3", &|r| {
        let d = b.eval_radial(r);
        d.powf(p + 1.0) * d.ln()
    })?;
    Ok(UniversalConstants { dim, c0: dim.c0(), sn, c1, c2, c3, method: Method::Quadrature })
}

/// Relative differences `(S_n, c_1, c_2, c_3)` between two constant sets.
pub fn relative_deltas(a: &UniversalConstants, b: &UniversalConstants) -> [f64; 4] {
    let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
    [rel(a.sn, b.sn), rel(a.c1, b.c1), rel(a.c2, b.c2), rel(a.c3, b.c3)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SobolevQuotient {
    pub quotient: f64,
    pub expected: f64,
}

/// `‖Δδ_{0,λ}‖² / |δ_{0,λ}|²_{L^{p+1}}` by quadrature against `S_n^{4/n}`.
pub fn sobolev_quotient_at(dim: Dimension, lambda: f64, tol: f64) -> Result<SobolevQuotient, ConstantsError> {
    let b = Bubble::new(dim, vec![0.0; dim.n()], lambda).expect("positive rate");
    let spec = QuadratureSpec::new(dim, tol)
        .and_then(|s| s.with_rate(lambda))
        .map_err(|source| ConstantsError::Nonconvergence { constant: "spec", source })?;
    let p = dim.critical_exponent();
    let run = |name: &'static str, f: &dyn Fn(f64) -> f64| {
        integrate_radial(f, 0.0, RadialRange::WholeSpace, &spec)
            .map(|r| r.value)
            .map_err(|source| ConstantsError::Nonconvergence { constant: name, source })
    };
    let lap = run("|Δδ|²", &|r| b.laplacian_radial(r).powi(2))?;
    let pow = run("δ^{p+1}", &|r| b.eval_radial(r).powf(p + 1.0))?;
    let area = sphere_area(dim.n() - 1);
    let quotient = lap * area / (pow * area).powf(2.0 / (p + 1.0));
    let expected = closed_form_constants(dim).sn.powf(4.0 / dim.nf());
    Ok(SobolevQuotient { quotient, expected })
}

pub fn sobolev_quotient_check(dim: Dimension) -> Result<SobolevQuotient, ConstantsError> {
    sobolev_quotient_at(dim, 1.0, 1e-11)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::gamma;
    use std::f64::consts::PI;

    fn dim(n: usize) -> Dimension {
        Dimension::new(n).unwrap()
    }

    #[test]
    fn n5_values() {
        let c = closed_form_constants(dim(5));
        assert!((c.c0 - 105f64.powf(0.125)).abs() < 1e-14);
        let sn = 105f64.powf(1.25) * PI.powf(2.5) * gamma(2.5) / gamma(5.0);
        assert!((c.sn / sn - 1.0).abs() < 1e-13);
        assert!((c.sn - 325.4).abs() < 1.0, "{}", c.sn);
    }

    #[test]
    fn positivity() {
        for n in 5..=16 {
            let c = closed_form_constants(dim(n));
            assert!(c.c0 > 0.0 && c.sn > 0.0 && c.c1 > 0.0 && c.c2 > 0.0);
            assert!(c.c3.is_finite());
        }
    }

    #[test]
    fn master_integral_is_decreasing() {
        for n in 5..=10 {
            let d = dim(n);
            let mut prev = f64::INFINITY;
            for k in 0..60 {
                let s = n as f64 / 2.0 + 0.1 + 0.25 * k as f64;
                let v = master_integral(d, s);
                assert!(v < prev);
                prev = v;
            }
        }
    }

    #[test]
    fn quadrature_agrees_with_closed_forms() {
        for n in 5..=10 {
            let d = dim(n);
            let q = quadrature_constants(d, 1e-10).unwrap();
            let c = closed_form_constants(d);
            for (k, delta) in relative_deltas(&q, &c).iter().enumerate() {
                assert!(*delta <= 1e-8, "n={n} constant {k}: {delta}");
            }
        }
    }

    #[test]
    fn c3_log_weighted_quadrature() {
        for n in [5, 7, 12] {
            let d = dim(n);
            let q = quadrature_constants(d, 1e-10).unwrap();
            let c = closed_form_constants(d);
            assert!((q.c3 / c.c3 - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn unreachable_tolerance_carries_best_estimate() {
        let d = dim(5);
        let e = quadrature_constants(d, 1e-20).unwrap_err();
        let best = e.best_estimate().expect("best estimate");
        let area = sphere_area(4);
        assert!((best.value * area / closed_form_constants(d).sn - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sobolev_quotient() {
        for n in [5, 6] {
            let s = sobolev_quotient_check(dim(n)).unwrap();
            assert!((s.quotient / s.expected - 1.0).abs() <= 1e-6, "n={n}");
        }
        let a = sobolev_quotient_at(dim(5), 1.0, 1e-11).unwrap();
        let b = sobolev_quotient_at(dim(5), 7.0, 1e-11).unwrap();
        assert!((a.quotient / b.quotient - 1.0).abs() < 1e-9);
    }
}
