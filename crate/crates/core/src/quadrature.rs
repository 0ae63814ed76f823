//! Deterministic quadrature for integrands with an algebraic peak.
//!
//! One-dimensional integrals use globally adaptive Gauss-Kronrod (7/15)
//! bisection on a breakpoint set graded by the peak scale `1/λ`. Integrals
//! over the unit ball use polar coordinates centred on the peak, so the
//! inner ball `B(x, d)` is integrated in the rescaled variable `z = λρ` and
//! the remaining shell out to the sphere in the original variable.
//! Angular directions come from Gauss-Gegenbauer product rules.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::bubble::{Dimension, MAX_DIM};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Error, PartialEq)]
pub enum QuadratureError {
    #[error("evaluation budget of {max_evals} exhausted (best {} ± {})", best.value, best.error_estimate)]
    BudgetExhausted { max_evals: usize, best: IntegralResult },
    #[error("tolerance below the rounding floor (best {} ± {})", best.value, best.error_estimate)]
    ToleranceUnreachable { best: IntegralResult },
    #[error("integrand is not finite at {at}")]
    NonFinite { at: f64 },
    #[error("invalid quadrature spec: {0}")]
    InvalidSpec(String),
}

impl QuadratureError {
    /// Best available estimate, when the failure still produced one.
    pub fn best_estimate(&self) -> Option<&IntegralResult> {
        match self {
            QuadratureError::BudgetExhausted { best, .. } | QuadratureError::ToleranceUnreachable { best } => Some(best),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, QuadratureError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegralResult {
    pub value: f64,
    pub error_estimate: f64,
    pub evals: usize,
}

impl IntegralResult {
    fn zero() -> Self {
        IntegralResult { value: 0.0, error_estimate: 0.0, evals: 0 }
    }

    fn accumulate(&mut self, other: &IntegralResult, weight: f64) {
        self.value += weight * other.value;
        self.error_estimate += weight.abs() * other.error_estimate;
        self.evals += other.evals;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSpec {
    pub dim: Dimension,
    pub tol: f64,
    pub peak_center: Option<Vec<f64>>,
    pub peak_rate: Option<f64>,
    pub max_evals: usize,
    /// Starting number of Gauss nodes per polar angle for ball integrals.
    pub angular_order: usize,
}

impl QuadratureSpec {
    pub const MIN_EVALS: usize = 1000;

    pub fn new(dim: Dimension, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(QuadratureError::InvalidSpec(format!("tol must be positive, got {tol}")));
        }
        Ok(QuadratureSpec {
            dim,
            tol,
            peak_center: None,
            peak_rate: None,
            max_evals: 4_000_000,
            angular_order: 6,
        })
    }

    pub fn with_peak(mut self, center: &[f64], rate: f64) -> Result<Self> {
        if center.len() != self.dim.n() {
            return Err(QuadratureError::InvalidSpec(format!(
                "peak centre has {} coordinates, expected {}",
                center.len(),
                self.dim.n()
            )));
        }
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(QuadratureError::InvalidSpec(format!("peak rate must be positive, got {rate}")));
        }
        self.peak_center = Some(center.to_vec());
        self.peak_rate = Some(rate);
        Ok(self)
    }

    pub fn with_rate(mut self, rate: f64) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(QuadratureError::InvalidSpec(format!("peak rate must be positive, got {rate}")));
        }
        self.peak_rate = Some(rate);
        Ok(self)
    }

    pub fn with_max_evals(mut self, max_evals: usize) -> Result<Self> {
        if max_evals < Self::MIN_EVALS {
            return Err(QuadratureError::InvalidSpec(format!(
                "max_evals must be at least {}, got {max_evals}",
                Self::MIN_EVALS
            )));
        }
        self.max_evals = max_evals;
        Ok(self)
    }

    pub fn with_angular_order(mut self, order: usize) -> Self {
        self.angular_order = order.max(2);
        self
    }

    fn scale(&self) -> f64 {
        self.peak_rate.map_or(1.0, |l| 1.0 / l)
    }
}

/// Upper end of a radial integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadialRange {
    Finite(f64),
    WholeSpace,
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    abs: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Segment> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(QuadratureError::NonFinite { at: center });
    }
    let mut res_g = fc * WG[3];
    let mut res_k = fc * WGK[7];
    let mut res_abs = fc.abs() * WGK[7];
    let mut fv = [(0.0, 0.0); 7];
    for (j, slot) in fv.iter_mut().enumerate() {
        let dx = half * XGK[j];
        let (f1, f2) = (f(center - dx), f(center + dx));
        if !f1.is_finite() {
            return Err(QuadratureError::NonFinite { at: center - dx });
        }
        if !f2.is_finite() {
            return Err(QuadratureError::NonFinite { at: center + dx });
        }
        *slot = (f1, f2);
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for (j, &(f1, f2)) in fv.iter().enumerate() {
        res_asc += WGK[j] * ((f1 - mean).abs() + (f2 - mean).abs());
    }
    let h = half.abs();
    let (value, res_abs, res_asc) = (res_k * half, res_abs * h, res_asc * h);
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Segment { a, b, value, error: err, abs: res_abs })
}

/// Globally adaptive Gauss-Kronrod integration over consecutive panels.
///
/// Stops when the summed error estimate is below `tol` relative to the
/// larger of `|value|` and a thousandth of `∫|f|` (the latter keeps
/// cancelling integrands from running to the budget).
pub fn adaptive_panels<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    tol: f64,
    max_evals: usize,
) -> Result<IntegralResult> {
    let mut heap = BinaryHeap::new();
    let mut done: Vec<Segment> = Vec::new();
    let mut evals = 0usize;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            heap.push(gk15(&f, w[0], w[1])?);
            evals += 15;
        }
    }
    let totals = |heap: &BinaryHeap<Segment>, done: &[Segment]| {
        let mut segs: Vec<&Segment> = heap.iter().chain(done.iter()).collect();
        segs.sort_by(|x, y| x.a.total_cmp(&y.a));
        segs.iter().fold((0.0, 0.0, 0.0), |(v, e, s), g| (v + g.value, e + g.error, s + g.abs))
    };
    loop {
        let (value, error, abs) = totals(&heap, &done);
        let target = tol * value.abs().max(1e-3 * abs);
        if error <= target {
            return Ok(IntegralResult { value, error_estimate: error, evals });
        }
        if heap.is_empty() {
            return Err(QuadratureError::ToleranceUnreachable {
                best: IntegralResult { value, error_estimate: error, evals },
            });
        }
        if evals + 30 > max_evals {
            return Err(QuadratureError::BudgetExhausted {
                max_evals,
                best: IntegralResult { value, error_estimate: error, evals },
            });
        }
        let worst = heap.pop().expect("heap checked non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b || worst.error <= 50.0 * f64::EPSILON * worst.abs {
            done.push(worst);
            continue;
        }
        heap.push(gk15(&f, worst.a, mid)?);
        heap.push(gk15(&f, mid, worst.b)?);
        evals += 30;
    }
}

/// Breakpoints `0, s/8, s/4, …` doubling until `upper`, then `upper`.
fn graded_breaks(scale: f64, upper: f64) -> Vec<f64> {
    let mut breaks = vec![0.0];
    let mut b = scale / 8.0;
    while b < upper * (1.0 - 1e-12) {
        breaks.push(b);
        b *= 2.0;
    }
    breaks.push(upper);
    breaks
}

/// `∫_0^R f(r) r^{n-1+weight} dr` (no solid-angle factor).
///
/// Without a peak rate the grading scale is 1. The whole-space range is
/// compactified with `r = s·tan θ`, `s` the peak scale.
pub fn integrate_radial<F: Fn(f64) -> f64>(
    f: F,
    weight: f64,
    range: RadialRange,
    spec: &QuadratureSpec,
) -> Result<IntegralResult> {
    let power = spec.dim.n() as f64 - 1.0 + weight;
    let scale = spec.scale();
    match range {
        RadialRange::Finite(upper) => {
            if !(upper > 0.0) {
                return Err(QuadratureError::InvalidSpec(format!("radial upper limit {upper} must be positive")));
            }
            let breaks = graded_breaks(scale, upper);
            adaptive_panels(|r| f(r) * r.powf(power), &breaks, spec.tol, spec.max_evals)
        }
        RadialRange::WholeSpace => {
            let mut breaks = vec![0.0];
            breaks.extend((-3..=12).map(|k| (2f64.powi(k)).atan()));
            breaks.push(std::f64::consts::FRAC_PI_2);
            let g = |theta: f64| {
                let (s, c) = theta.sin_cos();
                let r = scale * s / c;
                let v = f(r);
                if v == 0.0 {
                    0.0
                } else {
                    v * r.powf(power) * scale / (c * c)
                }
            };
            adaptive_panels(g, &breaks, spec.tol, spec.max_evals)
        }
    }
}

/// Gauss nodes and weights for `∫_{-1}^{1} g(t) (1-t²)^α dt`, `α ≥ 0`.
pub fn gauss_gegenbauer(order: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(alpha >= 0.0, "gauss_gegenbauer needs alpha >= 0");
    let m = order.max(1);
    let mut jac = DMatrix::<f64>::zeros(m, m);
    for j in 1..m {
        let jf = j as f64;
        let b = (jf * (jf + 2.0 * alpha) / (4.0 * (jf + alpha).powi(2) - 1.0)).sqrt();
        jac[(j, j - 1)] = b;
        jac[(j - 1, j)] = b;
    }
    let mu0 = std::f64::consts::PI.sqrt() * gamma(alpha + 1.0) / gamma(alpha + 1.5);
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrise to remove eigen-solver asymmetry
    let half = m / 2;
    for i in 0..half {
        let j = m - 1 - i;
        let t = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-t, w);
        pairs[j] = (t, w);
    }
    if m % 2 == 1 {
        pairs[half].0 = 0.0;
    }
    pairs.into_iter().unzip()
}

/// Product rule on `S^k ⊂ R^{k+1}` with `order` nodes per polar angle and
/// `2·order` equispaced azimuths.
pub fn sphere_rule(k: usize, order: usize) -> Vec<(Vec<f64>, f64)> {
    assert!(k >= 1);
    if k == 1 {
        let count = 2 * order;
        let w = 2.0 * std::f64::consts::PI / count as f64;
        return (0..count)
            .map(|j| {
                let th = 2.0 * std::f64::consts::PI * j as f64 / count as f64;
                (vec![th.cos(), th.sin()], w)
            })
            .collect();
    }
    let (ts, ws) = gauss_gegenbauer(order, (k as f64 - 2.0) / 2.0);
    let inner = sphere_rule(k - 1, order);
    let mut out = Vec::with_capacity(ts.len() * inner.len());
    for (t, wt) in ts.iter().zip(&ws) {
        let st = (1.0 - t * t).max(0.0).sqrt();
        for (p, wp) in &inner {
            let mut point = Vec::with_capacity(k + 1);
            point.push(*t);
            point.extend(p.iter().map(|c| st * c));
            out.push((point, wt * wp));
        }
    }
    out
}

/// Surface area `|S^{k}|` of the unit sphere in `R^{k+1}`.
pub fn sphere_area(k: usize) -> f64 {
    let h = (k as f64 + 1.0) / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / gamma(h)
}

/// Distance from `c` (inside the unit ball) to the unit sphere along `ω`.
fn exit_distance(c_dot_w: f64, c_norm_sq: f64) -> f64 {
    let disc = c_dot_w * c_dot_w + 1.0 - c_norm_sq;
    -c_dot_w + disc.max(0.0).sqrt()
}

fn ray_breaks(scale: f64, d: f64, exit: f64) -> Vec<f64> {
    let inner = d.min(exit);
    let mut breaks = graded_breaks(scale, inner);
    if exit > inner * (1.0 + 1e-12) {
        let span = exit - inner;
        breaks.push(inner + 0.5 * span);
        breaks.push(exit);
    }
    breaks
}

fn ball_at_order(
    f: &dyn Fn(&[f64]) -> f64,
    spec: &QuadratureSpec,
    center: &[f64],
    order: usize,
    budget: usize,
) -> Result<IntegralResult> {
    let n = spec.dim.n();
    let c_sq: f64 = center.iter().map(|c| c * c).sum();
    let d = 1.0 - c_sq.sqrt();
    let scale = spec.scale();
    let rule = sphere_rule(n - 1, order);
    let mut total = IntegralResult::zero();
    for (omega, w) in &rule {
        let cw: f64 = center.iter().zip(omega).map(|(c, o)| c * o).sum();
        let exit = exit_distance(cw, c_sq);
        let breaks = ray_breaks(scale, d, exit);
        let remaining = budget.saturating_sub(total.evals).max(QuadratureSpec::MIN_EVALS);
        let ray = adaptive_panels(
            |rho| {
                let mut y = [0.0f64; MAX_DIM];
                for i in 0..n {
                    y[i] = center[i] + rho * omega[i];
                }
                f(&y[..n]) * rho.powi(n as i32 - 1)
            },
            &breaks,
            spec.tol,
            remaining,
        )
        .map_err(|e| match e {
            QuadratureError::BudgetExhausted { best, .. } => {
                let mut t = total;
                t.accumulate(&best, *w);
                QuadratureError::BudgetExhausted { max_evals: budget, best: t }
            }
            other => other,
        })?;
        total.accumulate(&ray, *w);
        if total.evals > budget {
            return Err(QuadratureError::BudgetExhausted { max_evals: budget, best: total });
        }
    }
    Ok(total)
}

/// `∫_{B(0,1)} f(y) dy` over the unit ball in the dimension of `spec`.
///
/// The angular order starts at `spec.angular_order` and is raised by two
/// until consecutive orders agree to `tol`; the reported error is the
/// radial error plus the last angular difference.
pub fn integrate_ball(f: &dyn Fn(&[f64]) -> f64, spec: &QuadratureSpec) -> Result<IntegralResult> {
    let n = spec.dim.n();
    let center = spec.peak_center.clone().unwrap_or_else(|| vec![0.0; n]);
    let c_norm = center.iter().map(|c| c * c).sum::<f64>().sqrt();
    if c_norm >= 1.0 {
        return Err(QuadratureError::InvalidSpec(format!("centre |x| = {c_norm} is not inside the unit ball")));
    }
    let mut order = spec.angular_order;
    let mut prev = ball_at_order(f, spec, &center, order, spec.max_evals)?;
    let mut used = prev.evals;
    loop {
        order += 2;
        let budget = spec.max_evals.saturating_sub(used);
        let cur = match ball_at_order(f, spec, &center, order, budget) {
            Ok(r) => r,
            Err(QuadratureError::BudgetExhausted { .. }) => {
                return Err(QuadratureError::BudgetExhausted {
                    max_evals: spec.max_evals,
                    best: IntegralResult {
                        value: prev.value,
                        error_estimate: prev.error_estimate,
                        evals: spec.max_evals,
                    },
                })
            }
            Err(e) => return Err(e),
        };
        used += cur.evals;
        let diff = (cur.value - prev.value).abs();
        let result = IntegralResult {
            value: cur.value,
            error_estimate: cur.error_estimate + diff,
            evals: used,
        };
        if result.error_estimate <= spec.tol * cur.value.abs().max(1e-300) || diff <= 4.0 * cur.error_estimate {
            return Ok(result);
        }
        prev = cur;
    }
}

/// Integral over the unit ball of a field that is symmetric about the
/// axis through the origin and `center_norm · e`.
///
/// `f(ρ, t)` is evaluated at `y = c + ρω`, `t = ω·e`; the polar angle is
/// handled by a Gauss-Gegenbauer rule of `axial_order` nodes checked
/// against half that order.
pub fn integrate_axisymmetric<F: Fn(f64, f64) -> f64>(
    f: F,
    center_norm: f64,
    axial_order: usize,
    spec: &QuadratureSpec,
) -> Result<IntegralResult> {
    let n = spec.dim.n();
    if !(0.0..1.0).contains(&center_norm) {
        return Err(QuadratureError::InvalidSpec(format!("centre |x| = {center_norm} is not inside the unit ball")));
    }
    let d = 1.0 - center_norm;
    let c_sq = center_norm * center_norm;
    let scale = spec.scale();
    let alpha = (n as f64 - 3.0) / 2.0;
    let fiber = sphere_area(n - 2);
    let mut evals = 0usize;
    let mut at_order = |order: usize| -> Result<IntegralResult> {
        let (ts, ws) = gauss_gegenbauer(order, alpha);
        let mut total = IntegralResult::zero();
        for (t, w) in ts.iter().zip(&ws) {
            let exit = exit_distance(center_norm * t, c_sq);
            let breaks = ray_breaks(scale, d, exit);
            let budget = spec.max_evals.saturating_sub(evals).max(QuadratureSpec::MIN_EVALS);
            let ray = adaptive_panels(|rho| f(rho, *t) * rho.powi(n as i32 - 1), &breaks, spec.tol, budget)?;
            evals += ray.evals;
            total.accumulate(&ray, w * fiber);
        }
        Ok(total)
    };
    let coarse = at_order((axial_order / 2).max(2))?;
    let fine = at_order(axial_order)?;
    Ok(IntegralResult {
        value: fine.value,
        error_estimate: fine.error_estimate + (fine.value - coarse.value).abs(),
        evals: coarse.evals + fine.evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubble::{Bubble, Dimension};
    use statrs::function::gamma::gamma;
    use std::f64::consts::PI;

    fn dim(n: usize) -> Dimension {
        Dimension::new(n).unwrap()
    }

    fn master(n: usize, s: f64) -> f64 {
        let h = n as f64 / 2.0;
        PI.powf(h) * gamma(s - h) / gamma(s)
    }

    #[test]
    fn gegenbauer_rule_integrates_polynomials() {
        let (t, w) = gauss_gegenbauer(6, 1.0);
        // ∫ t^4 (1-t^2) dt = 2/5 - 2/7
        let v: f64 = t.iter().zip(&w).map(|(t, w)| w * t.powi(4)).sum();
        assert!((v - (2.0 / 5.0 - 2.0 / 7.0)).abs() < 1e-14);
        let total: f64 = w.iter().sum();
        assert!((total - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn sphere_rule_weights_sum_to_area() {
        for k in 2..=6 {
            let total: f64 = sphere_rule(k, 4).iter().map(|(_, w)| w).sum();
            assert!((total / sphere_area(k) - 1.0).abs() < 1e-13, "k={k}");
        }
    }

    #[test]
    fn unit_five_ball_volume() {
        let spec = QuadratureSpec::new(dim(5), 1e-12).unwrap();
        let r = integrate_ball(&|_| 1.0, &spec).unwrap();
        let exact = 8.0 * PI * PI / 15.0;
        assert!((r.value / exact - 1.0).abs() <= 1e-10, "{}", r.value);
    }

    #[test]
    fn radial_master_integral() {
        let spec = QuadratureSpec::new(dim(5), 1e-13).unwrap();
        let r = integrate_radial(|r| (1.0 + r * r).powi(-5), 0.0, RadialRange::WholeSpace, &spec).unwrap();
        let exact = master(5, 5.0) / sphere_area(4);
        assert!((r.value / exact - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn radial_constant_gives_ball_volume() {
        for n in 5..=10 {
            let spec = QuadratureSpec::new(dim(n), 1e-13).unwrap();
            let r = integrate_radial(|_| 1.0, 0.0, RadialRange::Finite(1.0), &spec).unwrap();
            assert!((r.value * sphere_area(n - 1) - sphere_area(n - 1) / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_integrand_vanishes() {
        let spec = QuadratureSpec::new(dim(5), 1e-10).unwrap();
        let r = integrate_ball(&|y| y[0] * (-y.iter().map(|v| v * v).sum::<f64>()).exp(), &spec).unwrap();
        assert!(r.value.abs() <= r.error_estimate.max(1e-14), "{} ± {}", r.value, r.error_estimate);
    }

    #[test]
    fn peaked_bubble_power_over_ball_approaches_whole_space_value() {
        let d = dim(5);
        let b = Bubble::new(d, vec![0.0; 5], 50.0).unwrap();
        let spec = QuadratureSpec::new(d, 1e-10).unwrap().with_peak(&[0.0; 5], 50.0).unwrap();
        let pp1 = d.critical_exponent() + 1.0;
        let r = integrate_ball(&|y| b.eval(y).powf(pp1), &spec).unwrap();
        let sn = b.c0().powf(pp1) * master(5, 5.0);
        let ratio = r.value / sn;
        assert!(ratio > 0.99 && ratio < 1.0, "{ratio}");
    }

    #[test]
    fn ball_and_radial_agree_on_bubble_power() {
        let d = dim(5);
        let b = Bubble::new(d, vec![0.0; 5], 20.0).unwrap();
        let pp1 = d.critical_exponent() + 1.0;
        let spec = QuadratureSpec::new(d, 1e-10).unwrap().with_peak(&[0.0; 5], 20.0).unwrap();
        let ball = integrate_ball(&|y| b.eval(y).powf(pp1), &spec).unwrap();
        let rad = integrate_radial(|r| b.eval_radial(r).powf(pp1), 0.0, RadialRange::Finite(1.0), &spec).unwrap();
        let rad_val = rad.value * sphere_area(4);
        let tol = 2.0 * (ball.error_estimate + rad.error_estimate * sphere_area(4));
        assert!((ball.value - rad_val).abs() <= tol.max(1e-12 * rad_val), "{} vs {}", ball.value, rad_val);
    }

    #[test]
    fn peak_substitution_does_not_change_the_value() {
        let d = dim(5);
        let x = [0.2, -0.1, 0.0, 0.1, 0.0];
        for lambda in [5.0, 30.0, 100.0] {
            let b = Bubble::new(d, x.to_vec(), lambda).unwrap();
            let pp1 = d.critical_exponent() + 1.0;
            let plain = QuadratureSpec::new(d, 1e-9).unwrap();
            let peaked = plain.clone().with_peak(&x, lambda).unwrap();
            let f = |y: &[f64]| b.eval(y).powf(pp1);
            let a = integrate_ball(&f, &peaked).unwrap();
            // without the peak substitution the ray grading is by the unit scale
            let mut centred = plain.clone();
            centred.peak_center = Some(x.to_vec());
            let c = integrate_ball(&f, &centred).unwrap();
            let tol = a.error_estimate + c.error_estimate;
            assert!((a.value - c.value).abs() <= tol.max(1e-9 * a.value), "λ={lambda}: {} vs {}", a.value, c.value);
        }
    }

    #[test]
    fn axisymmetric_matches_full_ball_off_centre() {
        let d = dim(5);
        let x = [0.3, 0.0, 0.0, 0.0, 0.0];
        let b = Bubble::new(d, x.to_vec(), 8.0).unwrap();
        let k = |y2: f64| 1.0 + 0.5 * y2;
        let spec = QuadratureSpec::new(d, 1e-10).unwrap().with_peak(&x, 8.0).unwrap();
        let full = integrate_ball(&|y| k(y.iter().map(|v| v * v).sum()) * b.eval(y).powi(2), &spec).unwrap();
        let axi = integrate_axisymmetric(
            |rho, t| {
                let y2 = 0.09 + 2.0 * 0.3 * rho * t + rho * rho;
                k(y2) * b.eval_radial(rho).powi(2)
            },
            0.3,
            32,
            &spec,
        )
        .unwrap();
        assert!((full.value / axi.value - 1.0).abs() < 1e-8, "{} vs {}", full.value, axi.value);
    }

    #[test]
    fn halving_tolerance_never_increases_discrepancy() {
        let n = 6;
        let exact = master(n, 5.5) / sphere_area(n - 1);
        let mut last = f64::INFINITY;
        for tol in [1e-4, 5e-5, 2.5e-5, 1.25e-5, 6.25e-6] {
            let spec = QuadratureSpec::new(dim(n), tol).unwrap();
            let r = integrate_radial(|r| (1.0 + r * r).powf(-5.5), 0.0, RadialRange::WholeSpace, &spec).unwrap();
            let err = (r.value - exact).abs();
            assert!(err <= last * (1.0 + 1e-9) + 1e-15, "tol {tol}: {err} > {last}");
            last = err;
        }
    }

    #[test]
    fn unreachable_tolerance_is_reported_with_best_estimate() {
        let spec = QuadratureSpec::new(dim(5), 1e-20).unwrap().with_max_evals(2000).unwrap();
        let e = integrate_radial(|r| (1.0 + r * r).powi(-5), 0.0, RadialRange::WholeSpace, &spec).unwrap_err();
        let best = e.best_estimate().expect("best estimate");
        let exact = master(5, 5.0) / sphere_area(4);
        assert!((best.value / exact - 1.0).abs() < 1e-10);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let spec = QuadratureSpec::new(dim(5), 1e-13).unwrap().with_max_evals(1000).unwrap();
        let e = integrate_radial(|r| (r - 1.0 / 3.0).abs().powf(-0.4), 0.0, RadialRange::Finite(1.0), &spec).unwrap_err();
        assert!(matches!(e, QuadratureError::BudgetExhausted { max_evals: 1000, .. }));
        assert!(e.best_estimate().unwrap().value > 0.0);
    }

    #[test]
    fn small_budget_is_rejected() {
        let spec = QuadratureSpec::new(dim(5), 1e-6).unwrap();
        assert!(spec.with_max_evals(999).is_err());
    }
}
