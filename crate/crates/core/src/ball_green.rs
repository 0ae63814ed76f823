//! Green's function of `Δ²` with Navier conditions on the unit ball.
//!
//! Every boundary-value problem here has data that is axially symmetric
//! about a single direction `e`, so the solution is a sum of zonal modes
//! `(A_j r^j + B_j r^{j+2}) C_j^ν(t)`, `t = ŷ·e`, `ν = (n-2)/2`.
//! Boundary data of the form `(1 - 2st + s²)^{-b}` with `b = ν-1+k`,
//! `k = 0..3`, is expanded in `C_j^ν` by closed-form coefficients.

use serde::Serialize;
use thiserror::Error;

use crate::bubble::{Bubble, BubbleError, Dimension};
use crate::quadrature::{integrate_radial, sphere_area, QuadratureSpec, RadialRange};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GreenError {
    #[error("harmonic series not converged after {modes} modes (tail bound {tail:e})")]
    SeriesTruncation { modes: usize, tail: f64 },
    #[error("Green's function evaluated at coincident points")]
    CoincidentPoints,
    #[error("point with |y| = {0} is outside the open unit ball")]
    OutsideBall(f64),
    #[error(transparent)]
    Bubble(#[from] BubbleError),
}

pub type Result<T> = std::result::Result<T, GreenError>;

/// Coefficient of `C_j^ν(t)` in `(1 - 2st + s²)^{-(ν-1+k)}`.
pub fn generating_coefficient(nu: f64, k: usize, j: usize, s: f64) -> f64 {
    let jf = j as f64;
    let sj = s.powi(j as i32);
    let one_m = 1.0 - s * s;
    match k {
        0 => (nu - 1.0) * (sj / (jf + nu - 1.0) - sj * s * s / (jf + nu + 1.0)),
        1 => sj,
        2 => (jf + nu) * sj / (nu * one_m),
        3 => {
            (jf + nu) / (nu * (nu + 1.0)) * sj / one_m
                * ((jf + nu + 1.0) / one_m + 2.0 * s * s / (one_m * one_m))
        }
        _ => panic!("generating_coefficient supports k <= 3"),
    }
}

/// `C_0^ν(t), …, C_{count-1}^ν(t)` by the three-term recurrence.
pub fn gegenbauer_values(nu: f64, t: f64, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    let (mut prev, mut cur) = (0.0, 1.0);
    for j in 0..count {
        if j == 0 {
            out.push(1.0);
            continue;
        }
        let jf = j as f64;
        let next = if j == 1 {
            2.0 * nu * t
        } else {
            (2.0 * t * (jf + nu - 1.0) * cur - (jf + 2.0 * nu - 2.0) * prev) / jf
        };
        prev = cur;
        cur = next;
        out.push(next);
    }
    out
}

/// Boundary data `Σ_i coef_i · D_i^{-(ν-1+k_i)} (1 - 2st + s²)^{-(ν-1+k_i)}`.
#[derive(Debug, Clone, Copy)]
struct DataTerm {
    coef: f64,
    k: usize,
    scale: f64,
}

/// Zonal biharmonic field `Σ (A_j r^j + B_j r^{j+2}) C_j^ν(t)` on the unit ball.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeField {
    dim: Dimension,
    axis: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl ModeField {
    /// Solves `Δ²u = 0`, `u = Σ f_j C_j`, `Δu = Σ g_j C_j` on the sphere.
    /// `data(j)` returns `(f_j, g_j)`; `ratio` bounds the geometric decay
    /// of the data coefficients and, with the largest evaluation radius
    /// `radius`, drives the tail estimate.
    fn solve(
        dim: Dimension,
        axis: Vec<f64>,
        data: impl Fn(usize) -> (f64, f64),
        ratio: f64,
        radius: f64,
        limits: &SeriesLimits,
    ) -> Result<Self> {
        let n = dim.nf();
        let two_nu = n - 2.0;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        let mut c_at_one = 1.0;
        let mut rj = 1.0;
        let mut scale: f64 = 0.0;
        let ratio = ratio * radius;
        let mut j = 0;
        loop {
            if j > 0 {
                c_at_one *= (j as f64 + two_nu - 1.0) / j as f64;
                rj *= radius;
            }
            let (f, g) = data(j);
            let bj = g / (4.0 * j as f64 + 2.0 * n);
            a.push(f - bj);
            b.push(bj);
            let size = (f.abs() + bj.abs() + g.abs()) * c_at_one * rj;
            scale = scale.max(size);
            j += 1;
            if ratio == 0.0 && j >= 1 {
                break;
            }
            let tail = size * ratio / (1.0 - ratio).max(1e-300);
            if j >= limits.series_depth && tail <= limits.tol * scale {
                break;
            }
            if j >= limits.max_modes {
                return Err(GreenError::SeriesTruncation { modes: j, tail: tail / scale.max(1e-300) });
            }
        }
        Ok(ModeField { dim, axis, a, b })
    }

    pub fn modes(&self) -> usize {
        self.a.len()
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    fn polar(&self, y: &[f64]) -> (f64, f64) {
        let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 {
            return (0.0, 0.0);
        }
        let t = y.iter().zip(&self.axis).map(|(v, e)| v * e).sum::<f64>() / r;
        (r, t.clamp(-1.0, 1.0))
    }

    /// Value at radius `r`, axial cosine `t`.
    pub fn eval_rt(&self, r: f64, t: f64) -> f64 {
        self.sum_rt(r, t, |j, rj| self.a[j] * rj + self.b[j] * rj * r * r)
    }

    /// `Δu` at radius `r`, axial cosine `t`.
    pub fn laplacian_rt(&self, r: f64, t: f64) -> f64 {
        let n = self.dim.nf();
        self.sum_rt(r, t, |j, rj| (4.0 * j as f64 + 2.0 * n) * self.b[j] * rj)
    }

    fn sum_rt(&self, r: f64, t: f64, term: impl Fn(usize, f64) -> f64) -> f64 {
        let nu = self.dim.nu();
        let (mut prev, mut cur) = (0.0, 1.0);
        let mut rj = 1.0;
        let mut acc = 0.0;
        for j in 0..self.modes() {
            if j > 0 {
                let jf = j as f64;
                let next = if j == 1 {
                    2.0 * nu * t
                } else {
                    (2.0 * t * (jf + nu - 1.0) * cur - (jf + 2.0 * nu - 2.0) * prev) / jf
                };
                prev = cur;
                cur = next;
                rj *= r;
                if rj == 0.0 {
                    break;
                }
            }
            acc += term(j, rj) * cur;
        }
        acc
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let (r, t) = self.polar(y);
        self.eval_rt(r, t)
    }

    pub fn laplacian(&self, y: &[f64]) -> f64 {
        let (r, t) = self.polar(y);
        self.laplacian_rt(r, t)
    }

    /// Value at `c + ρω` where `c = |c|·e` and `τ = ω·e`.
    pub fn eval_offset(&self, center_norm: f64, rho: f64, tau: f64) -> f64 {
        let (r, t) = offset_polar(center_norm, rho, tau);
        self.eval_rt(r, t)
    }
}

fn offset_polar(center_norm: f64, rho: f64, tau: f64) -> (f64, f64) {
    let r2 = center_norm * center_norm + 2.0 * center_norm * rho * tau + rho * rho;
    let r = r2.max(0.0).sqrt();
    if r == 0.0 {
        (0.0, 0.0)
    } else {
        (r, ((center_norm + rho * tau) / r).clamp(-1.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesLimits {
    /// Minimum number of modes kept.
    pub series_depth: usize,
    /// Relative tail bound at which the series stops.
    pub tol: f64,
    pub max_modes: usize,
}

impl Default for SeriesLimits {
    fn default() -> Self {
        SeriesLimits { series_depth: 30, tol: 1e-14, max_modes: 4096 }
    }
}

/// `G` and `H` for `Δ²` with `u = Δu = 0` on the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallGreen {
    dim: Dimension,
    normalization: f64,
    limits: SeriesLimits,
}

impl BallGreen {
    pub fn new(dim: Dimension) -> Self {
        Self::with_limits(dim, SeriesLimits::default())
    }

    pub fn with_limits(dim: Dimension, limits: SeriesLimits) -> Self {
        let normalization = bilaplacian_normalization(dim);
        BallGreen { dim, normalization, limits }
    }

    pub fn dim(&self) -> Dimension {
        self.dim
    }

    pub fn limits(&self) -> SeriesLimits {
        self.limits
    }

    /// `c_n` with `Δ²|y|^{4-n} = c_n δ_0`, measured against a test function.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// `c_n / ((n-4)(n-2)|S^{n-1}|)`.
    pub fn normalization_ratio(&self) -> f64 {
        let n = self.dim.nf();
        self.normalization / ((n - 4.0) * (n - 2.0) * sphere_area(self.dim.n() - 1))
    }

    fn check_inside(&self, y: &[f64]) -> Result<f64> {
        self.dim.check_point(y)?;
        let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r >= 1.0 {
            Err(GreenError::OutsideBall(r))
        } else {
            Ok(r)
        }
    }

    /// `H(x, ·)` as a mode field about the axis `x/|x|`, valid on the closed ball.
    pub fn regular_field(&self, x: &[f64]) -> Result<ModeField> {
        self.regular_field_within(x, 1.0)
    }

    /// `H(x, ·)` truncated for evaluation on `|y| ≤ radius`.
    pub fn regular_field_within(&self, x: &[f64], radius: f64) -> Result<ModeField> {
        let rho = self.check_inside(x)?;
        let axis = unit_axis(x, rho);
        let nu = self.dim.nu();
        let n = self.dim.nf();
        ModeField::solve(
            self.dim,
            axis,
            |j| (generating_coefficient(nu, 0, j, rho), -2.0 * (n - 4.0) * rho.powi(j as i32)),
            rho,
            radius,
            &self.limits,
        )
    }

    pub fn regular_part(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.dim.check_point(y)?;
        let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(self.regular_field_within(x, r.min(1.0))?.eval(y))
    }

    /// `H(x, x)`.
    pub fn robin(&self, x: &[f64]) -> Result<f64> {
        self.regular_part(x, x)
    }

    pub fn green(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.dim.check_point(y)?;
        let d = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if d < 1e-12 {
            return Err(GreenError::CoincidentPoints);
        }
        Ok(d.powf(4.0 - self.dim.nf()) - self.regular_part(x, y)?)
    }

    /// `∇_x H(x, y)` by fourth-order central differences in `x`.
    pub fn grad_x_regular(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let h = 1e-4;
        let mut xs = x.to_vec();
        let mut out = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let mut val = |off: f64| -> Result<f64> {
                xs[i] = x[i] + off;
                let v = self.regular_part(&xs, y);
                xs[i] = x[i];
                v
            };
            let d = (-val(2.0 * h)? + 8.0 * val(h)? - 8.0 * val(-h)? + val(-2.0 * h)?) / (12.0 * h);
            out.push(d);
        }
        Ok(out)
    }

    /// `φ_{x,λ}`: the biharmonic field with `φ = δ`, `Δφ = Δδ` on the sphere.
    pub fn correction_field(&self, b: &Bubble) -> Result<CorrectionField> {
        let rho = self.check_inside(b.center())?;
        let axis = unit_axis(b.center(), rho);
        let geo = SphereGeometry::new(b.rate(), rho);
        let c0 = b.c0();
        let l = b.rate();
        let m = self.dim.m();
        let n = self.dim.nf();
        let nu = self.dim.nu();
        let term = |coef: f64, k: usize| DataTerm { coef, k, scale: geo.d.powf(-(nu - 1.0 + k as f64)) };
        let value = [term(c0 * l.powf(m), 0)];
        let lap = [
            term(-2.0 * (n - 4.0) * c0 * l.powf(m + 2.0), 1),
            term(-(n - 4.0) * (n - 2.0) * c0 * l.powf(m + 2.0), 2),
        ];
        let pre = c0 * l.powf(m + 1.0);
        let d_value = [term(-m * c0 * l.powf(m - 1.0), 0), term(2.0 * m * c0 * l.powf(m - 1.0), 1)];
        let d_lap = [
            term(-2.0 * (n - 4.0) * pre * -m, 1),
            term(-2.0 * (n - 4.0) * pre * 2.0 * (m + 1.0) - (n - 4.0) * (n - 2.0) * pre * -(m + 2.0), 2),
            term(-(n - 4.0) * (n - 2.0) * pre * 2.0 * (m + 2.0), 3),
        ];
        let s = geo.s;
        let expand = |terms: &[DataTerm], j: usize| -> f64 {
            terms.iter().map(|t| t.coef * t.scale * generating_coefficient(nu, t.k, j, s)).sum()
        };
        let phi = ModeField::solve(self.dim, axis.clone(), |j| (expand(&value, j), expand(&lap, j)), s, 1.0, &self.limits)?;
        let dphi =
            ModeField::solve(self.dim, axis, |j| (expand(&d_value, j), expand(&d_lap, j)), s, 1.0, &self.limits)?;
        Ok(CorrectionField { bubble: b.clone(), center_norm: rho, phi, dphi })
    }
}

fn unit_axis(x: &[f64], norm: f64) -> Vec<f64> {
    if norm == 0.0 {
        let mut e = vec![0.0; x.len()];
        e[0] = 1.0;
        e
    } else {
        x.iter().map(|v| v / norm).collect()
    }
}

/// `1 + λ²|y - x|² = D (1 - 2st + s²)` for `|y| = 1`, `t = y·x̂`.
struct SphereGeometry {
    s: f64,
    d: f64,
}

impl SphereGeometry {
    fn new(lambda: f64, rho: f64) -> Self {
        let u = lambda * lambda;
        let a = 1.0 + u * (1.0 + rho * rho);
        let q = u * rho / a;
        let s = 2.0 * q / (1.0 + (1.0 - 4.0 * q * q).max(0.0).sqrt());
        SphereGeometry { s, d: a / (1.0 + s * s) }
    }
}

/// `c_n` from `∫ |y|^{4-n} Δ²ψ dy = c_n ψ(0)` with `ψ = (1 - |y|²)^6`.
fn bilaplacian_normalization(dim: Dimension) -> f64 {
    let n = dim.nf();
    // (1 - r²)^6 = Σ a_k r^{2k}
    let binom = [1.0, 6.0, 15.0, 20.0, 15.0, 6.0, 1.0];
    let coeffs: Vec<f64> = binom.iter().enumerate().map(|(k, c)| if k % 2 == 0 { *c } else { -c }).collect();
    let lap = |c: &[f64]| -> Vec<f64> {
        (1..c.len()).map(|k| c[k] * 2.0 * k as f64 * (2.0 * k as f64 + n - 2.0)).collect()
    };
    let bilap = lap(&lap(&coeffs));
    let poly = |r: f64| bilap.iter().rev().fold(0.0, |acc, c| acc * r * r + c);
    let spec = QuadratureSpec::new(dim, 1e-12).expect("valid tolerance");
    let radial = integrate_radial(poly, 4.0 - n, RadialRange::Finite(1.0), &spec)
        .expect("polynomial integrand is integrated exactly");
    radial.value * sphere_area(dim.n() - 1)
}

/// `φ_{x,λ}` and `∂φ_{x,λ}/∂λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionField {
    bubble: Bubble,
    center_norm: f64,
    phi: ModeField,
    dphi: ModeField,
}

impl CorrectionField {
    /// Below this `λ·d(x, ∂B)` the bubble is outside the asymptotic regime.
    pub const ASYMPTOTIC_LAMBDA_D: f64 = 10.0;

    pub fn bubble(&self) -> &Bubble {
        &self.bubble
    }

    pub fn phi(&self, y: &[f64]) -> f64 {
        self.phi.eval(y)
    }

    pub fn laplacian(&self, y: &[f64]) -> f64 {
        self.phi.laplacian(y)
    }

    pub fn dphi_dlambda(&self, y: &[f64]) -> f64 {
        self.dphi.eval(y)
    }

    /// `φ` at `x + ρω`, `τ = ω·x̂`.
    pub fn phi_offset(&self, rho: f64, tau: f64) -> f64 {
        self.phi.eval_offset(self.center_norm, rho, tau)
    }

    pub fn dphi_offset(&self, rho: f64, tau: f64) -> f64 {
        self.dphi.eval_offset(self.center_norm, rho, tau)
    }

    /// `Δφ` at `x + ρω`.
    pub fn laplacian_offset(&self, rho: f64, tau: f64) -> f64 {
        let (r, t) = offset_polar(self.center_norm, rho, tau);
        self.phi.laplacian_rt(r, t)
    }

    pub fn phi_modes(&self) -> &ModeField {
        &self.phi
    }

    pub fn lambda_d(&self) -> f64 {
        self.bubble.rate() * (1.0 - self.center_norm)
    }

    pub fn outside_asymptotic_regime(&self) -> bool {
        self.lambda_d() < Self::ASYMPTOTIC_LAMBDA_D
    }
}
