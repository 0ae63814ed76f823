//! The standard bubble `δ_{x,λ}` and its projection onto the Navier space.

use serde::Serialize;
use thiserror::Error;

use crate::ball_green::CorrectionField;

/// Largest supported dimension (quadrature conditioning degrades beyond).
pub const MAX_DIM: usize = 16;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BubbleError {
    #[error("dimension n = {0} is outside the supported range 5..={MAX_DIM}")]
    Dimension(usize),
    #[error("rate λ = {0} must be positive and finite")]
    Rate(f64),
    #[error("point has {got} coordinates, expected {expected}")]
    Arity { expected: usize, got: usize },
    #[error("stencil step {h} does not resolve the bubble scale 1/λ = {scale}")]
    StepUnderflow { h: f64, scale: f64 },
    #[error("projected bubble has no correction field")]
    CorrectionNotInitialized,
}

/// Space dimension `n ≥ 5` with the critical exponent `p = (n+4)/(n-4)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Dimension(usize);

impl Dimension {
    pub fn new(n: usize) -> Result<Self, BubbleError> {
        if (5..=MAX_DIM).contains(&n) {
            Ok(Dimension(n))
        } else {
            Err(BubbleError::Dimension(n))
        }
    }

    pub fn n(self) -> usize {
        self.0
    }

    pub fn nf(self) -> f64 {
        self.0 as f64
    }

    /// `p = (n+4)/(n-4)`.
    pub fn critical_exponent(self) -> f64 {
        (self.nf() + 4.0) / (self.nf() - 4.0)
    }

    /// `p + 1 = 2n/(n-4)` as a reduced fraction.
    pub fn p_plus_one(self) -> (u64, u64) {
        let (num, den) = (2 * self.0 as u64, self.0 as u64 - 4);
        let g = gcd(num, den);
        (num / g, den / g)
    }

    /// Bubble decay exponent `m = (n-4)/2`.
    pub fn m(self) -> f64 {
        (self.nf() - 4.0) / 2.0
    }

    /// Gegenbauer index `ν = (n-2)/2` of the harmonic expansions.
    pub fn nu(self) -> f64 {
        (self.nf() - 2.0) / 2.0
    }

    /// `c_0 = [(n-4)(n-2)n(n+2)]^{(n-4)/8}`.
    pub fn c0(self) -> f64 {
        let n = self.nf();
        ((n - 4.0) * (n - 2.0) * n * (n + 2.0)).powf((n - 4.0) / 8.0)
    }

    pub fn check_point(self, y: &[f64]) -> Result<(), BubbleError> {
        if y.len() == self.0 {
            Ok(())
        } else {
            Err(BubbleError::Arity { expected: self.0, got: y.len() })
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `δ_{x,λ}(y) = c_0 λ^{(n-4)/2} (1 + λ²|y-x|²)^{-(n-4)/2}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bubble {
    dim: Dimension,
    center: Vec<f64>,
    rate: f64,
}

/// Beyond this value of `λ|y-x|` the bubble is evaluated through logarithms.
const LOG_SPACE_THRESHOLD: f64 = 1e6;

impl Bubble {
    pub fn new(dim: Dimension, center: Vec<f64>, rate: f64) -> Result<Self, BubbleError> {
        dim.check_point(&center)?;
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(BubbleError::Rate(rate));
        }
        Ok(Bubble { dim, center, rate })
    }

    pub fn dim(&self) -> Dimension {
        self.dim
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn c0(&self) -> f64 {
        self.dim.c0()
    }

    pub fn with_rate(&self, rate: f64) -> Result<Self, BubbleError> {
        Bubble::new(self.dim, self.center.clone(), rate)
    }

    /// `c_0 λ^{(n-4)/2}`, the value at the centre.
    pub fn peak(&self) -> f64 {
        self.c0() * self.rate.powf(self.dim.m())
    }

    pub fn distance(&self, y: &[f64]) -> f64 {
        self.center.iter().zip(y).map(|(c, v)| (v - c) * (v - c)).sum::<f64>().sqrt()
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.eval_radial(self.distance(y))
    }

    /// Bubble value at distance `rho` from the centre.
    pub fn eval_radial(&self, rho: f64) -> f64 {
        let m = self.dim.m();
        let z = self.rate * rho;
        if z > LOG_SPACE_THRESHOLD {
            let log = self.c0().ln() + m * self.rate.ln() - m * (2.0 * z.ln() + (1.0 / (z * z)).ln_1p());
            log.exp()
        } else {
            self.peak() * (1.0 + z * z).powf(-m)
        }
    }

    /// `(∂δ/∂λ, ∇_x δ)` at `y`.
    pub fn eval_derivs(&self, y: &[f64]) -> (f64, Vec<f64>) {
        let rho = self.distance(y);
        let (d_lambda, radial) = self.radial_derivs(rho);
        let d_x = self.center.iter().zip(y).map(|(c, v)| radial * (v - c)).collect();
        (d_lambda, d_x)
    }

    /// `∂δ/∂λ` and the factor `q` with `∇_x δ = q (y - x)`, at distance `rho`.
    pub fn radial_derivs(&self, rho: f64) -> (f64, f64) {
        let m = self.dim.m();
        let l = self.rate;
        let w = 1.0 + l * l * rho * rho;
        let delta = self.eval_radial(rho);
        let d_lambda = (m / l) * delta * (2.0 / w - 1.0);
        let q = 2.0 * m * l * l * delta / w;
        (d_lambda, q)
    }

    /// `Δδ` at distance `rho`.
    pub fn laplacian_radial(&self, rho: f64) -> f64 {
        let n = self.dim.nf();
        let m = self.dim.m();
        let l = self.rate;
        let w = 1.0 + l * l * rho * rho;
        self.peak() * l * l * (-2.0 * (n - 4.0) * w.powf(-m - 1.0) - (n - 4.0) * (n - 2.0) * w.powf(-m - 2.0))
    }

    /// `∂(Δδ)/∂λ` at distance `rho`.
    pub fn laplacian_dlambda_radial(&self, rho: f64) -> f64 {
        let n = self.dim.nf();
        let m = self.dim.m();
        let l = self.rate;
        let w = 1.0 + l * l * rho * rho;
        let pre = self.c0() * l.powf(m + 1.0);
        let a = -m * w.powf(-m - 1.0) + 2.0 * (m + 1.0) * w.powf(-m - 2.0);
        let b = -(m + 2.0) * w.powf(-m - 2.0) + 2.0 * (m + 2.0) * w.powf(-m - 3.0);
        pre * (-2.0 * (n - 4.0) * a - (n - 4.0) * (n - 2.0) * b)
    }

    /// Largest `|Δ²δ - δ^p|` over the samples, with `Δ²` taken by finite
    /// differences of `eval` (fourth-order five-point second differences
    /// along each axis, nested twice).
    pub fn verify_entire_equation(&self, samples: &[Vec<f64>], h: f64) -> Result<f64, BubbleError> {
        if h * self.rate > 0.25 {
            return Err(BubbleError::StepUnderflow { h, scale: 1.0 / self.rate });
        }
        let p = self.dim.critical_exponent();
        let mut worst: f64 = 0.0;
        for y in samples {
            self.dim.check_point(y)?;
            let fd = stencil_bilaplacian(&|z: &[f64]| self.eval(z), y, h);
            worst = worst.max((fd - self.eval(y).powf(p)).abs());
        }
        Ok(worst)
    }
}

const D2_WEIGHTS: [(f64, f64); 5] = [(-2.0, -1.0), (-1.0, 16.0), (0.0, -30.0), (1.0, 16.0), (2.0, -1.0)];

/// Fourth-order finite-difference Laplacian of `f` at `y`.
pub fn stencil_laplacian(f: &dyn Fn(&[f64]) -> f64, y: &[f64], h: f64) -> f64 {
    let mut z = y.to_vec();
    let mut acc = 0.0;
    let f0 = f(y);
    for i in 0..y.len() {
        for &(k, w) in &D2_WEIGHTS {
            if k == 0.0 {
                acc += w * f0;
                continue;
            }
            z[i] = y[i] + k * h;
            acc += w * f(&z);
        }
        z[i] = y[i];
    }
    acc / (12.0 * h * h)
}

/// Fourth-order finite-difference bilaplacian (the Laplacian stencil applied twice).
pub fn stencil_bilaplacian(f: &dyn Fn(&[f64]) -> f64, y: &[f64], h: f64) -> f64 {
    stencil_laplacian(&|z: &[f64]| stencil_laplacian(f, z, h), y, h)
}

/// `Pδ = δ - φ` on the unit ball.
#[derive(Debug, Clone)]
pub struct ProjectedBubble {
    bubble: Bubble,
    correction: Option<CorrectionField>,
}

impl ProjectedBubble {
    pub fn new(bubble: Bubble) -> Self {
        ProjectedBubble { bubble, correction: None }
    }

    pub fn with_correction(bubble: Bubble, correction: CorrectionField) -> Self {
        ProjectedBubble { bubble, correction: Some(correction) }
    }

    pub fn bubble(&self) -> &Bubble {
        &self.bubble
    }

    pub fn correction(&self) -> Result<&CorrectionField, BubbleError> {
        self.correction.as_ref().ok_or(BubbleError::CorrectionNotInitialized)
    }

    pub fn eval(&self, y: &[f64]) -> Result<f64, BubbleError> {
        let phi = self.correction()?.phi(y);
        Ok(self.bubble.eval(y) - phi)
    }
}
