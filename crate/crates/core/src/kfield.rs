//! Positive radial coefficient fields `K(y) = g(|y|²)`.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum KFieldError {
    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("K = {value} is not positive at |y| = {radius} on the closed unit ball")]
    NotPositive { radius: f64, value: f64 },
}

/// Radial profile `g` with `K(y) = g(|y|²)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KField {
    /// `K ≡ c`.
    Const { c: f64 },
    /// `K = a + b|y|²`.
    Quad { a: f64, b: f64 },
    /// `K = 1 + A exp(-|y|²/s²)`.
    Gauss { amp: f64, width: f64 },
    /// `K = Σ c_k |y|^{2k}`.
    Poly { coeffs: Vec<f64> },
}

impl KField {
    pub fn constant(c: f64) -> Result<Self, KFieldError> {
        KField::Const { c }.validated()
    }

    pub fn one() -> Self {
        KField::Const { c: 1.0 }
    }

    /// Rejects fields that are not positive on the closed unit ball.
    pub fn validated(self) -> Result<Self, KFieldError> {
        const SAMPLES: usize = 2000;
        for i in 0..=SAMPLES {
            let u = i as f64 / SAMPLES as f64;
            let value = self.profile(u, 0);
            if !(value > 0.0) {
                return Err(KFieldError::NotPositive { radius: u.sqrt(), value });
            }
        }
        Ok(self)
    }

    /// `g^{(k)}(u)`.
    pub fn profile(&self, u: f64, k: usize) -> f64 {
        match self {
            KField::Const { c } => {
                if k == 0 {
                    *c
                } else {
                    0.0
                }
            }
            KField::Quad { a, b } => match k {
                0 => a + b * u,
                1 => *b,
                _ => 0.0,
            },
            KField::Gauss { amp, width } => {
                let s2 = width * width;
                let e = amp * (-u / s2).exp() * (-1.0 / s2).powi(k as i32);
                if k == 0 {
                    1.0 + e
                } else {
                    e
                }
            }
            KField::Poly { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(k)
                .map(|(i, c)| c * falling(i, k) * u.powi((i - k) as i32))
                .sum(),
        }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.profile(norm_sq(y), 0)
    }

    pub fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let g1 = self.profile(norm_sq(y), 1);
        y.iter().map(|v| 2.0 * g1 * v).collect()
    }

    pub fn laplacian(&self, y: &[f64]) -> f64 {
        let u = norm_sq(y);
        4.0 * u * self.profile(u, 2) + 2.0 * y.len() as f64 * self.profile(u, 1)
    }

    /// `d^j/dt^j K(x + t v)` at `t = 0`, by composing Taylor series.
    pub fn directional_derivative(&self, x: &[f64], v: &[f64], j: usize) -> f64 {
        let u0 = norm_sq(x);
        let xv: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
        // w(t) = u(t) - u0 = 2(x·v) t + |v|² t²
        let mut w = vec![0.0; j + 1];
        if j >= 1 {
            w[1] = 2.0 * xv;
        }
        if j >= 2 {
            w[2] = norm_sq(v);
        }
        let mut acc = vec![0.0; j + 1];
        let mut power = vec![0.0; j + 1];
        power[0] = 1.0;
        let mut factorial = 1.0;
        for k in 0..=j {
            if k > 0 {
                power = series_mul(&power, &w);
                factorial *= k as f64;
            }
            let gk = self.profile(u0, k) / factorial;
            if gk != 0.0 {
                for (a, p) in acc.iter_mut().zip(&power) {
                    *a += gk * p;
                }
            }
        }
        acc[j] * (1..=j).map(|i| i as f64).product::<f64>()
    }

    /// `|D^j K(x)| = max_{|v|=1} |D^j K(x)[v,…,v]|`, over the plane of `x`
    /// and one orthogonal direction (exact for radial fields).
    pub fn derivative_norm(&self, x: &[f64], j: usize) -> f64 {
        let n = x.len();
        let r = norm_sq(x).sqrt();
        let e1: Vec<f64> = if r > 0.0 {
            x.iter().map(|v| v / r).collect()
        } else {
            let mut e = vec![0.0; n];
            e[0] = 1.0;
            e
        };
        let mut e2 = vec![0.0; n];
        let k = if e1[0].abs() < 0.9 { 0 } else { 1 };
        e2[k] = 1.0;
        let proj = e1[k];
        for (a, b) in e2.iter_mut().zip(&e1) {
            *a -= proj * b;
        }
        let l = norm_sq(&e2).sqrt();
        e2.iter_mut().for_each(|a| *a /= l);
        (0..=180)
            .map(|i| {
                let th = std::f64::consts::PI * i as f64 / 180.0;
                let v: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| th.cos() * a + th.sin() * b).collect();
                self.directional_derivative(x, &v, j).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn is_constant(&self) -> bool {
        match self {
            KField::Const { .. } => true,
            KField::Quad { b, .. } => *b == 0.0,
            KField::Gauss { amp, .. } => *amp == 0.0,
            KField::Poly { coeffs } => coeffs.iter().skip(1).all(|c| *c == 0.0),
        }
    }

    /// `K(λ y)` evaluated radially: `g(r²)`.
    pub fn radial(&self, r: f64) -> f64 {
        self.profile(r * r, 0)
    }
}

fn norm_sq(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum()
}

fn falling(i: usize, k: usize) -> f64 {
    (0..k).map(|m| (i - m) as f64).product()
}

fn series_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let len = a.len();
    let mut out = vec![0.0; len];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate().take(len - i) {
            out[i + j] += x * y;
        }
    }
    out
}

impl fmt::Display for KField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KField::Const { c } => write!(f, "const:{c}"),
            KField::Quad { a, b } => write!(f, "quad:{a},{b}"),
            KField::Gauss { amp, width } => write!(f, "gauss:{amp},{width}"),
            KField::Poly { coeffs } => {
                let parts: Vec<String> = coeffs.iter().map(|c| c.to_string()).collect();
                write!(f, "poly:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for KField {
    type Err = KFieldError;

    /// `const:c` | `quad:a,b` | `gauss:A,s` | `poly:c0,c1,…` (powers of `|y|²`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let colon = s.find(':').ok_or_else(|| KFieldError::Parse {
            pos: s.len(),
            msg: "expected '<family>:<parameters>'".into(),
        })?;
        let family = &s[..colon];
        let mut numbers = Vec::new();
        let mut start = colon + 1;
        for piece in s[colon + 1..].split(',') {
            let trimmed = piece.trim();
            let value: f64 = trimmed.parse().map_err(|_| KFieldError::Parse {
                pos: start,
                msg: format!("'{trimmed}' is not a number"),
            })?;
            if !value.is_finite() {
                return Err(KFieldError::Parse { pos: start, msg: format!("'{trimmed}' is not finite") });
            }
            numbers.push(value);
            start += piece.len() + 1;
        }
        let arity = |want: usize| -> Result<(), KFieldError> {
            if numbers.len() == want {
                Ok(())
            } else {
                Err(KFieldError::Parse {
                    pos: colon + 1,
                    msg: format!("'{family}' takes {want} parameter(s), got {}", numbers.len()),
                })
            }
        };
        let field = match family {
            "const" => {
                arity(1)?;
                KField::Const { c: numbers[0] }
            }
            "quad" => {
                arity(2)?;
                KField::Quad { a: numbers[0], b: numbers[1] }
            }
            "gauss" => {
                arity(2)?;
                if numbers[1] <= 0.0 {
                    return Err(KFieldError::Parse { pos: colon + 1, msg: "gaussian width must be positive".into() });
                }
                KField::Gauss { amp: numbers[0], width: numbers[1] }
            }
            "poly" => KField::Poly { coeffs: numbers },
            other => {
                return Err(KFieldError::Parse { pos: 0, msg: format!("unknown family '{other}'") });
            }
        };
        field.validated()
    }
}
