//! Finite-dimensional surrogate for the correction `v` orthogonal to the
//! projected bubble and its derivatives.
//!
//! Basis functions are `g(ρ) Y(ω)` with `y = x + ρω`, `Y ∈ {1, τ, ω₂}`
//! (`τ = ω·x̂`, `ω₂` a unit direction orthogonal to `x̂`), and
//! `g = z^l (1+z²)^{-(n-4)/2} N_i(s)`, `z = λρ`,
//! `s = log(1+z²)/log(1+Z²)` with `Z = λ d(x, ∂B)`, where `N_i` are clamped
//! cubic B-splines in `s`. The two splines that do not
//! vanish to first order at `ρ = d(x, ∂B)` are dropped, so every basis
//! function extends by zero to an element of the Navier space.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::ball_green::GreenError;
use crate::bubble::{Bubble, BubbleError};
use crate::expansions::{norm, ExpansionError, FunctionalContext};
use crate::quadrature::{gauss_gegenbauer, sphere_area};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GalerkinError {
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
    #[error(transparent)]
    Green(#[from] GreenError),
    #[error(transparent)]
    Bubble(#[from] BubbleError),
    #[error("basis size {0} is below the minimum of 4")]
    BasisSize(usize),
    #[error("quadratic form is not positive on the constrained span (smallest Rayleigh quotient {min_eigenvalue:.3e})")]
    IndefiniteForm { min_eigenvalue: f64 },
    #[error("coefficient vector has length {got}, expected {expected}")]
    Length { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, GalerkinError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Harmonic {
    /// `Y = 1`.
    Radial,
    /// `Y = τ`.
    Axial,
    /// `Y = ω₂`.
    Transverse,
}

impl Harmonic {
    fn degree(self) -> usize {
        match self {
            Harmonic::Radial => 0,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSet {
    All,
    /// Only the degree-one harmonics.
    OddOnly,
}

impl BlockSet {
    fn harmonics(self) -> &'static [Harmonic] {
        match self {
            BlockSet::All => &[Harmonic::Radial, Harmonic::Axial, Harmonic::Transverse],
            BlockSet::OddOnly => &[Harmonic::Axial, Harmonic::Transverse],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GalerkinOptions {
    /// Radial functions per harmonic.
    pub basis_size: usize,
    pub blocks: BlockSet,
    /// Gauss nodes per radial sub-panel.
    pub radial_order: usize,
    /// Polar-angle nodes when `x ≠ 0`.
    pub axial_order: usize,
}

impl GalerkinOptions {
    pub fn new(basis_size: usize) -> Self {
        GalerkinOptions { basis_size, blocks: BlockSet::All, radial_order: 16, axial_order: 24 }
    }

    pub fn odd_only(mut self) -> Self {
        self.blocks = BlockSet::OddOnly;
        self
    }
}

/// Clamped cubic B-splines on `[0, end]` with `intervals` uniform spans.
#[derive(Debug, Clone)]
struct CubicSplines {
    knots: Vec<f64>,
}

impl CubicSplines {
    fn new(end: f64, intervals: usize) -> Self {
        let mut knots = vec![0.0; 3];
        knots.extend((0..=intervals).map(|i| end * i as f64 / intervals as f64));
        knots.extend([end; 3]);
        CubicSplines { knots }
    }

    fn count(&self) -> usize {
        self.knots.len() - 4
    }

    fn breakpoints(&self) -> &[f64] {
        &self.knots[3..self.knots.len() - 3]
    }

    /// Values, first and second derivatives of every spline at `t`.
    fn eval(&self, t: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let k = &self.knots;
        let len = k.len();
        let mut b0: Vec<f64> = (0..len - 1).map(|i| if k[i] <= t && t < k[i + 1] { 1.0 } else { 0.0 }).collect();
        let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
        let raise = |prev: &[f64], deg: usize| -> Vec<f64> {
            (0..prev.len() - 1)
                .map(|i| {
                    ratio(t - k[i], k[i + deg] - k[i]) * prev[i]
                        + ratio(k[i + deg + 1] - t, k[i + deg + 1] - k[i + 1]) * prev[i + 1]
                })
                .collect()
        };
        let derive = |prev: &[f64], deg: usize| -> Vec<f64> {
            (0..prev.len() - 1)
                .map(|i| {
                    deg as f64
                        * (ratio(prev[i], k[i + deg] - k[i]) - ratio(prev[i + 1], k[i + deg + 1] - k[i + 1]))
                })
                .collect()
        };
        if t >= k[len - 1] {
            b0 = vec![0.0; len - 1];
        }
        let b1 = raise(&b0, 1);
        let b2 = raise(&b1, 2);
        let b3 = raise(&b2, 3);
        let d2 = derive(&b2, 3);
        let d1_of_b2 = derive(&b1, 2);
        let dd = derive(&d1_of_b2, 3);
        (b3, d2, dd)
    }
}

/// Assembled matrices for one `(x, λ, ε)`.
#[derive(Debug, Clone)]
pub struct GalerkinSystem {
    x: Vec<f64>,
    lambda: f64,
    eps: f64,
    blocks: Vec<Harmonic>,
    per_block: usize,
    /// `⟨b_i, b_j⟩ = ∫ Δb_i Δb_j`.
    gram: DMatrix<f64>,
    /// `∫ K (Pδ)^{p-1-ε} b_i b_j`.
    weighted: DMatrix<f64>,
    /// `∫ K (Pδ)^{p-ε} b_i`.
    load: DVector<f64>,
    /// Rows `⟨b_i, e_k⟩` for the constraint directions `e_k`.
    constraints: DMatrix<f64>,
    /// Orthonormal basis of the constrained coefficient space.
    null_space: DMatrix<f64>,
    energy: f64,
    norm_sq: f64,
    power: f64,
    exponent: f64,
}

struct RadialNode {
    rho: f64,
    /// `ρ^{n-1} dρ`.
    measure: f64,
    /// `z^{n-1} dz`.
    scaled_measure: f64,
    /// `g` per harmonic degree and spline.
    g: [Vec<f64>; 2],
    /// `L g = g_zz + (n-1) g_z / z - l(l+n-2) g / z²`.
    lg: [Vec<f64>; 2],
}

impl GalerkinSystem {
    pub fn assemble(ctx: &FunctionalContext, x: &[f64], lambda: f64, eps: f64, opts: GalerkinOptions) -> Result<Self> {
        if opts.basis_size < 4 {
            return Err(GalerkinError::BasisSize(opts.basis_size));
        }
        if !(lambda > 0.0) {
            return Err(ExpansionError::Rate(lambda).into());
        }
        let dim = ctx.dim;
        let n = dim.n();
        let nf = dim.nf();
        let m = dim.m();
        let p = dim.critical_exponent();
        let c = norm(x);
        let bubble = Bubble::new(dim, x.to_vec(), lambda)?;
        let phi = ctx.green.correction_field(&bubble)?;
        let d = 1.0 - c;
        let z_max = lambda * d;
        let log_span = (z_max * z_max).ln_1p();
        let splines = CubicSplines::new(1.0, opts.basis_size - 1);
        let per_block = splines.count() - 2;

        let (gl_t, gl_w) = gauss_gegenbauer(opts.radial_order, 0.0);
        let mut nodes = Vec::new();
        for span in splines.breakpoints().windows(2) {
            let za = (span[0] * log_span).exp_m1().sqrt();
            let zb = if span[1] >= 1.0 { z_max } else { (span[1] * log_span).exp_m1().sqrt() };
            let mut lo = za;
            while lo < zb {
                let hi = zb.min((2.0 * lo).max(lo + 0.5));
                for (t, w) in gl_t.iter().zip(&gl_w) {
                    let z = 0.5 * (lo + hi) + 0.5 * (hi - lo) * t;
                    let wz = 0.5 * (hi - lo) * w;
                    nodes.push(radial_node(&splines, per_block, z, wz, lambda, log_span, nf, m));
                }
                lo = hi;
            }
        }

        let (taus, tau_w) = if c == 0.0 { gauss_gegenbauer(2, (nf - 3.0) / 2.0) } else { gauss_gegenbauer(opts.axial_order, (nf - 3.0) / 2.0) };
        let fiber = sphere_area(n - 2);
        let area = sphere_area(n - 1);

        let blocks: Vec<Harmonic> = opts.blocks.harmonics().to_vec();
        let size = blocks.len() * per_block;
        let idx = |b: usize, i: usize| b * per_block + i;
        let mut gram = DMatrix::zeros(size, size);
        let mut weighted = DMatrix::zeros(size, size);
        let mut load = DVector::zeros(size);
        let mut constraints = DMatrix::zeros(4, size);

        for node in &nodes {
            // angular moments of the weights: [1, τ, τ², (1-τ²)/(n-1)]
            let mut wm = [0.0; 4];
            let mut fm = [0.0; 2];
            for (tau, w) in taus.iter().zip(&tau_w) {
                let u = c * c + 2.0 * c * node.rho * tau + node.rho * node.rho;
                let k = ctx.k.profile(u, 0);
                let pd = (bubble.eval_radial(node.rho) - phi.phi_offset(node.rho, *tau)).max(0.0);
                let ww = fiber * w * k * pd.powf(p - 1.0 - eps);
                let fw = fiber * w * k * pd.powf(p - eps);
                wm[0] += ww;
                wm[1] += ww * tau;
                wm[2] += ww * tau * tau;
                wm[3] += ww * (1.0 - tau * tau) / (nf - 1.0);
                fm[0] += fw;
                fm[1] += fw * tau;
            }
            let delta = bubble.eval_radial(node.rho);
            let (d_lambda, q) = bubble.radial_derivs(node.rho);
            let base = p * delta.powf(p - 1.0);
            for (bi, hi) in blocks.iter().enumerate() {
                let li = hi.degree();
                for i in 0..per_block {
                    let gi = node.g[li][i];
                    let lgi = node.lg[li][i];
                    match hi {
                        Harmonic::Radial => {
                            load[idx(bi, i)] += node.measure * gi * fm[0];
                            constraints[(0, idx(bi, i))] += node.measure * gi * delta.powf(p) * area;
                            constraints[(1, idx(bi, i))] += node.measure * gi * base * d_lambda * area;
                        }
                        Harmonic::Axial => {
                            load[idx(bi, i)] += node.measure * gi * fm[1];
                            constraints[(2, idx(bi, i))] += node.measure * gi * base * q * node.rho * area / nf;
                        }
                        Harmonic::Transverse => {
                            constraints[(3, idx(bi, i))] += node.measure * gi * base * q * node.rho * area / nf;
                        }
                    }
                    for (bj, hj) in blocks.iter().enumerate() {
                        let lj = hj.degree();
                        let moment = match (hi, hj) {
                            (Harmonic::Radial, Harmonic::Radial) => wm[0],
                            (Harmonic::Radial, Harmonic::Axial) | (Harmonic::Axial, Harmonic::Radial) => wm[1],
                            (Harmonic::Axial, Harmonic::Axial) => wm[2],
                            (Harmonic::Transverse, Harmonic::Transverse) => wm[3],
                            _ => 0.0,
                        };
                        let angular = if bi == bj { if li == 0 { area } else { area / nf } } else { 0.0 };
                        for j in 0..per_block {
                            let gj = node.g[lj][j];
                            if moment != 0.0 {
                                weighted[(idx(bi, i), idx(bj, j))] += node.measure * gi * gj * moment;
                            }
                            if angular != 0.0 {
                                gram[(idx(bi, i), idx(bj, j))] +=
                                    lambda.powf(4.0 - nf) * node.scaled_measure * lgi * node.lg[lj][j] * angular;
                            }
                        }
                    }
                }
            }
        }

        let null_space = constrained_basis(&constraints);
        let q = p + 1.0 - eps;
        let norm_sq = ctx.projected_norm_sq(x, lambda)?;
        let power = ctx.projected_power(x, lambda, q)?;
        Ok(GalerkinSystem {
            x: x.to_vec(),
            lambda,
            eps,
            blocks,
            per_block,
            gram,
            weighted,
            load,
            constraints,
            null_space,
            energy: norm_sq / power.powf(2.0 / q),
            norm_sq,
            power,
            exponent: p,
        })
    }

    pub fn dimension(&self) -> usize {
        self.gram.nrows()
    }

    pub fn constrained_dimension(&self) -> usize {
        self.null_space.ncols()
    }

    pub fn blocks(&self) -> &[Harmonic] {
        &self.blocks
    }

    pub fn per_block(&self) -> usize {
        self.per_block
    }

    /// Second variation of `J_ε` at `Pδ` in coefficient space.
    pub fn hessian(&self) -> DMatrix<f64> {
        let (j, nn, dd) = (self.energy, self.norm_sq, self.power);
        let pe = self.exponent - self.eps;
        let ff = &self.load * self.load.transpose();
        (&self.gram / nn - &self.weighted * (pe / dd) + ff * ((pe + 3.0) / (dd * dd))) * (2.0 * j)
    }

    /// Smallest Rayleigh quotient of the Hessian, normalised by `2J/‖Pδ‖²`,
    /// over the constrained span.
    pub fn coercivity(&self) -> Result<f64> {
        let z = &self.null_space;
        let scale = self.norm_sq / (2.0 * self.energy);
        let a = z.transpose() * self.hessian() * z * scale;
        let b = z.transpose() * &self.gram * z;
        let chol = Cholesky::new(b).ok_or(GalerkinError::IndefiniteForm { min_eigenvalue: f64::NAN })?;
        let l_inv = chol.l().try_inverse().ok_or(GalerkinError::IndefiniteForm { min_eigenvalue: f64::NAN })?;
        let c = &l_inv * a * l_inv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::new(c);
        Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// Minimiser of the quadratic model of `J_ε(Pδ + v)` over the constrained span.
    pub fn minimize(self: &Arc<Self>) -> Result<GalerkinSolution> {
        let coercivity = self.coercivity()?;
        if !(coercivity > 0.0) {
            return Err(GalerkinError::IndefiniteForm { min_eigenvalue: coercivity });
        }
        let z = &self.null_space;
        let qz = z.transpose() * self.hessian() * z;
        let rhs = z.transpose() * &self.load * (2.0 * self.energy / self.power);
        let chol = Cholesky::new(qz).ok_or(GalerkinError::IndefiniteForm { min_eigenvalue: coercivity })?;
        let coeffs = z * chol.solve(&rhs);
        let field = GalerkinField { system: Arc::clone(self), coeffs };
        Ok(GalerkinSolution { norm: field.norm(), coercivity, field })
    }

    /// Orthogonal projection of arbitrary coefficients onto the constrained span.
    pub fn member(self: &Arc<Self>, raw: &[f64]) -> Result<GalerkinField> {
        if raw.len() != self.dimension() {
            return Err(GalerkinError::Length { expected: self.dimension(), got: raw.len() });
        }
        let z = &self.null_space;
        let coeffs = z * (z.transpose() * DVector::from_column_slice(raw));
        Ok(GalerkinField { system: Arc::clone(self), coeffs })
    }

    /// A field taken as given, without projection.
    pub fn raw_field(self: &Arc<Self>, raw: &[f64]) -> Result<GalerkinField> {
        if raw.len() != self.dimension() {
            return Err(GalerkinError::Length { expected: self.dimension(), got: raw.len() });
        }
        Ok(GalerkinField { system: Arc::clone(self), coeffs: DVector::from_column_slice(raw) })
    }
}

#[allow(clippy::too_many_arguments)]
fn radial_node(
    splines: &CubicSplines,
    per_block: usize,
    z: f64,
    wz: f64,
    lambda: f64,
    log_span: f64,
    n: f64,
    m: f64,
) -> RadialNode {
    let s = 1.0 + z * z;
    let xi = (z * z).ln_1p() / log_span;
    let xi_z = 2.0 * z / (s * log_span);
    let xi_zz = 2.0 * (1.0 - z * z) / (s * s * log_span);
    let (nv, n1, n2) = splines.eval(xi);
    let rho = z / lambda;
    let mut g = [Vec::with_capacity(per_block), Vec::with_capacity(per_block)];
    let mut lg = [Vec::with_capacity(per_block), Vec::with_capacity(per_block)];
    for l in 0..2 {
        let lf = l as f64;
        let pf = z.powi(l as i32) * s.powf(-m);
        let l1 = lf / z - 2.0 * m * z / s;
        let l1_z = -lf / (z * z) - 2.0 * m * (1.0 - z * z) / (s * s);
        let pz = pf * l1;
        let pzz = pf * (l1 * l1 + l1_z);
        for i in 0..per_block {
            let nz = n1[i] * xi_z;
            let nzz = n2[i] * xi_z * xi_z + n1[i] * xi_zz;
            let gv = pf * nv[i];
            let gz = pz * nv[i] + pf * nz;
            let gzz = pzz * nv[i] + 2.0 * pz * nz + pf * nzz;
            g[l].push(gv);
            lg[l].push(gzz + (n - 1.0) * gz / z - lf * (lf + n - 2.0) * gv / (z * z));
        }
    }
    RadialNode {
        rho,
        measure: wz / lambda * rho.powf(n - 1.0),
        scaled_measure: wz * z.powf(n - 1.0),
        g,
        lg,
    }
}

/// Orthonormal basis of the null space of the non-zero constraint rows.
fn constrained_basis(constraints: &DMatrix<f64>) -> DMatrix<f64> {
    let size = constraints.ncols();
    let rows: Vec<DVector<f64>> = constraints
        .row_iter()
        .map(|r| r.transpose())
        .filter(|r| r.norm() > 0.0)
        .map(|r| r.normalize())
        .collect();
    let mut projector = DMatrix::<f64>::identity(size, size);
    if !rows.is_empty() {
        let c = DMatrix::from_columns(&rows);
        let gram = c.transpose() * &c;
        let inv = gram.try_inverse().expect("constraint rows are independent");
        projector -= &c * inv * c.transpose();
    }
    let projector = (&projector + projector.transpose()) * 0.5;
    let eig = SymmetricEigen::new(projector);
    let cols: Vec<DVector<f64>> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .filter(|(v, _)| **v > 0.5)
        .map(|(_, c)| c.into_owned())
        .collect();
    DMatrix::from_columns(&cols)
}

/// `v = Σ a_i b_i` in a Galerkin space.
#[derive(Debug, Clone)]
pub struct GalerkinField {
    system: Arc<GalerkinSystem>,
    coeffs: DVector<f64>,
}

impl GalerkinField {
    pub fn center(&self) -> &[f64] {
        &self.system.x
    }

    pub fn rate(&self) -> f64 {
        self.system.lambda
    }

    pub fn eps(&self) -> f64 {
        self.system.eps
    }

    pub fn coefficients(&self) -> &[f64] {
        self.coeffs.as_slice()
    }

    pub fn system(&self) -> &GalerkinSystem {
        &self.system
    }

    /// `‖v‖ = (∫|Δv|²)^{1/2}`.
    pub fn norm(&self) -> f64 {
        self.coeffs.dot(&(&self.system.gram * &self.coeffs)).max(0.0).sqrt()
    }

    /// `∫ K (Pδ)^{p-ε} v`.
    pub fn pairing(&self) -> f64 {
        self.system.load.dot(&self.coeffs)
    }

    /// Largest `|⟨v, e_k⟩| / (‖v‖ ‖π e_k‖)` over the constraint directions,
    /// with `π` the projection onto the span.
    pub fn constraint_violation(&self) -> f64 {
        let norm = self.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let Some(chol) = Cholesky::new(self.system.gram.clone()) else {
            return f64::INFINITY;
        };
        self.system
            .constraints
            .row_iter()
            .map(|row| {
                let r = row.transpose();
                let projected = r.dot(&chol.solve(&r)).sqrt();
                if projected == 0.0 {
                    0.0
                } else {
                    r.dot(&self.coeffs).abs() / (norm * projected)
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> GalerkinField {
        GalerkinField { system: Arc::clone(&self.system), coeffs: &self.coeffs * factor }
    }
}

#[derive(Debug, Clone)]
pub struct GalerkinSolution {
    pub field: GalerkinField,
    pub norm: f64,
    pub coercivity: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubble::Dimension;
    use crate::kfield::KField;
    use crate::quadrature::{integrate_radial, QuadratureSpec, RadialRange};

    fn ctx5() -> FunctionalContext {
        FunctionalContext::new(Dimension::new(5).unwrap(), KField::one())
    }

    fn system(ctx: &FunctionalContext, lambda: f64, opts: GalerkinOptions) -> Arc<GalerkinSystem> {
        Arc::new(GalerkinSystem::assemble(ctx, &[0.0; 5], lambda, 0.0, opts).unwrap())
    }

    #[test]
    fn splines_partition_unity_and_derivatives() {
        let s = CubicSplines::new(0.9, 7);
        for i in 1..50 {
            let t = 0.9 * i as f64 / 50.0;
            let (v, d1, d2) = s.eval(t);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            assert!(d1.iter().sum::<f64>().abs() < 1e-10);
            assert!(d2.iter().sum::<f64>().abs() < 1e-8);
            let h = 1e-6;
            let (vp, d1p, _) = s.eval(t + h);
            let (vm, d1m, _) = s.eval(t - h);
            for k in 0..v.len() {
                assert!(((vp[k] - vm[k]) / (2.0 * h) - d1[k]).abs() < 1e-6);
                assert!(((d1p[k] - d1m[k]) / (2.0 * h) - d2[k]).abs() < 1e-4 * (1.0 + d2[k].abs()));
            }
        }
        // the kept splines vanish with their derivative at the right end
        let (v, d1, _) = s.eval(0.9 - 1e-12);
        let kept = s.count() - 2;
        assert!(v[..kept].iter().chain(&d1[..kept]).all(|a| a.abs() < 1e-9));
    }

    #[test]
    fn gram_matches_radial_quadrature() {
        let ctx = ctx5();
        let sys = system(&ctx, 10.0, GalerkinOptions::new(8));
        let g = &sys.gram;
        assert!((g - g.transpose()).abs().max() < 1e-10 * g.abs().max());
        assert!(Cholesky::new(g.clone()).is_some());
        let splines = CubicSplines::new(1.0, 7);
        let spec = QuadratureSpec::new(Dimension::new(5).unwrap(), 1e-7).unwrap().with_rate(10.0).unwrap();
        let lap = |rho: f64| {
            let h = 1e-4;
            let gfun = |r: f64| {
                let z = 10.0 * r;
                let xi = (z * z).ln_1p() / 100f64.ln_1p();
                (1.0 + z * z).powf(-0.5) * splines.eval(xi).0[2]
            };
            let d2 = (gfun(rho + h) - 2.0 * gfun(rho) + gfun(rho - h)) / (h * h);
            let d1 = (gfun(rho + h) - gfun(rho - h)) / (2.0 * h);
            d2 + 4.0 * d1 / rho
        };
        let direct = integrate_radial(|r| lap(r).powi(2), 0.0, RadialRange::Finite(1.0 - 1e-9), &spec).unwrap().value
            * sphere_area(4);
        assert!((g[(2, 2)] / direct - 1.0).abs() < 1e-3, "{} vs {direct}", g[(2, 2)]);
    }

    #[test]
    fn constrained_members_are_orthogonal() {
        let ctx = ctx5();
        let sys = system(&ctx, 20.0, GalerkinOptions::new(8));
        let raw: Vec<f64> = (0..sys.dimension()).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let v = sys.member(&raw).unwrap();
        assert!(v.constraint_violation() < 1e-10);
        let w = sys.raw_field(&raw).unwrap();
        assert!(w.constraint_violation() > 1e-3);
        assert_eq!(sys.constrained_dimension(), sys.dimension() - 4);
    }

    #[test]
    fn odd_basis_gives_zero_correction() {
        let ctx = ctx5();
        let sys = system(&ctx, 20.0, GalerkinOptions::new(8).odd_only());
        let sol = sys.minimize().unwrap();
        assert!(sol.norm < 1e-12, "{}", sol.norm);
        assert!(sys.load.abs().max() < 1e-12);
    }

    #[test]
    fn coercivity_positive_and_stable() {
        let ctx = ctx5();
        let values: Vec<f64> = [8, 16, 32]
            .iter()
            .map(|&b| system(&ctx, 20.0, GalerkinOptions::new(b)).coercivity().unwrap())
            .collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(0.0, f64::max);
        assert!(lo > 0.0, "{values:?}");
        assert!(hi / lo - 1.0 < 0.2, "{values:?}");
    }

    #[test]
    fn correction_norm_decays() {
        let ctx = ctx5();
        let lambdas = [40.0, 80.0, 160.0, 320.0];
        let norms: Vec<f64> = lambdas
            .iter()
            .map(|&l| system(&ctx, l, GalerkinOptions::new(16)).minimize().unwrap().norm)
            .collect();
        let slope = crate::expansions::fit_loglog(&lambdas, &norms).unwrap();
        assert!(slope <= -1.0 + 0.3, "{norms:?} slope {slope}");
    }

    #[test]
    fn off_centre_assembly() {
        let ctx = ctx5();
        let x = [0.2, 0.0, 0.0, 0.0, 0.0];
        let sys = Arc::new(GalerkinSystem::assemble(&ctx, &x, 20.0, 0.0, GalerkinOptions::new(8)).unwrap());
        let sol = sys.minimize().unwrap();
        assert!(sol.coercivity > 0.0);
        assert!(sol.field.constraint_violation() < 1e-8);
        assert!(sol.norm > 0.0);
    }
}
