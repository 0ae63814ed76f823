//! Radial Navier problem `Δ²u = K u^{p-ε}` on the unit ball.
//!
//! Unknowns are `u` and `w = Δu` collocated at the positive Chebyshev nodes
//! of an even extension in `s ∈ [-1, 1]`, with `r = sinh(a s)/Λ`,
//! `a = asinh Λ`. Evenness gives regularity at the origin for free.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::ball_green::{BallGreen, GreenError};
use crate::bubble::{stencil_bilaplacian, Bubble, BubbleError, Dimension};
use crate::kfield::KField;
use crate::quadrature::{gauss_gegenbauer, QuadratureError};

#[derive(Debug, Error)]
pub enum RadialError {
    #[error(transparent)]
    Bubble(#[from] BubbleError),
    #[error(transparent)]
    Green(#[from] GreenError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("eps must be positive and below the exponent, got {0}")]
    Eps(f64),
    #[error("mesh needs at least 8 nodes, got {0}")]
    Mesh(usize),
    #[error("eps range must satisfy start >= end > 0, got {start} -> {end}")]
    Range { start: f64, end: f64 },
    #[error("Newton diverged after {iterations} iterations (scaled residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64, last: Box<RadialSolution> },
    #[error("iterate stays negative under damping (min u = {min_value:e})")]
    NegativeIterate { min_value: f64 },
    #[error("singular collocation Jacobian")]
    Singular,
    #[error("profile has no clear peak (rate estimate {rate:?})")]
    NoClearPeak { rate: Option<f64> },
    #[error("continuation stalled at eps = {reached_eps}")]
    ContinuationStall { reached_eps: f64, points: Vec<BranchPoint>, last: Box<RadialSolution> },
}

pub type Result<T> = std::result::Result<T, RadialError>;

const MAX_REGRADES: usize = 6;
/// Relative mismatch between mesh grading and half-peak rate that triggers a regrade.
const REGRADE_TOL: f64 = 0.25;

/// Half-peak rates below this count as a flat profile.
pub const MIN_CLEAR_RATE: f64 = 3.0;

/// Collocation nodes on `[0, 1]` with derivative and quadrature data.
#[derive(Debug, Clone)]
pub struct RadialMesh {
    dim: Dimension,
    grading: f64,
    map_rate: f64,
    /// Node parameters, `s[0] = 1` (the boundary) down to the smallest positive node.
    s: Vec<f64>,
    r: Vec<f64>,
    /// `dr/ds`.
    rs: Vec<f64>,
    lap: DMatrix<f64>,
    /// Weights for `∫_0^1 g(s) ds` with `g` even.
    cc: Vec<f64>,
}

impl RadialMesh {
    /// `nodes` positive nodes (boundary included) graded at scale `1/grading`.
    pub fn new(dim: Dimension, nodes: usize, grading: f64) -> Result<Self> {
        if nodes < 8 {
            return Err(RadialError::Mesh(nodes));
        }
        let big_n = 2 * nodes - 1;
        let grading = grading.max(1.0);
        let a = grading.asinh();
        let full: Vec<f64> = (0..=big_n).map(|j| (std::f64::consts::PI * j as f64 / big_n as f64).cos()).collect();
        let d = cheb_matrix(&full);
        let d2 = &d * &d;
        let fold = |m: &DMatrix<f64>| {
            DMatrix::from_fn(nodes, nodes, |i, j| m[(i, j)] + m[(i, big_n - j)])
        };
        let (d1f, d2f) = (fold(&d), fold(&d2));
        let s: Vec<f64> = full[..nodes].to_vec();
        let r: Vec<f64> = s.iter().map(|&x| (a * x).sinh() / grading).collect();
        let rs: Vec<f64> = s.iter().map(|&x| a * (a * x).cosh() / grading).collect();
        let n1 = dim.nf() - 1.0;
        let lap = DMatrix::from_fn(nodes, nodes, |i, j| {
            let rss = a * a * r[i];
            d2f[(i, j)] / (rs[i] * rs[i]) + (n1 / r[i] - rss / (rs[i] * rs[i])) * d1f[(i, j)] / rs[i]
        });
        let cc = clenshaw_curtis(big_n)[..nodes].to_vec();
        Ok(RadialMesh { dim, grading, map_rate: a, s, r, rs, lap, cc })
    }

    pub fn dim(&self) -> Dimension {
        self.dim
    }

    pub fn nodes(&self) -> usize {
        self.s.len()
    }

    pub fn grading(&self) -> f64 {
        self.grading
    }

    /// Radii, boundary first.
    pub fn r(&self) -> &[f64] {
        &self.r
    }

    /// Discrete radial Laplacian acting on node values.
    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.lap
    }

    fn s_of(&self, r: f64) -> f64 {
        (r * self.grading).asinh() / self.map_rate
    }

    /// `∫_0^1 g(r) r^{n-1} dr` from node values.
    pub fn integrate(&self, g: &[f64]) -> f64 {
        let n1 = self.dim.nf() - 1.0;
        (0..self.nodes()).map(|i| self.cc[i] * g[i] * self.r[i].powf(n1) * self.rs[i]).sum()
    }

    /// `∫_0^R g(r) r^{n-1} dr` by Gauss–Legendre panels in the mesh variable.
    pub fn integrate_to(&self, upper: f64, g: &dyn Fn(f64) -> f64) -> f64 {
        const PANELS: usize = 8;
        let (nodes, weights) = gauss_gegenbauer(24, 0.0);
        let n1 = self.dim.nf() - 1.0;
        let top = self.s_of(upper.clamp(0.0, 1.0));
        let h = top / PANELS as f64;
        let mut sum = 0.0;
        for p in 0..PANELS {
            let mid = (p as f64 + 0.5) * h;
            for (t, wt) in nodes.iter().zip(&weights) {
                let s = mid + 0.5 * h * t;
                let r = (self.map_rate * s).sinh() / self.grading;
                let rs = self.map_rate * (self.map_rate * s).cosh() / self.grading;
                sum += 0.5 * h * wt * g(r) * r.powf(n1) * rs;
            }
        }
        sum
    }

    /// Barycentric interpolation of even node data at radius `r ∈ [0, 1]`.
    pub fn interpolate(&self, values: &[f64], r: f64) -> f64 {
        let s = self.s_of(r.clamp(0.0, 1.0));
        let big_n = 2 * self.nodes() - 1;
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..=big_n {
            let half = j.min(big_n - j);
            let sj = if j < self.nodes() { self.s[j] } else { -self.s[half] };
            let diff = s - sj;
            if diff == 0.0 {
                return values[half];
            }
            let mut beta = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == big_n {
                beta *= 0.5;
            }
            let t = beta / diff;
            num += t * values[half];
            den += t;
        }
        num / den
    }
}

fn cheb_matrix(x: &[f64]) -> DMatrix<f64> {
    let big_n = x.len() - 1;
    let c = |j: usize| {
        let e = if j == 0 || j == big_n { 2.0 } else { 1.0 };
        if j % 2 == 0 { e } else { -e }
    };
    let mut d = DMatrix::from_fn(x.len(), x.len(), |i, j| if i == j { 0.0 } else { c(i) / c(j) / (x[i] - x[j]) });
    for i in 0..x.len() {
        let sum: f64 = d.row(i).iter().sum();
        d[(i, i)] = -sum;
    }
    d
}

/// Clenshaw–Curtis weights on `cos(πj/N)`. By symmetry the positive half
/// integrates an even function over `[0, 1]`.
fn clenshaw_curtis(big_n: usize) -> Vec<f64> {
    let nf = big_n as f64;
    let mut w = vec![0.0; big_n + 1];
    let theta = |j: usize| std::f64::consts::PI * j as f64 / nf;
    let end = if big_n % 2 == 0 { 1.0 / (nf * nf - 1.0) } else { 1.0 / (nf * nf) };
    w[0] = end;
    w[big_n] = end;
    for (j, wj) in w.iter_mut().enumerate().take(big_n).skip(1) {
        let mut v = 1.0;
        if big_n % 2 == 0 {
            for k in 1..big_n / 2 {
                let kf = k as f64;
                v -= 2.0 * (2.0 * kf * theta(j)).cos() / (4.0 * kf * kf - 1.0);
            }
            v -= (nf * theta(j)).cos() / (nf * nf - 1.0);
        } else {
            for k in 1..=(big_n - 1) / 2 {
                let kf = k as f64;
                v -= 2.0 * (2.0 * kf * theta(j)).cos() / (4.0 * kf * kf - 1.0);
            }
        }
        *wj = 2.0 * v / nf;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { nodes: 160, tol: 1e-8, max_iter: 60 }
    }
}

impl SolverOptions {
    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes = nodes;
        self
    }
}

#[derive(Debug, Clone)]
pub struct RadialSolution {
    dim: Dimension,
    eps: f64,
    mesh: RadialMesh,
    u: Vec<f64>,
    w: Vec<f64>,
    k: KField,
    residual_norm: f64,
    iterations: usize,
}

/// One row of a profile dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileRow {
    pub r: f64,
    pub u: f64,
    pub w: f64,
}

/// Both sides of `∫|Δu|² = ∫K u^{p+1-ε}`, without the sphere area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyIdentity {
    pub dirichlet: f64,
    pub potential: f64,
}

impl EnergyIdentity {
    pub fn relative_gap(&self) -> f64 {
        (self.dirichlet - self.potential).abs() / self.dirichlet.abs().max(self.potential.abs())
    }
}

impl RadialSolution {
    /// Samples `u` and `w` on a mesh; no solve is performed.
    pub fn from_samples<U, W>(mesh: RadialMesh, eps: f64, k: KField, u: U, w: W) -> Self
    where
        U: Fn(f64) -> f64,
        W: Fn(f64) -> f64,
    {
        let uv = mesh.r.iter().map(|&r| u(r)).collect();
        let wv = mesh.r.iter().map(|&r| w(r)).collect();
        RadialSolution { dim: mesh.dim, eps, mesh, u: uv, w: wv, k, residual_norm: f64::NAN, iterations: 0 }
    }

    pub fn dim(&self) -> Dimension {
        self.dim
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn mesh(&self) -> &RadialMesh {
        &self.mesh
    }

    pub fn k(&self) -> &KField {
        &self.k
    }

    /// Node values, boundary first.
    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn residual_norm(&self) -> f64 {
        self.residual_norm
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.mesh.interpolate(&self.u, r)
    }

    pub fn eval_w(&self, r: f64) -> f64 {
        self.mesh.interpolate(&self.w, r)
    }

    pub fn peak(&self) -> f64 {
        self.eval(0.0)
    }

    fn exponent(&self) -> f64 {
        self.dim.critical_exponent() - self.eps
    }

    /// Rows sorted by increasing radius, origin included.
    pub fn profile(&self) -> Vec<ProfileRow> {
        let mut rows = vec![ProfileRow { r: 0.0, u: self.peak(), w: self.eval_w(0.0) }];
        rows.extend((0..self.mesh.nodes()).rev().map(|i| ProfileRow { r: self.mesh.r[i], u: self.u[i], w: self.w[i] }));
        rows
    }

    pub fn energy_identity(&self) -> EnergyIdentity {
        let q1 = self.exponent() + 1.0;
        let w2: Vec<f64> = self.w.iter().map(|w| w * w).collect();
        let pot: Vec<f64> = (0..self.mesh.nodes())
            .map(|i| self.k.radial(self.mesh.r[i]) * self.u[i].max(0.0).powf(q1))
            .collect();
        EnergyIdentity { dirichlet: self.mesh.integrate(&w2), potential: self.mesh.integrate(&pot) }
    }

    /// Relative pointwise residual of `Δ²u = K u^{p-ε}` from the finite-difference
    /// bilaplacian of the rotated profile at `y`.
    pub fn stencil_residual(&self, y: &[f64], h: f64) -> f64 {
        let f = |z: &[f64]| {
            let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            self.eval(r)
        };
        let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rhs = self.k.radial(r) * self.eval(r).max(0.0).powf(self.exponent());
        (stencil_bilaplacian(&f, y, h) - rhs).abs() / rhs.abs()
    }
}

/// Initial guess for Newton.
#[derive(Debug, Clone, Copy)]
pub enum Seed<'a> {
    /// `α·Pδ_{0,rate}`; without an amplitude, `α` puts the guess on the Nehari manifold.
    Bubble { rate: f64, amplitude: Option<f64> },
    Solution(&'a RadialSolution),
}

enum Source<'a> {
    Power { q: f64 },
    Linear { load: &'a [f64] },
}

struct Collocation<'a> {
    mesh: &'a RadialMesh,
    kv: Vec<f64>,
    source: Source<'a>,
    w_boundary: f64,
}

impl Collocation<'_> {
    fn interior(&self) -> usize {
        self.mesh.nodes() - 1
    }

    fn unpack(&self, x: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let m = self.interior();
        let mut u = vec![0.0];
        let mut w = vec![self.w_boundary];
        u.extend(x.rows(0, m).iter());
        w.extend(x.rows(m, m).iter());
        (u, w)
    }

    fn source(&self, i: usize, u: f64) -> (f64, f64) {
        match self.source {
            Source::Power { q } => {
                let up = u.max(0.0);
                (self.kv[i] * up.powf(q), self.kv[i] * q * up.powf(q - 1.0))
            }
            Source::Linear { load } => (self.kv[i] * u + load[i], self.kv[i]),
        }
    }

    /// Residual vector and its max row-scaled norm.
    fn residual(&self, x: &DVector<f64>) -> (DVector<f64>, f64) {
        let m = self.interior();
        let (u, w) = self.unpack(x);
        let lap = &self.mesh.lap;
        let mut f = DVector::zeros(2 * m);
        let mut scaled: f64 = 0.0;
        for i in 1..=m {
            let (mut lu, mut su, mut lw, mut sw) = (0.0, 0.0, 0.0, 0.0);
            for j in 0..=m {
                lu += lap[(i, j)] * u[j];
                su += (lap[(i, j)] * u[j]).abs();
                lw += lap[(i, j)] * w[j];
                sw += (lap[(i, j)] * w[j]).abs();
            }
            let (g, _) = self.source(i, u[i]);
            let f1 = lu - w[i];
            let f2 = lw - g;
            f[i - 1] = f1;
            f[m + i - 1] = f2;
            scaled = scaled.max(f1.abs() / (su + w[i].abs()).max(f64::MIN_POSITIVE));
            scaled = scaled.max(f2.abs() / (sw + g.abs()).max(f64::MIN_POSITIVE));
        }
        (f, scaled)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let m = self.interior();
        let (u, _) = self.unpack(x);
        let lap = &self.mesh.lap;
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for i in 0..m {
            for j in 0..m {
                jac[(i, j)] = lap[(i + 1, j + 1)];
                jac[(m + i, m + j)] = lap[(i + 1, j + 1)];
            }
            jac[(i, m + i)] = -1.0;
            jac[(m + i, i)] = -self.source(i + 1, u[i + 1]).1;
        }
        jac
    }
}

fn check_eps(dim: Dimension, eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < dim.critical_exponent() - 1.0) {
        return Err(RadialError::Eps(eps));
    }
    Ok(())
}

fn projected_bubble(dim: Dimension, rate: f64) -> Result<(Bubble, crate::ball_green::CorrectionField)> {
    let b = Bubble::new(dim, vec![0.0; dim.n()], rate)?;
    let phi = BallGreen::new(dim).correction_field(&b)?;
    Ok((b, phi))
}

fn seed_values(mesh: &RadialMesh, eps: f64, k: &KField, seed: Seed<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
    match seed {
        Seed::Solution(sol) => {
            let u = mesh.r.iter().map(|&r| sol.eval(r)).collect();
            let w = mesh.r.iter().map(|&r| sol.eval_w(r)).collect();
            Ok((u, w))
        }
        Seed::Bubble { rate, amplitude } => {
            let dim = mesh.dim;
            let (b, phi) = projected_bubble(dim, rate)?;
            let mut u: Vec<f64> = mesh.r.iter().map(|&r| b.eval_radial(r) - phi.phi_offset(r, 1.0)).collect();
            let mut w: Vec<f64> =
                mesh.r.iter().map(|&r| b.laplacian_radial(r) - phi.laplacian_offset(r, 1.0)).collect();
            u[0] = 0.0;
            w[0] = 0.0;
            let alpha = match amplitude {
                Some(a) => a,
                None => {
                    let q1 = dim.critical_exponent() + 1.0 - eps;
                    let w2: Vec<f64> = w.iter().map(|v| v * v).collect();
                    let pot: Vec<f64> =
                        (0..mesh.nodes()).map(|i| k.radial(mesh.r[i]) * u[i].max(0.0).powf(q1)).collect();
                    (mesh.integrate(&w2) / mesh.integrate(&pot)).powf(1.0 / (q1 - 2.0))
                }
            };
            u.iter_mut().for_each(|v| *v *= alpha);
            w.iter_mut().for_each(|v| *v *= alpha);
            Ok((u, w))
        }
    }
}

/// Petviashvili iteration `u ← M^{q/(q-1)} L^{-2}(K u^q)` with the stabilizing
/// factor `M = ⟨u, L²u⟩/⟨u, K u^q⟩`; lands in the Newton basin of the positive solution.
fn relax(col: &Collocation<'_>, u0: &[f64], q: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    const MAX_SWEEPS: usize = 2000;
    let m = col.interior();
    let l = col.mesh.lap.view((1, 1), (m, m)).into_owned();
    let l2 = &l * &l;
    let lu = l2.clone().lu();
    let gamma = q / (q - 1.0);
    let mut u = DVector::from_column_slice(&u0[1..]);
    for _ in 0..MAX_SWEEPS {
        let nl = DVector::from_iterator(m, (0..m).map(|i| col.kv[i + 1] * u[i].max(0.0).powf(q)));
        let factor = u.dot(&(&l2 * &u)) / u.dot(&nl);
        if !factor.is_finite() || factor <= 0.0 {
            return None;
        }
        u = lu.solve(&nl)? * factor.powf(gamma);
        if (factor - 1.0).abs() < 1e-12 {
            break;
        }
    }
    let w = &l * &u;
    let pack = |v: &DVector<f64>| std::iter::once(0.0).chain(v.iter().copied()).collect();
    Some((pack(&u), pack(&w)))
}

fn newton(col: &Collocation<'_>, u0: &[f64], w0: &[f64], opts: &SolverOptions) -> std::result::Result<(DVector<f64>, f64, usize), (DVector<f64>, f64, usize, Option<f64>)> {
    let m = col.interior();
    let mut x = DVector::from_iterator(2 * m, u0[1..].iter().chain(w0[1..].iter()).copied());
    let (mut f, mut scaled) = col.residual(&x);
    for it in 0..opts.max_iter {
        if scaled <= opts.tol {
            return Ok((x, scaled, it));
        }
        let Some(step) = col.jacobian(&x).lu().solve(&(-&f)) else {
            return Err((x, scaled, it, None));
        };
        let base = f.norm();
        let mut t = 1.0;
        let mut negative = None;
        loop {
            let trial = &x + t * &step;
            let peak = trial.rows(0, m).amax();
            let min_u = trial.rows(0, m).min();
            if min_u < -1e-10 * peak {
                negative = Some(min_u);
            } else {
                let (ft, st) = col.residual(&trial);
                if ft.norm() < (1.0 - 1e-4 * t) * base || st <= opts.tol {
                    x = trial;
                    f = ft;
                    scaled = st;
                    break;
                }
            }
            t *= 0.5;
            if t < 1.0 / 1024.0 {
                return Err((x, scaled, it, negative));
            }
        }
    }
    if scaled <= opts.tol {
        Ok((x, scaled, opts.max_iter))
    } else {
        Err((x, scaled, opts.max_iter, None))
    }
}

fn solve_on_mesh(
    dim: Dimension,
    eps: f64,
    k: &KField,
    mesh: RadialMesh,
    seed: Seed<'_>,
    opts: &SolverOptions,
    relaxed: bool,
) -> Result<RadialSolution> {
    let (mut u0, mut w0) = seed_values(&mesh, eps, k, seed)?;
    let q = dim.critical_exponent() - eps;
    let kv = mesh.r.iter().map(|&r| k.radial(r)).collect();
    let col = Collocation { mesh: &mesh, kv, source: Source::Power { q }, w_boundary: 0.0 };
    if relaxed {
        if let Some((u, w)) = relax(&col, &u0, q) {
            u0 = u;
            w0 = w;
        }
    }
    let outcome = newton(&col, &u0, &w0, opts);
    let (x, residual, iterations, ok, negative) = match outcome {
        Ok((x, r, it)) => (x, r, it, true, None),
        Err((x, r, it, neg)) => (x, r, it, false, neg),
    };
    let (u, w) = col.unpack(&x);
    drop(col);
    let sol = RadialSolution { dim, eps, mesh, u, w, k: k.clone(), residual_norm: residual, iterations };
    if ok {
        Ok(sol)
    } else if let Some(min_value) = negative {
        Err(RadialError::NegativeIterate { min_value })
    } else {
        Err(RadialError::NewtonDivergence { iterations, residual, last: Box::new(sol) })
    }
}

/// Relaxed but unpolished profile on `mesh`.
fn relax_on_mesh(dim: Dimension, eps: f64, k: &KField, mesh: RadialMesh, seed: Seed<'_>) -> Result<RadialSolution> {
    let (u0, _) = seed_values(&mesh, eps, k, seed)?;
    let q = dim.critical_exponent() - eps;
    let kv = mesh.r.iter().map(|&r| k.radial(r)).collect();
    let col = Collocation { mesh: &mesh, kv, source: Source::Power { q }, w_boundary: 0.0 };
    let (u, w) = relax(&col, &u0, q).ok_or(RadialError::NegativeIterate { min_value: f64::NAN })?;
    drop(col);
    Ok(RadialSolution { dim, eps, mesh, u, w, k: k.clone(), residual_norm: f64::NAN, iterations: 0 })
}

/// Mesh grading for a seed: its half-peak rate, or the bubble rate.
fn seed_grading(seed: &Seed<'_>) -> f64 {
    match seed {
        Seed::Bubble { rate, .. } => *rate,
        Seed::Solution(sol) => half_peak_rate(sol).unwrap_or(1.0),
    }
}

/// Newton collocation for `Δ²u = K u^{p-ε}`, `u = Δu = 0` on the sphere.
///
/// Bubble seeds are first relaxed by a normalized fixed-point iteration; a
/// solution seed goes straight to Newton.
pub fn solve_bvp(dim: Dimension, eps: f64, k: &KField, seed: Seed<'_>, opts: &SolverOptions) -> Result<RadialSolution> {
    check_eps(dim, eps)?;
    let mesh = RadialMesh::new(dim, opts.nodes, seed_grading(&seed))?;
    let mut sol = match seed {
        Seed::Bubble { .. } => {
            let mut guess = relax_on_mesh(dim, eps, k, mesh, seed)?;
            for _ in 0..MAX_REGRADES {
                let rate = half_peak_rate(&guess).unwrap_or(1.0).max(1.0);
                if (rate / guess.mesh.grading - 1.0).abs() < REGRADE_TOL {
                    break;
                }
                let mesh = RadialMesh::new(dim, opts.nodes, rate)?;
                guess = relax_on_mesh(dim, eps, k, mesh, Seed::Solution(&guess))?;
            }
            solve_on_mesh(dim, eps, k, guess.mesh.clone(), Seed::Solution(&guess), opts, false)?
        }
        Seed::Solution(_) => solve_on_mesh(dim, eps, k, mesh, seed, opts, false)?,
    };
    for _ in 0..MAX_REGRADES {
        let rate = half_peak_rate(&sol).unwrap_or(1.0).max(1.0);
        if (rate / sol.mesh.grading - 1.0).abs() < REGRADE_TOL {
            break;
        }
        let mesh = RadialMesh::new(dim, opts.nodes, rate)?;
        sol = solve_on_mesh(dim, eps, k, mesh, Seed::Solution(&sol), opts, false)?;
    }
    Ok(sol)
}

/// Solves the linear problem `Δ²u = K u + f` with `u(1) = 0`, `Δu(1) = w_boundary`.
pub fn solve_linear<F: Fn(f64) -> f64>(mesh: &RadialMesh, k: &KField, load: F, w_boundary: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let kv = mesh.r.iter().map(|&r| k.radial(r)).collect();
    let fv: Vec<f64> = mesh.r.iter().map(|&r| load(r)).collect();
    let col = Collocation { mesh, kv, source: Source::Linear { load: &fv }, w_boundary };
    let x0 = DVector::zeros(2 * col.interior());
    let (f, _) = col.residual(&x0);
    let step = col.jacobian(&x0).lu().solve(&(-f)).ok_or(RadialError::Singular)?;
    Ok(col.unpack(&step))
}

/// Radius where `u` first drops to `u(0)·2^{-(n-4)/2}`.
fn half_peak_radius(sol: &RadialSolution) -> Option<f64> {
    let peak = sol.peak();
    if !(peak > 0.0) {
        return None;
    }
    let target = peak * 2f64.powf(-sol.dim.m());
    let nodes = sol.mesh.nodes();
    let mut lo = 0.0;
    let mut hi = None;
    for i in (0..nodes).rev() {
        if sol.u[i] <= target {
            hi = Some(sol.mesh.s[i]);
            break;
        }
        lo = sol.mesh.s[i];
    }
    let (mut lo, mut hi) = (lo, hi?);
    let at = |s: f64| sol.eval((sol.mesh.map_rate * s).sinh() / sol.mesh.grading);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if at(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some((sol.mesh.map_rate * 0.5 * (lo + hi)).sinh() / sol.mesh.grading)
}

fn half_peak_rate(sol: &RadialSolution) -> Option<f64> {
    half_peak_radius(sol).map(|r| 1.0 / r)
}

/// Profile model used to read off `(α̂, λ̂)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum ExtractionModel {
    /// Whole-space bubble `α δ_{0,λ}`: `λ̂ = 1/r_half`, `α̂ = u(0)/(c_0 λ̂^{(n-4)/2})`.
    Bubble,
    /// Projected bubble `α Pδ_{0,λ}` with the same half-peak radius as `u`.
    #[default]
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchPoint {
    pub eps: f64,
    pub peak: f64,
    pub alpha_hat: f64,
    pub lambda_hat: f64,
    pub fit_error: f64,
}

/// Reads `(α̂, λ̂)` off a profile and measures the fit on `[0, 3/λ̂]`.
pub fn extract_bubble(sol: &RadialSolution, model: ExtractionModel) -> Result<BranchPoint> {
    let dim = sol.dim;
    let r_half = half_peak_radius(sol).ok_or(RadialError::NoClearPeak { rate: None })?;
    if 1.0 / r_half < MIN_CLEAR_RATE {
        return Err(RadialError::NoClearPeak { rate: Some(1.0 / r_half) });
    }
    let peak = sol.peak();
    let m = dim.m();
    let (rate, profile): (f64, Box<dyn Fn(f64) -> f64>) = match model {
        ExtractionModel::Bubble => {
            let b = Bubble::new(dim, vec![0.0; dim.n()], 1.0 / r_half)?;
            (b.rate(), Box::new(move |r| b.eval_radial(r)))
        }
        ExtractionModel::Projected => {
            let target = 2f64.powf(-m);
            let ratio = |rate: f64| -> Result<f64> {
                let (b, phi) = projected_bubble(dim, rate)?;
                Ok((b.eval_radial(r_half) - phi.phi_offset(r_half, 1.0)) / (b.eval_radial(0.0) - phi.phi_offset(0.0, 1.0)) - target)
            };
            let (mut lo, mut hi) = (0.5 / r_half, 4.0 / r_half);
            if ratio(lo)? < 0.0 || ratio(hi)? > 0.0 {
                return Err(RadialError::NoClearPeak { rate: Some(1.0 / r_half) });
            }
            while hi - lo > 1e-13 * hi {
                let mid = 0.5 * (lo + hi);
                if ratio(mid)? > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let (b, phi) = projected_bubble(dim, 0.5 * (lo + hi))?;
            (b.rate(), Box::new(move |r| b.eval_radial(r) - phi.phi_offset(r, 1.0)))
        }
    };
    let alpha = peak / profile(0.0);
    let upper = (3.0 / rate).min(1.0);
    let integral = |g: &dyn Fn(f64) -> f64| sol.mesh.integrate_to(upper, g);
    let mismatch = integral(&|r| (sol.eval(r) - alpha * profile(r)).powi(2));
    let size = integral(&|r| sol.eval(r).powi(2));
    Ok(BranchPoint { eps: sol.eps, peak, alpha_hat: alpha, lambda_hat: rate, fit_error: (mismatch / size).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchOptions {
    pub steps: usize,
    pub solver: SolverOptions,
    pub seed_rate: f64,
    /// Step halvings allowed before the branch is declared stalled.
    pub max_halvings: u32,
    pub model: ExtractionModel,
}

impl Default for BranchOptions {
    fn default() -> Self {
        BranchOptions {
            steps: 40,
            solver: SolverOptions::default(),
            seed_rate: 3.0,
            max_halvings: 8,
            model: ExtractionModel::Projected,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub last: RadialSolution,
}

/// Branch point, or a bare peak record while the profile is still flat.
fn measure(sol: &RadialSolution, model: ExtractionModel) -> Result<BranchPoint> {
    match extract_bubble(sol, model) {
        Ok(p) => Ok(p),
        Err(RadialError::NoClearPeak { rate }) => Ok(BranchPoint {
            eps: sol.eps,
            peak: sol.peak(),
            alpha_hat: f64::NAN,
            lambda_hat: rate.unwrap_or(f64::NAN),
            fit_error: f64::NAN,
        }),
        Err(e) => Err(e),
    }
}

/// `u` extended oddly across the sphere, zero beyond `r = 2`.
fn extended(sol: &RadialSolution, values: &[f64], r: f64) -> f64 {
    if r <= 1.0 {
        sol.mesh.interpolate(values, r)
    } else if r < 2.0 {
        -sol.mesh.interpolate(values, 2.0 - r)
    } else {
        0.0
    }
}

/// Secant predictor in bubble-scaled variables `U(ρ) = λ^{-(n-4)/2} u(ρ/λ)`.
fn predict(dim: Dimension, history: &[(f64, RadialSolution, f64)], log_eps: f64, nodes: usize) -> Result<RadialSolution> {
    let (le1, s1, l1) = history.last().expect("predictor needs history");
    let m = dim.m();
    let (rate, theta) = match history.len() {
        1 => ((l1.ln() - (log_eps - le1) / (dim.nf() - 4.0)).exp(), None),
        _ => {
            let (le0, _, l0) = &history[history.len() - 2];
            let th = (log_eps - le1) / (le1 - le0);
            ((l1.ln() + th * (l1.ln() - l0.ln())).exp(), Some(th))
        }
    };
    let mesh = RadialMesh::new(dim, nodes, rate)?;
    let scaled = |values: fn(&RadialSolution) -> &[f64], power: f64, r: f64| {
        let rho = rate * r;
        let one = |sol: &RadialSolution, lam: f64| lam.powf(-power) * extended(sol, values(sol), rho / lam);
        let v1 = one(s1, *l1);
        let v = match theta {
            None => v1,
            Some(th) => {
                let (_, s0, l0) = &history[history.len() - 2];
                v1 + th * (v1 - one(s0, *l0))
            }
        };
        rate.powf(power) * v
    };
    let eps = log_eps.exp();
    let u: Vec<f64> = mesh.r.iter().map(|&r| scaled(RadialSolution::u, m, r)).collect();
    let w: Vec<f64> = mesh.r.iter().map(|&r| scaled(RadialSolution::w, m + 2.0, r)).collect();
    let mut guess = RadialSolution::from_samples(mesh, eps, s1.k.clone(), |_| 0.0, |_| 0.0);
    guess.u = u;
    guess.w = w;
    guess.u[0] = 0.0;
    guess.w[0] = 0.0;
    Ok(guess)
}

/// Natural-parameter continuation from `eps_start` down to `eps_end`,
/// geometric in `ε`, halving the step on Newton failure.
pub fn continue_branch(dim: Dimension, k: &KField, eps_start: f64, eps_end: f64, opts: &BranchOptions) -> Result<Branch> {
    if !(eps_end > 0.0 && eps_start >= eps_end) {
        return Err(RadialError::Range { start: eps_start, end: eps_end });
    }
    let first = solve_bvp(dim, eps_start, k, Seed::Bubble { rate: opts.seed_rate, amplitude: None }, &opts.solver)?;
    let mut points = vec![measure(&first, opts.model)?];
    let rate_of = |sol: &RadialSolution| half_peak_rate(sol).unwrap_or(1.0);
    let mut history = vec![(eps_start.ln(), first.clone(), rate_of(&first))];
    let target = eps_end.ln();
    let base = (eps_start.ln() - target) / opts.steps.max(1) as f64;
    let mut step = base;
    let mut halvings = 0;
    while history.last().map(|h| h.0).unwrap_or(target) > target + 1e-9 * base {
        let current = history.last().expect("non-empty history").0;
        let next = if current - step < target + 1e-6 * base { target } else { current - step };
        let eps_next = if next == target { eps_end } else { next.exp() };
        let attempt = predict(dim, &history, next, opts.solver.nodes).and_then(|guess| {
            let solve = |relaxed| {
                solve_on_mesh(dim, eps_next, k, guess.mesh.clone(), Seed::Solution(&guess), &opts.solver, relaxed)
            };
            solve(false).or_else(|_| solve(true))
        });
        match attempt {
            Ok(sol) if half_peak_rate(&sol).is_some() => {
                points.push(measure(&sol, opts.model)?);
                let rate = rate_of(&sol);
                history.push((next, sol, rate));
                if history.len() > 2 {
                    history.remove(0);
                }
                step = (2.0 * step).min(base);
                halvings = 0;
            }
            Ok(_) | Err(RadialError::NewtonDivergence { .. }) | Err(RadialError::NegativeIterate { .. }) => {
                halvings += 1;
                step *= 0.5;
                if halvings > opts.max_halvings {
                    let (reached, last, _) = history.pop().expect("non-empty history");
                    return Err(RadialError::ContinuationStall { reached_eps: reached.exp(), points, last: Box::new(last) });
                }
            }
            Err(e) => return Err(e),
        }
    }
    let (_, last, _) = history.pop().expect("non-empty history");
    Ok(Branch { points, last })
}

/// Slope of `ln y` against `ln x` by least squares.
pub fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dim(n: usize) -> Dimension {
        Dimension::new(n).unwrap()
    }

    #[test]
    fn mesh_integrates_polynomials() {
        let mesh = RadialMesh::new(dim(5), 40, 10.0).unwrap();
        let g: Vec<f64> = mesh.r().iter().map(|r| r * r).collect();
        assert!((mesh.integrate(&g) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn laplacian_of_even_polynomial() {
        let mesh = RadialMesh::new(dim(6), 30, 5.0).unwrap();
        let u: Vec<f64> = mesh.r().iter().map(|r| r.powi(4)).collect();
        let lu = mesh.laplacian() * DVector::from_vec(u);
        for (i, r) in mesh.r().iter().enumerate() {
            assert!((lu[i] - 4.0 * 8.0 * r * r).abs() < 1e-8, "{} {} {}", lu[i], r, i);
        }
    }

    #[test]
    fn manufactured_linear_solution() {
        let n = 5;
        let d = dim(n);
        let nf = n as f64;
        let mesh = RadialMesh::new(d, 40, 4.0).unwrap();
        let k = KField::constant(2.0).unwrap();
        let exact = |r: f64| (1.0 - r * r).powi(2);
        let load = |r: f64| 8.0 * nf * (nf + 2.0) - 2.0 * exact(r);
        let (u, w) = solve_linear(&mesh, &k, load, 8.0).unwrap();
        for (i, &r) in mesh.r().iter().enumerate() {
            assert!((u[i] - exact(r)).abs() < 1e-9, "u at {r}");
            assert!((w[i] - (-4.0 * nf + 4.0 * (nf + 2.0) * r * r)).abs() < 1e-9, "w at {r}");
        }
    }

    #[test]
    fn moderate_eps_converges() {
        let d = dim(5);
        let sol = solve_bvp(d, 0.5, &KField::one(), Seed::Bubble { rate: 3.0, amplitude: None }, &SolverOptions::default()).unwrap();
        assert!(sol.residual_norm() <= 1e-8);
        assert_eq!(sol.u()[0], 0.0);
        assert_eq!(sol.w()[0], 0.0);
        assert!(sol.u()[1..].iter().all(|&v| v > 0.0));
        assert!(sol.energy_identity().relative_gap() < 1e-6);
        let rate = extract_bubble(&sol, ExtractionModel::Projected).unwrap().lambda_hat;
        for dir in [[1.0, 0.0, 0.0, 0.0, 0.0], [0.6, 0.8, 0.0, 0.0, 0.0], [0.5, 0.5, 0.5, 0.5, 0.0]] {
            for rho in [0.3, 0.8] {
                let y: Vec<f64> = dir.iter().map(|d| d * rho / rate).collect();
                let res = sol.stencil_residual(&y, 1e-2 / rate);
                assert!(res < 1e-4, "{res} at {rho}");
            }
        }
    }

    #[test]
    fn mesh_doubling_is_stable() {
        let d = dim(5);
        let seed = Seed::Bubble { rate: 3.0, amplitude: None };
        let a = solve_bvp(d, 0.2, &KField::one(), seed, &SolverOptions::default()).unwrap();
        let b = solve_bvp(d, 0.2, &KField::one(), Seed::Solution(&a), &SolverOptions::default().with_nodes(320)).unwrap();
        assert!((a.peak() - b.peak()).abs() / b.peak() < 1e-6);
    }

    #[test]
    fn exact_bubble_is_recovered() {
        let d = dim(5);
        let b = Bubble::new(d, vec![0.0; 5], 10.0).unwrap();
        let mesh = RadialMesh::new(d, 80, 10.0).unwrap();
        let sol = RadialSolution::from_samples(mesh, 0.1, KField::one(), |r| b.eval_radial(r), |r| b.laplacian_radial(r));
        let p = extract_bubble(&sol, ExtractionModel::Bubble).unwrap();
        assert!((p.lambda_hat - 10.0).abs() < 1e-9);
        assert!((p.alpha_hat - 1.0).abs() < 1e-9);
        assert!(p.fit_error <= 1e-6);
    }

    #[test]
    fn projected_bubble_is_recovered() {
        let d = dim(5);
        let (b, phi) = projected_bubble(d, 25.0).unwrap();
        let mesh = RadialMesh::new(d, 80, 25.0).unwrap();
        let sol = RadialSolution::from_samples(
            mesh,
            0.1,
            KField::one(),
            |r| 0.9 * (b.eval_radial(r) - phi.phi_offset(r, 1.0)),
            |r| 0.9 * (b.laplacian_radial(r) - phi.laplacian_offset(r, 1.0)),
        );
        let p = extract_bubble(&sol, ExtractionModel::Projected).unwrap();
        assert!((p.lambda_hat / 25.0 - 1.0).abs() < 0.01);
        assert!((p.alpha_hat / 0.9 - 1.0).abs() < 0.01);
        assert!(p.fit_error < 1e-6);
    }

    #[test]
    fn flat_profile_has_no_peak() {
        let d = dim(5);
        let mesh = RadialMesh::new(d, 40, 1.0).unwrap();
        let sol = RadialSolution::from_samples(mesh, 0.1, KField::one(), |r| (1.0 - r * r).powi(2), |r| -20.0 + 28.0 * r * r);
        assert!(matches!(extract_bubble(&sol, ExtractionModel::Bubble), Err(RadialError::NoClearPeak { .. })));
    }

    #[test]
    fn frozen_eps_matches_single_solve() {
        let d = dim(5);
        let opts = BranchOptions::default();
        let branch = continue_branch(d, &KField::one(), 0.5, 0.5, &opts).unwrap();
        let single = solve_bvp(d, 0.5, &KField::one(), Seed::Bubble { rate: 3.0, amplitude: None }, &opts.solver).unwrap();
        assert_eq!(branch.points.len(), 1);
        assert_eq!(branch.points[0].peak, single.peak());
    }

    #[test]
    fn rejects_bad_eps() {
        let seed = Seed::Bubble { rate: 3.0, amplitude: None };
        assert!(matches!(solve_bvp(dim(5), 0.0, &KField::one(), seed, &SolverOptions::default()), Err(RadialError::Eps(_))));
        assert!(matches!(continue_branch(dim(5), &KField::one(), 0.1, 0.2, &BranchOptions::default()), Err(RadialError::Range { .. })));
    }

    fn short_branch(k: &KField) -> Branch {
        let opts = BranchOptions { steps: 20, ..BranchOptions::default() };
        continue_branch(dim(5), k, 0.5, 0.01, &opts).unwrap()
    }

    #[test]
    fn branch_peak_grows_like_inverse_sqrt_eps() {
        let branch = short_branch(&KField::one());
        let tail: Vec<&BranchPoint> = branch.points.iter().filter(|p| p.eps <= 0.1).collect();
        let inv: Vec<f64> = tail.iter().map(|p| 1.0 / p.eps).collect();
        let peaks: Vec<f64> = tail.iter().map(|p| p.peak).collect();
        assert!((log_slope(&inv, &peaks) - 0.5).abs() < 0.1);
        let last = branch.points.last().unwrap();
        assert_eq!(last.eps, 0.01);
        assert!((last.alpha_hat - 1.0).abs() < 0.05);
        assert!(branch.last.energy_identity().relative_gap() < 1e-6);
        assert!(branch.last.residual_norm() <= 1e-8);
    }

    #[test]
    fn doubled_k_rescales_amplitude() {
        let one = short_branch(&KField::one());
        let two = short_branch(&KField::constant(2.0).unwrap());
        let (a1, a2) = (one.points.last().unwrap(), two.points.last().unwrap());
        let ratio = a2.alpha_hat / a1.alpha_hat;
        assert!((ratio / 2f64.powf(-1.0 / 8.0) - 1.0).abs() < 1e-3, "{ratio}");
        assert!((a2.lambda_hat / a1.lambda_hat - 1.0).abs() < 1e-6);
    }
}
