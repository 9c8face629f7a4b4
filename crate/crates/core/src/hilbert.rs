//! Sampled product space ℝ × L²([−τ, 0]) and the operators of the lifted
//! delay dynamics.
//!
//! A lifted state is a pair `(z0, z1)`: the current log-reserve and the
//! past-control path sampled on the nodes `s_j = −τ + j·ds`, `j = 0..=n_s`.
//! All lag integrals use the trapezoid rule with the weights returned by
//! [`LagGrid::weights`], so every pairing below is an explicit weighted sum.
//!
//! The lifted dynamics read `dZ = (A Z + B α) dt + G dW` with
//!
//! ```text
//! A  (z0, z1) = (z1(0), −z1')        D(A)  = { z1(−τ) = 0 }
//! A* (z0, z1) = (0, z1')             D(A*) = { z0 = z1(0) }
//! B  u        = (u, −δ_{−τ} u)
//! B* (z0, z1) = z0 − z1(−τ)
//! G  w        = (σ w, 0)
//! ```
//!
//! The Dirac mass in `B` is carried by the `s = −τ` node alone, scaled so that
//! its trapezoid mass is exactly `−u`; this keeps `⟨B u, w⟩ = u · B* w` exact
//! on the grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance for the domain conditions of `A` and `A*`.
pub const DOMAIN_TOL: f64 = 1e-8;

/// Uniform grid on the delay interval `[−τ, 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagGrid {
    tau: f64,
    n_s: usize,
    ds: f64,
}

impl LagGrid {
    pub fn new(tau: f64, n_s: usize) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::config("tau", format!("delay must be positive, got {tau}")));
        }
        if n_s < 2 {
            return Err(Error::config("n_s", format!("need at least 2 lag intervals, got {n_s}")));
        }
        Ok(Self {
            tau,
            n_s,
            ds: tau / n_s as f64,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of lag intervals; there are `n_s + 1` nodes.
    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn ds(&self) -> f64 {
        self.ds
    }

    pub fn len(&self) -> usize {
        self.n_s + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, j: usize) -> f64 {
        if j == self.n_s {
            0.0
        } else {
            -self.tau + j as f64 * self.ds
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_s).map(|j| self.node(j)).collect()
    }

    /// Trapezoid weights on the lag nodes.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![self.ds; self.n_s + 1];
        w[0] = 0.5 * self.ds;
        w[self.n_s] = 0.5 * self.ds;
        w
    }

    /// Trapezoid integral of a sampled function over `[−τ, 0]`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let n = self.n_s;
        let inner: f64 = values[1..n].iter().sum();
        self.ds * (inner + 0.5 * (values[0] + values[n]))
    }
}

/// A path `z1 ∈ L²([−τ, 0])` sampled on the nodes of a [`LagGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathH(Vec<f64>);

impl PathH {
    pub fn new(values: Vec<f64>, grid: &LagGrid) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "path has {} samples, lag grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("path sample {j} is not finite")));
        }
        Ok(Self(values))
    }

    /// Wraps samples without validation; callers guarantee length and finiteness.
    pub(crate) fn from_values_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(grid: &LagGrid) -> Self {
        Self(vec![0.0; grid.len()])
    }

    pub fn constant(grid: &LagGrid, value: f64) -> Self {
        Self(vec![value; grid.len()])
    }

    /// Samples `f(s)` at every lag node.
    pub fn from_fn(grid: &LagGrid, f: impl Fn(f64) -> f64) -> Self {
        Self(grid.nodes().into_iter().map(f).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Value at `s = −τ`.
    pub fn first(&self) -> f64 {
        self.0[0]
    }

    /// Value at `s = 0`.
    pub fn last(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub(crate) fn check(&self, grid: &LagGrid) -> Result<()> {
        if self.0.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "path has {} samples, lag grid has {} nodes",
                self.0.len(),
                grid.len()
            )));
        }
        Ok(())
    }
}

/// A point `z = (z0, z1)` of the product space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductPoint {
    pub z0: f64,
    pub z1: PathH,
}

impl ProductPoint {
    pub fn new(z0: f64, z1: PathH) -> Self {
        Self { z0, z1 }
    }

    pub fn zero(grid: &LagGrid) -> Self {
        Self::new(0.0, PathH::zeros(grid))
    }
}

/// `d/ds` on the lag grid: central differences inside, first-order one-sided
/// differences at the two endpoints.
pub fn lag_derivative(values: &[f64], ds: f64) -> Vec<f64> {
    let n = values.len() - 1;
    let mut d = vec![0.0; n + 1];
    d[0] = (values[1] - values[0]) / ds;
    d[n] = (values[n] - values[n - 1]) / ds;
    for j in 1..n {
        d[j] = (values[j + 1] - values[j - 1]) / (2.0 * ds);
    }
    d
}

/// `⟨z, w⟩ = z0·w0 + ∫ z1 w1 ds` with trapezoid quadrature.
pub fn inner_product(z: &ProductPoint, w: &ProductPoint, g: &LagGrid) -> Result<f64> {
    z.z1.check(g)?;
    w.z1.check(g)?;
    let prod: Vec<f64> = z.z1.0.iter().zip(&w.z1.0).map(|(a, b)| a * b).collect();
    Ok(z.z0 * w.z0 + g.integrate(&prod))
}

pub fn apply_a(z: &ProductPoint, g: &LagGrid) -> Result<ProductPoint> {
    apply_a_with_tol(z, g, DOMAIN_TOL)
}

/// `A(z0, z1) = (z1(0), −dz1/ds)`, requiring `|z1(−τ)| ≤ tol`.
pub fn apply_a_with_tol(z: &ProductPoint, g: &LagGrid, tol: f64) -> Result<ProductPoint> {
    z.z1.check(g)?;
    if z.z1.first().abs() > tol {
        return Err(Error::Domain(format!(
            "A requires z1(-tau) = 0, got {}",
            z.z1.first()
        )));
    }
    let d = lag_derivative(&z.z1.0, g.ds);
    Ok(ProductPoint::new(
        z.z1.last(),
        PathH(d.into_iter().map(|v| -v).collect()),
    ))
}

pub fn apply_a_star(z: &ProductPoint, g: &LagGrid) -> Result<ProductPoint> {
    apply_a_star_with_tol(z, g, DOMAIN_TOL)
}

/// `A*(z0, z1) = (0, dz1/ds)`, requiring `|z0 − z1(0)| ≤ tol`.
pub fn apply_a_star_with_tol(z: &ProductPoint, g: &LagGrid, tol: f64) -> Result<ProductPoint> {
    z.z1.check(g)?;
    if (z.z0 - z.z1.last()).abs() > tol {
        return Err(Error::Domain(format!(
            "A* requires z0 = z1(0), got z0 = {} and z1(0) = {}",
            z.z0,
            z.z1.last()
        )));
    }
    Ok(ProductPoint::new(0.0, PathH(lag_derivative(&z.z1.0, g.ds))))
}

/// `B u = (u, −δ_{−τ} u)`. The Dirac mass sits on the first node with the
/// value `−2u/ds`, i.e. trapezoid mass exactly `−u`.
pub fn apply_b(u: f64, g: &LagGrid) -> ProductPoint {
    let mut path = vec![0.0; g.len()];
    path[0] = -2.0 * u / g.ds;
    ProductPoint::new(u, PathH(path))
}

pub fn apply_b_star(z: &ProductPoint) -> f64 {
    z.z0 - z.z1.first()
}

/// Scalar action of `G`: a Brownian increment moves only the reserve.
pub fn apply_g(dw: f64, sigma: f64, g: &LagGrid) -> ProductPoint {
    ProductPoint::new(sigma * dw, PathH::zeros(g))
}

/// Sparse matrix in triplet form over a weighted grid.
#[derive(Debug, Clone)]
pub struct DiscreteGenerator {
    n: usize,
    weights: Vec<f64>,
    entries: Vec<(usize, usize, f64)>,
}

impl DiscreteGenerator {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(r, c, v) in &self.entries {
            out[r] += v * phi[c];
        }
        out
    }

    /// `L* = W⁻¹ Lᵀ W`, the adjoint for the weighted inner product.
    pub fn apply_adjoint(&self, nu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(r, c, v) in &self.entries {
            out[c] += v * self.weights[r] * nu[r];
        }
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o /= w;
        }
        out
    }

    pub fn pairing(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.weights)
            .map(|((x, y), w)| w * x * y)
            .sum()
    }
}

fn derivative_stencil(n: usize, h: f64) -> Vec<Vec<(usize, f64)>> {
    (0..n)
        .map(|i| {
            if i == 0 {
                vec![(0, -1.0 / h), (1, 1.0 / h)]
            } else if i == n - 1 {
                vec![(n - 2, -1.0 / h), (n - 1, 1.0 / h)]
            } else {
                vec![(i - 1, -0.5 / h), (i + 1, 0.5 / h)]
            }
        })
        .collect()
}

fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

/// Generator of the lifted dynamics acting on test functions
/// `ψ(z0, z1(s), s)` sampled on a tensor grid (reserve × path value × lag).
///
/// Terms: transport `z1 ∂_s ∂_{z1} ψ`, feedback drift in `z0`, the control
/// injection at `s = −τ`, and the diffusion `½σ² ∂²_{z0} ψ`.
pub fn lifted_generator(g: &LagGrid, nx: usize, ny: usize, sigma: f64) -> DiscreteGenerator {
    let (x_lo, x_hi) = (-1.0, 1.0);
    let (y_lo, y_hi) = (-1.0, 1.0);
    let hx = (x_hi - x_lo) / (nx - 1) as f64;
    let hy = (y_hi - y_lo) / (ny - 1) as f64;
    let ns = g.len();
    let idx = |a: usize, b: usize, j: usize| (j * ny + b) * nx + a;
    let n = nx * ny * ns;

    let wx = trapezoid_weights(nx, hx);
    let wy = trapezoid_weights(ny, hy);
    let ws = g.weights();
    let mut weights = vec![0.0; n];
    for j in 0..ns {
        for b in 0..ny {
            for a in 0..nx {
                weights[idx(a, b, j)] = wx[a] * wy[b] * ws[j];
            }
        }
    }

    let dx = derivative_stencil(nx, hx);
    let dy = derivative_stencil(ny, hy);
    let dsd = derivative_stencil(ns, g.ds());
    // a fixed linear feedback standing in for α̂(z0, z1(−τ))
    let feedback = |x: f64, y: f64| -0.8 * x + 0.3 * y;

    let mut entries = Vec::new();
    for j in 0..ns {
        for b in 0..ny {
            let y = y_lo + b as f64 * hy;
            for a in 0..nx {
                let x = x_lo + a as f64 * hx;
                let r = idx(a, b, j);
                let alpha = feedback(x, y);
                for &(jj, vs) in &dsd[j] {
                    for &(bb, vy) in &dy[b] {
                        entries.push((r, idx(a, bb, jj), y * vs * vy));
                    }
                }
                for &(aa, v) in &dx[a] {
                    entries.push((r, idx(aa, b, j), alpha * v));
                }
                if j == 0 {
                    for &(bb, v) in &dy[b] {
                        entries.push((r, idx(a, bb, 0), -alpha * v / ws[0]));
                    }
                }
                if a > 0 && a < nx - 1 {
                    let c = 0.5 * sigma * sigma / (hx * hx);
                    entries.push((r, idx(a - 1, b, j), c));
                    entries.push((r, idx(a, b, j), -2.0 * c));
                    entries.push((r, idx(a + 1, b, j), c));
                }
            }
        }
    }
    DiscreteGenerator { n, weights, entries }
}

/// Largest `|⟨Lφ, ν⟩ − ⟨φ, L*ν⟩|` over `n_trials` random pairs drawn from a
/// seeded stream.
pub fn adjointness_defect(g: &LagGrid, n_trials: usize, seed: u64) -> f64 {
    let op = lifted_generator(g, 7, 5, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..n_trials.max(1) {
        let phi: Vec<f64> = (0..op.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nu: Vec<f64> = (0..op.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(defect_for(&op, &phi, &nu));
    }
    worst
}

pub fn defect_for(op: &DiscreteGenerator, phi: &[f64], nu: &[f64]) -> f64 {
    let lhs = op.pairing(&op.apply(phi), nu);
    let rhs = op.pairing(phi, &op.apply_adjoint(nu));
    (lhs - rhs).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b, tol): (f64, f64, f64) = ($a, $b, $tol);
                assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
            }};
        }
        pub(crate) use assert_close;
    }

    fn grid(tau: f64, n: usize) -> LagGrid {
        LagGrid::new(tau, n).unwrap()
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(LagGrid::new(0.0, 10).is_err());
        assert!(LagGrid::new(1.0, 1).is_err());
        let g = grid(1.0, 4);
        assert_eq!(g.nodes(), vec![-1.0, -0.75, -0.5, -0.25, 0.0]);
    }

    #[test]
    fn inner_product_examples() {
        let g = grid(1.0, 50);
        let one = ProductPoint::new(1.0, PathH::zeros(&g));
        assert_eq!(inner_product(&one, &one, &g).unwrap(), 1.0);

        let c = ProductPoint::new(0.0, PathH::constant(&g, 1.0));
        assert_close!(inner_product(&c, &c, &g).unwrap(), 1.0, 1e-14);

        let s = ProductPoint::new(0.0, PathH::from_fn(&g, |s| s));
        let v = inner_product(&s, &s, &g).unwrap();
        // trapezoid error for s² is ds²/6 exactly
        assert_close!(v, 1.0 / 3.0, g.ds() * g.ds());
    }

    #[test]
    fn inner_product_grid_mismatch() {
        let g = grid(1.0, 10);
        let h = grid(1.0, 12);
        let z = ProductPoint::zero(&g);
        let w = ProductPoint::zero(&h);
        assert!(matches!(inner_product(&z, &w, &g), Err(Error::Dimension(_))));
    }

    #[test]
    fn a_examples() {
        let g = grid(1.0, 40);
        let z = ProductPoint::new(5.0, PathH::zeros(&g));
        let az = apply_a(&z, &g).unwrap();
        assert_eq!(az.z0, 0.0);
        assert!(az.z1.values().iter().all(|v| *v == 0.0));

        let lin = ProductPoint::new(0.0, PathH::from_fn(&g, |s| s + 1.0));
        let az = apply_a(&lin, &g).unwrap();
        assert_close!(az.z0, 1.0, 1e-14);
        for v in az.z1.values() {
            assert_close!(*v, -1.0, 1e-12);
        }

        let quad = ProductPoint::new(0.0, PathH::from_fn(&g, |s| (s + 1.0).powi(2)));
        let az = apply_a(&quad, &g).unwrap();
        assert_close!(az.z0, 1.0, 1e-12);
        for (v, s) in az.z1.values().iter().zip(g.nodes()) {
            assert_close!(*v, -2.0 * (s + 1.0), 2.0 * g.ds());
        }
    }

    #[test]
    fn a_domain_violation() {
        let g = grid(1.0, 10);
        let z = ProductPoint::new(0.0, PathH::constant(&g, 1.0));
        assert!(matches!(apply_a(&z, &g), Err(Error::Domain(_))));
        assert!(apply_a_with_tol(&z, &g, 2.0).is_ok());
    }

    #[test]
    fn a_star_examples() {
        let g = grid(1.0, 40);
        let c = ProductPoint::new(3.0, PathH::constant(&g, 3.0));
        let r = apply_a_star(&c, &g).unwrap();
        assert_eq!(r.z0, 0.0);
        assert!(r.z1.values().iter().all(|v| *v == 0.0));

        let s = ProductPoint::new(0.0, PathH::from_fn(&g, |s| s));
        let r = apply_a_star(&s, &g).unwrap();
        for v in r.z1.values() {
            assert_close!(*v, 1.0, 1e-12);
        }

        let e = ProductPoint::new(1.0, PathH::from_fn(&g, f64::exp));
        let r = apply_a_star(&e, &g).unwrap();
        for (v, s) in r.z1.values().iter().zip(g.nodes()) {
            assert_close!(*v, s.exp(), g.ds());
        }

        let bad = ProductPoint::new(2.0, PathH::from_fn(&g, |s| s));
        assert!(matches!(apply_a_star(&bad, &g), Err(Error::Domain(_))));
    }

    #[test]
    fn b_examples() {
        let g = grid(1.0, 10);
        let b0 = apply_b(0.0, &g);
        assert_eq!(b0.z0, 0.0);
        assert!(b0.z1.values().iter().all(|v| *v == 0.0));

        let b1 = apply_b(1.0, &g);
        assert_eq!(b1.z0, 1.0);
        // unit negative mass in the first half-cell
        assert_close!(g.integrate(b1.z1.values()), -1.0, 1e-14);
        assert!(b1.z1.values()[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn b_star_examples() {
        let g = grid(1.0, 10);
        assert_eq!(apply_b_star(&ProductPoint::new(1.0, PathH::zeros(&g))), 1.0);
        let mut p = PathH::zeros(&g);
        p.values_mut()[0] = 2.0;
        assert_eq!(apply_b_star(&ProductPoint::new(0.0, p)), -2.0);
        assert_eq!(apply_b_star(&ProductPoint::new(3.0, PathH::constant(&g, 3.0))), 0.0);
    }

    #[test]
    fn b_duality_pairing() {
        let g = grid(0.5, 25);
        let w = ProductPoint::new(0.7, PathH::from_fn(&g, |s| (3.0 * s).sin() + 0.2));
        for u in [-1.3, 0.0, 0.4, 2.0] {
            let lhs = inner_product(&apply_b(u, &g), &w, &g).unwrap();
            assert_close!(lhs, u * apply_b_star(&w), 1e-12);
        }
    }

    #[test]
    fn g_moves_reserve_only() {
        let g = grid(1.0, 4);
        let p = apply_g(0.5, 2.0, &g);
        assert_eq!(p.z0, 1.0);
        assert!(p.z1.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn adjointness_defect_examples() {
        let g = grid(0.5, 10);
        let op = lifted_generator(&g, 7, 5, 1.0);
        let zero = vec![0.0; op.dim()];
        assert_eq!(defect_for(&op, &zero, &zero), 0.0);
        let d1 = adjointness_defect(&g, 100, 7);
        assert!(d1 <= 1e-10, "defect {d1}");
        assert_eq!(d1, adjointness_defect(&g, 100, 7));
    }

    #[test]
    fn a_and_a_star_are_adjoint_on_the_grid() {
        // z ∈ D(A), w ∈ D(A*): summation by parts with the one-sided end
        // stencils and trapezoid weights is exact.
        for n in [20, 40, 80, 160] {
            let g = grid(1.0, n);
            let z = ProductPoint::new(0.3, PathH::from_fn(&g, |s| (s + 1.0) * (2.0 - s)));
            let w1 = PathH::from_fn(&g, |s| (2.0 * s).cos());
            let w = ProductPoint::new(w1.last(), w1);
            let lhs = inner_product(&apply_a(&z, &g).unwrap(), &w, &g).unwrap();
            let rhs = inner_product(&z, &apply_a_star(&w, &g).unwrap(), &g).unwrap();
            let d = (lhs - rhs).abs();
            assert!(d < 1e-12, "n={n} defect {d}");
        }
    }
}
