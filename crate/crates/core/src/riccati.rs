//! Backward solver for the delay kernels `E0(t)`, `E1(t,θ)`, `E2(t,θ,φ)`,
//! `E3(t)` of the quadratic value-function ansatz.
//!
//! With `A(t) = E0(t) + E1(t,0)` and `g(t,θ) = E1(t,θ) + E2(t,θ,0)`:
//!
//! ```text
//! dE0/dt                 = −λ A² − ε/2              E0(T) = c/2
//! (∂t − ∂θ) E1           = −λ A g                   E1(T,·) = 0,  E1(t,−τ) = −E0(t)
//! (∂t − ∂θ − ∂φ) E2      = −λ g(θ) g(φ)             E2(T,·,·) = 0, E2(t,θ,−τ) = −E1(t,θ)
//! dE3/dt                 = −κ E0                    E3(T) = 0
//! ```
//!
//! `λ` and `κ` depend on the regime ([`CouplingKind`]). On the aligned grid
//! `dt = ds` each characteristic moves exactly one node per step, so no
//! interpolation is needed.
//!
//! The terminal and lateral conditions disagree at the corner `(T, −τ)`
//! whenever `c ≠ 0`; the lateral value is stored there.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::LagGrid;

/// Magnitude beyond which a kernel solve is declared divergent.
pub const BLOW_UP: f64 = 1e12;

/// Model constants of one game instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    #[serde(rename = "T")]
    pub t_horizon: f64,
    pub tau: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub c: f64,
    #[serde(default)]
    pub n_players: Option<usize>,
}

impl Default for GameParams {
    fn default() -> Self {
        Self {
            t_horizon: 1.0,
            tau: 0.5,
            sigma: 1.0,
            epsilon: 1.0,
            c: 1.0,
            n_players: None,
        }
    }
}

impl GameParams {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |key: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be finite and >= 0, got {v}")))
            }
        };
        if !(self.t_horizon.is_finite() && self.t_horizon > 0.0) {
            return Err(Error::config("T", format!("horizon must be positive, got {}", self.t_horizon)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0 && self.tau <= self.t_horizon) {
            return Err(Error::config(
                "tau",
                format!("delay must satisfy 0 < tau <= T, got {}", self.tau),
            ));
        }
        finite_nonneg("sigma", self.sigma)?;
        finite_nonneg("epsilon", self.epsilon)?;
        finite_nonneg("c", self.c)?;
        if let Some(n) = self.n_players {
            if n < 2 {
                return Err(Error::config("n_players", format!("need at least 2 players, got {n}")));
            }
        }
        Ok(())
    }

    /// Same instance with running and terminal weights scaled by `k`.
    pub fn with_cost_scale(&self, k: f64) -> Self {
        Self {
            epsilon: self.epsilon * k,
            c: self.c * k,
            ..*self
        }
    }
}

/// Coefficient regime of the kernel system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CouplingKind {
    NPlayer(usize),
    MeanField,
}

impl CouplingKind {
    pub fn lambda(&self) -> f64 {
        coupling_coefficient(*self)
    }

    /// Factor `κ` in `dE3/dt = −κ E0`.
    pub fn noise_factor(&self, sigma: f64) -> f64 {
        match *self {
            CouplingKind::NPlayer(n) => (1.0 - 1.0 / n as f64) * sigma * sigma,
            CouplingKind::MeanField => sigma * sigma,
        }
    }

    pub fn n_players(&self) -> Option<usize> {
        match *self {
            CouplingKind::NPlayer(n) => Some(n),
            CouplingKind::MeanField => None,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            CouplingKind::NPlayer(n) => format!("nplayer-{n}"),
            CouplingKind::MeanField => "meanfield".to_string(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            CouplingKind::NPlayer(n) if n < 2 => Err(Error::config(
                "n_players",
                format!("need at least 2 players, got {n}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Quadratic coefficient `λ`: `2(1/N² − 1)` for `N` players, `−2` in the mean-field limit.
pub fn coupling_coefficient(k: CouplingKind) -> f64 {
    match k {
        CouplingKind::NPlayer(n) => {
            let n = n as f64;
            2.0 * (1.0 / (n * n) - 1.0)
        }
        CouplingKind::MeanField => -2.0,
    }
}

/// Aligned time/lag grid with `dt = ds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub t_horizon: f64,
    pub tau: f64,
    pub n_t: usize,
    pub n_s: usize,
    pub dt: f64,
}

const ALIGN_TOL: f64 = 1e-9;

impl Grid {
    pub fn new(t_horizon: f64, tau: f64, n_t: usize) -> Result<Self> {
        if n_t == 0 {
            return Err(Error::config("n_t", "need at least one time step"));
        }
        let dt = t_horizon / n_t as f64;
        let ratio = tau / dt;
        let n_s = ratio.round();
        if (ratio - n_s).abs() > ALIGN_TOL * ratio.max(1.0) || n_s < 1.0 {
            return Err(Error::config(
                "n_t",
                format!("tau/dt = {ratio} is not a positive integer (T = {t_horizon}, tau = {tau}, n_t = {n_t})"),
            ));
        }
        let n_s = n_s as usize;
        if n_s < 2 {
            return Err(Error::config("n_t", format!("lag grid needs at least 2 intervals, got {n_s}")));
        }
        Ok(Self {
            t_horizon,
            tau,
            n_t,
            n_s,
            dt,
        })
    }

    pub fn lag(&self) -> LagGrid {
        LagGrid::new(self.tau, self.n_s).expect("validated at construction")
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_t {
            self.t_horizon
        } else {
            k as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_t).map(|k| self.time(k)).collect()
    }

    /// Index of the grid node at time `t`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = t / self.dt;
        let k = x.round();
        if !(x - k).abs().le(&1e-7) || k < 0.0 || k as usize > self.n_t {
            return Err(Error::OffGrid(t));
        }
        Ok(k as usize)
    }
}

/// Smallest `n ≥ n_t` (at least 2 lag intervals) for which `τ/(T/n)` is an
/// integer, or `None` when `τ/T` is too far from a rational with small
/// denominator to align below `64·n_t`.
pub fn aligned_n_t(t_horizon: f64, tau: f64, n_t: usize) -> Option<usize> {
    (n_t.max(1)..=64 * n_t.max(1)).find(|&n| Grid::new(t_horizon, tau, n).is_ok())
}

/// Time integrator along characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stepping {
    #[default]
    Euler,
    Heun,
}

/// Solved kernels on an aligned grid. `E2` is stored as the packed
/// triangle `θ ≤ φ`, so symmetry holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ESolution {
    params: GameParams,
    grid: Grid,
    coupling: CouplingKind,
    stepping: Stepping,
    e0: Vec<f64>,
    e1: Vec<f64>,
    e2: Vec<f64>,
    e3: Vec<f64>,
}

#[inline]
fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Row-major packed upper triangle of an `n × n` symmetric matrix.
#[inline]
fn tri_index(n: usize, j: usize, l: usize) -> usize {
    let (a, b) = if j <= l { (j, l) } else { (l, j) };
    a * n - a * (a + 1) / 2 + b
}

impl ESolution {
    /// Reassembles a solution from stored arrays. `e1` is row-major
    /// `[n_t+1][n_s+1]`; `e2` is the packed triangle `θ ≤ φ` per level.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        params: GameParams,
        grid: Grid,
        coupling: CouplingKind,
        stepping: Stepping,
        e0: Vec<f64>,
        e1: Vec<f64>,
        e2: Vec<f64>,
        e3: Vec<f64>,
    ) -> Result<Self> {
        let nt1 = grid.n_t + 1;
        let ns1 = grid.n_s + 1;
        let expect = [
            ("e0", e0.len(), nt1),
            ("e1", e1.len(), nt1 * ns1),
            ("e2", e2.len(), nt1 * tri_len(ns1)),
            ("e3", e3.len(), nt1),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Dimension(format!("{name} has {got} entries, expected {want}")));
            }
        }
        Ok(Self {
            params,
            grid,
            coupling,
            stepping,
            e0,
            e1,
            e2,
            e3,
        })
    }

    pub fn params(&self) -> &GameParams {
        &self.params
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn lag(&self) -> LagGrid {
        self.grid.lag()
    }

    pub fn coupling(&self) -> CouplingKind {
        self.coupling
    }

    pub fn stepping(&self) -> Stepping {
        self.stepping
    }

    pub fn n_t(&self) -> usize {
        self.grid.n_t
    }

    pub fn n_s(&self) -> usize {
        self.grid.n_s
    }

    pub fn e0(&self, k: usize) -> f64 {
        self.e0[k]
    }

    pub fn e3(&self, k: usize) -> f64 {
        self.e3[k]
    }

    /// `E1(t_k, θ_j)` with `θ_j = −τ + j·ds`.
    pub fn e1(&self, k: usize, j: usize) -> f64 {
        self.e1[k * (self.grid.n_s + 1) + j]
    }

    pub fn e1_row(&self, k: usize) -> &[f64] {
        let n = self.grid.n_s + 1;
        &self.e1[k * n..(k + 1) * n]
    }

    /// `E2(t_k, θ_j, θ_l)`.
    pub fn e2(&self, k: usize, j: usize, l: usize) -> f64 {
        let n = self.grid.n_s + 1;
        self.e2[k * tri_len(n) + tri_index(n, j, l)]
    }

    /// Packed triangle of level `k`.
    pub fn e2_level(&self, k: usize) -> &[f64] {
        let t = tri_len(self.grid.n_s + 1);
        &self.e2[k * t..(k + 1) * t]
    }

    /// Full symmetric `E2` plane at level `k`, row-major.
    pub fn e2_plane(&self, k: usize) -> Vec<f64> {
        let n = self.grid.n_s + 1;
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for l in 0..n {
                out[j * n + l] = self.e2(k, j, l);
            }
        }
        out
    }

    pub fn e0_all(&self) -> &[f64] {
        &self.e0
    }

    pub fn e1_all(&self) -> &[f64] {
        &self.e1
    }

    pub fn e2_packed(&self) -> &[f64] {
        &self.e2
    }

    pub fn e3_all(&self) -> &[f64] {
        &self.e3
    }

    /// `A(t_k) = E0 + E1(·, 0)`.
    pub fn a_coef(&self, k: usize) -> f64 {
        self.e0(k) + self.e1(k, self.grid.n_s)
    }

    /// `g(t_k, θ_j) = E1(t_k, θ_j) + E2(t_k, θ_j, 0)`.
    pub fn g_coef(&self, k: usize, j: usize) -> f64 {
        self.e1(k, j) + self.e2(k, j, self.grid.n_s)
    }

    /// Largest absolute entry over all kernels.
    pub fn max_abs(&self) -> f64 {
        self.e0
            .iter()
            .chain(&self.e1)
            .chain(&self.e2)
            .chain(&self.e3)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

struct Level {
    e0: f64,
    e1: Vec<f64>,
    e2: Vec<f64>,
    e3: f64,
}

impl Level {
    fn a(&self, ns: usize) -> f64 {
        self.e0 + self.e1[ns]
    }

    fn g(&self, ns: usize) -> Vec<f64> {
        let n = ns + 1;
        (0..n).map(|j| self.e1[j] + self.e2[tri_index(n, j, ns)]).collect()
    }

    fn apply_lateral(&mut self, ns: usize) {
        let n = ns + 1;
        self.e1[0] = -self.e0;
        for l in 0..n {
            self.e2[tri_index(n, 0, l)] = -self.e1[l];
        }
    }

    fn max_abs(&self) -> f64 {
        self.e1
            .iter()
            .chain(&self.e2)
            .fold(self.e0.abs().max(self.e3.abs()), |m, v| m.max(v.abs()))
    }
}

/// Euler step from level `k` to `k−1` along characteristics.
fn euler_step(cur: &Level, ns: usize, dt: f64, lam: f64, eps: f64, kappa: f64) -> Level {
    let n = ns + 1;
    let a = cur.a(ns);
    let g = cur.g(ns);
    let e0 = cur.e0 + dt * (lam * a * a + 0.5 * eps);
    let mut e1 = vec![0.0; n];
    for j in 1..n {
        e1[j] = cur.e1[j - 1] + dt * lam * a * g[j - 1];
    }
    let mut e2 = vec![0.0; tri_len(n)];
    for j in 1..n {
        for l in j..n {
            e2[tri_index(n, j, l)] =
                cur.e2[tri_index(n, j - 1, l - 1)] + dt * lam * g[j - 1] * g[l - 1];
        }
    }
    let mut next = Level {
        e0,
        e1,
        e2,
        e3: cur.e3 + dt * kappa * cur.e0,
    };
    next.apply_lateral(ns);
    next
}

/// Heun step: Euler predictor, then trapezoid of the sources along each characteristic.
fn heun_step(cur: &Level, ns: usize, dt: f64, lam: f64, eps: f64, kappa: f64) -> Level {
    let n = ns + 1;
    let pred = euler_step(cur, ns, dt, lam, eps, kappa);
    let (a0, g0) = (cur.a(ns), cur.g(ns));
    let (a1, g1) = (pred.a(ns), pred.g(ns));
    let h = 0.5 * dt;
    let e0 = cur.e0 + h * (lam * a0 * a0 + lam * a1 * a1 + eps);
    let mut e1 = vec![0.0; n];
    for j in 1..n {
        e1[j] = cur.e1[j - 1] + h * lam * (a0 * g0[j - 1] + a1 * g1[j]);
    }
    let mut e2 = vec![0.0; tri_len(n)];
    for j in 1..n {
        for l in j..n {
            e2[tri_index(n, j, l)] = cur.e2[tri_index(n, j - 1, l - 1)]
                + h * lam * (g0[j - 1] * g0[l - 1] + g1[j] * g1[l]);
        }
    }
    let mut next = Level {
        e0,
        e1,
        e2,
        e3: cur.e3 + h * kappa * (cur.e0 + e0),
    };
    next.apply_lateral(ns);
    next
}

pub fn solve_e_system(params: &GameParams, n_t: usize, coupling: CouplingKind) -> Result<ESolution> {
    solve_e_system_with(params, n_t, coupling, Stepping::Euler)
}

pub fn solve_e_system_with(
    params: &GameParams,
    n_t: usize,
    coupling: CouplingKind,
    stepping: Stepping,
) -> Result<ESolution> {
    params.validate()?;
    coupling.validate()?;
    if let (Some(n), CouplingKind::NPlayer(m)) = (params.n_players, coupling) {
        if n != m {
            return Err(Error::config(
                "n_players",
                format!("parameters say {n} players, coupling says {m}"),
            ));
        }
    }
    let grid = Grid::new(params.t_horizon, params.tau, n_t)?;
    let ns = grid.n_s;
    let n = ns + 1;
    let lam = coupling.lambda();
    let kappa = coupling.noise_factor(params.sigma);
    let dt = grid.dt;

    let mut e0 = vec![0.0; n_t + 1];
    let mut e1 = vec![0.0; (n_t + 1) * n];
    let mut e2 = vec![0.0; (n_t + 1) * tri_len(n)];
    let mut e3 = vec![0.0; n_t + 1];

    let mut level = Level {
        e0: 0.5 * params.c,
        e1: vec![0.0; n],
        e2: vec![0.0; tri_len(n)],
        e3: 0.0,
    };
    level.apply_lateral(ns);

    let mut store = |k: usize, lv: &Level| {
        e0[k] = lv.e0;
        e1[k * n..(k + 1) * n].copy_from_slice(&lv.e1);
        e2[k * tri_len(n)..(k + 1) * tri_len(n)].copy_from_slice(&lv.e2);
        e3[k] = lv.e3;
    };
    store(n_t, &level);
    for k in (1..=n_t).rev() {
        level = match stepping {
            Stepping::Euler => euler_step(&level, ns, dt, lam, params.epsilon, kappa),
            Stepping::Heun => heun_step(&level, ns, dt, lam, params.epsilon, kappa),
        };
        let m = level.max_abs();
        if m.is_nan() || m > BLOW_UP {
            return Err(Error::Divergence {
                step: k - 1,
                time: grid.time(k - 1),
            });
        }
        store(k - 1, &level);
    }

    Ok(ESolution {
        params: *params,
        grid,
        coupling,
        stepping,
        e0,
        e1,
        e2,
        e3,
    })
}

/// Max absolute residual of each kernel equation over the nodes checked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub e0_eq: f64,
    pub e1_eq: f64,
    pub e2_eq: f64,
    pub e3_eq: f64,
    pub dt: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.e0_eq.max(self.e1_eq).max(self.e2_eq).max(self.e3_eq)
    }

    pub fn as_array(&self) -> [(&'static str, f64); 4] {
        [
            ("e0", self.e0_eq),
            ("e1", self.e1_eq),
            ("e2", self.e2_eq),
            ("e3", self.e3_eq),
        ]
    }
}

/// True when time index `i` (which may be negative) lies within one step of
/// `T − pτ` for some `p ≥ 0`. The kernels jump or kink across these lines.
fn near_singular(i: i64, n_t: i64, n_s: i64) -> bool {
    let d = n_t - i;
    if d < -1 {
        return false;
    }
    let r = d.rem_euclid(n_s);
    r == 0 || r == 1 || r == n_s - 1
}

/// True when time node `k` lies within one step of a line `T − pτ`, where
/// the kernels jump or kink; classical residuals are not expected to
/// converge there.
pub fn near_singular_time(grid: &Grid, k: usize) -> bool {
    near_singular(k as i64, grid.n_t as i64, grid.n_s as i64)
}

/// Centered finite-difference residuals at interior nodes.
///
/// Nodes whose time `t`, or whose characteristic foot `t + θ`, `t + φ`, lies
/// within one grid step of `{T − pτ}` are skipped: the exact kernels are
/// discontinuous or kinked there and a centered stencil straddling the line
/// does not converge.
pub fn pde_residual(e: &ESolution) -> ResidualReport {
    let g = e.grid;
    let (nt, ns) = (g.n_t, g.n_s);
    let dt = g.dt;
    let lam = e.coupling.lambda();
    let kappa = e.coupling.noise_factor(e.params.sigma);
    let eps = e.params.epsilon;
    let sing = |i: i64| near_singular(i, nt as i64, ns as i64);
    let foot = |k: usize, j: usize| k as i64 + j as i64 - ns as i64;

    let mut r = ResidualReport {
        e0_eq: 0.0,
        e1_eq: 0.0,
        e2_eq: 0.0,
        e3_eq: 0.0,
        dt,
    };
    let inv2 = 0.5 / dt;
    for k in 1..nt {
        if sing(k as i64) {
            continue;
        }
        let a = e.a_coef(k);
        let r0 = (e.e0(k + 1) - e.e0(k - 1)) * inv2 + lam * a * a + 0.5 * eps;
        let r3 = (e.e3(k + 1) - e.e3(k - 1)) * inv2 + kappa * e.e0(k);
        r.e0_eq = r.e0_eq.max(r0.abs());
        r.e3_eq = r.e3_eq.max(r3.abs());

        let gk: Vec<f64> = (0..=ns).map(|j| e.g_coef(k, j)).collect();
        for j in 1..ns {
            if sing(foot(k, j)) {
                continue;
            }
            let r1 = (e.e1(k + 1, j) - e.e1(k - 1, j)) * inv2
                - (e.e1(k, j + 1) - e.e1(k, j - 1)) * inv2
                + lam * a * gk[j];
            r.e1_eq = r.e1_eq.max(r1.abs());
            for l in j..ns {
                if sing(foot(k, l)) {
                    continue;
                }
                let r2 = (e.e2(k + 1, j, l) - e.e2(k - 1, j, l)) * inv2
                    - (e.e2(k, j + 1, l) - e.e2(k, j - 1, l)) * inv2
                    - (e.e2(k, j, l + 1) - e.e2(k, j, l - 1)) * inv2
                    + lam * gk[j] * gk[l];
                r.e2_eq = r.e2_eq.max(r2.abs());
            }
        }
    }
    r
}

/// Boundary-condition audit of a solved instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    /// `|E0(T) − c/2|`.
    pub e0_terminal: f64,
    /// `max |E1(T, θ)|` over `θ > −τ`.
    pub e1_terminal: f64,
    /// `max |E2(T, θ, φ)|` over `θ, φ > −τ`.
    pub e2_terminal: f64,
    /// `|E3(T)|`.
    pub e3_terminal: f64,
    /// `max_t |E1(t, −τ) + E0(t)|`.
    pub e1_lateral: f64,
    /// `max |E2(t, θ, −τ) + E1(t, θ)|`.
    pub e2_lateral: f64,
    /// `max |E2(t, θ, φ) − E2(t, φ, θ)|`.
    pub e2_symmetry: f64,
    /// `|E1(T, −τ)|`: gap between the terminal and lateral data at the corner.
    pub corner_conflict: f64,
    /// `max_t |E2(t, −τ, −τ) − E0(t)|`.
    pub corner_mismatch: f64,
}

impl BoundaryReport {
    /// Largest defect among the seven boundary conditions and symmetry.
    pub fn max_defect(&self) -> f64 {
        [
            self.e0_terminal,
            self.e1_terminal,
            self.e2_terminal,
            self.e3_terminal,
            self.e1_lateral,
            self.e2_lateral,
            self.e2_symmetry,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn boundary_report(e: &ESolution) -> BoundaryReport {
    let (nt, ns) = (e.n_t(), e.n_s());
    let mut r = BoundaryReport {
        e0_terminal: (e.e0(nt) - 0.5 * e.params.c).abs(),
        e1_terminal: (1..=ns).map(|j| e.e1(nt, j).abs()).fold(0.0, f64::max),
        e2_terminal: 0.0,
        e3_terminal: e.e3(nt).abs(),
        e1_lateral: 0.0,
        e2_lateral: 0.0,
        e2_symmetry: 0.0,
        corner_conflict: e.e1(nt, 0).abs(),
        corner_mismatch: 0.0,
    };
    for j in 1..=ns {
        for l in 1..=ns {
            r.e2_terminal = r.e2_terminal.max(e.e2(nt, j, l).abs());
        }
    }
    for k in 0..=nt {
        r.e1_lateral = r.e1_lateral.max((e.e1(k, 0) + e.e0(k)).abs());
        r.corner_mismatch = r.corner_mismatch.max((e.e2(k, 0, 0) - e.e0(k)).abs());
        for j in 0..=ns {
            r.e2_lateral = r.e2_lateral.max((e.e2(k, j, 0) + e.e1(k, j)).abs());
            for l in 0..=ns {
                r.e2_symmetry = r.e2_symmetry.max((e.e2(k, j, l) - e.e2(k, l, j)).abs());
            }
        }
    }
    r
}

/// `max_k |E3(t_k) − κ ∫_{t_k}^T E0|` with trapezoid quadrature.
pub fn e3_consistency(e: &ESolution) -> f64 {
    let kappa = e.coupling.noise_factor(e.params.sigma);
    let dt = e.grid.dt;
    let nt = e.n_t();
    let mut integral = 0.0;
    let mut worst = e.e3(nt).abs();
    for k in (0..nt).rev() {
        integral += 0.5 * dt * (e.e0(k) + e.e0(k + 1));
        worst = worst.max((e.e3(k) - kappa * integral).abs());
    }
    worst
}
