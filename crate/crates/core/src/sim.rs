//! Euler–Maruyama simulation of the delayed N-player dynamics
//!
//! ```text
//! X^i_{k+1} = X^i_k + (α^i_k − α^i_{k−m}) dt + σ √dt ξ^i_k,     m = τ/dt
//! ```
//!
//! under feedback strategies read from solved kernels, with Monte Carlo cost
//! estimates, paired deviation tests and moment diagnostics.
//!
//! Index map: the control history of agent `i` is kept as one array with
//! `hist[m + k] = α_k`; the pre-history `α_{−m..−1}` is `φ` sampled on the
//! lag nodes. The lifted path at step `k` is `z1(s_j) = −α_{k−j}` for
//! `j ≥ 1`; node `j = 0` (the control about to be chosen) copies node 1.
//!
//! Each path draws from its own ChaCha8 stream (`seed`, stream = path index),
//! in (step, agent) order, so results do not depend on the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{LagGrid, PathH, ProductPoint};
use crate::riccati::{CouplingKind, ESolution, GameParams, Grid};
use crate::value::AgentState;

/// Initial reserves and control pre-histories `α_s = φ(s)`, `s ∈ [−τ, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub xi: Vec<f64>,
    pub phi: Vec<PathH>,
}

impl InitialData {
    pub fn new(xi: Vec<f64>, phi: Vec<PathH>, lag: &LagGrid) -> Result<Self> {
        if xi.len() != phi.len() {
            return Err(Error::Dimension(format!(
                "{} initial reserves but {} control histories",
                xi.len(),
                phi.len()
            )));
        }
        if xi.is_empty() {
            return Err(Error::Dimension("need at least one agent".into()));
        }
        for p in &phi {
            if p.len() != lag.len() {
                return Err(Error::Dimension(format!(
                    "control history has {} samples, lag grid has {}",
                    p.len(),
                    lag.len()
                )));
            }
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("initial reserves must be finite".into()));
        }
        Ok(Self { xi, phi })
    }

    /// Reserves `xi` with every pre-history equal to the constant `phi`.
    pub fn constant(lag: &LagGrid, xi: Vec<f64>, phi: f64) -> Self {
        let n = xi.len();
        Self {
            xi,
            phi: vec![PathH::constant(lag, phi); n],
        }
    }

    pub fn n_agents(&self) -> usize {
        self.xi.len()
    }

    /// Lifted states at `t = 0`: `z1(s_j) = −α_{−j·ds} = −φ(s_{n_s−j})`.
    pub fn agent_states(&self) -> Vec<AgentState> {
        self.xi
            .iter()
            .zip(&self.phi)
            .map(|(x, p)| {
                let v = p.values();
                let n = v.len() - 1;
                let mut z1: Vec<f64> = (0..=n).map(|j| -v[n - j]).collect();
                z1[0] = z1[1];
                ProductPoint::new(*x, PathH::from_values_unchecked(z1))
            })
            .collect()
    }
}

/// Feedback rule of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    /// Nash feedback from the N-player kernels, full-population means.
    NashNPlayer,
    /// Mean-field feedback with the live leave-one-out means.
    NashMeanField,
    /// `base + delta`.
    Perturbed { base: Box<Strategy>, delta: f64 },
    Zero,
}

impl Strategy {
    fn needs(&self) -> (bool, bool) {
        match self {
            Strategy::NashNPlayer => (true, false),
            Strategy::NashMeanField => (false, true),
            Strategy::Perturbed { base, .. } => base.needs(),
            Strategy::Zero => (false, false),
        }
    }
}

/// One strategy per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec(pub Vec<Strategy>);

impl StrategySpec {
    pub fn uniform(n: usize, s: Strategy) -> Self {
        Self(vec![s; n])
    }

    /// Agent `i` adds `delta` to its current strategy.
    pub fn with_deviation(mut self, i: usize, delta: f64) -> Self {
        let base = std::mem::replace(&mut self.0[i], Strategy::Zero);
        self.0[i] = Strategy::Perturbed {
            base: Box::new(base),
            delta,
        };
        self
    }
}

/// Run controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_t: usize,
    pub m_paths: usize,
    pub seed: u64,
    /// Keep full `x` and `α` trajectories (memory `2·M·N·(n_t+1)`).
    pub store_paths: bool,
}

/// Monte Carlo ensemble. Arrays are row-major in the order of their names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub params: GameParams,
    pub grid: Grid,
    pub n_agents: usize,
    pub m_paths: usize,
    pub seed: u64,
    /// `[M][N]` realized costs.
    pub costs: Vec<f64>,
    /// `[M][n_t+1]` empirical mean reserve.
    pub m0: Vec<f64>,
    /// `[M][n_t+1]` empirical mean control.
    pub mean_alpha: Vec<f64>,
    /// `[m]` empirical mean of the control pre-history `α_{−m..−1}`.
    pub mean_prehistory: Vec<f64>,
    /// `[M][N][n_t+1]` reserves, when stored.
    pub paths: Option<Vec<f64>>,
    /// `[M][N][n_t+1]` controls, when stored.
    pub controls: Option<Vec<f64>>,
}

impl SimOutput {
    pub fn cost(&self, path: usize, i: usize) -> f64 {
        self.costs[path * self.n_agents + i]
    }

    pub fn m0_at(&self, path: usize, k: usize) -> f64 {
        self.m0[path * (self.grid.n_t + 1) + k]
    }

    /// Empirical mean past-control path at step `k`: node `j ≥ 1` is `−ᾱ_{k−j}`,
    /// node 0 copies node 1.
    pub fn m1_at(&self, path: usize, k: usize) -> Vec<f64> {
        let ns = self.grid.n_s;
        let m = ns;
        let row = &self.mean_alpha[path * (self.grid.n_t + 1)..(path + 1) * (self.grid.n_t + 1)];
        let alpha = |idx: i64| {
            if idx >= 0 {
                row[idx as usize]
            } else {
                self.mean_prehistory[(idx + m as i64) as usize]
            }
        };
        let mut out: Vec<f64> = (0..=ns).map(|j| -alpha(k as i64 - j as i64)).collect();
        out[0] = out[1];
        out
    }
}

/// Per-step feedback coefficients: `Q = a_k x + Σ_j h_k[j] y_j` for the
/// difference `(x, y)`; see `value::Kernels::feedback`.
struct Feedback {
    a: Vec<f64>,
    h: Vec<f64>,
    ns: usize,
    scale: f64,
    leave_one_out: bool,
}

impl Feedback {
    fn new(e: &ESolution, n_agents: usize) -> Self {
        let (nt, ns) = (e.n_t(), e.n_s());
        let w = e.lag().weights();
        let mut a = Vec::with_capacity(nt + 1);
        let mut h = Vec::with_capacity((nt + 1) * (ns + 1));
        for k in 0..=nt {
            a.push(2.0 * (e.e0(k) + e.e1(k, ns)));
            for j in 0..=ns {
                h.push(-2.0 * w[j] * (e.e1(k, ns - j) + e.e2(k, ns, ns - j)));
            }
        }
        let n = n_agents as f64;
        let (scale, leave_one_out) = match e.coupling() {
            CouplingKind::NPlayer(_) => (1.0 - 1.0 / n, false),
            // m^i − z^i = N/(N−1) (z̄ − z^i)
            CouplingKind::MeanField => (n / (n - 1.0), true),
        };
        Self {
            a,
            h,
            ns,
            scale,
            leave_one_out,
        }
    }

    fn row(&self, k: usize) -> &[f64] {
        &self.h[k * (self.ns + 1)..(k + 1) * (self.ns + 1)]
    }
}

fn check_kernels(e: &ESolution, grid: &Grid, params: &GameParams, what: &str) -> Result<()> {
    let g = e.grid();
    if g.n_t != grid.n_t || g.n_s != grid.n_s || (g.dt - grid.dt).abs() > 1e-12 {
        return Err(Error::config(
            "n_t",
            format!("{what} kernels were solved on n_t = {}, simulation uses {}", g.n_t, grid.n_t),
        ));
    }
    if (e.params().sigma - params.sigma).abs() > 0.0 {
        return Err(Error::config("sigma", format!("{what} kernels use a different volatility")));
    }
    Ok(())
}

struct PathResult {
    costs: Vec<f64>,
    m0: Vec<f64>,
    mean_alpha: Vec<f64>,
    x: Option<Vec<f64>>,
    alpha: Option<Vec<f64>>,
}

struct Setup<'a> {
    params: &'a GameParams,
    grid: Grid,
    init: &'a InitialData,
    strat: &'a StrategySpec,
    fb_n: Option<Feedback>,
    fb_m: Option<Feedback>,
    cfg: SimConfig,
}

impl Setup<'_> {
    fn control(&self, s: &Strategy, k: usize, x: f64, xbar: f64, own: f64, mean: f64) -> f64 {
        match s {
            Strategy::Zero => 0.0,
            Strategy::Perturbed { base, delta } => self.control(base, k, x, xbar, own, mean) + delta,
            Strategy::NashNPlayer => {
                let f = self.fb_n.as_ref().expect("checked before the run");
                f.scale * (f.a[k] * (xbar - x) + (mean - own))
            }
            Strategy::NashMeanField => {
                let f = self.fb_m.as_ref().expect("checked before the run");
                debug_assert!(f.leave_one_out);
                f.scale * (f.a[k] * (xbar - x) + (mean - own))
            }
        }
    }

    /// `Σ_j h_k[j] z1_j` for the history `hist` (`hist[m + k'] = α_{k'}`).
    fn window(h: &[f64], hist: &[f64], m: usize, k: usize) -> f64 {
        // z1_j = −α_{k−j} for j ≥ 1, z1_0 = z1_1
        let mut acc = -h[0] * hist[m + k - 1];
        for j in 1..h.len() {
            acc -= h[j] * hist[m + k - j];
        }
        acc
    }

    fn run_path(&self, path: usize) -> Result<PathResult> {
        let n = self.init.n_agents();
        let nt = self.grid.n_t;
        let m = self.grid.n_s;
        let dt = self.grid.dt;
        let sq = self.params.sigma * dt.sqrt();
        let eps = self.params.epsilon;

        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(path as u64);

        let len = m + nt + 1;
        let mut hist: Vec<Vec<f64>> = self
            .init
            .phi
            .iter()
            .map(|p| {
                let mut h = vec![0.0; len];
                h[..m].copy_from_slice(&p.values()[..m]);
                h
            })
            .collect();
        let mut mean_hist = vec![0.0; len];
        for j in 0..m {
            mean_hist[j] = hist.iter().map(|h| h[j]).sum::<f64>() / n as f64;
        }
        let mut x = self.init.xi.clone();
        let mut costs = vec![0.0; n];
        let mut m0 = Vec::with_capacity(nt + 1);
        let mut mean_alpha = Vec::with_capacity(nt + 1);
        let mut xs = self.cfg.store_paths.then(|| vec![0.0; n * (nt + 1)]);
        let mut als = self.cfg.store_paths.then(|| vec![0.0; n * (nt + 1)]);
        let mut alpha = vec![0.0; n];

        for k in 0..=nt {
            let xbar = x.iter().sum::<f64>() / n as f64;
            let wn = self.fb_n.as_ref().map(|f| {
                let row = f.row(k);
                let own: Vec<f64> = hist.iter().map(|h| Self::window(row, h, m, k)).collect();
                let mean = Self::window(row, &mean_hist, m, k);
                (own, mean)
            });
            let wm = self.fb_m.as_ref().map(|f| {
                let row = f.row(k);
                let own: Vec<f64> = hist.iter().map(|h| Self::window(row, h, m, k)).collect();
                let mean = Self::window(row, &mean_hist, m, k);
                (own, mean)
            });
            for i in 0..n {
                let (own, mean) = match &self.strat.0[i] {
                    s if s.needs().0 => {
                        let (o, mm) = wn.as_ref().expect("checked");
                        (o[i], *mm)
                    }
                    s if s.needs().1 => {
                        let (o, mm) = wm.as_ref().expect("checked");
                        (o[i], *mm)
                    }
                    _ => (0.0, 0.0),
                };
                alpha[i] = self.control(&self.strat.0[i], k, x[i], xbar, own, mean);
            }
            let abar = alpha.iter().sum::<f64>() / n as f64;
            m0.push(xbar);
            mean_alpha.push(abar);

            let wt = if k == 0 || k == nt { 0.5 * dt } else { dt };
            for i in 0..n {
                let gap = xbar - x[i];
                costs[i] += wt * (0.5 * alpha[i] * alpha[i] + 0.5 * eps * gap * gap);
                if let (Some(xs), Some(als)) = (xs.as_mut(), als.as_mut()) {
                    xs[i * (nt + 1) + k] = x[i];
                    als[i * (nt + 1) + k] = alpha[i];
                }
            }
            if k == nt {
                for i in 0..n {
                    let gap = xbar - x[i];
                    costs[i] += 0.5 * self.params.c * gap * gap;
                }
                break;
            }
            for i in 0..n {
                hist[i][m + k] = alpha[i];
            }
            mean_hist[m + k] = abar;
            for i in 0..n {
                let xi: f64 = StandardNormal.sample(&mut rng);
                // hist[k] = α_{k−m}
                x[i] += (alpha[i] - hist[i][k]) * dt + sq * xi;
                if x[i].is_nan() || x[i].abs() > 1e12 {
                    return Err(Error::SimulationDivergence { path, step: k + 1 });
                }
            }
        }
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::SimulationDivergence { path, step: nt });
        }
        Ok(PathResult {
            costs,
            m0,
            mean_alpha,
            x: xs,
            alpha: als,
        })
    }
}

/// Simulates `cfg.m_paths` independent copies of the N-player system.
pub fn simulate(
    params: &GameParams,
    e_n: Option<&ESolution>,
    e_m: Option<&ESolution>,
    init: &InitialData,
    strat: &StrategySpec,
    cfg: SimConfig,
) -> Result<SimOutput> {
    params.validate()?;
    let grid = Grid::new(params.t_horizon, params.tau, cfg.n_t)?;
    let n = init.n_agents();
    if cfg.m_paths == 0 {
        return Err(Error::config("M", "need at least one path"));
    }
    if strat.0.len() != n {
        return Err(Error::Dimension(format!(
            "{} strategies for {n} agents",
            strat.0.len()
        )));
    }
    for p in &init.phi {
        if p.len() != grid.n_s + 1 {
            return Err(Error::Dimension(format!(
                "control history has {} samples, lag grid has {}",
                p.len(),
                grid.n_s + 1
            )));
        }
    }
    let need_n = strat.0.iter().any(|s| s.needs().0);
    let need_m = strat.0.iter().any(|s| s.needs().1);
    let fb_n = if need_n {
        let e = e_n.ok_or_else(|| Error::config("strategy", "Nash N-player feedback needs N-player kernels"))?;
        check_kernels(e, &grid, params, "N-player")?;
        match e.coupling() {
            CouplingKind::NPlayer(k) if k == n => {}
            other => {
                return Err(Error::config(
                    "n_players",
                    format!("kernels are {}, population has {n} agents", other.label()),
                ))
            }
        }
        Some(Feedback::new(e, n))
    } else {
        None
    };
    let fb_m = if need_m {
        let e = e_m.ok_or_else(|| Error::config("strategy", "mean-field feedback needs mean-field kernels"))?;
        check_kernels(e, &grid, params, "mean-field")?;
        if e.coupling() != CouplingKind::MeanField {
            return Err(Error::config("coupling", "mean-field feedback needs mean-field kernels"));
        }
        if n < 2 {
            return Err(Error::config("n_players", "leave-one-out means need at least 2 agents"));
        }
        Some(Feedback::new(e, n))
    } else {
        None
    };

    let setup = Setup {
        params,
        grid,
        init,
        strat,
        fb_n,
        fb_m,
        cfg,
    };
    let results: Vec<PathResult> = (0..cfg.m_paths)
        .into_par_iter()
        .map(|p| setup.run_path(p))
        .collect::<Result<_>>()?;

    let m = grid.n_s;
    let mean_prehistory = (0..m)
        .map(|j| init.phi.iter().map(|p| p.values()[j]).sum::<f64>() / n as f64)
        .collect();
    let mut out = SimOutput {
        params: *params,
        grid,
        n_agents: n,
        m_paths: cfg.m_paths,
        seed: cfg.seed,
        costs: Vec::with_capacity(cfg.m_paths * n),
        m0: Vec::with_capacity(cfg.m_paths * (grid.n_t + 1)),
        mean_alpha: Vec::with_capacity(cfg.m_paths * (grid.n_t + 1)),
        mean_prehistory,
        paths: cfg.store_paths.then(Vec::new),
        controls: cfg.store_paths.then(Vec::new),
    };
    for r in results {
        out.costs.extend(r.costs);
        out.m0.extend(r.m0);
        out.mean_alpha.extend(r.mean_alpha);
        if let (Some(dst), Some(src)) = (out.paths.as_mut(), r.x) {
            dst.extend(src);
        }
        if let (Some(dst), Some(src)) = (out.controls.as_mut(), r.alpha) {
            dst.extend(src);
        }
    }
    Ok(out)
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo mean and standard error of agent `i`'s realized cost.
pub fn estimate_cost(out: &SimOutput, i: usize) -> (f64, f64) {
    let v: Vec<f64> = (0..out.m_paths).map(|p| out.cost(p, i)).collect();
    mean_and_stderr(&v)
}

/// Paired comparison of agent `i`'s cost under Nash play and under a
/// constant deviation `delta`, on common random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationResult {
    pub cost_nash: f64,
    pub cost_dev: f64,
    pub gap: f64,
    pub stderr_gap: f64,
}

pub fn deviation_test(
    params: &GameParams,
    e_n: &ESolution,
    init: &InitialData,
    i: usize,
    delta: f64,
    cfg: SimConfig,
) -> Result<DeviationResult> {
    let n = init.n_agents();
    if i >= n {
        return Err(Error::Dimension(format!("agent {i} out of range for {n} agents")));
    }
    let cfg = SimConfig {
        store_paths: false,
        ..cfg
    };
    let nash = StrategySpec::uniform(n, Strategy::NashNPlayer);
    let dev = nash.clone().with_deviation(i, delta);
    let a = simulate(params, Some(e_n), None, init, &nash, cfg)?;
    let b = simulate(params, Some(e_n), None, init, &dev, cfg)?;
    let diff: Vec<f64> = (0..cfg.m_paths).map(|p| b.cost(p, i) - a.cost(p, i)).collect();
    let (gap, stderr_gap) = mean_and_stderr(&diff);
    Ok(DeviationResult {
        cost_nash: estimate_cost(&a, i).0,
        cost_dev: estimate_cost(&b, i).0,
        gap,
        stderr_gap,
    })
}

/// Drift of the path-averaged empirical means over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentDrift {
    pub max_m0_drift: f64,
    pub max_m1_drift: f64,
    /// `3σ√T / √(N·M)`: three standard deviations of the path-averaged mean
    /// reserve at `T` under pure noise.
    pub noise_floor: f64,
}

pub fn moment_drift(out: &SimOutput) -> MomentDrift {
    let nt = out.grid.n_t;
    let mp = out.m_paths as f64;
    let avg_m0: Vec<f64> = (0..=nt)
        .map(|k| (0..out.m_paths).map(|p| out.m0_at(p, k)).sum::<f64>() / mp)
        .collect();
    let max_m0_drift = avg_m0.iter().map(|v| (v - avg_m0[0]).abs()).fold(0.0, f64::max);

    let avg_m1 = |k: usize| {
        let mut acc = vec![0.0; out.grid.n_s + 1];
        for p in 0..out.m_paths {
            for (a, v) in acc.iter_mut().zip(out.m1_at(p, k)) {
                *a += v / mp;
            }
        }
        acc
    };
    let base = avg_m1(0);
    let mut max_m1_drift = 0.0_f64;
    for k in 1..=nt {
        for (a, b) in avg_m1(k).iter().zip(&base) {
            max_m1_drift = max_m1_drift.max((a - b).abs());
        }
    }
    let noise_floor = 3.0 * out.params.sigma * out.params.t_horizon.sqrt()
        / ((out.n_agents as f64) * mp).sqrt();
    MomentDrift {
        max_m0_drift,
        max_m1_drift,
        noise_floor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::solve_e_system;
    use crate::value::{eval_value_nplayer, optimal_control_nplayer, MeasureSummary};

    fn params() -> GameParams {
        GameParams::default()
    }

    fn cfg(n_t: usize, m: usize) -> SimConfig {
        SimConfig {
            n_t,
            m_paths: m,
            seed: 42,
            store_paths: true,
        }
    }

    #[test]
    fn zero_strategy_without_noise_is_constant() {
        let p = GameParams {
            sigma: 0.0,
            ..params()
        };
        let lag = LagGrid::new(0.5, 10).unwrap();
        let init = InitialData::constant(&lag, vec![0.1, -0.4, 2.0], 0.0);
        let out = simulate(&p, None, None, &init, &StrategySpec::uniform(3, Strategy::Zero), cfg(20, 2)).unwrap();
        let xs = out.paths.unwrap();
        for p in 0..2 {
            for i in 0..3 {
                for k in 0..=20 {
                    assert_eq!(xs[(p * 3 + i) * 21 + k], init.xi[i]);
                }
            }
        }
    }

    #[test]
    fn zero_strategy_repays_prehistory() {
        let p = GameParams {
            sigma: 0.0,
            ..params()
        };
        let lag = LagGrid::new(0.5, 10).unwrap();
        let init = InitialData::constant(&lag, vec![1.0, -1.0], 1.0);
        let out = simulate(&p, None, None, &init, &StrategySpec::uniform(2, Strategy::Zero), cfg(20, 1)).unwrap();
        let xs = out.paths.unwrap();
        for i in 0..2 {
            for k in 0..=20 {
                let t = k as f64 * 0.05;
                let want = init.xi[i] - t.min(0.5);
                assert!((xs[i * 21 + k] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_costs_zero_strategy() {
        let p = GameParams {
            epsilon: 0.0,
            c: 0.0,
            ..params()
        };
        let lag = LagGrid::new(0.5, 10).unwrap();
        let init = InitialData::constant(&lag, vec![0.0, 1.0], 0.0);
        let out = simulate(&p, None, None, &init, &StrategySpec::uniform(2, Strategy::Zero), cfg(20, 50)).unwrap();
        assert_eq!(estimate_cost(&out, 0), (0.0, 0.0));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let e = solve_e_system(&params(), 20, CouplingKind::NPlayer(3)).unwrap();
        let lag = e.lag();
        let init = InitialData::constant(&lag, vec![0.0, 0.5, -1.0], 0.0);
        let s = StrategySpec::uniform(3, Strategy::NashNPlayer);
        let a = simulate(&params(), Some(&e), None, &init, &s, cfg(20, 30)).unwrap();
        let b = simulate(&params(), Some(&e), None, &init, &s, cfg(20, 30)).unwrap();
        assert_eq!(a, b);
        let c = simulate(&params(), Some(&e), None, &init, &s, SimConfig { seed: 7, ..cfg(20, 30) }).unwrap();
        assert_ne!(a.costs, c.costs);
    }

    #[test]
    fn first_control_matches_value_module() {
        let e = solve_e_system(&params(), 20, CouplingKind::NPlayer(3)).unwrap();
        let lag = e.lag();
        let init = InitialData::new(
            vec![0.3, -0.2, 1.1],
            vec![
                PathH::from_fn(&lag, |s| s),
                PathH::from_fn(&lag, |s| 0.5 - s * s),
                PathH::constant(&lag, 0.2),
            ],
            &lag,
        )
        .unwrap();
        let s = StrategySpec::uniform(3, Strategy::NashNPlayer);
        let out = simulate(&params(), Some(&e), None, &init, &s, cfg(20, 1)).unwrap();
        let als = out.controls.clone().unwrap();
        let states = init.agent_states();
        for i in 0..3 {
            let want = optimal_control_nplayer(&e, 0.0, &states, i).unwrap();
            assert!((als[i * 21] - want).abs() < 1e-12, "{} vs {want}", als[i * 21]);
        }
        let mu = MeasureSummary::from_agents(&states).unwrap();
        for (a, b) in out.m1_at(0, 0).iter().zip(mu.m1.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_deviation_has_zero_gap() {
        let e = solve_e_system(&params(), 20, CouplingKind::NPlayer(3)).unwrap();
        let init = InitialData::constant(&e.lag(), vec![0.0, 0.5, -1.0], 0.0);
        let r = deviation_test(&params(), &e, &init, 1, 0.0, cfg(20, 50)).unwrap();
        assert_eq!(r.gap, 0.0);
        assert_eq!(r.stderr_gap, 0.0);
    }

    #[test]
    fn deterministic_symmetric_flow_has_no_drift() {
        let p = GameParams {
            sigma: 0.0,
            ..params()
        };
        let e = solve_e_system(&p, 20, CouplingKind::MeanField).unwrap();
        let init = InitialData::constant(&e.lag(), vec![-1.0, -0.5, 0.5, 1.0], 0.0);
        let s = StrategySpec::uniform(4, Strategy::NashMeanField);
        let out = simulate(&p, None, Some(&e), &init, &s, cfg(20, 3)).unwrap();
        let d = moment_drift(&out);
        assert!(d.max_m0_drift < 1e-12 && d.max_m1_drift < 1e-12, "{d:?}");
        assert_eq!(d.noise_floor, 0.0);
    }

    #[test]
    fn cost_tracks_value_small() {
        // coarse smoke version of the acceptance check
        let e = solve_e_system(&params(), 40, CouplingKind::NPlayer(3)).unwrap();
        let init = InitialData::constant(&e.lag(), vec![-0.5, 0.0, 1.0], 0.0);
        let s = StrategySpec::uniform(3, Strategy::NashNPlayer);
        let out = simulate(&params(), Some(&e), None, &init, &s, SimConfig { store_paths: false, ..cfg(40, 2000) }).unwrap();
        let (mean, se) = estimate_cost(&out, 2);
        let v = eval_value_nplayer(&e, 0.0, &init.agent_states(), 2).unwrap();
        assert!((mean - v).abs() <= 4.0 * se + 0.05 * v.abs(), "{mean} ± {se} vs {v}");
    }

    #[test]
    fn config_errors() {
        let lag = LagGrid::new(0.5, 10).unwrap();
        let init = InitialData::constant(&lag, vec![0.0, 1.0], 0.0);
        let s = StrategySpec::uniform(2, Strategy::NashNPlayer);
        assert!(matches!(simulate(&params(), None, None, &init, &s, cfg(20, 1)), Err(Error::Config { .. })));
        let z = StrategySpec::uniform(2, Strategy::Zero);
        assert!(matches!(simulate(&params(), None, None, &init, &z, cfg(21, 1)), Err(Error::Config { .. })));
        let e = solve_e_system(&params(), 20, CouplingKind::NPlayer(3)).unwrap();
        assert!(matches!(simulate(&params(), Some(&e), None, &init, &s, cfg(20, 1)), Err(Error::Config { .. })));
    }
}
