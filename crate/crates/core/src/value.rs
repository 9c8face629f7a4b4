//! Explicit value functions built from solved kernels, their derivatives,
//! optimal feedbacks, and pointwise residuals of the master equation and of
//! the N-player Nash system.
//!
//! Every value is the same quadratic form of a difference `d = (x, y)`,
//! `x = m0 − z0`, `y = m1 − z1`:
//!
//! ```text
//! Φ_t(d) = E0 x² − 2x ∫ E1(t,−τ−s) y(s) ds + ∬ E2(t,−τ−s,−τ−r) y(s) y(r) ds dr + E3
//! ```
//!
//! With `g0 = ∂Φ/∂x` and `g1(s)` the L² gradient in `y`, the master solution
//! has `∂z0U = −g0`, `∂z1U = −g1`, `Dμ0U = g0`, `Dμ1U = g1`, `∂z0z0U = 2E0`,
//! and the mean-field feedback is `α̂ = g0 − g1(−τ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{lag_derivative, LagGrid, PathH, ProductPoint};
use crate::riccati::{CouplingKind, ESolution};

/// Lifted agent state: reserve `z0` and sampled past-control path `z1`.
pub type AgentState = ProductPoint;

/// Means of the two marginals of a measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub m0: f64,
    pub m1: PathH,
}

/// Mean that does not depend on the order of `values` and returns the common
/// value exactly when all entries coincide.
fn ordered_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let base = values[0];
    let spread: f64 = values.iter().map(|v| v - base).sum();
    base + spread / values.len() as f64
}

impl MeasureSummary {
    pub fn new(m0: f64, m1: PathH) -> Self {
        Self { m0, m1 }
    }

    /// Means over `agents`, computed independently of their order.
    pub fn from_agents<'a, I>(agents: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a AgentState>,
    {
        let agents: Vec<&AgentState> = agents.into_iter().collect();
        let first = agents
            .first()
            .ok_or_else(|| Error::Dimension("cannot average an empty set of agents".into()))?;
        let len = first.z1.len();
        if agents.iter().any(|a| a.z1.len() != len) {
            return Err(Error::Dimension("agents live on different lag grids".into()));
        }
        let mut buf: Vec<f64> = agents.iter().map(|a| a.z0).collect();
        let m0 = ordered_mean(&mut buf);
        let mut m1 = Vec::with_capacity(len);
        for j in 0..len {
            buf.clear();
            buf.extend(agents.iter().map(|a| a.z1.values()[j]));
            m1.push(ordered_mean(&mut buf));
        }
        Ok(Self {
            m0,
            m1: PathH::from_values_unchecked(m1),
        })
    }

    /// Means of every agent except `i`.
    pub fn leave_one_out(population: &[AgentState], i: usize) -> Result<Self> {
        check_index(population, i)?;
        if population.len() < 2 {
            return Err(Error::Dimension("leave-one-out needs at least 2 agents".into()));
        }
        Self::from_agents(
            population
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != i)
                .map(|(_, a)| a),
        )
    }
}

/// Equal-weight empirical measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleMeasure {
    agents: Vec<AgentState>,
}

impl ParticleMeasure {
    pub fn new(agents: Vec<AgentState>) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::Dimension("particle measure needs at least one particle".into()));
        }
        let len = agents[0].z1.len();
        if agents.iter().any(|a| a.z1.len() != len) {
            return Err(Error::Dimension("particles live on different lag grids".into()));
        }
        Ok(Self { agents })
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn summary(&self) -> MeasureSummary {
        MeasureSummary::from_agents(&self.agents).expect("validated at construction")
    }
}

/// Derivatives of the master solution at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBundle {
    pub dt_u: f64,
    pub dz0_u: f64,
    pub dz1_u: PathH,
    pub dmu0_u: f64,
    pub dmu1_u: PathH,
    pub dz0z0_u: f64,
}

/// Kernels of one time level in the reflected layout used by the ansatz:
/// `k1[j] = E1(t, −τ−s_j)`, `k2[j][l] = E2(t, −τ−s_j, −τ−r_l)`.
#[derive(Debug, Clone)]
pub struct Kernels {
    pub e0: f64,
    pub e3: f64,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub w: Vec<f64>,
    pub ds: f64,
}

impl Kernels {
    pub fn at(e: &ESolution, k: usize) -> Self {
        let ns = e.n_s();
        let n = ns + 1;
        let k1 = (0..n).map(|j| e.e1(k, ns - j)).collect();
        let mut k2 = vec![0.0; n * n];
        for j in 0..n {
            for l in j..n {
                let v = e.e2(k, ns - j, ns - l);
                k2[j * n + l] = v;
                k2[l * n + j] = v;
            }
        }
        let lag = e.lag();
        Self {
            e0: e.e0(k),
            e3: e.e3(k),
            k1,
            k2,
            w: lag.weights(),
            ds: lag.ds(),
        }
    }

    fn n(&self) -> usize {
        self.k1.len()
    }

    /// `Φ(x, y)`.
    pub fn phi(&self, x: f64, y: &[f64]) -> f64 {
        let n = self.n();
        let mut cross = 0.0;
        let mut quad = 0.0;
        for j in 0..n {
            let wy = self.w[j] * y[j];
            if wy == 0.0 {
                continue;
            }
            cross += self.k1[j] * wy;
            let row = &self.k2[j * n..(j + 1) * n];
            let inner: f64 = row.iter().zip(&self.w).zip(y).map(|((k, w), v)| k * w * v).sum();
            quad += wy * inner;
        }
        self.e0 * x * x - 2.0 * x * cross + quad + self.e3
    }

    /// `(∂Φ/∂x, L² gradient of Φ in y)`.
    pub fn grad(&self, x: f64, y: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n();
        let cross: f64 = (0..n).map(|j| self.w[j] * self.k1[j] * y[j]).sum();
        let g0 = 2.0 * self.e0 * x - 2.0 * cross;
        let g1 = (0..n)
            .map(|j| {
                let row = &self.k2[j * n..(j + 1) * n];
                let inner: f64 = row.iter().zip(&self.w).zip(y).map(|((k, w), v)| k * w * v).sum();
                -2.0 * self.k1[j] * x + 2.0 * inner
            })
            .collect();
        (g0, g1)
    }

    /// `g0 − g1(−τ)`: the mean-field feedback at difference `(x, y)`.
    pub fn feedback(&self, x: f64, y: &[f64]) -> f64 {
        let (g0, g1) = self.grad(x, y);
        g0 - g1[0]
    }
}

fn check_index(population: &[AgentState], i: usize) -> Result<()> {
    if i >= population.len() {
        return Err(Error::Dimension(format!(
            "agent index {i} out of range for {} agents",
            population.len()
        )));
    }
    Ok(())
}

fn check_path(e: &ESolution, p: &PathH) -> Result<()> {
    if p.len() != e.n_s() + 1 {
        return Err(Error::Dimension(format!(
            "path has {} samples, kernels use {} lag nodes",
            p.len(),
            e.n_s() + 1
        )));
    }
    Ok(())
}

fn check_population(e: &ESolution, population: &[AgentState]) -> Result<()> {
    if population.is_empty() {
        return Err(Error::Dimension("empty population".into()));
    }
    for a in population {
        check_path(e, &a.z1)?;
    }
    if let CouplingKind::NPlayer(n) = e.coupling() {
        if n != population.len() {
            return Err(Error::config(
                "n_players",
                format!("kernels solved for {n} players, population has {}", population.len()),
            ));
        }
    }
    Ok(())
}

fn time_index(e: &ESolution, t: f64) -> Result<usize> {
    e.grid().index_of(t)
}

fn interior_index(e: &ESolution, t: f64) -> Result<usize> {
    let k = time_index(e, t)?;
    if k == 0 || k >= e.n_t() {
        return Err(Error::Domain(format!("t = {t} is not an interior time node")));
    }
    Ok(k)
}

fn difference(agent: &AgentState, mu: &MeasureSummary) -> (f64, Vec<f64>) {
    let y = mu
        .m1
        .values()
        .iter()
        .zip(agent.z1.values())
        .map(|(m, z)| m - z)
        .collect();
    (mu.m0 - agent.z0, y)
}

/// `(Φ_{k+1} − Φ_{k−1}) / 2dt`, one-sided at the ends of the horizon.
fn dphi_dt(e: &ESolution, k: usize, x: f64, y: &[f64]) -> f64 {
    let nt = e.n_t();
    let dt = e.grid().dt;
    let (lo, hi) = if k == 0 {
        (0, 1)
    } else if k == nt {
        (nt - 1, nt)
    } else {
        (k - 1, k + 1)
    };
    let a = Kernels::at(e, lo).phi(x, y);
    let b = Kernels::at(e, hi).phi(x, y);
    (b - a) / ((hi - lo) as f64 * dt)
}

/// `V^i(t, z)` with full-population means (including agent `i`).
pub fn eval_value_nplayer(e: &ESolution, t: f64, population: &[AgentState], i: usize) -> Result<f64> {
    check_population(e, population)?;
    check_index(population, i)?;
    let k = time_index(e, t)?;
    let mu = MeasureSummary::from_agents(population)?;
    let (x, y) = difference(&population[i], &mu);
    Ok(Kernels::at(e, k).phi(x, &y))
}

/// `U(t, z, μ)` through the means of `μ`.
pub fn eval_value_master(e: &ESolution, t: f64, agent: &AgentState, mu: &MeasureSummary) -> Result<f64> {
    check_path(e, &agent.z1)?;
    check_path(e, &mu.m1)?;
    let k = time_index(e, t)?;
    let (x, y) = difference(agent, mu);
    Ok(Kernels::at(e, k).phi(x, &y))
}

pub fn derivatives_master(
    e: &ESolution,
    t: f64,
    agent: &AgentState,
    mu: &MeasureSummary,
) -> Result<DerivativeBundle> {
    check_path(e, &agent.z1)?;
    check_path(e, &mu.m1)?;
    let k = time_index(e, t)?;
    let (x, y) = difference(agent, mu);
    let kern = Kernels::at(e, k);
    let (g0, g1) = kern.grad(x, &y);
    let neg: Vec<f64> = g1.iter().map(|v| -v).collect();
    Ok(DerivativeBundle {
        dt_u: dphi_dt(e, k, x, &y),
        dz0_u: -g0,
        dz1_u: PathH::from_values_unchecked(neg),
        dmu0_u: g0,
        dmu1_u: PathH::from_values_unchecked(g1),
        dz0z0_u: 2.0 * kern.e0,
    })
}

/// `α̂ = −(∂z0U − [∂z1U](−τ))`.
pub fn optimal_control_mfg(e: &ESolution, t: f64, agent: &AgentState, mu: &MeasureSummary) -> Result<f64> {
    check_path(e, &agent.z1)?;
    check_path(e, &mu.m1)?;
    let k = time_index(e, t)?;
    let (x, y) = difference(agent, mu);
    Ok(Kernels::at(e, k).feedback(x, &y))
}

/// `2(1 − 1/N)[(E0 + E1(t,0)) x − ∫ (E1 + E2(·,0)) y ds]` with full-population
/// differences.
pub fn optimal_control_nplayer(e: &ESolution, t: f64, population: &[AgentState], i: usize) -> Result<f64> {
    check_population(e, population)?;
    check_index(population, i)?;
    let k = time_index(e, t)?;
    let n = population.len() as f64;
    let mu = MeasureSummary::from_agents(population)?;
    let (x, y) = difference(&population[i], &mu);
    Ok((1.0 - 1.0 / n) * Kernels::at(e, k).feedback(x, &y))
}

/// Signed terms of the master equation at one point; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MasterTerms {
    pub dt_u: f64,
    pub diffusion: f64,
    pub measure_diffusion: f64,
    pub transport_z: f64,
    pub transport_mu: f64,
    pub drift_mu0: f64,
    pub drift_mu1: f64,
    pub hamiltonian: f64,
    pub running_cost: f64,
    pub total: f64,
}

/// Trapezoid `∫ a(s) b'(s) ds` with the grid derivative of `b`.
fn pair_with_derivative(a: &[f64], b: &[f64], w: &[f64], ds: f64) -> f64 {
    let db = lag_derivative(b, ds);
    a.iter().zip(&db).zip(w).map(|((x, y), w)| w * x * y).sum()
}

/// All terms of the master equation for `agent` against the empirical `cloud`.
pub fn master_terms(e: &ESolution, t: f64, agent: &AgentState, cloud: &ParticleMeasure) -> Result<MasterTerms> {
    check_path(e, &agent.z1)?;
    check_path(e, &cloud.agents[0].z1)?;
    let k = interior_index(e, t)?;
    let mu = cloud.summary();
    let kern = Kernels::at(e, k);
    let sigma2 = e.params().sigma.powi(2);
    let eps = e.params().epsilon;

    let (x, y) = difference(agent, &mu);
    let (g0, g1) = kern.grad(x, &y);
    let alpha_z = g0 - g1[0];

    // averages over the cloud of the particle feedbacks and paths
    let np = cloud.len() as f64;
    let mut alpha_avg = 0.0;
    for p in cloud.agents() {
        let (xp, yp) = difference(p, &mu);
        alpha_avg += kern.feedback(xp, &yp);
    }
    alpha_avg /= np;

    let dz1: Vec<f64> = g1.iter().map(|v| -v).collect();
    let transport_z = pair_with_derivative(agent.z1.values(), &dz1, &kern.w, kern.ds);
    let transport_mu = pair_with_derivative(mu.m1.values(), &g1, &kern.w, kern.ds);

    let mut terms = MasterTerms {
        dt_u: dphi_dt(e, k, x, &y),
        diffusion: 0.5 * sigma2 * 2.0 * kern.e0,
        // Dμ0U does not depend on y0
        measure_diffusion: 0.0,
        transport_z,
        transport_mu,
        drift_mu0: alpha_avg * g0,
        drift_mu1: -alpha_avg * g1[0],
        hamiltonian: -0.5 * alpha_z * alpha_z,
        running_cost: 0.5 * eps * x * x,
        total: 0.0,
    };
    terms.total = terms.dt_u
        + terms.diffusion
        + terms.measure_diffusion
        + terms.transport_z
        + terms.transport_mu
        + terms.drift_mu0
        + terms.drift_mu1
        + terms.hamiltonian
        + terms.running_cost;
    Ok(terms)
}

/// `|master equation|` at `(t, agent, cloud)`.
pub fn master_residual(e: &ESolution, t: f64, agent: &AgentState, cloud: &ParticleMeasure) -> Result<f64> {
    Ok(master_terms(e, t, agent, cloud)?.total.abs())
}

/// How player `i`'s value reads the population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weighting {
    /// `d = z̄ − z^i` with `z̄` the full mean: the Nash ansatz.
    FullPopulation,
    /// `d = m^i − z^i` with `m^i` the mean of the others: `u^i = U(t, z^i, ν^i)`.
    LeaveOneOut,
}

impl Weighting {
    /// Coefficient of `z^k` in player `i`'s difference.
    fn weight(&self, n: usize, i: usize, k: usize) -> f64 {
        let n = n as f64;
        let own = if i == k { 1.0 } else { 0.0 };
        match self {
            Weighting::FullPopulation => 1.0 / n - own,
            Weighting::LeaveOneOut => (1.0 - own) / (n - 1.0) - own,
        }
    }

    fn difference(&self, population: &[AgentState], i: usize) -> Result<(f64, Vec<f64>)> {
        let mu = match self {
            Weighting::FullPopulation => MeasureSummary::from_agents(population)?,
            Weighting::LeaveOneOut => MeasureSummary::leave_one_out(population, i)?,
        };
        Ok(difference(&population[i], &mu))
    }
}

/// Signed N-player HJB residual for the value fields `V^i = Φ(d^i)`.
///
/// `eps_game` is the running-cost weight of the N-player game; the kernels
/// may have been solved with a different (rescaled) weight.
pub fn nash_residual_signed(
    e: &ESolution,
    t: f64,
    population: &[AgentState],
    i: usize,
    weighting: Weighting,
    eps_game: f64,
) -> Result<f64> {
    check_index(population, i)?;
    if population.len() < 2 {
        return Err(Error::Dimension("the Nash system needs at least 2 players".into()));
    }
    for a in population {
        check_path(e, &a.z1)?;
    }
    let k = interior_index(e, t)?;
    let n = population.len();
    let kern = Kernels::at(e, k);
    let sigma2 = e.params().sigma.powi(2);

    let q: Vec<f64> = (0..n)
        .map(|p| {
            let (x, y) = weighting.difference(population, p)?;
            Ok(kern.feedback(x, &y))
        })
        .collect::<Result<_>>()?;
    let (x, y) = weighting.difference(population, i)?;
    let (_, g1) = kern.grad(x, &y);

    let sum_w2: f64 = (0..n).map(|p| weighting.weight(n, i, p).powi(2)).sum();
    let mut cross = 0.0;
    for p in (0..n).filter(|&p| p != i) {
        cross += weighting.weight(n, p, p) * q[p] * weighting.weight(n, i, p) * q[i];
    }
    let own = weighting.weight(n, i, i) * q[i];
    let zbar = MeasureSummary::from_agents(population)?.m0;
    let gap = zbar - population[i].z0;

    Ok(dphi_dt(e, k, x, &y) + sigma2 * kern.e0 * sum_w2
        + pair_with_derivative(&y, &g1, &kern.w, kern.ds)
        - cross
        - 0.5 * own * own
        + 0.5 * eps_game * gap * gap)
}

/// `|N-player HJB residual|` for player `i`.
///
/// N-player kernels are read with full-population means (the Nash ansatz);
/// mean-field kernels are read as `u^i = U(t, z^i, ν^i)` with leave-one-out
/// means. The running-cost weight comes from the kernels' parameters.
pub fn nash_hjb_residual(e: &ESolution, t: f64, population: &[AgentState], i: usize) -> Result<f64> {
    let weighting = match e.coupling() {
        CouplingKind::NPlayer(_) => {
            check_population(e, population)?;
            Weighting::FullPopulation
        }
        CouplingKind::MeanField => Weighting::LeaveOneOut,
    };
    Ok(nash_residual_signed(e, t, population, i, weighting, e.params().epsilon)?.abs())
}

/// Nash residual of `u^i = U(t, z^i, ν^i)` minus the master residual at the
/// same point, i.e. the part of the error that is due to finite `N` rather
/// than to the time grid.
pub fn almost_solution_excess(e: &ESolution, t: f64, population: &[AgentState], i: usize) -> Result<f64> {
    let nash = nash_residual_signed(e, t, population, i, Weighting::LeaveOneOut, e.params().epsilon)?;
    let others: Vec<AgentState> = population
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != i)
        .map(|(_, a)| a.clone())
        .collect();
    let cloud = ParticleMeasure::new(others)?;
    let master = master_terms(e, t, &population[i], &cloud)?.total;
    Ok((nash - master).abs())
}

/// Convenience constructor for an agent with a constant past-control path.
pub fn agent_const(lag: &LagGrid, z0: f64, z1: f64) -> AgentState {
    ProductPoint::new(z0, PathH::constant(lag, z1))
}
