//! Independent check of the mean-field value: the representative agent's
//! problem with the population mean frozen at `m0`, discretized by Euler on
//! a lag chain and solved exactly by backward dynamic programming.
//!
//! State `x = (X, b_1, …, b_m)` with `b_j = α_{k−j}`. One step:
//!
//! ```text
//! X'   = X + (α − b_m) Δ + σ √Δ ξ
//! b'_1 = α,   b'_{j+1} = b_j
//! cost = (Δ/2) α² + (εΔ/2) (X − m0)²,   terminal (c/2)(X − m0)²
//! ```
//!
//! Values are `V_k(x) = xᵀ P_k x + 2 q_kᵀ x + r_k`. Nothing here touches the
//! kernel solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::riccati::GameParams;
use crate::value::AgentState;

/// Euler-discretized representative problem on a lag chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagChainLQ {
    /// Lags in the buffer, `m = τ/Δ`.
    pub m: usize,
    pub delta: f64,
    /// Decision steps, `K = T/Δ`.
    pub steps: usize,
    pub sigma: f64,
    pub epsilon: f64,
    pub c: f64,
    pub m0: f64,
    pub tau: f64,
}

impl LagChainLQ {
    pub fn dim(&self) -> usize {
        self.m + 1
    }

    /// Terminal coefficients `(P_K, q_K, r_K)`.
    pub fn terminal(&self) -> (Vec<f64>, Vec<f64>, f64) {
        let n = self.dim();
        let mut p = vec![0.0; n * n];
        let mut q = vec![0.0; n];
        p[0] = 0.5 * self.c;
        q[0] = -0.5 * self.c * self.m0;
        (p, q, 0.5 * self.c * self.m0 * self.m0)
    }
}

fn integer_ratio(key: &str, a: f64, delta: f64) -> Result<usize> {
    let x = a / delta;
    let k = x.round();
    if (x - k).abs() > 1e-9 * x.max(1.0) || k < 1.0 {
        return Err(Error::config(key, format!("{key}/delta = {x} is not a positive integer")));
    }
    Ok(k as usize)
}

pub fn build_lag_chain(params: &GameParams, m0: f64, delta: f64) -> Result<LagChainLQ> {
    params.validate()?;
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::config("delta", format!("step must be positive, got {delta}")));
    }
    let m = integer_ratio("tau", params.tau, delta)?;
    let steps = integer_ratio("T", params.t_horizon, delta)?;
    Ok(LagChainLQ {
        m,
        delta,
        steps,
        sigma: params.sigma,
        epsilon: params.epsilon,
        c: params.c,
        m0,
        tau: params.tau,
    })
}

/// Value coefficients per step; `p[k]` is row-major `(m+1)²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticValue {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<f64>,
}

impl QuadraticValue {
    pub fn eval(&self, k: usize, x: &[f64]) -> f64 {
        quad_eval(&self.p[k], &self.q[k], self.r[k], x)
    }
}

fn quad_eval(p: &[f64], q: &[f64], r: f64, x: &[f64]) -> f64 {
    let n = x.len();
    let mut v = r;
    for a in 0..n {
        let row = &p[a * n..(a + 1) * n];
        let px: f64 = row.iter().zip(x).map(|(u, w)| u * w).sum();
        v += x[a] * px + 2.0 * q[a] * x[a];
    }
    v
}

/// Optimal first control `α = −(L x + l)/h`, as stored by a sweep.
#[derive(Debug, Clone)]
struct Gain {
    l_row: Vec<f64>,
    l: f64,
    h: f64,
}

/// One backward step from `(P', q', r')` at `k+1` to step `k`.
fn step(
    lq: &LagChainLQ,
    k: usize,
    p1: &[f64],
    q1: &[f64],
    r1: f64,
) -> Result<(Vec<f64>, Vec<f64>, f64, Gain)> {
    let n = lq.dim();
    let m = lq.m;
    let d = lq.delta;
    // F e_b = s_b e_{φ(b)}; index 1 is never hit (the new control enters through G)
    let phi = |b: usize| if b == 0 || b == m { 0 } else { b + 1 };
    let sgn = |b: usize| if b == m { -d } else { 1.0 };
    let at = |a: usize, b: usize| p1[a * n + b];

    // G = Δ e_0 + e_1
    let h = 0.5 * d + d * d * at(0, 0) + 2.0 * d * at(0, 1) + at(1, 1);
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Convexity { step: k, curvature: h });
    }
    let l_row: Vec<f64> = (0..n)
        .map(|b| (d * at(0, phi(b)) + at(1, phi(b))) * sgn(b))
        .collect();
    let l = d * q1[0] + q1[1];

    let stage = 0.5 * lq.epsilon * d;
    let mut p = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let v = at(phi(a), phi(b)) * sgn(a) * sgn(b) - l_row[a] * l_row[b] / h;
            p[a * n + b] = v;
            p[b * n + a] = v;
        }
    }
    p[0] += stage;
    let mut q: Vec<f64> = (0..n).map(|b| sgn(b) * q1[phi(b)] - l_row[b] * l / h).collect();
    q[0] -= stage * lq.m0;
    let r = r1 + lq.sigma * lq.sigma * d * at(0, 0) + stage * lq.m0 * lq.m0 - l * l / h;
    Ok((p, q, r, Gain { l_row, l, h }))
}

fn sweep(lq: &LagChainLQ, mut keep: Option<&mut QuadraticValue>) -> Result<(Vec<f64>, Vec<f64>, f64, Gain)> {
    let (mut p, mut q, mut r) = lq.terminal();
    let mut gain = Gain {
        l_row: vec![0.0; lq.dim()],
        l: 0.0,
        h: 1.0,
    };
    if let Some(store) = keep.as_deref_mut() {
        store.p[lq.steps] = p.clone();
        store.q[lq.steps] = q.clone();
        store.r[lq.steps] = r;
    }
    for k in (0..lq.steps).rev() {
        let (p0, q0, r0, g) = step(lq, k, &p, &q, r)?;
        p = p0;
        q = q0;
        r = r0;
        gain = g;
        if let Some(store) = keep.as_deref_mut() {
            store.p[k] = p.clone();
            store.q[k] = q.clone();
            store.r[k] = r;
        }
    }
    Ok((p, q, r, gain))
}

/// Backward recursion keeping the coefficients of every step.
pub fn solve_backward(lq: &LagChainLQ) -> Result<QuadraticValue> {
    let mut out = QuadraticValue {
        p: vec![Vec::new(); lq.steps + 1],
        q: vec![Vec::new(); lq.steps + 1],
        r: vec![0.0; lq.steps + 1],
    };
    sweep(lq, Some(&mut out))?;
    Ok(out)
}

/// Packs an agent into the chain state: `X = z0`, `b_j = −z1(−τ + jΔ)`,
/// with `z1` linearly interpolated from its own lag grid.
pub fn pack_state(lq: &LagChainLQ, state: &AgentState) -> Result<Vec<f64>> {
    let path = state.z1.values();
    if path.len() < 2 {
        return Err(Error::Dimension("agent path needs at least 2 samples".into()));
    }
    let n_s = path.len() - 1;
    let ds = lq.tau / n_s as f64;
    let sample = |s: f64| {
        let u = ((s + lq.tau) / ds).clamp(0.0, n_s as f64);
        let j = (u.floor() as usize).min(n_s - 1);
        let f = u - j as f64;
        (1.0 - f) * path[j] + f * path[j + 1]
    };
    let mut x = Vec::with_capacity(lq.dim());
    x.push(state.z0);
    for j in 1..=lq.m {
        x.push(-sample(-lq.tau + j as f64 * lq.delta));
    }
    Ok(x)
}

/// `V_0` of the oracle at the packed agent state.
pub fn oracle_value(params: &GameParams, m0: f64, delta: f64, state: &AgentState) -> Result<f64> {
    let lq = build_lag_chain(params, m0, delta)?;
    let x = pack_state(&lq, state)?;
    let (p, q, r, _) = sweep(&lq, None)?;
    Ok(quad_eval(&p, &q, r, &x))
}

/// Optimal control at step 0 for the packed agent state.
pub fn oracle_first_control(params: &GameParams, m0: f64, delta: f64, state: &AgentState) -> Result<f64> {
    let lq = build_lag_chain(params, m0, delta)?;
    let x = pack_state(&lq, state)?;
    let (_, _, _, g) = sweep(&lq, None)?;
    let lx: f64 = g.l_row.iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok(-(lx + g.l) / g.h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{LagGrid, PathH, ProductPoint};

    fn reference() -> GameParams {
        GameParams::default()
    }

    fn agent(z0: f64, n_s: usize) -> AgentState {
        let lag = LagGrid::new(0.5, n_s).unwrap();
        ProductPoint::new(z0, PathH::zeros(&lag))
    }

    #[test]
    fn construction() {
        let lq = build_lag_chain(&reference(), 0.0, 0.5).unwrap();
        assert_eq!(lq.m, 1);
        assert_eq!(lq.dim(), 2);
        assert_eq!(lq.steps, 2);
        assert!(build_lag_chain(&reference(), 0.0, 0.3).is_err());
        let (p, q, r) = lq.terminal();
        assert_eq!(p, vec![0.5, 0.0, 0.0, 0.0]);
        assert_eq!(q, vec![0.0, 0.0]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn zero_costs_zero_value() {
        let p = GameParams {
            epsilon: 0.0,
            c: 0.0,
            ..reference()
        };
        let lq = build_lag_chain(&p, 0.3, 0.05).unwrap();
        let v = solve_backward(&lq).unwrap();
        for k in 0..=lq.steps {
            assert!(v.p[k].iter().all(|x| *x == 0.0));
            assert_eq!(v.r[k], 0.0);
        }
        assert_eq!(oracle_value(&p, 0.0, 0.05, &agent(0.0, 10)).unwrap(), 0.0);
    }

    #[test]
    fn noise_enters_additively() {
        let det = GameParams {
            sigma: 0.0,
            ..reference()
        };
        let lq = build_lag_chain(&det, 0.0, 0.05).unwrap();
        let v = solve_backward(&lq).unwrap();
        let noisy = solve_backward(&build_lag_chain(&reference(), 0.0, 0.05).unwrap()).unwrap();
        // same feedback structure, only the constant differs
        for (a, b) in v.p[0].iter().zip(&noisy.p[0]) {
            assert_eq!(a, b);
        }
        assert_eq!(v.r[0], 0.0);
        assert!(noisy.r[0] > 0.0);
        // at X = m0 with an empty buffer the deterministic optimum is to do nothing
        assert_eq!(oracle_value(&det, 0.0, 0.05, &agent(0.0, 10)).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_value_matches_brute_force_for_two_steps() {
        // m = 1, K = 2: minimize over (α0, α1) on a fine grid
        let p = GameParams {
            sigma: 0.0,
            ..reference()
        };
        let d = 0.5;
        let x0 = 1.0;
        let cost = |a0: f64, a1: f64| {
            let x1 = x0 + a0 * d;
            let x2 = x1 + (a1 - a0) * d;
            0.5 * d * (a0 * a0 + a1 * a1) + 0.5 * d * (x0 * x0 + x1 * x1) + 0.5 * x2 * x2
        };
        let mut best = f64::INFINITY;
        for i in -400..=400 {
            for j in -400..=400 {
                best = best.min(cost(i as f64 * 0.0025, j as f64 * 0.0025));
            }
        }
        let v = oracle_value(&p, 0.0, d, &agent(x0, 2)).unwrap();
        assert!((v - best).abs() < 1e-4, "{v} vs {best}");
    }

    #[test]
    fn value_is_convex_and_symmetric() {
        let lq = build_lag_chain(&reference(), 0.2, 0.05).unwrap();
        let v = solve_backward(&lq).unwrap();
        let n = lq.dim();
        for k in [0, 5, lq.steps] {
            let p = nalgebra::DMatrix::from_row_slice(n, n, &v.p[k]);
            assert_eq!(p, p.transpose());
            let ev = p.symmetric_eigen().eigenvalues;
            assert!(ev.iter().all(|x| *x >= -1e-12), "{ev}");
        }
    }

    #[test]
    fn longer_horizon_never_raises_deterministic_terminal_cost() {
        // controls placed earlier than T − τ are repaid before T, so extra
        // horizon beyond τ cannot help either: the value is nonincreasing
        let mut last = f64::INFINITY;
        for t in [0.5, 1.0, 1.5, 2.0] {
            let p = GameParams {
                t_horizon: t,
                sigma: 0.0,
                epsilon: 0.0,
                ..reference()
            };
            let v = oracle_value(&p, 0.0, 0.05, &agent(1.0, 10)).unwrap();
            assert!(v <= last + 1e-12, "T={t}: {v}");
            last = v;
        }
    }

    #[test]
    fn richardson_first_order() {
        let v: Vec<f64> = [0.02, 0.01, 0.005]
            .into_iter()
            .map(|d| oracle_value(&reference(), 0.0, d, &agent(1.0, 10)).unwrap())
            .collect();
        let ratio = (v[0] - v[1]) / (v[1] - v[2]);
        assert!((1.6..=2.4).contains(&ratio), "{v:?} ratio {ratio}");
    }

    #[test]
    fn packing_reflects_the_path() {
        let lq = build_lag_chain(&reference(), 0.0, 0.125).unwrap();
        let lag = LagGrid::new(0.5, 4).unwrap();
        let st = ProductPoint::new(2.0, PathH::from_fn(&lag, |s| s));
        let x = pack_state(&lq, &st).unwrap();
        assert_eq!(x, vec![2.0, 0.375, 0.25, 0.125, -0.0]);
    }
}
