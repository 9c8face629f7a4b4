//! Gap between N-player Nash values and the master-equation value as N grows.
//!
//! The mean-field side is solved with running and terminal weights scaled by
//! `(1 − 1/N)²`, the cost the mean field sees when the N-player game is
//! rewritten through leave-one-out means, and evaluated at `ν^i`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{LagGrid, PathH, ProductPoint};
use crate::riccati::{solve_e_system, CouplingKind, ESolution, GameParams};
use crate::value::{eval_value_master, eval_value_nplayer, AgentState, MeasureSummary};

/// Deterministic N-agent configurations, comparable across N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StateFamily {
    /// `z0^i` equispaced on `[lo, hi]`, `z1^i ≡ 0`.
    Equispaced { lo: f64, hi: f64 },
    /// Every agent at `(z0, z1 ≡ z1)`.
    Identical { z0: f64, z1: f64 },
}

impl Default for StateFamily {
    fn default() -> Self {
        StateFamily::Equispaced { lo: -1.0, hi: 1.0 }
    }
}

impl StateFamily {
    pub fn states(&self, n: usize, lag: &LagGrid) -> Vec<AgentState> {
        match *self {
            StateFamily::Equispaced { lo, hi } => (0..n)
                .map(|i| {
                    let z0 = if n == 1 {
                        0.5 * (lo + hi)
                    } else {
                        lo + (hi - lo) * i as f64 / (n - 1) as f64
                    };
                    ProductPoint::new(z0, PathH::zeros(lag))
                })
                .collect(),
            StateFamily::Identical { z0, z1 } => {
                vec![ProductPoint::new(z0, PathH::constant(lag, z1)); n]
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            StateFamily::Equispaced { lo, hi } => format!("z0 equispaced on [{lo}, {hi}], z1 = 0"),
            StateFamily::Identical { z0, z1 } => format!("identical agents z0 = {z0}, z1 = {z1}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub n: usize,
    pub gap: f64,
    pub t0: f64,
    pub family: String,
}

/// Which kernels stand in for the N-player values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GapMode {
    #[default]
    Nash,
    /// Scaled mean-field kernels on both sides: isolates the leave-one-out
    /// effect of the measure argument.
    SelfCompare,
}

/// `(1/N) Σ_i |V^i(t0, z) − U(t0, z^i, ν^i)|` from already solved kernels.
pub fn gap_from_kernels(
    e_n: &ESolution,
    e_m: &ESolution,
    t0: f64,
    population: &[AgentState],
) -> Result<f64> {
    let n = population.len();
    let mut acc = 0.0;
    for i in 0..n {
        let v = eval_value_nplayer(e_n, t0, population, i)?;
        let nu = MeasureSummary::leave_one_out(population, i)?;
        let u = eval_value_master(e_m, t0, &population[i], &nu)?;
        acc += (v - u).abs();
    }
    Ok(acc / n as f64)
}

pub fn nash_master_gap(
    params: &GameParams,
    n: usize,
    n_t: usize,
    t0: f64,
    family: &StateFamily,
) -> Result<GapPoint> {
    nash_master_gap_with(params, n, n_t, t0, family, GapMode::Nash)
}

pub fn nash_master_gap_with(
    params: &GameParams,
    n: usize,
    n_t: usize,
    t0: f64,
    family: &StateFamily,
    mode: GapMode,
) -> Result<GapPoint> {
    if n < 2 {
        return Err(Error::config("N", "the gap needs at least 2 players"));
    }
    let scale = (1.0 - 1.0 / n as f64).powi(2);
    let e_m = solve_e_system(&params.with_cost_scale(scale), n_t, CouplingKind::MeanField)?;
    let e_n = match mode {
        GapMode::Nash => solve_e_system(params, n_t, CouplingKind::NPlayer(n))?,
        GapMode::SelfCompare => e_m.clone(),
    };
    let population = family.states(n, &e_m.lag());
    let gap = gap_from_kernels(&e_n, &e_m, t0, &population)?;
    Ok(GapPoint {
        n,
        gap,
        t0,
        family: family.describe(),
    })
}

/// Gap points for every `N` in `ns`, in the order given.
pub fn gap_sweep(
    params: &GameParams,
    ns: &[usize],
    n_t: usize,
    t0: f64,
    family: &StateFamily,
    mode: GapMode,
) -> Result<Vec<GapPoint>> {
    ns.par_iter()
        .map(|&n| nash_master_gap_with(params, n, n_t, t0, family, mode))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `log gap` against `log N`.
pub fn rate_fit(points: &[GapPoint]) -> Result<RateFit> {
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.n as f64, p.gap)).collect();
    fit_loglog(&xy)
}

/// Least-squares fit of `log y` against `log x`; needs ≥ 3 distinct `x` and
/// every `y > 0`.
pub fn fit_loglog(xy: &[(f64, f64)]) -> Result<RateFit> {
    if let Some((x, y)) = xy.iter().find(|(_, y)| y.is_nan() || *y <= 0.0 || y.is_infinite()) {
        return Err(Error::DegenerateFit(format!(
            "value {y} at {x}; a zero gap means faster than any power decay"
        )));
    }
    let mut xs: Vec<f64> = xy.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "{} distinct abscissae, need at least 3",
            xs.len()
        )));
    }
    let lx: Vec<f64> = xy.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = xy.iter().map(|p| p.1.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(f: impl Fn(f64) -> f64) -> Vec<GapPoint> {
        [2usize, 4, 8, 16, 32]
            .iter()
            .map(|&n| GapPoint {
                n,
                gap: f(n as f64),
                t0: 0.0,
                family: String::new(),
            })
            .collect()
    }

    #[test]
    fn synthetic_rates() {
        let r = rate_fit(&pts(|n| 3.0 / n)).unwrap();
        assert!((r.slope + 1.0).abs() < 1e-12);
        assert!((r.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
        let r = rate_fit(&pts(|n| 0.5 / (n * n))).unwrap();
        assert!((r.slope + 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fits() {
        assert!(matches!(rate_fit(&pts(|n| if n > 10.0 { 0.0 } else { 1.0 })), Err(Error::DegenerateFit(_))));
        assert!(matches!(rate_fit(&pts(|n| 1.0 / n)[..2]), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn identical_agents_gap_is_e3_difference() {
        let p = GameParams::default();
        let fam = StateFamily::Identical { z0: 0.3, z1: -0.2 };
        let g = nash_master_gap(&p, 4, 40, 0.0, &fam).unwrap();
        let e_n = solve_e_system(&p, 40, CouplingKind::NPlayer(4)).unwrap();
        let e_m = solve_e_system(&p.with_cost_scale(0.5625), 40, CouplingKind::MeanField).unwrap();
        assert!((g.gap - (e_n.e3(0) - e_m.e3(0)).abs()).abs() < 1e-12);
    }

    #[test]
    fn self_compare_identical_agents_is_zero() {
        let fam = StateFamily::Identical { z0: 1.0, z1: 0.5 };
        let g = nash_master_gap_with(&GameParams::default(), 8, 40, 0.5, &fam, GapMode::SelfCompare).unwrap();
        assert_eq!(g.gap, 0.0);
    }

    #[test]
    fn rejects_single_player() {
        assert!(nash_master_gap(&GameParams::default(), 1, 40, 0.0, &StateFamily::default()).is_err());
    }
}
