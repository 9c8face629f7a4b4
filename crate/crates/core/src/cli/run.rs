//! Subcommand bodies. Each writes its data files plus `<command>.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use super::config::{Parsed, StrategyChoice};
use super::io::{write_bundle, write_json, Csv};
use super::Command;
use crate::checks::{self, CheckOutcome};
use crate::convergence::{gap_sweep, rate_fit, GapMode, StateFamily};
use crate::error::Result;
use crate::hilbert::{adjointness_defect, PathH, ProductPoint};
use crate::oracle::{oracle_first_control, oracle_value};
use crate::riccati::{
    boundary_report, e3_consistency, near_singular_time, pde_residual, solve_e_system_with, CouplingKind, ESolution,
};
use crate::sim::{deviation_test, estimate_cost, moment_drift, simulate, InitialData, SimConfig, Strategy, StrategySpec};
use crate::value::{eval_value_master, eval_value_nplayer, master_residual, optimal_control_mfg, MeasureSummary, ParticleMeasure};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub checks: Vec<CheckOutcome>,
}

impl RunOutcome {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Ctx<'a> {
    parsed: &'a Parsed,
    out: &'a Path,
    files: Vec<PathBuf>,
}

impl Ctx<'_> {
    fn csv(&mut self, name: &str, csv: &Csv) -> Result<()> {
        let p = self.out.join(name);
        csv.write(&p)?;
        self.files.push(p);
        Ok(())
    }

    fn solve(&self, coupling: CouplingKind, n_t: usize) -> Result<ESolution> {
        let c = &self.parsed.config;
        solve_e_system_with(&c.params(), n_t, coupling, c.stepping)
    }
}

pub fn run(cmd: Command, parsed: &Parsed, out: &Path, check: bool) -> Result<RunOutcome> {
    let start = Instant::now();
    std::fs::create_dir_all(out)?;
    let mut ctx = Ctx {
        parsed,
        out,
        files: Vec::new(),
    };
    let cfg = &parsed.config;
    let p = cfg.params();
    let (data, checks) = match cmd {
        Command::Solve => {
            let data = solve(&mut ctx)?;
            let checks = if check {
                vec![checks::boundary(&p, cfg.n_t, cfg.n_players), checks::degenerate(&p, cfg.n_t)]
            } else {
                vec![]
            };
            (data, checks)
        }
        Command::Residuals => {
            let data = residuals(&mut ctx)?;
            let checks = if check {
                vec![
                    checks::pde_order(&p, cfg.n_t, cfg.n_players),
                    checks::master_equation(&p, cfg.n_t),
                    checks::almost_solution(&p, cfg.n_t),
                    checks::adjointness(cfg.tau, cfg.seed),
                ]
            } else {
                vec![]
            };
            (data, checks)
        }
        Command::Simulate => {
            let data = simulate_cmd(&mut ctx)?;
            let checks = match (check, cfg.strategy) {
                (false, _) | (true, StrategyChoice::Zero) => vec![],
                (true, StrategyChoice::Nash) => vec![
                    checks::monte_carlo(&p, cfg.n_t, cfg.paths, cfg.seed),
                    checks::deviation(&p, cfg.n_t, cfg.paths, cfg.seed, cfg.delta),
                ],
                (true, StrategyChoice::MeanField) => {
                    vec![checks::moments(&p, cfg.n_t, cfg.paths, cfg.seed, cfg.n_players)]
                }
            };
            (data, checks)
        }
        Command::Converge => {
            let data = converge(&mut ctx)?;
            let checks = if check {
                vec![checks::convergence_rate(&p, cfg.n_t, cfg.t0)]
            } else {
                vec![]
            };
            (data, checks)
        }
        Command::OracleCompare => {
            let data = oracle_compare(&mut ctx)?;
            let checks = if check {
                vec![checks::oracle_agreement(&p, cfg.n_t)]
            } else {
                vec![]
            };
            (data, checks)
        }
    };
    let mut summary = json!({
        "command": cmd.name(),
        "version": VERSION,
        "config": cfg,
        "warnings": parsed.warnings,
        "results": data,
    });
    if check {
        summary["checks"] = serde_json::to_value(&checks)?;
        summary["all_passed"] = Value::Bool(checks.iter().all(|c| c.passed));
    }
    summary["wall_clock_seconds"] = json!(start.elapsed().as_secs_f64());
    let path = out.join(format!("{}.json", cmd.name()));
    write_json(&path, &summary)?;
    ctx.files.push(path);
    Ok(RunOutcome {
        files: ctx.files,
        checks,
    })
}

fn solve(ctx: &mut Ctx) -> Result<Value> {
    let cfg = &ctx.parsed.config;
    let e = ctx.solve(cfg.coupling_kind(), cfg.n_t)?;
    write_bundle(ctx.out, &e)?;
    for f in ["kernels.json", "e0.csv", "e1.csv", "e2.csv", "e3.csv"] {
        ctx.files.push(ctx.out.join(f));
    }
    Ok(json!({
        "coupling": e.coupling().label(),
        "n_t": e.n_t(),
        "n_s": e.n_s(),
        "dt": e.grid().dt,
        "max_abs": e.max_abs(),
        "e0_at_0": e.e0(0),
        "e3_at_0": e.e3(0),
        "pde_residual": pde_residual(&e),
        "boundary": boundary_report(&e),
        "e3_consistency": e3_consistency(&e),
    }))
}

fn residuals(ctx: &mut Ctx) -> Result<Value> {
    let cfg = ctx.parsed.config.clone();
    let e = ctx.solve(cfg.coupling_kind(), cfg.n_t)?;
    let fine = ctx.solve(cfg.coupling_kind(), 2 * cfg.n_t)?;
    let mf = ctx.solve(CouplingKind::MeanField, cfg.n_t)?;

    let cloud = ParticleMeasure::new(checks::reference_cloud(&mf.lag()))?;
    // singular = 1 marks nodes next to a line T − pτ, left out of the maximum
    let mut csv = Csv::new(&["k", "singular", "t", "master_residual"]);
    let mut worst = 0.0_f64;
    for k in 1..mf.n_t() {
        let t = mf.grid().time(k);
        let mut r = 0.0_f64;
        for a in [0, 31, 63] {
            r = r.max(master_residual(&mf, t, &cloud.agents()[a], &cloud)?);
        }
        let singular = near_singular_time(mf.grid(), k);
        if !singular {
            worst = worst.max(r);
        }
        csv.row_mixed(&[k, singular as usize], &[t, r]);
    }
    ctx.csv("master_residual.csv", &csv)?;

    let t_mid = mf.grid().time(mf.n_t() / 2);
    let pts = checks::almost_solution_points(&mf, t_mid, &cfg.n_list)?;
    let mut csv = Csv::new(&["N", "excess"]);
    for (n, v) in &pts {
        csv.row_mixed(&[*n as usize], &[*v]);
    }
    ctx.csv("almost_solution.csv", &csv)?;
    let slope = crate::convergence::fit_loglog(&pts).map(|f| f.slope).ok();

    Ok(json!({
        "coupling": e.coupling().label(),
        "pde_residual": pde_residual(&e),
        "pde_residual_refined": pde_residual(&fine),
        "boundary": boundary_report(&e),
        "e3_consistency": e3_consistency(&e),
        "max_master_residual": worst,
        "almost_solution_t": t_mid,
        "almost_solution_slope": slope,
        "adjointness_defect": adjointness_defect(&e.lag(), 100, cfg.seed),
    }))
}

fn simulate_cmd(ctx: &mut Ctx) -> Result<Value> {
    let cfg = ctx.parsed.config.clone();
    let p = cfg.params();
    let n = cfg.n_players;
    let lag = crate::riccati::Grid::new(cfg.t_horizon, cfg.tau, cfg.n_t)?.lag();
    let init = InitialData::constant(&lag, cfg.reserves(), cfg.phi);
    let (e_n, e_m, strategy) = match cfg.strategy {
        StrategyChoice::Nash => (Some(ctx.solve(CouplingKind::NPlayer(n), cfg.n_t)?), None, Strategy::NashNPlayer),
        StrategyChoice::MeanField => (None, Some(ctx.solve(CouplingKind::MeanField, cfg.n_t)?), Strategy::NashMeanField),
        StrategyChoice::Zero => (None, None, Strategy::Zero),
    };
    let sc = SimConfig {
        n_t: cfg.n_t,
        m_paths: cfg.paths,
        seed: cfg.seed,
        store_paths: cfg.dump_paths,
    };
    let out = simulate(&p, e_n.as_ref(), e_m.as_ref(), &init, &StrategySpec::uniform(n, strategy), sc)?;

    let states = init.agent_states();
    let mut csv = Csv::new(&["agent", "mean", "stderr"]);
    let mut agents = Vec::new();
    for i in 0..n {
        let (mean, se) = estimate_cost(&out, i);
        csv.row_mixed(&[i], &[mean, se]);
        let value = match &e_n {
            Some(e) => Some(eval_value_nplayer(e, 0.0, &states, i)?),
            None => None,
        };
        agents.push(json!({"agent": i, "mean": mean, "stderr": se, "value": value}));
    }
    ctx.csv("costs.csv", &csv)?;

    let nt = out.grid.n_t;
    let mp = out.m_paths as f64;
    let mut csv = Csv::new(&["k", "t", "m0", "mean_alpha"]);
    for k in 0..=nt {
        let m0 = (0..out.m_paths).map(|q| out.m0_at(q, k)).sum::<f64>() / mp;
        let a = (0..out.m_paths).map(|q| out.mean_alpha[q * (nt + 1) + k]).sum::<f64>() / mp;
        csv.row_mixed(&[k], &[out.grid.time(k), m0, a]);
    }
    ctx.csv("moments.csv", &csv)?;

    if let (Some(xs), Some(als)) = (&out.paths, &out.controls) {
        let mut csv = Csv::new(&["path", "t", "agent", "x", "alpha"]);
        for q in 0..out.m_paths {
            for k in 0..=nt {
                for i in 0..n {
                    let idx = (q * n + i) * (nt + 1) + k;
                    csv.row(&[
                        q.to_string(),
                        super::io::real(out.grid.time(k)),
                        i.to_string(),
                        super::io::real(xs[idx]),
                        super::io::real(als[idx]),
                    ]);
                }
            }
        }
        ctx.csv("paths.csv", &csv)?;
    }

    let deviation = match (&e_n, cfg.delta != 0.0) {
        (Some(e), true) => {
            let a = deviation_test(&p, e, &init, cfg.agent, cfg.delta, sc)?;
            let b = deviation_test(&p, e, &init, cfg.agent, 2.0 * cfg.delta, sc)?;
            Some(json!({"agent": cfg.agent, "delta": cfg.delta, "single": a, "double": b, "ratio": b.gap / a.gap}))
        }
        _ => None,
    };
    Ok(json!({
        "strategy": cfg.strategy,
        "seed": out.seed,
        "paths": out.m_paths,
        "agents": agents,
        "moment_drift": moment_drift(&out),
        "deviation": deviation,
    }))
}

fn converge(ctx: &mut Ctx) -> Result<Value> {
    let cfg = ctx.parsed.config.clone();
    let p = cfg.params();
    let family = StateFamily::default();
    let mut times = vec![cfg.t0];
    let half = 0.5 * cfg.t_horizon;
    if cfg.t0 != half {
        times.push(half);
    }
    let mut csv = Csv::new(&["N", "t0", "gap"]);
    let mut sweeps = Vec::new();
    for &t0 in &times {
        let pts = gap_sweep(&p, &cfg.n_list, cfg.n_t, t0, &family, GapMode::Nash)?;
        for g in &pts {
            csv.row_mixed(&[g.n], &[t0, g.gap]);
        }
        let fit = rate_fit(&pts).ok();
        sweeps.push(json!({"t0": t0, "points": pts, "fit": fit}));
    }
    ctx.csv("gaps.csv", &csv)?;
    Ok(json!({"family": family.describe(), "sweeps": sweeps}))
}

fn oracle_compare(ctx: &mut Ctx) -> Result<Value> {
    let cfg = ctx.parsed.config.clone();
    let p = cfg.params();
    let mut csv = Csv::new(&["n_t", "dt", "kernel_value", "oracle_value", "relative_gap", "kernel_control", "oracle_control"]);
    let mut rows = Vec::new();
    for n_t in [cfg.n_t, 2 * cfg.n_t] {
        let e = ctx.solve(CouplingKind::MeanField, n_t)?;
        let lag = e.lag();
        let agent = ProductPoint::new(cfg.m0 + 1.0, PathH::zeros(&lag));
        let mu = MeasureSummary::new(cfg.m0, PathH::zeros(&lag));
        let v = eval_value_master(&e, 0.0, &agent, &mu)?;
        let o = oracle_value(&p, cfg.m0, e.grid().dt, &agent)?;
        let rel = (v - o).abs() / o.abs().max(f64::MIN_POSITIVE);
        let uk = optimal_control_mfg(&e, 0.0, &agent, &mu)?;
        let uo = oracle_first_control(&p, cfg.m0, e.grid().dt, &agent)?;
        csv.row_mixed(&[n_t], &[e.grid().dt, v, o, rel, uk, uo]);
        rows.push(json!({
            "n_t": n_t, "kernel_value": v, "oracle_value": o, "relative_gap": rel,
            "kernel_control": uk, "oracle_control": uo,
        }));
    }
    ctx.csv("oracle.csv", &csv)?;
    Ok(json!({"state": {"z0": cfg.m0 + 1.0, "z1": 0.0, "m0": cfg.m0}, "rows": rows}))
}
