//! `key = value` run configuration with file and flag layers.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::riccati::{aligned_n_t, CouplingKind, GameParams, Grid, Stepping};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingChoice {
    #[default]
    MeanField,
    NPlayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyChoice {
    #[default]
    Nash,
    MeanField,
    Zero,
}

/// Every experiment knob. Missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(rename = "T")]
    pub t_horizon: f64,
    pub tau: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub c: f64,
    pub n_t: usize,
    pub stepping: Stepping,
    pub coupling: CouplingChoice,
    /// Population size for N-player kernels and simulations.
    #[serde(rename = "N")]
    pub n_players: usize,
    #[serde(rename = "M")]
    pub paths: usize,
    pub seed: u64,
    pub strategy: StrategyChoice,
    /// Initial reserves; defaults to `N` points equispaced on `[−1, 1]`.
    pub xi: Option<Vec<f64>>,
    /// Constant control pre-history.
    pub phi: f64,
    /// Deviation size for the paired deviation test (0 disables it).
    pub delta: f64,
    /// Deviating agent.
    pub agent: usize,
    pub n_list: Vec<usize>,
    pub t0: f64,
    /// Mean reserve held fixed by the oracle comparison.
    pub m0: f64,
    pub dump_paths: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = GameParams::default();
        Self {
            t_horizon: p.t_horizon,
            tau: p.tau,
            sigma: p.sigma,
            epsilon: p.epsilon,
            c: p.c,
            n_t: 200,
            stepping: Stepping::Euler,
            coupling: CouplingChoice::MeanField,
            n_players: 4,
            paths: 10_000,
            seed: 42,
            strategy: StrategyChoice::Nash,
            xi: None,
            phi: 0.0,
            delta: 0.2,
            agent: 0,
            n_list: vec![2, 4, 8, 16, 32],
            t0: 0.0,
            m0: 0.0,
            dump_paths: false,
            out_dir: None,
        }
    }
}

/// A validated configuration plus the notes produced while fixing it up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parsed {
    pub config: RunConfig,
    pub warnings: Vec<String>,
}

impl RunConfig {
    pub fn params(&self) -> GameParams {
        GameParams {
            t_horizon: self.t_horizon,
            tau: self.tau,
            sigma: self.sigma,
            epsilon: self.epsilon,
            c: self.c,
            n_players: match self.coupling {
                CouplingChoice::NPlayer => Some(self.n_players),
                CouplingChoice::MeanField => None,
            },
        }
    }

    pub fn coupling_kind(&self) -> CouplingKind {
        match self.coupling {
            CouplingChoice::NPlayer => CouplingKind::NPlayer(self.n_players),
            CouplingChoice::MeanField => CouplingKind::MeanField,
        }
    }

    pub fn reserves(&self) -> Vec<f64> {
        match &self.xi {
            Some(v) => v.clone(),
            None => {
                let n = self.n_players;
                (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
            }
        }
    }

    /// Checks every constraint and aligns `n_t` upward to the delay.
    pub fn validate(mut self) -> Result<Parsed> {
        let mut warnings = Vec::new();
        self.params().validate()?;
        if self.n_players < 2 {
            return Err(Error::config("N", format!("need at least 2 players, got {}", self.n_players)));
        }
        if self.paths == 0 {
            return Err(Error::config("M", "need at least one path"));
        }
        if self.n_t == 0 {
            return Err(Error::config("n_t", "need at least one time step"));
        }
        if Grid::new(self.t_horizon, self.tau, self.n_t).is_err() {
            let fixed = aligned_n_t(self.t_horizon, self.tau, self.n_t).ok_or_else(|| {
                Error::config(
                    "n_t",
                    format!("no n_t in [{}, {}] makes tau/dt an integer", self.n_t, 64 * self.n_t),
                )
            })?;
            warnings.push(format!(
                "n_t = {} does not put tau on the grid; using n_t = {fixed}",
                self.n_t
            ));
            self.n_t = fixed;
        }
        if let Some(xi) = &self.xi {
            if xi.len() != self.n_players {
                return Err(Error::config(
                    "xi",
                    format!("{} reserves for N = {}", xi.len(), self.n_players),
                ));
            }
            if xi.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("xi", "reserves must be finite"));
            }
        }
        if !self.phi.is_finite() {
            return Err(Error::config("phi", "must be finite"));
        }
        if !self.delta.is_finite() {
            return Err(Error::config("delta", "must be finite"));
        }
        if self.agent >= self.n_players {
            return Err(Error::config(
                "agent",
                format!("agent {} out of range for N = {}", self.agent, self.n_players),
            ));
        }
        if self.n_list.iter().any(|&n| n < 2) {
            return Err(Error::config("n_list", "every N must be at least 2"));
        }
        if !(self.t0 >= 0.0 && self.t0 < self.t_horizon) {
            return Err(Error::config("t0", format!("must lie in [0, T), got {}", self.t0)));
        }
        if !self.m0.is_finite() {
            return Err(Error::config("m0", "must be finite"));
        }
        Ok(Parsed {
            config: self,
            warnings,
        })
    }
}

/// Parses one `--set KEY=VALUE` override. Values that are not valid TOML
/// are taken as bare strings.
fn parse_override(item: &str) -> Result<(String, toml::Value)> {
    let (key, value) = item
        .split_once('=')
        .ok_or_else(|| Error::config(item, "override must look like KEY=VALUE"))?;
    let key = key.trim().to_string();
    let raw = value.trim();
    let doc = format!("v = {raw}");
    let value = match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((key, value))
}

/// Layers `overrides` on top of the TOML text `file` (either may be empty)
/// and validates the result.
pub fn parse_config_str(file: &str, overrides: &[String]) -> Result<Parsed> {
    let mut table: toml::Table = file.parse().map_err(|e: toml::de::Error| Error::Parse {
        file: "config".into(),
        msg: e.message().to_string(),
    })?;
    for item in overrides {
        let (k, v) = parse_override(item)?;
        table.insert(k, v);
    }
    // One key at a time so a type error names the offending key.
    for (k, v) in &table {
        let mut single = toml::Table::new();
        single.insert(k.clone(), v.clone());
        toml::Value::Table(single)
            .try_into::<RunConfig>()
            .map_err(|e| Error::config(k.clone(), e.message().trim().to_string()))?;
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::config("config", e.message().trim().to_string()))?;
    cfg.validate()
}

pub fn parse_config(file: Option<&Path>, overrides: &[String]) -> Result<Parsed> {
    let text = match file {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::config("config", format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    parse_config_str(&text, overrides).map_err(|e| match (e, file) {
        (Error::Parse { msg, .. }, Some(p)) => Error::Parse {
            file: p.display().to_string(),
            msg,
        },
        (e, _) => e,
    })
}

/// Output directory: `flag` > `env` > file/flag `out_dir` > `./out`.
pub fn resolve_out_dir(flag: Option<&Path>, env: Option<&str>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(e) = env.filter(|s| !s.is_empty()) {
        return PathBuf::from(e);
    }
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}
