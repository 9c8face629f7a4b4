//! CSV/JSON emission and the round-trippable kernel bundle.
//!
//! Reals are written as `{:.16e}` (17 significant digits), which parses back
//! to the identical `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::riccati::{CouplingKind, ESolution, GameParams, Grid, Stepping};

pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Accumulates CSV text; columns are fixed by the header.
pub struct Csv {
    text: String,
    cols: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            text: format!("{}\n", header.join(",")),
            cols: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.cols);
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    /// Row of integer labels followed by reals.
    pub fn row_mixed(&mut self, ints: &[usize], reals: &[f64]) {
        debug_assert_eq!(ints.len() + reals.len(), self.cols);
        for (n, i) in ints.iter().enumerate() {
            if n > 0 {
                self.text.push(',');
            }
            let _ = write!(self.text, "{i}");
        }
        for (n, r) in reals.iter().enumerate() {
            if n > 0 || !ints.is_empty() {
                self.text.push(',');
            }
            let _ = write!(self.text, "{r:.16e}");
        }
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text)?;
        Ok(())
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// What is needed besides the arrays to rebuild an `ESolution`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMeta {
    pub params: GameParams,
    pub n_t: usize,
    pub n_s: usize,
    pub coupling: CouplingKind,
    pub stepping: Stepping,
}

pub const META_FILE: &str = "kernels.json";

/// Writes `kernels.json`, `e0.csv`, `e1.csv`, `e2.csv` (packed triangle
/// `j ≤ l` only) and `e3.csv` into `dir`.
pub fn write_bundle(dir: &Path, e: &ESolution) -> Result<()> {
    fs::create_dir_all(dir)?;
    let g = *e.grid();
    let lag = g.lag();
    write_json(
        &dir.join(META_FILE),
        &KernelMeta {
            params: *e.params(),
            n_t: g.n_t,
            n_s: g.n_s,
            coupling: e.coupling(),
            stepping: e.stepping(),
        },
    )?;
    let mut e0 = Csv::new(&["k", "t", "e0"]);
    let mut e3 = Csv::new(&["k", "t", "e3"]);
    for k in 0..=g.n_t {
        e0.row_mixed(&[k], &[g.time(k), e.e0(k)]);
        e3.row_mixed(&[k], &[g.time(k), e.e3(k)]);
    }
    e0.write(&dir.join("e0.csv"))?;
    e3.write(&dir.join("e3.csv"))?;

    let mut e1 = Csv::new(&["k", "j", "t", "theta", "e1"]);
    for k in 0..=g.n_t {
        for j in 0..=g.n_s {
            e1.row_mixed(&[k, j], &[g.time(k), lag.node(j), e.e1(k, j)]);
        }
    }
    e1.write(&dir.join("e1.csv"))?;

    let mut e2 = Csv::new(&["k", "j", "l", "e2"]);
    for k in 0..=g.n_t {
        for j in 0..=g.n_s {
            for l in j..=g.n_s {
                e2.row_mixed(&[k, j, l], &[e.e2(k, j, l)]);
            }
        }
    }
    e2.write(&dir.join("e2.csv"))
}

fn parse_err(file: &str, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse {
        file: file.to_string(),
        msg: format!("line {line}: {msg}"),
    }
}

/// Reads the last column of a CSV whose leading integer columns must equal
/// `expect(row)`.
fn read_column(dir: &Path, file: &str, n_int: usize, expect: impl Fn(usize) -> Vec<usize>) -> Result<Vec<f64>> {
    let text = fs::read_to_string(dir.join(file))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let want = expect(out.len());
        for (c, w) in cells.iter().take(n_int).zip(&want) {
            let got: usize = c.parse().map_err(|e| parse_err(file, n + 1, e))?;
            if got != *w {
                return Err(parse_err(file, n + 1, format!("index {got}, expected {w}")));
            }
        }
        let last = cells.last().ok_or_else(|| parse_err(file, n + 1, "empty row"))?;
        out.push(last.parse::<f64>().map_err(|e| parse_err(file, n + 1, e))?);
    }
    Ok(out)
}

pub fn read_bundle(dir: &Path) -> Result<ESolution> {
    let meta: KernelMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
    let grid = Grid::new(meta.params.t_horizon, meta.params.tau, meta.n_t)?;
    if grid.n_s != meta.n_s {
        return Err(Error::Parse {
            file: META_FILE.into(),
            msg: format!("n_s = {} but the grid gives {}", meta.n_s, grid.n_s),
        });
    }
    let ns1 = grid.n_s + 1;
    let e0 = read_column(dir, "e0.csv", 1, |r| vec![r])?;
    let e3 = read_column(dir, "e3.csv", 1, |r| vec![r])?;
    let e1 = read_column(dir, "e1.csv", 2, |r| vec![r / ns1, r % ns1])?;
    let pairs: Vec<(usize, usize)> = (0..ns1).flat_map(|j| (j..ns1).map(move |l| (j, l))).collect();
    let e2 = read_column(dir, "e2.csv", 3, |r| {
        let (j, l) = pairs[r % pairs.len()];
        vec![r / pairs.len(), j, l]
    })?;
    ESolution::from_parts(meta.params, grid, meta.coupling, meta.stepping, e0, e1, e2, e3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::solve_e_system;

    #[test]
    fn reals_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, f64::MAX, -0.0, 6.02214076e23] {
            let y: f64 = real(x).parse().unwrap();
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn bundle_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for coupling in [CouplingKind::MeanField, CouplingKind::NPlayer(3)] {
            let e = solve_e_system(&GameParams::default(), 20, coupling).unwrap();
            write_bundle(dir.path(), &e).unwrap();
            assert_eq!(read_bundle(dir.path()).unwrap(), e);
        }
    }

    #[test]
    fn corrupted_bundle_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let e = solve_e_system(&GameParams::default(), 20, CouplingKind::MeanField).unwrap();
        write_bundle(dir.path(), &e).unwrap();
        let p = dir.path().join("e1.csv");
        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(3, 4);
        fs::write(&p, lines.join("\n")).unwrap();
        assert!(matches!(read_bundle(dir.path()), Err(Error::Parse { .. })));
    }
}
