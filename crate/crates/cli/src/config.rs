//! Experiment configuration from flags and an optional JSON file. Flags override file
//! values; anything still unset takes the per-command default.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use pyrdg::error::MAX_ORDER;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Project,
    Cheb,
    Eig,
    Advect,
    Wave,
    Specradius,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Command::Project => "project",
            Command::Cheb => "cheb",
            Command::Eig => "eig",
            Command::Advect => "advect",
            Command::Wave => "wave",
            Command::Specradius => "specradius",
        };
        f.write_str(s)
    }
}

/// Integer list written as `3`, `1,2,4` or an inclusive range `1..6`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntList {
    One(usize),
    Many(Vec<usize>),
    Text(String),
}

impl IntList {
    pub fn values(&self) -> Result<Vec<usize>, CliError> {
        match self {
            IntList::One(v) => Ok(vec![*v]),
            IntList::Many(v) => Ok(v.clone()),
            IntList::Text(s) => parse_int_list(s),
        }
    }
}

impl FromStr for IntList {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_int_list(s)?;
        Ok(IntList::Text(s.to_string()))
    }
}

pub fn parse_int_list(s: &str) -> Result<Vec<usize>, CliError> {
    let bad = |what: &str| CliError::Config(format!("cannot parse integer list '{s}': {what}"));
    let s = s.trim();
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad("bad lower bound"))?;
        let hi: usize = hi.trim().trim_start_matches('=').parse().map_err(|_| bad("bad upper bound"))?;
        if lo > hi {
            return Err(bad("empty range"));
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| bad("not an integer")))
        .collect()
}

/// Real list written as `0.5` or `0.2,0.5,1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RealList {
    One(f64),
    Many(Vec<f64>),
    Text(String),
}

impl RealList {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        match self {
            RealList::One(v) => Ok(vec![*v]),
            RealList::Many(v) => Ok(v.clone()),
            RealList::Text(s) => parse_real_list(s),
        }
    }
}

impl FromStr for RealList {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_real_list(s)?;
        Ok(RealList::Text(s.to_string()))
    }
}

pub fn parse_real_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("cannot parse real list '{s}'")))
        })
        .collect()
}

/// Command-line flags. Every field is optional so that a config file can supply it.
#[derive(Debug, Clone, Default, Parser)]
#[command(name = "pyrdg", version, about = "Pyramid DG experiment driver")]
pub struct Flags {
    /// Study to run.
    #[arg(long = "cmd", value_enum)]
    pub cmd: Option<Command>,
    /// Order or order list (`3`, `1,2`, `1..6`).
    #[arg(long = "N")]
    pub n: Option<IntList>,
    /// Mesh subdivisions per edge, single value or list.
    #[arg(long = "K1D")]
    pub k1d: Option<IntList>,
    /// Warp magnitudes, comma separated.
    #[arg(long = "gamma")]
    pub gamma: Option<RealList>,
    /// Upwinding parameter in [0, 1].
    #[arg(long = "alpha")]
    pub alpha: Option<f64>,
    /// Vertex perturbation magnitude.
    #[arg(long = "delta")]
    pub delta: Option<f64>,
    #[arg(long = "seed")]
    pub seed: Option<u64>,
    /// Relative residual tolerance of the Chebyshev solve.
    #[arg(long = "tol")]
    pub tol: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// Output CSV path. The manifest goes next to it.
    #[arg(long = "out")]
    pub out: Option<PathBuf>,
    /// JSON config file; flags take precedence.
    #[arg(long = "config")]
    pub config: Option<PathBuf>,
    /// Record the L2 error every this many steps in the diagnostics CSV (advect, wave).
    #[arg(long = "error-every")]
    pub error_every: Option<usize>,
}

/// JSON config file layout. Keys mirror the flag names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(alias = "command")]
    pub cmd: Option<Command>,
    #[serde(rename = "N")]
    pub n: Option<IntList>,
    #[serde(rename = "K1D")]
    pub k1d: Option<IntList>,
    pub gamma: Option<RealList>,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    #[serde(rename = "max-iter", alias = "max_iter")]
    pub max_iter: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(rename = "error-every", alias = "error_every")]
    pub error_every: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))
    }
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    #[serde(rename = "K1D")]
    pub k1d: Vec<usize>,
    pub gamma: Vec<f64>,
    pub alpha: f64,
    /// `None` means the per-mesh default `0.1 * 2 / K1D` (mesh studies) or zero
    /// (convergence studies).
    pub delta: Option<f64>,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub out: PathBuf,
    pub error_every: Option<usize>,
    /// True when the project study runs on meshes rather than the warped element.
    pub mesh_study: bool,
}

struct Defaults {
    n: &'static str,
    k1d: &'static str,
    gamma: &'static str,
}

fn defaults(cmd: Command) -> Defaults {
    match cmd {
        Command::Project => Defaults { n: "1..6", k1d: "2,4,8", gamma: "0.2,0.5,1" },
        Command::Cheb => Defaults { n: "3", k1d: "1", gamma: "0.2,0.5,1" },
        Command::Eig => Defaults { n: "1..4", k1d: "1", gamma: "0.2,0.5,1" },
        Command::Advect => Defaults { n: "1,2", k1d: "2,4,8", gamma: "0" },
        Command::Wave => Defaults { n: "1..3", k1d: "2,4,8", gamma: "0" },
        Command::Specradius => Defaults { n: "1..4", k1d: "2,4", gamma: "0" },
    }
}

impl ExperimentConfig {
    /// Merges flags over the config file named by `--config` (if any) and validates.
    pub fn from_flags(flags: Flags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Self::merge(flags, file)
    }

    pub fn merge(flags: Flags, file: FileConfig) -> Result<Self, CliError> {
        let command = flags
            .cmd
            .or(file.cmd)
            .ok_or_else(|| CliError::Config("no command given (--cmd)".into()))?;
        let d = defaults(command);
        let n_given = flags.n.or(file.n);
        let k_given = flags.k1d.or(file.k1d);
        let g_given = flags.gamma.or(file.gamma);
        let mesh_study = command == Command::Project && k_given.is_some();
        let n = match n_given {
            Some(l) => l.values()?,
            None if mesh_study => vec![2],
            None => parse_int_list(d.n)?,
        };
        let k1d = match k_given {
            Some(l) => l.values()?,
            None => parse_int_list(d.k1d)?,
        };
        let gamma = match g_given {
            Some(l) => l.values()?,
            None => parse_real_list(d.gamma)?,
        };
        let out = flags
            .out
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from(format!("{command}.csv")));
        let cfg = Self {
            command,
            n,
            k1d,
            gamma,
            alpha: flags.alpha.or(file.alpha).unwrap_or(1.0),
            delta: flags.delta.or(file.delta),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            tol: flags.tol.or(file.tol).unwrap_or(1e-10),
            max_iter: flags.max_iter.or(file.max_iter).unwrap_or(200),
            out,
            error_every: flags.error_every.or(file.error_every),
            mesh_study,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.n.is_empty() || self.k1d.is_empty() || self.gamma.is_empty() {
            return fail("N, K1D and gamma lists must be nonempty".into());
        }
        if let Some(&n) = self.n.iter().find(|&&n| n > MAX_ORDER) {
            return fail(format!("N = {n} exceeds the supported maximum {MAX_ORDER}"));
        }
        let needs_positive_n = matches!(
            self.command,
            Command::Cheb | Command::Eig | Command::Advect | Command::Wave | Command::Specradius
        );
        if needs_positive_n && self.n.contains(&0) {
            return fail("N must be at least 1".into());
        }
        if self.k1d.contains(&0) {
            return fail("K1D must be at least 1".into());
        }
        if let Some(g) = self.gamma.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
            return fail(format!("gamma must be finite and nonnegative, got {g}"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if let Some(delta) = self.delta {
            let smallest_half = self.k1d.iter().map(|&k| 1.0 / k as f64).fold(f64::INFINITY, f64::min);
            if !(delta >= 0.0) || delta >= smallest_half {
                return fail(format!("delta must lie in [0, {smallest_half}) for these meshes, got {delta}"));
            }
        }
        if !(self.tol > 0.0) {
            return fail(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return fail("max-iter must be positive".into());
        }
        if self.command == Command::Cheb && self.n.len() != 1 {
            return fail("cheb takes a single N".into());
        }
        if self.error_every == Some(0) {
            return fail("error-every must be positive".into());
        }
        Ok(())
    }

    /// Manifest path next to the CSV output.
    pub fn manifest_path(&self) -> PathBuf {
        self.out.with_extension("manifest.json")
    }

    /// Per-step diagnostics path for time-dependent studies.
    pub fn diagnostics_path(&self) -> PathBuf {
        self.out.with_extension("diagnostics.csv")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_syntax() {
        assert_eq!(parse_int_list("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_int_list("2, 4,8").unwrap(), vec![2, 4, 8]);
        assert_eq!(parse_int_list("3").unwrap(), vec![3]);
        assert!(parse_int_list("4..1").is_err());
        assert!(parse_int_list("x").is_err());
        assert_eq!(parse_real_list("0.2,1").unwrap(), vec![0.2, 1.0]);
    }

    #[test]
    fn flags_override_file() {
        let file: FileConfig = serde_json::from_str(
            r#"{"cmd": "eig", "N": [1, 2], "gamma": 0.5, "seed": 4, "tol": 1e-6}"#,
        )
        .unwrap();
        let flags = Flags {
            n: Some("3".parse().unwrap()),
            seed: Some(9),
            ..Flags::default()
        };
        let cfg = ExperimentConfig::merge(flags, file).unwrap();
        assert_eq!(cfg.command, Command::Eig);
        assert_eq!(cfg.n, vec![3]);
        assert_eq!(cfg.gamma, vec![0.5]);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.tol, 1e-6);
        assert_eq!(cfg.out, PathBuf::from("eig.csv"));
    }

    #[test]
    fn validation() {
        let base = || Flags { cmd: Some(Command::Wave), ..Flags::default() };
        assert!(ExperimentConfig::merge(Flags::default(), FileConfig::default()).is_err());
        assert!(ExperimentConfig::merge(Flags { alpha: Some(1.5), ..base() }, FileConfig::default()).is_err());
        assert!(ExperimentConfig::merge(Flags { delta: Some(0.3), ..base() }, FileConfig::default()).is_err());
        assert!(ExperimentConfig::merge(Flags { n: Some("11".parse().unwrap()), ..base() }, FileConfig::default()).is_err());
        let cheb = Flags { cmd: Some(Command::Cheb), n: Some("1,2".parse().unwrap()), ..Flags::default() };
        assert!(ExperimentConfig::merge(cheb, FileConfig::default()).is_err());
        assert!(serde_json::from_str::<FileConfig>(r#"{"bogus": 1}"#).is_err());
        let ok = ExperimentConfig::merge(base(), FileConfig::default()).unwrap();
        assert_eq!(ok.n, vec![1, 2, 3]);
        assert_eq!(ok.k1d, vec![2, 4, 8]);
    }

    #[test]
    fn project_study_kind() {
        let flags = Flags { cmd: Some(Command::Project), k1d: Some("2,4".parse().unwrap()), ..Flags::default() };
        let cfg = ExperimentConfig::merge(flags, FileConfig::default()).unwrap();
        assert!(cfg.mesh_study);
        assert_eq!(cfg.n, vec![2]);
        let flags = Flags { cmd: Some(Command::Project), ..Flags::default() };
        assert!(!ExperimentConfig::merge(flags, FileConfig::default()).unwrap().mesh_study);
    }
}
