//! Run configuration, argument parsing and the `simulate` / `sweep` /
//! `slice` commands behind the `tbhiv` binary.
//!
//! Values are resolved in three layers: built-in defaults (the reference
//! experimental setup), then an optional `--config` file, then flags.

mod artifacts;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{initial_state, Compartment, ControlValue, Parameters, StateVector};
use crate::nlp::{Mop, SolverSettings};
use crate::sweep::{max_effort, Scenario};

pub use artifacts::{read_front_csv, FrontRecord, Manifest, OutputEntry, MANIFEST_SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// One forward run with constant controls.
    Simulate,
    /// Full ε-constraint sweep.
    Sweep,
    /// Sweep, then extract the points at the requested effort levels.
    Slice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// CSV only.
    #[default]
    Csv,
    /// CSV plus JSON mirrors of every table.
    Json,
}

/// Fully resolved description of one invocation. This is also the `config`
/// object of `manifest.json`, so a manifest can be fed back via `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    pub mop: Mop,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_intervals: usize,
    pub n_front_points: usize,
    /// Parameter overrides by name; everything else keeps its default.
    pub params: BTreeMap<String, f64>,
    /// Initial-state overrides by compartment name.
    pub init: BTreeMap<String, f64>,
    pub solver: SolverSettings,
    /// Effort levels `f2` to extract with `slice`.
    pub slices: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u2: Option<f64>,
    pub out: PathBuf,
    pub format: Format,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            mop: Mop::Mop1,
            horizon: 10.0,
            n_intervals: 100,
            n_front_points: 100,
            params: BTreeMap::new(),
            init: BTreeMap::new(),
            solver: SolverSettings::default(),
            slices: Vec::new(),
            u1: None,
            u2: None,
            out: PathBuf::from("out"),
            format: Format::Csv,
            parallel: false,
        }
    }
}

impl RunConfig {
    pub fn command(&self) -> Result<Command> {
        self.command.ok_or_else(|| Error::Usage("no command given (simulate, sweep or slice)".into()))
    }

    pub fn parameters(&self) -> Result<Parameters> {
        let mut p = Parameters::default();
        for (name, &value) in &self.params {
            if name == "T" {
                return Err(Error::Usage("the horizon is set with --T, not --param".into()));
            }
            p.set(name, value)?;
        }
        p.horizon = self.horizon;
        p.validate()?;
        Ok(p)
    }

    pub fn initial_state(&self) -> Result<StateVector> {
        let mut s = initial_state(&self.parameters()?);
        for (name, &value) in &self.init {
            let c: Compartment = name.parse()?;
            s[c] = value;
        }
        Ok(s)
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let scenario = Scenario {
            mop: self.mop,
            n_intervals: self.n_intervals,
            n_front_points: self.n_front_points,
            params: self.parameters()?,
            initial_state: if self.init.is_empty() { None } else { Some(self.initial_state()?) },
            settings: self.solver,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Constant control of `simulate`; unset components are zero.
    pub fn constant_control(&self) -> Result<ControlValue> {
        ControlValue::new(self.u1.unwrap_or(0.0), self.u2.unwrap_or(0.0))
    }

    pub fn validate(&self) -> Result<()> {
        let command = self.command()?;
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::invalid("T", format!("must be positive, got {}", self.horizon)));
        }
        if self.n_intervals == 0 {
            return Err(Error::invalid("n_intervals", "must be at least 1"));
        }
        let state = self.initial_state()?;
        if state.0.iter().any(|v| !v.is_finite() || *v < 0.0) || !(state.total() > 0.0) {
            return Err(Error::invalid("initial state", "compartments must be nonnegative with a positive total"));
        }
        match command {
            Command::Simulate => {
                self.constant_control().map_err(|e| Error::invalid("--u1/--u2", e.to_string()))?;
            }
            Command::Sweep | Command::Slice => {
                if self.u1.is_some() || self.u2.is_some() {
                    return Err(Error::Usage("--u1/--u2 apply to `simulate` only".into()));
                }
                self.scenario()?;
            }
        }
        let top = max_effort(self.horizon);
        if let Some(bad) = self.slices.iter().find(|v| !(**v >= 0.0 && **v <= top)) {
            return Err(Error::invalid("slice target", format!("{bad} is outside [0, {top}]")));
        }
        if command == Command::Slice && self.slices.is_empty() {
            return Err(Error::Usage("`slice` needs at least one --slice target".into()));
        }
        Ok(())
    }
}

fn parse_assignment(s: &str) -> std::result::Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let value: f64 = value.trim().parse().map_err(|_| format!("`{value}` is not a number"))?;
    Ok((name.trim().to_string(), value))
}

fn parse_mop(s: &str) -> std::result::Result<Mop, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Command-line flags. Every flag is optional and overrides the config file.
#[derive(Debug, Clone, Parser)]
#[command(name = "tbhiv", version, about = "Pareto fronts of treatment effort versus AIDS burden for a TB-HIV coinfection model")]
pub struct Args {
    /// What to run; may instead come from the config file.
    #[arg(value_enum)]
    pub command: Option<Command>,
    /// TOML or JSON run configuration, or a previous manifest.json.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Treatment scenario: 1 (u1 and u2), 2 (u1 only), 3 (u2 only).
    #[arg(long, value_parser = parse_mop)]
    pub mop: Option<Mop>,
    /// Time horizon in years.
    #[arg(long = "T", value_name = "YEARS")]
    pub horizon: Option<f64>,
    #[arg(long, value_name = "INT")]
    pub n_intervals: Option<usize>,
    #[arg(long, value_name = "INT")]
    pub front_points: Option<usize>,
    /// Maximum number of simulations per subproblem.
    #[arg(long, value_name = "INT")]
    pub budget: Option<usize>,
    /// Model parameter override, repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE", value_parser = parse_assignment)]
    pub params: Vec<(String, f64)>,
    /// Initial compartment override, repeatable.
    #[arg(long = "init", value_name = "NAME=VALUE", value_parser = parse_assignment)]
    pub init: Vec<(String, f64)>,
    /// Effort level to extract, repeatable.
    #[arg(long = "slice", value_name = "F2")]
    pub slices: Vec<f64>,
    /// Constant u1 for `simulate`.
    #[arg(long)]
    pub u1: Option<f64>,
    /// Constant u2 for `simulate`.
    #[arg(long)]
    pub u2: Option<f64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Solve sweep points concurrently from cold starts.
    #[arg(long)]
    pub parallel: bool,
}

impl Args {
    /// Layers the flags over the config file (if any) and the defaults.
    pub fn resolve(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(c) = self.command {
            cfg.command = Some(c);
        }
        if let Some(m) = self.mop {
            cfg.mop = m;
        }
        if let Some(t) = self.horizon {
            cfg.horizon = t;
        }
        if let Some(n) = self.n_intervals {
            cfg.n_intervals = n;
        }
        if let Some(n) = self.front_points {
            cfg.n_front_points = n;
        }
        if let Some(b) = self.budget {
            cfg.solver.budget = b;
        }
        cfg.params.extend(self.params);
        cfg.init.extend(self.init);
        if !self.slices.is_empty() {
            cfg.slices = self.slices;
        }
        if self.u1.is_some() {
            cfg.u1 = self.u1;
        }
        if self.u2.is_some() {
            cfg.u2 = self.u2;
        }
        if let Some(out) = self.out {
            cfg.out = out;
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        cfg.parallel |= self.parallel;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads a run configuration. `.toml` files are TOML; anything else is JSON,
/// either a bare configuration or a manifest whose `config` member is used.
pub fn load_config_file(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::invalid(format!("config file {}", path.display()), reason);
    if path.extension().is_some_and(|e| e == "toml") {
        return toml::from_str(&text).map_err(|e| bad(e.to_string()));
    }
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if value.get("schema_version").is_some() {
        value = value.get_mut("config").map(serde_json::Value::take).ok_or_else(|| bad("manifest has no `config`".into()))?;
    }
    serde_json::from_value(value).map_err(|e| bad(e.to_string()))
}

/// Parses command-line tokens (program name first) into a validated config.
pub fn parse_config<I, T>(tokens: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = Args::try_parse_from(tokens).map_err(|e| Error::Usage(e.render().to_string().trim_end().to_string()))?;
    args.resolve()
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub out: PathBuf,
    pub files: Vec<String>,
    /// `(points, converged)` for sweeps.
    pub front: Option<(usize, usize)>,
}

/// Executes a validated configuration and writes its artifacts.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    artifacts::execute(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &str) -> Result<RunConfig> {
        parse_config(std::iter::once("tbhiv").chain(args.split_whitespace()))
    }

    #[test]
    fn bare_sweep_uses_the_reference_setup() {
        let cfg = parse("sweep --mop 1 --T 10").unwrap();
        assert_eq!(cfg.command, Some(Command::Sweep));
        assert_eq!(cfg.mop, Mop::Mop1);
        assert_eq!(cfg.horizon, 10.0);
        assert_eq!(cfg.n_intervals, 100);
        assert_eq!(cfg.n_front_points, 100);
        assert_eq!(cfg.solver.budget, 50_000);
        assert_eq!(cfg.parameters().unwrap(), Parameters::default());
        assert_eq!(cfg.format, Format::Csv);
        assert!(!cfg.parallel);
    }

    #[test]
    fn single_parameter_override() {
        let cfg = parse("sweep --param beta1=0.7").unwrap();
        let mut expected = Parameters::default();
        expected.beta1 = 0.7;
        assert_eq!(cfg.parameters().unwrap(), expected);
    }

    #[test]
    fn repeated_slices_and_initial_overrides() {
        let cfg = parse("slice --mop 2 --slice 3 --slice 6 --init A=100 --init S=2e4").unwrap();
        assert_eq!(cfg.slices, vec![3.0, 6.0]);
        let s = cfg.initial_state().unwrap();
        assert_eq!(s[Compartment::A], 100.0);
        assert_eq!(s[Compartment::S], 20000.0);
        assert_eq!(s[Compartment::LT], initial_state(&Parameters::default())[Compartment::LT]);
        assert!(cfg.scenario().unwrap().initial_state.is_some());
    }

    #[test]
    fn simulate_takes_constant_controls() {
        let cfg = parse("simulate --mop 1 --u1 0.95 --u2 0").unwrap();
        assert_eq!(cfg.constant_control().unwrap(), ControlValue { u1: 0.95, u2: 0.0 });
        assert!(parse("simulate --u1 0.6 --u2 0.6").is_err());
    }

    #[test]
    fn usage_errors_name_the_offending_token() {
        let e = parse("sweep --bogus 1").unwrap_err();
        assert!(matches!(&e, Error::Usage(m) if m.contains("--bogus")), "{e}");
        let e = parse("sweep --T ten").unwrap_err();
        assert!(matches!(&e, Error::Usage(m) if m.contains("ten")), "{e}");
        let e = parse("sweep --param beta1").unwrap_err();
        assert!(matches!(&e, Error::Usage(m) if m.contains("NAME=VALUE")), "{e}");
        let e = parse("sweep --mop 4").unwrap_err();
        assert!(matches!(&e, Error::Usage(m) if m.contains('4')), "{e}");
        assert!(matches!(parse("--mop 1"), Err(Error::Usage(_))));
        assert!(matches!(parse("sweep --u1 0.5"), Err(Error::Usage(_))));
        assert!(matches!(parse("slice"), Err(Error::Usage(_))));
        assert!(matches!(parse("sweep --param T=30"), Err(Error::Usage(_))));
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        let e = parse("sweep --param nope=1").unwrap_err();
        assert!(e.to_string().contains("nope"), "{e}");
        let e = parse("sweep --init Q=1").unwrap_err();
        assert!(e.to_string().contains('Q'), "{e}");
        assert!(parse("slice --slice 9.1").is_err());
        assert!(parse("slice --T 30 --slice 9.1").is_ok());
        assert!(parse("slice --slice -1").is_err());
        assert!(parse("sweep --front-points 1").is_err());
        assert!(parse("sweep --n-intervals 0").is_err());
        assert!(parse("sweep --T 0").is_err());
        assert!(parse("sweep --budget 0").is_err());
        assert!(parse("sweep --param r=1.5").is_err());
        assert!(parse("sweep --init A=-1").is_err());
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "command = \"sweep\"\nmop = \"MOP3\"\nn_front_points = 7\nslices = [3.0]\n[params]\nbeta2 = 0.2\n[solver]\nbudget = 900\n",
        )
        .unwrap();
        let file = format!("--config {}", path.display());
        let cfg = parse(&file).unwrap();
        assert_eq!(cfg.command, Some(Command::Sweep));
        assert_eq!(cfg.mop, Mop::Mop3);
        assert_eq!(cfg.n_front_points, 7);
        assert_eq!(cfg.solver.budget, 900);
        assert_eq!(cfg.solver.tolerances, crate::nlp::Tolerances::default());
        assert_eq!(cfg.parameters().unwrap().beta2, 0.2);

        let cfg = parse(&format!("simulate {file} --mop 2 --budget 5 --param beta1=0.5 --slice 6")).unwrap();
        assert_eq!(cfg.command, Some(Command::Simulate));
        assert_eq!(cfg.mop, Mop::Mop2);
        assert_eq!(cfg.solver.budget, 5);
        assert_eq!(cfg.slices, vec![6.0]);
        let p = cfg.parameters().unwrap();
        assert_eq!((p.beta1, p.beta2), (0.5, 0.2));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"command": "sweep", "horizon": 30}"#).unwrap();
        let e = parse(&format!("--config {}", path.display())).unwrap_err();
        assert!(e.to_string().contains("horizon"), "{e}");
        std::fs::write(&path, r#"{"command": "sweep", "solver": {"budgett": 3}}"#).unwrap();
        assert!(parse(&format!("--config {}", path.display())).is_err());
        let missing = dir.path().join("missing.toml");
        assert!(matches!(parse(&format!("sweep --config {}", missing.display())), Err(Error::Io { .. })));
    }

    #[test]
    fn manifest_config_round_trips() {
        let cfg = parse("slice --mop 2 --T 30 --slice 3 --param k3=2.5 --init A=10 --format json --parallel").unwrap();
        let manifest = serde_json::json!({ "schema_version": 1, "config": cfg, "outputs": [] });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, manifest.to_string()).unwrap();
        assert_eq!(load_config_file(&path).unwrap(), cfg);
        let toml_text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&toml_text).unwrap(), cfg);
    }
}
