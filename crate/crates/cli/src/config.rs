//! Run configuration: defaults, JSON config file, command-line flags, and
//! the precedence rule flags > file > defaults.

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    /// Solve a self-similar profile and write it as a JSON document.
    Profile,
    /// Negative spectrum of the operator linearized at a profile.
    Spectrum,
    /// Negative spectrum of the limiting operator.
    SpectrumInfty,
    /// Linearized evolution in the similarity variable.
    Evolve,
    /// Recompute the published rate table and compare at printed precision.
    VerifyTable1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SeedKindName {
    /// Discrete unstable eigenmode, selected by `mode_index`.
    Eigenmode,
    /// Time-independent gauge direction rho sqrt(1 - rho^2) f'.
    Gauge,
    /// Deterministic random low-band data (see `rng_seed`, `bands`).
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Branch {
    Growing,
    Decaying,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative tolerance of the adaptive ODE integrations.
    pub ode_rel: f64,
    /// Absolute tolerance of the adaptive ODE integrations.
    pub ode_abs: f64,
    /// Mismatch tolerance of the two-sided profile shoot.
    pub match_tol: f64,
    /// Agreement tolerance when eigenvalues are compared across pipelines.
    pub eig_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { ode_rel: 1e-11, ode_abs: 1e-14, match_tol: 1e-10, eig_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Evolution grid sizes; the first entry is the working grid, the rest
    /// are refinement stages for convergence reporting.
    pub sizes: Vec<usize>,
    /// Edge offset of the truncated evolution domain.
    pub delta: f64,
    /// Series handover offset at the singular endpoints.
    pub eps: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { sizes: vec![2048], delta: 1e-3, eps: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    pub kind: SeedKindName,
    /// 1-based unstable-mode index for `eigenmode` seeds.
    pub mode_index: usize,
    /// Growing branch (v = +mu u) or decaying branch (v = -mu u).
    pub growing: bool,
    pub amplitude: f64,
    /// RNG stream for `random` seeds.
    pub rng_seed: u64,
    /// Number of low sine bands in `random` seeds.
    pub bands: usize,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig {
            kind: SeedKindName::Eigenmode,
            mode_index: 1,
            growing: true,
            amplitude: 1.0,
            rng_seed: 1,
            bands: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveConfig {
    /// Horizon in the similarity time.
    pub sigma_max: f64,
    /// Step safety factor relative to the spectral radius.
    pub cfl: f64,
    /// Snapshot spacing; null means sigma_max / 64.
    pub emit_interval: Option<f64>,
    pub seed: SeedConfig,
    /// Window for the fitted growth rate; null means [0.2, 0.8] * sigma_max.
    pub rate_window: Option<[f64; 2]>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            sigma_max: 10.0,
            cfl: 2.5,
            emit_interval: None,
            seed: SeedConfig::default(),
            rate_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Artifact destination; null writes the artifact to stdout.
    pub path: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

impl OutputConfig {
    pub fn format(&self) -> OutputFormat {
        self.format.unwrap_or(OutputFormat::Json)
    }
}

/// Fully resolved run configuration. `n`/`ell` stay optional so commands can
/// distinguish "defaulted" from "requested" (a spectrum run fed a profile
/// document takes the indices from the document unless they were requested
/// explicitly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub command: Option<CommandName>,
    pub n: Option<u32>,
    pub ell: Option<u32>,
    /// Root count requested from the limiting-operator solver.
    pub count: usize,
    pub tolerances: Tolerances,
    pub grid: GridConfig,
    pub evolve: EvolveConfig,
    /// Profile document consumed by `spectrum` instead of shooting in-process.
    pub input: Option<PathBuf>,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            command: None,
            n: None,
            ell: None,
            count: 3,
            tolerances: Tolerances::default(),
            grid: GridConfig::default(),
            evolve: EvolveConfig::default(),
            input: None,
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn n(&self) -> u32 {
        self.n.unwrap_or(0)
    }

    pub fn ell(&self) -> u32 {
        self.ell.unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(format!(
                "schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.ode_rel", t.ode_rel),
            ("tolerances.ode_abs", t.ode_abs),
            ("tolerances.match_tol", t.match_tol),
            ("tolerances.eig_tol", t.eig_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.ell() < 1 {
            return Err("ell must be >= 1".into());
        }
        if self.grid.sizes.is_empty() {
            return Err("grid.sizes must not be empty".into());
        }
        if let Some(&bad) = self.grid.sizes.iter().find(|&&s| s < 2) {
            return Err(format!("grid.sizes entries must be >= 2, got {bad}"));
        }
        if !(self.grid.delta > 0.0 && self.grid.delta < 0.25) {
            return Err(format!("grid.delta must lie in (0, 0.25), got {}", self.grid.delta));
        }
        if !(self.grid.eps > 0.0 && self.grid.eps < 0.1) {
            return Err(format!("grid.eps must lie in (0, 0.1), got {}", self.grid.eps));
        }
        if self.count == 0 || self.count > 64 {
            return Err(format!("count must lie in 1..=64, got {}", self.count));
        }
        let e = &self.evolve;
        if !(e.sigma_max > 0.0 && e.sigma_max.is_finite()) {
            return Err(format!("evolve.sigma_max must be positive, got {}", e.sigma_max));
        }
        if !(e.cfl > 0.0 && e.cfl < 2.8) {
            return Err(format!(
                "evolve.cfl must lie in (0, 2.8) to stay inside the stability region, got {}",
                e.cfl
            ));
        }
        if let Some(dt) = e.emit_interval {
            if !(dt > 0.0 && dt <= e.sigma_max) {
                return Err(format!(
                    "evolve.emit_interval must lie in (0, sigma_max], got {dt}"
                ));
            }
        }
        if let Some([lo, hi]) = e.rate_window {
            if !(0.0 <= lo && lo < hi && hi <= e.sigma_max) {
                return Err(format!(
                    "evolve.rate_window must be increasing inside [0, sigma_max], got [{lo}, {hi}]"
                ));
            }
        }
        let s = &e.seed;
        if s.mode_index == 0 {
            return Err("evolve.seed.mode_index is 1-based, got 0".into());
        }
        if !(s.amplitude.is_finite() && s.amplitude != 0.0) {
            return Err(format!(
                "evolve.seed.amplitude must be finite and nonzero, got {}",
                s.amplitude
            ));
        }
        if s.bands == 0 {
            return Err("evolve.seed.bands must be >= 1".into());
        }
        Ok(())
    }
}

/// Command-line surface. One flat flag set serves every command so that the
/// precedence rule is uniform; the command itself is a positional value and
/// may instead come from the config file.
#[derive(Debug, Parser)]
#[command(
    name = "wavemaps",
    version,
    about = "Self-similar wave-map profiles, their linearized spectra, and the linearized flow",
    after_help = "Precedence: flags > --config file > built-in defaults.\n\
                  Exit status: 0 all requested tolerances met, 1 tolerance missed,\n\
                  2 invalid configuration, 3 I/O failure, 4 solver failure.\n\
                  Configuration errors are reported on stderr as one JSON record."
)]
pub struct Cli {
    /// profile | spectrum | spectrum-infty | evolve | verify-table1
    #[arg(value_enum)]
    pub command: Option<CommandName>,

    /// JSON config file; flags given here override its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    pub emit_config: bool,

    /// Intersection index of the profile (number of equator crossings).
    #[arg(long)]
    pub n: Option<u32>,

    /// Corotation index.
    #[arg(long)]
    pub ell: Option<u32>,

    /// Root count for spectrum-infty.
    #[arg(long)]
    pub count: Option<usize>,

    #[arg(long, value_name = "TOL")]
    pub ode_rel: Option<f64>,

    #[arg(long, value_name = "TOL")]
    pub ode_abs: Option<f64>,

    /// Profile shooting mismatch tolerance.
    #[arg(long, value_name = "TOL")]
    pub match_tol: Option<f64>,

    /// Cross-pipeline eigenvalue agreement tolerance.
    #[arg(long, value_name = "TOL")]
    pub eig_tol: Option<f64>,

    /// Evolution grid sizes, comma separated; first is the working grid.
    #[arg(long, value_delimiter = ',', value_name = "N1,N2,...")]
    pub grid: Option<Vec<usize>>,

    /// Edge offset of the truncated evolution domain.
    #[arg(long)]
    pub delta: Option<f64>,

    /// Series handover offset at the singular endpoints.
    #[arg(long)]
    pub eps: Option<f64>,

    /// Evolution horizon in the similarity time.
    #[arg(long)]
    pub sigma_max: Option<f64>,

    /// Step safety factor, must stay below 2.8.
    #[arg(long)]
    pub cfl: Option<f64>,

    /// Snapshot spacing along the trajectory.
    #[arg(long)]
    pub emit_interval: Option<f64>,

    /// Initial data family for evolve.
    #[arg(long, value_enum)]
    pub seed: Option<SeedKindName>,

    /// 1-based unstable-mode index for eigenmode seeds.
    #[arg(long)]
    pub mode_index: Option<usize>,

    /// Branch of an eigenmode seed.
    #[arg(long, value_enum)]
    pub branch: Option<Branch>,

    #[arg(long)]
    pub amplitude: Option<f64>,

    /// RNG stream selector for random seeds.
    #[arg(long)]
    pub rng_seed: Option<u64>,

    /// Number of low sine bands in random seeds.
    #[arg(long)]
    pub bands: Option<usize>,

    /// Profile document for spectrum (as written by the profile command).
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,

    /// Artifact destination; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub output_path: Option<PathBuf>,

    /// Artifact format.
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

/// Overlay explicit flags onto the file configuration (or the defaults).
pub fn resolve(cli: &Cli, file: Option<RunConfig>) -> RunConfig {
    let mut cfg = file.unwrap_or_default();
    if let Some(c) = cli.command {
        cfg.command = Some(c);
    }
    if let Some(n) = cli.n {
        cfg.n = Some(n);
    }
    if let Some(ell) = cli.ell {
        cfg.ell = Some(ell);
    }
    if let Some(count) = cli.count {
        cfg.count = count;
    }
    if let Some(v) = cli.ode_rel {
        cfg.tolerances.ode_rel = v;
    }
    if let Some(v) = cli.ode_abs {
        cfg.tolerances.ode_abs = v;
    }
    if let Some(v) = cli.match_tol {
        cfg.tolerances.match_tol = v;
    }
    if let Some(v) = cli.eig_tol {
        cfg.tolerances.eig_tol = v;
    }
    if let Some(sizes) = &cli.grid {
        cfg.grid.sizes = sizes.clone();
    }
    if let Some(v) = cli.delta {
        cfg.grid.delta = v;
    }
    if let Some(v) = cli.eps {
        cfg.grid.eps = v;
    }
    if let Some(v) = cli.sigma_max {
        cfg.evolve.sigma_max = v;
    }
    if let Some(v) = cli.cfl {
        cfg.evolve.cfl = v;
    }
    if let Some(v) = cli.emit_interval {
        cfg.evolve.emit_interval = Some(v);
    }
    if let Some(kind) = cli.seed {
        cfg.evolve.seed.kind = kind;
    }
    if let Some(j) = cli.mode_index {
        cfg.evolve.seed.mode_index = j;
    }
    if let Some(b) = cli.branch {
        cfg.evolve.seed.growing = matches!(b, Branch::Growing);
    }
    if let Some(a) = cli.amplitude {
        cfg.evolve.seed.amplitude = a;
    }
    if let Some(s) = cli.rng_seed {
        cfg.evolve.seed.rng_seed = s;
    }
    if let Some(b) = cli.bands {
        cfg.evolve.seed.bands = b;
    }
    if let Some(p) = &cli.input {
        cfg.input = Some(p.clone());
    }
    if let Some(p) = &cli.output_path {
        cfg.output.path = Some(p.clone());
    }
    if let Some(f) = cli.format {
        cfg.output.format = Some(f);
    }
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[test]
    fn defaults_validate_and_round_trip_through_json() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for doc in [
            r#"{"frobnicate": 1}"#,
            r#"{"tolerances": {"ode_rel": 1e-9, "extra": 2}}"#,
            r#"{"grid": {"szies": [256]}}"#,
            r#"{"evolve": {"seed": {"kid": "gauge"}}}"#,
            r#"{"output": {"dir": "x"}}"#,
        ] {
            let err = serde_json::from_str::<RunConfig>(doc).unwrap_err().to_string();
            assert!(err.contains("unknown field"), "{doc} -> {err}");
        }
        // Partial documents are fine: absent sections take defaults.
        let cfg: RunConfig = serde_json::from_str(r#"{"n": 2}"#).unwrap();
        assert_eq!(cfg.n, Some(2));
        assert_eq!(cfg.ell(), 1);
        assert_eq!(cfg.grid.sizes, vec![2048]);
    }

    #[test]
    fn command_names_serialize_kebab_case() {
        assert_eq!(
            serde_json::to_string(&CommandName::SpectrumInfty).unwrap(),
            r#""spectrum-infty""#
        );
        assert_eq!(
            serde_json::to_string(&CommandName::VerifyTable1).unwrap(),
            r#""verify-table1""#
        );
        let c: CommandName = serde_json::from_str(r#""verify-table1""#).unwrap();
        assert_eq!(c, CommandName::VerifyTable1);
    }

    #[test]
    fn flags_override_file_values_file_overrides_defaults() {
        let file: RunConfig = serde_json::from_str(
            r#"{"n": 2, "ell": 2, "evolve": {"sigma_max": 4.0}, "output": {"format": "csv"}}"#,
        )
        .unwrap();
        let cli = Cli::parse_from(["wavemaps", "spectrum", "--n", "3", "--cfl", "1.25"]);
        let cfg = resolve(&cli, Some(file));
        assert_eq!(cfg.command, Some(CommandName::Spectrum));
        assert_eq!(cfg.n, Some(3), "flag beats file");
        assert_eq!(cfg.ell, Some(2), "file beats default");
        assert_eq!(cfg.evolve.sigma_max, 4.0);
        assert_eq!(cfg.evolve.cfl, 1.25);
        assert_eq!(cfg.output.format(), OutputFormat::Csv);
        assert_eq!(cfg.tolerances, Tolerances::default());
    }

    #[test]
    fn validation_rejects_out_of_range_values() {
        let cfg = RunConfig { ell: Some(0), ..Default::default() };
        assert!(cfg.validate().unwrap_err().contains("ell"));

        let mut cfg = RunConfig::default();
        cfg.tolerances.eig_tol = 0.0;
        assert!(cfg.validate().unwrap_err().contains("eig_tol"));

        let mut cfg = RunConfig::default();
        cfg.evolve.cfl = 3.0;
        assert!(cfg.validate().unwrap_err().contains("cfl"));

        let mut cfg = RunConfig::default();
        cfg.grid.sizes.clear();
        assert!(cfg.validate().unwrap_err().contains("grid.sizes"));

        let mut cfg = RunConfig::default();
        cfg.evolve.rate_window = Some([5.0, 2.0]);
        assert!(cfg.validate().unwrap_err().contains("rate_window"));
    }
}
