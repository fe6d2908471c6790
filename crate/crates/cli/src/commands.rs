//! Command implementations: each resolves to an artifact on disk or stdout
//! plus an outcome deciding the exit status.

use crate::config::{CommandName, OutputConfig, OutputFormat, RunConfig, SeedKindName};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use std::fs;
use std::path::Path;
use wavemaps::evolution::{
    evolve_operator, growth_rate, trajectory_csv, DiscreteOperator, EvolveOptions, ModeSeed,
    Trajectory, TrajectoryStatus,
};
use wavemaps::infty::{eigenvalues_by_phase, PhaseOptions};
use wavemaps::profiles::{shoot_profile_with, Profile, ProfileDocument, ShootOptions};
use wavemaps::slp::{negative_spectrum, spectrum_csv, SlpOperator, SpectrumOptions};
use wavemaps::verify::{build_report, compute_column, table_columns, RateComparison};
use wavemaps::{EvolveError, InftyError, ProfileError, SlpError, VerifyError};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

/// Whether a completed run met every tolerance it was asked to meet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Met,
    Miss(String),
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Solver(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Solver(_) => "solver",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Solver(m) => m,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Solver(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind(), self.message())
    }
}

macro_rules! solver_error {
    ($($ty:ty),+) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Solver(e.to_string())
            }
        }
    )+};
}
solver_error!(ProfileError, SlpError, InftyError, EvolveError, VerifyError);

pub fn run(command: CommandName, cfg: &RunConfig) -> Result<Outcome, CliError> {
    if cfg.input.is_some() && command != CommandName::Spectrum {
        return Err(CliError::Config(
            "input is only consumed by the spectrum command".into(),
        ));
    }
    match command {
        CommandName::Profile => run_profile(cfg),
        CommandName::Spectrum => run_spectrum(cfg),
        CommandName::SpectrumInfty => run_spectrum_infty(cfg),
        CommandName::Evolve => run_evolve(cfg),
        CommandName::VerifyTable1 => run_verify(cfg),
    }
}

fn shoot_options(cfg: &RunConfig) -> ShootOptions {
    ShootOptions {
        eps: cfg.grid.eps.min(1e-6),
        ode_rel: cfg.tolerances.ode_rel,
        ode_abs: cfg.tolerances.ode_abs,
        ..ShootOptions::default()
    }
}

fn spectrum_options(cfg: &RunConfig, n: u32) -> SpectrumOptions {
    SpectrumOptions {
        mu_range: (0.5, mu_ceiling(n)),
        ode_rel: cfg.tolerances.ode_rel,
        ode_abs: cfg.tolerances.ode_abs,
        eps: cfg.grid.eps,
        build_eigenfunctions: false,
        ..SpectrumOptions::default()
    }
}

/// Scan ceiling with headroom above the top rate of the family; successive
/// rates grow by roughly one decade per index.
fn mu_ceiling(n: u32) -> f64 {
    8.0 * 11f64.powi(n.saturating_sub(1) as i32)
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| CliError::Io(format!("serialize: {e}")))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("create {}: {e}", parent.display())))?;
        }
    }
    fs::write(path, text).map_err(|e| CliError::Io(format!("write {}: {e}", path.display())))
}

fn write_artifact(output: &OutputConfig, text: &str) -> Result<(), CliError> {
    match &output.path {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- profile

fn profile_csv(doc: &ProfileDocument) -> String {
    let mut out = String::from("rho,f,fprime\n");
    for i in 0..doc.mesh.len() {
        out.push_str(&format!(
            "{:.17e},{:.17e},{:.17e}\n",
            doc.mesh[i], doc.f[i], doc.fprime[i]
        ));
    }
    out
}

fn run_profile(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let profile = shoot_profile_with(
        cfg.n(),
        cfg.ell(),
        cfg.tolerances.match_tol,
        &shoot_options(cfg),
    )?;
    let doc = profile.to_document();
    let text = match cfg.output.format() {
        OutputFormat::Json => to_json(&doc)?,
        OutputFormat::Csv => profile_csv(&doc),
    };
    write_artifact(&cfg.output, &text)?;
    Ok(Outcome::Met)
}

// ---------------------------------------------------------------- spectrum

#[derive(Serialize)]
struct SpectrumRow {
    /// Intersection index; null marks the limiting operator.
    n: Option<u32>,
    ell: u32,
    j: usize,
    lambda: f64,
    mu: f64,
    residual: Option<f64>,
}

#[derive(Serialize)]
struct SpectrumDocument {
    schema_version: u32,
    rows: Vec<SpectrumRow>,
}

fn load_profile(cfg: &RunConfig) -> Result<Profile, CliError> {
    match &cfg.input {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("read {}: {e}", path.display())))?;
            let doc: ProfileDocument = serde_json::from_str(&text).map_err(|e| {
                CliError::Config(format!("invalid profile document {}: {e}", path.display()))
            })?;
            if let Some(n) = cfg.n {
                if n != doc.n {
                    return Err(CliError::Config(format!(
                        "requested n = {n} but the input profile has n = {}",
                        doc.n
                    )));
                }
            }
            if let Some(ell) = cfg.ell {
                if ell != doc.ell {
                    return Err(CliError::Config(format!(
                        "requested ell = {ell} but the input profile has ell = {}",
                        doc.ell
                    )));
                }
            }
            Ok(Profile::from_document(doc)?)
        }
        None => Ok(shoot_profile_with(
            cfg.n(),
            cfg.ell(),
            cfg.tolerances.match_tol,
            &shoot_options(cfg),
        )?),
    }
}

fn run_spectrum(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let profile = load_profile(cfg)?;
    let (n, ell) = (profile.n, profile.ell);
    let op = SlpOperator::from_profile(profile);
    let records = negative_spectrum(&op, &spectrum_options(cfg, n))?;
    let text = match cfg.output.format() {
        OutputFormat::Csv => spectrum_csv(&records),
        OutputFormat::Json => to_json(&SpectrumDocument {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            rows: records
                .iter()
                .map(|r| SpectrumRow {
                    n: r.n,
                    ell: r.ell,
                    j: r.j,
                    lambda: r.lambda,
                    mu: r.mu,
                    residual: Some(r.wronskian_residual),
                })
                .collect(),
        })?,
    };
    write_artifact(&cfg.output, &text)?;
    // At ell = 1 the count of unstable modes is a theorem; finding anything
    // else means the scan missed its tolerance somewhere.
    if ell == 1 && records.len() != n as usize {
        return Ok(Outcome::Miss(format!(
            "found {} negative eigenvalues for the n = {n} profile, expected exactly {n}",
            records.len()
        )));
    }
    Ok(Outcome::Met)
}

fn run_spectrum_infty(cfg: &RunConfig) -> Result<Outcome, CliError> {
    if cfg.ell() != 1 {
        return Err(CliError::Config(
            "the limiting operator is built at ell = 1".into(),
        ));
    }
    let roots = eigenvalues_by_phase(cfg.count, &PhaseOptions::default())?;
    let text = match cfg.output.format() {
        OutputFormat::Csv => {
            let mut out = String::from("n,ell,j,lambda,mu,residual\n");
            for (i, &mu) in roots.mu.iter().enumerate() {
                out.push_str(&format!("inf,1,{},{:.15e},{:.15e},\n", i + 1, -mu * mu, mu));
            }
            out
        }
        OutputFormat::Json => to_json(&SpectrumDocument {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            rows: roots
                .mu
                .iter()
                .enumerate()
                .map(|(i, &mu)| SpectrumRow {
                    n: None,
                    ell: 1,
                    j: i + 1,
                    lambda: -mu * mu,
                    mu,
                    residual: None,
                })
                .collect(),
        })?,
    };
    write_artifact(&cfg.output, &text)?;
    if roots.truncated {
        return Ok(Outcome::Miss(format!(
            "phase scan exhausted its window after {} of {} requested rates",
            roots.mu.len(),
            cfg.count
        )));
    }
    Ok(Outcome::Met)
}

// ---------------------------------------------------------------- evolve

#[derive(Serialize)]
struct TrajectoryDocument<'a> {
    schema_version: u32,
    trajectory: &'a Trajectory,
}

fn build_seed(
    cfg: &RunConfig,
    dop: &DiscreteOperator,
    op: &SlpOperator,
    profile: &Profile,
) -> Result<(ModeSeed, Option<f64>), CliError> {
    let s = &cfg.evolve.seed;
    match s.kind {
        SeedKindName::Eigenmode => {
            let records = negative_spectrum(op, &spectrum_options(cfg, profile.n))?;
            if s.mode_index > records.len() {
                return Err(CliError::Config(format!(
                    "mode_index = {} but the n = {} operator has {} unstable modes",
                    s.mode_index,
                    profile.n,
                    records.len()
                )));
            }
            let rec = &records[s.mode_index - 1];
            let seed = ModeSeed::eigenmode(
                dop,
                rec.lambda,
                s.mode_index as u32,
                s.growing,
                s.amplitude,
            )?;
            Ok((seed, Some(rec.mu)))
        }
        SeedKindName::Gauge => Ok((ModeSeed::gauge(dop, profile, s.amplitude)?, None)),
        SeedKindName::Random => Ok((
            ModeSeed::random_smooth(dop, s.rng_seed, s.bands, s.amplitude)?,
            None,
        )),
    }
}

fn run_evolve(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let profile = shoot_profile_with(
        cfg.n(),
        cfg.ell(),
        cfg.tolerances.match_tol,
        &shoot_options(cfg),
    )?;
    let op = SlpOperator::from_profile(profile.clone());
    let grid = cfg.grid.sizes[0];
    let dop = DiscreteOperator::new(&op, grid, cfg.grid.delta)?;
    let (seed, reference_mu) = build_seed(cfg, &dop, &op, &profile)?;

    let sigma_max = cfg.evolve.sigma_max;
    let opts = EvolveOptions {
        delta: cfg.grid.delta,
        cfl: cfg.evolve.cfl,
        emit_interval: cfg.evolve.emit_interval,
        ..EvolveOptions::default()
    };
    let traj = evolve_operator(&dop, &seed, sigma_max, &opts)?;

    let text = match cfg.output.format() {
        OutputFormat::Csv => trajectory_csv(&traj),
        OutputFormat::Json => to_json(&TrajectoryDocument {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            trajectory: &traj,
        })?,
    };
    write_artifact(&cfg.output, &text)?;

    if let TrajectoryStatus::HaltedNonFinite { sigma } = traj.status {
        return Ok(Outcome::Miss(format!(
            "trajectory left the double range near sigma = {sigma}"
        )));
    }

    let window = cfg
        .evolve
        .rate_window
        .map(|[a, b]| (a, b))
        .unwrap_or((0.2 * sigma_max, 0.8 * sigma_max));
    let fitted = growth_rate(&traj, window)?;
    // Rates are reported in both time conventions: the evolution integrates
    // the rescaled variable phi~, while phi = e^sigma phi~ carries one extra
    // unit in the exponent.
    eprintln!(
        "fitted rate over sigma in [{:.4}, {:.4}]:\n  rescaled variable:  |phi~| ~ exp({:+.9} sigma)\n  original variable:  |phi|  ~ exp({:+.9} sigma)",
        window.0,
        window.1,
        fitted,
        1.0 + fitted,
    );

    match (s_kind(cfg), reference_mu) {
        (SeedKindName::Eigenmode, Some(mu)) => {
            let target = if cfg.evolve.seed.growing { mu } else { -mu };
            let rel = (fitted - target).abs() / mu;
            if rel > 0.01 {
                return Ok(Outcome::Miss(format!(
                    "fitted rate {fitted:.6} differs from the shooting rate {target:.6} by {:.2}%",
                    100.0 * rel
                )));
            }
            eprintln!(
                "  shooting rate {target:+.9}, relative deviation {:.2e}",
                rel
            );
            Ok(Outcome::Met)
        }
        (SeedKindName::Gauge, _) => {
            // The gauge direction is time independent up to truncation
            // effects; any substantial fitted rate means the edge is leaking.
            if fitted.abs() >= 0.5 {
                return Ok(Outcome::Miss(format!(
                    "gauge seed drifted at rate {fitted:.4}; expected a neutral direction"
                )));
            }
            Ok(Outcome::Met)
        }
        _ => Ok(Outcome::Met),
    }
}

fn s_kind(cfg: &RunConfig) -> SeedKindName {
    cfg.evolve.seed.kind
}

// ---------------------------------------------------------------- verify

#[derive(Serialize)]
struct VerifyDocument {
    schema_version: u32,
    rows: Vec<RateComparison>,
}

fn verify_csv(rows: &[RateComparison]) -> String {
    let mut out = String::from("column,j,printed,computed,error,tolerance,pass\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.15e},{:.3e},{:.1e},{}\n",
            r.column, r.j, r.printed, r.computed, r.error, r.tolerance, r.pass
        ));
    }
    out
}

fn run_verify(cfg: &RunConfig) -> Result<Outcome, CliError> {
    // Columns are independent; fan them out. Writing stays on this thread.
    let results: Vec<_> = table_columns()
        .into_par_iter()
        .map(|n| (n, compute_column(n)))
        .collect();
    let mut columns = Vec::with_capacity(results.len());
    for (n, r) in results {
        columns.push((n, r?));
    }
    let report = build_report(&columns)?;

    match (&cfg.output.path, cfg.output.format) {
        (None, None) => print!("{}", report.text()),
        (None, Some(OutputFormat::Json)) => print!(
            "{}",
            to_json(&VerifyDocument {
                schema_version: ARTIFACT_SCHEMA_VERSION,
                rows: report.rows.clone(),
            })?
        ),
        (None, Some(OutputFormat::Csv)) => print!("{}", verify_csv(&report.rows)),
        (Some(_), _) => {
            print!("{}", report.text());
            let text = match cfg.output.format() {
                OutputFormat::Json => to_json(&VerifyDocument {
                    schema_version: ARTIFACT_SCHEMA_VERSION,
                    rows: report.rows.clone(),
                })?,
                OutputFormat::Csv => verify_csv(&report.rows),
            };
            write_artifact(&cfg.output, &text)?;
        }
    }

    if report.all_pass() {
        Ok(Outcome::Met)
    } else {
        let misses: Vec<String> = report
            .failures()
            .iter()
            .map(|r| {
                format!(
                    "{} mu_{}: computed {:.9} vs printed {} +- {:.1e}",
                    r.column, r.j, r.computed, r.printed, r.tolerance
                )
            })
            .collect();
        Ok(Outcome::Miss(misses.join("; ")))
    }
}
