//! Run configuration and the `ergolab` subcommands.
//!
//! Every run is described by a JSON [`RunConfig`]; the config text is copied
//! verbatim into the output directory next to the artifacts it produced.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::averages::{
    average_series, divergence_report, event_sweep, geometric_checkpoints, write_series_csv,
    AveragesError, DivergenceReport, MilestoneSequence, SeriesPoint,
};
use crate::extension::{verify_conjugacy, verify_lemma2, ExtensionError, VerifyMode};
use crate::oracle::{gate_with_retry, mc_gaussian_orthant, mc_pair_integral_poisson, McConfig};
use crate::suspension::{
    cylinder_constant, gaussian_orthant, pair_integrand, SuspensionKind, SuspensionModel,
};
use crate::tower::{all_even_stages, ConstructionParams, Preset, StageTable, TowerError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Tower(#[from] TowerError),
    #[error(transparent)]
    Extension(#[from] ExtensionError),
    #[error(transparent)]
    Averages(#[from] AveragesError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        2
    }
}

/// Result of a subcommand that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    ClaimViolated,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::ClaimViolated => 1,
        }
    }

    fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Success
        } else {
            Outcome::ClaimViolated
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MarkerSpec {
    Keyword(String),
    List(Vec<u32>),
}

impl Default for MarkerSpec {
    fn default() -> Self {
        MarkerSpec::Keyword("all-even".to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Poisson,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub m: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Poisson,
            m: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub j: u32,
    /// `None` picks exhaustive for `j <= 2` and sampled above.
    pub mode: Option<VerifyMode>,
    pub grid_points: usize,
    pub conjugacy_n_max: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            j: 2,
            mode: None,
            grid_points: crate::extension::DEFAULT_GRID_POINTS,
            conjugacy_n_max: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preset: Preset,
    pub j_max: u32,
    pub marker_stages: MarkerSpec,
    pub model: ModelConfig,
    pub j_top: u32,
    pub checkpoint_ratio: f64,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub verify: VerifyConfig,
    pub mc_samples: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Basic,
            j_max: 9,
            marker_stages: MarkerSpec::default(),
            model: ModelConfig::default(),
            j_top: 3,
            checkpoint_ratio: 1.05,
            seed: 20_240_601,
            output_dir: None,
            verify: VerifyConfig::default(),
            mc_samples: 1_000_000,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn params(&self) -> Result<ConstructionParams, CliError> {
        if self.j_max == 0 {
            return Err(CliError::Config("j_max must be at least 1".into()));
        }
        let markers = match &self.marker_stages {
            MarkerSpec::Keyword(k) if k == "all-even" => all_even_stages(self.j_max),
            MarkerSpec::Keyword(k) => {
                return Err(CliError::Config(format!(
                    "marker_stages must be a list or \"all-even\", got {k:?}"
                )))
            }
            MarkerSpec::List(v) => v.iter().copied().collect(),
        };
        Ok(ConstructionParams::new(self.preset, self.j_max).with_markers(markers))
    }

    pub fn table(&self) -> Result<StageTable, CliError> {
        StageTable::build(&self.params()?).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn model(&self) -> Result<SuspensionModel, CliError> {
        match self.model.kind {
            ModelKind::Poisson if self.model.m == 0 => {
                Err(CliError::Config("model.m must be at least 1".into()))
            }
            ModelKind::Poisson => Ok(SuspensionModel::poisson(self.model.m)),
            ModelKind::Gaussian => Ok(SuspensionModel::gaussian()),
        }
    }

    fn check_series(&self) -> Result<(), CliError> {
        if self.j_top == 0 {
            return Err(CliError::Config("j_top must be at least 1".into()));
        }
        if !(self.checkpoint_ratio > 1.0 && self.checkpoint_ratio.is_finite()) {
            return Err(CliError::Config("checkpoint_ratio must exceed 1".into()));
        }
        if 2 * self.j_top + 2 > self.j_max {
            return Err(CliError::Config(format!(
                "j_top = {} needs j_max >= {}",
                self.j_top,
                2 * self.j_top + 2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Build,
    Verify,
    Series,
    Report,
    McCheck,
}

/// Loads the config (defaults when `config_text` is `None`), runs the
/// command and writes its artifacts under `out`.
pub fn run(
    command: Command,
    config_text: Option<&str>,
    out: Option<&Path>,
) -> Result<Outcome, CliError> {
    let config = match config_text {
        Some(text) => RunConfig::from_json(text)?,
        None => RunConfig::default(),
    };
    let out: PathBuf = out
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory (--out or output_dir)".into()))?;
    fs::create_dir_all(&out)?;
    let verbatim = match config_text {
        Some(text) => text.to_string(),
        None => serde_json::to_string_pretty(&config)? + "\n",
    };
    fs::write(out.join("config.json"), verbatim)?;

    match command {
        Command::Build => cmd_build(&config, &out),
        Command::Verify => cmd_verify(&config, &out),
        Command::Series => cmd_series(&config, &out, true),
        Command::Report => cmd_series(&config, &out, false),
        Command::McCheck => cmd_mc_check(&config, &out),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn cmd_build(config: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let table = config.table()?;
    write_json(&out.join("stages.json"), &table.to_json())?;
    let meta = json!({
        "preset": table.preset().name(),
        "j_max": table.j_max(),
        "marker_stages": table.marker_stages(),
        "cut_rule": "r_j = max(j, 2) unless overridden",
        "normalization": "w_1 = 1, mu(A) = 1",
    });
    write_json(&out.join("metadata.json"), &meta)?;
    info!("built {} stages", table.j_max());
    Ok(Outcome::Success)
}

pub fn cmd_verify(config: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let table = config.table()?;
    let j = config.verify.j;
    if j == 0 || !table.is_marker_stage(2 * j) || 2 * j + 2 > table.j_max() {
        return Err(CliError::Config(format!(
            "verify.j = {j} needs marker stage {} and j_max >= {}",
            2 * j,
            2 * j + 2
        )));
    }
    let mode = config.verify.mode.unwrap_or(if j <= 2 {
        VerifyMode::Exhaustive
    } else {
        VerifyMode::Sampled
    });

    let started = Instant::now();
    let lemma = verify_lemma2(&table, j, mode, config.verify.grid_points)?;
    info!(
        "lemma windows for j = {j} checked in {:?}",
        started.elapsed()
    );
    write_json(&out.join("lemma2.json"), &lemma)?;

    let started = Instant::now();
    let conj = verify_conjugacy(&table, config.verify.conjugacy_n_max)?;
    info!("conjugacy checked in {:?}", started.elapsed());
    write_json(&out.join("conjugacy.json"), &conj)?;

    for w in &lemma.windows {
        info!(
            "{:?} window ({}, {}): {} checked, {} violations",
            w.expect,
            w.window[0],
            w.window[1],
            w.checked_count,
            w.violations.len()
        );
    }
    let lemma_ok = !lemma.asserted || lemma.passed();
    Ok(Outcome::from_pass(lemma_ok && conj.passed()))
}

/// The full series computation shared by `series` and `report`.
pub fn compute_series(
    config: &RunConfig,
) -> Result<(Vec<SeriesPoint>, MilestoneSequence, DivergenceReport), CliError> {
    config.check_series()?;
    let table = config.table()?;
    let model = config.model()?;
    let milestones = MilestoneSequence::new(&table, config.j_top)?;
    let n_max = milestones.last();

    let started = Instant::now();
    let profile = event_sweep(&table, n_max)?;
    info!(
        "swept {} fragments at stage {}: {} breakpoints in {:?}",
        profile.fragments,
        profile.stage,
        profile.breakpoints.len(),
        started.elapsed()
    );
    let checkpoints = geometric_checkpoints(n_max, config.checkpoint_ratio, &milestones);
    let series = average_series(&model, &profile, &checkpoints, &milestones)?;
    let report = divergence_report(&series, &milestones, &model, &table);
    Ok((series, milestones, report))
}

pub fn cmd_series(config: &RunConfig, out: &Path, with_csv: bool) -> Result<Outcome, CliError> {
    let (series, milestones, report) = compute_series(config)?;
    if with_csv {
        let mut f = BufWriter::new(File::create(out.join("series.csv"))?);
        write_series_csv(&series, &mut f)?;
        f.flush()?;
    }
    let doc = json!({
        "config": config,
        "milestones": milestones,
        "divergence": report,
    });
    write_json(&out.join("report.json"), &doc)?;
    Ok(Outcome::from_pass(
        report.passed() && report.all_within_bracket,
    ))
}

#[derive(Debug, Clone, Serialize)]
struct McRow {
    label: String,
    exact: f64,
    passed: bool,
    attempts: Vec<crate::oracle::McEstimate>,
}

pub fn cmd_mc_check(config: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    if config.mc_samples == 0 {
        return Err(CliError::Config("mc_samples must be at least 1".into()));
    }
    // The Poisson rows use the configured cylinder count (1 for gaussian runs).
    let m = match config.model()?.kind() {
        SuspensionKind::Poisson { m } => m,
        SuspensionKind::Gaussian => 1,
    };
    let cfg = McConfig::new(config.seed, config.mc_samples);
    let poisson = SuspensionModel::poisson(m);
    let c = cylinder_constant(&poisson);

    let mut rows = Vec::new();
    for (label, halves) in [("coincide", 2), ("independent", 0), ("partial", 1)] {
        let lam_q = BigRational::new(BigInt::from(halves), BigInt::from(2));
        let lam = halves as f64 / 2.0;
        let exact = pair_integrand(&poisson, &lam_q).expect("overlap in range");
        let g = gate_with_retry(exact, &cfg, |c| mc_pair_integral_poisson(lam, 1.0, m, c));
        rows.push(McRow {
            label: format!("poisson m={m} overlap={lam} ({label})"),
            exact: g.exact,
            passed: g.passed,
            attempts: g.attempts,
        });
    }
    for rho in [0.0, 0.5, 1.0] {
        let exact = gaussian_orthant(rho);
        let g = gate_with_retry(exact, &cfg, |c| mc_gaussian_orthant(rho, c));
        rows.push(McRow {
            label: format!("gaussian rho={rho}"),
            exact: g.exact,
            passed: g.passed,
            attempts: g.attempts,
        });
    }

    let mut log = String::new();
    writeln!(
        log,
        "mc-check seed={} samples={} c={c}",
        config.seed, config.mc_samples
    )
    .unwrap();
    for r in &rows {
        let last = r.attempts.last().expect("one attempt");
        writeln!(
            log,
            "{} {}: exact={} estimate={} se={} attempts={}",
            if r.passed { "PASS" } else { "FAIL" },
            r.label,
            r.exact,
            last.estimate,
            last.std_error,
            r.attempts.len()
        )
        .unwrap();
    }
    print!("{log}");
    fs::write(out.join("mc_check.log"), &log)?;
    write_json(&out.join("mc_check.json"), &rows)?;
    Ok(Outcome::from_pass(rows.iter().all(|r| r.passed)))
}
