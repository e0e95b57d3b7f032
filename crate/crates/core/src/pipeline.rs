//! Config-driven staged runs with flat-file artifacts and a run manifest.
//!
//! Every stage reads its predecessors' files from the output directory and
//! writes its own, so stages can be run one by one or all at once with the
//! same result.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{self, DataError, LatentDynamics, Panel, Variable, VariableSpec};
use crate::markov::{self, fixtures, Fallback, LabeledObservation, MeanChain, TransitionTensor};
use crate::matrix::{read_matrix_csv, write_matrix_csv};
use crate::mca::{self, AxisRule, McaSummary};
use crate::report;
use crate::som::{self, Kernel, Schedule, SomMeta, SomModel, Topology};
use crate::stats::derive_seed;
use crate::trajectory::{self, ClassReport, ClassifyOptions, ReorderMap};
use crate::ward::{self, Segmentation, VariableProfile};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },
    #[error("missing artifact {path} (run stage `{stage}` first)")]
    MissingArtifact { stage: String, path: PathBuf },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed artifact {path}: {reason}")]
    Artifact { path: PathBuf, reason: String },
}

impl PipelineError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::ConfigInvalid { .. } | PipelineError::Data(_) => 2,
            PipelineError::MissingArtifact { .. } => 3,
            PipelineError::Numeric(_) => 4,
            PipelineError::Io { .. } | PipelineError::Artifact { .. } => 1,
        }
    }
}

fn config_err(field: &str, reason: impl Into<String>) -> PipelineError {
    PipelineError::ConfigInvalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn numeric(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Numeric(e.to_string())
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub strict: bool,
    /// Number of segments.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_min_consecutive")]
    pub min_consecutive: usize,
    pub input: InputConfig,
    #[serde(default)]
    pub spec: SpecConfig,
    #[serde(default)]
    pub mca: McaConfig,
    #[serde(default)]
    pub som: SomConfig,
    #[serde(default)]
    pub markov: MarkovConfig,
    #[serde(default)]
    pub trajectory: TrajectoryConfig,
}

fn default_seed() -> u64 {
    1990
}
fn default_k() -> usize {
    7
}
fn default_min_consecutive() -> usize {
    3
}

/// Exactly one of `csv` or `synthetic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub csv: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_individuals: usize,
    #[serde(default = "default_first_year")]
    pub first_year: i32,
    #[serde(default = "default_last_year")]
    pub last_year: i32,
    /// Probability of the dominant modality in each planted profile.
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Base latent chain: `reference` (bundled 7-segment matrix) or `sticky`.
    #[serde(default = "default_base")]
    pub base: String,
    /// Strength of the year-to-year modulation of the base chain.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_first_year() -> i32 {
    1990
}
fn default_last_year() -> i32 {
    2002
}
fn default_separation() -> f64 {
    0.85
}
fn default_base() -> String {
    "reference".into()
}
fn default_amplitude() -> f64 {
    0.15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    /// `emploi` (22 active variables, 99 modalities) when no variables given.
    pub preset: Option<String>,
    pub variables: Option<Vec<Variable>>,
}

impl SpecConfig {
    pub fn build(&self) -> Result<VariableSpec, PipelineError> {
        match (&self.preset, &self.variables) {
            (Some(_), Some(_)) => Err(config_err("spec", "give either preset or variables")),
            (None, Some(vars)) => VariableSpec::new(vars.clone()).map_err(|e| config_err("spec.variables", e.to_string())),
            (Some(p), None) if p != "emploi" => Err(config_err("spec.preset", format!("unknown preset `{p}`"))),
            _ => Ok(VariableSpec::emploi_default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McaConfig {
    /// `"auto"` or a fixed axis count.
    #[serde(default = "default_axes")]
    pub axes: AxesSetting,
    /// Feed the map unit-variance coordinates instead of principal ones.
    #[serde(default)]
    pub standardize: bool,
}

fn default_axes() -> AxesSetting {
    AxesSetting::Named("auto".into())
}

impl Default for McaConfig {
    fn default() -> Self {
        Self {
            axes: default_axes(),
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxesSetting {
    Fixed(usize),
    Named(String),
}

impl AxesSetting {
    fn rule(&self) -> Result<AxisRule, PipelineError> {
        match self {
            AxesSetting::Fixed(k) => Ok(AxisRule::Fixed(*k)),
            AxesSetting::Named(s) if s == "auto" => Ok(AxisRule::Auto),
            AxesSetting::Named(s) => Err(config_err("mca.axes", format!("expected \"auto\" or a count, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SomConfig {
    #[serde(default = "default_side")]
    pub rows: usize,
    #[serde(default = "default_side")]
    pub cols: usize,
    /// Online steps; defaults to five per observation.
    pub iterations: Option<u64>,
    #[serde(default = "default_rate_start")]
    pub rate_start: f64,
    #[serde(default = "default_rate_end")]
    pub rate_end: f64,
    /// Defaults to half the lattice diameter.
    pub radius_start: Option<f64>,
    #[serde(default)]
    pub radius_end: f64,
    #[serde(default)]
    pub kernel: Kernel,
}

fn default_side() -> usize {
    8
}
fn default_rate_start() -> f64 {
    0.5
}
fn default_rate_end() -> f64 {
    0.01
}

impl Default for SomConfig {
    fn default() -> Self {
        Self {
            rows: 8,
            cols: 8,
            iterations: None,
            rate_start: 0.5,
            rate_end: 0.01,
            radius_start: None,
            radius_end: 0.0,
            kernel: Kernel::Bubble,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovConfig {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    /// Add-alpha smoothing applied before simulation (0 = plain MLE).
    #[serde(default)]
    pub smoothing: f64,
}

fn default_paths() -> usize {
    100_000
}

impl Default for MarkovConfig {
    fn default() -> Self {
        Self {
            n_paths: default_paths(),
            smoothing: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    #[serde(default = "default_units")]
    pub units: usize,
    /// 1-based scale position of each segment; identity when absent.
    pub reorder: Option<Vec<usize>>,
}

fn default_units() -> usize {
    10
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            units: 10,
            reorder: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| config_err("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| config_err("config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k < 1 {
            return Err(config_err("k", "must be at least 1"));
        }
        if self.min_consecutive < 1 {
            return Err(config_err("min_consecutive", "must be at least 1"));
        }
        match (&self.input.csv, &self.input.synthetic) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(config_err("input", "set exactly one of `csv` or `synthetic`"))
            }
            (None, Some(s)) => {
                if s.last_year - s.first_year < data::WINDOW_YEARS - 1 {
                    return Err(config_err("input.synthetic.last_year", "range shorter than a window"));
                }
                if !(0.0..=1.0).contains(&s.separation) {
                    return Err(config_err("input.synthetic.separation", "must lie in [0, 1]"));
                }
                if !(0.0..=1.0).contains(&s.amplitude) {
                    return Err(config_err("input.synthetic.amplitude", "must lie in [0, 1]"));
                }
                if s.base == "reference" && self.k != 7 {
                    return Err(config_err("input.synthetic.base", "the reference chain needs k = 7"));
                }
                if s.base != "reference" && s.base != "sticky" {
                    return Err(config_err("input.synthetic.base", format!("unknown base `{}`", s.base)));
                }
            }
            (Some(_), None) => {}
        }
        self.spec.build()?;
        self.mca.axes.rule()?;
        if self.som.rows * self.som.cols < self.k {
            return Err(config_err("som", "fewer map units than segments"));
        }
        if self.trajectory.units == 0 {
            return Err(config_err("trajectory.units", "must be positive"));
        }
        if let Some(r) = &self.trajectory.reorder {
            if r.len() != self.k {
                return Err(config_err("trajectory.reorder", "must list k positions"));
            }
            reorder_map(r)?;
        }
        if self.markov.smoothing < 0.0 {
            return Err(config_err("markov.smoothing", "must be non-negative"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML serialization. The output directory is
    /// left out so that the same run in two places hashes alike.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let text = toml::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn reorder(&self) -> Result<ReorderMap, PipelineError> {
        match &self.trajectory.reorder {
            Some(r) => reorder_map(r),
            None => Ok(ReorderMap::identity(self.k)),
        }
    }
}

fn reorder_map(positions: &[usize]) -> Result<ReorderMap, PipelineError> {
    let zero_based = positions
        .iter()
        .map(|&p| p.checked_sub(1).ok_or_else(|| config_err("trajectory.reorder", "positions are 1-based")))
        .collect::<Result<Vec<_>, _>>()?;
    ReorderMap::new(zero_based).map_err(|e| config_err("trajectory.reorder", e.to_string()))
}

// ---------------------------------------------------------------------------
// Synthetic latent process

/// Latent segment process used for synthetic runs. Year `n` uses
/// `(1 − ε_n) B + ε_n D`, where `B` is the base chain, every row of `D`
/// moves into the last three segments, and `ε_n` follows an eight-year
/// cycle scaled by `amplitude`.
pub fn synthetic_latent(spec: &VariableSpec, k: usize, cfg: &SyntheticConfig, seed: u64) -> LatentDynamics {
    let base = match cfg.base.as_str() {
        "reference" => MeanChain::from_matrix(&fixtures::mean_chain_percent()).expect("bundled table is valid").p,
        _ => sticky_chain(k, 0.8),
    };
    let initial = if cfg.base == "reference" {
        fixtures::segment_shares()
    } else {
        vec![1.0 / k as f64; k]
    };
    let tail = k.min(3);
    let mut downturn = Array2::zeros((k, k));
    for i in 0..k {
        for j in k - tail..k {
            downturn[[i, j]] = 1.0 / tail as f64;
        }
    }
    let transitions = (0..(cfg.last_year - cfg.first_year) as usize)
        .map(|n| {
            let phase = std::f64::consts::TAU * n as f64 / 8.0;
            let eps = cfg.amplitude * 0.5 * (1.0 + phase.sin());
            &base * (1.0 - eps) + &downturn * eps
        })
        .collect();
    LatentDynamics::planted(spec, cfg.first_year, initial, transitions, cfg.separation, seed)
}

/// Self-transition probability `stay`, the rest spread evenly.
pub fn sticky_chain(k: usize, stay: f64) -> Array2<f64> {
    if k == 1 {
        return Array2::ones((1, 1));
    }
    Array2::from_shape_fn((k, k), |(i, j)| if i == j { stay } else { (1.0 - stay) / (k - 1) as f64 })
}

// ---------------------------------------------------------------------------
// Stages

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Generate,
    Ingest,
    Mca,
    SomTrain,
    Segment,
    Estimate,
    TestHomogeneity,
    Simulate,
    MeanChain,
    Limit,
    Classify,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 12] = [
        Stage::Generate,
        Stage::Ingest,
        Stage::Mca,
        Stage::SomTrain,
        Stage::Segment,
        Stage::Estimate,
        Stage::TestHomogeneity,
        Stage::Simulate,
        Stage::MeanChain,
        Stage::Limit,
        Stage::Classify,
        Stage::Report,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Ingest => "ingest",
            Stage::Mca => "mca",
            Stage::SomTrain => "som",
            Stage::Segment => "segment",
            Stage::Estimate => "estimate",
            Stage::TestHomogeneity => "test-homogeneity",
            Stage::Simulate => "simulate",
            Stage::MeanChain => "mean-chain",
            Stage::Limit => "limit",
            Stage::Classify => "classify",
            Stage::Report => "report",
        }
    }

    fn seed_stream(&self) -> u64 {
        *self as u64 + 1
    }
}

/// Files written by one stage, with content hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub artifacts: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    pub duration_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

pub const MANIFEST: &str = "manifest.json";

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    dir: &'a Path,
    inputs: BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
}

impl<'a> Ctx<'a> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Reads an artifact produced by `stage`, recording its hash.
    fn read(&mut self, name: &str, stage: Stage) -> Result<Vec<u8>, PipelineError> {
        let path = self.path(name);
        match fs::read(&path) {
            Ok(bytes) => {
                self.inputs.insert(name.to_string(), sha256(&bytes));
                Ok(bytes)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(PipelineError::MissingArtifact {
                stage: stage.name().to_string(),
                path,
            }),
            Err(source) => Err(PipelineError::Io { path, source }),
        }
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&mut self, name: &str, stage: Stage) -> Result<T, PipelineError> {
        let bytes = self.read(name, stage)?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::Artifact {
            path: self.path(name),
            reason: e.to_string(),
        })
    }

    fn read_matrix(&mut self, name: &str, stage: Stage) -> Result<Array2<f64>, PipelineError> {
        let bytes = self.read(name, stage)?;
        read_matrix_csv(bytes.as_slice())
            .map(|(_, m)| m)
            .map_err(|reason| PipelineError::Artifact {
                path: self.path(name),
                reason,
            })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::write(&path, bytes).map_err(|source| PipelineError::Io { path, source })?;
        self.artifacts.insert(name.to_string(), sha256(bytes));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), PipelineError> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write_matrix(&mut self, name: &str, m: &Array2<f64>, header: &[String]) -> Result<(), PipelineError> {
        let mut buf = Vec::new();
        write_matrix_csv(m, header, &mut buf).map_err(|e| PipelineError::Artifact {
            path: self.path(name),
            reason: e.to_string(),
        })?;
        self.write(name, &buf)
    }

    fn panel(&mut self) -> Result<Panel, PipelineError> {
        let spec = self.cfg.spec.build()?;
        let bytes = self.read("panel.csv", Stage::Ingest)?;
        Ok(data::read_csv(bytes.as_slice(), &spec)?)
    }

    fn seed(&self, stage: Stage) -> u64 {
        derive_seed(self.cfg.seed, stage.seed_stream())
    }
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Outcome of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub record: StageRecord,
    /// Human-readable summary for the console.
    pub summary: String,
}

/// Runs a single stage and records it in the manifest.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    cfg.validate()?;
    let dir = cfg.out_dir.as_path();
    fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut ctx = Ctx {
        cfg,
        dir,
        inputs: BTreeMap::new(),
        artifacts: BTreeMap::new(),
    };
    let started = Instant::now();
    let summary = match stage {
        Stage::Generate => stage_generate(&mut ctx)?,
        Stage::Ingest => stage_ingest(&mut ctx)?,
        Stage::Mca => stage_mca(&mut ctx)?,
        Stage::SomTrain => stage_som(&mut ctx)?,
        Stage::Segment => stage_segment(&mut ctx)?,
        Stage::Estimate => stage_estimate(&mut ctx)?,
        Stage::TestHomogeneity => stage_homogeneity(&mut ctx)?,
        Stage::Simulate => stage_simulate(&mut ctx)?,
        Stage::MeanChain => stage_mean_chain(&mut ctx)?,
        Stage::Limit => stage_limit(&mut ctx)?,
        Stage::Classify => stage_classify(&mut ctx)?,
        Stage::Report => stage_report(&mut ctx)?,
    };
    let record = StageRecord {
        artifacts: std::mem::take(&mut ctx.artifacts),
        inputs: std::mem::take(&mut ctx.inputs),
        seed: ctx.seed(stage),
        duration_ms: started.elapsed().as_millis(),
    };
    update_manifest(cfg, stage, &record)?;
    Ok(StageOutcome { stage, record, summary })
}

/// Runs every stage in order; `generate` only for synthetic input.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<StageOutcome>, PipelineError> {
    Stage::ALL
        .iter()
        .filter(|s| **s != Stage::Generate || cfg.input.synthetic.is_some())
        .map(|&s| run_stage(s, cfg))
        .collect()
}

fn update_manifest(cfg: &PipelineConfig, stage: Stage, record: &StageRecord) -> Result<(), PipelineError> {
    let path = cfg.out_dir.join(MANIFEST);
    let hash = cfg.hash();
    let mut manifest: Manifest = fs::read(&path)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .filter(|m: &Manifest| m.config_hash == hash)
        .unwrap_or_default();
    manifest.config_hash = hash;
    manifest.seed = cfg.seed;
    manifest.stages.insert(stage.name().to_string(), record.clone());
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|source| PipelineError::Io { path, source })
}

fn stage_generate(ctx: &mut Ctx) -> Result<String, PipelineError> {
    let Some(syn) = ctx.cfg.input.synthetic.clone() else {
        return Err(config_err("input.synthetic", "generate needs a synthetic input block"));
    };
    let spec = ctx.cfg.spec.build()?;
    let seed = ctx.seed(Stage::Generate);
    let latent = synthetic_latent(&spec, ctx.cfg.k, &syn, derive_seed(seed, 0));
    let out = data::generate_synthetic_panel(seed, syn.n_individuals, syn.first_year, syn.last_year, &spec, &latent)?;
    let mut buf = Vec::new();
    data::write_csv(&out.panel, &mut buf)?;
    ctx.write("synthetic_panel.csv", &buf)?;

    let mut wtr = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| PipelineError::Artifact {
        path: PathBuf::from("latent_states.csv"),
        reason: e.to_string(),
    };
    wtr.write_record(["id", "year", "latent"]).map_err(csv_err)?;
    for (rec, s) in out.panel.records().iter().zip(&out.latent) {
        wtr.write_record([rec.individual_id.clone(), rec.year.to_string(), (s + 1).to_string()])
            .map_err(csv_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| PipelineError::Artifact {
        path: PathBuf::from("latent_states.csv"),
        reason: e.to_string(),
    })?;
    ctx.write("latent_states.csv", &bytes)?;
    ctx.write_json(
        "latent_transitions.json",
        &serde_json::json!({
            "first_year": latent.first_year,
            "initial": latent.initial,
            "transitions": latent.transitions.iter().map(crate::matrix::to_rows).collect::<Vec<_>>(),
        }),
    )?;
    Ok(format!(
        "generated {} records for {} individuals",
        out.panel.len(),
        syn.n_individuals
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct IngestSummary {
    records: usize,
    individuals: usize,
    dropped_records: usize,
    first_year: i32,
    last_year: i32,
}

fn stage_ingest(ctx: &mut Ctx) -> Result<String, PipelineError> {
    let spec = ctx.cfg.spec.build()?;
    let raw = match &ctx.cfg.input.csv {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| config_err("input.csv", format!("{}: {e}", path.display())))?;
            ctx.inputs.insert(path.display().to_string(), sha256(&bytes));
            data::read_csv(bytes.as_slice(), &spec)?
        }
        None => {
            let bytes = ctx.read("synthetic_panel.csv", Stage::Generate)?;
            data::read_csv(bytes.as_slice(), &spec)?
        }
    };
    let panel = data::filter_panel(&raw, ctx.cfg.min_consecutive);
    let Some((first_year, last_year)) = panel.year_range() else {
        return Err(numeric("no individual survives the consecutive-years filter"));
    };
    let mut buf = Vec::new();
    data::write_csv(&panel, &mut buf)?;
    ctx.write("panel.csv", &buf)?;
    let summary = IngestSummary {
        records: panel.len(),
        individuals: panel.individuals().len(),
        dropped_records: raw.len() - panel.len(),
        first_year,
        last_year,
    };
    ctx.write_json("ingest.json", &summary)?;
    Ok(format!(
        "{} records, {} individuals, {}–{}",
        summary.records, summary.individuals, first_year, last_year
    ))
}

fn stage_mca(ctx: &mut Ctx) -> Result<String, PipelineError> {
    let panel = ctx.panel()?;
    let indicator = mca::build_indicator(&panel).map_err(numeric)?;
    let scores = mca::mca_fit(&indicator, ctx.cfg.mca.axes.rule()?).map_err(numeric)?;
    let header: Vec<String> = (1..=scores.k()).map(|a| format!("F{a}")).collect();
    ctx.write_json("mca.json", &scores.summary())?;
    ctx.write_matrix("mca_coordinates.csv", &scores.coordinates, &header)?;
    Ok(format!(
        "{} axes retained, total inertia {:.4}",
        scores.k(),
        scores.total_inertia
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct SomArtifact {
    #[serde(flatten)]
    meta: SomMeta,
    standardized_input: bool,
    initial_quantization_error: f64,
    quantization_error: f64,
    topographic_error: f64,
    unit_counts: Vec<usize>,
}

fn stage_som(ctx: &mut Ctx) -> Result<String, PipelineError> {
    let summary: McaSummary = ctx.read_json("mca.json", Stage::Mca)?;
    let mut coords = ctx.read_matrix("mca_coordinates.csv", Stage::Mca)?;
    if coords.ncols() == 0 {
        return Err(numeric("no factor axes to train on"));
    }
    if ctx.cfg.mca.standardize {
        for (mut col, &lambda) in coords.axis_iter_mut(Axis(1)).zip(&summary.eigenvalues) {
            col.mapv_inplace(|x| x / lambda.sqrt());
        }
    }
    let sc = &ctx.cfg.som;
    let topology = Topology::grid(sc.rows, sc.cols);
    let seed = ctx.seed(Stage::SomTrain);
    let init = som::som_init(topology, coords.view(), seed).map_err(numeric)?;
    let schedule = Schedule {
        iterations: sc.iterations.unwrap_or(5 * coords.nrows() as u64),
        rate_start: sc.rate_start,
        rate_end: sc.rate_end,
        radius_start: sc.radius_start.unwrap_or(topology.diameter() as f64 / 2.0),
        radius_end: sc.radius_end,
        kernel: sc.kernel,
    };
    let init = init.with_schedule(schedule);
    let initial_qe = som::quantization_error(&init, coords.view()).map_err(numeric)?;
    let model = som::som_train(&init, coords.view()).map_err(numeric)?;
    let qe = som::quantization_error(&model, coords.view()).map_err(numeric)?;
    let te = som::topographic_error(&model, coords.view()).map_err(numeric)?;
    let labels = som::assign(&model, coords.view()).map_err(numeric)?;
    let mut unit_counts = vec![0usize; topology.unit_count()];
    for &u in &labels {
        unit_counts[u] += 1;
    }
    let empty = unit_counts.iter().filter(|&&c| c == 0).count();
    ctx.write_json(
        "som.json",
        &SomArtifact {
            meta: model.meta(),
            standardized_input: ctx.cfg.mca.standardize,
            initial_quantization_error: initial_qe,
            quantization_error: qe,
            topographic_error: te,
            unit_counts,
        },
    )?;
    let header: Vec<String> = (1..=model.dim()).map(|a| format!("F{a}")).collect();
    ctx.write_matrix("som_codes.csv", &model.codes, &header)?;
    let assignments = Array2::from_shape_fn((labels.len(), 1), |(r, _)| labels[r] as f64);
    ctx.write_matrix("som_assignments.csv", &assignments, &["unit".to_string()])?;
    Ok(format!(
        "QE {initial_qe:.4} -> {qe:.4}, TE {te:.4}, {empty} empty unit(s)"
    ))
}

fn read_som(ctx: &mut Ctx) -> Result<(SomArtifact, SomModel, Vec<usize>), PipelineError> {
    let artifact: SomArtifact = ctx.read_json("som.json", Stage::SomTrain)?;
    let codes = ctx.read_matrix("som_codes.csv", Stage::SomTrain)?;
    let model = SomModel::from_parts(artifact.meta.clone(), codes).map_err(numeric)?;
    let labels = ctx
        .read_matrix("som_assignments.csv", Stage::SomTrain)?
        .column(0)
        .iter()
        .map(|&u| u as usize)
        .collect();
    Ok((artifact, model, labels))
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentationArtifact {
    #[serde(flatten)]
    segmentation: Segmentation,
    contiguity: f64,
    segment_sizes: Vec<u64>,
}

fn stage_segment(ctx: &mut Ctx) -> Result<String, PipelineError> {
    let (artifact, model, labels) = read_som(ctx)?;
    let panel = ctx.panel()?;
    if labels.len() != panel.len() {
        return Err(PipelineError::Artifact {
            path: ctx.path("som_assignments.csv"),
            reason: format!("{} assignments for {} records", labels.len(), panel.len()),
        });
    }
    let weights: Vec<f64> = artifact.unit_counts.iter().map(|&c| c as f64).collect();
    let dendrogram = ward::ward_cluster(model.codes.view(), &weights).map_err(numeric)?;
    let segmentation = ward::cut(&dendrogram, ctx.cfg.k).map_err(numeric)?;
    let profiles = ward::profile_segments(&segmentation, &panel, &labels).map_err(numeric)?;
    let contiguity = ward::contiguity_score(&segmentation, &model.topology);
    ctx.write_json("dendrogram.json", &dendrogram)?;
    let sizes: Vec<u64> = profiles.iter().map(|p| p.members).collect();
    ctx.write_json(
        "segmentation.json",
        &SegmentationArtifact {
            segmentation: segmentation.clone(),
            contiguity,
            segment_sizes: sizes.clone(),
        },
    )?;

    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut rows = vec![vec!["id".to_string(), "year".into(), "unit".into(), "segment".into()]];
    for (rec, &u) in panel.records().iter().zip(&labels) {
        let s = segmentation.segment_of(u, model.codes.view());
        rows.push(vec![rec.individual_id.clone(), rec.year.to_string(), (u + 1).to_string(), s.to_string()]);
    }
    for r in &rows {
        wtr.write_record(r).map_err(numeric)?;
    }
    ctx.write("segment_labels.csv", &wtr.into_inner().map_err(numeric)?)?;

    // One table per variable: segment, members, then modality shares or
    // numeric summaries.
    let n_vars = profiles.first().map_or(0, |p| p.variables.len());
    for v in 0..n_vars {
        let name = profiles[0].variables[v].0.clone();
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["segment".to_string(), "members".to_string(), "empty".to_string()];
        match &profiles[0].variables[v].1 {
            VariableProfile::Categorical { counts, .. } => {
                header.extend((1..=counts.len()).map(|m| format!("m{m}")));
                header.push("missing".into());
            }
            VariableProfile::Numeric { .. } => {
                header.extend(["count", "mean", "sd", "missing"].map(String::from));
            }
        }
        wtr.write_record(&header).map_err(numeric)?;
        for p in &profiles {
            let mut row = vec![p.segment.to_string(), p.members.to_string(), p.empty.to_string()];
            match &p.variables[v].1 {
                prof @ VariableProfile::Categorical { missing, .. } => {
                    row.extend(prof.frequencies().unwrap_or_default().iter().map(|f| f.to_string()));
                    row.push(missing.to_string());
                }
                VariableProfile::Numeric { count, mean, sd, missing } => {
                    row.extend([count.to_string(), mean.to_string(), sd.to_string(), missing.to_string()]);
                }
            }
            wtr.write_record(&row).map_err(numeric)?;
        }
        ctx.write(&format!("profiles/{name}.csv"), &wtr.into_inner().map_err(numeric)?)?;
    }
    Ok(format!("segment sizes {sizes:?}, contiguity {contiguity:.2}"))
}

fn read_labels(ctx: &mut Ctx) -> Result<Vec<LabeledObservation>, PipelineError> {
    let bytes = ctx.read("segment_labels.csv", Stage::Segment)?;
    let path = ctx.path("segment_labels.csv");
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| PipelineError::Artifact {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let bad = || PipelineError::Artifact {
            path: path.clone(),
            reason: "malformed row".into(),
        };
        let year = rec.get(1).and_then(|y| y.parse().ok()).ok_or_else(bad)?;
        let segment: usize = rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        out.push(LabeledObservation {
            individual_id: rec.get(0).ok_or_else(bad)?.to_string(),
            year,
            segment: segment.checked_sub(1).ok_or_else(bad)?,
        });
    }
    Ok(out)
}

fn year_span(labels: &[LabeledObservation]) -> Result<(i32, i32), PipelineError> {
    let first = labels.iter().map(|o| o.year).min();
    let last = labels.iter().map(|o| o.year).max();
    first.zip(last).ok_or_else(|| numeric("no labelled observations"))
}

fn stage_estimate(ctx: &mut Ctx) -> Result<String, PipelineError> {
    let labels = read_labels(ctx)?;
    let (first, last) = year_span(&labels)?;
    let tensor = markov::estimate_transitions(&labels, ctx.cfg.k, first, last).map_err(numeric)?;
    let unobserved: usize = tensor.observed.iter().flatten().filter(|o| !**o).count();
    ctx.write_json("transitions.json", &tensor)?;
    Ok(format!(
        "{} year pairs, {} transitions, {unobserved} unobserved row(s)",
        tensor.pairs(),
        tensor.pooled_counts().sum()
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct AdjacentTest {
    year: i32,
    statistic: Option<f64>,
    df: Option<usize>,
    p_value: Option<f64>,
    error: Option<String>,
}

fn stage_homogeneity(ctx: &mut Ctx) -> Result<String, PipelineError> {
    let tensor: TransitionTensor = ctx.read_json("transitions.json", Stage::Estimate)?;
    let overall = markov::homogeneity_test(&tensor).map_err(numeric)?;
    let adjacent: Vec<AdjacentTest> = markov::adjacent_homogeneity_tests(&tensor)
        .into_iter()
        .map(|(year, r)| match r {
            Ok(t) => AdjacentTest {
                year,
                statistic: Some(t.statistic),
                df: Some(t.df),
                p_value: Some(t.p_value),
                error: None,
            },
            Err(e) => AdjacentTest {
                year,
                statistic: None,
                df: None,
                p_value: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    ctx.write_json("homogeneity.json", &serde_json::json!({ "overall": overall, "adjacent": adjacent }))?;
    Ok(format!(
        "G = {:.2}, df = {}, p = {:.3e}",
        overall.statistic, overall.df, overall.p_value
    ))
}

fn first_year_shares(labels: &[LabeledObservation], k: usize) -> Result<Vec<f64>, PipelineError> {
    let (first, _) = year_span(labels)?;
    let mut counts = vec![0usize; k];
    for o in labels.iter().filter(|o| o.year == first) {
        counts[o.segment] += 1;
    }
    let total: usize = counts.iter().sum();
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

fn stage_simulate(ctx: &mut Ctx) -> Result<String, PipelineError> {
    let mut tensor: TransitionTensor = ctx.read_json("transitions.json", Stage::Estimate)?;
    let labels = read_labels(ctx)?;
    if ctx.cfg.markov.smoothing > 0.0 {
        tensor = tensor.smoothed(ctx.cfg.markov.smoothing);
    }
    let initial = first_year_shares(&labels, tensor.k)?;
    let fallback = if ctx.cfg.strict { Fallback::Strict } else { Fallback::SelfLoop };
    let seed = ctx.seed(Stage::Simulate);
    let paths = markov::simulate(&tensor, &initial, ctx.cfg.markov.n_paths, seed, fallback).map_err(numeric)?;
    let mut buf = Vec::new();
    markov::write_trajectories_csv(&paths, &mut buf).map_err(numeric)?;
    ctx.write("trajectories.csv", &buf)?;
    ctx.write_json(
        "simulation.json",
        &serde_json::json!({ "initial": initial, "n_paths": paths.len(), "horizon": tensor.horizon(), "seed": seed }),
    )?;
    Ok(format!("{} paths over {} years", paths.len(), tensor.horizon()))
}

fn read_trajectories(ctx: &mut Ctx) -> Result<Vec<markov::Trajectory>, PipelineError> {
    let bytes = ctx.read("trajectories.csv", Stage::Simulate)?;
    markov::read_trajectories_csv(bytes.as_slice()).map_err(|e| PipelineError::Artifact {
        path: ctx.path("trajectories.csv"),
        reason: e.to_string(),
    })
}

fn stage_mean_chain(ctx: &mut Ctx) -> Result<String, PipelineError> {
    let paths = read_trajectories(ctx)?;
    let chain = markov::mean_chain(&paths, ctx.cfg.k).map_err(numeric)?;
    ctx.write_json("mean_chain.json", &chain)?;
    Ok(format!("{} pooled transitions", chain.transitions))
}

#[derive(Debug, Serialize, Deserialize)]
struct LimitArtifact {
    #[serde(flatten)]
    dist: markov::StationaryDist,
    observed_shares: Vec<f64>,
}

fn stage_limit(ctx: &mut Ctx) -> Result<String, PipelineError> {
    let chain: MeanChain = ctx.read_json("mean_chain.json", Stage::MeanChain)?;
    let dist = markov::limit_distribution(&chain).map_err(numeric)?;
    let labels = read_labels(ctx)?;
    let mut counts = vec![0usize; ctx.cfg.k];
    for o in &labels {
        counts[o.segment] += 1;
    }
    let observed_shares: Vec<f64> = counts.iter().map(|&c| c as f64 / labels.len() as f64).collect();
    let line = format_percent(&dist.pi);
    ctx.write_json("limit.json", &LimitArtifact { dist, observed_shares })?;
    Ok(format!("limit {line}"))
}

fn stage_classify(ctx: &mut Ctx) -> Result<String, PipelineError> {
    let paths = read_trajectories(ctx)?;
    let options = ClassifyOptions {
        units: ctx.cfg.trajectory.units,
        ..ClassifyOptions::default()
    };
    let model = trajectory::classify_trajectories(&paths, &ctx.cfg.reorder()?, ctx.seed(Stage::Classify), &options)
        .map_err(numeric)?;
    let report = trajectory::class_report(&model).map_err(numeric)?;
    ctx.write_json("trajectory_classes.json", &report)?;
    let trained = report.groups.iter().filter(|g| g.trained).count();
    Ok(format!("{trained} of {} initial segments classified", report.groups.len()))
}

fn stage_report(ctx: &mut Ctx) -> Result<String, PipelineError> {
    let (artifact, model, _) = read_som(ctx)?;
    let seg: SegmentationArtifact = ctx.read_json("segmentation.json", Stage::Segment)?;
    let chain: MeanChain = ctx.read_json("mean_chain.json", Stage::MeanChain)?;
    let limit: LimitArtifact = ctx.read_json("limit.json", Stage::Limit)?;
    let classes: ClassReport = ctx.read_json("trajectory_classes.json", Stage::Classify)?;
    let homogeneity: serde_json::Value = ctx.read_json("homogeneity.json", Stage::TestHomogeneity)?;
    let mca: McaSummary = ctx.read_json("mca.json", Stage::Mca)?;

    let map = report::segment_map_svg(&model.topology, &seg.segmentation, &artifact.unit_counts);
    ctx.write("report/segments.svg", map.as_bytes())?;
    let heat = report::matrix_heatmap_svg(&chain.p, "Mean transition matrix (%)");
    ctx.write("report/mean_chain.svg", heat.as_bytes())?;
    let strings = report::trajectory_classes_svg(&classes, ctx.cfg.k);
    ctx.write("report/trajectory_classes.svg", strings.as_bytes())?;

    let mut md = String::new();
    md.push_str("# Run summary\n\n");
    md.push_str(&format!("- config hash: `{}`\n", ctx.cfg.hash()));
    md.push_str(&format!(
        "- MCA: {} observations, {} axes kept, total inertia {:.4}\n",
        mca.n, mca.k, mca.total_inertia
    ));
    md.push_str(&format!(
        "- SOM {:?}: QE {:.4} -> {:.4}, TE {:.4}\n",
        model.topology, artifact.initial_quantization_error, artifact.quantization_error, artifact.topographic_error
    ));
    md.push_str(&format!(
        "- segments: sizes {:?}, contiguity {:.2}\n",
        seg.segment_sizes, seg.contiguity
    ));
    md.push_str(&format!(
        "- homogeneity LR test: G = {}, df = {}, p = {}\n\n",
        homogeneity["overall"]["statistic"], homogeneity["overall"]["df"], homogeneity["overall"]["p_value"]
    ));
    md.push_str("## Mean transition matrix (%)\n\n|   |");
    for j in 1..=chain.k() {
        md.push_str(&format!(" C{j} |"));
    }
    md.push_str("\n|---|");
    md.push_str(&"---|".repeat(chain.k()));
    md.push('\n');
    for i in 0..chain.k() {
        md.push_str(&format!("| C{} |", i + 1));
        for j in 0..chain.k() {
            md.push_str(&format!(" {:.1} |", 100.0 * chain.p[[i, j]]));
        }
        md.push('\n');
    }
    md.push_str("\n## Limit distribution\n\n| segment | limit | observed |\n|---|---|---|\n");
    for (s, (pi, obs)) in limit.dist.pi.iter().zip(&limit.observed_shares).enumerate() {
        md.push_str(&format!("| {} | {:.2}% | {:.2}% |\n", s + 1, 100.0 * pi, 100.0 * obs));
    }
    md.push_str("\n## Trajectory classes\n\n| initial segment | share | unit frequencies |\n|---|---|---|\n");
    for g in &classes.groups {
        md.push_str(&format!(
            "| {} | {:.2}% | {:?} |\n",
            g.initial_segment,
            100.0 * g.share,
            g.frequencies
        ));
    }
    ctx.write("report/summary.md", md.as_bytes())?;
    Ok(format!("report written to {}", ctx.path("report").display()))
}

fn format_percent(v: &[f64]) -> String {
    v.iter().map(|x| format!("{:.2}%", 100.0 * x)).collect::<Vec<_>>().join(" ")
}

/// Limit distribution of a CSV matrix (header row, one row per state);
/// rows are rescaled to sum to one, so percentages are accepted.
pub fn limit_from_matrix_file(path: &Path) -> Result<markov::StationaryDist, PipelineError> {
    let bytes = fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (_, m) = read_matrix_csv(bytes.as_slice()).map_err(|reason| PipelineError::Artifact {
        path: path.to_path_buf(),
        reason,
    })?;
    let chain = MeanChain::from_matrix(&m).map_err(numeric)?;
    markov::limit_distribution(&chain).map_err(numeric)
}
