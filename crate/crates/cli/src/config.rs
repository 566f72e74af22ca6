//! Run configuration files.
//!
//! A configuration is a TOML document with the sections `[model]`, `[grid]`,
//! `[population]`, `[solver]` and `[output]`. Only `[model]` (with `name`) and
//! `[grid]` (with `nt`) are required; everything else has a default. Unknown
//! keys are rejected. See the README for the full grammar.

use std::fmt;
use std::path::{Path, PathBuf};

use mfgc_core::model::{
    build_gas_storage, build_lq_model, GasHooks, GasStorage, GasStorageParams, LqModel, LqParams, PriceFunction,
};
use mfgc_core::{AgentOptions, Damping, InitialDistribution, ModelSpec, SolveConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_NAMES: [&str; 2] = ["gas", "lq"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed configuration: {0}")]
    Parse(String),
    #[error("invalid value for {field}: {reason}")]
    Validation { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSection,
    pub grid: GridSection,
    #[serde(default)]
    pub population: PopulationSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    #[serde(default)]
    pub parameters: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "one")]
    pub horizon: f64,
    pub nt: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PopulationKind {
    Uniform,
    Points,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSection {
    #[serde(default = "uniform")]
    pub kind: PopulationKind,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "zeros")]
    pub lower: Vec<f64>,
    #[serde(default = "ones")]
    pub upper: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl Default for PopulationSection {
    fn default() -> Self {
        Self {
            kind: PopulationKind::Uniform,
            count: default_count(),
            lower: zeros(),
            upper: ones(),
            seed: 0,
            points: None,
            weights: None,
        }
    }
}

/// `"harmonic"` or a constant weight in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum DampingSetting {
    Constant(f64),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "harmonic")]
    pub damping: DampingSetting,
    #[serde(default = "default_cap")]
    pub support_cap: usize,
    #[serde(default = "default_price_tol")]
    pub price_tol: f64,
    #[serde(default = "default_exploitability_tol")]
    pub exploitability_tol: f64,
    #[serde(default = "default_pmp_tol")]
    pub pmp_tol: f64,
    #[serde(default = "default_agent_tol")]
    pub agent_tol: f64,
    #[serde(default = "default_sweeps")]
    pub agent_max_sweeps: usize,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub initial_spread: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            damping: harmonic(),
            support_cap: default_cap(),
            price_tol: default_price_tol(),
            exploitability_tol: default_exploitability_tol(),
            pmp_tol: default_pmp_tol(),
            agent_tol: default_agent_tol(),
            agent_max_sweeps: default_sweeps(),
            max_outer: default_max_outer(),
            seed: 0,
            initial_spread: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "yes")]
    pub price: bool,
    #[serde(default = "yes")]
    pub trajectories: bool,
    #[serde(default = "yes")]
    pub convergence: bool,
    #[serde(default = "yes")]
    pub report: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            price: true,
            trajectories: true,
            convergence: true,
            report: true,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn uniform() -> PopulationKind {
    PopulationKind::Uniform
}
fn default_count() -> usize {
    64
}
fn zeros() -> Vec<f64> {
    vec![0.0]
}
fn ones() -> Vec<f64> {
    vec![1.0]
}
fn harmonic() -> DampingSetting {
    DampingSetting::Named("harmonic".into())
}
fn default_cap() -> usize {
    256
}
fn default_price_tol() -> f64 {
    1e-6
}
fn default_exploitability_tol() -> f64 {
    1e-4
}
fn default_pmp_tol() -> f64 {
    1e-5
}
fn default_agent_tol() -> f64 {
    1e-9
}
fn default_sweeps() -> usize {
    5000
}
fn default_max_outer() -> usize {
    200
}
fn default_dir() -> PathBuf {
    PathBuf::from("mfgc-out")
}
fn yes() -> bool {
    true
}

/// Price map table shared by the built-in models.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PriceTable {
    Saturating {
        #[serde(default = "one")]
        scale: f64,
    },
    Linear {
        #[serde(default = "one")]
        slope: f64,
    },
    Constant {
        value: Vec<f64>,
    },
}

impl From<&PriceTable> for PriceFunction {
    fn from(p: &PriceTable) -> Self {
        match p {
            PriceTable::Saturating { scale } => PriceFunction::Saturating { scale: *scale },
            PriceTable::Linear { slope } => PriceFunction::Linear { slope: *slope },
            PriceTable::Constant { value } => PriceFunction::Constant { value: value.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GasTable {
    #[serde(default = "minus_one")]
    pub v_min: f64,
    #[serde(default = "one")]
    pub v_max: f64,
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub c2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "one")]
    pub control_weight: f64,
    #[serde(default)]
    pub congestion: f64,
    #[serde(default)]
    pub terminal_linear: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_target: Option<f64>,
    #[serde(default = "saturating")]
    pub price: PriceTable,
}

fn minus_one() -> f64 {
    -1.0
}
fn default_epsilon() -> f64 {
    0.05
}
fn saturating() -> PriceTable {
    PriceTable::Saturating { scale: 1.0 }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LqTable {
    #[serde(default = "one_usize")]
    pub dim: usize,
    #[serde(default = "one")]
    pub control_weight: f64,
    #[serde(default = "zeros")]
    pub terminal_linear: Vec<f64>,
    #[serde(default)]
    pub congestion: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_upper: Option<f64>,
    /// Defaults to the zero constant price.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<PriceTable>,
}

fn one_usize() -> usize {
    1
}

/// A built-in model ready for the solver.
#[derive(Debug, Clone)]
pub enum Model {
    Gas(GasStorage),
    Lq(LqModel),
}

impl Model {
    pub fn spec(&self) -> &dyn ModelSpec {
        match self {
            Model::Gas(m) => m,
            Model::Lq(m) => m,
        }
    }
}

/// A validated run: the model, the solver configuration and the outputs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// The file contents with every default filled in.
    pub file: ConfigFile,
    pub model: Model,
    pub solve: SolveConfig,
    pub output: OutputSection,
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match toml::to_string(&self.file) {
            Ok(s) => f.write_str(&s),
            Err(_) => write!(f, "{:?}", self.file),
        }
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    resolve(file)
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite and positive, got {v}")))
    }
}

/// Validates the sections and builds the model and solver configuration.
pub fn resolve(mut file: ConfigFile) -> Result<RunConfig, ConfigError> {
    if file.grid.nt == 0 {
        return Err(invalid("grid.nt", "must be a positive integer"));
    }
    positive("grid.horizon", file.grid.horizon)?;
    let model = build_model(&mut file.model, file.grid.horizon)?;
    let dim = model.spec().dims().n_state;
    let m0 = population(&file.population, dim)?;
    let s = &file.solver;
    let damping = match &s.damping {
        DampingSetting::Named(name) if name == "harmonic" => Damping::Harmonic,
        DampingSetting::Named(name) => {
            return Err(invalid(
                "solver.damping",
                format!("expected \"harmonic\" or a number in (0, 1], got \"{name}\""),
            ))
        }
        DampingSetting::Constant(w) if *w > 0.0 && *w <= 1.0 => Damping::Constant(*w),
        DampingSetting::Constant(w) => {
            return Err(invalid("solver.damping", format!("constant weight must lie in (0, 1], got {w}")))
        }
    };
    if s.support_cap == 0 {
        return Err(invalid("solver.support_cap", "must be a positive integer"));
    }
    positive("solver.price_tol", s.price_tol)?;
    positive("solver.exploitability_tol", s.exploitability_tol)?;
    positive("solver.pmp_tol", s.pmp_tol)?;
    positive("solver.agent_tol", s.agent_tol)?;
    if s.agent_max_sweeps == 0 {
        return Err(invalid("solver.agent_max_sweeps", "must be a positive integer"));
    }
    if s.max_outer == 0 {
        return Err(invalid("solver.max_outer", "must be a positive integer"));
    }
    if !(s.initial_spread.is_finite() && s.initial_spread >= 0.0) {
        return Err(invalid("solver.initial_spread", "must be finite and nonnegative"));
    }
    let mut solve = SolveConfig::new(file.grid.nt, m0);
    solve.damping = damping;
    solve.support_cap = s.support_cap;
    solve.price_tol = s.price_tol;
    solve.exploitability_tol = s.exploitability_tol;
    solve.pmp_tol = s.pmp_tol;
    solve.agent = AgentOptions {
        tol: s.agent_tol,
        max_sweeps: s.agent_max_sweeps,
        ..AgentOptions::default()
    };
    solve.max_outer = s.max_outer;
    solve.seed = s.seed;
    solve.initial_spread = s.initial_spread;
    Ok(RunConfig {
        output: file.output.clone(),
        file,
        model,
        solve,
    })
}

fn table_error(e: toml::de::Error) -> ConfigError {
    invalid("model.parameters", e.message().to_string())
}

/// Builds the named model, replacing the parameter table by its fully
/// defaulted form.
fn build_model(section: &mut ModelSection, horizon: f64) -> Result<Model, ConfigError> {
    let table = section.parameters.clone();
    match section.name.as_str() {
        "gas" => {
            let t: GasTable = toml::Value::Table(table).try_into().map_err(table_error)?;
            let params = GasStorageParams {
                v_min: t.v_min,
                v_max: t.v_max,
                c1: t.c1,
                c2: t.c2,
                epsilon: t.epsilon,
            };
            let hooks = GasHooks {
                control_weight: t.control_weight,
                congestion: t.congestion,
                terminal_linear: t.terminal_linear,
                terminal_target: t.terminal_target,
                price: (&t.price).into(),
            };
            let model = build_gas_storage(params, hooks, horizon).map_err(|e| invalid("model.parameters", e.to_string()))?;
            section.parameters = defaulted(&t)?;
            Ok(Model::Gas(model))
        }
        "lq" => {
            let mut t: LqTable = toml::Value::Table(table).try_into().map_err(table_error)?;
            let price = t
                .price
                .get_or_insert_with(|| PriceTable::Constant { value: vec![0.0; t.dim] });
            let price = PriceFunction::from(&*price);
            let params = LqParams {
                dim: t.dim,
                control_weight: t.control_weight,
                terminal_linear: t.terminal_linear.clone(),
                congestion: t.congestion,
                control_upper: t.control_upper,
                price,
                horizon,
            };
            let model = build_lq_model(params).map_err(|e| invalid("model.parameters", e.to_string()))?;
            section.parameters = defaulted(&t)?;
            Ok(Model::Lq(model))
        }
        other => Err(invalid(
            "model.name",
            format!("unknown model \"{other}\"; available models: {}", MODEL_NAMES.join(", ")),
        )),
    }
}

fn defaulted<T: Serialize>(t: &T) -> Result<toml::Table, ConfigError> {
    toml::Table::try_from(t).map_err(|e| ConfigError::Parse(e.to_string()))
}

fn population(p: &PopulationSection, dim: usize) -> Result<InitialDistribution, ConfigError> {
    let m0 = match p.kind {
        PopulationKind::Uniform => {
            if p.count == 0 {
                return Err(invalid("population.count", "must be a positive integer"));
            }
            if p.lower.len() != dim || p.upper.len() != dim {
                return Err(invalid(
                    "population.lower",
                    format!(
                        "lower and upper need {dim} entries for the model state, got {} and {}",
                        p.lower.len(),
                        p.upper.len()
                    ),
                ));
            }
            if p.lower.iter().zip(&p.upper).any(|(l, u)| !(l <= u)) {
                return Err(invalid("population.upper", "must be at least population.lower componentwise"));
            }
            InitialDistribution::Uniform {
                lower: p.lower.clone(),
                upper: p.upper.clone(),
                count: p.count,
                seed: p.seed,
            }
        }
        PopulationKind::Points => {
            let points = p
                .points
                .clone()
                .ok_or_else(|| invalid("population.points", "required when kind = \"points\""))?;
            if points.is_empty() {
                return Err(invalid("population.points", "must be nonempty"));
            }
            if let Some(bad) = points.iter().find(|x| x.len() != dim) {
                return Err(invalid(
                    "population.points",
                    format!("every point needs {dim} coordinates, found one with {}", bad.len()),
                ));
            }
            let weights = p
                .weights
                .clone()
                .unwrap_or_else(|| vec![1.0 / points.len() as f64; points.len()]);
            InitialDistribution::Points { points, weights }
        }
    };
    m0.sample().map_err(|e| invalid("population", e.to_string()))?;
    Ok(m0)
}
