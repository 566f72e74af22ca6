//! The `solve`, `check`, `uniqueness` and `demo gas` subcommands.

use std::path::{Path, PathBuf};

use mfgc_core::equilibrium::{coupling_of, uniqueness_experiment, EquilibriumError, EquilibriumReport, Status};
use mfgc_core::measures::{MeasureKind, ParticleMeasure};
use mfgc_core::model::{validate_assumptions, CheckStatus};
use mfgc_core::ocp::{pmp_residual, recover_terminal_multipliers, PmpResidual, TimeGrid};
use mfgc_core::pointwise::PriceOptions;
use mfgc_core::solve_equilibrium;
use thiserror::Error;

use crate::config::{
    ConfigError, ConfigFile, DampingSetting, GasTable, GridSection, ModelSection, OutputSection, PopulationKind,
    PopulationSection, PriceTable, RunConfig, SolverSection,
};
use crate::output::{read_trajectories, shared, write_solve_outputs, KeyValues, OutputError};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_UNCERTIFIED: i32 = 2;

/// Probes used by the assumption validator in `check`.
const ASSUMPTION_PROBES: usize = 200;
const ASSUMPTION_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("{operation} failed: {source}")]
    Solver {
        operation: &'static str,
        source: EquilibriumError,
    },
    #[error("{0}")]
    Input(String),
}

fn solver(operation: &'static str) -> impl FnOnce(EquilibriumError) -> CommandError {
    move |source| CommandError::Solver { operation, source }
}

/// Result of a subcommand: exit code, summary and files written.
#[derive(Debug)]
pub struct Outcome {
    pub exit_code: i32,
    pub summary: KeyValues,
    pub written: Vec<PathBuf>,
    pub report: Option<EquilibriumReport>,
}

fn exit_for(status: Status) -> i32 {
    match status {
        Status::Converged => EXIT_OK,
        Status::MaxIter => EXIT_UNCERTIFIED,
    }
}

/// Solves the configured game and writes the emitted files to `out`.
pub fn run_solve(config: &RunConfig, out: &Path) -> Result<Outcome, CommandError> {
    let report = solve_equilibrium(config.model.spec(), &config.solve).map_err(solver("equilibrium::solve_equilibrium"))?;
    let written = write_solve_outputs(out, &report, &config.output)?;
    Ok(Outcome {
        exit_code: exit_for(report.status),
        summary: crate::output::solve_summary(&report),
        written,
        report: Some(report),
    })
}

/// Validates the model assumptions and certifies a stored trajectory set.
///
/// The trajectories are read as a state-costate measure weighted by the
/// configured population, agent `i` carrying the weight of atom `i`. The
/// coupling is rebuilt from that measure and every agent's residuals are
/// evaluated against it. Exit code 2 when a residual exceeds the solver's
/// `pmp_tol` or a sampled assumption fails.
pub fn run_check(config: &RunConfig, trajectories: &Path) -> Result<Outcome, CommandError> {
    let model = config.model.spec();
    let mut agents = read_trajectories(trajectories)?;
    let atoms = config.solve.m0.sample().map_err(|e| CommandError::Input(e.to_string()))?;
    if atoms.len() != agents.len() {
        return Err(CommandError::Input(format!(
            "{} agents in {} but the population has {} atoms",
            agents.len(),
            trajectories.display(),
            atoms.len()
        )));
    }
    let dims = model.dims();
    if agents[0].gamma[0].len() != dims.n_state || agents[0].v[0].len() != dims.n_control {
        return Err(CommandError::Input(format!(
            "trajectory dimensions do not match the model (n = {}, m = {})",
            dims.n_state, dims.n_control
        )));
    }
    if agents[0].nu[0].len() != dims.n_mixed {
        return Err(CommandError::Input(format!(
            "{} multiplier columns, the model has {} mixed constraints",
            agents[0].nu[0].len(),
            dims.n_mixed
        )));
    }
    let nt = agents[0].nt();
    let grid = TimeGrid::new(dims.horizon, nt).map_err(|e| CommandError::Input(e.to_string()))?;
    let kappa = ParticleMeasure::new(shared(agents.clone()), atoms.weights().to_vec(), MeasureKind::StateCostate, grid)
        .map_err(|e| CommandError::Input(e.to_string()))?;
    let price = PriceOptions {
        kkt_tol: config.solve.agent.kkt_tol,
        ..PriceOptions::default()
    };
    let coupling = coupling_of(model, &kappa, &price).map_err(solver("equilibrium::coupling_of"))?;
    let mut worst = PmpResidual::default();
    let mut worst_agent = 0;
    let mut worst_value = -1.0;
    for (i, a) in agents.iter_mut().enumerate() {
        let (l1, l2) = recover_terminal_multipliers(model, &a.gamma[nt], &a.p[nt], coupling.marginal(nt));
        a.lambda1 = l1;
        a.lambda2 = l2;
        let r = pmp_residual(model, a, &coupling, &grid);
        if r.max() > worst_value {
            worst_value = r.max();
            worst_agent = i;
        }
        worst = worst.worst(&r);
    }
    let assumptions = validate_assumptions(model, ASSUMPTION_PROBES, ASSUMPTION_TOL);

    let mut kv = KeyValues::default();
    kv.push("agents", agents.len());
    kv.push("nt", nt);
    kv.pmp("pmp_", &worst);
    kv.push("worst_agent", worst_agent);
    for c in &assumptions.checks {
        match c.status {
            CheckStatus::Checked { worst_violation, .. } => kv.float(&format!("assumption.{}", c.name), worst_violation),
            CheckStatus::Skipped { reason } => kv.push(&format!("assumption.{}", c.name), format!("skipped ({reason})")),
        }
    }
    let certified = worst.max() <= config.solve.pmp_tol;
    kv.push("certified", certified);
    kv.push("assumptions_hold", assumptions.passed());
    Ok(Outcome {
        exit_code: if certified && assumptions.passed() { EXIT_OK } else { EXIT_UNCERTIFIED },
        summary: kv,
        written: Vec::new(),
        report: None,
    })
}

/// Solves from `starts` initial measures and compares the equilibria.
pub fn run_uniqueness(config: &RunConfig, starts: usize) -> Result<Outcome, CommandError> {
    let r = uniqueness_experiment(config.model.spec(), &config.solve, starts)
        .map_err(solver("equilibrium::uniqueness_experiment"))?;
    let mut kv = KeyValues::default();
    kv.push("starts", r.starts);
    for (i, run) in r.runs.iter().enumerate() {
        kv.push(&format!("run_{i}.status"), crate::output::status_name(run.status));
        kv.push(&format!("run_{i}.iterations"), run.trace.records.len());
        kv.float(&format!("run_{i}.mean_cost"), run.certificate.mean_cost);
    }
    kv.float("price_gap", r.price_gap);
    kv.float("mean_cost_gap", r.mean_cost_gap);
    kv.float("cost_profile_gap", r.cost_profile_gap);
    kv.float("price_term", r.price_term);
    kv.float("congestion_term", r.congestion_term);
    kv.float("terminal_term", r.terminal_term);
    kv.float("congestion_monotonicity", r.congestion_monotonicity);
    kv.float("terminal_monotonicity", r.terminal_monotonicity);
    kv.float("potential_convexity", r.potential_convexity);
    kv.push("preconditions_hold", r.preconditions_hold);
    let all_converged = r.runs.iter().all(|run| run.status == Status::Converged);
    Ok(Outcome {
        exit_code: if all_converged { EXIT_OK } else { EXIT_UNCERTIFIED },
        summary: kv,
        written: Vec::new(),
        report: None,
    })
}

/// Settings of `demo gas`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoOptions {
    pub epsilon: f64,
    pub agents: usize,
    pub nt: usize,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            agents: 64,
            nt: 100,
        }
    }
}

/// Congestion coefficient of the demo, `f(x, m) = 0.5·x·mean(m)`.
pub const DEMO_CONGESTION: f64 = 0.5;
/// Outer damping of the demo.
pub const DEMO_DAMPING: f64 = 0.5;

/// The storage fleet demo: unit horizon, saturating price, midpoint atoms on
/// `[0, 1]`, constant damping ½.
pub fn gas_demo_config(opts: &DemoOptions) -> Result<RunConfig, CommandError> {
    let table = GasTable {
        v_min: -1.0,
        v_max: 1.0,
        c1: 1.0,
        c2: 1.0,
        epsilon: opts.epsilon,
        control_weight: 1.0,
        congestion: DEMO_CONGESTION,
        terminal_linear: 0.0,
        terminal_target: None,
        price: PriceTable::Saturating { scale: 1.0 },
    };
    let file = ConfigFile {
        model: ModelSection {
            name: "gas".into(),
            parameters: toml::Table::try_from(&table).map_err(|e| CommandError::Input(e.to_string()))?,
        },
        grid: GridSection {
            horizon: 1.0,
            nt: opts.nt,
        },
        population: PopulationSection {
            kind: PopulationKind::Uniform,
            count: opts.agents,
            ..PopulationSection::default()
        },
        solver: SolverSection {
            damping: DampingSetting::Constant(DEMO_DAMPING),
            ..SolverSection::default()
        },
        output: OutputSection {
            dir: PathBuf::from("mfgc-demo-gas"),
            ..OutputSection::default()
        },
    };
    Ok(crate::config::resolve(file)?)
}

pub fn run_gas_demo(opts: &DemoOptions, out: &Path) -> Result<Outcome, CommandError> {
    let config = gas_demo_config(opts)?;
    run_solve(&config, out)
}
