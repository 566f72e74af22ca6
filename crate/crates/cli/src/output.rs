//! CSV and report files.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back yields bit-identical values. Infinite entries are written as
//! `inf`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mfgc_core::equilibrium::{ConvergenceTrace, EquilibriumReport, Status};
use mfgc_core::ocp::PmpResidual;
use mfgc_core::{AgentTrajectory, ParticleMeasure};
use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("malformed trajectory file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

pub fn float(x: f64) -> String {
    format!("{x:?}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_rows(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(&header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(&r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn numbered(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}_{i}"))
}

/// `node,t,P_1..P_m`.
pub fn write_price(path: &Path, report: &EquilibriumReport) -> Result<(), OutputError> {
    let m = report.coupling.price(0).len();
    let header = ["node", "t"].iter().map(|s| s.to_string()).chain(numbered("P", m)).collect();
    let rows = report
        .coupling
        .prices()
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut row = vec![k.to_string(), float(report.grid.node(k))];
            row.extend(p.iter().map(|&x| float(x)));
            row
        })
        .collect();
    write_rows(path, header, rows)
}

/// `agent,node,t,gamma_*,v_*,p_*,nu_*`; control and multiplier fields are
/// empty at the final node.
pub fn write_trajectories(path: &Path, measure: &ParticleMeasure) -> Result<(), OutputError> {
    let first = &measure.particles()[0];
    let (n, m, nc) = (first.x0.len(), first.v[0].len(), first.nu[0].len());
    let header = ["agent", "node", "t"]
        .iter()
        .map(|s| s.to_string())
        .chain(numbered("gamma", n))
        .chain(numbered("v", m))
        .chain(numbered("p", n))
        .chain(numbered("nu", nc))
        .collect();
    let grid = measure.grid();
    let nt = grid.nt();
    let mut rows = Vec::with_capacity(measure.len() * (nt + 1));
    for (i, traj) in measure.particles().iter().enumerate() {
        for k in 0..=nt {
            let mut row = vec![i.to_string(), k.to_string(), float(grid.node(k))];
            row.extend(traj.gamma[k].iter().map(|&x| float(x)));
            match traj.v.get(k) {
                Some(v) => row.extend(v.iter().map(|&x| float(x))),
                None => row.extend(std::iter::repeat_n(String::new(), m)),
            }
            row.extend(traj.p[k].iter().map(|&x| float(x)));
            match traj.nu.get(k) {
                Some(nu) => row.extend(nu.iter().map(|&x| float(x))),
                None => row.extend(std::iter::repeat_n(String::new(), nc)),
            }
            rows.push(row);
        }
    }
    write_rows(path, header, rows)
}

/// `iteration,price_change,marginal_d1_change,exploitability,mean_cost`.
pub fn write_convergence(path: &Path, trace: &ConvergenceTrace) -> Result<(), OutputError> {
    let header = ["iteration", "price_change", "marginal_d1_change", "exploitability", "mean_cost"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = trace
        .records
        .iter()
        .map(|r| {
            vec![
                r.iteration.to_string(),
                float(r.price_change),
                float(r.marginal_d1_change),
                float(r.exploitability),
                float(r.mean_cost),
            ]
        })
        .collect();
    write_rows(path, header, rows)
}

/// Ordered `key = value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues(pub Vec<(String, String)>);

impl KeyValues {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.0.push((key.to_string(), value.to_string()));
    }

    pub fn float(&mut self, key: &str, value: f64) {
        self.push(key, float(value));
    }

    pub fn pmp(&mut self, prefix: &str, r: &PmpResidual) {
        self.float(&format!("{prefix}adjoint"), r.adjoint_residual);
        self.float(&format!("{prefix}stationarity"), r.stationarity_residual);
        self.float(&format!("{prefix}complementarity"), r.complementarity_residual);
        self.float(&format!("{prefix}terminal"), r.terminal_residual);
        self.float(&format!("{prefix}transversality"), r.transversality_residual);
        self.float(&format!("{prefix}dynamics"), r.dynamics_residual);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.0 {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), OutputError> {
        fs::write(path, self.render()).map_err(io_err(path))
    }
}

pub fn status_name(status: Status) -> &'static str {
    match status {
        Status::Converged => "converged",
        Status::MaxIter => "max_iter",
    }
}

/// Summary of a solve.
pub fn solve_summary(report: &EquilibriumReport) -> KeyValues {
    let c = &report.certificate;
    let mut kv = KeyValues::default();
    kv.push("status", status_name(report.status));
    kv.push("iterations", report.trace.records.len());
    kv.push("agents", report.kappa.len());
    kv.push("nt", report.grid.nt());
    kv.float("horizon", report.grid.horizon());
    kv.float("mean_cost", c.mean_cost);
    kv.float("exploitability", c.exploitability);
    kv.float("exploitability_bound", c.exploitability_bound);
    kv.float("price_consistency", c.price_consistency);
    kv.float("fixed_point_gap", c.fixed_point_gap);
    kv.pmp("pmp_", &c.pmp);
    if let Some(last) = report.trace.records.last() {
        kv.float("final_price_change", last.price_change);
        kv.float("final_marginal_d1_change", last.marginal_d1_change);
        kv.float("bound_m1", last.bounds.m1);
        kv.float("bound_m2", last.bounds.m2);
        kv.float("bound_m3", last.bounds.m3);
        kv.float("bound_m4", last.bounds.m4);
        kv.push("support", last.support);
        kv.float("dropped_mass", last.dropped_mass);
    }
    kv
}

/// Trajectories read back from a trajectories file, in agent order.
pub fn read_trajectories(path: &Path) -> Result<Vec<AgentTrajectory>, OutputError> {
    let bad = |reason: String| OutputError::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
    let (n, m, nc) = (count("gamma_"), count("v_"), count("p_"));
    let nu = count("nu_");
    if n == 0 || m == 0 || nc != n || header.len() != 3 + 2 * n + m + nu {
        return Err(bad(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut agents: Vec<AgentTrajectory> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64, OutputError> {
            field(i)
                .parse::<f64>()
                .map_err(|_| bad(format!("row {}: cannot parse {:?} as a number", line + 2, field(i))))
        };
        let block = |start: usize, len: usize| -> Result<DVector<f64>, OutputError> {
            (start..start + len).map(num).collect::<Result<Vec<_>, _>>().map(DVector::from_vec)
        };
        let agent: usize = field(0).parse().map_err(|_| bad(format!("row {}: bad agent id", line + 2)))?;
        let node: usize = field(1).parse().map_err(|_| bad(format!("row {}: bad node", line + 2)))?;
        if agent == agents.len() && node == 0 {
            agents.push(AgentTrajectory {
                x0: DVector::zeros(n),
                gamma: Vec::new(),
                v: Vec::new(),
                p: Vec::new(),
                nu: Vec::new(),
                lambda1: DVector::zeros(0),
                lambda2: DVector::zeros(0),
                cost: 0.0,
            });
        }
        let in_order = agent + 1 == agents.len() && agents.last().is_some_and(|t| node == t.gamma.len());
        let traj = match agents.last_mut() {
            Some(t) if in_order => t,
            _ => return Err(bad(format!("row {}: agents and nodes must be listed in order", line + 2))),
        };
        let gamma = block(3, n)?;
        if node == 0 {
            traj.x0 = gamma.clone();
        }
        traj.gamma.push(gamma);
        traj.p.push(block(3 + n + m, n)?);
        if !field(3 + n).is_empty() {
            traj.v.push(block(3 + n, m)?);
            traj.nu.push(block(3 + 2 * n + m, nu)?);
        }
    }
    if agents.is_empty() {
        return Err(bad("no rows".into()));
    }
    let nt = agents[0].gamma.len() - 1;
    if agents.iter().any(|a| a.gamma.len() != nt + 1 || a.v.len() != nt) {
        return Err(bad("every agent needs the same nodes, with controls on all but the last".into()));
    }
    Ok(agents)
}

/// Writes the emitted files of a solve into `dir` and returns their paths.
pub fn write_solve_outputs(
    dir: &Path,
    report: &EquilibriumReport,
    emit: &crate::config::OutputSection,
) -> Result<Vec<PathBuf>, OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    if emit.price {
        let p = dir.join("price.csv");
        write_price(&p, report)?;
        written.push(p);
    }
    if emit.trajectories {
        let p = dir.join("trajectories.csv");
        write_trajectories(&p, &report.eta)?;
        written.push(p);
    }
    if emit.convergence {
        let p = dir.join("convergence.csv");
        write_convergence(&p, &report.trace)?;
        written.push(p);
    }
    if emit.report {
        let p = dir.join("report.txt");
        solve_summary(report).write(&p)?;
        written.push(p);
    }
    Ok(written)
}

pub fn shared(trajectories: Vec<AgentTrajectory>) -> Vec<Arc<AgentTrajectory>> {
    trajectories.into_iter().map(Arc::new).collect()
}
