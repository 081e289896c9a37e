//! Per-iteration run records, metrics and their CSV/JSON serialization.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::Graph;
use crate::linalg::{dist2, Stacked};
use crate::netsim::CommLedger;
use crate::par::Exec;

/// One CSV row, written once per outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub lambda: f64,
    #[serde(rename = "F_sum")]
    pub f_sum: f64,
    /// `NaN` when no reference value is known.
    pub rel_subopt: f64,
    #[serde(rename = "CV")]
    pub cv: f64,
    pub comm_per_node_max: u64,
    pub prox_count: u64,
    pub grad_count: u64,
    pub dual_norm: f64,
    pub inner_iters: usize,
    pub stop_reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    OuterCap,
    Timeout,
    NonFinite,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::OuterCap => "outer_cap",
            Termination::Timeout => "timeout",
            Termination::NonFinite => "nonfinite",
        }
    }
}

/// Settings shared by every distributed solver.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub exec: Exec,
    /// Reference optimum; enables benchmark-mode termination.
    pub reference: Option<f64>,
    pub budget: Option<Duration>,
    /// Start point; zero at every node when absent.
    pub x0: Option<Stacked>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTrace {
    pub algorithm: String,
    pub rows: Vec<TraceRow>,
    pub termination: Termination,
    pub reference: Option<f64>,
    pub wall_secs: f64,
    pub ledger: CommLedger,
}

/// Final metrics plus the configuration that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub seed: u64,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub total_inner_iters: usize,
    pub final_f: f64,
    pub final_rel_subopt: f64,
    pub final_cv: f64,
    pub comm_per_node_max: u64,
    pub reference: Option<f64>,
    pub wall_secs: f64,
    pub config: serde_json::Value,
}

impl RunTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wtr.serialize(r)?;
        }
        if self.rows.is_empty() {
            wtr.write_record([
                "k",
                "lambda",
                "F_sum",
                "rel_subopt",
                "CV",
                "comm_per_node_max",
                "prox_count",
                "grad_count",
                "dual_norm",
                "inner_iters",
                "stop_reason",
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn summary(&self, seed: u64, config: serde_json::Value) -> RunSummary {
        let last = self.rows.last();
        RunSummary {
            algorithm: self.algorithm.clone(),
            seed,
            converged: self.converged(),
            termination: self.termination,
            iterations: last.map_or(0, |r| r.k),
            total_inner_iters: self.rows.iter().map(|r| r.inner_iters).sum(),
            final_f: last.map_or(f64::NAN, |r| r.f_sum),
            final_rel_subopt: last.map_or(f64::NAN, |r| r.rel_subopt),
            final_cv: last.map_or(f64::NAN, |r| r.cv),
            comm_per_node_max: self.ledger.max_sent_per_node(),
            reference: self.reference,
            wall_secs: self.wall_secs,
            config,
        }
    }

    /// Marks the last row with the run's termination reason.
    pub(crate) fn finish(&mut self, termination: Termination) {
        self.termination = termination;
        if let Some(r) = self.rows.last_mut() {
            r.stop_reason = termination.as_str().to_string();
        }
    }
}

/// `|F - F*| / |F*|`, or the absolute gap when `F* = 0`.
pub fn relative_gap(f: f64, fstar: f64) -> f64 {
    if fstar == 0.0 {
        (f - fstar).abs()
    } else {
        (f - fstar).abs() / fstar.abs()
    }
}

/// `max_{(i,j) in E} ||x_i - x_j|| / sqrt(n)`.
pub fn consensus_violation(graph: &Graph, x: &Stacked) -> f64 {
    graph.max_edge_disagreement(x) / (x.dim().max(1) as f64).sqrt()
}

/// Consensus violation including the split term `max_i ||x_i - y_i||`.
pub fn split_consensus_violation(graph: &Graph, x: &Stacked, y: &Stacked) -> f64 {
    let split = (0..x.num_blocks())
        .map(|i| dist2(x.block(i), y.block(i)))
        .fold(0.0, f64::max);
    graph.max_edge_disagreement(x).max(split) / (x.dim().max(1) as f64).sqrt()
}

/// `(rel_subopt, CV)` series for a sequence of `(F, x)` pairs.
pub fn evaluate<'a, I>(graph: &Graph, iterates: I, fstar: f64) -> (Vec<f64>, Vec<f64>)
where
    I: IntoIterator<Item = (f64, &'a Stacked)>,
{
    iterates
        .into_iter()
        .map(|(f, x)| (relative_gap(f, fstar), consensus_violation(graph, x)))
        .unzip()
}

/// Wall-clock budget.
#[derive(Debug, Clone, Copy)]
pub struct Deadline {
    start: Instant,
    budget: Option<Duration>,
}

impl Deadline {
    pub fn new(budget: Option<Duration>) -> Self {
        Self {
            start: Instant::now(),
            budget,
        }
    }

    pub fn expired(&self) -> bool {
        self.budget.is_some_and(|b| self.start.elapsed() >= b)
    }

    pub fn elapsed_secs(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}
