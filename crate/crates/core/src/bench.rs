//! Benchmark instances, reference optima and the run matrix.

use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{admm_solve, sadmm_solve, AdmmOptions};
use crate::dfal::{async_dfal_solve, default_params, dfal_solve, AsyncOptions, AsyncOracle, DfalObserver, DfalParams, OuterRecord};
use crate::error::{Error, Result};
use crate::funcs::{GroupPartition, HuberLoss, Loss, NodeProblem, SmoothLoss, SparseGroupReg};
use crate::graph::{build_topology, Graph, Topology};
use crate::linalg::{Matrix, Stacked};
use crate::par::{self, Exec};
use crate::solver::{apg_centralized, ApgOptions, StopReason};
use crate::trace::{RunOptions, RunTrace, Termination};

/// Generator settings; everything needed to rebuild an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub case: u8,
    pub topology: Topology,
    pub num_nodes: usize,
    pub group_size: usize,
    pub num_groups: usize,
    pub seed: u64,
    /// Edge-file contents for [`Topology::File`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub spec: InstanceSpec,
    pub dim: usize,
    pub rows_per_node: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub delta: f64,
    /// `xgen_j = (-1)^j exp(-(j-1)/n_g)`, `j = 1..n`.
    pub x_gen: Vec<f64>,
    pub graph: Graph,
    pub nodes: Vec<NodeProblem>,
}

impl ProblemInstance {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut inst: ProblemInstance = serde_json::from_str(text)?;
        for p in &mut inst.nodes {
            p.loss.refresh();
        }
        Ok(inst)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Same data on a different communication graph.
    pub fn with_graph(&self, graph: Graph) -> Result<Self> {
        if graph.num_nodes() != self.nodes.len() {
            return Err(Error::Instance(format!(
                "graph has {} nodes, instance has {}",
                graph.num_nodes(),
                self.nodes.len()
            )));
        }
        let mut out = self.clone();
        out.graph = graph;
        Ok(out)
    }

    /// `sum_i F_i(x)` at a common point.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.nodes.iter().map(|p| p.composite_value(x)).sum()
    }

    /// `sum_i F_i(x_i)`.
    pub fn objective_stacked(&self, x: &Stacked) -> f64 {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, p)| p.composite_value(x.block(i)))
            .sum()
    }

    /// `sum_i rho_i` as one regularizer; only exists when all nodes share a
    /// partition.
    pub fn combined_reg(&self) -> Result<SparseGroupReg> {
        let first = &self.nodes[0].reg.partition;
        if self.nodes.iter().any(|p| &p.reg.partition != first) {
            return Err(Error::NoCombinedProx);
        }
        SparseGroupReg::new(
            self.nodes.iter().map(|p| p.reg.beta1).sum(),
            self.nodes.iter().map(|p| p.reg.beta2).sum(),
            first.clone(),
        )
    }

    /// `sum_i gamma_i` as one Huber loss over the stacked rows.
    pub fn combined_loss(&self) -> Result<HuberLoss> {
        let mut a = self.nodes[0].loss.matrix().clone();
        let mut b = self.nodes[0].loss.offsets().to_vec();
        for p in &self.nodes[1..] {
            a = a.vstack(p.loss.matrix())?;
            b.extend_from_slice(p.loss.offsets());
        }
        HuberLoss::new(a, b, self.delta)
    }
}

/// `(-1)^j exp(-(j-1)/n_g)` for `j = 1..n`.
pub fn generator_vector(n: usize, group_size: usize) -> Vec<f64> {
    (1..=n)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * (-((j - 1) as f64) / group_size as f64).exp()
        })
        .collect()
}

/// Builds a random instance: Gaussian `A_i` with `m_i = n / (2N)` rows,
/// `b_i = A_i xgen`, `beta1 = beta2 = 1/N`, `delta = 1`.
///
/// Matrices and partitions come from separate ChaCha8 streams of the same
/// seed, so both cases share `A_i` and `b_i`.
pub fn generate_instance(spec: &InstanceSpec) -> Result<ProblemInstance> {
    if spec.case != 1 && spec.case != 2 {
        return Err(Error::Instance(format!("case must be 1 or 2, got {}", spec.case)));
    }
    let graph = build_topology(spec.topology, spec.num_nodes, spec.edge_file.as_deref())?;
    let big_n = graph.num_nodes();
    let n = spec.num_groups * spec.group_size;
    if n == 0 {
        return Err(Error::Instance("need at least one group of positive size".into()));
    }
    if n % (2 * big_n) != 0 {
        return Err(Error::Instance(format!(
            "m_i = n/(2N) must be an integer, but n = {n} and N = {big_n}"
        )));
    }
    let m = n / (2 * big_n);
    let x_gen = generator_vector(n, spec.group_size);
    let beta = 1.0 / big_n as f64;

    let mut mat_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    mat_rng.set_stream(0);
    let mut part_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    part_rng.set_stream(1);

    let shared = GroupPartition::random_equal(spec.num_groups, spec.group_size, &mut part_rng);
    let mut nodes = Vec::with_capacity(big_n);
    for i in 0..big_n {
        let data: Vec<f64> = (0..m * n).map(|_| StandardNormal.sample(&mut mat_rng)).collect();
        let a = Matrix::new(m, n, data)?;
        let b = a.mul_vec(&x_gen);
        let partition = if spec.case == 1 || i == 0 {
            shared.clone()
        } else {
            GroupPartition::random_equal(spec.num_groups, spec.group_size, &mut part_rng)
        };
        nodes.push(NodeProblem::new(
            SparseGroupReg::new(beta, beta, partition)?,
            Loss::Huber(HuberLoss::new(a, b, 1.0)?),
        )?);
    }
    Ok(ProblemInstance {
        spec: spec.clone(),
        dim: n,
        rows_per_node: m,
        beta1: beta,
        beta2: beta,
        delta: 1.0,
        x_gen,
        graph,
        nodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub f_star: f64,
    pub x_ref: Vec<f64>,
    pub method: String,
    /// Residual reached (Case 1) or final consensus violation (Case 2).
    pub accuracy: f64,
    pub iterations: usize,
    /// False when the tolerance was not reached; downstream checks skip it.
    pub converged: bool,
}

/// Reference optimum.
///
/// Case 1 runs centralized APG with momentum restarts on the combined
/// regularizer until the residual is below `tol`. Case 2 has no combined
/// prox; it runs DFAL on a clique to tight consensus and keeps the best
/// objective among node-averaged iterates.
pub fn reference_solve(inst: &ProblemInstance, tol: f64, exec: Exec) -> Result<Reference> {
    if !(tol >= 1e-9) {
        return Err(Error::InvalidParameter(format!("reference tolerance must be >= 1e-9, got {tol}")));
    }
    match inst.combined_reg() {
        Ok(reg) => {
            let loss = inst.combined_loss()?;
            let l = loss.lipschitz();
            let out = apg_centralized(
                &loss,
                &reg,
                l,
                &vec![0.0; inst.dim],
                &ApgOptions {
                    max_iters: 5_000_000,
                    residual_tol: Some(tol),
                    record_values: false,
                    restart: true,
                },
            )?;
            Ok(Reference {
                f_star: inst.objective(&out.x),
                x_ref: out.x,
                method: "apg".into(),
                accuracy: out.residual,
                iterations: out.iterations,
                converged: out.stop == StopReason::Residual,
            })
        }
        Err(Error::NoCombinedProx) => consensus_reference(inst, exec),
        Err(e) => Err(e),
    }
}

const REFERENCE_CV: f64 = 1e-10;

pub fn consensus_reference(inst: &ProblemInstance, exec: Exec) -> Result<Reference> {
    struct Best<'a> {
        inst: &'a ProblemInstance,
        best: Option<(f64, Vec<f64>, f64)>,
        k: usize,
        cv: f64,
    }
    impl DfalObserver for Best<'_> {
        fn on_outer(&mut self, rec: &OuterRecord<'_>) -> Result<()> {
            let xm = rec.x.mean_block();
            let f = self.inst.objective(&xm);
            let cv = crate::trace::consensus_violation(&self.inst.graph, rec.x);
            self.k = rec.k;
            self.cv = cv;
            if f.is_finite() && self.best.as_ref().is_none_or(|(b, _, _)| f < *b) {
                self.best = Some((f, xm, cv));
            }
            Ok(())
        }

        fn should_stop(&self) -> bool {
            self.cv <= REFERENCE_CV
        }
    }
    let graph = if inst.num_nodes() >= 2 {
        Graph::clique(inst.num_nodes())?
    } else {
        inst.graph.clone()
    };
    let mut params = default_params(&inst.nodes, &graph, None)?;
    params.max_outer = 60;
    let budget = Some(Duration::from_secs(120));
    let mut obs = Best { inst, best: None, k: 0, cv: f64::INFINITY };
    let out = dfal_solve(
        &inst.nodes,
        &graph,
        &params,
        &RunOptions {
            exec,
            budget,
            ..Default::default()
        },
        &mut obs,
    )?;
    let final_cv = crate::trace::consensus_violation(&graph, &out.x);
    let (f_star, x_ref, _) = obs
        .best
        .ok_or_else(|| Error::NestedSolver("reference DFAL produced no iterate".into()))?;
    Ok(Reference {
        f_star,
        x_ref,
        method: "dfal-clique-average".into(),
        accuracy: final_cv,
        iterations: obs.k,
        converged: final_cv <= REFERENCE_CV,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "dfal")]
    Dfal,
    /// Asynchronous DFAL with the RBCD oracle.
    #[serde(rename = "afal")]
    Afal,
    #[serde(rename = "afal-arbcd")]
    AfalArbcd,
    #[serde(rename = "admm")]
    Admm,
    #[serde(rename = "sadmm")]
    Sadmm,
    /// Centralized APG; Case 1 only.
    #[serde(rename = "apg")]
    Apg,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Dfal => "dfal",
            Algorithm::Afal => "afal",
            Algorithm::AfalArbcd => "afal-arbcd",
            Algorithm::Admm => "admm",
            Algorithm::Sadmm => "sadmm",
            Algorithm::Apg => "apg",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dfal" => Ok(Algorithm::Dfal),
            "afal" | "afal-rbcd" => Ok(Algorithm::Afal),
            "afal-arbcd" => Ok(Algorithm::AfalArbcd),
            "admm" => Ok(Algorithm::Admm),
            "sadmm" => Ok(Algorithm::Sadmm),
            "apg" => Ok(Algorithm::Apg),
            other => Err(Error::InvalidParameter(format!("unknown algorithm '{other}'"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Solver settings shared by `solve` and the benchmark matrix. Unset
/// fields take the defaults of each method.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveSettings {
    /// DFAL/AFAL shrink factor.
    pub c: Option<f64>,
    pub lambda1: Option<f64>,
    pub bx: Option<f64>,
    pub eps_opt: Option<f64>,
    pub eps_feas: Option<f64>,
    pub max_outer: Option<usize>,
    /// ADMM/SADMM penalty.
    pub admm_c: Option<f64>,
    /// Failure probability of the asynchronous variant.
    pub p: Option<f64>,
    pub budget_secs: Option<f64>,
}

impl SolveSettings {
    fn budget(&self) -> Result<Option<Duration>> {
        match self.budget_secs {
            None => Ok(None),
            Some(s) if s > 0.0 && s.is_finite() => Ok(Some(Duration::from_secs_f64(s))),
            Some(s) => Err(Error::InvalidParameter(format!("budget must be positive, got {s}"))),
        }
    }

    /// DFAL parameters: defaults, overridden by the set fields. `alpha1`
    /// and `xi1` follow `lambda1`.
    pub fn dfal_params(&self, inst: &ProblemInstance) -> Result<DfalParams> {
        let mut params = default_params(&inst.nodes, &inst.graph, None)?;
        if let Some(l) = self.lambda1 {
            let scale = l / params.lambda1;
            params.lambda1 = l;
            params.alpha1 *= scale * scale;
            params.xi1 *= scale;
        }
        if let Some(c) = self.c {
            params.c = c;
        }
        if let Some(b) = self.bx {
            params.bx = b;
        }
        if let Some(e) = self.eps_opt {
            params.eps_opt = e;
        }
        if let Some(e) = self.eps_feas {
            params.eps_feas = e;
        }
        if let Some(m) = self.max_outer {
            params.max_outer = m;
        }
        Ok(params)
    }

    pub fn admm_options(&self) -> AdmmOptions {
        let d = AdmmOptions::default();
        AdmmOptions {
            c: self.admm_c.unwrap_or(d.c),
            eps_opt: self.eps_opt.unwrap_or(d.eps_opt),
            eps_feas: self.eps_feas.unwrap_or(d.eps_feas),
            ..d
        }
    }
}

/// Runs one algorithm on an instance. `seed` drives the activation clock
/// of the asynchronous variants.
pub fn run_algorithm(
    inst: &ProblemInstance,
    alg: Algorithm,
    settings: &SolveSettings,
    reference: Option<f64>,
    seed: u64,
    exec: Exec,
) -> Result<RunTrace> {
    let run = RunOptions {
        exec,
        reference,
        budget: settings.budget()?,
        x0: None,
    };
    let mut trace = match alg {
        Algorithm::Dfal => {
            let params = settings.dfal_params(inst)?;
            dfal_solve(&inst.nodes, &inst.graph, &params, &run, &mut ())?.trace
        }
        Algorithm::Afal | Algorithm::AfalArbcd => {
            let params = settings.dfal_params(inst)?;
            let oracle = if alg == Algorithm::Afal {
                AsyncOracle::Rbcd
            } else {
                AsyncOracle::Arbcd
            };
            let aopts = AsyncOptions::new(oracle, settings.p.unwrap_or(0.1), seed, inst.num_nodes());
            async_dfal_solve(&inst.nodes, &inst.graph, &params, &run, &aopts)?.trace
        }
        Algorithm::Admm => admm_solve(&inst.nodes, &inst.graph, &settings.admm_options(), &run)?.trace,
        Algorithm::Sadmm => sadmm_solve(&inst.nodes, &inst.graph, &settings.admm_options(), &run, false)?.trace,
        Algorithm::Apg => apg_trace(inst, settings, reference)?,
    };
    trace.reference = reference;
    Ok(trace)
}

/// Centralized APG as a trace: one row per iteration, zero consensus
/// violation and no communication. With a reference the trace ends at the
/// first iterate within `eps_opt`.
fn apg_trace(inst: &ProblemInstance, settings: &SolveSettings, reference: Option<f64>) -> Result<RunTrace> {
    let reg = inst.combined_reg()?;
    let loss = inst.combined_loss()?;
    let eps_opt = settings.eps_opt.unwrap_or(1e-3);
    let deadline = crate::trace::Deadline::new(settings.budget()?);
    let out = apg_centralized(
        &loss,
        &reg,
        loss.lipschitz(),
        &vec![0.0; inst.dim],
        &ApgOptions {
            max_iters: 100_000,
            residual_tol: Some(1e-8),
            record_values: true,
            restart: true,
        },
    )?;
    let mut rows = Vec::new();
    let mut termination = Termination::OuterCap;
    for (i, &f) in out.values.iter().enumerate() {
        let rel = reference.map_or(f64::NAN, |r| crate::trace::relative_gap(f, r));
        rows.push(crate::trace::TraceRow {
            k: i + 1,
            lambda: f64::NAN,
            f_sum: f,
            rel_subopt: rel,
            cv: 0.0,
            comm_per_node_max: 0,
            prox_count: (i + 1) as u64,
            grad_count: (i + 1) as u64,
            dual_norm: f64::NAN,
            inner_iters: 1,
            stop_reason: "iter".into(),
        });
        if rel <= eps_opt {
            termination = Termination::Converged;
            break;
        }
    }
    if reference.is_none() && out.stop == StopReason::Residual {
        termination = Termination::Converged;
    }
    let mut trace = RunTrace {
        algorithm: "apg".into(),
        rows,
        termination,
        reference,
        wall_secs: deadline.elapsed_secs(),
        ledger: crate::netsim::CommLedger::new(1),
    };
    trace.finish(termination);
    Ok(trace)
}

/// Benchmark matrix: algorithms x topologies x cases, each over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub algorithms: Vec<Algorithm>,
    pub topologies: Vec<Topology>,
    pub cases: Vec<u8>,
    #[serde(default = "default_nodes")]
    pub num_nodes: usize,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_num_groups")]
    pub num_groups: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Wall-clock budget per run.
    #[serde(default = "default_budget")]
    pub budget_secs: f64,
    #[serde(default = "default_reference_tol")]
    pub reference_tol: f64,
    #[serde(default)]
    pub settings: SolveSettings,
    /// Edge-file contents for the `file` topology.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_file: Option<String>,
    /// Run matrix rows on the rayon pool.
    #[serde(default)]
    pub parallel_rows: bool,
}

fn default_nodes() -> usize {
    5
}
fn default_group_size() -> usize {
    10
}
fn default_num_groups() -> usize {
    10
}
fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}
fn default_budget() -> f64 {
    60.0
}
fn default_reference_tol() -> f64 {
    1e-9
}

impl BenchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: BenchConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() || self.topologies.is_empty() || self.cases.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidParameter(
                "algorithms, topologies, cases and seeds must be nonempty".into(),
            ));
        }
        if let Some(c) = self.cases.iter().find(|c| **c != 1 && **c != 2) {
            return Err(Error::InvalidParameter(format!("case must be 1 or 2, got {c}")));
        }
        if !(self.budget_secs > 0.0 && self.budget_secs.is_finite()) {
            return Err(Error::InvalidParameter("budget_secs must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// One seeded run inside a matrix row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub converged: bool,
    pub termination: Option<Termination>,
    pub rel_subopt: f64,
    pub cv: f64,
    pub final_f: f64,
    pub f_star: f64,
    pub reference_converged: bool,
    pub iterations: usize,
    pub comm_per_node_max: u64,
    pub wall_secs: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub algorithm: Algorithm,
    pub topology: Topology,
    pub case: u8,
    pub config_hash: String,
    pub runs: Vec<RunRecord>,
    /// Means over runs without an error.
    pub mean_rel_subopt: f64,
    pub mean_cv: f64,
    pub mean_wall_secs: f64,
    pub mean_iterations: f64,
    pub mean_comm_per_node: f64,
    pub all_converged: bool,
    pub budget_exhausted: bool,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub note: String,
    pub config: BenchConfig,
    pub config_hash: String,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Digest over everything except wall times, for rerun comparisons.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config_hash.as_bytes());
        for row in &self.rows {
            h.update(format!("{} {} {}", row.algorithm, row.topology, row.case).as_bytes());
            for r in &row.runs {
                let line = format!(
                    "{} {} {:?} {:e} {:e} {:e} {} {} {:?}",
                    r.seed, r.converged, r.termination, r.rel_subopt, r.cv, r.final_f, r.iterations, r.comm_per_node_max, r.error
                );
                h.update(line.as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Plain-text table with one line per row.
    pub fn table(&self) -> String {
        let mut s = format!("# {}\n# config {}\n", self.note, self.config_hash);
        s.push_str("algorithm   topology case  rel_subopt        CV  wall_s    iters  comm/node  conv  flags\n");
        for r in &self.rows {
            let mut flags = Vec::new();
            if r.budget_exhausted {
                flags.push("budget");
            }
            if r.failed_runs > 0 {
                flags.push("errors");
            }
            s.push_str(&format!(
                "{:<11} {:<8} {:>4}  {:>10.2e} {:>9.2e} {:>7.3} {:>8.1} {:>10.1}  {:>4}  {}\n",
                r.algorithm.as_str(),
                r.topology.to_string(),
                r.case,
                r.mean_rel_subopt,
                r.mean_cv,
                r.mean_wall_secs,
                r.mean_iterations,
                r.mean_comm_per_node,
                if r.all_converged { "yes" } else { "no" },
                flags.join(",")
            ));
        }
        s
    }
}

fn instance_for(cfg: &BenchConfig, topology: Topology, case: u8, seed: u64) -> Result<ProblemInstance> {
    generate_instance(&InstanceSpec {
        case,
        topology,
        num_nodes: cfg.num_nodes,
        group_size: cfg.group_size,
        num_groups: cfg.num_groups,
        seed,
        edge_file: cfg.edge_file.clone(),
    })
}

fn run_one(cfg: &BenchConfig, alg: Algorithm, inst: &ProblemInstance, reference: &Reference, seed: u64) -> RunRecord {
    let mut settings = cfg.settings.clone();
    settings.budget_secs = Some(cfg.budget_secs);
    let mut rec = RunRecord {
        seed,
        converged: false,
        termination: None,
        rel_subopt: f64::NAN,
        cv: f64::NAN,
        final_f: f64::NAN,
        f_star: reference.f_star,
        reference_converged: reference.converged,
        iterations: 0,
        comm_per_node_max: 0,
        wall_secs: 0.0,
        error: None,
    };
    match run_algorithm(inst, alg, &settings, Some(reference.f_star), seed, Exec::Sequential) {
        Ok(trace) => {
            let s = trace.summary(seed, serde_json::Value::Null);
            rec.converged = s.converged;
            rec.termination = Some(s.termination);
            rec.rel_subopt = s.final_rel_subopt;
            rec.cv = s.final_cv;
            rec.final_f = s.final_f;
            rec.iterations = s.iterations;
            rec.comm_per_node_max = s.comm_per_node_max;
            rec.wall_secs = s.wall_secs;
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Runs the full matrix. Instances and references are built once per
/// (topology, case, seed); failures are recorded per run.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let hash = cfg.hash();
    let exec = if cfg.parallel_rows { Exec::Parallel } else { Exec::Sequential };

    let cells: Vec<(Topology, u8, u64)> = cfg
        .topologies
        .iter()
        .flat_map(|&t| cfg.cases.iter().flat_map(move |&c| cfg.seeds.iter().map(move |&s| (t, c, s))))
        .collect();
    let prepared: Vec<std::result::Result<(ProblemInstance, Reference), String>> =
        par::map_indexed(exec, cells.len(), |idx| {
            let (t, c, s) = cells[idx];
            let inst = instance_for(cfg, t, c, s).map_err(|e| e.to_string())?;
            let r = reference_solve(&inst, cfg.reference_tol, Exec::Sequential).map_err(|e| e.to_string())?;
            Ok((inst, r))
        });

    let keys: Vec<(Algorithm, Topology, u8)> = cfg
        .algorithms
        .iter()
        .flat_map(|&a| cfg.topologies.iter().flat_map(move |&t| cfg.cases.iter().map(move |&c| (a, t, c))))
        // centralized APG needs the shared partition
        .filter(|&(a, _, c)| !(a == Algorithm::Apg && c == 2))
        .collect();
    let rows = par::map_indexed(exec, keys.len(), |idx| {
        let (alg, topology, case) = keys[idx];
        let runs: Vec<RunRecord> = cells
            .iter()
            .zip(&prepared)
            .filter(|((t, c, _), _)| *t == topology && *c == case)
            .map(|((_, _, seed), prep)| match prep {
                Ok((inst, reference)) => run_one(cfg, alg, inst, reference, *seed),
                Err(e) => RunRecord {
                    seed: *seed,
                    converged: false,
                    termination: None,
                    rel_subopt: f64::NAN,
                    cv: f64::NAN,
                    final_f: f64::NAN,
                    f_star: f64::NAN,
                    reference_converged: false,
                    iterations: 0,
                    comm_per_node_max: 0,
                    wall_secs: 0.0,
                    error: Some(e.clone()),
                },
            })
            .collect();
        let ok = || runs.iter().filter(|r| r.error.is_none());
        BenchRow {
            algorithm: alg,
            topology,
            case,
            config_hash: hash.clone(),
            mean_rel_subopt: mean(ok().map(|r| r.rel_subopt)),
            mean_cv: mean(ok().map(|r| r.cv)),
            mean_wall_secs: mean(ok().map(|r| r.wall_secs)),
            mean_iterations: mean(ok().map(|r| r.iterations as f64)),
            mean_comm_per_node: mean(ok().map(|r| r.comm_per_node_max as f64)),
            all_converged: runs.iter().all(|r| r.converged),
            budget_exhausted: runs.iter().any(|r| r.termination == Some(Termination::Timeout)),
            failed_runs: runs.iter().filter(|r| r.error.is_some()).count(),
            runs,
        }
    });
    Ok(BenchReport {
        note: format!(
            "means over {} seeds per row at n_g = {}, K = {}, N = {}; protocol shape only, not full-scale numbers",
            cfg.seeds.len(),
            cfg.group_size,
            cfg.num_groups,
            cfg.num_nodes
        ),
        config: cfg.clone(),
        config_hash: hash,
        rows,
    })
}
