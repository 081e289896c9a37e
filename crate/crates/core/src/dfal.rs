//! Distributed first-order augmented Lagrangian method.
//!
//! With `Omega` the graph Laplacian, the consensus problem
//! `min sum_i F_i(x_i)` s.t. `x_i = x_j` on every edge is solved through a
//! sequence of penalty subproblems
//!
//! `P^(k)(x) = lambda sum_i rho_i(x_i) + lambda sum_i gamma_i(x_i)
//!             + 1/2 (x + xbar)^T (Omega ⊗ I) (x + xbar)`,
//!
//! where the accumulator `xbar` replaces the dual variable. Only Laplacian
//! products are needed, so every gradient block can be assembled from
//! neighbour messages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcs::{NodeProblem, SmoothLoss};
use crate::graph::Graph;
use crate::linalg::{norm2, Stacked};
use crate::netsim::{AsyncClock, Network};
use crate::solver::{
    arbcd_run, ms_apg, pilot_best, rbcd_budget, rbcd_budget_raw, rbcd_c_from_best, rbcd_run, ArbcdOptions,
    BlockObjective, CEstimate, MsApgOptions, RbcdOptions, ResidualCheck, StopReason,
};
use crate::trace::{consensus_violation, relative_gap, Deadline, RunOptions, RunTrace, Termination, TraceRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfalParams {
    pub lambda1: f64,
    pub alpha1: f64,
    pub xi1: f64,
    /// Shrink factor in `(0, 1)`.
    pub c: f64,
    pub bx: f64,
    pub psi_max: f64,
    pub max_outer: usize,
    pub eps_opt: f64,
    pub eps_feas: f64,
}

impl DfalParams {
    pub fn lambda(&self, k: usize) -> f64 {
        self.lambda1 * self.c.powi(k as i32 - 1)
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha1 * self.c.powi(2 * (k as i32 - 1))
    }

    pub fn xi(&self, k: usize) -> f64 {
        self.xi1 * self.c.powi(2 * (k as i32 - 1))
    }

    /// `L_i^(k) = lambda^(k) L_gamma_i + psi_max`.
    pub fn block_lipschitz(&self, k: usize, loss_lipschitz: &[f64]) -> Vec<f64> {
        let lam = self.lambda(k);
        loss_lipschitz.iter().map(|l| lam * l + self.psi_max).collect()
    }

    /// `B_x sqrt(2 sum_i L_i^(k) / alpha^(k))` before rounding up.
    pub fn inner_cap_raw(&self, k: usize, loss_lipschitz: &[f64]) -> f64 {
        let sum: f64 = self.block_lipschitz(k, loss_lipschitz).iter().sum();
        self.bx * (2.0 * sum / self.alpha(k)).sqrt()
    }

    pub fn inner_cap(&self, k: usize, loss_lipschitz: &[f64]) -> usize {
        let raw = self.inner_cap_raw(k, loss_lipschitz);
        if raw >= usize::MAX as f64 {
            usize::MAX
        } else {
            raw.ceil().max(1.0) as usize
        }
    }

    pub fn validate(&self, tau_bar: f64) -> Result<()> {
        let positive = [
            ("lambda1", self.lambda1),
            ("alpha1", self.alpha1),
            ("xi1", self.xi1),
            ("bx", self.bx),
            ("eps_opt", self.eps_opt),
            ("eps_feas", self.eps_feas),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::InvalidParameter(format!("c must lie in (0,1), got {}", self.c)));
        }
        if !(self.psi_max >= 0.0) {
            return Err(Error::InvalidParameter("psi_max must be nonnegative".into()));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidParameter("outer iteration cap must be positive".into()));
        }
        if !(self.xi1 / self.lambda1 < tau_bar) {
            return Err(Error::InvalidParameter(format!(
                "need xi1/lambda1 < tau_bar, got {} >= {tau_bar}",
                self.xi1 / self.lambda1
            )));
        }
        Ok(())
    }
}

/// `min_i (beta1_i + beta2_i)`.
pub fn tau_bar(nodes: &[NodeProblem]) -> f64 {
    nodes.iter().map(|p| p.reg.tau()).fold(f64::INFINITY, f64::min)
}

/// `10 (1 + ||x0|| + sum_i ||b_i|| / sqrt(m_i))`.
pub fn default_bx(nodes: &[NodeProblem], x0: Option<&Stacked>) -> f64 {
    let data: f64 = nodes
        .iter()
        .map(|p| {
            let b = p.loss.offsets();
            if b.is_empty() {
                0.0
            } else {
                norm2(b) / (b.len() as f64).sqrt()
            }
        })
        .sum();
    10.0 * (1.0 + x0.map_or(0.0, Stacked::norm) + data)
}

/// Default schedule: `lambda1 = min(1, psi_max / Lbar)`,
/// `alpha1 = (lambda1 tau)^2 / (4N)`, `xi1 = lambda1 tau / 2`, `c = 0.7`.
pub fn default_params(nodes: &[NodeProblem], graph: &Graph, x0: Option<&Stacked>) -> Result<DfalParams> {
    if nodes.len() != graph.num_nodes() {
        return Err(Error::Dimension {
            expected: graph.num_nodes(),
            got: nodes.len(),
            context: "node problems vs graph nodes",
        });
    }
    let tau = tau_bar(nodes);
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(
            "tau_bar = 0: every node needs beta1 + beta2 > 0".into(),
        ));
    }
    let psi_max = graph.spectral_bounds().psi_max;
    let lbar = nodes.iter().map(|p| p.loss.lipschitz()).fold(0.0, f64::max);
    let lambda1 = if lbar > 0.0 { (psi_max / lbar).min(1.0) } else { 1.0 };
    let lambda1 = if lambda1 > 0.0 { lambda1 } else { 1.0 };
    let n = nodes.len() as f64;
    Ok(DfalParams {
        lambda1,
        alpha1: (lambda1 * tau).powi(2) / (4.0 * n),
        xi1: lambda1 * tau / 2.0,
        c: 0.7,
        bx: default_bx(nodes, x0),
        psi_max,
        max_outer: 200,
        eps_opt: 1e-3,
        eps_feas: 1e-4,
    })
}

/// `q_i = lambda grad gamma_i(ybar_i) + d_i (ybar_i + xbar_i)
///        - sum_{j in O_i} (ybar_j + xbar_j)`.
pub fn local_gradient<'a, I>(
    node: &NodeProblem,
    lambda: f64,
    ybar_i: &[f64],
    xbar_i: &[f64],
    neighbors: I,
    out: &mut [f64],
) where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    node.loss.value_grad_into(ybar_i, out);
    let mut deg = 0.0;
    let mut acc = vec![0.0; out.len()];
    for (yj, xj) in neighbors {
        deg += 1.0;
        for ((a, y), x) in acc.iter_mut().zip(yj).zip(xj) {
            *a += y + x;
        }
    }
    for (((o, y), x), a) in out.iter_mut().zip(ybar_i).zip(xbar_i).zip(&acc) {
        *o = lambda * *o + deg * (y + x) - a;
    }
}

/// `(||A x||, ||theta||)` with `||A x||^2 = x^T Psi x` and
/// `theta = -A xbar / lambda`.
pub fn feasibility_diagnostics(graph: &Graph, x: &Stacked, xbar: &Stacked, lambda: f64) -> Result<(f64, f64)> {
    let ax = graph.laplacian_quadratic(x)?.max(0.0).sqrt();
    let theta = graph.laplacian_quadratic(xbar)?.max(0.0).sqrt() / lambda;
    Ok((ax, theta))
}

/// Each node's copy of the accumulator for itself and its neighbours.
#[derive(Debug, Clone)]
struct Accumulators {
    own: Stacked,
    /// `nb[i][s]` is node `i`'s copy of `xbar_j`, `j = neighbors(i)[s]`.
    nb: Vec<Vec<Vec<f64>>>,
}

impl Accumulators {
    fn zeros(graph: &Graph, dim: usize) -> Self {
        Self {
            own: Stacked::zeros(graph.num_nodes(), dim),
            nb: (0..graph.num_nodes())
                .map(|i| vec![vec![0.0; dim]; graph.degree(i)])
                .collect(),
        }
    }

    /// `xbar <- ratio (xbar + x)`, each node reading neighbour iterates
    /// from its mailbox.
    fn update(&mut self, net: &Network<'_>, x: &Stacked, ratio: f64) -> Result<()> {
        let nb = &self.nb;
        let updated: Vec<Result<Vec<Vec<f64>>>> = net.compute(|view| {
            let i = view.id();
            view.neighbor_blocks()
                .zip(&nb[i])
                .map(|((_, xj), acc)| Ok(acc.iter().zip(xj).map(|(a, b)| ratio * (a + b)).collect()))
                .collect()
        });
        for (i, u) in updated.into_iter().enumerate() {
            self.nb[i] = u?;
        }
        for i in 0..x.num_blocks() {
            let xi = x.block(i).to_vec();
            for (a, b) in self.own.block_mut(i).iter_mut().zip(&xi) {
                *a = ratio * (*a + b);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Gradients are assembled from mailbox contents after a broadcast.
    Sync,
    /// Nodes publish on activation; neighbour blocks are always current.
    Async,
}

/// Subproblem `P^(k)` backed by the simulated network.
struct Subproblem<'a, 'g> {
    nodes: &'a [NodeProblem],
    graph: &'g Graph,
    net: &'a mut Network<'g>,
    acc: &'a Accumulators,
    lambda: f64,
    lips: Vec<f64>,
    last_sent: &'a mut Stacked,
    mode: Mode,
}

impl Subproblem<'_, '_> {
    fn block_grad_direct(&self, i: usize, y: &Stacked, out: &mut [f64]) {
        let nbrs = self.graph.neighbors(i);
        local_gradient(
            &self.nodes[i],
            self.lambda,
            y.block(i),
            self.acc.own.block(i),
            nbrs.iter().zip(&self.acc.nb[i]).map(|(&j, xj)| (y.block(j), xj.as_slice())),
            out,
        );
    }
}

impl BlockObjective for Subproblem<'_, '_> {
    fn num_blocks(&self) -> usize {
        self.nodes.len()
    }

    fn block_dim(&self) -> usize {
        self.acc.own.dim()
    }

    fn lipschitz(&self) -> &[f64] {
        &self.lips
    }

    fn smooth_value(&self, y: &Stacked) -> f64 {
        let loss: f64 = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, p)| p.loss.value(y.block(i)))
            .sum();
        let mut shifted = y.clone();
        shifted
            .as_mut_slice()
            .iter_mut()
            .zip(self.acc.own.as_slice())
            .for_each(|(a, b)| *a += b);
        self.lambda * loss + 0.5 * self.graph.laplacian_quadratic(&shifted).unwrap_or(f64::NAN)
    }

    fn smooth_grad(&mut self, y: &Stacked, out: &mut Stacked) -> Result<()> {
        match self.mode {
            Mode::Sync => {
                if y != &*self.last_sent {
                    self.net.broadcast(y)?;
                    self.last_sent.clone_from(y);
                }
                let nodes = self.nodes;
                let acc = self.acc;
                let lambda = self.lambda;
                let dim = y.dim();
                let qs: Vec<Vec<f64>> = self.net.compute(|view| {
                    let i = view.id();
                    let mut q = vec![0.0; dim];
                    local_gradient(
                        &nodes[i],
                        lambda,
                        y.block(i),
                        acc.own.block(i),
                        view.neighbor_blocks().zip(&acc.nb[i]).map(|((_, yj), xj)| (yj, xj.as_slice())),
                        &mut q,
                    );
                    q
                });
                for (i, q) in qs.iter().enumerate() {
                    out.block_mut(i).copy_from_slice(q);
                }
                self.net.charge_grad_all();
            }
            Mode::Async => {
                for i in 0..self.nodes.len() {
                    self.block_grad_direct(i, y, out.block_mut(i));
                }
                self.net.charge_grad_all();
            }
        }
        Ok(())
    }

    fn smooth_grad_block(&mut self, i: usize, y: &Stacked, out: &mut [f64]) -> Result<()> {
        self.block_grad_direct(i, y, out);
        self.net.charge_grad(i);
        Ok(())
    }

    fn prox_block(&self, i: usize, v: &[f64], step: f64, out: &mut [f64]) {
        self.nodes[i].reg.prox_into(v, self.lambda * step, out);
    }

    fn reg_value_block(&self, i: usize, yi: &[f64]) -> f64 {
        self.lambda * self.nodes[i].reg.value(yi)
    }

    fn residual_block(&self, i: usize, grad_i: &[f64], yi: &[f64]) -> f64 {
        self.nodes[i].reg.subgrad_residual(self.lambda, grad_i, yi)
    }

    fn on_prox_round(&mut self) {
        self.net.charge_prox_all();
    }

    fn on_prox(&mut self, i: usize) {
        self.net.charge_prox(i);
    }

    fn on_publish(&mut self, i: usize, units: usize) -> Result<()> {
        self.net.charge_send(i, units as u64);
        Ok(())
    }

    fn on_control(&mut self, i: usize) {
        self.net.charge_control(i);
    }
}

/// Data handed to [`DfalObserver::on_outer`].
pub struct OuterRecord<'a> {
    pub k: usize,
    pub lambda: f64,
    pub lambda_next: f64,
    pub x: &'a Stacked,
    pub xbar_before: &'a Stacked,
    pub xbar_after: &'a Stacked,
    pub inner_iters: usize,
    pub stop: StopReason,
}

pub trait DfalObserver {
    /// Called after every MS-APG iteration with the gradient `q` that the
    /// nodes assembled from their messages.
    fn on_inner(&mut self, _k: usize, _lambda: f64, _ybar: &Stacked, _xbar: &Stacked, _q: &Stacked) -> Result<()> {
        Ok(())
    }

    fn on_outer(&mut self, _rec: &OuterRecord<'_>) -> Result<()> {
        Ok(())
    }

    /// Ends the run as converged after the current outer iteration.
    fn should_stop(&self) -> bool {
        false
    }
}

impl DfalObserver for () {}

#[derive(Debug, Clone)]
pub struct DfalOutcome {
    pub trace: RunTrace,
    /// Last completed outer iterate.
    pub x: Stacked,
    /// Accumulator after the last completed outer iteration.
    pub xbar: Stacked,
}

fn check_problem(nodes: &[NodeProblem], graph: &Graph) -> Result<usize> {
    if nodes.len() != graph.num_nodes() {
        return Err(Error::Dimension {
            expected: graph.num_nodes(),
            got: nodes.len(),
            context: "node problems vs graph nodes",
        });
    }
    let dim = nodes.first().map_or(0, NodeProblem::dim);
    if dim == 0 || nodes.iter().any(|p| p.dim() != dim) {
        return Err(Error::InvalidParameter("all nodes need the same positive dimension".into()));
    }
    Ok(dim)
}

fn start_point(opts: &RunOptions, n_nodes: usize, dim: usize) -> Result<Stacked> {
    match &opts.x0 {
        Some(x0) if x0.num_blocks() == n_nodes && x0.dim() == dim => Ok(x0.clone()),
        Some(x0) => Err(Error::Dimension {
            expected: n_nodes * dim,
            got: x0.as_slice().len(),
            context: "start point",
        }),
        None => Ok(Stacked::zeros(n_nodes, dim)),
    }
}

/// Bookkeeping shared by the synchronous and asynchronous loops.
struct OuterLoop<'a> {
    nodes: &'a [NodeProblem],
    graph: &'a Graph,
    params: &'a DfalParams,
    reference: Option<f64>,
    rows: Vec<TraceRow>,
}

impl OuterLoop<'_> {
    /// Records row `k`; returns true when benchmark targets are met.
    fn record(
        &mut self,
        k: usize,
        x: &Stacked,
        xbar_after: &Stacked,
        lambda_next: f64,
        net: &Network<'_>,
        inner_iters: usize,
        stop: StopReason,
    ) -> Result<bool> {
        let f_sum: f64 = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, p)| p.composite_value(x.block(i)))
            .sum();
        let cv = consensus_violation(self.graph, x);
        let rel = self.reference.map_or(f64::NAN, |f| relative_gap(f_sum, f));
        let (_, dual_norm) = feasibility_diagnostics(self.graph, x, xbar_after, lambda_next)?;
        let l = net.ledger();
        self.rows.push(TraceRow {
            k,
            lambda: self.params.lambda(k),
            f_sum,
            rel_subopt: rel,
            cv,
            comm_per_node_max: l.max_sent_per_node(),
            prox_count: l.max_prox_per_node(),
            grad_count: l.max_grad_per_node(),
            dual_norm,
            inner_iters,
            stop_reason: stop.as_str().to_string(),
        });
        if !f_sum.is_finite() {
            return Err(Error::NonFinite("objective".into()));
        }
        Ok(self.reference.is_some() && rel <= self.params.eps_opt && cv <= self.params.eps_feas)
    }
}

fn classify(err: Error) -> Result<Termination> {
    match err {
        Error::BudgetExhausted => Ok(Termination::Timeout),
        Error::NonFinite(_) => Ok(Termination::NonFinite),
        e => Err(e),
    }
}

/// Synchronous DFAL: MS-APG on every subproblem, warm-started at the
/// previous outer iterate, until the residual test or the inner cap.
pub fn dfal_solve<B: DfalObserver + ?Sized>(
    nodes: &[NodeProblem],
    graph: &Graph,
    params: &DfalParams,
    opts: &RunOptions,
    observer: &mut B,
) -> Result<DfalOutcome> {
    let dim = check_problem(nodes, graph)?;
    params.validate(tau_bar(nodes))?;
    let n_nodes = graph.num_nodes();
    let deadline = Deadline::new(opts.budget);
    let loss_l: Vec<f64> = nodes.iter().map(|p| p.loss.lipschitz()).collect();
    let mut x = start_point(opts, n_nodes, dim)?;
    let mut net = Network::new(graph, dim, opts.exec);
    net.broadcast(&x)?;
    let mut last_sent = x.clone();
    let mut acc = Accumulators::zeros(graph, dim);
    let mut lp = OuterLoop {
        nodes,
        graph,
        params,
        reference: opts.reference,
        rows: Vec::new(),
    };
    let mut termination = Termination::OuterCap;

    for k in 1..=params.max_outer {
        let lambda = params.lambda(k);
        let ms_opts = MsApgOptions {
            max_iters: params.inner_cap(k, &loss_l),
            residual_tol: Some(params.xi(k) / (n_nodes as f64).sqrt()),
            exec: opts.exec,
        };
        let result = {
            let xbar_view = acc.own.clone();
            let mut sub = Subproblem {
                nodes,
                graph,
                net: &mut net,
                acc: &acc,
                lambda,
                lips: params.block_lipschitz(k, &loss_l),
                last_sent: &mut last_sent,
                mode: Mode::Sync,
            };
            let mut inner = |_ell: usize, ybar: &Stacked, q: &Stacked, _y: &Stacked| -> Result<()> {
                observer.on_inner(k, lambda, ybar, &xbar_view, q)?;
                if deadline.expired() {
                    return Err(Error::BudgetExhausted);
                }
                Ok(())
            };
            ms_apg(&mut sub, &x, &ms_opts, &mut inner)
        };
        let out = match result {
            Ok(out) => out,
            Err(e) => {
                termination = classify(e)?;
                break;
            }
        };
        if !out.point.is_finite() {
            termination = Termination::NonFinite;
            break;
        }
        let x_new = out.point;
        // neighbours already hold ybar after a residual stop
        if x_new != last_sent {
            net.broadcast(&x_new)?;
            last_sent.clone_from(&x_new);
        }
        let lambda_next = params.lambda(k + 1);
        let xbar_before = acc.own.clone();
        acc.update(&net, &x_new, lambda_next / lambda)?;
        let done = match lp.record(k, &x_new, &acc.own, lambda_next, &net, out.iterations, out.stop) {
            Ok(d) => d,
            Err(e) => {
                termination = classify(e)?;
                x = x_new;
                break;
            }
        };
        observer.on_outer(&OuterRecord {
            k,
            lambda,
            lambda_next,
            x: &x_new,
            xbar_before: &xbar_before,
            xbar_after: &acc.own,
            inner_iters: out.iterations,
            stop: out.stop,
        })?;
        x = x_new;
        if done || observer.should_stop() {
            termination = Termination::Converged;
            break;
        }
        if deadline.expired() {
            termination = Termination::Timeout;
            break;
        }
    }

    let mut trace = RunTrace {
        algorithm: "dfal".into(),
        rows: lp.rows,
        termination,
        reference: opts.reference,
        wall_secs: deadline.elapsed_secs(),
        ledger: net.ledger_snapshot(),
    };
    trace.finish(termination);
    Ok(DfalOutcome {
        trace,
        x,
        xbar: acc.own,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AsyncOracle {
    Rbcd,
    Arbcd,
}

#[derive(Debug, Clone, Copy)]
pub struct AsyncOptions {
    pub oracle: AsyncOracle,
    /// Overall failure probability.
    pub p: f64,
    pub seed: u64,
    pub c_estimate: CEstimate,
    /// Residual test every this many events; defaults to `N`.
    pub check_every: Option<usize>,
}

impl AsyncOptions {
    pub fn new(oracle: AsyncOracle, p: f64, seed: u64, num_nodes: usize) -> Self {
        Self {
            oracle,
            p,
            seed,
            c_estimate: CEstimate::Pilot { steps: 20 * num_nodes },
            check_every: None,
        }
    }
}

/// Budget bookkeeping for one asynchronous subproblem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemBudget {
    pub k: usize,
    pub alpha: f64,
    pub c: f64,
    /// RBCD: `2 N C / alpha (1 + ln(1/p_sub))`; ARBCD: `K * T`.
    pub budget_raw: f64,
    /// All events, including the pilot run that estimates `C`.
    pub events: usize,
    pub pilot_events: usize,
    pub stop: StopReason,
}

#[derive(Debug, Clone)]
pub struct AsyncOutcome {
    pub trace: RunTrace,
    pub x: Stacked,
    pub budgets: Vec<SubproblemBudget>,
    /// Per-subproblem failure probability `1 - (1-p)^(1/N(eps))`.
    pub p_sub: f64,
}

/// Asynchronous DFAL: each subproblem is handed to a randomized block
/// oracle driven by uniform node activations.
pub fn async_dfal_solve(
    nodes: &[NodeProblem],
    graph: &Graph,
    params: &DfalParams,
    opts: &RunOptions,
    aopts: &AsyncOptions,
) -> Result<AsyncOutcome> {
    let dim = check_problem(nodes, graph)?;
    params.validate(tau_bar(nodes))?;
    if !(aopts.p > 0.0 && aopts.p < 1.0) {
        return Err(Error::InvalidParameter(format!("p must lie in (0,1), got {}", aopts.p)));
    }
    let n_nodes = graph.num_nodes();
    let deadline = Deadline::new(opts.budget);
    let loss_l: Vec<f64> = nodes.iter().map(|p| p.loss.lipschitz()).collect();
    let p_sub = 1.0 - (1.0 - aopts.p).powf(1.0 / params.max_outer as f64);
    let mut x = start_point(opts, n_nodes, dim)?;
    let mut net = Network::new(graph, dim, opts.exec);
    let mut last_sent = x.clone();
    let mut acc = Accumulators::zeros(graph, dim);
    let mut clock = AsyncClock::new(aopts.seed, n_nodes);
    let mut budgets = Vec::new();
    let mut lp = OuterLoop {
        nodes,
        graph,
        params,
        reference: opts.reference,
        rows: Vec::new(),
    };
    let mut termination = Termination::OuterCap;
    let check = ResidualCheck {
        tol: 0.0,
        every: aopts.check_every.unwrap_or(n_nodes).max(1),
    };

    for k in 1..=params.max_outer {
        let lambda = params.lambda(k);
        let alpha = params.alpha(k);
        let rc = ResidualCheck {
            tol: params.xi(k) / (n_nodes as f64).sqrt(),
            ..check
        };
        let lips: Vec<f64> = loss_l
            .iter()
            .enumerate()
            .map(|(i, l)| lambda * l + graph.degree(i) as f64)
            .collect();
        let result: Result<(Stacked, SubproblemBudget)> = (|| {
            let mut sub = Subproblem {
                nodes,
                graph,
                net: &mut net,
                acc: &acc,
                lambda,
                lips,
                last_sent: &mut last_sent,
                mode: Mode::Async,
            };
            match aopts.oracle {
                AsyncOracle::Rbcd => {
                    let (start, c, pilot_events) = match aopts.c_estimate {
                        CEstimate::Fixed(c) => (x.clone(), c, 0),
                        CEstimate::Pilot { steps } => {
                            let phi0 = sub.value(&x);
                            let (best, phi_best) = pilot_best(&mut sub, &x, &mut clock, steps)?;
                            let c = rbcd_c_from_best(sub.lipschitz(), &x, phi0, &best, phi_best);
                            (best, c, steps)
                        }
                    };
                    let out = rbcd_run(
                        &mut sub,
                        &start,
                        &mut clock,
                        &RbcdOptions {
                            max_iters: rbcd_budget(n_nodes, c, alpha, p_sub),
                            residual_check: Some(rc),
                            record_values: false,
                            deadline: Some(deadline),
                        },
                    )?;
                    Ok((
                        out.y,
                        SubproblemBudget {
                            k,
                            alpha,
                            c,
                            budget_raw: rbcd_budget_raw(n_nodes, c, alpha, p_sub),
                            events: pilot_events + out.iterations,
                            pilot_events,
                            stop: out.stop,
                        },
                    ))
                }
                AsyncOracle::Arbcd => {
                    let out = arbcd_run(
                        &mut sub,
                        &x,
                        alpha,
                        p_sub,
                        aopts.c_estimate,
                        &mut clock,
                        &ArbcdOptions {
                            residual_check: Some(rc),
                            deadline: Some(deadline),
                        },
                    )?;
                    Ok((
                        out.best,
                        SubproblemBudget {
                            k,
                            alpha,
                            c: out.c_used,
                            budget_raw: (out.restarts * out.iters_per_call) as f64,
                            events: out.total_iters,
                            pilot_events: match aopts.c_estimate {
                                CEstimate::Pilot { steps } => steps,
                                CEstimate::Fixed(_) => 0,
                            },
                            stop: out.stop,
                        },
                    ))
                }
            }
        })();
        let (x_new, budget) = match result {
            Ok(r) => r,
            Err(e) => {
                termination = classify(e)?;
                break;
            }
        };
        if !x_new.is_finite() {
            termination = Termination::NonFinite;
            break;
        }
        // every block was published on its last activation
        net.deliver_uncharged(&x_new)?;
        let lambda_next = params.lambda(k + 1);
        acc.update(&net, &x_new, lambda_next / lambda)?;
        let done = match lp.record(k, &x_new, &acc.own, lambda_next, &net, budget.events, budget.stop) {
            Ok(d) => d,
            Err(e) => {
                termination = classify(e)?;
                x = x_new;
                break;
            }
        };
        budgets.push(budget);
        x = x_new;
        if done {
            termination = Termination::Converged;
            break;
        }
        if deadline.expired() {
            termination = Termination::Timeout;
            break;
        }
    }

    let mut trace = RunTrace {
        algorithm: match aopts.oracle {
            AsyncOracle::Rbcd => "afal-rbcd".into(),
            AsyncOracle::Arbcd => "afal-arbcd".into(),
        },
        rows: lp.rows,
        termination,
        reference: opts.reference,
        wall_secs: deadline.elapsed_secs(),
        ledger: net.ledger_snapshot(),
    };
    trace.finish(termination);
    Ok(AsyncOutcome {
        trace,
        x,
        budgets,
        p_sub,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcs::{GroupPartition, Loss, QuadraticLoss, SparseGroupReg};

    fn zero_loss_node(n: usize) -> NodeProblem {
        NodeProblem::new(
            SparseGroupReg::new(0.1, 0.0, GroupPartition::single(n)).unwrap(),
            Loss::Quadratic(QuadraticLoss::new(crate::linalg::Matrix::zeros(1, n), vec![0.0]).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn local_gradient_star_row() {
        let g = Graph::star(3).unwrap();
        let node = zero_loss_node(1);
        let y = Stacked::from_blocks(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let zero = [0.0];
        let mut q = [0.0];
        local_gradient(
            &node,
            1.0,
            y.block(0),
            &zero,
            g.neighbors(0).iter().map(|&j| (y.block(j), &zero[..])),
            &mut q,
        );
        assert_eq!(q, [-3.0]);
    }

    #[test]
    fn default_params_examples() {
        let g = Graph::star(5).unwrap();
        let nodes: Vec<_> = (0..5)
            .map(|_| {
                NodeProblem::new(
                    SparseGroupReg::new(1.0, 1.0, GroupPartition::single(1)).unwrap(),
                    Loss::Quadratic(QuadraticLoss::new(crate::linalg::Matrix::identity(1), vec![0.0]).unwrap()),
                )
                .unwrap()
            })
            .collect();
        let p = default_params(&nodes, &g, None).unwrap();
        assert_eq!(p.lambda1, 1.0);
        assert!((p.alpha1 - 0.2).abs() < 1e-15);
        assert_eq!(p.xi1, 1.0);
        assert!(p.validate(2.0).is_ok());

        let nodes: Vec<_> = (0..5).map(|_| zero_loss_node(2)).collect();
        let bad: Vec<_> = nodes
            .into_iter()
            .map(|mut p| {
                p.reg.beta1 = 0.0;
                p
            })
            .collect();
        assert!(default_params(&bad, &g, None).is_err());
    }

    #[test]
    fn schedule_is_geometric() {
        let p = DfalParams {
            lambda1: 0.5,
            alpha1: 0.2,
            xi1: 0.1,
            c: 0.7,
            bx: 1.0,
            psi_max: 5.0,
            max_outer: 10,
            eps_opt: 1e-3,
            eps_feas: 1e-4,
        };
        assert!((p.lambda(3) - 0.5 * 0.49).abs() < 1e-15);
        assert!((p.alpha(2) - 0.2 * 0.49).abs() < 1e-15);
        assert!((p.xi(2) - 0.1 * 0.49).abs() < 1e-15);
    }
}
