//! ADMM baselines on the same network simulator.
//!
//! Both methods work on the broadcast formulation `Omega_ij x_j = z_ij`.
//! ADMM takes the prox of the whole `F_i`; SADMM splits `F_i` into `rho_i`
//! (closed-form prox) and `gamma_i`. The non-closed-form proxes are solved
//! by a nested accelerated gradient method.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcs::{NodeProblem, SmoothLoss};
use crate::graph::Graph;
use crate::linalg::{norm2, Stacked};
use crate::netsim::{Network, NodeView};
use crate::solver::{apg_centralized, ApgOptions, StopReason};
use crate::trace::{
    consensus_violation, relative_gap, split_consensus_violation, Deadline, RunOptions, RunTrace, Termination,
    TraceRow,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmOptions {
    /// Penalty `c > 0`.
    pub c: f64,
    pub max_iters: usize,
    pub eps_opt: f64,
    pub eps_feas: f64,
    /// Residual target for the nested prox solves.
    pub nested_tol: f64,
    pub nested_max_iters: usize,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iters: 10_000,
            eps_opt: 1e-3,
            eps_feas: 1e-4,
            nested_tol: 1e-9,
            nested_max_iters: 1_000_000,
        }
    }
}

/// `argmin_x w (rho(x) + gamma(x)) + 1/2 ||x - center||^2`, or the same
/// without `rho` when `with_reg` is false.
///
/// Accelerated proximal gradient for the 1-strongly convex objective,
/// stopped when the minimum-norm subgradient is below `tol`. Returns the
/// point and the number of gradient evaluations.
pub fn nested_prox(
    node: &NodeProblem,
    with_reg: bool,
    w: f64,
    center: &[f64],
    start: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = center.len();
    let l = w * node.loss.lipschitz() + 1.0;
    let q = 1.0 / l;
    let beta = (1.0 - q.sqrt()) / (1.0 + q.sqrt());
    let mut x = start.to_vec();
    let mut z = start.to_vec();
    let mut g = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    for it in 1..=max_iters {
        node.loss.value_grad_into(&z, &mut g);
        for ((gi, zi), ci) in g.iter_mut().zip(&z).zip(center) {
            *gi = w * *gi + (zi - ci);
        }
        let res = if with_reg {
            node.reg.subgrad_residual(w, &g, &z)
        } else {
            norm2(&g)
        };
        if !res.is_finite() {
            return Err(Error::NonFinite("nested prox gradient".into()));
        }
        if res <= tol {
            return Ok((z, it));
        }
        for ((vi, zi), gi) in v.iter_mut().zip(&z).zip(&g) {
            *vi = zi - gi / l;
        }
        if with_reg {
            node.reg.prox_into(&v, w / l, &mut x_new);
        } else {
            x_new.copy_from_slice(&v);
        }
        for ((zi, xn), xo) in z.iter_mut().zip(&x_new).zip(&x) {
            *zi = xn + beta * (xn - xo);
        }
        std::mem::swap(&mut x, &mut x_new);
    }
    Err(Error::NestedSolver(format!(
        "prox did not reach residual {tol:e} in {max_iters} iterations"
    )))
}

/// `sum_{j in N_i} Omega_ji v_j` from the own block and neighbour blocks.
fn laplacian_row<'a>(d: usize, own: &[f64], neighbors: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut out: Vec<f64> = own.iter().map(|v| d as f64 * v).collect();
    for nb in neighbors {
        for (o, v) in out.iter_mut().zip(nb) {
            *o -= v;
        }
    }
    out
}

fn half<'a>(view: &NodeView<'a>, second: bool, dim: usize) -> impl Iterator<Item = &'a [f64]> + 'a {
    view.neighbor_blocks()
        .map(move |(_, b)| if second { &b[dim..2 * dim] } else { &b[..dim] })
}

fn check(nodes: &[NodeProblem], graph: &Graph, opts: &AdmmOptions) -> Result<usize> {
    if nodes.len() != graph.num_nodes() {
        return Err(Error::Dimension {
            expected: graph.num_nodes(),
            got: nodes.len(),
            context: "node problems vs graph nodes",
        });
    }
    if !(opts.c > 0.0) {
        return Err(Error::InvalidParameter(format!("ADMM penalty must be positive, got {}", opts.c)));
    }
    let dim = nodes.first().map_or(0, NodeProblem::dim);
    if dim == 0 || nodes.iter().any(|p| p.dim() != dim) {
        return Err(Error::InvalidParameter("all nodes need the same positive dimension".into()));
    }
    Ok(dim)
}

fn concat(a: &Stacked, b: &Stacked) -> Stacked {
    let blocks: Vec<Vec<f64>> = (0..a.num_blocks())
        .map(|i| {
            let mut v = a.block(i).to_vec();
            v.extend_from_slice(b.block(i));
            v
        })
        .collect();
    Stacked::from_blocks(&blocks).expect("equal shapes")
}

fn add(a: &Stacked, b: &Stacked) -> Stacked {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x + y).collect();
    Stacked::from_flat(a.num_blocks(), a.dim(), data).expect("equal shapes")
}

/// `s_i = sum_{j in N_i} Omega_ij v_j / (d_i + 1)` computed at every node
/// from its mailbox (first or second half of the messages).
fn neighbourhood_average(net: &Network<'_>, own: &Stacked, second: bool) -> Stacked {
    let dim = own.dim();
    let rows = net.compute(|view| {
        let d = view.degree();
        let mut s = laplacian_row(d, own.block(view.id()), half(view, second, dim));
        s.iter_mut().for_each(|v| *v /= (d + 1) as f64);
        s
    });
    Stacked::from_blocks(&rows).expect("equal shapes")
}

struct Recorder<'a> {
    nodes: &'a [NodeProblem],
    graph: &'a Graph,
    reference: Option<f64>,
    opts: &'a AdmmOptions,
    rows: Vec<TraceRow>,
}

impl Recorder<'_> {
    fn push(&mut self, k: usize, point: &Stacked, cv: f64, net: &Network<'_>, inner: usize) -> Result<bool> {
        let f_sum: f64 = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, p)| p.composite_value(point.block(i)))
            .sum();
        let rel = self.reference.map_or(f64::NAN, |f| relative_gap(f_sum, f));
        let l = net.ledger();
        self.rows.push(TraceRow {
            k,
            lambda: self.opts.c,
            f_sum,
            rel_subopt: rel,
            cv,
            comm_per_node_max: l.max_sent_per_node(),
            prox_count: l.max_prox_per_node(),
            grad_count: l.max_grad_per_node(),
            dual_norm: f64::NAN,
            inner_iters: inner,
            stop_reason: "iter".into(),
        });
        if !f_sum.is_finite() {
            return Err(Error::NonFinite("objective".into()));
        }
        let _ = self.graph;
        Ok(self.reference.is_some() && rel <= self.opts.eps_opt && cv <= self.opts.eps_feas)
    }
}

fn finish(algorithm: &str, rec: Recorder<'_>, termination: Termination, deadline: Deadline, net: &Network<'_>) -> RunTrace {
    let mut trace = RunTrace {
        algorithm: algorithm.into(),
        rows: rec.rows,
        termination,
        reference: rec.reference,
        wall_secs: deadline.elapsed_secs(),
        ledger: net.ledger_snapshot(),
    };
    trace.finish(termination);
    trace
}

fn classify(err: Error) -> Result<Termination> {
    match err {
        Error::NonFinite(_) => Ok(Termination::NonFinite),
        e => Err(e),
    }
}

#[derive(Debug, Clone)]
pub struct SadmmOutcome {
    pub trace: RunTrace,
    pub x: Stacked,
    pub y: Stacked,
    /// Running sums `p_i`.
    pub p: Stacked,
    /// History of `x^(k)`, `k = 0..`, kept when requested.
    pub x_history: Vec<Stacked>,
}

/// Split ADMM. The reported objective is `sum_i F_i((x_i + y_i)/2)` and
/// the consensus violation includes `max_i ||x_i - y_i||`.
pub fn sadmm_solve(
    nodes: &[NodeProblem],
    graph: &Graph,
    opts: &AdmmOptions,
    run: &RunOptions,
    keep_history: bool,
) -> Result<SadmmOutcome> {
    let dim = check(nodes, graph, opts)?;
    let nn = graph.num_nodes();
    let deadline = Deadline::new(run.budget);
    let mut net = Network::new(graph, dim, run.exec);
    let mut x = run.x0.clone().unwrap_or_else(|| Stacked::zeros(nn, dim));
    let mut y = x.clone();
    let mut p = Stacked::zeros(nn, dim);
    let mut pt = Stacked::zeros(nn, dim);
    let mut r = Stacked::zeros(nn, dim);
    net.broadcast(&concat(&x, &y))?;
    let mut s = neighbourhood_average(&net, &x, false);
    let mut st = neighbourhood_average(&net, &y, true);
    net.broadcast(&concat(&add(&s, &p), &add(&st, &pt)))?;
    let mut history = Vec::new();
    if keep_history {
        history.push(x.clone());
    }
    let mut rec = Recorder {
        nodes,
        graph,
        reference: run.reference,
        opts,
        rows: Vec::new(),
    };
    let mut termination = Termination::OuterCap;

    for k in 1..=opts.max_iters {
        // prox centres from the (s + p, s~ + p~) messages, then both proxes
        let sp = add(&s, &p);
        let stp = add(&st, &pt);
        let (xr, yr, rr) = (&x, &y, &r);
        let results: Vec<Result<(Vec<f64>, Vec<f64>, usize)>> = net.compute(|view| {
            let i = view.id();
            let d = view.degree();
            let denom = (d * d + d + 1) as f64;
            let w = 1.0 / (opts.c * denom);
            let ax = laplacian_row(d, sp.block(i), half(view, false, dim));
            let ay = laplacian_row(d, stp.block(i), half(view, true, dim));
            let (xi, yi, ri) = (xr.block(i), yr.block(i), rr.block(i));
            let mut xc = vec![0.0; dim];
            let mut yc = vec![0.0; dim];
            for j in 0..dim {
                let split = (xi[j] - yi[j]) / 2.0;
                xc[j] = xi[j] - (ax[j] + ri[j] + split) / denom;
                yc[j] = yi[j] - (ay[j] - ri[j] - split) / denom;
            }
            let mut xn = vec![0.0; dim];
            nodes[i].reg.prox_into(&xc, w, &mut xn);
            let (yn, iters) = nested_prox(&nodes[i], false, w, &yc, yi, opts.nested_tol, opts.nested_max_iters)?;
            Ok((xn, yn, iters))
        });
        let mut max_inner = 0;
        let mut failed = None;
        for (i, res) in results.into_iter().enumerate() {
            match res {
                Ok((xn, yn, iters)) => {
                    x.block_mut(i).copy_from_slice(&xn);
                    y.block_mut(i).copy_from_slice(&yn);
                    net.charge_prox(i);
                    for _ in 0..iters {
                        net.charge_grad(i);
                    }
                    max_inner = max_inner.max(iters);
                }
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = failed {
            termination = classify(e)?;
            break;
        }
        net.broadcast(&concat(&x, &y))?;
        s = neighbourhood_average(&net, &x, false);
        st = neighbourhood_average(&net, &y, true);
        for (((pv, ptv), sv), stv) in p
            .as_mut_slice()
            .iter_mut()
            .zip(pt.as_mut_slice())
            .zip(s.as_slice())
            .zip(st.as_slice())
        {
            *pv += sv;
            *ptv += stv;
        }
        for ((rv, xv), yv) in r.as_mut_slice().iter_mut().zip(x.as_slice()).zip(y.as_slice()) {
            *rv += (xv - yv) / 2.0;
        }
        net.broadcast(&concat(&add(&s, &p), &add(&st, &pt)))?;
        if keep_history {
            history.push(x.clone());
        }

        let mid = Stacked::from_flat(
            nn,
            dim,
            x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| (a + b) / 2.0).collect(),
        )?;
        let cv = split_consensus_violation(graph, &x, &y);
        match rec.push(k, &mid, cv, &net, max_inner) {
            Ok(true) => {
                termination = Termination::Converged;
                break;
            }
            Ok(false) => {}
            Err(e) => {
                termination = classify(e)?;
                break;
            }
        }
        if deadline.expired() {
            termination = Termination::Timeout;
            break;
        }
    }
    Ok(SadmmOutcome {
        trace: finish("sadmm", rec, termination, deadline, &net),
        x,
        y,
        p,
        x_history: history,
    })
}

#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    pub trace: RunTrace,
    pub x: Stacked,
}

/// Direct ADMM: every node takes the prox of `F_i` with weight
/// `1/(c (d_i^2 + d_i))` around its prox centre.
///
/// Charged 3 vectors per neighbour per iteration.
pub fn admm_solve(nodes: &[NodeProblem], graph: &Graph, opts: &AdmmOptions, run: &RunOptions) -> Result<AdmmOutcome> {
    let dim = check(nodes, graph, opts)?;
    let nn = graph.num_nodes();
    let deadline = Deadline::new(run.budget);
    let mut net = Network::new(graph, dim, run.exec);
    let mut x = run.x0.clone().unwrap_or_else(|| Stacked::zeros(nn, dim));
    let mut p = Stacked::zeros(nn, dim);
    net.broadcast(&x)?;
    let mut s = neighbourhood_average(&net, &x, false);
    net.broadcast(&add(&s, &p))?;
    let mut rec = Recorder {
        nodes,
        graph,
        reference: run.reference,
        opts,
        rows: Vec::new(),
    };
    let mut termination = Termination::OuterCap;

    for k in 1..=opts.max_iters {
        let sp = add(&s, &p);
        let xr = &x;
        let results: Vec<Result<(Vec<f64>, usize)>> = net.compute(|view| {
            let i = view.id();
            let d = view.degree();
            let xi = xr.block(i);
            if d == 0 {
                // isolated node: the prox term vanishes
                let out = apg_centralized(
                    &nodes[i].loss,
                    &nodes[i].reg,
                    nodes[i].loss.lipschitz().max(f64::MIN_POSITIVE),
                    xi,
                    &ApgOptions {
                        max_iters: opts.nested_max_iters,
                        residual_tol: Some(opts.nested_tol),
                        record_values: false,
                        restart: true,
                    },
                )?;
                if out.stop != StopReason::Residual {
                    return Err(Error::NestedSolver("single-node solve hit its cap".into()));
                }
                return Ok((out.x, out.iterations));
            }
            let denom = (d * d + d) as f64;
            let w = 1.0 / (opts.c * denom);
            let ax = laplacian_row(d, sp.block(i), half(view, false, dim));
            let xc: Vec<f64> = xi.iter().zip(&ax).map(|(a, b)| a - b / denom).collect();
            nested_prox(&nodes[i], true, w, &xc, xi, opts.nested_tol, opts.nested_max_iters)
        });
        let mut max_inner = 0;
        let mut failed = None;
        for (i, res) in results.into_iter().enumerate() {
            match res {
                Ok((xn, iters)) => {
                    x.block_mut(i).copy_from_slice(&xn);
                    net.charge_prox(i);
                    for _ in 0..iters {
                        net.charge_grad(i);
                    }
                    max_inner = max_inner.max(iters);
                }
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = failed {
            termination = classify(e)?;
            break;
        }
        net.broadcast(&x)?;
        s = neighbourhood_average(&net, &x, false);
        for (pv, sv) in p.as_mut_slice().iter_mut().zip(s.as_slice()) {
            *pv += sv;
        }
        net.broadcast(&add(&s, &p))?;
        net.charge_broadcast_units(1);

        let cv = consensus_violation(graph, &x);
        match rec.push(k, &x, cv, &net, max_inner) {
            Ok(true) => {
                termination = Termination::Converged;
                break;
            }
            Ok(false) => {}
            Err(e) => {
                termination = classify(e)?;
                break;
            }
        }
        if deadline.expired() {
            termination = Termination::Timeout;
            break;
        }
    }
    Ok(AdmmOutcome {
        trace: finish("admm", rec, termination, deadline, &net),
        x,
    })
}
