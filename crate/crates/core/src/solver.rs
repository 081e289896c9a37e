//! Block-structured first-order solvers for
//! `Phi(y) = sum_i rho_i(y_i) + f(y)`:
//! APG, multi-step APG with per-block steps `1/L_i`, randomized block
//! coordinate descent, and its accelerated variant with restarts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcs::{NodeProblem, SmoothLoss, SparseGroupReg};
use crate::linalg::Stacked;
use crate::par::{self, Exec};
use crate::trace::Deadline;

/// Composite objective split into `N` blocks of equal dimension.
pub trait BlockObjective {
    fn num_blocks(&self) -> usize;
    fn block_dim(&self) -> usize;
    /// Block curvature constants `L_i > 0`.
    fn lipschitz(&self) -> &[f64];
    fn smooth_value(&self, y: &Stacked) -> f64;
    fn smooth_grad(&mut self, y: &Stacked, out: &mut Stacked) -> Result<()>;
    /// `grad_{y_i} f(y)`.
    fn smooth_grad_block(&mut self, i: usize, y: &Stacked, out: &mut [f64]) -> Result<()>;
    /// `prox_{step * rho_i}(v)`.
    fn prox_block(&self, i: usize, v: &[f64], step: f64, out: &mut [f64]);
    fn reg_value_block(&self, i: usize, yi: &[f64]) -> f64;
    /// Minimum-norm element of `d rho_i(y_i) + grad_i`.
    fn residual_block(&self, i: usize, grad_i: &[f64], yi: &[f64]) -> f64;

    fn value(&self, y: &Stacked) -> f64 {
        self.smooth_value(y)
            + (0..self.num_blocks())
                .map(|i| self.reg_value_block(i, y.block(i)))
                .sum::<f64>()
    }

    /// Called after every full prox sweep.
    fn on_prox_round(&mut self) {}
    /// Called after a single-block prox.
    fn on_prox(&mut self, _i: usize) {}
    /// Node `i` shares `units` blocks with its neighbours.
    fn on_publish(&mut self, _i: usize, _units: usize) -> Result<()> {
        Ok(())
    }
    /// Termination notice from node `i`.
    fn on_control(&mut self, _i: usize) {}
}

/// Source of block indices for randomized methods.
pub trait BlockSampler {
    fn next_block(&mut self) -> usize;
}

impl BlockSampler for crate::netsim::AsyncClock {
    fn next_block(&mut self) -> usize {
        self.next_node()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    /// Every block passed the residual test.
    Residual,
    /// Iteration cap reached.
    Cap,
    /// Randomized oracle exhausted its iteration budget.
    Budget,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Residual => "residual",
            StopReason::Cap => "cap",
            StopReason::Budget => "budget",
        }
    }
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Momentum recurrence `t+ = (1 + sqrt(1 + 4 t^2)) / 2`.
#[inline]
pub fn next_momentum(t: f64) -> f64 {
    (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0
}

/// ARBCD recurrence `t+ = (1 + sqrt(1 + (2 N t)^2)) / (2 N)`.
#[inline]
pub fn next_arbcd_momentum(t: f64, num_blocks: usize) -> f64 {
    let n = num_blocks as f64;
    (1.0 + (1.0 + (2.0 * n * t).powi(2)).sqrt()) / (2.0 * n)
}

// ---------------------------------------------------------------------------
// MS-APG
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct MsApgOptions {
    pub max_iters: usize,
    /// Per-block threshold on the residual at the extrapolated point.
    pub residual_tol: Option<f64>,
    pub exec: Exec,
}

#[derive(Debug, Clone)]
pub struct MsApgOutcome {
    /// `ybar` on a residual stop, `y` on a cap stop.
    pub point: Stacked,
    pub iterations: usize,
    pub stop: StopReason,
    /// Largest block residual at the last checked extrapolated point.
    pub max_residual: f64,
}

/// Per-iteration hook: `(ell, ybar, grad f(ybar), y)`.
pub trait MsApgObserver {
    fn on_iteration(&mut self, ell: usize, ybar: &Stacked, grad: &Stacked, y: &Stacked) -> Result<()>;
}

impl MsApgObserver for () {
    fn on_iteration(&mut self, _: usize, _: &Stacked, _: &Stacked, _: &Stacked) -> Result<()> {
        Ok(())
    }
}

impl<F> MsApgObserver for F
where
    F: FnMut(usize, &Stacked, &Stacked, &Stacked) -> Result<()>,
{
    fn on_iteration(&mut self, ell: usize, ybar: &Stacked, grad: &Stacked, y: &Stacked) -> Result<()> {
        self(ell, ybar, grad, y)
    }
}

/// Multi-step accelerated proximal gradient: block `i` steps with `1/L_i`.
pub fn ms_apg<O, B>(obj: &mut O, y0: &Stacked, opts: &MsApgOptions, observer: &mut B) -> Result<MsApgOutcome>
where
    O: BlockObjective + Sync,
    B: MsApgObserver + ?Sized,
{
    let nb = obj.num_blocks();
    if y0.num_blocks() != nb || y0.dim() != obj.block_dim() {
        return Err(Error::Dimension {
            expected: nb * obj.block_dim(),
            got: y0.as_slice().len(),
            context: "MS-APG start point",
        });
    }
    if obj.lipschitz().iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidParameter("MS-APG needs L_i > 0 for all blocks".into()));
    }
    if opts.max_iters == 0 {
        return Err(Error::InvalidParameter("MS-APG iteration cap must be positive".into()));
    }
    let mut y = y0.clone();
    let mut ybar = y0.clone();
    let mut y_new = y0.clone();
    let mut grad = Stacked::zeros(nb, obj.block_dim());
    let mut t = 1.0;
    let mut max_residual = f64::INFINITY;

    for ell in 1..=opts.max_iters {
        obj.smooth_grad(&ybar, &mut grad)?;
        check_finite(grad.as_slice(), "MS-APG gradient")?;

        {
            let o: &O = obj;
            let lips = o.lipschitz();
            let ybar_ref = &ybar;
            let grad_ref = &grad;
            let mut blocks: Vec<&mut [f64]> = y_new.blocks_mut().collect();
            par::for_each_mut(opts.exec, &mut blocks, |i, out| {
                let li = lips[i];
                let v: Vec<f64> = ybar_ref
                    .block(i)
                    .iter()
                    .zip(grad_ref.block(i))
                    .map(|(yb, g)| yb - g / li)
                    .collect();
                o.prox_block(i, &v, 1.0 / li, out);
            });
        }
        obj.on_prox_round();
        observer.on_iteration(ell, &ybar, &grad, &y_new)?;

        if let Some(tol) = opts.residual_tol {
            let o: &O = obj;
            max_residual = (0..nb)
                .map(|i| o.residual_block(i, grad.block(i), ybar.block(i)))
                .fold(0.0, f64::max);
            if max_residual <= tol {
                return Ok(MsApgOutcome {
                    point: ybar,
                    iterations: ell,
                    stop: StopReason::Residual,
                    max_residual,
                });
            }
        }
        if ell == opts.max_iters {
            return Ok(MsApgOutcome {
                point: y_new,
                iterations: ell,
                stop: StopReason::Cap,
                max_residual,
            });
        }

        let t_next = next_momentum(t);
        let beta = (t - 1.0) / t_next;
        for ((yb, yn), yo) in ybar
            .as_mut_slice()
            .iter_mut()
            .zip(y_new.as_slice())
            .zip(y.as_slice())
        {
            *yb = yn + beta * (yn - yo);
        }
        std::mem::swap(&mut y, &mut y_new);
        t = t_next;
    }
    unreachable!("loop returns at the cap")
}

// ---------------------------------------------------------------------------
// centralized APG
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ApgOptions {
    pub max_iters: usize,
    /// Stop when the residual at the extrapolated point drops below this.
    pub residual_tol: Option<f64>,
    /// Record `F(y^(l))` for every iteration.
    pub record_values: bool,
    /// Reset the momentum whenever the objective increases.
    pub restart: bool,
}

#[derive(Debug, Clone)]
pub struct ApgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
    pub residual: f64,
    /// `F(y^(l))`, `l = 1..`, when requested.
    pub values: Vec<f64>,
}

/// Accelerated proximal gradient on `F = rho + gamma` with step `1/L`.
///
/// Uses the same arithmetic as [`ms_apg`] with a single block.
pub fn apg_centralized<L: SmoothLoss + ?Sized>(
    loss: &L,
    reg: &SparseGroupReg,
    lipschitz: f64,
    x0: &[f64],
    opts: &ApgOptions,
) -> Result<ApgOutcome> {
    if x0.len() != loss.dim() || reg.dim() != loss.dim() {
        return Err(Error::Dimension {
            expected: loss.dim(),
            got: x0.len(),
            context: "APG start point",
        });
    }
    if !(lipschitz > 0.0) || opts.max_iters == 0 {
        return Err(Error::InvalidParameter("APG needs L > 0 and a positive cap".into()));
    }
    let n = x0.len();
    let mut y = x0.to_vec();
    let mut ybar = x0.to_vec();
    let mut y_new = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut t = 1.0;
    let mut residual = f64::INFINITY;
    let mut values = Vec::new();
    let step = 1.0 / lipschitz;
    let mut f_prev = f64::INFINITY;

    for ell in 1..=opts.max_iters {
        loss.value_grad_into(&ybar, &mut grad);
        check_finite(&grad, "APG gradient")?;
        for ((vi, yb), g) in v.iter_mut().zip(&ybar).zip(&grad) {
            *vi = yb - g / lipschitz;
        }
        reg.prox_into(&v, step, &mut y_new);
        let fv = if opts.record_values || opts.restart {
            reg.value(&y_new) + loss.value(&y_new)
        } else {
            f64::NAN
        };
        if opts.record_values {
            values.push(fv);
        }
        if let Some(tol) = opts.residual_tol {
            residual = reg.subgrad_residual(1.0, &grad, &ybar);
            if residual <= tol {
                return Ok(ApgOutcome {
                    x: ybar,
                    iterations: ell,
                    stop: StopReason::Residual,
                    residual,
                    values,
                });
            }
        }
        if ell == opts.max_iters {
            return Ok(ApgOutcome {
                x: y_new,
                iterations: ell,
                stop: StopReason::Cap,
                residual,
                values,
            });
        }
        if opts.restart {
            if fv > f_prev {
                t = 1.0;
            }
            f_prev = fv;
        }
        let t_next = next_momentum(t);
        let beta = (t - 1.0) / t_next;
        for ((yb, yn), yo) in ybar.iter_mut().zip(&y_new).zip(&y) {
            *yb = yn + beta * (yn - yo);
        }
        std::mem::swap(&mut y, &mut y_new);
        t = t_next;
    }
    unreachable!("loop returns at the cap")
}

// ---------------------------------------------------------------------------
// randomized block coordinate descent
// ---------------------------------------------------------------------------

/// Periodic full residual test used to stop a randomized oracle early.
#[derive(Debug, Clone, Copy)]
pub struct ResidualCheck {
    pub tol: f64,
    /// Check after every `every` single-block updates.
    pub every: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RbcdOptions {
    pub max_iters: usize,
    pub residual_check: Option<ResidualCheck>,
    /// Record `Phi(y^(l))` after every update (costly).
    pub record_values: bool,
    pub deadline: Option<Deadline>,
}

/// Options shared by the ARBCD call and restart scheme.
#[derive(Debug, Clone, Copy, Default)]
pub struct ArbcdOptions {
    pub residual_check: Option<ResidualCheck>,
    pub deadline: Option<Deadline>,
}

fn check_deadline(deadline: &Option<Deadline>, step: usize) -> Result<()> {
    match deadline {
        Some(d) if step % 1024 == 0 && d.expired() => Err(Error::BudgetExhausted),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone)]
pub struct RbcdOutcome {
    pub y: Stacked,
    pub iterations: usize,
    pub stop: StopReason,
    /// `Phi(y^(0)), Phi(y^(1)), ...` when requested.
    pub values: Vec<f64>,
    /// Sampled block at each step.
    pub picks: Vec<usize>,
}

fn all_residuals_below<O: BlockObjective>(obj: &mut O, y: &Stacked, tol: f64) -> Result<bool> {
    let mut grad = Stacked::zeros(y.num_blocks(), y.dim());
    obj.smooth_grad(y, &mut grad)?;
    check_finite(grad.as_slice(), "residual check gradient")?;
    Ok((0..y.num_blocks()).all(|i| obj.residual_block(i, grad.block(i), y.block(i)) <= tol))
}

/// One uniformly sampled block takes a prox-gradient step with `1/L_i`.
pub fn rbcd_run<O, S>(obj: &mut O, y0: &Stacked, sampler: &mut S, opts: &RbcdOptions) -> Result<RbcdOutcome>
where
    O: BlockObjective,
    S: BlockSampler + ?Sized,
{
    let nb = obj.num_blocks();
    let dim = obj.block_dim();
    let mut y = y0.clone();
    let mut g = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut out = vec![0.0; dim];
    let mut values = Vec::new();
    let mut picks = Vec::with_capacity(opts.max_iters.min(1 << 20));
    if opts.record_values {
        values.push(obj.value(&y));
    }
    for ell in 1..=opts.max_iters {
        check_deadline(&opts.deadline, ell)?;
        let i = sampler.next_block();
        debug_assert!(i < nb);
        picks.push(i);
        obj.smooth_grad_block(i, &y, &mut g)?;
        check_finite(&g, "RBCD block gradient")?;
        let li = obj.lipschitz()[i];
        for ((vj, yj), gj) in v.iter_mut().zip(y.block(i)).zip(&g) {
            *vj = yj - gj / li;
        }
        obj.prox_block(i, &v, 1.0 / li, &mut out);
        y.block_mut(i).copy_from_slice(&out);
        obj.on_prox(i);
        obj.on_publish(i, 1)?;
        if opts.record_values {
            values.push(obj.value(&y));
        }
        if let Some(rc) = opts.residual_check {
            if ell % rc.every.max(1) == 0 && all_residuals_below(obj, &y, rc.tol)? {
                (0..nb).for_each(|j| obj.on_control(j));
                return Ok(RbcdOutcome {
                    y,
                    iterations: ell,
                    stop: StopReason::Residual,
                    values,
                    picks,
                });
            }
        }
    }
    Ok(RbcdOutcome {
        y,
        iterations: opts.max_iters,
        stop: StopReason::Budget,
        values,
        picks,
    })
}

/// `ceil(2 N C / alpha * (1 + ln(1/p)))` before rounding.
pub fn rbcd_budget_raw(num_blocks: usize, c: f64, alpha: f64, p: f64) -> f64 {
    2.0 * num_blocks as f64 * c / alpha * (1.0 + (1.0 / p).ln())
}

pub fn rbcd_budget(num_blocks: usize, c: f64, alpha: f64, p: f64) -> usize {
    rbcd_budget_raw(num_blocks, c, alpha, p).ceil().max(1.0) as usize
}

/// `(K, T)`: `K = ceil(log2(1/p))` restarts of `T = ceil(2 N sqrt(2 C / alpha))`.
pub fn arbcd_schedule(num_blocks: usize, c: f64, alpha: f64, p: f64) -> (usize, usize) {
    let k = (1.0 / p).log2().ceil().max(1.0) as usize;
    let t = (2.0 * num_blocks as f64 * (2.0 * c / alpha).sqrt()).ceil().max(1.0) as usize;
    (k, t)
}

// ---------------------------------------------------------------------------
// accelerated randomized block coordinate descent
// ---------------------------------------------------------------------------

/// How the constant `C` behind the randomized budgets is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CEstimate {
    Fixed(f64),
    /// Run `steps` RBCD updates from the start point and use the best value
    /// seen in place of `Phi*`; the result is doubled.
    Pilot { steps: usize },
}

/// Estimate of `C` for ARBCD from a reference point `best`.
pub fn arbcd_c_from_best(lips: &[f64], z0: &Stacked, phi0: f64, best: &Stacked, phi_best: f64) -> f64 {
    let nb = lips.len() as f64;
    let dist: f64 = lips
        .iter()
        .enumerate()
        .map(|(i, l)| l * crate::linalg::dist2(z0.block(i), best.block(i)).powi(2))
        .sum();
    2.0 * ((1.0 - 1.0 / nb) * (phi0 - phi_best).max(0.0) + 0.5 * dist)
}

/// Estimate of `C = max{R_L^2, Phi(y0) - Phi*}` for RBCD from `best`.
pub fn rbcd_c_from_best(lips: &[f64], y0: &Stacked, phi0: f64, best: &Stacked, phi_best: f64) -> f64 {
    let dist: f64 = lips
        .iter()
        .enumerate()
        .map(|(i, l)| l * crate::linalg::dist2(y0.block(i), best.block(i)).powi(2))
        .sum();
    2.0 * dist.max((phi0 - phi_best).max(0.0))
}

/// Runs `steps` RBCD updates from `y0` and returns the best point seen.
pub fn pilot_best<O, S>(obj: &mut O, y0: &Stacked, sampler: &mut S, steps: usize) -> Result<(Stacked, f64)>
where
    O: BlockObjective,
    S: BlockSampler + ?Sized,
{
    let out = rbcd_run(
        obj,
        y0,
        sampler,
        &RbcdOptions {
            max_iters: steps,
            residual_check: None,
            record_values: false,
            deadline: None,
        },
    )?;
    // RBCD is monotone, so the last point is the best one
    let v = obj.value(&out.y);
    let v0 = obj.value(y0);
    if v <= v0 {
        Ok((out.y, v))
    } else {
        Ok((y0.clone(), v0))
    }
}

#[derive(Debug, Clone)]
pub struct ArbcdCall {
    /// `(1/(N t))^2 u + z` after the last update.
    pub candidate: Stacked,
    pub iterations: usize,
    pub stop: StopReason,
}

/// Hook receiving the gradient-evaluation point `w` and the sampled block.
pub trait ArbcdObserver {
    fn on_step(&mut self, ell: usize, t: f64, i: usize, w: &Stacked) -> Result<()>;
}

impl ArbcdObserver for () {
    fn on_step(&mut self, _: usize, _: f64, _: usize, _: &Stacked) -> Result<()> {
        Ok(())
    }
}

impl<F> ArbcdObserver for F
where
    F: FnMut(usize, f64, usize, &Stacked) -> Result<()>,
{
    fn on_step(&mut self, ell: usize, t: f64, i: usize, w: &Stacked) -> Result<()> {
        self(ell, t, i, w)
    }
}

/// One ARBCD call of `iters` updates from `z0` (with `u = 0`, `t = 1`).
pub fn arbcd_call<O, S, B>(
    obj: &mut O,
    z0: &Stacked,
    iters: usize,
    sampler: &mut S,
    opts: &ArbcdOptions,
    observer: &mut B,
) -> Result<ArbcdCall>
where
    O: BlockObjective,
    S: BlockSampler + ?Sized,
    B: ArbcdObserver + ?Sized,
{
    let nb = obj.num_blocks();
    let dim = obj.block_dim();
    let nf = nb as f64;
    let mut z = z0.clone();
    let mut u = Stacked::zeros(nb, dim);
    let mut w = z0.clone();
    let mut t = 1.0_f64;
    let mut g = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut znew = vec![0.0; dim];

    let combine = |u: &Stacked, z: &Stacked, t: f64, out: &mut Stacked| {
        let theta = 1.0 / (nf * t);
        let th2 = theta * theta;
        for ((o, uu), zz) in out.as_mut_slice().iter_mut().zip(u.as_slice()).zip(z.as_slice()) {
            *o = th2 * uu + zz;
        }
    };

    for ell in 0..iters {
        check_deadline(&opts.deadline, ell + 1)?;
        combine(&u, &z, t, &mut w);
        let i = sampler.next_block();
        observer.on_step(ell, t, i, &w)?;
        obj.smooth_grad_block(i, &w, &mut g)?;
        check_finite(&g, "ARBCD block gradient")?;
        let li = obj.lipschitz()[i];
        for ((vj, zj), gj) in v.iter_mut().zip(z.block(i)).zip(&g) {
            *vj = zj - t / li * gj;
        }
        obj.prox_block(i, &v, t / li, &mut znew);
        let coef = nf * nf * t * (1.0 - t);
        for ((uj, zj), zn) in u.block_mut(i).iter_mut().zip(z.block(i)).zip(&znew) {
            *uj += coef * (zn - zj);
        }
        z.block_mut(i).copy_from_slice(&znew);
        obj.on_prox(i);
        obj.on_publish(i, 2)?;

        if let Some(rc) = opts.residual_check {
            if (ell + 1) % rc.every.max(1) == 0 {
                combine(&u, &z, t, &mut w);
                if all_residuals_below(obj, &w, rc.tol)? {
                    (0..nb).for_each(|j| obj.on_control(j));
                    return Ok(ArbcdCall {
                        candidate: w,
                        iterations: ell + 1,
                        stop: StopReason::Residual,
                    });
                }
            }
        }
        if ell + 1 == iters {
            combine(&u, &z, t, &mut w);
            return Ok(ArbcdCall {
                candidate: w,
                iterations: iters,
                stop: StopReason::Budget,
            });
        }
        t = next_arbcd_momentum(t, nb);
    }
    Ok(ArbcdCall {
        candidate: z,
        iterations: 0,
        stop: StopReason::Budget,
    })
}

#[derive(Debug, Clone)]
pub struct ArbcdOutcome {
    pub best: Stacked,
    pub best_value: f64,
    pub restarts: usize,
    pub iters_per_call: usize,
    pub c_used: f64,
    pub total_iters: usize,
    pub stop: StopReason,
}

/// Restart scheme: `K` independent ARBCD calls of `T` updates from `z0`,
/// returning the candidate with the smallest objective. A call that passes
/// the residual test ends the scheme early.
pub fn arbcd_run<O, S>(
    obj: &mut O,
    z0: &Stacked,
    alpha: f64,
    p: f64,
    c_estimate: CEstimate,
    sampler: &mut S,
    opts: &ArbcdOptions,
) -> Result<ArbcdOutcome>
where
    O: BlockObjective,
    S: BlockSampler + ?Sized,
{
    if !(alpha > 0.0) || !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "ARBCD needs alpha > 0 and p in (0,1), got alpha={alpha}, p={p}"
        )));
    }
    let mut total = 0;
    let c = match c_estimate {
        CEstimate::Fixed(c) => c,
        CEstimate::Pilot { steps } => {
            let phi0 = obj.value(z0);
            let (best, phi_best) = pilot_best(obj, z0, sampler, steps)?;
            total += steps;
            arbcd_c_from_best(obj.lipschitz(), z0, phi0, &best, phi_best)
        }
    };
    let (k, t) = arbcd_schedule(obj.num_blocks(), c, alpha, p);
    let mut best: Option<(Stacked, f64)> = None;
    for _ in 0..k {
        let call = arbcd_call(obj, z0, t, sampler, opts, &mut ())?;
        total += call.iterations;
        let val = obj.value(&call.candidate);
        let better = best.as_ref().is_none_or(|(_, b)| val < *b);
        if call.stop == StopReason::Residual {
            return Ok(ArbcdOutcome {
                best: call.candidate,
                best_value: val,
                restarts: k,
                iters_per_call: t,
                c_used: c,
                total_iters: total,
                stop: StopReason::Residual,
            });
        }
        if better {
            best = Some((call.candidate, val));
        }
    }
    let (best, best_value) = best.expect("at least one restart");
    Ok(ArbcdOutcome {
        best,
        best_value,
        restarts: k,
        iters_per_call: t,
        c_used: c,
        total_iters: total,
        stop: StopReason::Budget,
    })
}

// ---------------------------------------------------------------------------
// a plain block-separable objective
// ---------------------------------------------------------------------------

/// `Phi(y) = sum_i [ w rho_i(y_i) + gamma_i(y_i) ]`, optionally with a
/// coupling `(mu/2) sum_i ||y_i - y_{i+1}||^2` along a chain.
#[derive(Debug, Clone)]
pub struct SeparableObjective {
    pub blocks: Vec<NodeProblem>,
    pub reg_weight: f64,
    pub coupling: f64,
    lips: Vec<f64>,
}

impl SeparableObjective {
    pub fn new(blocks: Vec<NodeProblem>, reg_weight: f64, coupling: f64) -> Result<Self> {
        let dim = blocks.first().map_or(0, NodeProblem::dim);
        if blocks.iter().any(|b| b.dim() != dim) {
            return Err(Error::InvalidParameter("blocks must share a dimension".into()));
        }
        let nb = blocks.len();
        let lips = blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let deg = (i > 0) as usize + (i + 1 < nb) as usize;
                b.loss.lipschitz() + coupling * deg as f64
            })
            .collect();
        Ok(Self {
            blocks,
            reg_weight,
            coupling,
            lips,
        })
    }

    pub fn with_lipschitz(mut self, lips: Vec<f64>) -> Self {
        self.lips = lips;
        self
    }
}

impl BlockObjective for SeparableObjective {
    fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    fn block_dim(&self) -> usize {
        self.blocks.first().map_or(0, NodeProblem::dim)
    }

    fn lipschitz(&self) -> &[f64] {
        &self.lips
    }

    fn smooth_value(&self, y: &Stacked) -> f64 {
        let mut v: f64 = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| b.loss.value(y.block(i)))
            .sum();
        if self.coupling != 0.0 {
            for i in 1..self.blocks.len() {
                v += 0.5 * self.coupling * crate::linalg::dist2(y.block(i - 1), y.block(i)).powi(2);
            }
        }
        v
    }

    fn smooth_grad(&mut self, y: &Stacked, out: &mut Stacked) -> Result<()> {
        for i in 0..self.blocks.len() {
            let mut g = vec![0.0; y.dim()];
            self.smooth_grad_block(i, y, &mut g)?;
            out.block_mut(i).copy_from_slice(&g);
        }
        Ok(())
    }

    fn smooth_grad_block(&mut self, i: usize, y: &Stacked, out: &mut [f64]) -> Result<()> {
        self.blocks[i].loss.value_grad_into(y.block(i), out);
        if self.coupling != 0.0 {
            let nb = self.blocks.len();
            for j in [i.wrapping_sub(1), i + 1] {
                if j < nb {
                    for ((o, a), b) in out.iter_mut().zip(y.block(i)).zip(y.block(j)) {
                        *o += self.coupling * (a - b);
                    }
                }
            }
        }
        Ok(())
    }

    fn prox_block(&self, i: usize, v: &[f64], step: f64, out: &mut [f64]) {
        self.blocks[i].reg.prox_into(v, self.reg_weight * step, out);
    }

    fn reg_value_block(&self, i: usize, yi: &[f64]) -> f64 {
        self.reg_weight * self.blocks[i].reg.value(yi)
    }

    fn residual_block(&self, i: usize, grad_i: &[f64], yi: &[f64]) -> f64 {
        self.blocks[i].reg.subgrad_residual(self.reg_weight, grad_i, yi)
    }
}
