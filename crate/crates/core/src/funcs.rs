//! Composite function library: smooth losses, the sparse-group regularizer,
//! its closed-form prox and the minimum-norm subgradient residual.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix};

/// Power-iteration tolerance for Lipschitz constants.
pub const LIPSCHITZ_REL_TOL: f64 = 1e-8;

/// `sgn(0) = 0`.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    sgn(x) * (x.abs() - t).max(0.0)
}

/// Disjoint cover of `0..n` by index groups (1-based in JSON).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct GroupPartition {
    n: usize,
    groups: Vec<Vec<usize>>,
}

impl TryFrom<Vec<Vec<usize>>> for GroupPartition {
    type Error = Error;

    /// 1-based indices, as stored in partition files.
    fn try_from(groups: Vec<Vec<usize>>) -> Result<Self> {
        let n = groups.iter().map(Vec::len).sum();
        let zero_based = groups
            .into_iter()
            .map(|g| {
                g.into_iter()
                    .map(|j| {
                        j.checked_sub(1)
                            .ok_or_else(|| Error::InvalidPartition("indices are 1-based".into()))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        GroupPartition::new(n, zero_based)
    }
}

impl From<GroupPartition> for Vec<Vec<usize>> {
    fn from(p: GroupPartition) -> Self {
        p.groups
            .into_iter()
            .map(|g| g.into_iter().map(|j| j + 1).collect())
            .collect()
    }
}

impl GroupPartition {
    /// Validates that `groups` (0-based) are nonempty, pairwise disjoint and
    /// cover `0..n` exactly.
    pub fn new(n: usize, mut groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; n];
        for (k, g) in groups.iter_mut().enumerate() {
            if g.is_empty() {
                return Err(Error::InvalidPartition(format!("group {} is empty", k + 1)));
            }
            g.sort_unstable();
            for &j in g.iter() {
                if j >= n {
                    return Err(Error::InvalidPartition(format!(
                        "index {} outside 1..={n}",
                        j + 1
                    )));
                }
                if seen[j] {
                    return Err(Error::InvalidPartition(format!(
                        "index {} appears in more than one group",
                        j + 1
                    )));
                }
                seen[j] = true;
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!("index {} is not covered", j + 1)));
        }
        Ok(Self { n, groups })
    }

    /// One group holding every coordinate.
    pub fn single(n: usize) -> Self {
        Self {
            n,
            groups: vec![(0..n).collect()],
        }
    }

    /// Each coordinate in its own group.
    pub fn singletons(n: usize) -> Self {
        Self {
            n,
            groups: (0..n).map(|j| vec![j]).collect(),
        }
    }

    /// `num_groups` groups of `group_size` indices drawn uniformly at random.
    pub fn random_equal<R: Rng + ?Sized>(num_groups: usize, group_size: usize, rng: &mut R) -> Self {
        let n = num_groups * group_size;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let groups = idx
            .chunks(group_size)
            .map(|c| {
                let mut g = c.to_vec();
                g.sort_unstable();
                g
            })
            .collect();
        Self { n, groups }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("partition serializes")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

/// `rho(x) = beta1 ||x||_1 + beta2 sum_k ||x_{g(k)}||_2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseGroupReg {
    pub beta1: f64,
    pub beta2: f64,
    pub partition: GroupPartition,
}

impl SparseGroupReg {
    pub fn new(beta1: f64, beta2: f64, partition: GroupPartition) -> Result<Self> {
        if !(beta1 >= 0.0 && beta2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "regularizer weights must be nonnegative, got beta1={beta1}, beta2={beta2}"
            )));
        }
        Ok(Self {
            beta1,
            beta2,
            partition,
        })
    }

    pub fn dim(&self) -> usize {
        self.partition.dim()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        let group: f64 = self
            .partition
            .groups()
            .iter()
            .map(|g| g.iter().map(|&j| x[j] * x[j]).sum::<f64>().sqrt())
            .sum();
        self.beta1 * l1 + self.beta2 * group
    }

    /// `tau` with `tau ||x||_2 <= rho(x)`.
    pub fn tau(&self) -> f64 {
        self.beta1 + self.beta2
    }

    /// Uniform bound `beta1 sqrt(n) + beta2 sqrt(K)` on subgradient norms.
    pub fn subgrad_bound(&self) -> f64 {
        self.beta1 * (self.dim() as f64).sqrt() + self.beta2 * (self.partition.num_groups() as f64).sqrt()
    }

    /// `prox_{t rho}(xbar)`: soft-threshold by `t beta1`, then shrink each
    /// group by `max(1 - t beta2 / ||.||, 0)`; a zero group stays zero.
    pub fn prox(&self, xbar: &[f64], t: f64) -> Result<Vec<f64>> {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!("prox step must be positive, got {t}")));
        }
        if xbar.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: xbar.len(),
                context: "prox input",
            });
        }
        let mut out = vec![0.0; xbar.len()];
        self.prox_into(xbar, t, &mut out);
        Ok(out)
    }

    /// Unchecked variant of [`prox`](Self::prox) for hot loops.
    pub fn prox_into(&self, xbar: &[f64], t: f64, out: &mut [f64]) {
        let l1 = t * self.beta1;
        let l2 = t * self.beta2;
        for g in self.partition.groups() {
            let mut sq = 0.0;
            for &j in g {
                let v = soft_threshold(xbar[j], l1);
                out[j] = v;
                sq += v * v;
            }
            let nrm = sq.sqrt();
            let scale = if nrm == 0.0 { 0.0 } else { (1.0 - l2 / nrm).max(0.0) };
            for &j in g {
                out[j] *= scale;
            }
        }
    }

    /// Norm of the minimum-norm element of `lambda * d rho(xbar) + grad_f`.
    ///
    /// Exact zeros in `xbar` select the set-valued branches.
    pub fn subgrad_residual(&self, lambda: f64, grad_f: &[f64], xbar: &[f64]) -> f64 {
        let lb1 = lambda * self.beta1;
        let lb2 = lambda * self.beta2;
        let mut total = 0.0;
        for g in self.partition.groups() {
            let gnorm = g.iter().map(|&j| xbar[j] * xbar[j]).sum::<f64>().sqrt();
            if gnorm != 0.0 {
                for &j in g {
                    let h = grad_f[j];
                    let pi = if xbar[j] != 0.0 {
                        lb1 * sgn(xbar[j])
                    } else {
                        -sgn(h) * h.abs().min(lb1)
                    };
                    let omega = lb2 * xbar[j] / gnorm;
                    let r = pi + omega + h;
                    total += r * r;
                }
            } else {
                // v = eta + grad on the group; omega cancels up to lambda*beta2
                let mut vsq = 0.0;
                for &j in g {
                    let h = grad_f[j];
                    let v = h - sgn(h) * h.abs().min(lb1);
                    vsq += v * v;
                }
                let vn = vsq.sqrt();
                if vn > lb2 {
                    let shrink = 1.0 - lb2 / vn;
                    total += vsq * shrink * shrink;
                }
            }
        }
        total.sqrt()
    }
}

/// Smooth convex loss with Lipschitz gradient.
pub trait SmoothLoss {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Writes the gradient into `grad` and returns the value.
    fn value_grad_into(&self, x: &[f64], grad: &mut [f64]) -> f64;
    /// Lipschitz constant of the gradient.
    fn lipschitz(&self) -> f64;
}

/// `h_delta(r)`: `r^2/2` if `|r| <= delta`, else `delta |r| - delta^2/2`.
#[inline]
pub fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r
    } else {
        delta * r.abs() - 0.5 * delta * delta
    }
}

/// `gamma(x) = sum_j h_delta(a_j^T x - b_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HuberLoss {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub delta: f64,
    #[serde(skip)]
    lipschitz: Option<f64>,
}

impl HuberLoss {
    pub fn new(a: Matrix, b: Vec<f64>, delta: f64) -> Result<Self> {
        if a.rows() != b.len() {
            return Err(Error::Dimension {
                expected: a.rows(),
                got: b.len(),
                context: "Huber offsets",
            });
        }
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter(format!("Huber delta must be positive, got {delta}")));
        }
        let l = a.sigma_max_sq(LIPSCHITZ_REL_TOL, 100_000);
        Ok(Self {
            a,
            b,
            delta,
            lipschitz: Some(l),
        })
    }

    /// Value and gradient with dimension checks.
    pub fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.a.cols() {
            return Err(Error::Dimension {
                expected: self.a.cols(),
                got: x.len(),
                context: "Huber argument",
            });
        }
        let mut g = vec![0.0; x.len()];
        let v = self.value_grad_into(x, &mut g);
        Ok((v, g))
    }

    /// `||grad gamma(x)|| <= delta sigma_max(A) sqrt(m)`.
    pub fn gradient_bound(&self) -> f64 {
        self.delta * self.lipschitz().sqrt() * (self.a.rows() as f64).sqrt()
    }

    pub fn num_rows(&self) -> usize {
        self.a.rows()
    }
}

impl SmoothLoss for HuberLoss {
    fn dim(&self) -> usize {
        self.a.cols()
    }

    fn value(&self, x: &[f64]) -> f64 {
        (0..self.a.rows())
            .map(|r| huber(crate::linalg::dot(self.a.row(r), x) - self.b[r], self.delta))
            .sum()
    }

    fn value_grad_into(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut clamped = vec![0.0; self.a.rows()];
        let mut value = 0.0;
        for (r, c) in clamped.iter_mut().enumerate() {
            let res = crate::linalg::dot(self.a.row(r), x) - self.b[r];
            value += huber(res, self.delta);
            *c = res.clamp(-self.delta, self.delta);
        }
        self.a.tmul_vec_into(&clamped, grad);
        value
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
            .unwrap_or_else(|| self.a.sigma_max_sq(LIPSCHITZ_REL_TOL, 100_000))
    }
}

/// `gamma(x) = 1/2 ||A x - b||^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticLoss {
    pub a: Matrix,
    pub b: Vec<f64>,
    #[serde(skip)]
    lipschitz: Option<f64>,
}

impl QuadraticLoss {
    pub fn new(a: Matrix, b: Vec<f64>) -> Result<Self> {
        if a.rows() != b.len() {
            return Err(Error::Dimension {
                expected: a.rows(),
                got: b.len(),
                context: "quadratic offsets",
            });
        }
        let l = a.sigma_max_sq(LIPSCHITZ_REL_TOL, 100_000);
        Ok(Self {
            a,
            b,
            lipschitz: Some(l),
        })
    }

    /// `1/2 ||x - c||^2`.
    pub fn centered(c: &[f64]) -> Self {
        Self {
            a: Matrix::identity(c.len()),
            b: c.to_vec(),
            lipschitz: Some(1.0),
        }
    }
}

impl SmoothLoss for QuadraticLoss {
    fn dim(&self) -> usize {
        self.a.cols()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let r = self.a.mul_vec(x);
        0.5 * r
            .iter()
            .zip(&self.b)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    }

    fn value_grad_into(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut r = self.a.mul_vec(x);
        r.iter_mut().zip(&self.b).for_each(|(a, b)| *a -= b);
        self.a.tmul_vec_into(&r, grad);
        0.5 * norm2(&r).powi(2)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
            .unwrap_or_else(|| self.a.sigma_max_sq(LIPSCHITZ_REL_TOL, 100_000))
    }
}

/// Losses available to node problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Loss {
    Huber(HuberLoss),
    Quadratic(QuadraticLoss),
}

impl Loss {
    /// Recomputes cached constants after deserialization.
    pub fn refresh(&mut self) {
        match self {
            Loss::Huber(h) => h.lipschitz = Some(h.a.sigma_max_sq(LIPSCHITZ_REL_TOL, 100_000)),
            Loss::Quadratic(q) => q.lipschitz = Some(q.a.sigma_max_sq(LIPSCHITZ_REL_TOL, 100_000)),
        }
    }

    pub fn matrix(&self) -> &Matrix {
        match self {
            Loss::Huber(h) => &h.a,
            Loss::Quadratic(q) => &q.a,
        }
    }

    pub fn offsets(&self) -> &[f64] {
        match self {
            Loss::Huber(h) => &h.b,
            Loss::Quadratic(q) => &q.b,
        }
    }
}

impl SmoothLoss for Loss {
    fn dim(&self) -> usize {
        match self {
            Loss::Huber(h) => h.dim(),
            Loss::Quadratic(q) => q.dim(),
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Loss::Huber(h) => h.value(x),
            Loss::Quadratic(q) => q.value(x),
        }
    }

    fn value_grad_into(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            Loss::Huber(h) => h.value_grad_into(x, grad),
            Loss::Quadratic(q) => q.value_grad_into(x, grad),
        }
    }

    fn lipschitz(&self) -> f64 {
        match self {
            Loss::Huber(h) => h.lipschitz(),
            Loss::Quadratic(q) => q.lipschitz(),
        }
    }
}

/// One node's private composite function `F_i = rho_i + gamma_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeProblem {
    pub reg: SparseGroupReg,
    pub loss: Loss,
}

impl NodeProblem {
    pub fn new(reg: SparseGroupReg, loss: Loss) -> Result<Self> {
        if reg.dim() != loss.dim() {
            return Err(Error::Dimension {
                expected: reg.dim(),
                got: loss.dim(),
                context: "regularizer vs loss dimension",
            });
        }
        Ok(Self { reg, loss })
    }

    pub fn dim(&self) -> usize {
        self.reg.dim()
    }

    pub fn reg_value(&self, x: &[f64]) -> f64 {
        self.reg.value(x)
    }

    pub fn composite_value(&self, x: &[f64]) -> f64 {
        self.reg.value(x) + self.loss.value(x)
    }
}
