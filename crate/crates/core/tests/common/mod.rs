#![allow(dead_code)]

use dfal_core::funcs::{GroupPartition, HuberLoss, Loss, NodeProblem, SparseGroupReg};
use dfal_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gauss_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gauss(rng)).collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Matrix {
    Matrix::new(m, n, gauss_vec(rng, m * n)).unwrap()
}

pub fn random_huber(rng: &mut ChaCha8Rng, m: usize, n: usize, delta: f64) -> HuberLoss {
    let a = random_matrix(rng, m, n);
    let b = gauss_vec(rng, m);
    HuberLoss::new(a, b, delta).unwrap()
}

pub fn random_partition(rng: &mut ChaCha8Rng, n: usize, k: usize) -> GroupPartition {
    let mut groups = vec![Vec::new(); k];
    for j in 0..n {
        groups[rng.random_range(0..k)].push(j);
    }
    groups.retain(|g| !g.is_empty());
    GroupPartition::new(n, groups).unwrap()
}

pub fn random_node(rng: &mut ChaCha8Rng, m: usize, n: usize, part: &GroupPartition, beta: f64) -> NodeProblem {
    NodeProblem::new(
        SparseGroupReg::new(beta, beta, part.clone()).unwrap(),
        Loss::Huber(random_huber(rng, m, n, 1.0)),
    )
    .unwrap()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Minimizes a smooth function by gradient descent with step `1/l`.
pub fn gradient_descent(grad: impl Fn(&[f64], &mut [f64]), x0: &[f64], l: f64, iters: usize) -> Vec<f64> {
    let mut x = x0.to_vec();
    let mut g = vec![0.0; x.len()];
    for _ in 0..iters {
        grad(&x, &mut g);
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= gi / l;
        }
    }
    x
}
