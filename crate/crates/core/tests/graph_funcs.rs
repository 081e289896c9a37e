mod common;

use common::*;
use dfal_core::funcs::{huber, GroupPartition, HuberLoss, SmoothLoss, SparseGroupReg};
use dfal_core::{Graph, Matrix, Stacked};

fn laplacian_rows(g: &Graph) -> Vec<Vec<f64>> {
    let n = g.num_nodes();
    let mut l = vec![vec![0.0; n]; n];
    for &(i, j) in g.edges() {
        l[i][j] -= 1.0;
        l[j][i] -= 1.0;
        l[i][i] += 1.0;
        l[j][j] += 1.0;
    }
    l
}

#[test]
fn spectral_bounds_match_jacobi() {
    for (g, max, second) in [
        (Graph::path(2).unwrap(), 2.0, 2.0),
        (Graph::clique(5).unwrap(), 5.0, 5.0),
        (Graph::star(5).unwrap(), 5.0, 1.0),
    ] {
        let ev = jacobi_eigenvalues(laplacian_rows(&g));
        let sb = g.spectral_bounds();
        assert!((ev[ev.len() - 1] - max).abs() < 1e-10);
        assert!((sb.psi_max - ev[ev.len() - 1]).abs() < 1e-9);
        assert!((sb.psi_second_smallest - second).abs() < 1e-9);
        let pw = g.spectral_bounds_power();
        assert!((pw.psi_max - max).abs() < 1e-6);
    }
}

#[test]
fn laplacian_products() {
    let star = Graph::star(3).unwrap();
    let x = Stacked::from_blocks(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
    assert_eq!(star.laplacian_apply(&x).unwrap().as_slice(), &[-3.0, 1.0, 2.0]);
    let clique = Graph::clique(3).unwrap();
    let y = Stacked::from_blocks(&[vec![1.0], vec![2.0], vec![4.0]]).unwrap();
    assert_eq!(clique.laplacian_quadratic(&y).unwrap(), 14.0);
    let c = Stacked::consensus(3, &[1.5, -2.0]);
    assert_eq!(clique.laplacian_quadratic(&c).unwrap(), 0.0);
    assert!(star.laplacian_apply(&c).unwrap().as_slice().iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn laplacian_matches_dense_on_random_graphs() {
    let mut r = rng(9);
    let edges = [(0, 1), (1, 2), (2, 3), (0, 3), (1, 4), (4, 5)];
    let g = Graph::from_edges(6, &edges).unwrap();
    let l = laplacian_rows(&g);
    let x = Stacked::from_flat(6, 3, gauss_vec(&mut r, 18)).unwrap();
    let got = g.laplacian_apply(&x).unwrap();
    for i in 0..6 {
        for c in 0..3 {
            let want: f64 = (0..6).map(|j| l[i][j] * x.block(j)[c]).sum();
            assert!((got.block(i)[c] - want).abs() < 1e-12);
        }
    }
    let q: f64 = (0..6).map(|i| (0..3).map(|c| x.block(i)[c] * got.block(i)[c]).sum::<f64>()).sum();
    assert!((g.laplacian_quadratic(&x).unwrap() - q).abs() < 1e-10);
}

#[test]
fn huber_examples_and_minimizer() {
    let a = Matrix::new(1, 1, vec![1.0]).unwrap();
    let h = HuberLoss::new(a, vec![0.0], 1.0).unwrap();
    assert_eq!(h.value_grad(&[0.5]).unwrap(), (0.125, vec![0.5]));
    assert_eq!(h.value_grad(&[2.0]).unwrap(), (1.5, vec![1.0]));
    assert_eq!(huber(-3.0, 1.0), 2.5);

    // b in the range of A: the minimizer has zero gradient
    let mut r = rng(10);
    let a = random_matrix(&mut r, 8, 5);
    let xt = gauss_vec(&mut r, 5);
    let b = a.mul_vec(&xt);
    let h = HuberLoss::new(a, b, 1.0).unwrap();
    let x = gradient_descent(|x, g| { h.value_grad_into(x, g); }, &vec![0.0; 5], h.lipschitz(), 200_000);
    let mut g = vec![0.0; 5];
    h.value_grad_into(&x, &mut g);
    assert!(norm(&g) <= 1e-8, "gradient norm {}", norm(&g));
}

#[test]
fn lipschitz_matches_dense_singular_values() {
    let a = Matrix::new(1, 1, vec![2.0]).unwrap();
    assert!((HuberLoss::new(a, vec![0.0], 1.0).unwrap().lipschitz() - 4.0).abs() < 1e-12);
    let h = HuberLoss::new(Matrix::identity(3), vec![0.0; 3], 1.0).unwrap();
    assert!((h.lipschitz() - 1.0).abs() < 1e-12);

    let mut r = rng(11);
    let a = random_matrix(&mut r, 5, 8);
    let ata: Vec<Vec<f64>> = (0..8)
        .map(|i| (0..8).map(|j| (0..5).map(|k| a.get(k, i) * a.get(k, j)).sum()).collect())
        .collect();
    let ev = jacobi_eigenvalues(ata);
    let h = HuberLoss::new(a, vec![0.0; 5], 1.0).unwrap();
    assert!((h.lipschitz() - ev[7]).abs() <= 1e-6 * ev[7]);
}

#[test]
fn prox_examples() {
    let one = GroupPartition::single(2);
    let zero = SparseGroupReg::new(0.0, 0.0, one.clone()).unwrap();
    assert_eq!(zero.prox(&[0.3, -7.0], 1.0).unwrap(), vec![0.3, -7.0]);
    let reg = SparseGroupReg::new(1.0, 1.0, one).unwrap();
    let y = reg.prox(&[3.0, -1.0], 1.0).unwrap();
    assert!((y[0] - 1.0).abs() < 1e-15 && y[1] == 0.0);
    assert_eq!(reg.prox(&[0.5, 0.5], 1.0).unwrap(), vec![0.0, 0.0]);

    // grid search of the two-coordinate prox objective around the output
    let obj = |a: f64, b: f64| reg.value(&[a, b]) + 0.5 * ((a - 3.0).powi(2) + (b + 1.0).powi(2));
    let best = obj(1.0, 0.0);
    for i in -200..=200 {
        for j in -200..=200 {
            let (a, b) = (1.0 + i as f64 * 1e-3, j as f64 * 1e-3);
            assert!(obj(a, b) >= best - 1e-10);
        }
    }
}

#[test]
fn residual_examples() {
    let reg = SparseGroupReg::new(1.0, 0.7, GroupPartition::single(1)).unwrap();
    assert_eq!(reg.subgrad_residual(1.0, &[0.5], &[0.0]), 0.0);
    let reg = SparseGroupReg::new(1.0, 1.0, GroupPartition::single(1)).unwrap();
    assert!((reg.subgrad_residual(1.0, &[0.0], &[2.0]) - 2.0).abs() < 1e-15);

    // one coordinate at zero: minimize |h + s| over s in [-1, 1] on a grid
    let reg = SparseGroupReg::new(1.0, 0.0, GroupPartition::single(1)).unwrap();
    for h in [-2.5, -1.0, -0.3, 0.0, 0.8, 1.7] {
        let grid = (0..=20_000).map(|k| -1.0 + k as f64 * 1e-4).map(|s: f64| (h + s).abs()).fold(f64::INFINITY, f64::min);
        assert!((reg.subgrad_residual(1.0, &[h], &[0.0]) - grid).abs() < 1e-4);
    }
}

#[test]
fn regularizer_value_matches_naive_sum() {
    let reg = SparseGroupReg::new(1.0, 2.0, GroupPartition::single(2)).unwrap();
    assert!((reg.value(&[1.0, -1.0]) - (2.0 + 2.0 * 2f64.sqrt())).abs() < 1e-15);
    assert_eq!(reg.value(&[0.0, 0.0]), 0.0);
    let mut r = rng(12);
    for _ in 0..50 {
        let part = random_partition(&mut r, 10, 3);
        let reg = SparseGroupReg::new(0.4, 1.3, part.clone()).unwrap();
        let x = gauss_vec(&mut r, 10);
        let mut naive = 0.0;
        for v in &x {
            naive += 0.4 * v.abs();
        }
        for g in part.groups() {
            let mut s = 0.0;
            for &j in g {
                s += x[j] * x[j];
            }
            naive += 1.3 * s.sqrt();
        }
        assert!((reg.value(&x) - naive).abs() < 1e-12);
    }
}
