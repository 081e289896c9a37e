mod common;

use common::*;
use dfal_core::bench::{generate_instance, reference_solve, run_benchmark, Algorithm, BenchConfig, InstanceSpec, SolveSettings};
use dfal_core::funcs::{GroupPartition, SmoothLoss, SparseGroupReg};
use dfal_core::{Exec, Topology};

fn spec(case: u8, topology: Topology, seed: u64) -> InstanceSpec {
    InstanceSpec {
        case,
        topology,
        num_nodes: 5,
        group_size: 10,
        num_groups: 10,
        seed,
        edge_file: None,
    }
}

#[test]
fn generated_instances_have_the_stated_shape() {
    let one = generate_instance(&spec(1, Topology::Star, 3)).unwrap();
    let two = generate_instance(&spec(2, Topology::Star, 3)).unwrap();
    for inst in [&one, &two] {
        assert_eq!(inst.dim, 100);
        assert_eq!(inst.rows_per_node, 10);
        assert_eq!(inst.num_nodes(), 5);
        assert_eq!(inst.beta1, 0.2);
        assert_eq!(inst.beta2, 0.2);
        for (j, v) in inst.x_gen.iter().enumerate() {
            let want = (-(j as f64) / 10.0).exp();
            assert!((v.abs() - want).abs() < 1e-15);
            assert_eq!(*v < 0.0, j % 2 == 0);
        }
        for p in &inst.nodes {
            let groups = p.reg.partition.groups();
            assert_eq!(groups.len(), 10);
            assert!(groups.iter().all(|g| g.len() == 10));
            let b = p.loss.offsets();
            let ax = p.loss.matrix().mul_vec(&inst.x_gen);
            assert!(ax.iter().zip(b).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }
    let first = &one.nodes[0].reg.partition;
    assert!(one.nodes.iter().all(|p| &p.reg.partition == first));
    let distinct = two.nodes.iter().filter(|p| &p.reg.partition != &two.nodes[0].reg.partition).count();
    assert!(distinct >= 1);
    for (a, b) in one.nodes.iter().zip(&two.nodes) {
        assert_eq!(a.loss.matrix(), b.loss.matrix());
        assert_eq!(a.loss.offsets(), b.loss.offsets());
    }
}

#[test]
fn indivisible_sizes_are_rejected() {
    let mut s = spec(1, Topology::Star, 1);
    s.num_nodes = 3;
    assert!(generate_instance(&s).is_err());
    s.case = 3;
    s.num_nodes = 5;
    assert!(generate_instance(&s).is_err());
}

#[test]
fn instance_json_round_trip() {
    let inst = generate_instance(&spec(2, Topology::Clique, 4)).unwrap();
    let back = dfal_core::bench::ProblemInstance::from_json(&inst.to_json().unwrap()).unwrap();
    assert_eq!(back, inst);
    let x = inst.x_gen.clone();
    assert_eq!(back.objective(&x), inst.objective(&x));
}

#[test]
fn reference_without_regularization_matches_gradient_descent() {
    let mut inst = generate_instance(&InstanceSpec {
        group_size: 4,
        num_groups: 4,
        num_nodes: 2,
        ..spec(1, Topology::Clique, 8)
    })
    .unwrap();
    // Four rows per node on 16 unknowns is underdetermined; add rows so the
    // smooth problem is strongly convex and the GD oracle converges.
    let mut r = rng(81);
    for p in &mut inst.nodes {
        let a = random_matrix(&mut r, 16, 16);
        let b = gauss_vec(&mut r, 16);
        p.loss = dfal_core::funcs::Loss::Huber(dfal_core::funcs::HuberLoss::new(a, b, 1.0).unwrap());
        p.reg = SparseGroupReg::new(0.0, 0.0, p.reg.partition.clone()).unwrap();
    }
    let r = reference_solve(&inst, 1e-9, Exec::Sequential).unwrap();
    assert!(r.converged);
    let loss = inst.combined_loss().unwrap();
    let x = gradient_descent(
        |x, g| {
            loss.value_grad_into(x, g);
        },
        &[0.0; 16],
        loss.lipschitz(),
        200_000,
    );
    let want = inst.objective(&x);
    assert!((r.f_star - want).abs() <= 1e-8 * want.abs().max(1.0), "{} vs {}", r.f_star, want);
}

#[test]
fn zero_offsets_give_zero_optimum() {
    let mut inst = generate_instance(&spec(1, Topology::Star, 2)).unwrap();
    for p in &mut inst.nodes {
        let a = p.loss.matrix().clone();
        let n = a.rows();
        p.loss = dfal_core::funcs::Loss::Huber(dfal_core::funcs::HuberLoss::new(a, vec![0.0; n], 1.0).unwrap());
    }
    let r = reference_solve(&inst, 1e-9, Exec::Sequential).unwrap();
    assert_eq!(r.f_star, 0.0);
    assert!(r.x_ref.iter().all(|v| *v == 0.0));
}

#[test]
fn case_one_reference_meets_its_tolerance() {
    let inst = generate_instance(&spec(1, Topology::Star, 5)).unwrap();
    let r = reference_solve(&inst, 1e-9, Exec::Sequential).unwrap();
    assert!(r.converged);
    assert!(r.accuracy <= 1e-9);
    let reg = inst.combined_reg().unwrap();
    let loss = inst.combined_loss().unwrap();
    let mut g = vec![0.0; inst.dim];
    loss.value_grad_into(&r.x_ref, &mut g);
    assert!(reg.subgrad_residual(1.0, &g, &r.x_ref) <= 1e-9 * 1.0001);
    assert!(reference_solve(&inst, 1e-10, Exec::Sequential).is_err());
}

#[test]
fn partition_file_round_trip() {
    let p = GroupPartition::from_json("[[1, 3], [2, 4, 5]]").unwrap();
    assert_eq!(p.dim(), 5);
    assert_eq!(p.groups(), &[vec![0, 2], vec![1, 3, 4]]);
    assert_eq!(GroupPartition::from_json(&p.to_json()).unwrap(), p);
    assert!(GroupPartition::from_json("[[1, 2], [2, 3]]").is_err());
    assert!(GroupPartition::from_json("[[1, 3]]").is_err());
}

#[test]
fn edge_file_topology() {
    let text = "# ring\n4\n1 2\n2 3\n3 4\n1 4\n";
    let inst = generate_instance(&InstanceSpec {
        topology: Topology::File,
        num_nodes: 0,
        group_size: 4,
        num_groups: 2,
        edge_file: Some(text.into()),
        ..spec(1, Topology::File, 1)
    })
    .unwrap();
    assert_eq!(inst.num_nodes(), 4);
    assert_eq!(inst.rows_per_node, 1);
    assert_eq!(inst.graph.edges().len(), 4);
    assert!((0..4).all(|i| inst.graph.degree(i) == 2));
}

fn small_config() -> BenchConfig {
    BenchConfig::from_json(
        r#"{
            "algorithms": ["dfal", "sadmm", "apg"],
            "topologies": ["star"],
            "cases": [1, 2],
            "num_nodes": 2,
            "group_size": 4,
            "num_groups": 2,
            "seeds": [1, 2],
            "budget_secs": 30
        }"#,
    )
    .unwrap()
}

#[test]
fn benchmark_matrix_rows_and_rerun_digest() {
    let cfg = small_config();
    let a = run_benchmark(&cfg).unwrap();
    // APG has no Case 2 row.
    assert_eq!(a.rows.len(), 5);
    for row in &a.rows {
        assert_eq!(row.runs.len(), 2);
        assert_eq!(row.failed_runs, 0);
        assert!(row.all_converged, "{} {:?} case {}", row.algorithm, row.topology, row.case);
        assert_eq!(row.config_hash, cfg.hash());
    }
    assert!(!a.rows.iter().any(|r| r.algorithm == Algorithm::Apg && r.case == 2));
    let b = run_benchmark(&cfg).unwrap();
    assert_eq!(a.digest(), b.digest());
    assert!(a.table().lines().count() >= 7);
}

#[test]
fn config_validation() {
    assert!(BenchConfig::from_json(r#"{"algorithms": ["dfal"], "topologies": ["star"], "cases": [3]}"#).is_err());
    assert!(BenchConfig::from_json(r#"{"algorithms": [], "topologies": ["star"], "cases": [1]}"#).is_err());
    assert!(BenchConfig::from_json(r#"{"algorithms": ["dfal"], "topologies": ["star"], "cases": [1], "typo": 1}"#).is_err());
    let cfg = BenchConfig::from_json(r#"{"algorithms": ["dfal"], "topologies": ["star"], "cases": [1]}"#).unwrap();
    assert_eq!(cfg.seeds, vec![1, 2, 3, 4, 5]);
    assert_eq!(cfg.settings, SolveSettings::default());
    let mut other = cfg.clone();
    other.seeds = vec![1];
    assert_ne!(cfg.hash(), other.hash());
}
