mod common;

use common::*;
use dfal_core::bench::{generate_instance, InstanceSpec};
use dfal_core::dfal::{
    async_dfal_solve, default_params, dfal_solve, tau_bar, AsyncOptions, AsyncOracle, DfalObserver, OuterRecord,
};
use dfal_core::funcs::{GroupPartition, Loss, NodeProblem, QuadraticLoss, SmoothLoss, SparseGroupReg};
use dfal_core::solver::{apg_centralized, ApgOptions, CEstimate};
use dfal_core::trace::{consensus_violation, RunOptions};
use dfal_core::{Graph, Result, Stacked, Topology};

#[test]
fn default_params_are_valid_on_random_instances() {
    let topologies = [Topology::Star, Topology::Clique, Topology::Path];
    for seed in 0..100u64 {
        let spec = InstanceSpec {
            case: 1 + (seed % 2) as u8,
            topology: topologies[seed as usize % 3],
            num_nodes: 2 + (seed % 3) as usize,
            group_size: 6,
            num_groups: 4,
            seed,
            edge_file: None,
        };
        let inst = generate_instance(&spec).unwrap();
        let p = default_params(&inst.nodes, &inst.graph, None).unwrap();
        p.validate(tau_bar(&inst.nodes)).unwrap();
        assert!(p.lambda1 <= 1.0 && p.c == 0.7);
    }
}

fn quad_node(c: &[f64], beta1: f64) -> NodeProblem {
    NodeProblem::new(
        SparseGroupReg::new(beta1, 0.0, GroupPartition::singletons(c.len())).unwrap(),
        Loss::Quadratic(QuadraticLoss::centered(c)),
    )
    .unwrap()
}

#[test]
fn two_node_path_reaches_symmetric_consensus() {
    let c = [1.0, -0.5, 2.0];
    let neg: Vec<f64> = c.iter().map(|v| -v).collect();
    let nodes = vec![quad_node(&c, 0.01), quad_node(&neg, 0.01)];
    let g = Graph::path(2).unwrap();
    let mut params = default_params(&nodes, &g, None).unwrap();
    params.max_outer = 30;
    let out = dfal_solve(&nodes, &g, &params, &RunOptions::default(), &mut ()).unwrap();
    // centralized: min 1/2|x-c|^2 + 1/2|x+c|^2 + 0.02|x|_1 is x = 0
    assert!(consensus_violation(&g, &out.x) < 1e-6);
    assert!(norm(&out.x.mean_block()) < 1e-6);
    for (a, b) in out.x.block(0).iter().zip(out.x.block(1)) {
        assert!((a - b).abs() < 1e-6);
    }
}

struct CvTracker<'a> {
    graph: &'a Graph,
    max_cv: f64,
}

impl DfalObserver for CvTracker<'_> {
    fn on_outer(&mut self, rec: &OuterRecord<'_>) -> Result<()> {
        self.max_cv = self.max_cv.max(consensus_violation(self.graph, rec.x));
        Ok(())
    }
}

#[test]
fn identical_data_stays_in_consensus() {
    let mut r = rng(41);
    let part = GroupPartition::new(6, vec![vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
    let node = random_node(&mut r, 4, 6, &part, 0.2);
    let nodes = vec![node.clone(); 4];
    let g = Graph::star(4).unwrap();
    let mut params = default_params(&nodes, &g, None).unwrap();
    params.max_outer = 25;
    let x0 = Stacked::consensus(4, &gauss_vec(&mut r, 6));
    let mut obs = CvTracker { graph: &g, max_cv: 0.0 };
    let run = RunOptions {
        x0: Some(x0),
        ..Default::default()
    };
    let out = dfal_solve(&nodes, &g, &params, &run, &mut obs).unwrap();
    assert!(obs.max_cv <= 1e-10, "max CV {}", obs.max_cv);

    let single = apg_centralized(
        &node.loss,
        &node.reg,
        node.loss.lipschitz(),
        &[0.0; 6],
        &ApgOptions {
            max_iters: 1_000_000,
            residual_tol: Some(1e-11),
            record_values: false,
            restart: true,
        },
    )
    .unwrap();
    let xm = out.x.mean_block();
    let err = norm(&xm.iter().zip(&single.x).map(|(a, b)| a - b).collect::<Vec<_>>());
    assert!(err < 1e-4, "distance to single-node solution {err}");
}

struct DualBound<'a> {
    graph: &'a Graph,
    ax: Vec<(f64, f64)>,
    theta_max: f64,
    first: Option<(f64, f64)>,
}

impl DfalObserver for DualBound<'_> {
    fn on_outer(&mut self, rec: &OuterRecord<'_>) -> Result<()> {
        let ax = self.graph.laplacian_quadratic(rec.x)?.sqrt();
        let theta = self.graph.laplacian_quadratic(rec.xbar_after)?.sqrt() / rec.lambda_next;
        self.theta_max = self.theta_max.max(theta);
        self.ax.push((ax, rec.lambda));
        if rec.k == 1 {
            self.first = Some((theta, ax / rec.lambda));
        }
        Ok(())
    }
}

#[test]
fn feasibility_is_bounded_by_the_dual_iterates() {
    let inst = generate_instance(&InstanceSpec {
        case: 2,
        topology: Topology::Star,
        num_nodes: 4,
        group_size: 6,
        num_groups: 4,
        seed: 8,
        edge_file: None,
    })
    .unwrap();
    let mut params = default_params(&inst.nodes, &inst.graph, None).unwrap();
    params.max_outer = 15;
    let mut obs = DualBound {
        graph: &inst.graph,
        ax: Vec::new(),
        theta_max: 0.0,
        first: None,
    };
    dfal_solve(&inst.nodes, &inst.graph, &params, &RunOptions::default(), &mut obs).unwrap();
    for &(ax, lambda) in &obs.ax {
        assert!(ax <= 2.0 * obs.theta_max * lambda + 1e-12);
    }
    let (theta2, want) = obs.first.unwrap();
    assert!((theta2 - want).abs() <= 1e-12 * want.max(1.0));
}

#[test]
fn gradient_count_equals_inner_iterations() {
    let inst = generate_instance(&InstanceSpec {
        case: 1,
        topology: Topology::Clique,
        num_nodes: 4,
        group_size: 6,
        num_groups: 4,
        seed: 2,
        edge_file: None,
    })
    .unwrap();
    let mut params = default_params(&inst.nodes, &inst.graph, None).unwrap();
    params.max_outer = 8;
    let out = dfal_solve(&inst.nodes, &inst.graph, &params, &RunOptions::default(), &mut ()).unwrap();
    let mut total = 0;
    for row in &out.trace.rows {
        total += row.inner_iters as u64;
        assert_eq!(row.grad_count, total);
    }
}

#[test]
fn single_node_async_solves_the_centralized_problem() {
    let mut r = rng(42);
    let part = GroupPartition::new(6, vec![vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
    let node = random_node(&mut r, 5, 6, &part, 0.3);
    let g = Graph::parse_edge_file("1\n").unwrap();
    let nodes = vec![node.clone()];
    let mut params = default_params(&nodes, &g, None).unwrap();
    params.max_outer = 30;
    let out = async_dfal_solve(&nodes, &g, &params, &RunOptions::default(), &AsyncOptions::new(AsyncOracle::Rbcd, 0.1, 1, 1)).unwrap();
    let want = apg_centralized(
        &node.loss,
        &node.reg,
        node.loss.lipschitz(),
        &[0.0; 6],
        &ApgOptions {
            max_iters: 1_000_000,
            residual_tol: Some(1e-11),
            record_values: false,
            restart: true,
        },
    )
    .unwrap();
    let f = node.composite_value(out.x.block(0));
    let f_star = node.composite_value(&want.x);
    assert!((f - f_star).abs() <= 1e-6 * f_star.abs().max(1.0), "{f} vs {f_star}");
}

#[test]
fn rbcd_budgets_grow_geometrically() {
    let inst = generate_instance(&InstanceSpec {
        case: 1,
        topology: Topology::Star,
        num_nodes: 4,
        group_size: 6,
        num_groups: 4,
        seed: 3,
        edge_file: None,
    })
    .unwrap();
    let mut params = default_params(&inst.nodes, &inst.graph, None).unwrap();
    params.max_outer = 6;
    let mut aopts = AsyncOptions::new(AsyncOracle::Rbcd, 0.1, 4, 4);
    aopts.c_estimate = CEstimate::Fixed(3.0);
    let out = async_dfal_solve(&inst.nodes, &inst.graph, &params, &RunOptions::default(), &aopts).unwrap();
    assert_eq!(out.budgets.len(), 6);
    let ratio = 1.0 / (params.c * params.c);
    for w in out.budgets.windows(2) {
        assert!((w[1].budget_raw / w[0].budget_raw - ratio).abs() <= 1e-12 * ratio);
    }
}
