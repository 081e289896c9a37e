use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dfal_core::baselines::{sadmm_solve, AdmmOptions};
use dfal_core::bench::{generate_instance, InstanceSpec};
use dfal_core::dfal::{default_params, dfal_solve};
use dfal_core::funcs::SmoothLoss;
use dfal_core::trace::RunOptions;
use dfal_core::{par, Exec, Stacked, Topology};

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn instance(nodes: usize, groups: usize) -> dfal_core::bench::ProblemInstance {
    generate_instance(&InstanceSpec {
        case: 1,
        topology: Topology::Clique,
        num_nodes: nodes,
        group_size: 10,
        num_groups: groups,
        seed: 1,
        edge_file: None,
    })
    .unwrap()
}

fn node_gradients(c: &mut Criterion) {
    let inst = instance(8, 80);
    let x = Stacked::from_flat(8, inst.dim, inst.x_gen.repeat(8)).unwrap();
    let mut g = c.benchmark_group("node_gradients");
    for (name, exec) in EXECS {
        g.bench_function(name, |b| {
            b.iter(|| {
                par::map_indexed(exec, 8, |i| {
                    let mut grad = vec![0.0; inst.dim];
                    inst.nodes[i].loss.value_grad_into(x.block(i), &mut grad);
                    grad
                })
            })
        });
    }
    g.finish();
}

fn dfal(c: &mut Criterion) {
    let mut g = c.benchmark_group("dfal_5_outer");
    g.sample_size(10).measurement_time(Duration::from_secs(10));
    for nodes in [5, 10] {
        let inst = instance(nodes, 10 * nodes / 5);
        let mut params = default_params(&inst.nodes, &inst.graph, None).unwrap();
        params.max_outer = 5;
        for (name, exec) in EXECS {
            g.bench_with_input(BenchmarkId::new(name, nodes), &inst, |b, inst| {
                b.iter(|| {
                    let opts = RunOptions {
                        exec,
                        ..Default::default()
                    };
                    black_box(dfal_solve(&inst.nodes, &inst.graph, &params, &opts, &mut ()).unwrap())
                })
            });
        }
    }
    g.finish();
}

fn sadmm(c: &mut Criterion) {
    let inst = instance(5, 10);
    let opts = AdmmOptions {
        max_iters: 20,
        ..Default::default()
    };
    let mut g = c.benchmark_group("sadmm_20_rounds");
    g.sample_size(10);
    for (name, exec) in EXECS {
        g.bench_function(name, |b| {
            let run = RunOptions {
                exec,
                ..Default::default()
            };
            b.iter(|| black_box(sadmm_solve(&inst.nodes, &inst.graph, &opts, &run, false).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, node_gradients, dfal, sadmm);
criterion_main!(benches);
