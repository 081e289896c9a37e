use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dfal_core::bench::{
    generate_instance, reference_solve, run_algorithm, run_benchmark, Algorithm, BenchConfig, InstanceSpec,
    ProblemInstance, Reference, SolveSettings,
};
use dfal_core::funcs::{GroupPartition, SparseGroupReg};
use dfal_core::{Exec, Topology};

#[derive(Parser)]
#[command(name = "dfal", version, about = "Decentralized composite optimization on simulated networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an instance and write it as JSON.
    Gen {
        #[command(flatten)]
        inst: InstanceArgs,
        /// Partition file applied to every node (JSON array of 1-based index arrays).
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the reference optimum and write it as JSON.
    Ref {
        #[command(flatten)]
        inst: InstanceArgs,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one solver; writes `<alg>_trace.csv` and `<alg>_summary.json` into `--out`.
    Solve(SolveArgs),
    /// Run a benchmark matrix from a JSON config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Directory for `report.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InstanceArgs {
    /// Load an instance file instead of generating one.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, default_value = "star")]
    topology: Topology,
    #[arg(long, default_value_t = 1)]
    case: u8,
    #[arg(long, default_value_t = 5)]
    nodes: usize,
    /// Group size n_g.
    #[arg(long, default_value_t = 10)]
    ng: usize,
    /// Number of groups K.
    #[arg(long, default_value_t = 10)]
    groups: usize,
    /// Generator seed (default 1); with `--instance`, the run seed (default: the instance's).
    #[arg(long)]
    seed: Option<u64>,
    /// Edge file for `--topology file`.
    #[arg(long)]
    edges: Option<PathBuf>,
}

impl InstanceArgs {
    fn load(&self) -> Result<ProblemInstance> {
        if let Some(path) = &self.instance {
            let text = read(path)?;
            return Ok(ProblemInstance::from_json(&text)?);
        }
        let edge_file = match (&self.edges, self.topology) {
            (Some(p), _) => Some(read(p)?),
            (None, Topology::File) => bail!("--topology file needs --edges"),
            (None, _) => None,
        };
        Ok(generate_instance(&InstanceSpec {
            case: self.case,
            topology: self.topology,
            num_nodes: self.nodes,
            group_size: self.ng,
            num_groups: self.groups,
            seed: self.seed.unwrap_or(1),
            edge_file,
        })?)
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    alg: Algorithm,
    #[command(flatten)]
    inst: InstanceArgs,
    /// DFAL shrink factor.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    bx: Option<f64>,
    #[arg(long)]
    eps_opt: Option<f64>,
    #[arg(long)]
    eps_feas: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    /// ADMM/SADMM penalty.
    #[arg(long)]
    admm_c: Option<f64>,
    /// Failure probability for the asynchronous variants.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    budget_secs: Option<f64>,
    /// Reference file from `ref`; computed when absent.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Skip the reference; the run then stops at the outer cap.
    #[arg(long, conflicts_with = "reference")]
    no_reference: bool,
    /// Run per-node work on the rayon pool.
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    out: PathBuf,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen(inst: &InstanceArgs, partition: Option<&Path>, out: &Path) -> Result<()> {
    let mut instance = inst.load()?;
    if let Some(p) = partition {
        let part = GroupPartition::from_json(&read(p)?)?;
        if part.dim() != instance.dim {
            bail!("partition covers {} coordinates, instance has {}", part.dim(), instance.dim);
        }
        for node in &mut instance.nodes {
            node.reg = SparseGroupReg::new(node.reg.beta1, node.reg.beta2, part.clone())?;
        }
    }
    write(out, &instance.to_json()?)?;
    println!(
        "wrote {}: N = {}, n = {}, m_i = {}",
        out.display(),
        instance.num_nodes(),
        instance.dim,
        instance.rows_per_node
    );
    Ok(())
}

fn reference(inst: &InstanceArgs, tol: f64, out: &Path) -> Result<()> {
    let instance = inst.load()?;
    let r = reference_solve(&instance, tol, Exec::Parallel)?;
    write(out, &serde_json::to_string_pretty(&r)?)?;
    println!(
        "F* = {:.12} via {} ({} iterations, converged = {})",
        r.f_star, r.method, r.iterations, r.converged
    );
    Ok(())
}

fn solve(args: &SolveArgs) -> Result<()> {
    let instance = args.inst.load()?;
    let f_star = if args.no_reference {
        None
    } else if let Some(p) = &args.reference {
        let r: Reference = serde_json::from_str(&read(p)?)?;
        Some(r.f_star)
    } else {
        Some(reference_solve(&instance, 1e-9, Exec::Parallel)?.f_star)
    };
    let settings = SolveSettings {
        c: args.c,
        lambda1: args.lambda1,
        bx: args.bx,
        eps_opt: args.eps_opt,
        eps_feas: args.eps_feas,
        max_outer: args.max_outer,
        admm_c: args.admm_c,
        p: args.p,
        budget_secs: args.budget_secs,
    };
    let exec = if args.parallel { Exec::Parallel } else { Exec::Sequential };
    let seed = args.inst.seed.unwrap_or(instance.spec.seed);
    let trace = run_algorithm(&instance, args.alg, &settings, f_star, seed, exec)?;
    let config = serde_json::json!({
        "algorithm": args.alg,
        "instance": instance.spec,
        "settings": settings,
        "reference": f_star,
        "parallel": args.parallel,
    });
    let summary = trace.summary(seed, config);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let csv_path = args.out.join(format!("{}_trace.csv", args.alg));
    let json_path = args.out.join(format!("{}_summary.json", args.alg));
    write(&csv_path, &trace.to_csv_string()?)?;
    write(&json_path, &serde_json::to_string_pretty(&summary)?)?;
    println!(
        "{}: {} after {} iterations, F = {:.10}, rel = {:.3e}, CV = {:.3e}, comm/node = {}",
        trace.algorithm,
        summary.termination.as_str(),
        summary.iterations,
        summary.final_f,
        summary.final_rel_subopt,
        summary.final_cv,
        summary.comm_per_node_max
    );
    Ok(())
}

fn bench(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = BenchConfig::from_json(&read(config)?)?;
    let report = run_benchmark(&cfg)?;
    print!("{}", report.table());
    println!("# digest {}", report.digest());
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write(&dir.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Gen { inst, partition, out } => gen(&inst, partition.as_deref(), &out),
        Cmd::Ref { inst, tol, out } => reference(&inst, tol, &out),
        Cmd::Solve(args) => solve(&args),
        Cmd::Bench { config, out } => bench(&config, out.as_deref()),
    }
}
