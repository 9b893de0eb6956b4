use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mapf_hd::bench::{self, Source, SweepConfig};
use mapf_hd::oracle::{self, OracleConfig};
use mapf_hd::planner::{plan_target_path, OccupancySnapshot};
use mapf_hd::{
    generate_random, make_experiment_env, parse_instance, serialize_instance, solve,
    validate_solution, ExperimentEnv, GoalPolicy, Instance, OracleOutcome, Solution, SolverLimits,
};

/// Path finding for target agents in grids packed with obstructing agents.
#[derive(Parser)]
#[command(name = "mapf-hd", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a seeded random instance.
    Gen(GenArgs),
    /// Solve an instance; prints solution JSON, or failure JSON and exits 1.
    Solve(SolveArgs),
    /// Check a solution; prints one line per violation and exits 1 if any.
    Validate(ValidateArgs),
    /// Exact minimum makespan of a tiny instance.
    Oracle(OracleArgs),
    /// Density sweep, one CSV row per trial.
    Bench(BenchArgs),
    /// Per-density aggregates of a sweep CSV.
    Summarize(SummarizeArgs),
    /// Print one target's planned route (obstructors ignored) as JSON.
    Plan(PlanArgs),
}

#[derive(Args)]
struct SolverFlags {
    /// Wall-time limit per solve.
    #[arg(long, default_value_t = 180)]
    timeout_secs: u64,
    /// Disable replanning of stuck target routes.
    #[arg(long)]
    paper_mode: bool,
}

impl SolverFlags {
    fn limits(&self) -> SolverLimits {
        let base = if self.paper_mode {
            SolverLimits::paper_mode()
        } else {
            SolverLimits::default()
        };
        SolverLimits {
            max_wall_time: Duration::from_secs(self.timeout_secs),
            ..base
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    env: ExperimentEnv,
    /// Defaults to the environment's target count.
    #[arg(long)]
    targets: Option<usize>,
    #[arg(long)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to the environment's policy.
    #[arg(long)]
    goal_policy: Option<GoalPolicy>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    solution: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Deepest makespan explored.
    #[arg(long)]
    cap: Option<usize>,
    /// Largest estimated configuration count attempted.
    #[arg(long, default_value_t = OracleConfig::default().budget)]
    budget: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, conflicts_with = "instance", required_unless_present = "instance")]
    env: Option<ExperimentEnv>,
    /// Instance files or directories of .json files, one trial each.
    #[arg(long)]
    instance: Vec<PathBuf>,
    #[arg(long)]
    targets: Option<usize>,
    #[arg(long)]
    density: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    goal_policy: Option<GoalPolicy>,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Target index.
    #[arg(long, default_value_t = 0)]
    target: usize,
}

#[derive(Args)]
struct SummarizeArgs {
    csv: PathBuf,
}

fn read_instance(path: &Path) -> Result<Instance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_instance(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(io::stdout().write_all(text.as_bytes())?),
    }
}

fn instance_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<io::Result<_>>()?;
            found.retain(|f| f.extension().is_some_and(|e| e == "json"));
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn gen(a: GenArgs) -> Result<ExitCode> {
    let grid = make_experiment_env(a.env);
    let targets = a.targets.unwrap_or(a.env.default_targets());
    let policy = a.goal_policy.unwrap_or(a.env.default_goal_policy());
    let inst = generate_random(&grid, targets, a.density, a.seed, policy)?;
    emit(a.out.as_deref(), &serialize_instance(&inst))?;
    Ok(ExitCode::SUCCESS)
}

fn solve_cmd(a: SolveArgs) -> Result<ExitCode> {
    let inst = read_instance(&a.instance)?;
    match solve(&inst, &a.solver.limits()) {
        Ok(sol) => {
            emit(a.out.as_deref(), &sol.to_json())?;
            Ok(ExitCode::SUCCESS)
        }
        Err(f) => {
            emit(a.out.as_deref(), &(f.to_json() + "\n"))?;
            Ok(ExitCode::FAILURE)
        }
    }
}

fn validate(a: ValidateArgs) -> Result<ExitCode> {
    let inst = read_instance(&a.instance)?;
    let text = fs::read_to_string(&a.solution)
        .with_context(|| format!("reading {}", a.solution.display()))?;
    let sol = Solution::from_json(&text).with_context(|| format!("parsing {}", a.solution.display()))?;
    let report = validate_solution(&inst, &sol);
    if report.is_valid() {
        println!("valid makespan={}", sol.makespan);
        Ok(ExitCode::SUCCESS)
    } else {
        print!("{report}");
        Ok(ExitCode::FAILURE)
    }
}

fn oracle_cmd(a: OracleArgs) -> Result<ExitCode> {
    let inst = read_instance(&a.instance)?;
    let cfg = OracleConfig {
        cap: a.cap,
        budget: a.budget,
        ..OracleConfig::default()
    };
    match oracle::search(&inst, cfg)? {
        OracleOutcome::Optimal(t) => println!("optimal {t}"),
        OracleOutcome::Unsolvable => println!("unsolvable"),
        OracleOutcome::CapExceeded => println!("cap_exceeded"),
    }
    Ok(ExitCode::SUCCESS)
}

fn bench_cmd(a: BenchArgs) -> Result<ExitCode> {
    let source = match a.env {
        Some(env) => Source::Env {
            env,
            n_targets: a.targets.unwrap_or(env.default_targets()),
            goal_policy: a.goal_policy.unwrap_or(env.default_goal_policy()),
        },
        None => {
            let list = instance_files(&a.instance)?
                .iter()
                .map(|p| read_instance(p))
                .collect::<Result<Vec<_>>>()?;
            Source::Instances(list)
        }
    };
    if a.env.is_some() && a.density.is_empty() {
        bail!("--density is required with --env");
    }
    let cfg = SweepConfig {
        source,
        densities: a.density,
        trials: a.trials,
        base_seed: a.seed,
        limits: a.solver.limits(),
    };
    let records = bench::run_sweep(&cfg)?;
    let mut buf = Vec::new();
    bench::write_csv(&records, &mut buf)?;
    emit(a.out.as_deref(), std::str::from_utf8(&buf)?)?;
    Ok(ExitCode::SUCCESS)
}

fn summarize_cmd(a: SummarizeArgs) -> Result<ExitCode> {
    let file = fs::File::open(&a.csv).with_context(|| format!("reading {}", a.csv.display()))?;
    let records = bench::read_csv(file)?;
    print!("{}", bench::render_summary(&bench::summarize(&records)));
    Ok(ExitCode::SUCCESS)
}

fn plan_cmd(a: PlanArgs) -> Result<ExitCode> {
    let inst = read_instance(&a.instance)?;
    let Some(t) = inst.targets().get(a.target) else {
        bail!("instance has {} targets", inst.num_targets());
    };
    let starts = inst.starts();
    let m = inst.num_targets();
    let snapshot = OccupancySnapshot::new(inst.grid(), &starts[..m], &starts[m..]);
    let path = plan_target_path(inst.grid(), &snapshot, t.start, t.goal)?;
    let pairs: Vec<[u32; 2]> = path.iter().map(|v| [v.x, v.y]).collect();
    println!("{pairs:?}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Gen(a) => gen(a),
        Cmd::Solve(a) => solve_cmd(a),
        Cmd::Validate(a) => validate(a),
        Cmd::Oracle(a) => oracle_cmd(a),
        Cmd::Bench(a) => bench_cmd(a),
        Cmd::Summarize(a) => summarize_cmd(a),
        Cmd::Plan(a) => plan_cmd(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
