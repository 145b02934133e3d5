use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use biasedagg::adaptive::{adaptive_eval_run, AdaptiveEvalConfig, ResidualMode, SSchedule};
use biasedagg::bellman::{policy_evaluate_exact, rollout_policy, value_iterate_exact};
use biasedagg::harness::experiment::{run_improvement, RunRecord, RunStatus};
use biasedagg::harness::generate::{gen_gridworld, gen_random_mdp, GridworldSpec, RandomMdpSpec};
use biasedagg::harness::verify::{verify_suite, Scale, VerifyOptions};
use biasedagg::scheme_builder::{
    build_scheme, BuilderConfig, IntervalRule, Sampling, SimilarityRule,
};
use biasedagg::solvers::{solve_fixed_point_exact, solve_stochastic, StepRule, VisitPolicy};
use biasedagg::{AggregationScheme, CostFunction, Mdp, Policy, SolveConfig, SolveTrace};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "biasedagg",
    version,
    about = "Biased aggregation for finite discounted MDPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a problem.
    #[command(subcommand)]
    Gen(Gen),
    /// Solve a problem or an aggregate problem.
    #[command(subcommand)]
    Solve(Solve),
    /// Build a residual-based aggregation scheme.
    BuildScheme(BuildSchemeArgs),
    /// Policy improvement with V = J_mu, saved as a run record.
    Improve(ImproveArgs),
    /// Approximate policy evaluation with adaptive aggregation.
    EvalAdaptive(EvalAdaptiveArgs),
    /// One-step lookahead on the cost of a base policy.
    Rollout(RolloutArgs),
    /// Run the verification suite; exits nonzero on any failure.
    Verify(VerifyArgs),
}

#[derive(Subcommand)]
enum Gen {
    RandomMdp {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        actions: usize,
        #[arg(long, default_value_t = 3)]
        branching: usize,
        #[arg(long, default_value_t = 0.0)]
        cost_lo: f64,
        #[arg(long, default_value_t = 1.0)]
        cost_hi: f64,
        #[arg(long, default_value_t = 0.9)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Gridworld {
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0.9)]
        alpha: f64,
        /// 1-based goal cell in row-major order (default: the last cell).
        #[arg(long)]
        goal: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    scheme: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iters: usize,
    /// Residual trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Solve {
    /// Value iteration for J*.
    Exact {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Contraction iteration on the aggregate mapping.
    Aggregate(SolveArgs),
    /// Sampled iteration on the aggregate mapping.
    Stochastic {
        #[command(flatten)]
        common: SolveArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `harmonic:<c>` or `constant:<gamma>`.
        #[arg(long, default_value = "harmonic:1", value_parser = parse_step_rule)]
        step_rule: StepRule,
        #[arg(long, value_enum, default_value_t = Visit::UniformRandom)]
        visit: Visit,
        #[arg(long, default_value_t = 1000)]
        check_every: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Visit {
    UniformRandom,
    RoundRobin,
}

#[derive(Clone, Copy, ValueEnum)]
enum Intervals {
    EqualWidth,
    EqualCount,
}

#[derive(Clone, Copy, ValueEnum)]
enum Similarity {
    NearestResidual,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Small,
    Full,
}

#[derive(Args)]
struct BuilderArgs {
    #[arg(long, default_value_t = 1)]
    q: usize,
    /// Residual depth.
    #[arg(long, default_value_t = 1)]
    s: usize,
    /// Sample this many states without replacement (default: all states).
    #[arg(long)]
    sample_count: Option<usize>,
    #[arg(long, value_enum, default_value_t = Intervals::EqualCount)]
    interval_rule: Intervals,
    #[arg(long, value_enum, default_value_t = Similarity::NearestResidual)]
    similarity: Similarity,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl BuilderArgs {
    fn config(&self) -> BuilderConfig {
        BuilderConfig {
            q: self.q,
            s: self.s,
            sample_count: self.sample_count.unwrap_or(0),
            sampling: if self.sample_count.is_some() {
                Sampling::UniformWithoutReplacement
            } else {
                Sampling::AllStates
            },
            interval_rule: interval_rule(self.interval_rule),
            similarity_rule: match self.similarity {
                Similarity::NearestResidual => SimilarityRule::NearestResidual,
                Similarity::Uniform => SimilarityRule::Uniform,
            },
            seed: self.seed,
            ..BuilderConfig::default()
        }
    }
}

#[derive(Args)]
struct BuildSchemeArgs {
    #[arg(long)]
    mdp: PathBuf,
    /// Bias function as a JSON array (default: zero).
    #[arg(long)]
    bias: Option<PathBuf>,
    #[command(flatten)]
    builder: BuilderArgs,
    /// Partition report as CSV.
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ImproveArgs {
    #[arg(long)]
    mdp: PathBuf,
    /// Base policy as a JSON array of action ids (default: first actions).
    #[arg(long)]
    policy: Option<PathBuf>,
    #[command(flatten)]
    builder: BuilderArgs,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iters: usize,
    /// Rerun a saved record and check that its outputs are reproduced.
    #[arg(long, conflicts_with = "policy")]
    replay: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalAdaptiveArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    q: usize,
    #[arg(long, default_value_t = 2)]
    s: usize,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long)]
    sample_count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Intervals::EqualCount)]
    interval_rule: Intervals,
    /// Use `T^{s-1}J - T^s J` as the residual.
    #[arg(long)]
    single_step: bool,
    #[arg(long)]
    adaptive_s: bool,
    /// Always keep the corrected iterate.
    #[arg(long)]
    no_safeguard: bool,
    /// Per-step trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = ScaleArg::Small)]
    scale: ScaleArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replace alpha by this multiple of itself inside the aggregate mapping.
    #[arg(long)]
    fault_alpha: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn interval_rule(i: Intervals) -> IntervalRule {
    match i {
        Intervals::EqualWidth => IntervalRule::EqualWidth,
        Intervals::EqualCount => IntervalRule::EqualCount,
    }
}

fn parse_step_rule(s: &str) -> std::result::Result<StepRule, String> {
    let (kind, value) = s.split_once(':').unwrap_or((s, ""));
    let parse = |default: f64| {
        if value.is_empty() {
            Ok(default)
        } else {
            value
                .parse::<f64>()
                .map_err(|e| format!("bad step parameter {value:?}: {e}"))
        }
    };
    match kind {
        "harmonic" => Ok(StepRule::Harmonic { c: parse(1.0)? }),
        "constant" => Ok(StepRule::Constant { gamma: parse(0.1)? }),
        _ => Err(format!(
            "unknown step rule {kind:?}; use harmonic:<c> or constant:<gamma>"
        )),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Writes to `path`, or to stdout when absent.
fn emit(out: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

fn emit_json(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    emit(out, |w| Ok(serde_json::to_writer_pretty(w, value)?))
}

fn load_mdp(path: &Path) -> Result<Mdp> {
    Ok(Mdp::read_json(open(path)?)?)
}

fn load_policy(m: &Mdp, path: Option<&Path>) -> Result<Policy> {
    match path {
        Some(p) => Ok(Policy::read_json(m, open(p)?)?),
        None => Ok(Policy::first_actions(m)),
    }
}

fn write_trace(path: Option<&Path>, trace: &SolveTrace) -> Result<()> {
    if let Some(p) = path {
        let mut w = create(p)?;
        trace.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn solve_config(args: &SolveArgs) -> SolveConfig {
    SolveConfig {
        tol: args.tol,
        max_iters: args.max_iters,
        ..SolveConfig::default()
    }
}

fn solve_output(
    m: &Mdp,
    sol: &biasedagg::AggregateSolution,
    trace: &SolveTrace,
) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(sol.to_file(m))?;
    v["iterations"] = json!(trace.iterations());
    v["status"] = serde_json::to_value(trace.status)?;
    Ok(v)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen(g) => {
            let (m, out) = match g {
                Gen::RandomMdp {
                    n,
                    actions,
                    branching,
                    cost_lo,
                    cost_hi,
                    alpha,
                    seed,
                    out,
                } => {
                    let spec = RandomMdpSpec {
                        cost_range: (cost_lo, cost_hi),
                        ..RandomMdpSpec::new(n, actions, branching, alpha, seed)
                    };
                    (gen_random_mdp(&spec)?, out)
                }
                Gen::Gridworld {
                    width,
                    height,
                    noise,
                    alpha,
                    goal,
                    out,
                } => {
                    let goal = match goal {
                        Some(0) => bail!("goal cells are 1-based"),
                        g => g.map(|g| g - 1),
                    };
                    let spec = GridworldSpec {
                        width,
                        height,
                        noise,
                        alpha,
                        goal,
                    };
                    (gen_gridworld(&spec)?, out)
                }
            };
            emit(out.as_deref(), |w| Ok(m.write_json(w)?))?;
        }
        Command::Solve(Solve::Exact { mdp, tol, out }) => {
            let m = load_mdp(&mdp)?;
            let vi = value_iterate_exact(&m, tol)?;
            let value = json!({
                "J": vi.values,
                "policy": vi.policy.to_ids(&m),
                "iterations": vi.iterations,
                "residual": vi.residual,
            });
            emit_json(out.as_deref(), &value)?;
        }
        Command::Solve(Solve::Aggregate(args)) => {
            let m = load_mdp(&args.mdp)?;
            let sch = AggregationScheme::read_json(open(&args.scheme)?)?;
            let (sol, trace) = solve_fixed_point_exact(&m, &sch, &solve_config(&args))?;
            write_trace(args.trace.as_deref(), &trace)?;
            emit_json(args.out.as_deref(), &solve_output(&m, &sol, &trace)?)?;
        }
        Command::Solve(Solve::Stochastic {
            common,
            seed,
            step_rule,
            visit,
            check_every,
        }) => {
            let m = load_mdp(&common.mdp)?;
            let sch = AggregationScheme::read_json(open(&common.scheme)?)?;
            let cfg = SolveConfig {
                seed,
                step_rule,
                visit_policy: match visit {
                    Visit::UniformRandom => VisitPolicy::UniformRandom,
                    Visit::RoundRobin => VisitPolicy::RoundRobin,
                },
                check_every,
                ..solve_config(&common)
            };
            let (sol, trace) = solve_stochastic(&m, &sch, &cfg)?;
            write_trace(common.trace.as_deref(), &trace)?;
            emit_json(common.out.as_deref(), &solve_output(&m, &sol, &trace)?)?;
        }
        Command::BuildScheme(args) => {
            let m = load_mdp(&args.mdp)?;
            let v = match &args.bias {
                Some(p) => {
                    serde_json::from_reader(open(p)?).context("reading the bias function")?
                }
                None => CostFunction::zeros(m.n()),
            };
            let (sch, partition) = build_scheme(&m, &v, &args.builder.config())?;
            if let Some(p) = &args.partition {
                let mut w = create(p)?;
                partition.write_csv(&mut w)?;
                w.flush()?;
            }
            if partition.dropped() > 0 {
                eprintln!(
                    "note: {} of {} requested aggregates were empty",
                    partition.dropped(),
                    partition.requested_q
                );
            }
            emit(args.out.as_deref(), |w| Ok(sch.write_json(w)?))?;
        }
        Command::Improve(args) => {
            let m = load_mdp(&args.mdp)?;
            let rec = match &args.replay {
                Some(p) => {
                    let saved = RunRecord::read_json(open(p)?)?;
                    if saved.problem_hash != m.content_hash() {
                        bail!("the record was made for a different problem");
                    }
                    let rec = saved.replay(&m)?;
                    if !rec.same_outputs(&saved) {
                        bail!("replay did not reproduce the saved outputs");
                    }
                    eprintln!("replay reproduced the saved outputs");
                    rec
                }
                None => {
                    let base = load_policy(&m, args.policy.as_deref())?;
                    let solve = SolveConfig {
                        tol: args.tol,
                        max_iters: args.max_iters,
                        ..SolveConfig::default()
                    };
                    run_improvement(&m, &base, &args.builder.config(), &solve)
                }
            };
            emit(args.out.as_deref(), |w| Ok(rec.write_json(w)?))?;
            if let RunStatus::Failed(msg) = &rec.status {
                eprintln!("run failed: {msg}");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::EvalAdaptive(args) => {
            let m = load_mdp(&args.mdp)?;
            let mu = load_policy(&m, args.policy.as_deref())?;
            let cfg = AdaptiveEvalConfig {
                s_schedule: SSchedule::Constant(args.s),
                q: args.q,
                outer_iters: args.max_iters,
                tol: args.tol,
                sampling: if args.sample_count.is_some() {
                    Sampling::UniformWithoutReplacement
                } else {
                    Sampling::AllStates
                },
                sample_count: args.sample_count.unwrap_or(0),
                seed: args.seed,
                residual_mode: if args.single_step {
                    ResidualMode::SingleStep
                } else {
                    ResidualMode::Multistep
                },
                interval_rule: interval_rule(args.interval_rule),
                adaptive_s: args.adaptive_s,
                safeguard: !args.no_safeguard,
            };
            let res = adaptive_eval_run(&m, &mu, &cfg)?;
            if let Some(p) = &args.trace {
                let mut w = create(p)?;
                res.write_trace_csv(&mut w)?;
                w.flush()?;
            }
            emit_json(args.out.as_deref(), &serde_json::to_value(&res)?)?;
        }
        Command::Rollout(args) => {
            let m = load_mdp(&args.mdp)?;
            let base = load_policy(&m, args.policy.as_deref())?;
            let rolled = rollout_policy(&m, &base)?;
            let value = json!({
                "base_policy": base.to_ids(&m),
                "J_base": policy_evaluate_exact(&m, &base)?,
                "policy": rolled.to_ids(&m),
                "J": policy_evaluate_exact(&m, &rolled)?,
            });
            emit_json(args.out.as_deref(), &value)?;
        }
        Command::Verify(args) => {
            let opts = VerifyOptions {
                fault_alpha_factor: args.fault_alpha,
                threads: args.threads,
                ..VerifyOptions::new(
                    match args.scale {
                        ScaleArg::Small => Scale::Small,
                        ScaleArg::Full => Scale::Full,
                    },
                    args.seed,
                )
            };
            let report = verify_suite(&opts)?;
            emit(args.out.as_deref(), |w| Ok(report.write_text(w)?))?;
            if !report.passed() {
                let names: Vec<&str> = report.failed().map(|c| c.name.as_str()).collect();
                eprintln!("failed checks: {}", names.join(", "));
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
