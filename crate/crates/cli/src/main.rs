use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use softq_core::bounds::{self, BoundKind, BoundParams};
use softq_core::experiment::{
    parse_config, run_sweep, write_outputs, ExperimentConfig, Preset, Protocol, BUILTIN_MDP,
};
use softq_core::format::sig17;
use softq_core::mdp::{build_mdp, MdpSpec, TabularMdp};
use softq_core::soft::SoftOperator;
use softq_core::solvers::{optimal_q, soft_fixed_point, DEFAULT_MAX_ITER, DEFAULT_TOL};
use softq_core::verify::{verify, Mutation, VerifyOptions};

#[derive(Parser)]
#[command(
    name = "softq",
    version,
    about = "Tabular soft Q-learning experiments and finite-time bounds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seed-averaged sweep and write CSV, SVG and a manifest.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = ["fig2-lse", "fig2-boltz", "fig3-lse", "fig3-boltz"])]
        preset: Option<String>,
        #[arg(long, value_enum)]
        protocol: Option<ProtocolArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every acceptance check on the built-in two-state MDP.
    Verify {
        #[arg(long)]
        quick: bool,
        /// Also write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Inject a known defect; the run is expected to fail.
        #[arg(long, value_enum, hide = true)]
        mutate: Option<MutationArg>,
    },
    /// Evaluate a bound or constant over one or more step counts.
    Bounds {
        #[arg(long)]
        kind: String,
        /// `K`, `K1,K2,...` or `START:END:STEP` (END inclusive).
        #[arg(long)]
        k: String,
        /// TOML file with the bound parameters.
        #[arg(long)]
        params: PathBuf,
    },
    /// Solve an MDP exactly: optimal Q, or the soft Bellman fixed point.
    Solve {
        /// `fig1` or a path to an MDP TOML file.
        #[arg(long)]
        mdp: String,
        #[arg(long, value_enum, default_value = "max")]
        operator: OperatorArg,
        #[arg(long)]
        beta: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Iid,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum OperatorArg {
    Lse,
    Boltz,
    Max,
}

#[derive(Clone, Copy, ValueEnum)]
enum MutationArg {
    DecayRate,
}

enum Failure {
    /// Exit code 1.
    Criteria,
    /// Exit code 2.
    Usage(String),
    /// Exit code 1.
    Runtime(String),
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn base_seed_override() -> Result<Option<u64>, Failure> {
    match std::env::var("SOFTQ_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("SOFTQ_SEED must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn load_mdp(name: &str) -> Result<TabularMdp, Failure> {
    let spec = if name == BUILTIN_MDP {
        MdpSpec::two_state_example()
    } else {
        let text = std::fs::read_to_string(name).map_err(|e| usage(format!("{name}: {e}")))?;
        MdpSpec::from_toml(&text).map_err(|e| usage(format!("{name}: {e}")))?
    };
    build_mdp(&spec, true).map_err(|e| usage(format!("{name}: {e}")))
}

fn cmd_run(
    config: Option<PathBuf>,
    preset: Option<String>,
    protocol: Option<ProtocolArg>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    if config.is_none() && preset.is_none() {
        return Err(usage("run needs --config, --preset, or both"));
    }
    let preset = preset
        .as_deref()
        .map(|p| Preset::parse(p).expect("restricted by clap"));
    let (text, base_dir) = match &config {
        Some(path) => (
            std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?,
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (String::new(), PathBuf::from(".")),
    };
    let mut cfg: ExperimentConfig = parse_config(&text, preset).map_err(usage)?;
    if let Some(seed) = base_seed_override()? {
        cfg.base_seed = seed;
    }
    if let Some(p) = protocol {
        cfg.protocol = match p {
            ProtocolArg::Iid => Protocol::Iid,
            ProtocolArg::Paper => Protocol::Paper,
        };
    }
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    cfg.validate().map_err(usage)?;
    let mdp = cfg.load_mdp(&base_dir).map_err(usage)?;

    let results = run_sweep(&cfg, &mdp).map_err(runtime)?;
    let files = write_outputs(&results, &cfg, &cfg.out_dir).map_err(runtime)?;
    for r in &results {
        println!(
            "{} sweep over {} ({} steps):",
            r.operator.name(),
            r.axis.name(),
            r.n_steps
        );
        for p in &r.points {
            println!(
                "  {}={:<10} mean_error={:.6e} stderr={:.3e} bound={:.6e}{}",
                r.axis.name(),
                p.value,
                p.mean_error,
                p.stderr,
                p.bound,
                if p.tags.is_empty() {
                    String::new()
                } else {
                    format!(" [{}]", p.tags.join(", "))
                }
            );
            for s in p
                .seeds
                .iter()
                .filter_map(|s| s.failure.as_ref().map(|f| (s.seed_index, f)))
            {
                eprintln!("  seed {} failed: {}", s.0, s.1);
            }
        }
    }
    if cfg.protocol == Protocol::Paper {
        eprintln!("note: trajectory protocol violates the i.i.d. sampling assumption; bounds use empirical visitation");
    }
    for path in files
        .csv
        .iter()
        .chain(&files.seed_csv)
        .chain(&files.svg)
        .chain([&files.manifest])
    {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_verify(
    quick: bool,
    report: Option<PathBuf>,
    mutate: Option<MutationArg>,
) -> Result<(), Failure> {
    let opts = VerifyOptions {
        quick,
        mutation: mutate.map(|MutationArg::DecayRate| Mutation::DecayRateWithoutVisitProbability),
        base_seed: base_seed_override()?.unwrap_or(0),
    };
    let result = verify(opts);
    print!("{}", result.summary());
    if let Some(path) = report {
        std::fs::write(&path, result.to_json() + "\n")
            .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    }
    if result.all_passed {
        Ok(())
    } else {
        Err(Failure::Criteria)
    }
}

fn parse_steps(spec: &str) -> Result<Vec<u64>, Failure> {
    let bad = || usage(format!("cannot parse --k {spec:?}"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [start, end, step] => {
            let (start, end, step) = (num(start)?, num(end)?, num(step)?);
            if step == 0 || start > end {
                return Err(bad());
            }
            Ok((start..=end).step_by(step as usize).collect())
        }
        [list] => list.split(',').map(num).collect(),
        _ => Err(bad()),
    }
}

fn cmd_bounds(kind: &str, k: &str, params: &Path) -> Result<(), Failure> {
    let text =
        std::fs::read_to_string(params).map_err(|e| usage(format!("{}: {e}", params.display())))?;
    let p: BoundParams =
        toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", params.display())))?;
    p.validate().map_err(usage)?;
    let ks = parse_steps(k)?;
    let eval: Box<dyn Fn(u64) -> f64> = match kind {
        "noise-moment" => Box::new(|_| bounds::noise_moment_bound(&p)),
        "iterate" => Box::new(|_| bounds::iterate_bound(&p)),
        "decay-rate" => Box::new(|_| bounds::decay_rate(&p)),
        other => {
            let kind = BoundKind::parse(other).ok_or_else(|| {
                usage(format!(
                    "unknown kind {other:?}; expected one of lse-lower, lse-final, boltz-lower, boltz-final, trace-xk, noise-moment, iterate, decay-rate"
                ))
            })?;
            Box::new(move |k| kind.evaluate(k, &p))
        }
    };
    println!("k,bound");
    for k in ks {
        println!("{k},{}", sig17(eval(k)));
    }
    Ok(())
}

fn cmd_solve(mdp: &str, operator: OperatorArg, beta: Option<f64>) -> Result<(), Failure> {
    let model = load_mdp(mdp)?;
    let q = match operator {
        OperatorArg::Max => {
            if beta.is_some() {
                eprintln!("note: --beta is ignored with --operator max");
            }
            optimal_q(&model, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(runtime)?
        }
        OperatorArg::Lse | OperatorArg::Boltz => {
            let beta = beta.ok_or_else(|| usage("--beta is required for soft operators"))?;
            let op = match operator {
                OperatorArg::Lse => SoftOperator::lse(beta),
                _ => SoftOperator::boltzmann(beta),
            }
            .map_err(usage)?;
            let report = soft_fixed_point(&model, op, DEFAULT_TOL, DEFAULT_MAX_ITER, 8, 0)
                .map_err(runtime)?;
            if !report.converged {
                eprintln!(
                    "warning: iteration did not converge (residual {:.3e})",
                    report.residual
                );
            }
            if report.multiple_fixed_points {
                eprintln!(
                    "warning: starting points reached different limits (max disagreement {:.3e}); reporting the one from zero",
                    report.max_disagreement
                );
            }
            report.q
        }
    };
    println!("state,action,q");
    for s in 0..model.n_states() {
        for a in 0..model.n_actions() {
            println!("{},{},{}", s + 1, a + 1, sig17(q.get(s, a)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            preset,
            protocol,
            out,
        } => cmd_run(config, preset, protocol, out),
        Command::Verify {
            quick,
            report,
            mutate,
        } => cmd_verify(quick, report, mutate),
        Command::Bounds { kind, k, params } => cmd_bounds(&kind, &k, &params),
        Command::Solve {
            mdp,
            operator,
            beta,
        } => cmd_solve(&mdp, operator, beta),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Criteria) => ExitCode::from(1),
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
