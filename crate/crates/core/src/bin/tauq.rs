use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tauq::dgp::{build_dgp, DgpInstance, DgpSpec};
use tauq::harness::{
    emit_report, normalized_mse, run_experiment_with_jobs, ExperimentConfig, ReportFormat,
};
use tauq::io::{load_dataset, read_json, write_dataset_csv, write_json};
use tauq::policy::PolicySpec;
use tauq::rlearner::{
    default_eps_grid, empirical_loss, evaluate_policy, excess_variance_check, optimize_policy,
    orthogonality_check, EvalConfig, NextAction, OptConfig, Perturbation, TabularMdp,
};
use tauq::{Result, TauqError};

#[derive(Parser)]
#[command(
    name = "tauq",
    version,
    about = "Orthogonal difference-of-Q estimation for offline RL"
)]
struct Cli {
    /// Root seed; overrides the seed in any config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories from a DGP.
    Simulate {
        /// DGP JSON file or a kind name such as `one-d-validation`.
        #[arg(long)]
        dgp: String,
        #[arg(long)]
        n: usize,
        /// `behavior`, `evaluation`, or a policy JSON file.
        #[arg(long, default_value = "behavior")]
        policy: String,
        /// Also write a long-format CSV next to the JSON output.
        #[arg(long)]
        csv: bool,
    },
    /// Estimate the contrast of a target policy from a dataset.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// `behavior`, `evaluation` (both need --dgp), or a policy JSON file.
        #[arg(long, default_value = "evaluation")]
        policy: String,
        #[arg(long)]
        dgp: Option<String>,
        /// Evaluation config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Score against an oracle grid of this many states per timestep (needs --dgp).
        #[arg(long, default_value_t = 0)]
        oracle_states: usize,
        #[arg(long, default_value_t = 200)]
        rollouts: usize,
    },
    /// Learn a greedy policy with the three-fold procedure.
    Optimize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report the value gain over the DGP's behavior policy.
        #[arg(long)]
        dgp: Option<String>,
        #[arg(long, default_value_t = 2000)]
        rollouts: usize,
    },
    /// Monte Carlo contrast on states drawn under the behavior policy; writes CSV.
    Oracle {
        #[arg(long)]
        dgp: String,
        #[arg(long, default_value = "evaluation")]
        policy: String,
        #[arg(long)]
        t: usize,
        #[arg(long, default_value_t = 500)]
        states: usize,
        #[arg(long, default_value_t = 200)]
        rollouts: usize,
    },
    /// Exact excess-variance and orthogonality checks on random tabular MDPs.
    Diagnose {
        #[arg(long, default_value_t = 5)]
        instances: usize,
        #[arg(long, default_value_t = 3)]
        states: usize,
        #[arg(long, default_value_t = 0.9)]
        discount: f64,
    },
    /// Run an experiment config and write report files.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Format::Csv, Format::Json])]
        format: Vec<Format>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn load_dgp(arg: &str, seed: Option<u64>) -> Result<DgpInstance> {
    let path = Path::new(arg);
    let mut spec: DgpSpec = if path.exists() {
        read_json(path)?
    } else {
        serde_json::from_value(serde_json::json!({ "kind": arg }))
            .map_err(|_| TauqError::Config(format!("{arg:?} is neither a file nor a DGP kind")))?
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    build_dgp(&spec)
}

fn resolve_policy(arg: &str, dgp: Option<&DgpInstance>) -> Result<PolicySpec> {
    match arg {
        "behavior" | "evaluation" => {
            let inst =
                dgp.ok_or_else(|| TauqError::Config(format!("policy {arg:?} needs --dgp")))?;
            Ok(if arg == "behavior" {
                inst.behavior.clone()
            } else {
                inst.evaluation.clone()
            })
        }
        file => read_json(Path::new(file)),
    }
}

fn out_path(cli_out: &Option<PathBuf>, default: &str) -> PathBuf {
    cli_out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            dgp,
            n,
            policy,
            csv,
        } => {
            let inst = load_dgp(&dgp, None)?;
            let pol = resolve_policy(&policy, Some(&inst))?;
            let ds = inst.simulate(&pol, n, cli.seed.unwrap_or(0))?;
            let out = out_path(&cli.out, "data.json");
            write_json(&out, &ds)?;
            if csv {
                let p = out.with_extension("csv");
                write_dataset_csv(&ds, std::io::BufWriter::new(std::fs::File::create(&p)?))?;
                println!("wrote {}", p.display());
            }
            println!(
                "wrote {} ({} trajectories, T={})",
                out.display(),
                ds.len(),
                ds.horizon
            );
        }
        Command::Evaluate {
            data,
            policy,
            dgp,
            config,
            oracle_states,
            rollouts,
        } => {
            let ds = load_dataset(&data)?;
            let inst = dgp.as_deref().map(|d| load_dgp(d, None)).transpose()?;
            let pol = resolve_policy(&policy, inst.as_ref())?;
            let mut cfg: EvalConfig = config
                .as_deref()
                .map(read_json)
                .transpose()?
                .unwrap_or_default();
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let ev = evaluate_policy(&ds, &pol, &cfg)?;
            println!("{:>4} {:>14} {:>14}", "t", "loss", "nmse");
            for t in 1..=ds.horizon {
                let loss = empirical_loss(&ev.tau, &ev.nuisances, &ds, t, cfg.next_action)?;
                let nmse = match (&inst, oracle_states) {
                    (Some(inst), k) if k > 0 => {
                        let states = inst.sample_states(&inst.behavior, t, k, cfg.seed ^ 0x5EED)?;
                        let grid =
                            inst.oracle_tau_grid(&pol, t, states, rollouts, cfg.seed ^ 0x0AC1);
                        format!("{:.4e}", normalized_mse(&ev.tau, &grid)?)
                    }
                    _ => "-".to_string(),
                };
                println!("{t:>4} {loss:>14.6e} {nmse:>14}");
            }
            let out = out_path(&cli.out, "tau.json");
            write_json(&out, &ev.tau)?;
            println!("wrote {}", out.display());
        }
        Command::Optimize {
            data,
            config,
            dgp,
            rollouts,
        } => {
            let ds = load_dataset(&data)?;
            let mut cfg: OptConfig = config
                .as_deref()
                .map(read_json)
                .transpose()?
                .unwrap_or_default();
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let opt = optimize_policy(&ds, &cfg)?;
            for t in 1..=ds.horizon {
                println!("t={t}: contrast fit on fold {}", opt.stage_fold[t - 1]);
            }
            if let Some(d) = dgp {
                let inst = load_dgp(&d, None)?;
                let (gain, se) =
                    inst.policy_value_difference(&opt.policy, &inst.behavior, rollouts, cfg.seed);
                println!("value gain over behavior: {gain:.4} +/- {:.4}", 1.96 * se);
            }
            let out = out_path(&cli.out, "policy.json");
            write_json(&out, &opt.policy)?;
            println!("wrote {}", out.display());
        }
        Command::Oracle {
            dgp,
            policy,
            t,
            states,
            rollouts,
        } => {
            let inst = load_dgp(&dgp, None)?;
            let pol = resolve_policy(&policy, Some(&inst))?;
            if t == 0 || t > inst.horizon() {
                return Err(TauqError::Config(format!(
                    "--t must lie in 1..={}",
                    inst.horizon()
                )));
            }
            let seed = cli.seed.unwrap_or(0);
            let st = inst.sample_states(&inst.behavior, t, states, seed)?;
            let grid = inst.oracle_tau_grid(&pol, t, st, rollouts, seed ^ 0x0AC1);
            let out = out_path(&cli.out, "oracle.csv");
            grid.write_csv(std::io::BufWriter::new(std::fs::File::create(&out)?))?;
            println!("wrote {} ({} states)", out.display(), grid.len());
        }
        Command::Diagnose {
            instances,
            states,
            discount,
        } => {
            if states < 1 || !(0.0..=1.0).contains(&discount) {
                return Err(TauqError::Config(
                    "need at least one state and a discount in [0, 1]".into(),
                ));
            }
            let seed = cli.seed.unwrap_or(0);
            println!(
                "{:>8} {:>12} {:>12} {:>10} {:>10} {:>10}",
                "instance", "excess lhs", "excess rhs", "|gap|", "slope", "naive"
            );
            for i in 0..instances as u64 {
                let mdp = TabularMdp::random(states, 2, discount, seed.wrapping_add(i));
                let ev = excess_variance_check(&mdp, 1, NextAction::Observed)?;
                let orth = orthogonality_check(
                    &mdp,
                    1,
                    &Perturbation::random(states, seed ^ i),
                    &default_eps_grid(),
                )?;
                println!(
                    "{i:>8} {:>12.6} {:>12.6} {:>10.1e} {:>10.3} {:>10.3}",
                    ev.lhs,
                    ev.rhs,
                    (ev.lhs - ev.rhs).abs(),
                    orth.slope,
                    orth.naive_slope
                );
            }
        }
        Command::Experiment { config, format } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let dir = cli
                .out
                .clone()
                .or_else(|| cfg.out.clone())
                .unwrap_or_else(|| PathBuf::from("report"));
            let report = run_experiment_with_jobs(&cfg, cli.jobs)?;
            let formats: Vec<ReportFormat> = format
                .iter()
                .map(|f| match f {
                    Format::Csv => ReportFormat::Csv,
                    Format::Json => ReportFormat::Json,
                })
                .collect();
            for p in emit_report(&report, &dir, &formats)? {
                println!("wrote {}", p.display());
            }
            let failures = report.cells.iter().filter(|c| c.error.is_some()).count();
            println!(
                "{:<14} {:>7} {:>12} {:>12} {:>12}",
                "method", "n", "median", "mean", "1.96se"
            );
            for a in report.aggregates.iter().filter(|a| a.t.is_none()) {
                let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4e}"));
                println!(
                    "{:<14} {:>7} {:>12} {:>12} {:>12}",
                    a.method.name(),
                    a.n,
                    f(a.median),
                    f(a.mean),
                    f(a.half_width)
                );
            }
            if failures > 0 {
                eprintln!("{failures} cells failed; see the report for messages");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        // a second initialization only happens in tests; ignore it
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
