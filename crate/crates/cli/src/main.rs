use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use selconf_core::oracle::{
    check_symmetry, search_witness, InstanceBounds, SearchStrategy, SmallInstance,
};
use selconf_core::sim::{
    load_config, preset, run_experiment, write_outputs, ExperimentConfig, RuleConfig, PRESETS,
};
use selconf_core::Error;

#[derive(Parser)]
#[command(name = "selconf", version, about = "Online selective conformal inference simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run a built-in preset (see list-presets).
    Preset {
        name: String,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Search for symmetry violations, or check one instance.
    Oracle { config: PathBuf },
    /// List the built-in presets.
    ListPresets,
}

#[derive(Args)]
struct RunOpts {
    /// Override the number of Monte Carlo replicates.
    #[arg(long)]
    replicates: Option<u64>,
    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, env = "SCL_THREADS", default_value_t = 0)]
    threads: usize,
}

/// Oracle config: either a single instance to check, or a search.
#[derive(Deserialize)]
#[serde(untagged)]
enum OracleConfig {
    Search(SearchConfig),
    Instance(SmallInstance),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchConfig {
    strategy: SearchStrategy,
    rule: RuleConfig,
    trials: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    bounds: Option<InstanceBounds>,
}

enum Failure {
    /// Bad input: missing or malformed config, unknown preset.
    Input(Error),
    Runtime(Error),
}

impl Failure {
    fn input(e: Error) -> Self {
        match e {
            Error::Parse { .. } | Error::Config(_) | Error::Io { .. } => Failure::Input(e),
            other => Failure::Runtime(other),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::ListPresets => {
            for p in PRESETS {
                println!("{:<15} {}", p.name, p.summary);
            }
            Ok(())
        }
        Command::Run { config, opts } => {
            let cfg = load_config(&config).map_err(Failure::input)?;
            let out = opts
                .out
                .clone()
                .or_else(|| cfg.output_path.clone())
                .unwrap_or_else(|| Path::new("out").join(&cfg.name));
            run_all(vec![(cfg, out)], &opts)
        }
        Command::Preset { name, opts } => {
            let base = opts.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let runs = preset(&name)
                .map_err(Failure::input)?
                .into_iter()
                .map(|cfg| {
                    let dir = base.join(&cfg.name);
                    (cfg, dir)
                })
                .collect();
            run_all(runs, &opts)
        }
        Command::Oracle { config } => oracle(&config),
    }
}

fn run_all(runs: Vec<(ExperimentConfig, PathBuf)>, opts: &RunOpts) -> Result<(), Failure> {
    let mut runs = runs;
    for (cfg, dir) in &mut runs {
        if let Some(r) = opts.replicates {
            cfg.replicates = r;
        }
        if let Some(s) = opts.seed {
            cfg.seed = s;
        }
        cfg.output_path = Some(dir.clone());
        cfg.validate().map_err(Failure::input)?;
        selconf_core::sim::ensure_writable(dir).map_err(Failure::Runtime)?;
    }
    for (cfg, dir) in &runs {
        let run = run_experiment(cfg, opts.threads).map_err(Failure::Runtime)?;
        write_outputs(dir, &run).map_err(Failure::Runtime)?;
        let t_last = cfg.data.n_on - 1;
        println!(
            "{} ({} replicates, seed {}) -> {}",
            cfg.name,
            cfg.replicates,
            cfg.seed,
            dir.display()
        );
        for acc in &run.accumulators {
            let fmt = |e: Option<selconf_core::metrics::Estimate>| {
                e.map_or_else(|| "-".to_string(), |e| format!("{:.4}", e.value))
            };
            println!(
                "  {:<12} fcr(T)={} miscoverage(T)={} infinite(T)={} calib(T)={}",
                acc.label,
                fmt(acc.fcr(t_last)),
                fmt(acc.miscoverage(t_last)),
                fmt(acc.infinite_fraction(t_last)),
                fmt(acc.mean_calib_size(t_last)),
            );
        }
    }
    Ok(())
}

fn oracle(path: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(Error::Config(format!("{}: {e}", path.display()))))?;
    let cfg: OracleConfig = serde_json::from_str(&text).map_err(|e| {
        Failure::Input(Error::Parse {
            line: e.line(),
            column: e.column(),
            message: "expected a search {strategy, rule, trials[, seed, bounds]} or an instance {offline_x, online_x, rule, strategy}".into(),
        })
    })?;
    match cfg {
        OracleConfig::Search(s) => {
            let report = search_witness(
                s.strategy,
                &s.rule,
                s.trials,
                s.seed,
                s.bounds.unwrap_or_default(),
            )
            .map_err(Failure::input)?;
            match report.witness {
                Some(w) => {
                    println!(
                        "{}: symmetry violated (trial {}, {} instances checked)",
                        s.strategy.label(),
                        report.trials,
                        report.checked
                    );
                    println!("{}", serde_json::to_string_pretty(&w).expect("witness serializes"));
                }
                None => println!(
                    "{}: no witness in {} trials ({} instances checked)",
                    s.strategy.label(),
                    report.trials,
                    report.checked
                ),
            }
        }
        OracleConfig::Instance(inst) => {
            let outcome = check_symmetry(&inst).map_err(Failure::input)?;
            match outcome.witness() {
                Some(w) => {
                    println!("{}: symmetry violated", inst.strategy.label());
                    println!("{}", serde_json::to_string_pretty(w).expect("witness serializes"));
                }
                None => println!("{}: symmetry holds on every permutation", inst.strategy.label()),
            }
        }
    }
    Ok(())
}
