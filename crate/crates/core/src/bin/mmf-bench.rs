use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mmf_multicast::harness::write_csv_to;
use mmf_multicast::init::save_iterate;
use mmf_multicast::transform::default_model;
use mmf_multicast::verify::run_checks;
use mmf_multicast::{
    build_transformed_problem, emit_plot_data, generate_channels, initialize, load_config,
    run_experiment, write_results, Channels, Config, Error, ExperimentSpec, InitMethod,
    OracleParams, OutputRule, ResultFormat, SolverOptions, StepRule, SweepAxis,
};

#[derive(Parser)]
#[command(
    name = "mmf-bench",
    version,
    about = "Max-min fair multicast beamforming benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded trial sweep.
    Run(RunArgs),
    /// Write an initial point to a file.
    InitDump(InitDumpArgs),
    /// Run the property checks on a tiny instance.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML system configuration; experiment defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// AXIS=v1,v2,... with AXIS one of N, K.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Result file; CSV goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: String,
    /// Also run the multistart reference search.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value_t = 100_000)]
    oracle_samples: usize,
    #[arg(long, default_value_t = 10)]
    oracle_refine: usize,
    #[arg(long)]
    emit_plot_data: Option<PathBuf>,
    /// `estimated`, `estimated:J` or a fixed positive step.
    #[arg(long)]
    step: Option<String>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// `best`, `last` or `uniform_random`.
    #[arg(long, default_value = "best")]
    output_rule: String,
    /// `equal`, `strongest`, `random[:SEED]` or `file:PATH`.
    #[arg(long, default_value = "equal")]
    init: String,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(clap::Args)]
struct InitDumpArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Channel seed when the configuration stores no channels.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "equal")]
    init: String,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Validation(_) | Error::Parse { .. } => 2,
        _ => 1,
    }
}

fn base_system(config: &Option<PathBuf>) -> mmf_multicast::Result<(Config, Option<Channels>)> {
    match config {
        Some(p) => match load_config(p) {
            Ok((c, ch)) => Ok((c, Some(ch))),
            Err(e @ Error::Io { .. }) => Err(Error::Usage(e.to_string())),
            Err(e) => Err(e),
        },
        None => Ok((ExperimentSpec::default_config(), None)),
    }
}

fn parse_sweep(s: &str) -> mmf_multicast::Result<(SweepAxis, Vec<usize>)> {
    let (axis, values) = s
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("sweep {s:?} is not AXIS=v1,v2,...")))?;
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Usage(format!("bad sweep value {v:?}")))
        })
        .collect::<mmf_multicast::Result<_>>()?;
    Ok((SweepAxis::parse(axis.trim())?, values))
}

fn parse_step(s: &str, max_iters: usize) -> mmf_multicast::Result<StepRule> {
    if s == "estimated" {
        return Ok(StepRule::Estimated { horizon: max_iters });
    }
    if let Some(j) = s.strip_prefix("estimated:") {
        return j
            .parse()
            .map(|horizon| StepRule::Estimated { horizon })
            .map_err(|_| Error::Usage(format!("bad horizon in {s:?}")));
    }
    s.parse()
        .map(StepRule::Fixed)
        .map_err(|_| Error::Usage(format!("bad step {s:?}")))
}

fn parse_output_rule(s: &str) -> mmf_multicast::Result<OutputRule> {
    match s {
        "best" => Ok(OutputRule::Best),
        "last" => Ok(OutputRule::Last),
        "uniform_random" => Ok(OutputRule::UniformRandom),
        _ => Err(Error::Usage(format!("unknown output rule {s:?}"))),
    }
}

fn build_spec(args: &RunArgs) -> mmf_multicast::Result<ExperimentSpec> {
    let (config, channels) = base_system(&args.config)?;
    let betas = channels
        .map(|c| c.variances)
        .filter(|b| b.iter().any(|&v| v != 1.0));
    let (sweep_axis, sweep_values) = match &args.sweep {
        Some(s) => parse_sweep(s)?,
        None => (SweepAxis::NAntennas, vec![config.n_antennas]),
    };
    let defaults = SolverOptions::default();
    let max_iters = args.max_iters.unwrap_or(defaults.max_iters);
    let step_rule = match &args.step {
        Some(s) => parse_step(s, max_iters)?,
        None => StepRule::Estimated { horizon: max_iters },
    };
    let solver = SolverOptions {
        step_rule,
        max_iters,
        obj_tol: args.tol.unwrap_or(defaults.obj_tol),
        output_rule: parse_output_rule(&args.output_rule)?,
        ..defaults
    };
    Ok(ExperimentSpec {
        betas,
        sweep_axis,
        sweep_values,
        n_trials: args.trials,
        master_seed: args.seed,
        solver,
        init_method: InitMethod::parse(&args.init)?,
        oracle: args.oracle.then_some(OracleParams {
            n_samples: args.oracle_samples,
            n_refine: args.oracle_refine,
        }),
        jobs: args.jobs,
        ..ExperimentSpec::new(config)
    })
}

fn run(args: RunArgs) -> mmf_multicast::Result<u8> {
    let format = ResultFormat::parse(&args.format)?;
    let spec = build_spec(&args)?;
    let outcome = run_experiment(&spec)?;
    for f in &outcome.failures {
        eprintln!(
            "trial {} at {}={} (seed {}) failed: {}",
            f.trial_index, spec.sweep_axis, f.sweep_value, f.seed, f.reason
        );
    }
    match &args.out {
        Some(p) => write_results(&outcome.records, p, format)?,
        None => match format {
            ResultFormat::Csv => {
                write_csv_to(&outcome.records, io::stdout().lock(), "<stdout>".as_ref())?
            }
            ResultFormat::Json => println!(
                "{}",
                serde_json::to_string_pretty(&outcome.records).expect("records serialize")
            ),
        },
    }
    if let Some(p) = &args.emit_plot_data {
        if outcome.records.is_empty() {
            eprintln!("no successful trials; plot data not written");
        } else {
            emit_plot_data(&outcome.records, p)?;
        }
    }
    eprintln!(
        "{} trials succeeded, {} failed",
        outcome.records.len(),
        outcome.failures.len()
    );
    Ok(if outcome.failures.is_empty() { 0 } else { 1 })
}

fn init_dump(args: InitDumpArgs) -> mmf_multicast::Result<u8> {
    let (config, channels) = base_system(&args.config)?;
    let channels = match (channels, args.seed) {
        (Some(ch), None) => ch,
        (Some(ch), Some(seed)) => generate_channels(&config, &ch.variances, seed)?,
        (None, seed) => {
            generate_channels(&config, &vec![1.0; config.total_users()], seed.unwrap_or(0))?
        }
    };
    let problem = build_transformed_problem(&config, &channels, default_model(&config))?;
    let x = initialize(&problem, &InitMethod::parse(&args.init)?)?;
    save_iterate(&args.out, &x)?;
    Ok(0)
}

fn verify(seed: u64) -> mmf_multicast::Result<u8> {
    let checks = run_checks(seed)?;
    let mut failed = 0;
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        failed += usize::from(!c.passed);
    }
    Ok(u8::from(failed > 0))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::InitDump(a) => init_dump(a),
        Command::Verify { seed } => verify(seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
