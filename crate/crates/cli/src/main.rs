mod summary;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use adaptive_sls::check::{all_pass, check_trace};
use adaptive_sls::model::{chain5_scenario, ring3_scenario, Scenario};
use adaptive_sls::simulator::{run, synthesize_once, Algorithm, RunOptions};
use adaptive_sls::trace::{read_trace, trace_paths, write_trace};
use adaptive_sls::Error;

#[derive(Parser)]
#[command(name = "asls", version, about = "Adaptive system level synthesis experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgArg {
    Central,
    Dlar,
}

impl From<AlgArg> for Algorithm {
    fn from(a: AlgArg) -> Self {
        match a {
            AlgArg::Central => Algorithm::Central,
            AlgArg::Dlar => Algorithm::Dlar,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TrueAlpha {
    /// Keep the scenario prior.
    Prior,
    /// Shrink the prior to the true parameter.
    Exact,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthAt {
    Prior,
    Point,
}

#[derive(clap::Args)]
struct ScenarioArgs {
    /// Builtin scenario (`chain5`, `ring3`) or path to a scenario JSON file.
    #[arg(long, default_value = "chain5")]
    scenario: String,
    #[arg(long, value_enum, default_value = "dlar")]
    algorithm: AlgArg,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the trace, sidecar and summary.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum, default_value = "prior")]
        true_alpha: TrueAlpha,
        /// Output directory.
        #[arg(long, env = "ASLS_OUT_DIR", default_value = "out")]
        out: PathBuf,
        /// Keep polytope snapshots every this many steps (0: final only).
        #[arg(long, default_value_t = 10)]
        snapshot_period: usize,
        /// Write every synthesis LP to `<out>/<stem>-lp/`.
        #[arg(long)]
        debug_lp: bool,
    },
    /// Solve the start-up synthesis once and report margins and sizes.
    Synth {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum, default_value = "prior")]
        at: SynthAt,
    },
    /// Re-validate a trace offline.
    Check {
        /// Trace CSV; the sidecar is the `.json` file next to it.
        trace: PathBuf,
    },
}

fn load_scenario(name: &str) -> anyhow::Result<(String, Scenario)> {
    match name {
        "chain5" => Ok(("chain5".into(), chain5_scenario())),
        "ring3" => Ok(("ring3".into(), ring3_scenario())),
        path => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading scenario {path}"))?;
            let sc = Scenario::from_json_str(&text).with_context(|| format!("parsing scenario {path}"))?;
            let stem = Path::new(path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".into());
            Ok((stem, sc))
        }
    }
}

fn alg_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Central => "central",
        Algorithm::Dlar => "dlar",
    }
}

fn cmd_run(
    scenario: ScenarioArgs,
    seed: Option<u64>,
    steps: Option<usize>,
    true_alpha: TrueAlpha,
    out: PathBuf,
    snapshot_period: usize,
    debug_lp: bool,
) -> anyhow::Result<()> {
    let (name, mut sc) = load_scenario(&scenario.scenario)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(s) = steps {
        sc.steps = s;
    }
    if let TrueAlpha::Exact = true_alpha {
        sc = sc.with_point_prior()?;
    }
    let alg: Algorithm = scenario.algorithm.into();
    let exact = if matches!(true_alpha, TrueAlpha::Exact) { "-exact" } else { "" };
    let stem = format!("{name}-{}{exact}-s{}", alg_name(alg), sc.seed);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let opts = RunOptions {
        snapshot_period,
        dump_lp: debug_lp.then(|| out.join(format!("{stem}-lp"))),
        ..Default::default()
    };
    let trace = run(&sc, alg, &opts)?;
    let (csv, json) = trace_paths(&out, &stem);
    write_trace(&trace, &csv, &json)?;
    let summary = summary::summarize(&trace);
    let summary_path = out.join(format!("{stem}.summary.json"));
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    println!("trace   {}", csv.display());
    println!("sidecar {}", json.display());
    println!("summary {}", summary_path.display());
    println!("{summary}");
    Ok(())
}

fn cmd_synth(scenario: ScenarioArgs, at: SynthAt) -> anyhow::Result<()> {
    let (name, mut sc) = load_scenario(&scenario.scenario)?;
    if let SynthAt::Point = at {
        sc = sc.with_point_prior()?;
    }
    let alg: Algorithm = scenario.algorithm.into();
    let reports = synthesize_once(&sc, alg)?;
    println!("scenario {name}, {} synthesis, lambda* = {}", alg_name(alg), sc.lambda_star);
    for r in &reports {
        let who = r.node.map(|i| format!("node {i}")).unwrap_or_else(|| "central".into());
        println!(
            "{who:<8} status {:?} lambda {:.6} bound {:.6} phase {:?} vertices {} vars {} rows {}",
            r.status, r.lambda, r.lambda_bound, r.phase, r.vertices, r.num_vars, r.num_rows
        );
    }
    if reports.len() > 1 {
        let max = reports.iter().map(|r| r.lambda).fold(f64::NEG_INFINITY, f64::max);
        println!("max lambda {max:.6}");
    }
    Ok(())
}

fn cmd_check(csv: PathBuf) -> anyhow::Result<bool> {
    let json = csv.with_extension("json");
    let trace = read_trace(&csv, &json)?;
    let reports = check_trace(&trace)?;
    for r in &reports {
        println!("{r}");
    }
    Ok(all_pass(&reports))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::EmptyPolytope { .. } | Error::Empty => 4,
                Error::AssumptionViolation(_)
                | Error::DisturbanceBoundViolated { .. }
                | Error::InfeasibleAtStart(_)
                | Error::RecursiveFeasibility { .. } => 3,
                Error::Config(_)
                | Error::Json(_)
                | Error::DimensionMismatch(_)
                | Error::UnknownNode(_)
                | Error::NonSquare(..)
                | Error::UnsupportedNorm(_)
                | Error::UnsupportedNormForDim(_)
                | Error::DimensionTooLarge(_)
                | Error::CorruptTrace(_)
                | Error::Io(_)
                | Error::Csv(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            steps,
            true_alpha,
            out,
            snapshot_period,
            debug_lp,
        } => cmd_run(scenario, seed, steps, true_alpha, out, snapshot_period, debug_lp),
        Command::Synth { scenario, at } => cmd_synth(scenario, at),
        Command::Check { trace } => cmd_check(trace).and_then(|ok| {
            if ok {
                Ok(())
            } else {
                bail!("one or more properties failed")
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
