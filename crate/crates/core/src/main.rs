use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use iabsim::analytics::{solve_fixed_point, ContentionSetup};
use iabsim::report::{self, parse_list, Scenario};
use iabsim::schedulers::StrategyKind;
use iabsim::sim::SimConfig;
use iabsim::topology::{build, TopologyConfig};
use iabsim::Error;

#[derive(Parser)]
#[command(name = "iabsim", version, about = "IAB / WiGig coexistence simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a sweep and write report.csv plus CDF files.
    Run(RunArgs),
    /// Solve the contention fixed point over a grid of node counts.
    Analytics(AnalyticsArgs),
    /// Generate a deployment and print it in the replay format.
    Topology(TopologyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file; flags below override its values.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Comma separated subset of baseline,probabilistic,proposed.
    #[arg(long)]
    strategy: Option<String>,
    /// Comma separated infrastructure node counts.
    #[arg(long)]
    nodes: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replications per sweep point.
    #[arg(long)]
    runs: Option<usize>,
    /// Simulated seconds per replication.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write a slot trace and controller log per sweep point.
    #[arg(long)]
    trace: bool,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct AnalyticsArgs {
    #[arg(long, default_value = "1,5,10")]
    n_wifi: String,
    #[arg(long, default_value = "1,5,10")]
    n_iab: String,
    /// DCF minimum window C.
    #[arg(long, default_value_t = 16)]
    cw: u32,
    /// DCF backoff stages m.
    #[arg(long, default_value_t = 6)]
    stages: u32,
    /// LBT window Z.
    #[arg(long, default_value_t = 16)]
    z: u32,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TopologyArgs {
    #[arg(long, default_value_t = 20)]
    nodes: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    ue_per_cell: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with the process exit code it maps to.
struct Failure(u8, String);

fn config(e: impl std::fmt::Display) -> Failure {
    Failure(1, e.to_string())
}

fn classify(e: Error) -> Failure {
    match e {
        Error::InvalidConfig(_) | Error::Parse { .. } => config(e),
        other => Failure(2, other.to_string()),
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure(2, format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let mut s = match &a.scenario {
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| config(format!("{}: {e}", p.display())))?;
            report::parse_scenario(&text).map_err(|e| config(format!("{}: {e}", p.display())))?
        }
        None => Scenario::default(),
    };
    if let Some(v) = &a.strategy {
        s.strategies = parse_list::<StrategyKind>(v).map_err(config)?;
    }
    if let Some(v) = &a.nodes {
        s.sweep = parse_list::<usize>(v).map_err(config)?;
    }
    if let Some(v) = a.runs {
        s.replications = v;
    }
    s.base = SimConfig {
        seed: a.seed.unwrap_or(s.base.seed),
        duration: a.duration.unwrap_or(s.base.duration),
        ..s.base
    };
    s.validate().map_err(classify)?;
    let workers = a.workers.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    let out = report::run_scenario(&s, workers).map_err(classify)?;
    let mut files = report::write_outputs(&out, &a.out).map_err(classify)?;
    if a.trace {
        files.extend(report::write_traces(&s, &a.out).map_err(classify)?);
    }
    print!("{}", report::rows_to_csv(&out.rows).map_err(classify)?);
    eprintln!("wrote {} files to {}", files.len(), a.out.display());
    Ok(())
}

fn cmd_analytics(a: AnalyticsArgs) -> Result<(), Failure> {
    let nw = parse_list::<u32>(&a.n_wifi).map_err(config)?;
    let ni = parse_list::<u32>(&a.n_iab).map_err(config)?;
    let mut text = String::from("n_wifi,n_iab,C,m,Z,P_cw,P_cb,tau_w,tau_i\n");
    for &w in &nw {
        for &i in &ni {
            let setup = ContentionSetup {
                n_wifi: w,
                n_iab: i,
                dcf_cw: a.cw,
                dcf_stages: a.stages,
                lbt_cw: a.z,
            };
            let fp = solve_fixed_point(&setup, 1e-12).map_err(classify)?;
            let _ = writeln!(
                text,
                "{w},{i},{},{},{},{},{},{},{}",
                a.cw, a.stages, a.z, fp.p_cw, fp.p_cb, fp.tau_w, fp.tau_i
            );
        }
    }
    write_or_print(a.out.as_deref(), &text)
}

fn cmd_topology(a: TopologyArgs) -> Result<(), Failure> {
    let base = SimConfig::default();
    let cfg = TopologyConfig {
        n_infra: a.nodes,
        seed: a.seed,
        ue_per_cell: a.ue_per_cell.unwrap_or(base.topology.ue_per_cell),
        ..base.topology.clone()
    };
    let t = build(&cfg, &base.link_context()).map_err(classify)?;
    write_or_print(a.out.as_deref(), &t.to_text())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let r = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Analytics(a) => cmd_analytics(a),
        Cmd::Topology(a) => cmd_topology(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
