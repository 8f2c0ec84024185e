use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gooseguard::scenario::{
    bench, render_bench, render_report, render_trace, run_cell, Format, ScenarioConfig, ScenarioReport,
};

const EXIT_MISMATCH: u8 = 1;
const EXIT_CONFIG: u8 = 2;

/// GOOSE process-bus attack simulator.
#[derive(Debug, Parser)]
#[command(name = "gooseguard", version)]
struct Cli {
    /// Seed for key material and event data; overrides the scenario file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scenario file (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for reports, logs and captures.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Exit 1 if the matrix differs from the expected one, or if the bench
    /// ordering does not hold.
    #[arg(long, global = true)]
    check: bool,
    /// Latency budget in ms; exit 1 if any mode's maximum reaches it.
    #[arg(long, global = true)]
    budget: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configured attack under every configured mode.
    Run {
        #[arg(long, default_value = "text")]
        format: Format,
        /// Print the per-frame console trace of each cell.
        #[arg(long)]
        trace: bool,
        /// Append the latency table.
        #[arg(long)]
        bench: bool,
    },
    /// Measure per-packet processing time of each mode.
    Bench {
        #[arg(long, default_value = "text")]
        format: Format,
    },
    /// Write one pcap per matrix cell into --out (default ./captures).
    CaptureExport,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Failure { code: EXIT_CONFIG, message: message.to_string() }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Failure::config(format!("creating {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::config(format!("writing {}: {e}", path.display())))
}

fn load(cli: &Cli) -> Result<ScenarioConfig, Failure> {
    let config = match &cli.config {
        Some(path) => ScenarioConfig::load(path).map_err(Failure::config)?,
        None => ScenarioConfig::default(),
    };
    Ok(match cli.seed {
        Some(seed) => config.with_seed(seed),
        None => config,
    })
}

fn check_matrix(cli: &Cli, report: &ScenarioReport) -> Result<(), Failure> {
    let bad = report.mismatches();
    if !cli.check || bad.is_empty() {
        return Ok(());
    }
    let cells: Vec<String> = bad
        .iter()
        .map(|c| {
            let (d, m) = c.expected();
            format!(
                "{} {}: got {}/{}, expected {}/{}",
                c.mode.label(),
                c.attack.label(),
                c.detection.letter(),
                c.mitigation.letter(),
                d.letter(),
                m.letter()
            )
        })
        .collect();
    Err(Failure { code: EXIT_MISMATCH, message: format!("matrix mismatch\n  {}", cells.join("\n  ")) })
}

fn check_bench(cli: &Cli, report: &gooseguard::scenario::BenchReport) -> Result<(), Failure> {
    if report.within_budget == Some(false) {
        return Err(Failure { code: EXIT_MISMATCH, message: format!("latency budget of {} ms exceeded", cli.budget.unwrap_or_default()) });
    }
    if cli.check && !report.ordering_holds {
        return Err(Failure { code: EXIT_MISMATCH, message: "avg(IDS) < avg(MAC) < avg(Hybrid) does not hold".into() });
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let config = load(cli)?;
    match &cli.command {
        Command::Run { format, trace, bench: with_bench } => {
            let mut report = ScenarioReport::empty(&config);
            let mut logs = Vec::new();
            for &mode in &config.modes {
                for spec in &config.attacks {
                    let (cell, outcome) = run_cell(&config, mode, spec).map_err(Failure::config)?;
                    if *trace {
                        println!("== {} / {} ==", mode.label(), spec.kind().label());
                        print!("{}", render_trace(&outcome));
                        println!();
                    }
                    logs.push((format!("{}-{}", mode.name(), spec.kind().name()), outcome.log_jsonl()));
                    report.cells.push(cell);
                }
            }
            if *with_bench {
                report.latency = Some(bench(&config, cli.budget).map_err(Failure::config)?);
            }
            print!("{}", render_report(&report, *format));
            if let Some(out) = &cli.out {
                write(&out.join("report.txt"), render_report(&report, Format::Text))?;
                write(&out.join("report.json"), render_report(&report, Format::Json))?;
                for (name, log) in &logs {
                    write(&out.join("logs").join(format!("{name}.jsonl")), log)?;
                }
            }
            check_matrix(cli, &report)?;
            if let Some(b) = &report.latency {
                check_bench(cli, b)?;
            }
            Ok(())
        }
        Command::Bench { format } => {
            let report = bench(&config, cli.budget).map_err(Failure::config)?;
            print!("{}", render_bench(&report, *format));
            if let Some(out) = &cli.out {
                write(&out.join("bench.txt"), render_bench(&report, Format::Text))?;
                write(&out.join("bench.json"), render_bench(&report, Format::Json))?;
            }
            check_bench(cli, &report)
        }
        Command::CaptureExport => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("captures"));
            let mut report = ScenarioReport::empty(&config);
            for &mode in &config.modes {
                for spec in &config.attacks {
                    let (cell, outcome) = run_cell(&config, mode, spec).map_err(Failure::config)?;
                    let path = out.join(format!("{}-{}.pcap", mode.name(), spec.kind().name()));
                    let pcap = outcome.to_pcap().map_err(Failure::config)?;
                    write(&path, pcap)?;
                    println!("{} ({} frames)", path.display(), outcome.frames.len());
                    report.cells.push(cell);
                }
            }
            check_matrix(cli, &report)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
