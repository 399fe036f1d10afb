//! `uwbsim` command line: run scenarios (single seed, seed range or a
//! one-parameter sweep), validate them, and regenerate the reference set.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use uwbsim::metrics::{aggregate, MetricsSummary};
use uwbsim::reference::{self, Reference, BER_FILE};
use uwbsim::{load, run, BerTable, LoadedScenario, Scenario, TraceSink};

#[derive(Parser)]
#[command(name = "uwbsim", version, about = "Pulse-level TH-IR-UWB sensor network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write per-seed trace and metrics files.
    Run {
        scenario: PathBuf,
        /// Single seed (defaults to the scenario's own).
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Inclusive seed range `A..B`.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Option<SeedRange>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Keep metrics only; no trace.csv.
        #[arg(long)]
        no_trace: bool,
        /// Override a scenario key, e.g. `mac.retransmission_limit=5`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
        set: Vec<(String, String)>,
        /// Sweep one key over comma-separated values, e.g. `radio.tx_power=1e-4,1e-3`.
        #[arg(long, value_name = "KEY=V1,V2,..", value_parser = parse_sweep)]
        sweep: Option<(String, Vec<String>)>,
    },
    /// Check a scenario and its BER table; silent on success.
    Validate {
        scenario: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
        set: Vec<(String, String)>,
    },
    /// Write the reference scenarios (and optionally their results).
    Reference {
        #[arg(long, default_value = "reference")]
        out: PathBuf,
        /// Also run each scenario with its own seed.
        #[arg(long)]
        run: bool,
        /// Restrict to these reference names.
        #[arg(long)]
        only: Vec<String>,
        /// List the available names and exit.
        #[arg(long)]
        list: bool,
    },
}

#[derive(Debug, Clone)]
struct SeedRange(Vec<u64>);

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    fn runtime(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        Failure::Runtime(format!("{context}: {e}"))
    }
}

fn parse_seeds(s: &str) -> Result<SeedRange, String> {
    let (a, b) = s
        .split_once("..=")
        .or_else(|| s.split_once(".."))
        .ok_or_else(|| format!("expected A..B, got `{s}`"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("seed range start: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("seed range end: {e}"))?;
    if b < a {
        return Err(format!("empty seed range {a}..{b}"));
    }
    Ok(SeedRange((a..=b).collect()))
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    if k.trim().is_empty() {
        return Err("empty key".into());
    }
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse_sweep(s: &str) -> Result<(String, Vec<String>), String> {
    let (k, v) = parse_override(s)?;
    let values: Vec<String> = v.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect();
    if values.is_empty() {
        return Err(format!("no values to sweep for `{k}`"));
    }
    Ok((k, values))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::runtime(path.display(), e))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::runtime(path.display(), e))
}

/// Writes the scenario with every default spelled out and the BER table next
/// to it, so the directory reproduces the run on its own.
fn echo_scenario(dir: &Path, scenario: &Scenario, ber: &BerTable, name: &str) -> Result<(), Failure> {
    let mut effective = scenario.normalized();
    effective.radio.ber_table = BER_FILE.to_string();
    write(&dir.join(name), effective.render())?;
    write(&dir.join(BER_FILE), ber.to_text())
}

/// One run: trace (unless disabled) and metrics in `dir`.
fn run_one(loaded: &LoadedScenario, seed: u64, dir: &Path, trace: bool) -> Result<MetricsSummary, Failure> {
    let mut model = loaded.model().map_err(|e| Failure::Invalid(e.to_string()))?;
    model.seed = seed;
    create_dir(dir)?;
    let sink = if trace {
        let path = dir.join("trace.csv");
        let file = fs::File::create(&path).map_err(|e| Failure::runtime(path.display(), e))?;
        TraceSink::to_writer(BufWriter::new(file)).map_err(|e| Failure::runtime(path.display(), e))?
    } else {
        TraceSink::Off
    };
    let out = run(&model, &loaded.ber_table, sink).map_err(|e| Failure::runtime(format!("seed {seed}"), e))?;
    write(&dir.join("metrics.json"), out.summary.to_json())?;
    write(&dir.join("metrics.txt"), out.summary.to_table())?;
    Ok(out.summary)
}

fn one_line(seed: u64, s: &MetricsSummary) -> String {
    let offered: u64 = s.flows.iter().map(|f| f.offered).sum();
    let delivered: u64 = s.flows.iter().map(|f| f.delivered).sum();
    format!(
        "seed {seed}: {delivered}/{offered} delivered, {:.3} bit/s, {} pulse collisions, {:.6e} J",
        s.global.throughput_bps, s.global.pulse_collisions, s.global.total_joules
    )
}

fn run_point(loaded: &LoadedScenario, seeds: &[u64], out: &Path, trace: bool) -> Result<(), Failure> {
    create_dir(out)?;
    echo_scenario(out, &loaded.scenario, &loaded.ber_table, "effective_scenario.toml")?;
    let results: Vec<Result<(u64, MetricsSummary), Failure>> = seeds
        .par_iter()
        .map(|&seed| run_one(loaded, seed, &out.join(format!("seed_{seed}")), trace).map(|s| (seed, s)))
        .collect();
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let agg = aggregate(&runs);
    write(
        &out.join("aggregate.json"),
        serde_json::to_string_pretty(&agg).map_err(|e| Failure::runtime("aggregate", e))?,
    )?;
    if let [(_, summary)] = runs.as_slice() {
        print!("{}", summary.to_table());
    } else {
        for (seed, s) in &runs {
            println!("{}", one_line(*seed, s));
        }
    }
    Ok(())
}

fn load_checked(path: &Path, overrides: &[(String, String)]) -> Result<LoadedScenario, Failure> {
    load(path, overrides).map_err(|e| Failure::Invalid(e.to_string()))
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    path: &Path,
    seed: Option<u64>,
    seeds: Option<SeedRange>,
    out: &Path,
    trace: bool,
    set: Vec<(String, String)>,
    sweep: Option<(String, Vec<String>)>,
) -> Result<(), Failure> {
    let points: Vec<(PathBuf, Vec<(String, String)>)> = match sweep {
        None => vec![(out.to_path_buf(), set)],
        Some((key, values)) => values
            .into_iter()
            .map(|v| {
                let mut o = set.clone();
                o.push((key.clone(), v.clone()));
                (out.join(format!("{key}={v}")), o)
            })
            .collect(),
    };
    // Validate every point before running any.
    let loaded = points
        .iter()
        .map(|(dir, o)| load_checked(path, o).map(|l| (dir, l)))
        .collect::<Result<Vec<_>, _>>()?;
    for (dir, l) in &loaded {
        let seeds = match (&seeds, seed) {
            (Some(s), _) => s.0.clone(),
            (None, Some(s)) => vec![s],
            (None, None) => vec![l.scenario.simulation.seed],
        };
        if loaded.len() > 1 {
            println!("{}", dir.display());
        }
        run_point(l, &seeds, dir, trace)?;
    }
    Ok(())
}

fn cmd_reference(out: &Path, run_them: bool, only: &[String], list: bool) -> Result<(), Failure> {
    let catalog = reference::catalog();
    if list {
        for r in &catalog {
            println!("{}", r.name);
        }
        return Ok(());
    }
    if let Some(unknown) = only.iter().find(|n| !catalog.iter().any(|r| &r.name == *n)) {
        return Err(Failure::Invalid(format!("unknown reference `{unknown}` (see --list)")));
    }
    let chosen: Vec<&Reference> = catalog.iter().filter(|r| only.is_empty() || only.contains(&r.name)).collect();
    chosen
        .par_iter()
        .map(|r| {
            let dir = out.join(&r.name);
            create_dir(&dir)?;
            echo_scenario(&dir, &r.scenario, &r.ber_table, "scenario.toml")?;
            if run_them {
                let loaded = load_checked(&dir.join("scenario.toml"), &[])?;
                let summary = run_one(&loaded, r.scenario.simulation.seed, &dir, true)?;
                println!("{}: {}", r.name, one_line(r.scenario.simulation.seed, &summary));
            }
            Ok(())
        })
        .collect::<Result<Vec<()>, Failure>>()?;
    Ok(())
}

fn main() -> ExitCode {
    // Bad arguments are a validation failure; exit code 2 is reserved for runtime errors.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run { scenario, seed, seeds, out, no_trace, set, sweep } => {
            cmd_run(&scenario, seed, seeds, &out, !no_trace, set, sweep)
        }
        Command::Validate { scenario, set } => load_checked(&scenario, &set).map(|_| ()),
        Command::Reference { out, run, only, list } => cmd_reference(&out, run, &only, list),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
