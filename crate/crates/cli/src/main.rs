//! `prophet`: run, compare, sweep and trace programs on the simulator.
//!
//! Exit status: 0 on success, 1 on bad input (usage, I/O, parse or runtime
//! errors in the program), 2 when a speculative run diverges from the
//! sequential one or the model detects an internal inconsistency.

use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use prophet_core::corpus;
use prophet_core::{parse_program, run_speculative, run_speculative_traced, MachineConfig, Program, RunResult, SimError};

/// Frozen column order of run and sweep output.
const COLUMNS: [&str; 8] = ["program", "PEs", "spawned", "failed", "pct_successful", "seq_cycles", "spmt_cycles", "speedup"];

#[derive(Parser, Debug)]
#[command(name = "prophet", version, about = "Speculative multithreading simulator with pre-computation slices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a program in both modes and print statistics.
    Run {
        /// Program file, or `builtin:NAME` for a built-in program.
        program: String,
        #[command(flatten)]
        machine: MachineArgs,
        #[arg(long, default_value_t = 4)]
        pes: usize,
        /// Print the event trace before the statistics.
        #[arg(long)]
        trace: bool,
        /// Print statistics as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Run every program at every PE count and print CSV.
    Sweep {
        programs: Vec<String>,
        #[command(flatten)]
        machine: MachineArgs,
        /// Comma-separated PE counts.
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 8])]
        pes: Vec<usize>,
    },
    /// Print the event trace of a speculative run.
    Trace {
        program: String,
        #[command(flatten)]
        machine: MachineArgs,
        #[arg(long, default_value_t = 4)]
        pes: usize,
    },
    /// Print a randomly generated program.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List the built-in programs.
    Corpus,
}

#[derive(Args, Debug, Clone)]
struct MachineArgs {
    #[arg(long, default_value_t = 1)]
    mem_latency: u64,
    #[arg(long, default_value_t = 1)]
    spawn_cost: u64,
    #[arg(long, default_value_t = 1)]
    squash_cost: u64,
    /// Verify/commit cycles per compared or committed word.
    #[arg(long, default_value_t = 1)]
    verify_cost: u64,
    #[arg(long, default_value_t = 0)]
    bus_latency: u64,
    #[arg(long, default_value_t = 10_000_000)]
    max_cycles: u64,
}

impl MachineArgs {
    fn config(&self, num_pes: usize) -> MachineConfig {
        MachineConfig {
            num_pes,
            spawn_cost_cycles: self.spawn_cost,
            squash_cost_cycles: self.squash_cost,
            mem_latency_cycles: self.mem_latency,
            verify_cost_per_word: self.verify_cost,
            bus_latency_cycles: self.bus_latency,
            max_cycles: self.max_cycles,
            ..MachineConfig::default()
        }
    }
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Model(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Model(_) => 2,
        }
    }
}

fn sim_error(program: &str, e: SimError) -> CliError {
    let msg = format!("{program}: {e}");
    if e.is_model_failure() {
        CliError::Model(msg)
    } else {
        CliError::Input(msg)
    }
}

fn load(spec: &str) -> Result<Program, CliError> {
    let text = match spec.strip_prefix("builtin:") {
        Some(name) => corpus::source(name)
            .ok_or_else(|| CliError::Input(format!("no built-in program named {name}")))?
            .to_string(),
        None => fs::read_to_string(spec).map_err(|e| CliError::Input(format!("{spec}: {e}")))?,
    };
    parse_program(&text).map_err(|e| CliError::Input(format!("{spec}: {e}")))
}

fn display_name(spec: &str) -> String {
    match spec.strip_prefix("builtin:") {
        Some(name) => name.to_string(),
        None => Path::new(spec)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| spec.to_string()),
    }
}

fn row(name: &str, pes: usize, r: &RunResult) -> [String; 8] {
    let s = &r.stats;
    [
        name.to_string(),
        pes.to_string(),
        s.spawned.to_string(),
        s.failed.to_string(),
        s.successful_pct().map_or_else(|| "N/A".to_string(), |p| format!("{p:.1}")),
        s.seq_cycles.to_string(),
        s.spmt_cycles.to_string(),
        format!("{:.3}", s.speedup()),
    ]
}

fn write_csv(out: impl Write, rows: &[[String; 8]]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()
}

fn write_table(mut out: impl Write, rows: &[[String; 8]]) -> io::Result<()> {
    let mut widths = COLUMNS.map(str::len);
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    writeln!(out, "{}", line(COLUMNS.to_vec()))?;
    for r in rows {
        writeln!(out, "{}", line(r.iter().map(String::as_str).collect()))?;
    }
    Ok(())
}

fn io_err(e: io::Error) -> CliError {
    CliError::Input(format!("write failed: {e}"))
}

fn cmd_run(program: &str, machine: &MachineArgs, pes: usize, trace: bool, csv: bool) -> Result<(), CliError> {
    let p = load(program)?;
    let cfg = machine.config(pes);
    let result = if trace { run_speculative_traced(&p, &cfg) } else { run_speculative(&p, &cfg) }
        .map_err(|e| sim_error(program, e))?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for line in result.trace_lines() {
        writeln!(out, "{line}").map_err(io_err)?;
    }
    let rows = [row(&display_name(program), pes, &result)];
    if csv {
        write_csv(&mut out, &rows).map_err(io_err)
    } else {
        write_table(&mut out, &rows).map_err(io_err)
    }
}

fn cmd_sweep(programs: &[String], machine: &MachineArgs, pes: &[usize]) -> Result<(), CliError> {
    if pes.is_empty() || pes.contains(&0) {
        return Err(CliError::Input("--pes needs one or more counts, each at least 1".into()));
    }
    let mut pes = pes.to_vec();
    pes.sort_unstable();
    pes.dedup();
    let loaded = programs.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..programs.len()).flat_map(|i| pes.iter().map(move |&n| (i, n))).collect();
    let results: Vec<Result<[String; 8], CliError>> = jobs
        .par_iter()
        .map(|&(i, n)| {
            let r = run_speculative(&loaded[i], &machine.config(n)).map_err(|e| sim_error(&programs[i], e))?;
            Ok(row(&display_name(&programs[i]), n, &r))
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut first_input_error = None;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e @ CliError::Model(_)) => return Err(e),
            Err(e) => {
                first_input_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_input_error {
        return Err(e);
    }
    write_csv(io::stdout().lock(), &rows).map_err(io_err)
}

fn cmd_trace(program: &str, machine: &MachineArgs, pes: usize) -> Result<(), CliError> {
    let p = load(program)?;
    let result = run_speculative_traced(&p, &machine.config(pes)).map_err(|e| sim_error(program, e))?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for line in result.trace_lines() {
        writeln!(out, "{line}").map_err(io_err)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { program, machine, pes, trace, csv } => cmd_run(&program, &machine, pes, trace, csv),
        Command::Sweep { programs, machine, pes } => cmd_sweep(&programs, &machine, &pes),
        Command::Trace { program, machine, pes } => cmd_trace(&program, &machine, pes),
        Command::Gen { seed } => {
            print!("{}", corpus::generate_source(seed));
            Ok(())
        }
        Command::Corpus => {
            for (name, _) in corpus::BUILTIN {
                println!("builtin:{name}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Input(msg) | CliError::Model(msg)) = &e;
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
