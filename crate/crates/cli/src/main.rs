//! Batch front door: generate traces, run simulations, sweep parameters,
//! print the storage table, count distinct prefetching records.
//!
//! Exit codes: 0 success, 2 usage, 3 input error, 4 internal invariant
//! violation. Failures print a machine-readable error object to stderr.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use fetchsim_core::engine::{self, DistinctRecordKind, RunReport};
use fetchsim_core::storage::{
    self, format_kb, BreakdownParams, StorageBreakdown, STUDIED_PARTIAL_TAG_BITS,
};
use fetchsim_core::trace::{
    generate, parse_text_trace, parse_trace, write_trace, SyntheticKind, SyntheticTraceSpec,
    TraceRecord,
};

#[derive(Parser)]
#[command(
    name = "fetchsim",
    version,
    about = "Trace-driven L1-I prefetch simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace file
    Gen {
        /// Trace shape
        #[arg(value_enum)]
        kind: GenKind,
        /// Number of segments
        #[arg(long, default_value_t = 1)]
        segments: u64,
        /// Blocks per segment
        #[arg(long, default_value_t = 16)]
        blocks: u64,
        /// Loop iterations
        #[arg(long, default_value_t = 1)]
        iters: u64,
        /// RNG seed (random walks)
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output trace path
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one simulation and emit the JSON report
    Run {
        #[arg(long)]
        trace: PathBuf,
        /// JSON config file; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. --set prefetcher.lookahead=5
        #[arg(long = "set", value_name = "PATH=VALUE")]
        set: Vec<String>,
        /// Report path; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one simulation per value of a swept config key, emitting CSV
    Sweep {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "PATH=VALUE")]
        set: Vec<String>,
        /// KEY=V1,V2,... e.g. --vary lookahead=1,2,3
        #[arg(long, value_name = "KEY=VALUES")]
        vary: String,
        /// CSV path; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the partial-tag/HOBPT storage trade-off table
    Storage {
        /// A partial-tag length, or `all` for the studied set
        #[arg(long = "partial-tag", default_value = "all")]
        partial_tag: String,
        /// Emit CSV instead of the aligned text table
        #[arg(long)]
        csv: bool,
    },
    /// Count distinct prefetching records a scheme would create
    CountRecords {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum)]
        kind: CountKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Loop,
    Segmented,
    Calls,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum CountKind {
    ManaTrigger,
    PifTrigger,
    RdipSignature,
}

/// Input problems exit 3; misuse of flags exits 2 (clap reports those
/// itself); anything else is an internal failure and exits 4.
enum Failure {
    Usage(anyhow::Error),
    Input(anyhow::Error),
}

impl Failure {
    fn report(&self) -> ExitCode {
        let (kind, err, code) = match self {
            Failure::Usage(e) => ("usage", e, 2),
            Failure::Input(e) => ("input", e, 3),
        };
        let object = serde_json::json!({
            "error": { "kind": kind, "message": format!("{err:#}") }
        });
        eprintln!("{object}");
        ExitCode::from(code)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| dispatch(cli.command))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(failure)) => failure.report(),
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal invariant violation".into());
            let object = serde_json::json!({
                "error": { "kind": "internal", "message": message }
            });
            eprintln!("{object}");
            ExitCode::from(4)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Gen {
            kind,
            segments,
            blocks,
            iters,
            seed,
            out,
        } => cmd_gen(kind, segments, blocks, iters, seed, &out).map_err(Failure::Input),
        Command::Run {
            trace,
            config,
            set,
            out,
        } => cmd_run(&trace, config.as_deref(), &set, out.as_deref()).map_err(Failure::Input),
        Command::Sweep {
            trace,
            config,
            set,
            vary,
            out,
        } => cmd_sweep(&trace, config.as_deref(), &set, &vary, out.as_deref()),
        Command::Storage { partial_tag, csv } => {
            cmd_storage(&partial_tag, csv).map_err(Failure::Input)
        }
        Command::CountRecords { trace, kind } => cmd_count(&trace, kind).map_err(Failure::Input),
    }
}

fn cmd_gen(
    kind: GenKind,
    segments: u64,
    blocks: u64,
    iters: u64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let spec = SyntheticTraceSpec {
        kind: match kind {
            GenKind::Loop => SyntheticKind::SequentialLoop,
            GenKind::Segmented => SyntheticKind::SegmentedLoop,
            GenKind::Calls => SyntheticKind::CallChain,
            GenKind::Random => SyntheticKind::RandomWalk,
        },
        segment_count: segments,
        blocks_per_segment: blocks,
        iterations: iters,
        seed,
    };
    spec.validate().map_err(|e| anyhow!(e))?;
    let bytes = write_trace(&generate(&spec)).map_err(|e| anyhow!(e))?;
    std::fs::write(out, bytes).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

/// Reads a trace file, binary or text, sniffing the magic.
fn load_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(b"MIT1") {
        parse_trace(&bytes).map_err(|e| anyhow!("{}: {e}", path.display()))
    } else {
        let text = std::str::from_utf8(&bytes)
            .with_context(|| format!("{} is neither MIT1 nor UTF-8 text", path.display()))?;
        parse_text_trace(text).map_err(|e| anyhow!("{}: {e}", path.display()))
    }
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn cmd_run(
    trace: &Path,
    config_path: Option<&Path>,
    overrides: &[String],
    out: Option<&Path>,
) -> Result<()> {
    let records = load_trace(trace)?;
    let config = config::load_config(config_path, overrides)?.to_engine_config()?;
    let report = engine::run(&records, &config).map_err(|e| anyhow!(e))?;
    emit(out, &report.to_json())
}

fn cmd_sweep(
    trace: &Path,
    config_path: Option<&Path>,
    overrides: &[String],
    vary: &str,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let (key, values) = parse_vary(vary).map_err(Failure::Usage)?;
    let records = load_trace(trace).map_err(Failure::Input)?;

    // build one validated engine config per swept value, in input order
    let mut configs = Vec::new();
    for raw in &values {
        let build = || -> Result<_> {
            let mut value: serde_json::Value = match config_path {
                Some(p) => serde_json::from_str(
                    &std::fs::read_to_string(p)
                        .with_context(|| format!("reading config {}", p.display()))?,
                )
                .context("parsing config")?,
                None => serde_json::json!({}),
            };
            for spec in overrides {
                let (path, v) = spec
                    .split_once('=')
                    .ok_or_else(|| anyhow!("--set expects path=value, got {spec:?}"))?;
                let parsed = serde_json::from_str(v)
                    .unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
                config::set_path(&mut value, path, parsed)?;
            }
            let path = config::sweep_path(&key)?;
            config::set_path(&mut value, path, config::sweep_value(&key, raw)?)?;
            config::seed_prefetcher_kind(&mut value);
            config::parse_config_value(value)?.to_engine_config()
        };
        configs.push(build().map_err(Failure::Input)?);
    }

    let rows: Result<Vec<RunReport>, _> = configs
        .par_iter()
        .map(|config| engine::run(&records, config))
        .collect();
    let rows = rows.map_err(|e| Failure::Input(anyhow!(e)))?;

    let mut csv = format!("{},{}\n", key, RunReport::csv_header());
    for (raw, row) in values.iter().zip(&rows) {
        csv.push_str(&format!("{},{}\n", raw, row.csv_row()));
    }
    emit(out, &csv).map_err(Failure::Input)
}

fn parse_vary(vary: &str) -> Result<(String, Vec<String>)> {
    let (key, list) = vary
        .split_once('=')
        .ok_or_else(|| anyhow!("--vary expects KEY=V1,V2,..., got {vary:?}"))?;
    storage_sanity_check_key(key)?;
    let values: Vec<String> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    if values.is_empty() {
        bail!("--vary {key}= has an empty value list");
    }
    Ok((key.to_string(), values))
}

fn storage_sanity_check_key(key: &str) -> Result<()> {
    config::sweep_path(key).map(|_| ())
}

fn breakdown_for(partial: u32) -> Result<StorageBreakdown> {
    storage::mana_storage_breakdown(&BreakdownParams {
        partial_tag_bits: partial,
        ..Default::default()
    })
    .map_err(|e| anyhow!(e))
}

fn cmd_storage(partial_tag: &str, csv: bool) -> Result<()> {
    let rows: Vec<StorageBreakdown> = if partial_tag == "all" {
        STUDIED_PARTIAL_TAG_BITS
            .iter()
            .map(|&p| breakdown_for(p))
            .collect::<Result<_>>()?
    } else {
        let p: u32 = partial_tag
            .parse()
            .context("--partial-tag expects a number or `all`")?;
        vec![breakdown_for(p)?]
    };
    if csv {
        let mut out =
            String::from("partial_tag_bits,hobp_index_bits,hobpt_kb,mana_table_kb,sum_kb\n");
        for b in &rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                b.partial_tag_bits,
                b.hobp_index_bits,
                format_kb(b.hobpt_bits),
                format_kb(b.mana_table_bits),
                format_kb(b.sum_bits()),
            ));
        }
        print!("{out}");
    } else {
        println!(
            "{:>16}  {:>15}  {:>13}  {:>18}  {:>9}",
            "Partial Tag Bits", "HOBP Index Bits", "HOBPT Storage", "MANA_Table Storage", "Sum"
        );
        for b in &rows {
            println!(
                "{:>16}  {:>15}  {:>13}  {:>18}  {:>9}",
                b.partial_tag_bits,
                b.hobp_index_bits,
                format!("{} KB", format_kb(b.hobpt_bits)),
                format!("{} KB", format_kb(b.mana_table_bits)),
                format!("{} KB", format_kb(b.sum_bits())),
            );
        }
    }
    Ok(())
}

fn cmd_count(trace: &Path, kind: CountKind) -> Result<()> {
    let records = load_trace(trace)?;
    let kind = match kind {
        CountKind::ManaTrigger => DistinctRecordKind::ManaTrigger,
        CountKind::PifTrigger => DistinctRecordKind::PifTrigger,
        CountKind::RdipSignature => DistinctRecordKind::RdipSignature,
    };
    println!("{}", engine::count_distinct_records(&records, kind));
    Ok(())
}
