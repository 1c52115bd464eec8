//! `apmm`: convert matrices, multiply, tune, benchmark and run the demo.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
//! failure. Every failure prints one line starting with `error:`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apmm_core::bench::{demo_quant_layer, parse_precisions, run_suite, BenchOptions, Suite};
use apmm_core::bipolar::{bipolar_to_signed, signed_to_bipolar};
use apmm_core::engine::{default_workers, fits_i32, Engine, GemmProblem};
use apmm_core::format::{read_matrix, read_table, write_matrix, write_table};
use apmm_core::oracle::oracle_matmul;
use apmm_core::tuner::{lookup, tune, Limits, DEFAULT_SCRATCH_BUDGET};
use apmm_core::{Encoding, IntMatrix, KernelConfig, OutputMatrix, ProblemKey, TuningTable};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "apmm", version, about = "Arbitrary-precision bit-plane integer GEMM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Re-encode an .apm matrix as signed or bipolar.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        to: Target,
    },
    /// Multiply X (M x K) by W (N x K), giving M x N.
    Gemm {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        w: PathBuf,
        #[arg(long)]
        p: u32,
        #[arg(long)]
        q: u32,
        #[arg(long, value_enum, default_value_t = EngineKind::Apt)]
        engine: EngineKind,
        /// Kernel config as `b_m=..,b_n=..,...`.
        #[arg(long, conflicts_with = "table")]
        config: Option<String>,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Time every candidate config for one shape and store the best.
    Tune {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        p: u32,
        #[arg(long)]
        q: u32,
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Time a workload suite against a naive 32-bit loop.
    Bench {
        #[arg(long)]
        suite: String,
        /// Comma-separated `p:q` pairs or `wQaP` names, e.g. `2:1,w2a2`.
        #[arg(long)]
        precisions: String,
        #[arg(long)]
        table: Option<PathBuf>,
        /// Include the 14336-wide shapes.
        #[arg(long)]
        large: bool,
        #[arg(long)]
        verify: bool,
        /// Tune shapes missing from the table (slow).
        #[arg(long)]
        tune_missing: bool,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long)]
        workers: Option<usize>,
        /// Write one machine-readable line per measurement here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Quantize a random float layer and compare signed and bipolar paths.
    Demo {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        p: u32,
        #[arg(long)]
        q: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Bipolar,
    Signed,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EngineKind {
    Apt,
    Oracle,
}

struct Failure {
    code: u8,
    msg: String,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

fn data(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

fn in_file(path: &Path) -> impl Fn(apmm_core::Error) -> Failure + '_ {
    move |e| data(format!("{}: {e}", path.display()))
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Convert { input, out, to } => convert(&input, &out, to),
        Command::Gemm {
            x,
            w,
            p,
            q,
            engine,
            config,
            table,
            out,
            workers,
        } => gemm(GemmArgs {
            x,
            w,
            p,
            q,
            engine,
            config,
            table,
            out,
            workers,
        }),
        Command::Tune {
            m,
            n,
            k,
            p,
            q,
            table,
            trials,
            workers,
        } => tune_cmd(ProblemKey { m, n, k, p, q }, &table, trials, workers),
        Command::Bench {
            suite,
            precisions,
            table,
            large,
            verify,
            tune_missing,
            trials,
            workers,
            report,
        } => bench(BenchArgs {
            suite,
            precisions,
            table,
            large,
            verify,
            tune_missing,
            trials,
            workers,
            report,
        }),
        Command::Demo {
            rows,
            cols,
            p,
            q,
            seed,
        } => demo(rows, cols, p, q, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}

fn convert(input: &Path, out: &Path, to: Target) -> CliResult {
    let m = read_matrix(input).map_err(in_file(input))?;
    let converted = match (to, m.encoding()) {
        (Target::Bipolar, Encoding::SignedInt) => signed_to_bipolar(&m),
        (Target::Signed, Encoding::BipolarInt) => bipolar_to_signed(&m),
        (_, found) => {
            return Err(data(format!(
                "{}: matrix is already {found}",
                input.display()
            )))
        }
    }
    .map_err(in_file(input))?;
    write_matrix(out, &converted).map_err(in_file(out))
}

struct GemmArgs {
    x: PathBuf,
    w: PathBuf,
    p: u32,
    q: u32,
    engine: EngineKind,
    config: Option<String>,
    table: Option<PathBuf>,
    out: Option<PathBuf>,
    workers: Option<usize>,
}

fn load_operand(path: &Path, bits: u32, flag: &str) -> Result<IntMatrix, Failure> {
    let m = read_matrix(path).map_err(in_file(path))?;
    if m.bits() != bits {
        return Err(data(format!(
            "{}: field bits is {} but --{flag} is {bits}",
            path.display(),
            m.bits()
        )));
    }
    Ok(m)
}

fn gemm(args: GemmArgs) -> CliResult {
    let x = load_operand(&args.x, args.p, "p")?;
    let w = load_operand(&args.w, args.q, "q")?;
    if x.cols() != w.cols() {
        return Err(data(format!(
            "{} has {} columns but {} has {}",
            args.x.display(),
            x.cols(),
            args.w.display(),
            w.cols()
        )));
    }
    let output = match args.engine {
        EngineKind::Oracle => oracle_matmul(&x, &w).map_err(|e| data(e.to_string()))?,
        EngineKind::Apt => {
            for (m, path) in [(&x, &args.x), (&w, &args.w)] {
                if m.encoding() != Encoding::BipolarInt {
                    return Err(data(format!(
                        "{}: the apt engine needs bipolar input (run `apmm convert --to bipolar`)",
                        path.display()
                    )));
                }
            }
            let config = resolve_config(&args, x.rows(), w.rows(), x.cols())?;
            let problem = GemmProblem::new(&x, &w, config).map_err(|e| data(e.to_string()))?;
            let engine = Engine::new(args.workers.unwrap_or_else(default_workers));
            if fits_i32(x.cols(), args.p, args.q) {
                let y = engine.gemm(&problem).map_err(|e| data(e.to_string()))?;
                y.map(i64::from)
            } else {
                eprintln!("note: using 64-bit accumulation for K={}", x.cols());
                engine.gemm_wide(&problem).map_err(|e| data(e.to_string()))?
            }
        }
    };
    let text = render(&output);
    match &args.out {
        Some(path) => fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn resolve_config(args: &GemmArgs, m: usize, n: usize, k: usize) -> Result<KernelConfig, Failure> {
    if let Some(text) = &args.config {
        let cfg: KernelConfig = text.parse().map_err(|e| usage(format!("--config: {e}")))?;
        cfg.validate(args.p, args.q)
            .map_err(|e| usage(format!("--config: {e}")))?;
        eprintln!("config: {cfg} (from --config)");
        return Ok(cfg);
    }
    if let Some(path) = &args.table {
        let table = read_table(path).map_err(in_file(path))?;
        let key = ProblemKey {
            m,
            n,
            k,
            p: args.p,
            q: args.q,
        };
        let (hit, entry) = lookup(&key, &table).map_err(in_file(path))?;
        let how = if hit == key { "exact match".to_string() } else { format!("nearest entry {hit}") };
        eprintln!("config: {} (table {}, {how})", entry.config, path.display());
        return Ok(entry.config);
    }
    let cfg = KernelConfig::default_for(args.p, args.q, DEFAULT_SCRATCH_BUDGET);
    eprintln!("config: {cfg} (default)");
    Ok(cfg)
}

/// `rows cols` on the first line, then one line of integers per row.
fn render(y: &OutputMatrix<i64>) -> String {
    let mut out = format!("{} {}\n", y.rows, y.cols);
    for r in 0..y.rows {
        let line: Vec<String> = y.row(r).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

fn load_table_or_empty(path: &Path) -> Result<TuningTable, Failure> {
    if path.exists() {
        read_table(path).map_err(in_file(path))
    } else {
        Ok(TuningTable::new())
    }
}

fn tune_cmd(key: ProblemKey, table_path: &Path, trials: usize, workers: Option<usize>) -> CliResult {
    if trials < 3 {
        return Err(usage("--trials must be at least 3"));
    }
    let mut table = load_table_or_empty(table_path)?;
    let limits = Limits {
        scratch_budget: DEFAULT_SCRATCH_BUDGET,
        max_workers: workers.unwrap_or_else(default_workers),
    };
    let outcome = tune(key, trials, &limits, &mut table).map_err(|e| usage(e.to_string()))?;
    write_table(table_path, &table).map_err(in_file(table_path))?;
    println!("key: {key}");
    println!("configs timed: {}", outcome.measured.len());
    println!("best: {} ({:.3} Gops/s)", outcome.best.config, outcome.best.throughput / 1e9);
    println!(
        "default: {} ({:.3} Gops/s)",
        outcome.default.config,
        outcome.default.throughput / 1e9
    );
    Ok(())
}

struct BenchArgs {
    suite: String,
    precisions: String,
    table: Option<PathBuf>,
    large: bool,
    verify: bool,
    tune_missing: bool,
    trials: usize,
    workers: Option<usize>,
    report: Option<PathBuf>,
}

fn bench(args: BenchArgs) -> CliResult {
    let suite: Suite = args.suite.parse().map_err(|e: apmm_core::Error| usage(e.to_string()))?;
    let precisions = parse_precisions(&args.precisions)
        .map_err(|e| usage(format!("--precisions: {e}")))?;
    if args.trials == 0 {
        return Err(usage("--trials must be positive"));
    }
    let mut table = match &args.table {
        Some(path) => load_table_or_empty(path)?,
        None => TuningTable::new(),
    };
    let workers = args.workers.unwrap_or_else(default_workers);
    let opts = BenchOptions {
        trials: args.trials,
        workers,
        large: args.large,
        verify: args.verify,
        tune_missing: args.tune_missing,
        limits: Limits {
            scratch_budget: DEFAULT_SCRATCH_BUDGET,
            max_workers: workers,
        },
    };
    let report = run_suite(&suite, &precisions, &opts, &mut table).map_err(|e| data(e.to_string()))?;
    print!("{}", report.table());
    if let (true, Some(path)) = (args.tune_missing, &args.table) {
        write_table(path, &table).map_err(in_file(path))?;
    }
    if let Some(path) = &args.report {
        fs::write(path, report.machine_lines())
            .map_err(|e| data(format!("{}: {e}", path.display())))?;
    }
    if !report.all_verified() {
        return Err(Failure {
            code: 3,
            msg: "engine output differs from the oracle".into(),
        });
    }
    Ok(())
}

fn demo(rows: usize, cols: usize, p: u32, q: u32, seed: u64) -> CliResult {
    let report = demo_quant_layer(rows, cols, p, q, seed).map_err(|e| usage(e.to_string()))?;
    println!("layer: {rows}x{cols} activations, {rows}x{cols} weights, p={p} q={q}, seed={seed}");
    println!("max abs error vs float: {:.6e}", report.max_abs_error);
    let identical = report.paths_identical();
    println!("signed and bipolar paths bit-identical: {identical}");
    if !identical {
        return Err(Failure {
            code: 3,
            msg: "signed and bipolar dequantized outputs differ".into(),
        });
    }
    Ok(())
}
