use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cin_cli::bench::{run_suite, BenchOptions, Suite};
use cin_cli::{append_csv, cmd_lower, cmd_run, split_assignment, to_csv, Binding, CliError, RunConfig};
use cin_core::graph::ExecutionMode;

#[derive(Parser)]
#[command(name = "cin", version, about = "Sparse tensor algebra compiler with workspaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the lowered and scheduled statement, iteration graph and loop plan.
    Lower(KernelArgs),
    /// Execute a kernel and report time and counters.
    Run(RunArgs),
    /// Run a benchmark suite.
    Bench(BenchArgs),
}

#[derive(Args)]
struct KernelArgs {
    /// Index notation, e.g. `A(i,j) = sum(k)(B(i,k)*C(k,j))`.
    #[arg(long)]
    expr: String,
    /// NAME=PATH or NAME=random(DxD,density,seed).
    #[arg(long = "bind", value_parser = parse_binding)]
    bindings: Vec<(String, Binding)>,
    /// NAME=dense|csr|csc|dcsr|csf.
    #[arg(long = "format", value_parser = split_assignment)]
    formats: Vec<(String, String)>,
    /// Schedule file or inline directives separated by `;`.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long, default_value = "fused")]
    mode: ExecutionMode,
    /// on|off; defaults to on for ordered result formats.
    #[arg(long, value_parser = parse_on_off)]
    sort: Option<bool>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    /// Untimed runs before the timed ones.
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    /// Compare the result with the dense reference evaluation.
    #[arg(long)]
    check: bool,
    /// Write the result (.mtx or .tns).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append a row to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// spmm, spadd, mttkrp or spmttkrp; all suites when omitted.
    suite: Option<Suite>,
    #[arg(long, default_value_t = 5)]
    repeat: usize,
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    check: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Append rows to this CSV file instead of printing them.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn parse_binding(s: &str) -> Result<(String, Binding), String> {
    let (name, value) = split_assignment(s)?;
    Ok((name, value.parse()?))
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(format!("expected on or off, got `{s}`")),
    }
}

impl KernelArgs {
    fn config(self) -> RunConfig {
        RunConfig {
            bindings: self.bindings,
            formats: self.formats,
            schedule: self.schedule,
            mode: self.mode,
            sort: self.sort,
            ..RunConfig::new(&self.expr)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Lower(args) => {
            print!("{}", cmd_lower(&args.config())?);
        }
        Command::Run(args) => {
            let cfg = RunConfig {
                repeat: args.repeat,
                warmup: args.warmup,
                check: args.check,
                out: args.out,
                csv: args.csv,
                json: args.json,
                ..args.kernel.config()
            };
            let report = cmd_run(&cfg)?;
            if cfg.json {
                println!("{}", serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?);
            } else {
                print!("{}", report.render_text());
            }
            if report.check_failed() {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Bench(args) => {
            let opts = BenchOptions { repeat: args.repeat, quick: args.quick, check: args.check, seed: args.seed };
            let suites = args.suite.map_or(Suite::ALL.to_vec(), |s| vec![s]);
            for s in suites {
                let table = run_suite(s, &opts)?;
                println!("{}", table.text);
                match &args.csv {
                    Some(path) => append_csv(path, &table.rows)?,
                    None => print!("{}", to_csv(&table.rows)?),
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
