//! Command implementations and exit-status mapping.
//!
//! Exit statuses: 0 terminated or clean parse, 1 deadlock or assertion
//! violation, 2 parse/lower error, 3 budget exhausted, 64 usage error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use scoop_core::frontend;
use scoop_core::runtime::rules::Engine;
use scoop_core::scheduler::explore::explore_with_visited;
use scoop_core::scheduler::{run, RunStatus, SchedulePolicy};
use scoop_core::state::dump_state;

pub const EXIT_OK: u8 = 0;
pub const EXIT_STOPPED: u8 = 1;
pub const EXIT_FRONTEND: u8 = 2;
pub const EXIT_BUDGET: u8 = 3;
pub const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "scoop",
    about = "Reference interpreter and schedule explorer for SCOOP-subset programs",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a program under a schedule policy.
    Run(RunArgs),
    /// Exhaustively explore interleavings up to a depth bound.
    Explore(ExploreArgs),
    /// Check that a program tokenizes, parses and lowers.
    Parse(SourceArg),
    /// Print the lowered program model.
    DumpIr(SourceArg),
}

#[derive(Args)]
struct SourceArg {
    /// Path to a .scoop source file.
    source: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    source: PathBuf,
    /// round-robin | random | script:<file> (one processor ordinal per line)
    #[arg(long, default_value = "round-robin")]
    schedule: String,
    /// Seed for the random schedule.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    max_steps: usize,
    /// Emit one line per transition.
    #[arg(long)]
    trace: bool,
    /// Print the final state in the simplified state description.
    #[arg(long)]
    dump_state: bool,
}

#[derive(Args)]
struct ExploreArgs {
    source: PathBuf,
    #[arg(long, default_value_t = 12)]
    depth: usize,
    /// Write the machine-readable report to this path.
    #[arg(long)]
    json_out: Option<PathBuf>,
}

pub fn run_cli(args: &[String], stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8 {
    let cli =
        match Cli::try_parse_from(std::iter::once("scoop".to_string()).chain(args.iter().cloned()))
        {
            Ok(cli) => cli,
            Err(e) => {
                return match e.kind() {
                    ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                        let _ = write!(stdout, "{e}");
                        EXIT_OK
                    }
                    _ => {
                        let _ = write!(stderr, "{e}");
                        EXIT_USAGE
                    }
                }
            }
        };
    match cli.command {
        Command::Run(args) => cmd_run(args, stdout, stderr),
        Command::Explore(args) => cmd_explore(args, stdout, stderr),
        Command::Parse(args) => cmd_parse(args, stdout, stderr),
        Command::DumpIr(args) => cmd_dump_ir(args, stdout, stderr),
    }
}

fn load(source: &PathBuf, stderr: &mut dyn Write) -> Result<scoop_core::ProgramIR, u8> {
    let text = match std::fs::read_to_string(source) {
        Ok(text) => text,
        Err(e) => {
            let _ = writeln!(stderr, "cannot read {}: {e}", source.display());
            return Err(EXIT_USAGE);
        }
    };
    frontend::compile(&text).map_err(|e| {
        let _ = writeln!(stderr, "{e}");
        EXIT_FRONTEND
    })
}

fn parse_policy(args: &RunArgs, stderr: &mut dyn Write) -> Result<SchedulePolicy, u8> {
    match args.schedule.as_str() {
        "round-robin" => Ok(SchedulePolicy::RoundRobin),
        "random" => Ok(SchedulePolicy::Random { seed: args.seed }),
        other => {
            if let Some(path) = other.strip_prefix("script:") {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    let _ = writeln!(stderr, "cannot read schedule script {path}: {e}");
                    EXIT_USAGE
                })?;
                let mut ordinals = Vec::new();
                for (i, line) in text.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() {
                        continue;
                    }
                    match line.parse::<usize>() {
                        Ok(v) => ordinals.push(v),
                        Err(_) => {
                            let _ = writeln!(
                                stderr,
                                "schedule script line {}: '{line}' is not a processor ordinal",
                                i + 1
                            );
                            return Err(EXIT_USAGE);
                        }
                    }
                }
                Ok(SchedulePolicy::Script(ordinals))
            } else {
                let _ = writeln!(
                    stderr,
                    "unknown schedule '{other}' (expected round-robin, random, or script:<file>)"
                );
                Err(EXIT_USAGE)
            }
        }
    }
}

fn cmd_run(args: RunArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8 {
    let ir = match load(&args.source, stderr) {
        Ok(ir) => ir,
        Err(code) => return code,
    };
    let policy = match parse_policy(&args, stderr) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let engine = Engine::new(ir);
    let outcome = match run(&engine, &policy, args.max_steps) {
        Ok(outcome) => outcome,
        Err(e) => {
            let _ = writeln!(stderr, "{e}");
            return EXIT_USAGE;
        }
    };
    if args.trace {
        let _ = write!(stdout, "{}", outcome.render_trace());
    }
    if args.dump_state {
        let _ = write!(
            stdout,
            "{}",
            dump_state(&outcome.final_config.state, &engine.ir)
        );
    }
    match outcome.status {
        RunStatus::Terminated => {
            let _ = writeln!(stdout, "terminated after {} steps", outcome.steps);
            EXIT_OK
        }
        RunStatus::Deadlock => {
            let _ = writeln!(stderr, "deadlock after {} steps", outcome.steps);
            for line in &outcome.deadlock_report {
                let _ = writeln!(stderr, "  {line}");
            }
            EXIT_STOPPED
        }
        RunStatus::AssertionViolation => {
            if let Some(v) = &outcome.violation {
                let _ = writeln!(stderr, "{v}");
            }
            EXIT_STOPPED
        }
        RunStatus::BudgetExhausted => {
            let _ = writeln!(stderr, "step budget of {} exhausted", args.max_steps);
            EXIT_BUDGET
        }
    }
}

fn cmd_explore(args: ExploreArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8 {
    let ir = match load(&args.source, stderr) {
        Ok(ir) => ir,
        Err(code) => return code,
    };
    let engine = Engine::new(ir);
    let (report, _) = explore_with_visited(&engine, args.depth);
    let _ = write!(stdout, "{}", report.render_text());
    if let Some(path) = &args.json_out {
        if let Err(e) = std::fs::write(path, report.render_json()) {
            let _ = writeln!(stderr, "cannot write {}: {e}", path.display());
            return EXIT_USAGE;
        }
    }
    if report.deadlocks.is_empty() && report.violations.is_empty() {
        EXIT_OK
    } else {
        EXIT_STOPPED
    }
}

fn cmd_parse(args: SourceArg, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8 {
    match load(&args.source, stderr) {
        Ok(_) => {
            let _ = writeln!(stdout, "ok");
            EXIT_OK
        }
        Err(code) => code,
    }
}

fn cmd_dump_ir(args: SourceArg, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8 {
    let ir = match load(&args.source, stderr) {
        Ok(ir) => ir,
        Err(code) => return code,
    };
    let mut classes: BTreeMap<&str, &scoop_core::frontend::ir::ClassType> = BTreeMap::new();
    for class in &ir.classes {
        classes.insert(&class.name, class);
    }
    for (name, class) in classes {
        let kind = if class.is_exp {
            "expanded class"
        } else {
            "class"
        };
        let _ = writeln!(stdout, "{kind} {name}");
        for &a in &class.attributes {
            let f = ir.feature(a);
            let _ = writeln!(stdout, "  attribute {}", f.name);
        }
        for &q in &class.functions {
            let f = ir.feature(q);
            let once = if f.is_once { "once " } else { "" };
            let _ = writeln!(
                stdout,
                "  {once}function {} ({} formals)",
                f.name,
                f.formals.len()
            );
        }
        for &c in &class.procedures {
            let f = ir.feature(c);
            let once = if f.is_once { "once " } else { "" };
            let creator = if class.creators.contains(&f.name) {
                ", creation"
            } else {
                ""
            };
            let _ = writeln!(
                stdout,
                "  {once}procedure {} ({} formals{creator})",
                f.name,
                f.formals.len()
            );
        }
    }
    let _ = writeln!(
        stdout,
        "root: {}.{}",
        ir.class(ir.root_class).name,
        ir.feature(ir.root_procedure).name
    );
    EXIT_OK
}
