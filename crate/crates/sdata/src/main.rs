use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sdata::json::{CheckJson, DiagnosticJson, ProgressJson, ReportJson, ScheduleStepJson, TraceStepJson};
use sdata_core::ast::Network;
use sdata_core::conformance::{check_preservation, check_progress_theorem, uniform_sizes, DEFAULT_MAX_STATES};
use sdata_core::runtime::{instantiate, run_observed, FaultPlan, DEFAULT_STEP_LIMIT, RunOutcome, Scheduler};
use sdata_core::size::Valuation;
use sdata_core::typecheck::check_network;
use sdata_core::{Diagnostic, Name};

const EXIT_CHECK: u8 = 1;
const EXIT_CYCLE: u8 = 2;
const EXIT_DEADLOCK: u8 = 3;
const EXIT_VIOLATION: u8 = 4;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "sdata", version, about = "Check, schedule and run sessional dataflow networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchedulerKind {
    #[value(name = "roundRobin")]
    RoundRobin,
    Random,
}

#[derive(clap::Args)]
struct Common {
    file: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(clap::Args)]
struct Exec {
    /// Size parameter, `name=value`. Repeatable. Unset parameters get 4.
    #[arg(long = "size", value_parser = parse_size_arg)]
    sizes: Vec<(String, u64)>,
    #[arg(long, value_enum, default_value = "roundRobin")]
    scheduler: SchedulerKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Type-check the network and verify determinism and progress.
    Check(Common),
    /// Print a witness schedule.
    Schedule(Common),
    /// Execute the network and print the trace.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        exec: Exec,
        /// Number of consecutive firings. Experimental beyond one.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        firings: u32,
        /// Give up after this many steps per firing.
        #[arg(long, default_value_t = DEFAULT_STEP_LIMIT)]
        max_steps: usize,
    },
    /// Co-simulate the network against its flowstate.
    Conform {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        exec: Exec,
        /// Sizes 1, 2, 4, 8 under round-robin and five random seeds.
        #[arg(long)]
        sweep: bool,
        /// Skip the exhaustive exploration of interleavings.
        #[arg(long)]
        no_exhaustive: bool,
        /// Drop the n-th send.
        #[arg(long)]
        drop: Option<u64>,
    },
}

fn parse_size_arg(s: &str) -> Result<(String, u64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{}`", s))?;
    let v = v.trim().parse::<u64>().map_err(|e| format!("bad value for `{}`: {}", k, e))?;
    Ok((k.trim().to_string(), v))
}

fn report(diags: &[Diagnostic], file: &str) {
    for d in diags {
        eprintln!("{}:{}", file, d);
    }
}

fn load(path: &PathBuf) -> Result<Network, u8> {
    let file = path.display().to_string();
    let src = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("{}: {}", file, e);
        EXIT_USAGE
    })?;
    sdata::parse_program(&src).map_err(|ds| {
        report(&ds, &file);
        EXIT_CHECK
    })
}

fn schedule_failure(diags: &[Diagnostic]) -> u8 {
    if diags.iter().any(|d| d.rule.starts_with("FS Prog")) {
        EXIT_CYCLE
    } else {
        EXIT_CHECK
    }
}

fn sizes_for(net: &Network, given: &[(String, u64)]) -> Result<Valuation, u8> {
    let mut val = uniform_sizes(net, 4).unwrap_or_default();
    for (k, v) in given {
        let name = Name::new(k);
        if !val.contains_key(&name) {
            eprintln!("`{}` is not a size parameter", k);
            return Err(EXIT_USAGE);
        }
        val.insert(name, *v);
    }
    Ok(val)
}

fn scheduler(e: &Exec) -> Scheduler {
    match e.scheduler {
        SchedulerKind::RoundRobin => Scheduler::RoundRobin,
        SchedulerKind::Random => Scheduler::Random(e.seed),
    }
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn check(c: &Common) -> Result<(), u8> {
    let net = load(&c.file)?;
    let file = c.file.display().to_string();
    match check_network(&net) {
        Ok(r) => {
            match c.format {
                Format::Text => println!("{}", r.flow),
                Format::Json => print_json(&CheckJson { ok: true, flow: Some(r.flow.to_string()), diagnostics: vec![] }),
            }
            Ok(())
        }
        Err(ds) => {
            report(&ds, &file);
            if let Format::Json = c.format {
                print_json(&CheckJson { ok: false, flow: None, diagnostics: ds.iter().map(DiagnosticJson::from).collect() });
            }
            Err(EXIT_CHECK)
        }
    }
}

fn schedule(c: &Common) -> Result<(), u8> {
    let net = load(&c.file)?;
    let r = check_network(&net).map_err(|ds| {
        report(&ds, &c.file.display().to_string());
        schedule_failure(&ds)
    })?;
    match c.format {
        Format::Text => {
            for s in &r.schedule {
                println!("{}: <{}>{}", s.actor, s.multiplicity, s.event);
            }
        }
        Format::Json => print_json(&r.schedule.iter().map(ScheduleStepJson::from).collect::<Vec<_>>()),
    }
    Ok(())
}

fn run_cmd(c: &Common, e: &Exec, firings: u32, max_steps: usize) -> Result<(), u8> {
    let net = load(&c.file)?;
    let sizes = sizes_for(&net, &e.sizes)?;
    let inst = instantiate(&net, &sizes).map_err(|err| {
        eprintln!("{}: {}", c.file.display(), err);
        EXIT_CHECK
    })?;
    let mut trace = Vec::new();
    let mut cfg = inst.config.clone();
    let mut outcome = RunOutcome::Complete;
    for f in 0..firings {
        if f > 0 {
            cfg = inst.refire(&cfg);
        }
        let r = run_observed(&cfg, scheduler(e), max_steps, &mut |_, _, _, _, _| {});
        let base = trace.len();
        trace.extend(r.trace.into_iter().map(|mut t| {
            t.step += base;
            t
        }));
        cfg = r.last;
        outcome = r.outcome;
        if outcome != RunOutcome::Complete {
            break;
        }
    }
    match c.format {
        Format::Text => {
            for t in &trace {
                let bufs: Vec<String> = t.buffers.iter().map(|(n, len, _)| format!("{}={}", n, len)).collect();
                println!("{:>6}  actor {:<3} {:<12} {}", t.step, t.actor, t.label.to_string(), bufs.join(" "));
            }
        }
        Format::Json => print_json(&trace.iter().map(TraceStepJson::from).collect::<Vec<_>>()),
    }
    match outcome {
        RunOutcome::Complete => Ok(()),
        RunOutcome::StepLimit => {
            eprintln!("stopped after {} steps", max_steps);
            Ok(())
        }
        RunOutcome::Deadlock(d) => {
            eprint!("{}", d);
            Err(EXIT_DEADLOCK)
        }
        RunOutcome::Error(m) => {
            eprintln!("runtime error: {}", m);
            Err(EXIT_CHECK)
        }
    }
}

const SWEEP_SIZES: [u64; 4] = [1, 2, 4, 8];
const SWEEP_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn conform(c: &Common, e: &Exec, sweep: bool, exhaustive: bool, drop: Option<u64>) -> Result<(), u8> {
    let net = load(&c.file)?;
    let name = c.file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut runs: Vec<(Valuation, Scheduler)> = Vec::new();
    if sweep {
        for n in SWEEP_SIZES {
            let Some(v) = uniform_sizes(&net, n) else { continue };
            runs.push((v.clone(), Scheduler::RoundRobin));
            runs.extend(SWEEP_SEEDS.iter().map(|s| (v.clone(), Scheduler::Random(*s))));
        }
    } else {
        runs.push((sizes_for(&net, &e.sizes)?, scheduler(e)));
    }
    let fault = drop.map(FaultPlan::DropNth);
    let mut failed = false;
    let mut reports = Vec::new();
    for (sizes, sched) in &runs {
        let r = check_preservation(&net, sizes, *sched, fault).map_err(|m| {
            eprintln!("{}: {}", c.file.display(), m);
            EXIT_CHECK
        })?;
        failed |= !r.violations.is_empty();
        let j = ReportJson::new(&name, &r);
        if let Format::Text = c.format {
            let sz: Vec<String> = j.sizes.iter().map(|(k, v)| format!("{}={}", k, v)).collect();
            let verdict = if j.violations.is_empty() { "ok" } else { "VIOLATION" };
            println!("{} [{}] {}: {} steps, {}, {}", name, sz.join(","), j.scheduler, j.steps, j.outcome, verdict);
            for v in &j.violations {
                println!("  step {} ({}): expected {}, got {}", v.step, v.clause, v.expected, v.actual);
            }
        }
        reports.push(j);
    }
    let mut progress = Vec::new();
    if exhaustive {
        let mut seen = Vec::new();
        for (sizes, _) in &runs {
            if seen.contains(sizes) {
                continue;
            }
            seen.push(sizes.clone());
            let r = check_progress_theorem(&net, sizes, DEFAULT_MAX_STATES).map_err(|m| {
                eprintln!("{}: {}", c.file.display(), m);
                EXIT_CHECK
            })?;
            failed |= !r.holds();
            let j = ProgressJson::new(&name, &r);
            if let Format::Text = c.format {
                println!(
                    "{} exhaustive: {} states, {} final, {} stuck, {}",
                    name,
                    j.states,
                    j.final_states,
                    j.stuck,
                    if j.holds { "ok" } else { "FAILED" }
                );
            }
            progress.push(j);
        }
    }
    if let Format::Json = c.format {
        print_json(&serde_json::json!({ "runs": reports, "progress": progress }));
    }
    if failed {
        Err(EXIT_VIOLATION)
    } else {
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { EXIT_USAGE } else { 0 });
        }
    };
    let r = match &cli.command {
        Command::Check(c) => check(c),
        Command::Schedule(c) => schedule(c),
        Command::Run { common, exec, firings, max_steps } => run_cmd(common, exec, *firings, *max_steps),
        Command::Conform { common, exec, sweep, no_exhaustive, drop } => {
            conform(common, exec, *sweep, !*no_exhaustive, *drop)
        }
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
