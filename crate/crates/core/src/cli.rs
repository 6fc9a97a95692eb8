//! The `manifold-guard` command line.
//!
//! Exit codes: 0 success, 1 configuration or validation error, 2 runtime
//! error, 3 scenario golden mismatch.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::audit::{query_records, read_sink, AuditLog, AuditOutcome, AuditQuery, AuditStage};
use crate::cycle::{Engine, EngineError};
use crate::dsl::{parse_rules, RuleFile};
use crate::filter::FilterSet;
use crate::knowledge::Knowledge;
use crate::manifold::{FragmentId, ManifoldError};
use crate::records::{parse_corpus, parse_events, StateDump};
use crate::scenarios::scenario;

#[derive(Debug, Parser)]
#[command(name = "manifold-guard", version, about = "Belief filtering for language-grounded agents")]
struct Cli {
    /// Rule file
    #[arg(long, global = true, env = "MANIFOLD_GUARD_RULES")]
    rules: Option<PathBuf>,
    /// Ontology, lexicon and scorer definitions
    #[arg(long, global = true)]
    ontology: Option<PathBuf>,
    /// Belief corpus, assimilated before the first cycle
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Event stream; a blank line ends a cycle
    #[arg(long, global = true)]
    events: Option<PathBuf>,
    /// Audit sink (JSON lines)
    #[arg(long = "audit-out", global = true)]
    audit_out: Option<PathBuf>,
    /// Engine state dump
    #[arg(long, global = true)]
    state: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and link-check a rule file
    Check,
    /// Replay an event stream cycle by cycle
    Run {
        /// Re-read the rule file before every cycle
        #[arg(long)]
        reload: bool,
    },
    /// Run a built-in demonstration and compare it with its golden transcript
    Scenario {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
        number: u8,
    },
    /// Query an audit sink
    Audit {
        #[arg(long)]
        stage: Option<AuditStage>,
        #[arg(long)]
        rule: Option<String>,
        #[arg(long)]
        outcome: Option<AuditOutcome>,
        /// Inclusive cycle range, e.g. 2..5
        #[arg(long, value_parser = parse_cycles)]
        cycles: Option<(u64, u64)>,
    },
    /// Inspect or release the quarantine buffer of a state dump
    Quarantine {
        #[command(subcommand)]
        action: QuarantineAction,
    },
}

#[derive(Debug, Subcommand)]
enum QuarantineAction {
    List,
    Promote { id: FragmentId },
    Purge { id: FragmentId },
}

fn parse_cycles(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once("..").ok_or("expected a..b")?;
    let a = a.parse().map_err(|_| format!("bad cycle {a:?}"))?;
    let b = b.parse().map_err(|_| format!("bad cycle {b:?}"))?;
    Ok((a, b))
}

enum Failure {
    Config(String),
    Runtime(String),
    Golden(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Golden(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) | Failure::Golden(m) => m,
        }
    }
}

type CliResult = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    path.as_deref().ok_or_else(|| Failure::Config(format!("--{flag} is required")))
}

fn output(out: &mut dyn Write, line: &str) -> CliResult {
    writeln!(out, "{line}").map_err(|e| Failure::Runtime(format!("stdout: {e}")))
}

fn plural(n: usize, word: &str) -> String {
    format!("{n} {word}{}", if n == 1 { "" } else { "s" })
}

fn engine_failure(err: EngineError) -> Failure {
    match err {
        EngineError::Manifold(ManifoldError::UnknownId(_)) | EngineError::NotQuarantined(_) => {
            Failure::Config(err.to_string())
        }
        other => Failure::Runtime(other.to_string()),
    }
}

fn load_knowledge(cli: &Cli) -> Result<Knowledge, Failure> {
    match &cli.ontology {
        None => Ok(Knowledge::new()),
        Some(path) => {
            let src = read(path)?;
            Knowledge::parse(&src).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
        }
    }
}

/// Parses and link-checks the rule file, rendering every problem as a
/// positioned diagnostic.
fn load_rules(path: &Path, knowledge: &Knowledge) -> Result<RuleFile, Failure> {
    let src = read(path)?;
    let file = parse_rules(&src).map_err(|e| Failure::Config(format!("{}:{e}", path.display())))?;
    let problems = file.link(knowledge);
    if !problems.is_empty() {
        let lines: Vec<String> = problems.iter().map(|p| format!("{}: {p}", path.display())).collect();
        return Err(Failure::Config(lines.join("\n")));
    }
    Ok(file)
}

fn open_sink(path: &Option<PathBuf>) -> Result<AuditLog, Failure> {
    match path {
        None => Ok(AuditLog::new()),
        Some(p) => AuditLog::create_file(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display()))),
    }
}

fn cmd_check(cli: &Cli, out: &mut dyn Write) -> CliResult {
    let knowledge = load_knowledge(cli)?;
    let file = load_rules(required(&cli.rules, "rules")?, &knowledge)?;
    output(
        out,
        &format!("{}, {}", plural(file.filter_set.len(), "rule"), plural(file.contradictions.len(), "contradiction")),
    )
}

fn cmd_run(cli: &Cli, reload: bool, out: &mut dyn Write) -> CliResult {
    let rules_path = required(&cli.rules, "rules")?;
    let events_path = required(&cli.events, "events")?;
    let knowledge = Arc::new(load_knowledge(cli)?);
    let rules = load_rules(rules_path, &knowledge)?;
    let cycles = parse_events(&read(events_path)?)
        .map_err(|e| Failure::Config(format!("{}: {e}", events_path.display())))?;
    let corpus = match &cli.corpus {
        None => Vec::new(),
        Some(path) => parse_corpus(&read(path)?).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?,
    };

    let mut engine = Engine::configured(&rules, Arc::clone(&knowledge), open_sink(&cli.audit_out)?);
    engine.load_corpus(&corpus).map_err(engine_failure)?;
    for input in &cycles {
        if reload {
            let fresh = load_rules(rules_path, &knowledge)?;
            engine.filters = Arc::new(fresh.filter_set);
            engine.conflicts = fresh.contradictions;
            engine.budgets = fresh.budgets;
            engine.trust = fresh.trust;
        }
        let report = engine.run_cycle(&input.events, &input.plans, &input.queries).map_err(engine_failure)?;
        output(out, &report.summary_line())?;
    }
    if let Some(path) = &cli.state {
        write_file(path, &StateDump::capture(&engine).to_json())?;
    }
    Ok(())
}

fn cmd_scenario(cli: &Cli, number: u8, out: &mut dyn Write) -> CliResult {
    let fixture = scenario(number).ok_or_else(|| Failure::Config(format!("no scenario {number}")))?;
    let run = fixture
        .run(open_sink(&cli.audit_out)?)
        .map_err(|e| Failure::Runtime(format!("scenario {number}: {e}")))?;
    output(out, &format!("scenario {number}: {}", fixture.title))?;
    for line in &run.transcript {
        output(out, line)?;
    }
    if let Some(path) = &cli.state {
        write_file(path, &StateDump::capture(&run.engine).to_json())?;
    }
    if !run.matches_golden(fixture) {
        let expected = fixture.golden.join("\n");
        return Err(Failure::Golden(format!("scenario {number}: transcript differs from golden:\n{expected}")));
    }
    output(out, &format!("scenario {number}: ok"))
}

fn cmd_audit(cli: &Cli, query: AuditQuery, out: &mut dyn Write) -> CliResult {
    let path = required(&cli.audit_out, "audit-out")?;
    let records = read_sink(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    let hits = query_records(&records, &query).map_err(|e| Failure::Config(e.to_string()))?;
    for rec in hits {
        output(out, &rec.to_json_line())?;
    }
    Ok(())
}

fn cmd_quarantine(cli: &Cli, action: &QuarantineAction, out: &mut dyn Write) -> CliResult {
    let state_path = required(&cli.state, "state")?;
    let dump = StateDump::from_json(&read(state_path)?)
        .map_err(|e| Failure::Config(format!("{}: {e}", state_path.display())))?;
    let audit = match (&cli.audit_out, action) {
        (Some(path), QuarantineAction::Promote { .. } | QuarantineAction::Purge { .. }) => {
            AuditLog::append_to_file(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?
        }
        _ => AuditLog::new(),
    };
    let mut engine = Engine::new(Arc::new(FilterSet::empty()), Arc::new(Knowledge::new()), audit);
    dump.restore(&mut engine).map_err(|e| Failure::Config(format!("{}: {e}", state_path.display())))?;

    match action {
        QuarantineAction::List => {
            for f in engine.quarantined() {
                output(
                    out,
                    &format!("#{} {} confidence={} source={} {:?}", f.id, f.coordinate, f.confidence, f.source, f.text),
                )?;
            }
            return Ok(());
        }
        QuarantineAction::Promote { id } => engine.promote(*id).map_err(engine_failure)?,
        QuarantineAction::Purge { id } => engine.purge(*id).map_err(engine_failure)?,
    }
    write_file(state_path, &StateDump::capture(&engine).to_json())?;
    let record = engine.audit.records().last().expect("operator action was audited");
    output(out, &record.to_json_line())
}

/// Runs the tool with explicit arguments and streams; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { write!(out, "{rendered}") } else { write!(err, "{rendered}") };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Check => cmd_check(&cli, out),
        Command::Run { reload } => cmd_run(&cli, *reload, out),
        Command::Scenario { number } => cmd_scenario(&cli, *number, out),
        Command::Audit { stage, rule, outcome, cycles } => {
            let query = AuditQuery { stage: *stage, rule: rule.clone(), outcome: *outcome, cycles: *cycles };
            cmd_audit(&cli, query, out)
        }
        Command::Quarantine { action } => cmd_quarantine(&cli, action, out),
    };
    match result {
        Ok(()) => 0,
        Err(failure) => {
            let _ = writeln!(err, "error: {}", failure.message());
            failure.code()
        }
    }
}
