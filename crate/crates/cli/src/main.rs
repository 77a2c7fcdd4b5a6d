//! `supervisor`: run research projects, answer their decisions and inspect
//! the shared world model from the shell.
//!
//! Exit status is 0 on success, 1 when the engine refuses or fails an
//! operation, and 2 for malformed command lines.

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use supervisor_core::consensus::simulate::{simulate_consensus, write_simulation_csv, SimulationConfig};
use supervisor_core::dev_loop::simulate::{simulate_loop, LoopSimulationConfig};
use supervisor_core::ingestion::PaperRecord;
use supervisor_core::phase_engine::server::{bind, serve, ApiState};
use supervisor_core::phase_engine::{
    AdvanceReport, Decision, DecisionKind, Engine, EngineConfig, EngineError, ProjectState,
};
use supervisor_core::world_model::{write_graphml, NodeKind, Relation, WorldModel};

#[derive(Parser)]
#[command(name = "supervisor", version, about = "Supervise multi-agent research projects")]
struct Cli {
    /// Engine configuration (backends, budget, protocol parameters).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding the model, projects and transcripts.
    #[arg(long, global = true, default_value = ".supervisor")]
    state: PathBuf,
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Take the top-ranked option at every decision point.
    #[arg(long, global = true)]
    auto_select: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a project: read seeds, brainstorm directions, wait for a choice.
    Init {
        #[arg(long)]
        project: String,
        #[arg(long)]
        interest: String,
        /// JSON array of seed paper records.
        #[arg(long)]
        seeds: Option<PathBuf>,
    },
    /// Run the project's current phase.
    Advance {
        #[arg(long)]
        project: String,
        /// Keep going until a decision is needed or the project is done.
        #[arg(long)]
        until_blocked: bool,
    },
    /// Answer a pending decision.
    Decide {
        #[arg(long)]
        project: String,
        #[arg(long, value_parser = parse_kind)]
        kind: DecisionKind,
        /// Option id, or its 1-based position in the ranked list.
        #[arg(long)]
        option: String,
        #[arg(long, default_value = "user")]
        actor: String,
    },
    /// Show all projects, or one project with its pending decisions.
    Status {
        #[arg(long)]
        project: Option<String>,
    },
    /// Inspect or export the world model.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
    /// Monte-Carlo recall and precision of the gap consensus protocol.
    SimulateConsensus {
        /// Agent counts, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "3")]
        agents: Vec<usize>,
        /// Per-agent hit rates, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0.3")]
        hit_rate: Vec<f64>,
        /// Round-2 adoption rate; defaults to the hit rate.
        #[arg(long)]
        round2_hit_rate: Option<f64>,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        round_limit: Option<u32>,
    },
    /// Repeated development loops against seeded stochastic agents.
    SimulateLoop {
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 5)]
        t_max: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Chance that each quality criterion passes.
        #[arg(long)]
        criterion_pass_rate: Option<f64>,
        /// Chance that a tested mechanism is confirmed.
        #[arg(long)]
        confirm_rate: Option<f64>,
    },
    /// Serve the HTTP API over the state directory.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Node and edge counts by kind and verification state.
    Show {
        /// Only elements committed by this project.
        #[arg(long)]
        project: Option<String>,
    },
    Export {
        #[arg(long, value_enum, default_value_t = Format::Graphml)]
        format: Format,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Graphml,
    Json,
}

fn parse_kind(s: &str) -> std::result::Result<DecisionKind, String> {
    s.parse()
}

#[derive(Debug)]
enum CliError {
    Engine(EngineError),
    Io(String),
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        CliError::Engine(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Engine(e) => write!(f, "{e}"),
            CliError::Io(e) => f.write_str(e),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            eprint!("{text}");
            if !text.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(2);
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run(&cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<EngineConfig> {
    Ok(match &cli.config {
        Some(path) => EngineConfig::load(path)?,
        None => EngineConfig::default(),
    })
}

fn open_engine(cli: &Cli) -> Result<Engine> {
    let config = load_config(cli)?;
    let gateway = config.build_gateway()?;
    let mut engine = Engine::load_dir(&cli.state, config, gateway)?;
    if cli.auto_select {
        engine.set_auto_select(true);
    }
    Ok(engine)
}

fn print_json(out: &mut impl Write, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out, "{text}")?;
    Ok(())
}

fn run(cli: &Cli, out: &mut impl Write) -> Result<()> {
    match &cli.command {
        Command::Init {
            project,
            interest,
            seeds,
        } => {
            let seeds: Vec<PaperRecord> = match seeds {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                    serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?
                }
                None => Vec::new(),
            };
            let mut engine = open_engine(cli)?;
            engine.start_project(project, interest, seeds)?;
            engine.save_dir(&cli.state)?;
            show_project(out, cli.json, engine.project(project)?)
        }
        Command::Advance { project, until_blocked } => {
            let mut engine = open_engine(cli)?;
            let mut reports = vec![engine.advance(project)?];
            while *until_blocked {
                match engine.advance(project) {
                    Ok(r) => reports.push(r),
                    Err(EngineError::Blocked { .. } | EngineError::Finished(_)) => break,
                    Err(e) => {
                        engine.save_dir(&cli.state)?;
                        return Err(e.into());
                    }
                }
            }
            engine.save_dir(&cli.state)?;
            if cli.json {
                return print_json(out, &reports);
            }
            for r in &reports {
                show_report(out, r)?;
            }
            Ok(())
        }
        Command::Decide {
            project,
            kind,
            option,
            actor,
        } => {
            let mut engine = open_engine(cli)?;
            let decision = Decision {
                kind: *kind,
                option: option.clone(),
                actor: actor.clone(),
            };
            engine.submit_decision(project, &decision)?;
            engine.save_dir(&cli.state)?;
            let p = engine.project(project)?;
            if cli.json {
                return print_json(out, &json!({"decision": p.decisions.last(), "project": p.summary()}));
            }
            let rec = p.decisions.last().expect("decision just recorded");
            writeln!(out, "{}: {} = {} ({})", p.id, rec.kind, rec.option, rec.label)?;
            show_project(out, false, p)
        }
        Command::Status { project: Some(id) } => {
            let engine = open_engine(cli)?;
            show_project(out, cli.json, engine.project(id)?)
        }
        Command::Status { project: None } => {
            let engine = open_engine(cli)?;
            let summaries: Vec<_> = engine.projects().map(ProjectState::summary).collect();
            if cli.json {
                return print_json(out, &summaries);
            }
            if summaries.is_empty() {
                writeln!(out, "no projects in {}", cli.state.display())?;
            }
            for s in summaries {
                let waiting = s.pending.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", ");
                writeln!(
                    out,
                    "{:<16} {:<4} {:<20} {}",
                    s.id,
                    s.phase.as_str(),
                    s.phase_name,
                    if waiting.is_empty() { "-".to_owned() } else { format!("waiting on {waiting}") }
                )?;
            }
            Ok(())
        }
        Command::Graph {
            command: GraphCommand::Show { project },
        } => {
            let engine = open_engine(cli)?;
            let stats = graph_stats(engine.world_model(), project.as_deref());
            if cli.json {
                return print_json(out, &stats);
            }
            writeln!(
                out,
                "{} nodes, {} edges, {} commits",
                stats["nodes"], stats["edges"], stats["commits"]
            )?;
            for (section, map) in [("nodes", &stats["by_kind"]), ("edges", &stats["by_relation"])] {
                writeln!(out, "{section}:")?;
                for (name, c) in map.as_object().expect("object") {
                    writeln!(out, "  {name:<16} {:>5}  verified {:>5}", c["total"], c["verified"])?;
                }
            }
            Ok(())
        }
        Command::Graph {
            command: GraphCommand::Export { format, out: dest },
        } => {
            let engine = open_engine(cli)?;
            let wm = engine.world_model();
            let mut body = Vec::new();
            match format {
                Format::Graphml => write_graphml(wm, &mut body)?,
                Format::Json => body.extend_from_slice(wm.to_canonical_json().as_bytes()),
            }
            match dest {
                Some(path) => std::fs::write(path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
                None => out.write_all(&body)?,
            }
            Ok(())
        }
        Command::SimulateConsensus {
            agents,
            hit_rate,
            round2_hit_rate,
            trials,
            seed,
            round_limit,
        } => {
            let mut rows = Vec::new();
            for &k in agents {
                for &p in hit_rate {
                    let mut cfg = SimulationConfig::new(k, p, *trials, *seed);
                    if let Some(p2) = round2_hit_rate {
                        cfg.stochastic.round2_hit_rate_p2 = *p2;
                    }
                    if let Some(r) = round_limit {
                        cfg.round_limit = *r;
                    }
                    rows.push(simulate_consensus(&cfg).map_err(EngineError::from)?);
                }
            }
            if cli.json {
                return print_json(out, &rows);
            }
            write_simulation_csv(&rows, out).map_err(|e| CliError::Io(e.to_string()))
        }
        Command::SimulateLoop {
            trials,
            t_max,
            seed,
            criterion_pass_rate,
            confirm_rate,
        } => {
            let mut cfg = LoopSimulationConfig::new(*trials, *t_max, *seed);
            if let Some(r) = criterion_pass_rate {
                cfg.stochastic.criterion_pass_rate = *r;
            }
            if let Some(r) = confirm_rate {
                cfg.stochastic.confirm_rate = *r;
            }
            let row = simulate_loop(&cfg).map_err(EngineError::from)?;
            if cli.json {
                return print_json(out, &row);
            }
            writeln!(out, "trials,t_max,finalized,mean_iterations,max_iterations,searched_pairs,duplicate_pairs")?;
            writeln!(
                out,
                "{},{},{},{:.4},{},{},{}",
                row.trials,
                row.t_max,
                row.finalized,
                row.mean_iterations,
                row.max_iterations,
                row.searched_pairs,
                row.duplicate_pairs
            )?;
            Ok(())
        }
        Command::Serve { addr } => {
            let engine = open_engine(cli)?;
            let state = ApiState::new(engine, Some(cli.state.clone()));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = bind(addr).await?;
                let local = listener.local_addr()?;
                writeln!(out, "listening on http://{local}")?;
                out.flush()?;
                serve(state, listener).await?;
                Ok(())
            })
        }
    }
}

fn show_report(out: &mut impl Write, r: &AdvanceReport) -> Result<()> {
    writeln!(
        out,
        "{}: {} -> {} ({} events, model {} nodes / {} edges)",
        r.project, r.from, r.to, r.events, r.nodes, r.edges
    )?;
    if !r.pending.is_empty() {
        let kinds: Vec<&str> = r.pending.iter().map(|k| k.as_str()).collect();
        writeln!(out, "  waiting on {}", kinds.join(", "))?;
    }
    Ok(())
}

fn show_project(out: &mut impl Write, as_json: bool, p: &ProjectState) -> Result<()> {
    if as_json {
        return print_json(out, &json!({"project": p.summary(), "pending": p.pending}));
    }
    let s = p.summary();
    writeln!(out, "project   {}", s.id)?;
    writeln!(out, "interest  {}", s.interest)?;
    writeln!(out, "phase     {} ({})", s.phase, s.phase_name)?;
    if let Some(d) = &s.direction {
        writeln!(out, "direction {d}")?;
    }
    if let Some(t) = s.track {
        writeln!(out, "track     {}", t.as_str())?;
    }
    if let Some(m) = &s.method {
        let state = if s.finalized == Some(true) { "finalized" } else { "not finalized" };
        writeln!(out, "method    {m} ({state})")?;
    }
    writeln!(out, "spent     {} calls, {} tokens", s.spent.calls, s.spent.tokens)?;
    for d in &p.pending {
        writeln!(out, "pending   {}", d.kind)?;
        for (i, o) in d.options.iter().enumerate() {
            writeln!(out, "  {:>2}. [{}] {}", i + 1, o.id, o.label)?;
        }
    }
    Ok(())
}

fn graph_stats(wm: &WorldModel, project: Option<&str>) -> Value {
    let mine = |id| {
        project.is_none_or(|p| wm.provenance(id).iter().any(|r| r.project.as_deref() == Some(p)))
    };
    let nodes: Vec<_> = wm.nodes().filter(|n| mine(n.id.into())).collect();
    let edges: Vec<_> = wm.edges().filter(|e| mine(e.id.into())).collect();
    let mut by_kind = serde_json::Map::new();
    for k in NodeKind::ALL {
        let of: Vec<_> = nodes.iter().filter(|n| n.kind() == k).collect();
        let verified = of.iter().filter(|n| n.uncertainty.is_verified()).count();
        by_kind.insert(k.as_str().into(), json!({"total": of.len(), "verified": verified}));
    }
    let mut by_relation = serde_json::Map::new();
    for r in Relation::ALL {
        let of: Vec<_> = edges.iter().filter(|e| e.relation == r).collect();
        let verified = of.iter().filter(|e| e.uncertainty.is_verified()).count();
        by_relation.insert(r.as_str().into(), json!({"total": of.len(), "verified": verified}));
    }
    json!({
        "project": project,
        "nodes": nodes.len(),
        "edges": edges.len(),
        "commits": wm.commit_count(),
        "by_kind": by_kind,
        "by_relation": by_relation,
    })
}
