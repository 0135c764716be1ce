//! Command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use leanflow::agent::{AgentBackend, ScriptedBackend};
use leanflow::bench::{
    compute_metrics, emit_report, load_problems, load_run, run_benchmark, BenchProblem, Mode, ProblemSet, ReportFormat,
    RunConfig,
};
use leanflow::config::{Config, EmbedderSpec, IndexConfig};
use leanflow::curation::{load_corpus, run_curation};
use leanflow::workflow::{write_atomic, AgentRoles};

#[derive(Parser)]
#[command(name = "leanflow", version, about = "Agentic theorem proving runs, benchmarks and reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Agent,
    Workflow,
    Curate,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Agent => Mode::AgentOnly,
            ModeArg::Workflow => Mode::FullWorkflow,
            ModeArg::Curate => Mode::Curate,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Prove one problem (a .lean file, or a JSON problem record).
    Prove {
        problem_file: PathBuf,
        #[arg(long, value_enum, default_value = "workflow")]
        mode: ModeArg,
        /// Light-inference budget as NxM.
        #[arg(long, value_parser = parse_budget)]
        budget: Option<(usize, usize)>,
        #[arg(long)]
        max_depth: Option<usize>,
        #[arg(long, default_value = "leanflow-out")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scripted backend fixture used for every role.
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Run a benchmark problem set.
    Bench {
        set: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: bool,
        #[arg(long, value_enum, default_value = "workflow")]
        mode: ModeArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Filter a candidate corpus by solve counts.
    Curate {
        corpus: PathBuf,
        #[arg(long, value_parser = parse_budget, default_value = "4x8")]
        budget: (usize, usize),
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long, default_value = "curation-out")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Summarize a finished run directory.
    Report {
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
    /// Premise index queries.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Top-k declarations for a query.
    Search {
        query: String,
        #[arg(short, default_value_t = 5)]
        k: usize,
        /// Index file; defaults to the one in --config.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_budget(s: &str) -> Result<(usize, usize), String> {
    let (n, m) = s
        .split_once(['x', 'X', '×'])
        .ok_or_else(|| format!("expected NxM, got '{s}'"))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("'{t}': {e}"));
    let (n, m) = (parse(n)?, parse(m)?);
    if n == 0 || m == 0 {
        return Err("N and M must be at least 1".into());
    }
    Ok((n, m))
}

fn load_config(path: Option<&Path>, script: Option<&Path>) -> Result<(Config, AgentRoles)> {
    let cfg = match path {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::default(),
    };
    let roles = match script {
        Some(s) => {
            let b: std::sync::Arc<dyn AgentBackend> = std::sync::Arc::new(
                ScriptedBackend::from_file(s).with_context(|| format!("loading script {}", s.display()))?,
            );
            AgentRoles::uniform(b)
        }
        None => cfg.roles().context("backends")?,
    };
    Ok((cfg, roles))
}

fn read_problem(path: &Path) -> Result<BenchProblem> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "lean") {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(BenchProblem::from_lean(id, &text));
    }
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or_default();
    serde_json::from_str(&text)
        .or_else(|_| serde_json::from_str(line))
        .context("problem file is neither Lean nor a JSON problem record")
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Prove {
            problem_file,
            mode,
            budget,
            max_depth,
            out,
            config,
            script,
        } => {
            let (cfg, roles) = load_config(config.as_deref(), script.as_deref())?;
            let problem = read_problem(&problem_file)?;
            let set = ProblemSet {
                name: problem.id.clone(),
                problems: vec![problem],
                lean_version_tag: None,
            };
            let mut rc = RunConfig::new(mode.into(), &out);
            rc.light_inference = budget.unwrap_or(cfg.budgets.light_inference);
            rc.workflow = cfg.workflow.clone();
            if let Some(d) = max_depth {
                rc.workflow.max_depth = d;
            }
            let env = cfg.prover_env()?;
            let result = run_benchmark(&set, &rc, &roles, &env)?;
            let r = &result.records[0];
            println!("{}", serde_json::to_string_pretty(r)?);
            Ok(if r.solved { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Bench {
            set,
            config,
            resume,
            mode,
            out,
            workers,
            script,
        } => {
            let (cfg, roles) = load_config(Some(&config), script.as_deref())?;
            let (set, warnings) = load_problems(&set)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let out = out.unwrap_or_else(|| PathBuf::from("runs").join(&set.name));
            let mut rc = RunConfig::new(mode.into(), out);
            rc.resume = resume;
            rc.light_inference = cfg.budgets.light_inference;
            rc.workflow = cfg.workflow.clone();
            rc.workers = workers.unwrap_or(cfg.budgets.workers);
            let env = cfg.prover_env()?;
            let result = run_benchmark(&set, &rc, &roles, &env)?;
            if !result.resumed.is_empty() {
                eprintln!("skipped {} finished problems", result.resumed.len());
            }
            print!("{}", emit_report(&result.metrics, ReportFormat::Text));
            Ok(ExitCode::SUCCESS)
        }
        Command::Curate {
            corpus,
            budget,
            config,
            script,
            out,
            workers,
        } => {
            let (cfg, roles) = load_config(config.as_deref(), script.as_deref())?;
            let corpus = load_corpus(&corpus)?;
            std::fs::create_dir_all(&out)?;
            let env = cfg.prover_env()?;
            let log = out.join("decisions.jsonl");
            let result = run_curation(
                &corpus,
                roles.lean_prover.as_ref(),
                &env,
                budget,
                workers.unwrap_or(cfg.budgets.workers),
                Some(&log),
            )?;
            let mut body = String::new();
            for p in &result.curated {
                body += &serde_json::to_string(p)?;
                body.push('\n');
            }
            write_atomic(&out.join("curated.jsonl"), body.as_bytes())?;
            println!(
                "kept {}/{} problems ({}); log in {}",
                result.curated.len(),
                corpus.len(),
                result.counting,
                log.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { run_dir, format } => {
            let (_, records) = load_run(&run_dir)?;
            let format = match format {
                FormatArg::Text => ReportFormat::Text,
                FormatArg::Json => ReportFormat::Json,
                FormatArg::Csv => ReportFormat::Csv,
            };
            print!("{}", emit_report(&compute_metrics(&records), format));
            Ok(ExitCode::SUCCESS)
        }
        Command::Index {
            command:
                IndexCommand::Search {
                    query,
                    k,
                    index,
                    config,
                },
        } => {
            let ix = match (index, config) {
                (Some(path), _) => IndexConfig {
                    path,
                    commit_pin: None,
                    embedder: None::<EmbedderSpec>,
                },
                (None, Some(c)) => match Config::load(&c)?.index {
                    Some(ix) => ix,
                    None => bail!("{} has no index section", c.display()),
                },
                (None, None) => bail!("pass --index FILE or --config FILE"),
            };
            let (index, embedder) = ix.load()?;
            let q = embedder.embed(&query)?;
            for hit in index.search(&q, k)? {
                println!("{:.4}\t{:?}\t{}\t{}", hit.score, hit.entry.kind, hit.entry.name, hit.entry.statement);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
