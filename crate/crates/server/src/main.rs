use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rubrag_core::corpus::DocType;
use rubrag_core::engine::engine_error_code;
use rubrag_core::review::AssessmentStatus;
use rubrag_core::rubric::Rubric;
use rubrag_core::{stats, Engine};
use rubrag_server::{bind, load_config, serve, state, token_from_env};

#[derive(Parser)]
#[command(name = "rubrag", version, about = "Rubric-grounded essay grading with human review")]
struct Cli {
    /// TOML service config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Evidence passages retrieved per essay.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve,
    /// Ingest every unseen file in a directory into the knowledge corpus.
    Ingest {
        dir: PathBuf,
        /// Used for files without a doc_type front matter key.
        #[arg(long)]
        doc_type: Option<String>,
    },
    /// Grade every essay file in a directory.
    Grade {
        dir: PathBuf,
        #[arg(long)]
        cohort: Option<String>,
    },
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Reliability report from a CSV of id,rater_a,rater_b score pairs.
    Report { pairs: PathBuf },
}

#[derive(Subcommand)]
enum ReviewCommand {
    /// List assessments, pending ones by default.
    List {
        #[arg(long, default_value = "pending_review")]
        status: String,
        #[arg(long)]
        cohort: Option<String>,
    },
    Approve {
        id: String,
        #[arg(long)]
        reviewer: String,
    },
    Reject {
        id: String,
        #[arg(long)]
        reviewer: String,
        #[arg(long)]
        reason: String,
        #[arg(long)]
        regenerate: bool,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(k) = cli.k {
        config.default_k = k;
    }
    if let Command::Report { pairs } = &cli.command {
        let file = std::fs::File::open(pairs).with_context(|| pairs.display().to_string())?;
        let scores = stats::PairedScores::from_csv(file)?;
        let rubric = match &config.rubric_path {
            Some(p) => Rubric::load(p)?,
            None => Rubric::engineering_design(),
        };
        let report = stats::reliability_report(&scores, &rubric.criteria[0].bands, None)?;
        return print_json(&report.to_json());
    }
    let engine = Engine::open(config.clone())?;
    match cli.command {
        Command::Serve => {
            let token = token_from_env(&config);
            if token.is_none() {
                tracing::warn!(var = %config.auth_token_env_var, "no API token set, authentication disabled");
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = bind(&config.listen_address).await?;
                tracing::info!(address = %listener.local_addr()?, "listening");
                serve(listener, state(engine, token), async {
                    let _ = tokio::signal::ctrl_c().await;
                    tracing::info!("shutting down");
                })
                .await?;
                anyhow::Ok(())
            })?;
        }
        Command::Ingest { dir, doc_type } => {
            let doc_type = doc_type.map(|t| t.parse::<DocType>()).transpose()?;
            let report = engine.ingest_dir(&dir, doc_type)?;
            for d in &report.documents {
                println!("ingested {} {} {}", d.id, d.doc_type, d.source_name);
            }
            for (path, reason) in &report.errors {
                eprintln!("skipped {}: {reason}", path.display());
            }
            println!("{} ingested, {} skipped", report.documents.len(), report.errors.len());
        }
        Command::Grade { dir, cohort } => {
            let summary = engine.grade_batch(&dir, cohort, cli.k)?;
            for f in &summary.failures {
                eprintln!("failed {} [{}]: {}", f.source, f.code, f.reason);
            }
            println!("{} graded, {} failed", summary.graded, summary.failed);
        }
        Command::Review(cmd) => review(&engine, cmd)?,
        Command::Report { .. } => unreachable!(),
    }
    Ok(())
}

fn review(engine: &Engine, cmd: ReviewCommand) -> anyhow::Result<()> {
    match cmd {
        ReviewCommand::List { status, cohort } => {
            let status = AssessmentStatus::parse(&status).with_context(|| format!("unknown status `{status}`"))?;
            for a in engine.assessments.list(Some(status), cohort.as_deref()) {
                println!("{}\t{}\t{:.1}%\t{}", a.id, a.submission_id, a.total_percent, a.status.as_str());
            }
        }
        ReviewCommand::Approve { id, reviewer } => {
            let doc = engine.review.approve(&id, &reviewer).map_err(|e| coded(e.into()))?;
            println!("approved {id}; feedback document {}", doc.id);
        }
        ReviewCommand::Reject { id, reviewer, reason, regenerate } => {
            engine
                .review
                .reject(&id, &reviewer, &reason, regenerate)
                .map_err(|e| coded(e.into()))?;
            println!("rejected {id}");
        }
    }
    Ok(())
}

fn coded(e: rubrag_core::EngineError) -> anyhow::Error {
    anyhow::anyhow!("[{}] {e}", engine_error_code(&e))
}
