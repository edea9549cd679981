use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kgharvest::config::PipelineConfig;
use kgharvest::pipeline::{self, dry_run, Services, StageReport};
use kgharvest::Error;

/// Build an image-text dataset from knowledge-graph entities and image
/// search results.
///
/// Exit status: 0 success, 1 usage or configuration error, 2 partial
/// failure (some items failed, outputs valid), 3 fatal error.
#[derive(Parser)]
#[command(name = "kgharvest", version)]
struct Cli {
    /// Pipeline configuration file (TOML, `${VAR}` expanded from the environment).
    #[arg(short, long, global = true, default_value = "kgharvest.toml")]
    config: PathBuf,

    /// Override the top-level seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Print the stage report as JSON instead of text.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract entities below the configured super-entities, merge WordNet, apply the blocklist.
    Extract,
    /// Split entities into visual and non-visual with the first LLM backend.
    Classify,
    /// Generate attributes for popular entities with every LLM backend.
    Attrs,
    /// Pick a natural type among each entity's ancestors.
    NaturalTypes,
    /// Build the query catalog and drop queries naming benchmark classes.
    Queries,
    /// Send queries to the image search engines (resumable, budget capped).
    Search {
        /// Override search.budget_usd; 0 makes no API calls.
        #[arg(long)]
        budget_usd: Option<f64>,
    },
    /// Download images and alt texts for the search results (resumable).
    Harvest,
    /// Apply the alt-text and image filters.
    Curate,
    /// Merge near duplicates, flag evaluation leaks, write the dataset manifest.
    Dedup,
    /// Print per-query-set statistics of the manifest.
    Stats,
    /// Pack the manifest and images into tar shards.
    Shard,
    /// Draw one training label per image.
    Sample,
    /// Zero-shot classification and retrieval from precomputed embeddings.
    Eval,
    /// Run every stage against bundled fixtures and local mock services.
    DryRun {
        /// Output directory; replaced if it exists.
        #[arg(long, default_value = "dry-run")]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Argument(_) | Error::MissingStage { .. } => 1,
        _ => 3,
    }
}

fn print(reports: &[StageReport], json: bool) {
    for r in reports {
        if json {
            println!("{}", serde_json::to_string(r).expect("reports serialize"));
            continue;
        }
        println!("[{}]{}", r.stage, if r.partial { " partial" } else { "" });
        for l in &r.summary {
            println!("  {l}");
        }
    }
}

fn load(cli: &Cli) -> kgharvest::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&cli.config).map_err(|e| match e {
        Error::File { path, source } => Error::Config(format!("{}: {source}", path.display())),
        other => other,
    })?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> kgharvest::Result<Vec<StageReport>> {
    if let Command::DryRun { out } = &cli.command {
        if out.exists() {
            std::fs::remove_dir_all(out).map_err(|e| Error::file(out, e))?;
        }
        // planted failures make some stages partial by design
        let mut stages = dry_run::dry_run(out, cli.seed.unwrap_or(0))?.stages;
        for s in &mut stages {
            if s.partial {
                s.partial = false;
                s.summary.push("partial, as planted in the fixtures".into());
            }
        }
        return Ok(stages);
    }
    let mut cfg = load(cli)?;
    if let Command::Search { budget_usd: Some(b) } = &cli.command {
        cfg.search.budget_usd = *b;
        cfg.validate()?;
    }
    let svc = Services::from_config(&cfg);
    let report = match &cli.command {
        Command::Extract => pipeline::extract(&cfg, &svc)?,
        Command::Classify => pipeline::classify(&cfg, &svc)?,
        Command::Attrs => pipeline::attrs(&cfg, &svc)?,
        Command::NaturalTypes => pipeline::natural_types(&cfg, &svc)?,
        Command::Queries => pipeline::queries(&cfg)?,
        Command::Search { .. } => pipeline::search(&cfg, &svc)?,
        Command::Harvest => pipeline::harvest_stage(&cfg, &svc)?,
        Command::Curate => pipeline::curate_stage(&cfg)?,
        Command::Dedup => pipeline::dedup(&cfg, &svc)?,
        Command::Stats => pipeline::stats(&cfg)?,
        Command::Shard => pipeline::shard(&cfg)?,
        Command::Sample => pipeline::sample(&cfg)?,
        Command::Eval => pipeline::eval_stage(&cfg)?,
        Command::DryRun { .. } => unreachable!(),
    };
    Ok(vec![report])
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(reports) => {
            print(&reports, cli.json);
            ExitCode::from(if reports.iter().any(|r| r.partial) { 2 } else { 0 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
