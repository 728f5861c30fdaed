//! `newsharvest` command-line driver.
//!
//! Exit status: 0 on success, 1 when a stage fails, 2 for usage or
//! configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use newsharvest::config::RunConfig;
use newsharvest::harvest::{Clock, SimulatedClock, SystemClock};
use newsharvest::llmmeta::CompletionModel;
use newsharvest::pipeline::{self, artifacts, PipelineError, RunContext};
use newsharvest::simnews::{self, FixtureCorpus, ServerHandle};
use url::Url;

#[derive(Parser, Debug)]
#[command(
    name = "newsharvest",
    version,
    about = "Collect, clean and profile news coverage from an aggregator"
)]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Opts {
    /// Run configuration (TOML). Defaults to the bundled fixture configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Aggregator base URL.
    #[arg(long, global = true, env = "NEWSHARVEST_ENDPOINT")]
    endpoint: Option<Url>,
    /// HTTP proxy for publisher requests.
    #[arg(long, global = true, env = "NEWSHARVEST_PROXY")]
    proxy: Option<Url>,
    /// The endpoint is a fixture server: route publisher traffic through it
    /// and use the simulated clock.
    #[arg(long, global = true)]
    fixture: bool,
    /// Advance a virtual clock instead of sleeping between requests.
    #[arg(long, global = true)]
    simulated_clock: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    topic: Option<String>,
    /// Headline similarity threshold for dedup.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Ranking snapshot (CSV) used by enrich and analyze.
    #[arg(long, global = true)]
    snapshot: Option<PathBuf>,
    /// Completion endpoint for metadata extraction.
    #[arg(long, global = true, env = "NEWSHARVEST_MODEL_URL")]
    model_url: Option<Url>,
    #[arg(long, global = true)]
    min_delay: Option<f64>,
    #[arg(long, global = true)]
    max_delay: Option<f64>,
    /// Allow a minimum delay below one second.
    #[arg(long, global = true)]
    i_understand_politeness: bool,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write the query plan.
    Plan,
    /// Run the plan against the aggregator and resolve result links.
    Harvest,
    /// Merge duplicate hits.
    Dedup,
    /// Fetch publisher pages and extract article text.
    Extract,
    /// Flag placeholder text and extract metadata with the model.
    Annotate,
    /// Drop noise and write the noise report.
    Validate {
        /// Dataset to validate; defaults to the annotate stage output.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Attach outlet rankings and typologies.
    Enrich {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Stage ledger, coverage and score distributions.
    Analyze,
    /// Write the final dataset.
    Export,
    /// All stages in one run. Starts a fixture server when no endpoint is given.
    E2e {
        /// Corpus for the built-in fixture server.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Fixture server utilities.
    Simnews {
        #[command(subcommand)]
        cmd: SimnewsCmd,
    },
}

#[derive(Subcommand, Debug)]
enum SimnewsCmd {
    /// Serve a corpus until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8650")]
        bind: String,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Stage(anyhow::Error),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => Failure::Usage(e.into()),
            PipelineError::Stage { stage, .. } => {
                Failure::Stage(anyhow::Error::new(e).context(format!("stage {stage} failed")))
            }
        }
    }
}

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.opts.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn load_config(opts: &Opts) -> Result<RunConfig, Failure> {
    let mut cfg = match &opts.config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::fixture(),
    };
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(t) = &opts.topic {
        cfg.topic = t.clone();
    }
    if let Some(t) = opts.threshold {
        cfg.dedup_threshold = t;
    }
    if let Some(s) = &opts.snapshot {
        cfg.enrich.snapshot = Some(absolute(s));
    }
    if let Some(u) = &opts.model_url {
        cfg.llm.url = Some(u.clone());
    }
    if let Some(d) = opts.min_delay {
        cfg.politeness.min_delay_s = d;
    }
    if let Some(d) = opts.max_delay {
        cfg.politeness.max_delay_s = d;
    }
    cfg.politeness.validate().map_err(usage)?;
    cfg.politeness
        .check_floor(opts.i_understand_politeness)
        .map_err(|e| usage(anyhow::Error::new(e).context("pass --i-understand-politeness to go lower")))?;
    Ok(cfg)
}

fn absolute(p: &Path) -> PathBuf {
    std::env::current_dir()
        .map(|d| d.join(p))
        .unwrap_or_else(|_| p.to_path_buf())
}

fn context(opts: &Opts, cfg: RunConfig, endpoint: Url, fixture: bool) -> Result<RunContext, Failure> {
    let fixture = fixture || opts.fixture;
    let proxy = opts.proxy.clone().or_else(|| fixture.then(|| endpoint.clone()));
    let clock: Arc<dyn Clock> = if fixture || opts.simulated_clock {
        Arc::new(SimulatedClock::new(SimulatedClock::default_epoch()))
    } else {
        Arc::new(SystemClock)
    };
    Ok(RunContext::new(cfg, &opts.out, endpoint, proxy, clock)?)
}

fn require_endpoint(opts: &Opts) -> Result<Url, Failure> {
    opts.endpoint
        .clone()
        .ok_or_else(|| usage(anyhow::anyhow!("--endpoint (or NEWSHARVEST_ENDPOINT) is required")))
}

/// Endpoint for stages that make no aggregator requests.
fn endpoint_or_placeholder(opts: &Opts) -> Url {
    opts.endpoint
        .clone()
        .unwrap_or_else(|| Url::parse("http://127.0.0.1/").expect("static url"))
}

fn load_corpus(path: Option<&Path>) -> Result<FixtureCorpus, Failure> {
    match path {
        Some(p) => FixtureCorpus::load(p).map_err(usage),
        None => Ok(FixtureCorpus::default_corpus()),
    }
}

fn model(cfg: &RunConfig) -> Result<Option<Box<dyn CompletionModel>>, Failure> {
    Ok(pipeline::build_model(&cfg.llm)?.map(|m| Box::new(m) as Box<dyn CompletionModel>))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let opts = &cli.opts;
    if let Cmd::Simnews {
        cmd: SimnewsCmd::Serve { bind, corpus },
    } = &cli.cmd
    {
        let server = simnews::serve(load_corpus(corpus.as_deref())?, bind).map_err(usage)?;
        println!("serving on {}", server.endpoint());
        println!("model at {}", server.model_url());
        loop {
            std::thread::park();
        }
    }

    let cfg = load_config(opts)?;
    match &cli.cmd {
        Cmd::Plan => {
            let mut ctx = context(opts, cfg, endpoint_or_placeholder(opts), false)?;
            let plan = pipeline::plan(&mut ctx)?;
            for (stage, n) in &ctx.manifest().query_counts {
                println!("{stage} {n}");
            }
            println!("total {}", plan.len());
        }
        Cmd::Harvest => {
            let mut ctx = context(opts, cfg, require_endpoint(opts)?, false)?;
            let plan = pipeline::load_or_build_plan(&mut ctx)?;
            let (_, report) = pipeline::harvest(&mut ctx, &plan)?;
            println!(
                "queries {} failed {} results {} unresolved {}",
                report.queries,
                report.failed_queries.len(),
                report.results,
                report.unresolved.len()
            );
        }
        Cmd::Dedup => {
            let mut ctx = context(opts, cfg, endpoint_or_placeholder(opts), false)?;
            let plan = pipeline::load_or_build_plan(&mut ctx)?;
            let raw = pipeline::load_raw_results(&ctx.path(artifacts::RAW_RESULTS))?;
            let out = pipeline::dedup(&mut ctx, &plan, &raw)?;
            println!("input {} unique {}", raw.len(), out.dataset.len());
        }
        Cmd::Extract => {
            let mut ctx = context(opts, cfg, endpoint_or_placeholder(opts), false)?;
            let ds = pipeline::load_dataset(&ctx.path(artifacts::DEDUPED), "harvest")?;
            let (_, r) = pipeline::extract(&mut ctx, ds)?;
            println!(
                "records {} ok {} non_html {} paywalled {} no_content {} fetch_failed {} backfilled {}",
                r.records, r.ok, r.non_html, r.paywalled, r.no_content, r.fetch_failed, r.backfilled
            );
        }
        Cmd::Annotate => {
            let model = model(&cfg)?;
            let mut ctx = context(opts, cfg, endpoint_or_placeholder(opts), false)?;
            let ds = pipeline::load_dataset(&ctx.path(artifacts::EXTRACTED), "harvest")?;
            let (_, r) = pipeline::annotate(&mut ctx, ds, model.as_deref())?;
            println!("placeholder groups {}", r.hallucinations.len());
            if let Some(a) = &r.annotation {
                println!("annotated {}", a.annotated);
            }
        }
        Cmd::Validate { input } => {
            let mut ctx = context(opts, cfg, endpoint_or_placeholder(opts), false)?;
            let path = input.clone().unwrap_or_else(|| ctx.path(artifacts::ANNOTATED));
            let ds = pipeline::load_dataset(&path, "harvest")?;
            let (_, report) = pipeline::validate(&mut ctx, &ds)?;
            print!("{}", report.summary());
        }
        Cmd::Enrich { input } => {
            let mut ctx = context(opts, cfg, endpoint_or_placeholder(opts), false)?;
            let path = input.clone().unwrap_or_else(|| ctx.path(artifacts::VALIDATED));
            let ds = pipeline::load_dataset(&path, "harvest")?;
            let rows = pipeline::enrich(&mut ctx, &ds)?;
            println!("enriched {}", rows.len());
        }
        Cmd::Analyze => {
            let mut ctx = context(opts, cfg, endpoint_or_placeholder(opts), false)?;
            let events = pipeline::load_events(&ctx.path(artifacts::STAGE_EVENTS))?;
            let ds = pipeline::load_dataset(&ctx.path(artifacts::VALIDATED), "harvest")?;
            let rows = pipeline::compute_enrichments(&ctx.config, &ds)?;
            let analysis = pipeline::analyze(&mut ctx, &events, ds.len(), &rows)?;
            print!("{}", analysis.summary());
        }
        Cmd::Export => {
            let mut ctx = context(opts, cfg, endpoint_or_placeholder(opts), false)?;
            let ds = pipeline::load_dataset(&ctx.path(artifacts::VALIDATED), "harvest")?;
            let path = pipeline::export(&mut ctx, &ds)?;
            println!("{} records -> {}", ds.len(), path.display());
        }
        Cmd::E2e { corpus } => {
            let mut server: Option<ServerHandle> = None;
            let endpoint = match &opts.endpoint {
                Some(u) => u.clone(),
                None => {
                    let s = simnews::serve(load_corpus(corpus.as_deref())?, "127.0.0.1:0")
                        .context("starting fixture server")
                        .map_err(usage)?;
                    let u = s.endpoint();
                    server = Some(s);
                    u
                }
            };
            let model = model(&cfg)?;
            let mut ctx = context(opts, cfg, endpoint, server.is_some())?;
            let (summary, analysis) = pipeline::run_all(&mut ctx, model.as_deref())?;
            print!("{}", summary.render());
            print!("{}", analysis.summary());
            drop(server);
        }
        Cmd::Simnews { .. } => unreachable!("handled above"),
    }
    Ok(())
}
