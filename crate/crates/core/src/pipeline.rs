//! Stage orchestration: each stage reads its inputs, writes its artifacts
//! into the output directory and records them in the run manifest.
//!
//! Stages can run one at a time (each reloading the previous stage's
//! artifact) or back to back through [`run_all`]. With a simulated clock
//! and a fixture endpoint, every artifact except the manifest is a pure
//! function of the configuration and the corpus.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

use crate::analyze::{
    build_stage_ledger, coverage_breakdown, grouped_distributions, top_countries, write_coverage_csv,
    write_distributions_csv, CoverageCell, DistributionStats, StageEvent, StageLedger, UNKNOWN_COUNTRY,
};
use crate::config::{ConfigError, LlmConfig, RunConfig};
use crate::dedup::{write_decisions, Canonicalizer, DedupDecision, Deduplicator};
use crate::enrich::{
    enrich_records, registrable_domain, typology_counts, write_enrichment_csv, Enrichment, SmrSnapshot, TypologyRules,
    SAMPLE_SNAPSHOT_KEY,
};
use crate::extract::{apply_content, backfill_content, edition_language, mark_fetch_failure, process_page};
use crate::harvest::{
    execute_query, resolve_and_fetch, Clock, FetchedPage, Fetcher, ListingParser, PoliteScheduler, RawResult,
    SimpleListingParser,
};
use crate::llmmeta::{
    annotate_records, detect_hallucination, AnnotationReport, CompletionModel, HallucinationFlag, HttpModel,
};
use crate::plan::{Provenance, QueryPlan, Stage};
use crate::store::{
    format_timestamp, read_delimited, write_delimited, ColumnMapping, ContentStatus, Dataset, DatasetOrigin,
    ExtractionMethod, NewsRecord, QualityFlag,
};
use crate::text;
use crate::validate::{run_validation, NoiseReport, ValidationConfig};

/// File names inside the output directory.
pub mod artifacts {
    pub const PLAN_TXT: &str = "plan.txt";
    pub const PLAN_JSON: &str = "plan.json";
    pub const RAW_RESULTS: &str = "raw_results.jsonl";
    pub const HARVEST_REPORT: &str = "harvest_report.json";
    pub const DEDUPED: &str = "records_dedup.csv";
    pub const DECISIONS: &str = "dedup_decisions.csv";
    pub const STAGE_EVENTS: &str = "stage_events.json";
    pub const EXTRACTED: &str = "records_extracted.csv";
    pub const EXTRACT_REPORT: &str = "extract_report.json";
    pub const ANNOTATED: &str = "records_annotated.csv";
    pub const ANNOTATE_REPORT: &str = "annotate_report.json";
    pub const VALIDATED: &str = "records_validated.csv";
    pub const NOISE_REPORT: &str = "noise_report.csv";
    pub const NOISE_RECORDS: &str = "noise_records.csv";
    pub const ENRICHMENT: &str = "enrichment.csv";
    pub const LEDGER: &str = "ledger.csv";
    pub const COVERAGE: &str = "coverage.csv";
    pub const DISTRIBUTIONS: &str = "distributions.csv";
    pub const DATASET: &str = "dataset.csv";
    pub const MANIFEST: &str = "manifest.json";
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

fn fail<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

impl PipelineError {
    /// Name of the failing stage, if any.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            PipelineError::Stage { stage, .. } => Some(stage),
            PipelineError::Config(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub name: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub outputs: Vec<OutputEntry>,
    #[serde(default)]
    pub counts: BTreeMap<String, usize>,
}

/// What was run, with which configuration, producing which files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_digest: String,
    pub seed: u64,
    pub topic: String,
    pub endpoint: String,
    /// Planned queries per stage.
    pub query_counts: BTreeMap<String, usize>,
    pub stages: Vec<StageEntry>,
}

impl RunManifest {
    pub fn new(config: &RunConfig, endpoint: &Url) -> Result<Self, ConfigError> {
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: config.digest()?,
            seed: config.seed,
            topic: config.topic.clone(),
            endpoint: endpoint.to_string(),
            query_counts: BTreeMap::new(),
            stages: Vec::new(),
        })
    }

    pub fn load(path: &Path) -> Option<Self> {
        let s = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&s).ok()
    }

    /// Adds a stage entry, replacing an earlier run of the same stage.
    pub fn record(&mut self, entry: StageEntry) {
        match self.stages.iter_mut().find(|s| s.name == entry.name) {
            Some(slot) => *slot = entry,
            None => self.stages.push(entry),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageEntry> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Output path -> sha256 over every recorded stage.
    pub fn output_digests(&self) -> BTreeMap<String, String> {
        self.stages
            .iter()
            .flat_map(|s| s.outputs.iter().map(|o| (o.path.clone(), o.sha256.clone())))
            .collect()
    }
}

/// Shared state for one pipeline run.
pub struct RunContext {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub endpoint: Url,
    fetcher: Fetcher,
    parser: Box<dyn ListingParser>,
    canonicalizer: Canonicalizer,
    /// Final page per publisher url, filled during redirect resolution.
    pages: HashMap<String, FetchedPage>,
    /// Listing url -> publisher url.
    resolved: HashMap<String, Url>,
    manifest: RunManifest,
}

impl RunContext {
    /// `proxy` receives all plain-http traffic; pass the fixture endpoint
    /// to route publisher requests to it.
    pub fn new(
        config: RunConfig,
        out_dir: impl Into<PathBuf>,
        endpoint: Url,
        proxy: Option<Url>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, PipelineError> {
        let out_dir = out_dir.into();
        std::fs::create_dir_all(&out_dir).map_err(fail("setup"))?;
        let scheduler = PoliteScheduler::new(config.politeness.clone(), clock, config.seed).map_err(fail("setup"))?;
        let fetcher = Fetcher::new(Arc::new(scheduler), proxy.as_ref()).map_err(fail("setup"))?;
        let fresh = RunManifest::new(&config, &endpoint)?;
        // keep earlier stage entries only if they came from the same configuration
        let manifest = match RunManifest::load(&out_dir.join(artifacts::MANIFEST)) {
            Some(m) if m.config_digest == fresh.config_digest && m.seed == fresh.seed => RunManifest {
                endpoint: fresh.endpoint.clone(),
                ..m
            },
            _ => fresh,
        };
        Ok(RunContext {
            config,
            out_dir,
            endpoint,
            fetcher,
            parser: Box::new(SimpleListingParser),
            canonicalizer: Canonicalizer::default(),
            pages: HashMap::new(),
            resolved: HashMap::new(),
            manifest,
        })
    }

    pub fn with_parser(mut self, parser: Box<dyn ListingParser>) -> Self {
        self.parser = parser;
        self
    }

    pub fn fetcher(&self) -> &Fetcher {
        &self.fetcher
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn now(&self) -> DateTime<Utc> {
        self.fetcher.now()
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<OutputEntry, PipelineError> {
        std::fs::write(self.path(name), bytes).map_err(fail("write"))?;
        Ok(OutputEntry {
            path: name.to_string(),
            sha256: text::sha256_hex(bytes),
            bytes: bytes.len() as u64,
        })
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<OutputEntry, PipelineError> {
        let mut s = serde_json::to_string_pretty(value).map_err(fail("write"))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn write_dataset(&self, name: &str, ds: &Dataset) -> Result<OutputEntry, PipelineError> {
        let mut buf = Vec::new();
        write_delimited(ds, &mut buf).map_err(fail("write"))?;
        self.write(name, &buf)
    }

    fn finish(
        &mut self,
        name: &str,
        started_at: DateTime<Utc>,
        outputs: Vec<OutputEntry>,
        counts: BTreeMap<String, usize>,
    ) -> Result<(), PipelineError> {
        self.manifest.record(StageEntry {
            name: name.to_string(),
            started_at,
            finished_at: self.now(),
            outputs,
            counts,
        });
        self.save_manifest()
    }

    fn save_manifest(&self) -> Result<(), PipelineError> {
        let mut s = serde_json::to_string_pretty(&self.manifest).map_err(fail("write"))?;
        s.push('\n');
        std::fs::write(self.path(artifacts::MANIFEST), s).map_err(fail("write"))
    }

    /// Follows redirects once per listing url and remembers the final page.
    fn resolve(&mut self, url: &Url) -> Result<Url, String> {
        if let Some(u) = self.resolved.get(url.as_str()) {
            return Ok(u.clone());
        }
        let (final_url, page) = resolve_and_fetch(url, &self.fetcher).map_err(|e| e.to_string())?;
        let clean = self.canonicalizer.strip_tracking(&final_url);
        self.pages.insert(
            clean.to_string(),
            FetchedPage {
                url: clean.clone(),
                ..page
            },
        );
        self.resolved.insert(url.to_string(), clean.clone());
        Ok(clean)
    }
}

fn counts<const N: usize>(pairs: [(&str, usize); N]) -> BTreeMap<String, usize> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn plan(ctx: &mut RunContext) -> Result<QueryPlan, PipelineError> {
    let started = ctx.now();
    let mut plan = ctx.config.build_plan()?;
    plan.provenance = Some(Provenance {
        config_digest: ctx.manifest.config_digest.clone(),
        created_at: started,
    });
    ctx.manifest.query_counts = Stage::ALL
        .iter()
        .map(|s| (s.as_str().to_string(), plan.count_for(*s)))
        .filter(|(_, n)| *n > 0)
        .collect();
    let outputs = vec![
        ctx.write(artifacts::PLAN_TXT, plan.render_lines().as_bytes())?,
        ctx.write_json(artifacts::PLAN_JSON, &plan)?,
    ];
    ctx.finish("plan", started, outputs, counts([("queries", plan.len())]))?;
    Ok(plan)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryFailure {
    pub edition: String,
    pub query: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HarvestReport {
    pub queries: usize,
    pub results: usize,
    pub failed_queries: Vec<QueryFailure>,
    /// `edition query` pairs that hit the result cap.
    pub saturated: Vec<String>,
    /// Listing urls whose redirect chain could not be resolved.
    pub unresolved: Vec<(String, String)>,
}

/// Runs every query, then resolves each listing link to its publisher url.
pub fn harvest(ctx: &mut RunContext, plan: &QueryPlan) -> Result<(Vec<RawResult>, HarvestReport), PipelineError> {
    let started = ctx.now();
    let mut report = HarvestReport {
        queries: plan.len(),
        ..Default::default()
    };
    let mut results = Vec::new();
    for q in plan.queries() {
        match execute_query(q, &ctx.fetcher, &ctx.endpoint, ctx.parser.as_ref()) {
            Ok(outcome) => {
                if outcome.saturated {
                    report
                        .saturated
                        .push(format!("{} {}", q.edition.edition_id, q.render()));
                }
                results.extend(outcome.results);
            }
            Err(e) => {
                tracing::error!(query = %q.render(), edition = %q.edition.edition_id, error = %e, "query failed");
                report.failed_queries.push(QueryFailure {
                    edition: q.edition.edition_id.clone(),
                    query: q.render(),
                    error: e.to_string(),
                });
            }
        }
    }
    if !plan.is_empty() && report.failed_queries.len() == plan.len() {
        return Err(PipelineError::Stage {
            stage: "harvest",
            message: format!(
                "all {} queries failed; first error: {}",
                plan.len(),
                report.failed_queries[0].error
            ),
        });
    }
    for r in results.iter_mut() {
        match ctx.resolve(&r.result_url) {
            Ok(u) => r.publisher_url = Some(u),
            Err(e) => {
                tracing::warn!(url = %r.result_url, error = %e, "redirect not resolved");
                report.unresolved.push((r.result_url.to_string(), e));
            }
        }
    }
    report.results = results.len();

    let mut lines = String::new();
    for r in &results {
        lines.push_str(&serde_json::to_string(r).map_err(fail("harvest"))?);
        lines.push('\n');
    }
    let outputs = vec![
        ctx.write(artifacts::RAW_RESULTS, lines.as_bytes())?,
        ctx.write_json(artifacts::HARVEST_REPORT, &report)?,
    ];
    ctx.finish(
        "harvest",
        started,
        outputs,
        counts([
            ("queries", report.queries),
            ("failed_queries", report.failed_queries.len()),
            ("results", report.results),
            ("saturated", report.saturated.len()),
            ("unresolved", report.unresolved.len()),
        ]),
    )?;
    Ok((results, report))
}

/// The plan written by the plan stage, or a fresh one if there is none.
pub fn load_or_build_plan(ctx: &mut RunContext) -> Result<QueryPlan, PipelineError> {
    match std::fs::read_to_string(ctx.path(artifacts::PLAN_JSON)) {
        Ok(s) => serde_json::from_str(&s).map_err(fail("load")),
        Err(_) => plan(ctx),
    }
}

pub fn load_raw_results(path: &Path) -> Result<Vec<RawResult>, PipelineError> {
    let s = std::fs::read_to_string(path).map_err(|e| PipelineError::Stage {
        stage: "load",
        message: format!("{}: {e}", path.display()),
    })?;
    s.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Stage {
                stage: "load",
                message: format!("{} line {}: {e}", path.display(), i + 1),
            })
        })
        .collect()
}

/// Listing hit as a dataset row.
pub fn record_from_result(r: &RawResult) -> NewsRecord {
    let mut rec = NewsRecord::new(r.id.clone(), r.headline.clone());
    let url = r.effective_url().clone();
    rec.source_domain = url
        .host_str()
        .map(|h| registrable_domain(h).unwrap_or_else(|| h.to_string()))
        .unwrap_or_default();
    rec.source_url = Some(url);
    rec.outlet_name = r.outlet_label.clone();
    rec.published_at = r.published_at;
    if r.published_approximate {
        rec.flag(QualityFlag::DateApproximate);
    }
    rec.collected_at = Some(r.collected_at);
    rec.stage = Some(r.stage);
    rec.edition_id = Some(r.edition_id.clone());
    rec
}

#[derive(Debug, Clone)]
pub struct DedupStage {
    pub dataset: Dataset,
    pub decisions: Vec<DedupDecision>,
    /// One event per planned query, in plan order.
    pub events: Vec<StageEvent>,
}

/// Merges all hits at once and credits each unique item to the query that
/// first returned it.
pub fn dedup(ctx: &mut RunContext, plan: &QueryPlan, results: &[RawResult]) -> Result<DedupStage, PipelineError> {
    let started = ctx.now();
    let dd = Deduplicator::new(ctx.config.dedup_threshold).map_err(fail("dedup"))?;
    let outcome = dd.merge(results);

    let mut retrieved: HashMap<&str, usize> = HashMap::new();
    for r in results {
        *retrieved.entry(r.query_digest.as_str()).or_default() += 1;
    }
    let mut first_seen: HashMap<&str, usize> = HashMap::new();
    for g in &outcome.groups {
        let first = *g.iter().min().expect("groups are non-empty");
        *first_seen.entry(results[first].query_digest.as_str()).or_default() += 1;
    }
    let events: Vec<StageEvent> = plan
        .queries()
        .iter()
        .map(|q| {
            let d = q.digest();
            StageEvent::new(
                q.stage(),
                format!("{} {}", q.edition.edition_id, q.render()),
                retrieved.get(d.as_str()).copied().unwrap_or(0),
                first_seen.get(d.as_str()).copied().unwrap_or(0),
            )
        })
        .collect();
    build_stage_ledger(&events).map_err(fail("dedup"))?;

    let records: Vec<NewsRecord> = outcome.unique.iter().map(record_from_result).collect();
    let dataset = Dataset::from_records("harvest", DatasetOrigin::Aggregator, records).map_err(fail("dedup"))?;
    let mut decisions_csv = Vec::new();
    write_decisions(&outcome.decisions, &mut decisions_csv).map_err(fail("dedup"))?;
    let outputs = vec![
        ctx.write_dataset(artifacts::DEDUPED, &dataset)?,
        ctx.write(artifacts::DECISIONS, &decisions_csv)?,
        ctx.write_json(artifacts::STAGE_EVENTS, &events)?,
    ];
    ctx.finish(
        "dedup",
        started,
        outputs,
        counts([
            ("input", results.len()),
            ("unique", dataset.len()),
            ("dropped", outcome.dropped_count()),
        ]),
    )?;
    Ok(DedupStage {
        dataset,
        decisions: outcome.decisions,
        events,
    })
}

pub fn load_events(path: &Path) -> Result<Vec<StageEvent>, PipelineError> {
    let s = std::fs::read_to_string(path).map_err(fail("load"))?;
    serde_json::from_str(&s).map_err(fail("load"))
}

/// Reads a dataset written by an earlier stage; any quarantined row is an error.
pub fn load_dataset(path: &Path, name: &str) -> Result<Dataset, PipelineError> {
    let f = std::fs::File::open(path).map_err(|e| PipelineError::Stage {
        stage: "load",
        message: format!("{}: {e}", path.display()),
    })?;
    let out = read_delimited(
        std::io::BufReader::new(f),
        name,
        &ColumnMapping::canonical(),
        DatasetOrigin::Aggregator,
    )
    .map_err(fail("load"))?;
    if let Some(q) = out.quarantined.first() {
        return Err(PipelineError::Stage {
            stage: "load",
            message: format!("{} line {}: {}", path.display(), q.line, q.reason),
        });
    }
    Ok(out.dataset)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractReport {
    pub records: usize,
    pub ok: usize,
    pub no_content: usize,
    pub paywalled: usize,
    pub non_html: usize,
    pub fetch_failed: usize,
    pub backfilled: usize,
}

/// Fetches (or reuses) each publisher page, extracts its text, then gives
/// records whose fetch failed one backfill attempt.
pub fn extract(ctx: &mut RunContext, dataset: Dataset) -> Result<(Dataset, ExtractReport), PipelineError> {
    let started = ctx.now();
    let mut ds = dataset;
    let mut records = std::mem::take(&mut ds).into_records();
    for rec in records.iter_mut() {
        let Some(url) = rec.source_url.clone() else { continue };
        let fallback = rec.edition_id.as_deref().and_then(edition_language).map(str::to_string);
        let page = match ctx.pages.get(url.as_str()) {
            Some(p) => Ok(p.clone()),
            None => resolve_and_fetch(&url, &ctx.fetcher).map(|(_, p)| p),
        };
        match page {
            Ok(page) => apply_content(
                rec,
                &process_page(&page, fallback.as_deref()),
                ExtractionMethod::DirectFetch,
            ),
            Err(e) => {
                tracing::warn!(id = %rec.id, %url, error = %e, "fetch failed");
                mark_fetch_failure(rec);
            }
        }
    }
    let (failed, fine): (Vec<_>, Vec<_>) = records
        .into_iter()
        .enumerate()
        .partition(|(_, r)| r.has_flag(&QualityFlag::FetchFailed));
    let (failed_idx, failed): (Vec<usize>, Vec<NewsRecord>) = failed.into_iter().unzip();
    let (refilled, backfill) = backfill_content(failed, &ctx.fetcher);
    let mut merged: Vec<(usize, NewsRecord)> = fine.into_iter().chain(failed_idx.into_iter().zip(refilled)).collect();
    merged.sort_by_key(|(i, _)| *i);
    let records: Vec<NewsRecord> = merged.into_iter().map(|(_, r)| r).collect();

    let mut report = ExtractReport {
        records: records.len(),
        backfilled: backfill.filled(),
        ..Default::default()
    };
    for r in &records {
        match r.content_status() {
            ContentStatus::Ok => report.ok += 1,
            ContentStatus::NonHtml => report.non_html += 1,
            ContentStatus::Paywalled => report.paywalled += 1,
            _ if r.has_flag(&QualityFlag::FetchFailed) => report.fetch_failed += 1,
            _ => report.no_content += 1,
        }
    }
    let out =
        Dataset::from_records(ds_name(&ds, "extract"), DatasetOrigin::Aggregator, records).map_err(fail("extract"))?;
    let outputs = vec![
        ctx.write_dataset(artifacts::EXTRACTED, &out)?,
        ctx.write_json(artifacts::EXTRACT_REPORT, &report)?,
    ];
    ctx.finish(
        "extract",
        started,
        outputs,
        counts([
            ("records", report.records),
            ("ok", report.ok),
            ("non_html", report.non_html),
            ("no_content", report.no_content),
            ("paywalled", report.paywalled),
            ("fetch_failed", report.fetch_failed),
            ("backfilled", report.backfilled),
        ]),
    )?;
    Ok((out, report))
}

fn ds_name(ds: &Dataset, fallback: &str) -> String {
    if ds.name.is_empty() {
        fallback.to_string()
    } else {
        ds.name.clone()
    }
}

impl Default for Dataset {
    fn default() -> Self {
        Dataset::new("", DatasetOrigin::Aggregator)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AnnotateReport {
    pub hallucinations: Vec<HallucinationFlag>,
    /// Absent when no model is configured.
    pub annotation: Option<AnnotationReport>,
}

pub fn build_model(cfg: &LlmConfig) -> Result<Option<HttpModel>, PipelineError> {
    match &cfg.url {
        Some(url) => HttpModel::new(url.clone(), cfg.model.clone(), Duration::from_secs(cfg.timeout_s))
            .map(Some)
            .map_err(fail("annotate")),
        None => Ok(None),
    }
}

/// Placeholder detection, then metadata from the model when one is given.
pub fn annotate(
    ctx: &mut RunContext,
    dataset: Dataset,
    model: Option<&dyn CompletionModel>,
) -> Result<(Dataset, AnnotateReport), PipelineError> {
    let started = ctx.now();
    let name = ds_name(&dataset, "annotate");
    let mut records = dataset.into_records();
    let h = &ctx.config.hallucination;
    let hallucinations = detect_hallucination(&mut records, h.min_group, h.min_len).map_err(fail("annotate"))?;
    let annotation = model.map(|m| annotate_records(&mut records, m));
    let report = AnnotateReport {
        hallucinations,
        annotation,
    };
    let out = Dataset::from_records(name, DatasetOrigin::Aggregator, records).map_err(fail("annotate"))?;
    let outputs = vec![
        ctx.write_dataset(artifacts::ANNOTATED, &out)?,
        ctx.write_json(artifacts::ANNOTATE_REPORT, &report)?,
    ];
    let flagged = report.hallucinations.iter().map(|f| f.member_ids.len()).sum();
    let annotated = report.annotation.as_ref().map_or(0, |a| a.annotated);
    ctx.finish(
        "annotate",
        started,
        outputs,
        counts([
            ("hallucination_groups", report.hallucinations.len()),
            ("hallucination_records", flagged),
            ("annotated", annotated),
        ]),
    )?;
    Ok((out, report))
}

pub fn validation_config(cfg: &RunConfig) -> ValidationConfig {
    ValidationConfig::for_topic(&cfg.topic).with_alternates(cfg.alternates.iter().cloned())
}

pub fn validate(ctx: &mut RunContext, dataset: &Dataset) -> Result<(Dataset, NoiseReport), PipelineError> {
    let started = ctx.now();
    let (clean, report) = run_validation(dataset, &validation_config(&ctx.config));
    if !report.accounting_holds() {
        return Err(PipelineError::Stage {
            stage: "validate",
            message: "noise report does not add up".into(),
        });
    }
    let mut report_csv = Vec::new();
    report.write_csv(&mut report_csv).map_err(fail("validate"))?;
    let mut dropped_csv = Vec::new();
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(&mut dropped_csv);
        w.write_record(["id", "reason"]).map_err(fail("validate"))?;
        for (id, reason) in &report.dropped {
            w.write_record([id, reason]).map_err(fail("validate"))?;
        }
        w.flush().map_err(fail("validate"))?;
    }
    let outputs = vec![
        ctx.write_dataset(artifacts::VALIDATED, &clean)?,
        ctx.write(artifacts::NOISE_REPORT, &report_csv)?,
        ctx.write(artifacts::NOISE_RECORDS, &dropped_csv)?,
    ];
    ctx.finish(
        "validate",
        started,
        outputs,
        counts([
            ("pre", report.pre_count),
            ("post", report.post_count),
            ("dropped", report.dropped_total()),
        ]),
    )?;
    Ok((clean, report))
}

fn load_snapshot(cfg: &RunConfig) -> Result<SmrSnapshot, PipelineError> {
    match &cfg.enrich.snapshot {
        Some(p) if p == Path::new(SAMPLE_SNAPSHOT_KEY) => Ok(SmrSnapshot::sample()),
        Some(p) => SmrSnapshot::load(&cfg.resolve_path(p)).map_err(fail("enrich")),
        None => Ok(SmrSnapshot::default()),
    }
}

fn load_rules(cfg: &RunConfig) -> Result<TypologyRules, PipelineError> {
    match &cfg.enrich.rules {
        Some(p) => TypologyRules::load(&cfg.resolve_path(p)).map_err(fail("enrich")),
        None => Ok(TypologyRules::bundled()),
    }
}

/// Enrichment rows without writing anything.
pub fn compute_enrichments(cfg: &RunConfig, dataset: &Dataset) -> Result<Vec<Enrichment>, PipelineError> {
    Ok(enrich_records(
        dataset.records(),
        &load_snapshot(cfg)?,
        &load_rules(cfg)?,
    ))
}

pub fn enrich(ctx: &mut RunContext, dataset: &Dataset) -> Result<Vec<Enrichment>, PipelineError> {
    let started = ctx.now();
    let rows = compute_enrichments(&ctx.config, dataset)?;
    let mut buf = Vec::new();
    write_enrichment_csv(&rows, &mut buf).map_err(fail("enrich"))?;
    let outputs = vec![ctx.write(artifacts::ENRICHMENT, &buf)?];
    let mut c: BTreeMap<String, usize> = typology_counts(&rows)
        .into_iter()
        .map(|(k, v)| (k.as_str().to_string(), v))
        .collect();
    c.insert("records".into(), rows.len());
    ctx.finish("enrich", started, outputs, c)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub ledger: StageLedger,
    pub coverage: BTreeMap<String, CoverageCell>,
    pub distributions: BTreeMap<String, DistributionStats>,
    pub top_foreign: Vec<(String, usize)>,
}

impl Analysis {
    pub fn summary(&self) -> String {
        let mut s = self.ledger.summary();
        s.push_str("coverage by country (smr / non-smr)\n");
        for (k, c) in &self.coverage {
            s.push_str(&format!("  {k:<8} {:>5} / {:<5}\n", c.smr, c.non_smr));
        }
        s
    }
}

/// Stage ledger, coverage by country and score distributions split into
/// national and international outlets.
pub fn analyze(
    ctx: &mut RunContext,
    events: &[StageEvent],
    post_filter: usize,
    enrichments: &[Enrichment],
) -> Result<Analysis, PipelineError> {
    let started = ctx.now();
    let mut ledger = build_stage_ledger(events).map_err(fail("analyze"))?;
    ledger.finalize(post_filter);
    let coverage = coverage_breakdown(enrichments);
    let home = ctx.config.enrich.home_country.as_deref().map(str::to_uppercase);
    let scope = |e: &Enrichment| match (&home, &e.country) {
        (Some(h), Some(c)) if h == c => "national",
        (Some(_), Some(_)) => "international",
        _ => "unscoped",
    };
    let distributions = grouped_distributions(enrichments.iter().flat_map(|e| {
        let overall = e.overall.map(|v| (format!("overall:{}", scope(e)), v));
        let dri = e.dri.map(|v| (format!("dri:{}", scope(e)), v));
        overall.into_iter().chain(dri)
    }))
    .map_err(fail("analyze"))?;
    let mut exclude: Vec<&str> = vec![UNKNOWN_COUNTRY];
    if let Some(h) = home.as_deref() {
        exclude.push(h);
    }
    let top_foreign = top_countries(&coverage, 10, &exclude);

    let mut ledger_csv = Vec::new();
    ledger.write_csv(&mut ledger_csv).map_err(fail("analyze"))?;
    let mut coverage_csv = Vec::new();
    write_coverage_csv(&coverage, &mut coverage_csv).map_err(fail("analyze"))?;
    let mut dist_csv = Vec::new();
    write_distributions_csv(&distributions, &mut dist_csv).map_err(fail("analyze"))?;
    let outputs = vec![
        ctx.write(artifacts::LEDGER, &ledger_csv)?,
        ctx.write(artifacts::COVERAGE, &coverage_csv)?,
        ctx.write(artifacts::DISTRIBUTIONS, &dist_csv)?,
    ];
    ctx.finish(
        "analyze",
        started,
        outputs,
        counts([
            ("unique_pre_filter", ledger.total_unique()),
            ("post_filter", post_filter),
            ("countries", coverage.len()),
        ]),
    )?;
    Ok(Analysis {
        ledger,
        coverage,
        distributions,
        top_foreign,
    })
}

/// Writes the final dataset.
pub fn export(ctx: &mut RunContext, dataset: &Dataset) -> Result<PathBuf, PipelineError> {
    let started = ctx.now();
    let mut final_ds = dataset.clone();
    final_ds.name = "dataset".into();
    let outputs = vec![ctx.write_dataset(artifacts::DATASET, &final_ds)?];
    ctx.finish("export", started, outputs, counts([("records", final_ds.len())]))?;
    Ok(ctx.path(artifacts::DATASET))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub queries: usize,
    pub raw_results: usize,
    pub unique: usize,
    pub extract: ExtractReport,
    pub hallucination_groups: usize,
    pub noise: NoiseReport,
    pub final_records: usize,
    pub finished_at: String,
}

impl RunSummary {
    pub fn render(&self) -> String {
        format!(
            "queries {}\nraw results {}\nunique after dedup {}\ntext extracted {}\nplaceholder groups {}\n{}final records {}\n",
            self.queries,
            self.raw_results,
            self.unique,
            self.extract.ok,
            self.hallucination_groups,
            self.noise.summary(),
            self.final_records
        )
    }
}

/// Every stage, in order, in one process.
pub fn run_all(
    ctx: &mut RunContext,
    model: Option<&dyn CompletionModel>,
) -> Result<(RunSummary, Analysis), PipelineError> {
    let plan_ = plan(ctx)?;
    let (raw, _) = harvest(ctx, &plan_)?;
    let deduped = dedup(ctx, &plan_, &raw)?;
    let unique = deduped.dataset.len();
    let (extracted, extract_report) = extract(ctx, deduped.dataset)?;
    let (annotated, annotate_report) = annotate(ctx, extracted, model)?;
    let (clean, noise) = validate(ctx, &annotated)?;
    let enrichments = enrich(ctx, &clean)?;
    let analysis = analyze(ctx, &deduped.events, clean.len(), &enrichments)?;
    export(ctx, &clean)?;
    let summary = RunSummary {
        queries: plan_.len(),
        raw_results: raw.len(),
        unique,
        extract: extract_report,
        hallucination_groups: annotate_report.hallucinations.len(),
        final_records: clean.len(),
        noise,
        finished_at: format_timestamp(&ctx.now()),
    };
    Ok((summary, analysis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harvest::SimulatedClock;
    use crate::simnews::{serve, FixtureCorpus};

    #[test]
    fn fixture_run_keeps_exactly_the_valid_articles() {
        let corpus = FixtureCorpus::default_corpus();
        let server = serve(corpus.clone(), "127.0.0.1:0").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(SimulatedClock::new(SimulatedClock::default_epoch()));
        let mut ctx = RunContext::new(
            RunConfig::fixture(),
            dir.path(),
            server.endpoint(),
            Some(server.endpoint()),
            clock,
        )
        .unwrap();
        let (summary, analysis) = run_all(&mut ctx, None).unwrap();
        assert_eq!(summary.unique, 47, "{}", summary.render());
        let kept: std::collections::BTreeSet<String> = load_dataset(&ctx.path(artifacts::DATASET), "d")
            .unwrap()
            .records()
            .iter()
            .map(|r| r.source_url.as_ref().unwrap().to_string())
            .collect();
        let expected: std::collections::BTreeSet<String> = corpus.valid_articles().map(|a| a.url.to_string()).collect();
        assert_eq!(kept, expected, "{}", summary.render());
        assert!(summary.noise.accounting_holds());
        assert_eq!(analysis.ledger.total_unique(), 47);
    }
}
