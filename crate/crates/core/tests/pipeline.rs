use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use newsharvest::config::RunConfig;
use newsharvest::harvest::SimulatedClock;
use newsharvest::llmmeta::HttpModel;
use newsharvest::pipeline::{self, artifacts, PipelineError, RunContext};
use newsharvest::simnews::{serve, FixtureCorpus, Item, NoiseKind, ServerHandle};
use url::Url;

fn ctx(server: &ServerHandle, dir: &Path, cfg: RunConfig) -> RunContext {
    let clock = Arc::new(SimulatedClock::new(SimulatedClock::default_epoch()));
    RunContext::new(cfg, dir, server.endpoint(), Some(server.endpoint()), clock).unwrap()
}

fn expected_reason(item: &Item<'_>) -> Option<String> {
    match item {
        Item::Article(a) if a.contains_keyword => None,
        Item::Article(_) => Some("missing_keyword".into()),
        Item::Noise(n) => Some(match n.kind {
            NoiseKind::Homepage | NoiseKind::SectionIndex => "section_or_homepage".into(),
            NoiseKind::PlaceholderText => "placeholder_text".into(),
            NoiseKind::AdultSeo => "adult_seo".into(),
            k => format!("non_html:{}", k.as_str()),
        }),
    }
}

fn read_csv_pairs(path: &Path) -> Vec<(String, String)> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].to_string())
        })
        .collect()
}

#[test]
fn every_noise_item_is_dropped_for_its_own_reason() {
    let corpus = FixtureCorpus::default_corpus();
    let server = serve(corpus.clone(), "127.0.0.1:0").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut c = ctx(&server, dir.path(), RunConfig::fixture());
    let (summary, _) = pipeline::run_all(&mut c, None).unwrap();
    assert_eq!(summary.unique, corpus.valid_articles().count() + corpus.noise_count());
    assert_eq!(summary.final_records, 30);
    assert!(summary.noise.accounting_holds());

    let annotated = pipeline::load_dataset(&dir.path().join(artifacts::ANNOTATED), "a").unwrap();
    let url_of: BTreeMap<String, Url> = annotated
        .records()
        .iter()
        .map(|r| (r.id.clone(), r.source_url.clone().unwrap()))
        .collect();
    let dropped = read_csv_pairs(&dir.path().join(artifacts::NOISE_RECORDS));
    assert_eq!(dropped.len(), corpus.noise_count());
    for (id, reason) in dropped {
        let item = corpus.find(&url_of[&id]).expect("dropped record maps to a corpus item");
        assert_eq!(Some(reason), expected_reason(&item), "{}", item.id());
    }
}

#[test]
fn staged_runs_match_one_shot_run_and_are_repeatable() {
    let server = serve(FixtureCorpus::default_corpus(), "127.0.0.1:0").unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let staged = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        pipeline::run_all(&mut ctx(&server, dir, RunConfig::fixture()), None).unwrap();
    }

    // each stage in its own context, reloading the previous artifact
    let s = staged.path();
    let cfg = RunConfig::fixture;
    let plan = pipeline::plan(&mut ctx(&server, s, cfg())).unwrap();
    pipeline::harvest(&mut ctx(&server, s, cfg()), &plan).unwrap();
    let raw = pipeline::load_raw_results(&s.join(artifacts::RAW_RESULTS)).unwrap();
    pipeline::dedup(&mut ctx(&server, s, cfg()), &plan, &raw).unwrap();
    let ds = pipeline::load_dataset(&s.join(artifacts::DEDUPED), "harvest").unwrap();
    pipeline::extract(&mut ctx(&server, s, cfg()), ds).unwrap();
    let ds = pipeline::load_dataset(&s.join(artifacts::EXTRACTED), "harvest").unwrap();
    pipeline::annotate(&mut ctx(&server, s, cfg()), ds, None).unwrap();
    let ds = pipeline::load_dataset(&s.join(artifacts::ANNOTATED), "harvest").unwrap();
    let (clean, _) = pipeline::validate(&mut ctx(&server, s, cfg()), &ds).unwrap();
    let rows = pipeline::enrich(&mut ctx(&server, s, cfg()), &clean).unwrap();
    let events = pipeline::load_events(&s.join(artifacts::STAGE_EVENTS)).unwrap();
    pipeline::analyze(&mut ctx(&server, s, cfg()), &events, clean.len(), &rows).unwrap();
    pipeline::export(&mut ctx(&server, s, cfg()), &clean).unwrap();

    let digests = |d: &Path| {
        pipeline::RunManifest::load(&d.join(artifacts::MANIFEST))
            .unwrap()
            .output_digests()
    };
    let da = digests(a.path());
    assert_eq!(da.len(), 19);
    assert_eq!(da, digests(b.path()));
    assert_eq!(da, digests(s));
    for name in da.keys() {
        let bytes = std::fs::read(a.path().join(name)).unwrap();
        assert_eq!(bytes, std::fs::read(s.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn rerunning_a_stage_replaces_its_manifest_entry() {
    let server = serve(FixtureCorpus::default_corpus(), "127.0.0.1:0").unwrap();
    let dir = tempfile::tempdir().unwrap();
    pipeline::plan(&mut ctx(&server, dir.path(), RunConfig::fixture())).unwrap();
    pipeline::plan(&mut ctx(&server, dir.path(), RunConfig::fixture())).unwrap();
    let m = pipeline::RunManifest::load(&dir.path().join(artifacts::MANIFEST)).unwrap();
    assert_eq!(m.stages.len(), 1);
    assert_eq!(m.query_counts["s4_domains"], 8);
    assert_eq!(m.seed, 7);

    // a different configuration starts a fresh manifest
    let mut cfg = RunConfig::fixture();
    cfg.seed = 8;
    let mut c = ctx(&server, dir.path(), cfg);
    assert!(c.manifest().stages.is_empty());
    pipeline::plan(&mut c).unwrap();
}

#[test]
fn unreachable_endpoint_fails_the_harvest_stage() {
    let server = serve(FixtureCorpus::default_corpus(), "127.0.0.1:0").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::fixture();
    cfg.politeness.max_retries = 0;
    let mut c = ctx(&server, dir.path(), cfg.clone());
    let plan = pipeline::plan(&mut c).unwrap();
    drop(c);
    server.shutdown();
    let dead = Url::parse("http://127.0.0.1:9/").unwrap();
    let clock = Arc::new(SimulatedClock::new(SimulatedClock::default_epoch()));
    let mut c = RunContext::new(cfg, dir.path(), dead, None, clock).unwrap();
    match pipeline::harvest(&mut c, &plan) {
        Err(PipelineError::Stage { stage, .. }) => assert_eq!(stage, "harvest"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn model_annotations_do_not_change_the_kept_set() {
    let corpus = FixtureCorpus::default_corpus();
    let server = serve(corpus.clone(), "127.0.0.1:0").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let model = HttpModel::new(server.model_url(), "echo", std::time::Duration::from_secs(5)).unwrap();
    let mut c = ctx(&server, dir.path(), RunConfig::fixture());
    let (summary, _) = pipeline::run_all(&mut c, Some(&model)).unwrap();
    assert_eq!(summary.final_records, 30);
    let ds = pipeline::load_dataset(&dir.path().join(artifacts::DATASET), "d").unwrap();
    for r in ds.records() {
        let url = r.source_url.as_ref().unwrap();
        let Some(Item::Article(a)) = corpus.find(url) else {
            panic!("{url}")
        };
        // bylines are planted as "Por X" / "By X"
        let byline = a.planted_text.as_deref().unwrap().lines().next().unwrap();
        assert!(
            byline.ends_with(r.author.as_deref().unwrap()),
            "{} vs {:?}",
            byline,
            r.author
        );
    }
}
