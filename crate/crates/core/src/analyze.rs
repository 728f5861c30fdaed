//! Dataset analytics: stage accumulation, cross-source overlap, score
//! distributions and country coverage. All reports are plain data with
//! CSV writers; drawing is left to other tools.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dedup::{DedupError, Deduplicator, UnionFind, DEFAULT_THRESHOLD};
use crate::enrich::Enrichment;
use crate::plan::Stage;
use crate::store::Dataset;
use crate::validate::reduction_ratio;

#[derive(Debug, thiserror::Error)]
pub enum AnalyzeError {
    #[error("stage {got} follows {previous}; events must be ordered by stage")]
    Sequencing { previous: String, got: String },
    #[error("event {label:?}: unique_new {unique_new} exceeds retrieved {retrieved}")]
    UniqueExceedsRetrieved {
        label: String,
        retrieved: usize,
        unique_new: usize,
    },
    #[error("distribution of an empty score list")]
    EmptyScores,
    #[error("score {0} is not a finite number")]
    NonFinite(f64),
    #[error("overlap needs 2 or 3 datasets, got {0}")]
    DatasetCount(usize),
    #[error(transparent)]
    Dedup(#[from] DedupError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(out)
}

/// One dedup outcome: how many results a batch of queries returned and how
/// many of them were new to the collection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage: Stage,
    pub label: String,
    pub retrieved: usize,
    pub unique_new: usize,
}

impl StageEvent {
    pub fn new(stage: Stage, label: impl Into<String>, retrieved: usize, unique_new: usize) -> Self {
        StageEvent {
            stage,
            label: label.into(),
            retrieved,
            unique_new,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageRow {
    pub stage: Stage,
    pub label: String,
    pub retrieved: usize,
    pub unique_new: usize,
    pub cumulative_retrieved: usize,
    pub cumulative_unique: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinalCounts {
    pub pre_filter: usize,
    pub post_filter: usize,
    pub reduction_ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageLedger {
    pub rows: Vec<StageRow>,
    pub final_counts: Option<FinalCounts>,
}

impl StageLedger {
    pub fn total_retrieved(&self) -> usize {
        self.rows.last().map_or(0, |r| r.cumulative_retrieved)
    }

    pub fn total_unique(&self) -> usize {
        self.rows.last().map_or(0, |r| r.cumulative_unique)
    }

    /// Cumulative unique count once `stage` is complete.
    pub fn cumulative_after(&self, stage: Stage) -> Option<usize> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.stage == stage)
            .map(|r| r.cumulative_unique)
    }

    /// `(retrieved, unique_new)` summed per stage.
    pub fn per_stage(&self) -> Vec<(Stage, usize, usize)> {
        let mut out: Vec<(Stage, usize, usize)> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some((s, ret, new)) if *s == r.stage => {
                    *ret += r.retrieved;
                    *new += r.unique_new;
                }
                _ => out.push((r.stage, r.retrieved, r.unique_new)),
            }
        }
        out
    }

    /// Closes the ledger against the post-filter record count.
    pub fn finalize(&mut self, post_filter: usize) {
        let pre = self.total_unique();
        self.final_counts = Some(FinalCounts {
            pre_filter: pre,
            post_filter,
            reduction_ratio: reduction_ratio(pre, post_filter),
        });
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AnalyzeError> {
        let mut w = csv_writer(out);
        w.write_record([
            "stage",
            "label",
            "retrieved",
            "unique_new",
            "cumulative_retrieved",
            "cumulative_unique",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.stage.as_str().to_string(),
                r.label.clone(),
                r.retrieved.to_string(),
                r.unique_new.to_string(),
                r.cumulative_retrieved.to_string(),
                r.cumulative_unique.to_string(),
            ])?;
        }
        if let Some(f) = self.final_counts {
            w.write_record([
                "final".to_string(),
                format!("post_filter={} reduction_ratio={:.4}", f.post_filter, f.reduction_ratio),
                String::new(),
                String::new(),
                self.total_retrieved().to_string(),
                f.pre_filter.to_string(),
            ])?;
        }
        w.flush().map_err(|e| AnalyzeError::Csv(e.into()))?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::from("stage ledger\n");
        for (stage, ret, new) in self.per_stage() {
            let cum = self.cumulative_after(stage).unwrap_or(0);
            let _ = writeln!(
                s,
                "  {:<12} retrieved {ret:>6}  new {new:>6}  cumulative {cum:>6}",
                stage.as_str()
            );
        }
        if let Some(f) = self.final_counts {
            let _ = writeln!(
                s,
                "  filtered     {} -> {} ({:.1}% reduction)",
                f.pre_filter,
                f.post_filter,
                100.0 * f.reduction_ratio
            );
        }
        s
    }
}

/// Folds ordered events into running totals.
pub fn build_stage_ledger(events: &[StageEvent]) -> Result<StageLedger, AnalyzeError> {
    let mut ledger = StageLedger::default();
    let (mut cum_ret, mut cum_uni) = (0, 0);
    let mut previous: Option<Stage> = None;
    for e in events {
        if let Some(p) = previous {
            if e.stage < p {
                return Err(AnalyzeError::Sequencing {
                    previous: p.as_str().into(),
                    got: e.stage.as_str().into(),
                });
            }
        }
        if e.unique_new > e.retrieved {
            return Err(AnalyzeError::UniqueExceedsRetrieved {
                label: e.label.clone(),
                retrieved: e.retrieved,
                unique_new: e.unique_new,
            });
        }
        previous = Some(e.stage);
        cum_ret += e.retrieved;
        cum_uni += e.unique_new;
        ledger.rows.push(StageRow {
            stage: e.stage,
            label: e.label.clone(),
            retrieved: e.retrieved,
            unique_new: e.unique_new,
            cumulative_retrieved: cum_ret,
            cumulative_unique: cum_uni,
        });
    }
    Ok(ledger)
}

/// How records are linked across datasets.
#[derive(Debug, Clone)]
pub enum Linkage {
    /// Records with equal ids are the same item.
    ExactId,
    /// Canonical URL when both sides have one, else similar headline on the
    /// same date.
    Records(Deduplicator),
}

impl Default for Linkage {
    fn default() -> Self {
        Linkage::Records(Deduplicator::new(DEFAULT_THRESHOLD).expect("default threshold is valid"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceOverlap {
    pub name: String,
    pub total: usize,
    pub exclusive: usize,
    pub exclusive_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub sources: Vec<SourceOverlap>,
    /// Linked items per exact Venn region; the key lists member sources
    /// joined by `&`.
    pub regions: BTreeMap<String, usize>,
    pub pairwise: BTreeMap<String, usize>,
    pub triple: Option<usize>,
    /// Distinct linked items across all sources.
    pub union: usize,
    /// Linked items per source (a source's records may share one item).
    pub items_per_source: Vec<usize>,
}

fn mask_label(mask: u8, names: &[String]) -> String {
    names
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, n)| n.as_str())
        .collect::<Vec<_>>()
        .join("&")
}

impl OverlapReport {
    /// Σ|S| − Σ|S∩T| + |S∩T∩U| equals the union.
    pub fn inclusion_exclusion_holds(&self) -> bool {
        let singles: usize = self.items_per_source.iter().sum();
        let pairs: usize = self.pairwise.values().sum();
        let triple = self.triple.unwrap_or(0);
        singles + triple == self.union + pairs && self.regions.values().sum::<usize>() == self.union
    }

    pub fn source(&self, name: &str) -> Option<&SourceOverlap> {
        self.sources.iter().find(|s| s.name == name)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AnalyzeError> {
        let mut w = csv_writer(out);
        w.write_record(["kind", "key", "count", "pct"])?;
        for s in &self.sources {
            w.write_record(["source_total", &s.name, &s.total.to_string(), ""])?;
            w.write_record([
                "source_exclusive",
                &s.name,
                &s.exclusive.to_string(),
                &format!("{:.2}", s.exclusive_pct),
            ])?;
        }
        for (k, v) in &self.regions {
            w.write_record(["region", k, &v.to_string(), ""])?;
        }
        for (k, v) in &self.pairwise {
            w.write_record(["pairwise", k, &v.to_string(), ""])?;
        }
        if let Some(t) = self.triple {
            w.write_record(["triple", "all", &t.to_string(), ""])?;
        }
        w.write_record(["union", "all", &self.union.to_string(), ""])?;
        w.flush().map_err(|e| AnalyzeError::Csv(e.into()))?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::from("source overlap\n");
        for src in &self.sources {
            let _ = writeln!(
                s,
                "  {:<24} total {:>6}  exclusive {:>6} ({:.1}%)",
                src.name, src.total, src.exclusive, src.exclusive_pct
            );
        }
        let _ = writeln!(s, "  distinct items across sources: {}", self.union);
        s
    }
}

/// Cross-source exclusivity for two or three datasets.
pub fn overlap(datasets: &[Dataset], linkage: &Linkage) -> Result<OverlapReport, AnalyzeError> {
    if !(2..=3).contains(&datasets.len()) {
        return Err(AnalyzeError::DatasetCount(datasets.len()));
    }
    let names: Vec<String> = datasets.iter().map(|d| d.name.clone()).collect();
    let mut owner = Vec::new();
    let mut all = Vec::new();
    for (i, d) in datasets.iter().enumerate() {
        for r in d.records() {
            owner.push(i);
            all.push(r.clone());
        }
    }
    let groups = match linkage {
        Linkage::ExactId => {
            let mut uf = UnionFind::new(all.len());
            let mut first: HashMap<&str, usize> = HashMap::new();
            for (i, r) in all.iter().enumerate() {
                match first.get(r.id.as_str()) {
                    Some(&j) => uf.union(j, i),
                    None => {
                        first.insert(&r.id, i);
                    }
                }
            }
            uf.groups()
        }
        Linkage::Records(dd) => dd.partition(&all),
    };

    let mut regions: BTreeMap<String, usize> = BTreeMap::new();
    let mut record_mask = vec![0u8; all.len()];
    let mut items_per_source = vec![0usize; datasets.len()];
    let mut pairwise: BTreeMap<String, usize> = BTreeMap::new();
    for i in 0..datasets.len() {
        for j in i + 1..datasets.len() {
            pairwise.insert(format!("{}&{}", names[i], names[j]), 0);
        }
    }
    let mut triple = (datasets.len() == 3).then_some(0);
    for g in &groups {
        let mask = g.iter().fold(0u8, |m, &i| m | (1 << owner[i]));
        for &i in g {
            record_mask[i] = mask;
        }
        *regions.entry(mask_label(mask, &names)).or_default() += 1;
        for (s, n) in items_per_source.iter_mut().enumerate() {
            *n += usize::from(mask & (1 << s) != 0);
        }
        for i in 0..datasets.len() {
            for j in i + 1..datasets.len() {
                if mask & (1 << i) != 0 && mask & (1 << j) != 0 {
                    *pairwise
                        .get_mut(&format!("{}&{}", names[i], names[j]))
                        .expect("pair key") += 1;
                }
            }
        }
        if mask == 0b111 {
            *triple.as_mut().expect("three sources") += 1;
        }
    }
    let sources = (0..datasets.len())
        .map(|s| {
            let total = datasets[s].len();
            let exclusive = (0..all.len())
                .filter(|&i| owner[i] == s && record_mask[i] == 1 << s)
                .count();
            SourceOverlap {
                name: names[s].clone(),
                total,
                exclusive,
                exclusive_pct: if total == 0 {
                    0.0
                } else {
                    100.0 * exclusive as f64 / total as f64
                },
            }
        })
        .collect();
    Ok(OverlapReport {
        sources,
        regions,
        pairwise,
        triple,
        union: groups.len(),
        items_per_source,
    })
}

pub const QUARTILE_METHOD: &str = "median of halves, median excluded from both halves when n is odd";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub quartile_method: &'static str,
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Five-number summary plus mean.
pub fn distribution_stats(scores: &[f64]) -> Result<DistributionStats, AnalyzeError> {
    if scores.is_empty() {
        return Err(AnalyzeError::EmptyScores);
    }
    if let Some(&bad) = scores.iter().find(|v| !v.is_finite()) {
        return Err(AnalyzeError::NonFinite(bad));
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = median_sorted(&v);
    let (lower, upper) = if n == 1 {
        (&v[..], &v[..])
    } else {
        (&v[..n / 2], &v[n.div_ceil(2)..])
    };
    Ok(DistributionStats {
        n,
        min: v[0],
        q1: median_sorted(lower),
        median,
        q3: median_sorted(upper),
        max: v[n - 1],
        mean: v.iter().sum::<f64>() / n as f64,
        quartile_method: QUARTILE_METHOD,
    })
}

/// Statistics per cell key, e.g. `(source, "national")`.
pub fn grouped_distributions<K: Ord + Clone>(
    items: impl IntoIterator<Item = (K, f64)>,
) -> Result<BTreeMap<K, DistributionStats>, AnalyzeError> {
    let mut cells: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for (k, v) in items {
        cells.entry(k).or_default().push(v);
    }
    cells
        .into_iter()
        .map(|(k, v)| distribution_stats(&v).map(|s| (k, s)))
        .collect()
}

pub fn write_distributions_csv<W: Write>(
    cells: &BTreeMap<String, DistributionStats>,
    out: W,
) -> Result<(), AnalyzeError> {
    let mut w = csv_writer(out);
    w.write_record([
        "cell",
        "n",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "mean",
        "quartile_method",
    ])?;
    for (k, s) in cells {
        w.write_record([
            k.clone(),
            s.n.to_string(),
            format!("{:.4}", s.min),
            format!("{:.4}", s.q1),
            format!("{:.4}", s.median),
            format!("{:.4}", s.q3),
            format!("{:.4}", s.max),
            format!("{:.4}", s.mean),
            s.quartile_method.to_string(),
        ])?;
    }
    w.flush().map_err(|e| AnalyzeError::Csv(e.into()))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CoverageCell {
    pub smr: usize,
    pub non_smr: usize,
}

impl CoverageCell {
    pub fn total(&self) -> usize {
        self.smr + self.non_smr
    }
}

pub const UNKNOWN_COUNTRY: &str = "unknown";

/// Records per outlet country, split by ranking match.
pub fn coverage_breakdown(enrichments: &[Enrichment]) -> BTreeMap<String, CoverageCell> {
    let mut out: BTreeMap<String, CoverageCell> = BTreeMap::new();
    for e in enrichments {
        let key = e.country.clone().unwrap_or_else(|| UNKNOWN_COUNTRY.to_string());
        let cell = out.entry(key).or_default();
        if e.is_smr() {
            cell.smr += 1;
        } else {
            cell.non_smr += 1;
        }
    }
    out
}

/// Largest countries by total, ties by code; `exclude` drops e.g. the home
/// country and `unknown`.
pub fn top_countries(breakdown: &BTreeMap<String, CoverageCell>, n: usize, exclude: &[&str]) -> Vec<(String, usize)> {
    let mut v: Vec<(String, usize)> = breakdown
        .iter()
        .filter(|(k, _)| !exclude.contains(&k.as_str()))
        .map(|(k, c)| (k.clone(), c.total()))
        .collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(n);
    v
}

pub fn write_coverage_csv<W: Write>(breakdown: &BTreeMap<String, CoverageCell>, out: W) -> Result<(), AnalyzeError> {
    let mut w = csv_writer(out);
    w.write_record(["country", "smr", "non_smr", "total"])?;
    for (k, c) in breakdown {
        w.write_record([
            k.clone(),
            c.smr.to_string(),
            c.non_smr.to_string(),
            c.total().to_string(),
        ])?;
    }
    w.flush().map_err(|e| AnalyzeError::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enrich::{MatchKind, SourceTypology};
    use crate::store::{DatasetOrigin, NewsRecord};

    #[test]
    fn ledger_chains_and_checks_order() {
        let events = vec![
            StageEvent::new(Stage::S1Editions, "a", 10, 10),
            StageEvent::new(Stage::S2Months, "b", 8, 3),
        ];
        let mut l = build_stage_ledger(&events).unwrap();
        assert_eq!(l.total_unique(), 13);
        assert_eq!(l.total_retrieved(), 18);
        l.finalize(6);
        assert!((l.final_counts.unwrap().reduction_ratio - (1.0 - 6.0 / 13.0)).abs() < 1e-12);

        let bad = vec![events[1].clone(), events[0].clone()];
        assert!(matches!(build_stage_ledger(&bad), Err(AnalyzeError::Sequencing { .. })));
        let bad = vec![StageEvent::new(Stage::S1Editions, "x", 1, 2)];
        assert!(build_stage_ledger(&bad).is_err());
        assert_eq!(build_stage_ledger(&[]).unwrap().total_unique(), 0);
    }

    fn ds(name: &str, ids: &[&str]) -> Dataset {
        Dataset::from_records(
            name,
            DatasetOrigin::Import,
            ids.iter()
                .map(|id| NewsRecord::new(*id, format!("headline {id}")))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn hand_countable_overlap() {
        let sets = [
            ds("A", &["a", "b", "c", "d", "e"]),
            ds("B", &["d", "e", "f"]),
            ds("C", &["e"]),
        ];
        let r = overlap(&sets, &Linkage::ExactId).unwrap();
        assert_eq!(r.source("A").unwrap().exclusive_pct, 60.0);
        assert!((r.source("B").unwrap().exclusive_pct - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(r.source("C").unwrap().exclusive_pct, 0.0);
        assert_eq!(r.union, 6);
        assert_eq!(r.triple, Some(1));
        assert_eq!(r.regions["A&B"], 1);
        assert_eq!(r.regions["A&B&C"], 1);
        assert!(r.inclusion_exclusion_holds());
    }

    #[test]
    fn disjoint_overlap() {
        let r = overlap(&[ds("A", &["a"]), ds("B", &["b"])], &Linkage::ExactId).unwrap();
        assert!(r.sources.iter().all(|s| s.exclusive_pct == 100.0));
        assert!(overlap(&[ds("A", &["a"])], &Linkage::ExactId).is_err());
    }

    #[test]
    fn quartiles() {
        let s = distribution_stats(&[10.0, 20.0, 30.0, 40.0, 50.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (15.0, 30.0, 45.0));
        let s = distribution_stats(&[7.0]).unwrap();
        assert_eq!([s.min, s.q1, s.median, s.q3, s.max], [7.0; 5]);
        assert_eq!(distribution_stats(&[0.0, 100.0]).unwrap().mean, 50.0);
        assert!(matches!(distribution_stats(&[]), Err(AnalyzeError::EmptyScores)));
        let s = distribution_stats(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (1.5, 2.5, 3.5));
    }

    fn enr(country: Option<&str>, smr: bool) -> Enrichment {
        Enrichment {
            id: "x".into(),
            outlet_name: String::new(),
            registrable_domain: None,
            match_kind: if smr { MatchKind::Domain } else { MatchKind::None },
            smr_name: None,
            smr_domain: None,
            country: country.map(str::to_string),
            typology: SourceTypology::Other,
            overall: None,
            dri: None,
            dri_discrepancy: None,
            note: None,
        }
    }

    #[test]
    fn coverage() {
        let rows = vec![
            enr(Some("ES"), true),
            enr(Some("ES"), true),
            enr(Some("ES"), true),
            enr(None, false),
            enr(None, false),
        ];
        let b = coverage_breakdown(&rows);
        assert_eq!(b["ES"], CoverageCell { smr: 3, non_smr: 0 });
        assert_eq!(b[UNKNOWN_COUNTRY], CoverageCell { smr: 0, non_smr: 2 });
        assert!(coverage_breakdown(&[]).is_empty());
        assert_eq!(top_countries(&b, 5, &["unknown"]), vec![("ES".to_string(), 3)]);
    }
}
