//! Duplicate detection: URL matching combined with headline similarity.
//!
//! Two items are duplicates when their canonical URLs are equal, or when
//! their headlines reach the similarity threshold and (if both carry exact
//! publication dates) fall on the same calendar day. The relation is closed
//! transitively, and the earliest-collected member of each group is kept.

mod canonical;
mod similarity;

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use chrono::{DateTime, NaiveDate, Utc};
use serde::Serialize;
use url::Url;

pub use canonical::{canonicalize_url, CanonicalUrl, Canonicalizer, DEFAULT_TRACKING_KEYS, DEFAULT_TRACKING_PREFIXES};
pub use similarity::{headline_similarity, headline_tokens, jaccard};

pub const DEFAULT_THRESHOLD: f64 = 0.9;

#[derive(Debug, thiserror::Error)]
pub enum DedupError {
    #[error("invalid url {url:?}: {reason}")]
    InvalidUrl { url: String, reason: String },
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// What dedup needs to know about an item.
pub trait DedupItem {
    fn item_id(&self) -> &str;
    fn item_url(&self) -> Option<&Url>;
    fn item_headline(&self) -> &str;
    /// Exact publication date; approximate dates must return `None`.
    fn item_date(&self) -> Option<NaiveDate>;
    fn item_collected_at(&self) -> Option<DateTime<Utc>>;
}

impl DedupItem for crate::store::NewsRecord {
    fn item_id(&self) -> &str {
        &self.id
    }
    fn item_url(&self) -> Option<&Url> {
        self.source_url.as_ref()
    }
    fn item_headline(&self) -> &str {
        &self.headline
    }
    fn item_date(&self) -> Option<NaiveDate> {
        self.exact_date()
    }
    fn item_collected_at(&self) -> Option<DateTime<Utc>> {
        self.collected_at
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupReason {
    UrlMatch,
    HeadlineMatch,
}

impl DedupReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DedupReason::UrlMatch => "url_match",
            DedupReason::HeadlineMatch => "headline_match",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DedupDecision {
    pub kept_id: String,
    pub dropped_ids: Vec<String>,
    pub reason: DedupReason,
    /// 1.0 for URL matches; for headline matches, the lowest similarity
    /// between the kept headline and any dropped one.
    pub similarity: f64,
}

#[derive(Debug, Clone)]
pub struct DedupOutcome<T> {
    pub unique: Vec<T>,
    pub decisions: Vec<DedupDecision>,
    /// Input indices per duplicate group, keeper first, groups in
    /// first-seen order.
    pub groups: Vec<Vec<usize>>,
}

impl<T> DedupOutcome<T> {
    pub fn dropped_count(&self) -> usize {
        self.decisions.iter().map(|d| d.dropped_ids.len()).sum()
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small] = big;
        self.size[big] += self.size[small];
    }

    /// Groups in order of their smallest member; members ascending.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut by_root: HashMap<usize, usize> = HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let r = self.find(i);
            let slot = *by_root.entry(r).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[slot].push(i);
        }
        groups
    }
}

/// Configured deduplicator.
#[derive(Debug, Clone)]
pub struct Deduplicator {
    pub threshold: f64,
    pub canonicalizer: Canonicalizer,
}

impl Default for Deduplicator {
    fn default() -> Self {
        Deduplicator {
            threshold: DEFAULT_THRESHOLD,
            canonicalizer: Canonicalizer::default(),
        }
    }
}

struct Prepared {
    canon: Option<CanonicalUrl>,
    tokens: BTreeSet<String>,
    date: Option<NaiveDate>,
}

impl Deduplicator {
    pub fn new(threshold: f64) -> Result<Self, DedupError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(DedupError::Threshold(threshold));
        }
        Ok(Deduplicator {
            threshold,
            ..Default::default()
        })
    }

    fn prepare<T: DedupItem>(&self, items: &[T]) -> Vec<Prepared> {
        items
            .iter()
            .map(|it| Prepared {
                canon: it.item_url().and_then(|u| self.canonicalizer.canonicalize(u).ok()),
                tokens: headline_tokens(it.item_headline()),
                date: it.item_date(),
            })
            .collect()
    }

    fn headline_linked(&self, a: &Prepared, b: &Prepared) -> Option<f64> {
        if let (Some(da), Some(db)) = (a.date, b.date) {
            if da != db {
                return None;
            }
        }
        // Jaccard can't exceed min/max of the set sizes.
        let (la, lb) = (a.tokens.len(), b.tokens.len());
        if la > 0 && lb > 0 && (la.min(lb) as f64) < self.threshold * la.max(lb) as f64 {
            return None;
        }
        let sim = jaccard(&a.tokens, &b.tokens);
        (sim >= self.threshold).then_some(sim)
    }

    /// Partitions `items` into duplicate groups (indices, ascending).
    pub fn partition<T: DedupItem>(&self, items: &[T]) -> Vec<Vec<usize>> {
        let prepared = self.prepare(items);
        self.partition_prepared(&prepared)
    }

    fn partition_prepared(&self, prepared: &[Prepared]) -> Vec<Vec<usize>> {
        let n = prepared.len();
        let mut uf = UnionFind::new(n);
        let mut by_url: HashMap<&CanonicalUrl, usize> = HashMap::new();
        for (i, p) in prepared.iter().enumerate() {
            if let Some(c) = &p.canon {
                match by_url.get(c) {
                    Some(&j) => uf.union(i, j),
                    None => {
                        by_url.insert(c, i);
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                if uf.find(i) == uf.find(j) {
                    continue;
                }
                if self.headline_linked(&prepared[i], &prepared[j]).is_some() {
                    uf.union(i, j);
                }
            }
        }
        uf.groups()
    }

    /// Merges a result stream into unique items plus an audit trail.
    pub fn merge<T: DedupItem + Clone>(&self, items: &[T]) -> DedupOutcome<T> {
        let prepared = self.prepare(items);
        let raw_groups = self.partition_prepared(&prepared);

        let mut unique = Vec::with_capacity(raw_groups.len());
        let mut decisions = Vec::new();
        let mut groups = Vec::with_capacity(raw_groups.len());
        for members in raw_groups {
            // earliest collected wins; unknown collection time sorts last;
            // ties go to the first-seen item
            let keeper = *members
                .iter()
                .min_by_key(|&&i| (items[i].item_collected_at().is_none(), items[i].item_collected_at(), i))
                .expect("groups are non-empty");
            unique.push(items[keeper].clone());

            let mut url_dropped = Vec::new();
            let mut headline_dropped = Vec::new();
            let mut min_sim = 1.0_f64;
            for &m in members.iter().filter(|&&m| m != keeper) {
                let same_url = matches!(
                    (&prepared[m].canon, &prepared[keeper].canon),
                    (Some(a), Some(b)) if a == b
                );
                if same_url {
                    url_dropped.push(items[m].item_id().to_string());
                } else {
                    min_sim = min_sim.min(jaccard(&prepared[m].tokens, &prepared[keeper].tokens));
                    headline_dropped.push(items[m].item_id().to_string());
                }
            }
            let kept_id = items[keeper].item_id().to_string();
            if !url_dropped.is_empty() {
                decisions.push(DedupDecision {
                    kept_id: kept_id.clone(),
                    dropped_ids: url_dropped,
                    reason: DedupReason::UrlMatch,
                    similarity: 1.0,
                });
            }
            if !headline_dropped.is_empty() {
                decisions.push(DedupDecision {
                    kept_id,
                    dropped_ids: headline_dropped,
                    reason: DedupReason::HeadlineMatch,
                    similarity: min_sim,
                });
            }
            let mut ordered = vec![keeper];
            ordered.extend(members.into_iter().filter(|&m| m != keeper));
            groups.push(ordered);
        }
        DedupOutcome {
            unique,
            decisions,
            groups,
        }
    }
}

/// Dedups with the default canonicalizer at the given threshold.
pub fn dedup_merge<T: DedupItem + Clone>(items: &[T], threshold: f64) -> Result<DedupOutcome<T>, DedupError> {
    Ok(Deduplicator::new(threshold)?.merge(items))
}

/// Writes decisions as delimited text, one row per dropped id.
pub fn write_decisions<W: Write>(decisions: &[DedupDecision], out: W) -> Result<(), DedupError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(out);
    w.write_record(["kept_id", "dropped_id", "reason", "similarity"])?;
    for d in decisions {
        for dropped in &d.dropped_ids {
            w.write_record([
                d.kept_id.as_str(),
                dropped.as_str(),
                d.reason.as_str(),
                &format!("{:.4}", d.similarity),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[derive(Debug, Clone)]
    struct Item {
        id: String,
        url: Option<Url>,
        headline: String,
        date: Option<NaiveDate>,
        collected: Option<DateTime<Utc>>,
    }

    impl DedupItem for Item {
        fn item_id(&self) -> &str {
            &self.id
        }
        fn item_url(&self) -> Option<&Url> {
            self.url.as_ref()
        }
        fn item_headline(&self) -> &str {
            &self.headline
        }
        fn item_date(&self) -> Option<NaiveDate> {
            self.date
        }
        fn item_collected_at(&self) -> Option<DateTime<Utc>> {
            self.collected
        }
    }

    fn item(id: &str, url: &str, headline: &str, day: Option<u32>, minute: u32) -> Item {
        Item {
            id: id.into(),
            url: Some(Url::parse(url).unwrap()),
            headline: headline.into(),
            date: day.map(|d| NaiveDate::from_ymd_opt(2024, 5, d).unwrap()),
            collected: Some(Utc.with_ymd_and_hms(2026, 1, 1, 0, minute, 0).unwrap()),
        }
    }

    #[test]
    fn url_variants_collapse_and_earliest_wins() {
        let items = vec![
            item("a", "https://elpais.com/x/?utm_source=gn", "Uno", None, 5),
            item("b", "https://ELPAIS.com/x", "Otro titular", None, 1),
            item("c", "https://abc.es/y", "Tres", None, 2),
        ];
        let out = dedup_merge(&items, 0.9).unwrap();
        assert_eq!(out.unique.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(), ["b", "c"]);
        assert_eq!(out.decisions.len(), 1);
        assert_eq!(out.decisions[0].reason, DedupReason::UrlMatch);
        assert_eq!(out.decisions[0].similarity, 1.0);
        assert_eq!(out.decisions[0].dropped_ids, ["a"]);
    }

    #[test]
    fn headline_match_requires_same_day() {
        let items = vec![
            item("a", "https://a.es/1", "IFMIF-DONES avanza en Granada", Some(3), 0),
            item("b", "https://b.es/2", "IFMIF-DONES avanza en Granada!", Some(3), 1),
            item("c", "https://c.es/3", "ifmif-dones AVANZA en granada", Some(9), 2),
            item("d", "https://d.es/4", "IFMIF-DONES avanza en Granada", None, 3),
        ];
        let out = dedup_merge(&items, 0.9).unwrap();
        // d has no date, so it links to both a and c; transitivity joins all.
        assert_eq!(out.unique.len(), 1);
        let without_d = dedup_merge(&items[..3], 0.9).unwrap();
        assert_eq!(without_d.unique.len(), 2);
        assert_eq!(without_d.decisions[0].reason, DedupReason::HeadlineMatch);
    }

    #[test]
    fn all_distinct_is_noop() {
        let items = vec![
            item("a", "https://a.es/1", "alpha beta", None, 0),
            item("b", "https://b.es/2", "gamma delta", None, 1),
        ];
        let out = dedup_merge(&items, 0.9).unwrap();
        assert_eq!(out.unique.len(), 2);
        assert!(out.decisions.is_empty());
    }

    #[test]
    fn threshold_is_validated() {
        assert!(Deduplicator::new(1.5).is_err());
        assert!(Deduplicator::new(-0.1).is_err());
    }

    #[test]
    fn decisions_export() {
        let items = vec![
            item("a", "https://a.es/1", "x", None, 0),
            item("b", "https://a.es/1/", "y", None, 1),
        ];
        let out = dedup_merge(&items, 0.9).unwrap();
        let mut buf = Vec::new();
        write_decisions(&out.decisions, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "kept_id,dropped_id,reason,similarity\r\na,b,url_match,1.0000\r\n"
        );
    }
}
