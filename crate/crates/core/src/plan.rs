//! Staged query planning.
//!
//! A collection run is a sequence of stages, each widening the net when the
//! previous one runs into the portal's per-query result cap: one plain
//! search per edition, then month-by-month windows on the most productive
//! edition, then `site:` restrictions by country code, then by every outlet
//! domain discovered so far.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("edition list is empty")]
    EmptyEditions,
    #[error("duplicate edition id {0:?}")]
    DuplicateEdition(String),
    #[error("edition {0:?} has an empty region, language or id")]
    InvalidEdition(String),
    #[error("expected {expected} editions, found {found}")]
    EditionCount { expected: usize, found: usize },
    #[error("topic is empty")]
    EmptyTopic,
    #[error("no ISO restrictions configured")]
    EmptyIsoSet,
    #[error("month range {start}..{end} is reversed")]
    Range { start: YearMonth, end: YearMonth },
    #[error("invalid year-month {0:?}, expected YYYY-MM")]
    BadMonth(String),
    #[error("query {query:?} appears twice for edition {edition}")]
    DuplicateQuery { edition: String, query: String },
}

/// One region + language variant of the aggregator portal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PortalEdition {
    pub edition_id: String,
    pub region_code: String,
    pub language_code: String,
}

impl PortalEdition {
    pub fn new(region: &str, language: &str) -> Self {
        PortalEdition {
            edition_id: format!("{language}:{region}"),
            region_code: region.to_string(),
            language_code: language.to_string(),
        }
    }

    fn check(&self) -> Result<(), PlanError> {
        if self.region_code.trim().is_empty()
            || self.language_code.trim().is_empty()
            || self.edition_id.trim().is_empty()
        {
            return Err(PlanError::InvalidEdition(self.edition_id.clone()));
        }
        Ok(())
    }
}

/// Checks that editions are well formed, unique by id and, optionally,
/// exactly `expected` in number.
pub fn validate_editions(editions: &[PortalEdition], expected: Option<usize>) -> Result<(), PlanError> {
    if editions.is_empty() {
        return Err(PlanError::EmptyEditions);
    }
    let mut seen = HashSet::new();
    for e in editions {
        e.check()?;
        if !seen.insert(e.edition_id.as_str()) {
            return Err(PlanError::DuplicateEdition(e.edition_id.clone()));
        }
    }
    match expected {
        Some(n) if n != editions.len() => Err(PlanError::EditionCount {
            expected: n,
            found: editions.len(),
        }),
        _ => Ok(()),
    }
}

/// Calendar month, ordered chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    year: i32,
    month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Option<Self> {
        (1..=12).contains(&month).then_some(YearMonth { year, month })
    }

    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("valid month")
    }

    pub fn last_day(self) -> NaiveDate {
        self.next()
            .first_day()
            .pred_opt()
            .expect("not the first representable day")
    }

    pub fn next(self) -> Self {
        if self.month == 12 {
            YearMonth {
                year: self.year + 1,
                month: 1,
            }
        } else {
            YearMonth {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    /// Whole months from `self` to `other` (negative when `other` is earlier).
    pub fn months_until(self, other: YearMonth) -> i64 {
        (other.year as i64 - self.year as i64) * 12 + other.month as i64 - self.month as i64
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = PlanError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PlanError::BadMonth(s.to_string());
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year = y.parse().map_err(|_| bad())?;
        let month = m.parse().map_err(|_| bad())?;
        YearMonth::new(year, month).ok_or_else(bad)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Collection stage. Records carry it as provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    S1Editions,
    S2Months,
    S3Iso,
    S4Domains,
    S5Backfill,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::S1Editions,
        Stage::S2Months,
        Stage::S3Iso,
        Stage::S4Domains,
        Stage::S5Backfill,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::S1Editions => "s1_editions",
            Stage::S2Months => "s2_months",
            Stage::S3Iso => "s3_iso",
            Stage::S4Domains => "s4_domains",
            Stage::S5Backfill => "s5_backfill",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// Inclusive day window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

/// What distinguishes one query from another within a stage. Each variant
/// fixes the stage, so a date window exists only for month queries and a
/// `site:` restriction only for ISO and domain queries.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueryScope {
    Edition,
    Month { window: DateWindow },
    Iso { token: String },
    Domain { domain: String },
    Backfill,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuerySpec {
    pub edition: PortalEdition,
    pub topic: String,
    pub scope: QueryScope,
}

impl QuerySpec {
    pub fn stage(&self) -> Stage {
        match self.scope {
            QueryScope::Edition => Stage::S1Editions,
            QueryScope::Month { .. } => Stage::S2Months,
            QueryScope::Iso { .. } => Stage::S3Iso,
            QueryScope::Domain { .. } => Stage::S4Domains,
            QueryScope::Backfill => Stage::S5Backfill,
        }
    }

    pub fn date_window(&self) -> Option<DateWindow> {
        match self.scope {
            QueryScope::Month { window } => Some(window),
            _ => None,
        }
    }

    pub fn site_restrict(&self) -> Option<&str> {
        match &self.scope {
            QueryScope::Iso { token } => Some(token),
            QueryScope::Domain { domain } => Some(domain),
            _ => None,
        }
    }

    /// `<topic> [site:<restrict>] [after:<date> before:<date>]`
    pub fn render(&self) -> String {
        let mut out = if self.topic.chars().any(char::is_whitespace) {
            format!("\"{}\"", self.topic)
        } else {
            self.topic.clone()
        };
        if let Some(site) = self.site_restrict() {
            out.push_str(" site:");
            out.push_str(site);
        }
        if let Some(w) = self.date_window() {
            out.push_str(&format!(" after:{} before:{}", w.start, w.end));
        }
        out
    }

    /// Stable identifier of the rendered query on its edition.
    pub fn digest(&self) -> String {
        text::short_digest(format!("{}\t{}", self.edition.edition_id, self.render()), 16)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: String,
    pub created_at: DateTime<Utc>,
}

/// Ordered, duplicate-free list of queries.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPlan {
    queries: Vec<QuerySpec>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub provenance: Option<Provenance>,
}

impl QueryPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_queries(queries: Vec<QuerySpec>) -> Result<Self, PlanError> {
        let mut plan = QueryPlan::new();
        for q in queries {
            plan.push(q)?;
        }
        Ok(plan)
    }

    pub fn push(&mut self, q: QuerySpec) -> Result<(), PlanError> {
        let rendered = q.render();
        if self
            .queries
            .iter()
            .any(|p| p.edition.edition_id == q.edition.edition_id && p.render() == rendered)
        {
            return Err(PlanError::DuplicateQuery {
                edition: q.edition.edition_id,
                query: rendered,
            });
        }
        self.queries.push(q);
        Ok(())
    }

    pub fn extend(&mut self, other: QueryPlan) -> Result<(), PlanError> {
        for q in other.queries {
            self.push(q)?;
        }
        Ok(())
    }

    pub fn queries(&self) -> &[QuerySpec] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn count_for(&self, stage: Stage) -> usize {
        self.queries.iter().filter(|q| q.stage() == stage).count()
    }

    /// One `edition<TAB>stage<TAB>query` line per query; excludes provenance
    /// so identical configurations render identically.
    pub fn render_lines(&self) -> String {
        let mut out = String::new();
        for q in &self.queries {
            out.push_str(&format!("{}\t{}\t{}\n", q.edition.edition_id, q.stage(), q.render()));
        }
        out
    }
}

fn check_topic(topic: &str) -> Result<(), PlanError> {
    if topic.trim().is_empty() {
        Err(PlanError::EmptyTopic)
    } else {
        Ok(())
    }
}

/// One plain search per edition.
pub fn build_stage1(editions: &[PortalEdition], topic: &str) -> Result<QueryPlan, PlanError> {
    check_topic(topic)?;
    validate_editions(editions, None)?;
    QueryPlan::from_queries(
        editions
            .iter()
            .map(|e| QuerySpec {
                edition: e.clone(),
                topic: topic.to_string(),
                scope: QueryScope::Edition,
            })
            .collect(),
    )
}

/// One query per calendar month in `start..=end`, windowed on whole days.
pub fn segment_months(
    start: YearMonth,
    end: YearMonth,
    edition: &PortalEdition,
    topic: &str,
) -> Result<QueryPlan, PlanError> {
    check_topic(topic)?;
    if start > end {
        return Err(PlanError::Range { start, end });
    }
    let mut queries = Vec::new();
    let mut m = start;
    loop {
        queries.push(QuerySpec {
            edition: edition.clone(),
            topic: topic.to_string(),
            scope: QueryScope::Month {
                window: DateWindow {
                    start: m.first_day(),
                    end: m.last_day(),
                },
            },
        });
        if m == end {
            break;
        }
        m = m.next();
    }
    QueryPlan::from_queries(queries)
}

/// `site:<domain>` searches for every (domain, edition) pair.
///
/// Domains are trimmed, lowercased and deduplicated (first occurrence kept).
pub fn expand_domains(domains: &[String], editions: &[PortalEdition], topic: &str) -> QueryPlan {
    let mut seen = HashSet::new();
    let domains: Vec<String> = domains
        .iter()
        .map(|d| d.trim().trim_end_matches('.').to_lowercase())
        .filter(|d| !d.is_empty() && seen.insert(d.clone()))
        .collect();
    let mut plan = QueryPlan::new();
    for d in &domains {
        for e in editions {
            // pairs are unique after the dedup above
            plan.queries.push(QuerySpec {
                edition: e.clone(),
                topic: topic.to_string(),
                scope: QueryScope::Domain { domain: d.clone() },
            });
        }
    }
    plan
}

/// `site:<ISO>` searches: every configured token on every edition.
pub fn build_iso_stage(editions: &[PortalEdition], iso_tokens: &[String], topic: &str) -> Result<QueryPlan, PlanError> {
    check_topic(topic)?;
    validate_editions(editions, None)?;
    if iso_tokens.is_empty() {
        return Err(PlanError::EmptyIsoSet);
    }
    let mut queries = Vec::new();
    for e in editions {
        for tok in iso_tokens {
            queries.push(QuerySpec {
                edition: e.clone(),
                topic: topic.to_string(),
                scope: QueryScope::Iso {
                    token: tok.trim().to_lowercase(),
                },
            });
        }
    }
    QueryPlan::from_queries(queries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ym(s: &str) -> YearMonth {
        s.parse().unwrap()
    }

    fn es() -> PortalEdition {
        PortalEdition::new("ES", "es")
    }

    #[test]
    fn leap_february_window() {
        let plan = segment_months(ym("2020-02"), ym("2020-02"), &es(), "IFMIF-DONES").unwrap();
        assert_eq!(plan.len(), 1);
        let w = plan.queries()[0].date_window().unwrap();
        assert_eq!(w.start.to_string(), "2020-02-01");
        assert_eq!(w.end.to_string(), "2020-02-29");
        assert_eq!(
            plan.queries()[0].render(),
            "IFMIF-DONES after:2020-02-01 before:2020-02-29"
        );
    }

    #[test]
    fn month_span_across_year_boundary() {
        // Nov, Dec, Jan, Feb
        let plan = segment_months(ym("2019-11"), ym("2020-02"), &es(), "t").unwrap();
        let starts: Vec<String> = plan
            .queries()
            .iter()
            .map(|q| q.date_window().unwrap().start.to_string())
            .collect();
        assert_eq!(starts, ["2019-11-01", "2019-12-01", "2020-01-01", "2020-02-01"]);
        assert_eq!(plan.queries()[1].date_window().unwrap().end.to_string(), "2019-12-31");
    }

    #[test]
    fn reversed_range_is_an_error() {
        assert!(matches!(
            segment_months(ym("2020-03"), ym("2020-02"), &es(), "t"),
            Err(PlanError::Range { .. })
        ));
    }

    #[test]
    fn bad_month_strings() {
        for s in ["2020-13", "2020-1", "20-01", "2020/01", ""] {
            assert!(s.parse::<YearMonth>().is_err(), "{s}");
        }
    }

    #[test]
    fn stage1_rejects_duplicates_and_empties() {
        assert_eq!(build_stage1(&[], "t"), Err(PlanError::EmptyEditions));
        assert_eq!(
            build_stage1(&[es(), es()], "t"),
            Err(PlanError::DuplicateEdition("es:ES".into()))
        );
        assert_eq!(build_stage1(&[es()], "  "), Err(PlanError::EmptyTopic));
        let p = build_stage1(&[es()], "t").unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.queries()[0].stage(), Stage::S1Editions);
    }

    #[test]
    fn edition_count_is_checked() {
        assert_eq!(
            validate_editions(&[es()], Some(81)),
            Err(PlanError::EditionCount { expected: 81, found: 1 })
        );
    }

    #[test]
    fn domain_cross_product() {
        let domains: Vec<String> = ["a.com", "B.com", "c.org"].iter().map(|s| s.to_string()).collect();
        let eds = [es(), PortalEdition::new("US", "en")];
        let plan = expand_domains(&domains, &eds, "t");
        assert_eq!(plan.len(), 6);
        assert_eq!(plan.queries()[2].render(), "t site:b.com");
        assert!(plan.queries().iter().all(|q| q.stage() == Stage::S4Domains));
        assert!(expand_domains(&[], &eds, "t").is_empty());
    }

    #[test]
    fn iso_stage() {
        let toks: Vec<String> = ["ar", "mx", "cl", "co"].iter().map(|s| s.to_string()).collect();
        assert_eq!(build_iso_stage(&[es()], &toks, "t").unwrap().len(), 4);
        assert_eq!(build_iso_stage(&[es()], &toks[..1], "t").unwrap().len(), 1);
        assert_eq!(build_iso_stage(&[es()], &[], "t"), Err(PlanError::EmptyIsoSet));
    }

    #[test]
    fn topic_with_spaces_is_quoted() {
        let q = QuerySpec {
            edition: es(),
            topic: "fusion energy".into(),
            scope: QueryScope::Iso { token: "es".into() },
        };
        assert_eq!(q.render(), "\"fusion energy\" site:es");
    }

    #[test]
    fn stages_never_collide() {
        let mut plan = build_stage1(&[es()], "t").unwrap();
        plan.extend(segment_months(ym("2024-01"), ym("2024-03"), &es(), "t").unwrap())
            .unwrap();
        plan.extend(build_iso_stage(&[es()], &["es".into()], "t").unwrap())
            .unwrap();
        plan.extend(expand_domains(&["x.es".into()], &[es()], "t")).unwrap();
        assert_eq!(plan.len(), 6);
        assert!(plan.push(plan.queries()[0].clone()).is_err());
    }
}
