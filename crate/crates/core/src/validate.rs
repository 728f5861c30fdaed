//! Noise filters: non-HTML resources, placeholder text, missing topic
//! keyword and index-page URLs.
//!
//! A dropped record is attributed to the first reason that matches, in the
//! order: non-HTML, placeholder text, missing keyword (or adult SEO when
//! the page was keyword-stuffed), section or homepage.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::Write;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::dedup::Canonicalizer;
use crate::extract::ResourceKind;
use crate::store::{Dataset, NewsRecord, QualityFlag};
use crate::text;

pub const DEFAULT_SECTION_TOKENS: &[&str] = &[
    "tag",
    "tags",
    "etiqueta",
    "etiquetas",
    "category",
    "categoria",
    "categoría",
    "seccion",
    "sección",
    "section",
    "sections",
    "topic",
    "topics",
    "tema",
    "temas",
    "author",
    "autor",
    "search",
    "buscar",
    "archive",
    "archivo",
    "hemeroteca",
    "page",
    "pagina",
    "página",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationConfig {
    /// Any one of these, case-insensitively, keeps a record.
    pub topic_tokens: Vec<String>,
    pub section_tokens: Vec<String>,
}

impl ValidationConfig {
    pub fn for_topic(topic: &str) -> Self {
        ValidationConfig {
            topic_tokens: vec![topic.to_string()],
            section_tokens: DEFAULT_SECTION_TOKENS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn with_alternates<I: IntoIterator<Item = S>, S: Into<String>>(mut self, alts: I) -> Self {
        self.topic_tokens.extend(alts.into_iter().map(Into::into));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseReason {
    NonHtml(ResourceKind),
    PlaceholderText,
    MissingKeyword,
    AdultSeo,
    SectionOrHomepage,
    Other,
}

impl fmt::Display for NoiseReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseReason::NonHtml(k) => write!(f, "non_html:{}", k.as_str()),
            NoiseReason::PlaceholderText => f.write_str("placeholder_text"),
            NoiseReason::MissingKeyword => f.write_str("missing_keyword"),
            NoiseReason::AdultSeo => f.write_str("adult_seo"),
            NoiseReason::SectionOrHomepage => f.write_str("section_or_homepage"),
            NoiseReason::Other => f.write_str("other"),
        }
    }
}

/// The six non-HTML kinds reported individually.
pub const REPORTED_NON_HTML: [ResourceKind; 6] = [
    ResourceKind::Pdf,
    ResourceKind::Image,
    ResourceKind::Audio,
    ResourceKind::Video,
    ResourceKind::Archive,
    ResourceKind::Executable,
];

fn contains_any(haystack: &str, tokens: &[String]) -> bool {
    tokens.iter().any(|t| text::contains_ci(haystack, t))
}

pub fn matches_keyword(record: &NewsRecord, topic_tokens: &[String]) -> bool {
    contains_any(&record.headline, topic_tokens) || contains_any(record.full_text(), topic_tokens)
}

/// Splits into records mentioning a topic token in headline or text, and
/// the rest.
///
/// # Panics
/// When `topic_tokens` is empty.
pub fn keyword_filter(records: Vec<NewsRecord>, topic_tokens: &[String]) -> (Vec<NewsRecord>, Vec<NewsRecord>) {
    assert!(!topic_tokens.is_empty(), "keyword_filter needs at least one token");
    records.into_iter().partition(|r| matches_keyword(r, topic_tokens))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UrlKind {
    Article,
    IndexLike,
}

fn is_date_segment(seg: &str) -> bool {
    let digits = seg.chars().all(|c| c.is_ascii_digit());
    (digits && seg.len() == 4 && (seg.starts_with("19") || seg.starts_with("20")))
        || (seg.len() == 10
            && seg
                .char_indices()
                .all(|(i, c)| if i == 4 || i == 7 { c == '-' } else { c.is_ascii_digit() }))
}

fn is_slug_segment(seg: &str) -> bool {
    let lower = seg.to_lowercase();
    if [".html", ".htm", ".shtml", ".php", ".aspx"]
        .iter()
        .any(|e| lower.ends_with(e))
    {
        return true;
    }
    let separators = seg.chars().filter(|c| *c == '-' || *c == '_').count();
    let longest_digits = seg
        .split(|c: char| !c.is_ascii_digit())
        .map(str::len)
        .max()
        .unwrap_or(0);
    separators >= 2 || longest_digits >= 5
}

/// Article-vs-index guess from the URL path alone.
pub fn url_article_heuristic(url: &Url, section_tokens: &[String]) -> UrlKind {
    let canon = Canonicalizer::default().canonicalize(url);
    let path = canon
        .as_ref()
        .map(|c| c.path().to_string())
        .unwrap_or_else(|_| url.path().to_string());
    let segs: Vec<String> = path
        .split('/')
        .filter(|s| !s.is_empty())
        .map(|s| {
            percent_encoding::percent_decode_str(s)
                .decode_utf8_lossy()
                .to_lowercase()
        })
        .collect();
    let is_section = |s: &String| section_tokens.iter().any(|t| t.to_lowercase() == *s);
    let n = segs.len();
    if n == 0 {
        return UrlKind::IndexLike;
    }
    if is_section(&segs[n - 1]) || (n >= 2 && is_section(&segs[n - 2])) {
        return UrlKind::IndexLike;
    }
    if n == 1 && !is_date_segment(&segs[0]) && !is_slug_segment(&segs[0]) {
        return UrlKind::IndexLike;
    }
    UrlKind::Article
}

/// First matching noise reason, or `None` for a clean record.
pub fn classify_noise(record: &NewsRecord, cfg: &ValidationConfig) -> Option<NoiseReason> {
    if let Some(kind) = record.non_html_kind() {
        return Some(if REPORTED_NON_HTML.contains(&kind) {
            NoiseReason::NonHtml(kind)
        } else {
            NoiseReason::Other
        });
    }
    if record.has_flag(&QualityFlag::Hallucination) {
        return Some(NoiseReason::PlaceholderText);
    }
    if !matches_keyword(record, &cfg.topic_tokens) {
        return Some(if record.has_flag(&QualityFlag::KeywordStuffing) {
            NoiseReason::AdultSeo
        } else {
            NoiseReason::MissingKeyword
        });
    }
    let index_like = record
        .source_url
        .as_ref()
        .is_some_and(|u| url_article_heuristic(u, &cfg.section_tokens) == UrlKind::IndexLike);
    if index_like && !contains_any(record.full_text(), &cfg.topic_tokens) {
        return Some(NoiseReason::SectionOrHomepage);
    }
    None
}

pub fn reduction_ratio(pre: usize, post: usize) -> f64 {
    if pre == 0 {
        0.0
    } else {
        1.0 - post as f64 / pre as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NoiseReport {
    pub pre_count: usize,
    pub post_count: usize,
    pub missing_keyword: usize,
    /// Keyed by resource kind; all six reported kinds are always present.
    pub non_html: BTreeMap<String, usize>,
    pub section_or_homepage: usize,
    pub placeholder_text: usize,
    pub adult_seo: usize,
    pub other: usize,
    /// Dropped record ids with their reason, in input order.
    pub dropped: Vec<(String, String)>,
}

impl NoiseReport {
    pub fn empty(pre_count: usize) -> Self {
        NoiseReport {
            pre_count,
            post_count: pre_count,
            non_html: REPORTED_NON_HTML.iter().map(|k| (k.as_str().to_string(), 0)).collect(),
            ..Default::default()
        }
    }

    fn count(&mut self, id: &str, reason: NoiseReason) {
        match reason {
            NoiseReason::NonHtml(k) => *self.non_html.entry(k.as_str().to_string()).or_default() += 1,
            NoiseReason::PlaceholderText => self.placeholder_text += 1,
            NoiseReason::MissingKeyword => self.missing_keyword += 1,
            NoiseReason::AdultSeo => self.adult_seo += 1,
            NoiseReason::SectionOrHomepage => self.section_or_homepage += 1,
            NoiseReason::Other => self.other += 1,
        }
        self.post_count -= 1;
        self.dropped.push((id.to_string(), reason.to_string()));
    }

    pub fn non_html_total(&self) -> usize {
        self.non_html.values().sum()
    }

    pub fn dropped_total(&self) -> usize {
        self.missing_keyword
            + self.non_html_total()
            + self.section_or_homepage
            + self.placeholder_text
            + self.adult_seo
            + self.other
    }

    /// `pre = post + dropped`
    pub fn accounting_holds(&self) -> bool {
        self.pre_count == self.post_count + self.dropped_total()
    }

    pub fn reduction_ratio(&self) -> f64 {
        reduction_ratio(self.pre_count, self.post_count)
    }

    /// `(reason, count)` rows in a fixed order.
    pub fn rows(&self) -> Vec<(String, usize)> {
        let mut rows = vec![("missing_keyword".to_string(), self.missing_keyword)];
        for k in REPORTED_NON_HTML {
            rows.push((
                format!("non_html:{}", k.as_str()),
                self.non_html.get(k.as_str()).copied().unwrap_or(0),
            ));
        }
        rows.extend([
            ("section_or_homepage".to_string(), self.section_or_homepage),
            ("placeholder_text".to_string(), self.placeholder_text),
            ("adult_seo".to_string(), self.adult_seo),
            ("other".to_string(), self.other),
        ]);
        rows
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(out);
        w.write_record(["reason", "count"])?;
        for (reason, n) in self.rows() {
            w.write_record([reason, n.to_string()])?;
        }
        w.write_record(["pre_count".to_string(), self.pre_count.to_string()])?;
        w.write_record(["post_count".to_string(), self.post_count.to_string()])?;
        w.write_record(["reduction_ratio".to_string(), format!("{:.4}", self.reduction_ratio())])?;
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "noise report");
        let _ = writeln!(s, "  records before filtering: {}", self.pre_count);
        for (reason, n) in self.rows() {
            if n > 0 {
                let _ = writeln!(s, "  {reason:<24} {n}");
            }
        }
        let _ = writeln!(s, "  records after filtering:  {}", self.post_count);
        let _ = writeln!(s, "  reduction:                {:.1}%", 100.0 * self.reduction_ratio());
        s
    }
}

/// Applies every filter and returns the clean dataset with its report.
pub fn run_validation(dataset: &Dataset, cfg: &ValidationConfig) -> (Dataset, NoiseReport) {
    let mut report = NoiseReport::empty(dataset.len());
    let mut clean = dataset.clone();
    let mut reasons = Vec::new();
    for r in dataset.records() {
        reasons.push(classify_noise(r, cfg));
    }
    for (r, reason) in dataset.records().iter().zip(&reasons) {
        if let Some(reason) = reason {
            report.count(&r.id, *reason);
        }
    }
    clean
        .apply_pass("validate", |records| {
            records
                .into_iter()
                .zip(reasons)
                .filter_map(|(r, reason)| reason.is_none().then_some(r))
                .collect()
        })
        .expect("filtering cannot introduce duplicate ids");
    (clean, report)
}
