use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

use crate::extract::ResourceKind;
use crate::plan::Stage;
use crate::text;

/// Label written for records whose full text could not be retrieved.
pub const NO_CONTENT_LABEL: &str = "[NO CONTENT]";

/// How the `full_text` field was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMethod {
    Listing,
    DirectFetch,
    Backfill,
    Manual,
}

impl ExtractionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ExtractionMethod::Listing => "listing",
            ExtractionMethod::DirectFetch => "direct_fetch",
            ExtractionMethod::Backfill => "backfill",
            ExtractionMethod::Manual => "manual",
        }
    }
}

impl FromStr for ExtractionMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "listing" => ExtractionMethod::Listing,
            "direct_fetch" => ExtractionMethod::DirectFetch,
            "backfill" => ExtractionMethod::Backfill,
            "manual" => ExtractionMethod::Manual,
            other => return Err(format!("unknown extraction method {other:?}")),
        })
    }
}

/// Data quality markers attached to a record.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QualityFlag {
    /// Full text could not be retrieved; rendered as `[NO CONTENT]`.
    NoContent,
    Paywalled,
    NonHtml(ResourceKind),
    FetchFailed,
    DateApproximate,
    LlmParseFail,
    LlmUnavailable,
    AuthorUnverified,
    Hallucination,
    ReprocessManual,
    KeywordStuffing,
    Other(String),
}

impl fmt::Display for QualityFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QualityFlag::NoContent => f.write_str(NO_CONTENT_LABEL),
            QualityFlag::Paywalled => f.write_str("paywalled"),
            QualityFlag::NonHtml(kind) => write!(f, "non_html:{}", kind.as_str()),
            QualityFlag::FetchFailed => f.write_str("fetch_failed"),
            QualityFlag::DateApproximate => f.write_str("date_approximate"),
            QualityFlag::LlmParseFail => f.write_str("llm_parse_fail"),
            QualityFlag::LlmUnavailable => f.write_str("llm_unavailable"),
            QualityFlag::AuthorUnverified => f.write_str("author_unverified"),
            QualityFlag::Hallucination => f.write_str("hallucination"),
            QualityFlag::ReprocessManual => f.write_str("reprocess_manual"),
            QualityFlag::KeywordStuffing => f.write_str("keyword_stuffing"),
            QualityFlag::Other(s) => f.write_str(s),
        }
    }
}

impl FromStr for QualityFlag {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            NO_CONTENT_LABEL | "no_content" => QualityFlag::NoContent,
            "paywalled" => QualityFlag::Paywalled,
            "fetch_failed" => QualityFlag::FetchFailed,
            "date_approximate" => QualityFlag::DateApproximate,
            "llm_parse_fail" => QualityFlag::LlmParseFail,
            "llm_unavailable" => QualityFlag::LlmUnavailable,
            "author_unverified" => QualityFlag::AuthorUnverified,
            "hallucination" => QualityFlag::Hallucination,
            "reprocess_manual" => QualityFlag::ReprocessManual,
            "keyword_stuffing" => QualityFlag::KeywordStuffing,
            other => match other.strip_prefix("non_html:").and_then(ResourceKind::parse) {
                Some(kind) => QualityFlag::NonHtml(kind),
                None => QualityFlag::Other(other.to_string()),
            },
        })
    }
}

/// Retrieval status derived from a record's flags and text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContentStatus {
    Ok,
    NoContent,
    Paywalled,
    NonHtml,
    ReprocessManual,
    /// Never attempted, e.g. licensed-database rows without body text.
    NotRetrieved,
}

/// One dataset row: the twenty-field article schema.
///
/// `full_text` and its derived counts are private so the counts can only
/// change together with the text.
#[derive(Debug, Clone, PartialEq)]
pub struct NewsRecord {
    pub id: String,
    pub outlet_name: String,
    pub source_domain: String,
    pub published_at: Option<DateTime<Utc>>,
    pub collected_at: Option<DateTime<Utc>>,
    pub headline: String,
    pub author: Option<String>,
    pub geographic_reference: Option<String>,
    pub thematic_category: Option<String>,
    pub source_url: Option<Url>,
    full_text: String,
    character_count: usize,
    word_count: usize,
    pub featured_image_url: Option<Url>,
    pub extraction_method: Option<ExtractionMethod>,
    pub detected_language: Option<String>,
    pub ai_summary: Option<String>,
    pub quality_flags: BTreeSet<QualityFlag>,
    pub stage: Option<Stage>,
    pub edition_id: Option<String>,
}

impl NewsRecord {
    pub fn new(id: impl Into<String>, headline: impl Into<String>) -> Self {
        NewsRecord {
            id: id.into(),
            outlet_name: String::new(),
            source_domain: String::new(),
            published_at: None,
            collected_at: None,
            headline: headline.into(),
            author: None,
            geographic_reference: None,
            thematic_category: None,
            source_url: None,
            full_text: String::new(),
            character_count: 0,
            word_count: 0,
            featured_image_url: None,
            extraction_method: None,
            detected_language: None,
            ai_summary: None,
            quality_flags: BTreeSet::new(),
            stage: None,
            edition_id: None,
        }
    }

    pub fn full_text(&self) -> &str {
        &self.full_text
    }

    pub fn character_count(&self) -> usize {
        self.character_count
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }

    /// Replaces the text and recomputes both counts.
    pub fn set_full_text(&mut self, text: impl Into<String>) {
        self.full_text = text.into();
        self.character_count = text::char_count(&self.full_text);
        self.word_count = text::word_count(&self.full_text);
    }

    pub fn clear_full_text(&mut self) {
        self.set_full_text(String::new());
    }

    pub fn has_flag(&self, flag: &QualityFlag) -> bool {
        self.quality_flags.contains(flag)
    }

    pub fn flag(&mut self, flag: QualityFlag) {
        self.quality_flags.insert(flag);
    }

    pub fn non_html_kind(&self) -> Option<ResourceKind> {
        self.quality_flags.iter().find_map(|f| match f {
            QualityFlag::NonHtml(kind) => Some(*kind),
            _ => None,
        })
    }

    pub fn content_status(&self) -> ContentStatus {
        if self.has_flag(&QualityFlag::ReprocessManual) {
            ContentStatus::ReprocessManual
        } else if self.non_html_kind().is_some() {
            ContentStatus::NonHtml
        } else if self.has_flag(&QualityFlag::Paywalled) {
            ContentStatus::Paywalled
        } else if self.has_flag(&QualityFlag::NoContent) {
            ContentStatus::NoContent
        } else if self.full_text.is_empty() {
            ContentStatus::NotRetrieved
        } else {
            ContentStatus::Ok
        }
    }

    /// Lowercase key for the open-vocabulary section label.
    pub fn thematic_key(&self) -> Option<String> {
        self.thematic_category
            .as_deref()
            .map(|s| text::normalize_whitespace(s).to_lowercase())
            .filter(|s| !s.is_empty())
    }

    /// Calendar date of an exact (non-approximate) publication timestamp.
    pub fn exact_date(&self) -> Option<chrono::NaiveDate> {
        if self.has_flag(&QualityFlag::DateApproximate) {
            return None;
        }
        self.published_at.map(|t| t.date_naive())
    }

    pub fn quality_flags_string(&self) -> String {
        self.quality_flags
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("|")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_text() {
        let mut r = NewsRecord::new("a", "h");
        r.set_full_text("Uno dos\ntrés");
        assert_eq!(r.character_count(), 12);
        assert_eq!(r.word_count(), 3);
        r.clear_full_text();
        assert_eq!((r.character_count(), r.word_count()), (0, 0));
    }

    #[test]
    fn flags_round_trip_through_text() {
        for flag in [
            QualityFlag::NoContent,
            QualityFlag::NonHtml(ResourceKind::Pdf),
            QualityFlag::ReprocessManual,
            QualityFlag::Other("custom".into()),
        ] {
            assert_eq!(flag.to_string().parse::<QualityFlag>().unwrap(), flag);
        }
        assert_eq!(QualityFlag::NoContent.to_string(), "[NO CONTENT]");
    }

    #[test]
    fn status_precedence() {
        let mut r = NewsRecord::new("a", "h");
        assert_eq!(r.content_status(), ContentStatus::NotRetrieved);
        r.set_full_text("body");
        assert_eq!(r.content_status(), ContentStatus::Ok);
        r.flag(QualityFlag::ReprocessManual);
        assert_eq!(r.content_status(), ContentStatus::ReprocessManual);
    }
}
