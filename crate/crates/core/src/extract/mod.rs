//! Publisher page retrieval: resource typing, main-text extraction and
//! content backfill for records that came back empty.

mod article;
mod classify;
mod lang;

use url::Url;

pub use article::{extract_article_text, ExtractStatus, ExtractedContent, PAYWALL_MAX_TOKENS};
pub use classify::{classify_resource, ClassifiedVia, ResourceClass, ResourceKind};
pub use lang::{detect_language, stopword_hits, STOPWORDS};

use crate::harvest::{resolve_and_fetch, FetchedPage, Fetcher, ResolveError};
use crate::store::{ExtractionMethod, NewsRecord, QualityFlag};

/// Classification plus extracted text for one fetched page.
#[derive(Debug, Clone)]
pub struct PageContent {
    pub class: ResourceClass,
    pub content: ExtractedContent,
}

/// Language half of an edition id such as `es:ES`.
pub fn edition_language(edition_id: &str) -> Option<&str> {
    edition_id.split(':').next().filter(|s| !s.is_empty())
}

pub fn process_page(page: &FetchedPage, fallback_language: Option<&str>) -> PageContent {
    let prefix = &page.body[..page.body.len().min(1024)];
    let class = classify_resource(&page.url, page.content_type.as_deref(), Some(prefix));
    let content = if class.kind.is_html() {
        extract_article_text(&page.body_text(), Some(&page.url), fallback_language)
    } else {
        ExtractedContent::empty(ExtractStatus::NonHtml, fallback_language)
    };
    PageContent { class, content }
}

/// Follows redirects from `url`, then classifies and extracts.
pub fn fetch_content(
    url: &Url,
    fetcher: &Fetcher,
    fallback_language: Option<&str>,
) -> Result<(Url, PageContent), ResolveError> {
    let (final_url, page) = resolve_and_fetch(url, fetcher)?;
    Ok((final_url, process_page(&page, fallback_language)))
}

/// Writes extraction results into `record`. Existing non-empty text is
/// never replaced.
pub fn apply_content(record: &mut NewsRecord, page: &PageContent, method: ExtractionMethod) {
    let c = &page.content;
    if c.keyword_stuffing {
        record.flag(QualityFlag::KeywordStuffing);
    }
    if record.featured_image_url.is_none() {
        record.featured_image_url = c.featured_image_url.clone();
    }
    if !record.full_text().is_empty() {
        return;
    }
    record.detected_language = Some(c.detected_language.clone());
    match c.status {
        ExtractStatus::Ok => {
            record.set_full_text(c.full_text.clone());
            record.extraction_method = Some(method);
            for f in [QualityFlag::NoContent, QualityFlag::FetchFailed, QualityFlag::Paywalled] {
                record.quality_flags.remove(&f);
            }
        }
        ExtractStatus::Paywalled => {
            record.flag(QualityFlag::Paywalled);
            record.flag(QualityFlag::NoContent);
        }
        ExtractStatus::NoContent => record.flag(QualityFlag::NoContent),
        ExtractStatus::NonHtml => {
            record.flag(QualityFlag::NonHtml(page.class.kind));
            record.flag(QualityFlag::NoContent);
        }
    }
}

/// Marks a record whose page could not be retrieved at all.
pub fn mark_fetch_failure(record: &mut NewsRecord) {
    if record.full_text().is_empty() {
        record.flag(QualityFlag::FetchFailed);
        record.flag(QualityFlag::NoContent);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackfillOutcome {
    Filled,
    NoContent,
    Paywalled,
    NonHtml(ResourceKind),
    FetchError(String),
    /// Text already present or no URL to fetch.
    Skipped,
}

#[derive(Debug, Clone, Default)]
pub struct BackfillReport {
    pub outcomes: Vec<(String, BackfillOutcome)>,
}

impl BackfillReport {
    pub fn count(&self, pred: impl Fn(&BackfillOutcome) -> bool) -> usize {
        self.outcomes.iter().filter(|(_, o)| pred(o)).count()
    }

    pub fn filled(&self) -> usize {
        self.count(|o| *o == BackfillOutcome::Filled)
    }
}

/// Second pass over records whose text is empty: refetch each source URL
/// and either fill the text or record why it stays empty. Per-record
/// failures land in the report; nothing is raised.
pub fn backfill_content(records: Vec<NewsRecord>, fetcher: &Fetcher) -> (Vec<NewsRecord>, BackfillReport) {
    let mut report = BackfillReport::default();
    let mut out = Vec::with_capacity(records.len());
    for mut rec in records {
        let outcome = match (&rec.source_url, rec.full_text().is_empty()) {
            (Some(url), true) => {
                let fallback = rec
                    .edition_id
                    .as_deref()
                    .and_then(edition_language)
                    .map(str::to_string)
                    .or_else(|| rec.detected_language.clone());
                match fetch_content(url, fetcher, fallback.as_deref()) {
                    Ok((_, page)) => {
                        apply_content(&mut rec, &page, ExtractionMethod::Backfill);
                        match page.content.status {
                            ExtractStatus::Ok => BackfillOutcome::Filled,
                            ExtractStatus::NoContent => BackfillOutcome::NoContent,
                            ExtractStatus::Paywalled => BackfillOutcome::Paywalled,
                            ExtractStatus::NonHtml => BackfillOutcome::NonHtml(page.class.kind),
                        }
                    }
                    Err(e) => {
                        mark_fetch_failure(&mut rec);
                        BackfillOutcome::FetchError(e.to_string())
                    }
                }
            }
            _ => BackfillOutcome::Skipped,
        };
        report.outcomes.push((rec.id.clone(), outcome));
        out.push(rec);
    }
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_never_overwrites_text() {
        let mut r = NewsRecord::new("a", "h");
        r.set_full_text("original");
        let page = PageContent {
            class: classify_resource(&Url::parse("http://x.es/").unwrap(), Some("text/html"), None),
            content: ExtractedContent {
                full_text: "replacement".into(),
                featured_image_url: None,
                detected_language: "es".into(),
                status: ExtractStatus::Ok,
                keyword_stuffing: false,
            },
        };
        apply_content(&mut r, &page, ExtractionMethod::Backfill);
        assert_eq!(r.full_text(), "original");
    }

    #[test]
    fn non_html_flags() {
        let mut r = NewsRecord::new("a", "h");
        let page = PageContent {
            class: classify_resource(&Url::parse("http://x.es/a.pdf").unwrap(), None, Some(b"%PDF-1.4")),
            content: ExtractedContent::empty(ExtractStatus::NonHtml, None),
        };
        apply_content(&mut r, &page, ExtractionMethod::DirectFetch);
        assert!(r.has_flag(&QualityFlag::NonHtml(ResourceKind::Pdf)));
        assert!(r.has_flag(&QualityFlag::NoContent));
        assert_eq!(r.full_text(), "");
    }

    #[test]
    fn edition_language_split() {
        assert_eq!(edition_language("es:ES"), Some("es"));
        assert_eq!(edition_language(""), None);
    }
}
