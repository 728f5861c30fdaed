//! Query execution against an aggregator endpoint.
//!
//! Every outbound request goes through one [`PoliteScheduler`], which owns
//! the per-host delays and the User-Agent rotation. The HTTP client keeps no
//! cookie store, so each request is anonymous.

mod listing;
mod politeness;

use std::collections::HashSet;
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

pub use listing::{resolve_relative, ListingEntry, ListingParser, ListingTime, SimpleListingParser};
pub use politeness::{
    schedule_delay, Clock, FetchPolicy, PoliteScheduler, RequestSlot, SimulatedClock, SystemClock, DEFAULT_USER_AGENTS,
    POLITENESS_FLOOR_S,
};

use crate::dedup::DedupItem;
use crate::plan::{QuerySpec, Stage};
use crate::text;

pub const MAX_REDIRECTS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum HarvestError {
    #[error("invalid fetch policy: {0}")]
    Policy(String),
    #[error("http client setup failed: {0}")]
    Client(String),
    #[error("fetch of {url} failed after {attempts} attempt(s){}: {reason}", digest_note(.query_digest))]
    Fetch {
        url: String,
        query_digest: Option<String>,
        attempts: u32,
        reason: String,
    },
    #[error("unparseable listing for query {query_digest}: {reason}")]
    Parse {
        query_digest: String,
        reason: String,
        /// Raw response, kept for diagnostics.
        body: String,
    },
}

fn digest_note(d: &Option<String>) -> String {
    d.as_ref().map(|d| format!(" (query {d})")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResolveError {
    #[error("redirect loop: {}", .chain.join(" -> "))]
    Loop { chain: Vec<String> },
    #[error("more than {MAX_REDIRECTS} redirects starting at {start}")]
    TooDeep { start: String },
    #[error("{url} answered with status {status}")]
    Status { url: String, status: u16 },
    #[error("redirect from {url} has no usable Location header")]
    BadLocation { url: String },
    #[error("{0}")]
    Fetch(String),
}

/// One HTTP response, redirects not followed.
#[derive(Debug, Clone)]
pub struct FetchedPage {
    pub url: Url,
    pub status: u16,
    pub content_type: Option<String>,
    pub location: Option<String>,
    pub body: Vec<u8>,
    pub attempts: u32,
}

impl FetchedPage {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn is_redirect(&self) -> bool {
        (300..400).contains(&self.status)
    }

    pub fn body_text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

/// Blocking HTTP client bound to a scheduler.
#[derive(Debug, Clone)]
pub struct Fetcher {
    client: reqwest::blocking::Client,
    scheduler: Arc<PoliteScheduler>,
}

fn host_key(url: &Url) -> String {
    match (url.host_str(), url.port()) {
        (Some(h), Some(p)) => format!("{h}:{p}"),
        (Some(h), None) => h.to_string(),
        _ => String::new(),
    }
}

impl Fetcher {
    /// `proxy`, when given, receives every plain-http request. The fixture
    /// server uses this to stand in for publisher hosts.
    pub fn new(scheduler: Arc<PoliteScheduler>, proxy: Option<&Url>) -> Result<Self, HarvestError> {
        let mut builder = reqwest::blocking::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .timeout(scheduler.policy().timeout());
        builder = match proxy {
            Some(p) => {
                builder.proxy(reqwest::Proxy::http(p.as_str()).map_err(|e| HarvestError::Client(e.to_string()))?)
            }
            None => builder,
        };
        let client = builder.build().map_err(|e| HarvestError::Client(e.to_string()))?;
        Ok(Fetcher { client, scheduler })
    }

    pub fn scheduler(&self) -> &Arc<PoliteScheduler> {
        &self.scheduler
    }

    pub fn policy(&self) -> &FetchPolicy {
        self.scheduler.policy()
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.scheduler.clock().now()
    }

    fn attempt(&self, url: &Url) -> Result<FetchedPage, reqwest::Error> {
        let slot = self.scheduler.acquire(&host_key(url));
        let resp = self
            .client
            .get(url.clone())
            .header(reqwest::header::USER_AGENT, slot.user_agent)
            .send()?;
        let status = resp.status().as_u16();
        let header = |name: reqwest::header::HeaderName| {
            resp.headers()
                .get(name)
                .and_then(|v| v.to_str().ok())
                .map(str::to_string)
        };
        let content_type = header(reqwest::header::CONTENT_TYPE);
        let location = header(reqwest::header::LOCATION);
        let body = resp.bytes()?.to_vec();
        Ok(FetchedPage {
            url: url.clone(),
            status,
            content_type,
            location,
            body,
            attempts: 1,
        })
    }

    /// GET with retries on transport errors, 429 and 5xx. Retry waits
    /// double from `max_delay_s`. A final 5xx is returned, not raised.
    pub fn get(&self, url: &Url) -> Result<FetchedPage, HarvestError> {
        let policy = self.policy();
        let mut last_err = String::new();
        for attempt in 0..=policy.max_retries {
            if attempt > 0 {
                self.scheduler.clock().sleep_for(policy.backoff(attempt));
            }
            match self.attempt(url) {
                Ok(mut page) => {
                    page.attempts = attempt + 1;
                    let retryable = page.status == 429 || page.status >= 500;
                    if retryable && attempt < policy.max_retries {
                        tracing::debug!(%url, status = page.status, attempt, "retrying");
                        continue;
                    }
                    if attempt > 0 {
                        tracing::info!(%url, retries = attempt, "fetched after retries");
                    }
                    return Ok(page);
                }
                Err(e) => {
                    tracing::debug!(%url, attempt, error = %e, "request failed");
                    last_err = e.to_string();
                }
            }
        }
        Err(HarvestError::Fetch {
            url: url.to_string(),
            query_digest: None,
            attempts: policy.max_retries + 1,
            reason: last_err,
        })
    }
}

/// One aggregator hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResult {
    pub id: String,
    pub headline: String,
    pub result_url: Url,
    pub outlet_label: String,
    pub published_at: Option<DateTime<Utc>>,
    /// True when `published_at` was derived from a relative age.
    pub published_approximate: bool,
    pub edition_id: String,
    pub query_digest: String,
    pub stage: Stage,
    pub position: usize,
    pub collected_at: DateTime<Utc>,
    /// Publisher URL after redirect resolution, once known.
    pub publisher_url: Option<Url>,
}

impl RawResult {
    /// Publisher URL when resolved, else the listing URL.
    pub fn effective_url(&self) -> &Url {
        self.publisher_url.as_ref().unwrap_or(&self.result_url)
    }
}

impl DedupItem for RawResult {
    fn item_id(&self) -> &str {
        &self.id
    }
    fn item_url(&self) -> Option<&Url> {
        Some(self.effective_url())
    }
    fn item_headline(&self) -> &str {
        &self.headline
    }
    fn item_date(&self) -> Option<NaiveDate> {
        if self.published_approximate {
            None
        } else {
            self.published_at.map(|t| t.date_naive())
        }
    }
    fn item_collected_at(&self) -> Option<DateTime<Utc>> {
        Some(self.collected_at)
    }
}

/// Results of one query.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub results: Vec<RawResult>,
    /// The listing reached the result cap; narrower queries are needed.
    pub saturated: bool,
    pub attempts: u32,
}

/// `<endpoint>/search?q=<rendered>&edition=<id>`
pub fn search_url(endpoint: &Url, q: &QuerySpec) -> Url {
    let mut url = endpoint.clone();
    let path = format!("{}/search", endpoint.path().trim_end_matches('/'));
    url.set_path(&path);
    url.set_fragment(None);
    url.query_pairs_mut()
        .clear()
        .append_pair("q", &q.render())
        .append_pair("edition", &q.edition.edition_id);
    url
}

/// Runs one query and parses its listing.
pub fn execute_query(
    q: &QuerySpec,
    fetcher: &Fetcher,
    endpoint: &Url,
    parser: &dyn ListingParser,
) -> Result<QueryOutcome, HarvestError> {
    let digest = q.digest();
    let url = search_url(endpoint, q);
    let page = fetcher.get(&url).map_err(|e| match e {
        HarvestError::Fetch {
            url, attempts, reason, ..
        } => HarvestError::Fetch {
            url,
            query_digest: Some(digest.clone()),
            attempts,
            reason,
        },
        other => other,
    })?;
    if !page.is_success() {
        return Err(HarvestError::Fetch {
            url: url.to_string(),
            query_digest: Some(digest),
            attempts: page.attempts,
            reason: format!("status {}", page.status),
        });
    }
    let collected_at = fetcher.now();
    let body = page.body_text();
    let entries = parser.parse(&body).map_err(|reason| HarvestError::Parse {
        query_digest: digest.clone(),
        reason,
        body: body.clone(),
    })?;

    let mut results = Vec::with_capacity(entries.len());
    for (position, entry) in entries.into_iter().enumerate() {
        let headline = text::normalize_whitespace(&entry.headline);
        if headline.is_empty() {
            tracing::warn!(query = %digest, position, "listing entry without headline skipped");
            continue;
        }
        let result_url = match endpoint.join(&entry.href) {
            Ok(u) => u,
            Err(e) => {
                tracing::warn!(query = %digest, position, href = %entry.href, error = %e, "bad result url skipped");
                continue;
            }
        };
        let (published_at, published_approximate) = match &entry.time {
            ListingTime::Exact(t) => (Some(*t), false),
            ListingTime::Relative(s) => match resolve_relative(s, collected_at) {
                Some(t) => (Some(t), true),
                None => (None, false),
            },
            ListingTime::Missing => (None, false),
        };
        results.push(RawResult {
            id: text::short_digest(format!("{digest}#{position}"), 16),
            headline,
            result_url,
            outlet_label: entry.outlet,
            published_at,
            published_approximate,
            edition_id: q.edition.edition_id.clone(),
            query_digest: digest.clone(),
            stage: q.stage(),
            position,
            collected_at,
            publisher_url: None,
        });
    }
    let saturated = results.len() >= fetcher.policy().result_cap;
    if saturated {
        tracing::info!(query = %q.render(), edition = %q.edition.edition_id, "result cap reached");
    }
    Ok(QueryOutcome {
        results,
        saturated,
        attempts: page.attempts,
    })
}

/// Follows redirects from `start` and returns the terminal URL with its
/// response.
pub fn resolve_and_fetch(start: &Url, fetcher: &Fetcher) -> Result<(Url, FetchedPage), ResolveError> {
    let mut current = start.clone();
    let mut seen: HashSet<String> = HashSet::new();
    let mut chain = vec![current.to_string()];
    seen.insert(current.to_string());
    loop {
        let page = fetcher.get(&current).map_err(|e| ResolveError::Fetch(e.to_string()))?;
        if page.is_success() {
            return Ok((current, page));
        }
        if !page.is_redirect() {
            return Err(ResolveError::Status {
                url: current.to_string(),
                status: page.status,
            });
        }
        let next = page
            .location
            .as_deref()
            .and_then(|loc| current.join(loc).ok())
            .ok_or_else(|| ResolveError::BadLocation {
                url: current.to_string(),
            })?;
        chain.push(next.to_string());
        if !seen.insert(next.to_string()) {
            return Err(ResolveError::Loop { chain });
        }
        if chain.len() > MAX_REDIRECTS + 1 {
            return Err(ResolveError::TooDeep {
                start: start.to_string(),
            });
        }
        current = next;
    }
}

/// Final publisher URL for a listing link; identity when not redirected.
pub fn resolve_redirect(result_url: &Url, fetcher: &Fetcher) -> Result<Url, ResolveError> {
    resolve_and_fetch(result_url, fetcher).map(|(u, _)| u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{PortalEdition, QueryScope};

    #[test]
    fn search_url_shape() {
        let q = QuerySpec {
            edition: PortalEdition::new("ES", "es"),
            topic: "IFMIF-DONES".into(),
            scope: QueryScope::Domain {
                domain: "elpais.com".into(),
            },
        };
        let u = search_url(&Url::parse("http://127.0.0.1:9/").unwrap(), &q);
        assert_eq!(
            u.as_str(),
            "http://127.0.0.1:9/search?q=IFMIF-DONES+site%3Aelpais.com&edition=es%3AES"
        );
        let u = search_url(&Url::parse("http://h/api").unwrap(), &q);
        assert_eq!(u.path(), "/api/search");
    }
}
