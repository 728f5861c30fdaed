use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

use super::SimError;
use crate::dedup::Canonicalizer;

/// Bundled corpus: 30 valid articles plus 17 noise items.
pub const DEFAULT_CORPUS: &str = include_str!("../../data/default_corpus.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureArticle {
    pub id: String,
    pub headline: String,
    pub url: Url,
    pub outlet: String,
    pub language: String,
    pub contains_keyword: bool,
    pub published_at: Option<DateTime<Utc>>,
    /// Age text ("hace 3 días") shown instead of a timestamp when a listing asks for it.
    #[serde(default)]
    pub relative_time: Option<String>,
    pub body_html: String,
    /// The text a correct extractor returns for `body_html`.
    #[serde(default)]
    pub planted_text: Option<String>,
    #[serde(default)]
    pub author: Option<String>,
    /// First request answers 503.
    #[serde(default)]
    pub flaky: bool,
    /// Served as a short teaser behind a subscription wall.
    #[serde(default)]
    pub paywalled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Pdf,
    Image,
    Audio,
    Video,
    Archive,
    Executable,
    Homepage,
    SectionIndex,
    PlaceholderText,
    AdultSeo,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 10] = [
        NoiseKind::Pdf,
        NoiseKind::Image,
        NoiseKind::Audio,
        NoiseKind::Video,
        NoiseKind::Archive,
        NoiseKind::Executable,
        NoiseKind::Homepage,
        NoiseKind::SectionIndex,
        NoiseKind::PlaceholderText,
        NoiseKind::AdultSeo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Pdf => "pdf",
            NoiseKind::Image => "image",
            NoiseKind::Audio => "audio",
            NoiseKind::Video => "video",
            NoiseKind::Archive => "archive",
            NoiseKind::Executable => "executable",
            NoiseKind::Homepage => "homepage",
            NoiseKind::SectionIndex => "section_index",
            NoiseKind::PlaceholderText => "placeholder_text",
            NoiseKind::AdultSeo => "adult_seo",
        }
    }

    /// Content-Type the server sends.
    pub fn content_type(self) -> &'static str {
        match self {
            NoiseKind::Pdf => "application/pdf",
            NoiseKind::Image => "image/jpeg",
            NoiseKind::Audio => "audio/mpeg",
            NoiseKind::Video => "video/mp4",
            NoiseKind::Archive => "application/zip",
            NoiseKind::Executable => "application/vnd.microsoft.portable-executable",
            _ => "text/html; charset=utf-8",
        }
    }

    /// Leading bytes of a real file of this kind; empty for HTML kinds.
    pub fn magic(self) -> &'static [u8] {
        match self {
            NoiseKind::Pdf => b"%PDF-1.4\n",
            NoiseKind::Image => b"\xFF\xD8\xFF\xE0\x00\x10JFIF\x00",
            NoiseKind::Audio => b"ID3\x03\x00\x00\x00\x00\x00\x00",
            NoiseKind::Video => b"\x00\x00\x00\x18ftypmp42",
            NoiseKind::Archive => b"PK\x03\x04\x14\x00\x00\x00",
            NoiseKind::Executable => b"MZ\x90\x00\x03\x00\x00\x00",
            _ => b"",
        }
    }

    pub fn is_html(self) -> bool {
        self.magic().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseItem {
    pub id: String,
    pub kind: NoiseKind,
    pub url: Url,
    pub headline: String,
    pub outlet: String,
    pub published_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub relative_time: Option<String>,
    /// HTML for page kinds; for binary kinds the text after the magic bytes.
    pub payload: String,
}

impl NoiseItem {
    pub fn body(&self) -> Vec<u8> {
        let mut out = self.kind.magic().to_vec();
        out.extend_from_slice(self.payload.as_bytes());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListingRef {
    pub url: Url,
    /// Aggregator redirects before the publisher; 0 links directly.
    #[serde(default)]
    pub hops: u8,
    /// Direct links carry utm parameters.
    #[serde(default)]
    pub tracking: bool,
    /// Overrides the item's headline in this listing.
    #[serde(default)]
    pub headline: Option<String>,
    /// Show the item's relative age instead of its timestamp.
    #[serde(default)]
    pub relative: bool,
}

impl ListingRef {
    pub fn to(url: Url) -> Self {
        ListingRef {
            url,
            hops: 0,
            tracking: false,
            headline: None,
            relative: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Listing {
    pub edition: String,
    /// Rendered query string exactly as the harvester sends it.
    pub query: String,
    pub results: Vec<ListingRef>,
}

/// Something a listing can point at.
#[derive(Debug, Clone, Copy)]
pub enum Item<'a> {
    Article(&'a FixtureArticle),
    Noise(&'a NoiseItem),
}

impl<'a> Item<'a> {
    pub fn id(&self) -> &'a str {
        match self {
            Item::Article(a) => &a.id,
            Item::Noise(n) => &n.id,
        }
    }
    pub fn url(&self) -> &'a Url {
        match self {
            Item::Article(a) => &a.url,
            Item::Noise(n) => &n.url,
        }
    }
    pub fn headline(&self) -> &'a str {
        match self {
            Item::Article(a) => &a.headline,
            Item::Noise(n) => &n.headline,
        }
    }
    pub fn outlet(&self) -> &'a str {
        match self {
            Item::Article(a) => &a.outlet,
            Item::Noise(n) => &n.outlet,
        }
    }
    pub fn published_at(&self) -> Option<DateTime<Utc>> {
        match self {
            Item::Article(a) => a.published_at,
            Item::Noise(n) => n.published_at,
        }
    }
    pub fn relative_time(&self) -> Option<&'a str> {
        match self {
            Item::Article(a) => a.relative_time.as_deref(),
            Item::Noise(n) => n.relative_time.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureCorpus {
    #[serde(default)]
    pub topic: Option<String>,
    #[serde(default)]
    pub articles: Vec<FixtureArticle>,
    #[serde(default)]
    pub noise: Vec<NoiseItem>,
    #[serde(default)]
    pub listings: Vec<Listing>,
}

fn url_key(canon: &Canonicalizer, url: &Url) -> String {
    canon
        .canonicalize(url)
        .map(|c| c.to_string())
        .unwrap_or_else(|_| url.to_string())
}

impl FixtureCorpus {
    pub fn from_json_str(s: &str) -> Result<Self, SimError> {
        let corpus: FixtureCorpus = serde_json::from_str(s).map_err(|e| SimError::Parse(e.to_string()))?;
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let s = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&s)
    }

    pub fn default_corpus() -> Self {
        Self::from_json_str(DEFAULT_CORPUS).expect("bundled corpus is valid")
    }

    /// Urls unique (also after canonicalization), every listing entry
    /// defined, listing keys unique.
    pub fn validate(&self) -> Result<(), SimError> {
        let canon = Canonicalizer::default();
        let mut seen = HashSet::new();
        let mut ids = HashSet::new();
        for item in self.items() {
            if !seen.insert(url_key(&canon, item.url())) {
                return Err(SimError::DuplicateUrl(item.url().to_string()));
            }
            if !ids.insert(item.id()) {
                return Err(SimError::DuplicateId(item.id().to_string()));
            }
        }
        let mut keys = HashSet::new();
        for l in &self.listings {
            if !keys.insert((l.edition.as_str(), l.query.as_str())) {
                return Err(SimError::DuplicateListing {
                    edition: l.edition.clone(),
                    query: l.query.clone(),
                });
            }
            for r in &l.results {
                if !seen.contains(&url_key(&canon, &r.url)) {
                    return Err(SimError::DanglingReference(r.url.to_string()));
                }
            }
        }
        Ok(())
    }

    pub fn items(&self) -> impl Iterator<Item = Item<'_>> {
        self.articles
            .iter()
            .map(Item::Article)
            .chain(self.noise.iter().map(Item::Noise))
    }

    /// Map from canonical url key to item.
    pub fn index(&self) -> BTreeMap<String, Item<'_>> {
        let canon = Canonicalizer::default();
        self.items().map(|i| (url_key(&canon, i.url()), i)).collect()
    }

    pub fn find(&self, url: &Url) -> Option<Item<'_>> {
        let key = url_key(&Canonicalizer::default(), url);
        self.items()
            .find(|i| i.url() == url)
            .or_else(|| self.index().remove(&key))
    }

    pub fn listing(&self, edition: &str, query: &str) -> Option<&Listing> {
        self.listings.iter().find(|l| l.edition == edition && l.query == query)
    }

    /// Articles that carry the topic: what a correct pipeline keeps.
    pub fn valid_articles(&self) -> impl Iterator<Item = &FixtureArticle> {
        self.articles.iter().filter(|a| a.contains_keyword)
    }

    /// Noise items plus keyword-free articles.
    pub fn noise_count(&self) -> usize {
        self.noise.len() + self.articles.iter().filter(|a| !a.contains_keyword).count()
    }

    pub fn noise_by_kind(&self) -> BTreeMap<NoiseKind, usize> {
        let mut out = BTreeMap::new();
        for n in &self.noise {
            *out.entry(n.kind).or_default() += 1;
        }
        out
    }

    /// Hosts served as publishers.
    pub fn publisher_hosts(&self) -> HashSet<String> {
        self.items()
            .filter_map(|i| i.url().host_str().map(str::to_ascii_lowercase))
            .collect()
    }
}
