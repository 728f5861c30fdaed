use std::collections::HashMap;

use ego_tree::NodeId;
use scraper::{ElementRef, Html, Node, Selector};
use url::Url;

use super::lang::detect_language;
use crate::text::{normalize_whitespace, word_count};

const BOILERPLATE_TAGS: &[&str] = &[
    "nav",
    "header",
    "footer",
    "aside",
    "form",
    "script",
    "style",
    "noscript",
    "iframe",
    "template",
    "svg",
    "button",
    "select",
    "figcaption",
];

const BOILERPLATE_TOKENS: &[&str] = &[
    "nav",
    "navbar",
    "navigation",
    "menu",
    "sidebar",
    "aside",
    "ad",
    "ads",
    "advert",
    "advertisement",
    "banner",
    "sponsor",
    "sponsored",
    "promo",
    "comment",
    "comments",
    "related",
    "share",
    "social",
    "cookie",
    "cookies",
    "footer",
    "header",
    "masthead",
    "breadcrumb",
    "breadcrumbs",
    "newsletter",
    "popup",
    "widget",
    "outbrain",
    "taboola",
    "recommended",
    "trending",
];

const BOILERPLATE_ROLES: &[&str] = &["navigation", "complementary", "banner", "contentinfo", "search"];

const BLOCK_TAGS: &[&str] = &["p", "h2", "h3", "h4", "h5", "h6", "li", "blockquote", "pre", "dd"];

const PAYWALL_SELECTORS: &str =
    ".paywall, #paywall, [data-paywall], .subscriber-only, .premium-wall, .meter-wall, .regwall";

const SUBSCRIBE_WORDS: &[&str] = &[
    "subscribe",
    "subscription",
    "subscribers",
    "suscríbete",
    "suscribirse",
    "suscriptores",
    "suscripción",
    "abonnez",
    "abonnement",
    "abonnieren",
    "abbonati",
    "assine",
];

/// Paywall pages are short; anything this long counts as real text.
pub const PAYWALL_MAX_TOKENS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractStatus {
    Ok,
    NoContent,
    Paywalled,
    NonHtml,
}

impl ExtractStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExtractStatus::Ok => "ok",
            ExtractStatus::NoContent => "no_content",
            ExtractStatus::Paywalled => "paywalled",
            ExtractStatus::NonHtml => "non_html",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedContent {
    /// Main text, one block per line. Empty unless `status` is `Ok`.
    pub full_text: String,
    pub featured_image_url: Option<Url>,
    /// ISO 639-1 code, or `"und"`.
    pub detected_language: String,
    pub status: ExtractStatus,
    /// The page's meta keywords look stuffed (long or repetitive).
    pub keyword_stuffing: bool,
}

impl ExtractedContent {
    pub fn empty(status: ExtractStatus, fallback_language: Option<&str>) -> Self {
        ExtractedContent {
            full_text: String::new(),
            featured_image_url: None,
            detected_language: fallback_language.unwrap_or("und").to_string(),
            status,
            keyword_stuffing: false,
        }
    }
}

fn class_tokens(el: &scraper::node::Element) -> impl Iterator<Item = String> + '_ {
    el.attr("class")
        .into_iter()
        .chain(el.attr("id"))
        .flat_map(|s| s.split_whitespace())
        .flat_map(|s| s.split(['-', '_']))
        .map(|s| s.to_ascii_lowercase())
}

fn is_boilerplate(el: &scraper::node::Element) -> bool {
    let name = el.name();
    if BOILERPLATE_TAGS.contains(&name) {
        return true;
    }
    if let Some(role) = el.attr("role") {
        if BOILERPLATE_ROLES.contains(&role.to_ascii_lowercase().as_str()) {
            return true;
        }
    }
    // containers named "article-header" etc. are still boilerplate, but a
    // plain <article class="..."> is judged by its own tokens only
    class_tokens(el).any(|t| BOILERPLATE_TOKENS.contains(&t.as_str()))
}

fn in_boilerplate(el: ElementRef<'_>) -> bool {
    if is_boilerplate(el.value()) {
        return true;
    }
    el.ancestors()
        .filter_map(ElementRef::wrap)
        .any(|a| is_boilerplate(a.value()))
}

/// Visible text of `el`, skipping script/style descendants.
fn visible_text(el: ElementRef<'_>) -> (String, usize) {
    let mut out = String::new();
    let mut link_chars = 0;
    for node in el.descendants() {
        if let Node::Text(t) = node.value() {
            let hidden = node
                .ancestors()
                .filter_map(ElementRef::wrap)
                .take_while(|a| a.id() != el.id())
                .any(|a| matches!(a.value().name(), "script" | "style" | "noscript"));
            if hidden {
                continue;
            }
            let in_link = node
                .ancestors()
                .filter_map(ElementRef::wrap)
                .take_while(|a| a.id() != el.id())
                .any(|a| a.value().name() == "a")
                || el.value().name() == "a";
            out.push_str(t);
            out.push(' ');
            if in_link {
                link_chars += t.trim().chars().count();
            }
        }
    }
    (normalize_whitespace(&out), link_chars)
}

struct Block<'a> {
    el: ElementRef<'a>,
    text: String,
}

fn content_blocks(doc: &Html) -> Vec<Block<'_>> {
    let sel = Selector::parse(&BLOCK_TAGS.join(", ")).unwrap();
    let mut blocks = Vec::new();
    for el in doc.select(&sel) {
        // innermost blocks only (li > p contributes the p)
        let has_inner_block = el
            .descendants()
            .skip(1)
            .filter_map(ElementRef::wrap)
            .any(|d| BLOCK_TAGS.contains(&d.value().name()));
        if has_inner_block || in_boilerplate(el) {
            continue;
        }
        let (text, link_chars) = visible_text(el);
        if text.is_empty() {
            continue;
        }
        let chars = text.chars().count();
        // link lists: menus, teaser headlines
        if link_chars * 2 > chars {
            continue;
        }
        blocks.push(Block { el, text });
    }
    blocks
}

/// Picks the container that holds the densest run of content blocks:
/// each block credits its parent fully and its grandparent by half, and
/// `<article>`/`<main>` containers get a modest bonus.
fn best_container(blocks: &[Block<'_>]) -> Option<NodeId> {
    let mut scores: HashMap<NodeId, f64> = HashMap::new();
    let mut order: Vec<NodeId> = Vec::new();
    for b in blocks {
        let len = b.text.chars().count() as f64;
        let mut credit = |id: NodeId, w: f64| {
            let e = scores.entry(id).or_insert_with(|| {
                order.push(id);
                0.0
            });
            *e += w;
        };
        let mut anc = b.el.ancestors().filter_map(ElementRef::wrap);
        if let Some(p) = anc.next() {
            credit(p.id(), len);
            if let Some(gp) = anc.next() {
                credit(gp.id(), len / 2.0);
            }
        }
    }
    let mut best: Option<(NodeId, f64)> = None;
    for id in order {
        let mut score = scores[&id];
        if let Some(el) = blocks
            .iter()
            .flat_map(|b| b.el.ancestors())
            .find(|n| n.id() == id)
            .and_then(ElementRef::wrap)
        {
            let name = el.value().name();
            if name == "article" || name == "main" || el.value().attr("role") == Some("main") {
                score *= 1.25;
            }
        }
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((id, score));
        }
    }
    best.map(|(id, _)| id)
}

fn meta_content<'a>(doc: &'a Html, selector: &str) -> Option<&'a str> {
    let sel = Selector::parse(selector).ok()?;
    doc.select(&sel).next()?.value().attr("content")
}

fn stuffed_keywords(doc: &Html) -> bool {
    let Some(raw) = meta_content(doc, "meta[name=keywords]") else {
        return false;
    };
    let terms: Vec<String> = raw
        .split(',')
        .map(|t| normalize_whitespace(t).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &terms {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    terms.len() >= 15 || counts.values().any(|&c| c >= 3)
}

fn looks_paywalled(doc: &Html, full_text: &str) -> bool {
    if word_count(full_text) >= PAYWALL_MAX_TOKENS {
        return false;
    }
    let marker = Selector::parse(PAYWALL_SELECTORS)
        .map(|s| doc.select(&s).next().is_some())
        .unwrap_or(false);
    let lower = full_text.to_lowercase();
    marker || SUBSCRIBE_WORDS.iter().any(|w| lower.contains(w))
}

/// Extracts the main text of an HTML page.
///
/// `base` resolves a relative featured-image URL; `fallback_language` is
/// used when the stopword profile is inconclusive.
pub fn extract_article_text(body_html: &str, base: Option<&Url>, fallback_language: Option<&str>) -> ExtractedContent {
    let doc = Html::parse_document(body_html);
    let blocks = content_blocks(&doc);
    let full_text = match best_container(&blocks) {
        Some(container) => blocks
            .iter()
            .filter(|b| b.el.ancestors().any(|a| a.id() == container))
            .map(|b| b.text.as_str())
            .collect::<Vec<_>>()
            .join("\n"),
        None => String::new(),
    };

    let featured_image_url = meta_content(&doc, "meta[property=\"og:image\"]")
        .or_else(|| meta_content(&doc, "meta[name=\"twitter:image\"]"))
        .and_then(|src| match base {
            Some(b) => b.join(src.trim()).ok(),
            None => Url::parse(src.trim()).ok(),
        });
    let keyword_stuffing = stuffed_keywords(&doc);

    let paywalled = looks_paywalled(&doc, &full_text);
    let status = if paywalled {
        ExtractStatus::Paywalled
    } else if full_text.trim().is_empty() {
        ExtractStatus::NoContent
    } else {
        ExtractStatus::Ok
    };
    let detected_language = if status == ExtractStatus::Ok {
        detect_language(&full_text, fallback_language)
    } else {
        fallback_language.unwrap_or("und").to_string()
    };
    ExtractedContent {
        full_text: if status == ExtractStatus::Ok {
            full_text
        } else {
            String::new()
        },
        featured_image_url,
        detected_language,
        status,
        keyword_stuffing,
    }
}
