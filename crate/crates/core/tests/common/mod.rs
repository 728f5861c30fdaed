//! Deliberately naive reference implementations shared by test targets.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use chrono::{TimeZone, Utc};
use newsharvest::store::NewsRecord;
use rand::rngs::StdRng;
use rand::Rng;
use url::Url;

const VOCAB: &[&str] = &[
    "IFMIF-DONES",
    "Granada",
    "acelerador",
    "fusión",
    "neutrones",
    "Escúzar",
    "EU",
    "ITER",
    "reactor",
    "obras",
    "financiación",
    "Gobierno",
    "Junta",
    "materials",
    "testing",
    "facility",
    "the",
    "de",
    "la",
    "¡nuevo!",
    "2025",
    "Fusion",
    "FUSIÓN",
    "linac",
    "litio",
];

pub fn random_headline(rng: &mut StdRng) -> String {
    let n = rng.random_range(0..9);
    let mut words: Vec<String> = (0..n)
        .map(|_| VOCAB[rng.random_range(0..VOCAB.len())].to_string())
        .collect();
    if rng.random_bool(0.2) {
        words.push("--".into());
    }
    let sep = if rng.random_bool(0.3) { "  " } else { " " };
    words.join(sep)
}

/// Whitespace pieces, alphanumerics kept, lowercased; duplicates removed
/// by linear scan.
pub fn oracle_tokens(h: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for piece in h.split_whitespace() {
        let mut t = String::new();
        for c in piece.chars() {
            if c.is_alphanumeric() {
                for l in c.to_lowercase() {
                    t.push(l);
                }
            }
        }
        if !t.is_empty() && !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

pub fn oracle_jaccard(a: &str, b: &str) -> f64 {
    let (ta, tb) = (oracle_tokens(a), oracle_tokens(b));
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let inter = ta.iter().filter(|t| tb.contains(t)).count();
    let mut union = ta.clone();
    for t in &tb {
        if !union.contains(t) {
            union.push(t.clone());
        }
    }
    inter as f64 / union.len() as f64
}

const HOSTS: &[&str] = &["ideal.es", "IDEAL.es", "granadahoy.com", "elpais.com", "www.elpais.com"];

pub fn random_url(rng: &mut StdRng) -> Option<Url> {
    if rng.random_bool(0.1) {
        return None;
    }
    let scheme = if rng.random_bool(0.5) { "http" } else { "https" };
    let host = HOSTS[rng.random_range(0..HOSTS.len())];
    let slash = if rng.random_bool(0.3) { "/" } else { "" };
    let mut s = format!("{scheme}://{host}/n/{}{slash}", rng.random_range(0..12));
    if rng.random_bool(0.3) {
        s.push_str("?utm_source=agg");
    }
    Some(Url::parse(&s).unwrap())
}

/// Host lowercased, trailing slash and `utm_` parameters removed, scheme ignored.
pub fn oracle_url_key(u: &Url) -> String {
    let path = u.path().trim_end_matches('/');
    let params: Vec<String> = u
        .query_pairs()
        .filter(|(k, _)| !k.starts_with("utm_"))
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    format!("{}{}?{}", u.host_str().unwrap().to_lowercase(), path, params.join("&"))
}

pub fn random_record(rng: &mut StdRng, i: usize) -> NewsRecord {
    let mut r = NewsRecord::new(format!("r{i}"), random_headline(rng));
    r.source_url = random_url(rng);
    if rng.random_bool(0.7) {
        r.published_at = Some(Utc.with_ymd_and_hms(2024, 1, rng.random_range(1..4), 9, 0, 0).unwrap());
    }
    r.collected_at = Some(Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, rng.random_range(0..30)).unwrap());
    r
}

/// Pairwise edges, then connected components by flood fill.
pub fn oracle_partition(recs: &[NewsRecord], threshold: f64) -> BTreeSet<BTreeSet<String>> {
    let n = recs.len();
    let linked = |i: usize, j: usize| -> bool {
        let (a, b) = (&recs[i], &recs[j]);
        if let (Some(ua), Some(ub)) = (&a.source_url, &b.source_url) {
            if oracle_url_key(ua) == oracle_url_key(ub) {
                return true;
            }
        }
        if let (Some(da), Some(db)) = (a.published_at, b.published_at) {
            if da.date_naive() != db.date_naive() {
                return false;
            }
        }
        oracle_jaccard(&a.headline, &b.headline) >= threshold
    };
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i != j && linked(i, j)).collect())
        .collect();
    let mut label: Vec<Option<usize>> = vec![None; n];
    for start in 0..n {
        if label[start].is_some() {
            continue;
        }
        let mut stack = vec![start];
        label[start] = Some(start);
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if adj[i][j] && label[j].is_none() {
                    label[j] = Some(start);
                    stack.push(j);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for (i, l) in label.iter().enumerate() {
        groups.entry(l.unwrap()).or_default().insert(recs[i].id.clone());
    }
    groups.into_values().collect()
}
