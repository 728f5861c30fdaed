use chrono::{DateTime, Duration, Utc};
use scraper::{Html, Selector};

use crate::text::normalize_whitespace;

/// Publication time as shown in a listing.
#[derive(Debug, Clone, PartialEq)]
pub enum ListingTime {
    Exact(DateTime<Utc>),
    /// Text such as "2 days ago" with no machine-readable timestamp.
    Relative(String),
    Missing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListingEntry {
    pub headline: String,
    pub href: String,
    pub outlet: String,
    pub time: ListingTime,
}

/// Turns a search-results page into entries, in page order.
pub trait ListingParser: Send + Sync {
    fn parse(&self, body: &str) -> Result<Vec<ListingEntry>, String>;
}

/// Parser for the minimal listing markup:
///
/// ```html
/// <ol class="results">
///   <li class="result">
///     <a class="headline" href="...">Headline</a>
///     <span class="outlet">Outlet</span>
///     <time datetime="2024-05-03T08:00:00Z">3 May</time>
///   </li>
/// </ol>
/// ```
#[derive(Debug, Default, Clone, Copy)]
pub struct SimpleListingParser;

impl ListingParser for SimpleListingParser {
    fn parse(&self, body: &str) -> Result<Vec<ListingEntry>, String> {
        let doc = Html::parse_document(body);
        let list_sel = Selector::parse("ol.results").unwrap();
        let item_sel = Selector::parse("li.result").unwrap();
        let a_sel = Selector::parse("a.headline").unwrap();
        let outlet_sel = Selector::parse(".outlet").unwrap();
        let time_sel = Selector::parse("time").unwrap();

        let list = doc
            .select(&list_sel)
            .next()
            .ok_or_else(|| "no <ol class=\"results\"> element".to_string())?;
        let mut out = Vec::new();
        for (i, li) in list.select(&item_sel).enumerate() {
            let a = li
                .select(&a_sel)
                .next()
                .ok_or_else(|| format!("result {i} has no headline link"))?;
            let href = a
                .value()
                .attr("href")
                .ok_or_else(|| format!("result {i} has no href"))?
                .trim()
                .to_string();
            let headline = normalize_whitespace(&a.text().collect::<String>());
            let outlet = li
                .select(&outlet_sel)
                .next()
                .map(|e| normalize_whitespace(&e.text().collect::<String>()))
                .unwrap_or_default();
            let time = match li.select(&time_sel).next() {
                Some(t) => match t.value().attr("datetime") {
                    Some(dt) => DateTime::parse_from_rfc3339(dt.trim())
                        .map(|d| ListingTime::Exact(d.with_timezone(&Utc)))
                        .map_err(|e| format!("result {i}: bad datetime {dt:?}: {e}"))?,
                    None => {
                        let txt = normalize_whitespace(&t.text().collect::<String>());
                        if txt.is_empty() {
                            ListingTime::Missing
                        } else {
                            ListingTime::Relative(txt)
                        }
                    }
                },
                None => ListingTime::Missing,
            };
            out.push(ListingEntry {
                headline,
                href,
                outlet,
                time,
            });
        }
        Ok(out)
    }
}

/// Resolves "3 days ago" / "hace 3 días" style ages against `reference`.
pub fn resolve_relative(text: &str, reference: DateTime<Utc>) -> Option<DateTime<Utc>> {
    let lower = text.to_lowercase();
    let lower = lower.trim();
    if lower == "yesterday" || lower == "ayer" {
        return Some(reference - Duration::days(1));
    }
    let words: Vec<&str> = lower.split_whitespace().collect();
    let (n, unit) = match words.as_slice() {
        [n, unit, "ago"] => (*n, *unit),
        ["hace", n, unit] => (*n, *unit),
        _ => return None,
    };
    let n: i64 = match n {
        "a" | "an" | "un" | "una" => 1,
        _ => n.parse().ok()?,
    };
    let unit = unit.trim_end_matches('s');
    let d = match unit {
        "minute" | "min" | "minuto" => Duration::minutes(n),
        "hour" | "hora" => Duration::hours(n),
        "day" | "día" | "dia" => Duration::days(n),
        "week" | "semana" => Duration::weeks(n),
        "month" | "mes" | "mese" => Duration::days(30 * n),
        _ => return None,
    };
    Some(reference - d)
}
