/// Ten most frequent function words per supported language.
pub const STOPWORDS: &[(&str, [&str; 10])] = &[
    ("es", ["de", "la", "que", "el", "en", "y", "a", "los", "se", "del"]),
    ("en", ["the", "of", "and", "to", "a", "in", "is", "that", "for", "it"]),
    ("fr", ["de", "la", "le", "et", "les", "des", "en", "un", "une", "du"]),
    (
        "de",
        ["der", "die", "und", "in", "den", "von", "zu", "das", "mit", "sich"],
    ),
    ("it", ["di", "e", "il", "la", "che", "per", "un", "in", "del", "non"]),
    ("pt", ["de", "a", "o", "que", "e", "do", "da", "em", "um", "para"]),
];

/// Stopword hits per language, in [`STOPWORDS`] order.
pub fn stopword_hits(text: &str) -> Vec<(&'static str, usize)> {
    let tokens: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    STOPWORDS
        .iter()
        .map(|(lang, words)| {
            let hits = tokens.iter().filter(|t| words.contains(&t.as_str())).count();
            (*lang, hits)
        })
        .collect()
}

/// Language with the most stopword hits. Ties and zero hits fall back to
/// `fallback` (typically the edition language), else `"und"`.
pub fn detect_language(text: &str, fallback: Option<&str>) -> String {
    let hits = stopword_hits(text);
    let best = hits.iter().map(|(_, h)| *h).max().unwrap_or(0);
    let leaders: Vec<&str> = hits.iter().filter(|(_, h)| *h == best).map(|(l, _)| *l).collect();
    if best > 0 && leaders.len() == 1 {
        leaders[0].to_string()
    } else {
        fallback.unwrap_or("und").to_string()
    }
}
