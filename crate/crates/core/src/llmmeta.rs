//! Metadata extraction through a local completion model, plus detection of
//! the identical placeholder text such models emit for inaccessible pages.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::store::{NewsRecord, QualityFlag};
use crate::text;

/// Zero-shot prompt; `{headline}` and `{text}` are substituted.
pub const PROMPT_TEMPLATE: &str = include_str!("../data/metadata_prompt.txt");
pub const SYNOPSIS_MAX_WORDS: usize = 60;
pub const AUTHOR_HEAD_CHARS: usize = 500;
pub const AUTHOR_TAIL_CHARS: usize = 200;
pub const DEFAULT_MIN_GROUP: usize = 2;
pub const DEFAULT_MIN_LEN: usize = 200;
/// Article text beyond this many characters is not sent to the model.
pub const PROMPT_TEXT_LIMIT: usize = 6000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("full text is empty; the model was not called")]
    EmptyText,
    #[error("model endpoint unavailable: {0}")]
    Unavailable(String),
    #[error("min_group must be at least 2, got {0}")]
    MinGroup(usize),
}

pub trait CompletionModel: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    stream: bool,
}

#[derive(Deserialize)]
struct CompletionResponse {
    #[serde(alias = "response")]
    text: String,
}

/// Single-turn completion over HTTP: POST `{model, prompt}`, read `{text}`.
/// Ollama-style `{response}` bodies are accepted too.
#[derive(Debug, Clone)]
pub struct HttpModel {
    client: reqwest::blocking::Client,
    url: Url,
    model: String,
}

impl HttpModel {
    pub fn new(url: Url, model: impl Into<String>, timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .no_proxy()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Unavailable(e.to_string()))?;
        Ok(HttpModel {
            client,
            url,
            model: model.into(),
        })
    }
}

impl CompletionModel for HttpModel {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let unavailable = |e: reqwest::Error| LlmError::Unavailable(e.to_string());
        let resp = self
            .client
            .post(self.url.clone())
            .json(&CompletionRequest {
                model: &self.model,
                prompt,
                stream: false,
            })
            .send()
            .map_err(unavailable)?
            .error_for_status()
            .map_err(unavailable)?;
        // A body that is not the expected JSON counts as unparseable output.
        let body = resp.text().map_err(unavailable)?;
        Ok(serde_json::from_str::<CompletionResponse>(&body)
            .map(|r| r.text)
            .unwrap_or(body))
    }
}

/// Deterministic stand-in model. Reads the article back out of the prompt
/// and answers from surface cues: a `By`/`Por` byline line, the first known
/// place name, and the article's opening words.
#[derive(Debug, Clone, Default)]
pub struct BylineEchoModel;

const KNOWN_PLACES: &[&str] = &[
    "Granada",
    "Andalucía",
    "Andalusia",
    "Madrid",
    "Japan",
    "Croatia",
    "Europe",
    "Spain",
    "España",
];

impl BylineEchoModel {
    pub const ID: &'static str = "byline-echo";

    pub fn answer(prompt: &str) -> String {
        let article = prompt
            .split_once("\nARTICLE:\n")
            .map(|(_, rest)| rest.rsplit_once("\nEND ARTICLE").map_or(rest, |(a, _)| a))
            .unwrap_or("");
        let author = article
            .lines()
            .map(str::trim)
            .find_map(|l| l.strip_prefix("By ").or_else(|| l.strip_prefix("Por ")))
            .map(|a| a.trim_end_matches(['.', ',']).trim().to_string())
            .filter(|a| !a.is_empty());
        let place = KNOWN_PLACES.iter().find(|p| article.contains(*p));
        let synopsis: Vec<&str> = article.split_whitespace().take(25).collect();
        let or_none = |v: Option<&str>| v.filter(|s| !s.is_empty()).unwrap_or("NONE").to_string();
        format!(
            "AUTHOR: {}\nGEOGRAPHIC_FOCUS: {}\nSECTION: {}\nSYNOPSIS: {}\n",
            or_none(author.as_deref()),
            or_none(place.copied()),
            if article.trim().is_empty() { "NONE" } else { "Science" },
            or_none(Some(&synopsis.join(" "))),
        )
    }
}

impl CompletionModel for BylineEchoModel {
    fn model_id(&self) -> &str {
        Self::ID
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        Ok(Self::answer(prompt))
    }
}

pub fn prompt_digest() -> String {
    text::sha256_hex(PROMPT_TEMPLATE)
}

pub fn render_prompt(headline: &str, full_text: &str) -> String {
    let body: String = full_text.chars().take(PROMPT_TEXT_LIMIT).collect();
    PROMPT_TEMPLATE
        .replace("{headline}", &text::normalize_whitespace(headline))
        .replace("{text}", &body)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataFields {
    pub author: Option<String>,
    pub geographic_focus: Option<String>,
    pub section: Option<String>,
    pub synopsis: Option<String>,
}

fn absent(v: &str) -> bool {
    let v = v.trim().trim_end_matches('.');
    v.is_empty() || ["none", "n/a", "null", "unknown", "-"].contains(&v.to_lowercase().as_str())
}

/// Parses labeled lines. `None` when no label is present at all.
pub fn parse_labeled(output: &str) -> Option<MetadataFields> {
    let mut fields = MetadataFields::default();
    let mut seen = false;
    for line in output.lines() {
        let line = line.trim().trim_start_matches(['*', '-', ' ']);
        let Some((label, value)) = line.split_once(':') else {
            continue;
        };
        let slot = match label.trim().trim_matches('*').to_uppercase().replace(' ', "_").as_str() {
            "AUTHOR" => &mut fields.author,
            "GEOGRAPHIC_FOCUS" => &mut fields.geographic_focus,
            "SECTION" => &mut fields.section,
            "SYNOPSIS" => &mut fields.synopsis,
            _ => continue,
        };
        seen = true;
        let value = value.trim().trim_matches('*').trim();
        if slot.is_none() && !absent(value) {
            *slot = Some(value.to_string());
        }
    }
    seen.then_some(fields)
}

/// Caps the synopsis at [`SYNOPSIS_MAX_WORDS`]. A capped synopsis that is a
/// verbatim slice of the article is dropped rather than kept as a quote.
pub fn cap_synopsis(synopsis: &str, full_text: &str) -> Option<String> {
    let words: Vec<&str> = synopsis.split_whitespace().collect();
    if words.len() <= SYNOPSIS_MAX_WORDS {
        return (!words.is_empty()).then(|| words.join(" "));
    }
    let capped = words[..SYNOPSIS_MAX_WORDS].join(" ");
    if text::normalize_whitespace(full_text).contains(&capped) {
        None
    } else {
        Some(capped)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataGuess {
    pub author: Option<String>,
    pub geographic_focus: Option<String>,
    pub section: Option<String>,
    pub synopsis: Option<String>,
    pub model_id: String,
    pub prompt_digest: String,
    /// Both attempts produced output without any recognizable label.
    pub parse_failed: bool,
}

impl MetadataGuess {
    /// Lowercase key for the open section vocabulary.
    pub fn section_key(&self) -> Option<String> {
        self.section
            .as_deref()
            .map(|s| text::normalize_whitespace(s).to_lowercase())
    }
}

/// Asks the model for the four fields; one retry on unparseable output.
pub fn extract_metadata(
    headline: &str,
    full_text: &str,
    model: &dyn CompletionModel,
) -> Result<MetadataGuess, LlmError> {
    if full_text.trim().is_empty() {
        return Err(LlmError::EmptyText);
    }
    let prompt = render_prompt(headline, full_text);
    let mut parsed = None;
    for attempt in 0..2 {
        let out = model.complete(&prompt)?;
        parsed = parse_labeled(&out);
        if parsed.is_some() {
            break;
        }
        tracing::debug!(attempt, "model output had no labeled lines");
    }
    let parse_failed = parsed.is_none();
    let fields = parsed.unwrap_or_default();
    Ok(MetadataGuess {
        author: fields.author,
        geographic_focus: fields.geographic_focus,
        section: fields.section,
        synopsis: fields.synopsis.and_then(|s| cap_synopsis(&s, full_text)),
        model_id: model.model_id().to_string(),
        prompt_digest: prompt_digest(),
        parse_failed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthorCheck {
    Accepted,
    Rejected,
    Absent,
}

/// Accepts the author only when it appears, case-insensitively, in the
/// byline regions: the first 500 or the last 200 characters of the text.
/// A rejected author is cleared from the guess.
pub fn validate_author(guess: &mut MetadataGuess, full_text: &str) -> AuthorCheck {
    let Some(author) = guess.author.as_deref().map(text::normalize_whitespace) else {
        return AuthorCheck::Absent;
    };
    let chars: Vec<char> = full_text.chars().collect();
    let head: String = chars[..chars.len().min(AUTHOR_HEAD_CHARS)].iter().collect();
    let tail: String = chars[chars.len().saturating_sub(AUTHOR_TAIL_CHARS)..].iter().collect();
    if !author.is_empty() && (text::contains_ci(&head, &author) || text::contains_ci(&tail, &author)) {
        AuthorCheck::Accepted
    } else {
        guess.author = None;
        AuthorCheck::Rejected
    }
}

/// Copies a validated guess into the record.
pub fn apply_guess(record: &mut NewsRecord, guess: &MetadataGuess, author: AuthorCheck) {
    if guess.parse_failed {
        record.flag(QualityFlag::LlmParseFail);
        return;
    }
    if author == AuthorCheck::Rejected {
        record.flag(QualityFlag::AuthorUnverified);
    }
    record.author = guess.author.clone();
    record.geographic_reference = guess.geographic_focus.clone();
    record.thematic_category = guess.section.clone();
    record.ai_summary = guess.synopsis.clone();
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AnnotationReport {
    pub annotated: usize,
    pub skipped_no_text: usize,
    pub parse_failures: usize,
    pub authors_rejected: usize,
    pub unavailable: usize,
    pub model_id: String,
    pub prompt_digest: String,
}

/// Annotates every record that has text, one model call at a time. An
/// unreachable model flags the record and the pass moves on.
pub fn annotate_records(records: &mut [NewsRecord], model: &dyn CompletionModel) -> AnnotationReport {
    let mut report = AnnotationReport {
        model_id: model.model_id().to_string(),
        prompt_digest: prompt_digest(),
        ..Default::default()
    };
    for rec in records.iter_mut() {
        match extract_metadata(&rec.headline, rec.full_text(), model) {
            Ok(mut guess) => {
                let check = validate_author(&mut guess, rec.full_text());
                report.parse_failures += usize::from(guess.parse_failed);
                report.authors_rejected += usize::from(check == AuthorCheck::Rejected);
                apply_guess(rec, &guess, check);
                report.annotated += 1;
            }
            Err(LlmError::EmptyText) => report.skipped_no_text += 1,
            Err(e) => {
                tracing::warn!(id = %rec.id, error = %e, "record left unannotated");
                rec.flag(QualityFlag::LlmUnavailable);
                report.unavailable += 1;
            }
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HallucinationAction {
    Cleared,
    ReprocessManual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HallucinationFlag {
    pub group_key: String,
    pub member_ids: Vec<String>,
    pub action: HallucinationAction,
}

/// Groups records by whitespace-normalized text. Each group of at least
/// `min_group` members whose text is at least `min_len` characters is
/// flagged; its members lose their text and join the manual queue.
pub fn detect_hallucination(
    records: &mut [NewsRecord],
    min_group: usize,
    min_len: usize,
) -> Result<Vec<HallucinationFlag>, LlmError> {
    if min_group < 2 {
        return Err(LlmError::MinGroup(min_group));
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let norm = text::normalize_whitespace(rec.full_text());
        if norm.chars().count() < min_len || norm.is_empty() {
            continue;
        }
        let members = groups.entry(norm.clone()).or_default();
        if members.is_empty() {
            order.push(norm);
        }
        members.push(i);
    }
    let mut flags = Vec::new();
    for norm in order {
        let members = &groups[&norm];
        if members.len() < min_group {
            continue;
        }
        for &i in members {
            let rec = &mut records[i];
            rec.clear_full_text();
            rec.flag(QualityFlag::Hallucination);
            rec.flag(QualityFlag::ReprocessManual);
            rec.flag(QualityFlag::NoContent);
        }
        flags.push(HallucinationFlag {
            group_key: text::short_digest(&norm, 16),
            member_ids: members.iter().map(|&i| records[i].id.clone()).collect(),
            action: HallucinationAction::ReprocessManual,
        });
    }
    Ok(flags)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(&'static str);
    impl CompletionModel for Fixed {
        fn model_id(&self) -> &str {
            "fixed"
        }
        fn complete(&self, _: &str) -> Result<String, LlmError> {
            Ok(self.0.to_string())
        }
    }

    struct Counting(std::sync::atomic::AtomicUsize);
    impl CompletionModel for Counting {
        fn model_id(&self) -> &str {
            "counting"
        }
        fn complete(&self, _: &str) -> Result<String, LlmError> {
            self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Ok("I cannot help with that.".into())
        }
    }

    #[test]
    fn passthrough_of_well_formed_output() {
        let m = Fixed("AUTHOR: Ana Ruiz\nGEOGRAPHIC_FOCUS: Granada\nSECTION: Science\nSYNOPSIS: A short summary.");
        let g = extract_metadata("h", "body", &m).unwrap();
        assert_eq!(g.author.as_deref(), Some("Ana Ruiz"));
        assert_eq!(g.geographic_focus.as_deref(), Some("Granada"));
        assert_eq!(g.section.as_deref(), Some("Science"));
        assert_eq!(g.section_key().as_deref(), Some("science"));
        assert_eq!(g.synopsis.as_deref(), Some("A short summary."));
        assert_eq!(g.prompt_digest.len(), 64);
        assert!(!g.parse_failed);
    }

    #[test]
    fn empty_text_never_calls_model() {
        let m = Counting(Default::default());
        assert_eq!(extract_metadata("h", "  ", &m), Err(LlmError::EmptyText));
        assert_eq!(m.0.load(std::sync::atomic::Ordering::SeqCst), 0);
    }

    #[test]
    fn unparseable_output_retries_once_then_flags() {
        let m = Counting(Default::default());
        let g = extract_metadata("h", "body", &m).unwrap();
        assert!(g.parse_failed);
        assert_eq!(g.author, None);
        assert_eq!(m.0.load(std::sync::atomic::Ordering::SeqCst), 2);
        let mut r = NewsRecord::new("a", "h");
        apply_guess(&mut r, &g, AuthorCheck::Absent);
        assert!(r.has_flag(&QualityFlag::LlmParseFail));
    }

    #[test]
    fn none_values_are_absent() {
        let f = parse_labeled("AUTHOR: NONE\nSECTION: n/a\nSYNOPSIS:\nGEOGRAPHIC_FOCUS: Spain").unwrap();
        assert_eq!(f.author, None);
        assert_eq!(f.section, None);
        assert_eq!(f.synopsis, None);
        assert_eq!(f.geographic_focus.as_deref(), Some("Spain"));
    }

    #[test]
    fn synopsis_cap() {
        let long = (0..80).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        assert_eq!(cap_synopsis(&long, &long), None);
        assert_eq!(cap_synopsis(&long, "other").unwrap().split_whitespace().count(), 60);
        assert_eq!(cap_synopsis("two words", "x").as_deref(), Some("two words"));
    }

    fn guess(author: &str) -> MetadataGuess {
        MetadataGuess {
            author: Some(author.into()),
            geographic_focus: None,
            section: None,
            synopsis: None,
            model_id: "m".into(),
            prompt_digest: prompt_digest(),
            parse_failed: false,
        }
    }

    #[test]
    fn author_positions() {
        let filler = "x ".repeat(600);
        let text = format!("By Jane Doe\n{filler}");
        assert_eq!(validate_author(&mut guess("jane doe"), &text), AuthorCheck::Accepted);

        let text = format!("{filler}Fuente: Pedro Gil.\n{filler}");
        let mut g = guess("Pedro Gil");
        assert_eq!(validate_author(&mut g, &text), AuthorCheck::Rejected);
        assert_eq!(g.author, None);

        let text = format!("{filler}\nRedacción: Luis Mar");
        assert_eq!(validate_author(&mut guess("Luis Mar"), &text), AuthorCheck::Accepted);
        assert_eq!(validate_author(&mut guess("Nadie"), "short"), AuthorCheck::Rejected);
    }

    #[test]
    fn echo_model_reads_byline() {
        let prompt = render_prompt("Título", "By Jane Doe\nEl acelerador de Granada avanza.");
        let g = extract_metadata(
            "Título",
            "By Jane Doe\nEl acelerador de Granada avanza.",
            &BylineEchoModel,
        )
        .unwrap();
        assert!(prompt.contains("HEADLINE: Título"));
        assert_eq!(g.author.as_deref(), Some("Jane Doe"));
        assert_eq!(g.geographic_focus.as_deref(), Some("Granada"));
    }

    fn rec(id: &str, text: &str) -> NewsRecord {
        let mut r = NewsRecord::new(id, id);
        r.set_full_text(text);
        r
    }

    #[test]
    fn hallucination_grouping() {
        let placeholder = "Lorem placeholder ".repeat(20);
        let mut records: Vec<NewsRecord> = (0..5).map(|i| rec(&format!("p{i}"), &placeholder)).collect();
        records.push(rec("u1", &"unique one ".repeat(30)));
        records.push(rec("u2", &"unique two ".repeat(30)));
        // spacing variants normalize to the same text
        records[4].set_full_text(placeholder.replace(' ', "  "));
        let flags = detect_hallucination(&mut records, 2, 200).unwrap();
        assert_eq!(flags.len(), 1);
        assert_eq!(flags[0].member_ids, ["p0", "p1", "p2", "p3", "p4"]);
        assert!(records[..5]
            .iter()
            .all(|r| r.full_text().is_empty() && r.has_flag(&QualityFlag::Hallucination)));
        assert!(!records[5].has_flag(&QualityFlag::Hallucination));
        assert!(detect_hallucination(&mut records, 2, 200).unwrap().is_empty());
    }

    #[test]
    fn short_duplicates_are_not_flagged() {
        let mut records = vec![rec("a", "Wire copy text."), rec("b", "Wire copy text.")];
        assert!(detect_hallucination(&mut records, 2, 200).unwrap().is_empty());
        assert_eq!(detect_hallucination(&mut records, 1, 0), Err(LlmError::MinGroup(1)));
    }
}
