//! Outlet enrichment against a media-rankings snapshot: domain-first
//! matching with a title fallback, the digital reputation indicator, and a
//! typology for sources outside the ranking.

mod psl;
mod typology;

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use psl::{registrable_domain, SuffixList, PUBLIC_SUFFIX_DATA};
pub use typology::{host_matches, SourceTypology, TypologyRules, DEFAULT_RULES};

use crate::store::NewsRecord;
use crate::text;

pub const DRI_SCALE: (f64, f64) = (0.0, 100.0);

#[derive(Debug, thiserror::Error)]
pub enum EnrichError {
    #[error("{name} = {value} is outside [0, 100]")]
    OutOfScale { name: &'static str, value: f64 },
    #[error("snapshot row {line}: {reason}")]
    Snapshot { line: u64, reason: String },
    #[error("duplicate snapshot domain {0:?}")]
    DuplicateDomain(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The four link-based indicators, each on a 0-100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriInputs {
    pub authority_score: f64,
    pub domain_rating: f64,
    pub citation_flow: f64,
    pub trust_flow: f64,
}

impl DriInputs {
    pub fn new(authority_score: f64, domain_rating: f64, citation_flow: f64, trust_flow: f64) -> Self {
        DriInputs {
            authority_score,
            domain_rating,
            citation_flow,
            trust_flow,
        }
    }

    fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("authority_score", self.authority_score),
            ("domain_rating", self.domain_rating),
            ("citation_flow", self.citation_flow),
            ("trust_flow", self.trust_flow),
        ]
    }
}

/// Equal-weight mean of the four indicators. Inputs are range-checked, not
/// rescaled.
pub fn compute_dri(x: &DriInputs) -> Result<f64, EnrichError> {
    let mut sum = 0.0;
    for (name, value) in x.named() {
        if !(DRI_SCALE.0..=DRI_SCALE.1).contains(&value) {
            return Err(EnrichError::OutOfScale { name, value });
        }
        sum += value;
    }
    Ok(sum / 4.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmrEntry {
    pub name: String,
    pub domain: String,
    pub country: String,
    pub region: String,
    pub language: String,
    pub typology: String,
    pub overall: Option<f64>,
    pub dri_inputs: Option<DriInputs>,
}

#[derive(Debug, Deserialize)]
struct SnapshotRow {
    name: String,
    domain: String,
    country: String,
    region: String,
    language: String,
    typology: String,
    overall: Option<f64>,
    authority_score: Option<f64>,
    domain_rating: Option<f64>,
    citation_flow: Option<f64>,
    trust_flow: Option<f64>,
}

const CORPORATE_SUFFIXES: &[&str] = &[
    "sa", "sau", "sl", "slu", "ltd", "limited", "inc", "llc", "plc", "gmbh", "srl", "spa", "corp", "co",
];

/// Case-folded, diacritic- and punctuation-free title without corporate
/// suffix tokens.
pub fn normalize_title(title: &str) -> String {
    let folded = text::strip_diacritics(&title.to_lowercase());
    let cleaned: String = folded
        .chars()
        .filter_map(|c| match c {
            '-' | '&' | '/' | '|' => Some(' '),
            c if c.is_alphanumeric() || c.is_whitespace() => Some(c),
            _ => None,
        })
        .collect();
    let tokens: Vec<&str> = cleaned.split_whitespace().collect();
    let mut end = tokens.len();
    while end > 1 && CORPORATE_SUFFIXES.contains(&tokens[end - 1]) {
        end -= 1;
    }
    tokens[..end].join(" ")
}

/// Small illustrative snapshot covering the fixture corpus outlets. Scores
/// are made up; use a licensed export for real analysis.
pub const SAMPLE_SNAPSHOT: &str = include_str!("../../data/smr_snapshot_sample.csv");

/// Config value selecting [`SAMPLE_SNAPSHOT`] instead of a file.
pub const SAMPLE_SNAPSHOT_KEY: &str = "builtin:sample";

/// Read-only rankings snapshot with domain and title indexes.
#[derive(Debug, Clone, Default)]
pub struct SmrSnapshot {
    entries: Vec<SmrEntry>,
    by_domain: HashMap<String, usize>,
    by_title: HashMap<String, Vec<usize>>,
}

impl SmrSnapshot {
    pub fn from_entries(entries: Vec<SmrEntry>) -> Result<Self, EnrichError> {
        let mut snap = SmrSnapshot::default();
        for mut e in entries {
            e.domain = e.domain.trim().trim_end_matches('.').to_lowercase();
            if snap.by_domain.insert(e.domain.clone(), snap.entries.len()).is_some() {
                return Err(EnrichError::DuplicateDomain(e.domain));
            }
            snap.by_title
                .entry(normalize_title(&e.name))
                .or_default()
                .push(snap.entries.len());
            snap.entries.push(e);
        }
        Ok(snap)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, EnrichError> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut entries = Vec::new();
        for row in rdr.deserialize::<SnapshotRow>() {
            let row = row.map_err(|e| EnrichError::Snapshot {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                reason: e.to_string(),
            })?;
            let dri_inputs = match (
                row.authority_score,
                row.domain_rating,
                row.citation_flow,
                row.trust_flow,
            ) {
                (Some(a), Some(d), Some(c), Some(t)) => Some(DriInputs::new(a, d, c, t)),
                _ => None,
            };
            entries.push(SmrEntry {
                name: row.name,
                domain: row.domain,
                country: row.country,
                region: row.region,
                language: row.language,
                typology: row.typology,
                overall: row.overall,
                dri_inputs,
            });
        }
        Self::from_entries(entries)
    }

    pub fn sample() -> Self {
        Self::read_csv(SAMPLE_SNAPSHOT.as_bytes()).expect("bundled sample snapshot parses")
    }

    pub fn load(path: &Path) -> Result<Self, EnrichError> {
        if path == Path::new(SAMPLE_SNAPSHOT_KEY) {
            return Ok(Self::sample());
        }
        let f = std::fs::File::open(path).map_err(|source| EnrichError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_csv(std::io::BufReader::new(f))
    }

    pub fn entries(&self) -> &[SmrEntry] {
        &self.entries
    }

    pub fn by_domain(&self, domain: &str) -> Option<&SmrEntry> {
        self.by_domain.get(domain).map(|&i| &self.entries[i])
    }

    pub fn by_title(&self, title: &str) -> Vec<&SmrEntry> {
        self.by_title
            .get(&normalize_title(title))
            .map(|v| v.iter().map(|&i| &self.entries[i]).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Domain,
    Title,
    None,
}

impl MatchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchKind::Domain => "domain",
            MatchKind::Title => "title",
            MatchKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmrMatch<'a> {
    pub entry: Option<&'a SmrEntry>,
    pub kind: MatchKind,
    pub note: Option<String>,
}

/// Host of the record: its source URL, else its `source_domain` field.
pub fn record_host(record: &NewsRecord) -> Option<String> {
    record
        .source_url
        .as_ref()
        .and_then(|u| u.host_str().map(str::to_string))
        .or_else(|| (!record.source_domain.is_empty()).then(|| record.source_domain.clone()))
}

pub fn match_smr<'a>(record: &NewsRecord, snapshot: &'a SmrSnapshot) -> SmrMatch<'a> {
    if let Some(domain) = record_host(record).as_deref().and_then(registrable_domain) {
        if let Some(entry) = snapshot.by_domain(&domain) {
            return SmrMatch {
                entry: Some(entry),
                kind: MatchKind::Domain,
                note: None,
            };
        }
    }
    if record.outlet_name.trim().is_empty() {
        return SmrMatch {
            entry: None,
            kind: MatchKind::None,
            note: None,
        };
    }
    match snapshot.by_title(&record.outlet_name).as_slice() {
        [one] => SmrMatch {
            entry: Some(*one),
            kind: MatchKind::Title,
            note: None,
        },
        [] => SmrMatch {
            entry: None,
            kind: MatchKind::None,
            note: None,
        },
        many => {
            let domains: Vec<&str> = many.iter().map(|e| e.domain.as_str()).collect();
            let note = format!(
                "ambiguous title {:?} matches {}",
                record.outlet_name,
                domains.join(", ")
            );
            tracing::info!(id = %record.id, "{note}");
            SmrMatch {
                entry: None,
                kind: MatchKind::None,
                note: Some(note),
            }
        }
    }
}

/// Country from a country-code TLD; `.uk` maps to `GB`.
pub fn cctld_country(host: &str) -> Option<String> {
    let tld = host.trim_end_matches('.').rsplit('.').next()?.to_lowercase();
    if tld.len() != 2
        || !tld.chars().all(|c| c.is_ascii_alphabetic())
        || matches!(tld.as_str(), "eu" | "tv" | "io" | "fm")
    {
        return None;
    }
    Some(if tld == "uk" {
        "GB".to_string()
    } else {
        tld.to_uppercase()
    })
}

/// Enrichment of one record; written as a side table keyed by record id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Enrichment {
    pub id: String,
    pub outlet_name: String,
    pub registrable_domain: Option<String>,
    pub match_kind: MatchKind,
    pub smr_name: Option<String>,
    pub smr_domain: Option<String>,
    pub country: Option<String>,
    pub typology: SourceTypology,
    pub overall: Option<f64>,
    pub dri: Option<f64>,
    /// `overall - dri` when both exist and differ.
    pub dri_discrepancy: Option<f64>,
    pub note: Option<String>,
}

impl Enrichment {
    pub fn is_smr(&self) -> bool {
        self.match_kind != MatchKind::None
    }
}

pub fn enrich_record(record: &NewsRecord, snapshot: &SmrSnapshot, rules: &TypologyRules) -> Enrichment {
    let host = record_host(record);
    let m = match_smr(record, snapshot);
    let typology = rules.classify(host.as_deref(), &record.outlet_name, m.entry.is_some());
    let mut note = m.note.clone();
    let dri = match m.entry.and_then(|e| e.dri_inputs) {
        Some(x) => match compute_dri(&x) {
            Ok(v) => Some(v),
            Err(e) => {
                note = Some(e.to_string());
                None
            }
        },
        None => None,
    };
    let overall = m.entry.and_then(|e| e.overall);
    let dri_discrepancy = match (overall, dri) {
        (Some(o), Some(d)) if (o - d).abs() > 1e-6 => Some(o - d),
        _ => None,
    };
    let country = match m.entry {
        Some(e) if !e.country.is_empty() => Some(e.country.to_uppercase()),
        _ => host.as_deref().and_then(cctld_country),
    };
    Enrichment {
        id: record.id.clone(),
        outlet_name: record.outlet_name.clone(),
        registrable_domain: host.as_deref().and_then(registrable_domain),
        match_kind: m.kind,
        smr_name: m.entry.map(|e| e.name.clone()),
        smr_domain: m.entry.map(|e| e.domain.clone()),
        country,
        typology,
        overall,
        dri,
        dri_discrepancy,
        note,
    }
}

pub fn enrich_records(records: &[NewsRecord], snapshot: &SmrSnapshot, rules: &TypologyRules) -> Vec<Enrichment> {
    records.iter().map(|r| enrich_record(r, snapshot, rules)).collect()
}

fn opt_f(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

pub fn write_enrichment_csv<W: Write>(rows: &[Enrichment], out: W) -> Result<(), EnrichError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(out);
    w.write_record([
        "id",
        "outlet_name",
        "registrable_domain",
        "match_kind",
        "smr_name",
        "smr_domain",
        "country",
        "typology",
        "overall",
        "dri",
        "dri_discrepancy",
        "note",
    ])?;
    for r in rows {
        w.write_record([
            r.id.clone(),
            r.outlet_name.clone(),
            r.registrable_domain.clone().unwrap_or_default(),
            r.match_kind.as_str().to_string(),
            r.smr_name.clone().unwrap_or_default(),
            r.smr_domain.clone().unwrap_or_default(),
            r.country.clone().unwrap_or_default(),
            r.typology.as_str().to_string(),
            opt_f(r.overall),
            opt_f(r.dri),
            opt_f(r.dri_discrepancy),
            r.note.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| EnrichError::Csv(e.into()))?;
    Ok(())
}

/// Records per typology class.
pub fn typology_counts(rows: &[Enrichment]) -> BTreeMap<SourceTypology, usize> {
    let mut out = BTreeMap::new();
    for r in rows {
        *out.entry(r.typology).or_default() += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use url::Url;

    const SNAP: &str = "\
name,domain,country,region,language,typology,overall,authority_score,domain_rating,citation_flow,trust_flow
El País,elpais.com,ES,Europe,es,newspaper,60,70,80,40,50
Ideal,ideal.es,ES,Europe,es,newspaper,,,,,
Diario Sur S.A.,diariosur.es,ES,Europe,es,newspaper,30,,,,
Diario Sur,surinenglish.com,ES,Europe,en,newspaper,20,,,,
";

    fn snap() -> SmrSnapshot {
        SmrSnapshot::read_csv(SNAP.as_bytes()).unwrap()
    }

    fn record(outlet: &str, url: Option<&str>) -> NewsRecord {
        let mut r = NewsRecord::new("r", "h");
        r.outlet_name = outlet.into();
        r.source_url = url.map(|u| Url::parse(u).unwrap());
        r
    }

    #[test]
    fn dri_examples() {
        assert_eq!(compute_dri(&DriInputs::new(50.0, 50.0, 50.0, 50.0)).unwrap(), 50.0);
        assert_eq!(compute_dri(&DriInputs::new(100.0, 0.0, 0.0, 0.0)).unwrap(), 25.0);
        assert!(matches!(
            compute_dri(&DriInputs::new(101.0, 0.0, 0.0, 0.0)),
            Err(EnrichError::OutOfScale {
                name: "authority_score",
                ..
            })
        ));
        assert!(compute_dri(&DriInputs::new(f64::NAN, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn title_normalization() {
        assert_eq!(normalize_title("El País"), "el pais");
        assert_eq!(normalize_title("Diario Sur, S.A."), "diario sur");
        assert_eq!(normalize_title("  EL   PAÍS! "), "el pais");
    }

    #[test]
    fn domain_then_title() {
        let s = snap();
        let m = match_smr(&record("whatever", Some("https://blogs.elpais.com/x")), &s);
        assert_eq!(m.kind, MatchKind::Domain);
        assert_eq!(m.entry.unwrap().domain, "elpais.com");

        let m = match_smr(&record("El País", None), &s);
        assert_eq!(m.kind, MatchKind::Title);
        assert_eq!(m.entry.unwrap().domain, "elpais.com");

        let m = match_smr(&record("Diario Sur", None), &s);
        assert_eq!(m.kind, MatchKind::None);
        assert!(m.note.unwrap().contains("ambiguous"));
    }

    #[test]
    fn duplicate_domains_rejected() {
        let dup = format!("{SNAP}Otro,elpais.com,ES,Europe,es,newspaper,1,,,,\n");
        assert!(matches!(
            SmrSnapshot::read_csv(dup.as_bytes()),
            Err(EnrichError::DuplicateDomain(_))
        ));
    }

    #[test]
    fn enrichment_row() {
        let e = enrich_record(
            &record("El País", Some("https://elpais.com/a")),
            &snap(),
            &TypologyRules::bundled(),
        );
        assert_eq!(e.typology, SourceTypology::SmrOutlet);
        assert_eq!(e.dri, Some(60.0));
        assert_eq!(e.dri_discrepancy, None);
        assert_eq!(e.country.as_deref(), Some("ES"));

        let e = enrich_record(
            &record("BBC News", Some("https://www.bbc.co.uk/news/x")),
            &snap(),
            &TypologyRules::bundled(),
        );
        assert_eq!(e.match_kind, MatchKind::None);
        assert_eq!(e.country.as_deref(), Some("GB"));
        assert_eq!(e.typology, SourceTypology::NonSmrMedia);
    }
}
