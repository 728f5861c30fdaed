//! Record schema, dataset snapshots and delimited-text persistence.
//!
//! The on-disk format is RFC 4180 CSV (CRLF line ends, UTF-8, quoting only
//! where needed) with the twenty canonical field names as header.
//! `export -> import -> export` is byte-identical.

mod record;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

pub use record::{ContentStatus, ExtractionMethod, NewsRecord, QualityFlag, NO_CONTENT_LABEL};

use crate::dedup::Deduplicator;
use crate::plan::Stage;
use crate::text;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("import needs a headline column and a url or outlet column; mapped fields present: {present:?}")]
    MissingColumns { present: Vec<String> },
    #[error("invalid column mapping: {0}")]
    Mapping(String),
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("schema version mismatch: {0} vs {1}")]
    SchemaMismatch(u32, u32),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// The twenty schema fields, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Id,
    OutletName,
    SourceDomain,
    PublishedAt,
    CollectedAt,
    Headline,
    Author,
    GeographicReference,
    ThematicCategory,
    SourceUrl,
    FullText,
    CharacterCount,
    WordCount,
    FeaturedImageUrl,
    ExtractionMethod,
    DetectedLanguage,
    AiSummary,
    QualityFlags,
    /// Artifact-defined provenance field.
    Stage,
    /// Artifact-defined provenance field.
    EditionId,
}

impl Field {
    pub const ALL: [Field; 20] = [
        Field::Id,
        Field::OutletName,
        Field::SourceDomain,
        Field::PublishedAt,
        Field::CollectedAt,
        Field::Headline,
        Field::Author,
        Field::GeographicReference,
        Field::ThematicCategory,
        Field::SourceUrl,
        Field::FullText,
        Field::CharacterCount,
        Field::WordCount,
        Field::FeaturedImageUrl,
        Field::ExtractionMethod,
        Field::DetectedLanguage,
        Field::AiSummary,
        Field::QualityFlags,
        Field::Stage,
        Field::EditionId,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Id => "id",
            Field::OutletName => "outlet_name",
            Field::SourceDomain => "source_domain",
            Field::PublishedAt => "published_at",
            Field::CollectedAt => "collected_at",
            Field::Headline => "headline",
            Field::Author => "author",
            Field::GeographicReference => "geographic_reference",
            Field::ThematicCategory => "thematic_category",
            Field::SourceUrl => "source_url",
            Field::FullText => "full_text",
            Field::CharacterCount => "character_count",
            Field::WordCount => "word_count",
            Field::FeaturedImageUrl => "featured_image_url",
            Field::ExtractionMethod => "extraction_method",
            Field::DetectedLanguage => "detected_language",
            Field::AiSummary => "ai_summary",
            Field::QualityFlags => "quality_flags",
            Field::Stage => "stage",
            Field::EditionId => "edition_id",
        }
    }
}

impl FromStr for Field {
    type Err = StoreError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Field::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| StoreError::Mapping(format!("unknown field {s:?}")))
    }
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// RFC 3339, `YYYY-MM-DD[ HH:MM[:SS]]`, or `DD/MM/YYYY[ HH:MM]`, all UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in [
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%d/%m/%Y %H:%M:%S",
        "%d/%m/%Y %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    for fmt in ["%Y-%m-%d", "%d/%m/%Y"] {
        if let Ok(d) = NaiveDate::parse_from_str(s, fmt) {
            return Some(d.and_hms_opt(0, 0, 0)?.and_utc());
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetOrigin {
    Aggregator,
    LicensedA,
    LicensedB,
    Import,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub pass: String,
    pub before: usize,
    pub after: usize,
}

/// Named record collection with unique ids and an append-only pass log.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub origin: DatasetOrigin,
    pub schema_version: u32,
    records: Vec<NewsRecord>,
    audit: Vec<AuditEntry>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, origin: DatasetOrigin) -> Self {
        Dataset {
            name: name.into(),
            origin,
            schema_version: SCHEMA_VERSION,
            records: Vec::new(),
            audit: Vec::new(),
        }
    }

    pub fn from_records(
        name: impl Into<String>,
        origin: DatasetOrigin,
        records: Vec<NewsRecord>,
    ) -> Result<Self, StoreError> {
        let mut ds = Dataset::new(name, origin);
        for r in records {
            ds.push(r)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, record: NewsRecord) -> Result<(), StoreError> {
        if self.records.iter().any(|r| r.id == record.id) {
            return Err(StoreError::DuplicateId(record.id));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[NewsRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<NewsRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&NewsRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Replaces the records through `pass` and logs the before/after sizes.
    pub fn apply_pass(
        &mut self,
        pass: &str,
        f: impl FnOnce(Vec<NewsRecord>) -> Vec<NewsRecord>,
    ) -> Result<(), StoreError> {
        let before = self.records.len();
        let next = f(std::mem::take(&mut self.records));
        let mut seen = HashSet::new();
        for r in &next {
            if !seen.insert(r.id.as_str()) {
                return Err(StoreError::DuplicateId(r.id.clone()));
            }
        }
        self.records = next;
        self.audit.push(AuditEntry {
            pass: pass.to_string(),
            before,
            after: self.records.len(),
        });
        Ok(())
    }

    pub fn audit_log(&self) -> &[AuditEntry] {
        &self.audit
    }
}

/// Source column name -> schema field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub columns: BTreeMap<String, Field>,
}

impl ColumnMapping {
    /// Identity mapping over the canonical column names.
    pub fn canonical() -> Self {
        ColumnMapping {
            columns: Field::ALL.iter().map(|f| (f.name().to_string(), *f)).collect(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, StoreError> {
        toml::from_str(s).map_err(|e| StoreError::Mapping(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let s = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuarantinedRow {
    /// 1-based line number in the source file.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ImportOutcome {
    pub dataset: Dataset,
    pub quarantined: Vec<QuarantinedRow>,
}

impl ImportOutcome {
    pub fn imported(&self) -> usize {
        self.dataset.len()
    }
}

fn none_if_empty(s: &str) -> Option<String> {
    (!s.is_empty()).then(|| s.to_string())
}

fn opt_str(s: &Option<String>) -> &str {
    s.as_deref().unwrap_or("")
}

fn record_row(r: &NewsRecord) -> [String; 20] {
    [
        r.id.clone(),
        r.outlet_name.clone(),
        r.source_domain.clone(),
        r.published_at.as_ref().map(format_timestamp).unwrap_or_default(),
        r.collected_at.as_ref().map(format_timestamp).unwrap_or_default(),
        r.headline.clone(),
        opt_str(&r.author).to_string(),
        opt_str(&r.geographic_reference).to_string(),
        opt_str(&r.thematic_category).to_string(),
        r.source_url.as_ref().map(Url::to_string).unwrap_or_default(),
        r.full_text().to_string(),
        r.character_count().to_string(),
        r.word_count().to_string(),
        r.featured_image_url.as_ref().map(Url::to_string).unwrap_or_default(),
        r.extraction_method.map(|m| m.as_str().to_string()).unwrap_or_default(),
        opt_str(&r.detected_language).to_string(),
        opt_str(&r.ai_summary).to_string(),
        r.quality_flags_string(),
        r.stage.map(|s| s.as_str().to_string()).unwrap_or_default(),
        opt_str(&r.edition_id).to_string(),
    ]
}

/// Writes the dataset as canonical CSV; returns the number of data rows.
pub fn write_delimited<W: Write>(dataset: &Dataset, out: W) -> Result<usize, StoreError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(out);
    w.write_record(Field::ALL.iter().map(|f| f.name()))?;
    for r in dataset.records() {
        w.write_record(record_row(r))?;
    }
    w.flush().map_err(|e| StoreError::Csv(e.into()))?;
    Ok(dataset.len())
}

pub fn export_delimited(dataset: &Dataset, path: &Path) -> Result<usize, StoreError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut buf = std::io::BufWriter::new(file);
    let n = write_delimited(dataset, &mut buf)?;
    buf.flush().map_err(io_err(path))?;
    Ok(n)
}

/// Reads delimited text through `mapping`. Rows that fail coercion are
/// quarantined with their line number; the rest are imported.
pub fn read_delimited<R: Read>(
    input: R,
    name: &str,
    mapping: &ColumnMapping,
    origin: DatasetOrigin,
) -> Result<ImportOutcome, StoreError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut field_at: Vec<(usize, Field)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        let key = h.trim_start_matches('\u{feff}');
        if let Some(f) = mapping.columns.get(key) {
            field_at.push((i, *f));
        }
    }
    let present: BTreeSet<Field> = field_at.iter().map(|(_, f)| *f).collect();
    if !present.contains(&Field::Headline)
        || !(present.contains(&Field::SourceUrl) || present.contains(&Field::OutletName))
    {
        return Err(StoreError::MissingColumns {
            present: present.iter().map(|f| f.name().to_string()).collect(),
        });
    }

    let mut dataset = Dataset::new(name, origin);
    let mut quarantined = Vec::new();
    for (row_idx, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(row_idx as u64 + 2);
        match coerce_row(&row, &field_at, name, row_idx) {
            Ok(rec) => {
                if let Err(e) = dataset.push(rec) {
                    quarantined.push(QuarantinedRow {
                        line,
                        reason: e.to_string(),
                    });
                }
            }
            Err(reason) => quarantined.push(QuarantinedRow { line, reason }),
        }
    }
    if !quarantined.is_empty() {
        tracing::warn!(dataset = name, count = quarantined.len(), "rows quarantined on import");
    }
    Ok(ImportOutcome { dataset, quarantined })
}

fn coerce_row(
    row: &csv::StringRecord,
    field_at: &[(usize, Field)],
    name: &str,
    row_idx: usize,
) -> Result<NewsRecord, String> {
    let mut rec = NewsRecord::new("", "");
    let mut full_text = String::new();
    for &(i, field) in field_at {
        let v = row.get(i).unwrap_or("");
        let ts = |v: &str| -> Result<Option<DateTime<Utc>>, String> {
            if v.trim().is_empty() {
                Ok(None)
            } else {
                parse_timestamp(v)
                    .map(Some)
                    .ok_or_else(|| format!("malformed {}: {v:?}", field.name()))
            }
        };
        let url = |v: &str| -> Result<Option<Url>, String> {
            if v.trim().is_empty() {
                Ok(None)
            } else {
                Url::parse(v.trim())
                    .map(Some)
                    .map_err(|e| format!("malformed {}: {v:?} ({e})", field.name()))
            }
        };
        match field {
            Field::Id => rec.id = v.to_string(),
            Field::OutletName => rec.outlet_name = v.to_string(),
            Field::SourceDomain => rec.source_domain = v.to_string(),
            Field::PublishedAt => rec.published_at = ts(v)?,
            Field::CollectedAt => rec.collected_at = ts(v)?,
            Field::Headline => rec.headline = v.to_string(),
            Field::Author => rec.author = none_if_empty(v),
            Field::GeographicReference => rec.geographic_reference = none_if_empty(v),
            Field::ThematicCategory => rec.thematic_category = none_if_empty(v),
            Field::SourceUrl => rec.source_url = url(v)?,
            Field::FullText => full_text = v.to_string(),
            // derived from full_text
            Field::CharacterCount | Field::WordCount => {}
            Field::FeaturedImageUrl => rec.featured_image_url = url(v)?,
            Field::ExtractionMethod => {
                rec.extraction_method = match v {
                    "" => None,
                    s => Some(s.parse()?),
                }
            }
            Field::DetectedLanguage => rec.detected_language = none_if_empty(v),
            Field::AiSummary => rec.ai_summary = none_if_empty(v),
            Field::QualityFlags => {
                rec.quality_flags = v
                    .split('|')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().expect("infallible"))
                    .collect()
            }
            Field::Stage => {
                rec.stage = match v {
                    "" => None,
                    s => Some(s.parse::<Stage>()?),
                }
            }
            Field::EditionId => rec.edition_id = none_if_empty(v),
        }
    }
    if rec.headline.trim().is_empty() {
        return Err("empty headline".into());
    }
    rec.set_full_text(full_text);
    if rec.id.is_empty() {
        rec.id = text::short_digest(format!("{name}|{row_idx}|{}", rec.headline), 16);
    }
    Ok(rec)
}

pub fn import_delimited(
    path: &Path,
    mapping: &ColumnMapping,
    origin: DatasetOrigin,
) -> Result<ImportOutcome, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "import".into());
    read_delimited(std::io::BufReader::new(file), &name, mapping, origin)
}

/// Surviving record id -> names of the datasets that contributed to it.
pub type ProvenanceMap = BTreeMap<String, BTreeSet<String>>;

/// Concatenates datasets and removes duplicates across them.
pub fn merge(name: &str, datasets: &[Dataset], dedup: &Deduplicator) -> Result<(Dataset, ProvenanceMap), StoreError> {
    if let Some(first) = datasets.first() {
        if let Some(other) = datasets.iter().find(|d| d.schema_version != first.schema_version) {
            return Err(StoreError::SchemaMismatch(first.schema_version, other.schema_version));
        }
    }
    let mut all = Vec::new();
    let mut source = Vec::new();
    for d in datasets {
        for r in d.records() {
            all.push(r.clone());
            source.push(d.name.clone());
        }
    }
    let outcome = dedup.merge(&all);
    let mut provenance = ProvenanceMap::new();
    for (group, kept) in outcome.groups.iter().zip(&outcome.unique) {
        provenance
            .entry(kept.id.clone())
            .or_default()
            .extend(group.iter().map(|&i| source[i].clone()));
    }
    let origin = match datasets.first().map(|d| d.origin) {
        Some(o) if datasets.iter().all(|d| d.origin == o) => o,
        _ => DatasetOrigin::Import,
    };
    let merged = Dataset::from_records(name, origin, outcome.unique)?;
    Ok((merged, provenance))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str) -> NewsRecord {
        let mut r = NewsRecord::new(id, format!("Titular {id}"));
        r.outlet_name = "El País".into();
        r.source_url = Some(Url::parse(&format!("https://elpais.com/{id}")).unwrap());
        r.set_full_text("Línea uno, \"citada\"\nlínea dos");
        r.quality_flags.insert(QualityFlag::DateApproximate);
        r.stage = Some(Stage::S4Domains);
        r
    }

    #[test]
    fn field_names_are_twenty_and_unique() {
        let names: BTreeSet<&str> = Field::ALL.iter().map(|f| f.name()).collect();
        assert_eq!(names.len(), 20);
    }

    #[test]
    fn export_writes_header_plus_rows_and_quotes_newlines() {
        let ds = Dataset::from_records(
            "d",
            DatasetOrigin::Aggregator,
            vec![sample("a"), sample("b"), sample("c")],
        )
        .unwrap();
        let mut buf = Vec::new();
        assert_eq!(write_delimited(&ds, &mut buf).unwrap(), 3);
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,outlet_name,source_domain,"));
        assert!(text.contains("\"Línea uno, \"\"citada\"\"\nlínea dos\""));
        let back = read_delimited(&buf[..], "d", &ColumnMapping::canonical(), DatasetOrigin::Aggregator).unwrap();
        assert!(back.quarantined.is_empty());
        assert_eq!(back.dataset.records(), ds.records());
    }

    #[test]
    fn header_only_is_empty_dataset() {
        let input = Field::ALL.iter().map(|f| f.name()).collect::<Vec<_>>().join(",") + "\r\n";
        let out = read_delimited(
            input.as_bytes(),
            "e",
            &ColumnMapping::canonical(),
            DatasetOrigin::Import,
        )
        .unwrap();
        assert!(out.dataset.is_empty());
    }

    #[test]
    fn licensed_export_with_mapping() {
        let mapping = ColumnMapping::from_toml_str(
            r#"[columns]
            "Titular" = "headline"
            "Medio" = "outlet_name"
            "Fecha" = "published_at"
            "#,
        )
        .unwrap();
        let input = "Titular,Medio,Fecha\nIFMIF-DONES llega,Ideal,12/03/2024\nOtro,ABC,not-a-date\nTercero,El País,2024-03-14\n";
        let out = read_delimited(input.as_bytes(), "mynews", &mapping, DatasetOrigin::LicensedA).unwrap();
        assert_eq!(out.imported(), 2);
        assert_eq!(out.quarantined.len(), 1);
        assert_eq!(out.quarantined[0].line, 3);
        let r = &out.dataset.records()[0];
        assert_eq!(r.full_text(), "");
        assert!(r.source_url.is_none());
        assert_eq!(r.published_at.unwrap().to_rfc3339(), "2024-03-12T00:00:00+00:00");
        assert_eq!(out.dataset.origin, DatasetOrigin::LicensedA);
    }

    #[test]
    fn missing_mandatory_columns() {
        let mapping =
            ColumnMapping::from_toml_str("[columns]\n\"Fecha\" = \"published_at\"\n\"T\" = \"headline\"\n").unwrap();
        let err = read_delimited(
            "T,Fecha\nx,2024-01-01\n".as_bytes(),
            "m",
            &mapping,
            DatasetOrigin::LicensedB,
        );
        assert!(matches!(err, Err(StoreError::MissingColumns { .. })));
    }

    #[test]
    fn merge_disjoint_and_identical() {
        let a = Dataset::from_records(
            "a",
            DatasetOrigin::Aggregator,
            (0..5).map(|i| sample(&format!("a{i}"))).collect(),
        )
        .unwrap();
        let b = Dataset::from_records(
            "b",
            DatasetOrigin::Aggregator,
            (0..5).map(|i| sample(&format!("b{i}"))).collect(),
        )
        .unwrap();
        let dd = Deduplicator::default();
        let (m, _) = merge("m", &[a.clone(), b], &dd).unwrap();
        assert_eq!(m.len(), 10);

        let mut a2 = a.clone();
        a2.name = "a2".into();
        let (m, prov) = merge("m", &[a.clone(), a2], &dd).unwrap();
        assert_eq!(m.len(), 5);
        for sources in prov.values() {
            assert_eq!(sources.iter().map(String::as_str).collect::<Vec<_>>(), ["a", "a2"]);
        }
    }

    #[test]
    fn merge_rejects_schema_mismatch() {
        let a = Dataset::new("a", DatasetOrigin::Aggregator);
        let mut b = Dataset::new("b", DatasetOrigin::Aggregator);
        b.schema_version = 2;
        assert!(matches!(
            merge("m", &[a, b], &Deduplicator::default()),
            Err(StoreError::SchemaMismatch(1, 2))
        ));
    }

    #[test]
    fn passes_are_logged() {
        let mut ds = Dataset::from_records("d", DatasetOrigin::Aggregator, vec![sample("a"), sample("b")]).unwrap();
        ds.apply_pass("drop-b", |v| v.into_iter().filter(|r| r.id != "b").collect())
            .unwrap();
        assert_eq!(
            ds.audit_log(),
            &[AuditEntry {
                pass: "drop-b".into(),
                before: 2,
                after: 1
            }]
        );
    }

    #[test]
    fn timestamp_formats() {
        assert!(parse_timestamp("2024-05-03T08:00:00Z").is_some());
        assert!(parse_timestamp("2024-05-03 08:00").is_some());
        assert!(parse_timestamp("03/05/2024").is_some());
        assert!(parse_timestamp("May 3").is_none());
    }
}
