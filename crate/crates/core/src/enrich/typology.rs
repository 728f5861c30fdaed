use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::text;

pub const DEFAULT_RULES: &str = include_str!("../../data/typology_rules.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTypology {
    SmrOutlet,
    NonSmrMedia,
    SocialNetwork,
    Government,
    StInstitution,
    TransnationalProject,
    Other,
}

impl SourceTypology {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTypology::SmrOutlet => "smr_outlet",
            SourceTypology::NonSmrMedia => "non_smr_media",
            SourceTypology::SocialNetwork => "social_network",
            SourceTypology::Government => "government",
            SourceTypology::StInstitution => "st_institution",
            SourceTypology::TransnationalProject => "transnational_project",
            SourceTypology::Other => "other",
        }
    }
}

impl fmt::Display for SourceTypology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TypologyRules {
    #[serde(default)]
    pub social_network: Vec<String>,
    #[serde(default)]
    pub government: Vec<String>,
    #[serde(default)]
    pub st_institution: Vec<String>,
    #[serde(default)]
    pub transnational_project: Vec<String>,
    #[serde(default)]
    pub media_markers: Vec<String>,
}

/// `host` equals `pattern` or ends with `.pattern`.
pub fn host_matches(host: &str, pattern: &str) -> bool {
    let host = host.trim_end_matches('.').to_lowercase();
    let pattern = pattern.trim().trim_start_matches('.').to_lowercase();
    !pattern.is_empty()
        && (host == pattern
            || (host.len() > pattern.len()
                && host.ends_with(&pattern)
                && host.as_bytes()[host.len() - pattern.len() - 1] == b'.'))
}

impl TypologyRules {
    pub fn from_toml_str(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn bundled() -> Self {
        Self::from_toml_str(DEFAULT_RULES).expect("bundled typology rules parse")
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let s = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml_str(&s).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// One class per source. An SMR match wins; otherwise the first rule
    /// list that matches the host, then the media markers, then `other`.
    pub fn classify(&self, host: Option<&str>, outlet_name: &str, smr_matched: bool) -> SourceTypology {
        if smr_matched {
            return SourceTypology::SmrOutlet;
        }
        if let Some(host) = host {
            let ordered = [
                (&self.social_network, SourceTypology::SocialNetwork),
                (&self.government, SourceTypology::Government),
                (&self.st_institution, SourceTypology::StInstitution),
                (&self.transnational_project, SourceTypology::TransnationalProject),
            ];
            for (patterns, class) in ordered {
                if patterns.iter().any(|p| host_matches(host, p)) {
                    return class;
                }
            }
        }
        let name = text::strip_diacritics(&outlet_name.to_lowercase());
        let host = host.map(str::to_lowercase).unwrap_or_default();
        let marked = self.media_markers.iter().any(|m| {
            let m = text::strip_diacritics(&m.to_lowercase());
            name.contains(&m) || host.contains(&m)
        });
        if marked {
            SourceTypology::NonSmrMedia
        } else {
            SourceTypology::Other
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn host_pattern_boundaries() {
        assert!(host_matches("www.linkedin.com", "linkedin.com"));
        assert!(host_matches("linkedin.com", "linkedin.com"));
        assert!(!host_matches("notlinkedin.com", "linkedin.com"));
        assert!(host_matches("whitehouse.gov", "gov"));
    }

    #[test]
    fn named_examples() {
        let r = TypologyRules::bundled();
        assert_eq!(
            r.classify(Some("www.linkedin.com"), "", false),
            SourceTypology::SocialNetwork
        );
        assert_eq!(
            r.classify(Some("lamoncloa.gob.es"), "La Moncloa", false),
            SourceTypology::Government
        );
        assert_eq!(
            r.classify(Some("ugr.es"), "Universidad de Granada", false),
            SourceTypology::StInstitution
        );
        assert_eq!(
            r.classify(Some("iter.org"), "ITER", false),
            SourceTypology::TransnationalProject
        );
        assert_eq!(
            r.classify(Some("granadadigital.es"), "Granada Digital", false),
            SourceTypology::NonSmrMedia
        );
        assert_eq!(
            r.classify(Some("acme-widgets.com"), "Acme", false),
            SourceTypology::Other
        );
        assert_eq!(r.classify(Some("linkedin.com"), "", true), SourceTypology::SmrOutlet);
        assert_eq!(r.classify(None, "", false), SourceTypology::Other);
    }
}
