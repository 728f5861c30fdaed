use std::collections::HashSet;
use std::net::IpAddr;
use std::sync::OnceLock;

/// Bundled public-suffix subset.
pub const PUBLIC_SUFFIX_DATA: &str = include_str!("../../data/public_suffixes.txt");

#[derive(Debug, Clone)]
pub struct SuffixList {
    rules: HashSet<String>,
}

impl SuffixList {
    pub fn parse(data: &str) -> Self {
        let rules = data
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with("//"))
            .map(str::to_lowercase)
            .collect();
        SuffixList { rules }
    }

    pub fn bundled() -> &'static SuffixList {
        static LIST: OnceLock<SuffixList> = OnceLock::new();
        LIST.get_or_init(|| SuffixList::parse(PUBLIC_SUFFIX_DATA))
    }

    /// Longest listed suffix of `host`; the last label when none is listed.
    pub fn public_suffix<'a>(&self, host: &'a str) -> &'a str {
        let mut best = host.rsplit('.').next().unwrap_or(host);
        let mut idx = 0;
        while let Some(dot) = host[idx..].find('.') {
            let candidate = &host[idx + dot + 1..];
            if self.rules.contains(candidate) && candidate.len() > best.len() {
                best = candidate;
            }
            idx += dot + 1;
        }
        if self.rules.contains(host) {
            best = host;
        }
        best
    }

    /// Public suffix plus one label, e.g. `blogs.elpais.com` -> `elpais.com`.
    /// `None` for IP addresses and bare suffixes.
    pub fn registrable_domain(&self, host: &str) -> Option<String> {
        let host = host.trim().trim_end_matches('.').to_lowercase();
        let bare = host.trim_start_matches('[').trim_end_matches(']');
        if host.is_empty() || bare.parse::<IpAddr>().is_ok() {
            return None;
        }
        let suffix = self.public_suffix(&host);
        if suffix.len() >= host.len() {
            return None;
        }
        let rest = &host[..host.len() - suffix.len() - 1];
        let label = rest.rsplit('.').next()?;
        Some(format!("{label}.{suffix}"))
    }
}

pub fn registrable_domain(host: &str) -> Option<String> {
    SuffixList::bundled().registrable_domain(host)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registrable_examples() {
        assert_eq!(registrable_domain("blogs.elpais.com").as_deref(), Some("elpais.com"));
        assert_eq!(registrable_domain("WWW.BBC.CO.UK.").as_deref(), Some("bbc.co.uk"));
        assert_eq!(
            registrable_domain("lamoncloa.gob.es").as_deref(),
            Some("lamoncloa.gob.es")
        );
        assert_eq!(registrable_domain("www.ugr.es").as_deref(), Some("ugr.es"));
        assert_eq!(registrable_domain("news.example.zz").as_deref(), Some("example.zz"));
        assert_eq!(registrable_domain("co.uk"), None);
        assert_eq!(registrable_domain("127.0.0.1"), None);
        assert_eq!(registrable_domain("localhost"), None);
    }
}
