use std::fmt;

use url::{form_urlencoded, Url};

use super::DedupError;

/// Query keys removed by default, compared case-insensitively.
pub const DEFAULT_TRACKING_KEYS: &[&str] = &[
    "fbclid", "gclid", "dclid", "msclkid", "yclid", "mc_cid", "mc_eid", "igshid", "_ga", "_gl", "ref_src", "ocid",
    "cmpid",
];

/// Key prefixes removed by default.
pub const DEFAULT_TRACKING_PREFIXES: &[&str] = &["utm_"];

/// Normalized URL used as a dedup key.
///
/// The scheme is not part of the key, so `http://` and `https://` copies of
/// the same page compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalUrl {
    host: String,
    port: Option<u16>,
    path: String,
    params: Vec<(String, String)>,
}

impl CanonicalUrl {
    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn params(&self) -> &[(String, String)] {
        &self.params
    }

    /// Re-attaches a scheme so the key can be fed back through the canonicalizer.
    pub fn to_url_string(&self) -> String {
        // An explicit :80 can only survive from an https URL.
        let scheme = if self.port == Some(80) { "https" } else { "http" };
        format!("{scheme}://{self}")
    }
}

impl fmt::Display for CanonicalUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.host)?;
        if let Some(port) = self.port {
            write!(f, ":{port}")?;
        }
        f.write_str(&self.path)?;
        if !self.params.is_empty() {
            let query = form_urlencoded::Serializer::new(String::new())
                .extend_pairs(self.params.iter())
                .finish();
            write!(f, "?{query}")?;
        }
        Ok(())
    }
}

/// URL normalizer with a configurable tracking-parameter list.
#[derive(Debug, Clone)]
pub struct Canonicalizer {
    tracking_keys: Vec<String>,
    tracking_prefixes: Vec<String>,
}

impl Default for Canonicalizer {
    fn default() -> Self {
        Canonicalizer {
            tracking_keys: DEFAULT_TRACKING_KEYS.iter().map(|s| s.to_string()).collect(),
            tracking_prefixes: DEFAULT_TRACKING_PREFIXES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Canonicalizer {
    pub fn with_extra_keys<I, S>(mut self, keys: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.tracking_keys
            .extend(keys.into_iter().map(|k| k.into().to_ascii_lowercase()));
        self
    }

    fn is_tracking(&self, key: &str) -> bool {
        let key = key.to_ascii_lowercase();
        self.tracking_keys.contains(&key)
            || self.tracking_prefixes.iter().any(|p| key.starts_with(p.as_str()))
    }

    /// `url` without its tracking parameters; everything else untouched.
    pub fn strip_tracking(&self, url: &Url) -> Url {
        let kept: Vec<(String, String)> = url
            .query_pairs()
            .filter(|(k, _)| !self.is_tracking(k))
            .map(|(k, v)| (k.into_owned(), v.into_owned()))
            .collect();
        let mut out = url.clone();
        if kept.len() == url.query_pairs().count() {
            return out;
        }
        if kept.is_empty() {
            out.set_query(None);
        } else {
            out.query_pairs_mut().clear().extend_pairs(kept);
        }
        out
    }

    pub fn canonicalize_str(&self, raw: &str) -> Result<CanonicalUrl, DedupError> {
        let url = Url::parse(raw.trim()).map_err(|e| DedupError::InvalidUrl {
            url: raw.to_string(),
            reason: e.to_string(),
        })?;
        self.canonicalize(&url)
    }

    pub fn canonicalize(&self, url: &Url) -> Result<CanonicalUrl, DedupError> {
        let host = url
            .host_str()
            .filter(|h| !h.is_empty())
            .ok_or_else(|| DedupError::InvalidUrl {
                url: url.to_string(),
                reason: "missing host".into(),
            })?
            .trim_end_matches('.')
            .to_lowercase();
        // `port()` is already None for the scheme's default port.
        let port = url.port();

        let mut path = url.path().to_string();
        while path.len() > 1 && path.ends_with('/') {
            path.pop();
        }
        if path.is_empty() {
            path.push('/');
        }

        let mut params: Vec<(String, String)> = url
            .query_pairs()
            .filter(|(k, _)| !k.is_empty() && !self.is_tracking(k))
            .map(|(k, v)| (k.into_owned(), v.into_owned()))
            .collect();
        params.sort();

        Ok(CanonicalUrl {
            host,
            port,
            path,
            params,
        })
    }
}

/// Canonicalizes with the default tracking-parameter list.
pub fn canonicalize_url(raw: &str) -> Result<CanonicalUrl, DedupError> {
    Canonicalizer::default().canonicalize_str(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strips_port_slash_and_tracking() {
        let c = canonicalize_url("HTTP://Example.com:80/a/?utm_source=x").unwrap();
        assert_eq!(c.host(), "example.com");
        assert_eq!(c.path(), "/a");
        assert!(c.params().is_empty());
        assert_eq!(c.to_string(), "example.com/a");
    }

    #[test]
    fn sorts_remaining_params() {
        let c = canonicalize_url("https://example.com/a?b=2&a=1").unwrap();
        assert_eq!(
            c.params(),
            &[("a".to_string(), "1".to_string()), ("b".to_string(), "2".to_string())]
        );
    }

    #[test]
    fn keeps_root_and_nondefault_port() {
        let c = canonicalize_url("https://example.com:8443/#frag").unwrap();
        assert_eq!(c.to_string(), "example.com:8443/");
        let c = canonicalize_url("https://Example.com/?fbclid=1&GCLID=2&id=7").unwrap();
        assert_eq!(c.to_string(), "example.com/?id=7");
    }

    #[test]
    fn scheme_is_not_part_of_key() {
        assert_eq!(
            canonicalize_url("http://a.org/x").unwrap(),
            canonicalize_url("https://a.org/x/").unwrap()
        );
    }

    #[test]
    fn extra_keys_are_configurable() {
        let c = Canonicalizer::default().with_extra_keys(["sessionid"]);
        let k = c.canonicalize_str("https://a.org/x?sessionid=9&p=1").unwrap();
        assert_eq!(k.to_string(), "a.org/x?p=1");
    }

    #[test]
    fn strip_tracking_keeps_scheme_and_other_params() {
        let c = Canonicalizer::default();
        let u = Url::parse("http://a.org/x?utm_source=n&utm_medium=r").unwrap();
        assert_eq!(c.strip_tracking(&u).as_str(), "http://a.org/x");
        let u = Url::parse("https://a.org/x?id=3&fbclid=z").unwrap();
        assert_eq!(c.strip_tracking(&u).as_str(), "https://a.org/x?id=3");
        let u = Url::parse("https://a.org/x/?b=2&a=1").unwrap();
        assert_eq!(c.strip_tracking(&u), u);
    }

    #[test]
    fn rejects_garbage() {
        assert!(canonicalize_url("not a url").is_err());
        assert!(canonicalize_url("mailto:someone@example.com").is_err());
    }

    fn arb_url() -> impl Strategy<Value = String> {
        let host = prop::sample::select(vec!["Example.COM", "elpais.com", "a.b.org.", "xn--pas-3na.es"]);
        let port = prop::sample::select(vec!["", ":80", ":443", ":8080"]);
        let seg = "[a-zA-Z0-9%._~-]{0,8}";
        let path = prop::collection::vec(seg, 0..4).prop_map(|v| v.join("/"));
        let key = prop::sample::select(vec!["utm_source", "id", "b", "a", "fbclid", "q", "UTM_x", "p"]);
        let val = "[a-z0-9 +%&=]{0,5}";
        let query = prop::collection::vec((key, val), 0..4);
        let trailing = prop::sample::select(vec!["", "/", "//"]);
        let scheme = prop::sample::select(vec!["http", "https", "HTTPS"]);
        (scheme, host, port, path, trailing, query).prop_map(|(s, h, p, path, t, q)| {
            let qs: Vec<String> = q
                .into_iter()
                .map(|(k, v)| format!("{k}={}", v.replace('&', "%26")))
                .collect();
            let mut u = format!("{s}://{h}{p}/{path}{t}");
            if !qs.is_empty() {
                u.push('?');
                u.push_str(&qs.join("&"));
            }
            u.push_str("#frag");
            u
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn canonicalization_is_idempotent(raw in arb_url()) {
            let once = canonicalize_url(&raw).unwrap();
            let twice = canonicalize_url(&once.to_url_string()).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(once.to_string(), twice.to_string());
        }
    }
}
