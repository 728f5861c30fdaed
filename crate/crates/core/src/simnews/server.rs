use std::collections::{BTreeMap, HashSet};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::body::{to_bytes, Body};
use axum::extract::{Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Router;
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use url::{form_urlencoded, Url};

use super::corpus::{FixtureCorpus, Item, Listing};
use super::SimError;
use crate::llmmeta::BylineEchoModel;

/// Results per listing page, like the real aggregator.
pub const LISTING_CAP: usize = 100;

/// Model name that makes the completion route answer without labels.
pub const GARBAGE_MODEL: &str = "garbage";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedRequest {
    pub method: String,
    pub host: String,
    pub path: String,
    pub user_agent: Option<String>,
    pub cookie: Option<String>,
}

struct Shared {
    corpus: FixtureCorpus,
    hosts: HashSet<String>,
    log: Mutex<Vec<LoggedRequest>>,
    /// Flaky urls already answered with 503.
    tripped: Mutex<HashSet<String>>,
}

/// Running fixture server. Dropping it stops the server.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL for search, redirects and the model route; also usable as
    /// the http proxy that stands in for publisher hosts.
    pub fn endpoint(&self) -> Url {
        Url::parse(&format!("http://{}/", self.addr)).expect("socket address forms a url")
    }

    pub fn model_url(&self) -> Url {
        self.endpoint().join("model/complete").expect("static path")
    }

    pub fn request_log(&self) -> Vec<LoggedRequest> {
        self.shared.log.lock().unwrap().clone()
    }

    pub fn clear_log(&self) {
        self.shared.log.lock().unwrap().clear();
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Binds `bind` (port 0 picks a free port) and serves `corpus` from a
/// background thread.
pub fn serve(corpus: FixtureCorpus, bind: &str) -> Result<ServerHandle, SimError> {
    corpus.validate()?;
    let listener = std::net::TcpListener::bind(bind).map_err(|source| SimError::Bind {
        addr: bind.to_string(),
        source,
    })?;
    listener.set_nonblocking(true).map_err(|source| SimError::Bind {
        addr: bind.to_string(),
        source,
    })?;
    let addr = listener.local_addr().map_err(|source| SimError::Bind {
        addr: bind.to_string(),
        source,
    })?;
    let shared = Arc::new(Shared {
        hosts: corpus.publisher_hosts(),
        corpus,
        log: Mutex::new(Vec::new()),
        tripped: Mutex::new(HashSet::new()),
    });
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|source| SimError::Bind {
            addr: bind.to_string(),
            source,
        })?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let app = Router::new().fallback(dispatch).with_state(shared.clone());
    let thread = std::thread::Builder::new()
        .name("simnews".into())
        .spawn(move || {
            runtime.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(listener) {
                    Ok(l) => l,
                    Err(e) => {
                        tracing::error!(error = %e, "simnews listener setup failed");
                        return;
                    }
                };
                let served = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
                if let Err(e) = served {
                    tracing::error!(error = %e, "simnews stopped");
                }
            });
        })
        .map_err(|source| SimError::Bind {
            addr: bind.to_string(),
            source,
        })?;
    Ok(ServerHandle {
        addr,
        shared,
        stop: Some(tx),
        thread: Some(thread),
    })
}

fn header_str(headers: &HeaderMap, name: header::HeaderName) -> Option<String> {
    headers.get(name).and_then(|v| v.to_str().ok()).map(str::to_string)
}

fn html(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "text/html; charset=utf-8")], body).into_response()
}

fn redirect(location: &str) -> Response {
    let mut r = StatusCode::FOUND.into_response();
    if let Ok(v) = HeaderValue::from_str(location) {
        r.headers_mut().insert(header::LOCATION, v);
    }
    r
}

fn not_found() -> Response {
    html(
        StatusCode::NOT_FOUND,
        "<!DOCTYPE html><html><body><h1>404</h1></body></html>".into(),
    )
}

async fn dispatch(State(shared): State<Arc<Shared>>, req: Request) -> Response {
    let uri = req.uri().clone();
    let host = uri
        .authority()
        .map(|a| a.as_str().to_string())
        .or_else(|| header_str(req.headers(), header::HOST))
        .unwrap_or_default()
        .to_ascii_lowercase();
    let path = uri.path_and_query().map(|p| p.as_str()).unwrap_or("/").to_string();
    shared.log.lock().unwrap().push(LoggedRequest {
        method: req.method().to_string(),
        host: host.clone(),
        path: path.clone(),
        user_agent: header_str(req.headers(), header::USER_AGENT),
        cookie: header_str(req.headers(), header::COOKIE),
    });

    let bare_host = host.split(':').next().unwrap_or("");
    if shared.hosts.contains(bare_host) {
        return publisher(&shared, &host, &path);
    }
    let method = req.method().clone();
    let query: BTreeMap<String, String> = form_urlencoded::parse(uri.query().unwrap_or("").as_bytes())
        .into_owned()
        .collect();
    match (method, uri.path()) {
        (Method::GET, "/search") => {
            let edition = query.get("edition").map(String::as_str).unwrap_or("");
            let q = query.get("q").map(String::as_str).unwrap_or("");
            let mut r = html(StatusCode::OK, render_listing(&shared.corpus, edition, q));
            // a cookie-keeping client would echo this back
            r.headers_mut()
                .insert(header::SET_COOKIE, HeaderValue::from_static("NID=fixture; Path=/"));
            r
        }
        (Method::GET, "/r") => {
            let Some(target) = query.get("u") else {
                return StatusCode::BAD_REQUEST.into_response();
            };
            let hops: u32 = query.get("h").and_then(|h| h.parse().ok()).unwrap_or(1);
            if hops > 1 {
                redirect(&redirect_href(target, hops - 1))
            } else {
                redirect(target)
            }
        }
        (Method::GET, "/loop/a") => redirect("/loop/b"),
        (Method::GET, "/loop/b") => redirect("/loop/a"),
        (Method::GET, p) if p.starts_with("/chain/") => match p["/chain/".len()..].parse::<u32>() {
            Ok(0) => html(
                StatusCode::OK,
                "<!DOCTYPE html><html><body><p>end of chain</p></body></html>".into(),
            ),
            Ok(n) => redirect(&format!("/chain/{}", n - 1)),
            Err(_) => not_found(),
        },
        (Method::GET, "/healthz") => (StatusCode::OK, "ok").into_response(),
        (Method::POST, "/model/complete") => complete(req.into_body()).await,
        _ => not_found(),
    }
}

#[derive(Deserialize)]
struct CompletionRequest {
    #[serde(default)]
    model: String,
    prompt: String,
}

async fn complete(body: Body) -> Response {
    let Ok(bytes) = to_bytes(body, 4 << 20).await else {
        return StatusCode::PAYLOAD_TOO_LARGE.into_response();
    };
    let Ok(req) = serde_json::from_slice::<CompletionRequest>(&bytes) else {
        return StatusCode::BAD_REQUEST.into_response();
    };
    let text = if req.model == GARBAGE_MODEL {
        "I am sorry, I cannot summarise this article.".to_string()
    } else {
        BylineEchoModel::answer(&req.prompt)
    };
    axum::Json(serde_json::json!({ "model": req.model, "text": text })).into_response()
}

fn publisher(shared: &Shared, host: &str, path: &str) -> Response {
    let Ok(url) = Url::parse(&format!("http://{host}{path}")) else {
        return not_found();
    };
    match shared.corpus.find(&url) {
        Some(Item::Article(a)) => {
            if a.flaky && shared.tripped.lock().unwrap().insert(a.url.to_string()) {
                return (StatusCode::SERVICE_UNAVAILABLE, "try again").into_response();
            }
            if a.paywalled {
                return html(StatusCode::OK, paywall_page(&a.headline));
            }
            html(StatusCode::OK, a.body_html.clone())
        }
        Some(Item::Noise(n)) => (
            StatusCode::OK,
            [(header::CONTENT_TYPE, n.kind.content_type())],
            n.body(),
        )
            .into_response(),
        None => not_found(),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn paywall_page(headline: &str) -> String {
    format!(
        "<!DOCTYPE html><html><head><title>{h}</title></head><body><main><article><h1>{h}</h1>\
         <p>Este contenido es exclusivo para suscriptores.</p>\
         <div class=\"paywall\"><p>Suscríbete para seguir leyendo.</p></div></article></main></body></html>",
        h = escape(headline)
    )
}

fn redirect_href(target: &str, hops: u32) -> String {
    format!("/r?h={hops}&u={}", utf8_percent_encode(target, NON_ALPHANUMERIC))
}

fn listing_href(url: &Url, hops: u8, tracking: bool) -> String {
    if hops > 0 {
        return redirect_href(url.as_str(), hops as u32);
    }
    let mut u = url.clone();
    if tracking {
        u.query_pairs_mut()
            .append_pair("utm_source", "newsaggregator")
            .append_pair("utm_medium", "referral");
    }
    u.to_string()
}

/// Listing HTML for one edition and rendered query; an unknown pair gives
/// an empty listing.
pub fn render_listing(corpus: &FixtureCorpus, edition: &str, query: &str) -> String {
    let empty = Listing {
        edition: edition.to_string(),
        query: query.to_string(),
        results: Vec::new(),
    };
    let listing = corpus.listing(edition, query).unwrap_or(&empty);
    let mut out = format!(
        "<!DOCTYPE html><html><head><meta charset=\"utf-8\"><title>{} - News</title></head><body>\
         <form role=\"search\"><input name=\"q\" value=\"{}\"></form>\n<ol class=\"results\">\n",
        escape(query),
        escape(query)
    );
    for r in listing.results.iter().take(LISTING_CAP) {
        let Some(item) = corpus.find(&r.url) else { continue };
        let headline = r.headline.as_deref().unwrap_or(item.headline());
        let time = match (r.relative, item.relative_time(), item.published_at()) {
            (true, Some(rel), _) => format!("<time>{}</time>", escape(rel)),
            (_, _, Some(t)) => format!(
                "<time datetime=\"{}\">{}</time>",
                t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                t.format("%-d %b %Y")
            ),
            _ => String::new(),
        };
        out.push_str(&format!(
            "<li class=\"result\"><a class=\"headline\" href=\"{}\">{}</a> <span class=\"outlet\">{}</span> {}</li>\n",
            escape(&listing_href(&r.url, r.hops, r.tracking)),
            escape(headline),
            escape(item.outlet()),
            time
        ));
    }
    out.push_str("</ol></body></html>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harvest::{ListingParser, SimpleListingParser};

    #[test]
    fn listing_round_trips_through_parser() {
        let c = FixtureCorpus::default_corpus();
        for l in &c.listings {
            let body = render_listing(&c, &l.edition, &l.query);
            let entries = SimpleListingParser.parse(&body).unwrap();
            assert_eq!(entries.len(), l.results.len(), "{} {}", l.edition, l.query);
        }
        let body = render_listing(&c, "xx:XX", "nothing");
        assert!(SimpleListingParser.parse(&body).unwrap().is_empty());
    }

    #[test]
    fn hrefs() {
        let u = Url::parse("http://a.es/x?id=1").unwrap();
        assert_eq!(listing_href(&u, 0, false), "http://a.es/x?id=1");
        assert!(listing_href(&u, 0, true).contains("utm_source="));
        assert_eq!(listing_href(&u, 2, false), "/r?h=2&u=http%3A%2F%2Fa%2Ees%2Fx%3Fid%3D1");
    }
}
