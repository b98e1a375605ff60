//! Live-web backend: static fetching over HTTP with politeness and size caps.
//!
//! Rendered observations require a browser-side integration; this backend
//! reports pages as static-only, and the page explorer degrades gracefully
//! (no dynamic loop on live pages). The interaction surface (`click`,
//! `resolve_selectors`) is the seam where a remote-debugging client plugs in.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime};

use url::Url;

use super::{
    kind_from_content_type, normalize_url, ContentKind, FetchBackend, FetchError, FetchMode,
    FetchPolicy, Link, PageSnapshot, UiNode,
};

/// Shared per-host politeness gate: consecutive fetches against one host are
/// spaced by at least the policy's minimum delay.
#[derive(Default)]
pub struct HostThrottle {
    last_hit: Mutex<HashMap<String, Instant>>,
}

impl HostThrottle {
    pub fn new() -> Self {
        Self::default()
    }

    fn wait(&self, host: &str, min_delay: Duration) {
        if min_delay.is_zero() {
            return;
        }
        let sleep_for = {
            let mut last = self.last_hit.lock().expect("throttle lock");
            let now = Instant::now();
            let wait = match last.get(host) {
                Some(prev) => min_delay.checked_sub(now.duration_since(*prev)),
                None => None,
            };
            last.insert(host.to_string(), now + wait.unwrap_or_default());
            wait
        };
        if let Some(d) = sleep_for {
            std::thread::sleep(d);
        }
    }
}

/// HTTP backend for real sites.
pub struct LiveBackend {
    client: reqwest::blocking::Client,
    throttle: Arc<HostThrottle>,
    fetches: AtomicU64,
}

impl LiveBackend {
    pub fn new(throttle: Arc<HostThrottle>) -> Result<Self, FetchError> {
        let client = reqwest::blocking::Client::builder()
            .user_agent(concat!("tabledive/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| FetchError::Network(e.to_string()))?;
        Ok(LiveBackend {
            client,
            throttle,
            fetches: AtomicU64::new(0),
        })
    }
}

impl FetchBackend for LiveBackend {
    fn fetch(
        &self,
        url: &Url,
        _mode: FetchMode,
        policy: &FetchPolicy,
    ) -> Result<PageSnapshot, FetchError> {
        if let Some(host) = url.host_str() {
            self.throttle
                .wait(host, Duration::from_millis(policy.min_delay_ms_per_host));
        }
        self.fetches.fetch_add(1, Ordering::Relaxed);

        let response = self
            .client
            .get(url.clone())
            .timeout(Duration::from_secs_f64(policy.timeout_seconds))
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    FetchError::Timeout
                } else {
                    FetchError::Network(e.to_string())
                }
            })?;

        let status = response.status();
        if !status.is_success() {
            return Err(FetchError::Http(status.as_u16()));
        }
        if let Some(len) = response.content_length() {
            if len as usize > policy.max_body_bytes {
                return Err(FetchError::TooLarge);
            }
        }
        let final_url = normalize_url(response.url().as_str(), None)
            .unwrap_or_else(|_| url.clone());
        let content_type = response
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let bytes = response.bytes().map_err(|e| {
            if e.is_timeout() {
                FetchError::Timeout
            } else {
                FetchError::Network(e.to_string())
            }
        })?;
        if bytes.len() > policy.max_body_bytes {
            return Err(FetchError::TooLarge);
        }

        let kind = kind_from_content_type(content_type.as_deref(), &final_url);
        if kind.is_document() {
            return Ok(PageSnapshot {
                url: final_url,
                content_kind: kind,
                static_text: String::new(),
                static_links: Vec::new(),
                rendered_text: None,
                rendered_links: None,
                accessibility_nodes: None,
                body: Some(bytes.to_vec()),
                screenshot: None,
                fetched_at: SystemTime::now(),
            });
        }

        let html = String::from_utf8_lossy(&bytes);
        let static_text = extract_text(&html);
        let static_links = extract_links(&html, &final_url);
        Ok(PageSnapshot {
            url: final_url,
            content_kind: ContentKind::Html,
            static_text,
            static_links,
            rendered_text: None,
            rendered_links: None,
            accessibility_nodes: None,
            body: None,
            screenshot: None,
            fetched_at: SystemTime::now(),
        })
    }

    fn click(&self, _url: &Url, _node_id: &str) -> Result<Option<String>, FetchError> {
        Err(FetchError::Unsupported("live backend has no browser session"))
    }

    fn resolve_selectors(
        &self,
        _url: &Url,
        _selectors: &[String],
    ) -> Result<Vec<UiNode>, FetchError> {
        Err(FetchError::Unsupported("live backend has no browser session"))
    }

    fn fetch_count(&self) -> u64 {
        self.fetches.load(Ordering::Relaxed)
    }
}

/// Visible-text extraction from raw HTML: drops script/style/head content,
/// replaces tags with spaces, decodes common entities, collapses whitespace.
pub(crate) fn extract_text(html: &str) -> String {
    let stripped = strip_elements(html, &["script", "style", "noscript", "head", "template"]);
    let mut text = String::with_capacity(stripped.len() / 4);
    let mut in_tag = false;
    for ch in stripped.chars() {
        match ch {
            '<' => {
                in_tag = true;
                text.push(' ');
            }
            '>' => in_tag = false,
            c if !in_tag => text.push(c),
            _ => {}
        }
    }
    collapse_whitespace(&decode_entities(&text))
}

/// Anchor extraction: `<a href=...>text</a>` pairs resolved against `base`.
/// Anchor text is whitespace-collapsed and truncated at 200 characters.
pub(crate) fn extract_links(html: &str, base: &Url) -> Vec<Link> {
    let anchor_re = regex::Regex::new(
        r#"(?is)<a\b[^>]*?href\s*=\s*("([^"]*)"|'([^']*)'|([^\s>]+))[^>]*>(.*?)</a>"#,
    )
    .expect("anchor regex");
    let mut links = Vec::new();
    for cap in anchor_re.captures_iter(html) {
        let href = cap
            .get(2)
            .or_else(|| cap.get(3))
            .or_else(|| cap.get(4))
            .map(|m| m.as_str())
            .unwrap_or_default();
        let lowered = href.trim().to_ascii_lowercase();
        if lowered.is_empty()
            || lowered.starts_with('#')
            || lowered.starts_with("javascript:")
            || lowered.starts_with("mailto:")
            || lowered.starts_with("data:")
        {
            continue;
        }
        let Ok(url) = normalize_url(href, Some(base)) else {
            continue;
        };
        let inner = cap.get(5).map(|m| m.as_str()).unwrap_or_default();
        let mut anchor = extract_text(inner);
        if anchor.len() > 200 {
            anchor.truncate(anchor.char_indices().take(200).last().map_or(0, |(i, c)| i + c.len_utf8()));
        }
        links.push(Link { url, anchor });
    }
    links
}

fn strip_elements(html: &str, tags: &[&str]) -> String {
    let mut out = html.to_string();
    for tag in tags {
        let re = regex::Regex::new(&format!(r"(?is)<{tag}\b.*?</{tag}>")).expect("strip regex");
        out = re.replace_all(&out, " ").into_owned();
    }
    out
}

fn decode_entities(text: &str) -> String {
    text.replace("&nbsp;", " ")
        .replace("&amp;", "&")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
}

pub(crate) fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(ch);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    const PAGE: &str = r#"<html><head><title>t</title><style>.x{}</style></head>
        <body><h1>Survey archive</h1>
        <script>var hidden = 42;</script>
        <p>Benin &amp; Burundi data</p>
        <a href="/countries/">All countries</a>
        <a href='detail.cfm?id=52'>Benin detail</a>
        <a href="javascript:void(0)">noise</a>
        </body></html>"#;

    #[test]
    fn extract_text_strips_scripts_and_decodes_entities() {
        let text = extract_text(PAGE);
        assert!(text.contains("Benin & Burundi data"));
        assert!(!text.contains("hidden"));
        assert!(!text.contains(".x{}"));
    }

    #[test]
    fn extract_links_resolves_and_filters() {
        let base = Url::parse("https://ex.org/reports/index.html").unwrap();
        let links = extract_links(PAGE, &base);
        assert_eq!(links.len(), 2);
        assert_eq!(links[0].url.as_str(), "https://ex.org/countries/");
        assert_eq!(links[0].anchor, "All countries");
        assert_eq!(links[1].url.as_str(), "https://ex.org/reports/detail.cfm?id=52");
    }

    #[test]
    fn live_backend_fetches_from_local_server() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 2048];
            let _ = stream.read(&mut buf);
            let body = PAGE;
            let response = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: text/html\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(response.as_bytes()).unwrap();
        });

        let backend = LiveBackend::new(Arc::new(HostThrottle::new())).unwrap();
        let url = normalize_url(&format!("http://127.0.0.1:{port}/"), None).unwrap();
        let policy = FetchPolicy {
            min_delay_ms_per_host: 0,
            ..FetchPolicy::default()
        };
        let snap = backend.fetch(&url, FetchMode::Dual, &policy).unwrap();
        handle.join().unwrap();

        assert_eq!(snap.content_kind, ContentKind::Html);
        assert!(snap.static_text.contains("Survey archive"));
        assert_eq!(snap.static_links.len(), 2);
        assert!(snap.rendered_text.is_none());
        assert_eq!(backend.fetch_count(), 1);
    }

    #[test]
    fn throttle_spaces_consecutive_hits() {
        let throttle = HostThrottle::new();
        let start = Instant::now();
        throttle.wait("h", Duration::from_millis(30));
        throttle.wait("h", Duration::from_millis(30));
        assert!(start.elapsed() >= Duration::from_millis(30));
        // Different hosts are independent.
        let start = Instant::now();
        throttle.wait("a", Duration::from_millis(200));
        throttle.wait("b", Duration::from_millis(200));
        assert!(start.elapsed() < Duration::from_millis(150));
    }
}
