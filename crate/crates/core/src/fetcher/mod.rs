//! Page acquisition in two fidelities (static extract, rendered observation)
//! plus binary documents, behind a backend interface.
//!
//! Two backends ship: [`LiveBackend`] speaks HTTP to the open web, and
//! [`WorldBackend`] serves a deterministic in-memory world for offline runs.

mod live;
mod world;

use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

pub use live::{HostThrottle, LiveBackend};
pub use world::WorldBackend;

/// What kind of resource a fetch returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentKind {
    Html,
    DocumentPdf,
    DocumentImage,
    Error,
}

impl ContentKind {
    pub fn is_document(self) -> bool {
        matches!(self, ContentKind::DocumentPdf | ContentKind::DocumentImage)
    }
}

/// One interactive element surfaced by the accessibility structure of a page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiNode {
    /// Stable opaque identifier, unique within a snapshot.
    pub node_id: String,
    /// button, tab, link, generic, ...
    pub role: String,
    pub label: String,
    /// Whether the element is already registered as clickable; unregistered
    /// nodes require an accessibility update before they can be clicked.
    pub registered_clickable: bool,
}

/// An outgoing hyperlink with its annotation text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub url: Url,
    pub anchor: String,
}

/// Everything the explorer sees after fetching one URL.
#[derive(Debug, Clone)]
pub struct PageSnapshot {
    pub url: Url,
    pub content_kind: ContentKind,
    /// Lower-fidelity extract derived from static HTML.
    pub static_text: String,
    pub static_links: Vec<Link>,
    /// Higher-fidelity observation after rendering; present only for HTML
    /// pages fetched in dual mode.
    pub rendered_text: Option<String>,
    pub rendered_links: Option<Vec<Link>>,
    pub accessibility_nodes: Option<Vec<UiNode>>,
    /// Raw bytes for binary documents, handed to the file inspector.
    pub body: Option<Vec<u8>>,
    /// Opaque image attachment for providers with visual judgment.
    pub screenshot: Option<Vec<u8>>,
    pub fetched_at: SystemTime,
}

impl PageSnapshot {
    pub fn has_dual_views(&self) -> bool {
        self.rendered_text.is_some()
    }

    /// Nodes declared clickable without an accessibility update.
    pub fn registered_nodes(&self) -> impl Iterator<Item = &UiNode> {
        self.accessibility_nodes
            .iter()
            .flatten()
            .filter(|n| n.registered_clickable)
    }
}

/// Cost and politeness limits for fetching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchPolicy {
    pub timeout_seconds: f64,
    pub max_body_bytes: usize,
    pub min_delay_ms_per_host: u64,
    pub max_fetches_per_cell: u32,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        FetchPolicy {
            timeout_seconds: 30.0,
            max_body_bytes: 8 * 1024 * 1024,
            min_delay_ms_per_host: 500,
            max_fetches_per_cell: 64,
        }
    }
}

impl FetchPolicy {
    /// Applies `TD_TIMEOUT_S` and `TD_HOST_DELAY_MS` overrides when set.
    pub fn from_env() -> Self {
        let mut policy = FetchPolicy::default();
        if let Ok(v) = std::env::var("TD_TIMEOUT_S") {
            if let Ok(secs) = v.parse::<f64>() {
                if secs > 0.0 {
                    policy.timeout_seconds = secs;
                }
            }
        }
        if let Ok(v) = std::env::var("TD_HOST_DELAY_MS") {
            if let Ok(ms) = v.parse::<u64>() {
                policy.min_delay_ms_per_host = ms;
            }
        }
        policy
    }
}

/// Fetch fidelity: static extract only, or both views.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchMode {
    StaticOnly,
    Dual,
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("invalid url `{raw}`: {reason}")]
    InvalidUrl { raw: String, reason: String },
    #[error("fetch timed out")]
    Timeout,
    #[error("response body exceeds size cap")]
    TooLarge,
    #[error("network error: {0}")]
    Network(String),
    #[error("http status {0}")]
    Http(u16),
    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),
}

/// Normalizes a URL: resolves relative references against `base`, lowercases
/// scheme and host, strips the fragment, removes default ports, and preserves
/// query-parameter order. Idempotent.
pub fn normalize_url(raw: &str, base: Option<&Url>) -> Result<Url, FetchError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(FetchError::InvalidUrl {
            raw: raw.to_string(),
            reason: "empty".to_string(),
        });
    }
    let mut url = match base {
        Some(base) => base.join(trimmed).map_err(|e| FetchError::InvalidUrl {
            raw: raw.to_string(),
            reason: e.to_string(),
        })?,
        None => Url::parse(trimmed).map_err(|e| FetchError::InvalidUrl {
            raw: raw.to_string(),
            reason: e.to_string(),
        })?,
    };
    url.set_fragment(None);
    // The url crate already lowercases scheme and host and drops default
    // ports for http/https; query-parameter order is left untouched.
    Ok(url)
}

/// Backend seam between the explorer and an actual web (live or simulated).
///
/// Implementations must be safe for concurrent fetches from different tasks;
/// within one task, cells are processed sequentially.
pub trait FetchBackend: Send + Sync {
    /// Acquires a snapshot of `url`. Document URLs return `content_kind`
    /// `document_*` with the raw bytes attached.
    fn fetch(&self, url: &Url, mode: FetchMode, policy: &FetchPolicy)
        -> Result<PageSnapshot, FetchError>;

    /// Clicks a UI node on a previously fetched page and returns the text
    /// revealed by the interaction, if any.
    fn click(&self, url: &Url, node_id: &str) -> Result<Option<String>, FetchError>;

    /// Resolves provider-supplied selectors against the page's interaction
    /// surface, returning the matching nodes so they can be registered.
    fn resolve_selectors(&self, url: &Url, selectors: &[String])
        -> Result<Vec<UiNode>, FetchError>;

    /// Total fetches served by this backend instance.
    fn fetch_count(&self) -> u64;
}

/// Encodes a document's per-page texts into the byte form carried on a
/// snapshot body (world backend) so the file inspector can page through them.
pub fn encode_document_pages(pages: &[String]) -> Vec<u8> {
    serde_json::to_vec(pages).expect("document pages serialize")
}

/// Decodes a snapshot body into per-page texts. Bodies that are not in the
/// paged encoding are treated as a single page of lossy UTF-8 text.
pub fn decode_document_pages(body: &[u8]) -> Vec<String> {
    match serde_json::from_slice::<Vec<String>>(body) {
        Ok(pages) if !pages.is_empty() => pages,
        _ => vec![String::from_utf8_lossy(body).into_owned()],
    }
}

/// Content-kind detection: content-type header first, extension fallback.
pub(crate) fn kind_from_content_type(content_type: Option<&str>, url: &Url) -> ContentKind {
    if let Some(ct) = content_type {
        let ct = ct.to_ascii_lowercase();
        if ct.contains("application/pdf") {
            return ContentKind::DocumentPdf;
        }
        if ct.starts_with("image/") {
            return ContentKind::DocumentImage;
        }
        if ct.contains("text/html") || ct.contains("application/xhtml") {
            return ContentKind::Html;
        }
    }
    kind_from_extension(url)
}

pub(crate) fn kind_from_extension(url: &Url) -> ContentKind {
    let path = url.path().to_ascii_lowercase();
    if path.ends_with(".pdf") {
        ContentKind::DocumentPdf
    } else if [".png", ".jpg", ".jpeg", ".webp"].iter().any(|ext| path.ends_with(ext)) {
        ContentKind::DocumentImage
    } else {
        ContentKind::Html
    }
}
