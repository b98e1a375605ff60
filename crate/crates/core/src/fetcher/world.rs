//! In-memory backend serving a generated world manifest.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::SystemTime;

use url::Url;

use super::{
    kind_from_extension, ContentKind, FetchBackend, FetchError, FetchMode, FetchPolicy, Link,
    PageSnapshot, UiNode,
};
use crate::webworld::{WorldManifest, WorldPage};

/// Serves `mem://` URLs straight from a [`WorldManifest`]. Deterministic:
/// the same URL always yields the same snapshot.
pub struct WorldBackend {
    manifest: WorldManifest,
    fetches: AtomicU64,
}

impl WorldBackend {
    pub fn new(manifest: WorldManifest) -> Self {
        WorldBackend {
            manifest,
            fetches: AtomicU64::new(0),
        }
    }

    pub fn manifest(&self) -> &WorldManifest {
        &self.manifest
    }

    fn page(&self, url: &Url) -> Option<&WorldPage> {
        self.manifest.pages.get(url.as_str())
    }
}

impl FetchBackend for WorldBackend {
    fn fetch(
        &self,
        url: &Url,
        mode: FetchMode,
        _policy: &FetchPolicy,
    ) -> Result<PageSnapshot, FetchError> {
        self.fetches.fetch_add(1, Ordering::Relaxed);
        let page = self.page(url).ok_or(FetchError::Http(404))?;

        if let Some(doc_pages) = &page.document_pages {
            let kind = match kind_from_extension(url) {
                ContentKind::Html => ContentKind::DocumentPdf,
                other => other,
            };
            return Ok(PageSnapshot {
                url: url.clone(),
                content_kind: kind,
                static_text: String::new(),
                static_links: Vec::new(),
                rendered_text: None,
                rendered_links: None,
                accessibility_nodes: None,
                body: Some(super::encode_document_pages(doc_pages)),
                screenshot: None,
                fetched_at: SystemTime::UNIX_EPOCH,
            });
        }

        let links: Vec<Link> = page
            .links
            .iter()
            .filter_map(|(raw, anchor)| {
                super::normalize_url(raw, Some(url)).ok().map(|url| Link {
                    url,
                    anchor: anchor.clone(),
                })
            })
            .collect();
        let dual = mode == FetchMode::Dual;
        Ok(PageSnapshot {
            url: url.clone(),
            content_kind: ContentKind::Html,
            static_text: page.static_text.clone(),
            static_links: links.clone(),
            rendered_text: dual.then(|| page.rendered_text.clone()),
            rendered_links: dual.then_some(links),
            accessibility_nodes: dual.then(|| page.ui_nodes.clone()),
            body: None,
            screenshot: None,
            fetched_at: SystemTime::UNIX_EPOCH,
        })
    }

    fn click(&self, url: &Url, node_id: &str) -> Result<Option<String>, FetchError> {
        let page = self.page(url).ok_or(FetchError::Http(404))?;
        if !page.ui_nodes.iter().any(|n| n.node_id == node_id) {
            return Err(FetchError::Unsupported("unknown ui node"));
        }
        Ok(page.reveal_rules.get(node_id).cloned())
    }

    fn resolve_selectors(
        &self,
        url: &Url,
        selectors: &[String],
    ) -> Result<Vec<UiNode>, FetchError> {
        let page = self.page(url).ok_or(FetchError::Http(404))?;
        let mut matched = Vec::new();
        for node in &page.ui_nodes {
            let hit = selectors.iter().any(|sel| {
                let sel = sel.trim();
                !sel.is_empty()
                    && (node.node_id == sel
                        || node.label.to_lowercase().contains(&sel.to_lowercase()))
            });
            if hit {
                matched.push(node.clone());
            }
        }
        Ok(matched)
    }

    fn fetch_count(&self) -> u64 {
        self.fetches.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::webworld::{self, WorldKind, WorldParams};

    fn grid_backend() -> WorldBackend {
        let manifest = webworld::generate_world(&WorldParams {
            kind: WorldKind::Grid,
            rows: 2,
            cols: 2,
            depth: 2,
            branching: 3,
            seed: 7,
        })
        .unwrap();
        WorldBackend::new(manifest)
    }

    #[test]
    fn fetch_returns_world_page() {
        let backend = grid_backend();
        let home = backend.manifest().task.base_url.clone();
        let snap = backend
            .fetch(&home, FetchMode::Dual, &FetchPolicy::default())
            .unwrap();
        assert_eq!(snap.content_kind, ContentKind::Html);
        assert!(!snap.static_text.is_empty());
        assert!(!snap.static_links.is_empty());
        assert!(snap.has_dual_views());
        assert_eq!(backend.fetch_count(), 1);
    }

    #[test]
    fn unknown_url_is_404() {
        let backend = grid_backend();
        let missing = Url::parse("mem://grid/definitely-not-there").unwrap();
        match backend.fetch(&missing, FetchMode::Dual, &FetchPolicy::default()) {
            Err(FetchError::Http(404)) => {}
            other => panic!("expected 404, got {other:?}"),
        }
    }

    #[test]
    fn static_only_omits_rendered_views() {
        let backend = grid_backend();
        let home = backend.manifest().task.base_url.clone();
        let snap = backend
            .fetch(&home, FetchMode::StaticOnly, &FetchPolicy::default())
            .unwrap();
        assert!(snap.rendered_text.is_none());
        assert!(snap.accessibility_nodes.is_none());
    }
}
