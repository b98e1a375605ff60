//! Two-level reuse store exploiting structural dependencies between
//! neighboring cells: a page-level cache of value-bearing sources and a
//! path-level cache of full exploration paths, plus divergence-aware root
//! proposal and a task-scoped snapshot memo.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::fetcher::{FetchBackend, FetchError, FetchMode, FetchPolicy, PageSnapshot};
use crate::link_processor::{substitute_in_host, substitute_in_path};
use crate::model::{CellAddress, ProvenanceRecord, TableSchema, FORMAT_VERSION};
use crate::oracle::{DecisionProvider, RevisionFlag, RootCandidate};
use crate::page_explorer::{
    probe_single_page, ActionRecord, CellContext, ExploreLimits, Outcome,
};

/// Source page -> every (cell, value) it contributed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageCacheEntry {
    pub url: Url,
    pub contributions: Vec<(CellAddress, String)>,
}

/// Full exploration path for one filled cell, keyed by its address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathCacheEntry {
    pub address: CellAddress,
    pub path: Vec<Url>,
}

impl PathCacheEntry {
    pub fn source_url(&self) -> &Url {
        self.path.last().expect("paths are non-empty")
    }
}

/// Which neighbor answered a probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborDirection {
    Left,
    Up,
}

/// A successful neighbor-page probe.
#[derive(Debug, Clone)]
pub struct ProbeHit {
    pub value: String,
    pub provenance: ProvenanceRecord,
    pub direction: NeighborDirection,
    pub action_log: Vec<ActionRecord>,
    pub doc_judgments: u32,
    pub revisions: Vec<RevisionFlag>,
}

/// Task-scoped memo of fetched snapshots; avoids re-fetch storms when probes
/// revisit source pages. Semantics are unchanged for deterministic backends.
#[derive(Default)]
pub struct SnapshotStore {
    map: BTreeMap<String, PageSnapshot>,
}

/// Fetch facade handed to the explorer: either direct backend access or
/// memoized access when the cache manager is active.
pub struct PageSource<'a> {
    backend: &'a dyn FetchBackend,
    memo: Option<RefCell<SnapshotStore>>,
}

impl<'a> PageSource<'a> {
    pub fn direct(backend: &'a dyn FetchBackend) -> Self {
        PageSource {
            backend,
            memo: None,
        }
    }

    pub fn memoized(backend: &'a dyn FetchBackend) -> Self {
        PageSource {
            backend,
            memo: Some(RefCell::new(SnapshotStore::default())),
        }
    }

    pub fn backend(&self) -> &'a dyn FetchBackend {
        self.backend
    }

    pub fn fetch(
        &self,
        url: &Url,
        mode: FetchMode,
        policy: &FetchPolicy,
    ) -> Result<PageSnapshot, FetchError> {
        if let Some(memo) = &self.memo {
            if let Some(snapshot) = memo.borrow().map.get(url.as_str()) {
                return Ok(snapshot.clone());
            }
        }
        let snapshot = self.backend.fetch(url, mode, policy)?;
        if let Some(memo) = &self.memo {
            memo.borrow_mut()
                .map
                .insert(url.as_str().to_string(), snapshot.clone());
        }
        Ok(snapshot)
    }
}

/// The per-task cache. Entries from one task never influence another.
pub struct TaskCache {
    schema: TableSchema,
    page_cache: BTreeMap<String, PageCacheEntry>,
    path_cache: BTreeMap<(usize, usize), PathCacheEntry>,
}

impl TaskCache {
    pub fn new(schema: TableSchema) -> Self {
        TaskCache {
            schema,
            page_cache: BTreeMap::new(),
            path_cache: BTreeMap::new(),
        }
    }

    pub fn page_entries(&self) -> impl Iterator<Item = &PageCacheEntry> {
        self.page_cache.values()
    }

    pub fn path_entry(&self, address: CellAddress) -> Option<&PathCacheEntry> {
        self.path_cache.get(&(address.row, address.col))
    }

    pub fn path_entries(&self) -> impl Iterator<Item = &PathCacheEntry> {
        self.path_cache.values()
    }

    /// Records a filled cell: the page cache gains/extends the source entry,
    /// and the path cache stores the full path (overwriting on revision).
    pub fn record_success(
        &mut self,
        address: CellAddress,
        value: &str,
        provenance: &ProvenanceRecord,
    ) {
        let entry = self
            .page_cache
            .entry(provenance.source_url.as_str().to_string())
            .or_insert_with(|| PageCacheEntry {
                url: provenance.source_url.clone(),
                contributions: Vec::new(),
            });
        let contribution = (address, value.to_string());
        if !entry.contributions.contains(&contribution) {
            entry.contributions.push(contribution);
        }
        self.path_cache.insert(
            (address.row, address.col),
            PathCacheEntry {
                address,
                path: provenance.path.clone(),
            },
        );
    }

    fn neighbor_entries(&self, address: CellAddress) -> Vec<(NeighborDirection, &PathCacheEntry)> {
        // Left before Up: same-row cells share a source page more often.
        let mut out = Vec::new();
        if let Some(left) = address.left() {
            if let Some(entry) = self.path_entry(left) {
                out.push((NeighborDirection::Left, entry));
            }
        }
        if let Some(up) = address.up() {
            if let Some(entry) = self.path_entry(up) {
                out.push((NeighborDirection::Up, entry));
            }
        }
        out
    }

    /// Probes the Left then Up neighbor's source page for the target value.
    /// The probe re-runs the page explorer in single-page mode (no Proceed);
    /// fetch failures are treated as misses. A hit yields level-0 provenance
    /// reusing the neighbor's path.
    pub fn lookup_neighbor_pages(
        &self,
        address: CellAddress,
        ctx: &CellContext,
        provider: &dyn DecisionProvider,
        source: &PageSource<'_>,
        policy: &FetchPolicy,
        limits: ExploreLimits,
    ) -> Option<ProbeHit> {
        for (direction, entry) in self.neighbor_entries(address) {
            let page_url = entry.source_url().clone();
            let Ok(snapshot) = source.fetch(&page_url, FetchMode::Dual, policy) else {
                continue;
            };
            let decision = probe_single_page(&snapshot, ctx, provider, source.backend(), limits);
            let revisions = crate::page_explorer::collect_revisions(&decision, ctx);
            if let Outcome::Answer(value) = decision.outcome {
                return Some(ProbeHit {
                    value,
                    provenance: ProvenanceRecord {
                        source_url: page_url,
                        path: entry.path.clone(),
                        traversal_level: 0,
                        fetch_count: 1,
                    },
                    direction,
                    action_log: decision.action_log,
                    doc_judgments: decision.doc_judgments,
                    revisions,
                });
            }
        }
        None
    }

    /// Proposes up to K exploration roots from the neighbor paths: the path
    /// URLs themselves plus minimal-edit variants substituting the target's
    /// row/column tokens, ranked by the provider with a preference for
    /// pattern relevance and divergence-point proximity.
    pub fn propose_roots_from_paths(
        &self,
        address: CellAddress,
        ctx: &CellContext,
        k: usize,
        provider: &dyn DecisionProvider,
    ) -> Vec<RootCandidate> {
        let neighbors = self.neighbor_entries(address);
        if neighbors.is_empty() || k == 0 {
            return Vec::new();
        }

        // Divergence point: the last URL of the longest common prefix when
        // both neighbor paths exist; a single path uses its second-to-last
        // URL as the heuristic.
        let divergence_url: Option<&Url> = match neighbors.as_slice() {
            [(_, a), (_, b)] => {
                let common = a
                    .path
                    .iter()
                    .zip(b.path.iter())
                    .take_while(|(x, y)| x == y)
                    .count();
                common.checked_sub(1).map(|i| &a.path[i])
            }
            [(_, single)] => single.path.len().checked_sub(2).map(|i| &single.path[i]),
            _ => None,
        };

        let mut candidates: Vec<RootCandidate> = Vec::new();
        let mut seen: BTreeMap<String, ()> = BTreeMap::new();
        let mut push = |candidate: RootCandidate, seen: &mut BTreeMap<String, ()>| {
            if seen.insert(candidate.url.as_str().to_string(), ()).is_none() {
                candidates.push(candidate);
            }
        };

        for (direction, entry) in &neighbors {
            let neighbor_address = entry.address;
            // Token substitutions that transport the neighbor's URL onto the
            // target cell: row label for Up, column name for Left.
            let substitution: Option<(String, String)> = match direction {
                NeighborDirection::Up => Some((
                    slugify(self.schema.row_label(neighbor_address.row)),
                    slugify(&ctx.row_label),
                )),
                NeighborDirection::Left => Some((
                    slugify(&self.schema.column(neighbor_address.col).name),
                    slugify(&ctx.column.name),
                )),
            };

            for (depth, url) in entry.path.iter().enumerate() {
                let near_divergence = divergence_url == Some(url);
                push(
                    RootCandidate {
                        url: url.clone(),
                        synthesized: false,
                        edit_descriptor: None,
                        depth_in_path: depth,
                        near_divergence,
                    },
                    &mut seen,
                );
                if let Some((from, to)) = &substitution {
                    for proposal in [
                        substitute_in_path(url, from, to),
                        substitute_in_host(url, from, to),
                    ]
                    .into_iter()
                    .flatten()
                    {
                        push(
                            RootCandidate {
                                url: proposal.url,
                                synthesized: true,
                                edit_descriptor: Some(proposal.descriptor),
                                depth_in_path: depth,
                                near_divergence,
                            },
                            &mut seen,
                        );
                    }
                }
            }
        }

        let scores = provider
            .rank_roots(&candidates, ctx)
            .unwrap_or_else(|_| vec![0.0; candidates.len()]);
        let mut indexed: Vec<(f64, RootCandidate)> =
            scores.into_iter().zip(candidates).collect();
        indexed.sort_by(|(sa, a), (sb, b)| {
            sb.partial_cmp(sa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| b.depth_in_path.cmp(&a.depth_in_path))
                .then_with(|| a.url.as_str().cmp(b.url.as_str()))
        });
        indexed.truncate(k);
        indexed.into_iter().map(|(_, c)| c).collect()
    }

    // -- persistence ---------------------------------------------------------

    pub fn to_json(&self) -> String {
        let doc = CacheDoc {
            format_version: FORMAT_VERSION,
            page_cache: self
                .page_cache
                .values()
                .map(|entry| PageEntryDoc {
                    url: entry.url.to_string(),
                    contributions: entry
                        .contributions
                        .iter()
                        .map(|(address, value)| ContributionDoc {
                            row: address.row,
                            col: address.col,
                            value: value.clone(),
                        })
                        .collect(),
                })
                .collect(),
            path_cache: self
                .path_cache
                .values()
                .map(|entry| PathEntryDoc {
                    row: entry.address.row,
                    col: entry.address.col,
                    path: entry.path.iter().map(Url::to_string).collect(),
                })
                .collect(),
        };
        let mut out = serde_json::to_string_pretty(&doc).expect("cache serializes");
        out.push('\n');
        out
    }

    pub fn from_json(raw: &str, schema: TableSchema) -> Result<Self, String> {
        let doc: CacheDoc = serde_json::from_str(raw).map_err(|e| e.to_string())?;
        if doc.format_version != FORMAT_VERSION {
            return Err(format!("unsupported cache format_version {}", doc.format_version));
        }
        let mut cache = TaskCache::new(schema);
        for entry in doc.page_cache {
            let url = Url::parse(&entry.url).map_err(|e| e.to_string())?;
            cache.page_cache.insert(
                url.as_str().to_string(),
                PageCacheEntry {
                    url,
                    contributions: entry
                        .contributions
                        .into_iter()
                        .map(|c| (CellAddress::new(c.row, c.col), c.value))
                        .collect(),
                },
            );
        }
        for entry in doc.path_cache {
            let path: Result<Vec<Url>, _> = entry.path.iter().map(|u| Url::parse(u)).collect();
            let path = path.map_err(|e| e.to_string())?;
            if path.is_empty() {
                return Err("path cache entry with empty path".to_string());
            }
            let address = CellAddress::new(entry.row, entry.col);
            cache
                .path_cache
                .insert((entry.row, entry.col), PathCacheEntry { address, path });
        }
        Ok(cache)
    }

    /// Writes the cache file.
    pub fn persist(&self, location: &Path) -> std::io::Result<()> {
        std::fs::write(location, self.to_json())
    }

    /// Loads a cache file. A missing file yields an empty cache; a corrupt
    /// one yields an empty cache plus a warning message.
    pub fn load(location: &Path, schema: TableSchema) -> (Self, Option<String>) {
        match std::fs::read_to_string(location) {
            Err(_) => (TaskCache::new(schema), None),
            Ok(raw) => match TaskCache::from_json(&raw, schema.clone()) {
                Ok(cache) => (cache, None),
                Err(reason) => (
                    TaskCache::new(schema),
                    Some(format!("corrupt cache at {}: {reason}", location.display())),
                ),
            },
        }
    }
}

fn slugify(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    let mut dash_pending = false;
    for ch in label.to_lowercase().chars() {
        if ch.is_alphanumeric() {
            if dash_pending && !out.is_empty() {
                out.push('-');
            }
            dash_pending = false;
            out.push(ch);
        } else {
            dash_pending = true;
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct CacheDoc {
    format_version: u32,
    page_cache: Vec<PageEntryDoc>,
    path_cache: Vec<PathEntryDoc>,
}

#[derive(Serialize, Deserialize)]
struct PageEntryDoc {
    url: String,
    contributions: Vec<ContributionDoc>,
}

#[derive(Serialize, Deserialize)]
struct ContributionDoc {
    row: usize,
    col: usize,
    value: String,
}

#[derive(Serialize, Deserialize)]
struct PathEntryDoc {
    row: usize,
    col: usize,
    path: Vec<String>,
}
