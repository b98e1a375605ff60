//! Per-cell augment-then-prune BFS and whole-table filling: cache
//! consultation, root selection, budget enforcement, trace recording, and
//! revision application.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use url::Url;

use crate::cache_manager::{NeighborDirection, PageSource, TaskCache};
use crate::fetcher::{FetchBackend, FetchMode, FetchPolicy};
use crate::link_processor::{process_links, LinkCandidate, LinkOrigin};
use crate::model::{
    CellAddress, CellValue, ProvenanceRecord, TableInstance, TaskSpec,
};
use crate::oracle::{DecisionProvider, RevisionFlag, RootCandidate};
use crate::page_explorer::{
    collect_revisions, decide_page, ActionRecord, CellContext, ExploreLimits, Outcome,
};

/// Everything configurable about one fill run.
#[derive(Debug, Clone)]
pub struct ExploreOptions {
    /// Exploration width: per-expansion frontier cap.
    pub k: usize,
    pub policy: FetchPolicy,
    pub limits: ExploreLimits,
    pub augment_enabled: bool,
    pub cache_enabled: bool,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            k: 10,
            policy: FetchPolicy::default(),
            limits: ExploreLimits::default(),
            augment_enabled: true,
            cache_enabled: true,
        }
    }
}

/// How a URL entered the frontier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UrlSource {
    Root,
    OnPage,
    Augmented,
}

/// What the page explorer decided on one visited page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Answer,
    Proceed,
    Stop,
    FetchFailed,
}

/// One visited page in traversal order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageVisit {
    pub url: Url,
    pub level: usize,
    pub decision: DecisionKind,
    pub origin: UrlSource,
    pub parent: Option<usize>,
    /// Present when the URL was synthesized by a minimal edit.
    pub edit_descriptor: Option<String>,
    pub actions: Vec<ActionRecord>,
    pub doc_judgments: u32,
}

/// Link-processor statistics for one frontier expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionStats {
    /// Index into the visit list of the page that proceeded.
    pub after_visit: usize,
    /// Level of the expanding page; enqueued links land at `level + 1`.
    pub level: usize,
    pub in_count: usize,
    pub kept_count: usize,
    /// Kept candidates that were synthesized rather than observed.
    pub new_url_count: usize,
}

/// How a cell got its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    ProbeLeft,
    ProbeUp,
    Explore,
    Missing,
}

/// Measurement substrate for one cell's run.
#[derive(Debug, Clone, Default)]
pub struct ExplorationTrace {
    pub roots: Vec<Url>,
    pub visited: Vec<PageVisit>,
    pub expansions: Vec<ExpansionStats>,
    pub total_fetches: u64,
    pub resolved_by: Option<Resolution>,
    pub doc_judgments_total: u32,
}

/// A revision discovered while exploring, with enough context to attach
/// provenance when applied.
#[derive(Debug, Clone)]
pub struct CollectedRevision {
    pub flag: RevisionFlag,
    pub path: Vec<Url>,
    pub level: usize,
}

/// Result of one cell's exploration.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub address: CellAddress,
    pub value: CellValue,
    pub trace: ExplorationTrace,
    pub revisions: Vec<CollectedRevision>,
}

struct QueueEntry {
    url: Url,
    level: usize,
    parent: Option<usize>,
    origin: UrlSource,
    edit_descriptor: Option<String>,
}

fn reconstruct_path(visits: &[PageVisit], last: usize) -> Vec<Url> {
    let mut path = Vec::new();
    let mut cursor = Some(last);
    while let Some(index) = cursor {
        path.push(visits[index].url.clone());
        cursor = visits[index].parent;
    }
    path.reverse();
    path
}

/// Runs the augment-then-prune BFS for one cell over an ordered root list.
/// Roots form the level-0 layer; each `Proceed` feeds the link processor and
/// enqueues at most K unvisited links one level deeper. Exploration ends at
/// the first `Answer`, an empty queue, or the fetch budget.
pub fn fill_cell(
    ctx: &CellContext,
    roots: &[RootCandidate],
    options: &ExploreOptions,
    provider: &dyn DecisionProvider,
    source: &PageSource<'_>,
) -> CellOutcome {
    assert!(!roots.is_empty(), "fill_cell requires at least one root");
    let mut trace = ExplorationTrace {
        roots: roots.iter().map(|r| r.url.clone()).collect(),
        ..ExplorationTrace::default()
    };
    let mut revisions: Vec<CollectedRevision> = Vec::new();
    let mut queue: VecDeque<QueueEntry> = VecDeque::new();
    let mut visited: BTreeSet<String> = BTreeSet::new();
    let mut queued: BTreeSet<String> = BTreeSet::new();

    for root in roots {
        if queued.insert(root.url.as_str().to_string()) {
            queue.push_back(QueueEntry {
                url: root.url.clone(),
                level: 0,
                parent: None,
                origin: if root.synthesized { UrlSource::Augmented } else { UrlSource::Root },
                edit_descriptor: root.edit_descriptor.clone(),
            });
        }
    }

    let mut answer: Option<(String, usize)> = None;
    while let Some(entry) = queue.pop_front() {
        if visited.contains(entry.url.as_str()) {
            continue;
        }
        if trace.total_fetches >= u64::from(options.policy.max_fetches_per_cell) {
            break;
        }
        visited.insert(entry.url.as_str().to_string());
        trace.total_fetches += 1;

        let snapshot = match source.fetch(&entry.url, FetchMode::Dual, &options.policy) {
            Ok(snapshot) => snapshot,
            Err(_) => {
                // Fetch errors degrade to a Stop on that page, never abort
                // the cell.
                trace.visited.push(PageVisit {
                    url: entry.url,
                    level: entry.level,
                    decision: DecisionKind::FetchFailed,
                    origin: entry.origin,
                    parent: entry.parent,
                    edit_descriptor: entry.edit_descriptor,
                    actions: Vec::new(),
                    doc_judgments: 0,
                });
                continue;
            }
        };

        let decision = decide_page(&snapshot, ctx, provider, source.backend(), options.limits);
        let visit_index = trace.visited.len();
        let decision_kind = match &decision.outcome {
            Outcome::Answer(_) => DecisionKind::Answer,
            Outcome::Proceed(_) => DecisionKind::Proceed,
            Outcome::Stop => DecisionKind::Stop,
        };
        trace.doc_judgments_total += decision.doc_judgments;
        trace.visited.push(PageVisit {
            url: entry.url.clone(),
            level: entry.level,
            decision: decision_kind,
            origin: entry.origin,
            parent: entry.parent,
            edit_descriptor: entry.edit_descriptor,
            actions: decision.action_log.clone(),
            doc_judgments: decision.doc_judgments,
        });

        for flag in collect_revisions(&decision, ctx) {
            revisions.push(CollectedRevision {
                flag,
                path: reconstruct_path(&trace.visited, visit_index),
                level: entry.level,
            });
        }

        match decision.outcome {
            Outcome::Answer(value) => {
                answer = Some((value, visit_index));
                break;
            }
            Outcome::Proceed(links) => {
                let in_count = links.len();
                let candidates: Vec<LinkCandidate> = links
                    .into_iter()
                    .map(|link| LinkCandidate::on_page(link.url, link.anchor))
                    .collect();
                let next = process_links(candidates, ctx, options.k, provider, options.augment_enabled);
                let kept_count = next.len();
                let new_url_count =
                    next.iter().filter(|c| c.origin == LinkOrigin::Augmented).count();
                trace.expansions.push(ExpansionStats {
                    after_visit: visit_index,
                    level: entry.level,
                    in_count,
                    kept_count,
                    new_url_count,
                });
                for candidate in next {
                    if visited.contains(candidate.url.as_str())
                        || !queued.insert(candidate.url.as_str().to_string())
                    {
                        continue;
                    }
                    queue.push_back(QueueEntry {
                        url: candidate.url,
                        level: entry.level + 1,
                        parent: Some(visit_index),
                        origin: match candidate.origin {
                            LinkOrigin::OnPage => UrlSource::OnPage,
                            LinkOrigin::Augmented => UrlSource::Augmented,
                        },
                        edit_descriptor: candidate.edit_descriptor,
                    });
                }
            }
            Outcome::Stop => {}
        }
    }

    let value = match answer {
        Some((text, visit_index)) => {
            let path = reconstruct_path(&trace.visited, visit_index);
            let level = trace.visited[visit_index].level;
            trace.resolved_by = Some(Resolution::Explore);
            CellValue::filled(
                text,
                ProvenanceRecord {
                    source_url: trace.visited[visit_index].url.clone(),
                    path,
                    traversal_level: level,
                    fetch_count: trace.total_fetches,
                },
            )
        }
        None => {
            trace.resolved_by = Some(Resolution::Missing);
            CellValue::Missing
        }
    };

    CellOutcome {
        address: ctx.target,
        value,
        trace,
        revisions,
    }
}

/// Per-cell summary surfaced by a table fill.
#[derive(Debug, Clone)]
pub struct CellReport {
    pub address: CellAddress,
    pub resolution: Resolution,
    /// Traversal level of the answer page (0 for probe hits).
    pub level: Option<usize>,
    pub trace: ExplorationTrace,
}

/// One applied self-correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppliedRevision {
    pub address: CellAddress,
    pub old_value: String,
    pub new_value: String,
    pub evidence_url: Url,
    /// Cell whose exploration surfaced the contradiction.
    pub during_cell: CellAddress,
}

/// Result of filling a whole table.
pub struct FillOutcome {
    pub instance: TableInstance,
    pub cells: Vec<CellReport>,
    pub revisions: Vec<AppliedRevision>,
    pub cache: Option<TaskCache>,
    /// Fetches issued against the backend across the run.
    pub backend_fetches: u64,
}

/// Fills every cell in row-major order. Each cell first consults the cache
/// manager (neighbor-page probe, then cache-guided roots with the base URL
/// appended as final fallback), then runs the BFS. Contradiction-backed
/// revisions may overwrite earlier cells, re-recording their provenance.
pub fn fill_table(
    spec: &TaskSpec,
    options: &ExploreOptions,
    provider: &dyn DecisionProvider,
    backend: &dyn FetchBackend,
) -> FillOutcome {
    let fetches_before = backend.fetch_count();
    let mut instance = TableInstance::empty(spec.schema.clone());
    let mut cache = options.cache_enabled.then(|| TaskCache::new(spec.schema.clone()));
    let source = if options.cache_enabled {
        PageSource::memoized(backend)
    } else {
        PageSource::direct(backend)
    };
    let mut cells: Vec<CellReport> = Vec::new();
    let mut applied: Vec<AppliedRevision> = Vec::new();

    for address in crate::model::fill_order(&spec.schema) {
        let ctx = CellContext::build(spec, address, &instance);

        // (a) Neighbor-page probe: a cached neighbor source that already
        // contains the value fills the cell at level 0 without any BFS.
        if let Some(cache_ref) = cache.as_ref() {
            if let Some(hit) = cache_ref.lookup_neighbor_pages(
                address,
                &ctx,
                provider,
                &source,
                &options.policy,
                options.limits,
            ) {
                let probe_revisions: Vec<CollectedRevision> = hit
                    .revisions
                    .iter()
                    .map(|flag| CollectedRevision {
                        flag: flag.clone(),
                        path: hit.provenance.path.clone(),
                        level: 0,
                    })
                    .collect();
                let resolution = match hit.direction {
                    NeighborDirection::Left => Resolution::ProbeLeft,
                    NeighborDirection::Up => Resolution::ProbeUp,
                };
                let trace = ExplorationTrace {
                    roots: Vec::new(),
                    visited: vec![PageVisit {
                        url: hit.provenance.source_url.clone(),
                        level: 0,
                        decision: DecisionKind::Answer,
                        origin: UrlSource::Root,
                        parent: None,
                        edit_descriptor: None,
                        actions: hit.action_log.clone(),
                        doc_judgments: hit.doc_judgments,
                    }],
                    expansions: Vec::new(),
                    total_fetches: 1,
                    resolved_by: Some(resolution),
                    doc_judgments_total: hit.doc_judgments,
                };
                if let Some(cache_mut) = cache.as_mut() {
                    cache_mut.record_success(address, &hit.value, &hit.provenance);
                }
                instance.set(address, CellValue::filled(hit.value, hit.provenance));
                apply_revisions(
                    &probe_revisions,
                    address,
                    &mut instance,
                    cache.as_mut(),
                    &mut applied,
                );
                cells.push(CellReport {
                    address,
                    resolution,
                    level: Some(0),
                    trace,
                });
                continue;
            }
        }

        // (b) Roots: cache-guided proposals plus the base URL as the final
        // fallback (alone for the first cell).
        let mut roots: Vec<RootCandidate> = cache
            .as_ref()
            .map(|c| c.propose_roots_from_paths(address, &ctx, options.k, provider))
            .unwrap_or_default();
        if !roots.iter().any(|r| r.url == spec.base_url) {
            roots.push(RootCandidate {
                url: spec.base_url.clone(),
                synthesized: false,
                edit_descriptor: None,
                depth_in_path: 0,
                near_divergence: false,
            });
        }

        // (c) BFS.
        let outcome = fill_cell(&ctx, &roots, options, provider, &source);

        // (d) Record success and apply any revisions the run surfaced.
        if let CellValue::Filled {
            value,
            provenance: Some(provenance),
        } = &outcome.value
        {
            if let Some(cache_mut) = cache.as_mut() {
                cache_mut.record_success(address, value, provenance);
            }
        }
        let resolution = outcome.trace.resolved_by.unwrap_or(Resolution::Missing);
        let level = match &outcome.value {
            CellValue::Filled {
                provenance: Some(p),
                ..
            } => Some(p.traversal_level),
            _ => None,
        };
        instance.set(address, outcome.value);
        apply_revisions(
            &outcome.revisions,
            address,
            &mut instance,
            cache.as_mut(),
            &mut applied,
        );
        cells.push(CellReport {
            address,
            resolution,
            level,
            trace: outcome.trace,
        });
    }

    FillOutcome {
        instance,
        cells,
        revisions: applied,
        cache,
        backend_fetches: backend.fetch_count() - fetches_before,
    }
}

/// Overwrites already-filled cells with contradiction-backed corrections;
/// each overwrite re-records provenance pointing at the evidence page.
/// Revisions targeting unfilled cells never apply.
fn apply_revisions(
    revisions: &[CollectedRevision],
    during_cell: CellAddress,
    instance: &mut TableInstance,
    mut cache: Option<&mut TaskCache>,
    applied: &mut Vec<AppliedRevision>,
) {
    for revision in revisions {
        let address = revision.flag.address;
        let Some(old_value) = instance.get(address).value().map(str::to_string) else {
            continue;
        };
        if old_value == revision.flag.new_value {
            continue;
        }
        let provenance = ProvenanceRecord {
            source_url: revision.flag.evidence_url.clone(),
            path: if revision.path.last() == Some(&revision.flag.evidence_url) {
                revision.path.clone()
            } else {
                vec![revision.flag.evidence_url.clone()]
            },
            traversal_level: revision.level.min(revision.path.len().saturating_sub(1)),
            fetch_count: 1,
        };
        if let Some(cache_mut) = cache.as_deref_mut() {
            cache_mut.record_success(address, &revision.flag.new_value, &provenance);
        }
        instance.set(
            address,
            CellValue::filled(revision.flag.new_value.clone(), provenance),
        );
        applied.push(AppliedRevision {
            address,
            old_value,
            new_value: revision.flag.new_value.clone(),
            evidence_url: revision.flag.evidence_url.clone(),
            during_cell,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fetcher::WorldBackend;
    use crate::oracle::heuristic_provider;
    use crate::webworld::{generate_world, WorldKind, WorldParams};

    fn world(kind: WorldKind, rows: usize, cols: usize, depth: usize, branching: usize) -> WorldBackend {
        let manifest = generate_world(&WorldParams {
            kind,
            rows,
            cols,
            depth,
            branching,
            seed: 5,
        })
        .unwrap();
        WorldBackend::new(manifest)
    }

    #[test]
    fn fill_cell_answers_on_root_page() {
        let backend = world(WorldKind::Grid, 2, 2, 2, 3);
        let manifest = backend.manifest().clone();
        let spec = manifest.task.clone();
        let provider = heuristic_provider(0);
        let options = ExploreOptions::default();
        let instance = TableInstance::empty(spec.schema.clone());
        let ctx = CellContext::build(&spec, CellAddress::new(0, 0), &instance);

        // Root the BFS directly at the entity page.
        let entity = Url::parse("mem://grid/stations/aurora").unwrap();
        let source = PageSource::direct(&backend);
        let roots = vec![RootCandidate {
            url: entity,
            synthesized: false,
            edit_descriptor: None,
            depth_in_path: 0,
            near_divergence: false,
        }];
        let outcome = fill_cell(&ctx, &roots, &options, &provider, &source);
        match &outcome.value {
            CellValue::Filled { value, provenance } => {
                assert_eq!(*value, manifest.gold[0][0]);
                let p = provenance.as_ref().unwrap();
                assert_eq!(p.traversal_level, 0);
                assert_eq!(p.fetch_count, 1);
                assert_eq!(p.path.len(), 1);
            }
            other => panic!("expected filled cell, got {other:?}"),
        }
    }

    #[test]
    fn fill_cell_reaches_depth_and_respects_visited_set() {
        let backend = world(WorldKind::Grid, 2, 2, 3, 4);
        let manifest = backend.manifest().clone();
        let spec = manifest.task.clone();
        let provider = heuristic_provider(0);
        let options = ExploreOptions::default();
        let instance = TableInstance::empty(spec.schema.clone());
        let ctx = CellContext::build(&spec, CellAddress::new(1, 1), &instance);
        let source = PageSource::direct(&backend);
        let roots = vec![RootCandidate {
            url: spec.base_url.clone(),
            synthesized: false,
            edit_descriptor: None,
            depth_in_path: 0,
            near_divergence: false,
        }];
        let outcome = fill_cell(&ctx, &roots, &options, &provider, &source);

        match &outcome.value {
            CellValue::Filled { value, provenance } => {
                assert_eq!(*value, manifest.gold[1][1]);
                let p = provenance.as_ref().unwrap();
                assert_eq!(p.traversal_level, 3);
                assert_eq!(p.path.len(), 4);
                assert_eq!(p.path[0], spec.base_url);
            }
            other => panic!("expected filled cell, got {other:?}"),
        }
        // No URL fetched twice.
        let mut seen = BTreeSet::new();
        for visit in &outcome.trace.visited {
            assert!(seen.insert(visit.url.as_str().to_string()), "revisited {}", visit.url);
        }
        assert_eq!(outcome.trace.total_fetches as usize, outcome.trace.visited.len());
        // Every expansion within budget.
        for expansion in &outcome.trace.expansions {
            assert!(expansion.kept_count <= options.k);
        }
    }

    #[test]
    fn unreachable_target_yields_missing() {
        let backend = world(WorldKind::Grid, 2, 2, 2, 3);
        let spec = backend.manifest().task.clone();
        let provider = heuristic_provider(0);
        let options = ExploreOptions {
            augment_enabled: false,
            ..ExploreOptions::default()
        };
        let mut bad_spec = spec.clone();
        bad_spec.schema.primary_key_values[0] = "not-a-station".into();
        let instance = TableInstance::empty(bad_spec.schema.clone());
        let ctx = CellContext::build(&bad_spec, CellAddress::new(0, 0), &instance);
        let source = PageSource::direct(&backend);
        let roots = vec![RootCandidate {
            url: spec.base_url.clone(),
            synthesized: false,
            edit_descriptor: None,
            depth_in_path: 0,
            near_divergence: false,
        }];
        let outcome = fill_cell(&ctx, &roots, &options, &provider, &source);
        assert!(outcome.value.is_missing());
        // Queue exhausted with every visited URL distinct.
        let urls: BTreeSet<&str> =
            outcome.trace.visited.iter().map(|v| v.url.as_str()).collect();
        assert_eq!(urls.len(), outcome.trace.visited.len());
    }

    #[test]
    fn fill_table_fills_grid_and_uses_probes() {
        let backend = world(WorldKind::Grid, 2, 2, 3, 4);
        let manifest = backend.manifest().clone();
        let spec = manifest.task.clone();
        let provider = heuristic_provider(0);
        let outcome = fill_table(&spec, &ExploreOptions::default(), &provider, &backend);

        for (address, cell) in outcome.instance.iter() {
            assert_eq!(
                cell.value().unwrap(),
                manifest.gold[address.row][address.col],
                "cell {address}"
            );
        }
        // Column 1 resolves from column 0's source page.
        assert!(outcome
            .cells
            .iter()
            .filter(|c| c.address.col > 0)
            .all(|c| c.resolution == Resolution::ProbeLeft));

        // Path cache holds one entry per cell whose last URL matches the
        // cell's provenance.
        let cache = outcome.cache.as_ref().unwrap();
        for (address, cell) in outcome.instance.iter() {
            let entry = cache.path_entry(address).expect("path entry");
            assert_eq!(
                entry.source_url(),
                &cell.provenance().unwrap().source_url
            );
        }
    }

    #[test]
    fn no_cache_run_never_probes() {
        let backend = world(WorldKind::Grid, 2, 2, 2, 3);
        let spec = backend.manifest().task.clone();
        let provider = heuristic_provider(0);
        let options = ExploreOptions {
            cache_enabled: false,
            ..ExploreOptions::default()
        };
        let outcome = fill_table(&spec, &options, &provider, &backend);
        assert!(outcome.cache.is_none());
        assert!(outcome.cells.iter().all(|c| c.resolution == Resolution::Explore));
        assert_eq!(outcome.instance.filled_count(), 4);
    }
}
