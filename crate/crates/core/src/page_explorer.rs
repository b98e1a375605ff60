//! Per-page decision function: classifies pages static vs dynamic, runs the
//! multi-turn interaction loop with the five page-local actions, inspects
//! binary documents page by page, and surfaces self-correction evidence.

use serde::{Deserialize, Serialize};
use url::Url;

use crate::fetcher::{decode_document_pages, ContentKind, FetchBackend, Link, PageSnapshot};
use crate::model::{CellAddress, ColumnSpec, TableInstance, TaskSpec};
use crate::oracle::{
    DecisionProvider, DocumentJudgment, DocumentPageView, DynamicCommand, DynamicNode, PageOutcome,
    PageView, RevisionFlag,
};

/// An already-filled cell carried as context for later decisions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilledEntry {
    pub address: CellAddress,
    pub row_label: String,
    pub column_name: String,
    pub unit_hint: Option<String>,
    pub value: String,
}

impl FilledEntry {
    pub fn column_spec(&self) -> ColumnSpec {
        ColumnSpec {
            name: self.column_name.clone(),
            description: None,
            unit_hint: self.unit_hint.clone(),
        }
    }
}

/// Everything the provider knows about the cell being filled.
#[derive(Debug, Clone)]
pub struct CellContext {
    pub query: String,
    pub target: CellAddress,
    /// Primary-key value of the target row.
    pub row_label: String,
    pub column: ColumnSpec,
    /// Values filled earlier in the run, in fill order.
    pub filled_so_far: Vec<FilledEntry>,
}

impl CellContext {
    /// Builds the context for `target` from the task spec and the current
    /// state of the instance.
    pub fn build(spec: &TaskSpec, target: CellAddress, instance: &TableInstance) -> CellContext {
        let schema = &spec.schema;
        let filled_so_far = instance
            .iter()
            .filter(|(address, _)| *address != target)
            .filter_map(|(address, cell)| {
                cell.value().map(|value| FilledEntry {
                    address,
                    row_label: schema.row_label(address.row).to_string(),
                    column_name: schema.column(address.col).name.clone(),
                    unit_hint: schema.column(address.col).unit_hint.clone(),
                    value: value.to_string(),
                })
            })
            .collect();
        CellContext {
            query: spec.query.clone(),
            target,
            row_label: schema.row_label(target.row).to_string(),
            column: schema.column(target.col).clone(),
            filled_so_far,
        }
    }

    pub fn is_filled(&self, address: CellAddress) -> bool {
        self.filled_so_far.iter().any(|e| e.address == address)
    }
}

/// The outcome half of a page decision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Answer(String),
    Proceed(Vec<Link>),
    Stop,
}

/// The five page-local action kinds, as recorded in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicActionKind {
    UpdateAccessibility,
    Click,
    Answer,
    ExtractLinks,
    Stop,
}

impl DynamicActionKind {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            DynamicActionKind::Answer | DynamicActionKind::ExtractLinks | DynamicActionKind::Stop
        )
    }
}

/// One executed turn of a dynamic session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub turn: usize,
    pub action: DynamicActionKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub node_ids: Vec<String>,
    pub delta_chars: usize,
}

/// Full result of exploring one page: the three-way outcome, any
/// contradiction-backed revisions, and trace material.
#[derive(Debug, Clone)]
pub struct PageDecision {
    pub outcome: Outcome,
    pub revisions: Vec<RevisionFlag>,
    pub action_log: Vec<ActionRecord>,
    /// Number of document pages judged (document inspections only).
    pub doc_judgments: u32,
}

impl PageDecision {
    fn of(outcome: Outcome) -> Self {
        PageDecision {
            outcome,
            revisions: Vec::new(),
            action_log: Vec::new(),
            doc_judgments: 0,
        }
    }
}

/// Caps for page-local exploration.
#[derive(Debug, Clone, Copy)]
pub struct ExploreLimits {
    /// Hard cap on dynamic-session turns.
    pub max_turns: usize,
    /// Hard cap on document pages judged per file.
    pub pdf_page_cap: usize,
    /// When false, every page is treated as static (dynamic loop disabled).
    pub dynamic_enabled: bool,
}

impl Default for ExploreLimits {
    fn default() -> Self {
        ExploreLimits {
            max_turns: 12,
            pdf_page_cap: 20,
            dynamic_enabled: true,
        }
    }
}

/// Decides whether a page needs dynamic interaction. Short-circuits to
/// static when the two views are byte-identical and no UI nodes exist;
/// otherwise the provider applies the incompleteness conditions. Provider
/// failure degrades to static.
pub fn classify_dynamic(
    snapshot: &PageSnapshot,
    ctx: &CellContext,
    provider: &dyn DecisionProvider,
) -> bool {
    let no_nodes = snapshot
        .accessibility_nodes
        .as_ref()
        .is_none_or(|nodes| nodes.is_empty());
    if no_nodes && snapshot.rendered_text.as_deref() == Some(snapshot.static_text.as_str()) {
        return false;
    }
    provider.classify_dynamic(snapshot, ctx).unwrap_or(false)
}

/// Static-page exploration: the provider chooses among the three outcomes
/// from the static extract; `Proceed` carries the full, unpruned link list.
pub fn explore_static(
    snapshot: &PageSnapshot,
    ctx: &CellContext,
    provider: &dyn DecisionProvider,
) -> PageDecision {
    let view = PageView {
        url: &snapshot.url,
        text: &snapshot.static_text,
        links: &snapshot.static_links,
    };
    let outcome = match provider.decide_page(view, ctx) {
        Ok(PageOutcome::Answer(value)) if !value.trim().is_empty() => Outcome::Answer(value),
        Ok(PageOutcome::Proceed) if !snapshot.static_links.is_empty() => {
            Outcome::Proceed(snapshot.static_links.clone())
        }
        Ok(_) | Err(_) => Outcome::Stop,
    };
    let mut decision = PageDecision::of(outcome);
    decision.revisions = provider.flag_contradictions(view, ctx).unwrap_or_default();
    decision
}

/// Interaction state for one dynamic page. Never shared across cells.
pub struct DynamicSession<'a> {
    snapshot: &'a PageSnapshot,
    backend: &'a dyn FetchBackend,
    nodes: Vec<DynamicNode>,
    revealed: Vec<String>,
    pub max_turns: usize,
}

impl<'a> DynamicSession<'a> {
    pub fn new(snapshot: &'a PageSnapshot, backend: &'a dyn FetchBackend, max_turns: usize) -> Self {
        let nodes = snapshot
            .accessibility_nodes
            .iter()
            .flatten()
            .map(|n| DynamicNode {
                node_id: n.node_id.clone(),
                role: n.role.clone(),
                label: n.label.clone(),
                registered: n.registered_clickable,
                clicked: false,
            })
            .collect();
        DynamicSession {
            snapshot,
            backend,
            nodes,
            revealed: Vec::new(),
            max_turns,
        }
    }

    fn combined_text(&self) -> String {
        let mut text = self
            .snapshot
            .rendered_text
            .clone()
            .unwrap_or_else(|| self.snapshot.static_text.clone());
        for delta in &self.revealed {
            text.push('\n');
            text.push_str(delta);
        }
        text
    }

    fn links(&self) -> &[Link] {
        self.snapshot
            .rendered_links
            .as_deref()
            .unwrap_or(&self.snapshot.static_links)
    }
}

/// Runs the multi-turn dynamic loop: one provider-chosen action per turn,
/// reveal actions first, terminal actions end the session. Exhausting the
/// turn budget degrades to `Stop`; failed clicks consume their turn.
pub fn explore_dynamic(
    mut session: DynamicSession<'_>,
    ctx: &CellContext,
    provider: &dyn DecisionProvider,
) -> PageDecision {
    let mut log: Vec<ActionRecord> = Vec::new();
    let mut outcome = Outcome::Stop;

    for turn in 0..session.max_turns {
        let combined = session.combined_text();
        let view = crate::oracle::DynamicView {
            url: &session.snapshot.url,
            combined_text: &combined,
            nodes: &session.nodes,
            links: session.links(),
            turn,
        };
        let command = match provider.next_dynamic_action(view, ctx) {
            Ok(command) => command,
            Err(_) => break, // degraded: stop the session
        };
        match command {
            DynamicCommand::UpdateAccessibility(selectors) => {
                let resolved = session
                    .backend
                    .resolve_selectors(&session.snapshot.url, &selectors)
                    .unwrap_or_default();
                let ids: Vec<String> = resolved.iter().map(|n| n.node_id.clone()).collect();
                for found in resolved {
                    match session.nodes.iter_mut().find(|n| n.node_id == found.node_id) {
                        Some(node) => node.registered = true,
                        None => session.nodes.push(DynamicNode {
                            node_id: found.node_id,
                            role: found.role,
                            label: found.label,
                            registered: true,
                            clicked: false,
                        }),
                    }
                }
                log.push(ActionRecord {
                    turn,
                    action: DynamicActionKind::UpdateAccessibility,
                    node_ids: ids,
                    delta_chars: 0,
                });
            }
            DynamicCommand::Click(node_ids) => {
                let mut delta_chars = 0;
                for node_id in &node_ids {
                    let clickable = session
                        .nodes
                        .iter()
                        .any(|n| n.node_id == *node_id && n.registered);
                    if !clickable {
                        continue; // click failed, turn still consumed
                    }
                    if let Ok(Some(delta)) =
                        session.backend.click(&session.snapshot.url, node_id)
                    {
                        delta_chars += delta.chars().count();
                        session.revealed.push(delta);
                    }
                    if let Some(node) =
                        session.nodes.iter_mut().find(|n| n.node_id == *node_id)
                    {
                        node.clicked = true;
                    }
                }
                log.push(ActionRecord {
                    turn,
                    action: DynamicActionKind::Click,
                    node_ids,
                    delta_chars,
                });
            }
            DynamicCommand::Answer(value) => {
                log.push(ActionRecord {
                    turn,
                    action: DynamicActionKind::Answer,
                    node_ids: Vec::new(),
                    delta_chars: 0,
                });
                if !value.trim().is_empty() {
                    outcome = Outcome::Answer(value);
                }
                break;
            }
            DynamicCommand::ExtractLinks => {
                log.push(ActionRecord {
                    turn,
                    action: DynamicActionKind::ExtractLinks,
                    node_ids: Vec::new(),
                    delta_chars: 0,
                });
                let links = session.links().to_vec();
                if !links.is_empty() {
                    outcome = Outcome::Proceed(links);
                }
                break;
            }
            DynamicCommand::Stop => {
                log.push(ActionRecord {
                    turn,
                    action: DynamicActionKind::Stop,
                    node_ids: Vec::new(),
                    delta_chars: 0,
                });
                break;
            }
        }
    }

    let combined = session.combined_text();
    let view = PageView {
        url: &session.snapshot.url,
        text: &combined,
        links: session.links(),
    };
    let mut decision = PageDecision::of(outcome);
    decision.revisions = provider.flag_contradictions(view, ctx).unwrap_or_default();
    decision.action_log = log;
    decision
}

/// Pages through a binary document, one provider judgment per page, stopping
/// at the first hit. Images get a single judgment. Documents never proceed.
pub fn inspect_document(
    url: &Url,
    kind: ContentKind,
    bytes: &[u8],
    ctx: &CellContext,
    provider: &dyn DecisionProvider,
    page_cap: usize,
) -> PageDecision {
    let pages = decode_document_pages(bytes);
    let cap = match kind {
        ContentKind::DocumentImage => 1,
        _ => page_cap.max(1),
    };
    let total = pages.len();
    let mut judgments = 0;
    let mut outcome = Outcome::Stop;
    for (index, text) in pages.iter().take(cap).enumerate() {
        judgments += 1;
        let page = DocumentPageView {
            url,
            page_index: index,
            page_count: total,
            text,
        };
        match provider.judge_document_page(page, ctx) {
            Ok(DocumentJudgment::Found(value)) if !value.trim().is_empty() => {
                outcome = Outcome::Answer(value);
                break;
            }
            Ok(DocumentJudgment::Found(_)) | Ok(DocumentJudgment::Abandon) | Err(_) => break,
            Ok(DocumentJudgment::Continue) => {}
        }
    }
    let mut decision = PageDecision::of(outcome);
    decision.doc_judgments = judgments;
    decision
}

/// Dispatches a fetched page to the right exploration mode.
pub fn decide_page(
    snapshot: &PageSnapshot,
    ctx: &CellContext,
    provider: &dyn DecisionProvider,
    backend: &dyn FetchBackend,
    limits: ExploreLimits,
) -> PageDecision {
    match snapshot.content_kind {
        ContentKind::Error => PageDecision::of(Outcome::Stop),
        ContentKind::DocumentPdf | ContentKind::DocumentImage => inspect_document(
            &snapshot.url,
            snapshot.content_kind,
            snapshot.body.as_deref().unwrap_or_default(),
            ctx,
            provider,
            limits.pdf_page_cap,
        ),
        ContentKind::Html => {
            if limits.dynamic_enabled
                && snapshot.has_dual_views()
                && classify_dynamic(snapshot, ctx, provider)
            {
                explore_dynamic(DynamicSession::new(snapshot, backend, limits.max_turns), ctx, provider)
            } else {
                explore_static(snapshot, ctx, provider)
            }
        }
    }
}

/// Single-page probe used by the cache manager: the same machinery with
/// `Proceed` disallowed. Returns the value if the page answers the target.
pub fn probe_single_page(
    snapshot: &PageSnapshot,
    ctx: &CellContext,
    provider: &dyn DecisionProvider,
    backend: &dyn FetchBackend,
    limits: ExploreLimits,
) -> PageDecision {
    match snapshot.content_kind {
        ContentKind::Html => {
            if limits.dynamic_enabled
                && snapshot.has_dual_views()
                && classify_dynamic(snapshot, ctx, provider)
            {
                let mut decision = explore_dynamic(
                    DynamicSession::new(snapshot, backend, limits.max_turns),
                    ctx,
                    provider,
                );
                if matches!(decision.outcome, Outcome::Proceed(_)) {
                    decision.outcome = Outcome::Stop;
                }
                decision
            } else {
                let view = PageView {
                    url: &snapshot.url,
                    text: &snapshot.static_text,
                    links: &snapshot.static_links,
                };
                let outcome = match provider.probe_neighbor(view, ctx) {
                    Ok(Some(value)) if !value.trim().is_empty() => Outcome::Answer(value),
                    _ => Outcome::Stop,
                };
                let mut decision = PageDecision::of(outcome);
                decision.revisions = provider.flag_contradictions(view, ctx).unwrap_or_default();
                decision
            }
        }
        _ => decide_page(snapshot, ctx, provider, backend, limits),
    }
}

/// Keeps only revisions that are contradiction-backed and target cells that
/// are already filled; revisions for unfilled cells are dropped.
pub fn collect_revisions(decision: &PageDecision, ctx: &CellContext) -> Vec<RevisionFlag> {
    decision
        .revisions
        .iter()
        .filter(|flag| {
            ctx.is_filled(flag.address)
                && !flag.new_value.trim().is_empty()
                && flag.address != ctx.target
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fetcher::{FetchError, FetchMode, FetchPolicy, UiNode};
    use crate::model::TableSchema;
    use crate::oracle::heuristic_provider;
    use std::sync::atomic::AtomicU64;
    use std::time::SystemTime;

    fn ctx_for(row_label: &str, column: &str) -> CellContext {
        CellContext {
            query: "collect station statistics".into(),
            target: CellAddress::new(0, 0),
            row_label: row_label.into(),
            column: ColumnSpec::new(column),
            filled_so_far: Vec::new(),
        }
    }

    fn html_snapshot(url: &str, text: &str, links: Vec<Link>) -> PageSnapshot {
        PageSnapshot {
            url: Url::parse(url).unwrap(),
            content_kind: ContentKind::Html,
            static_text: text.into(),
            static_links: links,
            rendered_text: Some(text.into()),
            rendered_links: None,
            accessibility_nodes: Some(Vec::new()),
            body: None,
            screenshot: None,
            fetched_at: SystemTime::UNIX_EPOCH,
        }
    }

    struct NoBackend(AtomicU64);

    impl FetchBackend for NoBackend {
        fn fetch(
            &self,
            _url: &Url,
            _mode: FetchMode,
            _policy: &FetchPolicy,
        ) -> Result<PageSnapshot, FetchError> {
            Err(FetchError::Unsupported("test backend"))
        }
        fn click(&self, _url: &Url, _node_id: &str) -> Result<Option<String>, FetchError> {
            Ok(None)
        }
        fn resolve_selectors(
            &self,
            _url: &Url,
            _selectors: &[String],
        ) -> Result<Vec<UiNode>, FetchError> {
            Ok(Vec::new())
        }
        fn fetch_count(&self) -> u64 {
            0
        }
    }

    #[test]
    fn identical_views_with_no_nodes_classify_static() {
        let provider = heuristic_provider(0);
        let snap = html_snapshot("mem://t/a", "aurora page", Vec::new());
        let ctx = ctx_for("aurora", "observation count");
        assert!(!classify_dynamic(&snap, &ctx, &provider));
    }

    #[test]
    fn static_answer_and_stop() {
        let provider = heuristic_provider(0);
        let ctx = ctx_for("aurora", "observation count");

        let snap = html_snapshot("mem://t/a", "aurora observation count: 137.", Vec::new());
        let decision = explore_static(&snap, &ctx, &provider);
        assert_eq!(decision.outcome, Outcome::Answer("137".into()));

        let dead_end = html_snapshot("mem://t/b", "nothing to see", Vec::new());
        let decision = explore_static(&dead_end, &ctx, &provider);
        assert_eq!(decision.outcome, Outcome::Stop);
    }

    #[test]
    fn static_proceed_returns_full_link_list() {
        let provider = heuristic_provider(0);
        let ctx = ctx_for("aurora", "observation count");
        let links: Vec<Link> = (0..20)
            .map(|i| Link {
                url: Url::parse(&format!("mem://t/l{i}")).unwrap(),
                anchor: format!("category {i}"),
            })
            .collect();
        let snap = html_snapshot("mem://t/hub", "hub page without values", links.clone());
        let decision = explore_static(&snap, &ctx, &provider);
        match decision.outcome {
            Outcome::Proceed(out) => assert_eq!(out.len(), links.len()),
            other => panic!("expected Proceed, got {other:?}"),
        }
    }

    #[test]
    fn documents_never_proceed() {
        let provider = heuristic_provider(0);
        let ctx = ctx_for("aurora", "observation count");
        let url = Url::parse("mem://t/file.pdf").unwrap();
        let pages = vec!["unrelated content".to_string(), "more filler".to_string()];
        let bytes = crate::fetcher::encode_document_pages(&pages);
        let decision = inspect_document(
            &url,
            ContentKind::DocumentPdf,
            &bytes,
            &ctx,
            &provider,
            20,
        );
        assert_eq!(decision.outcome, Outcome::Stop);
        assert_eq!(decision.doc_judgments, 2);
    }

    #[test]
    fn document_early_termination() {
        let provider = heuristic_provider(0);
        let ctx = ctx_for("aurora", "observation count");
        let url = Url::parse("mem://t/file.pdf").unwrap();
        let pages = vec![
            "cover page".to_string(),
            "aurora observation count: 137.".to_string(),
            "appendix".to_string(),
        ];
        let bytes = crate::fetcher::encode_document_pages(&pages);
        let decision = inspect_document(
            &url,
            ContentKind::DocumentPdf,
            &bytes,
            &ctx,
            &provider,
            20,
        );
        assert_eq!(decision.outcome, Outcome::Answer("137".into()));
        assert_eq!(decision.doc_judgments, 2);
    }

    #[test]
    fn collect_revisions_drops_unfilled_targets() {
        let ctx = CellContext {
            query: "q".into(),
            target: CellAddress::new(1, 0),
            row_label: "basalt".into(),
            column: ColumnSpec::new("observation count"),
            filled_so_far: vec![FilledEntry {
                address: CellAddress::new(0, 0),
                row_label: "aurora".into(),
                column_name: "observation count".into(),
                unit_hint: None,
                value: "12".into(),
            }],
        };
        let evidence = Url::parse("mem://t/fix").unwrap();
        let decision = PageDecision {
            outcome: Outcome::Stop,
            revisions: vec![
                RevisionFlag {
                    address: CellAddress::new(0, 0),
                    new_value: "13".into(),
                    evidence_url: evidence.clone(),
                },
                RevisionFlag {
                    address: CellAddress::new(5, 5),
                    new_value: "99".into(),
                    evidence_url: evidence,
                },
            ],
            action_log: Vec::new(),
            doc_judgments: 0,
        };
        let kept = collect_revisions(&decision, &ctx);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].address, CellAddress::new(0, 0));
        assert_eq!(kept[0].new_value, "13");
    }

    #[test]
    fn terminal_action_is_last_and_unique() {
        // Trivial static-world dynamic page: answer visible immediately.
        let provider = heuristic_provider(0);
        let ctx = ctx_for("aurora", "observation count");
        let backend = NoBackend(AtomicU64::new(0));
        let snap = html_snapshot("mem://t/a", "aurora observation count: 137.", Vec::new());
        let session = DynamicSession::new(&snap, &backend, 12);
        let decision = explore_dynamic(session, &ctx, &provider);
        assert_eq!(decision.outcome, Outcome::Answer("137".into()));
        let terminals: Vec<_> = decision
            .action_log
            .iter()
            .filter(|r| r.action.is_terminal())
            .collect();
        assert_eq!(terminals.len(), 1);
        assert!(decision.action_log.last().unwrap().action.is_terminal());
    }

    #[test]
    fn cell_context_collects_filled_values() {
        let schema = TableSchema {
            primary_key_name: "station".into(),
            primary_key_values: vec!["aurora".into(), "basalt".into()],
            columns: vec![ColumnSpec::new("observation count"), ColumnSpec::new("quality score")],
        };
        let spec = TaskSpec {
            query: "q".into(),
            base_url: Url::parse("mem://t/home").unwrap(),
            schema,
            search_depths: None,
        };
        let mut instance = TableInstance::empty(spec.schema.clone());
        instance.set(CellAddress::new(0, 0), crate::model::CellValue::bare("1"));
        let ctx = CellContext::build(&spec, CellAddress::new(0, 1), &instance);
        assert_eq!(ctx.row_label, "aurora");
        assert_eq!(ctx.column.name, "quality score");
        assert_eq!(ctx.filled_so_far.len(), 1);
        assert_eq!(ctx.filled_so_far[0].value, "1");
    }
}
