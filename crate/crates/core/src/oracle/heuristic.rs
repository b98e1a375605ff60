//! Deterministic rule-based provider for offline testing: proximity-rule
//! page decisions, the four static-incompleteness conditions, token-overlap
//! link scoring, and marker-gated contradiction flagging.

use super::text::{self, Finding};
use super::{
    DecisionProvider, DocumentJudgment, DocumentPageView, DynamicCommand, DynamicView,
    LinkAssessment, LinkTier, PageOutcome, PageView, ProviderError, RevisionFlag, RootCandidate,
};
use crate::fetcher::PageSnapshot;
use crate::link_processor::LinkCandidate;
use crate::page_explorer::CellContext;

/// Creates the deterministic heuristic provider. Same inputs and seed yield
/// identical outputs across processes and platforms.
pub fn heuristic_provider(seed: u64) -> HeuristicProvider {
    HeuristicProvider { seed }
}

#[derive(Debug, Clone, Copy)]
pub struct HeuristicProvider {
    /// Kept for interface parity; the rules below need no randomness.
    #[allow(dead_code)]
    seed: u64,
}

impl HeuristicProvider {
    fn find(&self, text_body: &str, ctx: &CellContext) -> Option<Finding> {
        text::find_value(text_body, &ctx.row_label, &ctx.column)
    }
}

impl DecisionProvider for HeuristicProvider {
    fn decide_page(
        &self,
        view: PageView<'_>,
        ctx: &CellContext,
    ) -> Result<PageOutcome, ProviderError> {
        if let Some(hit) = self.find(view.text, ctx) {
            return Ok(PageOutcome::Answer(hit.value));
        }
        if view.links.is_empty() {
            Ok(PageOutcome::Stop)
        } else {
            Ok(PageOutcome::Proceed)
        }
    }

    fn classify_dynamic(
        &self,
        snapshot: &PageSnapshot,
        ctx: &CellContext,
    ) -> Result<bool, ProviderError> {
        let static_text = &snapshot.static_text;
        let rendered = snapshot.rendered_text.as_deref().unwrap_or(static_text);

        // (i) the rendered view holds concrete query-relevant facts (digit
        // tokens near the row label) that the static extract lacks.
        let rendered_facts = text::digit_facts_near_label(rendered, &ctx.row_label);
        let condition_i = rendered_facts.iter().any(|fact| !static_text.contains(fact.as_str()));

        // (ii) rendered structural cues (header/tab-looking lines) without a
        // static counterpart.
        let condition_ii = rendered
            .lines()
            .map(str::trim)
            .filter(|line| {
                let len = line.chars().count();
                (3..120).contains(&len)
                    && (line.contains('|') || line.ends_with(':') || line.starts_with('['))
            })
            .any(|cue| !static_text.contains(cue));

        // (iii) static extract truncated or substantially less informative.
        let static_trim = static_text.trim_end();
        let condition_iii = static_trim.ends_with("...")
            || static_trim.ends_with('\u{2026}')
            || (rendered.len() >= 40 && static_text.len() * 10 < rendered.len() * 3);

        // (iv) static extract exposes UI controls without their content: a
        // declared control whose label shows in the text while the target
        // value does not.
        let nodes = snapshot.accessibility_nodes.as_deref().unwrap_or_default();
        let static_lower = static_text.to_lowercase();
        let condition_iv = !nodes.is_empty()
            && nodes.iter().any(|n| {
                !n.label.trim().is_empty() && static_lower.contains(&n.label.to_lowercase())
            })
            && self.find(static_text, ctx).is_none();

        Ok(condition_i || condition_ii || condition_iii || condition_iv)
    }

    fn next_dynamic_action(
        &self,
        view: DynamicView<'_>,
        ctx: &CellContext,
    ) -> Result<DynamicCommand, ProviderError> {
        if let Some(hit) = self.find(view.combined_text, ctx) {
            return Ok(DynamicCommand::Answer(hit.value));
        }
        // Exhaust reveal actions before any terminal action: click the first
        // unclicked registered control, then register what is left.
        if let Some(node) = view.nodes.iter().find(|n| n.registered && !n.clicked) {
            return Ok(DynamicCommand::Click(vec![node.node_id.clone()]));
        }
        let unregistered: Vec<String> = view
            .nodes
            .iter()
            .filter(|n| !n.registered)
            .map(|n| n.label.clone())
            .collect();
        if !unregistered.is_empty() {
            return Ok(DynamicCommand::UpdateAccessibility(unregistered));
        }
        if view.links.is_empty() {
            Ok(DynamicCommand::Stop)
        } else {
            Ok(DynamicCommand::ExtractLinks)
        }
    }

    fn judge_document_page(
        &self,
        page: DocumentPageView<'_>,
        ctx: &CellContext,
    ) -> Result<DocumentJudgment, ProviderError> {
        match self.find(page.text, ctx) {
            Some(hit) => Ok(DocumentJudgment::Found(hit.value)),
            None => Ok(DocumentJudgment::Continue),
        }
    }

    fn assess_links(
        &self,
        candidates: &[LinkCandidate],
        ctx: &CellContext,
    ) -> Result<Vec<LinkAssessment>, ProviderError> {
        let row_terms = text::significant_numeric_aware_tokens(&ctx.row_label);
        let mut col_terms = text::significant_numeric_aware_tokens(&ctx.column.name);
        if let Some(hint) = &ctx.column.unit_hint {
            col_terms.extend(text::significant_numeric_aware_tokens(hint));
        }
        let query_terms = text::significant_tokens(&ctx.query);

        Ok(candidates
            .iter()
            .map(|candidate| {
                let mut terms = text::significant_numeric_aware_tokens(&candidate.anchor);
                terms.extend(text::url_tokens(&candidate.url));
                let row_overlap = text::overlap(&terms, &row_terms);
                let col_overlap = text::overlap(&terms, &col_terms);
                let query_overlap = text::overlap(&terms, &query_terms);
                let hub = text::looks_like_hub(&candidate.anchor);
                let score = 3.0 * row_overlap as f64
                    + 2.0 * col_overlap as f64
                    + query_overlap as f64
                    + if hub { 0.5 } else { 0.0 };
                let tier = if row_overlap >= 1 {
                    LinkTier::Direct
                } else if hub || query_overlap >= 1 || col_overlap >= 1 {
                    LinkTier::Hub
                } else {
                    LinkTier::Other
                };
                LinkAssessment { score, tier }
            })
            .collect())
    }

    fn rank_roots(
        &self,
        candidates: &[RootCandidate],
        ctx: &CellContext,
    ) -> Result<Vec<f64>, ProviderError> {
        let row_terms = text::significant_numeric_aware_tokens(&ctx.row_label);
        let col_terms = text::significant_numeric_aware_tokens(&ctx.column.name);
        Ok(candidates
            .iter()
            .map(|candidate| {
                let terms = text::url_tokens(&candidate.url);
                let row_overlap = text::overlap(&terms, &row_terms);
                let col_overlap = text::overlap(&terms, &col_terms);
                4.0 * row_overlap as f64
                    + 2.0 * col_overlap as f64
                    + if candidate.near_divergence { 0.5 } else { 0.0 }
            })
            .collect())
    }

    fn probe_neighbor(
        &self,
        view: PageView<'_>,
        ctx: &CellContext,
    ) -> Result<Option<String>, ProviderError> {
        Ok(self.find(view.text, ctx).map(|hit| hit.value))
    }

    fn flag_contradictions(
        &self,
        view: PageView<'_>,
        ctx: &CellContext,
    ) -> Result<Vec<RevisionFlag>, ProviderError> {
        let mut flags = Vec::new();
        for entry in &ctx.filled_so_far {
            let column = entry.column_spec();
            let Some(hit) = text::find_value(view.text, &entry.row_label, &column) else {
                continue;
            };
            if hit.value == entry.value {
                continue;
            }
            // A correction requires explicit marker text near the evidence;
            // silent value drift is not a revision.
            if !hit.window.contains("correct") {
                continue;
            }
            flags.push(RevisionFlag {
                address: entry.address,
                new_value: hit.value,
                evidence_url: view.url.clone(),
            });
        }
        Ok(flags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fetcher::{ContentKind, Link, UiNode};
    use crate::model::{CellAddress, ColumnSpec};
    use crate::page_explorer::FilledEntry;
    use std::time::SystemTime;
    use url::Url;

    fn ctx() -> CellContext {
        CellContext {
            query: "compile station statistics from the records portal".into(),
            target: CellAddress::new(0, 0),
            row_label: "aurora".into(),
            column: ColumnSpec::new("observation count"),
            filled_so_far: Vec::new(),
        }
    }

    fn snapshot(static_text: &str, rendered: Option<&str>, nodes: Vec<UiNode>) -> PageSnapshot {
        PageSnapshot {
            url: Url::parse("mem://t/p").unwrap(),
            content_kind: ContentKind::Html,
            static_text: static_text.into(),
            static_links: Vec::new(),
            rendered_text: rendered.map(str::to_string),
            rendered_links: None,
            accessibility_nodes: Some(nodes),
            body: None,
            screenshot: None,
            fetched_at: SystemTime::UNIX_EPOCH,
        }
    }

    #[test]
    fn page_decision_answer_on_proximity_hit() {
        let provider = heuristic_provider(1);
        let view = PageView {
            url: &Url::parse("mem://t/p").unwrap(),
            text: "aurora observation count: 137.",
            links: &[],
        };
        assert_eq!(
            provider.decide_page(view, &ctx()).unwrap(),
            PageOutcome::Answer("137".into())
        );
    }

    #[test]
    fn classify_condition_i_rendered_facts() {
        let provider = heuristic_provider(1);
        let snap = snapshot(
            "aurora overview without figures",
            Some("aurora overview without figures\naurora reading 42.7"),
            Vec::new(),
        );
        assert!(provider.classify_dynamic(&snap, &ctx()).unwrap());
    }

    #[test]
    fn classify_condition_iv_controls_without_content() {
        let provider = heuristic_provider(1);
        let snap = snapshot(
            "aurora results by year: 2023 | 2024 | 2025. Pick a tab.",
            Some("aurora results by year: 2023 | 2024 | 2025. Pick a tab."),
            vec![
                UiNode {
                    node_id: "tab-2024".into(),
                    role: "tab".into(),
                    label: "2024".into(),
                    registered_clickable: true,
                },
            ],
        );
        assert!(provider.classify_dynamic(&snap, &ctx()).unwrap());
    }

    #[test]
    fn classify_false_on_identical_views_without_nodes() {
        let provider = heuristic_provider(1);
        let snap = snapshot("same text", Some("same text"), Vec::new());
        assert!(!provider.classify_dynamic(&snap, &ctx()).unwrap());
    }

    #[test]
    fn classify_false_when_static_already_answers() {
        let provider = heuristic_provider(1);
        let snap = snapshot(
            "aurora observation count: 137. Panel: more",
            Some("aurora observation count: 137. Panel: more"),
            vec![UiNode {
                node_id: "n1".into(),
                role: "button".into(),
                label: "Panel".into(),
                registered_clickable: true,
            }],
        );
        assert!(!provider.classify_dynamic(&snap, &ctx()).unwrap());
    }

    #[test]
    fn link_scoring_prefers_schema_overlap() {
        let provider = heuristic_provider(1);
        let mk = |url: &str, anchor: &str| LinkCandidate::on_page(
            Url::parse(url).unwrap(),
            anchor.to_string(),
        );
        let candidates = vec![
            mk("mem://t/countries", "Countries"),
            mk("mem://t/pubs", "Publications"),
        ];
        let mut context = ctx();
        context.row_label = "Benin".into();
        context.query = "survey counts for each country".into();
        let scores = provider.assess_links(&candidates, &context).unwrap();
        assert!(scores[0].score > scores[1].score);
    }

    #[test]
    fn contradiction_needs_marker() {
        let provider = heuristic_provider(1);
        let mut context = ctx();
        context.target = CellAddress::new(1, 0);
        context.row_label = "basalt".into();
        context.filled_so_far = vec![FilledEntry {
            address: CellAddress::new(0, 0),
            row_label: "aurora".into(),
            column_name: "observation count".into(),
            unit_hint: None,
            value: "12".into(),
        }];
        let url = Url::parse("mem://t/p").unwrap();

        let silent = PageView {
            url: &url,
            text: "aurora observation count: 13.",
            links: &[],
        };
        assert!(provider.flag_contradictions(silent, &context).unwrap().is_empty());

        let marked = PageView {
            url: &url,
            text: "Correction notice: aurora observation count: 13 (corrected).",
            links: &[],
        };
        let flags = provider.flag_contradictions(marked, &context).unwrap();
        assert_eq!(flags.len(), 1);
        assert_eq!(flags[0].new_value, "13");
        assert_eq!(flags[0].address, CellAddress::new(0, 0));
    }

    #[test]
    fn agreeing_restatement_is_not_flagged() {
        let provider = heuristic_provider(1);
        let mut context = ctx();
        context.target = CellAddress::new(1, 0);
        context.filled_so_far = vec![FilledEntry {
            address: CellAddress::new(0, 0),
            row_label: "aurora".into(),
            column_name: "observation count".into(),
            unit_hint: None,
            value: "12".into(),
        }];
        let url = Url::parse("mem://t/p").unwrap();
        let view = PageView {
            url: &url,
            text: "corrected register: aurora observation count: 12.",
            links: &[],
        };
        assert!(provider.flag_contradictions(view, &context).unwrap().is_empty());
    }
}
