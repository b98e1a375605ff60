//! Turns a raw outgoing-link set into the next BFS frontier through three
//! stages: Augment (pattern-based URL proposal via minimal edits), Select
//! (joint pruning under the width budget K), and Rank (query- and
//! structure-aware ordering).

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::oracle::{DecisionProvider, LinkTier};
use crate::page_explorer::CellContext;

/// Where a frontier candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkOrigin {
    OnPage,
    Augmented,
}

/// One scored URL flowing through Augment -> Select -> Rank.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkCandidate {
    pub url: Url,
    pub anchor: String,
    pub origin: LinkOrigin,
    /// Which segment(s) were substituted; present exactly on augmented
    /// candidates.
    pub edit_descriptor: Option<String>,
    pub score: Option<f64>,
}

impl LinkCandidate {
    pub fn on_page(url: Url, anchor: String) -> Self {
        LinkCandidate {
            url,
            anchor,
            origin: LinkOrigin::OnPage,
            edit_descriptor: None,
            score: None,
        }
    }

    pub fn augmented(url: Url, anchor: String, descriptor: String) -> Self {
        LinkCandidate {
            url,
            anchor,
            origin: LinkOrigin::Augmented,
            edit_descriptor: Some(descriptor),
            score: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Minimal edits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TokenClass {
    Digits,
    Month,
    Quarter,
}

const MONTHS: &[&str] = &[
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep",
    "oct", "nov", "dec",
];

fn classify_token(token: &str) -> Option<TokenClass> {
    static QUARTER: OnceLock<Regex> = OnceLock::new();
    let quarter = QUARTER.get_or_init(|| Regex::new(r"^q[1-4]$").expect("quarter regex"));
    let lower = token.to_lowercase();
    if !lower.is_empty() && lower.chars().all(|c| c.is_ascii_digit()) {
        Some(TokenClass::Digits)
    } else if MONTHS.contains(&lower.as_str()) {
        Some(TokenClass::Month)
    } else if quarter.is_match(&lower) {
        Some(TokenClass::Quarter)
    } else {
        None
    }
}

/// Substitutable tokens (maximal digit runs, month and quarter names) found
/// in a text.
fn pattern_tokens(text: &str) -> Vec<(String, TokenClass)> {
    static WORD: OnceLock<Regex> = OnceLock::new();
    let word = WORD.get_or_init(|| Regex::new(r"[A-Za-z]+|\d+").expect("word regex"));
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for m in word.find_iter(text) {
        let token = m.as_str().to_lowercase();
        if let Some(class) = classify_token(&token) {
            if seen.insert(token.clone()) {
                out.push((token, class));
            }
        }
    }
    out
}

/// A synthesized URL together with a description of the edit that produced it.
#[derive(Debug, Clone)]
pub(crate) struct EditProposal {
    pub url: Url,
    pub descriptor: String,
}

/// Uniform substitution of `from` -> `to` across all path segments. Path
/// depth and query parameters are preserved; `None` when the token does not
/// occur in the path.
pub(crate) fn substitute_in_path(url: &Url, from: &str, to: &str) -> Option<EditProposal> {
    if from.is_empty() || from == to {
        return None;
    }
    let segments: Vec<&str> = url.path().split('/').collect();
    let mut replaced = 0usize;
    let new_segments: Vec<String> = segments
        .iter()
        .map(|seg| {
            if seg.contains(from) {
                replaced += 1;
                seg.replace(from, to)
            } else {
                (*seg).to_string()
            }
        })
        .collect();
    if replaced == 0 {
        return None;
    }
    let mut out = url.clone();
    out.set_path(&new_segments.join("/"));
    if out == *url {
        return None;
    }
    let kind = if replaced > 1 { "uniform path" } else { "path segment" };
    Some(EditProposal {
        url: out,
        descriptor: format!("{kind} {from}->{to}"),
    })
}

/// Domain edit: substitutes `from` -> `to` inside the host, keeping the full
/// path unchanged.
pub(crate) fn substitute_in_host(url: &Url, from: &str, to: &str) -> Option<EditProposal> {
    if from.is_empty() || from == to {
        return None;
    }
    let host = url.host_str()?;
    if !host.contains(from) {
        return None;
    }
    let mut out = url.clone();
    out.set_host(Some(&host.replace(from, to))).ok()?;
    if out == *url {
        return None;
    }
    Some(EditProposal {
        url: out,
        descriptor: format!("host {from}->{to}"),
    })
}

/// Augment stage: proposes new candidate URLs by minimal edits to on-page
/// links — at most one path segment changed, or one uniform multi-segment
/// substitution, or a host edit with the path unchanged. Never adds query
/// parameters or path depth. Proposals duplicating on-page URLs are
/// suppressed; an empty result is valid.
pub fn augment(
    links: &[LinkCandidate],
    ctx: &CellContext,
    _provider: &dyn DecisionProvider,
) -> Vec<LinkCandidate> {
    let mut target_text = format!("{} {}", ctx.row_label, ctx.column.name);
    if let Some(hint) = &ctx.column.unit_hint {
        target_text.push(' ');
        target_text.push_str(hint);
    }
    target_text.push(' ');
    target_text.push_str(&ctx.query);
    let targets = pattern_tokens(&target_text);
    if targets.is_empty() {
        return Vec::new();
    }

    let on_page: BTreeSet<&str> = links.iter().map(|l| l.url.as_str()).collect();
    let mut proposed = BTreeSet::new();
    let mut out = Vec::new();

    for link in links {
        let mut source_text = String::new();
        if let Some(host) = link.url.host_str() {
            source_text.push_str(host);
            source_text.push(' ');
        }
        source_text.push_str(link.url.path());
        for (source_token, source_class) in pattern_tokens(&source_text) {
            for (target_token, target_class) in &targets {
                if source_class != *target_class || source_token == *target_token {
                    continue;
                }
                // Digit runs are only swapped like-for-like in width; this
                // covers years, fiscal-year suffixes, and pagination indexes
                // without inventing arbitrary numbers.
                if source_class == TokenClass::Digits
                    && source_token.len() != target_token.len()
                {
                    continue;
                }
                let edits = [
                    substitute_in_path(&link.url, &source_token, target_token),
                    substitute_in_host(&link.url, &source_token, target_token),
                ];
                for proposal in edits.into_iter().flatten() {
                    let key = proposal.url.as_str().to_string();
                    if on_page.contains(key.as_str()) || !proposed.insert(key) {
                        continue;
                    }
                    let anchor = if link.anchor.contains(&source_token) {
                        link.anchor.replace(&source_token, target_token)
                    } else {
                        link.anchor.clone()
                    };
                    out.push(LinkCandidate::augmented(
                        proposal.url,
                        anchor,
                        proposal.descriptor,
                    ));
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Select and Rank
// ---------------------------------------------------------------------------

fn dedup_by_url(pool: Vec<LinkCandidate>) -> Vec<LinkCandidate> {
    let mut seen = BTreeSet::new();
    pool.into_iter()
        .filter(|c| seen.insert(c.url.as_str().to_string()))
        .collect()
}

fn assess(
    pool: &mut [LinkCandidate],
    ctx: &CellContext,
    provider: &dyn DecisionProvider,
) -> Vec<LinkTier> {
    match provider.assess_links(pool, ctx) {
        Ok(assessments) if assessments.len() == pool.len() => {
            for (candidate, assessment) in pool.iter_mut().zip(&assessments) {
                candidate.score = Some(assessment.score);
            }
            assessments.iter().map(|a| a.tier).collect()
        }
        // Degraded: neutral scores keep the pipeline flowing.
        _ => {
            for candidate in pool.iter_mut() {
                candidate.score = Some(0.0);
            }
            vec![LinkTier::Other; pool.len()]
        }
    }
}

/// Deterministic tie-break: score descending, on-page before augmented
/// (grounded links are verified to exist), then URL lexicographic.
fn candidate_order(a: &LinkCandidate, b: &LinkCandidate) -> std::cmp::Ordering {
    let sa = a.score.unwrap_or(0.0);
    let sb = b.score.unwrap_or(0.0);
    sb.partial_cmp(&sa)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| match (a.origin, b.origin) {
            (LinkOrigin::OnPage, LinkOrigin::Augmented) => std::cmp::Ordering::Less,
            (LinkOrigin::Augmented, LinkOrigin::OnPage) => std::cmp::Ordering::Greater,
            _ => std::cmp::Ordering::Equal,
        })
        .then_with(|| a.url.as_str().cmp(b.url.as_str()))
}

/// Select stage: prunes the joint pool to at most K candidates. When both
/// origins are present and K >= 2 the result keeps at least one of each,
/// aiming for half the budget on on-page links when supply allows.
pub fn select(
    pool: Vec<LinkCandidate>,
    k: usize,
    ctx: &CellContext,
    provider: &dyn DecisionProvider,
) -> Vec<LinkCandidate> {
    let mut pool = dedup_by_url(pool);
    if k == 0 || pool.is_empty() {
        return Vec::new();
    }
    assess(&mut pool, ctx, provider);
    pool.sort_by(candidate_order);
    if pool.len() <= k {
        return pool;
    }

    let on_page_supply = pool.iter().filter(|c| c.origin == LinkOrigin::OnPage).count();
    let augmented_supply = pool.len() - on_page_supply;
    if on_page_supply == 0 || augmented_supply == 0 || k < 2 {
        pool.truncate(k);
        return pool;
    }

    // Reserve a portion of the budget for each origin, then fill the rest by
    // overall merit.
    let mut on_quota = k.div_ceil(2).min(on_page_supply).max(1);
    let mut aug_quota = (k - on_quota).min(augmented_supply).max(1);
    if on_quota + aug_quota > k {
        on_quota = k - aug_quota;
    }

    let mut taken: Vec<LinkCandidate> = Vec::with_capacity(k);
    let mut rest: Vec<LinkCandidate> = Vec::new();
    let (mut on_taken, mut aug_taken) = (0usize, 0usize);
    for candidate in pool {
        let quota_left = match candidate.origin {
            LinkOrigin::OnPage if on_taken < on_quota => {
                on_taken += 1;
                true
            }
            LinkOrigin::Augmented if aug_taken < aug_quota => {
                aug_taken += 1;
                true
            }
            _ => false,
        };
        if quota_left {
            taken.push(candidate);
        } else {
            rest.push(candidate);
        }
    }
    for candidate in rest {
        if taken.len() >= k {
            break;
        }
        taken.push(candidate);
    }
    taken.sort_by(candidate_order);
    taken
}

/// Rank stage: total order for the next BFS layer — direct-hit candidates
/// before hubs before the rest, with the deterministic tie-break inside each
/// tier.
pub fn rank(
    mut selected: Vec<LinkCandidate>,
    ctx: &CellContext,
    provider: &dyn DecisionProvider,
) -> Vec<LinkCandidate> {
    if selected.is_empty() {
        return selected;
    }
    let tiers = assess(&mut selected, ctx, provider);
    let mut indexed: Vec<(LinkTier, LinkCandidate)> =
        tiers.into_iter().zip(selected).collect();
    indexed.sort_by(|(tier_a, a), (tier_b, b)| {
        tier_a.cmp(tier_b).then_with(|| candidate_order(a, b))
    });
    indexed.into_iter().map(|(_, c)| c).collect()
}

/// The composed pipeline: `rank(select(dedup(links ∪ augment(links)), K))`.
/// The result, at most K candidates, becomes the next-layer frontier in
/// order. `augment_enabled` gates URL synthesis.
pub fn process_links(
    links: Vec<LinkCandidate>,
    ctx: &CellContext,
    k: usize,
    provider: &dyn DecisionProvider,
    augment_enabled: bool,
) -> Vec<LinkCandidate> {
    let mut pool = links;
    if augment_enabled {
        let synthesized = augment(&pool, ctx, provider);
        pool.extend(synthesized);
    }
    rank(select(pool, k, ctx, provider), ctx, provider)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CellAddress, ColumnSpec};
    use crate::oracle::heuristic_provider;

    fn ctx(row_label: &str) -> CellContext {
        CellContext {
            query: "tabulate yearly results data".into(),
            target: CellAddress::new(0, 0),
            row_label: row_label.into(),
            column: ColumnSpec::new("observation count"),
            filled_so_far: Vec::new(),
        }
    }

    fn on_page(url: &str, anchor: &str) -> LinkCandidate {
        LinkCandidate::on_page(Url::parse(url).unwrap(), anchor.into())
    }

    #[test]
    fn augment_synthesizes_target_year() {
        let provider = heuristic_provider(0);
        let links = vec![
            on_page("https://ex.org/results/2024/q1", "2024 q1 results"),
            on_page("https://ex.org/results/2023/q1", "2023 q1 results"),
        ];
        let out = augment(&links, &ctx("2025"), &provider);
        let urls: Vec<&str> = out.iter().map(|c| c.url.as_str()).collect();
        assert!(urls.contains(&"https://ex.org/results/2025/q1"));
        assert!(out.iter().all(|c| c.edit_descriptor.is_some()));
        // No duplicates of on-page URLs.
        assert!(!urls.contains(&"https://ex.org/results/2024/q1"));
    }

    #[test]
    fn augment_domain_edit_keeps_path() {
        let provider = heuristic_provider(0);
        let links = vec![on_page(
            "https://liheap-fy24-data-dashboard-hhs-acf.hub.arcgis.com/reports/main",
            "fy24 dashboard",
        )];
        let mut context = ctx("fy25 season");
        context.query = "liheap fy25 households served".into();
        let out = augment(&links, &context, &provider);
        assert!(out.iter().any(|c| {
            c.url.as_str()
                == "https://liheap-fy25-data-dashboard-hhs-acf.hub.arcgis.com/reports/main"
                && c.edit_descriptor.as_deref().is_some_and(|d| d.starts_with("host"))
        }));
    }

    #[test]
    fn augment_without_patterns_is_empty() {
        let provider = heuristic_provider(0);
        let links = vec![on_page("https://ex.org/about/team", "our team")];
        assert!(augment(&links, &ctx("aurora"), &provider).is_empty());
    }

    #[test]
    fn augment_does_not_cross_digit_widths() {
        let provider = heuristic_provider(0);
        let links = vec![on_page("https://ex.org/page/7", "page seven")];
        // Target token "2025" must not replace the single digit "7".
        assert!(augment(&links, &ctx("2025"), &provider).is_empty());
    }

    #[test]
    fn select_respects_budget_and_mix() {
        let provider = heuristic_provider(0);
        let mut pool: Vec<LinkCandidate> = (0..25)
            .map(|i| on_page(&format!("mem://t/on{i:02}"), "archive entry"))
            .collect();
        for i in 0..5 {
            pool.push(LinkCandidate::augmented(
                Url::parse(&format!("mem://t/aug{i}")).unwrap(),
                "synth".into(),
                "path 1->2".into(),
            ));
        }
        let out = select(pool, 10, &ctx("aurora"), &provider);
        assert_eq!(out.len(), 10);
        assert!(out.iter().any(|c| c.origin == LinkOrigin::OnPage));
        assert!(out.iter().any(|c| c.origin == LinkOrigin::Augmented));
    }

    #[test]
    fn select_with_slack_budget_returns_all() {
        let provider = heuristic_provider(0);
        let pool = vec![
            on_page("mem://t/a", "a"),
            on_page("mem://t/b", "b"),
            on_page("mem://t/c", "c"),
        ];
        let out = select(pool, 10, &ctx("aurora"), &provider);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn rank_puts_direct_hits_first() {
        let provider = heuristic_provider(0);
        let mut context = ctx("women 50m freestyle");
        context.column = ColumnSpec::new("final time").with_unit_hint("seconds, MM:SS");
        let selected = vec![
            on_page("mem://t/all", "All competitions"),
            on_page("mem://t/free50", "Women 50m Freestyle - Final results"),
        ];
        let out = rank(selected, &context, &provider);
        assert_eq!(out[0].url.as_str(), "mem://t/free50");
    }

    #[test]
    fn rank_ties_break_lexicographically() {
        let provider = heuristic_provider(0);
        let selected = vec![on_page("mem://t/zzz", "same"), on_page("mem://t/aaa", "same")];
        let out = rank(selected, &ctx("aurora"), &provider);
        assert_eq!(out[0].url.as_str(), "mem://t/aaa");
    }

    #[test]
    fn process_links_is_budgeted_and_deduped() {
        let provider = heuristic_provider(0);
        let links: Vec<LinkCandidate> = (0..6)
            .map(|y| on_page(&format!("mem://yt/{}/data", 2019 + y), "year data"))
            .collect();
        let out = process_links(links, &ctx("2025"), 1, &provider, true);
        assert_eq!(out.len(), 1);

        let out = process_links(Vec::new(), &ctx("2025"), 10, &provider, true);
        assert!(out.is_empty());
    }
}
