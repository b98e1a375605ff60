//! The single seam for all judgment calls: the [`DecisionProvider`] interface
//! with a deterministic heuristic implementation for offline runs and a
//! remote chat-completion client, plus the equivalence judge used by eval.

mod heuristic;
mod remote;
pub mod text;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::fetcher::{Link, PageSnapshot};
use crate::model::{CellAddress, ColumnSpec};
use crate::page_explorer::CellContext;

pub use heuristic::{heuristic_provider, HeuristicProvider};
pub use remote::{remote_provider, RemoteConfig, RemoteJudge, RemoteProvider};

/// A page as presented to the provider: one text view plus outgoing links.
#[derive(Debug, Clone, Copy)]
pub struct PageView<'a> {
    pub url: &'a Url,
    pub text: &'a str,
    pub links: &'a [Link],
}

/// Interaction state of one node inside a dynamic session.
#[derive(Debug, Clone)]
pub struct DynamicNode {
    pub node_id: String,
    pub role: String,
    pub label: String,
    pub registered: bool,
    pub clicked: bool,
}

/// What the provider sees when choosing the next page-local action.
#[derive(Debug, Clone, Copy)]
pub struct DynamicView<'a> {
    pub url: &'a Url,
    /// Static text plus everything revealed by clicks so far.
    pub combined_text: &'a str,
    pub nodes: &'a [DynamicNode],
    pub links: &'a [Link],
    pub turn: usize,
}

/// One rendered document page under inspection.
#[derive(Debug, Clone, Copy)]
pub struct DocumentPageView<'a> {
    pub url: &'a Url,
    pub page_index: usize,
    pub page_count: usize,
    pub text: &'a str,
}

/// The three-way page decision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PageOutcome {
    Answer(String),
    Proceed,
    Stop,
}

/// Page-local actions available in a dynamic session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DynamicCommand {
    UpdateAccessibility(Vec<String>),
    Click(Vec<String>),
    Answer(String),
    ExtractLinks,
    Stop,
}

/// Per-page judgment while paging through a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DocumentJudgment {
    Found(String),
    Continue,
    Abandon,
}

/// Relevance band used for frontier ordering: direct hits before hubs before
/// everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LinkTier {
    Direct,
    Hub,
    Other,
}

/// Provider assessment of one frontier candidate.
#[derive(Debug, Clone, Copy)]
pub struct LinkAssessment {
    pub score: f64,
    pub tier: LinkTier,
}

/// A candidate exploration root proposed from cached paths.
#[derive(Debug, Clone)]
pub struct RootCandidate {
    pub url: Url,
    /// True when the URL was synthesized by a minimal edit rather than taken
    /// verbatim from a cached path.
    pub synthesized: bool,
    pub edit_descriptor: Option<String>,
    /// Position of the source URL within its cached path (0 = root).
    pub depth_in_path: usize,
    /// Whether the candidate sits at or next to the divergence point of the
    /// neighbor paths.
    pub near_divergence: bool,
}

/// A contradiction-backed correction to an already-filled cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevisionFlag {
    pub address: CellAddress,
    pub new_value: String,
    pub evidence_url: Url,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after retries")]
    RateLimited,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unparseable provider response: {0}")]
    Parse(String),
}

/// Every judgment call the engine delegates. Implementations must be
/// deterministic given identical inputs and provider state/seed (the
/// heuristic provider is; remote models are as deterministic as their
/// endpoint).
pub trait DecisionProvider: Send + Sync {
    /// Page decision on a static page: answer, proceed with links, or stop.
    fn decide_page(&self, view: PageView<'_>, ctx: &CellContext)
        -> Result<PageOutcome, ProviderError>;

    /// Whether the static extract is incomplete for the target cell and the
    /// page needs dynamic interaction.
    fn classify_dynamic(&self, snapshot: &PageSnapshot, ctx: &CellContext)
        -> Result<bool, ProviderError>;

    /// Next page-local action for a dynamic session.
    fn next_dynamic_action(&self, view: DynamicView<'_>, ctx: &CellContext)
        -> Result<DynamicCommand, ProviderError>;

    /// Judgment on one document page: found the value, keep paging, or give up.
    fn judge_document_page(&self, page: DocumentPageView<'_>, ctx: &CellContext)
        -> Result<DocumentJudgment, ProviderError>;

    /// Relevance assessment for frontier candidates, index-aligned with the
    /// input.
    fn assess_links(&self, candidates: &[crate::link_processor::LinkCandidate], ctx: &CellContext)
        -> Result<Vec<LinkAssessment>, ProviderError>;

    /// Relevance scores for cache-derived root candidates, index-aligned.
    fn rank_roots(&self, candidates: &[RootCandidate], ctx: &CellContext)
        -> Result<Vec<f64>, ProviderError>;

    /// Single-page probe: is the target value present on this page?
    fn probe_neighbor(&self, view: PageView<'_>, ctx: &CellContext)
        -> Result<Option<String>, ProviderError>;

    /// Contradiction scan: corrections for already-filled cells that this
    /// page states with clear evidence.
    fn flag_contradictions(&self, view: PageView<'_>, ctx: &CellContext)
        -> Result<Vec<RevisionFlag>, ProviderError>;
}

// ---------------------------------------------------------------------------
// Equivalence judge
// ---------------------------------------------------------------------------

/// Binary semantic-equivalence decision over a predicted/gold value pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub equivalent: bool,
    pub rationale: String,
    /// Set when a remote judge failed and the built-in judge answered instead.
    #[serde(default)]
    pub degraded: bool,
}

impl JudgeVerdict {
    fn new(equivalent: bool, rationale: impl Into<String>) -> Self {
        JudgeVerdict {
            equivalent,
            rationale: rationale.into(),
            degraded: false,
        }
    }
}

pub trait Judge: Send + Sync {
    fn equivalent(&self, predicted: &str, gold: &str, column: &ColumnSpec) -> JudgeVerdict;
}

/// Judges a predicted value against gold under the given column context.
pub fn judge_equivalence(
    predicted: &str,
    gold: &str,
    column: &ColumnSpec,
    judge: &dyn Judge,
) -> JudgeVerdict {
    judge.equivalent(predicted, gold, column)
}

/// Offline lenient judge: case-insensitive normalized equality, numeric
/// equality after percent normalization, and rounding-tolerant numeric
/// equality (the more precise value rounded to the less precise one's
/// decimal places).
#[derive(Debug, Default, Clone, Copy)]
pub struct BuiltinJudge;

impl Judge for BuiltinJudge {
    fn equivalent(&self, predicted: &str, gold: &str, _column: &ColumnSpec) -> JudgeVerdict {
        let a = normalize_for_match(predicted);
        let b = normalize_for_match(gold);
        if a.eq_ignore_ascii_case(&b) && !a.is_empty() {
            return JudgeVerdict::new(true, "normalized strings equal");
        }
        let (Some(pa), Some(pb)) = (parse_number(predicted), parse_number(gold)) else {
            return JudgeVerdict::new(false, "values differ and are not both numeric");
        };
        let (va, da) = pa;
        let (vb, db) = pb;
        let scale = va.abs().max(vb.abs());
        if (va - vb).abs() <= 1e-6 * scale || (va - vb).abs() <= 1e-12 {
            return JudgeVerdict::new(true, "numerically equal after normalization");
        }
        let dp = da.min(db);
        if format!("{va:.*}", dp as usize) == format!("{vb:.*}", dp as usize) {
            return JudgeVerdict::new(true, "equal after rounding to shared precision");
        }
        JudgeVerdict::new(false, "numeric values differ")
    }
}

/// Normalization used by exact match: Unicode canonical composition, trim,
/// internal whitespace collapse. Case-sensitive.
pub fn normalize_for_match(value: &str) -> String {
    let composed: String = icu_normalizer::ComposingNormalizerBorrowed::new_nfc()
        .normalize_iter(value.chars())
        .collect();
    text::collapse_whitespace(&composed)
}

/// Parses a numeric literal, tolerating thousands separators and a trailing
/// percent sign (scaled to its fraction). Returns the value and the number of
/// decimal places written in the literal.
fn parse_number(raw: &str) -> Option<(f64, u32)> {
    let mut s = raw.trim().to_string();
    let percent = s.ends_with('%');
    if percent {
        s.pop();
        s = s.trim_end().to_string();
    }
    // Strip digit-grouping commas ("1,204" -> "1204") but reject stray ones.
    let grouped = regex::Regex::new(r"^\d{1,3}(,\d{3})+(\.\d+)?$").expect("grouping regex");
    if grouped.is_match(&s) {
        s = s.replace(',', "");
    }
    if s.is_empty() || s.contains(',') {
        return None;
    }
    let value: f64 = s.parse().ok()?;
    let decimals = s.split('.').nth(1).map_or(0, |frac| {
        frac.chars().take_while(|c| c.is_ascii_digit()).count() as u32
    });
    if percent {
        Some((value / 100.0, decimals + 2))
    } else {
        Some((value, decimals))
    }
}
