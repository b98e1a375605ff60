//! Deterministic text-analysis rules shared by the heuristic provider: token
//! extraction, lightweight stemming, value-shape matching, and the proximity
//! rule that locates a cell value near its row label and column mention.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

use crate::model::ColumnSpec;

/// Chars of context inspected after a row-label occurrence.
pub const PROXIMITY_WINDOW: usize = 120;

const STOPWORDS: &[&str] = &[
    "the", "a", "an", "of", "for", "from", "each", "and", "or", "in", "on", "to", "with", "per",
    "by", "all", "its", "their", "this", "that", "are", "is", "was", "were", "as", "at", "be",
    "has", "have", "into",
];

const HUB_WORDS: &[&str] = &[
    "index", "list", "all", "archive", "data", "directory", "overview", "catalog", "portal",
    "browse", "main", "home", "section", "sections",
];

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[a-z0-9]+").expect("token regex"))
}

/// Collapses all whitespace runs to single spaces and trims the ends.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            pending = !out.is_empty();
        } else {
            if pending {
                out.push(' ');
                pending = false;
            }
            out.push(ch);
        }
    }
    out
}

/// Lowercase alphanumeric runs of a string.
pub fn tokens(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    token_re().find_iter(&lower).map(|m| m.as_str().to_string()).collect()
}

/// Tiny suffix stemmer: maps simple plurals onto their singular ("countries"
/// -> "country", "surveys" -> "survey"). Good enough to align schema words
/// with page anchors; not a linguistic tool.
pub fn stem(token: &str) -> String {
    if let Some(base) = token.strip_suffix("ies") {
        if base.len() >= 2 {
            return format!("{base}y");
        }
    }
    if token.ends_with("ss") || token.len() < 4 {
        return token.to_string();
    }
    token.strip_suffix('s').map(str::to_string).unwrap_or_else(|| token.to_string())
}

/// Stemmed content tokens (length >= 3, stopwords removed).
pub fn significant_tokens(text: &str) -> BTreeSet<String> {
    tokens(text)
        .into_iter()
        .filter(|t| t.len() >= 3 && !STOPWORDS.contains(&t.as_str()))
        .map(|t| stem(&t))
        .collect()
}

/// Stemmed overlap size between two token sets.
pub fn overlap(a: &BTreeSet<String>, b: &BTreeSet<String>) -> usize {
    a.intersection(b).count()
}

/// Whether an anchor looks like a category/hub link (plural nouns, archive
/// and index words).
pub fn looks_like_hub(anchor: &str) -> bool {
    tokens(anchor).iter().any(|t| {
        HUB_WORDS.contains(&t.as_str())
            || (t.len() >= 4 && t.ends_with('s') && !t.ends_with("ss") && !t.chars().any(|c| c.is_ascii_digit()))
    })
}

/// Tokens drawn from a URL's host and path.
pub fn url_tokens(url: &url::Url) -> BTreeSet<String> {
    let mut text = String::new();
    if let Some(host) = url.host_str() {
        text.push_str(host);
        text.push(' ');
    }
    text.push_str(url.path());
    significant_numeric_aware_tokens(&text)
}

/// Like [`significant_tokens`] but keeps short numeric runs (years, ids) that
/// the length filter would otherwise drop.
pub fn significant_numeric_aware_tokens(text: &str) -> BTreeSet<String> {
    tokens(text)
        .into_iter()
        .filter(|t| {
            (t.len() >= 3 && !STOPWORDS.contains(&t.as_str()))
                || t.chars().all(|c| c.is_ascii_digit())
        })
        .map(|t| stem(&t))
        .collect()
}

/// Expected lexical shape of a column's values, derived from its unit hint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueShape {
    /// `63.4%`
    Percent,
    /// `04:37` or `1:23:45.6`
    ClockTime,
    /// Any digit-bearing token: `137`, `42.7`, `1,204`.
    DigitToken,
}

impl ValueShape {
    pub fn for_column(column: &ColumnSpec) -> Self {
        let hint = column.unit_hint.as_deref().unwrap_or("").to_lowercase();
        if hint.contains('%') || hint.contains("percent") {
            ValueShape::Percent
        } else if hint.contains("mm:ss") || hint.contains("hh:mm") {
            ValueShape::ClockTime
        } else {
            ValueShape::DigitToken
        }
    }

    fn regex(self) -> &'static Regex {
        static PERCENT: OnceLock<Regex> = OnceLock::new();
        static CLOCK: OnceLock<Regex> = OnceLock::new();
        static DIGIT: OnceLock<Regex> = OnceLock::new();
        match self {
            ValueShape::Percent => {
                PERCENT.get_or_init(|| Regex::new(r"\d+(?:\.\d+)?%").expect("percent regex"))
            }
            ValueShape::ClockTime => CLOCK.get_or_init(|| {
                Regex::new(r"\d{1,3}:\d{2}(?::\d{2})?(?:\.\d+)?").expect("clock regex")
            }),
            ValueShape::DigitToken => {
                DIGIT.get_or_init(|| Regex::new(r"\d[\d.,:%]*").expect("digit regex"))
            }
        }
    }
}

/// A proximity-rule hit: the extracted value plus the window it came from.
#[derive(Debug, Clone)]
pub struct Finding {
    pub value: String,
    pub window: String,
}

/// The proximity rule: scans for `<row_label> ... <column token> ... <value>`
/// within a bounded window after each row-label occurrence and extracts the
/// nearest token of the column's expected shape.
pub fn find_value(text: &str, row_label: &str, column: &ColumnSpec) -> Option<Finding> {
    let haystack = collapse_whitespace(text).to_lowercase();
    let needle = collapse_whitespace(row_label).to_lowercase();
    if needle.is_empty() || haystack.is_empty() {
        return None;
    }

    let mut column_terms = significant_numeric_aware_tokens(&column.name);
    if let Some(hint) = &column.unit_hint {
        column_terms.extend(significant_numeric_aware_tokens(hint));
    }
    if column_terms.is_empty() {
        return None;
    }
    let shape = ValueShape::for_column(column);

    for (occ_start, _) in haystack.match_indices(&needle) {
        if !at_word_boundary(&haystack, occ_start, needle.len()) {
            continue;
        }
        let win_start = occ_start + needle.len();
        let mut win_end = (win_start + PROXIMITY_WINDOW).min(haystack.len());
        while !haystack.is_char_boundary(win_end) {
            win_end -= 1;
        }
        let window = &haystack[win_start..win_end];

        // Locate the first column-term mention inside the window.
        let mut col_hit_end = None;
        for m in token_re().find_iter(window) {
            if column_terms.contains(&stem(m.as_str())) {
                col_hit_end = Some(m.end());
                break;
            }
        }
        let Some(col_end) = col_hit_end else { continue };

        // Nearest shape token after the column mention; fall back to the
        // nearest one anywhere in the window.
        let candidates: Vec<(usize, &str)> = shape
            .regex()
            .find_iter(window)
            .map(|m| (m.start(), m.as_str()))
            .collect();
        let best = candidates
            .iter()
            .filter(|(start, _)| *start >= col_end)
            .min_by_key(|(start, _)| *start - col_end)
            .or_else(|| {
                candidates
                    .iter()
                    .min_by_key(|(start, _)| col_end.saturating_sub(*start))
            });
        if let Some((_, raw)) = best {
            let value = raw.trim_end_matches(['.', ',', ':', ';']).to_string();
            if !value.is_empty() {
                return Some(Finding {
                    value,
                    window: window.to_string(),
                });
            }
        }
    }
    None
}

/// Digit-bearing tokens that appear near a row label: the "concrete,
/// query-relevant facts" probe used by the dynamic-page classifier.
pub fn digit_facts_near_label(text: &str, row_label: &str) -> BTreeSet<String> {
    let haystack = collapse_whitespace(text).to_lowercase();
    let needle = collapse_whitespace(row_label).to_lowercase();
    let mut facts = BTreeSet::new();
    if needle.is_empty() {
        return facts;
    }
    for (occ_start, _) in haystack.match_indices(&needle) {
        if !at_word_boundary(&haystack, occ_start, needle.len()) {
            continue;
        }
        let win_start = occ_start + needle.len();
        let mut win_end = (win_start + PROXIMITY_WINDOW).min(haystack.len());
        while !haystack.is_char_boundary(win_end) {
            win_end -= 1;
        }
        for m in ValueShape::DigitToken.regex().find_iter(&haystack[win_start..win_end]) {
            let token = m.as_str().trim_end_matches(['.', ',', ':', ';']);
            if !token.is_empty() {
                facts.insert(token.to_string());
            }
        }
    }
    facts
}

fn at_word_boundary(text: &str, start: usize, len: usize) -> bool {
    let before_ok = start == 0
        || !text[..start]
            .chars()
            .next_back()
            .is_some_and(|c| c.is_alphanumeric());
    let after_ok = start + len >= text.len()
        || !text[start + len..]
            .chars()
            .next()
            .is_some_and(|c| c.is_alphanumeric());
    before_ok && after_ok
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(name: &str, hint: Option<&str>) -> ColumnSpec {
        ColumnSpec {
            name: name.into(),
            description: None,
            unit_hint: hint.map(str::to_string),
        }
    }

    #[test]
    fn proximity_rule_extracts_nearest_value() {
        let col = column("# surveys", None);
        let hit = find_value("Benin Surveys conducted: 5.", "Benin", &col).unwrap();
        assert_eq!(hit.value, "5");
    }

    #[test]
    fn proximity_rule_requires_column_mention() {
        let col = column("# surveys", None);
        assert!(find_value("Benin has a long history. 1960.", "Benin", &col).is_none());
    }

    #[test]
    fn proximity_rule_respects_word_boundaries() {
        let col = column("count", None);
        // "count" must not match inside "country".
        assert!(find_value("Benin country profile 42", "Benin", &col).is_none());
        assert!(find_value("Benin count 42", "Benin", &col).is_some());
    }

    #[test]
    fn percent_shape_skips_plain_numbers() {
        let col = column("coverage share", Some("percent"));
        let text = "aurora coverage share: 63.4% of 200 sites.";
        assert_eq!(find_value(text, "aurora", &col).unwrap().value, "63.4%");
    }

    #[test]
    fn clock_shape_finds_times() {
        let col = column("cycle time", Some("duration, MM:SS"));
        let text = "aurora cycle time: 04:37 recorded.";
        assert_eq!(find_value(text, "aurora", &col).unwrap().value, "04:37");
    }

    #[test]
    fn line_per_column_layout_resolves_each_column() {
        let text = "aurora station report.\n\
                    aurora observation count: 137.\n\
                    aurora quality score: 42.7.\n\
                    aurora coverage share: 63.4%.";
        assert_eq!(
            find_value(text, "aurora", &column("observation count", None)).unwrap().value,
            "137"
        );
        assert_eq!(
            find_value(text, "aurora", &column("quality score", None)).unwrap().value,
            "42.7"
        );
        assert_eq!(
            find_value(text, "aurora", &column("coverage share", Some("percent")))
                .unwrap()
                .value,
            "63.4%"
        );
    }

    #[test]
    fn stemming_aligns_plurals() {
        assert_eq!(stem("countries"), "country");
        assert_eq!(stem("surveys"), "survey");
        assert_eq!(stem("glass"), "glass");
        assert_eq!(stem("data"), "data");
    }

    #[test]
    fn hub_detection() {
        assert!(looks_like_hub("All countries"));
        assert!(looks_like_hub("results archive"));
        assert!(!looks_like_hub("Benin"));
        assert!(!looks_like_hub("2024"));
    }

    #[test]
    fn digit_facts_are_scoped_to_label_windows() {
        let facts = digit_facts_near_label("noise 99 aurora reading 42.7 done", "aurora");
        assert!(facts.contains("42.7"));
        assert!(!facts.contains("99"));
    }
}
