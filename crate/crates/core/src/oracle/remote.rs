//! Remote chat-completion provider: every capability maps to one templated
//! request; replies use a single-line directive envelope that is trivially
//! parseable. Transport failures retry with exponential backoff; unparseable
//! replies degrade to the capability's safe default.

use std::path::PathBuf;
use std::time::Duration;

use serde_json::json;
use url::Url;

use super::{
    BuiltinJudge, DecisionProvider, DocumentJudgment, DocumentPageView, DynamicCommand,
    DynamicView, Judge, JudgeVerdict, LinkAssessment, LinkTier, PageOutcome, PageView,
    ProviderError, RevisionFlag, RootCandidate,
};
use crate::link_processor::LinkCandidate;
use crate::model::{CellAddress, ColumnSpec};
use crate::page_explorer::CellContext;

const MAX_RETRIES: u32 = 5;
const BACKOFF_BASE_MS: u64 = 200;

/// Endpoint and budget configuration for the remote provider.
#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Full chat-completions URL, e.g. `https://host/v1/chat/completions`.
    pub endpoint: Url,
    pub model: String,
    pub token: Option<String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout_seconds: f64,
    /// Page text truncation per prompt.
    pub max_page_chars: usize,
    /// Link-list truncation per prompt.
    pub max_links: usize,
    /// Overrides the built-in prompt templates when set.
    pub prompt_dir: Option<PathBuf>,
}

impl RemoteConfig {
    pub fn new(endpoint: Url, model: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint,
            model: model.into(),
            token: None,
            temperature: 0.0,
            max_output_tokens: 1024,
            timeout_seconds: 60.0,
            max_page_chars: 12_000,
            max_links: 150,
            prompt_dir: None,
        }
    }

    /// Reads `TD_LLM_ENDPOINT`, `TD_LLM_MODEL`, and `TD_LLM_TOKEN`.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var("TD_LLM_ENDPOINT").ok()?;
        let endpoint = Url::parse(&endpoint).ok()?;
        let model = std::env::var("TD_LLM_MODEL").unwrap_or_else(|_| "default".to_string());
        let mut config = RemoteConfig::new(endpoint, model);
        config.token = std::env::var("TD_LLM_TOKEN").ok();
        Some(config)
    }
}

pub fn remote_provider(config: RemoteConfig) -> RemoteProvider {
    RemoteProvider::new(config)
}

pub struct RemoteProvider {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

macro_rules! builtin_template {
    ($name:literal) => {
        ($name, include_str!(concat!("../../prompts/", $name, ".txt")))
    };
}

const TEMPLATES: &[(&str, &str)] = &[
    builtin_template!("system"),
    builtin_template!("page_decision"),
    builtin_template!("dynamic_classification"),
    builtin_template!("dynamic_action"),
    builtin_template!("document_page"),
    builtin_template!("link_scoring"),
    builtin_template!("root_ranking"),
    builtin_template!("neighbor_probe"),
    builtin_template!("contradiction"),
    builtin_template!("judge"),
];

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .user_agent(concat!("tabledive/", env!("CARGO_PKG_VERSION")))
            .build()
            .expect("http client");
        RemoteProvider { config, client }
    }

    fn template(&self, name: &str) -> String {
        if let Some(dir) = &self.config.prompt_dir {
            if let Ok(text) = std::fs::read_to_string(dir.join(format!("{name}.txt"))) {
                return text;
            }
        }
        TEMPLATES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| (*t).to_string())
            .unwrap_or_default()
    }

    fn context_block(&self, ctx: &CellContext) -> String {
        let mut filled = String::new();
        for entry in ctx.filled_so_far.iter().take(200) {
            filled.push_str(&format!(
                "- ({}, {}) {} / {} = {}\n",
                entry.address.row, entry.address.col, entry.row_label, entry.column_name,
                entry.value
            ));
        }
        if filled.is_empty() {
            filled.push_str("(none yet)\n");
        }
        format!(
            "Query: {}\nTarget row: {}\nTarget column: {}{}\nAlready filled cells:\n{}",
            ctx.query,
            ctx.row_label,
            ctx.column.name,
            ctx.column
                .unit_hint
                .as_deref()
                .map(|h| format!(" (expected format: {h})"))
                .unwrap_or_default(),
            filled,
        )
    }

    fn truncate_text(&self, text: &str) -> String {
        if text.len() <= self.config.max_page_chars {
            return text.to_string();
        }
        let mut end = self.config.max_page_chars;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}\u{2026}", &text[..end])
    }

    fn links_block(&self, links: &[crate::fetcher::Link]) -> String {
        let mut out = String::new();
        for (i, link) in links.iter().take(self.config.max_links).enumerate() {
            out.push_str(&format!("{i}: {} ({})\n", link.url, link.anchor));
        }
        out
    }

    fn fill(&self, name: &str, pairs: &[(&str, &str)]) -> String {
        let mut text = self.template(name);
        for (key, value) in pairs {
            text = text.replace(&format!("{{{key}}}"), value);
        }
        text
    }

    /// One chat call with retry-on-429/5xx and exponential backoff.
    fn call(&self, prompt: &str) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": self.template("system")},
                {"role": "user", "content": prompt},
            ],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
        });
        let mut last_error = ProviderError::Transport("no attempt made".into());
        for attempt in 0..MAX_RETRIES {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(BACKOFF_BASE_MS << (attempt - 1)));
            }
            let mut request = self
                .client
                .post(self.config.endpoint.clone())
                .timeout(Duration::from_secs_f64(self.config.timeout_seconds))
                .json(&body);
            if let Some(token) = &self.config.token {
                request = request.bearer_auth(token);
            }
            let response = match request.send() {
                Ok(response) => response,
                Err(e) => {
                    last_error = ProviderError::Transport(e.to_string());
                    continue;
                }
            };
            let status = response.status().as_u16();
            match status {
                200..=299 => {
                    let value: serde_json::Value = response
                        .json()
                        .map_err(|e| ProviderError::Parse(e.to_string()))?;
                    let content = value["choices"][0]["message"]["content"]
                        .as_str()
                        .or_else(|| value["choices"][0]["text"].as_str())
                        .ok_or_else(|| {
                            ProviderError::Parse("response carries no message content".into())
                        })?;
                    return Ok(content.to_string());
                }
                401 | 403 => return Err(ProviderError::Auth(format!("status {status}"))),
                429 => last_error = ProviderError::RateLimited,
                500..=599 => last_error = ProviderError::Transport(format!("status {status}")),
                other => return Err(ProviderError::Transport(format!("status {other}"))),
            }
        }
        Err(last_error)
    }
}

// ---------------------------------------------------------------------------
// Directive parsing
// ---------------------------------------------------------------------------

fn directive_line<'a>(reply: &'a str, keys: &[&str]) -> Option<(&'a str, &'a str)> {
    for line in reply.lines() {
        let line = line.trim();
        for key in keys {
            if let Some(rest) = line.strip_prefix(key) {
                return Some((key, rest.trim_start_matches(':').trim()));
            }
        }
    }
    None
}

pub(crate) fn parse_page_outcome(reply: &str) -> PageOutcome {
    match directive_line(reply, &["ANSWER", "PROCEED", "STOP"]) {
        Some(("ANSWER", value)) if !value.is_empty() => PageOutcome::Answer(value.to_string()),
        Some(("PROCEED", _)) => PageOutcome::Proceed,
        // Malformed replies degrade to the fail-safe outcome.
        _ => PageOutcome::Stop,
    }
}

pub(crate) fn parse_classification(reply: &str) -> bool {
    matches!(directive_line(reply, &["DYNAMIC", "STATIC"]), Some(("DYNAMIC", _)))
}

pub(crate) fn parse_dynamic_command(reply: &str) -> DynamicCommand {
    match directive_line(reply, &["REGISTER", "CLICK", "ANSWER", "EXTRACT_LINKS", "STOP"]) {
        Some(("REGISTER", rest)) => DynamicCommand::UpdateAccessibility(
            rest.split(';').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        ),
        Some(("CLICK", rest)) => DynamicCommand::Click(
            rest.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        ),
        Some(("ANSWER", value)) if !value.is_empty() => DynamicCommand::Answer(value.to_string()),
        Some(("EXTRACT_LINKS", _)) => DynamicCommand::ExtractLinks,
        _ => DynamicCommand::Stop,
    }
}

pub(crate) fn parse_document_judgment(reply: &str) -> DocumentJudgment {
    match directive_line(reply, &["FOUND", "CONTINUE", "ABANDON"]) {
        Some(("FOUND", value)) if !value.is_empty() => DocumentJudgment::Found(value.to_string()),
        Some(("CONTINUE", _)) => DocumentJudgment::Continue,
        _ => DocumentJudgment::Abandon,
    }
}

/// Parses `SCORES: 0=3.5,1=0,...`; unreported indices default to 0.
pub(crate) fn parse_scores(reply: &str, count: usize) -> Vec<f64> {
    let mut scores = vec![0.0; count];
    if let Some((_, rest)) = directive_line(reply, &["SCORES"]) {
        for pair in rest.split(',') {
            let mut parts = pair.splitn(2, '=');
            let (Some(index), Some(score)) = (parts.next(), parts.next()) else {
                continue;
            };
            if let (Ok(index), Ok(score)) = (index.trim().parse::<usize>(), score.trim().parse()) {
                if index < count {
                    scores[index] = score;
                }
            }
        }
    }
    scores
}

/// Parses `REVISE: row,col,value,url` lines; the value may itself contain
/// commas, so the URL is taken from the right.
pub(crate) fn parse_revisions(reply: &str) -> Vec<RevisionFlag> {
    let mut flags = Vec::new();
    for line in reply.lines() {
        let line = line.trim();
        let Some(rest) = line.strip_prefix("REVISE") else { continue };
        let rest = rest.trim_start_matches(':').trim();
        let Some((head, url)) = rest.rsplit_once(',') else { continue };
        let mut parts = head.splitn(3, ',');
        let (Some(row), Some(col), Some(value)) = (parts.next(), parts.next(), parts.next())
        else {
            continue;
        };
        let (Ok(row), Ok(col)) = (row.trim().parse(), col.trim().parse()) else {
            continue;
        };
        let Ok(url) = Url::parse(url.trim()) else { continue };
        let value = value.trim();
        if value.is_empty() {
            continue;
        }
        flags.push(RevisionFlag {
            address: CellAddress::new(row, col),
            new_value: value.to_string(),
            evidence_url: url,
        });
    }
    flags
}

pub(crate) fn parse_judge(reply: &str) -> Option<bool> {
    match directive_line(reply, &["EQUIVALENT", "DIFFERENT"]) {
        Some(("EQUIVALENT", _)) => Some(true),
        Some(("DIFFERENT", _)) => Some(false),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// DecisionProvider over the wire
// ---------------------------------------------------------------------------

impl DecisionProvider for RemoteProvider {
    fn decide_page(
        &self,
        view: PageView<'_>,
        ctx: &CellContext,
    ) -> Result<PageOutcome, ProviderError> {
        let prompt = self.fill("page_decision", &[
            ("context", &self.context_block(ctx)),
            ("url", view.url.as_str()),
            ("page_text", &self.truncate_text(view.text)),
            ("links", &self.links_block(view.links)),
        ]);
        Ok(parse_page_outcome(&self.call(&prompt)?))
    }

    fn classify_dynamic(
        &self,
        snapshot: &crate::fetcher::PageSnapshot,
        ctx: &CellContext,
    ) -> Result<bool, ProviderError> {
        let rendered = snapshot.rendered_text.as_deref().unwrap_or_default();
        let nodes = snapshot
            .accessibility_nodes
            .as_deref()
            .unwrap_or_default()
            .iter()
            .map(|n| format!("{} [{}] {}\n", n.node_id, n.role, n.label))
            .collect::<String>();
        let prompt = self.fill("dynamic_classification", &[
            ("context", &self.context_block(ctx)),
            ("url", snapshot.url.as_str()),
            ("static_text", &self.truncate_text(&snapshot.static_text)),
            ("rendered_text", &self.truncate_text(rendered)),
            ("nodes", &nodes),
        ]);
        Ok(parse_classification(&self.call(&prompt)?))
    }

    fn next_dynamic_action(
        &self,
        view: DynamicView<'_>,
        ctx: &CellContext,
    ) -> Result<DynamicCommand, ProviderError> {
        let nodes = view
            .nodes
            .iter()
            .map(|n| {
                format!(
                    "{} [{}] {} registered={} clicked={}\n",
                    n.node_id, n.role, n.label, n.registered, n.clicked
                )
            })
            .collect::<String>();
        let prompt = self.fill("dynamic_action", &[
            ("context", &self.context_block(ctx)),
            ("url", view.url.as_str()),
            ("page_text", &self.truncate_text(view.combined_text)),
            ("nodes", &nodes),
            ("turn", &view.turn.to_string()),
        ]);
        Ok(parse_dynamic_command(&self.call(&prompt)?))
    }

    fn judge_document_page(
        &self,
        page: DocumentPageView<'_>,
        ctx: &CellContext,
    ) -> Result<DocumentJudgment, ProviderError> {
        let prompt = self.fill("document_page", &[
            ("context", &self.context_block(ctx)),
            ("url", page.url.as_str()),
            ("page_index", &page.page_index.to_string()),
            ("page_count", &page.page_count.to_string()),
            ("page_text", &self.truncate_text(page.text)),
        ]);
        Ok(parse_document_judgment(&self.call(&prompt)?))
    }

    fn assess_links(
        &self,
        candidates: &[LinkCandidate],
        ctx: &CellContext,
    ) -> Result<Vec<LinkAssessment>, ProviderError> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let listing = candidates
            .iter()
            .take(self.config.max_links)
            .enumerate()
            .map(|(i, c)| {
                format!(
                    "{i}: {} ({}) [{}]\n",
                    c.url,
                    c.anchor,
                    match c.origin {
                        crate::link_processor::LinkOrigin::OnPage => "on page",
                        crate::link_processor::LinkOrigin::Augmented => "synthesized",
                    }
                )
            })
            .collect::<String>();
        let prompt = self.fill("link_scoring", &[
            ("context", &self.context_block(ctx)),
            ("candidates", &listing),
        ]);
        let scores = parse_scores(&self.call(&prompt)?, candidates.len());
        Ok(scores
            .into_iter()
            .map(|score| LinkAssessment {
                score,
                tier: LinkTier::Hub,
            })
            .collect())
    }

    fn rank_roots(
        &self,
        candidates: &[RootCandidate],
        ctx: &CellContext,
    ) -> Result<Vec<f64>, ProviderError> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let listing = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                format!(
                    "{i}: {}{}\n",
                    c.url,
                    if c.synthesized { " [synthesized]" } else { "" }
                )
            })
            .collect::<String>();
        let prompt = self.fill("root_ranking", &[
            ("context", &self.context_block(ctx)),
            ("candidates", &listing),
        ]);
        Ok(parse_scores(&self.call(&prompt)?, candidates.len()))
    }

    fn probe_neighbor(
        &self,
        view: PageView<'_>,
        ctx: &CellContext,
    ) -> Result<Option<String>, ProviderError> {
        let prompt = self.fill("neighbor_probe", &[
            ("context", &self.context_block(ctx)),
            ("url", view.url.as_str()),
            ("page_text", &self.truncate_text(view.text)),
        ]);
        match parse_page_outcome(&self.call(&prompt)?) {
            PageOutcome::Answer(value) => Ok(Some(value)),
            _ => Ok(None),
        }
    }

    fn flag_contradictions(
        &self,
        view: PageView<'_>,
        ctx: &CellContext,
    ) -> Result<Vec<RevisionFlag>, ProviderError> {
        if ctx.filled_so_far.is_empty() {
            return Ok(Vec::new());
        }
        let prompt = self.fill("contradiction", &[
            ("context", &self.context_block(ctx)),
            ("url", view.url.as_str()),
            ("page_text", &self.truncate_text(view.text)),
        ]);
        Ok(parse_revisions(&self.call(&prompt)?))
    }
}

/// Remote equivalence judge; failures fall back to the built-in judge with
/// the verdict marked degraded.
pub struct RemoteJudge {
    provider: RemoteProvider,
}

impl RemoteJudge {
    pub fn new(config: RemoteConfig) -> Self {
        RemoteJudge {
            provider: RemoteProvider::new(config),
        }
    }
}

impl Judge for RemoteJudge {
    fn equivalent(&self, predicted: &str, gold: &str, column: &ColumnSpec) -> JudgeVerdict {
        let prompt = self.provider.fill("judge", &[
            ("column", &column.name),
            (
                "unit_hint",
                column.unit_hint.as_deref().unwrap_or("(unspecified)"),
            ),
            ("predicted", predicted),
            ("gold", gold),
        ]);
        match self.provider.call(&prompt).map(|reply| parse_judge(&reply)) {
            Ok(Some(equivalent)) => JudgeVerdict {
                equivalent,
                rationale: "remote judge verdict".into(),
                degraded: false,
            },
            _ => {
                let mut verdict = BuiltinJudge.equivalent(predicted, gold, column);
                verdict.degraded = true;
                verdict
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    #[test]
    fn directive_parsers() {
        assert_eq!(parse_page_outcome("ANSWER: 5"), PageOutcome::Answer("5".into()));
        assert_eq!(parse_page_outcome("thinking...\nPROCEED"), PageOutcome::Proceed);
        assert_eq!(parse_page_outcome("no directive at all"), PageOutcome::Stop);

        assert!(parse_classification("DYNAMIC"));
        assert!(!parse_classification("STATIC"));
        assert!(!parse_classification("gibberish"));

        assert_eq!(
            parse_dynamic_command("CLICK: n1, n2"),
            DynamicCommand::Click(vec!["n1".into(), "n2".into()])
        );
        assert_eq!(
            parse_dynamic_command("REGISTER: .tab; Show more"),
            DynamicCommand::UpdateAccessibility(vec![".tab".into(), "Show more".into()])
        );
        assert_eq!(parse_dynamic_command("???"), DynamicCommand::Stop);

        assert_eq!(parse_scores("SCORES: 0=3.5, 2=1", 3), vec![3.5, 0.0, 1.0]);
        assert_eq!(parse_scores("junk", 2), vec![0.0, 0.0]);

        let flags = parse_revisions("REVISE: 0,1,13,mem://t/fix\nREVISE: bad line");
        assert_eq!(flags.len(), 1);
        assert_eq!(flags[0].address, CellAddress::new(0, 1));
        assert_eq!(flags[0].new_value, "13");

        assert_eq!(parse_judge("EQUIVALENT"), Some(true));
        assert_eq!(parse_judge("DIFFERENT, because units"), Some(false));
        assert_eq!(parse_judge("maybe"), None);
    }

    fn chat_response(content: &str) -> String {
        let body = json!({
            "choices": [{"message": {"role": "assistant", "content": content}}]
        })
        .to_string();
        format!(
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            body.len(),
            body
        )
    }

    /// 429 then 200: the call succeeds after one retry.
    #[test]
    fn retries_after_rate_limit() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        let handle = std::thread::spawn(move || {
            for attempt in 0..2 {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = vec![0u8; 65536];
                let _ = stream.read(&mut buf);
                let response = if attempt == 0 {
                    "HTTP/1.1 429 Too Many Requests\r\nContent-Length: 0\r\nConnection: close\r\n\r\n"
                        .to_string()
                } else {
                    chat_response("ANSWER: 7")
                };
                stream.write_all(response.as_bytes()).unwrap();
            }
        });

        let endpoint = Url::parse(&format!("http://127.0.0.1:{port}/v1/chat/completions")).unwrap();
        let provider = remote_provider(RemoteConfig::new(endpoint, "test-model"));
        let reply = provider.call("probe").unwrap();
        handle.join().unwrap();
        assert_eq!(parse_page_outcome(&reply), PageOutcome::Answer("7".into()));
    }

    #[test]
    fn auth_errors_do_not_retry() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let _ = stream.read(&mut buf);
            stream
                .write_all(
                    b"HTTP/1.1 401 Unauthorized\r\nContent-Length: 0\r\nConnection: close\r\n\r\n",
                )
                .unwrap();
        });
        let endpoint = Url::parse(&format!("http://127.0.0.1:{port}/v1/chat/completions")).unwrap();
        let provider = remote_provider(RemoteConfig::new(endpoint, "test-model"));
        match provider.call("probe") {
            Err(ProviderError::Auth(_)) => {}
            other => panic!("expected auth error, got {other:?}"),
        }
        handle.join().unwrap();
    }
}
