//! Drives one task end to end and writes the run artifacts: the result
//! table, per-cell trace files, the task cache, and a machine-readable run
//! summary. All artifacts are deterministic for deterministic providers and
//! backends.

use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::explorer::{
    fill_table, AppliedRevision, CellReport, DecisionKind, ExpansionStats, ExploreOptions,
    FillOutcome, Resolution,
};
use crate::fetcher::{FetchBackend, FetchPolicy};
use crate::model::{serialize_instance, TaskSpec};
use crate::oracle::DecisionProvider;
use crate::page_explorer::ExploreLimits;

/// Operator-facing run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Exploration width K.
    pub k: usize,
    pub policy: FetchPolicy,
    pub cache_enabled: bool,
    pub augment_enabled: bool,
    pub dynamic_enabled: bool,
    pub max_turns: usize,
    pub pdf_page_cap: usize,
    /// Provider seed; echoed into the summary for reproducibility.
    pub seed: u64,
    /// When set, artifacts are written under this directory.
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: 10,
            policy: FetchPolicy::default(),
            cache_enabled: true,
            augment_enabled: true,
            dynamic_enabled: true,
            max_turns: 12,
            pdf_page_cap: 20,
            seed: 0,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn explore_options(&self) -> ExploreOptions {
        ExploreOptions {
            k: self.k.max(1),
            policy: self.policy.clone(),
            limits: ExploreLimits {
                max_turns: self.max_turns,
                pdf_page_cap: self.pdf_page_cap,
                dynamic_enabled: self.dynamic_enabled,
            },
            augment_enabled: self.augment_enabled,
            cache_enabled: self.cache_enabled,
        }
    }
}

/// A finished run plus where its artifacts landed.
pub struct RunReport {
    pub outcome: FillOutcome,
    pub result_path: Option<PathBuf>,
    pub cache_path: Option<PathBuf>,
    pub summary_path: Option<PathBuf>,
}

/// Fills the table and, when an output directory is configured, writes
/// `result.table.json`, `trace/r<i>_c<j>.jsonl`, `cache.task.json`, and
/// `run.summary.json`.
pub fn run_task(
    spec: &TaskSpec,
    backend: &dyn FetchBackend,
    provider: &dyn DecisionProvider,
    config: &RunConfig,
) -> io::Result<RunReport> {
    let outcome = fill_table(spec, &config.explore_options(), provider, backend);

    let mut report = RunReport {
        outcome,
        result_path: None,
        cache_path: None,
        summary_path: None,
    };
    let Some(out_dir) = &config.out_dir else {
        return Ok(report);
    };

    std::fs::create_dir_all(out_dir)?;
    let result_path = out_dir.join("result.table.json");
    std::fs::write(&result_path, serialize_instance(&report.outcome.instance))?;
    report.result_path = Some(result_path);

    let trace_dir = out_dir.join("trace");
    std::fs::create_dir_all(&trace_dir)?;
    for cell in &report.outcome.cells {
        let path = trace_dir.join(format!("r{}_c{}.jsonl", cell.address.row, cell.address.col));
        std::fs::write(&path, trace_jsonl(cell))?;
    }

    if let Some(cache) = &report.outcome.cache {
        let cache_path = out_dir.join("cache.task.json");
        cache.persist(&cache_path)?;
        report.cache_path = Some(cache_path);
    }

    let summary_path = out_dir.join("run.summary.json");
    std::fs::write(&summary_path, summary_json(spec, config, &report.outcome))?;
    report.summary_path = Some(summary_path);
    Ok(report)
}

fn decision_str(kind: DecisionKind) -> &'static str {
    match kind {
        DecisionKind::Answer => "answer",
        DecisionKind::Proceed => "proceed",
        DecisionKind::Stop => "stop",
        DecisionKind::FetchFailed => "fetch_failed",
    }
}

fn resolution_str(resolution: Resolution) -> &'static str {
    match resolution {
        Resolution::ProbeLeft => "probe_left",
        Resolution::ProbeUp => "probe_up",
        Resolution::Explore => "explore",
        Resolution::Missing => "missing",
    }
}

/// One JSONL record per visited page (with its action-log turns), a prune
/// record per frontier expansion, and a closing summary record.
pub fn trace_jsonl(cell: &CellReport) -> String {
    #[derive(Serialize)]
    struct Meta<'a> {
        kind: &'a str,
        row: usize,
        col: usize,
        roots: Vec<&'a str>,
    }

    let mut lines: Vec<String> = Vec::new();
    let trace = &cell.trace;
    lines.push(
        serde_json::to_string(&Meta {
            kind: "meta",
            row: cell.address.row,
            col: cell.address.col,
            roots: trace.roots.iter().map(|u| u.as_str()).collect(),
        })
        .expect("meta record"),
    );

    let expansions_by_visit: std::collections::BTreeMap<usize, &ExpansionStats> = trace
        .expansions
        .iter()
        .map(|e| (e.after_visit, e))
        .collect();

    for (index, visit) in trace.visited.iter().enumerate() {
        let mut record = json!({
            "kind": "page",
            "url": visit.url.as_str(),
            "level": visit.level,
            "decision": decision_str(visit.decision),
            "origin": visit.origin,
        });
        if let Some(parent) = visit.parent {
            record["parent_url"] = json!(trace.visited[parent].url.as_str());
        }
        if let Some(edit) = &visit.edit_descriptor {
            record["edit"] = json!(edit);
        }
        if visit.doc_judgments > 0 {
            record["doc_page_judgments"] = json!(visit.doc_judgments);
        }
        lines.push(record.to_string());

        for action in &visit.actions {
            let mut turn = json!({
                "kind": "turn",
                "turn": action.turn,
                "action": action.action,
                "delta_chars": action.delta_chars,
            });
            if !action.node_ids.is_empty() {
                turn["node_ids"] = json!(action.node_ids);
            }
            lines.push(turn.to_string());
        }

        if let Some(expansion) = expansions_by_visit.get(&index) {
            lines.push(
                json!({
                    "kind": "prune",
                    "level": expansion.level,
                    "in_count": expansion.in_count,
                    "out_count": expansion.kept_count,
                    "new_url_count": expansion.new_url_count,
                })
                .to_string(),
            );
        }
    }

    lines.push(
        json!({
            "kind": "summary",
            "result": if cell.resolution == Resolution::Missing { "missing" } else { "filled" },
            "resolved_by": resolution_str(cell.resolution),
            "level": cell.level,
            "total_fetches": trace.total_fetches,
            "doc_page_judgments": trace.doc_judgments_total,
        })
        .to_string(),
    );

    let mut out = lines.join("\n");
    out.push('\n');
    out
}

fn summary_json(spec: &TaskSpec, config: &RunConfig, outcome: &FillOutcome) -> String {
    let cells: Vec<serde_json::Value> = outcome
        .cells
        .iter()
        .map(|cell| {
            json!({
                "row": cell.address.row,
                "col": cell.address.col,
                "resolved_by": resolution_str(cell.resolution),
                "level": cell.level,
                "total_fetches": cell.trace.total_fetches,
                "doc_page_judgments": cell.trace.doc_judgments_total,
            })
        })
        .collect();
    let revisions: Vec<&AppliedRevision> = outcome.revisions.iter().collect();
    let doc = json!({
        "format_version": crate::model::FORMAT_VERSION,
        "base_url": spec.base_url.as_str(),
        "config": {
            "k": config.k,
            "cache": config.cache_enabled,
            "augment": config.augment_enabled,
            "dynamic": config.dynamic_enabled,
            "seed": config.seed,
        },
        "totals": {
            "cells": outcome.cells.len(),
            "filled": outcome.instance.filled_count(),
            "backend_fetches": outcome.backend_fetches,
            "revisions_applied": revisions.len(),
        },
        "cells": cells,
        "revisions": revisions,
    });
    let mut out = serde_json::to_string_pretty(&doc).expect("summary serializes");
    out.push('\n');
    out
}

/// Convenience for tests and the bench command: run a generated world
/// in-memory and return the outcome with its manifest.
pub fn run_world(
    manifest: crate::webworld::WorldManifest,
    provider: &dyn DecisionProvider,
    config: &RunConfig,
) -> io::Result<(RunReport, crate::webworld::WorldManifest)> {
    let backend = crate::fetcher::WorldBackend::new(manifest);
    let spec = backend.manifest().task.clone();
    let report = run_task(&spec, &backend, provider, config)?;
    Ok((report, backend.manifest().clone()))
}

/// Reads a directory tree produced by two runs and asserts byte equality;
/// returns the first differing relative path, if any.
pub fn first_artifact_difference(a: &Path, b: &Path) -> io::Result<Option<PathBuf>> {
    fn collect(root: &Path, prefix: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
        for entry in std::fs::read_dir(root.join(prefix))? {
            let entry = entry?;
            let rel = prefix.join(entry.file_name());
            if entry.file_type()?.is_dir() {
                collect(root, &rel, out)?;
            } else {
                out.push(rel);
            }
        }
        Ok(())
    }
    let mut files_a = Vec::new();
    let mut files_b = Vec::new();
    collect(a, Path::new(""), &mut files_a)?;
    collect(b, Path::new(""), &mut files_b)?;
    files_a.sort();
    files_b.sort();
    if files_a != files_b {
        return Ok(Some(PathBuf::from("<directory listings differ>")));
    }
    for rel in files_a {
        if std::fs::read(a.join(&rel))? != std::fs::read(b.join(&rel))? {
            return Ok(Some(rel));
        }
    }
    Ok(None)
}
