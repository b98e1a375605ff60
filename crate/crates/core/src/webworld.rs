//! Deterministic synthetic-website generator: page graphs, dynamic-reveal
//! rules, paged documents, a gold table, and a ready-to-run task spec. The
//! desk-scale stand-in for the open web.
//!
//! Authoring rules keep the heuristic provider provably correct: gold values
//! are digit-bearing tokens placed on one line per (row, column); distractor
//! prose draws from a vocabulary disjoint from row labels, column words, and
//! gold values, and never contains digits.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::fetcher::UiNode;
use crate::model::{
    ColumnSpec, DepthAnnotation, TableInstance, TableSchema, TaskSpec, FORMAT_VERSION,
};
use crate::oracle::text;

/// Synthetic-web archetypes, each exercising one engine capability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldKind {
    /// Hub -> category chain -> entity pages holding every column value.
    Grid,
    /// Per-row `/<year>/` URLs; the hub omits one target year, so that row is
    /// reachable only through URL synthesis.
    YearTemplate,
    /// Values hidden behind 1-2 click reveals, one control unregistered.
    Dynamic,
    /// Values inside multi-page documents at known interior pages.
    Document,
    /// A single correct path of configurable length with distractor links.
    Deep,
    /// A later page corrects an earlier cell with explicit marker text.
    Contradiction,
}

impl WorldKind {
    pub fn parse(name: &str) -> Option<WorldKind> {
        match name {
            "grid" => Some(WorldKind::Grid),
            "year_template" => Some(WorldKind::YearTemplate),
            "dynamic" => Some(WorldKind::Dynamic),
            "document" => Some(WorldKind::Document),
            "deep" => Some(WorldKind::Deep),
            "contradiction" => Some(WorldKind::Contradiction),
            _ => None,
        }
    }
}

/// Generation inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldParams {
    pub kind: WorldKind,
    pub rows: usize,
    pub cols: usize,
    pub depth: usize,
    pub branching: usize,
    pub seed: u64,
}

/// One synthetic page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldPage {
    pub url: String,
    pub static_text: String,
    pub rendered_text: String,
    /// (target url, anchor text)
    #[serde(default)]
    pub links: Vec<(String, String)>,
    #[serde(default)]
    pub ui_nodes: Vec<UiNode>,
    /// node_id -> text appended when the node is clicked.
    #[serde(default)]
    pub reveal_rules: BTreeMap<String, String>,
    /// Per-page texts for document URLs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document_pages: Option<Vec<String>>,
}

/// Kind-specific annotations that acceptance checks key on.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldMeta {
    /// Year whose hub link is deliberately absent (year_template).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_year: Option<String>,
    /// 0-based page index holding each row's values (document).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document_placements: Option<Vec<usize>>,
    /// Cell corrected by a later page (contradiction).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_cell: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correcting_url: Option<String>,
}

/// The complete world: pages, gold values, and the task spec that targets it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldManifest {
    pub format_version: u32,
    pub world_kind: WorldKind,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub depth: usize,
    pub branching: usize,
    pub pages: BTreeMap<String, WorldPage>,
    /// URLs that deliberately resolve to 404 (speculative-link targets).
    #[serde(default)]
    pub declared_missing: BTreeSet<String>,
    /// Gold values, row-major.
    pub gold: Vec<Vec<String>>,
    pub task: TaskSpec,
    #[serde(default)]
    pub meta: WorldMeta,
}

impl WorldManifest {
    pub fn gold_instance(&self) -> TableInstance {
        TableInstance::from_values(self.task.schema.clone(), &self.gold)
            .expect("gold grid matches schema")
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("manifest serializes");
        out.push('\n');
        out
    }

    pub fn from_json(raw: &str) -> Result<Self, WorldError> {
        serde_json::from_str(raw).map_err(|e| WorldError::Malformed(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world parameters: {0}")]
    InvalidParams(String),
    #[error("malformed world manifest: {0}")]
    Malformed(String),
}

// Entity labels: single lowercase words, disjoint from every other pool.
const STATION_NAMES: &[&str] = &[
    "aurora", "basalt", "cedar", "delta", "ember", "fjord", "garnet", "harbor", "iris", "juneau",
    "krypton", "lumen", "mesa", "nimbus", "onyx", "prairie", "quartz", "ridge", "sierra", "tundra",
    "umber", "vertex", "willow", "xenon", "yonder", "zephyr",
];

// Column names have pairwise-disjoint token sets, and unit hints never reuse
// another column's name tokens; both are required for unambiguous proximity
// matching on authored pages.
const COLUMN_POOL: &[(&str, Option<&str>)] = &[
    ("observation count", None),
    ("quality score", None),
    ("coverage share", Some("percent")),
    ("cycle time", Some("duration, MM:SS")),
    ("sample volume", None),
    ("drift margin", None),
    ("uptime fraction", Some("percent")),
    ("lap record", Some("duration, MM:SS")),
];

// Distractor prose vocabulary: alphabetic only, disjoint from labels, column
// words, hub words, and query words.
const DISTRACTOR_VOCAB: &[&str] = &[
    "umbra", "velvet", "sonder", "lacuna", "vellum", "murmur", "copse", "talus", "loam", "brume",
    "cairn", "fable", "grotto", "hollow", "inlet", "knoll", "marsh", "nook", "osprey", "pique",
    "reverie", "sylvan", "thicket", "wisp",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ValueShape {
    Int,
    Decimal,
    Percent,
    Clock,
}

fn column_shape(index: usize) -> ValueShape {
    match index % 4 {
        0 => ValueShape::Int,
        1 => ValueShape::Decimal,
        2 => ValueShape::Percent,
        _ => ValueShape::Clock,
    }
}

struct Author {
    rng: ChaCha8Rng,
    used_values: BTreeSet<String>,
}

impl Author {
    fn new(seed: u64) -> Self {
        Author {
            rng: ChaCha8Rng::seed_from_u64(seed),
            used_values: BTreeSet::new(),
        }
    }

    fn value(&mut self, shape: ValueShape) -> String {
        loop {
            let candidate = match shape {
                ValueShape::Int => format!("{}", self.rng.random_range(101..989)),
                ValueShape::Decimal => format!(
                    "{}.{}",
                    self.rng.random_range(10..99),
                    self.rng.random_range(1..10)
                ),
                ValueShape::Percent => format!(
                    "{}.{}%",
                    self.rng.random_range(10..95),
                    self.rng.random_range(1..10)
                ),
                ValueShape::Clock => format!(
                    "{:02}:{:02}",
                    self.rng.random_range(1..13),
                    self.rng.random_range(10..60)
                ),
            };
            if self.used_values.insert(candidate.clone()) {
                return candidate;
            }
        }
    }

    fn prose(&mut self, sentences: usize) -> String {
        let mut out = String::new();
        for _ in 0..sentences {
            let words = self.rng.random_range(6..11);
            for w in 0..words {
                let word = DISTRACTOR_VOCAB[self.rng.random_range(0..DISTRACTOR_VOCAB.len())];
                if w > 0 {
                    out.push(' ');
                }
                out.push_str(word);
            }
            out.push_str(". ");
        }
        out.trim_end().to_string()
    }

    fn anchor_words(&mut self) -> String {
        let a = DISTRACTOR_VOCAB[self.rng.random_range(0..DISTRACTOR_VOCAB.len())];
        let b = DISTRACTOR_VOCAB[self.rng.random_range(0..DISTRACTOR_VOCAB.len())];
        format!("{a} {b}")
    }
}

struct WorldBuilder {
    params: WorldParams,
    author: Author,
    pages: BTreeMap<String, WorldPage>,
    distractor_counter: usize,
}

impl WorldBuilder {
    fn new(params: WorldParams) -> Self {
        WorldBuilder {
            params,
            author: Author::new(params.seed),
            pages: BTreeMap::new(),
            distractor_counter: 0,
        }
    }

    fn add_page(&mut self, mut page: WorldPage) {
        page.static_text = page.static_text.trim().to_string();
        if page.rendered_text.is_empty() {
            page.rendered_text = page.static_text.clone();
        }
        self.pages.insert(page.url.clone(), page);
    }

    fn blank_page(url: &str, static_text: String) -> WorldPage {
        WorldPage {
            url: url.to_string(),
            static_text: static_text.clone(),
            rendered_text: static_text,
            links: Vec::new(),
            ui_nodes: Vec::new(),
            reveal_rules: BTreeMap::new(),
            document_pages: None,
        }
    }

    /// Leaf distractor pages linked from a hub; returns their (url, anchor)
    /// link entries.
    fn distractor_links(&mut self, prefix: &str, count: usize) -> Vec<(String, String)> {
        let mut links = Vec::new();
        for _ in 0..count {
            self.distractor_counter += 1;
            let url = format!("{prefix}/d/{:03}", self.distractor_counter);
            let text = self.author.prose(2);
            let anchor = self.author.anchor_words();
            self.add_page(Self::blank_page(&url, text));
            links.push((url, anchor));
        }
        links
    }

    fn value_lines(labels: &str, columns: &[ColumnSpec], values: &[String]) -> String {
        let mut lines = vec![format!("{labels} station profile.")];
        for (column, value) in columns.iter().zip(values) {
            lines.push(format!("{labels} {}: {value}.", column.name));
        }
        lines.join("\n")
    }
}

fn make_columns(cols: usize) -> Vec<ColumnSpec> {
    COLUMN_POOL
        .iter()
        .take(cols)
        .map(|(name, hint)| ColumnSpec {
            name: (*name).to_string(),
            description: None,
            unit_hint: hint.map(str::to_string),
        })
        .collect()
}

fn make_task(
    query: String,
    base_url: &str,
    pk_name: &str,
    labels: &[String],
    columns: Vec<ColumnSpec>,
    depth: usize,
) -> TaskSpec {
    let schema = TableSchema {
        primary_key_name: pk_name.to_string(),
        primary_key_values: labels.to_vec(),
        columns,
    };
    let mut annotations = Vec::new();
    for row in 0..schema.row_count() {
        for col in 0..schema.col_count() {
            annotations.push(DepthAnnotation { row, col, depth });
        }
    }
    TaskSpec {
        query,
        base_url: Url::parse(base_url).expect("world base url"),
        schema,
        search_depths: Some(annotations),
    }
}

fn gold_grid(author: &mut Author, rows: usize, cols: usize) -> Vec<Vec<String>> {
    (0..rows)
        .map(|_| (0..cols).map(|j| author.value(column_shape(j))).collect())
        .collect()
}

/// Generates a deterministic world. Identical parameters and seed produce a
/// byte-identical manifest.
pub fn generate_world(params: &WorldParams) -> Result<WorldManifest, WorldError> {
    validate_params(params)?;
    let mut builder = WorldBuilder::new(*params);
    let (pages_base, gold, task, meta) = match params.kind {
        WorldKind::Grid => build_chain_world(&mut builder, "grid")?,
        WorldKind::Deep => build_chain_world(&mut builder, "deep")?,
        WorldKind::YearTemplate => build_year_world(&mut builder)?,
        WorldKind::Dynamic => build_dynamic_world(&mut builder)?,
        WorldKind::Document => build_document_world(&mut builder)?,
        WorldKind::Contradiction => build_contradiction_world(&mut builder)?,
    };
    let _ = pages_base;
    Ok(WorldManifest {
        format_version: FORMAT_VERSION,
        world_kind: params.kind,
        seed: params.seed,
        rows: params.rows,
        cols: params.cols,
        depth: params.depth,
        branching: params.branching,
        pages: builder.pages,
        declared_missing: BTreeSet::new(),
        gold,
        task,
        meta,
    })
}

fn validate_params(params: &WorldParams) -> Result<(), WorldError> {
    if params.rows < 1 || params.cols < 1 {
        return Err(WorldError::InvalidParams("rows and cols must be >= 1".into()));
    }
    if params.depth < 1 {
        return Err(WorldError::InvalidParams("depth must be >= 1".into()));
    }
    if params.branching < 2 {
        return Err(WorldError::InvalidParams("branching must be >= 2".into()));
    }
    if params.cols > COLUMN_POOL.len() {
        return Err(WorldError::InvalidParams(format!(
            "cols must be <= {} (column pool size)",
            COLUMN_POOL.len()
        )));
    }
    match params.kind {
        WorldKind::YearTemplate => {
            if params.rows > 30 {
                return Err(WorldError::InvalidParams("year_template supports <= 30 rows".into()));
            }
        }
        WorldKind::Dynamic => {
            if params.depth > 2 {
                return Err(WorldError::InvalidParams(
                    "dynamic reveal depth must be 1 or 2".into(),
                ));
            }
            if params.rows > STATION_NAMES.len() {
                return Err(WorldError::InvalidParams("too many rows for the label pool".into()));
            }
        }
        WorldKind::Contradiction => {
            if params.rows < 2 {
                return Err(WorldError::InvalidParams(
                    "contradiction worlds need at least 2 rows".into(),
                ));
            }
            if params.rows > STATION_NAMES.len() {
                return Err(WorldError::InvalidParams("too many rows for the label pool".into()));
            }
        }
        _ => {
            if params.rows > STATION_NAMES.len() {
                return Err(WorldError::InvalidParams("too many rows for the label pool".into()));
            }
        }
    }
    Ok(())
}

fn station_labels(rows: usize) -> Vec<String> {
    STATION_NAMES.iter().take(rows).map(|s| s.to_string()).collect()
}

fn query_for(columns: &[ColumnSpec], pk_name: &str) -> String {
    let names: Vec<&str> = columns.iter().map(|c| c.name.as_str()).collect();
    format!(
        "Compile the {} statistics for each {pk_name} tracked on the records portal.",
        names.join(", ")
    )
}

type BuiltWorld = (String, Vec<Vec<String>>, TaskSpec, WorldMeta);

/// Grid and deep worlds share one shape: a correct chain of hubs ending in an
/// entity index, entity pages at the requested depth, and distractor leaves
/// on every chain page.
fn build_chain_world(builder: &mut WorldBuilder, prefix: &str) -> Result<BuiltWorld, WorldError> {
    let params = builder.params;
    let base = format!("mem://{prefix}/home");
    let labels = station_labels(params.rows);
    let columns = make_columns(params.cols);
    let gold = gold_grid(&mut builder.author, params.rows, params.cols);

    let entity_url = |label: &str| format!("mem://{prefix}/stations/{label}");

    // Chain layout: home (level 0), depth-2 intermediate hubs, entity index
    // at level depth-1, entity pages at level depth. depth == 1 links the
    // entities straight from home.
    let mut chain_urls = vec![base.clone()];
    for level in 1..params.depth.saturating_sub(1) {
        chain_urls.push(format!("mem://{prefix}/hub/{level:02}"));
    }
    if params.depth >= 2 {
        chain_urls.push(format!("mem://{prefix}/stations"));
    }

    for (level, url) in chain_urls.iter().enumerate() {
        let is_home = level == 0;
        let is_index = level == chain_urls.len() - 1;
        let mut links: Vec<(String, String)> = Vec::new();
        if is_index {
            for label in &labels {
                links.push((entity_url(label), format!("{label} station profile")));
            }
        }
        if let Some(next) = chain_urls.get(level + 1) {
            let anchor = if level + 2 == chain_urls.len() || chain_urls.len() == 2 {
                "station statistics directory".to_string()
            } else {
                format!("station statistics archive {}", level + 1)
            };
            links.push((next.clone(), anchor));
        }
        links.extend(builder.distractor_links(
            &format!("mem://{prefix}"),
            params.branching.saturating_sub(1),
        ));
        let text = if is_home {
            format!(
                "Welcome to the station records portal. {}",
                builder.author.prose(1)
            )
        } else if is_index {
            "Station directory. Choose a profile below.".to_string()
        } else {
            format!("Archive section. {}", builder.author.prose(1))
        };
        let mut page = WorldBuilder::blank_page(url, text);
        page.links = links;
        builder.add_page(page);
    }

    for (r, label) in labels.iter().enumerate() {
        let text = WorldBuilder::value_lines(label, &columns, &gold[r]);
        builder.add_page(WorldBuilder::blank_page(&entity_url(label), text));
    }

    let query = query_for(&columns, "station");
    let task = make_task(query, &base, "station", &labels, columns, params.depth);
    Ok((base, gold, task, WorldMeta::default()))
}

fn build_year_world(builder: &mut WorldBuilder) -> Result<BuiltWorld, WorldError> {
    let params = builder.params;
    let base = "mem://yt/home".to_string();
    let labels: Vec<String> = (0..params.rows).map(|i| format!("{}", 2021 + i)).collect();
    let target_year = labels.last().cloned().expect("at least one row");
    let columns = make_columns(params.cols);
    let gold = gold_grid(&mut builder.author, params.rows, params.cols);

    let year_url = |year: &str| format!("mem://yt/{year}/data");

    let mut links: Vec<(String, String)> = labels
        .iter()
        .filter(|year| **year != target_year)
        .map(|year| (year_url(year), format!("{year} results data")))
        .collect();
    links.extend(builder.distractor_links("mem://yt", params.branching.saturating_sub(1)));
    let mut home = WorldBuilder::blank_page(
        &base,
        format!("Yearly results archive. {}", builder.author.prose(1)),
    );
    home.links = links;
    builder.add_page(home);

    for (r, year) in labels.iter().enumerate() {
        let text = WorldBuilder::value_lines(year, &columns, &gold[r]);
        builder.add_page(WorldBuilder::blank_page(&year_url(year), text));
    }

    let names: Vec<&str> = columns.iter().map(|c| c.name.as_str()).collect();
    let query = format!(
        "Tabulate the {} results data for each year in the archive.",
        names.join(", ")
    );
    let task = make_task(query, &base, "year", &labels, columns, 1);
    let meta = WorldMeta {
        target_year: Some(target_year),
        ..WorldMeta::default()
    };
    Ok((base, gold, task, meta))
}

fn build_dynamic_world(builder: &mut WorldBuilder) -> Result<BuiltWorld, WorldError> {
    let params = builder.params;
    let base = "mem://dyn/home".to_string();
    let labels = station_labels(params.rows);
    let columns = make_columns(params.cols);
    let gold = gold_grid(&mut builder.author, params.rows, params.cols);

    let row_url = |label: &str| format!("mem://dyn/stations/{label}");

    let mut links: Vec<(String, String)> = labels
        .iter()
        .map(|label| (row_url(label), format!("{label} interactive statistics")))
        .collect();
    links.extend(builder.distractor_links("mem://dyn", params.branching.saturating_sub(1)));
    let mut home = WorldBuilder::blank_page(
        &base,
        format!("Interactive station panels. {}", builder.author.prose(1)),
    );
    home.links = links;
    builder.add_page(home);

    for (r, label) in labels.iter().enumerate() {
        let reveal_text = WorldBuilder::value_lines(label, &columns, &gold[r]);
        let mut ui_nodes = Vec::new();
        let mut reveal_rules = BTreeMap::new();
        let mut control_labels = vec!["Show all figures".to_string()];
        // The value-bearing control is always unregistered, forcing an
        // accessibility update before it can be clicked.
        if params.depth >= 2 {
            ui_nodes.push(UiNode {
                node_id: "expand-panel".into(),
                role: "button".into(),
                label: "Expand panel".into(),
                registered_clickable: true,
            });
            reveal_rules.insert(
                "expand-panel".to_string(),
                format!("Additional context loaded for {label}."),
            );
            control_labels.insert(0, "Expand panel".to_string());
        }
        ui_nodes.push(UiNode {
            node_id: "show-figures".into(),
            role: "button".into(),
            label: "Show all figures".into(),
            registered_clickable: false,
        });
        reveal_rules.insert("show-figures".to_string(), reveal_text);

        let static_text = format!(
            "{label} interactive statistics panel. Use the controls to display the figures. \
             Controls: {}.",
            control_labels.join(", ")
        );
        let rendered_text = format!("{static_text}\n[figures panel pending activation]");
        let page = WorldPage {
            url: row_url(label),
            static_text,
            rendered_text,
            links: Vec::new(),
            ui_nodes,
            reveal_rules,
            document_pages: None,
        };
        builder.add_page(page);
    }

    let query = query_for(&columns, "station");
    let task = make_task(query, &base, "station", &labels, columns, 1);
    Ok((base, gold, task, WorldMeta::default()))
}

fn build_document_world(builder: &mut WorldBuilder) -> Result<BuiltWorld, WorldError> {
    let params = builder.params;
    let base = "mem://docs/home".to_string();
    let labels = station_labels(params.rows);
    let columns = make_columns(params.cols);
    let gold = gold_grid(&mut builder.author, params.rows, params.cols);

    let doc_url = |label: &str| format!("mem://docs/files/{label}.pdf");
    let page_count = params.depth + 2;
    let mut placements = Vec::with_capacity(params.rows);

    let mut links: Vec<(String, String)> = labels
        .iter()
        .map(|label| (doc_url(label), format!("{label} archival report document")))
        .collect();
    links.extend(builder.distractor_links("mem://docs", params.branching.saturating_sub(1)));
    let mut home = WorldBuilder::blank_page(
        &base,
        format!("Station report archive. {}", builder.author.prose(1)),
    );
    home.links = links;
    builder.add_page(home);

    for (r, label) in labels.iter().enumerate() {
        // Interior placement: never the first page, so early termination is
        // observable.
        let placement = 1 + (r % (page_count - 1));
        placements.push(placement);
        let mut doc_pages = Vec::with_capacity(page_count);
        for index in 0..page_count {
            if index == placement {
                doc_pages.push(WorldBuilder::value_lines(label, &columns, &gold[r]));
            } else {
                doc_pages.push(builder.author.prose(2));
            }
        }
        let mut page = WorldBuilder::blank_page(&doc_url(label), String::new());
        page.document_pages = Some(doc_pages);
        builder.add_page(page);
    }

    let query = query_for(&columns, "station");
    let task = make_task(query, &base, "station", &labels, columns, 1);
    let meta = WorldMeta {
        document_placements: Some(placements),
        ..WorldMeta::default()
    };
    Ok((base, gold, task, meta))
}

fn build_contradiction_world(builder: &mut WorldBuilder) -> Result<BuiltWorld, WorldError> {
    let params = builder.params;
    let base = "mem://err/home".to_string();
    let labels = station_labels(params.rows);
    let columns = make_columns(params.cols);
    let mut gold = gold_grid(&mut builder.author, params.rows, params.cols);

    // Cell (0, 0) is published wrong on its own page and corrected on the
    // last row's page; gold holds the corrected value.
    let initial_value = builder.author.value(column_shape(0));
    let corrected_value = gold[0][0].clone();
    let row_url = |label: &str| format!("mem://err/stations/{label}");

    let mut links: Vec<(String, String)> = labels
        .iter()
        .map(|label| (row_url(label), format!("{label} station profile")))
        .collect();
    links.extend(builder.distractor_links("mem://err", params.branching.saturating_sub(1)));
    let mut home = WorldBuilder::blank_page(
        &base,
        format!("Station records portal. {}", builder.author.prose(1)),
    );
    home.links = links;
    builder.add_page(home);

    for (r, label) in labels.iter().enumerate() {
        let mut values = gold[r].clone();
        if r == 0 {
            values[0] = initial_value.clone();
        }
        let mut text = WorldBuilder::value_lines(label, &columns, &values);
        if r == params.rows - 1 {
            text.push_str(&format!(
                "\nCorrection notice: {} {}: {corrected_value} (corrected).",
                labels[0], columns[0].name
            ));
        }
        builder.add_page(WorldBuilder::blank_page(&row_url(label), text));
    }

    let correcting_url = row_url(&labels[params.rows - 1]);
    let query = query_for(&columns, "station");
    let task = make_task(query, &base, "station", &labels, columns, 1);
    let meta = WorldMeta {
        corrected_cell: Some((0, 0)),
        initial_value: Some(initial_value),
        correcting_url: Some(correcting_url),
        ..WorldMeta::default()
    };
    gold[0][0] = corrected_value;
    Ok((base, gold, task, meta))
}

/// Verifies manifest invariants: intra-world links resolve, reveal rules
/// reference declared nodes, dimensions agree, and every gold value is
/// reachable on some page under the proximity rule. Empty result = valid.
pub fn self_check(manifest: &WorldManifest) -> Vec<String> {
    let mut violations = Vec::new();
    let schema = &manifest.task.schema;

    if manifest.gold.len() != schema.row_count()
        || manifest.gold.iter().any(|row| row.len() != schema.col_count())
    {
        violations.push("gold grid dimensions do not match the task schema".to_string());
        return violations;
    }

    for (url, page) in &manifest.pages {
        if page.url != *url {
            violations.push(format!("page key `{url}` disagrees with its url field"));
        }
        for (target, _) in &page.links {
            if !manifest.pages.contains_key(target)
                && !manifest.declared_missing.contains(target)
            {
                violations.push(format!("dangling link `{target}` on page `{url}`"));
            }
        }
        for node_id in page.reveal_rules.keys() {
            if !page.ui_nodes.iter().any(|n| n.node_id == *node_id) {
                violations.push(format!(
                    "reveal rule for undeclared node `{node_id}` on page `{url}`"
                ));
            }
        }
    }

    for row in 0..schema.row_count() {
        for col in 0..schema.col_count() {
            let label = schema.row_label(row);
            let column = schema.column(col);
            let gold_value = &manifest.gold[row][col];
            let reachable = manifest.pages.values().any(|page| {
                let mut haystack = format!("{}\n{}", page.static_text, page.rendered_text);
                for delta in page.reveal_rules.values() {
                    haystack.push('\n');
                    haystack.push_str(delta);
                }
                if let Some(doc_pages) = &page.document_pages {
                    for doc_page in doc_pages {
                        haystack.push('\n');
                        haystack.push_str(doc_page);
                    }
                }
                text::find_value(&haystack, label, column)
                    .is_some_and(|hit| hit.value == *gold_value)
            });
            if !reachable {
                violations.push(format!(
                    "gold value for cell ({row}, {col}) `{gold_value}` is not extractable from any page"
                ));
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(kind: WorldKind) -> WorldParams {
        WorldParams {
            kind,
            rows: 3,
            cols: 2,
            depth: 3,
            branching: 3,
            seed: 11,
        }
    }

    #[test]
    fn all_kinds_generate_and_self_check() {
        for kind in [
            WorldKind::Grid,
            WorldKind::YearTemplate,
            WorldKind::Dynamic,
            WorldKind::Document,
            WorldKind::Deep,
            WorldKind::Contradiction,
        ] {
            let mut p = params(kind);
            if kind == WorldKind::Dynamic {
                p.depth = 2;
            }
            let manifest = generate_world(&p).unwrap_or_else(|e| panic!("{kind:?}: {e}"));
            let violations = self_check(&manifest);
            assert!(violations.is_empty(), "{kind:?}: {violations:?}");
            assert!(manifest.task.validate().is_ok());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_world(&params(WorldKind::Grid)).unwrap();
        let b = generate_world(&params(WorldKind::Grid)).unwrap();
        assert_eq!(a.to_json(), b.to_json());

        let c = generate_world(&WorldParams {
            seed: 12,
            ..params(WorldKind::Grid)
        })
        .unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn year_world_omits_target_year_link() {
        let manifest = generate_world(&params(WorldKind::YearTemplate)).unwrap();
        let target = manifest.meta.target_year.clone().unwrap();
        let home = manifest.pages.get("mem://yt/home").unwrap();
        let target_url = format!("mem://yt/{target}/data");
        assert!(home.links.iter().all(|(url, _)| *url != target_url));
        assert!(manifest.pages.contains_key(target_url.as_str()));
    }

    #[test]
    fn dynamic_world_hides_values_behind_unregistered_control() {
        let mut p = params(WorldKind::Dynamic);
        p.depth = 2;
        let manifest = generate_world(&p).unwrap();
        let schema = &manifest.task.schema;
        for (url, page) in &manifest.pages {
            if !url.contains("/stations/") {
                continue;
            }
            // No value is extractable from the static text alone.
            for row in 0..schema.row_count() {
                for col in 0..schema.col_count() {
                    assert!(
                        text::find_value(
                            &page.static_text,
                            schema.row_label(row),
                            schema.column(col)
                        )
                        .is_none(),
                        "static leak on {url}"
                    );
                }
            }
            let value_node = page
                .ui_nodes
                .iter()
                .find(|n| n.node_id == "show-figures")
                .expect("value control");
            assert!(!value_node.registered_clickable);
        }
    }

    #[test]
    fn document_world_places_values_on_interior_pages() {
        let manifest = generate_world(&params(WorldKind::Document)).unwrap();
        let placements = manifest.meta.document_placements.clone().unwrap();
        assert_eq!(placements.len(), 3);
        assert!(placements.iter().all(|p| *p >= 1));
    }

    #[test]
    fn contradiction_world_gold_holds_corrected_value() {
        let manifest = generate_world(&params(WorldKind::Contradiction)).unwrap();
        let initial = manifest.meta.initial_value.clone().unwrap();
        assert_ne!(manifest.gold[0][0], initial);
        let correcting = manifest.meta.correcting_url.clone().unwrap();
        let page = manifest.pages.get(correcting.as_str()).unwrap();
        assert!(page.static_text.contains("(corrected)"));
        assert!(page.static_text.contains(&manifest.gold[0][0]));
    }

    #[test]
    fn self_check_flags_injected_violations() {
        let mut manifest = generate_world(&params(WorldKind::Grid)).unwrap();
        let home = manifest.task.base_url.as_str().to_string();
        manifest
            .pages
            .get_mut(&home)
            .unwrap()
            .links
            .push(("mem://grid/nowhere".into(), "ghost".into()));
        let violations = self_check(&manifest);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("mem://grid/nowhere"));

        let mut manifest = generate_world(&params(WorldKind::Grid)).unwrap();
        manifest.gold[1][1] = "999999".into();
        let violations = self_check(&manifest);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("(1, 1)"));
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(generate_world(&WorldParams {
            rows: 0,
            ..params(WorldKind::Grid)
        })
        .is_err());
        assert!(generate_world(&WorldParams {
            branching: 1,
            ..params(WorldKind::Grid)
        })
        .is_err());
        assert!(generate_world(&WorldParams {
            depth: 3,
            ..params(WorldKind::Dynamic)
        })
        .is_err());
        assert!(generate_world(&WorldParams {
            rows: 1,
            ..params(WorldKind::Contradiction)
        })
        .is_err());
    }

    #[test]
    fn manifest_round_trips() {
        let manifest = generate_world(&params(WorldKind::Document)).unwrap();
        let parsed = WorldManifest::from_json(&manifest.to_json()).unwrap();
        assert_eq!(parsed, manifest);
    }
}
