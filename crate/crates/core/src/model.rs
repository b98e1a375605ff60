//! Task input contract, table schema, cell addressing, and the materialized
//! output instance with per-cell provenance.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

/// Version tag carried by every task-spec and table-instance document.
pub const FORMAT_VERSION: u32 = 1;

/// One attribute column of the target table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Expected unit/format of the value, e.g. "seconds, MM:SS" or "percent".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_hint: Option<String>,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            description: None,
            unit_hint: None,
        }
    }

    pub fn with_unit_hint(mut self, hint: impl Into<String>) -> Self {
        self.unit_hint = Some(hint.into());
        self
    }
}

/// The target relational schema: a named primary key, its row values, and the
/// attribute columns to populate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub primary_key_name: String,
    pub primary_key_values: Vec<String>,
    pub columns: Vec<ColumnSpec>,
}

impl TableSchema {
    pub fn row_count(&self) -> usize {
        self.primary_key_values.len()
    }

    pub fn col_count(&self) -> usize {
        self.columns.len()
    }

    pub fn row_label(&self, row: usize) -> &str {
        &self.primary_key_values[row]
    }

    pub fn column(&self, col: usize) -> &ColumnSpec {
        &self.columns[col]
    }

    /// Checks the structural invariants: non-empty, pairwise-distinct rows
    /// (after whitespace trim) and non-empty, distinctly named columns.
    pub fn validate(&self) -> Result<(), SpecError> {
        if self.primary_key_name.trim().is_empty() {
            return Err(SpecError::invalid("schema.primary_key.name", "must be non-empty"));
        }
        if self.primary_key_values.is_empty() {
            return Err(SpecError::invalid(
                "schema.primary_key.values",
                "at least one primary-key value is required",
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for value in &self.primary_key_values {
            let trimmed = value.trim();
            if trimmed.is_empty() {
                return Err(SpecError::invalid(
                    "schema.primary_key.values",
                    "primary-key values must be non-empty",
                ));
            }
            if !seen.insert(trimmed.to_string()) {
                return Err(SpecError::invalid(
                    "schema.primary_key.values",
                    format!("duplicate primary-key value `{trimmed}`"),
                ));
            }
        }
        if self.columns.is_empty() {
            return Err(SpecError::invalid("schema.columns", "at least one column is required"));
        }
        let mut names = std::collections::BTreeSet::new();
        for column in &self.columns {
            if column.name.trim().is_empty() {
                return Err(SpecError::invalid("schema.columns", "column names must be non-empty"));
            }
            if !names.insert(column.name.trim().to_string()) {
                return Err(SpecError::invalid(
                    "schema.columns",
                    format!("duplicate column name `{}`", column.name.trim()),
                ));
            }
        }
        Ok(())
    }
}

/// Optional gold annotation: the intrinsic structural depth of one cell's
/// value within the site, used for per-depth evaluation breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthAnnotation {
    pub row: usize,
    pub col: usize,
    pub depth: usize,
}

/// The complete task input: query, base domain, and target schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub query: String,
    pub base_url: Url,
    pub schema: TableSchema,
    /// Gold search-depth annotations; absent for ordinary tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_depths: Option<Vec<DepthAnnotation>>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        match self.base_url.scheme() {
            "http" | "https" | "mem" => {}
            other => {
                return Err(SpecError::invalid(
                    "base_url",
                    format!("scheme `{other}` is not supported (expected http, https, or mem)"),
                ));
            }
        }
        self.schema.validate()?;
        if let Some(depths) = &self.search_depths {
            for d in depths {
                if d.row >= self.schema.row_count() || d.col >= self.schema.col_count() {
                    return Err(SpecError::invalid(
                        "search_depths",
                        format!("annotation ({}, {}) is outside the schema grid", d.row, d.col),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// 0-based (row, column) coordinates of one table cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellAddress {
    pub row: usize,
    pub col: usize,
}

impl CellAddress {
    pub fn new(row: usize, col: usize) -> Self {
        CellAddress { row, col }
    }

    /// Left neighbor (same row, previous column), if any.
    pub fn left(&self) -> Option<CellAddress> {
        self.col.checked_sub(1).map(|col| CellAddress { row: self.row, col })
    }

    /// Up neighbor (previous row, same column), if any.
    pub fn up(&self) -> Option<CellAddress> {
        self.row.checked_sub(1).map(|row| CellAddress { row, col: self.col })
    }
}

impl fmt::Display for CellAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Where a filled cell value came from: the source page, the navigation path
/// that reached it, and what the traversal cost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub source_url: Url,
    /// Ordered URLs from the exploration root to `source_url` (inclusive).
    pub path: Vec<Url>,
    /// BFS layer at which the value was found; 0 for cache-probe hits.
    pub traversal_level: usize,
    /// Pages fetched by the run that produced this value.
    pub fetch_count: u64,
}

impl ProvenanceRecord {
    pub fn validate(&self) -> Result<(), SpecError> {
        if self.path.is_empty() {
            return Err(SpecError::invalid("provenance.path", "must be non-empty"));
        }
        if self.path.last() != Some(&self.source_url) {
            return Err(SpecError::invalid(
                "provenance.path",
                "last path element must equal source_url",
            ));
        }
        if self.traversal_level > self.path.len() - 1 {
            return Err(SpecError::invalid(
                "provenance.traversal_level",
                "must not exceed path length - 1",
            ));
        }
        if self.fetch_count == 0 {
            return Err(SpecError::invalid("provenance.fetch_count", "must be at least 1"));
        }
        Ok(())
    }
}

/// One cell of the materialized table. `Missing` is a first-class marker,
/// distinct from an empty string: metrics count it incorrect.
///
/// Provenance is always present on cells filled by the explorer; hand-authored
/// instances (gold tables) may omit it.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum CellValue {
    #[default]
    Missing,
    Filled {
        value: String,
        provenance: Option<ProvenanceRecord>,
    },
}

impl CellValue {
    pub fn filled(value: impl Into<String>, provenance: ProvenanceRecord) -> Self {
        CellValue::Filled {
            value: value.into(),
            provenance: Some(provenance),
        }
    }

    /// A filled cell without provenance (gold tables, hand-authored fixtures).
    pub fn bare(value: impl Into<String>) -> Self {
        CellValue::Filled {
            value: value.into(),
            provenance: None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, CellValue::Missing)
    }

    pub fn value(&self) -> Option<&str> {
        match self {
            CellValue::Missing => None,
            CellValue::Filled { value, .. } => Some(value),
        }
    }

    pub fn provenance(&self) -> Option<&ProvenanceRecord> {
        match self {
            CellValue::Missing => None,
            CellValue::Filled { provenance, .. } => provenance.as_ref(),
        }
    }
}

/// The materialized output grid conforming to a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct TableInstance {
    schema: TableSchema,
    cells: Vec<CellValue>,
}

impl TableInstance {
    /// An all-missing instance for the given schema.
    pub fn empty(schema: TableSchema) -> Self {
        let cells = vec![CellValue::Missing; schema.row_count() * schema.col_count()];
        TableInstance { schema, cells }
    }

    /// Builds an instance from a value grid, without provenance.
    pub fn from_values(schema: TableSchema, values: &[Vec<String>]) -> Result<Self, SpecError> {
        if values.len() != schema.row_count()
            || values.iter().any(|r| r.len() != schema.col_count())
        {
            return Err(SpecError::invalid("cells", "value grid does not match schema dimensions"));
        }
        let mut instance = TableInstance::empty(schema);
        for (i, row) in values.iter().enumerate() {
            for (j, value) in row.iter().enumerate() {
                instance.cells[i * instance.schema.col_count() + j] = CellValue::bare(value);
            }
        }
        Ok(instance)
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn get(&self, address: CellAddress) -> &CellValue {
        &self.cells[address.row * self.schema.col_count() + address.col]
    }

    pub fn set(&mut self, address: CellAddress, value: CellValue) {
        self.cells[address.row * self.schema.col_count() + address.col] = value;
    }

    pub fn filled_count(&self) -> usize {
        self.cells.iter().filter(|c| !c.is_missing()).count()
    }

    /// Iterates cells in row-major order together with their addresses.
    pub fn iter(&self) -> impl Iterator<Item = (CellAddress, &CellValue)> {
        let cols = self.schema.col_count();
        self.cells
            .iter()
            .enumerate()
            .map(move |(idx, cell)| (CellAddress::new(idx / cols, idx % cols), cell))
    }
}

/// Returns all R·C cell addresses exactly once, row-major: every attribute of
/// one primary key is visited before the next primary key.
pub fn fill_order(schema: &TableSchema) -> Vec<CellAddress> {
    let mut order = Vec::with_capacity(schema.row_count() * schema.col_count());
    for row in 0..schema.row_count() {
        for col in 0..schema.col_count() {
            order.push(CellAddress::new(row, col));
        }
    }
    order
}

/// Parsing/validation failures for task-spec and instance documents.
#[derive(Debug, Error)]
pub enum SpecError {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("invalid spec: field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl SpecError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SpecError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// Wire formats
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TaskSpecDoc {
    format_version: u32,
    query: String,
    base_url: String,
    schema: SchemaDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    search_depths: Option<Vec<DepthAnnotation>>,
}

#[derive(Serialize, Deserialize)]
struct SchemaDoc {
    primary_key: PrimaryKeyDoc,
    columns: Vec<ColumnSpec>,
}

#[derive(Serialize, Deserialize)]
struct PrimaryKeyDoc {
    name: String,
    values: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    format_version: u32,
    schema: SchemaDoc,
    cells: Vec<CellDoc>,
}

#[derive(Serialize, Deserialize)]
struct CellDoc {
    row: usize,
    col: usize,
    value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<ProvenanceRecord>,
}

fn schema_to_doc(schema: &TableSchema) -> SchemaDoc {
    SchemaDoc {
        primary_key: PrimaryKeyDoc {
            name: schema.primary_key_name.clone(),
            values: schema.primary_key_values.clone(),
        },
        columns: schema.columns.clone(),
    }
}

fn schema_from_doc(doc: SchemaDoc) -> TableSchema {
    TableSchema {
        primary_key_name: doc.primary_key.name,
        primary_key_values: doc.primary_key.values,
        columns: doc.columns,
    }
}

/// Parses and validates a task-spec document (JSON).
pub fn parse_task_spec(document: &str) -> Result<TaskSpec, SpecError> {
    let doc: TaskSpecDoc =
        serde_json::from_str(document).map_err(|e| SpecError::Malformed(e.to_string()))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(SpecError::invalid(
            "format_version",
            format!("expected {FORMAT_VERSION}, found {}", doc.format_version),
        ));
    }
    let base_url = Url::parse(&doc.base_url)
        .map_err(|e| SpecError::invalid("base_url", format!("not an absolute URL: {e}")))?;
    let spec = TaskSpec {
        query: doc.query,
        base_url,
        schema: schema_from_doc(doc.schema),
        search_depths: doc.search_depths,
    };
    spec.validate()?;
    Ok(spec)
}

/// Serializes a task spec to its document form.
pub fn serialize_task_spec(spec: &TaskSpec) -> String {
    let doc = TaskSpecDoc {
        format_version: FORMAT_VERSION,
        query: spec.query.clone(),
        base_url: spec.base_url.to_string(),
        schema: schema_to_doc(&spec.schema),
        search_depths: spec.search_depths.clone(),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("task spec serializes");
    out.push('\n');
    out
}

/// Serializes a table instance; missing cells are emitted as explicit nulls.
pub fn serialize_instance(instance: &TableInstance) -> String {
    let cells = instance
        .iter()
        .map(|(address, cell)| CellDoc {
            row: address.row,
            col: address.col,
            value: cell.value().map(str::to_string),
            provenance: cell.provenance().cloned(),
        })
        .collect();
    let doc = InstanceDoc {
        format_version: FORMAT_VERSION,
        schema: schema_to_doc(&instance.schema),
        cells,
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("instance serializes");
    out.push('\n');
    out
}

/// Parses a table-instance document, checking dimensions and provenance
/// invariants.
pub fn parse_instance(document: &str) -> Result<TableInstance, SpecError> {
    let doc: InstanceDoc =
        serde_json::from_str(document).map_err(|e| SpecError::Malformed(e.to_string()))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(SpecError::invalid(
            "format_version",
            format!("expected {FORMAT_VERSION}, found {}", doc.format_version),
        ));
    }
    let schema = schema_from_doc(doc.schema);
    schema.validate()?;
    let mut instance = TableInstance::empty(schema);
    for cell in doc.cells {
        if cell.row >= instance.schema.row_count() || cell.col >= instance.schema.col_count() {
            return Err(SpecError::invalid(
                "cells",
                format!("cell ({}, {}) is outside the schema grid", cell.row, cell.col),
            ));
        }
        let value = match (cell.value, cell.provenance) {
            (None, Some(_)) => {
                return Err(SpecError::invalid(
                    "cells",
                    format!("cell ({}, {}) is null but carries provenance", cell.row, cell.col),
                ));
            }
            (None, None) => CellValue::Missing,
            (Some(value), provenance) => {
                if let Some(p) = &provenance {
                    p.validate()?;
                }
                CellValue::Filled { value, provenance }
            }
        };
        instance.set(CellAddress::new(cell.row, cell.col), value);
    }
    Ok(instance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_schema() -> TableSchema {
        TableSchema {
            primary_key_name: "country".into(),
            primary_key_values: vec!["Benin".into(), "Burundi".into()],
            columns: vec![
                ColumnSpec::new("surveys conducted"),
                ColumnSpec::new("children under five").with_unit_hint("integer count"),
            ],
        }
    }

    fn sample_spec_json() -> String {
        r#"{
            "format_version": 1,
            "query": "number of surveys per country",
            "base_url": "https://example.org/",
            "schema": {
                "primary_key": {"name": "country", "values": ["Benin", "Burundi"]},
                "columns": [
                    {"name": "surveys conducted"},
                    {"name": "children under five", "unit_hint": "integer count"}
                ]
            }
        }"#
        .to_string()
    }

    #[test]
    fn parse_task_spec_maps_fields() {
        let spec = parse_task_spec(&sample_spec_json()).unwrap();
        assert_eq!(spec.schema.row_count(), 2);
        assert_eq!(spec.schema.col_count(), 2);
        assert_eq!(spec.schema.row_label(1), "Burundi");
        assert_eq!(spec.base_url.as_str(), "https://example.org/");
    }

    #[test]
    fn parse_task_spec_rejects_duplicate_rows() {
        let doc = sample_spec_json().replace("\"Burundi\"", "\"Benin\"");
        let err = parse_task_spec(&doc).unwrap_err();
        match err {
            SpecError::Invalid { field, .. } => assert_eq!(field, "schema.primary_key.values"),
            other => panic!("expected Invalid, got {other:?}"),
        }
    }

    #[test]
    fn parse_task_spec_rejects_relative_base_url() {
        let doc = sample_spec_json().replace("https://example.org/", "dhsprogram.com");
        assert!(matches!(
            parse_task_spec(&doc),
            Err(SpecError::Invalid { field, .. }) if field == "base_url"
        ));
    }

    #[test]
    fn parse_task_spec_rejects_syntax_errors() {
        assert!(matches!(parse_task_spec("{not json"), Err(SpecError::Malformed(_))));
    }

    #[test]
    fn fill_order_is_row_major() {
        let order = fill_order(&sample_schema());
        let expected: Vec<(usize, usize)> = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
        assert_eq!(order.iter().map(|a| (a.row, a.col)).collect::<Vec<_>>(), expected);

        let mut one_by_three = sample_schema();
        one_by_three.primary_key_values.truncate(1);
        one_by_three.columns.push(ColumnSpec::new("third"));
        let order = fill_order(&one_by_three);
        assert_eq!(order.iter().map(|a| (a.row, a.col)).collect::<Vec<_>>(), vec![
            (0, 0),
            (0, 1),
            (0, 2)
        ]);

        let tall = TableSchema {
            primary_key_name: "k".into(),
            primary_key_values: vec!["a".into(), "b".into(), "c".into()],
            columns: vec![ColumnSpec::new("only")],
        };
        let order = fill_order(&tall);
        assert_eq!(order.iter().map(|a| (a.row, a.col)).collect::<Vec<_>>(), vec![
            (0, 0),
            (1, 0),
            (2, 0)
        ]);
    }

    #[test]
    fn instance_round_trips_with_missing_and_provenance() {
        let schema = sample_schema();
        let mut instance = TableInstance::empty(schema);
        let source = Url::parse("https://example.org/benin").unwrap();
        instance.set(
            CellAddress::new(0, 0),
            CellValue::filled(
                "5",
                ProvenanceRecord {
                    source_url: source.clone(),
                    path: vec![
                        Url::parse("https://example.org/").unwrap(),
                        Url::parse("https://example.org/countries").unwrap(),
                        source,
                    ],
                    traversal_level: 2,
                    fetch_count: 3,
                },
            ),
        );
        let doc = serialize_instance(&instance);
        assert!(doc.contains("https://example.org/countries"));
        let parsed = parse_instance(&doc).unwrap();
        assert_eq!(parsed, instance);
    }

    #[test]
    fn empty_instance_serializes_null_cells() {
        let schema = TableSchema {
            primary_key_name: "k".into(),
            primary_key_values: vec!["a".into()],
            columns: vec![ColumnSpec::new("c")],
        };
        let doc = serialize_instance(&TableInstance::empty(schema));
        let json: serde_json::Value = serde_json::from_str(&doc).unwrap();
        assert_eq!(json["cells"][0]["value"], serde_json::Value::Null);
    }

    #[test]
    fn parse_instance_rejects_provenance_on_null_cell() {
        let schema = TableSchema {
            primary_key_name: "k".into(),
            primary_key_values: vec!["a".into()],
            columns: vec![ColumnSpec::new("c")],
        };
        let mut doc: serde_json::Value =
            serde_json::from_str(&serialize_instance(&TableInstance::empty(schema))).unwrap();
        doc["cells"][0]["provenance"] = serde_json::json!({
            "source_url": "https://x.org/",
            "path": ["https://x.org/"],
            "traversal_level": 0,
            "fetch_count": 1
        });
        assert!(parse_instance(&doc.to_string()).is_err());
    }

    #[test]
    fn provenance_path_must_end_at_source() {
        let record = ProvenanceRecord {
            source_url: Url::parse("https://x.org/a").unwrap(),
            path: vec![Url::parse("https://x.org/b").unwrap()],
            traversal_level: 0,
            fetch_count: 1,
        };
        assert!(record.validate().is_err());
    }
}
