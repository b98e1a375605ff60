//! Cell-matching strategies and the metric hierarchy: per-task scoring plus
//! suite-level aggregation over pooled cells, rows, columns, and tables.

use std::cell::RefCell;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ColumnSpec, TableInstance, TaskSpec};
use crate::oracle::{normalize_for_match, BuiltinJudge, Judge};

/// Which matcher produced a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherKind {
    Exact,
    Lenient,
    RemoteJudge,
}

/// Per-cell predicate over (predicted, gold).
pub trait CellMatcher {
    fn matches(&self, predicted: &str, gold: &str, column: &ColumnSpec) -> bool;
    fn kind(&self) -> MatcherKind;
}

/// Strict matcher: Unicode-composed, trimmed, whitespace-collapsed,
/// case-sensitive equality.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExactMatcher;

/// 1 iff the normalized strings are byte-equal. A missing value matches
/// nothing (enforced by [`score_mask`]).
pub fn match_exact(predicted: &str, gold: &str) -> bool {
    normalize_for_match(predicted) == normalize_for_match(gold)
}

impl CellMatcher for ExactMatcher {
    fn matches(&self, predicted: &str, gold: &str, _column: &ColumnSpec) -> bool {
        match_exact(predicted, gold)
    }

    fn kind(&self) -> MatcherKind {
        MatcherKind::Exact
    }
}

/// Built-in lenient matcher: accepts everything exact match accepts plus
/// case differences, percent/fraction equivalence, and rounding-compatible
/// numeric pairs.
#[derive(Debug, Default, Clone, Copy)]
pub struct LenientMatcher;

impl CellMatcher for LenientMatcher {
    fn matches(&self, predicted: &str, gold: &str, column: &ColumnSpec) -> bool {
        BuiltinJudge.equivalent(predicted, gold, column).equivalent
    }

    fn kind(&self) -> MatcherKind {
        MatcherKind::Lenient
    }
}

/// Matcher backed by an external judge, memoizing (predicted, gold) pairs
/// for the duration of a run.
pub struct JudgeMatcher<'a> {
    judge: &'a dyn Judge,
    memo: RefCell<BTreeMap<(String, String, String), bool>>,
}

impl<'a> JudgeMatcher<'a> {
    pub fn new(judge: &'a dyn Judge) -> Self {
        JudgeMatcher {
            judge,
            memo: RefCell::new(BTreeMap::new()),
        }
    }
}

impl CellMatcher for JudgeMatcher<'_> {
    fn matches(&self, predicted: &str, gold: &str, column: &ColumnSpec) -> bool {
        let key = (predicted.to_string(), gold.to_string(), column.name.clone());
        if let Some(hit) = self.memo.borrow().get(&key) {
            return *hit;
        }
        let verdict = self.judge.equivalent(predicted, gold, column).equivalent;
        self.memo.borrow_mut().insert(key, verdict);
        verdict
    }

    fn kind(&self) -> MatcherKind {
        MatcherKind::RemoteJudge
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
}

/// Element-wise correctness grid for one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectnessMask {
    pub matcher_kind: MatcherKind,
    grid: Vec<Vec<bool>>,
}

impl CorrectnessMask {
    pub fn new(matcher_kind: MatcherKind, grid: Vec<Vec<bool>>) -> Self {
        CorrectnessMask { matcher_kind, grid }
    }

    pub fn rows(&self) -> usize {
        self.grid.len()
    }

    pub fn cols(&self) -> usize {
        self.grid.first().map_or(0, Vec::len)
    }

    pub fn bit(&self, row: usize, col: usize) -> bool {
        self.grid[row][col]
    }

    pub fn correct_cells(&self) -> usize {
        self.grid.iter().flatten().filter(|b| **b).count()
    }

    pub fn row_all_correct(&self, row: usize) -> bool {
        self.grid[row].iter().all(|b| *b)
    }

    pub fn col_all_correct(&self, col: usize) -> bool {
        self.grid.iter().all(|row| row[col])
    }

    pub fn all_correct(&self) -> bool {
        self.grid.iter().flatten().all(|b| *b)
    }

    /// Element-wise `self <= other` (other accepts a superset).
    pub fn dominated_by(&self, other: &CorrectnessMask) -> bool {
        self.grid
            .iter()
            .zip(&other.grid)
            .all(|(a, b)| a.iter().zip(b).all(|(x, y)| !*x || *y))
    }
}

/// Applies the matcher element-wise. A missing cell (on either side) is
/// incorrect regardless of the matcher.
pub fn score_mask(
    predicted: &TableInstance,
    gold: &TableInstance,
    matcher: &dyn CellMatcher,
) -> Result<CorrectnessMask, EvalError> {
    if predicted.schema() != gold.schema() {
        return Err(EvalError::SchemaMismatch(
            "predicted and gold instances use different schemas".into(),
        ));
    }
    let schema = predicted.schema();
    let mut grid = vec![vec![false; schema.col_count()]; schema.row_count()];
    for (address, cell) in predicted.iter() {
        let gold_cell = gold.get(address);
        if let (Some(p), Some(g)) = (cell.value(), gold_cell.value()) {
            grid[address.row][address.col] = matcher.matches(p, g, schema.column(address.col));
        }
    }
    Ok(CorrectnessMask::new(matcher.kind(), grid))
}

/// Grid dimensions behind a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub rows: usize,
    pub cols: usize,
    pub cells: usize,
    pub tasks: usize,
}

/// The metric suite. For a single task `cell_acc == task_acc`; they diverge
/// only under suite aggregation, where cells pool across tasks while task
/// accuracy averages per-task scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cell_acc: f64,
    pub row_acc: f64,
    pub col_acc: f64,
    pub table_acc: f64,
    pub task_acc: f64,
    /// Accuracy keyed by gold-annotated search depth, when annotations exist.
    pub per_depth: BTreeMap<usize, f64>,
    pub counts: MetricCounts,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Optional per-cell depth annotations aligned with a mask.
pub type DepthGrid = Vec<Vec<Option<usize>>>;

/// Extracts the depth grid from a task's annotations.
pub fn depth_grid(spec: &TaskSpec) -> Option<DepthGrid> {
    let annotations = spec.search_depths.as_ref()?;
    let mut grid = vec![vec![None; spec.schema.col_count()]; spec.schema.row_count()];
    for a in annotations {
        grid[a.row][a.col] = Some(a.depth);
    }
    Some(grid)
}

fn per_depth_accuracy(items: &[(&CorrectnessMask, Option<&DepthGrid>)]) -> BTreeMap<usize, f64> {
    let mut totals: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (mask, depths) in items {
        let Some(depths) = depths else { continue };
        for row in 0..mask.rows() {
            for col in 0..mask.cols() {
                if let Some(depth) = depths[row][col] {
                    let slot = totals.entry(depth).or_insert((0, 0));
                    slot.1 += 1;
                    if mask.bit(row, col) {
                        slot.0 += 1;
                    }
                }
            }
        }
    }
    totals
        .into_iter()
        .map(|(depth, (correct, total))| (depth, ratio(correct, total)))
        .collect()
}

/// Metrics for one task: task accuracy is the fraction of correct cells;
/// row/column accuracy the fraction of fully correct rows/columns; table
/// accuracy is all-or-nothing.
pub fn compute_metrics(mask: &CorrectnessMask, depths: Option<&DepthGrid>) -> MetricsReport {
    let rows = mask.rows();
    let cols = mask.cols();
    let cells = rows * cols;
    let task_acc = ratio(mask.correct_cells(), cells);
    let row_acc = ratio((0..rows).filter(|r| mask.row_all_correct(*r)).count(), rows);
    let col_acc = ratio((0..cols).filter(|c| mask.col_all_correct(*c)).count(), cols);
    let table_acc = if mask.all_correct() { 1.0 } else { 0.0 };
    MetricsReport {
        cell_acc: task_acc,
        row_acc,
        col_acc,
        table_acc,
        task_acc,
        per_depth: per_depth_accuracy(&[(mask, depths)]),
        counts: MetricCounts {
            rows,
            cols,
            cells,
            tasks: 1,
        },
    }
}

/// One task's contribution to a suite aggregate.
pub struct SuiteItem {
    pub mask: CorrectnessMask,
    pub depths: Option<DepthGrid>,
}

/// Suite aggregation: cells, rows, and columns pool across all tasks; task
/// accuracy is the unweighted mean of per-task task accuracy; table accuracy
/// is the fraction of fully correct tables.
pub fn aggregate_suite(items: &[SuiteItem]) -> MetricsReport {
    assert!(!items.is_empty(), "aggregate_suite requires at least one task");
    let mut cells_correct = 0;
    let mut cells_total = 0;
    let mut rows_correct = 0;
    let mut rows_total = 0;
    let mut cols_correct = 0;
    let mut cols_total = 0;
    let mut tables_correct = 0;
    let mut task_acc_sum = 0.0;

    for item in items {
        let mask = &item.mask;
        cells_correct += mask.correct_cells();
        cells_total += mask.rows() * mask.cols();
        rows_correct += (0..mask.rows()).filter(|r| mask.row_all_correct(*r)).count();
        rows_total += mask.rows();
        cols_correct += (0..mask.cols()).filter(|c| mask.col_all_correct(*c)).count();
        cols_total += mask.cols();
        if mask.all_correct() {
            tables_correct += 1;
        }
        task_acc_sum += ratio(mask.correct_cells(), mask.rows() * mask.cols());
    }

    let pairs: Vec<(&CorrectnessMask, Option<&DepthGrid>)> = items
        .iter()
        .map(|item| (&item.mask, item.depths.as_ref()))
        .collect();

    MetricsReport {
        cell_acc: ratio(cells_correct, cells_total),
        row_acc: ratio(rows_correct, rows_total),
        col_acc: ratio(cols_correct, cols_total),
        table_acc: ratio(tables_correct, items.len()),
        task_acc: task_acc_sum / items.len() as f64,
        per_depth: per_depth_accuracy(&pairs),
        counts: MetricCounts {
            rows: rows_total,
            cols: cols_total,
            cells: cells_total,
            tasks: items.len(),
        },
    }
}
