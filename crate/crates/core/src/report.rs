//! Multi-model benchmark tables and their JSON, CSV and markdown forms.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::TaskType;
use crate::evaluate::{MetricReport, MetricValues};
use crate::numeric::round6;
use crate::tasks::TaskKind;

pub const TABLE_SCHEMA_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no reports to combine")]
    Empty,
    #[error("report for `{model}` was computed on dataset {found}, expected {expected}")]
    DatasetMismatch {
        model: String,
        expected: String,
        found: String,
    },
    #[error("report for `{model}` is for task {found}, expected {expected}")]
    TaskMismatch {
        model: String,
        expected: TaskKind,
        found: TaskKind,
    },
    #[error("model `{0}` appears in more than one report")]
    DuplicateModel(String),
    #[error("table csv: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ReportError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    Accuracy,
    Eo,
    MeanPerplexity,
    Ucerf,
    UcerfGroup,
    Fp,
}

pub const COLUMNS: [Column; 6] = [
    Column::Accuracy,
    Column::Eo,
    Column::MeanPerplexity,
    Column::Ucerf,
    Column::UcerfGroup,
    Column::Fp,
];

impl Column {
    pub fn key(self) -> &'static str {
        match self {
            Column::Accuracy => "accuracy",
            Column::Eo => "eo",
            Column::MeanPerplexity => "mean_perplexity",
            Column::Ucerf => "ucerf",
            Column::UcerfGroup => "ucerf_group",
            Column::Fp => "fp",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Column::Accuracy => "Acc",
            Column::Eo => "EO",
            Column::MeanPerplexity => "Perplexity",
            Column::Ucerf => "UCerF",
            Column::UcerfGroup => "U_group",
            Column::Fp => "FP",
        }
    }

    fn of(self, v: &MetricValues) -> Option<f64> {
        match self {
            Column::Accuracy => v.accuracy,
            Column::Eo => v.eo,
            Column::MeanPerplexity => Some(v.mean_perplexity),
            Column::Ucerf => Some(v.ucerf),
            Column::UcerfGroup => v.ucerf_group,
            Column::Fp => Some(v.fp),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
    Unranked,
}

/// Which direction is "better" for a column. Perplexity on type1 data is
/// higher-better (more uncertainty on unresolvable samples); on type2 it is
/// reported but not ranked.
pub fn orientation(column: Column, task_type: TaskType) -> Orientation {
    match (column, task_type) {
        (Column::Eo | Column::UcerfGroup, _) => Orientation::LowerBetter,
        (Column::MeanPerplexity, TaskType::Type2Unambiguous) => Orientation::Unranked,
        _ => Orientation::HigherBetter,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub column: Column,
    pub type2: Orientation,
    pub type1: Orientation,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: Option<f64>,
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub task: TaskKind,
    pub task_type: TaskType,
    pub accuracy: Cell,
    pub eo: Cell,
    pub mean_perplexity: Cell,
    pub ucerf: Cell,
    pub ucerf_group: Cell,
    pub fp: Cell,
}

impl TableRow {
    pub fn cell(&self, c: Column) -> &Cell {
        match c {
            Column::Accuracy => &self.accuracy,
            Column::Eo => &self.eo,
            Column::MeanPerplexity => &self.mean_perplexity,
            Column::Ucerf => &self.ucerf,
            Column::UcerfGroup => &self.ucerf_group,
            Column::Fp => &self.fp,
        }
    }

    fn cell_mut(&mut self, c: Column) -> &mut Cell {
        match c {
            Column::Accuracy => &mut self.accuracy,
            Column::Eo => &mut self.eo,
            Column::MeanPerplexity => &mut self.mean_perplexity,
            Column::Ucerf => &mut self.ucerf,
            Column::UcerfGroup => &mut self.ucerf_group,
            Column::Fp => &mut self.fp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub schema_version: String,
    pub dataset: String,
    pub dataset_fingerprint: String,
    pub task: TaskKind,
    pub estimator: String,
    pub columns: Vec<ColumnMeta>,
    /// Type2 rows first, each block sorted by UCerF descending.
    pub rows: Vec<TableRow>,
}

fn type_order(t: TaskType) -> u8 {
    match t {
        TaskType::Type2Unambiguous => 0,
        TaskType::Type1Ambiguous => 1,
    }
}

/// Combines per-model reports into one ranked table. Values are stored at
/// six decimals, and ranks are computed on the stored values with ties
/// broken by model name.
pub fn build_report(reports: &[MetricReport]) -> Result<BenchmarkTable> {
    let first = reports.first().ok_or(ReportError::Empty)?;
    let mut seen = std::collections::BTreeSet::new();
    let mut rows = Vec::new();
    for r in reports {
        if r.dataset_fingerprint != first.dataset_fingerprint {
            return Err(ReportError::DatasetMismatch {
                model: r.model.clone(),
                expected: first.dataset_fingerprint.clone(),
                found: r.dataset_fingerprint.clone(),
            });
        }
        if r.task != first.task {
            return Err(ReportError::TaskMismatch {
                model: r.model.clone(),
                expected: first.task,
                found: r.task,
            });
        }
        if !seen.insert(r.model.as_str()) {
            return Err(ReportError::DuplicateModel(r.model.clone()));
        }
        for block in [&r.type2, &r.type1].into_iter().flatten() {
            let mut row = TableRow {
                model: r.model.clone(),
                task: r.task,
                task_type: block.task_type,
                accuracy: Cell::default(),
                eo: Cell::default(),
                mean_perplexity: Cell::default(),
                ucerf: Cell::default(),
                ucerf_group: Cell::default(),
                fp: Cell::default(),
            };
            for c in COLUMNS {
                row.cell_mut(c).value = c.of(&block.mean).map(round6);
            }
            rows.push(row);
        }
    }
    rows.sort_by(|a, b| {
        type_order(a.task_type)
            .cmp(&type_order(b.task_type))
            .then_with(|| {
                let (ua, ub) = (
                    a.ucerf.value.unwrap_or(f64::NEG_INFINITY),
                    b.ucerf.value.unwrap_or(f64::NEG_INFINITY),
                );
                ub.total_cmp(&ua)
            })
            .then_with(|| a.model.cmp(&b.model))
    });
    assign_ranks(&mut rows);
    Ok(BenchmarkTable {
        schema_version: TABLE_SCHEMA_VERSION.into(),
        dataset: first.dataset.clone(),
        dataset_fingerprint: first.dataset_fingerprint.clone(),
        task: first.task,
        estimator: first.estimator.clone(),
        columns: COLUMNS
            .iter()
            .map(|&c| ColumnMeta {
                column: c,
                type2: orientation(c, TaskType::Type2Unambiguous),
                type1: orientation(c, TaskType::Type1Ambiguous),
            })
            .collect(),
        rows,
    })
}

fn assign_ranks(rows: &mut [TableRow]) {
    for t in [TaskType::Type2Unambiguous, TaskType::Type1Ambiguous] {
        for c in COLUMNS {
            let o = orientation(c, t);
            if o == Orientation::Unranked {
                continue;
            }
            let mut idx: Vec<(usize, f64)> = rows
                .iter()
                .enumerate()
                .filter(|(_, r)| r.task_type == t)
                .filter_map(|(i, r)| r.cell(c).value.map(|v| (i, v)))
                .collect();
            idx.sort_by(|&(i, a), &(j, b)| {
                let ord = match o {
                    Orientation::HigherBetter => b.total_cmp(&a),
                    _ => a.total_cmp(&b),
                };
                ord.then_with(|| rows[i].model.cmp(&rows[j].model))
            });
            for (rank, (i, _)) in idx.into_iter().enumerate() {
                rows[i].cell_mut(c).rank = Some(rank + 1);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub model: String,
    pub accuracy: f64,
    pub ucerf: f64,
    /// Rectangle area under the point: the fairness-performance product.
    pub area: f64,
}

/// One (accuracy, UCerF) point per type2 row.
pub fn scatter_2d(table: &BenchmarkTable) -> Vec<ScatterPoint> {
    table
        .rows
        .iter()
        .filter(|r| r.task_type == TaskType::Type2Unambiguous)
        .filter_map(|r| {
            let (acc, u) = (r.accuracy.value?, r.ucerf.value?);
            Some(ScatterPoint {
                model: r.model.clone(),
                accuracy: acc,
                ucerf: u,
                area: round6(acc * u),
            })
        })
        .collect()
}

fn round_value(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|f| serde_json::Number::from_f64(round6(f)))
            .map(Value::Number)
            .unwrap_or(Value::Null),
        Value::Array(a) => Value::Array(a.into_iter().map(round_value).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_value(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with every float rounded to six decimals. Field order
/// follows the struct definitions.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let v = round_value(serde_json::to_value(value)?);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

fn fmt6(v: Option<f64>) -> String {
    v.map(|x| format!("{:.6}", round6(x))).unwrap_or_default()
}

fn fmt_rank(r: Option<usize>) -> String {
    r.map(|r| r.to_string()).unwrap_or_default()
}

fn csv_header() -> Vec<String> {
    let mut h = vec!["model".to_string(), "task".into(), "type".into()];
    for c in COLUMNS {
        h.push(c.key().into());
        h.push(format!("{}_rank", c.key()));
    }
    h
}

pub fn table_to_csv(table: &BenchmarkTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(csv_header())?;
    for r in &table.rows {
        let mut rec = vec![r.model.clone(), r.task.to_string(), r.task_type.short().to_string()];
        for c in COLUMNS {
            rec.push(fmt6(r.cell(c).value));
            rec.push(fmt_rank(r.cell(c).rank));
        }
        w.write_record(rec)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| ReportError::Parse(e.to_string()))?)
        .map_err(|e| ReportError::Parse(e.to_string()))
}

/// Reads rows back from [`table_to_csv`] output.
pub fn rows_from_csv(text: &str) -> Result<Vec<TableRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != csv_header() {
        return Err(ReportError::Parse("unexpected header".into()));
    }
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| ReportError::Parse(format!("bad number `{s}`")))
        }
    };
    let opt_rank = |s: &str| -> Result<Option<usize>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| ReportError::Parse(format!("bad rank `{s}`")))
        }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let task_type = match &rec[2] {
            "type1" => TaskType::Type1Ambiguous,
            "type2" => TaskType::Type2Unambiguous,
            other => return Err(ReportError::Parse(format!("bad type `{other}`"))),
        };
        let mut row = TableRow {
            model: rec[0].to_string(),
            task: rec[1].parse().map_err(ReportError::Parse)?,
            task_type,
            accuracy: Cell::default(),
            eo: Cell::default(),
            mean_perplexity: Cell::default(),
            ucerf: Cell::default(),
            ucerf_group: Cell::default(),
            fp: Cell::default(),
        };
        for (i, c) in COLUMNS.iter().enumerate() {
            *row.cell_mut(*c) = Cell {
                value: opt(&rec[3 + 2 * i])?,
                rank: opt_rank(&rec[4 + 2 * i])?,
            };
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn table_to_markdown(table: &BenchmarkTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {} ({}, {})", table.dataset, table.task, table.estimator);
    for t in [TaskType::Type2Unambiguous, TaskType::Type1Ambiguous] {
        let rows: Vec<&TableRow> = table.rows.iter().filter(|r| r.task_type == t).collect();
        if rows.is_empty() {
            continue;
        }
        let cols: Vec<Column> = COLUMNS
            .iter()
            .copied()
            .filter(|&c| rows.iter().any(|r| r.cell(c).value.is_some()))
            .collect();
        let _ = writeln!(out, "\n## {t}\n");
        let titles: Vec<String> = cols
            .iter()
            .map(|c| match orientation(*c, t) {
                Orientation::HigherBetter => format!("{} ↑", c.title()),
                Orientation::LowerBetter => format!("{} ↓", c.title()),
                Orientation::Unranked => c.title().to_string(),
            })
            .collect();
        let _ = writeln!(out, "| Model | {} |", titles.join(" | "));
        let _ = writeln!(out, "|---|{}", "---:|".repeat(cols.len()));
        for r in rows {
            let cells: Vec<String> = cols
                .iter()
                .map(|&c| {
                    let cell = r.cell(c);
                    match (cell.value, cell.rank) {
                        (Some(v), Some(k)) => format!("{v:.6} ({k})"),
                        (Some(v), None) => format!("{v:.6}"),
                        _ => String::new(),
                    }
                })
                .collect();
            let _ = writeln!(out, "| {} | {} |", r.model, cells.join(" | "));
        }
    }
    out
}

pub fn scatter_to_csv(points: &[ScatterPoint]) -> String {
    let mut out = String::from("model,accuracy,ucerf,area\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            csv_field(&p.model),
            fmt6(Some(p.accuracy)),
            fmt6(Some(p.ucerf)),
            fmt6(Some(p.area))
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-occupation rows of every type block in a model report.
pub fn per_occupation_csv(report: &MetricReport) -> String {
    let mut out = String::from("type,occupation,pct_female,pairs,ucerf,eo_fairness,omitted\n");
    for block in [&report.type2, &report.type1].into_iter().flatten() {
        for r in &block.per_occupation {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                block.task_type,
                csv_field(&r.occupation),
                fmt6(Some(r.pct_female)),
                r.pairs,
                fmt6(Some(r.ucerf)),
                fmt6(r.eo_fairness),
                r.omitted.join(";")
            );
        }
    }
    out
}

/// Histogram bins of every type block, one line per bin.
pub fn histograms_csv(report: &MetricReport) -> String {
    let mut out = String::from("type,histogram,bin,lo,hi,count\n");
    for block in [&report.type2, &report.type1].into_iter().flatten() {
        let h = &block.histograms;
        for (name, hist) in [
            ("pro_desirability", &h.pro_desirability),
            ("anti_desirability", &h.anti_desirability),
            ("unlabeled_desirability", &h.unlabeled_desirability),
            ("pair_ucerf", &h.pair_ucerf),
        ] {
            let edges = hist.edges();
            for (i, c) in hist.counts.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{name},{i},{},{},{c}",
                    block.task_type,
                    fmt6(Some(edges[i])),
                    fmt6(Some(edges[i + 1]))
                );
            }
        }
    }
    out
}

/// Writes `table.json`, `table.csv`, `table.md` and `scatter.csv` into `dir`.
pub fn emit_table(table: &BenchmarkTable, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let files = [
        ("table.json", to_json(table)?),
        ("table.csv", table_to_csv(table)?),
        ("table.md", table_to_markdown(table)),
        ("scatter.csv", scatter_to_csv(&scatter_2d(table))),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
    }
    Ok(written)
}

/// Writes `report.json`, `per_occupation.csv` and `histograms.csv` for one model.
pub fn emit_model_report(report: &MetricReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let files = [
        ("report.json", to_json(report)?),
        ("per_occupation.csv", per_occupation_csv(report)),
        ("histograms.csv", histograms_csv(report)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::TypeBlock;
    use crate::metrics::{metric_histograms, PositiveClass};

    fn values(acc: f64, eo: f64, ppl: f64, u: f64, ug: f64) -> MetricValues {
        MetricValues {
            accuracy: Some(acc),
            eo: Some(eo),
            mean_perplexity: ppl,
            ucerf: u,
            ucerf_group: Some(ug),
            fp: acc * u,
        }
    }

    fn report(model: &str, t2: MetricValues, t1: Option<MetricValues>) -> MetricReport {
        let block = |task_type, mean: MetricValues| TypeBlock {
            task_type,
            k: 2,
            samples: 2,
            pairs: 1,
            std: mean.clone(),
            mean,
            per_seed: vec![],
            flags: vec![],
            per_occupation: vec![],
            histograms: metric_histograms(&[], 4).unwrap(),
        };
        MetricReport {
            schema_version: "v1".into(),
            model: model.into(),
            task: TaskKind::Intrinsic,
            estimator: "perplexity".into(),
            positive_class: PositiveClass::MaleStereotyped,
            dataset: "toy".into(),
            dataset_fingerprint: "abc".into(),
            seeds: vec![0],
            sample_count: 4,
            type2: Some(block(TaskType::Type2Unambiguous, t2)),
            type1: t1.map(|v| block(TaskType::Type1Ambiguous, v)),
        }
    }

    fn type1(ppl: f64, u: f64) -> MetricValues {
        MetricValues {
            accuracy: None,
            eo: None,
            mean_perplexity: ppl,
            ucerf: u,
            ucerf_group: None,
            fp: (ppl - 1.0) * u,
        }
    }

    #[test]
    fn single_model_ranks_are_one() {
        let t = build_report(&[report("m", values(0.8, 0.1, 1.5, 0.9, 0.2), Some(type1(1.7, 0.8)))]).unwrap();
        assert_eq!(t.rows.len(), 2);
        for r in &t.rows {
            for c in COLUMNS {
                let cell = r.cell(c);
                if cell.value.is_some() && orientation(c, r.task_type) != Orientation::Unranked {
                    assert_eq!(cell.rank, Some(1), "{c:?}");
                }
            }
        }
        assert_eq!(t.rows[1].accuracy.value, None);
    }

    #[test]
    fn sorted_by_ucerf_and_ranked() {
        let reports = [
            report("b", values(0.9, 0.3, 1.5, 0.7, 0.2), None),
            report("a", values(0.6, 0.1, 1.5, 0.8, 0.3), None),
            report("c", values(0.9, 0.1, 1.5, 0.7, 0.1), None),
        ];
        let t = build_report(&reports).unwrap();
        let order: Vec<&str> = t.rows.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(order, ["a", "b", "c"]);
        let rank = |m: &str, c: Column| t.rows.iter().find(|r| r.model == m).unwrap().cell(c).rank.unwrap();
        assert_eq!(
            (
                rank("a", Column::Ucerf),
                rank("b", Column::Ucerf),
                rank("c", Column::Ucerf)
            ),
            (1, 2, 3)
        );
        // tie on accuracy 0.9: model name breaks it
        assert_eq!(
            (
                rank("b", Column::Accuracy),
                rank("c", Column::Accuracy),
                rank("a", Column::Accuracy)
            ),
            (1, 2, 3)
        );
        // EO lower is better; a and c tie at 0.1
        assert_eq!(
            (rank("a", Column::Eo), rank("c", Column::Eo), rank("b", Column::Eo)),
            (1, 2, 3)
        );
        assert_eq!(t.rows[0].mean_perplexity.rank, None);
    }

    #[test]
    fn mismatched_dataset_rejected() {
        let mut b = report("b", values(0.9, 0.3, 1.5, 0.7, 0.2), None);
        b.dataset_fingerprint = "zzz".into();
        let err = build_report(&[report("a", values(0.9, 0.3, 1.5, 0.7, 0.2), None), b]).unwrap_err();
        assert!(matches!(err, ReportError::DatasetMismatch { .. }));
        assert!(matches!(build_report(&[]), Err(ReportError::Empty)));
    }

    #[test]
    fn scatter_area_is_fp() {
        let t = build_report(&[
            report("falcon", values(0.84, 0.1, 1.5, 0.793, 0.2), None),
            report("zero", values(0.0, 0.1, 1.5, 0.5, 0.2), None),
        ])
        .unwrap();
        let pts = scatter_2d(&t);
        assert_eq!(pts.len(), t.rows.len());
        let f = pts.iter().find(|p| p.model == "falcon").unwrap();
        assert!((f.area - 0.666).abs() < 1e-3);
        assert_eq!(pts.iter().find(|p| p.model == "zero").unwrap().area, 0.0);
    }

    #[test]
    fn emission_round_trips() {
        let t = build_report(&[
            report("m1", values(0.8123456789, 0.1, 1.5, 0.9, 0.2), Some(type1(1.7, 0.8))),
            report("m2", values(0.7, 0.2, 1.4, 0.85, 0.3), Some(type1(1.6, 0.9))),
        ])
        .unwrap();
        let json = to_json(&t).unwrap();
        let back: BenchmarkTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert_eq!(to_json(&back).unwrap(), json);

        let csv = table_to_csv(&t).unwrap();
        assert_eq!(rows_from_csv(&csv).unwrap(), t.rows);
        assert!(csv.contains("0.812346"));

        let md = table_to_markdown(&t);
        assert_eq!(md.lines().filter(|l| l.starts_with("| m1 ")).count(), 2);
        assert_eq!(md.lines().filter(|l| l.starts_with("| m2 ")).count(), 2);

        let dir = tempfile::tempdir().unwrap();
        let a = emit_table(&t, dir.path()).unwrap();
        let first: Vec<Vec<u8>> = a.iter().map(|p| fs::read(p).unwrap()).collect();
        let b = emit_table(&t, dir.path()).unwrap();
        let second: Vec<Vec<u8>> = b.iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
    }
}
