//! Benchmark scoring.
//!
//! A category's accuracy is the unweighted mean of its task accuracies and the
//! overall figure is the unweighted mean of the category accuracies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::Prediction;
use crate::tasks::{Category, Task, KNOWN_TASKS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("label {question_id}: {message}")]
    Label { question_id: String, message: String },
    #[error("duplicate question id {0}")]
    Duplicate(String),
    #[error("prediction for unknown question {0}")]
    UnknownQuestion(String),
    #[error("no labels to score")]
    Empty,
    #[error("report line {line}: {message}")]
    Report { line: usize, message: String },
}

/// Gold answer for one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledItem {
    pub question_id: String,
    pub task: Task,
    pub category: Category,
    pub gold_index: usize,
}

impl LabeledItem {
    pub fn validate(&self) -> Result<(), EvalError> {
        match self.task.category() {
            Some(c) if c != self.category => Err(EvalError::Label {
                question_id: self.question_id.clone(),
                message: format!("task {} belongs to {c}, not {}", self.task, self.category),
            }),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub category: Category,
    pub correct: usize,
    pub total: usize,
    /// Percent.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub per_task: BTreeMap<Task, TaskScore>,
    pub per_category: BTreeMap<Category, f64>,
    pub overall: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores predictions against labels. Labels without a prediction (or with
/// an abstention) count as wrong.
pub fn score(predictions: &[Prediction], labels: &[LabeledItem]) -> Result<CategoryReport, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut gold: BTreeMap<&str, &LabeledItem> = BTreeMap::new();
    for l in labels {
        l.validate()?;
        if gold.insert(&l.question_id, l).is_some() {
            return Err(EvalError::Duplicate(l.question_id.clone()));
        }
    }
    let mut predicted: BTreeMap<&str, Option<usize>> = BTreeMap::new();
    for p in predictions {
        if !gold.contains_key(p.question_id.as_str()) {
            return Err(EvalError::UnknownQuestion(p.question_id.clone()));
        }
        if predicted.insert(&p.question_id, p.choice_index).is_some() {
            return Err(EvalError::Duplicate(p.question_id.clone()));
        }
    }

    let mut tally: BTreeMap<Task, TaskScore> = BTreeMap::new();
    for l in labels {
        let entry = tally.entry(l.task.clone()).or_insert(TaskScore {
            category: l.category,
            correct: 0,
            total: 0,
            accuracy: 0.0,
        });
        if entry.category != l.category {
            return Err(EvalError::Label {
                question_id: l.question_id.clone(),
                message: format!("task {} appears under {} and {}", l.task, entry.category, l.category),
            });
        }
        entry.total += 1;
        if predicted.get(l.question_id.as_str()).copied().flatten() == Some(l.gold_index) {
            entry.correct += 1;
        }
    }
    for s in tally.values_mut() {
        s.accuracy = 100.0 * s.correct as f64 / s.total as f64;
    }

    let mut per_category = BTreeMap::new();
    for c in Category::ALL {
        let accs: Vec<f64> = tally.values().filter(|s| s.category == c).map(|s| s.accuracy).collect();
        if !accs.is_empty() {
            per_category.insert(c, mean(accs.into_iter()));
        }
    }
    let overall = mean(per_category.values().copied());
    Ok(CategoryReport {
        per_task: tally,
        per_category,
        overall,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    /// Aligned table, one decimal.
    #[default]
    Text,
    /// `category,task,accuracy` at full precision.
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

/// Row of an emitted report. `task` is empty on category rows; the last row
/// has category `Overall`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub category: String,
    pub task: String,
    pub accuracy: f64,
}

pub const OVERALL: &str = "Overall";

/// Rows in emission order; empty for an empty report.
pub fn report_rows(report: &CategoryReport) -> Vec<ReportRow> {
    let mut out = Vec::new();
    if report.per_task.is_empty() {
        return out;
    }
    for (&c, &acc) in &report.per_category {
        for (t, s) in report.per_task.iter().filter(|(_, s)| s.category == c) {
            out.push(ReportRow {
                category: c.name().to_string(),
                task: t.name().to_string(),
                accuracy: s.accuracy,
            });
        }
        out.push(ReportRow {
            category: c.name().to_string(),
            task: String::new(),
            accuracy: acc,
        });
    }
    out.push(ReportRow {
        category: OVERALL.to_string(),
        task: String::new(),
        accuracy: report.overall,
    });
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn emit_report(report: &CategoryReport, format: ReportFormat) -> String {
    let rows = report_rows(report);
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("category,task,accuracy\n");
            for r in &rows {
                let _ = writeln!(out, "{},{},{}", csv_field(&r.category), csv_field(&r.task), r.accuracy);
            }
        }
        ReportFormat::Text => {
            let cw = rows.iter().map(|r| r.category.len()).max().unwrap_or(0).max(8);
            let tw = rows.iter().map(|r| r.task.len()).max().unwrap_or(0).max(4);
            let _ = writeln!(out, "{:<cw$}  {:<tw$}  {:>8}", "category", "task", "accuracy");
            for r in &rows {
                let _ = writeln!(out, "{:<cw$}  {:<tw$}  {:>8.1}", r.category, r.task, r.accuracy);
            }
        }
    }
    out
}

fn split_csv(line: &str) -> Result<Vec<String>, String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', true) => quoted = false,
            ('"', false) if cur.is_empty() => quoted = true,
            (',', false) => fields.push(std::mem::take(&mut cur)),
            (c, _) => cur.push(c),
        }
    }
    if quoted {
        return Err("unterminated quote".into());
    }
    fields.push(cur);
    Ok(fields)
}

/// Reads rows back from a CSV report.
pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>, EvalError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "category,task,accuracy" => {}
        _ => {
            return Err(EvalError::Report {
                line: 1,
                message: "missing header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| EvalError::Report { line: i + 1, message };
        let f = split_csv(line).map_err(err)?;
        if f.len() != 3 {
            return Err(err(format!("expected 3 fields, got {}", f.len())));
        }
        let accuracy = f[2].parse::<f64>().map_err(|e| err(e.to_string()))?;
        out.push(ReportRow {
            category: f[0].clone(),
            task: f[1].clone(),
            accuracy,
        });
    }
    Ok(out)
}

/// Reported per-task accuracies of the full system, in percent.
pub const REFERENCE_CSV: &str = include_str!("../data/reference_accuracies.csv");

/// Parses `category,task,accuracy` rows of per-task accuracies.
pub fn reference_rows() -> Vec<(Task, Category, f64)> {
    parse_report_csv(REFERENCE_CSV)
        .expect("bundled table parses")
        .into_iter()
        .map(|r| {
            (
                Task::new(r.task),
                r.category.parse().expect("bundled category is known"),
                r.accuracy,
            )
        })
        .collect()
}

/// Synthetic labels and predictions whose per-task accuracies equal `rows`:
/// `per_task` questions per task, the first `round(acc * per_task / 100)`
/// answered correctly.
pub fn replay(rows: &[(Task, Category, f64)], per_task: usize) -> (Vec<Prediction>, Vec<LabeledItem>) {
    let mut preds = Vec::with_capacity(rows.len() * per_task);
    let mut labels = Vec::with_capacity(rows.len() * per_task);
    for (t_idx, (task, category, acc)) in rows.iter().enumerate() {
        let correct = (acc * per_task as f64 / 100.0).round() as usize;
        for i in 0..per_task {
            let question_id = format!("t{t_idx:02}-{i:05}");
            let gold_index = (i + t_idx) % 4;
            let choice = if i < correct { gold_index } else { (gold_index + 1) % 4 };
            labels.push(LabeledItem {
                question_id: question_id.clone(),
                task: task.clone(),
                category: *category,
                gold_index,
            });
            preds.push(Prediction {
                question_id,
                choice_index: Some(choice),
                fallback_used: false,
            });
        }
    }
    (preds, labels)
}

/// Tasks of `KNOWN_TASKS` missing from a report.
pub fn missing_tasks(report: &CategoryReport) -> BTreeSet<&'static str> {
    KNOWN_TASKS
        .iter()
        .map(|(t, _)| *t)
        .filter(|t| !report.per_task.contains_key(&Task::new(*t)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(id: &str, task: &str, gold: usize) -> LabeledItem {
        let task = Task::new(task);
        LabeledItem {
            question_id: id.into(),
            category: task.category().unwrap(),
            task,
            gold_index: gold,
        }
    }

    fn pred(id: &str, c: Option<usize>) -> Prediction {
        Prediction {
            question_id: id.into(),
            choice_index: c,
            fallback_used: c.is_none(),
        }
    }

    #[test]
    fn category_is_mean_of_tasks() {
        let labels = vec![
            label("a", "Object Location", 0),
            label("b", "Object Location", 1),
            label("c", "Object Location", 2),
            label("d", "Object Location", 3),
            label("e", "Object Contents Retrieval", 0),
        ];
        let preds = vec![pred("a", Some(0)), pred("b", Some(0)), pred("e", Some(0)), pred("c", None)];
        let r = score(&preds, &labels).unwrap();
        assert_eq!(r.per_task[&Task::new("Object Location")].accuracy, 25.0);
        assert_eq!(r.per_category[&Category::Perception3d], 62.5);
        assert_eq!(r.overall, 62.5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let labels = vec![label("a", "Object Location", 0)];
        assert!(matches!(score(&[pred("z", Some(0))], &labels), Err(EvalError::UnknownQuestion(_))));
        assert!(matches!(
            score(&[pred("a", Some(0)), pred("a", Some(1))], &labels),
            Err(EvalError::Duplicate(_))
        ));
        let mut wrong = label("a", "Object Location", 0);
        wrong.category = Category::Gaze;
        assert!(matches!(score(&[], &[wrong]), Err(EvalError::Label { .. })));
        assert!(matches!(score(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn csv_round_trips() {
        let labels = vec![label("a", "Object Location", 0), label("b", "Gaze Estimation", 0), label("c", "Gaze Estimation", 0)];
        let r = score(&[pred("a", Some(0)), pred("b", Some(0))], &labels).unwrap();
        let csv = emit_report(&r, ReportFormat::Csv);
        let rows = parse_report_csv(&csv).unwrap();
        let overall = rows.last().unwrap();
        assert_eq!(overall.category, OVERALL);
        assert_eq!(overall.accuracy, r.overall);
        assert!(rows.iter().any(|r| r.task == "Gaze Estimation" && r.accuracy == 50.0));
        assert_eq!(rows, report_rows(&r));
        let text = emit_report(&r, ReportFormat::Text);
        assert!(text.contains("75.0"));
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = CategoryReport {
            per_task: BTreeMap::new(),
            per_category: BTreeMap::new(),
            overall: 0.0,
        };
        assert_eq!(emit_report(&r, ReportFormat::Csv), "category,task,accuracy\n");
        assert_eq!(emit_report(&r, ReportFormat::Text).lines().count(), 1);
    }

    #[test]
    fn two_task_report_shape() {
        let labels = vec![label("a", "Object Location", 0), label("b", "Gaze Estimation", 0)];
        let r = score(&[pred("a", Some(0))], &labels).unwrap();
        let rows = report_rows(&r);
        assert_eq!(rows.len(), 5);
        assert_eq!(rows.iter().filter(|r| r.task.is_empty()).count(), 3);
        assert_eq!(r.overall, 50.0);
    }

    #[test]
    fn split_handles_quotes() {
        assert_eq!(split_csv("a,\"b, c\",1").unwrap(), vec!["a", "b, c", "1"]);
        assert_eq!(split_csv("\"x\"\"y\",,2").unwrap(), vec!["x\"y", "", "2"]);
        assert!(split_csv("\"open").is_err());
    }
}
