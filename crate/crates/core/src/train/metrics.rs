//! Classification metrics with "ready" as the positive class, latency
//! statistics, and fold summaries.

use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// Counts from class indices where 1 is "ready".
    pub fn from_predictions(predicted: &[usize], actual: &[usize]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} labels",
                predicted.len(),
                actual.len()
            )));
        }
        let mut c = Self::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (1, 1) => c.tp += 1,
                (0, 0) => c.tn += 1,
                (1, 0) => c.fp += 1,
                (0, 1) => c.fn_ += 1,
                _ => return Err(Error::Contract(format!("class index out of range: {p} / {a}"))),
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total().max(1) as f64
    }

    /// `None` when nothing was predicted ready.
    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// `None` when no sample is ready.
    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }
}

/// Per-clip latency in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub median_ms: f64,
    pub p95_ms: f64,
    pub samples: usize,
}

impl LatencyStats {
    /// Nearest-rank percentiles.
    pub fn from_durations(d: &[Duration]) -> Option<Self> {
        if d.is_empty() {
            return None;
        }
        let mut ms: Vec<f64> = d.iter().map(|x| x.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let rank = |q: f64| ms[((q * ms.len() as f64).ceil() as usize).clamp(1, ms.len()) - 1];
        Some(Self {
            median_ms: rank(0.5),
            p95_ms: rank(0.95),
            samples: ms.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub confusion: Confusion,
    pub latency: Option<LatencyStats>,
}

impl MetricsReport {
    pub fn from_confusion(confusion: Confusion, latency: Option<LatencyStats>) -> Self {
        Self {
            accuracy: confusion.accuracy(),
            precision: confusion.precision(),
            recall: confusion.recall(),
            confusion,
            latency,
        }
    }

    /// The same report without timing, for comparisons across runs.
    pub fn without_latency(&self) -> Self {
        Self {
            latency: None,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Mean and population std of the defined values; `None` if there are none.
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: v.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub accuracy: MeanStd,
    pub precision: Option<MeanStd>,
    pub recall: Option<MeanStd>,
}

impl FoldSummary {
    pub fn of(folds: &[MetricsReport]) -> Option<Self> {
        Some(Self {
            accuracy: MeanStd::of(folds.iter().map(|f| Some(f.accuracy)))?,
            precision: MeanStd::of(folds.iter().map(|f| f.precision)),
            recall: MeanStd::of(folds.iter().map(|f| f.recall)),
        })
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x))
}

fn pct_pm(v: Option<MeanStd>) -> String {
    v.map_or_else(|| "n/a".to_string(), |m| format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std))
}

/// One row of a results table: model, parameters, A, P, R, cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub parameters: usize,
    pub accuracy: String,
    pub precision: String,
    pub recall: String,
    pub cost: String,
}

impl TableRow {
    pub fn single(model: &str, parameters: usize, m: &MetricsReport) -> Self {
        Self {
            model: model.to_string(),
            parameters,
            accuracy: pct(Some(m.accuracy)),
            precision: pct(m.precision),
            recall: pct(m.recall),
            cost: m.latency.map_or_else(|| "-".into(), |l| format!("{:.2}ms", l.median_ms)),
        }
    }

    pub fn summary(model: &str, parameters: usize, s: &FoldSummary, latency: Option<LatencyStats>) -> Self {
        Self {
            model: model.to_string(),
            parameters,
            accuracy: pct_pm(Some(s.accuracy)),
            precision: pct_pm(s.precision),
            recall: pct_pm(s.recall),
            cost: latency.map_or_else(|| "-".into(), |l| format!("{:.2}ms", l.median_ms)),
        }
    }
}

/// Groups digits in threes: 270338 → "270,338".
pub fn thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Aligned text table with percentages for A, P, R.
pub fn render_table(rows: &[TableRow]) -> String {
    let header = ["model", "parameters", "A (%)", "P (%)", "R (%)", "cost"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                thousands(r.parameters),
                r.accuracy.clone(),
                r.precision.clone(),
                r.recall.clone(),
                r.cost.clone(),
            ]
        })
        .collect();
    let mut width = header.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[String]| {
        for (i, c) in row.iter().enumerate() {
            let pad = width[i] - c.chars().count();
            if i == 0 {
                let _ = write!(out, "{c}{}", " ".repeat(pad));
            } else {
                let _ = write!(out, "  {}{c}", " ".repeat(pad));
            }
        }
        out.push('\n');
    };
    line(&mut out, &header.map(String::from));
    let rule: Vec<String> = width.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut out, &rule);
    for row in &cells {
        line(&mut out, row);
    }
    out
}
