use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Averaging, ComplianceMetrics, EvalError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `b - a`
    pub delta: f64,
    /// `delta / a` as a percentage; `None` when `a` is zero.
    pub relative_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub averaging: Averaging,
    pub universe_size: usize,
    pub rows: Vec<MetricDelta>,
}

impl DeltaTable {
    pub fn row(&self, metric: &str) -> Option<&MetricDelta> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    /// Fixed-width text table, four decimals throughout.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14}{:>10}{:>10}{:>10}{:>11}",
            "metric", "a", "b", "delta", "relative"
        );
        for r in &self.rows {
            let rel = match r.relative_pct {
                Some(p) => format!("{p:+.2}%"),
                None => "n/a".to_string(),
            };
            let _ = writeln!(
                out,
                "{:<14}{:>10.4}{:>10.4}{:>+10.4}{:>11}",
                r.metric, r.a, r.b, r.delta, rel
            );
        }
        let _ = writeln!(
            out,
            "averaging: {}  universe_size: {}",
            self.averaging, self.universe_size
        );
        out
    }
}

/// Metric-by-metric differences between two runs, with `a` as the base.
pub fn compare_runs(a: &ComplianceMetrics, b: &ComplianceMetrics) -> Result<DeltaTable, EvalError> {
    if a.averaging != b.averaging {
        return Err(EvalError::ModeMismatch {
            a: a.averaging,
            b: b.averaging,
        });
    }
    if a.universe_size != b.universe_size {
        return Err(EvalError::UniverseMismatch {
            a: a.universe_size,
            b: b.universe_size,
        });
    }
    let rows = [
        ("hamming_loss", a.hamming_loss, b.hamming_loss),
        ("precision", a.precision, b.precision),
        ("recall", a.recall, b.recall),
        ("f1", a.f1, b.f1),
    ]
    .into_iter()
    .map(|(metric, va, vb)| {
        let delta = vb - va;
        MetricDelta {
            metric: metric.to_string(),
            a: va,
            b: vb,
            delta,
            relative_pct: (va != 0.0).then(|| delta / va * 100.0),
        }
    })
    .collect();
    Ok(DeltaTable {
        averaging: a.averaging,
        universe_size: a.universe_size,
        rows,
    })
}
