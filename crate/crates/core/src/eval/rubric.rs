use serde::{Deserialize, Serialize, Serializer};

use super::EvalError;

pub const RUBRIC_MIN: u8 = 1;
pub const RUBRIC_MAX: u8 = 10;

/// One evaluator's judgement of one report, each criterion on a 1–10 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawScore")]
pub struct RubricScore {
    completeness: u8,
    relevance: u8,
    accuracy: u8,
    clarity_readability: u8,
}

#[derive(Deserialize)]
struct RawScore {
    completeness: u8,
    relevance: u8,
    accuracy: u8,
    clarity_readability: u8,
}

impl TryFrom<RawScore> for RubricScore {
    type Error = EvalError;

    fn try_from(r: RawScore) -> Result<Self, EvalError> {
        RubricScore::new(
            r.completeness,
            r.relevance,
            r.accuracy,
            r.clarity_readability,
        )
    }
}

impl RubricScore {
    pub fn new(
        completeness: u8,
        relevance: u8,
        accuracy: u8,
        clarity_readability: u8,
    ) -> Result<Self, EvalError> {
        for (criterion, value) in [
            ("completeness", completeness),
            ("relevance", relevance),
            ("accuracy", accuracy),
            ("clarity_readability", clarity_readability),
        ] {
            if !(RUBRIC_MIN..=RUBRIC_MAX).contains(&value) {
                return Err(EvalError::RubricOutOfRange { criterion, value });
            }
        }
        Ok(Self {
            completeness,
            relevance,
            accuracy,
            clarity_readability,
        })
    }

    /// Same score on every criterion.
    pub fn uniform(v: u8) -> Result<Self, EvalError> {
        Self::new(v, v, v, v)
    }

    pub fn completeness(&self) -> u8 {
        self.completeness
    }
    pub fn relevance(&self) -> u8 {
        self.relevance
    }
    pub fn accuracy(&self) -> u8 {
        self.accuracy
    }
    pub fn clarity_readability(&self) -> u8 {
        self.clarity_readability
    }

    fn as_array(&self) -> [f64; 4] {
        [
            self.completeness as f64,
            self.relevance as f64,
            self.accuracy as f64,
            self.clarity_readability as f64,
        ]
    }
}

fn two_decimals<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    let raw = serde_json::value::RawValue::from_string(format!("{v:.2}"))
        .map_err(serde::ser::Error::custom)?;
    raw.serialize(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionStats {
    #[serde(serialize_with = "two_decimals")]
    pub mean: f64,
    /// Population standard deviation.
    #[serde(serialize_with = "two_decimals")]
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricAggregate {
    pub completeness: CriterionStats,
    pub relevance: CriterionStats,
    pub accuracy: CriterionStats,
    pub clarity_readability: CriterionStats,
    /// Number of samples aggregated.
    pub n: usize,
}

fn stats(values: &[f64]) -> CriterionStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    CriterionStats {
        mean,
        sd: var.sqrt(),
    }
}

fn aggregate_rows(rows: &[[f64; 4]]) -> RubricAggregate {
    let col = |i: usize| stats(&rows.iter().map(|r| r[i]).collect::<Vec<_>>());
    RubricAggregate {
        completeness: col(0),
        relevance: col(1),
        accuracy: col(2),
        clarity_readability: col(3),
        n: rows.len(),
    }
}

/// Per-criterion mean and population standard deviation.
pub fn aggregate_rubric(scores: &[RubricScore]) -> Result<RubricAggregate, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let rows: Vec<[f64; 4]> = scores.iter().map(RubricScore::as_array).collect();
    Ok(aggregate_rows(&rows))
}

/// Aggregates samples scored by several raters: each sample's raters are
/// averaged first, then mean and standard deviation are taken across
/// samples. Integer scores alone cannot produce a mean such as 8.02 over 25
/// samples; a two-rater panel can.
pub fn aggregate_panel(samples: &[Vec<RubricScore>]) -> Result<RubricAggregate, EvalError> {
    if samples.is_empty() || samples.iter().any(Vec::is_empty) {
        return Err(EvalError::EmptyInput);
    }
    let rows: Vec<[f64; 4]> = samples
        .iter()
        .map(|raters| {
            let mut acc = [0.0; 4];
            for r in raters {
                for (a, v) in acc.iter_mut().zip(r.as_array()) {
                    *a += v;
                }
            }
            acc.map(|a| a / raters.len() as f64)
        })
        .collect();
    Ok(aggregate_rows(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_enforced() {
        assert!(RubricScore::new(0, 5, 5, 5).is_err());
        assert!(RubricScore::new(5, 5, 5, 11).is_err());
        assert!(RubricScore::uniform(10).is_ok());
        assert!(serde_json::from_str::<RubricScore>(
            r#"{"completeness":12,"relevance":5,"accuracy":5,"clarity_readability":5}"#
        )
        .is_err());
    }

    #[test]
    fn single_and_pair() {
        let s = RubricScore::new(7, 8, 9, 6).unwrap();
        let a = aggregate_rubric(&[s]).unwrap();
        assert_eq!(a.relevance.mean, 8.0);
        assert_eq!(a.relevance.sd, 0.0);
        let a = aggregate_rubric(&[
            RubricScore::uniform(6).unwrap(),
            RubricScore::uniform(8).unwrap(),
        ])
        .unwrap();
        assert_eq!(a.completeness.mean, 7.0);
        assert_eq!(a.completeness.sd, 1.0);
        assert!(matches!(aggregate_rubric(&[]), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn panel_reaches_fractional_means() {
        // 24 samples rated (8, 8), one rated (8, 9): sample means 24 × 8.0 and 8.5.
        let eight = RubricScore::uniform(8).unwrap();
        let nine = RubricScore::uniform(9).unwrap();
        let mut samples = vec![vec![eight, eight]; 24];
        samples.push(vec![eight, nine]);
        let a = aggregate_panel(&samples).unwrap();
        assert!((a.completeness.mean - 8.02).abs() < 1e-12);
        // population variance: (24·0.02² + 0.48²)/25 = 0.0096
        assert!((a.completeness.sd - 0.0096f64.sqrt()).abs() < 1e-12);
        let json = serde_json::to_string(&a.completeness).unwrap();
        assert_eq!(json, r#"{"mean":8.02,"sd":0.10}"#);
    }
}
