use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One task's scored result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub metric: String,
    pub value: MetricValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Single(f64),
    EmF1 { em: f64, f1: f64 },
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| (0.0..=100.0).contains(&v);
        let valid = match self.value {
            MetricValue::Single(v) => ok(v),
            MetricValue::EmF1 { em, f1 } => ok(em) && ok(f1),
        };
        if !valid {
            return Err(Error::Metric(format!(
                "metric value out of [0, 100] in {self:?}"
            )));
        }
        Ok(())
    }
}

/// The benchmark headline: the five per-task values and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlubReport {
    pub sc: f64,
    pub nli: f64,
    pub ner: f64,
    pub qa_em: f64,
    pub qa_f1: f64,
    pub blub: f64,
}

/// Round half away from zero to two decimals, the convention used when
/// reporting scores.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Arithmetic mean of the five task values (EM and F1 each count once),
/// reported to two decimals. Inputs must lie in [0, 100].
pub fn blub_score(sc: f64, nli: f64, ner: f64, qa_em: f64, qa_f1: f64) -> Result<f64> {
    for (name, v) in [
        ("sc", sc),
        ("nli", nli),
        ("ner", ner),
        ("qa_em", qa_em),
        ("qa_f1", qa_f1),
    ] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::Metric(format!("{name} = {v} outside [0, 100]")));
        }
    }
    Ok(round2((sc + nli + ner + qa_em + qa_f1) / 5.0))
}

pub fn blub_report(sc: f64, nli: f64, ner: f64, qa_em: f64, qa_f1: f64) -> Result<BlubReport> {
    Ok(BlubReport {
        sc,
        nli,
        ner,
        qa_em,
        qa_f1,
        blub: blub_score(sc, nli, ner, qa_em, qa_f1)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_row_values_reproduce() {
        // strongest supervised row
        assert_eq!(blub_score(72.89, 82.80, 77.78, 72.63, 79.34).unwrap(), 77.09);
        // zero-shot mBERT row
        assert_eq!(blub_score(27.05, 62.22, 39.27, 59.01, 64.18).unwrap(), 50.35);
    }

    #[test]
    fn five_equal_values_average_to_themselves() {
        for x in [0.0, 33.33, 77.7, 100.0] {
            assert_eq!(blub_score(x, x, x, x, x).unwrap(), round2(x));
        }
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(blub_score(101.0, 50.0, 50.0, 50.0, 50.0).is_err());
        assert!(blub_score(99.0, 50.0, 50.0, 50.0, -0.01).is_err());
    }

    #[test]
    fn metric_report_validation() {
        let ok = MetricReport {
            task: "nli".into(),
            metric: "accuracy".into(),
            value: MetricValue::Single(82.8),
        };
        assert!(ok.validate().is_ok());
        let bad = MetricReport {
            task: "qa".into(),
            metric: "em_f1".into(),
            value: MetricValue::EmF1 { em: 101.0, f1: 50.0 },
        };
        assert!(bad.validate().is_err());
    }
}
