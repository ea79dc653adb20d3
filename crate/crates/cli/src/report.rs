use serde::{Deserialize, Serialize};

use lrlm_core::benchmark::BlubReport;

/// One externally-scored model row for the aggregation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRow {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<String>,
    pub sc: f64,
    pub nli: f64,
    pub ner: f64,
    pub qa_em: f64,
    pub qa_f1: f64,
    /// Per-column significance marks; starred in the table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significant: Option<SignificantMarks>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignificantMarks {
    #[serde(default)]
    pub sc: bool,
    #[serde(default)]
    pub nli: bool,
    #[serde(default)]
    pub ner: bool,
    #[serde(default)]
    pub qa: bool,
    #[serde(default)]
    pub blub: bool,
}

/// Fixed-width comparison table; significant scores carry a `*` marker.
/// Output is deterministic for a given input.
pub fn format_score_table(rows: &[ScoreRow], reports: &[BlubReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<20} {:>8} {:>8} {:>8} {:>8} {:>13} {:>8}\n",
        "Model", "Params", "SC", "NLI", "NER", "QA (EM/F1)", "BLUB"
    ));
    for (row, report) in rows.iter().zip(reports) {
        let marks = row.significant.clone().unwrap_or_default();
        let star = |v: f64, on: bool| {
            if on {
                format!("{v:.2}*")
            } else {
                format!("{v:.2}")
            }
        };
        let qa = format!(
            "{}/{}",
            star(row.qa_em, marks.qa),
            star(row.qa_f1, marks.qa)
        );
        out.push_str(&format!(
            "{:<20} {:>8} {:>8} {:>8} {:>8} {:>13} {:>8}\n",
            row.model,
            row.params.clone().unwrap_or_else(|| "-".into()),
            star(row.sc, marks.sc),
            star(row.nli, marks.nli),
            star(row.ner, marks.ner),
            qa,
            star(report.blub, marks.blub),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use lrlm_core::benchmark::blub_report;

    fn row(model: &str, significant: Option<SignificantMarks>) -> ScoreRow {
        ScoreRow {
            model: model.into(),
            params: Some("110M".into()),
            sc: 72.89,
            nli: 82.80,
            ner: 77.78,
            qa_em: 72.63,
            qa_f1: 79.34,
            significant,
        }
    }

    #[test]
    fn one_row_per_model_plus_header() {
        let rows = vec![row("a", None), row("b", None)];
        let reports: Vec<_> = rows
            .iter()
            .map(|r| blub_report(r.sc, r.nli, r.ner, r.qa_em, r.qa_f1).unwrap())
            .collect();
        let table = format_score_table(&rows, &reports);
        assert_eq!(table.lines().count(), 3);
        assert!(table.contains("77.09"));
    }

    #[test]
    fn empty_rows_yield_header_only() {
        let table = format_score_table(&[], &[]);
        assert_eq!(table.lines().count(), 1);
        assert!(table.starts_with("Model"));
    }

    #[test]
    fn significance_marks_star_scores() {
        let rows = vec![row(
            "starred",
            Some(SignificantMarks {
                sc: true,
                nli: false,
                ner: false,
                qa: true,
                blub: true,
            }),
        )];
        let reports: Vec<_> = rows
            .iter()
            .map(|r| blub_report(r.sc, r.nli, r.ner, r.qa_em, r.qa_f1).unwrap())
            .collect();
        let table = format_score_table(&rows, &reports);
        assert!(table.contains("72.89*"));
        assert!(table.contains("82.80"));
        assert!(!table.contains("82.80*"));
        assert!(table.contains("72.63*/79.34*"));
        assert!(table.contains("77.09*"));
    }

    #[test]
    fn deterministic_output() {
        let rows = vec![row("m", None)];
        let reports: Vec<_> = rows
            .iter()
            .map(|r| blub_report(r.sc, r.nli, r.ner, r.qa_em, r.qa_f1).unwrap())
            .collect();
        assert_eq!(
            format_score_table(&rows, &reports),
            format_score_table(&rows, &reports)
        );
    }
}
