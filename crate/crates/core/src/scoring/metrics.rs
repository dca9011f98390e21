use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A prediction or reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Index(usize),
    Text(String),
    /// Nothing could be extracted; never correct.
    NoAnswer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    ExactMatch,
}

/// Trims, lowercases and collapses internal whitespace runs to one space.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

fn correct(pred: &Answer, reference: &Answer, metric: Metric) -> bool {
    match (pred, reference) {
        (Answer::Index(a), Answer::Index(b)) => a == b,
        (Answer::Text(a), Answer::Text(b)) => match metric {
            Metric::Accuracy => a == b,
            Metric::ExactMatch => normalize_answer(a) == normalize_answer(b),
        },
        _ => false,
    }
}

/// Fraction of predictions that match their reference.
pub fn compute_metrics(
    predictions: &[Answer],
    references: &[Answer],
    metric: Metric,
) -> Result<f64> {
    if predictions.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} references",
            predictions.len(),
            references.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Contract("no predictions to score".into()));
    }
    let hits = predictions
        .iter()
        .zip(references)
        .filter(|(p, r)| correct(p, r, metric))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn idx(v: &[usize]) -> Vec<Answer> {
        v.iter().map(|&i| Answer::Index(i)).collect()
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(
            compute_metrics(&idx(&[1, 2]), &idx(&[1, 2]), Metric::Accuracy).unwrap(),
            1.0
        );
        let acc = compute_metrics(&idx(&[0, 1, 1]), &idx(&[0, 1, 0]), Metric::Accuracy).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn exact_match_normalizes() {
        let p = vec![
            Answer::Text("  Yes ".into()),
            Answer::Text("New   York".into()),
        ];
        let r = vec![Answer::Text("yes".into()), Answer::Text("new york".into())];
        assert_eq!(compute_metrics(&p, &r, Metric::ExactMatch).unwrap(), 1.0);
        assert_eq!(compute_metrics(&p, &r, Metric::Accuracy).unwrap(), 0.0);
    }

    #[test]
    fn no_answer_is_wrong() {
        let p = vec![Answer::NoAnswer];
        let r = vec![Answer::Text("4".into())];
        assert_eq!(compute_metrics(&p, &r, Metric::ExactMatch).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_and_empty() {
        assert!(compute_metrics(&idx(&[1]), &idx(&[1, 2]), Metric::Accuracy).is_err());
        assert!(compute_metrics(&[], &[], Metric::Accuracy).is_err());
    }
}
