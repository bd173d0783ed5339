use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::graph::{BrainGraph, MUTANT};
use super::model::GnnModel;
use crate::error::{Error, Result};

pub const DECISION_THRESHOLD: f64 = 0.5;

/// Confusion counts and percentages with the mutant class as positive.
/// Rates whose denominator is zero are `NaN` (written as `null`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    #[serde(with = "nan_as_null")]
    pub accuracy: f64,
    #[serde(with = "nan_as_null")]
    pub sensitivity: f64,
    #[serde(with = "nan_as_null")]
    pub specificity: f64,
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        100.0 * num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        Self {
            tp,
            fp,
            tn,
            fn_,
            accuracy: percent(tp + tn, tp + tn + fp + fn_),
            sensitivity: percent(tp, tp + fn_),
            specificity: percent(tn, tn + fp),
        }
    }

    pub fn from_predictions(predicted: &[u8], labels: &[u8]) -> Result<Self> {
        if predicted.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} predictions for {} labels",
                predicted.len(),
                labels.len()
            )));
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&p, &y) in predicted.iter().zip(labels) {
            match (p == MUTANT, y == MUTANT) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Ok(Self::from_counts(tp, fp, tn, fn_))
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Thresholds inference-mode probabilities at 0.5 (`p >= 0.5` is mutant).
pub fn evaluate(model: &GnnModel, graphs: &[BrainGraph]) -> Result<Metrics> {
    if graphs.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty set".into()));
    }
    let mut predicted = Vec::with_capacity(graphs.len());
    for g in graphs {
        predicted.push(u8::from(model.predict(g)? >= DECISION_THRESHOLD));
    }
    let labels: Vec<u8> = graphs.iter().map(|g| g.label).collect();
    Metrics::from_predictions(&predicted, &labels)
}

mod nan_as_null {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_confusion_matrix() {
        let m = Metrics::from_predictions(&[1, 0, 1, 1], &[1, 0, 0, 1]).unwrap();
        assert_eq!((m.tp, m.fn_, m.tn, m.fp), (2, 0, 1, 1));
        assert_eq!((m.accuracy, m.sensitivity, m.specificity), (75.0, 100.0, 50.0));
    }

    #[test]
    fn perfect_classifier() {
        let y = [1, 0, 0, 1, 0];
        let m = Metrics::from_predictions(&y, &y).unwrap();
        assert_eq!((m.accuracy, m.sensitivity, m.specificity), (100.0, 100.0, 100.0));
    }

    #[test]
    fn undefined_rate_round_trips_as_null() {
        let m = Metrics::from_predictions(&[0, 0], &[0, 0]).unwrap();
        assert!(m.sensitivity.is_nan());
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"sensitivity\":null"));
        let back: Metrics = serde_json::from_str(&json).unwrap();
        assert!(back.sensitivity.is_nan());
        assert_eq!(back.specificity, 100.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(Metrics::from_predictions(&[1], &[1, 0]).is_err());
    }

    proptest! {
        #[test]
        fn identities_hold(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..60)) {
            let (p, y): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let m = Metrics::from_predictions(&p, &y).unwrap();
            prop_assert_eq!(m.total(), p.len());
            let acc = 100.0 * (m.tp + m.tn) as f64 / (m.tp + m.tn + m.fp + m.fn_) as f64;
            prop_assert_eq!(m.accuracy, acc);
            if m.tp + m.fn_ > 0 {
                prop_assert_eq!(m.sensitivity, 100.0 * m.tp as f64 / (m.tp + m.fn_) as f64);
            } else {
                prop_assert!(m.sensitivity.is_nan());
            }
            if m.tn + m.fp > 0 {
                prop_assert_eq!(m.specificity, 100.0 * m.tn as f64 / (m.tn + m.fp) as f64);
            } else {
                prop_assert!(m.specificity.is_nan());
            }
        }
    }
}
