//! Accuracy and group-fairness gaps of a trained ensemble.
//!
//! Gaps that are undefined on a given split (a group with no positives, or
//! no members) are `None`, never `0`.

use serde::{Deserialize, Serialize};

use crate::boosting::Ensemble;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    /// `TP / (TP + FN)`, undefined without positives.
    pub fn tpr(&self) -> Option<f64> {
        (self.positives() > 0).then(|| self.tp as f64 / self.positives() as f64)
    }

    /// Share of the group predicted positive.
    pub fn positive_rate(&self) -> Option<f64> {
        (self.total() > 0).then(|| (self.tp + self.fp) as f64 / self.total() as f64)
    }
}

/// Confusion counts per protected group, indexed by `a ∈ {0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupConfusion {
    pub groups: [Confusion; 2],
}

impl GroupConfusion {
    pub fn from_predictions(d: &Dataset, predictions: &[i8]) -> Result<Self> {
        if predictions.len() != d.len() {
            return Err(Error::Argument(format!(
                "{} predictions for {} rows",
                predictions.len(),
                d.len()
            )));
        }
        let mut c = Self::default();
        for (e, &p) in d.examples().iter().zip(predictions) {
            let g = &mut c.groups[e.protected() as usize];
            match (e.label() == 1, p == 1) {
                (true, true) => g.tp += 1,
                (true, false) => g.fn_ += 1,
                (false, true) => g.fp += 1,
                (false, false) => g.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(Confusion::total).sum()
    }

    /// The same counts with the group labels swapped.
    pub fn swapped(&self) -> Self {
        Self {
            groups: [self.groups[1], self.groups[0]],
        }
    }
}

pub fn confusion(d: &Dataset, f: &Ensemble) -> Result<GroupConfusion> {
    GroupConfusion::from_predictions(d, &f.predictions(d)?)
}

pub fn accuracy(c: &GroupConfusion) -> Result<f64> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Argument("accuracy of an empty confusion table".into()));
    }
    let correct: usize = c.groups.iter().map(|g| g.tp + g.tn).sum();
    Ok(correct as f64 / total as f64)
}

/// `|TPR_1 - TPR_0|`.
pub fn eopp_gap(c: &GroupConfusion) -> Option<f64> {
    Some((c.groups[1].tpr()? - c.groups[0].tpr()?).abs())
}

/// `|P(Ŷ = 1 | A = 1) - P(Ŷ = 1 | A = 0)|` from counts.
pub fn dp_gap_from_confusion(c: &GroupConfusion) -> Option<f64> {
    Some((c.groups[1].positive_rate()? - c.groups[0].positive_rate()?).abs())
}

pub fn dp_gap(d: &Dataset, f: &Ensemble) -> Result<Option<f64>> {
    Ok(dp_gap_from_confusion(&confusion(d, f)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub eopp_gap: Option<f64>,
    pub dp_gap: Option<f64>,
}

pub fn evaluate(d: &Dataset, f: &Ensemble) -> Result<Evaluation> {
    let c = confusion(d, f)?;
    Ok(Evaluation {
        accuracy: accuracy(&c)?,
        eopp_gap: eopp_gap(&c),
        dp_gap: dp_gap_from_confusion(&c),
    })
}
