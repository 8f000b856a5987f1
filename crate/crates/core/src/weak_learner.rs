//! Decision stumps fit by an exact weighted-error sweep.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::distributions::SimplexWeights;
use crate::error::{Error, Result};

/// Predicts `polarity` when `x[feature] > threshold`, else `-polarity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionStump {
    pub feature: usize,
    pub threshold: f64,
    pub polarity: i8,
}

impl DecisionStump {
    pub fn new(feature: usize, threshold: f64, polarity: i8) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::Argument(format!("stump threshold must be finite, got {threshold}")));
        }
        if polarity != 1 && polarity != -1 {
            return Err(Error::Argument(format!("stump polarity must be ±1, got {polarity}")));
        }
        Ok(Self {
            feature,
            threshold,
            polarity,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<i8> {
        let v = x.get(self.feature).ok_or_else(|| {
            Error::Argument(format!("feature {} out of range for width {}", self.feature, x.len()))
        })?;
        Ok(self.predict_value(*v))
    }

    #[inline]
    pub(crate) fn predict_value(&self, v: f64) -> i8 {
        if v > self.threshold {
            self.polarity
        } else {
            -self.polarity
        }
    }

    /// `y_i h(x_i) ∈ {-1, +1}` for every example.
    pub fn margins(&self, d: &Dataset) -> Result<Vec<i8>> {
        if self.feature >= d.width() {
            return Err(Error::Argument(format!(
                "feature {} out of range for width {}",
                self.feature,
                d.width()
            )));
        }
        Ok(d.examples()
            .iter()
            .map(|e| e.label() * self.predict_value(e.features()[self.feature]))
            .collect())
    }
}

pub fn predict(h: &DecisionStump, x: &[f64]) -> Result<i8> {
    h.predict(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StumpFitReport {
    pub stump: DecisionStump,
    /// Weighted 0-1 error under the fitting weights; never above `0.5`.
    pub weighted_error: f64,
    pub candidates: usize,
}

fn check_weights(d: &Dataset, p: &SimplexWeights) -> Result<()> {
    if p.len() != d.len() {
        return Err(Error::Argument(format!(
            "weights have length {}, dataset has {} rows",
            p.len(),
            d.len()
        )));
    }
    Ok(())
}

/// `P_{i∼p}(y_i ≠ h(x_i))`.
pub fn weighted_error(h: &DecisionStump, d: &Dataset, p: &SimplexWeights) -> Result<f64> {
    check_weights(d, p)?;
    Ok(h.margins(d)?
        .iter()
        .zip(p.iter())
        .filter(|(m, _)| **m < 0)
        .map(|(_, w)| w)
        .sum())
}

/// `½ E_{i∼p}[y_i h(x_i)]`.
pub fn edge(h: &DecisionStump, d: &Dataset, p: &SimplexWeights) -> Result<f64> {
    check_weights(d, p)?;
    Ok(0.5
        * h.margins(d)?
            .iter()
            .zip(p.iter())
            .map(|(m, w)| f64::from(*m) * w)
            .sum::<f64>())
}

/// Per-feature sort orders, computed once and reused across rounds.
#[derive(Debug, Clone)]
pub struct StumpFitter<'a> {
    data: &'a Dataset,
    orders: Vec<Vec<usize>>,
}

impl<'a> StumpFitter<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        let orders = (0..data.width())
            .map(|j| {
                let mut idx: Vec<usize> = (0..data.len()).collect();
                idx.sort_by(|&a, &b| {
                    let (x, y) = (data.example(a).features()[j], data.example(b).features()[j]);
                    x.partial_cmp(&y).unwrap_or(Ordering::Equal).then(a.cmp(&b))
                });
                idx
            })
            .collect();
        Self { data, orders }
    }

    /// Exact minimizer of weighted error over every (feature, threshold,
    /// polarity). Thresholds are a sentinel below the minimum plus the
    /// midpoints between consecutive distinct values. Ties go to the lower
    /// feature, then the lower threshold, then polarity `+1`.
    pub fn fit(&self, weights: &SimplexWeights) -> Result<StumpFitReport> {
        let d = self.data;
        if d.is_empty() {
            return Err(Error::Argument("cannot fit a stump to zero rows".into()));
        }
        check_weights(d, weights)?;
        if d.width() == 0 {
            return Err(Error::Argument("cannot fit a stump with zero features".into()));
        }
        let total: f64 = weights.iter().sum();
        let neg_mass: f64 = d
            .examples()
            .iter()
            .zip(weights.iter())
            .filter(|(e, _)| !e.is_positive())
            .map(|(_, w)| w)
            .sum();

        let mut best: Option<(f64, DecisionStump)> = None;
        let mut candidates = 0;
        let mut offer = |err: f64, stump: DecisionStump| {
            if best.as_ref().is_none_or(|(b, _)| err < *b) {
                best = Some((err, stump));
            }
        };

        for (j, order) in self.orders.iter().enumerate() {
            let value = |i: usize| d.example(order[i]).features()[j];
            let min = value(0);
            // Threshold below every value: all examples predicted `polarity`.
            let mut err_pos = neg_mass;
            let sentinel = min - 1f64.max(min.abs());
            candidates += 2;
            offer(err_pos, DecisionStump { feature: j, threshold: sentinel, polarity: 1 });
            offer(total - err_pos, DecisionStump { feature: j, threshold: sentinel, polarity: -1 });

            let mut i = 0;
            while i < order.len() {
                let v = value(i);
                // Move the whole block of equal values below the threshold.
                while i < order.len() && value(i) == v {
                    let e = d.example(order[i]);
                    let w = weights.get(order[i]);
                    if e.is_positive() {
                        err_pos += w;
                    } else {
                        err_pos -= w;
                    }
                    i += 1;
                }
                if i == order.len() {
                    break;
                }
                let next = value(i);
                let mut threshold = v + (next - v) / 2.0;
                if !(threshold < next) {
                    threshold = v;
                }
                candidates += 2;
                offer(err_pos, DecisionStump { feature: j, threshold, polarity: 1 });
                offer(total - err_pos, DecisionStump { feature: j, threshold, polarity: -1 });
            }
        }

        let (_, stump) = best.expect("at least one candidate per feature");
        // Report the error by direct summation rather than the running sum.
        let weighted_error = weighted_error(&stump, d, weights)?;
        Ok(StumpFitReport {
            stump,
            weighted_error,
            candidates,
        })
    }
}

pub fn fit_stump(d: &Dataset, weights: &SimplexWeights) -> Result<StumpFitReport> {
    StumpFitter::new(d).fit(weights)
}
