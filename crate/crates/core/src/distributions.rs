//! Points on the probability simplex, divergences between them, and the
//! constraint features that define fairness polytopes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-9;

/// A probability vector over the `n` training examples.
///
/// Serializes as a plain JSON array. When built from log-domain values the
/// logs are kept so divergences can avoid re-taking `ln` of tiny weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexWeights {
    weights: Vec<f64>,
    log_weights: Option<Vec<f64>>,
}

impl SimplexWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Argument("simplex weights must be non-empty".into()));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
        {
            return Err(Error::Argument(format!("weight {i} is {w}, expected finite and >= 0")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Argument(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self {
            weights,
            log_weights: None,
        })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("simplex weights must be non-empty".into()));
        }
        let w = 1.0 / n as f64;
        Ok(Self {
            weights: vec![w; n],
            log_weights: Some(vec![-(n as f64).ln(); n]),
        })
    }

    /// Normalize non-negative masses onto the simplex.
    pub fn normalize(mass: Vec<f64>) -> Result<Self> {
        if mass.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Argument("masses must be finite and >= 0".into()));
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Argument("masses sum to zero".into()));
        }
        Self::new(mass.into_iter().map(|m| m / total).collect())
    }

    /// Normalize from unnormalized log-masses using a max shift.
    pub fn from_log_mass(log_mass: &[f64]) -> Result<Self> {
        if log_mass.is_empty() {
            return Err(Error::Argument("simplex weights must be non-empty".into()));
        }
        if let Some(v) = log_mass.iter().find(|v| v.is_nan() || **v == f64::INFINITY) {
            return Err(Error::Numeric(format!("log-mass {v} cannot be normalized")));
        }
        let lse = log_sum_exp(log_mass);
        if !lse.is_finite() {
            return Err(Error::Numeric("all log-masses are -inf".into()));
        }
        let log_weights: Vec<f64> = log_mass.iter().map(|v| v - lse).collect();
        let weights = log_weights.iter().map(|v| v.exp()).collect();
        Ok(Self {
            weights,
            log_weights: Some(log_weights),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().copied()
    }

    /// `ln w_i`, from the cache when available.
    pub fn log_weight(&self, i: usize) -> f64 {
        match &self.log_weights {
            Some(l) => l[i],
            None => self.weights[i].ln(),
        }
    }

    /// Expectation `Σ_i w_i v_i`.
    pub fn dot(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

impl TryFrom<Vec<f64>> for SimplexWeights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SimplexWeights> for Vec<f64> {
    fn from(w: SimplexWeights) -> Self {
        w.weights
    }
}

/// `ln Σ exp(v_i)`, shifted by the max. Returns `-inf` if every term is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-example margins `y_i f(x_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarginVector(Vec<f64>);

impl MarginVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some((i, m)) = scores.iter().enumerate().find(|(_, m)| !m.is_finite()) {
            return Err(Error::Numeric(format!("margin {i} is {m}")));
        }
        Ok(Self(scores))
    }

    /// Margins of the empty ensemble `f_0 ≡ 0`.
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// The distribution AdaBoost maintains: `q_i ∝ exp(-margin_i)`.
pub fn exponential_weights(margins: &MarginVector) -> Result<SimplexWeights> {
    if margins.is_empty() {
        return Err(Error::Argument("no margins".into()));
    }
    if let Some(m) = margins.as_slice().iter().find(|m| !m.is_finite()) {
        return Err(Error::Numeric(format!("non-finite margin {m}")));
    }
    let neg: Vec<f64> = margins.as_slice().iter().map(|m| -m).collect();
    SimplexWeights::from_log_mass(&neg)
}

fn check_lengths(p: &SimplexWeights, q: &SimplexWeights) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Argument(format!(
            "distributions have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

/// `KL(p || q)` in nats, with `0 ln(0/q) = 0`.
pub fn kl_divergence(p: &SimplexWeights, q: &SimplexWeights) -> Result<f64> {
    check_lengths(p, q)?;
    let mut kl = 0.0;
    for i in 0..p.len() {
        let pi = p.get(i);
        if pi == 0.0 {
            continue;
        }
        if q.log_weight(i) == f64::NEG_INFINITY {
            return Err(Error::InfiniteDivergence { index: i });
        }
        kl += pi * (p.log_weight(i) - q.log_weight(i));
    }
    // Each term's rounding can leave a tiny negative total when p ≈ q.
    Ok(kl.max(0.0))
}

pub fn total_variation(p: &SimplexWeights, q: &SimplexWeights) -> Result<f64> {
    check_lengths(p, q)?;
    Ok(0.5 * p.iter().zip(q.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `sqrt(KL(w || q) / 2)`: the Pinsker bound on `TV(w, q)` and on how much
/// a weak learner's edge can move between the two distributions.
pub fn pinsker_delta(w: &SimplexWeights, q: &SimplexWeights) -> Result<f64> {
    Ok(delta_from_kl(kl_divergence(w, q)?))
}

pub fn delta_from_kl(kl: f64) -> f64 {
    (kl.max(0.0) / 2.0).sqrt()
}

/// Which fairness surrogate to encode as constraint features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surrogate {
    /// Demographic parity: balance total weight across groups.
    Dp,
    /// Equal opportunity: balance total weight on positives across groups.
    Eopp,
    /// Equalized odds: balance positives and negatives separately (K = 2).
    Eodds,
}

impl FromStr for Surrogate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dp" => Ok(Surrogate::Dp),
            "eopp" => Ok(Surrogate::Eopp),
            "eodds" => Ok(Surrogate::Eodds),
            other => Err(Error::Argument(format!(
                "unknown surrogate `{other}` (expected dp, eopp or eodds)"
            ))),
        }
    }
}

impl fmt::Display for Surrogate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Surrogate::Dp => "dp",
            Surrogate::Eopp => "eopp",
            Surrogate::Eodds => "eodds",
        })
    }
}

/// The `K × n` matrix `g` with `|g[k][i]| <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFeatures {
    rows: Vec<Vec<f64>>,
    bound: f64,
    labels: Vec<String>,
}

impl ConstraintFeatures {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Argument("need at least one constraint row".into()));
        }
        if labels.len() != rows.len() {
            return Err(Error::Argument("one label per constraint row".into()));
        }
        let n = rows[0].len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Argument("constraint rows must be non-empty and equal length".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("constraint features must be finite".into()));
        }
        let bound = rows.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
        Ok(Self { rows, bound, labels })
    }

    /// Number of constraints `K`.
    pub fn k(&self) -> usize {
        self.rows.len()
    }

    /// Number of examples `n`.
    pub fn n(&self) -> usize {
        self.rows[0].len()
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `λᵀ g(i)`.
    pub fn tilt(&self, lambda: &[f64], i: usize) -> f64 {
        self.rows.iter().zip(lambda).map(|(r, l)| l * r[i]).sum()
    }

    /// `⟨w, g_k⟩` for every `k`.
    pub fn moments(&self, w: &SimplexWeights) -> Vec<f64> {
        self.rows.iter().map(|r| w.dot(r)).collect()
    }

    /// `max_k |⟨w, g_k⟩|`.
    pub fn max_abs_moment(&self, w: &SimplexWeights) -> f64 {
        self.moments(w).into_iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn group_sign(a: u8) -> f64 {
    if a == 1 {
        1.0
    } else {
        -1.0
    }
}

pub fn build_constraints(d: &Dataset, surrogate: Surrogate) -> ConstraintFeatures {
    let c = d.group_counts();
    if c.total[0] == 0 || c.total[1] == 0 {
        log::warn!("only one protected group present; fairness constraints are one-sided");
    }
    let signed = |keep: &dyn Fn(i8) -> bool| -> Vec<f64> {
        d.examples()
            .iter()
            .map(|e| if keep(e.label()) { group_sign(e.protected()) } else { 0.0 })
            .collect()
    };
    let (rows, labels) = match surrogate {
        Surrogate::Dp => (vec![signed(&|_| true)], vec!["dp"]),
        Surrogate::Eopp => (vec![signed(&|y| y == 1)], vec!["eopp"]),
        Surrogate::Eodds => (
            vec![signed(&|y| y == 1), signed(&|y| y == -1)],
            vec!["eodds_pos", "eodds_neg"],
        ),
    };
    let labels = labels.into_iter().map(str::to_string).collect();
    let mut g = ConstraintFeatures::new(rows, labels).expect("dataset is non-empty");
    // Declared bound is 1 even if a degenerate dataset leaves every entry 0.
    g.bound = 1.0;
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sw(v: &[f64]) -> SimplexWeights {
        SimplexWeights::new(v.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn zero_margins_give_uniform() {
        let q = exponential_weights(&MarginVector::zeros(5)).unwrap();
        assert!(q.iter().all(|v| close(v, 0.2, 1e-15)));
    }

    #[test]
    fn exponential_weights_closed_form() {
        let q = exponential_weights(&MarginVector::new(vec![2f64.ln(), 0.0]).unwrap()).unwrap();
        assert!(close(q.get(0), 1.0 / 3.0, 1e-15));
        assert!(close(q.get(1), 2.0 / 3.0, 1e-15));
    }

    #[test]
    fn exponential_weights_large_margins_do_not_overflow() {
        let e = std::f64::consts::E;
        let q = exponential_weights(&MarginVector::new(vec![1000.0, 1001.0]).unwrap()).unwrap();
        // same answer as the unshifted formula at small offsets
        let small = exponential_weights(&MarginVector::new(vec![0.0, 1.0]).unwrap()).unwrap();
        assert!(close(q.get(0), e / (e + 1.0), 1e-12));
        assert!(close(q.get(1), 1.0 / (e + 1.0), 1e-12));
        assert!(close(q.get(0), small.get(0), 1e-12));
        assert!(close(q.get(0), 0.7311, 1e-4));
    }

    #[test]
    fn non_finite_margin_is_rejected() {
        assert!(matches!(MarginVector::new(vec![0.0, f64::NAN]), Err(Error::Numeric(_))));
    }

    #[test]
    fn kl_examples() {
        let p = sw(&[0.3, 0.7]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert!(close(kl_divergence(&sw(&[1.0, 0.0]), &sw(&[0.5, 0.5])).unwrap(), 2f64.ln(), 1e-15));
        let direct = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        let kl = kl_divergence(&sw(&[0.5, 0.5]), &sw(&[0.9, 0.1])).unwrap();
        assert!(close(kl, direct, 1e-15));
        assert!(close(kl, 0.5108, 1e-4));
    }

    #[test]
    fn kl_support_violation_is_distinct() {
        let r = kl_divergence(&sw(&[0.5, 0.5]), &sw(&[1.0, 0.0]));
        assert!(matches!(r, Err(Error::InfiniteDivergence { index: 1 })));
    }

    #[test]
    fn tv_and_delta_examples() {
        let p = sw(&[0.25, 0.75]);
        assert_eq!(total_variation(&p, &p).unwrap(), 0.0);
        assert!(close(total_variation(&sw(&[1.0, 0.0]), &sw(&[0.5, 0.5])).unwrap(), 0.5, 1e-15));
        assert_eq!(pinsker_delta(&p, &p).unwrap(), 0.0);
        let d = pinsker_delta(&sw(&[1.0, 0.0]), &sw(&[0.5, 0.5])).unwrap();
        assert!(close(d, (2f64.ln() / 2.0).sqrt(), 1e-15));
        assert!(close(d, 0.5887, 1e-4));
        assert!(total_variation(&sw(&[1.0]), &sw(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn simplex_validation() {
        assert!(SimplexWeights::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexWeights::new(vec![-0.1, 1.1]).is_err());
        assert!(SimplexWeights::new(vec![]).is_err());
        let s: SimplexWeights = serde_json::from_str("[0.25,0.75]").unwrap();
        assert_eq!(serde_json::to_string(&s).unwrap(), "[0.25,0.75]");
        assert!(serde_json::from_str::<SimplexWeights>("[0.2,0.2]").is_err());
    }

    fn tiny() -> Dataset {
        // (y, a): (+,1) (+,0) (-,1) (-,0)
        Dataset::from_parts(
            vec![vec![0.0]; 4],
            vec![1, 0, 1, 0],
            vec![1, 1, -1, -1],
        )
        .unwrap()
    }

    #[test]
    fn constraint_rows() {
        let d = tiny();
        let eopp = build_constraints(&d, Surrogate::Eopp);
        assert_eq!(eopp.row(0), &[1.0, -1.0, 0.0, 0.0]);
        let dp = build_constraints(&d, Surrogate::Dp);
        assert_eq!(dp.row(0), &[1.0, -1.0, 1.0, -1.0]);
        let eo = build_constraints(&d, Surrogate::Eodds);
        assert_eq!(eo.k(), 2);
        assert_eq!(eo.row(0), &[1.0, -1.0, 0.0, 0.0]);
        assert_eq!(eo.row(1), &[0.0, 0.0, 1.0, -1.0]);
        for g in [eopp, dp, eo] {
            assert_eq!(g.bound(), 1.0);
        }
        assert!(matches!("eqop".parse::<Surrogate>(), Err(Error::Argument(_))));
        assert_eq!("EOPP".parse::<Surrogate>().unwrap(), Surrogate::Eopp);
    }

    fn simplex(n: usize) -> impl Strategy<Value = SimplexWeights> {
        proptest::collection::vec(1e-6f64..1.0, n).prop_map(|v| SimplexWeights::normalize(v).unwrap())
    }

    fn pair() -> impl Strategy<Value = (SimplexWeights, SimplexWeights)> {
        (1usize..20).prop_flat_map(|n| (simplex(n), simplex(n)))
    }

    proptest! {
        #[test]
        fn normalization_holds(m in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
            let q = exponential_weights(&MarginVector::new(m).unwrap()).unwrap();
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(q.iter().all(|v| v >= 0.0));
        }

        #[test]
        fn shift_invariance(m in proptest::collection::vec(-30.0f64..30.0, 1..30), c in -100.0f64..100.0) {
            let a = exponential_weights(&MarginVector::new(m.clone()).unwrap()).unwrap();
            let shifted: Vec<f64> = m.iter().map(|v| v + c).collect();
            let b = exponential_weights(&MarginVector::new(shifted).unwrap()).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn pinsker_and_gibbs((p, q) in pair()) {
            let kl = kl_divergence(&p, &q).unwrap();
            prop_assert!(kl >= 0.0);
            prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-12);
            let tv = total_variation(&p, &q).unwrap();
            prop_assert!(tv <= pinsker_delta(&p, &q).unwrap() + 1e-12);
            prop_assert!((0.0..=1.0).contains(&tv));
        }
    }
}
