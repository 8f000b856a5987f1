//! Boosting loops: projected fair boosting, plain AdaBoost, and AdaBoost on
//! group/label reweighed data, all sharing one round structure and one set
//! of per-round diagnostics.
//!
//! Every round checks two identities at runtime:
//! - the loss recursion `L(f_t) = L(f_{t-1}) Σ_i q_i exp(-α_t y_i h_t(x_i))`,
//!   whose factor equals `2 sqrt(ε_q (1 - ε_q))` for the chosen `α_t`;
//! - edge transfer `γ_q >= γ_w - δ` with `δ = sqrt(KL(w || q) / 2)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::distributions::{build_constraints, log_sum_exp, ConstraintFeatures, SimplexWeights, Surrogate};
use crate::error::{Error, Result};
use crate::projection::{project, ProjectionConfig};
use crate::weak_learner::{DecisionStump, StumpFitter};

/// Slack for the per-round edge-transfer check.
pub const EDGE_TRANSFER_TOLERANCE: f64 = 1e-9;
/// Relative tolerance for the per-round loss recursion check.
pub const RECURSION_TOLERANCE: f64 = 1e-8;
/// Rounding slack on `ln L` for the monotone-loss check; a factor of
/// `2 sqrt(ε (1 - ε))` with `ε` near 1/2 is 1 to within a few ulps.
pub const MONOTONE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    FairProj,
    AdaBoost,
    Reweighing,
}

impl Mode {
    pub fn is_fair(self) -> bool {
        self == Mode::FairProj
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fairproj" => Ok(Mode::FairProj),
            "adaboost" => Ok(Mode::AdaBoost),
            "reweighing" => Ok(Mode::Reweighing),
            other => Err(Error::Argument(format!(
                "unknown mode `{other}` (expected fairproj, adaboost or reweighing)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::FairProj => "fairproj",
            Mode::AdaBoost => "adaboost",
            Mode::Reweighing => "reweighing",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub rounds: usize,
    pub surrogate: Surrogate,
    pub mode: Mode,
    /// Lower clamp on `ε_q` when computing `α`; `None` means `1 / (2n)`.
    pub error_floor: Option<f64>,
    /// Dual solver settings; `projection.epsilon` is the fairness slack.
    pub projection: ProjectionConfig,
}

impl BoostConfig {
    pub fn new(mode: Mode, rounds: usize, epsilon: f64, surrogate: Surrogate) -> Self {
        Self {
            rounds,
            surrogate,
            mode,
            error_floor: None,
            projection: ProjectionConfig::with_epsilon(epsilon),
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.projection.epsilon
    }

    pub fn floor_for(&self, n: usize) -> f64 {
        self.error_floor.unwrap_or(1.0 / (2.0 * n as f64))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Argument("rounds must be >= 1".into()));
        }
        if !(self.epsilon() > 0.0) {
            return Err(Error::Argument(format!("epsilon must be > 0, got {}", self.epsilon())));
        }
        let floor = self.floor_for(n);
        if !(floor > 0.0 && floor < 0.5) {
            return Err(Error::Argument(format!("error floor must lie in (0, 0.5), got {floor}")));
        }
        self.projection.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Completed,
    NoUsefulWeakLearner,
    PerfectFit,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Completed => "completed",
            Termination::NoUsefulWeakLearner => "no-useful-weak-learner",
            Termination::PerfectFit => "perfect-fit",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleTerm {
    pub alpha: f64,
    pub stump: DecisionStump,
}

/// `f(x) = Σ_t α_t h_t(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub terms: Vec<EnsembleTerm>,
    pub termination: Termination,
}

impl Default for Ensemble {
    fn default() -> Self {
        Self {
            terms: Vec::new(),
            termination: Termination::Completed,
        }
    }
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for t in &self.terms {
            s += t.alpha * f64::from(t.stump.predict(x)?);
        }
        Ok(s)
    }

    /// `sign(f(x))` with `sign(0) = +1`.
    pub fn predict(&self, x: &[f64]) -> Result<i8> {
        Ok(if self.score(x)? >= 0.0 { 1 } else { -1 })
    }

    /// `y_i f(x_i)` for every example.
    pub fn margins(&self, d: &Dataset) -> Result<Vec<f64>> {
        d.examples()
            .iter()
            .map(|e| Ok(f64::from(e.label()) * self.score(e.features())?))
            .collect()
    }

    pub fn predictions(&self, d: &Dataset) -> Result<Vec<i8>> {
        d.examples().iter().map(|e| self.predict(e.features())).collect()
    }
}

pub fn predict_ensemble(f: &Ensemble, x: &[f64]) -> Result<i8> {
    f.predict(x)
}

/// `L = Σ_i exp(-y_i f(x_i))` as `exp(shift) * scaled_sum`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpLoss {
    /// `max_i (-y_i f(x_i))`.
    pub shift: f64,
    /// `Σ_i exp(-y_i f(x_i) - shift)`, in `[1, n]`.
    pub scaled_sum: f64,
    pub log_value: f64,
    /// `exp(log_value)`; may underflow for very long runs.
    pub value: f64,
}

impl ExpLoss {
    pub fn from_margins(margins: &[f64]) -> Self {
        let neg: Vec<f64> = margins.iter().map(|m| -m).collect();
        let shift = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled_sum: f64 = neg.iter().map(|v| (v - shift).exp()).sum();
        let log_value = shift + scaled_sum.ln();
        Self {
            shift,
            scaled_sum,
            log_value,
            value: log_value.exp(),
        }
    }
}

pub fn exp_loss(d: &Dataset, f: &Ensemble) -> Result<ExpLoss> {
    Ok(ExpLoss::from_margins(&f.margins(d)?))
}

/// Fraction of examples with `sign(f(x_i)) ≠ y_i`.
pub fn training_error(d: &Dataset, f: &Ensemble) -> Result<f64> {
    let wrong = d
        .examples()
        .iter()
        .map(|e| Ok(f.predict(e.features())? != e.label()))
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|w| *w)
        .count();
    Ok(wrong as f64 / d.len() as f64)
}

/// `½ ln((1 - ε) / ε)` with `ε` clamped up to `floor`.
///
/// `α` is always computed from the error under `q`, never under the
/// training distribution; this is what keeps the loss recursion exact.
pub fn compute_alpha(eps_q: f64, floor: f64) -> Result<f64> {
    if !(eps_q < 0.5) {
        return Err(Error::Contract(format!(
            "alpha requested for weighted error {eps_q} >= 0.5; the round should have stopped"
        )));
    }
    if !(floor > 0.0 && floor < 0.5) {
        return Err(Error::Argument(format!("error floor must lie in (0, 0.5), got {floor}")));
    }
    let e = eps_q.max(floor);
    Ok(0.5 * ((1.0 - e).ln() - e.ln()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDiagnostics {
    pub round: usize,
    /// Edge of `h_t` under the training distribution `w^t`.
    pub gamma_w: f64,
    /// Edge of `h_t` under the exponential-weights distribution `q^t`.
    pub gamma_q: f64,
    /// `sqrt(KL(w^t || q^t) / 2)`.
    pub delta: f64,
    pub eps_q: f64,
    pub alpha: f64,
    /// `L(f_t)` after this round's update.
    pub exp_loss: f64,
    pub log_exp_loss: f64,
    /// `Σ_i q_i exp(-α y_i h(x_i))`, the ratio `L(f_t) / L(f_{t-1})`.
    pub loss_factor: f64,
    pub kl: f64,
    /// `max_k |⟨w^t, g_k⟩|`.
    pub max_violation: f64,
    pub dual_iters: usize,
    pub dual_converged: bool,
    /// `ε_q` was below the floor and clamped for `α`.
    pub clamped: bool,
}

/// The round at which `ε_q >= 0.5` stopped training; no term was added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopRecord {
    pub round: usize,
    pub gamma_w: f64,
    pub gamma_q: f64,
    pub delta: f64,
    pub eps_q: f64,
    pub kl: f64,
    pub max_violation: f64,
    pub dual_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: BoostConfig,
    pub n: usize,
    /// `ln L(f_0)`; `ln n` for every mode.
    pub initial_log_loss: f64,
    pub rounds: Vec<RoundDiagnostics>,
    pub stop: Option<StopRecord>,
    pub ensemble: Ensemble,
    pub bound: LossBoundReport,
}

impl RunLog {
    /// Rounds that appended a term.
    pub fn rounds_used(&self) -> usize {
        self.rounds.len()
    }

    /// `(γ_w, δ, KL)` for every round that projected and fit a stump,
    /// including a final stopping round.
    fn evaluated(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.rounds
            .iter()
            .map(|r| (r.gamma_w, r.delta, r.kl))
            .chain(self.stop.iter().map(|s| (s.gamma_w, s.delta, s.kl)))
    }

    /// Mean `δ_t` over every evaluated round (appended or stopping).
    pub fn mean_delta(&self) -> f64 {
        let (sum, count) = self.evaluated().fold((0.0, 0usize), |(s, c), (_, d, _)| (s + d, c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}

struct RoundState {
    q: SimplexWeights,
    w: SimplexWeights,
    delta: f64,
    kl: f64,
    max_violation: f64,
    dual_iters: usize,
    dual_converged: bool,
}

/// Kamiran-Calders cell weights `n_a n_y / (n n_{a,y})`, normalized to the
/// simplex.
pub fn reweighing_weights(d: &Dataset) -> Result<SimplexWeights> {
    let c = d.group_counts();
    let n = d.len() as f64;
    for a in 0..2u8 {
        for y in [1i8, -1] {
            if c.cell(a, y) == 0 {
                return Err(Error::Argument(format!(
                    "reweighing needs every (group, label) cell non-empty; cell (a={a}, y={y:+}) is empty"
                )));
            }
        }
    }
    let label_total = |y: i8| if y == 1 { c.positives() } else { c.negatives() };
    let raw = d
        .examples()
        .iter()
        .map(|e| {
            let (a, y) = (e.protected(), e.label());
            (c.total[a as usize] as f64 * label_total(y) as f64) / (n * c.cell(a, y) as f64)
        })
        .collect();
    SimplexWeights::normalize(raw)
}

fn invariant(round: usize, detail: String) -> Error {
    Error::Invariant { round, detail }
}

fn boost(d: &Dataset, cfg: &BoostConfig, mode: Mode) -> Result<(Ensemble, RunLog)> {
    let cfg = BoostConfig { mode, ..*cfg };
    let n = d.len();
    cfg.validate(n)?;
    let floor = cfg.floor_for(n);
    let g: ConstraintFeatures = build_constraints(d, cfg.surrogate);
    let fitter = StumpFitter::new(d);
    let labels: Vec<f64> = d.labels().map(f64::from).collect();

    // ln of the static prior the exponential weights are tilted by.
    let log_prior: Vec<f64> = match mode {
        Mode::Reweighing => {
            let v = reweighing_weights(d)?;
            (0..n).map(|i| v.log_weight(i)).collect()
        }
        _ => vec![-(n as f64).ln(); n],
    };
    let ln_n = (n as f64).ln();
    // L(f) = n Σ_i prior_i exp(-margin_i); equals Σ exp(-margin_i) for a uniform prior.
    let log_loss_of = |margins: &[f64]| {
        let terms: Vec<f64> = log_prior.iter().zip(margins).map(|(p, m)| p - m).collect();
        ln_n + log_sum_exp(&terms)
    };

    let mut margins = vec![0.0; n];
    let mut log_loss = log_loss_of(&margins);
    let initial_log_loss = log_loss;
    let mut warm = vec![0.0; g.k()];
    let mut ensemble = Ensemble::default();
    let mut rounds = Vec::new();
    let mut stop = None;

    for t in 1..=cfg.rounds {
        let log_mass: Vec<f64> = log_prior.iter().zip(&margins).map(|(p, m)| p - m).collect();
        let q = SimplexWeights::from_log_mass(&log_mass)?;
        let state = if mode.is_fair() {
            let p = project(&q, &g, &cfg.projection, Some(&warm)).map_err(|e| match e {
                Error::ProjectionFailure { violation, iterations, .. } => Error::ProjectionFailure {
                    round: Some(t),
                    violation,
                    iterations,
                },
                other => other,
            })?;
            warm.clone_from(&p.dual.lambda);
            RoundState {
                q,
                w: p.w,
                delta: p.delta,
                kl: p.kl_direct,
                max_violation: p.max_moment,
                dual_iters: p.dual.iterations,
                dual_converged: p.dual.converged,
            }
        } else {
            RoundState {
                max_violation: g.max_abs_moment(&q),
                w: q.clone(),
                q,
                delta: 0.0,
                kl: 0.0,
                dual_iters: 0,
                dual_converged: true,
            }
        };

        let fit = fitter.fit(&state.w)?;
        let stump = fit.stump;
        let ym = stump.margins(d)?;
        let eps_q: f64 = ym.iter().zip(state.q.iter()).filter(|(m, _)| **m < 0).map(|(_, q)| q).sum();
        let gamma_q = 0.5 * ym.iter().zip(state.q.iter()).map(|(m, q)| f64::from(*m) * q).sum::<f64>();
        let gamma_w = 0.5 * ym.iter().zip(state.w.iter()).map(|(m, w)| f64::from(*m) * w).sum::<f64>();

        if gamma_q < gamma_w - state.delta - EDGE_TRANSFER_TOLERANCE {
            return Err(invariant(
                t,
                format!("edge transfer failed: gamma_q {gamma_q} < gamma_w {gamma_w} - delta {}", state.delta),
            ));
        }

        if eps_q >= 0.5 {
            stop = Some(StopRecord {
                round: t,
                gamma_w,
                gamma_q,
                delta: state.delta,
                eps_q,
                kl: state.kl,
                max_violation: state.max_violation,
                dual_iters: state.dual_iters,
            });
            ensemble.termination = Termination::NoUsefulWeakLearner;
            break;
        }

        let alpha = compute_alpha(eps_q, floor)?;
        let clamped = eps_q < floor;
        let loss_factor: f64 = ym
            .iter()
            .zip(state.q.iter())
            .map(|(m, q)| q * (-alpha * f64::from(*m)).exp())
            .sum();
        for (m, y) in margins.iter_mut().zip(&ym) {
            *m += alpha * f64::from(*y);
        }
        let new_log_loss = log_loss_of(&margins);

        let predicted = log_loss + loss_factor.ln();
        if ((new_log_loss - predicted).exp() - 1.0).abs() > RECURSION_TOLERANCE {
            return Err(invariant(
                t,
                format!("loss recursion failed: ln L = {new_log_loss}, predicted {predicted}"),
            ));
        }
        if !clamped {
            let closed = 2.0 * (eps_q * (1.0 - eps_q)).sqrt();
            if (loss_factor / closed - 1.0).abs() > RECURSION_TOLERANCE {
                return Err(invariant(
                    t,
                    format!("loss factor {loss_factor} differs from 2 sqrt(eps (1 - eps)) = {closed}"),
                ));
            }
        }
        if new_log_loss > log_loss + MONOTONE_TOLERANCE {
            return Err(invariant(t, format!("loss increased from {log_loss} to {new_log_loss}")));
        }

        ensemble.terms.push(EnsembleTerm { alpha, stump });
        rounds.push(RoundDiagnostics {
            round: t,
            gamma_w,
            gamma_q,
            delta: state.delta,
            eps_q,
            alpha,
            exp_loss: new_log_loss.exp(),
            log_exp_loss: new_log_loss,
            loss_factor,
            kl: state.kl,
            max_violation: state.max_violation,
            dual_iters: state.dual_iters,
            dual_converged: state.dual_converged,
            clamped,
        });
        log_loss = new_log_loss;

        // margin_i > 0 for y = -1, or >= 0 for y = +1, under sign(0) = +1
        let perfect = margins.iter().zip(&labels).all(|(m, y)| *m > 0.0 || (*m == 0.0 && *y > 0.0));
        if clamped && perfect {
            ensemble.termination = Termination::PerfectFit;
            break;
        }
    }

    let mut log = RunLog {
        config: cfg,
        n,
        initial_log_loss,
        rounds,
        stop,
        ensemble: ensemble.clone(),
        bound: LossBoundReport::default(),
    };
    log.bound = check_loss_bound(&log);
    Ok((ensemble, log))
}

/// Projected fair boosting: train each stump on the KL projection of `q`
/// onto the fairness polytope, weight it by its error under `q`.
pub fn run_fairproj(d: &Dataset, cfg: &BoostConfig) -> Result<(Ensemble, RunLog)> {
    boost(d, cfg, Mode::FairProj)
}

pub fn run_adaboost(d: &Dataset, cfg: &BoostConfig) -> Result<(Ensemble, RunLog)> {
    boost(d, cfg, Mode::AdaBoost)
}

/// AdaBoost whose exponential weights are tilted by fixed group/label cell
/// weights. `exp_loss` in the log is the matching tilted loss
/// `n Σ_i v_i exp(-y_i f(x_i))`.
pub fn run_reweighing(d: &Dataset, cfg: &BoostConfig) -> Result<(Ensemble, RunLog)> {
    boost(d, cfg, Mode::Reweighing)
}

/// Dispatch on `cfg.mode`.
pub fn run(d: &Dataset, cfg: &BoostConfig) -> Result<(Ensemble, RunLog)> {
    boost(d, cfg, cfg.mode)
}

/// Relative slack on the loss bounds.
pub const BOUND_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundStatus {
    /// Precondition `γ_w > δ` held every round and the bound held.
    #[default]
    Holds,
    /// Precondition failed at some round; the bound was checked only on the
    /// prefix before it.
    Vacuous,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTracePoint {
    pub round: usize,
    pub log_exp_loss: f64,
    /// `ln n - 2 Σ_{s<=t} (γ_w - δ)²`, only while `γ_w > δ` has held.
    pub log_w_bound: Option<f64>,
    /// `ln n - 2 Σ_{s<=t} γ_q²`.
    pub log_q_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBoundReport {
    pub status: BoundStatus,
    /// Length of the maximal prefix with `γ_w > δ` at every round.
    pub prefix_rounds: usize,
    pub total_rounds: usize,
    /// Rounds (1-based) where `γ_w <= δ`.
    pub vacuous_rounds: Vec<usize>,
    pub w_bound_holds: bool,
    pub q_bound_holds: bool,
    pub trace: Vec<BoundTracePoint>,
}

/// Check `L(f_t) <= n exp(-2 Σ (γ_w - δ)²)` on the prefix where `γ_w > δ`,
/// and `L(f_t) <= n exp(-2 Σ γ_q²)` on every round.
pub fn check_loss_bound(log: &RunLog) -> LossBoundReport {
    let slack = BOUND_TOLERANCE.ln_1p();
    let mut w_sum = 0.0;
    let mut q_sum = 0.0;
    let mut in_prefix = true;
    let mut prefix_rounds = 0;
    let mut vacuous_rounds = Vec::new();
    let mut w_ok = true;
    let mut q_ok = true;
    let mut trace = Vec::with_capacity(log.rounds.len());
    for r in &log.rounds {
        let effective = r.gamma_w - r.delta;
        if effective <= 0.0 {
            vacuous_rounds.push(r.round);
            in_prefix = false;
        }
        q_sum += r.gamma_q * r.gamma_q;
        let log_q_bound = log.initial_log_loss - 2.0 * q_sum;
        q_ok &= r.log_exp_loss <= log_q_bound + slack;
        let log_w_bound = if in_prefix {
            prefix_rounds += 1;
            w_sum += effective * effective;
            let b = log.initial_log_loss - 2.0 * w_sum;
            w_ok &= r.log_exp_loss <= b + slack;
            Some(b)
        } else {
            None
        };
        trace.push(BoundTracePoint {
            round: r.round,
            log_exp_loss: r.log_exp_loss,
            log_w_bound,
            log_q_bound,
        });
    }
    let status = if !(w_ok && q_ok) {
        BoundStatus::Violated
    } else if vacuous_rounds.is_empty() {
        BoundStatus::Holds
    } else {
        BoundStatus::Vacuous
    };
    LossBoundReport {
        status,
        prefix_rounds,
        total_rounds: log.rounds.len(),
        vacuous_rounds,
        w_bound_holds: w_ok,
        q_bound_holds: q_ok,
        trace,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientConditionReport {
    /// Assumed `γ_min > sqrt(D / 2)`.
    pub assumed_condition_holds: bool,
    pub observed_min_gamma_w: Option<f64>,
    pub observed_max_kl: f64,
    /// `sqrt(max KL / 2)`.
    pub observed_threshold: f64,
    /// Observed `min γ_w > sqrt(max KL / 2)`.
    pub observed_condition_holds: bool,
    /// `γ_w - δ > 0` at every evaluated round.
    pub all_effective_edges_positive: bool,
    pub stopped_early: bool,
    /// The observed condition implies positive effective edges; false here
    /// would indicate broken diagnostics.
    pub consistent: bool,
}

/// Diagnostic for "edge at least `γ_min` and `KL <= D` imply positive
/// effective edge", evaluated on the observed run including any stopping
/// round.
pub fn check_sufficient_condition(log: &RunLog, gamma_min: f64, d_max: f64) -> SufficientConditionReport {
    let observed: Vec<(f64, f64, f64)> = log.evaluated().collect();
    let min_gamma = observed.iter().map(|o| o.0).reduce(f64::min);
    let max_kl = observed.iter().map(|o| o.2).fold(0.0, f64::max);
    let threshold = (max_kl / 2.0).sqrt();
    let observed_holds = min_gamma.is_some_and(|g| g > threshold);
    let all_positive = observed.iter().all(|(g, d, _)| g - d > 0.0);
    SufficientConditionReport {
        assumed_condition_holds: gamma_min > (d_max.max(0.0) / 2.0).sqrt(),
        observed_min_gamma_w: min_gamma,
        observed_max_kl: max_kl,
        observed_threshold: threshold,
        observed_condition_holds: observed_holds,
        all_effective_edges_positive: all_positive,
        stopped_early: log.ensemble.termination == Termination::NoUsefulWeakLearner,
        consistent: !observed_holds || all_positive,
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn dataset() -> impl Strategy<Value = Dataset> {
        (8usize..60).prop_flat_map(|n| {
            (
                proptest::collection::vec(proptest::collection::vec(-3i32..3, 2), n),
                proptest::collection::vec(0u8..2, n),
                proptest::collection::vec(prop::bool::ANY, n),
            )
                .prop_filter_map("needs both labels", |(x, a, y)| {
                    let x = x.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
                    let y = y.into_iter().map(|b| if b { 1 } else { -1 }).collect();
                    Dataset::from_parts(x, a, y).ok()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        // the runtime checks inside `boost` are the invariants; a run that
        // returns Ok has passed every one of them
        #[test]
        fn fair_and_plain_runs_keep_invariants(d in dataset(), eps in 0.02f64..0.5, s in 0usize..3) {
            let surrogate = [Surrogate::Dp, Surrogate::Eopp, Surrogate::Eodds][s];
            let cfg = BoostConfig::new(Mode::FairProj, 15, eps, surrogate);
            let (f, log) = run_fairproj(&d, &cfg).unwrap();
            prop_assert_eq!(f.len(), log.rounds_used());
            prop_assert!(log.bound.q_bound_holds);
            for r in &log.rounds {
                prop_assert!(r.eps_q < 0.5 && r.alpha > 0.0);
                prop_assert!(r.max_violation <= eps + 1e-4);
            }
            let (_, plain) = run_adaboost(&d, &cfg).unwrap();
            prop_assert!(plain.rounds.iter().all(|r| r.delta == 0.0));
        }

        #[test]
        fn slack_beyond_bound_is_adaboost(d in dataset()) {
            let cfg = BoostConfig::new(Mode::FairProj, 10, 2.0, Surrogate::Eodds);
            prop_assert_eq!(run_fairproj(&d, &cfg).unwrap().0, run_adaboost(&d, &cfg).unwrap().0);
        }
    }
}
