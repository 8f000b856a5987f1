//! KL (information) projection onto the slack polytope
//! `C_ε = { w ∈ Δ_n : |⟨w, g_k⟩| <= ε for all k }`.
//!
//! The projection is an exponential tilt `w_i ∝ q_i exp(-λᵀ g(i))` where `λ`
//! minimizes the convex dual `log Z(λ) + ε ||λ||_1`, with
//! `Z(λ) = Σ_i q_i exp(-λᵀ g(i))`. At the optimum
//! `KL(w || q) = -log Z(λ) - ε ||λ||_1`, and since the dual is `0` at
//! `λ = 0` its optimal value is never positive.
//!
//! The dual is solved by projected gradient with Armijo backtracking on the
//! split form `λ = λ⁺ - λ⁻`, `λ± >= 0`, which is smooth. A smoothed
//! `|λ_k| ≈ sqrt(λ_k² + μ)` variant is kept for cross-checking.

use serde::{Deserialize, Serialize};

use crate::distributions::{delta_from_kl, kl_divergence, log_sum_exp, ConstraintFeatures, SimplexWeights};
use crate::error::{Error, Result};

/// Violations up to this are reported but accepted.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-6;
/// Non-converged solves within this violation are accepted with a warning.
pub const NEAR_FEASIBLE_TOLERANCE: f64 = 1e-4;
/// Required agreement between the dual KL value and the direct KL sum.
pub const DUALITY_TOLERANCE: f64 = 1e-6;

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MIN_STEP: f64 = 1e-20;
const STEP_BOUNDS: (f64, f64) = (1e-10, 1e10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMode {
    SplitVariable,
    SmoothedL1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// Slack `ε` on each `|⟨w, g_k⟩|`.
    pub epsilon: f64,
    /// Stop when the projected dual gradient's ∞-norm falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub mode: SolverMode,
    /// Smoothing for [`SolverMode::SmoothedL1`].
    pub mu: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            tolerance: 1e-8,
            max_iterations: 500,
            mode: SolverMode::SplitVariable,
            mu: 1e-8,
        }
    }
}

impl ProjectionConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    /// `ε = 0` is allowed here (exact equality constraints); boosting
    /// requires `ε > 0` separately.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Argument(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Argument("solver tolerance must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Argument("max_iterations must be >= 1".into()));
        }
        if !(self.mu > 0.0) {
            return Err(Error::Argument("smoothing mu must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub lambda: Vec<f64>,
    /// `log Z(λ) + ε ||λ||_1` at the returned `λ` (exact ℓ1 in every mode).
    pub value: f64,
    /// `-log Z(λ) - ε ||λ||_1`.
    pub kl_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sign of each `λ_k`; `+1` means `⟨w, g_k⟩ = ε` is binding.
    pub active: Vec<i8>,
}

impl DualSolution {
    fn zero(k: usize) -> Self {
        Self {
            lambda: vec![0.0; k],
            value: 0.0,
            kl_value: 0.0,
            iterations: 0,
            converged: true,
            active: vec![0; k],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub w: SimplexWeights,
    pub dual: DualSolution,
    /// `sqrt(KL(w || q) / 2)` using the direct KL sum.
    pub delta: f64,
    /// `Σ w_i ln(w_i / q_i)`, computed from `w` itself.
    pub kl_direct: f64,
    /// `max_k |⟨w, g_k⟩|`.
    pub max_moment: f64,
    /// `max(0, max_moment - ε)`.
    pub violation: f64,
}

fn check_inputs(lambda: &[f64], q: &SimplexWeights, g: &ConstraintFeatures) -> Result<()> {
    if lambda.len() != g.k() {
        return Err(Error::Argument(format!("lambda has {} entries, expected K = {}", lambda.len(), g.k())));
    }
    if q.len() != g.n() {
        return Err(Error::Argument(format!("q has {} entries, constraints have n = {}", q.len(), g.n())));
    }
    if let Some(l) = lambda.iter().find(|l| !l.is_finite()) {
        return Err(Error::Numeric(format!("non-finite dual variable {l}")));
    }
    Ok(())
}

/// Log-domain tilt exponents `ln q_i - λᵀ g(i)`.
fn tilted_logs(lambda: &[f64], q: &SimplexWeights, g: &ConstraintFeatures) -> Vec<f64> {
    (0..q.len()).map(|i| q.log_weight(i) - g.tilt(lambda, i)).collect()
}

/// `(log Z(λ), E_{w(λ)}[g])`. The gradient of `log Z` is `-E_{w(λ)}[g]`.
pub fn log_partition(lambda: &[f64], q: &SimplexWeights, g: &ConstraintFeatures) -> Result<(f64, Vec<f64>)> {
    check_inputs(lambda, q, g)?;
    let logs = tilted_logs(lambda, q, g);
    let log_z = log_sum_exp(&logs);
    if !log_z.is_finite() {
        return Err(Error::Numeric(format!("log Z is {log_z}")));
    }
    let w: Vec<f64> = logs.iter().map(|a| (a - log_z).exp()).collect();
    let moments = g
        .rows()
        .iter()
        .map(|r| r.iter().zip(&w).map(|(gi, wi)| gi * wi).sum())
        .collect();
    Ok((log_z, moments))
}

/// Dual objective `log Z(λ) + ε ||λ||_1` and its gradient.
///
/// The ℓ1 part contributes `ε sign(λ_k)` (zero at `λ_k = 0`).
pub fn dual_objective(lambda: &[f64], q: &SimplexWeights, g: &ConstraintFeatures, epsilon: f64) -> Result<(f64, Vec<f64>)> {
    let (log_z, m) = log_partition(lambda, q, g)?;
    let value = log_z + epsilon * l1(lambda);
    let grad = lambda.iter().zip(&m).map(|(l, mk)| -mk + epsilon * sign(*l)).collect();
    Ok((value, grad))
}

/// Smoothed dual `log Z(λ) + ε Σ sqrt(λ_k² + μ)` and its gradient.
pub fn smoothed_dual_objective(
    lambda: &[f64],
    q: &SimplexWeights,
    g: &ConstraintFeatures,
    epsilon: f64,
    mu: f64,
) -> Result<(f64, Vec<f64>)> {
    let (log_z, m) = log_partition(lambda, q, g)?;
    let value = log_z + epsilon * lambda.iter().map(|l| (l * l + mu).sqrt()).sum::<f64>();
    let grad = lambda
        .iter()
        .zip(&m)
        .map(|(l, mk)| -mk + epsilon * l / (l * l + mu).sqrt())
        .collect();
    Ok((value, grad))
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// KKT residual in `λ` coordinates: stationarity for nonzero `λ_k`
/// (`⟨w, g_k⟩ = ε sign λ_k`) and feasibility for zero ones.
fn kkt_residual(lambda: &[f64], moments: &[f64], epsilon: f64) -> f64 {
    lambda
        .iter()
        .zip(moments)
        .map(|(&l, &m)| {
            if l != 0.0 {
                (m - epsilon * sign(l)).abs()
            } else {
                (m.abs() - epsilon).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn active_signs(lambda: &[f64]) -> Vec<i8> {
    lambda
        .iter()
        .map(|&l| {
            if l > 0.0 {
                1
            } else if l < 0.0 {
                -1
            } else {
                0
            }
        })
        .collect()
}

fn finish(lambda: Vec<f64>, q: &SimplexWeights, g: &ConstraintFeatures, epsilon: f64, iterations: usize, converged: bool) -> Result<DualSolution> {
    let (mut lambda, mut converged) = (lambda, converged);
    let (log_z, _) = log_partition(&lambda, q, g)?;
    let mut value = log_z + epsilon * l1(&lambda);
    if value > 0.0 {
        // λ = 0 attains 0, so a positive value means the solve went nowhere.
        lambda = vec![0.0; g.k()];
        value = 0.0;
        converged = converged && g.max_abs_moment(q) <= epsilon;
    }
    Ok(DualSolution {
        active: active_signs(&lambda),
        kl_value: -value,
        lambda,
        value,
        iterations,
        converged,
    })
}

/// Minimize the dual. Starts from `warm_start` when given (else `0`).
///
/// If `q` already satisfies every constraint the exact optimum `λ = 0` is
/// returned without iterating. Hitting the iteration cap returns the last
/// (best) iterate with `converged = false`.
pub fn solve_dual(
    q: &SimplexWeights,
    g: &ConstraintFeatures,
    cfg: &ProjectionConfig,
    warm_start: Option<&[f64]>,
) -> Result<DualSolution> {
    cfg.validate()?;
    let k = g.k();
    let start = warm_start.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; k]);
    check_inputs(&start, q, g)?;
    // Judged on ln q so entries that underflowed in linear space still count.
    if (0..q.len()).any(|i| !(q.log_weight(i) > f64::NEG_INFINITY)) {
        return Err(Error::Argument("projection needs a strictly positive q".into()));
    }
    if g.max_abs_moment(q) <= cfg.epsilon {
        return Ok(DualSolution::zero(k));
    }
    match cfg.mode {
        SolverMode::SplitVariable => solve_split(q, g, cfg, start),
        SolverMode::SmoothedL1 => solve_smoothed(q, g, cfg, start),
    }
}

/// Projected gradient over `x = (λ⁺, λ⁻) ∈ R^{2K}_+`.
fn solve_split(q: &SimplexWeights, g: &ConstraintFeatures, cfg: &ProjectionConfig, start: Vec<f64>) -> Result<DualSolution> {
    let k = g.k();
    let eps = cfg.epsilon;
    let to_lambda = |x: &[f64]| -> Vec<f64> { (0..k).map(|j| x[j] - x[k + j]).collect() };
    // Cancel common mass in (λ⁺, λ⁻); never increases the objective.
    let canonical = |lambda: &[f64]| -> Vec<f64> {
        let mut x = vec![0.0; 2 * k];
        for (j, &l) in lambda.iter().enumerate() {
            x[j] = l.max(0.0);
            x[k + j] = (-l).max(0.0);
        }
        x
    };
    let eval = |x: &[f64]| -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let lambda = to_lambda(x);
        let (log_z, m) = log_partition(&lambda, q, g)?;
        let value = log_z + eps * x.iter().sum::<f64>();
        let mut grad = vec![0.0; 2 * k];
        for j in 0..k {
            grad[j] = -m[j] + eps;
            grad[k + j] = m[j] + eps;
        }
        Ok((value, grad, m))
    };

    let mut x = canonical(&start);
    let (mut f, mut grad, mut m) = eval(&x)?;
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    let projected_gradient = |x: &[f64], grad: &[f64]| {
        x.iter()
            .zip(grad)
            .map(|(xi, gi)| (xi - (xi - gi).max(0.0)).abs())
            .fold(0.0, f64::max)
    };
    loop {
        let pg = projected_gradient(&x, &grad);
        let lambda = to_lambda(&x);
        let infeasibility = m.iter().map(|mk| (mk.abs() - eps).max(0.0)).fold(0.0, f64::max);
        if pg <= cfg.tolerance
            || (infeasibility <= cfg.tolerance && kkt_residual(&lambda, &m, eps) <= cfg.tolerance)
        {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iterations {
            break;
        }
        iterations += 1;

        let mut trial = step;
        let accepted = loop {
            let cand: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| (xi - trial * gi).max(0.0)).collect();
            let (fc, gc, mc) = eval(&cand)?;
            if fc.is_nan() {
                return Err(Error::Numeric("NaN dual objective in line search".into()));
            }
            let decrease: f64 = grad.iter().zip(cand.iter().zip(&x)).map(|(gi, (c, xi))| gi * (c - xi)).sum();
            // Near the optimum the decrease drops below rounding noise in f;
            // then settle for a smaller projected gradient.
            let flat = (fc - f).abs() <= 8.0 * f64::EPSILON * (1.0 + f.abs());
            if fc <= f + ARMIJO_C * decrease || (flat && projected_gradient(&cand, &gc) < pg) {
                break Some((cand, fc, gc, mc));
            }
            trial *= BACKTRACK;
            if trial < MIN_STEP {
                break None;
            }
        };
        let Some((cand, _, _, _)) = accepted else {
            break;
        };
        let next = canonical(&to_lambda(&cand));
        let (fn_, gn, mn) = eval(&next)?;
        let s: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        // Barzilai-Borwein step as the next trial, else keep growing.
        step = if sy > 0.0 { dot(&s, &s) / sy } else { trial * 2.0 };
        step = step.clamp(STEP_BOUNDS.0, STEP_BOUNDS.1);
        x = next;
        f = fn_;
        grad = gn;
        m = mn;
    }
    finish(to_lambda(&x), q, g, eps, iterations, converged)
}

fn solve_smoothed(q: &SimplexWeights, g: &ConstraintFeatures, cfg: &ProjectionConfig, start: Vec<f64>) -> Result<DualSolution> {
    let (eps, mu) = (cfg.epsilon, cfg.mu);
    let mut lambda = start;
    let (mut f, mut grad) = smoothed_dual_objective(&lambda, q, g, eps, mu)?;
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        if grad.iter().fold(0.0_f64, |a, v| a.max(v.abs())) <= cfg.tolerance {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iterations {
            break;
        }
        iterations += 1;
        let g2 = dot(&grad, &grad);
        let mut trial = step;
        let accepted = loop {
            let cand: Vec<f64> = lambda.iter().zip(&grad).map(|(l, gi)| l - trial * gi).collect();
            let (fc, gc) = smoothed_dual_objective(&cand, q, g, eps, mu)?;
            if fc.is_nan() {
                return Err(Error::Numeric("NaN dual objective in line search".into()));
            }
            if fc <= f - ARMIJO_C * trial * g2 {
                break Some((cand, fc, gc));
            }
            trial *= BACKTRACK;
            if trial < MIN_STEP {
                break None;
            }
        };
        let Some((cand, fc, gc)) = accepted else {
            break;
        };
        let s: Vec<f64> = cand.iter().zip(&lambda).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gc.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 { dot(&s, &s) / sy } else { trial * 2.0 };
        step = step.clamp(STEP_BOUNDS.0, STEP_BOUNDS.1);
        lambda = cand;
        f = fc;
        grad = gc;
    }
    finish(lambda, q, g, eps, iterations, converged)
}

/// `w_i = q_i exp(-λᵀ g(i)) / Z(λ)`.
pub fn primal_from_dual(q: &SimplexWeights, g: &ConstraintFeatures, lambda: &[f64]) -> Result<SimplexWeights> {
    check_inputs(lambda, q, g)?;
    if lambda.iter().all(|&l| l == 0.0) {
        return Ok(q.clone());
    }
    SimplexWeights::from_log_mass(&tilted_logs(lambda, q, g))
}

/// Largest tolerated gap between the dual KL value and the direct KL.
///
/// Smoothing shifts the stationary point, so the identity only holds up to
/// about `ε K sqrt(μ)` in that mode.
fn duality_tolerance(cfg: &ProjectionConfig, k: usize) -> f64 {
    match cfg.mode {
        SolverMode::SplitVariable => DUALITY_TOLERANCE,
        SolverMode::SmoothedL1 => DUALITY_TOLERANCE + cfg.epsilon * k as f64 * cfg.mu.sqrt(),
    }
}

/// `argmin_{w ∈ C_ε} KL(w || q)` via the dual.
pub fn project(
    q: &SimplexWeights,
    g: &ConstraintFeatures,
    cfg: &ProjectionConfig,
    warm_start: Option<&[f64]>,
) -> Result<ProjectionResult> {
    let dual = solve_dual(q, g, cfg, warm_start)?;
    let w = primal_from_dual(q, g, &dual.lambda)?;
    let kl_direct = kl_divergence(&w, q)?;
    let max_moment = g.max_abs_moment(&w);
    let violation = (max_moment - cfg.epsilon).max(0.0);

    if violation > NEAR_FEASIBLE_TOLERANCE {
        return Err(Error::ProjectionFailure {
            round: None,
            violation,
            iterations: dual.iterations,
        });
    }
    if violation > FEASIBILITY_TOLERANCE || !dual.converged {
        log::warn!(
            "dual solve accepted with violation {violation:e} (converged: {}, {} iterations)",
            dual.converged,
            dual.iterations
        );
    }
    if dual.converged && (dual.kl_value - kl_direct).abs() > duality_tolerance(cfg, g.k()) {
        return Err(Error::Numeric(format!(
            "dual KL {} disagrees with direct KL {}",
            dual.kl_value, kl_direct
        )));
    }
    Ok(ProjectionResult {
        delta: delta_from_kl(kl_direct),
        w,
        dual,
        kl_direct,
        max_moment,
        violation,
    })
}

/// Exhaustive minimization of `KL(w || q)` over the grid
/// `{ k / resolution : k ∈ N^n, Σ k = resolution }` intersected with `C_ε`.
///
/// Independent of the dual machinery; used as a test oracle. The first
/// `n - 2` coordinates are enumerated. Along the remaining pair the
/// objective is convex and the feasible set is an integer interval, so the
/// pair is minimized exactly by rounding the closed-form interior optimum.
pub fn brute_force_project(
    q: &SimplexWeights,
    g: &ConstraintFeatures,
    epsilon: f64,
    resolution: usize,
) -> Result<(SimplexWeights, f64)> {
    let n = q.len();
    if n > 4 {
        return Err(Error::Argument(format!("grid oracle supports n <= 4, got {n}")));
    }
    if g.n() != n {
        return Err(Error::Argument("q and constraints differ in length".into()));
    }
    if resolution == 0 {
        return Err(Error::Argument("grid resolution must be >= 1".into()));
    }
    let r = resolution;
    let rf = r as f64;
    let tol = 1e-12;
    // term[i][c] = (c/R) ln((c/R) / q_i)
    let term: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..=r)
                .map(|c| {
                    if c == 0 {
                        0.0
                    } else if q.get(i) == 0.0 {
                        f64::INFINITY
                    } else {
                        let p = c as f64 / rf;
                        p * (p.ln() - q.get(i).ln())
                    }
                })
                .collect()
        })
        .collect();
    let feasible = |counts: &[usize]| {
        g.rows().iter().all(|row| {
            let m: f64 = counts.iter().zip(row).map(|(&c, gi)| c as f64 * gi).sum::<f64>() / rf;
            m.abs() <= epsilon + tol
        })
    };

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut consider = |counts: Vec<usize>| {
        let kl: f64 = counts.iter().enumerate().map(|(i, &c)| term[i][c]).sum();
        if kl.is_finite() && best.as_ref().is_none_or(|(b, _)| kl < *b) {
            best = Some((kl, counts));
        }
    };

    if n == 1 {
        if feasible(&[r]) {
            consider(vec![r]);
        }
    } else {
        let (a, b) = (n - 2, n - 1);
        let mut prefix = vec![0usize; n - 2];
        loop {
            let used: usize = prefix.iter().sum();
            if used <= r {
                let rest = r - used;
                // Each constraint is affine in c_a (with c_b = rest - c_a).
                let (mut lo, mut hi) = (0.0_f64, rest as f64);
                for row in g.rows() {
                    let s: f64 = prefix.iter().zip(row).map(|(&c, gi)| c as f64 * gi).sum();
                    let c0 = (s + rest as f64 * row[b]) / rf;
                    let c1 = (row[a] - row[b]) / rf;
                    let (bl, bh) = (-epsilon - tol - c0, epsilon + tol - c0);
                    if c1 == 0.0 {
                        if bl > 0.0 || bh < 0.0 {
                            hi = -1.0;
                        }
                    } else {
                        let (x, y) = (bl / c1, bh / c1);
                        lo = lo.max(x.min(y));
                        hi = hi.min(x.max(y));
                    }
                }
                let (lo, hi) = (lo.ceil(), hi.floor());
                if lo <= hi {
                    let (qa, qb) = (q.get(a), q.get(b));
                    let interior = if qa + qb > 0.0 { rest as f64 * qa / (qa + qb) } else { lo };
                    let x = interior.clamp(lo, hi);
                    for ca in [x.floor().max(lo), x.ceil().min(hi)] {
                        let ca = ca as usize;
                        let mut counts = prefix.clone();
                        counts.push(ca);
                        counts.push(rest - ca);
                        if feasible(&counts) {
                            consider(counts);
                        }
                    }
                }
            }
            // odometer over the prefix with Σ prefix <= r
            let mut j = 0;
            loop {
                if j == prefix.len() {
                    break;
                }
                prefix[j] += 1;
                if prefix.iter().sum::<usize>() <= r {
                    break;
                }
                prefix[j] = 0;
                j += 1;
            }
            if j == prefix.len() {
                break;
            }
        }
    }

    let (kl, counts) = best.ok_or_else(|| {
        Error::Argument(format!("no feasible grid point at resolution {r} for epsilon {epsilon}"))
    })?;
    let w = SimplexWeights::new(counts.iter().map(|&c| c as f64 / rf).collect())?;
    Ok((w, kl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sw(v: &[f64]) -> SimplexWeights {
        SimplexWeights::new(v.to_vec()).unwrap()
    }

    fn g1(row: &[f64]) -> ConstraintFeatures {
        ConstraintFeatures::new(vec![row.to_vec()], vec!["g".into()]).unwrap()
    }

    /// Independent 1-D oracle: bisection on `⟨w(λ), g⟩ = target`, then the
    /// KL by direct summation.
    fn bisect_active(q: &[f64], g: &[f64], target: f64) -> (Vec<f64>, f64) {
        let tilt = |l: f64| {
            let m: Vec<f64> = q.iter().zip(g).map(|(qi, gi)| qi * (-l * gi).exp()).collect();
            let z: f64 = m.iter().sum();
            m.into_iter().map(|v| v / z).collect::<Vec<_>>()
        };
        let moment = |l: f64| tilt(l).iter().zip(g).map(|(w, gi)| w * gi).sum::<f64>();
        let (mut lo, mut hi) = (-50.0, 50.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            // moment is decreasing in λ
            if moment(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let w = tilt(0.5 * (lo + hi));
        let kl = w.iter().zip(q).map(|(wi, qi)| wi * (wi / qi).ln()).sum();
        (w, kl)
    }

    #[test]
    fn dual_at_zero_is_zero() {
        let q = sw(&[0.2, 0.3, 0.5]);
        let g = g1(&[1.0, -1.0, 0.5]);
        let (v, _) = dual_objective(&[0.0], &q, &g, 0.3).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn dual_value_example() {
        let q = sw(&[0.5, 0.5]);
        let g = g1(&[1.0, -1.0]);
        let (v, _) = dual_objective(&[1.0], &q, &g, 0.1).unwrap();
        let direct = (0.5 * (-1f64).exp() + 0.5 * 1f64.exp()).ln() + 0.1;
        assert!((v - direct).abs() < 1e-15);
        assert!((v - 0.5338).abs() < 1e-4);
    }

    #[test]
    fn non_finite_lambda_is_numeric_error() {
        let q = sw(&[0.5, 0.5]);
        let g = g1(&[1.0, -1.0]);
        assert!(matches!(dual_objective(&[f64::NAN], &q, &g, 0.1), Err(Error::Numeric(_))));
    }

    #[test]
    fn feasible_q_gives_zero_multiplier() {
        let q = sw(&[0.55, 0.45]);
        let g = g1(&[1.0, -1.0]);
        let d = solve_dual(&q, &g, &ProjectionConfig::with_epsilon(0.2), None).unwrap();
        assert_eq!(d.lambda, vec![0.0]);
        assert_eq!(d.kl_value, 0.0);
        let p = project(&q, &g, &ProjectionConfig::with_epsilon(0.2), Some(&[3.0])).unwrap();
        assert_eq!(p.w, q);
        assert_eq!(p.delta, 0.0);
    }

    #[test]
    fn two_point_active_instance() {
        let q = sw(&[0.9, 0.1]);
        let g = g1(&[1.0, -1.0]);
        let (w_oracle, kl_oracle) = bisect_active(&[0.9, 0.1], &[1.0, -1.0], 0.2);
        assert!((w_oracle[0] - 0.6).abs() < 1e-12);
        assert!((kl_oracle - 0.3112).abs() < 1e-4);

        let d = solve_dual(&q, &g, &ProjectionConfig::with_epsilon(0.2), None).unwrap();
        assert!(d.converged);
        assert_eq!(d.active, vec![1]);
        assert!((d.kl_value - kl_oracle).abs() < 1e-9);
        assert!((d.lambda[0] - 6f64.ln() / 2.0).abs() < 1e-6);

        let p = project(&q, &g, &ProjectionConfig::with_epsilon(0.2), None).unwrap();
        assert!((p.w.get(0) - 0.6).abs() < 1e-8);
        assert!((p.delta - (kl_oracle / 2.0).sqrt()).abs() < 1e-8);
        assert!((p.delta - 0.3945).abs() < 1e-4);
    }

    #[test]
    fn zero_slack_forces_balance() {
        let q = sw(&[0.9, 0.1]);
        let g = g1(&[1.0, -1.0]);
        let p = project(&q, &g, &ProjectionConfig::with_epsilon(0.0), None).unwrap();
        assert!((p.w.get(0) - 0.5).abs() < 1e-8);
        let direct = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((p.dual.kl_value - direct).abs() < 1e-9);
        assert!((p.dual.kl_value - 0.5108).abs() < 1e-4);
    }

    #[test]
    fn primal_tilt_examples() {
        let q = sw(&[0.9, 0.1]);
        let g = g1(&[1.0, -1.0]);
        assert_eq!(primal_from_dual(&q, &g, &[0.0]).unwrap(), q);
        let w = primal_from_dual(&q, &g, &[3f64.ln() / 2.0]).unwrap();
        assert!((w.get(0) - 0.75).abs() < 1e-12);
        assert!((w.get(1) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn brute_force_examples() {
        let q = sw(&[0.9, 0.1]);
        let g = g1(&[1.0, -1.0]);
        let (w, kl) = brute_force_project(&q, &g, 0.2, 1000).unwrap();
        assert!((w.get(0) - 0.6).abs() < 1e-3);
        assert!((kl - 0.3112).abs() < 1e-3);

        let (w, kl) = brute_force_project(&q, &g, 5.0, 100).unwrap();
        assert!(kl.abs() < 1e-12);
        assert!((w.get(0) - 0.9).abs() < 1e-12);

        let q3 = sw(&[0.5, 0.3, 0.2]);
        let g3 = g1(&[0.2, -0.1, 0.0]);
        let (_, kl) = brute_force_project(&q3, &g3, 0.1, 50).unwrap();
        assert!(kl < 1e-12);

        assert!(brute_force_project(&sw(&[0.2; 5]), &g1(&[0.0; 5]), 0.1, 10).is_err());
        // |⟨w, g⟩| >= 1 everywhere on the simplex
        assert!(brute_force_project(&q, &g1(&[1.0, 1.0]), 0.5, 100).is_err());
    }

    #[test]
    fn brute_force_matches_full_enumeration_on_small_grid() {
        // the interval shortcut must agree with a plain sweep of every point
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let q = SimplexWeights::normalize((0..4).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap();
            let row: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = g1(&row);
            let eps = rng.random_range(0.0..0.3);
            let r = 40;
            let mut best = f64::INFINITY;
            for a in 0..=r {
                for b in 0..=(r - a) {
                    for c in 0..=(r - a - b) {
                        let counts = [a, b, c, r - a - b - c];
                        let w: Vec<f64> = counts.iter().map(|&k| k as f64 / r as f64).collect();
                        let m: f64 = w.iter().zip(&row).map(|(x, y)| x * y).sum();
                        if m.abs() > eps + 1e-12 {
                            continue;
                        }
                        let kl: f64 = w
                            .iter()
                            .enumerate()
                            .filter(|(_, x)| **x > 0.0)
                            .map(|(i, x)| x * (x.ln() - q.get(i).ln()))
                            .sum();
                        best = best.min(kl);
                    }
                }
            }
            match brute_force_project(&q, &g, eps, r) {
                Ok((_, kl)) => assert!((kl - best).abs() < 1e-12, "{kl} vs {best}"),
                Err(_) => assert!(best.is_infinite()),
            }
        }
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (SimplexWeights, ConstraintFeatures) {
        let q = SimplexWeights::normalize((0..n).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap();
        // rows centered under the uniform distribution, so every C_ε is non-empty
        let rows = (0..k)
            .map(|_| {
                let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mean = r.iter().sum::<f64>() / n as f64;
                r.iter().map(|v| v - mean).collect()
            })
            .collect();
        let g = ConstraintFeatures::new(rows, (0..k).map(|j| format!("g{j}")).collect()).unwrap();
        (q, g)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..30 {
            let n = rng.random_range(2..60);
            let k = rng.random_range(1..=2);
            let (q, g) = random_instance(&mut rng, n, k);
            let eps = rng.random_range(0.0..0.5);
            let lambda: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let (_, grad) = dual_objective(&lambda, &q, &g, eps).unwrap();
            for j in 0..k {
                let mut up = lambda.clone();
                let mut dn = lambda.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (dual_objective(&up, &q, &g, eps).unwrap().0 - dual_objective(&dn, &q, &g, eps).unwrap().0) / (2.0 * h);
                assert!((fd - grad[j]).abs() <= 1e-6, "fd {fd} vs analytic {}", grad[j]);
            }
        }
    }

    #[test]
    fn duality_feasibility_and_slackness() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(2..40);
            let k = rng.random_range(1..=2);
            let (q, g) = random_instance(&mut rng, n, k);
            let cfg = ProjectionConfig::with_epsilon(rng.random_range(0.0..0.3));
            let p = project(&q, &g, &cfg, None).unwrap();
            assert!(p.dual.value <= 1e-10);
            assert!(p.dual.kl_value >= -1e-10);
            assert!(p.max_moment <= cfg.epsilon + FEASIBILITY_TOLERANCE);
            if p.dual.converged {
                assert!((p.dual.kl_value - p.kl_direct).abs() <= DUALITY_TOLERANCE);
                for (j, m) in g.moments(&p.w).iter().enumerate() {
                    if m.abs() < cfg.epsilon - 1e-4 {
                        assert!(p.dual.lambda[j].abs() <= 1e-4);
                    }
                }
            }
        }
    }

    #[test]
    fn kl_non_increasing_in_slack() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (q, g) = random_instance(&mut rng, 12, 2);
            let mut prev = f64::INFINITY;
            for i in 0..=20 {
                let eps = 0.02 * i as f64;
                let p = project(&q, &g, &ProjectionConfig::with_epsilon(eps), None).unwrap();
                assert!(p.dual.kl_value <= prev + 1e-9);
                prev = p.dual.kl_value;
            }
        }
    }

    #[test]
    fn underflowed_weight_still_projects() {
        // exp(-800) is 0 in f64, but ln q stays finite
        let q = SimplexWeights::from_log_mass(&[0.0, -800.0, 0.5, -0.2]).unwrap();
        assert_eq!(q.get(1), 0.0);
        let g = g1(&[1.0, -1.0, 1.0, -1.0]);
        let p = project(&q, &g, &ProjectionConfig::with_epsilon(0.05), None).unwrap();
        assert!(p.max_moment <= 0.05 + FEASIBILITY_TOLERANCE);
        assert!((p.dual.kl_value - p.kl_direct).abs() <= DUALITY_TOLERANCE);
    }

    #[test]
    fn warm_start_reaches_same_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let (q, g) = random_instance(&mut rng, 30, 2);
            let cfg = ProjectionConfig::with_epsilon(0.05);
            let cold = project(&q, &g, &cfg, None).unwrap();
            let warm = project(&q, &g, &cfg, Some(&cold.dual.lambda)).unwrap();
            assert!((cold.dual.kl_value - warm.dual.kl_value).abs() < 1e-9);
            assert!(warm.dual.iterations <= cold.dual.iterations);
            let far = project(&q, &g, &cfg, Some(&[5.0, -5.0])).unwrap();
            assert!((cold.dual.kl_value - far.dual.kl_value).abs() < 1e-8);
        }
    }

    #[test]
    fn smoothed_mode_agrees_with_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let n = rng.random_range(2..30);
            let (q, g) = random_instance(&mut rng, n, 1);
            let eps = rng.random_range(0.0..0.3);
            let split = project(&q, &g, &ProjectionConfig::with_epsilon(eps), None).unwrap();
            let cfg = ProjectionConfig {
                mode: SolverMode::SmoothedL1,
                max_iterations: 5000,
                ..ProjectionConfig::with_epsilon(eps)
            };
            let smooth = project(&q, &g, &cfg, None).unwrap();
            assert!((split.kl_direct - smooth.kl_direct).abs() < 1e-5);
        }
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let q = sw(&[0.97, 0.01, 0.01, 0.01]);
        let g = g1(&[1.0, -1.0, 0.3, -0.2]);
        let cfg = ProjectionConfig {
            max_iterations: 1,
            ..ProjectionConfig::with_epsilon(0.0)
        };
        match solve_dual(&q, &g, &cfg, None) {
            Ok(d) => assert!(!d.converged),
            Err(e) => panic!("{e}"),
        }
        assert!(matches!(project(&q, &g, &cfg, None), Err(Error::ProjectionFailure { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(ProjectionConfig::with_epsilon(-0.1).validate().is_err());
        assert!(ProjectionConfig { mu: 0.0, ..Default::default() }.validate().is_err());
        assert!(ProjectionConfig { max_iterations: 0, ..Default::default() }.validate().is_err());
    }
}
