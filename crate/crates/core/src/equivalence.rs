//! The bridge between covariance fitting and L1 regression.
//!
//! For powers `p~_k = w_k p_k` on the unit simplex and
//! `R = sum_k p~_k a~_k a~_k^H`,
//!
//! ```text
//! y^H R^{-1} y = min_c sum'_k |c_k|^2 / p~_k   s.t.  sum_k c_k a~_k = y
//! ```
//!
//! with minimizer `c = P~ A~ R^{-1} y` (`sum'` skips `p~_k = 0`). Minimizing
//! the right side over the simplex for fixed `c` gives the allocations in
//! [`allocate_powers`]; what is left is an L1 problem in `c`, which after
//! eliminating the noise block is the LAD-Lasso (free noise variances) or
//! the square-root Lasso (tied variances). [`theorem1_transform`] and
//! [`theorem2_transform`] map those solutions back to powers and
//! [`certify_equivalence`] runs both routes side by side.

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiceError};
use crate::model::{compute_weights, scaled_atoms, Dictionary, Measurement, Weights};
use crate::numerics::{self, factor_hpd, ComplexMatrix, JitterPolicy};
use crate::parallel::{self, Execution};
use crate::sparse_solvers::{solve_constrained_l1, LassoSolution, SolverConfig};
use crate::spice::{evaluate_g, NoiseModel, PowerEstimate, SpiceConfig, SpiceProblem};

/// Normalized mass `w_k p_k` above which an atom counts as active.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElfvingSolution {
    pub c: Vec<Complex64>,
    /// Multiplier of the constraint, `-2 R^{-1} y`.
    pub lambda: Vec<Complex64>,
    /// `sum' |c_k|^2 / p~_k`.
    pub value: f64,
    /// `y^H R^{-1} y` from the same factorization.
    pub quadratic_form: f64,
}

/// Closed-form minimizer of `sum' |c_k|^2 / p~_k` subject to
/// `A~ c = y`, where the columns of `atoms` are the `a~_k`.
///
/// Atoms with `p~_k = 0` are dropped before `R` is formed and receive
/// `c_k = 0`.
pub fn elfving_min(
    atoms: &ComplexMatrix,
    p_tilde: &[f64],
    y: &[Complex64],
) -> Result<ElfvingSolution> {
    let (n, m) = (atoms.rows(), atoms.cols());
    if p_tilde.len() != m {
        return Err(SpiceError::DimensionMismatch {
            expected: m,
            found: p_tilde.len(),
        });
    }
    if y.len() != n {
        return Err(SpiceError::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if let Some(i) = p_tilde.iter().position(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(SpiceError::NonPositiveInit {
            index: i,
            value: p_tilde[i],
        });
    }
    let support: Vec<usize> = (0..m).filter(|&k| p_tilde[k] > 0.0).collect();
    if support.is_empty() {
        return Err(SpiceError::EmptySupport);
    }
    let b = ComplexMatrix::from_fn(n, support.len(), |r, j| {
        atoms[(r, support[j])] * p_tilde[support[j]].sqrt()
    });
    let r = b.gram_plus_diagonal(&vec![0.0; n], Execution::Sequential)?;
    let fac = factor_hpd(&r, &JitterPolicy::none())?;
    let z = fac.solve(y)?;
    let corr = atoms.adjoint_mul_vec(&z)?;
    let mut c = vec![Complex64::new(0.0, 0.0); m];
    let mut value = 0.0;
    for &k in &support {
        c[k] = corr[k] * p_tilde[k];
        value += c[k].norm_sqr() / p_tilde[k];
    }
    Ok(ElfvingSolution {
        c,
        lambda: z.iter().map(|v| v * -2.0).collect(),
        value,
        quadratic_form: numerics::inner(y, &z).re,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    /// `p~_k` over all `K + N` atoms, summing to one.
    pub p_tilde: Vec<f64>,
    /// The squared normalizer; `sum' |c_k|^2 / p~_k = alpha` at the optimum.
    pub alpha: f64,
    pub variant: NoiseModel,
    /// Equal variance only: the `K + 1` block masses, the last being the
    /// total noise mass `N p~_{K+1}`.
    pub p_prime: Option<Vec<f64>>,
}

/// Minimizes `sum' |c_k|^2 / p~_k` over the simplex for fixed `c`.
///
/// Heteroscedastic: `p~_k = |c_k| / sum |c_i|`, `alpha = (sum |c_i|)^2`.
/// Equal variance: the noise block is tied, `p'_k = |c_k| / sqrt(alpha)` for
/// `k <= K`, `p'_{K+1} = sqrt(N sum_{k>K} |c_k|^2 / alpha)` with
/// `sqrt(alpha) = sum_{k<=K} |c_k| + sqrt(N sum_{k>K} |c_k|^2)`.
pub fn allocate_powers(
    c: &[Complex64],
    n_signal: usize,
    variant: NoiseModel,
) -> Result<AllocationResult> {
    if n_signal > c.len() {
        return Err(SpiceError::DimensionMismatch {
            expected: n_signal,
            found: c.len(),
        });
    }
    let moduli: Vec<f64> = c.iter().map(|v| v.norm()).collect();
    match variant {
        NoiseModel::Heteroscedastic => {
            let total: f64 = moduli.iter().sum();
            if !(total > 0.0) {
                return Err(SpiceError::AllZeroCoefficients);
            }
            Ok(AllocationResult {
                p_tilde: moduli.iter().map(|m| m / total).collect(),
                alpha: total * total,
                variant,
                p_prime: None,
            })
        }
        NoiseModel::EqualVariance => {
            let n = c.len() - n_signal;
            let signal: f64 = moduli[..n_signal].iter().sum();
            let noise_sq: f64 = moduli[n_signal..].iter().map(|m| m * m).sum();
            let block = (n as f64 * noise_sq).sqrt();
            let root_alpha = signal + block;
            if !(root_alpha > 0.0) {
                return Err(SpiceError::AllZeroCoefficients);
            }
            let mut p_prime: Vec<f64> = moduli[..n_signal].iter().map(|m| m / root_alpha).collect();
            p_prime.push(block / root_alpha);
            let mut p_tilde = p_prime[..n_signal].to_vec();
            let each = if n > 0 {
                p_prime[n_signal] / n as f64
            } else {
                0.0
            };
            p_tilde.extend(std::iter::repeat_n(each, n));
            Ok(AllocationResult {
                p_tilde,
                alpha: root_alpha * root_alpha,
                variant,
                p_prime: Some(p_prime),
            })
        }
    }
}

/// `sum' |c_k|^2 / p~_k`; `+inf` if some `c_k != 0` sits on `p~_k = 0`.
pub fn primed_cost(c: &[Complex64], p_tilde: &[f64]) -> f64 {
    c.iter()
        .zip(p_tilde)
        .map(|(c, &p)| {
            if p > 0.0 {
                c.norm_sqr() / p
            } else if c.norm() > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .sum()
}

fn full_coefficients(solution: &LassoSolution) -> Result<Vec<Complex64>> {
    let c_tilde = &solution.coefficients.c_tilde;
    let mut full = c_tilde.clone();
    full.extend_from_slice(&solution.residual);
    if let Some(stored) = &solution.coefficients.c_full {
        // the noise block and the residual must be the same vector
        if stored.len() != full.len() {
            return Err(SpiceError::DimensionMismatch {
                expected: full.len(),
                found: stored.len(),
            });
        }
        let scale = numerics::norm_inf(&full).max(1.0);
        debug_assert!(stored
            .iter()
            .zip(&full)
            .all(|(a, b)| (a - b).norm() <= 1e-10 * scale));
        return Ok(stored.clone());
    }
    Ok(full)
}

fn check_solution(solution: &LassoSolution, dict: &Dictionary) -> Result<()> {
    if solution.coefficients.c_tilde.len() != dict.n_atoms() {
        return Err(SpiceError::DimensionMismatch {
            expected: dict.n_atoms(),
            found: solution.coefficients.c_tilde.len(),
        });
    }
    if solution.residual.len() != dict.n_samples() {
        return Err(SpiceError::DimensionMismatch {
            expected: dict.n_samples(),
            found: solution.residual.len(),
        });
    }
    Ok(())
}

/// Powers from a LAD-Lasso solution of the normalized constrained problem:
/// `p_k = ||y||^2 |c_k| / (||a_k||^2 (sum_{i<K} |c_i| + sum_j |r_j|))`,
/// where the noise coefficients are the normalized residuals `r_j`.
pub fn theorem1_transform(
    solution: &LassoSolution,
    dict: &Dictionary,
    y: &Measurement,
) -> Result<PowerEstimate> {
    check_solution(solution, dict)?;
    let w = compute_weights(dict, y).map_err(|_| SpiceError::DegenerateDenominator)?;
    let c = full_coefficients(solution)?;
    let denom =
        numerics::norm1(&solution.coefficients.c_tilde) + numerics::norm1(&solution.residual);
    if !(denom > 0.0) {
        return Err(SpiceError::DegenerateDenominator);
    }
    let yy = w.y_norm_sq();
    let p = c
        .iter()
        .enumerate()
        .map(|(k, c)| yy * c.norm() / (dict.atom_norm_sq(k) * denom))
        .collect();
    PowerEstimate::new(p, dict.n_atoms(), NoiseModel::Heteroscedastic)
}

/// Powers from a square-root Lasso solution of the normalized problem:
/// signal powers `||y||^2 |c_k| / (||a_k||^2 D)` and the common noise power
/// `sqrt(N) ||y||^2 ||r||_2 / (N D)` with `D = ||c~||_1 + sqrt(N) ||r||_2`.
pub fn theorem2_transform(
    solution: &LassoSolution,
    dict: &Dictionary,
    y: &Measurement,
) -> Result<PowerEstimate> {
    check_solution(solution, dict)?;
    let w = compute_weights(dict, y).map_err(|_| SpiceError::DegenerateDenominator)?;
    let n = dict.n_samples() as f64;
    let r_norm = numerics::norm2(&solution.residual);
    let denom = numerics::norm1(&solution.coefficients.c_tilde) + n.sqrt() * r_norm;
    if !(denom > 0.0) {
        return Err(SpiceError::DegenerateDenominator);
    }
    let yy = w.y_norm_sq();
    let mut p: Vec<f64> = solution
        .coefficients
        .c_tilde
        .iter()
        .enumerate()
        .map(|(k, c)| yy * c.norm() / (dict.atom_norm_sq(k) * denom))
        .collect();
    let noise = n.sqrt() * yy * r_norm / (n * denom);
    p.extend(std::iter::repeat_n(noise, dict.n_samples()));
    PowerEstimate::new(p, dict.n_atoms(), NoiseModel::EqualVariance)
}

/// Line amplitudes carried by a solution of the normalized problem,
/// `s_k = c_k ||y|| / ||a_k||`. They equal [`SpiceState::amplitudes`] at
/// the SPICE limit.
///
/// [`SpiceState::amplitudes`]: crate::spice::SpiceState::amplitudes
pub fn lasso_amplitudes(
    solution: &LassoSolution,
    dict: &Dictionary,
    y: &Measurement,
) -> Result<Vec<Complex64>> {
    check_solution(solution, dict)?;
    let norm = y.norm_sq().sqrt();
    Ok(solution
        .coefficients
        .c_tilde
        .iter()
        .enumerate()
        .map(|(k, c)| c * (norm / dict.atom_norm_sq(k).sqrt()))
        .collect())
}

/// Applies the transform matching `variant`.
pub fn lasso_to_powers(
    solution: &LassoSolution,
    dict: &Dictionary,
    y: &Measurement,
    variant: NoiseModel,
) -> Result<PowerEstimate> {
    match variant {
        NoiseModel::Heteroscedastic => theorem1_transform(solution, dict, y),
        NoiseModel::EqualVariance => theorem2_transform(solution, dict, y),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub spice: SpiceConfig,
    pub solver: SolverConfig,
    pub support_threshold: f64,
    pub exec: Execution,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            spice: SpiceConfig::default(),
            solver: SolverConfig::precise(),
            support_threshold: SUPPORT_THRESHOLD,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Runtimes {
    pub spice_secs: f64,
    pub lasso_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub variant: NoiseModel,
    /// Active signal atoms (0-based) under the SPICE route.
    pub support_spice: Vec<usize>,
    pub support_lasso: Vec<usize>,
    pub g_spice: f64,
    pub g_lasso: f64,
    /// `(L1 objective)^2 + 1`: no point of the simplex has smaller `g`.
    pub g_lower_bound: f64,
    /// `max_k |w_k p_k^spice - w_k p_k^lasso|`.
    pub linf_power_gap: f64,
    pub runtimes: Runtimes,
    pub spice_iterations: usize,
    pub spice_converged: bool,
    pub lasso_iterations: usize,
    pub lasso_converged: bool,
    #[serde(skip)]
    pub p_spice: Option<PowerEstimate>,
    #[serde(skip)]
    pub p_lasso: Option<PowerEstimate>,
    #[serde(skip)]
    pub lasso: Option<LassoSolution>,
}

impl EquivalenceReport {
    pub fn g_relative_gap(&self) -> f64 {
        (self.g_spice - self.g_lasso).abs() / self.g_spice.abs().max(self.g_lasso.abs())
    }

    pub fn supports_agree(&self) -> bool {
        self.support_spice == self.support_lasso
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs SPICE to convergence and the matching Lasso route, then compares
/// them on the common cost `g`, the active sets and the normalized powers.
pub fn certify_equivalence(
    dict: &Dictionary,
    y: &Measurement,
    variant: NoiseModel,
    config: &CertifyConfig,
) -> Result<EquivalenceReport> {
    let problem = SpiceProblem::new(dict, y)?;
    let w = problem.weights().clone();
    let spice_cfg = config.spice.clone().with_variant(variant);

    let (spice_out, lasso_out) = parallel::join(
        config.exec,
        || {
            let t = Instant::now();
            problem
                .run(&spice_cfg)
                .map(|r| (r, t.elapsed().as_secs_f64()))
        },
        || {
            let t = Instant::now();
            let scaled = scaled_atoms(dict, &w)?;
            let sol = solve_constrained_l1(&scaled, y, variant, &config.solver)?;
            let p = lasso_to_powers(&sol, dict, y, variant)?;
            Ok::<_, SpiceError>((sol, p, t.elapsed().as_secs_f64()))
        },
    );
    let (run, spice_secs) = spice_out?;
    let (sol, p_lasso, lasso_secs) = lasso_out?;

    let g_lasso = evaluate_g(dict, y, &w, &p_lasso, &spice_cfg.jitter, spice_cfg.exec)?;
    let p_spice = run.state.powers.clone();
    let gap = mass_gap(&w, &p_spice, &p_lasso);
    Ok(EquivalenceReport {
        variant,
        support_spice: p_spice.signal_support(&w, config.support_threshold),
        support_lasso: p_lasso.signal_support(&w, config.support_threshold),
        g_spice: run.state.g_value,
        g_lasso,
        g_lower_bound: sol.objective * sol.objective + 1.0,
        linf_power_gap: gap,
        runtimes: Runtimes {
            spice_secs,
            lasso_secs,
        },
        spice_iterations: run.state.iteration,
        spice_converged: run.state.converged,
        lasso_iterations: sol.iterations,
        lasso_converged: sol.converged,
        p_spice: Some(p_spice),
        p_lasso: Some(p_lasso),
        lasso: Some(sol),
    })
}

/// `max_k |w_k (p_k - q_k)|`.
pub fn mass_gap(w: &Weights, p: &PowerEstimate, q: &PowerEstimate) -> f64 {
    w.as_slice()
        .iter()
        .zip(p.as_slice().iter().zip(q.as_slice()))
        .map(|(w, (a, b))| (w * (a - b)).abs())
        .fold(0.0, f64::max)
}
