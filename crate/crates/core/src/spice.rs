//! The SPICE covariance-fitting iteration.
//!
//! Each [`SpiceState`] is a fully evaluated point: the covariance
//! `R = sum_k p_k a_k a_k^H` for its powers has been factored once, and the
//! correlations `a_k^H R^{-1} y`, the normalizer `rho` and the cost `g` are
//! cached. A step maps one evaluated state to the next, so every iteration
//! costs exactly one Hermitian factorization.
//!
//! Two noise models are supported. The heteroscedastic update is
//!
//! ```text
//! p_k <- p_k |a_k^H R^{-1} y| / (w_k^{1/2} rho),   rho = sum_l w_l^{1/2} p_l |a_l^H R^{-1} y|
//! ```
//!
//! over all `K + N` atoms. With `c_k = w_k^{1/2} p_k a_k^H R^{-1} y` this is
//! `w_k p_k <- |c_k| / sum_i |c_i|`. The equal-variance model ties the `N`
//! noise powers and allocates the tied block the mass
//! `sqrt(N sum_{k>K} |c_k|^2)` instead, normalized by
//! `sqrt(alpha) = sum_{k<=K} |c_k| + sqrt(N sum_{k>K} |c_k|^2)`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiceError};
use crate::model::{compute_weights, Dictionary, Measurement, Weights};
use crate::numerics::{self, factor_hpd, ComplexMatrix, DenseMatrix, JitterPolicy};
use crate::parallel::Execution;

/// Powers below this are treated as exactly zero.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Free per-sample noise variances.
    Heteroscedastic,
    /// A single variance shared by all samples.
    EqualVariance,
}

/// Nonnegative powers over the extended dictionary: `K` signal powers
/// `|s_k|^2` followed by `N` noise variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    p: Vec<f64>,
    n_signal: usize,
    variant: NoiseModel,
}

impl PowerEstimate {
    pub fn new(p: Vec<f64>, n_signal: usize, variant: NoiseModel) -> Result<Self> {
        if n_signal > p.len() {
            return Err(SpiceError::DimensionMismatch {
                expected: n_signal,
                found: p.len(),
            });
        }
        if let Some(index) = p.iter().position(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(SpiceError::NonPositiveInit {
                index,
                value: p[index],
            });
        }
        if variant == NoiseModel::EqualVariance {
            let noise = &p[n_signal..];
            if noise.iter().any(|&x| x != noise[0]) {
                return Err(SpiceError::InvalidGroups(
                    "equal-variance noise powers must be identical".into(),
                ));
            }
        }
        Ok(Self {
            p,
            n_signal,
            variant,
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.p
    }

    pub fn signal(&self) -> &[f64] {
        &self.p[..self.n_signal]
    }

    pub fn noise(&self) -> &[f64] {
        &self.p[self.n_signal..]
    }

    pub fn n_signal(&self) -> usize {
        self.n_signal
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn variant(&self) -> NoiseModel {
        self.variant
    }

    /// Extended positions whose normalized mass `w_k p_k` exceeds `threshold`.
    pub fn support(&self, w: &Weights, threshold: f64) -> Vec<usize> {
        self.p
            .iter()
            .zip(w.as_slice())
            .enumerate()
            .filter(|(_, (p, w))| *p * *w > threshold)
            .map(|(k, _)| k)
            .collect()
    }

    /// Signal positions (`< K`) whose normalized mass exceeds `threshold`.
    pub fn signal_support(&self, w: &Weights, threshold: f64) -> Vec<usize> {
        self.support(w, threshold)
            .into_iter()
            .filter(|&k| k < self.n_signal)
            .collect()
    }
}

/// `R = sum_{k<K} p_k a_k a_k^H + diag(p_K .. p_{K+N-1})`.
///
/// Atoms with zero power are skipped.
pub fn assemble_covariance(
    dict: &Dictionary,
    p: &PowerEstimate,
    exec: Execution,
) -> Result<ComplexMatrix> {
    if p.len() != dict.n_extended() || p.n_signal() != dict.n_atoms() {
        return Err(SpiceError::DimensionMismatch {
            expected: dict.n_extended(),
            found: p.len(),
        });
    }
    let active: Vec<usize> = (0..dict.n_atoms()).filter(|&k| p.p[k] > 0.0).collect();
    let scale: Vec<f64> = active.iter().map(|&k| p.p[k].sqrt()).collect();
    let a = dict.atom_matrix();
    let b = DenseMatrix::from_fn(dict.n_samples(), active.len(), |n, j| {
        a[(n, active[j])] * scale[j]
    });
    b.gram_plus_diagonal(p.noise(), exec)
}

/// `f(R) = ||R^{-1/2}(y y^H - R)||_F^2`, evaluated through its expansion
/// `||y||^2 y^H R^{-1} y - 2 ||y||^2 + tr R`.
pub fn cost_f(r: &ComplexMatrix, y: &[Complex64], jitter: &JitterPolicy) -> Result<f64> {
    let fac = factor_hpd(r, jitter)?;
    let q = fac.quadratic_form(y)?;
    let yy = numerics::norm2_sq(y);
    Ok(yy * q - 2.0 * yy + r.trace().re)
}

/// `g(R) = y^H R^{-1} y + sum_k w_k p_k`.
pub fn cost_g(
    r: &ComplexMatrix,
    y: &[Complex64],
    w: &Weights,
    p: &PowerEstimate,
    jitter: &JitterPolicy,
) -> Result<f64> {
    if w.len() != p.len() {
        return Err(SpiceError::DimensionMismatch {
            expected: w.len(),
            found: p.len(),
        });
    }
    let fac = factor_hpd(r, jitter)?;
    Ok(fac.quadratic_form(y)? + w.mass(p.as_slice()))
}

/// Assembles `R(p)` and evaluates `g`.
pub fn evaluate_g(
    dict: &Dictionary,
    y: &Measurement,
    w: &Weights,
    p: &PowerEstimate,
    jitter: &JitterPolicy,
    exec: Execution,
) -> Result<f64> {
    let r = assemble_covariance(dict, p, exec)?;
    cost_g(&r, &y.y, w, p, jitter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitPolicy {
    /// `p_k = |a_k^H y|^2 / ||a_k||^4`, floored at `1e-8 ||y||^2`.
    MatchedFilter,
    /// Equal normalized mass `w_k p_k = 1 / (K + N)`.
    Uniform,
    /// Caller-supplied strictly positive powers.
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiceConfig {
    pub variant: NoiseModel,
    pub max_iters: usize,
    /// Stop when `||p(i+1) - p(i)||_inf / ||p(i)||_inf` drops below this.
    pub rel_tol: f64,
    pub init: InitPolicy,
    pub jitter: JitterPolicy,
    pub exec: Execution,
}

impl Default for SpiceConfig {
    fn default() -> Self {
        Self {
            variant: NoiseModel::Heteroscedastic,
            max_iters: 5000,
            rel_tol: 1e-8,
            init: InitPolicy::MatchedFilter,
            jitter: JitterPolicy::default(),
            exec: Execution::default(),
        }
    }
}

impl SpiceConfig {
    pub fn with_variant(mut self, variant: NoiseModel) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }
}

#[derive(Debug, Clone)]
pub struct SpiceState {
    pub powers: PowerEstimate,
    pub iteration: usize,
    /// Normalizer of the update computed at these powers.
    pub rho: f64,
    /// `g(R)` at these powers.
    pub g_value: f64,
    pub converged: bool,
    pub jitter_applied: f64,
    /// `a_k^H R^{-1} y` over the extended dictionary.
    correlations: Vec<Complex64>,
    /// `|c_k| = w_k^{1/2} p_k |a_k^H R^{-1} y|`.
    coef_moduli: Vec<f64>,
}

impl SpiceState {
    /// Elfving coefficients `c_k = w_k^{1/2} p_k a_k^H R^{-1} y` at the
    /// current powers; at the fixed point these solve the equivalent
    /// L1 problem.
    pub fn coefficients(&self, w: &Weights) -> Vec<Complex64> {
        self.correlations
            .iter()
            .zip(self.powers.as_slice())
            .zip(w.as_slice())
            .map(|((r, p), w)| r * (w.sqrt() * p))
            .collect()
    }

    /// Line amplitude estimates `s_k = p_k a_k^H R^{-1} y` for the signal
    /// atoms.
    pub fn amplitudes(&self) -> Vec<Complex64> {
        let k = self.powers.n_signal();
        self.correlations[..k]
            .iter()
            .zip(self.powers.signal())
            .map(|(r, p)| r * *p)
            .collect()
    }

    pub fn correlations(&self) -> &[Complex64] {
        &self.correlations
    }

    /// JSON-ready snapshot with powers above `1e-12` keyed by position.
    pub fn dump(&self) -> StateDump {
        StateDump {
            iteration: self.iteration,
            g_value: self.g_value,
            rho: self.rho,
            converged: self.converged,
            p: self
                .powers
                .as_slice()
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 1e-12)
                .map(|(k, &p)| (k, p))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDump {
    pub iteration: usize,
    pub g_value: f64,
    pub rho: f64,
    pub converged: bool,
    pub p: BTreeMap<usize, f64>,
}

impl StateDump {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state dump serializes")
    }
}

/// A measurement bound to its dictionary and weights.
#[derive(Debug, Clone)]
pub struct SpiceProblem<'a> {
    dict: &'a Dictionary,
    y: &'a Measurement,
    w: Weights,
}

impl<'a> SpiceProblem<'a> {
    pub fn new(dict: &'a Dictionary, y: &'a Measurement) -> Result<Self> {
        let w = compute_weights(dict, y)?;
        Ok(Self { dict, y, w })
    }

    pub fn weights(&self) -> &Weights {
        &self.w
    }

    pub fn dictionary(&self) -> &Dictionary {
        self.dict
    }

    pub fn measurement(&self) -> &Measurement {
        self.y
    }

    pub fn initial_powers(&self, config: &SpiceConfig) -> Result<PowerEstimate> {
        let (k, n) = (self.dict.n_atoms(), self.dict.n_samples());
        let total = k + n;
        let yy = self.w.y_norm_sq();
        let mut p = match &config.init {
            InitPolicy::MatchedFilter => {
                let corr = self.dict.correlate(&self.y.y, config.exec)?;
                corr.iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let a2 = self.dict.atom_norm_sq(i);
                        (c.norm_sqr() / (a2 * a2)).max(1e-8 * yy)
                    })
                    .collect::<Vec<_>>()
            }
            InitPolicy::Uniform => self
                .w
                .as_slice()
                .iter()
                .map(|w| 1.0 / (w * total as f64))
                .collect(),
            InitPolicy::Given(p) => {
                if p.len() != total {
                    return Err(SpiceError::DimensionMismatch {
                        expected: total,
                        found: p.len(),
                    });
                }
                p.clone()
            }
        };
        if let Some(index) = p.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(SpiceError::NonPositiveInit {
                index,
                value: p[index],
            });
        }
        if config.variant == NoiseModel::EqualVariance && n > 0 {
            let mean = p[k..].iter().sum::<f64>() / n as f64;
            p[k..].iter_mut().for_each(|x| *x = mean);
        }
        PowerEstimate::new(p, k, config.variant)
    }

    /// Factors `R(p)` and caches everything the next update needs.
    pub fn evaluate(
        &self,
        powers: PowerEstimate,
        iteration: usize,
        config: &SpiceConfig,
    ) -> Result<SpiceState> {
        let r = assemble_covariance(self.dict, &powers, config.exec)?;
        let fac = factor_hpd(&r, &config.jitter)?;
        let z = fac.solve(&self.y.y)?;
        let quad = numerics::inner(&self.y.y, &z).re;
        let correlations = self.dict.correlate(&z, config.exec)?;
        let coef_moduli: Vec<f64> = correlations
            .iter()
            .zip(powers.as_slice())
            .zip(self.w.as_slice())
            .map(|((c, p), w)| w.sqrt() * p * c.norm())
            .collect();
        let k = self.dict.n_atoms();
        let rho = match powers.variant() {
            NoiseModel::Heteroscedastic => coef_moduli.iter().sum(),
            NoiseModel::EqualVariance => {
                let n = self.dict.n_samples() as f64;
                let signal: f64 = coef_moduli[..k].iter().sum();
                let noise_sq: f64 = coef_moduli[k..].iter().map(|c| c * c).sum();
                signal + (n * noise_sq).sqrt()
            }
        };
        let g_value = quad + self.w.mass(powers.as_slice());
        Ok(SpiceState {
            powers,
            iteration,
            rho,
            g_value,
            converged: false,
            jitter_applied: fac.jitter_applied(),
            correlations,
            coef_moduli,
        })
    }

    pub fn initial_state(&self, config: &SpiceConfig) -> Result<SpiceState> {
        let p = self.initial_powers(config)?;
        self.evaluate(p, 0, config)
    }

    /// Updated powers from an evaluated state; no factorization involved.
    pub fn update_powers(&self, state: &SpiceState) -> Result<PowerEstimate> {
        if !(state.rho > 0.0) || !state.rho.is_finite() {
            return Err(SpiceError::ZeroRho);
        }
        let k = self.dict.n_atoms();
        let w = self.w.as_slice();
        let p_old = state.powers.as_slice();
        let mut p: Vec<f64> = match state.powers.variant() {
            NoiseModel::Heteroscedastic => p_old
                .iter()
                .zip(&state.correlations)
                .zip(w)
                .map(|((p, c), w)| p * c.norm() / (w.sqrt() * state.rho))
                .collect(),
            NoiseModel::EqualVariance => {
                let n = self.dict.n_samples();
                let mut out: Vec<f64> = state.coef_moduli[..k]
                    .iter()
                    .zip(w)
                    .map(|(c, w)| c / (w * state.rho))
                    .collect();
                let noise_sq: f64 = state.coef_moduli[k..].iter().map(|c| c * c).sum();
                let block = (n as f64 * noise_sq).sqrt() / state.rho;
                // identity atoms share one weight, so the tie is exact
                let each = if n > 0 {
                    block / (n as f64 * w[k])
                } else {
                    0.0
                };
                out.extend(std::iter::repeat_n(each, n));
                out
            }
        };
        for x in &mut p {
            if *x < UNDERFLOW_FLOOR {
                *x = 0.0;
            }
        }
        PowerEstimate::new(p, k, state.powers.variant())
    }

    pub fn step(&self, state: &SpiceState, config: &SpiceConfig) -> Result<SpiceState> {
        let p = self.update_powers(state)?;
        self.evaluate(p, state.iteration + 1, config)
    }

    pub fn run(&self, config: &SpiceConfig) -> Result<SpiceRun> {
        let mut state = self.initial_state(config)?;
        let mut g_history = vec![state.g_value];
        while state.iteration < config.max_iters {
            let next = self.step(&state, config)?;
            let change = next
                .powers
                .as_slice()
                .iter()
                .zip(state.powers.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let scale = numerics::norm_inf(state.powers.as_slice()).max(f64::MIN_POSITIVE);
            g_history.push(next.g_value);
            state = next;
            if change / scale < config.rel_tol {
                state.converged = true;
                break;
            }
        }
        Ok(SpiceRun { state, g_history })
    }
}

#[derive(Debug, Clone)]
pub struct SpiceRun {
    pub state: SpiceState,
    /// `g` at every evaluated iterate, starting with the initialization.
    pub g_history: Vec<f64>,
}

/// One SPICE update from an evaluated state.
pub fn spice_step(
    state: &SpiceState,
    dict: &Dictionary,
    y: &Measurement,
    config: &SpiceConfig,
) -> Result<SpiceState> {
    SpiceProblem::new(dict, y)?.step(state, config)
}

/// Iterates from the configured initialization until the relative power
/// change falls below `rel_tol` or `max_iters` steps have been taken.
pub fn spice_run(dict: &Dictionary, y: &Measurement, config: &SpiceConfig) -> Result<SpiceRun> {
    SpiceProblem::new(dict, y)?.run(config)
}
