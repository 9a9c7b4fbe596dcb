//! Complex L1-type regression solvers.
//!
//! Both complex problems have the form `min_x L(y - Phi x) + ||x||_1` where
//! `||x||_1 = sum_k |x_k|` uses the complex modulus and the loss is either
//! the LAD loss `||r||_1` or the root-mean loss `sqrt(N) ||r||_2`. They are
//! solved by ADMM on the splitting `u = [Phi; I] x`:
//!
//! ```text
//! x   <- (Phi^H Phi + I)^{-1} [Phi^H (u1 - l1) + (u2 - l2)]
//! u1  <- y - prox_{L/rho}(y - Phi x - l1)
//! u2  <- S_{1/rho}(x + l2)
//! l   <- l + [Phi; I] x - u
//! ```
//!
//! `(Phi^H Phi + I)` does not depend on the penalty, so it is factored once
//! (through the Woodbury identity when `K > N`) and the penalty can adapt
//! freely. The returned coefficients are the `u2` block, which carries exact
//! zeros from the soft threshold.
//!
//! The real group Lasso is a separate real-arithmetic ADMM with block soft
//! thresholding, used to cross-check the complex square-root Lasso through
//! the isometric embedding `C^n -> R^{2n}`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiceError};
use crate::model::{Measurement, ScaledAtoms};
use crate::numerics::{
    self, factor_hpd, ComplexMatrix, HermitianFactorization, JitterPolicy, RealMatrix,
};
use crate::parallel::Execution;
use crate::spice::NoiseModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Initial ADMM penalty, multiplied by `sqrt(N) / ||y||_2`.
    pub penalty: f64,
    /// Residual balancing of the penalty (`mu = 10`, `tau = 2`). Off by
    /// default: on some instances the balancing keeps flipping and ADMM
    /// stalls.
    pub adaptive_penalty: bool,
    /// Over-relaxation factor in `[1, 2)`.
    pub relaxation: f64,
    pub exec: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            abs_tol: 1e-9,
            rel_tol: 1e-7,
            penalty: 3.0,
            adaptive_penalty: false,
            relaxation: 1.6,
            exec: Execution::default(),
        }
    }
}

impl SolverConfig {
    /// Tolerances tightened for cross-validation work.
    pub fn precise() -> Self {
        Self {
            max_iters: 200_000,
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `||r||_1`
    Lad,
    /// `sqrt(N) ||r||_2`
    RootMean,
}

impl Loss {
    pub fn for_variant(variant: NoiseModel) -> Self {
        match variant {
            NoiseModel::Heteroscedastic => Loss::Lad,
            NoiseModel::EqualVariance => Loss::RootMean,
        }
    }

    pub fn value(self, r: &[Complex64]) -> f64 {
        match self {
            Loss::Lad => numerics::norm1(r),
            Loss::RootMean => (r.len() as f64).sqrt() * numerics::norm2(r),
        }
    }

    /// `prox_{t L}(v)`.
    fn prox(self, v: &mut [Complex64], t: f64) {
        match self {
            Loss::Lad => v.iter_mut().for_each(|z| *z = soft_threshold(*z, t)),
            Loss::RootMean => {
                let tau = t * (v.len() as f64).sqrt();
                let nrm = numerics::norm2(v);
                let shrink = if nrm > tau { 1.0 - tau / nrm } else { 0.0 };
                v.iter_mut().for_each(|z| *z *= shrink);
            }
        }
    }
}

/// Complex soft threshold `z max(1 - t/|z|, 0)`.
pub fn soft_threshold(z: Complex64, t: f64) -> Complex64 {
    let m = z.norm();
    if m > t {
        z * (1.0 - t / m)
    } else {
        Complex64::new(0.0, 0.0)
    }
}

/// Block soft threshold of a real group: `v max(1 - t/||v||, 0)`.
pub fn block_soft_threshold(v: &mut [f64], t: f64) {
    let nrm = numerics::norm2(v);
    let shrink = if nrm > t { 1.0 - t / nrm } else { 0.0 };
    v.iter_mut().for_each(|x| *x *= shrink);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    /// The `K` signal coefficients.
    pub c_tilde: Vec<Complex64>,
    /// All `K + N` coefficients when the noise block has been reconstructed.
    pub c_full: Option<Vec<Complex64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoSolution {
    pub coefficients: CoefficientVector,
    /// `y - Phi c_tilde`.
    pub residual: Vec<Complex64>,
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
    pub loss: Loss,
    /// Multiplier of the loss block: an element of `dL(residual)` up to the
    /// ADMM tolerance.
    pub residual_dual: Vec<Complex64>,
}

impl LassoSolution {
    /// Converts a non-converged solve into [`SpiceError::MaxIterationsExceeded`].
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(SpiceError::MaxIterationsExceeded {
                iterations: self.iterations,
            })
        }
    }

    /// `(index, Re, Im)` of the nonzero signal coefficients.
    pub fn support(&self) -> Vec<(usize, f64, f64)> {
        self.coefficients
            .c_tilde
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm() > 0.0)
            .map(|(k, c)| (k, c.re, c.im))
            .collect()
    }

    pub fn export(&self) -> SolutionExport {
        SolutionExport {
            objective: self.objective,
            iterations: self.iterations,
            support: self.support(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionExport {
    pub objective: f64,
    pub iterations: usize,
    pub support: Vec<(usize, f64, f64)>,
}

impl SolutionExport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }
}

/// `L(y - Phi x) + ||x||_1`.
pub fn objective(phi: &ComplexMatrix, y: &[Complex64], x: &[Complex64], loss: Loss) -> Result<f64> {
    let r = residual(phi, y, x)?;
    Ok(loss.value(&r) + numerics::norm1(x))
}

fn residual(phi: &ComplexMatrix, y: &[Complex64], x: &[Complex64]) -> Result<Vec<Complex64>> {
    let fit = phi.mul_vec(x)?;
    Ok(y.iter().zip(&fit).map(|(a, b)| a - b).collect())
}

/// Solves `(Phi^H Phi + I) x = b` for a fixed `Phi`.
enum RidgeSolver {
    Direct(HermitianFactorization<Complex64>),
    Woodbury(HermitianFactorization<Complex64>),
}

impl RidgeSolver {
    fn new(phi: &ComplexMatrix, phi_h: &ComplexMatrix, exec: Execution) -> Result<Self> {
        let (n, k) = (phi.rows(), phi.cols());
        if k <= n {
            let g = phi_h.gram_plus_diagonal(&vec![1.0; k], exec)?;
            Ok(Self::Direct(factor_hpd(&g, &JitterPolicy::default())?))
        } else {
            let h = phi.gram_plus_diagonal(&vec![1.0; n], exec)?;
            Ok(Self::Woodbury(factor_hpd(&h, &JitterPolicy::default())?))
        }
    }

    fn solve(
        &self,
        phi: &ComplexMatrix,
        phi_h: &ComplexMatrix,
        b: &[Complex64],
        exec: Execution,
    ) -> Result<Vec<Complex64>> {
        match self {
            Self::Direct(f) => f.solve(b),
            Self::Woodbury(f) => {
                let t = f.solve(&phi.mul_vec_with(b, exec)?)?;
                let corr = phi_h.mul_vec_with(&t, exec)?;
                Ok(b.iter().zip(&corr).map(|(a, c)| a - c).collect())
            }
        }
    }
}

fn validate(phi: &ComplexMatrix, y: &[Complex64]) -> Result<()> {
    if phi.rows() != y.len() {
        return Err(SpiceError::DimensionMismatch {
            expected: phi.rows(),
            found: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) || phi.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(SpiceError::NonFiniteInput("regression data"));
    }
    Ok(())
}

/// `min ||y - Phi x||_1 + ||x||_1` over complex `x`.
pub fn solve_lad_lasso(
    phi: &ComplexMatrix,
    y: &[Complex64],
    config: &SolverConfig,
) -> Result<LassoSolution> {
    solve_l1(phi, y, Loss::Lad, config)
}

/// `min sqrt(N) ||y - Phi x||_2 + ||x||_1` over complex `x`.
pub fn solve_sqrt_lasso(
    phi: &ComplexMatrix,
    y: &[Complex64],
    config: &SolverConfig,
) -> Result<LassoSolution> {
    solve_l1(phi, y, Loss::RootMean, config)
}

/// Shared ADMM driver for both losses.
pub fn solve_l1(
    phi: &ComplexMatrix,
    y: &[Complex64],
    loss: Loss,
    config: &SolverConfig,
) -> Result<LassoSolution> {
    validate(phi, y)?;
    let (n, k) = (phi.rows(), phi.cols());
    let zero = Complex64::new(0.0, 0.0);
    let y_norm = numerics::norm2(y);
    if y_norm == 0.0 || k == 0 {
        let x = vec![zero; k];
        return Ok(finish(phi, y, x, loss, 0, 0.0, 0.0, true, vec![zero; n]));
    }
    let exec = config.exec;
    let phi_h = phi.conj_transpose();
    let ridge = RidgeSolver::new(phi, &phi_h, exec)?;

    let mut rho = config.penalty * (n as f64).sqrt() / y_norm;
    let alpha = config.relaxation;
    let mut u1 = vec![zero; n];
    let mut u2 = vec![zero; k];
    let mut l1 = vec![zero; n];
    let mut l2 = vec![zero; k];
    let mut rhs = vec![zero; k];
    let (mut r_norm, mut s_norm) = (f64::INFINITY, f64::INFINITY);
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=config.max_iters {
        iterations = it;
        // x-update
        let t1: Vec<Complex64> = u1.iter().zip(&l1).map(|(u, l)| u - l).collect();
        let back = phi_h.mul_vec_with(&t1, exec)?;
        for ((r, b), (u, l)) in rhs.iter_mut().zip(&back).zip(u2.iter().zip(&l2)) {
            *r = b + u - l;
        }
        let x = ridge.solve(phi, &phi_h, &rhs, exec)?;
        let px = phi.mul_vec_with(&x, exec)?;

        // relaxed images of [Phi; I] x
        let h1: Vec<Complex64> = px
            .iter()
            .zip(&u1)
            .map(|(a, u)| a * alpha + u * (1.0 - alpha))
            .collect();
        let h2: Vec<Complex64> = x
            .iter()
            .zip(&u2)
            .map(|(a, u)| a * alpha + u * (1.0 - alpha))
            .collect();

        let u1_old = std::mem::take(&mut u1);
        let u2_old = std::mem::take(&mut u2);

        // u1 = y - prox_{L/rho}(y - h1 - l1)
        let mut v: Vec<Complex64> = y
            .iter()
            .zip(&h1)
            .zip(&l1)
            .map(|((y, h), l)| y - h - l)
            .collect();
        loss.prox(&mut v, 1.0 / rho);
        u1 = y.iter().zip(&v).map(|(y, v)| y - v).collect();
        u2 = h2
            .iter()
            .zip(&l2)
            .map(|(h, l)| soft_threshold(h + l, 1.0 / rho))
            .collect();

        for ((l, h), u) in l1.iter_mut().zip(&h1).zip(&u1) {
            *l += h - u;
        }
        for ((l, h), u) in l2.iter_mut().zip(&h2).zip(&u2) {
            *l += h - u;
        }

        // residuals of the constraint [Phi; I] x = u
        let r_sq: f64 = px
            .iter()
            .zip(&u1)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            + x.iter()
                .zip(&u2)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>();
        r_norm = r_sq.sqrt();
        let d1: Vec<Complex64> = u1.iter().zip(&u1_old).map(|(a, b)| a - b).collect();
        let back_d = phi_h.mul_vec_with(&d1, exec)?;
        let s_sq: f64 = back_d
            .iter()
            .zip(u2.iter().zip(&u2_old))
            .map(|(b, (a, c))| (b + a - c).norm_sqr())
            .sum();
        s_norm = rho * s_sq.sqrt();

        let mx_norm = (numerics::norm2_sq(&px) + numerics::norm2_sq(&x)).sqrt();
        let u_norm = (numerics::norm2_sq(&u1) + numerics::norm2_sq(&u2)).sqrt();
        let back_l = phi_h.mul_vec_with(&l1, exec)?;
        let dual_norm = rho
            * back_l
                .iter()
                .zip(&l2)
                .map(|(a, b)| (a + b).norm_sqr())
                .sum::<f64>()
                .sqrt();
        let eps_pri =
            ((n + k) as f64).sqrt() * config.abs_tol + config.rel_tol * mx_norm.max(u_norm);
        let eps_dual = (k as f64).sqrt() * config.abs_tol + config.rel_tol * dual_norm;
        if r_norm <= eps_pri && s_norm <= eps_dual {
            converged = true;
            break;
        }

        if config.adaptive_penalty {
            const MU: f64 = 10.0;
            const TAU: f64 = 2.0;
            let scale = if r_norm > MU * s_norm {
                TAU
            } else if s_norm > MU * r_norm {
                1.0 / TAU
            } else {
                1.0
            };
            if scale != 1.0 {
                rho *= scale;
                l1.iter_mut().for_each(|l| *l /= scale);
                l2.iter_mut().for_each(|l| *l /= scale);
            }
        }
    }

    let residual_dual: Vec<Complex64> = l1.iter().map(|l| -(l * rho)).collect();
    Ok(finish(
        phi,
        y,
        u2,
        loss,
        iterations,
        r_norm,
        s_norm,
        converged,
        residual_dual,
    ))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    phi: &ComplexMatrix,
    y: &[Complex64],
    x: Vec<Complex64>,
    loss: Loss,
    iterations: usize,
    primal_residual: f64,
    dual_residual: f64,
    converged: bool,
    residual_dual: Vec<Complex64>,
) -> LassoSolution {
    let residual = residual(phi, y, &x).expect("dimensions validated");
    let objective = loss.value(&residual) + numerics::norm1(&x);
    LassoSolution {
        coefficients: CoefficientVector {
            c_tilde: x,
            c_full: None,
        },
        residual,
        objective,
        iterations,
        primal_residual,
        dual_residual,
        converged,
        loss,
        residual_dual,
    }
}

/// Largest violation of the subgradient optimality conditions
/// `Phi^H u in d||x||_1`, `u in dL(y - Phi x)`.
///
/// `u` is the normalized residual direction where the residual (or, for the
/// root-mean loss, the whole residual vector) is nonzero, and the solver's
/// multiplier clipped into the subdifferential elsewhere. Residual entries
/// with modulus below `zero_tol` count as zero.
pub fn subgradient_certificate(
    phi: &ComplexMatrix,
    y: &[Complex64],
    solution: &LassoSolution,
    zero_tol: f64,
) -> Result<f64> {
    let x = &solution.coefficients.c_tilde;
    let r = residual(phi, y, x)?;
    let u: Vec<Complex64> = match solution.loss {
        Loss::Lad => r
            .iter()
            .zip(&solution.residual_dual)
            .map(|(r, d)| {
                if r.norm() > zero_tol {
                    r / r.norm()
                } else if d.norm() > 1.0 {
                    d / d.norm()
                } else {
                    *d
                }
            })
            .collect(),
        Loss::RootMean => {
            let sn = (r.len() as f64).sqrt();
            let nrm = numerics::norm2(&r);
            if nrm > zero_tol {
                r.iter().map(|v| v * (sn / nrm)).collect()
            } else {
                let dn = numerics::norm2(&solution.residual_dual);
                let s = if dn > sn { sn / dn } else { 1.0 };
                solution.residual_dual.iter().map(|d| d * s).collect()
            }
        }
    };
    let g = phi.adjoint_mul_vec(&u)?;
    Ok(g.iter()
        .zip(x)
        .map(|(g, x)| {
            if x.norm() > 0.0 {
                (g - x / x.norm()).norm()
            } else {
                (g.norm() - 1.0).max(0.0)
            }
        })
        .fold(0.0, f64::max))
}

/// Solves the equality-constrained problem `min sum |c_k|` (heteroscedastic)
/// or `min sum_{k<K} |c_k| + sqrt(N sum_{k>=K} |c_k|^2)` (equal variance)
/// subject to `sum_k c_k a~_k = y`.
///
/// Row `j` of the constraint reads `(Phi c~)_j + s_j c_{K+j} = y_j` with
/// `s_j = ||y||_2` the scale of the identity atom, so the noise block is
/// eliminated as `c_{K+j} = (y_j - (Phi c~)_j) / s_j` and the signal block
/// solves the Lasso-type problem with data `y_j / s_j` and regressors
/// `Phi_{j.} / s_j` (unit-norm columns). The returned solution lives in that
/// normalized problem: its residual is the noise block of `c_full`.
pub fn solve_constrained_l1(
    scaled: &ScaledAtoms,
    y: &Measurement,
    variant: NoiseModel,
    config: &SolverConfig,
) -> Result<LassoSolution> {
    let (phi_n, y_n) = normalized_problem(scaled, &y.y)?;
    let mut sol = solve_l1(&phi_n, &y_n, Loss::for_variant(variant), config)?;
    let mut full = sol.coefficients.c_tilde.clone();
    full.extend_from_slice(&sol.residual);
    sol.coefficients.c_full = Some(full);
    Ok(sol)
}

/// Row-normalized regression data `(diag(1/s) Phi, y / s)`.
pub fn normalized_problem(
    scaled: &ScaledAtoms,
    y: &[Complex64],
) -> Result<(ComplexMatrix, Vec<Complex64>)> {
    if y.len() != scaled.n_samples() {
        return Err(SpiceError::DimensionMismatch {
            expected: scaled.n_samples(),
            found: y.len(),
        });
    }
    let s = scaled.noise_scale();
    let phi = scaled.phi();
    let phi_n = ComplexMatrix::from_fn(phi.rows(), phi.cols(), |r, c| phi[(r, c)] / s[r]);
    let y_n = y.iter().zip(s).map(|(v, s)| v / *s).collect();
    Ok((phi_n, y_n))
}

/// `Phi_R = [Re Phi, -Im Phi; Im Phi, Re Phi]`, `y_R = [Re y; Im y]`.
pub fn real_embedding(phi: &ComplexMatrix, y: &[Complex64]) -> (RealMatrix, Vec<f64>) {
    let (n, k) = (phi.rows(), phi.cols());
    let phi_r = RealMatrix::from_fn(2 * n, 2 * k, |r, c| {
        let v = phi[(r % n, c % k)];
        match (r < n, c < k) {
            (true, true) | (false, false) => v.re,
            (true, false) => -v.im,
            (false, true) => v.im,
        }
    });
    let y_r = y
        .iter()
        .map(|v| v.re)
        .chain(y.iter().map(|v| v.im))
        .collect();
    (phi_r, y_r)
}

/// `[Re x; Im x]`.
pub fn embed_vector(x: &[Complex64]) -> Vec<f64> {
    x.iter()
        .map(|v| v.re)
        .chain(x.iter().map(|v| v.im))
        .collect()
}

/// Inverse of [`embed_vector`].
pub fn unembed_vector(x: &[f64]) -> Vec<Complex64> {
    let k = x.len() / 2;
    (0..k).map(|i| Complex64::new(x[i], x[i + k])).collect()
}

/// The `K` groups `{k, k + K}` pairing real and imaginary parts.
pub fn complex_pair_groups(k: usize) -> Vec<Vec<usize>> {
    (0..k).map(|i| vec![i, i + k]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLassoSolution {
    pub coefficients: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `min sqrt(M/2) ||y_R - Phi_R c||_2 + sum_g ||c_g||_2` for a real
/// `M x P` system, where `groups` partitions `0..P`.
pub fn solve_group_lasso_real(
    phi_r: &RealMatrix,
    y_r: &[f64],
    groups: &[Vec<usize>],
    config: &SolverConfig,
) -> Result<GroupLassoSolution> {
    let (m, p) = (phi_r.rows(), phi_r.cols());
    if y_r.len() != m {
        return Err(SpiceError::DimensionMismatch {
            expected: m,
            found: y_r.len(),
        });
    }
    let mut seen = vec![false; p];
    for g in groups {
        for &i in g {
            if i >= p || seen[i] {
                return Err(SpiceError::InvalidGroups(format!(
                    "index {i} repeated or out of range"
                )));
            }
            seen[i] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(SpiceError::InvalidGroups(
            "groups do not cover all coordinates".into(),
        ));
    }
    let weight = (m as f64 / 2.0).sqrt();
    let objective = |c: &[f64]| -> f64 {
        let fit = phi_r.mul_vec(c).expect("dimensions checked");
        let r: Vec<f64> = y_r.iter().zip(&fit).map(|(a, b)| a - b).collect();
        weight * numerics::norm2(&r)
            + groups
                .iter()
                .map(|g| g.iter().map(|&i| c[i] * c[i]).sum::<f64>().sqrt())
                .sum::<f64>()
    };
    let y_norm = numerics::norm2(y_r);
    if y_norm == 0.0 || p == 0 {
        let c = vec![0.0; p];
        return Ok(GroupLassoSolution {
            objective: objective(&c),
            coefficients: c,
            iterations: 0,
            converged: true,
        });
    }

    let exec = config.exec;
    let phi_t = phi_r.conj_transpose();
    // (Phi^T Phi + I) via the smaller of the two Gram systems
    let woodbury = p > m;
    let fac = if woodbury {
        factor_hpd(
            &phi_r.gram_plus_diagonal(&vec![1.0; m], exec)?,
            &JitterPolicy::default(),
        )?
    } else {
        factor_hpd(
            &phi_t.gram_plus_diagonal(&vec![1.0; p], exec)?,
            &JitterPolicy::default(),
        )?
    };
    let ridge = |b: &[f64]| -> Result<Vec<f64>> {
        if woodbury {
            let t = fac.solve(&phi_r.mul_vec_with(b, exec)?)?;
            let corr = phi_t.mul_vec_with(&t, exec)?;
            Ok(b.iter().zip(&corr).map(|(a, c)| a - c).collect())
        } else {
            fac.solve(b)
        }
    };

    let mut rho = config.penalty * (m as f64 / 2.0).sqrt() / y_norm;
    let alpha = config.relaxation;
    let mut u1 = vec![0.0; m];
    let mut u2 = vec![0.0; p];
    let mut l1 = vec![0.0; m];
    let mut l2 = vec![0.0; p];
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=config.max_iters {
        iterations = it;
        let t1: Vec<f64> = u1.iter().zip(&l1).map(|(u, l)| u - l).collect();
        let back = phi_t.mul_vec_with(&t1, exec)?;
        let rhs: Vec<f64> = back
            .iter()
            .zip(u2.iter().zip(&l2))
            .map(|(b, (u, l))| b + u - l)
            .collect();
        let x = ridge(&rhs)?;
        let px = phi_r.mul_vec_with(&x, exec)?;
        let h1: Vec<f64> = px
            .iter()
            .zip(&u1)
            .map(|(a, u)| alpha * a + (1.0 - alpha) * u)
            .collect();
        let h2: Vec<f64> = x
            .iter()
            .zip(&u2)
            .map(|(a, u)| alpha * a + (1.0 - alpha) * u)
            .collect();
        let u1_old = std::mem::take(&mut u1);
        let u2_old = std::mem::take(&mut u2);

        let mut v: Vec<f64> = y_r
            .iter()
            .zip(&h1)
            .zip(&l1)
            .map(|((y, h), l)| y - h - l)
            .collect();
        block_soft_threshold(&mut v, weight / rho);
        u1 = y_r.iter().zip(&v).map(|(y, v)| y - v).collect();

        u2 = h2.iter().zip(&l2).map(|(h, l)| h + l).collect();
        for g in groups {
            let mut block: Vec<f64> = g.iter().map(|&i| u2[i]).collect();
            block_soft_threshold(&mut block, 1.0 / rho);
            for (&i, b) in g.iter().zip(block) {
                u2[i] = b;
            }
        }

        for ((l, h), u) in l1.iter_mut().zip(&h1).zip(&u1) {
            *l += h - u;
        }
        for ((l, h), u) in l2.iter_mut().zip(&h2).zip(&u2) {
            *l += h - u;
        }

        let r_norm = (px
            .iter()
            .zip(&u1)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            + x.iter().zip(&u2).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sqrt();
        let d1: Vec<f64> = u1.iter().zip(&u1_old).map(|(a, b)| a - b).collect();
        let back_d = phi_t.mul_vec_with(&d1, exec)?;
        let s_norm = rho
            * back_d
                .iter()
                .zip(u2.iter().zip(&u2_old))
                .map(|(b, (a, c))| (b + a - c).powi(2))
                .sum::<f64>()
                .sqrt();
        let mx_norm = (numerics::norm2_sq(&px) + numerics::norm2_sq(&x)).sqrt();
        let u_norm = (numerics::norm2_sq(&u1) + numerics::norm2_sq(&u2)).sqrt();
        let back_l = phi_t.mul_vec_with(&l1, exec)?;
        let dual_norm = rho
            * back_l
                .iter()
                .zip(&l2)
                .map(|(a, b)| (a + b).powi(2))
                .sum::<f64>()
                .sqrt();
        let eps_pri =
            ((m + p) as f64).sqrt() * config.abs_tol + config.rel_tol * mx_norm.max(u_norm);
        let eps_dual = (p as f64).sqrt() * config.abs_tol + config.rel_tol * dual_norm;
        if r_norm <= eps_pri && s_norm <= eps_dual {
            converged = true;
            break;
        }
        if config.adaptive_penalty {
            let scale = if r_norm > 10.0 * s_norm {
                2.0
            } else if s_norm > 10.0 * r_norm {
                0.5
            } else {
                1.0
            };
            if scale != 1.0 {
                rho *= scale;
                l1.iter_mut().for_each(|l| *l /= scale);
                l2.iter_mut().for_each(|l| *l /= scale);
            }
        }
    }

    Ok(GroupLassoSolution {
        objective: objective(&u2),
        coefficients: u2,
        iterations,
        converged,
    })
}
