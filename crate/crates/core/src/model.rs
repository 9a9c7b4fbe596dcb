//! Sinusoidal dictionary, measurement simulation and SPICE weights.
//!
//! The extended dictionary is `[a_1 .. a_K e_1 .. e_N]`: `K` signal atoms
//! stored densely as the columns of an `N x K` matrix, followed by `N`
//! identity atoms that model per-sample noise. The identity part is never
//! materialized. Extended atom positions are 0-based: `0..K` are signal
//! atoms and `K + j` is the noise atom of sample `j`.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiceError};
use crate::numerics::{self, ComplexMatrix};
use crate::parallel::{self, Execution};

const TIME_STREAM: u64 = 0;
const MEASUREMENT_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: ComplexMatrix,
    atom_norms_sq: Vec<f64>,
    time_samples: Vec<f64>,
    freq_grid: Vec<f64>,
}

/// Builds `a_k = [e^{j w_k t_1} .. e^{j w_k t_N}]^T` for every grid frequency.
pub fn build_dictionary(time_samples: &[f64], freq_grid: &[f64]) -> Result<Dictionary> {
    if time_samples.is_empty() || freq_grid.is_empty() {
        return Err(SpiceError::EmptyGrid);
    }
    if time_samples.iter().any(|t| !t.is_finite()) {
        return Err(SpiceError::NonFiniteInput("time samples"));
    }
    if freq_grid.iter().any(|w| !w.is_finite()) {
        return Err(SpiceError::NonFiniteInput("frequency grid"));
    }
    let atoms = ComplexMatrix::from_fn(time_samples.len(), freq_grid.len(), |n, k| {
        Complex64::from_polar(1.0, freq_grid[k] * time_samples[n])
    });
    let mut dict = Dictionary::from_atoms(atoms)?;
    dict.time_samples = time_samples.to_vec();
    dict.freq_grid = freq_grid.to_vec();
    Ok(dict)
}

/// `w_k = 2 pi k / grid_size` for `k = 1..=grid_size`.
pub fn uniform_frequency_grid(grid_size: usize) -> Vec<f64> {
    (1..=grid_size)
        .map(|k| 2.0 * PI * k as f64 / grid_size as f64)
        .collect()
}

/// `n` sample times drawn i.i.d. uniform on `[0, horizon]`, sorted.
pub fn uniform_time_samples(n: usize, horizon: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(TIME_STREAM);
    let mut t: Vec<f64> = (0..n).map(|_| horizon * rng.random::<f64>()).collect();
    t.sort_by(f64::total_cmp);
    t
}

impl Dictionary {
    /// Wraps an arbitrary `N x K` atom matrix. `K = 0` (noise-only model) is
    /// allowed here; time samples and grid are left empty.
    pub fn from_atoms(atoms: ComplexMatrix) -> Result<Self> {
        if atoms.rows() == 0 {
            return Err(SpiceError::EmptyGrid);
        }
        if atoms
            .as_slice()
            .iter()
            .any(|a| !a.re.is_finite() || !a.im.is_finite())
        {
            return Err(SpiceError::NonFiniteInput("atom matrix"));
        }
        let mut atom_norms_sq = vec![0.0; atoms.cols()];
        for n in 0..atoms.rows() {
            for (acc, a) in atom_norms_sq.iter_mut().zip(atoms.row(n)) {
                *acc += a.norm_sqr();
            }
        }
        Ok(Self {
            atoms,
            atom_norms_sq,
            time_samples: Vec::new(),
            freq_grid: Vec::new(),
        })
    }

    /// `N`, the number of samples.
    pub fn n_samples(&self) -> usize {
        self.atoms.rows()
    }

    /// `K`, the number of signal atoms.
    pub fn n_atoms(&self) -> usize {
        self.atoms.cols()
    }

    /// `K + N`.
    pub fn n_extended(&self) -> usize {
        self.n_atoms() + self.n_samples()
    }

    pub fn atom_matrix(&self) -> &ComplexMatrix {
        &self.atoms
    }

    pub fn time_samples(&self) -> &[f64] {
        &self.time_samples
    }

    pub fn freq_grid(&self) -> &[f64] {
        &self.freq_grid
    }

    /// `||a_k||^2` for an extended position (1 for identity atoms).
    pub fn atom_norm_sq(&self, k: usize) -> f64 {
        if k < self.n_atoms() {
            self.atom_norms_sq[k]
        } else {
            1.0
        }
    }

    /// Dense copy of extended atom `k`.
    pub fn extended_atom(&self, k: usize) -> Vec<Complex64> {
        if k < self.n_atoms() {
            self.atoms.column(k)
        } else {
            let mut e = vec![Complex64::new(0.0, 0.0); self.n_samples()];
            e[k - self.n_atoms()] = Complex64::new(1.0, 0.0);
            e
        }
    }

    /// `a_k^H z` for every extended atom.
    pub fn correlate(&self, z: &[Complex64], exec: Execution) -> Result<Vec<Complex64>> {
        if z.len() != self.n_samples() {
            return Err(SpiceError::DimensionMismatch {
                expected: self.n_samples(),
                found: z.len(),
            });
        }
        let k = self.n_atoms();
        let mut out = if exec.is_parallel() && k > 64 {
            // column-wise dot products; the matrix is row-major so each task
            // strides, but stays independent of the others.
            parallel::map_range(k, exec, |c| {
                (0..self.n_samples()).fold(Complex64::new(0.0, 0.0), |acc, n| {
                    acc + self.atoms[(n, c)].conj() * z[n]
                })
            })
        } else {
            self.atoms.adjoint_mul_vec(z)?
        };
        out.extend_from_slice(z);
        Ok(out)
    }

    /// `sum_k x_k a_k` over the extended dictionary.
    pub fn synthesize(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.n_extended() {
            return Err(SpiceError::DimensionMismatch {
                expected: self.n_extended(),
                found: x.len(),
            });
        }
        let k = self.n_atoms();
        let mut y = self.atoms.mul_vec(&x[..k])?;
        for (yn, xn) in y.iter_mut().zip(&x[k..]) {
            *yn += xn;
        }
        Ok(y)
    }
}

/// Signal atom switched on in a simulation: 0-based atom position and
/// magnitude `|s_k|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveAtom {
    pub index: usize,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub active: Vec<ActiveAtom>,
    /// `phase_k` of each active atom, same order as `active`.
    pub phases: Vec<f64>,
    pub noise: Vec<Complex64>,
    pub noise_variances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub y: Vec<Complex64>,
    pub ground_truth: Option<GroundTruth>,
    pub seed: Option<u64>,
}

impl Measurement {
    pub fn from_samples(y: Vec<Complex64>) -> Self {
        Self {
            y,
            ground_truth: None,
            seed: None,
        }
    }

    pub fn norm_sq(&self) -> f64 {
        numerics::norm2_sq(&self.y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Draws `y = sum_k a_k |s_k| e^{j phase_k} + noise`.
///
/// Phases are `2 pi U(0,1)` in the order of `active`, then each sample's
/// noise is drawn as independent `N(0, var/2)` real and imaginary parts, so
/// `E|noise_n|^2 = var_n`. The same seed reproduces the same bits.
pub fn simulate_measurement(
    dict: &Dictionary,
    active: &[ActiveAtom],
    noise_variances: &[f64],
    seed: u64,
) -> Result<Measurement> {
    let n = dict.n_samples();
    if noise_variances.len() != n {
        return Err(SpiceError::DimensionMismatch {
            expected: n,
            found: noise_variances.len(),
        });
    }
    for (index, &value) in noise_variances.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(SpiceError::NonPositiveVariance { index, value });
        }
    }
    for atom in active {
        if atom.index >= dict.n_atoms() {
            return Err(SpiceError::IndexOutOfRange {
                index: atom.index,
                len: dict.n_atoms(),
            });
        }
        if !(atom.amplitude >= 0.0) || !atom.amplitude.is_finite() {
            return Err(SpiceError::NegativeAmplitude {
                index: atom.index,
                value: atom.amplitude,
            });
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(MEASUREMENT_STREAM);
    let phases: Vec<f64> = active
        .iter()
        .map(|_| 2.0 * PI * rng.random::<f64>())
        .collect();
    let noise: Vec<Complex64> = noise_variances
        .iter()
        .map(|&var| {
            let normal = Normal::new(0.0, (var / 2.0).sqrt()).expect("positive variance");
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            Complex64::new(re, im)
        })
        .collect();

    let mut y = noise.clone();
    for (atom, &phase) in active.iter().zip(&phases) {
        let s = Complex64::from_polar(atom.amplitude, phase);
        for (row, yn) in y.iter_mut().enumerate() {
            *yn += dict.atom_matrix()[(row, atom.index)] * s;
        }
    }

    Ok(Measurement {
        y,
        ground_truth: Some(GroundTruth {
            active: active.to_vec(),
            phases,
            noise,
            noise_variances: noise_variances.to_vec(),
        }),
        seed: Some(seed),
    })
}

/// `w_k = ||a_k||^2 / ||y||^2` over the extended dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    w: Vec<f64>,
    y_norm_sq: f64,
}

impl Weights {
    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn y_norm_sq(&self) -> f64 {
        self.y_norm_sq
    }

    /// `sum_k w_k p_k`, the normalized power mass.
    pub fn mass(&self, p: &[f64]) -> f64 {
        self.w.iter().zip(p).map(|(w, p)| w * p).sum()
    }
}

pub fn compute_weights(dict: &Dictionary, y: &Measurement) -> Result<Weights> {
    if y.len() != dict.n_samples() {
        return Err(SpiceError::DimensionMismatch {
            expected: dict.n_samples(),
            found: y.len(),
        });
    }
    let y_norm_sq = y.norm_sq();
    if !(y_norm_sq > 0.0) {
        return Err(SpiceError::ZeroMeasurement);
    }
    if !y_norm_sq.is_finite() {
        return Err(SpiceError::NonFiniteInput("measurement"));
    }
    let w = (0..dict.n_extended())
        .map(|k| dict.atom_norm_sq(k) / y_norm_sq)
        .collect();
    Ok(Weights { w, y_norm_sq })
}

/// The rescaled extended dictionary `a~_k = w_k^{-1/2} a_k`.
///
/// `phi` holds the `K` scaled signal atoms as columns (the regressor matrix
/// whose rows are `regressor_row_n^H`); the identity atoms become
/// `noise_scale[j] * e_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledAtoms {
    phi: ComplexMatrix,
    noise_scale: Vec<f64>,
}

pub fn scaled_atoms(dict: &Dictionary, w: &Weights) -> Result<ScaledAtoms> {
    if w.len() != dict.n_extended() {
        return Err(SpiceError::DimensionMismatch {
            expected: dict.n_extended(),
            found: w.len(),
        });
    }
    let ws = w.as_slice();
    if let Some(index) = ws.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(SpiceError::ZeroWeight { index });
    }
    let k = dict.n_atoms();
    let col_scale: Vec<f64> = ws[..k].iter().map(|w| 1.0 / w.sqrt()).collect();
    let a = dict.atom_matrix();
    let phi = ComplexMatrix::from_fn(a.rows(), k, |n, c| a[(n, c)] * col_scale[c]);
    let noise_scale = ws[k..].iter().map(|w| 1.0 / w.sqrt()).collect();
    Ok(ScaledAtoms { phi, noise_scale })
}

impl ScaledAtoms {
    /// First `K` columns of the scaled extended dictionary.
    pub fn phi(&self) -> &ComplexMatrix {
        &self.phi
    }

    pub fn noise_scale(&self) -> &[f64] {
        &self.noise_scale
    }

    pub fn n_samples(&self) -> usize {
        self.phi.rows()
    }

    pub fn n_atoms(&self) -> usize {
        self.phi.cols()
    }

    pub fn n_extended(&self) -> usize {
        self.n_atoms() + self.n_samples()
    }

    /// Row `n` of `Phi`.
    pub fn regressor_row(&self, n: usize) -> &[Complex64] {
        self.phi.row(n)
    }

    /// The full `N x (K + N)` matrix `[a~_1 .. a~_{K+N}]`.
    pub fn to_matrix(&self) -> ComplexMatrix {
        let (n, k) = (self.n_samples(), self.n_atoms());
        ComplexMatrix::from_fn(n, k + n, |r, c| {
            if c < k {
                self.phi[(r, c)]
            } else if c - k == r {
                Complex64::new(self.noise_scale[r], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    /// `sum_k c_k a~_k` for a full coefficient vector.
    pub fn synthesize(&self, c_full: &[Complex64]) -> Result<Vec<Complex64>> {
        if c_full.len() != self.n_extended() {
            return Err(SpiceError::DimensionMismatch {
                expected: self.n_extended(),
                found: c_full.len(),
            });
        }
        let k = self.n_atoms();
        let mut out = self.phi.mul_vec(&c_full[..k])?;
        for ((o, c), s) in out.iter_mut().zip(&c_full[k..]).zip(&self.noise_scale) {
            *o += c * *s;
        }
        Ok(out)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    index: usize,
    t: f64,
    re: f64,
    im: f64,
}

/// Writes `index,t,re,im` rows (1-based index).
pub fn write_measurement_csv(
    path: impl AsRef<Path>,
    time_samples: &[f64],
    y: &Measurement,
) -> Result<()> {
    if time_samples.len() != y.len() {
        return Err(SpiceError::DimensionMismatch {
            expected: y.len(),
            found: time_samples.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    for (i, (t, v)) in time_samples.iter().zip(&y.y).enumerate() {
        w.serialize(CsvRow {
            index: i + 1,
            t: *t,
            re: v.re,
            im: v.im,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a measurement written by [`write_measurement_csv`] (or produced
/// externally with the same header) and returns the time samples alongside.
pub fn read_measurement_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, Measurement)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows: Vec<CsvRow> = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    if rows.is_empty() {
        return Err(SpiceError::EmptyGrid);
    }
    rows.sort_by_key(|r| r.index);
    if rows
        .iter()
        .any(|r| !(r.t.is_finite() && r.re.is_finite() && r.im.is_finite()))
    {
        return Err(SpiceError::NonFiniteInput("measurement csv"));
    }
    let t = rows.iter().map(|r| r.t).collect();
    let y = rows.iter().map(|r| Complex64::new(r.re, r.im)).collect();
    Ok((t, Measurement::from_samples(y)))
}
