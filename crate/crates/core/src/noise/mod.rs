//! Heavy-tailed noise generation, the mini-batch gradient oracle, and tail-index
//! estimation.

mod family;
mod tail;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::tensor::{DenseMatrix, DenseVector};

pub use family::{sample_alpha_stable, NoiseFamily};
pub use tail::{estimate_tail_index, estimate_tail_index_auto, MIN_TAIL_SAMPLES};

/// Generator used throughout. ChaCha is counter based and supports
/// independent streams under one seed.
pub type NoiseRng = ChaCha8Rng;

/// Identifies a reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> NoiseRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Parameters of the matrix noise generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixNoiseMode {
    pub v0_scale: f64,
    pub v1_op: f64,
}

impl MatrixNoiseMode {
    /// D = (2^{p−2}·n·m^{1+p/2})^{1/p} for m×n noise. With
    /// N = (v0 + v1·‖∇f‖_*/D)·Ξ and E|Ξᵢⱼ|^p = 1/2, the weighted moment
    /// condition holds with |V₀| = (v0·D/m)·I and ‖V₁‖op = v1.
    pub fn dim_norm(p: f64, m: usize, n: usize) -> f64 {
        (2f64.powf(p - 2.0) * n as f64 * (m as f64).powf(1.0 + p / 2.0)).powf(1.0 / p)
    }

    /// ‖V₀‖_* guaranteed by the construction.
    pub fn v0_nuclear(&self, p: f64, m: usize, n: usize) -> f64 {
        self.v0_scale * Self::dim_norm(p, m, n)
    }

    /// The m×m matrix |V₀| = (‖V₀‖_*/m)·I guaranteed by the construction.
    pub fn v0_abs(&self, p: f64, m: usize, n: usize) -> DenseMatrix {
        DenseMatrix::identity(m).scale(self.v0_nuclear(p, m, n) / m as f64)
    }
}

/// Noise model: coordinate noise nᵢ = (σ₀ᵢ + σ₁ᵢ|∇ᵢf|)·ξ with ξ drawn from
/// `family` and rescaled so E|ξ|^p = 1/2. Then
/// E|nᵢ|^p ≤ 2^{p−1}(σ₀ᵢ^p + σ₁ᵢ^p|∇ᵢf|^p)/2 ≤ σ₀ᵢ^p + σ₁ᵢ^p|∇ᵢf|^p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub p: f64,
    pub family: NoiseFamily,
    #[serde(default = "empty_vec")]
    pub sigma0: DenseVector,
    #[serde(default = "empty_vec")]
    pub sigma1: DenseVector,
    #[serde(default)]
    pub matrix_mode: Option<MatrixNoiseMode>,
}

fn empty_vec() -> DenseVector {
    DenseVector::zeros(0)
}

impl NoiseSpec {
    /// Vector noise with uniform per-coordinate scales.
    pub fn uniform(p: f64, family: NoiseFamily, d: usize, sigma0: f64, sigma1: f64) -> Result<Self> {
        let spec = Self {
            p,
            family,
            sigma0: DenseVector::filled(d, sigma0),
            sigma1: DenseVector::filled(d, sigma1),
            matrix_mode: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Matrix-only noise.
    pub fn matrix(p: f64, family: NoiseFamily, v0_scale: f64, v1_op: f64) -> Result<Self> {
        let spec = Self {
            p,
            family,
            sigma0: empty_vec(),
            sigma1: empty_vec(),
            matrix_mode: Some(MatrixNoiseMode { v0_scale, v1_op }),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p <= 2.0) {
            return Err(invalid(format!("p must lie in (1, 2], got {}", self.p)));
        }
        self.family.validate()?;
        if !self.family.has_moment(self.p) {
            return Err(invalid(format!(
                "{:?} has no finite moment of order p = {}",
                self.family, self.p
            )));
        }
        if self.sigma0.len() != self.sigma1.len() {
            return Err(mismatch(self.sigma0.len(), self.sigma1.len()));
        }
        if self
            .sigma0
            .as_slice()
            .iter()
            .chain(self.sigma1.as_slice())
            .any(|&s| s < 0.0)
        {
            return Err(invalid("noise scales must be nonnegative"));
        }
        if let Some(mm) = self.matrix_mode {
            if !(mm.v0_scale >= 0.0 && mm.v1_op >= 0.0) || !mm.v0_scale.is_finite() || !mm.v1_op.is_finite() {
                return Err(invalid("matrix noise scales must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    fn vector_is_silent(&self) -> bool {
        self.sigma0.is_zero() && self.sigma1.is_zero()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if self.sigma0.len() != d {
            return Err(mismatch(format!("noise scales of length {d}"), self.sigma0.len()));
        }
        Ok(())
    }

    fn draw_vector<R: Rng + ?Sized>(&self, grad: &DenseVector, unit: f64, rng: &mut R) -> Vec<f64> {
        let s0 = self.sigma0.as_slice();
        let s1 = self.sigma1.as_slice();
        grad.as_slice()
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let xi = unit * self.family.sample_raw(rng);
                g + (s0[i] + s1[i] * g.abs()) * xi
            })
            .collect()
    }

    /// B independent stochastic gradients ∇f + nᵇ.
    pub fn noisy_gradient_batch<R: Rng + ?Sized>(
        &self,
        grad: &DenseVector,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<DenseVector>> {
        self.check_batch(batch)?;
        self.check_dim(grad.len())?;
        if self.vector_is_silent() {
            return Ok(vec![grad.clone(); batch]);
        }
        let unit = self.family.unit_scale(self.p)?;
        Ok((0..batch)
            .map(|_| DenseVector::from_raw(self.draw_vector(grad, unit, rng)))
            .collect())
    }

    /// Mean of [`Self::noisy_gradient_batch`] without materializing the
    /// batch; consumes the same draws in the same order.
    pub fn batch_mean<R: Rng + ?Sized>(&self, grad: &DenseVector, batch: usize, rng: &mut R) -> Result<DenseVector> {
        self.check_batch(batch)?;
        self.check_dim(grad.len())?;
        if self.vector_is_silent() {
            return Ok(grad.clone());
        }
        let unit = self.family.unit_scale(self.p)?;
        let mut acc = vec![0.0; grad.len()];
        for _ in 0..batch {
            for (a, g) in acc.iter_mut().zip(self.draw_vector(grad, unit, rng)) {
                *a += g;
            }
        }
        let b = batch as f64;
        Ok(DenseVector::from_raw(acc.into_iter().map(|a| a / b).collect()))
    }

    fn matrix_mode(&self) -> Result<MatrixNoiseMode> {
        self.matrix_mode
            .ok_or_else(|| invalid("matrix noise requested but matrix_mode is not set"))
    }

    fn draw_matrix<R: Rng + ?Sized>(&self, grad: &DenseMatrix, coeff: f64, unit: f64, rng: &mut R) -> DenseMatrix {
        let data = grad
            .as_slice()
            .iter()
            .map(|&g| g + coeff * unit * self.family.sample_raw(rng))
            .collect();
        DenseMatrix::from_raw(grad.rows(), grad.cols(), data)
    }

    fn matrix_coeff(&self, grad: &DenseMatrix) -> Result<f64> {
        let mm = self.matrix_mode()?;
        let (m, n) = grad.shape();
        let d = MatrixNoiseMode::dim_norm(self.p, m, n);
        let grad_term = if mm.v1_op == 0.0 {
            0.0
        } else {
            mm.v1_op * grad.nuclear() / d
        };
        Ok(mm.v0_scale + grad_term)
    }

    /// B independent stochastic matrix gradients ∇f + Nᵇ with
    /// Nᵇ = (v0 + v1·‖∇f‖_*/D)·Ξ.
    pub fn noisy_gradient_batch_matrix<R: Rng + ?Sized>(
        &self,
        grad: &DenseMatrix,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<DenseMatrix>> {
        self.check_batch(batch)?;
        let coeff = self.matrix_coeff(grad)?;
        if coeff == 0.0 {
            return Ok(vec![grad.clone(); batch]);
        }
        let unit = self.family.unit_scale(self.p)?;
        Ok((0..batch).map(|_| self.draw_matrix(grad, coeff, unit, rng)).collect())
    }

    /// Mean of [`Self::noisy_gradient_batch_matrix`].
    pub fn batch_mean_matrix<R: Rng + ?Sized>(
        &self,
        grad: &DenseMatrix,
        batch: usize,
        rng: &mut R,
    ) -> Result<DenseMatrix> {
        self.check_batch(batch)?;
        let coeff = self.matrix_coeff(grad)?;
        if coeff == 0.0 {
            return Ok(grad.clone());
        }
        let unit = self.family.unit_scale(self.p)?;
        let (m, n) = grad.shape();
        let mut acc = vec![0.0; m * n];
        for _ in 0..batch {
            let g = self.draw_matrix(grad, coeff, unit, rng);
            for (a, v) in acc.iter_mut().zip(g.as_slice()) {
                *a += v;
            }
        }
        let b = batch as f64;
        Ok(DenseMatrix::from_raw(m, n, acc.into_iter().map(|a| a / b).collect()))
    }

    fn check_batch(&self, batch: usize) -> Result<()> {
        if batch == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}
