//! Synthetic objectives with exact gradients and known smoothness constants,
//! plus the stochastic-gradient oracles that pair them with a noise model.

use rand::Rng;

use crate::error::{invalid, mismatch, Result};
use crate::noise::{NoiseFamily, NoiseRng, NoiseSpec};
use crate::tensor::{check_psd, DenseMatrix, DenseVector};

#[derive(Debug, Clone, PartialEq)]
enum VectorObjective {
    /// ½ Σ lᵢ (xᵢ − x*ᵢ)²
    Quadratic { l: DenseVector, x_star: DenseVector },
    /// Σ (a/b²)(cosh(b xᵢ) − 1)
    Cosh { a: f64, b: f64 },
}

/// Vector objective with exact gradient and coordinate-wise smoothness
/// constants (l₀, l₁) valid on the box ‖x′ − x‖∞ ≤ 1/‖l₁‖∞.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorProblem {
    objective: VectorObjective,
    dim: usize,
    pub l0: DenseVector,
    pub l1: DenseVector,
    pub f_star: f64,
    pub x_star: Option<DenseVector>,
}

impl VectorProblem {
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check(&self, x: &DenseVector) -> Result<()> {
        if x.len() != self.dim {
            return Err(mismatch(self.dim, x.len()));
        }
        Ok(())
    }

    pub fn f(&self, x: &DenseVector) -> Result<f64> {
        self.check(x)?;
        Ok(match &self.objective {
            VectorObjective::Quadratic { l, x_star } => {
                0.5 * x
                    .as_slice()
                    .iter()
                    .zip(x_star.as_slice())
                    .zip(l.as_slice())
                    .map(|((xi, si), li)| li * (xi - si) * (xi - si))
                    .sum::<f64>()
            }
            VectorObjective::Cosh { a, b } => x
                .as_slice()
                .iter()
                .map(|xi| a / (b * b) * ((b * xi).cosh() - 1.0))
                .sum(),
        })
    }

    pub fn grad(&self, x: &DenseVector) -> Result<DenseVector> {
        self.check(x)?;
        Ok(match &self.objective {
            VectorObjective::Quadratic { l, x_star } => {
                DenseVector::from_fn(self.dim, |i| l.get(i) * (x.get(i) - x_star.get(i)))
            }
            VectorObjective::Cosh { a, b } => x.map(|xi| a / b * (b * xi).sinh()),
        })
    }

    /// Largest radius ‖x′ − x‖∞ on which the smoothness inequality is claimed.
    pub fn smoothness_radius(&self) -> f64 {
        let l1 = self.l1.linf();
        if l1 == 0.0 {
            f64::INFINITY
        } else {
            1.0 / l1
        }
    }
}

/// f(x) = ½ Σ l0ᵢ (xᵢ − x*ᵢ)²; smooth with (l₀, 0) and f* = 0.
pub fn make_separable_quadratic(l0: DenseVector, x_star: DenseVector) -> Result<VectorProblem> {
    if l0.len() != x_star.len() {
        return Err(mismatch(l0.len(), x_star.len()));
    }
    if l0.as_slice().iter().any(|&v| v < 0.0) {
        return Err(invalid("curvature l0 must be nonnegative"));
    }
    let d = l0.len();
    Ok(VectorProblem {
        objective: VectorObjective::Quadratic {
            l: l0.clone(),
            x_star: x_star.clone(),
        },
        dim: d,
        l0,
        l1: DenseVector::zeros(d),
        f_star: 0.0,
        x_star: Some(x_star),
    })
}

/// f(x) = Σ (l0/l1²)(cosh(l1 xᵢ) − 1), whose curvature f″ = l0·cosh(l1 x)
/// grows with |f′| = (l0/l1)|sinh(l1 x)|.
///
/// The stored constants are (2·l0, 2·l1). On |x′ − x| ≤ 1/(2 l1) the Taylor
/// remainder is at most ½h²·l0·cosh(l1|x| + ½) ≤ ½h²·l0·(cosh ½ + (cosh ½ + sinh ½) sinh(l1|x|)),
/// and cosh ½ ≈ 1.13, cosh ½ + sinh ½ ≈ 1.65 are both below 2. The tighter
/// pair (2·l0, l1) fails for large |x|: the remainder ratio tends to 2(e − 2) ≈ 1.44.
pub fn make_generalized_smooth(l0: f64, l1: f64, d: usize) -> Result<VectorProblem> {
    if !(l0 > 0.0 && l1 > 0.0) || !l0.is_finite() || !l1.is_finite() {
        return Err(invalid("cosh problem needs positive finite l0, l1"));
    }
    Ok(VectorProblem {
        objective: VectorObjective::Cosh { a: l0, b: l1 },
        dim: d,
        l0: DenseVector::filled(d, 2.0 * l0),
        l1: DenseVector::filled(d, 2.0 * l1),
        f_star: 0.0,
        x_star: Some(DenseVector::zeros(d)),
    })
}

/// Matrix objective with exact gradient and constants (‖L₀‖_*, ‖L₁‖op).
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixProblem {
    curvature: DenseMatrix,
    x_star: DenseMatrix,
    pub l0_nuclear: f64,
    pub l1_op: f64,
    pub f_star: f64,
}

impl MatrixProblem {
    pub fn shape(&self) -> (usize, usize) {
        self.x_star.shape()
    }

    pub fn x_star(&self) -> &DenseMatrix {
        &self.x_star
    }

    pub fn curvature(&self) -> &DenseMatrix {
        &self.curvature
    }

    fn check(&self, x: &DenseMatrix) -> Result<()> {
        if x.shape() != self.shape() {
            return Err(mismatch(format!("{:?}", self.shape()), format!("{:?}", x.shape())));
        }
        Ok(())
    }

    pub fn f(&self, x: &DenseMatrix) -> Result<f64> {
        self.check(x)?;
        let e = x.sub(&self.x_star)?;
        Ok(0.5 * e.inner(&self.curvature.matmul(&e)?)?)
    }

    pub fn grad(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check(x)?;
        self.curvature.matmul(&x.sub(&self.x_star)?)
    }
}

/// f(X) = ½ tr((X − X*)ᵀ L (X − X*)) with L symmetric PSD; constants
/// (‖L‖_*, 0) and f* = 0.
pub fn make_matrix_quadratic(l: DenseMatrix, x_star: DenseMatrix) -> Result<MatrixProblem> {
    if l.shape() != (x_star.rows(), x_star.rows()) {
        return Err(mismatch(
            format!("{0}x{0} curvature", x_star.rows()),
            format!("{}x{}", l.rows(), l.cols()),
        ));
    }
    check_psd(&l)?;
    let l = l.symmetrize()?;
    Ok(MatrixProblem {
        l0_nuclear: l.nuclear(),
        l1_op: 0.0,
        f_star: 0.0,
        curvature: l,
        x_star,
    })
}

/// Source of mini-batch stochastic gradients for a vector problem.
pub trait VectorOracle: Send + Sync {
    fn problem(&self) -> &VectorProblem;

    /// Mean of `batch` independent stochastic gradients at x; `grad` is the
    /// exact gradient at x.
    fn sample_mean(&self, x: &DenseVector, grad: &DenseVector, batch: usize, rng: &mut NoiseRng)
        -> Result<DenseVector>;
}

/// Source of mini-batch stochastic gradients for a matrix problem.
pub trait MatrixOracle: Send + Sync {
    fn problem(&self) -> &MatrixProblem;

    fn sample_mean(&self, x: &DenseMatrix, grad: &DenseMatrix, batch: usize, rng: &mut NoiseRng)
        -> Result<DenseMatrix>;
}

/// Exact gradient plus noise drawn from a [`NoiseSpec`].
#[derive(Debug, Clone)]
pub struct NoisyVectorOracle {
    pub problem: VectorProblem,
    pub noise: NoiseSpec,
}

impl NoisyVectorOracle {
    pub fn new(problem: VectorProblem, noise: NoiseSpec) -> Result<Self> {
        noise.validate()?;
        if noise.sigma0.len() != problem.dim() {
            return Err(mismatch(
                format!("noise scales of length {}", problem.dim()),
                noise.sigma0.len(),
            ));
        }
        Ok(Self { problem, noise })
    }
}

impl VectorOracle for NoisyVectorOracle {
    fn problem(&self) -> &VectorProblem {
        &self.problem
    }

    fn sample_mean(
        &self,
        _x: &DenseVector,
        grad: &DenseVector,
        batch: usize,
        rng: &mut NoiseRng,
    ) -> Result<DenseVector> {
        self.noise.batch_mean(grad, batch, rng)
    }
}

#[derive(Debug, Clone)]
pub struct NoisyMatrixOracle {
    pub problem: MatrixProblem,
    pub noise: NoiseSpec,
}

impl NoisyMatrixOracle {
    pub fn new(problem: MatrixProblem, noise: NoiseSpec) -> Result<Self> {
        noise.validate()?;
        if noise.matrix_mode.is_none() {
            return Err(invalid("matrix problems need noise.matrix_mode"));
        }
        Ok(Self { problem, noise })
    }
}

impl MatrixOracle for NoisyMatrixOracle {
    fn problem(&self) -> &MatrixProblem {
        &self.problem
    }

    fn sample_mean(
        &self,
        _x: &DenseMatrix,
        grad: &DenseMatrix,
        batch: usize,
        rng: &mut NoiseRng,
    ) -> Result<DenseMatrix> {
        self.noise.batch_mean_matrix(grad, batch, rng)
    }
}

/// Separable regression hᵢ(xᵢ) = ½E[(aᵢxᵢ − bᵢ)²] with aᵢ ~ Bernoulli(½),
/// bᵢ = aᵢx*ᵢ + ξᵢ and E|ξᵢ|^p = σ^p.
///
/// With a ∈ {0, 1}: E[a²] = E[a] = ½ and E[ab] = ½x*, so ∇ᵢf = ½(xᵢ − x*ᵢ)
/// and hᵢ = ¼(xᵢ − x*ᵢ)² + ¼E[ξ²]. The constant ¼E[ξ²] is dropped (it is
/// infinite for heavy-tailed ξ), giving f* = 0 and l₀ = ½.
/// The stochastic gradient is gᵢ = aᵢ(aᵢxᵢ − bᵢ) = aᵢ(xᵢ − x*ᵢ) − aᵢξᵢ.
#[derive(Debug, Clone)]
pub struct BernoulliRegression {
    problem: VectorProblem,
    pub sigma: f64,
    pub p: f64,
    pub family: NoiseFamily,
    /// When false the design randomness is removed from the gradient term:
    /// gᵢ = ½(xᵢ − x*ᵢ) − aᵢξᵢ, so the noise no longer scales with |∇f|.
    pub design_noise: bool,
    xi_scale: f64,
}

/// Builds the regression problem and its stochastic-gradient sampler. ξ is
/// drawn from `family` rescaled to E|ξ|^p = σ^p.
pub fn make_bernoulli_regression(
    x_star: DenseVector,
    sigma: f64,
    p: f64,
    family: NoiseFamily,
) -> Result<BernoulliRegression> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(invalid(format!("p must lie in (1, 2], got {p}")));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid("sigma must be finite and nonnegative"));
    }
    let xi_scale = if sigma == 0.0 {
        0.0
    } else {
        sigma / family.abs_moment(p)?.powf(1.0 / p)
    };
    let d = x_star.len();
    let mut problem = make_separable_quadratic(DenseVector::filled(d, 0.5), x_star)?;
    problem.l0 = DenseVector::filled(d, 0.5);
    Ok(BernoulliRegression {
        problem,
        sigma,
        p,
        family,
        design_noise: true,
        xi_scale,
    })
}

impl BernoulliRegression {
    pub fn without_design_noise(mut self) -> Self {
        self.design_noise = false;
        self
    }

    pub fn problem(&self) -> &VectorProblem {
        &self.problem
    }

    /// σ₀ᵢ = σ·2^{1−2/p} from the published constants.
    pub fn stated_sigma0(&self) -> f64 {
        self.sigma * 2f64.powf(1.0 - 2.0 / self.p)
    }

    /// σ₁ᵢ = 2^{−1/p} + 2^{1−2/p} from the published constants.
    pub fn stated_sigma1(&self) -> f64 {
        2f64.powf(-1.0 / self.p) + 2f64.powf(1.0 - 2.0 / self.p)
    }

    /// One stochastic gradient.
    pub fn sample<R: Rng + ?Sized>(&self, x: &DenseVector, rng: &mut R) -> Result<DenseVector> {
        self.problem.check(x)?;
        let x_star = self.problem.x_star.as_ref().expect("regression has a minimizer");
        let mut out = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let a = if rng.random::<bool>() { 1.0 } else { 0.0 };
            let xi = if self.xi_scale == 0.0 {
                0.0
            } else {
                self.xi_scale * self.family.sample_raw(rng)
            };
            let e = x.get(i) - x_star.get(i);
            let design = if self.design_noise { a * e } else { 0.5 * e };
            out.push(design - a * xi);
        }
        Ok(DenseVector::from_raw(out))
    }
}

impl VectorOracle for BernoulliRegression {
    fn problem(&self) -> &VectorProblem {
        &self.problem
    }

    fn sample_mean(
        &self,
        x: &DenseVector,
        _grad: &DenseVector,
        batch: usize,
        rng: &mut NoiseRng,
    ) -> Result<DenseVector> {
        if batch == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        let mut acc = vec![0.0; x.len()];
        for _ in 0..batch {
            for (a, g) in acc.iter_mut().zip(self.sample(x, rng)?.as_slice()) {
                *a += g;
            }
        }
        let b = batch as f64;
        Ok(DenseVector::from_raw(acc.into_iter().map(|a| a / b).collect()))
    }
}
