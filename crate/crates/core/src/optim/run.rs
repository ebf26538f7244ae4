use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{matrix_step, vector_step, HyperParams, MatrixOptState, OptimizerId, VectorOptState};
use crate::error::{invalid, Error, Result};
use crate::noise::RngStream;
use crate::problems::{MatrixOracle, VectorOracle};
use crate::tensor::{DenseMatrix, DenseVector};

pub const CSV_HEADER: &str = "t,loss,grad_l1,grad_l2,grad_nuclear,grad_fro,eps_norm,step_norm";

/// Per-step measurements at iterate x_t (before the update).
///
/// `eps_norm` is the native norm of the momentum error m_t − ∇f(x_t)
/// (for Muon-style buffers the damped (1−β)B_t is compared),
/// `noise_norm` that of ḡ_t − ∇f(x_t) and `curvature_norm` that of
/// ∇f(x_{t−1}) − ∇f(x_t). `step_norm` is ‖x_{t+1} − x_t‖ in the update
/// geometry (ℓ∞ for sign methods, operator norm for Muon/Muonlight,
/// ℓ₂/Frobenius for the normalized methods).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: usize,
    pub loss: f64,
    pub grad_l1: f64,
    pub grad_l2: f64,
    pub grad_nuclear: f64,
    pub grad_fro: f64,
    pub eps_norm: f64,
    pub noise_norm: f64,
    pub curvature_norm: f64,
    pub step_norm: f64,
}

/// Outcome of the weight-decay stability check for Lion (ℓ∞) and
/// Muonlight (operator norm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// a = max(λ‖x₁‖, 1/3); the bounds are (a+1)/(2λ) and (a+3)η/2.
    pub a: f64,
    pub norm_bound: f64,
    pub step_bound: f64,
    pub max_norm: f64,
    pub max_step: f64,
    pub violations: usize,
    pub first_violation: Option<usize>,
}

impl StabilityReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub optimizer: OptimizerId,
    pub steps: usize,
    pub native_norm: String,
    /// Average of the native gradient norm over x_1..x_T.
    pub mean_grad: Option<f64>,
    /// Native gradient norm at the returned iterate x_{T+1}.
    pub last_grad: Option<f64>,
    /// Minimum native gradient norm over x_1..x_T.
    pub min_grad: Option<f64>,
    pub final_loss: f64,
    /// Smallest φ₂ (vectors) or ψ₂ (matrices) of a nonzero gradient seen.
    pub min_density: Option<f64>,
    pub skipped_steps: usize,
    pub stability: Option<StabilityReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub summary: RunSummary,
    /// Empty unless the run was recorded.
    pub rows: Vec<StepDiagnostics>,
}

impl RunRecord {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.t, r.loss, r.grad_l1, r.grad_l2, r.grad_nuclear, r.grad_fro, r.eps_norm, r.step_norm
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// (1 − 2^{−1/T})/η, the largest weight decay for which the stability
/// bounds hold over T steps.
pub fn lambda_max(eta: f64, t_steps: usize) -> f64 {
    -(-std::f64::consts::LN_2 / t_steps as f64).exp_m1() / eta
}

/// Relative slack on the stability bounds. A run pushed outward on every
/// step reaches the norm bound exactly, up to rounding.
pub const STABILITY_RTOL: f64 = 1e-12;

struct StabilityTracker {
    report: StabilityReport,
}

impl StabilityTracker {
    fn new(opt: OptimizerId, hp: &HyperParams, x1_norm: f64, t_steps: usize) -> Option<Self> {
        if !matches!(opt, OptimizerId::Lion | OptimizerId::Muonlight) || t_steps == 0 {
            return None;
        }
        if !(hp.lambda > 0.0) || hp.lambda > lambda_max(hp.eta, t_steps) {
            return None;
        }
        let a = (hp.lambda * x1_norm).max(1.0 / 3.0);
        if a >= 1.0 {
            return None;
        }
        Some(Self {
            report: StabilityReport {
                a,
                norm_bound: (a + 1.0) / (2.0 * hp.lambda),
                step_bound: (a + 3.0) * hp.eta / 2.0,
                max_norm: x1_norm,
                max_step: 0.0,
                violations: 0,
                first_violation: None,
            },
        })
    }

    /// `norm` is ‖x_{t+1}‖ and `step` is ‖x_{t+1} − x_t‖.
    fn observe(&mut self, t: usize, norm: f64, step: f64) {
        let r = &mut self.report;
        r.max_norm = r.max_norm.max(norm);
        r.max_step = r.max_step.max(step);
        if norm > r.norm_bound * (1.0 + STABILITY_RTOL) || step > r.step_bound * (1.0 + STABILITY_RTOL) {
            r.violations += 1;
            r.first_violation.get_or_insert(t);
        }
    }
}

struct Accum {
    sum: f64,
    min: f64,
    min_density: Option<f64>,
    skipped: usize,
}

impl Accum {
    fn new() -> Self {
        Self {
            sum: 0.0,
            min: f64::INFINITY,
            min_density: None,
            skipped: 0,
        }
    }

    fn grad(&mut self, native: f64, density: Option<f64>) {
        self.sum += native;
        self.min = self.min.min(native);
        if let Some(d) = density {
            self.min_density = Some(self.min_density.map_or(d, |m| m.min(d)));
        }
    }

    fn finish(
        self,
        opt: OptimizerId,
        steps: usize,
        last: f64,
        final_loss: f64,
        stability: Option<StabilityTracker>,
    ) -> RunSummary {
        let defined = steps > 0;
        RunSummary {
            optimizer: opt,
            steps,
            native_norm: opt.native_norm().to_string(),
            mean_grad: defined.then(|| self.sum / steps as f64),
            last_grad: defined.then_some(last),
            min_grad: defined.then_some(self.min),
            final_loss,
            min_density: self.min_density,
            skipped_steps: self.skipped,
            stability: stability.map(|s| s.report),
        }
    }
}

fn vector_native(opt: OptimizerId, v: &DenseVector) -> f64 {
    match opt {
        OptimizerId::Nsgd => v.l2(),
        _ => v.l1(),
    }
}

fn vector_step_norm(opt: OptimizerId, v: &DenseVector) -> f64 {
    match opt {
        OptimizerId::Nsgd => v.l2(),
        _ => v.linf(),
    }
}

fn vector_density(g: &DenseVector) -> Option<f64> {
    let l2 = g.l2();
    (l2 > 0.0).then(|| g.l1() / l2)
}

/// Runs `t_steps` iterations of a vector optimizer from `x1`, drawing the
/// stochastic gradients from `rng`. With `record` the per-step diagnostics
/// are kept in the returned record.
pub fn run_vector(
    opt: OptimizerId,
    oracle: &dyn VectorOracle,
    x1: &DenseVector,
    hp: &HyperParams,
    t_steps: usize,
    rng: RngStream,
    record: bool,
) -> Result<RunRecord> {
    if opt.is_matrix() {
        return Err(invalid(format!("{} needs a matrix problem", opt.name())));
    }
    hp.validate()?;
    let problem = oracle.problem();
    if x1.len() != problem.dim() {
        return Err(crate::error::mismatch(problem.dim(), x1.len()));
    }
    let mut rng = rng.rng();
    let mut state = VectorOptState::new(x1.clone());
    let mut tracker = StabilityTracker::new(opt, hp, x1.linf(), t_steps);
    let mut acc = Accum::new();
    let mut rows = Vec::with_capacity(if record { t_steps } else { 0 });
    let mut prev_grad: Option<DenseVector> = None;

    for t in 1..=t_steps {
        let grad = problem.grad(&state.x)?;
        acc.grad(vector_native(opt, &grad), vector_density(&grad));
        let g = oracle.sample_mean(&state.x, &grad, hp.batch, &mut rng)?;
        let before = (record || tracker.is_some()).then(|| state.x.clone());
        let out = vector_step(opt, &mut state, &g, hp)?;
        if out.skipped {
            acc.skipped += 1;
        }
        if !state.x.is_finite() {
            return Err(Error::NonFinite { step: t });
        }
        let step = before.as_ref().map(|b| state.x.sub(b)).transpose()?;
        if let (Some(tr), Some(step)) = (tracker.as_mut(), step.as_ref()) {
            tr.observe(t, state.x.linf(), step.linf());
        }
        if record {
            let m = state.m.as_ref().expect("momentum set after a step");
            let l2 = grad.l2();
            let native = |v: &DenseVector| vector_native(opt, v);
            let loss = problem.f(before.as_ref().expect("recorded"))?;
            rows.push(StepDiagnostics {
                t,
                loss,
                grad_l1: grad.l1(),
                grad_l2: l2,
                grad_nuclear: l2,
                grad_fro: l2,
                eps_norm: native(&m.sub(&grad)?),
                noise_norm: native(&g.sub(&grad)?),
                curvature_norm: prev_grad
                    .as_ref()
                    .map_or(Ok(0.0), |p| p.sub(&grad).map(|d| native(&d)))?,
                step_norm: vector_step_norm(opt, step.as_ref().expect("recorded")),
            });
            prev_grad = Some(grad);
        }
    }

    let last = vector_native(opt, &problem.grad(&state.x)?);
    let final_loss = problem.f(&state.x)?;
    Ok(RunRecord {
        summary: acc.finish(opt, t_steps, last, final_loss, tracker),
        rows,
    })
}

fn matrix_native(opt: OptimizerId, nuclear: f64, fro: f64) -> f64 {
    match opt {
        OptimizerId::Mnsgd => fro,
        _ => nuclear,
    }
}

fn matrix_step_norm(opt: OptimizerId, d: &DenseMatrix) -> f64 {
    match opt {
        OptimizerId::Mnsgd => d.fro(),
        _ => d.op_norm(),
    }
}

/// Matrix counterpart of [`run_vector`] for Muon, Muonlight and MNSGD.
pub fn run_matrix(
    opt: OptimizerId,
    oracle: &dyn MatrixOracle,
    x1: &DenseMatrix,
    hp: &HyperParams,
    t_steps: usize,
    rng: RngStream,
    record: bool,
) -> Result<RunRecord> {
    if !opt.is_matrix() {
        return Err(invalid(format!("{} needs a vector problem", opt.name())));
    }
    hp.validate()?;
    let problem = oracle.problem();
    if x1.shape() != problem.shape() {
        return Err(crate::error::mismatch(
            format!("{:?}", problem.shape()),
            format!("{:?}", x1.shape()),
        ));
    }
    let mut rng = rng.rng();
    let mut state = MatrixOptState::new(x1.clone());
    let mut tracker = StabilityTracker::new(opt, hp, x1.op_norm(), t_steps);
    let mut acc = Accum::new();
    let mut rows = Vec::with_capacity(if record { t_steps } else { 0 });
    let mut prev_grad: Option<DenseMatrix> = None;
    let damping = match opt {
        OptimizerId::Muon => 1.0 - hp.beta,
        OptimizerId::Muonlight => 1.0 - hp.beta2,
        _ => 1.0,
    };
    let native = |m: &DenseMatrix| match opt {
        OptimizerId::Mnsgd => m.fro(),
        _ => m.nuclear(),
    };

    for t in 1..=t_steps {
        let grad = problem.grad(&state.x)?;
        let nuc = grad.nuclear();
        let fro = grad.fro();
        acc.grad(matrix_native(opt, nuc, fro), (fro > 0.0).then(|| nuc / fro));
        let g = oracle.sample_mean(&state.x, &grad, hp.batch, &mut rng)?;
        let before = (record || tracker.is_some()).then(|| state.x.clone());
        let out = matrix_step(opt, &mut state, &g, hp)?;
        if out.skipped {
            acc.skipped += 1;
        }
        if !state.x.is_finite() {
            return Err(Error::NonFinite { step: t });
        }
        let step = before.as_ref().map(|b| state.x.sub(b)).transpose()?;
        if let (Some(tr), Some(step)) = (tracker.as_mut(), step.as_ref()) {
            tr.observe(t, state.x.op_norm(), step.op_norm());
        }
        if record {
            let x_t = before.as_ref().expect("recorded");
            let step = step.as_ref().expect("recorded");
            rows.push(StepDiagnostics {
                t,
                loss: problem.f(x_t)?,
                grad_l1: grad.as_slice().iter().map(|v| v.abs()).sum(),
                grad_l2: fro,
                grad_nuclear: nuc,
                grad_fro: fro,
                eps_norm: native(&state.b.scale(damping).sub(&grad)?),
                noise_norm: native(&g.sub(&grad)?),
                curvature_norm: prev_grad
                    .as_ref()
                    .map_or(Ok(0.0), |p| p.sub(&grad).map(|d| native(&d)))?,
                step_norm: matrix_step_norm(opt, step),
            });
            prev_grad = Some(grad);
        }
    }

    let g_last = problem.grad(&state.x)?;
    let last = matrix_native(opt, g_last.nuclear(), g_last.fro());
    let final_loss = problem.f(&state.x)?;
    Ok(RunRecord {
        summary: acc.finish(opt, t_steps, last, final_loss, tracker),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{NoiseFamily, NoiseSpec};
    use crate::problems::{
        make_generalized_smooth, make_matrix_quadratic, make_separable_quadratic, NoisyMatrixOracle, NoisyVectorOracle,
    };

    fn quad_oracle(d: usize, sigma0: f64) -> NoisyVectorOracle {
        let p = make_separable_quadratic(DenseVector::filled(d, 1.0), DenseVector::zeros(d)).unwrap();
        let noise = NoiseSpec::uniform(2.0, NoiseFamily::Gaussian, d, sigma0, 0.0).unwrap();
        NoisyVectorOracle::new(p, noise).unwrap()
    }

    fn matrix_oracle(n: usize, v0: f64) -> NoisyMatrixOracle {
        let p = make_matrix_quadratic(DenseMatrix::identity(n), DenseMatrix::zeros(n, n)).unwrap();
        let noise = NoiseSpec::matrix(2.0, NoiseFamily::Gaussian, v0, 0.0).unwrap();
        NoisyMatrixOracle::new(p, noise).unwrap()
    }

    #[test]
    fn lambda_max_matches_direct_formula() {
        for t in [1usize, 10, 1000] {
            let direct = (1.0 - 2f64.powf(-1.0 / t as f64)) / 0.01;
            assert!((lambda_max(0.01, t) - direct).abs() < 1e-12 * direct);
        }
    }

    #[test]
    fn zero_steps_leave_summary_undefined() {
        let o = quad_oracle(3, 1.0);
        let r = run_vector(
            OptimizerId::Signsgd,
            &o,
            &DenseVector::filled(3, 1.0),
            &HyperParams::new(0.1),
            0,
            RngStream::new(0, 0),
            true,
        )
        .unwrap();
        assert!(r.summary.mean_grad.is_none());
        assert!(r.rows.is_empty());
        assert_eq!(r.to_csv(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn runs_are_reproducible() {
        let o = quad_oracle(4, 1.0);
        let hp = HyperParams {
            beta: 0.9,
            ..HyperParams::new(0.01)
        };
        let x1 = DenseVector::filled(4, 1.0);
        let a = run_vector(OptimizerId::Signsgd, &o, &x1, &hp, 200, RngStream::new(3, 200), true).unwrap();
        let b = run_vector(OptimizerId::Signsgd, &o, &x1, &hp, 200, RngStream::new(3, 200), true).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let c = run_vector(OptimizerId::Signsgd, &o, &x1, &hp, 200, RngStream::new(4, 200), true).unwrap();
        assert_ne!(a.to_csv(), c.to_csv());
    }

    #[test]
    fn recording_does_not_change_trajectory() {
        let o = matrix_oracle(3, 0.5);
        let hp = HyperParams {
            beta: 0.9,
            ..HyperParams::new(0.01)
        };
        let x1 = DenseMatrix::identity(3);
        let a = run_matrix(OptimizerId::Muon, &o, &x1, &hp, 100, RngStream::new(1, 1), true).unwrap();
        let b = run_matrix(OptimizerId::Muon, &o, &x1, &hp, 100, RngStream::new(1, 1), false).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.rows.len(), 100);
        assert!(b.rows.is_empty());
    }

    #[test]
    fn noiseless_signsgd_descends_to_eta_ball() {
        let d = 5;
        let o = quad_oracle(d, 0.0);
        let eta = 0.01;
        let x1 = DenseVector::filled(d, 1.0);
        let r = run_vector(
            OptimizerId::Signsgd,
            &o,
            &x1,
            &HyperParams::new(eta),
            300,
            RngStream::new(0, 0),
            true,
        )
        .unwrap();
        // With l0 = 1 each coordinate reaches the band |x_i| ≤ η after 100 steps
        // and oscillates inside it.
        assert!(r.summary.last_grad.unwrap() <= d as f64 * eta + 1e-12);
        for w in r.rows.windows(2).take(99) {
            assert!(w[1].loss < w[0].loss);
        }
    }

    #[test]
    fn noiseless_descent_lemma_bound() {
        // f(x_{t+1}) ≤ f(x_t) − η‖∇f‖₁ + η²‖l₀‖₁/2 for exact sign descent.
        let d = 4;
        let o = quad_oracle(d, 0.0);
        let eta = 0.02;
        let r = run_vector(
            OptimizerId::Signsgd,
            &o,
            &DenseVector::filled(d, 0.7),
            &HyperParams::new(eta),
            80,
            RngStream::new(0, 0),
            true,
        )
        .unwrap();
        for w in r.rows.windows(2) {
            let bound = w[0].loss - eta * w[0].grad_l1 + eta * eta * d as f64 / 2.0;
            assert!(w[1].loss <= bound + 1e-12);
        }
    }

    #[test]
    fn eps_zero_without_noise_at_first_step() {
        let o = quad_oracle(3, 0.0);
        let r = run_vector(
            OptimizerId::Lion,
            &o,
            &DenseVector::filled(3, 2.0),
            &HyperParams {
                beta1: 0.9,
                beta2: 0.99,
                ..HyperParams::new(0.01)
            },
            5,
            RngStream::new(0, 0),
            true,
        )
        .unwrap();
        assert_eq!(r.rows[0].eps_norm, 0.0);
        assert_eq!(r.rows[0].noise_norm, 0.0);
    }

    #[test]
    fn lion_stability_holds_over_seeds() {
        let d = 6;
        let o = quad_oracle(d, 2.0);
        let t = 500;
        let eta = 0.05;
        let lambda = lambda_max(eta, t);
        let hp = HyperParams {
            beta1: 0.9,
            beta2: 0.99,
            lambda,
            ..HyperParams::new(eta)
        };
        let x1 = DenseVector::filled(d, 1.0 / (3.0 * lambda));
        for seed in 0..16 {
            let r = run_vector(
                OptimizerId::Lion,
                &o,
                &x1,
                &hp,
                t,
                RngStream::new(seed, t as u64),
                false,
            )
            .unwrap();
            let s = r.summary.stability.expect("applicable");
            assert!(s.holds(), "{s:?}");
            assert!((s.norm_bound - 2.0 / (3.0 * lambda)).abs() < 1e-9 * s.norm_bound);
            assert!((s.step_bound - 5.0 * eta / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn muonlight_stability_holds_over_seeds() {
        let o = matrix_oracle(3, 1.0);
        let t = 300;
        let eta = 0.05;
        let lambda = 0.5 * lambda_max(eta, t);
        let hp = HyperParams {
            beta1: 0.9,
            beta2: 0.95,
            lambda,
            ..HyperParams::new(eta)
        };
        let x1 = DenseMatrix::identity(3).scale(0.3 / lambda);
        for seed in 0..16 {
            let r = run_matrix(OptimizerId::Muonlight, &o, &x1, &hp, t, RngStream::new(seed, 1), false).unwrap();
            let s = r.summary.stability.expect("applicable");
            assert!(s.holds(), "{s:?}");
        }
    }

    #[test]
    fn stability_not_applicable_outside_conditions() {
        let o = quad_oracle(2, 1.0);
        let eta = 0.1;
        let x1 = DenseVector::filled(2, 1.0);
        let too_big = HyperParams {
            lambda: 2.0 * lambda_max(eta, 50),
            ..HyperParams::new(eta)
        };
        let r = run_vector(OptimizerId::Lion, &o, &x1, &too_big, 50, RngStream::new(0, 0), false).unwrap();
        assert!(r.summary.stability.is_none());
        let r = run_vector(
            OptimizerId::Signsgd,
            &o,
            &x1,
            &HyperParams::new(eta),
            50,
            RngStream::new(0, 0),
            false,
        )
        .unwrap();
        assert!(r.summary.stability.is_none());
    }

    #[test]
    fn non_finite_iterate_aborts() {
        let p = make_generalized_smooth(1.0, 1.0, 2).unwrap();
        let noise = NoiseSpec::uniform(2.0, NoiseFamily::Gaussian, 2, 0.0, 0.0).unwrap();
        let o = NoisyVectorOracle::new(p, noise).unwrap();
        // cosh gradient overflows immediately at this scale.
        let x1 = DenseVector::filled(2, 800.0);
        let err = run_vector(
            OptimizerId::Nsgd,
            &o,
            &x1,
            &HyperParams::new(1e300),
            3,
            RngStream::new(0, 0),
            false,
        );
        assert!(matches!(err, Err(Error::NonFinite { step: 1 })), "{err:?}");
    }

    #[test]
    fn optimizer_kind_is_checked() {
        let o = quad_oracle(2, 1.0);
        assert!(run_vector(
            OptimizerId::Muon,
            &o,
            &DenseVector::zeros(2),
            &HyperParams::new(0.1),
            1,
            RngStream::new(0, 0),
            false
        )
        .is_err());
        let m = matrix_oracle(2, 1.0);
        assert!(run_matrix(
            OptimizerId::Lion,
            &m,
            &DenseMatrix::zeros(2, 2),
            &HyperParams::new(0.1),
            1,
            RngStream::new(0, 0),
            false
        )
        .is_err());
    }

    #[test]
    fn csv_has_one_row_per_step() {
        let o = matrix_oracle(2, 0.1);
        let r = run_matrix(
            OptimizerId::Mnsgd,
            &o,
            &DenseMatrix::identity(2),
            &HyperParams {
                beta: 0.5,
                ..HyperParams::new(0.01)
            },
            7,
            RngStream::new(0, 0),
            true,
        )
        .unwrap();
        let csv = r.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 8);
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].starts_with("1,"));
        assert_eq!(lines[1].split(',').count(), 8);
    }
}
