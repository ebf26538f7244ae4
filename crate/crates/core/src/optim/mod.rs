//! SignSGD, Lion, NSGD, Muon, Muonlight and MNSGD as explicit single-step
//! updates, plus the trajectory driver in [`run`].

mod run;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::tensor::{msign_default, newton_schulz, sign, DenseMatrix, DenseVector};

pub use run::{
    lambda_max, run_matrix, run_vector, RunRecord, RunSummary, StabilityReport, StepDiagnostics, CSV_HEADER,
    STABILITY_RTOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerId {
    Signsgd,
    Lion,
    Nsgd,
    Muon,
    Muonlight,
    Mnsgd,
}

impl OptimizerId {
    pub const ALL: [OptimizerId; 6] = [
        OptimizerId::Signsgd,
        OptimizerId::Lion,
        OptimizerId::Nsgd,
        OptimizerId::Muon,
        OptimizerId::Muonlight,
        OptimizerId::Mnsgd,
    ];

    pub fn is_matrix(self) -> bool {
        matches!(self, OptimizerId::Muon | OptimizerId::Muonlight | OptimizerId::Mnsgd)
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerId::Signsgd => "signsgd",
            OptimizerId::Lion => "lion",
            OptimizerId::Nsgd => "nsgd",
            OptimizerId::Muon => "muon",
            OptimizerId::Muonlight => "muonlight",
            OptimizerId::Mnsgd => "mnsgd",
        }
    }

    /// Norm in which this optimizer's stationarity guarantee is stated.
    pub fn native_norm(self) -> &'static str {
        match self {
            OptimizerId::Signsgd | OptimizerId::Lion => "l1",
            OptimizerId::Nsgd => "l2",
            OptimizerId::Muon | OptimizerId::Muonlight => "nuclear",
            OptimizerId::Mnsgd => "frobenius",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| invalid(format!("unknown optimizer `{s}`")))
    }
}

/// How msign is evaluated in Muon and Muonlight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MsignMode {
    #[default]
    ExactSvd,
    NewtonSchulz {
        q: usize,
    },
}

/// Step sizes and momentum parameters. Each optimizer reads the fields it
/// uses: `beta` (SignSGD, NSGD, Muon, MNSGD), `beta1`/`beta2`/`lambda`
/// (Lion, Muonlight).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub eta: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub beta1: f64,
    #[serde(default)]
    pub beta2: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "one")]
    pub batch: usize,
    #[serde(default)]
    pub msign_mode: MsignMode,
}

fn one() -> usize {
    1
}

impl HyperParams {
    pub fn new(eta: f64) -> Self {
        Self {
            eta,
            beta: 0.0,
            beta1: 0.0,
            beta2: 0.0,
            lambda: 0.0,
            batch: 1,
            msign_mode: MsignMode::ExactSvd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(invalid(format!("eta must be positive and finite, got {}", self.eta)));
        }
        unit("beta", self.beta)?;
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if self.batch == 0 {
            return Err(invalid("batch must be at least 1"));
        }
        Ok(())
    }
}

/// State of a vector optimizer. `m` is `None` until the first gradient
/// arrives, which then serves as m₀.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorOptState {
    pub x: DenseVector,
    pub m: Option<DenseVector>,
    pub t: usize,
}

impl VectorOptState {
    pub fn new(x: DenseVector) -> Self {
        Self { x, m: None, t: 0 }
    }
}

/// State of a matrix optimizer. `b` is the momentum buffer: B₀ = 0 for Muon
/// and Muonlight; MNSGD sets M₀ = G₁ on its first step.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixOptState {
    pub x: DenseMatrix,
    pub b: DenseMatrix,
    pub t: usize,
}

impl MatrixOptState {
    pub fn new(x: DenseMatrix) -> Self {
        let (m, n) = x.shape();
        Self {
            x,
            b: DenseMatrix::zeros(m, n),
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepOutcome {
    /// The direction was zero (normalized methods) and x was left unchanged.
    pub skipped: bool,
}

fn ema(beta: f64, prev: &DenseVector, g: &DenseVector) -> DenseVector {
    DenseVector::from_raw(
        prev.as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(&m, &gi)| beta * m + (1.0 - beta) * gi)
            .collect(),
    )
}

fn check_vec(state: &VectorOptState, g: &DenseVector) -> Result<()> {
    if g.len() != state.x.len() {
        return Err(mismatch(state.x.len(), g.len()));
    }
    Ok(())
}

fn check_mat(state: &MatrixOptState, g: &DenseMatrix) -> Result<()> {
    if g.shape() != state.x.shape() {
        return Err(mismatch(format!("{:?}", state.x.shape()), format!("{:?}", g.shape())));
    }
    Ok(())
}

/// m_t = β m_{t−1} + (1−β) g_t with m₀ = g₁; x ← x − η sign(m_t).
pub fn signsgd_step(state: &mut VectorOptState, g: &DenseVector, hp: &HyperParams) -> Result<StepOutcome> {
    check_vec(state, g)?;
    let prev = state.m.take().unwrap_or_else(|| g.clone());
    let m = ema(hp.beta, &prev, g);
    for (x, &mi) in state.x.as_mut_slice().iter_mut().zip(m.as_slice()) {
        *x -= hp.eta * sign(mi);
    }
    state.m = Some(m);
    state.t += 1;
    Ok(StepOutcome::default())
}

/// v_t = β₁ m_{t−1} + (1−β₁) g_t, m_t = β₂ m_{t−1} + (1−β₂) g_t with
/// m₀ = g₁; x ← x − η sign(v_t) − ηλ x.
pub fn lion_step(state: &mut VectorOptState, g: &DenseVector, hp: &HyperParams) -> Result<StepOutcome> {
    check_vec(state, g)?;
    let prev = state.m.take().unwrap_or_else(|| g.clone());
    let v = ema(hp.beta1, &prev, g);
    let m = ema(hp.beta2, &prev, g);
    for (x, &vi) in state.x.as_mut_slice().iter_mut().zip(v.as_slice()) {
        let decay = hp.eta * hp.lambda * *x;
        *x = *x - hp.eta * sign(vi) - decay;
    }
    state.m = Some(m);
    state.t += 1;
    Ok(StepOutcome::default())
}

/// m_t = β m_{t−1} + (1−β) g_t with m₀ = g₁; x ← x − η m_t/‖m_t‖₂.
/// A zero momentum skips the move.
pub fn nsgd_step(state: &mut VectorOptState, g: &DenseVector, hp: &HyperParams) -> Result<StepOutcome> {
    check_vec(state, g)?;
    let prev = state.m.take().unwrap_or_else(|| g.clone());
    let m = ema(hp.beta, &prev, g);
    let norm = m.l2();
    let skipped = norm == 0.0;
    if !skipped {
        normalized_move(state.x.as_mut_slice(), m.as_slice(), hp.eta, norm);
    }
    state.m = Some(m);
    state.t += 1;
    Ok(StepOutcome { skipped })
}

fn normalized_move(x: &mut [f64], dir: &[f64], eta: f64, norm: f64) {
    for (xi, &di) in x.iter_mut().zip(dir) {
        *xi -= eta * (di / norm);
    }
}

fn orthogonalize(b: &DenseMatrix, mode: MsignMode) -> Result<Option<DenseMatrix>> {
    if b.is_zero() {
        return Ok(None);
    }
    Ok(Some(match mode {
        MsignMode::ExactSvd => msign_default(b)?,
        MsignMode::NewtonSchulz { q } => newton_schulz(b, q)?,
    }))
}

/// B_t = β B_{t−1} + G_t with B₀ = 0; X ← X − η msign(B_t). The momentum is
/// not damped by (1 − β); msign is scale invariant so this is equivalent.
pub fn muon_step(state: &mut MatrixOptState, g: &DenseMatrix, hp: &HyperParams) -> Result<StepOutcome> {
    check_mat(state, g)?;
    state.b = state.b.scale(hp.beta).add(g)?;
    let o = orthogonalize(&state.b, hp.msign_mode)?;
    if let Some(o) = &o {
        state.x = state.x.sub(&o.scale(hp.eta))?;
    }
    state.t += 1;
    Ok(StepOutcome { skipped: o.is_none() })
}

/// B_t = β₂ B_{t−1} + G_t, B̃_t = β₁ B_t + G_t;
/// X ← X − η msign(B̃_t) − ηλ X.
pub fn muonlight_step(state: &mut MatrixOptState, g: &DenseMatrix, hp: &HyperParams) -> Result<StepOutcome> {
    check_mat(state, g)?;
    state.b = state.b.scale(hp.beta2).add(g)?;
    let lookahead = state.b.scale(hp.beta1).add(g)?;
    let o = orthogonalize(&lookahead, hp.msign_mode)?;
    let decay = state.x.scale(hp.eta * hp.lambda);
    let mut next = state.x.clone();
    if let Some(o) = &o {
        next = next.sub(&o.scale(hp.eta))?;
    }
    state.x = next.sub(&decay)?;
    state.t += 1;
    Ok(StepOutcome { skipped: o.is_none() })
}

/// M_t = β M_{t−1} + (1−β) G_t with M₀ = G₁; X ← X − η M_t/‖M_t‖_F.
pub fn mnsgd_step(state: &mut MatrixOptState, g: &DenseMatrix, hp: &HyperParams) -> Result<StepOutcome> {
    check_mat(state, g)?;
    let prev = if state.t == 0 { g.clone() } else { state.b.clone() };
    let m = prev.zip_map(g, |mi, gi| hp.beta * mi + (1.0 - hp.beta) * gi)?;
    let norm = m.fro();
    let skipped = norm == 0.0;
    if !skipped {
        normalized_move(state.x.as_mut_slice(), m.as_slice(), hp.eta, norm);
    }
    state.b = m;
    state.t += 1;
    Ok(StepOutcome { skipped })
}

pub(crate) fn vector_step(
    opt: OptimizerId,
    state: &mut VectorOptState,
    g: &DenseVector,
    hp: &HyperParams,
) -> Result<StepOutcome> {
    match opt {
        OptimizerId::Signsgd => signsgd_step(state, g, hp),
        OptimizerId::Lion => lion_step(state, g, hp),
        OptimizerId::Nsgd => nsgd_step(state, g, hp),
        other => Err(Error::InvalidArgument(format!(
            "{} is a matrix optimizer",
            other.name()
        ))),
    }
}

pub(crate) fn matrix_step(
    opt: OptimizerId,
    state: &mut MatrixOptState,
    g: &DenseMatrix,
    hp: &HyperParams,
) -> Result<StepOutcome> {
    match opt {
        OptimizerId::Muon => muon_step(state, g, hp),
        OptimizerId::Muonlight => muonlight_step(state, g, hp),
        OptimizerId::Mnsgd => mnsgd_step(state, g, hp),
        other => Err(Error::InvalidArgument(format!(
            "{} is a vector optimizer",
            other.name()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::RngStream;
    use rand_distr::{Distribution, StandardNormal};

    fn v(xs: &[f64]) -> DenseVector {
        DenseVector::new(xs.to_vec()).unwrap()
    }

    fn gaussian_vec(rng: &mut crate::noise::NoiseRng, d: usize) -> DenseVector {
        DenseVector::from_fn(d, |_| StandardNormal.sample(rng))
    }

    fn gaussian_mat(rng: &mut crate::noise::NoiseRng, m: usize, n: usize) -> DenseMatrix {
        DenseMatrix::from_fn(m, n, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn signsgd_plain_sign_descent() {
        let mut s = VectorOptState::new(v(&[1.0, -1.0]));
        let hp = HyperParams::new(0.1);
        signsgd_step(&mut s, &v(&[2.0, -2.0]), &hp).unwrap();
        assert_eq!(s.x.as_slice(), &[0.9, -0.9]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn signsgd_frozen_momentum() {
        let mut s = VectorOptState::new(v(&[0.0, 0.0]));
        let hp = HyperParams {
            beta: 1.0,
            ..HyperParams::new(0.1)
        };
        signsgd_step(&mut s, &v(&[1.0, -3.0]), &hp).unwrap();
        let m1 = s.m.clone().unwrap();
        let mut rng = RngStream::new(0, 0).rng();
        for _ in 0..20 {
            signsgd_step(&mut s, &gaussian_vec(&mut rng, 2), &hp).unwrap();
            assert_eq!(s.m.as_ref().unwrap(), &m1);
        }
    }

    #[test]
    fn signsgd_displacement_is_eta() {
        let mut rng = RngStream::new(1, 0).rng();
        let hp = HyperParams {
            beta: 0.9,
            ..HyperParams::new(0.03)
        };
        let mut s = VectorOptState::new(gaussian_vec(&mut rng, 5));
        for _ in 0..50 {
            let before = s.x.clone();
            signsgd_step(&mut s, &gaussian_vec(&mut rng, 5), &hp).unwrap();
            if s.m.as_ref().unwrap().as_slice().iter().all(|&mi| mi != 0.0) {
                let d = s.x.sub(&before).unwrap().linf();
                assert!((d - 0.03).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn lion_equals_signsgd_when_betas_match() {
        let mut rng = RngStream::new(2, 0).rng();
        let x0 = gaussian_vec(&mut rng, 6);
        let mut a = VectorOptState::new(x0.clone());
        let mut b = VectorOptState::new(x0);
        let sgd = HyperParams {
            beta: 0.8,
            ..HyperParams::new(0.01)
        };
        let lion = HyperParams {
            beta1: 0.8,
            beta2: 0.8,
            lambda: 0.0,
            ..HyperParams::new(0.01)
        };
        for _ in 0..100 {
            let g = gaussian_vec(&mut rng, 6);
            signsgd_step(&mut a, &g, &sgd).unwrap();
            lion_step(&mut b, &g, &lion).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn lion_pure_decay() {
        let mut s = VectorOptState::new(v(&[4.0, -2.0]));
        let hp = HyperParams {
            lambda: 0.5,
            ..HyperParams::new(0.1)
        };
        let zero = DenseVector::zeros(2);
        let mut expect = s.x.clone();
        for _ in 0..10 {
            lion_step(&mut s, &zero, &hp).unwrap();
            expect = expect.scale(1.0 - 0.1 * 0.5);
            assert!(s.x.sub(&expect).unwrap().linf() < 1e-14);
        }
    }

    #[test]
    fn nsgd_unit_steps_and_skip() {
        let mut rng = RngStream::new(3, 0).rng();
        let hp = HyperParams {
            beta: 0.5,
            ..HyperParams::new(0.2)
        };
        let mut s = VectorOptState::new(gaussian_vec(&mut rng, 4));
        for _ in 0..20 {
            let before = s.x.clone();
            let out = nsgd_step(&mut s, &gaussian_vec(&mut rng, 4), &hp).unwrap();
            assert!(!out.skipped);
            assert!((s.x.sub(&before).unwrap().l2() - 0.2).abs() < 1e-14);
        }
        let mut z = VectorOptState::new(v(&[1.0]));
        let out = nsgd_step(&mut z, &v(&[0.0]), &hp).unwrap();
        assert!(out.skipped);
        assert_eq!(z.x.as_slice(), &[1.0]);
    }

    #[test]
    fn nsgd_noiseless_is_normalized_gd() {
        let g = v(&[3.0, 4.0]);
        let mut s = VectorOptState::new(v(&[0.0, 0.0]));
        nsgd_step(&mut s, &g, &HyperParams::new(0.5)).unwrap();
        assert!(s.x.sub(&v(&[-0.3, -0.4])).unwrap().linf() < 1e-15);
    }

    #[test]
    fn mnsgd_on_columns_equals_nsgd() {
        let mut rng = RngStream::new(4, 0).rng();
        let x0 = gaussian_vec(&mut rng, 5);
        let mut a = VectorOptState::new(x0.clone());
        let mut b = MatrixOptState::new(DenseMatrix::from_column(&x0));
        let hp = HyperParams {
            beta: 0.7,
            ..HyperParams::new(0.05)
        };
        for _ in 0..100 {
            let g = gaussian_vec(&mut rng, 5);
            nsgd_step(&mut a, &g, &hp).unwrap();
            mnsgd_step(&mut b, &DenseMatrix::from_column(&g), &hp).unwrap();
            assert_eq!(a.x.as_slice(), b.x.as_slice());
        }
    }

    #[test]
    fn muon_orthogonal_gradient() {
        let mut rng = RngStream::new(5, 0).rng();
        let q = msign_default(&gaussian_mat(&mut rng, 4, 4)).unwrap();
        let x0 = gaussian_mat(&mut rng, 4, 4);
        let mut s = MatrixOptState::new(x0.clone());
        muon_step(&mut s, &q, &HyperParams::new(0.1)).unwrap();
        let want = x0.sub(&q.scale(0.1)).unwrap();
        assert!(s.x.sub(&want).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn muon_damped_momentum_agrees() {
        // Same trajectory with M_t = (1−β)B_t: msign ignores positive scale.
        let mut rng = RngStream::new(6, 0).rng();
        let x0 = gaussian_mat(&mut rng, 3, 5);
        let hp = HyperParams {
            beta: 0.9,
            ..HyperParams::new(0.02)
        };
        let mut s = MatrixOptState::new(x0.clone());
        let mut x_damped = x0;
        let mut m = DenseMatrix::zeros(3, 5);
        for _ in 0..100 {
            let g = gaussian_mat(&mut rng, 3, 5);
            muon_step(&mut s, &g, &hp).unwrap();
            m = m.scale(hp.beta).add(&g.scale(1.0 - hp.beta)).unwrap();
            x_damped = x_damped.sub(&msign_default(&m).unwrap().scale(hp.eta)).unwrap();
            assert!(s.x.sub(&x_damped).unwrap().max_abs() < 1e-10);
        }
    }

    #[test]
    fn muon_column_direction_is_normalized() {
        let mut rng = RngStream::new(7, 0).rng();
        let x0 = gaussian_vec(&mut rng, 6);
        let mut a = VectorOptState::new(x0.clone());
        let mut b = MatrixOptState::new(DenseMatrix::from_column(&x0));
        let hp = HyperParams::new(0.1);
        for _ in 0..50 {
            let g = gaussian_vec(&mut rng, 6);
            nsgd_step(&mut a, &g, &hp).unwrap();
            muon_step(&mut b, &DenseMatrix::from_column(&g), &hp).unwrap();
            let diff = a.x.sub(&b.x.to_vector()).unwrap().linf();
            assert!(diff < 1e-10, "{diff}");
        }
    }

    #[test]
    fn muon_step_op_norm_is_eta() {
        let mut rng = RngStream::new(8, 0).rng();
        let hp = HyperParams {
            beta: 0.5,
            ..HyperParams::new(0.3)
        };
        let mut s = MatrixOptState::new(gaussian_mat(&mut rng, 3, 4));
        for _ in 0..20 {
            let before = s.x.clone();
            muon_step(&mut s, &gaussian_mat(&mut rng, 3, 4), &hp).unwrap();
            assert!(s.x.sub(&before).unwrap().op_norm() <= 0.3 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn muonlight_without_momentum_uses_msign_of_gradient() {
        let mut rng = RngStream::new(9, 0).rng();
        let x0 = gaussian_mat(&mut rng, 3, 3);
        let hp = HyperParams {
            beta1: 0.0,
            beta2: 0.6,
            ..HyperParams::new(0.1)
        };
        let mut s = MatrixOptState::new(x0.clone());
        for _ in 0..3 {
            let before = s.x.clone();
            let g = gaussian_mat(&mut rng, 3, 3);
            muonlight_step(&mut s, &g, &hp).unwrap();
            let want = before.sub(&msign_default(&g).unwrap().scale(0.1)).unwrap();
            assert!(s.x.sub(&want).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn newton_schulz_mode_runs() {
        let mut rng = RngStream::new(10, 0).rng();
        let hp = HyperParams {
            msign_mode: MsignMode::NewtonSchulz { q: 5 },
            ..HyperParams::new(0.1)
        };
        let mut s = MatrixOptState::new(gaussian_mat(&mut rng, 4, 6));
        let out = muon_step(&mut s, &gaussian_mat(&mut rng, 4, 6), &hp).unwrap();
        assert!(!out.skipped);
        let zero = muon_step(
            &mut MatrixOptState::new(DenseMatrix::zeros(2, 2)),
            &DenseMatrix::zeros(2, 2),
            &hp,
        )
        .unwrap();
        assert!(zero.skipped);
    }

    #[test]
    fn shape_errors() {
        let mut s = VectorOptState::new(v(&[1.0, 2.0]));
        assert!(signsgd_step(&mut s, &v(&[1.0]), &HyperParams::new(0.1)).is_err());
        let mut m = MatrixOptState::new(DenseMatrix::zeros(2, 3));
        assert!(muon_step(&mut m, &DenseMatrix::zeros(3, 2), &HyperParams::new(0.1)).is_err());
    }

    #[test]
    fn hyperparam_validation() {
        assert!(HyperParams::new(0.0).validate().is_err());
        assert!(HyperParams {
            beta: 1.2,
            ..HyperParams::new(0.1)
        }
        .validate()
        .is_err());
        assert!(HyperParams {
            lambda: -1.0,
            ..HyperParams::new(0.1)
        }
        .validate()
        .is_err());
        assert!(HyperParams {
            batch: 0,
            ..HyperParams::new(0.1)
        }
        .validate()
        .is_err());
        assert!(HyperParams {
            beta: 1.0,
            ..HyperParams::new(0.1)
        }
        .validate()
        .is_ok());
    }
}
