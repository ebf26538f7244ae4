use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::noise::{MatrixNoiseMode, NoiseFamily, NoiseSpec};
use crate::optim::{HyperParams, MsignMode, OptimizerId};
use crate::problems::{
    make_bernoulli_regression, make_generalized_smooth, make_matrix_quadratic, make_separable_quadratic, MatrixOracle,
    NoisyMatrixOracle, NoisyVectorOracle, VectorOracle,
};
use crate::tensor::{DenseMatrix, DenseVector};
use crate::theory::TheoryInputs;

/// Test problem and starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// ½Σ l0 (xᵢ − x_star)², started at x₁ = x1·𝟙.
    Quadratic {
        d: usize,
        l0: f64,
        #[serde(default)]
        x_star: f64,
        x1: f64,
    },
    /// Σ (l0/l1²)(cosh(l1 xᵢ) − 1), started at x₁ = x1·𝟙.
    Cosh { d: usize, l0: f64, l1: f64, x1: f64 },
    /// Bernoulli-design regression with minimizer 0 and label noise of
    /// p-th moment sigma^p.
    Bernoulli {
        d: usize,
        sigma: f64,
        x1: f64,
        #[serde(default = "yes")]
        design_noise: bool,
    },
    /// ½tr((X − X*)ᵀ L (X − X*)) with L = curvature·I_m, X* = 0 and
    /// X₁ = x1·I_{m×n}.
    Matquad {
        m: usize,
        n: usize,
        curvature: f64,
        x1: f64,
    },
}

fn yes() -> bool {
    true
}

impl ProblemConfig {
    pub fn is_matrix(&self) -> bool {
        matches!(self, ProblemConfig::Matquad { .. })
    }
}

/// Noise parameters. Vector problems read `sigma0`/`sigma1` (uniform over
/// coordinates), matrix problems `v0_scale`/`v1_op`; the Bernoulli problem
/// uses only `p` and `family`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub p: f64,
    pub family: NoiseFamily,
    #[serde(default)]
    pub sigma0: f64,
    #[serde(default)]
    pub sigma1: f64,
    #[serde(default)]
    pub v0_scale: f64,
    #[serde(default)]
    pub v1_op: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum HyperSource {
    /// Prescribed by the convergence theory for each T. Lion and Muonlight
    /// take β₁ (default β₂) and λ (default 0) inside the admissible ranges.
    Theory {
        #[serde(default)]
        beta1: Option<f64>,
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        msign_mode: MsignMode,
    },
    Explicit {
        params: HyperParams,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub problem: ProblemConfig,
    pub optimizer: OptimizerId,
    pub noise: NoiseConfig,
    pub hyper: HyperSource,
    pub t_list: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Keep per-step rows and write one CSV per run.
    #[serde(default = "yes")]
    pub record: bool,
}

/// Parses a JSON config, reporting the key path of the first schema error.
pub fn parse_config(bytes: &[u8]) -> Result<ExperimentConfig> {
    parse_json(bytes)
}

/// Deserializes any JSON document with key-path error reporting.
pub fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        msg: e.inner().to_string(),
    })
}

/// SHA-256 of the canonical (compact, field-ordered) serialization.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let canonical = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(&canonical))
}

pub(crate) enum Built {
    Vector {
        oracle: Box<dyn VectorOracle>,
        x1: DenseVector,
        sigma0: DenseVector,
        sigma1: DenseVector,
    },
    Matrix {
        oracle: Box<dyn MatrixOracle>,
        x1: DenseMatrix,
        v0_abs: DenseMatrix,
        v1_op: f64,
    },
}

impl Built {
    /// Theory constants for a run of `t` steps.
    pub(crate) fn theory_inputs(&self, p: f64, t: usize) -> Result<TheoryInputs> {
        Ok(match self {
            Built::Vector {
                oracle,
                x1,
                sigma0,
                sigma1,
            } => {
                let prob = oracle.problem();
                TheoryInputs {
                    delta_f: prob.f(x1)? - prob.f_star,
                    l0_norm: prob.l0.l1(),
                    l1_norm: prob.l1.linf(),
                    sigma0_norm: sigma0.l1(),
                    sigma1_norm: sigma1.linf(),
                    p,
                    t,
                }
            }
            Built::Matrix {
                oracle,
                x1,
                v0_abs,
                v1_op,
            } => {
                let prob = oracle.problem();
                TheoryInputs {
                    delta_f: prob.f(x1)? - prob.f_star,
                    l0_norm: prob.l0_nuclear,
                    l1_norm: prob.l1_op,
                    sigma0_norm: v0_abs.nuclear(),
                    sigma1_norm: *v1_op,
                    p,
                    t,
                }
            }
        })
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: &str| Error::Config {
            path: path.to_string(),
            msg: msg.to_string(),
        };
        if self.t_list.is_empty() {
            return Err(bad("t_list", "no experiments: t_list is empty"));
        }
        if self.t_list.contains(&0) {
            return Err(bad("t_list", "every T must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds", "no experiments: seeds is empty"));
        }
        if self.problem.is_matrix() != self.optimizer.is_matrix() {
            return Err(bad(
                "optimizer",
                &format!("{} does not match the problem shape", self.optimizer.name()),
            ));
        }
        match &self.hyper {
            HyperSource::Explicit { params } => {
                params.validate().map_err(|e| bad("hyper.params", &e.to_string()))?;
            }
            HyperSource::Theory { .. } if matches!(self.optimizer, OptimizerId::Nsgd | OptimizerId::Mnsgd) => {
                return Err(bad(
                    "hyper.source",
                    &format!("no theory-prescribed hyperparameters for {}", self.optimizer.name()),
                ));
            }
            HyperSource::Theory { .. } => {}
        }
        self.build().map_err(|e| match e {
            Error::Config { .. } => e,
            other => bad("problem", &other.to_string()),
        })?;
        Ok(())
    }

    /// True when the stochastic gradient equals the exact gradient.
    pub fn noiseless(&self) -> bool {
        let n = &self.noise;
        match self.problem {
            ProblemConfig::Quadratic { .. } | ProblemConfig::Cosh { .. } => n.sigma0 == 0.0 && n.sigma1 == 0.0,
            ProblemConfig::Bernoulli {
                sigma, design_noise, ..
            } => sigma == 0.0 && !design_noise,
            ProblemConfig::Matquad { .. } => n.v0_scale == 0.0 && n.v1_op == 0.0,
        }
    }

    pub(crate) fn build(&self) -> Result<Built> {
        build_problem(&self.problem, &self.noise)
    }
}

/// Instantiates the oracle and the theory-side noise constants.
pub(crate) fn build_problem(problem: &ProblemConfig, n: &NoiseConfig) -> Result<Built> {
    let vector = |problem, d: usize, x1: f64| -> Result<Built> {
        let spec = NoiseSpec::uniform(n.p, n.family, d, n.sigma0, n.sigma1)?;
        Ok(Built::Vector {
            sigma0: spec.sigma0.clone(),
            sigma1: spec.sigma1.clone(),
            oracle: Box::new(NoisyVectorOracle::new(problem, spec)?),
            x1: DenseVector::filled(d, x1),
        })
    };
    match *problem {
        ProblemConfig::Quadratic { d, l0, x_star, x1 } => vector(
            make_separable_quadratic(DenseVector::filled(d, l0), DenseVector::filled(d, x_star))?,
            d,
            x1,
        ),
        ProblemConfig::Cosh { d, l0, l1, x1 } => vector(make_generalized_smooth(l0, l1, d)?, d, x1),
        ProblemConfig::Bernoulli {
            d,
            sigma,
            x1,
            design_noise,
        } => {
            let mut reg = make_bernoulli_regression(DenseVector::zeros(d), sigma, n.p, n.family)?;
            let sigma1 = if design_noise { reg.stated_sigma1() } else { 0.0 };
            if !design_noise {
                reg = reg.without_design_noise();
            }
            Ok(Built::Vector {
                sigma0: DenseVector::filled(d, reg.stated_sigma0()),
                sigma1: DenseVector::filled(d, sigma1),
                oracle: Box::new(reg),
                x1: DenseVector::filled(d, x1),
            })
        }
        ProblemConfig::Matquad {
            m,
            n: cols,
            curvature,
            x1,
        } => {
            let spec = NoiseSpec::matrix(n.p, n.family, n.v0_scale, n.v1_op)?;
            let mode = MatrixNoiseMode {
                v0_scale: n.v0_scale,
                v1_op: n.v1_op,
            };
            let problem =
                make_matrix_quadratic(DenseMatrix::identity(m).scale(curvature), DenseMatrix::zeros(m, cols))?;
            Ok(Built::Matrix {
                oracle: Box::new(NoisyMatrixOracle::new(problem, spec)?),
                x1: DenseMatrix::eye(m, cols).scale(x1),
                v0_abs: mode.v0_abs(n.p, m, cols),
                v1_op: n.v1_op,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = r#"{
        "name": "mini",
        "problem": {"kind": "quadratic", "d": 3, "l0": 1.0, "x1": 1.0},
        "optimizer": "signsgd",
        "noise": {"p": 2.0, "family": {"kind": "gaussian"}, "sigma0": 1.0},
        "hyper": {"source": "theory"},
        "t_list": [16, 32],
        "seeds": [0, 1]
    }"#;

    #[test]
    fn parses_and_validates() {
        let cfg = parse_config(MINI.as_bytes()).unwrap();
        cfg.validate().unwrap();
        assert!(cfg.record);
        assert!(!cfg.noiseless());
    }

    #[test]
    fn unknown_key_reports_path() {
        let text = MINI.replace("\"sigma0\": 1.0", "\"sigma0\": 1.0, \"sigma2\": 3");
        match parse_config(text.as_bytes()) {
            Err(Error::Config { path, msg }) => {
                assert!(path.starts_with("noise"), "{path}");
                assert!(msg.contains("sigma2"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_t_list_is_rejected() {
        let text = MINI.replace("[16, 32]", "[]");
        let err = parse_config(text.as_bytes()).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("no experiments"), "{err}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let text = MINI.replace("\"signsgd\"", "\"muon\"");
        assert!(parse_config(text.as_bytes()).unwrap().validate().is_err());
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = parse_config(MINI.as_bytes()).unwrap();
        let compact: serde_json::Value = serde_json::from_str(MINI).unwrap();
        let b = parse_config(compact.to_string().as_bytes()).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
