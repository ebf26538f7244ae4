//! Config-driven experiment runs, T-sweeps, rate fits and reports.

mod config;
mod fit;
mod noise_check;
mod report;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::noise::RngStream;
use crate::optim::{run_matrix, run_vector, HyperParams, OptimizerId, RunRecord, RunSummary};
use crate::tensor::{density_phi, density_psi};
use crate::theory::{
    complexity_ratios_from_densities, lion_params, muon_params, muonlight_params, predicted_rate_exponent,
    signsgd_params, ComplexityRatios, TheoryInputs,
};

pub use config::{config_hash, parse_config, parse_json, ExperimentConfig, HyperSource, NoiseConfig, ProblemConfig};
pub use fit::{fit_rate, RateFit, MIN_T_SPAN};
pub use noise_check::{run_noise_check, NoiseCheckConfig};
pub use report::{build_report, load_inputs, write_report, ReportBundle, ReportInputs, VerificationRecord};

use config::Built;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok { run: RunSummary },
    Aborted { error: String },
}

/// One (T, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
    pub hyper: Option<HyperParams>,
    pub theory_inputs: Option<TheoryInputs>,
    pub csv: Option<String>,
    pub outcome: CellOutcome,
}

impl CellSummary {
    pub fn run(&self) -> Option<&RunSummary> {
        match &self.outcome {
            CellOutcome::Ok { run } => Some(run),
            CellOutcome::Aborted { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub optimizer: OptimizerId,
    pub native_norm: String,
    /// (p−1)/(3p−2) for the configured p.
    pub predicted_exponent: f64,
    /// Noiseless runs fall outside the stochastic model; their rate fit is
    /// reported but not comparable with the prediction.
    pub noiseless: bool,
    pub cells: Vec<CellSummary>,
    pub rate_fit: Option<RateFit>,
    pub rate_fit_error: Option<String>,
    pub ratios: Option<ComplexityRatios>,
    pub aborted: usize,
    pub stability_violations: usize,
}

impl ExperimentSummary {
    /// All strict (zero-tolerance) assertions held.
    pub fn strict_ok(&self) -> bool {
        self.stability_violations == 0
    }
}

/// Everything an experiment produces; file names are relative to the
/// output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub summary: ExperimentSummary,
    pub csv_files: Vec<(String, String)>,
}

impl ExperimentOutput {
    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }

    /// Writes `summary.json` and `runs/*.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        if !self.csv_files.is_empty() {
            std::fs::create_dir_all(dir.join("runs"))?;
        }
        for (name, body) in &self.csv_files {
            std::fs::write(dir.join(name), body)?;
        }
        std::fs::write(dir.join("summary.json"), self.summary_json())?;
        Ok(())
    }
}

/// Resolves the hyperparameters of one cell.
pub fn resolve_hyper(cfg: &ExperimentConfig, t: usize) -> Result<(HyperParams, Option<TheoryInputs>)> {
    let built = cfg.build()?;
    resolve_with(cfg, &built, t)
}

fn resolve_with(cfg: &ExperimentConfig, built: &Built, t: usize) -> Result<(HyperParams, Option<TheoryInputs>)> {
    match &cfg.hyper {
        HyperSource::Explicit { params } => Ok((*params, None)),
        HyperSource::Theory {
            beta1,
            lambda,
            msign_mode,
        } => {
            let inputs = built.theory_inputs(cfg.noise.p, t)?;
            let mut hp = match cfg.optimizer {
                OptimizerId::Signsgd => signsgd_params(&inputs)?.hyper(),
                OptimizerId::Muon => muon_params(&inputs)?.hyper(),
                OptimizerId::Lion | OptimizerId::Muonlight => {
                    let dp = if cfg.optimizer == OptimizerId::Lion {
                        lion_params(&inputs)?
                    } else {
                        muonlight_params(&inputs)?
                    };
                    dp.hyper(beta1.unwrap_or(dp.beta2), lambda.unwrap_or(0.0))?
                }
                OptimizerId::Nsgd | OptimizerId::Mnsgd => {
                    return Err(invalid(format!(
                        "no theory-prescribed hyperparameters for {}; use explicit params",
                        cfg.optimizer.name()
                    )))
                }
            };
            hp.msign_mode = *msign_mode;
            Ok((hp, Some(inputs)))
        }
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    built: &Built,
    t: usize,
    seed: u64,
) -> Result<(HyperParams, Option<TheoryInputs>, RunRecord)> {
    let (hp, inputs) = resolve_with(cfg, built, t)?;
    let stream = RngStream::new(seed, t as u64);
    let rec = match built {
        Built::Vector { oracle, x1, .. } => run_vector(cfg.optimizer, oracle.as_ref(), x1, &hp, t, stream, cfg.record)?,
        Built::Matrix { oracle, x1, .. } => run_matrix(cfg.optimizer, oracle.as_ref(), x1, &hp, t, stream, cfg.record)?,
    };
    Ok((hp, inputs, rec))
}

fn csv_name(cfg: &ExperimentConfig, t: usize, seed: u64) -> String {
    format!("runs/{}_T{t}_seed{seed}.csv", cfg.optimizer.name())
}

fn ratios(cfg: &ExperimentConfig, built: &Built, cells: &[CellSummary]) -> Option<ComplexityRatios> {
    if !matches!(
        cfg.optimizer,
        OptimizerId::Signsgd | OptimizerId::Lion | OptimizerId::Muon | OptimizerId::Muonlight
    ) {
        return None;
    }
    let traj = cells
        .iter()
        .filter_map(|c| c.run().and_then(|r| r.min_density))
        .fold(f64::INFINITY, f64::min);
    if !traj.is_finite() {
        return None;
    }
    let (curv, noise) = match built {
        Built::Vector { oracle, sigma0, .. } => (
            density_phi(&oracle.problem().l0, f64::INFINITY).ok()?,
            density_phi(sigma0, 2.0).ok()?,
        ),
        Built::Matrix { oracle, v0_abs, .. } => (
            density_psi(oracle.problem().curvature(), f64::INFINITY).ok()?,
            density_psi(v0_abs, 2.0).ok()?,
        ),
    };
    complexity_ratios_from_densities(curv, noise, traj, cfg.noise.p).ok()
}

/// Runs every (T, seed) cell of `cfg` on `workers` threads. Cells are
/// independent: each draws from the stream (seed, T), so the output does
/// not depend on the worker count.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let built = cfg.build()?;
    let grid: Vec<(usize, u64)> = cfg
        .t_list
        .iter()
        .flat_map(|&t| cfg.seeds.iter().map(move |&s| (t, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        grid.par_iter()
            .map(|&(t, seed)| (t, seed, run_cell(cfg, &built, t, seed)))
            .collect()
    });

    let mut cells = Vec::with_capacity(results.len());
    let mut csv_files = Vec::new();
    for (t, seed, res) in results {
        let cell = match res {
            Ok((hp, inputs, rec)) => {
                let csv = cfg.record.then(|| {
                    let name = csv_name(cfg, t, seed);
                    csv_files.push((name.clone(), rec.to_csv()));
                    name
                });
                CellSummary {
                    t,
                    seed,
                    hyper: Some(hp),
                    theory_inputs: inputs,
                    csv,
                    outcome: CellOutcome::Ok { run: rec.summary },
                }
            }
            Err(e) => CellSummary {
                t,
                seed,
                hyper: resolve_with(cfg, &built, t).ok().map(|h| h.0),
                theory_inputs: None,
                csv: None,
                outcome: CellOutcome::Aborted { error: e.to_string() },
            },
        };
        cells.push(cell);
    }

    let observations: Vec<(usize, f64)> = cells
        .iter()
        .filter_map(|c| c.run().and_then(|r| r.mean_grad).map(|g| (c.t, g)))
        .collect();
    let (rate_fit, rate_fit_error) = match fit_rate(&observations) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let aborted = cells.iter().filter(|c| c.run().is_none()).count();
    let stability_violations = cells
        .iter()
        .filter_map(|c| c.run().and_then(|r| r.stability.as_ref()))
        .map(|s| s.violations)
        .sum();
    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        config_sha256: config_hash(cfg),
        config: cfg.clone(),
        optimizer: cfg.optimizer,
        native_norm: cfg.optimizer.native_norm().to_string(),
        predicted_exponent: predicted_rate_exponent(cfg.noise.p),
        noiseless: cfg.noiseless(),
        ratios: ratios(cfg, &built, &cells),
        cells,
        rate_fit,
        rate_fit_error,
        aborted,
        stability_violations,
    };
    Ok(ExperimentOutput { summary, csv_files })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::signsgd_params;

    fn mini(t_list: &str, extra: &str) -> ExperimentConfig {
        let text = format!(
            r#"{{
            "name": "mini",
            "problem": {{"kind": "quadratic", "d": 4, "l0": 1.0, "x1": 1.0}},
            "optimizer": "signsgd",
            "noise": {{"p": 1.5, "family": {{"kind": "alpha_stable", "alpha": 1.6}}, "sigma0": 1.0}},
            "hyper": {{"source": "theory"}},
            "t_list": {t_list},
            "seeds": [0, 1, 2]{extra}
        }}"#
        );
        parse_config(text.as_bytes()).unwrap()
    }

    #[test]
    fn empty_t_list() {
        let err = run_experiment(&mini("[]", ""), 1).unwrap_err();
        assert!(err.to_string().contains("no experiments"));
    }

    #[test]
    fn theory_params_are_echoed() {
        let cfg = mini("[64, 640, 6400]", "");
        let out = run_experiment(&cfg, 2).unwrap();
        for cell in &out.summary.cells {
            let inputs = cell.theory_inputs.unwrap();
            // f(x₁) = ½·4, ‖l₀‖₁ = 4, ‖σ₀‖₁ = 4.
            assert_eq!(
                (inputs.delta_f, inputs.l0_norm, inputs.sigma0_norm, inputs.t),
                (2.0, 4.0, 4.0, cell.t)
            );
            let want = signsgd_params(&inputs).unwrap();
            let hp = cell.hyper.unwrap();
            assert_eq!((hp.batch, hp.beta, hp.eta), (want.batch, want.beta, want.eta));
        }
        assert!(out.summary.rate_fit.is_some(), "{:?}", out.summary.rate_fit_error);
        assert_eq!(out.csv_files.len(), 9);
        assert!(out.summary.ratios.is_some());
    }

    #[test]
    fn deterministic_across_workers() {
        let cfg = mini("[32, 64]", "");
        let a = run_experiment(&cfg, 1).unwrap();
        let b = run_experiment(&cfg, 4).unwrap();
        assert_eq!(a.summary_json(), b.summary_json());
        assert_eq!(a.csv_files, b.csv_files);
    }

    #[test]
    fn divergent_runs_are_recorded() {
        let text = r#"{
            "problem": {"kind": "cosh", "d": 2, "l0": 1.0, "l1": 1.0, "x1": 1.0},
            "optimizer": "nsgd",
            "noise": {"p": 2.0, "family": {"kind": "gaussian"}},
            "hyper": {"source": "explicit", "params": {"eta": 1e6}},
            "t_list": [5],
            "seeds": [0],
            "record": false
        }"#;
        let out = run_experiment(&parse_config(text.as_bytes()).unwrap(), 1).unwrap();
        assert_eq!(out.summary.aborted, 1);
        assert!(matches!(out.summary.cells[0].outcome, CellOutcome::Aborted { .. }));
        assert!(out.summary.noiseless);
        assert!(out.csv_files.is_empty());
    }

    #[test]
    fn nsgd_theory_source_is_rejected() {
        let mut cfg = mini("[8]", "");
        cfg.optimizer = OptimizerId::Nsgd;
        let err = run_experiment(&cfg, 1).unwrap_err();
        assert!(err.to_string().contains("hyper.source"), "{err}");
    }
}
