use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::parse_json;
use super::ExperimentSummary;
use crate::concentration::{ConcentrationSuiteReport, LemmaSuiteReport, RegretSuiteReport};
use crate::error::{invalid, Result};

/// Output of the concentration, regret and lemma checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub seed: u64,
    pub trials: usize,
    pub concentration: Option<ConcentrationSuiteReport>,
    pub regret: Option<RegretSuiteReport>,
    pub lemmas: Option<LemmaSuiteReport>,
}

impl VerificationRecord {
    pub fn passed(&self) -> bool {
        self.concentration.as_ref().is_none_or(|c| c.passed())
            && self.regret.as_ref().is_none_or(|r| r.passed())
            && self.lemmas.as_ref().is_none_or(|l| l.passed())
    }

    /// The zero-tolerance parts: the deterministic regret bound and lemmas.
    pub fn strict_ok(&self) -> bool {
        self.regret.as_ref().is_none_or(|r| r.passed()) && self.lemmas.as_ref().is_none_or(|l| l.passed())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportInputs {
    pub experiments: Vec<ExperimentSummary>,
    pub verifications: Vec<VerificationRecord>,
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const VERIFICATION_FILE: &str = "verification.json";

/// Reads `summary.json` and `verification.json` from each directory. Fails
/// listing every directory that holds neither.
pub fn load_inputs(dirs: &[PathBuf]) -> Result<ReportInputs> {
    let mut inputs = ReportInputs::default();
    let mut missing = Vec::new();
    for dir in dirs {
        let summary = dir.join(SUMMARY_FILE);
        let verification = dir.join(VERIFICATION_FILE);
        let mut found = false;
        if summary.is_file() {
            inputs.experiments.push(parse_json(&std::fs::read(&summary)?)?);
            found = true;
        }
        if verification.is_file() {
            inputs.verifications.push(parse_json(&std::fs::read(&verification)?)?);
            found = true;
        }
        if !found {
            missing.push(dir.display().to_string());
        }
    }
    if !missing.is_empty() {
        return Err(invalid(format!(
            "missing inputs (no {SUMMARY_FILE} or {VERIFICATION_FILE}): {}",
            missing.join(", ")
        )));
    }
    Ok(inputs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub markdown: String,
    pub rates_csv: String,
    /// Geometric-mean native gradient norm against T per experiment.
    pub curves_csv: String,
}

fn sci(x: f64) -> String {
    format!("{x:.6e}")
}

fn opt_sci(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), sci)
}

fn label(e: &ExperimentSummary) -> String {
    if e.name.is_empty() {
        e.config_sha256[..12].to_string()
    } else {
        e.name.clone()
    }
}

const REFERENCE: &str = "\
| setting | method | criterion | iterations to ε | gain |
|---|---|---|---|---|
| vector | NSGD | E‖∇f‖₂ ≤ ε | Δ·‖l₀‖∞·‖σ₀‖₂^{p/(p−1)}·ε^{−(3p−2)/(p−1)} | matches lower bound |
| vector | SignSGD, Lion | E‖∇f‖₁ ≤ ε | Δ·‖l₀‖₁·‖σ₀‖₁^{p/(p−1)}·ε^{−(3p−2)/(p−1)} | up to d |
| matrix | MNSGD | E‖∇f‖_F ≤ ε | Δ·‖L₀‖op·‖V₀‖_F^{p/(p−1)}·ε^{−(3p−2)/(p−1)} | matches lower bound |
| matrix | Muon, Muonlight | E‖∇f‖_* ≤ ε | Δ·‖L₀‖_*·‖V₀‖_*^{p/(p−1)}·ε^{−(3p−2)/(p−1)} | up to min(m, n) |
";

/// Geometric means of the average native gradient norm per T.
fn curve(e: &ExperimentSummary) -> Vec<(usize, f64, usize)> {
    let mut ts: Vec<usize> = e.cells.iter().map(|c| c.t).collect();
    ts.sort_unstable();
    ts.dedup();
    ts.into_iter()
        .filter_map(|t| {
            let mut vals: Vec<f64> = e
                .cells
                .iter()
                .filter(|c| c.t == t)
                .filter_map(|c| c.run().and_then(|r| r.mean_grad))
                .filter(|v| *v > 0.0)
                .collect();
            if vals.is_empty() {
                return None;
            }
            vals.sort_by(f64::total_cmp);
            let g = (vals.iter().map(|v| v.ln()).sum::<f64>() / vals.len() as f64).exp();
            Some((t, g, vals.len()))
        })
        .collect()
}

pub fn build_report(inputs: &ReportInputs) -> ReportBundle {
    let mut md = String::from("# Experiment report\n\n");
    let mut rates = String::from("experiment,optimizer,native_norm,p,noiseless,exponent_hat,stderr,predicted,points\n");
    let mut curves = String::from("experiment,optimizer,native_norm,T,geo_mean_grad,seeds\n");

    md.push_str("## Rate fits\n\n");
    md.push_str(
        "| experiment | optimizer | norm | p | fitted exponent | stderr | predicted | runs | aborted | note |\n",
    );
    md.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for e in &inputs.experiments {
        let (exp, se) = e.rate_fit.as_ref().map_or(("-".to_string(), "-".to_string()), |f| {
            (format!("{:.4}", f.exponent_hat), format!("{:.4}", f.stderr))
        });
        let note = if e.noiseless {
            "noiseless: outside the stochastic model".to_string()
        } else {
            e.rate_fit_error.clone().unwrap_or_default()
        };
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {exp} | {se} | {:.4} | {} | {} | {note} |",
            label(e),
            e.optimizer.name(),
            e.native_norm,
            e.config.noise.p,
            e.predicted_exponent,
            e.cells.len(),
            e.aborted
        );
        if let Some(f) = &e.rate_fit {
            let _ = writeln!(
                rates,
                "{},{},{},{},{},{},{},{},{}",
                label(e),
                e.optimizer.name(),
                e.native_norm,
                e.config.noise.p,
                e.noiseless,
                f.exponent_hat,
                f.stderr,
                e.predicted_exponent,
                f.points.len()
            );
        }
        for (t, g, n) in curve(e) {
            let _ = writeln!(
                curves,
                "{},{},{},{t},{g},{n}",
                label(e),
                e.optimizer.name(),
                e.native_norm
            );
        }
    }

    md.push_str("\n## Weight-decay stability\n\n");
    md.push_str("Ratios are the worst over runs of the observed maximum to that run's bound.\n\n");
    md.push_str("| experiment | optimizer | checked runs | violations | max norm / bound | max step / bound |\n");
    md.push_str("|---|---|---|---|---|---|\n");
    for e in &inputs.experiments {
        let checks: Vec<_> = e
            .cells
            .iter()
            .filter_map(|c| c.run().and_then(|r| r.stability.as_ref()))
            .collect();
        if checks.is_empty() {
            continue;
        }
        let norm_ratio = checks.iter().map(|s| s.max_norm / s.norm_bound).fold(0.0, f64::max);
        let step_ratio = checks.iter().map(|s| s.max_step / s.step_bound).fold(0.0, f64::max);
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} |",
            label(e),
            e.optimizer.name(),
            checks.len(),
            e.stability_violations,
            sci(norm_ratio),
            sci(step_ratio)
        );
    }

    md.push_str("\n## Sign versus normalized complexity ratios\n\n");
    md.push_str("R < 1 favours the sign-based method.\n\n");
    md.push_str("| experiment | optimizer | R1 | R2 | R | min gradient density |\n");
    md.push_str("|---|---|---|---|---|---|\n");
    for e in &inputs.experiments {
        if let Some(r) = &e.ratios {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} |",
                label(e),
                e.optimizer.name(),
                sci(r.r1),
                sci(r.r2),
                sci(r.r),
                sci(r.traj_density)
            );
        }
    }

    md.push_str("\n## Concentration and regret checks\n\n");
    md.push_str("| check | lhs | rhs | margin | exact | status |\n");
    md.push_str("|---|---|---|---|---|---|\n");
    for v in &inputs.verifications {
        if let Some(c) = &v.concentration {
            for case in &c.cases {
                let r = &case.report;
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} | {} | {} |",
                    case.name,
                    sci(r.lhs_mean),
                    sci(r.rhs_mean),
                    sci(r.margin),
                    r.exact,
                    if r.violated { "FAIL" } else { "pass" }
                );
            }
        }
        if let Some(r) = &v.regret {
            let _ = writeln!(
                md,
                "| adagrad regret ({} sequences) | - | - | {} | true | {} |",
                r.sequences,
                opt_sci(r.min_slack.is_finite().then_some(r.min_slack)),
                if r.passed() { "pass" } else { "FAIL" }
            );
        }
        if let Some(l) = &v.lemmas {
            for c in &l.checks {
                let _ = writeln!(
                    md,
                    "| {} ({} cases) | - | - | - | true | {} |",
                    c.name,
                    c.cases,
                    if c.violations == 0 { "pass" } else { "FAIL" }
                );
            }
        }
    }

    md.push_str("\n## Reference complexities\n\n");
    md.push_str(REFERENCE);

    ReportBundle {
        markdown: md,
        rates_csv: rates,
        curves_csv: curves,
    }
}

/// Writes `report.md`, `rates.csv` and `curves.csv` into `dir`.
pub fn write_report(bundle: &ReportBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.md"), &bundle.markdown)?;
    std::fs::write(dir.join("rates.csv"), &bundle.rates_csv)?;
    std::fs::write(dir.join("curves.csv"), &bundle.curves_csv)?;
    Ok(())
}
