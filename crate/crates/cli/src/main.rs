use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use signopt::concentration::{deterministic_lemma_suite, standard_suite, verify_regret, Inequality};
use signopt::harness::{
    build_report, load_inputs, parse_config, parse_json, run_experiment, run_noise_check, write_report,
    NoiseCheckConfig, VerificationRecord,
};
use signopt::noise::{estimate_tail_index, estimate_tail_index_auto, NoiseFamily, RngStream};
use signopt::theory::{
    lion_params, muon_params, muonlight_params, predicted_rate_exponent, signsgd_params, TheoryInputs,
};

/// Exit status when a strict assertion (stability, regret, lemma) fails.
const STRICT_FAILURE: u8 = 1;
/// Exit status for usage, config and I/O errors.
const ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "signopt", version, about = "Sign-based optimizers under heavy-tailed noise")]
struct Cli {
    /// JSON input for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; for run and sweep it replaces the seed list of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every (T, seed) cell of an experiment config.
    Run,
    /// Like `run`, but fail unless the convergence rate can be fitted.
    Sweep,
    /// Print theory hyperparameters for a TheoryInputs JSON.
    Params,
    /// Fit the noise-growth assumption on frozen points of a problem.
    ValidateNoise,
    /// Check concentration inequalities, the regret bound and the lemmas.
    VerifyConcentration {
        #[arg(long, value_enum, default_value = "all")]
        lemma: Check,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Estimate the tail index of a sample file or a generated sample.
    TailIndex {
        /// Newline-delimited numbers.
        #[arg(long, conflicts_with = "family")]
        input: Option<PathBuf>,
        /// Noise family as JSON, e.g. '{"kind":"alpha_stable","alpha":1.5}'.
        #[arg(long)]
        family: Option<String>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Block count; ⌊√n⌋ when omitted.
        #[arg(long)]
        blocks: Option<usize>,
    },
    /// Aggregate run and verification directories into a report.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Check {
    L1,
    Nuclear,
    Vbe,
    Regret,
    Lemmas,
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(STRICT_FAILURE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(ERROR)
        }
    }
}

fn config_bytes(cli: &Cli) -> Result<Vec<u8>> {
    let path = cli
        .config
        .as_ref()
        .context("--config is required for this subcommand")?;
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

/// Returns whether every strict assertion held.
fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.cmd {
        Cmd::Run => run(cli, false),
        Cmd::Sweep => run(cli, true),
        Cmd::Params => {
            let inputs: TheoryInputs = parse_json(&config_bytes(cli)?)?;
            print_json(&params(&inputs))?;
            Ok(true)
        }
        Cmd::ValidateNoise => {
            let cfg: NoiseCheckConfig = parse_json(&config_bytes(cli)?)?;
            let report = run_noise_check(&cfg, cli.seed.unwrap_or(0))?;
            fs::create_dir_all(&cli.out)?;
            write(
                &cli.out.join("noise_fit.json"),
                &(serde_json::to_string_pretty(&report)? + "\n"),
            )?;
            write(&cli.out.join("noise_points.csv"), &report.points_csv())?;
            println!(
                "p {:.4}  sigma0 {:.6e}  sigma1 {:.6e}  r2 {:.4}  violations {:.1}%",
                report.p_hat,
                report.sigma0_hat(),
                report.sigma1_hat(),
                report.r_squared,
                100.0 * report.violation_fraction
            );
            Ok(true)
        }
        Cmd::VerifyConcentration { lemma, trials } => verify(cli, *lemma, *trials),
        Cmd::TailIndex {
            input,
            family,
            samples,
            blocks,
        } => {
            let data = match (input, family) {
                (Some(path), _) => read_samples(path)?,
                (None, Some(text)) => {
                    let fam: NoiseFamily = parse_json(text.as_bytes())?;
                    fam.validate()?;
                    let mut rng = RngStream::new(cli.seed.unwrap_or(0), 0).rng();
                    (0..*samples).map(|_| fam.sample_raw(&mut rng)).collect()
                }
                (None, None) => bail!("give --input FILE or --family JSON"),
            };
            let alpha = match blocks {
                Some(b) => estimate_tail_index(&data, *b)?,
                None => estimate_tail_index_auto(&data)?,
            };
            println!("{alpha:.6}");
            Ok(true)
        }
        Cmd::Report { dirs } => {
            let inputs = load_inputs(dirs)?;
            let bundle = build_report(&inputs);
            write_report(&bundle, &cli.out)?;
            println!("wrote {}", cli.out.join("report.md").display());
            Ok(inputs.experiments.iter().all(|e| e.strict_ok()) && inputs.verifications.iter().all(|v| v.strict_ok()))
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: &Cli, need_fit: bool) -> Result<bool> {
    let mut cfg = parse_config(&config_bytes(cli)?)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    let output = run_experiment(&cfg, cli.workers)?;
    output.write(&cli.out)?;
    let s = &output.summary;
    match (&s.rate_fit, &s.rate_fit_error) {
        (Some(f), _) => println!(
            "{}: exponent {:.4} ± {:.4} (predicted {:.4}), {} aborted",
            s.optimizer.name(),
            f.exponent_hat,
            f.stderr,
            s.predicted_exponent,
            s.aborted
        ),
        (None, err) if need_fit => bail!("rate fit failed: {}", err.as_deref().unwrap_or("no observations")),
        (None, _) => println!("{}: {} cells, {} aborted", s.optimizer.name(), s.cells.len(), s.aborted),
    }
    if s.stability_violations > 0 {
        eprintln!("stability violated {} times", s.stability_violations);
    }
    Ok(s.strict_ok())
}

fn params(inputs: &TheoryInputs) -> Value {
    fn or_err<T: serde::Serialize>(r: signopt::Result<T>) -> Value {
        match r {
            Ok(v) => serde_json::to_value(v).expect("params serialize"),
            Err(e) => json!({ "error": e.to_string() }),
        }
    }
    json!({
        "inputs": inputs,
        "predicted_exponent": predicted_rate_exponent(inputs.p),
        "signsgd": or_err(signsgd_params(inputs)),
        "lion": or_err(lion_params(inputs)),
        "muon": or_err(muon_params(inputs)),
        "muonlight": or_err(muonlight_params(inputs)),
    })
}

fn verify(cli: &Cli, check: Check, trials: usize) -> Result<bool> {
    let seed = cli.seed.unwrap_or(0);
    let which: Vec<Inequality> = match check {
        Check::L1 => vec![Inequality::L1],
        Check::Nuclear => vec![Inequality::Nuclear],
        Check::Vbe => vec![Inequality::Vbe],
        Check::All => vec![Inequality::L1, Inequality::Nuclear, Inequality::Vbe],
        Check::Regret | Check::Lemmas => vec![],
    };
    let record = VerificationRecord {
        seed,
        trials,
        concentration: if which.is_empty() {
            None
        } else {
            Some(standard_suite(&which, trials, seed)?)
        },
        regret: matches!(check, Check::Regret | Check::All)
            .then(|| verify_regret(seed, trials, 16, 256, 50))
            .transpose()?,
        lemmas: matches!(check, Check::Lemmas | Check::All)
            .then(|| deterministic_lemma_suite(seed, trials))
            .transpose()?,
    };
    fs::create_dir_all(&cli.out)?;
    write(
        &cli.out.join("verification.json"),
        &(serde_json::to_string_pretty(&record)? + "\n"),
    )?;
    if let Some(c) = &record.concentration {
        for case in &c.cases {
            println!("{} {}", if case.report.violated { "FAIL" } else { "ok  " }, case.name);
        }
    }
    if let Some(r) = &record.regret {
        println!(
            "{} regret: {} sequences, {} violations",
            if r.passed() { "ok  " } else { "FAIL" },
            r.sequences,
            r.violations
        );
    }
    if let Some(l) = &record.lemmas {
        for c in &l.checks {
            println!(
                "{} {} ({} cases)",
                if c.violations == 0 { "ok  " } else { "FAIL" },
                c.name,
                c.cases
            );
        }
    }
    Ok(record.strict_ok())
}

fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .with_context(|| format!("{}:{}: not a number: {l:?}", path.display(), i + 1))
        })
        .collect()
}
