//! `qfi`: compute the quantum Fisher information of states described by JSON
//! files, compare the independent pathways, run the convex-roof ensemble
//! analysis, and drive the built-in Mach-Zehnder Fock-space demo.
//!
//! Exit codes: 0 success, 2 validation or parse error, 3 numerical error,
//! 4 pathway discrepancy beyond tolerance (`compare` only).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use qfi_core::engine::{qfi_sld, qfi_support, QfiReport};
use qfi_core::ensemble;
use qfi_core::family::{derivative_bundle, evaluate_derivative, DerivativeSpec, StateFamily};
use qfi_core::fock::MziDemo;
use qfi_core::hermitian::{
    spectral_decompose, DensityMatrix, HermitianMatrix, DEFAULT_SUPPORT_THRESHOLD,
};
use qfi_core::json::{
    ensemble_to_value, parse_input, report_to_value, to_string_17, ParsedInput,
};
use qfi_core::matrix_repr::{
    block_qfi, coefficient_matrices, qfi_matrix_form, transfer_matrix, BlockedState,
};
use qfi_core::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_DISCREPANCY: u8 = 4;

#[derive(Parser)]
#[command(
    name = "qfi",
    version,
    about = "Quantum Fisher information toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the QFI of a state family or (rho, drho) pair by one pathway.
    Compute(ComputeArgs),
    /// Run the sld, support and matrix pathways and report their agreement.
    Compare(CompareArgs),
    /// Convex-roof ensemble analysis of a unitary problem.
    Ensemble(EnsembleArgs),
    /// Mach-Zehnder demo: Fock state |n, 0> under the beam-splitter generator.
    DemoMzi(DemoArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Input JSON file.
    #[arg(long)]
    input: PathBuf,
    /// Parameter value at which the family is evaluated.
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// Central-difference step (finite-difference families only).
    #[arg(long)]
    step: Option<f64>,
    /// Support threshold; falls back to QFI_THRESHOLD, then 1e-12.
    #[arg(long)]
    threshold: Option<f64>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ComputeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Pathway to run (blocked inputs always use the block pathway).
    #[arg(long, value_enum, default_value_t = MethodArg::Support)]
    method: MethodArg,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Include wall-clock timings in the JSON output (breaks byte-for-byte
    /// reproducibility across runs).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct EnsembleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of random ensembles to sample.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Seed for the deterministic sampler.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ensemble size (defaults to the support dimension).
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct DemoArgs {
    /// Photon number of the Fock input |n, 0>.
    #[arg(long)]
    photons: usize,
    /// Per-mode Fock cutoff; must be at least photons + 1.
    #[arg(long)]
    truncation: usize,
    /// Compute in the full truncated two-mode space instead of the
    /// total-photon sector.
    #[arg(long)]
    full_space: bool,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MethodArg {
    Sld,
    Support,
    Matrix,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Compute(args) => cmd_compute(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Ensemble(args) => cmd_ensemble(args),
        Command::DemoMzi(args) => cmd_demo_mzi(args),
    };
    match result {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.exit)
        }
    }
}

struct Failure {
    exit: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            exit: EXIT_VALIDATION,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let exit = match &e {
            Error::EigensolverFailure { .. }
            | Error::DegenerateGap { .. }
            | Error::SupportDimensionChanged { .. }
            | Error::SingularDeterminant { .. }
            | Error::DegenerateWeight { .. }
            | Error::TruncationTooSmall { .. } => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        };
        Self {
            exit,
            message: e.to_string(),
        }
    }
}

fn resolve_threshold(flag: Option<f64>) -> Result<f64, Failure> {
    let value = match flag {
        Some(v) => v,
        None => match std::env::var("QFI_THRESHOLD") {
            Ok(raw) => raw.parse::<f64>().map_err(|_| {
                Failure::validation(format!("QFI_THRESHOLD is not a number: {raw:?}"))
            })?,
            Err(_) => DEFAULT_SUPPORT_THRESHOLD,
        },
    };
    if !(value > 0.0 && value < 1.0) {
        return Err(Failure::validation(format!(
            "support threshold must lie in (0, 1), got {value}"
        )));
    }
    Ok(value)
}

fn resolve_step(flag: Option<f64>) -> Result<DerivativeSpec, Failure> {
    match flag {
        None => Ok(DerivativeSpec::default()),
        Some(h) => {
            if !(h > 0.0 && h <= 0.1) {
                return Err(Failure::validation(format!(
                    "central-difference step must lie in (0, 0.1], got {h}"
                )));
            }
            Ok(DerivativeSpec::CentralDifference { step: h })
        }
    }
}

fn load_input(path: &Path) -> Result<ParsedInput, Failure> {
    let raw = std::fs::read_to_string(path).map_err(|e| {
        Failure::validation(format!("cannot read {}: {e}", path.display()))
    })?;
    let value: Value = serde_json::from_str(&raw).map_err(|e| {
        Failure::validation(format!("{} is not valid JSON: {e}", path.display()))
    })?;
    Ok(parse_input(&value)?)
}

fn emit(output: Option<&Path>, value: &Value) -> Result<(), Failure> {
    let text = to_string_17(value);
    match output {
        None => {
            println!("{text}");
            Ok(())
        }
        Some(path) => std::fs::write(path, format!("{text}\n")).map_err(|e| {
            Failure::validation(format!("cannot write {}: {e}", path.display()))
        }),
    }
}

/// One pathway evaluation on whatever the input file described.
fn run_pathway(
    input: &ParsedInput,
    method: MethodArg,
    theta: f64,
    spec: DerivativeSpec,
    threshold: f64,
) -> Result<QfiReport, Failure> {
    match input {
        ParsedInput::Blocked(state) => run_blocked(state, threshold),
        ParsedInput::Pair { rho, drho } => {
            let decomp = spectral_decompose(rho, threshold)?;
            match method {
                MethodArg::Sld => Ok(qfi_sld(&decomp, drho)?),
                MethodArg::Support | MethodArg::Matrix => {
                    let bundle = qfi_core::family::DerivativeBundle::from_perturbation(
                        decomp,
                        drho.clone(),
                    )?;
                    finish_bundle_pathway(method, &bundle)
                }
            }
        }
        ParsedInput::Family(family) => match method {
            MethodArg::Sld => {
                let rho = family.density_at(theta)?;
                let decomp = spectral_decompose(&rho, threshold)?;
                let sld_spec = match family {
                    StateFamily::Unitary { .. } | StateFamily::Analytic { .. } => {
                        DerivativeSpec::Exact
                    }
                    _ => spec,
                };
                let drho = evaluate_derivative(family, theta, sld_spec)?;
                Ok(qfi_sld(&decomp, &drho)?)
            }
            MethodArg::Support | MethodArg::Matrix => {
                let family_spec = match family {
                    StateFamily::Unitary { .. } | StateFamily::Analytic { .. } => {
                        DerivativeSpec::Exact
                    }
                    _ => spec,
                };
                let bundle = derivative_bundle(family, theta, family_spec, threshold)?;
                finish_bundle_pathway(method, &bundle)
            }
        },
    }
}

fn finish_bundle_pathway(
    method: MethodArg,
    bundle: &qfi_core::family::DerivativeBundle,
) -> Result<QfiReport, Failure> {
    match method {
        MethodArg::Support => Ok(qfi_support(bundle)?),
        MethodArg::Matrix => {
            let transfer = transfer_matrix(bundle)?;
            let coeffs = coefficient_matrices(bundle.decomp());
            Ok(qfi_matrix_form(&coeffs, &transfer, &bundle.dsqrt_p())?)
        }
        MethodArg::Sld => unreachable!("sld never reaches the bundle pathway"),
    }
}

fn run_blocked(state: &BlockedState, threshold: f64) -> Result<QfiReport, Failure> {
    Ok(block_qfi(state, threshold)?.report)
}

fn cmd_compute(args: ComputeArgs) -> Result<ExitCode, Failure> {
    let threshold = resolve_threshold(args.common.threshold)?;
    let spec = resolve_step(args.common.step)?;
    let input = load_input(&args.common.input)?;
    let report = run_pathway(&input, args.method, args.common.theta, spec, threshold)?;
    emit(args.common.output.as_deref(), &report_to_value(&report))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode, Failure> {
    let threshold = resolve_threshold(args.common.threshold)?;
    let spec = resolve_step(args.common.step)?;
    let input = load_input(&args.common.input)?;
    if matches!(input, ParsedInput::Blocked(_)) {
        return Err(Failure::validation(
            "compare expects a state family or a (rho, drho) pair, not a blocked state",
        ));
    }

    let mut reports = Vec::new();
    let mut timings_ns = Vec::new();
    for method in [MethodArg::Sld, MethodArg::Support, MethodArg::Matrix] {
        let t0 = Instant::now();
        let report = run_pathway(&input, method, args.common.theta, spec, threshold)?;
        timings_ns.push(t0.elapsed().as_nanos() as u64);
        reports.push(report);
    }

    let fs: Vec<f64> = reports.iter().map(|r| r.f).collect();
    let mut max_discrepancy = 0.0f64;
    for i in 0..fs.len() {
        for j in (i + 1)..fs.len() {
            max_discrepancy = max_discrepancy.max((fs[i] - fs[j]).abs());
        }
    }
    let tolerance = 1e-8 * fs[0].abs().max(1.0);
    let within = max_discrepancy <= tolerance;

    let mut out = json!({
        "reports": {
            "sld": report_to_value(&reports[0]),
            "support": report_to_value(&reports[1]),
            "matrix_repr": report_to_value(&reports[2]),
        },
        "max_discrepancy": max_discrepancy,
        "tolerance": tolerance,
        "within_tolerance": within,
    });
    if args.timing {
        out["timing_ns"] = json!({
            "sld": timings_ns[0],
            "support": timings_ns[1],
            "matrix_repr": timings_ns[2],
        });
    } else {
        eprintln!(
            "timing: sld {:?}, support {:?}, matrix {:?}",
            std::time::Duration::from_nanos(timings_ns[0]),
            std::time::Duration::from_nanos(timings_ns[1]),
            std::time::Duration::from_nanos(timings_ns[2]),
        );
    }
    emit(args.common.output.as_deref(), &out)?;
    Ok(if within {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_DISCREPANCY)
    })
}

fn cmd_ensemble(args: EnsembleArgs) -> Result<ExitCode, Failure> {
    let threshold = resolve_threshold(args.common.threshold)?;
    let input = load_input(&args.common.input)?;
    let (rho0, generator): (DensityMatrix, HermitianMatrix) = match &input {
        ParsedInput::Family(family) => {
            let (rho0, generator) = ensemble::require_unitary(family)?;
            let rho_theta = if args.common.theta == 0.0 {
                rho0.clone()
            } else {
                family.density_at(args.common.theta)?
            };
            (rho_theta, generator.clone())
        }
        _ => {
            return Err(Failure::from(Error::UnsupportedParametrization {
                kind: "non-unitary input",
            }))
        }
    };
    let decomp = spectral_decompose(&rho0, threshold)?;
    let size = args.size.unwrap_or(decomp.support_dim());
    let analysis = ensemble::analyze_unitary(
        &decomp,
        &generator,
        1e-10,
        Some((args.seed, args.samples, size)),
    )?;

    let witness = analysis
        .optimality
        .witness
        .as_ref()
        .map(|w| json!({"i": w.i, "j": w.j, "magnitude": w.magnitude}))
        .unwrap_or(Value::Null);
    let out = json!({
        "qfi": report_to_value(&analysis.qfi),
        "eigen_ensemble_optimal": analysis.optimality.optimal,
        "witness": witness,
        "y_spectrum": analysis.y_spectrum,
        "optimal_ensemble": ensemble_to_value(&analysis.optimal),
        "optimal_ensemble_average_variance": analysis.optimal_average_variance,
        "eigen_ensemble_average_variance": analysis.eigen_average_variance,
        "samples": analysis.samples.as_ref().map(|s| json!({
            "count": s.count,
            "seed": s.seed,
            "size": s.size,
            "min": s.min,
            "mean": s.mean,
            "max": s.max,
        })).unwrap_or(Value::Null),
        "diagnostics": analysis.diagnostics,
    });
    emit(args.common.output.as_deref(), &out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_demo_mzi(args: DemoArgs) -> Result<ExitCode, Failure> {
    let threshold = resolve_threshold(args.threshold)?;
    let outcome = MziDemo {
        photons: args.photons,
        truncation: args.truncation,
        full_space: args.full_space,
        threshold,
    }
    .run()?;
    let out = serde_json::to_value(&outcome)
        .map_err(|e| Failure::validation(format!("serialization failed: {e}")))?;
    emit(args.output.as_deref(), &out)?;
    Ok(ExitCode::SUCCESS)
}
