//! Batch front end: data ingestion, simulation, bounds, point estimation,
//! moment-system estimation, assumption verification and the LP cross-check.
//!
//! Exit codes: 0 success (warnings included), 2 input error,
//! 3 identification failure, 4 internal invariant breach.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use misiv::dgp::PRNG_ALGORITHM;
use misiv::gmm::estimate_cell;
use misiv::moments::cell_data;
use misiv::oracle::{bruteforce_sharp_set, DiscreteInstance};
use misiv::partial_id::{
    alpha_rectangle, beta_interval_first_order, sharp_set_grid, AlphaGrid, CaseSplit,
    MeanEqualityTol, DEFAULT_FEASIBILITY_TOL, DEFAULT_GRID_STEP,
};
use misiv::point_id::{
    intercept_estimate, one_sided_point_estimate, theta_to_structural, Branch, OneSided,
};
use misiv_cli::config::{read_dgp_config, write_dgp_config, Mode};
use misiv_cli::fmt::sig9;
use misiv_cli::io::{export_sample, ingest, metadata_block, write_file};
use misiv_cli::CliError;

#[derive(Parser)]
#[command(
    name = "misiv",
    version,
    about = "Bounds and point estimates for a mis-classified binary endogenous regressor with a binary instrument"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Discrete,
    Continuous,
}

#[derive(Clone, Copy, ValueEnum)]
enum OneSidedArg {
    A0,
    A1,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic sample from a DGP config and write it as CSV.
    Simulate(SimulateArgs),
    /// First-order bounds and the sharp identified set of one cell.
    Bounds(BoundsArgs),
    /// Closed-form point identification of one cell.
    Estimate(EstimateArgs),
    /// Moment-system estimation with sandwich standard errors.
    Gmm(GmmArgs),
    /// Verify the assumption families of a DGP config analytically.
    Verify(VerifyArgs),
    /// Brute-force LP feasibility mask of a discretized DGP.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// DGP configuration file (key = value).
    #[arg(long)]
    dgp_config: PathBuf,
    /// Number of observations.
    #[arg(long)]
    n: usize,
    /// 64-bit seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    output: PathBuf,
    /// Override the config's discrete/continuous mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Print the effective configuration instead of simulating.
    #[arg(long, default_value_t = false)]
    emit_config: bool,
}

#[derive(Args)]
struct BoundsArgs {
    /// Input sample CSV.
    #[arg(long)]
    input: PathBuf,
    /// Covariate cell to analyze.
    #[arg(long, default_value_t = 0)]
    cell: u32,
    /// Grid step over the rates rectangle, in (0, 0.1].
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    grid_step: f64,
    /// Fixed threshold for the conditional-mean case split; default is twice
    /// the standard error of the difference.
    #[arg(long)]
    mean_tol: Option<f64>,
    /// Report output path; the mask goes to the same path with extension
    /// mask.csv.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Input sample CSV.
    #[arg(long)]
    input: PathBuf,
    /// Covariate cell to analyze.
    #[arg(long, default_value_t = 0)]
    cell: u32,
    /// Band around zero inside which theta1 is treated as zero; default is
    /// three standard errors.
    #[arg(long)]
    theta1_tol: Option<f64>,
    /// Impose one-sided mis-classification (a0: alpha0 = 0, a1: alpha1 = 0).
    #[arg(long, value_enum)]
    one_sided: Option<OneSidedArg>,
    /// Report output path (stdout only when absent).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GmmArgs {
    /// Input sample CSV.
    #[arg(long)]
    input: PathBuf,
    /// Covariate cell to analyze.
    #[arg(long, default_value_t = 0)]
    cell: u32,
    /// Report output path (stdout only when absent).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// DGP configuration file.
    #[arg(long)]
    dgp_config: PathBuf,
    /// Override the config's discrete/continuous mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Report output path (stdout only when absent).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// DGP configuration file.
    #[arg(long)]
    dgp_config: PathBuf,
    /// Grid step over the rates rectangle.
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    grid_step: f64,
    /// Support size for continuous-mode discretization (max 32).
    #[arg(long, default_value_t = 12)]
    support: usize,
    /// Override the config's discrete/continuous mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Mask output path.
    #[arg(long)]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Bounds(a) => run_bounds(a),
        Command::Estimate(a) => run_estimate(a),
        Command::Gmm(a) => run_gmm(a),
        Command::Verify(a) => run_verify(a),
        Command::Oracle(a) => run_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.message());
            ExitCode::from(e.code())
        }
    }
}

fn mode_override(mode: Option<ModeArg>) -> Option<Mode> {
    mode.map(|m| match m {
        ModeArg::Discrete => Mode::Discrete,
        ModeArg::Continuous => Mode::Continuous,
    })
}

fn emit(report: &str, output: Option<&Path>) -> Result<(), CliError> {
    print!("{report}");
    if let Some(path) = output {
        write_file(path, report)?;
    }
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let cfg = read_dgp_config(&args.dgp_config, mode_override(args.mode))?;
    if args.emit_config {
        print!("{}", write_dgp_config(&cfg.spec, cfg.mode));
        return Ok(());
    }
    let sample = cfg.spec.simulate(args.n, args.seed);
    let metadata = vec![
        ("version".into(), env!("CARGO_PKG_VERSION").into()),
        ("prng".into(), PRNG_ALGORITHM.into()),
        ("seed".into(), args.seed.to_string()),
        ("n".into(), args.n.to_string()),
        ("dgp-config".into(), args.dgp_config.display().to_string()),
        (
            "mode".into(),
            match cfg.mode {
                Mode::Discrete => "discrete".into(),
                Mode::Continuous => "continuous".into(),
            },
        ),
    ];
    write_file(&args.output, &export_sample(&sample, &metadata))?;
    println!(
        "wrote {} observations to {}",
        sample.len(),
        args.output.display()
    );
    Ok(())
}

fn run_bounds(args: BoundsArgs) -> Result<(), CliError> {
    if !(0.0 < args.grid_step && args.grid_step <= 0.1) {
        return Err(CliError::input(format!(
            "grid step must lie in (0, 0.1], got {}",
            args.grid_step
        )));
    }
    if args.mean_tol.is_some_and(|t| t <= 0.0) {
        return Err(CliError::input("mean-tol must be positive".into()));
    }
    let sample = ingest(&args.input)?;
    let cd = cell_data(&sample, args.cell).map_err(CliError::from_lib)?;
    let rect = alpha_rectangle(&cd.moments);
    let (lo, hi) = beta_interval_first_order(&cd.moments).map_err(CliError::from_lib)?;
    let mean_tol = match args.mean_tol {
        Some(t) => MeanEqualityTol::Fixed(t),
        None => MeanEqualityTol::TwoStandardErrors,
    };
    let set = sharp_set_grid(&cd, args.grid_step, mean_tol, DEFAULT_FEASIBILITY_TOL)
        .map_err(CliError::from_lib)?;

    let meta = [
        ("input".to_string(), args.input.display().to_string()),
        ("cell".to_string(), args.cell.to_string()),
        ("n".to_string(), cd.n.to_string()),
        ("grid-step".to_string(), sig9(args.grid_step)),
        (
            "mean-tol".to_string(),
            match args.mean_tol {
                Some(t) => sig9(t),
                None => "auto-2se".to_string(),
            },
        ),
        ("feasibility-tol".to_string(), sig9(DEFAULT_FEASIBILITY_TOL)),
    ];
    let mut report = metadata_block("misiv-bounds-v1", &meta);
    report.push_str(&format!("p0 = {}\n", sig9(cd.moments.p[0])));
    report.push_str(&format!("p1 = {}\n", sig9(cd.moments.p[1])));
    report.push_str(&format!("alpha0_max = {}\n", sig9(rect.alpha0_max)));
    report.push_str(&format!("alpha1_max = {}\n", sig9(rect.alpha1_max)));
    report.push_str(&format!(
        "rf_estimand = {}\n",
        sig9(cd.moments.reduced_form_estimand())
    ));
    report.push_str(&format!(
        "iv_estimand = {}\n",
        sig9(cd.moments.cov_yz / cd.moments.cov_tz)
    ));
    report.push_str(&format!("beta_first_order_lo = {}\n", sig9(lo)));
    report.push_str(&format!("beta_first_order_hi = {}\n", sig9(hi)));
    report.push_str(&format!(
        "case = {}\n",
        match set.case {
            CaseSplit::BothK => "both_k".to_string(),
            CaseSplit::OneK { k } => format!("one_k_{k}"),
            CaseSplit::NoneK => "none".to_string(),
        }
    ));
    report.push_str(&format!("beta_sharp_lo = {}\n", sig9(set.beta_interval.0)));
    report.push_str(&format!("beta_sharp_hi = {}\n", sig9(set.beta_interval.1)));
    report.push_str(&format!("mask_points = {}\n", set.grid.len()));
    report.push_str(&format!("mask_feasible = {}\n", set.feasible_count()));
    let mask_path = args.output.with_extension("mask.csv");
    report.push_str(&format!("mask_file = {}\n", mask_path.display()));

    let mut mask = metadata_block("misiv-mask-v1", &meta);
    mask.push_str("alpha0,alpha1,feasible\n");
    for (i, &a0) in set.grid.alpha0.iter().enumerate() {
        for (j, &a1) in set.grid.alpha1.iter().enumerate() {
            mask.push_str(&format!(
                "{},{},{}\n",
                sig9(a0),
                sig9(a1),
                u8::from(set.contains_index(i, j))
            ));
        }
    }
    write_file(&mask_path, &mask)?;
    emit(&report, Some(&args.output))
}

fn run_estimate(args: EstimateArgs) -> Result<(), CliError> {
    if args.theta1_tol.is_some_and(|t| t <= 0.0) {
        return Err(CliError::input("theta1-tol must be positive".into()));
    }
    let sample = ingest(&args.input)?;
    let cd = cell_data(&sample, args.cell).map_err(CliError::from_lib)?;
    let theta = misiv::point_id::solve_theta(&cd.moments).map_err(CliError::from_lib)?;
    let mut weak = false;
    let est = match args.one_sided {
        Some(side) => {
            let side = match side {
                OneSidedArg::A0 => OneSided::Alpha0Zero,
                OneSidedArg::A1 => OneSided::Alpha1Zero,
            };
            one_sided_point_estimate(theta.theta1, theta.theta2, side)
                .map_err(CliError::from_lib)?
        }
        None => match args.theta1_tol {
            Some(tol) => theta_to_structural(&theta, tol).map_err(CliError::from_lib)?,
            None => {
                // The moment-system pass supplies the standard errors behind
                // the default zero band (the weak-identification rule).
                let gmm = estimate_cell(&sample, args.cell).map_err(CliError::from_lib)?;
                weak = gmm.weak_identification;
                gmm.structural
            }
        },
    };
    let meta = [
        ("input".to_string(), args.input.display().to_string()),
        ("cell".to_string(), args.cell.to_string()),
        ("n".to_string(), cd.n.to_string()),
        (
            "theta1-tol".to_string(),
            match args.theta1_tol {
                Some(t) => sig9(t),
                None => "auto-3se".to_string(),
            },
        ),
    ];
    let mut report = metadata_block("misiv-estimate-v1", &meta);
    report.push_str(&format!("theta1 = {}\n", sig9(theta.theta1)));
    report.push_str(&format!("theta2 = {}\n", sig9(theta.theta2)));
    report.push_str(&format!("theta3 = {}\n", sig9(theta.theta3)));
    report.push_str(&format!(
        "branch = {}\n",
        match est.branch {
            Branch::Full => "full",
            Branch::BetaZero => "beta_zero",
            Branch::OneSidedAlpha0Zero => "one_sided_a0",
            Branch::OneSidedAlpha1Zero => "one_sided_a1",
        }
    ));
    report.push_str(&format!("beta = {}\n", sig9(est.beta)));
    match (est.alpha0, est.alpha1) {
        (Some(a0), Some(a1)) => {
            report.push_str(&format!("alpha0 = {}\n", sig9(a0)));
            report.push_str(&format!("alpha1 = {}\n", sig9(a1)));
            let m = misiv::moments::empirical_moments(&sample, args.cell)
                .map_err(CliError::from_lib)?;
            report.push_str(&format!(
                "c = {}\n",
                sig9(intercept_estimate(&m, est.beta, a0, a1))
            ));
        }
        _ => {
            report.push_str("alpha0 = unidentified\n");
            report.push_str("alpha1 = unidentified\n");
        }
    }
    if weak {
        report.push_str("warning = weak identification: theta1 within 3 standard errors of zero\n");
    }
    emit(&report, args.output.as_deref())
}

fn run_gmm(args: GmmArgs) -> Result<(), CliError> {
    let sample = ingest(&args.input)?;
    let r = estimate_cell(&sample, args.cell).map_err(CliError::from_lib)?;
    let meta = [
        ("input".to_string(), args.input.display().to_string()),
        ("cell".to_string(), args.cell.to_string()),
        ("n".to_string(), r.n.to_string()),
    ];
    let mut report = metadata_block("misiv-gmm-v1", &meta);
    for (i, (t, se)) in [
        (r.theta.theta1, r.se_theta[0]),
        (r.theta.theta2, r.se_theta[1]),
        (r.theta.theta3, r.se_theta[2]),
    ]
    .iter()
    .enumerate()
    {
        report.push_str(&format!("theta{} = {}\n", i + 1, sig9(*t)));
        report.push_str(&format!("se_theta{} = {}\n", i + 1, sig9(*se)));
    }
    for (i, k) in r.kappa.iter().enumerate() {
        report.push_str(&format!("kappa{} = {}\n", i + 1, sig9(*k)));
    }
    report.push_str(&format!(
        "weak_identification = {}\n",
        r.weak_identification
    ));
    report.push_str(&format!("beta = {}\n", sig9(r.structural.beta)));
    match (r.structural.alpha0, r.structural.alpha1, r.se_structural) {
        (Some(a0), Some(a1), Some(se)) => {
            report.push_str(&format!("alpha0 = {}\n", sig9(a0)));
            report.push_str(&format!("alpha1 = {}\n", sig9(a1)));
            report.push_str(&format!("se_beta = {}\n", sig9(se[0])));
            report.push_str(&format!("se_alpha0 = {}\n", sig9(se[1])));
            report.push_str(&format!("se_alpha1 = {}\n", sig9(se[2])));
        }
        _ => {
            report.push_str("alpha0 = unidentified\n");
            report.push_str("alpha1 = unidentified\n");
            report.push_str("se = unavailable\n");
        }
    }
    emit(&report, args.output.as_deref())
}

fn run_verify(args: VerifyArgs) -> Result<(), CliError> {
    let cfg = read_dgp_config(&args.dgp_config, mode_override(args.mode))?;
    let rep = cfg.spec.verify_assumptions();
    let meta = [
        (
            "dgp-config".to_string(),
            args.dgp_config.display().to_string(),
        ),
        (
            "mode".to_string(),
            match cfg.mode {
                Mode::Discrete => "discrete".to_string(),
                Mode::Continuous => "continuous".to_string(),
            },
        ),
    ];
    let mut report = metadata_block("misiv-verify-v1", &meta);
    report.push_str(&format!("mean_violation = {}\n", sig9(rep.mean_violation)));
    report.push_str(&format!(
        "second_moment_violation = {}\n",
        sig9(rep.second_violation)
    ));
    report.push_str(&format!(
        "third_moment_violation = {}\n",
        sig9(rep.third_violation)
    ));
    report.push_str(&format!("endogeneity = {}\n", sig9(rep.endogeneity)));
    report.push_str(&format!(
        "error_mean_constant_in_z = {}\n",
        rep.error_mean_constant_in_z
    ));
    let warn = rep.max_violation() > 1e-12;
    report.push_str(&format!("warning = {warn}\n"));
    if warn {
        eprintln!(
            "warning: assumption violations up to {}",
            sig9(rep.max_violation())
        );
    }
    emit(&report, args.output.as_deref())
}

fn run_oracle(args: OracleArgs) -> Result<(), CliError> {
    if args.support == 0 || args.support > misiv::oracle::MAX_SUPPORT {
        return Err(CliError::input(format!(
            "support must lie in 1..={}, got {}",
            misiv::oracle::MAX_SUPPORT,
            args.support
        )));
    }
    let cfg = read_dgp_config(&args.dgp_config, mode_override(args.mode))?;
    let inst = DiscreteInstance::from_spec(&cfg.spec, args.support).map_err(CliError::from_lib)?;
    let cd = inst.to_cell_data().map_err(CliError::from_lib)?;
    let rect = alpha_rectangle(&cd.moments);
    let grid = AlphaGrid::from_step(&rect, args.grid_step);
    let mask =
        bruteforce_sharp_set(&inst, &grid, DEFAULT_FEASIBILITY_TOL).map_err(CliError::from_lib)?;
    let feasible = mask.iter().filter(|&&(_, _, f)| f).count();
    let meta = [
        (
            "dgp-config".to_string(),
            args.dgp_config.display().to_string(),
        ),
        ("grid-step".to_string(), sig9(args.grid_step)),
        ("support".to_string(), inst.support.len().to_string()),
        ("feasibility-tol".to_string(), sig9(DEFAULT_FEASIBILITY_TOL)),
    ];
    let mut out = metadata_block("misiv-oracle-mask-v1", &meta);
    out.push_str("alpha0,alpha1,feasible\n");
    for &(a0, a1, f) in &mask {
        out.push_str(&format!("{},{},{}\n", sig9(a0), sig9(a1), u8::from(f)));
    }
    write_file(&args.output, &out)?;
    println!(
        "oracle mask: {feasible} of {} grid points feasible; wrote {}",
        mask.len(),
        args.output.display()
    );
    Ok(())
}
