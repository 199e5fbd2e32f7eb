//! Command-line surface for the registration toolkit.
//!
//! Exit codes: 0 success, 1 usage error, 2 input/parse error, 3 numerical
//! degeneracy. Standard output carries data; diagnostics go to stderr.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use cosm_icp::bench::{
    aggregate, export_csv, export_json, run_plan, AggregateSummary, BenchError, ExperimentPlan,
};
use cosm_icp::geometry::EulerPose;
use cosm_icp::pcd::{read_pcd_file, write_pcd_file, PcdError};
use cosm_icp::preprocess::{
    inject_outliers, voxel_grid_filter, OutlierSpec, PreprocessError, SampleMode, TransformSampler,
};
use cosm_icp::registration::{register, Method, RegistrationConfig, RegistrationError};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "cosm-icp",
    version,
    about = "Rigid point-cloud registration with correntropy similarity weighting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Voxel-grid downsample a PCD file
    Downsample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Voxel edge length
        #[arg(long, allow_negative_numbers = true)]
        leaf: f64,
    },
    /// Sample seeded random rigid poses (prints "roll pitch yaw tx ty tz")
    GenTransform {
        #[arg(long)]
        seed: u64,
        /// uniform | gaussian
        #[arg(long, default_value = "gaussian")]
        mode: String,
        #[arg(long)]
        angle_bound: Option<f64>,
        #[arg(long)]
        trans_bound: Option<f64>,
        #[arg(long)]
        angle_std: Option<f64>,
        #[arg(long)]
        trans_std: Option<f64>,
        /// Number of poses to draw from the stream
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Apply a rigid transform to a cloud (prints the 4x4 matrix used)
    Transform {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pose: PoseArgs,
    },
    /// Perturb a random fraction of points with Gaussian shot noise
    Inject {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        fraction: f64,
        #[arg(long)]
        seed: u64,
        /// Per-component offset std; defaults to half the bounding-box diagonal
        #[arg(long)]
        offset_std: Option<f64>,
    },
    /// Register a source cloud onto a target cloud
    Register {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// cosm | svd
        #[arg(long, default_value = "cosm")]
        method: String,
        #[arg(long, default_value_t = 100.0)]
        sigma: f64,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        /// Absolute RMSE stopping tolerance (disabled when omitted)
        #[arg(long)]
        rmse_tol: Option<f64>,
        /// Relative RMSE-change stopping tolerance (disabled when omitted)
        #[arg(long)]
        rmse_rel_tol: Option<f64>,
        /// Write the full report (traces included) as JSON
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run a benchmark plan and export records plus a summary
    Bench {
        /// Plan file (JSON or key=value); inline flags are ignored except
        /// --out, --format, --summary-out and --no-timing
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Comma-separated list: cosm,svd
        #[arg(long, default_value = "cosm,svd")]
        methods: String,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        /// Comma-separated kernel bandwidths
        #[arg(long, default_value = "100")]
        sigma: String,
        /// Comma-separated contamination fractions (0 = clean)
        #[arg(long, default_value = "0")]
        outlier_fraction: String,
        #[arg(long)]
        offset_std: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// uniform | gaussian
        #[arg(long, default_value = "gaussian")]
        mode: String,
        #[arg(long)]
        angle_bound: Option<f64>,
        #[arg(long)]
        trans_bound: Option<f64>,
        #[arg(long)]
        angle_std: Option<f64>,
        #[arg(long)]
        trans_std: Option<f64>,
        #[arg(long)]
        voxel_leaf: Option<f64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Records output path
        #[arg(long)]
        out: PathBuf,
        /// csv | json
        #[arg(long, default_value = "csv")]
        format: String,
        /// Write the aggregate summary as JSON
        #[arg(long)]
        summary_out: Option<PathBuf>,
        /// Zero the wall-time column so repeated executions are byte-identical
        #[arg(long, default_value_t = false)]
        no_timing: bool,
    },
    /// Print point count and bounding box of a PCD file
    Info {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Args)]
struct PoseArgs {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    roll: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pitch: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    yaw: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    tx: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    ty: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    tz: f64,
}

enum CliError {
    Usage(String),
    Input(String),
    Degenerate(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Degenerate(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Degenerate(m) => m,
        }
    }
}

impl From<PcdError> for CliError {
    fn from(e: PcdError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<RegistrationError> for CliError {
    fn from(e: RegistrationError) -> Self {
        match e {
            RegistrationError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            RegistrationError::EmptyCloud => CliError::Input(e.to_string()),
            _ => CliError::Degenerate(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::InputUnreadable(_) | BenchError::EmptyInput => {
                CliError::Input(e.to_string())
            }
            BenchError::InvalidPlan(_) | BenchError::MalformedCsv { .. } => {
                CliError::Usage(e.to_string())
            }
            BenchError::Registration(inner) => inner.into(),
        }
    }
}

fn main() -> ExitCode {
    // Die quietly when a downstream consumer like `head` closes stdout.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if e.kind() == ErrorKind::DisplayHelp || e.kind() == ErrorKind::DisplayVersion =>
        {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Downsample { input, out, leaf } => downsample(&input, &out, leaf),
        Command::GenTransform {
            seed,
            mode,
            angle_bound,
            trans_bound,
            angle_std,
            trans_std,
            count,
        } => {
            let mode = parse_mode(&mode, angle_bound, trans_bound, angle_std, trans_std)?;
            let mut sampler = TransformSampler::new(mode, seed);
            for _ in 0..count {
                let p = sampler.sample_pose();
                println!(
                    "{:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
                    p.roll, p.pitch, p.yaw, p.tx, p.ty, p.tz
                );
            }
            Ok(())
        }
        Command::Transform { input, out, pose } => {
            let (_, cloud) = read_pcd_file(&input)?;
            require_points(cloud.is_empty())?;
            let transform = EulerPose::new(
                pose.roll, pose.pitch, pose.yaw, pose.tx, pose.ty, pose.tz,
            )
            .to_transform();
            write_pcd_file(&out, &transform.apply(&cloud))?;
            print_matrix(&transform.to_homogeneous());
            Ok(())
        }
        Command::Inject {
            input,
            out,
            fraction,
            seed,
            offset_std,
        } => {
            let (_, cloud) = read_pcd_file(&input)?;
            require_points(cloud.is_empty())?;
            let spec = OutlierSpec {
                fraction,
                offset_std,
                seed,
            };
            let (contaminated, indices) = inject_outliers(&cloud, &spec)?;
            write_pcd_file(&out, &contaminated)?;
            println!("perturbed {} of {}", indices.len(), cloud.len());
            Ok(())
        }
        Command::Register {
            source,
            target,
            method,
            sigma,
            iters,
            rmse_tol,
            rmse_rel_tol,
            json,
        } => register_command(
            &source,
            &target,
            &method,
            sigma,
            iters,
            rmse_tol,
            rmse_rel_tol,
            json.as_deref(),
        ),
        Command::Bench {
            plan,
            input,
            methods,
            runs,
            iters,
            sigma,
            outlier_fraction,
            offset_std,
            seed,
            mode,
            angle_bound,
            trans_bound,
            angle_std,
            trans_std,
            voxel_leaf,
            threads,
            out,
            format,
            summary_out,
            no_timing,
        } => {
            let plan = match plan {
                Some(path) => load_plan(&path)?,
                None => {
                    let input = input.ok_or_else(|| {
                        CliError::Usage("either --plan or --in is required".into())
                    })?;
                    let mut plan = ExperimentPlan::new(input);
                    plan.methods = parse_methods(&methods)?;
                    plan.runs = runs;
                    plan.iterations = iters;
                    plan.sigmas = parse_f64_list(&sigma, "sigma")?;
                    plan.outlier_fractions = parse_f64_list(&outlier_fraction, "outlier-fraction")?;
                    plan.outlier_offset_std = offset_std;
                    plan.master_seed = seed;
                    plan.sampler = parse_mode(&mode, angle_bound, trans_bound, angle_std, trans_std)?;
                    plan.voxel_leaf = voxel_leaf;
                    plan.threads = threads;
                    plan
                }
            };
            bench_command(&plan, &out, &format, summary_out.as_deref(), no_timing)
        }
        Command::Info { input } => {
            let (header, cloud) = read_pcd_file(&input)?;
            println!("points {}", cloud.len());
            println!("fields {}", header.fields.join(" "));
            if let Some((min, max)) = cloud.bounds() {
                println!("min {:.9e} {:.9e} {:.9e}", min.x, min.y, min.z);
                println!("max {:.9e} {:.9e} {:.9e}", max.x, max.y, max.z);
                println!("diagonal {:.9e}", cloud.bounding_diagonal());
            }
            Ok(())
        }
    }
}

fn downsample(input: &Path, out: &Path, leaf: f64) -> Result<(), CliError> {
    if leaf <= 0.0 || leaf.is_nan() {
        return Err(CliError::Usage(format!(
            "--leaf must be positive, got {leaf}"
        )));
    }
    let (_, cloud) = read_pcd_file(input)?;
    require_points(cloud.is_empty())?;
    let filtered = voxel_grid_filter(&cloud, leaf)?;
    write_pcd_file(out, &filtered)?;
    println!("{} -> {}", cloud.len(), filtered.len());
    Ok(())
}

#[derive(Serialize)]
struct RegisterJson {
    matrix: [[f64; 4]; 4],
    final_rmse: f64,
    iterations: usize,
    converged: bool,
    rmse_trace: Vec<f64>,
    rank_trace: Vec<usize>,
    degenerate_iterations: Vec<usize>,
}

#[allow(clippy::too_many_arguments)]
fn register_command(
    source: &Path,
    target: &Path,
    method: &str,
    sigma: f64,
    iters: usize,
    rmse_tol: Option<f64>,
    rmse_rel_tol: Option<f64>,
    json: Option<&Path>,
) -> Result<(), CliError> {
    let method: Method = method.parse().map_err(CliError::Usage)?;
    let (_, source_cloud) = read_pcd_file(source)?;
    let (_, target_cloud) = read_pcd_file(target)?;
    require_points(source_cloud.is_empty() || target_cloud.is_empty())?;
    let config = RegistrationConfig {
        sigma,
        max_iterations: iters,
        rmse_abs_tol: rmse_tol.unwrap_or(0.0),
        rmse_rel_tol: rmse_rel_tol.unwrap_or(0.0),
        method,
    };
    let report = register(&source_cloud, &target_cloud, &config)?;
    let m = report.final_transform.to_homogeneous();
    print_matrix(&m);
    println!("rmse {:.16e}", report.final_rmse());
    if !report.degenerate_iterations.is_empty() {
        eprintln!(
            "warning: rank-deficient cross-covariance at iterations {:?}",
            report.degenerate_iterations
        );
    }
    if let Some(path) = json {
        let mut matrix = [[0.0; 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                matrix[r][c] = m[(r, c)];
            }
        }
        let payload = RegisterJson {
            matrix,
            final_rmse: report.final_rmse(),
            iterations: report.iterations,
            converged: report.converged,
            rmse_trace: report.rmse_trace.clone(),
            rank_trace: report.rank_trace.clone(),
            degenerate_iterations: report.degenerate_iterations.clone(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&payload).unwrap())
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn bench_command(
    plan: &ExperimentPlan,
    out: &Path,
    format: &str,
    summary_out: Option<&Path>,
    no_timing: bool,
) -> Result<(), CliError> {
    let records = run_plan(plan)?;
    let summary = aggregate(&records)?;
    let payload = match format {
        "csv" => export_csv(&records, !no_timing)?,
        "json" => export_json(&records, Some(&summary))?,
        other => {
            return Err(CliError::Usage(format!(
                "unknown format '{other}' (expected csv|json)"
            )))
        }
    };
    std::fs::write(out, payload)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", out.display())))?;
    if let Some(path) = summary_out {
        std::fs::write(path, serde_json::to_string_pretty(&summary).unwrap())
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    print!("{}", summary_table(&summary));
    Ok(())
}

fn summary_table(summary: &AggregateSummary) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<6} {:>12} {:>10} {:>6} {:>14} {:>14} {:>14} {:>14}",
        "method", "sigma", "outliers", "runs", "mean", "median", "p25", "p75"
    );
    for g in &summary.groups {
        let _ = writeln!(
            out,
            "{:<6} {:>12.4e} {:>10.3} {:>6} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}",
            g.method.label(),
            g.sigma,
            g.outlier_fraction,
            g.count,
            g.mean,
            g.median,
            g.p25,
            g.p75
        );
    }
    for w in &summary.cosm_wins {
        let _ = writeln!(
            out,
            "cosm beats {} at sigma={:.4e} outliers={:.3}: {}/{} runs ({:.1}%)",
            w.versus.label(),
            w.sigma,
            w.outlier_fraction,
            w.wins,
            w.total,
            100.0 * w.win_rate()
        );
    }
    out
}

fn print_matrix(m: &nalgebra::Matrix4<f64>) {
    for r in 0..4 {
        println!(
            "{:.16e} {:.16e} {:.16e} {:.16e}",
            m[(r, 0)],
            m[(r, 1)],
            m[(r, 2)],
            m[(r, 3)]
        );
    }
}

fn require_points(is_empty: bool) -> Result<(), CliError> {
    if is_empty {
        Err(CliError::Input("input cloud contains no points".into()))
    } else {
        Ok(())
    }
}

fn parse_mode(
    mode: &str,
    angle_bound: Option<f64>,
    trans_bound: Option<f64>,
    angle_std: Option<f64>,
    trans_std: Option<f64>,
) -> Result<SampleMode, CliError> {
    match mode {
        "uniform" => {
            let SampleMode::Uniform {
                angle_bound: da,
                trans_bound: dt,
            } = SampleMode::uniform_default()
            else {
                unreachable!()
            };
            Ok(SampleMode::Uniform {
                angle_bound: angle_bound.unwrap_or(da),
                trans_bound: trans_bound.unwrap_or(dt),
            })
        }
        "gaussian" => {
            let SampleMode::Gaussian {
                angle_std: da,
                trans_std: dt,
            } = SampleMode::gaussian_default()
            else {
                unreachable!()
            };
            Ok(SampleMode::Gaussian {
                angle_std: angle_std.unwrap_or(da),
                trans_std: trans_std.unwrap_or(dt),
            })
        }
        other => Err(CliError::Usage(format!(
            "unknown mode '{other}' (expected uniform|gaussian)"
        ))),
    }
}

fn parse_methods(text: &str) -> Result<Vec<Method>, CliError> {
    let methods: Result<Vec<Method>, String> =
        text.split(',').map(|t| t.trim().parse()).collect();
    let methods = methods.map_err(CliError::Usage)?;
    if methods.is_empty() {
        return Err(CliError::Usage("at least one method is required".into()));
    }
    Ok(methods)
}

fn parse_f64_list(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad --{what} value '{t}'")))
        })
        .collect()
}

/// Plans load from JSON (leading '{') or simple `key = value` lines.
fn load_plan(path: &Path) -> Result<ExperimentPlan, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read plan {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("bad JSON plan: {e}")));
    }
    let mut plan = ExperimentPlan::new("");
    let mut input_seen = false;
    let mut mode: Option<String> = None;
    let mut angle_bound = None;
    let mut trans_bound = None;
    let mut angle_std = None;
    let mut trans_std = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "plan line {}: expected 'key = value', got '{line}'",
                idx + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| CliError::Usage(format!("plan line {}: bad {what} '{value}'", idx + 1));
        match key {
            "input" => {
                plan.input = PathBuf::from(value);
                input_seen = true;
            }
            "methods" => plan.methods = parse_methods(value)?,
            "runs" => plan.runs = value.parse().map_err(|_| bad("runs"))?,
            "iterations" => plan.iterations = value.parse().map_err(|_| bad("iterations"))?,
            "sigmas" => plan.sigmas = parse_f64_list(value, "sigmas")?,
            "outlier_fractions" => {
                plan.outlier_fractions = parse_f64_list(value, "outlier_fractions")?
            }
            "offset_std" => {
                plan.outlier_offset_std = Some(value.parse().map_err(|_| bad("offset_std"))?)
            }
            "seed" => plan.master_seed = value.parse().map_err(|_| bad("seed"))?,
            "voxel_leaf" => plan.voxel_leaf = Some(value.parse().map_err(|_| bad("voxel_leaf"))?),
            "threads" => plan.threads = Some(value.parse().map_err(|_| bad("threads"))?),
            "mode" => mode = Some(value.to_string()),
            "angle_bound" => angle_bound = Some(value.parse().map_err(|_| bad("angle_bound"))?),
            "trans_bound" => trans_bound = Some(value.parse().map_err(|_| bad("trans_bound"))?),
            "angle_std" => angle_std = Some(value.parse().map_err(|_| bad("angle_std"))?),
            "trans_std" => trans_std = Some(value.parse().map_err(|_| bad("trans_std"))?),
            other => {
                return Err(CliError::Usage(format!(
                    "plan line {}: unknown key '{other}'",
                    idx + 1
                )))
            }
        }
    }
    if !input_seen {
        return Err(CliError::Usage("plan is missing 'input'".into()));
    }
    plan.sampler = parse_mode(
        mode.as_deref().unwrap_or("gaussian"),
        angle_bound,
        trans_bound,
        angle_std,
        trans_std,
    )?;
    Ok(plan)
}
