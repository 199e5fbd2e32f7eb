//! Reproducible multi-run benchmark harness: seeded random poses, optional
//! contamination sweeps, per-run registration records and aggregate
//! statistics, exported as CSV or JSON.
//!
//! Every run draws its pose from an independent ChaCha stream keyed by
//! (master seed, run index), so results are identical no matter how runs are
//! scheduled across the worker pool.

use crate::geometry::{rotation_angle_between, EulerPose, PointCloud};
use crate::pcd;
use crate::preprocess::{
    inject_outliers_seeded, voxel_grid_filter, OutlierSpec, SampleMode, TransformSampler,
};
use crate::registration::{register, Method, RegistrationConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read input cloud: {0}")]
    InputUnreadable(String),
    #[error("no records to process")]
    EmptyInput,
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("line {line}: malformed CSV: {reason}")]
    MalformedCsv { line: usize, reason: String },
    #[error(transparent)]
    Registration(#[from] crate::registration::RegistrationError),
}

fn default_methods() -> Vec<Method> {
    vec![Method::Cosm, Method::StandardSvd]
}

fn default_runs() -> usize {
    100
}

fn default_sigmas() -> Vec<f64> {
    vec![100.0]
}

fn default_fractions() -> Vec<f64> {
    vec![0.0]
}

fn default_iterations() -> usize {
    50
}

/// Everything that defines a benchmark campaign. A plan plus its master
/// seed fully determines every emitted record.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Path of the PCD file used as the target cloud.
    pub input: PathBuf,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "SampleMode::gaussian_default")]
    pub sampler: SampleMode,
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    /// Contamination levels; 0.0 is the clean case.
    #[serde(default = "default_fractions")]
    pub outlier_fractions: Vec<f64>,
    /// Per-component outlier offset std; `None` uses half the bounding-box
    /// diagonal of the (possibly filtered) target.
    #[serde(default)]
    pub outlier_offset_std: Option<f64>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub voxel_leaf: Option<f64>,
    /// Worker threads; `None` uses the available parallelism.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentPlan {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        ExperimentPlan {
            input: input.into(),
            methods: default_methods(),
            runs: default_runs(),
            sampler: SampleMode::gaussian_default(),
            sigmas: default_sigmas(),
            outlier_fractions: default_fractions(),
            outlier_offset_std: None,
            iterations: default_iterations(),
            master_seed: 0,
            voxel_leaf: None,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let invalid = |msg: String| Err(BenchError::InvalidPlan(msg));
        if self.runs < 1 {
            return invalid("runs must be at least 1".into());
        }
        if self.methods.is_empty() {
            return invalid("methods must be nonempty".into());
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return invalid(format!("sigmas must be positive, got {:?}", self.sigmas));
        }
        if self.outlier_fractions.is_empty()
            || self
                .outlier_fractions
                .iter()
                .any(|f| !(0.0..=1.0).contains(f))
        {
            return invalid(format!(
                "outlier fractions must lie in [0, 1], got {:?}",
                self.outlier_fractions
            ));
        }
        if self.iterations < 1 {
            return invalid("iterations must be at least 1".into());
        }
        if self.sampler.validate().is_err() {
            return invalid("sampler bounds must be nonnegative and finite".into());
        }
        if let Some(s) = self.outlier_offset_std {
            if s < 0.0 || !s.is_finite() {
                return invalid(format!("outlier offset std must be nonnegative, got {s}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    /// At least one iteration had a rank-deficient cross-covariance.
    Degenerate,
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunStatus::Ok => "ok",
            RunStatus::Degenerate => "degenerate",
        })
    }
}

impl FromStr for RunStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ok" => Ok(RunStatus::Ok),
            "degenerate" => Ok(RunStatus::Degenerate),
            other => Err(format!("unknown status '{other}'")),
        }
    }
}

/// One (run, method, sigma, fraction) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub run: usize,
    pub method: Method,
    pub sigma: f64,
    pub outlier_fraction: f64,
    pub pose: EulerPose,
    pub final_rmse: f64,
    /// Full per-iteration trace; carried by JSON exports, not by CSV.
    #[serde(default)]
    pub rmse_trace: Vec<f64>,
    /// Geodesic angle to the ground-truth rotation, radians.
    pub rot_err_rad: f64,
    /// Norm of the translation error against ground truth.
    pub trans_err: f64,
    pub iters: usize,
    pub wall_ms: f64,
    pub status: RunStatus,
}

/// Field-wise equality with wall time (and nothing else) ignored.
pub fn records_equivalent(a: &BenchmarkRecord, b: &BenchmarkRecord) -> bool {
    a.run == b.run
        && a.method == b.method
        && a.sigma == b.sigma
        && a.outlier_fraction == b.outlier_fraction
        && a.pose == b.pose
        && a.final_rmse == b.final_rmse
        && a.rmse_trace == b.rmse_trace
        && a.rot_err_rad == b.rot_err_rad
        && a.trans_err == b.trans_err
        && a.iters == b.iters
        && a.status == b.status
}

/// Runs the whole plan: reads and optionally voxel-filters the input, then
/// executes `runs x methods x sigmas x fractions` registrations across a
/// worker pool. Records come back in canonical (run, method, sigma,
/// fraction) order regardless of scheduling.
pub fn run_plan(plan: &ExperimentPlan) -> Result<Vec<BenchmarkRecord>, BenchError> {
    let (_, cloud) =
        pcd::read_pcd_file(&plan.input).map_err(|e| BenchError::InputUnreadable(e.to_string()))?;
    run_plan_on_cloud(plan, &cloud)
}

/// [`run_plan`] with the target cloud already in memory.
pub fn run_plan_on_cloud(
    plan: &ExperimentPlan,
    base: &PointCloud,
) -> Result<Vec<BenchmarkRecord>, BenchError> {
    plan.validate()?;
    if base.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let target = match plan.voxel_leaf {
        Some(leaf) => voxel_grid_filter(base, leaf)
            .map_err(|e| BenchError::InvalidPlan(e.to_string()))?,
        None => base.clone(),
    };
    if target.is_empty() {
        return Err(BenchError::EmptyInput);
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Vec<BenchmarkRecord>)>> = Mutex::new(Vec::new());
    let failure: Mutex<Option<BenchError>> = Mutex::new(None);
    let workers = plan
        .threads
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .clamp(1, plan.runs);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failure.lock().unwrap().is_some() {
                    break;
                }
                let run = next.fetch_add(1, Ordering::Relaxed);
                if run >= plan.runs {
                    break;
                }
                match execute_run(plan, &target, run) {
                    Ok(records) => results.lock().unwrap().push((run, records)),
                    Err(e) => {
                        failure.lock().unwrap().get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });

    if let Some(err) = failure.into_inner().unwrap() {
        return Err(err);
    }
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(run, _)| *run);
    Ok(results.into_iter().flat_map(|(_, v)| v).collect())
}

/// All records of one run. Poses read ChaCha stream `2 * run`; outlier
/// offsets read stream `2 * run + 1`, with fraction slot `i` starting at
/// word position `i << 40` so every combination is independently
/// reproducible.
fn execute_run(
    plan: &ExperimentPlan,
    target: &PointCloud,
    run: usize,
) -> Result<Vec<BenchmarkRecord>, BenchError> {
    let pose = TransformSampler::for_run(plan.sampler, plan.master_seed, run as u64).sample_pose();
    let truth = pose.to_transform();
    let truth_inv = truth.inverse();
    let clean = truth.apply(target);

    let mut keyed: Vec<(usize, usize, usize, BenchmarkRecord)> = Vec::new();
    for (fi, &fraction) in plan.outlier_fractions.iter().enumerate() {
        let source = if fraction > 0.0 {
            let spec = OutlierSpec {
                fraction,
                offset_std: plan.outlier_offset_std,
                seed: 0, // the run-keyed stream below supersedes this seed
            };
            let mut rng = ChaCha8Rng::seed_from_u64(plan.master_seed);
            rng.set_stream(2 * run as u64 + 1);
            rng.set_word_pos((fi as u128) << 40);
            let (contaminated, _) = inject_outliers_seeded(&clean, &spec, rng)
                .map_err(|e| BenchError::InvalidPlan(e.to_string()))?;
            contaminated
        } else {
            clean.clone()
        };

        for (mi, &method) in plan.methods.iter().enumerate() {
            for (si, &sigma) in plan.sigmas.iter().enumerate() {
                let config = RegistrationConfig {
                    sigma,
                    max_iterations: plan.iterations,
                    rmse_abs_tol: 0.0,
                    rmse_rel_tol: 0.0,
                    method,
                };
                let start = Instant::now();
                let report = register(&source, target, &config)?;
                let wall_ms = start.elapsed().as_secs_f64() * 1e3;
                let status = if report.degenerate_iterations.is_empty() {
                    RunStatus::Ok
                } else {
                    RunStatus::Degenerate
                };
                keyed.push((
                    mi,
                    si,
                    fi,
                    BenchmarkRecord {
                        run,
                        method,
                        sigma,
                        outlier_fraction: fraction,
                        pose,
                        final_rmse: report.final_rmse(),
                        rot_err_rad: rotation_angle_between(
                            report.final_transform.rotation(),
                            truth_inv.rotation(),
                        ),
                        trans_err: (report.final_transform.translation()
                            - truth_inv.translation())
                        .norm(),
                        iters: report.iterations,
                        wall_ms,
                        status,
                        rmse_trace: report.rmse_trace,
                    },
                ));
            }
        }
    }
    keyed.sort_by_key(|&(mi, si, fi, _)| (mi, si, fi));
    Ok(keyed.into_iter().map(|(_, _, _, r)| r).collect())
}

/// Summary row for one (method, fraction, sigma) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub method: Method,
    pub outlier_fraction: f64,
    pub sigma: f64,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

/// Head-to-head win count of the correntropy method against a baseline at
/// one (fraction, sigma) setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosmComparison {
    pub versus: Method,
    pub outlier_fraction: f64,
    pub sigma: f64,
    /// Runs where the correntropy RMSE was strictly smaller.
    pub wins: usize,
    pub total: usize,
}

impl CosmComparison {
    pub fn win_rate(&self) -> f64 {
        self.wins as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub groups: Vec<GroupStats>,
    pub cosm_wins: Vec<CosmComparison>,
}

/// Linear interpolation between order statistics on sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (h - lo as f64)
}

/// Groups records by (method, fraction, sigma) and reduces each group to
/// mean/median/quartiles of the final RMSE, plus correntropy-vs-baseline
/// win rates at matching settings.
pub fn aggregate(records: &[BenchmarkRecord]) -> Result<AggregateSummary, BenchError> {
    if records.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    type Key = (Method, u64, u64);
    let mut grouped: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    // (run, fraction, sigma) -> rmse, for win-rate matching.
    let mut by_run: BTreeMap<(Method, u64, u64), BTreeMap<usize, f64>> = BTreeMap::new();
    for r in records {
        let key = (r.method, r.outlier_fraction.to_bits(), r.sigma.to_bits());
        grouped.entry(key).or_default().push(r.final_rmse);
        by_run
            .entry(key)
            .or_default()
            .insert(r.run, r.final_rmse);
    }

    let groups = grouped
        .into_iter()
        .map(|((method, frac_bits, sigma_bits), mut values)| {
            values.sort_by(f64::total_cmp);
            let count = values.len();
            let mean = values.iter().sum::<f64>() / count as f64;
            GroupStats {
                method,
                outlier_fraction: f64::from_bits(frac_bits),
                sigma: f64::from_bits(sigma_bits),
                count,
                mean,
                median: quantile(&values, 0.5),
                p25: quantile(&values, 0.25),
                p75: quantile(&values, 0.75),
            }
        })
        .collect();

    let mut cosm_wins = Vec::new();
    let settings: Vec<(u64, u64)> = by_run
        .keys()
        .filter(|(m, _, _)| *m == Method::Cosm)
        .map(|&(_, f, s)| (f, s))
        .collect();
    for (frac_bits, sigma_bits) in settings {
        let cosm = &by_run[&(Method::Cosm, frac_bits, sigma_bits)];
        for versus in [Method::StandardSvd] {
            let Some(other) = by_run.get(&(versus, frac_bits, sigma_bits)) else {
                continue;
            };
            let mut wins = 0;
            let mut total = 0;
            for (run, rmse) in cosm {
                if let Some(other_rmse) = other.get(run) {
                    total += 1;
                    if rmse < other_rmse {
                        wins += 1;
                    }
                }
            }
            if total > 0 {
                cosm_wins.push(CosmComparison {
                    versus,
                    outlier_fraction: f64::from_bits(frac_bits),
                    sigma: f64::from_bits(sigma_bits),
                    wins,
                    total,
                });
            }
        }
    }

    Ok(AggregateSummary { groups, cosm_wins })
}

/// CSV column order; floats carry 17 significant digits for lossless
/// reimport.
pub const CSV_HEADER: &str = "run,method,sigma,outlier_fraction,roll,pitch,yaw,tx,ty,tz,\
                              final_rmse,rot_err_rad,trans_err,iters,wall_ms,status";

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes records to the fixed 16-column CSV schema. With
/// `include_timing` off the wall-time column is written as zero so repeated
/// executions of the same plan are byte-identical.
pub fn export_csv(records: &[BenchmarkRecord], include_timing: bool) -> Result<String, BenchError> {
    if records.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let mut out = String::with_capacity(64 + records.len() * 256);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let wall = if include_timing { r.wall_ms } else { 0.0 };
        let row = [
            r.run.to_string(),
            r.method.to_string(),
            fmt_f64(r.sigma),
            fmt_f64(r.outlier_fraction),
            fmt_f64(r.pose.roll),
            fmt_f64(r.pose.pitch),
            fmt_f64(r.pose.yaw),
            fmt_f64(r.pose.tx),
            fmt_f64(r.pose.ty),
            fmt_f64(r.pose.tz),
            fmt_f64(r.final_rmse),
            fmt_f64(r.rot_err_rad),
            fmt_f64(r.trans_err),
            r.iters.to_string(),
            fmt_f64(wall),
            r.status.to_string(),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Reads records back from [`export_csv`] output. The per-iteration RMSE
/// trace is not part of the CSV schema, so reimported records carry an
/// empty trace.
pub fn parse_csv(text: &str) -> Result<Vec<BenchmarkRecord>, BenchError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, other)) => {
            return Err(BenchError::MalformedCsv {
                line: 1,
                reason: format!("unexpected header '{other}'"),
            })
        }
        None => return Err(BenchError::EmptyInput),
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 16 {
            return Err(BenchError::MalformedCsv {
                line: line_no,
                reason: format!("expected 16 columns, found {}", cols.len()),
            });
        }
        let bad = |what: &str| BenchError::MalformedCsv {
            line: line_no,
            reason: format!("bad {what} value"),
        };
        let f = |i: usize, what: &str| cols[i].parse::<f64>().map_err(|_| bad(what));
        records.push(BenchmarkRecord {
            run: cols[0].parse().map_err(|_| bad("run"))?,
            method: cols[1].parse().map_err(|_| bad("method"))?,
            sigma: f(2, "sigma")?,
            outlier_fraction: f(3, "outlier_fraction")?,
            pose: EulerPose::new(
                f(4, "roll")?,
                f(5, "pitch")?,
                f(6, "yaw")?,
                f(7, "tx")?,
                f(8, "ty")?,
                f(9, "tz")?,
            ),
            final_rmse: f(10, "final_rmse")?,
            rmse_trace: Vec::new(),
            rot_err_rad: f(11, "rot_err_rad")?,
            trans_err: f(12, "trans_err")?,
            iters: cols[13].parse().map_err(|_| bad("iters"))?,
            wall_ms: f(14, "wall_ms")?,
            status: cols[15].parse().map_err(|_| bad("status"))?,
        });
    }
    Ok(records)
}

#[derive(Serialize)]
struct JsonExport<'a> {
    records: &'a [BenchmarkRecord],
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<&'a AggregateSummary>,
}

/// JSON export mirroring the full record fields (including RMSE traces)
/// plus the optional aggregate summary.
pub fn export_json(
    records: &[BenchmarkRecord],
    summary: Option<&AggregateSummary>,
) -> Result<String, BenchError> {
    if records.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    Ok(serde_json::to_string_pretty(&JsonExport { records, summary })
        .expect("benchmark records always serialize"))
}
