//! Iterative closest point with a correntropy-weighted cross-covariance,
//! plus the classical SVD baseline running the identical loop with unit
//! weights.
//!
//! Each iteration: nearest-neighbor correspondences, a fresh similarity
//! matrix, a closed-form pose step from the SVD of the weighted 3x3
//! cross-covariance, then RMSE and rank bookkeeping. The target k-d tree is
//! built once; only the source moves.

use crate::correntropy::{build_similarity, ColumnSpace, SimilarityError, SimilarityMatrix};
use crate::geometry::{PointCloud, RigidTransform};
use crate::kdtree::KdTree;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::str::FromStr;
use thiserror::Error;

/// Relative singular-value threshold below which the rotation is reported
/// as not uniquely determined.
pub const DEGENERACY_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("source and target clouds must both be nonempty")]
    EmptyCloud,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("similarity matrix is {got_rows}x{got_cols}, expected {rows}x{cols}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("cross-covariance contains non-finite entries")]
    NonFiniteCovariance,
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

/// Which estimator weights the cross-covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Correntropy similarity-matrix weighting with mirrored entries.
    Cosm,
    /// Unit weights at the matched cells only.
    #[serde(rename = "svd")]
    StandardSvd,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Cosm => "cosm",
            Method::StandardSvd => "svd",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosm" => Ok(Method::Cosm),
            "svd" => Ok(Method::StandardSvd),
            other => Err(format!("unknown method '{other}' (expected cosm|svd)")),
        }
    }
}

/// Registration parameters: sigma 100, a fixed budget of 50 iterations,
/// and both RMSE tolerances disabled by default (0 turns a tolerance off).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub sigma: f64,
    pub max_iterations: usize,
    pub rmse_abs_tol: f64,
    pub rmse_rel_tol: f64,
    pub method: Method,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            sigma: 100.0,
            max_iterations: 50,
            rmse_abs_tol: 0.0,
            rmse_rel_tol: 0.0,
            method: Method::Cosm,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        if self.sigma <= 0.0 || !self.sigma.is_finite() {
            return Err(RegistrationError::InvalidConfig(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        if self.max_iterations < 1 {
            return Err(RegistrationError::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("rmse_abs_tol", self.rmse_abs_tol),
            ("rmse_rel_tol", self.rmse_rel_tol),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(RegistrationError::InvalidConfig(format!(
                    "{name} must be nonnegative and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Nearest-target assignment for every source point, with exact squared
/// distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences {
    /// `indices[i]` is the target index nearest to source point `i`.
    pub indices: Vec<usize>,
    pub dist_sq: Vec<f64>,
}

impl Correspondences {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Number of distinct matched target indices.
    pub fn distinct_targets(&self, target_len: usize) -> usize {
        let mut seen = vec![false; target_len];
        let mut count = 0;
        for &c in &self.indices {
            if !seen[c] {
                seen[c] = true;
                count += 1;
            }
        }
        count
    }
}

/// Exact nearest neighbor for every source point; ties resolve to the
/// lowest target index and no correspondences are rejected.
pub fn find_correspondences(source: &PointCloud, target_tree: &KdTree) -> Correspondences {
    let mut indices = Vec::with_capacity(source.len());
    let mut dist_sq = Vec::with_capacity(source.len());
    for &p in source {
        let (idx, d2) = target_tree.nearest(p);
        indices.push(idx);
        dist_sq.push(d2);
    }
    Correspondences { indices, dist_sq }
}

/// Unweighted arithmetic means of the source and of the full target cloud.
pub fn centroids(source: &PointCloud, target: &PointCloud) -> (Vector3<f64>, Vector3<f64>) {
    let s = source.centroid().expect("source cloud must be nonempty");
    let t = target.centroid().expect("target cloud must be nonempty");
    (s, t)
}

/// Weighted cross-covariance: the sum over stored triplets `(j, k, w)` of
/// `w * p'_j * q'_k^T`, the 3x3 realization of the similarity-weighted
/// demeaned product.
pub fn cross_covariance(
    source_demeaned: &[Vector3<f64>],
    target_demeaned: &[Vector3<f64>],
    sm: &SimilarityMatrix,
) -> Result<Matrix3<f64>, RegistrationError> {
    if sm.rows() != source_demeaned.len() || sm.cols() != target_demeaned.len() {
        return Err(RegistrationError::DimensionMismatch {
            rows: source_demeaned.len(),
            cols: target_demeaned.len(),
            got_rows: sm.rows(),
            got_cols: sm.cols(),
        });
    }
    let mut h = Matrix3::zeros();
    for t in sm.triplets() {
        h += t.weight * source_demeaned[t.row] * target_demeaned[t.col].transpose();
    }
    Ok(h)
}

/// SVD factors of a cross-covariance: `u * diag(lambda) * v^T` reconstructs
/// the input, with singular values in descending order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdFactors {
    pub u: Matrix3<f64>,
    pub v: Matrix3<f64>,
    pub lambda: Vector3<f64>,
}

/// Rotation extracted from a cross-covariance, with its factors and a flag
/// for rank-deficient inputs where the rotation is not uniquely determined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationSolve {
    pub rotation: Matrix3<f64>,
    pub factors: SvdFactors,
    pub degenerate: bool,
}

/// Computes `R = V * U^T` from the SVD of `h`, negating the column of `V`
/// belonging to the smallest singular value when the raw product is a
/// reflection, so the result always has determinant +1.
///
/// The input is normalized by its largest absolute entry first, which makes
/// the extracted rotation invariant under positive rescaling of `h`.
/// Rank-deficient inputs (two or more singular values below
/// [`DEGENERACY_REL_TOL`] times the largest) are flagged as degenerate and
/// solved best-effort; non-finite inputs are an error.
pub fn extract_rotation(h: &Matrix3<f64>) -> Result<RotationSolve, RegistrationError> {
    if !h.iter().all(|v| v.is_finite()) {
        return Err(RegistrationError::NonFiniteCovariance);
    }
    let scale = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(RotationSolve {
            rotation: Matrix3::identity(),
            factors: SvdFactors {
                u: Matrix3::identity(),
                v: Matrix3::identity(),
                lambda: Vector3::zeros(),
            },
            degenerate: true,
        });
    }
    let svd = (h / scale).svd(true, true);
    let raw_u = svd.u.expect("u requested");
    let raw_v = svd.v_t.expect("v_t requested").transpose();
    // Order the factors by descending singular value ourselves; the solver
    // does not guarantee any particular order.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut u = Matrix3::zeros();
    let mut v = Matrix3::zeros();
    let mut lambda = Vector3::zeros();
    for (slot, &src) in order.iter().enumerate() {
        u.set_column(slot, &raw_u.column(src));
        v.set_column(slot, &raw_v.column(src));
        lambda[slot] = svd.singular_values[src];
    }
    let degenerate = lambda
        .iter()
        .filter(|&&s| s < DEGENERACY_REL_TOL * lambda[0])
        .count()
        >= 2;

    let mut rotation = v * u.transpose();
    if rotation.determinant() < 0.0 {
        let mut v_fixed = v;
        let mut col = v_fixed.column_mut(2);
        col *= -1.0;
        rotation = v_fixed * u.transpose();
    }
    Ok(RotationSolve {
        rotation,
        factors: SvdFactors {
            u,
            v,
            lambda: lambda * scale,
        },
        degenerate,
    })
}

/// One closed-form pose step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEstimate {
    pub transform: RigidTransform,
    pub degenerate: bool,
}

/// Estimates the rigid step mapping the current source toward the target:
/// rotation from the weighted cross-covariance, then `tr = t_cen - R * s_cen`.
///
/// Both clouds are demeaned with their full-cloud centroids. The target side
/// of the cross-covariance follows the similarity matrix's column space:
/// matched-slot matrices pair each column `k` with the demeaned matched
/// target of source point `k`, plain matrices pair column `k` with target
/// point `k`.
pub fn estimate_step(
    source: &PointCloud,
    target: &PointCloud,
    weights: &SimilarityMatrix,
) -> Result<StepEstimate, RegistrationError> {
    if source.is_empty() || target.is_empty() {
        return Err(RegistrationError::EmptyCloud);
    }
    let (s_cen, t_cen) = centroids(source, target);
    let src_demeaned: Vec<Vector3<f64>> = source.iter().map(|p| p.to_vector() - s_cen).collect();
    let tgt_demeaned: Vec<Vector3<f64>> = match weights.column_space() {
        ColumnSpace::TargetIndices => target.iter().map(|p| p.to_vector() - t_cen).collect(),
        ColumnSpace::MatchedSlots => {
            let matched = weights.matched_targets();
            if matched.len() != weights.cols() {
                return Err(RegistrationError::DimensionMismatch {
                    rows: source.len(),
                    cols: matched.len(),
                    got_rows: weights.rows(),
                    got_cols: weights.cols(),
                });
            }
            matched
                .iter()
                .map(|&c| target.points()[c].to_vector() - t_cen)
                .collect()
        }
    };
    let h = cross_covariance(&src_demeaned, &tgt_demeaned, weights)?;
    let solve = extract_rotation(&h)?;
    let translation = t_cen - solve.rotation * s_cen;
    let transform = RigidTransform::new(solve.rotation, translation)
        .map_err(|_| RegistrationError::NonFiniteCovariance)?;
    Ok(StepEstimate {
        transform,
        degenerate: solve.degenerate,
    })
}

/// Root mean square distance between each source point and its matched
/// target, recomputed from the current point positions.
pub fn rmse(source: &PointCloud, target: &PointCloud, corr: &Correspondences) -> f64 {
    assert_eq!(corr.len(), source.len(), "correspondences must cover the source");
    let sum: f64 = source
        .iter()
        .zip(&corr.indices)
        .map(|(p, &c)| p.dist_sq(target.points()[c]))
        .sum();
    (sum / source.len() as f64).sqrt()
}

/// Outcome of a registration: the accumulated transform mapping the
/// original source onto the target frame, plus per-iteration traces.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationReport {
    pub final_transform: RigidTransform,
    /// RMSE recorded after applying each iteration's step, against that
    /// iteration's correspondences.
    pub rmse_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Distinct matched target indices per iteration.
    pub rank_trace: Vec<usize>,
    /// Iterations whose cross-covariance was rank-deficient; the loop
    /// continues with the best-effort rotation.
    pub degenerate_iterations: Vec<usize>,
}

impl RegistrationReport {
    pub fn final_rmse(&self) -> f64 {
        *self.rmse_trace.last().expect("at least one iteration runs")
    }
}

/// Runs the full registration loop until the iteration budget or an enabled
/// RMSE tolerance stops it.
pub fn register(
    source: &PointCloud,
    target: &PointCloud,
    config: &RegistrationConfig,
) -> Result<RegistrationReport, RegistrationError> {
    config.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(RegistrationError::EmptyCloud);
    }
    let tree = KdTree::build(target);
    let mut working = source.clone();
    let mut total = RigidTransform::identity();
    let mut rmse_trace = Vec::new();
    let mut rank_trace = Vec::new();
    let mut degenerate_iterations = Vec::new();
    let mut converged = false;

    for iteration in 0..config.max_iterations {
        let corr = find_correspondences(&working, &tree);
        let weights = match config.method {
            Method::Cosm => build_similarity(&working, target, &corr.indices, config.sigma)?,
            Method::StandardSvd => {
                SimilarityMatrix::uniform(&corr.indices, working.len(), target.len())?
            }
        };
        let step = estimate_step(&working, target, &weights)?;
        if step.degenerate {
            degenerate_iterations.push(iteration);
        }
        working = step.transform.apply(&working);
        total = step.transform.compose(&total);

        let current = rmse(&working, target, &corr);
        rmse_trace.push(current);
        rank_trace.push(corr.distinct_targets(target.len()));

        if config.rmse_abs_tol > 0.0 && current < config.rmse_abs_tol {
            converged = true;
            break;
        }
        if config.rmse_rel_tol > 0.0 && iteration > 0 {
            let prev = rmse_trace[iteration - 1];
            let change = (prev - current).abs() / prev.abs().max(f64::MIN_POSITIVE);
            if change < config.rmse_rel_tol {
                converged = true;
                break;
            }
        }
    }

    Ok(RegistrationReport {
        final_transform: total,
        iterations: rmse_trace.len(),
        converged,
        rmse_trace,
        rank_trace,
        degenerate_iterations,
    })
}
