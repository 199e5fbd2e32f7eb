//! Gaussian correntropy kernel and the per-iteration sparse similarity
//! matrix that weights the cross-covariance.
//!
//! The matrix is rebuilt from zeros every iteration and holds at most one
//! primary entry per source point plus, for equally sized clouds, one
//! mirrored entry, so it is stored as triplets and never densely.

use crate::geometry::PointCloud;
use nalgebra::DMatrix;
use std::collections::BTreeMap;
use thiserror::Error;

/// Relative singular-value cutoff for the exact-rank diagnostic.
pub const RANK_REL_TOL: f64 = 1e-10;
/// Largest dimension for which the dense exact rank is computed.
pub const DENSE_RANK_LIMIT: usize = 2000;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("correspondence {index} maps to target {value}, but the target has {cols} points")]
    CorrespondenceOutOfRange {
        index: usize,
        value: usize,
        cols: usize,
    },
    #[error("correspondence vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("entry ({row}, {col}) is outside a {rows} x {cols} matrix")]
    EntryOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("weight {weight} at ({row}, {col}) is outside (0, 1]")]
    WeightOutOfRange { row: usize, col: usize, weight: f64 },
}

/// Gaussian kernel of a squared distance: `exp(-d_sq / (2 sigma^2))`.
///
/// Strictly positive (up to underflow at extreme distances), at most 1, and
/// monotone decreasing in `d_sq`.
#[inline]
pub fn gaussian_kernel(d_sq: f64, sigma: f64) -> f64 {
    debug_assert!(d_sq >= 0.0, "squared distance must be nonnegative");
    debug_assert!(sigma > 0.0, "kernel bandwidth must be positive");
    (-d_sq / (2.0 * sigma * sigma)).exp()
}

/// One stored weight of the sparse similarity matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet {
    pub row: usize,
    pub col: usize,
    pub weight: f64,
}

/// What the column indices of a similarity matrix address.
///
/// For equal-sized clouds the pose estimator consumes the target
/// reindexed by correspondence, so column `k` is the slot holding the
/// matched target of source point `k`, and a mirrored cell `(c(i), i)`
/// pairs source point `c(i)` with its own matched target. Rectangular
/// matrices address plain target indices instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnSpace {
    TargetIndices,
    MatchedSlots,
}

/// Sparse `N_s x N_t` matrix of correntropy weights with assignment
/// (last-write-wins) semantics, stored as triplets sorted by `(row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    triplets: Vec<Triplet>,
    column_space: ColumnSpace,
    /// Snapshot of the correspondence targets used at build time; empty for
    /// matrices assembled from raw triplets.
    matched_targets: Vec<usize>,
}

impl SimilarityMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn nnz(&self) -> usize {
        self.triplets.len()
    }

    /// Stored entries sorted by `(row, col)`.
    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn column_space(&self) -> ColumnSpace {
        self.column_space
    }

    /// The correspondence vector captured when the matrix was built from
    /// matched points; empty for raw triplet assemblies.
    pub fn matched_targets(&self) -> &[usize] {
        &self.matched_targets
    }

    /// Materializes the matrix densely; intended for diagnostics and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for t in &self.triplets {
            m[(t.row, t.col)] = t.weight;
        }
        m
    }

    /// Assembles a matrix from raw `(row, col, weight)` entries, applying
    /// them in order with later writes overwriting earlier ones.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, SimilarityError> {
        let mut cells = BTreeMap::new();
        for (row, col, weight) in entries {
            if row >= rows || col >= cols {
                return Err(SimilarityError::EntryOutOfRange {
                    row,
                    col,
                    rows,
                    cols,
                });
            }
            if !(weight > 0.0 && weight <= 1.0) {
                return Err(SimilarityError::WeightOutOfRange { row, col, weight });
            }
            cells.insert((row, col), weight);
        }
        Ok(SimilarityMatrix {
            rows,
            cols,
            triplets: collect_cells(cells),
            column_space: ColumnSpace::TargetIndices,
            matched_targets: Vec::new(),
        })
    }

    /// Weight-1 entries at `(i, corr[i])` only: the configuration the
    /// standard SVD baseline feeds to the pose estimator.
    pub fn uniform(corr: &[usize], rows: usize, cols: usize) -> Result<Self, SimilarityError> {
        check_correspondences(corr, rows, cols)?;
        let mut cells = BTreeMap::new();
        for (i, &c) in corr.iter().enumerate() {
            cells.insert((i, c), 1.0);
        }
        Ok(SimilarityMatrix {
            rows,
            cols,
            triplets: collect_cells(cells),
            column_space: ColumnSpace::TargetIndices,
            matched_targets: corr.to_vec(),
        })
    }

    /// Rank diagnostics: the number of distinct matched target indices (an
    /// O(N) injectivity proxy), plus the dense numeric rank when the matrix
    /// is small enough ([`DENSE_RANK_LIMIT`]).
    pub fn rank_proxy(&self) -> RankProxy {
        let distinct_targets = if self.matched_targets.is_empty() {
            distinct_count(self.triplets.iter().map(|t| t.col), self.cols)
        } else {
            distinct_count(self.matched_targets.iter().copied(), self.cols)
        };
        let exact_rank = if self.rows.max(self.cols) <= DENSE_RANK_LIMIT {
            let svd = self.to_dense().svd(false, false);
            let max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
            let rank = if max > 0.0 {
                svd.singular_values
                    .iter()
                    .filter(|&&s| s > RANK_REL_TOL * max)
                    .count()
            } else {
                0
            };
            Some(rank)
        } else {
            None
        };
        RankProxy {
            distinct_targets,
            exact_rank,
        }
    }
}

/// Result of [`SimilarityMatrix::rank_proxy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankProxy {
    pub distinct_targets: usize,
    pub exact_rank: Option<usize>,
}

/// Builds the per-iteration similarity matrix from correspondences.
///
/// Entry `(i, corr[i])` receives the Gaussian kernel of the squared distance
/// between source point `i` and its matched target. When the clouds have
/// equal size the mirrored entry `(corr[i], i)` is written with the same
/// value and the columns address correspondence slots (see [`ColumnSpace`]);
/// rectangular clouds get primary entries against plain target indices.
/// Writes happen in ascending `i`; later writes overwrite earlier ones at
/// the same cell. Weights that underflow to zero are indistinguishable from
/// the zero background and are not stored.
pub fn build_similarity(
    source: &PointCloud,
    target: &PointCloud,
    corr: &[usize],
    sigma: f64,
) -> Result<SimilarityMatrix, SimilarityError> {
    let rows = source.len();
    let cols = target.len();
    check_correspondences(corr, rows, cols)?;
    let mirror = rows == cols;
    let mut cells = BTreeMap::new();
    for (i, &c) in corr.iter().enumerate() {
        let d_sq = source.points()[i].dist_sq(target.points()[c]);
        let w = gaussian_kernel(d_sq, sigma);
        if w > 0.0 {
            cells.insert((i, c), w);
            if mirror {
                cells.insert((c, i), w);
            }
        }
    }
    Ok(SimilarityMatrix {
        rows,
        cols,
        triplets: collect_cells(cells),
        column_space: if mirror {
            ColumnSpace::MatchedSlots
        } else {
            ColumnSpace::TargetIndices
        },
        matched_targets: corr.to_vec(),
    })
}

fn check_correspondences(corr: &[usize], rows: usize, cols: usize) -> Result<(), SimilarityError> {
    if corr.len() != rows {
        return Err(SimilarityError::LengthMismatch {
            expected: rows,
            got: corr.len(),
        });
    }
    if let Some((index, &value)) = corr.iter().enumerate().find(|(_, &c)| c >= cols) {
        return Err(SimilarityError::CorrespondenceOutOfRange { index, value, cols });
    }
    Ok(())
}

fn collect_cells(cells: BTreeMap<(usize, usize), f64>) -> Vec<Triplet> {
    cells
        .into_iter()
        .map(|((row, col), weight)| Triplet { row, col, weight })
        .collect()
}

fn distinct_count(indices: impl Iterator<Item = usize>, bound: usize) -> usize {
    let mut seen = vec![false; bound];
    let mut count = 0;
    for i in indices {
        if !seen[i] {
            seen[i] = true;
            count += 1;
        }
    }
    count
}
