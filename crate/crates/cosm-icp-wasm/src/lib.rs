//! Browser bindings for the registration toolkit: generate or load a cloud,
//! pose and contaminate a source copy, then watch either estimator iterate.
//!
//! Build with `wasm-pack build --target web` and serve the `www/` page next
//! to the generated `pkg/` directory.

use cosm_icp::correntropy::{build_similarity, SimilarityMatrix};
use cosm_icp::geometry::{EulerPose, PointCloud, RigidTransform};
use cosm_icp::kdtree::KdTree;
use cosm_icp::pcd::parse_pcd;
use cosm_icp::preprocess::{inject_outliers, voxel_grid_filter, OutlierSpec};
use cosm_icp::registration::{
    estimate_step, find_correspondences, rmse, Method, RegistrationConfig,
};
use cosm_icp::synthetic::lumpy_shell;
use wasm_bindgen::prelude::*;

fn positions(cloud: &PointCloud) -> Vec<f32> {
    let mut out = Vec::with_capacity(cloud.len() * 3);
    for p in cloud {
        out.push(p.x as f32);
        out.push(p.y as f32);
        out.push(p.z as f32);
    }
    out
}

/// Interactive state: a target cloud, a posed (and optionally contaminated)
/// source copy, and the knobs the page exposes.
#[wasm_bindgen]
pub struct Demo {
    raw: PointCloud,
    target: PointCloud,
    source: PointCloud,
    pose: EulerPose,
    outlier_fraction: f64,
    outlier_seed: u64,
}

#[wasm_bindgen]
impl Demo {
    /// Starts with the built-in synthetic scan downsampled for interactivity.
    #[wasm_bindgen(constructor)]
    pub fn new() -> Demo {
        let raw = lumpy_shell(20_000, 0.0295);
        let mut demo = Demo {
            target: voxel_grid_filter(&raw, 0.005).expect("positive leaf"),
            raw,
            source: PointCloud::default(),
            pose: EulerPose::new(0.314, 0.0, 0.0, 0.0, 0.0, 0.05),
            outlier_fraction: 0.0,
            outlier_seed: 7,
        };
        demo.rebuild_source();
        demo
    }

    /// Replaces the working cloud with a fresh synthetic surface.
    pub fn load_synthetic(&mut self, samples: usize, scale: f64) {
        self.raw = lumpy_shell(samples.max(1), scale);
        self.target = self.raw.clone();
        self.rebuild_source();
    }

    /// Parses an ASCII PCD document pasted or dropped by the user.
    pub fn load_pcd(&mut self, text: &str) -> Result<usize, JsError> {
        let (_, cloud) = parse_pcd(text).map_err(|e| JsError::new(&e.to_string()))?;
        if cloud.is_empty() {
            return Err(JsError::new("the file contains no points"));
        }
        self.raw = cloud;
        self.target = self.raw.clone();
        self.rebuild_source();
        Ok(self.target.len())
    }

    /// Voxel-grid downsamples the loaded cloud into the working target.
    pub fn downsample(&mut self, leaf: f64) -> Result<usize, JsError> {
        self.target =
            voxel_grid_filter(&self.raw, leaf).map_err(|e| JsError::new(&e.to_string()))?;
        self.rebuild_source();
        Ok(self.target.len())
    }

    /// Restores the unfiltered cloud as the target.
    pub fn reset_filter(&mut self) -> usize {
        self.target = self.raw.clone();
        self.rebuild_source();
        self.target.len()
    }

    /// Sets the ground-truth pose and contamination of the source copy.
    #[allow(clippy::too_many_arguments)]
    pub fn make_source(
        &mut self,
        roll: f64,
        pitch: f64,
        yaw: f64,
        tx: f64,
        ty: f64,
        tz: f64,
        outlier_fraction: f64,
        outlier_seed: u32,
    ) -> Result<(), JsError> {
        if !(0.0..=1.0).contains(&outlier_fraction) {
            return Err(JsError::new("outlier fraction must lie in [0, 1]"));
        }
        self.pose = EulerPose::new(roll, pitch, yaw, tx, ty, tz);
        self.outlier_fraction = outlier_fraction;
        self.outlier_seed = u64::from(outlier_seed);
        self.rebuild_source();
        Ok(())
    }

    fn rebuild_source(&mut self) {
        let clean = self.pose.to_transform().apply(&self.target);
        self.source = if self.outlier_fraction > 0.0 {
            let spec = OutlierSpec::new(self.outlier_fraction, self.outlier_seed);
            inject_outliers(&clean, &spec).expect("fraction validated").0
        } else {
            clean
        };
    }

    pub fn target_len(&self) -> usize {
        self.target.len()
    }

    pub fn raw_len(&self) -> usize {
        self.raw.len()
    }

    /// Flattened xyz positions for rendering.
    pub fn target_positions(&self) -> Vec<f32> {
        positions(&self.target)
    }

    pub fn source_positions(&self) -> Vec<f32> {
        positions(&self.source)
    }

    pub fn bounding_diagonal(&self) -> f64 {
        self.target.bounding_diagonal()
    }

    /// Runs the chosen estimator, capturing the moved source after every
    /// iteration so the page can animate the convergence.
    pub fn run_registration(
        &self,
        method: &str,
        sigma: f64,
        iterations: usize,
    ) -> Result<RegistrationRun, JsError> {
        let method: Method = method.parse().map_err(|e: String| JsError::new(&e))?;
        let config = RegistrationConfig {
            sigma,
            max_iterations: iterations.max(1),
            rmse_abs_tol: 0.0,
            rmse_rel_tol: 0.0,
            method,
        };
        config.validate().map_err(|e| JsError::new(&e.to_string()))?;
        if self.source.is_empty() || self.target.is_empty() {
            return Err(JsError::new("both clouds need points"));
        }

        // Same loop as the library's register(), instrumented per iteration.
        let tree = KdTree::build(&self.target);
        let mut working = self.source.clone();
        let mut total = RigidTransform::identity();
        let mut run = RegistrationRun::empty(working.len());
        run.push_frame(&working);
        for _ in 0..config.max_iterations {
            let corr = find_correspondences(&working, &tree);
            let weights = match method {
                Method::Cosm => build_similarity(&working, &self.target, &corr.indices, sigma)
                    .map_err(|e| JsError::new(&e.to_string()))?,
                Method::StandardSvd => {
                    SimilarityMatrix::uniform(&corr.indices, working.len(), self.target.len())
                        .map_err(|e| JsError::new(&e.to_string()))?
                }
            };
            let step = estimate_step(&working, &self.target, &weights)
                .map_err(|e| JsError::new(&e.to_string()))?;
            working = step.transform.apply(&working);
            total = step.transform.compose(&total);
            run.rmse_trace.push(rmse(&working, &self.target, &corr));
            run.rank_trace
                .push(corr.distinct_targets(self.target.len()) as u32);
            run.push_frame(&working);
        }
        run.matrix = total
            .to_homogeneous()
            .row_iter()
            .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
            .collect();
        Ok(run)
    }
}

impl Default for Demo {
    fn default() -> Self {
        Self::new()
    }
}

/// Everything the page needs to replay one registration.
#[wasm_bindgen]
pub struct RegistrationRun {
    frames: Vec<f32>,
    points_per_frame: usize,
    rmse_trace: Vec<f64>,
    rank_trace: Vec<u32>,
    matrix: Vec<f64>,
}

#[wasm_bindgen]
impl RegistrationRun {
    fn empty(points_per_frame: usize) -> Self {
        RegistrationRun {
            frames: Vec::new(),
            points_per_frame,
            rmse_trace: Vec::new(),
            rank_trace: Vec::new(),
            matrix: Vec::new(),
        }
    }

    fn push_frame(&mut self, cloud: &PointCloud) {
        self.frames.extend(positions(cloud));
    }

    /// Frame count: the initial pose plus one frame per iteration.
    pub fn frame_count(&self) -> usize {
        if self.points_per_frame == 0 {
            0
        } else {
            self.frames.len() / (3 * self.points_per_frame)
        }
    }

    pub fn points_per_frame(&self) -> usize {
        self.points_per_frame
    }

    /// Flattened xyz positions of one frame.
    pub fn frame(&self, index: usize) -> Vec<f32> {
        let stride = 3 * self.points_per_frame;
        let start = index.min(self.frame_count().saturating_sub(1)) * stride;
        self.frames[start..start + stride].to_vec()
    }

    pub fn rmse_trace(&self) -> Vec<f64> {
        self.rmse_trace.clone()
    }

    pub fn rank_trace(&self) -> Vec<u32> {
        self.rank_trace.clone()
    }

    pub fn final_rmse(&self) -> f64 {
        self.rmse_trace.last().copied().unwrap_or(f64::NAN)
    }

    /// Row-major 4x4 homogeneous transform mapping the original source onto
    /// the target frame.
    pub fn matrix(&self) -> Vec<f64> {
        self.matrix.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_starts_with_matching_clouds() {
        let demo = Demo::new();
        assert!(demo.target_len() > 500);
        assert_eq!(demo.source_positions().len(), demo.target_len() * 3);
    }

    #[test]
    fn demo_registration_matches_library_register() {
        let mut demo = Demo::new();
        demo.make_source(0.4, -0.2, 0.9, 0.01, -0.02, 0.03, 0.0, 7).unwrap();
        let run = demo.run_registration("cosm", 100.0, 12).unwrap();
        assert_eq!(run.frame_count(), 13);
        assert_eq!(run.rmse_trace().len(), 12);

        let config = RegistrationConfig {
            max_iterations: 12,
            ..Default::default()
        };
        let report = cosm_icp::register(&demo.source, &demo.target, &config).unwrap();
        assert_eq!(report.rmse_trace, run.rmse_trace());
        let expected: Vec<f64> = report
            .final_transform
            .to_homogeneous()
            .row_iter()
            .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
            .collect();
        assert_eq!(expected, run.matrix());
    }

    // Error paths construct JsError, which only exists on wasm targets, so
    // native tests cover the success path only.
    #[test]
    fn demo_accepts_pcd_text() {
        let mut demo = Demo::new();
        let cloud = cosm_icp::synthetic::uniform_box(40, 0.1, 3);
        let n = demo.load_pcd(&cosm_icp::pcd::write_pcd(&cloud)).unwrap();
        assert_eq!(n, 40);
    }
}
