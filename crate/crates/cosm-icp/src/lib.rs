//! Rigid 3D point-cloud registration built around a correntropy-weighted
//! similarity matrix, with the classical SVD-based iterative closest point
//! as a baseline.
//!
//! The crate covers the full pipeline: ASCII PCD I/O, voxel-grid
//! downsampling, seedable random pose and outlier generation, exact
//! k-d-tree correspondences, the registration loop itself, and a
//! reproducible multi-run benchmark harness with CSV/JSON export.
//!
//! ```
//! use cosm_icp::{register, Method, RegistrationConfig};
//! use cosm_icp::geometry::EulerPose;
//! use cosm_icp::synthetic;
//!
//! let target = synthetic::uniform_box(500, 1.0, 42);
//! let pose = EulerPose::new(0.3, 0.0, 0.0, 0.0, 0.0, 0.05);
//! let source = pose.to_transform().apply(&target);
//!
//! let config = RegistrationConfig { method: Method::Cosm, ..Default::default() };
//! let report = register(&source, &target, &config).unwrap();
//! assert!(report.final_rmse() < 1e-6);
//! ```

pub mod bench;
pub mod correntropy;
pub mod geometry;
pub mod kdtree;
pub mod pcd;
pub mod preprocess;
pub mod registration;
pub mod synthetic;

pub use geometry::{EulerPose, Point3, PointCloud, RigidTransform};
pub use registration::{register, Method, RegistrationConfig, RegistrationReport};
