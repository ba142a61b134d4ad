//! Multi-scale, variation-aware sampling measures over labeled point clouds.
//!
//! The sampler sorts points along a Morton curve, refines an octree where
//! the fields vary, groups leaves by log-variation intensity, and spreads a
//! sample budget over the groups and their cells. Around it sit comparison
//! samplers, measure diagnostics, error metrics and a synthetic data
//! generator.
//!
//! ```
//! use m3::{generate_cloud, m3_sample, M3Config, SynthSpec};
//!
//! let cloud = generate_cloud(&SynthSpec::boundary_layer(100.0), 20_000, 7).unwrap();
//! let mut config = M3Config::volume();
//! config.alloc.m = 500;
//! config.alloc.seed = 1;
//! let run = m3_sample(&cloud, &config).unwrap();
//! assert_eq!(run.measure.len(), 500);
//! ```

// Parameter checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocate;
pub mod baselines;
pub mod bench;
pub mod cli;
pub mod cloud;
pub mod error;
pub mod io;
pub mod measure;
pub mod metrics;
pub mod morton;
pub mod partition;
pub mod pipeline;
pub mod rng;
pub mod stratify;
pub mod stream;
pub mod synth;

pub use allocate::{
    allocate_levels, draw_samples, effective_capacity, plan_allocation, water_fill, AllocConfig, AllocationPlan,
    EmpiricalMeasure, MeasureSidecar,
};
pub use baselines::{grid_sample, knn_sample, proxy_sample, random_sample, BaselineSample, KnnConfig};
pub use cloud::{BoundingCube, LabeledPointCloud, ScalarChannel, VectorChannel};
pub use error::{M3Error, Result};
pub use io::{load_cloud, save_cloud, CloudFormat, M3pcReader};
pub use measure::{
    decomposition_terms, importance_weighted_risk, risk_gap_check, target_measure, tv_distance, CellMeasure,
};
pub use metrics::{unweighted_errors, weighted_errors, ErrorMetrics, FieldPair};
pub use morton::{morton_decode, morton_encode, morton_sort, quantize, MortonKey, SortedIndex};
pub use partition::{build_partition, Cell, ChannelId, Partition, PartitionConfig, StopRule};
pub use pipeline::{m3_sample, M3Config, M3Run, Profile};
pub use stratify::{assign_strata, Stratification, StratifyConfig};
pub use stream::PointSource;
pub use synth::{generate_cloud, SynthSpec};
