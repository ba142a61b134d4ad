//! End-to-end sampling: normalize, sort, partition, stratify, allocate, draw.

use serde::{Deserialize, Serialize};

use crate::allocate::{draw_samples, plan_allocation, AllocConfig, AllocationPlan, EmpiricalMeasure};
use crate::cloud::LabeledPointCloud;
use crate::error::{M3Error, Result};
use crate::morton::{morton_sort, SortedIndex};
use crate::partition::{build_partition, cube_directions, Partition, PartitionConfig};
use crate::stratify::{assign_strata, Stratification, StratifyConfig};

/// Named hyperparameter sets for surface and volume data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Surface,
    Volume,
}

impl std::str::FromStr for Profile {
    type Err = M3Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surface" => Ok(Profile::Surface),
            "volume" => Ok(Profile::Volume),
            other => Err(M3Error::config(format!("unknown profile `{other}` (surface|volume)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct M3Config {
    pub partition: PartitionConfig,
    pub stratify: StratifyConfig,
    pub alloc: AllocConfig,
}

impl M3Config {
    pub fn profile(profile: Profile) -> Self {
        let (eps_refine, g_max) = match profile {
            Profile::Surface => (0.05, 8),
            Profile::Volume => (0.005, 13),
        };
        M3Config {
            partition: PartitionConfig {
                eps_refine,
                g_max,
                kappa: 32,
                directions: cube_directions(),
                scalar_weights: vec![1.0],
                vector_weights: vec![0.4],
            },
            stratify: StratifyConfig::default(),
            alloc: AllocConfig::default(),
        }
    }

    pub fn surface() -> Self {
        Self::profile(Profile::Surface)
    }

    pub fn volume() -> Self {
        Self::profile(Profile::Volume)
    }

    pub fn validate(&self) -> Result<()> {
        self.partition.validate()?;
        self.stratify.validate()?;
        self.alloc.validate()
    }
}

impl Default for M3Config {
    fn default() -> Self {
        Self::surface()
    }
}

/// Everything a pipeline run produces.
#[derive(Clone, Debug)]
pub struct M3Run {
    pub sorted: SortedIndex,
    pub partition: Partition,
    pub strata: Stratification,
    pub plan: AllocationPlan,
    pub measure: EmpiricalMeasure,
}

/// Normalizes channels unless the cloud already carries normalization stats.
pub fn prepare(cloud: &LabeledPointCloud) -> std::borrow::Cow<'_, LabeledPointCloud> {
    if cloud.norm_stats.is_some() {
        std::borrow::Cow::Borrowed(cloud)
    } else {
        std::borrow::Cow::Owned(cloud.clone().zscore_normalize())
    }
}

/// Sorts and partitions a cloud whose channels are already normalized.
pub fn partition_cloud(cloud: &LabeledPointCloud, config: &PartitionConfig) -> Result<(SortedIndex, Partition)> {
    let cube = cloud.compute_bounds()?;
    let sorted = morton_sort(cloud, &cube)?;
    let partition = build_partition(cloud, &sorted, config)?;
    Ok((sorted, partition))
}

/// Runs the full sampler. `config.alloc` supplies `m`, `rho`, `alpha` and
/// the seed.
pub fn m3_sample(cloud: &LabeledPointCloud, config: &M3Config) -> Result<M3Run> {
    config.validate()?;
    let cloud = prepare(cloud);
    let (sorted, partition) = partition_cloud(&cloud, &config.partition)?;
    let strata = assign_strata(&partition, &config.stratify)?;
    let plan = plan_allocation(&partition, &strata, &config.alloc)?;
    let measure = draw_samples(&plan, &partition, &strata, &sorted, config.alloc.seed)?;
    Ok(M3Run { sorted, partition, strata, plan, measure })
}
