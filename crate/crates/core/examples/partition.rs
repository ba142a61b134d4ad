//! Variation-adaptive octree on a step discontinuity: leaves pile up along
//! the plane and stay coarse elsewhere.

use std::collections::BTreeMap;

use m3::pipeline::partition_cloud;
use m3::synth::{generate_cloud, ScalarField, SynthSpec};
use m3::{PartitionConfig, StopRule};

fn main() -> m3::Result<()> {
    let mut spec = SynthSpec::step_plane();
    spec.scalars[0].field = ScalarField::StepPlane { normal: [0.8, 0.6, 0.0], offset: 0.6 };
    let cloud = generate_cloud(&spec, 100_000, 1)?.zscore_normalize();
    let config = PartitionConfig { g_max: 7, ..PartitionConfig::default() };
    let (sorted, partition) = partition_cloud(&cloud, &config)?;

    let mut by_depth: BTreeMap<u32, [usize; 3]> = BTreeMap::new();
    for c in &partition.cells {
        let slot = match c.stop {
            StopRule::PointCap => 0,
            StopRule::DepthCap => 1,
            StopRule::LowVariation => 2,
        };
        by_depth.entry(c.depth).or_default()[slot] += 1;
    }
    println!("{} leaves over {} points (cube edge {:.3})", partition.len(), sorted.len(), partition.edge);
    println!("depth  point-cap  depth-cap  low-variation");
    for (d, [a, b, c]) in by_depth {
        println!("{d:>5} {a:>10} {b:>10} {c:>14}");
    }
    let s = &partition.stats;
    println!("threshold hits: scalar {} vector {}; refinements: scalar {} vector {}", s.n_thr_s(), s.n_thr_v(), s.n_refine_s(), s.n_refine_v());

    let mut out = Vec::new();
    partition.write_jsonl(&mut out)?;
    let text = String::from_utf8(out).unwrap();
    println!("first record: {}", text.lines().next().unwrap_or(""));
    Ok(())
}
