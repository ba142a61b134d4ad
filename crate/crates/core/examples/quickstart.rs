//! Full pipeline on a synthetic boundary-layer cloud.
//!
//!     cargo run --release --example quickstart -- [N] [m] [seed]

use m3::pipeline::{m3_sample, M3Config};
use m3::synth::{generate_cloud, SynthSpec};

fn main() -> m3::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let n = args.first().copied().unwrap_or(200_000) as usize;
    let m = args.get(1).copied().unwrap_or(4096) as usize;
    let seed = args.get(2).copied().unwrap_or(0);

    let cloud = generate_cloud(&SynthSpec::boundary_layer(100.0), n, seed)?;
    let mut config = M3Config::volume();
    config.alloc.m = m;
    config.alloc.rho = 0.5;
    config.alloc.seed = seed;

    let t = std::time::Instant::now();
    let run = m3_sample(&cloud, &config)?;
    println!("{n} points -> {} cells -> {} samples in {:.3?}", run.partition.len(), run.measure.len(), t.elapsed());

    let sizes: Vec<usize> = run.partition.cells.iter().map(|c| c.n()).collect();
    println!("{:>6} {:>7} {:>8} {:>6}", "level", "cells", "points", "m_l");
    for s in run.strata.summary(&sizes).iter().filter(|s| s.cells > 0) {
        println!("{:>6} {:>7} {:>8} {:>6}", s.level, s.cells, s.points, run.plan.level_budget[s.level as usize - 1]);
    }
    println!("first indices: {:?}", &run.measure.indices[..run.measure.len().min(8)]);
    Ok(())
}
