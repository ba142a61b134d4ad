//! All five samplers on one cloud: time, draws and distance to the M3
//! target.

use std::time::Instant;

use m3::baselines::{grid_sample, knn_sample, proxy_sample, random_sample, KnnConfig};
use m3::measure::{target_measure, tv_distance, CellMeasure};
use m3::pipeline::{m3_sample, M3Config};
use m3::synth::{generate_cloud, SynthSpec};
use m3::EmpiricalMeasure;

fn main() -> m3::Result<()> {
    let n = 30_000;
    let m = 2000;
    let cloud = generate_cloud(&SynthSpec::boundary_layer(100.0), n, 1)?.zscore_normalize();
    let mut config = M3Config::volume();
    config.alloc.m = m;
    config.alloc.seed = 1;
    let scoring = config.partition.clone();

    let t = Instant::now();
    let run = m3_sample(&cloud, &config)?;
    let mut rows: Vec<(&str, EmpiricalMeasure, f64, u64)> = vec![("m3", run.measure.clone(), t.elapsed().as_secs_f64(), m as u64)];

    let t = Instant::now();
    let r = random_sample(n, m, 1)?;
    rows.push(("random", r, t.elapsed().as_secs_f64(), m as u64));
    let t = Instant::now();
    let g = grid_sample(&cloud, &scoring, None, m, 1)?;
    rows.push(("grid", g.measure, t.elapsed().as_secs_f64(), g.draws));
    let t = Instant::now();
    let p = proxy_sample(&cloud, &scoring, 256, 1e-6, m, 1)?;
    rows.push(("proxy", p.measure, t.elapsed().as_secs_f64(), p.draws));
    let t = Instant::now();
    let k = knn_sample(&cloud, &scoring, &KnnConfig::default(), m)?;
    rows.push(("knn", k.measure, t.elapsed().as_secs_f64(), m as u64));

    let n_cells = run.partition.len();
    let target = target_measure(&run.strata.strata, &run.plan.alpha, n_cells)?;
    let cells = run.partition.point_cells(&run.sorted);
    println!("{:<7} {:>10} {:>8} {:>8}", "method", "seconds", "draws", "TV");
    for (name, measure, secs, draws) in rows {
        let mu = CellMeasure::from_point_sample(&measure.indices, &cells, n_cells)?;
        println!("{name:<7} {secs:>10.4} {draws:>8} {:>8.4}", tv_distance(&mu, &target)?);
    }
    Ok(())
}
