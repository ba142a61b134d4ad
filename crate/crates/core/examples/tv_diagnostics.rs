//! Distance of M3 and uniform random samples to the stratified target,
//! with the two-term decomposition and a risk-gap check.

use m3::baselines::random_sample;
use m3::measure::{decomposition_terms, risk_gap_check, target_measure, tv_distance, CellMeasure};
use m3::pipeline::{m3_sample, M3Config};
use m3::synth::{generate_cloud, SynthSpec};

fn main() -> m3::Result<()> {
    let cloud = generate_cloud(&SynthSpec::boundary_layer(100.0), 300_000, 5)?.zscore_normalize();
    let mut config = M3Config::volume();
    config.alloc.m = 10_000;
    config.alloc.rho = 0.5;
    config.alloc.seed = 5;
    let run = m3_sample(&cloud, &config)?;

    let n_cells = run.partition.len();
    let alpha = &run.plan.alpha;
    let target = target_measure(&run.strata.strata, alpha, n_cells)?;
    let cells = run.partition.point_cells(&run.sorted);
    let m3_mu = CellMeasure::from_point_sample(&run.measure.indices, &cells, n_cells)?;
    let random = random_sample(cloud.len(), 10_000, 5)?;
    let random_mu = CellMeasure::from_point_sample(&random.indices, &cells, n_cells)?;

    println!("{:<8} {:>8} {:>8} {:>8}", "sampler", "TV", "inter", "intra");
    for (name, mu) in [("m3", &m3_mu), ("random", &random_mu)] {
        let d = decomposition_terms(mu, &run.strata.strata, alpha)?;
        println!("{name:<8} {:>8.4} {:>8.4} {:>8.4}", tv_distance(mu, &target)?, d.inter, d.intra);
    }

    // a bounded loss that is large in high-intensity cells
    let losses: Vec<f64> = run.strata.labels.iter().map(|&l| f64::from(l) / f64::from(run.strata.singleton_level())).collect();
    for (name, mu) in [("m3", &m3_mu), ("random", &random_mu)] {
        let g = risk_gap_check(&losses, 1.0, mu, &target)?;
        println!("{name:<8} risk gap {:.4} <= bound {:.4}", g.gap, g.bound);
    }
    Ok(())
}
