//! Per-point errors with and without geometric weights.

use m3::metrics::{unweighted_errors, weighted_errors, FieldPair};
use m3::synth::{generate_cloud, SynthSpec};

fn main() -> m3::Result<()> {
    let cloud = generate_cloud(&SynthSpec::boundary_layer(100.0), 50_000, 2)?;
    let truth = cloud.scalars[0].values.clone();
    // a surrogate that is accurate in the dense slab and poor in the far field
    let pred: Vec<f64> = cloud.positions.iter().zip(&truth).map(|(x, t)| t + 0.05 * x[2] * x[2]).collect();
    let weights = cloud.geom_weights.clone();

    let pair = FieldPair::new(truth, pred, 1, weights)?;
    let plain = unweighted_errors(&pair)?;
    let physical = weighted_errors(&pair)?;
    println!("{:<12} {:>10} {:>10} {:>10}", "", "MAE", "MSE", "rel L2");
    println!("{:<12} {:>10.3e} {:>10.3e} {:>10.4}", "per point", plain.mae, plain.mse, plain.rel_l2);
    println!("{:<12} {:>10.3e} {:>10.3e} {:>10.4}", "by volume", physical.mae, physical.mse, physical.rel_l2);
    Ok(())
}
