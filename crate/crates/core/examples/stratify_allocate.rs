//! Strata, level budgets and cell quotas under different fill ratios.

use m3::allocate::{allocate_levels, plan_allocation, water_fill, AllocConfig};
use m3::pipeline::{partition_cloud, M3Config};
use m3::stratify::assign_strata;
use m3::synth::{generate_cloud, SynthSpec};

fn main() -> m3::Result<()> {
    // the two building blocks on small inputs
    println!("levels  C=[2,10,10] m=12 -> {:?}", allocate_levels(&[2, 10, 10], &[1.0 / 3.0; 3], 12)?);
    println!("quotas  N=[5,5,5]  m=7  -> {:?}", water_fill(&[5, 5, 5], 7)?);

    let config = M3Config::surface();
    let cloud = generate_cloud(&SynthSpec::boundary_layer(100.0), 100_000, 3)?.zscore_normalize();
    let (_, partition) = partition_cloud(&cloud, &config.partition)?;
    let strata = assign_strata(&partition, &config.stratify)?;
    let nonempty = strata.strata.iter().filter(|s| !s.is_empty()).count();
    println!("{} cells in {nonempty} nonempty strata (singleton level {})", partition.len(), strata.singleton_level());

    for rho in [1.0, 0.5, 0.25] {
        let alloc = AllocConfig { m: 8192, rho, ..AllocConfig::default() };
        let plan = plan_allocation(&partition, &strata, &alloc)?;
        plan.check(&strata)?;
        let used = plan.quota.iter().filter(|&&q| q > 0).count();
        let saturated = plan.quota.iter().zip(&plan.capacity).filter(|(q, c)| q == c).count();
        let max_q = plan.quota.iter().max().copied().unwrap_or(0);
        println!("rho {rho:<4}  m' {:>5}  cells used {used:>5}  saturated {saturated:>5}  largest quota {max_q}", plan.m_prime);
    }
    Ok(())
}
