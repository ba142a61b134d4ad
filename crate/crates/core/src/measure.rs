//! Discrete measures over the cell set: the stratified target measure, total
//! variation, its inter/intra-stratum decomposition, the risk-gap bound and
//! the importance-weighted risk estimator.

use serde::{Deserialize, Serialize};

use crate::allocate::AllocationPlan;
use crate::error::{M3Error, Result};
use crate::morton::SortedIndex;
use crate::partition::Partition;

const NORM_TOL: f64 = 1e-12;
const RENORM_TOL: f64 = 1e-9;

/// Mass vector over the cell set, nonnegative and summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMeasure {
    masses: Vec<f64>,
}

impl CellMeasure {
    /// Accepts masses whose total is within `1e-9` of one (renormalizing when
    /// off by more than `1e-12`); rejects anything further off.
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(M3Error::InvalidMeasure("empty support".into()));
        }
        if let Some(i) = masses.iter().position(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(M3Error::InvalidMeasure(format!("mass {} at cell {i}", masses[i])));
        }
        let total = neumaier_sum(masses.iter().copied());
        if (total - 1.0).abs() > RENORM_TOL {
            return Err(M3Error::InvalidMeasure(format!("masses sum to {total}")));
        }
        let masses = if (total - 1.0).abs() > NORM_TOL {
            masses.into_iter().map(|m| m / total).collect()
        } else {
            masses
        };
        Ok(CellMeasure { masses })
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// Total mass of a set of cells.
    pub fn mass_of(&self, cells: &[usize]) -> f64 {
        cells.iter().map(|&c| self.masses[c]).sum()
    }

    /// Cell-level view of a point sample: the share of sampled indices that
    /// fall into each cell.
    pub fn from_point_sample(indices: &[usize], point_cells: &[u32], n_cells: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(M3Error::InvalidMeasure("empty sample".into()));
        }
        let mut counts = vec![0usize; n_cells];
        for &i in indices {
            counts[point_cells[i] as usize] += 1;
        }
        let m = indices.len() as f64;
        CellMeasure::new(counts.into_iter().map(|c| c as f64 / m).collect())
    }

    /// Cell measure of a point sample against a partition.
    pub fn from_partition_sample(indices: &[usize], partition: &Partition, sorted: &SortedIndex) -> Result<Self> {
        Self::from_point_sample(indices, &partition.point_cells(sorted), partition.len())
    }
}

pub(crate) fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Stratified target: cell `c` in stratum `l` gets `alpha[l] / |C_l|`.
pub fn target_measure(strata: &[Vec<usize>], alpha: &[f64], n_cells: usize) -> Result<CellMeasure> {
    if strata.len() != alpha.len() {
        return Err(M3Error::precondition("one alpha entry per stratum required"));
    }
    let mut masses = vec![0.0; n_cells];
    for (l, (cells, &a)) in strata.iter().zip(alpha).enumerate() {
        if a > 0.0 && cells.is_empty() {
            return Err(M3Error::InvalidMeasure(format!("positive mass on empty stratum {}", l + 1)));
        }
        for &c in cells {
            masses[c] = a / cells.len() as f64;
        }
    }
    CellMeasure::new(masses)
}

pub fn tv_distance(p: &CellMeasure, q: &CellMeasure) -> Result<f64> {
    if p.len() != q.len() {
        return Err(M3Error::precondition("measures live on different cell sets"));
    }
    Ok(0.5 * neumaier_sum(p.masses.iter().zip(&q.masses).map(|(a, b)| (a - b).abs())))
}

/// Inter- and intra-stratum discrepancy terms of `mu` against the target with
/// level masses `alpha`. `2 TV(mu, target) <= inter + intra`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub inter: f64,
    pub intra: f64,
}

pub fn decomposition_terms(mu: &CellMeasure, strata: &[Vec<usize>], alpha: &[f64]) -> Result<Decomposition> {
    if strata.len() != alpha.len() {
        return Err(M3Error::precondition("one alpha entry per stratum required"));
    }
    let mut inter = Vec::with_capacity(strata.len());
    let mut intra = Vec::new();
    for (cells, &a) in strata.iter().zip(alpha) {
        let level_mass = mu.mass_of(cells);
        inter.push((level_mass - a).abs());
        if !cells.is_empty() {
            let even = level_mass / cells.len() as f64;
            intra.extend(cells.iter().map(|&c| (mu.masses[c] - even).abs()));
        }
    }
    Ok(Decomposition {
        inter: neumaier_sum(inter.into_iter()),
        intra: neumaier_sum(intra.into_iter()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskGap {
    pub gap: f64,
    pub bound: f64,
}

impl RiskGap {
    pub fn holds(&self) -> bool {
        self.gap <= self.bound + 1e-12
    }
}

/// Difference of expected loss under two measures and the `2 M TV` bound.
pub fn risk_gap_check(losses: &[f64], loss_bound: f64, mu: &CellMeasure, target: &CellMeasure) -> Result<RiskGap> {
    if losses.len() != mu.len() {
        return Err(M3Error::precondition("one loss per cell required"));
    }
    if let Some(i) = losses.iter().position(|l| !(*l >= 0.0 && *l <= loss_bound)) {
        return Err(M3Error::precondition(format!(
            "loss {} at cell {i} outside [0, {loss_bound}]",
            losses[i]
        )));
    }
    let r_mu = neumaier_sum(mu.masses.iter().zip(losses).map(|(p, l)| p * l));
    let r_target = neumaier_sum(target.masses.iter().zip(losses).map(|(p, l)| p * l));
    let out = RiskGap {
        gap: (r_mu - r_target).abs(),
        bound: 2.0 * loss_bound * tv_distance(mu, target)?,
    };
    if !out.holds() {
        return Err(M3Error::Undefined(format!(
            "risk gap {} exceeds bound {}",
            out.gap, out.bound
        )));
    }
    Ok(out)
}

/// `(1/m) sum ratio_i * loss_i` for samples drawn under the sampling measure,
/// with `ratio_i` the density ratio of the evaluation measure.
pub fn importance_weighted_risk(losses: &[f64], ratios: &[f64]) -> Result<f64> {
    if losses.len() != ratios.len() {
        return Err(M3Error::precondition("one ratio per loss required"));
    }
    if losses.is_empty() {
        return Err(M3Error::precondition("no samples"));
    }
    if let Some(i) = ratios.iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(M3Error::InvalidMeasure(format!(
            "density ratio {} at sample {i}: evaluation measure not absolutely continuous",
            ratios[i]
        )));
    }
    let m = losses.len() as f64;
    Ok(neumaier_sum(losses.iter().zip(ratios).map(|(l, r)| l * r)) / m)
}

/// Cell masses `q_c / m'` of an allocation plan.
pub fn measure_from_plan(plan: &AllocationPlan) -> Result<CellMeasure> {
    CellMeasure::new(plan.cell_masses()?)
}
