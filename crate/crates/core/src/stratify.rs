//! Scale stratification: cells are ranked by the log of their score per unit
//! width and binned into `K` equal-width strata over a percentile-clipped
//! range. One-point cells form their own stratum `K + 1`.

use std::io::Write;

use byteorder::{LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{M3Error, Result};
use crate::partition::Partition;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratifyConfig {
    pub k: usize,
    pub eps_log: f64,
    pub p_lo: f64,
    pub p_hi: f64,
}

impl Default for StratifyConfig {
    fn default() -> Self {
        StratifyConfig {
            k: 64,
            eps_log: 1e-12,
            p_lo: 0.0,
            p_hi: 99.5,
        }
    }
}

impl StratifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(M3Error::config("K must be at least 2"));
        }
        if self.k + 1 > u16::MAX as usize {
            return Err(M3Error::config("K too large for u16 labels"));
        }
        if !(self.eps_log > 0.0 && self.eps_log.is_finite()) {
            return Err(M3Error::config("eps_log must be positive"));
        }
        if !(0.0 <= self.p_lo && self.p_lo < self.p_hi && self.p_hi <= 100.0) {
            return Err(M3Error::config("need 0 <= p_lo < p_hi <= 100"));
        }
        Ok(())
    }
}

/// `log(eps_log + delta / width)`.
pub fn cell_intensity(delta: f64, width: f64, eps_log: f64) -> f64 {
    (eps_log + delta / width).ln()
}

/// Linear-interpolation percentile of sorted data (`p` in `[0, 100]`).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub level: u16,
    pub cells: usize,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stratification {
    /// Label in `1..=K+1` for every cell, in partition order.
    pub labels: Vec<u16>,
    /// `strata[l - 1]` lists the cells with label `l`, ascending.
    pub strata: Vec<Vec<usize>>,
    /// `K + 1` bin edges from `s_min` to `s_max`; empty when no cell has
    /// more than one point.
    pub edges: Vec<f64>,
    pub intensity: Vec<Option<f64>>,
    pub k: usize,
}

impl Stratification {
    pub fn singleton_level(&self) -> u16 {
        (self.k + 1) as u16
    }

    pub fn n_levels(&self) -> usize {
        self.k + 1
    }

    pub fn stratum(&self, level: u16) -> &[usize] {
        &self.strata[level as usize - 1]
    }

    pub fn summary(&self, cell_sizes: &[usize]) -> Vec<StratumSummary> {
        self.strata
            .iter()
            .enumerate()
            .map(|(i, cells)| StratumSummary {
                level: (i + 1) as u16,
                cells: cells.len(),
                points: cells.iter().map(|&c| cell_sizes[c]).sum(),
            })
            .collect()
    }

    /// Labels as a little-endian u16 array aligned to the cell order.
    pub fn write_labels<W: Write>(&self, w: &mut W) -> Result<()> {
        for &l in &self.labels {
            w.write_u16::<LittleEndian>(l)?;
        }
        Ok(())
    }
}

/// Bins precomputed intensities; `None` marks a one-point cell.
pub fn label_intensities(intensity: Vec<Option<f64>>, config: &StratifyConfig) -> Result<Stratification> {
    config.validate()?;
    let k = config.k;
    let mut values: Vec<f64> = intensity.iter().flatten().copied().collect();
    values.sort_by(f64::total_cmp);
    let edges = if values.is_empty() {
        Vec::new()
    } else {
        let s_min = percentile(&values, config.p_lo);
        let s_max = percentile(&values, config.p_hi);
        let mut e: Vec<f64> = (0..=k)
            .map(|i| s_min + (s_max - s_min) * i as f64 / k as f64)
            .collect();
        e[k] = s_max;
        e
    };
    let labels: Vec<u16> = intensity
        .iter()
        .map(|s| match s {
            None => (k + 1) as u16,
            Some(_) if edges[0] == edges[k] => k as u16,
            // values on an interior edge go to the upper bin
            Some(s) => (1 + edges[1..k].partition_point(|e| *e <= *s)) as u16,
        })
        .collect();
    let mut strata = vec![Vec::new(); k + 1];
    for (c, &l) in labels.iter().enumerate() {
        strata[l as usize - 1].push(c);
    }
    Ok(Stratification {
        labels,
        strata,
        edges,
        intensity,
        k,
    })
}

pub fn assign_strata(partition: &Partition, config: &StratifyConfig) -> Result<Stratification> {
    let intensity = partition
        .cells
        .iter()
        .map(|c| (c.n() > 1).then(|| cell_intensity(c.delta, c.width, config.eps_log)))
        .collect();
    label_intensities(intensity, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(k: usize, p_lo: f64, p_hi: f64) -> StratifyConfig {
        StratifyConfig { k, eps_log: 1e-12, p_lo, p_hi }
    }

    #[test]
    fn intensity_examples() {
        assert!((cell_intensity(0.0, 0.3, 1e-12) - (-27.631021115928547)).abs() < 1e-9);
        assert!((cell_intensity(0.05, 0.5, 1e-12) - 0.1f64.ln()).abs() < 1e-9);
        assert_eq!(cell_intensity(0.1, 0.5, 1e-12), cell_intensity(0.2, 1.0, 1e-12));
    }

    #[test]
    fn degenerate_range_goes_to_top_bin() {
        let s = label_intensities(vec![Some(1.5); 5], &cfg(8, 0.0, 100.0)).unwrap();
        assert!(s.labels.iter().all(|&l| l == 8));
    }

    #[test]
    fn uniform_values_fill_bins_evenly() {
        let n = 101;
        let vals: Vec<Option<f64>> = (0..n).map(|i| Some(i as f64 / (n - 1) as f64)).collect();
        let s = label_intensities(vals, &cfg(4, 0.0, 100.0)).unwrap();
        // direct histogram oracle
        let mut hist = [0usize; 4];
        for i in 0..n {
            let v = i as f64 / (n - 1) as f64;
            hist[((v * 4.0).floor() as usize).min(3)] += 1;
        }
        let counts: Vec<usize> = s.strata[..4].iter().map(|c| c.len()).collect();
        assert_eq!(counts, hist.to_vec());
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
    }

    #[test]
    fn singletons_always_top_stratum() {
        let s = label_intensities(vec![Some(0.0), None, Some(1e9), None], &cfg(3, 0.0, 100.0)).unwrap();
        assert_eq!(s.labels, vec![1, 4, 3, 4]);
        let s = label_intensities(vec![None, None], &cfg(3, 0.0, 100.0)).unwrap();
        assert_eq!(s.labels, vec![4, 4]);
        assert!(s.edges.is_empty());
    }

    #[test]
    fn boundary_values_go_up_and_tails_clip() {
        let vals = vec![Some(0.0), Some(0.5), Some(1.0), Some(0.25)];
        let s = label_intensities(vals, &cfg(2, 0.0, 100.0)).unwrap();
        assert_eq!(s.labels, vec![1, 2, 2, 1]);
        // clipping the top 50% moves large values into bin K, never drops
        let vals: Vec<Option<f64>> = (0..10).map(|i| Some(i as f64)).collect();
        let s = label_intensities(vals, &cfg(3, 0.0, 50.0)).unwrap();
        assert_eq!(s.labels.len(), 10);
        assert!(s.labels[5..].iter().all(|&l| l == 3));
    }

    #[test]
    fn bad_config() {
        assert!(label_intensities(vec![], &cfg(1, 0.0, 100.0)).is_err());
        assert!(label_intensities(vec![], &cfg(4, 50.0, 50.0)).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 4.0);
        assert_eq!(percentile(&v, 50.0), 2.5);
    }

    proptest! {
        #[test]
        fn labels_are_total_and_order_consistent(
            vals in prop::collection::vec(prop::option::weighted(0.8, -30.0f64..10.0), 1..200),
            k in 2usize..20,
            p_hi in 50.0f64..=100.0,
        ) {
            let s = label_intensities(vals.clone(), &cfg(k, 0.0, p_hi)).unwrap();
            let total: usize = s.strata.iter().map(|c| c.len()).sum();
            prop_assert_eq!(total, vals.len());
            for (i, a) in vals.iter().enumerate() {
                prop_assert_eq!(a.is_none(), s.labels[i] as usize == k + 1);
                for (j, b) in vals.iter().enumerate() {
                    if let (Some(a), Some(b)) = (a, b) {
                        if a <= b {
                            prop_assert!(s.labels[i] <= s.labels[j]);
                        }
                    }
                }
            }
        }
    }
}
