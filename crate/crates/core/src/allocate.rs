//! Budget allocation across strata and cells, and the final draw.
//!
//! Level budgets follow the target masses under per-level capacity, quotas
//! inside a level are water-filled (lowest current allocation first, ties by
//! Morton order), and each cell then contributes `q_c` distinct points drawn
//! uniformly without replacement.

use std::io::Write;

use byteorder::{LittleEndian, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{M3Error, Result};
use crate::morton::SortedIndex;
use crate::partition::Partition;
use crate::rng::{self, Domain};
use crate::stratify::Stratification;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocConfig {
    pub m: usize,
    pub rho: f64,
    /// Target mass per level `1..=K+1`; `None` is uniform over nonempty
    /// levels.
    pub alpha: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for AllocConfig {
    fn default() -> Self {
        AllocConfig {
            m: 8192,
            rho: 1.0,
            alpha: None,
            seed: 0,
        }
    }
}

impl AllocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(M3Error::config("rho must lie in (0, 1]"));
        }
        if let Some(a) = &self.alpha {
            if a.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(M3Error::config("alpha entries must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// `min(n, max(1, ceil(rho * n)))`. Products within `1e-9` of an integer
/// are snapped before the ceiling so `0.3 * 10` stays 3.
pub fn effective_capacity(n: usize, rho: f64) -> usize {
    let x = rho * n as f64;
    let r = x.round();
    let c = if (x - r).abs() <= 1e-9 * x.max(1.0) { r } else { x.ceil() };
    n.min((c as usize).max(1))
}

/// Largest-remainder apportionment of `total` by `weights`; ties favour the
/// lower index.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let w_sum: f64 = weights.iter().sum();
    if total == 0 || w_sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / w_sum).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Integer level budgets summing to `min(m, sum(capacities))` with
/// `0 <= m_l <= C_l`, close to `alpha_l * m'`.
pub fn allocate_levels(capacities: &[usize], alpha: &[f64], m: usize) -> Result<Vec<usize>> {
    if capacities.len() != alpha.len() {
        return Err(M3Error::precondition("capacities and alpha differ in length"));
    }
    let m_prime = m.min(capacities.iter().sum());
    let mut budget = vec![0usize; capacities.len()];
    let mut saturated: Vec<bool> = capacities.iter().map(|&c| c == 0).collect();
    let mut remaining = m_prime;
    while remaining > 0 {
        let mut weights: Vec<f64> = (0..capacities.len())
            .map(|l| if saturated[l] { 0.0 } else { alpha[l] })
            .collect();
        if weights.iter().all(|w| *w <= 0.0) {
            // Only zero-target levels have room left: spread by free capacity.
            weights = (0..capacities.len())
                .map(|l| (capacities[l] - budget[l]) as f64)
                .collect();
        }
        let add = apportion(remaining, &weights);
        remaining = 0;
        for l in 0..capacities.len() {
            budget[l] += add[l];
            if budget[l] >= capacities[l] {
                remaining += budget[l] - capacities[l];
                budget[l] = capacities[l];
                saturated[l] = true;
            }
        }
    }
    Ok(budget)
}

/// Balanced quotas for cells given in tie-break order: raise the lowest
/// allocations first, one unit at a time, until `budget` is spent.
pub fn water_fill(capacities: &[usize], budget: usize) -> Result<Vec<usize>> {
    let total: usize = capacities.iter().sum();
    if budget > total {
        return Err(M3Error::precondition(format!(
            "budget {budget} exceeds capacity {total}"
        )));
    }
    let filled = |level: usize| -> usize { capacities.iter().map(|&c| c.min(level)).sum() };
    // largest level L with filled(L) <= budget
    let (mut lo, mut hi) = (0usize, capacities.iter().copied().max().unwrap_or(0));
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if filled(mid) <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let level = lo;
    let mut quotas: Vec<usize> = capacities.iter().map(|&c| c.min(level)).collect();
    let mut residual = budget - quotas.iter().sum::<usize>();
    for (q, &c) in quotas.iter_mut().zip(capacities) {
        if residual == 0 {
            break;
        }
        if c > level {
            *q += 1;
            residual -= 1;
        }
    }
    Ok(quotas)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub m: usize,
    pub m_prime: usize,
    pub rho: f64,
    /// Effective target masses per level `1..=K+1`.
    pub alpha: Vec<f64>,
    /// True when user-supplied alpha had to be renormalized over nonempty
    /// levels.
    pub alpha_adjusted: bool,
    /// Per-level capacity `C_l` and budget `m_l`, index `l - 1`.
    pub level_capacity: Vec<usize>,
    pub level_budget: Vec<usize>,
    /// Per-cell effective capacity and quota, in partition order.
    pub capacity: Vec<usize>,
    pub quota: Vec<usize>,
}

/// Resolves target masses over the levels of `strata`.
pub fn resolve_alpha(strata: &Stratification, alpha: Option<&[f64]>) -> Result<(Vec<f64>, bool)> {
    let levels = strata.n_levels();
    let nonempty: Vec<bool> = strata.strata.iter().map(|c| !c.is_empty()).collect();
    let n_nonempty = nonempty.iter().filter(|b| **b).count();
    let Some(alpha) = alpha else {
        let a = nonempty
            .iter()
            .map(|&ne| if ne { 1.0 / n_nonempty as f64 } else { 0.0 })
            .collect();
        return Ok((a, false));
    };
    if alpha.len() != levels {
        return Err(M3Error::config(format!(
            "alpha has {} entries, expected {levels}",
            alpha.len()
        )));
    }
    let kept: f64 = (0..levels).filter(|&l| nonempty[l]).map(|l| alpha[l]).sum();
    if kept <= 0.0 {
        return Err(M3Error::config("alpha puts no mass on any nonempty stratum"));
    }
    let total: f64 = alpha.iter().sum();
    let adjusted = (0..levels).any(|l| !nonempty[l] && alpha[l] > 0.0) || (total - 1.0).abs() > 1e-12;
    let a = (0..levels)
        .map(|l| if nonempty[l] { alpha[l] / kept } else { 0.0 })
        .collect();
    Ok((a, adjusted))
}

pub fn plan_allocation(partition: &Partition, strata: &Stratification, config: &AllocConfig) -> Result<AllocationPlan> {
    config.validate()?;
    if strata.labels.len() != partition.len() {
        return Err(M3Error::precondition("stratification does not match the partition"));
    }
    let (alpha, alpha_adjusted) = resolve_alpha(strata, config.alpha.as_deref())?;
    let capacity: Vec<usize> = partition
        .cells
        .iter()
        .map(|c| effective_capacity(c.n(), config.rho))
        .collect();
    let level_capacity: Vec<usize> = strata
        .strata
        .iter()
        .map(|cells| cells.iter().map(|&c| capacity[c]).sum())
        .collect();
    let level_budget = allocate_levels(&level_capacity, &alpha, config.m)?;
    let m_prime = level_budget.iter().sum();
    let mut quota = vec![0usize; partition.len()];
    for (cells, &budget) in strata.strata.iter().zip(&level_budget) {
        if budget == 0 {
            continue;
        }
        let caps: Vec<usize> = cells.iter().map(|&c| capacity[c]).collect();
        for (&c, q) in cells.iter().zip(water_fill(&caps, budget)?) {
            quota[c] = q;
        }
    }
    Ok(AllocationPlan {
        m: config.m,
        m_prime,
        rho: config.rho,
        alpha,
        alpha_adjusted,
        level_capacity,
        level_budget,
        capacity,
        quota,
    })
}

impl AllocationPlan {
    /// Checks the level and cell constraints and within-level balance.
    pub fn check(&self, strata: &Stratification) -> Result<()> {
        let fail = |msg: String| Err(M3Error::precondition(msg));
        if self.level_budget.iter().sum::<usize>() != self.m_prime {
            return fail("level budgets do not sum to m'".into());
        }
        if self.m_prime != self.m.min(self.capacity.iter().sum()) {
            return fail("m' != min(m, total capacity)".into());
        }
        for (l, cells) in strata.strata.iter().enumerate() {
            if self.level_budget[l] > self.level_capacity[l] {
                return fail(format!("level {} over capacity", l + 1));
            }
            if cells.iter().map(|&c| self.quota[c]).sum::<usize>() != self.level_budget[l] {
                return fail(format!("quotas of level {} do not sum to m_l", l + 1));
            }
            let open: Vec<usize> = cells
                .iter()
                .filter(|&&c| self.quota[c] < self.capacity[c])
                .map(|&c| self.quota[c])
                .collect();
            if let (Some(lo), Some(hi)) = (open.iter().min(), open.iter().max()) {
                if hi - lo > 1 {
                    return fail(format!("unbalanced quotas in level {}", l + 1));
                }
            }
        }
        if self.quota.iter().zip(&self.capacity).any(|(q, c)| q > c) {
            return fail("quota above effective capacity".into());
        }
        Ok(())
    }

    /// Quota mass of each cell, `q_c / m'`.
    pub fn cell_masses(&self) -> Result<Vec<f64>> {
        if self.m_prime == 0 {
            return Err(M3Error::InvalidMeasure("m' = 0".into()));
        }
        Ok(self.quota.iter().map(|&q| q as f64 / self.m_prime as f64).collect())
    }
}

/// Finite set of point indices with nonnegative weights summing to one.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    /// Optional cell-level view (`q_c / m'` for sampled measures).
    pub cell_masses: Option<Vec<f64>>,
}

impl EmpiricalMeasure {
    pub fn uniform(indices: Vec<usize>) -> Self {
        let w = if indices.is_empty() { 0.0 } else { 1.0 / indices.len() as f64 };
        EmpiricalMeasure {
            weights: vec![w; indices.len()],
            indices,
            cell_masses: None,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn write_indices_bin<W: Write>(&self, w: &mut W) -> Result<()> {
        for &i in &self.indices {
            w.write_u64::<LittleEndian>(i as u64)?;
        }
        Ok(())
    }

    pub fn write_indices_txt<W: Write>(&self, w: &mut W) -> Result<()> {
        for &i in &self.indices {
            writeln!(w, "{i}")?;
        }
        Ok(())
    }
}

pub fn read_indices_bin(bytes: &[u8]) -> Result<Vec<usize>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(M3Error::MalformedHeader("index file length is not a multiple of 8".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect())
}

/// Draws `k` distinct entries of `pool` uniformly (partial Fisher-Yates).
pub(crate) fn partial_shuffle<R: Rng>(pool: &mut [usize], k: usize, rng: &mut R) {
    let n = pool.len();
    for i in 0..k.min(n) {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
}

/// Samples every cell's quota, visiting levels in order and cells in Morton
/// order within a level. Each cell uses its own stream keyed by its anchor.
pub fn draw_samples(
    plan: &AllocationPlan,
    partition: &Partition,
    strata: &Stratification,
    sorted: &SortedIndex,
    seed: u64,
) -> Result<EmpiricalMeasure> {
    if plan.quota.len() != partition.len() {
        return Err(M3Error::precondition("plan does not match the partition"));
    }
    if plan.m_prime == 0 {
        return Ok(EmpiricalMeasure::default());
    }
    let mut indices = Vec::with_capacity(plan.m_prime);
    let mut pool = Vec::new();
    for cells in &strata.strata {
        for &c in cells {
            let q = plan.quota[c];
            if q == 0 {
                continue;
            }
            let cell = &partition.cells[c];
            pool.clear();
            pool.extend_from_slice(&sorted.perm[cell.lo..cell.hi]);
            let mut rng = rng::stream(seed, Domain::CellDraw, cell.key.0);
            partial_shuffle(&mut pool, q, &mut rng);
            indices.extend_from_slice(&pool[..q]);
        }
    }
    let mut measure = EmpiricalMeasure::uniform(indices);
    measure.cell_masses = Some(plan.cell_masses()?);
    Ok(measure)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelBudget {
    pub level: u16,
    pub m_l: usize,
}

/// JSON sidecar written next to an index file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureSidecar {
    pub m_prime: usize,
    pub seed: u64,
    pub per_level: Vec<LevelBudget>,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub alpha_adjusted: bool,
}

impl MeasureSidecar {
    pub fn from_plan(plan: &AllocationPlan, seed: u64) -> Self {
        MeasureSidecar {
            m_prime: plan.m_prime,
            seed,
            per_level: plan
                .level_budget
                .iter()
                .enumerate()
                .map(|(l, &m_l)| LevelBudget { level: (l + 1) as u16, m_l })
                .collect(),
            rho: plan.rho,
            alpha: Some(plan.alpha.clone()),
            alpha_adjusted: plan.alpha_adjusted,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn capacity_examples() {
        assert_eq!(effective_capacity(1, 0.01), 1);
        assert_eq!(effective_capacity(100, 0.1), 10);
        assert_eq!(effective_capacity(7, 1.0), 7);
        assert_eq!(effective_capacity(10, 0.3), 3);
        assert_eq!(effective_capacity(10, 0.31), 4);
        assert_eq!(effective_capacity(3, 0.5), 2);
    }

    #[test]
    fn level_examples() {
        let u = [1.0 / 3.0; 3];
        assert_eq!(allocate_levels(&[10, 10, 10], &u, 9).unwrap(), vec![3, 3, 3]);
        assert_eq!(allocate_levels(&[2, 10, 10], &u, 12).unwrap(), vec![2, 5, 5]);
        assert_eq!(allocate_levels(&[2, 10, 10], &u, 100).unwrap(), vec![2, 10, 10]);
        assert_eq!(allocate_levels(&[0, 4, 0], &u, 3).unwrap(), vec![0, 3, 0]);
        // only a zero-target level has room
        assert_eq!(allocate_levels(&[1, 5], &[1.0, 0.0], 4).unwrap(), vec![1, 3]);
    }

    /// Exhaustive search: minimize squared deviation from alpha * m', then
    /// max deviation.
    fn brute_levels(caps: &[usize; 3], alpha: &[f64; 3], m: usize) -> [usize; 3] {
        let mp = m.min(caps.iter().sum());
        let mut best = ([0; 3], f64::INFINITY, f64::INFINITY);
        for a in 0..=caps[0] {
            for b in 0..=caps[1] {
                if a + b > mp || mp - a - b > caps[2] {
                    continue;
                }
                let t = [a, b, mp - a - b];
                let dev: Vec<f64> = (0..3).map(|l| (t[l] as f64 - alpha[l] * mp as f64).abs()).collect();
                let sq: f64 = dev.iter().map(|d| d * d).sum();
                let mx = dev.iter().cloned().fold(0.0, f64::max);
                if sq < best.1 - 1e-12 || ((sq - best.1).abs() <= 1e-12 && mx < best.2) {
                    best = (t, sq, mx);
                }
            }
        }
        best.0
    }

    #[test]
    fn levels_match_exhaustive_oracle() {
        let u = [1.0 / 3.0; 3];
        assert_eq!(brute_levels(&[2, 10, 10], &u, 12), [2, 5, 5]);
        assert_eq!(allocate_levels(&[2, 10, 10], &u, 12).unwrap(), vec![2, 5, 5]);
    }

    fn naive_water_fill(caps: &[usize], budget: usize) -> Vec<usize> {
        let mut q = vec![0; caps.len()];
        for _ in 0..budget {
            let pick = (0..caps.len())
                .filter(|&i| q[i] < caps[i])
                .min_by_key(|&i| (q[i], i))
                .unwrap();
            q[pick] += 1;
        }
        q
    }

    #[test]
    fn water_fill_examples() {
        assert_eq!(water_fill(&[5, 5, 5], 3).unwrap(), vec![1, 1, 1]);
        assert_eq!(water_fill(&[1, 10], 6).unwrap(), vec![1, 5]);
        assert_eq!(naive_water_fill(&[5, 5, 5], 7), vec![3, 2, 2]);
        assert_eq!(water_fill(&[5, 5, 5], 7).unwrap(), vec![3, 2, 2]);
        assert!(water_fill(&[1, 1], 3).is_err());
        assert_eq!(water_fill(&[], 0).unwrap(), Vec::<usize>::new());
    }

    proptest! {
        #[test]
        fn water_fill_matches_naive(caps in prop::collection::vec(0usize..12, 0..12), frac in 0.0f64..=1.0) {
            let total: usize = caps.iter().sum();
            let budget = (total as f64 * frac).floor() as usize;
            prop_assert_eq!(water_fill(&caps, budget).unwrap(), naive_water_fill(&caps, budget));
        }

        #[test]
        fn levels_feasible(caps in prop::collection::vec(0usize..50, 1..10), raw in prop::collection::vec(0.0f64..1.0, 10), m in 0usize..400) {
            let alpha: Vec<f64> = raw[..caps.len()].to_vec();
            let budget = allocate_levels(&caps, &alpha, m).unwrap();
            let mp = m.min(caps.iter().sum());
            prop_assert_eq!(budget.iter().sum::<usize>(), mp);
            for (b, c) in budget.iter().zip(&caps) {
                prop_assert!(b <= c);
            }
        }

        #[test]
        fn capacity_bounds(n in 1usize..10_000, rho in 0.001f64..=1.0) {
            let c = effective_capacity(n, rho);
            prop_assert!(c >= 1 && c <= n);
            let x = rho * n as f64;
            prop_assert!(c as f64 >= x - 1e-9 * x.max(1.0));
        }
    }

    #[test]
    fn alpha_resolution() {
        use crate::stratify::{label_intensities, StratifyConfig};
        let s = label_intensities(
            vec![Some(0.0), Some(1.0), None],
            &StratifyConfig { k: 3, eps_log: 1e-12, p_lo: 0.0, p_hi: 100.0 },
        )
        .unwrap();
        // levels 1, 3, 4 populated
        let (a, adj) = resolve_alpha(&s, None).unwrap();
        assert_eq!(a, vec![1.0 / 3.0, 0.0, 1.0 / 3.0, 1.0 / 3.0]);
        assert!(!adj);
        let (a, adj) = resolve_alpha(&s, Some(&[0.25, 0.25, 0.25, 0.25])).unwrap();
        assert!(adj);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(a[1], 0.0);
        assert!(resolve_alpha(&s, Some(&[0.0, 1.0, 0.0, 0.0])).is_err());
        assert!(resolve_alpha(&s, Some(&[1.0])).is_err());
    }

    #[test]
    fn sidecar_and_index_files() {
        let m = EmpiricalMeasure::uniform(vec![4, 0, 9]);
        let mut bin = Vec::new();
        m.write_indices_bin(&mut bin).unwrap();
        assert_eq!(read_indices_bin(&bin).unwrap(), vec![4, 0, 9]);
        let mut txt = Vec::new();
        m.write_indices_txt(&mut txt).unwrap();
        assert_eq!(String::from_utf8(txt).unwrap(), "4\n0\n9\n");
    }
}
