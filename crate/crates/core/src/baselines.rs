//! Comparison samplers: uniform random, uniform voxel grid, coarse-voxel
//! importance proxy, and k-nearest-neighbour scoring.
//!
//! Grid and proxy run as chunked passes over any [`PointSource`] and keep
//! only per-point voxel ids plus per-voxel accumulators. All samplers expect
//! channels that are already normalized.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::allocate::{partial_shuffle, water_fill, EmpiricalMeasure};
use crate::cloud::{cube_from_extent, BoundingCube};
use crate::error::{M3Error, Result};
use crate::morton::{encode_unchecked, morton_sort, BITS_PER_AXIS};
use crate::partition::{PartitionConfig, RangeAcc, VariationScorer};
use crate::rng::{self, Domain};
use crate::stream::{ChunkView, PointSource, DEFAULT_CHUNK};

/// Output of a baseline sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineSample {
    pub measure: EmpiricalMeasure,
    /// Random draws consumed, including rejected duplicates.
    pub draws: u64,
    /// Per-voxel scores (grid, proxy), per-point scores (knn), or empty.
    pub scores: Vec<f64>,
}

impl BaselineSample {
    fn new(indices: Vec<usize>, draws: u64, scores: Vec<f64>) -> Self {
        BaselineSample {
            measure: EmpiricalMeasure::uniform(indices),
            draws,
            scores,
        }
    }
}

/// `m` distinct indices out of `0..n`, uniformly without replacement.
pub fn random_sample(n: usize, m: usize, seed: u64) -> Result<EmpiricalMeasure> {
    if m > n {
        return Err(M3Error::precondition(format!("cannot draw {m} distinct indices from {n}")));
    }
    let mut rng = rng::stream(seed, Domain::Baseline, 0);
    Ok(EmpiricalMeasure::uniform(rand::seq::index::sample(&mut rng, n, m).into_vec()))
}

/// Bounding cube of a source in one chunked pass.
pub fn scan_bounds<S: PointSource>(source: &mut S) -> Result<BoundingCube> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    source.for_each_chunk(DEFAULT_CHUNK, &mut |_, chunk| {
        for p in chunk.positions {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Ok(())
    })?;
    if lo[0] > hi[0] {
        return Err(M3Error::EmptyCloud);
    }
    Ok(cube_from_extent(lo, hi))
}

/// Voxel occupancy and per-voxel range accumulators.
struct Voxels {
    of_point: Vec<u32>,
    keys: Vec<u64>,
    counts: Vec<usize>,
    acc: Vec<RangeAcc>,
    n_slots: usize,
}

impl Voxels {
    fn len(&self) -> usize {
        self.keys.len()
    }

    fn scores(&self, scorer: &VariationScorer) -> Vec<f64> {
        if self.n_slots == 0 {
            return vec![0.0; self.len()];
        }
        self.acc
            .chunks_exact(self.n_slots)
            .map(|a| scorer.score(a).delta)
            .collect()
    }

    /// Point indices grouped by voxel, with offsets.
    fn members(&self) -> (Vec<usize>, Vec<usize>) {
        let mut offsets = vec![0usize; self.len() + 1];
        for (v, c) in self.counts.iter().enumerate() {
            offsets[v + 1] = offsets[v] + c;
        }
        let mut fill = offsets.clone();
        let mut members = vec![0usize; self.of_point.len()];
        for (i, &v) in self.of_point.iter().enumerate() {
            members[fill[v as usize]] = i;
            fill[v as usize] += 1;
        }
        (members, offsets)
    }
}

fn voxelize<S: PointSource>(
    source: &mut S,
    cube: &BoundingCube,
    voxel_edge: f64,
    scorer: &VariationScorer,
) -> Result<Voxels> {
    if !(voxel_edge > 0.0 && voxel_edge.is_finite()) {
        return Err(M3Error::config("voxel edge must be positive"));
    }
    let per_axis = (cube.edge / voxel_edge).ceil().max(1.0);
    if per_axis > f64::from(1u32 << BITS_PER_AXIS) {
        return Err(M3Error::config("voxel edge too small for the lattice"));
    }
    let g = per_axis as u32;
    let n_slots = scorer.n_slots();
    let mut index: HashMap<u64, u32> = HashMap::new();
    let mut vox = Voxels {
        of_point: Vec::with_capacity(source.len()),
        keys: Vec::new(),
        counts: Vec::new(),
        acc: Vec::new(),
        n_slots,
    };
    let empty = scorer.empty_acc();
    source.for_each_chunk(DEFAULT_CHUNK, &mut |_, chunk: ChunkView<'_>| {
        for (i, p) in chunk.positions.iter().enumerate() {
            let lattice: [u32; 3] = std::array::from_fn(|a| {
                let t = ((p[a] - cube.origin[a]) / voxel_edge).floor();
                (t.max(0.0) as u32).min(g - 1)
            });
            let key = encode_unchecked(lattice).0;
            let v = *index.entry(key).or_insert_with(|| {
                vox.keys.push(key);
                vox.counts.push(0);
                vox.acc.extend_from_slice(&empty);
                (vox.keys.len() - 1) as u32
            });
            vox.counts[v as usize] += 1;
            vox.of_point.push(v);
            let slots = &mut vox.acc[v as usize * n_slots..(v as usize + 1) * n_slots];
            scorer.accumulate_row(&chunk, i, slots);
        }
        Ok(())
    })?;
    Ok(vox)
}

fn voxel_edge_for(cube: &BoundingCube, n: usize, occupancy: f64) -> f64 {
    let per_axis = (n as f64 / occupancy).cbrt().ceil().max(1.0);
    cube.edge / per_axis
}

/// Default grid resolution: about `kappa` points per voxel on average.
pub fn default_grid_edge(cube: &BoundingCube, n: usize, kappa: usize) -> f64 {
    voxel_edge_for(cube, n, kappa as f64)
}

/// Uniform voxel grid with per-voxel scores, sampled round-robin: voxels are
/// visited in a seeded random order and every nonempty voxel receives an
/// equal share, saturated voxels passing their remainder on.
pub fn grid_sample<S: PointSource>(
    mut source: S,
    scoring: &PartitionConfig,
    voxel_edge: Option<f64>,
    m: usize,
    seed: u64,
) -> Result<BaselineSample> {
    let n = source.len();
    if n == 0 {
        return Err(M3Error::EmptyCloud);
    }
    let scorer = scoring.scorer(source.n_scalar(), source.n_vector())?;
    let cube = scan_bounds(&mut source)?;
    let edge = voxel_edge.unwrap_or_else(|| default_grid_edge(&cube, n, scoring.kappa));
    let vox = voxelize(&mut source, &cube, edge, &scorer)?;
    let scores = vox.scores(&scorer);
    if m >= n {
        return Ok(BaselineSample::new((0..n).collect(), 0, scores));
    }
    let mut rng = rng::stream(seed, Domain::Baseline, 0);
    let mut order: Vec<usize> = (0..vox.len()).collect();
    order.shuffle(&mut rng);
    let caps: Vec<usize> = order.iter().map(|&v| vox.counts[v]).collect();
    let quotas = water_fill(&caps, m)?;
    let (members, offsets) = vox.members();
    let mut out = Vec::with_capacity(m);
    let mut pool = Vec::new();
    let mut draws = 0u64;
    for (&v, &q) in order.iter().zip(&quotas) {
        if q == 0 {
            continue;
        }
        pool.clear();
        pool.extend_from_slice(&members[offsets[v]..offsets[v + 1]]);
        let mut r = rng::stream(seed, Domain::Baseline, vox.keys[v].wrapping_add(1));
        partial_shuffle(&mut pool, q, &mut r);
        out.extend_from_slice(&pool[..q]);
        draws += q as u64;
    }
    Ok(BaselineSample::new(out, draws, scores))
}

/// Coarse voxels (about `occupancy` points each) with importance
/// `score + eps`. Each draw picks a voxel proportionally to importance and a
/// uniform point inside it; duplicates are rejected and counted. Voxels whose
/// points are all taken drop out of the draw.
pub fn proxy_sample<S: PointSource>(
    mut source: S,
    scoring: &PartitionConfig,
    occupancy: usize,
    eps: f64,
    m: usize,
    seed: u64,
) -> Result<BaselineSample> {
    let n = source.len();
    if n == 0 {
        return Err(M3Error::EmptyCloud);
    }
    if occupancy == 0 || !(eps > 0.0) {
        return Err(M3Error::config("proxy needs occupancy >= 1 and eps > 0"));
    }
    let scorer = scoring.scorer(source.n_scalar(), source.n_vector())?;
    let cube = scan_bounds(&mut source)?;
    let vox = voxelize(&mut source, &cube, voxel_edge_for(&cube, n, occupancy as f64), &scorer)?;
    let scores = vox.scores(&scorer);
    if m >= n {
        return Ok(BaselineSample::new((0..n).collect(), 0, scores));
    }
    let (members, offsets) = vox.members();
    let mut weight: Vec<f64> = scores.iter().map(|s| s + eps).collect();
    let cumulative = |w: &[f64]| {
        let mut acc = 0.0;
        w.iter().map(|x| {
            acc += x;
            acc
        }).collect::<Vec<f64>>()
    };
    let mut cum = cumulative(&weight);
    let mut taken = vec![false; n];
    let mut left = vox.counts.clone();
    let mut rng = rng::stream(seed, Domain::Baseline, 0);
    let mut out = Vec::with_capacity(m);
    let mut draws = 0u64;
    while out.len() < m {
        let total = *cum.last().unwrap();
        let u = rng.random::<f64>() * total;
        let v = cum.partition_point(|&c| c <= u).min(weight.len() - 1);
        if weight[v] == 0.0 {
            continue;
        }
        draws += 1;
        let i = members[rng.random_range(offsets[v]..offsets[v + 1])];
        if taken[i] {
            continue;
        }
        taken[i] = true;
        out.push(i);
        left[v] -= 1;
        if left[v] == 0 {
            weight[v] = 0.0;
            cum = cumulative(&weight);
        }
    }
    Ok(BaselineSample::new(out, draws, scores))
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KnnConfig {
    /// Neighbourhood size, the point itself included.
    pub k: usize,
    /// Restrict candidates to this many Morton-order neighbours on each side
    /// (approximate, timing only). `None` is the exact all-pairs search.
    pub window: Option<usize>,
    pub time_limit: Option<Duration>,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig { k: 32, window: None, time_limit: None }
    }
}

/// Bounded max-list of the `k` best `(d2, index)` pairs.
struct Nearest {
    items: Vec<(f64, usize)>,
    k: usize,
}

impl Nearest {
    fn new(k: usize) -> Self {
        Nearest { items: Vec::with_capacity(k + 1), k }
    }

    #[inline]
    fn bound(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    #[inline]
    fn offer(&mut self, d2: f64, j: usize) {
        if self.items.len() == self.k {
            let last = self.items[self.k - 1];
            if (d2, j) >= last {
                return;
            }
            self.items.pop();
        }
        let pos = self.items.partition_point(|&e| e < (d2, j));
        self.items.insert(pos, (d2, j));
    }
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

/// In-memory copy of a source, needed for random access to neighbours.
struct Table {
    positions: Vec<[f64; 3]>,
    scalars: Vec<Vec<f64>>,
    vectors: Vec<Vec<[f64; 3]>>,
}

impl Table {
    fn load<S: PointSource>(source: &mut S) -> Result<Self> {
        let mut t = Table {
            positions: Vec::with_capacity(source.len()),
            scalars: vec![Vec::with_capacity(source.len()); source.n_scalar()],
            vectors: vec![Vec::with_capacity(source.len()); source.n_vector()],
        };
        source.for_each_chunk(DEFAULT_CHUNK, &mut |_, chunk| {
            t.positions.extend_from_slice(chunk.positions);
            for (dst, src) in t.scalars.iter_mut().zip(&chunk.scalars) {
                dst.extend_from_slice(src);
            }
            for (dst, src) in t.vectors.iter_mut().zip(&chunk.vectors) {
                dst.extend_from_slice(src);
            }
            Ok(())
        })?;
        Ok(t)
    }

    fn view(&self) -> ChunkView<'_> {
        ChunkView {
            positions: &self.positions,
            scalars: self.scalars.iter().map(|v| v.as_slice()).collect(),
            vectors: self.vectors.iter().map(|v| v.as_slice()).collect(),
        }
    }
}

/// Pooled score of every point's k-neighbourhood.
pub fn knn_scores<S: PointSource>(mut source: S, scoring: &PartitionConfig, config: &KnnConfig) -> Result<Vec<f64>> {
    let n = source.len();
    if config.k == 0 {
        return Err(M3Error::config("k must be at least 1"));
    }
    if n < config.k {
        return Err(M3Error::precondition(format!("knn needs N >= k ({n} < {})", config.k)));
    }
    let scorer = scoring.scorer(source.n_scalar(), source.n_vector())?;
    let table = Table::load(&mut source)?;
    let view = table.view();
    let start = Instant::now();
    let expired = AtomicBool::new(false);
    let over = || {
        config.time_limit.is_some_and(|t| start.elapsed() > t) && {
            expired.store(true, Ordering::Relaxed);
            true
        }
    };
    let pos = &table.positions;
    let k = config.k;

    let order: Option<Vec<usize>> = match config.window {
        Some(_) => Some(morton_sort_positions(pos)?),
        None => None,
    };
    let rank: Option<Vec<usize>> = order.as_ref().map(|o| {
        let mut r = vec![0; n];
        for (s, &i) in o.iter().enumerate() {
            r[i] = s;
        }
        r
    });

    const BLOCK: usize = 64;
    let scores: Vec<Vec<f64>> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            if expired.load(Ordering::Relaxed) || over() {
                return Vec::new();
            }
            let mut acc = scorer.empty_acc();
            let mut near = Nearest::new(k);
            (b * BLOCK..((b + 1) * BLOCK).min(n))
                .map(|i| {
                    near.items.clear();
                    let p = &pos[i];
                    match (&order, &rank, config.window) {
                        (Some(order), Some(rank), Some(w)) => {
                            let w = w.max(k);
                            let s = rank[i];
                            let lo = s.saturating_sub(w);
                            let hi = (s + w + 1).min(n);
                            for &j in &order[lo..hi] {
                                near.offer(dist2(p, &pos[j]), j);
                            }
                        }
                        _ => {
                            for (j, q) in pos.iter().enumerate() {
                                let d2 = dist2(p, q);
                                if d2 <= near.bound() {
                                    near.offer(d2, j);
                                }
                            }
                        }
                    }
                    VariationScorer::reset(&mut acc);
                    for &(_, j) in &near.items {
                        scorer.accumulate_row(&view, j, &mut acc);
                    }
                    scorer.score(&acc).delta
                })
                .collect()
        })
        .collect();
    if expired.load(Ordering::Relaxed) {
        return Err(M3Error::Timeout {
            limit_s: config.time_limit.map_or(0.0, |t| t.as_secs_f64()),
        });
    }
    Ok(scores.into_iter().flatten().collect())
}

fn morton_sort_positions(pos: &[[f64; 3]]) -> Result<Vec<usize>> {
    let cloud = crate::cloud::LabeledPointCloud {
        positions: pos.to_vec(),
        scalars: Vec::new(),
        vectors: Vec::new(),
        geom_weights: None,
        norm_stats: None,
    };
    let cube = cloud.compute_bounds()?;
    Ok(morton_sort(&cloud, &cube)?.perm)
}

/// Scores every point over its k-neighbourhood and keeps the `m` highest,
/// ties broken by lower index.
pub fn knn_sample<S: PointSource>(
    source: S,
    scoring: &PartitionConfig,
    config: &KnnConfig,
    m: usize,
) -> Result<BaselineSample> {
    let scores = knn_scores(source, scoring, config)?;
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.par_sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(m.min(n));
    Ok(BaselineSample::new(idx, 0, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{LabeledPointCloud, ScalarChannel};

    fn cloud_with(positions: Vec<[f64; 3]>, values: Vec<f64>) -> LabeledPointCloud {
        LabeledPointCloud::new(positions, vec![ScalarChannel { name: "p".into(), values }], vec![], None).unwrap()
    }

    fn lattice_cloud(n_side: usize) -> LabeledPointCloud {
        let mut pos = Vec::new();
        for i in 0..n_side {
            for j in 0..n_side {
                for k in 0..n_side {
                    pos.push([i as f64, j as f64, k as f64]);
                }
            }
        }
        let n = pos.len();
        cloud_with(pos, vec![0.0; n])
    }

    fn distinct(idx: &[usize]) -> bool {
        let mut v = idx.to_vec();
        v.sort_unstable();
        v.windows(2).all(|w| w[0] < w[1])
    }

    #[test]
    fn random_trivial_cases() {
        assert_eq!(random_sample(5, 5, 1).unwrap().indices.len(), 5);
        assert!(random_sample(5, 0, 1).unwrap().is_empty());
        assert!(random_sample(5, 6, 1).is_err());
        let a = random_sample(1000, 100, 4).unwrap();
        assert_eq!(a, random_sample(1000, 100, 4).unwrap());
        assert!(distinct(&a.indices));
    }

    #[test]
    fn grid_round_robin_saturates_small_voxel() {
        let mut pos = vec![[0.1, 0.1, 0.1]; 10];
        pos.extend(vec![[0.9, 0.9, 0.9]; 1000]);
        pos[0] = [0.0; 3];
        pos[1010 - 1] = [1.0; 3];
        let cloud = cloud_with(pos, vec![0.0; 1010]);
        let s = grid_sample(&cloud, &PartitionConfig::default(), Some(0.5), 20, 3).unwrap();
        let small = s.measure.indices.iter().filter(|&&i| i < 10).count();
        assert_eq!(small, 10);
        assert_eq!(s.measure.len(), 20);
        assert!(distinct(&s.measure.indices));
    }

    #[test]
    fn samplers_return_everything_when_m_reaches_n() {
        let cloud = lattice_cloud(4);
        let cfg = PartitionConfig::default();
        for s in [
            grid_sample(&cloud, &cfg, None, 64, 1).unwrap(),
            proxy_sample(&cloud, &cfg, 256, 1e-6, 100, 1).unwrap(),
            knn_sample(&cloud, &cfg, &KnnConfig::default(), 64).unwrap(),
        ] {
            assert_eq!(s.measure.indices, (0..64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn knn_constant_field_takes_first_indices() {
        let cloud = lattice_cloud(5);
        let s = knn_sample(&cloud, &PartitionConfig::default(), &KnnConfig::default(), 7).unwrap();
        assert_eq!(s.measure.indices, (0..7).collect::<Vec<_>>());
        assert!(knn_sample(&lattice_cloud(3), &PartitionConfig::default(), &KnnConfig::default(), 1).is_err());
    }

    #[test]
    fn knn_deadline_reports_timeout() {
        let cloud = lattice_cloud(20);
        let cfg = KnnConfig { time_limit: Some(Duration::ZERO), ..KnnConfig::default() };
        assert!(matches!(
            knn_scores(&cloud, &PartitionConfig::default(), &cfg),
            Err(M3Error::Timeout { .. })
        ));
    }

    #[test]
    fn proxy_is_deterministic_and_distinct() {
        let cloud = lattice_cloud(12);
        let cfg = PartitionConfig::default();
        let a = proxy_sample(&cloud, &cfg, 64, 1e-6, 500, 8).unwrap();
        let b = proxy_sample(&cloud, &cfg, 64, 1e-6, 500, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.measure.len(), 500);
        assert!(distinct(&a.measure.indices));
        assert!(a.draws >= 500);
    }
}
