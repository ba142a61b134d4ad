//! Variation-adaptive octree refinement over the Morton-sorted cloud.
//!
//! A cell is refined while it holds more than `kappa` points, sits above
//! `g_max`, and its pooled variation score exceeds `eps_refine`. The score is
//! the largest weighted within-cell range over all channels: plain ranges for
//! scalars, projection diameters over a fixed direction set for vectors.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::LabeledPointCloud;
use crate::error::{M3Error, Result};
use crate::morton::{MortonKey, SortedIndex, MAX_DEPTH};
use crate::stream::ChunkView;

/// Channel identity by declaration index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelId {
    Scalar(usize),
    Vector(usize),
}

/// The 13-direction cube stencil: 3 axes, 6 face diagonals, 4 body diagonals.
pub fn cube_directions() -> Vec<[f64; 3]> {
    let raw: [[f64; 3]; 13] = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 0.0],
        [1.0, -1.0, 0.0],
        [1.0, 0.0, 1.0],
        [1.0, 0.0, -1.0],
        [0.0, 1.0, 1.0],
        [0.0, 1.0, -1.0],
        [1.0, 1.0, 1.0],
        [1.0, 1.0, -1.0],
        [1.0, -1.0, 1.0],
        [-1.0, 1.0, 1.0],
    ];
    raw.iter().map(|d| normalize(*d)).collect()
}

fn normalize(d: [f64; 3]) -> [f64; 3] {
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    [d[0] / n, d[1] / n, d[2] / n]
}

#[inline]
fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub eps_refine: f64,
    pub g_max: u32,
    /// Per-cell point cap.
    pub kappa: usize,
    pub directions: Vec<[f64; 3]>,
    /// One entry per scalar channel, or a single entry applied to all.
    pub scalar_weights: Vec<f64>,
    /// One entry per vector channel, or a single entry applied to all.
    pub vector_weights: Vec<f64>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            eps_refine: 0.05,
            g_max: 8,
            kappa: 32,
            directions: cube_directions(),
            scalar_weights: vec![1.0],
            vector_weights: vec![0.4],
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_refine > 0.0 && self.eps_refine.is_finite()) {
            return Err(M3Error::config("eps_refine must be positive"));
        }
        if self.g_max > MAX_DEPTH {
            return Err(M3Error::config(format!("g_max must be at most {MAX_DEPTH}")));
        }
        if self.kappa < 1 {
            return Err(M3Error::config("kappa must be at least 1"));
        }
        for d in &self.directions {
            if (dot(d, d).sqrt() - 1.0).abs() > 1e-12 {
                return Err(M3Error::config(format!("direction {d:?} is not unit-norm")));
            }
        }
        let weights = self.scalar_weights.iter().chain(&self.vector_weights);
        if weights.clone().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(M3Error::config("channel weights must be finite and >= 0"));
        }
        Ok(())
    }

    /// Builds the scorer for a cloud with the given channel counts.
    pub fn scorer(&self, n_scalar: usize, n_vector: usize) -> Result<VariationScorer> {
        self.validate()?;
        let scalar_w = broadcast(&self.scalar_weights, n_scalar, "scalar")?;
        let vector_w = broadcast(&self.vector_weights, n_vector, "vector")?;
        if !scalar_w.iter().chain(&vector_w).any(|w| *w > 0.0) {
            return Err(M3Error::config("at least one channel needs a positive weight"));
        }
        if n_vector > 0 && self.directions.is_empty() {
            return Err(M3Error::config("vector channels need a nonempty direction set"));
        }
        Ok(VariationScorer {
            directions: self.directions.clone(),
            scalar_w,
            vector_w,
        })
    }
}

fn broadcast(w: &[f64], n: usize, what: &str) -> Result<Vec<f64>> {
    match w.len() {
        _ if n == 0 => Ok(Vec::new()),
        1 => Ok(vec![w[0]; n]),
        len if len == n => Ok(w.to_vec()),
        len => Err(M3Error::config(format!(
            "{len} {what} weights for {n} {what} channels"
        ))),
    }
}

/// Largest spread of `d . v` over the points, maximized over directions.
pub fn projection_diameter(points: &[[f64; 3]], directions: &[[f64; 3]]) -> f64 {
    directions
        .iter()
        .map(|d| {
            let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let t = dot(d, p);
                (lo.min(t), hi.max(t))
            });
            if points.is_empty() {
                0.0
            } else {
                hi - lo
            }
        })
        .fold(0.0, f64::max)
}

/// Result of scoring one cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub delta: f64,
    pub trigger: Option<ChannelId>,
}

/// Resolved scoring tuple (directions and per-channel weights). Works on
/// running `[min, max]` accumulators, one slot per scalar channel and one per
/// (vector channel, direction) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationScorer {
    directions: Vec<[f64; 3]>,
    scalar_w: Vec<f64>,
    vector_w: Vec<f64>,
}

pub type RangeAcc = [f64; 2];
const EMPTY_RANGE: RangeAcc = [f64::INFINITY, f64::NEG_INFINITY];

impl VariationScorer {
    pub fn n_scalar(&self) -> usize {
        self.scalar_w.len()
    }

    pub fn n_vector(&self) -> usize {
        self.vector_w.len()
    }

    pub fn directions(&self) -> &[[f64; 3]] {
        &self.directions
    }

    pub fn n_slots(&self) -> usize {
        self.scalar_w.len() + self.vector_w.len() * self.directions.len()
    }

    pub fn empty_acc(&self) -> Vec<RangeAcc> {
        vec![EMPTY_RANGE; self.n_slots()]
    }

    pub fn reset(acc: &mut [RangeAcc]) {
        acc.fill(EMPTY_RANGE);
    }

    /// Accumulates the span `lo..hi` of column-major channel data.
    pub fn accumulate_span(&self, cols: &ChannelColumns, lo: usize, hi: usize, acc: &mut [RangeAcc]) {
        let ns = self.n_scalar();
        for (k, col) in cols.scalars.iter().enumerate() {
            let r = &mut acc[k];
            for &v in &col[lo..hi] {
                r[0] = r[0].min(v);
                r[1] = r[1].max(v);
            }
        }
        let nd = self.directions.len();
        for (j, col) in cols.vectors.iter().enumerate() {
            let slots = &mut acc[ns + j * nd..ns + (j + 1) * nd];
            for v in &col[lo..hi] {
                for (r, d) in slots.iter_mut().zip(&self.directions) {
                    let t = dot(d, v);
                    r[0] = r[0].min(t);
                    r[1] = r[1].max(t);
                }
            }
        }
    }

    /// Accumulates row `i` of a chunk.
    #[inline]
    pub fn accumulate_row(&self, chunk: &ChunkView<'_>, i: usize, acc: &mut [RangeAcc]) {
        let ns = self.n_scalar();
        for (k, col) in chunk.scalars.iter().enumerate() {
            let v = col[i];
            acc[k][0] = acc[k][0].min(v);
            acc[k][1] = acc[k][1].max(v);
        }
        let nd = self.directions.len();
        for (j, col) in chunk.vectors.iter().enumerate() {
            let v = &col[i];
            let slots = &mut acc[ns + j * nd..ns + (j + 1) * nd];
            for (r, d) in slots.iter_mut().zip(&self.directions) {
                let t = dot(d, v);
                r[0] = r[0].min(t);
                r[1] = r[1].max(t);
            }
        }
    }

    pub fn merge(into: &mut [RangeAcc], other: &[RangeAcc]) {
        for (a, b) in into.iter_mut().zip(other) {
            a[0] = a[0].min(b[0]);
            a[1] = a[1].max(b[1]);
        }
    }

    /// Weighted variation of every channel, scalars first.
    pub fn channel_variations<'a>(&'a self, acc: &'a [RangeAcc]) -> impl Iterator<Item = (ChannelId, f64)> + 'a {
        let ns = self.n_scalar();
        let nd = self.directions.len();
        let spread = |r: &RangeAcc| if r[1] >= r[0] { r[1] - r[0] } else { 0.0 };
        let scalars = (0..ns).map(move |k| (ChannelId::Scalar(k), self.scalar_w[k] * spread(&acc[k])));
        let vectors = (0..self.n_vector()).map(move |j| {
            let diam = acc[ns + j * nd..ns + (j + 1) * nd]
                .iter()
                .map(spread)
                .fold(0.0, f64::max);
            (ChannelId::Vector(j), self.vector_w[j] * diam)
        });
        scalars.chain(vectors)
    }

    /// Pooled score: maximum weighted variation; ties go to the earlier
    /// channel (scalars before vectors, then declaration order).
    pub fn score(&self, acc: &[RangeAcc]) -> Score {
        let mut best = Score { delta: 0.0, trigger: None };
        for (ch, v) in self.channel_variations(acc) {
            if best.trigger.is_none() || v > best.delta {
                best = Score { delta: v, trigger: Some(ch) };
            }
        }
        best
    }
}

/// Channel data laid out column-wise, typically gathered into Morton order.
#[derive(Clone, Debug, Default)]
pub struct ChannelColumns {
    pub scalars: Vec<Vec<f64>>,
    pub vectors: Vec<Vec<[f64; 3]>>,
}

impl ChannelColumns {
    pub fn gather(cloud: &LabeledPointCloud, sorted: &SortedIndex) -> Self {
        ChannelColumns {
            scalars: cloud.scalars.iter().map(|c| sorted.gather(&c.values)).collect(),
            vectors: cloud.vectors.iter().map(|c| sorted.gather(&c.values)).collect(),
        }
    }
}

/// Per-block range summaries over Morton-ordered columns, so that the range
/// of a long span costs one merge per block plus the two ragged ends.
pub struct SpanIndex<'a> {
    cols: &'a ChannelColumns,
    n_slots: usize,
    blocks: Vec<RangeAcc>,
}

const SPAN_BLOCK: usize = 16;

impl<'a> SpanIndex<'a> {
    pub fn new(scorer: &VariationScorer, cols: &'a ChannelColumns, n: usize) -> Self {
        let n_slots = scorer.n_slots();
        let mut blocks = vec![EMPTY_RANGE; n.div_ceil(SPAN_BLOCK) * n_slots];
        if n_slots > 0 {
            blocks.par_chunks_mut(n_slots).enumerate().for_each(|(b, acc)| {
                let lo = b * SPAN_BLOCK;
                scorer.accumulate_span(cols, lo, (lo + SPAN_BLOCK).min(n), acc);
            });
        }
        SpanIndex { cols, n_slots, blocks }
    }

    /// Same result as `scorer.accumulate_span(cols, lo, hi, acc)`.
    pub fn accumulate(&self, scorer: &VariationScorer, lo: usize, hi: usize, acc: &mut [RangeAcc]) {
        let first = lo.div_ceil(SPAN_BLOCK);
        let last = hi / SPAN_BLOCK;
        if first >= last {
            scorer.accumulate_span(self.cols, lo, hi, acc);
            return;
        }
        scorer.accumulate_span(self.cols, lo, first * SPAN_BLOCK, acc);
        for b in first..last {
            VariationScorer::merge(acc, &self.blocks[b * self.n_slots..(b + 1) * self.n_slots]);
        }
        scorer.accumulate_span(self.cols, last * SPAN_BLOCK, hi, acc);
    }
}

/// Direct evaluation of the pooled score for a set of points given as
/// per-channel value lists.
pub fn cell_variation_score(
    scalars: &[&[f64]],
    vectors: &[&[[f64; 3]]],
    scorer: &VariationScorer,
) -> Score {
    let cols = ChannelColumns {
        scalars: scalars.iter().map(|s| s.to_vec()).collect(),
        vectors: vectors.iter().map(|v| v.to_vec()).collect(),
    };
    let n = scalars
        .first()
        .map(|s| s.len())
        .or_else(|| vectors.first().map(|v| v.len()))
        .unwrap_or(0);
    let mut acc = scorer.empty_acc();
    scorer.accumulate_span(&cols, 0, n, &mut acc);
    scorer.score(&acc)
}

/// Why refinement stopped at a leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    PointCap,
    DepthCap,
    LowVariation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    /// Anchor (lowest) key of the octree cell.
    pub key: MortonKey,
    pub depth: u32,
    /// Span in the sorted order.
    pub lo: usize,
    pub hi: usize,
    pub width: f64,
    pub delta: f64,
    pub trigger: Option<ChannelId>,
    pub stop: StopRule,
}

impl Cell {
    pub fn n(&self) -> usize {
        self.hi - self.lo
    }
}

/// Exceedance and split counters per channel.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineStats {
    pub scalar_threshold: Vec<u64>,
    pub vector_threshold: Vec<u64>,
    pub scalar_refine: Vec<u64>,
    pub vector_refine: Vec<u64>,
}

impl RefineStats {
    fn new(ns: usize, nv: usize) -> Self {
        RefineStats {
            scalar_threshold: vec![0; ns],
            vector_threshold: vec![0; nv],
            scalar_refine: vec![0; ns],
            vector_refine: vec![0; nv],
        }
    }

    pub fn n_thr_s(&self) -> u64 {
        self.scalar_threshold.iter().sum()
    }

    pub fn n_thr_v(&self) -> u64 {
        self.vector_threshold.iter().sum()
    }

    pub fn n_refine_s(&self) -> u64 {
        self.scalar_refine.iter().sum()
    }

    pub fn n_refine_v(&self) -> u64 {
        self.vector_refine.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    /// Leaves in Morton order; their spans tile `0..N`.
    pub cells: Vec<Cell>,
    pub stats: RefineStats,
    pub config: PartitionConfig,
    pub edge: f64,
    pub scalar_names: Vec<String>,
    pub vector_names: Vec<String>,
}

pub fn build_partition(
    cloud: &LabeledPointCloud,
    sorted: &SortedIndex,
    config: &PartitionConfig,
) -> Result<Partition> {
    if sorted.len() != cloud.len() {
        return Err(M3Error::precondition("sorted index does not match the cloud"));
    }
    let scorer = config.scorer(cloud.scalars.len(), cloud.vectors.len())?;
    let cols = ChannelColumns::gather(cloud, sorted);
    let spans = SpanIndex::new(&scorer, &cols, sorted.len());
    let edge = sorted.cube.edge;
    let mut stats = RefineStats::new(scorer.n_scalar(), scorer.n_vector());
    let mut cells = Vec::new();
    let mut acc = scorer.empty_acc();
    let mut stack = vec![(MortonKey(0), 0u32, 0usize, sorted.len())];

    while let Some((key, depth, lo, hi)) = stack.pop() {
        let n = hi - lo;
        VariationScorer::reset(&mut acc);
        spans.accumulate(&scorer, lo, hi, &mut acc);
        let score = scorer.score(&acc);
        let capped = if n <= config.kappa {
            Some(StopRule::PointCap)
        } else if depth >= config.g_max {
            Some(StopRule::DepthCap)
        } else {
            None
        };
        let stop = match capped {
            Some(rule) => Some(rule),
            None => {
                for (ch, v) in scorer.channel_variations(&acc) {
                    if v > config.eps_refine {
                        match ch {
                            ChannelId::Scalar(k) => stats.scalar_threshold[k] += 1,
                            ChannelId::Vector(j) => stats.vector_threshold[j] += 1,
                        }
                    }
                }
                (score.delta <= config.eps_refine).then_some(StopRule::LowVariation)
            }
        };
        if let Some(stop) = stop {
            cells.push(Cell {
                key,
                depth,
                lo,
                hi,
                width: edge / f64::from(1u32 << depth),
                delta: score.delta,
                trigger: score.trigger,
                stop,
            });
            continue;
        }
        match score.trigger {
            Some(ChannelId::Scalar(k)) => stats.scalar_refine[k] += 1,
            Some(ChannelId::Vector(j)) => stats.vector_refine[j] += 1,
            None => {}
        }
        let keys = &sorted.keys[lo..hi];
        let shift = 3 * (MAX_DEPTH - depth - 1);
        let mut children = Vec::with_capacity(8);
        let mut start = 0;
        for octant in 0..8u8 {
            let end = start + keys[start..].partition_point(|k| k.octant(depth) <= octant);
            if end > start {
                children.push((MortonKey(key.0 | (u64::from(octant) << shift)), depth + 1, lo + start, lo + end));
            }
            start = end;
        }
        stack.extend(children.into_iter().rev());
    }

    Ok(Partition {
        cells,
        stats,
        config: config.clone(),
        edge,
        scalar_names: cloud.scalars.iter().map(|c| c.name.clone()).collect(),
        vector_names: cloud.vectors.iter().map(|c| c.name.clone()).collect(),
    })
}

impl Partition {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.cells.last().map_or(0, |c| c.hi)
    }

    /// Re-evaluates the recorded stop rule of a leaf.
    pub fn stop_rule_holds(&self, cell: &Cell) -> bool {
        match cell.stop {
            StopRule::PointCap => cell.n() <= self.config.kappa,
            StopRule::DepthCap => cell.depth >= self.config.g_max,
            StopRule::LowVariation => cell.delta <= self.config.eps_refine,
        }
    }

    /// Cell index of every original point index.
    pub fn point_cells(&self, sorted: &SortedIndex) -> Vec<u32> {
        let mut out = vec![0u32; sorted.len()];
        for (c, cell) in self.cells.iter().enumerate() {
            for &i in &sorted.perm[cell.lo..cell.hi] {
                out[i] = c as u32;
            }
        }
        out
    }

    fn channel_label(&self, ch: Option<ChannelId>) -> Option<String> {
        ch.map(|c| match c {
            ChannelId::Scalar(k) => format!("s:{}", self.scalar_names[k]),
            ChannelId::Vector(j) => format!("v:{}", self.vector_names[j]),
        })
    }

    /// One JSON object per cell:
    /// `{key, depth, lo, hi, n, h, delta, trigger}`.
    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            key: u64,
            depth: u32,
            lo: usize,
            hi: usize,
            n: usize,
            h: f64,
            delta: f64,
            trigger: Option<&'a str>,
        }
        for cell in &self.cells {
            let trigger = self.channel_label(cell.trigger);
            let line = Line {
                key: cell.key.0,
                depth: cell.depth,
                lo: cell.lo,
                hi: cell.hi,
                n: cell.n(),
                h: cell.width,
                delta: cell.delta,
                trigger: trigger.as_deref(),
            };
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
