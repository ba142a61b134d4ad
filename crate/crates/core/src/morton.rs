//! Lattice quantization and 63-bit Morton (Z-order) keys.
//!
//! Keys interleave 21 bits per axis with x in the least-significant slot, so
//! bit `3*i` is bit `i` of x, `3*i + 1` of y and `3*i + 2` of z. Points in the
//! same depth-`d` octree cell share the top `3*d` bits of their keys, which
//! makes every cell a contiguous span of the sorted order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{BoundingCube, LabeledPointCloud};
use crate::error::{M3Error, Result};

pub const BITS_PER_AXIS: u32 = 21;
pub const MAX_DEPTH: u32 = BITS_PER_AXIS;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MortonKey(pub u64);

impl MortonKey {
    /// Mask keeping the top `3 * depth` bits of a full-resolution key.
    pub fn depth_mask(depth: u32) -> u64 {
        debug_assert!(depth <= MAX_DEPTH);
        let low = 3 * (MAX_DEPTH - depth);
        if low >= 64 {
            0
        } else {
            !((1u64 << low) - 1) & ((1u64 << (3 * MAX_DEPTH)) - 1)
        }
    }

    /// Anchor key (lowest key) of the depth-`depth` cell holding this key.
    pub fn cell_anchor(self, depth: u32) -> MortonKey {
        MortonKey(self.0 & Self::depth_mask(depth))
    }

    /// Octant (0..8) selected at the split from `depth` to `depth + 1`.
    pub fn octant(self, depth: u32) -> u8 {
        ((self.0 >> (3 * (MAX_DEPTH - depth - 1))) & 7) as u8
    }
}

/// Maps a position onto the `2^bits` lattice of `cube`.
pub fn quantize(position: &[f64; 3], cube: &BoundingCube, bits: u32) -> Result<[u32; 3]> {
    if !(1..=BITS_PER_AXIS).contains(&bits) {
        return Err(M3Error::config(format!("bits must be in 1..=21, got {bits}")));
    }
    let scale = (1u64 << bits) as f64;
    let top = (1u32 << bits) - 1;
    let mut out = [0u32; 3];
    for a in 0..3 {
        let t = (position[a] - cube.origin[a]) / cube.edge;
        if !(0.0..=1.0).contains(&t) {
            return Err(M3Error::OutOfDomain { position: *position });
        }
        out[a] = ((t * scale).floor() as u64).min(top as u64) as u32;
    }
    Ok(out)
}

#[inline]
fn spread(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

#[inline]
fn compact(v: u64) -> u32 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x as u32
}

pub fn morton_encode(lattice: [u32; 3]) -> Result<MortonKey> {
    for &c in &lattice {
        if c >= 1 << BITS_PER_AXIS {
            return Err(M3Error::CoordinateOverflow {
                value: c,
                bits: BITS_PER_AXIS,
            });
        }
    }
    Ok(encode_unchecked(lattice))
}

#[inline]
pub(crate) fn encode_unchecked(l: [u32; 3]) -> MortonKey {
    MortonKey(spread(l[0] as u64) | (spread(l[1] as u64) << 1) | (spread(l[2] as u64) << 2))
}

pub fn morton_decode(key: MortonKey) -> [u32; 3] {
    [compact(key.0), compact(key.0 >> 1), compact(key.0 >> 2)]
}

/// Full-resolution key of a position inside `cube`.
pub fn point_key(position: &[f64; 3], cube: &BoundingCube) -> Result<MortonKey> {
    Ok(encode_unchecked(quantize(position, cube, BITS_PER_AXIS)?))
}

/// Points ordered by Morton key. `keys[i]` is the key of point `perm[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SortedIndex {
    pub perm: Vec<usize>,
    pub keys: Vec<MortonKey>,
    pub cube: BoundingCube,
}

impl SortedIndex {
    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Gathers a per-point column into Morton order.
    pub fn gather<T: Copy>(&self, column: &[T]) -> Vec<T> {
        self.perm.iter().map(|&i| column[i]).collect()
    }
}

/// Stable sort of the cloud by Morton key (ties keep input order). The result
/// does not depend on the number of worker threads.
pub fn morton_sort(cloud: &LabeledPointCloud, cube: &BoundingCube) -> Result<SortedIndex> {
    if cloud.is_empty() {
        return Err(M3Error::EmptyCloud);
    }
    let scale = (1u64 << BITS_PER_AXIS) as f64;
    let top = (1u64 << BITS_PER_AXIS) - 1;
    const CHUNK: usize = 1 << 14;
    let mut pairs = vec![(0u64, 0usize); cloud.len()];
    pairs.par_chunks_mut(CHUNK).enumerate().for_each(|(c, out)| {
        let base = c * CHUNK;
        for (j, slot) in out.iter_mut().enumerate() {
            let i = base + j;
            let p = &cloud.positions[i];
            let mut l = [0u32; 3];
            *slot = (u64::MAX, i);
            for a in 0..3 {
                let t = (p[a] - cube.origin[a]) / cube.edge;
                // NaN and out-of-cube coordinates keep the sentinel key
                if !(0.0..=1.0).contains(&t) {
                    break;
                }
                l[a] = ((t * scale).floor() as u64).min(top) as u32;
                if a == 2 {
                    slot.0 = encode_unchecked(l).0;
                }
            }
        }
    });
    if let Some(&(_, i)) = pairs.iter().find(|p| p.0 == u64::MAX) {
        return Err(M3Error::OutOfDomain { position: cloud.positions[i] });
    }
    radix_sort_by_key(&mut pairs);
    let (keys, perm) = pairs.into_iter().map(|(k, i)| (MortonKey(k), i)).unzip();
    Ok(SortedIndex {
        perm,
        keys,
        cube: *cube,
    })
}

/// Stable LSD radix sort on the 63-bit key, 16 bits per pass. Passes whose
/// digit is the same for every key are skipped.
fn radix_sort_by_key(pairs: &mut Vec<(u64, usize)>) {
    const DIGIT: u32 = 16;
    const BUCKETS: usize = 1 << DIGIT;
    let passes = (3 * BITS_PER_AXIS).div_ceil(DIGIT);
    let mut counts = vec![vec![0usize; BUCKETS]; passes as usize];
    for &(k, _) in pairs.iter() {
        for (p, c) in counts.iter_mut().enumerate() {
            c[((k >> (p as u32 * DIGIT)) as usize) & (BUCKETS - 1)] += 1;
        }
    }
    let n = pairs.len();
    let mut buf = vec![(0u64, 0usize); n];
    for (p, c) in counts.iter().enumerate() {
        if c.contains(&n) {
            continue;
        }
        let mut offsets = vec![0usize; BUCKETS];
        let mut total = 0;
        for (o, &x) in offsets.iter_mut().zip(c.iter()) {
            *o = total;
            total += x;
        }
        let shift = p as u32 * DIGIT;
        for &pair in pairs.iter() {
            let d = ((pair.0 >> shift) as usize) & (BUCKETS - 1);
            buf[offsets[d]] = pair;
            offsets[d] += 1;
        }
        std::mem::swap(pairs, &mut buf);
    }
}
