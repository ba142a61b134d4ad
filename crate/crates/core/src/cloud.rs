//! Labeled point clouds: positions, named scalar/vector channels and optional
//! geometric weights (area or volume share per point).

use serde::{Deserialize, Serialize};

use crate::error::{M3Error, Result};

/// Standard deviations at or below this (relative to the channel magnitude)
/// are treated as zero; the channel is then mapped to all zeros.
const ZERO_STD_REL: f64 = 1e-12;

/// Relative padding applied to the bounding cube edge.
const CUBE_INFLATION: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarChannel {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorChannel {
    pub name: String,
    pub values: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorStats {
    pub name: String,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Per-channel moments recorded by [`LabeledPointCloud::zscore_normalize`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub scalars: Vec<ScalarStats>,
    pub vectors: Vec<VectorStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPointCloud {
    pub positions: Vec<[f64; 3]>,
    pub scalars: Vec<ScalarChannel>,
    pub vectors: Vec<VectorChannel>,
    pub geom_weights: Option<Vec<f64>>,
    pub norm_stats: Option<NormStats>,
}

/// Axis-aligned cube enclosing a cloud.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingCube {
    pub origin: [f64; 3],
    pub edge: f64,
}

impl BoundingCube {
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] <= self.origin[a] + self.edge)
    }
}

impl LabeledPointCloud {
    /// Builds a cloud and checks every invariant (lengths, finiteness, weights).
    pub fn new(
        positions: Vec<[f64; 3]>,
        scalars: Vec<ScalarChannel>,
        vectors: Vec<VectorChannel>,
        geom_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let cloud = LabeledPointCloud {
            positions,
            scalars,
            vectors,
            geom_weights,
            norm_stats: None,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(M3Error::EmptyCloud);
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(M3Error::NonFinite {
                    field: "position".into(),
                    index: i,
                });
            }
        }
        for ch in &self.scalars {
            check_len(&ch.name, n, ch.values.len())?;
            if let Some(i) = ch.values.iter().position(|v| !v.is_finite()) {
                return Err(M3Error::NonFinite {
                    field: ch.name.clone(),
                    index: i,
                });
            }
        }
        for ch in &self.vectors {
            check_len(&ch.name, n, ch.values.len())?;
            if let Some(i) = ch
                .values
                .iter()
                .position(|v| !v.iter().all(|c| c.is_finite()))
            {
                return Err(M3Error::NonFinite {
                    field: ch.name.clone(),
                    index: i,
                });
            }
        }
        if let Some(w) = &self.geom_weights {
            check_len("weights", n, w.len())?;
            if let Some(i) = w.iter().position(|v| !v.is_finite()) {
                return Err(M3Error::NonFinite {
                    field: "weights".into(),
                    index: i,
                });
            }
            if let Some(i) = w.iter().position(|v| *v < 0.0) {
                return Err(M3Error::InvalidWeights(format!(
                    "negative weight at record {i}"
                )));
            }
            if !w.iter().any(|v| *v > 0.0) {
                return Err(M3Error::InvalidWeights(
                    "no strictly positive weight".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn scalar(&self, name: &str) -> Option<&ScalarChannel> {
        self.scalars.iter().find(|c| c.name == name)
    }

    pub fn vector(&self, name: &str) -> Option<&VectorChannel> {
        self.vectors.iter().find(|c| c.name == name)
    }

    /// Z-scores every scalar channel and every vector component in place
    /// (population moments). Geometric weights are left untouched.
    pub fn zscore_normalize(mut self) -> Self {
        let mut stats = NormStats::default();
        for ch in &mut self.scalars {
            let (mean, std) = zscore_in_place(ch.values.iter_mut());
            stats.scalars.push(ScalarStats {
                name: ch.name.clone(),
                mean,
                std,
            });
        }
        for ch in &mut self.vectors {
            let mut mean = [0.0; 3];
            let mut std = [0.0; 3];
            for a in 0..3 {
                let (m, s) = zscore_in_place(ch.values.iter_mut().map(|v| &mut v[a]));
                mean[a] = m;
                std[a] = s;
            }
            stats.vectors.push(VectorStats {
                name: ch.name.clone(),
                mean,
                std,
            });
        }
        self.norm_stats = Some(stats);
        self
    }

    /// Smallest axis-aligned cube holding every position, padded by a relative
    /// `1e-9` so boundary points quantize strictly inside. Coincident points
    /// get a unit cube centred on them.
    pub fn compute_bounds(&self) -> Result<BoundingCube> {
        bounds_of(self.positions.iter())
    }
}

pub(crate) fn bounds_of<'a>(positions: impl Iterator<Item = &'a [f64; 3]>) -> Result<BoundingCube> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut any = false;
    for p in positions {
        any = true;
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    if !any {
        return Err(M3Error::EmptyCloud);
    }
    Ok(cube_from_extent(lo, hi))
}

pub(crate) fn cube_from_extent(lo: [f64; 3], hi: [f64; 3]) -> BoundingCube {
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if extent <= 0.0 {
        return BoundingCube {
            origin: [lo[0] - 0.5, lo[1] - 0.5, lo[2] - 0.5],
            edge: 1.0,
        };
    }
    let pad = CUBE_INFLATION * extent;
    BoundingCube {
        origin: [lo[0] - 0.5 * pad, lo[1] - 0.5 * pad, lo[2] - 0.5 * pad],
        edge: extent + pad,
    }
}

fn check_len(name: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(M3Error::LengthMismatch {
            channel: name.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

fn zscore_in_place<'a>(values: impl Iterator<Item = &'a mut f64>) -> (f64, f64) {
    let mut vals: Vec<&mut f64> = values.collect();
    let n = vals.len() as f64;
    if vals.is_empty() {
        return (0.0, 0.0);
    }
    let mean = vals.iter().map(|v| **v).sum::<f64>() / n;
    let var = vals.iter().map(|v| (**v - mean) * (**v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= ZERO_STD_REL * mean.abs().max(1.0) {
        for v in vals.iter_mut() {
            **v = 0.0;
        }
        return (mean, 0.0);
    }
    for v in vals.iter_mut() {
        **v = (**v - mean) / std;
    }
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn scalar_cloud(values: Vec<f64>) -> LabeledPointCloud {
        let n = values.len();
        let positions = (0..n).map(|i| [i as f64, 0.0, 0.0]).collect();
        LabeledPointCloud::new(
            positions,
            vec![ScalarChannel {
                name: "p".into(),
                values,
            }],
            vec![],
            None,
        )
        .unwrap()
    }

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let s = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
        (m, s)
    }

    #[test]
    fn two_point_channel_maps_to_unit_pair() {
        let c = scalar_cloud(vec![1.0, 3.0]).zscore_normalize();
        assert_eq!(c.scalars[0].values, vec![-1.0, 1.0]);
        let st = &c.norm_stats.unwrap().scalars[0];
        assert_eq!((st.mean, st.std), (2.0, 1.0));
    }

    #[test]
    fn constant_channel_becomes_zero() {
        let c = scalar_cloud(vec![5.0, 5.0, 5.0]).zscore_normalize();
        assert_eq!(c.scalars[0].values, vec![0.0; 3]);
        assert_eq!(c.norm_stats.unwrap().scalars[0].std, 0.0);
        let c = scalar_cloud(vec![0.1; 7]).zscore_normalize();
        assert_eq!(c.scalars[0].values, vec![0.0; 7]);
    }

    #[test]
    fn gaussian_draw_normalizes_to_unit_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dist = Normal::new(4.0, 2.5).unwrap();
        let vals: Vec<f64> = (0..1000).map(|_| dist.sample(&mut rng)).collect();
        let vecs: Vec<[f64; 3]> = (0..1000)
            .map(|_| [dist.sample(&mut rng), 3.0 * dist.sample(&mut rng), -1.0])
            .collect();
        let positions = vec![[0.0; 3]; 1000];
        let c = LabeledPointCloud::new(
            positions,
            vec![ScalarChannel { name: "p".into(), values: vals }],
            vec![VectorChannel { name: "u".into(), values: vecs }],
            None,
        )
        .unwrap()
        .zscore_normalize();
        let (m, s) = moments(&c.scalars[0].values);
        assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6);
        for a in 0..2 {
            let comp: Vec<f64> = c.vectors[0].values.iter().map(|v| v[a]).collect();
            let (m, s) = moments(&comp);
            assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6);
        }
        // constant z component
        assert!(c.vectors[0].values.iter().all(|v| v[2] == 0.0));
    }

    #[test]
    fn normalization_is_idempotent_and_rank_preserving() {
        let raw = vec![3.0, -1.0, 7.5, 2.0, 2.0, 10.0];
        let once = scalar_cloud(raw.clone()).zscore_normalize();
        let twice = once.clone().zscore_normalize();
        for (a, b) in once.scalars[0].values.iter().zip(&twice.scalars[0].values) {
            assert!((a - b).abs() < 1e-12);
        }
        for i in 0..raw.len() {
            for j in 0..raw.len() {
                assert_eq!(
                    raw[i] < raw[j],
                    once.scalars[0].values[i] < once.scalars[0].values[j]
                );
            }
        }
    }

    #[test]
    fn geometric_weights_are_not_normalized() {
        let c = LabeledPointCloud::new(
            vec![[0.0; 3], [1.0; 3]],
            vec![],
            vec![],
            Some(vec![0.25, 0.75]),
        )
        .unwrap()
        .zscore_normalize();
        assert_eq!(c.geom_weights, Some(vec![0.25, 0.75]));
    }

    #[test]
    fn bounds_examples() {
        let b = bounds_of([[0.0, 0.0, 0.0], [1.0, 2.0, 0.0]].iter()).unwrap();
        assert!(b.origin.iter().all(|o| o.abs() < 1e-8));
        assert!((b.edge - 2.0).abs() < 1e-8);

        let b = bounds_of([[3.0, 3.0, 3.0]].iter()).unwrap();
        assert_eq!(b.edge, 1.0);
        assert_eq!(b.origin, [2.5, 2.5, 2.5]);

        let corners: Vec<[f64; 3]> = (0..8)
            .map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64])
            .collect();
        let b = bounds_of(corners.iter()).unwrap();
        assert!((b.edge - 1.0).abs() < 1e-8);
        for p in &corners {
            for a in 0..3 {
                assert!(p[a] > b.origin[a] && p[a] < b.origin[a] + b.edge);
            }
        }
    }

    #[test]
    fn invariant_violations_are_rejected() {
        let err = LabeledPointCloud::new(
            vec![[0.0; 3]; 3],
            vec![ScalarChannel { name: "p".into(), values: vec![1.0, 2.0] }],
            vec![],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, M3Error::LengthMismatch { found: 2, .. }));

        let err = LabeledPointCloud::new(
            vec![[0.0; 3], [f64::NAN, 0.0, 0.0]],
            vec![],
            vec![],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, M3Error::NonFinite { index: 1, .. }));

        let err = LabeledPointCloud::new(vec![[0.0; 3]], vec![], vec![], Some(vec![0.0]))
            .unwrap_err();
        assert!(matches!(err, M3Error::InvalidWeights(_)));
        assert!(matches!(
            LabeledPointCloud::new(vec![], vec![], vec![], None),
            Err(M3Error::EmptyCloud)
        ));
    }
}
