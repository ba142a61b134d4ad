//! Pointwise error metrics with optional per-point physical weights
//! (area/volume share). Unit weights reproduce the plain metrics exactly.

use serde::{Deserialize, Serialize};

use crate::error::{M3Error, Result};
use crate::measure::neumaier_sum;

/// Ground truth and prediction as row-major `n x dim` arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPair {
    pub truth: Vec<f64>,
    pub pred: Vec<f64>,
    pub dim: usize,
    pub weights: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mae: f64,
    pub mse: f64,
    pub rel_l2: f64,
}

impl FieldPair {
    pub fn new(truth: Vec<f64>, pred: Vec<f64>, dim: usize, weights: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(M3Error::precondition("field dimension must be positive"));
        }
        if truth.len() != pred.len() || !truth.len().is_multiple_of(dim) {
            return Err(M3Error::LengthMismatch {
                channel: "prediction".into(),
                expected: truth.len(),
                found: pred.len(),
            });
        }
        let n = truth.len() / dim;
        if let Some(i) = truth.iter().chain(&pred).position(|v| !v.is_finite()) {
            return Err(M3Error::NonFinite {
                field: "field".into(),
                index: (i % truth.len().max(1)) / dim,
            });
        }
        if let Some(w) = &weights {
            if w.len() != n {
                return Err(M3Error::LengthMismatch {
                    channel: "weights".into(),
                    expected: n,
                    found: w.len(),
                });
            }
            if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(M3Error::InvalidWeights(format!("weight {} at {i}", w[i])));
            }
        }
        Ok(FieldPair { truth, pred, dim, weights })
    }

    pub fn len(&self) -> usize {
        self.truth.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    fn sq_err(&self, i: usize) -> f64 {
        let (a, b) = (&self.truth[i * self.dim..(i + 1) * self.dim], &self.pred[i * self.dim..(i + 1) * self.dim]);
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    fn sq_norm(&self, i: usize) -> f64 {
        self.truth[i * self.dim..(i + 1) * self.dim].iter().map(|x| x * x).sum()
    }
}

fn finish(abs: f64, sq: f64, norm: f64, total_w: f64) -> Result<ErrorMetrics> {
    if total_w <= 0.0 {
        return Err(M3Error::Undefined("weights sum to zero".into()));
    }
    let rel_l2 = if norm > 0.0 {
        sq.sqrt() / norm.sqrt()
    } else if sq == 0.0 {
        0.0
    } else {
        return Err(M3Error::Undefined("relative L2 undefined: ground truth has zero norm".into()));
    };
    Ok(ErrorMetrics {
        mae: abs / total_w,
        mse: sq / total_w,
        rel_l2,
    })
}

/// Metrics with the pair's weights (unit weights when absent).
pub fn weighted_errors(pair: &FieldPair) -> Result<ErrorMetrics> {
    let Some(w) = &pair.weights else {
        return unweighted_errors(pair);
    };
    let n = pair.len();
    let abs = neumaier_sum((0..n).map(|i| pair.sq_err(i).sqrt() * w[i]));
    let sq = neumaier_sum((0..n).map(|i| pair.sq_err(i) * w[i]));
    let norm = neumaier_sum((0..n).map(|i| pair.sq_norm(i) * w[i]));
    finish(abs, sq, norm, neumaier_sum(w.iter().copied()))
}

/// Metrics ignoring any weights.
pub fn unweighted_errors(pair: &FieldPair) -> Result<ErrorMetrics> {
    let n = pair.len();
    let abs = neumaier_sum((0..n).map(|i| pair.sq_err(i).sqrt()));
    let sq = neumaier_sum((0..n).map(|i| pair.sq_err(i)));
    let norm = neumaier_sum((0..n).map(|i| pair.sq_norm(i)));
    finish(abs, sq, norm, n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_fields_have_zero_error() {
        let f = vec![1.0, -2.0, 3.0, 4.0];
        let e = weighted_errors(&FieldPair::new(f.clone(), f, 2, None).unwrap()).unwrap();
        assert_eq!((e.mae, e.mse, e.rel_l2), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_example() {
        let p = FieldPair::new(vec![1.0, 1.0], vec![0.0, 2.0], 1, Some(vec![1.0, 1.0])).unwrap();
        let e = weighted_errors(&p).unwrap();
        assert_eq!((e.mae, e.mse, e.rel_l2), (1.0, 1.0, 1.0));
    }

    #[test]
    fn degenerate_weights_and_norms() {
        let p = FieldPair::new(vec![1.0], vec![0.0], 1, Some(vec![0.0])).unwrap();
        assert!(weighted_errors(&p).is_err());
        let p = FieldPair::new(vec![0.0], vec![1.0], 1, None).unwrap();
        assert!(weighted_errors(&p).is_err());
        assert!(FieldPair::new(vec![0.0], vec![1.0, 2.0], 1, None).is_err());
        assert!(FieldPair::new(vec![0.0], vec![1.0], 1, Some(vec![-1.0])).is_err());
    }

    #[test]
    fn scale_and_weight_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 200;
        let f: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = f.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let base = weighted_errors(&FieldPair::new(f.clone(), g.clone(), 3, Some(w.clone())).unwrap()).unwrap();
        let s = -2.5;
        let scaled = weighted_errors(
            &FieldPair::new(f.iter().map(|v| v * s).collect(), g.iter().map(|v| v * s).collect(), 3, Some(w.clone())).unwrap(),
        )
        .unwrap();
        assert!((scaled.mae - base.mae * s.abs()).abs() < 1e-12);
        assert!((scaled.mse - base.mse * s * s).abs() < 1e-12);
        assert!((scaled.rel_l2 - base.rel_l2).abs() < 1e-12);
        let rew = weighted_errors(&FieldPair::new(f, g, 3, Some(w.iter().map(|v| v * 7.0).collect())).unwrap()).unwrap();
        assert!((rew.mae - base.mae).abs() < 1e-12 * base.mae);
        assert!((rew.mse - base.mse).abs() < 1e-12 * base.mse);
        assert!((rew.rel_l2 - base.rel_l2).abs() < 1e-12 * base.rel_l2);
    }
}
