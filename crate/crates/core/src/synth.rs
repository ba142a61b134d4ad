//! Synthetic labeled clouds on the unit cube with closed-form fields and
//! known sampling densities.
//!
//! Each point carries a geometric weight proportional to the inverse sampling
//! density, normalized so the weights sum to the domain volume (one). Weighted
//! sums `sum_i w_i g(x_i)` then estimate `integral g dV`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{LabeledPointCloud, ScalarChannel, VectorChannel};
use crate::error::{M3Error, Result};
use crate::rng::{self, Domain};

const CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Density {
    Uniform,
    /// Layer `z < thickness` holding `ratio` times as many points as the rest
    /// of the cube (expected share `ratio / (1 + ratio)`).
    Slab {
        ratio: f64,
        #[serde(default = "default_thickness")]
        thickness: f64,
    },
    /// Density `(scale / (|x - center| + scale))^2`.
    Radial {
        #[serde(default = "default_center")]
        center: [f64; 3],
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

fn default_thickness() -> f64 {
    0.05
}

fn default_center() -> [f64; 3] {
    [0.5; 3]
}

fn default_scale() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarField {
    Linear { gradient: [f64; 3], #[serde(default)] offset: f64 },
    /// `+1` where `normal . x >= offset`, `-1` elsewhere.
    StepPlane { normal: [f64; 3], offset: f64 },
    GaussianBump { center: [f64; 3], sigma: f64, #[serde(default = "one")] amplitude: f64 },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VectorField {
    /// Wall-parallel shear `tanh(z / thickness)` along x plus a Gaussian
    /// swirl about a vertical axis through `center`.
    ShearVortex {
        #[serde(default = "default_thickness")]
        thickness: f64,
        #[serde(default = "default_center")]
        center: [f64; 3],
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "one")]
        circulation: f64,
    },
}

fn default_sigma() -> f64 {
    0.15
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedScalar {
    pub name: String,
    #[serde(flatten)]
    pub field: ScalarField,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedVector {
    pub name: String,
    #[serde(flatten)]
    pub field: VectorField,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub density: Density,
    #[serde(default)]
    pub scalars: Vec<NamedScalar>,
    #[serde(default)]
    pub vectors: Vec<NamedVector>,
}

pub const PRESETS: &[&str] = &["uniform_linear", "step_plane", "boundary_layer", "radial_bump"];

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| M3Error::UnknownSpec(e.to_string()))
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "uniform_linear" => Ok(SynthSpec {
                density: Density::Uniform,
                scalars: vec![NamedScalar {
                    name: "p".into(),
                    field: ScalarField::Linear { gradient: [1.0, 0.5, 0.25], offset: 0.0 },
                }],
                vectors: vec![],
            }),
            "step_plane" => Ok(Self::step_plane()),
            "boundary_layer" => Ok(Self::boundary_layer(100.0)),
            "radial_bump" => Ok(SynthSpec {
                density: Density::Radial { center: [0.5; 3], scale: 0.1 },
                scalars: vec![NamedScalar {
                    name: "p".into(),
                    field: ScalarField::GaussianBump { center: [0.5; 3], sigma: 0.1, amplitude: 1.0 },
                }],
                vectors: vec![NamedVector {
                    name: "u".into(),
                    field: VectorField::ShearVortex { thickness: 0.05, center: [0.5; 3], sigma: 0.15, circulation: 1.0 },
                }],
            }),
            other => Err(M3Error::UnknownSpec(format!(
                "no preset `{other}` (known: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Uniform cloud with the scalar `sign(x - 0.5)`.
    pub fn step_plane() -> Self {
        SynthSpec {
            density: Density::Uniform,
            scalars: vec![NamedScalar {
                name: "p".into(),
                field: ScalarField::StepPlane { normal: [1.0, 0.0, 0.0], offset: 0.5 },
            }],
            vectors: vec![],
        }
    }

    /// Dense wall layer under a sparse far field, with a pressure-like bump
    /// on the wall and a shear/vortex velocity.
    pub fn boundary_layer(ratio: f64) -> Self {
        SynthSpec {
            density: Density::Slab { ratio, thickness: 0.05 },
            scalars: vec![NamedScalar {
                name: "p".into(),
                field: ScalarField::GaussianBump { center: [0.5, 0.5, 0.0], sigma: 0.15, amplitude: 1.0 },
            }],
            vectors: vec![NamedVector {
                name: "u".into(),
                field: VectorField::ShearVortex { thickness: 0.05, center: [0.3, 0.6, 0.0], sigma: 0.1, circulation: 2.0 },
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(M3Error::UnknownSpec(m.to_string()));
        match &self.density {
            Density::Uniform => {}
            Density::Slab { ratio, thickness } => {
                if !(*ratio > 0.0 && ratio.is_finite()) {
                    return bad("slab ratio must be positive");
                }
                if !(*thickness > 0.0 && *thickness < 1.0) {
                    return bad("slab thickness must lie in (0, 1)");
                }
            }
            Density::Radial { scale, .. } => {
                if !(*scale > 0.0) {
                    return bad("radial scale must be positive");
                }
            }
        }
        for s in &self.scalars {
            if let ScalarField::GaussianBump { sigma, .. } = s.field {
                if !(sigma > 0.0) {
                    return bad("bump sigma must be positive");
                }
            }
        }
        for v in &self.vectors {
            let VectorField::ShearVortex { thickness, sigma, .. } = v.field;
            if !(thickness > 0.0 && sigma > 0.0) {
                return bad("vortex thickness and sigma must be positive");
            }
        }
        Ok(())
    }
}

impl Density {
    /// Unnormalized sampling density at `x`.
    pub fn value(&self, x: &[f64; 3]) -> f64 {
        match self {
            Density::Uniform => 1.0,
            Density::Slab { ratio, thickness } => {
                if x[2] < *thickness {
                    ratio / thickness
                } else {
                    1.0 / (1.0 - thickness)
                }
            }
            Density::Radial { center, scale } => {
                let r = dist(x, center);
                (scale / (r + scale)).powi(2)
            }
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> [f64; 3] {
        match self {
            Density::Uniform => [rng.random(), rng.random(), rng.random()],
            Density::Slab { ratio, thickness } => {
                let in_slab = rng.random::<f64>() < ratio / (1.0 + ratio);
                let u: f64 = rng.random();
                let z = if in_slab { u * thickness } else { thickness + u * (1.0 - thickness) };
                [rng.random(), rng.random(), z]
            }
            Density::Radial { .. } => loop {
                let x = [rng.random(), rng.random(), rng.random()];
                if rng.random::<f64>() < self.value(&x) {
                    break x;
                }
            },
        }
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl ScalarField {
    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        match self {
            ScalarField::Linear { gradient, offset } => dot(gradient, x) + offset,
            ScalarField::StepPlane { normal, offset } => {
                if dot(normal, x) >= *offset {
                    1.0
                } else {
                    -1.0
                }
            }
            ScalarField::GaussianBump { center, sigma, amplitude } => {
                amplitude * (-dist(x, center).powi(2) / (2.0 * sigma * sigma)).exp()
            }
        }
    }

    /// Exact `sup - inf` of the field over the closed box `[lo, hi]`.
    pub fn range_over_box(&self, lo: &[f64; 3], hi: &[f64; 3]) -> f64 {
        match self {
            ScalarField::Linear { gradient, .. } => (0..3).map(|a| gradient[a].abs() * (hi[a] - lo[a])).sum(),
            ScalarField::StepPlane { normal, offset } => {
                let (mut tmin, mut tmax) = (0.0, 0.0);
                for a in 0..3 {
                    let (p, q) = (normal[a] * lo[a], normal[a] * hi[a]);
                    tmin += p.min(q);
                    tmax += p.max(q);
                }
                if tmin < *offset && tmax >= *offset {
                    2.0
                } else {
                    0.0
                }
            }
            ScalarField::GaussianBump { center, .. } => {
                let near: [f64; 3] = std::array::from_fn(|a| center[a].clamp(lo[a], hi[a]));
                let far: [f64; 3] = std::array::from_fn(|a| {
                    if (center[a] - lo[a]).abs() > (hi[a] - center[a]).abs() {
                        lo[a]
                    } else {
                        hi[a]
                    }
                });
                (self.eval(&near) - self.eval(&far)).abs()
            }
        }
    }
}

impl VectorField {
    pub fn eval(&self, x: &[f64; 3]) -> [f64; 3] {
        match self {
            VectorField::ShearVortex { thickness, center, sigma, circulation } => {
                let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
                let swirl = circulation * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                [(x[2] / thickness).tanh() - dy * swirl, dx * swirl, 0.0]
            }
        }
    }
}

/// Draws `n` points from `spec`, reproducibly from `seed`.
pub fn generate_cloud(spec: &SynthSpec, n: usize, seed: u64) -> Result<LabeledPointCloud> {
    spec.validate()?;
    if n == 0 {
        return Err(M3Error::EmptyCloud);
    }
    let mut positions = vec![[0.0; 3]; n];
    positions
        .par_chunks_mut(CHUNK)
        .enumerate()
        .for_each(|(chunk, out)| {
            let mut rng = rng::stream(seed, Domain::Synth, chunk as u64);
            for p in out {
                *p = spec.density.sample(&mut rng);
            }
        });
    let scalars = spec
        .scalars
        .iter()
        .map(|s| ScalarChannel {
            name: s.name.clone(),
            values: positions.par_iter().map(|x| s.field.eval(x)).collect(),
        })
        .collect();
    let vectors = spec
        .vectors
        .iter()
        .map(|v| VectorChannel {
            name: v.name.clone(),
            values: positions.par_iter().map(|x| v.field.eval(x)).collect(),
        })
        .collect();
    let inv: Vec<f64> = positions.par_iter().map(|x| 1.0 / spec.density.value(x)).collect();
    let total: f64 = inv.iter().sum();
    let weights = inv.into_iter().map(|w| w / total).collect();
    LabeledPointCloud::new(positions, scalars, vectors, Some(weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec::boundary_layer(10.0);
        let a = generate_cloud(&spec, 10_000, 5).unwrap();
        let b = generate_cloud(&spec, 10_000, 5).unwrap();
        let c = generate_cloud(&spec, 10_000, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.positions, c.positions);
        assert!(a.positions.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn slab_share_within_binomial_band() {
        let n = 1_000_000;
        let cloud = generate_cloud(&SynthSpec::boundary_layer(100.0), n, 17).unwrap();
        let inside = cloud.positions.iter().filter(|p| p[2] < 0.05).count() as f64;
        let p = 100.0 / 101.0;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((inside - mean).abs() < 4.0 * sd, "{inside} vs {mean} +- {sd}");
    }

    #[test]
    fn weights_integrate_smooth_functions() {
        // integral over the unit cube of x*y + z^2 = 1/4 + 1/3
        let exact = 0.25 + 1.0 / 3.0;
        let g = |x: &[f64; 3]| x[0] * x[1] + x[2] * x[2];
        for spec in [SynthSpec::boundary_layer(50.0), SynthSpec::preset("radial_bump").unwrap()] {
            let mut errs = Vec::new();
            for n in [10_000, 400_000] {
                let cloud = generate_cloud(&spec, n, 3).unwrap();
                let w = cloud.geom_weights.as_ref().unwrap();
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                let est: f64 = cloud.positions.iter().zip(w).map(|(x, w)| w * g(x)).sum();
                errs.push((est - exact).abs());
            }
            assert!(errs[1] < 0.01, "{errs:?}");
            assert!(errs[1] < errs[0] || errs[0] < 2e-3, "{errs:?}");
        }
    }

    #[test]
    fn step_range_over_box() {
        let f = ScalarField::StepPlane { normal: [1.0, 0.0, 0.0], offset: 0.5 };
        assert_eq!(f.range_over_box(&[0.25, 0.0, 0.0], &[0.75, 1.0, 1.0]), 2.0);
        assert_eq!(f.range_over_box(&[0.5, 0.0, 0.0], &[0.75, 1.0, 1.0]), 0.0);
        assert_eq!(f.range_over_box(&[0.0, 0.0, 0.0], &[0.49, 1.0, 1.0]), 0.0);
        let lin = ScalarField::Linear { gradient: [1.0, -2.0, 0.0], offset: 3.0 };
        assert!((lin.range_over_box(&[0.0; 3], &[0.5, 0.5, 0.5]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn bump_range_bounds_sampled_range() {
        let f = ScalarField::GaussianBump { center: [0.3, 0.6, 0.2], sigma: 0.2, amplitude: 2.0 };
        let (lo, hi) = ([0.1, 0.5, 0.0], [0.4, 0.9, 0.25]);
        let analytic = f.range_over_box(&lo, &hi);
        let mut vmin = f64::INFINITY;
        let mut vmax = f64::NEG_INFINITY;
        let steps = 20;
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let t = |a: usize, s: usize| lo[a] + (hi[a] - lo[a]) * s as f64 / steps as f64;
                    let v = f.eval(&[t(0, i), t(1, j), t(2, k)]);
                    vmin = vmin.min(v);
                    vmax = vmax.max(v);
                }
            }
        }
        assert!(vmax - vmin <= analytic + 1e-12);
        assert!(analytic - (vmax - vmin) < 1e-2);
    }

    #[test]
    fn unknown_specs_are_rejected() {
        assert!(matches!(SynthSpec::preset("tornado"), Err(M3Error::UnknownSpec(_))));
        assert!(matches!(
            SynthSpec::from_json(r#"{"density": {"kind": "spiral"}}"#),
            Err(M3Error::UnknownSpec(_))
        ));
        let spec = SynthSpec::from_json(
            r#"{"density": {"kind": "slab", "ratio": 100},
                "scalars": [{"name": "p", "kind": "step_plane", "normal": [1,0,0], "offset": 0.5}],
                "vectors": [{"name": "u", "kind": "shear_vortex"}]}"#,
        )
        .unwrap();
        assert_eq!(spec.density, Density::Slab { ratio: 100.0, thickness: 0.05 });
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(SynthSpec::from_json(&text).unwrap(), spec);
    }
}
