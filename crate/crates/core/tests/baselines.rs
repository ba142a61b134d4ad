use std::collections::HashSet;

use m3::baselines::{grid_sample, knn_sample, knn_scores, proxy_sample, random_sample, KnnConfig};
use m3::io::{save_cloud, CloudFormat, M3pcReader};
use m3::partition::{cube_directions, PartitionConfig};
use m3::synth::{generate_cloud, SynthSpec};
use m3::{LabeledPointCloud, ScalarChannel, VectorChannel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn distinct(idx: &[usize]) -> bool {
    idx.iter().collect::<HashSet<_>>().len() == idx.len()
}

#[test]
fn random_inclusion_is_uniform() {
    let (n, m, seeds) = (100_000usize, 1000usize, 100u64);
    let blocks = 100;
    let mut hits = vec![0u64; blocks];
    for seed in 0..seeds {
        let s = random_sample(n, m, seed).unwrap();
        assert_eq!(s.len(), m);
        assert!(distinct(&s.indices));
        for &i in &s.indices {
            hits[i / (n / blocks)] += 1;
        }
    }
    // each block of 1000 indices expects 1000 hits over all seeds
    let p = m as f64 / n as f64;
    let trials = (n / blocks) as f64 * seeds as f64;
    let (mean, sd) = (trials * p, (trials * p * (1.0 - p)).sqrt());
    for (b, &h) in hits.iter().enumerate() {
        assert!((h as f64 - mean).abs() <= 4.0 * sd, "block {b}: {h} hits, expected {mean} +- {sd}");
    }
}

#[test]
fn grid_round_robin_over_uneven_voxels() {
    let mut pos = Vec::new();
    for (center, count) in [([0.1, 0.1, 0.1], 10), ([0.9, 0.1, 0.1], 1000), ([0.1, 0.9, 0.9], 3)] {
        pos.extend(std::iter::repeat_n(center, count));
    }
    pos.push([0.0; 3]);
    pos.push([1.0; 3]);
    let n = pos.len();
    let cloud = LabeledPointCloud::new(pos, vec![ScalarChannel { name: "p".into(), values: vec![0.0; n] }], vec![], None).unwrap();
    let s = grid_sample(&cloud, &PartitionConfig::default(), Some(0.5), 40, 7).unwrap();
    assert_eq!(s.measure.len(), 40);
    assert!(distinct(&s.measure.indices));
    let count = |r: std::ops::Range<usize>| s.measure.indices.iter().filter(|i| r.contains(i)).count();
    // the two corner points share voxels with the clusters at the origin and far corner
    assert_eq!(count(0..10) + count(1013..1014), 11);
    assert_eq!(count(1010..1013) + count(1014..1015), 4);
    assert_eq!(count(10..1010), 25);
}

#[test]
fn proxy_draws_follow_importance() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut pos = Vec::new();
    let mut vals = Vec::new();
    for i in 0..1000 {
        pos.push([rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1]);
        vals.push(match i {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random(),
        });
    }
    for _ in 0..1000 {
        pos.push([0.9 + rng.random::<f64>() * 0.1, 0.9 + rng.random::<f64>() * 0.1, 0.9 + rng.random::<f64>() * 0.1]);
        vals.push(0.0);
    }
    let cloud = LabeledPointCloud::new(pos, vec![ScalarChannel { name: "p".into(), values: vals }], vec![], None).unwrap();
    let cfg = PartitionConfig::default();
    // importance 1 + eps against eps, so two thirds of the draws land in the varying cluster
    let (m, seeds) = (30, 300u64);
    let mut in_a = 0usize;
    for seed in 0..seeds {
        let s = proxy_sample(&cloud, &cfg, 1000, 1.0, m, seed).unwrap();
        assert!(distinct(&s.measure.indices));
        let mut scores = s.scores.clone();
        scores.retain(|&x| x > 0.0);
        assert_eq!(scores, vec![1.0]);
        in_a += s.measure.indices.iter().filter(|&&i| i < 1000).count();
    }
    let total = (m as u64 * seeds) as f64;
    let frac = in_a as f64 / total;
    let sd = (2.0 / 9.0 / total).sqrt();
    assert!((frac - 2.0 / 3.0).abs() <= 4.0 * sd, "fraction {frac}");
}

#[test]
fn proxy_with_tiny_eps_stays_in_varying_voxels() {
    let mut pos = Vec::new();
    let mut vals = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..2000 {
        let far = i >= 1000;
        let o = if far { 0.9 } else { 0.0 };
        pos.push([o + rng.random::<f64>() * 0.1, o + rng.random::<f64>() * 0.1, o + rng.random::<f64>() * 0.1]);
        vals.push(if far { 3.0 } else { rng.random() });
    }
    let cloud = LabeledPointCloud::new(pos, vec![ScalarChannel { name: "p".into(), values: vals }], vec![], None).unwrap();
    let s = proxy_sample(&cloud, &PartitionConfig::default(), 1000, 1e-6, 900, 2).unwrap();
    assert!(s.measure.indices.iter().all(|&i| i < 1000));
    assert!(s.draws >= 900);
}

/// Brute-force pooled score of the `k` nearest neighbours, self included.
fn knn_oracle(cloud: &LabeledPointCloud, k: usize, w_s: f64, w_v: f64) -> Vec<f64> {
    let dirs = cube_directions();
    let n = cloud.len();
    (0..n)
        .map(|i| {
            let p = cloud.positions[i];
            let mut by_dist: Vec<(f64, usize)> = (0..n)
                .map(|j| {
                    let q = cloud.positions[j];
                    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2), j)
                })
                .collect();
            by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let nb: Vec<usize> = by_dist[..k].iter().map(|e| e.1).collect();
            let mut best: f64 = 0.0;
            for ch in &cloud.scalars {
                let v: Vec<f64> = nb.iter().map(|&j| ch.values[j]).collect();
                let r = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min);
                best = best.max(w_s * r);
            }
            for ch in &cloud.vectors {
                for d in &dirs {
                    let proj: Vec<f64> = nb.iter().map(|&j| {
                        let u = ch.values[j];
                        u[0] * d[0] + u[1] * d[1] + u[2] * d[2]
                    }).collect();
                    let r = proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - proj.iter().cloned().fold(f64::INFINITY, f64::min);
                    best = best.max(w_v * r);
                }
            }
            best
        })
        .collect()
}

#[test]
fn knn_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 1500;
    let pos: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    // a spike near the centre
    let p: Vec<f64> = pos
        .iter()
        .map(|x| {
            let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2) + (x[2] - 0.5).powi(2);
            (-r2 / 0.005).exp() * 10.0 + 0.01 * x[0]
        })
        .collect();
    let u: Vec<[f64; 3]> = pos.iter().map(|x| [x[1], -x[0], 0.5 * x[2]]).collect();
    let cloud = LabeledPointCloud::new(
        pos,
        vec![ScalarChannel { name: "p".into(), values: p }],
        vec![VectorChannel { name: "u".into(), values: u }],
        None,
    )
    .unwrap();
    let cfg = PartitionConfig::default();
    let got = knn_scores(&cloud, &cfg, &KnnConfig::default()).unwrap();
    let want = knn_oracle(&cloud, 32, 1.0, 0.4);
    for (i, (a, b)) in got.iter().zip(&want).enumerate() {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "point {i}: {a} vs {b}");
    }
    let top = knn_sample(&cloud, &cfg, &KnnConfig::default(), 50).unwrap();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| want[b].total_cmp(&want[a]).then(a.cmp(&b)));
    assert_eq!(top.measure.indices, order[..50].to_vec());
    // the highest-scoring points sit next to the spike
    let c = &cloud.positions[top.measure.indices[0]];
    assert!((c[0] - 0.5).abs() < 0.25 && (c[1] - 0.5).abs() < 0.25 && (c[2] - 0.5).abs() < 0.25);
}

#[test]
fn baselines_are_deterministic_distinct_and_sized() {
    let cloud = generate_cloud(&SynthSpec::boundary_layer(20.0), 5000, 4).unwrap();
    let cfg = PartitionConfig::default();
    for m in [0, 1, 17, 600] {
        let runs = [
            (grid_sample(&cloud, &cfg, None, m, 5).unwrap(), grid_sample(&cloud, &cfg, None, m, 5).unwrap()),
            (
                proxy_sample(&cloud, &cfg, 256, 1e-6, m, 5).unwrap(),
                proxy_sample(&cloud, &cfg, 256, 1e-6, m, 5).unwrap(),
            ),
            (
                knn_sample(&cloud, &cfg, &KnnConfig::default(), m).unwrap(),
                knn_sample(&cloud, &cfg, &KnnConfig::default(), m).unwrap(),
            ),
        ];
        for (a, b) in runs {
            assert_eq!(a, b);
            assert_eq!(a.measure.len(), m);
            assert!(distinct(&a.measure.indices));
            assert!(a.measure.indices.iter().all(|&i| i < 5000));
        }
    }
    let a = grid_sample(&cloud, &cfg, None, 300, 1).unwrap();
    let b = grid_sample(&cloud, &cfg, None, 300, 2).unwrap();
    assert_ne!(a.measure.indices, b.measure.indices);
}

#[test]
fn streaming_reader_matches_in_memory() {
    let cloud = generate_cloud(&SynthSpec::boundary_layer(30.0), 20_000, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cloud.m3pc");
    save_cloud(&path, &cloud, CloudFormat::Binary).unwrap();
    let cfg = PartitionConfig::default();

    let mem = grid_sample(&cloud, &cfg, None, 700, 3).unwrap();
    let disk = grid_sample(M3pcReader::open(&path).unwrap(), &cfg, None, 700, 3).unwrap();
    assert_eq!(mem, disk);

    let mem = proxy_sample(&cloud, &cfg, 256, 1e-6, 700, 3).unwrap();
    let disk = proxy_sample(M3pcReader::open(&path).unwrap(), &cfg, 256, 1e-6, 700, 3).unwrap();
    assert_eq!(mem, disk);

    let knn = KnnConfig { window: Some(64), ..KnnConfig::default() };
    let mem = knn_sample(&cloud, &cfg, &knn, 700).unwrap();
    let disk = knn_sample(M3pcReader::open(&path).unwrap(), &cfg, &knn, 700).unwrap();
    assert_eq!(mem, disk);
}
