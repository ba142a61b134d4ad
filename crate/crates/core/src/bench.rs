//! Wall-clock scaling benchmark over synthetic clouds.
//!
//! Cloud generation and normalization count as loading and are excluded;
//! only the sampler call is timed. Methods run one after another in this
//! process.

use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::baselines::{grid_sample, knn_sample, proxy_sample, random_sample, KnnConfig};
use crate::error::{M3Error, Result};
use crate::pipeline::{m3_sample, M3Config};
use crate::synth::{generate_cloud, SynthSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Random,
    M3,
    Grid,
    Proxy,
    Knn,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Random, Method::M3, Method::Grid, Method::Proxy, Method::Knn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::M3 => "m3",
            Method::Grid => "grid",
            Method::Proxy => "proxy",
            Method::Knn => "knn",
        }
    }
}

impl FromStr for Method {
    type Err = M3Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| M3Error::config(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Timeout,
    /// Not run because a smaller size or earlier seed already timed out.
    Skipped,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Timeout => "timeout",
            Status::Skipped => "skipped",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub n: usize,
    pub seed: u64,
    pub wall_s: f64,
    pub peak_bytes: Option<u64>,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub sizes: Vec<usize>,
    pub cap_s: f64,
    pub seeds: Vec<u64>,
    pub m: usize,
    pub spec: SynthSpec,
    pub m3: M3Config,
    pub proxy_occupancy: usize,
    pub proxy_eps: f64,
    pub knn: KnnConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            methods: Method::ALL.to_vec(),
            sizes: vec![100_000, 1_000_000],
            cap_s: 600.0,
            seeds: (0..5).collect(),
            m: 8192,
            spec: SynthSpec::boundary_layer(100.0),
            m3: M3Config::volume(),
            proxy_occupancy: 256,
            proxy_eps: 1e-6,
            knn: KnnConfig::default(),
        }
    }
}

/// Peak resident set size of this process, if the platform reports it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Resets the peak RSS counter where supported.
fn reset_peak_rss() {
    let _ = std::fs::write("/proc/self/clear_refs", "5");
}

/// Times one sampler call on a prepared cloud.
pub fn time_method(
    method: Method,
    cloud: &crate::cloud::LabeledPointCloud,
    config: &BenchConfig,
    seed: u64,
) -> Result<(Duration, Status)> {
    let cap = Duration::from_secs_f64(config.cap_s);
    let start = Instant::now();
    let outcome = match method {
        Method::Random => random_sample(cloud.len(), config.m.min(cloud.len()), seed).map(drop),
        Method::M3 => {
            let mut cfg = config.m3.clone();
            cfg.alloc.m = config.m;
            cfg.alloc.seed = seed;
            m3_sample(cloud, &cfg).map(drop)
        }
        Method::Grid => grid_sample(cloud, &config.m3.partition, None, config.m, seed).map(drop),
        Method::Proxy => proxy_sample(cloud, &config.m3.partition, config.proxy_occupancy, config.proxy_eps, config.m, seed).map(drop),
        Method::Knn => {
            let knn = KnnConfig { time_limit: Some(cap), ..config.knn.clone() };
            knn_sample(cloud, &config.m3.partition, &knn, config.m).map(drop)
        }
    };
    let elapsed = start.elapsed();
    match outcome {
        Ok(()) if elapsed <= cap => Ok((elapsed, Status::Ok)),
        Ok(()) | Err(M3Error::Timeout { .. }) => Ok((elapsed, Status::Timeout)),
        Err(e) => Err(e),
    }
}

/// Runs every method at every size and seed. `progress` sees each row as it
/// completes.
pub fn bench_run(config: &BenchConfig, progress: &mut dyn FnMut(&BenchRow)) -> Result<Vec<BenchRow>> {
    if config.sizes.is_empty() || config.seeds.is_empty() || config.methods.is_empty() {
        return Err(M3Error::config("bench needs at least one method, size and seed"));
    }
    if !(config.cap_s > 0.0) {
        return Err(M3Error::config("time cap must be positive"));
    }
    let mut timed_out = vec![false; config.methods.len()];
    let mut rows = Vec::new();
    for &n in &config.sizes {
        for &seed in &config.seeds {
            let cloud = generate_cloud(&config.spec, n, seed)?.zscore_normalize();
            for (mi, &method) in config.methods.iter().enumerate() {
                let row = if timed_out[mi] {
                    BenchRow { method, n, seed, wall_s: f64::NAN, peak_bytes: None, status: Status::Skipped }
                } else {
                    reset_peak_rss();
                    let (elapsed, status) = time_method(method, &cloud, config, seed)?;
                    timed_out[mi] = status == Status::Timeout;
                    BenchRow { method, n, seed, wall_s: elapsed.as_secs_f64(), peak_bytes: peak_rss_bytes(), status }
                };
                progress(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub const CSV_HEADER: &str = "method,N,seed,wall_s,peak_bytes,status";

pub fn write_csv_row<W: Write>(w: &mut W, row: &BenchRow) -> Result<()> {
    let wall = if row.wall_s.is_nan() { String::new() } else { format!("{:.6}", row.wall_s) };
    let peak = row.peak_bytes.map_or(String::new(), |b| b.to_string());
    writeln!(w, "{},{},{},{},{},{}", row.method.name(), row.n, row.seed, wall, peak, row.status.name())?;
    Ok(())
}

pub fn write_csv<W: Write>(w: &mut W, rows: &[BenchRow]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for row in rows {
        write_csv_row(w, row)?;
    }
    Ok(())
}

/// Mean wall time per (method, N) over completed runs; `None` when any run
/// at that size timed out or was skipped.
pub fn mean_wall(rows: &[BenchRow], method: Method, n: usize) -> Option<f64> {
    let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.method == method && r.n == n).collect();
    if sel.is_empty() || sel.iter().any(|r| r.status != Status::Ok) {
        return None;
    }
    Some(sel.iter().map(|r| r.wall_s).sum::<f64>() / sel.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_emits_rows() {
        let config = BenchConfig {
            sizes: vec![2000],
            seeds: vec![1],
            m: 100,
            ..BenchConfig::default()
        };
        let rows = bench_run(&config, &mut |_| {}).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| r.status == Status::Ok));
        let mut out = Vec::new();
        write_csv(&mut out, &rows).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(text.lines().count(), 6);
        assert!(mean_wall(&rows, Method::Random, 2000).is_some());
    }

    #[test]
    fn methods_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("fps".parse::<Method>().is_err());
    }
}
