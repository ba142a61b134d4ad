//! Command-line front end. Every subcommand writes into an output directory
//! together with `manifest.json`, which records the arguments and the fully
//! resolved configuration. Outputs of a failed run are removed.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::allocate::{read_indices_bin, EmpiricalMeasure, MeasureSidecar};
use crate::baselines::{grid_sample, knn_sample, proxy_sample, random_sample, KnnConfig};
use crate::bench::{bench_run, write_csv_row, BenchConfig, Method, CSV_HEADER};
use crate::cloud::LabeledPointCloud;
use crate::io::{load_cloud, save_cloud, CloudFormat};
use crate::measure::{decomposition_terms, risk_gap_check, target_measure, tv_distance, CellMeasure};
use crate::metrics::{unweighted_errors, weighted_errors, FieldPair};
use crate::pipeline::{m3_sample, partition_cloud, prepare, M3Config, Profile};
use crate::stratify::assign_strata;
use crate::synth::{generate_cloud, SynthSpec};

type CliResult<T> = anyhow::Result<T>;

#[derive(Parser, Debug)]
#[command(name = "m3", version, about = "Multi-scale variation-aware sampling for labeled point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cloud.
    Gen(GenArgs),
    /// Build the variation-adaptive partition and export its cells.
    Partition(PartitionArgs),
    /// Partition and stratify; export labels and per-stratum counts.
    Stratify(PartitionArgs),
    /// Draw a sample with M3 or a baseline.
    Sample(SampleArgs),
    /// Pointwise error metrics between two field files.
    Metrics(MetricsArgs),
    /// Measure diagnostics of index samples against the target measure.
    Measure(MeasureArgs),
    /// Wall-clock benchmark over synthetic clouds.
    Bench(BenchArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// Hyperparameter profile (defaults to surface).
    #[arg(long, value_parser = parse_profile)]
    profile: Option<Profile>,
    /// JSON config (full or partial) or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    eps_refine: Option<f64>,
    #[arg(long)]
    g_max: Option<u32>,
    #[arg(long)]
    kappa: Option<usize>,
    /// Scalar channel weights, one value or one per channel.
    #[arg(long, value_delimiter = ',')]
    w_scalar: Option<Vec<f64>>,
    /// Vector channel weights, one value or one per channel.
    #[arg(long, value_delimiter = ',')]
    w_vector: Option<Vec<f64>>,
    /// Number of strata.
    #[arg(long = "strata")]
    k: Option<usize>,
    #[arg(long)]
    p_lo: Option<f64>,
    #[arg(long)]
    p_hi: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Target stratum masses, K+1 comma-separated values.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Built-in spec name.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    preset: Option<String>,
    /// Spec as a JSON file.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_parser = parse_count)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "binary", value_parser = parse_format)]
    format: CloudFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PartitionArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SampleMethod {
    M3,
    Random,
    Grid,
    Proxy,
    Knn,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long, value_enum)]
    method: SampleMethod,
    #[arg(long)]
    input: PathBuf,
    /// Sample budget.
    #[arg(long, value_parser = parse_count)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Grid voxel edge (default: about kappa points per voxel).
    #[arg(long)]
    voxel_edge: Option<f64>,
    /// Proxy target points per coarse voxel.
    #[arg(long, default_value_t = 256)]
    occupancy: usize,
    /// Proxy importance floor.
    #[arg(long, default_value_t = 1e-6)]
    proxy_eps: f64,
    /// Neighbourhood size for knn.
    #[arg(long, default_value_t = 32)]
    knn_k: usize,
    /// Morton window for approximate knn (exact search when absent).
    #[arg(long)]
    knn_window: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Ground truth, one row per point (whitespace or comma separated).
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Per-point weights, one per line.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Report {
    Tv,
    Decomp,
    Riskgap,
}

#[derive(Args, Debug)]
struct MeasureArgs {
    #[arg(long, value_enum)]
    report: Report,
    #[arg(long)]
    input: PathBuf,
    /// Index files (u64 little-endian) to evaluate; repeatable.
    #[arg(long = "sample", required = true)]
    samples: Vec<PathBuf>,
    /// Per-cell losses, one per line (riskgap only).
    #[arg(long)]
    losses: Option<PathBuf>,
    /// Upper bound M on the losses (riskgap only).
    #[arg(long)]
    loss_bound: Option<f64>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Cloud sizes, e.g. `1e5,1e6`.
    #[arg(long, value_delimiter = ',', value_parser = parse_count, default_value = "1e5,1e6")]
    sizes: Vec<usize>,
    /// Wall-clock cap per run in seconds.
    #[arg(long, default_value_t = 600.0)]
    cap: f64,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "random,m3,grid,proxy,knn")]
    methods: Vec<Method>,
    #[arg(long, value_parser = parse_count, default_value = "8192")]
    m: usize,
    /// Synthetic preset used for every size.
    #[arg(long, default_value = "boundary_layer")]
    preset: String,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: crate::M3Error| e.to_string())
}

fn parse_format(s: &str) -> Result<CloudFormat, String> {
    s.parse().map_err(|e: crate::M3Error| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: crate::M3Error| e.to_string())
}

/// Accepts plain integers and exact float notation such as `1e6`.
fn parse_count(s: &str) -> Result<usize, String> {
    if let Ok(v) = s.parse::<usize>() {
        return Ok(v);
    }
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a count"))?;
    if v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(53) {
        Ok(v as usize)
    } else {
        Err(format!("`{s}` is not a nonnegative integer"))
    }
}

/// What every run leaves next to its artifacts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Profile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<M3Config>,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    pub outputs: Vec<String>,
}

/// Output directory that forgets everything it wrote unless committed.
struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn open(dir: &Path) -> CliResult<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs { dir: dir.to_path_buf(), created_dir, files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn create(&mut self, name: &str) -> CliResult<BufWriter<File>> {
        let p = self.path(name);
        Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn names(&self) -> Vec<String> {
        self.files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect()
    }

    fn discard(self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

struct Run<'a> {
    command: &'static str,
    argv: &'a [String],
    out: Outputs,
    profile: Option<Profile>,
    config: Option<M3Config>,
    params: BTreeMap<String, Value>,
}

impl Run<'_> {
    fn param(&mut self, key: &str, value: impl Serialize) {
        self.params.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    fn finish(mut self) -> CliResult<()> {
        let mut outputs = self.out.names();
        outputs.push("manifest.json".into());
        let manifest = Manifest {
            tool: "m3".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            argv: self.argv.to_vec(),
            profile: self.profile,
            config: self.config.clone(),
            params: std::mem::take(&mut self.params),
            outputs,
        };
        let result = self.out.write_json("manifest.json", &manifest);
        match result {
            Ok(()) => Ok(()),
            Err(e) => {
                self.out.discard();
                Err(e)
            }
        }
    }
}

fn merge_json(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl ConfigArgs {
    /// Profile defaults, then the JSON file, then explicit flags.
    fn resolve(&self, m: Option<usize>, seed: Option<u64>) -> CliResult<(Profile, M3Config)> {
        let file: Option<Value> = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
            }
            None => None,
        };
        let (file_profile, overlay) = match file {
            Some(Value::Object(mut obj)) => {
                let profile = obj
                    .get("profile")
                    .and_then(Value::as_str)
                    .map(str::parse::<Profile>)
                    .transpose()?;
                let overlay = if obj.contains_key("argv") {
                    obj.remove("config").unwrap_or(Value::Object(Default::default()))
                } else {
                    obj.remove("profile");
                    Value::Object(obj)
                };
                (profile, Some(overlay))
            }
            Some(_) => bail!("config file must hold a JSON object"),
            None => (None, None),
        };
        let profile = self.profile.or(file_profile).unwrap_or(Profile::Surface);
        let mut value = serde_json::to_value(M3Config::profile(profile))?;
        if let Some(overlay) = overlay {
            merge_json(&mut value, overlay);
        }
        let mut cfg: M3Config = serde_json::from_value(value).context("invalid config")?;
        let p = &mut cfg.partition;
        if let Some(v) = self.eps_refine {
            p.eps_refine = v;
        }
        if let Some(v) = self.g_max {
            p.g_max = v;
        }
        if let Some(v) = self.kappa {
            p.kappa = v;
        }
        if let Some(v) = &self.w_scalar {
            p.scalar_weights = v.clone();
        }
        if let Some(v) = &self.w_vector {
            p.vector_weights = v.clone();
        }
        let s = &mut cfg.stratify;
        if let Some(v) = self.k {
            s.k = v;
        }
        if let Some(v) = self.p_lo {
            s.p_lo = v;
        }
        if let Some(v) = self.p_hi {
            s.p_hi = v;
        }
        let a = &mut cfg.alloc;
        if let Some(v) = self.rho {
            a.rho = v;
        }
        if let Some(v) = &self.alpha {
            a.alpha = Some(v.clone());
        }
        if let Some(v) = m {
            a.m = v;
        }
        if let Some(v) = seed {
            a.seed = v;
        }
        cfg.validate()?;
        Ok((profile, cfg))
    }

    fn seeded_in_file(&self) -> CliResult<bool> {
        let Some(path) = &self.config else { return Ok(false) };
        let v: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
        let cfg = v.get("config").unwrap_or(&v);
        Ok(cfg.get("alloc").and_then(|a| a.get("seed")).is_some())
    }
}

fn load_input(path: &Path) -> CliResult<LabeledPointCloud> {
    load_cloud(path, CloudFormat::from_path(path)).with_context(|| format!("loading {}", path.display()))
}

fn read_rows(path: &Path) -> CliResult<(Vec<f64>, usize)> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut values = Vec::new();
    let mut dim = None;
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("{}:{}: not a number row", path.display(), line_no + 1))?;
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                bail!("{}:{}: expected {d} columns, found {}", path.display(), line_no + 1, row.len())
            }
            _ => {}
        }
        values.extend(row);
    }
    let dim = dim.ok_or_else(|| anyhow!("{} holds no rows", path.display()))?;
    Ok((values, dim))
}

fn cmd_gen(args: &GenArgs, run: &mut Run<'_>) -> CliResult<()> {
    let spec = match (&args.preset, &args.spec) {
        (Some(name), _) => SynthSpec::preset(name)?,
        (None, Some(path)) => SynthSpec::from_json(&fs::read_to_string(path)?)?,
        (None, None) => bail!("need --preset or --spec"),
    };
    let cloud = generate_cloud(&spec, args.n, args.seed)?;
    let name = match args.format {
        CloudFormat::Binary => "cloud.m3pc",
        CloudFormat::Csv => "cloud.csv",
    };
    let path = run.out.path(name);
    save_cloud(&path, &cloud, args.format)?;
    run.param("spec", &spec);
    run.param("n", args.n);
    run.param("seed", args.seed);
    println!("wrote {} points to {}", cloud.len(), path.display());
    Ok(())
}

fn cmd_partition(args: &PartitionArgs, run: &mut Run<'_>, with_strata: bool) -> CliResult<()> {
    let (profile, cfg) = args.config.resolve(None, None)?;
    let cloud = load_input(&args.input)?;
    let cloud = prepare(&cloud);
    let (_, partition) = partition_cloud(&cloud, &cfg.partition)?;
    let mut w = run.out.create("partition.jsonl")?;
    partition.write_jsonl(&mut w)?;
    w.flush()?;
    run.param("input", args.input.display().to_string());
    run.param("refine_stats", &partition.stats);
    let mut summary = serde_json::json!({
        "cells": partition.len(),
        "n_thr_s": partition.stats.n_thr_s(),
        "n_thr_v": partition.stats.n_thr_v(),
        "n_refine_s": partition.stats.n_refine_s(),
        "n_refine_v": partition.stats.n_refine_v(),
    });
    if with_strata {
        let strata = assign_strata(&partition, &cfg.stratify)?;
        let mut w = run.out.create("labels.u16")?;
        strata.write_labels(&mut w)?;
        w.flush()?;
        let sizes: Vec<usize> = partition.cells.iter().map(|c| c.n()).collect();
        let per_stratum = strata.summary(&sizes);
        run.out.write_json(
            "strata.json",
            &serde_json::json!({
                "edges": strata.edges,
                "labels_path": "labels.u16",
                "per_stratum": per_stratum,
            }),
        )?;
        summary["nonempty_strata"] = per_stratum.iter().filter(|s| s.cells > 0).count().into();
    }
    run.profile = Some(profile);
    run.config = Some(cfg);
    println!("{summary}");
    Ok(())
}

#[derive(Serialize)]
struct SampleReport {
    method: SampleMethod,
    #[serde(flatten)]
    sidecar: MeasureSidecar,
    draws: u64,
}

fn cmd_sample(args: &SampleArgs, run: &mut Run<'_>) -> CliResult<()> {
    if args.seed.is_none() && !args.config.seeded_in_file()? {
        bail!("--seed is required for sampling");
    }
    if args.m.is_none() && args.config.config.is_none() {
        bail!("--m is required");
    }
    let (profile, cfg) = args.config.resolve(args.m, args.seed)?;
    let seed = cfg.alloc.seed;
    let m = cfg.alloc.m;
    let cloud = load_input(&args.input)?;
    let (measure, sidecar, draws): (EmpiricalMeasure, MeasureSidecar, u64) = match args.method {
        SampleMethod::M3 => {
            let out = m3_sample(&cloud, &cfg)?;
            let sidecar = MeasureSidecar::from_plan(&out.plan, seed);
            let draws = out.measure.len() as u64;
            (out.measure, sidecar, draws)
        }
        method => {
            let cloud = prepare(&cloud);
            let sample = match method {
                SampleMethod::Random => {
                    let measure = random_sample(cloud.len(), m.min(cloud.len()), seed)?;
                    let draws = measure.len() as u64;
                    crate::baselines::BaselineSample { measure, draws, scores: Vec::new() }
                }
                SampleMethod::Grid => grid_sample(&*cloud, &cfg.partition, args.voxel_edge, m, seed)?,
                SampleMethod::Proxy => proxy_sample(&*cloud, &cfg.partition, args.occupancy, args.proxy_eps, m, seed)?,
                SampleMethod::Knn => {
                    let knn = KnnConfig { k: args.knn_k, window: args.knn_window, time_limit: None };
                    knn_sample(&*cloud, &cfg.partition, &knn, m)?
                }
                SampleMethod::M3 => unreachable!(),
            };
            let sidecar = MeasureSidecar {
                m_prime: sample.measure.len(),
                seed,
                per_level: Vec::new(),
                rho: 1.0,
                alpha: None,
                alpha_adjusted: false,
            };
            (sample.measure, sidecar, sample.draws)
        }
    };
    let mut w = run.out.create("indices.bin")?;
    measure.write_indices_bin(&mut w)?;
    w.flush()?;
    let mut w = run.out.create("indices.txt")?;
    measure.write_indices_txt(&mut w)?;
    w.flush()?;
    let report = SampleReport { method: args.method, sidecar, draws };
    run.out.write_json("measure.json", &report)?;
    run.param("input", args.input.display().to_string());
    run.param("method", args.method);
    run.param("voxel_edge", args.voxel_edge);
    run.param("occupancy", args.occupancy);
    run.param("proxy_eps", args.proxy_eps);
    run.param("knn_k", args.knn_k);
    run.param("knn_window", args.knn_window);
    run.profile = Some(profile);
    run.config = Some(cfg);
    println!("sampled {} indices", measure.len());
    Ok(())
}

fn cmd_metrics(args: &MetricsArgs, run: &mut Run<'_>) -> CliResult<()> {
    let (truth, dim) = read_rows(&args.truth)?;
    let (pred, pdim) = read_rows(&args.pred)?;
    if dim != pdim {
        bail!("truth has {dim} columns, prediction has {pdim}");
    }
    let weights = match &args.weights {
        Some(path) => {
            let (w, wdim) = read_rows(path)?;
            if wdim != 1 {
                bail!("weights file must have one column");
            }
            Some(w)
        }
        None => None,
    };
    let pair = FieldPair::new(truth, pred, dim, weights)?;
    let plain = unweighted_errors(&pair)?;
    let weighted = weighted_errors(&pair)?;
    let report = serde_json::json!({
        "mae": plain.mae, "mse": plain.mse, "rel_l2": plain.rel_l2,
        "mae_w": weighted.mae, "mse_w": weighted.mse, "rel_l2_w": weighted.rel_l2,
    });
    run.out.write_json("metrics.json", &report)?;
    run.param("truth", args.truth.display().to_string());
    run.param("pred", args.pred.display().to_string());
    run.param("weights", args.weights.as_ref().map(|p| p.display().to_string()));
    println!("{report}");
    Ok(())
}

fn cmd_measure(args: &MeasureArgs, run: &mut Run<'_>) -> CliResult<()> {
    let (profile, cfg) = args.config.resolve(None, None)?;
    let cloud = load_input(&args.input)?;
    let cloud = prepare(&cloud);
    let (sorted, partition) = partition_cloud(&cloud, &cfg.partition)?;
    let strata = assign_strata(&partition, &cfg.stratify)?;
    let (alpha, _) = crate::allocate::resolve_alpha(&strata, cfg.alloc.alpha.as_deref())?;
    let target = target_measure(&strata.strata, &alpha, partition.len())?;
    let point_cells = partition.point_cells(&sorted);
    let losses = match args.report {
        Report::Riskgap => {
            let path = args.losses.as_ref().ok_or_else(|| anyhow!("riskgap needs --losses"))?;
            let bound = args.loss_bound.ok_or_else(|| anyhow!("riskgap needs --loss-bound"))?;
            let (l, dim) = read_rows(path)?;
            if dim != 1 {
                bail!("losses file must have one column");
            }
            Some((l, bound))
        }
        _ => None,
    };
    let mut rows = Vec::new();
    for path in &args.samples {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let indices = read_indices_bin(&bytes)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= cloud.len()) {
            bail!("{}: index {bad} out of range for {} points", path.display(), cloud.len());
        }
        let mu = CellMeasure::from_point_sample(&indices, &point_cells, partition.len())?;
        let tv = tv_distance(&mu, &target)?;
        let mut row = serde_json::json!({"sample": path.display().to_string(), "m": indices.len(), "tv": tv});
        match args.report {
            Report::Tv => {}
            Report::Decomp => {
                let d = decomposition_terms(&mu, &strata.strata, &alpha)?;
                row["inter"] = d.inter.into();
                row["intra"] = d.intra.into();
                row["holds"] = (2.0 * tv <= d.inter + d.intra + 1e-12).into();
            }
            Report::Riskgap => {
                let (l, bound) = losses.as_ref().unwrap();
                let g = risk_gap_check(l, *bound, &mu, &target)?;
                row["gap"] = g.gap.into();
                row["bound"] = g.bound.into();
                row["holds"] = g.holds().into();
            }
        }
        rows.push(row);
    }
    let report = serde_json::json!({
        "report": args.report,
        "cells": partition.len(),
        "levels": strata.n_levels(),
        "samples": rows,
    });
    run.out.write_json("report.json", &report)?;
    run.param("input", args.input.display().to_string());
    run.param("report", args.report);
    run.param("samples", args.samples.iter().map(|p| p.display().to_string()).collect::<Vec<_>>());
    run.profile = Some(profile);
    run.config = Some(cfg);
    println!("{report}");
    Ok(())
}

fn cmd_bench(args: &BenchArgs, run: &mut Run<'_>) -> CliResult<()> {
    let profile = args.config.profile.unwrap_or(Profile::Volume);
    let config_args = ConfigArgs { profile: Some(profile), ..args.config.clone() };
    let (profile, m3) = config_args.resolve(Some(args.m), None)?;
    let config = BenchConfig {
        methods: args.methods.clone(),
        sizes: args.sizes.clone(),
        cap_s: args.cap,
        seeds: args.seeds.clone(),
        m: args.m,
        spec: SynthSpec::preset(&args.preset)?,
        m3: m3.clone(),
        ..BenchConfig::default()
    };
    let mut w = run.out.create("bench.csv")?;
    writeln!(w, "{CSV_HEADER}")?;
    println!("{CSV_HEADER}");
    let mut err = None;
    bench_run(&config, &mut |row| {
        if let Err(e) = write_csv_row(&mut w, row).and_then(|_| Ok(w.flush()?)) {
            err.get_or_insert(e);
        }
        let mut line = Vec::new();
        let _ = write_csv_row(&mut line, row);
        print!("{}", String::from_utf8_lossy(&line));
    })?;
    if let Some(e) = err {
        return Err(e.into());
    }
    run.param("bench", &config);
    run.param("knn_time_limit", Duration::from_secs_f64(args.cap).as_secs_f64());
    run.profile = Some(profile);
    run.config = Some(m3);
    Ok(())
}

fn replace_out(argv: &[String], out: &Path) -> Vec<String> {
    let mut v = argv.to_vec();
    let out = out.display().to_string();
    if let Some(i) = v.iter().position(|a| a == "--out") {
        if i + 1 < v.len() {
            v[i + 1] = out;
            return v;
        }
    }
    if let Some(i) = v.iter().position(|a| a.starts_with("--out=")) {
        v[i] = format!("--out={out}");
        return v;
    }
    v.push("--out".into());
    v.push(out);
    v
}

fn init_threads() {
    let Ok(value) = std::env::var("M3_THREADS") else { return };
    match value.trim().parse::<usize>() {
        Ok(0) => {}
        Ok(n) => {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Err(_) => eprintln!("warning: ignoring M3_THREADS={value}"),
    }
}

/// Parses `argv` (program name first) and runs it. Returns the exit code.
pub fn run_with(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn execute(cli: Cli, argv: &[String]) -> CliResult<()> {
    init_threads();
    let (name, out) = match &cli.command {
        Command::Gen(a) => ("gen", &a.out),
        Command::Partition(a) => ("partition", &a.out),
        Command::Stratify(a) => ("stratify", &a.out),
        Command::Sample(a) => ("sample", &a.out),
        Command::Metrics(a) => ("metrics", &a.out),
        Command::Measure(a) => ("measure", &a.out),
        Command::Bench(a) => ("bench", &a.out),
        Command::Replay(a) => {
            let text = fs::read_to_string(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
            let manifest: Manifest = serde_json::from_str(&text).context("not a manifest")?;
            let argv = match &a.out {
                Some(out) => replace_out(&manifest.argv, out),
                None => manifest.argv.clone(),
            };
            if argv.get(1).map(String::as_str) == Some("replay") {
                bail!("a manifest cannot replay a replay");
            }
            return match run_with(argv) {
                0 => Ok(()),
                code => Err(anyhow!("replayed command exited with status {code}")),
            };
        }
    };
    let mut run = Run {
        command: name,
        argv,
        out: Outputs::open(out)?,
        profile: None,
        config: None,
        params: BTreeMap::new(),
    };
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a, &mut run),
        Command::Partition(a) => cmd_partition(a, &mut run, false),
        Command::Stratify(a) => cmd_partition(a, &mut run, true),
        Command::Sample(a) => cmd_sample(a, &mut run),
        Command::Metrics(a) => cmd_metrics(a, &mut run),
        Command::Measure(a) => cmd_measure(a, &mut run),
        Command::Bench(a) => cmd_bench(a, &mut run),
        Command::Replay(_) => unreachable!(),
    };
    match result {
        Ok(()) => run.finish(),
        Err(e) => {
            run.out.discard();
            Err(e)
        }
    }
}

/// Entry point for the `m3` binary.
pub fn run() -> i32 {
    run_with(std::env::args().collect())
}
