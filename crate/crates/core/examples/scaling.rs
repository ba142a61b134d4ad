//! Wall-clock scaling of the samplers, written as CSV to stdout.
//!
//!     cargo run --release --example scaling -- 1e5,1e6
//!
//! Exact knn is left out by default; add it with `--knn`.

use m3::bench::{bench_run, mean_wall, write_csv_row, BenchConfig, Method, CSV_HEADER};

fn main() -> m3::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let sizes = args
        .iter()
        .find(|a| !a.starts_with("--"))
        .map(|s| s.split(',').map(|t| t.parse::<f64>().expect("size") as usize).collect())
        .unwrap_or_else(|| vec![100_000, 1_000_000]);
    let mut methods = vec![Method::Random, Method::M3, Method::Grid, Method::Proxy];
    if args.iter().any(|a| a == "--knn") {
        methods.push(Method::Knn);
    }
    let config = BenchConfig { methods: methods.clone(), sizes: sizes.clone(), seeds: vec![0, 1, 2], cap_s: 120.0, ..BenchConfig::default() };

    println!("{CSV_HEADER}");
    let rows = bench_run(&config, &mut |row| {
        write_csv_row(&mut std::io::stdout(), row).unwrap();
    })?;
    eprintln!();
    for &n in &sizes {
        let means: Vec<String> = methods
            .iter()
            .map(|&m| format!("{} {}", m.name(), mean_wall(&rows, m, n).map_or("-".into(), |t| format!("{t:.4}s"))))
            .collect();
        eprintln!("N={n}: {}", means.join(", "));
    }
    Ok(())
}
