//! Round trip through the binary and CSV formats, then a chunked pass over
//! the binary file without loading it.

use m3::io::{load_cloud, save_cloud, CloudFormat, M3pcReader};
use m3::stream::PointSource;
use m3::synth::{generate_cloud, SynthSpec};

fn main() -> m3::Result<()> {
    let dir = std::env::temp_dir().join(format!("m3-cloud-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let cloud = generate_cloud(&SynthSpec::boundary_layer(10.0), 50_000, 9)?;

    for (name, format) in [("cloud.m3pc", CloudFormat::Binary), ("cloud.csv", CloudFormat::Csv)] {
        let path = dir.join(name);
        save_cloud(&path, &cloud, format)?;
        let back = load_cloud(&path, format)?;
        let bytes = std::fs::metadata(&path)?.len();
        println!("{name:<11} {bytes:>10} bytes, identical: {}", back == cloud);
    }

    let mut reader = M3pcReader::open(dir.join("cloud.m3pc"))?;
    println!("header: {:?}", reader.header());
    let (mut chunks, mut wall) = (0, 0usize);
    reader.for_each_chunk(8192, &mut |_, chunk| {
        chunks += 1;
        wall += chunk.positions.iter().filter(|p| p[2] < 0.05).count();
        Ok(())
    })?;
    println!("{chunks} chunks, {wall} of {} points in the wall slab", reader.len());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
