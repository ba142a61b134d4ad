//! On-disk cloud formats: the little-endian `M3PC` binary container and a
//! CSV alternative. [`M3pcReader`] reads the binary format in row chunks
//! without materializing the whole file.
//!
//! Binary layout:
//!
//! ```text
//! "M3PC" | version u32 = 1 | N u64 | n_scalar u16 | n_vector u16 | has_weights u8
//! per channel (scalars, then vectors): name_len u16 | UTF-8 name
//! positions  N x 3 f64
//! scalars    N f64        (one block per channel)
//! vectors    N x 3 f64    (one block per channel)
//! weights    N f64        (if has_weights)
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::cloud::{LabeledPointCloud, ScalarChannel, VectorChannel};
use crate::error::{M3Error, Result};
use crate::stream::{ChunkBuf, PointSource};

pub const MAGIC: &[u8; 4] = b"M3PC";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudFormat {
    Binary,
    Csv,
}

impl CloudFormat {
    /// Guesses from the file extension (`.csv` is CSV, anything else binary).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CloudFormat::Csv,
            _ => CloudFormat::Binary,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = M3Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "m3pc" => Ok(CloudFormat::Binary),
            "csv" => Ok(CloudFormat::Csv),
            other => Err(M3Error::config(format!("unknown cloud format `{other}`"))),
        }
    }
}

pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<LabeledPointCloud> {
    let file = File::open(path.as_ref())?;
    match format {
        CloudFormat::Binary => read_binary(BufReader::new(file)),
        CloudFormat::Csv => read_csv(BufReader::new(file)),
    }
}

pub fn save_cloud(path: impl AsRef<Path>, cloud: &LabeledPointCloud, format: CloudFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    match format {
        CloudFormat::Binary => write_binary(&mut w, cloud)?,
        CloudFormat::Csv => write_csv(&mut w, cloud)?,
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct M3pcHeader {
    pub n: u64,
    pub scalar_names: Vec<String>,
    pub vector_names: Vec<String>,
    pub has_weights: bool,
    /// Byte offset of the first data block.
    pub data_offset: u64,
}

impl M3pcHeader {
    fn blocks(&self) -> Vec<(String, usize)> {
        let mut b = vec![("position".to_string(), 3)];
        b.extend(self.scalar_names.iter().map(|n| (n.clone(), 1)));
        b.extend(self.vector_names.iter().map(|n| (n.clone(), 3)));
        if self.has_weights {
            b.push(("weights".to_string(), 1));
        }
        b
    }

    fn block_offset(&self, block: usize) -> u64 {
        let n = self.n;
        let widths: u64 = self.blocks()[..block].iter().map(|(_, w)| *w as u64).sum();
        self.data_offset + widths * n * 8
    }

    fn data_len(&self) -> u64 {
        let widths: u64 = self.blocks().iter().map(|(_, w)| *w as u64).sum();
        widths * self.n * 8
    }
}

pub fn read_header<R: Read>(r: &mut R) -> Result<M3pcHeader> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| M3Error::MalformedHeader("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(M3Error::MalformedHeader(format!("bad magic {magic:?}")));
    }
    let hdr = |e: std::io::Error| M3Error::MalformedHeader(format!("truncated header: {e}"));
    let version = r.read_u32::<LittleEndian>().map_err(hdr)?;
    if version != VERSION {
        return Err(M3Error::MalformedHeader(format!("unsupported version {version}")));
    }
    let n = r.read_u64::<LittleEndian>().map_err(hdr)?;
    let n_scalar = r.read_u16::<LittleEndian>().map_err(hdr)?;
    let n_vector = r.read_u16::<LittleEndian>().map_err(hdr)?;
    let has_weights = match r.read_u8().map_err(hdr)? {
        0 => false,
        1 => true,
        other => {
            return Err(M3Error::MalformedHeader(format!("has_weights byte {other}")));
        }
    };
    let mut offset = 4 + 4 + 8 + 2 + 2 + 1;
    let mut read_name = |r: &mut R| -> Result<String> {
        let len = r.read_u16::<LittleEndian>().map_err(hdr)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(hdr)?;
        offset += 2 + len as u64;
        String::from_utf8(buf).map_err(|_| M3Error::MalformedHeader("channel name is not UTF-8".into()))
    };
    let scalar_names = (0..n_scalar).map(|_| read_name(r)).collect::<Result<Vec<_>>>()?;
    let vector_names = (0..n_vector).map(|_| read_name(r)).collect::<Result<Vec<_>>>()?;
    Ok(M3pcHeader {
        n,
        scalar_names,
        vector_names,
        has_weights,
        data_offset: offset,
    })
}

fn read_f64s<R: Read>(r: &mut R, out: &mut [f64]) -> std::io::Result<()> {
    let mut buf = vec![0u8; out.len() * 8];
    r.read_exact(&mut buf)?;
    for (o, chunk) in out.iter_mut().zip(buf.chunks_exact(8)) {
        *o = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<LabeledPointCloud> {
    let header = read_header(&mut r)?;
    let n = usize::try_from(header.n)
        .map_err(|_| M3Error::MalformedHeader("point count overflows usize".into()))?;
    if n == 0 {
        return Err(M3Error::EmptyCloud);
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let expected = header.data_len() as usize;
    if data.len() < expected {
        // Name the first block the payload fails to cover.
        let mut at = 0usize;
        for (name, width) in header.blocks() {
            let need = width * n * 8;
            if at + need > data.len() {
                let avail = data.len().saturating_sub(at);
                return Err(M3Error::LengthMismatch {
                    channel: name,
                    expected: n,
                    found: avail / (width * 8),
                });
            }
            at += need;
        }
    }
    if data.len() > expected {
        return Err(M3Error::MalformedHeader(format!(
            "{} trailing bytes after data blocks",
            data.len() - expected
        )));
    }
    let f64s: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut at = 0;
    let mut take = |len: usize| {
        let s = &f64s[at..at + len];
        at += len;
        s
    };
    let positions: Vec<[f64; 3]> = take(3 * n).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let scalars = header
        .scalar_names
        .iter()
        .map(|name| ScalarChannel {
            name: name.clone(),
            values: take(n).to_vec(),
        })
        .collect();
    let vectors = header
        .vector_names
        .iter()
        .map(|name| VectorChannel {
            name: name.clone(),
            values: take(3 * n).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
        .collect();
    let weights = header.has_weights.then(|| take(n).to_vec());
    LabeledPointCloud::new(positions, scalars, vectors, weights)
}

pub fn write_binary<W: Write>(w: &mut W, cloud: &LabeledPointCloud) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(cloud.len() as u64)?;
    let count = |k: usize, what: &str| {
        u16::try_from(k).map_err(|_| M3Error::config(format!("too many {what} channels")))
    };
    w.write_u16::<LittleEndian>(count(cloud.scalars.len(), "scalar")?)?;
    w.write_u16::<LittleEndian>(count(cloud.vectors.len(), "vector")?)?;
    w.write_u8(cloud.geom_weights.is_some() as u8)?;
    let names = cloud
        .scalars
        .iter()
        .map(|c| &c.name)
        .chain(cloud.vectors.iter().map(|c| &c.name));
    for name in names {
        let len = u16::try_from(name.len()).map_err(|_| M3Error::config("channel name too long"))?;
        w.write_u16::<LittleEndian>(len)?;
        w.write_all(name.as_bytes())?;
    }
    let mut put = |v: f64| w.write_f64::<LittleEndian>(v);
    for p in &cloud.positions {
        p.iter().try_for_each(|v| put(*v))?;
    }
    for ch in &cloud.scalars {
        ch.values.iter().try_for_each(|v| put(*v))?;
    }
    for ch in &cloud.vectors {
        for v in &ch.values {
            v.iter().try_for_each(|c| put(*c))?;
        }
    }
    if let Some(ws) = &cloud.geom_weights {
        ws.iter().try_for_each(|v| put(*v))?;
    }
    Ok(())
}

enum Column {
    Pos(usize),
    Scalar(usize),
    Vector(usize, usize),
    Weight,
}

pub fn read_csv<R: BufRead>(r: R) -> Result<LabeledPointCloud> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| M3Error::MalformedHeader("empty csv".into()))??;
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[..3] != ["x", "y", "z"] {
        return Err(M3Error::MalformedHeader("csv must start with x,y,z".into()));
    }
    let mut layout = vec![Column::Pos(0), Column::Pos(1), Column::Pos(2)];
    let mut scalar_names: Vec<String> = Vec::new();
    let mut vector_names: Vec<String> = Vec::new();
    let mut has_weights = false;
    let mut i = 3;
    while i < cols.len() {
        let c = cols[i];
        if let Some(name) = c.strip_prefix("s:") {
            layout.push(Column::Scalar(scalar_names.len()));
            scalar_names.push(name.to_string());
            i += 1;
        } else if let Some(rest) = c.strip_prefix("v:") {
            let name = rest
                .strip_suffix("_x")
                .ok_or_else(|| M3Error::MalformedHeader(format!("vector column `{c}` must end in _x")))?;
            for (k, axis) in ["_x", "_y", "_z"].iter().enumerate() {
                let want = format!("v:{name}{axis}");
                if cols.get(i + k) != Some(&want.as_str()) {
                    return Err(M3Error::MalformedHeader(format!("expected column `{want}`")));
                }
                layout.push(Column::Vector(vector_names.len(), k));
            }
            vector_names.push(name.to_string());
            i += 3;
        } else if c == "w" && i == cols.len() - 1 {
            layout.push(Column::Weight);
            has_weights = true;
            i += 1;
        } else {
            return Err(M3Error::MalformedHeader(format!("unknown column `{c}`")));
        }
    }

    let mut positions = Vec::new();
    let mut scalars: Vec<Vec<f64>> = vec![Vec::new(); scalar_names.len()];
    let mut vectors: Vec<Vec<[f64; 3]>> = vec![Vec::new(); vector_names.len()];
    let mut weights = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() > layout.len() {
            return Err(M3Error::MalformedRecord {
                index: row,
                reason: format!("{} fields, header has {}", fields.len(), layout.len()),
            });
        }
        let mut pos = [f64::NAN; 3];
        let mut vec_vals = vec![[f64::NAN; 3]; vector_names.len()];
        let mut vec_seen = vec![0usize; vector_names.len()];
        for (col, field) in layout.iter().zip(fields.iter().chain(std::iter::repeat(&""))) {
            if field.is_empty() {
                if let Column::Pos(_) = col {
                    return Err(M3Error::MalformedRecord {
                        index: row,
                        reason: "missing coordinate".into(),
                    });
                }
                continue;
            }
            let v: f64 = field.parse().map_err(|_| M3Error::MalformedRecord {
                index: row,
                reason: format!("cannot parse `{field}`"),
            })?;
            match col {
                Column::Pos(a) => pos[*a] = v,
                Column::Scalar(k) => scalars[*k].push(v),
                Column::Vector(j, a) => {
                    vec_vals[*j][*a] = v;
                    vec_seen[*j] += 1;
                }
                Column::Weight => weights.push(v),
            }
        }
        for (j, seen) in vec_seen.iter().enumerate() {
            match seen {
                3 => vectors[j].push(vec_vals[j]),
                0 => {}
                _ => {
                    return Err(M3Error::MalformedRecord {
                        index: row,
                        reason: format!("partial vector `{}`", vector_names[j]),
                    })
                }
            }
        }
        positions.push(pos);
    }
    LabeledPointCloud::new(
        positions,
        scalar_names
            .into_iter()
            .zip(scalars)
            .map(|(name, values)| ScalarChannel { name, values })
            .collect(),
        vector_names
            .into_iter()
            .zip(vectors)
            .map(|(name, values)| VectorChannel { name, values })
            .collect(),
        has_weights.then_some(weights),
    )
}

pub fn write_csv<W: Write>(w: &mut W, cloud: &LabeledPointCloud) -> Result<()> {
    let mut header = vec!["x".to_string(), "y".into(), "z".into()];
    header.extend(cloud.scalars.iter().map(|c| format!("s:{}", c.name)));
    for c in &cloud.vectors {
        for axis in ["x", "y", "z"] {
            header.push(format!("v:{}_{axis}", c.name));
        }
    }
    if cloud.geom_weights.is_some() {
        header.push("w".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..cloud.len() {
        let mut row: Vec<String> = cloud.positions[i].iter().map(|v| v.to_string()).collect();
        row.extend(cloud.scalars.iter().map(|c| c.values[i].to_string()));
        for c in &cloud.vectors {
            row.extend(c.values[i].iter().map(|v| v.to_string()));
        }
        if let Some(ws) = &cloud.geom_weights {
            row.push(ws[i].to_string());
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Chunked reader over an `M3PC` file. Each chunk seeks into every data
/// block, so memory use is bounded by the chunk size.
pub struct M3pcReader {
    file: BufReader<File>,
    header: M3pcHeader,
}

impl M3pcReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = BufReader::new(File::open(path.as_ref())?);
        let header = read_header(&mut file)?;
        let len = file.get_ref().metadata()?.len();
        if len != header.data_offset + header.data_len() {
            return Err(M3Error::MalformedHeader(format!(
                "file is {len} bytes, header implies {}",
                header.data_offset + header.data_len()
            )));
        }
        Ok(M3pcReader { file, header })
    }

    pub fn header(&self) -> &M3pcHeader {
        &self.header
    }

    fn read_rows(&mut self, block: usize, width: usize, start: usize, out: &mut [f64]) -> Result<()> {
        let off = self.header.block_offset(block) + (start * width * 8) as u64;
        self.file.seek(SeekFrom::Start(off))?;
        read_f64s(&mut self.file, out)?;
        Ok(())
    }
}

impl PointSource for M3pcReader {
    fn len(&self) -> usize {
        self.header.n as usize
    }

    fn n_scalar(&self) -> usize {
        self.header.scalar_names.len()
    }

    fn n_vector(&self) -> usize {
        self.header.vector_names.len()
    }

    fn for_each_chunk(
        &mut self,
        chunk_size: usize,
        f: &mut dyn FnMut(usize, crate::stream::ChunkView<'_>) -> Result<()>,
    ) -> Result<()> {
        let n = self.len();
        let (ns, nv) = (self.n_scalar(), self.n_vector());
        let mut buf = ChunkBuf::new(ns, nv);
        let mut flat = Vec::new();
        let mut start = 0;
        while start < n {
            let len = chunk_size.min(n - start);
            flat.resize(3 * len, 0.0);
            self.read_rows(0, 3, start, &mut flat)?;
            buf.positions.clear();
            buf.positions.extend(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]));
            for k in 0..ns {
                buf.scalars[k].resize(len, 0.0);
                let (block, dst) = (1 + k, &mut buf.scalars[k]);
                let off = self.header.block_offset(block) + (start * 8) as u64;
                self.file.seek(SeekFrom::Start(off))?;
                read_f64s(&mut self.file, dst)?;
            }
            for j in 0..nv {
                flat.resize(3 * len, 0.0);
                self.read_rows(1 + ns + j, 3, start, &mut flat)?;
                buf.vectors[j].clear();
                buf.vectors[j].extend(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]));
            }
            f(start, buf.view())?;
            start += len;
        }
        Ok(())
    }
}
