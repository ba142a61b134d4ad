//! Chunked access to point data, shared by the in-memory cloud and the
//! on-disk reader so baseline samplers can run as streaming passes.

use crate::cloud::LabeledPointCloud;
use crate::error::Result;

pub const DEFAULT_CHUNK: usize = 1 << 16;

/// A contiguous run of rows; `positions[i]` is global row `offset + i`.
#[derive(Clone, Debug)]
pub struct ChunkView<'a> {
    pub positions: &'a [[f64; 3]],
    pub scalars: Vec<&'a [f64]>,
    pub vectors: Vec<&'a [[f64; 3]]>,
}

impl ChunkView<'_> {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub trait PointSource {
    fn len(&self) -> usize;
    fn n_scalar(&self) -> usize;
    fn n_vector(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Visits the rows in order, `chunk_size` at a time. The callback gets
    /// the global offset of the chunk's first row.
    fn for_each_chunk(
        &mut self,
        chunk_size: usize,
        f: &mut dyn FnMut(usize, ChunkView<'_>) -> Result<()>,
    ) -> Result<()>;
}

impl PointSource for &LabeledPointCloud {
    fn len(&self) -> usize {
        self.positions.len()
    }

    fn n_scalar(&self) -> usize {
        self.scalars.len()
    }

    fn n_vector(&self) -> usize {
        self.vectors.len()
    }

    fn for_each_chunk(
        &mut self,
        chunk_size: usize,
        f: &mut dyn FnMut(usize, ChunkView<'_>) -> Result<()>,
    ) -> Result<()> {
        let n = self.positions.len();
        let step = chunk_size.max(1);
        let mut start = 0;
        while start < n {
            let end = (start + step).min(n);
            let view = ChunkView {
                positions: &self.positions[start..end],
                scalars: self.scalars.iter().map(|c| &c.values[start..end]).collect(),
                vectors: self.vectors.iter().map(|c| &c.values[start..end]).collect(),
            };
            f(start, view)?;
            start = end;
        }
        Ok(())
    }
}

impl<T: PointSource + ?Sized> PointSource for &mut T {
    fn len(&self) -> usize {
        (**self).len()
    }

    fn n_scalar(&self) -> usize {
        (**self).n_scalar()
    }

    fn n_vector(&self) -> usize {
        (**self).n_vector()
    }

    fn for_each_chunk(
        &mut self,
        chunk_size: usize,
        f: &mut dyn FnMut(usize, ChunkView<'_>) -> Result<()>,
    ) -> Result<()> {
        (**self).for_each_chunk(chunk_size, f)
    }
}

/// Owned buffers backing a [`ChunkView`] for readers that decode from disk.
#[derive(Debug, Default)]
pub(crate) struct ChunkBuf {
    pub positions: Vec<[f64; 3]>,
    pub scalars: Vec<Vec<f64>>,
    pub vectors: Vec<Vec<[f64; 3]>>,
}

impl ChunkBuf {
    pub fn new(n_scalar: usize, n_vector: usize) -> Self {
        ChunkBuf {
            positions: Vec::new(),
            scalars: vec![Vec::new(); n_scalar],
            vectors: vec![Vec::new(); n_vector],
        }
    }

    pub fn view(&self) -> ChunkView<'_> {
        ChunkView {
            positions: &self.positions,
            scalars: self.scalars.iter().map(|v| v.as_slice()).collect(),
            vectors: self.vectors.iter().map(|v| v.as_slice()).collect(),
        }
    }
}
