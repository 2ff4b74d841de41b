//! Shared domain types: visual feature grids, token sequences, patch index
//! bookkeeping and emotion labels.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: dims {dims:?} imply {expected} values, got {actual}")]
    ShapeMismatch {
        dims: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("dimension must be at least 1, got {0:?}")]
    ZeroDim(Vec<usize>),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("token sequence is empty")]
    EmptySequence,
    #[error("{0}")]
    Invalid(String),
}

/// Shape of a spatiotemporal feature grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridDims {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl GridDims {
    pub fn new(frames: usize, rows: usize, cols: usize, channels: usize) -> Self {
        Self {
            frames,
            rows,
            cols,
            channels,
        }
    }

    pub fn cells_per_frame(&self) -> usize {
        self.rows * self.cols
    }

    /// Number of spatiotemporal cells, i.e. visual tokens after flattening.
    pub fn cells(&self) -> usize {
        self.frames * self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.cells() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.frames, self.rows, self.cols, self.channels]
    }

    pub fn grid(&self) -> PatchGrid {
        PatchGrid {
            frames: self.frames,
            rows: self.rows,
            cols: self.cols,
        }
    }
}

/// Row-major map between `(t, h, w)` cell coordinates and a flat visual
/// token index `j`; `t` varies slowest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchGrid {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn new(frames: usize, rows: usize, cols: usize) -> Self {
        Self { frames, rows, cols }
    }

    pub fn cells_per_frame(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.frames * self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, t: usize, h: usize, w: usize) -> usize {
        debug_assert!(t < self.frames && h < self.rows && w < self.cols);
        (t * self.rows + h) * self.cols + w
    }

    pub fn coords(&self, j: usize) -> (usize, usize, usize) {
        debug_assert!(j < self.len());
        let w = j % self.cols;
        let h = (j / self.cols) % self.rows;
        let t = j / self.cells_per_frame();
        (t, h, w)
    }

    pub fn frame_of(&self, j: usize) -> usize {
        j / self.cells_per_frame()
    }

    /// Flat indices belonging to frame `t`; contiguous under row-major order.
    pub fn frame_cells(&self, t: usize) -> std::ops::Range<usize> {
        let per = self.cells_per_frame();
        t * per..(t + 1) * per
    }
}

/// Visual feature grid `T' x H' x W' x D`, stored row-major by `(t, h, w, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    dims: GridDims,
    data: Vec<f64>,
}

impl FeatureTensor {
    /// Validates dims and values. Every dim must be at least one and every
    /// value finite.
    pub fn new(dims: GridDims, data: Vec<f64>) -> Result<Self, TensorError> {
        let shape = dims.as_array().to_vec();
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim(shape));
        }
        if dims.len() != data.len() {
            return Err(TensorError::ShapeMismatch {
                dims: shape,
                expected: dims.len(),
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(i));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: GridDims) -> Result<Self, TensorError> {
        Self::new(dims, vec![0.0; dims.len()])
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn grid(&self) -> PatchGrid {
        self.dims.grid()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Channel vector of cell `(t, h, w)`.
    pub fn cell(&self, t: usize, h: usize, w: usize) -> &[f64] {
        let j = self.grid().index(t, h, w);
        self.cell_at(j)
    }

    pub fn cell_at(&self, j: usize) -> &[f64] {
        let d = self.dims.channels;
        &self.data[j * d..(j + 1) * d]
    }

    pub(crate) fn from_parts_unchecked(dims: GridDims, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        Self { dims, data }
    }
}

/// Checks a raw shape and flat buffer against each other and builds the tensor.
pub fn validate_tensor(dims: [usize; 4], values: Vec<f64>) -> Result<FeatureTensor, TensorError> {
    FeatureTensor::new(GridDims::new(dims[0], dims[1], dims[2], dims[3]), values)
}

/// Visual tokens as an `N x D` matrix plus the grid that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatVisual {
    pub grid: PatchGrid,
    pub vectors: Array2<f64>,
}

impl FlatVisual {
    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    /// Inverse of [`flatten_visual`].
    pub fn unflatten(&self) -> Result<FeatureTensor, TensorError> {
        let dims = GridDims::new(
            self.grid.frames,
            self.grid.rows,
            self.grid.cols,
            self.vectors.ncols(),
        );
        FeatureTensor::new(dims, self.vectors.iter().copied().collect())
    }
}

/// Lays the grid out as `N = T'·H'·W'` row vectors. Row `j` is the channel
/// slice of the cell `PatchGrid::coords(j)`.
pub fn flatten_visual(x: &FeatureTensor) -> FlatVisual {
    let dims = x.dims();
    let vectors = Array2::from_shape_vec((dims.cells(), dims.channels), x.data().to_vec())
        .expect("validated tensor has consistent length");
    FlatVisual {
        grid: dims.grid(),
        vectors,
    }
}

/// Text side of the alignment: surface strings paired with `L x d` embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    surfaces: Vec<String>,
    embeddings: Array2<f64>,
}

impl TokenSequence {
    pub fn new(surfaces: Vec<String>, embeddings: Array2<f64>) -> Result<Self, TensorError> {
        if embeddings.nrows() == 0 {
            return Err(TensorError::EmptySequence);
        }
        if embeddings.ncols() == 0 {
            return Err(TensorError::ZeroDim(vec![embeddings.nrows(), 0]));
        }
        if surfaces.len() != embeddings.nrows() {
            return Err(TensorError::ShapeMismatch {
                dims: vec![embeddings.nrows(), embeddings.ncols()],
                expected: embeddings.nrows(),
                actual: surfaces.len(),
            });
        }
        if let Some(i) = embeddings.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(i));
        }
        Ok(Self {
            surfaces,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    pub fn embeddings(&self) -> ArrayView2<'_, f64> {
        self.embeddings.view()
    }

    pub fn embedding(&self, i: usize) -> ArrayView1<'_, f64> {
        self.embeddings.index_axis(Axis(0), i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EmotionLabel {
    pub index: usize,
    pub name: String,
}

/// Ordered category set; indices are positions in the list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
}

/// The seven basic categories shared by DFEW and FERV39k.
pub const BASIC_EMOTIONS: [&str; 7] = [
    "happiness",
    "sadness",
    "neutral",
    "anger",
    "surprise",
    "disgust",
    "fear",
];

impl LabelSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, TensorError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(TensorError::Invalid("label set is empty".into()));
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(TensorError::Invalid(format!("duplicate label `{name}`")));
            }
        }
        Ok(Self { names })
    }

    pub fn basic() -> Self {
        Self::new(BASIC_EMOTIONS).expect("constant labels are unique")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, index: usize) -> Option<EmotionLabel> {
        self.names.get(index).map(|name| EmotionLabel {
            index,
            name: name.clone(),
        })
    }

    pub fn lookup(&self, name: &str) -> Option<EmotionLabel> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|index| EmotionLabel {
                index,
                name: name.to_string(),
            })
    }
}
