use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;

/// One named parameter block. Biases are `1 x n` blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl LayerSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A block that is a genuine matrix (both dimensions > 1).
    pub fn is_matrix(&self) -> bool {
        self.rows > 1 && self.cols > 1
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Block layout shared by every vector of the same model.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Layout {
    layers: Arc<[LayerSpec]>,
    len: usize,
}

impl Layout {
    pub fn new(blocks: impl IntoIterator<Item = (String, usize, usize)>) -> Self {
        let mut offset = 0;
        let layers: Vec<LayerSpec> = blocks
            .into_iter()
            .map(|(name, rows, cols)| {
                let spec = LayerSpec { name, rows, cols, offset };
                offset += rows * cols;
                spec
            })
            .collect();
        Self { layers: layers.into(), len: offset }
    }

    /// Concatenates layouts, prefixing layer names.
    pub fn concat(parts: &[(&str, &Layout)]) -> Self {
        Self::new(parts.iter().flat_map(|(prefix, layout)| {
            layout.layers.iter().map(move |l| (format!("{prefix}{}", l.name), l.rows, l.cols))
        }))
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Flat parameter storage with a layer-indexed view.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    layout: Layout,
    data: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: &Layout) -> Self {
        Self { layout: layout.clone(), data: vec![0.0; layout.len()] }
    }

    pub fn from_flat(layout: &Layout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::shape(format!("flat length {} != layout length {}", data.len(), layout.len())));
        }
        Ok(Self { layout: layout.clone(), data })
    }

    /// Convenience for a single-block vector, e.g. a raw parameter array in tests.
    pub fn single(name: &str, values: Vec<f64>) -> Self {
        let layout = Layout::new([(name.to_string(), 1, values.len())]);
        Self { layout, data: values }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn layers(&self) -> &[LayerSpec] {
        self.layout.layers()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn block(&self, layer: usize) -> &[f64] {
        &self.data[self.layout.layers[layer].range()]
    }

    pub fn block_mut(&mut self, layer: usize) -> &mut [f64] {
        let range = self.layout.layers[layer].range();
        &mut self.data[range]
    }

    pub fn block_mat(&self, layer: usize) -> Mat {
        let spec = &self.layout.layers[layer];
        Mat::from_vec(spec.rows, spec.cols, self.block(layer).to_vec())
    }

    pub fn set_block(&mut self, layer: usize, values: &Mat) -> Result<()> {
        let spec = &self.layout.layers[layer];
        if values.shape() != (spec.rows, spec.cols) {
            return Err(Error::shape(format!(
                "block {} is {}x{}, got {:?}",
                spec.name,
                spec.rows,
                spec.cols,
                values.shape()
            )));
        }
        self.block_mut(layer).copy_from_slice(values.as_slice());
        Ok(())
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }

    pub fn check_same_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "parameter layouts differ ({} vs {} values)",
                self.len(),
                other.len()
            )))
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.layout)
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    pub fn block_norm(&self, layer: usize) -> f64 {
        self.block(layer).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
