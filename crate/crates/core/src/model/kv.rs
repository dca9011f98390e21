use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use crate::{Error, Result};

/// Keys and values of one layer, row-major with `width` floats per position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerKv {
    pub keys: Vec<f32>,
    pub values: Vec<f32>,
}

/// Per-layer attention key/value state for positions `[0, len)`.
///
/// This is everything a causal decoder needs to resume from a prefix, so the
/// state of a prefix never depends on what follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct KvState {
    layers: Vec<LayerKv>,
    width: usize,
    len: usize,
}

impl KvState {
    pub fn empty(num_layers: usize, width: usize) -> Self {
        Self {
            layers: (0..num_layers).map(|_| LayerKv::default()).collect(),
            width,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, index: usize) -> &LayerKv {
        &self.layers[index]
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerKv] {
        &mut self.layers
    }

    /// Number of stored floats.
    pub fn float_count(&self) -> usize {
        2 * self.layers.len() * self.width * self.len
    }

    /// Appends one position to every layer. `keys` and `values` hold one
    /// `width`-row per layer.
    pub(crate) fn push_position(&mut self, layer: usize, key: &[f32], value: &[f32]) {
        let l = &mut self.layers[layer];
        l.keys.extend_from_slice(key);
        l.values.extend_from_slice(value);
    }

    pub(crate) fn set_len(&mut self, len: usize) {
        debug_assert!(self
            .layers
            .iter()
            .all(|l| l.keys.len() == len * self.width && l.values.len() == len * self.width));
        self.len = len;
    }

    /// Keeps positions `[0, len)`.
    pub fn truncate(&mut self, len: usize) {
        if len >= self.len {
            return;
        }
        for l in &mut self.layers {
            l.keys.truncate(len * self.width);
            l.values.truncate(len * self.width);
        }
        self.len = len;
    }

    /// Copy of positions `range`.
    pub fn slice(&self, range: Range<usize>) -> KvState {
        assert!(range.start <= range.end && range.end <= self.len);
        let w = self.width;
        KvState {
            layers: self
                .layers
                .iter()
                .map(|l| LayerKv {
                    keys: l.keys[range.start * w..range.end * w].to_vec(),
                    values: l.values[range.start * w..range.end * w].to_vec(),
                })
                .collect(),
            width: w,
            len: range.end - range.start,
        }
    }

    /// Appends `other`'s positions after this state's.
    pub fn append(&mut self, other: &KvState) -> Result<()> {
        if other.width != self.width || other.layers.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "cannot append state of shape {}x{} to {}x{}",
                other.layers.len(),
                other.width,
                self.layers.len(),
                self.width
            )));
        }
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.keys.extend_from_slice(&src.keys);
            dst.values.extend_from_slice(&src.values);
        }
        self.len += other.len;
        Ok(())
    }

    /// Checks that this state has the shape a backend expects.
    pub fn check_shape(&self, num_layers: usize, width: usize) -> Result<()> {
        if self.layers.len() != num_layers || self.width != width {
            return Err(Error::Contract(format!(
                "key/value state shape {}x{} does not match backend {}x{}",
                self.layers.len(),
                self.width,
                num_layers,
                width
            )));
        }
        Ok(())
    }
}
