//! Sequential module: an ordered stack of layers with a recorded forward.

use super::layers::{Cache, Layer};
use super::tensor::Tensor;
use super::NnError;

/// A sequential stack of layers with named parameters.
#[derive(Clone, Debug)]
pub struct Module {
    pub layers: Vec<Layer>,
}

/// Intermediates recorded by [`Module::forward_train`], consumed by
/// [`Module::backward`]. Holding the tape by value makes "backward without
/// forward" unrepresentable.
pub struct Tape {
    caches: Vec<Cache>,
}

impl Module {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Inference forward.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.forward_partial(x, self.layers.len())
    }

    /// Forward through the first `upto` layers only (e.g. everything before a
    /// classification head).
    pub fn forward_partial(&self, x: &Tensor, upto: usize) -> Result<Tensor, NnError> {
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().take(upto).enumerate() {
            let (y, _) = layer.forward(&cur).map_err(|e| match e {
                NnError::Shape(msg) => {
                    NnError::Shape(format!("layer {i} ({}): {msg}", layer.kind()))
                }
                other => other,
            })?;
            cur = y;
        }
        Ok(cur)
    }

    /// Forward that records everything backward needs.
    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, Tape), NnError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = layer.forward(&cur).map_err(|e| match e {
                NnError::Shape(msg) => {
                    NnError::Shape(format!("layer {i} ({}): {msg}", layer.kind()))
                }
                other => other,
            })?;
            caches.push(cache);
            cur = y;
        }
        Ok((cur, Tape { caches }))
    }

    /// Reverse pass. Returns gradients in [`Module::params`] order plus the
    /// gradient with respect to the module input.
    pub fn backward(&self, tape: &Tape, dy: &Tensor) -> Result<(Vec<Tensor>, Tensor), NnError> {
        let mut grads_rev: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        let mut cur = dy.clone();
        for (layer, cache) in self.layers.iter().zip(&tape.caches).rev() {
            let (pg, dx) = layer.backward(cache, &cur)?;
            grads_rev.push(pg);
            cur = dx;
        }
        let mut grads = Vec::new();
        for pg in grads_rev.into_iter().rev() {
            grads.extend(pg);
        }
        Ok((grads, cur))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| l.params().into_iter().map(|(_, t)| t))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Parameter names as "<layer index>.<param name>".
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.params() {
                out.push((format!("{i}.{name}"), t));
            }
        }
        out
    }

    pub fn zeros_like_params(&self) -> Vec<Tensor> {
        self.params()
            .into_iter()
            .map(|p| Tensor::zeros(&p.shape))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Accumulate `src` gradients into `dst` (both in params order).
    pub fn accumulate(dst: &mut [Tensor], src: &[Tensor]) {
        debug_assert_eq!(dst.len(), src.len());
        for (d, s) in dst.iter_mut().zip(src) {
            super::linalg::add_inplace(&mut d.data, &s.data);
        }
    }
}
