//! Max pooling with argmax bookkeeping for the backward pass.

use ndarray::Array4;

use super::conv::out_dim;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    cache: Option<(Array4<usize>, (usize, usize, usize, usize))>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self { kernel, stride, cache: None }
    }

    pub fn output_shape(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (out_dim(h, self.kernel, self.stride, 0), out_dim(w, self.kernel, self.stride, 0)) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(Error::ShapeUnderflow {
                layer: format!("maxpool{}x{}", self.kernel, self.kernel),
                detail: format!("input {h}x{w} collapses under kernel/stride"),
            }),
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, keep_cache: bool) -> Result<Array4<f32>> {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = self.output_shape(h, w)?;
        let mut out = Array4::<f32>::zeros((n, c, oh, ow));
        let mut argmax = Array4::<usize>::zeros((n, c, oh, ow));
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let y0 = oy * self.stride;
                        let x0 = ox * self.stride;
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for ky in 0..self.kernel {
                            for kx in 0..self.kernel {
                                let v = x[[ni, ci, y0 + ky, x0 + kx]];
                                if v > best {
                                    best = v;
                                    best_idx = (y0 + ky) * w + (x0 + kx);
                                }
                            }
                        }
                        out[[ni, ci, oy, ox]] = best;
                        argmax[[ni, ci, oy, ox]] = best_idx;
                    }
                }
            }
        }
        self.cache = if keep_cache { Some((argmax, (n, c, h, w))) } else { None };
        Ok(out)
    }

    pub fn backward(&self, dout: &Array4<f32>) -> Array4<f32> {
        let (argmax, dim) = self.cache.as_ref().expect("pool backward without cached forward");
        let (_, _, _, w) = *dim;
        let mut dx = Array4::<f32>::zeros(*dim);
        let (n, c, oh, ow) = dout.dim();
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let idx = argmax[[ni, ci, oy, ox]];
                        dx[[ni, ci, idx / w, idx % w]] += dout[[ni, ci, oy, ox]];
                    }
                }
            }
        }
        dx
    }
}
