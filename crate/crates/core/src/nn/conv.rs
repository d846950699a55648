//! 2-D convolution via im2col + gemm with floor output arithmetic.

use ndarray::{Array2, Array4, ArrayD, Ix4};

use super::Param;
use crate::error::{Error, Result};

/// Floor conv/pool output size; errors when a dimension collapses to zero.
pub(crate) fn out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Param,
    pub b: Param,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    col: Array2<f32>,
    input_dim: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let w = Param::new(ArrayD::zeros(ndarray::IxDyn(&[
            out_channels,
            in_channels,
            kernel,
            kernel,
        ])));
        let b = Param::new(ArrayD::zeros(ndarray::IxDyn(&[out_channels])));
        Self { w, b, in_channels, out_channels, kernel, stride, pad, cache: None }
    }

    pub fn output_shape(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = out_dim(h, self.kernel, self.stride, self.pad);
        let ow = out_dim(w, self.kernel, self.stride, self.pad);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(Error::ShapeUnderflow {
                layer: format!("conv{}x{}", self.kernel, self.kernel),
                detail: format!("input {h}x{w} collapses under kernel/stride"),
            }),
        }
    }

    fn im2col(&self, x: &Array4<f32>, oh: usize, ow: usize) -> Array2<f32> {
        let (n, c, h, w) = x.dim();
        let k = self.kernel;
        let s = self.stride;
        let p = self.pad as isize;
        let cols = n * oh * ow;
        let mut col = Array2::<f32>::zeros((c * k * k, cols));
        let x_std = x.as_standard_layout();
        let xs = x_std.as_slice().expect("standard layout input");
        let cs = col.as_slice_mut().expect("fresh array is contiguous");
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row_base = (ci * k * k + ky * k + kx) * cols;
                    let ix0 = kx as isize - p;
                    let iy0 = ky as isize - p;
                    // clip ox (and, for stride 1, oy) to the in-bounds spans
                    let ox_start = if s == 1 { (-ix0).max(0) as usize } else { 0 };
                    let ox_end =
                        if s == 1 { ow.min((w as isize - ix0).max(0) as usize) } else { ow };
                    let oy_start = if s == 1 { (-iy0).max(0) as usize } else { 0 };
                    let oy_end =
                        if s == 1 { oh.min((h as isize - iy0).max(0) as usize) } else { oh };
                    for ni in 0..n {
                        let x_base = (ni * c + ci) * h * w;
                        let out_base = row_base + ni * oh * ow;
                        if s == 1 {
                            if ox_start >= ox_end || oy_start >= oy_end {
                                continue;
                            }
                            if ix0 == 0 && ow == w {
                                // full-width window: all valid rows form one
                                // contiguous run in both source and destination
                                let len = (oy_end - oy_start) * ow;
                                let src =
                                    (x_base as isize + (oy_start as isize + iy0) * w as isize)
                                        as usize;
                                let dst = out_base + oy_start * ow;
                                cs[dst..dst + len].copy_from_slice(&xs[src..src + len]);
                            } else {
                                let len = ox_end - ox_start;
                                for oy in oy_start..oy_end {
                                    let x_row =
                                        (x_base as isize + (oy as isize + iy0) * w as isize + ix0)
                                            as usize;
                                    let src = x_row + ox_start;
                                    let dst = out_base + oy * ow + ox_start;
                                    cs[dst..dst + len].copy_from_slice(&xs[src..src + len]);
                                }
                            }
                        } else {
                            for oy in 0..oh {
                                let iy = (oy * s) as isize + iy0;
                                if iy < 0 || iy as usize >= h {
                                    continue;
                                }
                                let x_row = x_base + iy as usize * w;
                                let o_row = out_base + oy * ow;
                                for ox in 0..ow {
                                    let ix = (ox * s) as isize + ix0;
                                    if ix < 0 || ix as usize >= w {
                                        continue;
                                    }
                                    cs[o_row + ox] = xs[x_row + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(
        &self,
        dcol: &Array2<f32>,
        dim: (usize, usize, usize, usize),
        oh: usize,
        ow: usize,
    ) -> Array4<f32> {
        let (n, c, h, w) = dim;
        let k = self.kernel;
        let s = self.stride;
        let p = self.pad as isize;
        let cols = n * oh * ow;
        let mut dx = Array4::<f32>::zeros(dim);
        let ds = dcol.as_slice().expect("gemm output is contiguous");
        let xs = dx.as_slice_mut().expect("fresh array is contiguous");
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row_base = (ci * k * k + ky * k + kx) * cols;
                    let ix0 = kx as isize - p;
                    let iy0 = ky as isize - p;
                    let ox_start = if s == 1 { (-ix0).max(0) as usize } else { 0 };
                    let ox_end =
                        if s == 1 { ow.min((w as isize - ix0).max(0) as usize) } else { ow };
                    let oy_start = if s == 1 { (-iy0).max(0) as usize } else { 0 };
                    let oy_end =
                        if s == 1 { oh.min((h as isize - iy0).max(0) as usize) } else { oh };
                    for ni in 0..n {
                        let x_base = (ni * c + ci) * h * w;
                        let out_base = row_base + ni * oh * ow;
                        if s == 1 {
                            if ox_start >= ox_end || oy_start >= oy_end {
                                continue;
                            }
                            if ix0 == 0 && ow == w {
                                let len = (oy_end - oy_start) * ow;
                                let dst =
                                    (x_base as isize + (oy_start as isize + iy0) * w as isize)
                                        as usize;
                                let src = out_base + oy_start * ow;
                                for i in 0..len {
                                    xs[dst + i] += ds[src + i];
                                }
                            } else {
                                let len = ox_end - ox_start;
                                for oy in oy_start..oy_end {
                                    let x_row =
                                        (x_base as isize + (oy as isize + iy0) * w as isize + ix0)
                                            as usize;
                                    let dst = x_row + ox_start;
                                    let src = out_base + oy * ow + ox_start;
                                    for i in 0..len {
                                        xs[dst + i] += ds[src + i];
                                    }
                                }
                            }
                        } else {
                            for oy in 0..oh {
                                let iy = (oy * s) as isize + iy0;
                                if iy < 0 || iy as usize >= h {
                                    continue;
                                }
                                let x_row = x_base + iy as usize * w;
                                let o_row = out_base + oy * ow;
                                for ox in 0..ow {
                                    let ix = (ox * s) as isize + ix0;
                                    if ix < 0 || ix as usize >= w {
                                        continue;
                                    }
                                    xs[x_row + ix as usize] += ds[o_row + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&mut self, x: &Array4<f32>, keep_cache: bool) -> Result<Array4<f32>> {
        let (n, c, h, w) = x.dim();
        if c != self.in_channels {
            return Err(Error::DimensionMismatch(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let (oh, ow) = self.output_shape(h, w)?;
        let col = self.im2col(x, oh, ow);
        let wmat = self
            .w
            .value
            .view()
            .into_shape((self.out_channels, self.in_channels * self.kernel * self.kernel))
            .expect("weight reshape");
        let mut out_mat = wmat.dot(&col); // (out_c, n*oh*ow)
        for (o, mut row) in out_mat.rows_mut().into_iter().enumerate() {
            let bias = self.b.value[[o]];
            row.mapv_inplace(|v| v + bias);
        }
        let mut out = Array4::<f32>::zeros((n, self.out_channels, oh, ow));
        {
            let plane = oh * ow;
            let src = out_mat.as_slice().expect("gemm output is contiguous");
            let dst = out.as_slice_mut().expect("fresh array is contiguous");
            for ni in 0..n {
                for o in 0..self.out_channels {
                    let s0 = o * n * plane + ni * plane;
                    let d0 = (ni * self.out_channels + o) * plane;
                    dst[d0..d0 + plane].copy_from_slice(&src[s0..s0 + plane]);
                }
            }
        }
        self.cache = if keep_cache {
            Some(Cache { col, input_dim: (n, c, h, w), out_hw: (oh, ow) })
        } else {
            None
        };
        Ok(out)
    }

    /// Accumulates dW/db and returns dX. Requires a cached forward pass.
    pub fn backward(&mut self, dout: &Array4<f32>) -> Array4<f32> {
        let cache = self.cache.as_ref().expect("conv backward without cached forward");
        let (n, _, oh, ow) = dout.dim();
        let mut dout_mat = Array2::<f32>::zeros((self.out_channels, n * oh * ow));
        {
            let plane = oh * ow;
            let dout_std = dout.as_standard_layout();
            let src = dout_std.as_slice().expect("standard layout gradient");
            let dst = dout_mat.as_slice_mut().expect("fresh array is contiguous");
            for ni in 0..n {
                for o in 0..self.out_channels {
                    let s0 = (ni * self.out_channels + o) * plane;
                    let d0 = o * n * plane + ni * plane;
                    dst[d0..d0 + plane].copy_from_slice(&src[s0..s0 + plane]);
                }
            }
        }
        let dw = dout_mat.dot(&cache.col.t());
        self.w
            .grad
            .view_mut()
            .into_shape(dw.dim())
            .expect("grad reshape")
            .zip_mut_with(&dw, |g, &d| *g += d);
        let db = dout_mat.sum_axis(ndarray::Axis(1));
        self.b.grad.view_mut().into_shape(db.dim()).expect("bias reshape").zip_mut_with(
            &db,
            |g, &d| *g += d,
        );
        let wmat = self
            .w
            .value
            .view()
            .into_shape((self.out_channels, self.in_channels * self.kernel * self.kernel))
            .expect("weight reshape");
        let dcol = wmat.t().dot(&dout_mat);
        self.col2im(&dcol, cache.input_dim, cache.out_hw.0, cache.out_hw.1)
    }

    pub fn weight4(&self) -> ndarray::ArrayView4<'_, f32> {
        self.w.value.view().into_dimensionality::<Ix4>().expect("conv weight is 4-d")
    }
}
