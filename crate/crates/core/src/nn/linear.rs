//! Fully connected layer.

use ndarray::{Array2, ArrayD, Ix2};

use super::Param;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param, // (out, in)
    pub b: Param, // (out,)
    pub in_features: usize,
    pub out_features: usize,
    cache: Option<Array2<f32>>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            w: Param::new(ArrayD::zeros(ndarray::IxDyn(&[out_features, in_features]))),
            b: Param::new(ArrayD::zeros(ndarray::IxDyn(&[out_features]))),
            in_features,
            out_features,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f32>, keep_cache: bool) -> Result<Array2<f32>> {
        let (_, d) = x.dim();
        if d != self.in_features {
            return Err(Error::DimensionMismatch(format!(
                "linear expects {} features, got {d}",
                self.in_features
            )));
        }
        let wmat = self.w.value.view().into_dimensionality::<Ix2>().expect("2-d weight");
        let mut y = x.dot(&wmat.t());
        for (o, mut col) in y.columns_mut().into_iter().enumerate() {
            let bias = self.b.value[[o]];
            col.mapv_inplace(|v| v + bias);
        }
        self.cache = if keep_cache { Some(x.clone()) } else { None };
        Ok(y)
    }

    /// Accumulates dW/db and returns dX. Requires a cached forward pass.
    pub fn backward(&mut self, dout: &Array2<f32>) -> Array2<f32> {
        let x = self.cache.as_ref().expect("linear backward without cached forward");
        let dw = dout.t().dot(x);
        self.w
            .grad
            .view_mut()
            .into_shape(dw.dim())
            .expect("grad reshape")
            .zip_mut_with(&dw, |g, &d| *g += d);
        let db = dout.sum_axis(ndarray::Axis(0));
        self.b
            .grad
            .view_mut()
            .into_shape(db.dim())
            .expect("bias reshape")
            .zip_mut_with(&db, |g, &d| *g += d);
        let wmat = self.w.value.view().into_dimensionality::<Ix2>().expect("2-d weight");
        dout.dot(&wmat)
    }
}
