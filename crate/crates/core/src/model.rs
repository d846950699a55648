//! The modified-AlexNet classifier: configuration, deterministic shape
//! trace, seeded initialization, and the forward/backward contract.
//!
//! The layer sequence is fixed: five 2-D convolutions with ReLU
//! (96/256/384/384/256 channels; 11x11 stride 4, then 5x5 pad 2 and three
//! 3x3 pad 1), one 3x3 stride-2 max pool, then dropout + fc(4096) + ReLU,
//! dropout + fc(4096) + ReLU, and a final fc to the class logits. For the
//! default 200x26 input this flattens to exactly 5888 features.
//! `channel_scale` divides all channel and fc widths for desk-scale runs;
//! the default scale of 1 reproduces the full architecture.

use ndarray::{Array2, Array4, ArrayD, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{relu_inplace, Conv2d, Dropout, Linear, MaxPool2d, Param};
use crate::seeds;

/// Reference channel widths of the five convolutions.
const CONV_CHANNELS: [usize; 5] = [96, 256, 384, 384, 256];
const CONV_KERNELS: [usize; 5] = [11, 5, 3, 3, 3];
const CONV_STRIDES: [usize; 5] = [4, 1, 1, 1, 1];
const CONV_PADS: [usize; 5] = [0, 2, 1, 1, 1];
const FC_WIDTH: usize = 4096;
/// Weight init: zero-mean Gaussian with this standard deviation.
const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_channels: usize,
    /// (axial, lateral) patch size.
    pub input_shape: (usize, usize),
    pub n_classes: usize,
    pub dropout_p: f64,
    /// Divides conv channel counts and fc widths; 1 = full architecture.
    pub channel_scale: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            input_shape: (200, 26),
            n_classes: 3,
            dropout_p: 0.5,
            channel_scale: 1,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || !(1..=2).contains(&self.input_channels) {
            return Err(Error::InvalidConfig("input_channels must be 1 or 2".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig("need at least two classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig("dropout_p must be in [0,1)".into()));
        }
        if self.channel_scale == 0 {
            return Err(Error::InvalidConfig("channel_scale must be >= 1".into()));
        }
        Ok(())
    }

    pub fn conv_channels(&self) -> [usize; 5] {
        CONV_CHANNELS.map(|c| (c / self.channel_scale).max(1))
    }

    pub fn fc_width(&self) -> usize {
        (FC_WIDTH / self.channel_scale).max(4)
    }
}

/// Ordered (layer name, output shape) chain. Shapes are reported as
/// (axial, lateral, channels); fully connected layers report their width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeTrace {
    pub entries: Vec<(String, Vec<usize>)>,
    pub flatten_len: usize,
    pub parameter_count: usize,
}

impl ShapeTrace {
    pub fn shape_of(&self, layer: &str) -> Option<&[usize]> {
        self.entries.iter().find(|(n, _)| n == layer).map(|(_, s)| s.as_slice())
    }
}

/// Computes every layer's output shape with floor conv/pool arithmetic.
pub fn shape_trace(config: &NetworkConfig) -> Result<ShapeTrace> {
    config.validate()?;
    let chans = config.conv_channels();
    let (mut h, mut w) = config.input_shape;
    let mut in_c = config.input_channels;
    let mut entries = Vec::new();
    let mut params = 0usize;
    for i in 0..5 {
        let conv = Conv2d::new(in_c, chans[i], CONV_KERNELS[i], CONV_STRIDES[i], CONV_PADS[i]);
        let (oh, ow) = conv.output_shape(h, w).map_err(|e| match e {
            Error::ShapeUnderflow { detail, .. } => {
                Error::ShapeUnderflow { layer: format!("conv{}", i + 1), detail }
            }
            other => other,
        })?;
        params += chans[i] * in_c * CONV_KERNELS[i] * CONV_KERNELS[i] + chans[i];
        entries.push((format!("conv{}", i + 1), vec![oh, ow, chans[i]]));
        h = oh;
        w = ow;
        in_c = chans[i];
    }
    let pool = MaxPool2d::new(3, 2);
    let (ph, pw) = pool.output_shape(h, w)?;
    entries.push(("maxpool1".into(), vec![ph, pw, in_c]));
    let flatten_len = ph * pw * in_c;
    entries.push(("flatten".into(), vec![flatten_len]));
    let fc_w = config.fc_width();
    params += flatten_len * fc_w + fc_w;
    entries.push(("fc1".into(), vec![fc_w]));
    params += fc_w * fc_w + fc_w;
    entries.push(("fc2".into(), vec![fc_w]));
    params += fc_w * config.n_classes + config.n_classes;
    entries.push(("fc3".into(), vec![config.n_classes]));
    Ok(ShapeTrace { entries, flatten_len, parameter_count: params })
}

/// The classifier with its parameters; owned by one training run.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    pub init_seed: u64,
    convs: [Conv2d; 5],
    pool: MaxPool2d,
    drop1: Dropout,
    drop2: Dropout,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
    relu_masks: Vec<ArrayD<f32>>,
    flatten_dim: Option<(usize, usize, usize)>,
}

/// Builds a network with AlexNet-style initialization: all weights
/// N(0, 0.01^2); biases of conv2, conv4, conv5 and both hidden fc layers
/// set to 1, the rest 0. Deterministic for a fixed seed.
pub fn init_model(config: &NetworkConfig, seed: u64) -> Result<Network> {
    let trace = shape_trace(config)?; // validates shapes up front
    let chans = config.conv_channels();
    let mut rng = seeds::rng(seed, "init", 0);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut fill = |p: &mut Param| {
        for v in p.value.iter_mut() {
            *v = normal.sample(&mut rng) as f32;
        }
    };

    let mut in_c = config.input_channels;
    let mut convs = Vec::with_capacity(5);
    for i in 0..5 {
        let mut conv = Conv2d::new(in_c, chans[i], CONV_KERNELS[i], CONV_STRIDES[i], CONV_PADS[i]);
        fill(&mut conv.w);
        // bias = 1 for conv2, conv4, conv5 (positional AlexNet rule)
        if i == 1 || i == 3 || i == 4 {
            conv.b.value.fill(1.0);
        }
        in_c = chans[i];
        convs.push(conv);
    }
    let fc_w = config.fc_width();
    let mut fc1 = Linear::new(trace.flatten_len, fc_w);
    let mut fc2 = Linear::new(fc_w, fc_w);
    let mut fc3 = Linear::new(fc_w, config.n_classes);
    fill(&mut fc1.w);
    fill(&mut fc2.w);
    fill(&mut fc3.w);
    fc1.b.value.fill(1.0);
    fc2.b.value.fill(1.0);

    Ok(Network {
        config: config.clone(),
        init_seed: seed,
        convs: convs.try_into().expect("five convs"),
        pool: MaxPool2d::new(3, 2),
        drop1: Dropout::new(config.dropout_p),
        drop2: Dropout::new(config.dropout_p),
        fc1,
        fc2,
        fc3,
        relu_masks: Vec::new(),
        flatten_dim: None,
    })
}

impl Network {
    /// Forward pass to raw logits. Dropout is active only in train mode;
    /// eval mode is deterministic. `keep_cache` must be true when a
    /// backward pass will follow.
    pub fn forward<R: Rng>(
        &mut self,
        batch: &Array4<f32>,
        train: bool,
        keep_cache: bool,
        rng: &mut R,
    ) -> Result<Array2<f32>> {
        let (n, c, h, w) = batch.dim();
        if c != self.config.input_channels || (h, w) != self.config.input_shape {
            return Err(Error::DimensionMismatch(format!(
                "batch is ({c},{h},{w}), model expects ({},{},{})",
                self.config.input_channels, self.config.input_shape.0, self.config.input_shape.1
            )));
        }
        self.relu_masks.clear();
        let mut x = batch.clone();
        for conv in &mut self.convs {
            x = conv.forward(&x, keep_cache)?;
            let mut dyn_x = x.into_dyn();
            let mask = relu_inplace(&mut dyn_x);
            if keep_cache {
                self.relu_masks.push(mask);
            }
            x = dyn_x.into_dimensionality().expect("4-d");
        }
        let pooled = self.pool.forward(&x, keep_cache)?;
        let (_, pc, ph, pw) = pooled.dim();
        self.flatten_dim = Some((pc, ph, pw));
        let flat_len = pc * ph * pw;
        let mut flat: ArrayD<f32> =
            pooled.into_shape((n, flat_len)).expect("flatten").into_dyn();
        self.drop1.forward(&mut flat, train, rng);
        let mut h1 = self
            .fc1
            .forward(&flat.into_dimensionality().expect("2-d"), keep_cache)?
            .into_dyn();
        let m1 = relu_inplace(&mut h1);
        self.drop2.forward(&mut h1, train, rng);
        let mut h2 = self
            .fc2
            .forward(&h1.into_dimensionality().expect("2-d"), keep_cache)?
            .into_dyn();
        let m2 = relu_inplace(&mut h2);
        if keep_cache {
            self.relu_masks.push(m1);
            self.relu_masks.push(m2);
        }
        self.fc3.forward(&h2.into_dimensionality().expect("2-d"), keep_cache)
    }

    /// Eval-mode forward without gradient bookkeeping.
    pub fn forward_eval(&mut self, batch: &Array4<f32>) -> Result<Array2<f32>> {
        // rng is unused in eval mode
        let mut rng = seeds::rng(0, "eval", 0);
        self.forward(batch, false, false, &mut rng)
    }

    /// Backpropagates d(loss)/d(logits), accumulating parameter gradients.
    pub fn backward(&mut self, dlogits: &Array2<f32>) {
        let m2 = self.relu_masks.pop().expect("fc2 relu mask");
        let m1 = self.relu_masks.pop().expect("fc1 relu mask");
        let mut d = self.fc3.backward(dlogits);
        d *= &m2.into_dimensionality::<ndarray::Ix2>().expect("2-d mask");
        let mut d_dyn = d.into_dyn();
        self.drop2.backward(&mut d_dyn);
        let mut d = self
            .fc2
            .backward(&d_dyn.into_dimensionality().expect("2-d"));
        d *= &m1.into_dimensionality::<ndarray::Ix2>().expect("2-d mask");
        let d = self.fc1.backward(&d);
        let mut d_dyn = d.into_dyn();
        self.drop1.backward(&mut d_dyn);
        let d2: Array2<f32> = d_dyn.into_dimensionality().expect("2-d");
        let n = d2.dim().0;
        let (pc, ph, pw) = self.flatten_dim.expect("forward before backward");
        let d4 = d2.into_shape((n, pc, ph, pw)).expect("unflatten");
        let mut d = self.pool.backward(&d4);
        for i in (0..5).rev() {
            let mask = self.relu_masks.pop().expect("conv relu mask");
            let mask4: Array4<f32> = mask.into_dimensionality().expect("4-d mask");
            d *= &mask4;
            d = self.convs[i].backward(&d);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::with_capacity(16);
        for conv in &mut self.convs {
            out.push(&mut conv.w);
            out.push(&mut conv.b);
        }
        out.push(&mut self.fc1.w);
        out.push(&mut self.fc1.b);
        out.push(&mut self.fc2.w);
        out.push(&mut self.fc2.b);
        out.push(&mut self.fc3.w);
        out.push(&mut self.fc3.b);
        out
    }

    /// (name, tensor) pairs for checkpointing, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &ArrayD<f32>)> {
        let mut out = Vec::with_capacity(16);
        for (i, conv) in self.convs.iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), &conv.w.value));
            out.push((format!("conv{}.bias", i + 1), &conv.b.value));
        }
        out.push(("fc1.weight".into(), &self.fc1.w.value));
        out.push(("fc1.bias".into(), &self.fc1.b.value));
        out.push(("fc2.weight".into(), &self.fc2.w.value));
        out.push(("fc2.bias".into(), &self.fc2.b.value));
        out.push(("fc3.weight".into(), &self.fc3.w.value));
        out.push(("fc3.bias".into(), &self.fc3.b.value));
        out
    }

    /// Overwrites parameter values from (name, tensor) pairs.
    pub fn load_named_params(&mut self, tensors: &[(String, ArrayD<f32>)]) -> Result<()> {
        let names: Vec<String> = self.named_params().iter().map(|(n, _)| n.clone()).collect();
        for name in &names {
            let t = tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Parse(format!("checkpoint is missing tensor {name}")))?;
            let slot = match name.as_str() {
                "fc1.weight" => &mut self.fc1.w,
                "fc1.bias" => &mut self.fc1.b,
                "fc2.weight" => &mut self.fc2.w,
                "fc2.bias" => &mut self.fc2.b,
                "fc3.weight" => &mut self.fc3.w,
                "fc3.bias" => &mut self.fc3.b,
                other => {
                    let idx: usize = other[4..5].parse().map_err(|_| {
                        Error::Parse(format!("unknown tensor name {other}"))
                    })?;
                    if other.ends_with("weight") {
                        &mut self.convs[idx - 1].w
                    } else {
                        &mut self.convs[idx - 1].b
                    }
                }
            };
            if slot.value.shape() != t.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "tensor {name}: checkpoint {:?} vs model {:?}",
                    t.shape(),
                    slot.value.shape()
                )));
            }
            slot.value = t;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        for conv in &self.convs {
            n += conv.w.len() + conv.b.len();
        }
        n + self.fc1.w.len()
            + self.fc1.b.len()
            + self.fc2.w.len()
            + self.fc2.b.len()
            + self.fc3.w.len()
            + self.fc3.b.len()
    }

    /// Mean over patches of per-patch predicted class (argmax, ties to the
    /// lowest index) equalling the label.
    pub fn accuracy(&mut self, data: &Array4<f32>, labels: &[usize]) -> Result<f64> {
        let logits = self.forward_eval(data)?;
        let mut correct = 0usize;
        for (i, &label) in labels.iter().enumerate() {
            let row = logits.index_axis(Axis(0), i);
            let mut best = 0usize;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / labels.len().max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_trace_matches_reference_table() {
        let trace = shape_trace(&NetworkConfig::default()).unwrap();
        assert_eq!(trace.shape_of("conv1").unwrap(), &[48, 4, 96]);
        assert_eq!(trace.shape_of("conv2").unwrap(), &[48, 4, 256]);
        assert_eq!(trace.shape_of("conv3").unwrap(), &[48, 4, 384]);
        assert_eq!(trace.shape_of("conv4").unwrap(), &[48, 4, 384]);
        assert_eq!(trace.shape_of("conv5").unwrap(), &[48, 4, 256]);
        assert_eq!(trace.shape_of("maxpool1").unwrap(), &[23, 1, 256]);
        assert_eq!(trace.flatten_len, 5888);
        assert_eq!(trace.shape_of("fc1").unwrap(), &[4096]);
        assert_eq!(trace.shape_of("fc3").unwrap(), &[3]);
    }

    #[test]
    fn two_channel_trace_is_spatially_identical() {
        let one = shape_trace(&NetworkConfig::default()).unwrap();
        let two =
            shape_trace(&NetworkConfig { input_channels: 2, ..Default::default() }).unwrap();
        assert_eq!(one.entries, two.entries);
        // conv1 weights gain one input channel: 11*11*96 extra weights
        assert_eq!(two.parameter_count - one.parameter_count, 11 * 11 * 96);
    }

    #[test]
    fn parameter_count_formula() {
        let trace = shape_trace(&NetworkConfig::default()).unwrap();
        let conv1 = 11 * 11 * 1 * 96 + 96;
        let conv2 = 5 * 5 * 96 * 256 + 256;
        let conv3 = 3 * 3 * 256 * 384 + 384;
        let conv4 = 3 * 3 * 384 * 384 + 384;
        let conv5 = 3 * 3 * 384 * 256 + 256;
        let fc1 = 5888 * 4096 + 4096;
        let fc2 = 4096 * 4096 + 4096;
        let fc3 = 4096 * 3 + 3;
        assert_eq!(trace.parameter_count, conv1 + conv2 + conv3 + conv4 + conv5 + fc1 + fc2 + fc3);
    }

    #[test]
    fn short_input_trace_or_underflow() {
        // (50-11)/4+1 = 10 axially, then pooling still fits
        let cfg = NetworkConfig { input_shape: (50, 26), ..Default::default() };
        let trace = shape_trace(&cfg).unwrap();
        assert_eq!(trace.shape_of("conv1").unwrap()[0], 10);
        // too small to survive conv1
        let cfg = NetworkConfig { input_shape: (8, 8), ..Default::default() };
        assert!(matches!(shape_trace(&cfg), Err(Error::ShapeUnderflow { .. })));
    }

    fn desk_config() -> NetworkConfig {
        NetworkConfig { input_shape: (100, 26), channel_scale: 16, ..Default::default() }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&desk_config(), 9).unwrap();
        let b = init_model(&desk_config(), 9).unwrap();
        for ((_, pa), (_, pb)) in a.named_params().iter().zip(b.named_params()) {
            assert_eq!(pa, &pb);
        }
        let c = init_model(&desk_config(), 10).unwrap();
        assert_ne!(a.named_params()[0].1, c.named_params()[0].1);
    }

    #[test]
    fn init_weight_statistics() {
        let model = init_model(&NetworkConfig::default(), 3).unwrap();
        // conv2 weights alone exceed 1e5 draws
        let w = &model.convs[1].w.value;
        assert!(w.len() >= 100_000);
        let n = w.len() as f64;
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / n;
        let std = (w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((0.0095..=0.0105).contains(&std), "sampled std {std}");
    }

    #[test]
    fn bias_initialization_rule() {
        let model = init_model(&desk_config(), 3).unwrap();
        assert!(model.convs[0].b.value.iter().all(|&v| v == 0.0));
        assert!(model.convs[1].b.value.iter().all(|&v| v == 1.0));
        assert!(model.convs[2].b.value.iter().all(|&v| v == 0.0));
        assert!(model.convs[3].b.value.iter().all(|&v| v == 1.0));
        assert!(model.convs[4].b.value.iter().all(|&v| v == 1.0));
        assert!(model.fc1.b.value.iter().all(|&v| v == 1.0));
        assert!(model.fc2.b.value.iter().all(|&v| v == 1.0));
        assert!(model.fc3.b.value.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_model_gives_uniform_softmax() {
        let mut model = init_model(&desk_config(), 3).unwrap();
        for p in model.params_mut() {
            p.value.fill(0.0);
        }
        let batch = Array4::from_elem((2, 1, 100, 26), 0.3f32);
        let logits = model.forward_eval(&batch).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
        let sm = crate::nn::softmax(&logits);
        assert!(sm.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-6));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut model = init_model(&desk_config(), 3).unwrap();
        let mut rng = seeds::rng(1, "data", 0);
        let batch = Array4::from_shape_fn((3, 1, 100, 26), |_| rng.gen_range(-1.0f32..1.0));
        let a = model.forward_eval(&batch).unwrap();
        let b = model.forward_eval(&batch).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a.dim(), (3, 3));
    }

    /// End-to-end loss decreases under a few Adam steps on a tiny model.
    #[test]
    fn loss_decreases_on_tiny_batch() {
        let cfg = NetworkConfig {
            input_shape: (50, 26),
            channel_scale: 32,
            dropout_p: 0.0,
            ..Default::default()
        };
        let mut model = init_model(&cfg, 5).unwrap();
        let mut rng = seeds::rng(2, "data", 0);
        let batch = Array4::from_shape_fn((6, 1, 50, 26), |_| rng.gen_range(-1.0f32..1.0));
        let labels = vec![0, 1, 2, 0, 1, 2];
        let mut opt = crate::nn::Adam::new(1e-3, crate::nn::AdamConfig::default());
        let mut first = None;
        let mut last = 0.0;
        // the N(0, 0.01) init starts in a near-uniform plateau; Adam needs
        // a couple hundred steps to escape it
        for _ in 0..220 {
            let logits = model.forward(&batch, true, true, &mut rng).unwrap();
            let (loss, dlogits) = crate::nn::softmax_cross_entropy(&logits, &labels).unwrap();
            model.zero_grads();
            model.backward(&dlogits);
            let mut params = model.params_mut();
            opt.step(&mut params);
            first.get_or_insert(loss);
            last = loss;
        }
        assert!(last < first.unwrap() * 0.8, "loss {} -> {last}", first.unwrap());
    }
}
