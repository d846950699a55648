//! The three training strategies with the reference optimizer, loss, and
//! size-dependent hyperparameter schedule.

use std::collections::BTreeMap;

use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::datapipe::{flip_lateral, LabeledPatchSet};
use crate::error::{Error, Result};
use crate::model::{init_model, Network, NetworkConfig};
use crate::nn::{softmax_cross_entropy, Adam, AdamConfig};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Validation accuracy is measured every this many epochs (and always
    /// on the final epoch); intermediate history entries repeat the last
    /// measured value. 1 = measure every epoch.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn default_eval_every() -> usize {
    1
}

impl HyperParams {
    pub fn new(epochs: usize, learning_rate: f64) -> Self {
        Self {
            epochs,
            learning_rate,
            batch_size: 128,
            adam: AdamConfig::default(),
            eval_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "epochs and batch_size must be >= 1, learning rate positive".into(),
            ));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// The published (epochs, learning rate) schedule per training-set size in
/// ultrasound images. Sizes outside the table need an explicit override.
pub fn hyperparams_for(n_train_images: usize) -> Result<HyperParams> {
    let (epochs, lr) = match n_train_images {
        10 => (2500, 5e-6),
        25 => (2000, 5e-6),
        50 => (2000, 1e-5),
        100 => (1500, 1e-5),
        200 => (1000, 1e-5),
        500 => (400, 1e-5),
        other => return Err(Error::UnknownSize(other)),
    };
    Ok(HyperParams::new(epochs, lr))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Regular,
    Zone,
    DepthAware,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Regular => f.write_str("regular"),
            Strategy::Zone => f.write_str("zone"),
            Strategy::DepthAware => f.write_str("depth_aware"),
        }
    }
}

/// One strategy's training inputs: named (train, val) dataset pairs.
/// Zone training carries one entry per zone; the other strategies carry a
/// single entry named "all".
#[derive(Debug, Clone)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub net_config: NetworkConfig,
    pub datasets: Vec<(String, LabeledPatchSet, LabeledPatchSet)>,
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        self.net_config.validate()?;
        if self.datasets.is_empty() {
            return Err(Error::EmptyDataset("strategy has no datasets".into()));
        }
        if self.strategy == Strategy::DepthAware && self.net_config.input_channels != 2 {
            return Err(Error::InvalidConfig(
                "depth-aware training requires input_channels = 2".into(),
            ));
        }
        for (name, train, val) in &self.datasets {
            if train.is_empty() || val.is_empty() {
                return Err(Error::EmptyDataset(format!("dataset {name} has an empty split")));
            }
            if self.strategy == Strategy::Zone {
                // zone purity: every patch's zone tag matches the dataset name
                for z in &train.zone_names {
                    if z.to_string() != *name {
                        return Err(Error::ZonePurityViolation(format!(
                            "dataset {name} contains a patch tagged {z}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_accuracy: f64,
}

pub type History = Vec<EpochStats>;

/// Checkpoint selection: fixed-epoch (the reference protocol) or best
/// validation accuracy with first-occurrence tie breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointMode {
    Last,
    BestVal,
}

pub fn select_checkpoint(history: &History, mode: CheckpointMode) -> usize {
    match mode {
        CheckpointMode::Last => history.len().saturating_sub(1),
        CheckpointMode::BestVal => {
            let mut best = 0usize;
            for (i, e) in history.iter().enumerate() {
                if e.val_accuracy > history[best].val_accuracy {
                    best = i;
                }
            }
            best
        }
    }
}

/// Mean softmax cross-entropy with uniform class weights.
pub fn loss(logits: &Array2<f32>, labels: &[usize]) -> Result<f64> {
    softmax_cross_entropy(logits, labels).map(|(l, _)| l)
}

/// Trained models plus their histories, one per dataset name.
#[derive(Debug, Clone)]
pub struct TrainedBundle {
    pub models: BTreeMap<String, Network>,
    pub histories: BTreeMap<String, History>,
    pub strategy: Strategy,
    pub hyperparams: HyperParams,
    pub seed: u64,
}

/// Trains one model on one dataset. Every epoch visits each training patch
/// exactly once through a seeded permutation; the final short batch is
/// kept. Horizontal flips draw a fresh coin per patch per epoch; validation
/// patches are never augmented. Returns the final-epoch parameters: epoch
/// budgets are chosen for asymptotic accuracy, not peak-picking.
pub fn train_single(
    train: &LabeledPatchSet,
    val: &LabeledPatchSet,
    net_config: &NetworkConfig,
    hp: &HyperParams,
    seed: u64,
) -> Result<(Network, History)> {
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptyDataset("validation set is empty".into()));
    }
    let mut model = init_model(net_config, seeds::derive(seed, "init", 0))?;
    let mut opt = Adam::new(hp.learning_rate, hp.adam);
    let mut shuffle_rng = seeds::rng(seed, "shuffle", 0);
    let mut augment_rng = seeds::rng(seed, "augment", 0);
    let mut dropout_rng = seeds::rng(seed, "dropout", 0);
    let n = train.len();
    let (_, c, h, w) = train.data.dim();
    let mut history = Vec::with_capacity(hp.epochs);

    let mut last_val = 0.0f64;
    for epoch in 0..hp.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0f64;
        let mut seen = 0usize;
        for chunk in order.chunks(hp.batch_size) {
            let mut batch = Array4::<f32>::zeros((chunk.len(), c, h, w));
            let mut labels = Vec::with_capacity(chunk.len());
            for (bi, &i) in chunk.iter().enumerate() {
                batch.index_axis_mut(Axis(0), bi).assign(&train.data.index_axis(Axis(0), i));
                use rand::Rng;
                if augment_rng.gen_bool(0.5) {
                    flip_lateral(&mut batch.index_axis_mut(Axis(0), bi));
                }
                labels.push(train.labels[i]);
            }
            let logits = model.forward(&batch, true, true, &mut dropout_rng)?;
            let (batch_loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
            model.zero_grads();
            model.backward(&dlogits);
            let mut params = model.params_mut();
            opt.step(&mut params);
            epoch_loss += batch_loss * chunk.len() as f64;
            seen += chunk.len();
        }
        if (epoch + 1) % hp.eval_every == 0 || epoch + 1 == hp.epochs {
            last_val = eval_accuracy(&mut model, val, hp.batch_size)?;
        }
        history.push(EpochStats { train_loss: epoch_loss / seen as f64, val_accuracy: last_val });
    }
    Ok((model, history))
}

/// Eval-mode accuracy in batches (bounds peak memory on large sets).
pub fn eval_accuracy(
    model: &mut Network,
    set: &LabeledPatchSet,
    batch_size: usize,
) -> Result<f64> {
    let n = set.len();
    let mut correct = 0usize;
    let mut i = 0;
    while i < n {
        let j = (i + batch_size).min(n);
        let batch = set.data.slice(ndarray::s![i..j, .., .., ..]).to_owned();
        let logits = model.forward_eval(&batch)?;
        for (bi, &label) in set.labels[i..j].iter().enumerate() {
            let row = logits.index_axis(Axis(0), bi);
            let mut best = 0usize;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        i = j;
    }
    Ok(correct as f64 / n.max(1) as f64)
}

/// Trains a full strategy: one independent model per dataset entry, each
/// seeing only its own patches. Models may train in parallel; seeds are
/// derived per dataset name so parallel and sequential execution agree.
pub fn train(config: &StrategyConfig, hp: &HyperParams, seed: u64) -> Result<TrainedBundle> {
    config.validate()?;
    let jobs: Vec<(usize, String)> = config
        .datasets
        .iter()
        .enumerate()
        .map(|(i, (name, _, _))| (i, name.clone()))
        .collect();
    let results = crate::par::map_ordered(jobs, |(i, name)| {
        let (_, train_set, val_set) = &config.datasets[i];
        let model_seed = seeds::derive(seed, "model", hash_name(&name));
        train_single(train_set, val_set, &config.net_config, hp, model_seed)
            .map(|(m, h)| (name, m, h))
    });
    let mut models = BTreeMap::new();
    let mut histories = BTreeMap::new();
    for r in results {
        let (name, model, history) = r?;
        histories.insert(name.clone(), history);
        models.insert(name, model);
    }
    Ok(TrainedBundle {
        models,
        histories,
        strategy: config.strategy,
        hyperparams: hp.clone(),
        seed,
    })
}

fn hash_name(name: &str) -> u64 {
    name.as_bytes().iter().fold(0u64, |acc, &b| acc.wrapping_mul(131).wrapping_add(b as u64))
}

/// Desk-scale experiment profile: reduced geometry, a channel-scaled
/// network, and a short schedule so strategy comparisons run in minutes on
/// a CPU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskProfile {
    pub net_config: NetworkConfig,
    /// (n_train_images, epochs, learning_rate) rows.
    pub schedule: Vec<(usize, usize, f64)>,
}

impl Default for DeskProfile {
    fn default() -> Self {
        Self {
            net_config: NetworkConfig {
                input_channels: 1,
                input_shape: (100, 26),
                n_classes: 3,
                // lighter than the full profile: with the pinned small-weight
                // init the early logits are nearly uniform, and heavy dropout
                // noise keeps minibatch training stuck on that plateau at
                // desk scale
                dropout_p: 0.1,
                channel_scale: 16,
            },
            // the learning rate stays well below 1e-3: with the pinned
            // small-weight init the first phase of training is a slow climb
            // out of a near-uniform plateau, and larger Adam steps knock
            // hidden units into permanently dead ReLU regions before any
            // class signal emerges
            schedule: vec![(10, 400, 1e-4), (25, 200, 1e-4), (100, 60, 1e-4)],
        }
    }
}

impl DeskProfile {
    pub fn hyperparams_for(&self, n_train_images: usize) -> Result<HyperParams> {
        self.schedule
            .iter()
            .find(|(n, _, _)| *n == n_train_images)
            .map(|&(_, epochs, lr)| {
                let mut hp = HyperParams::new(epochs, lr);
                // small batches buy more optimizer steps per epoch, which
                // the short desk schedules need to leave the initial
                // near-uniform plateau reliably
                hp.batch_size = 32;
                // only the asymptotic accuracy matters for the desk runs;
                // skipping most per-epoch validation passes saves real time
                hp.eval_every = 10;
                hp
            })
            .ok_or(Error::UnknownSize(n_train_images))
    }
}
