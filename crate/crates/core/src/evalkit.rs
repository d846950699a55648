//! Confusion matrices, repeated-run statistics, and the sweep experiments
//! (testing-zone offset, zone center, zone width).

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Axis;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datapipe::{
    build_dataset, frames_for_ids, split_frames, ExtractionMode, LabeledPatchSet,
    NormalizationSpec,
};
use crate::error::{Error, Result};
use crate::geometry::{
    default_zones, zone_for_center, FrameGeometry, PatchGridSpec, UltrasoundFrame, ZoneName,
    ZoneSpec,
};
use crate::model::{Network, NetworkConfig};
use crate::trainer::{train_single, HyperParams, Strategy};
use crate::{par, seeds};

/// Class-by-class count grid; rows are true labels, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self { counts: vec![vec![0; n_classes]; n_classes] }
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) {
        self.counts[true_class][predicted] += 1;
    }

    pub fn n_samples(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Normalized trace.
    pub fn accuracy(&self) -> f64 {
        let n = self.n_samples();
        if n == 0 {
            return 0.0;
        }
        let correct: u64 = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        correct as f64 / n as f64
    }
}

/// Eval-mode predictions over a patch set. Argmax ties break to the lowest
/// class index.
pub fn evaluate(model: &mut Network, set: &LabeledPatchSet) -> Result<ConfusionMatrix> {
    if model.config.input_channels != set.channels() {
        return Err(Error::ChannelMismatch {
            expected: model.config.input_channels,
            actual: set.channels(),
        });
    }
    let n_classes = model.config.n_classes;
    let mut cm = ConfusionMatrix::new(n_classes);
    let batch_size = 256;
    let n = set.len();
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
            cm.record(label, best);
        }
        i = j;
    }
    Ok(cm)
}

/// Routes a patch depth to the zone that owns it. Each zone covers its
/// line centers padded by half an axial stride on both ends; the default
/// zones therefore tile the grid without gaps.
pub fn zone_dispatch(
    depth_cm: f64,
    zones: &[ZoneSpec],
    grid: &PatchGridSpec,
    geometry: &FrameGeometry,
) -> Result<ZoneName> {
    let half_stride_cm = grid.axial_stride_px as f64 / geometry.pixels_per_cm() / 2.0;
    for z in zones {
        let first = (*z.axial_starts_px.first().unwrap() as f64
            + grid.patch_axial_px as f64 / 2.0)
            / geometry.pixels_per_cm();
        let last = (*z.axial_starts_px.last().unwrap() as f64
            + grid.patch_axial_px as f64 / 2.0)
            / geometry.pixels_per_cm();
        if depth_cm >= first - half_stride_cm && depth_cm < last + half_stride_cm {
            return Ok(z.name);
        }
    }
    Err(Error::UncoveredDepth(depth_cm))
}

/// Accuracy statistics of one table cell over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<f64>,
}

impl CellStats {
    pub fn from_runs(runs: Vec<f64>) -> Self {
        let n = runs.len() as f64;
        let mean = runs.iter().sum::<f64>() / n;
        // population standard deviation over the repetitions
        let var = runs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt(), runs }
    }
}

/// Strategy-by-test-zone accuracy grid over seeded repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// (training row, test zone) -> stats. Zone training contributes one
    /// row per zone; regular and depth-aware one row each.
    pub cells: BTreeMap<String, CellStats>,
    pub n_repetitions: usize,
    pub n_train_images: usize,
    pub base_seed: u64,
    pub config_hash: String,
}

impl ExperimentResult {
    pub fn cell(&self, row: &str, test_zone: &str) -> Option<&CellStats> {
        self.cells.get(&format!("{row}/{test_zone}"))
    }
}

/// Mean-accuracy curve over a swept parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub yerr: Vec<f64>,
    pub x_label: String,
    pub y_label: String,
    /// Swept values skipped because their zone overflowed the frame.
    pub omitted: Vec<f64>,
}

impl SweepCurve {
    pub fn validate(&self) -> Result<()> {
        if self.x.is_empty() {
            return Err(Error::EmptyResults("sweep curve has no points".into()));
        }
        if self.x.len() != self.y.len() || self.x.len() != self.yerr.len() {
            return Err(Error::DimensionMismatch("sweep curve arrays disagree".into()));
        }
        if self.x.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("sweep x values must be strictly ordered".into()));
        }
        Ok(())
    }
}

/// Everything one repeated experiment needs.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub frames: Vec<UltrasoundFrame>,
    pub geometry: FrameGeometry,
    pub grid: PatchGridSpec,
    pub net_config: NetworkConfig,
    pub norm: NormalizationSpec,
    pub hp: HyperParams,
    pub n_train_images: usize,
    pub n_repetitions: usize,
    pub base_seed: u64,
}

impl ExperimentPlan {
    fn ids_per_class(&self) -> BTreeMap<usize, Vec<u64>> {
        let mut map: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
        for f in &self.frames {
            if let Some(label) = f.label {
                map.entry(label).or_default().push(f.frame_id);
            }
        }
        map
    }

    pub fn config_hash(&self) -> String {
        let blob = serde_json::json!({
            "geometry": self.geometry,
            "grid": self.grid,
            "net": self.net_config,
            "norm": self.norm,
            "hp": self.hp,
            "n_train_images": self.n_train_images,
            "n_repetitions": self.n_repetitions,
            "base_seed": self.base_seed,
        });
        let digest = Sha256::digest(blob.to_string().as_bytes());
        format!("{digest:x}")[..12].to_string()
    }
}

fn hash_name(name: &str) -> u64 {
    name.as_bytes().iter().fold(0u64, |acc, &b| acc.wrapping_mul(131).wrapping_add(b as u64))
}

/// Builds the (train, val, test) patch sets for one extraction mode from a
/// seeded frame split.
fn split_datasets(
    plan: &ExperimentPlan,
    rep_seed: u64,
    mode: &ExtractionMode,
    depth_aware: bool,
) -> Result<(LabeledPatchSet, LabeledPatchSet, LabeledPatchSet)> {
    let split = split_frames(&plan.ids_per_class(), plan.n_train_images, rep_seed)?;
    let cut = |ids| -> Result<LabeledPatchSet> {
        let frames: Vec<UltrasoundFrame> =
            frames_for_ids(&plan.frames, ids).into_iter().cloned().collect();
        build_dataset(&frames, &plan.grid, mode, &plan.norm, depth_aware)
    };
    Ok((cut(&split.train_ids)?, cut(&split.val_ids)?, cut(&split.test_ids)?))
}

/// One repetition of the strategy-by-zone table; returns
/// (row name, test zone name, accuracy) triples.
fn table_repetition(
    plan: &ExperimentPlan,
    strategies: &[Strategy],
    rep: usize,
) -> Result<Vec<(String, String, f64)>> {
    let rep_seed = seeds::derive(plan.base_seed.wrapping_add(rep as u64), "rep", rep as u64);
    let zones = default_zones(&plan.grid, &plan.geometry)?;
    let mut out = Vec::new();

    // per-zone test sets, single- and two-channel
    let mut zone_tests = Vec::new();
    let mut zone_tests_depth = Vec::new();
    for z in &zones {
        let mode = ExtractionMode::Zone(z.clone());
        let (_, _, test) = split_datasets(plan, rep_seed, &mode, false)?;
        zone_tests.push((z.name.to_string(), test));
        let (_, _, test2) = split_datasets(plan, rep_seed, &mode, true)?;
        zone_tests_depth.push((z.name.to_string(), test2));
    }

    for &strategy in strategies {
        match strategy {
            Strategy::Zone => {
                for z in &zones {
                    let mode = ExtractionMode::Zone(z.clone());
                    let (train, val, _) = split_datasets(plan, rep_seed, &mode, false)?;
                    let model_seed =
                        seeds::derive(rep_seed, "model", hash_name(&z.name.to_string()));
                    let (mut model, _) =
                        train_single(&train, &val, &plan.net_config, &plan.hp, model_seed)?;
                    for (zone_name, test) in &zone_tests {
                        let cm = evaluate(&mut model, test)?;
                        out.push((z.name.to_string(), zone_name.clone(), cm.accuracy()));
                    }
                }
            }
            Strategy::Regular => {
                let (train, val, _) =
                    split_datasets(plan, rep_seed, &ExtractionMode::Regular, false)?;
                let model_seed = seeds::derive(rep_seed, "model", hash_name("all"));
                let (mut model, _) =
                    train_single(&train, &val, &plan.net_config, &plan.hp, model_seed)?;
                for (zone_name, test) in &zone_tests {
                    let cm = evaluate(&mut model, test)?;
                    out.push(("regular".into(), zone_name.clone(), cm.accuracy()));
                }
            }
            Strategy::DepthAware => {
                let (train, val, _) =
                    split_datasets(plan, rep_seed, &ExtractionMode::Regular, true)?;
                let cfg = NetworkConfig { input_channels: 2, ..plan.net_config.clone() };
                let model_seed = seeds::derive(rep_seed, "model", hash_name("all"));
                let (mut model, _) = train_single(&train, &val, &cfg, &plan.hp, model_seed)?;
                for (zone_name, test) in &zone_tests_depth {
                    let cm = evaluate(&mut model, test)?;
                    out.push(("depth_aware".into(), zone_name.clone(), cm.accuracy()));
                }
            }
        }
    }
    Ok(out)
}

/// Repeats the strategy-by-zone experiment; repetition k derives its seeds
/// from `base_seed + k` for split, init, and shuffling. Repetitions run in
/// parallel when the `parallel` feature is on, with identical results.
pub fn repeat_experiment(
    plan: &ExperimentPlan,
    strategies: &[Strategy],
) -> Result<ExperimentResult> {
    if plan.n_repetitions == 0 {
        return Err(Error::InvalidConfig("need at least one repetition".into()));
    }
    let reps: Vec<usize> = (0..plan.n_repetitions).collect();
    let results = par::map_ordered(reps, |rep| table_repetition(plan, strategies, rep));
    let mut per_cell: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in results {
        for (row, zone, acc) in r? {
            per_cell.entry(format!("{row}/{zone}")).or_default().push(acc);
        }
    }
    let cells = per_cell.into_iter().map(|(k, runs)| (k, CellStats::from_runs(runs))).collect();
    Ok(ExperimentResult {
        cells,
        n_repetitions: plan.n_repetitions,
        n_train_images: plan.n_train_images,
        base_seed: plan.base_seed,
        config_hash: plan.config_hash(),
    })
}

/// Evaluates one trained model on zones shifted around its training
/// center. Offsets whose zone overflows the frame are omitted and listed.
/// `test_frames` must be held-out frames.
pub fn sweep_test_zone(
    model: &mut Network,
    train_center_cm: f64,
    offsets_cm: &[f64],
    test_frames: &[UltrasoundFrame],
    grid: &PatchGridSpec,
    geometry: &FrameGeometry,
    norm: &NormalizationSpec,
) -> Result<SweepCurve> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut omitted = Vec::new();
    let depth_aware = model.config.input_channels == 2;
    for &off in offsets_cm {
        let zone = match zone_for_center(train_center_cm + off, 3, grid, geometry) {
            Ok(z) => z,
            Err(Error::GridOverflow(_)) => {
                omitted.push(off);
                continue;
            }
            Err(e) => return Err(e),
        };
        let set =
            build_dataset(test_frames, grid, &ExtractionMode::Custom(zone), norm, depth_aware)?;
        let cm = evaluate(model, &set)?;
        x.push(off);
        y.push(cm.accuracy());
    }
    let curve = SweepCurve {
        yerr: vec![0.0; x.len()],
        x,
        y,
        x_label: "offset_cm".into(),
        y_label: "accuracy".into(),
        omitted,
    };
    curve.validate()?;
    Ok(curve)
}

/// Trains at a fixed center and sweeps the testing-zone offset, repeated
/// over `plan.n_repetitions` seeds; the curve carries mean and population
/// std per offset.
pub fn sweep_offset_experiment(
    plan: &ExperimentPlan,
    train_center_cm: f64,
    offsets_cm: &[f64],
) -> Result<SweepCurve> {
    let reps: Vec<usize> = (0..plan.n_repetitions).collect();
    let curves = par::map_ordered(reps, |rep| -> Result<SweepCurve> {
        let rep_seed = seeds::derive(plan.base_seed.wrapping_add(rep as u64), "rep", rep as u64);
        let zone = zone_for_center(train_center_cm, 3, &plan.grid, &plan.geometry)?;
        let mode = ExtractionMode::Custom(zone);
        let (train, val, _) = split_datasets(plan, rep_seed, &mode, false)?;
        let model_seed = seeds::derive(rep_seed, "model", hash_name("sweep"));
        let (mut model, _) = train_single(&train, &val, &plan.net_config, &plan.hp, model_seed)?;
        let split = split_frames(&plan.ids_per_class(), plan.n_train_images, rep_seed)?;
        let test_frames: Vec<UltrasoundFrame> =
            frames_for_ids(&plan.frames, &split.test_ids).into_iter().cloned().collect();
        sweep_test_zone(
            &mut model,
            train_center_cm,
            offsets_cm,
            &test_frames,
            &plan.grid,
            &plan.geometry,
            &plan.norm,
        )
    });
    aggregate_curves(curves, "offset_cm")
}

/// Trains and tests on zones swept across centers; one point per center,
/// aggregated over repetitions.
pub fn sweep_zone_center(plan: &ExperimentPlan, centers_cm: &[f64]) -> Result<SweepCurve> {
    let jobs: Vec<(usize, usize)> = (0..centers_cm.len())
        .flat_map(|c| (0..plan.n_repetitions).map(move |r| (c, r)))
        .collect();
    let accs = par::map_ordered(jobs, |(ci, rep)| -> Result<(usize, f64)> {
        let center = centers_cm[ci];
        let rep_seed = seeds::derive(plan.base_seed.wrapping_add(rep as u64), "rep", rep as u64);
        let zone = zone_for_center(center, 3, &plan.grid, &plan.geometry)?;
        let mode = ExtractionMode::Custom(zone);
        let (train, val, test) = split_datasets(plan, rep_seed, &mode, false)?;
        let model_seed = seeds::derive(rep_seed, "model", hash_name("center"));
        let (mut model, _) = train_single(&train, &val, &plan.net_config, &plan.hp, model_seed)?;
        let cm = evaluate(&mut model, &test)?;
        Ok((ci, cm.accuracy()))
    });
    let mut per_center: Vec<Vec<f64>> = vec![Vec::new(); centers_cm.len()];
    let mut omitted = Vec::new();
    for r in accs {
        match r {
            Ok((ci, acc)) => per_center[ci].push(acc),
            Err(Error::GridOverflow(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut yerr = Vec::new();
    for (ci, runs) in per_center.into_iter().enumerate() {
        if runs.is_empty() {
            omitted.push(centers_cm[ci]);
            continue;
        }
        let stats = CellStats::from_runs(runs);
        x.push(centers_cm[ci]);
        y.push(stats.mean);
        yerr.push(stats.std);
    }
    let curve = SweepCurve {
        x,
        y,
        yerr,
        x_label: "center_cm".into(),
        y_label: "accuracy".into(),
        omitted,
    };
    curve.validate()?;
    Ok(curve)
}

/// The on-focus zone widened to `width` axial lines: 3 keeps the on-focus
/// lines, 6 merges pre-focal and on-focus, 9 (all lines) coincides with
/// regular training.
pub fn width_zone(width: usize, grid: &PatchGridSpec, geometry: &FrameGeometry) -> Result<ZoneSpec> {
    let per = grid.n_axial_lines / 3;
    let lines: Vec<usize> = match width {
        w if w == per => (per..2 * per).collect(),
        w if w == 2 * per => (0..2 * per).collect(),
        w if w == grid.n_axial_lines => (0..grid.n_axial_lines).collect(),
        other => {
            return Err(Error::InvalidZone(format!(
                "zone width must be {per}, {} or {} lines, got {other}",
                2 * per,
                grid.n_axial_lines
            )))
        }
    };
    ZoneSpec::from_lines(ZoneName::Custom, &lines, grid, geometry)
}

/// Accuracy vs zone width anchored at the on-focus zone. Each width trains
/// through the regular-strategy code path on its zone's patches, so the
/// full-width run is bit-identical to regular training for matched seeds.
/// Models are tested on the on-focus zone.
pub fn zone_width_experiment(plan: &ExperimentPlan, widths: &[usize]) -> Result<SweepCurve> {
    let zones = default_zones(&plan.grid, &plan.geometry)?;
    let on_focus = zones[1].clone();
    let jobs: Vec<(usize, usize)> = (0..widths.len())
        .flat_map(|w| (0..plan.n_repetitions).map(move |r| (w, r)))
        .collect();
    let accs = par::map_ordered(jobs, |(wi, rep)| -> Result<(usize, f64)> {
        let width = widths[wi];
        let rep_seed = seeds::derive(plan.base_seed.wrapping_add(rep as u64), "rep", rep as u64);
        let mode = if width == plan.grid.n_axial_lines {
            ExtractionMode::Regular
        } else {
            ExtractionMode::Custom(width_zone(width, &plan.grid, &plan.geometry)?)
        };
        let (train, val, _) = split_datasets(plan, rep_seed, &mode, false)?;
        let model_seed = seeds::derive(rep_seed, "model", hash_name("all"));
        let (mut model, _) = train_single(&train, &val, &plan.net_config, &plan.hp, model_seed)?;
        let (_, _, test) =
            split_datasets(plan, rep_seed, &ExtractionMode::Zone(on_focus.clone()), false)?;
        let cm = evaluate(&mut model, &test)?;
        Ok((wi, cm.accuracy()))
    });
    let mut per_width: Vec<Vec<f64>> = vec![Vec::new(); widths.len()];
    for r in accs {
        let (wi, acc) = r?;
        per_width[wi].push(acc);
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut yerr = Vec::new();
    for (wi, runs) in per_width.into_iter().enumerate() {
        let stats = CellStats::from_runs(runs);
        x.push(widths[wi] as f64);
        y.push(stats.mean);
        yerr.push(stats.std);
    }
    let curve = SweepCurve {
        x,
        y,
        yerr,
        x_label: "width_lines".into(),
        y_label: "accuracy".into(),
        omitted: Vec::new(),
    };
    curve.validate()?;
    Ok(curve)
}

fn aggregate_curves(curves: Vec<Result<SweepCurve>>, x_label: &str) -> Result<SweepCurve> {
    let mut per_x: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    let mut omitted = Vec::new();
    let quantize = |v: f64| (v * 1e6).round() as i64;
    for c in curves {
        let c = c?;
        for (x, y) in c.x.iter().zip(&c.y) {
            per_x.entry(quantize(*x)).or_default().push(*y);
        }
        for o in c.omitted {
            if !omitted.contains(&o) {
                omitted.push(o);
            }
        }
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut yerr = Vec::new();
    for (k, runs) in per_x {
        let stats = CellStats::from_runs(runs);
        x.push(k as f64 / 1e6);
        y.push(stats.mean);
        yerr.push(stats.std);
    }
    let curve = SweepCurve {
        x,
        y,
        yerr,
        x_label: x_label.into(),
        y_label: "accuracy".into(),
        omitted,
    };
    curve.validate()?;
    Ok(curve)
}

// ---------------------------------------------------------------------
// report files

/// Writes the strategy-by-zone table as tab-delimited text mirroring the
/// reference layout (rows pre/on/post/regular/depth-aware, columns test
/// zones).
pub fn write_table(result: &ExperimentResult, path: &Path) -> Result<()> {
    if result.cells.is_empty() {
        return Err(Error::EmptyResults("table has no cells".into()));
    }
    let mut out = String::new();
    out.push_str("# strategy\ttest_zone\tmean\tstd\tn_reps\tseed_base\tconfig_hash\n");
    let row_order = ["pre_focal", "on_focus", "post_focal", "regular", "depth_aware"];
    let zone_order = ["pre_focal", "on_focus", "post_focal"];
    for row in row_order {
        for zone in zone_order {
            if let Some(stats) = result.cell(row, zone) {
                out.push_str(&format!(
                    "{row}\t{zone}\t{:.6}\t{:.6}\t{}\t{}\t{}\n",
                    stats.mean,
                    stats.std,
                    result.n_repetitions,
                    result.base_seed,
                    result.config_hash
                ));
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes a sweep curve as tab-delimited text.
pub fn write_curve(curve: &SweepCurve, path: &Path) -> Result<()> {
    curve.validate()?;
    let mut out = String::new();
    out.push_str(&format!("# {}\t{}\tstd\n", curve.x_label, curve.y_label));
    for ((x, y), e) in curve.x.iter().zip(&curve.y).zip(&curve.yerr) {
        out.push_str(&format!("{x:.6}\t{y:.6}\t{e:.6}\n"));
    }
    for o in &curve.omitted {
        out.push_str(&format!("# omitted\t{o:.6}\toverflow\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parses a curve file written by [`write_curve`].
pub fn parse_curve(path: &Path) -> Result<SweepCurve> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty curve file".into()))?;
    let mut fields = header.trim_start_matches("# ").split('\t');
    let x_label = fields.next().unwrap_or("x").to_string();
    let y_label = fields.next().unwrap_or("y").to_string();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut yerr = Vec::new();
    let mut omitted = Vec::new();
    for line in lines {
        if let Some(rest) = line.strip_prefix("# omitted\t") {
            let v = rest
                .split('\t')
                .next()
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse(format!("bad omitted line: {line}")))?;
            omitted.push(v);
            continue;
        }
        let mut parts = line.split('\t');
        let parse = |p: Option<&str>| -> Result<f64> {
            p.and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse(format!("bad curve line: {line}")))
        };
        x.push(parse(parts.next())?);
        y.push(parse(parts.next())?);
        yerr.push(parse(parts.next())?);
    }
    let curve = SweepCurve { x, y, yerr, x_label, y_label, omitted };
    curve.validate()?;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use crate::trainer::DeskProfile;

    #[test]
    fn confusion_matrix_accuracy() {
        let mut cm = ConfusionMatrix::new(3);
        for c in 0..3 {
            for _ in 0..30 {
                cm.record(c, c);
            }
        }
        assert_eq!(cm.n_samples(), 90);
        assert_eq!(cm.accuracy(), 1.0);
        let mut constant = ConfusionMatrix::new(3);
        for c in 0..3 {
            for _ in 0..30 {
                constant.record(c, 0);
            }
        }
        assert!((constant.accuracy() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(constant.row_sum(2), 30);
        // first column carries all the mass
        assert_eq!(constant.counts.iter().map(|r| r[0]).sum::<u64>(), 90);
    }

    #[test]
    fn zero_weight_model_predicts_class_zero_by_tie_rule() {
        let desk = DeskProfile::default();
        let mut model = init_model(&desk.net_config, 1).unwrap();
        for p in model.params_mut() {
            p.value.fill(0.0);
        }
        let data = ndarray::Array4::from_elem((6, 1, 100, 26), 0.5f32);
        let set = LabeledPatchSet {
            data,
            labels: vec![0, 1, 2, 0, 1, 2],
            depths_norm: vec![0.0; 6],
            zone_names: vec![ZoneName::OnFocus; 6],
            extraction_mode: ExtractionMode::Regular,
        };
        let cm = evaluate(&mut model, &set).unwrap();
        // uniform logits: every prediction is class 0
        assert_eq!(cm.counts.iter().map(|r| r[0]).sum::<u64>(), 6);
    }

    #[test]
    fn evaluate_rejects_channel_mismatch() {
        let desk = DeskProfile::default();
        let mut model = init_model(&desk.net_config, 1).unwrap();
        let set = LabeledPatchSet {
            data: ndarray::Array4::zeros((2, 2, 100, 26)),
            labels: vec![0, 1],
            depths_norm: vec![0.0; 2],
            zone_names: vec![ZoneName::OnFocus; 2],
            extraction_mode: ExtractionMode::Regular,
        };
        assert!(matches!(
            evaluate(&mut model, &set),
            Err(Error::ChannelMismatch { expected: 1, actual: 2 })
        ));
    }

    #[test]
    fn cell_stats_population_std() {
        let stats = CellStats::from_runs(vec![0.8, 1.0]);
        assert!((stats.mean - 0.9).abs() < 1e-12);
        assert!((stats.std - 0.1).abs() < 1e-12);
        let same = CellStats::from_runs(vec![0.7; 5]);
        assert_eq!(same.std, 0.0);
        assert_eq!(same.mean, 0.7);
    }

    #[test]
    fn zone_dispatch_default_zones() {
        let geo = FrameGeometry::default();
        let grid = PatchGridSpec::default();
        let zones = default_zones(&grid, &geo).unwrap();
        assert_eq!(zone_dispatch(2.0, &zones, &grid, &geo).unwrap(), ZoneName::OnFocus);
        assert_eq!(zone_dispatch(1.23, &zones, &grid, &geo).unwrap(), ZoneName::PreFocal);
        assert!(matches!(
            zone_dispatch(3.5, &zones, &grid, &geo),
            Err(Error::UncoveredDepth(_))
        ));
        // every grid line's center is covered by exactly one zone
        for i in 0..grid.n_axial_lines {
            let d = crate::geometry::depth_cm_of_line(&grid, &geo, i).unwrap();
            let mut owners = 0;
            for z in &zones {
                if zone_dispatch(d, std::slice::from_ref(z), &grid, &geo).is_ok() {
                    owners += 1;
                }
            }
            assert_eq!(owners, 1, "line {i} depth {d}");
        }
    }

    #[test]
    fn width_zone_definitions() {
        let (geo, grid) = crate::synthphantom::small_geometry();
        let w3 = width_zone(3, &grid, &geo).unwrap();
        let w6 = width_zone(6, &grid, &geo).unwrap();
        let w9 = width_zone(9, &grid, &geo).unwrap();
        assert_eq!(w3.n_lines(), 3);
        assert_eq!(w6.n_lines(), 6);
        assert_eq!(w9.n_lines(), 9);
        let zones = default_zones(&grid, &geo).unwrap();
        assert_eq!(w3.axial_starts_px, zones[1].axial_starts_px);
        // width 6 = pre-focal + on-focus lines
        let mut merged = zones[0].axial_starts_px.clone();
        merged.extend(&zones[1].axial_starts_px);
        assert_eq!(w6.axial_starts_px, merged);
        assert!(width_zone(5, &grid, &geo).is_err());
    }

    #[test]
    fn curve_roundtrip() {
        let curve = SweepCurve {
            x: vec![-0.4, 0.0, 0.4],
            y: vec![0.71, 0.93, 0.88],
            yerr: vec![0.02, 0.01, 0.015],
            x_label: "offset_cm".into(),
            y_label: "accuracy".into(),
            omitted: vec![-0.8],
        };
        let path = std::env::temp_dir().join(format!("curve-{}.tsv", std::process::id()));
        write_curve(&curve, &path).unwrap();
        let back = parse_curve(&path).unwrap();
        assert_eq!(curve, back);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn empty_curve_is_refused() {
        let curve = SweepCurve {
            x: vec![],
            y: vec![],
            yerr: vec![],
            x_label: "x".into(),
            y_label: "y".into(),
            omitted: vec![],
        };
        let path = std::env::temp_dir().join("never-written.tsv");
        assert!(matches!(write_curve(&curve, &path), Err(Error::EmptyResults(_))));
    }
}
