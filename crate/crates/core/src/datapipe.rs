//! Frame splits, per-patch normalization, augmentation, depth channels,
//! and labeled dataset assembly.

use std::collections::BTreeMap;

use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    extract_regular_grid, extract_zone, PatchGridSpec, UltrasoundFrame, ZoneName, ZoneSpec,
};
use crate::seeds;

/// Disjoint train/val/test frame ids per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSplit {
    pub train_ids: BTreeMap<usize, Vec<u64>>,
    pub val_ids: BTreeMap<usize, Vec<u64>>,
    pub test_ids: BTreeMap<usize, Vec<u64>>,
    pub seed: u64,
}

impl FrameSplit {
    fn all_of(map: &BTreeMap<usize, Vec<u64>>) -> impl Iterator<Item = u64> + '_ {
        map.values().flatten().copied()
    }

    /// Checks pairwise disjointness across the three partitions.
    pub fn is_leak_free(&self) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        Self::all_of(&self.train_ids)
            .chain(Self::all_of(&self.val_ids))
            .chain(Self::all_of(&self.test_ids))
            .all(|id| seen.insert(id))
    }
}

/// Uniform random split without replacement: `n_per_partition` frames per
/// class into each of train/val/test. Reproducible for a fixed seed.
pub fn split_frames(
    frames_per_class: &BTreeMap<usize, Vec<u64>>,
    n_per_partition: usize,
    seed: u64,
) -> Result<FrameSplit> {
    if n_per_partition == 0 {
        return Err(Error::InsufficientFrames { class: 0, needed: 1, available: 0 });
    }
    let mut train = BTreeMap::new();
    let mut val = BTreeMap::new();
    let mut test = BTreeMap::new();
    for (&class, ids) in frames_per_class {
        let needed = 3 * n_per_partition;
        if ids.len() < needed {
            return Err(Error::InsufficientFrames { class, needed, available: ids.len() });
        }
        let mut pool = ids.clone();
        let mut rng = seeds::rng(seed, "split", class as u64);
        pool.shuffle(&mut rng);
        train.insert(class, pool[..n_per_partition].to_vec());
        val.insert(class, pool[n_per_partition..2 * n_per_partition].to_vec());
        test.insert(class, pool[2 * n_per_partition..3 * n_per_partition].to_vec());
    }
    Ok(FrameSplit { train_ids: train, val_ids: val, test_ids: test, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    PerPatch,
    Corpus,
}

/// Z-score normalization settings. Corpus statistics, when used, must come
/// from training patches only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub mode: NormMode,
    pub epsilon: f64,
    pub corpus_mean: Option<f64>,
    pub corpus_std: Option<f64>,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self { mode: NormMode::PerPatch, epsilon: 1e-8, corpus_mean: None, corpus_std: None }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if self.mode == NormMode::Corpus {
            match (self.corpus_mean, self.corpus_std) {
                (Some(_), Some(s)) if s > 0.0 => {}
                _ => {
                    return Err(Error::InvalidConfig(
                        "corpus mode requires corpus_mean and positive corpus_std".into(),
                    ))
                }
            }
        }
        Ok(())
    }
}

/// Z-scores one patch. A constant patch (std below epsilon) maps to all
/// zeros rather than erroring.
pub fn zscore(patch: &Array2<f32>, spec: &NormalizationSpec) -> Array2<f32> {
    match spec.mode {
        NormMode::PerPatch => {
            let n = patch.len() as f64;
            let mean = patch.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = patch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std < spec.epsilon {
                Array2::zeros(patch.dim())
            } else {
                patch.mapv(|v| ((v as f64 - mean) / std) as f32)
            }
        }
        NormMode::Corpus => {
            let mean = spec.corpus_mean.unwrap_or(0.0);
            let std = spec.corpus_std.unwrap_or(1.0);
            patch.mapv(|v| ((v as f64 - mean) / std) as f32)
        }
    }
}

/// Reverses the lateral axis of a (channels, axial, lateral) tensor in place.
pub fn flip_lateral(patch: &mut ndarray::ArrayViewMut3<f32>) {
    let w = patch.len_of(Axis(2));
    for mut row in patch.rows_mut() {
        for j in 0..w / 2 {
            row.swap(j, w - 1 - j);
        }
    }
}

/// Flips with probability 0.5, drawing one coin from `rng`.
pub fn horizontal_flip<R: Rng>(patch: &mut ndarray::ArrayViewMut3<f32>, rng: &mut R) -> bool {
    let flip = rng.gen_bool(0.5);
    if flip {
        flip_lateral(patch);
    }
    flip
}

/// Normalized depth of a zone line relative to the default grid lattice:
/// the nearest default line is 0, the farthest is 1, off-lattice starts
/// interpolate linearly and clamp at the ends.
pub fn depth_norm_for_start(axial_start_px: usize, grid: &PatchGridSpec) -> f32 {
    if grid.n_axial_lines < 2 {
        return 0.0;
    }
    let span = (grid.axial_stride_px * (grid.n_axial_lines - 1)) as f64;
    let rel = (axial_start_px as f64 - grid.axial_skip_px as f64) / span;
    rel.clamp(0.0, 1.0) as f32
}

/// Stacks a constant depth layer onto a single-channel patch.
/// The depth value is `line_index / (n_lines - 1)`.
pub fn attach_depth_channel(
    patch: &Array2<f32>,
    line_index: usize,
    n_lines: usize,
) -> Result<ndarray::Array3<f32>> {
    if n_lines < 2 {
        return Err(Error::InvalidConfig("depth channel needs n_lines >= 2".into()));
    }
    if line_index >= n_lines {
        return Err(Error::IndexOutOfRange { index: line_index, len: n_lines });
    }
    let depth = line_index as f32 / (n_lines - 1) as f32;
    let (h, w) = patch.dim();
    let mut out = ndarray::Array3::zeros((2, h, w));
    out.index_axis_mut(Axis(0), 0).assign(patch);
    out.index_axis_mut(Axis(0), 1).fill(depth);
    Ok(out)
}

/// How patches were cut for a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExtractionMode {
    Regular,
    Zone(ZoneSpec),
    Custom(ZoneSpec),
}

/// Normalized patch tensors with labels and depth/zone metadata, the unit
/// of training and testing. Tensors are (n, channels, axial, lateral).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatchSet {
    pub data: Array4<f32>,
    pub labels: Vec<usize>,
    pub depths_norm: Vec<f32>,
    pub zone_names: Vec<ZoneName>,
    pub extraction_mode: ExtractionMode,
}

impl LabeledPatchSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }
}

/// Zone tag for a regular-grid patch: which default zone owns its line.
fn default_zone_of_line(line_index: usize, n_axial_lines: usize) -> ZoneName {
    let per = n_axial_lines / 3;
    match line_index / per {
        0 => ZoneName::PreFocal,
        1 => ZoneName::OnFocus,
        _ => ZoneName::PostFocal,
    }
}

/// Cuts, normalizes, and assembles patches from labeled frames in
/// deterministic order (frame order x geometry order).
pub fn build_dataset(
    frames: &[UltrasoundFrame],
    grid: &PatchGridSpec,
    mode: &ExtractionMode,
    norm: &NormalizationSpec,
    depth_aware: bool,
) -> Result<LabeledPatchSet> {
    norm.validate()?;
    if frames.is_empty() {
        return Err(Error::EmptyDataset("no frames supplied".into()));
    }
    let mut tensors: Vec<ndarray::Array3<f32>> = Vec::new();
    let mut labels = Vec::new();
    let mut depths_norm = Vec::new();
    let mut zone_names = Vec::new();

    for frame in frames {
        let label = frame.label.ok_or_else(|| {
            Error::InvalidConfig(format!("frame {} is unlabeled", frame.frame_id))
        })?;
        let patches = match mode {
            ExtractionMode::Regular => extract_regular_grid(frame, grid)?,
            ExtractionMode::Zone(z) | ExtractionMode::Custom(z) => extract_zone(frame, grid, z)?,
        };
        for (k, p) in patches.iter().enumerate() {
            let normalized = zscore(&p.values, norm);
            let (depth, zone) = match mode {
                ExtractionMode::Regular => {
                    let line = k / grid.n_lateral_lines;
                    (
                        line as f32 / (grid.n_axial_lines - 1).max(1) as f32,
                        default_zone_of_line(line, grid.n_axial_lines),
                    )
                }
                ExtractionMode::Zone(z) | ExtractionMode::Custom(z) => {
                    (depth_norm_for_start(p.axial_start_px, grid), z.name)
                }
            };
            let tensor = if depth_aware {
                let (h, w) = normalized.dim();
                let mut t = ndarray::Array3::zeros((2, h, w));
                t.index_axis_mut(Axis(0), 0).assign(&normalized);
                t.index_axis_mut(Axis(0), 1).fill(depth);
                t
            } else {
                let (h, w) = normalized.dim();
                normalized.into_shape((1, h, w)).expect("reshape")
            };
            tensors.push(tensor);
            labels.push(label);
            depths_norm.push(depth);
            zone_names.push(zone);
        }
    }

    let (c, h, w) = tensors[0].dim();
    let mut data = Array4::zeros((tensors.len(), c, h, w));
    for (i, t) in tensors.iter().enumerate() {
        data.index_axis_mut(Axis(0), i).assign(t);
    }
    Ok(LabeledPatchSet {
        data,
        labels,
        depths_norm,
        zone_names,
        extraction_mode: mode.clone(),
    })
}

/// Selects the frames named by one split partition, preserving split order.
pub fn frames_for_ids<'a>(
    frames: &'a [UltrasoundFrame],
    ids: &BTreeMap<usize, Vec<u64>>,
) -> Vec<&'a UltrasoundFrame> {
    let by_id: BTreeMap<u64, &UltrasoundFrame> =
        frames.iter().map(|f| (f.frame_id, f)).collect();
    ids.values().flatten().filter_map(|id| by_id.get(id).copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{default_zones, FrameGeometry};
    use crate::synthphantom::{
        default_class_profiles, default_diffraction, generate_dataset, small_geometry,
    };
    use ndarray::Array3;

    fn class_map(n: usize) -> BTreeMap<usize, Vec<u64>> {
        (0..3).map(|c| (c, (0..n as u64).map(|i| (c as u64) * 10_000 + i).collect())).collect()
    }

    #[test]
    fn split_counts_and_disjointness() {
        let split = split_frames(&class_map(1007), 25, 7).unwrap();
        for m in [&split.train_ids, &split.val_ids, &split.test_ids] {
            for ids in m.values() {
                assert_eq!(ids.len(), 25);
            }
        }
        assert!(split.is_leak_free());
    }

    #[test]
    fn split_rejects_empty_and_short() {
        assert!(matches!(
            split_frames(&class_map(10), 0, 7),
            Err(Error::InsufficientFrames { .. })
        ));
        assert!(matches!(
            split_frames(&class_map(10), 4, 7),
            Err(Error::InsufficientFrames { .. })
        ));
    }

    #[test]
    fn split_determinism_and_seed_sensitivity() {
        let a = split_frames(&class_map(100), 10, 7).unwrap();
        let b = split_frames(&class_map(100), 10, 7).unwrap();
        assert_eq!(a, b);
        let mut distinct = 0;
        for seed in 0..100 {
            let c = split_frames(&class_map(100), 10, 1000 + seed).unwrap();
            if c.train_ids != a.train_ids {
                distinct += 1;
            }
        }
        assert!(distinct >= 99, "only {distinct}/100 seeds gave distinct splits");
    }

    #[test]
    fn zscore_constant_patch_is_zeroed() {
        let p = Array2::from_elem((8, 8), 5.0f32);
        let z = zscore(&p, &NormalizationSpec::default());
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zscore_pm_one_tiling_unchanged() {
        let p = Array2::from_shape_fn((10, 10), |(i, j)| if (i + j) % 2 == 0 { 1.0 } else { -1.0 });
        let z = zscore(&p, &NormalizationSpec::default());
        for (a, b) in p.iter().zip(z.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zscore_statistics_and_idempotence() {
        let mut rng = seeds::rng(3, "test", 0);
        for _ in 0..20 {
            let p = Array2::from_shape_fn((200, 26), |_| rng.gen_range(-3.0f32..9.0));
            let z = zscore(&p, &NormalizationSpec::default());
            let n = z.len() as f64;
            let mean = z.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = z.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            assert!((var.sqrt() - 1.0).abs() < 1e-5);
            let zz = zscore(&z, &NormalizationSpec::default());
            for (a, b) in z.iter().zip(zz.iter()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn corpus_mode_applies_fixed_statistics() {
        let spec = NormalizationSpec {
            mode: NormMode::Corpus,
            epsilon: 1e-8,
            corpus_mean: Some(2.0),
            corpus_std: Some(4.0),
        };
        spec.validate().unwrap();
        let p = Array2::from_elem((2, 2), 10.0f32);
        let z = zscore(&p, &spec);
        assert!(z.iter().all(|&v| (v - 2.0).abs() < 1e-6));
    }

    #[test]
    fn flip_is_involution_and_reverses_columns() {
        let mut t = Array3::from_shape_fn((1, 4, 26), |(_, i, j)| (i * 100 + j) as f32);
        let orig = t.clone();
        flip_lateral(&mut t.view_mut());
        for i in 0..4 {
            for j in 0..26 {
                assert_eq!(t[[0, i, j]], orig[[0, i, 25 - j]]);
            }
        }
        flip_lateral(&mut t.view_mut());
        assert_eq!(t, orig);
    }

    #[test]
    fn flip_rate_is_half() {
        let mut rng = seeds::rng(5, "flip", 0);
        let mut t = Array3::zeros((1, 2, 2));
        let mut flips = 0u32;
        for _ in 0..10_000 {
            if horizontal_flip(&mut t.view_mut(), &mut rng) {
                flips += 1;
            }
        }
        let rate = flips as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&rate), "flip rate {rate}");
    }

    #[test]
    fn depth_channel_values() {
        let p = Array2::zeros((4, 4));
        assert_eq!(attach_depth_channel(&p, 0, 9).unwrap()[[1, 0, 0]], 0.0);
        assert_eq!(attach_depth_channel(&p, 8, 9).unwrap()[[1, 0, 0]], 1.0);
        assert_eq!(attach_depth_channel(&p, 4, 9).unwrap()[[1, 0, 0]], 0.5);
        assert!(attach_depth_channel(&p, 9, 9).is_err());
        assert!(attach_depth_channel(&p, 0, 1).is_err());
    }

    #[test]
    fn depth_channel_survives_flip() {
        let p = Array2::from_shape_fn((4, 6), |(i, j)| (i * 10 + j) as f32);
        let mut t = attach_depth_channel(&p, 3, 9).unwrap();
        let depth_before = t.index_axis(Axis(0), 1).to_owned();
        flip_lateral(&mut t.view_mut());
        assert_eq!(t.index_axis(Axis(0), 1), depth_before);
    }

    #[test]
    fn dataset_counts_regular_and_zone() {
        let (geo, grid) = small_geometry();
        let frames =
            generate_dataset(2, &default_class_profiles(), &default_diffraction(), &geo, 9)
                .unwrap();
        let norm = NormalizationSpec::default();
        let reg =
            build_dataset(&frames, &grid, &ExtractionMode::Regular, &norm, false).unwrap();
        assert_eq!(reg.len(), 6 * 9 * 4);
        let zones = default_zones(&grid, &geo).unwrap();
        let zs = build_dataset(
            &frames,
            &grid,
            &ExtractionMode::Zone(zones[1].clone()),
            &norm,
            false,
        )
        .unwrap();
        assert_eq!(zs.len(), 6 * 3 * 4);
        assert!(zs.zone_names.iter().all(|z| *z == ZoneName::OnFocus));
    }

    #[test]
    fn depth_aware_dataset_has_distinct_depths_per_line() {
        let (geo, grid) = small_geometry();
        let frames = generate_dataset(
            1,
            &default_class_profiles()[..1],
            &default_diffraction(),
            &geo,
            2,
        )
        .unwrap();
        let ds = build_dataset(
            &frames,
            &grid,
            &ExtractionMode::Regular,
            &NormalizationSpec::default(),
            true,
        )
        .unwrap();
        assert_eq!(ds.len(), 36);
        assert_eq!(ds.channels(), 2);
        let mut depths: Vec<f32> = ds.depths_norm.clone();
        depths.sort_by(f32::total_cmp);
        depths.dedup();
        assert_eq!(depths.len(), 9);
        // depth layer is constant and equals the recorded depth
        for i in 0..ds.len() {
            let layer = ds.data.index_axis(Axis(0), i);
            let d = ds.depths_norm[i];
            assert!(layer.index_axis(Axis(0), 1).iter().all(|&v| v == d));
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let (geo, grid) = small_geometry();
        let frames =
            generate_dataset(1, &default_class_profiles(), &default_diffraction(), &geo, 2)
                .unwrap();
        let norm = NormalizationSpec::default();
        let a = build_dataset(&frames, &grid, &ExtractionMode::Regular, &norm, false).unwrap();
        let b = build_dataset(&frames, &grid, &ExtractionMode::Regular, &norm, false).unwrap();
        assert_eq!(a, b);
    }
}
