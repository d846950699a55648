//! Frame geometry, patch extraction, zone definitions, and depth mapping.
//!
//! All quantities are pixel-exact. The default constants describe the
//! acquisition used throughout the toolkit: 2080 axial samples over 4 cm
//! (520 px/cm), 256 lateral lines, a 200x26-px patch grid that skips the
//! first 540 axial pixels and steps 100 px axially / 26 px laterally,
//! giving 9x9 = 81 patches per frame. The nine axial lines split into
//! three zones of three lines each: pre-focal, on-focus, post-focal.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical and sampling geometry of one RF frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGeometry {
    pub axial_pixels: usize,
    pub lateral_pixels: usize,
    pub depth_cm: f64,
    pub sampling_rate_hz: f64,
    pub focus_depth_cm: f64,
}

impl Default for FrameGeometry {
    fn default() -> Self {
        Self {
            axial_pixels: 2080,
            lateral_pixels: 256,
            depth_cm: 4.0,
            sampling_rate_hz: 40e6,
            focus_depth_cm: 2.0,
        }
    }
}

impl FrameGeometry {
    /// Axial pixels per centimeter of depth (520 for the default frame).
    pub fn pixels_per_cm(&self) -> f64 {
        self.axial_pixels as f64 / self.depth_cm
    }

    pub fn validate(&self) -> Result<()> {
        if self.axial_pixels == 0 || self.lateral_pixels == 0 {
            return Err(Error::InvalidConfig(
                "frame must have at least one axial and one lateral pixel".into(),
            ));
        }
        if !(self.depth_cm > 0.0) {
            return Err(Error::InvalidConfig("depth_cm must be positive".into()));
        }
        let ppc = self.pixels_per_cm();
        if !ppc.is_finite() || ppc <= 0.0 {
            return Err(Error::InvalidConfig("pixels_per_cm must be finite and positive".into()));
        }
        Ok(())
    }
}

/// One RF frame: an axial x lateral sample grid plus geometry metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct UltrasoundFrame {
    pub geometry: FrameGeometry,
    pub samples: Array2<f32>,
    pub frame_id: u64,
    pub label: Option<usize>,
}

impl UltrasoundFrame {
    pub fn new(
        geometry: FrameGeometry,
        samples: Array2<f32>,
        frame_id: u64,
        label: Option<usize>,
    ) -> Result<Self> {
        geometry.validate()?;
        let (ax, lat) = samples.dim();
        if ax != geometry.axial_pixels || lat != geometry.lateral_pixels {
            return Err(Error::DimensionMismatch(format!(
                "samples are {ax}x{lat}, geometry declares {}x{}",
                geometry.axial_pixels, geometry.lateral_pixels
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "frame {frame_id} contains non-finite samples"
            )));
        }
        Ok(Self { geometry, samples, frame_id, label })
    }
}

/// Where patches are cut: sizes, strides, and line counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGridSpec {
    pub patch_axial_px: usize,
    pub patch_lateral_px: usize,
    /// Leading axial pixels excluded from extraction.
    pub axial_skip_px: usize,
    pub axial_stride_px: usize,
    pub lateral_stride_px: usize,
    pub n_axial_lines: usize,
    pub n_lateral_lines: usize,
}

impl Default for PatchGridSpec {
    fn default() -> Self {
        Self {
            patch_axial_px: 200,
            patch_lateral_px: 26,
            axial_skip_px: 540,
            axial_stride_px: 100,
            lateral_stride_px: 26,
            n_axial_lines: 9,
            n_lateral_lines: 9,
        }
    }
}

impl PatchGridSpec {
    pub fn validate(&self, geometry: &FrameGeometry) -> Result<()> {
        geometry.validate()?;
        if self.n_axial_lines == 0 || self.n_lateral_lines == 0 {
            return Err(Error::InvalidConfig("grid needs at least one line per axis".into()));
        }
        if self.patch_axial_px == 0 || self.patch_lateral_px == 0 {
            return Err(Error::InvalidConfig("patch dimensions must be nonzero".into()));
        }
        let axial_end =
            self.axial_skip_px + (self.n_axial_lines - 1) * self.axial_stride_px + self.patch_axial_px;
        if axial_end > geometry.axial_pixels {
            return Err(Error::GridOverflow(format!(
                "last axial patch ends at {axial_end} on a {}-px frame",
                geometry.axial_pixels
            )));
        }
        let lateral_end =
            (self.n_lateral_lines - 1) * self.lateral_stride_px + self.patch_lateral_px;
        if lateral_end > geometry.lateral_pixels {
            return Err(Error::GridOverflow(format!(
                "last lateral patch ends at {lateral_end} on a {}-px frame",
                geometry.lateral_pixels
            )));
        }
        Ok(())
    }
}

/// Named axial zones. The three defaults partition the default 9-line grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ZoneName {
    PreFocal,
    OnFocus,
    PostFocal,
    Custom,
}

impl std::fmt::Display for ZoneName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ZoneName::PreFocal => "pre_focal",
            ZoneName::OnFocus => "on_focus",
            ZoneName::PostFocal => "post_focal",
            ZoneName::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ZoneName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre_focal" => Ok(ZoneName::PreFocal),
            "on_focus" => Ok(ZoneName::OnFocus),
            "post_focal" => Ok(ZoneName::PostFocal),
            "custom" => Ok(ZoneName::Custom),
            other => Err(Error::Parse(format!("unknown zone name {other:?}"))),
        }
    }
}

/// A band of consecutive axial patch lines, resolved to pixel offsets.
///
/// Default zones reference lines of the grid lattice; custom zones built by
/// [`zone_for_center`] may sit off the default lattice (sweeps reach above
/// the 540-px skip).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSpec {
    pub name: ZoneName,
    /// Axial start offset of each line's patches, ascending.
    pub axial_starts_px: Vec<usize>,
    /// Depth of the middle line's patch center.
    pub center_depth_cm: f64,
}

impl ZoneSpec {
    /// Builds a zone from consecutive line indices of the grid.
    pub fn from_lines(
        name: ZoneName,
        line_indices: &[usize],
        grid: &PatchGridSpec,
        geometry: &FrameGeometry,
    ) -> Result<Self> {
        if line_indices.is_empty() {
            return Err(Error::InvalidZone("zone needs at least one line".into()));
        }
        for w in line_indices.windows(2) {
            if w[1] != w[0] + 1 {
                return Err(Error::InvalidZone(format!(
                    "zone lines must be consecutive, got {line_indices:?}"
                )));
            }
        }
        let starts = axial_line_starts(grid, geometry)?;
        let mut axial_starts = Vec::with_capacity(line_indices.len());
        for &i in line_indices {
            let &s = starts.get(i).ok_or(Error::IndexOutOfRange { index: i, len: starts.len() })?;
            axial_starts.push(s);
        }
        let mid = axial_starts[axial_starts.len() / 2];
        let center = patch_center_depth_cm(mid, grid, geometry);
        Ok(Self { name, axial_starts_px: axial_starts, center_depth_cm: center })
    }

    pub fn n_lines(&self) -> usize {
        self.axial_starts_px.len()
    }
}

/// The three default zones: lines 0-2, 3-5, 6-8 of a grid whose axial line
/// count is divisible by three.
pub fn default_zones(grid: &PatchGridSpec, geometry: &FrameGeometry) -> Result<[ZoneSpec; 3]> {
    if grid.n_axial_lines % 3 != 0 {
        return Err(Error::InvalidZone(format!(
            "default zones need n_axial_lines divisible by 3, got {}",
            grid.n_axial_lines
        )));
    }
    let per = grid.n_axial_lines / 3;
    let lines = |k: usize| (k * per..(k + 1) * per).collect::<Vec<_>>();
    Ok([
        ZoneSpec::from_lines(ZoneName::PreFocal, &lines(0), grid, geometry)?,
        ZoneSpec::from_lines(ZoneName::OnFocus, &lines(1), grid, geometry)?,
        ZoneSpec::from_lines(ZoneName::PostFocal, &lines(2), grid, geometry)?,
    ])
}

/// One extracted patch: a verbatim sub-grid of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub values: Array2<f32>,
    pub axial_start_px: usize,
    pub lateral_start_px: usize,
    pub center_depth_cm: f64,
    pub source_frame_id: u64,
    pub label: Option<usize>,
}

/// Depth of a patch center whose first axial pixel is `axial_start_px`.
pub fn patch_center_depth_cm(
    axial_start_px: usize,
    grid: &PatchGridSpec,
    geometry: &FrameGeometry,
) -> f64 {
    (axial_start_px as f64 + grid.patch_axial_px as f64 / 2.0) / geometry.pixels_per_cm()
}

/// Axial start offsets of all grid lines: `skip + i * stride`.
pub fn axial_line_starts(grid: &PatchGridSpec, geometry: &FrameGeometry) -> Result<Vec<usize>> {
    grid.validate(geometry)?;
    Ok((0..grid.n_axial_lines)
        .map(|i| grid.axial_skip_px + i * grid.axial_stride_px)
        .collect())
}

/// Lateral start offsets of all grid lines: `j * stride`.
pub fn lateral_line_starts(grid: &PatchGridSpec, geometry: &FrameGeometry) -> Result<Vec<usize>> {
    grid.validate(geometry)?;
    Ok((0..grid.n_lateral_lines)
        .map(|j| j * grid.lateral_stride_px)
        .collect())
}

fn cut_patch(frame: &UltrasoundFrame, grid: &PatchGridSpec, ax: usize, lat: usize) -> Patch {
    let values = frame
        .samples
        .slice(ndarray::s![ax..ax + grid.patch_axial_px, lat..lat + grid.patch_lateral_px])
        .to_owned();
    Patch {
        values,
        axial_start_px: ax,
        lateral_start_px: lat,
        center_depth_cm: patch_center_depth_cm(ax, grid, &frame.geometry),
        source_frame_id: frame.frame_id,
        label: frame.label,
    }
}

/// Extracts the full regular grid, axial-major (line 0 lateral 0..n, then
/// line 1, ...). 81 patches for the default frame and grid.
pub fn extract_regular_grid(frame: &UltrasoundFrame, grid: &PatchGridSpec) -> Result<Vec<Patch>> {
    let ax_starts = axial_line_starts(grid, &frame.geometry)?;
    let lat_starts = lateral_line_starts(grid, &frame.geometry)?;
    let (ax, lat) = frame.samples.dim();
    if ax != frame.geometry.axial_pixels || lat != frame.geometry.lateral_pixels {
        return Err(Error::DimensionMismatch(format!(
            "frame samples {ax}x{lat} disagree with geometry"
        )));
    }
    let mut patches = Vec::with_capacity(ax_starts.len() * lat_starts.len());
    for &a in &ax_starts {
        for &l in &lat_starts {
            patches.push(cut_patch(frame, grid, a, l));
        }
    }
    Ok(patches)
}

/// Extracts one zone's lines, axial-major within the zone.
pub fn extract_zone(
    frame: &UltrasoundFrame,
    grid: &PatchGridSpec,
    zone: &ZoneSpec,
) -> Result<Vec<Patch>> {
    if zone.axial_starts_px.is_empty() {
        return Err(Error::InvalidZone("zone has no lines".into()));
    }
    let lat_starts = lateral_line_starts(grid, &frame.geometry)?;
    for &a in &zone.axial_starts_px {
        if a + grid.patch_axial_px > frame.geometry.axial_pixels {
            return Err(Error::GridOverflow(format!(
                "zone line at {a} ends past the {}-px frame",
                frame.geometry.axial_pixels
            )));
        }
    }
    let mut patches = Vec::with_capacity(zone.axial_starts_px.len() * lat_starts.len());
    for &a in &zone.axial_starts_px {
        for &l in &lat_starts {
            patches.push(cut_patch(frame, grid, a, l));
        }
    }
    Ok(patches)
}

/// Depth of the patch center on grid line `line_index`.
pub fn depth_cm_of_line(
    grid: &PatchGridSpec,
    geometry: &FrameGeometry,
    line_index: usize,
) -> Result<f64> {
    let starts = axial_line_starts(grid, geometry)?;
    let &s = starts
        .get(line_index)
        .ok_or(Error::IndexOutOfRange { index: line_index, len: starts.len() })?;
    Ok(patch_center_depth_cm(s, grid, geometry))
}

/// Builds a custom zone of `width_lines` consecutive lines whose middle
/// patch center lands as close as integer pixels allow to `center_cm`.
/// Lines step by the grid's axial stride and may sit above the default
/// skip or below the default lattice when a sweep requires it.
pub fn zone_for_center(
    center_cm: f64,
    width_lines: usize,
    grid: &PatchGridSpec,
    geometry: &FrameGeometry,
) -> Result<ZoneSpec> {
    if width_lines == 0 || width_lines % 2 == 0 {
        return Err(Error::InvalidZone(format!(
            "zone width must be odd and nonzero, got {width_lines}"
        )));
    }
    let ppc = geometry.pixels_per_cm();
    let mid = center_cm * ppc - grid.patch_axial_px as f64 / 2.0;
    let mid = mid.round() as i64;
    let half = (width_lines / 2) as i64;
    let stride = grid.axial_stride_px as i64;
    let mut starts = Vec::with_capacity(width_lines);
    for k in -half..=half {
        let s = mid + k * stride;
        if s < 0 {
            return Err(Error::GridOverflow(format!(
                "zone centered at {center_cm} cm starts before the frame (start {s})"
            )));
        }
        let s = s as usize;
        if s + grid.patch_axial_px > geometry.axial_pixels {
            return Err(Error::GridOverflow(format!(
                "zone centered at {center_cm} cm ends past the {}-px frame",
                geometry.axial_pixels
            )));
        }
        starts.push(s);
    }
    let center = patch_center_depth_cm(starts[width_lines / 2], grid, geometry);
    Ok(ZoneSpec { name: ZoneName::Custom, axial_starts_px: starts, center_depth_cm: center })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn default_frame() -> UltrasoundFrame {
        let g = FrameGeometry::default();
        let samples = Array2::from_shape_fn((g.axial_pixels, g.lateral_pixels), |(i, j)| {
            (i * 1000 + j) as f32
        });
        UltrasoundFrame::new(g, samples, 42, Some(1)).unwrap()
    }

    #[test]
    fn default_axial_starts() {
        let starts =
            axial_line_starts(&PatchGridSpec::default(), &FrameGeometry::default()).unwrap();
        assert_eq!(starts, vec![540, 640, 740, 840, 940, 1040, 1140, 1240, 1340]);
    }

    #[test]
    fn single_line_grid() {
        let grid = PatchGridSpec { n_axial_lines: 1, ..Default::default() };
        let starts = axial_line_starts(&grid, &FrameGeometry::default()).unwrap();
        assert_eq!(starts, vec![540]);
    }

    #[test]
    fn overflowing_grid_rejected() {
        let grid = PatchGridSpec { axial_skip_px: 1900, ..Default::default() };
        let err = axial_line_starts(&grid, &FrameGeometry::default()).unwrap_err();
        assert!(matches!(err, Error::GridOverflow(_)));
    }

    #[test]
    fn regular_grid_has_81_patches() {
        let frame = default_frame();
        let patches = extract_regular_grid(&frame, &PatchGridSpec::default()).unwrap();
        assert_eq!(patches.len(), 81);
        let total_px: usize = patches.iter().map(|p| p.values.len()).sum();
        assert_eq!(total_px, 81 * 200 * 26);
    }

    #[test]
    fn first_patch_is_verbatim_subgrid() {
        let frame = default_frame();
        let grid = PatchGridSpec::default();
        let patches = extract_regular_grid(&frame, &grid).unwrap();
        let expect = frame.samples.slice(ndarray::s![540..740, 0..26]);
        assert_eq!(patches[0].values, expect.to_owned());
        assert_eq!(patches[0].axial_start_px, 540);
        assert_eq!(patches[0].lateral_start_px, 0);
    }

    #[test]
    fn extraction_roundtrip_and_readonly() {
        let frame = default_frame();
        let before = frame.samples.clone();
        let grid = PatchGridSpec::default();
        for p in extract_regular_grid(&frame, &grid).unwrap() {
            let re = frame.samples.slice(ndarray::s![
                p.axial_start_px..p.axial_start_px + grid.patch_axial_px,
                p.lateral_start_px..p.lateral_start_px + grid.patch_lateral_px
            ]);
            assert_eq!(p.values, re.to_owned());
        }
        assert_eq!(frame.samples, before);
    }

    #[test]
    fn zones_partition_regular_grid() {
        let frame = default_frame();
        let grid = PatchGridSpec::default();
        let zones = default_zones(&grid, &frame.geometry).unwrap();
        let mut zone_coords = Vec::new();
        let mut zone_count = 0;
        for z in &zones {
            let ps = extract_zone(&frame, &grid, z).unwrap();
            assert_eq!(ps.len(), 27);
            zone_count += ps.len();
            zone_coords.extend(ps.iter().map(|p| (p.axial_start_px, p.lateral_start_px)));
        }
        let regular = extract_regular_grid(&frame, &grid).unwrap();
        assert_eq!(zone_count, regular.len());
        let mut reg_coords: Vec<_> =
            regular.iter().map(|p| (p.axial_start_px, p.lateral_start_px)).collect();
        zone_coords.sort_unstable();
        reg_coords.sort_unstable();
        assert_eq!(zone_coords, reg_coords);
    }

    #[test]
    fn pre_focal_patch_centers() {
        let frame = default_frame();
        let grid = PatchGridSpec::default();
        let zones = default_zones(&grid, &frame.geometry).unwrap();
        let ps = extract_zone(&frame, &grid, &zones[0]).unwrap();
        let mut centers: Vec<f64> = ps.iter().map(|p| p.center_depth_cm).collect();
        centers.sort_by(f64::total_cmp);
        centers.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let expect = [1.2308, 1.4231, 1.6154];
        assert_eq!(centers.len(), 3);
        for (c, e) in centers.iter().zip(expect) {
            assert!((c - e).abs() < 1e-4, "center {c} vs {e}");
        }
    }

    #[test]
    fn line_center_depths() {
        let grid = PatchGridSpec::default();
        let geo = FrameGeometry::default();
        assert!((depth_cm_of_line(&grid, &geo, 4).unwrap() - 2.0).abs() < 1e-12);
        assert!((depth_cm_of_line(&grid, &geo, 1).unwrap() - 1.4231).abs() < 1e-4);
        assert!((depth_cm_of_line(&grid, &geo, 7).unwrap() - 2.5769).abs() < 1e-4);
        assert!(matches!(
            depth_cm_of_line(&grid, &geo, 9),
            Err(Error::IndexOutOfRange { .. })
        ));
        // formula consistency across all lines
        let starts = axial_line_starts(&grid, &geo).unwrap();
        for (i, s) in starts.iter().enumerate() {
            let d = depth_cm_of_line(&grid, &geo, i).unwrap();
            assert!((d - (*s as f64 + 100.0) / 520.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zone_for_center_on_lattice() {
        let grid = PatchGridSpec::default();
        let geo = FrameGeometry::default();
        let z = zone_for_center(2.0, 3, &grid, &geo).unwrap();
        assert_eq!(z.axial_starts_px, vec![840, 940, 1040]);
        assert!((z.center_depth_cm - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zone_for_center_above_default_skip() {
        let grid = PatchGridSpec::default();
        let geo = FrameGeometry::default();
        let z = zone_for_center(0.6, 3, &grid, &geo).unwrap();
        assert_eq!(z.axial_starts_px, vec![112, 212, 312]);
    }

    #[test]
    fn zone_for_center_overflow() {
        let grid = PatchGridSpec::default();
        let geo = FrameGeometry::default();
        assert!(matches!(
            zone_for_center(3.8, 3, &grid, &geo),
            Err(Error::GridOverflow(_))
        ));
    }

    #[test]
    fn even_zone_width_rejected() {
        let grid = PatchGridSpec::default();
        let geo = FrameGeometry::default();
        assert!(matches!(zone_for_center(2.0, 2, &grid, &geo), Err(Error::InvalidZone(_))));
    }
}
