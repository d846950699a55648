//! Dataset acquisition, the `ZTRF` frame container, and checkpoint files.
//!
//! Container layout (all little-endian):
//!
//! ```text
//! magic        4 bytes  "ZTRF"
//! version      u16      currently 1
//! sample_type  u8       0 = i16, 1 = f32
//! reserved     u8
//! frame_count  u32
//! axial_px     u32
//! lateral_px   u32
//! depth_cm     f64
//! sampling_hz  f64
//! focus_cm     f64
//! label_count  u16      distinct class labels
//! labels       u16 * label_count
//! then per frame:
//!   frame_id   u64
//!   label      i16      -1 = unlabeled
//!   samples    axial*lateral fixed-width values, axial-major
//! ```
//!
//! Checkpoints (`ZTCK`) hold a JSON metadata blob plus named f32 tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayD};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{FrameGeometry, UltrasoundFrame};

const FRAME_MAGIC: [u8; 4] = *b"ZTRF";
const CHECKPOINT_MAGIC: [u8; 4] = *b"ZTCK";
const CONTAINER_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleType {
    I16,
    F32,
}

impl SampleType {
    fn tag(self) -> u8 {
        match self {
            SampleType::I16 => 0,
            SampleType::F32 => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(SampleType::I16),
            1 => Ok(SampleType::F32),
            other => Err(Error::Parse(format!("unknown sample type tag {other}"))),
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            SampleType::I16 => 2,
            SampleType::F32 => 4,
        }
    }
}

/// Writes frames to a `ZTRF` container. All frames must share a geometry.
pub fn write_container(frames: &[UltrasoundFrame], path: &Path, sample_type: SampleType) -> Result<()> {
    if frames.is_empty() {
        return write_header_only(path, sample_type);
    }
    let geo = &frames[0].geometry;
    for f in frames {
        if f.geometry != *geo {
            return Err(Error::DimensionMismatch(
                "all frames in a container must share one geometry".into(),
            ));
        }
    }
    let mut labels: Vec<u16> = frames
        .iter()
        .filter_map(|f| f.label.map(|l| l as u16))
        .collect();
    labels.sort_unstable();
    labels.dedup();

    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&FRAME_MAGIC)?;
    w.write_u16::<LittleEndian>(CONTAINER_VERSION)?;
    w.write_u8(sample_type.tag())?;
    w.write_u8(0)?;
    w.write_u32::<LittleEndian>(frames.len() as u32)?;
    w.write_u32::<LittleEndian>(geo.axial_pixels as u32)?;
    w.write_u32::<LittleEndian>(geo.lateral_pixels as u32)?;
    w.write_f64::<LittleEndian>(geo.depth_cm)?;
    w.write_f64::<LittleEndian>(geo.sampling_rate_hz)?;
    w.write_f64::<LittleEndian>(geo.focus_depth_cm)?;
    w.write_u16::<LittleEndian>(labels.len() as u16)?;
    for l in &labels {
        w.write_u16::<LittleEndian>(*l)?;
    }
    for f in frames {
        w.write_u64::<LittleEndian>(f.frame_id)?;
        w.write_i16::<LittleEndian>(f.label.map(|l| l as i16).unwrap_or(-1))?;
        match sample_type {
            SampleType::F32 => {
                for &v in f.samples.iter() {
                    w.write_f32::<LittleEndian>(v)?;
                }
            }
            SampleType::I16 => {
                for &v in f.samples.iter() {
                    w.write_i16::<LittleEndian>(v.clamp(i16::MIN as f32, i16::MAX as f32) as i16)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_header_only(path: &Path, sample_type: SampleType) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&FRAME_MAGIC)?;
    w.write_u16::<LittleEndian>(CONTAINER_VERSION)?;
    w.write_u8(sample_type.tag())?;
    w.write_u8(0)?;
    w.write_u32::<LittleEndian>(0)?;
    w.write_u32::<LittleEndian>(0)?;
    w.write_u32::<LittleEndian>(0)?;
    w.write_f64::<LittleEndian>(1.0)?;
    w.write_f64::<LittleEndian>(0.0)?;
    w.write_f64::<LittleEndian>(0.0)?;
    w.write_u16::<LittleEndian>(0)?;
    w.flush()?;
    Ok(())
}

/// Streaming container reader: header up front, one frame per call.
pub struct ContainerReader {
    reader: BufReader<File>,
    pub sample_type: SampleType,
    pub frame_count: usize,
    pub geometry: FrameGeometry,
    pub label_table: Vec<u16>,
    read_so_far: usize,
    empty: bool,
}

impl ContainerReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::TruncatedPayload("file shorter than header".into()))?;
        if magic != FRAME_MAGIC {
            return Err(Error::BadMagic { expected: FRAME_MAGIC, found: magic });
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != CONTAINER_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let sample_type = SampleType::from_tag(r.read_u8()?)?;
        let _reserved = r.read_u8()?;
        let frame_count = r.read_u32::<LittleEndian>()? as usize;
        let axial = r.read_u32::<LittleEndian>()? as usize;
        let lateral = r.read_u32::<LittleEndian>()? as usize;
        let depth_cm = r.read_f64::<LittleEndian>()?;
        let sampling_rate_hz = r.read_f64::<LittleEndian>()?;
        let focus_depth_cm = r.read_f64::<LittleEndian>()?;
        let label_count = r.read_u16::<LittleEndian>()? as usize;
        let mut label_table = Vec::with_capacity(label_count);
        for _ in 0..label_count {
            label_table.push(r.read_u16::<LittleEndian>()?);
        }
        let empty = frame_count == 0;
        Ok(Self {
            reader: r,
            sample_type,
            frame_count,
            geometry: FrameGeometry {
                axial_pixels: axial,
                lateral_pixels: lateral,
                depth_cm,
                sampling_rate_hz,
                focus_depth_cm,
            },
            label_table,
            read_so_far: 0,
            empty,
        })
    }

    /// Reads the next frame; `None` once `frame_count` frames are out.
    pub fn next_frame(&mut self) -> Result<Option<UltrasoundFrame>> {
        if self.empty || self.read_so_far >= self.frame_count {
            return Ok(None);
        }
        let truncated = |what: &str| {
            Error::TruncatedPayload(format!(
                "{what} of frame {} of {}",
                self.read_so_far + 1,
                self.frame_count
            ))
        };
        let frame_id = self
            .reader
            .read_u64::<LittleEndian>()
            .map_err(|_| truncated("id"))?;
        let label = self
            .reader
            .read_i16::<LittleEndian>()
            .map_err(|_| truncated("label"))?;
        let n = self.geometry.axial_pixels * self.geometry.lateral_pixels;
        let mut values = Vec::with_capacity(n);
        match self.sample_type {
            SampleType::F32 => {
                for _ in 0..n {
                    values.push(
                        self.reader
                            .read_f32::<LittleEndian>()
                            .map_err(|_| truncated("samples"))?,
                    );
                }
            }
            SampleType::I16 => {
                for _ in 0..n {
                    values.push(
                        self.reader
                            .read_i16::<LittleEndian>()
                            .map_err(|_| truncated("samples"))? as f32,
                    );
                }
            }
        }
        self.read_so_far += 1;
        let samples = Array2::from_shape_vec(
            (self.geometry.axial_pixels, self.geometry.lateral_pixels),
            values,
        )
        .expect("sample count checked");
        let frame = UltrasoundFrame::new(
            self.geometry.clone(),
            samples,
            frame_id,
            if label < 0 { None } else { Some(label as usize) },
        )?;
        Ok(Some(frame))
    }
}

/// Reads a whole container into memory.
pub fn read_container(path: &Path) -> Result<Vec<UltrasoundFrame>> {
    let mut reader = ContainerReader::open(path)?;
    let mut frames = Vec::with_capacity(reader.frame_count);
    while let Some(f) = reader.next_frame()? {
        frames.push(f);
    }
    Ok(frames)
}

// ---------------------------------------------------------------------
// checkpoints

/// Saves named f32 tensors plus a JSON metadata blob.
pub fn write_checkpoint(
    path: &Path,
    metadata: &serde_json::Value,
    tensors: &[(String, &ArrayD<f32>)],
) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_u16::<LittleEndian>(CONTAINER_VERSION)?;
    let meta = serde_json::to_vec(metadata).map_err(|e| Error::Parse(e.to_string()))?;
    w.write_u32::<LittleEndian>(meta.len() as u32)?;
    w.write_all(&meta)?;
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        w.write_u16::<LittleEndian>(name_bytes.len() as u16)?;
        w.write_all(name_bytes)?;
        w.write_u8(tensor.ndim() as u8)?;
        for &d in tensor.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in tensor.iter() {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint's metadata and tensors.
pub fn read_checkpoint(path: &Path) -> Result<(serde_json::Value, Vec<(String, ArrayD<f32>)>)> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::TruncatedPayload("checkpoint shorter than header".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: CHECKPOINT_MAGIC, found: magic });
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != CONTAINER_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let meta_len = r.read_u32::<LittleEndian>()? as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)
        .map_err(|_| Error::TruncatedPayload("checkpoint metadata".into()))?;
    let metadata: serde_json::Value =
        serde_json::from_slice(&meta).map_err(|e| Error::Parse(e.to_string()))?;
    let n_tensors = r.read_u32::<LittleEndian>()? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = r.read_u16::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|_| Error::TruncatedPayload("tensor name".into()))?;
        let name = String::from_utf8(name).map_err(|e| Error::Parse(e.to_string()))?;
        let ndim = r.read_u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(
                r.read_f32::<LittleEndian>()
                    .map_err(|_| Error::TruncatedPayload(format!("tensor {name}")))?,
            );
        }
        tensors.push((
            name,
            ArrayD::from_shape_vec(ndarray::IxDyn(&shape), data).expect("length checked"),
        ));
    }
    Ok((metadata, tensors))
}

// ---------------------------------------------------------------------
// dataset acquisition

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub size: u64,
    pub sha256: String,
}

/// Record of what was fetched, from where, with content digests.
/// Append-only: a re-fetch may add files but never alters a digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source_url: String,
    pub files: Vec<ManifestFile>,
    pub cache_dir: PathBuf,
    pub retrieved_at: String,
}

/// Hex SHA-256 digest of a file.
pub fn sha256_of_file(path: &Path) -> Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher)?;
    Ok(format!("{:x}", hasher.finalize()))
}

fn manifest_path(cache_dir: &Path) -> PathBuf {
    cache_dir.join("manifest.json")
}

fn load_manifest(cache_dir: &Path, url: &str) -> Result<DatasetManifest> {
    let path = manifest_path(cache_dir);
    if path.exists() {
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
    } else {
        Ok(DatasetManifest {
            source_url: url.to_string(),
            files: Vec::new(),
            cache_dir: cache_dir.to_path_buf(),
            retrieved_at: String::new(),
        })
    }
}

fn save_manifest(manifest: &DatasetManifest) -> Result<()> {
    let text =
        serde_json::to_string_pretty(manifest).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(manifest_path(&manifest.cache_dir), text)?;
    Ok(())
}

fn filename_for_url(url: &str) -> String {
    let tail = url.trim_end_matches('/').rsplit('/').next().unwrap_or("download");
    let clean: String = tail
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if clean.is_empty() {
        "download".into()
    } else {
        clean
    }
}

const FETCH_RETRIES: u32 = 3;

/// Downloads `url` into `cache_dir`, verifying against the manifest.
///
/// Idempotent: if the cached file's digest matches the manifest entry,
/// nothing is transferred. A corrupted cached file is reported as
/// `DigestMismatch` and re-downloaded; failed transfers retry.
pub fn fetch_dataset(url: &str, cache_dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(cache_dir)
        .map_err(|e| Error::StorageError(format!("cannot create {}: {e}", cache_dir.display())))?;
    let mut manifest = load_manifest(cache_dir, url)?;
    let name = filename_for_url(url);
    let target = cache_dir.join(&name);

    if let Some(entry) = manifest.files.iter().find(|f| f.name == name) {
        if target.exists() {
            let digest = sha256_of_file(&target)?;
            if digest == entry.sha256 {
                return Ok(manifest); // warm cache, zero bytes transferred
            }
            // corrupted cache: surface the mismatch, then re-download
            let mismatch = Error::DigestMismatch {
                file: name.clone(),
                expected: entry.sha256.clone(),
                computed: digest,
            };
            eprintln!("warning: {mismatch}; re-downloading");
        }
    }

    let mut last_err = String::new();
    let mut body: Option<Vec<u8>> = None;
    for attempt in 1..=FETCH_RETRIES {
        match try_download(url) {
            Ok(bytes) => {
                body = Some(bytes);
                break;
            }
            Err(e) => {
                last_err = format!("attempt {attempt}: {e}");
            }
        }
    }
    let body = body.ok_or(Error::NetworkError { retries: FETCH_RETRIES, detail: last_err })?;

    // write via temp file so partial downloads never land at the target
    let tmp = cache_dir.join(format!("{name}.part"));
    std::fs::write(&tmp, &body).map_err(|e| Error::StorageError(e.to_string()))?;
    std::fs::rename(&tmp, &target).map_err(|e| Error::StorageError(e.to_string()))?;

    let digest = sha256_of_file(&target)?;
    if let Some(entry) = manifest.files.iter().find(|f| f.name == name) {
        if entry.sha256 != digest {
            return Err(Error::DigestMismatch {
                file: name,
                expected: entry.sha256.clone(),
                computed: digest,
            });
        }
    } else {
        manifest.files.push(ManifestFile { name, size: body.len() as u64, sha256: digest });
    }
    manifest.retrieved_at = now_rfc3339();
    manifest.source_url = url.to_string();
    save_manifest(&manifest)?;
    Ok(manifest)
}

fn try_download(url: &str) -> std::result::Result<Vec<u8>, String> {
    let client = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(300))
        .build()
        .map_err(|e| e.to_string())?;
    let resp = client.get(url).send().map_err(|e| e.to_string())?;
    if !resp.status().is_success() {
        return Err(format!("HTTP {}", resp.status()));
    }
    resp.bytes().map(|b| b.to_vec()).map_err(|e| e.to_string())
}

fn now_rfc3339() -> String {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap_or_default();
    format!("unix:{}", now.as_secs())
}

// ---------------------------------------------------------------------
// raw-file import

/// Describes a third-party raw frame dump so it can be converted into the
/// container format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutDescriptor {
    pub axial_pixels: usize,
    pub lateral_pixels: usize,
    pub sample_type: SampleType,
    pub depth_cm: f64,
    pub sampling_rate_hz: f64,
    pub focus_depth_cm: f64,
    /// True when samples are stored axial-major (row = axial line).
    pub axial_major: bool,
}

/// Converts raw fixed-width frame dumps into frames, one file per class
/// label. Each file may hold any whole number of frames.
pub fn import_adapter(
    raw_files: &[(PathBuf, usize)],
    layout: &LayoutDescriptor,
) -> Result<Vec<UltrasoundFrame>> {
    let geometry = FrameGeometry {
        axial_pixels: layout.axial_pixels,
        lateral_pixels: layout.lateral_pixels,
        depth_cm: layout.depth_cm,
        sampling_rate_hz: layout.sampling_rate_hz,
        focus_depth_cm: layout.focus_depth_cm,
    };
    geometry.validate()?;
    let frame_bytes =
        layout.axial_pixels * layout.lateral_pixels * layout.sample_type.byte_width();
    let mut frames = Vec::new();
    let mut frame_id = 0u64;
    for (path, label) in raw_files {
        let data = std::fs::read(path)?;
        if data.is_empty() || data.len() % frame_bytes != 0 {
            return Err(Error::LayoutMismatch {
                file: path.display().to_string(),
                offset: (data.len() - data.len() % frame_bytes) as u64,
                detail: format!(
                    "file is {} bytes, not a whole multiple of the {frame_bytes}-byte frame",
                    data.len()
                ),
            });
        }
        for chunk in data.chunks_exact(frame_bytes) {
            let mut values = Vec::with_capacity(layout.axial_pixels * layout.lateral_pixels);
            match layout.sample_type {
                SampleType::I16 => {
                    for pair in chunk.chunks_exact(2) {
                        values.push(i16::from_le_bytes([pair[0], pair[1]]) as f32);
                    }
                }
                SampleType::F32 => {
                    for quad in chunk.chunks_exact(4) {
                        values.push(f32::from_le_bytes([quad[0], quad[1], quad[2], quad[3]]));
                    }
                }
            }
            let samples = if layout.axial_major {
                Array2::from_shape_vec((layout.axial_pixels, layout.lateral_pixels), values)
            } else {
                Array2::from_shape_vec((layout.lateral_pixels, layout.axial_pixels), values)
                    .map(|a| a.reversed_axes().to_owned())
            }
            .expect("length checked");
            frames.push(UltrasoundFrame::new(
                geometry.clone(),
                samples,
                frame_id,
                Some(*label),
            )?);
            frame_id += 1;
        }
    }
    Ok(frames)
}
