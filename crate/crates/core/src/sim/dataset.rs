//! Dataset directory: one binary file per sample plus `index.json`.
//!
//! Sample files use the framing of [`crate::codec`] with magic `GCSM`,
//! version 1. Body, all little-endian:
//!
//! ```text
//! seed            u64
//! grid            rows u32, cols u32, resolution f64, origin x f64, origin y f64
//! radar norm      rcs_min, rcs_max, snr_min, snr_max, doppler_interval_max (f64)
//! ego poses       u32 count, then count × (x, y, yaw) f64
//! ego velocities  u32 count, then count × (vx, vy) f64
//! yaw bin         u8 (255 = no agents)
//! lidar           u32 frames, per frame u64 count + count × (x, y, z) f64
//! radar           u32 frames, per frame u64 count + count ×
//!                 (x, y, radial_velocity, azimuth, rcs, snr, doppler_interval) f64
//! images          u32 frames, u32 cameras, u32 height, u32 width,
//!                 then frames × cameras raw RGB byte planes (row-major, interleaved)
//! labels          u32 horizons, then horizons × rows·cols class bytes
//! ```
//!
//! Sensor values are stored at full precision so that a round trip is
//! bit-exact; labels are stored as class indices since they are one-hot.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sample::{Sample, SensorFrameSet};
use super::sensors::{RadarReturn, RgbFrame};
use super::SimError;
use crate::codec::{self, io_err, CodecError, Decoder, Encoder};
use crate::featurize::RadarNorm;
use crate::geometry::{Point3, Pose2};
use crate::grid::{GridSequence, GridSpec, LabelGrid, SemClass, SemanticGrid, HORIZONS};

const SAMPLE_MAGIC: [u8; 4] = *b"GCSM";
pub const SAMPLE_VERSION: u32 = 1;
const INDEX_FILE: &str = "index.json";

/// Human-readable summary written next to the sample files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format_version: u32,
    pub grid: GridSpec,
    pub radar_norm: RadarNorm,
    pub samples: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub seed: u64,
    pub yaw_bin: Option<u8>,
}

pub fn encode_sample(sample: &Sample, norm: &RadarNorm) -> Vec<u8> {
    let mut e = Encoder::new();
    e.u64(sample.seed);
    let spec = sample.labels.spec();
    e.u32(spec.rows_x as u32);
    e.u32(spec.cols_y as u32);
    e.f64(spec.resolution);
    e.f64(spec.origin_offset.0);
    e.f64(spec.origin_offset.1);
    for v in [norm.rcs_min, norm.rcs_max, norm.snr_min, norm.snr_max, norm.doppler_interval_max] {
        e.f64(v);
    }
    e.u32(sample.ego_poses.len() as u32);
    for p in &sample.ego_poses {
        e.f64(p.x);
        e.f64(p.y);
        e.f64(p.yaw());
    }
    e.u32(sample.ego_velocities.len() as u32);
    for v in &sample.ego_velocities {
        e.f64(v.0);
        e.f64(v.1);
    }
    e.u8(sample.yaw_bin.unwrap_or(u8::MAX));

    let inputs = &sample.inputs;
    e.u32(inputs.lidar.len() as u32);
    for frame in &inputs.lidar {
        e.u64(frame.len() as u64);
        for p in frame {
            e.f64(p.x);
            e.f64(p.y);
            e.f64(p.z);
        }
    }
    e.u32(inputs.radar.len() as u32);
    for frame in &inputs.radar {
        e.u64(frame.len() as u64);
        for r in frame {
            for v in [r.position.0, r.position.1, r.radial_velocity, r.azimuth, r.rcs, r.snr, r.doppler_interval] {
                e.f64(v);
            }
        }
    }
    let cameras = inputs.images.first().map_or(0, Vec::len);
    let (h, w) = inputs.images.first().and_then(|f| f.first()).map_or((0, 0), |i| (i.height, i.width));
    e.u32(inputs.images.len() as u32);
    e.u32(cameras as u32);
    e.u32(h as u32);
    e.u32(w as u32);
    for frame in &inputs.images {
        assert_eq!(frame.len(), cameras, "ragged camera frames");
        for img in frame {
            assert_eq!((img.height, img.width), (h, w), "ragged image sizes");
            e.len_prefixed(&img.data);
        }
    }
    let labels = sample.labels.labels();
    e.u32(labels.len() as u32);
    for l in &labels {
        let bytes: Vec<u8> = l.labels.iter().map(|c| c.index() as u8).collect();
        e.len_prefixed(&bytes);
    }
    codec::seal(SAMPLE_MAGIC, SAMPLE_VERSION, &e.finish())
}

pub fn decode_sample(bytes: &[u8]) -> Result<(Sample, RadarNorm), CodecError> {
    let body = codec::unseal(SAMPLE_MAGIC, SAMPLE_VERSION, bytes)?;
    let mut d = Decoder::new(body);
    let seed = d.u64()?;
    let rows = d.u32()? as usize;
    let cols = d.u32()? as usize;
    let spec = GridSpec {
        rows_x: rows,
        cols_y: cols,
        resolution: d.f64()?,
        origin_offset: (d.f64()?, d.f64()?),
    };
    spec.validate().map_err(|e| CodecError::Format(e.to_string()))?;
    let norm = RadarNorm {
        rcs_min: d.f64()?,
        rcs_max: d.f64()?,
        snr_min: d.f64()?,
        snr_max: d.f64()?,
        doppler_interval_max: d.f64()?,
    };
    let n = d.u32()?;
    let ego_poses = (0..n).map(|_| Ok(Pose2::new(d.f64()?, d.f64()?, d.f64()?))).collect::<Result<Vec<_>, CodecError>>()?;
    let n = d.u32()?;
    let ego_velocities = (0..n).map(|_| Ok((d.f64()?, d.f64()?))).collect::<Result<Vec<_>, CodecError>>()?;
    let yaw_bin = match d.u8()? {
        u8::MAX => None,
        b => Some(b),
    };

    let mut inputs = SensorFrameSet::default();
    for _ in 0..d.u32()? {
        let count = d.len()?;
        let mut frame = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            frame.push(Point3::new(d.f64()?, d.f64()?, d.f64()?));
        }
        inputs.lidar.push(frame);
    }
    for _ in 0..d.u32()? {
        let count = d.len()?;
        let mut frame = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            frame.push(RadarReturn {
                position: (d.f64()?, d.f64()?),
                radial_velocity: d.f64()?,
                azimuth: d.f64()?,
                rcs: d.f64()?,
                snr: d.f64()?,
                doppler_interval: d.f64()?,
            });
        }
        inputs.radar.push(frame);
    }
    let frames = d.u32()?;
    let cameras = d.u32()?;
    let (height, width) = (d.u32()? as usize, d.u32()? as usize);
    for _ in 0..frames {
        let mut frame = Vec::with_capacity(cameras as usize);
        for _ in 0..cameras {
            let data = d.len_prefixed()?.to_vec();
            if data.len() != height * width * 3 {
                return Err(CodecError::Format(format!("image has {} bytes, expected {}", data.len(), height * width * 3)));
            }
            frame.push(RgbFrame { height, width, data });
        }
        inputs.images.push(frame);
    }
    let horizons = d.u32()? as usize;
    if horizons != HORIZONS.len() {
        return Err(CodecError::Format(format!("expected {} label grids, found {horizons}", HORIZONS.len())));
    }
    let mut grids = Vec::with_capacity(horizons);
    for &h in &HORIZONS {
        let raw = d.len_prefixed()?;
        if raw.len() != spec.num_cells() {
            return Err(CodecError::Format(format!("label grid has {} cells, expected {}", raw.len(), spec.num_cells())));
        }
        let labels = raw
            .iter()
            .map(|&b| SemClass::from_index(b as usize).ok_or_else(|| CodecError::Format(format!("bad class byte {b}"))))
            .collect::<Result<Vec<_>, _>>()?;
        grids.push(SemanticGrid::one_hot(spec, h, &LabelGrid { rows, cols, labels }));
    }
    d.expect_end()?;
    let labels = GridSequence::new(grids).map_err(|e| CodecError::Format(e.to_string()))?;
    let sample = Sample {
        seed,
        inputs,
        labels,
        ego_poses,
        ego_velocities,
        yaw_bin,
    };
    Ok((sample, norm))
}

pub fn write_sample(sample: &Sample, norm: &RadarNorm, path: &Path) -> Result<(), SimError> {
    Ok(codec::write_file(path, &encode_sample(sample, norm))?)
}

pub fn read_sample(path: &Path) -> Result<(Sample, RadarNorm), SimError> {
    Ok(decode_sample(&codec::read_file(path)?)?)
}

fn sample_file_name(i: usize) -> String {
    format!("sample_{i:06}.bin")
}

/// Writes every sample and the index into `dir` (created if missing).
pub fn write_dataset(samples: &[Sample], norm: &RadarNorm, dir: &Path) -> Result<DatasetIndex, SimError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir)).map_err(SimError::from)?;
    let grid = samples.first().map_or_else(GridSpec::default, |s| s.labels.spec());
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if s.labels.spec() != grid {
            return Err(SimError::InvalidConfig("all samples in a dataset must share one grid".into()));
        }
        let file = sample_file_name(i);
        write_sample(s, norm, &dir.join(&file))?;
        entries.push(IndexEntry {
            file,
            seed: s.seed,
            yaw_bin: s.yaw_bin,
        });
    }
    let index = DatasetIndex {
        format_version: SAMPLE_VERSION,
        grid,
        radar_norm: *norm,
        samples: entries,
    };
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    let path = dir.join(INDEX_FILE);
    std::fs::write(&path, json).map_err(io_err(&path)).map_err(SimError::from)?;
    Ok(index)
}

pub fn read_index(dir: &Path) -> Result<Option<DatasetIndex>, SimError> {
    let path = dir.join(INDEX_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(io_err(&path)).map_err(SimError::from)?;
    let index: DatasetIndex = serde_json::from_str(&text).map_err(|e| CodecError::Format(format!("{}: {e}", path.display())))?;
    if index.format_version != SAMPLE_VERSION {
        return Err(CodecError::VersionMismatch {
            found: index.format_version,
            expected: SAMPLE_VERSION,
        }
        .into());
    }
    Ok(Some(index))
}

/// Reads all samples listed in the index. A directory without an index (or
/// an empty one) yields no samples.
pub fn read_dataset(dir: &Path) -> Result<(Vec<Sample>, RadarNorm), SimError> {
    let Some(index) = read_index(dir)? else {
        return Ok((Vec::new(), RadarNorm::default()));
    };
    let mut samples = Vec::with_capacity(index.samples.len());
    for entry in &index.samples {
        samples.push(read_sample(&dir.join(&entry.file))?.0);
    }
    Ok((samples, index.radar_norm))
}

pub fn sample_paths(dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    Ok(read_index(dir)?
        .map(|i| i.samples.iter().map(|e| dir.join(&e.file)).collect())
        .unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_samples, CameraRig, SceneConfig, SensorConfig};

    fn samples() -> Vec<Sample> {
        let sensors = SensorConfig {
            cameras: Some(CameraRig {
                count: 2,
                height_px: 8,
                width_px: 12,
                ..CameraRig::default()
            }),
            ..SensorConfig::default()
        };
        generate_samples(&SceneConfig::default(), &sensors, &GridSpec::centered(16, 16, 0.5), 100, 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = samples();
        let norm = RadarNorm {
            snr_max: 123.5,
            ..RadarNorm::default()
        };
        write_dataset(&s, &norm, dir.path()).unwrap();
        let (back, back_norm) = read_dataset(dir.path()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back_norm, norm);
        for (a, b) in s.iter().zip(&back) {
            assert_eq!(encode_sample(a, &norm), encode_sample(b, &norm));
        }
        let index: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("index.json")).unwrap()).unwrap();
        assert_eq!(index["samples"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn corruption_errors_are_distinct() {
        let bytes = encode_sample(&samples()[0], &RadarNorm::default());
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x01;
        assert!(matches!(decode_sample(&flipped), Err(CodecError::Checksum { .. })));
        assert!(matches!(decode_sample(&bytes[..bytes.len() - 10]), Err(CodecError::Truncated { .. })));
        let mut versioned = bytes.clone();
        versioned[4] = 9;
        assert!(matches!(decode_sample(&versioned), Err(CodecError::VersionMismatch { found: 9, .. })));
    }

    #[test]
    fn empty_directory_reads_as_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_dataset(dir.path()).unwrap().0.is_empty());
        write_dataset(&[], &RadarNorm::default(), dir.path()).unwrap();
        assert!(read_dataset(dir.path()).unwrap().0.is_empty());
    }
}
