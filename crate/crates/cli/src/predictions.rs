//! Prediction files: the per-sample grid sequences one predictor (a
//! modality network, a fusion rule, or the labels themselves) produced for
//! a dataset.
//!
//! Framed with the shared codec (magic `GCPR`, version 1); the body is a
//! JSON header `{"series": .., "grid": ..}` followed by a sample count and
//! one length-prefixed f32 array per sample in `[horizon][class][row][col]`
//! order.

use std::path::Path;

use gridcast::codec::{read_file, seal, unseal, write_file, CodecError, Decoder, Encoder};
use gridcast::grid::{GridSequence, GridSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

const MAGIC: [u8; 4] = *b"GCPR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// Who produced them: `lidar`, `average`, `labels`, ...
    pub series: String,
    pub grid: GridSpec,
    pub sequences: Vec<GridSequence>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    series: String,
    grid: GridSpec,
}

impl Predictions {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_string(&Header {
            series: self.series.clone(),
            grid: self.grid,
        })
        .expect("header serializes");
        let mut enc = Encoder::new();
        enc.str(&header);
        enc.u64(self.sequences.len() as u64);
        for s in &self.sequences {
            enc.f32s(&s.to_planar());
        }
        seal(MAGIC, VERSION, &enc.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(unseal(MAGIC, VERSION, bytes)?);
        let header: Header = serde_json::from_str(&dec.str()?).map_err(|e| CodecError::Format(e.to_string()))?;
        let n = dec.len()?;
        let mut sequences = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let data = dec.f32s()?;
            sequences.push(GridSequence::from_planar(header.grid, &data).map_err(|e| CodecError::Format(e.to_string()))?);
        }
        dec.expect_end()?;
        Ok(Self {
            series: header.series,
            grid: header.grid,
            sequences,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        Ok(write_file(path, &self.to_bytes())?)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        if !path.exists() {
            return Err(CliError::Missing(format!("prediction file {} does not exist", path.display())));
        }
        Ok(Self::from_bytes(&read_file(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridcast::grid::{SemanticGrid, HORIZONS};

    #[test]
    fn round_trip_and_corruption() {
        let grid = GridSpec::centered(2, 4, 1.0);
        let seq = GridSequence::new(HORIZONS.iter().map(|&t| SemanticGrid::uniform(grid, t)).collect()).unwrap();
        let p = Predictions {
            series: "lidar".into(),
            grid,
            sequences: vec![seq.clone(), seq],
        };
        let bytes = p.to_bytes();
        assert_eq!(Predictions::from_bytes(&bytes).unwrap(), p);
        let mut bad = bytes.clone();
        bad[30] ^= 1;
        assert!(matches!(Predictions::from_bytes(&bad), Err(CodecError::Checksum { .. })));
    }
}
