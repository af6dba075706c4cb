//! The run configuration: one TOML file plus `--set key=value` overrides.
//!
//! Every section is optional; missing keys take the defaults below. The
//! resolved configuration (defaults included) is written next to each
//! command's output as `run_config.toml`.

use std::path::Path;

use gridcast::featurize::{LIDAR_INPUT_CHANNELS, RADAR_INPUT_CHANNELS};
use gridcast::fusion::PriorityMap;
use gridcast::grid::GridSpec;
use gridcast::model::{FeatureConfig, GridNetConfig, Modality, NetConfig, TrainConfig, VisionNetConfig};
use gridcast::sim::{CameraRig, SceneConfig, SensorConfig, NUM_PAST};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const ECHO_FILE: &str = "run_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub rows_x: usize,
    pub cols_y: usize,
    /// Meters per cell.
    pub resolution: f64,
    /// Ego origin measured from the grid corner (x, y) in meters; the grid
    /// is centered on the ego when absent.
    pub origin_offset: Option<(f64, f64)>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            rows_x: 32,
            cols_y: 32,
            resolution: 0.5,
            origin_offset: None,
        }
    }
}

impl GridConfig {
    pub fn spec(&self) -> GridSpec {
        let mut spec = GridSpec::centered(self.rows_x, self.cols_y, self.resolution);
        if let Some(o) = self.origin_offset {
            spec.origin_offset = o;
        }
        spec
    }
}

/// Sample counts and seeds for `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { samples: 64, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetsConfig {
    pub lidar: GridNetConfig,
    pub radar: GridNetConfig,
    pub vision: VisionNetConfig,
}

impl Default for NetsConfig {
    fn default() -> Self {
        let grid = GridNetConfig {
            base_width: 8,
            ..GridNetConfig::default()
        };
        Self {
            lidar: grid.clone(),
            radar: grid,
            vision: VisionNetConfig {
                base_width: 8,
                blocks: 3,
                pools: 2,
                ..VisionNetConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub priority: PriorityMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub modalities: Vec<Modality>,
    pub grid: GridConfig,
    pub data: DataConfig,
    pub scene: SceneConfig,
    pub sensors: SensorConfig,
    pub features: FeatureConfig,
    pub nets: NetsConfig,
    pub train: TrainConfig,
    pub fusion: FusionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            modalities: Modality::ALL.to_vec(),
            grid: GridConfig::default(),
            data: DataConfig::default(),
            scene: SceneConfig {
                vehicles: (1, 2),
                vrus: (0, 1),
                vehicle_speed: gridcast::sim::Range::new(2.0, 5.0),
                spawn_half_extent: (5.0, 5.0),
                ego_speed: gridcast::sim::Range::new(0.0, 2.0),
                ..SceneConfig::default()
            },
            sensors: SensorConfig {
                cameras: Some(CameraRig {
                    height_px: 24,
                    width_px: 40,
                    ..CameraRig::default()
                }),
                ..SensorConfig::default()
            },
            features: FeatureConfig::default(),
            nets: NetsConfig::default(),
            train: TrainConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from the defaults) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.modalities.is_empty() {
            return Err(CliError::Config("modalities must not be empty".into()));
        }
        self.grid.spec().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.scene.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.fusion.priority.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.loss_weights.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.modalities.contains(&Modality::Vision) && self.sensors.cameras.is_none() {
            return Err(CliError::Config("the vision modality needs [sensors.cameras]".into()));
        }
        let spec = self.grid.spec();
        for &m in &self.modalities {
            let net = self.net_config(m);
            let err = |e: gridcast::model::ModelError| CliError::Config(format!("{m} network: {e}"));
            if let NetConfig::Grid(c) = &net {
                c.check_dims(spec.rows_x, spec.cols_y).map_err(err)?;
            }
            gridcast::model::Network::<f32>::new(&net).map_err(err)?;
        }
        Ok(())
    }

    /// Network config with the input and output sizes filled in from the
    /// grid and sensor sections.
    pub fn net_config(&self, modality: Modality) -> NetConfig {
        let spec = self.grid.spec();
        match modality {
            Modality::Lidar => NetConfig::Grid(GridNetConfig {
                in_channels: LIDAR_INPUT_CHANNELS,
                ..self.nets.lidar.clone()
            }),
            Modality::Radar => NetConfig::Grid(GridNetConfig {
                in_channels: RADAR_INPUT_CHANNELS,
                ..self.nets.radar.clone()
            }),
            Modality::Vision => {
                let rig = self.sensors.cameras.clone().unwrap_or_default();
                NetConfig::Vision(VisionNetConfig {
                    in_channels: 3 * NUM_PAST,
                    cameras: rig.count,
                    image_height: rig.height_px,
                    image_width: rig.width_px,
                    grid_rows: spec.rows_x,
                    grid_cols: spec.cols_y,
                    ..self.nets.vision.clone()
                })
            }
        }
    }

    /// Sensors actually needed by the configured modalities (camera
    /// rendering is by far the slowest part of simulation).
    pub fn sensors_for_run(&self) -> SensorConfig {
        let mut s = self.sensors.clone();
        if !self.modalities.contains(&Modality::Vision) {
            s.cameras = None;
        }
        s
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the resolved configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(ECHO_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))
    }
}

/// Applies one `dotted.key=value` override. The value is parsed as a TOML
/// value when possible and taken as a bare string otherwise.
fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {item:?} is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {p:?} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
