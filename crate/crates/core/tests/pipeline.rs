//! Simulation through training, checkpointing, fusion and metrics, using
//! only the public API.

use gridcast::featurize::{RadarNorm, LIDAR_INPUT_CHANNELS, RADAR_INPUT_CHANNELS};
use gridcast::fusion::{fuse_average, fuse_priority, PriorityMap};
use gridcast::grid::{GridSequence, GridSpec, LabelGrid, SemClass, NUM_HORIZONS};
use gridcast::metrics::{accumulate, Metric};
use gridcast::model::{train, FeatureConfig, GridNetConfig, Modality, Model, NetConfig, TrainConfig, TrainingSet, VisionNetConfig};
use gridcast::sim::{generate_samples, read_dataset, write_dataset, CameraRig, Sample, SceneConfig, SensorConfig, NUM_PAST};

fn spec() -> GridSpec {
    GridSpec::centered(16, 16, 1.0)
}

fn rig() -> CameraRig {
    CameraRig {
        height_px: 8,
        width_px: 16,
        ..CameraRig::default()
    }
}

fn samples(n: usize) -> Vec<Sample> {
    let sensors = SensorConfig {
        cameras: Some(rig()),
        ..SensorConfig::default()
    };
    generate_samples(&SceneConfig::default(), &sensors, &spec(), 77, n).unwrap()
}

fn net_config(m: Modality) -> NetConfig {
    let grid = |in_channels| GridNetConfig {
        in_channels,
        base_width: 2,
        pool_last: false,
        seed: 4,
    };
    match m {
        Modality::Lidar => NetConfig::Grid(grid(LIDAR_INPUT_CHANNELS)),
        Modality::Radar => NetConfig::Grid(grid(RADAR_INPUT_CHANNELS)),
        Modality::Vision => NetConfig::Vision(VisionNetConfig {
            in_channels: 3 * NUM_PAST,
            cameras: rig().count,
            image_height: rig().height_px,
            image_width: rig().width_px,
            grid_rows: 16,
            grid_cols: 16,
            base_width: 2,
            blocks: 2,
            pools: 1,
            seed: 4,
            ..VisionNetConfig::default()
        }),
    }
}

fn short_training() -> TrainConfig {
    TrainConfig {
        steps: 3,
        batch_size: 2,
        ..TrainConfig::default()
    }
}

fn trained(m: Modality, data: &TrainingSet) -> (Model, Vec<f64>) {
    let mut model = Model::new(m, spec(), FeatureConfig::default(), &net_config(m)).unwrap();
    let log = train(&mut model.net, data, &short_training()).unwrap();
    (model, log.iter().map(|r| r.loss).collect())
}

#[test]
fn datasets_round_trip() {
    let s = samples(3);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&s, &RadarNorm::default(), dir.path()).unwrap();
    let (back, norm) = read_dataset(dir.path()).unwrap();
    assert_eq!(back, s);
    assert_eq!(norm, RadarNorm::default());
}

#[test]
fn training_is_deterministic() {
    let s = samples(4);
    let data = TrainingSet::from_samples(&s, Modality::Radar, &FeatureConfig::default()).unwrap();
    let (_, a) = trained(Modality::Radar, &data);
    let (_, b) = trained(Modality::Radar, &data);
    assert_eq!(a, b);
    assert!(a.iter().all(|l| l.is_finite()));
}

#[test]
fn every_modality_trains_predicts_and_fuses() {
    let s = samples(4);
    let truth: Vec<Vec<LabelGrid>> = s.iter().map(|x| x.labels.labels()).collect();
    let dir = tempfile::tempdir().unwrap();
    let mut per_modality: Vec<Vec<GridSequence>> = Vec::new();

    for m in Modality::ALL {
        let data = TrainingSet::from_samples(&s, m, &FeatureConfig::default()).unwrap();
        let (mut model, _) = trained(m, &data);
        let pred = model.predict(&data, 3).unwrap();
        assert_eq!(pred.len(), s.len());
        for seq in &pred {
            assert_eq!(seq.grids.len(), NUM_HORIZONS);
            for g in &seq.grids {
                g.check_normalized(1e-5).unwrap();
            }
        }

        let path = dir.path().join(format!("{m}.ckpt"));
        model.save(&path).unwrap();
        let mut loaded = Model::load(&path).unwrap();
        assert_eq!(loaded.modality, m);
        assert_eq!(loaded.predict(&data, 3).unwrap(), pred);
        per_modality.push(pred);
    }

    let pm = PriorityMap::default();
    for (i, labels) in truth.iter().enumerate() {
        let seqs: Vec<GridSequence> = per_modality.iter().map(|p| p[i].clone()).collect();
        let avg = fuse_average(&seqs).unwrap();
        let pool = fuse_priority(&seqs, &pm).unwrap();
        for h in 0..NUM_HORIZONS {
            avg.grids[h].check_normalized(1e-5).unwrap();
            for row in 0..16 {
                for col in 0..16 {
                    let cell = pool.grids[h].cell(row, col);
                    assert!(seqs.iter().any(|q| q.grids[h].cell(row, col) == cell));
                }
            }
        }
        assert_eq!(labels.len(), NUM_HORIZONS);
    }

    // Scoring the labels against themselves is perfect for every class
    // that occurs.
    let counts = accumulate(truth.iter().map(|t| (&t[..], &t[..]))).unwrap();
    for h in 0..NUM_HORIZONS {
        assert_eq!(counts.metric(Metric::Iou, h, SemClass::Background), Some(1.0));
        assert_eq!(counts.metric(Metric::Accuracy, h, SemClass::Vehicle), Some(1.0));
    }
}

#[test]
fn checkpoints_refuse_other_grids() {
    let s = samples(2);
    let data = TrainingSet::from_samples(&s, Modality::Lidar, &FeatureConfig::default()).unwrap();
    let mut model = Model::new(Modality::Lidar, GridSpec::centered(32, 32, 0.5), FeatureConfig::default(), &net_config(Modality::Lidar)).unwrap();
    assert!(model.predict(&data, 2).is_err());
}
