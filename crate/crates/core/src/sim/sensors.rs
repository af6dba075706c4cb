//! Lidar, radar and camera simulation.
//!
//! Radar sign convention: `radial_velocity` is the range rate, positive when
//! the target moves away from the sensor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::{Agent, Scene};
use crate::geometry::{Point3, Pose2};
use crate::grid::SemClass;

/// Mixes a base seed with stream identifiers (splitmix64 finalizer).
pub(crate) fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarConfig {
    /// Spacing of surface samples on agent faces, meters.
    pub face_spacing: f64,
    /// Ground points sampled uniformly in range (0 disables ground sampling).
    pub ground_points: usize,
    pub range: f64,
    /// Probability of dropping each point.
    pub dropout: f64,
    /// Standard deviation of isotropic position noise, meters.
    pub jitter_std: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            face_spacing: 0.2,
            ground_points: 0,
            range: 60.0,
            dropout: 0.0,
            jitter_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarConfig {
    pub returns_per_vehicle: usize,
    pub returns_per_vru: usize,
    pub range: f64,
    /// Unambiguous Doppler span, m/s.
    pub doppler_interval: f64,
    /// Wrap range rates into ±interval/2.
    pub simulate_ambiguity: bool,
    /// Standard deviation of range-rate noise, m/s.
    pub velocity_noise_std: f64,
    pub vehicle_rcs_db: f64,
    pub vru_rcs_db: f64,
    /// SNR of a 0 dB target at 1 m.
    pub snr_reference: f64,
}

impl Default for RadarConfig {
    fn default() -> Self {
        Self {
            returns_per_vehicle: 12,
            returns_per_vru: 4,
            range: 80.0,
            doppler_interval: 40.0,
            simulate_ambiguity: false,
            velocity_noise_std: 0.0,
            vehicle_rcs_db: 10.0,
            vru_rcs_db: -5.0,
            snr_reference: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraRig {
    pub count: usize,
    pub hfov_deg: f64,
    pub height_px: usize,
    pub width_px: usize,
    pub mount_height: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            count: 4,
            hfov_deg: 110.0,
            height_px: 192,
            width_px: 320,
            mount_height: 1.6,
        }
    }
}

impl CameraRig {
    /// Yaw of camera `k` relative to the ego heading; cameras are spread
    /// evenly, camera 0 facing forward.
    pub fn camera_yaw(&self, k: usize) -> f64 {
        2.0 * std::f64::consts::PI * k as f64 / self.count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarReturn {
    /// Position in the ego frame at the capture time.
    pub position: (f64, f64),
    pub radial_velocity: f64,
    /// Bearing in the ego frame at the capture time.
    pub azimuth: f64,
    pub rcs: f64,
    pub snr: f64,
    pub doppler_interval: f64,
}

/// An 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbFrame {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone()).expect("frame size")
    }
}

const SKY: [u8; 3] = [150, 190, 235];
const GROUND: [u8; 3] = [95, 95, 95];
const VEHICLE_PAINT: [u8; 3] = [40, 90, 210];
const VRU_PAINT: [u8; 3] = [235, 160, 30];

fn in_range(scene: &Scene, t: usize, agent: &Agent, range: f64) -> bool {
    let e = scene.ego_trajectory[t];
    let a = agent.trajectory[t];
    (a.x - e.x).hypot(a.y - e.y) <= range
}

/// Points on agent surfaces (four sides up to the agent height plus the roof)
/// and optional ground points, in the world frame.
pub fn simulate_lidar(scene: &Scene, t: usize, cfg: &LidarConfig) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scene.seed, 1, t as u64));
    let mut points = Vec::new();
    let step = cfg.face_spacing.max(1e-3);
    for agent in scene.agents.iter().filter(|a| in_range(scene, t, a, cfg.range)) {
        let pose = agent.trajectory[t];
        let (hl, hw, h) = (agent.length / 2.0, agent.width / 2.0, agent.height);
        let nz = (h / step).ceil().max(1.0) as usize;
        let nl = (agent.length / step).ceil().max(1.0) as usize;
        let nw = (agent.width / step).ceil().max(1.0) as usize;
        let frac = |i: usize, n: usize| (i as f64 + 0.5) / n as f64;
        let mut local = Vec::new();
        for iz in 0..nz {
            let z = frac(iz, nz) * h;
            for i in 0..nl {
                let x = -hl + frac(i, nl) * agent.length;
                local.push((x, hw, z));
                local.push((x, -hw, z));
            }
            for j in 0..nw {
                let y = -hw + frac(j, nw) * agent.width;
                local.push((hl, y, z));
                local.push((-hl, y, z));
            }
        }
        for i in 0..nl {
            for j in 0..nw {
                local.push((-hl + frac(i, nl) * agent.length, -hw + frac(j, nw) * agent.width, h));
            }
        }
        for (x, y, z) in local {
            let (wx, wy) = pose.transform_xy((x, y));
            points.push(Point3::new(wx, wy, z));
        }
    }
    if cfg.ground_points > 0 {
        let ego = scene.ego_trajectory[t];
        for _ in 0..cfg.ground_points {
            let r = cfg.range * rng.random::<f64>().sqrt();
            let th = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            points.push(Point3::new(ego.x + r * th.cos(), ego.y + r * th.sin(), 0.0));
        }
    }
    if cfg.dropout > 0.0 {
        points.retain(|_| rng.random::<f64>() >= cfg.dropout);
    }
    if cfg.jitter_std > 0.0 {
        let noise = Normal::new(0.0, cfg.jitter_std).expect("finite std");
        for p in &mut points {
            p.x += noise.sample(&mut rng);
            p.y += noise.sample(&mut rng);
            p.z += noise.sample(&mut rng);
        }
    }
    points
}

/// Range rate of a world point moving at `target_vel`, seen from a sensor at
/// `sensor` moving at `sensor_vel` (positive when receding).
pub fn range_rate(sensor: (f64, f64), sensor_vel: (f64, f64), target: (f64, f64), target_vel: (f64, f64)) -> f64 {
    let (dx, dy) = (target.0 - sensor.0, target.1 - sensor.1);
    let r = dx.hypot(dy);
    if r < 1e-12 {
        return 0.0;
    }
    ((target_vel.0 - sensor_vel.0) * dx + (target_vel.1 - sensor_vel.1) * dy) / r
}

/// Sparse returns from agent outlines, positions in the ego frame at `t`.
pub fn simulate_radar(scene: &Scene, t: usize, cfg: &RadarConfig) -> Vec<RadarReturn> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scene.seed, 2, t as u64));
    let ego = scene.ego_trajectory[t];
    let ego_vel = scene.ego_velocity_world(t);
    let ego_inv = ego.inverse();
    let noise = (cfg.velocity_noise_std > 0.0).then(|| Normal::new(0.0, cfg.velocity_noise_std).expect("finite std"));
    let mut out = Vec::new();
    for agent in scene.agents.iter().filter(|a| in_range(scene, t, a, cfg.range)) {
        let (count, rcs) = match agent.class {
            SemClass::Vehicle => (cfg.returns_per_vehicle, cfg.vehicle_rcs_db),
            _ => (cfg.returns_per_vru, cfg.vru_rcs_db),
        };
        let pose = agent.trajectory[t];
        let vel = agent.velocity_at(t);
        let omega = agent.motion.yaw_rate;
        let perimeter = 2.0 * (agent.length + agent.width);
        for _ in 0..count {
            let local = perimeter_point(agent, rng.random::<f64>() * perimeter);
            let world = pose.transform_xy(local);
            // Rigid-body velocity of the surface point.
            let r = (world.0 - pose.x, world.1 - pose.y);
            let point_vel = (vel.0 - omega * r.1, vel.1 + omega * r.0);
            let mut radial = range_rate((ego.x, ego.y), ego_vel, world, point_vel);
            if let Some(n) = &noise {
                radial += n.sample(&mut rng);
            }
            if cfg.simulate_ambiguity {
                radial = wrap_doppler(radial, cfg.doppler_interval);
            }
            let position = ego_inv.transform_xy(world);
            let range = position.0.hypot(position.1).max(1.0);
            out.push(RadarReturn {
                position,
                radial_velocity: radial,
                azimuth: position.1.atan2(position.0),
                rcs,
                snr: cfg.snr_reference * 10f64.powf(rcs / 10.0) / (range * range),
                doppler_interval: cfg.doppler_interval,
            });
        }
    }
    out
}

/// Wraps a velocity into `[-interval/2, interval/2)`.
pub fn wrap_doppler(v: f64, interval: f64) -> f64 {
    (v + interval / 2.0).rem_euclid(interval) - interval / 2.0
}

fn perimeter_point(agent: &Agent, s: f64) -> (f64, f64) {
    let (l, w) = (agent.length, agent.width);
    let (hl, hw) = (l / 2.0, w / 2.0);
    if s < l {
        (-hl + s, hw)
    } else if s < l + w {
        (hl, hw - (s - l))
    } else if s < 2.0 * l + w {
        (hl - (s - l - w), -hw)
    } else {
        (-hl, (-hw + (s - 2.0 * l - w)).min(hw))
    }
}

/// Pinhole renders of flat-shaded agent boxes over a ground plane, one image
/// per camera of the rig.
pub fn simulate_cameras(scene: &Scene, t: usize, rig: &CameraRig) -> Vec<RgbFrame> {
    let ego = scene.ego_trajectory[t];
    (0..rig.count).map(|k| render_camera(scene, t, rig, ego.compose(&Pose2::new(0.0, 0.0, rig.camera_yaw(k))))).collect()
}

fn render_camera(scene: &Scene, t: usize, rig: &CameraRig, cam: Pose2) -> RgbFrame {
    let (h, w) = (rig.height_px, rig.width_px);
    let focal = (w as f64 / 2.0) / (rig.hfov_deg.to_radians() / 2.0).tan();
    let mut data = Vec::with_capacity(h * w * 3);
    let origin = (cam.x, cam.y, rig.mount_height);
    for row in 0..h {
        for col in 0..w {
            let u = (col as f64 + 0.5 - w as f64 / 2.0) / focal;
            let v = (row as f64 + 0.5 - h as f64 / 2.0) / focal;
            let (dx, dy) = cam.rotate_vec((1.0, -u));
            let dir = (dx, dy, -v);
            let mut best = f64::INFINITY;
            let mut color = SKY;
            if dir.2 < 0.0 {
                best = -origin.2 / dir.2;
                color = GROUND;
            }
            for agent in &scene.agents {
                if let Some((dist, shade)) = ray_box(origin, dir, agent, &agent.trajectory[t]) {
                    if dist < best {
                        best = dist;
                        let paint = if agent.class == SemClass::Vehicle { VEHICLE_PAINT } else { VRU_PAINT };
                        color = paint.map(|c| (c as f64 * shade).round() as u8);
                    }
                }
            }
            data.extend_from_slice(&color);
        }
    }
    RgbFrame { height: h, width: w, data }
}

/// Slab intersection with an agent's box; returns the entry distance and a
/// shading factor chosen by the face that was hit.
fn ray_box(origin: (f64, f64, f64), dir: (f64, f64, f64), agent: &Agent, pose: &Pose2) -> Option<(f64, f64)> {
    let inv = pose.inverse();
    let o = inv.transform_xy((origin.0, origin.1));
    let d = inv.rotate_vec((dir.0, dir.1));
    let o = [o.0, o.1, origin.2];
    let d = [d.0, d.1, dir.2];
    let lo = [-agent.length / 2.0, -agent.width / 2.0, 0.0];
    let hi = [agent.length / 2.0, agent.width / 2.0, agent.height];
    let (mut t_near, mut t_far, mut axis) = (0.0f64, f64::INFINITY, usize::MAX);
    for i in 0..3 {
        if d[i].abs() < 1e-12 {
            if o[i] < lo[i] || o[i] > hi[i] {
                return None;
            }
            continue;
        }
        let (mut a, mut b) = ((lo[i] - o[i]) / d[i], (hi[i] - o[i]) / d[i]);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        if a > t_near {
            t_near = a;
            axis = i;
        }
        t_far = t_far.min(b);
        if t_near > t_far {
            return None;
        }
    }
    let shade = match axis {
        0 => 0.85,
        1 => 0.65,
        _ => 1.0,
    };
    (t_near > 0.0).then_some((t_near, shade))
}
