use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SimError, NUM_TIMESTEPS, T0_INDEX, TIME_STEP};
use crate::geometry::Pose2;
use crate::grid::{OrientedBox, SemClass};

/// Seconds relative to t₀ of timeline index `i` (0 ↦ −2 s, 8 ↦ +2 s).
pub fn timestep_seconds(i: usize) -> f64 {
    (i as f64 - T0_INDEX as f64) * TIME_STEP
}

/// Closed-form constant-speed, constant-yaw-rate motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    /// Pose at t₀ in the world frame.
    pub pose_t0: Pose2,
    pub speed: f64,
    pub yaw_rate: f64,
}

impl Motion {
    pub fn pose_at(&self, t: f64) -> Pose2 {
        let yaw0 = self.pose_t0.yaw();
        let yaw = yaw0 + self.yaw_rate * t;
        let (x, y) = if self.yaw_rate.abs() < 1e-9 {
            let (s, c) = yaw0.sin_cos();
            (self.speed * t * c, self.speed * t * s)
        } else {
            let r = self.speed / self.yaw_rate;
            (r * (yaw.sin() - yaw0.sin()), -r * (yaw.cos() - yaw0.cos()))
        };
        Pose2::new(self.pose_t0.x + x, self.pose_t0.y + y, yaw)
    }

    /// World-frame velocity at time `t`.
    pub fn velocity_at(&self, t: f64) -> (f64, f64) {
        let (s, c) = (self.pose_t0.yaw() + self.yaw_rate * t).sin_cos();
        (self.speed * c, self.speed * s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub class: SemClass,
    pub motion: Motion,
    /// World pose at each timeline index.
    pub trajectory: Vec<Pose2>,
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl Agent {
    pub fn new(class: SemClass, motion: Motion, length: f64, width: f64, height: f64) -> Self {
        let trajectory = (0..NUM_TIMESTEPS).map(|i| motion.pose_at(timestep_seconds(i))).collect();
        Self {
            class,
            motion,
            trajectory,
            length,
            width,
            height,
        }
    }

    /// Footprint at timeline index `i`, expressed relative to `frame`.
    pub fn box_in(&self, i: usize, frame: &Pose2) -> OrientedBox {
        let p = frame.inverse().compose(&self.trajectory[i]);
        OrientedBox {
            center: (p.x, p.y),
            length: self.length,
            width: self.width,
            yaw: p.yaw(),
            class: self.class,
        }
    }

    pub fn velocity_at(&self, i: usize) -> (f64, f64) {
        self.motion.velocity_at(timestep_seconds(i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub ego: Motion,
    /// Ego world pose at each timeline index.
    pub ego_trajectory: Vec<Pose2>,
    pub agents: Vec<Agent>,
    pub seed: u64,
}

impl Scene {
    /// Builds a scene from explicit motions (used by tests and tools).
    pub fn from_parts(ego: Motion, agents: Vec<Agent>, seed: u64) -> Self {
        let ego_trajectory = (0..NUM_TIMESTEPS).map(|i| ego.pose_at(timestep_seconds(i))).collect();
        Self {
            ego,
            ego_trajectory,
            agents,
            seed,
        }
    }

    pub fn ego_t0(&self) -> Pose2 {
        self.ego_trajectory[T0_INDEX]
    }

    pub fn ego_velocity_world(&self, i: usize) -> (f64, f64) {
        self.ego.velocity_at(timestep_seconds(i))
    }

    /// Ego velocity at index `i` expressed in the ego frame at that index.
    pub fn ego_velocity_local(&self, i: usize) -> (f64, f64) {
        self.ego_trajectory[i].inverse().rotate_vec(self.ego_velocity_world(i))
    }
}

/// An inclusive `[min, max]` range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }

    fn check(&self, name: &str, lo: f64, hi: f64) -> Result<(), SimError> {
        let ok = self.min.is_finite() && self.max.is_finite() && self.min <= self.max && self.min >= lo && self.max <= hi;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(format!(
                "{name} must satisfy {lo} <= min <= max <= {hi}, got [{}, {}]",
                self.min, self.max
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub vehicles: (usize, usize),
    pub vrus: (usize, usize),
    /// m/s, within [0, 15].
    pub vehicle_speed: Range,
    /// m/s, within [0, 3].
    pub vru_speed: Range,
    /// rad/s magnitude bound for agent yaw rates.
    pub max_yaw_rate: f64,
    pub vehicle_length: Range,
    pub vehicle_width: Range,
    pub vehicle_height: Range,
    pub vru_size: Range,
    pub vru_height: Range,
    pub ego_speed: Range,
    pub ego_max_yaw_rate: f64,
    /// Half-extents (forward, left) of the region agent centers occupy at t₀,
    /// in the ego frame at t₀. An agent that finds no free spot there is
    /// left out of the scene.
    pub spawn_half_extent: (f64, f64),
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            vehicles: (1, 3),
            vrus: (0, 2),
            vehicle_speed: Range::new(0.0, 6.0),
            vru_speed: Range::new(0.0, 2.0),
            max_yaw_rate: 0.0,
            vehicle_length: Range::new(3.5, 5.0),
            vehicle_width: Range::new(1.6, 2.2),
            vehicle_height: Range::new(1.4, 2.0),
            vru_size: Range::new(0.5, 0.9),
            vru_height: Range::new(1.0, 1.9),
            ego_speed: Range::new(0.0, 3.0),
            ego_max_yaw_rate: 0.0,
            spawn_half_extent: (5.0, 9.0),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.vehicles.0 > self.vehicles.1 || self.vrus.0 > self.vrus.1 {
            return Err(SimError::InvalidConfig("agent count ranges must have min <= max".into()));
        }
        self.vehicle_speed.check("vehicle_speed", 0.0, 15.0)?;
        self.vru_speed.check("vru_speed", 0.0, 3.0)?;
        self.vehicle_length.check("vehicle_length", 3.0, 6.0)?;
        self.vehicle_width.check("vehicle_width", 1.5, 3.0)?;
        self.vehicle_height.check("vehicle_height", 0.1, 5.0)?;
        self.vru_size.check("vru_size", 0.05, 1.0)?;
        self.vru_height.check("vru_height", 0.1, 2.5)?;
        self.ego_speed.check("ego_speed", 0.0, 40.0)?;
        if !(self.max_yaw_rate >= 0.0 && self.ego_max_yaw_rate >= 0.0) {
            return Err(SimError::InvalidConfig("yaw rate bounds must be non-negative".into()));
        }
        if !(self.spawn_half_extent.0 > 0.0 && self.spawn_half_extent.1 > 0.0) {
            return Err(SimError::InvalidConfig("spawn extent must be positive".into()));
        }
        Ok(())
    }
}

/// Samples a scene; a pure function of `(config, seed)`.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let ego_pose = Pose2::new(
        rng.random_range(-100.0..100.0),
        rng.random_range(-100.0..100.0),
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    );
    let ego = Motion {
        pose_t0: ego_pose,
        speed: config.ego_speed.sample(&mut rng),
        yaw_rate: symmetric(&mut rng, config.ego_max_yaw_rate),
    };

    let n_vehicles = rng.random_range(config.vehicles.0..=config.vehicles.1);
    let n_vrus = rng.random_range(config.vrus.0..=config.vrus.1);
    // Footprint discs (ego-frame center, radius) used to avoid overlaps at t₀;
    // the ego itself occupies roughly a 4.5 × 2 m box at the origin.
    let mut placed: Vec<((f64, f64), f64)> = vec![((0.0, 0.0), 2.5)];
    let mut agents = Vec::with_capacity(n_vehicles + n_vrus);
    for k in 0..n_vehicles + n_vrus {
        let class = if k < n_vehicles { SemClass::Vehicle } else { SemClass::Vru };
        let (length, width, height, speed) = match class {
            SemClass::Vehicle => (
                config.vehicle_length.sample(&mut rng),
                config.vehicle_width.sample(&mut rng),
                config.vehicle_height.sample(&mut rng),
                config.vehicle_speed.sample(&mut rng),
            ),
            _ => {
                let size = config.vru_size.sample(&mut rng);
                (size, size, config.vru_height.sample(&mut rng), config.vru_speed.sample(&mut rng))
            }
        };
        let radius = 0.5 * length.hypot(width);
        let mut center = None;
        for _ in 0..200 {
            let c = (
                rng.random_range(-config.spawn_half_extent.0..=config.spawn_half_extent.0),
                rng.random_range(-config.spawn_half_extent.1..=config.spawn_half_extent.1),
            );
            let free = placed
                .iter()
                .all(|&((x, y), r)| (c.0 - x).hypot(c.1 - y) > r + radius + 0.2);
            if free {
                center = Some(c);
                break;
            }
        }
        let Some(center) = center else { continue };
        placed.push((center, radius));
        let yaw_local = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let pose_t0 = ego_pose.compose(&Pose2::new(center.0, center.1, yaw_local));
        let motion = Motion {
            pose_t0,
            speed,
            yaw_rate: symmetric(&mut rng, config.max_yaw_rate),
        };
        agents.push(Agent::new(class, motion, length, width, height));
    }
    Ok(Scene::from_parts(ego, agents, seed))
}

fn symmetric(rng: &mut impl Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_agents_gives_ego_only() {
        let cfg = SceneConfig {
            vehicles: (0, 0),
            vrus: (0, 0),
            ..SceneConfig::default()
        };
        let s = generate_scene(&cfg, 3).unwrap();
        assert!(s.agents.is_empty());
        assert_eq!(s.ego_trajectory.len(), NUM_TIMESTEPS);
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = SceneConfig::default();
        assert_eq!(generate_scene(&cfg, 42).unwrap(), generate_scene(&cfg, 42).unwrap());
        assert_ne!(generate_scene(&cfg, 42).unwrap(), generate_scene(&cfg, 43).unwrap());
    }

    #[test]
    fn straight_motion_kinematics() {
        let m = Motion {
            pose_t0: Pose2::new(1.0, 2.0, 0.3),
            speed: 2.0,
            yaw_rate: 0.0,
        };
        let a = m.pose_at(0.0);
        let b = m.pose_at(0.5);
        assert!(((b.x - a.x).hypot(b.y - a.y) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn turning_motion_matches_integrated_velocity() {
        let m = Motion {
            pose_t0: Pose2::new(0.0, 0.0, 0.2),
            speed: 4.0,
            yaw_rate: 0.5,
        };
        let steps = 20_000;
        let dt = 0.5 / steps as f64;
        let (mut x, mut y) = (0.0, 0.0);
        for i in 0..steps {
            let (vx, vy) = m.velocity_at((i as f64 + 0.5) * dt);
            x += vx * dt;
            y += vy * dt;
        }
        let p = m.pose_at(0.5);
        assert!((p.x - x).abs() < 1e-8 && (p.y - y).abs() < 1e-8);
    }

    #[test]
    fn generated_agents_respect_limits() {
        let cfg = SceneConfig {
            max_yaw_rate: 0.3,
            ..SceneConfig::default()
        };
        for seed in 0..50 {
            let s = generate_scene(&cfg, seed).unwrap();
            for a in &s.agents {
                match a.class {
                    SemClass::Vru => assert!(a.length <= 1.0 && a.width <= 1.0 && a.motion.speed <= 3.0),
                    SemClass::Vehicle => {
                        assert!((3.0..=6.0).contains(&a.length) && (1.5..=3.0).contains(&a.width));
                        assert!(a.motion.speed <= 15.0);
                    }
                    SemClass::Background => unreachable!(),
                }
                // Pose differences are consistent with the motion model.
                for i in 0..NUM_TIMESTEPS {
                    assert!(a.trajectory[i].approx_eq(&a.motion.pose_at(timestep_seconds(i)), 1e-12));
                }
            }
        }
    }

    #[test]
    fn invalid_ranges_rejected() {
        let too_fast = SceneConfig {
            vehicle_speed: Range::new(0.0, 20.0),
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(&too_fast, 0), Err(SimError::InvalidConfig(_))));
        let inverted = SceneConfig {
            vehicles: (3, 1),
            ..SceneConfig::default()
        };
        assert!(generate_scene(&inverted, 0).is_err());
        let big_vru = SceneConfig {
            vru_size: Range::new(0.5, 1.5),
            ..SceneConfig::default()
        };
        assert!(generate_scene(&big_vru, 0).is_err());
    }
}
