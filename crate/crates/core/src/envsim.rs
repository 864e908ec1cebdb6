//! Planar double-integrator racer: obstacle fields, sensing, disturbances.
//!
//! Positions are path coordinates `(lateral, along-track)`. The nominal plan
//! moves straight along-track at constant speed, so the perturbation state
//! is `x = (lateral, along-track, v_lateral, v_along) − nominal`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::lindyn::LinSystem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: Vector2<f64>,
    pub radius: f64,
}

impl Obstacle {
    pub fn new(lateral: f64, along: f64, radius: f64) -> Self {
        Self { center: Vector2::new(lateral, along), radius }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    obstacles: Vec<Obstacle>,
    sensor_radius: f64,
    robot_radius: f64,
    speed: f64,
    dt: f64,
    steps: usize,
    replan_every: Option<usize>,
}

impl Environment {
    pub fn new(obstacles: Vec<Obstacle>, sensor_radius: f64, robot_radius: f64, speed: f64, dt: f64, steps: usize) -> Result<Self> {
        for o in &obstacles {
            if !(o.radius > 0.0) || !o.center.iter().all(|v| v.is_finite()) {
                return Err(contract(format!("bad obstacle {o:?}")));
            }
        }
        if !(sensor_radius >= 0.0) || !(robot_radius > 0.0) || !(dt > 0.0) || !speed.is_finite() || steps == 0 {
            return Err(contract("environment needs sensor radius >= 0, positive robot radius, dt and steps"));
        }
        Ok(Self { obstacles, sensor_radius, robot_radius, speed, dt, steps, replan_every: None })
    }

    /// Re-anchor the nominal plan at the racer every `every` steps: the
    /// perturbation state is reset to zero and the plan continues from there.
    pub fn with_replan(mut self, every: usize) -> Result<Self> {
        if every == 0 {
            return Err(contract("replan interval must be positive"));
        }
        self.replan_every = Some(every);
        Ok(self)
    }

    pub fn with_sensor_radius(mut self, r: f64) -> Result<Self> {
        if !(r >= 0.0) {
            return Err(contract("sensor radius must be nonnegative"));
        }
        self.sensor_radius = r;
        Ok(self)
    }

    /// Changes speed and step length, keeping the traversed distance and
    /// the distance between re-anchorings.
    pub fn with_kinematics(mut self, speed: f64, dt: f64) -> Result<Self> {
        if !(speed > 0.0 && dt > 0.0) {
            return Err(contract("speed and dt must be positive"));
        }
        let ratio = self.speed * self.dt / (speed * dt);
        self.steps = ((self.steps as f64 * ratio).round() as usize).max(1);
        if let Some(k) = self.replan_every {
            let scaled = k as f64 * ratio;
            if (scaled - scaled.round()).abs() > 1e-9 || scaled.round() < 1.0 {
                return Err(contract("re-anchoring distance must be a whole number of steps"));
            }
            self.replan_every = Some(scaled.round() as usize);
        }
        self.speed = speed;
        self.dt = dt;
        Ok(self)
    }

    pub fn with_steps(mut self, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(contract("steps must be positive"));
        }
        self.steps = steps;
        Ok(self)
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }
    pub fn sensor_radius(&self) -> f64 {
        self.sensor_radius
    }
    pub fn robot_radius(&self) -> f64 {
        self.robot_radius
    }
    pub fn speed(&self) -> f64 {
        self.speed
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    /// Steps needed to traverse the field.
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn replan_every(&self) -> Option<usize> {
        self.replan_every
    }

    /// Whether the plan is re-anchored before step `t`.
    pub fn replans_at(&self, t: usize) -> bool {
        self.replan_every.is_some_and(|k| t > 0 && t.is_multiple_of(k))
    }

    pub fn nominal(&self, t: usize) -> Vector2<f64> {
        Vector2::new(0.0, self.speed * self.dt * t as f64)
    }

    pub fn position(&self, t: usize, x: &DVector<f64>) -> Vector2<f64> {
        self.nominal(t) + Vector2::new(x[0], x[1])
    }

    /// Centers within the closed sensor ball around `pos`, relative to the
    /// nominal point at `t`, nearest first and ties broken by angle.
    pub fn sense(&self, pos: &Vector2<f64>, t: usize) -> Vec<Vector2<f64>> {
        let mut hits: Vec<(f64, f64, Vector2<f64>)> = self
            .obstacles
            .iter()
            .filter_map(|o| {
                let d = o.center - pos;
                let n = d.norm();
                (n <= self.sensor_radius).then(|| (n, d.y.atan2(d.x), o.center))
            })
            .collect();
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let nom = self.nominal(t);
        hits.into_iter().map(|(_, _, c)| c - nom).collect()
    }

    /// Distance from the robot's surface to the nearest obstacle surface.
    pub fn clearance(&self, pos: &Vector2<f64>) -> f64 {
        self.obstacles
            .iter()
            .map(|o| (o.center - pos).norm() - o.radius - self.robot_radius)
            .fold(f64::INFINITY, f64::min)
    }

    fn hits(&self, pos: &Vector2<f64>, o: &Obstacle) -> bool {
        (o.center - pos).norm() < o.radius + self.robot_radius
    }
}

/// A sensed planar position lifted to the racer's state coordinates.
pub fn embed(p: &Vector2<f64>) -> DVector<f64> {
    DVector::from_vec(vec![p.x, p.y, 0.0, 0.0])
}

pub fn double_integrator(dt: f64) -> Result<LinSystem> {
    LinSystem::double_integrator(dt)
}

/// Collisions along a sampled trajectory and the index of the first
/// colliding sample. Consecutive colliding samples against the same obstacle
/// count once.
pub fn collision_check(traj: &[Vector2<f64>], env: &Environment) -> (usize, Option<usize>) {
    let mut count = 0;
    let mut first = None;
    let mut prev = vec![false; env.obstacles.len()];
    for (i, pos) in traj.iter().enumerate() {
        for (j, o) in env.obstacles.iter().enumerate() {
            let hit = env.hits(pos, o);
            if hit && !prev[j] {
                count += 1;
                first.get_or_insert(i);
            }
            prev[j] = hit;
        }
    }
    (count, first)
}

/// Per obstacle, whether any trajectory sample touched it.
pub fn collided_obstacles(traj: &[Vector2<f64>], env: &Environment) -> Vec<bool> {
    env.obstacles.iter().map(|o| traj.iter().any(|p| env.hits(p, o))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Side on which the trajectory passed each obstacle, judged at the sample
/// closest along-track to the center. `None` for obstacles never reached or
/// collided with.
pub fn pass_sides(traj: &[Vector2<f64>], env: &Environment) -> Vec<Option<Side>> {
    let hit = collided_obstacles(traj, env);
    let reach = traj.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    env.obstacles
        .iter()
        .zip(hit)
        .map(|(o, hit)| {
            if hit || traj.is_empty() || reach < o.center.y {
                return None;
            }
            let p = traj.iter().min_by(|a, b| (a.y - o.center.y).abs().total_cmp(&(b.y - o.center.y).abs()))?;
            Some(if p.x < o.center.x { Side::Left } else { Side::Right })
        })
        .collect()
}

/// Default lateral sinusoid amplitude. Large enough that, with the default
/// 20-step period matching the centerline segment, the learner settles on
/// one pass side.
pub const SINUSOID_AMPLITUDE: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DisturbanceProfile {
    Zero,
    Gaussian {
        #[serde(default)]
        mean: f64,
        #[serde(default = "half")]
        std: f64,
    },
    Directional {
        #[serde(default = "half")]
        mean: f64,
        #[serde(default = "half")]
        std: f64,
    },
    Sinusoid {
        #[serde(default = "sin_amplitude")]
        amplitude: f64,
        #[serde(default = "twenty")]
        period: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        axis: usize,
    },
    Adversarial {
        #[serde(default = "one")]
        magnitude: f64,
    },
}

fn half() -> f64 {
    0.5
}
fn sin_amplitude() -> f64 {
    SINUSOID_AMPLITUDE
}
fn twenty() -> f64 {
    20.0
}
fn one() -> f64 {
    1.0
}

impl DisturbanceProfile {
    pub fn gaussian() -> Self {
        Self::Gaussian { mean: 0.0, std: 0.5 }
    }
    pub fn directional() -> Self {
        Self::Directional { mean: 0.5, std: 0.5 }
    }
    pub fn sinusoid() -> Self {
        Self::Sinusoid { amplitude: SINUSOID_AMPLITUDE, period: 20.0, phase: 0.0, axis: 0 }
    }
    pub fn adversarial(magnitude: f64) -> Self {
        Self::Adversarial { magnitude }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Gaussian { .. } => "gaussian",
            Self::Directional { .. } => "directional",
            Self::Sinusoid { .. } => "sinusoid",
            Self::Adversarial { .. } => "adversarial",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Zero => true,
            Self::Gaussian { mean, std } | Self::Directional { mean, std } => mean.is_finite() && std >= 0.0 && std.is_finite(),
            Self::Sinusoid { amplitude, period, phase, axis } => amplitude >= 0.0 && period > 0.0 && phase.is_finite() && axis < 4,
            Self::Adversarial { magnitude } => magnitude >= 0.0 && magnitude.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(contract(format!("invalid disturbance profile {self:?}")))
        }
    }

    /// Bound on `‖w_t‖` used for the sentinel distance.
    pub fn norm_bound(&self) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Gaussian { mean, std } | Self::Directional { mean, std } => 2.0 * (mean.abs() + 3.0 * std),
            Self::Sinusoid { amplitude, .. } => amplitude,
            Self::Adversarial { magnitude } => magnitude,
        }
    }
}

/// The disturbance acting on the racer at step `t` in perturbation state `x`.
pub fn gen_disturbance<R: Rng + ?Sized>(
    profile: &DisturbanceProfile,
    t: usize,
    x: &DVector<f64>,
    env: &Environment,
    rng: &mut R,
) -> DVector<f64> {
    match *profile {
        DisturbanceProfile::Zero => DVector::zeros(4),
        DisturbanceProfile::Gaussian { mean, std } | DisturbanceProfile::Directional { mean, std } => {
            if std == 0.0 {
                return DVector::from_element(4, mean);
            }
            let n = Normal::new(mean, std).expect("validated std");
            DVector::from_fn(4, |_, _| n.sample(rng))
        }
        DisturbanceProfile::Sinusoid { amplitude, period, phase, axis } => {
            let mut w = DVector::zeros(4);
            w[axis] = amplitude * (2.0 * PI * t as f64 / period + phase).sin();
            w
        }
        DisturbanceProfile::Adversarial { magnitude } => {
            let pos = env.position(t, x);
            let dir = match env.sense(&pos, t).first() {
                Some(p) => (env.nominal(t) + p) - pos,
                None => -Vector2::new(x[0], x[1]),
            };
            let n = dir.norm();
            if n <= 1e-12 {
                return DVector::zeros(4);
            }
            let d = dir * (magnitude / (n * 2f64.sqrt()));
            DVector::from_vec(vec![d.x, d.y, d.x, d.y])
        }
    }
}

pub const DEFAULT_SPEED: f64 = 8.0;
pub const DEFAULT_DT: f64 = 1.0;
pub const DEFAULT_ROBOT_RADIUS: f64 = 0.5;
pub const DEFAULT_SENSOR_RADIUS: f64 = 100.0;

/// `n` obstacles on the nominal line, one per `spacing` meters, each at the
/// middle of its segment. The plan is re-anchored at every segment start, so
/// the nominal path passes through every center.
pub fn make_centerline(n: usize, spacing: f64, radius: f64) -> Result<Environment> {
    if n == 0 || !(spacing > 0.0) {
        return Err(contract("centerline needs n >= 1 and positive spacing"));
    }
    let seg = spacing / (DEFAULT_SPEED * DEFAULT_DT);
    let steps_per = seg.round() as usize;
    if steps_per == 0 || (seg - steps_per as f64).abs() > 1e-9 {
        return Err(contract(format!("spacing must be a multiple of {}", DEFAULT_SPEED * DEFAULT_DT)));
    }
    let obstacles = (0..n).map(|j| Obstacle::new(0.0, spacing * (j as f64 + 0.5), radius)).collect();
    Environment::new(obstacles, DEFAULT_SENSOR_RADIUS, DEFAULT_ROBOT_RADIUS, DEFAULT_SPEED, DEFAULT_DT, n * steps_per)?
        .with_replan(steps_per)
}

pub const SLALOM_WALL_CIRCLE: f64 = 2.0;
pub const SLALOM_WALL_EXTENT: f64 = 40.0;
pub const SLALOM_GATE_SPACING: f64 = 160.0;

/// Gates every `SLALOM_GATE_SPACING` meters whose gap centers alternate
/// between `+offset` and `−offset`. Each wall is a row of tangent circles
/// reaching `SLALOM_WALL_EXTENT` meters past the gap.
pub fn make_slalom(offset: f64, gate_width: f64, n_gates: usize) -> Result<Environment> {
    if !(gate_width > 0.0) || !offset.is_finite() || n_gates == 0 {
        return Err(contract("slalom needs a positive gate width and at least one gate"));
    }
    let r = SLALOM_WALL_CIRCLE;
    let per_side = (SLALOM_WALL_EXTENT / (2.0 * r)).ceil() as usize;
    let mut obstacles = Vec::with_capacity(n_gates * 2 * per_side);
    for g in 0..n_gates {
        let y = SLALOM_GATE_SPACING * (g as f64 + 1.0);
        let c = if g % 2 == 0 { offset } else { -offset };
        for m in 0..per_side {
            let reach = gate_width / 2.0 + r + 2.0 * r * m as f64;
            obstacles.push(Obstacle::new(c - reach, y, r));
            obstacles.push(Obstacle::new(c + reach, y, r));
        }
    }
    let steps = ((n_gates as f64 + 0.5) * SLALOM_GATE_SPACING / (DEFAULT_SPEED * DEFAULT_DT)).ceil() as usize;
    Environment::new(obstacles, DEFAULT_SENSOR_RADIUS, DEFAULT_ROBOT_RADIUS, DEFAULT_SPEED, DEFAULT_DT, steps)
}

/// `n` obstacles scattered uniformly over a `width`-wide band of the given
/// length, centered on the nominal line.
pub fn make_random_field(n: usize, width: f64, length: f64, radius: f64, seed: u64) -> Result<Environment> {
    if !(width > 0.0 && length > 0.0 && radius > 0.0) {
        return Err(contract("random field needs positive width, length and radius"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obstacles = (0..n)
        .map(|_| Obstacle::new(rng.random_range(-width / 2.0..width / 2.0), rng.random_range(0.0..length), radius))
        .collect();
    let steps = (length / (DEFAULT_SPEED * DEFAULT_DT)).ceil() as usize + 1;
    Environment::new(obstacles, DEFAULT_SENSOR_RADIUS, DEFAULT_ROBOT_RADIUS, DEFAULT_SPEED, DEFAULT_DT, steps)
}

/// Obstacles alternating left and right of the nominal line at lateral
/// distance `offset` with a seeded jitter of up to `jitter` meters.
pub fn make_offset_corridor(n: usize, spacing: f64, offset: f64, radius: f64, jitter: f64, seed: u64) -> Result<Environment> {
    if n == 0 || !(spacing > 0.0 && radius > 0.0 && jitter >= 0.0) {
        return Err(contract("offset corridor needs n >= 1, positive spacing and radius"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obstacles = (0..n)
        .map(|j| {
            let side = if j % 2 == 0 { 1.0 } else { -1.0 };
            let dj = if jitter > 0.0 { rng.random_range(-jitter..jitter) } else { 0.0 };
            Obstacle::new(side * offset + dj, spacing * (j as f64 + 1.0), radius)
        })
        .collect();
    let steps = ((n as f64 + 1.0) * spacing / (DEFAULT_SPEED * DEFAULT_DT)).ceil() as usize;
    Environment::new(obstacles, DEFAULT_SENSOR_RADIUS, DEFAULT_ROBOT_RADIUS, DEFAULT_SPEED, DEFAULT_DT, steps)
}

/// Parses one `cx cy r` triple per line; blank lines and `#` comments are
/// skipped.
pub fn parse_obstacles(text: &str) -> Result<Vec<Obstacle>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("obstacle line {}: {e}", i + 1)))?;
        if v.len() != 3 || !(v[2] > 0.0) || !v.iter().all(|x| x.is_finite()) {
            return Err(Error::Config(format!("obstacle line {}: expected `cx cy r` with r > 0", i + 1)));
        }
        out.push(Obstacle::new(v[0], v[1], v[2]));
    }
    Ok(out)
}

pub fn load_obstacles(path: &Path) -> Result<Vec<Obstacle>> {
    parse_obstacles(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(obstacles: Vec<Obstacle>) -> Environment {
        Environment::new(obstacles, 10.0, 0.5, 8.0, 1.0, 10).unwrap()
    }

    #[test]
    fn sense_empty_and_boundary() {
        let env = open(vec![Obstacle::new(0.0, 50.0, 1.0)]);
        assert!(env.sense(&Vector2::zeros(), 0).is_empty());
        let env = open(vec![Obstacle::new(6.0, 8.0, 1.0)]);
        assert_eq!(env.sense(&Vector2::zeros(), 0).len(), 1);
    }

    #[test]
    fn sense_is_relative_and_ordered() {
        let env = open(vec![Obstacle::new(3.0, 16.0, 1.0), Obstacle::new(-3.0, 16.0, 1.0), Obstacle::new(0.0, 17.0, 1.0)]);
        let pos = Vector2::new(0.0, 16.0);
        let s = env.sense(&pos, 2);
        assert_eq!(s, vec![Vector2::new(0.0, 1.0), Vector2::new(3.0, 0.0), Vector2::new(-3.0, 0.0)]);
    }

    #[test]
    fn centerline_on_path() {
        let env = make_centerline(50, 160.0, 30.0).unwrap();
        assert_eq!(env.obstacles().len(), 50);
        assert!(env.obstacles().iter().all(|o| o.center.x.abs() < 1e-12));
        assert_eq!(env.steps(), 1000);
        let one = make_centerline(1, 160.0, 30.0).unwrap();
        let ahead = one.obstacles()[0].center;
        assert!(ahead.x == 0.0 && ahead.y > 0.0);
    }

    #[test]
    fn straight_line_collides_on_centerline() {
        let env = make_centerline(3, 160.0, 30.0).unwrap();
        let traj: Vec<_> = (0..=env.steps()).map(|t| env.nominal(t)).collect();
        assert_eq!(collision_check(&traj, &env).0, 3);
        assert!(collided_obstacles(&traj, &env).iter().all(|h| *h));
    }

    #[test]
    fn slalom_gap_width() {
        for (offset, width) in [(0.0, 5.0), (12.0, 3.3), (-4.0, 20.0)] {
            let env = make_slalom(offset, width, 3).unwrap();
            for g in 0..3 {
                let y = SLALOM_GATE_SPACING * (g as f64 + 1.0);
                let row: Vec<_> = env.obstacles().iter().filter(|o| o.center.y == y).collect();
                let c = if g % 2 == 0 { offset } else { -offset };
                let left = row.iter().filter(|o| o.center.x < c).map(|o| o.center.x + o.radius).fold(f64::NEG_INFINITY, f64::max);
                let right = row.iter().filter(|o| o.center.x > c).map(|o| o.center.x - o.radius).fold(f64::INFINITY, f64::min);
                assert!((right - left - width).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn slalom_extremes() {
        let wide = make_slalom(0.0, 1e3, 4).unwrap();
        let traj: Vec<_> = (0..=wide.steps()).map(|t| wide.nominal(t)).collect();
        assert_eq!(collision_check(&traj, &wide), (0, None));
        let narrow = make_slalom(0.0, 0.9, 4).unwrap();
        let traj: Vec<_> = (0..=narrow.steps() * 8).map(|t| Vector2::new(0.0, t as f64)).collect();
        assert!(collision_check(&traj, &narrow).0 >= 1);
    }

    #[test]
    fn contiguous_hits_count_once() {
        let env = open(vec![Obstacle::new(0.0, 5.0, 2.0)]);
        let traj: Vec<_> = (0..10).map(|i| Vector2::new(0.0, i as f64)).collect();
        assert_eq!(collision_check(&traj, &env), (1, Some(3)));
        let back: Vec<_> = [0.0, 5.0, 0.0, 5.0].iter().map(|y| Vector2::new(0.0, *y)).collect();
        assert_eq!(collision_check(&back, &env), (2, Some(1)));
    }

    #[test]
    fn disturbance_profiles() {
        let env = open(vec![Obstacle::new(3.0, 4.0, 1.0)]);
        let x = DVector::zeros(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = gen_disturbance(&DisturbanceProfile::Gaussian { mean: 0.3, std: 0.0 }, 0, &x, &env, &mut rng);
        assert_eq!(c, DVector::from_element(4, 0.3));
        let s = gen_disturbance(&DisturbanceProfile::sinusoid(), 10, &x, &env, &mut rng);
        assert!(s.norm() < 1e-15);
        let a = gen_disturbance(&DisturbanceProfile::adversarial(1.0), 0, &x, &env, &mut rng);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert!((a[0] - 0.6 / 2f64.sqrt()).abs() < 1e-12 && (a[1] - 0.8 / 2f64.sqrt()).abs() < 1e-12);
        let lost = DVector::from_vec(vec![0.0, -100.0, 0.0, 0.0]);
        let back = gen_disturbance(&DisturbanceProfile::adversarial(1.0), 0, &lost, &env, &mut rng);
        assert!(back[1] > 0.0 && (back.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_statistics() {
        let env = open(vec![]);
        let x = DVector::zeros(4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..25_000)
            .flat_map(|t| gen_disturbance(&DisturbanceProfile::gaussian(), t, &x, &env, &mut rng).data.as_vec().clone())
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let std = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.01 && (std - 0.5).abs() < 0.02, "{mean} {std}");
    }

    #[test]
    fn pass_sides_by_lateral_sign() {
        let env = open(vec![Obstacle::new(0.0, 10.0, 1.0), Obstacle::new(0.0, 20.0, 1.0), Obstacle::new(0.0, 90.0, 1.0)]);
        let traj: Vec<_> = (0..=25).map(|i| Vector2::new(if i < 15 { -3.0 } else { 3.0 }, i as f64)).collect();
        assert_eq!(pass_sides(&traj, &env), vec![Some(Side::Left), Some(Side::Right), None]);
    }

    #[test]
    fn obstacle_file() {
        let obs = parse_obstacles("# field\n1 2 3\n\n-4.5 6 0.5  # tail\n").unwrap();
        assert_eq!(obs, vec![Obstacle::new(1.0, 2.0, 3.0), Obstacle::new(-4.5, 6.0, 0.5)]);
        assert!(parse_obstacles("1 2").is_err());
        assert!(parse_obstacles("1 2 -1").is_err());
    }

    #[test]
    fn profile_toml() {
        #[derive(Deserialize)]
        struct W {
            disturbance: DisturbanceProfile,
        }
        let w: W = toml::from_str("[disturbance]\nkind = \"sinusoid\"\nperiod = 10\n").unwrap();
        assert_eq!(w.disturbance, DisturbanceProfile::Sinusoid { amplitude: SINUSOID_AMPLITUDE, period: 10.0, phase: 0.0, axis: 0 });
    }
}
