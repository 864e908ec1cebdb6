//! Experiment runner: configuration, episodes, metrics, studies and CSV
//! output.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dac::DacPolicy;
use crate::envsim::{
    collided_obstacles, collision_check, embed, gen_disturbance, load_obstacles, make_centerline, make_offset_corridor,
    make_random_field, make_slalom, pass_sides, DisturbanceProfile, Environment, Side,
};
use crate::error::{Error, Result};
use crate::game::GameParams;
use crate::lindyn::{Bounds, LinSystem, StabilizedSystem};
use crate::olc::{hindsight_best, stability_quantiles, Olc, OlcParams, UpdateRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Controller {
    Olc,
    Nominal,
    Zero,
}

impl Controller {
    pub fn name(self) -> &'static str {
        match self {
            Self::Olc => "olc",
            Self::Nominal => "nominal",
            Self::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Update {
    Gd,
    Fpl,
}

/// Which position components the reward's distance term measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceAxes {
    Lateral,
    Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub dt: f64,
    pub speed: f64,
    /// LQR weights, as multiples of the identity.
    pub lqr_q: f64,
    pub lqr_r: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self { dt: 1.0, speed: 8.0, lqr_q: 1e-3, lqr_r: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OlcConfig {
    pub controller: Controller,
    pub update: Update,
    /// Defaults to the steps needed to traverse the environment.
    pub horizon: Option<usize>,
    pub h: usize,
    pub eta: f64,
    pub lambda: f64,
    pub eps: f64,
    pub d_m: f64,
    /// Reward weights, as multiples of the identity.
    pub q: f64,
    pub r: f64,
    pub lr: f64,
    pub game_iters: usize,
    pub hindsight_iters: usize,
    pub eg_rate: Option<f64>,
    pub safety_horizon: usize,
    pub distance: DistanceAxes,
    pub c_w: f64,
    pub snapshot_every: usize,
    pub seeds: Vec<u64>,
    /// Compute the hindsight comparator and regret for each run.
    pub regret: bool,
}

impl Default for OlcConfig {
    fn default() -> Self {
        Self {
            controller: Controller::Olc,
            update: Update::Gd,
            horizon: None,
            h: 10,
            eta: 1.0,
            lambda: 1.0,
            eps: 1e-9,
            d_m: 2.0,
            q: 1e-3,
            r: 1.0,
            lr: 0.005,
            game_iters: 50,
            hindsight_iters: 500,
            eg_rate: None,
            safety_horizon: 5,
            distance: DistanceAxes::Lateral,
            c_w: 1.0,
            snapshot_every: 10,
            seeds: vec![0],
            regret: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Centerline,
    Slalom,
    RandomField,
    OffsetCorridor,
    File,
}

/// Preset name plus its parameters; unset parameters take preset defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub preset: Preset,
    pub n_obstacles: Option<usize>,
    pub spacing: Option<f64>,
    pub radius: Option<f64>,
    pub offset: Option<f64>,
    pub gate_width: Option<f64>,
    pub n_gates: Option<usize>,
    pub width: Option<f64>,
    pub length: Option<f64>,
    pub jitter: Option<f64>,
    pub seed: u64,
    pub file: Option<PathBuf>,
    pub sensor_radius: Option<f64>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Centerline,
            n_obstacles: None,
            spacing: None,
            radius: None,
            offset: None,
            gate_width: None,
            n_gates: None,
            width: None,
            length: None,
            jitter: None,
            seed: 0,
            file: None,
            sensor_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub offsets: Vec<f64>,
    pub widths: Vec<f64>,
    pub trials: usize,
    /// Policy radius and distance axes used on the slalom in place of the
    /// `[olc]` values.
    pub d_m: f64,
    pub distance: DistanceAxes,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            offsets: vec![0.0, 5.0, 10.0, 15.0],
            widths: vec![24.0, 12.0, 6.0, 3.0],
            trials: 5,
            d_m: 0.5,
            distance: DistanceAxes::Position,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub horizons: Vec<usize>,
    pub profiles: Vec<String>,
    pub controllers: Vec<Controller>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            horizons: vec![50, 100, 200, 400],
            profiles: vec!["gaussian".into(), "sinusoid".into(), "adversarial".into()],
            controllers: vec![Controller::Olc, Controller::Nominal, Controller::Zero],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub olc: OlcConfig,
    pub env: EnvConfig,
    pub disturbance: DisturbanceProfile,
    pub sweep: SweepConfig,
    pub study: StudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            olc: OlcConfig::default(),
            env: EnvConfig::default(),
            disturbance: DisturbanceProfile::gaussian(),
            sweep: SweepConfig::default(),
            study: StudyConfig::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let to_cfg = |e: Error| match e {
            Error::Contract(m) => Error::Config(m),
            other => other,
        };
        if self.olc.seeds.is_empty() {
            return Err(config_err("[olc] seeds must be nonempty"));
        }
        if !(self.system.lqr_q > 0.0 && self.system.lqr_r > 0.0) {
            return Err(config_err("[system] LQR weights must be positive"));
        }
        if !(self.olc.q >= 0.0 && self.olc.r >= 0.0) {
            return Err(config_err("[olc] q and r must be nonnegative"));
        }
        self.disturbance.validate().map_err(to_cfg)?;
        let env = self.environment().map_err(to_cfg)?;
        let ss = self.stabilized().map_err(to_cfg)?;
        self.olc_params(&ss, &env).map_err(to_cfg)?.validate().map_err(to_cfg)?;
        Ok(())
    }

    pub fn environment(&self) -> Result<Environment> {
        let e = &self.env;
        let env = match e.preset {
            Preset::Centerline => {
                make_centerline(e.n_obstacles.unwrap_or(50), e.spacing.unwrap_or(160.0), e.radius.unwrap_or(30.0))?
            }
            Preset::Slalom => make_slalom(e.offset.unwrap_or(0.0), e.gate_width.unwrap_or(12.0), e.n_gates.unwrap_or(4))?,
            Preset::RandomField => make_random_field(
                e.n_obstacles.unwrap_or(40),
                e.width.unwrap_or(200.0),
                e.length.unwrap_or(2000.0),
                e.radius.unwrap_or(30.0),
                e.seed,
            )?,
            Preset::OffsetCorridor => make_offset_corridor(
                e.n_obstacles.unwrap_or(20),
                e.spacing.unwrap_or(160.0),
                e.offset.unwrap_or(20.0),
                e.radius.unwrap_or(15.0),
                e.jitter.unwrap_or(5.0),
                e.seed,
            )?,
            Preset::File => {
                let path = e.file.as_ref().ok_or_else(|| config_err("[env] preset \"file\" needs `file`"))?;
                let obstacles = load_obstacles(path)?;
                let reach = obstacles.iter().map(|o| o.center.y + o.radius).fold(0.0, f64::max);
                let length = e.length.unwrap_or(reach);
                let steps = (length / (crate::envsim::DEFAULT_SPEED * crate::envsim::DEFAULT_DT)).ceil() as usize + 1;
                Environment::new(
                    obstacles,
                    crate::envsim::DEFAULT_SENSOR_RADIUS,
                    crate::envsim::DEFAULT_ROBOT_RADIUS,
                    crate::envsim::DEFAULT_SPEED,
                    crate::envsim::DEFAULT_DT,
                    steps,
                )?
            }
        };
        let env = env.with_kinematics(self.system.speed, self.system.dt)?;
        match e.sensor_radius {
            Some(r) => env.with_sensor_radius(r),
            None => Ok(env),
        }
    }

    pub fn system(&self) -> Result<LinSystem> {
        LinSystem::double_integrator(self.system.dt)
    }

    pub fn stabilized(&self) -> Result<StabilizedSystem> {
        let sys = self.system()?;
        StabilizedSystem::stabilize(
            &sys,
            &(DMatrix::identity(4, 4) * self.system.lqr_q),
            &(DMatrix::identity(2, 2) * self.system.lqr_r),
        )
    }

    pub fn horizon(&self, env: &Environment) -> usize {
        self.olc.horizon.unwrap_or(env.steps())
    }

    pub fn olc_params(&self, ss: &StabilizedSystem, env: &Environment) -> Result<OlcParams> {
        let o = &self.olc;
        let update = match o.update {
            Update::Gd => UpdateRule::GradDescent { lr: o.lr },
            Update::Fpl => UpdateRule::FplGame(GameParams { n_iters: o.game_iters, eg_rate: o.eg_rate, tol: o.eps, polish: false }),
        };
        let proj = match o.distance {
            DistanceAxes::Lateral => DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]),
            DistanceAxes::Position => DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        };
        Ok(OlcParams {
            horizon: self.horizon(env),
            h: o.h,
            eta: o.eta,
            lambda: o.lambda,
            eps: o.eps,
            d_m: o.d_m,
            q: DMatrix::identity(ss.dx(), ss.dx()) * o.q,
            r: DMatrix::identity(ss.du(), ss.du()) * o.r,
            update,
            safety_horizon: o.safety_horizon,
            proj: Some(proj),
            c_w: o.c_w,
            snapshot_every: o.snapshot_every,
        })
    }

    pub fn hindsight_params(&self) -> GameParams {
        GameParams { n_iters: self.olc.hindsight_iters, eg_rate: self.olc.eg_rate, tol: self.olc.eps, polish: true }
    }

    /// The named profile, taking parameters from `[disturbance]` when it is
    /// of the same kind.
    pub fn profile_named(&self, name: &str) -> Result<DisturbanceProfile> {
        if self.disturbance.name() == name {
            return Ok(self.disturbance);
        }
        Ok(match name {
            "zero" => DisturbanceProfile::Zero,
            "gaussian" => DisturbanceProfile::gaussian(),
            "directional" => DisturbanceProfile::directional(),
            "sinusoid" => DisturbanceProfile::sinusoid(),
            "adversarial" => DisturbanceProfile::adversarial(self.olc.c_w),
            other => return Err(config_err(format!("unknown disturbance profile `{other}`"))),
        })
    }
}

/// Per-seed outcome of one episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub seed: u64,
    pub controller: &'static str,
    pub profile: &'static str,
    pub steps: usize,
    pub solver_failed: bool,
    pub collisions: usize,
    pub obstacles: usize,
    pub collided_obstacles: usize,
    pub collision_fraction: f64,
    pub lq_cost: f64,
    pub c_obs: f64,
    pub pass_left: usize,
    pub pass_right: usize,
    pub reward: f64,
    pub hindsight: Option<f64>,
    pub regret: Option<f64>,
    pub policy_step_median: Option<f64>,
}

impl RunRow {
    /// Any collision or a solver failure.
    pub fn failed(&self) -> bool {
        self.solver_failed || self.collisions > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub t: usize,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
    pub reward: f64,
    pub min_distance: f64,
    pub sensed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub row: RunRow,
    pub steps: Vec<StepRow>,
    pub snapshots: Vec<(usize, DacPolicy)>,
    pub error: Option<String>,
}

struct Trace {
    steps: Vec<StepRow>,
    positions: Vec<Vector2<f64>>,
    sensed: Vec<Vec<Vector2<f64>>>,
    lq: f64,
}

/// Closed loop for `T` steps: sense, act, disturb, step, observe.
pub fn run_episode(config: &RunConfig, seed: u64) -> Result<Episode> {
    let env = config.environment()?;
    let ss = config.stabilized()?;
    let params = config.olc_params(&ss, &env)?;
    let controller = config.olc.controller;
    let horizon = params.horizon;
    let mut olc = match controller {
        Controller::Olc => Some(Olc::new(params.clone(), &ss, seed)?),
        _ => None,
    };
    let far = 10.0 * Bounds::new(&ss, params.h, params.d_m, params.c_w, xi(&params))?.c_x;
    let proj = params.proj.clone().unwrap_or_else(|| DMatrix::identity(ss.dx(), ss.dx()));
    let sys = ss.base();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut tr = Trace { steps: Vec::with_capacity(horizon), positions: Vec::with_capacity(horizon + 1), sensed: Vec::new(), lq: 0.0 };
    let mut x = DVector::zeros(ss.dx());
    tr.positions.push(env.position(0, &x));
    let mut error = None;
    for t in 0..horizon {
        if env.replans_at(t) {
            x = DVector::zeros(ss.dx());
        }
        let pos = env.position(t, &x);
        tr.sensed.push(env.sense(&pos, t).iter().map(|p| p + env.nominal(t)).collect());
        let u = match (&mut olc, controller) {
            (Some(o), _) => match o.act(&x) {
                Ok(u) => u,
                Err(e) => {
                    error = Some(e);
                    break;
                }
            },
            (None, Controller::Nominal) => ss.k() * &x,
            _ => DVector::zeros(ss.du()),
        };
        let w = gen_disturbance(&config.disturbance, t, &x, &env, &mut rng);
        let x_next = sys.step(&x, &u, &w)?;
        let pos_next = env.position(t + 1, &x_next);
        let sensed: Vec<DVector<f64>> = env.sense(&pos_next, t + 1).iter().map(embed).collect();
        let reward = match &mut olc {
            Some(o) => match o.observe_and_update(&x_next, &sensed) {
                Ok(r) => r,
                Err(e) => {
                    error = Some(e);
                    break;
                }
            },
            None => {
                let resid = &u - ss.k() * &x;
                realized_reward(&proj, &params.q, &params.r, &x_next, &resid, &sensed, far)
            }
        };
        tr.lq += x.dot(&(&params.q * &x)) + u.dot(&(&params.r * &u));
        tr.steps.push(StepRow {
            t,
            x: x.clone(),
            u,
            w,
            reward,
            min_distance: env.clearance(&pos_next),
            sensed: sensed.len(),
        });
        tr.positions.push(pos_next);
        x = x_next;
    }
    let solver_failed = match error {
        Some(e @ (Error::SolverFailure { .. } | Error::ReconstructionUnavailable(_))) => Some(e.to_string()),
        Some(e) => return Err(e),
        None => None,
    };

    let hit = collided_obstacles(&tr.positions, &env);
    let reached = obstacles_reached(&tr.positions, &env);
    let collided = hit.iter().filter(|h| **h).count();
    let (collisions, _) = collision_check(&tr.positions, &env);
    let sides = pass_sides(&tr.positions, &env);
    let c_obs = c_obs(&tr, &proj, &params.q, &params.r, params.safety_horizon, far);
    let reward: f64 = tr.steps.iter().map(|s| s.reward).sum();

    let (mut hindsight, mut regret) = (None, None);
    let mut snapshots = Vec::new();
    let mut policy_step_median = None;
    if let Some(o) = &olc {
        if config.olc.regret && solver_failed.is_none() && !o.records().is_empty() {
            let (_, best) = hindsight_best(o.objective(), o.records(), &config.hindsight_params())?;
            hindsight = Some(best);
            regret = Some(best - o.cumulative_reward());
        }
        snapshots = o.log().snapshots.clone();
        policy_step_median = stability_quantiles(o.log()).map(|q| q.1);
    }
    let row = RunRow {
        seed,
        controller: controller.name(),
        profile: config.disturbance.name(),
        steps: tr.steps.len(),
        solver_failed: solver_failed.is_some(),
        collisions,
        obstacles: reached,
        collided_obstacles: collided,
        collision_fraction: if solver_failed.is_some() {
            1.0
        } else if reached == 0 {
            0.0
        } else {
            collided as f64 / reached as f64
        },
        lq_cost: tr.lq,
        c_obs,
        pass_left: sides.iter().filter(|s| **s == Some(Side::Left)).count(),
        pass_right: sides.iter().filter(|s| **s == Some(Side::Right)).count(),
        reward,
        hindsight,
        regret,
        policy_step_median,
    };
    Ok(Episode { row, steps: tr.steps, snapshots, error: solver_failed })
}

fn xi(p: &OlcParams) -> f64 {
    crate::lindyn::spectral_norm(&p.q).max(crate::lindyn::spectral_norm(&p.r)).max(1e-12)
}

/// The one-step reward the learner optimizes, evaluated on a realized step.
pub fn realized_reward(
    proj: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x_next: &DVector<f64>,
    resid: &DVector<f64>,
    sensed: &[DVector<f64>],
    far: f64,
) -> f64 {
    let dist = if sensed.is_empty() {
        far * far
    } else {
        sensed.iter().map(|p| (proj * (x_next - p)).norm_squared()).fold(f64::INFINITY, f64::min)
    };
    dist - x_next.dot(&(q * x_next)) - resid.dot(&(r * resid))
}

/// Obstacles whose center the trajectory reached along-track.
fn obstacles_reached(traj: &[Vector2<f64>], env: &Environment) -> usize {
    let reach = traj.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    env.obstacles().iter().filter(|o| o.center.y <= reach).count()
}

/// `Σ_t [min_{τ∈1..=L} min_j ‖S(pos_{t+τ} − p_t^j)‖² − ‖x_t‖²_Q − ‖u_t‖²_R]`
/// with the window truncated at the episode end.
fn c_obs(tr: &Trace, proj: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, l: usize, far: f64) -> f64 {
    let n = tr.steps.len();
    let mut total = 0.0;
    for (t, step) in tr.steps.iter().enumerate() {
        let obs = &tr.sensed[t];
        let dist = if obs.is_empty() {
            far * far
        } else {
            let mut best = f64::INFINITY;
            for tau in 1..=l.min(n - t) {
                let p = tr.positions[t + tau];
                for c in obs {
                    best = best.min((proj * embed(&(p - c))).norm_squared());
                }
            }
            best
        };
        total += dist - step.x.dot(&(q * &step.x)) - step.u.dot(&(r * &step.u));
    }
    total
}

/// Episodes for every seed, in parallel, returned in seed order.
pub fn run_seeds(config: &RunConfig, seeds: &[u64]) -> Result<Vec<Episode>> {
    seeds.par_iter().map(|&s| run_episode(config, s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(v: &[f64]) -> Self {
        if v.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableCell {
    pub controller: &'static str,
    pub profile: &'static str,
    pub runs: usize,
    pub lq_mean: f64,
    pub lq_std: f64,
    pub collision_mean: f64,
    pub collision_std: f64,
    pub pass_left: usize,
    pub pass_right: usize,
    pub solver_failures: usize,
}

impl TableCell {
    pub fn from_rows(rows: &[RunRow]) -> Option<Self> {
        let first = rows.first()?;
        let lq = Stat::of(&rows.iter().map(|r| r.lq_cost).collect::<Vec<_>>());
        let col = Stat::of(&rows.iter().map(|r| r.collision_fraction).collect::<Vec<_>>());
        Some(Self {
            controller: first.controller,
            profile: first.profile,
            runs: rows.len(),
            lq_mean: lq.mean,
            lq_std: lq.std,
            collision_mean: col.mean,
            collision_std: col.std,
            pass_left: rows.iter().map(|r| r.pass_left).sum(),
            pass_right: rows.iter().map(|r| r.pass_right).sum(),
            solver_failures: rows.iter().filter(|r| r.solver_failed).count(),
        })
    }

    /// Share of passes on the more frequent side.
    pub fn dominant_side(&self) -> f64 {
        let n = self.pass_left + self.pass_right;
        if n == 0 {
            return f64::NAN;
        }
        self.pass_left.max(self.pass_right) as f64 / n as f64
    }
}

/// Controllers × profiles, each cell aggregated over the configured seeds.
pub fn table_experiment(config: &RunConfig, profiles: &[DisturbanceProfile], controllers: &[Controller]) -> Result<Vec<TableCell>> {
    let mut jobs = Vec::new();
    for &c in controllers {
        for p in profiles {
            let mut cfg = config.clone();
            cfg.olc.controller = c;
            cfg.disturbance = *p;
            jobs.push(cfg);
        }
    }
    let seeds = &config.olc.seeds;
    let rows: Vec<Vec<RunRow>> = jobs
        .par_iter()
        .map(|cfg| Ok(run_seeds(cfg, seeds)?.into_iter().map(|e| e.row).collect()))
        .collect::<Result<_>>()?;
    Ok(rows.iter().filter_map(|r| TableCell::from_rows(r)).collect())
}

pub fn render_table(cells: &[TableCell]) -> String {
    let mut profiles: Vec<&str> = Vec::new();
    let mut controllers: Vec<&str> = Vec::new();
    for c in cells {
        if !profiles.contains(&c.profile) {
            profiles.push(c.profile);
        }
        if !controllers.contains(&c.controller) {
            controllers.push(c.controller);
        }
    }
    let mut out = format!("{:<10}", "");
    for p in &profiles {
        out += &format!(" | {p:^30}");
    }
    out.push('\n');
    for ctl in &controllers {
        out += &format!("{ctl:<10}");
        for p in &profiles {
            match cells.iter().find(|c| c.controller == *ctl && c.profile == *p) {
                Some(c) => {
                    out += &format!(" | {:>10.3} ± {:<8.3} fail {:>5.3}", c.lq_mean, c.lq_std, c.collision_mean);
                }
                None => out += &format!(" | {:^30}", "-"),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub offsets: Vec<f64>,
    pub widths: Vec<f64>,
    pub trials: usize,
    /// `failure[i][j]` for `widths[i]`, `offsets[j]`.
    pub failure: Vec<Vec<f64>>,
}

/// Slalom failure rates over a width × offset grid; trial `k` of each cell
/// uses seed `k`.
pub fn sweep_slalom(config: &RunConfig, sweep: &SweepConfig) -> Result<SweepGrid> {
    if sweep.offsets.is_empty() || sweep.widths.is_empty() || sweep.trials == 0 || !(sweep.d_m > 0.0) {
        return Err(config_err("[sweep] needs offsets, widths and trials"));
    }
    let cells: Vec<(usize, usize)> = (0..sweep.widths.len()).flat_map(|i| (0..sweep.offsets.len()).map(move |j| (i, j))).collect();
    let seeds: Vec<u64> = (0..sweep.trials as u64).collect();
    let rates: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            let mut cfg = config.clone();
            cfg.env.preset = Preset::Slalom;
            cfg.env.gate_width = Some(sweep.widths[i]);
            cfg.env.offset = Some(sweep.offsets[j]);
            cfg.olc.d_m = sweep.d_m;
            cfg.olc.distance = sweep.distance;
            let eps = run_seeds(&cfg, &seeds)?;
            Ok(eps.iter().filter(|e| e.row.failed()).count() as f64 / seeds.len() as f64)
        })
        .collect::<Result<_>>()?;
    let failure = rates.chunks(sweep.offsets.len()).map(<[f64]>::to_vec).collect();
    Ok(SweepGrid { offsets: sweep.offsets.clone(), widths: sweep.widths.clone(), trials: sweep.trials, failure })
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = r;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretRow {
    pub horizon: usize,
    pub seed: u64,
    pub reward: f64,
    pub hindsight: f64,
    pub regret: f64,
    pub regret_per_step: f64,
}

/// Empirical regret of the learner for every horizon and seed.
pub fn regret_study(config: &RunConfig, horizons: &[usize]) -> Result<Vec<RegretRow>> {
    let jobs: Vec<(usize, u64)> = horizons.iter().flat_map(|&t| config.olc.seeds.iter().map(move |&s| (t, s))).collect();
    jobs.par_iter()
        .map(|&(t, seed)| {
            let mut cfg = config.clone();
            cfg.olc.controller = Controller::Olc;
            cfg.olc.horizon = Some(t);
            cfg.olc.regret = true;
            cfg.olc.safety_horizon = cfg.olc.safety_horizon.min(t);
            let ep = run_episode(&cfg, seed)?;
            let (hindsight, regret) = match (ep.row.hindsight, ep.row.regret) {
                (Some(h), Some(r)) => (h, r),
                _ => return Err(Error::SolverFailure { iterations: 0, residual: f64::NAN }),
            };
            Ok(RegretRow { horizon: t, seed, reward: ep.row.reward, hindsight, regret, regret_per_step: regret / t as f64 })
        })
        .collect()
}

/// Mean `Reg_T / T` per horizon, in the order given.
pub fn mean_regret_per_step(rows: &[RegretRow], horizons: &[usize]) -> Vec<f64> {
    horizons
        .iter()
        .map(|&t| Stat::of(&rows.iter().filter(|r| r.horizon == t).map(|r| r.regret_per_step).collect::<Vec<_>>()).mean)
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_runs_csv<W: Write>(rows: &[RunRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "seed",
        "controller",
        "profile",
        "steps",
        "solver_failed",
        "collisions",
        "obstacles",
        "collided_obstacles",
        "collision_fraction",
        "lq_cost",
        "c_obs",
        "pass_left",
        "pass_right",
        "reward",
        "hindsight",
        "regret",
        "policy_step_median",
    ])?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.controller.to_string(),
            r.profile.to_string(),
            r.steps.to_string(),
            r.solver_failed.to_string(),
            r.collisions.to_string(),
            r.obstacles.to_string(),
            r.collided_obstacles.to_string(),
            r.collision_fraction.to_string(),
            r.lq_cost.to_string(),
            r.c_obs.to_string(),
            r.pass_left.to_string(),
            r.pass_right.to_string(),
            r.reward.to_string(),
            opt(r.hindsight),
            opt(r.regret),
            opt(r.policy_step_median),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_episode_csv<W: Write>(steps: &[StepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = steps.first() else {
        w.write_record(["t", "reward", "min_distance", "sensed"])?;
        w.flush()?;
        return Ok(());
    };
    let mut header = vec!["t".to_string()];
    header.extend((0..first.x.len()).map(|i| format!("x{i}")));
    header.extend((0..first.u.len()).map(|i| format!("u{i}")));
    header.extend((0..first.w.len()).map(|i| format!("w{i}")));
    header.extend(["reward", "min_distance", "sensed"].map(String::from));
    w.write_record(&header)?;
    for s in steps {
        let mut rec = vec![s.t.to_string()];
        rec.extend(s.x.iter().chain(s.u.iter()).chain(s.w.iter()).map(f64::to_string));
        rec.extend([s.reward.to_string(), s.min_distance.to_string(), s.sensed.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per snapshot: `t` then the gains in column-major order.
pub fn write_policy_trace_csv<W: Write>(snapshots: &[(usize, DacPolicy)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = snapshots.first().map_or(0, |(_, p)| p.gains().len());
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("m{i}")));
    w.write_record(&header)?;
    for (t, p) in snapshots {
        let mut rec = vec![t.to_string()];
        rec.extend(p.gains().iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table_csv<W: Write>(cells: &[TableCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(grid: &SweepGrid, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gate_width", "offset", "trials", "failure_rate"])?;
    for (i, width) in grid.widths.iter().enumerate() {
        for (j, offset) in grid.offsets.iter().enumerate() {
            w.write_record([width.to_string(), offset.to_string(), grid.trials.to_string(), grid.failure[i][j].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_regret_csv<W: Write>(rows: &[RegretRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
