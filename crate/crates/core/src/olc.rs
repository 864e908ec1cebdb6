//! Online learning controller: follow-the-perturbed-leader over
//! disturbance-action policies.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};

use crate::dac::{control, project_frobenius, DacPolicy, DisturbanceHistory};
use crate::error::{check_dim, contract, Result};
use crate::game::{run_game, run_game_with, GameParams, Objective, RewardRecord};
use crate::lindyn::{Bounds, StabilizedSystem};
use crate::trs::{EigenQuadratic, InstanceParts};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    /// Re-solve the perturbed leader problem with the game each step.
    FplGame(GameParams),
    /// One projected gradient ascent step per observation.
    GradDescent { lr: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlcParams {
    pub horizon: usize,
    pub h: usize,
    pub eta: f64,
    pub lambda: f64,
    pub eps: f64,
    pub d_m: f64,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub update: UpdateRule,
    /// Safety horizon. Only the metrics use it; the reward is one-step.
    pub safety_horizon: usize,
    /// Maps a state to the coordinates distances are measured in.
    pub proj: Option<DMatrix<f64>>,
    /// Disturbance norm bound, used for the sentinel distance.
    pub c_w: f64,
    pub snapshot_every: usize,
}

impl OlcParams {
    pub fn new(dx: usize, du: usize) -> Self {
        Self {
            horizon: 100,
            h: 10,
            eta: 1.0,
            lambda: 1.0,
            eps: 1e-9,
            d_m: 1.0,
            q: DMatrix::identity(dx, dx) * 1e-3,
            r: DMatrix::identity(du, du),
            update: UpdateRule::GradDescent { lr: 0.005 },
            safety_horizon: 5,
            proj: None,
            c_w: 1.0,
            snapshot_every: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.h > self.horizon {
            return Err(contract(format!("need 1 <= H <= T, got H = {} and T = {}", self.h, self.horizon)));
        }
        if !(self.eta > 0.0) || !(self.lambda >= 0.0) || !(self.d_m > 0.0) || !(self.c_w > 0.0) {
            return Err(contract("eta, D_M and C_w must be positive and lambda nonnegative"));
        }
        if !(self.eps > 0.0) {
            return Err(contract("eps must be positive"));
        }
        if self.safety_horizon == 0 || self.safety_horizon > self.horizon {
            return Err(contract("safety horizon must lie in 1..=T"));
        }
        if self.snapshot_every == 0 {
            return Err(contract("snapshot interval must be positive"));
        }
        match self.update {
            UpdateRule::GradDescent { lr } if !(lr > 0.0) => Err(contract("learning rate must be positive")),
            UpdateRule::FplGame(g) if g.n_iters == 0 => Err(contract("game needs at least one iteration")),
            _ => Ok(()),
        }
    }

    fn xi(&self) -> f64 {
        crate::lindyn::spectral_norm(&self.q).max(crate::lindyn::spectral_norm(&self.r)).max(1e-12)
    }
}

/// Everything logged per episode. Index `t` of `states`, `inputs` and
/// `disturbances` refers to the same step; `rewards[t]` is the reward
/// realized at `x_{t+1}` by the policy played at `t`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OlcLog {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub disturbances: Vec<DVector<f64>>,
    pub rewards: Vec<f64>,
    pub sensed: Vec<usize>,
    /// `(t, M_t)` every `snapshot_every` steps.
    pub snapshots: Vec<(usize, DacPolicy)>,
    /// `‖M_{t+1} − M_t‖_F` of the learner after warm-up.
    pub policy_steps: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Pending {
    x: DVector<f64>,
    u: DVector<f64>,
    b: DVector<f64>,
    gains: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Olc {
    params: OlcParams,
    obj: Objective,
    far: f64,
    learner: DacPolicy,
    p0: DMatrix<f64>,
    rng: ChaCha8Rng,
    hist: DisturbanceHistory,
    pending: Option<Pending>,
    parts: InstanceParts,
    records: Vec<RewardRecord>,
    log: OlcLog,
    t: usize,
}

impl Olc {
    pub fn new(params: OlcParams, ss: &StabilizedSystem, seed: u64) -> Result<Self> {
        params.validate()?;
        let (du, dw, h) = (ss.du(), ss.dw(), params.h);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(OLC_STREAM);
        let exp = Exp::new(params.eta).map_err(|e| contract(format!("eta: {e}")))?;
        let p0 = DMatrix::from_fn(du, h * (dw + 1), |_, _| rng.sample(exp));
        let mut obj = Objective::new(ss.clone(), h, params.d_m)?
            .with_costs(params.q.clone(), params.r.clone())?
            .with_perturbation(params.lambda, p0.clone())?;
        if let Some(s) = &params.proj {
            obj = obj.with_projection(s.clone())?;
        }
        let bounds = Bounds::new(ss, h, params.d_m, params.c_w, params.xi())?;
        let parts = InstanceParts::empty(&obj);
        Ok(Self {
            far: 10.0 * bounds.c_x,
            learner: DacPolicy::zeros(du, dw, h, params.d_m)?,
            hist: DisturbanceHistory::new(dw, h),
            params,
            obj,
            p0,
            rng,
            pending: None,
            parts,
            records: Vec::new(),
            log: OlcLog::default(),
            t: 0,
        })
    }

    pub fn params(&self) -> &OlcParams {
        &self.params
    }
    pub fn objective(&self) -> &Objective {
        &self.obj
    }
    pub fn perturbation(&self) -> &DMatrix<f64> {
        &self.p0
    }
    /// The learner's current policy; warm-up steps play random policies
    /// instead.
    pub fn policy(&self) -> &DacPolicy {
        &self.learner
    }
    pub fn records(&self) -> &[RewardRecord] {
        &self.records
    }
    pub fn log(&self) -> &OlcLog {
        &self.log
    }
    pub fn into_log(self) -> OlcLog {
        self.log
    }
    pub fn time(&self) -> usize {
        self.t
    }
    pub fn sentinel_distance(&self) -> f64 {
        self.far
    }
    pub fn in_warmup(&self) -> bool {
        self.t < self.params.h
    }

    pub fn act(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if self.pending.is_some() {
            return Err(contract("act called twice without observe_and_update"));
        }
        let ss = self.obj.system();
        let policy = if self.in_warmup() {
            let (du, dw, h) = (ss.du(), ss.dw(), self.params.h);
            DacPolicy::new(sample_ball(&mut self.rng, du, h * (dw + 1), self.params.d_m), h, dw, self.params.d_m)?
        } else {
            self.learner.clone()
        };
        if self.t.is_multiple_of(self.params.snapshot_every) {
            self.log.snapshots.push((self.t, policy.clone()));
        }
        let u = control(&policy, ss, x, &self.hist)?;
        self.pending = Some(Pending { x: x.clone(), u: u.clone(), b: self.hist.stack(self.params.h), gains: policy.gains().clone() });
        Ok(u)
    }

    /// `obstacles` are the positions sensed at `x_next`, embedded in state
    /// coordinates. Returns the reward the played policy earned.
    pub fn observe_and_update(&mut self, x_next: &DVector<f64>, obstacles: &[DVector<f64>]) -> Result<f64> {
        let pending = self.pending.take().ok_or_else(|| contract("observe_and_update called before act"))?;
        let ss = self.obj.system();
        check_dim("x_next", x_next.len(), ss.dx())?;
        let w = ss.base().reconstruct_disturbance(&pending.x, &pending.u, x_next)?;
        let b0 = ss.a_cl() * &pending.x + ss.d() * &w;
        let rec = RewardRecord::new(self.t + 1, b0, pending.b, obstacles, self.far)?;
        let reward = self.obj.record_reward(&rec, &pending.gains);
        self.hist.push(&w)?;
        self.parts.push(&self.obj, &rec)?;
        self.records.push(rec);
        self.log.states.push(pending.x);
        self.log.inputs.push(pending.u);
        self.log.disturbances.push(w);
        self.log.rewards.push(reward);
        self.log.sensed.push(obstacles.len());

        let next = self.next_policy()?;
        if self.t + 1 >= self.params.h {
            self.log.policy_steps.push((next.gains() - self.learner.gains()).norm());
        }
        self.learner = next;
        self.t += 1;
        Ok(reward)
    }

    fn next_policy(&self) -> Result<DacPolicy> {
        let (h, dw, d_m) = (self.params.h, self.obj.system().dw(), self.params.d_m);
        match self.params.update {
            UpdateRule::FplGame(game) => {
                let eig = EigenQuadratic::new(&self.parts.p_mat())?;
                let params = GameParams { tol: self.params.eps.min(game.tol), ..game };
                Ok(run_game_with(&self.obj, &self.records, &self.parts, Some(&eig), &params)?.policy)
            }
            UpdateRule::GradDescent { lr } => {
                let rec = self.records.last().expect("record just pushed");
                let (_, g) = self.obj.record_reward_grad(rec, self.learner.gains(), 0.0);
                let pert = &self.p0 * (self.params.lambda / self.params.horizon as f64);
                let mut m = self.learner.gains() + (g + pert) * lr;
                project_frobenius(&mut m, d_m);
                DacPolicy::new(m, h, dw, d_m)
            }
        }
    }

    /// Total reward the learner collected so far.
    pub fn cumulative_reward(&self) -> f64 {
        self.log.rewards.iter().sum()
    }
}

const OLC_STREAM: u64 = 1;

/// Uniform sample from the Frobenius ball of the given radius.
pub fn sample_ball<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, radius: f64) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n = m.norm();
    let d = (rows * cols) as f64;
    let scale = radius * rng.random::<f64>().powf(1.0 / d);
    if n > 0.0 {
        m *= scale / n;
    }
    project_frobenius(&mut m, radius);
    m
}

/// Best fixed policy in hindsight for the unperturbed objective, and its
/// total reward.
pub fn hindsight_best(obj: &Objective, records: &[RewardRecord], params: &GameParams) -> Result<(DacPolicy, f64)> {
    let out = run_game(&obj.without_perturbation(), records, params)?;
    Ok((out.policy, out.value))
}

/// `Reg_T = max_M Σ ℓ_t(M) − Σ ℓ_t(M_t)`.
pub fn empirical_regret(olc: &Olc, params: &GameParams) -> Result<f64> {
    if olc.records().is_empty() {
        return Err(contract("empty episode"));
    }
    let (_, best) = hindsight_best(olc.objective(), olc.records(), params)?;
    Ok(best - olc.cumulative_reward())
}

/// Quantiles `(q10, q50, q90)` of the learner's per-step policy movement.
pub fn stability_quantiles(log: &OlcLog) -> Option<(f64, f64, f64)> {
    if log.policy_steps.is_empty() {
        return None;
    }
    let mut v = log.policy_steps.clone();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
    Some((q(0.1), q(0.5), q(0.9)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindyn::LinSystem;

    fn racer() -> StabilizedSystem {
        let sys = LinSystem::double_integrator(1.0).unwrap();
        StabilizedSystem::stabilize(&sys, &DMatrix::identity(4, 4), &DMatrix::identity(2, 2)).unwrap()
    }

    fn params(update: UpdateRule) -> OlcParams {
        OlcParams { h: 3, horizon: 60, update, d_m: 1.0, ..OlcParams::new(4, 2) }
    }

    #[test]
    fn perturbation_is_seeded_and_nonnegative() {
        let ss = racer();
        let a = Olc::new(params(UpdateRule::GradDescent { lr: 0.01 }), &ss, 7).unwrap();
        let b = Olc::new(params(UpdateRule::GradDescent { lr: 0.01 }), &ss, 7).unwrap();
        assert_eq!(a.perturbation(), b.perturbation());
        assert!(a.perturbation().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn zero_policy_acts_like_feedback() {
        let ss = racer();
        let mut olc = Olc::new(params(UpdateRule::GradDescent { lr: 0.01 }), &ss, 0).unwrap();
        olc.t = olc.params.h;
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0]);
        assert_eq!(olc.act(&x).unwrap(), ss.k() * &x);
    }

    #[test]
    fn act_observe_order_enforced() {
        let ss = racer();
        let mut olc = Olc::new(params(UpdateRule::GradDescent { lr: 0.01 }), &ss, 0).unwrap();
        assert!(olc.observe_and_update(&DVector::zeros(4), &[]).is_err());
        olc.act(&DVector::zeros(4)).unwrap();
        assert!(olc.act(&DVector::zeros(4)).is_err());
    }

    fn run(olc: &mut Olc, ss: &StabilizedSystem, steps: usize, w: impl Fn(usize) -> DVector<f64>, obs: &[DVector<f64>]) {
        let mut x = DVector::zeros(4);
        for t in 0..steps {
            let u = olc.act(&x).unwrap();
            x = ss.base().step(&x, &u, &w(t)).unwrap();
            olc.observe_and_update(&x, obs).unwrap();
        }
    }

    #[test]
    fn input_penalty_drives_policy_to_zero() {
        let ss = racer();
        for update in [UpdateRule::FplGame(GameParams::in_loop()), UpdateRule::GradDescent { lr: 0.05 }] {
            let p = OlcParams { q: DMatrix::zeros(4, 4), lambda: 0.0, horizon: 400, ..params(update) };
            let mut olc = Olc::new(p, &ss, 3).unwrap();
            run(&mut olc, &ss, 400, |t| DVector::from_fn(4, |i, _| ((t * 7 + i * 3) % 5) as f64 * 0.1 - 0.2), &[]);
            assert!(olc.policy().frobenius_norm() < 1e-3, "{update:?}: {}", olc.policy().frobenius_norm());
        }
    }

    #[test]
    fn bias_steers_away_from_static_obstacle() {
        let ss = racer();
        let p = OlcParams { horizon: 40, ..params(UpdateRule::FplGame(GameParams::in_loop())) };
        let mut olc = Olc::new(p, &ss, 1).unwrap();
        let obstacle = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0]);
        run(&mut olc, &ss, 40, |_| DVector::zeros(4), std::slice::from_ref(&obstacle));
        let obj = olc.objective().without_perturbation();
        let h = olc.params().h;
        for rec in &olc.records()[h..] {
            let learned = obj.record_reward(rec, olc.policy().gains());
            let zero = obj.record_reward(rec, &DMatrix::zeros(2, h * 5));
            assert!(learned > zero, "{learned} <= {zero}");
        }
    }

    #[test]
    fn replay_reproduces_policy() {
        let ss = racer();
        let p = params(UpdateRule::FplGame(GameParams::in_loop()));
        let obs = [DVector::from_vec(vec![0.5, 1.0, 0.0, 0.0]), DVector::from_vec(vec![-0.5, 1.0, 0.0, 0.0])];
        let w = |t: usize| DVector::from_fn(4, |i, _| ((t + i) as f64 * 0.7).sin() * 0.3);
        let mut a = Olc::new(p.clone(), &ss, 5).unwrap();
        let mut b = Olc::new(p, &ss, 5).unwrap();
        run(&mut a, &ss, 20, w, &obs);
        run(&mut b, &ss, 20, w, &obs);
        assert_eq!(a.policy(), b.policy());
        assert_eq!(a.log(), b.log());
        let regen = run_game(a.objective(), a.records(), &GameParams::in_loop()).unwrap();
        assert_eq!(&regen.policy, a.policy());
    }

    #[test]
    fn hindsight_dominates_snapshots() {
        let ss = racer();
        let p = OlcParams { horizon: 30, ..params(UpdateRule::GradDescent { lr: 0.01 }) };
        let mut olc = Olc::new(p, &ss, 9).unwrap();
        let obs = [DVector::from_vec(vec![0.3, 0.0, 0.0, 0.0])];
        run(&mut olc, &ss, 30, |t| DVector::from_fn(4, |i, _| ((t * 3 + i) as f64).cos() * 0.2), &obs);
        let obj = olc.objective().without_perturbation();
        let (_, best) = hindsight_best(olc.objective(), olc.records(), &GameParams::hindsight()).unwrap();
        for (_, snap) in &olc.log().snapshots {
            assert!(best >= crate::game::true_objective(&obj, olc.records(), snap.gains()) - 1e-9);
        }
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert!(sample_ball(&mut rng, 2, 6, 1.5).norm() <= 1.5 * (1.0 + 1e-12));
        }
    }
}
