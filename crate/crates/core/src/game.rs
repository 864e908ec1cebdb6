//! Max-min game over the policy `M` and per-step obstacle weights `c^{[τ]}`:
//! trust-region best responses for `M`, exponentiated gradient for `c`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::dac::DacPolicy;
use crate::error::{check_dim, contract, Result};
use crate::lindyn::StabilizedSystem;
use crate::trs::{check_simplex, solve, EigenQuadratic, InstanceParts, TrustRegionInstance};

/// Everything the reward depends on besides the records: the closed loop,
/// cost matrices, the distance projection `S` (rows of the state that
/// obstacle distance is measured in), and the `λ(M•P0)` perturbation.
#[derive(Debug, Clone)]
pub struct Objective {
    ss: StabilizedSystem,
    h: usize,
    d_m: f64,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    proj: DMatrix<f64>,
    lambda: f64,
    p0: DMatrix<f64>,
}

impl Objective {
    /// Zero costs, identity projection, no perturbation.
    pub fn new(ss: StabilizedSystem, h: usize, d_m: f64) -> Result<Self> {
        if h == 0 || !(d_m > 0.0) {
            return Err(contract("need H >= 1 and D_M > 0"));
        }
        let (dx, du, dw) = (ss.dx(), ss.du(), ss.dw());
        Ok(Self {
            ss,
            h,
            d_m,
            q: DMatrix::zeros(dx, dx),
            r: DMatrix::zeros(du, du),
            proj: DMatrix::identity(dx, dx),
            lambda: 0.0,
            p0: DMatrix::zeros(du, h * (dw + 1)),
        })
    }

    pub fn with_costs(mut self, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        check_dim("Q", q.nrows(), self.ss.dx())?;
        check_dim("Q", q.ncols(), self.ss.dx())?;
        check_dim("R", r.nrows(), self.ss.du())?;
        check_dim("R", r.ncols(), self.ss.du())?;
        self.q = (&q + q.transpose()) * 0.5;
        self.r = (&r + r.transpose()) * 0.5;
        Ok(self)
    }

    pub fn with_projection(mut self, proj: DMatrix<f64>) -> Result<Self> {
        check_dim("projection columns", proj.ncols(), self.ss.dx())?;
        self.proj = proj;
        Ok(self)
    }

    pub fn with_perturbation(mut self, lambda: f64, p0: DMatrix<f64>) -> Result<Self> {
        check_dim("P0 rows", p0.nrows(), self.ss.du())?;
        check_dim("P0 cols", p0.ncols(), self.stack_len())?;
        if !lambda.is_finite() {
            return Err(contract("lambda must be finite"));
        }
        self.lambda = lambda;
        self.p0 = p0;
        Ok(self)
    }

    pub fn without_perturbation(&self) -> Self {
        let mut out = self.clone();
        out.lambda = 0.0;
        out
    }

    pub fn system(&self) -> &StabilizedSystem {
        &self.ss
    }
    pub fn h(&self) -> usize {
        self.h
    }
    pub fn d_m(&self) -> f64 {
        self.d_m
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn proj(&self) -> &DMatrix<f64> {
        &self.proj
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn perturbation(&self) -> &DMatrix<f64> {
        &self.p0
    }
    /// `H(d_w+1)`
    pub fn stack_len(&self) -> usize {
        self.h * (self.ss.dw() + 1)
    }
    pub fn policy_dim(&self) -> usize {
        self.ss.du() * self.stack_len()
    }

    /// Per-obstacle squared distances `‖S(a_j + BMb)‖²` of one record.
    pub fn distances(&self, rec: &RewardRecord, gains: &DMatrix<f64>) -> Vec<f64> {
        let shift = self.ss.b() * (gains * &rec.b);
        rec.a_list
            .iter()
            .map(|a| {
                let d = &self.proj * (a + &shift);
                d.dot(&d)
            })
            .collect()
    }

    /// `min_j ‖S(a_j + BMb)‖² − ‖b0 + BMb‖²_Q − ‖Mb‖²_R` (sentinel records
    /// use the clipped constant instead of the distance).
    pub fn record_reward(&self, rec: &RewardRecord, gains: &DMatrix<f64>) -> f64 {
        let dist = match rec.sentinel {
            Some(far) => far * far,
            None => self.distances(rec, gains).into_iter().fold(f64::INFINITY, f64::min),
        };
        dist - self.costs(rec, gains)
    }

    fn costs(&self, rec: &RewardRecord, gains: &DMatrix<f64>) -> f64 {
        let mb = gains * &rec.b;
        let x = &rec.b0 + self.ss.b() * &mb;
        x.dot(&(&self.q * &x)) + mb.dot(&(&self.r * &mb))
    }

    fn perturbation_term(&self, gains: &DMatrix<f64>) -> f64 {
        self.lambda * gains.dot(&self.p0)
    }

    /// Reward of one record with the min over obstacles replaced by a
    /// soft-min at temperature `mu` (`mu = 0` is the hard min), and its
    /// gradient in `M`.
    pub fn record_reward_grad(&self, rec: &RewardRecord, gains: &DMatrix<f64>, mu: f64) -> (f64, DMatrix<f64>) {
        let b = self.ss.b();
        let mb = gains * &rec.b;
        let bmb = b * &mb;
        let x = &rec.b0 + &bmb;
        let qx = &self.q * &x;
        let rmb = &self.r * &mb;
        let mut value = -(x.dot(&qx) + mb.dot(&rmb));
        // Gradient w.r.t. the input shift Mb; the chain rule adds `⊗ bᵀ`.
        let mut g_u = -(b.tr_mul(&qx) + &rmb) * 2.0;
        match rec.sentinel {
            Some(far) => value += far * far,
            None => {
                let dists: Vec<DVector<f64>> = rec.a_list.iter().map(|a| &self.proj * (a + &bmb)).collect();
                let f: Vec<f64> = dists.iter().map(|d| d.dot(d)).collect();
                let fmin = f.iter().copied().fold(f64::INFINITY, f64::min);
                let weights: Vec<f64> = if mu > 0.0 {
                    let e: Vec<f64> = f.iter().map(|v| (-(v - fmin) / mu).exp()).collect();
                    let z: f64 = e.iter().sum();
                    value += fmin - mu * z.ln();
                    e.into_iter().map(|v| v / z).collect()
                } else {
                    value += fmin;
                    let j = f.iter().position(|v| *v == fmin).unwrap_or(0);
                    (0..f.len()).map(|i| if i == j { 1.0 } else { 0.0 }).collect()
                };
                let sb = &self.proj * b;
                for (d, w) in dists.iter().zip(weights) {
                    if w > 0.0 {
                        g_u += sb.tr_mul(d) * (2.0 * w);
                    }
                }
            }
        }
        (value, g_u * rec.b.transpose())
    }

    /// Smoothed total objective and gradient.
    pub fn objective_grad(&self, records: &[RewardRecord], gains: &DMatrix<f64>, mu: f64) -> (f64, DMatrix<f64>) {
        let mut value = self.perturbation_term(gains);
        let mut grad = &self.p0 * self.lambda;
        for rec in records {
            let (v, g) = self.record_reward_grad(rec, gains, mu);
            value += v;
            grad += g;
        }
        (value, grad)
    }
}

/// Hindsight data for one step: `a_j = b0 − p_j`, the one-padded history
/// stack `b` that produced the residual input, and `b0 = Ãx + Dw`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardRecord {
    pub tau: usize,
    pub a_list: Vec<DVector<f64>>,
    pub b: DVector<f64>,
    pub b0: DVector<f64>,
    /// `Some(C_far)` when nothing was sensed.
    pub sentinel: Option<f64>,
}

impl RewardRecord {
    /// `obstacles` are sensed positions embedded in state coordinates.
    pub fn new(tau: usize, b0: DVector<f64>, b: DVector<f64>, obstacles: &[DVector<f64>], far: f64) -> Result<Self> {
        for p in obstacles {
            check_dim("obstacle", p.len(), b0.len())?;
        }
        if obstacles.is_empty() {
            if !(far > 0.0 && far.is_finite()) {
                return Err(contract("sentinel distance must be positive"));
            }
            let mut a = DVector::zeros(b0.len());
            a[0] = far;
            return Ok(Self { tau, a_list: vec![a], b, b0, sentinel: Some(far) });
        }
        let a_list = obstacles.iter().map(|p| &b0 - p).collect();
        Ok(Self { tau, a_list, b, b0, sentinel: None })
    }

    pub fn k(&self) -> usize {
        self.a_list.len()
    }

    pub(crate) fn check(&self, obj: &Objective) -> Result<()> {
        let dx = obj.system().dx();
        check_dim("b", self.b.len(), obj.stack_len())?;
        check_dim("b0", self.b0.len(), dx)?;
        if self.a_list.is_empty() {
            return Err(contract("record needs at least one obstacle"));
        }
        for a in &self.a_list {
            check_dim("a_j", a.len(), dx)?;
        }
        Ok(())
    }
}

pub fn true_objective(obj: &Objective, records: &[RewardRecord], gains: &DMatrix<f64>) -> f64 {
    records.iter().map(|r| obj.record_reward(r, gains)).sum::<f64>() + obj.perturbation_term(gains)
}

/// Objective with the hard min replaced by the `c`-weighted average.
pub fn relaxed_objective(
    obj: &Objective,
    records: &[RewardRecord],
    weights: &[DVector<f64>],
    gains: &DMatrix<f64>,
) -> Result<f64> {
    check_dim("weights", weights.len(), records.len())?;
    let mut total = obj.perturbation_term(gains);
    for (rec, c) in records.iter().zip(weights) {
        check_simplex(c, rec.k())?;
        let dist = match rec.sentinel {
            Some(far) => far * far,
            None => obj.distances(rec, gains).iter().zip(c.iter()).map(|(d, cj)| d * cj).sum(),
        };
        total += dist - obj.costs(rec, gains);
    }
    Ok(total)
}

/// Multiplicative-weights step `c'_j ∝ c_j exp(−η loss_j)`.
pub fn eg_update(c: &DVector<f64>, losses: &[f64], eta: f64) -> Result<DVector<f64>> {
    check_dim("losses", losses.len(), c.len())?;
    if c.iter().any(|v| !(*v >= 0.0)) || c.sum() <= 0.0 {
        return Err(contract("weights must be nonnegative with positive mass"));
    }
    if losses.iter().any(|l| !l.is_finite()) || !eta.is_finite() {
        return Err(contract("losses and eta must be finite"));
    }
    let base = c
        .iter()
        .zip(losses)
        .filter(|(cj, _)| **cj > 0.0)
        .map(|(_, l)| *l)
        .fold(f64::INFINITY, f64::min);
    let mut out = DVector::from_fn(c.len(), |j, _| c[j] * (-eta * (losses[j] - base)).exp());
    let total = out.sum();
    out /= total;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameParams {
    pub n_iters: usize,
    /// `None` selects `√(ln k̄ / N) / G` with `G` the running max loss.
    pub eg_rate: Option<f64>,
    pub tol: f64,
    /// Refine the best iterates locally on the hard-min objective and try
    /// small active sets exactly.
    pub polish: bool,
}

impl GameParams {
    pub fn in_loop() -> Self {
        Self { n_iters: 50, eg_rate: None, tol: 1e-9, polish: false }
    }

    pub fn hindsight() -> Self {
        Self { n_iters: 500, eg_rate: None, tol: 1e-9, polish: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameTraceRow {
    pub n: usize,
    pub relaxed: f64,
    pub true_value: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct GameOutcome {
    pub policy: DacPolicy,
    /// Weights paired with the returned policy.
    pub weights: Vec<DVector<f64>>,
    pub final_weights: Vec<DVector<f64>>,
    pub value: f64,
    pub gap: f64,
    pub best_iter: usize,
    pub trace: Vec<GameTraceRow>,
}

pub fn run_game(obj: &Objective, records: &[RewardRecord], params: &GameParams) -> Result<GameOutcome> {
    let parts = InstanceParts::new(obj, records)?;
    run_game_with(obj, records, &parts, None, params)
}

/// Value, policy, weights, gap and iteration of the best iterate so far.
type BestIterate = (f64, DacPolicy, Vec<DVector<f64>>, f64, usize);

/// `run_game` reusing accumulated instance parts and, optionally, a cached
/// eigendecomposition of `parts.p_mat()`.
pub fn run_game_with(
    obj: &Objective,
    records: &[RewardRecord],
    parts: &InstanceParts,
    eig: Option<&EigenQuadratic>,
    params: &GameParams,
) -> Result<GameOutcome> {
    if records.is_empty() {
        return Err(contract("run_game needs at least one record"));
    }
    if params.n_iters == 0 || params.eg_rate.is_some_and(|e| !(e > 0.0)) {
        return Err(contract("game needs N >= 1 and a positive EG rate"));
    }
    let owned;
    let eig = match eig {
        Some(e) => e,
        None => {
            owned = EigenQuadratic::new(&parts.p_mat())?;
            &owned
        }
    };
    check_dim("records", records.len(), parts.len())?;
    let kbar = records.iter().map(|r| r.k()).max().unwrap_or(1);
    let mut c: Vec<DVector<f64>> = records.iter().map(|r| DVector::from_element(r.k(), 1.0 / r.k() as f64)).collect();
    let mut g_run: f64 = 0.0;
    let mut best: Option<BestIterate> = None;
    let mut trace = Vec::with_capacity(params.n_iters);

    let mut multi_losses: Vec<Vec<f64>> = vec![Vec::new(); parts.multi().len()];
    for n in 0..params.n_iters {
        let (policy, relaxed, gap) = respond(obj, records, parts, eig, &c, params.tol, Some(&mut multi_losses))?;
        let value = relaxed - gap;
        trace.push(GameTraceRow { n, relaxed, true_value: value, gap });
        if best.as_ref().is_none_or(|b| value > b.0) {
            best = Some((value, policy, c.clone(), gap, n));
        }
        if kbar == 1 || parts.multi().is_empty() {
            break;
        }
        for l in &multi_losses {
            g_run = g_run.max(l.iter().copied().fold(0.0, f64::max));
        }
        let eta = match params.eg_rate {
            Some(e) => e,
            None if g_run > 0.0 => ((kbar as f64).ln() / params.n_iters as f64).sqrt() / g_run,
            None => 0.0,
        };
        for (l, &i) in multi_losses.iter().zip(parts.multi()) {
            c[i] = eg_update(&c[i], l, eta)?;
        }
    }
    let (mut value, mut policy, mut weights, mut gap, best_iter) = best.expect("at least one iteration");
    if params.polish && !parts.multi().is_empty() {
        let mut starts = vec![policy.clone()];
        let (last, _, _) = respond(obj, records, parts, eig, &c, params.tol, None)?;
        starts.push(last);
        starts.push(DacPolicy::zeros(obj.system().du(), obj.system().dw(), obj.h(), obj.d_m())?);
        // Pure weight assignments, when there are few of them.
        let multi = parts.multi();
        let count = multi.iter().try_fold(1usize, |acc, &i| acc.checked_mul(records[i].k()).filter(|n| *n <= MAX_VERTEX_STARTS));
        if let Some(count) = count {
            let mut cv = c.clone();
            for code in 0..count {
                let mut rest = code;
                for &i in multi {
                    let k = records[i].k();
                    cv[i] = DVector::from_fn(k, |j, _| if j == rest % k { 1.0 } else { 0.0 });
                    rest /= k;
                }
                starts.push(respond(obj, records, parts, eig, &cv, params.tol, None)?.0);
            }
        }
        for (n, start) in starts.into_iter().enumerate() {
            let refined = refine(obj, records, &start)?;
            let ridge = active_set_candidates(obj, records, parts, refined.gains(), n == 0, params.tol)?;
            for cand in std::iter::once(refined).chain(ridge) {
                let v = true_objective(obj, records, cand.gains());
                if v > value {
                    value = v;
                    weights = active_weights(obj, records, cand.gains());
                    gap = relaxed_objective(obj, records, &weights, cand.gains())? - v;
                    policy = cand;
                }
            }
        }
    }
    Ok(GameOutcome { policy, weights, final_weights: c, value, gap, best_iter, trace })
}

const MAX_VERTEX_STARTS: usize = 64;

/// Projected gradient ascent on the soft-min objective with a shrinking
/// temperature, ending on the hard min.
fn refine(obj: &Objective, records: &[RewardRecord], start: &DacPolicy) -> Result<DacPolicy> {
    let radius = obj.d_m();
    let mut m = start.gains().clone();
    let scale = records
        .iter()
        .filter(|r| r.sentinel.is_none())
        .flat_map(|r| obj.distances(r, &m))
        .fold(0.0, f64::max)
        .max(1e-12);
    let mut mu = 1e-2 * scale;
    let mut step = radius * radius / scale.max(1e-300);
    while mu > 1e-12 * scale {
        let (mut val, mut grad) = obj.objective_grad(records, &m, mu);
        for _ in 0..200 {
            let mut accepted = false;
            while step > 1e-16 * radius {
                let mut cand = &m + &grad * step;
                crate::dac::project_frobenius(&mut cand, radius);
                let (cv, cg) = obj.objective_grad(records, &cand, mu);
                if cv > val {
                    let moved = (&cand - &m).norm();
                    m = cand;
                    val = cv;
                    grad = cg;
                    step *= 1.5;
                    accepted = moved > 1e-13 * radius;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        mu *= 0.1;
    }
    let (h, dw) = (obj.h(), obj.system().dw());
    DacPolicy::new(m, h, dw, radius)
}

/// Per record: the obstacle taken as nearest, and others held at the same
/// distance.
type ActiveSet = Vec<(usize, Vec<usize>)>;

/// Candidates from near-ties at `gains` and, when there are few of them,
/// from every active set with at most one tie per record.
fn active_set_candidates(
    obj: &Objective,
    records: &[RewardRecord],
    parts: &InstanceParts,
    gains: &DMatrix<f64>,
    enumerate: bool,
    tol: f64,
) -> Result<Vec<DacPolicy>> {
    let dists: Vec<Vec<f64>> = records.iter().map(|r| obj.distances(r, gains)).collect();
    let scale = 1.0 + dists.iter().flatten().fold(0.0_f64, |a, b| a.max(*b));
    let mut sets: Vec<ActiveSet> = Vec::new();
    for delta in [1e-9, 1e-6, 1e-3, 1e-1] {
        let set: ActiveSet = records
            .iter()
            .zip(&dists)
            .map(|(rec, f)| {
                let j = (0..f.len()).fold(0, |b, i| if f[i] < f[b] { i } else { b });
                let tied = if rec.sentinel.is_some() {
                    Vec::new()
                } else {
                    (0..f.len()).filter(|&i| i != j && f[i] - f[j] <= delta * scale).collect()
                };
                (j, tied)
            })
            .collect();
        if !sets.contains(&set) {
            sets.push(set);
        }
    }
    if enumerate {
        let options: Vec<Vec<(usize, Vec<usize>)>> = records
            .iter()
            .zip(&sets[0])
            .map(|(rec, fixed)| {
                if rec.sentinel.is_some() || rec.k() < 2 {
                    return vec![fixed.clone()];
                }
                let k = rec.k();
                let mut o: Vec<_> = (0..k).map(|j| (j, Vec::new())).collect();
                for j in 0..k {
                    for i in j + 1..k {
                        o.push((j, vec![i]));
                    }
                }
                o
            })
            .collect();
        let count = options.iter().try_fold(1usize, |acc, o| acc.checked_mul(o.len()).filter(|n| *n <= MAX_VERTEX_STARTS));
        if let Some(count) = count {
            for code in 0..count {
                let mut rest = code;
                let set: ActiveSet = options
                    .iter()
                    .map(|o| {
                        let pick = o[rest % o.len()].clone();
                        rest /= o.len();
                        pick
                    })
                    .collect();
                if !sets.contains(&set) {
                    sets.push(set);
                }
            }
        }
    }
    let p_mat = parts.p_mat();
    let mut out = Vec::new();
    for set in &sets {
        if let Some(policy) = solve_active_set(obj, records, parts, &p_mat, set, tol)? {
            out.push(policy);
        }
    }
    Ok(out)
}

/// Maximizes the reward with each record's distance taken from its chosen
/// obstacle, holding the tied obstacles at equal distance. Ties are linear
/// in `M`, so this is a trust-region problem on an affine subspace.
fn solve_active_set(
    obj: &Objective,
    records: &[RewardRecord],
    parts: &InstanceParts,
    p_mat: &DMatrix<f64>,
    set: &ActiveSet,
    tol: f64,
) -> Result<Option<DacPolicy>> {
    let ss = obj.system();
    let radius = obj.d_m();
    let dim = p_mat.nrows();
    let dist_map = ss.b().transpose() * obj.proj().transpose() * obj.proj() * 2.0;
    let mut c = Vec::with_capacity(records.len());
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs = Vec::new();
    for (rec, (j, tied)) in records.iter().zip(set) {
        c.push(DVector::from_fn(rec.k(), |i, _| if i == *j { 1.0 } else { 0.0 }));
        let sa_j = obj.proj() * &rec.a_list[*j];
        for &i in tied {
            let sa_i = obj.proj() * &rec.a_list[i];
            rows.push(rec.b.kronecker(&(&dist_map * (&rec.a_list[i] - &rec.a_list[*j]))));
            rhs.push(sa_j.dot(&sa_j) - sa_i.dot(&sa_i));
        }
    }
    let (p_vec, _) = parts.linear_part(obj, records, &c)?;
    let z = if rows.is_empty() {
        let inst = TrustRegionInstance::new(p_mat.clone(), p_vec, radius)?;
        solve(&inst, tol)?.z
    } else {
        let cm = DMatrix::from_fn(rows.len(), dim, |r, k| rows[r][k]);
        let e = DVector::from_vec(rhs);
        let Ok(pinv) = cm.clone().pseudo_inverse(1e-10) else { return Ok(None) };
        let m0 = &pinv * &e;
        let inner = radius * radius - m0.norm_squared();
        if (&cm * &m0 - &e).norm() > 1e-8 * (1.0 + e.norm()) || inner < 0.0 {
            return Ok(None);
        }
        let eig = (cm.transpose() * &cm).symmetric_eigen();
        let top = eig.eigenvalues.amax().max(1e-300);
        let null: Vec<usize> = (0..dim).filter(|&k| eig.eigenvalues[k] <= 1e-10 * top).collect();
        if null.is_empty() || inner == 0.0 {
            m0
        } else {
            let n = eig.eigenvectors.select_columns(&null);
            let rp = n.transpose() * p_mat * &n;
            let rv = n.transpose() * (p_mat * &m0 * 2.0 + &p_vec);
            let inst = TrustRegionInstance::new(rp, rv, inner.sqrt())?;
            m0 + n * solve(&inst, tol)?.z
        }
    };
    Ok(Some(DacPolicy::from_vec(&z, ss.du(), ss.dw(), obj.h(), radius)?))
}

/// Weights concentrated on each record's nearest obstacle.
fn active_weights(obj: &Objective, records: &[RewardRecord], gains: &DMatrix<f64>) -> Vec<DVector<f64>> {
    records
        .iter()
        .map(|r| {
            let f = obj.distances(r, gains);
            let j = (0..f.len()).fold(0, |b, i| if f[i] < f[b] { i } else { b });
            DVector::from_fn(r.k(), |i, _| if i == j { 1.0 } else { 0.0 })
        })
        .collect()
}

/// Best response to weights `c`: returns the policy, its relaxed value and
/// the relaxation gap, optionally keeping the per-obstacle losses.
fn respond(
    obj: &Objective,
    records: &[RewardRecord],
    parts: &InstanceParts,
    eig: &EigenQuadratic,
    c: &[DVector<f64>],
    tol: f64,
    mut losses: Option<&mut Vec<Vec<f64>>>,
) -> Result<(DacPolicy, f64, f64)> {
    let ss = obj.system();
    let (p, constant) = parts.linear_part(obj, records, c)?;
    let sol = eig.solve(&p, obj.d_m(), tol)?;
    let policy = DacPolicy::from_vec(&sol.z, ss.du(), ss.dw(), obj.h(), obj.d_m())?;
    let gains = policy.gains();
    // Single-obstacle records contribute identically to both values.
    let mut gap = 0.0;
    for (slot, &i) in parts.multi().iter().enumerate() {
        let l = obj.distances(&records[i], gains);
        let weighted: f64 = l.iter().zip(c[i].iter()).map(|(d, cj)| d * cj).sum();
        gap += weighted - l.iter().copied().fold(f64::INFINITY, f64::min);
        if let Some(out) = losses.as_deref_mut() {
            out[slot] = l;
        }
    }
    Ok((policy, sol.value + constant, gap))
}

pub fn write_trace_csv<W: Write>(trace: &[GameTraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "relaxed", "true", "gap"])?;
    for row in trace {
        w.write_record([row.n.to_string(), row.relaxed.to_string(), row.true_value.to_string(), row.gap.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
