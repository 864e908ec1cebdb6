//! Disturbance-action policies `u = Kx + Σᵢ M^{[i]} w̃_{t−i}` with one-padded
//! disturbances `w̃ = (w; 1)`, and counterfactual state evaluation.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, contract, Error, Result};
use crate::lindyn::StabilizedSystem;

/// Gain stack `[M^{[1]} | … | M^{[H]}]`, each block `d_u × (d_w+1)` with the
/// bias in its last column.
#[derive(Debug, Clone, PartialEq)]
pub struct DacPolicy {
    gains: DMatrix<f64>,
    h: usize,
    dw: usize,
    radius: f64,
}

impl DacPolicy {
    pub fn new(gains: DMatrix<f64>, h: usize, dw: usize, radius: f64) -> Result<Self> {
        if h == 0 {
            return Err(contract("H must be at least 1"));
        }
        if !(radius > 0.0) {
            return Err(contract("D_M must be positive"));
        }
        check_dim("policy columns", gains.ncols(), h * (dw + 1))?;
        let norm = gains.norm();
        if !norm.is_finite() || norm > radius * (1.0 + 1e-9) {
            return Err(contract(format!("‖M‖_F = {norm} exceeds D_M = {radius}")));
        }
        Ok(Self { gains, h, dw, radius })
    }

    pub fn zeros(du: usize, dw: usize, h: usize, radius: f64) -> Result<Self> {
        Self::new(DMatrix::zeros(du, h * (dw + 1)), h, dw, radius)
    }

    /// Builds from `vec(M)` (column-major), projecting onto the ball if the
    /// vector sits marginally outside it.
    pub fn from_vec(m: &DVector<f64>, du: usize, dw: usize, h: usize, radius: f64) -> Result<Self> {
        check_dim("vec(M)", m.len(), du * h * (dw + 1))?;
        let mut gains = DMatrix::from_column_slice(du, h * (dw + 1), m.as_slice());
        project_frobenius(&mut gains, radius);
        Self::new(gains, h, dw, radius)
    }

    pub fn gains(&self) -> &DMatrix<f64> {
        &self.gains
    }
    pub fn h(&self) -> usize {
        self.h
    }
    pub fn du(&self) -> usize {
        self.gains.nrows()
    }
    pub fn dw(&self) -> usize {
        self.dw
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn frobenius_norm(&self) -> f64 {
        self.gains.norm()
    }

    /// `M^{[i]}` for `1 ≤ i ≤ H`.
    pub fn block(&self, i: usize) -> DMatrix<f64> {
        assert!((1..=self.h).contains(&i), "lag {i} outside 1..={}", self.h);
        let w = self.dw + 1;
        self.gains.columns((i - 1) * w, w).into_owned()
    }

    pub fn to_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(self.gains.as_slice())
    }

    /// `M b` for a stacked one-padded history `b`.
    pub fn apply(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.gains * b
    }

    pub fn to_text(&self) -> String {
        let blocks = (1..=self.h)
            .map(|i| {
                let blk = self.block(i);
                (0..blk.nrows()).map(|r| blk.row(r).iter().copied().collect()).collect()
            })
            .collect();
        let file = PolicyFile { h: self.h, d_m: self.radius, d_u: self.du(), d_w: self.dw, blocks };
        toml::to_string(&file).expect("policy serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let f: PolicyFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if f.blocks.len() != f.h {
            return Err(Error::Config(format!("expected {} blocks, found {}", f.h, f.blocks.len())));
        }
        let w = f.d_w + 1;
        let mut gains = DMatrix::zeros(f.d_u, f.h * w);
        for (i, blk) in f.blocks.iter().enumerate() {
            if blk.len() != f.d_u || blk.iter().any(|r| r.len() != w) {
                return Err(Error::Config(format!("block {} must be {}x{}", i + 1, f.d_u, w)));
            }
            for (r, row) in blk.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    gains[(r, i * w + c)] = *v;
                }
            }
        }
        Self::new(gains, f.h, f.d_w, f.d_m)
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    h: usize,
    d_m: f64,
    d_u: usize,
    d_w: usize,
    blocks: Vec<Vec<Vec<f64>>>,
}

pub fn project_frobenius(m: &mut DMatrix<f64>, radius: f64) {
    let n = m.norm();
    if n > radius {
        *m *= radius / n;
    }
}

/// Ring of the most recent one-padded disturbances, newest first. Entries
/// before the first push read as zero vectors, bias slot included, so no
/// input is attributed to times before the episode started.
#[derive(Debug, Clone)]
pub struct DisturbanceHistory {
    buf: VecDeque<DVector<f64>>,
    cap: usize,
    dw: usize,
    t: usize,
}

impl DisturbanceHistory {
    /// Keeps `2H + 1` entries, enough for `counterfactual_state`.
    pub fn new(dw: usize, h: usize) -> Self {
        Self { buf: VecDeque::with_capacity(2 * h + 1), cap: 2 * h + 1, dw, t: 0 }
    }

    pub fn push(&mut self, w: &DVector<f64>) -> Result<()> {
        check_dim("w", w.len(), self.dw)?;
        if self.buf.len() == self.cap {
            self.buf.pop_back();
        }
        self.buf.push_front(pad(w));
        self.t += 1;
        Ok(())
    }

    /// Number of disturbances pushed so far.
    pub fn time(&self) -> usize {
        self.t
    }
    pub fn len(&self) -> usize {
        self.buf.len()
    }
    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
    pub fn dw(&self) -> usize {
        self.dw
    }

    /// The `i`-th newest padded disturbance.
    pub fn get(&self, i: usize) -> DVector<f64> {
        self.buf.get(i).cloned().unwrap_or_else(|| DVector::zeros(self.dw + 1))
    }

    /// `(w̃_newest; …; w̃_{h-th newest})`.
    pub fn stack(&self, h: usize) -> DVector<f64> {
        let w = self.dw + 1;
        let mut out = DVector::zeros(h * w);
        for i in 0..h {
            out.rows_mut(i * w, w).copy_from(&self.get(i));
        }
        out
    }
}

pub fn pad(w: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::from_element(w.len() + 1, 1.0);
    out.rows_mut(0, w.len()).copy_from(w);
    out
}

/// `K x + Σᵢ M^{[i]} w̃_{t−i}` where `hist` holds `w_{t−1}` as its newest entry.
pub fn control(
    policy: &DacPolicy,
    ss: &StabilizedSystem,
    x: &DVector<f64>,
    hist: &DisturbanceHistory,
) -> Result<DVector<f64>> {
    check_dim("x", x.len(), ss.dx())?;
    check_dim("policy d_u", policy.du(), ss.du())?;
    check_dim("policy d_w", policy.dw(), ss.dw())?;
    check_dim("history d_w", hist.dw(), ss.dw())?;
    Ok(ss.k() * x + policy.apply(&hist.stack(policy.h())))
}

/// Transfer matrix `Ψ_{t,i}`; `window[j]` is `M_{t−j}` for `j = 0..=H`.
pub fn psi(ss: &StabilizedSystem, window: &[DacPolicy], i: usize) -> Result<DMatrix<f64>> {
    let h = window.first().ok_or_else(|| contract("empty policy window"))?.h();
    if window.len() != h + 1 {
        return Err(contract(format!("policy window needs H+1 = {} entries", h + 1)));
    }
    if i > 2 * h {
        return Err(contract(format!("lag {i} exceeds 2H = {}", 2 * h)));
    }
    let dx = ss.dx();
    let mut out = DMatrix::zeros(dx, ss.dw() + 1);
    let mut pow = DMatrix::identity(dx, dx);
    for (j, m) in window.iter().enumerate().take(h.min(i) + 1) {
        if j == i {
            out += &pow * ss.d_padded();
        }
        if i > j && i - j <= h {
            out += &pow * ss.b() * m.block(i - j);
        }
        pow = ss.a_cl() * pow;
    }
    Ok(out)
}

/// Truncated estimate `y_{t+1} = Σ_{i=0}^{2H} Ψ_{t,i} w̃_{t−i}`; `hist` holds
/// `w_t` as its newest entry.
pub fn counterfactual_state(
    ss: &StabilizedSystem,
    window: &[DacPolicy],
    hist: &DisturbanceHistory,
) -> Result<DVector<f64>> {
    let h = window.first().ok_or_else(|| contract("empty policy window"))?.h();
    let mut y = DVector::zeros(ss.dx());
    for i in 0..=2 * h {
        y += psi(ss, window, i)? * hist.get(i);
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualStep {
    /// `x_{τ+1}`
    pub state: DVector<f64>,
    /// `ũ_τ = u_τ − K x_τ`
    pub residual: DVector<f64>,
}

/// Exact replay of `x_{τ+1} = Ã x_τ + B M b_τ + D w_τ` with a fixed policy.
pub fn counterfactual_rollout(
    ss: &StabilizedSystem,
    policy: &DacPolicy,
    x0: &DVector<f64>,
    disturbances: &[DVector<f64>],
) -> Result<Vec<CounterfactualStep>> {
    check_dim("x0", x0.len(), ss.dx())?;
    let mut hist = DisturbanceHistory::new(ss.dw(), policy.h());
    let mut x = x0.clone();
    let mut out = Vec::with_capacity(disturbances.len());
    for w in disturbances {
        let residual = policy.apply(&hist.stack(policy.h()));
        x = ss.a_cl() * &x + ss.b() * &residual + ss.d() * w;
        hist.push(w)?;
        out.push(CounterfactualStep { state: x.clone(), residual });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindyn::{spectral_norm, LinSystem};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn small_system(rng: &mut ChaCha8Rng, dx: usize, du: usize) -> StabilizedSystem {
        let mut a = rand_mat(rng, dx, dx);
        a /= spectral_norm(&a) * 1.3;
        let s = LinSystem::new(a, rand_mat(rng, dx, du), DMatrix::identity(dx, dx)).unwrap();
        StabilizedSystem::with_gain(&s, DMatrix::zeros(du, dx)).unwrap()
    }

    fn rand_policy(rng: &mut ChaCha8Rng, du: usize, dw: usize, h: usize) -> DacPolicy {
        let mut g = rand_mat(rng, du, h * (dw + 1));
        project_frobenius(&mut g, 1.0);
        DacPolicy::new(g, h, dw, 1.0).unwrap()
    }

    #[test]
    fn zero_policy_is_pure_feedback() {
        let s = LinSystem::double_integrator(0.1).unwrap();
        let ss = StabilizedSystem::stabilize(&s, &(DMatrix::identity(4, 4) * 0.001), &DMatrix::identity(2, 2)).unwrap();
        let pol = DacPolicy::zeros(2, 4, 3, 1.0).unwrap();
        let mut hist = DisturbanceHistory::new(4, 3);
        hist.push(&DVector::from_element(4, 0.3)).unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.1]);
        let u = control(&pol, &ss, &x, &hist).unwrap();
        assert_relative_eq!((u - ss.k() * &x).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bias_column_only_gives_constant_input() {
        let s = LinSystem::without_disturbance_map(DMatrix::identity(2, 2) * 0.5, DMatrix::identity(2, 2)).unwrap();
        let ss = StabilizedSystem::with_gain(&s, DMatrix::zeros(2, 2)).unwrap();
        let mut g = DMatrix::zeros(2, 3);
        g[(0, 2)] = 0.3;
        g[(1, 2)] = -0.4;
        let pol = DacPolicy::new(g, 1, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut hist = DisturbanceHistory::new(2, 1);
        for _ in 0..4 {
            hist.push(&rand_vec(&mut rng, 2)).unwrap();
            let u = control(&pol, &ss, &DVector::zeros(2), &hist).unwrap();
            assert_eq!(u.as_slice(), &[0.3, -0.4]);
        }
    }

    #[test]
    fn control_matches_explicit_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ss = small_system(&mut rng, 3, 2);
        let ss = StabilizedSystem::with_gain(ss.base(), rand_mat(&mut rng, 2, 3) * 0.05).unwrap();
        for h in 1..5 {
            let pol = rand_policy(&mut rng, 2, 3, h);
            let mut hist = DisturbanceHistory::new(3, h);
            let mut ws = Vec::new();
            for _ in 0..(h + 2) {
                let w = rand_vec(&mut rng, 3);
                hist.push(&w).unwrap();
                ws.push(w);
            }
            let x = rand_vec(&mut rng, 3);
            let got = control(&pol, &ss, &x, &hist).unwrap();
            let mut want = ss.k() * &x;
            for i in 1..=h {
                let w = &ws[ws.len() - i];
                let blk = pol.block(i);
                for r in 0..2 {
                    for c in 0..3 {
                        want[r] += blk[(r, c)] * w[c];
                    }
                    want[r] += blk[(r, 3)];
                }
            }
            assert!((got - want).amax() < 1e-12);
        }
    }

    #[test]
    fn history_pads_and_evicts() {
        let mut hist = DisturbanceHistory::new(2, 1);
        assert_eq!(hist.get(0).as_slice(), &[0.0, 0.0, 0.0]);
        for k in 0..5 {
            hist.push(&DVector::from_element(2, k as f64)).unwrap();
        }
        assert_eq!(hist.len(), 3);
        assert_eq!(hist.get(0).as_slice(), &[4.0, 4.0, 1.0]);
        assert_eq!(hist.get(2).as_slice(), &[2.0, 2.0, 1.0]);
        assert_eq!(hist.get(3).as_slice(), &[0.0, 0.0, 0.0]);
        assert_eq!(hist.time(), 5);
    }

    #[test]
    fn psi_with_zero_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ss = small_system(&mut rng, 3, 2);
        let h = 3;
        let window = vec![DacPolicy::zeros(2, 3, h, 1.0).unwrap(); h + 1];
        let mut pow: DMatrix<f64> = DMatrix::identity(3, 3);
        for i in 0..=h {
            let want = &pow * ss.d_padded();
            assert!((psi(&ss, &window, i).unwrap() - want).amax() < 1e-14);
            pow = ss.a_cl() * pow;
        }
        assert_eq!(psi(&ss, &window, 2 * h).unwrap().amax(), 0.0);
        assert!(psi(&ss, &window, 2 * h + 1).is_err());
    }

    #[test]
    fn psi_matches_two_step_unrolling() {
        // Hand expansion of the H = 2 recursion down to w̃_{t−4}.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ss = small_system(&mut rng, 2, 1);
        let window: Vec<_> = (0..3).map(|_| rand_policy(&mut rng, 1, 2, 2)).collect();
        let a = ss.a_cl();
        let b = ss.b();
        let d = ss.d_padded();
        let m = |j: usize, i: usize| window[j].block(i);
        let want = [
            d.clone(),
            a * &d + b * m(0, 1),
            a * a * &d + b * m(0, 2) + a * b * m(1, 1),
            a * b * m(1, 2) + a * a * b * m(2, 1),
            a * a * b * m(2, 2),
        ];
        for (i, w) in want.iter().enumerate() {
            assert!((psi(&ss, &window, i).unwrap() - w).amax() < 1e-13, "lag {i}");
        }
    }

    #[test]
    fn counterfactual_exact_from_rest() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ss = small_system(&mut rng, 3, 2);
        let h = 4;
        let pol = rand_policy(&mut rng, 2, 3, h);
        let ws: Vec<_> = (0..=h).map(|_| rand_vec(&mut rng, 3)).collect();
        let roll = counterfactual_rollout(&ss, &pol, &DVector::zeros(3), &ws).unwrap();
        let window = vec![pol.clone(); h + 1];
        let mut hist = DisturbanceHistory::new(3, h);
        for (t, w) in ws.iter().enumerate() {
            hist.push(w).unwrap();
            let y = counterfactual_state(&ss, &window, &hist).unwrap();
            assert!((y - &roll[t].state).amax() < 1e-10, "t = {t}");
        }
    }

    #[test]
    fn rollout_matches_stepwise_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ss = small_system(&mut rng, 4, 2);
        let pol = rand_policy(&mut rng, 2, 4, 3);
        let ws: Vec<_> = (0..30).map(|_| rand_vec(&mut rng, 4)).collect();
        let x0 = rand_vec(&mut rng, 4);
        let roll = counterfactual_rollout(&ss, &pol, &x0, &ws).unwrap();
        let mut hist = DisturbanceHistory::new(4, 3);
        let mut x = x0;
        for (t, w) in ws.iter().enumerate() {
            let u = control(&pol, &ss, &x, &hist).unwrap();
            x = ss.base().step(&x, &u, w).unwrap();
            hist.push(w).unwrap();
            assert!((&x - &roll[t].state).amax() < 1e-10);
        }
        let zero = DacPolicy::zeros(2, 4, 3, 1.0).unwrap();
        let roll0 = counterfactual_rollout(&ss, &zero, &DVector::zeros(4), &ws).unwrap();
        let mut x = DVector::zeros(4);
        for (t, w) in ws.iter().enumerate() {
            x = ss.a_cl() * x + w;
            assert!((&x - &roll0[t].state).amax() < 1e-12);
        }
    }

    #[test]
    fn policy_text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pol = rand_policy(&mut rng, 2, 4, 3);
        let back = DacPolicy::from_text(&pol.to_text()).unwrap();
        assert_eq!(back, pol);
        assert!(DacPolicy::from_text("h = 1\nd_m = 1.0\nd_u = 1\nd_w = 0\nblocks = []").is_err());
    }

    #[test]
    fn oversized_policy_rejected() {
        assert!(DacPolicy::new(DMatrix::from_element(1, 2, 1.0), 1, 1, 1.0).is_err());
        let mut g = DMatrix::from_element(1, 2, 1.0);
        project_frobenius(&mut g, 1.0);
        assert_relative_eq!(g.norm(), 1.0, epsilon = 1e-15);
    }
}
