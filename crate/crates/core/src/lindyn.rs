//! Linear time-invariant perturbation dynamics `x' = Ax + Bu + Dw`, LQR
//! stabilization and exact disturbance reconstruction.

use nalgebra::{Cholesky, DMatrix, DVector, SVD};

use crate::error::{check_dim, contract, Error, Result};

const RICCATI_TOL: f64 = 1e-10;
const RICCATI_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LinSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    d: DMatrix<f64>,
    d_inv: Option<DMatrix<f64>>,
}

impl LinSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let dx = a.nrows();
        if a.ncols() != dx {
            return Err(contract("A must be square"));
        }
        check_dim("B rows", b.nrows(), dx)?;
        check_dim("D rows", d.nrows(), dx)?;
        let du = b.ncols();
        if du == 0 || du > dx {
            return Err(contract(format!("need 1 <= d_u <= d_x, got d_u={du}, d_x={dx}")));
        }
        if d.ncols() == 0 {
            return Err(contract("D must have at least one column"));
        }
        if !(a.iter().chain(b.iter()).chain(d.iter()).all(|v| v.is_finite())) {
            return Err(contract("system matrices must be finite"));
        }
        let sv = SVD::new(b.clone(), false, false).singular_values;
        let smax = sv.max();
        if smax == 0.0 || sv.min() <= 1e-12 * smax {
            return Err(contract("B must have full column rank"));
        }
        let d_inv = if d.is_square() { d.clone().try_inverse() } else { None };
        Ok(Self { a, b, d, d_inv })
    }

    /// `D = I`.
    pub fn without_disturbance_map(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, b, DMatrix::identity(n, n))
    }

    /// Planar double integrator with state `(px, py, vx, vy)` and input `(ax, ay)`.
    pub fn double_integrator(dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(contract("dt must be positive"));
        }
        let mut a = DMatrix::identity(4, 4);
        a[(0, 2)] = dt;
        a[(1, 3)] = dt;
        let mut b = DMatrix::zeros(4, 2);
        b[(0, 0)] = 0.5 * dt * dt;
        b[(1, 1)] = 0.5 * dt * dt;
        b[(2, 0)] = dt;
        b[(3, 1)] = dt;
        Self::new(a, b, DMatrix::identity(4, 4))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn dx(&self) -> usize {
        self.a.nrows()
    }
    pub fn du(&self) -> usize {
        self.b.ncols()
    }
    pub fn dw(&self) -> usize {
        self.d.ncols()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("x", x.len(), self.dx())?;
        check_dim("u", u.len(), self.du())?;
        check_dim("w", w.len(), self.dw())?;
        Ok(&self.a * x + &self.b * u + &self.d * w)
    }

    pub fn reconstruct_disturbance(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        x_next: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let d_inv = self.d_inv.as_ref().ok_or_else(|| {
            Error::ReconstructionUnavailable("D is not square and invertible".into())
        })?;
        check_dim("x", x.len(), self.dx())?;
        check_dim("u", u.len(), self.du())?;
        check_dim("x_next", x_next.len(), self.dx())?;
        Ok(d_inv * (x_next - &self.a * x - &self.b * u))
    }
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SVD::new(m.clone(), false, false).singular_values.max()
}

/// Closed loop `Ã = A + BK` with a strong-stability certificate
/// `‖Ãⁿ‖ ≤ κ(1−γ)ⁿ`. When `‖Ã‖₂ < 1` the certificate is the plain
/// spectral-norm one (`κ = 1`); otherwise it comes from the Lyapunov
/// solution `X = ÃᵀXÃ + I`.
#[derive(Debug, Clone)]
pub struct StabilizedSystem {
    base: LinSystem,
    k: DMatrix<f64>,
    a_cl: DMatrix<f64>,
    gamma: f64,
    kappa: f64,
    beta: f64,
    riccati_iters: usize,
}

impl StabilizedSystem {
    /// LQR gain from the discrete Riccati recursion.
    pub fn stabilize(sys: &LinSystem, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<Self> {
        check_dim("Q", q.nrows(), sys.dx())?;
        check_dim("R", r.nrows(), sys.du())?;
        let (a, b) = (sys.a(), sys.b());
        let at = a.transpose();
        let bt = b.transpose();
        let mut p = q.clone();
        for it in 1..=RICCATI_MAX_ITERS {
            let s = r + &bt * &p * b;
            let s_chol = Cholesky::new(s).ok_or_else(|| {
                Error::StabilizationFailed("R + BᵀPB is not positive definite".into())
            })?;
            let bpa = &bt * &p * a;
            let next = q + &at * &p * a - bpa.transpose() * s_chol.solve(&bpa);
            let next = (&next + next.transpose()) * 0.5;
            let delta = (&next - &p).norm();
            p = next;
            if !delta.is_finite() {
                return Err(Error::StabilizationFailed("Riccati recursion diverged".into()));
            }
            if delta <= RICCATI_TOL * p.norm().max(1.0) {
                let s = r + &bt * &p * b;
                let k = -Cholesky::new(s).unwrap().solve(&(&bt * &p * a));
                let mut out = Self::with_gain(sys, k)?;
                out.riccati_iters = it;
                return Ok(out);
            }
        }
        Err(Error::StabilizationFailed(format!(
            "Riccati recursion did not converge in {RICCATI_MAX_ITERS} iterations"
        )))
    }

    /// Accepts a user-supplied gain.
    pub fn with_gain(sys: &LinSystem, k: DMatrix<f64>) -> Result<Self> {
        check_dim("K rows", k.nrows(), sys.du())?;
        check_dim("K cols", k.ncols(), sys.dx())?;
        let a_cl = sys.a() + sys.b() * &k;
        let (gamma, kappa) = certify(&a_cl)?;
        let beta = [spectral_norm(&a_cl), spectral_norm(sys.b()), spectral_norm(sys.d()), spectral_norm(&k)]
            .into_iter()
            .fold(0.0, f64::max);
        Ok(Self { base: sys.clone(), k, a_cl, gamma, kappa, beta, riccati_iters: 0 })
    }

    pub fn base(&self) -> &LinSystem {
        &self.base
    }
    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }
    pub fn a_cl(&self) -> &DMatrix<f64> {
        &self.a_cl
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn riccati_iters(&self) -> usize {
        self.riccati_iters
    }
    pub fn b(&self) -> &DMatrix<f64> {
        self.base.b()
    }
    pub fn d(&self) -> &DMatrix<f64> {
        self.base.d()
    }
    pub fn dx(&self) -> usize {
        self.base.dx()
    }
    pub fn du(&self) -> usize {
        self.base.du()
    }
    pub fn dw(&self) -> usize {
        self.base.dw()
    }

    /// `[D | 0]`, the disturbance map acting on one-padded disturbances.
    pub fn d_padded(&self) -> DMatrix<f64> {
        let d = self.base.d();
        let mut out = DMatrix::zeros(d.nrows(), d.ncols() + 1);
        out.columns_mut(0, d.ncols()).copy_from(d);
        out
    }
}

fn certify(a_cl: &DMatrix<f64>) -> Result<(f64, f64)> {
    let norm = spectral_norm(a_cl);
    if !norm.is_finite() {
        return Err(Error::StabilizationFailed("closed loop is not finite".into()));
    }
    if norm < 1.0 {
        return Ok(((1.0 - norm).min(1.0), 1.0));
    }
    let n = a_cl.nrows();
    let at = a_cl.transpose();
    let lhs = DMatrix::identity(n * n, n * n) - at.kronecker(&at);
    let rhs = DVector::from_column_slice(DMatrix::<f64>::identity(n, n).as_slice());
    let unstable = || {
        Error::StabilizationFailed(format!("closed loop is not Schur stable (‖Ã‖₂ = {norm:.6})"))
    };
    let x = lhs.lu().solve(&rhs).ok_or_else(unstable)?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    let x = (&x + x.transpose()) * 0.5;
    if Cholesky::new(x.clone()).is_none() {
        return Err(unstable());
    }
    let eig = x.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let rho = (1.0 - 1.0 / hi).max(0.0).sqrt();
    let gamma = 1.0 - rho;
    if !(gamma > 0.0) {
        return Err(unstable());
    }
    Ok((gamma, (hi / lo).sqrt()))
}

/// Norm bounds for the reachable set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub c_w: f64,
    pub c_u: f64,
    pub c_x: f64,
    pub xi: f64,
}

impl Bounds {
    /// `C_x = κ·max(2βH·D_M·C_w, β(D_M·√(H(C_w²+1)) + C_w)) / γ`. The second
    /// term covers the one-padded bias channel when `H·D_M` or `C_w` is small.
    pub fn new(ss: &StabilizedSystem, h: usize, d_m: f64, c_w: f64, xi: f64) -> Result<Self> {
        if !(h >= 1 && d_m > 0.0 && c_w > 0.0 && xi > 0.0) {
            return Err(contract("bounds need H >= 1 and positive D_M, C_w, xi"));
        }
        let hf = h as f64;
        let beta = ss.beta();
        let u_res = d_m * (hf * (c_w * c_w + 1.0)).sqrt();
        let c_x = ss.kappa() * (2.0 * beta * hf * d_m * c_w).max(beta * (u_res + c_w)) / ss.gamma();
        let c_u = spectral_norm(ss.k()) * c_x + u_res;
        Ok(Self { c_w, c_u, c_x, xi })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn brute_step(s: &LinSystem, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Vec<f64> {
        (0..s.dx())
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..s.dx() {
                    acc += s.a()[(i, j)] * x[j];
                }
                for j in 0..s.du() {
                    acc += s.b()[(i, j)] * u[j];
                }
                for j in 0..s.dw() {
                    acc += s.d()[(i, j)] * w[j];
                }
                acc
            })
            .collect()
    }

    #[test]
    fn identity_maps_step() {
        let i2 = DMatrix::identity(2, 2);
        let s = LinSystem::new(i2.clone(), i2.clone(), i2).unwrap();
        let x = s.step(&DVector::zeros(2), &DVector::from_vec(vec![1.0, 0.0]), &DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn double_integrator_velocity_update() {
        let s = LinSystem::double_integrator(0.1).unwrap();
        let x = s.step(&DVector::zeros(4), &DVector::from_vec(vec![1.0, 1.0]), &DVector::zeros(4)).unwrap();
        assert_relative_eq!(x[2], 0.1, epsilon = 1e-15);
        assert_relative_eq!(x[3], 0.1, epsilon = 1e-15);
        assert_relative_eq!(x[0], 0.005, epsilon = 1e-15);
    }

    #[test]
    fn step_matches_elementwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let s = LinSystem::new(
                random_matrix(&mut rng, 4, 4, 1.0),
                random_matrix(&mut rng, 4, 2, 1.0),
                random_matrix(&mut rng, 4, 4, 1.0),
            )
            .unwrap();
            let (x, u, w) = (random_vec(&mut rng, 4), random_vec(&mut rng, 2), random_vec(&mut rng, 4));
            let got = s.step(&x, &u, &w).unwrap();
            for (g, e) in got.iter().zip(brute_step(&s, &x, &u, &w)) {
                assert!((g - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_rejects_bad_dims() {
        let s = LinSystem::double_integrator(0.1).unwrap();
        assert!(matches!(s.step(&DVector::zeros(3), &DVector::zeros(2), &DVector::zeros(4)), Err(Error::Contract(_))));
    }

    #[test]
    fn reconstruct_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = random_matrix(&mut rng, 4, 4, 1.0);
        a /= spectral_norm(&a) * 1.25;
        let s = LinSystem::new(a, random_matrix(&mut rng, 4, 2, 1.0), DMatrix::identity(4, 4)).unwrap();
        let zero = s.reconstruct_disturbance(&DVector::zeros(4), &DVector::zeros(2), &DVector::zeros(4)).unwrap();
        assert_eq!(zero.norm(), 0.0);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let (x, u, w) = (random_vec(&mut rng, 4), random_vec(&mut rng, 2), random_vec(&mut rng, 4));
            let xn = s.step(&x, &u, &w).unwrap();
            worst = worst.max((s.reconstruct_disturbance(&x, &u, &xn).unwrap() - w).amax());
        }
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn singular_d_refuses_reconstruction() {
        let mut d = DMatrix::identity(2, 2);
        d[(1, 1)] = 0.0;
        let s = LinSystem::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2), d).unwrap();
        let r = s.reconstruct_disturbance(&DVector::zeros(2), &DVector::zeros(2), &DVector::zeros(2));
        assert!(matches!(r, Err(Error::ReconstructionUnavailable(_))));
    }

    #[test]
    fn rank_deficient_b_rejected() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(LinSystem::without_disturbance_map(DMatrix::identity(2, 2), b).is_err());
    }

    #[test]
    fn already_stable_system_shrinks() {
        let s = LinSystem::without_disturbance_map(DMatrix::identity(2, 2) * 0.5, DMatrix::identity(2, 2)).unwrap();
        let ss = StabilizedSystem::stabilize(&s, &DMatrix::identity(2, 2), &DMatrix::identity(2, 2)).unwrap();
        assert!(spectral_norm(ss.a_cl()) < 0.5);
        assert_eq!(ss.kappa(), 1.0);
    }

    #[test]
    fn double_integrator_lqr_is_schur_stable() {
        let s = LinSystem::double_integrator(0.1).unwrap();
        let ss = StabilizedSystem::stabilize(&s, &(DMatrix::identity(4, 4) * 0.001), &DMatrix::identity(2, 2)).unwrap();
        let radius = ss.a_cl().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(radius < 1.0);
        assert!(ss.gamma() > 0.0 && ss.gamma() <= 1.0);
        // Decoupled axes get identical gains.
        assert!(ss.k()[(0, 1)].abs() < 1e-12 && ss.k()[(1, 0)].abs() < 1e-12);
        assert_relative_eq!(ss.k()[(0, 0)], ss.k()[(1, 1)], epsilon = 1e-9);
    }

    #[test]
    fn random_controllable_pair_decays() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let s = LinSystem::without_disturbance_map(random_matrix(&mut rng, 3, 3, 1.5), random_matrix(&mut rng, 3, 2, 1.0)).unwrap();
            let ss = StabilizedSystem::stabilize(&s, &DMatrix::identity(3, 3), &DMatrix::identity(2, 2)).unwrap();
            let mut x = DVector::from_element(3, 1.0);
            for _ in 0..1000 {
                x = ss.a_cl() * x;
            }
            assert!(x.norm() < 1e-8, "{}", x.norm());
        }
    }

    #[test]
    fn unstable_gain_rejected() {
        let s = LinSystem::without_disturbance_map(DMatrix::identity(2, 2) * 1.2, DMatrix::identity(2, 2)).unwrap();
        let r = StabilizedSystem::with_gain(&s, DMatrix::zeros(2, 2));
        assert!(matches!(r, Err(Error::StabilizationFailed(_))));
    }

    #[test]
    fn lyapunov_certificate_for_nonnormal_loop() {
        // ‖Ã‖₂ > 1 but spectral radius 0.5.
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 3.0, 0.0, 0.5]);
        let s = LinSystem::without_disturbance_map(a, DMatrix::identity(2, 2)).unwrap();
        let ss = StabilizedSystem::with_gain(&s, DMatrix::zeros(2, 2)).unwrap();
        assert!(ss.kappa() > 1.0);
        let mut p = DMatrix::identity(2, 2);
        for n in 0..60 {
            assert!(spectral_norm(&p) <= ss.kappa() * (1.0 - ss.gamma()).powi(n) * (1.0 + 1e-9));
            p = ss.a_cl() * p;
        }
    }

    #[test]
    fn bounds_positive() {
        let s = LinSystem::double_integrator(1.0).unwrap();
        let ss = StabilizedSystem::stabilize(&s, &(DMatrix::identity(4, 4) * 0.001), &DMatrix::identity(2, 2)).unwrap();
        let b = Bounds::new(&ss, 10, 2.0, 1.0, 1.0).unwrap();
        assert!(b.c_x > 0.0 && b.c_u > 0.0);
        let b2 = Bounds::new(&ss, 20, 2.0, 1.0, 1.0).unwrap();
        assert!(b2.c_x > b.c_x);
    }
}
