//! Exact trust-region subproblem `max zᵀPz + pᵀz s.t. ‖z‖ ≤ D` and the
//! vectorized reward instance over `m = vec(M)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, contract, Error, Result};
use crate::game::{Objective, RewardRecord};

const MAX_SECULAR_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct TrustRegionInstance {
    p_mat: DMatrix<f64>,
    p_vec: DVector<f64>,
    radius: f64,
}

impl TrustRegionInstance {
    pub fn new(p_mat: DMatrix<f64>, p_vec: DVector<f64>, radius: f64) -> Result<Self> {
        if !p_mat.is_square() {
            return Err(contract("P must be square"));
        }
        check_dim("p", p_vec.len(), p_mat.nrows())?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(contract("radius must be positive and finite"));
        }
        if !p_mat.iter().chain(p_vec.iter()).all(|v| v.is_finite()) {
            return Err(contract("instance entries must be finite"));
        }
        let p_mat = (&p_mat + p_mat.transpose()) * 0.5;
        Ok(Self { p_mat, p_vec, radius })
    }

    pub fn p_mat(&self) -> &DMatrix<f64> {
        &self.p_mat
    }
    pub fn p_vec(&self) -> &DVector<f64> {
        &self.p_vec
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn dim(&self) -> usize {
        self.p_vec.len()
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        z.dot(&(&self.p_mat * z)) + self.p_vec.dot(z)
    }

    /// Debug dump with keys `P`, `p`, `radius`, `const`.
    pub fn to_text(&self, constant: f64) -> String {
        let dump = InstanceDump {
            p_mat: (0..self.dim()).map(|r| self.p_mat.row(r).iter().copied().collect()).collect(),
            p_vec: self.p_vec.iter().copied().collect(),
            radius: self.radius,
            constant,
        };
        toml::to_string(&dump).expect("instance serializes")
    }

    pub fn from_text(text: &str) -> Result<(Self, f64)> {
        let d: InstanceDump = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let n = d.p_vec.len();
        if d.p_mat.len() != n || d.p_mat.iter().any(|r| r.len() != n) {
            return Err(Error::Config(format!("P must be {n}x{n}")));
        }
        let p_mat = DMatrix::from_fn(n, n, |r, c| d.p_mat[r][c]);
        Ok((Self::new(p_mat, DVector::from_vec(d.p_vec), d.radius)?, d.constant))
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceDump {
    #[serde(rename = "P")]
    p_mat: Vec<Vec<f64>>,
    #[serde(rename = "p")]
    p_vec: Vec<f64>,
    radius: f64,
    #[serde(rename = "const")]
    constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrsSolution {
    pub z: DVector<f64>,
    pub value: f64,
    pub on_boundary: bool,
    /// `λ*` with `2Pz + p = 2λ*z`.
    pub multiplier: f64,
    pub iterations: usize,
}

impl TrsSolution {
    /// `(‖2Pz + p − 2λz‖, λ(D − ‖z‖), max(0, ‖z‖ − D))`
    pub fn kkt_residuals(&self, inst: &TrustRegionInstance) -> (f64, f64, f64) {
        let stat = (inst.p_mat() * &self.z * 2.0 + inst.p_vec() - &self.z * (2.0 * self.multiplier)).norm();
        let zn = self.z.norm();
        (stat, self.multiplier * (inst.radius() - zn), (zn - inst.radius()).max(0.0))
    }

    pub fn satisfies_kkt(&self, inst: &TrustRegionInstance, tol: f64) -> bool {
        let (stat, slack, feas) = self.kkt_residuals(inst);
        let top = inst.p_mat().symmetric_eigenvalues().max();
        stat <= tol * (1.0 + inst.p_vec().norm())
            && slack.abs() <= tol
            && feas <= inst.radius() * 1e-9
            && self.multiplier >= 0.0
            && self.multiplier >= top - tol * (1.0 + top.abs())
    }
}

pub fn solve(inst: &TrustRegionInstance, tol: f64) -> Result<TrsSolution> {
    EigenQuadratic::new(inst.p_mat())?.solve(inst.p_vec(), inst.radius(), tol)
}

/// Eigendecomposition of `P` kept for repeated solves with varying `p`.
#[derive(Debug, Clone)]
pub struct EigenQuadratic {
    vals: DVector<f64>,
    vecs: DMatrix<f64>,
}

impl EigenQuadratic {
    pub fn new(p_mat: &DMatrix<f64>) -> Result<Self> {
        if !p_mat.is_square() || !p_mat.iter().all(|v| v.is_finite()) {
            return Err(contract("P must be square and finite"));
        }
        let sym = (p_mat + p_mat.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
        let vals = DVector::from_fn(n, |k, _| eig.eigenvalues[order[k]]);
        let vecs = DMatrix::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
        Ok(Self { vals, vecs })
    }

    pub fn dim(&self) -> usize {
        self.vals.len()
    }

    pub fn top_eigenvalue(&self) -> f64 {
        self.vals[0]
    }

    fn value(&self, q: &DVector<f64>, y: &DVector<f64>) -> f64 {
        y.iter().zip(self.vals.iter()).zip(q.iter()).map(|((yi, e), qi)| e * yi * yi + qi * yi).sum()
    }

    pub fn solve(&self, p: &DVector<f64>, radius: f64, tol: f64) -> Result<TrsSolution> {
        check_dim("p", p.len(), self.dim())?;
        if !(tol > 0.0 && tol <= 1e-3) {
            return Err(contract("tol must lie in (0, 1e-3]"));
        }
        if !(radius > 0.0 && radius.is_finite()) || !p.iter().all(|v| v.is_finite()) {
            return Err(contract("radius and p must be finite, radius positive"));
        }
        let n = self.dim();
        if n == 0 {
            return Err(contract("empty instance"));
        }
        let q = self.vecs.tr_mul(p);
        let e1 = self.vals[0];
        let scale = self.vals.amax().max(p.norm()).max(1.0);

        if e1 < -1e-14 * scale {
            let y = DVector::from_fn(n, |i, _| -q[i] / (2.0 * self.vals[i]));
            if y.norm() < radius {
                return Ok(self.finish(&q, y, 0.0, false, 0));
            }
        }

        let top_tol = 1e-12 * scale;
        let n_top = self.vals.iter().take_while(|&&e| e >= e1 - top_tol).count();
        let q_top = q.rows(0, n_top).norm();
        let pn = p.norm();
        if e1 >= 0.0 && q_top <= 1e-12 * pn.max(1.0) {
            let mut y = DVector::zeros(n);
            for i in n_top..n {
                y[i] = q[i] / (2.0 * (e1 - self.vals[i]));
            }
            let rest = y.norm();
            if e1 <= top_tol && rest <= radius {
                // Flat top eigenspace: every completion is optimal, keep the
                // minimum-norm one.
                return Ok(self.finish(&q, y, 0.0, false, 0));
            }
            if rest <= radius {
                let tau = (radius * radius - rest * rest).max(0.0).sqrt();
                let dir = if q_top > 0.0 {
                    q.rows(0, n_top).into_owned() / q_top
                } else {
                    let mut d = DVector::zeros(n_top);
                    d[0] = 1.0;
                    d
                };
                let mut plus = y.clone();
                let mut minus = y;
                for k in 0..n_top {
                    plus[k] += tau * dir[k];
                    minus[k] -= tau * dir[k];
                }
                let y = if q_top > 0.0 { plus } else { self.tie_break(plus, minus, radius) };
                return Ok(self.finish(&q, y, e1, true, 0));
            }
        }

        // Secular equation 1/‖z(λ)‖ = 1/D on (max(e1, 0), ∞).
        let norm2 = |lam: f64| -> (f64, f64) {
            let mut s = 0.0;
            let mut ds = 0.0;
            for i in 0..n {
                let den = lam - self.vals[i];
                let t = q[i] * q[i] / (4.0 * den * den);
                s += t;
                ds -= 2.0 * t / den;
            }
            (s, ds)
        };
        let mut lo = e1.max(0.0);
        let mut hi = lo + pn / (2.0 * radius) + 1e-300;
        let mut lam = hi;
        let mut iters = 0;
        let mut resid = f64::INFINITY;
        while iters < MAX_SECULAR_ITERS {
            iters += 1;
            let (s, ds) = norm2(lam);
            let zn = s.sqrt();
            resid = (zn - radius).abs();
            if resid <= 1e-14 * radius || hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1e-300) {
                break;
            }
            if zn > radius {
                lo = lam;
            } else {
                hi = lam;
            }
            let phi = 1.0 / zn - 1.0 / radius;
            let dphi = -0.5 * ds / (s * zn);
            let newton = lam - phi / dphi;
            lam = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        let mut y = DVector::from_fn(n, |i, _| q[i] / (2.0 * (lam - self.vals[i])));
        let yn = y.norm();
        if !(yn.is_finite() && yn > 0.0) || (iters == MAX_SECULAR_ITERS && (yn - radius).abs() > tol * radius.max(1.0)) {
            return Err(Error::SolverFailure { iterations: iters, residual: if resid.is_finite() { resid } else { yn } });
        }
        let rest = y.rows(n_top, n - n_top).norm();
        let top = y.rows(0, n_top).norm();
        if (yn - radius).abs() > 1e-12 * radius && rest < radius && top > 0.0 {
            // Nearly hard case: the pole at the top eigenvalue leaves the
            // bracket collapsed short of the boundary; close the gap along
            // the top eigenspace.
            let t = (radius * radius - rest * rest).sqrt() / top;
            for k in 0..n_top {
                y[k] *= t;
            }
        } else {
            y *= radius / yn;
        }
        Ok(self.finish(&q, y, lam, true, iters))
    }

    fn tie_break(&self, plus: DVector<f64>, minus: DVector<f64>, radius: f64) -> DVector<f64> {
        let zp = &self.vecs * &plus;
        let zm = &self.vecs * &minus;
        let eps = 1e-12 * radius;
        for k in 0..zp.len() {
            let (a, b) = (zp[k], zm[k]);
            if a.abs() > eps || b.abs() > eps {
                return if a > eps || !(b > eps) { plus } else { minus };
            }
        }
        plus
    }

    fn finish(&self, q: &DVector<f64>, y: DVector<f64>, lam: f64, on_boundary: bool, iterations: usize) -> TrsSolution {
        let value = self.value(q, &y);
        TrsSolution { z: &self.vecs * y, value, on_boundary, multiplier: lam, iterations }
    }
}

/// Weight-independent pieces of the vectorized reward, accumulated one
/// record at a time. `P = (Σ bbᵀ) ⊗ (−BᵀQB − R) + (Σ_sensed bbᵀ) ⊗ BᵀSᵀSB`
/// does not depend on the obstacle weights, so one eigendecomposition
/// serves a whole game.
#[derive(Debug, Clone)]
pub struct InstanceParts {
    bsum_all: DMatrix<f64>,
    bsum_sensed: DMatrix<f64>,
    g_cost: DMatrix<f64>,
    g_dist: DMatrix<f64>,
    btq: DMatrix<f64>,
    /// `2BᵀSᵀS`
    dist_map: DMatrix<f64>,
    p_fixed: DVector<f64>,
    const_fixed: f64,
    n_records: usize,
    /// Records with several sensed obstacles; all others are folded into
    /// `p_fixed` and `const_fixed`.
    multi: Vec<usize>,
}

impl InstanceParts {
    pub fn empty(obj: &Objective) -> Self {
        let ss = obj.system();
        let (du, nb) = (ss.du(), obj.stack_len());
        let b = ss.b();
        let sb = obj.proj() * b;
        Self {
            bsum_all: DMatrix::zeros(nb, nb),
            bsum_sensed: DMatrix::zeros(nb, nb),
            g_cost: -(b.tr_mul(&(obj.q() * b))) - obj.r(),
            g_dist: sb.tr_mul(&sb),
            btq: b.transpose() * obj.q(),
            dist_map: sb.transpose() * obj.proj() * 2.0,
            p_fixed: DVector::zeros(du * nb),
            const_fixed: 0.0,
            n_records: 0,
            multi: Vec::new(),
        }
    }

    pub fn new(obj: &Objective, records: &[RewardRecord]) -> Result<Self> {
        let mut parts = Self::empty(obj);
        for rec in records {
            parts.push(obj, rec)?;
        }
        Ok(parts)
    }

    pub fn len(&self) -> usize {
        self.n_records
    }

    pub fn is_empty(&self) -> bool {
        self.n_records == 0
    }

    /// Indices of records whose obstacle weights matter.
    pub fn multi(&self) -> &[usize] {
        &self.multi
    }

    pub fn push(&mut self, obj: &Objective, rec: &RewardRecord) -> Result<()> {
        rec.check(obj)?;
        let bb = &rec.b * rec.b.transpose();
        self.bsum_all += &bb;
        self.p_fixed -= rec.b.kronecker(&(&self.btq * &rec.b0)) * 2.0;
        self.const_fixed -= rec.b0.dot(&(obj.q() * &rec.b0));
        match rec.sentinel {
            Some(far) => self.const_fixed += far * far,
            None => {
                self.bsum_sensed += &bb;
                if rec.k() == 1 {
                    let a = &rec.a_list[0];
                    let sa = obj.proj() * a;
                    self.const_fixed += sa.dot(&sa);
                    self.p_fixed += rec.b.kronecker(&(&self.dist_map * a));
                } else {
                    self.multi.push(self.n_records);
                }
            }
        }
        self.n_records += 1;
        Ok(())
    }

    pub fn p_mat(&self) -> DMatrix<f64> {
        self.bsum_all.kronecker(&self.g_cost) + self.bsum_sensed.kronecker(&self.g_dist)
    }

    /// Linear term and constant for a given set of obstacle weights.
    pub fn linear_part(
        &self,
        obj: &Objective,
        records: &[RewardRecord],
        weights: &[DVector<f64>],
    ) -> Result<(DVector<f64>, f64)> {
        check_dim("records", records.len(), self.len())?;
        check_dim("weights", weights.len(), records.len())?;
        let mut p = self.p_fixed.clone();
        p += DVector::from_column_slice(obj.perturbation().as_slice()) * obj.lambda();
        let mut constant = self.const_fixed;
        let s = obj.proj();
        for (rec, c) in records.iter().zip(weights) {
            check_simplex(c, rec.k())?;
        }
        for &i in &self.multi {
            let (rec, c) = (&records[i], &weights[i]);
            let mut abar = DVector::zeros(rec.b0.len());
            for (a, cj) in rec.a_list.iter().zip(c.iter()) {
                abar += a * *cj;
                let sa = s * a;
                constant += cj * sa.dot(&sa);
            }
            p += rec.b.kronecker(&(&self.dist_map * abar));
        }
        Ok((p, constant))
    }
}

pub fn check_simplex(c: &DVector<f64>, k: usize) -> Result<()> {
    check_dim("simplex weights", c.len(), k)?;
    if c.iter().any(|v| !(*v >= -1e-12)) || (c.sum() - 1.0).abs() > 1e-9 {
        return Err(contract(format!("weights {:?} are not on the simplex", c.as_slice())));
    }
    Ok(())
}

/// Returns `(instance, const)` with `mᵀPm + pᵀm + const` equal to the
/// weighted reward summed over `records` plus `λ(M•P0)`.
pub fn build_instance(
    obj: &Objective,
    records: &[RewardRecord],
    weights: &[DVector<f64>],
) -> Result<(TrustRegionInstance, f64)> {
    let parts = InstanceParts::new(obj, records)?;
    let (p, constant) = parts.linear_part(obj, records, weights)?;
    Ok((TrustRegionInstance::new(parts.p_mat(), p, obj.d_m())?, constant))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inst(p: &[f64], lin: &[f64], r: f64) -> TrustRegionInstance {
        let n = lin.len();
        TrustRegionInstance::new(DMatrix::from_row_slice(n, n, p), DVector::from_column_slice(lin), r).unwrap()
    }

    #[test]
    fn linear_objective_on_ball() {
        let i = inst(&[0.0, 0.0, 0.0, 0.0], &[1.0, 0.0], 1.0);
        let s = solve(&i, 1e-9).unwrap();
        assert!((s.z[0] - 1.0).abs() < 1e-12 && s.z[1].abs() < 1e-12);
        assert!((s.value - 1.0).abs() < 1e-12);
        assert!(s.satisfies_kkt(&i, 1e-8));
    }

    #[test]
    fn hard_case_tie_break() {
        let i = inst(&[1.0, 0.0, 0.0, -1.0], &[0.0, 0.0], 2.0);
        let s = solve(&i, 1e-9).unwrap();
        assert!((s.value - 4.0).abs() < 1e-12);
        assert!((s.z[0] - 2.0).abs() < 1e-12 && s.z[1].abs() < 1e-12);
    }

    #[test]
    fn hard_case_with_offset() {
        // p orthogonal to the top eigenvector, unconstrained rest inside the ball.
        let i = inst(&[2.0, 0.0, 0.0, -1.0], &[0.0, 1.0], 1.0);
        let s = solve(&i, 1e-9).unwrap();
        assert!((s.z.norm() - 1.0).abs() < 1e-12);
        assert!(s.z[0] > 0.0);
        assert!(s.satisfies_kkt(&i, 1e-8));
        // z_rest = 1/6 on the second axis.
        assert!((s.z[1] - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn interior_case() {
        let i = inst(&[-1.0, 0.0, 0.0, -2.0], &[0.5, 0.4], 1.0);
        let s = solve(&i, 1e-9).unwrap();
        assert!(!s.on_boundary && s.multiplier == 0.0);
        assert!((s.z[0] - 0.25).abs() < 1e-14 && (s.z[1] - 0.1).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrustRegionInstance::new(DMatrix::from_element(1, 1, f64::NAN), DVector::zeros(1), 1.0).is_err());
        let i = inst(&[1.0], &[1.0], 1.0);
        assert!(solve(&i, 0.5).is_err());
    }

    #[test]
    fn beats_random_feasible_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let n = rng.random_range(1..6);
            let p = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let lin = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let r = rng.random_range(0.1..3.0);
            let i = TrustRegionInstance::new(p, lin, r).unwrap();
            let s = solve(&i, 1e-9).unwrap();
            assert!(s.satisfies_kkt(&i, 1e-8));
            for _ in 0..10_000 {
                let mut z = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                let zn = z.norm();
                if zn > 0.0 {
                    z *= r * rng.random_range(0.0f64..1.0).powf(1.0 / n as f64) / zn;
                }
                assert!(i.value(&z) <= s.value + 1e-10);
            }
        }
    }

    #[test]
    fn dump_round_trip() {
        let i = inst(&[1.0, 0.5, 0.5, -1.0], &[0.25, 0.0], 2.0);
        let (back, c) = TrustRegionInstance::from_text(&i.to_text(3.5)).unwrap();
        assert_eq!(back, i);
        assert_eq!(c, 3.5);
        assert!(i.to_text(0.0).contains("const"));
    }
}
