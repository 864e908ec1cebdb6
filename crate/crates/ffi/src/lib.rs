//! C interface to the `olc` library.
//!
//! Every function returns an [`OlcStatus`]. On failure the message is kept
//! per thread and can be read with [`olc_last_error`]. Matrices are passed
//! row-major. Handles are opaque and must be released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};
use olc::bench::{run_episode, RunConfig};
use olc::lindyn::{LinSystem, StabilizedSystem};
use olc::olc::{Olc, OlcParams, UpdateRule};
use olc::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OlcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    SolverFailure = 4,
    Io = 5,
    Panic = 6,
}

/// A stabilized linear system.
pub struct OlcSystem {
    inner: StabilizedSystem,
}

/// An online learning controller bound to a system.
pub struct OlcController {
    inner: Olc,
    dx: usize,
    du: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OlcTrsResult {
    pub value: f64,
    pub multiplier: f64,
    pub on_boundary: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OlcEpisodeSummary {
    pub steps: usize,
    pub collisions: usize,
    pub obstacles: usize,
    pub collided_obstacles: usize,
    pub collision_fraction: f64,
    pub lq_cost: f64,
    pub reward: f64,
    pub pass_left: usize,
    pub pass_right: usize,
    pub solver_failed: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> OlcStatus {
    match e {
        Error::Contract(_) => OlcStatus::InvalidArgument,
        Error::Config(_) => OlcStatus::Config,
        Error::SolverFailure { .. } | Error::StabilizationFailed(_) | Error::ReconstructionUnavailable(_) => {
            OlcStatus::SolverFailure
        }
        Error::Io(_) | Error::Csv(_) => OlcStatus::Io,
    }
}

struct Fail(OlcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(OlcStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OlcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            OlcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            OlcStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating if needed. Returns the full message
/// length in bytes excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn olc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Maximizes `zᵀPz + pᵀz` over `‖z‖ ≤ radius`. `p_mat` is `n×n` row-major,
/// `p_vec` and `z_out` have length `n`.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn olc_trs_solve(
    n: usize,
    p_mat: *const f64,
    p_vec: *const f64,
    radius: f64,
    tol: f64,
    z_out: *mut f64,
    result: *mut OlcTrsResult,
) -> OlcStatus {
    guard(|| {
        if n == 0 {
            return Err(Fail(OlcStatus::InvalidArgument, "dimension must be positive".into()));
        }
        let pm = DMatrix::from_row_slice(n, n, slice(p_mat, n * n, "p_mat")?);
        let pv = DVector::from_column_slice(slice(p_vec, n, "p_vec")?);
        let z = slice_mut(z_out, n, "z_out")?;
        let res = out_ref(result, "result")?;
        let inst = olc::trs::TrustRegionInstance::new(pm, pv, radius)?;
        let sol = olc::trs::solve(&inst, tol)?;
        z.copy_from_slice(sol.z.as_slice());
        *res = OlcTrsResult { value: sol.value, multiplier: sol.multiplier, on_boundary: sol.on_boundary };
        Ok(())
    })
}

/// Planar double integrator with time step `dt`, stabilized by LQR with
/// weights `lqr_q·I` and `lqr_r·I`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn olc_system_double_integrator(
    dt: f64,
    lqr_q: f64,
    lqr_r: f64,
    out: *mut *mut OlcSystem,
) -> OlcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let sys = LinSystem::double_integrator(dt)?;
        let ss = StabilizedSystem::stabilize(&sys, &(DMatrix::identity(4, 4) * lqr_q), &(DMatrix::identity(2, 2) * lqr_r))?;
        *out = Box::into_raw(Box::new(OlcSystem { inner: ss }));
        Ok(())
    })
}

/// General system `x' = Ax + Bu + Dw` with a caller-supplied gain `K`
/// (`u = Kx`). `a` is `dx×dx`, `b` is `dx×du`, `d` is `dx×dx`, `k` is `du×dx`.
///
/// # Safety
/// Pointers must be valid for the stated shapes.
#[no_mangle]
pub unsafe extern "C" fn olc_system_new(
    dx: usize,
    du: usize,
    a: *const f64,
    b: *const f64,
    d: *const f64,
    k: *const f64,
    out: *mut *mut OlcSystem,
) -> OlcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let a = DMatrix::from_row_slice(dx, dx, slice(a, dx * dx, "a")?);
        let b = DMatrix::from_row_slice(dx, du, slice(b, dx * du, "b")?);
        let d = DMatrix::from_row_slice(dx, dx, slice(d, dx * dx, "d")?);
        let k = DMatrix::from_row_slice(du, dx, slice(k, du * dx, "k")?);
        let sys = LinSystem::new(a, b, d)?;
        let ss = StabilizedSystem::with_gain(&sys, k)?;
        *out = Box::into_raw(Box::new(OlcSystem { inner: ss }));
        Ok(())
    })
}

/// Writes the state and input dimensions.
///
/// # Safety
/// `sys` must come from an `olc_system_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn olc_system_dims(sys: *const OlcSystem, dx: *mut usize, du: *mut usize) -> OlcStatus {
    guard(|| {
        let s = sys.as_ref().ok_or_else(|| null("sys"))?;
        *out_ref(dx, "dx")? = s.inner.dx();
        *out_ref(du, "du")? = s.inner.du();
        Ok(())
    })
}

/// # Safety
/// `sys` must be null or come from an `olc_system_*` constructor, and must
/// not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn olc_system_free(sys: *mut OlcSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// A gradient-descent controller with memory `h`, policy radius `d_m`,
/// learning rate `lr` and horizon `horizon`. Reward weights default to
/// `Q = 1e-3·I`, `R = I`. The system handle may be freed afterwards.
///
/// # Safety
/// `sys` must be a live system handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn olc_controller_new(
    sys: *const OlcSystem,
    horizon: usize,
    h: usize,
    d_m: f64,
    lr: f64,
    seed: u64,
    out: *mut *mut OlcController,
) -> OlcStatus {
    guard(|| {
        let s = sys.as_ref().ok_or_else(|| null("sys"))?;
        let out = out_ref(out, "out")?;
        let (dx, du) = (s.inner.dx(), s.inner.du());
        let mut params = OlcParams::new(dx, du);
        params.horizon = horizon;
        params.h = h;
        params.d_m = d_m;
        params.update = UpdateRule::GradDescent { lr };
        params.safety_horizon = params.safety_horizon.min(horizon.max(1));
        let inner = Olc::new(params, &s.inner, seed)?;
        *out = Box::into_raw(Box::new(OlcController { inner, dx, du }));
        Ok(())
    })
}

/// Input for state `x` (length `dx`), written to `u_out` (length `du`).
///
/// # Safety
/// `ctrl` must be a live controller; buffers must match its dimensions.
#[no_mangle]
pub unsafe extern "C" fn olc_controller_act(ctrl: *mut OlcController, x: *const f64, u_out: *mut f64) -> OlcStatus {
    guard(|| {
        let c = ctrl.as_mut().ok_or_else(|| null("ctrl"))?;
        let x = DVector::from_column_slice(slice(x, c.dx, "x")?);
        let u_out = slice_mut(u_out, c.du, "u_out")?;
        let u = c.inner.act(&x)?;
        u_out.copy_from_slice(u.as_slice());
        Ok(())
    })
}

/// Reports the next state and the `k` sensed obstacles (`k×dx` row-major,
/// in state coordinates) and updates the policy. Writes the realized
/// reward when `reward_out` is non-null.
///
/// # Safety
/// `ctrl` must be a live controller; buffers must match its dimensions.
#[no_mangle]
pub unsafe extern "C" fn olc_controller_observe(
    ctrl: *mut OlcController,
    x_next: *const f64,
    obstacles: *const f64,
    k: usize,
    reward_out: *mut f64,
) -> OlcStatus {
    guard(|| {
        let c = ctrl.as_mut().ok_or_else(|| null("ctrl"))?;
        let x = DVector::from_column_slice(slice(x_next, c.dx, "x_next")?);
        let flat = slice(obstacles, k * c.dx, "obstacles")?;
        let obs: Vec<DVector<f64>> = flat.chunks(c.dx).map(DVector::from_column_slice).collect();
        let r = c.inner.observe_and_update(&x, &obs)?;
        if !reward_out.is_null() {
            *reward_out = r;
        }
        Ok(())
    })
}

/// Current policy gains, `du × H(dw+1)` row-major, into `out` of length
/// `len`. Writes the required length to `needed`.
///
/// # Safety
/// `ctrl` must be a live controller; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn olc_controller_gains(
    ctrl: *const OlcController,
    out: *mut f64,
    len: usize,
    needed: *mut usize,
) -> OlcStatus {
    guard(|| {
        let c = ctrl.as_ref().ok_or_else(|| null("ctrl"))?;
        let g = c.inner.policy().gains();
        let n = g.len();
        *out_ref(needed, "needed")? = n;
        if len < n {
            return Err(Fail(OlcStatus::InvalidArgument, format!("buffer holds {len} values, need {n}")));
        }
        let out = slice_mut(out, n, "out")?;
        for (i, row) in g.row_iter().enumerate() {
            out[i * g.ncols()..(i + 1) * g.ncols()].iter_mut().zip(row.iter()).for_each(|(o, v)| *o = *v);
        }
        Ok(())
    })
}

/// # Safety
/// `ctrl` must be null or a controller handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn olc_controller_free(ctrl: *mut OlcController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}

/// Runs one benchmark episode described by a TOML configuration (null or
/// empty for defaults) with the given seed.
///
/// # Safety
/// `config_toml` must be null or a NUL-terminated UTF-8 string; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn olc_run_episode(config_toml: *const c_char, seed: u64, out: *mut OlcEpisodeSummary) -> OlcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let cfg = if config_toml.is_null() {
            RunConfig::default()
        } else {
            let text = CStr::from_ptr(config_toml)
                .to_str()
                .map_err(|e| Fail(OlcStatus::Config, format!("config is not UTF-8: {e}")))?;
            RunConfig::from_toml(text)?
        };
        let ep = run_episode(&cfg, seed)?;
        let r = &ep.row;
        *out = OlcEpisodeSummary {
            steps: r.steps,
            collisions: r.collisions,
            obstacles: r.obstacles,
            collided_obstacles: r.collided_obstacles,
            collision_fraction: r.collision_fraction,
            lq_cost: r.lq_cost,
            reward: r.reward,
            pass_left: r.pass_left,
            pass_right: r.pass_right,
            solver_failed: r.solver_failed,
        };
        Ok(())
    })
}
