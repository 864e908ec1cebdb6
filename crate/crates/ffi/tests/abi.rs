use std::ffi::CString;
use std::ptr;

use olc_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { olc_last_error(buf.as_mut_ptr(), buf.len()) };
    let s: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(s).unwrap()
}

#[test]
fn trs_matches_known_maximizer() {
    // max 2z₀² − z₁² + z₀ over the unit disc is at z = (1, 0).
    let p = [2.0, 0.0, 0.0, -1.0];
    let q = [1.0, 0.0];
    let mut z = [0.0; 2];
    let mut res = OlcTrsResult::default();
    let st = unsafe { olc_trs_solve(2, p.as_ptr(), q.as_ptr(), 1.0, 1e-10, z.as_mut_ptr(), &mut res) };
    assert_eq!(st, OlcStatus::Ok);
    assert!((z[0] - 1.0).abs() < 1e-8 && z[1].abs() < 1e-8);
    assert!((res.value - 3.0).abs() < 1e-8);
    assert!(res.on_boundary);
}

#[test]
fn trs_reports_errors() {
    let p = [1.0];
    let mut z = [0.0];
    let mut res = OlcTrsResult::default();
    let st = unsafe { olc_trs_solve(1, p.as_ptr(), ptr::null(), 1.0, 1e-10, z.as_mut_ptr(), &mut res) };
    assert_eq!(st, OlcStatus::NullPointer);
    assert!(last_error().contains("p_vec"));
    let q = [0.0];
    let st = unsafe { olc_trs_solve(1, p.as_ptr(), q.as_ptr(), -1.0, 1e-10, z.as_mut_ptr(), &mut res) };
    assert_eq!(st, OlcStatus::InvalidArgument);
    assert!(!last_error().is_empty());
}

#[test]
fn last_error_truncates() {
    let p = [1.0];
    let q = [0.0];
    let mut z = [0.0];
    let mut res = OlcTrsResult::default();
    unsafe { olc_trs_solve(1, p.as_ptr(), q.as_ptr(), 0.0, 1e-10, z.as_mut_ptr(), &mut res) };
    let mut small = [1 as std::ffi::c_char; 4];
    let full = unsafe { olc_last_error(small.as_mut_ptr(), small.len()) };
    assert!(full > 3);
    assert_eq!(small[3], 0);
}

#[test]
fn controller_round_trip() {
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { olc_system_double_integrator(1.0, 1e-3, 1.0, &mut sys) }, OlcStatus::Ok);
    let (mut dx, mut du) = (0, 0);
    assert_eq!(unsafe { olc_system_dims(sys, &mut dx, &mut du) }, OlcStatus::Ok);
    assert_eq!((dx, du), (4, 2));

    let mut ctrl = ptr::null_mut();
    assert_eq!(unsafe { olc_controller_new(sys, 30, 3, 1.0, 0.01, 7, &mut ctrl) }, OlcStatus::Ok);
    unsafe { olc_system_free(sys) };

    let mut x = [0.0; 4];
    let obstacle = [3.0, 0.0, 0.0, 0.0];
    for t in 0..30 {
        let mut u = [0.0; 2];
        assert_eq!(unsafe { olc_controller_act(ctrl, x.as_ptr(), u.as_mut_ptr()) }, OlcStatus::Ok);
        let next = [x[0] + x[2] + 0.5 * u[0], x[1] + x[3] + 0.5 * u[1], x[2] + u[0], x[3] + u[1]];
        let mut reward = f64::NAN;
        let k = usize::from(t % 2 == 0);
        let st = unsafe { olc_controller_observe(ctrl, next.as_ptr(), obstacle.as_ptr(), k, &mut reward) };
        assert_eq!(st, OlcStatus::Ok, "{}", last_error());
        assert!(reward.is_finite());
        x = next;
    }

    let mut needed = 0;
    let st = unsafe { olc_controller_gains(ctrl, ptr::null_mut(), 0, &mut needed) };
    assert_eq!(st, OlcStatus::InvalidArgument);
    assert_eq!(needed, 2 * 3 * 5);
    let mut g = vec![0.0; needed];
    assert_eq!(unsafe { olc_controller_gains(ctrl, g.as_mut_ptr(), g.len(), &mut needed) }, OlcStatus::Ok);
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm <= 1.0 + 1e-9);
    unsafe { olc_controller_free(ctrl) };
}

#[test]
fn controller_rejects_bad_state_pointer() {
    let mut sys = ptr::null_mut();
    unsafe { olc_system_double_integrator(1.0, 1e-3, 1.0, &mut sys) };
    let mut ctrl = ptr::null_mut();
    unsafe { olc_controller_new(sys, 10, 2, 1.0, 0.01, 0, &mut ctrl) };
    let mut u = [0.0; 2];
    assert_eq!(unsafe { olc_controller_act(ctrl, ptr::null(), u.as_mut_ptr()) }, OlcStatus::NullPointer);
    assert_eq!(unsafe { olc_controller_act(ptr::null_mut(), u.as_ptr(), u.as_mut_ptr()) }, OlcStatus::NullPointer);
    unsafe {
        olc_controller_free(ctrl);
        olc_system_free(sys);
        olc_system_free(ptr::null_mut());
    }
}

#[test]
fn general_system_accepts_custom_gain() {
    let a = [1.0, 1.0, 0.0, 1.0];
    let b = [0.5, 1.0];
    let d = [1.0, 0.0, 0.0, 1.0];
    let k = [-0.5, -1.0];
    let mut sys = ptr::null_mut();
    let st = unsafe { olc_system_new(2, 1, a.as_ptr(), b.as_ptr(), d.as_ptr(), k.as_ptr(), &mut sys) };
    assert_eq!(st, OlcStatus::Ok, "{}", last_error());
    unsafe { olc_system_free(sys) };
}

#[test]
fn episode_from_toml() {
    let cfg = CString::new("[env]\npreset = \"centerline\"\nn_obstacles = 3\n[disturbance]\nkind = \"zero\"\n[olc]\ncontroller = \"zero\"\n")
        .unwrap();
    let mut s = OlcEpisodeSummary::default();
    assert_eq!(unsafe { olc_run_episode(cfg.as_ptr(), 0, &mut s) }, OlcStatus::Ok, "{}", last_error());
    assert_eq!(s.obstacles, 3);
    assert_eq!(s.collision_fraction, 1.0);

    let bad = CString::new("[olc]\nbogus = 1\n").unwrap();
    assert_eq!(unsafe { olc_run_episode(bad.as_ptr(), 0, &mut s) }, OlcStatus::Config);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/olc.h")).unwrap();
    let src = include_str!("../src/lib.rs");
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.trim().strip_prefix("pub unsafe extern \"C\" fn "))
        .map(|l| &l[..l.find('(').unwrap()])
        .collect();
    assert!(exports.len() >= 10);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}
