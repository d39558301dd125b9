use std::ffi::CString;
use std::ptr;

use repcost_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { rc_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn small_config() -> RcTrainConfig {
    RcTrainConfig {
        restarts: 2,
        adam_iters: 3000,
        max_iters: 2000,
        seed: 3,
        ..rc_train_config_default()
    }
}

#[test]
fn dataset_roundtrip() {
    let x = [0.0, 0.5, 1.0];
    let y = [1.0, 2.0, 0.0, 1.0, -1.0, 0.5];
    let mut d = ptr::null_mut();
    unsafe {
        assert_eq!(rc_dataset_new(x.as_ptr(), y.as_ptr(), 3, 1, 2, &mut d), RcStatus::Ok);
        let (mut n, mut di, mut dout) = (0, 0, 0);
        assert_eq!(rc_dataset_shape(d, &mut n, &mut di, &mut dout), RcStatus::Ok);
        assert_eq!((n, di, dout), (3, 1, 2));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("d.csv").to_str().unwrap()).unwrap();
        assert_eq!(rc_dataset_save_csv(d, path.as_ptr()), RcStatus::Ok);
        let mut e = ptr::null_mut();
        assert_eq!(rc_dataset_load_csv(path.as_ptr(), &mut e), RcStatus::Ok);
        assert_eq!(rc_dataset_shape(e, &mut n, ptr::null_mut(), ptr::null_mut()), RcStatus::Ok);
        assert_eq!(n, 3);
        rc_dataset_free(d);
        rc_dataset_free(e);
    }
}

#[test]
fn errors_are_reported() {
    let mut d = ptr::null_mut();
    unsafe {
        assert_eq!(rc_dataset_new(ptr::null(), ptr::null(), 2, 1, 1, &mut d), RcStatus::NullPointer);
        assert!(last_error().contains("null"));
        let missing = CString::new("/nonexistent/dir/file.csv").unwrap();
        assert_eq!(rc_dataset_load_csv(missing.as_ptr(), &mut d), RcStatus::Io);
        assert!(d.is_null());
        assert_eq!(rc_dataset_random(0, 1, 1, 0, &mut d), RcStatus::InvalidArgument);
        assert_eq!(rc_dataset_random(4, 2, 1, 0, &mut d), RcStatus::Ok);
        let mut o = ptr::null_mut();
        assert_eq!(rc_oracle_solve(d, 0.1, 64, 1.0, &mut o), RcStatus::UnsupportedDimension);
        assert!(o.is_null());
        rc_dataset_free(d);
        rc_dataset_free(ptr::null_mut());
        rc_network_free(ptr::null_mut());
        rc_oracle_free(ptr::null_mut());
    }
}

#[test]
fn train_forward_and_cost() {
    let mut d = ptr::null_mut();
    let mut net = ptr::null_mut();
    let cfg = small_config();
    let mut obj = 0.0;
    unsafe {
        assert_eq!(rc_dataset_random(5, 1, 2, 1, &mut d), RcStatus::Ok);
        assert_eq!(rc_network_train_shallow(d, 16, &cfg, &mut net, &mut obj), RcStatus::Ok);
        assert!(obj.is_finite() && obj > 0.0);

        let (mut di, mut dout) = (0, 0);
        rc_network_dims(net, &mut di, &mut dout);
        assert_eq!((di, dout), (1, 2));
        let mut y = [0.0; 2];
        assert_eq!(rc_network_forward(net, [0.25].as_ptr(), 1, y.as_mut_ptr(), 2), RcStatus::Ok);
        assert_eq!(rc_network_forward(net, [0.25].as_ptr(), 1, y.as_mut_ptr(), 3), RcStatus::Shape);

        // Balanced networks have squared norm equal to their cost.
        assert_eq!(rc_network_balance(net), RcStatus::Ok);
        let (mut sq, mut cost) = (0.0, 0.0);
        rc_network_param_norm_sq(net, &mut sq);
        rc_network_cost(net, &mut cost);
        assert!((sq - cost).abs() <= 1e-8 * cost);

        let mut z = [0.0; 2];
        rc_network_forward(net, [0.25].as_ptr(), 1, z.as_mut_ptr(), 2);
        assert!((y[0] - z[0]).abs() < 1e-10 && (y[1] - z[1]).abs() < 1e-10);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("n.txt").to_str().unwrap()).unwrap();
        assert_eq!(rc_network_save(net, path.as_ptr()), RcStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(rc_network_load(path.as_ptr(), &mut back), RcStatus::Ok);
        let mut w = [0.0; 2];
        rc_network_forward(back, [0.25].as_ptr(), 1, w.as_mut_ptr(), 2);
        assert_eq!(w, z);
        rc_network_free(back);
        rc_network_free(net);
        rc_dataset_free(d);
    }
}

#[test]
fn oracle_and_its_network_agree() {
    let mut d = ptr::null_mut();
    let mut o = ptr::null_mut();
    let mut net = ptr::null_mut();
    unsafe {
        assert_eq!(rc_dataset_random(6, 1, 2, 4, &mut d), RcStatus::Ok);
        assert_eq!(rc_oracle_solve(d, 0.05, 128, 1.0, &mut o), RcStatus::Ok);
        let (mut obj, mut pen, mut kkt, mut act) = (0.0, 0.0, 0.0, 0);
        assert_eq!(rc_oracle_stats(o, &mut obj, &mut pen, &mut kkt, &mut act), RcStatus::Ok);
        assert!(kkt < 1e-6 && act > 0 && pen > 0.0 && obj > 0.0);

        assert_eq!(rc_oracle_to_network(o, &mut net), RcStatus::Ok);
        let mut cost = 0.0;
        rc_network_cost(net, &mut cost);
        assert!((cost - pen).abs() <= 1e-8 * pen);
        for i in 0..11 {
            let x = -1.5 + 0.3 * i as f64;
            let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
            assert_eq!(rc_oracle_predict(o, x, a.as_mut_ptr(), 2), RcStatus::Ok);
            rc_network_forward(net, &x, 1, b.as_mut_ptr(), 2);
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
        rc_network_free(net);
        rc_oracle_free(o);
        rc_dataset_free(d);
    }
}

#[test]
fn header_declares_the_api() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/include/repcost.h");
    let header = std::fs::read_to_string(path).unwrap();
    for name in [
        "typedef struct RcNetwork RcNetwork;",
        "typedef struct RcDataset RcDataset;",
        "typedef struct RcOracle RcOracle;",
        "RC_STATUS_OK = 0",
        "rc_network_train_shallow",
        "rc_oracle_solve",
        "rc_last_error",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
    // Compile the header as C when a compiler is around.
    if let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", path])
        .status()
    {
        assert!(status.success());
    }
}
