use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use mlspike_ffi::*;

fn trains(per_train: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>) {
    let times = per_train.iter().flatten().copied().collect();
    let lengths = per_train.iter().map(Vec::len).collect();
    (times, lengths)
}

fn view(times: &[f64], lengths: &[usize]) -> MlspikeTrains {
    MlspikeTrains {
        times: times.as_ptr(),
        lengths: lengths.as_ptr(),
        n_trains: lengths.len(),
    }
}

fn input_pattern(n_i: usize) -> Vec<Vec<f64>> {
    (0..n_i)
        .map(|i| vec![(i * 7 % 480) as f64 + 5.0, (i * 13 % 480) as f64 + 10.0])
        .collect()
}

fn last_error() -> String {
    let p = mlspike_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_net(n_h: usize, seed: u64) -> *mut MlspikeNetwork {
    let mut h = ptr::null_mut();
    let s = unsafe {
        mlspike_network_new(
            100,
            n_h,
            1,
            MlspikeVariant::Free,
            MlspikeRule::Backprop,
            1,
            seed,
            &mut h,
        )
    };
    assert_eq!(s, MlspikeStatus::Ok);
    assert!(!h.is_null());
    h
}

#[test]
fn lifecycle_and_dims() {
    let h = new_net(10, 1);
    let (mut a, mut b, mut c) = (0, 0, 0);
    assert_eq!(
        unsafe { mlspike_network_dims(h, &mut a, &mut b, &mut c) },
        MlspikeStatus::Ok
    );
    assert_eq!((a, b, c), (100, 10, 1));
    unsafe { mlspike_network_free(h) };
    unsafe { mlspike_network_free(ptr::null_mut()) };
}

#[test]
fn weights_copy_and_buffer_sizing() {
    let h = new_net(10, 2);
    let mut need = 0;
    let s =
        unsafe { mlspike_network_weights(h, MlspikeLayer::Output, ptr::null_mut(), 0, &mut need) };
    assert_eq!(s, MlspikeStatus::BufferTooSmall);
    assert_eq!(need, 10);
    let mut buf = vec![0.0; need];
    let s = unsafe {
        mlspike_network_weights(
            h,
            MlspikeLayer::Output,
            buf.as_mut_ptr(),
            buf.len(),
            &mut need,
        )
    };
    assert_eq!(s, MlspikeStatus::Ok);
    assert!(buf.iter().all(|&w| (w - 1.2).abs() < 1e-12));

    let mut hid = vec![0.0; 1000];
    let s = unsafe {
        mlspike_network_weights(
            h,
            MlspikeLayer::Hidden,
            hid.as_mut_ptr(),
            hid.len(),
            &mut need,
        )
    };
    assert_eq!(s, MlspikeStatus::Ok);
    assert!(hid.iter().all(|&w| (0.0..3.0).contains(&w)));
    unsafe { mlspike_network_free(h) };
}

#[test]
fn null_and_invalid_arguments_report_errors() {
    let s = unsafe {
        mlspike_network_new(
            100,
            10,
            1,
            MlspikeVariant::Free,
            MlspikeRule::Backprop,
            1,
            0,
            ptr::null_mut(),
        )
    };
    assert_eq!(s, MlspikeStatus::NullPointer);
    assert!(last_error().contains("out"));

    let mut h = ptr::null_mut();
    let s = unsafe {
        mlspike_network_new(
            0,
            10,
            1,
            MlspikeVariant::Free,
            MlspikeRule::Backprop,
            1,
            0,
            &mut h,
        )
    };
    assert_eq!(s, MlspikeStatus::Config);
    assert!(h.is_null());

    let h = new_net(5, 3);
    let (times, lengths) = trains(&input_pattern(3));
    let mut lens = [0usize; 1];
    let mut need = 0;
    let s = unsafe {
        mlspike_network_simulate(
            h,
            &view(&times, &lengths),
            ptr::null_mut(),
            0,
            lens.as_mut_ptr(),
            &mut need,
        )
    };
    assert_eq!(s, MlspikeStatus::Config);
    assert!(!last_error().is_empty());

    let bad = [-1.0];
    let mut d = 0.0;
    let s = unsafe { mlspike_vrd(bad.as_ptr(), 1, ptr::null(), 0, 10.0, &mut d) };
    assert_eq!(s, MlspikeStatus::InvalidArgument);
    unsafe { mlspike_network_free(h) };
}

#[test]
fn vrd_closed_form() {
    let a = [100.0];
    let b = [105.0];
    let mut d = 0.0;
    assert_eq!(
        unsafe { mlspike_vrd(a.as_ptr(), 1, b.as_ptr(), 1, 10.0, &mut d) },
        MlspikeStatus::Ok
    );
    assert!((d - (1.0 - (-0.5f64).exp())).abs() < 1e-12);
    assert_eq!(
        unsafe { mlspike_vrd(a.as_ptr(), 1, ptr::null(), 0, 10.0, &mut d) },
        MlspikeStatus::Ok
    );
    assert!((d - 0.5).abs() < 1e-12);
    assert_eq!(
        unsafe { mlspike_vrd(a.as_ptr(), 1, b.as_ptr(), 1, 0.0, &mut d) },
        MlspikeStatus::Config
    );
}

#[test]
fn training_reduces_distance() {
    let h = new_net(10, 4);
    let (times, lengths) = trains(&input_pattern(100));
    let input = view(&times, &lengths);
    let target_times = [200.0];
    let target_len = [1usize];
    let target = view(&target_times, &target_len);
    let mut first = Vec::new();
    let mut last = Vec::new();
    for ep in 0..300 {
        let mut d = 0.0;
        assert_eq!(
            unsafe { mlspike_network_train_episode(h, &input, &target, &mut d) },
            MlspikeStatus::Ok
        );
        if ep < 20 {
            first.push(d);
        }
        if ep >= 280 {
            last.push(d);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&last) < mean(&first),
        "{} !< {}",
        mean(&last),
        mean(&first)
    );

    let mut out = [0.0; 64];
    let mut lens = [0usize; 1];
    let mut need = 0;
    let s = unsafe {
        mlspike_network_simulate(
            h,
            &input,
            out.as_mut_ptr(),
            out.len(),
            lens.as_mut_ptr(),
            &mut need,
        )
    };
    assert_eq!(s, MlspikeStatus::Ok);
    assert_eq!(lens[0], need);
    unsafe { mlspike_network_free(h) };
}

#[test]
fn json_round_trip() {
    let h = new_net(4, 5);
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { mlspike_network_to_json(h, &mut s) },
        MlspikeStatus::Ok
    );
    let text = unsafe { CStr::from_ptr(s) }.to_owned();
    let mut g = ptr::null_mut();
    assert_eq!(
        unsafe { mlspike_network_from_json(text.as_ptr(), MlspikeRule::Backprop, 1, 9, &mut g) },
        MlspikeStatus::Ok
    );
    let mut s2 = ptr::null_mut();
    assert_eq!(
        unsafe { mlspike_network_to_json(g, &mut s2) },
        MlspikeStatus::Ok
    );
    assert_eq!(text.as_c_str(), unsafe { CStr::from_ptr(s2) });
    unsafe {
        mlspike_string_free(s);
        mlspike_string_free(s2);
        mlspike_network_free(h);
        mlspike_network_free(g);
    }

    let junk = CString::new("{not json").unwrap();
    let mut g = ptr::null_mut();
    let st =
        unsafe { mlspike_network_from_json(junk.as_ptr(), MlspikeRule::Backprop, 1, 0, &mut g) };
    assert_eq!(st, MlspikeStatus::Format);
}

#[test]
fn run_experiment_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("xor.toml");
    std::fs::write(&cfg, "episodes = 20\n[sweep]\nvariant = []\n").unwrap();
    let id = CString::new("xor").unwrap();
    let cfg_c = CString::new(cfg.to_str().unwrap()).unwrap();
    let out = dir.path().join("out");
    let out_c = CString::new(out.to_str().unwrap()).unwrap();
    let s = unsafe { mlspike_run_experiment(id.as_ptr(), cfg_c.as_ptr(), out_c.as_ptr(), 3, 2) };
    assert_eq!(s, MlspikeStatus::Ok, "{}", last_error());
    assert!(out.join("summary.csv").exists());
    assert!(out.join("manifest.json").exists());

    let bad = CString::new("no-such-experiment").unwrap();
    let s = unsafe { mlspike_run_experiment(bad.as_ptr(), ptr::null(), out_c.as_ptr(), -1, 0) };
    assert_eq!(s, MlspikeStatus::Config);
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/mlspike.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "mlspike_network_new",
        "mlspike_network_free",
        "mlspike_network_train_episode",
        "mlspike_network_simulate",
        "mlspike_network_weights",
        "mlspike_network_to_json",
        "mlspike_string_free",
        "mlspike_vrd",
        "mlspike_run_experiment",
        "mlspike_last_error_message",
        "MLSPIKE_STATUS_OK",
    ] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"mlspike.h\"\nint main(void){MlspikeNetwork*n=0;\
         MlspikeStatus s=mlspike_network_new(100,10,1,MLSPIKE_VARIANT_FREE,MLSPIKE_RULE_BACKPROP,1,1,&n);\
         mlspike_network_free(n);return (int)s;}\n",
    )
    .unwrap();
    // Syntax check only; skipped when no C compiler is installed.
    match Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    {
        Ok(status) => assert!(status.success()),
        Err(_) => eprintln!("cc not found; header compile check skipped"),
    }
}
