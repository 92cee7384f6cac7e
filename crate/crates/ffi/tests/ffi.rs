use std::ffi::{CStr, CString};
use std::fs;
use std::path::Path;
use std::ptr;

use stlgcp_ffi::*;

fn c(s: &Path) -> CString {
    CString::new(s.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = stlgcp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn write_inputs(dir: &Path) {
    fs::write(dir.join("window.csv"), "x,y\n0,0\n1,0\n1,1\n0,1\n").unwrap();
    let mut rows = String::from("x,y,t\n");
    for k in 0..60 {
        let x = (k as f64 * 0.618_034).fract();
        let y = (k as f64 * 0.414_214).fract();
        rows += &format!("{x},{y},{}\n", 1 + k % 6);
    }
    rows += "5,5,3\n";
    fs::write(dir.join("pattern.csv"), rows).unwrap();
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(stlgcp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn pattern_and_intensity_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let mut pat = ptr::null_mut();
    let st = unsafe {
        stlgcp_pattern_load(
            c(&dir.path().join("pattern.csv")).as_ptr(),
            c(&dir.path().join("window.csv")).as_ptr(),
            &mut pat,
        )
    };
    assert_eq!(st, StlgcpStatus::Ok);
    assert_eq!(unsafe { stlgcp_pattern_len(pat) }, 60);
    let (mut first, mut last) = (0i64, 0i64);
    assert_eq!(
        unsafe { stlgcp_pattern_days(pat, &mut first, &mut last) },
        StlgcpStatus::Ok
    );
    assert_eq!((first, last), (1, 6));

    let mut raster = ptr::null_mut();
    assert_eq!(
        unsafe { stlgcp_kernel_intensity(pat, 16, 12, 0.2, &mut raster) },
        StlgcpStatus::Ok
    );
    let (mut m, mut p) = (0usize, 0usize);
    assert_eq!(
        unsafe { stlgcp_raster_dims(raster, &mut m, &mut p) },
        StlgcpStatus::Ok
    );
    assert_eq!((m, p), (16, 12));
    let mut small = vec![0.0; 10];
    assert_eq!(
        unsafe { stlgcp_raster_copy_values(raster, small.as_mut_ptr(), small.len()) },
        StlgcpStatus::BufferTooSmall
    );
    assert!(last_error().contains("192"));
    let mut buf = vec![0.0; m * p];
    assert_eq!(
        unsafe { stlgcp_raster_copy_values(raster, buf.as_mut_ptr(), buf.len()) },
        StlgcpStatus::Ok
    );
    assert!(buf.iter().all(|v| *v >= 0.0) && buf.iter().any(|v| *v > 0.0));
    let mut integral = 0.0;
    assert_eq!(
        unsafe { stlgcp_raster_integral(raster, &mut integral) },
        StlgcpStatus::Ok
    );
    assert!(integral > 0.0);
    unsafe {
        stlgcp_raster_free(raster);
        stlgcp_pattern_free(pat);
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut pat = ptr::null_mut();
    let missing = CString::new("/nonexistent/pattern.csv").unwrap();
    let st = unsafe { stlgcp_pattern_load(missing.as_ptr(), missing.as_ptr(), &mut pat) };
    assert_eq!(st, StlgcpStatus::Io);
    assert!(pat.is_null());
    assert!(!last_error().is_empty());

    let st = unsafe { stlgcp_pattern_load(ptr::null(), missing.as_ptr(), &mut pat) };
    assert_eq!(st, StlgcpStatus::NullPointer);
    assert!(last_error().contains("pattern_path"));

    // a success clears the previous message
    let mut h = 0.0;
    let xs = [0.0, 2.0];
    let ys = [0.0, 0.0];
    assert_eq!(
        unsafe { stlgcp_select_bandwidth(xs.as_ptr(), ys.as_ptr(), 2, 1, 0, &mut h) },
        StlgcpStatus::Ok
    );
    assert!(stlgcp_last_error_message().is_null());
    assert!((h - 0.5f64.sqrt()).abs() < 1e-12);

    let st = unsafe { stlgcp_select_bandwidth(xs.as_ptr(), ys.as_ptr(), 2, 5, 0, &mut h) };
    assert_eq!(st, StlgcpStatus::InvalidArgument);
}

#[test]
fn last_error_is_per_thread() {
    let st = unsafe { stlgcp_raster_integral(ptr::null(), ptr::null_mut()) };
    assert_eq!(st, StlgcpStatus::NullPointer);
    let other = std::thread::spawn(|| stlgcp_last_error_message().is_null())
        .join()
        .unwrap();
    assert!(other);
    assert!(!stlgcp_last_error_message().is_null());
}

#[test]
fn scalar_helpers() {
    assert!((stlgcp_theoretical_pcf(0.0, 1.0, 2.0) - 1f64.exp()).abs() < 1e-12);
    assert!((stlgcp_forecast_weight(1.0, 0.182) - (-1.0f64 / 0.182).exp()).abs() < 1e-15);
    assert!(stlgcp_forecast_weight(1.0, -1.0).is_nan());
}

#[test]
fn grf_sample_is_seeded() {
    let mut a = vec![0.0; 64];
    let mut b = vec![0.0; 64];
    unsafe {
        assert_eq!(
            stlgcp_grf_sample(8, 8, 0.1, 0.1, 1.0, 0.3, 4, a.as_mut_ptr(), 64),
            StlgcpStatus::Ok
        );
        assert_eq!(
            stlgcp_grf_sample(8, 8, 0.1, 0.1, 1.0, 0.3, 4, b.as_mut_ptr(), 64),
            StlgcpStatus::Ok
        );
    }
    assert_eq!(a, b);
    assert!(a.iter().any(|v| *v != 0.0));
}

#[test]
fn pipeline_config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[grid]\nm = 0\n").unwrap();
    let mut pl = ptr::null_mut();
    let st = unsafe { stlgcp_pipeline_open(c(&cfg).as_ptr(), 0, &mut pl) };
    assert_eq!(st, StlgcpStatus::Config);
    assert!(last_error().contains("grid.m"), "{}", last_error());
    assert!(pl.is_null());
}

#[test]
fn pipeline_fits_covariance() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "seed = 3\n\
         [paths]\npattern = \"pattern.csv\"\nwindow = \"window.csv\"\nout_dir = \"out\"\n\
         [data]\nholdout = 0\n\
         [grid]\nm = 16\np = 16\n\
         [glm.design]\nday_of_week = false\nharmonics = false\ntrend = false\n\
         reference_seasons = [\"Spring\", \"Summer\", \"Fall\", \"Winter\"]\n\
         [summaries]\nn_perm = 0\nv_max = 3\n",
    )
    .unwrap();
    let mut pl = ptr::null_mut();
    let st = unsafe { stlgcp_pipeline_open(c(&cfg).as_ptr(), 0, &mut pl) };
    assert_eq!(st, StlgcpStatus::Ok, "{}", last_error());
    let (mut s, mut f, mut t) = (0.0, 0.0, 0.0);
    let st = unsafe { stlgcp_pipeline_covariance(pl, &mut s, &mut f, &mut t) };
    assert_eq!(st, StlgcpStatus::Ok, "{}", last_error());
    assert!(s >= 0.0 && f > 0.0 && t > 0.0);
    assert_eq!(unsafe { stlgcp_pipeline_manifest_len(pl) }, 6);
    unsafe { stlgcp_pipeline_free(pl) };
}

#[test]
fn header_declares_every_export() {
    let header =
        fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/stlgcp.h")).unwrap();
    let src = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let mut n = 0;
    for line in src.lines() {
        if let Some(rest) = line.split("extern \"C\" fn ").nth(1) {
            let name = rest.split('(').next().unwrap();
            assert!(
                header.contains(&format!("{name}(")),
                "{name} missing from header"
            );
            n += 1;
        }
    }
    assert!(n >= 15);
    assert!(header.contains("typedef struct StlgcpPattern StlgcpPattern;"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/stlgcp.h");
    match std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    {
        Ok(status) => assert!(status.success()),
        Err(_) => eprintln!("no C compiler found; header syntax not checked"),
    }
}
