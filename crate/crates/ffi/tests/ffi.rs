use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use force_effect::dataset::Dataset;
use force_effect::quantize::STOP_INDEX;
use force_effect_ffi::*;

fn cli(args: &[&str]) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = force_effect::cli::run(
        std::iter::once("force-effect").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    assert_eq!(code, 0, "{}", String::from_utf8_lossy(&err));
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(fe_last_error_message()) }.to_string_lossy().into_owned()
}

struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    model: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.fsd");
    let model = dir.path().join("m.fsm");
    let (d, m) = (data.to_str().unwrap(), model.to_str().unwrap());
    cli(&["gen", "--scenes", "6", "--seed", "3", "--image-size", "16", "--out", d]);
    cli(&["train", "--data", d, "--arch", "tiny", "--iters", "10", "--batch", "2", "--out", m]);
    Fixture { _dir: dir, data, model }
}

unsafe fn load_dataset(path: &Path) -> *mut FeDataset {
    let mut ds = ptr::null_mut();
    assert_eq!(fe_dataset_load(cstr(path).as_ptr(), &mut ds), FeStatus::Ok);
    assert!(!ds.is_null());
    ds
}

#[test]
fn dataset_handle_round_trip() {
    let f = fixture();
    let reference = Dataset::load(&f.data).unwrap();
    unsafe {
        let ds = load_dataset(&f.data);
        let mut len = 0usize;
        assert_eq!(fe_dataset_len(ds, &mut len), FeStatus::Ok);
        assert_eq!(len, reference.len());
        let mut buf = [0u8; 6];
        for (i, rec) in reference.records.iter().enumerate() {
            let mut n = 0usize;
            assert_eq!(fe_dataset_label(ds, i, buf.as_mut_ptr(), buf.len(), &mut n), FeStatus::Ok);
            let want: Vec<u8> = rec.label.tokens().iter().map(|t| t.index() as u8).collect();
            assert_eq!(&buf[..n], &want[..]);
            let mut m = 0usize;
            assert_eq!(fe_simulate_record(ds, i, buf.as_mut_ptr(), buf.len(), &mut m), FeStatus::Ok);
            assert_eq!(&buf[..m], &want[..]);
        }
        let mut n = 0usize;
        assert_eq!(fe_dataset_label(ds, len, buf.as_mut_ptr(), buf.len(), &mut n), FeStatus::OutOfRange);
        assert!(last_error().contains("out of range"));
        fe_dataset_free(ds);
    }
}

#[test]
fn model_predicts_valid_sequences() {
    let f = fixture();
    unsafe {
        let ds = load_dataset(&f.data);
        let mut model = ptr::null_mut();
        assert_eq!(fe_model_load(cstr(&f.model).as_ptr(), &mut model), FeStatus::Ok);
        let mut buf = [0u8; 6];
        let mut n = 0usize;
        assert_eq!(fe_model_predict(model, ds, 0, buf.as_mut_ptr(), buf.len(), &mut n), FeStatus::Ok);
        assert!((1..=6).contains(&n));
        assert!(buf[..n - 1].iter().all(|&t| t as usize != STOP_INDEX));
        assert!(n == 6 || buf[n - 1] as usize == STOP_INDEX);
        assert!(buf[..n].iter().all(|&t| t as usize <= STOP_INDEX));
        fe_model_free(model);
        fe_dataset_free(ds);
    }
}

#[test]
fn short_buffer_reports_required_length() {
    let f = fixture();
    let reference = Dataset::load(&f.data).unwrap();
    let (i, rec) = reference.records.iter().enumerate().find(|(_, r)| r.label.len() > 1).unwrap();
    unsafe {
        let ds = load_dataset(&f.data);
        let mut buf = [0u8; 1];
        let mut n = 0usize;
        assert_eq!(fe_dataset_label(ds, i, buf.as_mut_ptr(), 1, &mut n), FeStatus::BufferTooSmall);
        assert_eq!(n, rec.label.len());
        fe_dataset_free(ds);
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(fe_dataset_load(ptr::null(), &mut ds), FeStatus::NullPointer);
        assert!(last_error().contains("null"));
        let missing = CString::new("/nonexistent/d.fsd").unwrap();
        assert_eq!(fe_dataset_load(missing.as_ptr(), &mut ds), FeStatus::Io);
        assert!(ds.is_null());

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.fsd");
        std::fs::write(&bad, "FSD1 1\n{}\n").unwrap();
        assert_eq!(fe_dataset_load(cstr(&bad).as_ptr(), &mut ds), FeStatus::Format);
        let mut model = ptr::null_mut();
        assert_eq!(fe_model_load(cstr(&bad).as_ptr(), &mut model), FeStatus::Format);

        let mut len = 0usize;
        assert_eq!(fe_dataset_len(ptr::null(), &mut len), FeStatus::NullPointer);
        fe_dataset_free(ptr::null_mut());
        fe_model_free(ptr::null_mut());
    }
}

#[test]
fn quantize_and_edit_distance() {
    unsafe {
        let mut t = 0u8;
        assert_eq!(fe_quantize_velocity(1.0, 0.0, 0.0, 0.05, &mut t), FeStatus::Ok);
        assert_eq!(t, 0);
        assert_eq!(fe_quantize_velocity(0.0, 0.0, -2.0, 0.05, &mut t), FeStatus::Ok);
        assert_eq!(t, 16);
        assert_eq!(fe_quantize_velocity(0.01, 0.0, 0.0, 0.05, &mut t), FeStatus::Ok);
        assert_eq!(t as usize, STOP_INDEX);
        assert_eq!(fe_quantize_velocity(f64::NAN, 0.0, 0.0, 0.05, &mut t), FeStatus::InvalidArgument);
        assert_eq!(fe_quantize_velocity(1.0, 0.0, 0.0, 0.05, ptr::null_mut()), FeStatus::NullPointer);

        let a = [0u8, 17];
        let b = [0u8, 1, 17];
        let mut d = 0usize;
        assert_eq!(fe_edit_distance(a.as_ptr(), 2, b.as_ptr(), 3, &mut d), FeStatus::Ok);
        assert_eq!(d, 1);
        let invalid = [17u8, 0];
        assert_eq!(fe_edit_distance(invalid.as_ptr(), 2, b.as_ptr(), 3, &mut d), FeStatus::InvalidArgument);
        let out_of_vocab = [18u8];
        assert_eq!(fe_edit_distance(out_of_vocab.as_ptr(), 1, b.as_ptr(), 3, &mut d), FeStatus::InvalidArgument);
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(fe_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/force_effect.h")).unwrap();
    for name in [
        "fe_last_error_message",
        "fe_version",
        "fe_dataset_load",
        "fe_dataset_free",
        "fe_dataset_len",
        "fe_dataset_label",
        "fe_simulate_record",
        "fe_model_load",
        "fe_model_free",
        "fe_model_predict",
        "fe_quantize_velocity",
        "fe_edit_distance",
        "FE_STATUS_BUFFER_TOO_SMALL",
        "typedef struct FeDataset FeDataset",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"force_effect.h\"\n\
         int main(void) { FeDataset *d = 0; size_t n = 0; \
         return fe_dataset_len(d, &n) == FE_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    let status = std::process::Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "{cc} rejected the header"),
        Err(_) => eprintln!("no C compiler ({cc}); header compile check skipped"),
    }
}
