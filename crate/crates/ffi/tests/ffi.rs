use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use dhformer::dataset::make_pair_with;
use dhformer::metrics;
use dhformer::model::{ModelConfig, ModelParams};
use dhformer::scattering::{DepthMap, HazeParams, DEFAULT_T_MIN};
use dhformer::trainer::{infer_tiled, save_checkpoint, CheckpointMeta, TrainConfig, DEFAULT_OVERLAP};
use dhformer::Tensor;
use dhformer_ffi::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn last_error() -> String {
    unsafe { CStr::from_ptr(dhf_last_error_message()) }.to_string_lossy().into_owned()
}

fn image(h: usize, w: usize, phase: f64) -> Vec<f64> {
    (0..3 * h * w).map(|i| 0.5 + 0.4 * ((i as f64) * 0.37 + phase).sin()).collect()
}

fn write_checkpoint(dir: &Path) -> (CString, ModelParams, ModelConfig) {
    let cfg = ModelConfig::minimal();
    let mut params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    params.quantize_f32();
    let meta = CheckpointMeta {
        model: cfg.clone(),
        train_digest: TrainConfig::default().digest(),
        epoch: 1,
        best_val_loss: None,
    };
    let path = dir.join("m.dhfm");
    save_checkpoint(&params, &meta, &path).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), params, cfg)
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(dhf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn dehaze_matches_the_library() {
    let dir = TempDir::new().unwrap();
    let (path, params, cfg) = write_checkpoint(dir.path());
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { dhf_model_load(path.as_ptr(), &mut model) }, DhfStatus::Ok);
    assert!(!model.is_null());
    let tile = cfg.arch.input_size;
    assert_eq!(unsafe { dhf_model_tile_size(model) }, tile);
    assert_eq!(unsafe { dhf_model_param_count(model) }, params.census());

    let (h, w) = (tile + 5, tile + 9);
    let hazy = image(h, w, 0.3);
    let mut out = vec![0.0; hazy.len()];
    assert_eq!(unsafe { dhf_dehaze(model, hazy.as_ptr(), h, w, out.as_mut_ptr()) }, DhfStatus::Ok);
    let x = Tensor::new(&[1, 3, h, w], hazy).unwrap();
    let want = infer_tiled(&x, &params, &cfg, DEFAULT_OVERLAP).unwrap();
    assert_eq!(out, want.data());
    assert_eq!(last_error(), "");

    let small = image(tile - 1, tile, 0.0);
    let mut out = vec![0.0; small.len()];
    let st = unsafe { dhf_dehaze(model, small.as_ptr(), tile - 1, tile, out.as_mut_ptr()) };
    assert_eq!(st, DhfStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    unsafe { dhf_model_free(model) };
    unsafe { dhf_model_free(ptr::null_mut()) };
}

#[test]
fn load_reports_null_missing_and_damaged_files() {
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { dhf_model_load(ptr::null(), &mut model) }, DhfStatus::NullArgument);
    assert!(last_error().contains("path"));

    let dir = TempDir::new().unwrap();
    let missing = CString::new(dir.path().join("none.dhfm").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { dhf_model_load(missing.as_ptr(), &mut model) }, DhfStatus::Io);
    assert!(last_error().contains("none.dhfm"), "{}", last_error());
    assert!(model.is_null());

    let junk = dir.path().join("junk.dhfm");
    std::fs::write(&junk, b"not a checkpoint at all").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { dhf_model_load(junk.as_ptr(), &mut model) }, DhfStatus::Format);

    let (path, _, _) = write_checkpoint(dir.path());
    assert_eq!(unsafe { dhf_model_load(path.as_ptr(), ptr::null_mut()) }, DhfStatus::NullArgument);
}

#[test]
fn metrics_match_the_library() {
    let (h, w) = (32, 40);
    let a = image(h, w, 0.0);
    let b = image(h, w, 0.2);
    let ta = Tensor::new(&[1, 3, h, w], a.clone()).unwrap();
    let tb = Tensor::new(&[1, 3, h, w], b.clone()).unwrap();
    let mut v = 0.0;
    assert_eq!(unsafe { dhf_psnr(a.as_ptr(), b.as_ptr(), h, w, &mut v) }, DhfStatus::Ok);
    assert_eq!(v, metrics::psnr(&ta, &tb, 1.0).unwrap());
    assert_eq!(unsafe { dhf_ssim(a.as_ptr(), b.as_ptr(), h, w, &mut v) }, DhfStatus::Ok);
    assert_eq!(v, metrics::ssim(&ta, &tb, 1.0).unwrap());
    assert_eq!(unsafe { dhf_fsim(a.as_ptr(), b.as_ptr(), h, w, &mut v) }, DhfStatus::Ok);
    assert_eq!(v, metrics::fsim(&ta, &tb).unwrap());
    assert_eq!(unsafe { dhf_psnr(a.as_ptr(), a.as_ptr(), h, w, &mut v) }, DhfStatus::Ok);
    assert_eq!(v, f64::INFINITY);

    assert_eq!(unsafe { dhf_fsim(a.as_ptr(), b.as_ptr(), 8, 8, &mut v) }, DhfStatus::InvalidArgument);
    assert_eq!(unsafe { dhf_ssim(a.as_ptr(), b.as_ptr(), 0, w, &mut v) }, DhfStatus::InvalidArgument);
    assert_eq!(unsafe { dhf_psnr(a.as_ptr(), ptr::null(), h, w, &mut v) }, DhfStatus::NullArgument);
    assert_eq!(unsafe { dhf_psnr(a.as_ptr(), b.as_ptr(), h, w, ptr::null_mut()) }, DhfStatus::NullArgument);
}

#[test]
fn haze_synthesis_matches_the_library() {
    let (h, w) = (6, 7);
    let clear = image(h, w, 1.0);
    let depth: Vec<f64> = (0..h * w).map(|i| i as f64 * 0.1).collect();
    let mut hazy = vec![0.0; clear.len()];
    let st = unsafe { dhf_synthesize_haze(clear.as_ptr(), depth.as_ptr(), h, w, 0.9, 1.2, hazy.as_mut_ptr()) };
    assert_eq!(st, DhfStatus::Ok);
    let j = Tensor::new(&[1, 3, h, w], clear.clone()).unwrap();
    let d = DepthMap::new(Tensor::new(&[1, 1, h, w], depth.clone()).unwrap()).unwrap();
    let pair = make_pair_with(&j, &d, HazeParams::new(0.9, 1.2).unwrap(), DEFAULT_T_MIN).unwrap();
    assert_eq!(hazy, pair.hazy.data());
    // zero depth leaves the pixel unchanged
    assert!((hazy[0] - clear[0]).abs() < 1e-15);

    let st = unsafe { dhf_synthesize_haze(clear.as_ptr(), depth.as_ptr(), h, w, 0.9, -1.0, hazy.as_mut_ptr()) };
    assert_ne!(st, DhfStatus::Ok);
    assert!(!last_error().is_empty());
}

#[test]
fn errors_are_per_thread_and_cleared_on_success() {
    let mut v = 0.0;
    let a = image(16, 16, 0.0);
    assert_eq!(unsafe { dhf_psnr(a.as_ptr(), ptr::null(), 16, 16, &mut v) }, DhfStatus::NullArgument);
    let msg = last_error();
    assert!(!msg.is_empty());
    let other = std::thread::spawn(last_error).join().unwrap();
    assert_eq!(other, "");
    assert_eq!(unsafe { dhf_psnr(a.as_ptr(), a.as_ptr(), 16, 16, &mut v) }, DhfStatus::Ok);
    assert_eq!(last_error(), "");
}

#[test]
fn header_declares_the_exported_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dhformer.h")).unwrap();
    for name in [
        "dhf_version",
        "dhf_last_error_message",
        "dhf_model_load",
        "dhf_model_free",
        "dhf_model_tile_size",
        "dhf_model_param_count",
        "dhf_dehaze",
        "dhf_psnr",
        "dhf_ssim",
        "dhf_fsim",
        "dhf_synthesize_haze",
        "typedef struct DhfModel DhfModel",
        "DHF_STATUS_OK = 0",
        "DHF_STATUS_CHECKPOINT_MISMATCH = 7",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dhformer.h");
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
