use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use qualitynet::features::{extract, FeatureConfig};
use qualitynet::net::{forward, init_model, ModelDims};
use qualitynet::optim::save_checkpoint;
use qualitynet::signal::{synth_speechlike, write_wav};
use qualitynet_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(qn_last_error_message()) }.to_string_lossy().into_owned()
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn small_model(dir: &Path) -> (qualitynet::net::ModelParams, CString) {
    let params = init_model(ModelDims { input: 257, hidden: 4 }, -3.0, 5).unwrap();
    let path = dir.join("m.qnet");
    save_checkpoint(&params, &path).unwrap();
    (params, cpath(&path))
}

#[test]
fn load_score_and_read_frames() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = small_model(dir.path());
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { qn_model_load(path.as_ptr(), &mut model) }, QnStatus::Ok);
    assert!(!model.is_null());
    let (mut f, mut h) = (0u32, 0u32);
    assert_eq!(unsafe { qn_model_dims(model, &mut f, &mut h) }, QnStatus::Ok);
    assert_eq!((f, h), (257, 4));

    // reference: the checkpoint as stored (f32) scored through the library
    let stored = qualitynet::optim::load_checkpoint(Path::new(path.to_str().unwrap())).unwrap();
    let clip = synth_speechlike(3, 1.2).unwrap();
    let spec = extract(&clip, &FeatureConfig::default()).unwrap();
    let (expect, _) = forward(&spec, &stored).unwrap();

    let mut result = ptr::null_mut();
    let s = unsafe { qn_score_samples(model, clip.samples().as_ptr(), clip.len(), 16000, &mut result) };
    assert_eq!(s, QnStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { qn_result_utterance(result) }, expect.utterance_score());
    let n = unsafe { qn_result_frame_count(result) };
    assert_eq!(n, expect.frame_scores().len());
    let mut buf = vec![0.0; n + 3];
    let mut written = 0usize;
    assert_eq!(unsafe { qn_result_frames(result, buf.as_mut_ptr(), buf.len(), &mut written) }, QnStatus::Ok);
    assert_eq!(written, n);
    assert_eq!(&buf[..n], expect.frame_scores());
    // a short buffer receives a prefix
    assert_eq!(unsafe { qn_result_frames(result, buf.as_mut_ptr(), 2, &mut written) }, QnStatus::Ok);
    assert_eq!(written, 2);
    unsafe { qn_result_free(result) };

    let wav = dir.path().join("x.wav");
    write_wav(&clip, &wav).unwrap();
    let wav_c = cpath(&wav);
    let mut from_file = ptr::null_mut();
    assert_eq!(unsafe { qn_score_wav(model, wav_c.as_ptr(), &mut from_file) }, QnStatus::Ok);
    assert!((unsafe { qn_result_utterance(from_file) } - expect.utterance_score()).abs() < 1e-2);
    unsafe { qn_result_free(from_file) };
    unsafe { qn_model_free(model) };
}

#[test]
fn errors_are_reported_with_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = ptr::null_mut();
    let missing = cpath(&dir.path().join("absent.qnet"));
    assert_eq!(unsafe { qn_model_load(missing.as_ptr(), &mut model) }, QnStatus::Io);
    assert!(model.is_null());
    assert!(last_error().contains("absent.qnet"));

    let corrupt = dir.path().join("bad.qnet");
    std::fs::write(&corrupt, b"QNET\x01\x00").unwrap();
    let corrupt = cpath(&corrupt);
    assert_eq!(unsafe { qn_model_load(corrupt.as_ptr(), &mut model) }, QnStatus::CorruptCheckpoint);
    assert!(last_error().contains("corrupt checkpoint"));

    assert_eq!(unsafe { qn_model_load(ptr::null(), &mut model) }, QnStatus::NullPointer);
    assert_eq!(unsafe { qn_model_load(missing.as_ptr(), ptr::null_mut()) }, QnStatus::NullPointer);

    let (_, path) = small_model(dir.path());
    assert_eq!(unsafe { qn_model_load(path.as_ptr(), &mut model) }, QnStatus::Ok);
    assert_eq!(last_error(), "");
    let mut result = ptr::null_mut();
    let short = [0.1f64; 100];
    let s = unsafe { qn_score_samples(model, short.as_ptr(), short.len(), 16000, &mut result) };
    assert_eq!(s, QnStatus::TooShort, "{}", last_error());
    assert!(result.is_null());
    let audio = [0.1f64; 4000];
    let s = unsafe { qn_score_samples(model, audio.as_ptr(), audio.len(), 8000, &mut result) };
    assert_eq!(s, QnStatus::InvalidAudio);
    let s = unsafe { qn_score_samples(ptr::null(), audio.as_ptr(), audio.len(), 16000, &mut result) };
    assert_eq!(s, QnStatus::NullPointer);

    assert!(unsafe { qn_result_utterance(ptr::null()) }.is_nan());
    assert_eq!(unsafe { qn_result_frame_count(ptr::null()) }, 0);
    unsafe { qn_result_free(ptr::null_mut()) };
    unsafe { qn_model_free(model) };
    unsafe { qn_model_free(ptr::null_mut()) };
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(qn_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/qualitynet.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "qn_model_load",
        "qn_model_free",
        "qn_score_samples",
        "qn_score_wav",
        "qn_result_frames",
        "qn_last_error_message",
        "QN_STATUS_CORRUPT_CHECKPOINT",
        "typedef struct QnModel QnModel",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"qualitynet.h\"\nint main(void) { QnModel *m = 0; QnStatus s = qn_model_load(\"x\", &m); \
         qn_model_free(m); return s == QN_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success(), "C compiler rejected the header");
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok())
        .ok_or(())
}
