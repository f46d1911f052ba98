use std::ffi::CString;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use lyadecay_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { ld_last_error_message(buf.as_mut_ptr().cast(), buf.len()) };
    buf.truncate(n.min(255));
    String::from_utf8(buf).unwrap()
}

fn matrix(dim: usize, re: &[f64], im: Option<&[f64]>) -> *mut LdMatrix {
    let mut m = ptr::null_mut();
    let im_ptr = im.map_or(ptr::null(), |v| v.as_ptr());
    assert_eq!(unsafe { ld_matrix_new(dim, re.as_ptr(), im_ptr, &mut m) }, LdStatus::Ok);
    m
}

#[test]
fn shear_envelope_round_trip() {
    let m = matrix(2, &[1.0, 0.5, 0.0, 1.0], None);
    assert_eq!(unsafe { ld_matrix_dim(m) }, 2);
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { ld_analyze(m, 0.0, &mut e) }, LdStatus::Ok);
    let mut p = LdEnvelopeParams::default();
    assert_eq!(unsafe { ld_envelope_params(e, &mut p) }, LdStatus::Ok);
    assert_eq!((p.mu, p.m), (1.0, 2));
    let mut v = 0.0;
    assert_eq!(unsafe { ld_envelope_eval(e, 0.0, &mut v) }, LdStatus::Ok);
    assert_eq!(v, p.c_const);
    assert_eq!(unsafe { ld_envelope_eval(e, -1.0, &mut v) }, LdStatus::InvalidArgument);
    let mut d = LdDominance::default();
    assert_eq!(unsafe { ld_check_dominance(m, e, 30.0, 121, &mut d) }, LdStatus::Ok);
    assert!(d.dominated && d.max_ratio <= 1.0);
    unsafe {
        ld_envelope_free(e);
        ld_matrix_free(m);
    }
}

#[test]
fn propagator_of_rotation_generator() {
    // C = I + i diag(1, -1): |e^{-Ct}|^2 = e^{-2t}
    let m = matrix(2, &[1.0, 0.0, 0.0, 1.0], Some(&[1.0, 0.0, 0.0, -1.0]));
    let mut v = 0.0;
    assert_eq!(unsafe { ld_propagator_norm_sq(m, 1.5, &mut v) }, LdStatus::Ok);
    assert!((v - (-3.0f64).exp()).abs() < 1e-14);
    unsafe { ld_matrix_free(m) };
}

#[test]
fn tight_envelope_rejects_lowered_constant() {
    let m = matrix(2, &[1.0, 0.0, 0.0, 2.0], None);
    let mut e = ptr::null_mut();
    let params = LdEnvelopeParams { c_const: 0.5, mu: 1.0, m: 1 };
    assert_eq!(unsafe { ld_envelope_new(params, &mut e) }, LdStatus::Ok);
    let mut d = LdDominance::default();
    assert_eq!(unsafe { ld_check_dominance(m, e, 10.0, 11, &mut d) }, LdStatus::Ok);
    assert!(!d.dominated);
    assert!((d.max_ratio - 2.0).abs() < 1e-12);
    unsafe {
        ld_envelope_free(e);
        ld_matrix_free(m);
    }
}

#[test]
fn json_constructor() {
    let json = CString::new(r#"{"dim":2,"entries":[[1,0],[0.5,0],[-0.5,0],[0,0]]}"#).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { ld_matrix_from_json(json.as_ptr(), &mut m) }, LdStatus::Ok);
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { ld_analyze(m, 1e-8, &mut e) }, LdStatus::Ok);
    let mut p = LdEnvelopeParams::default();
    unsafe { ld_envelope_params(e, &mut p) };
    assert!((p.mu - 0.5).abs() < 1e-12);
    unsafe {
        ld_envelope_free(e);
        ld_matrix_free(m);
    }
}

#[test]
fn error_codes_and_messages() {
    let m = matrix(2, &[-1.0, 0.0, 0.0, 1.0], None);
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { ld_analyze(m, 0.0, &mut e) }, LdStatus::NotPositiveStable);
    assert!(e.is_null());
    assert!(last_error().contains("not positive stable"));
    assert_eq!(unsafe { ld_analyze(ptr::null(), 0.0, &mut e) }, LdStatus::NullPointer);
    assert_eq!(unsafe { ld_analyze(m, 0.0, ptr::null_mut()) }, LdStatus::NullPointer);
    let nan = [f64::NAN, 0.0, 0.0, 1.0];
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { ld_matrix_new(2, nan.as_ptr(), ptr::null(), &mut bad) }, LdStatus::NonFinite);
    let garbage = CString::new("{").unwrap();
    assert_eq!(unsafe { ld_matrix_from_json(garbage.as_ptr(), &mut bad) }, LdStatus::Json);
    let params = LdEnvelopeParams { c_const: -1.0, mu: 1.0, m: 1 };
    assert_eq!(unsafe { ld_envelope_new(params, &mut e) }, LdStatus::InvalidArgument);
    assert_eq!(unsafe { ld_matrix_dim(ptr::null()) }, 0);
    unsafe {
        ld_matrix_free(m);
        ld_matrix_free(ptr::null_mut());
        ld_envelope_free(ptr::null_mut());
    }
    let one = matrix(1, &[1.0], None);
    let mut v = 0.0;
    assert_eq!(unsafe { ld_propagator_norm_sq(one, 0.0, &mut v) }, LdStatus::Ok);
    assert_eq!(last_error(), "");
    unsafe { ld_matrix_free(one) };
}

#[test]
fn fp_constants_degenerate_drift() {
    let mut c = LdFpConstants::default();
    assert_eq!(unsafe { ld_fp_constants(0.8, 0.0, &mut c) }, LdStatus::Ok);
    assert_eq!((c.c12, c.c3, c.c4, c.global), (24.0, 144.0, 2.0, 340.0));
    assert_eq!(unsafe { ld_fp_constants(0.0, 0.0, &mut c) }, LdStatus::InvalidArgument);
}

#[test]
fn header_compiles_as_c() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include").join("lyadecay.h");
    assert!(header.exists());
    let src = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("ffi_header_check.c");
    std::fs::write(
        &src,
        "#include \"lyadecay.h\"\n\
         int main(void) {\n\
           LdMatrix *m = 0; LdEnvelope *e = 0; LdDominance d;\n\
           double re[4] = {1, 0.5, 0, 1};\n\
           if (ld_matrix_new(2, re, 0, &m) != LD_STATUS_OK) return 1;\n\
           if (ld_analyze(m, 0.0, &e) != LD_STATUS_OK) return 1;\n\
           if (ld_check_dominance(m, e, 10.0, 11, &d) != LD_STATUS_OK || !d.dominated) return 1;\n\
           ld_envelope_free(e); ld_matrix_free(m);\n\
           return 0;\n\
         }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler found, header syntax not checked");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
