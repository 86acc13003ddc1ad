use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use jointage_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ja_last_error()) }.to_str().unwrap().to_owned()
}

fn build(d: JaDiscipline, lambdas: &[f64], mu: f64) -> *mut JaModel {
    let mut m = ptr::null_mut();
    let st = unsafe { ja_model_build(d, lambdas.as_ptr(), lambdas.len(), mu, &mut m) };
    assert_eq!(st, JaStatus::Ok, "{}", last_error());
    m
}

#[test]
fn moments_and_distribution() {
    let m = build(JaDiscipline::Np, &[0.5, 0.5], 1.0);
    unsafe {
        let (mut states, mut dim) = (0, 0);
        assert_eq!(ja_model_dims(m, &mut states, &mut dim), JaStatus::Ok);
        assert_eq!((states, dim), (3, 3));
        let mut pi = vec![0.0; states];
        assert_eq!(ja_stationary_distribution(m, pi.as_mut_ptr(), pi.len()), JaStatus::Ok);
        assert!((pi[0] - 0.5).abs() < 1e-14);
        assert_eq!(
            ja_stationary_distribution(m, pi.as_mut_ptr(), 2),
            JaStatus::BufferTooSmall
        );

        let mut mean = 0.0;
        assert_eq!(
            ja_joint_moment(m, [1usize].as_ptr(), [1u32].as_ptr(), 1, &mut mean),
            JaStatus::Ok
        );
        assert!((mean - 4.5).abs() < 1e-12);
        ja_model_free(m);
    }
}

#[test]
fn generic_mgf_matches_closed_form() {
    let lambdas = [0.4, 0.7, 0.2];
    for d in [JaDiscipline::Np, JaDiscipline::Ps, JaDiscipline::Sa] {
        let m = build(d, &lambdas, 1.3);
        let (k, s) = ([1usize, 3], [0.05, -0.1]);
        let (mut generic, mut closed, mut eig) = (0.0, 0.0, 0.0);
        unsafe {
            assert_eq!(
                ja_joint_mgf(m, k.as_ptr(), s.as_ptr(), 2, &mut generic, &mut eig),
                JaStatus::Ok
            );
            let st = ja_closed_mgf(d, lambdas.as_ptr(), 3, 1.3, k.as_ptr(), s.as_ptr(), 2, &mut closed);
            assert_eq!(st, JaStatus::Ok);
            ja_model_free(m);
        }
        assert!((generic - closed).abs() < 1e-9 * closed, "{d:?}");
        assert!(eig < 0.0);
    }
}

#[test]
fn closed_forms() {
    let (mut mean, mut corr) = (0.0, 0.0);
    let st = unsafe {
        ja_closed_moments(
            JaDiscipline::Ps,
            [0.5, 0.5].as_ptr(),
            2,
            1.0,
            1,
            2,
            &mut mean,
            ptr::null_mut(),
            ptr::null_mut(),
            &mut corr,
        )
    };
    assert_eq!(st, JaStatus::Ok);
    assert!((mean - 4.0).abs() < 1e-12 && (corr + 1.0 / 6.0).abs() < 1e-12);
    let r = ja_rho_threshold_np();
    assert!((r * r * r - 4.0 * r - 2.0).abs() < 1e-12);
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut m = ptr::null_mut();
        let st = ja_model_build(JaDiscipline::Ps, [0.5, -1.0].as_ptr(), 2, 1.0, &mut m);
        assert_eq!(st, JaStatus::InvalidArgument);
        assert!(m.is_null() && !last_error().is_empty());

        let mut out = 0.0;
        let st = ja_closed_mgf(
            JaDiscipline::Ps,
            [0.5, 0.5].as_ptr(),
            2,
            1.0,
            [1usize].as_ptr(),
            [0.9].as_ptr(),
            1,
            &mut out,
        );
        assert_eq!(st, JaStatus::OutsideRegion);

        let json = CString::new(
            r#"{"num_states": 4, "age_dim": 1, "transitions": [
                {"id":1,"source":0,"target":1,"rate":1.0,"reset":[null]},
                {"id":2,"source":1,"target":0,"rate":1.0,"reset":[0]},
                {"id":3,"source":2,"target":3,"rate":1.0,"reset":[null]},
                {"id":4,"source":3,"target":2,"rate":1.0,"reset":[0]}]}"#,
        )
        .unwrap();
        assert_eq!(ja_model_from_json(json.as_ptr(), &mut m), JaStatus::Ok);
        let mut pi = [0.0; 4];
        assert_eq!(ja_stationary_distribution(m, pi.as_mut_ptr(), 4), JaStatus::Unstable);
        assert!(last_error().contains("not ergodic"));
        ja_model_free(m);

        let bad = CString::new("{\"num_states\": 2}").unwrap();
        assert_eq!(ja_model_from_json(bad.as_ptr(), &mut m), JaStatus::InvalidArgument);
        assert_eq!(
            ja_joint_moment(ptr::null(), ptr::null(), ptr::null(), 0, &mut out),
            JaStatus::NullPointer
        );
        assert_eq!(
            ja_model_from_json(bad.as_ptr(), ptr::null_mut()),
            JaStatus::InvalidArgument
        );
        assert_eq!(
            ja_model_build(JaDiscipline::Np, [0.5].as_ptr(), 1, 1.0, ptr::null_mut()),
            JaStatus::NullPointer
        );
        ja_model_free(ptr::null_mut());
    }
}

#[test]
fn json_round_trip() {
    let m = build(JaDiscipline::Sa, &[0.3, 0.6], 1.0);
    unsafe {
        let mut len = 0;
        assert_eq!(ja_model_to_json(m, ptr::null_mut(), 0, &mut len), JaStatus::Ok);
        let mut buf = vec![0 as std::ffi::c_char; len];
        assert_eq!(
            ja_model_to_json(m, buf.as_mut_ptr(), len - 1, &mut len),
            JaStatus::BufferTooSmall
        );
        assert_eq!(ja_model_to_json(m, buf.as_mut_ptr(), len, &mut len), JaStatus::Ok);
        let mut copy = ptr::null_mut();
        assert_eq!(ja_model_from_json(buf.as_ptr(), &mut copy), JaStatus::Ok);
        let (mut a, mut b) = (0.0, 0.0);
        let (k, e) = ([1usize, 2], [1u32, 1]);
        ja_joint_moment(m, k.as_ptr(), e.as_ptr(), 2, &mut a);
        ja_joint_moment(copy, k.as_ptr(), e.as_ptr(), 2, &mut b);
        assert_eq!(a, b);
        ja_model_free(copy);
        ja_model_free(m);
    }
}

#[test]
fn simulation_is_seeded() {
    let m = build(JaDiscipline::Ps, &[0.5, 0.5], 1.0);
    let cfg = JaSimConfig {
        seed: 5,
        events: 50_000,
        time: 0.0,
        warmup_fraction: 0.05,
        replications: 4,
    };
    let q = |kind| JaSimQuery {
        kind,
        i: 1,
        j: 2,
        ages: ptr::null(),
        s: ptr::null(),
        order: 0,
    };
    let ages = [1usize];
    let s = [0.05];
    let queries = [
        q(JaQueryKind::Mean),
        q(JaQueryKind::Correlation),
        JaSimQuery {
            kind: JaQueryKind::Mgf,
            i: 0,
            j: 0,
            ages: ages.as_ptr(),
            s: s.as_ptr(),
            order: 1,
        },
    ];
    let mut a = [JaEstimate::default(); 3];
    let mut b = [JaEstimate::default(); 3];
    unsafe {
        assert_eq!(
            ja_simulate(m, &cfg, queries.as_ptr(), 3, a.as_mut_ptr()),
            JaStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(ja_simulate(m, &cfg, queries.as_ptr(), 3, b.as_mut_ptr()), JaStatus::Ok);
        let mut stable = 0;
        let mut eig = 0.0;
        assert_eq!(ja_stability(m, 2, ptr::null(), &mut eig, &mut stable), JaStatus::Ok);
        assert_eq!(stable, 1);
        ja_model_free(m);
    }
    assert_eq!(a.map(|e| e.estimate), b.map(|e| e.estimate));
    assert!((a[0].estimate - 4.0).abs() < 5.0 * a[0].std_error.max(0.05));
    assert!(a[1].estimate < 0.0 && a[2].estimate > 1.0);
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/jointage.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in [
        "ja_model_build",
        "ja_joint_mgf",
        "ja_simulate",
        "ja_last_error",
        "typedef struct JaModel JaModel",
    ] {
        assert!(text.contains(f), "{f} missing from the header");
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    std::fs::write(
        &src,
        "#include \"jointage.h\"\nint main(void) { JaModel *m = 0; ja_model_free(m); return 0; }\n",
    )
    .unwrap();
    let Ok(out) = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler found, header compile check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
