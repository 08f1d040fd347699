use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use simgap::kernel::{ForgeConfig, Kernel, KernelSet, Transfer};
use simgap::lsq::AffineMap;
use simgap::oned::OneDParams;
use simgap::state::{Schema, StateVector};
use simgap_ffi::*;

fn schema() -> Schema {
    OneDParams::default().default_schema()
}

fn schema_handle() -> *mut SimgapSchema {
    let text = CString::new(schema().to_toml_string()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { simgap_schema_from_toml(text.as_ptr(), &mut h) },
        SimgapStatus::Ok
    );
    assert!(!h.is_null());
    h
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(simgap_last_error_message()) }
        .to_str()
        .unwrap()
        .to_owned()
}

fn kernel_set(schema: &Schema) -> KernelSet {
    let mut ks = KernelSet::empty(schema, &ForgeConfig::default());
    for (id, x) in [(0u32, 3.0), (1, 12.0)] {
        ks.kernels.push(Kernel {
            id,
            mean: StateVector(vec![x, 1.0]),
            sigma: 1.0,
            dist: [0.9, 0.1],
            transfer: Transfer {
                map: AffineMap {
                    m: vec![vec![1.0, 0.0, 0.1], vec![0.0, 1.0, 0.0]],
                    b: vec![0.5, 0.0],
                },
                by_action: Vec::new(),
            },
            fit_window: 4,
        });
    }
    ks
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(simgap_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn schema_distance_and_quantize_match_the_library() {
    let s = schema();
    let h = schema_handle();
    unsafe {
        assert_eq!(simgap_schema_state_dim(h), s.state_dim());
        assert_eq!(simgap_schema_action_dim(h), s.action_dim());

        let a = [1.3, 0.0];
        let b = [4.0, 1.0];
        let mut d = f64::NAN;
        assert_eq!(
            simgap_schema_distance(h, a.as_ptr(), b.as_ptr(), 2, &mut d),
            SimgapStatus::Ok
        );
        let want = s
            .distance(&StateVector(a.to_vec()), &StateVector(b.to_vec()))
            .unwrap();
        assert_eq!(d, want);

        let mut bins = [0i64; 4];
        let mut n = 0usize;
        assert_eq!(
            simgap_schema_quantize(h, a.as_ptr(), 2, bins.as_mut_ptr(), bins.len(), &mut n),
            SimgapStatus::Ok
        );
        let q = s.quantize(&StateVector(a.to_vec())).unwrap();
        assert_eq!(&bins[..n], q.bins());

        // Short buffer reports the needed length.
        let mut one = [0i64; 1];
        assert_eq!(
            simgap_schema_quantize(h, a.as_ptr(), 2, one.as_mut_ptr(), 1, &mut n),
            SimgapStatus::InvalidArgument
        );
        assert_eq!(n, 2);

        simgap_schema_free(h);
    }
}

#[test]
fn errors_set_status_and_message() {
    let h = schema_handle();
    unsafe {
        let a = [0.0; 3];
        let mut d = 0.0;
        assert_eq!(
            simgap_schema_distance(h, a.as_ptr(), a.as_ptr(), 3, &mut d),
            SimgapStatus::InvalidArgument
        );
        assert!(last_error().contains("dimension"), "{}", last_error());

        assert_eq!(
            simgap_schema_distance(ptr::null(), a.as_ptr(), a.as_ptr(), 2, &mut d),
            SimgapStatus::NullPointer
        );

        let bad = CString::new("not = [toml").unwrap();
        let mut out = ptr::null_mut();
        assert_ne!(
            simgap_schema_from_toml(bad.as_ptr(), &mut out),
            SimgapStatus::Ok
        );
        assert!(out.is_null());

        let missing = CString::new("/nonexistent/kernels.json").unwrap();
        let mut ks = ptr::null_mut();
        assert_eq!(
            simgap_kernels_load(missing.as_ptr(), &mut ks),
            SimgapStatus::Io
        );

        // A later success clears the message.
        assert_eq!(
            simgap_schema_distance(h, a.as_ptr(), a.as_ptr(), 2, &mut d),
            SimgapStatus::Ok
        );
        assert_eq!(last_error(), "");

        simgap_schema_free(h);
        simgap_schema_free(ptr::null_mut());
        simgap_kernels_free(ptr::null_mut());
        simgap_transition_free(ptr::null_mut());
        assert_eq!(simgap_kernels_len(ptr::null()), 0);
    }
}

#[test]
fn kernel_select_and_predict() {
    let s = schema();
    let ks = kernel_set(&s);
    let json = CString::new(serde_json::to_string(&ks).unwrap()).unwrap();
    let sh = schema_handle();
    let mut kh = ptr::null_mut();
    unsafe {
        assert_eq!(
            simgap_kernels_from_json(json.as_ptr(), &mut kh),
            SimgapStatus::Ok
        );
        assert_eq!(simgap_kernels_len(kh), 2);

        let mut id = 99i64;
        let near = [12.2, 1.0];
        assert_eq!(
            simgap_kernels_select(kh, sh, near.as_ptr(), 2, 0.1, &mut id),
            SimgapStatus::Ok
        );
        assert_eq!(id, 1);
        let far = [7.5, 0.0];
        assert_eq!(
            simgap_kernels_select(kh, sh, far.as_ptr(), 2, 0.1, &mut id),
            SimgapStatus::Ok
        );
        assert_eq!(id, -1);

        let act = [2.0];
        let mut out = [0.0; 2];
        let mut n = 0;
        assert_eq!(
            simgap_kernels_predict(
                kh,
                1,
                near.as_ptr(),
                2,
                act.as_ptr(),
                1,
                out.as_mut_ptr(),
                2,
                &mut n
            ),
            SimgapStatus::Ok
        );
        assert_eq!(n, 2);
        assert!((out[0] - (12.2 + 0.2 + 0.5)).abs() < 1e-12);
        assert_eq!(out[1], 1.0);

        assert_eq!(
            simgap_kernels_predict(
                kh,
                7,
                near.as_ptr(),
                2,
                act.as_ptr(),
                1,
                out.as_mut_ptr(),
                2,
                &mut n
            ),
            SimgapStatus::InvalidArgument
        );
        assert_eq!(
            simgap_kernels_predict(
                kh,
                1,
                near.as_ptr(),
                2,
                act.as_ptr(),
                0,
                out.as_mut_ptr(),
                2,
                &mut n
            ),
            SimgapStatus::InvalidArgument
        );

        simgap_kernels_free(kh);
        simgap_schema_free(sh);
    }
}

#[test]
fn transition_table_from_log() {
    use simgap::state::ActionVector;
    use simgap::transition::{estimate, write_log, Corpus, History, TransitionRecord};

    let s = schema();
    let recs: Vec<TransitionRecord> = (0..6)
        .map(|i| TransitionRecord {
            run: 0,
            step: i,
            s: StateVector(vec![i as f64, 0.0]),
            a: ActionVector(vec![1.0]),
            r: 0.0,
            s_next: StateVector(vec![i as f64 + 1.0, 0.0]),
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.jsonl");
    write_log(&path, &recs).unwrap();
    let want = estimate(&History::new(Corpus::Sim, recs), &s).unwrap();

    let sh = schema_handle();
    let p = CString::new(path.to_str().unwrap()).unwrap();
    let mut th = ptr::null_mut();
    unsafe {
        assert_eq!(
            simgap_transition_from_log(sh, p.as_ptr(), SimgapCorpus::Sim, &mut th),
            SimgapStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(simgap_transition_record_count(th), want.record_count());
        assert_eq!(simgap_transition_source_count(th), want.source_count());
        assert_eq!(simgap_transition_edge_count(th), want.edge_count());
        simgap_transition_free(th);
        simgap_schema_free(sh);
    }
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/simgap.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(
            header.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    assert!(header.contains("typedef struct SimgapSchema SimgapSchema;"));
}

/// Compile and run a small C program against the header and static library.
#[test]
fn c_program_links_against_the_static_library() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    // tests live in target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    let profile_dir: PathBuf = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libsimgap_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let c_src = dir.path().join("smoke.c");
    std::fs::write(
        &c_src,
        r#"
#include <stdio.h>
#include <string.h>
#include "simgap.h"

int main(void) {
    const char *toml =
        "eps_c = 0.5\n"
        "[[state]]\nname = \"x\"\nlo = 0.0\nhi = 10.0\nbin_width = 0.5\nweight = 1.0\n"
        "[[action]]\nname = \"v\"\nlo = -1.0\nhi = 1.0\nbin_width = 0.5\nweight = 1.0\n";
    SimgapSchema *s = NULL;
    if (simgap_schema_from_toml(toml, &s) != SIMGAP_STATUS_OK) {
        fprintf(stderr, "%s\n", simgap_last_error_message());
        return 1;
    }
    double a = 1.0, b = 3.5, d = 0.0;
    if (simgap_schema_distance(s, &a, &b, 1, &d) != SIMGAP_STATUS_OK || d != 2.5) return 2;
    int64_t bin = -1; size_t n = 0;
    if (simgap_schema_quantize(s, &b, 1, &bin, 1, &n) != SIMGAP_STATUS_OK || n != 1 || bin != 7) return 3;
    if (simgap_schema_distance(s, &a, &b, 2, &d) != SIMGAP_STATUS_INVALID_ARGUMENT) return 4;
    if (strlen(simgap_last_error_message()) == 0) return 5;
    simgap_schema_free(s);
    printf("ok %s\n", simgap_version());
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(&c_src)
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "C program exited with {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
