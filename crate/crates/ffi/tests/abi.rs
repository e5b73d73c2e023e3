use std::ffi::{CStr, CString};
use std::ptr;

use shiftseq::model::ModelConfig;
use shiftseq::train::{init_state, save_checkpoint, TrainConfig};
use shiftseq_ffi::*;

fn last_error() -> String {
    let p = shiftseq_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn synth(n: usize, preset: &str, seed: u64) -> *mut ShiftseqCorpus {
    let preset = CString::new(preset).unwrap();
    let mut corpus = ptr::null_mut();
    let status = unsafe { shiftseq_corpus_synth(n, preset.as_ptr(), seed, &mut corpus) };
    assert_eq!(status, ShiftseqStatus::Ok);
    corpus
}

#[test]
fn corpus_round_trip() {
    let corpus = synth(20, "shift_only", 3);
    assert_eq!(unsafe { shiftseq_corpus_len(corpus) }, 20);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("c.jsonl").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { shiftseq_corpus_save(corpus, path.as_ptr()) }, ShiftseqStatus::Ok);

    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { shiftseq_corpus_load(path.as_ptr(), &mut loaded) }, ShiftseqStatus::Ok);
    assert_eq!(unsafe { shiftseq_corpus_len(loaded) }, 20);

    let mut a = [[0u8; SHIFTSEQ_SLOTS]; 4];
    let mut b = [[0u8; SHIFTSEQ_SLOTS]; 4];
    for i in 0..20 {
        unsafe {
            let [d1, m1, d2, m2] = &mut a;
            let s = shiftseq_corpus_pair(corpus, i, d1.as_mut_ptr(), m1.as_mut_ptr(), d2.as_mut_ptr(), m2.as_mut_ptr());
            assert_eq!(s, ShiftseqStatus::Ok);
            let [d1, m1, d2, m2] = &mut b;
            let s = shiftseq_corpus_pair(loaded, i, d1.as_mut_ptr(), m1.as_mut_ptr(), d2.as_mut_ptr(), m2.as_mut_ptr());
            assert_eq!(s, ShiftseqStatus::Ok);
        }
        assert_eq!(a, b);
        for (day, mask) in [(0, 1), (2, 3)] {
            for t in 0..SHIFTSEQ_SLOTS {
                assert_eq!(a[day][t] == 0, a[mask][t] == 0);
                assert!(a[day][t] <= 15 && a[mask][t] <= 1);
            }
        }
    }
    unsafe {
        shiftseq_corpus_free(corpus);
        shiftseq_corpus_free(loaded);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut corpus = ptr::null_mut();
    let missing = CString::new("/nonexistent/corpus.jsonl").unwrap();
    assert_eq!(unsafe { shiftseq_corpus_load(missing.as_ptr(), &mut corpus) }, ShiftseqStatus::Io);
    assert!(last_error().contains("/nonexistent/corpus.jsonl"));
    assert!(corpus.is_null());

    let bad = CString::new("weekend").unwrap();
    assert_eq!(unsafe { shiftseq_corpus_synth(5, bad.as_ptr(), 0, &mut corpus) }, ShiftseqStatus::Usage);
    assert!(last_error().contains("weekend"));

    assert_eq!(unsafe { shiftseq_corpus_load(ptr::null(), &mut corpus) }, ShiftseqStatus::NullArgument);
    assert_eq!(last_error(), "path is null");

    let c = synth(3, "population", 0);
    let mut buf = [0u8; SHIFTSEQ_SLOTS];
    let p = buf.as_mut_ptr();
    assert_eq!(unsafe { shiftseq_corpus_pair(c, 3, p, p, p, p) }, ShiftseqStatus::InvalidArgument);
    assert_eq!(unsafe { shiftseq_corpus_pair(c, 0, p, ptr::null_mut(), p, p) }, ShiftseqStatus::NullArgument);
    assert_eq!(last_error(), "mask1 is null");
    unsafe { shiftseq_corpus_free(c) };

    let mut period = 0u8;
    assert_eq!(unsafe { shiftseq_period_of(96, &mut period) }, ShiftseqStatus::Parse);
    assert_eq!(unsafe { shiftseq_corpus_len(ptr::null()) }, 0);
    unsafe {
        shiftseq_corpus_free(ptr::null_mut());
        shiftseq_model_free(ptr::null_mut());
    }
}

#[test]
fn periods_partition_the_day() {
    let mut sizes = [0usize; 4];
    for t in 0..SHIFTSEQ_SLOTS {
        let mut p = 9u8;
        assert_eq!(unsafe { shiftseq_period_of(t, &mut p) }, ShiftseqStatus::Ok);
        sizes[p as usize] += 1;
    }
    assert_eq!(sizes, [16, 32, 16, 32]);
}

#[test]
fn jsd_matches_core() {
    let p = [0.2, 0.3, 0.5, 0.0];
    let q = [0.1, 0.1, 0.4, 0.4];
    let mut out = -1.0;
    assert_eq!(unsafe { shiftseq_jsd(p.as_ptr(), q.as_ptr(), 4, &mut out) }, ShiftseqStatus::Ok);
    assert_eq!(out, shiftseq::loss::jsd(&p, &q));
    let disjoint = [0.0, 0.0, 0.0, 1.0];
    let first = [1.0, 0.0, 0.0, 0.0];
    unsafe { shiftseq_jsd(first.as_ptr(), disjoint.as_ptr(), 4, &mut out) };
    assert!((out - 1.0).abs() < 1e-12);
    let neg = [-0.1, 0.5, 0.5, 0.1];
    assert_eq!(unsafe { shiftseq_jsd(neg.as_ptr(), q.as_ptr(), 4, &mut out) }, ShiftseqStatus::InvalidArgument);
}

#[test]
fn model_generates_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let cfg = ModelConfig {
        d_model: 16,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        ff_dim: 32,
        ..ModelConfig::desk()
    };
    let state = init_state(&cfg, &TrainConfig::default()).unwrap();
    save_checkpoint(&ckpt, &state).unwrap();

    let path = CString::new(ckpt.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    let s = unsafe { shiftseq_model_load(path.as_ptr(), &mut model) };
    assert_eq!(s, ShiftseqStatus::Ok, "{}", last_error());

    let corpus = synth(30, "shift_only", 1);
    let mut d = [[0u8; SHIFTSEQ_SLOTS]; 4];
    let [d1, m1, d2, m2] = &mut d;
    unsafe { shiftseq_corpus_pair(corpus, 0, d1.as_mut_ptr(), m1.as_mut_ptr(), d2.as_mut_ptr(), m2.as_mut_ptr()) };

    let mut greedy = [[0u8; SHIFTSEQ_SLOTS]; 2];
    for (k, seed) in [5u64, 6].into_iter().enumerate() {
        let s = unsafe { shiftseq_model_generate(model, d[0].as_ptr(), d[1].as_ptr(), 0.0, seed, greedy[k].as_mut_ptr()) };
        assert_eq!(s, ShiftseqStatus::Ok);
        assert!(greedy[k].iter().all(|&c| (1..=15).contains(&c)));
    }
    assert_eq!(greedy[0], greedy[1]);

    let mut sampled = [[0u8; SHIFTSEQ_SLOTS]; 2];
    for row in &mut sampled {
        let s = unsafe { shiftseq_model_generate(model, d[0].as_ptr(), d[1].as_ptr(), 1.0, 9, row.as_mut_ptr()) };
        assert_eq!(s, ShiftseqStatus::Ok);
    }
    assert_eq!(sampled[0], sampled[1]);

    let mut mismatched = d[1];
    mismatched[0] = 1 - mismatched[0];
    let s = unsafe { shiftseq_model_generate(model, d[0].as_ptr(), mismatched.as_ptr(), 0.0, 0, greedy[0].as_mut_ptr()) };
    assert_eq!(s, ShiftseqStatus::InvalidArgument);
    assert!(last_error().starts_with("slot 0"));

    let mut report = ShiftseqEvalReport::default();
    assert_eq!(unsafe { shiftseq_model_evaluate(model, corpus, 0, &mut report) }, ShiftseqStatus::Ok);
    assert!(report.pairs > 0);
    for v in [report.start, report.end, report.duration, report.activity_type, report.average] {
        assert!((0.0..=1.0).contains(&v));
    }
    let mean = (report.start + report.end + report.duration + report.activity_type) / 4.0;
    assert!((report.average - mean).abs() < 1e-12);
    unsafe {
        shiftseq_model_free(model);
        shiftseq_corpus_free(corpus);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/shiftseq.h")).unwrap();
    let source = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 12);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}
