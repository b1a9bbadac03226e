use proptest::prelude::*;
use protomatch::io::{
    read_embedding_archive, read_proposals, read_results, results_from_runs, sidecar_path, validate,
    write_embedding_archive, write_proposals, write_results, Dtype, EmbeddingArchive, FileKind, RecordKey,
    ViolationKind,
};
use protomatch::synthetic::{generate, SyntheticConfig};
use protomatch::Error;

fn arb_archive() -> impl Strategy<Value = EmbeddingArchive> {
    (1usize..16, 0usize..=100, any::<bool>()).prop_flat_map(|(dim, count, f64_payload)| {
        proptest::collection::vec(proptest::collection::vec(-1e3f32..1e3, dim), count).prop_map(move |rows| {
            let dtype = if f64_payload { Dtype::F64 } else { Dtype::F32 };
            let mut a = EmbeddingArchive::new("extractor", "zero-bg", dtype, dim);
            for (i, row) in rows.into_iter().enumerate() {
                let key = RecordKey::Proposal { scene_id: 1, image_id: (i / 7) as u32, proposal_index: (i % 7) as u32 };
                a.push(key, row.into_iter().map(f64::from).collect()).unwrap();
            }
            a
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn archives_roundtrip_byte_identically(a in arb_archive()) {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.dpme"), dir.path().join("b.dpme"));
        write_embedding_archive(&p1, &a).unwrap();
        let back = read_embedding_archive(&p1).unwrap();
        prop_assert_eq!(&back, &a);
        write_embedding_archive(&p2, &back).unwrap();
        prop_assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        prop_assert!(validate(&p1).unwrap().is_clean());
    }
}

#[test]
fn empty_archive_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.dpme");
    let a = EmbeddingArchive::new("x", "y", Dtype::F32, 1024);
    write_embedding_archive(&p, &a).unwrap();
    assert_eq!(read_embedding_archive(&p).unwrap(), a);
}

fn small_archive(dtype: Dtype) -> EmbeddingArchive {
    let mut a = EmbeddingArchive::new("x", "y", dtype, 4);
    for k in 0..3 {
        a.push(RecordKey::Support { class_id: 1, support_index: k }, vec![1.0, 2.0, 3.0, k as f64]).unwrap();
    }
    a
}

#[test]
fn header_count_mismatch_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.dpme");
    write_embedding_archive(&p, &small_archive(Dtype::F32)).unwrap();
    let mut bytes = std::fs::read(&p).unwrap();
    bytes[10] = 5;
    std::fs::write(&p, &bytes).unwrap();
    assert!(matches!(read_embedding_archive(&p), Err(Error::Corrupt(_))));
    let report = validate(&p).unwrap();
    assert_eq!(report.violations[0].kind, ViolationKind::LengthMismatch);
    // sidecar still lists 3 keys against the claimed 5
    assert_eq!(report.violations.len(), 2, "{report:?}");
}

#[test]
fn f32_payload_declared_f64_is_one_typed_violation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.dpme");
    write_embedding_archive(&p, &small_archive(Dtype::F32)).unwrap();
    assert!(validate(&p).unwrap().is_clean());
    let mut bytes = std::fs::read(&p).unwrap();
    // dtype tag is the last header byte
    bytes[18] = 1;
    std::fs::write(&p, &bytes).unwrap();
    let report = validate(&p).unwrap();
    assert_eq!(report.kind, FileKind::EmbeddingArchive);
    assert_eq!(report.violations.len(), 1, "{report:?}");
    assert_eq!(report.violations[0].kind, ViolationKind::DtypeMismatch);
    assert!(read_embedding_archive(&p).is_err());
}

#[test]
fn missing_sidecar_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.dpme");
    write_embedding_archive(&p, &small_archive(Dtype::F64)).unwrap();
    std::fs::remove_file(sidecar_path(&p)).unwrap();
    let report = validate(&p).unwrap();
    assert_eq!(report.violations.len(), 1);
    assert_eq!(report.violations[0].kind, ViolationKind::Sidecar);
    assert!(matches!(read_embedding_archive(&p), Err(Error::Io { .. })));
}

#[test]
fn proposals_roundtrip_and_validate() {
    let bench = generate(&SyntheticConfig { num_scenes: 3, ..Default::default() });
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.jsonl");
    write_proposals(&p, &bench.batches).unwrap();
    let back = read_proposals(&p).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in back.iter().zip(&bench.batches) {
        assert_eq!(a.proposals, b.proposals);
        assert!(a.embeddings.is_empty());
    }
    let report = validate(&p).unwrap();
    assert_eq!(report.kind, FileKind::ProposalArchive);
    assert!(report.is_clean());
}

#[test]
fn truncated_jsonl_names_the_line() {
    let bench = generate(&SyntheticConfig { num_scenes: 2, ..Default::default() });
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.jsonl");
    write_proposals(&p, &bench.batches).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let n_lines = text.lines().count();
    std::fs::write(&p, &text[..text.len() - 25]).unwrap();
    let report = validate(&p).unwrap();
    assert_eq!(report.violations.len(), 1);
    assert_eq!(report.violations[0].location, format!("line {n_lines}"));
    assert!(matches!(read_proposals(&p), Err(Error::SchemaViolation { record, .. }) if record == n_lines));
}

#[test]
fn results_ordering_checked_but_readable() {
    use protomatch::io::BopDetection;
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.json");
    let mk = |image_id, score| BopDetection { scene_id: 1, image_id, category_id: 1, bbox: [0, 0, 2, 2], score, time: -1.0 };
    let dets = vec![mk(0, 0.2), mk(0, 0.9), mk(1, 0.5)];
    write_results(&p, &dets).unwrap();
    let back = read_results(&p).unwrap();
    assert_eq!(back[0].score, 0.9);
    assert!(validate(&p).unwrap().is_clean());

    std::fs::write(&p, serde_json::to_vec(&dets).unwrap()).unwrap();
    let report = validate(&p).unwrap();
    assert_eq!(report.violations.len(), 1);
    assert_eq!(report.violations[0].kind, ViolationKind::Ordering);
    assert_eq!(read_results(&p).unwrap(), dets);
}

#[test]
fn empty_results_are_valid() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.json");
    write_results(&p, &results_from_runs(&[])).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "[]");
    let report = validate(&p).unwrap();
    assert_eq!(report.kind, FileKind::BopResults);
    assert!(report.is_clean());
}

#[test]
fn bad_results_record() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.json");
    std::fs::write(&p, r#"[{"scene_id":1,"image_id":0,"category_id":1,"bbox":[0,0,0,4],"score":0.5,"time":-1}]"#).unwrap();
    let report = validate(&p).unwrap();
    assert_eq!(report.violations.len(), 1);
    assert_eq!(report.violations[0].location, "record 0");
    assert!(matches!(read_results(&p), Err(Error::SchemaViolation { record: 0, .. })));
}
