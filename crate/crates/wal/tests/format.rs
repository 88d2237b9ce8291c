use proptest::prelude::*;
use sha2::{Digest, Sha256};
use wal::format::{
    decode_annotator, decode_checkpoint, decode_dataset, encode_annotator, encode_checkpoint, encode_dataset,
    load_checkpoint, load_dataset, save_checkpoint, save_dataset, FormatError,
};
use wal_core::annotate::{make_constant_annotator, make_earlystop_annotator, make_noise_annotator, EarlyStopConfig};
use wal_core::data::{synth_domain_pair, Dataset, Domain, LabelKind, Sample, SynthConfig};
use wal_core::nets::{ArchConfig, ModelTriple};

fn blobs(per_class: usize) -> Dataset {
    synth_domain_pair(&SynthConfig {
        per_class_count: per_class,
        ..SynthConfig::default()
    })
    .unwrap()
    .0
}

fn tiny() -> Dataset {
    Dataset::new(
        "tiny",
        2,
        vec![3],
        LabelKind::GroundTruth,
        vec![
            Sample::new(vec![1.0, 2.0, 3.0], vec![1.0, 0.0], Domain::Source),
            Sample::new(vec![-1.0, 0.5, 0.0], vec![0.0, 1.0], Domain::Target),
        ],
    )
    .unwrap()
}

fn parse_offset(r: Result<Dataset, FormatError>) -> usize {
    match r {
        Err(FormatError::Parse { offset, .. }) => offset,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn ten_thousand_samples_reserialize_to_the_same_digest() {
    let ds = blobs(1000);
    assert_eq!(ds.len(), 10_000);
    let bytes = encode_dataset(&ds);
    let back = decode_dataset(&bytes).unwrap();
    assert_eq!(back, ds);
    let again = encode_dataset(&back);
    assert_eq!(Sha256::digest(&bytes), Sha256::digest(&again));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("blobs.wds");
    save_dataset(&ds, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(load_dataset(&path).unwrap(), ds);
}

#[test]
fn header_layout_is_fixed() {
    let bytes = encode_dataset(&tiny());
    assert_eq!(&bytes[..4], b"WDS\0");
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
    assert_eq!(bytes[6], 1);
    // header 7, classes 4, ndim 4, dim 4, label_dim 4, count 8, kind 1, name 4 + 4
    let rows_at = 7 + 4 + 4 + 4 + 4 + 8 + 1 + 4 + 4;
    assert_eq!(bytes.len(), rows_at + 2 * (1 + 4 * 5));
}

#[test]
fn parse_errors_carry_byte_offsets() {
    let good = encode_dataset(&tiny());
    let mut bad = good.clone();
    bad[0] = b'X';
    assert_eq!(parse_offset(decode_dataset(&bad)), 0);
    let mut bad = good.clone();
    bad[4] = 9;
    assert_eq!(parse_offset(decode_dataset(&bad)), 4);
    let mut bad = good.clone();
    bad[6] = 2;
    assert_eq!(parse_offset(decode_dataset(&bad)), 6);

    let rows_at = good.len() - 2 * 21;
    let mut bad = good.clone();
    bad[rows_at + 21] = 7;
    assert_eq!(parse_offset(decode_dataset(&bad)), rows_at + 21);

    let mut long = good.clone();
    long.extend_from_slice(&[0, 0]);
    assert_eq!(parse_offset(decode_dataset(&long)), good.len());

    assert_eq!(parse_offset(decode_dataset(&good[..good.len() - 3])), rows_at);
    assert_eq!(parse_offset(decode_dataset(&good[..9])), 7);
}

#[test]
fn schema_mismatches_are_schema_errors() {
    let good = encode_dataset(&tiny());
    let mut bad = good.clone();
    // label_dim sits after classes, ndim and one dimension
    bad[19] = 3;
    assert!(matches!(decode_dataset(&bad), Err(FormatError::Schema(_))));

    let mut bad = good.clone();
    let rows_at = good.len() - 2 * 21;
    bad[rows_at + 1 + 12..rows_at + 1 + 16].copy_from_slice(&0.5f32.to_le_bytes());
    assert!(matches!(decode_dataset(&bad), Err(FormatError::Schema(_))));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_dataset(&dir.path().join("absent.wds")).unwrap_err();
    assert!(matches!(err, FormatError::Io { .. }));
    assert!(err.to_string().contains("absent.wds"));
}

#[test]
fn checkpoints_round_trip_exactly() {
    let m = ModelTriple::new(ArchConfig::default(), 16, 10, 42).unwrap();
    let bytes = encode_checkpoint(&m);
    assert_eq!(decode_checkpoint(&bytes).unwrap(), m);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stage1.ckpt");
    save_checkpoint(&m, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), m);
    assert!(matches!(
        decode_checkpoint(&encode_dataset(&tiny())),
        Err(FormatError::Parse { offset: 6, .. })
    ));
}

#[test]
fn annotators_round_trip_with_identical_predictions() {
    let ds = blobs(30);
    let noise = make_noise_annotator(&ds, 0.5, 0.8, 1).unwrap();
    let es = make_earlystop_annotator(&ds, &EarlyStopConfig::default(), 2).unwrap();
    let constant = make_constant_annotator(vec![0.1; 10], 16).unwrap().with_hard(true);
    for a in [noise, es, constant] {
        let back = decode_annotator(&encode_annotator(&a)).unwrap();
        assert_eq!(back, a);
        for s in ds.samples().iter().take(50) {
            assert_eq!(back.predict(&s.x), a.predict(&s.x));
        }
    }
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (1usize..5, 2usize..5, 0usize..20, "[a-z]{0,12}", any::<bool>()).prop_flat_map(|(dim, m, n, name, weak)| {
        let row = (
            prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), dim),
            0..m,
            prop::collection::vec(0.0f32..1.0, m),
            any::<bool>(),
        );
        prop::collection::vec(row, n).prop_map(move |rows| {
            let kind = if weak { LabelKind::Weak } else { LabelKind::GroundTruth };
            let samples = rows
                .into_iter()
                .map(|(x, c, soft, src)| {
                    let y = if weak {
                        soft
                    } else {
                        wal_core::data::one_hot(c, m)
                    };
                    let domain = if src { Domain::Source } else { Domain::Target };
                    Sample::new(x, y, domain)
                })
                .collect();
            Dataset::new(name.clone(), m, vec![dim], kind, samples).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn any_dataset_round_trips(ds in arb_dataset()) {
        let bytes = encode_dataset(&ds);
        let back = decode_dataset(&bytes).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(encode_dataset(&back), bytes);
    }

    #[test]
    fn truncation_never_panics(ds in arb_dataset(), cut in 0usize..400) {
        let bytes = encode_dataset(&ds);
        let cut = cut.min(bytes.len().saturating_sub(1));
        prop_assert!(decode_dataset(&bytes[..cut]).is_err());
    }
}
