//! Files in the exporter layout load through the pipeline's readers.

use acd::features::{Embeddings, FeatureStore};

#[test]
fn image_feature_file_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("images.txt");
    let dim = 4096;
    let mut text = format!("3 {dim}\n");
    for stem in ["img_a", "img_b", "img_c"] {
        let row: Vec<String> = (0..dim).map(|j| format!("{:.6}", (j % 7) as f64 * 0.125 - 0.25)).collect();
        text.push_str(&format!("{stem} {}\n", row.join(" ")));
    }
    std::fs::write(&path, text).unwrap();
    let store = FeatureStore::load(&path).unwrap();
    assert_eq!((store.len(), store.dim()), (3, dim));
    assert_eq!(store.get("img_b").unwrap()[1], -0.125);
}

#[test]
fn embedding_file_with_none_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tokens.txt");
    std::fs::write(&path, "3 3\nride 0.5 -1 2e-1\nhorse 1 0 0\nnone 0 0 0\n").unwrap();
    let emb = Embeddings::load(&path).unwrap();
    assert_eq!((emb.store().len(), emb.dim()), (3, 3));
    assert_eq!(emb.lookup("none").unwrap(), [0.0, 0.0, 0.0]);
    assert_eq!(emb.lookup("ride").unwrap(), [0.5, -1.0, 0.2]);
}

#[test]
fn headerless_file_and_round_trip() {
    let mut store = FeatureStore::new(2);
    store.insert("x", &[0.1, -3.5]).unwrap();
    store.insert("y", &[1e-9, 7.0]).unwrap();
    let mut buf = Vec::new();
    store.write(&mut buf).unwrap();
    let back = FeatureStore::read(buf.as_slice(), "buffer").unwrap();
    assert_eq!(back, store);

    let plain = FeatureStore::read("a 1 2\nb 3 4\n".as_bytes(), "plain").unwrap();
    assert_eq!((plain.len(), plain.dim()), (2, 2));
}

#[test]
fn malformed_files_are_rejected() {
    assert!(FeatureStore::read("3 2\na 1 2\n".as_bytes(), "short").is_err());
    assert!(FeatureStore::read("a 1 2\nb 3\n".as_bytes(), "ragged").is_err());
    assert!(FeatureStore::read("a 1 nan\n".as_bytes(), "nan").is_err());
    assert!(FeatureStore::read("a 1 2\na 3 4\n".as_bytes(), "dup").is_err());
}
