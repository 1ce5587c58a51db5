use docquery::corpus::{serialize_reading_order, validate_document, write_corpus_to};
use docquery::miner::{mine_corpus, read_page_dir, Page};
use docquery::synthetic::{gen_synthetic, write_synthetic, SyntheticSpec};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bytes(pages: Vec<Page>) -> Vec<u8> {
    let mut out = Vec::new();
    write_corpus_to(&mine_corpus(pages), &mut out).unwrap();
    out
}

#[test]
fn mining_ignores_page_order() {
    let data = gen_synthetic(&SyntheticSpec::default()).unwrap();
    let reference = bytes(data.pages.clone());
    for seed in 0..3 {
        let mut pages = data.pages.clone();
        pages.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(bytes(pages), reference);
    }
}

#[test]
fn pages_on_disk_mine_like_pages_in_memory() {
    let data = gen_synthetic(&SyntheticSpec::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_synthetic(&data, dir.path()).unwrap();
    let from_disk = read_page_dir(&paths.pages_dir).unwrap();
    assert_eq!(from_disk.len(), data.pages.len());
    assert_eq!(bytes(from_disk), bytes(data.pages));
}

#[test]
fn mined_documents_are_valid_and_in_reading_order() {
    let data = gen_synthetic(&SyntheticSpec::default()).unwrap();
    for group in mine_corpus(data.pages) {
        for doc in &group.documents {
            assert_eq!(doc.schema_id, group.schema_id);
            assert!(
                validate_document(doc, Some(&group.entity_types)).is_empty(),
                "{}",
                doc.doc_id
            );
            assert_eq!(serialize_reading_order(doc.tokens.clone()), doc.tokens);
        }
    }
}
