mod common;

use ercpipe::corpus::{save_corpus, write_corpus_jsonl, Dataset, Split};
use ercpipe::enrich::DescriptionCache;
use ercpipe::instruction::{build_dataset, emit_jsonl, instruction_text, BuildConfig, UNIFIED_SEVEN};
use ercpipe::jsonl;

use common::{dir_name, fixtures, ingest_from};

#[test]
fn canonical_corpora_match_goldens() {
    let out = tempfile::tempdir().unwrap();
    for d in Dataset::ALL {
        let corpus = ingest_from(&fixtures(), d);
        let path = out.path().join(format!("{}.jsonl", dir_name(d)));
        write_corpus_jsonl(&corpus, &path).unwrap();
        let got = std::fs::read_to_string(&path).unwrap();
        let want = std::fs::read_to_string(fixtures().join("expected").join(format!("{}.jsonl", dir_name(d)))).unwrap();
        assert_eq!(got, want, "{d}");
    }
}

#[test]
fn rejected_rows_are_reported() {
    let iemocap = ingest_from(&fixtures(), Dataset::Iemocap);
    assert_eq!(iemocap.rejected.len(), 2);
    for d in [Dataset::Meld, Dataset::EmoryNlp, Dataset::Meisd, Dataset::DailyDialog] {
        assert!(ingest_from(&fixtures(), d).rejected.is_empty(), "{d}");
    }
}

#[test]
fn saved_corpus_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let labels = ercpipe::LabelConfig::default();
    for d in Dataset::ALL {
        let corpus = ingest_from(&fixtures(), d);
        let path = dir.path().join(format!("{}.jsonl", dir_name(d)));
        save_corpus(&corpus, &path).unwrap();
        let back = ercpipe::corpus::load_corpus(&path, &labels).unwrap();
        assert_eq!(back.conversations, corpus.conversations, "{d}");
        assert_eq!(back.label_space, corpus.label_space, "{d}");
    }
}

#[test]
fn seven_emotion_instruction_text() {
    let text = instruction_text(&UNIFIED_SEVEN, "v1").unwrap();
    assert_eq!(
        text,
        "Given the Video Description and Context, detect the emotion of the input, and assign an accuracy label \
         from ['happiness', 'anger', 'fear', 'sadness', 'disgust', 'surprise', 'neutral']."
    );
}

#[test]
fn instruction_records_match_goldens() {
    let cache = DescriptionCache::in_memory();
    let cfg = BuildConfig { splits: vec![Split::Train, Split::Test], ..BuildConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    for d in [Dataset::Meld, Dataset::Iemocap] {
        let corpus = ingest_from(&fixtures(), d);
        let built = build_dataset(std::slice::from_ref(&corpus), &cfg, &cache).unwrap();
        let path = dir.path().join("out.jsonl");
        emit_jsonl(&built.instances, &path).unwrap();
        let want = fixtures().join("expected").join(format!("{}_instructions_k1.jsonl", dir_name(d)));
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&want).unwrap(), "{d}");

        // Emission is a pure function of the instances.
        let again = jsonl::to_bytes(&built.instances).unwrap();
        assert_eq!(again, std::fs::read(&path).unwrap());
    }
}
