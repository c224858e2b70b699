//! Synthetic datasets written to disk and read back.

use std::collections::BTreeMap;
use std::path::Path;

use aligned_core::data::synthetic::{pair_id, sample_id};
use aligned_core::data::{
    make_splits, FileDataset, Modality, SampleSource, SplitSizes, SyntheticWorld, MANIFEST_FILE,
};

fn world() -> SyntheticWorld {
    let mut w = SyntheticWorld::new(4, 31);
    w.image_size = 8;
    w
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn written_dataset_reads_back_as_the_in_memory_corpus() {
    let corpus = world().generate(12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = corpus.write_dataset(dir.path(), None).unwrap();
    assert!(written.iter().all(|p| p.is_relative()));
    assert!(written.iter().all(|p| dir.path().join(p).is_file()));

    let ds = FileDataset::open(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(ds.index().rows.len(), 36);
    for i in 0..12 {
        for m in Modality::ALL {
            let id = sample_id(i, m);
            let disk = ds.load(&id, m).unwrap();
            let mem = corpus.load(&id, m).unwrap();
            assert_eq!(disk.payload.shape(), mem.payload.shape(), "{id}");
            let worst = disk
                .payload
                .data()
                .iter()
                .zip(mem.payload.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-6, "{id}: {worst}");
        }
    }
    let teacher = ds.index().teacher.as_ref().unwrap();
    assert_eq!(teacher.len(), 12);
    assert!(ds.load(&sample_id(0, Modality::Image), Modality::Sound).is_err());
}

#[test]
fn regeneration_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    world().generate(9).unwrap().write_dataset(a.path(), None).unwrap();
    world().generate(9).unwrap().write_dataset(b.path(), None).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    assert!(ta == tb);

    let mut other = world();
    other.seed += 1;
    let c = tempfile::tempdir().unwrap();
    other.generate(9).unwrap().write_dataset(c.path(), None).unwrap();
    assert!(read_tree(c.path()) != ta);
}

#[test]
fn splits_and_labels_are_recorded() {
    let corpus = world().generate(40).unwrap();
    let ids: Vec<String> = (0..40).map(pair_id).collect();
    let splits = make_splits(&ids, 5, SplitSizes { validation: 4, test: 8 }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    corpus.write_dataset(dir.path(), Some(&splits)).unwrap();
    let ds = FileDataset::open(&dir.path().join(MANIFEST_FILE)).unwrap();
    let index = ds.index();
    assert_eq!(index.pair_ids(Some("train")).len(), 28);
    assert_eq!(index.pair_ids(Some("validation")), splits.validation);
    assert_eq!(index.pair_ids(Some("test")), splits.test);

    let labels = index.labels.as_ref().unwrap();
    let mut counts = [0usize; 4];
    for (pair, &c) in labels {
        let i: usize = pair[1..].parse().unwrap();
        assert_eq!(c, corpus.concept(i));
        counts[c] += 1;
    }
    assert_eq!(counts, [10; 4]);
    // Every training pair of each type appears once.
    let train = index.training_pairs(Some("train"));
    assert_eq!(train.len(), 2 * 28);
}
