use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::formats::{load_image, load_spectrogram, load_stopwords, EmbeddingTable};
use super::sample::{Modality, PairType, Sample};
use super::teacher::{csv_error, TeacherTargets};
use super::text::{embed_text, tokenize};
use crate::error::{CoreError, IoContext, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const TEACHER_FILE: &str = "teacher.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.embt";
pub const STOPWORDS_FILE: &str = "stopwords.txt";

/// Anything that can produce a preprocessed sample by id.
pub trait SampleSource: Sync {
    fn load(&self, id: &str, modality: Modality) -> Result<Sample>;

    fn load_many(&self, ids: &[String], modality: Modality) -> Result<Vec<Sample>> {
        ids.iter().map(|id| self.load(id, modality)).collect()
    }
}

/// One row of the dataset manifest CSV.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub modality: Modality,
    /// Relative to the manifest's directory.
    pub path: String,
    pub pair_id: String,
    pub split: String,
}

/// A supervised training pair: an image and its sound or text partner.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub pair_type: PairType,
    pub pair_id: String,
    pub image: String,
    pub partner: String,
}

/// Manifest rows plus optional teacher targets and labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetIndex {
    pub rows: Vec<ManifestRow>,
    pub teacher: Option<TeacherTargets>,
    /// Concept label per pair id.
    pub labels: Option<BTreeMap<String, usize>>,
}

impl DatasetIndex {
    /// Sorted pair ids, optionally restricted to one split.
    pub fn pair_ids(&self, split: Option<&str>) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .rows
            .iter()
            .filter(|r| split.is_none_or(|s| r.split == s))
            .map(|r| r.pair_id.as_str())
            .collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn sample_id(&self, pair_id: &str, modality: Modality) -> Option<&str> {
        self.rows
            .iter()
            .find(|r| r.pair_id == pair_id && r.modality == modality)
            .map(|r| r.id.as_str())
    }

    /// Sample ids for `pair_ids`, failing on the first pair lacking `modality`.
    pub fn sample_ids(&self, pair_ids: &[String], modality: Modality) -> Result<Vec<String>> {
        let lookup: HashMap<(&str, Modality), &str> = self
            .rows
            .iter()
            .map(|r| ((r.pair_id.as_str(), r.modality), r.id.as_str()))
            .collect();
        pair_ids
            .iter()
            .map(|p| {
                lookup
                    .get(&(p.as_str(), modality))
                    .map(|s| s.to_string())
                    .ok_or_else(|| CoreError::data(format!("pair {p} has no {modality} sample")))
            })
            .collect()
    }

    /// Image+sound and image+text pairs among the given split's pair ids.
    pub fn training_pairs(&self, split: Option<&str>) -> Vec<TrainingPair> {
        let mut by_pair: BTreeMap<&str, BTreeMap<Modality, &str>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| split.is_none_or(|s| r.split == s)) {
            by_pair
                .entry(r.pair_id.as_str())
                .or_default()
                .insert(r.modality, r.id.as_str());
        }
        let mut pairs = Vec::new();
        for pt in PairType::ALL {
            for (pair_id, m) in &by_pair {
                if let (Some(img), Some(other)) = (m.get(&Modality::Image), m.get(&pt.partner())) {
                    pairs.push(TrainingPair {
                        pair_type: pt,
                        pair_id: pair_id.to_string(),
                        image: img.to_string(),
                        partner: other.to_string(),
                    });
                }
            }
        }
        pairs
    }

    /// Labels for `pair_ids`, or a configuration error naming `task`.
    pub fn labels_for(&self, pair_ids: &[String], task: &str) -> Result<Vec<usize>> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| CoreError::config(format!("task {task} needs labels but the dataset has none")))?;
        pair_ids
            .iter()
            .map(|p| {
                labels
                    .get(p)
                    .copied()
                    .ok_or_else(|| CoreError::config(format!("task {task}: pair {p} has no label")))
            })
            .collect()
    }
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().at(path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let rows: Vec<ManifestRow> = r
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))?;
    let mut seen = BTreeSet::new();
    if let Some(dup) = rows.iter().find(|r| !seen.insert(r.id.as_str())) {
        return Err(CoreError::data(format!("{}: duplicate sample id {}", path.display(), dup.id)));
    }
    Ok(rows)
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    pair_id: String,
    label: usize,
}

pub fn write_labels(path: &Path, labels: &BTreeMap<String, usize>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for (pair_id, &label) in labels {
        w.serialize(LabelRow {
            pair_id: pair_id.clone(),
            label,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().at(path)
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<String, usize>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize::<LabelRow>()
        .map(|row| row.map(|l| (l.pair_id, l.label)).map_err(|e| csv_error(path, e)))
        .collect()
}

/// A dataset on disk described by a manifest CSV.
///
/// `teacher.csv`, `labels.csv`, `embeddings.embt` and `stopwords.txt` are
/// picked up from the manifest's directory when present.
pub struct FileDataset {
    root: PathBuf,
    index: DatasetIndex,
    paths: HashMap<String, (Modality, PathBuf)>,
    table: Option<EmbeddingTable>,
    stopwords: BTreeSet<String>,
}

impl FileDataset {
    pub fn open(manifest: &Path) -> Result<Self> {
        let root = manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let rows = read_manifest(manifest)?;
        let sibling = |name: &str| Some(root.join(name)).filter(|p| p.exists());
        let teacher = sibling(TEACHER_FILE).map(|p| TeacherTargets::read_csv(&p)).transpose()?;
        let labels = sibling(LABELS_FILE).map(|p| read_labels(&p)).transpose()?;
        let table = sibling(EMBEDDINGS_FILE).map(|p| EmbeddingTable::load(&p)).transpose()?;
        let stopwords = sibling(STOPWORDS_FILE)
            .map(|p| load_stopwords(&p))
            .transpose()?
            .unwrap_or_default();
        let paths = rows
            .iter()
            .map(|r| (r.id.clone(), (r.modality, root.join(&r.path))))
            .collect();
        Ok(FileDataset {
            root,
            index: DatasetIndex {
                rows,
                teacher,
                labels,
            },
            paths,
            table,
            stopwords,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn index(&self) -> &DatasetIndex {
        &self.index
    }
}

impl SampleSource for FileDataset {
    fn load(&self, id: &str, modality: Modality) -> Result<Sample> {
        let (m, path) = self
            .paths
            .get(id)
            .ok_or_else(|| CoreError::data(format!("sample {id} is not in the manifest")))?;
        if *m != modality {
            return Err(CoreError::data(format!("sample {id} is {m}, not {modality}")));
        }
        match modality {
            Modality::Image => load_image(path, id),
            Modality::Sound => load_spectrogram(path, id),
            Modality::Text => {
                let table = self.table.as_ref().ok_or_else(|| {
                    CoreError::data(format!("text sample {id} needs {EMBEDDINGS_FILE}"))
                })?;
                let sentence = std::fs::read_to_string(path).at(path)?;
                embed_text(id, &tokenize(&sentence), table, &self.stopwords)
            }
        }
    }
}
