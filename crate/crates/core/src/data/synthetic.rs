//! Synthetic concept-keyed (image, sound, text) triples.
//!
//! Every concept owns a colored blob pattern, a harmonic stack at its own
//! fundamental frequency and a private vocabulary. Samples are generated on
//! demand from `(seed, index, modality)` so large corpora never need to be
//! held in memory.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use aligned_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::formats::{save_image, save_spectrogram, save_stopwords, EmbeddingTable};
use super::manifest::{
    write_labels, write_manifest, DatasetIndex, ManifestRow, SampleSource, EMBEDDINGS_FILE, LABELS_FILE,
    MANIFEST_FILE, STOPWORDS_FILE, TEACHER_FILE,
};
use super::sample::{
    Modality, Sample, IMAGE_CHANNELS, SOUND_CHANNELS, SOUND_FRAMES, TEXT_EMBED_DIM,
};
use super::splits::Splits;
use super::teacher::TeacherTargets;
use super::text::embed_text;
use crate::error::{CoreError, IoContext, Result};

/// Function words shared by every concept; removed before embedding.
pub const STOP_WORDS: [&str; 12] = [
    "the", "a", "an", "of", "and", "in", "on", "with", "is", "at", "to", "this",
];

/// Content words shared by every concept; kept, so they act as distractors.
pub const DISTRACTOR_WORDS: [&str; 10] = [
    "photo", "picture", "scene", "view", "thing", "people", "place", "day", "time", "outside",
];

const SYLLABLES: [&str; 12] = ["ba", "ke", "di", "lo", "mu", "ra", "si", "to", "ve", "zu", "ne", "pa"];

/// Largest supported concept count (bounded by distinct fundamentals).
pub const MAX_CONCEPTS: usize = 64;

/// Teacher smoothing: `(1 − ε)·onehot + ε/N`.
pub const TEACHER_SMOOTHING: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticWorld {
    pub concepts: usize,
    pub seed: u64,
    #[serde(default = "defaults::image_noise")]
    pub image_noise: f64,
    #[serde(default = "defaults::sound_noise")]
    pub sound_noise: f64,
    /// Probability that a token of the concept's canonical sentence is resampled.
    #[serde(default = "defaults::text_noise")]
    pub text_noise: f64,
    #[serde(default = "defaults::image_size")]
    pub image_size: usize,
    /// Width of teacher probability rows.
    #[serde(default = "defaults::output_dim")]
    pub output_dim: usize,
    #[serde(default = "defaults::vocab")]
    pub words_per_concept: usize,
    #[serde(default = "defaults::sentence")]
    pub sentence_len: usize,
}

mod defaults {
    pub fn image_noise() -> f64 {
        0.5
    }
    pub fn sound_noise() -> f64 {
        0.5
    }
    pub fn text_noise() -> f64 {
        0.3
    }
    pub fn image_size() -> usize {
        32
    }
    pub fn output_dim() -> usize {
        64
    }
    pub fn vocab() -> usize {
        50
    }
    pub fn sentence() -> usize {
        12
    }
}

impl SyntheticWorld {
    pub fn new(concepts: usize, seed: u64) -> Self {
        SyntheticWorld {
            concepts,
            seed,
            image_noise: defaults::image_noise(),
            sound_noise: defaults::sound_noise(),
            text_noise: defaults::text_noise(),
            image_size: defaults::image_size(),
            output_dim: defaults::output_dim(),
            words_per_concept: defaults::vocab(),
            sentence_len: defaults::sentence(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.concepts < 2 {
            return Err(CoreError::config(format!("need at least 2 concepts, got {}", self.concepts)));
        }
        if self.concepts > MAX_CONCEPTS {
            return Err(CoreError::config(format!("at most {MAX_CONCEPTS} concepts are supported")));
        }
        if self.output_dim < self.concepts {
            return Err(CoreError::config("teacher output_dim is smaller than the concept count"));
        }
        for (name, v) in [("image_noise", self.image_noise), ("sound_noise", self.sound_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CoreError::config(format!("{name} must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.text_noise) {
            return Err(CoreError::config("text_noise is a probability in [0, 1]"));
        }
        if self.image_size < 4 || self.words_per_concept == 0 || self.sentence_len == 0 {
            return Err(CoreError::config("image_size >= 4, words_per_concept >= 1, sentence_len >= 1"));
        }
        Ok(())
    }

    /// Builds prototypes and `n` triples (indices `0..n`, concept `i mod K`).
    pub fn generate(&self, n: usize) -> Result<SyntheticCorpus> {
        self.validate()?;
        if n == 0 {
            return Err(CoreError::config("n must be at least 1"));
        }
        SyntheticCorpus::build(self.clone(), n)
    }
}

pub fn pair_id(index: usize) -> String {
    format!("p{index:05}")
}

pub fn sample_id(index: usize, modality: Modality) -> String {
    format!("p{index:05}-{}", modality.short())
}

fn parse_sample_id(id: &str) -> Option<(usize, Modality)> {
    let (num, tag) = id.strip_prefix('p')?.split_once('-')?;
    let modality = Modality::ALL.into_iter().find(|m| m.short() == tag)?;
    Some((num.parse().ok()?, modality))
}

fn concept_word(concept: usize, j: usize, per: usize) -> String {
    let mut code = concept * per + j;
    let mut w = String::new();
    for _ in 0..4 {
        w.push_str(SYLLABLES[code % SYLLABLES.len()]);
        code /= SYLLABLES.len();
    }
    w
}

/// Generated prototypes plus the `n` triples drawn from them.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    world: SyntheticWorld,
    n: usize,
    images: Vec<Tensor>,
    sounds: Vec<Tensor>,
    sentences: Vec<Vec<String>>,
    vocab: Vec<Vec<String>>,
    table: EmbeddingTable,
    stopwords: BTreeSet<String>,
}

impl SyntheticCorpus {
    fn build(world: SyntheticWorld, n: usize) -> Result<Self> {
        let k = world.concepts;
        let mut rng = ChaCha8Rng::seed_from_u64(world.seed);
        rng.set_stream(u64::MAX);

        let size = world.image_size;
        let images = (0..k).map(|_| blob_prototype(&mut rng, size)).collect::<Result<_>>()?;

        let mut fundamentals: Vec<usize> = (6..6 + 2 * MAX_CONCEPTS).step_by(2).collect();
        fundamentals.shuffle(&mut rng);
        let sounds = fundamentals[..k]
            .iter()
            .map(|&f0| harmonic_prototype(&mut rng, f0))
            .collect::<Result<_>>()?;

        let per = world.words_per_concept;
        let vocab: Vec<Vec<String>> = (0..k)
            .map(|c| (0..per).map(|j| concept_word(c, j, per)).collect())
            .collect();
        let sentences = vocab
            .iter()
            .map(|words| (0..world.sentence_len).map(|_| draw_token(&mut rng, words)).collect())
            .collect();

        let mut table = EmbeddingTable::new(TEXT_EMBED_DIM);
        let mut all_words: Vec<&str> = STOP_WORDS.iter().chain(&DISTRACTOR_WORDS).copied().collect();
        all_words.extend(vocab.iter().flatten().map(String::as_str));
        for w in all_words {
            let v: Vec<f32> = (0..TEXT_EMBED_DIM)
                .map(|_| StandardNormal.sample(&mut rng))
                .map(|x: f64| x as f32)
                .collect();
            table.insert(w, &v)?;
        }
        Ok(SyntheticCorpus {
            n,
            images,
            sounds,
            sentences,
            vocab,
            table,
            stopwords: STOP_WORDS.iter().map(|s| s.to_string()).collect(),
            world,
        })
    }

    pub fn world(&self) -> &SyntheticWorld {
        &self.world
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn concept(&self, index: usize) -> usize {
        index % self.world.concepts
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.concept(i)).collect()
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }

    pub fn image_prototype(&self, concept: usize) -> &Tensor {
        &self.images[concept]
    }

    fn rng(&self, index: usize, modality: Modality) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.world.seed);
        rng.set_stream(((index as u64) << 2) | modality.code());
        rng
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.n {
            return Err(CoreError::data(format!("synthetic index {index} out of range (n = {})", self.n)));
        }
        Ok(())
    }

    /// Raw image (before mean subtraction).
    pub fn raw_image(&self, index: usize) -> Result<Tensor> {
        self.check_index(index)?;
        let proto = &self.images[self.concept(index)];
        Ok(with_noise(proto, self.world.image_noise, &mut self.rng(index, Modality::Image)))
    }

    /// Raw spectrogram (before mean subtraction), rounded to `f32` precision
    /// so that in-memory and on-disk samples agree exactly.
    pub fn raw_sound(&self, index: usize) -> Result<Tensor> {
        self.check_index(index)?;
        let proto = &self.sounds[self.concept(index)];
        let t = with_noise(proto, self.world.sound_noise, &mut self.rng(index, Modality::Sound));
        Ok(t.map(|v| v as f32 as f64))
    }

    /// Tokens of the sentence for triple `index`.
    pub fn tokens(&self, index: usize) -> Result<Vec<String>> {
        self.check_index(index)?;
        let c = self.concept(index);
        let mut rng = self.rng(index, Modality::Text);
        Ok(self.sentences[c]
            .iter()
            .map(|tok| {
                if rng.random::<f64>() < self.world.text_noise {
                    draw_token(&mut rng, &self.vocab[c])
                } else {
                    tok.clone()
                }
            })
            .collect())
    }

    pub fn sample(&self, index: usize, modality: Modality) -> Result<Sample> {
        let id = sample_id(index, modality);
        match modality {
            Modality::Image => Ok(Sample::new(id, modality, self.raw_image(index)?)?.mean_subtracted()),
            Modality::Sound => Ok(Sample::new(id, modality, self.raw_sound(index)?)?.mean_subtracted()),
            Modality::Text => embed_text(&id, &self.tokens(index)?, &self.table, &self.stopwords),
        }
    }

    /// Smoothed one-hot teacher rows keyed by image sample id.
    pub fn teacher(&self) -> Result<TeacherTargets> {
        let dim = self.world.output_dim;
        let mut t = TeacherTargets::new(dim);
        for i in 0..self.n {
            let mut row = vec![TEACHER_SMOOTHING / dim as f64; dim];
            row[self.concept(i)] += 1.0 - TEACHER_SMOOTHING;
            t.insert(&sample_id(i, Modality::Image), row)?;
        }
        Ok(t)
    }

    /// Manifest-style index over all triples; `paths` holds the file name
    /// each sample would be written to.
    pub fn index(&self, splits: Option<&Splits>) -> Result<DatasetIndex> {
        let mut rows = Vec::with_capacity(3 * self.n);
        for i in 0..self.n {
            let pid = pair_id(i);
            let split = splits
                .map(|s| s.split_of(&pid).unwrap_or("unassigned"))
                .unwrap_or("train");
            for m in Modality::ALL {
                let id = sample_id(i, m);
                let ext = match m {
                    Modality::Image => "tnsr",
                    Modality::Sound => "spec",
                    Modality::Text => "txt",
                };
                rows.push(ManifestRow {
                    path: format!("samples/{id}.{ext}"),
                    id,
                    modality: m,
                    pair_id: pid.clone(),
                    split: split.to_string(),
                });
            }
        }
        let labels: BTreeMap<String, usize> = (0..self.n).map(|i| (pair_id(i), self.concept(i))).collect();
        Ok(DatasetIndex {
            rows,
            teacher: Some(self.teacher()?),
            labels: Some(labels),
        })
    }
}

impl SyntheticCorpus {
    /// Writes every sample plus `manifest.csv` and its sibling files under
    /// `dir`, returning the written paths relative to `dir`.
    pub fn write_dataset(&self, dir: &Path, splits: Option<&Splits>) -> Result<Vec<PathBuf>> {
        let index = self.index(splits)?;
        std::fs::create_dir_all(dir.join("samples")).at(dir)?;
        let mut written = Vec::with_capacity(index.rows.len() + 5);
        for (i, row) in index.rows.iter().enumerate() {
            let path = dir.join(&row.path);
            let n = i / 3;
            match row.modality {
                Modality::Image => save_image(&path, &self.raw_image(n)?)?,
                Modality::Sound => save_spectrogram(&path, &self.raw_sound(n)?)?,
                Modality::Text => std::fs::write(&path, self.tokens(n)?.join(" ") + "\n").at(&path)?,
            }
            written.push(PathBuf::from(&row.path));
        }
        write_manifest(&dir.join(MANIFEST_FILE), &index.rows)?;
        if let Some(t) = &index.teacher {
            t.write_csv(&dir.join(TEACHER_FILE))?;
        }
        if let Some(l) = &index.labels {
            write_labels(&dir.join(LABELS_FILE), l)?;
        }
        self.table.save(&dir.join(EMBEDDINGS_FILE))?;
        save_stopwords(&dir.join(STOPWORDS_FILE), &self.stopwords)?;
        written.extend([MANIFEST_FILE, TEACHER_FILE, LABELS_FILE, EMBEDDINGS_FILE, STOPWORDS_FILE].map(PathBuf::from));
        Ok(written)
    }
}

impl SampleSource for SyntheticCorpus {
    fn load(&self, id: &str, modality: Modality) -> Result<Sample> {
        match parse_sample_id(id) {
            Some((index, m)) if m == modality => self.sample(index, modality),
            _ => Err(CoreError::data(format!("{id} is not a synthetic {modality} sample id"))),
        }
    }
}

fn with_noise(proto: &Tensor, sigma: f64, rng: &mut ChaCha8Rng) -> Tensor {
    if sigma == 0.0 {
        return proto.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut t = proto.clone();
    for v in t.data_mut() {
        *v += normal.sample(rng);
    }
    t
}

/// Three Gaussian blobs with random centers, radii and colors.
fn blob_prototype(rng: &mut ChaCha8Rng, size: usize) -> Result<Tensor> {
    let mut data = vec![0.0; IMAGE_CHANNELS * size * size];
    let s = size as f64;
    for _ in 0..3 {
        let cx = rng.random_range(0.15 * s..0.85 * s);
        let cy = rng.random_range(0.15 * s..0.85 * s);
        let r = rng.random_range(0.1 * s..0.22 * s);
        let color: [f64; IMAGE_CHANNELS] = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
        for y in 0..size {
            for x in 0..size {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let w = (-d2 / (2.0 * r * r)).exp();
                for (c, &col) in color.iter().enumerate() {
                    data[(c * size + y) * size + x] += col * w;
                }
            }
        }
    }
    Ok(Tensor::new(vec![IMAGE_CHANNELS, size, size], data)?)
}

/// Harmonics of `f0` (frequency bins) with a slow concept-specific
/// amplitude modulation over time.
fn harmonic_prototype(rng: &mut ChaCha8Rng, f0: usize) -> Result<Tensor> {
    let rate = rng.random_range(1.0..6.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let mut data = vec![0.0; SOUND_CHANNELS * SOUND_FRAMES];
    for h in 1..=4 {
        let centre = (h * f0) as f64;
        if centre >= SOUND_CHANNELS as f64 {
            break;
        }
        let amp = 2.0 / h as f64;
        for ch in 0..SOUND_CHANNELS {
            let spread = (-(ch as f64 - centre).powi(2) / 2.0).exp();
            if spread < 1e-6 {
                continue;
            }
            for t in 0..SOUND_FRAMES {
                let env = 0.6 + 0.4 * (2.0 * PI * rate * t as f64 / SOUND_FRAMES as f64 + phase).sin();
                data[ch * SOUND_FRAMES + t] += amp * spread * env;
            }
        }
    }
    Ok(Tensor::new(vec![SOUND_CHANNELS, SOUND_FRAMES], data)?)
}

/// Half concept words, a quarter stop words, a quarter shared distractors.
fn draw_token(rng: &mut ChaCha8Rng, words: &[String]) -> String {
    let u: f64 = rng.random();
    if u < 0.5 {
        words[rng.random_range(0..words.len())].clone()
    } else if u < 0.75 {
        STOP_WORDS[rng.random_range(0..STOP_WORDS.len())].to_string()
    } else {
        DISTRACTOR_WORDS[rng.random_range(0..DISTRACTOR_WORDS.len())].to_string()
    }
}
