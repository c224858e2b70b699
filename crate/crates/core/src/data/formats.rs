//! Binary and text file formats for spectrograms, images, embedding
//! tables and stop-word lists.
//!
//! All binary formats are little-endian.
//!
//! * Spectrogram: `SPEC`, `u32` channels (257), `u32` frames (500), then
//!   `f32` values channel-major.
//! * Embedding table: `EMBT`, `u32` vocabulary size, `u32` dimension (300),
//!   then per word a `u32` byte length, the UTF-8 bytes and `dim` `f32`s.
//! * Images use the tensor file format (`TNSR`) with shape `C×H×W`.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use aligned_tensor::Tensor;

use super::sample::{Modality, Sample, SOUND_CHANNELS, SOUND_FRAMES, TEXT_EMBED_DIM};
use crate::error::{CoreError, IoContext, Result};

pub const SPEC_MAGIC: &[u8; 4] = b"SPEC";
pub const EMBT_MAGIC: &[u8; 4] = b"EMBT";

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| CoreError::data(format!("{what}: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|e| CoreError::data(format!("{what}: truncated payload ({e})")))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn check_magic<R: Read>(r: &mut R, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)
        .map_err(|e| CoreError::data(format!("{what}: {e}")))?;
    if &m != magic {
        return Err(CoreError::data(format!(
            "{what}: bad magic {m:?}, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

// ── spectrograms ─────────────────────────────────────────────────────

/// Writes a 257×500 spectrogram; values are stored as `f32`.
pub fn write_spectrogram<W: Write>(mut w: W, values: &Tensor) -> Result<()> {
    if values.shape() != [SOUND_CHANNELS, SOUND_FRAMES] {
        return Err(CoreError::data(format!(
            "spectrogram must be {SOUND_CHANNELS}x{SOUND_FRAMES}, got {:?}",
            values.shape()
        )));
    }
    let mut buf = Vec::with_capacity(12 + values.len() * 4);
    buf.extend_from_slice(SPEC_MAGIC);
    buf.extend((SOUND_CHANNELS as u32).to_le_bytes());
    buf.extend((SOUND_FRAMES as u32).to_le_bytes());
    for &v in values.data() {
        buf.extend((v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| CoreError::data(e.to_string()))
}

/// Reads the raw (not mean-subtracted) spectrogram values.
pub fn read_spectrogram<R: Read>(mut r: R) -> Result<Tensor> {
    check_magic(&mut r, SPEC_MAGIC, "spectrogram")?;
    let channels = read_u32(&mut r, "spectrogram")? as usize;
    let frames = read_u32(&mut r, "spectrogram")? as usize;
    if channels != SOUND_CHANNELS {
        return Err(CoreError::data(format!(
            "spectrogram has {channels} channels, expected {SOUND_CHANNELS}"
        )));
    }
    if frames != SOUND_FRAMES {
        return Err(CoreError::data(format!(
            "spectrogram has {frames} frames, expected {SOUND_FRAMES}"
        )));
    }
    let values = read_f32s(&mut r, channels * frames, "spectrogram")?;
    Ok(Tensor::new(
        vec![channels, frames],
        values.into_iter().map(f64::from).collect(),
    )?)
}

pub fn save_spectrogram(path: &Path, values: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).at(path)?);
    write_spectrogram(&mut w, values)?;
    w.flush().at(path)
}

/// Loads a spectrogram file as a mean-subtracted sound sample.
pub fn load_spectrogram(path: &Path, id: &str) -> Result<Sample> {
    let f = File::open(path).at(path)?;
    let t = read_spectrogram(BufReader::new(f))
        .map_err(|e| CoreError::data(format!("{}: {e}", path.display())))?;
    Ok(Sample::new(id, Modality::Sound, t)?.mean_subtracted())
}

// ── images ───────────────────────────────────────────────────────────

pub fn save_image(path: &Path, values: &Tensor) -> Result<()> {
    super::sample::check_payload_shape(Modality::Image, values.shape())?;
    values
        .save(path)
        .map_err(|e| CoreError::data(format!("{}: {e}", path.display())))
}

/// Loads a `C×H×W` tensor file as a mean-subtracted image sample.
pub fn load_image(path: &Path, id: &str) -> Result<Sample> {
    let t = Tensor::load(path).map_err(|e| CoreError::data(format!("{}: {e}", path.display())))?;
    Ok(Sample::new(id, Modality::Image, t)?.mean_subtracted())
}

// ── embedding tables ─────────────────────────────────────────────────

/// Frozen word → vector lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn insert(&mut self, word: &str, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(CoreError::data(format!(
                "vector for {word:?} has {} entries, table dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if self.index.contains_key(word) {
            return Err(CoreError::data(format!("duplicate word {word:?} in embedding table")));
        }
        self.index.insert(word.to_string(), self.words.len());
        self.words.push(word.to_string());
        self.vectors.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index
            .get(word)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(EMBT_MAGIC);
        buf.extend((self.words.len() as u32).to_le_bytes());
        buf.extend((self.dim as u32).to_le_bytes());
        for (i, word) in self.words.iter().enumerate() {
            buf.extend((word.len() as u32).to_le_bytes());
            buf.extend_from_slice(word.as_bytes());
            for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                buf.extend(v.to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(|e| CoreError::data(e.to_string()))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        check_magic(&mut r, EMBT_MAGIC, "embedding table")?;
        let vocab = read_u32(&mut r, "embedding table")? as usize;
        let dim = read_u32(&mut r, "embedding table")? as usize;
        if dim != TEXT_EMBED_DIM {
            return Err(CoreError::data(format!(
                "embedding table has dimension {dim}, expected {TEXT_EMBED_DIM}"
            )));
        }
        let mut table = EmbeddingTable::new(dim);
        for k in 0..vocab {
            let len = read_u32(&mut r, "embedding table")? as usize;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes)
                .map_err(|e| CoreError::data(format!("embedding table record {k}: {e}")))?;
            let word = String::from_utf8(bytes)
                .map_err(|_| CoreError::data(format!("embedding table record {k}: invalid UTF-8")))?;
            let v = read_f32s(&mut r, dim, "embedding table")?;
            table.insert(&word, &v)?;
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).at(path)?);
        self.write_to(&mut w)?;
        w.flush().at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).at(path)?;
        Self::read_from(BufReader::new(f))
            .map_err(|e| CoreError::data(format!("{}: {e}", path.display())))
    }
}

// ── stop words ───────────────────────────────────────────────────────

pub fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    Ok(parse_stopwords(&std::fs::read_to_string(path).at(path)?))
}

pub fn save_stopwords(path: &Path, words: &BTreeSet<String>) -> Result<()> {
    let mut text = String::new();
    for w in words {
        text.push_str(w);
        text.push('\n');
    }
    std::fs::write(path, text).at(path)
}
