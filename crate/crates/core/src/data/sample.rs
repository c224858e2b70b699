use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use aligned_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const SOUND_CHANNELS: usize = 257;
pub const SOUND_FRAMES: usize = 500;
pub const TEXT_EMBED_DIM: usize = 300;
pub const TEXT_TOKENS: usize = 16;
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Sound,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Image, Modality::Sound, Modality::Text];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Sound => "sound",
            Modality::Text => "text",
        }
    }

    /// Short tag used in retrieval direction labels such as `img->snd`.
    pub fn short(self) -> &'static str {
        match self {
            Modality::Image => "img",
            Modality::Sound => "snd",
            Modality::Text => "txt",
        }
    }

    pub(crate) fn code(self) -> u64 {
        match self {
            Modality::Image => 0,
            Modality::Sound => 1,
            Modality::Text => 2,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Modality::Image),
            "sound" => Ok(Modality::Sound),
            "text" => Ok(Modality::Text),
            other => Err(CoreError::data(format!("unknown modality {other:?}"))),
        }
    }
}

/// The two supervised pair types. Sound and text are never paired for
/// training, so there is no variant for that combination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairType {
    ImageSound,
    ImageText,
}

impl PairType {
    pub const ALL: [PairType; 2] = [PairType::ImageSound, PairType::ImageText];

    /// The non-vision side of the pair.
    pub fn partner(self) -> Modality {
        match self {
            PairType::ImageSound => Modality::Sound,
            PairType::ImageText => Modality::Text,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairType::ImageSound => "image+sound",
            PairType::ImageText => "image+text",
        }
    }

    pub(crate) fn code(self) -> u64 {
        match self {
            PairType::ImageSound => 0,
            PairType::ImageText => 1,
        }
    }
}

impl fmt::Display for PairType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Checks a per-sample payload shape against the modality contract.
pub fn check_payload_shape(modality: Modality, shape: &[usize]) -> Result<()> {
    let ok = match modality {
        Modality::Sound => shape == [SOUND_CHANNELS, SOUND_FRAMES],
        Modality::Text => shape == [TEXT_EMBED_DIM, TEXT_TOKENS],
        Modality::Image => shape.len() == 3 && shape[0] == IMAGE_CHANNELS,
    };
    if ok {
        Ok(())
    } else {
        let expected = match modality {
            Modality::Sound => format!("{SOUND_CHANNELS}x{SOUND_FRAMES}"),
            Modality::Text => format!("{TEXT_EMBED_DIM}x{TEXT_TOKENS}"),
            Modality::Image => format!("{IMAGE_CHANNELS}xHxW"),
        };
        Err(CoreError::data(format!(
            "{modality} payload has shape {shape:?}, expected {expected}"
        )))
    }
}

/// A single modality-tagged input.
///
/// `processed` records whether mean subtraction has already been applied so
/// that preprocessing is never run twice.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub modality: Modality,
    pub payload: Arc<Tensor>,
    pub processed: bool,
}

impl Sample {
    pub fn new(id: impl Into<String>, modality: Modality, payload: Tensor) -> Result<Self> {
        check_payload_shape(modality, payload.shape())?;
        Ok(Sample {
            id: id.into(),
            modality,
            payload: Arc::new(payload),
            processed: false,
        })
    }

    /// Subtracts the payload mean once; a second call is a no-op.
    pub fn mean_subtracted(mut self) -> Self {
        if !self.processed {
            let t = Arc::make_mut(&mut self.payload);
            subtract_mean(t.data_mut());
            self.processed = true;
        }
        self
    }
}

pub(crate) fn subtract_mean(values: &mut [f64]) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    for v in values {
        *v -= mean;
    }
}

/// A homogeneous batch of synchronized (image, partner) samples.
#[derive(Clone, Debug)]
pub struct PairedBatch {
    pair_type: PairType,
    images: Vec<Sample>,
    partners: Vec<Sample>,
    teacher: Option<Tensor>,
}

impl PairedBatch {
    pub fn new(
        pair_type: PairType,
        images: Vec<Sample>,
        partners: Vec<Sample>,
        teacher: Option<Tensor>,
    ) -> Result<Self> {
        if images.len() != partners.len() {
            return Err(CoreError::Contract(format!(
                "batch has {} images but {} partners",
                images.len(),
                partners.len()
            )));
        }
        if images.is_empty() {
            return Err(CoreError::Contract("empty batch".into()));
        }
        if let Some(s) = images.iter().find(|s| s.modality != Modality::Image) {
            return Err(CoreError::Contract(format!(
                "anchor {} is {}, expected image",
                s.id, s.modality
            )));
        }
        let partner = pair_type.partner();
        if let Some(s) = partners.iter().find(|s| s.modality != partner) {
            return Err(CoreError::Contract(format!(
                "partner {} is {}, expected {partner}",
                s.id, s.modality
            )));
        }
        if let Some(t) = &teacher {
            if t.rank() != 2 || t.shape()[0] != images.len() {
                return Err(CoreError::Contract(format!(
                    "teacher rows {:?} do not match batch of {}",
                    t.shape(),
                    images.len()
                )));
            }
        }
        Ok(PairedBatch {
            pair_type,
            images,
            partners,
            teacher,
        })
    }

    pub fn pair_type(&self) -> PairType {
        self.pair_type
    }

    pub fn images(&self) -> &[Sample] {
        &self.images
    }

    pub fn partners(&self) -> &[Sample] {
        &self.partners
    }

    pub fn teacher(&self) -> Option<&Tensor> {
        self.teacher.as_ref()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Stacks sample payloads into a `B × ...` batch tensor.
pub fn stack_payloads(samples: &[Sample]) -> Result<Tensor> {
    let refs: Vec<&Tensor> = samples.iter().map(|s| s.payload.as_ref()).collect();
    Ok(Tensor::stack(&refs)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_contract_is_enforced() {
        assert!(Sample::new("s", Modality::Sound, Tensor::zeros(&[257, 500])).is_ok());
        assert!(Sample::new("s", Modality::Sound, Tensor::zeros(&[256, 500])).is_err());
        assert!(Sample::new("t", Modality::Text, Tensor::zeros(&[300, 15])).is_err());
        assert!(Sample::new("i", Modality::Image, Tensor::zeros(&[3, 8, 8])).is_ok());
        assert!(Sample::new("i", Modality::Image, Tensor::zeros(&[1, 8, 8])).is_err());
    }

    #[test]
    fn mean_subtraction_runs_once() {
        let t = Tensor::new(vec![3, 1, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = Sample::new("i", Modality::Image, t).unwrap().mean_subtracted();
        let once = s.payload.clone();
        let twice = s.mean_subtracted();
        assert_eq!(once.data(), twice.payload.data());
        assert_eq!(once.data()[0], -2.5);
    }

    #[test]
    fn batch_rejects_wrong_partner_modality() {
        let img = Sample::new("a", Modality::Image, Tensor::zeros(&[3, 2, 2])).unwrap();
        let txt = Sample::new("b", Modality::Text, Tensor::zeros(&[300, 16])).unwrap();
        let err = PairedBatch::new(PairType::ImageSound, vec![img.clone()], vec![txt.clone()], None);
        assert!(err.is_err());
        // A text sample cannot stand in as the anchor either.
        assert!(PairedBatch::new(PairType::ImageText, vec![txt.clone()], vec![txt], None).is_err());
        let ok = PairedBatch::new(
            PairType::ImageSound,
            vec![img],
            vec![Sample::new("c", Modality::Sound, Tensor::zeros(&[257, 500])).unwrap()],
            None,
        );
        assert!(ok.is_ok());
    }
}
