use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{SampleSource, TrainingPair};
use super::sample::{Modality, PairType, PairedBatch};
use super::teacher::TeacherTargets;
use crate::error::{CoreError, Result};

/// Deterministic batch schedule over training pairs.
///
/// Pair types alternate strictly (image+sound first) whenever both are
/// present. Each type's pairs are reshuffled every epoch with a seed
/// derived from `(seed, type, epoch)` and cut into `ceil(n / batch_size)`
/// near-equal batches. The batch at any step is a pure function of the
/// step index, so a resumed run sees exactly the batches an unbroken run
/// would have seen.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    seed: u64,
    lanes: Vec<(PairType, Vec<usize>)>,
    batch_size: usize,
}

impl BatchPlan {
    pub fn new(pairs: &[TrainingPair], batch_size: usize, seed: u64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(CoreError::config("no training pairs"));
        }
        if batch_size < 2 {
            return Err(CoreError::config("batch_size must be at least 2"));
        }
        let mut lanes = Vec::new();
        for pt in PairType::ALL {
            let idx: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].pair_type == pt).collect();
            if idx.is_empty() {
                continue;
            }
            if batch_size > idx.len() {
                return Err(CoreError::config(format!(
                    "batch_size {batch_size} exceeds the {} {pt} pairs",
                    idx.len()
                )));
            }
            lanes.push((pt, idx));
        }
        Ok(BatchPlan {
            seed,
            lanes,
            batch_size,
        })
    }

    pub fn pair_types(&self) -> Vec<PairType> {
        self.lanes.iter().map(|(pt, _)| *pt).collect()
    }

    /// Batches per epoch for each pair type.
    pub fn batches_per_epoch(&self, pair_type: PairType) -> Option<usize> {
        self.lanes
            .iter()
            .find(|(pt, _)| *pt == pair_type)
            .map(|(_, idx)| idx.len().div_ceil(self.batch_size))
    }

    /// Pair type and pair indices of the batch at `step`.
    pub fn batch(&self, step: usize) -> (PairType, Vec<usize>) {
        let lanes = self.lanes.len();
        let (pt, idx) = &self.lanes[step % lanes];
        let local = step / lanes;
        let n = idx.len();
        let per_epoch = n.div_ceil(self.batch_size);
        let (epoch, chunk) = (local / per_epoch, local % per_epoch);
        let mut order = idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((pt.code() << 48) | epoch as u64);
        order.shuffle(&mut rng);
        let (lo, hi) = (chunk * n / per_epoch, (chunk + 1) * n / per_epoch);
        (*pt, order[lo..hi].to_vec())
    }

    /// Loads the batch at `step`, attaching teacher rows when available.
    pub fn load(
        &self,
        step: usize,
        pairs: &[TrainingPair],
        source: &dyn SampleSource,
        teacher: Option<&TeacherTargets>,
    ) -> Result<PairedBatch> {
        let (pt, idx) = self.batch(step);
        let images: Vec<String> = idx.iter().map(|&i| pairs[i].image.clone()).collect();
        let partners: Vec<String> = idx.iter().map(|&i| pairs[i].partner.clone()).collect();
        let teacher_rows = teacher.map(|t| t.rows_for(&images)).transpose()?;
        PairedBatch::new(
            pt,
            source.load_many(&images, Modality::Image)?,
            source.load_many(&partners, pt.partner())?,
            teacher_rows,
        )
    }

    /// Iterator over loaded batches for steps `start..`.
    pub fn iter<'a>(
        &'a self,
        start: usize,
        pairs: &'a [TrainingPair],
        source: &'a dyn SampleSource,
        teacher: Option<&'a TeacherTargets>,
    ) -> impl Iterator<Item = Result<PairedBatch>> + 'a {
        (start..).map(move |s| self.load(s, pairs, source, teacher))
    }
}
