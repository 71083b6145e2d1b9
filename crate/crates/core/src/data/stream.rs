use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{generate_scene, SceneSpec, SegSample};
use super::split::SplitManifest;
use crate::error::{Error, Result};
use crate::labels::{LabelMap, IGNORE_INDEX};
use crate::numerics::Tensor;

/// A batch of images with labels; unlabeled samples carry all-ignore maps.
#[derive(Clone, Debug, PartialEq)]
pub struct SegBatch {
    pub images: Tensor,
    pub labels: LabelMap,
    pub is_labeled: Vec<bool>,
    pub ids: Vec<usize>,
}

impl SegBatch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn from_samples(samples: Vec<SegSample>, ids: Vec<usize>, labeled: bool) -> Result<Self> {
        let images: Vec<Tensor> = samples.iter().map(|s| s.image.clone()).collect();
        let labels: Vec<LabelMap> = samples
            .into_iter()
            .map(|s| if labeled { s.labels } else { LabelMap::filled(s.labels.shape(), IGNORE_INDEX) })
            .collect();
        Ok(SegBatch {
            images: Tensor::stack(&images)?,
            labels: LabelMap::stack(&labels)?,
            is_labeled: vec![labeled; ids.len()],
            ids,
        })
    }
}

/// Geometric augmentation applied identically to image and labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augment {
    pub hflip: bool,
    /// Square random crop side; `None` keeps the full image.
    pub crop: Option<usize>,
}

impl Augment {
    pub const NONE: Augment = Augment { hflip: false, crop: None };

    fn apply<R: Rng>(&self, sample: SegSample, rng: &mut R) -> Result<SegSample> {
        let mut s = sample;
        if let Some(side) = self.crop {
            let [_, _, h, w] = s.image.dims4()?;
            if side > h || side > w {
                return Err(Error::Config(format!("crop {side} larger than image {h}x{w}")));
            }
            let top = rng.gen_range(0..=h - side);
            let left = rng.gen_range(0..=w - side);
            s.image = s.image.crop(top, left, side, side)?;
            let mut data = Vec::with_capacity(side * side);
            for y in top..top + side {
                data.extend_from_slice(&s.labels.data()[y * w + left..y * w + left + side]);
            }
            s.labels = LabelMap::new([1, side, side], data)?;
        }
        if self.hflip && rng.gen_bool(0.5) {
            let [_, c, h, w] = s.image.dims4()?;
            let mut img = s.image.data().to_vec();
            for row in img.chunks_mut(w).take(c * h) {
                row.reverse();
            }
            s.image = Tensor::new(vec![1, c, h, w], img)?;
            let mut lab = s.labels.data().to_vec();
            for row in lab.chunks_mut(w) {
                row.reverse();
            }
            s.labels = LabelMap::new([1, h, w], lab)?;
        }
        Ok(s)
    }
}

/// Synthetic training set of `size` scenes plus a disjoint validation range.
#[derive(Clone, Debug)]
pub struct SceneDataset {
    pub spec: SceneSpec,
    pub size: usize,
}

impl SceneDataset {
    pub fn new(spec: SceneSpec, size: usize) -> Result<Self> {
        spec.validate()?;
        if size == 0 {
            return Err(Error::Config("dataset_size must be >= 1".into()));
        }
        Ok(SceneDataset { spec, size })
    }

    pub fn sample(&self, id: usize) -> SegSample {
        generate_scene(&self.spec, id as u64)
    }

    /// Validation scene `i`, drawn from indices past the training range.
    pub fn val_sample(&self, i: usize) -> SegSample {
        generate_scene(&self.spec, (self.size + i) as u64)
    }
}

/// Position of one cycling id stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cursor {
    pub epoch: u64,
    pub pos: usize,
}

/// Serializable position of a [`BatchStream`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StreamState {
    pub labeled: Cursor,
    pub unlabeled: Cursor,
    pub step: u64,
}

const LABELED_STREAM: u64 = 1;
const UNLABELED_STREAM: u64 = 2;
const AUGMENT_STREAM: u64 = 3;

/// Paired labeled/unlabeled batch source.
///
/// Each pool is reshuffled every epoch with a permutation derived from
/// `(seed, pool, epoch)`, so the whole sequence is reproducible from the
/// seed and a [`StreamState`].
#[derive(Clone, Debug)]
pub struct BatchStream {
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    seed: u64,
    augment: Augment,
    state: StreamState,
    labeled_order: Vec<usize>,
    unlabeled_order: Vec<usize>,
}

fn epoch_order(pool: &[usize], seed: u64, stream: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream << 40) | epoch);
    let mut order = pool.to_vec();
    order.shuffle(&mut rng);
    order
}

impl BatchStream {
    /// The unlabeled pool is every id outside the labeled set, or the whole
    /// dataset when the split labels everything.
    pub fn new(manifest: &SplitManifest, seed: u64, augment: Augment) -> Result<Self> {
        if manifest.labeled_ids.is_empty() {
            return Err(Error::Config("labeled pool is empty".into()));
        }
        let mut unlabeled = manifest.unlabeled_ids();
        if unlabeled.is_empty() {
            unlabeled = (0..manifest.dataset_size).collect();
        }
        let mut stream = BatchStream {
            labeled: manifest.labeled_ids.clone(),
            unlabeled,
            seed,
            augment,
            state: StreamState::default(),
            labeled_order: Vec::new(),
            unlabeled_order: Vec::new(),
        };
        stream.restore(StreamState::default());
        Ok(stream)
    }

    pub fn state(&self) -> StreamState {
        self.state
    }

    pub fn restore(&mut self, state: StreamState) {
        self.state = state;
        self.labeled_order = epoch_order(&self.labeled, self.seed, LABELED_STREAM, state.labeled.epoch);
        self.unlabeled_order = epoch_order(&self.unlabeled, self.seed, UNLABELED_STREAM, state.unlabeled.epoch);
    }

    pub fn unlabeled_pool_len(&self) -> usize {
        self.unlabeled.len()
    }

    /// Completed passes over the unlabeled pool.
    pub fn epoch(&self) -> u64 {
        self.state.unlabeled.epoch
    }

    fn take(pool: &[usize], order: &mut Vec<usize>, cursor: &mut Cursor, seed: u64, stream: u64, n: usize) -> Vec<usize> {
        let mut ids = Vec::with_capacity(n);
        while ids.len() < n {
            if cursor.pos == order.len() {
                cursor.epoch += 1;
                cursor.pos = 0;
                *order = epoch_order(pool, seed, stream, cursor.epoch);
            }
            ids.push(order[cursor.pos]);
            cursor.pos += 1;
        }
        ids
    }

    /// Ids of the next labeled and unlabeled batches, advancing the stream.
    pub fn next_ids(&mut self, batch_size: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let l = Self::take(&self.labeled, &mut self.labeled_order, &mut self.state.labeled, self.seed, LABELED_STREAM, batch_size);
        let u = Self::take(&self.unlabeled, &mut self.unlabeled_order, &mut self.state.unlabeled, self.seed, UNLABELED_STREAM, batch_size);
        self.state.step += 1;
        Ok((l, u))
    }

    /// Next `(labeled, unlabeled)` pair of equal-sized batches.
    pub fn next_batch(&mut self, dataset: &SceneDataset, batch_size: usize) -> Result<(SegBatch, SegBatch)> {
        let step = self.state.step;
        let (l, u) = self.next_ids(batch_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((AUGMENT_STREAM << 40) | step);
        let load = |ids: &[usize], rng: &mut ChaCha8Rng| -> Result<Vec<SegSample>> {
            ids.iter().map(|&id| self.augment.apply(dataset.sample(id), rng)).collect()
        };
        let labeled = load(&l, &mut rng)?;
        let unlabeled = load(&u, &mut rng)?;
        Ok((
            SegBatch::from_samples(labeled, l, true)?,
            SegBatch::from_samples(unlabeled, u, false)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_split;

    fn small_dataset() -> SceneDataset {
        SceneDataset::new(SceneSpec { height: 16, width: 16, ..SceneSpec::default() }, 40).unwrap()
    }

    #[test]
    fn batches_are_paired_and_unlabeled_hides_labels() {
        let ds = small_dataset();
        let split = make_split(ds.size, "1/4", 1).unwrap();
        let mut stream = BatchStream::new(&split, 5, Augment { hflip: true, crop: Some(8) }).unwrap();
        let (l, u) = stream.next_batch(&ds, 8).unwrap();
        assert_eq!(l.len(), 8);
        assert_eq!(u.len(), 8);
        assert_eq!(l.images.shape(), &[8, 3, 8, 8]);
        assert!(l.ids.iter().all(|&i| split.is_labeled(i)));
        assert!(u.ids.iter().all(|&i| !split.is_labeled(i)));
        assert!(u.labels.data().iter().all(|&v| v == IGNORE_INDEX));
        assert!(l.is_labeled.iter().all(|&b| b) && u.is_labeled.iter().all(|&b| !b));
    }

    #[test]
    fn single_labeled_sample_cycles() {
        let split = SplitManifest { dataset_size: 10, labeled_ids: vec![3], ratio_name: "1/10".into(), seed: 0 };
        let mut stream = BatchStream::new(&split, 0, Augment::NONE).unwrap();
        let (l, _) = stream.next_ids(4).unwrap();
        assert_eq!(l, vec![3, 3, 3, 3]);
    }

    #[test]
    fn empty_labeled_pool_is_config_error() {
        let split = SplitManifest { dataset_size: 10, labeled_ids: vec![], ratio_name: "1/10".into(), seed: 0 };
        assert!(matches!(BatchStream::new(&split, 0, Augment::NONE), Err(Error::Config(_))));
    }

    #[test]
    fn replay_is_identical_and_resumable() {
        let split = make_split(100, "1/8", 2).unwrap();
        let mut a = BatchStream::new(&split, 9, Augment::NONE).unwrap();
        let mut b = BatchStream::new(&split, 9, Augment::NONE).unwrap();
        let mut log_a = Vec::new();
        let mut log_b = Vec::new();
        for _ in 0..100 {
            log_a.push(a.next_ids(4).unwrap());
            log_b.push(b.next_ids(4).unwrap());
        }
        assert_eq!(log_a, log_b);

        let saved = a.state();
        let next = a.next_ids(4).unwrap();
        let mut c = BatchStream::new(&split, 9, Augment::NONE).unwrap();
        c.restore(saved);
        assert_eq!(c.next_ids(4).unwrap(), next);
    }

    #[test]
    fn each_epoch_visits_every_unlabeled_id_once() {
        let split = make_split(40, "1/4", 3).unwrap();
        let mut s = BatchStream::new(&split, 1, Augment::NONE).unwrap();
        let mut seen = Vec::new();
        for _ in 0..(30 / 5) {
            seen.extend(s.next_ids(5).unwrap().1);
        }
        seen.sort_unstable();
        assert_eq!(seen, split.unlabeled_ids());
        assert_eq!(s.epoch(), 0);
        s.next_ids(5).unwrap();
        assert_eq!(s.epoch(), 1);
    }

    #[test]
    fn flip_keeps_image_and_labels_aligned() {
        let ds = small_dataset();
        let sample = ds.sample(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // find a draw that flips
        let aug = Augment { hflip: true, crop: None };
        let flipped = loop {
            let s = aug.apply(sample.clone(), &mut rng).unwrap();
            if s != sample {
                break s;
            }
        };
        let w = 16;
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(flipped.labels.data()[y * w + x], sample.labels.data()[y * w + (w - 1 - x)]);
                assert_eq!(flipped.image.data()[y * w + x], sample.image.data()[y * w + (w - 1 - x)]);
            }
        }
    }
}
