//! In-memory image store and deterministic batch scheduling. One epoch is
//! a shuffled pass over the unlabeled set; the labeled set is smaller and
//! cycles with reshuffling so every step sees a full labeled batch. All
//! per-sample augmentation seeds are derived by counter mixing, so the
//! random stream a sample sees does not depend on batch size or on how
//! many other samples were processed first.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use selfens_core::augment::{self, AugmentSpec, Image};
use selfens_core::tensor::Tensor;

use crate::error::{Error, Result};
use crate::manifest::Manifest;

/// All referenced images preloaded and resized to the augmentation
/// source geometry.
pub struct ImageStore {
    images: BTreeMap<usize, Image>,
    pub labels: Vec<Option<usize>>,
    pub num_classes: usize,
}

impl ImageStore {
    /// Load the records named by `indices`, resizing each to
    /// `source_size`.
    pub fn load(manifest: &Manifest, indices: &[usize], spec: &AugmentSpec) -> Result<Self> {
        let (sw, sh) = spec.source_size;
        let mut images = BTreeMap::new();
        for &i in indices {
            if images.contains_key(&i) {
                continue;
            }
            let img = crate::imageio::load_image(&manifest.image_path(i))?;
            images.insert(i, augment::resize(&img, sw, sh));
        }
        Ok(ImageStore {
            images,
            labels: manifest.records.iter().map(|r| r.label).collect(),
            num_classes: manifest.classes.len(),
        })
    }

    pub fn image(&self, idx: usize) -> &Image {
        &self.images[&idx]
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// splitmix64 finalizer, used to derive independent seeds from
/// (stream seed, epoch, role, counter) without any stateful rng.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, epoch: u64, role: u64, counter: u64) -> u64 {
    mix(mix(mix(mix(base) ^ epoch) ^ role.wrapping_mul(0x517cc1b727220a95)) ^ counter)
}

const ROLE_LABELED_ORDER: u64 = 1;
const ROLE_UNLABELED_ORDER: u64 = 2;
const ROLE_LABELED_VIEW: u64 = 3;
const ROLE_UNLABELED_VIEW: u64 = 4;

/// One step's worth of work: a labeled batch (images already augmented
/// once, one-hot targets) and optionally the two views of an unlabeled
/// batch.
pub struct StepBatch {
    pub labeled_images: Tensor<f32>,
    pub targets: Tensor<f32>,
    pub unlabeled_views: Option<(Tensor<f32>, Tensor<f32>)>,
}

/// Deterministic schedule for one epoch.
pub struct EpochSchedule {
    labeled_order: Vec<usize>,
    unlabeled_order: Vec<usize>,
    pub steps: usize,
    batch_size: usize,
    epoch: u64,
    seed: u64,
}

impl EpochSchedule {
    /// `labeled` must be non-empty; `unlabeled` may be empty, giving a
    /// supervised-only epoch whose step count comes from the labeled set.
    pub fn new(
        labeled: &[usize],
        unlabeled: &[usize],
        batch_size: usize,
        seed: u64,
        epoch: u64,
    ) -> Result<Self> {
        if labeled.is_empty() {
            return Err(Error::Data("schedule: labeled set is empty".into()));
        }
        if batch_size == 0 {
            return Err(Error::Usage("schedule: batch size must be positive".into()));
        }
        let mut unlabeled_order = unlabeled.to_vec();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch, ROLE_UNLABELED_ORDER, 0));
        unlabeled_order.shuffle(&mut rng);
        let steps = if unlabeled.is_empty() {
            labeled.len().div_ceil(batch_size)
        } else {
            unlabeled.len().div_ceil(batch_size)
        };
        // enough reshuffled labeled passes to cover every step at full batch
        let need = steps * batch_size;
        let mut labeled_order = Vec::with_capacity(need);
        let mut pass = 0u64;
        while labeled_order.len() < need {
            let mut chunk = labeled.to_vec();
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch, ROLE_LABELED_ORDER, pass));
            chunk.shuffle(&mut rng);
            labeled_order.extend(chunk);
            pass += 1;
        }
        labeled_order.truncate(need);
        Ok(EpochSchedule { labeled_order, unlabeled_order, steps, batch_size, epoch, seed })
    }

    /// Materialize the batch for one step: augment each labeled image
    /// once and each unlabeled image twice.
    pub fn step_batch(
        &self,
        store: &ImageStore,
        spec: &AugmentSpec,
        step: usize,
    ) -> Result<StepBatch> {
        assert!(step < self.steps);
        let (cw, ch) = spec.crop_size;
        let lab = &self.labeled_order[step * self.batch_size..(step + 1) * self.batch_size];
        let mut pixels = Vec::with_capacity(lab.len() * cw * ch);
        let mut targets = vec![0.0f32; lab.len() * store.num_classes];
        for (bi, &i) in lab.iter().enumerate() {
            let s = derive_seed(self.seed, self.epoch, ROLE_LABELED_VIEW, i as u64);
            let t = augment::augment_once(
                store.image(i),
                spec,
                &mut ChaCha8Rng::seed_from_u64(s),
            )?;
            pixels.extend_from_slice(t.data());
            let label = store.labels[i]
                .ok_or_else(|| Error::Data(format!("record {i} scheduled as labeled but has no label")))?;
            targets[bi * store.num_classes + label] = 1.0;
        }
        let labeled_images = Tensor::new(&[lab.len(), 1, ch, cw], pixels)?;
        let targets = Tensor::new(&[lab.len(), store.num_classes], targets)?;

        let unlabeled_views = if self.unlabeled_order.is_empty() {
            None
        } else {
            let lo = step * self.batch_size;
            let hi = ((step + 1) * self.batch_size).min(self.unlabeled_order.len());
            let unl = &self.unlabeled_order[lo..hi];
            let mut p1 = Vec::with_capacity(unl.len() * cw * ch);
            let mut p2 = Vec::with_capacity(unl.len() * cw * ch);
            for &i in unl {
                let s1 = derive_seed(self.seed, self.epoch, ROLE_UNLABELED_VIEW, 2 * i as u64);
                let s2 = derive_seed(self.seed, self.epoch, ROLE_UNLABELED_VIEW, 2 * i as u64 + 1);
                let (v1, v2) = augment::perturb_pair_seeded(store.image(i), spec, s1, s2)?;
                p1.extend_from_slice(v1.data());
                p2.extend_from_slice(v2.data());
            }
            Some((
                Tensor::new(&[unl.len(), 1, ch, cw], p1)?,
                Tensor::new(&[unl.len(), 1, ch, cw], p2)?,
            ))
        };
        Ok(StepBatch { labeled_images, targets, unlabeled_views })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(n: usize) -> ImageStore {
        let mut images = BTreeMap::new();
        for i in 0..n {
            images.insert(i, Image::constant(40, 40, 1, i as f32 / n as f32));
        }
        ImageStore {
            images,
            labels: (0..n).map(|i| Some(i % 2)).collect(),
            num_classes: 2,
        }
    }

    #[test]
    fn schedule_is_deterministic_per_epoch_and_varies_across_epochs() {
        let labeled: Vec<usize> = (0..6).collect();
        let unlabeled: Vec<usize> = (6..30).collect();
        let a = EpochSchedule::new(&labeled, &unlabeled, 4, 42, 0).unwrap();
        let b = EpochSchedule::new(&labeled, &unlabeled, 4, 42, 0).unwrap();
        assert_eq!(a.unlabeled_order, b.unlabeled_order);
        assert_eq!(a.labeled_order, b.labeled_order);
        let c = EpochSchedule::new(&labeled, &unlabeled, 4, 42, 1).unwrap();
        assert_ne!(a.unlabeled_order, c.unlabeled_order);
        assert_eq!(a.steps, 6);
    }

    #[test]
    fn every_unlabeled_sample_appears_once_per_epoch() {
        let labeled: Vec<usize> = (0..3).collect();
        let unlabeled: Vec<usize> = (3..20).collect();
        let sched = EpochSchedule::new(&labeled, &unlabeled, 8, 1, 5).unwrap();
        let mut seen: Vec<usize> = sched.unlabeled_order.clone();
        seen.sort_unstable();
        assert_eq!(seen, unlabeled);
        assert_eq!(sched.steps, 3);
    }

    #[test]
    fn labeled_batches_are_always_full() {
        let labeled: Vec<usize> = (0..3).collect();
        let unlabeled: Vec<usize> = (3..43).collect();
        let st = store(43);
        let spec = AugmentSpec::with_geometry(40, 32);
        let sched = EpochSchedule::new(&labeled, &unlabeled, 8, 9, 0).unwrap();
        for step in 0..sched.steps {
            let b = sched.step_batch(&st, &spec, step).unwrap();
            assert_eq!(b.labeled_images.shape()[0], 8);
            assert_eq!(b.targets.shape(), &[8, 2]);
        }
        // last unlabeled batch is the remainder
        let last = sched.step_batch(&st, &spec, sched.steps - 1).unwrap();
        assert_eq!(last.unlabeled_views.unwrap().0.shape()[0], 40 - 4 * 8);
    }

    #[test]
    fn supervised_only_schedule_has_no_views() {
        let labeled: Vec<usize> = (0..10).collect();
        let st = store(10);
        let spec = AugmentSpec::degenerate(40, 32);
        let sched = EpochSchedule::new(&labeled, &[], 4, 2, 0).unwrap();
        assert_eq!(sched.steps, 3);
        let b = sched.step_batch(&st, &spec, 0).unwrap();
        assert!(b.unlabeled_views.is_none());
    }

    #[test]
    fn sample_seed_independent_of_batch_size() {
        // the same unlabeled sample gets the same view pair whatever the
        // batch size, so runs differ only through grouping
        let labeled: Vec<usize> = (0..2).collect();
        let unlabeled: Vec<usize> = (2..18).collect();
        let st = store(18);
        let spec = AugmentSpec::with_geometry(40, 32);
        let collect = |bs: usize| {
            let sched = EpochSchedule::new(&labeled, &unlabeled, bs, 7, 0).unwrap();
            let mut by_sample = BTreeMap::new();
            for step in 0..sched.steps {
                let lo = step * bs;
                let hi = ((step + 1) * bs).min(sched.unlabeled_order.len());
                let b = sched.step_batch(&st, &spec, step).unwrap();
                let (v1, _) = b.unlabeled_views.unwrap();
                let n = 32 * 32;
                for (k, &i) in sched.unlabeled_order[lo..hi].iter().enumerate() {
                    by_sample.insert(i, v1.data()[k * n..(k + 1) * n].to_vec());
                }
            }
            by_sample
        };
        assert_eq!(collect(4), collect(8));
    }
}
