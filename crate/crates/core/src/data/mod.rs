//! Synthetic two-camera video data, its on-disk layout, and identity splits.

mod clip;
mod io;
mod synthetic;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use clip::{label, VideoClip};
pub(crate) use io::{field, parse_kv};
pub use io::{load_dataset, save_dataset};
pub use synthetic::{
    generate_dataset, generate_with_cameras, ground_truth_gate, sub_seed, warp_violations, CameraModel, GateMask,
    GeneratorConfig, SyntheticIdentity,
};

use crate::error::{Error, Result};

/// A set of clips sharing one frame geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub clips: Vec<VideoClip>,
}

impl Dataset {
    /// Sorted distinct person ids.
    pub fn identities(&self) -> Vec<usize> {
        self.clips.iter().map(|c| c.person_id).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// First clip of `person` under `camera`.
    pub fn clip(&self, person: usize, camera: usize) -> Option<&VideoClip> {
        self.clips.iter().find(|c| c.person_id == person && c.camera_id == camera)
    }

    pub fn clips_of(&self, person: usize, camera: usize) -> impl Iterator<Item = &VideoClip> {
        self.clips.iter().filter(move |c| c.person_id == person && c.camera_id == camera)
    }

    /// Keeps only clips of the given identities.
    pub fn subset(&self, ids: &BTreeSet<usize>) -> Dataset {
        Dataset {
            height: self.height,
            width: self.width,
            clips: self.clips.iter().filter(|c| ids.contains(&c.person_id)).cloned().collect(),
        }
    }
}

/// Splits by identity: `round(n * fraction)` identities (at least one on
/// each side) go to the training side, chosen by a seeded shuffle.
pub fn train_test_split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut ids = dataset.identities();
    if ids.len() < 2 {
        return Err(Error::Data(format!("need at least 2 identities to split, found {}", ids.len())));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("split fraction must lie in [0, 1], got {fraction}")));
    }
    let n_train = ((ids.len() as f64 * fraction).round() as usize).clamp(1, ids.len() - 1);
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train: BTreeSet<usize> = ids[..n_train].iter().copied().collect();
    let test: BTreeSet<usize> = ids[n_train..].iter().copied().collect();
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(n: usize) -> Dataset {
        generate_dataset(&GeneratorConfig { num_identities: n, frame_count_range: (2, 3), ..Default::default() })
            .unwrap()
    }

    #[test]
    fn half_split_of_ten() {
        let ds = dataset(10);
        let (tr, te) = train_test_split(&ds, 0.5, 3).unwrap();
        assert_eq!(tr.identities().len(), 5);
        assert_eq!(te.identities().len(), 5);
        let a: BTreeSet<_> = tr.identities().into_iter().collect();
        let b: BTreeSet<_> = te.identities().into_iter().collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.union(&b).copied().collect::<Vec<_>>(), ds.identities());
        assert_eq!(tr.clips.len() + te.clips.len(), ds.clips.len());
    }

    #[test]
    fn split_is_seeded() {
        let ds = dataset(10);
        let ids = |s| train_test_split(&ds, 0.5, s).unwrap().0.identities();
        assert_eq!(ids(4), ids(4));
        let distinct: BTreeSet<Vec<usize>> = (0..10).map(ids).collect();
        assert_eq!(distinct.len(), 10);
    }
}
