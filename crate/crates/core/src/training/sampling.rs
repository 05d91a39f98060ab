use rand::Rng;

use crate::data::{Dataset, VideoClip};
use crate::error::{Error, Result};

/// `len` consecutive frames from a uniformly random start, or the whole
/// clip when it is not longer than `len`.
pub fn sample_subsequence<R: Rng + ?Sized>(clip: &VideoClip, len: usize, rng: &mut R) -> Result<VideoClip> {
    if len == 0 {
        return Err(Error::InvalidConfig("subsequence length must be positive".into()));
    }
    if clip.is_empty() {
        return Err(Error::Data("cannot sample from an empty clip".into()));
    }
    let t = clip.len();
    if t <= len {
        return Ok(clip.clone());
    }
    let start = rng.random_range(0..=t - len);
    Ok(clip.subclip(start, len))
}

/// One crop offset and flip decision, shared by every frame of a clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    pub crop_y: usize,
    pub crop_x: usize,
    pub flip: bool,
}

impl Augmentation {
    pub fn draw<R: Rng + ?Sized>(
        frame_hw: (usize, usize),
        crop_hw: (usize, usize),
        flip_probability: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let ((h, w), (ch, cw)) = (frame_hw, crop_hw);
        if ch > h || cw > w {
            return Err(Error::InvalidConfig(format!("crop {ch}x{cw} exceeds frame {h}x{w}")));
        }
        Ok(Augmentation {
            crop_y: rng.random_range(0..=h - ch),
            crop_x: rng.random_range(0..=w - cw),
            flip: rng.random_bool(flip_probability),
        })
    }

    pub fn apply(&self, clip: &VideoClip, crop_hw: (usize, usize)) -> Result<VideoClip> {
        let c = clip.crop(self.crop_y, self.crop_x, crop_hw.0, crop_hw.1)?;
        Ok(if self.flip { c.flip_horizontal() } else { c })
    }
}

/// Random crop and horizontal flip, applied consistently to the clip.
pub fn augment<R: Rng + ?Sized>(
    clip: &VideoClip,
    crop_hw: (usize, usize),
    flip_probability: f64,
    rng: &mut R,
) -> Result<VideoClip> {
    Augmentation::draw((clip.height, clip.width), crop_hw, flip_probability, rng)?.apply(clip, crop_hw)
}

/// A training pair: indices into the dataset's clip list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub same_person: bool,
}

fn pick<R: Rng + ?Sized>(ds: &Dataset, person: usize, camera: usize, rng: &mut R) -> Result<usize> {
    let idx: Vec<usize> = ds
        .clips
        .iter()
        .enumerate()
        .filter(|(_, c)| c.person_id == person && c.camera_id == camera)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(Error::Data(format!("person {person} has no clip from camera {camera}")));
    }
    Ok(idx[rng.random_range(0..idx.len())])
}

/// `positives` same-person cross-camera pairs followed by `negatives`
/// pairs of two distinct persons.
pub fn build_batch<R: Rng + ?Sized>(
    train: &Dataset,
    positives: usize,
    negatives: usize,
    rng: &mut R,
) -> Result<Vec<Pair>> {
    let ids = train.identities();
    if ids.len() < 2 {
        return Err(Error::Data(format!("batches need at least 2 identities, found {}", ids.len())));
    }
    let mut pairs = Vec::with_capacity(positives + negatives);
    for _ in 0..positives {
        let p = ids[rng.random_range(0..ids.len())];
        let (a, b) = (pick(train, p, 0, rng)?, pick(train, p, 1, rng)?);
        let (a, b) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
        pairs.push(Pair { a, b, same_person: true });
    }
    for _ in 0..negatives {
        let i = rng.random_range(0..ids.len());
        let j = (i + rng.random_range(1..ids.len())) % ids.len();
        let a = pick(train, ids[i], rng.random_range(0..2), rng)?;
        let b = pick(train, ids[j], rng.random_range(0..2), rng)?;
        pairs.push(Pair { a, b, same_person: false });
    }
    Ok(pairs)
}
