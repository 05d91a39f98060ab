use crate::data::{Dataset, VideoClip};
use crate::error::{Error, Result};
use crate::network::ClipInput;
use crate::tensor::{Real, Tensor};

/// Per-channel mean and population standard deviation of the 3 color and
/// 2 flow channels, measured on the training split only.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 5],
    pub std: [f64; 5],
}

impl ChannelStats {
    pub fn identity() -> Self {
        ChannelStats { mean: [0.0; 5], std: [1.0; 5] }
    }

    pub fn compute(train: &Dataset) -> Result<Self> {
        Self::from_clips(train.clips.iter())
    }

    pub fn from_clips<'a>(clips: impl Iterator<Item = &'a VideoClip> + Clone) -> Result<Self> {
        let mut sum = [0f64; 5];
        let mut count = 0usize;
        for c in clips.clone() {
            for px in c.frames.chunks_exact(3) {
                for ch in 0..3 {
                    sum[ch] += px[ch] as f64;
                }
            }
            for px in c.flow.chunks_exact(2) {
                sum[3] += px[0] as f64;
                sum[4] += px[1] as f64;
            }
            count += c.pixels() * c.len();
        }
        if count == 0 {
            return Err(Error::Data("cannot compute channel statistics of an empty training set".into()));
        }
        let n = count as f64;
        let mean = sum.map(|s| s / n);
        let mut sq = [0f64; 5];
        for c in clips {
            for px in c.frames.chunks_exact(3) {
                for ch in 0..3 {
                    sq[ch] += (px[ch] as f64 - mean[ch]).powi(2);
                }
            }
            for px in c.flow.chunks_exact(2) {
                sq[3] += (px[0] as f64 - mean[3]).powi(2);
                sq[4] += (px[1] as f64 - mean[4]).powi(2);
            }
        }
        let std = sq.map(|s| (s / n).sqrt());
        if let Some(ch) = std.iter().position(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::Data(format!("channel {ch} has zero variance over the training set")));
        }
        Ok(ChannelStats { mean, std })
    }

    /// Converts a clip to normalized network input.
    pub fn normalize<T: Real>(&self, clip: &VideoClip) -> Result<ClipInput<T>> {
        let (h, w) = (clip.height, clip.width);
        let mut frames = Vec::with_capacity(clip.len());
        let mut flows = Vec::with_capacity(clip.len());
        for t in 0..clip.len() {
            let f = clip.frame(t).iter().enumerate().map(|(i, &v)| {
                let ch = i % 3;
                T::c((v as f64 - self.mean[ch]) / self.std[ch])
            });
            frames.push(Tensor::new([h, w, 3], f.collect())?);
            let o = clip.flow_at(t).iter().enumerate().map(|(i, &v)| {
                let ch = 3 + i % 2;
                T::c((v as f64 - self.mean[ch]) / self.std[ch])
            });
            flows.push(Tensor::new([h, w, 2], o.collect())?);
        }
        Ok(ClipInput { frames, flows })
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        (0..5)
            .flat_map(|c| {
                [
                    (format!("stats.mean.{c}"), self.mean[c].to_string()),
                    (format!("stats.std.{c}"), self.std[c].to_string()),
                ]
            })
            .collect()
    }
}
