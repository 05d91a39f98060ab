//! Probe/gallery matching: camera 0 clips are probes, camera 1 clips form
//! the gallery. Each clip is described by 16 features (8 crop offsets, each
//! with and without a horizontal flip) and two clips are compared by the sum
//! of the 16 Euclidean distances.

use std::fmt::Write as _;

use crate::data::{Dataset, VideoClip};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::{Real, Tensor};
use crate::training::ChannelStats;

/// Longest prefix of a test clip fed to the network.
pub const TEST_FRAME_CAP: usize = 128;

/// Eight fixed crop offsets `(dy, dx)`: the four corners and four edge
/// midpoints of the valid offset range.
pub fn crop_offsets(frame_hw: (usize, usize), crop_hw: (usize, usize)) -> Result<[(usize, usize); 8]> {
    let (h, w) = frame_hw;
    let (ch, cw) = crop_hw;
    if ch == 0 || cw == 0 || ch > h || cw > w {
        return Err(Error::InvalidConfig(format!("crop {ch}x{cw} does not fit frame {h}x{w}")));
    }
    let (y, x) = (h - ch, w - cw);
    Ok([(0, 0), (0, x / 2), (0, x), (y / 2, 0), (y / 2, x), (y, 0), (y, x / 2), (y, x)])
}

/// Feature of one deterministic view of a clip.
pub fn extract_test_feature<T: Real>(
    clip: &VideoClip,
    network: &Network<T>,
    stats: &ChannelStats,
    offset: (usize, usize),
    flipped: bool,
) -> Result<Tensor<T>> {
    let (ch, cw) = (network.config.height, network.config.width);
    let mut view = clip.subclip(0, TEST_FRAME_CAP.min(clip.len())).crop(offset.0, offset.1, ch, cw)?;
    if flipped {
        view = view.flip_horizontal();
    }
    let input = stats.normalize::<T>(&view)?;
    Ok(network.infer(&input)?.feature)
}

/// The 16 view features of a clip: offsets in [`crop_offsets`] order, first
/// unflipped, then flipped.
pub fn clip_features<T: Real>(clip: &VideoClip, network: &Network<T>, stats: &ChannelStats) -> Result<Vec<Tensor<T>>> {
    let offsets = crop_offsets((clip.height, clip.width), (network.config.height, network.config.width))?;
    let mut out = Vec::with_capacity(16);
    for flipped in [false, true] {
        for &o in &offsets {
            out.push(extract_test_feature(clip, network, stats, o, flipped)?);
        }
    }
    Ok(out)
}

pub fn euclidean<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x.f64() - y.f64()).powi(2)).sum::<f64>().sqrt()
}

/// Sum of view-wise Euclidean distances between two feature sets.
pub fn multi_crop_distance<T: Real>(a: &[Tensor<T>], b: &[Tensor<T>]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("multi_crop_distance", format!("{} vs {} views", a.len(), b.len())));
    }
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        if x.shape() != y.shape() {
            return Err(Error::shape("multi_crop_distance", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        sum += euclidean(x, y);
    }
    Ok(sum)
}

/// Summed distances between probes (rows) and gallery entries (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub probe_ids: Vec<usize>,
    pub gallery_ids: Vec<usize>,
    /// Row-major, `probe_ids.len() * gallery_ids.len()`.
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(probe_ids: Vec<usize>, gallery_ids: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if values.len() != probe_ids.len() * gallery_ids.len() {
            return Err(Error::shape(
                "distance_matrix",
                format!("{} values for {}x{}", values.len(), probe_ids.len(), gallery_ids.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NonFinite { context: "distance_matrix".into(), detail: format!("entry {v}") });
        }
        Ok(DistanceMatrix { probe_ids, gallery_ids, values })
    }

    /// Pairwise distances between per-item feature sets.
    pub fn from_features<T: Real>(
        probe_ids: Vec<usize>,
        probes: &[Vec<Tensor<T>>],
        gallery_ids: Vec<usize>,
        gallery: &[Vec<Tensor<T>>],
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(probes.len() * gallery.len());
        for p in probes {
            for g in gallery {
                values.push(multi_crop_distance(p, g)?);
            }
        }
        Self::new(probe_ids, gallery_ids, values)
    }

    pub fn get(&self, probe: usize, gallery: usize) -> f64 {
        self.values[probe * self.gallery_ids.len() + gallery]
    }

    /// 1-based rank of the first gallery entry with the probe's identity.
    /// Ties in distance keep gallery order.
    pub fn match_rank(&self, probe: usize) -> Result<usize> {
        let id = self.probe_ids[probe];
        if !self.gallery_ids.contains(&id) {
            return Err(Error::Data(format!("probe identity {id} has no gallery entry")));
        }
        let mut order: Vec<usize> = (0..self.gallery_ids.len()).collect();
        order.sort_by(|&a, &b| self.get(probe, a).total_cmp(&self.get(probe, b)));
        Ok(order.iter().position(|&g| self.gallery_ids[g] == id).unwrap() + 1)
    }
}

/// Entry `m - 1` is the percentage of probes matched within the top `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct CMCCurve {
    pub ranks: Vec<f64>,
}

impl CMCCurve {
    pub fn from_distances(d: &DistanceMatrix) -> Result<Self> {
        if d.probe_ids.is_empty() || d.gallery_ids.is_empty() {
            return Err(Error::Data("CMC needs at least one probe and one gallery entry".into()));
        }
        let mut hits = vec![0usize; d.gallery_ids.len()];
        for p in 0..d.probe_ids.len() {
            hits[d.match_rank(p)? - 1] += 1;
        }
        let n = d.probe_ids.len() as f64;
        let mut acc = 0;
        let ranks = hits
            .iter()
            .map(|h| {
                acc += h;
                100.0 * acc as f64 / n
            })
            .collect();
        Ok(CMCCurve { ranks })
    }

    /// Percentage at rank `m` (1-based); ranks beyond the gallery size
    /// report the final value.
    pub fn rank(&self, m: usize) -> f64 {
        assert!(m >= 1, "ranks start at 1");
        self.ranks[(m - 1).min(self.ranks.len() - 1)]
    }

    pub fn is_monotone(&self) -> bool {
        self.ranks.windows(2).all(|w| w[0] <= w[1]) && self.ranks.iter().all(|r| (0.0..=100.0).contains(r))
    }

    /// Rankwise mean of curves of equal length.
    pub fn mean(curves: &[CMCCurve]) -> Result<Self> {
        let Some(first) = curves.first() else {
            return Err(Error::Data("no curves to average".into()));
        };
        let n = first.ranks.len();
        if curves.iter().any(|c| c.ranks.len() != n) {
            return Err(Error::Data("curves have different lengths".into()));
        }
        let ranks = (0..n).map(|i| curves.iter().map(|c| c.ranks[i]).sum::<f64>() / curves.len() as f64).collect();
        Ok(CMCCurve { ranks })
    }

    /// Tab-separated table with a `rank`, `match_percent` header and one row
    /// per rank.
    pub fn to_table(&self) -> String {
        let mut s = String::from("rank\tmatch_percent\n");
        for (i, r) in self.ranks.iter().enumerate() {
            let _ = writeln!(s, "{}\t{r:.4}", i + 1);
        }
        s
    }

    /// One-line summary at ranks 1, 5, 10 and 20.
    pub fn summary(&self) -> String {
        [1, 5, 10, 20].iter().map(|&m| format!("rank{m}={:.2}", self.rank(m))).collect::<Vec<_>>().join(" ")
    }

    pub fn parse_table(text: &str) -> Result<Self> {
        let mut ranks = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Data(format!("CMC table line {}: malformed", n + 1));
            let (r, v) = line.split_once('\t').ok_or_else(bad)?;
            if r.trim().parse::<usize>().map_err(|_| bad())? != ranks.len() + 1 {
                return Err(bad());
            }
            ranks.push(v.trim().parse::<f64>().map_err(|_| bad())?);
        }
        Ok(CMCCurve { ranks })
    }
}

/// Full evaluation output.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub distances: DistanceMatrix,
    pub cmc: CMCCurve,
}

/// Evaluates a trained network on a test split. Each identity contributes
/// its first camera-0 clip as probe and first camera-1 clip as gallery.
pub fn compute_cmc<T: Real>(test: &Dataset, network: &Network<T>, stats: &ChannelStats) -> Result<Evaluation> {
    let ids = test.identities();
    let mut probe_ids = Vec::new();
    let mut gallery_ids = Vec::new();
    let mut probes = Vec::new();
    let mut gallery = Vec::new();
    for &id in &ids {
        if let Some(c) = test.clip(id, 0) {
            probe_ids.push(id);
            probes.push(clip_features(c, network, stats)?);
        }
        if let Some(c) = test.clip(id, 1) {
            gallery_ids.push(id);
            gallery.push(clip_features(c, network, stats)?);
        }
    }
    if let Some(id) = probe_ids.iter().find(|p| !gallery_ids.contains(p)) {
        return Err(Error::Data(format!("probe identity {id} has no gallery clip")));
    }
    let distances = DistanceMatrix::from_features(probe_ids, &probes, gallery_ids, &gallery)?;
    let cmc = CMCCurve::from_distances(&distances)?;
    Ok(Evaluation { distances, cmc })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_cover_corners_and_midpoints() {
        let o = crop_offsets((64, 32), (56, 28)).unwrap();
        assert_eq!(o, [(0, 0), (0, 2), (0, 4), (4, 0), (4, 4), (8, 0), (8, 2), (8, 4)]);
        assert!(crop_offsets((8, 8), (9, 8)).is_err());
    }

    #[test]
    fn ties_keep_gallery_order() {
        let d = DistanceMatrix::new(vec![1], vec![0, 1, 2], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(d.match_rank(0).unwrap(), 2);
    }

    #[test]
    fn identical_features_give_full_rank_one() {
        let feats: Vec<Vec<Tensor<f64>>> = (0..5).map(|i| vec![Tensor::from_fn([3], |j| (i * 3 + j) as f64)]).collect();
        let ids: Vec<usize> = (0..5).collect();
        let d = DistanceMatrix::from_features(ids.clone(), &feats, ids, &feats).unwrap();
        let c = CMCCurve::from_distances(&d).unwrap();
        assert_eq!(c.ranks, vec![100.0; 5]);
    }

    #[test]
    fn missing_gallery_identity_is_an_error() {
        let d = DistanceMatrix::new(vec![7], vec![0, 1], vec![0.5, 0.2]).unwrap();
        assert!(CMCCurve::from_distances(&d).is_err());
    }

    #[test]
    fn table_round_trip() {
        let c = CMCCurve { ranks: vec![25.0, 50.0, 100.0, 100.0] };
        assert_eq!(CMCCurve::parse_table(&c.to_table()).unwrap(), c);
        assert_eq!(c.rank(20), 100.0);
    }
}
