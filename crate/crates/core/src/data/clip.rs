use crate::error::{Error, Result};

/// Per-pixel label of the generator's scene layers.
pub mod label {
    pub const BACKGROUND: u8 = 0;
    pub const TORSO: u8 = 1;
    pub const HEAD: u8 = 2;
    pub const LEG_LEFT: u8 = 3;
    pub const LEG_RIGHT: u8 = 4;
    pub const ARM_LEFT: u8 = 5;
    pub const ARM_RIGHT: u8 = 6;
    pub const OCCLUDER: u8 = 10;

    pub fn is_person(l: u8) -> bool {
        (TORSO..=ARM_RIGHT).contains(&l)
    }
}

/// One person seen by one camera: `T` color frames `[H, W, 3]` and
/// optical flow `[H, W, 2]` (channel 0 horizontal, channel 1 vertical).
///
/// `flow[t]` maps frame `t-1` to frame `t`: the pixel at `p` in frame `t`
/// came from `p - flow[t](p)` in frame `t-1`. `flow[0]` is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub person_id: usize,
    pub camera_id: usize,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<f32>,
    pub flow: Vec<f32>,
    /// Scene-layer labels `[T, H, W]` (see [`label`]); empty when unknown.
    pub labels: Vec<u8>,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len() / (self.height * self.width * 3).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        let px = self.pixels();
        let t = self.len();
        if t == 0 || px == 0 {
            return Err(Error::Data(format!("clip of person {} camera {} is empty", self.person_id, self.camera_id)));
        }
        if self.frames.len() != t * px * 3 || self.flow.len() != t * px * 2 {
            return Err(Error::Data(format!(
                "clip of person {} camera {}: frame/flow buffers disagree on length",
                self.person_id, self.camera_id
            )));
        }
        if !self.labels.is_empty() && self.labels.len() != t * px {
            return Err(Error::Data("label buffer length disagrees with frames".into()));
        }
        Ok(())
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.pixels() * 3;
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn flow_at(&self, t: usize) -> &[f32] {
        let n = self.pixels() * 2;
        &self.flow[t * n..(t + 1) * n]
    }

    pub fn labels_at(&self, t: usize) -> Option<&[u8]> {
        if self.labels.is_empty() {
            return None;
        }
        let n = self.pixels();
        Some(&self.labels[t * n..(t + 1) * n])
    }

    /// Frames `start..start+len`.
    pub fn subclip(&self, start: usize, len: usize) -> VideoClip {
        let t = self.len();
        let start = start.min(t);
        let end = (start + len).min(t);
        let px = self.pixels();
        VideoClip {
            frames: self.frames[start * px * 3..end * px * 3].to_vec(),
            flow: self.flow[start * px * 2..end * px * 2].to_vec(),
            labels: if self.labels.is_empty() { Vec::new() } else { self.labels[start * px..end * px].to_vec() },
            ..self.header()
        }
    }

    fn header(&self) -> VideoClip {
        VideoClip {
            person_id: self.person_id,
            camera_id: self.camera_id,
            height: self.height,
            width: self.width,
            frames: Vec::new(),
            flow: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Spatial crop `[dy..dy+h, dx..dx+w]` of every frame.
    pub fn crop(&self, dy: usize, dx: usize, h: usize, w: usize) -> Result<VideoClip> {
        if dy + h > self.height || dx + w > self.width || h == 0 || w == 0 {
            return Err(Error::Data(format!(
                "crop {h}x{w} at ({dy},{dx}) does not fit a {}x{} frame",
                self.height, self.width
            )));
        }
        let mut out = VideoClip { height: h, width: w, ..self.header() };
        for t in 0..self.len() {
            for y in dy..dy + h {
                let row = (t * self.height + y) * self.width;
                out.frames.extend_from_slice(&self.frames[(row + dx) * 3..(row + dx + w) * 3]);
                out.flow.extend_from_slice(&self.flow[(row + dx) * 2..(row + dx + w) * 2]);
                if !self.labels.is_empty() {
                    out.labels.extend_from_slice(&self.labels[row + dx..row + dx + w]);
                }
            }
        }
        Ok(out)
    }

    /// Mirrors every frame left-right. The horizontal flow component
    /// changes sign; the vertical one is only mirrored.
    pub fn flip_horizontal(&self) -> VideoClip {
        let mut out = self.clone();
        let w = self.width;
        for row in 0..self.len() * self.height {
            for x in 0..w {
                let (src, dst) = (row * w + (w - 1 - x), row * w + x);
                out.frames[dst * 3..dst * 3 + 3].copy_from_slice(&self.frames[src * 3..src * 3 + 3]);
                out.flow[dst * 2] = -self.flow[src * 2];
                out.flow[dst * 2 + 1] = self.flow[src * 2 + 1];
                if !self.labels.is_empty() {
                    out.labels[dst] = self.labels[src];
                }
            }
        }
        out
    }
}
