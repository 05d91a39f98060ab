//! Two-camera synthetic pedestrian videos with exact optical flow.
//!
//! A person is a flat-colored head, torso, two arms and two legs. The torso
//! holds still relative to the tracking camera while the limbs swing
//! periodically; the textured background slides past at the walking speed.
//! Some clips have an occluding rectangle crossing the person vertically.
//! Every layer moves by whole pixels per frame, so the flow is exact.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::clip::{label, VideoClip};
use super::Dataset;
use crate::error::{Error, Result};

/// Generator inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub num_identities: usize,
    pub clips_per_camera: usize,
    /// Inclusive range of clip lengths, drawn uniformly per clip.
    pub frame_count_range: (usize, usize),
    pub height: usize,
    pub width: usize,
    /// Fraction of clips (in expectation) crossed by an occluder.
    pub occluder_density: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_identities: 10,
            clips_per_camera: 1,
            frame_count_range: (20, 60),
            height: 64,
            width: 32,
            occluder_density: 0.3,
            seed: 0,
        }
    }
}

pub const MIN_HEIGHT: usize = 16;
pub const MIN_WIDTH: usize = 8;

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 2 {
            return Err(Error::InvalidConfig("at least 2 identities are required".into()));
        }
        if self.clips_per_camera == 0 {
            return Err(Error::InvalidConfig("clips_per_camera must be positive".into()));
        }
        let (lo, hi) = self.frame_count_range;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!("invalid frame count range {lo}..={hi}")));
        }
        if self.height < MIN_HEIGHT || self.width < MIN_WIDTH {
            return Err(Error::InvalidConfig(format!(
                "{}x{} frames cannot contain the person sprite (minimum {MIN_HEIGHT}x{MIN_WIDTH})",
                self.height, self.width
            )));
        }
        if !(0.0..=1.0).contains(&self.occluder_density) {
            return Err(Error::InvalidConfig(format!(
                "occluder_density must lie in [0, 1], got {}",
                self.occluder_density
            )));
        }
        Ok(())
    }
}

/// Appearance and gait of one synthetic person. Sizes are fractions of
/// the frame extents.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticIdentity {
    pub id: usize,
    pub torso_color: [f32; 3],
    pub limb_color: [f32; 3],
    pub head_color: [f32; 3],
    pub torso_width: f64,
    pub torso_height: f64,
    pub leg_length: f64,
    pub limb_width: f64,
    pub swing_amplitude: f64,
    /// Gait cycles per frame.
    pub gait_frequency: f64,
    pub gait_phase: f64,
    /// Walking speed in pixels per frame.
    pub speed: f64,
}

/// Viewing conditions of one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub id: usize,
    pub background_seed: u64,
    /// Per-channel affine color response `gain * v + bias`.
    pub gain: [f32; 3],
    pub bias: [f32; 3],
    pub mirrored: bool,
    /// Whether the camera follows the person; a static camera leaves the
    /// background still and lets the person walk across.
    pub tracking: bool,
    pub occluder_density: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed derived from a base seed and a path of indices.
pub fn sub_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p.wrapping_add(0x1234_5678))))
}

fn color(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> [f32; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

impl SyntheticIdentity {
    pub fn generate(seed: u64, id: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &[1, id as u64]));
        SyntheticIdentity {
            id,
            torso_color: color(&mut rng, 0.05, 0.95),
            limb_color: color(&mut rng, 0.05, 0.95),
            head_color: color(&mut rng, 0.3, 0.8),
            torso_width: rng.random_range(0.30..0.45),
            torso_height: rng.random_range(0.24..0.32),
            leg_length: rng.random_range(0.28..0.34),
            limb_width: rng.random_range(0.10..0.14),
            swing_amplitude: rng.random_range(0.06..0.12),
            gait_frequency: rng.random_range(0.05..0.12),
            gait_phase: rng.random_range(0.0..TAU),
            speed: rng.random_range(0.5..1.5),
        }
    }
}

impl CameraModel {
    pub fn generate(seed: u64, id: usize, occluder_density: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &[2, id as u64]));
        CameraModel {
            id,
            background_seed: rng.random(),
            gain: color(&mut rng, 0.75, 1.25),
            bias: color(&mut rng, -0.1, 0.1),
            mirrored: id % 2 == 1,
            tracking: true,
            occluder_density,
        }
    }
}

/// Horizontally periodic background tile.
struct Background {
    height: usize,
    period: usize,
    pixels: Vec<[f32; 3]>,
}

impl Background {
    fn generate(seed: u64, height: usize, width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let period = 2 * width;
        let base = color(&mut rng, 0.2, 0.8);
        let waves: Vec<(f64, f64, f64, usize)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.05..0.15),
                    rng.random_range(1..4) as f64,
                    rng.random_range(0.0..TAU),
                    rng.random_range(0..3usize),
                )
            })
            .collect();
        let mut pixels = Vec::with_capacity(height * period);
        for y in 0..height {
            for x in 0..period {
                let mut c = base;
                for &(amp, cycles, phase, ch) in &waves {
                    let arg = TAU * cycles * x as f64 / period as f64 + phase + y as f64 * 0.15;
                    c[ch] += (amp * arg.sin()) as f32;
                }
                pixels.push(c);
            }
        }
        let clutter = rng.random_range(5..10);
        for _ in 0..clutter {
            let w = rng.random_range(width / 6..=width / 2).max(1);
            let h = rng.random_range(height / 8..=height / 3).max(1);
            let x0 = rng.random_range(0..period);
            let y0 = rng.random_range(0..height.saturating_sub(h).max(1));
            let c = color(&mut rng, 0.05, 0.95);
            for y in y0..(y0 + h).min(height) {
                for dx in 0..w {
                    pixels[y * period + (x0 + dx) % period] = c;
                }
            }
        }
        for p in &mut pixels {
            for v in p.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
        Background { height, period, pixels }
    }

    fn at(&self, y: usize, x: i64) -> [f32; 3] {
        debug_assert!(y < self.height);
        self.pixels[y * self.period + x.rem_euclid(self.period as i64) as usize]
    }
}

#[derive(Clone, Copy)]
struct Part {
    label: u8,
    color: [f32; 3],
    w: i64,
    h: i64,
}

#[derive(Clone, Copy)]
struct Occluder {
    color: [f32; 3],
    x0: i64,
    w: i64,
    h: i64,
    center_y: i64,
    crossing_t: i64,
    vy: i64,
}

struct Scene<'a> {
    person: &'a SyntheticIdentity,
    height: usize,
    width: usize,
    background: &'a Background,
    tracking: bool,
    center_x: i64,
    top_y: i64,
    occluder: Option<Occluder>,
}

impl Scene<'_> {
    fn px(&self, frac: f64, extent: usize) -> i64 {
        ((frac * extent as f64).round() as i64).max(1)
    }

    fn background_offset(&self, t: usize) -> i64 {
        if self.tracking {
            -(self.person.speed * t as f64).round() as i64
        } else {
            0
        }
    }

    fn person_shift(&self, t: usize) -> i64 {
        if self.tracking {
            0
        } else {
            (self.person.speed * t as f64).round() as i64
        }
    }

    fn swing(&self, t: usize, phase: f64, amp: f64) -> i64 {
        let p = self.person;
        (amp * (TAU * p.gait_frequency * t as f64 + p.gait_phase + phase).sin()).round() as i64
    }

    /// Layers in paint order with their top-left corner at time `t`.
    fn parts(&self, t: usize) -> Vec<(Part, i64, i64)> {
        let p = self.person;
        let (h, w) = (self.height, self.width);
        let tw = self.px(p.torso_width, w);
        let th = self.px(p.torso_height, h);
        let lw = self.px(p.limb_width, w);
        let ll = self.px(p.leg_length, h);
        let head = (th / 3).max(2);
        let amp = p.swing_amplitude * w as f64;
        let cx = self.center_x + self.person_shift(t);
        let torso_x = cx - tw / 2;
        let torso_y = self.top_y + head + 1;
        let leg_y = torso_y + th;
        let arm_len = (th * 3 / 4).max(1);
        let mut out = vec![
            (
                Part { label: label::LEG_LEFT, color: p.limb_color, w: lw, h: ll },
                cx - lw - 1 + self.swing(t, 0.0, amp),
                leg_y,
            ),
            (
                Part { label: label::LEG_RIGHT, color: p.limb_color, w: lw, h: ll },
                cx + 1 + self.swing(t, std::f64::consts::PI, amp),
                leg_y,
            ),
            (Part { label: label::TORSO, color: p.torso_color, w: tw, h: th }, torso_x, torso_y),
            (
                Part { label: label::ARM_LEFT, color: p.limb_color, w: lw, h: arm_len },
                torso_x - lw,
                torso_y + 1 + self.swing(t, std::f64::consts::PI, amp / 2.0),
            ),
            (
                Part { label: label::ARM_RIGHT, color: p.limb_color, w: lw, h: arm_len },
                torso_x + tw,
                torso_y + 1 + self.swing(t, 0.0, amp / 2.0),
            ),
            (Part { label: label::HEAD, color: p.head_color, w: head, h: head }, cx - head / 2, self.top_y),
        ];
        if let Some(o) = self.occluder {
            let y = o.center_y - o.h / 2 + o.vy * (t as i64 - o.crossing_t);
            out.push((Part { label: label::OCCLUDER, color: o.color, w: o.w, h: o.h }, o.x0, y));
        }
        out
    }

    /// Renders frame `t` into color, flow and label buffers.
    fn render(&self, t: usize, frame: &mut Vec<f32>, flow: &mut Vec<f32>, labels: &mut Vec<u8>) {
        let (h, w) = (self.height, self.width);
        let off = self.background_offset(t);
        let bg_flow = if t == 0 { 0 } else { off - self.background_offset(t - 1) };
        let mut col = vec![[0f32; 3]; h * w];
        let mut fl = vec![[0f32; 2]; h * w];
        let mut lab = vec![label::BACKGROUND; h * w];
        for y in 0..h {
            for x in 0..w {
                col[y * w + x] = self.background.at(y, x as i64 - off);
                fl[y * w + x] = [bg_flow as f32, 0.0];
            }
        }
        let now = self.parts(t);
        let before = if t == 0 { now.clone() } else { self.parts(t - 1) };
        for ((part, x0, y0), (_, px0, py0)) in now.into_iter().zip(before) {
            let motion = [(x0 - px0) as f32, (y0 - py0) as f32];
            for y in y0.max(0)..(y0 + part.h).min(h as i64) {
                for x in x0.max(0)..(x0 + part.w).min(w as i64) {
                    let i = y as usize * w + x as usize;
                    col[i] = part.color;
                    fl[i] = motion;
                    lab[i] = part.label;
                }
            }
        }
        frame.extend(col.iter().flatten());
        flow.extend(fl.iter().flatten());
        labels.extend(lab);
    }
}

fn render_clip(
    cfg: &GeneratorConfig,
    person: &SyntheticIdentity,
    camera: &CameraModel,
    background: &Background,
    clip_index: usize,
) -> VideoClip {
    let mut rng =
        ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, &[3, person.id as u64, camera.id as u64, clip_index as u64]));
    let (h, w) = (cfg.height, cfg.width);
    let (lo, hi) = cfg.frame_count_range;
    let len = rng.random_range(lo..=hi);
    let center_x = (w / 2) as i64 + rng.random_range(-1..=1);
    let total_h = {
        let th = ((person.torso_height * h as f64).round() as i64).max(1);
        let ll = ((person.leg_length * h as f64).round() as i64).max(1);
        (th / 3).max(2) + 1 + th + ll
    };
    let top_y = ((h as i64 - total_h) / 2 + rng.random_range(-1..=1)).max(0);
    let occluder = rng.random_bool(camera.occluder_density).then(|| {
        let ow = ((rng.random_range(0.4..0.7) * w as f64).round() as i64).max(1);
        let oh = ((rng.random_range(0.2..0.35) * h as f64).round() as i64).max(1);
        let speed = rng.random_range(1..=2);
        Occluder {
            color: color(&mut rng, 0.0, 1.0),
            x0: center_x - ow / 2 + rng.random_range(-(w as i64) / 6..=(w as i64) / 6),
            w: ow,
            h: oh,
            center_y: top_y + total_h / 2,
            crossing_t: rng.random_range(len as i64 / 4..=(3 * len as i64 / 4).max(len as i64 / 4)),
            vy: if rng.random_bool(0.5) { speed } else { -speed },
        }
    });
    let scene = Scene { person, height: h, width: w, background, tracking: camera.tracking, center_x, top_y, occluder };
    let mut frames = Vec::with_capacity(len * h * w * 3);
    let mut flow = Vec::with_capacity(len * h * w * 2);
    let mut labels = Vec::with_capacity(len * h * w);
    for t in 0..len {
        scene.render(t, &mut frames, &mut flow, &mut labels);
    }
    for px in frames.chunks_exact_mut(3) {
        for (c, v) in px.iter_mut().enumerate() {
            *v = (camera.gain[c] * *v + camera.bias[c]).clamp(0.0, 1.0);
        }
    }
    let clip = VideoClip { person_id: person.id, camera_id: camera.id, height: h, width: w, frames, flow, labels };
    if camera.mirrored {
        clip.flip_horizontal()
    } else {
        clip
    }
}

/// Renders one clip per (identity, camera, clip index). Identities and
/// cameras are derived deterministically from `cfg.seed`.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    let cameras: Vec<CameraModel> = (0..2).map(|c| CameraModel::generate(cfg.seed, c, cfg.occluder_density)).collect();
    generate_with_cameras(cfg, &cameras)
}

/// As [`generate_dataset`] with explicit camera models.
pub fn generate_with_cameras(cfg: &GeneratorConfig, cameras: &[CameraModel]) -> Result<Dataset> {
    cfg.validate()?;
    if cameras.len() != 2 {
        return Err(Error::InvalidConfig(format!("exactly two cameras are required, got {}", cameras.len())));
    }
    if cameras[0].background_seed == cameras[1].background_seed {
        return Err(Error::InvalidConfig("cameras must have distinct background seeds".into()));
    }
    let backgrounds: Vec<Background> =
        cameras.iter().map(|c| Background::generate(c.background_seed, cfg.height, cfg.width)).collect();
    let mut clips = Vec::with_capacity(cfg.num_identities * 2 * cfg.clips_per_camera);
    for id in 0..cfg.num_identities {
        let person = SyntheticIdentity::generate(cfg.seed, id);
        for (camera, bg) in cameras.iter().zip(&backgrounds) {
            for k in 0..cfg.clips_per_camera {
                clips.push(render_clip(cfg, &person, camera, bg, k));
            }
        }
    }
    Ok(Dataset { height: cfg.height, width: cfg.width, clips })
}

/// Binary person mask at half resolution (`ceil(H/2) x ceil(W/2)`), one per
/// frame. A cell is set when any pixel of its 2x2 block shows the person;
/// occluded person pixels do not count.
#[derive(Clone, Debug, PartialEq)]
pub struct GateMask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<bool>,
}

impl GateMask {
    pub fn area_fraction(&self) -> f64 {
        self.values.iter().filter(|&&v| v).count() as f64 / self.values.len() as f64
    }

    /// Share of the gate's mass that falls on the person.
    pub fn overlap_score(&self, gate: &[f64]) -> f64 {
        let total: f64 = gate.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        gate.iter().zip(&self.values).filter(|(_, &m)| m).map(|(g, _)| g).sum::<f64>() / total
    }
}

pub fn ground_truth_gate(clip: &VideoClip) -> Result<Vec<GateMask>> {
    if clip.labels.is_empty() {
        return Err(Error::Data("clip carries no scene labels".into()));
    }
    let (h, w) = (clip.height, clip.width);
    let (gh, gw) = (h.div_ceil(2), w.div_ceil(2));
    Ok((0..clip.len())
        .map(|t| {
            let lab = clip.labels_at(t).expect("labels present");
            let mut values = vec![false; gh * gw];
            for y in 0..h {
                for x in 0..w {
                    if label::is_person(lab[y * w + x]) {
                        values[(y / 2) * gw + x / 2] = true;
                    }
                }
            }
            GateMask { height: gh, width: gw, values }
        })
        .collect())
}

/// Counts pixels of frame `t >= 1` whose flow points at a source pixel in
/// frame `t-1` with the same scene label but a different color. Zero for
/// every clip this generator produces.
pub fn warp_violations(clip: &VideoClip) -> usize {
    let (h, w) = (clip.height as i64, clip.width as i64);
    let mut bad = 0;
    for t in 1..clip.len() {
        let (cur, prev) = (clip.frame(t), clip.frame(t - 1));
        let flow = clip.flow_at(t);
        let (lab, plab) = (clip.labels_at(t).unwrap(), clip.labels_at(t - 1).unwrap());
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) as usize;
                let sx = x - flow[2 * i] as i64;
                let sy = y - flow[2 * i + 1] as i64;
                if sx < 0 || sy < 0 || sx >= w || sy >= h {
                    continue;
                }
                let j = (sy * w + sx) as usize;
                if plab[j] == lab[i] && cur[3 * i..3 * i + 3] != prev[3 * j..3 * j + 3] {
                    bad += 1;
                }
            }
        }
    }
    bad
}
