//! Dataset directory layout:
//!
//! ```text
//! <root>/dataset.txt                 geometry and the ordered clip list
//! <root>/p0003_c1_k0/manifest.txt    extents, frame count, identity, camera
//! <root>/p0003_c1_k0/frames.f32      T*H*W*3 little-endian f32
//! <root>/p0003_c1_k0/flow.f32        T*H*W*2 little-endian f32
//! <root>/p0003_c1_k0/labels.u8       T*H*W scene labels (optional)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Dataset, VideoClip};
use crate::error::{Error, Result};

const FORMAT: &str = "gated-reid-dataset-v1";

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn f32_from(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f32>> {
    if bytes.len() != expected * 4 {
        return Err(Error::format(path, format!("expected {} bytes, found {}", expected * 4, bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Parses `key = value` lines, skipping blanks and `#` comments.
pub(crate) fn parse_kv(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| Error::format(path, format!("line {}: expected key = value", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub(crate) fn field<T: std::str::FromStr>(path: &Path, kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
    kv.get(key)
        .ok_or_else(|| Error::format(path, format!("missing field '{key}'")))?
        .parse()
        .map_err(|_| Error::format(path, format!("field '{key}' is malformed")))
}

fn clip_dir_name(clip: &VideoClip, k: usize) -> String {
    format!("p{:04}_c{}_k{k}", clip.person_id, clip.camera_id)
}

pub fn save_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut index = format!(
        "format = {FORMAT}\nheight = {}\nwidth = {}\nclips = {}\nbyte_order = little\n",
        dataset.height,
        dataset.width,
        dataset.clips.len()
    );
    let mut seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (i, clip) in dataset.clips.iter().enumerate() {
        clip.validate()?;
        let k = seen.entry((clip.person_id, clip.camera_id)).or_insert(0);
        let name = clip_dir_name(clip, *k);
        *k += 1;
        index.push_str(&format!("clip.{i} = {name}\n"));
        let dir = root.join(&name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let manifest = format!(
            "person_id = {}\ncamera_id = {}\nframes = {}\nheight = {}\nwidth = {}\ndtype = f32\nbyte_order = little\nlabels = {}\n",
            clip.person_id,
            clip.camera_id,
            clip.len(),
            clip.height,
            clip.width,
            !clip.labels.is_empty()
        );
        write(&dir.join("manifest.txt"), manifest.as_bytes())?;
        write(&dir.join("frames.f32"), &f32_bytes(&clip.frames))?;
        write(&dir.join("flow.f32"), &f32_bytes(&clip.flow))?;
        if !clip.labels.is_empty() {
            write(&dir.join("labels.u8"), &clip.labels)?;
        }
    }
    write(&root.join("dataset.txt"), index.as_bytes())
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let index_path = root.join("dataset.txt");
    let text = String::from_utf8(read(&index_path)?).map_err(|_| Error::format(&index_path, "not UTF-8"))?;
    let kv = parse_kv(&index_path, &text)?;
    let format: String = field(&index_path, &kv, "format")?;
    if format != FORMAT {
        return Err(Error::format(&index_path, format!("unsupported format '{format}'")));
    }
    let height: usize = field(&index_path, &kv, "height")?;
    let width: usize = field(&index_path, &kv, "width")?;
    let n: usize = field(&index_path, &kv, "clips")?;
    let mut clips = Vec::with_capacity(n);
    for i in 0..n {
        let name: String = field(&index_path, &kv, &format!("clip.{i}"))?;
        let dir = root.join(&name);
        let mpath = dir.join("manifest.txt");
        let mtext = String::from_utf8(read(&mpath)?).map_err(|_| Error::format(&mpath, "not UTF-8"))?;
        let m = parse_kv(&mpath, &mtext)?;
        let frames: usize = field(&mpath, &m, "frames")?;
        let h: usize = field(&mpath, &m, "height")?;
        let w: usize = field(&mpath, &m, "width")?;
        if (h, w) != (height, width) {
            return Err(Error::format(&mpath, "clip extents differ from the dataset's"));
        }
        let has_labels: bool = field(&mpath, &m, "labels")?;
        let fpath = dir.join("frames.f32");
        let opath = dir.join("flow.f32");
        let clip = VideoClip {
            person_id: field(&mpath, &m, "person_id")?,
            camera_id: field(&mpath, &m, "camera_id")?,
            height: h,
            width: w,
            frames: f32_from(&fpath, &read(&fpath)?, frames * h * w * 3)?,
            flow: f32_from(&opath, &read(&opath)?, frames * h * w * 2)?,
            labels: if has_labels { read(&dir.join("labels.u8"))? } else { Vec::new() },
        };
        clip.validate()?;
        clips.push(clip);
    }
    Ok(Dataset { height, width, clips })
}
