//! Frame ingestion, preprocessing and the synthetic desk-scale datasets.
//!
//! A frame store is a manifest CSV (`video_id,path,num_frames,label`) whose
//! `path` column names a directory, relative to the manifest, holding the
//! frames `000000.png`, `000001.png`, ... (`.jpg` is accepted too).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stzoo_core::sampling::ClipIndexPlan;
use stzoo_core::{Layout, VideoTensor};

use crate::error::{io_err, Result, StzooError};

pub type Frame = RgbImage;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Anything that can hand out labelled videos frame by frame.
pub trait VideoSource {
    fn len(&self) -> usize;
    fn video_id(&self, video: usize) -> &str;
    fn num_frames(&self, video: usize) -> usize;
    fn label(&self, video: usize) -> usize;
    fn frame(&self, video: usize, index: usize) -> Result<Frame>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Decodes every clip of `plan`. Each distinct frame is decoded once, so a
/// repeated index yields identical pixels.
pub fn load_clip(src: &dyn VideoSource, video: usize, plan: &ClipIndexPlan) -> Result<Vec<Vec<Frame>>> {
    let n = src.num_frames(video);
    let mut cache: HashMap<usize, Frame> = HashMap::new();
    plan.clips
        .iter()
        .map(|clip| {
            clip.iter()
                .map(|&i| {
                    if i >= n {
                        return Err(StzooError::Invalid(format!("frame {i} out of range for {} ({n} frames)", src.video_id(video))));
                    }
                    if let Some(f) = cache.get(&i) {
                        return Ok(f.clone());
                    }
                    let f = src.frame(video, i)?;
                    cache.insert(i, f.clone());
                    Ok(f)
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub path: PathBuf,
    pub num_frames: usize,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct FrameStore {
    root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub fn frame_name(index: usize) -> String {
    format!("{index:06}.png")
}

fn is_frame_file(p: &Path) -> bool {
    let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let stem_digits = p.file_stem().and_then(|s| s.to_str()).is_some_and(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()));
    stem_digits && matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg"))
}

impl FrameStore {
    /// Reads a manifest and checks it against the frames on disk. Labels
    /// are checked against `num_classes` when given.
    pub fn open(manifest: &Path, num_classes: Option<usize>) -> Result<Self> {
        let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let csv_err = |source| StzooError::Csv { path: manifest.into(), source };
        let mut rdr = csv::Reader::from_path(manifest).map_err(csv_err)?;
        let entries: Vec<ManifestEntry> = rdr.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
        let store = Self { root, entries };
        let mut seen = std::collections::HashSet::new();
        for e in &store.entries {
            if !seen.insert(e.video_id.as_str()) {
                return Err(StzooError::Invalid(format!("{}: duplicate video_id `{}`", manifest.display(), e.video_id)));
            }
            if let Some(k) = num_classes {
                if e.label >= k {
                    return Err(StzooError::Invalid(format!("{}: label {} of `{}` outside [0, {k})", manifest.display(), e.label, e.video_id)));
                }
            }
            let dir = store.root.join(&e.path);
            let on_disk = std::fs::read_dir(&dir)
                .map_err(io_err(&dir))?
                .filter_map(|d| d.ok())
                .filter(|d| is_frame_file(&d.path()))
                .count();
            if on_disk != e.num_frames {
                return Err(StzooError::Invalid(format!(
                    "{}: `{}` lists {} frames but {} holds {on_disk}",
                    manifest.display(),
                    e.video_id,
                    e.num_frames,
                    dir.display()
                )));
            }
        }
        Ok(store)
    }

    pub fn index_of(&self, video_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.video_id == video_id)
    }

    pub fn frame_path(&self, video: usize, index: usize) -> PathBuf {
        let dir = self.root.join(&self.entries[video].path);
        let png = dir.join(frame_name(index));
        if png.exists() {
            return png;
        }
        ["jpg", "jpeg"].iter().map(|ext| dir.join(format!("{index:06}.{ext}"))).find(|p| p.exists()).unwrap_or(png)
    }
}

impl VideoSource for FrameStore {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn video_id(&self, video: usize) -> &str {
        &self.entries[video].video_id
    }

    fn num_frames(&self, video: usize) -> usize {
        self.entries[video].num_frames
    }

    fn label(&self, video: usize) -> usize {
        self.entries[video].label
    }

    fn frame(&self, video: usize, index: usize) -> Result<Frame> {
        let path = self.frame_path(video, index);
        if !path.exists() {
            return Err(StzooError::MissingFrame(path));
        }
        let img = image::open(&path).map_err(|source| StzooError::Image { path: path.clone(), source })?;
        Ok(img.to_rgb8())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    MiniTrain,
    MiniEval,
    FullTrain,
    FullEval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resize {
    /// Shorter side to this length.
    Short(usize),
    /// Shorter side to a length drawn uniformly from the closed range.
    ShortRange(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub protocol: Protocol,
    pub crop: usize,
    pub resize: Resize,
    pub crops: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

/// Crop scales relative to the resized shorter side for multi-scale
/// augmentation.
pub const MULTI_SCALES: [f64; 4] = [1.0, 0.875, 0.75, 0.66];

impl PreprocessSpec {
    pub fn new(protocol: Protocol) -> Self {
        let (crop, resize, crops) = match protocol {
            Protocol::MiniTrain => (224, Resize::Short(256), 1),
            Protocol::MiniEval => (224, Resize::Short(224), 1),
            Protocol::FullTrain => (224, Resize::ShortRange(256, 320), 1),
            Protocol::FullEval => (256, Resize::Short(256), 3),
        };
        Self { protocol, crop, resize, crops, mean: IMAGENET_MEAN, std: IMAGENET_STD }
    }

    /// Same protocol with every length scaled so that the network input is
    /// `size` instead of 224.
    pub fn scaled(mut self, size: usize) -> Self {
        let s = |v: usize| ((v * size) as f64 / 224.0).round().max(1.0) as usize;
        self.crop = s(self.crop);
        self.resize = match self.resize {
            Resize::Short(v) => Resize::Short(s(v)),
            Resize::ShortRange(a, b) => Resize::ShortRange(s(a), s(b)),
        };
        self
    }

    /// Side length of the produced frames.
    pub fn output_size(&self) -> usize {
        self.crop
    }

    pub fn is_eval(&self) -> bool {
        matches!(self.protocol, Protocol::MiniEval | Protocol::FullEval)
    }
}

fn resize_short(img: &Frame, short: usize) -> Frame {
    let (w, h) = img.dimensions();
    let (nw, nh) = if h <= w {
        (((w as f64 * short as f64 / h as f64).round() as u32).max(1), short as u32)
    } else {
        (short as u32, ((h as f64 * short as f64 / w as f64).round() as u32).max(1))
    };
    if (nw, nh) == (w, h) {
        return img.clone();
    }
    imageops::resize(img, nw, nh, FilterType::Triangle)
}

/// Crop rectangle `(x, y, w, h)` shared by every frame of a clip.
type Rect = (u32, u32, u32, u32);

/// Crop offsets of every output crop for frames of size `w×h`.
pub fn crop_rects<R: Rng + ?Sized>(spec: &PreprocessSpec, w: u32, h: u32, rng: &mut R) -> Result<Vec<Rect>> {
    let c = spec.crop as u32;
    let too_small = || StzooError::Invalid(format!("frames {w}x{h} are smaller than the {c}x{c} crop"));
    match spec.protocol {
        Protocol::MiniTrain => {
            let short = w.min(h) as f64;
            let sizes: Vec<u32> = MULTI_SCALES.iter().map(|s| ((short * s) as u32).max(1)).collect();
            let pairs: Vec<(u32, u32)> = (0..sizes.len())
                .flat_map(|i| (0..sizes.len()).filter(move |j| i.abs_diff(*j) <= 1).map(move |j| (i, j)))
                .map(|(i, j)| (sizes[i], sizes[j]))
                .collect();
            let (cw, ch) = pairs[rng.gen_range(0..pairs.len())];
            let (dx, dy) = (w - cw, h - ch);
            let offsets = [(0, 0), (dx, 0), (0, dy), (dx, dy), (dx / 2, dy / 2)];
            let (x, y) = offsets[rng.gen_range(0..offsets.len())];
            Ok(vec![(x, y, cw, ch)])
        }
        Protocol::FullTrain => {
            if w < c || h < c {
                return Err(too_small());
            }
            Ok(vec![(rng.gen_range(0..=w - c), rng.gen_range(0..=h - c), c, c)])
        }
        Protocol::MiniEval => {
            if w < c || h < c {
                return Err(too_small());
            }
            Ok(vec![((w - c) / 2, (h - c) / 2, c, c)])
        }
        Protocol::FullEval => {
            if w < c || h < c {
                return Err(too_small());
            }
            let n = spec.crops as u32;
            let step = |span: u32, i: u32| if n > 1 { span * i / (n - 1) } else { span / 2 };
            Ok((0..n)
                .map(|i| if w >= h { (step(w - c, i), (h - c) / 2, c, c) } else { ((w - c) / 2, step(h - c, i), c, c) })
                .collect())
        }
    }
}

/// Turns the frames of one clip into one `F×3×S×S` tensor per crop. All
/// frames share the same resize and crop; eval protocols draw nothing from
/// `rng`.
pub fn preprocess<R: Rng + ?Sized>(frames: &[Frame], spec: &PreprocessSpec, rng: &mut R) -> Result<Vec<VideoTensor<f32>>> {
    let first = frames.first().ok_or_else(|| StzooError::Invalid("clip has no frames".into()))?;
    let dims = first.dimensions();
    if frames.iter().any(|f| f.dimensions() != dims) {
        return Err(StzooError::Invalid("frames of a clip differ in size".into()));
    }
    let short = match spec.resize {
        Resize::Short(s) => s,
        Resize::ShortRange(a, b) => rng.gen_range(a..=b),
    };
    let resized: Vec<Frame> = frames.iter().map(|f| resize_short(f, short)).collect();
    let (w, h) = resized[0].dimensions();
    let rects = crop_rects(spec, w, h, rng)?;
    let c = spec.crop as u32;
    rects
        .into_iter()
        .map(|(x, y, cw, ch)| {
            let mut values = Vec::with_capacity(frames.len() * 3 * (c * c) as usize);
            for f in &resized {
                let mut patch = imageops::crop_imm(f, x, y, cw, ch).to_image();
                if (cw, ch) != (c, c) {
                    patch = imageops::resize(&patch, c, c, FilterType::Triangle);
                }
                for ch in 0..3 {
                    values.extend(patch.pixels().map(|p| (p[ch] as f32 / 255.0 - spec.mean[ch]) / spec.std[ch]));
                }
            }
            Ok(VideoTensor::new(Layout::Batched2D, [frames.len(), 3, c as usize, c as usize], values)?)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// A square crossing the frame; class 1 plays class 0 backwards.
    Direction,
    /// Two flash frames, adjacent (class 0) or at least half the video apart
    /// (class 1).
    Adjacency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub id: String,
    pub label: usize,
    pub frames: Vec<Frame>,
}

/// An in-memory synthetic dataset. Videos come in twin pairs `(2p, 2p+1)`
/// with labels 0 and 1 and identical frame multisets.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub task: Task,
    pub videos: Vec<SyntheticVideo>,
}

pub fn make_synthetic(task: Task, n_videos: usize, frames: usize, size: usize, seed: u64) -> Result<SyntheticSet> {
    if frames < 4 {
        return Err(StzooError::Invalid(format!("synthetic videos need at least 4 frames, got {frames}")));
    }
    if size < 8 {
        return Err(StzooError::Invalid(format!("synthetic frames need at least 8 pixels, got {size}")));
    }
    let mut videos = Vec::with_capacity(n_videos);
    for pair in 0..n_videos.div_ceil(2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(pair as u64);
        let (a, b) = match task {
            Task::Direction => direction_pair(frames, size as u32, &mut rng),
            Task::Adjacency => adjacency_pair(frames, size as u32, &mut rng),
        };
        for (label, fs) in [(0, a), (1, b)] {
            if videos.len() < n_videos {
                videos.push(SyntheticVideo { id: format!("{task:?}_{pair:05}_{label}").to_lowercase(), label, frames: fs });
            }
        }
    }
    Ok(SyntheticSet { task, videos })
}

fn direction_pair(frames: usize, size: u32, rng: &mut ChaCha8Rng) -> (Vec<Frame>, Vec<Frame>) {
    let side = size / 4;
    let y = rng.gen_range(0..=size - side);
    let bg = rng.gen_range(0..40u8);
    let fg = Rgb([rng.gen_range(150..=255u8), rng.gen_range(150..=255u8), rng.gen_range(150..=255u8)]);
    let span = (size - side) as usize;
    let forward: Vec<Frame> = (0..frames)
        .map(|t| {
            let x = ((t * span) as f64 / (frames - 1) as f64).round() as u32;
            let mut img = RgbImage::from_pixel(size, size, Rgb([bg; 3]));
            for yy in y..y + side {
                for xx in x..x + side {
                    img.put_pixel(xx, yy, fg);
                }
            }
            img
        })
        .collect();
    let backward = forward.iter().rev().cloned().collect();
    (forward, backward)
}

fn adjacency_pair(frames: usize, size: u32, rng: &mut ChaCha8Rng) -> (Vec<Frame>, Vec<Frame>) {
    let bg = Rgb([rng.gen_range(0..30u8); 3]);
    let flash_a = Rgb([rng.gen_range(180..=255u8), rng.gen_range(0..60u8), rng.gen_range(0..60u8)]);
    let flash_b = Rgb([rng.gen_range(0..60u8), rng.gen_range(180..=255u8), rng.gen_range(0..60u8)]);
    let near_t = rng.gen_range(0..frames - 1);
    let min_gap = frames.div_ceil(2);
    let gap = rng.gen_range(min_gap..frames);
    let far_t = rng.gen_range(0..frames - gap);
    let video = |t: usize, d: usize| -> Vec<Frame> {
        (0..frames)
            .map(|i| {
                let px = if i == t { flash_a } else if i == t + d { flash_b } else { bg };
                RgbImage::from_pixel(size, size, px)
            })
            .collect()
    };
    (video(near_t, 1), video(far_t, gap))
}

impl SyntheticSet {
    /// Writes PNG frames and `manifest.csv` under `dir` and opens the store.
    pub fn write(&self, dir: &Path) -> Result<FrameStore> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let manifest = dir.join("manifest.csv");
        let mut w = csv::Writer::from_path(&manifest).map_err(|source| StzooError::Csv { path: manifest.clone(), source })?;
        for v in &self.videos {
            let vdir = dir.join(&v.id);
            std::fs::create_dir_all(&vdir).map_err(io_err(&vdir))?;
            for (i, f) in v.frames.iter().enumerate() {
                let p = vdir.join(frame_name(i));
                f.save(&p).map_err(|source| StzooError::Image { path: p, source })?;
            }
            let entry = ManifestEntry { video_id: v.id.clone(), path: PathBuf::from(&v.id), num_frames: v.frames.len(), label: v.label };
            w.serialize(entry).map_err(|source| StzooError::Csv { path: manifest.clone(), source })?;
        }
        w.flush().map_err(io_err(&manifest))?;
        drop(w);
        FrameStore::open(&manifest, Some(2))
    }

    /// Splits off the first `n` twin pairs.
    pub fn split_pairs(mut self, n: usize) -> (Self, Self) {
        let rest = self.videos.split_off((2 * n).min(self.videos.len()));
        let task = self.task;
        (self, Self { task, videos: rest })
    }
}

impl VideoSource for SyntheticSet {
    fn len(&self) -> usize {
        self.videos.len()
    }

    fn video_id(&self, video: usize) -> &str {
        &self.videos[video].id
    }

    fn num_frames(&self, video: usize) -> usize {
        self.videos[video].frames.len()
    }

    fn label(&self, video: usize) -> usize {
        self.videos[video].label
    }

    fn frame(&self, video: usize, index: usize) -> Result<Frame> {
        self.videos[video]
            .frames
            .get(index)
            .cloned()
            .ok_or_else(|| StzooError::Invalid(format!("frame {index} out of range for {}", self.videos[video].id)))
    }
}
