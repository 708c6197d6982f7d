//! Per-video features, annotations, frame labels, synthetic streams and clip splitting.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_atomic, write_json_atomic};
use crate::scalar::Scalar;
use crate::tensor::SeqTensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"GEBF";
pub const FEATURE_VERSION: u32 = 1;

/// Channel count of backbone stage `k` (1-based): `2^(k+7)`.
pub fn default_stage_dim(k: u32) -> usize {
    1 << (k + 7)
}

pub fn default_stage_dims() -> Vec<usize> {
    (1..=4).map(default_stage_dim).collect()
}

/// Multi-stage per-frame features of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatures<S> {
    pub video_id: String,
    pub fps: f64,
    stages: Vec<SeqTensor<S>>,
}

impl<S: Scalar> VideoFeatures<S> {
    pub fn new(video_id: impl Into<String>, fps: f64, stages: Vec<SeqTensor<S>>) -> Result<Self> {
        let first = stages
            .first()
            .ok_or_else(|| Error::Invalid("video needs at least one stage".into()))?;
        if let Some((k, s)) = stages.iter().enumerate().find(|(_, s)| s.rows() != first.rows()) {
            return Err(Error::shape(
                "VideoFeatures",
                format!("stage {k} has {} frames, stage 0 has {}", s.rows(), first.rows()),
            ));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Invalid(format!("fps must be positive, got {fps}")));
        }
        Ok(Self {
            video_id: video_id.into(),
            fps,
            stages,
        })
    }

    pub fn frames(&self) -> usize {
        self.stages[0].rows()
    }

    pub fn duration(&self) -> f64 {
        self.frames() as f64 / self.fps
    }

    pub fn stages(&self) -> &[SeqTensor<S>] {
        &self.stages
    }

    pub fn stage_dims(&self) -> Vec<usize> {
        self.stages.iter().map(SeqTensor::cols).collect()
    }

    pub fn cast<T: Scalar>(&self) -> VideoFeatures<T> {
        VideoFeatures {
            video_id: self.video_id.clone(),
            fps: self.fps,
            stages: self.stages.iter().map(SeqTensor::cast).collect(),
        }
    }

    pub fn slice_frames(&self, span: ClipSpan) -> Result<Self> {
        let stages = self
            .stages
            .iter()
            .map(|s| s.slice_rows(span.start, span.end))
            .collect::<Result<_>>()?;
        Ok(Self {
            video_id: self.video_id.clone(),
            fps: self.fps,
            stages,
        })
    }

    /// Encodes the binary feature format (values stored as little-endian `f32`).
    pub fn to_bytes(&self) -> Vec<u8> {
        let total: usize = self.stages.iter().map(SeqTensor::len).sum();
        let mut out = Vec::with_capacity(16 + 4 * self.stages.len() + 4 * total);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames() as u32).to_le_bytes());
        out.extend_from_slice(&(self.stages.len() as u32).to_le_bytes());
        for s in &self.stages {
            out.extend_from_slice(&(s.cols() as u32).to_le_bytes());
        }
        for s in &self.stages {
            for v in s.data() {
                let f = v.to_f32().unwrap_or(f32::NAN);
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], video_id: impl Into<String>, fps: f64) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "feature");
        let magic = r.take(4, "magic")?;
        if magic != FEATURE_MAGIC {
            return Err(r.error(0, format!("bad magic {magic:?}, expected \"GEBF\"")));
        }
        let version = r.u32("version")?;
        if version != FEATURE_VERSION {
            return Err(r.error(4, format!("unsupported version {version}")));
        }
        let frames = r.u32("frame count")? as usize;
        let num_stages = r.u32("stage count")? as usize;
        if frames == 0 || num_stages == 0 {
            return Err(r.error(8, format!("empty header: T={frames}, stages={num_stages}")));
        }
        let mut dims = Vec::with_capacity(num_stages);
        for k in 0..num_stages {
            let offset = r.offset();
            let d = r.u32("stage dimension")? as usize;
            if d == 0 {
                return Err(r.error(offset, format!("stage {k} has zero channels")));
            }
            dims.push(d);
        }
        let mut stages = Vec::with_capacity(num_stages);
        for (k, &d) in dims.iter().enumerate() {
            let mut data = Vec::with_capacity(frames * d);
            for _ in 0..frames * d {
                let offset = r.offset();
                let v = f32::from_le_bytes(r.array("stage payload")?);
                if !v.is_finite() {
                    return Err(r.error(offset, format!("non-finite value in stage {k}")));
                }
                data.push(S::lit(v as f64));
            }
            stages.push(SeqTensor::from_raw(frames, d, data));
        }
        if r.remaining() != 0 {
            return Err(r.error(r.offset(), format!("{} trailing bytes", r.remaining())));
        }
        Self::new(video_id, fps, stages)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    /// Reads a feature file; the video id is the file stem.
    pub fn load(path: &Path, fps: f64) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_bytes(&bytes, id, fps)
    }
}

pub fn load_features<S: Scalar>(path: &Path, fps: f64) -> Result<VideoFeatures<S>> {
    VideoFeatures::load(path, fps)
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], kind: &'static str) -> Self {
        Self { bytes, pos: 0, kind }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn error(&self, offset: u64, detail: String) -> Error {
        Error::Format {
            kind: self.kind,
            offset,
            detail,
        }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(
                self.offset(),
                format!("truncated while reading {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let s = self.take(N, what)?;
        Ok(s.try_into().expect("slice length checked"))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
}

pub(crate) mod bytes {
    //! Little-endian reader shared with the checkpoint codec.
    pub(crate) use super::ByteReader as Reader;
}

// ---------------------------------------------------------------------------
// Annotations

/// Ground-truth boundaries of one video, in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub video_id: String,
    pub duration: f64,
    pub fps: f64,
    #[serde(default)]
    pub boundaries: Vec<f64>,
}

impl Annotation {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(format!("fps must be positive, got {}", self.fps));
        }
        if let Some(b) = self.boundaries.iter().find(|&&b| !(0.0..self.duration).contains(&b)) {
            return Err(format!("boundary {b} outside [0, {})", self.duration));
        }
        if self.boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err("boundaries not strictly increasing".into());
        }
        Ok(())
    }
}

/// Reads the annotation JSON array, keyed by video id.
pub fn load_annotations(path: &Path) -> Result<BTreeMap<String, Annotation>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&bytes)
}

pub fn parse_annotations(bytes: &[u8]) -> Result<BTreeMap<String, Annotation>> {
    let records: Vec<serde_json::Value> = serde_json::from_slice(bytes)?;
    let mut out = BTreeMap::new();
    for (index, rec) in records.into_iter().enumerate() {
        let a: Annotation = serde_json::from_value(rec).map_err(|e| Error::Record {
            index,
            detail: e.to_string(),
        })?;
        a.validate().map_err(|detail| Error::Record { index, detail })?;
        if out.contains_key(&a.video_id) {
            return Err(Error::Record {
                index,
                detail: format!("duplicate video_id {:?}", a.video_id),
            });
        }
        out.insert(a.video_id.clone(), a);
    }
    Ok(out)
}

pub fn save_annotations<'a>(path: &Path, annotations: impl IntoIterator<Item = &'a Annotation>) -> Result<()> {
    let list: Vec<&Annotation> = annotations.into_iter().collect();
    write_json_atomic(path, &list)
}

// ---------------------------------------------------------------------------
// Labels

/// Per-frame training target in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVector(pub Vec<f64>);

impl LabelVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn slice(&self, span: ClipSpan) -> LabelVector {
        LabelVector(self.0[span.start..span.end].to_vec())
    }
}

/// Frame whose centre time `(f + 0.5) / fps` is closest to `time`; ties go to the earlier frame.
pub fn nearest_frame(time: f64, fps: f64, frames: usize) -> usize {
    let x = time * fps - 0.5;
    let f = (x - 0.5).ceil().max(0.0) as usize;
    f.min(frames.saturating_sub(1))
}

/// Marks the frame nearest each boundary plus `radius` frames on either side.
pub fn frame_labels(a: &Annotation, frames: usize, fps: f64, radius: usize) -> LabelVector {
    let mut y = vec![0.0; frames];
    if frames == 0 {
        return LabelVector(y);
    }
    for &b in &a.boundaries {
        let f = nearest_frame(b, fps, frames);
        let lo = f.saturating_sub(radius);
        let hi = (f + radius).min(frames - 1);
        y[lo..=hi].iter_mut().for_each(|v| *v = 1.0);
    }
    LabelVector(y)
}

// ---------------------------------------------------------------------------
// Synthetic streams

/// Shape and noise level of a synthetic feature stream.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub frames: usize,
    pub fps: f64,
    pub stage_dims: Vec<usize>,
    /// Ratio of segment-latent variance to per-frame noise variance.
    /// `f64::INFINITY` gives noise-free, exactly piecewise-constant features.
    pub snr: f64,
}

impl SynthSpec {
    pub fn duration(&self) -> f64 {
        self.frames as f64 / self.fps
    }

    fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Invalid("synthetic video needs at least one frame".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Invalid(format!("fps must be positive, got {}", self.fps)));
        }
        if self.stage_dims.is_empty() || self.stage_dims.contains(&0) {
            return Err(Error::Invalid(format!("stage dims must be positive, got {:?}", self.stage_dims)));
        }
        if !(self.snr > 0.0) {
            return Err(Error::Invalid(format!("snr must be positive, got {}", self.snr)));
        }
        Ok(())
    }
}

/// Piecewise-constant latent per segment and stage, plus i.i.d. Gaussian noise.
///
/// Latents are standard normal; noise has variance `1 / snr`. A frame belongs
/// to the segment that contains its centre time.
pub fn synth_video<S: Scalar>(
    video_id: &str,
    seed: u64,
    spec: &SynthSpec,
    boundary_times: &[f64],
) -> Result<(VideoFeatures<S>, Annotation)> {
    spec.validate()?;
    let duration = spec.duration();
    if boundary_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid("boundary times must be strictly increasing".into()));
    }
    if let Some(b) = boundary_times.iter().find(|&&b| !(b > 0.0 && b < duration)) {
        return Err(Error::Invalid(format!("boundary {b} outside (0, {duration})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_std = if spec.snr.is_infinite() { 0.0 } else { (1.0 / spec.snr).sqrt() };
    let segment_of: Vec<usize> = (0..spec.frames)
        .map(|f| {
            let centre = (f as f64 + 0.5) / spec.fps;
            boundary_times.iter().filter(|&&b| b <= centre).count()
        })
        .collect();
    let segments = boundary_times.len() + 1;

    let mut stages = Vec::with_capacity(spec.stage_dims.len());
    for &d in &spec.stage_dims {
        let latents: Vec<Vec<f64>> = (0..segments)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mut data = Vec::with_capacity(spec.frames * d);
        for &seg in &segment_of {
            for &mu in &latents[seg] {
                let n: f64 = StandardNormal.sample(&mut rng);
                data.push(S::lit(mu + noise_std * n));
            }
        }
        stages.push(SeqTensor::from_raw(spec.frames, d, data));
    }
    let features = VideoFeatures::new(video_id, spec.fps, stages)?;
    let annotation = Annotation {
        video_id: video_id.to_string(),
        duration,
        fps: spec.fps,
        boundaries: boundary_times.to_vec(),
    };
    Ok((features, annotation))
}

/// How many boundaries to plant and how far apart.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPlan {
    pub min_count: usize,
    pub max_count: usize,
    /// Minimum spacing between consecutive boundaries, seconds.
    pub min_gap: f64,
    /// Minimum distance from either end of the video, seconds.
    pub margin: f64,
}

impl Default for BoundaryPlan {
    fn default() -> Self {
        Self {
            min_count: 3,
            max_count: 6,
            min_gap: 1.0,
            margin: 0.5,
        }
    }
}

/// Draws a sorted set of boundary times uniformly among all placements that
/// respect the gap and margin constraints. The count is drawn from
/// `min_count..=max_count`, capped at the most that fit in `duration`.
pub fn random_boundaries<R: Rng + ?Sized>(rng: &mut R, duration: f64, plan: &BoundaryPlan) -> Result<Vec<f64>> {
    if plan.min_count > plan.max_count {
        return Err(Error::Invalid("min boundary count exceeds max".into()));
    }
    let span = duration - 2.0 * plan.margin;
    let fits = if span < 0.0 {
        0
    } else if plan.min_gap > 0.0 {
        (span / plan.min_gap).floor() as usize + 1
    } else {
        usize::MAX
    };
    if plan.min_count > fits {
        return Err(Error::Invalid(format!(
            "{} boundaries {}s apart do not fit in {duration}s",
            plan.min_count, plan.min_gap
        )));
    }
    let k = rng.random_range(plan.min_count..=plan.max_count.min(fits));
    if k == 0 {
        return Ok(Vec::new());
    }
    let free = (span - (k - 1) as f64 * plan.min_gap).max(0.0);
    let mut u: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * free).collect();
    u.sort_by(f64::total_cmp);
    Ok(u.iter()
        .enumerate()
        .map(|(i, &v)| plan.margin + v + i as f64 * plan.min_gap)
        .collect())
}

/// A synthetic video with randomly planted boundaries; everything derives from `seed`.
pub fn synth_random_video<S: Scalar>(
    video_id: &str,
    seed: u64,
    spec: &SynthSpec,
    plan: &BoundaryPlan,
) -> Result<(VideoFeatures<S>, Annotation)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let boundaries = random_boundaries(&mut rng, spec.duration(), plan)?;
    synth_video(video_id, seed, spec, &boundaries)
}

// ---------------------------------------------------------------------------
// Clips

/// Half-open frame range `start..end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipSpan {
    pub start: usize,
    pub end: usize,
}

impl ClipSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// A window of a longer video.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip<S> {
    pub parent: String,
    pub span: ClipSpan,
    pub features: VideoFeatures<S>,
}

/// Window layout for `frames` frames: fixed-length clips at a fixed stride, with
/// a final window ending exactly at the last frame.
pub fn clip_spans(frames: usize, fps: f64, clip_seconds: f64, overlap_seconds: f64) -> Result<Vec<ClipSpan>> {
    if frames == 0 {
        return Err(Error::Invalid("cannot split an empty video".into()));
    }
    if !(clip_seconds > overlap_seconds && overlap_seconds >= 0.0) {
        return Err(Error::Invalid(format!(
            "need clip > overlap >= 0, got clip={clip_seconds} overlap={overlap_seconds}"
        )));
    }
    let clip = ((clip_seconds * fps).round() as usize).max(1);
    let stride = (((clip_seconds - overlap_seconds) * fps).round() as usize).max(1);
    let mut spans = Vec::new();
    let mut start = 0;
    loop {
        if start + clip >= frames {
            let s = frames.saturating_sub(clip);
            spans.push(ClipSpan::new(s, frames));
            break;
        }
        spans.push(ClipSpan::new(start, start + clip));
        start += stride;
    }
    Ok(spans)
}

pub fn split_clips<S: Scalar>(v: &VideoFeatures<S>, clip_seconds: f64, overlap_seconds: f64) -> Result<Vec<Clip<S>>> {
    clip_spans(v.frames(), v.fps, clip_seconds, overlap_seconds)?
        .into_iter()
        .map(|span| {
            Ok(Clip {
                parent: v.video_id.clone(),
                span,
                features: v.slice_frames(span)?,
            })
        })
        .collect()
}
