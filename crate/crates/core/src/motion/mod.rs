//! Motion cues between consecutive frames: absolute frame differences and
//! Horn–Schunck optical flow, plus `.flo` I/O and color-wheel rendering.

mod colorize;
mod flo;
mod horn_schunck;

use crate::error::{Error, Result};
use crate::raster::Image;

pub use colorize::flow_to_rgb;
pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC};
pub use horn_schunck::{
    constancy_residual, horn_schunck, horn_schunck_observed, image_gradients, Gradients,
    HornSchunckParams, SolveOutcome,
};

/// Ordered frames of one clip with their frame numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Image>,
    indices: Vec<u32>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Image>, indices: Vec<u32>) -> Result<Self> {
        if frames.len() != indices.len() {
            return Err(Error::input(format!(
                "{} frames but {} frame indices",
                frames.len(),
                indices.len()
            )));
        }
        if let Some(first) = frames.first() {
            if let Some((i, f)) = frames
                .iter()
                .enumerate()
                .find(|(_, f)| f.dims() != first.dims())
            {
                return Err(Error::input(format!(
                    "frame {i} is {}×{}×{}, frame 0 is {}×{}×{}",
                    f.width(),
                    f.height(),
                    f.channels(),
                    first.width(),
                    first.height(),
                    first.channels()
                )));
            }
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("frame indices must be strictly increasing"));
        }
        Ok(FrameSequence { frames, indices })
    }

    /// Frames numbered 0, 1, 2, …
    pub fn from_frames(frames: Vec<Image>) -> Result<Self> {
        let indices = (0..frames.len() as u32).collect();
        Self::new(frames, indices)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// Position of the frame paired with frame `i` for motion cues: the next
    /// frame, or the previous one for the last frame of the clip.
    pub fn partner(&self, i: usize) -> usize {
        if i + 1 < self.frames.len() {
            i + 1
        } else {
            i.saturating_sub(1)
        }
    }

    /// Frame-difference cue for every frame.
    pub fn diffs(&self) -> Result<Vec<Image>> {
        (0..self.len())
            .map(|i| frame_diff(&self.frames[i], &self.frames[self.partner(i)]))
            .collect()
    }
}

/// Per-pixel (u, v) displacement in pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::input(format!(
                "flow components of {} and {} values for a {width}×{height} field",
                u.len(),
                v.len()
            )));
        }
        Ok(FlowField {
            width,
            height,
            u,
            v,
        })
    }

    pub fn uniform(width: usize, height: usize, u: f32, v: f32) -> Self {
        FlowField {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|v| v.is_finite())
    }

    /// The same field with both components multiplied by `k`.
    pub fn scaled(&self, k: f32) -> FlowField {
        FlowField {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|&a| a * k).collect(),
            v: self.v.iter().map(|&a| a * k).collect(),
        }
    }
}

/// Motion input paired with a frame.
#[derive(Debug, Clone, PartialEq)]
pub enum MotionCue {
    FrameDiff(Image),
    Flow(FlowField),
    None,
}

/// Element-wise `|b − a|`, per channel.
pub fn frame_diff(a: &Image, b: &Image) -> Result<Image> {
    if a.dims() != b.dims() {
        return Err(Error::input(format!(
            "frame_diff: {}×{}×{} vs {}×{}×{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| (q - p).abs())
        .collect();
    Image::from_vec(a.width(), a.height(), a.channels(), data)
}
