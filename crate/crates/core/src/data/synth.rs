use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Clip;
use crate::error::{Error, Result};
use crate::metrics::SegMask;
use crate::motion::FrameSequence;
use crate::raster::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Disc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    Plain,
    Noise,
}

/// The moving object. `start` is the top-left corner of its `size`×`size`
/// bounding box at frame 0; positions advance by `velocity` px per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub size: usize,
    pub texture: Texture,
    pub start: (i64, i64),
    pub velocity: (i64, i64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub object: ObjectSpec,
    /// Top-left corner of a static copy of the object; it is background.
    pub distractor: Option<(i64, i64)>,
    /// Background translation in px per frame (wraps around).
    pub camera_pan: (i64, i64),
    pub frames: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Object box top-left at frame `t`.
    pub fn position(&self, t: usize) -> (i64, i64) {
        let (x, y) = self.object.start;
        let (vx, vy) = self.object.velocity;
        (x + vx * t as i64, y + vy * t as i64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("canvas", "width and height must be positive"));
        }
        if self.frames == 0 {
            return Err(Error::config("frames", "a clip needs at least one frame"));
        }
        let size = self.object.size;
        if size == 0 || size > self.width || size > self.height {
            return Err(Error::config(
                "object.size",
                format!("{size} does not fit a {}×{} canvas", self.width, self.height),
            ));
        }
        let inside = |(x, y): (i64, i64)| {
            x >= 0 && y >= 0 && x as usize + size <= self.width && y as usize + size <= self.height
        };
        if let Some(t) = (0..self.frames).find(|&t| !inside(self.position(t))) {
            let (x, y) = self.position(t);
            return Err(Error::config(
                "object",
                format!("object at ({x}, {y}) leaves the canvas at frame {t}"),
            ));
        }
        if let Some(d) = self.distractor.filter(|&d| !inside(d)) {
            return Err(Error::config(
                "distractor",
                format!("distractor at {d:?} is not inside the canvas"),
            ));
        }
        Ok(())
    }
}

fn covers(shape: Shape, size: usize, dx: usize, dy: usize) -> bool {
    match shape {
        Shape::Square => true,
        Shape::Disc => {
            let c = (size as f64 - 1.0) / 2.0;
            let r = size as f64 / 2.0;
            (dx as f64 - c).powi(2) + (dy as f64 - c).powi(2) <= r * r
        }
    }
}

/// Renders a clip from `spec`; the seed fixes both textures.
pub fn synth_generate(spec: &SynthSpec) -> Result<Clip> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let bg_base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.45));
    let background: Vec<f32> = (0..w * h * 3)
        .map(|i| bg_base[i % 3] + rng.random_range(-0.1..0.1))
        .collect();

    let size = spec.object.size;
    let fg_base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.6..0.9));
    let sprite: Vec<f32> = (0..size * size * 3)
        .map(|i| match spec.object.texture {
            Texture::Plain => fg_base[i % 3],
            Texture::Noise => fg_base[i % 3] + rng.random_range(-0.1..0.1),
        })
        .collect();

    let paint = |img: &mut Image, mask: Option<&mut SegMask>, (ox, oy): (i64, i64)| {
        let mut support = vec![0u8; w * h];
        for dy in 0..size {
            for dx in 0..size {
                if !covers(spec.object.shape, size, dx, dy) {
                    continue;
                }
                let (x, y) = (ox as usize + dx, oy as usize + dy);
                for c in 0..3 {
                    img.set(x, y, c, sprite[(dy * size + dx) * 3 + c]);
                }
                support[y * w + x] = 1;
            }
        }
        if let Some(m) = mask {
            *m = SegMask::new(w, h, support).expect("binary support");
        }
    };

    let (px, py) = spec.camera_pan;
    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let (sx, sy) = (px * t as i64, py * t as i64);
        let mut img = Image::from_fn(w, h, 3, |x, y, c| {
            let bx = (x as i64 - sx).rem_euclid(w as i64) as usize;
            let by = (y as i64 - sy).rem_euclid(h as i64) as usize;
            background[(by * w + bx) * 3 + c]
        });
        if let Some(d) = spec.distractor {
            paint(&mut img, None, d);
        }
        let mut mask = SegMask::empty(w, h);
        paint(&mut img, Some(&mut mask), spec.position(t));
        frames.push(img);
        masks.push(Some(mask));
    }
    Clip::new(
        format!("synth{:04}", spec.seed),
        FrameSequence::from_frames(frames)?,
        masks,
    )
}

/// Parameters for a randomized family of clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSpec {
    pub clips: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Inclusive range of object sizes.
    pub object_size: (usize, usize),
    /// Inclusive range of the per-axis speed magnitude in px per frame.
    pub speed: (i64, i64),
    pub distractor: bool,
    pub camera_pan: (i64, i64),
    pub seed: u64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            clips: 20,
            width: 96,
            height: 96,
            frames: 8,
            object_size: (18, 28),
            speed: (2, 4),
            distractor: true,
            camera_pan: (0, 0),
            seed: 0,
        }
    }
}

fn boxes_overlap(a: (i64, i64), b: (i64, i64), size: i64, gap: i64) -> bool {
    (a.0 - b.0).abs() < size + gap && (a.1 - b.1).abs() < size + gap
}

/// Draws `clips` specs: random shape, size and heading per clip, with the
/// static distractor kept clear of the object's whole path.
pub fn suite_specs(suite: &SuiteSpec) -> Result<Vec<SynthSpec>> {
    let (lo, hi) = suite.object_size;
    if lo == 0 || lo > hi {
        return Err(Error::config("object_size", format!("bad range {lo}..={hi}")));
    }
    let (smin, smax) = suite.speed;
    if smin < 0 || smin > smax {
        return Err(Error::config("speed", format!("bad range {smin}..={smax}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(suite.seed);
    let span = suite.frames.saturating_sub(1) as i64;
    (0..suite.clips)
        .map(|i| {
            for _ in 0..1000 {
                let size = rng.random_range(lo..=hi);
                let shape = if rng.random_bool(0.5) { Shape::Square } else { Shape::Disc };
                let mut speed = || {
                    let m = rng.random_range(smin..=smax);
                    if rng.random_bool(0.5) { m } else { -m }
                };
                let velocity = (speed(), speed());
                let room = |extent: usize, v: i64| {
                    let free = extent as i64 - size as i64 - (v * span).abs();
                    (free >= 0).then_some((free, if v < 0 { -v * span } else { 0 }))
                };
                let (Some((fx, ox)), Some((fy, oy))) =
                    (room(suite.width, velocity.0), room(suite.height, velocity.1))
                else {
                    continue;
                };
                let start = (ox + rng.random_range(0..=fx), oy + rng.random_range(0..=fy));
                let distractor = if suite.distractor {
                    let d = (
                        rng.random_range(0..=(suite.width - size) as i64),
                        rng.random_range(0..=(suite.height - size) as i64),
                    );
                    let path = (0..=span).map(|t| (start.0 + velocity.0 * t, start.1 + velocity.1 * t));
                    if path.clone().any(|p| boxes_overlap(p, d, size as i64, 2)) {
                        continue;
                    }
                    Some(d)
                } else {
                    None
                };
                return Ok(SynthSpec {
                    width: suite.width,
                    height: suite.height,
                    object: ObjectSpec {
                        shape,
                        size,
                        texture: Texture::Noise,
                        start,
                        velocity,
                    },
                    distractor,
                    camera_pan: suite.camera_pan,
                    frames: suite.frames,
                    seed: suite.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                });
            }
            Err(Error::config(
                "suite",
                format!("could not place clip {i} on a {}×{} canvas", suite.width, suite.height),
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthSpec {
        SynthSpec {
            width: 96,
            height: 96,
            object: ObjectSpec {
                shape: Shape::Square,
                size: 8,
                texture: Texture::Noise,
                start: (10, 20),
                velocity: (2, 0),
            },
            distractor: Some((60, 60)),
            camera_pan: (0, 0),
            frames: 5,
            seed: 11,
        }
    }

    #[test]
    fn mask_is_translated_square() {
        let clip = synth_generate(&spec()).unwrap();
        for (t, m) in clip.masks.iter().enumerate() {
            let m = m.as_ref().unwrap();
            let x0 = 10 + 2 * t;
            let expected =
                SegMask::from_fn(96, 96, |x, y| (x0..x0 + 8).contains(&x) && (20..28).contains(&y));
            assert_eq!(m, &expected, "frame {t}");
        }
    }

    #[test]
    fn still_object_gives_identical_frames() {
        let mut s = spec();
        s.object.velocity = (0, 0);
        let clip = synth_generate(&s).unwrap();
        let f = clip.frames.frames();
        assert!(f.iter().all(|x| x == &f[0]));
        assert!(clip.frames.diffs().unwrap().iter().all(|d| d.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn same_seed_same_clip() {
        assert_eq!(synth_generate(&spec()).unwrap(), synth_generate(&spec()).unwrap());
    }

    #[test]
    fn leaving_canvas_rejected() {
        let mut s = spec();
        s.object.velocity = (30, 0);
        let err = synth_generate(&s).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { ref field, .. } if field == "object"));
    }

    #[test]
    fn suite_specs_are_valid_and_seeded() {
        let specs = suite_specs(&SuiteSpec::default()).unwrap();
        assert_eq!(specs.len(), 20);
        for s in &specs {
            s.validate().unwrap();
        }
        assert_eq!(specs, suite_specs(&SuiteSpec::default()).unwrap());
    }

    #[test]
    fn disc_is_inside_its_box() {
        let mut s = spec();
        s.object.shape = Shape::Disc;
        let clip = synth_generate(&s).unwrap();
        let m = clip.masks[0].as_ref().unwrap();
        assert!(m.count() < 64 && m.count() > 40);
    }
}
