use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Clip;
use crate::error::{Error, Result};
use crate::metrics::SegMask;
use crate::model::Variant;
use crate::motion::{flow_to_rgb, frame_diff, horn_schunck, FrameSequence, HornSchunckParams};
use crate::raster::Image;
use crate::tensor::{Shape4, Tensor4};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleMeta {
    pub sequence: String,
    /// Frame number within the sequence.
    pub t: u32,
    pub fold: Option<usize>,
}

/// One annotated frame with its motion cue (absent for the single variant).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frame: Image,
    pub cue: Option<Image>,
    pub mask: SegMask,
    pub meta: SampleMeta,
}

/// Motion cue of every frame: the absolute difference to the adjacent frame
/// for `dual_diff`, the colorized Horn–Schunck flow for `dual_flow`.
pub fn compute_cues(
    frames: &FrameSequence,
    variant: Variant,
    flow: Option<&HornSchunckParams>,
) -> Result<Vec<Option<Image>>> {
    let pair = |i: usize| (&frames.frames()[i], &frames.frames()[frames.partner(i)]);
    match variant {
        Variant::Single => Ok(vec![None; frames.len()]),
        Variant::DualDiff => (0..frames.len())
            .map(|i| {
                let (a, b) = pair(i);
                frame_diff(a, b).map(Some)
            })
            .collect(),
        Variant::DualFlow => {
            let params = flow.ok_or_else(|| {
                Error::config("flow", "variant dual_flow needs Horn–Schunck parameters")
            })?;
            params.validate()?;
            (0..frames.len())
                .into_par_iter()
                .map(|i| {
                    let (a, b) = pair(i);
                    horn_schunck(a, b, params).map(|f| Some(flow_to_rgb(&f)))
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub variant: Variant,
    pub samples: Vec<Sample>,
}

impl SampleSet {
    /// One sample per annotated frame. Cues use the clip's frames as given,
    /// so resize clips before calling.
    pub fn from_clips(clips: &[Clip], variant: Variant, flow: Option<&HornSchunckParams>) -> Result<Self> {
        let mut samples = Vec::new();
        for clip in clips {
            let cues = compute_cues(&clip.frames, variant, flow)?;
            for (pos, (mask, cue)) in clip.masks.iter().zip(cues).enumerate() {
                if let Some(mask) = mask {
                    samples.push(Sample {
                        frame: clip.frames.frames()[pos].clone(),
                        cue,
                        mask: mask.clone(),
                        meta: SampleMeta {
                            sequence: clip.name.clone(),
                            t: clip.frames.indices()[pos],
                            fold: None,
                        },
                    });
                }
            }
        }
        if let Some(first) = samples.first() {
            let dims = first.frame.dims();
            if let Some(s) = samples.iter().find(|s| s.frame.dims() != dims) {
                return Err(Error::Dataset(format!(
                    "sequence {} is {}×{}, expected {}×{}; resize before batching",
                    s.meta.sequence,
                    s.frame.width(),
                    s.frame.height(),
                    dims.0,
                    dims.1
                )));
            }
        }
        Ok(SampleSet { variant, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_fold(mut self, fold: usize) -> Self {
        for s in &mut self.samples {
            s.meta.fold = Some(fold);
        }
        self
    }
}

/// Stacked samples ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub frames: Tensor4<f32>,
    pub cues: Option<Tensor4<f32>>,
    /// N·H·W labels in {0, 1}.
    pub masks: Vec<u8>,
    /// Positions of the samples in their set.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Stacks `indices` of `set`; samples must share their dimensions.
    pub fn gather(set: &SampleSet, indices: &[usize]) -> Batch {
        let first = &set.samples[indices[0]].frame;
        let (w, h) = (first.width(), first.height());
        let stack = |get: &dyn Fn(&Sample) -> &Image| {
            let mut data = Vec::with_capacity(indices.len() * 3 * h * w);
            for &i in indices {
                data.extend(get(&set.samples[i]).to_tensor().into_data());
            }
            Tensor4::from_vec(Shape4::new(indices.len(), 3, h, w), data).expect("uniform samples")
        };
        let frames = stack(&|s| &s.frame);
        let cues = set.variant.is_dual().then(|| {
            stack(&|s| s.cue.as_ref().expect("dual samples carry cues"))
        });
        let masks = indices
            .iter()
            .flat_map(|&i| set.samples[i].mask.data().iter().copied())
            .collect();
        Batch {
            frames,
            cues,
            masks,
            indices: indices.to_vec(),
        }
    }
}

/// Shuffled mini-batches for one epoch. The order depends only on
/// (`seed`, `epoch`); the last batch may be short.
pub fn batches(
    set: &SampleSet,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = Batch> + '_> {
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(chunks.into_iter().map(move |idx| Batch::gather(set, &idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, ObjectSpec, Shape, SynthSpec, Texture};

    fn clip(frames: usize, velocity: (i64, i64), seed: u64) -> Clip {
        synth_generate(&SynthSpec {
            width: 32,
            height: 32,
            object: ObjectSpec {
                shape: Shape::Square,
                size: 6,
                texture: Texture::Noise,
                start: (4, 4),
                velocity,
            },
            distractor: None,
            camera_pan: (0, 0),
            frames,
            seed,
        })
        .unwrap()
    }

    fn sizes(set: &SampleSet, batch: usize) -> Vec<usize> {
        batches(set, batch, 0, 0).unwrap().map(|b| b.len()).collect()
    }

    #[test]
    fn partial_batch_is_emitted() {
        let set = SampleSet::from_clips(&[clip(10, (1, 0), 0)], Variant::DualDiff, None).unwrap();
        assert_eq!(sizes(&set, 16), vec![10]);
        let clips: Vec<Clip> = (0..3).map(|s| clip(11, (1, 1), s)).collect();
        let set = SampleSet::from_clips(&clips, Variant::Single, None).unwrap();
        assert_eq!(sizes(&set, 16), vec![16, 16, 1]);
    }

    #[test]
    fn order_is_seeded_per_epoch() {
        let set = SampleSet::from_clips(&[clip(12, (1, 0), 0)], Variant::DualDiff, None).unwrap();
        let order = |seed, epoch| -> Vec<usize> {
            batches(&set, 5, seed, epoch).unwrap().flat_map(|b| b.indices).collect()
        };
        assert_eq!(order(3, 1), order(3, 1));
        assert_ne!(order(3, 1), order(3, 2));
        let mut all = order(3, 1);
        all.sort();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn flow_variant_needs_parameters() {
        let err = SampleSet::from_clips(&[clip(3, (1, 0), 0)], Variant::DualFlow, None).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { ref field, .. } if field == "flow"));
        let ok = SampleSet::from_clips(
            &[clip(3, (1, 0), 0)],
            Variant::DualFlow,
            Some(&HornSchunckParams::default()),
        )
        .unwrap();
        assert!(ok.samples.iter().all(|s| s.cue.is_some()));
    }

    #[test]
    fn static_clip_has_zero_diff_cue() {
        let set = SampleSet::from_clips(&[clip(4, (0, 0), 2)], Variant::DualDiff, None).unwrap();
        for s in &set.samples {
            assert!(s.cue.as_ref().unwrap().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn batch_zero_rejected() {
        let set = SampleSet::from_clips(&[clip(2, (1, 0), 0)], Variant::Single, None).unwrap();
        assert!(batches(&set, 0, 0, 0).is_err());
    }
}
