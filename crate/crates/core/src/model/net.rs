use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::weights::{ModelWeights, WeightTensor};
use super::{NetConfig, Variant, DECODER_CHANNELS, STAGE_CHANNELS, STEM_CHANNELS};
use crate::error::{Error, Result};
use crate::metrics::SegMask;
use crate::tensor::{adam_step, AdamState, BnMode, Graph, NamedParam, RunningStats, Shape4, Tensor4, Var};

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

/// Spatial downsampling of the deepest encoder stage.
const TOTAL_STRIDE: usize = 32;

/// Encoder stage indices concatenated at each decoder level, coarsest first.
/// Stage 4 feeds the fusion bottleneck; the two finest levels have no skips.
const DECODER_SKIPS: [&[usize]; 5] = [&[3], &[2], &[1, 0], &[], &[]];

#[derive(Debug, Clone)]
struct Conv {
    name: String,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    bias: bool,
}

impl Conv {
    fn new(name: String, c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        Conv {
            name,
            c_in,
            c_out,
            k,
            stride,
            pad: (k - 1) / 2,
            bias: false,
        }
    }
}

#[derive(Debug, Clone)]
struct Norm {
    name: String,
    c: usize,
}

#[derive(Debug, Clone)]
struct Bottleneck {
    reduce: (Conv, Norm),
    spatial: (Conv, Norm),
    expand: (Conv, Norm),
    shortcut: Option<(Conv, Norm)>,
}

/// ResNet-50-shaped feature extractor: a 7×7/2 stem with 3×3/2 max pooling,
/// then four bottleneck stages with strides 1, 2, 2, 2.
#[derive(Debug, Clone)]
pub struct Encoder {
    stem: (Conv, Norm),
    stages: Vec<Vec<Bottleneck>>,
    channels: [usize; 5],
}

#[derive(Debug, Clone, PartialEq)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    He { fan_in: usize },
    Zeros,
    Ones,
}

fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

fn conv_specs(c: &Conv, out: &mut Vec<ParamSpec>) {
    out.push(ParamSpec {
        name: format!("{}.weight", c.name),
        shape: vec![c.c_out, c.c_in, c.k, c.k],
        init: Init::He {
            fan_in: c.c_in * c.k * c.k,
        },
    });
    if c.bias {
        out.push(ParamSpec {
            name: format!("{}.bias", c.name),
            shape: vec![c.c_out],
            init: Init::Zeros,
        });
    }
}

fn norm_specs(n: &Norm, out: &mut Vec<ParamSpec>) {
    for (suffix, init) in [
        ("weight", Init::Ones),
        ("bias", Init::Zeros),
        ("running_mean", Init::Zeros),
        ("running_var", Init::Ones),
    ] {
        out.push(ParamSpec {
            name: format!("{}.{suffix}", n.name),
            shape: vec![n.c],
            init,
        });
    }
}

fn pair_specs(p: &(Conv, Norm), out: &mut Vec<ParamSpec>) {
    conv_specs(&p.0, out);
    norm_specs(&p.1, out);
}

fn conv_norm(name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> (Conv, Norm) {
    (
        Conv::new(format!("{name}.conv"), c_in, c_out, k, stride),
        Norm {
            name: format!("{name}.bn"),
            c: c_out,
        },
    )
}

pub fn build_encoder(config: &NetConfig, prefix: &str) -> Result<Encoder> {
    config.validate()?;
    let stem_c = config.scaled(STEM_CHANNELS);
    let stem = conv_norm(&format!("{prefix}.stem"), 3, stem_c, 7, 2);
    let mut channels = [stem_c, 0, 0, 0, 0];
    let mut c_in = stem_c;
    let mut stages = Vec::with_capacity(4);
    for (s, (&blocks, &full)) in config
        .blocks_per_stage
        .iter()
        .zip(&STAGE_CHANNELS)
        .enumerate()
    {
        let mid = config.scaled(full / 4);
        let out = config.scaled(full);
        let stride = if s == 0 { 1 } else { 2 };
        let stage = (0..blocks)
            .map(|b| {
                let name = format!("{prefix}.stage{}.block{b}", s + 1);
                let block_stride = if b == 0 { stride } else { 1 };
                let block_in = if b == 0 { c_in } else { out };
                Bottleneck {
                    reduce: conv_norm(&format!("{name}.reduce"), block_in, mid, 1, 1),
                    spatial: conv_norm(&format!("{name}.spatial"), mid, mid, 3, block_stride),
                    expand: conv_norm(&format!("{name}.expand"), mid, out, 1, 1),
                    shortcut: (block_in != out || block_stride != 1).then(|| {
                        conv_norm(&format!("{name}.shortcut"), block_in, out, 1, block_stride)
                    }),
                }
            })
            .collect();
        stages.push(stage);
        channels[s + 1] = out;
        c_in = out;
    }
    Ok(Encoder {
        stem,
        stages,
        channels,
    })
}

impl Encoder {
    /// Channels of the five feature maps (stem, stage 1..4).
    pub fn channels(&self) -> [usize; 5] {
        self.channels
    }

    fn specs(&self, out: &mut Vec<ParamSpec>) {
        pair_specs(&self.stem, out);
        for block in self.stages.iter().flatten() {
            pair_specs(&block.reduce, out);
            pair_specs(&block.spatial, out);
            pair_specs(&block.expand, out);
            if let Some(s) = &block.shortcut {
                pair_specs(s, out);
            }
        }
    }

    fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<[Var; 5]> {
        let h = ctx.conv_norm_relu(&self.stem, x)?;
        let stem = ctx.g.maxpool2d(h, 3, 2, 1)?;
        let mut feats = [stem; 5];
        let mut cur = stem;
        for (s, stage) in self.stages.iter().enumerate() {
            for block in stage {
                let y = ctx.conv_norm_relu(&block.reduce, cur)?;
                let y = ctx.conv_norm_relu(&block.spatial, y)?;
                let y = ctx.conv_norm(&block.expand, y)?;
                let skip = match &block.shortcut {
                    Some(sc) => ctx.conv_norm(sc, cur)?,
                    None => cur,
                };
                let sum = ctx.g.add(y, skip)?;
                cur = ctx.g.relu(sum);
            }
            feats[s + 1] = cur;
        }
        Ok(feats)
    }

    /// He-initialized parameters for this encoder alone.
    pub fn init_weights(&self, seed: u64) -> ModelWeights {
        let mut specs = Vec::new();
        self.specs(&mut specs);
        init_weights(&specs, seed)
    }

    /// Eval-mode feature maps for `input` (N×3×H×W).
    pub fn features(&self, weights: &ModelWeights, input: &Tensor4<f32>) -> Result<Vec<Tensor4<f32>>> {
        let mut g = Graph::new();
        let x = g.leaf(input.clone());
        let mut ctx = Ctx::new(&mut g, weights, false);
        let feats = self.forward(&mut ctx, x)?;
        Ok(feats.iter().map(|&v| g.value(v).clone()).collect())
    }
}

#[derive(Debug, Clone)]
struct DecoderStage {
    block: (Conv, Norm),
    skips: &'static [usize],
}

#[derive(Debug, Clone)]
struct NetDef {
    encoders: Vec<Encoder>,
    fusion: (Conv, Norm),
    decoder: Vec<DecoderStage>,
    head: Conv,
}

impl NetDef {
    fn build(config: &NetConfig) -> Result<Self> {
        let mut encoders = vec![build_encoder(config, "encoder_frame")?];
        if config.variant.is_dual() {
            encoders.push(build_encoder(config, "encoder_cue")?);
        }
        let enc_channels = encoders[0].channels();
        let n_enc = encoders.len();
        let fused = config.scaled(config.bottleneck_channels);
        let fusion = (
            Conv::new("fusion.conv".into(), n_enc * enc_channels[4], fused, 1, 1),
            Norm {
                name: "fusion.bn".into(),
                c: fused,
            },
        );
        let mut c_in = fused;
        let decoder = DECODER_SKIPS
            .iter()
            .zip(DECODER_CHANNELS)
            .enumerate()
            .map(|(i, (&skips, full))| {
                let skip_c: usize = skips.iter().map(|&s| enc_channels[s]).sum();
                let out = config.scaled(full);
                let stage = DecoderStage {
                    block: conv_norm(&format!("decoder.up{i}"), c_in + n_enc * skip_c, out, 3, 1),
                    skips,
                };
                c_in = out;
                stage
            })
            .collect();
        let mut head = Conv::new("head".into(), c_in, config.num_classes, 1, 1);
        head.bias = true;
        Ok(NetDef {
            encoders,
            fusion,
            decoder,
            head,
        })
    }

    fn specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        for e in &self.encoders {
            e.specs(&mut out);
        }
        pair_specs(&self.fusion, &mut out);
        for d in &self.decoder {
            pair_specs(&d.block, &mut out);
        }
        conv_specs(&self.head, &mut out);
        out
    }
}

fn init_weights(specs: &[ParamSpec], seed: u64) -> ModelWeights {
    let mut sorted: Vec<&ParamSpec> = specs.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted
        .into_iter()
        .map(|s| {
            let len: usize = s.shape.iter().product();
            let data = match s.init {
                Init::Zeros => vec![0.0; len],
                Init::Ones => vec![1.0; len],
                Init::He { fan_in } => {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                        .expect("positive standard deviation");
                    (0..len).map(|_| normal.sample(&mut rng) as f32).collect()
                }
            };
            (
                s.name.clone(),
                WeightTensor {
                    shape: s.shape.clone(),
                    data,
                },
            )
        })
        .collect()
}

/// Per-forward state: the tape, parameter leaves and pending running-stat
/// updates from train-mode batch norms.
struct Ctx<'a> {
    g: &'a mut Graph<f32>,
    weights: &'a ModelWeights,
    train: bool,
    params: Vec<(String, Var)>,
    bn_updates: Vec<(String, RunningStats<f32>)>,
}

impl<'a> Ctx<'a> {
    fn new(g: &'a mut Graph<f32>, weights: &'a ModelWeights, train: bool) -> Self {
        Ctx {
            g,
            weights,
            train,
            params: Vec::new(),
            bn_updates: Vec::new(),
        }
    }

    fn weight(&self, name: &str) -> Result<&'a WeightTensor> {
        self.weights
            .get(name)
            .ok_or_else(|| Error::input(format!("missing parameter `{name}`")))
    }

    fn param(&mut self, name: String, shape: Shape4) -> Result<Var> {
        let w = self.weight(&name)?;
        let mut t = Tensor4::from_vec(shape, w.data.clone())?;
        t.requires_grad = self.train;
        let v = self.g.leaf(t);
        if self.train {
            self.params.push((name, v));
        }
        Ok(v)
    }

    fn conv(&mut self, c: &Conv, x: Var) -> Result<Var> {
        let w = self.param(
            format!("{}.weight", c.name),
            Shape4::new(c.c_out, c.c_in, c.k, c.k),
        )?;
        let b = if c.bias {
            Some(self.param(format!("{}.bias", c.name), Shape4::new(1, c.c_out, 1, 1))?)
        } else {
            None
        };
        self.g.conv2d(x, w, b, c.stride, c.pad)
    }

    fn norm(&mut self, n: &Norm, x: Var) -> Result<Var> {
        let shape = Shape4::new(1, n.c, 1, 1);
        let gamma = self.param(format!("{}.weight", n.name), shape)?;
        let beta = self.param(format!("{}.bias", n.name), shape)?;
        let mut stats = RunningStats {
            mean: self.weight(&format!("{}.running_mean", n.name))?.data.clone(),
            var: self.weight(&format!("{}.running_var", n.name))?.data.clone(),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        };
        if self.train {
            let y = self.g.batchnorm2d(x, gamma, beta, BnMode::Train(&mut stats))?;
            self.bn_updates.push((n.name.clone(), stats));
            Ok(y)
        } else {
            self.g.batchnorm2d(x, gamma, beta, BnMode::Eval(&stats))
        }
    }

    fn conv_norm(&mut self, p: &(Conv, Norm), x: Var) -> Result<Var> {
        let y = self.conv(&p.0, x)?;
        self.norm(&p.1, y)
    }

    fn conv_norm_relu(&mut self, p: &(Conv, Norm), x: Var) -> Result<Var> {
        let y = self.conv_norm(p, x)?;
        Ok(self.g.relu(y))
    }
}

pub struct ForwardOutput {
    pub logits: Var,
    /// Trainable parameter leaves (train mode only).
    pub params: Vec<(String, Var)>,
    pub bn_updates: Vec<(String, RunningStats<f32>)>,
}

/// A segmentation network and its weights.
#[derive(Debug, Clone)]
pub struct Segmenter {
    config: NetConfig,
    def: NetDef,
    weights: ModelWeights,
}

impl Segmenter {
    /// He-initialized network; `seed` fully determines the weights.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        let def = NetDef::build(&config)?;
        let weights = init_weights(&def.specs(), seed);
        Ok(Segmenter {
            config,
            def,
            weights,
        })
    }

    /// Checks names and shapes of `weights` against `config`.
    pub fn from_weights(config: NetConfig, weights: ModelWeights) -> Result<Self> {
        let def = NetDef::build(&config)?;
        let specs = def.specs();
        let mismatch = |reason: String| Error::format(0, reason);
        let mut expected: Vec<&ParamSpec> = specs.iter().collect();
        expected.sort_by(|a, b| a.name.cmp(&b.name));
        if let Some(s) = expected.iter().find(|s| !weights.contains_key(&s.name)) {
            return Err(mismatch(format!(
                "weights lack parameter `{}` required by variant {}",
                s.name, config.variant
            )));
        }
        let names: BTreeMap<&str, &ParamSpec> =
            expected.iter().map(|s| (s.name.as_str(), *s)).collect();
        if let Some(name) = weights.keys().find(|n| !names.contains_key(n.as_str())) {
            return Err(mismatch(format!(
                "unexpected parameter `{name}` for variant {}",
                config.variant
            )));
        }
        for (name, w) in &weights {
            let spec = names[name.as_str()];
            if spec.shape != w.shape {
                return Err(mismatch(format!(
                    "parameter `{name}` has shape {:?}, config expects {:?}",
                    w.shape, spec.shape
                )));
            }
        }
        Ok(Segmenter {
            config,
            def,
            weights,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn encoder(&self, i: usize) -> Option<&Encoder> {
        self.def.encoders.get(i)
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .filter(|(n, _)| !is_buffer(n))
            .map(|(_, w)| w.len())
            .sum()
    }

    /// Input channels of the fusion 1×1 convolution and its output channels.
    pub fn fusion_channels(&self) -> (usize, usize) {
        (self.def.fusion.0.c_in, self.def.fusion.0.c_out)
    }

    fn check_inputs(&self, frame: Shape4, cue: Option<Shape4>) -> Result<()> {
        let variant = self.config.variant;
        if frame.c != 3 {
            return Err(Error::input(format!("frame must have 3 channels, got {frame}")));
        }
        if frame.h % TOTAL_STRIDE != 0 || frame.w % TOTAL_STRIDE != 0 || frame.h == 0 || frame.w == 0 {
            return Err(Error::input(format!(
                "frame {frame}: height and width must be positive multiples of {TOTAL_STRIDE}"
            )));
        }
        match (variant.is_dual(), cue) {
            (true, None) => Err(Error::input(format!("variant {variant} needs a motion cue"))),
            (false, Some(_)) => Err(Error::input(format!(
                "variant {variant} takes no motion cue"
            ))),
            (true, Some(c)) if c != frame => Err(Error::input(format!(
                "variant {variant}: cue {c} does not match frame {frame}"
            ))),
            _ => Ok(()),
        }
    }

    /// Records the network on `g`. In train mode parameters track gradients
    /// and batch norms use batch statistics.
    pub fn forward(
        &self,
        g: &mut Graph<f32>,
        frame: Var,
        cue: Option<Var>,
        train: bool,
    ) -> Result<ForwardOutput> {
        self.check_inputs(g.shape(frame), cue.map(|c| g.shape(c)))?;
        let mut ctx = Ctx::new(g, &self.weights, train);
        let mut feats = vec![self.def.encoders[0].forward(&mut ctx, frame)?];
        if let (Some(enc), Some(cue)) = (self.def.encoders.get(1), cue) {
            feats.push(enc.forward(&mut ctx, cue)?);
        }

        let mut deep = feats[0][4];
        for f in &feats[1..] {
            deep = ctx.g.concat_channels(deep, f[4])?;
        }
        let mut x = ctx.conv_norm_relu(&self.def.fusion, deep)?;
        for stage in &self.def.decoder {
            x = ctx.g.upsample_bilinear2x(x);
            for f in &feats {
                for &s in stage.skips {
                    x = ctx.g.concat_channels(x, f[s])?;
                }
            }
            x = ctx.conv_norm_relu(&stage.block, x)?;
        }
        let logits = ctx.conv(&self.def.head, x)?;
        Ok(ForwardOutput {
            logits,
            params: ctx.params,
            bn_updates: ctx.bn_updates,
        })
    }

    /// Eval-mode logits, N×2×H×W.
    pub fn predict(&self, frame: &Tensor4<f32>, cue: Option<&Tensor4<f32>>) -> Result<Tensor4<f32>> {
        let mut g = Graph::new();
        let f = g.leaf(frame.clone());
        let c = cue.map(|c| g.leaf(c.clone()));
        let out = self.forward(&mut g, f, c, false)?;
        Ok(g.take_value(out.logits))
    }

    /// Per-pixel argmax over the two logits, one mask per batch item.
    pub fn segment(&self, frame: &Tensor4<f32>, cue: Option<&Tensor4<f32>>) -> Result<Vec<SegMask>> {
        let logits = self.predict(frame, cue)?;
        Ok(argmax_masks(&logits))
    }

    /// One optimizer step on a batch; returns the batch loss before the update.
    pub fn train_step(
        &mut self,
        frame: &Tensor4<f32>,
        cue: Option<&Tensor4<f32>>,
        mask: &[u8],
        adam: &mut AdamState,
    ) -> Result<f32> {
        let mut g = Graph::new();
        let f = g.leaf(frame.clone());
        let c = cue.map(|c| g.leaf(c.clone()));
        let out = self.forward(&mut g, f, c, true)?;
        let loss = g.softmax_cross_entropy(out.logits, mask, None)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {value} at optimizer step {}",
                adam.step + 1
            )));
        }
        g.backward(loss)?;

        let vars: BTreeMap<&str, Var> = out.params.iter().map(|(n, v)| (n.as_str(), *v)).collect();
        let mut named = Vec::with_capacity(vars.len());
        for (name, w) in self.weights.iter_mut() {
            if is_buffer(name) {
                continue;
            }
            let var = vars
                .get(name.as_str())
                .ok_or_else(|| Error::input(format!("parameter `{name}` unused in forward")))?;
            let grad = g
                .grad(*var)
                .ok_or_else(|| Error::input(format!("no gradient reached `{name}`")))?;
            named.push(NamedParam {
                name,
                value: &mut w.data,
                grad,
            });
        }
        adam_step(&mut named, adam)?;
        drop(named);

        for (name, stats) in out.bn_updates {
            if let Some(m) = self.weights.get_mut(&format!("{name}.running_mean")) {
                m.data = stats.mean;
            }
            if let Some(v) = self.weights.get_mut(&format!("{name}.running_var")) {
                v.data = stats.var;
            }
        }
        Ok(value)
    }
}

/// Class-1 wherever its logit exceeds class 0.
pub fn argmax_masks(logits: &Tensor4<f32>) -> Vec<SegMask> {
    let s = logits.shape();
    (0..s.n)
        .map(|n| {
            let (bg, fg) = (logits.plane(n, 0), logits.plane(n, 1));
            let data = bg.iter().zip(fg).map(|(b, f)| u8::from(f > b)).collect();
            SegMask::new(s.w, s.h, data).expect("binary argmax")
        })
        .collect()
}
