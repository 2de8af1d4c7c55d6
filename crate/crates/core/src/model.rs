//! Dual-branch network: a time-distributed conv backbone with optional
//! pose-guided spatial attention, a skeletal keypoint branch, temporal
//! self-attention and LSTM summarisers, and a late-fusion softmax head.
//!
//! Parameters are stored by layer path (for example `spatial.lstm.kernel`)
//! and initialised from a seed mixed with that path, so layers shared by two
//! variants start from identical weights.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array4, ArrayD, ArrayView4, ArrayView5, Axis, IxDyn};
use penkick_autograd::{ConvSpec, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{NUM_CLASSES, NUM_KEYPOINTS, SEQ_LEN};

const POSE_DIM: usize = NUM_KEYPOINTS * 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModelVariant {
    VisualOnly,
    PoseOnly,
    DualNoAttention,
    Full,
}

impl ModelVariant {
    /// Ablation table order.
    pub const ALL: [ModelVariant; 4] = [
        ModelVariant::VisualOnly,
        ModelVariant::PoseOnly,
        ModelVariant::DualNoAttention,
        ModelVariant::Full,
    ];

    pub fn uses_spatial(self) -> bool {
        self != ModelVariant::PoseOnly
    }

    pub fn uses_skeletal(self) -> bool {
        self != ModelVariant::VisualOnly
    }

    pub fn uses_pose_attention(self) -> bool {
        self == ModelVariant::Full
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::VisualOnly => "VISUAL_ONLY",
            ModelVariant::PoseOnly => "POSE_ONLY",
            ModelVariant::DualNoAttention => "DUAL_NO_ATTENTION",
            ModelVariant::Full => "FULL",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ModelVariant::VisualOnly => "Visual-only (spatial feature branch)",
            ModelVariant::PoseOnly => "Pose-only (skeletal feature branch)",
            ModelVariant::DualNoAttention => "Dual-branch (no pose-guided attention)",
            ModelVariant::Full => "Full model (with pose-guided attention)",
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_uppercase().replace('-', "_");
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::Input(format!("unknown model variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `(height, width)` of input frames.
    pub input_hw: (usize, usize),
    /// Output channels of each stride-2 backbone stage.
    pub backbone_widths: Vec<usize>,
    pub attn_heads: usize,
    pub attn_key_dim: usize,
    pub lstm_units_spatial: usize,
    pub lstm_units_skeletal: usize,
    pub fusion_dense_units: usize,
    pub dropout_rate: f64,
    pub seq_len: usize,
    pub n_keypoints: usize,
    pub n_classes: usize,
    pub variant: ModelVariant,
    pub seed: u64,
    /// Weight of the newest batch in the running batch-norm statistics.
    pub bn_epsilon: f64,
}

impl ModelConfig {
    pub fn full(variant: ModelVariant, seed: u64) -> Self {
        Self {
            input_hw: (224, 224),
            backbone_widths: vec![16, 32, 64, 96, 128],
            attn_heads: 4,
            attn_key_dim: 32,
            lstm_units_spatial: 128,
            lstm_units_skeletal: 64,
            fusion_dense_units: 256,
            dropout_rate: 0.5,
            seq_len: SEQ_LEN,
            n_keypoints: NUM_KEYPOINTS,
            n_classes: NUM_CLASSES,
            variant,
            seed,
            bn_epsilon: 1e-3,
        }
    }

    pub fn toy(variant: ModelVariant, seed: u64) -> Self {
        Self {
            input_hw: (64, 64),
            backbone_widths: vec![8, 16, 32],
            attn_heads: 2,
            attn_key_dim: 8,
            lstm_units_spatial: 32,
            lstm_units_skeletal: 32,
            fusion_dense_units: 64,
            ..Self::full(variant, seed)
        }
    }

    pub fn with_variant(&self, variant: ModelVariant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let stages = self.backbone_widths.len();
        if stages == 0 || self.backbone_widths.contains(&0) {
            return bad("backbone needs at least one stage of nonzero width".into());
        }
        let div = 1usize << stages;
        let (h, w) = self.input_hw;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return bad(format!("input {h}x{w} not divisible by 2^{stages}"));
        }
        if self.seq_len != SEQ_LEN || self.n_keypoints != NUM_KEYPOINTS || self.n_classes != NUM_CLASSES {
            return bad(format!(
                "seq_len/n_keypoints/n_classes must be {SEQ_LEN}/{NUM_KEYPOINTS}/{NUM_CLASSES}"
            ));
        }
        if self.attn_heads == 0 || self.attn_key_dim == 0 {
            return bad("attention heads and key_dim must be positive".into());
        }
        if self.lstm_units_spatial == 0 || self.lstm_units_skeletal == 0 || self.fusion_dense_units == 0 {
            return bad("layer widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.bn_epsilon > 0.0) {
            return bad("batch-norm epsilon must be positive".into());
        }
        Ok(())
    }

    /// Channels of the final backbone stage.
    pub fn feature_channels(&self) -> usize {
        *self.backbone_widths.last().expect("validated")
    }

    /// `(h, w)` of backbone feature maps.
    pub fn feature_hw(&self) -> (usize, usize) {
        let div = 1usize << self.backbone_widths.len();
        (self.input_hw.0 / div, self.input_hw.1 / div)
    }

    pub fn fusion_width(&self) -> usize {
        let mut f = 0;
        if self.variant.uses_spatial() {
            f += self.lstm_units_spatial;
        }
        if self.variant.uses_skeletal() {
            f += self.lstm_units_skeletal;
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Glorot {
        fan_in: usize,
        fan_out: usize,
    },
    Zeros,
    Ones,
    /// LSTM bias: zeros with the forget-gate slice set to one.
    ForgetBias(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

fn spec(name: String, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec {
        name,
        shape: shape.to_vec(),
        init,
    }
}

fn dense_specs(out: &mut Vec<ParamSpec>, prefix: &str, n_in: usize, n_out: usize) {
    out.push(spec(
        format!("{prefix}.kernel"),
        &[n_in, n_out],
        Init::Glorot {
            fan_in: n_in,
            fan_out: n_out,
        },
    ));
    out.push(spec(format!("{prefix}.bias"), &[n_out], Init::Zeros));
}

fn attention_specs(out: &mut Vec<ParamSpec>, prefix: &str, dim: usize, heads: usize, key_dim: usize) {
    let inner = heads * key_dim;
    for part in ["query", "key", "value"] {
        dense_specs(out, &format!("{prefix}.{part}"), dim, inner);
    }
    dense_specs(out, &format!("{prefix}.output"), inner, dim);
}

fn lstm_specs(out: &mut Vec<ParamSpec>, prefix: &str, n_in: usize, units: usize) {
    let g = 4 * units;
    out.push(spec(
        format!("{prefix}.kernel"),
        &[n_in, g],
        Init::Glorot {
            fan_in: n_in,
            fan_out: g,
        },
    ));
    out.push(spec(
        format!("{prefix}.recurrent_kernel"),
        &[units, g],
        Init::Glorot {
            fan_in: units,
            fan_out: g,
        },
    ));
    out.push(spec(format!("{prefix}.bias"), &[g], Init::ForgetBias(units)));
}

/// Trainable parameters of a configuration, in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let heads = cfg.attn_heads;
    let dk = cfg.attn_key_dim;
    if cfg.variant.uses_spatial() {
        let w = &cfg.backbone_widths;
        out.push(spec(
            "spatial.backbone.stem.kernel".into(),
            &[3, 3, 3, w[0]],
            Init::Glorot {
                fan_in: 27,
                fan_out: 9 * w[0],
            },
        ));
        out.push(spec("spatial.backbone.stem.bias".into(), &[w[0]], Init::Zeros));
        for i in 1..w.len() {
            let p = format!("spatial.backbone.stage{i}");
            let (cin, cout) = (w[i - 1], w[i]);
            out.push(spec(
                format!("{p}.dw.kernel"),
                &[3, 3, cin],
                Init::Glorot { fan_in: 9, fan_out: 9 },
            ));
            out.push(spec(format!("{p}.dw.bias"), &[cin], Init::Zeros));
            out.push(spec(
                format!("{p}.pw.kernel"),
                &[cin, cout],
                Init::Glorot {
                    fan_in: cin,
                    fan_out: cout,
                },
            ));
            out.push(spec(format!("{p}.pw.bias"), &[cout], Init::Zeros));
        }
        let c = cfg.feature_channels();
        if cfg.variant.uses_pose_attention() {
            let p = "spatial.pose_attention";
            dense_specs(&mut out, &format!("{p}.pose_proj"), POSE_DIM, c);
            out.push(spec(
                format!("{p}.mix.kernel"),
                &[1, 1, 2 * c, c],
                Init::Glorot {
                    fan_in: 2 * c,
                    fan_out: c,
                },
            ));
            out.push(spec(format!("{p}.mix.bias"), &[c], Init::Zeros));
            out.push(spec(
                format!("{p}.map.kernel"),
                &[3, 3, c, 1],
                Init::Glorot {
                    fan_in: 9 * c,
                    fan_out: 9,
                },
            ));
            out.push(spec(format!("{p}.map.bias"), &[1], Init::Zeros));
        }
        attention_specs(&mut out, "spatial.temporal_attention", c, heads, dk);
        lstm_specs(&mut out, "spatial.lstm", c, cfg.lstm_units_spatial);
    }
    if cfg.variant.uses_skeletal() {
        attention_specs(&mut out, "skeletal.temporal_attention", POSE_DIM, heads, dk);
        lstm_specs(&mut out, "skeletal.lstm", POSE_DIM, cfg.lstm_units_skeletal);
    }
    let f = cfg.fusion_width();
    out.push(spec("fusion.bn.gamma".into(), &[f], Init::Ones));
    out.push(spec("fusion.bn.beta".into(), &[f], Init::Zeros));
    dense_specs(&mut out, "fusion.dense", f, cfg.fusion_dense_units);
    dense_specs(&mut out, "fusion.output", cfg.fusion_dense_units, cfg.n_classes);
    out
}

pub const BN_MEAN: &str = "fusion.bn.population_mean";
pub const BN_VAR: &str = "fusion.bn.population_variance";

/// Exact number of trainable scalars.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    param_specs(cfg).iter().map(|s| s.shape.iter().product::<usize>()).sum()
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn init_tensor(s: &ParamSpec, seed: u64) -> Tensor {
    let shape = IxDyn(&s.shape);
    match s.init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::ones(shape),
        Init::ForgetBias(units) => {
            let mut t = Tensor::zeros(shape);
            t.slice_axis_mut(Axis(0), ndarray::Slice::from(units..2 * units))
                .fill(1.0);
            t
        }
        Init::Glorot { fan_in, fan_out } => {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&s.name));
            ArrayD::from_shape_simple_fn(shape, || rng.random_range(-limit..limit))
        }
    }
}

/// Forward-pass options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Running batch-norm statistics, no dropout.
    Eval,
    /// Batch statistics and inverted dropout drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
}

/// Probabilities plus, for the full variant, the per-frame attention maps `[B, T, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub probs: Array2<f64>,
    pub attention: Option<Array4<f64>>,
}

/// Result of one differentiated forward pass.
#[derive(Debug, Clone)]
pub struct TrainStep {
    pub loss: f64,
    pub probs: Array2<f64>,
    pub grads: BTreeMap<String, Tensor>,
    pub bn_mean: Tensor,
    pub bn_var: Tensor,
}

struct Net<'m> {
    model: &'m Model,
    g: Graph,
    vars: BTreeMap<&'m str, Var>,
    trainable: bool,
}

struct Built {
    logits: Var,
    attention: Option<Var>,
    bn_stats: Option<(Tensor, Tensor)>,
}

impl<'m> Net<'m> {
    fn new(model: &'m Model, trainable: bool) -> Self {
        Self {
            model,
            g: Graph::new(),
            vars: BTreeMap::new(),
            trainable,
        }
    }

    fn p(&mut self, name: &str) -> Var {
        if let Some(v) = self.vars.get(name) {
            return *v;
        }
        let (key, value) = self
            .model
            .params
            .get_key_value(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing"));
        let v = if self.trainable {
            self.g.variable(value.clone())
        } else {
            self.g.constant(value.clone())
        };
        self.vars.insert(key.as_str(), v);
        v
    }

    fn dense(&mut self, prefix: &str, x: Var) -> Var {
        let w = self.p(&format!("{prefix}.kernel"));
        let b = self.p(&format!("{prefix}.bias"));
        self.g.linear(x, w, b)
    }

    fn conv(&mut self, prefix: &str, x: Var, spec: ConvSpec) -> Var {
        let w = self.p(&format!("{prefix}.kernel"));
        let b = self.p(&format!("{prefix}.bias"));
        let y = self.g.conv2d(x, w, spec);
        self.g.add_bias(y, b)
    }

    /// `[N, H, W, 3]` -> `[N, h, w, C]`.
    fn backbone(&mut self, x: Var) -> Var {
        let stride2 = ConvSpec::new(3, 2, 1);
        let y = self.conv("spatial.backbone.stem", x, stride2);
        let mut y = self.g.relu6(y);
        for i in 1..self.model.config.backbone_widths.len() {
            let p = format!("spatial.backbone.stage{i}");
            let dw = self.p(&format!("{p}.dw.kernel"));
            let db = self.p(&format!("{p}.dw.bias"));
            let z = self.g.depthwise_conv2d(y, dw, stride2);
            let z = self.g.add_bias(z, db);
            let z = self.g.relu6(z);
            let z = self.dense(&format!("{p}.pw"), z);
            y = self.g.relu6(z);
        }
        y
    }

    /// Returns the gated features and the attention map `[N, h, w, 1]`.
    fn pose_attention(&mut self, pose: Var, feat: Var) -> (Var, Var) {
        let shape = self.g.shape(feat).to_vec();
        let (h, w) = (shape[1], shape[2]);
        let p = "spatial.pose_attention";
        let proj = self.dense(&format!("{p}.pose_proj"), pose);
        let proj = self.g.relu(proj);
        let tiled = self.g.broadcast_spatial(proj, h, w);
        let both = self.g.concat_last(&[feat, tiled]);
        let mixed = self.conv(&format!("{p}.mix"), both, ConvSpec::new(1, 1, 0));
        let mixed = self.g.relu(mixed);
        let logits = self.conv(&format!("{p}.map"), mixed, ConvSpec::new(3, 1, 1));
        let a = self.g.sigmoid(logits);
        (self.g.gate_channels(feat, a), a)
    }

    /// `[B, T, D]` -> `[B, T, D]`, no residual.
    fn self_attention(&mut self, prefix: &str, x: Var) -> Var {
        let heads = self.model.config.attn_heads;
        let q = self.dense(&format!("{prefix}.query"), x);
        let k = self.dense(&format!("{prefix}.key"), x);
        let v = self.dense(&format!("{prefix}.value"), x);
        let o = self.g.attention(q, k, v, heads);
        self.dense(&format!("{prefix}.output"), o)
    }

    /// `[B, T, D]` -> final hidden state `[B, units]`.
    fn lstm(&mut self, prefix: &str, x: Var, units: usize) -> Var {
        let shape = self.g.shape(x).to_vec();
        let (b, t) = (shape[0], shape[1]);
        let xz = self.dense(prefix, x);
        let rk = self.p(&format!("{prefix}.recurrent_kernel"));
        let mut h = self.g.constant(Tensor::zeros(IxDyn(&[b, units])));
        let mut c = self.g.constant(Tensor::zeros(IxDyn(&[b, units])));
        for step in 0..t {
            let zx = self.g.select_step(xz, step);
            let zh = self.g.matmul(h, rk);
            let z = self.g.add(zx, zh);
            let gate = |g: &mut Graph, k: usize| g.slice_last(z, k * units, units);
            let i = gate(&mut self.g, 0);
            let f = gate(&mut self.g, 1);
            let cand = gate(&mut self.g, 2);
            let o = gate(&mut self.g, 3);
            let i = self.g.sigmoid(i);
            let f = self.g.sigmoid(f);
            let cand = self.g.tanh(cand);
            let o = self.g.sigmoid(o);
            let keep = self.g.mul(f, c);
            let write = self.g.mul(i, cand);
            c = self.g.add(keep, write);
            let tc = self.g.tanh(c);
            h = self.g.mul(o, tc);
        }
        h
    }

    fn spatial(&mut self, frames: &ArrayView5<f64>, keypoints: &ArrayView4<f64>) -> (Var, Option<Var>) {
        let model = self.model;
        let cfg = &model.config;
        let (b, t, hh, ww) = (
            frames.shape()[0],
            frames.shape()[1],
            frames.shape()[2],
            frames.shape()[3],
        );
        let n = b * t;
        let x = frames
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(&[n, hh, ww, 3]))
            .expect("contiguous frames");
        let x = self.g.constant(x);
        let mut feat = self.backbone(x);
        let mut att = None;
        if cfg.variant.uses_pose_attention() {
            let pose = keypoints
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(IxDyn(&[n, POSE_DIM]))
                .expect("contiguous keypoints");
            let pose = self.g.constant(pose);
            let (gated, a) = self.pose_attention(pose, feat);
            feat = gated;
            att = Some(a);
        }
        let pooled = self.g.global_avg_pool(feat);
        let c = cfg.feature_channels();
        let seq = self.g.reshape(pooled, &[b, t, c]);
        let seq = self.self_attention("spatial.temporal_attention", seq);
        let units = cfg.lstm_units_spatial;
        (self.lstm("spatial.lstm", seq, units), att)
    }

    fn skeletal(&mut self, keypoints: &ArrayView4<f64>) -> Var {
        let (b, t) = (keypoints.shape()[0], keypoints.shape()[1]);
        let x = keypoints
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(&[b, t, POSE_DIM]))
            .expect("contiguous keypoints");
        let x = self.g.constant(x);
        let seq = self.self_attention("skeletal.temporal_attention", x);
        let units = self.model.config.lstm_units_skeletal;
        self.lstm("skeletal.lstm", seq, units)
    }

    fn fusion(&mut self, parts: &[Var], mode: Mode) -> (Var, Option<(Tensor, Tensor)>) {
        let model = self.model;
        let cfg = &model.config;
        let x = self.g.concat_last(parts);
        let gamma = self.p("fusion.bn.gamma");
        let beta = self.p("fusion.bn.beta");
        let (y, stats) = match mode {
            Mode::Eval => (
                self.g.batch_norm_eval(
                    x,
                    gamma,
                    beta,
                    &model.buffers[BN_MEAN],
                    &model.buffers[BN_VAR],
                    cfg.bn_epsilon,
                ),
                None,
            ),
            Mode::Train { .. } => {
                let (y, m, v) = self.g.batch_norm_train(x, gamma, beta, cfg.bn_epsilon);
                (y, Some((m, v)))
            }
        };
        let h = self.dense("fusion.dense", y);
        let mut h = self.g.relu(h);
        if let Mode::Train { dropout_seed } = mode {
            let rate = cfg.dropout_rate;
            if rate > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
                let keep = 1.0 - rate;
                let shape = IxDyn(self.g.shape(h));
                let mask =
                    ArrayD::from_shape_simple_fn(shape, || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                h = self.g.mul_const(h, mask);
            }
        }
        (self.dense("fusion.output", h), stats)
    }

    fn build(&mut self, frames: &ArrayView5<f64>, keypoints: &ArrayView4<f64>, mode: Mode) -> Built {
        let variant = self.model.config.variant;
        let mut parts = Vec::with_capacity(2);
        let mut attention = None;
        if variant.uses_spatial() {
            let (v, a) = self.spatial(frames, keypoints);
            parts.push(v);
            attention = a;
        }
        if variant.uses_skeletal() {
            parts.push(self.skeletal(keypoints));
        }
        let (logits, bn_stats) = self.fusion(&parts, mode);
        Built {
            logits,
            attention,
            bn_stats,
        }
    }
}

fn to_array2(t: &Tensor) -> Array2<f64> {
    t.view().into_dimensionality().expect("2-D tensor").to_owned()
}

impl Model {
    /// Freshly initialised model.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = param_specs(&config)
            .iter()
            .map(|s| (s.name.clone(), init_tensor(s, config.seed)))
            .collect();
        let f = config.fusion_width();
        let buffers = BTreeMap::from([
            (BN_MEAN.to_string(), Tensor::zeros(IxDyn(&[f]))),
            (BN_VAR.to_string(), Tensor::ones(IxDyn(&[f]))),
        ]);
        Ok(Self {
            config,
            params,
            buffers,
        })
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    fn check_frames(&self, frames: &ArrayView5<f64>) -> Result<()> {
        let (h, w) = self.config.input_hw;
        let expected = [frames.shape()[0], self.config.seq_len, h, w, 3];
        if frames.shape() != expected {
            return Err(Error::shape("frames", &expected, frames.shape()));
        }
        Ok(())
    }

    fn check_keypoints(&self, keypoints: &ArrayView4<f64>) -> Result<()> {
        let expected = [keypoints.shape()[0], self.config.seq_len, NUM_KEYPOINTS, 2];
        if keypoints.shape() != expected {
            return Err(Error::shape("keypoints", &expected, keypoints.shape()));
        }
        Ok(())
    }

    fn check_inputs(&self, frames: &ArrayView5<f64>, keypoints: &ArrayView4<f64>) -> Result<()> {
        self.check_frames(frames)?;
        self.check_keypoints(keypoints)?;
        if frames.shape()[0] != keypoints.shape()[0] {
            return Err(Error::shape("batch", &[frames.shape()[0]], &[keypoints.shape()[0]]));
        }
        if frames.shape()[0] == 0 {
            return Err(Error::InsufficientData("empty batch".into()));
        }
        Ok(())
    }

    /// Class probabilities `[B, 3]` for frames `[B, 8, H, W, 3]` and keypoints `[B, 8, 17, 2]`.
    pub fn forward(&self, frames: ArrayView5<f64>, keypoints: ArrayView4<f64>) -> Result<ForwardOutput> {
        self.check_inputs(&frames, &keypoints)?;
        let mut net = Net::new(self, false);
        let built = net.build(&frames, &keypoints, Mode::Eval);
        let logits = to_array2(net.g.value(built.logits));
        let attention = built.attention.map(|a| {
            let v = net.g.value(a);
            let (b, t) = (frames.shape()[0], frames.shape()[1]);
            let (h, w) = (v.shape()[1], v.shape()[2]);
            v.to_owned()
                .into_shape_with_order((b, t, h, w))
                .expect("attention map layout")
        });
        Ok(ForwardOutput {
            probs: penkick_autograd::softmax_rows(&logits),
            attention,
        })
    }

    /// Per-frame feature maps `[N, h, w, C]` for frames `[N, H, W, 3]`.
    pub fn backbone_features(&self, frames: ArrayView4<f64>) -> Result<Array4<f64>> {
        self.require(self.config.variant.uses_spatial(), "backbone_features")?;
        let (h, w) = self.config.input_hw;
        let expected = [frames.shape()[0], h, w, 3];
        if frames.shape() != expected {
            return Err(Error::shape("frame", &expected, frames.shape()));
        }
        let mut net = Net::new(self, false);
        let x = net.g.constant(frames.to_owned().into_dyn());
        let y = net.backbone(x);
        Ok(net.g.value(y).view().into_dimensionality().expect("4-D").to_owned())
    }

    /// Gated features and attention map for pose vectors `[N, 34]` and feature maps `[N, h, w, C]`.
    pub fn pose_guided_attention(
        &self,
        pose: ndarray::ArrayView2<f64>,
        features: ArrayView4<f64>,
    ) -> Result<(Array4<f64>, Array4<f64>)> {
        self.require(self.config.variant.uses_pose_attention(), "pose_guided_attention")?;
        let (fh, fw) = self.config.feature_hw();
        let c = self.config.feature_channels();
        let n = pose.nrows();
        if pose.ncols() != POSE_DIM {
            return Err(Error::shape("pose vector", &[n, POSE_DIM], pose.shape()));
        }
        let expected = [n, fh, fw, c];
        if features.shape() != expected {
            return Err(Error::shape("feature map", &expected, features.shape()));
        }
        let mut net = Net::new(self, false);
        let p = net.g.constant(pose.to_owned().into_dyn());
        let f = net.g.constant(features.to_owned().into_dyn());
        let (out, a) = net.pose_attention(p, f);
        let cast = |t: &Tensor| t.view().into_dimensionality().expect("4-D").to_owned();
        Ok((cast(net.g.value(out)), cast(net.g.value(a))))
    }

    /// Spatial summary `[B, lstm_units_spatial]`.
    pub fn spatial_branch(&self, frames: ArrayView5<f64>, keypoints: ArrayView4<f64>) -> Result<Array2<f64>> {
        self.require(self.config.variant.uses_spatial(), "spatial_branch")?;
        self.check_inputs(&frames, &keypoints)?;
        let mut net = Net::new(self, false);
        let (v, _) = net.spatial(&frames, &keypoints);
        Ok(to_array2(net.g.value(v)))
    }

    /// Skeletal summary `[B, lstm_units_skeletal]`.
    pub fn skeletal_branch(&self, keypoints: ArrayView4<f64>) -> Result<Array2<f64>> {
        self.require(self.config.variant.uses_skeletal(), "skeletal_branch")?;
        self.check_keypoints(&keypoints)?;
        let mut net = Net::new(self, false);
        let v = net.skeletal(&keypoints);
        Ok(to_array2(net.g.value(v)))
    }

    /// Inference-mode fusion head over the branch summaries this variant uses.
    pub fn fusion_head(
        &self,
        spatial: Option<ndarray::ArrayView2<f64>>,
        skeletal: Option<ndarray::ArrayView2<f64>>,
    ) -> Result<Array2<f64>> {
        let v = self.config.variant;
        if spatial.is_none() && skeletal.is_none() {
            return Err(Error::VariantViolation {
                variant: v.name().into(),
                operation: "fusion_head without inputs".into(),
            });
        }
        self.require(spatial.is_some() == v.uses_spatial(), "fusion_head (spatial input)")?;
        self.require(skeletal.is_some() == v.uses_skeletal(), "fusion_head (skeletal input)")?;
        let mut net = Net::new(self, false);
        let parts: Vec<Var> = [spatial, skeletal]
            .into_iter()
            .flatten()
            .map(|a| net.g.constant(a.to_owned().into_dyn()))
            .collect();
        let (logits, _) = net.fusion(&parts, Mode::Eval);
        Ok(penkick_autograd::softmax_rows(&to_array2(net.g.value(logits))))
    }

    fn require(&self, ok: bool, operation: &str) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::VariantViolation {
                variant: self.config.variant.name().into(),
                operation: operation.into(),
            })
        }
    }

    /// Mean cross-entropy against one-hot `targets` `[B, 3]` and its gradient
    /// with respect to every parameter reached from the loss.
    pub fn loss_and_grads(
        &self,
        frames: ArrayView5<f64>,
        keypoints: ArrayView4<f64>,
        targets: &Array2<f64>,
        mode: Mode,
    ) -> Result<TrainStep> {
        self.check_inputs(&frames, &keypoints)?;
        let b = frames.shape()[0];
        if targets.shape() != [b, self.config.n_classes] {
            return Err(Error::shape("targets", &[b, self.config.n_classes], targets.shape()));
        }
        let mut net = Net::new(self, true);
        let built = net.build(&frames, &keypoints, mode);
        let logits = to_array2(net.g.value(built.logits));
        let loss_var = net.g.softmax_cross_entropy(built.logits, targets.clone());
        let loss = net.g.value(loss_var).sum();
        let mut grads = net.g.backward(loss_var);
        let mut out = BTreeMap::new();
        for (name, var) in &net.vars {
            if let Some(g) = grads.take(*var) {
                out.insert((*name).to_string(), g);
            }
        }
        let (bn_mean, bn_var) = built
            .bn_stats
            .unwrap_or_else(|| (self.buffers[BN_MEAN].clone(), self.buffers[BN_VAR].clone()));
        Ok(TrainStep {
            loss,
            probs: penkick_autograd::softmax_rows(&logits),
            grads: out,
            bn_mean,
            bn_var,
        })
    }

    /// Checks every tensor against the shapes this model's config implies.
    pub fn check_layout(&self) -> Result<()> {
        for s in param_specs(&self.config) {
            match self.params.get(&s.name) {
                None => return Err(Error::Checkpoint(format!("missing layer `{}`", s.name))),
                Some(t) if t.shape() != s.shape.as_slice() => {
                    return Err(Error::Checkpoint(format!(
                        "layer `{}` has shape {:?}, expected {:?}",
                        s.name,
                        t.shape(),
                        s.shape
                    )))
                }
                _ => {}
            }
        }
        if self.params.len() != param_specs(&self.config).len() {
            return Err(Error::Checkpoint("unexpected extra layers".into()));
        }
        Ok(())
    }
}

/// Stacks samples into model inputs `[B, 8, H, W, 3]` and `[B, 8, 17, 2]`.
pub fn batch_inputs(samples: &[&crate::types::KickSample]) -> (ndarray::Array5<f64>, Array4<f64>) {
    let b = samples.len();
    let (h, w) = samples.first().map(|s| s.frame_hw()).unwrap_or((0, 0));
    let t = samples.first().map(|s| s.frames.len()).unwrap_or(SEQ_LEN);
    let mut frames = ndarray::Array5::zeros((b, t, h, w, 3));
    let mut kps = Array4::zeros((b, t, NUM_KEYPOINTS, 2));
    for (i, s) in samples.iter().enumerate() {
        frames.index_axis_mut(Axis(0), i).assign(&s.frames_tensor());
        kps.index_axis_mut(Axis(0), i).assign(&s.keypoints);
    }
    (frames, kps)
}

/// One parameter entry of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub step: f64,
    /// `|a - n| / max(|a|, |n|, 1e-6)`.
    pub rel_error: f64,
}

/// Compares analytic gradients of `n_params` randomly drawn scalars with
/// central differences. The step shrinks from 1e-6 while the one-sided
/// differences disagree, i.e. while a ReLU kink lies inside the window.
pub fn gradient_check(
    model: &Model,
    frames: ArrayView5<f64>,
    keypoints: ArrayView4<f64>,
    targets: &Array2<f64>,
    mode: Mode,
    n_params: usize,
    seed: u64,
) -> Result<Vec<GradCheck>> {
    let step = model.loss_and_grads(frames, keypoints, targets, mode)?;
    let names: Vec<&String> = model.params.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut loss_at = |name: &str, index: usize, delta: f64| -> Result<f64> {
        let slot = probe
            .params
            .get_mut(name)
            .expect("known parameter")
            .iter_mut()
            .nth(index)
            .expect("in range");
        let orig = *slot;
        *slot = orig + delta;
        let l = probe.loss_and_grads(frames, keypoints, targets, mode).map(|s| s.loss);
        *probe
            .params
            .get_mut(name)
            .expect("known parameter")
            .iter_mut()
            .nth(index)
            .expect("in range") = orig;
        l
    };
    let mut out = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = names[rng.random_range(0..names.len())].clone();
        let index = rng.random_range(0..model.params[&name].len());
        let analytic = step
            .grads
            .get(&name)
            .and_then(|g| g.iter().nth(index).copied())
            .unwrap_or(0.0);
        let mut h = 1e-6;
        let numeric = loop {
            let (up, down) = (loss_at(&name, index, h)?, loss_at(&name, index, -h)?);
            let fwd = (up - step.loss) / h;
            let bwd = (step.loss - down) / h;
            let smooth = (fwd - bwd).abs() <= 1e-2 * fwd.abs().max(bwd.abs()).max(1e-4);
            if smooth || h <= 1e-8 {
                break (up - down) / (2.0 * h);
            }
            h /= 10.0;
        };
        let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        out.push(GradCheck {
            name,
            index,
            analytic,
            numeric,
            step: h,
            rel_error,
        });
    }
    Ok(out)
}
