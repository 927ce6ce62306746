use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{Family, ModelSpec, BOTTLENECK_DIVISOR};
use super::{ModelError, Result};
use crate::nn::{
    batch_norm_infer, batch_norm_train, conv2d, dense, depthwise_separable_conv2d, global_avg_pool, relu, BatchStats,
    Conv2dGeometry, NormMode, DEFAULT_EPSILON,
};
use crate::tensor::{ops, Scalar, Tape, Tensor, Var};

/// Ordered `(path, tensor)` table plus the fingerprint of the spec it was
/// built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T: Scalar> {
    pub fingerprint: [u8; 8],
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ModelWeights<T> {
    pub fn new(fingerprint: [u8; 8], entries: Vec<(String, Tensor<T>)>) -> Self {
        Self { fingerprint, entries }
    }

    pub fn entries(&self) -> &[(String, Tensor<T>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(p, _)| p == path).map(|(_, t)| t)
    }

    pub fn tensor(&self, index: usize) -> &Tensor<T> {
        &self.entries[index].1
    }

    /// Replaces the tensor at `index`, keeping its shape.
    pub fn set(&mut self, index: usize, value: Tensor<T>) -> Result<()> {
        let (path, slot) = &mut self.entries[index];
        if slot.shape() != value.shape() {
            return Err(ModelError::WeightsMismatch(format!(
                "{path}: expected shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn set_by_path(&mut self, path: &str, value: Tensor<T>) -> Result<()> {
        let index = self
            .entries
            .iter()
            .position(|(p, _)| p == path)
            .ok_or_else(|| ModelError::WeightsMismatch(format!("no tensor named {path}")))?;
        self.set(index, value)
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            fingerprint: self.fingerprint,
            entries: self.entries.iter().map(|(p, t)| (p.clone(), t.cast())).collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }
}

/// Running statistics are state, not parameters.
pub fn is_trainable(path: &str) -> bool {
    !(path.ends_with(".running_mean") || path.ends_with(".running_var"))
}

#[derive(Debug, Clone, Copy)]
enum Init {
    HeUniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnSlot {
    scale: usize,
    shift: usize,
    running_mean: usize,
    running_var: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    Dense,
    Separable,
}

#[derive(Debug, Clone)]
struct ConvUnit {
    kind: ConvKind,
    stride: usize,
    padding: usize,
    weight: usize,
    pointwise: Option<usize>,
    bn: BnSlot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shortcut {
    /// No residual connection (stem layers).
    None,
    Identity,
    /// 1×1 convolution plus batch norm.
    Projection,
}

#[derive(Debug, Clone)]
struct Block {
    convs: Vec<ConvUnit>,
    shortcut: Shortcut,
    projection: Option<ConvUnit>,
}

#[derive(Debug, Clone, Copy)]
struct Head {
    hidden_weight: usize,
    hidden_bias: usize,
    out_weight: usize,
    out_bias: usize,
}

/// What a graph walk sees of one block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSummary {
    pub name: String,
    pub conv_kinds: Vec<ConvKind>,
    pub shortcut: Shortcut,
}

struct Layout {
    params: Vec<(String, Vec<usize>, Init)>,
    blocks: Vec<Block>,
    block_names: Vec<String>,
    head: Head,
}

impl Layout {
    fn param(&mut self, path: String, shape: Vec<usize>, init: Init) -> usize {
        self.params.push((path, shape, init));
        self.params.len() - 1
    }

    fn bn(&mut self, prefix: &str, channels: usize) -> BnSlot {
        BnSlot {
            scale: self.param(format!("{prefix}.bn.scale"), vec![channels], Init::Ones),
            shift: self.param(format!("{prefix}.bn.shift"), vec![channels], Init::Zeros),
            running_mean: self.param(format!("{prefix}.bn.running_mean"), vec![channels], Init::Zeros),
            running_var: self.param(format!("{prefix}.bn.running_var"), vec![channels], Init::Ones),
        }
    }

    fn dense_conv(&mut self, prefix: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> ConvUnit {
        let weight = self.param(
            format!("{prefix}.weight"),
            vec![out_ch, in_ch, kernel, kernel],
            Init::HeUniform {
                fan_in: in_ch * kernel * kernel,
            },
        );
        ConvUnit {
            kind: ConvKind::Dense,
            stride,
            padding: kernel / 2,
            weight,
            pointwise: None,
            bn: self.bn(prefix, out_ch),
        }
    }

    fn separable_conv(&mut self, prefix: &str, in_ch: usize, out_ch: usize, stride: usize) -> ConvUnit {
        let weight = self.param(
            format!("{prefix}.depthwise"),
            vec![in_ch, 3, 3],
            Init::HeUniform { fan_in: 9 },
        );
        let pointwise = self.param(
            format!("{prefix}.pointwise"),
            vec![out_ch, in_ch, 1, 1],
            Init::HeUniform { fan_in: in_ch },
        );
        ConvUnit {
            kind: ConvKind::Separable,
            stride,
            padding: 1,
            weight,
            pointwise: Some(pointwise),
            bn: self.bn(prefix, out_ch),
        }
    }

    fn new(spec: &ModelSpec) -> Self {
        let mut layout = Layout {
            params: Vec::new(),
            blocks: Vec::new(),
            block_names: Vec::new(),
            head: Head {
                hidden_weight: 0,
                hidden_bias: 0,
                out_weight: 0,
                out_bias: 0,
            },
        };
        let mut channels = spec.input_channels;
        for (i, (&width, &stride)) in spec.stem_widths.iter().zip(&spec.stem_strides).enumerate() {
            let name = format!("stem.{i}");
            let conv = layout.dense_conv(&name, channels, width, 3, stride);
            layout.blocks.push(Block {
                convs: vec![conv],
                shortcut: Shortcut::None,
                projection: None,
            });
            layout.block_names.push(name);
            channels = width;
        }
        for (s, &width) in spec.stage_widths.iter().enumerate() {
            for b in 0..spec.blocks_per_stage[s] {
                let name = format!("stage{}.block{}", s + 1, b + 1);
                let stride = if b == 0 { spec.stage_strides[s] } else { 1 };
                let conv_name = |c: usize| format!("{name}.conv{}", c + 1);
                let convs = match spec.family {
                    Family::Resnet if spec.bottleneck => {
                        let inner = width / BOTTLENECK_DIVISOR;
                        vec![
                            layout.dense_conv(&conv_name(0), channels, inner, 1, 1),
                            layout.dense_conv(&conv_name(1), inner, inner, 3, stride),
                            layout.dense_conv(&conv_name(2), inner, width, 1, 1),
                        ]
                    }
                    Family::Resnet => vec![
                        layout.dense_conv(&conv_name(0), channels, width, 3, stride),
                        layout.dense_conv(&conv_name(1), width, width, 3, 1),
                    ],
                    Family::Xception => (0..spec.convs_per_block[s])
                        .map(|c| {
                            let (cin, cs) = if c == 0 { (channels, stride) } else { (width, 1) };
                            layout.separable_conv(&conv_name(c), cin, width, cs)
                        })
                        .collect(),
                };
                let (shortcut, projection) = if stride != 1 || channels != width {
                    let proj = layout.dense_conv(&format!("{name}.shortcut"), channels, width, 1, stride);
                    (Shortcut::Projection, Some(proj))
                } else {
                    (Shortcut::Identity, None)
                };
                layout.blocks.push(Block {
                    convs,
                    shortcut,
                    projection,
                });
                layout.block_names.push(name);
                channels = width;
            }
        }
        let hidden = spec.hidden_width;
        layout.head = Head {
            hidden_weight: layout.param(
                "head.hidden.weight".into(),
                vec![hidden, channels],
                Init::HeUniform { fan_in: channels },
            ),
            hidden_bias: layout.param("head.hidden.bias".into(), vec![hidden], Init::Zeros),
            out_weight: layout.param(
                "head.out.weight".into(),
                vec![1, hidden],
                Init::HeUniform { fan_in: hidden },
            ),
            out_bias: layout.param("head.out.bias".into(), vec![1], Init::Zeros),
        };
        layout
    }
}

/// Result of a forward pass recorded on a tape.
pub struct ForwardPass<T: Scalar> {
    /// `[N×1]` logits.
    pub logits: Var,
    /// Batch statistics of every norm layer, training mode only.
    pub batch_stats: Vec<(BnSlot, BatchStats<T>)>,
}

/// A backbone plus its classification head, with weights.
#[derive(Debug, Clone)]
pub struct Network<T: Scalar> {
    spec: ModelSpec,
    blocks: Vec<Block>,
    block_names: Vec<String>,
    head: Head,
    weights: ModelWeights<T>,
}

impl<T: Scalar> Network<T> {
    /// Builds the network with He-uniform weights drawn from a ChaCha stream
    /// seeded by `seed`, in parameter order. Biases and norm shifts start at
    /// 0, norm scales at 1.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = layout
            .params
            .iter()
            .map(|(path, shape, init)| {
                let tensor = match *init {
                    Init::HeUniform { fan_in } => {
                        let bound = (6.0 / fan_in as f64).sqrt();
                        Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
                    }
                    Init::Zeros => Tensor::zeros(shape),
                    Init::Ones => Tensor::full(shape, T::one()),
                };
                (path.clone(), tensor)
            })
            .collect();
        Ok(Self::assemble(
            spec,
            layout,
            ModelWeights::new(spec.fingerprint(), entries),
        ))
    }

    /// Attaches existing weights; the fingerprint, paths and shapes must all
    /// match what `spec` builds.
    pub fn from_weights(spec: &ModelSpec, weights: ModelWeights<T>) -> Result<Self> {
        spec.validate()?;
        let expected = spec.fingerprint();
        if weights.fingerprint != expected {
            return Err(ModelError::FingerprintMismatch {
                expected,
                found: weights.fingerprint,
            });
        }
        let layout = Layout::new(spec);
        if layout.params.len() != weights.len() {
            return Err(ModelError::WeightsMismatch(format!(
                "expected {} tensors, found {}",
                layout.params.len(),
                weights.len()
            )));
        }
        for ((path, shape, _), (got_path, tensor)) in layout.params.iter().zip(weights.entries()) {
            if path != got_path || shape.as_slice() != tensor.shape() {
                return Err(ModelError::WeightsMismatch(format!(
                    "expected {path} {shape:?}, found {got_path} {:?}",
                    tensor.shape()
                )));
            }
        }
        Ok(Self::assemble(spec, layout, weights))
    }

    fn assemble(spec: &ModelSpec, layout: Layout, weights: ModelWeights<T>) -> Self {
        Self {
            spec: spec.clone(),
            blocks: layout.blocks,
            block_names: layout.block_names,
            head: layout.head,
            weights,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn weights(&self) -> &ModelWeights<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut ModelWeights<T> {
        &mut self.weights
    }

    pub fn into_weights(self) -> ModelWeights<T> {
        self.weights
    }

    /// Main-path convolutions in the built graph (projections excluded).
    pub fn conv_count(&self) -> usize {
        self.blocks.iter().map(|b| b.convs.len()).sum()
    }

    pub fn dense_count(&self) -> usize {
        2
    }

    pub fn block_summaries(&self) -> Vec<BlockSummary> {
        self.blocks
            .iter()
            .zip(&self.block_names)
            .map(|(b, name)| BlockSummary {
                name: name.clone(),
                conv_kinds: b.convs.iter().map(|c| c.kind).collect(),
                shortcut: b.shortcut,
            })
            .collect()
    }

    /// Output channels of the conv with 1-based main-path ordinal `layer`.
    pub fn layer_channels(&self, layer: usize) -> Result<usize> {
        let unit = self
            .blocks
            .iter()
            .flat_map(|b| &b.convs)
            .nth(layer.wrapping_sub(1))
            .ok_or(ModelError::LayerOutOfRange {
                layer,
                max: self.conv_count(),
            })?;
        Ok(self.weights.tensor(unit.bn.scale).len())
    }

    /// Places every tensor on the tape; trainable ones require gradients when
    /// `trainable` is set.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.weights
            .entries()
            .iter()
            .map(|(path, t)| tape.leaf(t.clone(), trainable && is_trainable(path)))
            .collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let (h, w) = self.spec.input_size;
        match *shape {
            [n, c, hh, ww] if n >= 1 && c == self.spec.input_channels && hh == h && ww == w => Ok(()),
            _ => Err(ModelError::InputShape {
                expected: vec![0, self.spec.input_channels, h, w],
                found: shape.to_vec(),
            }),
        }
    }

    fn conv_unit(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        unit: &ConvUnit,
        mode: NormMode,
        stats: &mut Vec<(BnSlot, BatchStats<T>)>,
    ) -> Result<Var> {
        let geom = Conv2dGeometry::new(unit.stride, unit.padding);
        let y = match (unit.kind, unit.pointwise) {
            (ConvKind::Separable, Some(pw)) => {
                depthwise_separable_conv2d(tape, x, vars[unit.weight], vars[pw], None, geom)?
            }
            _ => conv2d(tape, x, vars[unit.weight], None, geom)?,
        };
        let eps = T::lit(DEFAULT_EPSILON);
        let (scale, shift) = (vars[unit.bn.scale], vars[unit.bn.shift]);
        Ok(match mode {
            NormMode::Training => {
                let (out, s) = batch_norm_train(tape, y, scale, shift, eps)?;
                stats.push((unit.bn, s));
                out
            }
            NormMode::Inference => batch_norm_infer(
                tape,
                y,
                scale,
                shift,
                self.weights.tensor(unit.bn.running_mean),
                self.weights.tensor(unit.bn.running_var),
                eps,
            )?,
        })
    }

    /// Runs the backbone, stopping after main-path conv `stop_at` when given.
    /// Returns the final (or captured) post-activation feature map.
    fn backbone(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        mode: NormMode,
        stop_at: Option<usize>,
        stats: &mut Vec<(BnSlot, BatchStats<T>)>,
    ) -> Result<Var> {
        self.check_input(tape.shape(x))?;
        let mut h = x;
        let mut ordinal = 0;
        for block in &self.blocks {
            let input = h;
            let last = block.convs.len() - 1;
            for (i, unit) in block.convs.iter().enumerate() {
                h = self.conv_unit(tape, vars, h, unit, mode, stats)?;
                if i == last && block.shortcut != Shortcut::None {
                    let skip = match &block.projection {
                        Some(p) => self.conv_unit(tape, vars, input, p, mode, stats)?,
                        None => input,
                    };
                    h = ops::add(tape, h, skip)?;
                }
                h = relu(tape, h);
                ordinal += 1;
                if stop_at == Some(ordinal) {
                    return Ok(h);
                }
            }
        }
        Ok(h)
    }

    /// Full forward pass to `[N×1]` logits.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x: Var, mode: NormMode) -> Result<ForwardPass<T>> {
        let mut batch_stats = Vec::new();
        let features = self.backbone(tape, vars, x, mode, None, &mut batch_stats)?;
        let pooled = global_avg_pool(tape, features)?;
        let head = self.head;
        let hidden = dense(tape, pooled, vars[head.hidden_weight], vars[head.hidden_bias])?;
        let hidden = relu(tape, hidden);
        let logits = dense(tape, hidden, vars[head.out_weight], vars[head.out_bias])?;
        Ok(ForwardPass { logits, batch_stats })
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, stats: &[(BnSlot, BatchStats<T>)], momentum: f64) -> Result<()> {
        for (slot, s) in stats {
            let mut mean = self.weights.tensor(slot.running_mean).to_vec();
            let mut var = self.weights.tensor(slot.running_var).to_vec();
            s.update_running(&mut mean, &mut var, T::lit(momentum));
            let shape = [mean.len()];
            self.weights.set(slot.running_mean, Tensor::new(&shape, mean)?)?;
            self.weights.set(slot.running_var, Tensor::new(&shape, var)?)?;
        }
        Ok(())
    }

    /// Inference-mode logits for a `[N×C×H×W]` batch.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(batch.clone());
        let pass = self.forward(&mut tape, &vars, x, NormMode::Inference)?;
        Ok(tape.value(pass.logits).to_vec())
    }

    /// Logit of a single `[1×C×H×W]` frame.
    pub fn forward_frame(&self, frame: &Tensor<T>) -> Result<T> {
        if frame.shape().first() != Some(&1) {
            return Err(ModelError::InputShape {
                expected: vec![
                    1,
                    self.spec.input_channels,
                    self.spec.input_size.0,
                    self.spec.input_size.1,
                ],
                found: frame.shape().to_vec(),
            });
        }
        Ok(self.logits(frame)?[0])
    }

    /// Inference-mode post-activation output `[N×C×H'×W']` of main-path conv
    /// `layer` (1-based).
    pub fn feature_maps(&self, batch: &Tensor<T>, layer: usize) -> Result<Tensor<T>> {
        let max = self.conv_count();
        if layer == 0 || layer > max {
            return Err(ModelError::LayerOutOfRange { layer, max });
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(batch.clone());
        let out = self.backbone(&mut tape, &vars, x, NormMode::Inference, Some(layer), &mut Vec::new())?;
        Ok(tape.value(out).clone())
    }
}
