use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{
    global_avg_pool, global_avg_pool_backward, softmax_backward, softmax_rows, stack_backward,
    stack_forward, FeatureMap, Linear, Matrix, Op,
};
use super::params::ParamSet;
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    /// Stride-2 3×3 convolutions, one per entry of `widths`.
    SmallConv,
    /// VGG16 layout: 13 convolutions in five max-pooled blocks.
    Vgg16Style,
}

const VGG16_BLOCKS: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_side: usize,
    pub latent_length: usize,
    pub num_classes: usize,
    pub backbone: BackboneKind,
    /// Stage widths for the small-conv backbone.
    pub widths: Vec<usize>,
    pub seed: u64,
    /// Checkpoint whose encoder backbone arrays initialize this model.
    pub pretrained_init: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_side: 64,
            latent_length: 16,
            num_classes: 3,
            backbone: BackboneKind::SmallConv,
            widths: vec![16, 32, 64, 128],
            seed: 0,
            pretrained_init: None,
        }
    }
}

impl ModelConfig {
    /// Number of stride-2 (or pooling) downsampling steps in the backbone.
    pub fn depth(&self) -> usize {
        match self.backbone {
            BackboneKind::SmallConv => self.widths.len(),
            BackboneKind::Vgg16Style => VGG16_BLOCKS.len(),
        }
    }

    /// Channel count after each downsampling stage.
    pub fn stage_widths(&self) -> Vec<usize> {
        match self.backbone {
            BackboneKind::SmallConv => self.widths.clone(),
            BackboneKind::Vgg16Style => VGG16_BLOCKS.iter().map(|b| b.0).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.latent_length < 1 {
            return bad("latent_length must be at least 1".into());
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if self.backbone == BackboneKind::SmallConv
            && (self.widths.is_empty() || self.widths.contains(&0))
        {
            return bad("small-conv backbone needs non-zero stage widths".into());
        }
        let factor = 1usize << self.depth();
        if self.input_side < factor || self.input_side % factor != 0 {
            return bad(format!(
                "input_side {} must be a positive multiple of 2^depth = {factor}",
                self.input_side
            ));
        }
        Ok(())
    }

    fn bottleneck_side(&self) -> usize {
        self.input_side >> self.depth()
    }
}

/// Encoder outputs for a batch: style latent `z` and categorical simplex `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub z: Matrix,
    pub c: Matrix,
}

/// Everything the encoder backward pass needs.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    acts: Vec<FeatureMap>,
    pooled: Matrix,
    pub z: Matrix,
    pub c: Matrix,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    params: ParamSet,
    backbone: Vec<Op>,
    z_head: Linear,
    c_head: Linear,
    backbone_params: usize,
}

impl Encoder {
    fn build(config: &ModelConfig) -> Self {
        let mut params = ParamSet::default();
        let mut backbone = Vec::new();
        let mut cin = 3;
        match config.backbone {
            BackboneKind::SmallConv => {
                for (i, &w) in config.widths.iter().enumerate() {
                    backbone.push(Op::conv(&mut params, &format!("encoder.conv{i}"), cin, w, 2, true));
                    cin = w;
                }
            }
            BackboneKind::Vgg16Style => {
                for (b, &(w, reps)) in VGG16_BLOCKS.iter().enumerate() {
                    for r in 0..reps {
                        let name = format!("encoder.block{b}.conv{r}");
                        backbone.push(Op::conv(&mut params, &name, cin, w, 1, true));
                        cin = w;
                    }
                    backbone.push(Op::MaxPool2);
                }
            }
        }
        let backbone_params = params.specs().len();
        let z_head = Linear::register(&mut params, "encoder.z_head", cin, config.latent_length);
        let c_head = Linear::register(&mut params, "encoder.c_head", cin, config.num_classes);
        Self {
            params,
            backbone,
            z_head,
            c_head,
            backbone_params,
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Names of the backbone arrays (heads excluded).
    pub fn backbone_param_names(&self) -> Vec<&str> {
        self.params.specs()[..self.backbone_params]
            .iter()
            .map(|s| s.name.as_str())
            .collect()
    }

    pub fn forward(&self, x: &FeatureMap) -> EncoderTrace {
        let acts = stack_forward(&self.backbone, &self.params, x.clone());
        let pooled = global_avg_pool(acts.last().expect("non-empty"));
        let z = self.z_head.forward(&self.params, &pooled);
        let c = softmax_rows(&self.c_head.forward(&self.params, &pooled));
        EncoderTrace { acts, pooled, z, c }
    }

    /// Accumulates parameter gradients given upstream gradients for `z` and/or `c`.
    pub fn backward(&self, trace: &EncoderTrace, dz: Option<&Matrix>, dc: Option<&Matrix>, grads: &mut [f64]) {
        let mut dpooled = Matrix::zeros(trace.pooled.rows, trace.pooled.cols);
        if let Some(dz) = dz {
            let d = self.z_head.backward(&self.params, &trace.pooled, dz, Some(grads));
            add_assign(&mut dpooled.data, &d.data);
        }
        if let Some(dc) = dc {
            let dlogits = softmax_backward(&trace.c, dc);
            let d = self.c_head.backward(&self.params, &trace.pooled, &dlogits, Some(grads));
            add_assign(&mut dpooled.data, &d.data);
        }
        let last = trace.acts.last().expect("non-empty");
        let dfeat = global_avg_pool_backward(&dpooled, last.n, last.c, last.h, last.w);
        stack_backward(&self.backbone, &self.params, &trace.acts, dfeat, Some(grads), false);
    }
}

#[derive(Debug, Clone)]
pub struct DecoderTrace {
    input: Matrix,
    acts: Vec<FeatureMap>,
}

impl DecoderTrace {
    pub fn output(&self) -> &FeatureMap {
        self.acts.last().expect("non-empty")
    }

    pub fn into_output(mut self) -> FeatureMap {
        self.acts.pop().expect("non-empty")
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    params: ParamSet,
    fc: Linear,
    seed_channels: usize,
    seed_side: usize,
    stages: Vec<Op>,
    latent_length: usize,
}

impl Decoder {
    fn build(config: &ModelConfig) -> Self {
        let mut params = ParamSet::default();
        let widths = config.stage_widths();
        let seed_channels = *widths.last().expect("validated non-empty");
        let seed_side = config.bottleneck_side();
        let fc = Linear::register(
            &mut params,
            "decoder.fc",
            config.latent_length + config.num_classes,
            seed_channels * seed_side * seed_side,
        );
        let mut stages = Vec::new();
        for i in (0..widths.len()).rev() {
            let cout = if i == 0 { 3 } else { widths[i - 1] };
            stages.push(Op::Upsample2);
            stages.push(Op::conv(&mut params, &format!("decoder.conv{i}"), widths[i], cout, 1, i != 0));
        }
        Self {
            params,
            fc,
            seed_channels,
            seed_side,
            stages,
            latent_length: config.latent_length,
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn forward(&self, z: &Matrix, c: &Matrix) -> DecoderTrace {
        let input = z.hcat(c);
        let mut seed = self.fc.forward(&self.params, &input);
        for v in &mut seed.data {
            *v = v.max(0.0);
        }
        let fm = FeatureMap {
            n: input.rows,
            c: self.seed_channels,
            h: self.seed_side,
            w: self.seed_side,
            data: seed.data,
        };
        let acts = stack_forward(&self.stages, &self.params, fm);
        DecoderTrace { input, acts }
    }

    /// Accumulates parameter gradients (when `grads` is given) and returns `(dz, dc)`.
    pub fn backward(&self, trace: &DecoderTrace, grad_output: &FeatureMap, mut grads: Option<&mut [f64]>) -> (Matrix, Matrix) {
        let acts = &trace.acts;
        let dseed = stack_backward(&self.stages, &self.params, acts, grad_output.clone(), grads.as_deref_mut(), true)
            .expect("input gradient requested");
        let seed = &acts[0];
        let mut dfc = Matrix {
            rows: seed.n,
            cols: seed.sample_len(),
            data: dseed.data,
        };
        for (g, &v) in dfc.data.iter_mut().zip(&seed.data) {
            if v <= 0.0 {
                *g = 0.0;
            }
        }
        let dinput = self.fc.backward(&self.params, &trace.input, &dfc, grads);
        dinput.hsplit(self.latent_length)
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorTrace {
    input: Matrix,
    pub logits: Matrix,
    /// Row-wise `[p_fake, p_real]`.
    pub probs: Matrix,
}

/// Single affine map `C → 2` followed by softmax; output index 0 = fake, 1 = real.
#[derive(Debug, Clone)]
pub struct Discriminator {
    params: ParamSet,
    layer: Linear,
}

impl Discriminator {
    fn build(config: &ModelConfig) -> Self {
        let mut params = ParamSet::default();
        let layer = Linear::register(&mut params, "discriminator.fc", config.num_classes, 2);
        Self { params, layer }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn forward(&self, c: &Matrix) -> DiscriminatorTrace {
        let logits = self.layer.forward(&self.params, c);
        let probs = softmax_rows(&logits);
        DiscriminatorTrace {
            input: c.clone(),
            logits,
            probs,
        }
    }

    /// Returns the gradient with respect to the input; parameter gradients are
    /// accumulated only when `grads` is given.
    pub fn backward(&self, trace: &DiscriminatorTrace, dprobs: &Matrix, grads: Option<&mut [f64]>) -> Matrix {
        let dlogits = softmax_backward(&trace.probs, dprobs);
        self.layer.backward(&self.params, &trace.input, &dlogits, grads)
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Encoder (backbone + pooled dual heads), decoder and categorical discriminator.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub discriminator: Discriminator,
}

impl Model {
    /// Builds and initializes a model (see [`init_weights`]).
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut model = Self {
            encoder: Encoder::build(&config),
            decoder: Decoder::build(&config),
            discriminator: Discriminator::build(&config),
            config,
        };
        init_weights(&mut model)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_images(&self, x: &FeatureMap) -> Result<(), ModelError> {
        let side = self.config.input_side;
        if (x.c, x.h, x.w) != (3, side, side) {
            return Err(ModelError::Shape(format!(
                "expected images of shape (3, {side}, {side}), got ({}, {}, {})",
                x.c, x.h, x.w
            )));
        }
        Ok(())
    }

    fn check_cols(m: &Matrix, expected: usize, what: &str) -> Result<(), ModelError> {
        if m.cols != expected {
            return Err(ModelError::Shape(format!("{what} has length {}, expected {expected}", m.cols)));
        }
        Ok(())
    }

    pub fn encode(&self, x: &FeatureMap) -> Result<EncoderOutput, ModelError> {
        self.check_images(x)?;
        let t = self.encoder.forward(x);
        Ok(EncoderOutput { z: t.z, c: t.c })
    }

    pub fn decode(&self, z: &Matrix, c: &Matrix) -> Result<FeatureMap, ModelError> {
        Self::check_cols(z, self.config.latent_length, "latent z")?;
        Self::check_cols(c, self.config.num_classes, "categorical c")?;
        if z.rows != c.rows {
            return Err(ModelError::Shape(format!("z has {} rows but c has {}", z.rows, c.rows)));
        }
        Ok(self.decoder.forward(z, c).into_output())
    }

    /// Row-wise `[p_fake, p_real]`.
    pub fn discriminate(&self, c: &Matrix) -> Result<Matrix, ModelError> {
        Self::check_cols(c, self.config.num_classes, "discriminator input")?;
        Ok(self.discriminator.forward(c).probs)
    }

    pub fn reconstruct(&self, x: &FeatureMap) -> Result<FeatureMap, ModelError> {
        let out = self.encode(x)?;
        self.decode(&out.z, &out.c)
    }

    /// Encoder, decoder and discriminator parameters, in that order.
    pub fn groups_mut(&mut self) -> [&mut ParamSet; 3] {
        [
            &mut self.encoder.params,
            &mut self.decoder.params,
            &mut self.discriminator.params,
        ]
    }

    pub(crate) fn check_batch(&self, x: &FeatureMap) -> Result<(), ModelError> {
        self.check_images(x)
    }
}

/// Draws one-hot rows whose hot index is uniform on `0..num_classes`.
pub fn sample_real_categorical(num_classes: usize, batch: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut out = Matrix::zeros(batch, num_classes);
    for i in 0..batch {
        let k = rng.random_range(0..num_classes);
        out.row_mut(i)[k] = 1.0;
    }
    out
}

/// The three disjoint trainable groups.
#[derive(Debug, Clone, Copy)]
pub struct ParameterGroups<'a> {
    pub encoder: &'a ParamSet,
    pub decoder: &'a ParamSet,
    pub discriminator: &'a ParamSet,
}

pub fn parameter_groups(model: &Model) -> ParameterGroups<'_> {
    ParameterGroups {
        encoder: model.encoder.params(),
        decoder: model.decoder.params(),
        discriminator: model.discriminator.params(),
    }
}

/// Seeded fan-in-scaled random initialization of the encoder and decoder, a
/// zero discriminator (output `[0.5, 0.5]` for every input), then optional
/// backbone loading from `config.pretrained_init`.
pub fn init_weights(model: &mut Model) -> Result<(), ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
    model.encoder.params.init_random(&mut rng);
    model.decoder.params.init_random(&mut rng);
    model.discriminator.params.values_mut().fill(0.0);
    if let Some(path) = model.config.pretrained_init.clone() {
        let source = super::checkpoint::Checkpoint::load(&path)?;
        load_backbone(model, &source.encoder)?;
    }
    Ok(())
}

/// Copies every backbone array from `source` by name, checking shapes.
pub fn load_backbone(model: &mut Model, source: &ParamSet) -> Result<(), ModelError> {
    let names: Vec<String> = model.encoder.backbone_param_names().into_iter().map(String::from).collect();
    for name in names {
        let target = model.encoder.params.find(&name).expect("own name").clone();
        let found = source
            .find(&name)
            .ok_or_else(|| ModelError::PretrainedMissing(name.clone()))?;
        if found.shape != target.shape {
            return Err(ModelError::PretrainedShape {
                layer: name,
                expected: target.shape,
                found: found.shape.clone(),
            });
        }
        let values = source.get_named(&name).expect("found above").to_vec();
        model
            .encoder
            .params
            .get_named_mut(&name)
            .expect("own name")
            .copy_from_slice(&values);
    }
    Ok(())
}
