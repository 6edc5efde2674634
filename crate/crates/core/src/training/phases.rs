use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, OptimizerSpec};
use super::losses::{
    classification_loss_grad, discriminator_loss_grad, generator_loss_grad, one_hot,
    reconstruction_loss_grad, ReconstructionMode,
};
use super::TrainError;
use crate::dataset::ClassWeights;
use crate::model::{sample_real_categorical, FeatureMap, Matrix, Model};

/// The four per-batch updates, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Reconstruction,
    Discriminator,
    Generator,
    Classification,
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Phase::Reconstruction,
        Phase::Discriminator,
        Phase::Generator,
        Phase::Classification,
    ];

    /// Parameter groups this phase is allowed to update.
    pub fn targets(self) -> GradTargets {
        match self {
            Phase::Reconstruction => GradTargets { encoder: true, decoder: true, discriminator: false },
            Phase::Discriminator => GradTargets { encoder: false, decoder: false, discriminator: true },
            Phase::Generator | Phase::Classification => {
                GradTargets { encoder: true, decoder: false, discriminator: false }
            }
        }
    }

    pub fn loss_name(self) -> &'static str {
        match self {
            Phase::Reconstruction => "L1",
            Phase::Discriminator => "L2",
            Phase::Generator => "L3",
            Phase::Classification => "L4",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Phase::Reconstruction => "reconstruction",
            Phase::Discriminator => "discriminator",
            Phase::Generator => "generator",
            Phase::Classification => "classification",
        };
        f.write_str(s)
    }
}

/// Which groups to backpropagate into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradTargets {
    pub encoder: bool,
    pub decoder: bool,
    pub discriminator: bool,
}

impl GradTargets {
    pub const ALL: GradTargets = GradTargets { encoder: true, decoder: true, discriminator: true };
}

/// Flat gradients for each parameter group. Groups that were not targeted stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupGrads {
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
    pub discriminator: Vec<f64>,
}

impl GroupGrads {
    pub fn zeros(model: &Model) -> Self {
        Self {
            encoder: model.encoder.params().zeros_like(),
            decoder: model.decoder.params().zeros_like(),
            discriminator: model.discriminator.params().zeros_like(),
        }
    }
}

/// Per-batch loss values, one per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseLosses {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
}

impl PhaseLosses {
    pub fn get(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Reconstruction => self.l1,
            Phase::Discriminator => self.l2,
            Phase::Generator => self.l3,
            Phase::Classification => self.l4,
        }
    }

    fn set(&mut self, phase: Phase, value: f64) {
        match phase {
            Phase::Reconstruction => self.l1 = value,
            Phase::Discriminator => self.l2 = value,
            Phase::Generator => self.l3 = value,
            Phase::Classification => self.l4 = value,
        }
    }

    pub fn all_finite(&self) -> bool {
        [self.l1, self.l2, self.l3, self.l4].iter().all(|v| v.is_finite())
    }

    /// Element-wise mean; zero for an empty slice.
    pub fn mean(items: &[PhaseLosses]) -> PhaseLosses {
        if items.is_empty() {
            return PhaseLosses::default();
        }
        let n = items.len() as f64;
        let mut out = PhaseLosses::default();
        for p in items {
            out.l1 += p.l1;
            out.l2 += p.l2;
            out.l3 += p.l3;
            out.l4 += p.l4;
        }
        PhaseLosses { l1: out.l1 / n, l2: out.l2 / n, l3: out.l3 / n, l4: out.l4 / n }
    }
}

/// Settings the losses need beyond the batch itself.
#[derive(Debug, Clone, PartialEq)]
pub struct LossContext {
    pub reconstruction: ReconstructionMode,
    pub weights: ClassWeights,
}

impl LossContext {
    pub fn unweighted(num_classes: usize) -> Self {
        Self {
            reconstruction: ReconstructionMode::default(),
            weights: ClassWeights::uniform(num_classes),
        }
    }
}

/// Inputs to a single phase.
#[derive(Debug, Clone, Copy)]
pub struct PhaseInputs<'a> {
    pub images: &'a FeatureMap,
    pub labels: &'a [usize],
    /// One-hot samples from the categorical prior, one row per image.
    pub real_prior: &'a Matrix,
}

/// Loss of `phase` and its gradient with respect to every group in `targets`.
///
/// The full dependency graph is differentiated, so with [`GradTargets::ALL`] this
/// also yields gradients a training step would discard (for example the encoder
/// gradient of the discriminator loss).
pub fn phase_gradients(
    model: &Model,
    phase: Phase,
    inputs: PhaseInputs<'_>,
    ctx: &LossContext,
    targets: GradTargets,
) -> Result<(f64, GroupGrads), TrainError> {
    let mut g = GroupGrads::zeros(model);
    let enc = model.encoder.forward(inputs.images);
    let loss = match phase {
        Phase::Reconstruction => {
            let dec = model.decoder.forward(&enc.z, &enc.c);
            let (l, grad) = reconstruction_loss_grad(dec.output(), inputs.images, ctx.reconstruction)?;
            if targets.encoder || targets.decoder {
                let dec_grads = targets.decoder.then_some(&mut g.decoder[..]);
                let (dz, dc) = model.decoder.backward(&dec, &grad, dec_grads);
                if targets.encoder {
                    model.encoder.backward(&enc, Some(&dz), Some(&dc), &mut g.encoder);
                }
            }
            l
        }
        Phase::Discriminator => {
            let real = model.discriminator.forward(inputs.real_prior);
            let fake = model.discriminator.forward(&enc.c);
            let (l, d_real, d_fake) = discriminator_loss_grad(&real.probs, &fake.probs)?;
            if targets.discriminator {
                model.discriminator.backward(&real, &d_real, Some(&mut g.discriminator));
            }
            let disc_grads = targets.discriminator.then_some(&mut g.discriminator[..]);
            let dc = model.discriminator.backward(&fake, &d_fake, disc_grads);
            if targets.encoder {
                model.encoder.backward(&enc, None, Some(&dc), &mut g.encoder);
            }
            l
        }
        Phase::Generator => {
            let fake = model.discriminator.forward(&enc.c);
            let (l, d_fake) = generator_loss_grad(&fake.probs)?;
            let disc_grads = targets.discriminator.then_some(&mut g.discriminator[..]);
            let dc = model.discriminator.backward(&fake, &d_fake, disc_grads);
            if targets.encoder {
                model.encoder.backward(&enc, None, Some(&dc), &mut g.encoder);
            }
            l
        }
        Phase::Classification => {
            let y = one_hot(inputs.labels, model.config().num_classes);
            let (l, dc) = classification_loss_grad(&enc.c, &y, &ctx.weights)?;
            if targets.encoder {
                model.encoder.backward(&enc, None, Some(&dc), &mut g.encoder);
            }
            l
        }
    };
    Ok((loss, g))
}

/// Independent moment buffers for each phase and group pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    /// Encoder followed by decoder.
    pub reconstruction: Adam,
    pub discriminator: Adam,
    pub generator: Adam,
    pub classification: Adam,
}

impl Optimizers {
    pub fn new(model: &Model, spec: OptimizerSpec) -> Self {
        let enc = model.encoder.params().len();
        let dec = model.decoder.params().len();
        let disc = model.discriminator.params().len();
        Self {
            reconstruction: Adam::new(spec, enc + dec),
            discriminator: Adam::new(spec, disc),
            generator: Adam::new(spec, enc),
            classification: Adam::new(spec, enc),
        }
    }
}

/// Hooks around each phase update, used to audit gradient routing.
pub trait PhaseObserver {
    fn before(&mut self, _phase: Phase, _model: &Model) {}
    fn after(&mut self, _phase: Phase, _model: &Model) {}
}

struct NoObserver;
impl PhaseObserver for NoObserver {}

fn check_batch(model: &Model, images: &FeatureMap, labels: &[usize]) -> Result<(), TrainError> {
    model.check_batch(images)?;
    if images.n == 0 {
        return Err(TrainError::Shape("empty batch".into()));
    }
    if labels.len() != images.n {
        return Err(TrainError::Shape(format!("{} labels for {} images", labels.len(), images.n)));
    }
    let c = model.config().num_classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(TrainError::Shape(format!("label {bad} out of range for {c} classes")));
    }
    Ok(())
}

fn apply(model: &mut Model, phase: Phase, grads: &GroupGrads, opts: &mut Optimizers) {
    let [enc, dec, disc] = model.groups_mut();
    match phase {
        Phase::Reconstruction => opts
            .reconstruction
            .step(&mut [(enc.values_mut(), &grads.encoder), (dec.values_mut(), &grads.decoder)]),
        Phase::Discriminator => opts.discriminator.step(&mut [(disc.values_mut(), &grads.discriminator)]),
        Phase::Generator => opts.generator.step(&mut [(enc.values_mut(), &grads.encoder)]),
        Phase::Classification => opts.classification.step(&mut [(enc.values_mut(), &grads.encoder)]),
    }
}

fn run_phase(
    model: &mut Model,
    phase: Phase,
    inputs: PhaseInputs<'_>,
    ctx: &LossContext,
    opts: &mut Optimizers,
    observer: &mut dyn PhaseObserver,
) -> Result<f64, TrainError> {
    observer.before(phase, model);
    let (loss, grads) = phase_gradients(model, phase, inputs, ctx, phase.targets())?;
    if !loss.is_finite() {
        return Err(TrainError::NonFinite { phase, value: loss });
    }
    apply(model, phase, &grads, opts);
    observer.after(phase, model);
    Ok(loss)
}

/// One reconstruction, discriminator, generator and classification update.
pub fn train_batch(
    model: &mut Model,
    images: &FeatureMap,
    labels: &[usize],
    optimizers: &mut Optimizers,
    ctx: &LossContext,
    prior_rng: &mut ChaCha8Rng,
) -> Result<PhaseLosses, TrainError> {
    train_batch_observed(model, images, labels, optimizers, ctx, prior_rng, &mut NoObserver)
}

pub fn train_batch_observed(
    model: &mut Model,
    images: &FeatureMap,
    labels: &[usize],
    optimizers: &mut Optimizers,
    ctx: &LossContext,
    prior_rng: &mut ChaCha8Rng,
    observer: &mut dyn PhaseObserver,
) -> Result<PhaseLosses, TrainError> {
    check_batch(model, images, labels)?;
    let real_prior = sample_real_categorical(model.config().num_classes, images.n, prior_rng);
    let inputs = PhaseInputs { images, labels, real_prior: &real_prior };
    let mut losses = PhaseLosses::default();
    for phase in Phase::ALL {
        let l = run_phase(model, phase, inputs, ctx, optimizers, observer)?;
        losses.set(phase, l);
    }
    Ok(losses)
}

/// Classification-only update used by the baseline; returns the classification loss.
pub fn train_batch_classifier(
    model: &mut Model,
    images: &FeatureMap,
    labels: &[usize],
    optimizers: &mut Optimizers,
    ctx: &LossContext,
) -> Result<f64, TrainError> {
    check_batch(model, images, labels)?;
    let empty = Matrix::zeros(0, model.config().num_classes);
    let inputs = PhaseInputs { images, labels, real_prior: &empty };
    run_phase(model, Phase::Classification, inputs, ctx, optimizers, &mut NoObserver)
}
