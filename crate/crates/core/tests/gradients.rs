//! Analytic gradients of the four losses against central finite differences on a
//! tiny model, for every parameter group.

use aae_core::dataset::{ClassWeights, WeightScheme};
use aae_core::model::{FeatureMap, Matrix, Model, ModelConfig};
use aae_core::training::{
    phase_gradients, GradTargets, LossContext, Phase, PhaseInputs, ReconstructionMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const MAX_REL_ERR: f64 = 1e-4;

fn tiny_model(seed: u64) -> Model {
    let mut model = Model::new(ModelConfig {
        input_side: 8,
        latent_length: 2,
        num_classes: 3,
        widths: vec![4, 8],
        seed,
        ..ModelConfig::default()
    })
    .unwrap();
    // A non-trivial discriminator so its gradient reaches the encoder.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for v in model.discriminator.params_mut().values_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    model
}

struct Fixture {
    images: FeatureMap,
    labels: Vec<usize>,
    prior: Matrix,
}

fn fixture(seed: u64, batch: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = FeatureMap::zeros(batch, 3, 8, 8);
    for v in &mut images.data {
        *v = rng.random_range(-2.0..2.0);
    }
    let labels = (0..batch).map(|_| rng.random_range(0..3)).collect();
    let mut prior = Matrix::zeros(batch, 3);
    for i in 0..batch {
        prior.row_mut(i)[rng.random_range(0..3)] = 1.0;
    }
    Fixture { images, labels, prior }
}

fn loss_only(model: &Model, phase: Phase, f: &Fixture, ctx: &LossContext) -> f64 {
    let none = GradTargets { encoder: false, decoder: false, discriminator: false };
    let inputs = PhaseInputs { images: &f.images, labels: &f.labels, real_prior: &f.prior };
    phase_gradients(model, phase, inputs, ctx, none).unwrap().0
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` per group; both zero counts as exact.
fn check(phase: Phase, ctx: &LossContext, seed: u64) {
    let mut model = tiny_model(seed);
    let f = fixture(seed, 3);
    let inputs = PhaseInputs { images: &f.images, labels: &f.labels, real_prior: &f.prior };
    let (_, analytic) = phase_gradients(&model, phase, inputs, ctx, GradTargets::ALL).unwrap();
    let analytic = [analytic.encoder, analytic.decoder, analytic.discriminator];

    for (g, name) in ["encoder", "decoder", "discriminator"].iter().enumerate() {
        let len = analytic[g].len();
        let mut numeric = vec![0.0; len];
        for i in 0..len {
            let original = model.groups_mut()[g].values()[i];
            model.groups_mut()[g].values_mut()[i] = original + STEP;
            let plus = loss_only(&model, phase, &f, ctx);
            model.groups_mut()[g].values_mut()[i] = original - STEP;
            let minus = loss_only(&model, phase, &f, ctx);
            model.groups_mut()[g].values_mut()[i] = original;
            numeric[i] = (plus - minus) / (2.0 * STEP);
        }
        let diff: Vec<f64> = analytic[g].iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(&analytic[g]).max(norm(&numeric));
        if scale < 1e-9 {
            continue;
        }
        let rel = norm(&diff) / scale;
        assert!(rel <= MAX_REL_ERR, "{phase} w.r.t. {name}: relative error {rel:e}");
    }
}

#[test]
fn reconstruction_gradients_per_pixel() {
    check(Phase::Reconstruction, &LossContext::unweighted(3), 1);
}

#[test]
fn reconstruction_gradients_sum_per_image() {
    let ctx = LossContext {
        reconstruction: ReconstructionMode::SumPerImage,
        ..LossContext::unweighted(3)
    };
    check(Phase::Reconstruction, &ctx, 2);
}

#[test]
fn discriminator_gradients() {
    check(Phase::Discriminator, &LossContext::unweighted(3), 3);
}

#[test]
fn generator_gradients() {
    check(Phase::Generator, &LossContext::unweighted(3), 4);
}

#[test]
fn classification_gradients_weighted() {
    let ctx = LossContext {
        reconstruction: ReconstructionMode::PerPixel,
        weights: ClassWeights { scheme: WeightScheme::Balanced, weights: vec![0.5, 1.2, 1.3] },
    };
    check(Phase::Classification, &ctx, 5);
}

#[test]
fn groups_outside_the_loss_get_zero_gradient() {
    let model = tiny_model(9);
    let f = fixture(9, 2);
    let inputs = PhaseInputs { images: &f.images, labels: &f.labels, real_prior: &f.prior };
    let ctx = LossContext::unweighted(3);
    let (_, g) = phase_gradients(&model, Phase::Reconstruction, inputs, &ctx, GradTargets::ALL).unwrap();
    assert!(g.discriminator.iter().all(|&v| v == 0.0));
    let (_, g) = phase_gradients(&model, Phase::Classification, inputs, &ctx, GradTargets::ALL).unwrap();
    assert!(g.decoder.iter().all(|&v| v == 0.0));
    assert!(g.discriminator.iter().all(|&v| v == 0.0));
    let (_, g) = phase_gradients(&model, Phase::Generator, inputs, &ctx, GradTargets::ALL).unwrap();
    assert!(g.decoder.iter().all(|&v| v == 0.0));
    assert!(g.encoder.iter().any(|&v| v != 0.0));
}
