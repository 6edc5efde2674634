//! Encoder with latent and categorical heads, decoder, and categorical discriminator.

mod checkpoint;
mod network;
mod ops;
mod params;

use thiserror::Error;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_VERSION};
pub use network::{
    init_weights, load_backbone, parameter_groups, sample_real_categorical, BackboneKind, Decoder,
    DecoderTrace, Discriminator, DiscriminatorTrace, Encoder, EncoderOutput, EncoderTrace, Model,
    ModelConfig, ParameterGroups,
};
pub use ops::{softmax_backward, softmax_rows, FeatureMap, Matrix};
pub use params::{ParamSet, ParamSpec};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("pretrained source has no array for layer {0}")]
    PretrainedMissing(String),
    #[error("pretrained layer {layer} has shape {found:?}, expected {expected:?}")]
    PretrainedShape {
        layer: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint does not match model: {0}")]
    CheckpointMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint i/o: {0}")]
    Io(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            input_side: 16,
            latent_length: 4,
            num_classes: 3,
            widths: vec![4, 8],
            seed: 3,
            ..ModelConfig::default()
        }
    }

    fn random_batch(n: usize, side: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = FeatureMap::zeros(n, 3, side, side);
        for v in &mut x.data {
            *v = rng.random_range(-2.0..2.0);
        }
        x
    }

    #[test]
    fn encode_shapes_and_simplex() {
        let model = Model::new(ModelConfig { latent_length: 16, ..ModelConfig::default() }).unwrap();
        let out = model.encode(&random_batch(8, 64, 1)).unwrap();
        assert_eq!((out.z.rows, out.z.cols), (8, 16));
        assert_eq!((out.c.rows, out.c.cols), (8, 3));
        for row in out.c.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn identical_images_give_identical_rows() {
        let model = Model::new(small_config()).unwrap();
        let mut x = random_batch(2, 16, 2);
        let first = x.sample(0).to_vec();
        x.sample_mut(1).copy_from_slice(&first);
        let out = model.encode(&x).unwrap();
        assert_eq!(out.z.row(0), out.z.row(1));
        assert_eq!(out.c.row(0), out.c.row(1));
    }

    #[test]
    fn decode_shape_and_domain() {
        let model = Model::new(ModelConfig { latent_length: 16, ..ModelConfig::default() }).unwrap();
        let z = Matrix::zeros(2, 16);
        let one_hot = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let soft = Matrix::from_rows(&[vec![0.2, 0.3, 0.5], vec![0.6, 0.2, 0.2]]);
        let a = model.decode(&z, &one_hot).unwrap();
        assert_eq!((a.n, a.c, a.h, a.w), (2, 3, 64, 64));
        assert_eq!(a, model.decode(&z, &one_hot).unwrap());
        model.decode(&z, &soft).unwrap();
        assert!(matches!(model.decode(&Matrix::zeros(2, 15), &soft), Err(ModelError::Shape(_))));
    }

    #[test]
    fn encode_rejects_wrong_shape() {
        let model = Model::new(small_config()).unwrap();
        assert!(matches!(model.encode(&random_batch(1, 32, 0)), Err(ModelError::Shape(_))));
    }

    fn randomize_discriminator(model: &mut Model, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in model.discriminator.params_mut().values_mut() {
            *v = rng.random_range(-1.5..1.5);
        }
    }

    #[test]
    fn fresh_discriminator_is_undecided() {
        let model = Model::new(small_config()).unwrap();
        let c = Matrix::from_rows(&[vec![0.1, 0.2, 0.7], vec![0.0, 0.0, 1.0]]);
        assert!(model.discriminate(&c).unwrap().data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn discriminator_properties() {
        let mut model = Model::new(small_config()).unwrap();
        randomize_discriminator(&mut model, 11);
        let c = Matrix::from_rows(&[vec![0.1, 0.2, 0.7], vec![1.0, 0.0, 0.0]]);
        let p = model.discriminate(&c).unwrap();
        for row in p.iter_rows() {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        // Each row depends only on its own input.
        let single = model.discriminate(&Matrix::from_rows(&[c.row(1).to_vec()])).unwrap();
        assert_eq!(single.row(0), p.row(1));

        model.discriminator.params_mut().values_mut().fill(0.0);
        let p = model.discriminate(&c).unwrap();
        assert!(p.data.iter().all(|&v| v == 0.5));
        assert!(model.discriminate(&Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn discriminator_logits_are_affine() {
        let mut model = Model::new(small_config()).unwrap();
        randomize_discriminator(&mut model, 12);
        let a = Matrix::from_rows(&[vec![0.2, 0.5, 0.3]]);
        let b = Matrix::from_rows(&[vec![0.0, 1.0, 0.0]]);
        for alpha in [0.0, 0.25, 0.7, 1.0] {
            let mix: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect();
            let lm = model.discriminator.forward(&Matrix::from_rows(&[mix])).logits;
            let la = model.discriminator.forward(&a).logits;
            let lb = model.discriminator.forward(&b).logits;
            for j in 0..2 {
                let expected = alpha * la.data[j] + (1.0 - alpha) * lb.data[j];
                assert!((lm.data[j] - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn real_categorical_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = sample_real_categorical(3, 50, &mut rng);
        for row in s.iter_rows() {
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 2);
        }
        let again = sample_real_categorical(3, 50, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(s, again);
    }

    #[test]
    fn real_categorical_is_uniform() {
        // Binomial(30000, 1/3): sigma = sqrt(n p (1-p)) ≈ 81.6.
        let n = 30_000;
        let s = sample_real_categorical(3, n, &mut ChaCha8Rng::seed_from_u64(17));
        let sigma = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for k in 0..3 {
            let count = s.iter_rows().filter(|r| r[k] == 1.0).count() as f64;
            assert!((count - n as f64 / 3.0).abs() <= 3.0 * sigma, "class {k}: {count}");
        }
    }

    #[test]
    fn parameter_groups_partition() {
        let model = Model::new(small_config()).unwrap();
        let g = parameter_groups(&model);
        assert_eq!(g.discriminator.len(), 3 * 2 + 2);
        let mut names = std::collections::HashSet::new();
        for set in [g.encoder, g.decoder, g.discriminator] {
            for spec in set.specs() {
                assert!(names.insert(spec.name.clone()), "{} appears twice", spec.name);
            }
        }
        assert!(g.encoder.find("encoder.z_head.weight").is_some());
        assert!(g.encoder.find("encoder.c_head.weight").is_some());
        let enc = g.encoder.values().as_ptr_range();
        let dec = g.decoder.values().as_ptr_range();
        assert!(enc.end <= dec.start || dec.end <= enc.start);
    }

    #[test]
    fn init_is_seeded_and_finite() {
        let a = Model::new(small_config()).unwrap();
        let b = Model::new(small_config()).unwrap();
        assert_eq!(a.encoder.params(), b.encoder.params());
        assert_eq!(a.decoder.params(), b.decoder.params());
        assert_eq!(a.discriminator.params(), b.discriminator.params());
        for set in [a.encoder.params(), a.decoder.params(), a.discriminator.params()] {
            assert!(set.values().iter().all(|v| v.is_finite()));
        }
        let c = Model::new(ModelConfig { seed: 4, ..small_config() }).unwrap();
        assert_ne!(a.encoder.params(), c.encoder.params());
    }

    #[test]
    fn pretrained_backbone_loading() {
        let dir = tempfile::tempdir().unwrap();
        let donor = Model::new(ModelConfig { seed: 99, ..small_config() }).unwrap();
        let path = dir.path().join("donor.ckpt");
        Checkpoint::from_model(&donor, 0).save(&path).unwrap();

        let model = Model::new(ModelConfig { pretrained_init: Some(path.clone()), ..small_config() }).unwrap();
        let plain = Model::new(small_config()).unwrap();
        for name in model.encoder.backbone_param_names() {
            assert_eq!(model.encoder.params().get_named(name), donor.encoder.params().get_named(name));
        }
        // Heads stay randomly initialized from the model's own seed.
        assert_eq!(
            model.encoder.params().get_named("encoder.c_head.weight"),
            plain.encoder.params().get_named("encoder.c_head.weight")
        );

        let wide = Model::new(ModelConfig { widths: vec![4, 6], seed: 1, ..small_config() }).unwrap();
        let wrong = dir.path().join("wide.ckpt");
        Checkpoint::from_model(&wide, 0).save(&wrong).unwrap();
        let err = Model::new(ModelConfig { pretrained_init: Some(wrong), ..small_config() }).unwrap_err();
        match err {
            ModelError::PretrainedShape { layer, .. } => assert_eq!(layer, "encoder.conv1.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let model = Model::new(small_config()).unwrap();
        let mut ckpt = Checkpoint::from_model(&model, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let _: u64 = rng.random();
        ckpt.rng_states.insert("data".into(), RngState::capture(&rng));
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        let mut restored = back.rng_states["data"].restore().unwrap();
        assert_eq!(restored.random::<u64>(), rng.random::<u64>());
        let rebuilt = back.to_model().unwrap();
        assert_eq!(rebuilt.decoder.params(), model.decoder.params());

        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(ModelError::CorruptCheckpoint(_))));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"hello").is_err());

        let mut other = Model::new(ModelConfig { latent_length: 5, ..small_config() }).unwrap();
        assert!(matches!(ckpt.apply_to(&mut other), Err(ModelError::CheckpointMismatch(_))));
    }

    #[test]
    fn autoencoding_preserves_shape_for_configured_sizes() {
        for (side, widths) in [(8, vec![4, 8]), (16, vec![3, 5, 7]), (32, vec![4])] {
            let model = Model::new(ModelConfig { input_side: side, widths, ..small_config() }).unwrap();
            let x = random_batch(2, side, 6);
            let y = model.reconstruct(&x).unwrap();
            assert!(y.same_shape(&x));
        }
    }

    #[test]
    fn vgg_style_backbone_shapes() {
        let cfg = ModelConfig {
            input_side: 32,
            backbone: BackboneKind::Vgg16Style,
            ..small_config()
        };
        let model = Model::new(cfg).unwrap();
        assert_eq!(model.encoder.backbone_param_names().len(), 26);
        let x = random_batch(1, 32, 8);
        let out = model.encode(&x).unwrap();
        assert_eq!(out.c.cols, 3);
        assert!(model.reconstruct(&x).unwrap().same_shape(&x));
    }

    #[test]
    fn config_validation() {
        assert!(Model::new(ModelConfig { input_side: 20, widths: vec![4, 8, 8], ..small_config() }).is_err());
        assert!(Model::new(ModelConfig { latent_length: 0, ..small_config() }).is_err());
        assert!(Model::new(ModelConfig { num_classes: 1, ..small_config() }).is_err());
    }
}
