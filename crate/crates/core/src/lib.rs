//! Adversarially trained convolutional autoencoder classifier.
//!
//! The encoder maps an image to a style latent `z` and a categorical simplex
//! vector `c`; the decoder reconstructs the image from `[z | c]`, and a small
//! discriminator pushes `c` toward one-hot samples. Training alternates a
//! reconstruction step, a discriminator/generator pair, and a supervised
//! classification step on every batch.

pub mod dataset;
pub mod evaluation;
pub mod image;
pub mod model;
pub mod preprocess;
pub mod training;
