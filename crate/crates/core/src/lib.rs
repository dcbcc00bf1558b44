//! Haze synthesis and dehazing with two VAE-GANs coupled by MMD
//! cycle-consistency losses, trained with a small reverse-mode autodiff engine.

pub mod autodiff;
pub mod cli;
pub mod exec;
pub mod haze;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod mmd;
pub mod nets;
pub mod scene;
pub mod selfcheck;
pub mod trainer;
