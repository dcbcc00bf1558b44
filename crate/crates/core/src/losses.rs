//! Loss terms of the joint objective and their weighted total.
//!
//! The negative log-likelihood of a reconstruction is taken as a mean squared
//! error (fixed-variance Gaussian decoder, constants dropped), and every MMD
//! term compares a stacked set of latent means against a fresh standard-normal
//! draw of the same size.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Tensor, TensorError, Var};
use crate::mmd::{mmd2_graph, KernelSpec, MmdError, SampleSet};
use crate::nets::{BoundNet, ModelError};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("loss term {term} is not finite ({value})")]
    NonFinite { term: &'static str, value: f64 },
    #[error("latent set has {0} entries, at least 2 are needed")]
    BufferTooSmall(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mmd(#[from] MmdError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mmd: f64,
    pub adv: f64,
    pub recon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mmd: 0.01,
            adv: 1.0,
            recon: 10.0,
        }
    }
}

pub const TERM_NAMES: [&str; 6] = ["vae_i", "vae_j", "gan_i", "gan_j", "cc_i", "cc_j"];

/// The six objective terms of one iteration and their sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: u64,
    pub vae_i: f64,
    pub vae_j: f64,
    pub gan_i: f64,
    pub gan_j: f64,
    pub cc_i: f64,
    pub cc_j: f64,
    pub total: f64,
}

impl LossReport {
    pub fn terms(&self) -> [f64; 6] {
        [self.vae_i, self.vae_j, self.gan_i, self.gan_j, self.cc_i, self.cc_j]
    }

    pub const CSV_HEADER: &'static str = "iter,vae_i,vae_j,gan_i,gan_j,cc_i,cc_j,total";

    pub fn csv_row(&self) -> String {
        let t = self.terms();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration, t[0], t[1], t[2], t[3], t[4], t[5], self.total
        )
    }
}

/// Sums the six terms (in [`TERM_NAMES`] order) into a report.
pub fn total_loss(iteration: u64, terms: [f64; 6]) -> Result<LossReport, LossError> {
    for (name, &value) in TERM_NAMES.iter().zip(&terms) {
        if !value.is_finite() {
            return Err(LossError::NonFinite { term: name, value });
        }
    }
    let total = terms.iter().sum();
    Ok(LossReport {
        iteration,
        vae_i: terms[0],
        vae_j: terms[1],
        gan_i: terms[2],
        gan_j: terms[3],
        cc_i: terms[4],
        cc_j: terms[5],
        total,
    })
}

/// `λ_recon · mean((x − x̂)²)`.
pub fn reconstruction_term(g: &mut Graph, original: Var, recon: Var, weights: &LossWeights) -> Result<Var, LossError> {
    let diff = g.sub(original, recon)?;
    let sq = g.square(diff)?;
    let mse = g.mean(sq)?;
    Ok(g.scale(mse, weights.recon)?)
}

/// `λ_m · MMD²(latents, prior draw)` for a stacked `m × L` latent set.
pub fn prior_mmd_term<R: Rng + ?Sized>(
    g: &mut Graph,
    latents: Var,
    weights: &LossWeights,
    spec: &KernelSpec,
    rng: &mut R,
) -> Result<Var, LossError> {
    let (m, l) = g.value(latents).dims2().unwrap_or((0, 0));
    if m < 2 {
        return Err(LossError::BufferTooSmall(m));
    }
    let prior = SampleSet::standard_normal(rng, m, l).to_tensor();
    let prior = g.constant(prior);
    let mmd = mmd2_graph(g, latents, prior, spec)?;
    Ok(g.scale(mmd, weights.mmd)?)
}

/// MMD-VAE loss: `λ_m·MMD(q‖p) + λ_recon·MSE(x, x̂)`.
pub fn vae_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    latents: Var,
    recon: Var,
    original: Var,
    weights: &LossWeights,
    spec: &KernelSpec,
    rng: &mut R,
) -> Result<Var, LossError> {
    let mmd = prior_mmd_term(g, latents, weights, spec, rng)?;
    let rec = reconstruction_term(g, original, recon, weights)?;
    Ok(g.add(mmd, rec)?)
}

/// `λ_adv·[log D(real) + log(1 − D(fake))]`, the quantity the discriminator
/// ascends. `fake` is detached so no gradient reaches its producer.
pub fn gan_loss_discriminator(
    g: &mut Graph,
    disc: &BoundNet,
    real: Var,
    fake: Var,
    weights: &LossWeights,
) -> Result<Var, LossError> {
    let fake = g.detach(fake)?;
    let p_real = disc.forward(g, real, "D")?;
    let p_fake = disc.forward(g, fake, "D")?;
    gan_value(g, p_real, p_fake, weights)
}

/// The adversarial value from discriminator outputs already in the graph.
pub fn gan_value(g: &mut Graph, p_real: Var, p_fake: Var, weights: &LossWeights) -> Result<Var, LossError> {
    let log_real = g.log(p_real)?;
    let neg_fake = g.neg(p_fake)?;
    let one_minus = g.add_scalar(neg_fake, 1.0)?;
    let log_fake = g.log(one_minus)?;
    let s = g.add(log_real, log_fake)?;
    let s = g.sum(s)?;
    Ok(g.scale(s, weights.adv)?)
}

/// Non-saturating generator loss `−λ_adv·log D(fake)`.
pub fn gan_loss_generator(g: &mut Graph, disc: &BoundNet, fake: Var, weights: &LossWeights) -> Result<Var, LossError> {
    let p = disc.forward(g, fake, "D")?;
    let lp = g.log(p)?;
    let s = g.sum(lp)?;
    Ok(g.scale(s, -weights.adv)?)
}

/// Cycle-consistency loss: MMD of the first-hop and second-hop latent sets
/// against the prior, plus `λ_recon·MSE(source, twice-translated)`.
#[allow(clippy::too_many_arguments)]
pub fn cycle_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    source: Var,
    twice: Var,
    first_hop: Var,
    second_hop: Var,
    weights: &LossWeights,
    spec: &KernelSpec,
    rng: &mut R,
) -> Result<Var, LossError> {
    let a = prior_mmd_term(g, first_hop, weights, spec, rng)?;
    let b = prior_mmd_term(g, second_hop, weights, spec, rng)?;
    let rec = reconstruction_term(g, source, twice, weights)?;
    let ab = g.add(a, b)?;
    Ok(g.add(ab, rec)?)
}

/// Convenience: a constant `m × L` latent set.
pub fn latent_set(g: &mut Graph, rows: &[Vec<f64>]) -> Result<Var, LossError> {
    let l = rows.first().map_or(0, Vec::len);
    let t = Tensor::matrix(rows.len(), l, rows.concat())?;
    Ok(g.constant(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmd::mmd_to_prior;
    use crate::nets::{ModelConfig, NetParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> KernelSpec {
        KernelSpec::training_default(2)
    }

    fn latents() -> Vec<Vec<f64>> {
        vec![vec![0.1, 0.2], vec![-0.5, 1.0], vec![0.9, -0.3], vec![0.0, 0.0]]
    }

    fn value(g: &Graph, v: Var) -> f64 {
        g.value(v).item()
    }

    #[test]
    fn perfect_reconstruction_leaves_only_mmd() {
        let w = LossWeights::default();
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![0.3, 0.6, 0.9]));
        let z = latent_set(&mut g, &latents()).unwrap();
        let v = vae_loss(&mut g, z, x, x, &w, &spec(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let set = SampleSet::from_points(&latents()).unwrap();
        let mmd = mmd_to_prior(&set, &mut ChaCha8Rng::seed_from_u64(1), &spec()).unwrap();
        assert!((value(&g, v) - w.mmd * mmd).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_reconstruction_value() {
        let w = LossWeights::default();
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![0.3; 48]));
        let xh = g.constant(Tensor::row(vec![0.4; 48]));
        let r = reconstruction_term(&mut g, x, xh, &w).unwrap();
        assert!((value(&g, r) - 0.1).abs() < 1e-14);
        let w2 = LossWeights { recon: 20.0, ..w };
        let r2 = reconstruction_term(&mut g, x, xh, &w2).unwrap();
        assert_eq!(value(&g, r2), 2.0 * value(&g, r));
    }

    #[test]
    fn vae_loss_needs_two_latents() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![0.3; 3]));
        let z = latent_set(&mut g, &[vec![0.0, 1.0]]).unwrap();
        let err = vae_loss(&mut g, z, x, x, &LossWeights::default(), &spec(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(err.unwrap_err(), LossError::BufferTooSmall(1));
    }

    fn half_disc(pixels: usize) -> NetParams {
        let c = ModelConfig {
            image_size: 1,
            latent_dim: 2,
            encoder_hidden: vec![],
            generator_hidden: vec![],
            discriminator_hidden: vec![2],
        };
        assert_eq!(c.pixels(), pixels);
        NetParams::zeros(c.discriminator().unwrap())
    }

    #[test]
    fn gan_values_at_half() {
        let mut g = Graph::new();
        let d = half_disc(3).bind(&mut g, false);
        let real = g.constant(Tensor::row(vec![0.2, 0.5, 0.1]));
        let fake = g.constant(Tensor::row(vec![0.9, 0.9, 0.9]));
        let w = LossWeights::default();
        let dl = gan_loss_discriminator(&mut g, &d, real, fake, &w).unwrap();
        assert!((value(&g, dl) - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((value(&g, dl) + 1.386294).abs() < 1e-6);
        let gl = gan_loss_generator(&mut g, &d, fake, &w).unwrap();
        assert!((value(&g, gl) - 2f64.ln()).abs() < 1e-12);
        let zero = LossWeights { adv: 0.0, ..w };
        let dz = gan_loss_discriminator(&mut g, &d, real, fake, &zero).unwrap();
        assert_eq!(value(&g, dz), 0.0);
    }

    #[test]
    fn gan_value_approaches_supremum() {
        let mut g = Graph::new();
        let w = LossWeights::default();
        let pr = g.constant(Tensor::scalar(1.0 - 1e-7));
        let pf = g.constant(Tensor::scalar(1e-7));
        let v = gan_value(&mut g, pr, pf, &w).unwrap();
        assert!(value(&g, v) < 0.0 && value(&g, v) > -1e-6);
    }

    #[test]
    fn discriminator_loss_does_not_reach_fake_producer() {
        let mut g = Graph::new();
        let d = half_disc(3).bind(&mut g, true);
        let real = g.constant(Tensor::row(vec![0.2, 0.5, 0.1]));
        let fake = g.param(Tensor::row(vec![0.9, 0.8, 0.7]));
        let l = gan_loss_discriminator(&mut g, &d, real, fake, &LossWeights::default()).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(fake).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cycle_decomposes_into_prior_terms() {
        let w = LossWeights::default();
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![0.3, 0.5]));
        let twice = g.constant(Tensor::row(vec![0.3, 0.5]));
        let first = latents();
        let second: Vec<Vec<f64>> = first.iter().map(|p| p.iter().map(|v| v * 2.0 - 0.3).collect()).collect();
        let f = latent_set(&mut g, &first).unwrap();
        let s = latent_set(&mut g, &second).unwrap();
        let c = cycle_loss(&mut g, x, twice, f, s, &w, &spec(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = mmd_to_prior(&SampleSet::from_points(&first).unwrap(), &mut rng, &spec()).unwrap();
        let b = mmd_to_prior(&SampleSet::from_points(&second).unwrap(), &mut rng, &spec()).unwrap();
        assert!((value(&g, c) - (w.mmd * a + w.mmd * b)).abs() < 1e-12);

        let no_mmd = LossWeights { mmd: 0.0, ..w };
        let off = g.constant(Tensor::row(vec![0.4, 0.6]));
        let c0 = cycle_loss(&mut g, x, off, f, s, &no_mmd, &spec(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!((value(&g, c0) - 10.0 * 0.01).abs() < 1e-14);
    }

    #[test]
    fn total_is_sum_and_rejects_non_finite() {
        assert_eq!(total_loss(0, [0.0; 6]).unwrap().total, 0.0);
        let r = total_loss(3, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.total, 21.0);
        assert_eq!(r.iteration, 3);
        let err = total_loss(0, [0.0, 0.0, f64::NAN, 0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, LossError::NonFinite { term: "gan_i", .. }));
        assert_eq!(r.csv_row(), "3,1,2,3,4,5,6,21");
    }
}
