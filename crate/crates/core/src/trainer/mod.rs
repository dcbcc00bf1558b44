//! Alternating min-max training of both VAE-GANs at batch size one.
//!
//! Each step forwards all six streams (two reconstructions, two translations,
//! two cycles), takes one Adam ascent step for the discriminators against the
//! detached fakes, then one Adam descent step for encoders and generators with
//! the freshly updated discriminators held constant.

mod buffer;
mod checkpoint;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use buffer::LatentBuffer;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Graph, Tensor, TensorError, Var};
use crate::image::Image;
use crate::losses::{
    cycle_loss, gan_loss_discriminator, gan_loss_generator, gan_value, reconstruction_term, total_loss, vae_loss, LossError,
    LossReport, LossWeights,
};
use crate::mmd::{KernelSpec, MmdError};
use crate::nets::{reparameterize, BoundNet, HazeModel, ModelConfig, ModelError, NetId, NetParams};
use crate::scene::{Dataset, DatasetError, Split};

pub const DEFAULT_ITERATIONS: u64 = 2000;
pub const DEFAULT_CHECKPOINT_EVERY: u64 = 500;
pub const DEFAULT_BUFFER: usize = 64;
pub const DEFAULT_SEED: u64 = 7;
pub const PROGRESS_EVERY: u64 = 50;
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mmd(#[from] MmdError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("non-finite gradient for {net}; step rolled back")]
    NonFiniteGradient { net: &'static str },
    #[error("checkpoint was trained with different settings: {0}")]
    SettingsMismatch(String),
}

/// Everything that shapes the optimization trajectory. Stored verbatim in
/// checkpoints; run length and output paths are deliberately absent so a
/// resumed run writes the same bytes as a straight one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub buffer_capacity: usize,
    pub kernel: KernelSpec,
    pub seed: u64,
    pub deterministic_eta: bool,
}

impl RunSettings {
    pub fn new(image_size: usize, latent_dim: usize, seed: u64) -> Self {
        Self {
            model: ModelConfig::new(image_size, latent_dim),
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            buffer_capacity: DEFAULT_BUFFER,
            kernel: KernelSpec::training_default(latent_dim),
            seed,
            deterministic_eta: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let w = &self.weights;
        if [w.mmd, w.adv, w.recon].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(TrainError::Config(format!("loss weights must be finite and non-negative, got {w:?}")));
        }
        if self.buffer_capacity < 2 {
            return Err(TrainError::Config(format!(
                "latent buffer capacity must be at least 2, got {}",
                self.buffer_capacity
            )));
        }
        if !(self.adam.lr >= 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(TrainError::Config(format!("invalid Adam settings {:?}", self.adam)));
        }
        if self.model.latent_dim == 0 || self.model.image_size == 0 {
            return Err(TrainError::Config("image size and latent dimension must be positive".into()));
        }
        KernelSpec::new(self.kernel.bandwidths().to_vec())?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    /// Total iterations, counting any restored from `resume`.
    pub iterations: u64,
    pub checkpoint_every: u64,
    pub settings: RunSettings,
    pub resume: Option<PathBuf>,
    /// Print a progress line every `PROGRESS_EVERY` iterations.
    pub progress: bool,
}

impl TrainConfig {
    pub fn new(data: impl Into<PathBuf>, out: impl Into<PathBuf>, settings: RunSettings) -> Self {
        Self {
            data: data.into(),
            out: out.into(),
            iterations: DEFAULT_ITERATIONS,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
            settings,
            resume: None,
            progress: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.iterations == 0 {
            return Err(TrainError::Config("iterations must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(TrainError::Config("checkpoint interval must be positive".into()));
        }
        self.settings.validate()
    }
}

/// Index of each domain in per-domain arrays.
const HAZY: usize = 0;
const CLEAR: usize = 1;

const ENCODERS: [NetId; 2] = [NetId::EncoderHazy, NetId::EncoderClear];
const GENERATORS: [NetId; 2] = [NetId::GeneratorHazy, NetId::GeneratorClear];
const DISCRIMINATORS: [NetId; 2] = [NetId::DiscriminatorHazy, NetId::DiscriminatorClear];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub settings: RunSettings,
    pub model: HazeModel,
    /// One optimizer per network, in [`NetId::ALL`] order.
    pub adam: Vec<AdamState>,
    /// Hazy then clear.
    pub buffers: [LatentBuffer; 2],
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub history: Vec<LossReport>,
}

impl TrainState {
    /// Fresh parameters from the master seed; training noise uses a separate stream.
    pub fn new(settings: RunSettings) -> Result<Self, TrainError> {
        settings.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(settings.seed);
        let model = HazeModel::init(settings.model.clone(), &mut init)?;
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream(1);
        let adam = model.nets.iter().map(|n| AdamState::new(settings.adam, &n.tensors)).collect();
        let l = settings.model.latent_dim;
        let b = settings.buffer_capacity;
        Ok(Self {
            model,
            adam,
            buffers: [LatentBuffer::new(b, l), LatentBuffer::new(b, l)],
            iteration: 0,
            rng,
            history: Vec::new(),
            settings,
        })
    }
}

/// Graph holding every generator-side stream of one step.
struct Streams {
    g: Graph,
    enc: [BoundNet; 2],
    gen: [BoundNet; 2],
    x: [Var; 2],
    means: [Var; 2],
    /// `E_J(x_{i→j})` and `E_I(x_{j→i})`.
    cycle_means: [Var; 2],
    recon: [Var; 2],
    /// `x_{i→j}` (a fake clear image) and `x_{j→i}` (a fake hazy image).
    trans: [Var; 2],
    cycle: [Var; 2],
}

fn forward_streams(
    model: &HazeModel,
    hazy: &Image,
    clear: &Image,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Streams, TrainError> {
    let mut g = Graph::new();
    let x = [g.constant(model.image_row(hazy)?), g.constant(model.image_row(clear)?)];
    let enc = ENCODERS.map(|id| model.net(id).bind(&mut g, true));
    let gen = GENERATORS.map(|id| model.net(id).bind(&mut g, true));

    let mut means = [x[0]; 2];
    let mut zs = [x[0]; 2];
    for d in [HAZY, CLEAR] {
        means[d] = enc[d].forward(&mut g, x[d], ENCODERS[d].name())?;
        zs[d] = reparameterize(&mut g, means[d], rng.as_deref_mut())?.z;
    }
    let mut recon = [x[0]; 2];
    let mut trans = [x[0]; 2];
    for d in [HAZY, CLEAR] {
        let o = 1 - d;
        recon[d] = gen[d].forward(&mut g, zs[d], GENERATORS[d].name())?;
        trans[d] = gen[o].forward(&mut g, zs[d], GENERATORS[o].name())?;
    }
    let mut cycle_means = [x[0]; 2];
    let mut cycle = [x[0]; 2];
    for d in [HAZY, CLEAR] {
        let o = 1 - d;
        cycle_means[d] = enc[o].forward(&mut g, trans[d], ENCODERS[o].name())?;
        let z = reparameterize(&mut g, cycle_means[d], rng.as_deref_mut())?.z;
        cycle[d] = gen[d].forward(&mut g, z, GENERATORS[d].name())?;
    }
    Ok(Streams {
        g,
        enc,
        gen,
        x,
        means,
        cycle_means,
        recon,
        trans,
        cycle,
    })
}

/// `[L_VAE_I, L_VAE_J]` and `[L_cc_I, L_cc_J]` on the stream graph. MMD terms
/// are skipped until both buffers hold two means.
fn vae_and_cycle_terms(
    s: &mut Streams,
    buffers: &[LatentBuffer; 2],
    settings: &RunSettings,
    rng: &mut ChaCha8Rng,
) -> Result<([Var; 2], [Var; 2]), TrainError> {
    let weights = &settings.weights;
    let kernel = &settings.kernel;
    let ready = buffers.iter().all(LatentBuffer::ready);
    let mut vae = [s.x[0]; 2];
    let mut cc = [s.x[0]; 2];
    for d in [HAZY, CLEAR] {
        vae[d] = if ready {
            let set = buffers[d].stacked_with(&mut s.g, s.means[d])?;
            vae_loss(&mut s.g, set, s.recon[d], s.x[d], weights, kernel, rng)?
        } else {
            reconstruction_term(&mut s.g, s.x[d], s.recon[d], weights)?
        };
    }
    for d in [HAZY, CLEAR] {
        cc[d] = if ready {
            let first = buffers[d].stacked_with(&mut s.g, s.means[d])?;
            let second = buffers[1 - d].stacked_with(&mut s.g, s.cycle_means[d])?;
            cycle_loss(&mut s.g, s.x[d], s.cycle[d], first, second, weights, kernel, rng)?
        } else {
            reconstruction_term(&mut s.g, s.x[d], s.cycle[d], weights)?
        };
    }
    Ok((vae, cc))
}

/// The six-term objective as one differentiable scalar, with every network
/// trainable and the adversarial terms in their minimax form (fakes attached).
/// Uses copies of the state's noise stream and buffers, so repeated calls
/// see identical noise. Returns the graph, the loss and each network's
/// parameter handles in [`NetId::ALL`] order.
pub fn full_objective(
    state: &TrainState,
    hazy: &Image,
    clear: &Image,
) -> Result<(Graph, Var, Vec<Vec<Var>>), TrainError> {
    let settings = &state.settings;
    let mut rng = state.rng.clone();
    let mut buffers = state.buffers.clone();
    let eta_rng = if settings.deterministic_eta { None } else { Some(&mut rng) };
    let mut s = forward_streams(&state.model, hazy, clear, eta_rng)?;
    for d in [HAZY, CLEAR] {
        buffers[d].push(s.g.value(s.means[d]).data());
    }
    let (vae, cc) = vae_and_cycle_terms(&mut s, &buffers, settings, &mut rng)?;
    let g = &mut s.g;
    let disc = DISCRIMINATORS.map(|id| state.model.net(id).bind(g, true));
    let mut loss = g.add(vae[0], vae[1])?;
    for d in [HAZY, CLEAR] {
        let p_real = disc[d].forward(g, s.x[d], DISCRIMINATORS[d].name())?;
        let p_fake = disc[d].forward(g, s.trans[1 - d], DISCRIMINATORS[d].name())?;
        let gan = gan_value(g, p_real, p_fake, &settings.weights)?;
        loss = g.add(loss, gan)?;
    }
    loss = g.add(loss, cc[0])?;
    loss = g.add(loss, cc[1])?;
    let vars = vec![
        s.enc[HAZY].vars.clone(),
        s.enc[CLEAR].vars.clone(),
        s.gen[HAZY].vars.clone(),
        s.gen[CLEAR].vars.clone(),
        disc[HAZY].vars.clone(),
        disc[CLEAR].vars.clone(),
    ];
    Ok((s.g, loss, vars))
}

fn grads_of(g: &Graph, net: &BoundNet, name: &'static str) -> Result<Vec<Tensor>, TrainError> {
    let grads: Vec<Tensor> = net.vars.iter().map(|&v| g.grad(v)).collect::<Result<_, _>>()?;
    if grads.iter().all(Tensor::all_finite) {
        Ok(grads)
    } else {
        Err(TrainError::NonFiniteGradient { net: name })
    }
}

/// Discriminator-side adversarial values `[L_GAN_I, L_GAN_J]` and their
/// gradients with respect to `D_I`, `D_J`. Nothing is mutated.
pub(crate) fn discriminator_grads(
    model: &HazeModel,
    real: [&Tensor; 2],
    fake: [&Tensor; 2],
    weights: &LossWeights,
) -> Result<([f64; 2], [Vec<Tensor>; 2]), TrainError> {
    let mut g = Graph::new();
    let disc = DISCRIMINATORS.map(|id| model.net(id).bind(&mut g, true));
    let mut values = [0.0; 2];
    let mut terms = Vec::with_capacity(2);
    for d in [HAZY, CLEAR] {
        let r = g.constant(real[d].clone());
        let f = g.constant(fake[d].clone());
        let v = gan_loss_discriminator(&mut g, &disc[d], r, f, weights)?;
        values[d] = g.value(v).item();
        terms.push(v);
    }
    let sum = g.add(terms[0], terms[1])?;
    let loss = g.neg(sum)?;
    g.backward(loss)?;
    let grads = [
        grads_of(&g, &disc[HAZY], DISCRIMINATORS[HAZY].name())?,
        grads_of(&g, &disc[CLEAR], DISCRIMINATORS[CLEAR].name())?,
    ];
    Ok((values, grads))
}

fn apply(model: &mut HazeModel, adam: &mut [AdamState], id: NetId, grads: &[Tensor]) -> Result<(), TrainError> {
    adam_step(&mut model.net_mut(id).tensors, grads, &mut adam[id as usize])?;
    Ok(())
}

/// One iteration on a hazy and a clear image. On error the state is left
/// exactly as it was.
pub fn train_step(state: &mut TrainState, hazy: &Image, clear: &Image) -> Result<LossReport, TrainError> {
    let settings = &state.settings;
    let weights = settings.weights;
    let mut rng = state.rng.clone();
    let mut buffers = state.buffers.clone();

    let eta_rng = if settings.deterministic_eta { None } else { Some(&mut rng) };
    let mut s = forward_streams(&state.model, hazy, clear, eta_rng)?;
    for d in [HAZY, CLEAR] {
        buffers[d].push(s.g.value(s.means[d]).data());
    }

    let (vae, cc) = vae_and_cycle_terms(&mut s, &buffers, settings, &mut rng)?;

    // Discriminator phase: real images against the opposite-domain fakes.
    let real = [s.g.value(s.x[HAZY]).clone(), s.g.value(s.x[CLEAR]).clone()];
    let fake = [s.g.value(s.trans[CLEAR]).clone(), s.g.value(s.trans[HAZY]).clone()];
    let (gan, d_grads) = discriminator_grads(&state.model, [&real[0], &real[1]], [&fake[0], &fake[1]], &weights)?;
    let value = |v: Var| s.g.value(v).item();
    let report = total_loss(
        state.iteration + 1,
        [value(vae[0]), value(vae[1]), gan[0], gan[1], value(cc[0]), value(cc[1])],
    )?;

    let snapshot: Vec<(NetParams, AdamState)> = DISCRIMINATORS
        .iter()
        .map(|&id| (state.model.net(id).clone(), state.adam[id as usize].clone()))
        .collect();
    for d in [HAZY, CLEAR] {
        apply(&mut state.model, &mut state.adam, DISCRIMINATORS[d], &d_grads[d])?;
    }

    // Generator phase, discriminators frozen at their new values.
    let result = generator_grads(&mut s, &state.model, &vae, &cc, &weights);
    let g_grads = match result {
        Ok(g) => g,
        Err(e) => {
            for (&id, (net, adam)) in DISCRIMINATORS.iter().zip(snapshot) {
                *state.model.net_mut(id) = net;
                state.adam[id as usize] = adam;
            }
            return Err(e);
        }
    };
    for (id, grads) in ENCODERS.iter().chain(&GENERATORS).zip(&g_grads) {
        apply(&mut state.model, &mut state.adam, *id, grads)?;
    }

    state.rng = rng;
    state.buffers = buffers;
    state.iteration += 1;
    state.history.push(report);
    Ok(report)
}

/// Gradients for `E_I, E_J, G_I, G_J` of the generator-side objective.
fn generator_grads(
    s: &mut Streams,
    model: &HazeModel,
    vae: &[Var; 2],
    cc: &[Var; 2],
    weights: &LossWeights,
) -> Result<Vec<Vec<Tensor>>, TrainError> {
    let g = &mut s.g;
    let disc = DISCRIMINATORS.map(|id| model.net(id).bind(g, false));
    let adv_i = gan_loss_generator(g, &disc[HAZY], s.trans[CLEAR], weights)?;
    let adv_j = gan_loss_generator(g, &disc[CLEAR], s.trans[HAZY], weights)?;
    for (term, v) in [("gan_i", adv_i), ("gan_j", adv_j)] {
        let value = g.value(v).item();
        if !value.is_finite() {
            return Err(LossError::NonFinite { term, value }.into());
        }
    }
    let mut loss = g.add(vae[0], vae[1])?;
    for v in [adv_i, adv_j, cc[0], cc[1]] {
        loss = g.add(loss, v)?;
    }
    g.backward(loss)?;
    let mut out = Vec::with_capacity(4);
    for d in [HAZY, CLEAR] {
        out.push(grads_of(g, &s.enc[d], ENCODERS[d].name())?);
    }
    for d in [HAZY, CLEAR] {
        out.push(grads_of(g, &s.gen[d], GENERATORS[d].name())?);
    }
    Ok(out)
}

/// Permutation of `0..n` for one epoch of one domain, a pure function of the
/// master seed so that a resumed run replays the same order.
pub fn epoch_order(seed: u64, epoch: u64, domain: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1000 + 2 * epoch + domain as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Which training images feed iteration `k` (0-based), hazy then clear.
pub fn sample_indices(seed: u64, k: u64, n: usize) -> [usize; 2] {
    let epoch = k / n as u64;
    let pos = (k % n as u64) as usize;
    [HAZY, CLEAR].map(|d| epoch_order(seed, epoch, d, n)[pos])
}

pub fn checkpoint_path(out: &Path, iteration: u64) -> PathBuf {
    out.join(format!("ckpt_{iteration:06}.hzck"))
}

/// Writes `bytes` through a temporary sibling so a failed write leaves nothing behind.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), std::io::Error> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn write_metrics(path: &Path, history: &[LossReport]) -> Result<(), TrainError> {
    let mut text = String::from(LossReport::CSV_HEADER);
    text.push('\n');
    for r in history {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    write_atomic(path, text.as_bytes()).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub final_checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Runs (or resumes) training up to `config.iterations`, checkpointing every
/// interval and at completion, and writes the metrics log.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let dataset = Dataset::open(&config.data)?;
    let size = dataset.manifest.image_size;
    if size != config.settings.model.image_size {
        return Err(TrainError::Config(format!(
            "dataset images are {size}x{size}, model expects {0}x{0}",
            config.settings.model.image_size
        )));
    }
    let pairs = dataset.load_split(Split::Train)?;
    if pairs.is_empty() {
        return Err(TrainError::Config("dataset has no training records".into()));
    }

    let mut state = match &config.resume {
        Some(path) => {
            let state = load_checkpoint(path)?;
            if state.settings != config.settings {
                return Err(TrainError::SettingsMismatch(format!(
                    "{} was written with {:?}",
                    path.display(),
                    state.settings
                )));
            }
            state
        }
        None => TrainState::new(config.settings.clone())?,
    };
    fs::create_dir_all(&config.out).map_err(|source| TrainError::Io {
        path: config.out.clone(),
        source,
    })?;
    let metrics = config.out.join(METRICS_FILE);

    let n = pairs.len();
    let seed = state.settings.seed;
    let mut cached: Option<(u64, [Vec<usize>; 2])> = None;
    let mut last_saved = None;
    while state.iteration < config.iterations {
        let k = state.iteration;
        let epoch = k / n as u64;
        if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            cached = Some((epoch, [HAZY, CLEAR].map(|d| epoch_order(seed, epoch, d, n))));
        }
        let orders = &cached.as_ref().expect("epoch order").1;
        let pos = (k % n as u64) as usize;
        let report = train_step(&mut state, &pairs[orders[HAZY][pos]].hazy, &pairs[orders[CLEAR][pos]].clear)?;
        if config.progress && state.iteration % PROGRESS_EVERY == 0 {
            println!("iter {:>6}  total {:.6}", state.iteration, report.total);
        }
        if state.iteration % config.checkpoint_every == 0 {
            let path = checkpoint_path(&config.out, state.iteration);
            save_checkpoint(&state, &path)?;
            write_metrics(&metrics, &state.history)?;
            last_saved = Some(path);
        }
    }
    let final_checkpoint = checkpoint_path(&config.out, state.iteration);
    if last_saved.as_ref() != Some(&final_checkpoint) {
        save_checkpoint(&state, &final_checkpoint)?;
    }
    write_metrics(&metrics, &state.history)?;
    Ok(TrainOutcome {
        state,
        final_checkpoint,
        metrics,
    })
}
