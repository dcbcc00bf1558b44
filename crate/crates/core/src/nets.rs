//! The six fully-connected subnetworks: encoders `E_I`, `E_J`, generators
//! `G_I`, `G_J` and discriminators `D_I`, `D_J`, where `I` is the hazy domain
//! and `J` the clear domain.
//!
//! Images enter the networks flattened to a `1 × (H·W·3)` row in interleaved
//! channel order.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Tensor, TensorError, Var};
use crate::image::{Image, CHANNELS};

/// Discriminator outputs are clamped into `[D_CLAMP, 1 − D_CLAMP]`.
pub const D_CLAMP: f64 = 1e-7;
pub const DEFAULT_LATENT_DIM: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("architecture needs at least two positive widths, got {0:?}")]
    BadArchitecture(Vec<usize>),
    #[error("parameter tensor {index} has shape {found:?}, architecture expects {expected:?}")]
    ParamShape {
        index: usize,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("{net}: input width {found}, expected {expected}")]
    InputWidth {
        net: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("model has no trained parameters")]
    Uninitialized,
    #[error("unknown translation direction {0:?} (expected hazy-to-clear or clear-to-hazy)")]
    UnknownDirection(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    /// Encoder means.
    Identity,
    /// `0.5·tanh(x) + 0.5`, generator images in [0,1].
    RescaledTanh,
    /// Sigmoid then clamp, discriminator probabilities.
    Sigmoid,
}

/// Layer widths from input to output; hidden layers use the leaky rectifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub widths: Vec<usize>,
    pub output: OutputActivation,
}

impl Architecture {
    pub fn new(widths: Vec<usize>, output: OutputActivation) -> Result<Self, ModelError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(ModelError::BadArchitecture(widths));
        }
        Ok(Self { widths, output })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Expected shapes of `[W₀, b₀, W₁, b₁, …]`.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.widths
            .windows(2)
            .flat_map(|w| [vec![w[0], w[1]], vec![1, w[1]]])
            .collect()
    }
}

/// Weights and biases of one subnetwork.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub arch: Architecture,
    pub tensors: Vec<Tensor>,
}

impl NetParams {
    pub fn from_tensors(arch: Architecture, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        let shapes = arch.param_shapes();
        if shapes.len() != tensors.len() {
            return Err(ModelError::ParamShape {
                index: tensors.len().min(shapes.len()),
                found: vec![tensors.len()],
                expected: vec![shapes.len()],
            });
        }
        for (index, (t, s)) in tensors.iter().zip(&shapes).enumerate() {
            if t.shape() != s.as_slice() {
                return Err(ModelError::ParamShape {
                    index,
                    found: t.shape().to_vec(),
                    expected: s.clone(),
                });
            }
        }
        Ok(Self { arch, tensors })
    }

    pub fn zeros(arch: Architecture) -> Self {
        let tensors = arch.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        Self { arch, tensors }
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every tensor with `g`, trainable or constant.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundNet {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        BoundNet {
            arch: self.arch.clone(),
            vars,
        }
    }
}

/// Xavier-uniform weights on `[−s, s]`, `s = √(6/(fan_in + fan_out))`, zero biases.
pub fn init_params<R: Rng + ?Sized>(rng: &mut R, arch: &Architecture) -> NetParams {
    let mut tensors = Vec::with_capacity(2 * arch.layers());
    for w in arch.widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-s..=s)).collect();
        tensors.push(Tensor::matrix(fan_in, fan_out, data).expect("widths are positive"));
        tensors.push(Tensor::zeros(&[1, fan_out]));
    }
    NetParams {
        arch: arch.clone(),
        tensors,
    }
}

/// A network whose parameters live in a particular graph.
#[derive(Clone, Debug)]
pub struct BoundNet {
    pub arch: Architecture,
    pub vars: Vec<Var>,
}

impl BoundNet {
    pub fn forward(&self, g: &mut Graph, input: Var, name: &'static str) -> Result<Var, ModelError> {
        let found = g.value(input).dims2().map_or(0, |(_, c)| c);
        if found != self.arch.input_width() {
            return Err(ModelError::InputWidth {
                net: name,
                found,
                expected: self.arch.input_width(),
            });
        }
        let mut h = input;
        let layers = self.arch.layers();
        for l in 0..layers {
            let z = g.matmul(h, self.vars[2 * l])?;
            let z = g.add_row(z, self.vars[2 * l + 1])?;
            h = if l + 1 < layers {
                g.leaky_relu(z)?
            } else {
                match self.arch.output {
                    OutputActivation::Identity => z,
                    OutputActivation::RescaledTanh => {
                        let t = g.tanh(z)?;
                        let t = g.scale(t, 0.5)?;
                        g.add_scalar(t, 0.5)?
                    }
                    OutputActivation::Sigmoid => {
                        let p = g.sigmoid(z)?;
                        g.clamp(p, D_CLAMP, 1.0 - D_CLAMP)?
                    }
                }
            };
        }
        Ok(h)
    }
}

/// Per-image latent: encoder mean, noise, and `z = mean + η`.
#[derive(Clone, Debug)]
pub struct LatentCode {
    pub mean: Var,
    pub eta: Tensor,
    pub z: Var,
}

/// `z = mean + η` with `η ~ N(0, I)`, or `η = 0` when `rng` is `None`.
/// `η` enters as a constant, so gradients reach only the mean.
pub fn reparameterize<R: Rng + ?Sized>(
    g: &mut Graph,
    mean: Var,
    rng: Option<&mut R>,
) -> Result<LatentCode, ModelError> {
    let shape = g.value(mean).shape().to_vec();
    let n = g.value(mean).len();
    let data = match rng {
        Some(rng) => (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        None => vec![0.0; n],
    };
    let eta = Tensor::new(shape, data)?;
    let eta_var = g.constant(eta.clone());
    let z = g.add(mean, eta_var)?;
    Ok(LatentCode { mean, eta, z })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Dehazing, `G_J(E_I(x) + η)`.
    HazyToClear,
    /// Haze synthesis, `G_I(E_J(x) + η)`.
    ClearToHazy,
}

impl std::str::FromStr for Direction {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hazy-to-clear" | "dehazing" | "dehaze" => Ok(Self::HazyToClear),
            "clear-to-hazy" | "synthesis" | "hazify" => Ok(Self::ClearToHazy),
            other => Err(ModelError::UnknownDirection(other.to_string())),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::HazyToClear => "dehazing",
            Self::ClearToHazy => "synthesis",
        })
    }
}

/// Hidden-layer widths of the three network kinds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
}

impl ModelConfig {
    /// Encoder `P→512→128→L`, generator `L→128→512→P`, discriminator `P→256→64→1`.
    pub fn new(image_size: usize, latent_dim: usize) -> Self {
        Self {
            image_size,
            latent_dim,
            encoder_hidden: vec![512, 128],
            generator_hidden: vec![128, 512],
            discriminator_hidden: vec![256, 64],
        }
    }

    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size * CHANNELS
    }

    fn chain(first: usize, hidden: &[usize], last: usize) -> Vec<usize> {
        std::iter::once(first).chain(hidden.iter().copied()).chain(std::iter::once(last)).collect()
    }

    pub fn encoder(&self) -> Result<Architecture, ModelError> {
        Architecture::new(
            Self::chain(self.pixels(), &self.encoder_hidden, self.latent_dim),
            OutputActivation::Identity,
        )
    }

    pub fn generator(&self) -> Result<Architecture, ModelError> {
        Architecture::new(
            Self::chain(self.latent_dim, &self.generator_hidden, self.pixels()),
            OutputActivation::RescaledTanh,
        )
    }

    pub fn discriminator(&self) -> Result<Architecture, ModelError> {
        Architecture::new(
            Self::chain(self.pixels(), &self.discriminator_hidden, 1),
            OutputActivation::Sigmoid,
        )
    }
}

/// Identifies one of the six subnetworks; `ALL` is the serialization order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NetId {
    EncoderHazy,
    EncoderClear,
    GeneratorHazy,
    GeneratorClear,
    DiscriminatorHazy,
    DiscriminatorClear,
}

impl NetId {
    pub const ALL: [NetId; 6] = [
        NetId::EncoderHazy,
        NetId::EncoderClear,
        NetId::GeneratorHazy,
        NetId::GeneratorClear,
        NetId::DiscriminatorHazy,
        NetId::DiscriminatorClear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NetId::EncoderHazy => "E_I",
            NetId::EncoderClear => "E_J",
            NetId::GeneratorHazy => "G_I",
            NetId::GeneratorClear => "G_J",
            NetId::DiscriminatorHazy => "D_I",
            NetId::DiscriminatorClear => "D_J",
        }
    }

    pub fn is_discriminator(self) -> bool {
        matches!(self, NetId::DiscriminatorHazy | NetId::DiscriminatorClear)
    }
}

/// Both VAE-GANs.
#[derive(Clone, Debug, PartialEq)]
pub struct HazeModel {
    pub config: ModelConfig,
    pub nets: [NetParams; 6],
}

impl HazeModel {
    /// Initializes all six networks, in [`NetId::ALL`] order, from `rng`.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        let (enc, gen, disc) = (config.encoder()?, config.generator()?, config.discriminator()?);
        let nets = [
            init_params(rng, &enc),
            init_params(rng, &enc),
            init_params(rng, &gen),
            init_params(rng, &gen),
            init_params(rng, &disc),
            init_params(rng, &disc),
        ];
        Ok(Self { config, nets })
    }

    pub fn net(&self, id: NetId) -> &NetParams {
        &self.nets[id as usize]
    }

    pub fn net_mut(&mut self, id: NetId) -> &mut NetParams {
        &mut self.nets[id as usize]
    }

    pub fn image_row(&self, image: &Image) -> Result<Tensor, ModelError> {
        if image.data.len() != self.config.pixels() {
            return Err(ModelError::InputWidth {
                net: "image",
                found: image.data.len(),
                expected: self.config.pixels(),
            });
        }
        Ok(Tensor::row(image.data.clone()))
    }

    /// Translates `image` across domains through the shared latent space.
    /// With `rng = None` the latent noise is zero and the map is deterministic.
    pub fn translate<R: Rng + ?Sized>(
        &self,
        image: &Image,
        direction: Direction,
        rng: Option<&mut R>,
    ) -> Result<Image, ModelError> {
        if self.nets.iter().any(|n| n.tensors.is_empty()) {
            return Err(ModelError::Uninitialized);
        }
        let (enc, gen) = match direction {
            Direction::HazyToClear => (NetId::EncoderHazy, NetId::GeneratorClear),
            Direction::ClearToHazy => (NetId::EncoderClear, NetId::GeneratorHazy),
        };
        let mut g = Graph::new();
        let x = g.constant(self.image_row(image)?);
        let e = self.net(enc).bind(&mut g, false);
        let mean = e.forward(&mut g, x, enc.name())?;
        let code = reparameterize(&mut g, mean, rng)?;
        let gnet = self.net(gen).bind(&mut g, false);
        let out = gnet.forward(&mut g, code.z, gen.name())?;
        Ok(Image::new(image.width, image.height, g.value(out).data().to_vec()).expect("generator width matches"))
    }
}
