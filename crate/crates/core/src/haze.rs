//! Homogeneous atmospheric scattering: `I = J·t + A·(1 − t)`, `t = exp(−β·d)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{DepthMap, Image, CHANNELS};

/// Range of each airlight component drawn by [`sample_haze_params`].
pub const AIRLIGHT_RANGE: (f64, f64) = (0.8, 1.0);
/// Range of the scattering coefficient drawn by [`sample_haze_params`].
pub const BETA_RANGE: (f64, f64) = (0.8, 1.6);
/// Default lower bound on transmission used when inverting.
pub const DEFAULT_T_FLOOR: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum HazeError {
    #[error("scattering coefficient must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("transmission floor must lie in (0, 1], got {0}")]
    BadFloor(f64),
    #[error("depth map must be finite and non-negative")]
    InvalidDepth,
    #[error("shape mismatch: image {image:?} vs map {map:?}")]
    ShapeMismatch {
        image: (usize, usize),
        map: (usize, usize),
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazeParams {
    pub airlight: [f64; 3],
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl TransmissionMap {
    pub fn uniform(width: usize, height: usize, t: f64) -> Self {
        Self {
            width,
            height,
            data: vec![t; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

pub fn transmission(depth: &DepthMap, beta: f64) -> Result<TransmissionMap, HazeError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(HazeError::NonPositiveBeta(beta));
    }
    if !depth.is_valid() {
        return Err(HazeError::InvalidDepth);
    }
    Ok(TransmissionMap {
        width: depth.width,
        height: depth.height,
        data: depth.data.iter().map(|d| (-beta * d).exp()).collect(),
    })
}

fn check_dims(image: &Image, t: &TransmissionMap) -> Result<(), HazeError> {
    if image.dims() != t.dims() {
        return Err(HazeError::ShapeMismatch {
            image: image.dims(),
            map: t.dims(),
        });
    }
    Ok(())
}

pub fn apply_haze(clear: &Image, t: &TransmissionMap, airlight: [f64; 3]) -> Result<Image, HazeError> {
    check_dims(clear, t)?;
    let mut data = Vec::with_capacity(clear.data.len());
    for (px, &tx) in clear.data.chunks(CHANNELS).zip(&t.data) {
        for c in 0..CHANNELS {
            data.push(px[c] * tx + airlight[c] * (1.0 - tx));
        }
    }
    Ok(Image {
        width: clear.width,
        height: clear.height,
        data,
    })
}

/// Solves the scattering model for `J`, with transmission floored at `t_floor`
/// and the result clamped to [0,1].
pub fn invert_haze(
    hazy: &Image,
    t: &TransmissionMap,
    airlight: [f64; 3],
    t_floor: f64,
) -> Result<Image, HazeError> {
    if !(t_floor > 0.0 && t_floor <= 1.0) {
        return Err(HazeError::BadFloor(t_floor));
    }
    check_dims(hazy, t)?;
    let mut data = Vec::with_capacity(hazy.data.len());
    for (px, &tx) in hazy.data.chunks(CHANNELS).zip(&t.data) {
        let tf = tx.max(t_floor);
        for c in 0..CHANNELS {
            let j = (px[c] - airlight[c] * (1.0 - tf)) / tf;
            data.push(j.clamp(0.0, 1.0));
        }
    }
    Ok(Image {
        width: hazy.width,
        height: hazy.height,
        data,
    })
}

/// Draws airlight components uniformly on [0.8, 1.0] and β uniformly on [0.8, 1.6].
pub fn sample_haze_params<R: Rng + ?Sized>(rng: &mut R) -> HazeParams {
    let (alo, ahi) = AIRLIGHT_RANGE;
    let airlight = [
        rng.random_range(alo..=ahi),
        rng.random_range(alo..=ahi),
        rng.random_range(alo..=ahi),
    ];
    let beta = rng.random_range(BETA_RANGE.0..=BETA_RANGE.1);
    HazeParams { airlight, beta }
}
