//! Procedural traffic-like scenes with consistent depth, and the datasets
//! built from them.

mod dataset;

pub use dataset::{
    build_dataset, split_counts, Dataset, DatasetError, DatasetManifest, Order, SampleRecord, Split,
    MANIFEST_FILE, SCHEMA_VERSION,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::haze::{apply_haze, transmission, HazeParams};
use crate::image::{DepthMap, Image};

/// Depth assigned to the sky; ground and obstacles are nearer.
pub const D_MAX: f64 = 3.0;
pub const MIN_SIZE: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("scene size {0} is below the minimum of {MIN_SIZE}")]
    TooSmall(usize),
}

/// A clear scene, its depth, and the hazy rendering derived from them.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    pub id: String,
    pub seed: u64,
    pub params: HazeParams,
    pub clear: Image,
    pub depth: DepthMap,
    pub hazy: Image,
}

impl ScenePair {
    pub fn synthesize(id: String, seed: u64, size: usize, params: HazeParams) -> Result<Self, SceneError> {
        let (clear, depth) = generate_scene(seed, size)?;
        let t = transmission(&depth, params.beta).expect("generated depth is valid and beta sampled positive");
        let hazy = apply_haze(&clear, &t, params.airlight).expect("shapes agree by construction");
        Ok(Self {
            id,
            seed,
            params,
            clear,
            depth,
            hazy,
        })
    }
}

struct Obstacle {
    x0: f64,
    x1: f64,
    top: f64,
    base: f64,
    depth: f64,
    color: [f64; 3],
}

fn jitter(rng: &mut ChaCha8Rng, base: [f64; 3], amount: f64) -> [f64; 3] {
    base.map(|c| (c + rng.random_range(-amount..=amount)).clamp(0.0, 1.0))
}

/// Renders a `size × size` road scene and its depth map from `seed`.
///
/// The layout is a sky above a horizon line and a ground plane below it,
/// with a road band converging on a vanishing point and 2–6 box obstacles
/// standing on the ground. Ground depth follows a pinhole ground-plane model
/// `d ∝ 1 / (row − horizon)`, the sky sits at [`D_MAX`], and each obstacle
/// takes the ground depth of its base row. Colors are quantized to 8 bits
/// and depths to `f32` so the stored files reproduce the scene exactly.
pub fn generate_scene(seed: u64, size: usize) -> Result<(Image, DepthMap), SceneError> {
    if size < MIN_SIZE {
        return Err(SceneError::TooSmall(size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let horizon = s * rng.random_range(0.35..0.55);
    let vanish_x = s * rng.random_range(0.35..0.65);
    let road_half_bottom = s * rng.random_range(0.25..0.45);
    let near_depth = rng.random_range(0.25..0.4);

    let sky_top = match rng.random_range(0..3) {
        0 => [rng.random_range(0.25..0.45), rng.random_range(0.45..0.65), rng.random_range(0.75..0.95)],
        1 => {
            let g = rng.random_range(0.55..0.8);
            [g, g, g + 0.05]
        }
        _ => [rng.random_range(0.6..0.8), rng.random_range(0.5..0.7), rng.random_range(0.45..0.65)],
    };
    let sky_horizon = sky_top.map(|c: f64| (c + 0.2).min(1.0));
    let ground = [rng.random_range(0.15..0.45), rng.random_range(0.25..0.5), rng.random_range(0.1..0.3)];
    let asphalt = {
        let g = rng.random_range(0.2..0.45);
        [g, g, g + rng.random_range(0.0..0.05)]
    };
    let marking = if rng.random_bool(0.5) { [0.95, 0.95, 0.9] } else { [0.9, 0.8, 0.2] };

    let ground_depth = |row: f64| -> f64 {
        let above = row + 0.5 - horizon;
        if above <= 0.0 {
            D_MAX
        } else {
            (near_depth * (s - horizon) / above).min(D_MAX)
        }
    };

    let count = rng.random_range(2..=6);
    let mut obstacles: Vec<Obstacle> = (0..count)
        .map(|_| {
            let base = rng.random_range((horizon + 1.0).min(s - 1.0)..s);
            let scale = base - horizon;
            let height = scale * rng.random_range(0.4..1.8);
            let width = scale * rng.random_range(0.4..1.4);
            let cx = rng.random_range(0.0..s);
            let color = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
            Obstacle {
                x0: cx - width / 2.0,
                x1: cx + width / 2.0,
                top: base - height,
                base,
                depth: ground_depth(base),
                color,
            }
        })
        .collect();
    // Painter's order: far first so near obstacles occlude.
    obstacles.sort_by(|a, b| b.depth.total_cmp(&a.depth));

    let mut image = Image::filled(size, size, [0.0; 3]);
    let mut depth = vec![0.0; size * size];
    for y in 0..size {
        let row = y as f64 + 0.5;
        for x in 0..size {
            let col = x as f64 + 0.5;
            let (mut rgb, mut d) = if row < horizon {
                let f = row / horizon;
                let c = [0, 1, 2].map(|k| sky_top[k] + (sky_horizon[k] - sky_top[k]) * f);
                (c, D_MAX)
            } else {
                let progress = (row - horizon) / (s - horizon);
                let half = road_half_bottom * progress;
                let center = vanish_x + (s / 2.0 - vanish_x) * progress;
                let on_road = (col - center).abs() < half;
                let on_mark = on_road && (col - center).abs() < (half * 0.06).max(0.5) && (y / 2) % 2 == 0;
                let c = if on_mark {
                    marking
                } else if on_road {
                    asphalt
                } else {
                    ground
                };
                (c, ground_depth(y as f64))
            };
            for ob in &obstacles {
                if col >= ob.x0 && col < ob.x1 && row >= ob.top && row < ob.base {
                    rgb = ob.color;
                    d = ob.depth;
                }
            }
            rgb = jitter(&mut rng, rgb, 0.015);
            image.set_pixel(x, y, rgb);
            depth[y * size + x] = d as f32 as f64;
        }
    }
    let depth = DepthMap::new(size, size, depth).expect("size checked");
    Ok((image.quantized(), depth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(generate_scene(42, 32).unwrap(), generate_scene(42, 32).unwrap());
        assert_ne!(generate_scene(42, 32).unwrap().0, generate_scene(43, 32).unwrap().0);
    }

    #[test]
    fn rejects_small_sizes() {
        assert_eq!(generate_scene(1, 15).unwrap_err(), SceneError::TooSmall(15));
        assert!(generate_scene(1, 16).is_ok());
    }

    #[test]
    fn depth_bounds_and_sky() {
        for seed in 0..50 {
            let (img, d) = generate_scene(seed, 32).unwrap();
            assert!(d.data.iter().all(|&v| v > 0.0 && v <= D_MAX));
            assert!(img.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            // bottom rows are the nearest ground
            let bottom_min = (0..32).map(|x| d.get(x, 31)).fold(f64::INFINITY, f64::min);
            assert!(bottom_min < 0.5);
        }
    }

    #[test]
    fn scenes_are_diverse() {
        let scenes: Vec<Image> = (0..100).map(|s| generate_scene(s, 32).unwrap().0).collect();
        let mut total = 0.0;
        let mut pairs = 0;
        let mut min = f64::INFINITY;
        for i in 0..scenes.len() {
            for j in i + 1..scenes.len() {
                let mad = scenes[i]
                    .data
                    .iter()
                    .zip(&scenes[j].data)
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    / scenes[i].data.len() as f64;
                min = min.min(mad);
                total += mad;
                pairs += 1;
            }
        }
        assert!(min > 0.02, "least distinct pair differs by {min}");
        assert!(total / pairs as f64 > 0.02);
    }

    #[test]
    fn synthesized_pair_matches_haze_model() {
        let params = HazeParams {
            airlight: [0.9, 0.85, 0.95],
            beta: 1.1,
        };
        let pair = ScenePair::synthesize("x".into(), 9, 16, params).unwrap();
        let t = transmission(&pair.depth, params.beta).unwrap();
        assert_eq!(pair.hazy, apply_haze(&pair.clear, &t, params.airlight).unwrap());
    }
}
