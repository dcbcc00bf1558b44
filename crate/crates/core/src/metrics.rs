//! PSNR, SSIM and batch evaluation over the test split.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::exec;
use crate::image::{Image, ImageError};
use crate::nets::{Direction, HazeModel, ModelError};
use crate::scene::{Dataset, DatasetError, Split};

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 8;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("images differ in shape: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("peak must be positive, got {0}")]
    Peak(f64),
    #[error("image {0:?} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall((usize, usize)),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn same_shape(a: &Image, b: &Image) -> Result<(), MetricError> {
    if a.dims() == b.dims() {
        Ok(())
    } else {
        Err(MetricError::Shape(a.dims(), b.dims()))
    }
}

/// `10·log10(peak²/MSE)`, capped at [`PSNR_CAP`] for identical images.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64, MetricError> {
    same_shape(a, b)?;
    if !(peak > 0.0) {
        return Err(MetricError::Peak(peak));
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Mean single-scale SSIM over every 8×8 window (stride 1) of the channel-mean
/// grayscale images, with population statistics.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricError> {
    same_shape(a, b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall((w, h)));
    }
    let (ga, gb) = (a.grayscale(), b.grayscale());
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut sa, mut sb) = (0.0, 0.0);
            for y in y0..y0 + SSIM_WINDOW {
                for x in x0..x0 + SSIM_WINDOW {
                    sa += ga[y * w + x];
                    sb += gb[y * w + x];
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in y0..y0 + SSIM_WINDOW {
                for x in x0..x0 + SSIM_WINDOW {
                    let (da, db) = (ga[y * w + x] - ma, gb[y * w + x] - mb);
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            let (va, vb, cov) = (va / n, vb / n, cov / n);
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        }
    }
    Ok(total / ((w - SSIM_WINDOW + 1) * (h - SSIM_WINDOW + 1)) as f64)
}

/// Anything that maps an image across domains.
pub trait Translator: Sync {
    fn translate(&self, image: &Image, direction: Direction) -> Result<Image, MetricError>;
}

/// Trained model in deterministic mode (zero latent noise).
impl Translator for HazeModel {
    fn translate(&self, image: &Image, direction: Direction) -> Result<Image, MetricError> {
        Ok(HazeModel::translate(self, image, direction, None::<&mut rand_chacha::ChaCha8Rng>)?)
    }
}

/// Pass-through, giving the do-nothing baseline.
pub struct Identity;

impl Translator for Identity {
    fn translate(&self, image: &Image, _direction: Direction) -> Result<Image, MetricError> {
        Ok(image.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageScore {
    pub file: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub direction: Direction,
    pub checkpoint: String,
    pub rows: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricReport {
    pub fn from_rows(direction: Direction, checkpoint: String, rows: Vec<ImageScore>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        Self {
            direction,
            checkpoint,
            rows,
            mean_psnr,
            mean_ssim,
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "{} {}: mean PSNR {:.4} dB, mean SSIM {:.4} over {} images",
            self.checkpoint,
            self.direction,
            self.mean_psnr,
            self.mean_ssim,
            self.rows.len()
        )
    }

    /// `file,psnr,ssim` rows followed by a `# ` summary line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("file,psnr,ssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.file, r.psnr, r.ssim);
        }
        let _ = writeln!(s, "# {}", self.summary());
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), MetricError> {
        std::fs::write(path, self.to_csv()).map_err(|source| MetricError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Side-by-side `input | output | reference` image.
pub fn triptych(input: &Image, output: &Image, reference: &Image) -> Result<Image, MetricError> {
    same_shape(input, output)?;
    same_shape(input, reference)?;
    let (w, h) = input.dims();
    let mut out = Image::filled(3 * w, h, [0.0; 3]);
    for (k, img) in [input, output, reference].into_iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                out.set_pixel(k * w + x, y, img.pixel(x, y));
            }
        }
    }
    Ok(out)
}

/// Scores `translator` on the test split: dehazing compares `F(I)` against
/// `J`, synthesis compares `F(J)` against `I`. Rows follow manifest order.
pub fn evaluate<T: Translator + ?Sized>(
    translator: &T,
    dataset: &Dataset,
    direction: Direction,
    checkpoint: &str,
    triptych_dir: Option<&Path>,
) -> Result<MetricReport, MetricError> {
    let pairs = dataset.load_split(Split::Test)?;
    if let Some(dir) = triptych_dir {
        std::fs::create_dir_all(dir).map_err(|source| MetricError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let rows = exec::map_range(exec::mode(), usize::MAX, pairs.len(), |i| {
        let p = &pairs[i];
        let (input, reference) = match direction {
            Direction::HazyToClear => (&p.hazy, &p.clear),
            Direction::ClearToHazy => (&p.clear, &p.hazy),
        };
        let output = translator.translate(input, direction)?;
        if let Some(dir) = triptych_dir {
            triptych(input, &output, reference)?.save_png(&dir.join(format!("{}.png", p.id)))?;
        }
        Ok(ImageScore {
            file: format!("{}.png", p.id),
            psnr: psnr(&output, reference, 1.0)?,
            ssim: ssim(&output, reference)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, MetricError>>()?;
    Ok(MetricReport::from_rows(direction, checkpoint.to_string(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, size: usize) -> Image {
        let data = (0..size * size * 3).map(|_| rng.random::<f64>()).collect();
        Image::new(size, size, data).unwrap()
    }

    #[test]
    fn psnr_reference_values() {
        let a = Image::filled(16, 16, [0.3, 0.4, 0.5]);
        let b = Image::filled(16, 16, [0.4, 0.5, 0.6]);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
        assert!(psnr(&a, &b, 0.0).is_err());
        assert!(psnr(&a, &Image::filled(8, 8, [0.0; 3]), 1.0).is_err());
    }

    #[test]
    fn ssim_reference_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let zero = Image::filled(16, 16, [0.0; 3]);
        let one = Image::filled(16, 16, [1.0; 3]);
        let expected = C1 / (1.0 + C1);
        assert!((ssim(&zero, &one).unwrap() - expected).abs() < 1e-15);
        assert!(matches!(
            ssim(&Image::filled(7, 7, [0.0; 3]), &Image::filled(7, 7, [0.0; 3])),
            Err(MetricError::TooSmall(_))
        ));
    }

    #[test]
    fn psnr_falls_with_noise_amplitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base = Image::filled(32, 32, [0.5; 3]);
        let noise: Vec<f64> = (0..base.data.len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let scores: Vec<f64> = [0.01, 0.05, 0.2]
            .iter()
            .map(|amp| {
                let data = base.data.iter().zip(&noise).map(|(v, n)| v + amp * n).collect();
                psnr(&base, &Image::new(32, 32, data).unwrap(), 1.0).unwrap()
            })
            .collect();
        assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn metrics_are_symmetric_and_bounded(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_image(&mut rng, 12);
            let b = random_image(&mut rng, 12);
            let s = ssim(&a, &b).unwrap();
            prop_assert_eq!(s, ssim(&b, &a).unwrap());
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
            prop_assert!(psnr(&a, &b, 1.0).unwrap() >= 0.0);
        }
    }

    #[test]
    fn identity_reproduces_baseline_and_means_aggregate() {
        let dir = tempfile::tempdir().unwrap();
        crate::scene::build_dataset(8, 4, 16, dir.path()).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        let report = evaluate(&Identity, &ds, Direction::HazyToClear, "identity", Some(&dir.path().join("t"))).unwrap();
        let pairs = ds.load_split(Split::Test).unwrap();
        assert_eq!(report.rows.len(), pairs.len());
        for (row, p) in report.rows.iter().zip(&pairs) {
            assert_eq!(row.file, format!("{}.png", p.id));
            assert_eq!(row.ssim, ssim(&p.hazy, &p.clear).unwrap());
            assert_eq!(row.psnr, psnr(&p.hazy, &p.clear, 1.0).unwrap());
        }
        let mean = report.rows.iter().map(|r| r.ssim).sum::<f64>() / report.rows.len() as f64;
        assert!((report.mean_ssim - mean).abs() < 1e-12);
        let t = Image::load_png(&dir.path().join("t").join(format!("{}.png", pairs[0].id))).unwrap();
        assert_eq!(t.dims(), (48, 16));
        assert!(report.to_csv().starts_with("file,psnr,ssim\n"));
    }

    #[test]
    fn evaluate_is_deterministic_for_a_model() {
        let dir = tempfile::tempdir().unwrap();
        crate::scene::build_dataset(8, 5, 16, dir.path()).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        let mut cfg = crate::nets::ModelConfig::new(16, 4);
        cfg.encoder_hidden = vec![8];
        cfg.generator_hidden = vec![8];
        cfg.discriminator_hidden = vec![4];
        let model = HazeModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let a = evaluate(&model, &ds, Direction::ClearToHazy, "m", None).unwrap();
        let b = evaluate(&model, &ds, Direction::ClearToHazy, "m", None).unwrap();
        assert_eq!(a, b);
    }
}
