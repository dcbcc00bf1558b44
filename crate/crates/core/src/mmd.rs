//! Gaussian-kernel maximum mean discrepancy.
//!
//! [`mmd2_empirical`] evaluates
//!
//! ```text
//! 1/(m(m−1)) Σ_{i≠j} k(xᵢ,xⱼ) + 1/(n(n−1)) Σ_{i≠j} k(yᵢ,yⱼ) − 2/(mn) Σ_{i,j} k(xᵢ,yⱼ)
//! ```
//!
//! i.e. unbiased within-sample terms and a cross term that keeps every pair.
//! [`mmd2_biased`] is the plain V-statistic `‖μ_X − μ_Y‖²` and is never
//! negative. [`mmd2_graph`] builds the empirical form inside an autodiff
//! graph so it can be used as a training loss.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Tensor, TensorError, Var};
use crate::exec;

#[derive(Debug, Error, PartialEq)]
pub enum MmdError {
    #[error("kernel bandwidths must be positive and finite, got {0:?}")]
    BadBandwidth(Vec<f64>),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample set has non-finite entries")]
    NonFinite,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Gaussian kernel bandwidths; a mixture averages the per-bandwidth kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    bandwidths: Vec<f64>,
}

impl KernelSpec {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self, MmdError> {
        if bandwidths.is_empty() || bandwidths.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(MmdError::BadBandwidth(bandwidths));
        }
        Ok(Self { bandwidths })
    }

    pub fn single(sigma: f64) -> Result<Self, MmdError> {
        Self::new(vec![sigma])
    }

    /// Mixture of bandwidths `{0.5, 1, 2}·√L` for latent dimension `L`.
    pub fn training_default(latent_dim: usize) -> Self {
        let r = (latent_dim as f64).sqrt();
        Self {
            bandwidths: vec![0.5 * r, r, 2.0 * r],
        }
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    /// Kernel value for a squared distance.
    pub fn eval_sq(&self, d2: f64) -> f64 {
        let sum: f64 = self
            .bandwidths
            .iter()
            .map(|s| (-d2 / (2.0 * s * s)).exp())
            .sum();
        sum / self.bandwidths.len() as f64
    }
}

/// `m` points of dimension `dim`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    dim: usize,
    data: Vec<f64>,
}

impl SampleSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, MmdError> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(MmdError::Dimension(dim, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(MmdError::NonFinite);
        }
        Ok(Self { dim, data })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self, MmdError> {
        let dim = points.first().map_or(0, Vec::len);
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(MmdError::Dimension(dim, p.len()));
        }
        Self::new(dim, points.concat())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.len(), self.dim, self.data.clone()).expect("non-empty set")
    }

    /// `m` independent standard-normal points.
    pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, m: usize, dim: usize) -> Self {
        let data = (0..m * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self { dim, data }
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn gaussian_kernel(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64, MmdError> {
    if x.len() != y.len() {
        return Err(MmdError::Dimension(x.len(), y.len()));
    }
    Ok(spec.eval_sq(sq_dist(x, y)))
}

/// Sum of kernel values over all `(i, j)` pairs, optionally skipping `i == j`.
/// Rows are summed independently (possibly in parallel) then combined in order.
fn kernel_sum(a: &SampleSet, b: &SampleSet, spec: &KernelSpec, skip_diagonal: bool) -> f64 {
    let (m, n) = (a.len(), b.len());
    let rows = exec::map_range(exec::mode(), m * n * a.dim() * spec.bandwidths.len(), m, |i| {
        let xi = a.point(i);
        (0..n)
            .filter(|&j| !(skip_diagonal && i == j))
            .map(|j| spec.eval_sq(sq_dist(xi, b.point(j))))
            .sum::<f64>()
    });
    rows.iter().sum()
}

fn check_pair(x: &SampleSet, y: &SampleSet, min: usize) -> Result<(), MmdError> {
    if x.dim() != y.dim() {
        return Err(MmdError::Dimension(x.dim(), y.dim()));
    }
    for s in [x, y] {
        if s.len() < min {
            return Err(MmdError::TooFewSamples {
                needed: min,
                got: s.len(),
            });
        }
    }
    Ok(())
}

pub fn mmd2_empirical(x: &SampleSet, y: &SampleSet, spec: &KernelSpec) -> Result<f64, MmdError> {
    check_pair(x, y, 2)?;
    let (m, n) = (x.len() as f64, y.len() as f64);
    let kxx = kernel_sum(x, x, spec, true) / (m * (m - 1.0));
    let kyy = kernel_sum(y, y, spec, true) / (n * (n - 1.0));
    let kxy = kernel_sum(x, y, spec, false) * 2.0 / (m * n);
    Ok(kxx + kyy - kxy)
}

pub fn mmd2_biased(x: &SampleSet, y: &SampleSet, spec: &KernelSpec) -> Result<f64, MmdError> {
    check_pair(x, y, 1)?;
    let (m, n) = (x.len() as f64, y.len() as f64);
    let kxx = kernel_sum(x, x, spec, false) / (m * m);
    let kyy = kernel_sum(y, y, spec, false) / (n * n);
    let kxy = kernel_sum(x, y, spec, false) * 2.0 / (m * n);
    // The exact value is a squared norm; rounding can leave a tiny negative.
    Ok((kxx + kyy - kxy).max(0.0))
}

/// Bandwidth from the median pairwise squared distance: `σ² = median / 2`.
/// Falls back to `σ = 1` when every point coincides.
pub fn median_heuristic(points: &SampleSet) -> KernelSpec {
    let m = points.len();
    let mut d2: Vec<f64> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .map(|(i, j)| sq_dist(points.point(i), points.point(j)))
        .collect();
    d2.sort_by(f64::total_cmp);
    let median = match d2.len() {
        0 => 0.0,
        n if n % 2 == 1 => d2[n / 2],
        n => 0.5 * (d2[n / 2 - 1] + d2[n / 2]),
    };
    if median > 0.0 {
        KernelSpec {
            bandwidths: vec![(median / 2.0).sqrt()],
        }
    } else {
        KernelSpec { bandwidths: vec![1.0] }
    }
}

/// Empirical MMD² between `latents` and an equally sized standard-normal draw.
pub fn mmd_to_prior<R: Rng + ?Sized>(latents: &SampleSet, rng: &mut R, spec: &KernelSpec) -> Result<f64, MmdError> {
    if latents.len() < 2 {
        return Err(MmdError::TooFewSamples {
            needed: 2,
            got: latents.len(),
        });
    }
    let prior = SampleSet::standard_normal(rng, latents.len(), latents.dim());
    mmd2_empirical(latents, &prior, spec)
}

fn kernel_graph(g: &mut Graph, d2: Var, spec: &KernelSpec) -> Result<Var, TensorError> {
    let mut acc: Option<Var> = None;
    for s in &spec.bandwidths {
        let scaled = g.scale(d2, -1.0 / (2.0 * s * s))?;
        let k = g.exp(scaled)?;
        acc = Some(match acc {
            None => k,
            Some(a) => g.add(a, k)?,
        });
    }
    let sum = acc.expect("at least one bandwidth");
    g.scale(sum, 1.0 / spec.bandwidths.len() as f64)
}

fn off_diagonal_sum(g: &mut Graph, k: Var, m: usize) -> Result<Var, TensorError> {
    let mut mask = Tensor::ones(&[m, m]);
    for i in 0..m {
        mask.data_mut()[i * m + i] = 0.0;
    }
    let mask = g.constant(mask);
    let masked = g.mul(k, mask)?;
    g.sum(masked)
}

/// [`mmd2_empirical`] as a differentiable graph node over `x: m×L`, `y: n×L`.
pub fn mmd2_graph(g: &mut Graph, x: Var, y: Var, spec: &KernelSpec) -> Result<Var, MmdError> {
    let (m, lx) = g.value(x).dims2().ok_or(MmdError::Dimension(0, 0))?;
    let (n, ly) = g.value(y).dims2().ok_or(MmdError::Dimension(0, 0))?;
    if lx != ly {
        return Err(MmdError::Dimension(lx, ly));
    }
    for got in [m, n] {
        if got < 2 {
            return Err(MmdError::TooFewSamples { needed: 2, got });
        }
    }
    let dxx = g.pairwise_sq_dist(x, x)?;
    let kxx = kernel_graph(g, dxx, spec)?;
    let sxx = off_diagonal_sum(g, kxx, m)?;
    let txx = g.scale(sxx, 1.0 / (m as f64 * (m as f64 - 1.0)))?;

    let dyy = g.pairwise_sq_dist(y, y)?;
    let kyy = kernel_graph(g, dyy, spec)?;
    let syy = off_diagonal_sum(g, kyy, n)?;
    let tyy = g.scale(syy, 1.0 / (n as f64 * (n as f64 - 1.0)))?;

    let dxy = g.pairwise_sq_dist(x, y)?;
    let kxy = kernel_graph(g, dxy, spec)?;
    let sxy = g.sum(kxy)?;
    let txy = g.scale(sxy, 2.0 / (m as f64 * n as f64))?;

    let within = g.add(txx, tyy)?;
    Ok(g.sub(within, txy)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn set(points: &[&[f64]]) -> SampleSet {
        SampleSet::from_points(&points.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Direct transcription of the three-term sum with explicit double loops.
    fn brute_force(x: &SampleSet, y: &SampleSet, sigma: &[f64]) -> f64 {
        let k = |a: &[f64], b: &[f64]| {
            let mut d = 0.0;
            for t in 0..a.len() {
                d += (a[t] - b[t]).powi(2);
            }
            sigma.iter().map(|s| (-d / (2.0 * s * s)).exp()).sum::<f64>() / sigma.len() as f64
        };
        let (m, n) = (x.len(), y.len());
        let mut sxx = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    sxx += k(x.point(i), x.point(j));
                }
            }
        }
        let mut syy = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    syy += k(y.point(i), y.point(j));
                }
            }
        }
        let mut sxy = 0.0;
        for i in 0..m {
            for j in 0..n {
                sxy += k(x.point(i), y.point(j));
            }
        }
        let (m, n) = (m as f64, n as f64);
        sxx / (m * (m - 1.0)) + syy / (n * (n - 1.0)) - 2.0 * sxy / (m * n)
    }

    #[test]
    fn kernel_values() {
        let spec = KernelSpec::single(HALF).unwrap();
        assert_eq!(gaussian_kernel(&[0.3, -1.0], &[0.3, -1.0], &spec).unwrap(), 1.0);
        let v = gaussian_kernel(&[0.0], &[1.0], &spec).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
        assert!(gaussian_kernel(&[0.0], &[1.0, 2.0], &spec).is_err());
        assert!(KernelSpec::new(vec![1.0, 0.0]).is_err());
        assert!(KernelSpec::new(vec![]).is_err());
    }

    #[test]
    fn empirical_hand_cases() {
        let spec = KernelSpec::single(HALF).unwrap();
        let c = set(&[&[0.4, 0.4], &[0.4, 0.4]]);
        assert_eq!(mmd2_empirical(&c, &c, &spec).unwrap(), 0.0);
        let x = set(&[&[0.0], &[1.0]]);
        let v = mmd2_empirical(&x, &x, &spec).unwrap();
        assert!((v - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert!((v + 0.632121).abs() < 1e-6);
    }

    #[test]
    fn empirical_rejects_single_points() {
        let spec = KernelSpec::single(1.0).unwrap();
        let one = set(&[&[0.0]]);
        let two = set(&[&[0.0], &[1.0]]);
        assert_eq!(
            mmd2_empirical(&one, &two, &spec).unwrap_err(),
            MmdError::TooFewSamples { needed: 2, got: 1 }
        );
        assert!(mmd2_empirical(&two, &set(&[&[0.0, 1.0], &[1.0, 0.0]]), &spec).is_err());
    }

    #[test]
    fn biased_hand_cases() {
        let spec = KernelSpec::single(HALF).unwrap();
        let v = mmd2_biased(&set(&[&[0.0]]), &set(&[&[1.0]]), &spec).unwrap();
        assert!((v - (2.0 - 2.0 * (-1.0f64).exp())).abs() < 1e-15);
        assert!((v - 1.264241).abs() < 1e-6);
        let x = set(&[&[0.1, 2.0], &[-1.0, 0.5], &[0.1, 2.0]]);
        let y = set(&[&[-1.0, 0.5], &[0.1, 2.0], &[0.1, 2.0]]);
        assert!(mmd2_biased(&x, &y, &spec).unwrap().abs() < 1e-15);
    }

    #[test]
    fn median_heuristic_cases() {
        let spec = median_heuristic(&set(&[&[0.0], &[1.0]]));
        assert!((spec.bandwidths()[0] - HALF).abs() < 1e-15);
        assert_eq!(median_heuristic(&set(&[&[2.0], &[2.0], &[2.0]])).bandwidths(), &[1.0]);
        let pts = set(&[&[0.0, 1.0], &[1.0, 3.0], &[-2.0, 0.5], &[4.0, 4.0]]);
        let scaled = SampleSet::new(2, pts.data().iter().map(|v| v * 3.0).collect()).unwrap();
        let (a, b) = (median_heuristic(&pts).bandwidths()[0], median_heuristic(&scaled).bandwidths()[0]);
        assert!((b - 3.0 * a).abs() < 1e-12);
    }

    #[test]
    fn prior_discrepancy_null_and_shifted() {
        let spec = KernelSpec::training_default(4);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let reps = 100;
        let mut null = 0.0;
        let mut shifted = 0.0;
        for _ in 0..reps {
            let z = SampleSet::standard_normal(&mut rng, 256, 4);
            null += mmd_to_prior(&z, &mut rng, &spec).unwrap();
            let moved = SampleSet::new(4, z.data().iter().map(|v| v + 5.0).collect()).unwrap();
            shifted += mmd_to_prior(&moved, &mut rng, &spec).unwrap();
        }
        let (null, shifted) = (null / reps as f64, shifted / reps as f64);
        assert!(null.abs() < 0.05, "null {null}");
        assert!(shifted > null);
    }

    #[test]
    fn prior_discrepancy_is_deterministic() {
        let spec = KernelSpec::single(1.0).unwrap();
        let z = set(&[&[0.0, 1.0], &[1.0, 0.0], &[0.5, 0.5]]);
        let run = || mmd_to_prior(&z, &mut ChaCha8Rng::seed_from_u64(3), &spec).unwrap();
        assert_eq!(run(), run());
        assert!(mmd_to_prior(&set(&[&[0.0]]), &mut ChaCha8Rng::seed_from_u64(3), &spec).is_err());
    }

    #[test]
    fn graph_form_matches_value_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = KernelSpec::training_default(3);
        let x = SampleSet::standard_normal(&mut rng, 5, 3);
        let y = SampleSet::standard_normal(&mut rng, 7, 3);
        let mut g = Graph::new();
        let xv = g.param(x.to_tensor());
        let yv = g.constant(y.to_tensor());
        let out = mmd2_graph(&mut g, xv, yv, &spec).unwrap();
        let want = mmd2_empirical(&x, &y, &spec).unwrap();
        assert!((g.value(out).item() - want).abs() < 1e-12);
    }

    fn sets(max: usize) -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
        (1usize..4, 2usize..=max, 2usize..=max).prop_flat_map(|(d, m, n)| {
            (
                Just(d),
                prop::collection::vec(-2.0f64..2.0, m * d),
                prop::collection::vec(-2.0f64..2.0, n * d),
            )
        })
    }

    proptest! {
        #[test]
        fn empirical_matches_brute_force((d, xs, ys) in sets(8), sigma in 0.2f64..3.0) {
            let x = SampleSet::new(d, xs).unwrap();
            let y = SampleSet::new(d, ys).unwrap();
            let spec = KernelSpec::single(sigma).unwrap();
            let v = mmd2_empirical(&x, &y, &spec).unwrap();
            prop_assert!((v - brute_force(&x, &y, &[sigma])).abs() <= 1e-12);
        }

        #[test]
        fn estimators_are_symmetric_and_exchangeable((d, xs, ys) in sets(6), rot in 0usize..6) {
            let x = SampleSet::new(d, xs).unwrap();
            let y = SampleSet::new(d, ys).unwrap();
            let spec = KernelSpec::new(vec![0.5, 1.5]).unwrap();
            let e = mmd2_empirical(&x, &y, &spec).unwrap();
            let b = mmd2_biased(&x, &y, &spec).unwrap();
            prop_assert!((e - mmd2_empirical(&y, &x, &spec).unwrap()).abs() <= 1e-12);
            prop_assert!((b - mmd2_biased(&y, &x, &spec).unwrap()).abs() <= 1e-12);
            prop_assert!(b >= 0.0);
            let mut pts: Vec<Vec<f64>> = (0..x.len()).map(|i| x.point(i).to_vec()).collect();
            let r = rot % pts.len();
            pts.rotate_left(r);
            let xp = SampleSet::from_points(&pts).unwrap();
            prop_assert!((e - mmd2_empirical(&xp, &y, &spec).unwrap()).abs() <= 1e-12);
            prop_assert!((b - mmd2_biased(&xp, &y, &spec).unwrap()).abs() <= 1e-12);
        }
    }
}
