//! Quantitative evaluation at desk scale: empirical Wasserstein-1 (exact in
//! one dimension, sliced above), PSNR, SSIM, critic score statistics and mode
//! coverage.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// PSNR is capped here: identical images would otherwise be infinite.
pub const PSNR_CAP_DB: f64 = 99.0;

/// SSIM stabilizers, for data with dynamic range 2 (values in [-1, 1]).
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_RANGE: f64 = 2.0;

/// One computed metric, as written to the experiment report.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub seed: u64,
}

/// Exact 1-d Wasserstein-1 via sorted matching: `mean |sort(a) - sort(b)|`.
/// Unequal sample counts are reduced to the smaller count by evenly spaced
/// quantile indices of the sorted samples.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::config(
            "wasserstein1_1d needs non-empty samples".to_string(),
        ));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = sa.len().min(sb.len());
    let pick = |sorted: &[f64], i: usize| -> f64 {
        // Midpoint quantile of the i-th of n equal probability bins.
        let q = (i as f64 + 0.5) / n as f64;
        sorted[((q * sorted.len() as f64) as usize).min(sorted.len() - 1)]
    };
    let total: f64 = (0..n)
        .map(|i| {
            let x = if sa.len() == n { sa[i] } else { pick(&sa, i) };
            let y = if sb.len() == n { sb[i] } else { pick(&sb, i) };
            (x - y).abs()
        })
        .sum();
    Ok(total / n as f64)
}

/// Sliced Wasserstein distance: the average of exact 1-d distances over
/// `n_proj` random unit-vector projections. Deterministic given `seed`.
pub fn sliced_wasserstein(a: &Tensor, b: &Tensor, n_proj: usize, seed: u64) -> Result<f64> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(Error::ShapeMismatch {
            op: "sliced_wasserstein",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    if n_proj == 0 {
        return Err(Error::config(
            "sliced_wasserstein needs at least one projection".to_string(),
        ));
    }
    let dim = a.shape()[1];
    let (na, nb) = (a.shape()[0], b.shape()[0]);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut pa = vec![0.0; na];
    let mut pb = vec![0.0; nb];
    for _ in 0..n_proj {
        let mut direction: Vec<f64> = (0..dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm: f64 = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            direction = vec![1.0; dim];
        } else {
            direction.iter_mut().for_each(|v| *v /= norm);
        }
        let project = |t: &Tensor, out: &mut [f64]| {
            let data = t.data();
            for (i, slot) in out.iter_mut().enumerate() {
                *slot = (0..dim).map(|d| data[i * dim + d] * direction[d]).sum();
            }
        };
        project(a, &mut pa);
        project(b, &mut pb);
        total += wasserstein1_1d(&pa, &pb)?;
    }
    Ok(total / n_proj as f64)
}

/// Peak signal-to-noise ratio in decibels, capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &Tensor, test: &Tensor, max_val: f64) -> Result<f64> {
    if reference.shape() != test.shape() {
        return Err(Error::ShapeMismatch {
            op: "psnr",
            lhs: reference.shape().to_vec(),
            rhs: test.shape().to_vec(),
        });
    }
    let n = reference.numel() as f64;
    let mse: f64 = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP_DB))
}

/// Single-scale SSIM with a full-image window (the images here are smaller
/// than the conventional 11x11 window). Symmetric; 1 exactly for identical
/// images.
pub fn ssim(reference: &Tensor, test: &Tensor) -> Result<f64> {
    if reference.shape() != test.shape() {
        return Err(Error::ShapeMismatch {
            op: "ssim",
            lhs: reference.shape().to_vec(),
            rhs: test.shape().to_vec(),
        });
    }
    let n = reference.numel() as f64;
    if n < 2.0 {
        return Err(Error::config("ssim needs at least two pixels".to_string()));
    }
    let mean = |t: &Tensor| t.data().iter().sum::<f64>() / n;
    let mu_x = mean(reference);
    let mu_y = mean(test);
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    let mut cov = 0.0;
    for (&x, &y) in reference.data().iter().zip(test.data()) {
        var_x += (x - mu_x) * (x - mu_x);
        var_y += (y - mu_y) * (y - mu_y);
        cov += (x - mu_x) * (y - mu_y);
    }
    var_x /= n - 1.0;
    var_y /= n - 1.0;
    cov /= n - 1.0;
    let c1 = (SSIM_K1 * SSIM_RANGE) * (SSIM_K1 * SSIM_RANGE);
    let c2 = (SSIM_K2 * SSIM_RANGE) * (SSIM_K2 * SSIM_RANGE);
    Ok(((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
        / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)))
}

/// Mean and population standard deviation of critic scores over `samples`.
pub fn score_stats(disc: &Mlp, samples: &Tensor) -> Result<(f64, f64)> {
    let scores = disc.score(samples)?;
    let data = scores.data();
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Fraction of `centers` with at least one sample within `radius`.
pub fn mode_coverage(samples: &Tensor, centers: &Tensor, radius: f64) -> Result<f64> {
    if samples.shape().len() != 2
        || centers.shape().len() != 2
        || samples.shape()[1] != centers.shape()[1]
    {
        return Err(Error::ShapeMismatch {
            op: "mode_coverage",
            lhs: samples.shape().to_vec(),
            rhs: centers.shape().to_vec(),
        });
    }
    let dim = samples.shape()[1];
    let n_modes = centers.shape()[0];
    let mut covered = 0usize;
    for m in 0..n_modes {
        let center = &centers.data()[m * dim..(m + 1) * dim];
        let hit = (0..samples.shape()[0]).any(|i| {
            let row = &samples.data()[i * dim..(i + 1) * dim];
            let d2: f64 = row
                .iter()
                .zip(center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2.sqrt() <= radius
        });
        if hit {
            covered += 1;
        }
    }
    Ok(covered as f64 / n_modes as f64)
}

/// The eight ring mode centers on the unit circle.
pub fn ring8_centers() -> Tensor {
    let mut data = Vec::with_capacity(16);
    for k in 0..8 {
        let angle = std::f64::consts::TAU * k as f64 / 8.0;
        data.push(angle.cos());
        data.push(angle.sin());
    }
    Tensor::new(&[8, 2], data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{HiddenActivation, MlpSpec, ModelParams, OutputActivation};
    use rand::{Rng, SeedableRng};

    #[test]
    fn wasserstein_identical_and_shifted() {
        assert_eq!(wasserstein1_1d(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(wasserstein1_1d(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn wasserstein_of_shifted_normals_is_the_shift() {
        let n = 10_000;
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let a: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                3.0 + z
            })
            .collect();
        let w = wasserstein1_1d(&a, &b).unwrap();
        assert!((w - 3.0).abs() < 0.1, "w = {w}");
    }

    #[test]
    fn wasserstein_is_symmetric_and_triangular() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..20 {
            let sample =
                |rng: &mut ChaCha12Rng| (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a: Vec<f64> = sample(&mut rng);
            let b: Vec<f64> = sample(&mut rng);
            let c: Vec<f64> = sample(&mut rng);
            let ab = wasserstein1_1d(&a, &b).unwrap();
            let ba = wasserstein1_1d(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            let ac = wasserstein1_1d(&a, &c).unwrap();
            let cb = wasserstein1_1d(&c, &b).unwrap();
            assert!(ab <= ac + cb + 1e-12);
        }
    }

    #[test]
    fn sliced_wasserstein_zero_for_identical_sets() {
        let a = Tensor::new(&[4, 2], vec![0.0, 1.0, 2.0, 3.0, -1.0, 0.5, 0.3, 0.3]).unwrap();
        assert_eq!(sliced_wasserstein(&a, &a, 64, 0).unwrap(), 0.0);
    }

    #[test]
    fn sliced_wasserstein_of_constant_shift_matches_expected_projection() {
        // For b = a + c in 2-d, E|<u, c>| over uniform unit u is (2/pi)|c|.
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 64;
        let a = Tensor::new(
            &[n, 2],
            (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let c = [0.8, -0.6];
        let mut b = a.clone();
        for i in 0..n {
            b.data_mut()[2 * i] += c[0];
            b.data_mut()[2 * i + 1] += c[1];
        }
        let sw = sliced_wasserstein(&a, &b, 256, 11).unwrap();
        let c_norm = (c[0] * c[0] + c[1] * c[1]).sqrt();
        let expected = 2.0 / std::f64::consts::PI * c_norm;
        assert!(
            (sw - expected).abs() / expected < 0.05,
            "sw {sw} vs {expected}"
        );
    }

    #[test]
    fn sliced_wasserstein_is_seed_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mk = |rng: &mut ChaCha12Rng| {
            Tensor::new(
                &[32, 3],
                (0..96).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let x = sliced_wasserstein(&a, &b, 128, 77).unwrap();
        let y = sliced_wasserstein(&a, &b, 128, 77).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn sliced_wasserstein_decreases_along_interpolation() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let n = 48;
        let mk = |rng: &mut ChaCha12Rng| -> Vec<f64> {
            (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect()
        };
        let a_data = mk(&mut rng);
        let b_data = mk(&mut rng);
        let a = Tensor::new(&[n, 2], a_data.clone()).unwrap();
        let mut previous = f64::INFINITY;
        for t in [0.0, 0.5, 1.0] {
            let blend: Vec<f64> = a_data
                .iter()
                .zip(&b_data)
                .map(|(&x, &y)| (1.0 - t) * y + t * x)
                .collect();
            let b = Tensor::new(&[n, 2], blend).unwrap();
            let sw = sliced_wasserstein(&a, &b, 128, 3).unwrap();
            assert!(sw <= previous + 1e-9, "sw {sw} after {previous}");
            previous = sw;
        }
    }

    #[test]
    fn psnr_analytic_points() {
        // MSE 0.01 at range 1: 20 dB.
        let a = Tensor::vector(&[0.0; 100]);
        let b = Tensor::vector(&[0.1; 100]);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-12);
        // Identical: capped.
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        // MSE 1 at range 1: 0 dB.
        let c = Tensor::vector(&[1.0; 100]);
        assert!((psnr(&a, &c, 1.0).unwrap() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_monotone_in_mse() {
        let base = Tensor::vector(&[0.0; 64]);
        let mut last = f64::INFINITY;
        for k in 1..=8 {
            let t = Tensor::vector(&[0.05 * k as f64; 64]);
            let p = psnr(&base, &t, 2.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_symmetry_and_negation() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let img = Tensor::vector(
            &(0..64)
                .map(|_| rng.random_range(-0.9..0.9))
                .collect::<Vec<_>>(),
        );
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);

        let other = Tensor::vector(
            &(0..64)
                .map(|_| rng.random_range(-0.9..0.9))
                .collect::<Vec<_>>(),
        );
        let ab = ssim(&img, &other).unwrap();
        let ba = ssim(&other, &img).unwrap();
        assert!((ab - ba).abs() < 1e-12);

        // A zero-mean image against its negation has negative structure.
        let mean = img.data().iter().sum::<f64>() / 64.0;
        let centered = img.map(|v| v - mean);
        let negated = centered.map(|v| -v);
        assert!(ssim(&centered, &negated).unwrap() < 0.0);
    }

    #[test]
    fn ssim_nearly_invariant_to_common_offsets() {
        // Similar image pairs (same underlying signal plus noise): adding the
        // same constant to both moves SSIM by less than 1e-3. Means sit away
        // from zero, as they do for real image data; the luminance ratio is
        // ill-conditioned when both means vanish.
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let base: Vec<f64> = (0..64).map(|_| rng.random_range(0.1..0.7)).collect();
        let noisy: Vec<f64> = base
            .iter()
            .map(|v| v + rng.random_range(-0.05..0.05))
            .collect();
        let a = Tensor::vector(&base);
        let b = Tensor::vector(&noisy);
        let s0 = ssim(&a, &b).unwrap();
        for offset in [0.05, 0.1] {
            let s1 = ssim(&a.map(|v| v + offset), &b.map(|v| v + offset)).unwrap();
            assert!((s1 - s0).abs() < 1e-3, "offset {offset}: {s0} -> {s1}");
        }
    }

    #[test]
    fn score_stats_matches_naive_loop() {
        let spec = MlpSpec::new(
            vec![2, 4, 1],
            HiddenActivation::LeakyRelu(0.2),
            OutputActivation::Identity,
        );
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let disc = Mlp::init(spec, &mut rng).unwrap();
        let xs = Tensor::new(
            &[1000, 2],
            (0..2000).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let (mean, std) = score_stats(&disc, &xs).unwrap();

        let mut values = Vec::new();
        for i in 0..1000 {
            let x = xs.gather_rows(&[i]).unwrap();
            values.push(disc.forward_t(&x).unwrap().data()[0]);
        }
        let naive_mean = values.iter().sum::<f64>() / 1000.0;
        let naive_std = (values
            .iter()
            .map(|v| (v - naive_mean) * (v - naive_mean))
            .sum::<f64>()
            / 1000.0)
            .sqrt();
        assert!((mean - naive_mean).abs() < 1e-12);
        assert!((std - naive_std).abs() < 1e-12);
    }

    #[test]
    fn constant_critic_has_zero_spread() {
        let spec = MlpSpec::new(
            vec![2, 1],
            HiddenActivation::LeakyRelu(0.2),
            OutputActivation::Identity,
        );
        let params = ModelParams::new(vec![
            ("w0".into(), Tensor::zeros(&[2, 1])),
            ("b0".into(), Tensor::vector(&[3.5])),
        ])
        .unwrap();
        let disc = Mlp { spec, params };
        let xs = Tensor::new(&[10, 2], vec![0.7; 20]).unwrap();
        let (mean, std) = score_stats(&disc, &xs).unwrap();
        assert_eq!((mean, std), (3.5, 0.0));
    }

    #[test]
    fn linear_critic_over_symmetric_samples_has_zero_mean() {
        let spec = MlpSpec::new(
            vec![1, 1],
            HiddenActivation::LeakyRelu(0.2),
            OutputActivation::Identity,
        );
        let params = ModelParams::new(vec![
            ("w0".into(), Tensor::new(&[1, 1], vec![2.0]).unwrap()),
            ("b0".into(), Tensor::zeros(&[1])),
        ])
        .unwrap();
        let disc = Mlp { spec, params };
        let xs = Tensor::new(&[4, 1], vec![-1.5, -0.5, 0.5, 1.5]).unwrap();
        let (mean, _) = score_stats(&disc, &xs).unwrap();
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn mode_coverage_counts_hit_modes() {
        let centers = ring8_centers();
        // Samples at two of the eight centers.
        let samples = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let cov = mode_coverage(&samples, &centers, 0.15).unwrap();
        assert!((cov - 0.25).abs() < 1e-12);
    }
}
