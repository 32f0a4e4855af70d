//! Image quality metrics on the 8-bit scale. Inputs are (C, H, W) arrays in
//! [0, 1]; every metric scales by 255 internally so reported numbers match
//! the conventions of interpolation benchmarks.

use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{Error, Result};

/// Peak signal level of the 8-bit convention all metrics use.
pub const PEAK: f64 = 255.0;

/// PSNR cap reported for identical frames (MSE of zero).
pub const PSNR_CAP: f64 = 100.0;

fn check_pair(pred: &Array3<f64>, target: &Array3<f64>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::invalid(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("metric inputs are empty"));
    }
    Ok(())
}

fn mse_8bit(pred: &Array3<f64>, target: &Array3<f64>) -> f64 {
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(target.iter()) {
        let d = PEAK * (p - t);
        acc += d * d;
    }
    acc / pred.len() as f64
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP`].
pub fn psnr(pred: &Array3<f64>, target: &Array3<f64>) -> Result<f64> {
    check_pair(pred, target)?;
    let mse = mse_8bit(pred, target);
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP))
}

/// Root-mean-square difference in 8-bit intensity levels.
pub fn interpolation_error(pred: &Array3<f64>, target: &Array3<f64>) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(mse_8bit(pred, target).sqrt())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * PEAK) * (0.01 * PEAK);
const SSIM_C2: f64 = (0.03 * PEAK) * (0.03 * PEAK);

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-mode Gaussian filter; output is (H-10, W-10).
fn gauss_filter(img: &ArrayView2<f64>, k: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = img.dim();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * img[[y, x + i]];
            }
            rows[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * rows[[y + i, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5), valid
/// windows only, averaged over windows and channels. Frames must be at least
/// 11x11.
pub fn ssim(pred: &Array3<f64>, target: &Array3<f64>) -> Result<f64> {
    check_pair(pred, target)?;
    let (c, h, w) = pred.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} frames, got {h}x{w}"
        )));
    }
    let k = gaussian_kernel();
    let mut total = 0.0;
    for ch in 0..c {
        let a = pred.index_axis(ndarray::Axis(0), ch).mapv(|v| v * PEAK);
        let b = target.index_axis(ndarray::Axis(0), ch).mapv(|v| v * PEAK);
        let mu_a = gauss_filter(&a.view(), &k);
        let mu_b = gauss_filter(&b.view(), &k);
        let aa = gauss_filter(&(&a * &a).view(), &k);
        let bb = gauss_filter(&(&b * &b).view(), &k);
        let ab = gauss_filter(&(&a * &b).view(), &k);

        let mut acc = 0.0;
        for ((((&ma, &mb), &saa), &sbb), &sab) in mu_a
            .iter()
            .zip(mu_b.iter())
            .zip(aa.iter())
            .zip(bb.iter())
            .zip(ab.iter())
        {
            let var_a = saa - ma * ma;
            let var_b = sbb - mb * mb;
            let cov = sab - ma * mb;
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
            acc += num / den;
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant(v: f64) -> Array3<f64> {
        Array3::from_elem((1, 16, 16), v)
    }

    #[test]
    fn identical_frames_hit_the_caps() {
        let a = constant(0.42);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        assert_eq!(interpolation_error(&a, &a).unwrap(), 0.0);
        assert!(ssim(&a, &a).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn psnr_of_ten_level_offset_matches_closed_form() {
        let target = constant(0.0);
        let pred = constant(10.0 / 255.0);
        // MSE = 100 on the 8-bit scale.
        let expect = 10.0 * (255.0f64 * 255.0 / 100.0).log10();
        assert_abs_diff_eq!(psnr(&pred, &target).unwrap(), expect, epsilon = 1e-9);
        assert_abs_diff_eq!(psnr(&pred, &target).unwrap(), 28.13, epsilon = 0.01);
    }

    #[test]
    fn psnr_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Array3::from_shape_fn((1, 16, 16), |_| rng.gen_range(0.0..1.0));
        let b = Array3::from_shape_fn((1, 16, 16), |_| rng.gen_range(0.0..1.0));
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }

    #[test]
    fn interpolation_error_of_ten_levels_is_exactly_ten() {
        let target = constant(0.0);
        let pred = constant(10.0 / 255.0);
        assert_eq!(interpolation_error(&pred, &target).unwrap(), 10.0);
    }

    #[test]
    fn interpolation_error_scales_linearly_with_offset() {
        let target = constant(0.1);
        let a = constant(0.1 + 4.0 / 255.0);
        let b = constant(0.1 + 8.0 / 255.0);
        let ie_a = interpolation_error(&a, &target).unwrap();
        let ie_b = interpolation_error(&b, &target).unwrap();
        assert_abs_diff_eq!(2.0 * ie_a, ie_b, epsilon = 1e-9);
    }

    #[test]
    fn ssim_of_constant_pair_matches_closed_form() {
        let a = constant(100.0 / 255.0);
        let b = constant(110.0 / 255.0);
        // Zero variance: only the luminance term differs from 1.
        let c1 = SSIM_C1;
        let expect = (2.0 * 100.0 * 110.0 + c1) / (100.0f64.powi(2) + 110.0f64.powi(2) + c1);
        assert_abs_diff_eq!(ssim(&a, &b).unwrap(), expect, epsilon = 1e-6);
        assert_abs_diff_eq!(ssim(&a, &b).unwrap(), 0.9955, epsilon = 1e-3);
    }

    #[test]
    fn ssim_never_exceeds_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = Array3::from_shape_fn((1, 12, 14), |_| rng.gen_range(0.0..1.0));
            let b = Array3::from_shape_fn((1, 12, 14), |_| rng.gen_range(0.0..1.0));
            assert!(ssim(&a, &b).unwrap() <= 1.0);
        }
    }

    #[test]
    fn noise_degrades_every_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let target = Array3::from_shape_fn((1, 16, 16), |_| rng.gen_range(0.2..0.8));
        let noisy = target.mapv(|v| v + rng.gen_range(-0.05..0.05));
        assert!(psnr(&noisy, &target).unwrap() < psnr(&target, &target).unwrap());
        assert!(ssim(&noisy, &target).unwrap() < ssim(&target, &target).unwrap());
        assert!(
            interpolation_error(&noisy, &target).unwrap()
                > interpolation_error(&target, &target).unwrap()
        );
    }

    #[test]
    fn rgb_metrics_average_over_channels() {
        let mut a = Array3::zeros((3, 16, 16));
        let b = Array3::zeros((3, 16, 16));
        // Offset one channel only; PSNR sees a third of the squared error.
        a.index_axis_mut(ndarray::Axis(0), 0).fill(30.0 / 255.0);
        let mse = 900.0 / 3.0;
        let expect = 10.0 * (255.0f64 * 255.0 / mse).log10();
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), expect, epsilon = 1e-9);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let a = Array3::<f64>::zeros((1, 16, 16));
        let b = Array3::<f64>::zeros((1, 16, 17));
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
        assert!(interpolation_error(&a, &b).is_err());
    }
}
