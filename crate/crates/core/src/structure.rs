//! Spatial-structure maps.
//!
//! [`saliency_global`] is classic frequency-tuned saliency: distance between
//! the image's global mean color and its Gaussian blur, min-max normalized.
//! [`saliency_local`] replaces the global mean with a box mean over the same
//! window as the blur and keeps absolute values, so maps are comparable
//! across images. The bundle uses the local variant.

use crate::colorspace::LabImage;
use crate::filtering::{self, FilterError, GaussianKernel};

/// Largest possible Euclidean distance between two Lab colors with
/// `L in [0, 100]`, `a, b in [-128, 128]`, rounded up.
pub const LAB_DIAMETER: f64 = 377.0;

/// Single-channel, non-negative structure map.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    normalized: bool,
    /// Window actually used, after clamping to the image.
    k: usize,
    sigma: f64,
}

impl SaliencyMap {
    pub(crate) fn from_parts(
        width: usize,
        height: usize,
        values: Vec<f64>,
        normalized: bool,
        k: usize,
        sigma: f64,
    ) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            values,
            normalized,
            k,
            sigma,
        }
    }

    /// All-zero map.
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::from_parts(width, height, vec![0.0; width * height], false, 0, 0.0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Min-max normalization to `[0, 1]`. A constant map becomes all zeros.
    pub fn normalize(&self) -> SaliencyMap {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let values = if span > 0.0 {
            self.values.iter().map(|v| (v - lo) / span).collect()
        } else {
            vec![0.0; self.values.len()]
        };
        SaliencyMap {
            values,
            normalized: true,
            ..self.clone()
        }
    }
}

/// How the local expectation in [`saliency_local_with`] is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LocalMean {
    /// Uniform mean over the `k` x `k` window.
    #[default]
    Uniform,
    /// Gaussian-weighted mean over the same window with its own sigma.
    /// With the blur's own sigma the map is identically zero.
    Gaussian { sigma: f64 },
}

fn prepare_kernel(img: &LabImage, k: usize, sigma: Option<f64>) -> Result<GaussianKernel, FilterError> {
    filtering::validate_window(k)?;
    let sigma = sigma.unwrap_or_else(|| filtering::default_sigma(k));
    let k = filtering::effective_window(k, img.width(), img.height());
    GaussianKernel::new(k, Some(sigma))
}

fn pixel_distances(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.chunks_exact(3)
        .zip(b.chunks_exact(3))
        .map(|(p, q)| {
            let (dl, da, db) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
            (dl * dl + da * da + db * db).sqrt()
        })
        .collect()
}

/// Per-channel global mean. Accumulated relative to the first pixel so a
/// constant image yields its own value exactly.
pub fn global_mean(img: &LabImage) -> [f64; 3] {
    let reference = img.pixel(0, 0);
    let mut acc = [0.0; 3];
    for p in img.data().chunks_exact(3) {
        for c in 0..3 {
            acc[c] += p[c] - reference[c];
        }
    }
    let n = (img.width() * img.height()) as f64;
    [
        reference[0] + acc[0] / n,
        reference[1] + acc[1] / n,
        reference[2] + acc[2] / n,
    ]
}

/// Frequency-tuned saliency before normalization: `|mean - blur(img)|` per
/// pixel.
pub fn saliency_global_unnormalized(
    img: &LabImage,
    k: usize,
    sigma: Option<f64>,
) -> Result<SaliencyMap, FilterError> {
    let kernel = prepare_kernel(img, k, sigma)?;
    let blurred = filtering::gaussian_blur(img, &kernel);
    let mean = global_mean(img);
    let values = blurred
        .data()
        .chunks_exact(3)
        .map(|p| {
            let (dl, da, db) = (mean[0] - p[0], mean[1] - p[1], mean[2] - p[2]);
            (dl * dl + da * da + db * db).sqrt()
        })
        .collect();
    Ok(SaliencyMap::from_parts(
        img.width(),
        img.height(),
        values,
        false,
        kernel.k(),
        kernel.sigma(),
    ))
}

/// Frequency-tuned saliency, min-max normalized to `[0, 1]`.
pub fn saliency_global(img: &LabImage, k: usize, sigma: Option<f64>) -> Result<SaliencyMap, FilterError> {
    Ok(saliency_global_unnormalized(img, k, sigma)?.normalize())
}

/// Localized structure map: `|box_mean_k(img) - blur_k(img)|` per pixel,
/// not normalized.
pub fn saliency_local(img: &LabImage, k: usize, sigma: Option<f64>) -> Result<SaliencyMap, FilterError> {
    saliency_local_with(img, k, sigma, LocalMean::Uniform)
}

pub fn saliency_local_with(
    img: &LabImage,
    k: usize,
    sigma: Option<f64>,
    local_mean: LocalMean,
) -> Result<SaliencyMap, FilterError> {
    let kernel = prepare_kernel(img, k, sigma)?;
    let blurred = filtering::gaussian_blur(img, &kernel);
    let mean = match local_mean {
        LocalMean::Uniform => filtering::box_mean(img, kernel.k())?,
        LocalMean::Gaussian { sigma } => {
            filtering::gaussian_blur(img, &GaussianKernel::new(kernel.k(), Some(sigma))?)
        }
    };
    let values = pixel_distances(mean.data(), blurred.data());
    Ok(SaliencyMap::from_parts(
        img.width(),
        img.height(),
        values,
        false,
        kernel.k(),
        kernel.sigma(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_lab(w: usize, h: usize, seed: u64) -> LabImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LabImage::from_fn(w, h, |_, _| {
            [
                rng.random_range(0.0..100.0),
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
            ]
        })
    }

    #[test]
    fn uniform_images_have_no_structure() {
        let img = LabImage::filled(24, 20, [41.7, 13.3, -29.1]);
        let g = saliency_global(&img, 9, None).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
        assert!(g.is_normalized());
        let l = saliency_local(&img, 9, None).unwrap();
        assert!(l.values().iter().all(|&v| v == 0.0));
        assert!(!l.is_normalized());
    }

    #[test]
    fn normalized_range() {
        let img = random_lab(20, 14, 3);
        let g = saliency_global(&img, 5, None).unwrap();
        let lo = g.values().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = g.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn even_kernel_rejected() {
        let img = random_lab(8, 8, 1);
        assert_eq!(saliency_local(&img, 8, None).unwrap_err(), FilterError::EvenKernel(8));
    }

    #[test]
    fn records_effective_window() {
        let img = random_lab(10, 6, 2);
        let m = saliency_local(&img, 257, None).unwrap();
        assert_eq!(m.k(), 19);
        assert!((m.sigma() - filtering::default_sigma(257)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_local_mean_with_same_sigma_vanishes() {
        let img = random_lab(16, 16, 8);
        let s = filtering::default_sigma(7);
        let m = saliency_local_with(&img, 7, None, LocalMean::Gaussian { sigma: s }).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
        let m = saliency_local_with(&img, 7, None, LocalMean::Gaussian { sigma: 3.0 * s }).unwrap();
        assert!(m.values().iter().any(|&v| v > 0.0));
    }

    #[test]
    fn local_map_is_bounded_by_lab_diameter() {
        let img = LabImage::from_fn(32, 32, |x, y| {
            if (x / 3 + y / 3) % 2 == 0 {
                [100.0, 128.0, 128.0]
            } else {
                [0.0, -128.0, -128.0]
            }
        });
        for k in [3, 5, 9, 31] {
            let m = saliency_local(&img, k, None).unwrap();
            assert!(m.values().iter().all(|&v| (0.0..=LAB_DIAMETER).contains(&v)));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn local_map_ignores_constant_offsets(seed: u64, dl in -50.0f64..50.0, da in -60.0f64..60.0, db in -60.0f64..60.0) {
                let img = random_lab(18, 15, seed);
                let a = saliency_local(&img, 7, None).unwrap();
                let b = saliency_local(&img.offset([dl, da, db]), 7, None).unwrap();
                for (x, y) in a.values().iter().zip(b.values()) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }

            #[test]
            fn maps_commute_with_translation_in_the_interior(seed: u64, dx in 0usize..5, dy in 0usize..5) {
                let (w, h, k) = (36usize, 32usize, 7usize);
                let img = random_lab(w, h, seed);
                let shifted = LabImage::from_fn(w, h, |x, y| img.pixel((x + w - dx) % w, (y + h - dy) % h));
                let la = saliency_local(&img, k, None).unwrap();
                let lb = saliency_local(&shifted, k, None).unwrap();
                let ga = saliency_global_unnormalized(&img, k, None).unwrap();
                let gb = saliency_global_unnormalized(&shifted, k, None).unwrap();
                for y in (k + dy)..(h - k) {
                    for x in (k + dx)..(w - k) {
                        prop_assert!((la.get(x - dx, y - dy) - lb.get(x, y)).abs() < 1e-9);
                        prop_assert!((ga.get(x - dx, y - dy) - gb.get(x, y)).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
