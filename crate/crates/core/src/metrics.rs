//! Composition distances.
//!
//! [`dis`] is the root-mean-square difference over every element of two
//! equally shaped feature maps. [`cycle_consistency`] re-extracts both maps
//! from a generated image with the parameters recorded in a bundle and
//! reports the distance per representation, restricted to active mask
//! pixels. Color distances are measured in Lab.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colordist::{self, ColorDistMap, SlicParams};
use crate::colorspace::{self, LabImage, RgbImage};
use crate::condition::{dequantize_struct, quantize_struct, struct_scale, ConditionBundle, Mask};
use crate::filtering::FilterError;
use crate::colordist::SlicError;
use crate::resample;
use crate::structure::{self, SaliencyMap};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {a:?} vs {b:?} (width, height, channels)")]
    Shape {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },
    #[error("unusable provenance: {0}")]
    Provenance(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Slic(#[from] SlicError),
}

/// Anything that can be compared by [`dis`].
pub trait FeatureMap {
    /// `(width, height, channels)`.
    fn shape(&self) -> (usize, usize, usize);
    /// Interleaved samples, `width * height * channels` of them.
    fn samples(&self) -> &[f64];
}

impl FeatureMap for SaliencyMap {
    fn shape(&self) -> (usize, usize, usize) {
        (self.width(), self.height(), 1)
    }
    fn samples(&self) -> &[f64] {
        self.values()
    }
}

impl FeatureMap for LabImage {
    fn shape(&self) -> (usize, usize, usize) {
        (self.width(), self.height(), 3)
    }
    fn samples(&self) -> &[f64] {
        self.data()
    }
}

impl FeatureMap for ColorDistMap {
    fn shape(&self) -> (usize, usize, usize) {
        (self.width(), self.height(), 3)
    }
    fn samples(&self) -> &[f64] {
        self.lab().data()
    }
}

/// Root-mean-square difference over all samples.
pub fn dis<A: FeatureMap + ?Sized, B: FeatureMap + ?Sized>(a: &A, b: &B) -> Result<f64, MetricsError> {
    dis_masked(a, b, None)
}

/// [`dis`] restricted to pixels where `mask` is active. No active pixels
/// gives 0.
pub fn dis_masked<A: FeatureMap + ?Sized, B: FeatureMap + ?Sized>(
    a: &A,
    b: &B,
    mask: Option<&Mask>,
) -> Result<f64, MetricsError> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(MetricsError::Shape { a: sa, b: sb });
    }
    let channels = sa.2;
    if let Some(m) = mask {
        if m.dimensions() != (sa.0, sa.1) {
            return Err(MetricsError::Shape {
                a: sa,
                b: (m.dimensions().0, m.dimensions().1, channels),
            });
        }
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (pa, pb)) in a
        .samples()
        .chunks_exact(channels)
        .zip(b.samples().chunks_exact(channels))
        .enumerate()
    {
        if mask.is_some_and(|m| !m.data()[i]) {
            continue;
        }
        for (x, y) in pa.iter().zip(pb) {
            let d = x - y;
            sum += d * d;
        }
        n += channels;
    }
    Ok(if n == 0 { 0.0 } else { (sum / n as f64).sqrt() })
}

/// Parameters both sides of a comparison were extracted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonParams {
    pub k: usize,
    pub sigma: Option<f64>,
    pub normalized: bool,
    pub slic: SlicParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub l_struct: f64,
    pub l_color: f64,
    pub params: ComparisonParams,
}

fn requantize_struct(map: &SaliencyMap) -> SaliencyMap {
    let scale = struct_scale(map);
    let values: Vec<f64> = map
        .values()
        .iter()
        .map(|&v| dequantize_struct(quantize_struct(v, scale), scale))
        .collect();
    SaliencyMap::from_parts(
        map.width(),
        map.height(),
        values,
        map.is_normalized(),
        map.k(),
        map.sigma(),
    )
}

/// Cycle-consistency distances between a bundle and a generated image.
///
/// The generated image is resampled to the bundle's size when needed. When
/// a bundle plane holds decoded (quantized) values, the re-extracted plane
/// goes through the same encoding before comparison, so an image compared
/// against a saved bundle of itself scores exactly zero.
pub fn cycle_consistency(bundle: &ConditionBundle, generated: &RgbImage) -> Result<DistanceReport, MetricsError> {
    let prov = bundle.provenance();
    let k = prov
        .structure
        .k
        .ok_or_else(|| MetricsError::Provenance("structure window k is missing".into()))?;
    let slic = prov
        .color
        .slic
        .ok_or_else(|| MetricsError::Provenance("color SLIC parameters are missing".into()))?;
    let sigma = prov.structure.sigma;

    let (w, h) = bundle.dimensions();
    let generated = resample::resize_rgb(generated, w, h);
    let lab = colorspace::srgb_to_lab(&generated);

    let normalized = bundle.struct_map().is_normalized();
    let mut regen_struct = if normalized {
        structure::saliency_global(&lab, k, sigma)?
    } else {
        structure::saliency_local(&lab, k, sigma)?
    };
    if bundle.struct_quantized() {
        regen_struct = requantize_struct(&regen_struct);
    }

    let mut regen_color = colordist::color_distribution_map(&lab, &slic)?.into_lab();
    if bundle.color_quantized() {
        regen_color = colorspace::srgb_to_lab(&colorspace::lab_to_srgb(&regen_color));
    }

    let l_struct = dis_masked(bundle.struct_map(), &regen_struct, bundle.mask_struct())?;
    let l_color = dis_masked(bundle.color_map().lab(), &regen_color, bundle.mask_color())?;
    Ok(DistanceReport {
        l_struct,
        l_color,
        params: ComparisonParams {
            k,
            sigma,
            normalized,
            slic,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condition::{apply_mask, extract_bundle, MaskTarget};
    use crate::filtering::KernelSchedule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(w: usize, h: usize, rng: &mut ChaCha8Rng) -> LabImage {
        LabImage::from_fn(w, h, |_, _| [rng.random_range(0.0..100.0), rng.random_range(-50.0..50.0), 0.0])
    }

    #[test]
    fn identity_and_constant_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_map(9, 7, &mut rng);
        assert_eq!(dis(&a, &a).unwrap(), 0.0);
        let b = a.offset([2.5, 2.5, 2.5]);
        assert!((dis(&a, &b).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_map(8, 8, &mut rng);
        let b = random_map(8, 8, &mut rng);
        let mut sum = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..3 {
                    sum += (a.pixel(x, y)[c] - b.pixel(x, y)[c]).powi(2);
                }
            }
        }
        let want = (sum / 192.0).sqrt();
        assert!((dis(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        let a = LabImage::filled(4, 4, [0.0; 3]);
        let b = LabImage::filled(4, 5, [0.0; 3]);
        assert!(matches!(dis(&a, &b), Err(MetricsError::Shape { .. })));
        let s = SaliencyMap::zeros(4, 4);
        assert!(dis(&a, &s).is_err());
    }

    #[test]
    fn masked_distance_excludes_inactive_pixels() {
        let a = LabImage::from_fn(4, 2, |x, _| if x < 2 { [0.0; 3] } else { [9.0; 3] });
        let b = LabImage::filled(4, 2, [0.0; 3]);
        let left = Mask::from_fn(4, 2, |x, _| x < 2);
        assert_eq!(dis_masked(&a, &b, Some(&left)).unwrap(), 0.0);
        assert!((dis_masked(&a, &b, Some(&left.inverted())).unwrap() - 9.0).abs() < 1e-12);
        assert_eq!(dis_masked(&a, &b, Some(&Mask::filled(4, 2, false))).unwrap(), 0.0);
    }

    fn small_bundle(img: &RgbImage) -> ConditionBundle {
        let sched = KernelSchedule::new(7, 15, 4).unwrap();
        let slic = SlicParams {
            region_size: 12,
            iterations: 5,
            blur_k: Some(17),
            ..SlicParams::default()
        };
        extract_bundle(img, &sched, &slic, 77).unwrap()
    }

    fn scene(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            if (x as i64 - 20).pow(2) + (y as i64 - 14).pow(2) < 90 {
                [240, 200, 40]
            } else {
                [(x * 4) as u8, 80, (y * 5) as u8]
            }
        })
    }

    #[test]
    fn same_image_scores_zero() {
        let img = scene(48, 36);
        let b = small_bundle(&img);
        let r = cycle_consistency(&b, &img).unwrap();
        assert_eq!((r.l_struct, r.l_color), (0.0, 0.0));
        assert_eq!(r.params.k, b.provenance().structure.k.unwrap());
    }

    #[test]
    fn uniform_generated_image_scores_the_structure_energy() {
        let img = scene(48, 36);
        let b = small_bundle(&img);
        let r = cycle_consistency(&b, &RgbImage::filled(48, 36, [128, 128, 128])).unwrap();
        let zero = SaliencyMap::zeros(48, 36);
        assert!((r.l_struct - dis(b.struct_map(), &zero).unwrap()).abs() < 1e-12);
        assert!(r.l_struct > 0.0);
    }

    #[test]
    fn fully_masked_plane_scores_zero() {
        let img = scene(48, 36);
        let b = small_bundle(&img);
        let off = Mask::filled(48, 36, false);
        let masked = apply_mask(&b, &off, MaskTarget::Struct).unwrap();
        let r = cycle_consistency(&masked, &RgbImage::filled(48, 36, [10, 10, 10])).unwrap();
        assert_eq!(r.l_struct, 0.0);
        assert!(r.l_color > 0.0);
    }

    #[test]
    fn missing_provenance_is_an_error() {
        let img = scene(32, 32);
        let b = small_bundle(&img);
        let mut prov = b.provenance().clone();
        prov.structure.k = None;
        let stripped = ConditionBundle::from_parts(
            b.struct_map().clone(),
            b.color_map().clone(),
            b.weights(),
            prov,
        )
        .unwrap();
        assert!(matches!(cycle_consistency(&stripped, &img), Err(MetricsError::Provenance(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn maps() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
            let v = || proptest::collection::vec(-100.0f64..100.0, 24);
            (v(), v(), v())
        }

        proptest! {
            #[test]
            fn metric_axioms((a, b, c) in maps()) {
                let mk = |d: Vec<f64>| LabImage::new(4, 2, d).unwrap();
                let (a, b, c) = (mk(a), mk(b), mk(c));
                let ab = dis(&a, &b).unwrap();
                prop_assert!(ab >= 0.0);
                prop_assert_eq!(ab, dis(&b, &a).unwrap());
                prop_assert_eq!(dis(&a, &a).unwrap(), 0.0);
                if a != b { prop_assert!(ab > 0.0); }
                prop_assert!(dis(&a, &c).unwrap() <= ab + dis(&b, &c).unwrap() + 1e-9);
            }
        }
    }
}
