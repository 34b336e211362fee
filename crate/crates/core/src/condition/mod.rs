//! Condition bundles: the structure map, the color map, optional masks,
//! re-weighting coefficients and enough provenance to re-extract both maps
//! bit-identically.
//!
//! Masks are `true` where the condition is active. A missing mask means the
//! whole frame is active. Masked-out pixels are zeroed in the serialized
//! planes ([`ConditionBundle::struct_plane`], [`ConditionBundle::color_plane`])
//! and the mask itself travels alongside as an extra plane; the in-memory
//! maps are left untouched.

mod mask;
mod storage;

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::colordist::{self, ColorDistMap, SlicError, SlicParams};
use crate::colorspace::{self, RgbImage};
use crate::filtering::{self, FilterError, KernelSchedule};
use crate::imageio::ImageIoError;
use crate::resample;
use crate::structure::{self, SaliencyMap, LAB_DIAMETER};

pub use mask::{apply_mask, synth_mask, Mask, MaskShape, MaskSynthParams, MaskTarget};
pub use storage::{load_bundle, save_bundle, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{what}: expected {expected:?}, found {found:?}")]
    Dimensions {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid weights ({w_struct}, {w_color}): both must be finite and non-negative")]
    InvalidWeights { w_struct: f64, w_color: f64 },
    #[error("unsupported bundle format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("bundle metadata: {0}")]
    Metadata(String),
    #[error("corrupt bundle: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Slic(#[from] SlicError),
}

/// Non-negative re-weighting coefficients carried for downstream generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionWeights {
    pub w_struct: f64,
    pub w_color: f64,
}

impl Default for ConditionWeights {
    fn default() -> Self {
        Self {
            w_struct: 1.0,
            w_color: 1.0,
        }
    }
}

impl ConditionWeights {
    pub fn new(w_struct: f64, w_color: f64) -> Result<Self, BundleError> {
        let w = Self { w_struct, w_color };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), BundleError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.w_struct) && ok(self.w_color) {
            Ok(())
        } else {
            Err(BundleError::InvalidWeights {
                w_struct: self.w_struct,
                w_color: self.w_color,
            })
        }
    }
}

/// How one plane of a bundle was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    /// SHA-256 of the source pixels (see [`source_hash`]).
    pub source_hash: String,
    /// Structure window as drawn, before clamping to the image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slic: Option<SlicParams>,
    #[serde(default, with = "seed_repr", skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tool_version: String,
}

/// u64 seeds do not fit TOML integers; store them as decimal strings.
mod seed_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &Option<u64>, s: S) -> Result<S::Ok, S::Error> {
        match seed {
            Some(v) => s.serialize_str(&v.to_string()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
        let raw: Option<String> = Option::deserialize(d)?;
        raw.map(|s| s.parse().map_err(serde::de::Error::custom)).transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub structure: ExtractionRecord,
    pub color: ExtractionRecord,
    /// Planes come from different parents.
    #[serde(default)]
    pub mixed: bool,
    /// Original color-plane size when it was resampled during mixing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color_resampled_from: Option<[usize; 2]>,
}

/// Parameters for one extraction run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractParams {
    pub k: usize,
    pub sigma: Option<f64>,
    pub slic: SlicParams,
}

/// Wall-clock time spent in each stage of an extraction.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExtractTimings {
    pub to_lab: Duration,
    pub structure: Duration,
    pub color: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBundle {
    struct_map: SaliencyMap,
    color_map: ColorDistMap,
    mask_struct: Option<Mask>,
    mask_color: Option<Mask>,
    weights: ConditionWeights,
    provenance: Provenance,
    /// Planes hold values decoded from their serialized form.
    struct_quantized: bool,
    color_quantized: bool,
}

/// Hash of an image's dimensions and pixels.
pub fn source_hash(img: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update((img.width() as u64).to_le_bytes());
    h.update((img.height() as u64).to_le_bytes());
    h.update(img.data());
    hex::encode(h.finalize())
}

/// Structure plane sample for `value` under `scale`.
pub fn quantize_struct(value: f64, scale: f64) -> u16 {
    (value / scale * 65535.0).round().clamp(0.0, 65535.0) as u16
}

pub fn dequantize_struct(q: u16, scale: f64) -> f64 {
    q as f64 / 65535.0 * scale
}

/// Value range the structure plane is stored against.
pub fn struct_scale(map: &SaliencyMap) -> f64 {
    if map.is_normalized() {
        1.0
    } else {
        LAB_DIAMETER
    }
}

/// Runs both operators with fixed parameters.
pub fn extract_maps(
    img: &RgbImage,
    params: &ExtractParams,
) -> Result<(SaliencyMap, ColorDistMap, ExtractTimings), BundleError> {
    let t = Instant::now();
    let lab = colorspace::srgb_to_lab(img);
    let to_lab = t.elapsed();

    let t = Instant::now();
    let struct_map = structure::saliency_local(&lab, params.k, params.sigma)?;
    let structure = t.elapsed();

    let t = Instant::now();
    let color_map = colordist::color_distribution_map(&lab, &params.slic)?;
    let color = t.elapsed();

    Ok((
        struct_map,
        color_map,
        ExtractTimings {
            to_lab,
            structure,
            color,
        },
    ))
}

/// Draws a structure window from `schedule` with a generator seeded by
/// `seed`, extracts both maps and records everything needed to redo it.
pub fn extract_bundle(
    img: &RgbImage,
    schedule: &KernelSchedule,
    slic: &SlicParams,
    seed: u64,
) -> Result<ConditionBundle, BundleError> {
    Ok(extract_bundle_timed(img, schedule, slic, seed)?.0)
}

pub fn extract_bundle_timed(
    img: &RgbImage,
    schedule: &KernelSchedule,
    slic: &SlicParams,
    seed: u64,
) -> Result<(ConditionBundle, ExtractTimings), BundleError> {
    schedule.validate()?;
    slic.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = filtering::sample_k(schedule, &mut rng);
    let params = ExtractParams {
        k,
        sigma: None,
        slic: *slic,
    };
    let (struct_map, color_map, timings) = extract_maps(img, &params)?;
    let record = ExtractionRecord {
        source_hash: source_hash(img),
        k: Some(k),
        sigma: Some(filtering::default_sigma(k)),
        slic: Some(*slic),
        seed: Some(seed),
        tool_version: crate::TOOL_VERSION.to_string(),
    };
    let bundle = ConditionBundle {
        struct_map,
        color_map,
        mask_struct: None,
        mask_color: None,
        weights: ConditionWeights::default(),
        provenance: Provenance {
            structure: record.clone(),
            color: record,
            mixed: false,
            color_resampled_from: None,
        },
        struct_quantized: false,
        color_quantized: false,
    };
    Ok((bundle, timings))
}

/// Re-runs the extraction recorded in `provenance` on `img`.
pub fn reextract(img: &RgbImage, provenance: &Provenance) -> Result<(SaliencyMap, ColorDistMap), BundleError> {
    let missing = |what: &str| BundleError::Metadata(format!("provenance lacks {what}"));
    let k = provenance.structure.k.ok_or_else(|| missing("structure k"))?;
    let slic = provenance.color.slic.ok_or_else(|| missing("color SLIC parameters"))?;
    let lab = colorspace::srgb_to_lab(img);
    let struct_map = structure::saliency_local(&lab, k, provenance.structure.sigma)?;
    let color_map = colordist::color_distribution_map(&lab, &slic)?;
    Ok((struct_map, color_map))
}

/// Structure plane from one bundle, color plane from another. A color
/// source of a different size is resampled bilinearly (its mask by nearest
/// neighbour) to the structure source's size.
pub fn mix_bundles(struct_src: &ConditionBundle, color_src: &ConditionBundle) -> ConditionBundle {
    let (w, h) = struct_src.dimensions();
    let same_size = color_src.dimensions() == (w, h);
    let (color_map, mask_color) = if same_size {
        (color_src.color_map.clone(), color_src.mask_color.clone())
    } else {
        let lab = resample::resize_lab(color_src.color_map.lab(), w, h);
        let mask = color_src.mask_color.as_ref().map(|m| m.resized(w, h));
        (ColorDistMap::new(lab, *color_src.color_map.params()), mask)
    };
    let (cw, ch) = color_src.dimensions();
    let bundle = ConditionBundle {
        struct_map: struct_src.struct_map.clone(),
        color_map,
        mask_struct: struct_src.mask_struct.clone(),
        mask_color,
        weights: ConditionWeights {
            w_struct: struct_src.weights.w_struct,
            w_color: color_src.weights.w_color,
        },
        provenance: Provenance {
            structure: struct_src.provenance.structure.clone(),
            color: color_src.provenance.color.clone(),
            mixed: true,
            color_resampled_from: if same_size {
                color_src.provenance.color_resampled_from
            } else {
                Some([cw, ch])
            },
        },
        struct_quantized: struct_src.struct_quantized,
        color_quantized: color_src.color_quantized && same_size,
    };
    debug_assert!(bundle.validate().is_ok());
    bundle
}

impl ConditionBundle {
    /// Assembles a bundle from existing parts, checking coherence.
    pub fn from_parts(
        struct_map: SaliencyMap,
        color_map: ColorDistMap,
        weights: ConditionWeights,
        provenance: Provenance,
    ) -> Result<Self, BundleError> {
        let b = Self {
            struct_map,
            color_map,
            mask_struct: None,
            mask_color: None,
            weights,
            provenance,
            struct_quantized: false,
            color_quantized: false,
        };
        b.validate()?;
        Ok(b)
    }

    /// Shared coherence check: every plane and mask has the same size,
    /// weights are valid and structure values are finite and non-negative.
    pub fn validate(&self) -> Result<(), BundleError> {
        let dims = self.struct_map.dimensions();
        let check = |what: &str, found: (usize, usize)| {
            if found == dims {
                Ok(())
            } else {
                Err(BundleError::Dimensions {
                    what: what.to_string(),
                    expected: dims,
                    found,
                })
            }
        };
        check("color map", self.color_map.dimensions())?;
        if let Some(m) = &self.mask_struct {
            check("structure mask", m.dimensions())?;
        }
        if let Some(m) = &self.mask_color {
            check("color mask", m.dimensions())?;
        }
        self.weights.validate()?;
        if let Some(v) = self.struct_map.values().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(BundleError::Corrupt(format!("structure value {v} out of range")));
        }
        Ok(())
    }

    pub fn dimensions(&self) -> (usize, usize) {
        self.struct_map.dimensions()
    }

    pub fn struct_map(&self) -> &SaliencyMap {
        &self.struct_map
    }

    pub fn color_map(&self) -> &ColorDistMap {
        &self.color_map
    }

    pub fn mask_struct(&self) -> Option<&Mask> {
        self.mask_struct.as_ref()
    }

    pub fn mask_color(&self) -> Option<&Mask> {
        self.mask_color.as_ref()
    }

    pub fn weights(&self) -> ConditionWeights {
        self.weights
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn struct_quantized(&self) -> bool {
        self.struct_quantized
    }

    pub fn color_quantized(&self) -> bool {
        self.color_quantized
    }

    pub fn with_weights(mut self, weights: ConditionWeights) -> Result<Self, BundleError> {
        weights.validate()?;
        self.weights = weights;
        Ok(self)
    }

    /// 16-bit structure plane, zero where the structure mask is inactive.
    pub fn struct_plane(&self) -> Vec<u16> {
        let scale = struct_scale(&self.struct_map);
        self.struct_map
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| match &self.mask_struct {
                Some(m) if !m.data()[i] => 0,
                _ => quantize_struct(v, scale),
            })
            .collect()
    }

    /// 8-bit sRGB color plane, black where the color mask is inactive.
    pub fn color_plane(&self) -> RgbImage {
        let rgb = colorspace::lab_to_srgb(self.color_map.lab());
        match &self.mask_color {
            None => rgb,
            Some(m) => {
                let (w, h) = rgb.dimensions();
                let mut data = rgb.into_data();
                for (px, &active) in data.chunks_exact_mut(3).zip(m.data()) {
                    if !active {
                        px.fill(0);
                    }
                }
                RgbImage::new(w, h, data).expect("same dimensions")
            }
        }
    }

    fn set_mask(&mut self, target: MaskTarget, mask: Mask) {
        match target {
            MaskTarget::Struct => self.mask_struct = Some(mask),
            MaskTarget::Color => self.mask_color = Some(mask),
            MaskTarget::Both => {
                self.mask_struct = Some(mask.clone());
                self.mask_color = Some(mask);
            }
        }
    }
}
