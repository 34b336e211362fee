use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BundleError, ConditionBundle};
use crate::resample;

/// Per-pixel gate, `true` where the condition is active.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self, BundleError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(BundleError::Dimensions {
                what: "mask".into(),
                expected: (width, height),
                found: (data.len(), 1),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, active: bool) -> Self {
        Self {
            width,
            height,
            data: vec![active; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self { width, height, data }
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn active_count(&self) -> usize {
        self.data.iter().filter(|&&a| a).count()
    }

    pub fn active_fraction(&self) -> f64 {
        self.active_count() as f64 / self.data.len() as f64
    }

    pub fn inverted(&self) -> Mask {
        Mask {
            data: self.data.iter().map(|a| !a).collect(),
            ..self.clone()
        }
    }

    pub fn resized(&self, width: usize, height: usize) -> Mask {
        Mask {
            width,
            height,
            data: resample::resize_nearest(&self.data, self.width, self.height, width, height),
        }
    }

    /// 8-bit plane, 255 = active.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&a| if a { 255 } else { 0 }).collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self, BundleError> {
        let data = bytes
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                255 => Ok(true),
                other => Err(BundleError::Corrupt(format!("mask sample {other} is neither 0 nor 255"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Mask::new(width, height, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskShape {
    Ellipse,
    Rectangle,
    /// Ellipse or rectangle with equal probability.
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSynthParams {
    pub shape: MaskShape,
    /// Shape extent as a fraction of each image dimension.
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub invert_probability: f64,
}

impl Default for MaskSynthParams {
    fn default() -> Self {
        Self {
            shape: MaskShape::Any,
            min_fraction: 0.10,
            max_fraction: 0.60,
            invert_probability: 0.5,
        }
    }
}

impl MaskSynthParams {
    pub fn validate(&self) -> Result<(), BundleError> {
        let frac = |f: f64| f > 0.0 && f <= 1.0;
        if !(frac(self.min_fraction) && frac(self.max_fraction) && self.min_fraction <= self.max_fraction) {
            return Err(BundleError::Metadata(format!(
                "mask size fractions must satisfy 0 < min <= max <= 1, got [{}, {}]",
                self.min_fraction, self.max_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.invert_probability) {
            return Err(BundleError::Metadata(format!(
                "invert probability must be in [0, 1], got {}",
                self.invert_probability
            )));
        }
        Ok(())
    }
}

/// One filled ellipse or rectangle of random size, placed fully inside the
/// frame, inverted with `invert_probability`.
pub fn synth_mask<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    params: &MaskSynthParams,
    rng: &mut R,
) -> Result<Mask, BundleError> {
    params.validate()?;
    let ellipse = match params.shape {
        MaskShape::Ellipse => true,
        MaskShape::Rectangle => false,
        MaskShape::Any => rng.random_bool(0.5),
    };
    let mut extent = |dim: usize| {
        let f = rng.random_range(params.min_fraction..=params.max_fraction);
        ((f * dim as f64).round() as usize).clamp(1, dim)
    };
    let (sw, sh) = (extent(width), extent(height));
    let x0 = rng.random_range(0..=width - sw);
    let y0 = rng.random_range(0..=height - sh);
    let invert = rng.random_bool(params.invert_probability);

    let (cx, cy) = (x0 as f64 + sw as f64 / 2.0, y0 as f64 + sh as f64 / 2.0);
    let (ax, ay) = (sw as f64 / 2.0, sh as f64 / 2.0);
    let mask = Mask::from_fn(width, height, |x, y| {
        let inside_box = x >= x0 && x < x0 + sw && y >= y0 && y < y0 + sh;
        let inside = if ellipse {
            let u = (x as f64 + 0.5 - cx) / ax;
            let v = (y as f64 + 0.5 - cy) / ay;
            inside_box && u * u + v * v <= 1.0
        } else {
            inside_box
        };
        inside != invert
    });
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskTarget {
    Struct,
    Color,
    Both,
}

/// Attaches `mask` to the targeted plane(s), replacing any previous mask.
pub fn apply_mask(bundle: &ConditionBundle, mask: &Mask, target: MaskTarget) -> Result<ConditionBundle, BundleError> {
    if mask.dimensions() != bundle.dimensions() {
        return Err(BundleError::Dimensions {
            what: "mask".into(),
            expected: bundle.dimensions(),
            found: mask.dimensions(),
        });
    }
    let mut out = bundle.clone();
    out.set_mask(target, mask.clone());
    Ok(out)
}
