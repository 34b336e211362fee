//! On-disk bundle layout, one directory per bundle:
//!
//! ```text
//! struct.png        16-bit gray, value / scale * 65535
//! color.png         8-bit sRGB
//! mask_struct.png   8-bit gray, 0 / 255 (only when a mask is set)
//! mask_color.png    8-bit gray, 0 / 255 (only when a mask is set)
//! meta.toml         format version, scales, parameters, provenance
//! ```
//!
//! `meta.toml` is written last, so a directory with a readable meta file
//! has complete planes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    dequantize_struct, struct_scale, BundleError, ConditionBundle, ConditionWeights, Mask, Provenance,
};
use crate::colordist::{ColorDistMap, SlicParams};
use crate::colorspace;
use crate::imageio;
use crate::structure::SaliencyMap;

pub const FORMAT_VERSION: u32 = 1;

const STRUCT_FILE: &str = "struct.png";
const COLOR_FILE: &str = "color.png";
const MASK_STRUCT_FILE: &str = "mask_struct.png";
const MASK_COLOR_FILE: &str = "mask_color.png";
const META_FILE: &str = "meta.toml";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    width: usize,
    height: usize,
    weights: ConditionWeights,
    #[serde(rename = "struct")]
    structure: StructMeta,
    color: ColorMeta,
    #[serde(default)]
    masks: MaskMeta,
    provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct StructMeta {
    file: String,
    /// Plane value 65535 corresponds to this map value.
    scale: f64,
    normalized: bool,
    /// Window actually applied (after clamping to the image).
    k: usize,
    sigma: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ColorMeta {
    file: String,
    encoding: String,
    slic: SlicParams,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct MaskMeta {
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "struct")]
    structure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    color: Option<String>,
}

/// Writes `bundle` into directory `dir`, creating it if needed.
pub fn save_bundle(bundle: &ConditionBundle, dir: &Path) -> Result<(), BundleError> {
    bundle.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| imageio::ImageIoError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let (w, h) = bundle.dimensions();

    imageio::write_gray16(&dir.join(STRUCT_FILE), w, h, &bundle.struct_plane())?;
    imageio::write_rgb(&dir.join(COLOR_FILE), &bundle.color_plane())?;

    let mut masks = MaskMeta::default();
    for (mask, file, slot) in [
        (bundle.mask_struct(), MASK_STRUCT_FILE, &mut masks.structure),
        (bundle.mask_color(), MASK_COLOR_FILE, &mut masks.color),
    ] {
        let path = dir.join(file);
        match mask {
            Some(m) => {
                imageio::write_gray8(&path, w, h, &m.to_bytes())?;
                *slot = Some(file.to_string());
            }
            None => {
                // Drop planes left over from an earlier save into this directory.
                if path.exists() {
                    std::fs::remove_file(&path).map_err(|e| imageio::ImageIoError::Io {
                        path: path.display().to_string(),
                        source: e,
                    })?;
                }
            }
        }
    }

    let sm = bundle.struct_map();
    let meta = Meta {
        format_version: FORMAT_VERSION,
        width: w,
        height: h,
        weights: bundle.weights(),
        structure: StructMeta {
            file: STRUCT_FILE.into(),
            scale: struct_scale(sm),
            normalized: sm.is_normalized(),
            k: sm.k(),
            sigma: sm.sigma(),
        },
        color: ColorMeta {
            file: COLOR_FILE.into(),
            encoding: "srgb8".into(),
            slic: *bundle.color_map().params(),
        },
        masks,
        provenance: bundle.provenance().clone(),
    };
    let text = toml::to_string_pretty(&meta).map_err(|e| BundleError::Metadata(e.to_string()))?;
    imageio::write_atomic(&dir.join(META_FILE), text.as_bytes())?;
    Ok(())
}

fn expect_dims(what: &str, expected: (usize, usize), found: (usize, usize)) -> Result<(), BundleError> {
    if expected == found {
        Ok(())
    } else {
        Err(BundleError::Dimensions {
            what: what.to_string(),
            expected,
            found,
        })
    }
}

/// Reads a bundle written by [`save_bundle`]. Map values are the decoded
/// plane values, so masked-out regions read back as zero.
pub fn load_bundle(dir: &Path) -> Result<ConditionBundle, BundleError> {
    let meta_path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| imageio::ImageIoError::Io {
        path: meta_path.display().to_string(),
        source: e,
    })?;
    // Check the version before the full schema so old/new layouts get a
    // precise error.
    let version = toml::from_str::<toml::Table>(&text)
        .map_err(|e| BundleError::Metadata(e.to_string()))?
        .get("format_version")
        .and_then(|v| v.as_integer())
        .ok_or_else(|| BundleError::Metadata("missing format_version".into()))?;
    if version != FORMAT_VERSION as i64 {
        return Err(BundleError::Version {
            found: version.clamp(0, u32::MAX as i64) as u32,
        });
    }
    let meta: Meta = toml::from_str(&text).map_err(|e| BundleError::Metadata(e.to_string()))?;
    let dims = (meta.width, meta.height);
    if meta.width == 0 || meta.height == 0 {
        return Err(BundleError::Metadata("bundle dimensions must be non-zero".into()));
    }
    if !(meta.structure.scale.is_finite() && meta.structure.scale > 0.0) {
        return Err(BundleError::Metadata(format!("invalid structure scale {}", meta.structure.scale)));
    }
    meta.weights.validate()?;
    meta.color.slic.validate()?;
    if meta.color.encoding != "srgb8" {
        return Err(BundleError::Metadata(format!("unknown color encoding {:?}", meta.color.encoding)));
    }

    let (sw, sh, raw) = imageio::read_gray16(&dir.join(&meta.structure.file))?;
    expect_dims("structure plane", dims, (sw, sh))?;
    let values = raw.iter().map(|&q| dequantize_struct(q, meta.structure.scale)).collect();
    let struct_map = SaliencyMap::from_parts(
        sw,
        sh,
        values,
        meta.structure.normalized,
        meta.structure.k,
        meta.structure.sigma,
    );

    let rgb = imageio::read_rgb_exact(&dir.join(&meta.color.file))?;
    expect_dims("color plane", dims, rgb.dimensions())?;
    let color_map = ColorDistMap::new(colorspace::srgb_to_lab(&rgb), meta.color.slic);

    let read_mask = |file: &Option<String>, what: &str| -> Result<Option<Mask>, BundleError> {
        match file {
            None => Ok(None),
            Some(f) => {
                let (mw, mh, bytes) = imageio::read_gray8(&dir.join(f))?;
                expect_dims(what, dims, (mw, mh))?;
                Mask::from_bytes(mw, mh, &bytes).map(Some)
            }
        }
    };
    let mask_struct = read_mask(&meta.masks.structure, "structure mask")?;
    let mask_color = read_mask(&meta.masks.color, "color mask")?;

    let bundle = ConditionBundle {
        struct_map,
        color_map,
        mask_struct,
        mask_color,
        weights: meta.weights,
        provenance: meta.provenance,
        struct_quantized: true,
        color_quantized: true,
    };
    bundle.validate()?;
    Ok(bundle)
}
