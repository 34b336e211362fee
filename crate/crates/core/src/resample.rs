//! Resampling between image sizes: bilinear for color data, nearest for
//! masks.

use crate::colorspace::{LabImage, RgbImage};

/// Source coordinate sampled by output index `i` when resizing `src` -> `dst`
/// samples, aligning pixel centers.
pub fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    let s = (i as f64 + 0.5) * src as f64 / dst as f64 - 0.5;
    s.clamp(0.0, (src - 1) as f64)
}

/// Bilinear interpolation of an interleaved buffer with `channels` values
/// per pixel.
pub fn bilinear(
    data: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    out_w: usize,
    out_h: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_w * out_h * channels);
    for y in 0..out_h {
        let sy = source_coord(y, height, out_h);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(height - 1);
        let fy = sy - y0 as f64;
        for x in 0..out_w {
            let sx = source_coord(x, width, out_w);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(width - 1);
            let fx = sx - x0 as f64;
            for c in 0..channels {
                let at = |xx: usize, yy: usize| data[(yy * width + xx) * channels + c];
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

pub fn resize_lab(img: &LabImage, out_w: usize, out_h: usize) -> LabImage {
    if img.dimensions() == (out_w, out_h) {
        return img.clone();
    }
    let data = bilinear(img.data(), img.width(), img.height(), 3, out_w, out_h);
    LabImage::from_raw(out_w, out_h, data)
}

pub fn resize_rgb(img: &RgbImage, out_w: usize, out_h: usize) -> RgbImage {
    if img.dimensions() == (out_w, out_h) {
        return img.clone();
    }
    let src: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let data = bilinear(&src, img.width(), img.height(), 3, out_w, out_h)
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    RgbImage::new(out_w, out_h, data).expect("dimensions are consistent")
}

/// Nearest-neighbour resize of a boolean plane.
pub fn resize_nearest(data: &[bool], width: usize, height: usize, out_w: usize, out_h: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let sy = source_coord(y, height, out_h).round() as usize;
        for x in 0..out_w {
            let sx = source_coord(x, width, out_w).round() as usize;
            out.push(data[sy * width + sx]);
        }
    }
    out
}
