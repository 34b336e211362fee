//! Raster file I/O. Inputs are decoded to 8-bit RGB; outputs are PNG and
//! written atomically (temp file in the target directory, then rename).

use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};
use thiserror::Error;

use crate::colorspace::RgbImage;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Codec {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: expected {expected}, found {found}")]
    Format {
        path: String,
        expected: &'static str,
        found: String,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> ImageIoError {
    ImageIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn codec_err(path: &Path, source: image::ImageError) -> ImageIoError {
    ImageIoError::Codec {
        path: path.display().to_string(),
        source,
    }
}

/// Reads any supported 8-bit raster as RGB. Alpha is dropped with a warning.
pub fn read_rgb(path: &Path) -> Result<RgbImage, ImageIoError> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => io_err(path, io),
        other => codec_err(path, other),
    })?;
    if img.color().has_alpha() {
        log::warn!("{}: dropping alpha channel", path.display());
    }
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(RgbImage::new(w as usize, h as usize, rgb.into_raw()).expect("decoder returns consistent buffers"))
}

/// Writes `bytes` to `path` through a temporary sibling file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ImageIoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn encode_png(path: &Path, width: usize, height: usize, bytes: &[u8], color: ExtendedColorType) -> Result<(), ImageIoError> {
    let mut buf = Vec::new();
    PngEncoder::new(BufWriter::new(&mut buf))
        .write_image(bytes, width as u32, height as u32, color)
        .map_err(|e| codec_err(path, e))?;
    write_atomic(path, &buf)
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<(), ImageIoError> {
    encode_png(path, img.width(), img.height(), img.data(), ExtendedColorType::Rgb8)
}

pub fn write_gray8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<(), ImageIoError> {
    encode_png(path, width, height, data, ExtendedColorType::L8)
}

pub fn write_gray16(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<(), ImageIoError> {
    // PNG stores 16-bit samples big-endian; the encoder takes native order.
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_ne_bytes()).collect();
    encode_png(path, width, height, &bytes, ExtendedColorType::L16)
}

fn open_exact(path: &Path) -> Result<image::DynamicImage, ImageIoError> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => io_err(path, io),
        other => codec_err(path, other),
    })
}

/// Reads a 16-bit grayscale raster without any conversion.
pub fn read_gray16(path: &Path) -> Result<(usize, usize, Vec<u16>), ImageIoError> {
    match open_exact(path)? {
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            Ok((w as usize, h as usize, buf.into_raw()))
        }
        other => Err(ImageIoError::Format {
            path: path.display().to_string(),
            expected: "16-bit grayscale",
            found: format!("{:?}", other.color()),
        }),
    }
}

/// Reads an 8-bit grayscale raster without any conversion.
pub fn read_gray8(path: &Path) -> Result<(usize, usize, Vec<u8>), ImageIoError> {
    match open_exact(path)? {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            Ok((w as usize, h as usize, buf.into_raw()))
        }
        other => Err(ImageIoError::Format {
            path: path.display().to_string(),
            expected: "8-bit grayscale",
            found: format!("{:?}", other.color()),
        }),
    }
}

/// Reads an 8-bit RGB raster, rejecting anything that would need conversion.
pub fn read_rgb_exact(path: &Path) -> Result<RgbImage, ImageIoError> {
    match open_exact(path)? {
        image::DynamicImage::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            Ok(RgbImage::new(w as usize, h as usize, buf.into_raw()).expect("consistent buffer"))
        }
        other => Err(ImageIoError::Format {
            path: path.display().to_string(),
            expected: "8-bit RGB",
            found: format!("{:?}", other.color()),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = RgbImage::from_fn(5, 3, |x, y| [x as u8 * 40, y as u8 * 90, 7]);
        let p = dir.path().join("c.png");
        write_rgb(&p, &rgb).unwrap();
        assert_eq!(read_rgb(&p).unwrap(), rgb);
        assert_eq!(read_rgb_exact(&p).unwrap(), rgb);

        let g16: Vec<u16> = (0..15).map(|i| i * 4000 + 17).collect();
        let p = dir.path().join("g16.png");
        write_gray16(&p, 5, 3, &g16).unwrap();
        assert_eq!(read_gray16(&p).unwrap(), (5, 3, g16));
        assert!(read_gray8(&p).is_err());

        let g8: Vec<u8> = (0..15).map(|i| if i % 2 == 0 { 255 } else { 0 }).collect();
        let p = dir.path().join("g8.png");
        write_gray8(&p, 5, 3, &g8).unwrap();
        assert_eq!(read_gray8(&p).unwrap(), (5, 3, g8));
    }

    #[test]
    fn alpha_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let rgba = image::RgbaImage::from_raw(2, 1, vec![10, 20, 30, 0, 40, 50, 60, 255]).unwrap();
        rgba.save(&p).unwrap();
        let rgb = read_rgb(&p).unwrap();
        assert_eq!(rgb.data(), &[10, 20, 30, 40, 50, 60]);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = read_rgb(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(matches!(err, ImageIoError::Io { .. }));
    }
}
