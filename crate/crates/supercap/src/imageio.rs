//! PNG and JPEG decoding into [`Image`], PNG encoding.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use supercap_core::imaging::Image;

use crate::error::ImageIoError;

fn from_rgb(rgb: RgbImage) -> Result<Image, ImageIoError> {
    let (w, h) = rgb.dimensions();
    let pixels = rgb.pixels().map(|p| p.0).collect();
    Ok(Image::new(w as usize, h as usize, pixels)?)
}

fn to_rgb(img: &Image) -> RgbImage {
    let raw: Vec<u8> = img.pixels().iter().flatten().copied().collect();
    RgbImage::from_raw(img.width() as u32, img.height() as u32, raw).expect("buffer matches dimensions")
}

/// Reads a PNG or JPEG file; alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageIoError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => ImageIoError::NotFound(path.to_path_buf()),
        _ => ImageIoError::Io { path: path.to_path_buf(), source },
    })?;
    decode_image(&bytes).map_err(|e| match e {
        ImageIoError::Unsupported { reason, .. } => ImageIoError::Unsupported { path: path.to_path_buf(), reason },
        other => other,
    })
}

pub fn decode_image(bytes: &[u8]) -> Result<Image, ImageIoError> {
    let unsupported = |reason: String| ImageIoError::Unsupported { path: "<memory>".into(), reason };
    let format = image::guess_format(bytes).map_err(|e| unsupported(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(unsupported(format!("{format:?} is not PNG or JPEG")));
    }
    let decoded = image::load_from_memory_with_format(bytes, format).map_err(|e| unsupported(e.to_string()))?;
    from_rgb(decoded.to_rgb8())
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>, ImageIoError> {
    let mut out = Cursor::new(Vec::new());
    to_rgb(img).write_to(&mut out, ImageFormat::Png).map_err(|e| ImageIoError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<(), ImageIoError> {
    let path = path.as_ref();
    std::fs::write(path, encode_png(img)?).map_err(|source| ImageIoError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let img = Image::from_fn(5, 3, |x, y| [x as u8 * 40, y as u8 * 70, 9]).unwrap();
        let back = decode_image(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.png");
        assert!(matches!(load_image(&missing), Err(ImageIoError::NotFound(_))));
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"definitely not an image").unwrap();
        assert!(matches!(load_image(&junk), Err(ImageIoError::Unsupported { .. })));
    }

    #[test]
    fn alpha_dropped() {
        let rgba = image::RgbaImage::from_pixel(2, 2, image::Rgba([10, 20, 30, 0]));
        let mut buf = Cursor::new(Vec::new());
        rgba.write_to(&mut buf, ImageFormat::Png).unwrap();
        let img = decode_image(buf.get_ref()).unwrap();
        assert_eq!(img.get(1, 1), [10, 20, 30]);
    }
}
