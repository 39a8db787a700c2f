//! 16-bit grayscale PNG depth in millimeters.

use std::path::Path;

use camcue_core::io::{DepthIngest, IoError};
use camcue_core::DepthMap;
use image::DynamicImage;

pub struct PngDepth;

impl DepthIngest for PngDepth {
    fn extension(&self) -> &str {
        "png"
    }

    fn read(&self, path: &Path) -> Result<DepthMap, IoError> {
        let bad = |reason: String| IoError::MalformedScene(format!("{}: {reason}", path.display()));
        let img = image::ImageReader::open(path)
            .map_err(|e| IoError::Io {
                path: path.to_path_buf(),
                source: e,
            })?
            .decode()
            .map_err(|e| bad(e.to_string()))?;
        let DynamicImage::ImageLuma16(buf) = img else {
            return Err(bad("expected a 16-bit grayscale PNG".into()));
        };
        let (w, h) = buf.dimensions();
        let values = buf
            .into_raw()
            .into_iter()
            .map(|mm| mm as f64 / 1000.0)
            .collect();
        DepthMap::new(w, h, values).map_err(|e| bad(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, ImageBuffer, Luma};

    #[test]
    fn millimeters_to_meters() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("d.png");
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_fn(3, 2, |x, y| Luma([(x * 1000 + y * 5) as u16]));
        img.save(&path).unwrap();
        let d = PngDepth.read(&path).unwrap();
        assert_eq!((d.width(), d.height()), (3, 2));
        assert_eq!(d.get(2, 1), 2.005);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn eight_bit_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("d.png");
        GrayImage::new(2, 2).save(&path).unwrap();
        assert!(matches!(
            PngDepth.read(&path),
            Err(IoError::MalformedScene(_))
        ));
    }
}
