//! Overhead image tiles and their PGM/PPM encoding.

use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::geo::GeoBounds;

/// Overhead image covering a geographic rectangle.
///
/// Pixels are stored row-major with interleaved channels (HWC), each value in
/// `[0, 1]`. One channel is a graymap, three a pixmap.
#[derive(Debug, Clone, PartialEq)]
pub struct OverheadTile {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
    bounds: GeoBounds,
}

impl OverheadTile {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f64>,
        bounds: GeoBounds,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Input(format!(
                "tile dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} tile needs {} values, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("pixel value {bad} outside [0, 1]")));
        }
        bounds.validate()?;
        Ok(Self {
            height,
            width,
            channels,
            pixels,
            bounds,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn bounds(&self) -> GeoBounds {
        self.bounds
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    /// Mean intensity of one channel.
    pub fn channel_mean(&self, channel: usize) -> f64 {
        let sum: f64 = self
            .pixels
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .sum();
        sum / (self.height * self.width) as f64
    }

    /// Decode a binary PGM (P5) or PPM (P6) with maxval 255.
    pub fn from_pnm_bytes(bytes: &[u8], bounds: GeoBounds) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)?;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let (channels, raw) = match img {
            DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
            DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
            other => {
                return Err(Error::Input(format!(
                    "unsupported tile pixel layout {:?}; expected 8-bit graymap or pixmap",
                    other.color()
                )))
            }
        };
        let pixels = raw.into_iter().map(|b| f64::from(b) / 255.0).collect();
        Self::new(height, width, channels, pixels, bounds)
    }

    pub fn load_pnm(path: &Path, bounds: GeoBounds) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pnm_bytes(&bytes, bounds)
    }

    /// Encode as binary PGM (one channel) or PPM (three channels).
    pub fn to_pnm_bytes(&self) -> Result<Vec<u8>> {
        let (subtype, color) = match self.channels {
            1 => (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8),
            3 => (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8),
            c => {
                return Err(Error::Input(format!(
                    "only 1- or 3-channel tiles can be written as PNM, got {c}"
                )))
            }
        };
        let raw: Vec<u8> = self.pixels.iter().map(|&v| quantize(v)).collect();
        let mut out = Cursor::new(Vec::new());
        PnmEncoder::new(&mut out)
            .with_subtype(subtype)
            .write_image(&raw, self.width as u32, self.height as u32, color)?;
        Ok(out.into_inner())
    }

    /// File extension matching [`to_pnm_bytes`](Self::to_pnm_bytes).
    pub fn pnm_extension(&self) -> &'static str {
        if self.channels == 1 {
            "pgm"
        } else {
            "ppm"
        }
    }
}

/// Nearest 8-bit level of a value in `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> GeoBounds {
        GeoBounds::new(0.0, 1.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(OverheadTile::new(1, 1, 1, vec![1.5], bounds()).is_err());
        assert!(OverheadTile::new(0, 1, 1, vec![], bounds()).is_err());
        assert!(OverheadTile::new(1, 2, 1, vec![0.5], bounds()).is_err());
    }

    #[test]
    fn quantized_tiles_survive_pnm_round_trip() {
        for channels in [1, 3] {
            let pixels: Vec<f64> = (0..4 * 3 * channels)
                .map(|i| ((i * 37) % 256) as f64 / 255.0)
                .collect();
            let tile = OverheadTile::new(4, 3, channels, pixels, bounds()).unwrap();
            let bytes = tile.to_pnm_bytes().unwrap();
            let magic = if channels == 1 { b"P5" } else { b"P6" };
            assert_eq!(&bytes[..2], magic);
            let back = OverheadTile::from_pnm_bytes(&bytes, bounds()).unwrap();
            assert_eq!(back, tile);
        }
    }

    #[test]
    fn channel_means_are_per_channel() {
        let pixels = vec![0.0, 1.0, 0.2, 0.0, 1.0, 0.4];
        let tile = OverheadTile::new(1, 2, 3, pixels, bounds()).unwrap();
        assert_eq!(tile.channel_mean(0), 0.0);
        assert_eq!(tile.channel_mean(1), 1.0);
        assert!((tile.channel_mean(2) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn hand_written_graymap_decodes() {
        let mut bytes = b"P5\n# comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255]);
        let tile = OverheadTile::from_pnm_bytes(&bytes, bounds()).unwrap();
        assert_eq!(tile.pixels(), &[0.0, 1.0]);
        assert_eq!((tile.height(), tile.width(), tile.channels()), (1, 2, 1));
    }
}
