//! Grayscale rasters: file IO, min-max normalisation, bilinear resampling.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma};
use thiserror::Error;

use crate::geometry::{Bounds, Point};
use crate::view::{Laterality, View};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: unsupported or corrupt raster: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: expected a single-channel grayscale raster, found {found}")]
    Color { path: PathBuf, found: String },
    #[error("{path}: bad sidecar metadata on line {line}: {message}")]
    Sidecar { path: PathBuf, line: usize, message: String },
    #[error("pixel buffer has {got} values, expected {width}x{height}")]
    Shape { width: u32, height: u32, got: usize },
    #[error("pixel spacing must be positive and finite, got {0}")]
    Spacing(f64),
    #[error("unsupported bit depth {0}")]
    BitDepth(u8),
}

/// Single-channel raster with row-major `f64` intensities.
///
/// Freshly loaded images hold raw sample values (0..=255 or 0..=65535);
/// [`normalize`] maps them into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<f64>,
    bit_depth: u8,
    spacing: Option<f64>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<f64>, bit_depth: u8) -> Result<Self, ImageError> {
        if pixels.len() != width as usize * height as usize || width == 0 || height == 0 {
            return Err(ImageError::Shape { width, height, got: pixels.len() });
        }
        if bit_depth != 8 && bit_depth != 16 {
            return Err(ImageError::BitDepth(bit_depth));
        }
        Ok(Self { width, height, pixels, bit_depth, spacing: None })
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self::new(width, height, vec![value; width as usize * height as usize], 8)
            .expect("non-empty image")
    }

    pub fn with_spacing(mut self, spacing: Option<f64>) -> Result<Self, ImageError> {
        if let Some(s) = spacing {
            if !(s.is_finite() && s > 0.0) {
                return Err(ImageError::Spacing(s));
            }
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bounds(&self) -> Bounds {
        Bounds { width: self.width, height: self.height }
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    /// Millimetres per pixel, when known.
    pub fn spacing(&self) -> Option<f64> {
        self.spacing
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = v;
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Bilinear sample at a continuous pixel coordinate; `None` outside the
    /// pixel-centre lattice.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let max_x = f64::from(self.width - 1);
        let max_y = f64::from(self.height - 1);
        if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
            return None;
        }
        Some(self.sample_clamped(x, y))
    }

    fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, f64::from(self.width - 1));
        let y = y.clamp(0.0, f64::from(self.height - 1));
        let x0 = x.floor() as u32;
        let y0 = y.floor() as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - f64::from(x0);
        let fy = y - f64::from(y0);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Raw integer samples at this image's bit depth (rounded and clamped).
    pub fn quantized(&self, bit_depth: u8) -> Result<GrayImage, ImageError> {
        let max = match bit_depth {
            8 => 255.0,
            16 => 65535.0,
            other => return Err(ImageError::BitDepth(other)),
        };
        let pixels = self.pixels.iter().map(|v| (v * max).round().clamp(0.0, max)).collect();
        Ok(GrayImage { pixels, bit_depth, ..self.clone() })
    }

    /// Write raw samples as PNG or binary PGM, chosen by file extension.
    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        let format = ImageFormat::from_path(path).map_err(|e| ImageError::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        let dynamic = match self.bit_depth {
            8 => {
                let raw = self.pixels.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
                DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(self.width, self.height, raw).expect("shape checked"))
            }
            _ => {
                let raw = self.pixels.iter().map(|v| v.round().clamp(0.0, 65535.0) as u16).collect();
                DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(self.width, self.height, raw).expect("shape checked"))
            }
        };
        dynamic.save_with_format(path, format).map_err(|e| ImageError::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}

/// Per-image key-value metadata stored next to the raster.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sidecar {
    pub spacing_mm_per_px: Option<f64>,
    pub laterality: Option<Laterality>,
    pub view: Option<View>,
}

impl Sidecar {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ImageError> {
        let mut out = Sidecar::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| ImageError::Sidecar { path: path.to_owned(), line: idx + 1, message };
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let value = value.trim();
            match key.trim() {
                "spacing_mm_per_px" => {
                    let s: f64 = value.parse().map_err(|_| err(format!("bad spacing `{value}`")))?;
                    if !(s.is_finite() && s > 0.0) {
                        return Err(err(format!("spacing must be positive, got {s}")));
                    }
                    out.spacing_mm_per_px = Some(s);
                }
                "laterality" => out.laterality = Some(value.parse().map_err(|e| err(format!("{e}")))?),
                "view" => out.view = Some(value.parse().map_err(|e| err(format!("{e}")))?),
                _ => {}
            }
        }
        Ok(out)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        if let Some(v) = self.spacing_mm_per_px {
            let _ = writeln!(s, "spacing_mm_per_px = {v:?}");
        }
        if let Some(l) = self.laterality {
            let _ = writeln!(s, "laterality = {l}");
        }
        if let Some(v) = self.view {
            let _ = writeln!(s, "view = {v}");
        }
        s
    }

    /// Reads the sidecar for `image_path`, if one exists.
    pub fn load_for(image_path: &Path) -> Result<Option<Self>, ImageError> {
        let path = sidecar_path(image_path);
        match fs::read_to_string(&path) {
            Ok(text) => Self::parse(&text, &path).map(Some),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(ImageError::Io { path, source }),
        }
    }

    pub fn save_for(&self, image_path: &Path) -> Result<(), ImageError> {
        let path = sidecar_path(image_path);
        fs::write(&path, self.render()).map_err(|source| ImageError::Io { path, source })
    }
}

/// `scan.png` -> `scan.meta`
pub fn sidecar_path(image_path: &Path) -> PathBuf {
    image_path.with_extension("meta")
}

/// Load an 8/16-bit grayscale PNG or PGM; spacing comes from the sidecar.
pub fn load_image(path: &Path) -> Result<GrayImage, ImageError> {
    let bytes = fs::read(path).map_err(|source| ImageError::Io { path: path.to_owned(), source })?;
    let format_err = |e: image::ImageError| ImageError::Format { path: path.to_owned(), message: e.to_string() };
    let reader = ImageReader::new(io::Cursor::new(bytes)).with_guessed_format().map_err(|e| ImageError::Format {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    if reader.format().is_none() {
        return Err(ImageError::Format { path: path.to_owned(), message: "unrecognised file signature".into() });
    }
    let decoded = reader.decode().map_err(format_err)?;
    let (width, height) = (decoded.width(), decoded.height());
    let (pixels, bit_depth): (Vec<f64>, u8) = match decoded {
        DynamicImage::ImageLuma8(buf) => (buf.into_raw().into_iter().map(f64::from).collect(), 8),
        DynamicImage::ImageLuma16(buf) => (buf.into_raw().into_iter().map(f64::from).collect(), 16),
        other => {
            return Err(ImageError::Color { path: path.to_owned(), found: format!("{:?}", other.color()) });
        }
    };
    let spacing = Sidecar::load_for(path)?.and_then(|s| s.spacing_mm_per_px);
    GrayImage::new(width, height, pixels, bit_depth)?.with_spacing(spacing)
}

/// Per-image min-max scaling into `[0, 1]`. Constant images become all zeros.
pub fn normalize(img: &GrayImage) -> GrayImage {
    let (lo, hi) = img.min_max();
    let range = hi - lo;
    let pixels = if range > 0.0 {
        img.pixels.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; img.pixels.len()]
    };
    GrayImage { pixels, ..img.clone() }
}

/// Bilinear resample to exactly `width` x `height` (pixel-centre aligned).
///
/// Spacing is rescaled by the mean axis ratio.
pub fn resample(img: &GrayImage, width: u32, height: u32) -> GrayImage {
    assert!(width >= 1 && height >= 1, "resample target must be non-empty");
    if width == img.width && height == img.height {
        return img.clone();
    }
    let sx = f64::from(img.width) / f64::from(width);
    let sy = f64::from(img.height) / f64::from(height);
    let mut pixels = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height {
        let src_y = (f64::from(y) + 0.5) * sy - 0.5;
        for x in 0..width {
            let src_x = (f64::from(x) + 0.5) * sx - 0.5;
            pixels.push(img.sample_clamped(src_x, src_y));
        }
    }
    GrayImage {
        width,
        height,
        pixels,
        bit_depth: img.bit_depth,
        spacing: img.spacing.map(|s| s * 0.5 * (sx + sy)),
    }
}

/// Map a coordinate between two resolutions of the same image.
pub fn rescale_point(p: Point, from: Bounds, to: Bounds) -> Point {
    Point::new(
        p.x * f64::from(to.width) / f64::from(from.width),
        p.y * f64::from(to.height) / f64::from(from.height),
    )
}
