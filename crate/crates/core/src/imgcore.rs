//! Raster containers for frames, binary annotations and saliency maps, plus
//! PNG/JPEG I/O and sRGB to CIELAB conversion.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::OnceLock;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::{Error, Result};

/// Default luminance threshold used to binarize annotation images.
pub const DEFAULT_MASK_THRESHOLD: u8 = 128;

/// 8-bit RGB image, row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width * 3 {
            return Err(Error::InvalidArgument(format!(
                "rgb buffer of {} bytes does not match {height}x{width}x3",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self> {
        check_dims(height, width)?;
        let data = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Binary annotation, one label in {0, 1} per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl GrayMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "mask buffer of {} entries does not match {height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument(
                "mask labels must be 0 or 1".to_string(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, label: bool) -> Result<Self> {
        check_dims(height, width)?;
        Ok(Self {
            height,
            width,
            data: vec![label as u8; height * width],
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn salient_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

/// Real-valued saliency prediction with every entry in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "probability buffer of {} entries does not match {height}x{width}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "probability {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Embeds a binary mask as a probability map (0 → 0.0, 1 → 1.0).
    pub fn from_mask(mask: &GrayMask) -> Self {
        Self {
            height: mask.height,
            width: mask.width,
            data: mask.data.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// CIELAB image (D65), double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    height: usize,
    width: usize,
    data: Vec<[f64; 3]>,
}

impl LabImage {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        self.data[row * self.width + col]
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "image dimensions must be positive, got {height}x{width}"
        )));
    }
    Ok(())
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::EmptyImage(path.to_path_buf()));
    }
    Ok(img)
}

/// Loads an 8-bit image; grayscale inputs are replicated into three channels.
pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let img = decode(path.as_ref())?.to_rgb8();
    let (w, h) = img.dimensions();
    RasterImage::new(h as usize, w as usize, img.into_raw())
}

/// Loads an annotation image; a pixel is salient iff its luminance is at
/// least `threshold`.
pub fn load_mask(path: impl AsRef<Path>, threshold: u8) -> Result<GrayMask> {
    let img = decode(path.as_ref())?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| (v >= threshold) as u8).collect();
    GrayMask::new(h as usize, w as usize, data)
}

/// Loads a saliency prediction stored as an 8-bit grayscale image (value/255).
pub fn load_prob_map(path: impl AsRef<Path>) -> Result<ProbMap> {
    let img = decode(path.as_ref())?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    ProbMap::new(h as usize, w as usize, data)
}

pub(crate) fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    bytes: &[u8],
    color: ExtendedColorType,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let encoder = PngEncoder::new_with_quality(
        BufWriter::new(file),
        CompressionType::Fast,
        FilterType::Adaptive,
    );
    encoder
        .write_image(bytes, width as u32, height as u32, color)
        .map_err(|e| Error::Encode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

pub fn save_image(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    write_png(
        path.as_ref(),
        img.width,
        img.height,
        &img.data,
        ExtendedColorType::Rgb8,
    )
}

/// Writes a mask as an 8-bit PNG with values {0, 255}.
pub fn save_mask(mask: &GrayMask, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = mask.data.iter().map(|&v| v * 255).collect();
    write_png(
        path.as_ref(),
        mask.width,
        mask.height,
        &bytes,
        ExtendedColorType::L8,
    )
}

/// Writes a probability map as 8-bit grayscale, round-half-up of 255·p.
pub fn save_prob_map(map: &ProbMap, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = map.data.iter().map(|&p| quantize_unit(p)).collect();
    write_png(
        path.as_ref(),
        map.width,
        map.height,
        &bytes,
        ExtendedColorType::L8,
    )
}

/// Maps a value in [0, 1] to 0..=255 with round-half-up.
#[inline]
pub fn quantize_unit(p: f64) -> u8 {
    (255.0 * p + 0.5).floor().clamp(0.0, 255.0) as u8
}

// Linear sRGB → XYZ (D65).
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

// CIE constants, exact rational forms.
const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

#[inline]
fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_table() -> &'static [f64; 256] {
    static TABLE: OnceLock<[f64; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(|c| srgb_to_linear(c as f64 / 255.0)))
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > LAB_EPSILON {
        t.cbrt()
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

/// Converts one sRGB triple to CIELAB under D65.
///
/// The white point is the image of linear (1, 1, 1) under the conversion
/// matrix, so neutral grays land on a = b = 0 up to rounding.
pub fn rgb_pixel_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let table = linear_table();
    let lin = rgb.map(|c| table[c as usize]);
    let mut xyz = [0.0; 3];
    let mut white = [0.0; 3];
    for (k, row) in SRGB_TO_XYZ.iter().enumerate() {
        xyz[k] = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
        white[k] = row[0] + row[1] + row[2];
    }
    let fx = lab_f(xyz[0] / white[0]);
    let fy = lab_f(xyz[1] / white[1]);
    let fz = lab_f(xyz[2] / white[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn rgb_to_lab(img: &RasterImage) -> LabImage {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| rgb_pixel_to_lab([p[0], p[1], p[2]]))
        .collect();
    LabImage {
        height: img.height,
        width: img.width,
        data,
    }
}
