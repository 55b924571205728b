//! Middlebury `.flo` files and color-wheel rendering of flow fields.
//!
//! Layout, all little-endian: `f32 202021.25` (bytes `PIEH`), `i32 width`,
//! `i32 height`, then `width * height` interleaved `(u, v)` `f32` pairs in
//! row-major order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flowsynth::PixelFlowField;
use crate::imgcore::RasterImage;

pub const FLO_MAGIC: [u8; 4] = *b"PIEH";
pub const FLO_TAG: f32 = 202021.25;
pub const FLO_HEADER_LEN: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowFileHeader {
    pub magic: [u8; 4],
    pub width: u32,
    pub height: u32,
}

/// Serializes a flow field to `.flo` bytes. Components are narrowed to f32.
pub fn encode_flo(flow: &PixelFlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(FLO_HEADER_LEN as usize + 8 * flow.data().len());
    out.extend_from_slice(&FLO_TAG.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for [u, v] in flow.data() {
        out.extend_from_slice(&(*u as f32).to_le_bytes());
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn write_flo(flow: &PixelFlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    writer
        .write_all(&encode_flo(flow))
        .and_then(|_| writer.flush())
        .map_err(|e| Error::io(path, e))
}

fn read_i32(bytes: &[u8]) -> i32 {
    i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
}

fn read_f32(bytes: &[u8]) -> f32 {
    f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
}

/// Parses the 12-byte header.
pub fn decode_header(bytes: &[u8], path: &Path) -> Result<FlowFileHeader> {
    if (bytes.len() as u64) < FLO_HEADER_LEN {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        if bytes.len() < 4 || found != FLO_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                found,
            });
        }
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: FLO_HEADER_LEN,
            found: bytes.len() as u64,
        });
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic != FLO_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let width = read_i32(&bytes[4..8]);
    let height = read_i32(&bytes[8..12]);
    if width < 1 || height < 1 {
        return Err(Error::InvalidArgument(format!(
            "{}: invalid .flo dimensions {width}x{height}",
            path.display()
        )));
    }
    Ok(FlowFileHeader {
        magic,
        width: width as u32,
        height: height as u32,
    })
}

pub fn decode_flo(bytes: &[u8], path: &Path) -> Result<PixelFlowField> {
    let header = decode_header(bytes, path)?;
    let (w, h) = (header.width as usize, header.height as usize);
    let expected = FLO_HEADER_LEN + 8 * (w as u64) * (h as u64);
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let data = bytes[FLO_HEADER_LEN as usize..]
        .chunks_exact(8)
        .map(|c| [read_f32(&c[..4]) as f64, read_f32(&c[4..]) as f64])
        .collect();
    PixelFlowField::new(h, w, data)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<PixelFlowField> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes, path)
}

/// Largest vector magnitude in the field.
pub fn max_magnitude(flow: &PixelFlowField) -> f64 {
    flow.data()
        .iter()
        .map(|[u, v]| u.hypot(*v))
        .fold(0.0, f64::max)
}

/// Color for one flow vector: hue from `atan2(v, u)`, saturation from
/// `|flow| / max_magnitude` clamped to 1, full value. Zero flow is white.
pub fn flow_color(u: f64, v: f64, max_magnitude: f64) -> [u8; 3] {
    let magnitude = u.hypot(v);
    let saturation = if max_magnitude > 0.0 {
        (magnitude / max_magnitude).min(1.0)
    } else {
        0.0
    };
    let hue = v.atan2(u).to_degrees().rem_euclid(360.0);
    hsv_to_rgb(hue, saturation, 1.0)
}

fn hsv_to_rgb(hue: f64, saturation: f64, value: f64) -> [u8; 3] {
    let channel = |n: f64| {
        let k = (n + hue / 60.0) % 6.0;
        let ramp = k.min(4.0 - k).clamp(0.0, 1.0);
        let c = value - value * saturation * ramp;
        (255.0 * c + 0.5).floor().clamp(0.0, 255.0) as u8
    };
    [channel(5.0), channel(3.0), channel(1.0)]
}

/// Renders a flow field on the color wheel. `max_magnitude = None` uses the
/// field's own maximum (or 1 for an all-zero field).
pub fn flow_to_color(flow: &PixelFlowField, max_magnitude: Option<f64>) -> RasterImage {
    let scale = max_magnitude.unwrap_or_else(|| {
        let m = self::max_magnitude(flow);
        if m > 0.0 {
            m
        } else {
            1.0
        }
    });
    let data = flow
        .data()
        .iter()
        .flat_map(|[u, v]| flow_color(*u, *v, scale))
        .collect();
    RasterImage::new(flow.height(), flow.width(), data).expect("flow dimensions are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flow_reference_bytes() {
        let flow = PixelFlowField::constant(1, 1, [0.0, 0.0]).unwrap();
        let bytes = encode_flo(&flow);
        assert_eq!(
            bytes,
            vec![
                0x50, 0x49, 0x45, 0x48, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0
            ]
        );
        // The magic is the IEEE-754 encoding of 202021.25.
        assert_eq!(FLO_TAG.to_le_bytes(), FLO_MAGIC);
        assert_eq!(&bytes[..4], b"PIEH");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        let data = (0..12)
            .map(|i| [i as f32 as f64 * 0.25 - 1.0, -(i as f64) * 1.5])
            .collect();
        let flow = PixelFlowField::new(3, 4, data).unwrap();
        write_flo(&flow, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 12 + 8 * 12);
        assert_eq!(read_flo(&path).unwrap(), flow);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.flo");
        let mut bytes = encode_flo(&PixelFlowField::constant(2, 2, [1.0, 2.0]).unwrap());
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_flo(&path), Err(Error::BadMagic { .. })));

        bytes[0] = b'P';
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_flo(&path), Err(Error::Truncated { .. })));
        std::fs::write(&path, &bytes[..8]).unwrap();
        assert!(matches!(read_flo(&path), Err(Error::Truncated { .. })));
        std::fs::write(&path, b"").unwrap();
        assert!(matches!(read_flo(&path), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn zero_flow_renders_white() {
        let flow = PixelFlowField::constant(3, 2, [0.0, 0.0]).unwrap();
        let img = flow_to_color(&flow, None);
        assert!(img.data().iter().all(|&b| b == 255));
    }

    #[test]
    fn opposite_vectors_are_complementary() {
        for (c, max) in [(2.0, 4.0), (1.0, 1.0), (0.3, 5.0)] {
            let a = flow_color(c, 0.0, max);
            let b = flow_color(-c, 0.0, max);
            assert_ne!(a, b);
            // Complementary hues at equal saturation and full value sum to
            // the same level in every channel.
            let sums: Vec<i32> = (0..3).map(|k| a[k] as i32 + b[k] as i32).collect();
            assert!(sums.iter().all(|s| (s - sums[0]).abs() <= 1), "{a:?} {b:?}");
        }
    }

    #[test]
    fn saturation_clamps() {
        assert_eq!(flow_color(10.0, 0.0, 2.0), flow_color(2.0, 0.0, 2.0));
        assert_eq!(flow_color(10.0, 0.0, 2.0), [255, 0, 0]);
    }
}
