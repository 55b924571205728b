//! Backward warping: output pixel `x` samples the source at `x + flow(x)`.

use crate::error::{Error, Result};
use crate::flowsynth::PixelFlowField;
use crate::imgcore::{GrayMask, RasterImage};

/// Bilinear backward warp. Sample coordinates are clamped to the image
/// rectangle (edge replication) and results rounded half-up to 8 bits.
pub fn warp_image(img: &RasterImage, flow: &PixelFlowField) -> Result<RasterImage> {
    if img.dims() != flow.dims() {
        return Err(Error::dims(img.dims(), flow.dims()));
    }
    let (h, w) = img.dims();
    let src = img.data();
    let max_r = (h - 1) as f64;
    let max_c = (w - 1) as f64;
    let mut out = vec![0u8; h * w * 3];
    for r in 0..h {
        for c in 0..w {
            let [u, v] = flow.get(r, c);
            let sx = (c as f64 + u).clamp(0.0, max_c);
            let sy = (r as f64 + v).clamp(0.0, max_r);
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as usize, y0 as usize);
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let w00 = (1.0 - fx) * (1.0 - fy);
            let w01 = fx * (1.0 - fy);
            let w10 = (1.0 - fx) * fy;
            let w11 = fx * fy;
            let o = (r * w + c) * 3;
            for ch in 0..3 {
                let value = w00 * src[(y0 * w + x0) * 3 + ch] as f64
                    + w01 * src[(y0 * w + x1) * 3 + ch] as f64
                    + w10 * src[(y1 * w + x0) * 3 + ch] as f64
                    + w11 * src[(y1 * w + x1) * 3 + ch] as f64;
                out[o + ch] = (value + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RasterImage::new(h, w, out)
}

/// Nearest-neighbor backward warp of a binary mask. The sample point is
/// rounded half-up to a pixel index; indices outside the image give 0.
pub fn warp_mask(mask: &GrayMask, flow: &PixelFlowField) -> Result<GrayMask> {
    if mask.dims() != flow.dims() {
        return Err(Error::dims(mask.dims(), flow.dims()));
    }
    let (h, w) = mask.dims();
    let mut out = vec![0u8; h * w];
    for r in 0..h {
        for c in 0..w {
            let [u, v] = flow.get(r, c);
            let sx = (c as f64 + u + 0.5).floor();
            let sy = (r as f64 + v + 0.5).floor();
            if sx >= 0.0 && sy >= 0.0 && sx < w as f64 && sy < h as f64 {
                out[r * w + c] = mask.get(sy as usize, sx as usize);
            }
        }
    }
    GrayMask::new(h, w, out)
}
