//! Frame sampling, resizing, normalization and lossless augmentation.

pub mod pgm;

use crate::error::{Error, Result};
use crate::rng::{tag, SplitMix64};
use crate::tensor::Tensor;

/// An 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Data(format!("frame dimensions must be positive, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::Data(format!(
                "{width}x{height} frame needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }
}

/// Keeps items `0, d, 2d, ...` in order.
pub fn extract_frames<T: Clone>(frames: &[T], rate_divisor: usize) -> Result<Vec<T>> {
    if rate_divisor == 0 {
        return Err(Error::Usage("frame rate divisor must be at least 1".into()));
    }
    Ok(frames.iter().step_by(rate_divisor).cloned().collect())
}

/// Bilinear resize with pixel-center alignment.
///
/// Destination pixel `d` samples source coordinate
/// `(d + 0.5) * in / out - 0.5`, clamped to the valid range; the result is
/// rounded half-up to 8 bits.
pub fn resize_bilinear(f: &Frame, out_w: usize, out_h: usize) -> Result<Frame> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Usage(format!("resize target must be positive, got {out_w}x{out_h}")));
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let xs = taps(f.width, out_w);
    let ys = taps(f.height, out_h);
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p = |y, x| f.get(y, x) as f64;
            let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
            let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            pixels.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
    }
    Frame::new(out_w, out_h, pixels)
}

/// Maps pixel `p` to `p / 255 - 0.5`, giving a `[1, H, W]` tensor in `[-0.5, 0.5]`.
pub fn normalize(f: &Frame) -> Tensor {
    Tensor::new(
        vec![1, f.height, f.width],
        f.pixels.iter().map(|&p| p as f32 / 255.0 - 0.5).collect(),
    )
    .expect("frame dimensions are positive")
}

/// Resize (if needed) then normalize.
pub fn prepare(f: &Frame, side: usize) -> Result<Tensor> {
    if f.width == side && f.height == side {
        Ok(normalize(f))
    } else {
        Ok(normalize(&resize_bilinear(f, side, side)?))
    }
}

/// Lossless flips and right-angle rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugmentOp {
    FlipH,
    FlipV,
    /// Clockwise quarter turn.
    Rot90,
    Rot180,
    Rot270,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 5] = [
        AugmentOp::FlipH,
        AugmentOp::FlipV,
        AugmentOp::Rot90,
        AugmentOp::Rot180,
        AugmentOp::Rot270,
    ];
}

pub fn augment(f: &Frame, op: AugmentOp) -> Frame {
    let (w, h) = (f.width, f.height);
    let (ow, oh) = match op {
        AugmentOp::Rot90 | AugmentOp::Rot270 => (h, w),
        _ => (w, h),
    };
    let mut pixels = Vec::with_capacity(w * h);
    for r in 0..oh {
        for c in 0..ow {
            let (sr, sc) = match op {
                AugmentOp::FlipH => (r, w - 1 - c),
                AugmentOp::FlipV => (h - 1 - r, c),
                AugmentOp::Rot90 => (h - 1 - c, r),
                AugmentOp::Rot180 => (h - 1 - r, w - 1 - c),
                AugmentOp::Rot270 => (c, w - 1 - r),
            };
            pixels.push(f.get(sr, sc));
        }
    }
    Frame {
        width: ow,
        height: oh,
        pixels,
    }
}

/// Expands a training set: each frame is followed by `copies` augmented
/// versions whose ops are drawn uniformly from [`AugmentOp::ALL`] using the
/// `(seed, AUGMENT, i)` stream. Validation data must never pass through here.
pub fn augment_training_set<L: Clone>(frames: &[(Frame, L)], copies: usize, seed: u64) -> Vec<(Frame, L)> {
    let mut out = Vec::with_capacity(frames.len() * (copies + 1));
    for (i, (frame, label)) in frames.iter().enumerate() {
        out.push((frame.clone(), label.clone()));
        let mut rng = SplitMix64::stream(seed, &[tag::AUGMENT, i as u64]);
        for _ in 0..copies {
            let op = AugmentOp::ALL[rng.below(AugmentOp::ALL.len())];
            out.push((augment(frame, op), label.clone()));
        }
    }
    out
}
