//! Dense row-major `f32` tensors and the two kernels the network is built
//! on: matrix multiply and im2col patch extraction.

use crate::error::{Error, Result};

/// Dense N-dimensional array of `f32`, row-major.
///
/// `data.len()` always equals the product of `shape`, and every dimension is
/// at least 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("tensor rank must be at least 1".into()));
    }
    if shape.contains(&0) {
        return Err(Error::Shape(format!(
            "tensor dimensions must be positive, got {shape:?}"
        )));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if len != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape(format!(
                "{what}: expected rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub(crate) fn dims3(&self, what: &str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::Shape(format!(
                "{what}: expected [C, H, W] tensor, got shape {:?}",
                self.shape
            ))),
        }
    }
}

/// `a [m×k] · b [k×n] -> [m×n]`, accumulated in `f32`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul lhs")?;
    let (k2, n) = b.dims2("matmul rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0.0f32; m * n];
    matmul_into(&a.data, &b.data, &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

/// Raw kernel: `out[m×n] += a[m×k] · b[k×n]`. Loop order i-t-j so the inner
/// loop streams contiguous rows of `b` and `out`.
pub(crate) fn matmul_into(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let brow = &b[t * n..(t + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Transpose of a rank-2 tensor.
pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2("transpose")?;
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Geometry of a strided, zero-padded 2-D sliding window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        (channels, height, width): (usize, usize, usize),
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Shape("stride must be at least 1".into()));
        }
        if kernel_h == 0 || kernel_w == 0 {
            return Err(Error::Shape("kernel dimensions must be positive".into()));
        }
        let padded_h = height + 2 * pad;
        let padded_w = width + 2 * pad;
        if padded_h < kernel_h || padded_w < kernel_w {
            return Err(Error::Shape(format!(
                "kernel {kernel_h}x{kernel_w} does not fit padded input {padded_h}x{padded_w}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            kernel_h,
            kernel_w,
            stride,
            pad,
            out_h: (padded_h - kernel_h) / stride + 1,
            out_w: (padded_w - kernel_w) / stride + 1,
        })
    }

    /// Rows of the im2col matrix: `C·kh·kw`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    /// Columns of the im2col matrix: `out_h·out_w`.
    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source offset in the `[C, H, W]` input for patch row `r` at output
    /// position `(oy, ox)`, or `None` if it falls in the zero padding.
    #[inline]
    fn source(&self, r: usize, oy: usize, ox: usize) -> Option<usize> {
        let c = r / (self.kernel_h * self.kernel_w);
        let ky = (r / self.kernel_w) % self.kernel_h;
        let kx = r % self.kernel_w;
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            None
        } else {
            Some((c * self.height + y as usize) * self.width + x as usize)
        }
    }
}

/// Unrolls receptive fields into columns: output is
/// `[(C·kh·kw) × (out_h·out_w)]`, column `p` holding the patch for output
/// position `p` in row-major order, padding contributing `0.0`.
pub fn im2col(
    input: &Tensor,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let geom = ConvGeometry::new(input.dims3("im2col")?, kernel_h, kernel_w, stride, pad)?;
    let cols = im2col_raw(input.data(), &geom);
    Tensor::new(vec![geom.patch_len(), geom.positions()], cols)
}

pub(crate) fn im2col_raw(input: &[f32], geom: &ConvGeometry) -> Vec<f32> {
    let positions = geom.positions();
    let mut cols = vec![0.0f32; geom.patch_len() * positions];
    for r in 0..geom.patch_len() {
        let row = &mut cols[r * positions..(r + 1) * positions];
        for oy in 0..geom.out_h {
            for ox in 0..geom.out_w {
                if let Some(src) = geom.source(r, oy, ox) {
                    row[oy * geom.out_w + ox] = input[src];
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col_raw`]: scatters column values back onto the input
/// grid, summing overlaps and discarding padding.
pub(crate) fn col2im_raw(cols: &[f32], geom: &ConvGeometry) -> Vec<f32> {
    let positions = geom.positions();
    let mut out = vec![0.0f32; geom.channels * geom.height * geom.width];
    for r in 0..geom.patch_len() {
        let row = &cols[r * positions..(r + 1) * positions];
        for oy in 0..geom.out_h {
            for ox in 0..geom.out_w {
                if let Some(dst) = geom.source(r, oy, ox) {
                    out[dst] += row[oy * geom.out_w + ox];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(shape: &[usize], rng: &mut SplitMix64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
        )
        .unwrap()
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f32> {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0f32;
                for t in 0..k {
                    s += a.data()[i * k + t] * b.data()[t * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::zeros(&[3, 1]).unwrap().reshape(vec![2, 2]).is_err());
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_identity_is_exact() {
        let mut rng = SplitMix64::new(5);
        let a = random(&[4, 6], &mut rng);
        let out = matmul(&a, &Tensor::identity(6).unwrap()).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SplitMix64::new(9);
        let a = random(&[7, 5], &mut rng);
        let b = random(&[5, 3], &mut rng);
        let out = matmul(&a, &b).unwrap();
        assert_eq!(out.shape(), &[7, 3]);
        for (x, y) in out.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((x - y).abs() <= 1e-5 * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[2, 3]).unwrap();
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn im2col_enumerates_patches() {
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let cols = im2col(&x, 2, 2, 1, 0).unwrap();
        assert_eq!(cols.shape(), &[4, 4]);
        let t = transpose(&cols).unwrap();
        assert_eq!(
            t.data(),
            &[1., 2., 4., 5., 2., 3., 5., 6., 4., 5., 7., 8., 5., 6., 8., 9.]
        );
    }

    #[test]
    fn im2col_padding_is_zero() {
        let x = Tensor::new(vec![1, 1, 1], vec![5.0]).unwrap();
        let cols = im2col(&x, 3, 3, 1, 1).unwrap();
        assert_eq!(cols.shape(), &[9, 1]);
        assert_eq!(cols.data(), &[0., 0., 0., 0., 5., 0., 0., 0., 0.]);
    }

    #[test]
    fn im2col_matches_sliding_window() {
        let mut rng = SplitMix64::new(21);
        let x = random(&[3, 8, 8], &mut rng);
        let cols = im2col(&x, 3, 3, 2, 1).unwrap();
        assert_eq!(cols.shape(), &[27, 16]);
        // Direct sliding window over an explicitly padded copy.
        let (h, w, pad) = (8usize, 8usize, 1usize);
        let ph = h + 2 * pad;
        let pw = w + 2 * pad;
        let mut padded = vec![0.0f32; 3 * ph * pw];
        for c in 0..3 {
            for y in 0..h {
                for xx in 0..w {
                    padded[(c * ph + y + pad) * pw + xx + pad] = x.data()[(c * h + y) * w + xx];
                }
            }
        }
        for oy in 0..4 {
            for ox in 0..4 {
                let p = oy * 4 + ox;
                let mut r = 0;
                for c in 0..3 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let v = padded[(c * ph + oy * 2 + ky) * pw + ox * 2 + kx];
                            assert_eq!(cols.data()[r * 16 + p], v);
                            r += 1;
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn im2col_rejects_oversized_kernel() {
        let x = Tensor::zeros(&[1, 2, 2]).unwrap();
        assert!(matches!(im2col(&x, 3, 3, 1, 0), Err(Error::Shape(_))));
        assert!(matches!(im2col(&x, 1, 1, 0, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let mut rng = SplitMix64::new(33);
        let x = random(&[2, 5, 6], &mut rng);
        let geom = ConvGeometry::new((2, 5, 6), 3, 3, 2, 1).unwrap();
        let y: Vec<f32> = (0..geom.patch_len() * geom.positions())
            .map(|_| rng.uniform(-1.0, 1.0) as f32)
            .collect();
        let lhs: f64 = im2col_raw(x.data(), &geom)
            .iter()
            .zip(&y)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        let rhs: f64 = x
            .data()
            .iter()
            .zip(col2im_raw(&y, &geom))
            .map(|(a, b)| *a as f64 * b as f64)
            .sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }
}
