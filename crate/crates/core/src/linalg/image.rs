//! Images, convolution kernels, zero-padded 2D convolution and translation.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// A `m1 x m2` image of 64-bit floats (rows are the first index).
///
/// Flattening uses the column-stacked convention: `to_flat` scans column by
/// column, so `from_flat(to_flat(x))` is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array2<f64>,
}

impl Image {
    /// Builds an image from row-major pixel values.
    pub fn from_pixels(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::DimensionMismatch {
                context: "Image::from_pixels",
                expected: height * width,
                got: pixels.len(),
            });
        }
        let data = Array2::from_shape_vec((height, width), pixels)
            .expect("shape already validated");
        Self::from_array(data)
    }

    pub fn from_array(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidInput(
                "image dimensions must be positive".to_string(),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(
                "image pixels must be finite".to_string(),
            ));
        }
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self {
            data: Array2::zeros((height, width)),
        }
    }

    /// Rebuilds an image from its column-stacked flat form.
    pub fn from_flat(height: usize, width: usize, flat: ArrayView1<f64>) -> Result<Self> {
        if flat.len() != height * width {
            return Err(Error::DimensionMismatch {
                context: "Image::from_flat",
                expected: height * width,
                got: flat.len(),
            });
        }
        let mut data = Array2::zeros((height, width));
        for j in 0..width {
            for i in 0..height {
                data[[i, j]] = flat[j * height + i];
            }
        }
        Self::from_array(data)
    }

    /// Column-stacked flat form: entry `j*m1 + i` holds pixel `(i, j)`.
    pub fn to_flat(&self) -> Array1<f64> {
        let (h, w) = (self.height(), self.width());
        let mut out = Array1::zeros(h * w);
        for j in 0..w {
            for i in 0..h {
                out[j * h + i] = self.data[[i, j]];
            }
        }
        out
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[[i, j]]
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Index geometry of a `h1 x h2` convolution kernel.
///
/// Offsets along axis `i` run from `-r_i` to `r_i + delta_i` inclusive, with
/// `r_i = floor((h_i - 1) / 2)` and `delta_i = 0` for odd `h_i`, `1` otherwise.
/// Offset `(0, 0)` is the kernel center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelGeometry {
    pub h1: usize,
    pub h2: usize,
    pub r1: usize,
    pub r2: usize,
    pub delta1: usize,
    pub delta2: usize,
}

impl KernelGeometry {
    pub fn from_dims(h1: usize, h2: usize) -> Result<Self> {
        if h1 == 0 || h2 == 0 {
            return Err(Error::InvalidInput(
                "kernel dimensions must be positive".to_string(),
            ));
        }
        Ok(Self {
            h1,
            h2,
            r1: (h1 - 1) / 2,
            r2: (h2 - 1) / 2,
            delta1: 1 - h1 % 2,
            delta2: 1 - h2 % 2,
        })
    }

    pub fn for_kernel(kernel: &Image) -> Self {
        Self::from_dims(kernel.height(), kernel.width())
            .expect("image dimensions are positive by construction")
    }

    /// Inclusive offset range along the row axis.
    pub fn row_offsets(&self) -> (isize, isize) {
        (-(self.r1 as isize), (self.r1 + self.delta1) as isize)
    }

    /// Inclusive offset range along the column axis.
    pub fn col_offsets(&self) -> (isize, isize) {
        (-(self.r2 as isize), (self.r2 + self.delta2) as isize)
    }
}

/// Zero-padded 2D convolution: `out(n1, n2) = Σ κ(k1, k2) x(n1-k1, n2-k2)` with
/// the sum over the kernel's offset range and `x` treated as zero outside its
/// bounds. The output has the dimensions of `x`.
pub fn conv2d(kernel: &Image, x: &Image) -> Image {
    let geom = KernelGeometry::for_kernel(kernel);
    let (m1, m2) = (x.height() as isize, x.width() as isize);
    let mut out = Array2::<f64>::zeros((x.height(), x.width()));
    let x_arr = x.array();
    for kr in 0..kernel.height() {
        let k1 = kr as isize - geom.r1 as isize;
        let n1_lo = k1.max(0);
        let n1_hi = (m1 + k1).min(m1);
        for kc in 0..kernel.width() {
            let w = kernel.get(kr, kc);
            if w == 0.0 {
                continue;
            }
            let k2 = kc as isize - geom.r2 as isize;
            let n2_lo = k2.max(0);
            let n2_hi = (m2 + k2).min(m2);
            if n2_lo >= n2_hi {
                continue;
            }
            for n1 in n1_lo..n1_hi {
                let src_row = x_arr.row((n1 - k1) as usize);
                let src = src_row.to_slice().expect("row-major rows are contiguous");
                let mut dst_row = out.row_mut(n1 as usize);
                let dst = dst_row
                    .as_slice_mut()
                    .expect("row-major rows are contiguous");
                let dst_seg = &mut dst[n2_lo as usize..n2_hi as usize];
                let src_seg = &src[(n2_lo - k2) as usize..(n2_hi - k2) as usize];
                for (d, s) in dst_seg.iter_mut().zip(src_seg) {
                    *d += w * *s;
                }
            }
        }
    }
    Image { data: out }
}

/// Translation by `a1` pixels along rows and `a2` along columns:
/// `out(i, j) = x(i + a1, j + a2)` when in bounds, 0 otherwise.
pub fn translate(x: &Image, a1: isize, a2: isize) -> Image {
    let (m1, m2) = (x.height() as isize, x.width() as isize);
    let mut out = Array2::<f64>::zeros((x.height(), x.width()));
    let i_lo = (-a1).max(0);
    let i_hi = (m1 - a1).min(m1);
    let j_lo = (-a2).max(0);
    let j_hi = (m2 - a2).min(m2);
    for i in i_lo..i_hi {
        for j in j_lo..j_hi {
            out[[i as usize, j as usize]] = x.get((i + a1) as usize, (j + a2) as usize);
        }
    }
    Image { data: out }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image {
        Image::from_pixels(h, w, (0..h * w).map(|v| v as f64).collect()).unwrap()
    }

    fn delta_kernel(h: usize, w: usize, value: f64) -> Image {
        let geom = KernelGeometry::from_dims(h, w).unwrap();
        let mut pixels = vec![0.0; h * w];
        pixels[geom.r1 * w + geom.r2] = value;
        Image::from_pixels(h, w, pixels).unwrap()
    }

    #[test]
    fn geometry_covers_kernel_dims() {
        for (h1, h2) in [(1, 1), (3, 3), (4, 4), (5, 2), (28, 28), (13, 7)] {
            let g = KernelGeometry::from_dims(h1, h2).unwrap();
            let (lo1, hi1) = g.row_offsets();
            let (lo2, hi2) = g.col_offsets();
            assert_eq!((hi1 - lo1 + 1) as usize, h1);
            assert_eq!((hi2 - lo2 + 1) as usize, h2);
        }
    }

    #[test]
    fn flat_round_trip_is_lossless() {
        let x = ramp(3, 4);
        let back = Image::from_flat(3, 4, x.to_flat().view()).unwrap();
        assert_eq!(x, back);
        // Column-stacked layout: entry 1 of the flat form is pixel (1, 0).
        assert_eq!(x.to_flat()[1], x.get(1, 0));
    }

    #[test]
    fn conv_with_centered_delta_is_identity() {
        let x = ramp(4, 5);
        let out = conv2d(&delta_kernel(3, 3, 1.0), &x);
        assert_eq!(out, x);
        // Scaled delta is exact multiplication.
        let out = conv2d(&delta_kernel(5, 5, 0.25), &x);
        for i in 0..4 {
            for j in 0..5 {
                assert_eq!(out.get(i, j), 0.25 * x.get(i, j));
            }
        }
    }

    #[test]
    fn conv_with_offset_entry_shifts() {
        // kernel entry at offset (1, 0): out(n1, n2) = x(n1 - 1, n2).
        let mut pixels = vec![0.0; 9];
        pixels[2 * 3 + 1] = 1.0; // row offset +1, col offset 0
        let kernel = Image::from_pixels(3, 3, pixels).unwrap();
        let x = ramp(3, 3);
        let out = conv2d(&kernel, &x);
        for j in 0..3 {
            assert_eq!(out.get(0, j), 0.0);
            assert_eq!(out.get(1, j), x.get(0, j));
            assert_eq!(out.get(2, j), x.get(1, j));
        }
    }

    #[test]
    fn conv_all_ones_counts_overlap() {
        let kernel = Image::from_pixels(3, 3, vec![1.0; 9]).unwrap();
        let x = Image::from_pixels(2, 2, vec![1.0; 4]).unwrap();
        let out = conv2d(&kernel, &x);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(out.get(i, j), 4.0);
            }
        }
    }

    #[test]
    fn conv_matches_direct_double_sum() {
        // Independent oracle: literal double sum over the kernel index range.
        let kernel = Image::from_pixels(
            2,
            3,
            vec![0.5, -1.0, 0.25, 2.0, 0.0, -0.75],
        )
        .unwrap();
        let x = ramp(4, 4);
        let geom = KernelGeometry::for_kernel(&kernel);
        let out = conv2d(&kernel, &x);
        for n1 in 0..4_isize {
            for n2 in 0..4_isize {
                let mut acc = 0.0;
                let (lo1, hi1) = geom.row_offsets();
                let (lo2, hi2) = geom.col_offsets();
                for k1 in lo1..=hi1 {
                    for k2 in lo2..=hi2 {
                        let (i, j) = (n1 - k1, n2 - k2);
                        if i >= 0 && i < 4 && j >= 0 && j < 4 {
                            acc += kernel.get((k1 + geom.r1 as isize) as usize,
                                              (k2 + geom.r2 as isize) as usize)
                                * x.get(i as usize, j as usize);
                        }
                    }
                }
                let got = out.get(n1 as usize, n2 as usize);
                assert!((got - acc).abs() <= 1e-12, "({n1},{n2}): {got} vs {acc}");
            }
        }
    }

    #[test]
    fn translate_basics() {
        let x = ramp(3, 3);
        assert_eq!(translate(&x, 0, 0), x);
        assert_eq!(translate(&x, 3, 0), Image::zeros(3, 3));
        assert_eq!(translate(&x, -4, 0), Image::zeros(3, 3));

        let shifted = translate(&x, 1, 0);
        for j in 0..3 {
            assert_eq!(shifted.get(0, j), x.get(1, j));
            assert_eq!(shifted.get(1, j), x.get(2, j));
            assert_eq!(shifted.get(2, j), 0.0);
        }
    }
}
