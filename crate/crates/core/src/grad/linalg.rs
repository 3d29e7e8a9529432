//! Dense kernels shared by the built-in ops: GEMM and the im2col/col2im
//! pair that turns convolutions into matrix products.

/// `c = a · b + beta · c` for row-major operands, optionally reading `a`
/// and/or `b` transposed. Logical shapes are `a: m×k`, `b: k×n`, `c: m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above pin every buffer to exactly the extent the
    // strides address, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2D sliding window over a `[channels, height, width]` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Unfold `image` into a `[C·K·K, Hout·Wout]` matrix.
pub(crate) fn im2col(image: &[f64], w: Window) -> Vec<f64> {
    let (oh, ow) = (w.out_height(), w.out_width());
    let mut cols = vec![0.0; w.col_rows() * oh * ow];
    for c in 0..w.channels {
        let plane = &image[c * w.height * w.width..(c + 1) * w.height * w.width];
        for ky in 0..w.kernel {
            for kx in 0..w.kernel {
                let row = (c * w.kernel + ky) * w.kernel + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * w.stride + ky) as isize - w.pad as isize;
                    if iy < 0 || iy >= w.height as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w.width..(iy as usize + 1) * w.width];
                    for ox in 0..ow {
                        let ix = (ox * w.stride + kx) as isize - w.pad as isize;
                        if ix >= 0 && ix < w.width as isize {
                            dst[oy * ow + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image buffer.
pub(crate) fn col2im(cols: &[f64], w: Window) -> Vec<f64> {
    let (oh, ow) = (w.out_height(), w.out_width());
    let mut image = vec![0.0; w.channels * w.height * w.width];
    for c in 0..w.channels {
        let plane = &mut image[c * w.height * w.width..(c + 1) * w.height * w.width];
        for ky in 0..w.kernel {
            for kx in 0..w.kernel {
                let row = (c * w.kernel + ky) * w.kernel + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * w.stride + ky) as isize - w.pad as isize;
                    if iy < 0 || iy >= w.height as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w.width..(iy as usize + 1) * w.width];
                    for ox in 0..ow {
                        let ix = (ox * w.stride + kx) as isize - w.pad as isize;
                        if ix >= 0 && ix < w.width as isize {
                            dst_row[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    image
}
