//! Deterministic dense kernels shared by the tape ops.

/// Strided view of a row-major matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    /// `rows × cols` matrix stored row-major.
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn max_index(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return 0;
        }
        (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
    }
}

/// `c (m×n, row-major) = a (m×k) · b (k×n) + beta · c`.
///
/// Single-threaded and therefore bit-reproducible for identical inputs.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_>,
    b: MatRef<'_>,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "gemm output too small");
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    assert!(a.max_index(m, k) < a.data.len(), "gemm lhs out of bounds");
    assert!(b.max_index(k, n) < b.data.len(), "gemm rhs out of bounds");
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the borrowed slices, and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a valid (unpadded) 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Number of columns of the im2col matrix (all batch positions).
    pub fn columns(&self) -> usize {
        self.batch * self.positions()
    }
}

/// Unfold `x` (`[batch, c_in, h, w]`) into a `[patch, batch·positions]` matrix.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ncols = g.columns();
    let p = g.positions();
    let mut cols = vec![0.0; g.patch() * ncols];
    for c in 0..g.c_in {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let out_row = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let plane = &x[(b * g.c_in + c) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..g.oh {
                        let src = &plane[(oy * g.stride + i) * g.w..];
                        let dst = &mut out_row[b * p + oy * g.ow..][..g.ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            *d = src[ox * g.stride + j];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add a column matrix back onto the input grid.
pub(crate) fn col2im_add(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let ncols = g.columns();
    let p = g.positions();
    for c in 0..g.c_in {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let in_row = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let plane = &mut dx[(b * g.c_in + c) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..g.oh {
                        let src = &in_row[b * p + oy * g.ow..][..g.ow];
                        let dst = &mut plane[(oy * g.stride + i) * g.w..];
                        for (ox, s) in src.iter().enumerate() {
                            dst[ox * g.stride + j] += *s;
                        }
                    }
                }
            }
        }
    }
}
