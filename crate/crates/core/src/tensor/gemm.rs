use super::Element;

/// Strided read-only view of a row-major or transposed matrix.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// `rows × cols` row-major.
    pub fn rows(data: &'a [T], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transpose of a row-major `rows × cols` buffer, seen as `cols × rows`.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }

    pub fn strided(data: &'a [T], row_stride: usize, col_stride: usize) -> Self {
        MatRef {
            data,
            row_stride,
            col_stride,
        }
    }

    fn max_index(&self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
    }
}

/// `c (m×n, row-major) = a (m×k) · b (k×n)`, adding into `c` when `accumulate`.
pub fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    c: &mut [T],
    accumulate: bool,
) {
    gemm_strided(m, k, n, a, b, c, n, 1, accumulate)
}

/// [`gemm`] with an explicitly strided output.
#[allow(clippy::too_many_arguments)]
pub fn gemm_strided<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    c: &mut [T],
    c_row_stride: usize,
    c_col_stride: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(
        (m - 1) * c_row_stride + (n - 1) * c_col_stride < c.len(),
        "gemm output out of bounds"
    );
    if k == 0 {
        if !accumulate {
            for i in 0..m {
                for j in 0..n {
                    c[i * c_row_stride + j * c_col_stride] = T::zero();
                }
            }
        }
        return;
    }
    assert!(a.max_index(m, k) < a.data.len(), "gemm lhs out of bounds");
    assert!(b.max_index(k, n) < b.data.len(), "gemm rhs out of bounds");
    T::gemm_raw(m, k, n, a, b, c, (c_row_stride, c_col_stride), accumulate);
}

impl Element for f32 {
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: MatRef<'_, f32>,
        b: MatRef<'_, f32>,
        c: &mut [f32],
        c_strides: (usize, usize),
        accumulate: bool,
    ) {
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: bounds of a, b and c were checked by `gemm`.
        unsafe {
            matrixmultiply::sgemm(
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
                c_strides.0 as isize,
                c_strides.1 as isize,
            );
        }
    }
}

impl Element for f64 {
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: MatRef<'_, f64>,
        b: MatRef<'_, f64>,
        c: &mut [f64],
        c_strides: (usize, usize),
        accumulate: bool,
    ) {
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: bounds of a, b and c were checked by `gemm`.
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
                c_strides.0 as isize,
                c_strides.1 as isize,
            );
        }
    }
}
