use super::{NumResult, NumericsError, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Array<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Array<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Array {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: F) -> Self {
        Array {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> NumResult<Self> {
        if data.len() != rows * cols {
            return Err(NumericsError::Invalid(format!(
                "{} values do not fill a {rows}×{cols} array",
                data.len()
            )));
        }
        Ok(Array { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Array { rows, cols, data }
    }

    pub fn scalar(value: F) -> Self {
        Array {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn row_vector(data: Vec<F>) -> Self {
        Array {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { F::one() } else { F::zero() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The value of a `1 × 1` array.
    pub fn item(&self) -> F {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn sq_norm(&self) -> F {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn add_assign(&mut self, other: &Array<F>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, s: F) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Array<F> {
        Array {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<G: Scalar>(&self) -> Array<G> {
        Array {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| G::lit(x.as_f64())).collect(),
        }
    }

    pub fn transpose(&self) -> Array<F> {
        Array::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn view(&self) -> MatRef<'_, F> {
        MatRef::new(&self.data, self.rows, self.cols)
    }

    pub fn view_mut(&mut self) -> MatMut<'_, F> {
        MatMut::new(&mut self.data, self.rows, self.cols)
    }

    /// `self @ other`.
    pub fn matmul(&self, other: &Array<F>) -> NumResult<Array<F>> {
        if self.cols != other.rows {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Array::zeros(self.rows, other.cols);
        gemm(
            F::one(),
            self.view(),
            other.view(),
            F::zero(),
            out.view_mut(),
        );
        Ok(out)
    }
}

/// Read-only strided matrix view.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, F> {
    data: &'a [F],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, F: Scalar> MatRef<'a, F> {
    pub fn new(data: &'a [F], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols, "view exceeds buffer");
        MatRef {
            data,
            offset: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn t(self) -> Self {
        MatRef {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    /// Columns `start..start + len`.
    pub fn col_block(self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.cols);
        MatRef {
            offset: self.offset + start * self.cs,
            cols: len,
            ..self
        }
    }

    /// Rows `start..start + len`.
    pub fn row_block(self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.rows);
        MatRef {
            offset: self.offset + start * self.rs,
            rows: len,
            ..self
        }
    }

    pub fn at(&self, r: usize, c: usize) -> F {
        self.data[self.offset + r * self.rs + c * self.cs]
    }

    fn check_bounds(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "strided view out of bounds");
        }
    }
}

/// Mutable strided matrix view.
#[derive(Debug)]
pub struct MatMut<'a, F> {
    data: &'a mut [F],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, F: Scalar> MatMut<'a, F> {
    pub fn new(data: &'a mut [F], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols, "view exceeds buffer");
        MatMut {
            data,
            offset: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn col_block(self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.cols);
        MatMut {
            offset: self.offset + start * self.cs,
            cols: len,
            ..self
        }
    }

    pub fn row_block(self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.rows);
        MatMut {
            offset: self.offset + start * self.rs,
            rows: len,
            ..self
        }
    }

    pub fn t(self) -> Self {
        MatMut {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn check_bounds(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "strided view out of bounds");
        }
    }
}

/// `C ← α·A·B + β·C` on strided views. When `β = 0`, `C` need not be initialized.
pub fn gemm<F: Scalar>(alpha: F, a: MatRef<'_, F>, b: MatRef<'_, F>, beta: F, c: MatMut<'_, F>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "gemm output shape");
    a.check_bounds();
    b.check_bounds();
    c.check_bounds();
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    if a.rows <= 2 || b.cols <= 2 {
        gemm_thin(alpha, a, b, beta, c);
        return;
    }
    // SAFETY: all three views were bounds-checked above and `c` is a unique
    // borrow, so it cannot alias `a` or `b`.
    unsafe {
        F::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let x = Array::<f64>::from_fn(3, 4, |r, c| (r * 4 + c) as f64 - 5.0);
        assert_eq!(x.matmul(&Array::identity(4)).unwrap(), x);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Array::<f32>::zeros(2, 3)
            .matmul(&Array::zeros(2, 3))
            .unwrap_err();
        assert_eq!(err.to_string(), "matmul: shape mismatch [2, 3] vs [2, 3]");
    }

    #[test]
    fn strided_blocks_and_transpose() {
        let a = Array::<f64>::from_fn(2, 6, |r, c| (r * 6 + c) as f64);
        let b = Array::<f64>::from_fn(2, 6, |r, c| (r + c) as f64);
        // columns 2..5 of a, times (columns 2..5 of b)^T
        let mut out = Array::<f64>::zeros(2, 2);
        gemm(
            1.0,
            a.view().col_block(2, 3),
            b.view().col_block(2, 3).t(),
            0.0,
            out.view_mut(),
        );
        for i in 0..2 {
            for j in 0..2 {
                let expect: f64 = (2..5).map(|c| a.get(i, c) * b.get(j, c)).sum();
                assert_eq!(out.get(i, j), expect);
            }
        }
    }
}

/// Direct loops for matrix-vector shaped products, where packing overhead
/// would dominate.
fn gemm_thin<F: Scalar>(alpha: F, a: MatRef<'_, F>, b: MatRef<'_, F>, beta: F, c: MatMut<'_, F>) {
    let (m, kk, n) = (a.rows, a.cols, b.cols);
    let mut acc = vec![F::zero(); n];
    for i in 0..m {
        if a.cs == 1 && b.rs == 1 {
            let ar = &a.data[a.offset + i * a.rs..a.offset + i * a.rs + kk];
            for (j, x) in acc.iter_mut().enumerate() {
                let start = b.offset + j * b.cs;
                *x = ar.iter().zip(&b.data[start..start + kk]).map(|(&p, &q)| p * q).sum();
            }
        } else {
            acc.fill(F::zero());
            for k in 0..kk {
                let aik = a.at(i, k);
                if b.cs == 1 {
                    let start = b.offset + k * b.rs;
                    for (x, &bv) in acc.iter_mut().zip(&b.data[start..start + n]) {
                        *x += aik * bv;
                    }
                } else {
                    for (j, x) in acc.iter_mut().enumerate() {
                        *x += aik * b.at(k, j);
                    }
                }
            }
        }
        for (j, &x) in acc.iter().enumerate() {
            let idx = c.offset + i * c.rs + j * c.cs;
            c.data[idx] = if beta == F::zero() {
                alpha * x
            } else {
                alpha * x + beta * c.data[idx]
            };
        }
    }
}
