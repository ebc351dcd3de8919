//! Strided matrix view and a bounds-checked wrapper over `matrixmultiply`.

/// Row-major-with-strides view description of an `rows x cols` matrix
/// stored at `offset` inside a slice.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    pub fn dense(offset: usize, rows: usize, cols: usize) -> Self {
        Self { offset, rows, cols, rs: cols, cs: 1 }
    }

    pub fn strided(offset: usize, rows: usize, cols: usize, rs: usize) -> Self {
        Self { offset, rows, cols, rs, cs: 1 }
    }

    /// Same storage read as its transpose.
    pub fn t(self) -> Self {
        Self { offset: self.offset, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            self.offset
        } else {
            self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// `c = alpha * a * b + beta * c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    alpha: f64,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    beta: f64,
    c: &mut [f64],
    lc: Layout,
) {
    assert_eq!(la.cols, lb.rows, "inner dimensions");
    assert_eq!(la.rows, lc.rows, "output rows");
    assert_eq!(lb.cols, lc.cols, "output cols");
    if lc.rows == 0 || lc.cols == 0 {
        return;
    }
    assert!(la.cols == 0 || la.last_index() < a.len(), "lhs out of bounds");
    assert!(la.cols == 0 || lb.last_index() < b.len(), "rhs out of bounds");
    assert!(lc.last_index() < c.len(), "output out of bounds");
    if la.cols == 0 {
        c_scale(beta, c, lc);
        return;
    }
    // SAFETY: every element addressed by the three layouts lies inside its
    // slice (checked above) and `c` is borrowed mutably, so it cannot alias
    // `a` or `b`. Output rows/cols never overlap because callers only pass
    // layouts with rs >= cols * cs.
    unsafe {
        matrixmultiply::dgemm(
            lc.rows,
            la.cols,
            lc.cols,
            alpha,
            a.as_ptr().add(la.offset),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr().add(lb.offset),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr().add(lc.offset),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}

fn c_scale(beta: f64, c: &mut [f64], lc: Layout) {
    for i in 0..lc.rows {
        for j in 0..lc.cols {
            let v = &mut c[lc.offset + i * lc.rs + j * lc.cs];
            *v = if beta == 0.0 { 0.0 } else { *v * beta };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_product_with_strides() {
        // a: 2x3 stored with row stride 4; b: 3x2 read transposed from 2x3
        let a = [1.0, 2.0, 3.0, 99.0, 4.0, 5.0, 6.0, 99.0];
        let bt = [1.0, 0.0, 2.0, -1.0, 3.0, 1.0];
        let mut c = [10.0; 4];
        gemm(
            1.0,
            &a,
            Layout::strided(0, 2, 3, 4),
            &bt,
            Layout::dense(0, 2, 3).t(),
            1.0,
            &mut c,
            Layout::dense(0, 2, 2),
        );
        // a * b where b = bt^T = [[1,-1],[0,3],[2,1]]
        assert_eq!(c, [10.0 + 7.0, 10.0 + 8.0, 10.0 + 16.0, 10.0 + 17.0]);
    }
}
