//! Strided matrix multiply backed by `matrixmultiply`.

/// A read-only strided matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// Same storage, transposed view.
    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn max_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// `c = a·b + (accumulate ? c : 0)`, where `c` is a strided `a.rows × b.cols` block.
pub(crate) fn gemm(a: MatRef, b: MatRef, c: &mut [f64], rsc: usize, csc: usize, accumulate: bool) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "gemm inner extents");
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.data.len() > a.max_index() || k == 0, "gemm lhs out of bounds");
    assert!(b.data.len() > b.max_index() || k == 0, "gemm rhs out of bounds");
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc, "gemm output out of bounds");
    if k == 0 {
        if !accumulate {
            for i in 0..m {
                for j in 0..n {
                    c[i * rsc + j * csc] = 0.0;
                }
            }
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: every index touched by dgemm is bounded by the asserts above, and
    // `c` is uniquely borrowed so the output cannot alias either input.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_views_match_naive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.5, -1.0, 2.0, 0.0, 1.0]; // 3x2
        let mut c = [0.0; 4];
        gemm(MatRef::row_major(&a, 2, 3), MatRef::row_major(&b, 3, 2), &mut c, 2, 1, false);
        assert_eq!(c, [1.0 - 2.0 + 0.0, 0.5 + 4.0 + 3.0, 4.0 - 5.0 + 0.0, 2.0 + 10.0 + 6.0]);
        // aᵀ·a is 3x3 and symmetric
        let mut s = [0.0; 9];
        let av = MatRef::row_major(&a, 2, 3);
        gemm(av.t(), av, &mut s, 3, 1, false);
        assert_eq!(s[1], s[3]);
        assert_eq!(s[0], 1.0 + 16.0);
    }
}
