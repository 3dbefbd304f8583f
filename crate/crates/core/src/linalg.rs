//! Thin safe wrappers over `matrixmultiply::dgemm` for row-major buffers.

/// Strided matrix view over a slice.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> View<'a> {
    /// Dense row-major `rows × cols`.
    pub(crate) fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub(crate) fn strided(data: &'a [f64], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        assert!(extent(rows, cols, rs, cs) <= data.len(), "view larger than buffer");
        Self {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub(crate) fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    /// Columns `start..start + width` of this view.
    pub(crate) fn cols(self, start: usize, width: usize) -> Self {
        assert!(start + width <= self.cols);
        let off = if width == 0 { 0 } else { start * self.cs };
        Self::strided(&self.data[off..], self.rows, width, self.rs, self.cs)
    }

    /// Rows `start..start + count` of this view.
    #[cfg(test)]
    pub(crate) fn rows(self, start: usize, count: usize) -> Self {
        assert!(start + count <= self.rows);
        let off = if count == 0 { 0 } else { start * self.rs };
        Self::strided(&self.data[off..], count, self.cols, self.rs, self.cs)
    }
}

/// Mutable row-major view with a row stride (unit column stride).
pub(crate) struct ViewMut<'a> {
    data: &'a mut [f64],
    rows: usize,
    cols: usize,
    rs: usize,
}

impl<'a> ViewMut<'a> {
    pub(crate) fn new(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols)
    }

    pub(crate) fn strided(data: &'a mut [f64], rows: usize, cols: usize, rs: usize) -> Self {
        assert!(extent(rows, cols, rs, 1) <= data.len(), "view larger than buffer");
        Self {
            data,
            rows,
            cols,
            rs,
        }
    }
}

fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// `c = alpha · a · b + beta · c` where `c` is dense row-major `m × n`.
pub(crate) fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64]) {
    let (m, n) = (a.rows, b.cols);
    gemm_into(alpha, a, b, beta, ViewMut::new(c, m, n));
}

/// `c = alpha · a · b + beta · c` for a strided output.
pub(crate) fn gemm_into(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: ViewMut<'_>) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "inner dimensions differ");
    assert_eq!((c.rows, c.cols), (m, n), "output shape differs");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for x in c.data[i * c.rs..i * c.rs + n].iter_mut() {
                *x *= beta;
            }
        }
        return;
    }
    // SAFETY: every view was checked on construction to address only
    // elements inside its slice, and `c` is a unique borrow so it cannot alias
    // `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            1,
        );
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(|x| x as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|x| (x as f64) * 0.5).collect(); // 3x4
        let mut c = vec![1.0; 8];
        gemm(1.0, View::new(&a, 2, 3), View::new(&b, 3, 4), 0.0, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let e: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], e);
            }
        }
        // aᵀ·a is 3x3
        let mut g = vec![0.0; 9];
        gemm(1.0, View::new(&a, 2, 3).t(), View::new(&a, 2, 3), 0.0, &mut g);
        assert_eq!(g[0], 0.0 * 0.0 + 3.0 * 3.0);
        assert_eq!(g[4], 1.0 + 16.0);
    }

    #[test]
    fn strided_column_blocks() {
        // 3x4 matrix, multiply columns 1..3 by a 2x2 identity into columns 2..4
        let a: Vec<f64> = (0..12).map(|x| x as f64).collect();
        let eye = [1.0, 0.0, 0.0, 1.0];
        let mut c = [0.0; 12];
        gemm_into(
            1.0,
            View::new(&a, 3, 4).cols(1, 2),
            View::new(&eye, 2, 2),
            0.0,
            ViewMut::strided(&mut c[2..], 3, 2, 4),
        );
        for i in 0..3 {
            assert_eq!(c[i * 4 + 2], a[i * 4 + 1]);
            assert_eq!(c[i * 4 + 3], a[i * 4 + 2]);
            assert_eq!(c[i * 4], 0.0);
        }
        let r = View::new(&a, 3, 4).rows(1, 2).t();
        let mut o = [0.0; 8];
        gemm(1.0, r, View::new(&[1.0, 1.0], 2, 1), 0.0, &mut o[..4]);
        assert_eq!(&o[..4], &[4.0 + 8.0, 5.0 + 9.0, 6.0 + 10.0, 7.0 + 11.0]);
    }
}
