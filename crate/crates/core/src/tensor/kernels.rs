//! Raw loops behind the tape ops. Everything here works on flat slices.

#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

impl<'a> Mat<'a> {
    pub(crate) fn row_major(data: &'a [f64], cols: usize) -> Self {
        Mat {
            data,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Same storage viewed as its transpose.
    pub(crate) fn t(self) -> Self {
        Mat {
            data: self.data,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn span(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return 0;
        }
        ((rows - 1) as isize * self.rs + (cols - 1) as isize * self.cs) as usize + 1
    }
}

/// `c (m×n, row-major) = a·b` or `c += a·b` when `accumulate`.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: Mat<'_>,
    b: Mat<'_>,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.span(m, k) <= a.data.len(), "gemm: lhs too short");
    assert!(b.span(k, n) <= b.data.len(), "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the spans of all three operands were checked above against
    // the slice lengths, and `c` does not alias `a` or `b` (it is `&mut`).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub t: usize,
    pub v: usize,
    pub kt: usize,
    pub kv: usize,
    pub stride_t: usize,
    pub pad_t: usize,
    pub pad_v: usize,
    pub t_out: usize,
    pub v_out: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.c * self.kt * self.kv
    }

    pub fn col_cols(&self) -> usize {
        self.t_out * self.v_out
    }

    /// 1×1 kernel, unit stride, no padding: the input already is its column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kt == 1 && self.kv == 1 && self.stride_t == 1 && self.pad_t == 0 && self.pad_v == 0
    }
}

/// Unfolds one sample (C×T×V) into a (C·kt·kv)×(T'·V') column matrix.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let ncols = g.col_cols();
    for c in 0..g.c {
        let plane = &x[c * g.t * g.v..(c + 1) * g.t * g.v];
        for i in 0..g.kt {
            for j in 0..g.kv {
                let row = (c * g.kt + i) * g.kv + j;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for to in 0..g.t_out {
                    let ti = (to * g.stride_t + i) as isize - g.pad_t as isize;
                    let line = &mut dst[to * g.v_out..(to + 1) * g.v_out];
                    if ti < 0 || ti >= g.t as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[ti as usize * g.v..(ti as usize + 1) * g.v];
                    for (vo, out) in line.iter_mut().enumerate() {
                        let vi = (vo + j) as isize - g.pad_v as isize;
                        *out = if vi < 0 || vi >= g.v as isize {
                            0.0
                        } else {
                            src[vi as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the sample.
pub(crate) fn col2im_add(cols: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let ncols = g.col_cols();
    for c in 0..g.c {
        let plane = &mut x[c * g.t * g.v..(c + 1) * g.t * g.v];
        for i in 0..g.kt {
            for j in 0..g.kv {
                let row = (c * g.kt + i) * g.kv + j;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for to in 0..g.t_out {
                    let ti = (to * g.stride_t + i) as isize - g.pad_t as isize;
                    if ti < 0 || ti >= g.t as isize {
                        continue;
                    }
                    let dst = &mut plane[ti as usize * g.v..(ti as usize + 1) * g.v];
                    for vo in 0..g.v_out {
                        let vi = (vo + j) as isize - g.pad_v as isize;
                        if vi >= 0 && vi < g.v as isize {
                            dst[vi as usize] += src[to * g.v_out + vo];
                        }
                    }
                }
            }
        }
    }
}
