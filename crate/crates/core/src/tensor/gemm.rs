//! Batched dense matrix products on top of `matrixmultiply`.

/// A row-major matrix operand, optionally a stack of `batch` matrices.
///
/// `batch == 1` marks an operand shared across the whole batch. `trans`
/// reads the stored `rows x cols` matrix as its transpose.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub batch: usize,
    pub rows: usize,
    pub cols: usize,
    pub trans: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], batch: usize, rows: usize, cols: usize) -> Self {
        Self {
            data,
            batch,
            rows,
            cols,
            trans: false,
        }
    }

    pub fn t(mut self) -> Self {
        self.trans = !self.trans;
        self
    }

    fn op_rows(&self) -> usize {
        if self.trans {
            self.cols
        } else {
            self.rows
        }
    }

    fn op_cols(&self) -> usize {
        if self.trans {
            self.rows
        } else {
            self.cols
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.trans {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }

    fn slice(&self, i: usize) -> &'a [f64] {
        let size = self.rows * self.cols;
        let i = if self.batch == 1 { 0 } else { i };
        &self.data[i * size..(i + 1) * size]
    }
}

/// `out[i] (+)= op(a[i]) * op(b[i])` over the broadcast batch.
///
/// When `out_batch == 1` and the operands are batched, the products are
/// summed into the single output matrix; this is how gradients of shared
/// operands are reduced.
pub(crate) fn batched_gemm(a: MatRef, b: MatRef, out: &mut [f64], out_batch: usize, accumulate: bool) {
    let (m, k, n) = (a.op_rows(), a.op_cols(), b.op_cols());
    assert_eq!(k, b.op_rows(), "inner extents");
    let steps = a.batch.max(b.batch);
    assert!(a.batch == 1 || a.batch == steps);
    assert!(b.batch == 1 || b.batch == steps);
    assert!(out_batch == 1 || out_batch == steps);
    assert_eq!(out.len(), out_batch * m * n);
    assert_eq!(a.data.len(), a.batch * a.rows * a.cols);
    assert_eq!(b.data.len(), b.batch * b.rows * b.cols);

    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    for i in 0..steps {
        let oi = if out_batch == 1 { 0 } else { i };
        let beta = if accumulate || (out_batch == 1 && i > 0) {
            1.0
        } else {
            0.0
        };
        let c = &mut out[oi * m * n..(oi + 1) * m * n];
        if k == 0 {
            if beta == 0.0 {
                c.fill(0.0);
            }
            continue;
        }
        let (sa, sb) = (a.slice(i), b.slice(i));
        // SAFETY: the asserts above pin every slice length to the extents
        // and strides handed to dgemm, so all reads and writes are in bounds.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                sa.as_ptr(),
                rsa,
                csa,
                sb.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}
