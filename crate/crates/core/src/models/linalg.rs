//! Small dense kernels. Four accumulators let the compiler vectorise the
//! reductions while keeping results deterministic.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = W x + b` for row-major `W` with `x.len()` columns.
pub fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = b[i] + dot(&w[i * n..(i + 1) * n], x);
    }
}

/// `dx += W^T dy`
pub fn affine_t(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let n = dx.len();
    for (i, &g) in dy.iter().enumerate() {
        if g != 0.0 {
            axpy(g, &w[i * n..(i + 1) * n], dx);
        }
    }
}

/// `dW += dy x^T`
pub fn outer_acc(dy: &[f64], x: &[f64], dw: &mut [f64]) {
    let n = x.len();
    for (i, &g) in dy.iter().enumerate() {
        if g != 0.0 {
            axpy(g, x, &mut dw[i * n..(i + 1) * n]);
        }
    }
}
