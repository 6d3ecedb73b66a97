//! Dense helpers over row-major `Vec<f64>` matrices.

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `y += W x` for `W` with `cols` columns.
#[inline]
pub fn matvec_acc(w: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(w.len(), cols * y.len());
    for (row, out) in w.chunks_exact(cols).zip(y.iter_mut()) {
        *out += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `x += Wᵀ y` for `W` with `cols` columns.
#[inline]
pub fn matvec_t_acc(w: &[f64], cols: usize, y: &[f64], x: &mut [f64]) {
    for (row, &g) in w.chunks_exact(cols).zip(y) {
        if g == 0.0 {
            continue;
        }
        for (o, a) in x.iter_mut().zip(row) {
            *o += a * g;
        }
    }
}

/// `W += a bᵀ`.
#[inline]
pub fn outer_acc(w: &mut [f64], a: &[f64], b: &[f64]) {
    for (row, &ga) in w.chunks_exact_mut(b.len()).zip(a) {
        if ga == 0.0 {
            continue;
        }
        for (o, &bb) in row.iter_mut().zip(b) {
            *o += ga * bb;
        }
    }
}
