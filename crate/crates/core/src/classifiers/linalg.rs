//! Flat-slice linear algebra kernels for the hand-rolled networks.
//!
//! Matrices are row-major slices; all loops run over contiguous memory.

/// y = W x, with W a rows x cols row-major matrix.
pub fn gemv(y: &mut [f64], w: &[f64], x: &[f64], rows: usize, cols: usize) {
    debug_assert_eq!(y.len(), rows);
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (i, yi) in y.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *yi = acc;
    }
}

/// y += Wᵀ d, accumulating the gradient that flows back through W.
pub fn gemv_t_acc(y: &mut [f64], w: &[f64], d: &[f64], rows: usize, cols: usize) {
    debug_assert_eq!(y.len(), cols);
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(d.len(), rows);
    for (i, di) in d.iter().enumerate() {
        if *di == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (yv, wv) in y.iter_mut().zip(row) {
            *yv += wv * di;
        }
    }
}

/// dW += d xᵀ (outer product accumulate).
pub fn outer_acc(dw: &mut [f64], d: &[f64], x: &[f64], rows: usize, cols: usize) {
    debug_assert_eq!(dw.len(), rows * cols);
    debug_assert_eq!(d.len(), rows);
    debug_assert_eq!(x.len(), cols);
    for (i, di) in d.iter().enumerate() {
        if *di == 0.0 {
            continue;
        }
        let row = &mut dw[i * cols..(i + 1) * cols];
        for (wv, xv) in row.iter_mut().zip(x) {
            *wv += di * xv;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax over a two-logit pair.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemv_matches_by_hand() {
        // [[1,2],[3,4],[5,6]] * [10, 100] = [210, 430, 650]
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x = [10.0, 100.0];
        let mut y = [0.0; 3];
        gemv(&mut y, &w, &x, 3, 2);
        assert_eq!(y, [210.0, 430.0, 650.0]);
    }

    #[test]
    fn gemv_t_acc_matches_by_hand() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let d = [1.0, 10.0, 100.0];
        let mut y = [0.0; 2];
        gemv_t_acc(&mut y, &w, &d, 3, 2);
        // Wᵀ d = [1 + 30 + 500, 2 + 40 + 600]
        assert_eq!(y, [531.0, 642.0]);
    }

    #[test]
    fn outer_acc_matches_by_hand() {
        let mut dw = [0.0; 6];
        outer_acc(&mut dw, &[1.0, 2.0, 3.0], &[10.0, 20.0], 3, 2);
        assert_eq!(dw, [10.0, 20.0, 20.0, 40.0, 30.0, 60.0]);
    }

    #[test]
    fn softmax2_sums_to_one() {
        let p = softmax2([1000.0, 999.0]);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1]);
        let p = softmax2([0.0, 0.0]);
        assert_eq!(p, [0.5, 0.5]);
    }
}
