//! Small dense row-major kernels. Matrices here are at most 19 x 152, so
//! straight loops beat anything sparse or blocked.

/// out[m x n] += a[m x k] * b[k x n]
#[inline]
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            for (o, &b_pj) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += a_ip * b_pj;
            }
        }
    }
}

/// out[k x n] += a[m x k]^T * b[m x n]
#[inline]
pub(crate) fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &a_ip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            for (o, &b_ij) in out[p * n..(p + 1) * n].iter_mut().zip(b_row) {
                *o += a_ip * b_ij;
            }
        }
    }
}

/// out[m x k] += a[m x n] * b[k x n]^T
#[inline]
pub(crate) fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let dot: f64 = a_row.iter().zip(&b[p * n..(p + 1) * n]).map(|(x, y)| x * y).sum();
            out[i * k + p] += dot;
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_agree_with_naive_products() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, -1.0, 2.0, 0.5, 1.0]; // 3x2
        let mut out = [0.0; 4];
        matmul_acc(&a, &b, &mut out, 2, 3, 2);
        assert_eq!(out, [0.5, 7.0, 2.0, 16.0]);

        // a^T (3x2) * c (2x2)
        let c = [1.0, 2.0, 3.0, 4.0];
        let mut out = [0.0; 6];
        matmul_tn_acc(&a, &c, &mut out, 2, 3, 2);
        assert_eq!(out, [13.0, 18.0, 17.0, 24.0, 21.0, 30.0]);

        // a (2x3) * d^T with d 2x3
        let d = [1.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let mut out = [0.0; 4];
        matmul_nt_acc(&a, &d, &mut out, 2, 3, 2);
        assert_eq!(out, [6.0, 2.0, 15.0, 5.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
