//! Small dense f64 matrix helpers used inside factorization routines.
//! Row-major throughout; sizes here are "desk scale" (a few thousand at
//! most), so clarity wins over blocking.

/// C (m×n) = A (m×k) · B (k×n).
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0f64; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..kk * n + n];
            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                *cv += av * bv;
            }
        }
    }
    c
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

pub fn fro_norm2(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// LU factorization with partial pivoting, in place. Returns the pivot
/// vector, or None if the matrix is numerically singular.
fn lu_factor(a: &mut [f64], n: usize) -> Option<Vec<usize>> {
    let mut piv: Vec<usize> = (0..n).collect();
    for col in 0..n {
        // Pivot search.
        let mut p = col;
        let mut best = a[col * n + col].abs();
        for r in col + 1..n {
            let v = a[r * n + col].abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if best < 1e-300 {
            return None;
        }
        if p != col {
            for j in 0..n {
                a.swap(col * n + j, p * n + j);
            }
            piv.swap(col, p);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            a[r * n + col] = f;
            for j in col + 1..n {
                a[r * n + j] -= f * a[col * n + j];
            }
        }
    }
    Some(piv)
}

/// Solve A X = B for X (n×m), destroying neither input. None if singular.
pub fn solve(a: &[f64], b: &[f64], n: usize, m: usize) -> Option<Vec<f64>> {
    let mut lu = a.to_vec();
    let piv = lu_factor(&mut lu, n)?;
    let mut x = vec![0f64; n * m];
    for (r, &pr) in piv.iter().enumerate() {
        x[r * m..(r + 1) * m].copy_from_slice(&b[pr * m..pr * m + m]);
    }
    // Forward substitution (unit lower).
    for r in 1..n {
        for k in 0..r {
            let f = lu[r * n + k];
            if f == 0.0 {
                continue;
            }
            for j in 0..m {
                x[r * m + j] -= f * x[k * m + j];
            }
        }
    }
    // Back substitution.
    for r in (0..n).rev() {
        for k in r + 1..n {
            let f = lu[r * n + k];
            if f == 0.0 {
                continue;
            }
            for j in 0..m {
                x[r * m + j] -= f * x[k * m + j];
            }
        }
        let d = lu[r * n + r];
        for j in 0..m {
            x[r * m + j] /= d;
        }
    }
    Some(x)
}

pub fn invert(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut eye = vec![0f64; n * n];
    for d in 0..n {
        eye[d * n + d] = 1.0;
    }
    solve(a, &eye, n, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_roundtrip() {
        let a = vec![4., 1., 2., 1., 5., 1., 2., 1., 6.];
        let x_true = vec![1., -2., 0.5, 3., 0., 1.];
        let b = matmul(&a, &x_true, 3, 3, 2);
        let x = solve(&a, &b, 3, 2).unwrap();
        for (got, want) in x.iter().zip(&x_true) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn invert_identity_product() {
        let a = vec![2., 1., 0., 1., 3., 1., 0., 1., 4.];
        let inv = invert(&a, 3).unwrap();
        let prod = matmul(&a, &inv, 3, 3, 3);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[i * 3 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_detected() {
        let a = vec![1., 2., 2., 4.];
        assert!(invert(&a, 2).is_none());
    }

}
