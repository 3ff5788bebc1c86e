//! One-sided Jacobi singular value decomposition in f64.
//!
//! The factorization routines need thin SVDs of blocks up to a few thousand
//! on a side, with enough accuracy to serve as optimality oracles
//! (Eckart–Young). One-sided Jacobi orthogonalizes the columns of A by plane
//! rotations; it is dependency-free, deterministic (fixed cyclic sweep
//! order), and accurate to near machine precision on these sizes.

use crate::error::{Error, Result};

const TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 60;

/// Thin SVD of an m×n matrix: `a = u · diag(sigma) · vt` with
/// u m×c, sigma c, vt c×n where c = min(m, n). Singular values descend.
pub struct ThinSvd {
    pub u: Vec<f64>,
    pub sigma: Vec<f64>,
    pub vt: Vec<f64>,
}

pub fn svd_thin(a: &[f64], m: usize, n: usize) -> Result<ThinSvd> {
    assert_eq!(a.len(), m * n);
    if m < n {
        // Decompose the transpose and swap the roles of U and V.
        let at = super::smallmat::transpose(a, m, n);
        let s = svd_thin(&at, n, m)?;
        // at = u1 Σ vt1  =>  a = vt1^T Σ u1^T
        let u = super::smallmat::transpose(&s.vt, s.sigma.len(), m);
        let vt = super::smallmat::transpose(&s.u, n, s.sigma.len());
        return Ok(ThinSvd {
            u,
            sigma: s.sigma,
            vt,
        });
    }

    // Column-major working copy of A (columns contiguous) and V.
    let mut b = vec![0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            b[j * m + i] = a[i * n + j];
        }
    }
    let mut v = vec![0f64; n * n]; // column-major
    for d in 0..n {
        v[d * n + d] = 1.0;
    }

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (mut app, mut aqq, mut apq) = (0f64, 0f64, 0f64);
                {
                    let (cp, cq) = (&b[p * m..p * m + m], &b[q * m..q * m + m]);
                    for i in 0..m {
                        app += cp[i] * cp[i];
                        aqq += cq[i] * cq[i];
                        apq += cp[i] * cq[i];
                    }
                }
                if apq.abs() <= TOL * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut b, m, p, q, c, s);
                rotate_cols(&mut v, n, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNonConvergence { sweeps: MAX_SWEEPS });
    }

    // Column norms are the singular values; sort descending.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n)
        .map(|j| b[j * m..j * m + m].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));

    let mut u = vec![0f64; m * n]; // row-major m×n
    let mut sigma = vec![0f64; n];
    let mut vt = vec![0f64; n * n]; // row-major n×n
    for (slot, &j) in order.iter().enumerate() {
        let s = norms[j];
        sigma[slot] = s;
        if s > 0.0 {
            for i in 0..m {
                u[i * n + slot] = b[j * m + i] / s;
            }
        }
        for i in 0..n {
            vt[slot * n + i] = v[j * n + i];
        }
    }
    Ok(ThinSvd { u, sigma, vt })
}

fn rotate_cols(mat: &mut [f64], rows: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = mat.split_at_mut(q * rows);
    let cp = &mut head[p * rows..p * rows + rows];
    let cq = &mut tail[..rows];
    for i in 0..rows {
        let (x, y) = (cp[i], cq[i]);
        cp[i] = c * x - s * y;
        cq[i] = s * x + c * y;
    }
}

/// Rank-r truncation error sqrt(sum of squared discarded singular values).
#[cfg(test)]
pub fn truncation_error(sigma: &[f64], r: usize) -> f64 {
    sigma[r.min(sigma.len())..]
        .iter()
        .map(|s| s * s)
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::smallmat::{matmul, transpose};

    fn reconstruct(s: &ThinSvd, m: usize, n: usize) -> Vec<f64> {
        let c = s.sigma.len();
        let mut us = s.u.clone();
        for i in 0..m {
            for j in 0..c {
                us[i * c + j] *= s.sigma[j];
            }
        }
        matmul(&us, &s.vt, m, c, n)
    }

    fn check_orthonormal_cols(u: &[f64], m: usize, c: usize) {
        for j1 in 0..c {
            for j2 in j1..c {
                let dot: f64 = (0..m).map(|i| u[i * c + j1] * u[i * c + j2]).sum();
                let want = if j1 == j2 { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9, "col {j1}·col {j2} = {dot}");
            }
        }
    }

    fn rng_fill(len: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        (0..len)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    #[test]
    fn diagonal_matrix() {
        let a = vec![3., 0., 0., 0., 2., 0., 0., 0., 1.];
        let s = svd_thin(&a, 3, 3).unwrap();
        assert!((s.sigma[0] - 3.0).abs() < 1e-12);
        assert!((s.sigma[1] - 2.0).abs() < 1e-12);
        assert!((s.sigma[2] - 1.0).abs() < 1e-12);
        assert!((truncation_error(&s.sigma, 2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_and_orthogonality_tall() {
        let a = rng_fill(40 * 12, 3);
        let s = svd_thin(&a, 40, 12).unwrap();
        check_orthonormal_cols(&s.u, 40, 12);
        let vtt = transpose(&s.vt, 12, 12);
        check_orthonormal_cols(&vtt, 12, 12);
        let rec = reconstruct(&s, 40, 12);
        let err: f64 = a
            .iter()
            .zip(&rec)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-10, "reconstruction error {err}");
        for w in s.sigma.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn wide_matrix_via_transpose() {
        let a = rng_fill(8 * 21, 4);
        let s = svd_thin(&a, 8, 21).unwrap();
        assert_eq!(s.sigma.len(), 8);
        let rec = reconstruct(&s, 8, 21);
        let err: f64 = a
            .iter()
            .zip(&rec)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-10);
    }

    #[test]
    fn rank_one_exact() {
        // outer product -> single nonzero singular value
        let u = rng_fill(9, 5);
        let v = rng_fill(7, 6);
        let mut a = vec![0f64; 63];
        for i in 0..9 {
            for j in 0..7 {
                a[i * 7 + j] = u[i] * v[j];
            }
        }
        let s = svd_thin(&a, 9, 7).unwrap();
        assert!(s.sigma[1] < 1e-12 * s.sigma[0].max(1.0));
    }
}
