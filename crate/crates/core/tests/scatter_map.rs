//! The fused butterfly path replaces the baseline's reshape + two axis
//! permutations with a single scatter as the first GEMM's columns are
//! produced. This pins the scatter's index map to the composed
//! permutations, exhaustively over small (b1, b2, r') boxes.

use blr_core::exec::fused_scatter_dest;
use blr_core::Tensor;

/// Composed baseline shuffle: take the first GEMM's output planes
/// Z (b1, n, r'·b2) with b2-fastest columns, view as (b1, n, r', b2),
/// permute to (b1, n, b2, r'), then to (b2, n, b1, r'), and flatten the
/// trailing pair (r' fastest).
fn composed(z: &Tensor, b1: usize, b2: usize, n: usize, rp: usize) -> Tensor {
    z.clone()
        .with_shape(&[b1, n, rp, b2])
        .unwrap()
        .permuted(&[0, 1, 3, 2])
        .unwrap()
        .permuted(&[2, 1, 0, 3])
        .unwrap()
        .with_shape(&[b2, n, b1 * rp])
        .unwrap()
}

#[test]
fn scatter_destinations_match_the_composed_permutations() {
    for b1 in 1..=4 {
        for b2 in 1..=4 {
            for rp in 1..=4 {
                let n = 3;
                // Distinct values everywhere, so any index slip shows up.
                let z = Tensor::from_vec(
                    &[b1, n, rp * b2],
                    (0..b1 * n * rp * b2).map(|v| v as f32).collect(),
                )
                .unwrap();
                let want = composed(&z, b1, b2, n, rp);

                // The fused kernel sees the re-laid (r'-fastest) columns
                // c = k·r' + ρ' and scatters each into plane k at column
                // l·r' + ρ'.
                let mut got = Tensor::zeros(&[b2, n, b1 * rp]);
                let mut hits = vec![0u8; b2 * b1 * rp];
                for l in 0..b1 {
                    for t in 0..n {
                        for c in 0..b2 * rp {
                            let (k, col) = fused_scatter_dest(l, c, rp);
                            // Same logical element under the b2-fastest
                            // storage the baseline starts from.
                            let src = z.at(&[l, t, (c % rp) * b2 + c / rp]);
                            got.data_mut()[(k * n + t) * (b1 * rp) + col] = src;
                            if t == 0 {
                                hits[k * b1 * rp + col] += 1;
                            }
                        }
                    }
                }
                assert_eq!(
                    got.data(),
                    want.data(),
                    "mismatch at b1={b1} b2={b2} r'={rp}"
                );
                // The map is a bijection: every destination written once.
                assert!(hits.iter().all(|&h| h == 1), "b1={b1} b2={b2} r'={rp}");
            }
        }
    }
}
