//! Seeded synthetic weights and activations for tests and benchmarks.
//!
//! Everything here is deterministic in the seed, so a benchmark row or a
//! test case can be reproduced exactly from its (spec, seed) pair. Factor
//! entries are scaled by 1/sqrt(fan-in) per factor so reconstructed weights
//! and activations stay O(1) regardless of shape — keeps f32 forward passes
//! well-conditioned for relative-error checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::formats::{
    BlastFactors, Factors, LowRankFactors, Method, MonarchFactors, VLayout, WorkloadSpec,
};
use crate::tensor::Tensor;

fn gauss(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let x: f32 = StandardNormal.sample(rng);
            x * scale
        })
        .collect()
}

fn inv_sqrt(n: usize) -> f32 {
    1.0 / (n.max(1) as f32).sqrt()
}

/// A dense i×o weight with N(0, 1/i) entries.
pub fn synth_dense_weight(i: usize, o: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(&[i, o], gauss(&mut rng, i * o, inv_sqrt(i))).expect("sized")
}

/// An n×i activation batch with N(0, 1) entries.
pub fn synth_activations(n: usize, i: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_DEAD_BEEF);
    Tensor::from_vec(&[n, i], gauss(&mut rng, n * i, 1.0)).expect("sized")
}

/// Seeded random factors in the layout the spec's method calls for: the
/// benchmark harness times forward passes on these rather than fitting
/// real weights.
pub fn synth_factors(spec: &WorkloadSpec, seed: u64) -> Result<Factors> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (i, o, r, b) = (spec.i, spec.o, spec.r, spec.b);
    Ok(match spec.method {
        Method::Dense => {
            Factors::Dense(Tensor::from_vec(&[i, o], gauss(&mut rng, i * o, inv_sqrt(i)))?)
        }
        Method::LowRank => {
            let v = Tensor::from_vec(&[i, r], gauss(&mut rng, i * r, inv_sqrt(i)))?;
            let u = Tensor::from_vec(&[r, o], gauss(&mut rng, r * o, inv_sqrt(r)))?;
            Factors::LowRank(LowRankFactors::new(v, u)?)
        }
        Method::Monarch => {
            let (p, q, rp) = (spec.p(), spec.q(), spec.r_prime());
            let v = Tensor::from_vec(
                &[b, rp * b, p],
                gauss(&mut rng, b * rp * b * p, inv_sqrt(p)),
            )?;
            let u = Tensor::from_vec(
                &[b, q, b * rp],
                gauss(&mut rng, b * q * b * rp, inv_sqrt(b * rp)),
            )?;
            Factors::Monarch(MonarchFactors::new(v, u, b, b, rp, VLayout::B2Fastest)?)
        }
        Method::Blast => {
            let (p, q) = (spec.p(), spec.q());
            let v = Tensor::from_vec(&[b, p, r], gauss(&mut rng, b * p * r, inv_sqrt(p)))?;
            let s = Tensor::from_vec(&[b, b, r], gauss(&mut rng, b * b * r, 1.0))?;
            let u = Tensor::from_vec(&[b, r, q], gauss(&mut rng, b * r * q, inv_sqrt(r)))?;
            Factors::Blast(BlastFactors::new(v, s, u)?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let spec = WorkloadSpec::new(Method::Blast, 4, 12, 9, 5, 3).unwrap();
        let a = synth_factors(&spec, 7).unwrap().to_dense();
        let b = synth_factors(&spec, 7).unwrap().to_dense();
        let c = synth_factors(&spec, 8).unwrap().to_dense();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn shapes_match_spec() {
        let spec = WorkloadSpec::new(Method::Monarch, 4, 12, 8, 6, 2).unwrap();
        match synth_factors(&spec, 0).unwrap() {
            Factors::Monarch(m) => {
                assert_eq!(m.v().shape(), &[2, 6, 6]);
                assert_eq!(m.u().shape(), &[2, 4, 6]);
                assert_eq!(m.r(), 6);
            }
            _ => panic!("wrong variant"),
        }
        let x = synth_activations(5, 12, 1);
        assert_eq!(x.shape(), &[5, 12]);
    }

    #[test]
    fn magnitudes_are_order_one() {
        let spec = WorkloadSpec::new(Method::LowRank, 4, 256, 256, 64, 0).unwrap();
        let w = synth_factors(&spec, 3).unwrap().to_dense();
        let rms = (w.data().iter().map(|&x| (x as f64).powi(2)).sum::<f64>()
            / w.element_count() as f64)
            .sqrt();
        assert!(rms > 1e-3 && rms < 10.0, "rms={rms}");
    }
}
