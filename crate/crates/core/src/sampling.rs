//! Measure estimates of subsets of the torus `T^k` with reproducible
//! parallel sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

/// Samples per independently seeded chunk; fixed so results do not depend
/// on the thread count.
pub const CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMethod {
    MonteCarlo,
    /// Randomly shifted additive recurrence (R_d sequence).
    QuasiRandom,
    /// Midpoint rule on a `k^dim` grid, for `dim ≤ 2`.
    Quadrature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub value: f64,
    /// 99% half-width for Monte Carlo; a heuristic of the same form for
    /// the quasi-random rule; grid-refinement difference for quadrature.
    pub half_width: f64,
    pub samples: u64,
    pub method: SamplingMethod,
    pub seed: u64,
}

impl MeasureEstimate {
    pub fn upper(&self) -> f64 {
        (self.value + self.half_width).min(1.0)
    }

    pub fn lower(&self) -> f64 {
        (self.value - self.half_width).max(0.0)
    }
}

/// Binomial 99% half-width, clamped below by the one-sided zero-hit bound
/// `ln(100)/n`.
pub fn binomial_half_width(hits: u64, n: u64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let p = hits as f64 / n as f64;
    (Z99 * (p * (1.0 - p) / n as f64).sqrt()).max(100f64.ln() / n as f64)
}

/// Reproducible generator for chunk `chunk` of a run seeded by `seed`.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Draw `n` uniform points of `T^dim`, reproducibly and in a fixed order.
pub fn uniform_points(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = chunk_rng(seed, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len)
                .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect::<Vec<f64>>())
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Generalized golden ratio: the positive root of `x^{dim+1} = x + 1`.
fn harmonious(dim: usize) -> f64 {
    let mut x: f64 = 2.0;
    for _ in 0..64 {
        x = (1.0 + x).powf(1.0 / (dim as f64 + 1.0));
    }
    x
}

/// Point `i` of the R_d sequence shifted by `shift`.
pub fn rd_point(i: u64, shift: &[f64]) -> Vec<f64> {
    let phi = harmonious(shift.len());
    shift
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let alpha = phi.powi(-(k as i32 + 1));
            (s + (i as f64 + 1.0) * alpha).rem_euclid(1.0)
        })
        .collect()
}

/// Estimate `|{x ∈ T^dim : indicator(x)}|`.
pub fn estimate_measure<F>(
    dim: usize,
    indicator: F,
    samples: u64,
    seed: u64,
    method: SamplingMethod,
) -> Result<MeasureEstimate>
where
    F: Fn(&[f64]) -> bool + Sync,
{
    if dim == 0 || samples == 0 {
        return Err(Error::input("measure estimate needs dim >= 1 and samples >= 1"));
    }
    let (value, half_width, used) = match method {
        SamplingMethod::MonteCarlo => {
            let n = samples as usize;
            let hits: u64 = (0..n.div_ceil(CHUNK))
                .into_par_iter()
                .map(|c| {
                    let mut rng = chunk_rng(seed, c as u64);
                    let len = CHUNK.min(n - c * CHUNK);
                    let mut x = vec![0.0; dim];
                    let mut h = 0u64;
                    for _ in 0..len {
                        x.iter_mut().for_each(|v| *v = rng.random::<f64>());
                        h += indicator(&x) as u64;
                    }
                    h
                })
                .sum();
            (hits as f64 / samples as f64, binomial_half_width(hits, samples), samples)
        }
        SamplingMethod::QuasiRandom => {
            let mut rng = chunk_rng(seed, u64::MAX);
            let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            let hits: u64 = (0..samples)
                .into_par_iter()
                .map(|i| indicator(&rd_point(i, &shift)) as u64)
                .sum();
            (hits as f64 / samples as f64, binomial_half_width(hits, samples), samples)
        }
        SamplingMethod::Quadrature => {
            if dim > 2 {
                return Err(Error::input("quadrature is limited to dimension <= 2"));
            }
            let k = ((samples as f64).powf(1.0 / dim as f64).round() as u64).max(2);
            let fine = grid_fraction(dim, k, &indicator);
            let coarse = grid_fraction(dim, k / 2, &indicator);
            (fine, (fine - coarse).abs().max(1.0 / k as f64), k.pow(dim as u32))
        }
    };
    Ok(MeasureEstimate {
        value,
        half_width,
        samples: used,
        method,
        seed,
    })
}

fn grid_fraction<F: Fn(&[f64]) -> bool + Sync>(dim: usize, k: u64, f: &F) -> f64 {
    let total = k.pow(dim as u32);
    let hits: u64 = (0..total)
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = if dim == 1 {
                vec![(i as f64 + 0.5) / k as f64]
            } else {
                vec![((i / k) as f64 + 0.5) / k as f64, ((i % k) as f64 + 0.5) / k as f64]
            };
            f(&x) as u64
        })
        .sum();
    hits as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_measure_all_methods() {
        let f = |x: &[f64]| x[0] < 0.3;
        for m in [SamplingMethod::MonteCarlo, SamplingMethod::QuasiRandom, SamplingMethod::Quadrature] {
            let est = estimate_measure(1, f, 40_000, 7, m).unwrap();
            assert!((est.value - 0.3).abs() <= est.half_width, "{m:?}: {est:?}");
            assert!(est.half_width < 0.02);
        }
    }

    #[test]
    fn disc_area_in_two_dimensions() {
        let f = |x: &[f64]| (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2) < 0.16;
        let want = std::f64::consts::PI * 0.16;
        for m in [SamplingMethod::MonteCarlo, SamplingMethod::QuasiRandom, SamplingMethod::Quadrature] {
            let est = estimate_measure(2, f, 90_000, 11, m).unwrap();
            assert!((est.value - want).abs() <= est.half_width, "{m:?}: {est:?}");
        }
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let f = |x: &[f64]| x[0] * x[1] < 0.2;
        let a = estimate_measure(2, f, 50_000, 3, SamplingMethod::MonteCarlo).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| estimate_measure(2, f, 50_000, 3, SamplingMethod::MonteCarlo).unwrap());
        assert_eq!(a, b);
        let c = estimate_measure(2, f, 50_000, 4, SamplingMethod::MonteCarlo).unwrap();
        assert_ne!(a.value, c.value);
        assert_eq!(uniform_points(2, 5000, 9), uniform_points(2, 5000, 9));
    }

    #[test]
    fn zero_hits_keep_a_positive_width() {
        let est = estimate_measure(1, |_| false, 1000, 0, SamplingMethod::MonteCarlo).unwrap();
        assert_eq!(est.value, 0.0);
        assert!((est.half_width - 100f64.ln() / 1000.0).abs() < 1e-15);
    }

    #[test]
    fn harmonious_numbers() {
        assert!((harmonious(1) - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-14);
        // plastic number
        assert!((harmonious(2) - 1.324_717_957_244_746).abs() < 1e-14);
    }
}
