//! Forward-pass latency measurement.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::Tensor4;

pub const MIN_WARMUP: usize = 3;
pub const MIN_ITERATIONS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchStats {
    pub iterations: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub mean_ms: f64,
}

/// Median (mean of the middle pair for even counts) and nearest-rank p95.
pub fn summarize(samples_ms: &[f64]) -> Result<BenchStats> {
    if samples_ms.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let mut s = samples_ms.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    let rank = (0.95 * n as f64).ceil() as usize;
    Ok(BenchStats {
        iterations: n,
        median_ms: median,
        p95_ms: s[rank.clamp(1, n) - 1],
        min_ms: s[0],
        mean_ms: s.iter().sum::<f64>() / n as f64,
    })
}

/// Fixed pseudo-random input in [-1, 1].
pub fn bench_input(width: usize, height: usize, seed: u64) -> Result<Tensor4> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * width * height).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
    Tensor4::new([1, 3, height, width], data)
}

fn check_counts(warmup: usize, iterations: usize) -> Result<()> {
    if warmup < MIN_WARMUP || iterations < MIN_ITERATIONS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_WARMUP} warm-up passes and {MIN_ITERATIONS} iterations"
        )));
    }
    Ok(())
}

fn time_forward(network: &Network, input: &Tensor4) -> Result<f64> {
    let start = Instant::now();
    let heads = network.forward_heads(input)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    std::hint::black_box(heads);
    Ok(ms)
}

pub fn bench_forward(network: &Network, input: &Tensor4, warmup: usize, iterations: usize) -> Result<BenchStats> {
    Ok(bench_interleaved(&[network], input, warmup, iterations)?.remove(0))
}

/// Times several networks round-robin on the same input so that drift in
/// machine load affects all of them alike.
pub fn bench_interleaved(
    networks: &[&Network],
    input: &Tensor4,
    warmup: usize,
    iterations: usize,
) -> Result<Vec<BenchStats>> {
    check_counts(warmup, iterations)?;
    for _ in 0..warmup {
        for n in networks {
            time_forward(n, input)?;
        }
    }
    let mut samples = vec![Vec::with_capacity(iterations); networks.len()];
    for _ in 0..iterations {
        for (n, s) in networks.iter().zip(&mut samples) {
            s.push(time_forward(n, input)?);
        }
    }
    samples.iter().map(|s| summarize(s)).collect()
}
