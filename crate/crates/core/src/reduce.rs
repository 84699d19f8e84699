//! Order-stable floating-point reductions.
//!
//! Parallel loops split work into fixed-size chunks whose boundaries depend
//! only on the problem size, never on the worker count. Partial results are
//! then combined with a pairwise tree in chunk order, so sums are
//! bit-identical across thread pools of any size.

use rayon::prelude::*;

/// Number of items handled by one parallel task.
pub const CHUNK: usize = 256;

/// Pairwise (cascade) summation. Deterministic for a given input order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Maps `0..n` in fixed chunks, sums each chunk sequentially and combines the
/// chunk totals pairwise. Errors short-circuit; the first error in chunk
/// order is returned.
pub fn chunked_sum<E, F>(n: usize, f: F) -> Result<f64, E>
where
    E: Send,
    F: Fn(usize) -> Result<f64, E> + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partial: Vec<Result<f64, E>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i)?;
            }
            Ok(acc)
        })
        .collect();
    let mut totals = Vec::with_capacity(partial.len());
    for p in partial {
        totals.push(p?);
    }
    Ok(pairwise_sum(&totals))
}
