//! Low-discrepancy sampling for the hypothesis verifiers.

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Halton sequence in up to 16 dimensions, started at an offset derived from
/// the seed so that distinct seeds give distinct (but reproducible) streams.
#[derive(Clone, Debug)]
pub struct Halton {
    dim: usize,
    index: u64,
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim <= PRIMES.len(), "Halton sampler supports at most 16 dimensions");
        Halton {
            dim,
            index: 1 + seed.wrapping_mul(7919) % 100_003,
        }
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let k = self.index;
        self.index += 1;
        PRIMES[..self.dim].iter().map(|&b| radical_inverse(k, b)).collect()
    }
}

fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while k > 0 {
        r += f * (k % base) as f64;
        k /= base;
        f *= inv;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_two_van_der_corput() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }

    #[test]
    fn points_in_unit_cube_and_reproducible() {
        let mut a = Halton::new(5, 42);
        let mut b = Halton::new(5, 42);
        for _ in 0..100 {
            let p = a.next_point();
            assert_eq!(p, b.next_point());
            assert!(p.iter().all(|v| (0.0..1.0).contains(v)));
        }
    }
}
