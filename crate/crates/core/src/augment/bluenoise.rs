//! Void-and-cluster blue-noise threshold mask.

use std::sync::OnceLock;

use crate::rng::Rng;

pub const MASK_SIZE: usize = 64;
const SIGMA: f64 = 1.5;
const INITIAL_FILL: f64 = 0.1;
const MASK_SEED: u64 = 0x0b1e_4015e;

/// Rank-valued mask: every value in `0..MASK_SIZE²` appears exactly once.
pub struct BlueNoiseMask {
    ranks: Vec<u32>,
}

impl BlueNoiseMask {
    pub fn size(&self) -> usize {
        MASK_SIZE
    }

    pub fn rank(&self, y: usize, x: usize) -> u32 {
        self.ranks[(y % MASK_SIZE) * MASK_SIZE + (x % MASK_SIZE)]
    }

    /// Threshold in `(0, 1)` at a (tiled) position.
    pub fn threshold(&self, y: usize, x: usize) -> f64 {
        (self.rank(y, x) as f64 + 0.5) / (MASK_SIZE * MASK_SIZE) as f64
    }

    pub fn ranks(&self) -> &[u32] {
        &self.ranks
    }
}

pub fn blue_noise_mask() -> &'static BlueNoiseMask {
    static MASK: OnceLock<BlueNoiseMask> = OnceLock::new();
    MASK.get_or_init(|| build_mask(MASK_SIZE, SIGMA, MASK_SEED))
}

struct Field {
    n: usize,
    kernel: Vec<f64>,
    energy: Vec<f64>,
    ones: Vec<bool>,
}

impl Field {
    fn new(n: usize, sigma: f64) -> Self {
        let mut kernel = vec![0.0; n * n];
        for dy in 0..n {
            for dx in 0..n {
                let ty = dy.min(n - dy) as f64;
                let tx = dx.min(n - dx) as f64;
                kernel[dy * n + dx] = (-(tx * tx + ty * ty) / (2.0 * sigma * sigma)).exp();
            }
        }
        Self {
            n,
            kernel,
            energy: vec![0.0; n * n],
            ones: vec![false; n * n],
        }
    }

    fn toggle(&mut self, p: usize, on: bool) {
        let n = self.n;
        let (py, px) = (p / n, p % n);
        let sign = if on { 1.0 } else { -1.0 };
        self.ones[p] = on;
        for y in 0..n {
            let dy = (y + n - py) % n;
            for x in 0..n {
                let dx = (x + n - px) % n;
                self.energy[y * n + x] += sign * self.kernel[dy * n + dx];
            }
        }
    }

    /// One with the highest energy (lowest index on ties).
    fn tightest_cluster(&self) -> usize {
        let mut best = usize::MAX;
        for (i, &on) in self.ones.iter().enumerate() {
            if on && (best == usize::MAX || self.energy[i] > self.energy[best]) {
                best = i;
            }
        }
        best
    }

    /// Zero with the lowest energy (lowest index on ties).
    fn largest_void(&self) -> usize {
        let mut best = usize::MAX;
        for (i, &on) in self.ones.iter().enumerate() {
            if !on && (best == usize::MAX || self.energy[i] < self.energy[best]) {
                best = i;
            }
        }
        best
    }
}

fn build_mask(n: usize, sigma: f64, seed: u64) -> BlueNoiseMask {
    let total = n * n;
    let mut rng = Rng::new(seed);
    let initial = ((total as f64 * INITIAL_FILL) as usize).max(1);

    let mut field = Field::new(n, sigma);
    for p in rng.choose_indices(total, initial) {
        field.toggle(p, true);
    }
    // Relax the seed pattern until moving a cluster point lands on itself.
    for _ in 0..total {
        let cluster = field.tightest_cluster();
        field.toggle(cluster, false);
        let void = field.largest_void();
        field.toggle(void, true);
        if void == cluster {
            break;
        }
    }
    let prototype = field.ones.clone();
    let prototype_energy = field.energy.clone();

    let mut ranks = vec![0u32; total];
    // Phase 1: peel points off the prototype, highest rank first.
    for rank in (0..initial).rev() {
        let p = field.tightest_cluster();
        field.toggle(p, false);
        ranks[p] = rank as u32;
    }
    // Phases 2 and 3: fill voids upward from the prototype.
    field.ones = prototype;
    field.energy = prototype_energy;
    for rank in initial..total {
        let p = field.largest_void();
        field.toggle(p, true);
        ranks[p] = rank as u32;
    }
    BlueNoiseMask { ranks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_are_a_permutation() {
        let mask = blue_noise_mask();
        let mut seen = vec![false; MASK_SIZE * MASK_SIZE];
        for &r in mask.ranks() {
            assert!(!seen[r as usize]);
            seen[r as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn thresholded_mask_is_spread_out() {
        // At 50% coverage, blue noise has almost no same-valued 2x2 blocks
        // compared with white noise (which has ~12.5%).
        let mask = blue_noise_mask();
        let on = |y: usize, x: usize| mask.threshold(y, x) < 0.5;
        let mut uniform_blocks = 0;
        for y in 0..MASK_SIZE {
            for x in 0..MASK_SIZE {
                let v = on(y, x);
                if on(y, x + 1) == v && on(y + 1, x) == v && on(y + 1, x + 1) == v {
                    uniform_blocks += 1;
                }
            }
        }
        let frac = uniform_blocks as f64 / (MASK_SIZE * MASK_SIZE) as f64;
        assert!(frac < 0.05, "uniform 2x2 fraction {frac}");
    }
}
