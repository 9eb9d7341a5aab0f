//! Minibatch index samplers.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub trait BatchSampler {
    fn next_batch(&mut self, rng: &mut ChaCha8Rng, batch_size: usize) -> Vec<usize>;
}

/// Walks shuffled epochs over `0..n`.
pub struct EpochSampler {
    n: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl EpochSampler {
    pub fn new(n: usize) -> Self {
        EpochSampler {
            n,
            order: Vec::new(),
            cursor: 0,
        }
    }
}

impl BatchSampler for EpochSampler {
    fn next_batch(&mut self, rng: &mut ChaCha8Rng, batch_size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch_size);
        if self.n == 0 {
            return out;
        }
        while out.len() < batch_size {
            if self.cursor >= self.order.len() {
                self.order = (0..self.n).collect();
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Draws each batch element by first choosing a pool with probability proportional
/// to its weight, then an element of that pool uniformly. Empty pools are never chosen.
pub struct WeightedPools {
    pools: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl WeightedPools {
    pub fn new(pools: Vec<Vec<usize>>, weights: Vec<f64>) -> Self {
        assert_eq!(pools.len(), weights.len());
        let weights = pools
            .iter()
            .zip(weights)
            .map(|(p, w)| if p.is_empty() { 0.0 } else { w.max(0.0) })
            .collect();
        WeightedPools { pools, weights }
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Index of the pool chosen for one draw.
    pub fn draw_pool(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = self.total_weight();
        let mut u = rng.random::<f64>() * total;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > 0.0 && u < w {
                return i;
            }
            u -= w;
        }
        self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }
}

impl BatchSampler for WeightedPools {
    fn next_batch(&mut self, rng: &mut ChaCha8Rng, batch_size: usize) -> Vec<usize> {
        if self.total_weight() <= 0.0 {
            return Vec::new();
        }
        (0..batch_size)
            .map(|_| {
                let pool = &self.pools[self.draw_pool(rng)];
                pool[rng.random_range(0..pool.len())]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn epoch_sampler_covers_everything_once_per_epoch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = EpochSampler::new(7);
        let mut seen = s.next_batch(&mut rng, 7);
        seen.sort();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn empty_pools_are_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = WeightedPools::new(vec![vec![], vec![5, 6]], vec![10.0, 1.0]);
        assert!(s.next_batch(&mut rng, 50).iter().all(|&i| i == 5 || i == 6));
    }
}
