use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded mini-batch partition of `0..count`, reshuffled every epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub seed: u64,
    pub batch_size: usize,
    pub count: usize,
}

/// Plan mini-batches of size `batch_size` over `count` samples.
pub fn make_batches(count: usize, seed: u64, batch_size: usize) -> BatchPlan {
    assert!(batch_size >= 2, "batch size must be at least 2");
    BatchPlan {
        seed,
        batch_size,
        count,
    }
}

impl BatchPlan {
    /// Sample order for `epoch`; a permutation of `0..count`.
    pub fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.count).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Batches for `epoch`. The final batch may be short.
    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        self.permutation(epoch)
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// Batches usable for kernel estimates: short batches with fewer than two
    /// samples are dropped.
    pub fn estimation_batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        self.epoch(epoch)
            .into_iter()
            .filter(|b| b.len() >= 2)
            .collect()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.count.div_ceil(self.batch_size)
    }
}
