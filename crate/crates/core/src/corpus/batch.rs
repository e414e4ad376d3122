use rand::seq::SliceRandom;

use crate::rng;

use super::Example;

/// Splits a total batch size between the labeled and unlabeled pools in
/// proportion to their sizes, so both pools run out at about the same step.
pub fn balanced_batch_sizes(total: usize, n_labeled: usize, n_unlabeled: usize) -> (usize, usize) {
    let total = total.max(2);
    let n = n_labeled + n_unlabeled;
    if n_unlabeled == 0 {
        return (total, 1);
    }
    if n_labeled == 0 {
        return (1, total);
    }
    let labeled = ((total as f64 * n_labeled as f64 / n as f64).round() as usize).clamp(1, total - 1);
    (labeled, total - labeled)
}

/// Per-epoch shuffled mini-batches drawn from separate labeled and
/// unlabeled pools. Each step yields one sub-batch from each pool; a pool
/// that runs out before the other yields empty sub-batches.
#[derive(Debug, Clone)]
pub struct BatchPlan<'a> {
    labeled: Vec<&'a Example>,
    unlabeled: Vec<&'a Example>,
    labeled_batch: usize,
    unlabeled_batch: usize,
    seed: u64,
}

pub fn batches(ds: &[Example], labeled_batch: usize, unlabeled_batch: usize, seed: u64) -> BatchPlan<'_> {
    BatchPlan::new(ds, labeled_batch, unlabeled_batch, seed)
}

impl<'a> BatchPlan<'a> {
    pub fn new(ds: &'a [Example], labeled_batch: usize, unlabeled_batch: usize, seed: u64) -> Self {
        let (labeled, unlabeled) = ds.iter().partition(|e| e.label.is_some());
        BatchPlan {
            labeled,
            unlabeled,
            labeled_batch: labeled_batch.max(1),
            unlabeled_batch: unlabeled_batch.max(1),
            seed,
        }
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.labeled.len().div_ceil(self.labeled_batch).max(self.unlabeled.len().div_ceil(self.unlabeled_batch))
    }

    pub fn num_labeled(&self) -> usize {
        self.labeled.len()
    }

    pub fn num_unlabeled(&self) -> usize {
        self.unlabeled.len()
    }

    /// Batches for epoch `epoch`; the shuffle depends only on `(seed, epoch)`.
    pub fn epoch(&self, epoch: u64) -> EpochBatches<'a> {
        let base = rng::derive(self.seed, "batches");
        let mut labeled = self.labeled.clone();
        let mut unlabeled = self.unlabeled.clone();
        labeled.shuffle(&mut rng::stream(base, 2 * epoch));
        unlabeled.shuffle(&mut rng::stream(base, 2 * epoch + 1));
        EpochBatches {
            steps: self.steps_per_epoch(),
            step: 0,
            labeled,
            unlabeled,
            labeled_batch: self.labeled_batch,
            unlabeled_batch: self.unlabeled_batch,
        }
    }
}

pub struct EpochBatches<'a> {
    steps: usize,
    step: usize,
    labeled: Vec<&'a Example>,
    unlabeled: Vec<&'a Example>,
    labeled_batch: usize,
    unlabeled_batch: usize,
}

fn chunk<'a>(pool: &[&'a Example], step: usize, size: usize) -> Vec<&'a Example> {
    let start = (step * size).min(pool.len());
    let end = (start + size).min(pool.len());
    pool[start..end].to_vec()
}

impl<'a> Iterator for EpochBatches<'a> {
    type Item = (Vec<&'a Example>, Vec<&'a Example>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.step >= self.steps {
            return None;
        }
        let item = (
            chunk(&self.labeled, self.step, self.labeled_batch),
            chunk(&self.unlabeled, self.step, self.unlabeled_batch),
        );
        self.step += 1;
        Some(item)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.steps - self.step;
        (left, Some(left))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;

    fn pool(n_labeled: usize, n_unlabeled: usize) -> Vec<Example> {
        let v = Vocabulary::from_symbols(["C"]).unwrap();
        (0..n_labeled + n_unlabeled)
            .map(|i| Example {
                sequence: v.encode(&"C".repeat(1 + i % 5)).unwrap(),
                label: (i < n_labeled).then(|| vec![i as f64]),
                source: format!("{i}"),
            })
            .collect()
    }

    #[test]
    fn step_count_is_the_longer_pool() {
        let ds = pool(10, 90);
        let plan = batches(&ds, 2, 18, 0);
        assert_eq!(plan.steps_per_epoch(), 5);
        let epoch: Vec<_> = plan.epoch(0).collect();
        assert_eq!(epoch.len(), 5);
        assert!(epoch.iter().all(|(l, u)| l.len() == 2 && u.len() == 18));
    }

    #[test]
    fn fully_labeled_data_has_empty_unlabeled_batches() {
        let ds = pool(7, 0);
        let epoch: Vec<_> = batches(&ds, 3, 5, 0).epoch(0).collect();
        assert_eq!(epoch.len(), 3);
        assert_eq!(epoch[2].0.len(), 1);
        assert!(epoch.iter().all(|(_, u)| u.is_empty()));
    }

    #[test]
    fn order_depends_only_on_seed_and_epoch() {
        let ds = pool(10, 30);
        let names = |b: Vec<(Vec<&Example>, Vec<&Example>)>| -> Vec<String> {
            b.into_iter().flat_map(|(l, u)| l.into_iter().chain(u)).map(|e| e.source.clone()).collect()
        };
        let a = names(batches(&ds, 2, 6, 4).epoch(1).collect());
        let b = names(batches(&ds, 2, 6, 4).epoch(1).collect());
        let c = names(batches(&ds, 2, 6, 4).epoch(2).collect());
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut sorted = a.clone();
        sorted.sort();
        let mut expected: Vec<String> = (0..40).map(|i| i.to_string()).collect();
        expected.sort();
        assert_eq!(sorted, expected);
    }

    #[test]
    fn balanced_sizes() {
        assert_eq!(balanced_batch_sizes(200, 100, 900), (20, 180));
        assert_eq!(balanced_batch_sizes(32, 50, 50), (16, 16));
        assert_eq!(balanced_batch_sizes(32, 1, 10_000), (1, 31));
        assert_eq!(balanced_batch_sizes(32, 10, 0), (32, 1));
    }
}
