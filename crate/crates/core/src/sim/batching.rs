//! Batches balanced over the heading of the nearest agent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const NUM_YAW_BINS: usize = 8;

/// Builds `num_batches` batches of sample indices.
///
/// Samples are grouped by yaw bin (samples without agents form their own
/// group). Each batch draws round-robin across the non-empty groups starting
/// from a rotating offset, so every group is drawn equally often; each group
/// is consumed in shuffled order and reshuffled when exhausted. With fewer
/// slots than groups this degrades to plain round-robin over groups.
pub fn yaw_balanced_batches(bins: &[Option<u8>], batch_size: usize, num_batches: usize, seed: u64) -> Vec<Vec<usize>> {
    if bins.is_empty() || batch_size == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); NUM_YAW_BINS + 1];
    for (i, b) in bins.iter().enumerate() {
        let g = b.map_or(NUM_YAW_BINS, |b| (b as usize).min(NUM_YAW_BINS - 1));
        groups[g].push(i);
    }
    groups.retain(|g| !g.is_empty());
    let mut queues: Vec<(Vec<usize>, usize)> = groups
        .into_iter()
        .map(|mut g| {
            g.shuffle(&mut rng);
            (g, 0)
        })
        .collect();

    let n_groups = queues.len();
    let mut cursor = 0;
    let mut out = Vec::with_capacity(num_batches);
    for _ in 0..num_batches {
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let (queue, pos) = &mut queues[cursor % n_groups];
            cursor += 1;
            if *pos == queue.len() {
                queue.shuffle(&mut rng);
                *pos = 0;
            }
            batch.push(queue[*pos]);
            *pos += 1;
        }
        out.push(batch);
    }
    out
}
