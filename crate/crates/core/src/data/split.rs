use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
    Excluded,
}

/// Per-pixel partition assignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub ratios: [u32; 3],
    pub seed: u64,
    pub assignment: Vec<Partition>,
}

impl SplitSpec {
    pub fn pixels(&self, part: Partition) -> impl Iterator<Item = usize> + '_ {
        self.assignment.iter().enumerate().filter(move |(_, &p)| p == part).map(|(i, _)| i)
    }

    pub fn count(&self, part: Partition) -> usize {
        self.assignment.iter().filter(|&&p| p == part).count()
    }
}

/// Largest-remainder apportionment of `n` items over `ratios`.
///
/// Seats go first by floor of the exact quota, then one each to the largest
/// fractional remainders (ties to the lower index). If that leaves the first
/// partition empty while `n > 0`, one item moves to it from a partition
/// holding more than its quota, so every count stays within one of its
/// quota.
pub fn apportion(n: usize, ratios: [u32; 3]) -> [usize; 3] {
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    assert!(total > 0, "ratios must not all be zero");
    let n64 = n as u64;
    let mut counts = [0usize; 3];
    let mut rems = [0u64; 3];
    for i in 0..3 {
        let exact = n64 * ratios[i] as u64;
        counts[i] = (exact / total) as usize;
        rems[i] = exact % total;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    if n > 0 && counts[0] == 0 {
        // surplus over the quota, scaled by `total`
        let surplus = |i: usize| counts[i] as i128 * total as i128 - (n64 * ratios[i] as u64) as i128;
        let donor = (1..3).filter(|&i| counts[i] > 0).max_by_key(|&i| (surplus(i), -(i as i64))).expect("n > 0");
        counts[donor] -= 1;
        counts[0] += 1;
    }
    counts
}

/// Assigns every labelled pixel to train, val or test, class by class.
///
/// Within each class (in increasing class id) pixel indices are shuffled
/// by one seeded generator and cut according to [`apportion`]. Background
/// pixels are excluded.
pub fn stratified_split(labels: &[u16], num_classes: usize, ratios: [u32; 3], seed: u64) -> Result<SplitSpec> {
    if ratios.contains(&0) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        match l as usize {
            0 => {}
            c if c <= num_classes => members[c - 1].push(i),
            c => return Err(Error::Data(format!("label {c} at pixel {i} exceeds {num_classes} classes"))),
        }
    }
    let empty: Vec<String> = (1..=num_classes).filter(|c| members[c - 1].is_empty()).map(|c| c.to_string()).collect();
    if !empty.is_empty() {
        return Err(Error::Data(format!("classes without labelled pixels: {}", empty.join(", "))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![Partition::Excluded; labels.len()];
    for pixels in &mut members {
        pixels.shuffle(&mut rng);
        let [tr, va, _] = apportion(pixels.len(), ratios);
        for (k, &p) in pixels.iter().enumerate() {
            assignment[p] = if k < tr {
                Partition::Train
            } else if k < tr + va {
                Partition::Val
            } else {
                Partition::Test
            };
        }
    }
    Ok(SplitSpec { ratios, seed, assignment })
}
