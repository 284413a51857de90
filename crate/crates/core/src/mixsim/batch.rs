use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mix::MixtureSample;
use crate::class::OverlapClass;
use crate::error::{invalid, Result};

/// Seeded minibatches as index lists into `samples`. With `class_pure`,
/// every batch holds a single overlap class; a class too small to fill its
/// last batch yields a short batch (logged).
pub fn make_batches(
    samples: &[MixtureSample],
    batch_size: usize,
    class_pure: bool,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let classes: Vec<OverlapClass> = samples.iter().map(|s| s.overlap_class).collect();
    batch_indices(&classes, batch_size, class_pure, seed)
}

/// [`make_batches`] over bare class labels.
pub fn batch_indices(
    classes: &[OverlapClass],
    batch_size: usize,
    class_pure: bool,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return invalid("batch size must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = if class_pure {
        [OverlapClass::Overlap, OverlapClass::NonOverlap]
            .iter()
            .map(|c| (0..classes.len()).filter(|&i| classes[i] == *c).collect())
            .collect()
    } else {
        vec![(0..classes.len()).collect()]
    };
    let mut batches = Vec::new();
    for mut g in groups {
        if g.is_empty() {
            continue;
        }
        if g.len() % batch_size != 0 {
            log::warn!(
                "{} samples do not fill batches of {batch_size}; last batch is short",
                g.len()
            );
        }
        g.shuffle(&mut rng);
        batches.extend(g.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    Ok(batches)
}
