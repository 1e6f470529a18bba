//! Session queue construction.

use std::collections::{HashMap, HashSet};

use fidbench_core::PairRecord;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// FNV-1a, used to derive a stable per-annotator seed.
pub fn session_seed(annotator_id: &str) -> u64 {
    annotator_id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Orders the pairs an annotator still has to see.
///
/// Regular pairs are shuffled with `seed`, then stably sorted by how many
/// retained answers they already have so under-covered pairs come first.
/// `ceil(n * trap_rate)` unanswered traps (as many as exist) are then placed
/// at seeded random positions.
pub fn build_queue(
    pairs: &[PairRecord],
    answered: &HashSet<String>,
    retained: &HashMap<String, usize>,
    trap_rate: f64,
    seed: u64,
) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let open = |p: &&PairRecord| !answered.contains(&p.pair_id);

    let mut regular: Vec<&str> = pairs.iter().filter(|p| !p.is_trap).filter(open).map(|p| p.pair_id.as_str()).collect();
    regular.sort_unstable();
    regular.shuffle(&mut rng);
    regular.sort_by_key(|id| retained.get(*id).copied().unwrap_or(0));

    let mut traps: Vec<&str> = pairs.iter().filter(|p| p.is_trap).filter(open).map(|p| p.pair_id.as_str()).collect();
    traps.sort_unstable();
    traps.shuffle(&mut rng);
    let n_traps = ((regular.len() as f64 * trap_rate).ceil() as usize).min(traps.len());

    let mut queue: Vec<String> = regular.into_iter().map(str::to_string).collect();
    for trap in &traps[..n_traps] {
        let at = rng.gen_range(0..=queue.len());
        queue.insert(at, trap.to_string());
    }
    queue
}
