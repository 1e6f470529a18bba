use super::PairRecord;
use crate::{Error, Result};

pub const DEFAULT_BINS: usize = 5;

/// Stratum of `similarity` among `bins` equal-width intervals over `[lo, hi]`.
/// The upper bound belongs to the last bin.
pub fn bin_index(similarity: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let width = (hi - lo) / bins as f64;
    if !width.is_finite() || width <= 0.0 {
        return 0;
    }
    (((similarity - lo) / width).floor().max(0.0) as usize).min(bins - 1)
}

/// Chooses `total` pairs spread evenly over similarity strata.
///
/// Quotas are `total / bins` with the remainder going to the lowest bins.
/// Each bin takes its lowest pair ids first. When a bin runs short, the
/// shortfall is taken from the nearest bins with spare candidates, lower
/// index first at equal distance. Returned records carry their stratum in
/// `bin` and are ordered by bin, then pair id.
pub fn stratified_select(candidates: &[PairRecord], total: usize, bins: usize) -> Result<Vec<PairRecord>> {
    if bins == 0 {
        return Err(Error::arg("bins must be at least 1"));
    }
    if candidates.is_empty() {
        return Err(Error::arg("no candidates"));
    }
    if total > candidates.len() {
        return Err(Error::arg(format!(
            "cannot select {total} pairs from {} candidates",
            candidates.len()
        )));
    }
    if let Some(bad) = candidates.iter().find(|c| !c.similarity.is_finite()) {
        return Err(Error::arg(format!("pair {} has no usable similarity", bad.pair_id)));
    }
    let lo = candidates.iter().map(|c| c.similarity).fold(f64::INFINITY, f64::min);
    let hi = candidates.iter().map(|c| c.similarity).fold(f64::NEG_INFINITY, f64::max);

    let mut groups: Vec<Vec<&PairRecord>> = vec![Vec::new(); bins];
    for c in candidates {
        groups[bin_index(c.similarity, lo, hi, bins)].push(c);
    }
    for g in &mut groups {
        g.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    }

    let quota: Vec<usize> = (0..bins).map(|b| total / bins + usize::from(b < total % bins)).collect();
    let mut taken: Vec<usize> = (0..bins).map(|b| quota[b].min(groups[b].len())).collect();
    let deficits: Vec<usize> = (0..bins).map(|b| quota[b] - taken[b]).collect();
    for (b, &short) in deficits.iter().enumerate() {
        let mut deficit = short;
        let mut dist = 1;
        while deficit > 0 && dist < bins {
            let neighbours = [b.checked_sub(dist), Some(b + dist).filter(|&n| n < bins)];
            for nb in neighbours.into_iter().flatten() {
                let spare = groups[nb].len() - taken[nb];
                let t = spare.min(deficit);
                taken[nb] += t;
                deficit -= t;
            }
            dist += 1;
        }
        debug_assert_eq!(deficit, 0, "total <= candidates guarantees the spill completes");
    }

    Ok(groups
        .iter()
        .enumerate()
        .flat_map(|(b, g)| {
            g[..taken[b]].iter().map(move |&c| PairRecord {
                bin: Some(b),
                ..c.clone()
            })
        })
        .collect())
}
