use rand::Rng;

use crate::masks::TwoLevelMask;

/// Smallest normalized sampling weight.
pub const MIN_SAMPLE_WEIGHT: f64 = 1e-4;

/// Draws up to `n` distinct assigned pixels, weighting each pixel by the
/// inverse area of its fine segment (normalized so the smallest segment has
/// weight 1, clamped to [1e-4, 1]).
///
/// Uses weighted sampling without replacement by exponential keys, so the
/// result is successive draws proportional to weight among the remaining pixels.
pub fn sample_pixels<R: Rng>(mask: &TwoLevelMask, n: usize, rng: &mut R) -> Vec<usize> {
    let assigned = mask.assigned_pixels();
    if assigned.len() <= n {
        return assigned;
    }
    let mut area: std::collections::HashMap<i32, usize> = Default::default();
    for &p in &assigned {
        *area.entry(mask.fine[p]).or_default() += 1;
    }
    let min_area = *area.values().min().unwrap() as f64;
    let mut keyed: Vec<(f64, usize)> = assigned
        .iter()
        .map(|&p| {
            let w = (min_area / area[&mask.fine[p]] as f64).clamp(MIN_SAMPLE_WEIGHT, 1.0);
            let u: f64 = rng.random::<f64>();
            // ln(u)/w orders like u^(1/w); larger is better.
            ((1.0 - u).ln() / w, p)
        })
        .collect();
    keyed.select_nth_unstable_by(n - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = keyed[..n].iter().map(|k| k.1).collect();
    out.sort_unstable();
    out
}
