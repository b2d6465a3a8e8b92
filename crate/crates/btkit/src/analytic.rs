//! Closed-form BT expectation model over '1'-bit counts, the cross-product
//! maximization objective, the count-based interleaved-descending
//! arrangement, and a brute-force oracle certifying its optimality on small
//! instances.
//!
//! With the first word holding `x` ones and the second `y` ones out of `b`
//! bits, and bit positions i.i.d., the expected transitions between them are
//! `x + y - 2xy/b`. Across two flits the cross-product sum `F = Σ xᵢ·yᵢ` is
//! the only arrangement-dependent term, so minimizing expected BT means
//! maximizing `F`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{BtError, Result};

/// The '1'-bit counts of a word sequence at a fixed word width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountProfile {
    counts: Vec<u32>,
    width: u32,
}

impl CountProfile {
    pub fn new(counts: Vec<u32>, width: u32) -> Result<Self> {
        for &c in &counts {
            if c > width {
                return Err(BtError::CountOutOfRange { count: c, width });
            }
        }
        Ok(Self { counts, width })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn width(&self) -> u32 {
        self.width
    }
}

/// A rearrangement of a count multiset into two equal-length flit count
/// sequences. Only positions change; the combined multiset is preserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arrangement {
    pub flit1_counts: Vec<u32>,
    pub flit2_counts: Vec<u32>,
}

impl Arrangement {
    /// Cross-product objective of this arrangement.
    pub fn objective(&self) -> u64 {
        objective_f(&self.flit1_counts, &self.flit2_counts).expect("equal lengths by construction")
    }
}

fn check_counts(x: u32, y: u32, b: u32) -> Result<()> {
    if b == 0 {
        return Err(BtError::CountOutOfRange { count: 0, width: 0 });
    }
    if x > b {
        return Err(BtError::CountOutOfRange { count: x, width: b });
    }
    if y > b {
        return Err(BtError::CountOutOfRange { count: y, width: b });
    }
    Ok(())
}

/// Probability that one wire toggles between two `b`-bit words holding `x`
/// and `y` ones: `1 - (b-x)(b-y)/b^2 - xy/b^2`.
pub fn p_transition_one_link(x: u32, y: u32, b: u32) -> Result<f64> {
    check_counts(x, y, b)?;
    let bb = (b as f64) * (b as f64);
    let both_zero = ((b - x) as f64) * ((b - y) as f64) / bb;
    let both_one = (x as f64) * (y as f64) / bb;
    Ok(1.0 - both_zero - both_one)
}

/// Expected BT between two words: `b` wires times the per-wire toggle
/// probability, which reduces to `x + y - 2xy/b`.
pub fn expected_bt_pair(x: u32, y: u32, b: u32) -> Result<f64> {
    Ok(b as f64 * p_transition_one_link(x, y, b)?)
}

/// Expected BT between two flits: the sum of per-slot pair expectations,
/// `Σxᵢ + Σyᵢ - (2/b)·Σ(xᵢ·yᵢ)`.
pub fn expected_bt_flits(xs: &CountProfile, ys: &CountProfile) -> Result<f64> {
    if xs.width() != ys.width() {
        return Err(BtError::WidthMismatch {
            expected: xs.width(),
            got: ys.width(),
        });
    }
    if xs.counts().len() != ys.counts().len() {
        return Err(BtError::LengthMismatch {
            left: xs.counts().len(),
            right: ys.counts().len(),
        });
    }
    let mut total = 0.0;
    for (&x, &y) in xs.counts().iter().zip(ys.counts()) {
        total += expected_bt_pair(x, y, xs.width())?;
    }
    Ok(total)
}

/// The arrangement objective `F = Σ xᵢ·yᵢ`. The count sums are fixed by the
/// data, so maximizing `F` minimizes the expected BT.
pub fn objective_f(xs: &[u32], ys: &[u32]) -> Result<u64> {
    if xs.len() != ys.len() {
        return Err(BtError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    Ok(xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| x as u64 * y as u64)
        .sum())
}

/// Count-based arrangement: sort the combined multiset descending (stable on
/// ties) and deal alternately, so counts interleave as
/// `x₁ ≥ y₁ ≥ x₂ ≥ y₂ ≥ …`.
pub fn interleaved_descending(counts: &[u32]) -> Result<Arrangement> {
    if counts.len() % 2 != 0 {
        return Err(BtError::OddMultiset(counts.len()));
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(counts[i]));
    let mut flit1 = Vec::with_capacity(counts.len() / 2);
    let mut flit2 = Vec::with_capacity(counts.len() / 2);
    for (rank, &i) in order.iter().enumerate() {
        if rank % 2 == 0 {
            flit1.push(counts[i]);
        } else {
            flit2.push(counts[i]);
        }
    }
    Ok(Arrangement {
        flit1_counts: flit1,
        flit2_counts: flit2,
    })
}

/// Largest multiset the brute-force search accepts.
pub const BRUTE_FORCE_LIMIT: usize = 12;

fn next_permutation(v: &mut [u32]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Exhaustive maximum of [`objective_f`] over every way to split-and-align
/// the multiset into two N-sequences, enumerated as the unique permutations
/// of the multiset into 2N slots. The test oracle for the ordering's
/// global-optimality claim.
pub fn brute_force_max_f(counts: &[u32]) -> Result<(u64, Arrangement)> {
    if counts.len() % 2 != 0 {
        return Err(BtError::OddMultiset(counts.len()));
    }
    if counts.len() > BRUTE_FORCE_LIMIT {
        return Err(BtError::InstanceTooLarge {
            size: counts.len(),
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let n = counts.len() / 2;
    let mut perm = counts.to_vec();
    perm.sort_unstable();
    let mut best = None::<(u64, Vec<u32>)>;
    loop {
        let f: u64 = (0..n).map(|i| perm[i] as u64 * perm[n + i] as u64).sum();
        if best.as_ref().map_or(true, |(bf, _)| f > *bf) {
            best = Some((f, perm.clone()));
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    let (max_f, witness) = best.expect("at least one permutation exists");
    Ok((
        max_f,
        Arrangement {
            flit1_counts: witness[..n].to_vec(),
            flit2_counts: witness[n..].to_vec(),
        },
    ))
}

/// Empirical mean and standard error from a Monte Carlo run.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub trials: u64,
}

/// Mean BT over random placements of `x` ones in one `b`-bit word and `y`
/// ones in another, positions uniform. Validates the closed-form
/// expectation empirically. Reproducible per (seed, trials).
pub fn monte_carlo_expected_bt(x: u32, y: u32, b: u32, trials: u64, seed: u64) -> McEstimate {
    assert!(trials >= 1, "at least one trial required");
    assert!(b >= 1 && b <= 64, "word width must be in 1..=64");
    assert!(x <= b && y <= b, "counts must not exceed width");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for _ in 0..trials {
        let a = random_word_with_ones(&mut rng, b, x);
        let c = random_word_with_ones(&mut rng, b, y);
        let bt = (a ^ c).count_ones() as f64;
        sum += bt;
        sum_sq += bt * bt;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = if trials > 1 {
        ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    McEstimate {
        mean,
        std_err: (var / n).sqrt(),
        trials,
    }
}

fn random_word_with_ones(rng: &mut ChaCha8Rng, b: u32, ones: u32) -> u64 {
    let idx = rand::seq::index::sample(rng, b as usize, ones as usize);
    let mut word = 0u64;
    for i in idx {
        word |= 1u64 << i;
    }
    word
}

/// Outcome of exhaustively checking the interleaved-descending arrangement
/// against the brute-force maximum over every count multiset with at most
/// `max_n` values per flit and counts up to `max_b`.
#[derive(Debug, Clone)]
pub struct OptimalityReport {
    pub multisets_checked: u64,
    pub counterexample: Option<Vec<u32>>,
}

impl OptimalityReport {
    pub fn holds(&self) -> bool {
        self.counterexample.is_none()
    }
}

/// Enumerate all multisets (non-decreasing sequences) of size 2N, N ≤ max_n,
/// with values in 0..=max_b, and compare the interleaved arrangement's F to
/// the exhaustive maximum. Returns the first counterexample if any exists.
pub fn verify_interleaved_optimality(max_n: usize, max_b: u32) -> Result<OptimalityReport> {
    let mut checked = 0u64;
    for n in 1..=max_n {
        let size = 2 * n;
        if size > BRUTE_FORCE_LIMIT {
            return Err(BtError::InstanceTooLarge {
                size,
                limit: BRUTE_FORCE_LIMIT,
            });
        }
        let mut multiset = vec![0u32; size];
        loop {
            checked += 1;
            let arranged = interleaved_descending(&multiset)?;
            let (max_f, _) = brute_force_max_f(&multiset)?;
            if arranged.objective() != max_f {
                return Ok(OptimalityReport {
                    multisets_checked: checked,
                    counterexample: Some(multiset),
                });
            }
            if !advance_multiset(&mut multiset, max_b) {
                break;
            }
        }
    }
    Ok(OptimalityReport {
        multisets_checked: checked,
        counterexample: None,
    })
}

/// Advance a non-decreasing sequence to the next one over 0..=max_b, odometer
/// style. Returns false after the last (all max_b) sequence.
fn advance_multiset(v: &mut [u32], max_b: u32) -> bool {
    let n = v.len();
    for i in (0..n).rev() {
        if v[i] < max_b {
            v[i] += 1;
            let fill = v[i];
            for slot in v[i + 1..].iter_mut() {
                *slot = fill;
            }
            return true;
        }
    }
    false
}

/// Exhaustively verify the four-element exchange step of the ordering proof:
/// for any counts (xi, xj, yi, yj) ≤ max_b, pairing the sorted-descending
/// values adjacently never lowers the pairwise product sum.
pub fn verify_exchange_lemma(max_b: u32) -> Option<[u32; 4]> {
    for xi in 0..=max_b {
        for xj in 0..=max_b {
            for yi in 0..=max_b {
                for yj in 0..=max_b {
                    let mut sorted = [xi, xj, yi, yj];
                    sorted.sort_unstable_by(|a, b| b.cmp(a));
                    let reordered =
                        sorted[0] as u64 * sorted[1] as u64 + sorted[2] as u64 * sorted[3] as u64;
                    let original = xi as u64 * yi as u64 + xj as u64 * yj as u64;
                    if reordered < original {
                        return Some([xi, xj, yi, yj]);
                    }
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_transition_boundary_cases() {
        assert_eq!(p_transition_one_link(0, 0, 32).unwrap(), 0.0);
        assert_eq!(p_transition_one_link(32, 0, 32).unwrap(), 1.0);
        assert_eq!(p_transition_one_link(16, 16, 32).unwrap(), 0.5);
        assert_eq!(p_transition_one_link(32, 32, 32).unwrap(), 0.0);
    }

    #[test]
    fn p_transition_rejects_out_of_range() {
        assert!(p_transition_one_link(33, 0, 32).is_err());
        assert!(p_transition_one_link(0, 9, 8).is_err());
        assert!(p_transition_one_link(0, 0, 0).is_err());
    }

    #[test]
    fn expected_bt_pair_values() {
        assert_eq!(expected_bt_pair(32, 32, 32).unwrap(), 0.0);
        assert_eq!(expected_bt_pair(16, 16, 32).unwrap(), 16.0);
        // 8 + 4 - 8*4/16 = 10
        assert_eq!(expected_bt_pair(8, 4, 32).unwrap(), 10.0);
    }

    #[test]
    fn expected_bt_pair_matches_closed_form_for_word_widths() {
        // x + y - 2xy/b, exact for power-of-two widths.
        for b in [8u32, 32] {
            for x in 0..=b {
                for y in 0..=b {
                    let closed = x as f64 + y as f64 - 2.0 * (x as f64) * (y as f64) / b as f64;
                    assert_eq!(expected_bt_pair(x, y, b).unwrap(), closed, "x={x} y={y} b={b}");
                }
            }
        }
    }

    #[test]
    fn expectation_surface_shape() {
        // Maximal on the anti-diagonal corners, zero at (0,0) and (32,32).
        let mut max = f64::MIN;
        for x in 0..=32 {
            for y in 0..=32 {
                max = max.max(expected_bt_pair(x, y, 32).unwrap());
            }
        }
        assert_eq!(max, 32.0);
        assert_eq!(expected_bt_pair(32, 0, 32).unwrap(), 32.0);
        assert_eq!(expected_bt_pair(0, 32, 32).unwrap(), 32.0);
        assert_eq!(expected_bt_pair(0, 0, 32).unwrap(), 0.0);
        assert_eq!(expected_bt_pair(32, 32, 32).unwrap(), 0.0);
    }

    #[test]
    fn expected_bt_flits_values() {
        let b = 32;
        let profile = |c: &[u32]| CountProfile::new(c.to_vec(), b).unwrap();
        assert_eq!(
            expected_bt_flits(&profile(&[0, 0]), &profile(&[0, 0])).unwrap(),
            0.0
        );
        assert_eq!(
            expected_bt_flits(&profile(&[16]), &profile(&[16])).unwrap(),
            16.0
        );
        // 8+4+4+8 - (32+32)/16 = 20
        assert_eq!(
            expected_bt_flits(&profile(&[8, 4]), &profile(&[4, 8])).unwrap(),
            20.0
        );
    }

    #[test]
    fn expected_bt_flits_rejects_mismatch() {
        let a = CountProfile::new(vec![1, 2], 32).unwrap();
        let b = CountProfile::new(vec![1], 32).unwrap();
        assert!(expected_bt_flits(&a, &b).is_err());
        let c = CountProfile::new(vec![1, 2], 8).unwrap();
        assert!(expected_bt_flits(&a, &c).is_err());
    }

    #[test]
    fn count_profile_rejects_oversized_counts() {
        assert!(CountProfile::new(vec![9], 8).is_err());
    }

    #[test]
    fn objective_f_values() {
        assert_eq!(objective_f(&[3, 1], &[2, 0]).unwrap(), 6);
        assert_eq!(objective_f(&[0, 0, 0], &[5, 7, 1]).unwrap(), 0);
        assert_eq!(objective_f(&[7, 2], &[4, 1]).unwrap(), 30);
        assert!(objective_f(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn interleaved_descending_examples() {
        let arr = interleaved_descending(&[7, 1, 4, 2]).unwrap();
        assert_eq!(arr.flit1_counts, vec![7, 2]);
        assert_eq!(arr.flit2_counts, vec![4, 1]);

        let arr = interleaved_descending(&[5, 5, 5, 5]).unwrap();
        assert_eq!(arr.flit1_counts, vec![5, 5]);
        assert_eq!(arr.flit2_counts, vec![5, 5]);

        let arr = interleaved_descending(&[3, 2, 1, 0]).unwrap();
        assert_eq!(arr.flit1_counts, vec![3, 1]);
        assert_eq!(arr.flit2_counts, vec![2, 0]);
        assert_eq!(arr.objective(), 6);

        assert!(interleaved_descending(&[1, 2, 3]).is_err());
    }

    #[test]
    fn interleaved_counts_interleave() {
        let arr = interleaved_descending(&[9, 3, 7, 7, 0, 2]).unwrap();
        // x1 >= y1 >= x2 >= y2 >= x3 >= y3
        for i in 0..arr.flit1_counts.len() {
            assert!(arr.flit1_counts[i] >= arr.flit2_counts[i]);
            if i + 1 < arr.flit1_counts.len() {
                assert!(arr.flit2_counts[i] >= arr.flit1_counts[i + 1]);
            }
        }
    }

    #[test]
    fn brute_force_examples() {
        let (f, _) = brute_force_max_f(&[3, 2, 1, 0]).unwrap();
        assert_eq!(f, 6);
        let (f, w) = brute_force_max_f(&[4, 4]).unwrap();
        assert_eq!(f, 16);
        assert_eq!(w.flit1_counts.len(), 1);
        let (f, _) = brute_force_max_f(&[7, 1, 4, 2]).unwrap();
        assert_eq!(f, 30);
        assert_eq!(interleaved_descending(&[7, 1, 4, 2]).unwrap().objective(), f);
    }

    #[test]
    fn brute_force_guards() {
        assert!(brute_force_max_f(&[1, 2, 3]).is_err());
        assert!(brute_force_max_f(&vec![1; 14]).is_err());
    }

    #[test]
    fn conservation_of_multiset_sum() {
        let multiset = [9u32, 3, 7, 7, 0, 2, 31, 16];
        let arr = interleaved_descending(&multiset).unwrap();
        let rearranged: u64 = arr
            .flit1_counts
            .iter()
            .chain(&arr.flit2_counts)
            .map(|&c| c as u64)
            .sum();
        let original: u64 = multiset.iter().map(|&c| c as u64).sum();
        assert_eq!(rearranged, original);
    }

    #[test]
    fn monte_carlo_deterministic_edges() {
        let est = monte_carlo_expected_bt(0, 0, 32, 100, 7);
        assert_eq!(est.mean, 0.0);
        let est = monte_carlo_expected_bt(32, 0, 32, 100, 7);
        assert_eq!(est.mean, 32.0);
        assert_eq!(est.std_err, 0.0);
    }

    #[test]
    fn monte_carlo_converges_to_expectation() {
        let est = monte_carlo_expected_bt(16, 16, 32, 10_000, 42);
        let expected = expected_bt_pair(16, 16, 32).unwrap();
        assert!(
            (est.mean - expected).abs() <= 3.0 * est.std_err,
            "mean {} vs expected {expected} (3se = {})",
            est.mean,
            3.0 * est.std_err
        );
    }

    #[test]
    fn monte_carlo_reproducible_per_seed() {
        let a = monte_carlo_expected_bt(5, 20, 32, 1000, 11);
        let b = monte_carlo_expected_bt(5, 20, 32, 1000, 11);
        assert_eq!(a.mean, b.mean);
        let c = monte_carlo_expected_bt(5, 20, 32, 1000, 12);
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn exchange_lemma_small() {
        assert_eq!(verify_exchange_lemma(6), None);
    }

    #[test]
    fn optimality_small_instances() {
        let report = verify_interleaved_optimality(2, 4).unwrap();
        assert!(report.holds(), "counterexample: {:?}", report.counterexample);
        assert!(report.multisets_checked > 0);
    }
}
