//! Deployable ordering transforms applied at the memory-controller egress:
//! per-flit descending sort, affiliated ordering (pairs move together),
//! separated ordering (independent halves plus recovery indices), flit
//! packing with input/weight halves and zero padding, and deordering.
//!
//! Every transform is a pure rearrangement: the output words are exactly
//! the input words as a multiset.

use serde::{Deserialize, Serialize};

use crate::bits::{BitWord, Flit, FlitKind, WordWidth};
use crate::error::{BtError, Result};

/// The (input, weight) pairs feeding one neuron's multiply-accumulate; the
/// unit ordering must keep semantically intact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBlock {
    pairs: Vec<(BitWord, BitWord)>,
    neuron_id: u64,
}

impl PairBlock {
    pub fn new(pairs: Vec<(BitWord, BitWord)>, neuron_id: u64) -> Result<Self> {
        if let Some(&(i0, w0)) = pairs.first() {
            for &(i, w) in &pairs {
                if i.width() != i0.width() {
                    return Err(BtError::WidthMismatch {
                        expected: i0.width().bits(),
                        got: i.width().bits(),
                    });
                }
                if w.width() != w0.width() {
                    return Err(BtError::WidthMismatch {
                        expected: w0.width().bits(),
                        got: w.width().bits(),
                    });
                }
            }
        }
        Ok(Self { pairs, neuron_id })
    }

    pub fn pairs(&self) -> &[(BitWord, BitWord)] {
        &self.pairs
    }

    pub fn neuron_id(&self) -> u64 {
        self.neuron_id
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Data transmission ordering scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrderingScheme {
    /// Baseline, no ordering.
    O0Baseline,
    /// Pairs permuted as units, keyed on weight '1'-bit counts.
    O1Affiliated,
    /// Inputs and weights sorted independently on their own counts.
    O2Separated,
}

impl OrderingScheme {
    pub fn label(&self) -> &'static str {
        match self {
            OrderingScheme::O0Baseline => "O0",
            OrderingScheme::O1Affiliated => "O1",
            OrderingScheme::O2Separated => "O2",
        }
    }
}

impl std::fmt::Display for OrderingScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// A slot permutation plus the minimal index width needed to ship it.
/// `perm[sorted_position] = original_position`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationIndex {
    perm: Vec<usize>,
    bits_per_index: u32,
}

impl PermutationIndex {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || seen[p] {
                return Err(BtError::NotAPermutation(n));
            }
            seen[p] = true;
        }
        Ok(Self {
            bits_per_index: ceil_log2(n),
            perm,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
            bits_per_index: ceil_log2(n),
        }
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn bits_per_index(&self) -> u32 {
        self.bits_per_index
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }
}

fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Stable descending sort of slot indices by '1'-bit count; ties keep their
/// original relative order so every ordering is deterministic.
fn descending_perm(words: &[BitWord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..words.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(words[i].popcount()));
    order
}

/// Permute a flit's words so popcounts are non-increasing. Returns the
/// sorted flit and the permutation mapping sorted position → original
/// position. Pad slots carry count 0 and sink to the end.
pub fn sort_flit_descending(flit: &Flit) -> (Flit, PermutationIndex) {
    let order = descending_perm(flit.words());
    let words = order.iter().map(|&i| flit.words()[i]).collect();
    let pads = order.iter().map(|&i| flit.pad_mask()[i]).collect();
    let sorted = flit
        .with_layout(words, pads)
        .expect("permutation preserves flit invariants");
    let perm = PermutationIndex::new(order).expect("sort order is a bijection");
    (sorted, perm)
}

/// Divide a block's pairs into flits: inputs fill the left half, the
/// corresponding weights the right half, slot i input paired with slot i
/// weight. The final flit zero-pads unused slots with the pad mask set.
pub fn pack_pairs_into_flits(block: &PairBlock, values_per_flit: usize) -> Result<Vec<Flit>> {
    if values_per_flit == 0 || values_per_flit % 2 != 0 {
        return Err(BtError::OddValuesPerFlit(values_per_flit));
    }
    if block.is_empty() {
        return Ok(Vec::new());
    }
    let half = values_per_flit / 2;
    let (in_w, wt_w) = {
        let &(i, w) = &block.pairs()[0];
        (i.width(), w.width())
    };
    let mut flits = Vec::with_capacity(block.len().div_ceil(half));
    for chunk in block.pairs().chunks(half) {
        let mut words = Vec::with_capacity(values_per_flit);
        let mut pads = Vec::with_capacity(values_per_flit);
        for slot in 0..half {
            match chunk.get(slot) {
                Some(&(input, _)) => {
                    words.push(input);
                    pads.push(false);
                }
                None => {
                    words.push(BitWord::zero(in_w));
                    pads.push(true);
                }
            }
        }
        for slot in 0..half {
            match chunk.get(slot) {
                Some(&(_, weight)) => {
                    words.push(weight);
                    pads.push(false);
                }
                None => {
                    words.push(BitWord::zero(wt_w));
                    pads.push(true);
                }
            }
        }
        flits.push(Flit::new(words, FlitKind::Body, pads)?);
    }
    Ok(flits)
}

fn split_halves(flit: &Flit) -> Result<usize> {
    let n = flit.words().len();
    if n == 0 || n % 2 != 0 {
        return Err(BtError::MalformedHalves(n));
    }
    Ok(n / 2)
}

/// Affiliated ordering: within each flit, (input, weight) pairs are permuted
/// as units so weight popcounts are non-increasing. Pairing holds
/// slot-by-slot, so no recovery index is needed downstream.
pub fn affiliated_order(flits: &[Flit]) -> Result<Vec<Flit>> {
    flits
        .iter()
        .map(|flit| {
            let half = split_halves(flit)?;
            let order = descending_perm(&flit.words()[half..]);
            let mut words = Vec::with_capacity(2 * half);
            let mut pads = Vec::with_capacity(2 * half);
            for &j in &order {
                words.push(flit.words()[j]);
                pads.push(flit.pad_mask()[j]);
            }
            for &j in &order {
                words.push(flit.words()[half + j]);
                pads.push(flit.pad_mask()[half + j]);
            }
            flit.with_layout(words, pads)
        })
        .collect()
}

/// Separated ordering: each half sorted descending on its own popcounts.
/// The returned per-flit permutations (sorted position → original position,
/// per half) suffice to re-pair inputs with weights.
pub fn separated_order(
    flits: &[Flit],
) -> Result<(Vec<Flit>, Vec<PermutationIndex>, Vec<PermutationIndex>)> {
    let mut out = Vec::with_capacity(flits.len());
    let mut input_perms = Vec::with_capacity(flits.len());
    let mut weight_perms = Vec::with_capacity(flits.len());
    for flit in flits {
        let half = split_halves(flit)?;
        let in_order = descending_perm(&flit.words()[..half]);
        let wt_order = descending_perm(&flit.words()[half..]);
        let mut words = Vec::with_capacity(2 * half);
        let mut pads = Vec::with_capacity(2 * half);
        for &j in &in_order {
            words.push(flit.words()[j]);
            pads.push(flit.pad_mask()[j]);
        }
        for &j in &wt_order {
            words.push(flit.words()[half + j]);
            pads.push(flit.pad_mask()[half + j]);
        }
        out.push(flit.with_layout(words, pads)?);
        input_perms.push(PermutationIndex::new(in_order)?);
        weight_perms.push(PermutationIndex::new(wt_order)?);
    }
    Ok((out, input_perms, weight_perms))
}

/// Invert an ordering: `deorder(sorted, perm)` restores the original flit
/// when `perm` came from the sort that produced it.
pub fn deorder(flit: &Flit, perm: &PermutationIndex) -> Result<Flit> {
    let n = flit.words().len();
    if perm.len() != n {
        return Err(BtError::PermLengthMismatch {
            perm: perm.len(),
            slots: n,
        });
    }
    let mut words = vec![BitWord::zero(WordWidth::W8); n];
    let mut pads = vec![false; n];
    for (i, &orig) in perm.perm().iter().enumerate() {
        words[orig] = flit.words()[i];
        pads[orig] = flit.pad_mask()[i];
    }
    flit.with_layout(words, pads)
}

/// Deorder a half/half flit whose halves were permuted independently.
pub fn deorder_halves(
    flit: &Flit,
    input_perm: &PermutationIndex,
    weight_perm: &PermutationIndex,
) -> Result<Flit> {
    let half = split_halves(flit)?;
    if input_perm.len() != half || weight_perm.len() != half {
        return Err(BtError::PermLengthMismatch {
            perm: input_perm.len(),
            slots: half,
        });
    }
    let mut combined = Vec::with_capacity(2 * half);
    combined.extend_from_slice(input_perm.perm());
    combined.extend(weight_perm.perm().iter().map(|&p| p + half));
    deorder(flit, &PermutationIndex::new(combined)?)
}

/// Per-flit recovery-index overhead in bits. Affiliated ordering needs none;
/// separated ordering ships one minimal-width index per slot of the half
/// that must be re-paired (the other half serves as the reference order).
pub fn index_overhead_bits(scheme: OrderingScheme, values_per_flit: usize) -> u32 {
    match scheme {
        OrderingScheme::O0Baseline | OrderingScheme::O1Affiliated => 0,
        OrderingScheme::O2Separated => {
            let half = values_per_flit / 2;
            half as u32 * ceil_log2(half)
        }
    }
}

/// How flit payloads are laid out for the no-NoC experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlitLayout {
    /// Whole flit is weights; ordering sorts the full flit.
    WeightsOnly,
    /// Inputs in the left half, weights in the right.
    HalfHalf,
}

/// Apply a scheme to a flit stream under the given layout. For weights-only
/// payloads both ordering schemes reduce to the full-flit descending sort.
pub fn order_flits(flits: &[Flit], scheme: OrderingScheme, layout: FlitLayout) -> Result<Vec<Flit>> {
    match (scheme, layout) {
        (OrderingScheme::O0Baseline, _) => Ok(flits.to_vec()),
        (_, FlitLayout::WeightsOnly) => Ok(flits
            .iter()
            .map(|f| sort_flit_descending(f).0)
            .collect()),
        (OrderingScheme::O1Affiliated, FlitLayout::HalfHalf) => affiliated_order(flits),
        (OrderingScheme::O2Separated, FlitLayout::HalfHalf) => {
            Ok(separated_order(flits)?.0)
        }
    }
}
