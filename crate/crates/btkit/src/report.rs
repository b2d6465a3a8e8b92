//! Statistics and reporting: per-bit-position '1' and transition
//! probabilities, BT reduction rates, link power estimation, the no-NoC
//! comparison harness, and CSV/JSON export.
//!
//! Bit positions are MSB-first, so position 0 is the sign bit for both
//! float-32 and two's-complement fixed-8 words.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{bit_transitions, BitWord, Flit};
use crate::error::{BtError, Result};
use crate::nocsim::SimReport;
use crate::ordering::{order_flits, FlitLayout, OrderingScheme};

/// Per-bit-position accumulators over a word stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitPositionHistogram {
    width: u32,
    ones_count: Vec<u64>,
    transitions_count: Vec<u64>,
    samples: u64,
    pairs: u64,
}

impl BitPositionHistogram {
    pub fn new(width: u32) -> Self {
        Self {
            width,
            ones_count: vec![0; width as usize],
            transitions_count: vec![0; width as usize],
            samples: 0,
            pairs: 0,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn pairs(&self) -> u64 {
        self.pairs
    }

    fn bit_at(&self, raw: u32, pos: u32) -> u32 {
        (raw >> (self.width - 1 - pos)) & 1
    }

    /// Accumulate '1' frequencies for every word and transition frequencies
    /// for every consecutive word pair in the stream.
    pub fn accumulate_words(&mut self, words: &[BitWord]) -> Result<()> {
        for word in words {
            if word.width().bits() != self.width {
                return Err(BtError::WidthMismatch {
                    expected: self.width,
                    got: word.width().bits(),
                });
            }
            for pos in 0..self.width {
                self.ones_count[pos as usize] += self.bit_at(word.raw(), pos) as u64;
            }
            self.samples += 1;
        }
        for pair in words.windows(2) {
            let x = pair[0].raw() ^ pair[1].raw();
            for pos in 0..self.width {
                self.transitions_count[pos as usize] += self.bit_at(x, pos) as u64;
            }
            self.pairs += 1;
        }
        Ok(())
    }

    /// Accumulate a flit stream slot-wise: slot k of consecutive flits forms
    /// one word sub-stream on the same wires, all folded into the word-width
    /// positions.
    pub fn accumulate_flit_stream(&mut self, flits: &[Flit]) -> Result<()> {
        for flit in flits {
            for word in flit.words() {
                if word.width().bits() != self.width {
                    return Err(BtError::WidthMismatch {
                        expected: self.width,
                        got: word.width().bits(),
                    });
                }
                for pos in 0..self.width {
                    self.ones_count[pos as usize] += self.bit_at(word.raw(), pos) as u64;
                }
                self.samples += 1;
            }
        }
        for pair in flits.windows(2) {
            if pair[0].words().len() != pair[1].words().len() {
                return Err(BtError::LengthMismatch {
                    left: pair[0].words().len(),
                    right: pair[1].words().len(),
                });
            }
            for (a, b) in pair[0].words().iter().zip(pair[1].words()) {
                let x = a.raw() ^ b.raw();
                for pos in 0..self.width {
                    self.transitions_count[pos as usize] += self.bit_at(x, pos) as u64;
                }
                self.pairs += 1;
            }
        }
        Ok(())
    }

    /// Combine accumulators from parallel shards. Associative, commutative.
    pub fn merge(&mut self, other: &BitPositionHistogram) -> Result<()> {
        if other.width != self.width {
            return Err(BtError::WidthMismatch {
                expected: self.width,
                got: other.width,
            });
        }
        for (a, b) in self.ones_count.iter_mut().zip(&other.ones_count) {
            *a += b;
        }
        for (a, b) in self.transitions_count.iter_mut().zip(&other.transitions_count) {
            *a += b;
        }
        self.samples += other.samples;
        self.pairs += other.pairs;
        Ok(())
    }

    pub fn p_one(&self, pos: u32) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.ones_count[pos as usize] as f64 / self.samples as f64
        }
    }

    pub fn p_transition(&self, pos: u32) -> f64 {
        if self.pairs == 0 {
            0.0
        } else {
            self.transitions_count[pos as usize] as f64 / self.pairs as f64
        }
    }

    pub fn total_transitions(&self) -> u64 {
        self.transitions_count.iter().sum()
    }

    pub fn mean_transition_probability(&self) -> f64 {
        if self.pairs == 0 {
            return 0.0;
        }
        (0..self.width).map(|p| self.p_transition(p)).sum::<f64>() / self.width as f64
    }
}

/// Link power model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerParams {
    /// Energy per wire toggle, picojoules.
    pub energy_per_toggle_pj: f64,
    pub link_width: u32,
    pub link_count: u32,
    /// Clock frequency, hertz.
    pub frequency_hz: f64,
    /// Fraction of wires toggling per cycle, (0, 1].
    pub activity: f64,
}

impl PowerParams {
    fn validate(&self) -> Result<()> {
        if !(self.energy_per_toggle_pj > 0.0) {
            return Err(BtError::InvalidPowerParam("energy_per_toggle_pj"));
        }
        if self.link_width == 0 {
            return Err(BtError::InvalidPowerParam("link_width"));
        }
        if self.link_count == 0 {
            return Err(BtError::InvalidPowerParam("link_count"));
        }
        if !(self.frequency_hz > 0.0) {
            return Err(BtError::InvalidPowerParam("frequency_hz"));
        }
        if !(self.activity > 0.0 && self.activity <= 1.0) {
            return Err(BtError::InvalidPowerParam("activity"));
        }
        Ok(())
    }
}

/// Aggregate link power in watts: toggle energy times toggling wires per
/// cycle times link count times frequency.
pub fn link_power(params: &PowerParams) -> Result<f64> {
    params.validate()?;
    Ok(params.energy_per_toggle_pj
        * 1e-12
        * (params.link_width as f64 * params.activity)
        * params.link_count as f64
        * params.frequency_hz)
}

/// Power after a BT reduction of `reduction_pct` percent.
pub fn reduced_power(watts: f64, reduction_pct: f64) -> f64 {
    watts * (1.0 - reduction_pct / 100.0)
}

/// Percentage reduction of `ordered` relative to `baseline`, computed from
/// raw totals before any display rounding.
pub fn bt_reduction_rate(baseline: f64, ordered: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(BtError::UndefinedRate);
    }
    Ok(100.0 * (baseline - ordered) / baseline)
}

/// One Table-I-shaped comparison row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoNocSummary {
    pub scheme: String,
    pub flit_count: usize,
    pub flit_bits: u32,
    pub seed: u64,
    pub baseline_mean_bt: f64,
    pub ordered_mean_bt: f64,
    pub reduction_pct: f64,
}

/// The no-NoC experiment: shuffle the flit stream with the run seed, sum
/// transitions over consecutive pairs for the baseline and the scheme-ordered
/// stream, and report means plus the reduction rate.
pub fn summarize_no_noc(
    flits: &[Flit],
    scheme: OrderingScheme,
    layout: FlitLayout,
    seed: u64,
) -> Result<NoNocSummary> {
    if flits.len() < 2 {
        return Err(BtError::InsufficientFlits(flits.len()));
    }
    let mut shuffled: Vec<Flit> = flits.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..shuffled.len()).rev() {
        let j = rng.gen_range(0..=i);
        shuffled.swap(i, j);
    }
    let ordered = order_flits(&shuffled, scheme, layout)?;
    let stream_bt = |stream: &[Flit]| -> Result<u64> {
        stream
            .windows(2)
            .map(|w| bit_transitions(&w[0], &w[1]))
            .sum()
    };
    let baseline_total = stream_bt(&shuffled)?;
    let ordered_total = stream_bt(&ordered)?;
    if baseline_total == 0 {
        return Err(BtError::UndefinedRate);
    }
    let pairs = (shuffled.len() - 1) as f64;
    Ok(NoNocSummary {
        scheme: scheme.label().to_string(),
        flit_count: flits.len(),
        flit_bits: flits[0].total_bits(),
        seed,
        baseline_mean_bt: baseline_total as f64 / pairs,
        ordered_mean_bt: ordered_total as f64 / pairs,
        reduction_pct: bt_reduction_rate(baseline_total as f64, ordered_total as f64)?,
    })
}

fn io_err(e: std::io::Error) -> BtError {
    BtError::WeightFile(e.to_string())
}

/// Write the per-position probability CSV for a baseline/ordered pair.
/// `comments` lines are emitted as `# `-prefixed header metadata.
pub fn write_bit_position_csv<W: Write>(
    mut out: W,
    comments: &[String],
    baseline: &BitPositionHistogram,
    ordered: &BitPositionHistogram,
) -> Result<()> {
    if baseline.width() != ordered.width() {
        return Err(BtError::WidthMismatch {
            expected: baseline.width(),
            got: ordered.width(),
        });
    }
    writeln!(out, "# schema=bit_position_v1").map_err(io_err)?;
    for c in comments {
        writeln!(out, "# {c}").map_err(io_err)?;
    }
    writeln!(
        out,
        "bit_position,p_one_baseline,p_one_ordered,p_tr_baseline,p_tr_ordered"
    )
    .map_err(io_err)?;
    for pos in 0..baseline.width() {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6}",
            pos,
            baseline.p_one(pos),
            ordered.p_one(pos),
            baseline.p_transition(pos),
            ordered.p_transition(pos)
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Write Table-I-shaped summary rows.
pub fn write_no_noc_csv<W: Write>(
    mut out: W,
    comments: &[String],
    rows: &[(String, NoNocSummary)],
) -> Result<()> {
    writeln!(out, "# schema=no_noc_summary_v1").map_err(io_err)?;
    for c in comments {
        writeln!(out, "# {c}").map_err(io_err)?;
    }
    writeln!(
        out,
        "weights,flit_size_bits,bt_baseline_per_flit,bt_ordered_per_flit,reduction_rate_pct"
    )
    .map_err(io_err)?;
    for (label, row) in rows {
        writeln!(
            out,
            "{},{},{:.2},{:.2},{:.2}",
            label, row.flit_bits, row.baseline_mean_bt, row.ordered_mean_bt, row.reduction_pct
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Per-link detail CSV for a finished simulation.
pub fn write_link_csv<W: Write>(mut out: W, comments: &[String], report: &SimReport) -> Result<()> {
    writeln!(out, "# schema=link_detail_v1").map_err(io_err)?;
    for c in comments {
        writeln!(out, "# {c}").map_err(io_err)?;
    }
    writeln!(out, "link_src,link_dst,dir,toggles,flits").map_err(io_err)?;
    for link in &report.links {
        writeln!(
            out,
            "{},{},{},{},{}",
            link.src,
            link.dst,
            link.dir.label(),
            link.toggles,
            link.flits
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// SimReport JSON pass-through.
pub fn report_to_json(report: &SimReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| BtError::WeightFile(e.to_string()))
}
