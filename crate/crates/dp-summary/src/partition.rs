//! Data-aware partitioning of a histogram domain, evaluated under encryption.
//!
//! A partition of `n` ordered domains into contiguous buckets is a cut mask:
//! bit `i` set means a boundary after domain `i`, so `n - 1` bits enumerate
//! all `2^(n-1)` partitions. The cost of an interval is the L1 deviation of
//! its counts from their mean; the cost of a partition is the sum over its
//! buckets. Interval costs are computed once into a table, noised with the
//! partitioning share of the budget, and the minimum-cost partition is then
//! selected by an encrypted fold of compare-and-select steps, so the choice
//! never appears in the clear on the computing side.
//!
//! Every encrypted function here has a plaintext mirror over [`PlainFixed`]
//! that performs the identical fixed-point arithmetic; the two agree bit for
//! bit, which the oracle and the equivalence tests rely on.

use std::collections::BTreeMap;

use crate::backend::{decrypt_bit, Backend, EncBit, SecretKey};
use crate::error::{Error, Result};
use crate::fixed::{
    enc_abs, enc_lt, enc_mul_plain, enc_select, enc_sub, enc_sum,
    encode, reciprocal, EncWord, FixedFormat, PlainFixed,
};
use crate::noise::{add_noise_enc, Label, LaplaceParams, NoiseLog, NoiseStream, Phase};

/// Default sensitivity of one interval deviation cost to a single record.
pub const DEFAULT_COST_SENSITIVITY: f64 = 2.0;

// ---------------------------------------------------------------------------
// Histogram and partitions
// ---------------------------------------------------------------------------

/// Counts over an ordered domain. Counts are nonnegative reals so the
/// plaintext mirror can run on already-noised intermediate data; pipelines
/// that synthesize records additionally require integral counts.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Histogram {
    counts: Vec<f64>,
}

impl Histogram {
    pub fn new(counts: Vec<f64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptyInput("histogram"));
        }
        if let Some(bad) = counts.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::InvalidInput(format!("histogram count {bad} is not a nonnegative real")));
        }
        Ok(Histogram { counts })
    }

    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn is_integral(&self) -> bool {
        self.counts.iter().all(|c| c.fract() == 0.0)
    }

    pub fn to_fixed(&self, format: FixedFormat) -> Result<Vec<PlainFixed>> {
        self.counts.iter().map(|&c| encode(c, format)).collect()
    }
}

/// Encrypts each count of a histogram into its own word.
pub fn encrypt_histogram(
    be: &Backend,
    key: &SecretKey,
    hist: &Histogram,
    format: FixedFormat,
) -> Result<Vec<EncWord>> {
    hist.to_fixed(format)?
        .into_iter()
        .map(|p| Ok(crate::fixed::enc_encrypt(be, key, p)))
        .collect()
}

/// A partition of `n` domains into contiguous buckets, named by its cut mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Partition {
    cut_mask: u64,
    n: usize,
}

impl Partition {
    pub fn from_mask(cut_mask: u64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput("partition domain"));
        }
        if n > 63 {
            return Err(Error::DomainTooLarge { n, max: 63 });
        }
        if cut_mask >> (n - 1) != 0 {
            return Err(Error::InvalidInput(format!(
                "cut mask {cut_mask} has bits beyond the {} boundary positions of n = {n}",
                n - 1
            )));
        }
        Ok(Partition { cut_mask, n })
    }

    pub fn cut_mask(&self) -> u64 {
        self.cut_mask
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of buckets.
    pub fn k(&self) -> usize {
        self.cut_mask.count_ones() as usize + 1
    }

    /// Buckets as inclusive index ranges, in domain order.
    pub fn buckets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.k());
        let mut start = 0;
        for i in 0..self.n - 1 {
            if self.cut_mask >> i & 1 == 1 {
                out.push((start, i));
                start = i + 1;
            }
        }
        out.push((start, self.n - 1));
        out
    }
}

/// Domain-size ceilings for partition enumeration. The encrypted path walks
/// all `2^(n-1)` partitions through circuits, so its ceiling is lower.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PartitionLimits {
    pub max_plain: usize,
    pub max_encrypted: usize,
}

impl Default for PartitionLimits {
    fn default() -> Self {
        PartitionLimits { max_plain: 12, max_encrypted: 8 }
    }
}

impl PartitionLimits {
    pub fn check_plain(&self, n: usize) -> Result<()> {
        if n > self.max_plain {
            return Err(Error::DomainTooLarge { n, max: self.max_plain });
        }
        Ok(())
    }

    pub fn check_encrypted(&self, n: usize) -> Result<()> {
        if n > self.max_encrypted {
            return Err(Error::DomainTooLarge { n, max: self.max_encrypted });
        }
        Ok(())
    }
}

/// All partitions of `n` domains in ascending cut-mask order.
pub fn enumerate_partitions(n: usize) -> Result<impl Iterator<Item = Partition>> {
    Partition::from_mask(0, n)?;
    Ok((0..1u64 << (n - 1)).map(move |mask| Partition { cut_mask: mask, n }))
}

// ---------------------------------------------------------------------------
// Interval costs
// ---------------------------------------------------------------------------

/// L1 deviation of the interval `[lo, hi]` from its fixed-point mean:
/// `sum = Σ x_i`, `avg = sum * recip(m)` with the reciprocal rounded onto
/// the grid, `cost = Σ |x_i - avg|`.
pub fn interval_cost(be: &Backend, x: &[EncWord], lo: usize, hi: usize) -> Result<EncWord> {
    if x.is_empty() {
        return Err(Error::EmptyInput("interval"));
    }
    if lo > hi || hi >= x.len() {
        return Err(Error::BadRange { l: lo, r: hi, n: x.len() });
    }
    let slice = &x[lo..=hi];
    let format = slice[0].format();
    let sum = enc_sum(be, slice)?;
    let avg = enc_mul_plain(be, &sum, reciprocal(slice.len(), format)?)?;
    let devs = slice
        .iter()
        .map(|xi| enc_abs(be, &enc_sub(be, xi, &avg)?))
        .collect::<Result<Vec<_>>>()?;
    enc_sum(be, &devs)
}

/// Plaintext mirror of [`interval_cost`]; bit-identical fixed-point steps.
pub fn plain_interval_cost(x: &[PlainFixed], lo: usize, hi: usize) -> Result<PlainFixed> {
    if x.is_empty() {
        return Err(Error::EmptyInput("interval"));
    }
    if lo > hi || hi >= x.len() {
        return Err(Error::BadRange { l: lo, r: hi, n: x.len() });
    }
    let slice = &x[lo..=hi];
    let format = slice[0].format();
    let sum = PlainFixed::sum(slice)?;
    let avg = sum.mul(&reciprocal(slice.len(), format)?)?;
    let devs = slice
        .iter()
        .map(|xi| Ok(xi.sub(&avg)?.abs()))
        .collect::<Result<Vec<_>>>()?;
    PlainFixed::sum(&devs)
}

/// Noisy per-interval costs for every `[lo, hi]`, keyed by the pair.
#[derive(Debug, Clone)]
pub struct EncCostTable {
    n: usize,
    entries: BTreeMap<(usize, usize), EncWord>,
}

impl EncCostTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, lo: usize, hi: usize) -> Option<&EncWord> {
        self.entries.get(&(lo, hi))
    }
}

/// Builds the noisy cost table: one Laplace draw per interval, labelled by
/// the interval's triangular index, exactly `n(n+1)/2` draws in total.
pub fn build_cost_table(
    be: &Backend,
    x: &[EncWord],
    params: &LaplaceParams,
    stream: &NoiseStream,
    log: &mut NoiseLog,
) -> Result<EncCostTable> {
    if x.is_empty() {
        return Err(Error::EmptyInput("histogram"));
    }
    let n = x.len();
    let mut entries = BTreeMap::new();
    for lo in 0..n {
        for hi in lo..n {
            let cost = interval_cost(be, x, lo, hi)?;
            let label = Label::new(Phase::CostTable, triangular_index(lo, hi, n));
            let noisy = add_noise_enc(be, &cost, params, stream, label, log)?;
            entries.insert((lo, hi), noisy);
        }
    }
    Ok(EncCostTable { n, entries })
}

/// Row-major triangular position of `[lo, hi]` among all intervals of an
/// `n`-domain histogram; the noise label for that interval.
pub fn triangular_index(lo: usize, hi: usize, n: usize) -> u64 {
    debug_assert!(lo <= hi && hi < n);
    (lo * n - lo * (lo + 1) / 2 + hi) as u64
}

/// Total cost of a partition: the sum of its buckets' table entries.
pub fn partition_total_cost(be: &Backend, table: &EncCostTable, p: &Partition) -> Result<EncWord> {
    if p.n() != table.n() {
        return Err(Error::InvalidInput(format!(
            "partition over {} domains against a table for {}",
            p.n(),
            table.n()
        )));
    }
    let costs = p
        .buckets()
        .into_iter()
        .map(|(lo, hi)| {
            table
                .get(lo, hi)
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("cost table is missing interval [{lo}, {hi}]")))
        })
        .collect::<Result<Vec<_>>>()?;
    enc_sum(be, &costs)
}

// ---------------------------------------------------------------------------
// Encrypted argmin
// ---------------------------------------------------------------------------

/// Encrypted argmin over all partitions: the winning cut mask as encrypted
/// bits plus its (noisy) cost word.
#[derive(Debug, Clone)]
pub struct EncArgmin {
    index_bits: Vec<EncBit>,
    cost: EncWord,
}

impl EncArgmin {
    pub fn index_bits(&self) -> &[EncBit] {
        &self.index_bits
    }

    pub fn cost(&self) -> &EncWord {
        &self.cost
    }

    /// Decrypts the cut mask; little-endian bit order.
    pub fn decrypt_mask(&self, key: &SecretKey) -> Result<u64> {
        let mut mask = 0u64;
        for (i, bit) in self.index_bits.iter().enumerate() {
            if decrypt_bit(key, *bit)? {
                mask |= 1 << i;
            }
        }
        Ok(mask)
    }
}

/// Selects the minimum-cost partition by a left fold over ascending masks.
/// Each step keeps the incumbent unless the candidate is strictly cheaper,
/// so ties resolve to the smallest mask. The comparison bit is encrypted,
/// and muxing the mask bits through it makes the selected index encrypted
/// too, even though each candidate mask is public.
pub fn select_min_partition(be: &Backend, table: &EncCostTable) -> Result<EncArgmin> {
    let n = table.n();
    let mut parts = enumerate_partitions(n)?;
    let first = parts.next().expect("n >= 1 yields at least the trivial partition");
    let mut best_cost = partition_total_cost(be, table, &first)?;
    let mut best_bits = mask_bits(be, first.cut_mask(), n);

    for p in parts {
        let cost = partition_total_cost(be, table, &p)?;
        let wins = enc_lt(be, &cost, &best_cost)?;
        best_cost = enc_select(be, wins, &cost, &best_cost)?;
        let bits = mask_bits(be, p.cut_mask(), n);
        best_bits = best_bits
            .iter()
            .zip(&bits)
            .map(|(incumbent, candidate)| be.mux(wins, *candidate, *incumbent))
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(EncArgmin { index_bits: best_bits, cost: best_cost })
}

/// The `n - 1` cut-mask bits as trivial ciphertexts, little-endian.
fn mask_bits(be: &Backend, mask: u64, n: usize) -> Vec<EncBit> {
    (0..n - 1).map(|i| be.trivial(mask >> i & 1 == 1)).collect()
}

// ---------------------------------------------------------------------------
// Bucket sums
// ---------------------------------------------------------------------------

/// Per-bucket sums of the counts under a (plaintext) partition.
pub fn bucket_sums(be: &Backend, x: &[EncWord], p: &Partition) -> Result<Vec<EncWord>> {
    if p.n() != x.len() {
        return Err(Error::InvalidInput(format!(
            "partition over {} domains against {} counts",
            p.n(),
            x.len()
        )));
    }
    p.buckets()
        .into_iter()
        .map(|(lo, hi)| enc_sum(be, &x[lo..=hi]))
        .collect()
}

/// Adds one Laplace draw per bucket sum, labelled by bucket position:
/// exactly `k` draws for a `k`-bucket partition.
pub fn noisy_bucket_sums(
    be: &Backend,
    sums: &[EncWord],
    params: &LaplaceParams,
    stream: &NoiseStream,
    log: &mut NoiseLog,
) -> Result<Vec<EncWord>> {
    sums.iter()
        .enumerate()
        .map(|(i, s)| add_noise_enc(be, s, params, stream, Label::new(Phase::BucketSums, i as u64), log))
        .collect()
}
