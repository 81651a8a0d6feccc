//! Laplace noise, privacy budget accounting and the noise audit log.
//!
//! Noise is drawn from a counter-based deterministic stream: every draw is a
//! pure function of `(seed, label, draw counter)` where the label names the
//! pipeline element being protected (a cost-table interval or a bucket sum).
//! Draw values therefore do not depend on evaluation order, which keeps the
//! encrypted pipeline, its plaintext mirror and any parallel schedule in
//! exact agreement.
//!
//! Samples use the inverse CDF: `r = -b * sgn(u) * ln(1 - 2|u|)` for `u`
//! uniform on `(-1/2, 1/2)` and scale `b = sensitivity / epsilon_share`.
//! Before entering a circuit a sample is quantized onto the fixed-point
//! grid by the same floor-encode as the data; out-of-range samples clamp to
//! the format extremes and are flagged in the log.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::fixed::{enc_add, enc_trivial, encode, EncWord, FixedFormat, PlainFixed};

// ---------------------------------------------------------------------------
// Budget
// ---------------------------------------------------------------------------

/// Two-phase privacy budget: `epsilon1` buys the partition, `epsilon2` buys
/// the bucket sums, and the guarantee composes to `epsilon1 + epsilon2`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PrivacyBudget {
    epsilon: f64,
    epsilon1: f64,
    epsilon2: f64,
}

impl PrivacyBudget {
    /// Splits `epsilon` in the ratio `a : b` between the partitioning and
    /// noising phases. The shares sum to `epsilon` exactly.
    pub fn split(epsilon: f64, a: u32, b: u32) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
        }
        if a == 0 || b == 0 {
            return Err(Error::InvalidInput(format!("split ratio {a}:{b} must be positive")));
        }
        let epsilon1 = epsilon * a as f64 / (a + b) as f64;
        Ok(PrivacyBudget {
            epsilon,
            epsilon1,
            epsilon2: epsilon - epsilon1,
        })
    }

    /// The default budget used throughout the experiments: total 1.0 split
    /// 1:3 between partitioning and noising.
    pub fn default_split(epsilon: f64) -> Result<Self> {
        PrivacyBudget::split(epsilon, 1, 3)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn epsilon1(&self) -> f64 {
        self.epsilon1
    }

    pub fn epsilon2(&self) -> f64 {
        self.epsilon2
    }
}

/// One Laplace mechanism instantiation: query sensitivity plus the budget
/// share spent on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceParams {
    pub sensitivity: f64,
    pub epsilon_share: f64,
}

impl LaplaceParams {
    pub fn new(sensitivity: f64, epsilon_share: f64) -> Result<Self> {
        if !(sensitivity.is_finite() && sensitivity > 0.0) {
            return Err(Error::InvalidInput(format!("sensitivity must be positive, got {sensitivity}")));
        }
        if !(epsilon_share.is_finite() && epsilon_share > 0.0) {
            return Err(Error::InvalidInput(format!("epsilon share must be positive, got {epsilon_share}")));
        }
        Ok(LaplaceParams { sensitivity, epsilon_share })
    }

    /// Laplace scale `b = sensitivity / epsilon_share`.
    pub fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon_share
    }
}

// ---------------------------------------------------------------------------
// Streams
// ---------------------------------------------------------------------------

/// Pipeline phase that consumes noise; part of every draw's label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Phase {
    /// Per-interval deviation costs (partitioning, `epsilon1`).
    CostTable,
    /// Per-bucket sums of the selected partition (`epsilon2`).
    BucketSums,
}

impl Phase {
    fn tag(self) -> u8 {
        match self {
            Phase::CostTable => 1,
            Phase::BucketSums => 2,
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::CostTable => write!(f, "cost-table"),
            Phase::BucketSums => write!(f, "bucket-sums"),
        }
    }
}

/// Stream label: which pipeline element a draw protects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Label {
    pub phase: Phase,
    pub index: u64,
}

impl Label {
    pub fn new(phase: Phase, index: u64) -> Self {
        Label { phase, index }
    }
}

/// How a stream produces samples. `Zero` and `Forced` exist for tests and
/// golden replays; production runs use `Seeded`.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamKind {
    /// Counter-based deterministic draws from the seed.
    Seeded,
    /// Every sample is exactly zero.
    Zero,
    /// Samples for listed labels are fixed; unlisted labels draw zero.
    Forced(BTreeMap<(Phase, u64), f64>),
}

/// Deterministic Laplace source. Cloning is cheap and yields an identical
/// stream; sampling is `&self` because draws are pure in the label.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStream {
    seed: u64,
    kind: StreamKind,
}

impl NoiseStream {
    pub fn seeded(seed: u64) -> Self {
        NoiseStream { seed, kind: StreamKind::Seeded }
    }

    pub fn zero() -> Self {
        NoiseStream { seed: 0, kind: StreamKind::Zero }
    }

    pub fn forced(values: BTreeMap<(Phase, u64), f64>) -> Self {
        NoiseStream { seed: 0, kind: StreamKind::Forced(values) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kind(&self) -> &StreamKind {
        &self.kind
    }

    /// Uniform draw on (0, 1), a pure function of the full label.
    fn unit(&self, label: Label, counter: u64) -> f64 {
        let mut h = Sha256::new();
        h.update(b"dp-summary/noise");
        h.update(self.seed.to_le_bytes());
        h.update([label.phase.tag()]);
        h.update(label.index.to_le_bytes());
        h.update(counter.to_le_bytes());
        let digest = h.finalize();
        let x = u64::from_le_bytes(digest[..8].try_into().unwrap());
        // 53 uniform bits, offset half a step to stay inside the open interval.
        ((x >> 11) as f64 + 0.5) * (-53f64).exp2()
    }

    /// Laplace sample for `label` at draw `counter`.
    pub fn sample_at(&self, params: &LaplaceParams, label: Label, counter: u64) -> f64 {
        match &self.kind {
            StreamKind::Zero => 0.0,
            StreamKind::Forced(values) => {
                values.get(&(label.phase, label.index)).copied().unwrap_or(0.0)
            }
            StreamKind::Seeded => {
                let u = self.unit(label, counter) - 0.5;
                // Inverse CDF; ln_1p keeps precision for small |u|.
                -params.scale() * u.signum() * (-2.0 * u.abs()).ln_1p()
            }
        }
    }

    /// First draw for `label`; the pipeline consumes exactly one draw per
    /// label.
    pub fn sample(&self, params: &LaplaceParams, label: Label) -> f64 {
        self.sample_at(params, label, 0)
    }
}

// ---------------------------------------------------------------------------
// Quantization and injection
// ---------------------------------------------------------------------------

/// Quantizes a real sample onto the format grid by the floor encode.
/// Out-of-range samples clamp to the format extremes; the flag reports it.
pub fn quantize_noise(r: f64, format: FixedFormat) -> (PlainFixed, bool) {
    match encode(r, format) {
        Ok(q) => (q, false),
        Err(_) => {
            let raw = if r < 0.0 { format.min_raw() } else { format.max_raw() };
            (
                PlainFixed::from_raw(raw, format).expect("format extremes are representable"),
                true,
            )
        }
    }
}

/// One line of the noise audit log: everything needed to reproduce and
/// account for a single draw.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub phase: Phase,
    pub index: u64,
    pub sensitivity: f64,
    pub epsilon_share: f64,
    pub sample: f64,
    /// Raw grid value actually added; `None` in the float64 oracle, which
    /// adds the sample unquantized.
    pub quantized_raw: Option<i64>,
    pub clamped: bool,
}

/// Append-only record of every noise draw in a pipeline run.
#[derive(Debug, Clone, Default)]
pub struct NoiseLog {
    draws: Vec<NoiseDraw>,
}

impl NoiseLog {
    pub fn new() -> Self {
        NoiseLog::default()
    }

    pub fn record(&mut self, draw: NoiseDraw) {
        self.draws.push(draw);
    }

    pub fn draws(&self) -> &[NoiseDraw] {
        &self.draws
    }

    pub fn count_for(&self, phase: Phase) -> usize {
        self.draws.iter().filter(|d| d.phase == phase).count()
    }

    /// Line-oriented export: phase, label index, sensitivity, epsilon
    /// share, real sample, quantized raw value, clamp flag.
    pub fn export_lines(&self) -> String {
        let mut out = String::new();
        for d in &self.draws {
            let quant = match d.quantized_raw {
                Some(raw) => raw.to_string(),
                None => "-".to_string(),
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                d.phase, d.index, d.sensitivity, d.epsilon_share, d.sample, quant, d.clamped as u8
            ));
        }
        out
    }
}

/// Draws noise for `label`, quantizes it onto the word's grid, logs the
/// draw and adds it to the ciphertext as a trivial word.
pub fn add_noise_enc(
    be: &Backend,
    w: &EncWord,
    params: &LaplaceParams,
    stream: &NoiseStream,
    label: Label,
    log: &mut NoiseLog,
) -> Result<EncWord> {
    let r = stream.sample(params, label);
    let (q, clamped) = quantize_noise(r, w.format());
    log.record(NoiseDraw {
        phase: label.phase,
        index: label.index,
        sensitivity: params.sensitivity,
        epsilon_share: params.epsilon_share,
        sample: r,
        quantized_raw: Some(q.raw()),
        clamped,
    });
    enc_add(be, w, &enc_trivial(be, q))
}

// ---------------------------------------------------------------------------
// Ledger
// ---------------------------------------------------------------------------

/// One-shot budget ledger: a given dataset fingerprint may fund exactly one
/// summary construction. Fingerprints bind the data and the budget, so the
/// same data under a different budget is a separate entry.
#[derive(Debug, Clone, Default)]
pub struct BudgetLedger {
    spent: BTreeSet<[u8; 32]>,
}

impl BudgetLedger {
    pub fn new() -> Self {
        BudgetLedger::default()
    }

    pub fn is_spent(&self, fingerprint: &[u8; 32]) -> bool {
        self.spent.contains(fingerprint)
    }

    /// Consumes the budget for `fingerprint`, refusing a second attempt.
    pub fn charge(&mut self, fingerprint: [u8; 32]) -> Result<()> {
        if !self.spent.insert(fingerprint) {
            return Err(Error::BudgetExhausted);
        }
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = &[u8; 32]> {
        self.spent.iter()
    }

    pub fn restore(&mut self, fingerprint: [u8; 32]) {
        self.spent.insert(fingerprint);
    }
}

/// Fingerprint for the ledger: dataset values plus the budget they fund.
pub fn dataset_fingerprint(counts: &[f64], budget: &PrivacyBudget) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"dp-summary/dataset");
    h.update((counts.len() as u64).to_le_bytes());
    for &c in counts {
        h.update(c.to_bits().to_le_bytes());
    }
    h.update(budget.epsilon().to_bits().to_le_bytes());
    h.update(budget.epsilon1().to_bits().to_le_bytes());
    h.update(budget.epsilon2().to_bits().to_le_bytes());
    h.finalize().into()
}
