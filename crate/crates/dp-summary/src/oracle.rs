//! Reference pipelines that never touch a circuit.
//!
//! The fixed-point oracle replays the whole construction over [`PlainFixed`]
//! words: identical quantization, identical wrapping arithmetic, identical
//! noise labels. Against the encrypted pipeline under the same seed it must
//! agree bit for bit, in the selected cut mask and in every raw bucket sum.
//! That equivalence is what lets large experiments run here at plaintext
//! speed while still measuring the deployed arithmetic.
//!
//! The float64 oracle is the idealized baseline: exact real means, noise
//! added unquantized. The gap between the two modes is the price of fixed
//! point, which the accuracy study quantifies.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::fixed::{FixedFormat, PlainFixed};
use crate::noise::{quantize_noise, Label, LaplaceParams, NoiseDraw, NoiseLog, NoiseStream, Phase, PrivacyBudget};
use crate::partition::{
    enumerate_partitions, plain_interval_cost, triangular_index, Histogram, Partition,
    PartitionLimits, DEFAULT_COST_SENSITIVITY,
};
use crate::summary::uniform_expand;

/// Which arithmetic the oracle runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    /// Mirror of the encrypted pipeline: quantized noise, wrapping words.
    FixedPoint,
    /// Idealized baseline: real arithmetic, unquantized noise.
    Float64,
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub mode: OracleMode,
    pub format: FixedFormat,
    pub budget: PrivacyBudget,
    pub cost_sensitivity: f64,
    pub limits: PartitionLimits,
}

impl OracleConfig {
    pub fn fixed_point(format: FixedFormat, budget: PrivacyBudget) -> Self {
        OracleConfig {
            mode: OracleMode::FixedPoint,
            format,
            budget,
            cost_sensitivity: DEFAULT_COST_SENSITIVITY,
            limits: PartitionLimits::default(),
        }
    }

    pub fn float64(format: FixedFormat, budget: PrivacyBudget) -> Self {
        OracleConfig { mode: OracleMode::Float64, ..OracleConfig::fixed_point(format, budget) }
    }
}

/// Everything a pipeline run publishes, in oracle form.
#[derive(Debug, Clone)]
pub struct OracleRun {
    pub cut_mask: u64,
    /// Raw grid values of the noisy bucket sums; `None` in float64 mode.
    pub s_prime_raw: Option<Vec<i64>>,
    pub s_prime: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub noise_log: NoiseLog,
}

/// Runs the full construction in the configured arithmetic.
pub fn oracle_pipeline(hist: &Histogram, cfg: &OracleConfig, stream: &NoiseStream) -> Result<OracleRun> {
    cfg.limits.check_plain(hist.n())?;
    match cfg.mode {
        OracleMode::FixedPoint => fixed_pipeline(hist, cfg, stream),
        OracleMode::Float64 => float_pipeline(hist, cfg, stream),
    }
}

fn fixed_pipeline(hist: &Histogram, cfg: &OracleConfig, stream: &NoiseStream) -> Result<OracleRun> {
    let n = hist.n();
    let x = hist.to_fixed(cfg.format)?;
    let cost_params = LaplaceParams::new(cfg.cost_sensitivity, cfg.budget.epsilon1())?;
    let mut log = NoiseLog::new();

    // Noisy cost table, one quantized draw per interval.
    let mut table: BTreeMap<(usize, usize), PlainFixed> = BTreeMap::new();
    for lo in 0..n {
        for hi in lo..n {
            let cost = plain_interval_cost(&x, lo, hi)?;
            let label = Label::new(Phase::CostTable, triangular_index(lo, hi, n));
            let r = stream.sample(&cost_params, label);
            let (q, clamped) = quantize_noise(r, cfg.format);
            log.record(NoiseDraw {
                phase: label.phase,
                index: label.index,
                sensitivity: cost_params.sensitivity,
                epsilon_share: cost_params.epsilon_share,
                sample: r,
                quantized_raw: Some(q.raw()),
                clamped,
            });
            table.insert((lo, hi), cost.add(&q)?);
        }
    }

    // Argmin fold in ascending mask order; strict comparison keeps the
    // incumbent on ties, exactly like the encrypted fold.
    let mut best: Option<(PlainFixed, u64)> = None;
    for p in enumerate_partitions(n)? {
        let costs: Vec<PlainFixed> = p.buckets().into_iter().map(|(lo, hi)| table[&(lo, hi)]).collect();
        let total = PlainFixed::sum(&costs)?;
        best = match best {
            Some((incumbent, mask)) if !total.lt(&incumbent)? => Some((incumbent, mask)),
            _ => Some((total, p.cut_mask())),
        };
    }
    let cut_mask = best.expect("at least one partition").1;
    let partition = Partition::from_mask(cut_mask, n)?;

    // Noisy bucket sums, one quantized draw per bucket.
    let sum_params = LaplaceParams::new(1.0, cfg.budget.epsilon2())?;
    let mut s_raw = Vec::with_capacity(partition.k());
    let mut s_val = Vec::with_capacity(partition.k());
    for (i, (lo, hi)) in partition.buckets().into_iter().enumerate() {
        let sum = PlainFixed::sum(&x[lo..=hi])?;
        let label = Label::new(Phase::BucketSums, i as u64);
        let r = stream.sample(&sum_params, label);
        let (q, clamped) = quantize_noise(r, cfg.format);
        log.record(NoiseDraw {
            phase: label.phase,
            index: label.index,
            sensitivity: sum_params.sensitivity,
            epsilon_share: sum_params.epsilon_share,
            sample: r,
            quantized_raw: Some(q.raw()),
            clamped,
        });
        let noisy = sum.add(&q)?;
        s_raw.push(noisy.raw());
        s_val.push(noisy.value());
    }

    let x_prime = uniform_expand(&s_val, &partition)?;
    Ok(OracleRun {
        cut_mask,
        s_prime_raw: Some(s_raw),
        s_prime: s_val,
        x_prime,
        noise_log: log,
    })
}

fn float_pipeline(hist: &Histogram, cfg: &OracleConfig, stream: &NoiseStream) -> Result<OracleRun> {
    let n = hist.n();
    let x = hist.counts();
    let cost_params = LaplaceParams::new(cfg.cost_sensitivity, cfg.budget.epsilon1())?;
    let mut log = NoiseLog::new();

    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for lo in 0..n {
        for hi in lo..n {
            let label = Label::new(Phase::CostTable, triangular_index(lo, hi, n));
            let r = stream.sample(&cost_params, label);
            log.record(NoiseDraw {
                phase: label.phase,
                index: label.index,
                sensitivity: cost_params.sensitivity,
                epsilon_share: cost_params.epsilon_share,
                sample: r,
                quantized_raw: None,
                clamped: false,
            });
            table.insert((lo, hi), float_interval_cost(x, lo, hi) + r);
        }
    }

    let mut best: Option<(f64, u64)> = None;
    for p in enumerate_partitions(n)? {
        let total: f64 = p.buckets().into_iter().map(|(lo, hi)| table[&(lo, hi)]).sum();
        best = match best {
            Some((incumbent, mask)) if total >= incumbent => Some((incumbent, mask)),
            _ => Some((total, p.cut_mask())),
        };
    }
    let cut_mask = best.expect("at least one partition").1;
    let partition = Partition::from_mask(cut_mask, n)?;

    let sum_params = LaplaceParams::new(1.0, cfg.budget.epsilon2())?;
    let mut s_val = Vec::with_capacity(partition.k());
    for (i, (lo, hi)) in partition.buckets().into_iter().enumerate() {
        let label = Label::new(Phase::BucketSums, i as u64);
        let r = stream.sample(&sum_params, label);
        log.record(NoiseDraw {
            phase: label.phase,
            index: label.index,
            sensitivity: sum_params.sensitivity,
            epsilon_share: sum_params.epsilon_share,
            sample: r,
            quantized_raw: None,
            clamped: false,
        });
        s_val.push(x[lo..=hi].iter().sum::<f64>() + r);
    }

    let x_prime = uniform_expand(&s_val, &partition)?;
    Ok(OracleRun {
        cut_mask,
        s_prime_raw: None,
        s_prime: s_val,
        x_prime,
        noise_log: log,
    })
}

/// Exact L1 deviation of `[lo, hi]` from its real mean.
fn float_interval_cost(x: &[f64], lo: usize, hi: usize) -> f64 {
    let slice = &x[lo..=hi];
    let mean = slice.iter().sum::<f64>() / slice.len() as f64;
    slice.iter().map(|v| (v - mean).abs()).sum()
}

/// Noiseless exhaustive search over all partitions in real arithmetic:
/// the true optimum for small domains. First minimum wins ties.
pub fn brute_force_best_partition(hist: &Histogram) -> Result<(Partition, f64)> {
    const MAX_BRUTE_FORCE: usize = 15;
    let n = hist.n();
    if n > MAX_BRUTE_FORCE {
        return Err(Error::DomainTooLarge { n, max: MAX_BRUTE_FORCE });
    }
    let x = hist.counts();
    let mut best: Option<(f64, Partition)> = None;
    for p in enumerate_partitions(n)? {
        let total: f64 = p
            .buckets()
            .into_iter()
            .map(|(lo, hi)| float_interval_cost(x, lo, hi))
            .sum();
        best = match best {
            Some((incumbent, q)) if total >= incumbent => Some((incumbent, q)),
            _ => Some((total, p)),
        };
    }
    let (cost, p) = best.expect("at least one partition");
    Ok((p, cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{keygen, Backend};
    use crate::fixed::enc_decode_plain;
    use crate::partition::{
        build_cost_table, bucket_sums, encrypt_histogram, noisy_bucket_sums, select_min_partition,
    };

    const REFERENCE: [f64; 7] = [3.0, 2.0, 6.0, 5.0, 6.0, 3.0, 4.0];

    fn hist(counts: &[f64]) -> Histogram {
        Histogram::new(counts.to_vec()).unwrap()
    }

    fn budget() -> PrivacyBudget {
        PrivacyBudget::default_split(1.0).unwrap()
    }

    #[test]
    fn brute_force_reference_partitions() {
        let (p, cost) = brute_force_best_partition(&hist(&REFERENCE)).unwrap();
        assert_eq!(p.cut_mask(), 0b111111);
        assert_eq!(cost, 0.0);

        let (p, cost) = brute_force_best_partition(&hist(&[5.0, 5.0, 5.0, 5.0])).unwrap();
        assert_eq!(p.cut_mask(), 0);
        assert_eq!(cost, 0.0);

        let (p, cost) = brute_force_best_partition(&hist(&[0.0, 10.0])).unwrap();
        assert_eq!(p.cut_mask(), 1);
        assert_eq!(cost, 0.0);

        let too_big = hist(&vec![1.0; 16]);
        assert!(matches!(
            brute_force_best_partition(&too_big),
            Err(Error::DomainTooLarge { n: 16, max: 15 })
        ));
    }

    #[test]
    fn zero_noise_fixed_oracle_reproduces_exact_data() {
        let cfg = OracleConfig::fixed_point(FixedFormat::new(16, 8).unwrap(), budget());
        let run = oracle_pipeline(&hist(&REFERENCE), &cfg, &NoiseStream::zero()).unwrap();
        assert_eq!(run.cut_mask, 0b111111);
        assert_eq!(run.s_prime, REFERENCE.to_vec());
        assert_eq!(run.x_prime, REFERENCE.to_vec());
        let raws: Vec<i64> = REFERENCE.iter().map(|c| (c * 256.0) as i64).collect();
        assert_eq!(run.s_prime_raw, Some(raws));
    }

    #[test]
    fn oracle_draw_accounting_is_exact() {
        let cfg = OracleConfig::fixed_point(FixedFormat::new(12, 4).unwrap(), budget());
        let run = oracle_pipeline(&hist(&[1.0, 4.0, 2.0, 7.0]), &cfg, &NoiseStream::seeded(3)).unwrap();
        assert_eq!(run.noise_log.count_for(Phase::CostTable), 10);
        let k = Partition::from_mask(run.cut_mask, 4).unwrap().k();
        assert_eq!(run.noise_log.count_for(Phase::BucketSums), k);
        assert!(run.noise_log.draws().iter().all(|d| d.quantized_raw.is_some()));

        let f_cfg = OracleConfig::float64(FixedFormat::new(12, 4).unwrap(), budget());
        let f_run = oracle_pipeline(&hist(&[1.0, 4.0, 2.0, 7.0]), &f_cfg, &NoiseStream::seeded(3)).unwrap();
        assert!(f_run.noise_log.draws().iter().all(|d| d.quantized_raw.is_none()));
        assert!(f_run.s_prime_raw.is_none());
    }

    #[test]
    fn fixed_oracle_matches_the_encrypted_pipeline_bit_for_bit() {
        for seed in 0..5u64 {
            let counts: Vec<f64> = (0..3).map(|i| ((seed * 5 + i * 3) % 9) as f64).collect();
            let format = FixedFormat::new(12, 4).unwrap();
            let h = hist(&counts);
            let stream = NoiseStream::seeded(seed + 100);

            let cfg = OracleConfig::fixed_point(format, budget());
            let want = oracle_pipeline(&h, &cfg, &stream).unwrap();

            let be = Backend::cleartext();
            let key = keygen(seed);
            let x = encrypt_histogram(&be, &key, &h, format).unwrap();
            let cost_params = LaplaceParams::new(DEFAULT_COST_SENSITIVITY, budget().epsilon1()).unwrap();
            let mut log = NoiseLog::new();
            let table = build_cost_table(&be, &x, &cost_params, &stream, &mut log).unwrap();
            let mask = select_min_partition(&be, &table).unwrap().decrypt_mask(&key).unwrap();
            assert_eq!(mask, want.cut_mask, "seed {seed}");

            let p = Partition::from_mask(mask, h.n()).unwrap();
            let sums = bucket_sums(&be, &x, &p).unwrap();
            let sum_params = LaplaceParams::new(1.0, budget().epsilon2()).unwrap();
            let noisy = noisy_bucket_sums(&be, &sums, &sum_params, &stream, &mut log).unwrap();
            let raws: Vec<i64> = noisy
                .iter()
                .map(|w| enc_decode_plain(&key, w).unwrap().raw())
                .collect();
            assert_eq!(Some(raws), want.s_prime_raw, "seed {seed}");
        }
    }

    #[test]
    fn float_oracle_zero_noise_averages_buckets() {
        let cfg = OracleConfig::float64(FixedFormat::new(16, 8).unwrap(), budget());
        let run = oracle_pipeline(&hist(&[1.0, 2.0, 9.0, 9.0]), &cfg, &NoiseStream::zero()).unwrap();
        // First zero-cost partition in mask order: {1}, {2}, {9, 9}.
        let (p, cost) = brute_force_best_partition(&hist(&[1.0, 2.0, 9.0, 9.0])).unwrap();
        assert_eq!(run.cut_mask, p.cut_mask());
        assert_eq!(cost, 0.0);
        assert_eq!(run.cut_mask, 0b011);
        assert_eq!(run.x_prime, vec![1.0, 2.0, 9.0, 9.0]);
    }

    #[test]
    fn oracle_respects_the_plaintext_domain_limit() {
        let cfg = OracleConfig::fixed_point(FixedFormat::new(10, 2).unwrap(), budget());
        let too_big = hist(&vec![1.0; 13]);
        assert!(matches!(
            oracle_pipeline(&too_big, &cfg, &NoiseStream::zero()),
            Err(Error::DomainTooLarge { n: 13, max: 12 })
        ));
    }
}
