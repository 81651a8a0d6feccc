//! Reproducible experiments: dataset generation, gate-count benchmarks,
//! the accuracy study across fixed-point formats, and the encrypted-versus-
//! oracle equivalence check.
//!
//! Every experiment is a pure function of its seeds; CSV output is written
//! line by line with fixed column orders so repeated runs are byte-stable.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::backend::{Backend, GateCostModel};
use crate::error::{Error, Result};
use crate::fixed::{FixedFormat, EXPERIMENT_FORMATS};
use crate::noise::{BudgetLedger, NoiseStream, PrivacyBudget};
use crate::oracle::{oracle_pipeline, OracleConfig};
use crate::partition::Histogram;
use crate::protocol::{run_pipeline, PipelineConfig};

/// Deterministic synthetic histogram: each count is a hash of the seed and
/// the domain position, reduced mod 11 (counts 0 through 10). A histogram
/// that comes out all zero gets one record in its first domain so it can
/// still drive the record-based pipeline.
pub fn gen_histogram(n: usize, seed: u64) -> Result<Histogram> {
    if n == 0 {
        return Err(Error::EmptyInput("histogram"));
    }
    let mut counts = Vec::with_capacity(n);
    for i in 0..n {
        let mut h = Sha256::new();
        h.update(b"dp-summary/gen");
        h.update(seed.to_le_bytes());
        h.update((i as u64).to_le_bytes());
        let digest = h.finalize();
        let v = u64::from_le_bytes(digest[..8].try_into().unwrap());
        counts.push((v % 11) as f64);
    }
    if counts.iter().all(|&c| c == 0.0) {
        counts[0] = 1.0;
    }
    Histogram::new(counts)
}

// ---------------------------------------------------------------------------
// Gate benchmark
// ---------------------------------------------------------------------------

/// One benchmark cell: the gate counts of a full construction at `(n, T)`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub total_bits: u32,
    pub frac_bits: u32,
    pub records: u64,
    pub aggregation: u64,
    pub cost_table: u64,
    pub argmin: u64,
    pub bucket_sums: u64,
    pub construction_total: u64,
    pub grand_total: u64,
    pub est_seconds: f64,
}

/// Counts gates for the canonical benchmark dataset: five records in every
/// domain. Aggregation, cost table and argmin counts are pure functions of
/// `(n, R, T)`; running on constant data with zero noise pins the selected
/// partition too, so every column is reproducible.
pub fn bench_gates(ns: &[usize], formats: &[FixedFormat], model: &GateCostModel) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n in ns {
        for &format in formats {
            let hist = Histogram::new(vec![5.0; n])?;
            let be = Backend::counting_with_cost(*model);
            let mut ledger = BudgetLedger::new();
            let cfg = PipelineConfig::new(
                hist,
                format,
                PrivacyBudget::default_split(1.0)?,
                NoiseStream::zero(),
            );
            let run = run_pipeline(&cfg, &be, &mut ledger)?;
            let p = run.phase_stats;
            rows.push(BenchRow {
                n,
                total_bits: format.total_bits(),
                frac_bits: format.frac_bits(),
                records: (5 * n) as u64,
                aggregation: p.aggregation.total(),
                cost_table: p.cost_table.total(),
                argmin: p.argmin.total(),
                bucket_sums: p.bucket_sums.total(),
                construction_total: p.construction_total(),
                grand_total: p.grand_total(),
                est_seconds: be.stats().cost_estimate(model),
            });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(
        "n,total_bits,frac_bits,records,aggregation,cost_table,argmin,bucket_sums,construction_total,grand_total,est_seconds\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.n,
            r.total_bits,
            r.frac_bits,
            r.records,
            r.aggregation,
            r.cost_table,
            r.argmin,
            r.bucket_sums,
            r.construction_total,
            r.grand_total,
            r.est_seconds,
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Accuracy study
// ---------------------------------------------------------------------------

/// One accuracy measurement: the summary's mean absolute error on one
/// dataset under one noise seed, in one arithmetic.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AccuracyRow {
    pub n: usize,
    pub trial: u64,
    pub noise_seed: u64,
    /// "T:F" for fixed point, "float64" for the baseline.
    pub arithmetic: String,
    pub mae: f64,
}

/// Runs the oracle pipeline over every `(n, trial)` cell in each fixed-point
/// format and in float64. Each n gets one generated dataset; trials vary only
/// the noise seed, and within a trial all arithmetics share data and noise
/// labels, so rows are paired: differences isolate the arithmetic.
pub fn accuracy_study(
    ns: &[usize],
    formats: &[FixedFormat],
    trials: u64,
    base_seed: u64,
    budget: PrivacyBudget,
) -> Result<Vec<AccuracyRow>> {
    if trials < 2 {
        return Err(Error::InvalidInput(
            "accuracy study needs at least 2 trials to estimate a standard error".into(),
        ));
    }
    let mut rows = Vec::new();
    for &n in ns {
        let data_seed = base_seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add((n as u64) << 32);
        let hist = gen_histogram(n, data_seed)?;
        for trial in 0..trials {
            let noise_seed = data_seed.wrapping_add(0x1000_0000 | trial);
            let stream = NoiseStream::seeded(noise_seed);

            for &format in formats {
                let cfg = OracleConfig::fixed_point(format, budget);
                let run = oracle_pipeline(&hist, &cfg, &stream)?;
                rows.push(AccuracyRow {
                    n,
                    trial,
                    noise_seed,
                    arithmetic: format.to_string(),
                    mae: mean_abs_error(&run.x_prime, hist.counts()),
                });
            }
            let cfg = OracleConfig::float64(FixedFormat::new(16, 8)?, budget);
            let run = oracle_pipeline(&hist, &cfg, &stream)?;
            rows.push(AccuracyRow {
                n,
                trial,
                noise_seed,
                arithmetic: "float64".into(),
                mae: mean_abs_error(&run.x_prime, hist.counts()),
            });
        }
    }
    Ok(rows)
}

fn mean_abs_error(x_prime: &[f64], truth: &[f64]) -> f64 {
    let total: f64 = x_prime.iter().zip(truth).map(|(x, t)| (x - t).abs()).sum();
    total / truth.len() as f64
}

pub fn accuracy_csv(rows: &[AccuracyRow]) -> String {
    let mut out = String::from("n,trial,noise_seed,arithmetic,mae\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.n, r.trial, r.noise_seed, r.arithmetic, r.mae));
    }
    out
}

/// Per-(n, arithmetic) aggregate of an accuracy study: the mean error over
/// trials and its standard error (sample standard deviation / sqrt(trials)).
#[derive(Debug, Clone, serde::Serialize)]
pub struct AccuracyCell {
    pub n: usize,
    pub arithmetic: String,
    pub trials: usize,
    pub mean_error: f64,
    pub std_error: f64,
}

/// Collapses per-trial rows into per-cell statistics, preserving first-seen
/// order of (n, arithmetic).
pub fn summarize_accuracy(rows: &[AccuracyRow]) -> Vec<AccuracyCell> {
    let mut order: Vec<(usize, String)> = Vec::new();
    let mut groups: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = (r.n, r.arithmetic.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r.mae);
    }
    order
        .into_iter()
        .map(|key| {
            let xs = &groups[&key];
            let count = xs.len();
            let mean = xs.iter().sum::<f64>() / count as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            AccuracyCell {
                n: key.0,
                arithmetic: key.1,
                trials: count,
                mean_error: mean,
                std_error: (var / count as f64).sqrt(),
            }
        })
        .collect()
}

/// Renders one CSV row per (n, fixed-point format) with the float64 baseline
/// of the same n alongside.
pub fn accuracy_summary_csv(rows: &[AccuracyRow]) -> Result<String> {
    let cells = summarize_accuracy(rows);
    let mut baselines: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for c in &cells {
        if c.arithmetic == "float64" {
            baselines.insert(c.n, (c.mean_error, c.std_error));
        }
    }
    let mut out = String::from(
        "n,total_bits,frac_bits,trials,mean_error,std_error,baseline_mean_error,baseline_std_error\n",
    );
    for c in &cells {
        if c.arithmetic == "float64" {
            continue;
        }
        let format = FixedFormat::parse(&c.arithmetic)?;
        let (bm, bs) = baselines.get(&c.n).copied().ok_or_else(|| {
            Error::InvalidInput(format!("no float64 baseline rows for n = {}", c.n))
        })?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.n,
            format.total_bits(),
            format.frac_bits(),
            c.trials,
            c.mean_error,
            c.std_error,
            bm,
            bs
        ));
    }
    Ok(out)
}

/// The default experiment formats, for callers that do not choose their own.
pub fn default_formats() -> Vec<FixedFormat> {
    EXPERIMENT_FORMATS
        .iter()
        .map(|&(t, f)| FixedFormat::new(t, f).expect("experiment formats are valid"))
        .collect()
}

// ---------------------------------------------------------------------------
// Equivalence check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize)]
pub struct EquivalenceMismatch {
    pub n: usize,
    pub format: String,
    pub trial: u64,
    pub field: String,
    pub encrypted: String,
    pub oracle: String,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EquivalenceReport {
    pub cells: usize,
    pub mismatches: Vec<EquivalenceMismatch>,
}

impl EquivalenceReport {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Runs the encrypted pipeline and the fixed-point oracle on identical
/// inputs and demands bit equality: same cut mask, same raw bucket sums.
/// Zero tolerance; any divergence is reported per cell.
pub fn verify_equivalence(
    ns: &[usize],
    formats: &[FixedFormat],
    trials: u64,
    base_seed: u64,
) -> Result<EquivalenceReport> {
    let budget = PrivacyBudget::default_split(1.0)?;
    let mut cells = 0;
    let mut mismatches = Vec::new();
    for &n in ns {
        for &format in formats {
            for trial in 0..trials {
                let data_seed = base_seed.wrapping_add((n as u64) << 40 | trial << 8);
                let hist = gen_histogram(n, data_seed)?;
                let stream = NoiseStream::seeded(data_seed ^ 0xabcd_ef01);

                let be = Backend::cleartext();
                let mut ledger = BudgetLedger::new();
                let cfg = PipelineConfig::new(hist.clone(), format, budget, stream.clone());
                let run = run_pipeline(&cfg, &be, &mut ledger)?;

                let oracle_cfg = OracleConfig::fixed_point(format, budget);
                let want = oracle_pipeline(&hist, &oracle_cfg, &stream)?;

                cells += 1;
                if run.cut_mask != want.cut_mask {
                    mismatches.push(EquivalenceMismatch {
                        n,
                        format: format.to_string(),
                        trial,
                        field: "cut_mask".into(),
                        encrypted: run.cut_mask.to_string(),
                        oracle: want.cut_mask.to_string(),
                    });
                    continue;
                }
                let oracle_raw = want.s_prime_raw.expect("fixed-point oracle yields raw sums");
                if run.s_prime_raw != oracle_raw {
                    mismatches.push(EquivalenceMismatch {
                        n,
                        format: format.to_string(),
                        trial,
                        field: "s_prime_raw".into(),
                        encrypted: format!("{:?}", run.s_prime_raw),
                        oracle: format!("{oracle_raw:?}"),
                    });
                }
            }
        }
    }
    Ok(EquivalenceReport { cells, mismatches })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_histograms_are_deterministic_and_bounded() {
        let a = gen_histogram(7, 42).unwrap();
        let b = gen_histogram(7, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.counts().iter().all(|&c| (0.0..=10.0).contains(&c) && c.fract() == 0.0));
        assert_ne!(a, gen_histogram(7, 43).unwrap());
        assert!(gen_histogram(7, 42).unwrap().total() > 0.0);
    }

    #[test]
    fn bench_counts_are_value_independent_given_record_count() {
        // Two different datasets with the same record count: identical
        // aggregation, cost-table and argmin gate counts.
        let format = FixedFormat::new(12, 4).unwrap();
        let budget = PrivacyBudget::default_split(1.0).unwrap();
        let mut phases = Vec::new();
        for counts in [vec![5.0, 5.0, 5.0, 5.0], vec![8.0, 2.0, 1.0, 9.0]] {
            let be = Backend::counting();
            let mut ledger = BudgetLedger::new();
            let cfg = PipelineConfig::new(
                Histogram::new(counts).unwrap(),
                format,
                budget,
                NoiseStream::zero(),
            );
            let run = run_pipeline(&cfg, &be, &mut ledger).unwrap();
            phases.push(run.phase_stats);
        }
        assert_eq!(phases[0].aggregation, phases[1].aggregation);
        assert_eq!(phases[0].cost_table, phases[1].cost_table);
        assert_eq!(phases[0].argmin, phases[1].argmin);
    }

    #[test]
    fn bench_rows_cover_the_grid_and_monotone_growth() {
        let model = GateCostModel::default();
        let formats = default_formats();
        let rows = bench_gates(&[2, 3], &formats, &model).unwrap();
        assert_eq!(rows.len(), 6);
        let csv = bench_csv(&rows);
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with("n,total_bits"));

        // Construction cost grows with n at fixed format.
        let c2 = rows.iter().find(|r| r.n == 2 && r.total_bits == 16).unwrap();
        let c3 = rows.iter().find(|r| r.n == 3 && r.total_bits == 16).unwrap();
        assert!(c3.construction_total > c2.construction_total);
        assert_eq!(c2.grand_total, c2.aggregation + c2.construction_total);
        assert!(c2.est_seconds > 0.0);
    }

    #[test]
    fn accuracy_rows_are_paired_across_arithmetics() {
        let formats = default_formats();
        let budget = PrivacyBudget::default_split(1.0).unwrap();
        let rows = accuracy_study(&[3], &formats, 2, 7, budget).unwrap();
        // 3 formats + float64, twice.
        assert_eq!(rows.len(), 8);
        let trial0: Vec<&AccuracyRow> = rows.iter().filter(|r| r.trial == 0).collect();
        assert_eq!(trial0.len(), 4);
        assert!(trial0.windows(2).all(|w| w[0].noise_seed == w[1].noise_seed));
        assert!(rows.iter().all(|r| r.mae.is_finite() && r.mae >= 0.0));

        let csv = accuracy_csv(&rows);
        assert_eq!(csv.lines().count(), 9);
        assert_eq!(accuracy_csv(&accuracy_study(&[3], &formats, 2, 7, budget).unwrap()), csv);

        assert!(matches!(
            accuracy_study(&[3], &formats, 1, 7, budget),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn accuracy_summary_aggregates_per_cell() {
        let formats = default_formats();
        let budget = PrivacyBudget::default_split(1.0).unwrap();
        let rows = accuracy_study(&[2, 3], &formats, 5, 11, budget).unwrap();

        let cells = summarize_accuracy(&rows);
        assert_eq!(cells.len(), 8); // 2 sizes x (3 formats + baseline)
        assert!(cells.iter().all(|c| c.trials == 5));
        assert!(cells.iter().all(|c| c.std_error >= 0.0 && c.mean_error >= 0.0));
        let by_hand: f64 = rows
            .iter()
            .filter(|r| r.n == 2 && r.arithmetic == "float64")
            .map(|r| r.mae)
            .sum::<f64>()
            / 5.0;
        let cell = cells.iter().find(|c| c.n == 2 && c.arithmetic == "float64").unwrap();
        assert!((cell.mean_error - by_hand).abs() < 1e-12);

        let csv = accuracy_summary_csv(&rows).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 7); // header + 2 sizes x 3 formats
        assert!(lines[0].starts_with("n,total_bits,frac_bits,trials,mean_error"));
        // All rows of one n carry the same baseline columns.
        let base: Vec<&str> = lines[1].split(',').rev().take(2).collect();
        for line in &lines[2..4] {
            assert_eq!(line.split(',').rev().take(2).collect::<Vec<_>>(), base);
        }
    }

    #[test]
    fn equivalence_holds_on_a_small_grid() {
        let formats = [FixedFormat::new(10, 2).unwrap(), FixedFormat::new(16, 8).unwrap()];
        let report = verify_equivalence(&[2, 4], &formats, 3, 99).unwrap();
        assert_eq!(report.cells, 12);
        assert!(report.ok(), "mismatches: {:?}", report.mismatches);
    }
}
