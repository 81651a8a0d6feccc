//! The published artifact: a noisy histogram summary and its query surface.
//!
//! A summary carries the selected partition, the noisy bucket sums, and the
//! per-domain expansion in which each bucket's sum is spread uniformly over
//! its domains (negative expansions clamp to zero: counts are nonnegative).
//! Range queries read only the expansion, so answering them spends no
//! further privacy budget.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fixed::FixedFormat;
use crate::noise::PrivacyBudget;
use crate::partition::Partition;

/// Spreads each bucket sum uniformly over the bucket's domains, then clamps
/// negatives to zero. One entry per domain, in domain order.
pub fn uniform_expand(s_prime: &[f64], p: &Partition) -> Result<Vec<f64>> {
    Ok(raw_expand(s_prime, p)?.into_iter().map(|v| v.max(0.0)).collect())
}

/// Expansion before the clamp; sums to the bucket totals exactly in real
/// arithmetic. Exposed for conservation checks.
pub fn raw_expand(s_prime: &[f64], p: &Partition) -> Result<Vec<f64>> {
    let buckets = p.buckets();
    if s_prime.len() != buckets.len() {
        return Err(Error::InvalidInput(format!(
            "{} bucket sums for a {}-bucket partition",
            s_prime.len(),
            buckets.len()
        )));
    }
    let mut out = Vec::with_capacity(p.n());
    for (&s, (lo, hi)) in s_prime.iter().zip(buckets) {
        let width = (hi - lo + 1) as f64;
        for _ in lo..=hi {
            out.push(s / width);
        }
    }
    Ok(out)
}

/// Construction metadata published with a summary: how much budget it spent
/// and a fingerprint of the randomness that produced it. The seed itself
/// stays private; knowing it would expose the noise.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SummaryProvenance {
    pub budget: PrivacyBudget,
    pub format: FixedFormat,
    pub seed_digest: String,
}

impl SummaryProvenance {
    pub fn new(budget: PrivacyBudget, format: FixedFormat, seed: u64) -> Self {
        SummaryProvenance { budget, format, seed_digest: seed_digest(seed) }
    }
}

/// Hex fingerprint of a noise seed.
pub fn seed_digest(seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(b"dp-summary/seed");
    h.update(seed.to_le_bytes());
    let d = h.finalize();
    d[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// A differentially private histogram summary: partition, noisy bucket
/// sums, uniform expansion, provenance, and an integrity digest over all of
/// them. Serializes to JSON; loading re-verifies the digest.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DpSummary {
    n: usize,
    cut_mask: u64,
    s_prime: Vec<f64>,
    x_prime: Vec<f64>,
    provenance: SummaryProvenance,
    digest: String,
}

impl DpSummary {
    pub fn new(p: &Partition, s_prime: Vec<f64>, provenance: SummaryProvenance) -> Result<Self> {
        if let Some(bad) = s_prime.iter().find(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("bucket sum {bad} is not finite")));
        }
        let x_prime = uniform_expand(&s_prime, p)?;
        let mut summary = DpSummary {
            n: p.n(),
            cut_mask: p.cut_mask(),
            s_prime,
            x_prime,
            provenance,
            digest: String::new(),
        };
        summary.digest = summary.compute_digest();
        Ok(summary)
    }

    fn compute_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"dp-summary/summary");
        h.update((self.n as u64).to_le_bytes());
        h.update(self.cut_mask.to_le_bytes());
        h.update((self.s_prime.len() as u64).to_le_bytes());
        for s in &self.s_prime {
            h.update(s.to_bits().to_le_bytes());
        }
        for x in &self.x_prime {
            h.update(x.to_bits().to_le_bytes());
        }
        h.update(self.provenance.budget.epsilon().to_bits().to_le_bytes());
        h.update(self.provenance.budget.epsilon1().to_bits().to_le_bytes());
        h.update(self.provenance.budget.epsilon2().to_bits().to_le_bytes());
        h.update(self.provenance.format.to_string().as_bytes());
        h.update(self.provenance.seed_digest.as_bytes());
        let d = h.finalize();
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn partition(&self) -> Partition {
        Partition::from_mask(self.cut_mask, self.n).expect("constructed from a valid partition")
    }

    pub fn cut_mask(&self) -> u64 {
        self.cut_mask
    }

    pub fn bucket_sums(&self) -> &[f64] {
        &self.s_prime
    }

    pub fn expansion(&self) -> &[f64] {
        &self.x_prime
    }

    pub fn provenance(&self) -> &SummaryProvenance {
        &self.provenance
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Sum of the expansion over domains `l..=r`, 1-indexed inclusive.
    pub fn range_query(&self, l: usize, r: usize) -> Result<f64> {
        if l < 1 || r > self.n || l > r {
            return Err(Error::BadRange { l, r, n: self.n });
        }
        Ok(self.x_prime[l - 1..r].iter().sum())
    }

    /// Mean absolute error of the expansion against true counts.
    pub fn mean_abs_error(&self, truth: &[f64]) -> Result<f64> {
        if truth.len() != self.n {
            return Err(Error::InvalidInput(format!(
                "{} true counts against {} domains",
                truth.len(),
                self.n
            )));
        }
        let total: f64 = self
            .x_prime
            .iter()
            .zip(truth)
            .map(|(x, t)| (x - t).abs())
            .sum();
        Ok(total / self.n as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a summary and verifies its integrity digest and expansion.
    pub fn from_json(s: &str) -> Result<Self> {
        let summary: DpSummary = serde_json::from_str(s)?;
        Partition::from_mask(summary.cut_mask, summary.n)?;
        if summary.digest != summary.compute_digest() {
            return Err(Error::InvalidInput("summary integrity digest does not match its content".into()));
        }
        let expect = uniform_expand(&summary.s_prime, &summary.partition())?;
        if summary.x_prime != expect {
            return Err(Error::InvalidInput("summary expansion does not match its bucket sums".into()));
        }
        Ok(summary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::FixedFormat;
    use proptest::prelude::*;

    fn provenance() -> SummaryProvenance {
        SummaryProvenance::new(
            PrivacyBudget::default_split(1.0).unwrap(),
            FixedFormat::new(16, 8).unwrap(),
            42,
        )
    }

    /// The worked seven-domain example: buckets (0,1), (2,4), (5,6) with
    /// noisy sums from forced draws -0.4, -0.8, +0.8 quantized at 16:8.
    fn reference_summary() -> DpSummary {
        let p = Partition::from_mask(0b10010, 7).unwrap();
        DpSummary::new(&p, vec![4.59765625, 16.19921875, 7.796875], provenance()).unwrap()
    }

    #[test]
    fn expansion_divides_sums_evenly() {
        let p = Partition::from_mask(0, 4).unwrap();
        let x = uniform_expand(&[10.0], &p).unwrap();
        assert_eq!(x, vec![2.5, 2.5, 2.5, 2.5]);

        let s = reference_summary();
        assert_eq!(s.expansion()[0], 4.59765625 / 2.0);
        assert_eq!(s.expansion()[1], 4.59765625 / 2.0);
        assert_eq!(s.expansion()[2], 16.19921875 / 3.0);
        assert_eq!(s.expansion()[5], 7.796875 / 2.0);
        assert_eq!(s.expansion().len(), 7);
    }

    #[test]
    fn expansion_clamps_negative_buckets_to_zero() {
        let p = Partition::from_mask(0b01, 3).unwrap();
        let x = uniform_expand(&[-3.0, 8.0], &p).unwrap();
        assert_eq!(x, vec![0.0, 4.0, 4.0]);
        let raw = raw_expand(&[-3.0, 8.0], &p).unwrap();
        assert_eq!(raw, vec![-3.0, 4.0, 4.0]);
    }

    #[test]
    fn expansion_conserves_bucket_totals_before_clamping() {
        let p = Partition::from_mask(0b10010, 7).unwrap();
        let s = [4.59765625, -16.19921875, 7.796875];
        let raw = raw_expand(&s, &p).unwrap();
        let regrouped: Vec<f64> = p
            .buckets()
            .into_iter()
            .map(|(lo, hi)| raw[lo..=hi].iter().sum())
            .collect();
        for (got, want) in regrouped.iter().zip(&s) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn range_queries_sum_the_expansion() {
        let s = reference_summary();
        assert_eq!(s.range_query(1, 1).unwrap(), 4.59765625 / 2.0);
        assert_eq!(s.range_query(1, 2).unwrap(), 4.59765625);
        // Full range: the three noisy bucket sums in full.
        let full = s.range_query(1, 7).unwrap();
        assert!((full - 28.59375).abs() < 1e-9, "{full}");
        assert!((full - (4.59765625 + 16.19921875 + 7.796875)).abs() < 1e-9);

        assert!(matches!(s.range_query(0, 3), Err(Error::BadRange { .. })));
        assert!(matches!(s.range_query(3, 8), Err(Error::BadRange { .. })));
        assert!(matches!(s.range_query(5, 4), Err(Error::BadRange { .. })));
    }

    #[test]
    fn mean_abs_error_against_reference_counts() {
        let s = reference_summary();
        let truth = [3.0, 2.0, 6.0, 5.0, 6.0, 3.0, 4.0];
        let got = s.mean_abs_error(&truth).unwrap();
        // Buckets one and three each miss by 1.0 in total; bucket two's
        // per-domain value 16.19921875 / 3 misses (6, 5, 6) term by term.
        let mid = 16.19921875 / 3.0;
        let want = (1.0 + (6.0 - mid) + (mid - 5.0) + (6.0 - mid) + 1.0) / 7.0;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!((got - 3.600260416666667 / 7.0).abs() < 1e-9);
        assert!(s.mean_abs_error(&[1.0]).is_err());
    }

    #[test]
    fn json_round_trip_preserves_the_summary() {
        let s = reference_summary();
        let json = s.to_json().unwrap();
        let back = DpSummary::from_json(&json).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.digest(), s.digest());
    }

    #[test]
    fn tampered_serializations_are_rejected() {
        let s = reference_summary();
        let json = s.to_json().unwrap();
        let tampered = json.replace("4.59765625", "5.59765625");
        assert_ne!(tampered, json);
        assert!(DpSummary::from_json(&tampered).is_err());

        let bad_mask = json.replace("\"cut_mask\": 18", "\"cut_mask\": 17");
        assert_ne!(bad_mask, json);
        assert!(DpSummary::from_json(&bad_mask).is_err());
    }

    #[test]
    fn non_finite_sums_are_rejected() {
        let p = Partition::from_mask(0, 2).unwrap();
        assert!(DpSummary::new(&p, vec![f64::NAN], provenance()).is_err());
        assert!(DpSummary::new(&p, vec![f64::INFINITY], provenance()).is_err());
        assert!(DpSummary::new(&p, vec![1.0, 2.0], provenance()).is_err());
    }

    proptest! {
        /// Clamping is pointwise: never below zero, never above the raw
        /// expansion's positive part, identical where the sum is nonnegative.
        #[test]
        fn clamped_expansion_dominates_raw(
            sums in proptest::collection::vec(-50.0f64..50.0, 1..6),
        ) {
            let k = sums.len();
            // Build a partition with exactly k buckets over 2k domains by
            // cutting after every second domain.
            let n = 2 * k;
            let mut mask = 0u64;
            for b in 0..k - 1 {
                mask |= 1 << (2 * b + 1);
            }
            let p = Partition::from_mask(mask, n).unwrap();
            prop_assert_eq!(p.k(), k);

            let clamped = uniform_expand(&sums, &p).unwrap();
            let raw = raw_expand(&sums, &p).unwrap();
            for (c, r) in clamped.iter().zip(&raw) {
                prop_assert!(*c >= 0.0);
                prop_assert!(*c >= *r);
                if *r >= 0.0 {
                    prop_assert_eq!(*c, *r);
                }
            }
        }
    }
}
