//! File formats for the command line: datasets, persistent budget ledgers,
//! and run reports.

use std::path::Path;

use crate::error::{Error, Result};
use crate::noise::BudgetLedger;
use crate::partition::Histogram;
use crate::protocol::PhaseStats;
use crate::summary::DpSummary;

/// A histogram on disk: `{"counts": [3, 2, 6]}`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DataFile {
    pub counts: Vec<f64>,
}

impl DataFile {
    pub fn load(path: &Path) -> Result<Histogram> {
        let text = std::fs::read_to_string(path)?;
        let file: DataFile = serde_json::from_str(&text)?;
        Histogram::new(file.counts)
    }

    pub fn save(path: &Path, hist: &Histogram) -> Result<()> {
        let file = DataFile { counts: hist.counts().to_vec() };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }
}

/// Spent budget fingerprints persisted between invocations, as hex strings.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct LedgerFile {
    pub spent: Vec<String>,
}

impl LedgerFile {
    /// Loads a ledger, treating a missing file as empty.
    pub fn load(path: &Path) -> Result<BudgetLedger> {
        if !path.exists() {
            return Ok(BudgetLedger::new());
        }
        let text = std::fs::read_to_string(path)?;
        let file: LedgerFile = serde_json::from_str(&text)?;
        let mut ledger = BudgetLedger::new();
        for entry in &file.spent {
            ledger.restore(decode_hex32(entry)?);
        }
        Ok(ledger)
    }

    pub fn save(path: &Path, ledger: &BudgetLedger) -> Result<()> {
        let file = LedgerFile {
            spent: ledger.entries().map(|e| encode_hex(e)).collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }
}

pub fn encode_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn decode_hex32(s: &str) -> Result<[u8; 32]> {
    if s.len() != 64 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(Error::InvalidInput(format!("'{s}' is not a 32-byte hex fingerprint")));
    }
    let mut out = [0u8; 32];
    for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
        let hi = (chunk[0] as char).to_digit(16).unwrap() as u8;
        let lo = (chunk[1] as char).to_digit(16).unwrap() as u8;
        out[i] = hi << 4 | lo;
    }
    Ok(out)
}

/// Everything one pipeline run reports, JSON-serializable for `--out`.
#[derive(Debug, serde::Serialize)]
pub struct RunReport {
    pub summary: DpSummary,
    pub cut_mask: u64,
    pub s_prime_raw: Vec<i64>,
    pub phase_stats: PhaseStats,
    pub gate_total: u64,
    pub est_seconds: f64,
    pub cost_table_draws: usize,
    pub bucket_sum_draws: usize,
    pub dataset_digest: String,
    pub transcript: Vec<String>,
}
