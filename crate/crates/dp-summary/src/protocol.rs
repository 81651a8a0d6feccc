//! Four-entity protocol simulation.
//!
//! Entities: data owners encrypt their records, a computation server runs
//! the construction over ciphertexts, a decryption server holds the secret
//! key and decrypts exactly two things (the selected partition index and
//! the noisy bucket sums), and data analysts query the published summary.
//!
//! The computation server never holds key material; the decryption server
//! never sees raw data, only ciphertexts whose decryption is authorized by
//! a token minted during the pipeline's noising steps. A token binds the
//! decryption server's nonce to the canonical bytes of the exact ciphertext
//! it covers, so replaying it against anything else is refused. Every
//! message is recorded in a transcript that [`assert_visibility`] audits
//! against the four flow rules after the fact.
//!
//! This is a simulation: one process plays all parties and "encryption" is
//! the counting backend's tagged plaintext. What it exercises is the data
//! flow, the message discipline and the gate-level cost, not lattice
//! cryptography.

use sha2::{Digest, Sha256};

use crate::backend::{keygen, Backend, GateStats, SecretKey};
use crate::error::{Error, Result};
use crate::fixed::{enc_decode_plain, enc_encode, EncWord, FixedFormat, PlainFixed};
use crate::noise::{
    dataset_fingerprint, BudgetLedger, LaplaceParams, NoiseLog, NoiseStream, PrivacyBudget,
};
use crate::partition::{
    build_cost_table, bucket_sums, noisy_bucket_sums, select_min_partition, EncArgmin, Histogram,
    Partition, PartitionLimits, DEFAULT_COST_SENSITIVITY,
};
use crate::summary::{DpSummary, SummaryProvenance};

// ---------------------------------------------------------------------------
// Messages and transcripts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Role {
    DataOwner,
    ComputationServer,
    DecryptionServer,
    DataAnalyst,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Role::DataOwner => "data-owner",
            Role::ComputationServer => "computation-server",
            Role::DecryptionServer => "decryption-server",
            Role::DataAnalyst => "data-analyst",
        };
        write!(f, "{s}")
    }
}

/// Authorization for one decryption: binds the decryption server's nonce to
/// the canonical bytes of the ciphertext being submitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DpToken {
    bytes: [u8; 32],
}

impl DpToken {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        DpToken { bytes }
    }

    pub fn bytes(&self) -> &[u8; 32] {
        &self.bytes
    }
}

/// Mints the token authorizing decryption of `payload_bytes`. Private to
/// the crate: only the pipeline's own noising steps mint tokens, which is
/// what makes a valid token evidence that noise was actually applied.
pub(crate) fn mint_token(nonce: u64, payload_bytes: &[u8]) -> DpToken {
    let mut h = Sha256::new();
    h.update(b"dp-summary/token");
    h.update(nonce.to_le_bytes());
    h.update(payload_bytes);
    DpToken { bytes: h.finalize().into() }
}

#[derive(Debug, Clone)]
pub enum DecryptRequestBody {
    /// The encrypted argmin of the partition selection.
    PartitionIndex(EncArgmin),
    /// The noisy bucket sums of the selected partition.
    NoisySums(Vec<EncWord>),
}

impl DecryptRequestBody {
    pub(crate) fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            DecryptRequestBody::PartitionIndex(a) => {
                out.extend_from_slice(b"partition-index");
                for bit in a.index_bits() {
                    bit.canonical_bytes(&mut out);
                }
                a.cost().canonical_bytes(&mut out);
            }
            DecryptRequestBody::NoisySums(words) => {
                out.extend_from_slice(b"noisy-sums");
                out.extend_from_slice(&(words.len() as u64).to_le_bytes());
                for w in words {
                    w.canonical_bytes(&mut out);
                }
            }
        }
        out
    }

    fn variant(&self) -> &'static str {
        match self {
            DecryptRequestBody::PartitionIndex(_) => "decrypt-request:partition-index",
            DecryptRequestBody::NoisySums(_) => "decrypt-request:noisy-sums",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecryptReplyBody {
    CutMask(u64),
    /// Raw fixed-point values of the noisy bucket sums.
    Sums(Vec<i64>),
}

impl DecryptReplyBody {
    fn variant(&self) -> &'static str {
        match self {
            DecryptReplyBody::CutMask(_) => "decrypt-reply:cut-mask",
            DecryptReplyBody::Sums(_) => "decrypt-reply:sums",
        }
    }
}

#[derive(Debug, Clone)]
pub enum MessagePayload {
    /// Key delivery from the decryption server to data owners.
    KeyDist(SecretKey),
    /// One encrypted record: a one-hot vector over the domains.
    Record(Vec<EncWord>),
    DecryptRequest { body: DecryptRequestBody, token: DpToken },
    DecryptReply(DecryptReplyBody),
    /// Range query over the published summary, 1-indexed inclusive.
    Query { l: usize, r: usize },
    Response(f64),
}

impl MessagePayload {
    pub fn variant(&self) -> &'static str {
        match self {
            MessagePayload::KeyDist(_) => "key-dist",
            MessagePayload::Record(_) => "record",
            MessagePayload::DecryptRequest { body, .. } => body.variant(),
            MessagePayload::DecryptReply(body) => body.variant(),
            MessagePayload::Query { .. } => "query",
            MessagePayload::Response(_) => "response",
        }
    }

    /// Content digest for transcript lines. Uses canonical ciphertext bytes
    /// so two runs with the same seeds export identical transcripts.
    fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"dp-summary/message");
        h.update(self.variant().as_bytes());
        match self {
            MessagePayload::KeyDist(key) => h.update(key.material()),
            MessagePayload::Record(words) => {
                let mut out = Vec::new();
                for w in words {
                    w.canonical_bytes(&mut out);
                }
                h.update(&out);
            }
            MessagePayload::DecryptRequest { body, token } => {
                h.update(body.canonical_bytes());
                h.update(token.bytes());
            }
            MessagePayload::DecryptReply(DecryptReplyBody::CutMask(mask)) => {
                h.update(mask.to_le_bytes());
            }
            MessagePayload::DecryptReply(DecryptReplyBody::Sums(raws)) => {
                h.update((raws.len() as u64).to_le_bytes());
                for r in raws {
                    h.update(r.to_le_bytes());
                }
            }
            MessagePayload::Query { l, r } => {
                h.update((*l as u64).to_le_bytes());
                h.update((*r as u64).to_le_bytes());
            }
            MessagePayload::Response(v) => h.update(v.to_bits().to_le_bytes()),
        }
        h.finalize().into()
    }
}

#[derive(Debug, Clone)]
pub struct Message {
    pub seq: u64,
    pub sender: Role,
    pub receiver: Role,
    pub payload: MessagePayload,
}

/// Ordered record of every message exchanged in a run.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    messages: Vec<Message>,
}

impl Transcript {
    pub fn new() -> Self {
        Transcript::default()
    }

    pub fn push(&mut self, sender: Role, receiver: Role, payload: MessagePayload) -> u64 {
        let seq = self.messages.len() as u64;
        self.messages.push(Message { seq, sender, receiver, payload });
        seq
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// One line per message: seq, sender, receiver, variant, content digest.
    /// Byte-identical across runs with the same seeds.
    pub fn export_lines(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let digest = m.payload.digest();
            let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                m.seq,
                m.sender,
                m.receiver,
                m.payload.variant(),
                hex
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Parties
// ---------------------------------------------------------------------------

/// Encrypts one record as a one-hot vector over `n` domains.
pub fn do_encrypt_record(
    be: &Backend,
    key: &SecretKey,
    domain: usize,
    n: usize,
    format: FixedFormat,
) -> Result<Vec<EncWord>> {
    if domain >= n {
        return Err(Error::InvalidInput(format!("record domain {domain} outside 0..{n}")));
    }
    (0..n)
        .map(|j| enc_encode(be, key, if j == domain { 1.0 } else { 0.0 }, format))
        .collect()
}

/// Component-wise aggregation of one-hot records into per-domain counts.
pub fn cs_aggregate(be: &Backend, records: &[Vec<EncWord>]) -> Result<Vec<EncWord>> {
    let first = records.first().ok_or(Error::EmptyInput("records"))?;
    let n = first.len();
    if let Some(bad) = records.iter().find(|r| r.len() != n) {
        return Err(Error::InvalidInput(format!(
            "record with {} components among records with {n}",
            bad.len()
        )));
    }
    (0..n)
        .map(|j| {
            let column: Vec<EncWord> = records.iter().map(|r| r[j].clone()).collect();
            crate::fixed::enc_sum(be, &column)
        })
        .collect()
}

/// The key holder. Decrypts only token-authorized requests and retains a
/// record of everything it ever revealed.
#[derive(Debug)]
pub struct DecryptionServer {
    key: SecretKey,
    nonce: u64,
    revealed: Vec<DecryptReplyBody>,
}

impl DecryptionServer {
    pub fn new(key: SecretKey, nonce: u64) -> Self {
        DecryptionServer { key, nonce, revealed: Vec::new() }
    }

    pub fn nonce(&self) -> u64 {
        self.nonce
    }

    pub fn key(&self) -> &SecretKey {
        &self.key
    }

    /// Everything this server has decrypted, in order.
    pub fn revealed(&self) -> &[DecryptReplyBody] {
        &self.revealed
    }

    /// Verifies the token against the presented ciphertext, then decrypts.
    /// A stale or forged token is refused before any key use.
    pub fn handle_request(&mut self, body: &DecryptRequestBody, token: &DpToken) -> Result<DecryptReplyBody> {
        let expect = mint_token(self.nonce, &body.canonical_bytes());
        if *token != expect {
            return Err(Error::DecryptRefused("token does not match the presented ciphertext"));
        }
        let reply = match body {
            DecryptRequestBody::PartitionIndex(argmin) => {
                DecryptReplyBody::CutMask(argmin.decrypt_mask(&self.key)?)
            }
            DecryptRequestBody::NoisySums(words) => {
                let raws = words
                    .iter()
                    .map(|w| Ok(enc_decode_plain(&self.key, w)?.raw()))
                    .collect::<Result<Vec<i64>>>()?;
                DecryptReplyBody::Sums(raws)
            }
        };
        self.revealed.push(reply.clone());
        Ok(reply)
    }
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Gate tallies per pipeline phase. Construction cost is everything after
/// aggregation: the cost table, the argmin fold (including partition
/// totals), and the bucket sums with their noise.
#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct PhaseStats {
    pub aggregation: GateStats,
    pub cost_table: GateStats,
    pub argmin: GateStats,
    pub bucket_sums: GateStats,
}

impl PhaseStats {
    pub fn construction_total(&self) -> u64 {
        self.cost_table.total() + self.argmin.total() + self.bucket_sums.total()
    }

    pub fn grand_total(&self) -> u64 {
        self.aggregation.total() + self.construction_total()
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub histogram: Histogram,
    pub format: FixedFormat,
    pub budget: PrivacyBudget,
    pub cost_sensitivity: f64,
    pub noise: NoiseStream,
    pub key_seed: u64,
    pub ds_nonce: u64,
    pub limits: PartitionLimits,
    /// Replay mode: skip selection and use this cut mask. The partition
    /// exchange is omitted; only the sums are noised and decrypted.
    pub forced_partition: Option<u64>,
}

impl PipelineConfig {
    pub fn new(histogram: Histogram, format: FixedFormat, budget: PrivacyBudget, noise: NoiseStream) -> Self {
        PipelineConfig {
            histogram,
            format,
            budget,
            cost_sensitivity: DEFAULT_COST_SENSITIVITY,
            noise,
            key_seed: 1,
            ds_nonce: 1,
            limits: PartitionLimits::default(),
            forced_partition: None,
        }
    }
}

/// Everything a pipeline run produces.
#[derive(Debug)]
pub struct PipelineRun {
    pub summary: DpSummary,
    pub transcript: Transcript,
    pub noise_log: NoiseLog,
    pub cut_mask: u64,
    pub s_prime_raw: Vec<i64>,
    pub s_prime: Vec<f64>,
    pub input_histogram: Histogram,
    pub phase_stats: PhaseStats,
    pub dataset_digest: [u8; 32],
}

/// Runs the whole protocol: key distribution, record submission,
/// aggregation, partition selection, noising, the two decrypt exchanges,
/// and summary publication. The ledger funds each dataset-budget pair once.
pub fn run_pipeline(cfg: &PipelineConfig, be: &Backend, ledger: &mut BudgetLedger) -> Result<PipelineRun> {
    let hist = &cfg.histogram;
    let n = hist.n();
    cfg.limits.check_encrypted(n)?;
    if !hist.is_integral() {
        return Err(Error::InvalidInput(
            "record synthesis requires integral histogram counts".into(),
        ));
    }
    if hist.total() == 0.0 {
        return Err(Error::EmptyInput("records"));
    }

    let fingerprint = dataset_fingerprint(hist.counts(), &cfg.budget);
    ledger.charge(fingerprint)?;

    let mut transcript = Transcript::new();
    let mut noise_log = NoiseLog::new();

    // Key distribution to the data owners; the computation server gets none.
    let key = keygen(cfg.key_seed);
    let mut ds = DecryptionServer::new(key.clone(), cfg.ds_nonce);
    transcript.push(Role::DecryptionServer, Role::DataOwner, MessagePayload::KeyDist(key.clone()));

    // Record submission: each count becomes that many one-hot records.
    let mut records = Vec::new();
    for (domain, &count) in hist.counts().iter().enumerate() {
        for _ in 0..count as u64 {
            let rec = do_encrypt_record(be, &key, domain, n, cfg.format)?;
            transcript.push(Role::DataOwner, Role::ComputationServer, MessagePayload::Record(rec.clone()));
            records.push(rec);
        }
    }

    let s0 = be.stats();
    let x = cs_aggregate(be, &records)?;
    let s1 = be.stats();

    // Partition selection, or the forced replay path.
    let (partition, s2, s3) = match cfg.forced_partition {
        Some(mask) => (Partition::from_mask(mask, n)?, s1, s1),
        None => {
            let cost_params = LaplaceParams::new(cfg.cost_sensitivity, cfg.budget.epsilon1())?;
            let table = build_cost_table(be, &x, &cost_params, &cfg.noise, &mut noise_log)?;
            let s2 = be.stats();
            let argmin = select_min_partition(be, &table)?;
            let s3 = be.stats();

            let body = DecryptRequestBody::PartitionIndex(argmin);
            let token = mint_token(ds.nonce(), &body.canonical_bytes());
            let reply = ds.handle_request(&body, &token)?;
            transcript.push(
                Role::ComputationServer,
                Role::DecryptionServer,
                MessagePayload::DecryptRequest { body, token },
            );
            transcript.push(
                Role::DecryptionServer,
                Role::ComputationServer,
                MessagePayload::DecryptReply(reply.clone()),
            );
            let mask = match reply {
                DecryptReplyBody::CutMask(mask) => mask,
                DecryptReplyBody::Sums(_) => unreachable!("partition request yields a cut mask"),
            };
            (Partition::from_mask(mask, n)?, s2, s3)
        }
    };

    // Bucket sums on the now-plaintext partition: exactly one draw per bucket.
    let s_pre = be.stats();
    let sums = bucket_sums(be, &x, &partition)?;
    let sum_params = LaplaceParams::new(1.0, cfg.budget.epsilon2())?;
    let noisy = noisy_bucket_sums(be, &sums, &sum_params, &cfg.noise, &mut noise_log)?;
    let s4 = be.stats();

    let body = DecryptRequestBody::NoisySums(noisy);
    let token = mint_token(ds.nonce(), &body.canonical_bytes());
    let reply = ds.handle_request(&body, &token)?;
    transcript.push(
        Role::ComputationServer,
        Role::DecryptionServer,
        MessagePayload::DecryptRequest { body, token },
    );
    transcript.push(
        Role::DecryptionServer,
        Role::ComputationServer,
        MessagePayload::DecryptReply(reply.clone()),
    );
    let s_prime_raw = match reply {
        DecryptReplyBody::Sums(raws) => raws,
        DecryptReplyBody::CutMask(_) => unreachable!("sums request yields sums"),
    };

    let s_prime: Vec<f64> = s_prime_raw
        .iter()
        .map(|&raw| Ok(PlainFixed::from_raw(raw, cfg.format)?.value()))
        .collect::<Result<_>>()?;
    let provenance = SummaryProvenance::new(cfg.budget, cfg.format, cfg.noise.seed());
    let summary = DpSummary::new(&partition, s_prime.clone(), provenance)?;

    let phase_stats = PhaseStats {
        aggregation: s1.since(&s0),
        cost_table: s2.since(&s1),
        argmin: s3.since(&s2),
        bucket_sums: s4.since(&s_pre),
    };

    Ok(PipelineRun {
        cut_mask: partition.cut_mask(),
        summary,
        transcript,
        noise_log,
        s_prime_raw,
        s_prime,
        input_histogram: hist.clone(),
        phase_stats,
        dataset_digest: fingerprint,
    })
}

/// Answers one analyst query from the published summary, recording the
/// exchange. Spends no privacy budget: the summary is already private.
pub fn serve_query(summary: &DpSummary, transcript: &mut Transcript, l: usize, r: usize) -> Result<f64> {
    let value = summary.range_query(l, r)?;
    transcript.push(Role::DataAnalyst, Role::ComputationServer, MessagePayload::Query { l, r });
    transcript.push(Role::ComputationServer, Role::DataAnalyst, MessagePayload::Response(value));
    Ok(value)
}

// ---------------------------------------------------------------------------
// Visibility audit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RuleOutcome {
    pub name: &'static str,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct VisibilityReport {
    pub rules: Vec<RuleOutcome>,
}

impl VisibilityReport {
    pub fn ok(&self) -> bool {
        self.rules.iter().all(|r| r.ok)
    }

    pub fn failures(&self) -> impl Iterator<Item = &RuleOutcome> {
        self.rules.iter().filter(|r| !r.ok)
    }
}

/// Audits a transcript against the four flow rules: key material flows only
/// from the decryption server to data owners, the decryption server
/// receives nothing but token-valid decrypt requests, analysts exchange
/// only queries and responses, and the server link carries only the decrypt
/// exchanges. The auditor knows the nonce; the parties it watches do not
/// gain anything from that.
pub fn assert_visibility(t: &Transcript, ds_nonce: u64) -> VisibilityReport {
    let mut rules = Vec::new();

    let mut key_ok = true;
    let mut key_detail = String::from("key material flows only from decryption server to data owners");
    for m in t.messages() {
        if let MessagePayload::KeyDist(_) = m.payload {
            if !(m.sender == Role::DecryptionServer && m.receiver == Role::DataOwner) {
                key_ok = false;
                key_detail = format!("message {} distributes key material {} -> {}", m.seq, m.sender, m.receiver);
                break;
            }
        }
    }
    rules.push(RuleOutcome { name: "no-key-material-to-computation-server", ok: key_ok, detail: key_detail });

    let mut ds_ok = true;
    let mut ds_detail = String::from("decryption server received only token-valid decrypt requests");
    for m in t.messages() {
        if m.receiver != Role::DecryptionServer {
            continue;
        }
        match &m.payload {
            MessagePayload::DecryptRequest { body, token } => {
                if *token != mint_token(ds_nonce, &body.canonical_bytes()) {
                    ds_ok = false;
                    ds_detail = format!("message {} carries a token that does not cover its ciphertext", m.seq);
                    break;
                }
            }
            other => {
                ds_ok = false;
                ds_detail = format!("message {} sends {} to the decryption server", m.seq, other.variant());
                break;
            }
        }
    }
    rules.push(RuleOutcome { name: "decryption-server-sees-only-authorized-requests", ok: ds_ok, detail: ds_detail });

    let mut da_ok = true;
    let mut da_detail = String::from("analysts exchange only queries and responses");
    for m in t.messages() {
        let bad_in = m.receiver == Role::DataAnalyst && !matches!(m.payload, MessagePayload::Response(_));
        let bad_out = m.sender == Role::DataAnalyst && !matches!(m.payload, MessagePayload::Query { .. });
        if bad_in || bad_out {
            da_ok = false;
            da_detail = format!("message {} exposes {} to an analyst boundary", m.seq, m.payload.variant());
            break;
        }
    }
    rules.push(RuleOutcome { name: "analysts-see-only-query-responses", ok: da_ok, detail: da_detail });

    let mut link_ok = true;
    let mut link_detail = String::from("server link carries only the decrypt exchanges");
    for m in t.messages() {
        let cs_to_ds = m.sender == Role::ComputationServer && m.receiver == Role::DecryptionServer;
        let ds_to_cs = m.sender == Role::DecryptionServer && m.receiver == Role::ComputationServer;
        let ok = if cs_to_ds {
            matches!(m.payload, MessagePayload::DecryptRequest { .. })
        } else if ds_to_cs {
            matches!(m.payload, MessagePayload::DecryptReply(_))
        } else {
            true
        };
        if !ok {
            link_ok = false;
            link_detail = format!("message {} puts {} on the server link", m.seq, m.payload.variant());
            break;
        }
    }
    rules.push(RuleOutcome { name: "server-link-carries-only-decrypt-exchanges", ok: link_ok, detail: link_detail });

    VisibilityReport { rules }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{Phase, StreamKind};
    use std::collections::BTreeMap;

    const REFERENCE: [f64; 7] = [3.0, 2.0, 6.0, 5.0, 6.0, 3.0, 4.0];

    fn fmt(t: u32, f: u32) -> FixedFormat {
        FixedFormat::new(t, f).unwrap()
    }

    fn reference_config(noise: NoiseStream) -> PipelineConfig {
        PipelineConfig::new(
            Histogram::new(REFERENCE.to_vec()).unwrap(),
            fmt(16, 8),
            PrivacyBudget::default_split(1.0).unwrap(),
            noise,
        )
    }

    fn forced_reference_noise() -> NoiseStream {
        let mut m = BTreeMap::new();
        m.insert((Phase::BucketSums, 0), -0.4);
        m.insert((Phase::BucketSums, 1), -0.8);
        m.insert((Phase::BucketSums, 2), 0.8);
        NoiseStream::forced(m)
    }

    #[test]
    fn golden_run_reproduces_the_worked_example() {
        let mut cfg = reference_config(forced_reference_noise());
        cfg.forced_partition = Some(0b10010);
        let be = Backend::cleartext();
        let mut ledger = BudgetLedger::new();
        let run = run_pipeline(&cfg, &be, &mut ledger).unwrap();

        assert_eq!(run.cut_mask, 0b10010);
        assert_eq!(run.s_prime_raw, vec![1177, 4147, 1996]);
        assert_eq!(run.s_prime, vec![4.59765625, 16.19921875, 7.796875]);
        let x = run.summary.expansion();
        let want = [
            4.59765625 / 2.0,
            4.59765625 / 2.0,
            16.19921875 / 3.0,
            16.19921875 / 3.0,
            16.19921875 / 3.0,
            7.796875 / 2.0,
            7.796875 / 2.0,
        ];
        assert_eq!(x, want);
        let full = run.summary.range_query(1, 7).unwrap();
        assert!((full - 28.59375).abs() < 1e-9);

        // Forced replay path: key-dist, 29 records, one decrypt exchange.
        let variants: Vec<&str> = run.transcript.messages().iter().map(|m| m.payload.variant()).collect();
        assert_eq!(variants[0], "key-dist");
        assert_eq!(variants[1..30].iter().filter(|v| **v == "record").count(), 29);
        assert_eq!(variants[30], "decrypt-request:noisy-sums");
        assert_eq!(variants[31], "decrypt-reply:sums");
        assert_eq!(variants.len(), 32);

        assert!(assert_visibility(&run.transcript, cfg.ds_nonce).ok());
        assert_eq!(run.noise_log.count_for(Phase::BucketSums), 3);
        assert_eq!(run.noise_log.count_for(Phase::CostTable), 0);
    }

    #[test]
    fn full_run_matches_the_fixed_point_oracle() {
        use crate::oracle::{oracle_pipeline, OracleConfig};
        for seed in [11u64, 12, 13] {
            let counts: Vec<f64> = (0..5).map(|i| ((seed * 3 + i * 7) % 6 + 1) as f64).collect();
            let hist = Histogram::new(counts).unwrap();
            let format = fmt(12, 4);
            let budget = PrivacyBudget::default_split(1.0).unwrap();
            let stream = NoiseStream::seeded(seed);

            let cfg = PipelineConfig::new(hist.clone(), format, budget, stream.clone());
            let be = Backend::cleartext();
            let mut ledger = BudgetLedger::new();
            let run = run_pipeline(&cfg, &be, &mut ledger).unwrap();

            let want = oracle_pipeline(&hist, &OracleConfig::fixed_point(format, budget), &stream).unwrap();
            assert_eq!(run.cut_mask, want.cut_mask, "seed {seed}");
            assert_eq!(Some(run.s_prime_raw.clone()), want.s_prime_raw, "seed {seed}");
            assert_eq!(run.summary.expansion(), &want.x_prime[..], "seed {seed}");
            assert!(assert_visibility(&run.transcript, cfg.ds_nonce).ok());

            // Two decrypt exchanges on the full path.
            let requests = run
                .transcript
                .messages()
                .iter()
                .filter(|m| matches!(m.payload, MessagePayload::DecryptRequest { .. }))
                .count();
            assert_eq!(requests, 2);
        }
    }

    #[test]
    fn ledger_refuses_a_second_construction() {
        let cfg = reference_config(NoiseStream::seeded(5));
        let be = Backend::cleartext();
        let mut ledger = BudgetLedger::new();
        assert!(run_pipeline(&cfg, &be, &mut ledger).is_ok());
        assert!(matches!(run_pipeline(&cfg, &be, &mut ledger), Err(Error::BudgetExhausted)));

        // A different budget over the same data is a separate entitlement.
        let mut other = reference_config(NoiseStream::seeded(5));
        other.budget = PrivacyBudget::default_split(0.5).unwrap();
        assert!(run_pipeline(&other, &be, &mut ledger).is_ok());
    }

    #[test]
    fn pipeline_rejects_unusable_inputs() {
        let be = Backend::cleartext();
        let mut ledger = BudgetLedger::new();

        let mut cfg = reference_config(NoiseStream::zero());
        cfg.histogram = Histogram::new(vec![1.5, 2.0]).unwrap();
        assert!(matches!(run_pipeline(&cfg, &be, &mut ledger), Err(Error::InvalidInput(_))));

        cfg.histogram = Histogram::new(vec![0.0, 0.0]).unwrap();
        assert!(matches!(run_pipeline(&cfg, &be, &mut ledger), Err(Error::EmptyInput("records"))));

        cfg.histogram = Histogram::new(vec![1.0; 9]).unwrap();
        assert!(matches!(
            run_pipeline(&cfg, &be, &mut ledger),
            Err(Error::DomainTooLarge { n: 9, max: 8 })
        ));
    }

    #[test]
    fn decryption_refuses_unauthorized_or_stale_tokens() {
        let be = Backend::cleartext();
        let key = keygen(33);
        let mut ds = DecryptionServer::new(key.clone(), 77);

        let w = enc_encode(&be, &key, 5.0, fmt(12, 4)).unwrap();
        let body = DecryptRequestBody::NoisySums(vec![w.clone()]);

        // Garbage token.
        let forged = DpToken::from_bytes([0u8; 32]);
        assert!(matches!(
            ds.handle_request(&body, &forged),
            Err(Error::DecryptRefused(_))
        ));
        assert!(ds.revealed().is_empty());

        // Valid token for this exact ciphertext decrypts, twice, identically.
        let token = mint_token(77, &body.canonical_bytes());
        let a = ds.handle_request(&body, &token).unwrap();
        let b = ds.handle_request(&body, &token).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, DecryptReplyBody::Sums(vec![5 * 16]));
        assert_eq!(ds.revealed().len(), 2);

        // Stale: the same once-valid token over a different ciphertext.
        let other = enc_encode(&be, &key, 6.0, fmt(12, 4)).unwrap();
        let tampered = DecryptRequestBody::NoisySums(vec![other]);
        assert!(matches!(
            ds.handle_request(&tampered, &token),
            Err(Error::DecryptRefused(_))
        ));
    }

    #[test]
    fn visibility_audit_flags_injected_faults() {
        let cfg = reference_config(NoiseStream::seeded(9));
        let be = Backend::cleartext();
        let mut ledger = BudgetLedger::new();
        let run = run_pipeline(&cfg, &be, &mut ledger).unwrap();
        assert!(assert_visibility(&run.transcript, cfg.ds_nonce).ok());

        // Key material leaked to the computation server.
        let mut t1 = run.transcript.clone();
        t1.push(Role::DecryptionServer, Role::ComputationServer, MessagePayload::KeyDist(keygen(cfg.key_seed)));
        let r1 = assert_visibility(&t1, cfg.ds_nonce);
        assert!(!r1.ok());
        assert!(r1.failures().any(|f| f.name == "no-key-material-to-computation-server"));

        // Raw record routed to the decryption server.
        let mut t2 = run.transcript.clone();
        let rec = do_encrypt_record(&be, &keygen(cfg.key_seed), 0, 7, fmt(16, 8)).unwrap();
        t2.push(Role::DataOwner, Role::DecryptionServer, MessagePayload::Record(rec));
        let r2 = assert_visibility(&t2, cfg.ds_nonce);
        assert!(!r2.ok());
        assert!(r2.failures().any(|f| f.name == "decryption-server-sees-only-authorized-requests"));

        // A once-valid token replayed over a different ciphertext.
        let mut t3 = run.transcript.clone();
        let old_token = run
            .transcript
            .messages()
            .iter()
            .find_map(|m| match &m.payload {
                MessagePayload::DecryptRequest { token, .. } => Some(*token),
                _ => None,
            })
            .unwrap();
        let other = enc_encode(&be, &keygen(cfg.key_seed), 9.0, fmt(16, 8)).unwrap();
        t3.push(
            Role::ComputationServer,
            Role::DecryptionServer,
            MessagePayload::DecryptRequest {
                body: DecryptRequestBody::NoisySums(vec![other]),
                token: old_token,
            },
        );
        let r3 = assert_visibility(&t3, cfg.ds_nonce);
        assert!(!r3.ok());
        assert!(r3.failures().any(|f| f.name == "decryption-server-sees-only-authorized-requests"));

        // Ciphertext pushed across the analyst boundary.
        let mut t4 = run.transcript.clone();
        let w = enc_encode(&be, &keygen(cfg.key_seed), 1.0, fmt(16, 8)).unwrap();
        t4.push(Role::ComputationServer, Role::DataAnalyst, MessagePayload::Record(vec![w]));
        let r4 = assert_visibility(&t4, cfg.ds_nonce);
        assert!(!r4.ok());
        assert!(r4.failures().any(|f| f.name == "analysts-see-only-query-responses"));
    }

    #[test]
    fn queries_append_to_the_transcript_and_stay_visible_clean() {
        let mut cfg = reference_config(forced_reference_noise());
        cfg.forced_partition = Some(0b10010);
        let be = Backend::cleartext();
        let mut ledger = BudgetLedger::new();
        let mut run = run_pipeline(&cfg, &be, &mut ledger).unwrap();

        let before = run.transcript.len();
        let v = serve_query(&run.summary, &mut run.transcript, 1, 2).unwrap();
        assert_eq!(v, 4.59765625);
        assert_eq!(run.transcript.len(), before + 2);
        let tail: Vec<&str> = run.transcript.messages()[before..]
            .iter()
            .map(|m| m.payload.variant())
            .collect();
        assert_eq!(tail, vec!["query", "response"]);
        assert!(assert_visibility(&run.transcript, cfg.ds_nonce).ok());

        assert!(serve_query(&run.summary, &mut run.transcript, 0, 2).is_err());
    }

    #[test]
    fn transcripts_are_reproducible_across_runs() {
        let make = || {
            let cfg = reference_config(NoiseStream::seeded(123));
            let be = Backend::cleartext();
            let mut ledger = BudgetLedger::new();
            run_pipeline(&cfg, &be, &mut ledger).unwrap()
        };
        let a = make();
        let b = make();
        assert_eq!(a.transcript.export_lines(), b.transcript.export_lines());
        assert!(!a.transcript.export_lines().is_empty());
    }

    #[test]
    fn phase_stats_cover_every_gate_and_respect_closed_forms() {
        let cfg = reference_config(NoiseStream::seeded(4));
        let be = Backend::counting();
        let mut ledger = BudgetLedger::new();
        let run = run_pipeline(&cfg, &be, &mut ledger).unwrap();

        let total = be.stats().total();
        assert_eq!(run.phase_stats.grand_total(), total);
        assert!(run.phase_stats.aggregation.total() > 0);
        assert!(run.phase_stats.cost_table.total() > 0);
        assert!(run.phase_stats.argmin.total() > 0);
        assert!(run.phase_stats.bucket_sums.total() > 0);

        // Aggregation is n independent sums of R one-hot words:
        // n * (R - 1) * (5T - 3) gates at T = 16.
        let r = REFERENCE.iter().sum::<f64>() as u64;
        let t = 16u64;
        assert_eq!(run.phase_stats.aggregation.total(), 7 * (r - 1) * (5 * t - 3));

        assert_eq!(
            run.phase_stats.construction_total(),
            total - run.phase_stats.aggregation.total()
        );
    }

    #[test]
    fn stream_kind_is_visible_for_config_plumbing() {
        let s = NoiseStream::seeded(1);
        assert!(matches!(s.kind(), StreamKind::Seeded));
    }
}
