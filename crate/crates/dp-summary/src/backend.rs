//! Boolean gates over simulated ciphertext bits.
//!
//! Every arithmetic circuit in this crate is built from five gates: AND, OR,
//! XOR, NOT and MUX. A [`Backend`] evaluates those gates on [`EncBit`]
//! handles and tallies every invocation, standing in for the per-gate cost of
//! a bit-oriented homomorphic scheme (TFHE-style gate bootstrapping). Two
//! constructions are provided:
//!
//! * [`Backend::cleartext`]: the reference evaluator. Stores the plaintext
//!   bit inside each handle and tags key identity, so wrong-key decryption
//!   and (optionally) arithmetic overflow are detected in tests.
//! * [`Backend::counting`]: the benchmark evaluator. Identical gate
//!   semantics, paired with a [`GateCostModel`] so tallies convert into a
//!   wall-time estimate.
//!
//! Both backends must produce identical decrypted outputs and identical gate
//! counts for the same circuit; a real-FHE backend would slot in behind the
//! same gate interface with opaque handles. Gate tallies use atomic counters
//! so independent circuits may be evaluated concurrently on one backend.

use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Keys
// ---------------------------------------------------------------------------

/// Identity tag carried by ciphertext bits so the simulation can detect
/// decryption under the wrong key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyId(u64);

/// Secret key for the simulated scheme. Deterministically derived from a
/// seed: the same seed yields the same key, distinct seeds yield distinct
/// key identities.
#[derive(Clone)]
pub struct SecretKey {
    id: KeyId,
    material: [u8; 32],
}

impl SecretKey {
    pub fn id(&self) -> KeyId {
        self.id
    }

    /// Key material digest, used only for transcript fingerprints.
    pub(crate) fn material(&self) -> &[u8; 32] {
        &self.material
    }
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // Never print key material.
        write!(f, "SecretKey({:#x})", self.id.0)
    }
}

/// Derives a secret key from an RNG seed.
pub fn keygen(seed: u64) -> SecretKey {
    let mut h = Sha256::new();
    h.update(b"dp-summary/keygen");
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    let mut material = [0u8; 32];
    material.copy_from_slice(&digest);
    let id = KeyId(u64::from_le_bytes(material[..8].try_into().unwrap()));
    SecretKey { id, material }
}

// ---------------------------------------------------------------------------
// Ciphertext bits
// ---------------------------------------------------------------------------

/// Where a ciphertext bit came from. Trivial bits encode public constants:
/// they decrypt correctly under any key and may flow through gates exactly
/// like encrypted bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitOrigin {
    Trivial,
    Encrypted(KeyId),
}

/// Handle to one encrypted boolean. `Copy` on purpose: circuits shuffle bits
/// around freely (sign extension, shifts) without touching the backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncBit {
    bit: bool,
    origin: BitOrigin,
    backend: u64,
}

impl EncBit {
    pub fn origin(&self) -> BitOrigin {
        self.origin
    }

    pub fn is_trivial(&self) -> bool {
        matches!(self.origin, BitOrigin::Trivial)
    }

    /// Raw simulated bit, for internal checks and digests only. Real
    /// backends would not expose this.
    pub(crate) fn peek(&self) -> bool {
        self.bit
    }

    /// Stable byte encoding for transcript digests. Excludes the backend
    /// instance id, which varies from run to run.
    pub(crate) fn canonical_bytes(&self, out: &mut Vec<u8>) {
        out.push(self.bit as u8);
        match self.origin {
            BitOrigin::Trivial => out.push(0),
            BitOrigin::Encrypted(KeyId(k)) => {
                out.push(1);
                out.extend_from_slice(&k.to_le_bytes());
            }
        }
    }
}

/// Decrypts one bit. Trivial bits decrypt under any key; encrypted bits
/// require the matching key identity.
pub fn decrypt_bit(key: &SecretKey, c: EncBit) -> Result<bool> {
    match c.origin {
        BitOrigin::Trivial => Ok(c.bit),
        BitOrigin::Encrypted(id) if id == key.id => Ok(c.bit),
        BitOrigin::Encrypted(_) => Err(Error::KeyMismatch),
    }
}

// ---------------------------------------------------------------------------
// Gate accounting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    And,
    Or,
    Xor,
    Not,
    Mux,
}

impl GateKind {
    pub const ALL: [GateKind; 5] = [
        GateKind::And,
        GateKind::Or,
        GateKind::Xor,
        GateKind::Not,
        GateKind::Mux,
    ];

    fn index(self) -> usize {
        match self {
            GateKind::And => 0,
            GateKind::Or => 1,
            GateKind::Xor => 2,
            GateKind::Not => 3,
            GateKind::Mux => 4,
        }
    }
}

/// Snapshot of per-kind gate tallies. Counts are monotone over the life of a
/// backend; subtract two snapshots to get a phase delta.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct GateStats {
    pub and: u64,
    pub or: u64,
    pub xor: u64,
    pub not: u64,
    pub mux: u64,
}

impl GateStats {
    pub fn total(&self) -> u64 {
        self.and + self.or + self.xor + self.not + self.mux
    }

    pub fn get(&self, kind: GateKind) -> u64 {
        match kind {
            GateKind::And => self.and,
            GateKind::Or => self.or,
            GateKind::Xor => self.xor,
            GateKind::Not => self.not,
            GateKind::Mux => self.mux,
        }
    }

    /// Tallies accumulated since `earlier`. Panics if `earlier` is not an
    /// older snapshot of the same backend (counts only ever grow).
    pub fn since(&self, earlier: &GateStats) -> GateStats {
        GateStats {
            and: self.and - earlier.and,
            or: self.or - earlier.or,
            xor: self.xor - earlier.xor,
            not: self.not - earlier.not,
            mux: self.mux - earlier.mux,
        }
    }

    /// Estimated evaluation cost under a homomorphic cost model.
    pub fn cost_estimate(&self, model: &GateCostModel) -> f64 {
        GateKind::ALL
            .iter()
            .map(|&k| self.get(k) as f64 * model.unit_cost(k))
            .sum()
    }
}

/// Per-gate cost table. All five gate kinds default to a single configurable
/// constant, the shape of a gate-bootstrapping scheme where every binary
/// gate costs one bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GateCostModel {
    /// Seconds per gate evaluation.
    pub seconds_per_gate: f64,
}

impl GateCostModel {
    pub fn uniform(seconds_per_gate: f64) -> Self {
        GateCostModel { seconds_per_gate }
    }

    pub fn unit_cost(&self, _kind: GateKind) -> f64 {
        self.seconds_per_gate
    }
}

impl Default for GateCostModel {
    fn default() -> Self {
        // Order of magnitude of one gate bootstrap on commodity hardware.
        GateCostModel::uniform(0.01)
    }
}

// ---------------------------------------------------------------------------
// Backend
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    /// Reference evaluator with plaintext bits and strict key checks.
    Cleartext,
    /// Cost-accounting evaluator used by the benchmark harness.
    Counting,
}

static NEXT_BACKEND_ID: AtomicU64 = AtomicU64::new(1);

/// Gate evaluator. See the module docs for the two constructions.
pub struct Backend {
    id: u64,
    kind: BackendKind,
    overflow_checks: bool,
    cost: GateCostModel,
    counts: [AtomicU64; 5],
}

impl Backend {
    fn new(kind: BackendKind, cost: GateCostModel) -> Self {
        Backend {
            id: NEXT_BACKEND_ID.fetch_add(1, Ordering::Relaxed),
            kind,
            overflow_checks: false,
            cost,
            counts: Default::default(),
        }
    }

    pub fn cleartext() -> Self {
        Backend::new(BackendKind::Cleartext, GateCostModel::default())
    }

    pub fn counting() -> Self {
        Backend::new(BackendKind::Counting, GateCostModel::default())
    }

    pub fn counting_with_cost(cost: GateCostModel) -> Self {
        Backend::new(BackendKind::Counting, cost)
    }

    /// Enables out-of-range detection inside the arithmetic circuits. Only
    /// meaningful on the cleartext backend, which can see operand values;
    /// off by default so out-of-range intermediates wrap like the two's
    /// complement hardware they model.
    pub fn with_overflow_checks(mut self) -> Self {
        self.overflow_checks = true;
        self
    }

    pub fn kind(&self) -> BackendKind {
        self.kind
    }

    pub fn cost_model(&self) -> GateCostModel {
        self.cost
    }

    pub(crate) fn checks_overflow(&self) -> bool {
        self.kind == BackendKind::Cleartext && self.overflow_checks
    }

    pub fn encrypt(&self, key: &SecretKey, bit: bool) -> EncBit {
        EncBit {
            bit,
            origin: BitOrigin::Encrypted(key.id),
            backend: self.id,
        }
    }

    /// Trivial (key-less) encoding of a public constant bit.
    pub fn trivial(&self, bit: bool) -> EncBit {
        EncBit {
            bit,
            origin: BitOrigin::Trivial,
            backend: self.id,
        }
    }

    pub fn stats(&self) -> GateStats {
        GateStats {
            and: self.counts[0].load(Ordering::Relaxed),
            or: self.counts[1].load(Ordering::Relaxed),
            xor: self.counts[2].load(Ordering::Relaxed),
            not: self.counts[3].load(Ordering::Relaxed),
            mux: self.counts[4].load(Ordering::Relaxed),
        }
    }

    fn bump(&self, kind: GateKind) {
        self.counts[kind.index()].fetch_add(1, Ordering::Relaxed);
    }

    /// Joins operand origins: trivial is absorbed, two different key
    /// identities are a contract violation.
    fn join(&self, bits: &[EncBit]) -> Result<BitOrigin> {
        let mut origin = BitOrigin::Trivial;
        for b in bits {
            if b.backend != self.id {
                return Err(Error::BackendMismatch);
            }
            origin = match (origin, b.origin) {
                (BitOrigin::Trivial, o) => o,
                (o, BitOrigin::Trivial) => o,
                (BitOrigin::Encrypted(i), BitOrigin::Encrypted(j)) if i == j => {
                    BitOrigin::Encrypted(i)
                }
                _ => return Err(Error::KeyMismatch),
            };
        }
        Ok(origin)
    }

    fn emit(&self, kind: GateKind, inputs: &[EncBit], bit: bool) -> Result<EncBit> {
        let origin = self.join(inputs)?;
        self.bump(kind);
        Ok(EncBit {
            bit,
            origin,
            backend: self.id,
        })
    }

    pub fn and(&self, a: EncBit, b: EncBit) -> Result<EncBit> {
        self.emit(GateKind::And, &[a, b], a.bit & b.bit)
    }

    pub fn or(&self, a: EncBit, b: EncBit) -> Result<EncBit> {
        self.emit(GateKind::Or, &[a, b], a.bit | b.bit)
    }

    pub fn xor(&self, a: EncBit, b: EncBit) -> Result<EncBit> {
        self.emit(GateKind::Xor, &[a, b], a.bit ^ b.bit)
    }

    pub fn not(&self, a: EncBit) -> Result<EncBit> {
        self.emit(GateKind::Not, &[a], !a.bit)
    }

    /// Multiplexer: `sel = 1` selects the first data operand `a`.
    pub fn mux(&self, sel: EncBit, a: EncBit, b: EncBit) -> Result<EncBit> {
        self.emit(GateKind::Mux, &[sel, a, b], if sel.bit { a.bit } else { b.bit })
    }
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("stats", &self.stats())
            .finish()
    }
}
