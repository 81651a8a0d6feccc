//! Two's complement fixed-point arithmetic, plain and encrypted.
//!
//! A format `T:F` stores a signed value on `T` bits with `F` fractional
//! bits; the represented value is `raw * 2^-F` for `raw` in
//! `[-2^(T-1), 2^(T-1) - 1]`. Encoding a real rounds it down to the raw
//! grid (`raw = floor(x * 2^F)`), so encoded values never exceed the input.
//!
//! [`PlainFixed`] is the plaintext mirror: ordinary integer arithmetic with
//! exactly the wrapping and truncation semantics of the circuits below, used
//! as the reference oracle throughout the test suite. [`EncWord`] is a
//! little-endian vector of ciphertext bits evaluated gate by gate on a
//! [`Backend`]. All circuits are data-oblivious: their gate counts depend
//! only on the format (and operand count), never on operand values.

use crate::backend::{decrypt_bit, Backend, EncBit, SecretKey};
use crate::error::{Error, Result};

/// Upper bound on word width. Keeps double-width multiplication products
/// comfortably inside `i128` and is far beyond the supported experiment
/// formats.
pub const MAX_TOTAL_BITS: u32 = 32;

// ---------------------------------------------------------------------------
// Formats
// ---------------------------------------------------------------------------

/// Fixed-point format: `total_bits` overall (including sign), `frac_bits`
/// of them fractional. Requires `total_bits >= frac_bits + 2` so at least
/// one integer bit accompanies the sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct FixedFormat {
    total_bits: u32,
    frac_bits: u32,
}

impl FixedFormat {
    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self> {
        if total_bits < frac_bits + 2 || total_bits > MAX_TOTAL_BITS {
            return Err(Error::InvalidFormat(total_bits, frac_bits));
        }
        Ok(FixedFormat { total_bits, frac_bits })
    }

    /// Parses the `T:F` notation used on the command line, e.g. `16:8`.
    pub fn parse(s: &str) -> Result<Self> {
        let (t, f) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidInput(format!("expected T:F format, got {s:?}")))?;
        let t = t.trim().parse::<u32>().map_err(|e| Error::InvalidInput(format!("bad total bits: {e}")))?;
        let f = f.trim().parse::<u32>().map_err(|e| Error::InvalidInput(format!("bad frac bits: {e}")))?;
        FixedFormat::new(t, f)
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn min_raw(&self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    pub fn max_raw(&self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    /// Width of one quantization step, `2^-F`.
    pub fn step(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    /// Wraps an arbitrary integer into this format's two's complement range,
    /// mirroring what a `total_bits`-wide register would hold.
    fn wrap(&self, v: i128) -> i64 {
        let m = 1i128 << self.total_bits;
        let mut r = v.rem_euclid(m);
        if r >= m >> 1 {
            r -= m;
        }
        r as i64
    }
}

impl std::fmt::Display for FixedFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.total_bits, self.frac_bits)
    }
}

/// The three word formats exercised by the experiments.
pub const EXPERIMENT_FORMATS: [(u32, u32); 3] = [(10, 2), (12, 4), (16, 8)];

/// Encodes a real into a format, rounding toward negative infinity on the
/// raw grid. Fails if the value is not finite or falls outside the range.
pub fn encode(x: f64, format: FixedFormat) -> Result<PlainFixed> {
    if !x.is_finite() {
        return Err(Error::Unrepresentable(x, format.total_bits, format.frac_bits));
    }
    let scaled = (x * (format.frac_bits as f64).exp2()).floor();
    if scaled < format.min_raw() as f64 || scaled > format.max_raw() as f64 {
        return Err(Error::Unrepresentable(x, format.total_bits, format.frac_bits));
    }
    Ok(PlainFixed { raw: scaled as i64, format })
}

/// Reciprocal constant `1/m` encoded in `format`; the multiplier used to
/// turn an interval sum into its truncated average.
pub fn reciprocal(m: usize, format: FixedFormat) -> Result<PlainFixed> {
    if m == 0 {
        return Err(Error::InvalidInput("reciprocal of zero".into()));
    }
    encode(1.0 / m as f64, format)
}

// ---------------------------------------------------------------------------
// Plaintext words
// ---------------------------------------------------------------------------

/// Plaintext fixed-point word. Arithmetic wraps modulo `2^T` exactly like
/// the encrypted circuits, so results match them bit for bit even when an
/// intermediate leaves the representable range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlainFixed {
    raw: i64,
    format: FixedFormat,
}

impl PlainFixed {
    pub fn from_raw(raw: i64, format: FixedFormat) -> Result<Self> {
        if raw < format.min_raw() || raw > format.max_raw() {
            return Err(Error::Unrepresentable(
                raw as f64 * format.step(),
                format.total_bits,
                format.frac_bits,
            ));
        }
        Ok(PlainFixed { raw, format })
    }

    pub fn zero(format: FixedFormat) -> Self {
        PlainFixed { raw: 0, format }
    }

    pub fn raw(&self) -> i64 {
        self.raw
    }

    pub fn format(&self) -> FixedFormat {
        self.format
    }

    pub fn value(&self) -> f64 {
        self.raw as f64 * self.format.step()
    }

    fn same_format(&self, other: &PlainFixed) -> Result<()> {
        if self.format != other.format {
            return Err(Error::FormatMismatch(
                self.format.total_bits,
                self.format.frac_bits,
                other.format.total_bits,
                other.format.frac_bits,
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &PlainFixed) -> Result<PlainFixed> {
        self.same_format(other)?;
        Ok(PlainFixed {
            raw: self.format.wrap(self.raw as i128 + other.raw as i128),
            format: self.format,
        })
    }

    pub fn sub(&self, other: &PlainFixed) -> Result<PlainFixed> {
        self.same_format(other)?;
        Ok(PlainFixed {
            raw: self.format.wrap(self.raw as i128 - other.raw as i128),
            format: self.format,
        })
    }

    pub fn neg(&self) -> PlainFixed {
        PlainFixed {
            raw: self.format.wrap(-(self.raw as i128)),
            format: self.format,
        }
    }

    /// Absolute value. The most negative raw has no positive counterpart and
    /// wraps back onto itself, as in the circuit.
    pub fn abs(&self) -> PlainFixed {
        if self.raw < 0 {
            self.neg()
        } else {
            *self
        }
    }

    pub fn lt(&self, other: &PlainFixed) -> Result<bool> {
        self.same_format(other)?;
        Ok(self.raw < other.raw)
    }

    pub fn min(&self, other: &PlainFixed) -> Result<PlainFixed> {
        Ok(if self.lt(other)? { *self } else { *other })
    }

    /// Product with truncation toward negative infinity on the raw scale:
    /// `raw_out = floor(raw_a * raw_c / 2^F)`, wrapped to the word width.
    pub fn mul(&self, other: &PlainFixed) -> Result<PlainFixed> {
        self.same_format(other)?;
        let product = self.raw as i128 * other.raw as i128;
        let shifted = product >> self.format.frac_bits;
        Ok(PlainFixed {
            raw: self.format.wrap(shifted),
            format: self.format,
        })
    }

    pub fn sum<'a, I: IntoIterator<Item = &'a PlainFixed>>(items: I) -> Result<PlainFixed> {
        let mut it = items.into_iter();
        let first = *it.next().ok_or(Error::EmptyInput("sum of zero words"))?;
        it.try_fold(first, |acc, x| acc.add(x))
    }
}

// ---------------------------------------------------------------------------
// Encrypted words
// ---------------------------------------------------------------------------

/// Encrypted fixed-point word: `total_bits` ciphertext bits, little endian,
/// two's complement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncWord {
    bits: Vec<EncBit>,
    format: FixedFormat,
}

impl EncWord {
    pub fn format(&self) -> FixedFormat {
        self.format
    }

    pub fn bits(&self) -> &[EncBit] {
        &self.bits
    }

    fn sign_bit(&self) -> EncBit {
        *self.bits.last().expect("words are never empty")
    }

    /// Raw value visible to the simulation, ignoring keys. Used by overflow
    /// checks and transcript digests, never by the protocol logic.
    pub(crate) fn peek_raw(&self) -> i64 {
        let mut raw: i64 = 0;
        for (i, b) in self.bits.iter().enumerate() {
            if b.peek() {
                raw |= 1 << i;
            }
        }
        // Sign extend from the top bit.
        let t = self.format.total_bits;
        if raw & (1 << (t - 1)) != 0 {
            raw -= 1 << t;
        }
        raw
    }

    pub(crate) fn canonical_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.format.total_bits.to_le_bytes());
        out.extend_from_slice(&self.format.frac_bits.to_le_bytes());
        for b in &self.bits {
            b.canonical_bytes(out);
        }
    }
}

fn bits_of_raw(raw: i64, format: FixedFormat) -> impl Iterator<Item = bool> {
    (0..format.total_bits).map(move |i| (raw >> i) & 1 == 1)
}

/// Encrypts a plaintext word bit by bit.
pub fn enc_encrypt(be: &Backend, key: &SecretKey, p: PlainFixed) -> EncWord {
    EncWord {
        bits: bits_of_raw(p.raw, p.format).map(|b| be.encrypt(key, b)).collect(),
        format: p.format,
    }
}

/// Trivial (key-less) encoding of a plaintext word, used to inject public
/// constants and noise terms into circuits.
pub fn enc_trivial(be: &Backend, p: PlainFixed) -> EncWord {
    EncWord {
        bits: bits_of_raw(p.raw, p.format).map(|b| be.trivial(b)).collect(),
        format: p.format,
    }
}

/// Encodes and encrypts a real value.
pub fn enc_encode(be: &Backend, key: &SecretKey, x: f64, format: FixedFormat) -> Result<EncWord> {
    Ok(enc_encrypt(be, key, encode(x, format)?))
}

/// Encodes a real value as a trivial word.
pub fn enc_encode_trivial(be: &Backend, x: f64, format: FixedFormat) -> Result<EncWord> {
    Ok(enc_trivial(be, encode(x, format)?))
}

/// Decrypts a word back to its plaintext mirror.
pub fn enc_decode_plain(key: &SecretKey, w: &EncWord) -> Result<PlainFixed> {
    let mut raw: i64 = 0;
    for (i, &b) in w.bits.iter().enumerate() {
        if decrypt_bit(key, b)? {
            raw |= 1 << i;
        }
    }
    let t = w.format.total_bits;
    if raw & (1 << (t - 1)) != 0 {
        raw -= 1 << t;
    }
    Ok(PlainFixed { raw, format: w.format })
}

/// Decrypts a word to its real value.
pub fn enc_decode(key: &SecretKey, w: &EncWord) -> Result<f64> {
    Ok(enc_decode_plain(key, w)?.value())
}

fn same_format(a: &EncWord, b: &EncWord) -> Result<FixedFormat> {
    if a.format != b.format {
        return Err(Error::FormatMismatch(
            a.format.total_bits,
            a.format.frac_bits,
            b.format.total_bits,
            b.format.frac_bits,
        ));
    }
    Ok(a.format)
}

// --- ripple-carry building blocks ------------------------------------------
//
// `ripple_add` computes `a + b + carry_in` over equal-width slices, dropping
// the carry out of the top bit: exactly the wrap-around of a fixed-width
// register. Full-adder cells cost five gates; the top cell skips the carry
// computation (two gates).

fn ripple_add(be: &Backend, a: &[EncBit], b: &[EncBit], carry_in: EncBit) -> Result<Vec<EncBit>> {
    debug_assert_eq!(a.len(), b.len());
    let w = a.len();
    let mut out = Vec::with_capacity(w);
    let mut carry = carry_in;
    for i in 0..w {
        let axb = be.xor(a[i], b[i])?;
        out.push(be.xor(axb, carry)?);
        if i + 1 < w {
            let gen = be.and(a[i], b[i])?;
            let prop = be.and(carry, axb)?;
            carry = be.or(gen, prop)?;
        }
    }
    Ok(out)
}

/// `a - b` as `a + !b + 1` in a single borrow chain.
fn ripple_sub(be: &Backend, a: &[EncBit], b: &[EncBit]) -> Result<Vec<EncBit>> {
    let nb = b.iter().map(|&x| be.not(x)).collect::<Result<Vec<_>>>()?;
    ripple_add(be, a, &nb, be.trivial(true))
}

/// Two's complement negation: invert all bits, then increment.
fn ripple_neg(be: &Backend, a: &[EncBit]) -> Result<Vec<EncBit>> {
    let w = a.len();
    let mut out = Vec::with_capacity(w);
    let mut carry = be.trivial(true);
    for i in 0..w {
        let na = be.not(a[i])?;
        out.push(be.xor(na, carry)?);
        if i + 1 < w {
            carry = be.and(na, carry)?;
        }
    }
    Ok(out)
}

fn check_range(be: &Backend, op: &'static str, format: FixedFormat, exact: i128) -> Result<()> {
    if be.checks_overflow() && (exact < format.min_raw() as i128 || exact > format.max_raw() as i128)
    {
        return Err(Error::Overflow(op));
    }
    Ok(())
}

/// Ripple-carry addition; the result wraps on overflow unless the backend
/// was built with overflow checks.
pub fn enc_add(be: &Backend, a: &EncWord, b: &EncWord) -> Result<EncWord> {
    let format = same_format(a, b)?;
    if be.checks_overflow() {
        check_range(be, "enc_add", format, a.peek_raw() as i128 + b.peek_raw() as i128)?;
    }
    Ok(EncWord {
        bits: ripple_add(be, &a.bits, &b.bits, be.trivial(false))?,
        format,
    })
}

pub fn enc_sub(be: &Backend, a: &EncWord, b: &EncWord) -> Result<EncWord> {
    let format = same_format(a, b)?;
    if be.checks_overflow() {
        check_range(be, "enc_sub", format, a.peek_raw() as i128 - b.peek_raw() as i128)?;
    }
    Ok(EncWord {
        bits: ripple_sub(be, &a.bits, &b.bits)?,
        format,
    })
}

pub fn enc_neg(be: &Backend, a: &EncWord) -> Result<EncWord> {
    if be.checks_overflow() {
        check_range(be, "enc_neg", a.format, -(a.peek_raw() as i128))?;
    }
    Ok(EncWord {
        bits: ripple_neg(be, &a.bits)?,
        format: a.format,
    })
}

/// Signed comparison `a < b`, computed as the sign of the difference taken
/// one bit wider than the operands so no overflow can flip it.
pub fn enc_lt(be: &Backend, a: &EncWord, b: &EncWord) -> Result<EncBit> {
    same_format(a, b)?;
    let mut wa = a.bits.clone();
    wa.push(a.sign_bit());
    let mut wb = b.bits.clone();
    wb.push(b.sign_bit());
    let diff = ripple_sub(be, &wa, &wb)?;
    Ok(*diff.last().unwrap())
}

/// Bitwise multiplex of two words: `sel = 1` selects `a`.
pub fn enc_select(be: &Backend, sel: EncBit, a: &EncWord, b: &EncWord) -> Result<EncWord> {
    let format = same_format(a, b)?;
    let bits = a
        .bits
        .iter()
        .zip(&b.bits)
        .map(|(&x, &y)| be.mux(sel, x, y))
        .collect::<Result<Vec<_>>>()?;
    Ok(EncWord { bits, format })
}

/// Minimum of two words; equal inputs return that shared value.
pub fn enc_min(be: &Backend, a: &EncWord, b: &EncWord) -> Result<EncWord> {
    let lt = enc_lt(be, a, b)?;
    enc_select(be, lt, a, b)
}

/// Absolute value via conditional negation on the sign bit. The most
/// negative word has no positive counterpart and wraps onto itself; the
/// cleartext backend reports that when overflow checks are on.
pub fn enc_abs(be: &Backend, a: &EncWord) -> Result<EncWord> {
    if be.checks_overflow() && a.peek_raw() == a.format.min_raw() {
        return Err(Error::Overflow("enc_abs"));
    }
    let neg = enc_neg(be, a)?;
    enc_select(be, a.sign_bit(), &neg, a)
}

/// Multiplication by a plaintext constant.
///
/// Schoolbook shift-and-add over a double-width accumulator, followed by an
/// arithmetic right shift of `F` (floor on the raw scale) and truncation to
/// the word width. Each constant bit contributes one fixed-width add (a
/// zero bit adds a trivial zero word), so the gate count is a pure function
/// of `T`, independent of both operand values. The top constant bit is
/// subtracted, per two's complement.
pub fn enc_mul_plain(be: &Backend, a: &EncWord, c: PlainFixed) -> Result<EncWord> {
    if a.format != c.format {
        return Err(Error::FormatMismatch(
            a.format.total_bits,
            a.format.frac_bits,
            c.format.total_bits,
            c.format.frac_bits,
        ));
    }
    let format = a.format;
    let t = format.total_bits as usize;
    let f = format.frac_bits as usize;
    if be.checks_overflow() {
        check_range(
            be,
            "enc_mul_plain",
            format,
            (a.peek_raw() as i128 * c.raw as i128) >> format.frac_bits,
        )?;
    }

    // Operand sign-extended one bit; the per-step adds run one bit wider
    // than the word, which the partial-sum bounds make exactly sufficient.
    let mut a_ext = a.bits.clone();
    a_ext.push(a.sign_bit());
    let zeros = vec![be.trivial(false); t + 1];

    let mut acc = vec![be.trivial(false); 2 * t];
    for j in 0..t {
        let term: &[EncBit] = if (c.raw >> j) & 1 == 1 { &a_ext } else { &zeros };
        let window = &acc[j..j + t + 1];
        let replaced = if j + 1 < t {
            ripple_add(be, window, term, be.trivial(false))?
        } else {
            // Top constant bit carries weight -2^(T-1).
            ripple_sub(be, window, term)?
        };
        acc[j..j + t + 1].copy_from_slice(&replaced);
        // Bits above the window are sign extension of the partial sum.
        let sign = acc[j + t];
        for k in j + t + 1..2 * t {
            acc[k] = sign;
        }
    }

    Ok(EncWord {
        bits: acc[f..f + t].to_vec(),
        format,
    })
}

/// Left-fold sum of a non-empty word list.
pub fn enc_sum(be: &Backend, words: &[EncWord]) -> Result<EncWord> {
    let (first, rest) = words.split_first().ok_or(Error::EmptyInput("sum of zero words"))?;
    rest.iter().try_fold(first.clone(), |acc, w| enc_add(be, &acc, w))
}
