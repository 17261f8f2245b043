//! Bit-exact range coder over 16-bit-total frequency tables.
//!
//! State widths and renormalization discipline are fixed by the bitstream
//! contract: 32-bit range initialized to 0xFFFF_FFFF, 64-bit low whose bit
//! 32 carries addition overflow, byte emission while range < 2^24, and a
//! 5-byte flush.  Output must be byte-identical to the reference Python
//! coder for every input; the differential fuzz suite enforces this.

pub const PMF_TOTAL: u32 = 1 << 16;
const TOP: u32 = 1 << 24;
const NUM_FLUSH_BYTES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoderError {
    /// Frequencies empty, zero-valued, or not summing to 65536.
    InvalidPmf,
    /// A symbol index is outside the table.
    SymbolOutOfRange,
    /// Payload ended before all symbols were decoded.
    Truncated,
}

impl std::fmt::Display for CoderError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CoderError::InvalidPmf => write!(f, "invalid pmf (must be >= 2 entries, each >= 1, summing to 65536)"),
            CoderError::SymbolOutOfRange => write!(f, "symbol index out of range"),
            CoderError::Truncated => write!(f, "range-coded payload truncated"),
        }
    }
}

impl std::error::Error for CoderError {}

/// Cumulative table: cum[s] .. cum[s+1] bounds symbol s; checks invariants.
pub fn cumulative(freqs: &[u16]) -> Result<Vec<u32>, CoderError> {
    if freqs.len() < 2 || freqs.len() > 0xFFFF {
        return Err(CoderError::InvalidPmf);
    }
    let mut cum = Vec::with_capacity(freqs.len() + 1);
    let mut acc: u32 = 0;
    cum.push(0);
    for &f in freqs {
        if f == 0 {
            return Err(CoderError::InvalidPmf);
        }
        acc += u32::from(f);
        cum.push(acc);
    }
    if acc != PMF_TOTAL {
        return Err(CoderError::InvalidPmf);
    }
    Ok(cum)
}

struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    out: Vec<u8>,
}

impl RangeEncoder {
    fn new(size_hint: usize) -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 1,
            out: Vec::with_capacity(size_hint / 4 + 16),
        }
    }

    #[inline]
    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            self.out.push(self.cache.wrapping_add(carry));
            let filler = 0xFFu8.wrapping_add(carry);
            for _ in 1..self.pending {
                self.out.push(filler);
            }
            self.cache = (self.low >> 24) as u8;
            self.pending = 0;
        }
        self.pending += 1;
        self.low = (self.low << 8) & 0xFFFF_FFFF;
    }

    #[inline]
    fn encode(&mut self, cum_lo: u32, freq: u32) {
        let r = self.range >> 16;
        self.low += u64::from(cum_lo) * u64::from(r);
        self.range = r * freq;
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        for _ in 0..NUM_FLUSH_BYTES {
            self.shift_low();
        }
        self.out
    }
}

/// Range-code `symbols` under the frequency table; mirrors the reference.
pub fn encode(symbols: &[u16], freqs: &[u16]) -> Result<Vec<u8>, CoderError> {
    let cum = cumulative(freqs)?;
    let mut enc = RangeEncoder::new(symbols.len());
    for &s in symbols {
        let s = usize::from(s);
        if s >= freqs.len() {
            return Err(CoderError::SymbolOutOfRange);
        }
        enc.encode(cum[s], cum[s + 1] - cum[s]);
    }
    Ok(enc.finish())
}

struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    fn new(data: &'a [u8]) -> Result<Self, CoderError> {
        let mut dec = RangeDecoder { data, pos: 0, range: u32::MAX, code: 0 };
        for _ in 0..NUM_FLUSH_BYTES {
            dec.code = (dec.code << 8) | u32::from(dec.next_byte()?);
        }
        Ok(dec)
    }

    #[inline]
    fn next_byte(&mut self) -> Result<u8, CoderError> {
        let b = *self.data.get(self.pos).ok_or(CoderError::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    #[inline]
    fn decode(&mut self, cum: &[u32]) -> Result<u16, CoderError> {
        let r = self.range >> 16;
        let v = (self.code / r).min(PMF_TOTAL - 1);
        // partition_point gives the first entry > v; its predecessor bounds v.
        let sym = cum.partition_point(|&c| c <= v) - 1;
        self.code = self.code.wrapping_sub(cum[sym] * r);
        self.range = r * (cum[sym + 1] - cum[sym]);
        while self.range < TOP {
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
            self.range <<= 8;
        }
        Ok(sym as u16)
    }
}

/// Decode exactly `n` symbols; the payload must cover every renorm read.
pub fn decode(payload: &[u8], n: usize, freqs: &[u16]) -> Result<Vec<u16>, CoderError> {
    let cum = cumulative(freqs)?;
    let mut dec = RangeDecoder::new(payload)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(dec.decode(&cum)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// C-compatible boundary.

/// # Safety
/// `freqs` must point to `k` u16 values, `symbols` to `n` u16 values, and
/// `out` to at least `out_cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fc_encode(
    freqs: *const u16,
    k: usize,
    symbols: *const u16,
    n: usize,
    out: *mut u8,
    out_cap: usize,
) -> i64 {
    if freqs.is_null() || out.is_null() || (symbols.is_null() && n > 0) {
        return -4;
    }
    let freqs = std::slice::from_raw_parts(freqs, k);
    let symbols = if n == 0 { &[][..] } else { std::slice::from_raw_parts(symbols, n) };
    match encode(symbols, freqs) {
        Ok(payload) => {
            if payload.len() > out_cap {
                return -3;
            }
            std::ptr::copy_nonoverlapping(payload.as_ptr(), out, payload.len());
            payload.len() as i64
        }
        Err(CoderError::InvalidPmf) => -1,
        Err(CoderError::SymbolOutOfRange) => -2,
        Err(CoderError::Truncated) => -5,
    }
}

/// # Safety
/// `freqs` must point to `k` u16 values, `payload` to `len` bytes, and
/// `out_symbols` to at least `n` writable u16 values.
#[no_mangle]
pub unsafe extern "C" fn fc_decode(
    freqs: *const u16,
    k: usize,
    payload: *const u8,
    len: usize,
    n: usize,
    out_symbols: *mut u16,
) -> i64 {
    if freqs.is_null() || (payload.is_null() && len > 0)
        || (out_symbols.is_null() && n > 0)
    {
        return -4;
    }
    let freqs = std::slice::from_raw_parts(freqs, k);
    let payload = if len == 0 { &[][..] } else { std::slice::from_raw_parts(payload, len) };
    match decode(payload, n, freqs) {
        Ok(symbols) => {
            std::ptr::copy_nonoverlapping(symbols.as_ptr(), out_symbols, symbols.len());
            symbols.len() as i64
        }
        Err(CoderError::InvalidPmf) => -1,
        Err(CoderError::SymbolOutOfRange) => -2,
        Err(CoderError::Truncated) => -5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Golden vectors frozen from the reference implementation.
    static UNIFORM4_FREQS: &[u16] = &[16384, 16384, 16384, 16384];
    static UNIFORM4_SYMS: &[u16] = &[0, 1, 2, 3, 3, 2, 1, 0];
    static UNIFORM4_PAYLOAD: &[u8] = &[0, 27, 226, 71, 0, 0, 0];
    static SKEWED_FREQS: &[u16] = &[65487, 2, 2, 45];
    static SKEWED_PAYLOAD: &[u8] = &[0, 246, 130, 239, 5, 235, 29, 55, 0, 0];

    fn skewed_syms() -> Vec<u16> {
        let mut v = vec![0u16; 50];
        v.extend_from_slice(&[3, 0, 1, 0, 2]);
        v.extend(std::iter::repeat(0u16).take(20));
        v
    }

    #[test]
    fn empty_stream_is_five_zero_bytes() {
        let freqs = [16384u16; 4];
        let payload = encode(&[], &freqs).unwrap();
        assert_eq!(payload, vec![0u8; 5]);
        assert_eq!(decode(&payload, 0, &freqs).unwrap(), Vec::<u16>::new());
    }

    #[test]
    fn golden_uniform() {
        assert_eq!(encode(UNIFORM4_SYMS, UNIFORM4_FREQS).unwrap(), UNIFORM4_PAYLOAD);
        assert_eq!(decode(UNIFORM4_PAYLOAD, 8, UNIFORM4_FREQS).unwrap(), UNIFORM4_SYMS);
    }

    #[test]
    fn golden_skewed() {
        let syms = skewed_syms();
        assert_eq!(encode(&syms, SKEWED_FREQS).unwrap(), SKEWED_PAYLOAD);
        assert_eq!(decode(SKEWED_PAYLOAD, syms.len(), SKEWED_FREQS).unwrap(), syms);
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let syms: Vec<u16> = (0..4000).map(|i| (i % 4) as u16).collect();
        let freqs = [16384u16; 4];
        let payload = encode(&syms, &freqs).unwrap();
        let cut = &payload[..payload.len() / 2];
        assert_eq!(decode(cut, syms.len(), &freqs), Err(CoderError::Truncated));
    }

    #[test]
    fn pmf_validation() {
        assert_eq!(encode(&[0], &[65536u32 as u16]), Err(CoderError::InvalidPmf));
        assert_eq!(encode(&[0], &[65535, 0]), Err(CoderError::InvalidPmf));
        assert_eq!(encode(&[0], &[100, 100]), Err(CoderError::InvalidPmf));
        assert_eq!(encode(&[5], &[32768, 32768]), Err(CoderError::SymbolOutOfRange));
    }
}
