//! Adaptive multi-symbol range coder.
//!
//! A 32-bit range coder with carry propagation (the LZMA arrangement: a
//! 64-bit `low`, a one-byte cache and a run of pending `0xFF` bytes) driven by
//! adaptive frequency tables. Models start with every frequency at 1, add
//! [`INCREMENT`] per coded symbol and halve once the total exceeds
//! [`MAX_TOTAL`], never letting a frequency drop below 1.

use thiserror::Error;

/// Frequency added to a symbol each time it is coded.
pub const INCREMENT: u32 = 32;
/// Totals above this trigger halving.
pub const MAX_TOTAL: u32 = 1 << 16;

const TOP: u32 = 1 << 24;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EntropyError {
    #[error("symbol {symbol} outside alphabet of size {alphabet}")]
    SymbolOutOfRange { symbol: usize, alphabet: usize },
    #[error("arithmetic-coded segment truncated at byte {0}")]
    Truncated(usize),
}

/// Adaptive frequency table over `0..alphabet`.
///
/// Cumulative frequencies live in a Fenwick tree so that coding cost is
/// logarithmic in the alphabet size.
#[derive(Debug, Clone)]
pub struct AdaptiveModel {
    freq: Vec<u32>,
    tree: Vec<u32>,
    total: u32,
}

impl AdaptiveModel {
    pub fn new(alphabet: usize) -> Self {
        assert!(alphabet >= 2, "alphabet needs at least two symbols");
        assert!(
            (alphabet as u64) + u64::from(INCREMENT) <= u64::from(MAX_TOTAL),
            "alphabet too large for the frequency budget"
        );
        let mut m = Self {
            freq: vec![1; alphabet],
            tree: vec![0; alphabet + 1],
            total: 0,
        };
        m.rebuild();
        m
    }

    pub fn alphabet(&self) -> usize {
        self.freq.len()
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn frequency(&self, symbol: usize) -> u32 {
        self.freq[symbol]
    }

    fn rebuild(&mut self) {
        self.tree.iter_mut().for_each(|t| *t = 0);
        for i in 0..self.freq.len() {
            let mut j = i + 1;
            while j < self.tree.len() {
                self.tree[j] += self.freq[i];
                j += j & j.wrapping_neg();
            }
        }
        self.total = self.freq.iter().sum();
    }

    /// Sum of frequencies of symbols below `symbol`.
    pub fn cumulative(&self, symbol: usize) -> u32 {
        let mut sum = 0;
        let mut j = symbol;
        while j > 0 {
            sum += self.tree[j];
            j &= j - 1;
        }
        sum
    }

    /// Symbol whose interval contains `target < total`, with its cumulative low.
    fn find(&self, target: u32) -> (usize, u32) {
        let n = self.freq.len();
        let mut pos = 0usize;
        let mut rem = target;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= rem {
                pos = next;
                rem -= self.tree[next];
            }
            step >>= 1;
        }
        (pos, target - rem)
    }

    pub fn update(&mut self, symbol: usize) {
        self.freq[symbol] += INCREMENT;
        self.total += INCREMENT;
        if self.total > MAX_TOTAL {
            for f in self.freq.iter_mut() {
                *f = (*f).div_ceil(2);
            }
            self.rebuild();
        } else {
            let mut j = symbol + 1;
            while j < self.tree.len() {
                self.tree[j] += INCREMENT;
                j += j & j.wrapping_neg();
            }
        }
    }

    fn check(&self, symbol: usize) -> Result<(), EntropyError> {
        if symbol < self.freq.len() {
            Ok(())
        } else {
            Err(EntropyError::SymbolOutOfRange {
                symbol,
                alphabet: self.freq.len(),
            })
        }
    }
}

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn encode_interval(&mut self, cum: u32, freq: u32, total: u32) {
        let r = self.range / total;
        self.low += u64::from(r) * u64::from(cum);
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Codes `symbol` under `model`, then adapts the model.
    pub fn encode(&mut self, model: &mut AdaptiveModel, symbol: usize) -> Result<(), EntropyError> {
        model.check(symbol)?;
        self.encode_interval(model.cumulative(symbol), model.freq[symbol], model.total);
        model.update(symbol);
        Ok(())
    }

    /// Flushes the coder state and returns the coded bytes.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    input: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self, EntropyError> {
        let mut d = Self {
            input,
            pos: 0,
            range: u32::MAX,
            code: 0,
        };
        for _ in 0..5 {
            d.code = (d.code << 8) | u32::from(d.next_byte()?);
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8, EntropyError> {
        let b = *self
            .input
            .get(self.pos)
            .ok_or(EntropyError::Truncated(self.pos))?;
        self.pos += 1;
        Ok(b)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn decode(&mut self, model: &mut AdaptiveModel) -> Result<usize, EntropyError> {
        let r = self.range / model.total;
        let target = (self.code / r).min(model.total - 1);
        let (symbol, cum) = model.find(target);
        self.code -= r * cum;
        self.range = r * model.freq[symbol];
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
        }
        model.update(symbol);
        Ok(symbol)
    }
}

/// Adaptive binary contexts for Elias-gamma coded positive integers: one
/// model per unary prefix position (capped) and one per suffix bit position.
#[derive(Debug, Clone)]
pub struct GammaModel {
    prefix: Vec<AdaptiveModel>,
    suffix: Vec<AdaptiveModel>,
}

const GAMMA_CONTEXTS: usize = 16;

impl Default for GammaModel {
    fn default() -> Self {
        Self {
            prefix: (0..GAMMA_CONTEXTS).map(|_| AdaptiveModel::new(2)).collect(),
            suffix: (0..GAMMA_CONTEXTS).map(|_| AdaptiveModel::new(2)).collect(),
        }
    }
}

impl GammaModel {
    /// Codes `value >= 1` as `floor(log2 value)` zeros, a one, then the bits
    /// below the leading one, MSB first.
    pub fn encode(&mut self, enc: &mut RangeEncoder, value: u64) -> Result<(), EntropyError> {
        assert!(value >= 1, "Elias-gamma codes positive integers only");
        let nbits = 63 - value.leading_zeros() as usize;
        for i in 0..nbits {
            enc.encode(&mut self.prefix[i.min(GAMMA_CONTEXTS - 1)], 0)?;
        }
        enc.encode(&mut self.prefix[nbits.min(GAMMA_CONTEXTS - 1)], 1)?;
        for i in (0..nbits).rev() {
            let bit = ((value >> i) & 1) as usize;
            enc.encode(&mut self.suffix[i.min(GAMMA_CONTEXTS - 1)], bit)?;
        }
        Ok(())
    }

    pub fn decode(&mut self, dec: &mut RangeDecoder<'_>) -> Result<u64, EntropyError> {
        let mut nbits = 0usize;
        while dec.decode(&mut self.prefix[nbits.min(GAMMA_CONTEXTS - 1)])? == 0 {
            nbits += 1;
            if nbits > 63 {
                return Err(EntropyError::Truncated(dec.position()));
            }
        }
        let mut value = 1u64;
        for i in (0..nbits).rev() {
            let bit = dec.decode(&mut self.suffix[i.min(GAMMA_CONTEXTS - 1)])? as u64;
            value = (value << 1) | bit;
        }
        Ok(value)
    }
}

/// Codes a whole symbol sequence with a fresh model of the given alphabet.
pub fn ac_encode(symbols: &[usize], alphabet: usize) -> Result<Vec<u8>, EntropyError> {
    let mut model = AdaptiveModel::new(alphabet);
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        enc.encode(&mut model, s)?;
    }
    Ok(enc.finish())
}

/// Inverse of [`ac_encode`]; the symbol count travels out of band.
pub fn ac_decode(bytes: &[u8], alphabet: usize, count: usize) -> Result<Vec<usize>, EntropyError> {
    let mut model = AdaptiveModel::new(alphabet);
    let mut dec = RangeDecoder::new(bytes)?;
    (0..count).map(|_| dec.decode(&mut model)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fenwick_matches_prefix_sums() {
        let mut m = AdaptiveModel::new(13);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5000 {
            m.update(rng.gen_range(0..13));
            let mut acc = 0;
            for s in 0..13 {
                assert_eq!(m.cumulative(s), acc);
                assert!(m.frequency(s) >= 1);
                acc += m.frequency(s);
            }
            assert_eq!(acc, m.total());
            assert!(m.total() <= MAX_TOTAL);
            let t = rng.gen_range(0..m.total());
            let (s, lo) = m.find(t);
            assert!(lo <= t && t < lo + m.frequency(s));
        }
    }

    #[test]
    fn round_trip_random_bytes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let syms: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..256)).collect();
        let bytes = ac_encode(&syms, 256).unwrap();
        assert_eq!(ac_decode(&bytes, 256, syms.len()).unwrap(), syms);
    }

    #[test]
    fn constant_source_compresses_hard() {
        let syms = vec![77usize; 10_000];
        let bytes = ac_encode(&syms, 256).unwrap();
        let bits_per_symbol = bytes.len() as f64 * 8.0 / syms.len() as f64;
        assert!(bits_per_symbol < 0.02 * 8.0, "{bits_per_symbol}");
        assert_eq!(ac_decode(&bytes, 256, syms.len()).unwrap(), syms);
    }

    #[test]
    fn empty_sequence_is_termination_only() {
        let bytes = ac_encode(&[], 256).unwrap();
        assert_eq!(bytes.len(), 5);
        assert!(ac_decode(&bytes, 256, 0).unwrap().is_empty());
    }

    #[test]
    fn out_of_alphabet_is_error() {
        assert_eq!(
            ac_encode(&[1, 256], 256).unwrap_err(),
            EntropyError::SymbolOutOfRange {
                symbol: 256,
                alphabet: 256
            }
        );
    }

    #[test]
    fn truncation_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let syms: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..256)).collect();
        let bytes = ac_encode(&syms, 256).unwrap();
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(
            ac_decode(cut, 256, syms.len()),
            Err(EntropyError::Truncated(_))
        ));
    }

    #[test]
    fn deterministic_output() {
        let syms: Vec<usize> = (0..4000).map(|i| (i * 31 + i / 7) % 200).collect();
        assert_eq!(ac_encode(&syms, 256).unwrap(), ac_encode(&syms, 256).unwrap());
    }

    #[test]
    fn gamma_round_trip() {
        let values: Vec<u64> = (1..300).chain([1 << 20, u64::MAX >> 1, u64::MAX]).collect();
        let mut model = GammaModel::default();
        let mut enc = RangeEncoder::new();
        for &v in &values {
            model.encode(&mut enc, v).unwrap();
        }
        let bytes = enc.finish();
        let mut model = GammaModel::default();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &v in &values {
            assert_eq!(model.decode(&mut dec).unwrap(), v);
        }
    }

    mod props {
        use super::{ac_decode, ac_encode, ChaCha8Rng, Rng, SeedableRng};
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip(alphabet in 2usize..600, raw in prop::collection::vec(any::<u32>(), 0..3000)) {
                let syms: Vec<usize> = raw.iter().map(|&r| r as usize % alphabet).collect();
                let bytes = ac_encode(&syms, alphabet).unwrap();
                prop_assert_eq!(ac_decode(&bytes, alphabet, syms.len()).unwrap(), syms);
            }

            #[test]
            fn skewed_sources_beat_uniform_cost(bias in 0.7f64..0.99, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let syms: Vec<usize> = (0..20_000)
                    .map(|_| if rng.gen_bool(bias) { 0 } else { rng.gen_range(0..64) })
                    .collect();
                let bytes = ac_encode(&syms, 64).unwrap();
                let bps = bytes.len() as f64 * 8.0 / syms.len() as f64;
                prop_assert!(bps < 6.0);
            }
        }
    }
}
