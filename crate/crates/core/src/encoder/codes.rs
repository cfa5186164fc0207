use super::EncoderError;

/// Real-valued hash feature with every coordinate strictly inside `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HashFeature(Vec<f64>);

impl HashFeature {
    pub fn new(values: Vec<f64>) -> Result<Self, EncoderError> {
        if values.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
            return Err(EncoderError::FeatureRange);
        }
        Ok(HashFeature(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A `D`-bit code; bit `i` corresponds to feature coordinate `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryCode(Vec<bool>);

impl BinaryCode {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        BinaryCode(bits)
    }

    pub fn zeros(len: usize) -> Self {
        BinaryCode(vec![false; len])
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bit(&self, i: usize) -> bool {
        self.0[i]
    }

    /// Bits as `0.0` / `1.0`.
    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| f64::from(u8::from(b))).collect()
    }

    /// Hexadecimal form of the integer `sum(bit_i * 2^i)`, most significant
    /// digit first, padded to `ceil(D / 4)` digits.
    pub fn to_hex(&self) -> String {
        let digits = self.0.len().div_ceil(4);
        (0..digits)
            .rev()
            .map(|d| {
                let nibble = (0..4)
                    .filter(|k| self.0.get(4 * d + k).copied().unwrap_or(false))
                    .fold(0u32, |acc, k| acc | (1 << k));
                char::from_digit(nibble, 16).expect("nibble")
            })
            .collect()
    }

    pub fn from_hex(hex: &str, len: usize) -> Result<Self, EncoderError> {
        let hex = hex.trim().trim_start_matches("0x");
        if hex.len() != len.div_ceil(4) {
            return Err(EncoderError::Code(format!(
                "{} hex digits for a {len}-bit code",
                hex.len()
            )));
        }
        let mut bits = vec![false; len];
        for (d, ch) in hex.chars().rev().enumerate() {
            let nibble = ch
                .to_digit(16)
                .ok_or_else(|| EncoderError::Code(format!("invalid hex digit `{ch}`")))?;
            for k in 0..4 {
                let i = 4 * d + k;
                let set = nibble & (1 << k) != 0;
                if i < len {
                    bits[i] = set;
                } else if set {
                    return Err(EncoderError::Code("bits set beyond code length".into()));
                }
            }
        }
        Ok(BinaryCode(bits))
    }
}

/// `bit_i = 1` iff `f_i >= 0.5`; the tie at exactly 0.5 maps to 1.
pub fn quantize(f: &[f64]) -> BinaryCode {
    BinaryCode(f.iter().map(|&v| v >= 0.5).collect())
}
