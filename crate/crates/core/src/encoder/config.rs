use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::numeric::Padding;

use super::EncoderError;

/// Code lengths with published reference results.
pub const STANDARD_CODE_BITS: [usize; 4] = [16, 24, 32, 64];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
    /// `(window, stride)` of the max-pool after the ReLU, if any.
    pub pool: Option<(usize, usize)>,
}

impl ConvLayer {
    fn encode(&self) -> String {
        let pad = match self.padding {
            Padding::Valid => "valid",
            Padding::Same => "same",
        };
        let pool = match self.pool {
            Some((w, s)) => format!("{w}x{s}"),
            None => "none".into(),
        };
        format!("{}:{}:{}:{pad}:{pool}", self.channels, self.kernel, self.stride)
    }

    fn decode(s: &str) -> Option<Self> {
        let f: Vec<&str> = s.split(':').collect();
        if f.len() != 5 {
            return None;
        }
        let padding = match f[3] {
            "valid" => Padding::Valid,
            "same" => Padding::Same,
            _ => return None,
        };
        let pool = match f[4] {
            "none" => None,
            p => {
                let (w, s) = p.split_once('x')?;
                Some((w.parse().ok()?, s.parse().ok()?))
            }
        };
        Some(ConvLayer {
            channels: f[0].parse().ok()?,
            kernel: f[1].parse().ok()?,
            stride: f[2].parse().ok()?,
            padding,
            pool,
        })
    }
}

/// Architecture descriptor; stored inside every checkpoint so codes can be
/// reproduced from the checkpoint alone.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub profile: String,
    pub raster_side: usize,
    pub conv: Vec<ConvLayer>,
    pub dense_width: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub code_bits: usize,
    pub classes: usize,
    /// Divisor applied to stroke offsets before the recurrent branch.
    pub offset_scale: f64,
    /// Width of the optional extra recognition layer between fusion and the
    /// recognition classifier; 0 disables it.
    pub recognition_width: usize,
    pub init_seed: u64,
}

impl EncoderConfig {
    /// Desk-scale default: 64x64 rasters, three 3x3 conv layers (16/32/64)
    /// each followed by 2x2 max-pooling, a 128-wide dense layer, and a
    /// two-layer bidirectional GRU with 64 hidden units.
    pub fn toy(code_bits: usize, classes: usize) -> Self {
        let conv = [16, 32, 64]
            .into_iter()
            .map(|channels| ConvLayer {
                channels,
                kernel: 3,
                stride: 1,
                padding: Padding::Same,
                pool: Some((2, 2)),
            })
            .collect();
        EncoderConfig {
            profile: "toy".into(),
            raster_side: 64,
            conv,
            dense_width: 128,
            gru_hidden: 64,
            gru_layers: 2,
            code_bits,
            classes,
            offset_scale: 1.0,
            recognition_width: 0,
            init_seed: 0,
        }
    }

    /// Smaller variant of [`EncoderConfig::toy`] for single-core test runs:
    /// 32x32 rasters, conv widths 8/16/32, dense 64, GRU hidden 32.
    pub fn compact(code_bits: usize, classes: usize) -> Self {
        let mut c = Self::toy(code_bits, classes);
        c.profile = "compact".into();
        c.raster_side = 32;
        for (layer, ch) in c.conv.iter_mut().zip([8, 16, 32]) {
            layer.channels = ch;
        }
        c.dense_width = 64;
        c.gru_hidden = 32;
        c
    }

    /// AlexNet-style branch without local response normalization on 224x224
    /// rasters, and a two-layer bidirectional GRU with 512 hidden units.
    pub fn full(code_bits: usize, classes: usize) -> Self {
        let l = |channels, kernel, stride, padding, pool| ConvLayer {
            channels,
            kernel,
            stride,
            padding,
            pool,
        };
        EncoderConfig {
            profile: "full".into(),
            raster_side: 224,
            conv: vec![
                l(96, 11, 4, Padding::Valid, Some((3, 2))),
                l(256, 5, 1, Padding::Same, Some((3, 2))),
                l(384, 3, 1, Padding::Same, None),
                l(384, 3, 1, Padding::Same, None),
                l(256, 3, 1, Padding::Same, Some((3, 2))),
            ],
            dense_width: 4096,
            gru_hidden: 512,
            gru_layers: 2,
            code_bits,
            classes,
            offset_scale: 1.0,
            recognition_width: 0,
            init_seed: 0,
        }
    }

    pub fn by_profile(profile: &str, code_bits: usize, classes: usize) -> Result<Self, EncoderError> {
        match profile {
            "toy" => Ok(Self::toy(code_bits, classes)),
            "compact" => Ok(Self::compact(code_bits, classes)),
            "full" => Ok(Self::full(code_bits, classes)),
            other => Err(EncoderError::Config(format!("unknown profile `{other}`"))),
        }
    }

    pub fn is_standard_code_length(&self) -> bool {
        STANDARD_CODE_BITS.contains(&self.code_bits)
    }

    /// `(channels, height, width)` after every conv/pool stage.
    pub fn conv_output_shape(&self) -> Result<(usize, usize, usize), EncoderError> {
        let (mut c, mut h, mut w) = (1, self.raster_side, self.raster_side);
        for (i, l) in self.conv.iter().enumerate() {
            let pad = match l.padding {
                Padding::Valid => 0,
                Padding::Same => l.kernel / 2,
            };
            if h + 2 * pad < l.kernel || w + 2 * pad < l.kernel || l.stride == 0 {
                return Err(EncoderError::Config(format!("conv layer {i} does not fit the input")));
            }
            h = (h + 2 * pad - l.kernel) / l.stride + 1;
            w = (w + 2 * pad - l.kernel) / l.stride + 1;
            c = l.channels;
            if let Some((pw, ps)) = l.pool {
                if h < pw || w < pw || ps == 0 {
                    return Err(EncoderError::Config(format!("pool after layer {i} does not fit")));
                }
                h = (h - pw) / ps + 1;
                w = (w - pw) / ps + 1;
            }
        }
        Ok((c, h, w))
    }

    pub fn fusion_width(&self) -> usize {
        self.dense_width + 2 * self.gru_hidden
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.code_bits == 0 || self.classes == 0 || self.gru_layers == 0 || self.gru_hidden == 0 {
            return Err(EncoderError::Config("zero-sized dimension".into()));
        }
        if self.raster_side < 16 {
            return Err(EncoderError::Config("raster side below 16".into()));
        }
        if !(self.offset_scale.is_finite() && self.offset_scale > 0.0) {
            return Err(EncoderError::Config("offset scale must be positive".into()));
        }
        self.conv_output_shape().map(|_| ())
    }

    pub fn to_descriptor(&self) -> String {
        let mut s = String::new();
        let conv: Vec<String> = self.conv.iter().map(ConvLayer::encode).collect();
        let _ = writeln!(s, "profile={}", self.profile);
        let _ = writeln!(s, "raster_side={}", self.raster_side);
        let _ = writeln!(s, "conv={}", conv.join(","));
        let _ = writeln!(s, "dense_width={}", self.dense_width);
        let _ = writeln!(s, "gru_hidden={}", self.gru_hidden);
        let _ = writeln!(s, "gru_layers={}", self.gru_layers);
        let _ = writeln!(s, "code_bits={}", self.code_bits);
        let _ = writeln!(s, "classes={}", self.classes);
        // round-trip exact
        let _ = writeln!(s, "offset_scale={:?}", self.offset_scale);
        let _ = writeln!(s, "recognition_width={}", self.recognition_width);
        let _ = writeln!(s, "init_seed={}", self.init_seed);
        s
    }

    pub fn from_descriptor(text: &str) -> Result<Self, EncoderError> {
        let map = parse_key_values(text);
        let get = |k: &str| -> Result<&str, EncoderError> {
            map.get(k)
                .map(String::as_str)
                .ok_or_else(|| EncoderError::Config(format!("descriptor lacks `{k}`")))
        };
        let num = |k: &str| -> Result<usize, EncoderError> {
            get(k)?
                .parse()
                .map_err(|_| EncoderError::Config(format!("descriptor `{k}` is not an integer")))
        };
        let conv_text = get("conv")?;
        let conv = if conv_text.is_empty() {
            Vec::new()
        } else {
            conv_text
                .split(',')
                .map(|l| {
                    ConvLayer::decode(l)
                        .ok_or_else(|| EncoderError::Config(format!("bad conv layer `{l}`")))
                })
                .collect::<Result<_, _>>()?
        };
        let cfg = EncoderConfig {
            profile: get("profile")?.to_string(),
            raster_side: num("raster_side")?,
            conv,
            dense_width: num("dense_width")?,
            gru_hidden: num("gru_hidden")?,
            gru_layers: num("gru_layers")?,
            code_bits: num("code_bits")?,
            classes: num("classes")?,
            offset_scale: get("offset_scale")?
                .parse()
                .map_err(|_| EncoderError::Config("bad offset_scale".into()))?,
            recognition_width: num("recognition_width")?,
            init_seed: get("init_seed")?
                .parse()
                .map_err(|_| EncoderError::Config("bad init_seed".into()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `key=value` lines; `#` starts a comment line; later keys win.
pub fn parse_key_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_shapes() {
        let c = EncoderConfig::toy(16, 10);
        assert_eq!(c.conv_output_shape().unwrap(), (64, 8, 8));
        assert_eq!(c.fusion_width(), 128 + 128);
        assert!(c.is_standard_code_length());
        assert!(!EncoderConfig::toy(12, 10).is_standard_code_length());
    }

    #[test]
    fn full_profile_shapes() {
        let c = EncoderConfig::full(64, 345);
        // 224 -> conv11/4 -> 54 -> pool -> 26 -> pool -> 12 -> pool -> 5
        assert_eq!(c.conv_output_shape().unwrap(), (256, 5, 5));
        assert_eq!(c.gru_hidden, 512);
    }

    #[test]
    fn descriptor_round_trip() {
        let mut c = EncoderConfig::compact(24, 7);
        c.offset_scale = 13.123456789012345;
        c.recognition_width = 2048;
        c.init_seed = 99;
        let back = EncoderConfig::from_descriptor(&c.to_descriptor()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn descriptor_missing_key() {
        assert!(EncoderConfig::from_descriptor("profile=toy\n").is_err());
    }
}
