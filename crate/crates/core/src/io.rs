//! Binary weight and mask files, flat `key=value` run configs, model files
//! and atomic output writes.
//!
//! # Weight file (`NNWV`)
//!
//! | offset | size      | content                         |
//! |--------|-----------|---------------------------------|
//! | 0      | 4         | ASCII `NNWV`                    |
//! | 4      | 4         | version, u32 LE (= 1)           |
//! | 8      | 8         | count, u64 LE                   |
//! | 16     | 8 * count | values, IEEE-754 binary64 LE    |
//!
//! # Mask file (`NNMK`)
//!
//! Same header with magic `NNMK`; the payload is `count` bytes, each 0
//! (noisy) or 1 (noise-free).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mlp::{MlpModel, MlpSpec};
use crate::stats::WeightVector;

pub const WEIGHT_MAGIC: [u8; 4] = *b"NNWV";
pub const MASK_MAGIC: [u8; 4] = *b"NNMK";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

fn encode_header(magic: [u8; 4], count: usize, payload_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload_len);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(count as u64).to_le_bytes());
    out
}

/// Validates the header and returns the payload slice of `count * width`
/// bytes.
fn decode_header<'a>(bytes: &'a [u8], magic: [u8; 4], width: usize, what: &'static str) -> Result<(usize, &'a [u8])> {
    let need = |offset: usize, len: usize| {
        if bytes.len() < offset + len {
            Err(Error::Truncated {
                what,
                offset: bytes.len(),
                needed: offset + len - bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(0, 4)?;
    let found: [u8; 4] = bytes[0..4].try_into().unwrap();
    if found != magic {
        return Err(Error::BadMagic { what, found });
    }
    need(4, 4)?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { what, version });
    }
    need(8, 8)?;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let payload_len = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(width))
        .ok_or_else(|| Error::invalid("count", format!("{what}: element count {count} is too large")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < payload_len {
        return Err(Error::Truncated {
            what,
            offset: bytes.len(),
            needed: payload_len - payload.len(),
        });
    }
    if payload.len() > payload_len {
        return Err(Error::TrailingBytes {
            what,
            extra: payload.len() - payload_len,
        });
    }
    Ok((count as usize, payload))
}

pub fn encode_weights(values: &[f64]) -> Vec<u8> {
    let mut out = encode_header(WEIGHT_MAGIC, values.len(), 8 * values.len());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a weight file; the mask, if any, must be attached separately.
pub fn decode_weights(bytes: &[u8]) -> Result<WeightVector> {
    let (_, payload) = decode_header(bytes, WEIGHT_MAGIC, 8, "weight file")?;
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    WeightVector::new(values)
}

pub fn encode_mask(mask: &[bool]) -> Vec<u8> {
    let mut out = encode_header(MASK_MAGIC, mask.len(), mask.len());
    out.extend(mask.iter().map(|&m| m as u8));
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<Vec<bool>> {
    let (_, payload) = decode_header(bytes, MASK_MAGIC, 1, "mask file")?;
    payload
        .iter()
        .enumerate()
        .map(|(index, &value)| match value {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::InvalidMaskByte { index, value }),
        })
        .collect()
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to a temporary file in the target directory and renames
/// it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_weight_file(path: &Path, values: &[f64]) -> Result<()> {
    write_atomic(path, &encode_weights(values))
}

pub fn read_weight_file(path: &Path) -> Result<WeightVector> {
    decode_weights(&read_bytes(path)?)
}

pub fn write_mask_file(path: &Path, mask: &[bool]) -> Result<()> {
    write_atomic(path, &encode_mask(mask))
}

pub fn read_mask_file(path: &Path) -> Result<Vec<bool>> {
    decode_mask(&read_bytes(path)?)
}

/// Reads weights and, when given, attaches the mask (lengths must agree).
pub fn read_weights_with_mask(weights: &Path, mask: Option<&Path>) -> Result<WeightVector> {
    let w = read_weight_file(weights)?;
    match mask {
        None => Ok(w),
        Some(m) => WeightVector::with_mask(w.into_values(), read_mask_file(m)?),
    }
}

/// Companion metadata path: `<path>.meta`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes `key=value` lines in the given order.
pub fn write_meta(path: &Path, fields: &[(&str, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in fields {
        text.push_str(&format!("{k}={v}\n"));
    }
    write_atomic(path, text.as_bytes())
}

/// Saves the parameters to `path`, the layer sizes to `<path>.meta`
/// (`layers=2-16-4`) and, when the model is masked, the mask to
/// `<path>.mask`.
pub fn save_model(path: &Path, model: &MlpModel) -> Result<()> {
    write_weight_file(path, model.params())?;
    let mut fields = vec![("layers", model.spec().to_header())];
    if let Some(mask) = model.mask() {
        let mask_path = mask_path(path);
        write_mask_file(&mask_path, mask)?;
        fields.push(("mask", mask_path.file_name().unwrap().to_string_lossy().into_owned()));
    }
    write_meta(&meta_path(path), &fields)
}

fn mask_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".mask");
    PathBuf::from(s)
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let meta_file = meta_path(path);
    let text = std::fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let mut meta = RunConfig::parse(&text)?;
    let spec = MlpSpec::from_header(&meta.require::<String>("layers")?)?;
    let mask: Option<String> = meta.get("mask")?;
    meta.finish()?;
    let model = MlpModel::from_params(spec, read_weight_file(path)?.into_values())?;
    match mask {
        None => Ok(model),
        Some(name) => {
            let mask_file = path.parent().unwrap_or(Path::new("")).join(name);
            model.with_mask(read_mask_file(&mask_file)?)
        }
    }
}

/// Flat `key=value` configuration.
///
/// Blank lines and lines starting with `#` are ignored; keys and values are
/// trimmed. Consumers read keys with [`RunConfig::get`] and then call
/// [`RunConfig::finish`], which rejects any key that was never read.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::ConfigSyntax {
                    line: i + 1,
                    reason: format!("expected key=value, got {line:?}"),
                });
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::ConfigSyntax {
                    line: i + 1,
                    reason: "empty key".into(),
                });
            }
            if entries.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::ConfigSyntax {
                    line: i + 1,
                    reason: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self {
            entries,
            used: BTreeSet::new(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets or replaces a value (used for command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Parses `key` if present and marks it as read.
    pub fn get<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(raw) = self.entries.get(key) else {
            return Ok(None);
        };
        self.used.insert(key.to_string());
        raw.parse::<T>().map(Some).map_err(|e| Error::ConfigValue {
            key: key.to_string(),
            reason: format!("cannot parse {raw:?}: {e}"),
        })
    }

    pub fn get_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T>(&mut self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| Error::ConfigValue {
            key: key.to_string(),
            reason: "missing required key".into(),
        })
    }

    /// Comma-separated list.
    pub fn get_list<T>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(raw) = self.get::<String>(key)? else {
            return Ok(None);
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>().map_err(|e| Error::ConfigValue {
                    key: key.to_string(),
                    reason: format!("cannot parse list item {s:?}: {e}"),
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Errors if any key was never read.
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<&str> = self
            .entries
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::UnknownKeys(unknown.join(", ")))
        }
    }
}

/// Formats a float with the shortest representation that round-trips.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_round_trip_is_bitwise() {
        let v = vec![0.0, -0.0, 1.5, f64::MIN_POSITIVE, -1e300, 0.1 + 0.2];
        let bytes = encode_weights(&v);
        assert_eq!(bytes.len(), 16 + 8 * v.len());
        let back = decode_weights(&bytes).unwrap();
        for (a, b) in v.iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_weights(&[1.0]);
        assert_eq!(&bytes[0..4], b"NNWV");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[16..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn truncation_and_magic_errors_are_distinct() {
        let bytes = encode_weights(&[1.0, 2.0, 3.0]);
        match decode_weights(&bytes[..30]) {
            Err(Error::Truncated { offset, needed, .. }) => {
                assert_eq!(offset, 30);
                assert_eq!(needed, 10);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_weights(&bytes[..10]), Err(Error::Truncated { offset: 10, .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_weights(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_mask(&bytes), Err(Error::BadMagic { .. })));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode_weights(&v2), Err(Error::UnsupportedVersion { version: 2, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode_weights(&long), Err(Error::TrailingBytes { extra: 1, .. })));
    }

    #[test]
    fn empty_and_non_finite_payloads_rejected() {
        assert!(decode_weights(&encode_weights(&[])).is_err());
        assert!(matches!(decode_weights(&encode_weights(&[1.0, f64::NAN])), Err(Error::NonFinite { index: 1 })));
    }

    #[test]
    fn mask_round_trip() {
        let m = vec![true, false, false, true];
        assert_eq!(decode_mask(&encode_mask(&m)).unwrap(), m);
        let mut bytes = encode_mask(&m);
        bytes[17] = 2;
        assert!(matches!(decode_mask(&bytes), Err(Error::InvalidMaskByte { index: 1, value: 2 })));
    }

    #[test]
    fn files_and_masks() {
        let dir = tempfile::tempdir().unwrap();
        let w = dir.path().join("w.bin");
        let m = dir.path().join("m.bin");
        write_weight_file(&w, &[1.0, 2.0]).unwrap();
        write_mask_file(&m, &[false, true]).unwrap();
        let r = read_weights_with_mask(&w, Some(&m)).unwrap();
        assert!(r.is_masked(1));
        write_mask_file(&m, &[true]).unwrap();
        assert!(matches!(read_weights_with_mask(&w, Some(&m)), Err(Error::LengthMismatch { .. })));
        assert!(matches!(read_weight_file(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn model_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let spec = MlpSpec::new(vec![2, 3, 2]).unwrap();
        let model = MlpModel::init(spec.clone(), crate::stats::SeedSpec::from_master(1));
        let p = dir.path().join("model.bin");
        save_model(&p, &model).unwrap();
        assert_eq!(std::fs::read_to_string(meta_path(&p)).unwrap(), "layers=2-3-2\n");
        assert_eq!(load_model(&p).unwrap(), model);
        let masked = model.with_mask(MlpModel::bias_mask(&spec)).unwrap();
        save_model(&p, &masked).unwrap();
        assert_eq!(load_model(&p).unwrap(), masked);
    }

    #[test]
    fn config_parsing() {
        let text = "# comment\nfeel.rounds = 3\n\ngrid.lambda_prime_step=0.02\nwnr_list=-10, -5,0\n";
        let mut c = RunConfig::parse(text).unwrap();
        assert_eq!(c.get::<usize>("feel.rounds").unwrap(), Some(3));
        assert_eq!(c.get_or("grid.lambda_prime_step", 0.01).unwrap(), 0.02);
        assert_eq!(c.get_or("missing", 7u32).unwrap(), 7);
        assert_eq!(c.get_list::<f64>("wnr_list").unwrap(), Some(vec![-10.0, -5.0, 0.0]));
        c.finish().unwrap();

        let mut typo = RunConfig::parse("feel.roundz=3\nfeel.rounds=1").unwrap();
        typo.get::<usize>("feel.rounds").unwrap();
        assert!(matches!(typo.finish(), Err(Error::UnknownKeys(k)) if k == "feel.roundz"));

        assert!(matches!(RunConfig::parse("a=1\nnovalue"), Err(Error::ConfigSyntax { line: 2, .. })));
        assert!(matches!(RunConfig::parse("a=1\na=2"), Err(Error::ConfigSyntax { line: 2, .. })));
        let mut bad = RunConfig::parse("x=abc").unwrap();
        assert!(matches!(bad.get::<f64>("x"), Err(Error::ConfigValue { .. })));
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut c = RunConfig::parse("seed=1").unwrap();
        c.set("seed", 9);
        assert_eq!(c.require::<u64>("seed").unwrap(), 9);
    }
}
