//! Per-pixel class maps produced by the segmenter (here: the renderer).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
#[serde(rename_all = "snake_case")]
pub enum SegClass {
    Unlabeled = 0,
    Road = 1,
    Object = 2,
    Person = 3,
    Sky = 4,
}

impl SegClass {
    pub const ALL: [SegClass; 5] = [
        SegClass::Unlabeled,
        SegClass::Road,
        SegClass::Object,
        SegClass::Person,
        SegClass::Sky,
    ];

    pub fn from_id(id: u8) -> Option<SegClass> {
        SegClass::ALL.get(id as usize).copied()
    }

    pub fn id(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("label buffer has {got} entries, expected {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("invalid class id {0}")]
    InvalidClass(u8),
    #[error("malformed P5 image: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    width: usize,
    height: usize,
    labels: Vec<SegClass>,
}

impl SegMask {
    pub fn filled(width: usize, height: usize, class: SegClass) -> Self {
        SegMask {
            width,
            height,
            labels: vec![class; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<SegClass>) -> Result<Self, MaskError> {
        if labels.len() != width * height {
            return Err(MaskError::SizeMismatch {
                expected: width * height,
                got: labels.len(),
            });
        }
        Ok(SegMask { width, height, labels })
    }

    pub fn from_ids(width: usize, height: usize, ids: &[u8]) -> Result<Self, MaskError> {
        let labels = ids
            .iter()
            .map(|&id| SegClass::from_id(id).ok_or(MaskError::InvalidClass(id)))
            .collect::<Result<Vec<_>, _>>()?;
        SegMask::from_labels(width, height, labels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[SegClass] {
        &self.labels
    }

    pub fn get(&self, col: usize, row: usize) -> SegClass {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, class: SegClass) {
        self.labels[row * self.width + col] = class;
    }

    pub fn count(&self, class: SegClass) -> usize {
        self.labels.iter().filter(|&&c| c == class).count()
    }

    /// Row-major `(class, run length)` pairs.
    pub fn runs(&self) -> Vec<(SegClass, u32)> {
        let mut runs: Vec<(SegClass, u32)> = Vec::new();
        for &c in &self.labels {
            match runs.last_mut() {
                Some((last, n)) if *last == c => *n += 1,
                _ => runs.push((c, 1)),
            }
        }
        runs
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.labels.iter().map(|c| c.id()));
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, MaskError> {
        let (w, h, maxval, offset) = parse_pgm_header(bytes)?;
        if maxval > 255 {
            return Err(MaskError::Format("16-bit graymaps are not supported".into()));
        }
        let data = &bytes[offset..];
        if data.len() < w * h {
            return Err(MaskError::Format(format!(
                "pixel data truncated: {} of {} bytes",
                data.len(),
                w * h
            )));
        }
        SegMask::from_ids(w, h, &data[..w * h])
    }

    pub fn save_pgm(&self, path: &Path) -> Result<(), MaskError> {
        let io = |source| MaskError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_pgm()).map_err(io)
    }

    pub fn load_pgm(path: &Path) -> Result<Self, MaskError> {
        let bytes = std::fs::read(path).map_err(|source| MaskError::Io {
            path: path.display().to_string(),
            source,
        })?;
        SegMask::from_pgm(&bytes)
    }
}

/// Parses a binary graymap header, returning `(width, height, maxval, data offset)`.
pub fn parse_pgm_header(bytes: &[u8]) -> Result<(usize, usize, usize, usize), MaskError> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(MaskError::Format("header ended early".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(MaskError::Format(format!("bad magic {:?}", fields[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| MaskError::Format(format!("bad header number {s:?}")))
    };
    // exactly one whitespace byte separates the header from the raster
    Ok((num(&fields[1])?, num(&fields[2])?, num(&fields[3])?, pos + 1))
}

#[derive(Serialize, Deserialize)]
struct MaskRepr {
    width: usize,
    height: usize,
    /// Flattened `[class, count, class, count, ...]`.
    runs: Vec<u32>,
}

impl Serialize for SegMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let runs = self
            .runs()
            .into_iter()
            .flat_map(|(c, n)| [c.id() as u32, n])
            .collect();
        MaskRepr {
            width: self.width,
            height: self.height,
            runs,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SegMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = MaskRepr::deserialize(deserializer)?;
        if repr.runs.len() % 2 != 0 {
            return Err(D::Error::custom("odd run list"));
        }
        let mut labels = Vec::with_capacity(repr.width * repr.height);
        for pair in repr.runs.chunks(2) {
            let class = u8::try_from(pair[0])
                .ok()
                .and_then(SegClass::from_id)
                .ok_or_else(|| D::Error::custom(format!("invalid class id {}", pair[0])))?;
            labels.extend(std::iter::repeat(class).take(pair[1] as usize));
        }
        SegMask::from_labels(repr.width, repr.height, labels).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pgm_round_trip() {
        let mut m = SegMask::filled(4, 3, SegClass::Road);
        m.set(1, 2, SegClass::Person);
        m.set(3, 0, SegClass::Sky);
        let bytes = m.to_pgm();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(SegMask::from_pgm(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_invalid_class_and_size() {
        assert!(matches!(SegMask::from_ids(2, 1, &[1, 9]), Err(MaskError::InvalidClass(9))));
        assert!(matches!(SegMask::from_ids(2, 2, &[1, 1]), Err(MaskError::SizeMismatch { .. })));
        assert!(SegMask::from_pgm(b"P6\n1 1\n255\n\x01").is_err());
        assert!(SegMask::from_pgm(b"P5\n2 2\n255\n\x01").is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip(ids in proptest::collection::vec(0u8..5, 24)) {
            let m = SegMask::from_ids(6, 4, &ids).unwrap();
            let s = serde_json::to_string(&m).unwrap();
            prop_assert_eq!(serde_json::from_str::<SegMask>(&s).unwrap(), m);
        }
    }
}
