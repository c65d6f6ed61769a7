use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayView2;

use crate::{Error, Result};

pub const CODE_FILE_MAGIC: &[u8; 4] = b"CUKD";
pub const CODE_FILE_VERSION: u16 = 1;
const HEADER_LEN: u64 = 4 + 2 + 2 + 8;

pub fn words_for(k_bits: usize) -> usize {
    k_bits.div_ceil(64)
}

/// Packs one real-valued row: bit `j` is set iff `values[j] >= 0`, stored in
/// word `j / 64` at position `j % 64`.
pub fn binarize_row(values: &[f32]) -> Vec<u64> {
    let mut words = vec![0u64; words_for(values.len())];
    for (j, &v) in values.iter().enumerate() {
        if v >= 0.0 {
            words[j / 64] |= 1 << (j % 64);
        }
    }
    words
}

/// Borrowed view of one packed code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodeRef<'a> {
    pub k_bits: usize,
    pub words: &'a [u64],
}

impl CodeRef<'_> {
    pub fn bit(&self, j: usize) -> bool {
        self.words[j / 64] >> (j % 64) & 1 == 1
    }
}

/// Packed binary codes with per-item ids and label sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeMatrix {
    k_bits: usize,
    words: Vec<u64>,
    ids: Vec<u64>,
    labels: Vec<Vec<u32>>,
}

impl CodeMatrix {
    pub fn new(k_bits: usize, words: Vec<u64>, ids: Vec<u64>, labels: Vec<Vec<u32>>) -> Result<Self> {
        if k_bits == 0 || k_bits > u16::MAX as usize {
            return Err(Error::Config(format!("K_bits must be in 1..=65535, got {k_bits}")));
        }
        let wpc = words_for(k_bits);
        if words.len() != ids.len() * wpc || labels.len() != ids.len() {
            return Err(Error::Shape(format!(
                "{} ids, {} labels and {} words do not describe {k_bits}-bit codes",
                ids.len(),
                labels.len(),
                words.len()
            )));
        }
        let spare = wpc * 64 - k_bits;
        if spare > 0 {
            let mask = !0u64 << (64 - spare);
            if words.chunks(wpc).any(|c| c[wpc - 1] & mask != 0) {
                return Err(Error::Format {
                    what: "code matrix",
                    detail: format!("bits beyond K_bits={k_bits} are set"),
                });
            }
        }
        Ok(CodeMatrix { k_bits, words, ids, labels })
    }

    /// Sign-binarizes head outputs (rows are items).
    pub fn from_features(features: ArrayView2<f32>, ids: Vec<u64>, labels: Vec<Vec<u32>>) -> Result<Self> {
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("features row {}", pos / features.ncols().max(1))));
        }
        let mut words = Vec::with_capacity(features.nrows() * words_for(features.ncols()));
        for row in features.rows() {
            words.extend(binarize_row(&row.to_vec()));
        }
        Self::new(features.ncols(), words, ids, labels)
    }

    pub fn k_bits(&self) -> usize {
        self.k_bits
    }

    pub fn words_per_code(&self) -> usize {
        words_for(self.k_bits)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> &[Vec<u32>] {
        &self.labels
    }

    pub fn code(&self, i: usize) -> CodeRef<'_> {
        let w = self.words_per_code();
        CodeRef {
            k_bits: self.k_bits,
            words: &self.words[i * w..(i + 1) * w],
        }
    }

    /// Items in the order given by `order` (indices into this matrix).
    pub fn select(&self, order: &[usize]) -> Self {
        let mut words = Vec::with_capacity(order.len() * self.words_per_code());
        for &i in order {
            words.extend_from_slice(self.code(i).words);
        }
        CodeMatrix {
            k_bits: self.k_bits,
            words,
            ids: order.iter().map(|&i| self.ids[i]).collect(),
            labels: order.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CODE_FILE_MAGIC)?;
        w.write_all(&CODE_FILE_VERSION.to_le_bytes())?;
        w.write_all(&(self.k_bits as u16).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for i in 0..self.len() {
            w.write_all(&self.ids[i].to_le_bytes())?;
            for word in self.code(i).words {
                w.write_all(&word.to_le_bytes())?;
            }
        }
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for labels in &self.labels {
            w.write_all(&(labels.len() as u32).to_le_bytes())?;
            for l in labels {
                w.write_all(&l.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Parses a code file. A file that ends right after the items has no
    /// label block; its items get empty label sets.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, HEADER_LEN)?;
        if magic != CODE_FILE_MAGIC {
            return Err(Error::Format {
                what: "code file",
                detail: format!("bad magic {magic:?}"),
            });
        }
        let version = cur.u16(HEADER_LEN)?;
        if version != CODE_FILE_VERSION {
            return Err(Error::Format {
                what: "code file",
                detail: format!("unsupported version {version}"),
            });
        }
        let k_bits = cur.u16(HEADER_LEN)? as usize;
        let count = cur.u64(HEADER_LEN)?;
        if k_bits == 0 {
            return Err(Error::Format {
                what: "code file",
                detail: "K_bits is 0".into(),
            });
        }
        let wpc = words_for(k_bits) as u64;
        let body = HEADER_LEN + count.saturating_mul(8 * (1 + wpc));
        if (bytes.len() as u64) < body {
            return Err(Error::Truncated {
                what: "code file",
                expected: body,
                actual: bytes.len() as u64,
            });
        }
        let count = count as usize;
        let mut ids = Vec::with_capacity(count);
        let mut words = Vec::with_capacity(count * wpc as usize);
        for _ in 0..count {
            ids.push(cur.u64(body)?);
            for _ in 0..wpc {
                words.push(cur.u64(body)?);
            }
        }
        let labels = if cur.pos == bytes.len() {
            vec![Vec::new(); count]
        } else {
            let n = cur.u64(body + 8)?;
            if n != count as u64 {
                return Err(Error::Format {
                    what: "code file",
                    detail: format!("label block lists {n} items, header says {count}"),
                });
            }
            let mut labels = Vec::with_capacity(count);
            for _ in 0..count {
                let pos = cur.pos as u64;
                let len = cur.u32(pos + 4)? as u64;
                let mut set = Vec::with_capacity(len as usize);
                let end = pos + 4 + 4 * len;
                for _ in 0..len {
                    set.push(cur.u32(end)?);
                }
                labels.push(set);
            }
            if cur.pos != bytes.len() {
                return Err(Error::Format {
                    what: "code file",
                    detail: format!("{} trailing bytes", bytes.len() - cur.pos),
                });
            }
            labels
        };
        Self::new(k_bits, words, ids, labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    /// `expected` is the file length the caller needs, for error reports.
    fn take(&mut self, n: usize, expected: u64) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                what: "code file",
                expected: expected.max((self.pos + n) as u64),
                actual: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, expected: u64) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, expected)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, expected: u64) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, expected)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, expected: u64) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, expected)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sign_convention() {
        assert_eq!(binarize_row(&[0.3, -0.2]), vec![0b01]);
        assert_eq!(binarize_row(&[0.0; 4]), vec![0b1111]);
        let wide: Vec<f32> = (0..70).map(|j| if j == 65 { 1.0 } else { -1.0 }).collect();
        assert_eq!(binarize_row(&wide), vec![0, 0b10]);
    }

    #[test]
    fn round_trip_with_and_without_labels() {
        let m = CodeMatrix::from_features(
            array![[1.0f32, -1.0, 0.5], [-2.0, 3.0, -0.1]].view(),
            vec![10, 4],
            vec![vec![1], vec![0, 7]],
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CUKD");
        assert_eq!(buf.len(), 16 + 2 * 16 + 8 + (4 + 4) + (4 + 8));
        assert_eq!(CodeMatrix::from_bytes(&buf).unwrap(), m);

        let bare = &buf[..16 + 2 * 16];
        let back = CodeMatrix::from_bytes(bare).unwrap();
        assert_eq!(back.ids(), m.ids());
        assert!(back.labels().iter().all(Vec::is_empty));
    }

    #[test]
    fn truncated_file_reports_sizes() {
        let m = CodeMatrix::new(16, vec![3, 5], vec![0, 1], vec![vec![], vec![]]).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        match CodeMatrix::from_bytes(&buf[..20]) {
            Err(Error::Truncated { expected, actual, .. }) => {
                assert_eq!(expected, 48);
                assert_eq!(actual, 20);
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(CodeMatrix::from_bytes(&bad), Err(Error::Format { .. })));
    }

    #[test]
    fn stray_high_bits_are_rejected() {
        assert!(CodeMatrix::new(4, vec![0b1_0000], vec![1], vec![vec![]]).is_err());
    }
}
