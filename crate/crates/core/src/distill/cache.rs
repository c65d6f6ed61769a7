use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::{Error, Result};

pub const FEATURE_CACHE_MAGIC: [u8; 4] = *b"HDFC";
pub const FEATURE_CACHE_VERSION: u16 = 1;
const HEADER_LEN: u64 = 4 + 2 + 4 + 8;

/// Precomputed teacher features, one row per dataset item.
///
/// On disk: magic `HDFC`, version `u16`, feature dim `u32`, row count
/// `u64`, then row-major little-endian `f32` values.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCache {
    pub features: Array2<f32>,
}

impl FeatureCache {
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    /// Location of the cache for a dataset / teacher pair.
    pub fn path_for(dir: &Path, dataset: &str, teacher: &str) -> PathBuf {
        dir.join(format!("{dataset}__{teacher}.feat"))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&FEATURE_CACHE_MAGIC)?;
        w.write_all(&FEATURE_CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for v in self.features.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN as usize];
        r.read_exact(&mut header).map_err(|_| Error::Truncated {
            what: "feature cache header",
            expected: HEADER_LEN,
            actual: 0,
        })?;
        if header[..4] != FEATURE_CACHE_MAGIC {
            return Err(Error::Format {
                what: "feature cache",
                detail: "bad magic".into(),
            });
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != FEATURE_CACHE_VERSION {
            return Err(Error::Format {
                what: "feature cache",
                detail: format!("unsupported version {version}"),
            });
        }
        let dim = u32::from_le_bytes(header[6..10].try_into().expect("4 bytes")) as usize;
        let count = u64::from_le_bytes(header[10..18].try_into().expect("8 bytes")) as usize;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let expected = (dim * count * 4) as u64;
        if payload.len() as u64 != expected {
            return Err(Error::Truncated {
                what: "feature cache payload",
                expected,
                actual: payload.len() as u64,
            });
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(FeatureCache {
            features: Array2::from_shape_vec((count, dim), values).expect("length checked"),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_header_layout() {
        let cache = FeatureCache {
            features: Array2::from_shape_fn((3, 5), |(i, j)| i as f32 * 0.5 - j as f32),
        };
        let mut buf = Vec::new();
        cache.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"HDFC");
        assert_eq!(buf.len(), 18 + 15 * 4);
        assert_eq!(FeatureCache::read_from(&buf[..]).unwrap(), cache);
    }

    #[test]
    fn truncated_payload_is_reported() {
        let cache = FeatureCache {
            features: Array2::zeros((2, 2)),
        };
        let mut buf = Vec::new();
        cache.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        match FeatureCache::read_from(&buf[..]) {
            Err(Error::Truncated { expected, actual, .. }) => assert_eq!((expected, actual), (16, 13)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
