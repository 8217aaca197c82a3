//! Image feature maps and the providers that produce them.
//!
//! No CNN lives here. Features come either from a deterministic
//! hash-seeded generator or from files exported by an external network.

use std::path::{Path, PathBuf};

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rvqa_nn::io::{write_atomic, ByteReader};
use rvqa_nn::{DenseArray, NnError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"RVQF";
pub const FEATURE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureShape {
    pub const RESNET: FeatureShape = FeatureShape {
        channels: 2048,
        height: 14,
        width: 14,
    };

    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(CoreError::Config(format!(
                "feature shape {channels}×{height}×{width} must be positive"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
        })
    }

    pub fn regions(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.regions()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// C×H×W grid stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    shape: FeatureShape,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(shape: FeatureShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(CoreError::Input(format!(
                "feature map {shape:?} needs {} values, got {}",
                shape.len(),
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> FeatureShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.shape.height + y) * self.shape.width + x]
    }

    /// One row per spatial region (row-major over H, W), each of length C.
    pub fn regions(&self) -> DenseArray {
        let r = self.shape.regions();
        let c = self.shape.channels;
        let mut out = vec![0.0; r * c];
        for ch in 0..c {
            for i in 0..r {
                out[i * c + ch] = self.values[ch * r + i];
            }
        }
        DenseArray::new(vec![r, c], out).expect("region shape")
    }
}

/// Per-channel mean over all H×W positions.
pub fn mean_pool(v: &FeatureMap) -> DenseArray {
    let r = v.shape.regions();
    DenseArray::vector(
        v.values
            .chunks(r)
            .map(|ch| ch.iter().sum::<f64>() / r as f64)
            .collect(),
    )
}

/// Deterministic features keyed by `image_id`: SHA-256 of the id seeds a
/// ChaCha8 stream, and each value takes the top 24 bits of one `u32` draw,
/// mapped to `[−1, 1)`. Every value is exactly representable as `f32`.
pub fn synthetic_features(image_id: &str, shape: FeatureShape) -> FeatureMap {
    let digest = Sha256::digest(image_id.as_bytes());
    let seed = u64::from_le_bytes(digest[..8].try_into().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..shape.len())
        .map(|_| (rng.next_u32() >> 8) as f64 / (1u32 << 23) as f64 - 1.0)
        .collect();
    FeatureMap { shape, values }
}

pub fn encode_features(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + map.values.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    for d in [map.shape.channels, map.shape.height, map.shape.width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &map.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], context: &str) -> Result<FeatureMap> {
    let fmt = |e: NnError| match e {
        NnError::Format { offset, reason } => CoreError::Format {
            context: context.to_string(),
            offset,
            reason,
        },
        other => other.into(),
    };
    let bad = |offset: usize, reason: String| CoreError::Format {
        context: context.to_string(),
        offset: offset as u64,
        reason,
    };
    let mut r = ByteReader::new(bytes);
    if r.take(4).map_err(fmt)? != FEATURE_MAGIC {
        return Err(bad(0, "bad magic, expected RVQF".into()));
    }
    let version = r.u16().map_err(fmt)?;
    if version != FEATURE_VERSION {
        return Err(bad(4, format!("unsupported version {version}")));
    }
    let c = r.u32().map_err(fmt)? as usize;
    let h = r.u32().map_err(fmt)? as usize;
    let w = r.u32().map_err(fmt)? as usize;
    let shape = FeatureShape::new(c, h, w)
        .map_err(|_| bad(6, format!("invalid shape {c}×{h}×{w}")))?;
    let expected = shape.len() * 4;
    if r.remaining() != expected {
        return Err(bad(
            HEADER_LEN,
            format!(
                "header declares {expected} payload bytes, file has {}",
                r.remaining()
            ),
        ));
    }
    let values = (0..shape.len())
        .map(|_| r.f32().map(f64::from))
        .collect::<rvqa_nn::Result<Vec<_>>>()
        .map_err(fmt)?;
    Ok(FeatureMap { shape, values })
}

/// Writes the map as float32; values not representable in `f32` are rounded.
pub fn store_features(map: &FeatureMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_features(map)).map_err(|e| match e {
        NnError::Io(io) => CoreError::io(path, io),
        other => other.into(),
    })
}

pub fn load_features(path: &Path) -> Result<FeatureMap> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    decode_features(&bytes, &path.display().to_string())
}

/// Source of image feature maps. Implementations must be safe to share
/// across threads for concurrent reads.
pub trait FeatureProvider: Send + Sync {
    fn backend(&self) -> &str;
    fn deterministic(&self) -> bool;
    fn shape(&self) -> FeatureShape;
    fn features(&self, image_id: &str) -> Result<FeatureMap>;
}

#[derive(Debug, Clone)]
pub struct SyntheticFeatures {
    shape: FeatureShape,
}

impl SyntheticFeatures {
    pub fn new(shape: FeatureShape) -> Self {
        Self { shape }
    }
}

impl FeatureProvider for SyntheticFeatures {
    fn backend(&self) -> &str {
        "synthetic"
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn shape(&self) -> FeatureShape {
        self.shape
    }

    fn features(&self, image_id: &str) -> Result<FeatureMap> {
        Ok(synthetic_features(image_id, self.shape))
    }
}

/// Reads `<dir>/<image_id>.rvqf` files exported from an external CNN.
#[derive(Debug, Clone)]
pub struct FeatureDirectory {
    dir: PathBuf,
    shape: FeatureShape,
}

impl FeatureDirectory {
    pub fn new(dir: impl Into<PathBuf>, shape: FeatureShape) -> Self {
        Self {
            dir: dir.into(),
            shape,
        }
    }

    pub fn path_for(&self, image_id: &str) -> PathBuf {
        self.dir.join(format!("{image_id}.rvqf"))
    }
}

impl FeatureProvider for FeatureDirectory {
    fn backend(&self) -> &str {
        "files"
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn shape(&self) -> FeatureShape {
        self.shape
    }

    fn features(&self, image_id: &str) -> Result<FeatureMap> {
        let map = load_features(&self.path_for(image_id))?;
        if map.shape != self.shape {
            return Err(CoreError::Config(format!(
                "features for `{image_id}` have shape {:?}, provider expects {:?}",
                map.shape, self.shape
            )));
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_transpose_channel_major_layout() {
        let shape = FeatureShape::new(2, 1, 3).unwrap();
        let map = FeatureMap::new(shape, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(map.regions().values(), &[1., 4., 2., 5., 3., 6.]);
        assert_eq!(map.get(1, 0, 2), 6.0);
    }

    #[test]
    fn synthetic_values_are_f32_exact_and_bounded() {
        let map = synthetic_features("img-1", FeatureShape::new(8, 2, 2).unwrap());
        for v in map.values() {
            assert!((-1.0..1.0).contains(v));
            assert_eq!(*v, (*v as f32) as f64);
        }
    }

    #[test]
    fn zero_shape_is_rejected() {
        assert!(FeatureShape::new(0, 2, 2).is_err());
    }
}
