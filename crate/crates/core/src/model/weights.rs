//! Portable named-tensor archive.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! b"CTWA" | version=1 | tensor count
//! per tensor: name length | UTF-8 name | rank | dims... | f32 LE data (row-major)
//! ```
//!
//! Tensor names are `<node>/<parameter>`, e.g. `conv2d_5/kernel` or
//! `batch_normalization_5/moving_mean`. Convolution kernels are stored as
//! `rows × cols × in_channels × filters`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, ParamStore};
use crate::error::{Error, Result};
use crate::Scalar;

const MAGIC: &[u8; 4] = b"CTWA";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Name-ordered tensor collection.
pub type WeightsArchive = BTreeMap<String, NamedTensor>;

pub fn write_archive(path: &Path, tensors: &WeightsArchive) -> Result<()> {
    let mut buf = Vec::new();
    encode_archive(tensors, &mut buf)?;
    crate::io::write_atomic(path, &buf)
}

pub fn encode_archive(tensors: &WeightsArchive, out: &mut impl Write) -> Result<()> {
    let u32le = |v: usize| -> Result<[u8; 4]> {
        u32::try_from(v)
            .map(u32::to_le_bytes)
            .map_err(|_| Error::WeightsFormat(format!("{v} does not fit in u32")))
    };
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&u32le(tensors.len())?);
    for (name, t) in tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::WeightsFormat(format!(
                "tensor `{name}` data length disagrees with its shape"
            )));
        }
        buf.extend_from_slice(&u32le(name.len())?);
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&u32le(t.shape.len())?);
        for &d in &t.shape {
            buf.extend_from_slice(&u32le(d)?);
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(|e| Error::WeightsFormat(e.to_string()))
}

pub fn read_archive(path: &Path) -> Result<WeightsArchive> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_archive(&mut bytes.as_slice())
}

pub fn decode_archive(input: &mut impl Read) -> Result<WeightsArchive> {
    let truncated = |_| Error::WeightsFormat("unexpected end of archive".into());
    let read_u32 = |r: &mut dyn Read| -> Result<usize> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(truncated)?;
        Ok(u32::from_le_bytes(b) as usize)
    };
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::WeightsFormat("bad magic; not a weights archive".into()));
    }
    let version = read_u32(input)?;
    if version != VERSION as usize {
        return Err(Error::WeightsFormat(format!("unsupported archive version {version}")));
    }
    let count = read_u32(input)?;
    let mut out = WeightsArchive::new();
    for _ in 0..count {
        let len = read_u32(input)?;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::WeightsFormat("tensor name is not UTF-8".into()))?;
        let rank = read_u32(input)?;
        let shape = (0..rank).map(|_| read_u32(input)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        input.read_exact(&mut raw).map_err(truncated)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if out.insert(name.clone(), NamedTensor { shape, data }).is_some() {
            return Err(Error::WeightsFormat(format!("duplicate tensor `{name}`")));
        }
    }
    Ok(out)
}

/// Pulls every parameter `graph` declares out of `archive`, checking shapes.
/// Tensors for nodes the graph does not contain are ignored.
pub fn params_from_archive<T: Scalar>(graph: &Graph, archive: &WeightsArchive) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    for decl in graph.param_decls() {
        let t = archive
            .get(&decl.name)
            .ok_or_else(|| Error::MissingTensor(decl.name.clone()))?;
        if t.shape != decl.shape {
            return Err(Error::WeightsMismatch {
                tensor: decl.name,
                expected: decl.shape,
                found: t.shape.clone(),
            });
        }
        let values = t.data.iter().map(|&v| T::of(f64::from(v))).collect();
        let array = ArrayD::from_shape_vec(IxDyn(&t.shape), values).expect("length checked on decode");
        store.insert(decl.name, array);
    }
    Ok(store)
}

pub fn archive_from_params<T: Scalar>(params: &ParamStore<T>) -> WeightsArchive {
    params
        .iter()
        .map(|(name, a)| {
            let data = a.iter().map(|v| v.to_f64_lossy() as f32).collect();
            (
                name.clone(),
                NamedTensor {
                    shape: a.shape().to_vec(),
                    data,
                },
            )
        })
        .collect()
}

/// Seeded random parameters: He-uniform kernels, zero biases and
/// non-degenerate batch-norm statistics.
pub fn random_params<T: Scalar>(graph: &Graph, seed: u64) -> ParamStore<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for decl in graph.param_decls() {
        let n = decl.len();
        let suffix = decl.name.rsplit('/').next().unwrap_or_default();
        let values: Vec<T> = match suffix {
            "kernel" => {
                let fan_in: usize = decl.shape[..decl.shape.len() - 1].iter().product();
                let limit = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| T::of(rng.random_range(-limit..limit))).collect()
            }
            "gamma" => (0..n).map(|_| T::of(rng.random_range(0.8..1.2))).collect(),
            "beta" | "moving_mean" => (0..n).map(|_| T::of(rng.random_range(-0.1..0.1))).collect(),
            "moving_variance" => (0..n).map(|_| T::of(rng.random_range(0.5..1.5))).collect(),
            _ => vec![T::zero(); n],
        };
        store.insert(
            decl.name.clone(),
            ArrayD::from_shape_vec(IxDyn(&decl.shape), values).expect("length matches shape"),
        );
    }
    store
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::arch::Architecture;

    #[test]
    fn encode_decode_round_trip() {
        let mut a = WeightsArchive::new();
        a.insert(
            "x/kernel".into(),
            NamedTensor {
                shape: vec![2, 1, 3],
                data: vec![0.5, -1.0, 2.0, 3.5, 1e-8, f32::MAX],
            },
        );
        a.insert(
            "y/beta".into(),
            NamedTensor {
                shape: vec![0],
                data: vec![],
            },
        );
        let mut buf = Vec::new();
        encode_archive(&a, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"CTWA");
        assert_eq!(decode_archive(&mut buf.as_slice()).unwrap(), a);
        assert!(decode_archive(&mut &buf[..buf.len() - 1]).is_err());
        assert!(decode_archive(&mut &b"NOPE\x01\0\0\0"[..]).is_err());
    }

    #[test]
    fn loading_checks_shapes_and_presence() {
        let g = Architecture::Tiny.graph((16, 16)).unwrap().truncate("mixed0").unwrap();
        let params = random_params::<f32>(&g, 3);
        let mut archive = archive_from_params(&params);
        let loaded: ParamStore<f32> = params_from_archive(&g, &archive).unwrap();
        assert_eq!(loaded, params);

        archive.get_mut("conv2d/kernel").unwrap().shape = vec![3, 3, 3, 4];
        archive.get_mut("conv2d/kernel").unwrap().data.truncate(108);
        assert!(matches!(
            params_from_archive::<f32>(&g, &archive),
            Err(Error::WeightsMismatch { .. })
        ));
        archive.remove("conv2d/kernel");
        assert!(matches!(
            params_from_archive::<f32>(&g, &archive),
            Err(Error::MissingTensor(_))
        ));
    }

    #[test]
    fn extra_tensors_are_ignored() {
        let full = Architecture::Tiny.graph((16, 16)).unwrap();
        let archive = archive_from_params(&random_params::<f32>(&full, 1));
        let part = full.truncate("mixed0").unwrap();
        let loaded: ParamStore<f64> = params_from_archive(&part, &archive).unwrap();
        assert_eq!(loaded.len(), part.param_decls().len());
        assert!(loaded.len() < archive.len());
    }

    #[test]
    fn random_params_are_seeded() {
        let g = Architecture::Tiny.graph((16, 16)).unwrap();
        assert_eq!(random_params::<f32>(&g, 7), random_params::<f32>(&g, 7));
        assert_ne!(random_params::<f32>(&g, 7), random_params::<f32>(&g, 8));
    }
}
