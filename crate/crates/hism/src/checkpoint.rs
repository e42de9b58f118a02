//! Binary checkpoints: `HISM` magic, u32 version, u8 variant tag, u32 JSON
//! manifest length, the manifest (model config and parameter shapes), then
//! every parameter as little-endian f32 in manifest order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::model::{HismModel, ModelConfig, ParamSpec, Variant};
use crate::HismError;

pub const MAGIC: &[u8; 4] = b"HISM";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    params: Vec<ParamSpec>,
}

pub fn to_bytes(model: &HismModel) -> Vec<u8> {
    let manifest = serde_json::to_vec(&Manifest {
        config: model.config.clone(),
        params: model.specs.clone(),
    })
    .expect("manifest serializes");
    let mut out = Vec::with_capacity(13 + manifest.len() + 4 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(model.variant().tag());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    for p in &model.params {
        for &v in &p.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<HismModel, HismError> {
    let bad = |m: &str| HismError::Checkpoint(m.to_string());
    if bytes.len() < 13 || &bytes[..4] != MAGIC {
        return Err(bad("missing HISM header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let variant = Variant::from_tag(bytes[8]).ok_or_else(|| bad("unknown variant tag"))?;
    let mlen = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let body = bytes.get(13..13 + mlen).ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    if manifest.config.variant != variant {
        return Err(bad("variant tag disagrees with manifest"));
    }
    if manifest.params != HismModel::expected_specs(&manifest.config) {
        return Err(bad("parameter shapes do not match the model config"));
    }
    let mut blob = &bytes[13 + mlen..];
    let mut params = Vec::with_capacity(manifest.params.len());
    for spec in &manifest.params {
        let n: usize = spec.shape.iter().product();
        if blob.len() < 4 * n {
            return Err(bad("truncated parameter data"));
        }
        let data = blob[..4 * n]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        blob = &blob[4 * n..];
        params.push(Tensor::new(spec.shape.clone(), data));
    }
    if !blob.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(HismModel::from_parts(manifest.config, manifest.params, params))
}

pub fn save<W: Write>(model: &HismModel, mut out: W) -> Result<(), HismError> {
    out.write_all(&to_bytes(model))?;
    Ok(())
}

pub fn load<R: Read>(mut input: R) -> Result<HismModel, HismError> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use attnlab_core::rng;

    #[test]
    fn round_trip_preserves_f32_values() {
        for v in Variant::ALL {
            let m = HismModel::new(ModelConfig::with_variant(v), &mut rng::stream(3, 1)).unwrap();
            let bytes = to_bytes(&m);
            assert_eq!(&bytes[..4], b"HISM");
            assert_eq!(bytes[8], v.tag());
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back.config, m.config);
            for (a, b) in m.params.iter().zip(&back.params) {
                for (x, y) in a.data.iter().zip(&b.data) {
                    assert_eq!(*x as f32, *y as f32);
                }
            }
            assert_eq!(to_bytes(&back), bytes);
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = HismModel::new(ModelConfig::with_variant(Variant::Lstm), &mut rng::stream(3, 1)).unwrap();
        let bytes = to_bytes(&m);
        assert!(from_bytes(b"NOPE").is_err());
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut tag = bytes.clone();
        tag[8] = 2;
        assert!(from_bytes(&tag).is_err());
        let mut ver = bytes;
        ver[4] = 9;
        assert!(from_bytes(&ver).is_err());
    }
}
