//! Model checkpoint container.
//!
//! Layout: magic `PBCK`, a little-endian u32 header length, a JSON header
//! describing layers and named parameter offsets, then raw little-endian f32
//! parameter payload. Offsets are relative to the payload start.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::layers::{Layer, TransformerBlock};
use super::module::Module;
use super::tensor::Tensor;
use super::NnError;

pub const MAGIC: &[u8; 4] = b"PBCK";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Affine { in_dim: usize, out_dim: usize },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
        sh: usize,
        sw: usize,
        ph: usize,
        pw: usize,
    },
    Relu,
    Gelu,
    LayerNorm { dim: usize },
    PosAdd { rows: usize, dim: usize },
    Block { dim: usize, heads: usize, mlp: usize },
    Tokens,
    Flatten,
    MeanRows,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct ModuleEntry {
    name: String,
    layers: Vec<LayerSpec>,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: u32,
    meta: Value,
    modules: Vec<ModuleEntry>,
}

pub fn layer_spec(layer: &Layer) -> LayerSpec {
    match layer {
        Layer::Affine { weight, .. } => LayerSpec::Affine {
            in_dim: weight.shape[1],
            out_dim: weight.shape[0],
        },
        Layer::Conv2d { in_ch, out_ch, kh, kw, sh, sw, ph, pw, .. } => LayerSpec::Conv2d {
            in_ch: *in_ch,
            out_ch: *out_ch,
            kh: *kh,
            kw: *kw,
            sh: *sh,
            sw: *sw,
            ph: *ph,
            pw: *pw,
        },
        Layer::Relu => LayerSpec::Relu,
        Layer::Gelu => LayerSpec::Gelu,
        Layer::LayerNorm { gamma, .. } => LayerSpec::LayerNorm { dim: gamma.len() },
        Layer::PosAdd { pos } => LayerSpec::PosAdd { rows: pos.shape[0], dim: pos.shape[1] },
        Layer::Block(b) => LayerSpec::Block { dim: b.dim, heads: b.heads, mlp: b.mlp },
        Layer::Tokens => LayerSpec::Tokens,
        Layer::Flatten => LayerSpec::Flatten,
        Layer::MeanRows => LayerSpec::MeanRows,
    }
}

/// Build a zero-parameter layer from its spec; parameters are filled from the
/// payload afterwards.
fn layer_from_spec(spec: &LayerSpec) -> Layer {
    match spec {
        LayerSpec::Affine { in_dim, out_dim } => Layer::Affine {
            weight: Tensor::zeros(&[*out_dim, *in_dim]),
            bias: Tensor::zeros(&[*out_dim]),
        },
        LayerSpec::Conv2d { in_ch, out_ch, kh, kw, sh, sw, ph, pw } => Layer::Conv2d {
            weight: Tensor::zeros(&[*out_ch, in_ch * kh * kw]),
            bias: Tensor::zeros(&[*out_ch]),
            in_ch: *in_ch,
            out_ch: *out_ch,
            kh: *kh,
            kw: *kw,
            sh: *sh,
            sw: *sw,
            ph: *ph,
            pw: *pw,
        },
        LayerSpec::Relu => Layer::Relu,
        LayerSpec::Gelu => Layer::Gelu,
        LayerSpec::LayerNorm { dim } => Layer::LayerNorm {
            gamma: Tensor::zeros(&[*dim]),
            beta: Tensor::zeros(&[*dim]),
        },
        LayerSpec::PosAdd { rows, dim } => Layer::PosAdd {
            pos: Tensor::zeros(&[*rows, *dim]),
        },
        LayerSpec::Block { dim, heads, mlp } => Layer::Block(Box::new(TransformerBlock {
            dim: *dim,
            heads: *heads,
            mlp: *mlp,
            ln1_gamma: Tensor::zeros(&[*dim]),
            ln1_beta: Tensor::zeros(&[*dim]),
            w_qkv: Tensor::zeros(&[3 * dim, *dim]),
            b_qkv: Tensor::zeros(&[3 * dim]),
            w_out: Tensor::zeros(&[*dim, *dim]),
            b_out: Tensor::zeros(&[*dim]),
            ln2_gamma: Tensor::zeros(&[*dim]),
            ln2_beta: Tensor::zeros(&[*dim]),
            w_mlp1: Tensor::zeros(&[*mlp, *dim]),
            b_mlp1: Tensor::zeros(&[*mlp]),
            w_mlp2: Tensor::zeros(&[*dim, *mlp]),
            b_mlp2: Tensor::zeros(&[*dim]),
        })),
        LayerSpec::Tokens => Layer::Tokens,
        LayerSpec::Flatten => Layer::Flatten,
        LayerSpec::MeanRows => Layer::MeanRows,
    }
}

/// Serialize named modules plus a free-form JSON meta block.
pub fn save(path: &Path, meta: &Value, modules: &[(&str, &Module)]) -> Result<(), NnError> {
    let mut payload: Vec<u8> = Vec::new();
    let mut entries = Vec::new();
    for (name, module) in modules {
        let mut params = Vec::new();
        for (pname, tensor) in module.named_params() {
            let offset = payload.len();
            for v in &tensor.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            params.push(ParamEntry {
                name: pname,
                shape: tensor.shape.clone(),
                offset,
                len: tensor.data.len() * 4,
            });
        }
        entries.push(ModuleEntry {
            name: name.to_string(),
            layers: module.layers.iter().map(layer_spec).collect(),
            params,
        });
    }
    let header = Header {
        schema: 1,
        meta: meta.clone(),
        modules: entries,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| NnError::Format(format!("header encode: {e}")))?;
    let mut out = Vec::with_capacity(8 + header_bytes.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&payload);
    fs::write(path, out)?;
    Ok(())
}

/// Load a checkpoint back into (meta, named modules).
pub fn load(path: &Path) -> Result<(Value, Vec<(String, Module)>), NnError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(NnError::Format("bad magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(NnError::Format("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| NnError::Format(format!("header decode: {e}")))?;
    if header.schema != 1 {
        return Err(NnError::Format(format!("unknown schema {}", header.schema)));
    }
    let payload = &bytes[8 + header_len..];
    let mut modules = Vec::new();
    for entry in header.modules {
        let mut module = Module::new(entry.layers.iter().map(layer_from_spec).collect());
        {
            let mut slots = module.params_mut();
            if slots.len() != entry.params.len() {
                return Err(NnError::Format(format!(
                    "module {}: {} params in spec, {} in header",
                    entry.name,
                    slots.len(),
                    entry.params.len()
                )));
            }
            for (slot, pe) in slots.iter_mut().zip(&entry.params) {
                if slot.shape != pe.shape {
                    return Err(NnError::Format(format!(
                        "param {}: shape {:?} does not match layer {:?}",
                        pe.name, pe.shape, slot.shape
                    )));
                }
                if pe.offset + pe.len > payload.len() || pe.len != slot.data.len() * 4 {
                    return Err(NnError::Format(format!("param {}: bad extent", pe.name)));
                }
                for (i, chunk) in payload[pe.offset..pe.offset + pe.len].chunks_exact(4).enumerate()
                {
                    slot.data[i] = f32::from_le_bytes(chunk.try_into().unwrap());
                }
            }
        }
        modules.push((entry.name, module));
    }
    Ok((header.meta, modules))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use serde_json::json;

    fn sample_module(seed: u64) -> Module {
        let mut rng = SeededRng::new(seed);
        Module::new(vec![
            Layer::Affine {
                weight: Tensor::randn(&[4, 3], 0.3, &mut rng),
                bias: Tensor::randn(&[4], 0.1, &mut rng),
            },
            Layer::Gelu,
            Layer::LayerNorm {
                gamma: Tensor::randn(&[4], 0.1, &mut rng),
                beta: Tensor::zeros(&[4]),
            },
        ])
    }

    #[test]
    fn save_load_round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = sample_module(3);
        save(&path, &json!({"kind": "test"}), &[("net", &m)]).unwrap();
        let (meta, modules) = load(&path).unwrap();
        assert_eq!(meta["kind"], "test");
        assert_eq!(modules.len(), 1);
        assert_eq!(modules[0].0, "net");
        let loaded = &modules[0].1;
        for (a, b) in m.params().iter().zip(loaded.params()) {
            assert_eq!(a.shape, b.shape);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let x = Tensor::randn(&[3], 1.0, &mut SeededRng::new(5));
        assert_eq!(m.forward(&x).unwrap(), loaded.forward(&x).unwrap());
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let m = sample_module(9);
        save(&p1, &json!({"k": 1}), &[("net", &m)]).unwrap();
        save(&p2, &json!({"k": 1}), &[("net", &m)]).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_corrupt_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(load(&path), Err(NnError::Format(_))));
    }
}
