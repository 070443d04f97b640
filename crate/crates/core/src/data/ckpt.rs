use std::collections::BTreeMap;
use std::path::Path;

use crate::data::bytes::{check_magic, push_f32s, push_u32, Reader};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Layer, LayerParams, ModelSpec};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CWTM";
const WHAT: &str = "checkpoint";

fn tag(layer: &Layer) -> u8 {
    match layer {
        Layer::Conv2d { .. } => 0,
        Layer::Relu => 1,
        Layer::MaxPool2d => 2,
        Layer::GlobalAvgPool => 3,
        Layer::Flatten => 4,
        Layer::Dense { .. } => 5,
    }
}

/// Layout: `CWTM`, u32 layer count, then per layer a tag byte, u32 dim count,
/// u32 dims and (for conv/dense) f32 weight then bias payloads; finally a u32
/// byte length and a UTF-8 `key=value` metadata block. Conv dims are
/// `[out, in, k, k, stride, padding]`, dense dims `[out, in]`.
pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, ck.spec.layers.len())?;
    for (layer, params) in ck.spec.layers.iter().zip(&ck.params) {
        out.push(tag(layer));
        let dims: Vec<usize> = match (layer, params) {
            (Layer::Conv2d { stride, padding, .. }, Some(p)) => {
                let mut d = p.weight.shape().to_vec();
                d.extend([*stride, *padding]);
                d
            }
            (Layer::Dense { .. }, Some(p)) => p.weight.shape().to_vec(),
            (l, None) if !l.has_params() => Vec::new(),
            (l, _) => return Err(Error::invalid(format!("parameters do not match {} layer", l.kind()))),
        };
        push_u32(&mut out, dims.len())?;
        for d in dims {
            push_u32(&mut out, d)?;
        }
        if let Some(p) = params {
            push_f32s(&mut out, p.weight.data());
            push_f32s(&mut out, p.bias.data());
        }
    }
    let mut meta = ck.metadata.clone();
    let [c, h, w] = ck.spec.input;
    meta.insert("input".into(), format!("{c} {h} {w}"));
    meta.insert("spec_hash".into(), ck.spec.hash());
    let mut text = String::new();
    for (k, v) in &meta {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::invalid(format!("metadata entry '{k}' cannot be encoded")));
        }
        text.push_str(&format!("{k}={v}\n"));
    }
    push_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, WHAT);
    check_magic(r.take(4)?, MAGIC, WHAT)?;
    let count = r.u32_le()? as usize;
    let mut layers = Vec::new();
    let mut params = Vec::new();
    for index in 0..count {
        let t = r.u8()?;
        let ndims = r.u32_le()? as usize;
        let dims = (0..ndims).map(|_| Ok(r.u32_le()? as usize)).collect::<Result<Vec<_>>>()?;
        let bad = |m: &str| Error::format(WHAT, format!("layer {index}: {m}"));
        let mut read_params = |wshape: Vec<usize>, out: usize| -> Result<LayerParams<f32>> {
            let n = wshape.iter().product();
            let weight = Tensor::new(wshape, r.f32_le_vec(n)?)?;
            let bias = Tensor::new(vec![out], r.f32_le_vec(out)?)?;
            Ok(LayerParams { weight, bias })
        };
        let (layer, p) = match (t, dims.as_slice()) {
            (0, &[oc, ic, k, k2, stride, padding]) if k == k2 => (
                Layer::Conv2d {
                    out_channels: oc,
                    kernel: k,
                    stride,
                    padding,
                },
                Some(read_params(vec![oc, ic, k, k], oc)?),
            ),
            (1, []) => (Layer::Relu, None),
            (2, []) => (Layer::MaxPool2d, None),
            (3, []) => (Layer::GlobalAvgPool, None),
            (4, []) => (Layer::Flatten, None),
            (5, &[out, inp]) => (Layer::Dense { out_features: out }, Some(read_params(vec![out, inp], out)?)),
            _ => return Err(bad(&format!("unknown tag {t} with dims {dims:?}"))),
        };
        layers.push(layer);
        params.push(p);
    }
    let len = r.u32_le()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::format(WHAT, "metadata is not UTF-8"))?;
    if !r.rest().is_empty() {
        return Err(Error::format(WHAT, "trailing bytes after metadata"));
    }
    let mut metadata = BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::format(WHAT, format!("metadata line '{line}'")))?;
        metadata.insert(k.to_string(), v.to_string());
    }
    let input = metadata.remove("input").ok_or_else(|| Error::format(WHAT, "missing input shape"))?;
    let dims: Vec<usize> = input.split_whitespace().filter_map(|s| s.parse().ok()).collect();
    let [c, h, w] = dims[..] else {
        return Err(Error::format(WHAT, format!("bad input shape '{input}'")));
    };
    let spec = ModelSpec::new([c, h, w], layers)?;
    let ck = Checkpoint { spec, params, metadata };
    ck.model()?;
    Ok(ck)
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    Ok(std::fs::write(path, encode_checkpoint(ck)?)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
