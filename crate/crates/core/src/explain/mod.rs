//! Grad-CAM heatmaps.

use std::path::Path;

use crate::data::write_pnm;
use crate::error::{Error, Result};
use crate::nn::{Layer, Model, Shape};
use crate::tensor::Tensor;
use crate::transforms::{resize, Kernel};

/// Class-activation map over the input image, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// `[H, W]`, same spatial size as the input image.
    pub values: Tensor<f32>,
    /// Index of the conv layer the map was taken from.
    pub layer: usize,
    pub class: usize,
}

/// Index of the last conv layer.
pub fn last_conv_layer(model: &Model<f32>) -> Option<usize> {
    model.spec().layers.iter().rposition(|l| matches!(l, Layer::Conv2d { .. }))
}

/// Grad-CAM of `class` at the output of conv layer `layer` (default: the last
/// conv layer): channel weights are the spatial mean of the class logit's
/// gradient, the weighted channel sum goes through relu, is bilinearly
/// upsampled to the image size and divided by its maximum.
pub fn grad_cam(model: &Model<f32>, image: &Tensor<f32>, class: usize, layer: Option<usize>) -> Result<Heatmap> {
    let (c, h, w) = image.chw()?;
    if [c, h, w] != model.spec().input {
        return Err(Error::ShapeMismatch {
            left: image.shape().to_vec(),
            right: model.spec().input.to_vec(),
        });
    }
    if class >= model.classes() {
        return Err(Error::LabelOutOfRange {
            label: class,
            classes: model.classes(),
        });
    }
    let layer = match layer {
        Some(l) => l,
        None => last_conv_layer(model).ok_or_else(|| Error::invalid("model has no conv layer"))?,
    };
    match model.spec().layers.get(layer) {
        Some(Layer::Conv2d { .. }) => {}
        Some(other) => {
            return Err(Error::Layer {
                index: layer,
                kind: other.kind(),
                message: "Grad-CAM needs a conv layer".into(),
            })
        }
        None => return Err(Error::invalid(format!("layer {layer} does not exist"))),
    }
    let Shape::Spatial { c: k, h: fh, w: fw } = model.layer_output_shape(layer) else {
        unreachable!("conv output is spatial")
    };
    let cache = model.forward_cached(image.data());
    let mut onehot = vec![0.0f32; model.classes()];
    onehot[class] = 1.0;
    let grad = model.backward(&cache, onehot, layer + 1, None, true);
    let acts = &cache.acts[layer + 1];
    let plane = fh * fw;
    let mut cam = vec![0.0f32; plane];
    for ch in 0..k {
        let g = &grad[ch * plane..(ch + 1) * plane];
        let weight = g.iter().sum::<f32>() / plane as f32;
        for (v, &a) in cam.iter_mut().zip(&acts[ch * plane..(ch + 1) * plane]) {
            *v += weight * a;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let up = resize(&Tensor::new(vec![1, fh, fw], cam)?, h, w, Kernel::Bilinear)?;
    let max = up.data().iter().copied().fold(0.0f32, f32::max);
    let values = if max > 0.0 { up.map(|v| (v / max).clamp(0.0, 1.0)) } else { up };
    Ok(Heatmap {
        values: values.reshape(vec![h, w])?,
        layer,
        class,
    })
}

/// Writes the map as 8-bit P5 (`round(255 v)`), or with `overlay` as P6 where
/// the heat pulls the image's red channel toward full intensity.
pub fn export_heatmap(map: &Heatmap, path: &Path, overlay: Option<&Tensor<f32>>) -> Result<()> {
    let Some(image) = overlay else {
        return write_pnm(path, &map.values);
    };
    let (c, h, w) = image.chw()?;
    if (h, w) != (map.values.shape()[0], map.values.shape()[1]) || !(c == 1 || c == 3) {
        return Err(Error::ShapeMismatch {
            left: image.shape().to_vec(),
            right: map.values.shape().to_vec(),
        });
    }
    let plane = h * w;
    let channel = |ch: usize| &image.data()[(if c == 1 { 0 } else { ch }) * plane..][..plane];
    let mut rgb = Vec::with_capacity(3 * plane);
    rgb.extend(channel(0).iter().zip(map.values.data()).map(|(&r, &v)| r * (1.0 - v) + v));
    rgb.extend_from_slice(channel(1));
    rgb.extend_from_slice(channel(2));
    write_pnm(path, &Tensor::new(vec![3, h, w], rgb)?)
}
