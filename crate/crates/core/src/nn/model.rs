use crate::error::{Error, Result};
use crate::nn::spec::{Layer, ModelSpec, Shape};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Weight and bias of one parameterized layer.
///
/// Conv weights are `[out, in, k, k]`, dense weights `[out, in]`; biases are `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// One entry per layer; `None` for parameter-free layers.
pub type Gradients<T> = Vec<Option<LayerParams<T>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f32> {
    spec: ModelSpec,
    shapes: Vec<Shape>,
    params: Vec<Option<LayerParams<T>>>,
}

/// Activations of one forward pass, kept for the backward pass.
pub(crate) struct Cache<T: Scalar> {
    /// `acts[i]` is the input of layer `i`; the last entry holds the logits.
    pub(crate) acts: Vec<Vec<T>>,
    pub(crate) argmax: Vec<Vec<usize>>,
}

fn param_dims(layer: &Layer, input: Shape) -> Option<(Vec<usize>, usize)> {
    match (*layer, input) {
        (
            Layer::Conv2d {
                out_channels, kernel, ..
            },
            Shape::Spatial { c, .. },
        ) => Some((vec![out_channels, c, kernel, kernel], out_channels)),
        (Layer::Dense { out_features }, Shape::Flat(n)) => Some((vec![out_features, n], out_features)),
        _ => None,
    }
}

/// Mean-free softmax cross-entropy of one logit row. Returns the loss (in
/// `f64`) and `d loss / d logits`.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<(f64, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let loss = sum.as_f64().ln() + (m - logits[label]).as_f64();
    let mut grad: Vec<T> = exps.iter().map(|&e| e / sum).collect();
    grad[label] = grad[label] - T::one();
    Ok((loss, grad))
}

impl<T: Scalar> Model<T> {
    /// All weights and biases zero.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        let params = spec
            .layers
            .iter()
            .zip(&shapes)
            .map(|(layer, &input)| {
                param_dims(layer, input).map(|(w, b)| LayerParams {
                    weight: Tensor::zeros(&w),
                    bias: Tensor::zeros(&[b]),
                })
            })
            .collect();
        Ok(Self { spec, shapes, params })
    }

    /// He-style uniform init, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`; biases zero.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        let base = Rng::new(seed);
        for (i, p) in model.params.iter_mut().enumerate() {
            if let Some(p) = p {
                let fan_in: usize = p.weight.shape()[1..].iter().product();
                let limit = (6.0 / fan_in as f64).sqrt();
                let mut rng = base.split(i as u64);
                for w in p.weight.data_mut() {
                    *w = T::cast(rng.uniform(-limit, limit)?);
                }
            }
        }
        Ok(model)
    }

    pub fn from_params(spec: ModelSpec, params: Vec<Option<LayerParams<T>>>) -> Result<Self> {
        let template = Self::zeros(spec)?;
        if params.len() != template.params.len() {
            return Err(Error::invalid(format!(
                "expected parameters for {} layers, got {}",
                template.params.len(),
                params.len()
            )));
        }
        for (index, (want, got)) in template.params.iter().zip(&params).enumerate() {
            let ok = match (want, got) {
                (None, None) => true,
                (Some(w), Some(g)) => w.weight.shape() == g.weight.shape() && w.bias.shape() == g.bias.shape(),
                _ => false,
            };
            if !ok {
                return Err(Error::Layer {
                    index,
                    kind: template.spec.layers[index].kind(),
                    message: "parameter dims do not match the spec".into(),
                });
            }
        }
        Ok(Self { params, ..template })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Option<LayerParams<T>>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<LayerParams<T>>] {
        &mut self.params
    }

    pub fn classes(&self) -> usize {
        self.shapes.last().map_or(0, Shape::len)
    }

    pub(crate) fn layer_output_shape(&self, layer: usize) -> Shape {
        self.shapes[layer + 1]
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weight: p.weight.cast(),
                        bias: p.bias.cast(),
                    })
                })
                .collect(),
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize> {
        match batch.shape() {
            [b, c, h, w] if [*c, *h, *w] == self.spec.input => Ok(*b),
            other => Err(Error::Layer {
                index: 0,
                kind: self.spec.layers.first().map_or("input", Layer::kind),
                message: format!("expected input [B, {:?}], got {other:?}", self.spec.input),
            }),
        }
    }

    fn sample<'a>(&self, batch: &'a Tensor<T>, i: usize) -> &'a [T] {
        let n = self.shapes[0].len();
        &batch.data()[i * n..(i + 1) * n]
    }

    /// Logits `[B, classes]` for a `[B, C, H, W]` batch.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self.check_batch(batch)?;
        let classes = self.classes();
        let mut out = Vec::with_capacity(b * classes);
        for i in 0..b {
            let mut cache = self.forward_cached(self.sample(batch, i));
            out.append(cache.acts.last_mut().unwrap());
        }
        Tensor::new(vec![b, classes], out)
    }

    /// Argmax class per image; ties go to the lowest index.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        Ok(logits.data().chunks(self.classes()).map(argmax).collect())
    }

    fn check_labels(&self, b: usize, labels: &[usize]) -> Result<()> {
        if labels.len() != b {
            return Err(Error::CountMismatch {
                images: b,
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= self.classes()) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.classes(),
            });
        }
        Ok(())
    }

    /// Per-image losses and unscaled input gradients `d J_i / d x_i`.
    pub(crate) fn per_sample_input_grads(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<(Vec<f64>, Tensor<T>)> {
        let b = self.check_batch(batch)?;
        self.check_labels(b, labels)?;
        let mut losses = Vec::with_capacity(b);
        let mut grads = Vec::with_capacity(batch.len());
        for (i, &label) in labels.iter().enumerate() {
            let cache = self.forward_cached(self.sample(batch, i));
            let (loss, dlogits) = cross_entropy(cache.acts.last().unwrap(), label)?;
            losses.push(loss);
            grads.extend(self.backward(&cache, dlogits, 0, None, true));
        }
        Ok((losses, Tensor::new(batch.shape().to_vec(), grads)?))
    }

    /// Mean cross-entropy over the batch and its gradient with respect to
    /// every input pixel.
    pub fn loss_and_input_grad(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
        let (losses, grads) = self.per_sample_input_grads(batch, labels)?;
        let b = losses.len();
        let loss = losses.iter().sum::<f64>() / b as f64;
        Ok((loss, grads.scale(T::cast(1.0 / b as f64))))
    }

    /// Mean cross-entropy and its gradient with respect to every parameter.
    pub fn loss_and_param_grads(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<(f64, Gradients<T>)> {
        let b = self.check_batch(batch)?;
        self.check_labels(b, labels)?;
        let mut grads: Gradients<T> = Self::zeros(self.spec.clone())?.params;
        let scale = T::cast(1.0 / b as f64);
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let cache = self.forward_cached(self.sample(batch, i));
            let (loss, dlogits) = cross_entropy(cache.acts.last().unwrap(), label)?;
            total += loss;
            let dlogits = dlogits.into_iter().map(|g| g * scale).collect();
            self.backward(&cache, dlogits, 0, Some(&mut grads), false);
        }
        Ok((total / b as f64, grads))
    }

    pub(crate) fn forward_cached(&self, input: &[T]) -> Cache<T> {
        let mut acts = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut argmax = Vec::with_capacity(self.spec.layers.len());
        acts.push(input.to_vec());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let x = acts.last().unwrap();
            let (input, output) = (self.shapes[i], self.shapes[i + 1]);
            let mut pool_idx = Vec::new();
            let y = match *layer {
                Layer::Conv2d { stride, padding, .. } => {
                    let p = self.params[i].as_ref().unwrap();
                    conv_forward(x, input, output, stride, padding, p)
                }
                Layer::Relu => x.iter().map(|&v| v.max(T::zero())).collect(),
                Layer::MaxPool2d => {
                    let (y, idx) = maxpool_forward(x, input, output);
                    pool_idx = idx;
                    y
                }
                Layer::GlobalAvgPool => gap_forward(x, input),
                Layer::Flatten => x.clone(),
                Layer::Dense { .. } => dense_forward(x, self.params[i].as_ref().unwrap()),
            };
            acts.push(y);
            argmax.push(pool_idx);
        }
        Cache { acts, argmax }
    }

    /// Back-propagates `grad_out` (gradient at the logits) down through layer
    /// `stop`, returning the gradient at that layer's input. Parameter
    /// gradients are accumulated into `param_grads` when given. With
    /// `need_input_grad == false` the input gradient of layer 0 is skipped.
    pub(crate) fn backward(
        &self,
        cache: &Cache<T>,
        grad_out: Vec<T>,
        stop: usize,
        mut param_grads: Option<&mut Gradients<T>>,
        need_input_grad: bool,
    ) -> Vec<T> {
        let mut grad = grad_out;
        for i in (stop..self.spec.layers.len()).rev() {
            let x = &cache.acts[i];
            let (input, output) = (self.shapes[i], self.shapes[i + 1]);
            let want_dx = need_input_grad || i > 0;
            let pg = param_grads.as_deref_mut().and_then(|g| g[i].as_mut());
            grad = match self.spec.layers[i] {
                Layer::Conv2d { stride, padding, .. } => {
                    let p = self.params[i].as_ref().unwrap();
                    conv_backward(x, &grad, input, output, stride, padding, p, pg, want_dx)
                }
                Layer::Relu => x
                    .iter()
                    .zip(&grad)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect(),
                Layer::MaxPool2d => {
                    let mut dx = vec![T::zero(); input.len()];
                    for (&src, &g) in cache.argmax[i].iter().zip(&grad) {
                        dx[src] = dx[src] + g;
                    }
                    dx
                }
                Layer::GlobalAvgPool => {
                    let Shape::Spatial { c, h, w } = input else { unreachable!() };
                    let inv = T::cast(1.0 / (h * w) as f64);
                    (0..c * h * w).map(|k| grad[k / (h * w)] * inv).collect()
                }
                Layer::Flatten => grad,
                Layer::Dense { .. } => dense_backward(x, &grad, self.params[i].as_ref().unwrap(), pg, want_dx),
            };
        }
        grad
    }
}

pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn spatial(s: Shape) -> (usize, usize, usize) {
    match s {
        Shape::Spatial { c, h, w } => (c, h, w),
        Shape::Flat(n) => (n, 1, 1),
    }
}

/// Output indices `o` in `[lo, hi)` with `0 <= o * stride + k - pad < len`.
fn valid_range(len: usize, out_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if len + pad <= k {
        0
    } else {
        ((len - 1 + pad - k) / stride + 1).min(out_len)
    };
    (lo, hi.max(lo))
}

fn conv_forward<T: Scalar>(x: &[T], input: Shape, output: Shape, stride: usize, pad: usize, p: &LayerParams<T>) -> Vec<T> {
    let (ic, h, w) = spatial(input);
    let (oc, oh, ow) = spatial(output);
    let k = p.weight.shape()[2];
    let wt = p.weight.data();
    let mut y = vec![T::zero(); oc * oh * ow];
    for o in 0..oc {
        let out = &mut y[o * oh * ow..(o + 1) * oh * ow];
        out.fill(p.bias.data()[o]);
        for c in 0..ic {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(h, oh, ky, stride, pad);
                for kx in 0..k {
                    let wv = wt[((o * ic + c) * k + ky) * k + kx];
                    let (ox_lo, ox_hi) = valid_range(w, ow, kx, stride, pad);
                    let n = ox_hi - ox_lo;
                    if n == 0 {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let ix0 = ox_lo * stride + kx - pad;
                        let row = &plane[iy * w..(iy + 1) * w];
                        let dst = &mut out[oy * ow + ox_lo..oy * ow + ox_hi];
                        if stride == 1 {
                            for (d, &s) in dst.iter_mut().zip(&row[ix0..ix0 + n]) {
                                *d = *d + wv * s;
                            }
                        } else {
                            for (j, d) in dst.iter_mut().enumerate() {
                                *d = *d + wv * row[ix0 + j * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    input: Shape,
    output: Shape,
    stride: usize,
    pad: usize,
    p: &LayerParams<T>,
    mut pg: Option<&mut LayerParams<T>>,
    want_dx: bool,
) -> Vec<T> {
    let (ic, h, w) = spatial(input);
    let (oc, oh, ow) = spatial(output);
    let k = p.weight.shape()[2];
    let wt = p.weight.data();
    let mut dx = if want_dx { vec![T::zero(); ic * h * w] } else { Vec::new() };
    for o in 0..oc {
        let g = &dy[o * oh * ow..(o + 1) * oh * ow];
        if let Some(pg) = pg.as_deref_mut() {
            let db = &mut pg.bias.data_mut()[o];
            *db = *db + g.iter().copied().sum::<T>();
        }
        for c in 0..ic {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(h, oh, ky, stride, pad);
                for kx in 0..k {
                    let widx = ((o * ic + c) * k + ky) * k + kx;
                    let wv = wt[widx];
                    let (ox_lo, ox_hi) = valid_range(w, ow, kx, stride, pad);
                    let n = ox_hi - ox_lo;
                    if n == 0 {
                        continue;
                    }
                    let mut dw = T::zero();
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let ix0 = ox_lo * stride + kx - pad;
                        let gr = &g[oy * ow + ox_lo..oy * ow + ox_hi];
                        if stride == 1 {
                            let row = &plane[iy * w + ix0..iy * w + ix0 + n];
                            if pg.is_some() {
                                for (&gv, &xv) in gr.iter().zip(row) {
                                    dw = dw + gv * xv;
                                }
                            }
                            if want_dx {
                                let drow = &mut dx[c * h * w + iy * w + ix0..c * h * w + iy * w + ix0 + n];
                                for (d, &gv) in drow.iter_mut().zip(gr) {
                                    *d = *d + wv * gv;
                                }
                            }
                        } else {
                            for (j, &gv) in gr.iter().enumerate() {
                                let ix = ix0 + j * stride;
                                if pg.is_some() {
                                    dw = dw + gv * plane[iy * w + ix];
                                }
                                if want_dx {
                                    let d = &mut dx[c * h * w + iy * w + ix];
                                    *d = *d + wv * gv;
                                }
                            }
                        }
                    }
                    if let Some(pg) = pg.as_deref_mut() {
                        let slot = &mut pg.weight.data_mut()[widx];
                        *slot = *slot + dw;
                    }
                }
            }
        }
    }
    dx
}

fn maxpool_forward<T: Scalar>(x: &[T], input: Shape, output: Shape) -> (Vec<T>, Vec<usize>) {
    let (c, h, w) = spatial(input);
    let (_, oh, ow) = spatial(output);
    let mut y = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = ch * h * w + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                y.push(x[best]);
                idx.push(best);
            }
        }
    }
    (y, idx)
}

fn gap_forward<T: Scalar>(x: &[T], input: Shape) -> Vec<T> {
    let (c, h, w) = spatial(input);
    let inv = T::cast(1.0 / (h * w) as f64);
    (0..c)
        .map(|ch| x[ch * h * w..(ch + 1) * h * w].iter().copied().sum::<T>() * inv)
        .collect()
}

fn dense_forward<T: Scalar>(x: &[T], p: &LayerParams<T>) -> Vec<T> {
    let n = x.len();
    p.weight
        .data()
        .chunks(n)
        .zip(p.bias.data())
        .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&wv, &xv)| acc + wv * xv))
        .collect()
}

fn dense_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    p: &LayerParams<T>,
    pg: Option<&mut LayerParams<T>>,
    want_dx: bool,
) -> Vec<T> {
    let n = x.len();
    if let Some(pg) = pg {
        for (o, &g) in dy.iter().enumerate() {
            let db = &mut pg.bias.data_mut()[o];
            *db = *db + g;
            for (dw, &xv) in pg.weight.data_mut()[o * n..(o + 1) * n].iter_mut().zip(x) {
                *dw = *dw + g * xv;
            }
        }
    }
    if !want_dx {
        return Vec::new();
    }
    let mut dx = vec![T::zero(); n];
    for (row, &g) in p.weight.data().chunks(n).zip(dy) {
        for (d, &wv) in dx.iter_mut().zip(row) {
            *d = *d + wv * g;
        }
    }
    dx
}
