use std::collections::BTreeMap;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::model::{argmax, Model};
use crate::nn::spec::ModelSpec;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            lr: 0.05,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Minibatch SGD with momentum. Initialization uses stream 0 of the seed,
/// the shuffle of epoch `e` uses stream `e + 1`.
pub fn train_model(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig) -> Result<Model<f32>> {
    if data.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::invalid(format!(
            "need lr >= 0 and momentum in [0, 1), got lr {} momentum {}",
            cfg.lr, cfg.momentum
        )));
    }
    if spec.input != data.image_shape() {
        return Err(Error::invalid(format!(
            "spec input {:?} does not match dataset images {:?}",
            spec.input,
            data.image_shape()
        )));
    }
    let root = Rng::new(cfg.seed);
    let mut model = Model::<f32>::init(spec.clone(), root.split(0).next_u64())?;
    let mut velocity = Model::<f32>::zeros(spec.clone())?;
    let (lr, mu) = (cfg.lr as f32, cfg.momentum as f32);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        root.split(epoch as u64 + 1).shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let (_, grads) = model.loss_and_param_grads(&batch.images()?, batch.labels())?;
            let layers = model.params_mut().iter_mut().zip(velocity.params_mut()).zip(&grads);
            for ((p, v), g) in layers {
                let (Some(p), Some(v), Some(g)) = (p, v, g) else { continue };
                for (pt, (vt, gt)) in [(&mut p.weight, (&mut v.weight, &g.weight)), (&mut p.bias, (&mut v.bias, &g.bias))] {
                    for ((w, m), d) in pt.data_mut().iter_mut().zip(vt.data_mut()).zip(gt.data()) {
                        *m = mu * *m + d;
                        *w -= lr * *m;
                    }
                }
            }
        }
    }
    Ok(model)
}

/// [`train_model`] wrapped into a checkpoint with its training metadata.
pub fn train(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig) -> Result<Checkpoint> {
    let model = train_model(spec, data, cfg)?;
    let metadata = BTreeMap::from([
        ("dataset".to_string(), data.split.clone()),
        ("epochs".to_string(), cfg.epochs.to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
        ("lr".to_string(), cfg.lr.to_string()),
        ("momentum".to_string(), cfg.momentum.to_string()),
        ("batch_size".to_string(), cfg.batch_size.to_string()),
        ("spec_hash".to_string(), spec.hash()),
    ]);
    Ok(Checkpoint::from_model(&model, metadata))
}

/// Per-image predictions, evaluated in chunks.
pub fn predictions(model: &Model<f32>, data: &Dataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    let mut start = 0;
    while start < data.len() {
        let end = (start + 256).min(data.len());
        let logits = model.forward(&data.batch(start, end)?)?;
        out.extend(logits.data().chunks(model.classes()).map(argmax));
        start = end;
    }
    Ok(out)
}

/// Fraction of images whose argmax prediction (lowest index on ties) equals the label.
pub fn accuracy(model: &Model<f32>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let preds = predictions(model, data)?;
    let hits = preds.iter().zip(data.labels()).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / data.len() as f64)
}
