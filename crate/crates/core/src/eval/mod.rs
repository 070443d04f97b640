//! Transferability evaluation: success rates across model zoos, aggregation,
//! ablation sweeps, and report output.

mod report;
mod sweep;

use std::collections::BTreeMap;

pub use report::{format_table, write_csv, AsrReport};
pub use sweep::{sweep, SweepParam};

use crate::attack::{attack_batch, AttackConfig, Plugin};
use crate::data::{filter_correct, Dataset};
use crate::error::{Error, Result};
use crate::nn::{predictions, Model};
use crate::tensor::Tensor;

/// A model with the id it is reported under.
#[derive(Debug, Clone, Copy)]
pub struct Named<'a> {
    pub name: &'a str,
    pub model: &'a Model<f32>,
}

impl<'a> Named<'a> {
    pub fn new(name: &'a str, model: &'a Model<f32>) -> Self {
        Self { name, model }
    }
}

/// Percentage of images whose prediction differs from the label.
pub fn attack_success_rate(model: &Model<f32>, adv: &Tensor<f32>, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("no adversarial images to score".into()));
    }
    let [_, c, h, w] = adv.shape() else {
        return Err(Error::InvalidShape {
            shape: adv.shape().to_vec(),
            reason: "expected [B, C, H, W]".into(),
        });
    };
    let data = Dataset::new(adv.data().to_vec(), [*c, *h, *w], labels.to_vec(), model.classes(), "adv")?;
    let preds = predictions(model, &data)?;
    let fooled = preds.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(100.0 * fooled as f64 / labels.len() as f64)
}

/// Arithmetic mean and population standard deviation.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("nothing to aggregate".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Filters `data` to images every model classifies correctly, crafts
/// adversarials on the surrogate once per plugin, and scores them on every
/// target. A target with the surrogate's name is flagged as white-box.
pub fn evaluate_transfer(
    surrogate: Named<'_>,
    targets: &[Named<'_>],
    data: &Dataset,
    config: &AttackConfig,
    plugins: &[Plugin],
    threads: usize,
) -> Result<Vec<AsrReport>> {
    if targets.is_empty() {
        return Err(Error::invalid("no target models"));
    }
    let mut models: Vec<&Model<f32>> = vec![surrogate.model];
    models.extend(targets.iter().map(|t| t.model));
    let clean = filter_correct(data, &models)?;
    plugins
        .iter()
        .map(|plugin| {
            let mut cfg = config.clone();
            if cfg.num_copies == 0 {
                cfg.num_copies = plugin.default_copies();
            }
            let adv = attack_batch(surrogate.model, &clean.images()?, clean.labels(), &cfg, plugin, threads, None)?;
            score(surrogate, targets, &adv, clean.labels(), plugin.name(), snapshot(&cfg, plugin))
        })
        .collect()
}

pub(crate) fn score(
    surrogate: Named<'_>,
    targets: &[Named<'_>],
    adv: &Tensor<f32>,
    labels: &[usize],
    attack: &str,
    config: BTreeMap<String, String>,
) -> Result<AsrReport> {
    let asr = targets
        .iter()
        .map(|t| attack_success_rate(t.model, adv, labels))
        .collect::<Result<Vec<_>>>()?;
    let (mean, std_dev) = aggregate(&asr)?;
    Ok(AsrReport {
        attack: attack.to_string(),
        surrogate: surrogate.name.to_string(),
        targets: targets.iter().map(|t| t.name.to_string()).collect(),
        surrogate_index: targets.iter().position(|t| t.name == surrogate.name),
        asr,
        mean,
        std_dev,
        samples: labels.len(),
        config,
    })
}

pub(crate) fn snapshot(config: &AttackConfig, plugin: &Plugin) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut put = |prefix: &str, v: serde_json::Value| {
        if let serde_json::Value::Object(map) = v {
            for (k, v) in map {
                out.insert(format!("{prefix}{k}"), v.to_string().trim_matches('"').to_string());
            }
        }
    };
    put("", serde_json::to_value(config).unwrap_or_default());
    put("plugin.", serde_json::to_value(plugin).unwrap_or_default());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelSpec;

    #[test]
    fn aggregation_matches_table_rows() {
        let (m, s) = aggregate(&[100.0, 90.2, 93.7, 99.4, 55.9, 68.8, 84.1, 83.6]).unwrap();
        assert!((m - 84.5).abs() <= 0.05 && (s - 14.3).abs() <= 0.05, "{m} {s}");
        // divide-by-n: 22.28 here, 23.82 with the n - 1 divisor
        let (m, s) = aggregate(&[100.0, 61.7, 66.1, 90.4, 30.4, 37.4, 53.4, 56.9]).unwrap();
        assert!((m - 62.0375).abs() < 1e-9 && (s - 22.2799).abs() < 1e-4, "{m} {s}");
        assert_eq!(aggregate(&[42.0]).unwrap(), (42.0, 0.0));
        assert!(aggregate(&[]).is_err());
    }

    /// Predicts class 0 iff the first pixel is brighter than the second.
    fn brighter() -> Model<f32> {
        let spec = ModelSpec::parse("input 1 1 2\nflatten\ndense 2").unwrap();
        let mut m = Model::zeros(spec).unwrap();
        m.params_mut()[1].as_mut().unwrap().weight.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        m
    }

    #[test]
    fn success_rate_arithmetic() {
        let m = brighter();
        let px: Vec<f32> = (0..8).flat_map(|i| if i < 3 { [0.1, 0.9] } else { [0.9, 0.1] }).collect();
        let adv = Tensor::new(vec![8, 1, 1, 2], px).unwrap();
        assert_eq!(attack_success_rate(&m, &adv, &[0; 8]).unwrap(), 37.5);
        assert_eq!(attack_success_rate(&m, &adv, &[1, 1, 1, 0, 0, 0, 0, 0]).unwrap(), 0.0);
        assert_eq!(attack_success_rate(&m, &adv, &[1, 1, 1, 1, 1, 1, 1, 1]).unwrap(), 62.5);
        assert!(attack_success_rate(&m, &adv, &[]).is_err());
    }

    #[test]
    fn zero_iterations_give_zero_asr() {
        let m = brighter();
        let data = Dataset::new(vec![0.8, 0.2, 0.3, 0.6, 0.9, 0.5], [1, 1, 2], vec![0, 1, 0], 2, "t").unwrap();
        let cfg = AttackConfig::default().with_iters(0);
        let plugins = [Plugin::Identity, Plugin::from_name("sim").unwrap()];
        let reports = evaluate_transfer(Named::new("a", &m), &[Named::new("a", &m), Named::new("b", &m)], &data, &cfg, &plugins, 1).unwrap();
        assert_eq!(reports.len(), 2);
        for r in &reports {
            assert_eq!(r.asr, vec![0.0, 0.0]);
            assert_eq!(r.surrogate_index, Some(0));
            assert_eq!(r.samples, 3);
        }
        assert_eq!(reports[1].attack, "sim");
    }

    #[test]
    fn asr_is_permutation_invariant() {
        let m = brighter();
        let px = vec![0.1, 0.9, 0.9, 0.1, 0.4, 0.6];
        let adv = Tensor::new(vec![3, 1, 1, 2], px).unwrap();
        let rev = Tensor::new(vec![3, 1, 1, 2], vec![0.4, 0.6, 0.9, 0.1, 0.1, 0.9]).unwrap();
        assert_eq!(
            attack_success_rate(&m, &adv, &[0, 0, 1]).unwrap(),
            attack_success_rate(&m, &rev, &[1, 0, 0]).unwrap()
        );
    }
}
