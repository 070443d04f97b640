use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attack::plugin::Plugin;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// L-infinity budget in pixel units.
    pub eps: f64,
    pub iters: usize,
    pub alpha: f64,
    /// Momentum decay.
    pub mu: f64,
    pub num_copies: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    /// eps = 16/255, 10 iterations, mu = 1, 20 copies.
    fn default() -> Self {
        Self::new(16.0 / 255.0, 10, 1.0, 20, 0)
    }
}

impl AttackConfig {
    /// Step size defaults to `eps / iters`.
    pub fn new(eps: f64, iters: usize, mu: f64, num_copies: usize, seed: u64) -> Self {
        Self {
            eps,
            iters,
            alpha: if iters == 0 { eps } else { eps / iters as f64 },
            mu,
            num_copies,
            seed,
        }
    }

    /// Changes the iteration count and recomputes `alpha = eps / iters`.
    pub fn with_iters(self, iters: usize) -> Self {
        Self::new(self.eps, iters, self.mu, self.num_copies, self.seed)
    }

    /// Zero iterations are accepted and leave the input untouched.
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps > 0.0
            && self.eps.is_finite()
            && (self.iters == 0 || (self.alpha > 0.0 && self.alpha.is_finite()))
            && self.mu >= 0.0
            && self.mu.is_finite()
            && self.num_copies >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid attack config {self:?}")))
        }
    }
}

/// Iterate, momentum and step counter of one attack run.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackState<T: Scalar = f32> {
    pub clean: Tensor<T>,
    pub adv: Tensor<T>,
    pub momentum: Tensor<T>,
    pub iteration: usize,
}

impl<T: Scalar> AttackState<T> {
    pub fn new(clean: Tensor<T>) -> Self {
        Self {
            adv: clean.clone(),
            momentum: Tensor::zeros(clean.shape()),
            clean,
            iteration: 0,
        }
    }
}

/// One row of the per-iteration diagnostic log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub image: usize,
    pub iteration: usize,
    /// Mean loss over the copies, before the step.
    pub loss: f64,
    /// `||x_adv - x||_inf` after the step.
    pub linf: f64,
}

pub fn write_log_csv(out: &mut impl Write, rows: &[IterationLog]) -> Result<()> {
    writeln!(out, "image,iteration,loss,linf")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.image, r.iteration, r.loss, r.linf)?;
    }
    Ok(())
}

/// Mean over copies of the plugin adjoint applied to the loss gradient at
/// each transformed copy, plus the mean loss. Copy `i` samples from
/// `rng.split(i)`; copies are summed in ascending order.
pub fn averaged_gradient_with_loss<T: Scalar>(
    model: &Model<T>,
    x_adv: &Tensor<T>,
    label: usize,
    plugin: &Plugin,
    num_copies: usize,
    rng: &Rng,
) -> Result<(f64, Tensor<T>)> {
    if num_copies == 0 {
        return Err(Error::invalid("need at least one copy"));
    }
    let (_, h, w) = x_adv.chw()?;
    let mut traces = Vec::with_capacity(num_copies);
    let mut copies = Vec::with_capacity(num_copies);
    for i in 0..num_copies {
        let trace = plugin.sample((h, w), i, &mut rng.split(i as u64))?;
        copies.push(plugin.forward(x_adv, &trace)?);
        traces.push(trace);
    }
    let batch = Tensor::stack(&copies)?;
    let (losses, grads) = model.per_sample_input_grads(&batch, &vec![label; num_copies])?;
    let mut sum = Tensor::zeros(x_adv.shape());
    for (i, trace) in traces.iter().enumerate() {
        sum = sum.add(&plugin.vjp(&grads.outer(i)?, trace)?)?;
    }
    let inv = 1.0 / num_copies as f64;
    Ok((losses.iter().sum::<f64>() * inv, sum.scale(T::cast(inv))))
}

pub fn averaged_gradient<T: Scalar>(
    model: &Model<T>,
    x_adv: &Tensor<T>,
    label: usize,
    plugin: &Plugin,
    num_copies: usize,
    rng: &Rng,
) -> Result<Tensor<T>> {
    Ok(averaged_gradient_with_loss(model, x_adv, label, plugin, num_copies, rng)?.1)
}

/// Momentum update with L1-normalized gradient, signed step, projection onto
/// the eps-ball around the clean image and clamp to `[0, 1]`.
pub fn mifgsm_step<T: Scalar>(state: &mut AttackState<T>, config: &AttackConfig, g_bar: &Tensor<T>) -> Result<()> {
    g_bar.check_same_shape(&state.adv)?;
    let l1 = g_bar.l1_norm();
    let mu = T::cast(config.mu);
    if l1 > 0.0 {
        let norm = T::cast(l1);
        for (m, &g) in state.momentum.data_mut().iter_mut().zip(g_bar.data()) {
            *m = mu * *m + g / norm;
        }
    } else {
        for m in state.momentum.data_mut() {
            *m = mu * *m;
        }
    }
    let (alpha, eps) = (T::cast(config.alpha), T::cast(config.eps));
    let (zero, one) = (T::zero(), T::one());
    let adv = state.adv.data_mut();
    for ((x, &g), &c) in adv.iter_mut().zip(state.momentum.data()).zip(state.clean.data()) {
        let sign = if g > zero {
            one
        } else if g < zero {
            -one
        } else {
            zero
        };
        let stepped = *x + alpha * sign;
        let delta = (stepped - c).max(-eps).min(eps);
        *x = (c + delta).max(zero).min(one);
    }
    state.iteration += 1;
    Ok(())
}

/// Full attack on one `[C, H, W]` image with an explicit random stream:
/// iteration `t` draws from `rng.split(t)`.
pub fn attack_with_rng<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    label: usize,
    config: &AttackConfig,
    plugin: &Plugin,
    rng: &Rng,
    mut log: Option<&mut Vec<IterationLog>>,
) -> Result<Tensor<T>> {
    config.validate()?;
    plugin.validate()?;
    let mut state = AttackState::new(x.clone());
    for t in 0..config.iters {
        let (loss, g) = averaged_gradient_with_loss(model, &state.adv, label, plugin, config.num_copies, &rng.split(t as u64))?;
        mifgsm_step(&mut state, config, &g)?;
        if let Some(log) = log.as_deref_mut() {
            log.push(IterationLog {
                image: 0,
                iteration: t,
                loss,
                linf: state.adv.sub(&state.clean)?.max_abs(),
            });
        }
    }
    Ok(state.adv)
}

/// [`attack_with_rng`] seeded from `config.seed`.
pub fn attack<T: Scalar>(model: &Model<T>, x: &Tensor<T>, label: usize, config: &AttackConfig, plugin: &Plugin) -> Result<Tensor<T>> {
    attack_with_rng(model, x, label, config, plugin, &Rng::new(config.seed), None)
}

/// Attacks every image of a `[B, C, H, W]` batch. Image `i` uses stream
/// `Rng::new(seed).split(i)`, so results do not depend on `threads`.
pub fn attack_batch(
    model: &Model<f32>,
    images: &Tensor<f32>,
    labels: &[usize],
    config: &AttackConfig,
    plugin: &Plugin,
    threads: usize,
    log: Option<&mut Vec<IterationLog>>,
) -> Result<Tensor<f32>> {
    let b = images.shape()[0];
    if images.rank() != 4 || labels.len() != b {
        return Err(Error::CountMismatch {
            images: b,
            labels: labels.len(),
        });
    }
    let root = Rng::new(config.seed);
    let want_log = log.is_some();
    let run = |i: usize| -> Result<(Tensor<f32>, Vec<IterationLog>)> {
        let mut rows = Vec::new();
        let adv = attack_with_rng(
            model,
            &images.outer(i)?,
            labels[i],
            config,
            plugin,
            &root.split(i as u64),
            want_log.then_some(&mut rows),
        )?;
        rows.iter_mut().for_each(|r| r.image = i);
        Ok((adv, rows))
    };
    let threads = threads.clamp(1, b);
    let mut results: Vec<Option<Result<(Tensor<f32>, Vec<IterationLog>)>>> = (0..b).map(|_| None).collect();
    if threads == 1 {
        for (i, slot) in results.iter_mut().enumerate() {
            *slot = Some(run(i));
        }
    } else {
        let chunk = b.div_ceil(threads);
        std::thread::scope(|s| {
            for (c, slots) in results.chunks_mut(chunk).enumerate() {
                let run = &run;
                s.spawn(move || {
                    for (j, slot) in slots.iter_mut().enumerate() {
                        *slot = Some(run(c * chunk + j));
                    }
                });
            }
        });
    }
    let mut advs = Vec::with_capacity(b);
    let mut rows = Vec::new();
    for r in results {
        let (adv, r) = r.expect("every slot is filled")?;
        advs.push(adv);
        rows.extend(r);
    }
    if let Some(log) = log {
        log.extend(rows);
    }
    Tensor::stack(&advs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelSpec;

    fn model() -> Model<f64> {
        Model::init(ModelSpec::preset("tiny", [1, 8, 8], 4).unwrap(), 7).unwrap()
    }

    fn image(seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(&[1, 8, 8], |_| rng.next_f64()).unwrap()
    }

    #[test]
    fn identity_single_copy_is_plain_gradient() {
        let (m, x) = (model(), image(1));
        let g = averaged_gradient(&m, &x, 2, &Plugin::Identity, 1, &Rng::new(0)).unwrap();
        let batch = Tensor::stack(&[x.clone()]).unwrap();
        let (_, plain) = m.loss_and_input_grad(&batch, &[2]).unwrap();
        assert_eq!(g.data(), plain.data());
        let g20 = averaged_gradient(&m, &x, 2, &Plugin::Identity, 20, &Rng::new(0)).unwrap();
        for (a, b) in g.data().iter().zip(g20.data()) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn cwt_average_matches_copy_by_copy() {
        let (m, x) = (model(), image(2));
        let plugin = Plugin::from_name("cwt").unwrap();
        let rng = Rng::new(5);
        let g = averaged_gradient(&m, &x, 1, &plugin, 4, &rng).unwrap();
        let mut sum = Tensor::<f64>::zeros(x.shape());
        for i in 0..4 {
            let trace = plugin.sample((8, 8), i, &mut rng.split(i as u64)).unwrap();
            let xt = Tensor::stack(&[plugin.forward(&x, &trace).unwrap()]).unwrap();
            let (_, gi) = m.loss_and_input_grad(&xt, &[1]).unwrap();
            sum = sum.add(&plugin.vjp(&gi.outer(0).unwrap(), &trace).unwrap()).unwrap();
        }
        for (a, b) in g.data().iter().zip(sum.data()) {
            assert!((a - b / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fgsm_reduction_single_step() {
        let x = image(3);
        let g = image(4).map(|v| v - 0.5);
        let cfg = AttackConfig::new(0.1, 4, 0.0, 1, 0);
        let mut state = AttackState::new(x.clone());
        mifgsm_step(&mut state, &cfg, &g).unwrap();
        for ((a, c), gv) in state.adv.data().iter().zip(x.data()).zip(g.data()) {
            let expect = (c + 0.025 * gv.signum()).clamp(0.0, 1.0);
            assert_eq!(*a, expect);
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let x = image(5);
        let mut state = AttackState::new(x.clone());
        mifgsm_step(&mut state, &AttackConfig::default(), &Tensor::zeros(x.shape())).unwrap();
        assert_eq!(state.adv, x);
        assert!(state.momentum.data().iter().all(|v| *v == 0.0));
        assert_eq!(state.iteration, 1);
    }

    #[test]
    fn momentum_doubles_under_constant_gradient() {
        let x = Tensor::<f64>::full(&[1, 2, 2], 0.5);
        let g = Tensor::new(vec![1, 2, 2], vec![1.0, -2.0, 0.5, 0.0]).unwrap();
        let cfg = AttackConfig::new(0.3, 10, 1.0, 1, 0);
        let mut state = AttackState::new(x);
        mifgsm_step(&mut state, &cfg, &g).unwrap();
        let first = state.momentum.clone();
        mifgsm_step(&mut state, &cfg, &g).unwrap();
        for (a, b) in state.momentum.data().iter().zip(first.data()) {
            assert_eq!(*a, 2.0 * b);
        }
        assert_eq!(state.momentum.sign(), first.sign());
    }

    #[test]
    fn budget_collapse_returns_input() {
        let (m, x) = (model(), image(6));
        let cfg = AttackConfig::new(1e-9, 10, 1.0, 2, 0);
        let adv = attack(&m, &x, 0, &cfg, &Plugin::from_name("cwt").unwrap()).unwrap();
        // one rounding of c + delta in [0, 1]
        assert!(adv.sub(&x).unwrap().max_abs() <= 1e-9 + f64::EPSILON);
    }

    #[test]
    fn budget_is_used_monotonically() {
        let (m, x) = (model(), image(7));
        let cfg = AttackConfig::new(0.05, 5, 1.0, 3, 1);
        let plugin = Plugin::from_name("bsr").unwrap();
        let rng = Rng::new(1);
        let mut state = AttackState::new(x.clone());
        for t in 0..cfg.iters {
            let g = averaged_gradient(&m, &state.adv, 3, &plugin, 3, &rng.split(t as u64)).unwrap();
            mifgsm_step(&mut state, &cfg, &g).unwrap();
            let bound = ((t + 1) as f64 * cfg.alpha).min(cfg.eps);
            assert!(state.adv.sub(&x).unwrap().max_abs() <= bound + 1e-12);
            assert!(state.adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let (m, x) = (model(), image(8));
        let cfg = AttackConfig::default().with_iters(0);
        assert_eq!(attack(&m, &x, 1, &cfg, &Plugin::Identity).unwrap(), x);
        assert!(AttackConfig { eps: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(AttackConfig { num_copies: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn batch_is_thread_count_independent() {
        let m = model().cast::<f32>();
        let xs: Vec<Tensor<f32>> = (0..5).map(|i| image(10 + i).cast()).collect();
        let batch = Tensor::stack(&xs).unwrap();
        let cfg = AttackConfig::new(16.0 / 255.0, 3, 1.0, 2, 9);
        let plugin = Plugin::from_name("cwt").unwrap();
        let mut log = Vec::new();
        let one = attack_batch(&m, &batch, &[0, 1, 2, 3, 0], &cfg, &plugin, 1, Some(&mut log)).unwrap();
        let three = attack_batch(&m, &batch, &[0, 1, 2, 3, 0], &cfg, &plugin, 3, None).unwrap();
        assert_eq!(one, three);
        assert_eq!(log.len(), 15);
        assert_eq!(log[14].image, 4);
        let single = attack_with_rng(&m, &xs[2], 2, &cfg, &plugin, &Rng::new(9).split(2), None).unwrap();
        assert_eq!(one.outer(2).unwrap(), single);
        let mut csv = Vec::new();
        write_log_csv(&mut csv, &log).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("image,iteration,loss,linf\n0,0,"));
    }
}
