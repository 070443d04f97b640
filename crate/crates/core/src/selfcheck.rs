//! Built-in invariant suite: transform adjoints, finite-difference gradient
//! checks, identity reductions, and the report aggregation.

use std::fmt;

use crate::attack::Plugin;
use crate::error::Result;
use crate::eval::aggregate;
use crate::nn::{cross_entropy, Layer, Model, ModelSpec};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};
use crate::transforms::{
    bsr_forward, bsr_sample, bsr_vjp, crop, crop_vjp, cwt_forward, cwt_vjp, dim_forward, dim_sample, dim_vjp,
    resize, resize_vjp, rotate, rotate_vjp, sample_copy, sim_forward, BsrParams, CwtParams, DimParams, Kernel,
};

pub type ResizeVjp = fn(&Tensor<f32>, usize, usize, Kernel) -> Result<Tensor<f32>>;

/// Swappable implementations, so the suite can be pointed at a broken
/// primitive to confirm it notices.
#[derive(Clone, Copy)]
pub struct Hooks {
    pub resize_vjp: ResizeVjp,
}

impl Default for Hooks {
    fn default() -> Self {
        Self {
            resize_vjp: resize_vjp::<f32>,
        }
    }
}

/// Outcome of one named check: `trials` samples, the worst error seen, and
/// how many samples exceeded `tolerance`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub trials: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub failures: usize,
    pub errors: Vec<String>,
}

impl CheckReport {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            trials: 0,
            worst: 0.0,
            tolerance,
            failures: 0,
            errors: Vec::new(),
        }
    }

    fn record(&mut self, error: f64) {
        self.trials += 1;
        if !(error <= self.tolerance) {
            self.failures += 1;
        }
        if error.is_nan() || error > self.worst {
            self.worst = error;
        }
    }

    fn absorb<X>(&mut self, r: Result<X>) -> Option<X> {
        r.map_err(|e| self.errors.push(e.to_string())).ok()
    }

    pub fn passed(&self) -> bool {
        self.trials > 0 && self.failures == 0 && self.errors.is_empty()
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} trials={:<4} worst={:.3e} tol={:.0e}",
            if self.passed() { "ok  " } else { "FAIL" },
            self.name,
            self.trials,
            self.worst,
            self.tolerance
        )?;
        if self.failures > 0 {
            write!(f, " over={}", self.failures)?;
        }
        for e in &self.errors {
            write!(f, " error: {e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub group: &'static str,
    pub checks: Vec<CheckReport>,
}

impl GroupReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(CheckReport::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for GroupReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[{}] {}", if self.passed() { "PASS" } else { "FAIL" }, self.group)?;
        for c in &self.checks {
            writeln!(f, "  {c}")?;
        }
        Ok(())
    }
}

pub const ADJOINT_TOL: f64 = 1e-4;
pub const FD_TOL_F32: f64 = 1e-2;
pub const FD_TOL_F64: f64 = 1e-5;

/// Every group with its default sample counts.
pub fn run_all(hooks: &Hooks, seed: u64) -> Vec<GroupReport> {
    let root = Rng::new(seed);
    vec![
        adjoint_group(hooks, 100, root.split(0).next_u64()),
        gradient_group(100, root.split(1).next_u64()),
        identity_group(100, root.split(2).next_u64()),
        aggregation_group(),
    ]
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn uniform_tensor<T: Scalar>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::cast(rng.next_f64())).expect("shape and length agree")
}

fn kernel(rng: &mut Rng) -> Kernel {
    if rng.below(2) == 0 {
        Kernel::Bilinear
    } else {
        Kernel::Nearest
    }
}

/// `<f(x), y>` against `<x, f^T(y)>` for `triples` random draws.
fn adjoint_case(
    name: &str,
    triples: usize,
    rng: &Rng,
    mut draw: impl FnMut(&mut Rng) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>, Tensor<f32>)>,
) -> CheckReport {
    let mut report = CheckReport::new(name, ADJOINT_TOL);
    for t in 0..triples {
        let mut r = rng.split(t as u64);
        let Some((x, fx, y, fty)) = report.absorb(draw(&mut r)) else {
            continue;
        };
        let lhs = report.absorb(fx.dot(&y));
        let rhs = report.absorb(x.dot(&fty));
        if let (Some(lhs), Some(rhs)) = (lhs, rhs) {
            report.record(rel_err(lhs, rhs));
        }
    }
    report
}

/// Transform adjoint identities in f32 with random sizes, inputs, upstream
/// gradients and traces.
pub fn adjoint_group(hooks: &Hooks, triples: usize, seed: u64) -> GroupReport {
    let root = Rng::new(seed);
    let dims = |r: &mut Rng, lo: usize, hi: usize| (1 + r.below(3), lo + r.below(hi - lo + 1), lo + r.below(hi - lo + 1));
    let resize_case = |name: &str, k: Kernel, stream: u64| {
        adjoint_case(name, triples, &root.split(stream), |r| {
            let (c, h, w) = dims(r, 1, 24);
            let (oh, ow) = (1 + r.below(32), 1 + r.below(32));
            let x = uniform_tensor(&[c, h, w], r);
            let y = uniform_tensor(&[c, oh, ow], r);
            Ok((x.clone(), resize(&x, oh, ow, k)?, y.clone(), (hooks.resize_vjp)(&y, h, w, k)?))
        })
    };
    let checks = vec![
        resize_case("resize(bilinear)", Kernel::Bilinear, 0),
        resize_case("resize(nearest)", Kernel::Nearest, 1),
        adjoint_case("rotate", triples, &root.split(2), |r| {
            let (c, h, w) = dims(r, 2, 24);
            let angle = r.uniform(-180.0, 180.0)?;
            let k = kernel(r);
            let x = uniform_tensor(&[c, h, w], r);
            let y = uniform_tensor(&[c, h, w], r);
            Ok((x.clone(), rotate(&x, angle, k)?, y.clone(), rotate_vjp(&y, angle, k)?))
        }),
        adjoint_case("crop", triples, &root.split(3), |r| {
            let (c, h, w) = dims(r, 1, 24);
            let (oh, ow) = (1 + r.below(h), 1 + r.below(w));
            let (oy, ox) = (r.below(h - oh + 1), r.below(w - ow + 1));
            let x = uniform_tensor(&[c, h, w], r);
            let y = uniform_tensor(&[c, oh, ow], r);
            Ok((x.clone(), crop(&x, oy, ox, oh, ow)?, y.clone(), crop_vjp(&y, oy, ox, h, w)?))
        }),
        adjoint_case("cwt", triples, &root.split(4), |r| {
            let (c, h, w) = dims(r, 4, 32);
            let blocks = 1 + r.below(4);
            let params = CwtParams {
                blocks,
                scale_max: r.uniform(1.0, 1.6)?,
                max_angle_deg: r.uniform(0.0, 90.0)?,
                rotated_blocks: r.below(blocks * blocks + 1),
                kernel: kernel(r),
                pre_interpolation: r.below(2) == 0,
                ..CwtParams::default()
            };
            let trace = sample_copy(&params, (h, w), r)?;
            let x = uniform_tensor(&[c, h, w], r);
            let y = uniform_tensor(&[c, h, w], r);
            Ok((x.clone(), cwt_forward(&x, &trace, &params)?, y.clone(), cwt_vjp(&y, &trace, &params)?))
        }),
        adjoint_case("dim", triples, &root.split(5), |r| {
            let (c, h, w) = dims(r, 2, 32);
            let params = DimParams {
                prob: 1.0,
                resize_rate: r.uniform(1.0, 1.5)?,
                kernel: kernel(r),
            };
            let trace = dim_sample(&params, (h, w), r)?;
            let x = uniform_tensor(&[c, h, w], r);
            let y = uniform_tensor(&[c, h, w], r);
            Ok((
                x.clone(),
                dim_forward(&x, &trace, params.kernel)?,
                y.clone(),
                dim_vjp(&y, &trace, params.kernel)?,
            ))
        }),
        adjoint_case("bsr", triples, &root.split(6), |r| {
            let (c, h, w) = dims(r, 4, 32);
            let params = BsrParams {
                blocks: 1 + r.below(4),
                max_angle_deg: r.uniform(0.0, 45.0)?,
                kernel: kernel(r),
            };
            let trace = bsr_sample(&params, (h, w), r)?;
            let x = uniform_tensor(&[c, h, w], r);
            let y = uniform_tensor(&[c, h, w], r);
            Ok((
                x.clone(),
                bsr_forward(&x, &trace, params.kernel)?,
                y.clone(),
                bsr_vjp(&y, &trace, params.kernel)?,
            ))
        }),
    ];
    GroupReport {
        group: "adjoint",
        checks,
    }
}

/// Small convnets covering every layer kind.
pub fn gradient_check_specs() -> Vec<ModelSpec> {
    [
        "input 2 9 8\nconv 4 3 1 1\nrelu\nmaxpool\nconv 5 3 2 1\nrelu\nflatten\ndense 6\nrelu\ndense 3",
        "input 3 7 7\nconv 6 2 1 0\nrelu\nconv 4 3 1 2\ngap\ndense 4",
    ]
    .iter()
    .map(|t| ModelSpec::parse(t).expect("built-in spec"))
    .collect()
}

/// Mean loss over the batch and a fingerprint of the piecewise-linear region
/// (relu input signs and pooling winners).
fn loss_and_region<T: Scalar>(model: &Model<T>, batch: &Tensor<T>, labels: &[usize]) -> Result<(f64, Vec<usize>)> {
    let per = batch.len() / labels.len();
    let mut loss = 0.0;
    let mut region = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        let cache = model.forward_cached(&batch.data()[i * per..(i + 1) * per]);
        loss += cross_entropy(cache.acts.last().unwrap(), label)?.0;
        for (l, layer) in model.spec().layers.iter().enumerate() {
            match layer {
                Layer::Relu => region.extend(cache.acts[l].iter().map(|&v| usize::from(v > T::zero()))),
                Layer::MaxPool2d => region.extend_from_slice(&cache.argmax[l]),
                _ => {}
            }
        }
    }
    Ok((loss / labels.len() as f64, region))
}

/// Which coordinates a finite-difference check perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    Input,
    Params,
}

/// Central differences at `coords` random coordinates of a He-initialized
/// model. The analytic gradient is computed in `T`; the difference quotient
/// is evaluated in f64 on the same (exactly representable) weights and inputs
/// so f32 rounding in the loss does not swamp small derivatives. Coordinates
/// whose `x +- h` probes land in a different linear region are redrawn, since
/// the derivative is undefined across a kink.
pub fn finite_difference<T: Scalar>(spec: &ModelSpec, target: GradTarget, coords: usize, h: f64, tol: f64, seed: u64) -> CheckReport {
    let name = format!(
        "{}/{}/{}",
        std::any::type_name::<T>(),
        match target {
            GradTarget::Input => "input",
            GradTarget::Params => "params",
        },
        spec.hash()
    );
    let mut report = CheckReport::new(name, tol);
    let run = |report: &mut CheckReport| -> Result<()> {
        let root = Rng::new(seed);
        let mut model = Model::<f64>::init(spec.clone(), root.split(0).next_u64())?;
        // biases are zero after init; give them values so their gradients are exercised
        let mut r = root.split(1);
        for p in model.params_mut().iter_mut().flatten() {
            p.bias.data_mut().iter_mut().for_each(|b| *b = r.uniform(-0.1, 0.1).unwrap());
        }
        let model: Model<T> = model.cast();
        let [c, hh, ww] = spec.input;
        let mut r = root.split(2);
        let batch = uniform_tensor::<T>(&[2, c, hh, ww], &mut r);
        let labels: Vec<usize> = (0..2).map(|_| r.below(model.classes())).collect();
        let analytic: Vec<T> = match target {
            GradTarget::Input => model.loss_and_input_grad(&batch, &labels)?.1.into_data(),
            GradTarget::Params => model
                .loss_and_param_grads(&batch, &labels)?
                .1
                .into_iter()
                .flatten()
                .flat_map(|p| p.weight.into_data().into_iter().chain(p.bias.into_data()))
                .collect(),
        };
        let mut model = model.cast::<f64>();
        let batch = batch.cast::<f64>();
        let (_, base_region) = loss_and_region(&model, &batch, &labels)?;
        let mut pick = root.split(3);
        let mut attempts = 0;
        while report.trials < coords {
            attempts += 1;
            if attempts > 50 * coords {
                return Err(crate::Error::invalid("too many coordinates sit on a kink"));
            }
            let k = pick.below(analytic.len());
            let mut probe = |delta: f64| -> Result<(f64, Vec<usize>)> {
                match target {
                    GradTarget::Input => {
                        let mut b = batch.clone();
                        b.data_mut()[k] += delta;
                        loss_and_region(&model, &b, &labels)
                    }
                    GradTarget::Params => {
                        let old = *param_slot(&mut model, k);
                        *param_slot(&mut model, k) = old + delta;
                        let out = loss_and_region(&model, &batch, &labels);
                        *param_slot(&mut model, k) = old;
                        out
                    }
                }
            };
            let (up, r_up) = probe(h)?;
            let (down, r_down) = probe(-h)?;
            if r_up != base_region || r_down != base_region {
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            report.record(rel_err(analytic[k].as_f64(), numeric));
        }
        Ok(())
    };
    let outcome = run(&mut report);
    report.absorb(outcome);
    report
}

/// Flat index over `[w0, b0, w1, b1, ...]` of the parameterized layers.
fn param_slot<T: Scalar>(model: &mut Model<T>, mut k: usize) -> &mut T {
    for p in model.params_mut().iter_mut().flatten() {
        for t in [&mut p.weight, &mut p.bias] {
            if k < t.len() {
                return &mut t.data_mut()[k];
            }
            k -= t.len();
        }
    }
    panic!("parameter index out of range")
}

/// Input and parameter gradients in f32 and f64.
pub fn gradient_group(coords: usize, seed: u64) -> GroupReport {
    let root = Rng::new(seed);
    let mut checks = Vec::new();
    for (i, spec) in gradient_check_specs().iter().enumerate() {
        for (j, target) in [GradTarget::Input, GradTarget::Params].into_iter().enumerate() {
            let s = root.split((2 * i + j) as u64).next_u64();
            checks.push(finite_difference::<f32>(spec, target, coords, 1e-5, FD_TOL_F32, s));
            checks.push(finite_difference::<f64>(spec, target, coords, 1e-5, FD_TOL_F64, s));
        }
    }
    GroupReport {
        group: "finite-difference",
        checks,
    }
}

/// Degenerate transform settings must return the input bit for bit.
pub fn identity_group(images: usize, seed: u64) -> GroupReport {
    let root = Rng::new(seed);
    let identity_cwt = CwtParams {
        scale_min: 1.0,
        scale_max: 1.0,
        rotated_blocks: 0,
        ..CwtParams::default()
    };
    let mut cwt = CheckReport::new("cwt(s=1,k=0)", 0.0);
    let mut plugin = CheckReport::new("identity plugin", 0.0);
    let mut sim = CheckReport::new("sim(i=0)", 0.0);
    let mut dim = CheckReport::new("dim(p=0)", 0.0);
    let no_dim = Plugin::Dim(DimParams {
        prob: 0.0,
        ..DimParams::default()
    });
    for i in 0..images {
        let mut r = root.split(i as u64);
        let (c, h, w) = (1 + r.below(3), 2 + r.below(31), 2 + r.below(31));
        let x = uniform_tensor::<f32>(&[c, h, w], &mut r);
        let diff = |y: &Tensor<f32>| if *y == x { 0.0 } else { 1.0 };
        let params = CwtParams {
            blocks: 1 + r.below(h.min(w).min(4)),
            ..identity_cwt.clone()
        };
        let y = sample_copy(&params, (h, w), &mut r).and_then(|t| cwt_forward(&x, &t, &params));
        if let Some(y) = cwt.absorb(y) {
            cwt.record(diff(&y));
        }
        for (report, p) in [(&mut plugin, &Plugin::Identity), (&mut dim, &no_dim)] {
            let y = p.sample((h, w), 0, &mut r).and_then(|t| p.forward(&x, &t));
            if let Some(y) = report.absorb(y) {
                report.record(diff(&y));
            }
        }
        sim.record(diff(&sim_forward(&x, 0)));
    }
    GroupReport {
        group: "identity",
        checks: vec![cwt, plugin, sim, dim],
    }
}

/// Mean/std recomputed from printed per-target ASRs, matched to one decimal.
pub fn aggregation_group() -> GroupReport {
    let rows: [(&str, [f64; 8], f64, f64); 2] = [
        ("cwt/rn18", [100.0, 90.2, 93.7, 99.4, 55.9, 68.8, 84.1, 83.6], 84.5, 14.3),
        ("bsr/rn18", [100.0, 89.1, 90.2, 99.4, 49.1, 62.3, 79.4, 79.2], 81.1, 16.7),
    ];
    let checks = rows
        .iter()
        .map(|(name, values, mean, std)| {
            let mut report = CheckReport::new(*name, 0.05);
            if let Some((m, s)) = report.absorb(aggregate(values)) {
                report.record((m - mean).abs());
                report.record((s - std).abs());
            }
            report
        })
        .collect();
    GroupReport {
        group: "aggregation",
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_suite_passes() {
        for g in run_all(&Hooks::default(), 0) {
            assert!(g.passed(), "{g}");
        }
    }

    #[test]
    fn sign_flipped_resize_vjp_is_caught() {
        fn flipped(y: &Tensor<f32>, h: usize, w: usize, k: Kernel) -> Result<Tensor<f32>> {
            Ok(resize_vjp(y, h, w, k)?.scale(-1.0))
        }
        let g = adjoint_group(&Hooks { resize_vjp: flipped }, 10, 0);
        assert!(!g.passed());
        assert!(!g.check("resize(bilinear)").unwrap().passed());
        assert!(g.check("rotate").unwrap().passed());
    }

    #[test]
    fn transposed_rotation_is_caught() {
        // rotate_vjp by the opposite angle is the forward map, not its transpose
        let mut report = CheckReport::new("x", ADJOINT_TOL);
        let mut r = Rng::new(3);
        let x = uniform_tensor::<f32>(&[1, 9, 7], &mut r);
        let y = uniform_tensor::<f32>(&[1, 9, 7], &mut r);
        let lhs = rotate(&x, 17.0, Kernel::Bilinear).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&rotate(&y, -17.0, Kernel::Bilinear).unwrap()).unwrap();
        report.record(rel_err(lhs, rhs));
        assert!(!report.passed());
    }

    #[test]
    fn broken_gradient_is_caught() {
        let mut report = CheckReport::new("x", FD_TOL_F64);
        report.record(rel_err(1.0, 1.001));
        assert!(!report.passed());
        report = CheckReport::new("y", 0.0);
        assert!(!report.passed(), "no trials is not a pass");
    }
}
