use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use super::args::*;
use super::{manifest_for, usage, Cli, RunManifest, SelfcheckFailed};
use crate::attack::{attack_batch, write_log_csv, AttackConfig, Plugin};
use crate::data::{
    filter_correct, load_cifar10_bin, load_mnist_dir, read_checkpoint, read_pnm, read_tnsr, write_checkpoint,
    write_tnsr, Dataset,
};
use crate::eval::{attack_success_rate, evaluate_transfer, format_table, sweep, write_csv, AsrReport, Named, SweepParam};
use crate::explain::{export_heatmap, grad_cam};
use crate::nn::{accuracy, train, Model, ModelSpec, TrainConfig};
use crate::selfcheck::{run_all, Hooks};
use crate::tensor::Tensor;
use crate::transforms::{BsrParams, CwtParams, DimParams, Kernel};

/// Slack allowed above eps when checking a stored batch.
pub const LINF_SLACK: f64 = 1.0 / (1u64 << 20) as f64;

/// Loads `mnist:DIR` or `cifar10:FILE`; `split` picks the MNIST files.
pub fn load_dataset(spec: &str, split: &str) -> anyhow::Result<Dataset> {
    let test = match split {
        "train" => false,
        "test" => true,
        other => return Err(usage(format!("--split must be train or test, got '{other}'"))),
    };
    match spec.split_once(':') {
        Some(("mnist", dir)) => load_mnist_dir(Path::new(dir), test).with_context(|| format!("loading {spec}")),
        Some(("cifar10", file)) => load_cifar10_bin(Path::new(file)).with_context(|| format!("loading {spec}")),
        _ => Err(usage(format!("dataset '{spec}' must look like mnist:DIR or cifar10:FILE"))),
    }
}

fn load_data(args: &DataArgs, default_split: &str) -> anyhow::Result<Dataset> {
    let data = load_dataset(&args.dataset, args.split.as_deref().unwrap_or(default_split))?;
    Ok(match args.limit {
        Some(n) => data.take(n),
        None => data,
    })
}

fn load_model(path: &Path) -> anyhow::Result<Model<f32>> {
    let ck = read_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    ck.model().with_context(|| format!("checkpoint {}", path.display()))
}

fn model_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn write_manifest(command: Command, threads: usize, out: &Path, mut outputs: Vec<PathBuf>) -> anyhow::Result<()> {
    outputs.insert(0, out.to_path_buf());
    let path = RunManifest::path_for(out);
    manifest_for(&command, threads, outputs)?.write(&path)
}

/// Plugin named `name` with the transform flags applied.
pub fn build_plugin(name: &str, f: &AttackFlags) -> anyhow::Result<Plugin> {
    let kernel: Kernel = f.kernel.parse().map_err(|e: crate::Error| usage(e.to_string()))?;
    let plugin = match Plugin::from_name(name).map_err(|e| usage(e.to_string()))? {
        Plugin::Cwt(base) => {
            let mut p = CwtParams {
                scale_min: f.smin,
                scale_max: f.smax,
                rotated_blocks: f.rot_k,
                kernel,
                pre_interpolation: !f.no_pre_interp,
                ..base
            };
            p.blocks = f.blocks.unwrap_or(p.blocks);
            p.max_angle_deg = f.rot_max.unwrap_or(p.max_angle_deg);
            p.copies = f.copies.unwrap_or(p.copies);
            Plugin::Cwt(p)
        }
        Plugin::Bsr(base) => Plugin::Bsr(BsrParams {
            blocks: f.blocks.unwrap_or(base.blocks),
            max_angle_deg: f.rot_max.unwrap_or(base.max_angle_deg),
            kernel,
        }),
        Plugin::Dim(_) => Plugin::Dim(DimParams {
            prob: f.dim_prob,
            resize_rate: f.dim_rate,
            kernel,
        }),
        Plugin::Sim { .. } => Plugin::Sim { scales: f.sim_scales },
        Plugin::Identity => Plugin::Identity,
    };
    plugin.validate().map_err(|e| usage(e.to_string()))?;
    if let Plugin::Dim(p) = &plugin {
        if !(0.0..=1.0).contains(&p.prob) || !(p.resize_rate >= 1.0) {
            return Err(usage("--dim-prob must be in [0, 1] and --dim-rate at least 1"));
        }
    }
    if let Plugin::Bsr(p) = &plugin {
        if p.blocks == 0 || !(p.max_angle_deg >= 0.0) {
            return Err(usage("bsr needs --blocks >= 1 and --rot-max >= 0"));
        }
    }
    Ok(plugin)
}

/// Engine settings; `copies` falls back to the plugin default.
pub fn build_config(f: &AttackFlags, plugin: &Plugin) -> anyhow::Result<AttackConfig> {
    let copies = f.copies.unwrap_or_else(|| plugin.default_copies());
    let mut cfg = AttackConfig::new(f.eps, f.iters, f.mu, copies, f.seed);
    if let Some(alpha) = f.alpha {
        cfg.alpha = alpha;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn resolve_spec(text: &str, data: &Dataset) -> anyhow::Result<ModelSpec> {
    if ModelSpec::PRESETS.contains(&text) {
        return Ok(ModelSpec::preset(text, data.image_shape(), data.classes())?);
    }
    let body = std::fs::read_to_string(text).map_err(|e| usage(format!("--spec '{text}' is neither a preset nor a readable file: {e}")))?;
    let spec = ModelSpec::parse(&body).with_context(|| format!("parsing {text}"))?;
    if spec.input != data.image_shape() {
        bail!("spec input {:?} does not match dataset images {:?}", spec.input, data.image_shape());
    }
    Ok(spec)
}

pub fn cmd_train(a: &TrainArgs, threads: usize) -> anyhow::Result<()> {
    let data = load_data(&a.data, "train")?;
    let spec = resolve_spec(&a.spec, &data)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        momentum: a.momentum,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    if a.batch_size == 0 || !(a.lr >= 0.0) || !(0.0..1.0).contains(&a.momentum) {
        return Err(usage("need --batch-size >= 1, --lr >= 0 and --momentum in [0, 1)"));
    }
    let mut ck = train(&spec, &data, &cfg)?;
    ck.metadata.insert("dataset".into(), a.data.dataset.clone());
    let model = ck.model()?;
    let train_acc = accuracy(&model, &data)?;
    let test = match (&a.test_dataset, a.data.dataset.starts_with("mnist:")) {
        (Some(spec), _) => Some(load_dataset(spec, "test")?),
        (None, true) => Some(load_dataset(&a.data.dataset, "test")?),
        (None, false) => None,
    };
    write_checkpoint(&a.out, &ck).with_context(|| format!("writing {}", a.out.display()))?;
    match test {
        Some(t) => println!("train accuracy {train_acc:.4}  test accuracy {:.4}", accuracy(&model, &t)?),
        None => println!("train accuracy {train_acc:.4}"),
    }
    write_manifest(Command::Train(a.clone()), threads, &a.out, vec![])
}

/// Attacked inputs: the dataset slice, optionally filtered on the surrogate.
pub fn attack_inputs(a: &AttackArgs, model: &Model<f32>) -> anyhow::Result<Dataset> {
    let data = load_data(&a.data, "test")?;
    if data.image_shape() != model.spec().input {
        bail!(
            "surrogate expects {:?} images, dataset has {:?}",
            model.spec().input,
            data.image_shape()
        );
    }
    Ok(if a.filter { filter_correct(&data, &[model])? } else { data })
}

pub fn cmd_attack(a: &AttackArgs, threads: usize) -> anyhow::Result<()> {
    let plugin = build_plugin(&a.attack, &a.flags)?;
    let cfg = build_config(&a.flags, &plugin)?;
    let model = load_model(&a.surrogate)?;
    let data = attack_inputs(a, &model)?;
    if data.is_empty() {
        bail!("no images to attack");
    }
    let mut log = a.log.as_ref().map(|_| Vec::new());
    let clean = data.images()?;
    let adv = attack_batch(&model, &clean, data.labels(), &cfg, &plugin, threads, log.as_mut())?;
    write_tnsr(&a.out, &adv).with_context(|| format!("writing {}", a.out.display()))?;
    let mut extra = Vec::new();
    if let (Some(path), Some(rows)) = (&a.log, &log) {
        write_log_csv(&mut BufWriter::new(File::create(path)?), rows)?;
        extra.push(path.clone());
    }
    let linf = adv.sub(&clean)?.max_abs();
    let asr = attack_success_rate(&model, &adv, data.labels())?;
    println!(
        "{} images  attack {plugin}  white-box ASR {asr:.2}%  max L-inf {linf:.6} (eps {:.6})",
        data.len(),
        cfg.eps
    );
    write_manifest(Command::Attack(a.clone()), threads, &a.out, extra)
}

fn load_zoo(surrogate: &Path, targets: &[PathBuf]) -> anyhow::Result<(String, Model<f32>, Vec<(String, Model<f32>)>)> {
    let s = load_model(surrogate)?;
    let t = targets
        .iter()
        .map(|p| Ok((model_name(p), load_model(p)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok((model_name(surrogate), s, t))
}

fn emit_reports(reports: &[AsrReport], out: &Path) -> anyhow::Result<()> {
    write_csv(&mut BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?), reports)?;
    print!("{}", format_table(reports));
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, threads: usize) -> anyhow::Result<()> {
    let plugins = a
        .attack
        .iter()
        .map(|n| build_plugin(n, &a.flags))
        .collect::<anyhow::Result<Vec<_>>>()?;
    // copies 0 lets each plugin use its own default
    let mut cfg = build_config(&a.flags, &Plugin::Identity)?;
    cfg.num_copies = a.flags.copies.unwrap_or(0);
    let data = load_data(&a.data, "test")?;
    let (sname, smodel, zoo) = load_zoo(&a.surrogate, &a.targets)?;
    let targets: Vec<Named> = zoo.iter().map(|(n, m)| Named::new(n, m)).collect();
    let reports = evaluate_transfer(Named::new(&sname, &smodel), &targets, &data, &cfg, &plugins, threads)?;
    emit_reports(&reports, &a.out)?;
    write_manifest(Command::Eval(a.clone()), threads, &a.out, vec![])
}

pub fn cmd_sweep(a: &SweepArgs, threads: usize) -> anyhow::Result<()> {
    let param: SweepParam = a.param.parse().map_err(|e: crate::Error| usage(e.to_string()))?;
    let Plugin::Cwt(base) = build_plugin("cwt", &a.flags)? else {
        unreachable!()
    };
    let cfg = build_config(&a.flags, &Plugin::Cwt(base.clone()))?;
    for v in &a.values {
        param.apply(v, &base, &cfg).map_err(|e| usage(e.to_string()))?;
    }
    let data = load_data(&a.data, "test")?;
    let (sname, smodel, zoo) = load_zoo(&a.surrogate, &a.targets)?;
    let targets: Vec<Named> = zoo.iter().map(|(n, m)| Named::new(n, m)).collect();
    let reports = sweep(param, &a.values, &base, &cfg, Named::new(&sname, &smodel), &targets, &data, threads)?;
    emit_reports(&reports, &a.out)?;
    write_manifest(Command::Sweep(a.clone()), threads, &a.out, vec![])
}

fn heatmap_image(a: &HeatmapArgs) -> anyhow::Result<Tensor<f32>> {
    match (&a.image, &a.dataset, a.index) {
        (Some(path), _, _) => {
            let t = if path.extension().is_some_and(|e| e == "tnsr") {
                read_tnsr(path)?
            } else {
                read_pnm(path)?
            };
            let t = if t.rank() == 4 && t.shape()[0] == 1 { t.outer(0)? } else { t };
            Ok(t)
        }
        (None, Some(spec), Some(i)) => {
            let data = load_dataset(spec, a.split.as_deref().unwrap_or("test"))?;
            if i >= data.len() {
                return Err(usage(format!("--index {i} out of range for {} images", data.len())));
            }
            Ok(data.image(i))
        }
        _ => Err(usage("heatmap needs --image or --dataset with --index")),
    }
}

pub fn cmd_heatmap(a: &HeatmapArgs, threads: usize) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let image = heatmap_image(a)?;
    let class = match a.class {
        Some(c) if c >= model.classes() => {
            return Err(usage(format!("--class {c} out of range for {} classes", model.classes())))
        }
        Some(c) => c,
        None => {
            let [c, h, w] = model.spec().input;
            model.predict(&image.clone().reshape(vec![1, c, h, w])?)?[0]
        }
    };
    let map = grad_cam(&model, &image, class, a.layer)?;
    let overlay = a.out.extension().is_some_and(|e| e == "ppm");
    export_heatmap(&map, &a.out, overlay.then_some(&image)).with_context(|| format!("writing {}", a.out.display()))?;
    println!("class {class}  layer {}  -> {}", map.layer, a.out.display());
    write_manifest(Command::Heatmap(a.clone()), threads, &a.out, vec![])
}

pub fn cmd_selfcheck(a: &SelfcheckArgs, threads: usize) -> anyhow::Result<()> {
    let groups = run_all(&Hooks::default(), a.seed);
    let text: String = groups.iter().map(ToString::to_string).collect();
    print!("{text}");
    if let Some(out) = &a.out {
        std::fs::write(out, &text)?;
        write_manifest(Command::Selfcheck(a.clone()), threads, out, vec![])?;
    }
    if groups.iter().all(|g| g.passed()) {
        Ok(())
    } else {
        Err(SelfcheckFailed.into())
    }
}

/// Largest `|adv - clean|` and the pixel range of `adv`.
pub fn linf_stats(clean: &Tensor<f32>, adv: &Tensor<f32>) -> anyhow::Result<(f64, f32, f32)> {
    let linf = adv.sub(clean)?.max_abs();
    let lo = adv.data().iter().copied().fold(f32::INFINITY, f32::min);
    let hi = adv.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    Ok((linf, lo, hi))
}

pub fn cmd_check_linf(a: &CheckLinfArgs) -> anyhow::Result<()> {
    let (clean, adv, eps) = match (&a.manifest, &a.clean, &a.adv) {
        (Some(m), _, _) => {
            let manifest = RunManifest::read(m)?;
            let cli = <Cli as clap::Parser>::try_parse_from(manifest.argv(None))?;
            let Command::Attack(run) = cli.command else {
                return Err(usage(format!("{} is not an attack manifest", m.display())));
            };
            let model = load_model(&run.surrogate)?;
            let clean = attack_inputs(&run, &model)?.images()?;
            (clean, read_tnsr(&run.out)?, a.eps.unwrap_or(run.flags.eps))
        }
        (None, Some(c), Some(adv)) => {
            let eps = a.eps.ok_or_else(|| usage("--eps is required with --clean"))?;
            (read_tnsr(c)?, read_tnsr(adv)?, eps)
        }
        _ => return Err(usage("check-linf needs --manifest, or --clean, --adv and --eps")),
    };
    let (linf, lo, hi) = linf_stats(&clean, &adv)?;
    println!("max L-inf {linf:.9}  eps {eps:.9}  pixel range [{lo}, {hi}]");
    if linf > eps + LINF_SLACK || lo < 0.0 || hi > 1.0 {
        bail!("perturbation outside the L-inf ball or [0, 1]");
    }
    println!("ok");
    Ok(())
}

pub fn cmd_replay(a: &ReplayArgs, threads: usize) -> anyhow::Result<()> {
    let manifest = RunManifest::read(&a.manifest)?;
    if manifest.subcommand == "replay" {
        return Err(usage("cannot replay a replay"));
    }
    let mut argv = manifest.argv(a.out.as_deref());
    argv.insert(1, format!("--threads={threads}").into());
    let cli = <Cli as clap::Parser>::try_parse_from(argv)?;
    super::execute(&cli)
}
