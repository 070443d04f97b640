use std::fmt;
use std::str::FromStr;

use crate::attack::{attack_batch, AttackConfig, Plugin};
use crate::data::{filter_correct, Dataset};
use crate::error::{Error, Result};
use crate::eval::{score, snapshot, AsrReport, Named};
use crate::nn::Model;
use crate::transforms::CwtParams;

/// CWT hyperparameter varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Blocks,
    Smax,
    RotMax,
    RotK,
    Copies,
    PreInterp,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "blocks" => SweepParam::Blocks,
            "smax" => SweepParam::Smax,
            "rot-max" => SweepParam::RotMax,
            "rot-k" => SweepParam::RotK,
            "copies" => SweepParam::Copies,
            "pre-interp" => SweepParam::PreInterp,
            other => return Err(Error::invalid(format!("unknown sweep parameter '{other}'"))),
        })
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Blocks => "blocks",
            SweepParam::Smax => "smax",
            SweepParam::RotMax => "rot-max",
            SweepParam::RotK => "rot-k",
            SweepParam::Copies => "copies",
            SweepParam::PreInterp => "pre-interp",
        })
    }
}

fn parse<V: FromStr>(param: SweepParam, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value '{value}' for {param}")))
}

impl SweepParam {
    /// Applies one value to a copy of the base settings.
    pub fn apply(&self, value: &str, base: &CwtParams, config: &AttackConfig) -> Result<(CwtParams, AttackConfig)> {
        let (mut p, mut c) = (base.clone(), config.clone());
        match self {
            SweepParam::Blocks => {
                p.blocks = parse(*self, value)?;
                p.rotated_blocks = p.rotated_blocks.min(p.blocks * p.blocks);
            }
            SweepParam::Smax => p.scale_max = parse(*self, value)?,
            SweepParam::RotMax => p.max_angle_deg = parse(*self, value)?,
            SweepParam::RotK => p.rotated_blocks = parse(*self, value)?,
            SweepParam::Copies => {
                c.num_copies = parse(*self, value)?;
                p.copies = c.num_copies;
            }
            SweepParam::PreInterp => {
                p.pre_interpolation = match value {
                    "on" | "true" | "1" => true,
                    "off" | "false" | "0" => false,
                    _ => return Err(Error::invalid(format!("bad value '{value}' for {self}, expected on/off"))),
                }
            }
        }
        p.validate()?;
        c.validate()?;
        Ok((p, c))
    }
}

/// One CWT report per value, every other setting held at `base`/`config`.
/// All values are validated before any attack runs.
pub fn sweep(
    param: SweepParam,
    values: &[String],
    base: &CwtParams,
    config: &AttackConfig,
    surrogate: Named<'_>,
    targets: &[Named<'_>],
    data: &Dataset,
    threads: usize,
) -> Result<Vec<AsrReport>> {
    if values.is_empty() {
        return Err(Error::Empty("sweep values".into()));
    }
    let settings = values
        .iter()
        .map(|v| param.apply(v, base, config))
        .collect::<Result<Vec<_>>>()?;
    let mut models: Vec<&Model<f32>> = vec![surrogate.model];
    models.extend(targets.iter().map(|t| t.model));
    let clean = filter_correct(data, &models)?;
    let mut out = Vec::new();
    for (value, (p, c)) in values.iter().zip(settings) {
        let plugin = Plugin::Cwt(p);
        let adv = attack_batch(surrogate.model, &clean.images()?, clean.labels(), &c, &plugin, threads, None)?;
        let mut snap = snapshot(&c, &plugin);
        snap.insert("sweep".into(), format!("{param}={value}"));
        out.push(score(surrogate, targets, &adv, clean.labels(), &format!("cwt[{param}={value}]"), snap)?);
    }
    Ok(out)
}
