use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};
use crate::transforms::{
    bsr_forward, bsr_sample, bsr_vjp, cwt_forward, cwt_vjp, dim_forward, dim_sample, dim_vjp, sample_copy,
    sim_forward, sim_vjp, BsrParams, BsrTrace, CwtParams, CwtTrace, DimParams, DimTrace,
};

/// Input transformation applied to each gradient copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Plugin {
    Identity,
    Cwt(CwtParams),
    Dim(DimParams),
    /// Copy `i` sees `x / 2^(i mod scales)`.
    Sim { scales: usize },
    Bsr(BsrParams),
}

/// Randomness drawn for one copy; replayed by forward and vjp.
#[derive(Debug, Clone, PartialEq)]
pub enum Trace {
    Identity,
    Cwt(CwtTrace),
    Dim(DimTrace),
    Sim(usize),
    Bsr(BsrTrace),
}

impl Plugin {
    pub const NAMES: [&'static str; 5] = ["mifgsm", "cwt", "dim", "sim", "bsr"];

    /// Plugin with its default parameters. `mifgsm` and `identity` both name
    /// the untransformed attack.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "mifgsm" | "identity" => Plugin::Identity,
            "cwt" => Plugin::Cwt(CwtParams::default()),
            "dim" => Plugin::Dim(DimParams::default()),
            "sim" => Plugin::Sim { scales: 5 },
            "bsr" => Plugin::Bsr(BsrParams::default()),
            other => {
                return Err(Error::invalid(format!(
                    "unknown attack '{other}', expected one of {:?}",
                    Self::NAMES
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Plugin::Identity => "mifgsm",
            Plugin::Cwt(_) => "cwt",
            Plugin::Dim(_) => "dim",
            Plugin::Sim { .. } => "sim",
            Plugin::Bsr(_) => "bsr",
        }
    }

    /// Copies per gradient evaluation used when none is given.
    pub fn default_copies(&self) -> usize {
        match self {
            Plugin::Identity | Plugin::Dim(_) => 1,
            Plugin::Cwt(p) => p.copies,
            Plugin::Sim { scales } => *scales,
            Plugin::Bsr(_) => 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Plugin::Cwt(p) => p.validate(),
            Plugin::Sim { scales: 0 } => Err(Error::invalid("SIM needs at least one scale")),
            _ => Ok(()),
        }
    }

    /// Draws the trace for copy `copy` of an `H x W` image.
    pub fn sample(&self, dims: (usize, usize), copy: usize, rng: &mut Rng) -> Result<Trace> {
        Ok(match self {
            Plugin::Identity => Trace::Identity,
            Plugin::Cwt(p) => Trace::Cwt(sample_copy(p, dims, rng)?),
            Plugin::Dim(p) => Trace::Dim(dim_sample(p, dims, rng)?),
            Plugin::Sim { scales } => Trace::Sim(copy % (*scales).max(1)),
            Plugin::Bsr(p) => Trace::Bsr(bsr_sample(p, dims, rng)?),
        })
    }

    pub fn forward<T: Scalar>(&self, image: &Tensor<T>, trace: &Trace) -> Result<Tensor<T>> {
        match (self, trace) {
            (Plugin::Identity, Trace::Identity) => Ok(image.clone()),
            (Plugin::Cwt(p), Trace::Cwt(t)) => cwt_forward(image, t, p),
            (Plugin::Dim(p), Trace::Dim(t)) => dim_forward(image, t, p.kernel),
            (Plugin::Sim { .. }, Trace::Sim(e)) => Ok(sim_forward(image, *e)),
            (Plugin::Bsr(p), Trace::Bsr(t)) => bsr_forward(image, t, p.kernel),
            _ => Err(mismatch(self)),
        }
    }

    pub fn vjp<T: Scalar>(&self, upstream: &Tensor<T>, trace: &Trace) -> Result<Tensor<T>> {
        match (self, trace) {
            (Plugin::Identity, Trace::Identity) => Ok(upstream.clone()),
            (Plugin::Cwt(p), Trace::Cwt(t)) => cwt_vjp(upstream, t, p),
            (Plugin::Dim(p), Trace::Dim(t)) => dim_vjp(upstream, t, p.kernel),
            (Plugin::Sim { .. }, Trace::Sim(e)) => Ok(sim_vjp(upstream, *e)),
            (Plugin::Bsr(p), Trace::Bsr(t)) => bsr_vjp(upstream, t, p.kernel),
            _ => Err(mismatch(self)),
        }
    }
}

fn mismatch(p: &Plugin) -> Error {
    Error::invalid(format!("trace was not sampled by the {} plugin", p.name()))
}

impl fmt::Display for Plugin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
