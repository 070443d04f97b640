use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use crate::error::Result;

/// Success rates of one attack crafted on one surrogate, per target.
#[derive(Debug, Clone, PartialEq)]
pub struct AsrReport {
    pub attack: String,
    pub surrogate: String,
    pub targets: Vec<String>,
    /// Percent, aligned with `targets`.
    pub asr: Vec<f64>,
    /// Position of the white-box entry in `targets`, if present.
    pub surrogate_index: Option<usize>,
    /// Over all targets, white-box entry included.
    pub mean: f64,
    /// Population standard deviation over the same values.
    pub std_dev: f64,
    pub samples: usize,
    pub config: BTreeMap<String, String>,
}

impl AsrReport {
    /// Mean over the targets other than the surrogate.
    pub fn black_box_mean(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .asr
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != self.surrogate_index)
            .map(|(_, v)| *v)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn white_box(&self) -> Option<f64> {
        self.surrogate_index.map(|i| self.asr[i])
    }
}

/// `attack,surrogate,target,asr,is_surrogate` rows, each report followed by
/// its MEAN and STD rows.
pub fn write_csv(out: &mut impl Write, reports: &[AsrReport]) -> Result<()> {
    writeln!(out, "attack,surrogate,target,asr,is_surrogate")?;
    for r in reports {
        for (i, (t, a)) in r.targets.iter().zip(&r.asr).enumerate() {
            writeln!(out, "{},{},{},{:.2},{}", r.attack, r.surrogate, t, a, Some(i) == r.surrogate_index)?;
        }
        writeln!(out, "{},{},MEAN,{:.2},", r.attack, r.surrogate, r.mean)?;
        writeln!(out, "{},{},STD,{:.2},", r.attack, r.surrogate, r.std_dev)?;
    }
    Ok(())
}

/// Aligned text table, one row per report; the white-box column is starred.
pub fn format_table(reports: &[AsrReport]) -> String {
    let mut out = String::new();
    let Some(first) = reports.first() else { return out };
    let width = reports.iter().map(|r| r.attack.len()).max().unwrap_or(6).max(6);
    let _ = write!(out, "{:<width$}  {:<10}", "attack", "surrogate");
    for t in &first.targets {
        let _ = write!(out, "  {:>9}", truncate(t, 9));
    }
    let _ = writeln!(out, "  {:>6}  {:>6}  {:>5}", "mean", "std", "n");
    for r in reports {
        let _ = write!(out, "{:<width$}  {:<10}", r.attack, truncate(&r.surrogate, 10));
        for (i, a) in r.asr.iter().enumerate() {
            let cell = if Some(i) == r.surrogate_index { format!("{a:.1}*") } else { format!("{a:.1}") };
            let _ = write!(out, "  {cell:>9}");
        }
        let _ = writeln!(out, "  {:>6.1}  {:>6.1}  {:>5}", r.mean, r.std_dev, r.samples);
    }
    out
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
