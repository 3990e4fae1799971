//! Alternating physical/digital training schedule.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameter group active during an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Physical,
    Digital,
}

impl ParamGroup {
    pub fn other(self) -> Self {
        match self {
            Self::Physical => Self::Digital,
            Self::Digital => Self::Physical,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Physical => "physical",
            Self::Digital => "digital",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "one")]
    pub physical_epochs: usize,
    #[serde(default = "five")]
    pub digital_epochs: usize,
    pub total_cycles: usize,
}

fn one() -> usize {
    1
}

fn five() -> usize {
    5
}

impl ScheduleConfig {
    pub fn new(total_cycles: usize) -> Self {
        Self { physical_epochs: 1, digital_epochs: 5, total_cycles }
    }

    pub fn validate(&self) -> Result<()> {
        if self.physical_epochs == 0 || self.digital_epochs == 0 {
            return Err(Error::InvalidParameter("physical and digital epochs must both be >= 1".into()));
        }
        Ok(())
    }

    /// Active group for every epoch in order.
    pub fn plan(&self) -> Vec<(usize, ParamGroup)> {
        let mut out = Vec::new();
        for cycle in 0..self.total_cycles {
            out.extend(std::iter::repeat((cycle, ParamGroup::Physical)).take(self.physical_epochs));
            out.extend(std::iter::repeat((cycle, ParamGroup::Digital)).take(self.digital_epochs));
        }
        out
    }
}

/// What a single epoch reports back to the schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub skipped_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub cycle: usize,
    pub group: ParamGroup,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub skipped_steps: usize,
    pub seconds: f64,
}

/// Model trained by [`run_alternating`].
pub trait AlternatingModel {
    /// Runs one epoch updating only `group`.
    fn run_epoch(&mut self, epoch: usize, group: ParamGroup) -> Result<EpochStats>;

    /// Fingerprint of a parameter group's current values.
    fn checksum(&self, group: ParamGroup) -> u64;
}

/// Runs `[physical × p, digital × d]` for `total_cycles` cycles. Fails if a
/// frozen group changes during an epoch. Wall-clock seconds are recorded
/// only when `timing` is set so that traces stay reproducible.
pub fn run_alternating(
    model: &mut dyn AlternatingModel,
    schedule: &ScheduleConfig,
    timing: bool,
) -> Result<Vec<EpochRecord>> {
    schedule.validate()?;
    let mut trace = Vec::new();
    for (epoch, (cycle, group)) in schedule.plan().into_iter().enumerate() {
        let frozen = group.other();
        let before = model.checksum(frozen);
        let start = Instant::now();
        let stats = model.run_epoch(epoch, group)?;
        let seconds = if timing { start.elapsed().as_secs_f64() } else { 0.0 };
        if model.checksum(frozen) != before {
            return Err(Error::InvalidParameter(format!(
                "{} parameters changed while frozen in epoch {epoch}",
                frozen.as_str()
            )));
        }
        trace.push(EpochRecord {
            epoch,
            cycle,
            group,
            loss: stats.loss,
            train_acc: stats.train_acc,
            test_acc: stats.test_acc,
            skipped_steps: stats.skipped_steps,
            seconds,
        });
    }
    Ok(trace)
}

/// CSV with columns `epoch,group,loss,train_acc,test_acc,seconds`.
pub fn trace_csv(trace: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,group,loss,train_acc,test_acc,seconds\n");
    for r in trace {
        let test = r.test_acc.map(|t| format!("{t:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{},{},{:.9},{:.6},{},{:.3}", r.epoch, r.group.as_str(), r.loss, r.train_acc, test, r.seconds);
    }
    out
}

/// Fraction of consecutive digital epochs within a cycle whose loss went
/// down.
pub fn digital_decrease_fraction(trace: &[EpochRecord]) -> Option<f64> {
    let mut pairs = 0usize;
    let mut down = 0usize;
    for w in trace.windows(2) {
        if w[0].group == ParamGroup::Digital && w[1].group == ParamGroup::Digital && w[0].cycle == w[1].cycle {
            pairs += 1;
            if w[1].loss < w[0].loss {
                down += 1;
            }
        }
    }
    (pairs > 0).then(|| down as f64 / pairs as f64)
}

/// Order-sensitive FNV-1a hash of the bit patterns of a parameter list.
pub fn checksum_f64<'a>(values: impl IntoIterator<Item = &'a f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
