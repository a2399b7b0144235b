//! Fixed comparison policies over the compressed action interval.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::channel::TransmissionPlan;
use crate::env::{MdpState, Policy};
use crate::error::{Error, Result};
use crate::obsbound::ActionBounds;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Oidm,
    Spm,
    Rsm,
    Psm,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [PolicyKind::Oidm, PolicyKind::Spm, PolicyKind::Rsm, PolicyKind::Psm];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Oidm => "oidm",
            PolicyKind::Spm => "spm",
            PolicyKind::Rsm => "rsm",
            PolicyKind::Psm => "psm",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown policy `{s}`")))
    }
}

/// Every entry at the interval maximum.
#[derive(Debug, Clone)]
pub struct Spm {
    pub bounds: ActionBounds,
    pub ecus: usize,
    pub sensors: usize,
}

/// Independent uniform draws on the interval, from the policy's own stream.
#[derive(Debug, Clone)]
pub struct Rsm {
    pub bounds: ActionBounds,
    pub ecus: usize,
    pub sensors: usize,
    rng: SimRng,
}

/// Maximum and minimum on alternating slots.
#[derive(Debug, Clone)]
pub struct Psm {
    pub bounds: ActionBounds,
    pub ecus: usize,
    pub sensors: usize,
    /// Whether slot 0 uses the maximum.
    pub start_high: bool,
}

/// The same rate on every link.
#[derive(Debug, Clone)]
pub struct ConstantPolicy {
    pub mu: f64,
    pub ecus: usize,
    pub sensors: usize,
}

impl Spm {
    pub fn new(bounds: ActionBounds, ecus: usize, sensors: usize) -> Self {
        Self { bounds, ecus, sensors }
    }
}

impl Rsm {
    pub fn new(bounds: ActionBounds, ecus: usize, sensors: usize, rng: SimRng) -> Self {
        Self {
            bounds,
            ecus,
            sensors,
            rng,
        }
    }
}

impl Psm {
    pub fn new(bounds: ActionBounds, ecus: usize, sensors: usize, start_high: bool) -> Self {
        Self {
            bounds,
            ecus,
            sensors,
            start_high,
        }
    }

    pub fn action_at(&self, slot: usize) -> Result<TransmissionPlan> {
        let high = (slot % 2 == 0) == self.start_high;
        let mu = if high { self.bounds.mu_hi } else { self.bounds.mu_lo };
        TransmissionPlan::uniform(self.ecus, self.sensors, mu)
    }
}

impl Policy for Spm {
    fn plan(&mut self, _: &MdpState) -> Result<TransmissionPlan> {
        TransmissionPlan::uniform(self.ecus, self.sensors, self.bounds.mu_hi)
    }
}

impl Policy for Rsm {
    fn plan(&mut self, _: &MdpState) -> Result<TransmissionPlan> {
        let (lo, hi) = (self.bounds.mu_lo, self.bounds.mu_hi);
        let vals: Vec<f64> = (0..self.ecus * self.sensors)
            .map(|_| lo + (hi - lo) * self.rng.random::<f64>())
            .collect();
        TransmissionPlan::from_row_major(self.ecus, self.sensors, &vals)
    }
}

impl Policy for Psm {
    fn plan(&mut self, state: &MdpState) -> Result<TransmissionPlan> {
        self.action_at(state.slot)
    }
}

impl Policy for ConstantPolicy {
    fn plan(&mut self, _: &MdpState) -> Result<TransmissionPlan> {
        TransmissionPlan::uniform(self.ecus, self.sensors, self.mu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelParams;
    use crate::rng::stream;

    fn state(slot: usize) -> MdpState {
        MdpState { beliefs: vec![], slot }
    }

    fn b() -> ActionBounds {
        ActionBounds::new(0.2, 0.8, 0.95, 10).unwrap()
    }

    #[test]
    fn spm_is_maximum() {
        let p = Spm::new(b(), 2, 3).plan(&state(7)).unwrap();
        assert!(p.mu().iter().all(|v| *v == 0.8));
    }

    #[test]
    fn psm_alternates_with_period_two() {
        let mut p = Psm::new(b(), 2, 3, true);
        let seq: Vec<f64> = (0..6).map(|k| p.plan(&state(k)).unwrap().get(0, 0)).collect();
        assert_eq!(seq, vec![0.8, 0.2, 0.8, 0.2, 0.8, 0.2]);
        let low_first = Psm::new(b(), 2, 3, false);
        assert_eq!(low_first.action_at(0).unwrap().get(1, 2), 0.2);
    }

    #[test]
    fn rsm_mean_and_range() {
        let mut p = Rsm::new(b(), 2, 2, stream(11, 0));
        let slots = 100_000;
        let mut sums = [0.0; 4];
        for k in 0..slots {
            let plan = p.plan(&state(k)).unwrap();
            for (s, v) in sums.iter_mut().zip(plan.to_row_major()) {
                assert!((0.2..=0.8).contains(&v));
                *s += v;
            }
        }
        let sd = 0.6 / 12f64.sqrt() / (slots as f64).sqrt();
        for s in sums {
            assert!((s / slots as f64 - 0.5).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn expected_power_ordering() {
        let ch = ChannelParams::per_ecu(&[0.3, 0.4], 3).unwrap();
        let bounds = b();
        let spm = ch.total_power(&Spm::new(bounds, 2, 3).plan(&state(0)).unwrap()).unwrap();
        let psm_policy = Psm::new(bounds, 2, 3, true);
        let psm = 0.5
            * (ch.total_power(&psm_policy.action_at(0).unwrap()).unwrap()
                + ch.total_power(&psm_policy.action_at(1).unwrap()).unwrap());
        let low = ch.total_power(&TransmissionPlan::uniform(2, 3, bounds.mu_lo).unwrap()).unwrap();
        assert!(spm >= psm && psm >= low);
    }

    #[test]
    fn policy_names_parse() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("greedy".parse::<PolicyKind>().is_err());
    }
}
