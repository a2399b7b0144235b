//! Sensing MDP: the plant, the lossy channel and the ECU filters advanced one
//! slot per action.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::{sample_receptions, ChannelParams, ReceptionMatrix, TransmissionPlan};
use crate::ddpg::{Actor, Environment, StepCost};
use crate::dkf::{DkfNetwork, EcuBelief, Topology};
use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::{psd_sqrt, row_major, trace};
use crate::linsys::LtiSystem;
use crate::obsbound::ActionBounds;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl CostWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!("cost weights must be nonnegative, got ({alpha}, {beta})")));
        }
        if alpha == 0.0 && beta == 0.0 {
            return Err(Error::InvalidParameter("cost weights are both zero".into()));
        }
        Ok(Self { alpha, beta })
    }
}

/// Posterior covariances of every ECU at slot `slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpState {
    pub beliefs: Vec<EcuBelief>,
    pub slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub total: f64,
    /// `alpha` times the summed traces.
    pub accuracy: f64,
    /// `beta` times the summed powers.
    pub power: f64,
    pub trace_sum: f64,
    pub power_sum: f64,
}

impl From<CostBreakdown> for StepCost {
    fn from(c: CostBreakdown) -> Self {
        StepCost {
            total: c.total,
            accuracy: c.accuracy,
            power: c.power,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub cost: CostBreakdown,
    pub receptions: ReceptionMatrix,
    /// Action entries moved into the interval on this step.
    pub clamped: usize,
}

/// Chooses the plan for the current slot.
pub trait Policy {
    fn plan(&mut self, state: &MdpState) -> Result<TransmissionPlan>;
}

impl Policy for Actor {
    fn plan(&mut self, state: &MdpState) -> Result<TransmissionPlan> {
        let m = state.beliefs.len();
        let n = self.net.output_dim() / m.max(1);
        let a = self.act(&state_features(state))?;
        TransmissionPlan::from_row_major(m, n, a.as_slice())
    }
}

/// Row-major flattening of each ECU's posterior covariance, ECUs ascending.
pub fn state_features(state: &MdpState) -> DVector<f64> {
    let mut v = Vec::new();
    for b in &state.beliefs {
        v.extend(row_major(&b.p_post));
    }
    DVector::from_vec(v)
}

/// Inverse of [`state_features`] for `ecus` blocks of size `d x d`.
pub fn unflatten_features(features: &[f64], ecus: usize, d: usize) -> Result<Vec<DMatrix<f64>>> {
    if features.len() != ecus * d * d {
        return Err(dim_mismatch("feature vector", ecus * d * d, features.len()));
    }
    Ok(features.chunks(d * d).map(|c| DMatrix::from_row_slice(d, d, c)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub k: usize,
    pub cost: f64,
    pub traces: Vec<f64>,
    pub action_min: f64,
    pub action_mean: f64,
    pub action_max: f64,
    pub receptions: usize,
}

impl TrajectoryRow {
    pub fn new(k: usize, cost: f64, state: &MdpState, plan: &TransmissionPlan, receptions: &ReceptionMatrix) -> Self {
        let mu = plan.mu();
        Self {
            k,
            cost,
            traces: state.beliefs.iter().map(|b| trace(&b.p_post)).collect(),
            action_min: mu.min(),
            action_mean: mu.mean(),
            action_max: mu.max(),
            receptions: receptions.count(),
        }
    }
}

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let ecus = rows.first().map_or(0, |r| r.traces.len());
    let mut header = vec!["k".to_string(), "cost".to_string()];
    header.extend((0..ecus).map(|j| format!("trace_{j}")));
    header.extend(["action_min", "action_mean", "action_max", "receptions"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.k.to_string(), r.cost.to_string()];
        rec.extend(r.traces.iter().map(|t| t.to_string()));
        rec.extend([r.action_min, r.action_mean, r.action_max].map(|v| v.to_string()));
        rec.push(r.receptions.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Plant, channel and filters for one trajectory.
///
/// Per step the generator is consumed in a fixed order: receptions
/// (row-major), process noise, then observation noise.
#[derive(Debug, Clone)]
pub struct SensingEnv {
    sys: LtiSystem,
    topo: Topology,
    channel: ChannelParams,
    weights: CostWeights,
    input: Option<DVector<f64>>,
    bounds: Option<ActionBounds>,
    q_sqrt: DMatrix<f64>,
    gamma0_sqrt: DMatrix<f64>,
    filters: DkfNetwork,
    x_true: DVector<f64>,
    slot: usize,
    clamp_count: usize,
}

impl SensingEnv {
    pub fn new(
        sys: LtiSystem,
        topo: Topology,
        channel: ChannelParams,
        weights: CostWeights,
        input: Option<DVector<f64>>,
    ) -> Result<Self> {
        let (m, n, d) = (topo.ecu_count(), sys.sensor_count(), sys.state_dim());
        if channel.ecus() != m || channel.sensors() != n {
            return Err(dim_mismatch(
                "channel",
                format!("{m}x{n}"),
                format!("{}x{}", channel.ecus(), channel.sensors()),
            ));
        }
        if let Some(u) = &input {
            if u.len() != d {
                return Err(dim_mismatch("plant input", d, u.len()));
            }
        }
        Ok(Self {
            q_sqrt: psd_sqrt(sys.process_noise()),
            gamma0_sqrt: psd_sqrt(sys.gamma0()),
            filters: DkfNetwork::new(&sys, m),
            x_true: sys.x0_mean().clone(),
            sys,
            topo,
            channel,
            weights,
            input,
            bounds: None,
            slot: 0,
            clamp_count: 0,
        })
    }

    pub fn with_bounds(mut self, bounds: ActionBounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn set_weights(&mut self, weights: CostWeights) {
        self.weights = weights;
    }

    pub fn system(&self) -> &LtiSystem {
        &self.sys
    }
    pub fn topology(&self) -> &Topology {
        &self.topo
    }
    pub fn channel(&self) -> &ChannelParams {
        &self.channel
    }
    pub fn weights(&self) -> CostWeights {
        self.weights
    }
    pub fn bounds(&self) -> Option<&ActionBounds> {
        self.bounds.as_ref()
    }
    pub fn true_state(&self) -> &DVector<f64> {
        &self.x_true
    }
    /// Total action entries clamped since construction.
    pub fn clamp_count(&self) -> usize {
        self.clamp_count
    }

    pub fn state(&self) -> MdpState {
        MdpState {
            beliefs: self.filters.beliefs().to_vec(),
            slot: self.slot,
        }
    }

    /// Filters back to their prior; the true initial state is drawn around the prior mean.
    pub fn reset(&mut self, rng: &mut SimRng) -> MdpState {
        self.filters = DkfNetwork::new(&self.sys, self.topo.ecu_count());
        let z = gaussian(self.sys.state_dim(), rng);
        self.x_true = self.sys.x0_mean() + &self.gamma0_sqrt * z;
        self.slot = 0;
        self.state()
    }

    /// Cost of `plan` given the posterior beliefs after the slot.
    pub fn cost_of(&self, beliefs: &[EcuBelief], plan: &TransmissionPlan) -> Result<CostBreakdown> {
        let trace_sum: f64 = beliefs.iter().map(|b| trace(&b.p_post)).sum();
        let power_sum = self.channel.total_power(plan)?;
        let accuracy = self.weights.alpha * trace_sum;
        let power = self.weights.beta * power_sum;
        Ok(CostBreakdown {
            total: accuracy + power,
            accuracy,
            power,
            trace_sum,
            power_sum,
        })
    }

    pub fn step(&mut self, action: &TransmissionPlan, rng: &mut SimRng) -> Result<StepOutcome> {
        let (m, n) = (self.topo.ecu_count(), self.sys.sensor_count());
        if action.ecus() != m || action.sensors() != n {
            return Err(dim_mismatch(
                "action",
                format!("{m}x{n}"),
                format!("{}x{}", action.ecus(), action.sensors()),
            ));
        }
        let mut plan = action.clone();
        let clamped = match &self.bounds {
            Some(b) => plan.clamp_to(b),
            None => plan.clamp_to(&ActionBounds::full()),
        };
        self.clamp_count += clamped;

        let receptions = sample_receptions(&plan, rng);
        let w = &self.q_sqrt * gaussian(self.sys.state_dim(), rng);
        let mut x = self.sys.a() * &self.x_true + w;
        if let Some(u) = &self.input {
            x -= u;
        }
        let v = gaussian(n, rng);
        let y = DVector::from_fn(n, |i, _| {
            (self.sys.g().row(i) * &x)[0] + self.sys.observation_noise()[i].sqrt() * v[i]
        });
        self.filters.step(&self.sys, &self.topo, &receptions, &y, self.input.as_ref())?;
        self.x_true = x;
        self.slot += 1;
        let cost = self.cost_of(self.filters.beliefs(), &plan)?;
        Ok(StepOutcome {
            cost,
            receptions,
            clamped,
        })
    }
}

fn gaussian(len: usize, rng: &mut SimRng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

impl Environment for SensingEnv {
    fn state_dim(&self) -> usize {
        let d = self.sys.state_dim();
        self.topo.ecu_count() * d * d
    }

    fn action_dim(&self) -> usize {
        self.topo.ecu_count() * self.sys.sensor_count()
    }

    fn reset_features(&mut self, rng: &mut SimRng) -> Result<DVector<f64>> {
        Ok(state_features(&self.reset(rng)))
    }

    fn step_features(&mut self, action: &[f64], rng: &mut SimRng) -> Result<(DVector<f64>, StepCost)> {
        let plan = TransmissionPlan::from_row_major(self.topo.ecu_count(), self.sys.sensor_count(), action)?;
        let out = self.step(&plan, rng)?;
        Ok((state_features(&self.state()), out.cost.into()))
    }
}
