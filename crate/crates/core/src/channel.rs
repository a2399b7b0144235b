//! Lossy sensor-to-ECU links: power/success-rate conversion and Bernoulli
//! reception sampling.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{dim_mismatch, Error, Result};
use crate::obsbound::ActionBounds;

/// Channel constant used for sensor-ECU pairs without a link.
pub const UNLINKED_KAPPA: f64 = 1.0 - 1e-9;

/// Power needed for success rate `mu` over a link with constant `kappa`,
/// from `mu = 1 - kappa^E`.
pub fn success_rate_to_power(mu: f64, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::InvalidProbability(mu));
    }
    if mu == 1.0 {
        return Err(Error::InfinitePower);
    }
    if mu == 0.0 {
        return Ok(0.0);
    }
    Ok((-mu).ln_1p() / kappa.ln())
}

pub fn power_to_success_rate(power: f64, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    if !(power >= 0.0) {
        return Err(Error::NegativePower(power));
    }
    Ok(-(power * kappa.ln()).exp_m1())
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidKappa(kappa))
    }
}

/// Per ECU-sensor channel constants, rows indexed by ECU.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    kappa: DMatrix<f64>,
}

impl ChannelParams {
    pub fn new(kappa: DMatrix<f64>) -> Result<Self> {
        for &k in kappa.iter() {
            check_kappa(k)?;
        }
        Ok(Self { kappa })
    }

    /// Same constant on every link of an ECU.
    pub fn per_ecu(kappas: &[f64], sensors: usize) -> Result<Self> {
        Self::new(DMatrix::from_fn(kappas.len(), sensors, |i, _| kappas[i]))
    }

    /// `kappa = exp(-eps / (noise_density * bandwidth))` on every link.
    pub fn from_physical(
        eps: f64,
        noise_density: f64,
        bandwidth: f64,
        ecus: usize,
        sensors: usize,
    ) -> Result<Self> {
        if !(eps > 0.0 && noise_density > 0.0 && bandwidth > 0.0) {
            return Err(Error::InvalidParameter(
                "channel constant, noise density and bandwidth must be positive".into(),
            ));
        }
        let k = (-eps / (noise_density * bandwidth)).exp();
        Self::new(DMatrix::from_element(ecus, sensors, k))
    }

    pub fn unlink(&mut self, ecu: usize, sensor: usize) {
        self.kappa[(ecu, sensor)] = UNLINKED_KAPPA;
    }

    pub fn set(&mut self, ecu: usize, sensor: usize, kappa: f64) -> Result<()> {
        check_kappa(kappa)?;
        self.kappa[(ecu, sensor)] = kappa;
        Ok(())
    }

    pub fn kappa(&self) -> &DMatrix<f64> {
        &self.kappa
    }
    pub fn ecus(&self) -> usize {
        self.kappa.nrows()
    }
    pub fn sensors(&self) -> usize {
        self.kappa.ncols()
    }

    /// Transmission power of every link under `plan`.
    pub fn powers(&self, plan: &TransmissionPlan) -> Result<DMatrix<f64>> {
        if plan.mu.shape() != self.kappa.shape() {
            return Err(dim_mismatch(
                "transmission plan",
                format!("{:?}", self.kappa.shape()),
                format!("{:?}", plan.mu.shape()),
            ));
        }
        let mut out = DMatrix::zeros(self.ecus(), self.sensors());
        for i in 0..self.ecus() {
            for j in 0..self.sensors() {
                out[(i, j)] = success_rate_to_power(plan.mu[(i, j)], self.kappa[(i, j)])?;
            }
        }
        Ok(out)
    }

    pub fn total_power(&self, plan: &TransmissionPlan) -> Result<f64> {
        Ok(self.powers(plan)?.sum())
    }
}

/// Success rates for one slot, rows indexed by ECU.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionPlan {
    mu: DMatrix<f64>,
}

impl TransmissionPlan {
    pub fn new(mu: DMatrix<f64>) -> Result<Self> {
        if let Some(&bad) = mu.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidProbability(bad));
        }
        Ok(Self { mu })
    }

    pub fn uniform(ecus: usize, sensors: usize, mu: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(ecus, sensors, mu))
    }

    /// Plan from a flat vector in row-major (ECU, sensor) order.
    pub fn from_row_major(ecus: usize, sensors: usize, values: &[f64]) -> Result<Self> {
        if values.len() != ecus * sensors {
            return Err(dim_mismatch("flat action", ecus * sensors, values.len()));
        }
        Self::new(DMatrix::from_row_slice(ecus, sensors, values))
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        crate::linalg::row_major(&self.mu)
    }

    pub fn mu(&self) -> &DMatrix<f64> {
        &self.mu
    }
    pub fn get(&self, ecu: usize, sensor: usize) -> f64 {
        self.mu[(ecu, sensor)]
    }
    pub fn ecus(&self) -> usize {
        self.mu.nrows()
    }
    pub fn sensors(&self) -> usize {
        self.mu.ncols()
    }

    pub fn within(&self, bounds: &ActionBounds) -> bool {
        self.mu
            .iter()
            .all(|&v| v >= bounds.mu_lo && v <= bounds.mu_hi)
    }

    /// Clamp into `bounds`, returning the number of entries that moved.
    pub fn clamp_to(&mut self, bounds: &ActionBounds) -> usize {
        let mut moved = 0;
        for v in self.mu.iter_mut() {
            let c = v.clamp(bounds.mu_lo, bounds.mu_hi);
            if c != *v {
                moved += 1;
                *v = c;
            }
        }
        moved
    }
}

/// Realized receptions of one slot, rows indexed by ECU.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReceptionMatrix {
    ecus: usize,
    sensors: usize,
    bits: Vec<bool>,
}

impl ReceptionMatrix {
    pub fn new(ecus: usize, sensors: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != ecus * sensors {
            return Err(dim_mismatch("reception bits", ecus * sensors, bits.len()));
        }
        Ok(Self {
            ecus,
            sensors,
            bits,
        })
    }

    pub fn filled(ecus: usize, sensors: usize, value: bool) -> Self {
        Self {
            ecus,
            sensors,
            bits: vec![value; ecus * sensors],
        }
    }

    /// Pattern whose bit `i * sensors + j` is bit `(i, j)` of `mask`.
    pub fn from_mask(ecus: usize, sensors: usize, mask: u64) -> Self {
        let bits = (0..ecus * sensors).map(|b| mask >> b & 1 == 1).collect();
        Self {
            ecus,
            sensors,
            bits,
        }
    }

    pub fn get(&self, ecu: usize, sensor: usize) -> bool {
        self.bits[ecu * self.sensors + sensor]
    }

    pub fn set(&mut self, ecu: usize, sensor: usize, value: bool) {
        self.bits[ecu * self.sensors + sensor] = value;
    }

    pub fn ecus(&self) -> usize {
        self.ecus
    }
    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn row(&self, ecu: usize) -> &[bool] {
        &self.bits[ecu * self.sensors..(ecu + 1) * self.sensors]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Receptions of `ecu` as a string of `0`/`1`, sensor 0 first.
    pub fn row_bits(&self, ecu: usize) -> String {
        self.row(ecu).iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    /// Entrywise `self <= other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }
}

/// Independent Bernoulli draws, consumed in row-major (ECU, sensor) order.
pub fn sample_receptions<R: Rng + ?Sized>(plan: &TransmissionPlan, rng: &mut R) -> ReceptionMatrix {
    let (m, n) = (plan.ecus(), plan.sensors());
    let mut bits = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            let u: f64 = rng.random();
            bits.push(u < plan.mu[(i, j)]);
        }
    }
    ReceptionMatrix {
        ecus: m,
        sensors: n,
        bits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conversion_examples() {
        assert_eq!(success_rate_to_power(0.0, 0.3).unwrap(), 0.0);
        assert!((success_rate_to_power(0.7, 0.3).unwrap() - 1.0).abs() <= 2.0 * f64::EPSILON);
        assert!((success_rate_to_power(0.91, 0.3).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(power_to_success_rate(0.0, 0.3).unwrap(), 0.0);
        assert!((power_to_success_rate(1.0, 0.3).unwrap() - 0.7).abs() < 1e-15);
        assert!((power_to_success_rate(2.0, 0.4).unwrap() - 0.84).abs() < 1e-15);
    }

    #[test]
    fn conversion_errors() {
        assert!(matches!(success_rate_to_power(1.0, 0.3), Err(Error::InfinitePower)));
        assert!(matches!(power_to_success_rate(-1.0, 0.3), Err(Error::NegativePower(_))));
        assert!(matches!(success_rate_to_power(0.5, 1.0), Err(Error::InvalidKappa(_))));
        assert!(matches!(success_rate_to_power(1.5, 0.3), Err(Error::InvalidProbability(_))));
    }

    #[test]
    fn round_trip_grid() {
        for ki in 1..=9 {
            let kappa = ki as f64 / 10.0;
            for mi in 0..10 {
                let mu = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.99][mi];
                let e = success_rate_to_power(mu, kappa).unwrap();
                assert!((power_to_success_rate(e, kappa).unwrap() - mu).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unlinked_pairs_need_huge_power() {
        let e = success_rate_to_power(0.1, UNLINKED_KAPPA).unwrap();
        assert!(e > 1e7);
    }

    #[test]
    fn deterministic_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all = sample_receptions(&TransmissionPlan::uniform(2, 3, 1.0).unwrap(), &mut rng);
        assert_eq!(all.count(), 6);
        let none = sample_receptions(&TransmissionPlan::uniform(2, 3, 0.0).unwrap(), &mut rng);
        assert_eq!(none.count(), 0);
    }

    #[test]
    fn same_seed_same_draws() {
        let plan = TransmissionPlan::uniform(2, 10, 0.5).unwrap();
        let a = sample_receptions(&plan, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_receptions(&plan, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_rate_and_independence() {
        let plan = TransmissionPlan::uniform(1, 2, 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 100_000;
        let (mut s0, mut s1, mut s01) = (0.0, 0.0, 0.0);
        for _ in 0..draws {
            let r = sample_receptions(&plan, &mut rng);
            let (a, b) = (r.get(0, 0) as u8 as f64, r.get(0, 1) as u8 as f64);
            s0 += a;
            s1 += b;
            s01 += a * b;
        }
        let n = draws as f64;
        let (m0, m1) = (s0 / n, s1 / n);
        assert!((m0 - 0.7).abs() < 3.0 * (0.21f64 / n).sqrt());
        let cov = s01 / n - m0 * m1;
        let corr = cov / (m0 * (1.0 - m0) * m1 * (1.0 - m1)).sqrt();
        assert!(corr.abs() < 3.0 / n.sqrt());
    }

    #[test]
    fn clamping_counts_moves() {
        let mut plan = TransmissionPlan::from_row_major(1, 3, &[0.1, 0.5, 0.9]).unwrap();
        let b = ActionBounds::new(0.2, 0.8, 0.95, 10).unwrap();
        assert!(!plan.within(&b));
        assert_eq!(plan.clamp_to(&b), 2);
        assert!(plan.within(&b));
        assert_eq!(plan.to_row_major(), vec![0.2, 0.5, 0.8]);
    }

    #[test]
    fn power_matrix_with_kappa_complement() {
        let ch = ChannelParams::per_ecu(&[0.3, 0.4], 3).unwrap();
        let plan = TransmissionPlan::new(DMatrix::from_fn(2, 3, |i, _| if i == 0 { 0.7 } else { 0.6 })).unwrap();
        let total = ch.total_power(&plan).unwrap();
        assert!((total - 6.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn power_is_increasing_in_rate(kappa in 0.01f64..0.99, a in 0.0f64..0.98, delta in 1e-6f64..0.01) {
            let e1 = success_rate_to_power(a, kappa).unwrap();
            let e2 = success_rate_to_power(a + delta, kappa).unwrap();
            prop_assert!(e2 > e1);
        }

        #[test]
        fn rate_is_increasing_in_power(kappa in 0.01f64..0.99, e in 0.0f64..3.0, delta in 1e-4f64..1.0) {
            let m1 = power_to_success_rate(e, kappa).unwrap();
            let m2 = power_to_success_rate(e + delta, kappa).unwrap();
            prop_assert!(m2 > m1);
        }

        #[test]
        fn round_trip_holds(kappa in 0.01f64..0.99, mu in 0.0f64..0.999) {
            let e = success_rate_to_power(mu, kappa).unwrap();
            prop_assert!(e >= 0.0);
            prop_assert!((power_to_success_rate(e, kappa).unwrap() - mu).abs() < 1e-12);
        }
    }
}
