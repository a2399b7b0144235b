//! Finite-difference slab temperature model of one hot-rolling section.
//!
//! State layout: `tau_s` length lattices, each holding `nu` thickness nodes
//! from top surface to bottom surface.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::LtiSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HotRollParams {
    /// Specific heat, J/(kg K).
    pub c: f64,
    /// Density, kg/m^3.
    pub rho: f64,
    /// Thermal conductivity, W/(m K).
    pub lambda: f64,
    pub eps_rad: f64,
    /// Stefan-Boltzmann constant, W/(m^2 K^4).
    pub sigma0: f64,
    /// Ambient temperature, K.
    pub x_inf: f64,
    /// Initial slab temperature, K.
    pub x_init: f64,
    pub tau_s: usize,
    pub nu: usize,
    /// Thickness step, m.
    pub db: f64,
    /// Length step, m.
    pub dl: f64,
    /// Conveyor speed, m/s.
    pub speed: f64,
    /// Time step, s.
    pub dt: f64,
    pub t_slots: usize,
    pub sensors: usize,
    /// Process noise variance per node.
    pub process_noise: f64,
    /// Observation noise variance per sensor.
    pub observation_noise: f64,
    /// Initial covariance scale.
    pub gamma0: f64,
}

impl Default for HotRollParams {
    fn default() -> Self {
        Self {
            c: 460.0,
            rho: 7.9e3,
            lambda: 40.0,
            eps_rad: 0.85,
            sigma0: 5.67e-8,
            x_inf: 325.0,
            x_init: 1180.0,
            tau_s: 10,
            nu: 3,
            db: 0.01,
            dl: 5.0,
            speed: 5.0,
            dt: 0.2,
            t_slots: 1000,
            sensors: 10,
            process_noise: 0.1,
            observation_noise: 0.01,
            gamma0: 1.0,
        }
    }
}

impl HotRollParams {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("c", self.c),
            ("rho", self.rho),
            ("lambda", self.lambda),
            ("eps_rad", self.eps_rad),
            ("sigma0", self.sigma0),
            ("x_inf", self.x_inf),
            ("x_init", self.x_init),
            ("db", self.db),
            ("dl", self.dl),
            ("speed", self.speed),
            ("dt", self.dt),
            ("process_noise", self.process_noise),
            ("observation_noise", self.observation_noise),
            ("gamma0", self.gamma0),
        ];
        for (name, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("hotroll.{name} must be positive, got {v}")));
            }
        }
        if self.tau_s == 0 || self.t_slots == 0 || self.sensors == 0 {
            return Err(Error::InvalidParameter("hotroll lattice and slot counts must be positive".into()));
        }
        if self.nu < 2 {
            return Err(Error::InvalidParameter(format!("hotroll.nu must be at least 2, got {}", self.nu)));
        }
        if self.sensors > self.tau_s {
            return Err(Error::InvalidParameter(format!(
                "{} sensors but only {} length lattices",
                self.sensors, self.tau_s
            )));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.tau_s * self.nu
    }
}

/// Conduction stencil along the thickness with insulated-style end rows.
pub fn build_q(nu: usize) -> Result<DMatrix<f64>> {
    if nu < 2 {
        return Err(Error::InvalidParameter(format!("stencil needs at least 2 nodes, got {nu}")));
    }
    let mut q = DMatrix::zeros(nu, nu);
    q[(0, 0)] = -2.0;
    q[(0, 1)] = 2.0;
    q[(nu - 1, nu - 1)] = -2.0;
    q[(nu - 1, nu - 2)] = 2.0;
    for i in 1..nu - 1 {
        q[(i, i - 1)] = 1.0;
        q[(i, i)] = -2.0;
        q[(i, i + 1)] = 1.0;
    }
    Ok(q)
}

/// Transport along the conveyor: `omega I` on the block diagonal and
/// `-omega I` on the first block subdiagonal.
pub fn build_lambda(tau_s: usize, nu: usize, omega: f64) -> DMatrix<f64> {
    let d = tau_s * nu;
    let mut l = DMatrix::zeros(d, d);
    for i in 0..d {
        l[(i, i)] = omega;
        if i >= nu {
            l[(i, i - nu)] = -omega;
        }
    }
    l
}

/// `(alpha_c, beta_c, omega)` for uniform material properties.
pub fn coefficients(p: &HotRollParams) -> (f64, f64, f64) {
    let alpha = p.dt * p.lambda / (p.db * p.db * p.rho * p.c);
    let beta = 2.0 * p.dt * p.sigma0 * p.eps_rad / (p.db * p.rho * p.c);
    let omega = p.speed / (2.0 * p.dl);
    (alpha, beta, omega)
}

pub fn transition_matrix(p: &HotRollParams) -> Result<DMatrix<f64>> {
    let (alpha, _, omega) = coefficients(p);
    let q = build_q(p.nu)? * alpha;
    let mut f = build_lambda(p.tau_s, p.nu, omega);
    for j in 0..p.tau_s {
        let mut block = f.view_mut((j * p.nu, j * p.nu), (p.nu, p.nu));
        block += &q;
    }
    Ok(f)
}

/// Radiative loss per slot, nonzero on the top and bottom node of every lattice.
pub fn radiation_input(p: &HotRollParams) -> DVector<f64> {
    let (_, beta, _) = coefficients(p);
    let loss = beta * (p.x_init.powi(4) - p.x_inf.powi(4));
    let mut u = DVector::zeros(p.state_dim());
    for j in 0..p.tau_s {
        u[j * p.nu] = loss;
        u[j * p.nu + p.nu - 1] = loss;
    }
    u
}

/// Sensor `i` reads the top node of length lattice `i`.
pub fn observation_matrix(p: &HotRollParams) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(p.sensors, p.state_dim());
    for i in 0..p.sensors {
        g[(i, i * p.nu)] = 1.0;
    }
    g
}

#[derive(Debug, Clone)]
pub struct HotRollPlant {
    pub system: LtiSystem,
    /// Subtracted from `F x` every slot.
    pub input: DVector<f64>,
}

pub fn build_system(p: &HotRollParams) -> Result<HotRollPlant> {
    p.validate()?;
    let d = p.state_dim();
    let system = LtiSystem::new(
        transition_matrix(p)?,
        observation_matrix(p),
        DMatrix::identity(d, d) * p.process_noise,
        vec![p.observation_noise; p.sensors],
        DVector::from_element(d, p.x_init),
        DMatrix::identity(d, d) * p.gamma0,
    )?;
    Ok(HotRollPlant {
        system,
        input: radiation_input(p),
    })
}

/// Spatial mean of the noiseless recursion from the uniform initial temperature,
/// `steps + 1` values including the start.
pub fn noiseless_mean_trajectory(plant: &HotRollPlant, steps: usize) -> Vec<f64> {
    let mut x = plant.system.x0_mean().clone();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x.mean());
    for _ in 0..steps {
        x = plant.system.a() * &x - &plant.input;
        out.push(x.mean());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::condition_number;

    #[test]
    fn stencil_examples() {
        let q3 = build_q(3).unwrap();
        assert_eq!(q3, DMatrix::from_row_slice(3, 3, &[-2.0, 2.0, 0.0, 1.0, -2.0, 1.0, 0.0, 2.0, -2.0]));
        assert_eq!(build_q(2).unwrap(), DMatrix::from_row_slice(2, 2, &[-2.0, 2.0, 2.0, -2.0]));
        for nu in 2..=10 {
            let q = build_q(nu).unwrap();
            for r in 0..nu {
                assert_eq!(q.row(r).sum(), 0.0);
            }
        }
        assert!(build_q(1).is_err());
    }

    #[test]
    fn transport_examples() {
        assert_eq!(build_lambda(1, 3, 0.5), DMatrix::identity(3, 3) * 0.5);
        assert_eq!(build_lambda(2, 1, 0.5), DMatrix::from_row_slice(2, 2, &[0.5, 0.0, -0.5, 0.5]));
        let l = build_lambda(4, 3, 0.7);
        for c in 0..9 {
            assert_eq!(l.column(c).sum(), 0.0);
        }
    }

    #[test]
    fn default_coefficients() {
        let (a, b, w) = coefficients(&HotRollParams::default());
        let a_ref = 0.2 * 40.0 / (1e-4 * 7900.0 * 460.0);
        let b_ref = 2.0 * 0.2 * 5.67e-8 * 0.85 / (0.01 * 7900.0 * 460.0);
        assert!((a - a_ref).abs() <= 1e-12 * a_ref);
        assert!((b - b_ref).abs() <= 1e-12 * b_ref);
        assert_eq!(w, 0.5);
        assert!((a - 2.2014e-2).abs() < 1e-6);
    }

    #[test]
    fn plant_shapes_and_entries() {
        let p = HotRollParams::default();
        let plant = build_system(&p).unwrap();
        let sys = &plant.system;
        assert_eq!(sys.state_dim(), 30);
        assert_eq!(sys.sensor_count(), 10);
        let (a, b, w) = coefficients(&p);
        let f = sys.a();
        for r in 0..30 {
            for c in 0..30 {
                let transport = if r == c {
                    w
                } else if r >= 3 && c == r - 3 {
                    -w
                } else {
                    0.0
                };
                let conduction = if r / 3 == c / 3 {
                    let (i, k) = (r % 3, c % 3);
                    let stencil = [[-2.0, 2.0, 0.0], [1.0, -2.0, 1.0], [0.0, 2.0, -2.0]];
                    a * stencil[i][k]
                } else {
                    0.0
                };
                assert!((f[(r, c)] - (transport + conduction)).abs() <= 1e-15);
            }
        }
        for i in 0..10 {
            let row = sys.g().row(i);
            assert_eq!(row.sum(), 1.0);
            assert_eq!(row[3 * i], 1.0);
        }
        let loss = b * (1180f64.powi(4) - 325f64.powi(4));
        assert!((loss - 1.0225833775264517).abs() < 1e-12);
        for j in 0..10 {
            assert_eq!(plant.input[3 * j], loss);
            assert_eq!(plant.input[3 * j + 1], 0.0);
            assert_eq!(plant.input[3 * j + 2], loss);
        }
        assert_eq!(sys.observability_index(), 3);
        assert!(condition_number(f) < 1e6);
    }

    #[test]
    fn spectral_norm_fixture() {
        let plant = build_system(&HotRollParams::default()).unwrap();
        let norm = plant.system.a().clone().svd(false, false).singular_values.max();
        assert!((norm - 0.9916377088238258).abs() < 1e-10);
        let threshold = crate::obsbound::stability_threshold(plant.system.a(), 10);
        assert!(threshold < 0.0);
    }

    #[test]
    fn validation() {
        let bad = HotRollParams {
            nu: 1,
            ..HotRollParams::default()
        };
        assert!(build_system(&bad).is_err());
        let bad = HotRollParams {
            rho: 0.0,
            ..HotRollParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = HotRollParams {
            sensors: 11,
            ..HotRollParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
