//! Named families of initial data.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::DistributionState;
use crate::equilibria::{saturated_state, solve_fd_params, epsilon_sat};
use crate::error::{Error, Result};
use crate::quadrature::{Vec3, VelocityGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDatum {
    Maxwellian {
        rho: f64,
        #[serde(default)]
        u: [f64; 3],
        theta: f64,
    },
    /// Fermi-Dirac statistics at the run's `eps`.
    FermiDirac {
        rho: f64,
        #[serde(default)]
        u: [f64; 3],
        theta: f64,
    },
    /// Sum of two Maxwellians.
    TwoMaxwellianMixture {
        rho: [f64; 2],
        u: [[f64; 3]; 2],
        theta: [f64; 2],
    },
    /// `1/eps` on the ball of mass `rho` around `u` (needs `eps > 0`).
    Saturated {
        rho: f64,
        #[serde(default)]
        u: [f64; 3],
    },
    /// Fermi-Dirac profile with `eps_p = fraction * eps_sat(rho, theta)`,
    /// stretched by `stretch` along the axes about `u`, times a seeded
    /// multiplicative noise of relative size `noise`, and capped at the run's
    /// Pauli bound.
    PerturbedEquilibrium {
        rho: f64,
        #[serde(default)]
        u: [f64; 3],
        theta: f64,
        fraction: f64,
        #[serde(default = "unit_stretch")]
        stretch: [f64; 3],
        #[serde(default)]
        noise: f64,
    },
}

fn unit_stretch() -> [f64; 3] {
    [1.0; 3]
}

fn maxwellian(grid: &VelocityGrid, rho: f64, u: [f64; 3], theta: f64) -> Vec<f64> {
    let a = rho * (2.0 * std::f64::consts::PI * theta).powf(-1.5);
    let c = Vec3::from(u);
    grid.tabulate(|v| a * (-(v - c).norm_squared() / (2.0 * theta)).exp())
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {x} must be positive and finite")))
    }
}

impl InitialDatum {
    pub fn family(&self) -> &'static str {
        match self {
            Self::Maxwellian { .. } => "maxwellian",
            Self::FermiDirac { .. } => "fermi_dirac",
            Self::TwoMaxwellianMixture { .. } => "two_maxwellian_mixture",
            Self::Saturated { .. } => "saturated",
            Self::PerturbedEquilibrium { .. } => "perturbed_equilibrium",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Maxwellian { rho, theta, .. } | Self::FermiDirac { rho, theta, .. } => {
                positive("rho", *rho)?;
                positive("theta", *theta)
            }
            Self::TwoMaxwellianMixture { rho, theta, .. } => {
                for k in 0..2 {
                    positive(&format!("rho[{k}]"), rho[k])?;
                    positive(&format!("theta[{k}]"), theta[k])?;
                }
                Ok(())
            }
            Self::Saturated { rho, .. } => positive("rho", *rho),
            Self::PerturbedEquilibrium { rho, theta, fraction, stretch, noise, .. } => {
                positive("rho", *rho)?;
                positive("theta", *theta)?;
                if !(*fraction >= 0.0 && *fraction < 1.0) {
                    return Err(Error::InvalidArgument(format!("fraction = {fraction} must lie in [0, 1)")));
                }
                for (k, s) in stretch.iter().enumerate() {
                    positive(&format!("stretch[{k}]"), *s)?;
                }
                if !(*noise >= 0.0 && *noise < 1.0) {
                    return Err(Error::InvalidArgument(format!("noise = {noise} must lie in [0, 1)")));
                }
                Ok(())
            }
        }
    }

    /// Mass, bulk velocity and temperature of the continuous datum (noise
    /// ignored). For the saturated family the temperature depends on `eps`
    /// and is `None`.
    pub fn nominal_moments(&self) -> (f64, [f64; 3], Option<f64>) {
        match *self {
            Self::Maxwellian { rho, u, theta } | Self::FermiDirac { rho, u, theta } => (rho, u, Some(theta)),
            Self::TwoMaxwellianMixture { rho, u, theta } => {
                let total = rho[0] + rho[1];
                let mean: [f64; 3] = std::array::from_fn(|a| (rho[0] * u[0][a] + rho[1] * u[1][a]) / total);
                let spread = |k: usize| (0..3).map(|a| (u[k][a] - mean[a]).powi(2)).sum::<f64>() / 3.0;
                let t = (rho[0] * (theta[0] + spread(0)) + rho[1] * (theta[1] + spread(1))) / total;
                (total, mean, Some(t))
            }
            Self::Saturated { rho, u } => (rho, u, None),
            Self::PerturbedEquilibrium { rho, u, theta, stretch, .. } => {
                let det = stretch.iter().product::<f64>();
                let t = theta * stretch.iter().map(|s| s * s).sum::<f64>() / 3.0;
                (rho * det, u, Some(t))
            }
        }
    }

    /// Node samples at quantum parameter `eps`; `seed` drives the noise.
    pub fn sample(&self, grid: &VelocityGrid, eps: f64, seed: u64) -> Result<DistributionState> {
        self.validate()?;
        let values = match *self {
            Self::Maxwellian { rho, u, theta } => maxwellian(grid, rho, u, theta),
            Self::FermiDirac { rho, u, theta } => return solve_fd_params(rho, u, theta, eps)?.sample(grid),
            Self::TwoMaxwellianMixture { rho, u, theta } => {
                let a = maxwellian(grid, rho[0], u[0], theta[0]);
                let b = maxwellian(grid, rho[1], u[1], theta[1]);
                a.iter().zip(&b).map(|(x, y)| x + y).collect()
            }
            Self::Saturated { rho, u } => return Ok(saturated_state(rho, u, eps, grid)?.state),
            Self::PerturbedEquilibrium { rho, u, theta, fraction, stretch, noise } => {
                let p = solve_fd_params(rho, [0.0; 3], theta, fraction * epsilon_sat(rho, theta))?;
                let c = Vec3::from(u);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let bound = if eps > 0.0 { 1.0 / eps } else { f64::INFINITY };
                grid.tabulate(|v| {
                    let d = v - c;
                    let w = Vec3::new(d.x / stretch[0], d.y / stretch[1], d.z / stretch[2]);
                    let factor = if noise > 0.0 { 1.0 + noise * (2.0 * rng.random::<f64>() - 1.0) } else { 1.0 };
                    (p.density(&w) * factor).min(bound)
                })
            }
        };
        DistributionState::new(grid.clone(), values, eps)
    }
}
