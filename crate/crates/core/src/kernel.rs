//! Collision kernel `B(v - v_*, sigma) = Phi(|v - v_*|) b(cos theta)` with
//! `Phi(r) = r^gamma`, and the two parametrizations of post-collision
//! velocities.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{composite_gauss, Vec3};

const UNIT_TOL: f64 = 1e-12;

/// Angular part `b(cos theta)` of the kernel. Both shapes satisfy Grad's
/// cutoff and are bounded below by `b0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum AngularModel {
    Constant { b0: f64 },
    /// `b0 + C * max(theta, theta_cut)^(-2 - 2 nu)`: the grazing singularity
    /// `C theta^(-2-2nu)` capped at the plateau value below `theta_cut`.
    TruncatedPower { b0: f64, c: f64, theta_cut: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionKernelSpec {
    gamma: f64,
    nu: f64,
    angular: AngularModel,
}

impl CollisionKernelSpec {
    pub fn new(gamma: f64, nu: f64, angular: AngularModel) -> Result<Self> {
        if !(gamma > -2.0 && gamma < 0.0) {
            return Err(Error::InvalidKernel(format!("gamma = {gamma} must lie in (-2, 0)")));
        }
        if !(nu > 0.0 && nu < 1.0) {
            return Err(Error::InvalidKernel(format!("nu = {nu} must lie in (0, 1)")));
        }
        if gamma + 2.0 * nu <= 0.0 {
            return Err(Error::InvalidKernel(format!(
                "gamma + 2 nu = {} must be positive (moderately soft potentials)",
                gamma + 2.0 * nu
            )));
        }
        match angular {
            AngularModel::Constant { b0 } => {
                if !(b0 > 0.0 && b0.is_finite()) {
                    return Err(Error::InvalidKernel(format!("b0 = {b0} must be positive")));
                }
            }
            AngularModel::TruncatedPower { b0, c, theta_cut } => {
                if !(b0 > 0.0 && b0.is_finite()) {
                    return Err(Error::InvalidKernel(format!("b0 = {b0} must be positive")));
                }
                if !(c >= 0.0 && c.is_finite()) {
                    return Err(Error::InvalidKernel(format!("C = {c} must be nonnegative")));
                }
                if !(theta_cut > 0.0 && theta_cut <= PI) {
                    return Err(Error::InvalidKernel(format!("theta_cut = {theta_cut} must lie in (0, pi]")));
                }
            }
        }
        Ok(Self { gamma, nu, angular })
    }

    pub fn constant(gamma: f64, nu: f64, b0: f64) -> Result<Self> {
        Self::new(gamma, nu, AngularModel::Constant { b0 })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn angular(&self) -> AngularModel {
        self.angular
    }

    pub fn b0(&self) -> f64 {
        match self.angular {
            AngularModel::Constant { b0 } | AngularModel::TruncatedPower { b0, .. } => b0,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.angular, AngularModel::Constant { .. })
    }

    /// Same kernel with `b` multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let angular = match self.angular {
            AngularModel::Constant { b0 } => AngularModel::Constant { b0: b0 * factor },
            AngularModel::TruncatedPower { b0, c, theta_cut } => {
                AngularModel::TruncatedPower { b0: b0 * factor, c: c * factor, theta_cut }
            }
        };
        Self::new(self.gamma, self.nu, angular)
    }

    pub fn angular_factor(&self, cos_theta: f64) -> Result<f64> {
        if !(cos_theta.abs() <= 1.0) {
            return Err(Error::CosineOutOfRange(cos_theta));
        }
        Ok(self.angular_unchecked(cos_theta))
    }

    #[inline]
    pub(crate) fn angular_unchecked(&self, cos_theta: f64) -> f64 {
        match self.angular {
            AngularModel::Constant { b0 } => b0,
            AngularModel::TruncatedPower { b0, c, theta_cut } => {
                let theta = cos_theta.clamp(-1.0, 1.0).acos();
                b0 + c * theta.max(theta_cut).powf(-2.0 - 2.0 * self.nu)
            }
        }
    }

    /// `Phi(r) = r^gamma` for `r > 0`; 0 at `r = 0`, where the collision sum
    /// excludes the coincident pair anyway.
    pub fn kinetic_factor(&self, r: f64) -> f64 {
        if r > 0.0 {
            r.powf(self.gamma)
        } else {
            0.0
        }
    }

    /// `2 pi int_0^pi b(cos theta) sin theta d theta`.
    pub fn b_l1_norm(&self) -> f64 {
        match self.angular {
            AngularModel::Constant { b0 } => 4.0 * PI * b0,
            AngularModel::TruncatedPower { b0, c, theta_cut } => {
                let p = -2.0 - 2.0 * self.nu;
                let plateau = theta_cut.powf(p) * (1.0 - theta_cut.cos());
                // Log-spaced variable theta = e^u keeps the panels graded
                // towards small cut angles.
                let tail = if theta_cut < PI {
                    composite_gauss(|u| {
                        let t = u.exp();
                        t.powf(p) * t.sin() * t
                    }, theta_cut.ln(), PI.ln(), 64, 16)
                } else {
                    0.0
                };
                4.0 * PI * b0 + 2.0 * PI * c * (plateau + tail)
            }
        }
    }
}

fn check_unit(x: &Vec3) -> Result<()> {
    let n = x.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::NotUnitVector(n));
    }
    Ok(())
}

fn check_finite(v: &Vec3) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("velocity {v:?}")))
    }
}

/// `v' = (v + v_*)/2 + |v - v_*| sigma / 2`, `v'_* = (v + v_*)/2 - |v - v_*| sigma / 2`.
pub fn post_collision_sigma(v: &Vec3, v_star: &Vec3, sigma: &Vec3) -> Result<(Vec3, Vec3)> {
    check_finite(v)?;
    check_finite(v_star)?;
    check_unit(sigma)?;
    let centre = (v + v_star) * 0.5;
    let half = (v - v_star).norm() * 0.5;
    Ok((centre + sigma * half, centre - sigma * half))
}

/// `v' = v - <v - v_*, omega> omega`, `v'_* = v_* + <v - v_*, omega> omega`.
pub fn post_collision_omega(v: &Vec3, v_star: &Vec3, omega: &Vec3) -> Result<(Vec3, Vec3)> {
    check_finite(v)?;
    check_finite(v_star)?;
    check_unit(omega)?;
    let p = (v - v_star).dot(omega);
    Ok((v - omega * p, v_star + omega * p))
}

/// Direction `sigma = n - 2 <n, omega> omega` producing the same collision
/// as `omega` when `n = (v - v_*)/|v - v_*|`.
pub fn sigma_from_omega(n: &Vec3, omega: &Vec3) -> Result<Vec3> {
    check_unit(n)?;
    check_unit(omega)?;
    Ok(n - omega * (2.0 * n.dot(omega)))
}
