//! Fermi-Dirac statistics `M = a e^{-b|v-u|^2} / (1 + eps a e^{-b|v-u|^2})`,
//! the saturation threshold, and the saturated (ball) equilibrium.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::collision::{invariant_moments, DistributionState};
use crate::error::{Error, Result};
use crate::quadrature::{adaptive, Vec3, VelocityGrid};

const NEWTON_MAX_ITER: usize = 200;
const NEWTON_TOL: f64 = 1e-14;
const ACCEPT_TOL: f64 = 1e-10;
const SATURATION_MARGIN: f64 = 1e-6;

/// `4 pi (5 Theta)^{3/2} / (3 rho)`: smooth Fermi-Dirac equilibria with mass
/// `rho` and temperature `Theta` exist only for `eps` below this value.
pub fn epsilon_sat(rho: f64, theta: f64) -> f64 {
    4.0 * PI * (5.0 * theta).powf(1.5) / (3.0 * rho)
}

/// `a e^z / (1 + eps a e^z)` written as a function of `z = ln a - b r^2`,
/// stable for large `eps a`.
#[inline]
fn fd_profile(z: f64, eps: f64) -> f64 {
    if z > 0.0 {
        1.0 / ((-z).exp() + eps)
    } else {
        let e = z.exp();
        e / (1.0 + eps * e)
    }
}

/// Which radial profile to integrate: the density itself or its derivative
/// `M (1 - eps M)` with respect to `ln a`.
#[derive(Clone, Copy)]
enum Profile {
    Density,
    Derivative,
}

/// `4 pi int_0^inf p(r) r^k dr` for the chosen profile.
fn radial_integral(a: f64, b: f64, eps: f64, k: i32, profile: Profile) -> Result<f64> {
    let ln_a = a.ln();
    let g = |x: f64| {
        let m = fd_profile(ln_a - x * x, eps);
        let p = match profile {
            Profile::Density => m,
            Profile::Derivative => m * (1.0 - eps * m),
        };
        p * x.powi(k)
    };
    // In x = sqrt(b) r the profile is flat up to x_F^2 = ln(eps a) and then
    // decays like e^{-x^2}.
    let x_f = if eps > 0.0 && (eps * a).ln() > 0.0 { (eps * a).ln().sqrt() } else { 0.0 };
    let x_max = (x_f * x_f + 60.0).sqrt();
    let rough = if x_f > 0.0 { x_f.powi(k + 1) / ((k + 1) as f64 * eps) } else { a };
    let rough = rough.max(a * 0.1) + 1e-300;
    let tol = 1e-16 * rough;
    let head = if x_f > 0.0 { adaptive(g, 0.0, x_f, tol)? } else { 0.0 };
    let tail = adaptive(g, x_f, x_max, tol)?;
    Ok(4.0 * PI * (head + tail) * b.powf(-0.5 * (k + 1) as f64))
}

/// `(mass, energy) = 4 pi int M r^2 dr, 4 pi int M r^4 dr` of the centred
/// Fermi-Dirac profile with coefficients `a`, `b`.
pub fn fd_moments(a: f64, b: f64, eps: f64) -> Result<(f64, f64)> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidArgument(format!("need a, b > 0, got a = {a}, b = {b}")));
    }
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be >= 0")));
    }
    Ok((
        radial_integral(a, b, eps, 2, Profile::Density)?,
        radial_integral(a, b, eps, 4, Profile::Density)?,
    ))
}

/// Fitted Fermi-Dirac statistics with prescribed mass, velocity and
/// temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FermiDiracParams {
    pub rho: f64,
    pub u: [f64; 3],
    pub theta: f64,
    pub epsilon: f64,
    pub a: f64,
    pub b: f64,
    /// Relative residuals of the mass and energy constraints.
    pub residuals: [f64; 2],
}

impl FermiDiracParams {
    pub fn velocity(&self) -> Vec3 {
        Vec3::from(self.u)
    }

    pub fn density(&self, v: &Vec3) -> f64 {
        let r2 = (v - self.velocity()).norm_squared();
        fd_profile(self.a.ln() - self.b * r2, self.epsilon)
    }

    /// Peak value `a / (1 + eps a)`, attained at `v = u`.
    pub fn max_density(&self) -> f64 {
        self.a / (1.0 + self.epsilon * self.a)
    }

    pub fn epsilon_sat(&self) -> f64 {
        epsilon_sat(self.rho, self.theta)
    }

    /// Node samples of the statistics.
    pub fn sample(&self, grid: &VelocityGrid) -> Result<DistributionState> {
        DistributionState::new(grid.clone(), grid.tabulate(|v| self.density(v)), self.epsilon)
    }
}

/// Solves for `(a, b)` so that the statistics have mass `rho` and energy
/// `3 rho Theta` (centred), by damped Newton in `(ln a, ln b)` started from
/// the Maxwellian values.
pub fn solve_fd_params(rho: f64, u: [f64; 3], theta: f64, eps: f64) -> Result<FermiDiracParams> {
    if !(rho > 0.0 && theta > 0.0 && rho.is_finite() && theta.is_finite()) {
        return Err(Error::InvalidArgument(format!("need rho, Theta > 0, got {rho}, {theta}")));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be finite and >= 0")));
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("bulk velocity {u:?}")));
    }
    let sat = epsilon_sat(rho, theta);
    if eps >= sat * (1.0 - SATURATION_MARGIN) {
        return Err(Error::SaturationExceeded { epsilon: eps, epsilon_sat: sat });
    }
    let b0 = 1.0 / (2.0 * theta);
    let a0 = rho * (b0 / PI).powf(1.5);
    if eps == 0.0 {
        return Ok(FermiDiracParams { rho, u, theta, epsilon: 0.0, a: a0, b: b0, residuals: [0.0, 0.0] });
    }
    let energy_target = 3.0 * rho * theta;
    let residual = |la: f64, lb: f64| -> Result<[f64; 2]> {
        let (m, e) = fd_moments(la.exp(), lb.exp(), eps)?;
        Ok([m / rho - 1.0, e / energy_target - 1.0])
    };
    let norm = |r: &[f64; 2]| r[0].abs().max(r[1].abs());
    let (mut la, mut lb) = (a0.ln(), b0.ln());
    let mut r = residual(la, lb)?;
    for _ in 0..NEWTON_MAX_ITER {
        if norm(&r) <= NEWTON_TOL {
            break;
        }
        let (a, b) = (la.exp(), lb.exp());
        let j11 = radial_integral(a, b, eps, 2, Profile::Derivative)? / rho;
        let j12 = -b * radial_integral(a, b, eps, 4, Profile::Derivative)? / rho;
        let j21 = radial_integral(a, b, eps, 4, Profile::Derivative)? / energy_target;
        let j22 = -b * radial_integral(a, b, eps, 6, Profile::Derivative)? / energy_target;
        let det = j11 * j22 - j12 * j21;
        if !(det.abs() > 0.0) || !det.is_finite() {
            break;
        }
        let da = -(j22 * r[0] - j12 * r[1]) / det;
        let db = -(-j21 * r[0] + j11 * r[1]) / det;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (na, nb) = (la + step * da, lb + step * db);
            let nr = residual(na, nb)?;
            if norm(&nr) < norm(&r) {
                la = na;
                lb = nb;
                r = nr;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm(&r) > ACCEPT_TOL {
        return Err(Error::NewtonStagnation { iterations: NEWTON_MAX_ITER, residual: norm(&r) });
    }
    Ok(FermiDiracParams { rho, u, theta, epsilon: eps, a: la.exp(), b: lb.exp(), residuals: r })
}

/// Mass, bulk velocity and temperature of a grid function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Macroscopic {
    pub rho: f64,
    pub u: [f64; 3],
    pub theta: f64,
}

impl Macroscopic {
    pub fn of(grid: &VelocityGrid, values: &[f64]) -> Result<Self> {
        grid.check_len(values)?;
        let m = invariant_moments(grid, values);
        if !(m[0] > 0.0) {
            return Err(Error::InvalidArgument("distribution has no mass".into()));
        }
        let rho = m[0];
        let u = [m[1] / rho, m[2] / rho, m[3] / rho];
        let u2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
        let theta = (m[4] / rho - u2) / 3.0;
        Ok(Self { rho, u, theta })
    }
}

/// Statistics sharing the discrete mass, momentum and energy of `f`.
pub fn reference_equilibrium(f: &DistributionState) -> Result<FermiDiracParams> {
    let m = Macroscopic::of(f.grid(), f.values())?;
    solve_fd_params(m.rho, m.u, m.theta, f.epsilon())
}

/// Saturated equilibrium: `1/eps` on the ball `|v - u| <= R`,
/// `R = (3 rho eps / 4 pi)^{1/3}`, zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturatedState {
    pub state: DistributionState,
    pub radius: f64,
    /// Discrete mass minus `rho`.
    pub mass_defect: f64,
}

pub fn saturated_radius(rho: f64, eps: f64) -> f64 {
    (3.0 * rho * eps / (4.0 * PI)).cbrt()
}

pub fn saturated_state(rho: f64, u: [f64; 3], eps: f64, grid: &VelocityGrid) -> Result<SaturatedState> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("saturated state needs eps > 0, got {eps}")));
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho = {rho} must be positive")));
    }
    let radius = saturated_radius(rho, eps);
    let reach = radius + u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if reach > grid.half_width() {
        return Err(Error::InvalidArgument(format!(
            "saturated ball of radius {radius} around {u:?} exceeds the grid box [-{L}, {L}]^3",
            L = grid.half_width()
        )));
    }
    let centre = Vec3::from(u);
    let values = grid.tabulate(|v| if (v - centre).norm() <= radius { 1.0 / eps } else { 0.0 });
    let mass = grid.integrate(&values)?;
    let state = DistributionState::new(grid.clone(), values, eps)?;
    Ok(SaturatedState { state, radius, mass_defect: mass - rho })
}

/// Samples of the statistics on a grid.
pub fn sample_equilibrium(params: &FermiDiracParams, grid: &VelocityGrid) -> Result<DistributionState> {
    params.sample(grid)
}
