//! Scalar functionals of a distribution: moments, entropies, the
//! Csiszar-Kullback gap, level sets and the level-set energy functional.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::collision::{DistributionState, BOUND_TOL};
use crate::equilibria::{FermiDiracParams, Macroscopic};
use crate::error::{Error, Result};
use crate::quadrature::VelocityGrid;

/// Relative tolerance on the moments of `f` against the reference statistics
/// in [`csiszar_kullback_gap`].
pub const MOMENT_MATCH_TOL: f64 = 1e-6;

/// `<v>^s = (1 + |v|^2)^{s/2}` at every node.
pub fn japanese_weight(grid: &VelocityGrid, s: f64) -> Vec<f64> {
    grid.tabulate(|v| (1.0 + v.norm_squared()).powf(0.5 * s))
}

/// `m_s = int f <v>^s`, `M_s = int f^2 <v>^s` and `E_s = m_s + M_s / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub s: f64,
    pub m_s: f64,
    pub big_m_s: f64,
    pub e_s: f64,
}

pub fn moment(f: &DistributionState, s: f64) -> MomentReport {
    let grid = f.grid();
    let w = grid.cell_weight();
    let weight = japanese_weight(grid, s);
    let (mut m, mut big) = (0.0, 0.0);
    for (x, q) in f.values().iter().zip(&weight) {
        m += x * q;
        big += x * x * q;
    }
    let (m_s, big_m_s) = (m * w, big * w);
    MomentReport { s, m_s, big_m_s, e_s: m_s + 0.5 * big_m_s }
}

/// `||g||_{L^1_s} = int |g| <v>^s` for a signed grid function.
pub fn weighted_l1(grid: &VelocityGrid, values: &[f64], s: f64) -> Result<f64> {
    grid.check_len(values)?;
    let weight = japanese_weight(grid, s);
    Ok(values.iter().zip(&weight).map(|(x, q)| x.abs() * q).sum::<f64>() * grid.cell_weight())
}

/// `x ln x` with `0 ln 0 = 0`.
fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Fermi-Dirac entropy
/// `S_eps(f) = eps^{-1} int [-(1 - eps f) ln(1 - eps f) - eps f ln(eps f)]`.
///
/// For `eps = 0` this returns `int (f - f ln f)`, the limit of `S_eps` once
/// the term `-ln(eps) int f` (constant along the flow) is dropped.
pub fn entropy_s(f: &DistributionState) -> Result<f64> {
    f.validate(BOUND_TOL)?;
    let eps = f.epsilon();
    let w = f.grid().cell_weight();
    let sum: f64 = if eps > 0.0 {
        f.values()
            .iter()
            .map(|&x| {
                let y = (eps * x).clamp(0.0, 1.0);
                -(xlogx(1.0 - y) + xlogx(y)) / eps
            })
            .sum()
    } else {
        f.values().iter().map(|&x| x.max(0.0) - xlogx(x.max(0.0))).sum()
    };
    Ok(sum * w)
}

/// Boltzmann entropy `H(f) = int f ln f`.
pub fn boltzmann_entropy(f: &DistributionState) -> f64 {
    f.values().iter().map(|&x| xlogx(x.max(0.0))).sum::<f64>() * f.grid().cell_weight()
}

/// `H_eps(f | g) = S_eps(g) - S_eps(f)`.
pub fn relative_entropy(f: &DistributionState, g: &DistributionState) -> Result<f64> {
    if !f.same_frame(g) {
        return Err(Error::GridMismatch);
    }
    Ok(entropy_s(g)? - entropy_s(f)?)
}

/// `psi_eps(x) = x / (1 - eps x)` on `[0, 1/eps)`.
pub fn psi_eps(x: f64, eps: f64) -> f64 {
    x / (1.0 - eps * x)
}

/// `1 - eps max f`.
pub fn kappa0(f: &DistributionState) -> f64 {
    1.0 - f.epsilon() * f.max_value()
}

/// Quantities of the two-sided Csiszar-Kullback inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsiszarKullback {
    /// `||f - M||_{L^1}^2`.
    pub lhs: f64,
    /// `2 (int f) H_eps(f | M)`.
    pub mid: f64,
    /// `||f - M||_{L^1_2}`.
    pub rhs: f64,
}

/// Compares `f` with the sampled statistics `params`, which must share
/// `f`'s mass, velocity and temperature.
pub fn csiszar_kullback_gap(f: &DistributionState, params: &FermiDiracParams) -> Result<CsiszarKullback> {
    if params.epsilon != f.epsilon() {
        return Err(Error::GridMismatch);
    }
    let mac = Macroscopic::of(f.grid(), f.values())?;
    let du = ((mac.u[0] - params.u[0]).powi(2) + (mac.u[1] - params.u[1]).powi(2) + (mac.u[2] - params.u[2]).powi(2)).sqrt();
    let mismatch = [
        (mac.rho / params.rho - 1.0).abs(),
        du / params.theta.sqrt(),
        (mac.theta / params.theta - 1.0).abs(),
    ];
    if mismatch.iter().any(|&m| !(m <= MOMENT_MATCH_TOL)) {
        return Err(Error::MomentMismatch(format!(
            "f has (rho, u, Theta) = ({}, {:?}, {}) but the reference has ({}, {:?}, {})",
            mac.rho, mac.u, mac.theta, params.rho, params.u, params.theta
        )));
    }
    let grid = f.grid();
    let m = params.sample(grid)?;
    let diff: Vec<f64> = f.values().iter().zip(m.values()).map(|(a, b)| a - b).collect();
    let l1 = weighted_l1(grid, &diff, 0.0)?;
    let l12 = grid.cell_weight()
        * diff.iter().enumerate().map(|(i, d)| d.abs() * (1.0 + grid.node(i).norm_squared())).sum::<f64>();
    let h = relative_entropy(f, &m)?;
    Ok(CsiszarKullback { lhs: l1 * l1, mid: 2.0 * mac.rho * h, rhs: l12 })
}

/// `(f - K)^+` node by node.
pub fn level_set_positive(f: &DistributionState, k: f64) -> Result<Vec<f64>> {
    if !(k >= 0.0) {
        return Err(Error::InvalidArgument(format!("level K = {k} must be >= 0")));
    }
    Ok(f.values().iter().map(|&x| (x - k).max(0.0)).collect())
}

/// In-place 3D DFT of an `n^3` array stored with the last axis fastest.
fn fft3(data: &mut [Complex64], n: usize) {
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for stride in [1, n, n * n] {
        for base in 0..n * n * n {
            // `base` must be the first element of a line along this axis.
            if (base / stride) % n != 0 {
                continue;
            }
            for (t, slot) in line.iter_mut().enumerate() {
                *slot = data[base + t * stride];
            }
            fft.process(&mut line);
            for (t, slot) in line.iter().enumerate() {
                data[base + t * stride] = *slot;
            }
        }
    }
}

/// Homogeneous Sobolev seminorm `int |g^(xi)|^2 |xi|^{2 nu} d xi` of a grid
/// function, with the unitary Fourier transform of its periodization on the
/// box. At `nu = 0` the multiplier is 1 everywhere (including `xi = 0`), so
/// the value is `||g||_{L^2}^2`.
pub fn sobolev_seminorm_sq(grid: &VelocityGrid, values: &[f64], nu: f64) -> Result<f64> {
    grid.check_len(values)?;
    if !(nu >= 0.0) {
        return Err(Error::InvalidArgument(format!("nu = {nu} must be >= 0")));
    }
    let n = grid.points_per_axis();
    let mut data: Vec<Complex64> = values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft3(&mut data, n);
    let dxi = PI / grid.half_width();
    let freq = |m: usize| {
        let m = m as i64;
        let m = if m < (n as i64 + 1) / 2 { m } else { m - n as i64 };
        m as f64 * dxi
    };
    let mut sum = 0.0;
    for (idx, c) in data.iter().enumerate() {
        let (i, j, k) = grid.coords(idx);
        let xi2 = freq(i).powi(2) + freq(j).powi(2) + freq(k).powi(2);
        let mult = if nu == 0.0 { 1.0 } else { xi2.powf(nu) };
        sum += c.norm_sqr() * mult;
    }
    Ok(sum * grid.cell_weight() / (n * n * n) as f64)
}

/// `||<v>^{gamma/2} (f - l)^+||^2_{H^nu}` (seminorm plus `L^2` part).
pub fn weighted_level_norm_sq(f: &DistributionState, level: f64, gamma: f64, nu: f64) -> Result<f64> {
    let grid = f.grid();
    let weight = japanese_weight(grid, gamma);
    let g: Vec<f64> = level_set_positive(f, level)?.iter().zip(&weight).map(|(x, q)| x * q.sqrt()).collect();
    let l2 = g.iter().map(|x| x * x).sum::<f64>() * grid.cell_weight();
    Ok(sobolev_seminorm_sq(grid, &g, nu)? + l2)
}

/// Level-set energy functional
/// `sup_{t in [T1, T2]} [ ||f_l^+(t)||_2^2 / 2 + (c0/2) int_{T1}^t ||<v>^{gamma/2} f_l^+||^2_{H^nu} ]`
/// over the recorded states (times taken from the states), with the time
/// integral by the trapezoidal rule.
pub fn level_energy_functional(
    trajectory: &[DistributionState],
    level: f64,
    t1: f64,
    t2: f64,
    c0: f64,
    gamma: f64,
    nu: f64,
) -> Result<f64> {
    if !(t1 < t2) {
        return Err(Error::InvalidArgument(format!("need T1 < T2, got [{t1}, {t2}]")));
    }
    let window: Vec<&DistributionState> = trajectory.iter().filter(|s| s.time() >= t1 && s.time() <= t2).collect();
    if window.is_empty() {
        return Err(Error::InsufficientData(format!("no recorded state in [{t1}, {t2}]")));
    }
    let mut best = 0.0f64;
    let mut integral = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for s in window {
        let dissip = weighted_level_norm_sq(s, level, gamma, nu)?;
        if let Some((tp, dp)) = prev {
            integral += 0.5 * (s.time() - tp) * (dissip + dp);
        }
        prev = Some((s.time(), dissip));
        let plus = level_set_positive(s, level)?;
        let l2 = plus.iter().map(|x| x * x).sum::<f64>() * s.grid().cell_weight();
        best = best.max(0.5 * l2 + 0.5 * c0 * integral);
    }
    Ok(best)
}

/// Coercivity factor `(2 pi / 7) kappa0^5 min(1, T) inf_e int f (v . e)^2`,
/// with the temperature `T` passed in by the caller.
pub fn coercivity_constant(f: &DistributionState, temperature: f64) -> f64 {
    let grid = f.grid();
    let mut a = Matrix3::<f64>::zeros();
    for (i, &x) in f.values().iter().enumerate() {
        let v = grid.node(i);
        a += v * v.transpose() * x;
    }
    a *= grid.cell_weight();
    let lowest = a.symmetric_eigenvalues().min();
    2.0 * PI / 7.0 * kappa0(f).powi(5) * temperature.min(1.0) * lowest
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::solve_fd_params;
    use crate::quadrature::Vec3;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn maxwellian(grid: &VelocityGrid, rho: f64, theta: f64) -> Vec<f64> {
        let a = rho * (2.0 * PI * theta).powf(-1.5);
        grid.tabulate(|v| a * (-v.norm_squared() / (2.0 * theta)).exp())
    }

    fn state(grid: &VelocityGrid, vals: Vec<f64>, eps: f64) -> DistributionState {
        DistributionState::new(grid.clone(), vals, eps).unwrap()
    }

    #[test]
    fn moments_of_zero_and_maxwellian() {
        let g = VelocityGrid::new(8.0, 32).unwrap();
        let z = DistributionState::zeros(g.clone(), 0.0).unwrap();
        let r = moment(&z, 3.0);
        assert_eq!((r.m_s, r.big_m_s, r.e_s), (0.0, 0.0, 0.0));
        let f = state(&g, maxwellian(&g, 1.0, 1.0), 0.0);
        assert_relative_eq!(moment(&f, 0.0).m_s, 1.0, max_relative = 1e-10);
        assert_relative_eq!(moment(&f, 2.0).m_s, 4.0, max_relative = 1e-10);
        let r = moment(&f, 1.5);
        assert_eq!(r.e_s, r.m_s + 0.5 * r.big_m_s);
    }

    #[test]
    fn indicator_l2_moment() {
        let g = VelocityGrid::new(2.0, 4).unwrap();
        let vals = g.tabulate(|v| if v.x > 0.0 { 0.3 } else { 0.0 });
        let f = state(&g, vals, 0.0);
        assert_relative_eq!(moment(&f, 0.0).big_m_s, 0.09 * 32.0, max_relative = 1e-14);
    }

    #[test]
    fn entropy_examples() {
        let g = VelocityGrid::new(2.0, 4).unwrap();
        // every cell has volume 1, total volume 64
        let f = state(&g, vec![0.5; 64], 1.0);
        assert_relative_eq!(entropy_s(&f).unwrap(), 64.0 * 2f64.ln(), max_relative = 1e-14);
        let f = state(&g, vec![1.0 / 3.0; 64], 3.0);
        assert_eq!(entropy_s(&f).unwrap(), 0.0);
        let f = state(&g, vec![0.0; 64], 3.0);
        assert_eq!(entropy_s(&f).unwrap(), 0.0);
        let f = state(&g, vec![1.0; 64], 0.0);
        assert_eq!(boltzmann_entropy(&f), 0.0);
        let f = state(&g, vec![std::f64::consts::E; 64], 0.0);
        assert_relative_eq!(boltzmann_entropy(&f), 64.0 * std::f64::consts::E, max_relative = 1e-14);
        let bad = DistributionState::new_unchecked(g, vec![0.6; 64], 2.0).unwrap();
        assert!(entropy_s(&bad).is_err());
    }

    #[test]
    fn maxwellian_boltzmann_entropy() {
        let g = VelocityGrid::new(8.0, 32).unwrap();
        let f = state(&g, maxwellian(&g, 1.0, 1.0), 0.0);
        let want = -1.5 * (1.0 + (2.0 * PI).ln());
        assert_relative_eq!(boltzmann_entropy(&f), want, max_relative = 1e-9);
    }

    #[test]
    fn relative_entropy_vs_matched_equilibrium() {
        let g = VelocityGrid::new(6.0, 24).unwrap();
        let bump = g.tabulate(|v| 0.05 * (-(v - Vec3::new(0.7, 0.0, 0.0)).norm_squared() * 2.0).exp());
        let base = maxwellian(&g, 1.0, 0.8);
        let vals: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
        for eps in [0.0, 1.0, 5.0] {
            let f = state(&g, vals.clone(), eps);
            let m = crate::equilibria::reference_equilibrium(&f).unwrap().sample(&g).unwrap();
            assert!(relative_entropy(&f, &m).unwrap() >= -1e-10);
            assert_eq!(relative_entropy(&f, &f).unwrap(), 0.0);
        }
        let other = DistributionState::zeros(VelocityGrid::new(6.0, 12).unwrap(), 0.0).unwrap();
        assert!(relative_entropy(&other, &state(&g, vals, 0.0)).is_err());
    }

    #[test]
    fn relative_entropy_classical_limit() {
        let g = VelocityGrid::new(6.0, 20).unwrap();
        let vals: Vec<f64> = maxwellian(&g, 1.0, 1.0)
            .iter()
            .zip(g.nodes())
            .map(|(m, v)| m * (1.0 + 0.3 * (v.x * v.y).tanh()))
            .collect();
        let eps = 1e-7;
        let f = state(&g, vals.clone(), eps);
        let p = crate::equilibria::reference_equilibrium(&f).unwrap();
        let m = p.sample(&g).unwrap();
        let h = relative_entropy(&f, &m).unwrap();
        let classical: f64 = vals
            .iter()
            .zip(m.values())
            .map(|(a, b)| if *a > 0.0 { a * (a / b).ln() } else { 0.0 })
            .sum::<f64>()
            * g.cell_weight();
        assert!((h - classical).abs() < 1e-4, "{h} vs {classical}");
    }

    #[test]
    fn psi_helper() {
        assert_eq!(psi_eps(0.7, 0.0), 0.7);
        assert_relative_eq!(psi_eps(0.5, 1.0), 1.0);
        let mut last = 0.0;
        for k in 1..100 {
            let x = psi_eps(k as f64 / 100.0 * 0.5, 2.0);
            assert!(x > last);
            last = x;
        }
    }

    #[test]
    fn ck_gap_of_equilibrium_is_zero() {
        let g = VelocityGrid::new(6.0, 16).unwrap();
        let p = solve_fd_params(1.0, [0.0; 3], 0.8, 2.0).unwrap();
        let m = p.sample(&g).unwrap();
        let mac = Macroscopic::of(&g, m.values()).unwrap();
        let matched = solve_fd_params(mac.rho, mac.u, mac.theta, 2.0).unwrap();
        let ck = csiszar_kullback_gap(&m, &matched).unwrap();
        // resampling the fitted statistics only leaves discretization error
        assert!(ck.lhs <= ck.mid && ck.mid < 1e-4 && ck.rhs < 1e-4, "{ck:?}");
        let off = solve_fd_params(1.1, [0.0; 3], 0.8, 2.0).unwrap();
        assert!(matches!(csiszar_kullback_gap(&m, &off), Err(Error::MomentMismatch(_))));
    }

    #[test]
    fn ck_gap_with_bump() {
        let g = VelocityGrid::new(6.0, 20).unwrap();
        let p = solve_fd_params(1.0, [0.0; 3], 0.8, 2.0).unwrap();
        let base = p.sample(&g).unwrap();
        let vals: Vec<f64> = base
            .values()
            .iter()
            .zip(g.nodes())
            .map(|(m, v)| m * (1.0 + 0.01 * (-(v - Vec3::new(0.5, 0.2, 0.0)).norm_squared()).exp()))
            .collect();
        let f = state(&g, vals, 2.0);
        let r = crate::equilibria::reference_equilibrium(&f).unwrap();
        let ck = csiszar_kullback_gap(&f, &r).unwrap();
        assert!(ck.lhs < ck.mid, "{ck:?}");
    }

    #[test]
    fn level_sets() {
        let g = VelocityGrid::new(2.0, 4).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|i| i as f64 / 64.0).collect();
        let f = state(&g, vals.clone(), 0.0);
        assert_eq!(level_set_positive(&f, 0.0).unwrap(), vals);
        assert!(level_set_positive(&f, 1.0).unwrap().iter().all(|&x| x == 0.0));
        let (a, b) = (level_set_positive(&f, 0.2).unwrap(), level_set_positive(&f, 0.5).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| y <= x));
        assert!(level_set_positive(&f, -1.0).is_err());
    }

    #[test]
    fn seminorm_at_nu_zero_is_l2() {
        let g = VelocityGrid::new(4.0, 12).unwrap();
        let vals = g.tabulate(|v| (-(v - Vec3::new(0.3, -0.2, 0.1)).norm_squared()).exp() * (1.0 + v.x));
        let l2 = vals.iter().map(|x| x * x).sum::<f64>() * g.cell_weight();
        assert_relative_eq!(sobolev_seminorm_sq(&g, &vals, 0.0).unwrap(), l2, max_relative = 1e-12);
    }

    #[test]
    fn seminorm_h1_matches_gradient_norm() {
        // For nu = 1 the seminorm is ||grad g||^2; for g = e^{-|v|^2/2},
        // ||grad g||^2 = (3/2) pi^{3/2}.
        let g = VelocityGrid::new(8.0, 32).unwrap();
        let vals = g.tabulate(|v| (-0.5 * v.norm_squared()).exp());
        let want = 1.5 * PI.powf(1.5);
        assert_relative_eq!(sobolev_seminorm_sq(&g, &vals, 1.0).unwrap(), want, max_relative = 1e-8);
    }

    #[test]
    fn level_energy_functional_properties() {
        let g = VelocityGrid::new(4.0, 8).unwrap();
        let traj: Vec<DistributionState> = (0..5)
            .map(|k| {
                let t = k as f64 * 0.5;
                state(&g, maxwellian(&g, 1.0 + 0.1 * t, 1.0), 0.0).with_time(t)
            })
            .collect();
        let top = traj.iter().map(|s| s.max_value()).fold(0.0, f64::max);
        assert_eq!(level_energy_functional(&traj, top, 0.0, 2.0, 1.0, -0.5, 0.75).unwrap(), 0.0);
        let a = level_energy_functional(&traj, 0.01, 0.0, 1.0, 1.0, -0.5, 0.75).unwrap();
        let b = level_energy_functional(&traj, 0.01, 0.0, 2.0, 1.0, -0.5, 0.75).unwrap();
        assert!(a > 0.0 && a <= b);
        assert!(level_energy_functional(&traj, 0.01, 3.0, 4.0, 1.0, -0.5, 0.75).is_err());
        assert!(level_energy_functional(&traj, 0.01, 1.0, 1.0, 1.0, -0.5, 0.75).is_err());
    }

    #[test]
    fn coercivity_of_isotropic_maxwellian() {
        // inf_e int M (v.e)^2 = rho Theta for an isotropic Maxwellian
        let g = VelocityGrid::new(8.0, 32).unwrap();
        let f = state(&g, maxwellian(&g, 1.0, 0.5), 0.0);
        assert_relative_eq!(coercivity_constant(&f, 0.5), 2.0 * PI / 7.0 * 0.5 * 0.5, max_relative = 1e-9);
    }

    proptest! {
        #[test]
        fn fd_entropy_is_nonnegative(vals in proptest::collection::vec(0.0f64..=1.0, 64), eps in 0.1f64..5.0) {
            let g = VelocityGrid::new(2.0, 4).unwrap();
            let f = state(&g, vals.iter().map(|x| x / eps).collect(), eps);
            prop_assert!(entropy_s(&f).unwrap() >= 0.0);
        }

        #[test]
        fn kappa0_at_most_one(vals in proptest::collection::vec(0.0f64..=1.0, 64), eps in 0.0f64..5.0) {
            let g = VelocityGrid::new(2.0, 4).unwrap();
            let scale = if eps > 0.0 { 1.0 / eps } else { 1.0 };
            let f = state(&g, vals.iter().map(|x| x * scale).collect(), eps);
            let k = kappa0(&f);
            prop_assert!(k <= 1.0 && k >= -1e-12);
        }
    }
}
