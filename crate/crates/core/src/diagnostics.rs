//! Trajectory analyses: decay-exponent formulas, moment envelopes, the
//! moment-inequality monitor with explicit constants, power-law fits,
//! non-saturation and epsilon sweeps.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::{CollisionModel, DistributionState};
use crate::error::{Error, Result};
use crate::functionals::weighted_l1;
use crate::integrator::{integrate, Record, RecordOptions, StepControl, TimeSeries};
use crate::kernel::{AngularModel, CollisionKernelSpec};
use crate::quadrature::composite_gauss;

/// Value of an exponent formula and whether the hypothesis behind it holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponent {
    pub value: f64,
    pub hypothesis_holds: bool,
}

/// Algebraic relaxation rate `(s - 18 - 5|gamma|) / (4 + 2|gamma|)`, stated
/// for `s > 22 + 5|gamma|`. Outside that range the value is still returned,
/// flagged.
pub fn expected_decay_exponent(s: f64, gamma: f64) -> Exponent {
    let g = gamma.abs();
    Exponent { value: (s - 18.0 - 5.0 * g) / (4.0 + 2.0 * g), hypothesis_holds: s > 22.0 + 5.0 * g }
}

/// Envelope `t -> C_s (t + t^{-3/(2 nu)})` of the moment growth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEnvelope {
    pub c_s: f64,
    pub nu: f64,
}

impl MomentEnvelope {
    /// Requires `s >= 8 + |gamma|`.
    pub fn new(s: f64, nu: f64, gamma: f64, c_s: f64) -> Result<Self> {
        if s < 8.0 + gamma.abs() {
            return Err(Error::InvalidArgument(format!("moment envelope needs s >= 8 + |gamma|, got s = {s}")));
        }
        if !(nu > 0.0 && nu < 1.0) {
            return Err(Error::InvalidArgument(format!("nu = {nu} must lie in (0, 1)")));
        }
        Ok(Self { c_s, nu })
    }

    /// `-3 / (2 nu)`.
    pub fn short_time_exponent(&self) -> f64 {
        -3.0 / (2.0 * self.nu)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.c_s * (t + t.powf(self.short_time_exponent()))
    }

    /// Minimizer `(3 / (2 nu))^{2 nu / (2 nu + 3)}`.
    pub fn t_star(&self) -> f64 {
        (3.0 / (2.0 * self.nu)).powf(2.0 * self.nu / (2.0 * self.nu + 3.0))
    }
}

/// `3|gamma| / (4 nu s + 3 gamma)`, the power of `sup m_s` in the
/// `L^infinity` envelope.
pub fn linf_mass_exponent(s: f64, nu: f64, gamma: f64) -> f64 {
    3.0 * gamma.abs() / (4.0 * nu * s + 3.0 * gamma)
}

/// `C (1 + t_*^{-3s/(4 nu s + 3 gamma) - 3/(4 nu)}) (sup m_s)^{3|gamma|/(4 nu s + 3 gamma)}`,
/// valid for `s > 3|gamma| / (2 nu)`.
pub fn linf_envelope(s: f64, nu: f64, gamma: f64, t_star: f64, sup_m_s: f64, c: f64) -> Result<f64> {
    if s <= 3.0 * gamma.abs() / (2.0 * nu) {
        return Err(Error::InvalidArgument(format!("L^inf envelope needs s > 3|gamma|/(2 nu), got s = {s}")));
    }
    if !(t_star > 0.0) {
        return Err(Error::InvalidArgument(format!("t_* = {t_star} must be positive")));
    }
    let denom = 4.0 * nu * s + 3.0 * gamma;
    let time_exp = -3.0 * s / denom - 3.0 / (4.0 * nu);
    Ok(c * (1.0 + t_star.powf(time_exp)) * sup_m_s.powf(linf_mass_exponent(s, nu, gamma)))
}

/// `c'_s = 2 pi 2^{-4 - s/2} int_0^{pi/2} b(cos theta) sin^3 theta d theta`.
pub fn c_prime_s(kernel: &CollisionKernelSpec, s: f64) -> f64 {
    let g = |t: f64| kernel.angular_unchecked(t.cos()) * t.sin().powi(3);
    let integral = match kernel.angular() {
        AngularModel::TruncatedPower { theta_cut, .. } if theta_cut < PI / 2.0 => {
            composite_gauss(g, 0.0, theta_cut, 8, 20) + composite_gauss(g, theta_cut, PI / 2.0, 32, 20)
        }
        _ => composite_gauss(g, 0.0, PI / 2.0, 32, 20),
    };
    2.0 * PI * 2f64.powf(-4.0 - s / 2.0) * integral
}

/// Upper bound for `C_s`:
/// `||f_in||_{L^1_2}^2 c^{-(s+gamma-1)} 2^{s(s+gamma-1)/2} (s^2+s+6)^{s+gamma-1}`,
/// with `c = c1 sin c1`, `c1 = min(c1_prime, pi/2)`.
pub fn big_c_s_bound(s: f64, gamma: f64, f_in_l12: f64, c1_prime: f64) -> f64 {
    let c1 = c1_prime.min(PI / 2.0);
    let bold = c1 * c1.sin();
    let k = s + gamma - 1.0;
    f_in_l12 * f_in_l12 * bold.powf(-k) * 2f64.powf(s * k / 2.0) * (s * s + s + 6.0).powf(k)
}

/// Constants and per-output margins of the weighted-moment inequality
/// `||f(t)||_{L^1_s} + (c_s/2) int_0^t ||f||_{L^1_{s+gamma}} <= ||f_in||_{L^1_s} + C_s t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentMonitor {
    pub s: f64,
    pub c_prime_s: f64,
    pub c_s: f64,
    pub big_c_s: f64,
    pub times: Vec<f64>,
    /// Right side minus left side; the inequality holds where it is `>= 0`.
    pub margins: Vec<f64>,
}

impl MomentMonitor {
    pub fn min_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn moment_of(record: &Record, s: f64) -> Option<f64> {
    record.moments.iter().find(|(k, _)| (k - s).abs() < 1e-12).map(|&(_, m)| m)
}

/// Evaluates the inequality on a recorded trajectory. The records must carry
/// `m_s` and `m_{s+gamma}`; time integrals use the trapezoidal rule over the
/// outputs. `c1_prime` is the otherwise unspecified constant entering `C_s`.
pub fn moment_inequality_monitor(
    series: &TimeSeries,
    f_in: &DistributionState,
    kernel: &CollisionKernelSpec,
    s: f64,
    c1_prime: f64,
) -> Result<MomentMonitor> {
    let gamma = kernel.gamma();
    if s < (2.0 - gamma).max(4.0) {
        return Err(Error::InvalidArgument(format!("moment inequality needs s >= max(2 - gamma, 4), got s = {s}")));
    }
    let grid = f_in.grid();
    let mass = weighted_l1(grid, f_in.values(), 0.0)?;
    let l12 = weighted_l1(grid, f_in.values(), 2.0)?;
    let l1s = weighted_l1(grid, f_in.values(), s)?;
    let cps = c_prime_s(kernel, s);
    let c_s = cps * mass;
    let big_c_s = big_c_s_bound(s, gamma, l12, c1_prime);
    let missing = || Error::InsufficientData(format!("records lack m_{s} or m_{}", s + gamma));
    let mut times = Vec::new();
    let mut margins = Vec::new();
    let mut integral = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    let t0 = series.records.first().map_or(0.0, |r| r.t);
    for r in &series.records {
        let ms = moment_of(r, s).ok_or_else(missing)?;
        let msg = moment_of(r, s + gamma).ok_or_else(missing)?;
        if let Some((tp, mp)) = prev {
            integral += 0.5 * (r.t - tp) * (mp + msg);
        }
        prev = Some((r.t, msg));
        let t = r.t - t0;
        times.push(r.t);
        margins.push((l1s + big_c_s * t) - (ms + 0.5 * c_s * integral));
    }
    Ok(MomentMonitor { s, c_prime_s: cps, c_s, big_c_s, times, margins })
}

/// Fit of `y = A (1 + t)^{-p}` by least squares on `log y` against `log(1 + t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub exponent: f64,
    pub window: (f64, f64),
    /// Root-mean-square residual of the log fit.
    pub residual: f64,
    pub samples: usize,
    /// The theoretical exponent for context.
    pub theory_exponent: Option<Exponent>,
}

/// Which recorded quantity to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayQuantity {
    HRel,
    L1Dist,
}

/// Power-law fit on the samples with `t` in `window`.
pub fn fit_power_law(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> =
        times.iter().zip(values).filter(|(t, _)| **t >= window.0 && **t <= window.1).map(|(t, y)| (*t, *y)).collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData(format!("fewer than two samples in [{}, {}]", window.0, window.1)));
    }
    if let Some((t, y)) = pts.iter().find(|(_, y)| !(*y > 0.0)) {
        return Err(Error::InvalidArgument(format!("non-positive sample {y} at t = {t}")));
    }
    let xs: Vec<f64> = pts.iter().map(|(t, _)| (1.0 + t).ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|(_, y)| y.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData("fit window has a single distinct time".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(DecayFit {
        amplitude: intercept.exp(),
        exponent: -slope,
        window,
        residual: (rss / n).sqrt(),
        samples: pts.len(),
        theory_exponent: None,
    })
}

/// [`fit_power_law`] on a recorded quantity, reporting the theoretical
/// exponent for moment order `s` alongside.
pub fn decay_fit(series: &TimeSeries, quantity: DecayQuantity, window: (f64, f64), s: f64, gamma: f64) -> Result<DecayFit> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    for r in &series.records {
        let y = match quantity {
            DecayQuantity::HRel => r.h_rel,
            DecayQuantity::L1Dist => r.l1_dist,
        };
        let y = y.ok_or_else(|| Error::InsufficientData("run has no reference equilibrium".into()))?;
        times.push(r.t);
        values.push(y);
    }
    let mut fit = fit_power_law(&times, &values, window)?;
    fit.theory_exponent = Some(expected_decay_exponent(s, gamma));
    Ok(fit)
}

/// `1 - eps sup_{t >= t_min} max_i f_i(t)`.
pub fn nonsaturation_kappa(records: &[Record], epsilon: f64, t_min: f64) -> Result<f64> {
    let window: Vec<&Record> = records.iter().filter(|r| r.t >= t_min).collect();
    if window.is_empty() {
        return Err(Error::InsufficientData(format!("no output at t >= {t_min}")));
    }
    let top = window.iter().map(|r| r.max_f).fold(0.0, f64::max);
    Ok(1.0 - epsilon * top)
}

/// One member of an epsilon sweep.
#[derive(Debug, Clone)]
pub struct SweepMember {
    pub epsilon: f64,
    pub series: TimeSeries,
    pub kappa0: f64,
    pub fit: Option<DecayFit>,
    pub final_h_rel: Option<f64>,
    pub max_linf: f64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub members: Vec<SweepMember>,
    /// `max_t max_eps ||f(t)||_inf` at every common output index.
    pub sup_linf: Vec<f64>,
    /// `max(max f_in, peaks of the members' reference statistics)`; the
    /// sup-norm of a relaxing solution should stay near this level.
    pub linf_cap: f64,
    /// `sup_linf <= (1 + LINF_SLACK) linf_cap` at every output.
    pub linf_bounded: bool,
    /// `sup_linf` increases at every output and the increase over the second
    /// half of the horizon is at least that over the first half, i.e. the
    /// growth is not levelling off.
    pub linf_monotone_growth: bool,
}

/// Relative allowance over `linf_cap` for overshoot and grid error.
pub const LINF_SLACK: f64 = 0.05;

/// Settings shared by every member of a sweep.
#[derive(Debug, Clone)]
pub struct SweepSetup<'a> {
    pub model: &'a CollisionModel,
    pub t_end: f64,
    pub output_times: &'a [f64],
    pub control: StepControl,
    pub record: RecordOptions,
    pub fit_window: (f64, f64),
    /// Moment order used for the theoretical exponent in the fits.
    pub fit_s: f64,
}

/// Runs the same datum for every `eps` in `epsilons` (in parallel) and
/// compares the outcomes. The datum must satisfy the Pauli bound of every
/// member.
pub fn epsilon_sweep(datum: &DistributionState, epsilons: &[f64], setup: &SweepSetup) -> Result<SweepReport> {
    if epsilons.is_empty() {
        return Err(Error::InvalidArgument("empty epsilon list".into()));
    }
    for &eps in epsilons {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon = {eps} must be finite and >= 0")));
        }
        if eps * datum.max_value() > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "datum with max f = {} violates the Pauli bound for epsilon = {eps}",
                datum.max_value()
            )));
        }
    }
    let gamma = setup.model.kernel().gamma();
    let members: Vec<SweepMember> = epsilons
        .par_iter()
        .map(|&eps| -> Result<SweepMember> {
            let f0 = DistributionState::new(datum.grid().clone(), datum.values().to_vec(), eps)?.with_time(datum.time());
            let series = integrate(setup.model, &f0, setup.t_end, setup.output_times, &setup.control, &setup.record)?;
            let kappa0 = nonsaturation_kappa(&series.records, eps, f64::NEG_INFINITY)?;
            let fit = decay_fit(&series, DecayQuantity::HRel, setup.fit_window, setup.fit_s, gamma).ok();
            let final_h_rel = series.records.last().and_then(|r| r.h_rel);
            let max_linf = series.records.iter().map(|r| r.max_f).fold(0.0, f64::max);
            Ok(SweepMember { epsilon: eps, series, kappa0, fit, final_h_rel, max_linf })
        })
        .collect::<Result<_>>()?;
    let outputs = members.iter().map(|m| m.series.records.len()).min().unwrap_or(0);
    let sup_linf: Vec<f64> =
        (0..outputs).map(|k| members.iter().map(|m| m.series.records[k].max_f).fold(0.0, f64::max)).collect();
    let peaks = members.iter().map(|m| match &m.series.reference {
        Some(p) => p.max_density(),
        None => 1.0 / m.epsilon,
    });
    let linf_cap = peaks.fold(datum.max_value(), f64::max);
    let linf_bounded = sup_linf.iter().all(|&x| x <= (1.0 + LINF_SLACK) * linf_cap);
    let linf_monotone_growth = monotone_growth(&sup_linf);
    Ok(SweepReport { members, sup_linf, linf_cap, linf_bounded, linf_monotone_growth })
}

fn monotone_growth(xs: &[f64]) -> bool {
    if xs.len() < 3 || !xs.windows(2).all(|w| w[1] > w[0]) {
        return false;
    }
    let mid = xs.len() / 2;
    xs[xs.len() - 1] - xs[mid] >= xs[mid] - xs[0]
}
