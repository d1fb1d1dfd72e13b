//! Time stepping: bound-checked SSP-RK2 with step halving, trajectory
//! recording, the Picard operator of the mild formulation, and binary
//! checkpoints.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::collision::{invariant_moments, CollisionModel, DistributionState, LOG_FLOOR};
use crate::equilibria::{reference_equilibrium, FermiDiracParams};
use crate::error::{Error, Result};
use crate::functionals::{
    boltzmann_entropy, csiszar_kullback_gap, entropy_s, kappa0, moment, relative_entropy, weighted_l1,
    CsiszarKullback,
};
use crate::quadrature::VelocityGrid;

/// Relative slack of the per-step entropy monotonicity check.
pub const ENTROPY_STEP_TOL: f64 = 1e-10;

/// Step-size control of [`step`].
///
/// `dt = 0` means "not chosen yet": the first step sets it to
/// `safety / max_i(loss rate_i)`, clipped to `[dt_min, dt_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepControl {
    pub dt: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub safety: f64,
    pub tol_bound: f64,
    pub max_halvings: u32,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { dt: 0.0, dt_min: 1e-8, dt_max: 0.05, safety: 0.1, tol_bound: 1e-12, max_halvings: 30 }
    }
}

impl StepControl {
    pub fn fixed(dt: f64) -> Self {
        Self { dt, dt_min: dt.min(1e-8), dt_max: dt, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_min > 0.0
            && self.dt_min <= self.dt_max
            && self.dt_max.is_finite()
            && (self.dt == 0.0 || (self.dt >= self.dt_min && self.dt <= self.dt_max))
            && self.safety > 0.0
            && self.tol_bound >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("inconsistent step control {self:?}")))
        }
    }

    fn initial_dt(&self, rates: &[f64]) -> f64 {
        let top = rates.iter().copied().fold(0.0, f64::max);
        let dt = if top > 0.0 { self.safety / top } else { self.dt_max };
        dt.clamp(self.dt_min, self.dt_max)
    }
}

/// Accepted step: the new state (time advanced), the step used and the
/// number of halvings it took.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub state: DistributionState,
    pub dt: f64,
    pub halvings: u32,
}

fn evaluate(model: &CollisionModel, f: &DistributionState, classical: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    if classical {
        model.rhs_classical(f)
    } else {
        model.rhs(f)
    }
}

/// Worst bound violation beyond `tol`, as `(node, value)`.
fn worst_violation(values: &[f64], bound: f64, tol: f64) -> Option<(usize, f64)> {
    let mut worst: Option<(usize, f64, f64)> = None;
    for (i, &x) in values.iter().enumerate() {
        let excess = if x.is_nan() { f64::INFINITY } else { (-x).max(x - bound) };
        if excess > tol && worst.is_none_or(|w| excess > w.2) {
            worst = Some((i, x, excess));
        }
    }
    worst.map(|(i, x, _)| (i, x))
}

/// `int ln((1 - eps f) / f) q`: the rate of change of `S_eps` along `q`
/// (for `eps = 0`, of `int (f - f ln f)`), with the logarithms floored.
pub fn entropy_rate(f: &DistributionState, q: &[f64]) -> f64 {
    let eps = f.epsilon();
    let w = f.grid().cell_weight();
    f.values()
        .iter()
        .zip(q)
        .map(|(&x, &dq)| ((1.0 - eps * x).max(LOG_FLOOR) / x.max(LOG_FLOOR)).ln() * dq)
        .sum::<f64>()
        * w
}

fn clamp_into(values: &mut [f64], bound: f64) {
    for x in values.iter_mut() {
        *x = x.clamp(0.0, bound);
    }
}

/// One SSP-RK2 (Heun) step with the conservation-corrected right-hand side,
/// at most `limit` long. A stage leaving `[-tol, 1/eps + tol]` halves `dt`;
/// the accepted state is clamped into `[0, 1/eps]`. A reduced `dt` is kept
/// for later steps.
pub fn step(model: &CollisionModel, f: &DistributionState, ctl: &mut StepControl, limit: f64) -> Result<StepReport> {
    step_with(model, f, ctl, limit, false, None)
}

fn step_with(
    model: &CollisionModel,
    f: &DistributionState,
    ctl: &mut StepControl,
    limit: f64,
    classical: bool,
    first_stage: Option<(Vec<f64>, Vec<f64>)>,
) -> Result<StepReport> {
    ctl.validate()?;
    let (k1, rates) = match first_stage {
        Some(k) => k,
        None => evaluate(model, f, classical)?,
    };
    if ctl.dt == 0.0 {
        ctl.dt = ctl.initial_dt(&rates);
    }
    let bound = f.pauli_bound();
    let f0 = f.values();
    let mut dt = ctl.dt.min(limit);
    let mut last = (0, f64::NAN);
    for halvings in 0..=ctl.max_halvings {
        let mut u1: Vec<f64> = f0.iter().zip(&k1).map(|(x, k)| x + dt * k).collect();
        if let Some(bad) = worst_violation(&u1, bound, ctl.tol_bound) {
            last = bad;
        } else {
            clamp_into(&mut u1, bound);
            let s1 = DistributionState::new(f.grid().clone(), u1, f.epsilon())?;
            let (k2, _) = evaluate(model, &s1, classical)?;
            let mut u2: Vec<f64> =
                f0.iter().zip(s1.values()).zip(&k2).map(|((x, y), k)| 0.5 * x + 0.5 * (y + dt * k)).collect();
            if let Some(bad) = worst_violation(&u2, bound, ctl.tol_bound) {
                last = bad;
            } else {
                clamp_into(&mut u2, bound);
                let state = DistributionState::new(f.grid().clone(), u2, f.epsilon())?.with_time(f.time() + dt);
                return Ok(StepReport { state, dt, halvings });
            }
        }
        if halvings == ctl.max_halvings || dt / 2.0 < ctl.dt_min {
            break;
        }
        dt /= 2.0;
        ctl.dt = ctl.dt.min(dt);
    }
    Err(Error::StepFailure { time: f.time(), node: last.0, value: last.1 })
}

/// What to record at each output time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordOptions {
    /// Moment orders `s` of `m_s`.
    pub moments: Vec<f64>,
    /// Exponents `eta` of extra entropy productions `D^(eta)`.
    pub etas: Vec<f64>,
    /// Evaluate `D^(gamma)` at every step for the time integral `int D`.
    pub per_step_production: bool,
    /// Keep the full state at every output time.
    pub keep_states: bool,
    /// Use the dedicated classical sweep (requires `eps = 0`).
    pub classical_path: bool,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self { moments: vec![2.0, 4.0], etas: vec![], per_step_production: true, keep_states: false, classical_path: false }
    }
}

/// Functionals of the state at one output time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub mass: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
    /// `(s, m_s)` for every requested order.
    pub moments: Vec<(f64, f64)>,
    /// `int f^2`.
    pub big_m0: f64,
    pub s_eps: f64,
    pub h: f64,
    /// `H_eps(f | M_eps)` against the reference statistics (if they exist).
    pub h_rel: Option<f64>,
    /// `||f - M_eps||_{L^1}`.
    pub l1_dist: Option<f64>,
    pub ck: Option<CsiszarKullback>,
    pub d_gamma: f64,
    /// `(eta, D^(eta))` for every extra exponent.
    pub d_eta: Vec<(f64, f64)>,
    /// `int_0^t D^(gamma)` by the trapezoidal rule over the steps taken.
    pub d_integral: f64,
    /// `int_0^t` of [`entropy_rate`] along the corrected right-hand side, by
    /// the same rule: the entropy change the scheme itself produces.
    pub rate_integral: f64,
    pub max_f: f64,
    pub kappa0: f64,
    /// Last accepted step (0 before the first step).
    pub dt: f64,
    pub steps: usize,
}

/// Entropy after one accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: f64,
    pub dt: f64,
    pub s_eps: f64,
    pub d_gamma: Option<f64>,
}

/// A post-hoc monotonicity violation: `value` rose by `increase` at `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub increase: f64,
}

#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub records: Vec<Record>,
    pub steps: Vec<StepLog>,
    pub states: Vec<DistributionState>,
    pub final_state: DistributionState,
    pub reference: Option<FermiDiracParams>,
    /// Outputs where `H_eps(f | M_eps)` increased.
    pub h_rel_violations: Vec<Violation>,
    /// Steps where `S_eps` decreased by more than [`ENTROPY_STEP_TOL`] relative.
    pub entropy_violations: Vec<Violation>,
}

impl TimeSeries {
    /// `S_eps(T) - S_eps(0)` and `int_0^T D^(gamma)`.
    pub fn entropy_balance(&self) -> (f64, f64) {
        let first = &self.records[0];
        let last = self.records.last().unwrap_or(first);
        (last.s_eps - first.s_eps, last.d_integral)
    }

    /// `S_eps(T) - S_eps(0)` and the time integral of the scheme's own
    /// entropy rate.
    pub fn scheme_balance(&self) -> (f64, f64) {
        let first = &self.records[0];
        let last = self.records.last().unwrap_or(first);
        (last.s_eps - first.s_eps, last.rate_integral)
    }
}

struct Recorder<'a> {
    model: &'a CollisionModel,
    opts: &'a RecordOptions,
    reference: Option<(FermiDiracParams, DistributionState)>,
}

impl Recorder<'_> {
    fn record(&self, f: &DistributionState, d_gamma: Option<f64>, d_integral: f64, dt: f64, steps: usize) -> Result<Record> {
        let grid = f.grid();
        let m = invariant_moments(grid, f.values());
        let mut etas = vec![self.model.kernel().gamma()];
        etas.extend(&self.opts.etas);
        let prods = match d_gamma {
            Some(d) if self.opts.etas.is_empty() => vec![d],
            _ => self.model.entropy_production(f, &etas)?,
        };
        let (h_rel, l1_dist, ck) = match &self.reference {
            Some((p, mref)) => {
                let diff: Vec<f64> = f.values().iter().zip(mref.values()).map(|(a, b)| a - b).collect();
                (
                    Some(relative_entropy(f, mref)?),
                    Some(weighted_l1(grid, &diff, 0.0)?),
                    Some(csiszar_kullback_gap(f, p)?),
                )
            }
            None => (None, None, None),
        };
        Ok(Record {
            t: f.time(),
            mass: m[0],
            momentum: [m[1], m[2], m[3]],
            energy: m[4],
            moments: self.opts.moments.iter().map(|&s| (s, moment(f, s).m_s)).collect(),
            big_m0: moment(f, 0.0).big_m_s,
            s_eps: entropy_s(f)?,
            h: boltzmann_entropy(f),
            h_rel,
            l1_dist,
            ck,
            d_gamma: prods[0],
            d_eta: self.opts.etas.iter().copied().zip(prods[1..].iter().copied()).collect(),
            d_integral,
            rate_integral: 0.0,
            max_f: f.max_value(),
            kappa0: kappa0(f),
            dt,
            steps,
        })
    }
}

/// Advances `f0` to `t_end`, landing exactly on every output time in
/// `(0, t_end]` (sorted; `t_end` is always an output) and recording the
/// functionals there. `f0` is recorded at its own time. Monotonicity of
/// `H_eps(f | M_eps)` across outputs and of `S_eps` across steps is checked
/// after the fact and reported, not enforced.
pub fn integrate(
    model: &CollisionModel,
    f0: &DistributionState,
    t_end: f64,
    output_times: &[f64],
    ctl: &StepControl,
    opts: &RecordOptions,
) -> Result<TimeSeries> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("T_end = {t_end} must be finite and >= 0")));
    }
    if opts.classical_path && f0.epsilon() != 0.0 {
        return Err(Error::InvalidArgument("classical path requires eps = 0".into()));
    }
    f0.validate(ctl.tol_bound.max(crate::collision::BOUND_TOL))?;
    let mut ctl = *ctl;
    ctl.validate()?;
    let t0 = f0.time();
    let mut outputs: Vec<f64> = output_times.iter().map(|t| t0 + t).filter(|&t| t > t0 && t < t0 + t_end).collect();
    outputs.push(t0 + t_end);
    outputs.sort_by(f64::total_cmp);
    outputs.dedup();
    if t_end == 0.0 {
        outputs.clear();
    }

    // The reference statistics only exist below saturation.
    let reference = match reference_equilibrium(f0) {
        Ok(p) => {
            let m = p.sample(f0.grid())?;
            Some((p, m))
        }
        Err(Error::SaturationExceeded { .. }) => None,
        Err(e) => return Err(e),
    };
    let recorder = Recorder { model, opts, reference };
    let gamma = model.kernel().gamma();
    let production = |f: &DistributionState| -> Result<Option<f64>> {
        if opts.per_step_production {
            Ok(Some(model.entropy_production(f, &[gamma])?[0]))
        } else {
            Ok(None)
        }
    };

    let mut f = f0.clone();
    let mut d_now = production(&f)?;
    let mut d_integral = 0.0;
    let mut s_now = entropy_s(&f)?;
    let mut steps = Vec::new();
    let mut entropy_violations = Vec::new();
    let mut records = vec![recorder.record(&f, d_now, 0.0, 0.0, 0)?];
    let mut states = if opts.keep_states { vec![f.clone()] } else { vec![] };
    let mut n_steps = 0;
    let mut last_dt = 0.0;
    let mut prev_out = (f.time(), records[0].d_gamma);
    // The first RK stage at the current state doubles as the entropy rate.
    let mut stage = if outputs.is_empty() { None } else { Some(evaluate(model, &f, opts.classical_path)?) };
    let mut rate_now = stage.as_ref().map_or(0.0, |k| entropy_rate(&f, &k.0));
    let mut rate_integral = 0.0;
    for &target in &outputs {
        while f.time() < target {
            let remaining = target - f.time();
            let report = step_with(model, &f, &mut ctl, remaining, opts.classical_path, stage.take())?;
            f = report.state;
            let next = evaluate(model, &f, opts.classical_path)?;
            let rate_next = entropy_rate(&f, &next.0);
            rate_integral += 0.5 * report.dt * (rate_now + rate_next);
            rate_now = rate_next;
            stage = Some(next);
            // Guard against round-off leaving a sliver before the output time.
            if (target - f.time()).abs() <= 1e-12 * target.abs().max(1.0) {
                f.set_time(target);
            }
            n_steps += 1;
            last_dt = report.dt;
            let s_next = entropy_s(&f)?;
            if s_next < s_now - ENTROPY_STEP_TOL * s_now.abs() {
                entropy_violations.push(Violation { t: f.time(), increase: s_now - s_next });
            }
            s_now = s_next;
            let d_next = production(&f)?;
            if let (Some(a), Some(b)) = (d_now, d_next) {
                d_integral += 0.5 * report.dt * (a + b);
            }
            d_now = d_next;
            steps.push(StepLog { t: f.time(), dt: report.dt, s_eps: s_next, d_gamma: d_next });
        }
        let mut rec = recorder.record(&f, d_now, d_integral, last_dt, n_steps)?;
        if !opts.per_step_production {
            // Without per-step values, integrate over the output times.
            d_integral += 0.5 * (rec.t - prev_out.0) * (prev_out.1 + rec.d_gamma);
            rec.d_integral = d_integral;
        }
        rec.rate_integral = rate_integral;
        prev_out = (rec.t, rec.d_gamma);
        records.push(rec);
        if opts.keep_states {
            states.push(f.clone());
        }
    }
    let h_rel_violations = records
        .windows(2)
        .filter_map(|w| match (w[0].h_rel, w[1].h_rel) {
            (Some(a), Some(b)) if b > a => Some(Violation { t: w[1].t, increase: b - a }),
            _ => None,
        })
        .collect();
    Ok(TimeSeries {
        records,
        steps,
        states,
        final_state: f,
        reference: recorder.reference.map(|(p, _)| p),
        h_rel_violations,
        entropy_violations,
    })
}

/// `||g||_delta = max_m ||g_m||_{L^1_2}` over the time samples.
fn traj_norm(grid: &VelocityGrid, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let mut top = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
        top = top.max(weighted_l1(grid, &d, 2.0)?);
    }
    Ok(top)
}

/// Picard operator `J(f)(t) = f_in + int_0^t Q(|f| ^ 1/eps)` on the uniform
/// samples `t_m = m delta / M`, `m = 0..=M`, with the cumulative trapezoidal
/// rule. `Q` is the conservation-corrected right-hand side of [`step`].
pub fn picard_apply(
    model: &CollisionModel,
    traj: &[Vec<f64>],
    f_in: &DistributionState,
    delta: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta = {delta} must be >= 0")));
    }
    if traj.len() < 2 {
        return Err(Error::InsufficientData("Picard trajectory needs at least two samples".into()));
    }
    let bound = f_in.pauli_bound();
    let h = delta / (traj.len() - 1) as f64;
    let mut rates = Vec::with_capacity(traj.len());
    for values in traj {
        let truncated: Vec<f64> = values.iter().map(|x| x.abs().min(bound)).collect();
        let s = DistributionState::new(f_in.grid().clone(), truncated, f_in.epsilon())?;
        rates.push(if delta == 0.0 { vec![0.0; values.len()] } else { model.rhs(&s)?.0 });
    }
    let mut out = Vec::with_capacity(traj.len());
    let mut acc = f_in.values().to_vec();
    out.push(acc.clone());
    for m in 1..traj.len() {
        for (i, a) in acc.iter_mut().enumerate() {
            *a += 0.5 * h * (rates[m - 1][i] + rates[m][i]);
        }
        out.push(acc.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PicardResult {
    /// Samples at `t_m = m delta / M`.
    pub trajectory: Vec<Vec<f64>>,
    /// `r_k = ||f^(k+1) - f^(k)||_delta`.
    pub differences: Vec<f64>,
    /// `r_{k+1} / r_k`.
    pub ratios: Vec<f64>,
    pub converged: bool,
}

impl PicardResult {
    pub fn at_end(&self) -> &[f64] {
        self.trajectory.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Iterates `f^(k+1) = J(f^(k))` from the constant trajectory `f_in` until
/// `r_k <= tol ||f_in||_{L^1_2}` or `max_iter` applications.
pub fn picard_solve(
    model: &CollisionModel,
    f_in: &DistributionState,
    delta: f64,
    sub_samples: usize,
    max_iter: usize,
    tol: f64,
) -> Result<PicardResult> {
    if sub_samples == 0 {
        return Err(Error::InvalidArgument("need at least one Picard sub-interval".into()));
    }
    let grid = f_in.grid();
    let scale = weighted_l1(grid, f_in.values(), 2.0)?.max(f64::MIN_POSITIVE);
    let mut traj = vec![f_in.values().to_vec(); sub_samples + 1];
    let mut differences = Vec::new();
    let mut ratios = Vec::new();
    let mut rising = 0;
    for _ in 0..max_iter.max(1) {
        let next = picard_apply(model, &traj, f_in, delta)?;
        let r = traj_norm(grid, &next, &traj)?;
        traj = next;
        if let Some(&prev) = differences.last() {
            let ratio: f64 = if prev > 0.0 { r / prev } else { 0.0 };
            ratios.push(ratio);
            rising = if ratio >= 1.0 { rising + 1 } else { 0 };
            if rising >= 3 {
                return Err(Error::PicardDivergence { ratio });
            }
        }
        differences.push(r);
        if r <= tol * scale {
            return Ok(PicardResult { trajectory: traj, differences, ratios, converged: true });
        }
    }
    Ok(PicardResult { trajectory: traj, differences, ratios, converged: false })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"BFDCKPT1";

/// Writes a state as: magic `BFDCKPT1`, `u32` points per axis, then `f64`
/// half-width, `eps` and time, then the node values in grid order, all
/// little-endian.
pub fn write_checkpoint(path: &Path, f: &DistributionState) -> Result<()> {
    let grid = f.grid();
    let mut buf = Vec::with_capacity(36 + 8 * grid.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let n = u32::try_from(grid.points_per_axis()).map_err(|_| Error::Checkpoint("grid too large".into()))?;
    buf.extend_from_slice(&n.to_le_bytes());
    for x in [grid.half_width(), f.epsilon(), f.time()] {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    for x in f.values() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<DistributionState> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 36 || &buf[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("missing BFDCKPT1 header".into()));
    }
    let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().expect("8 bytes"));
    let n = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes")) as usize;
    let (half_width, eps, time) = (f64_at(12), f64_at(20), f64_at(28));
    let grid = VelocityGrid::new(half_width, n)?;
    if buf.len() != 36 + 8 * grid.len() {
        return Err(Error::Checkpoint(format!("expected {} value bytes, found {}", 8 * grid.len(), buf.len() - 36)));
    }
    let values = (0..grid.len()).map(|i| f64_at(36 + 8 * i)).collect();
    Ok(DistributionState::new_unchecked(grid, values, eps)?.with_time(time))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::{epsilon_sat, solve_fd_params};
    use crate::kernel::CollisionKernelSpec;
    use crate::quadrature::{SphereQuadrature, Vec3};
    use std::f64::consts::PI;

    fn model() -> CollisionModel {
        let k = CollisionKernelSpec::constant(-0.5, 0.75, 1.0 / (4.0 * PI)).unwrap();
        CollisionModel::new(k, SphereQuadrature::new(3).unwrap())
    }

    fn mixture(grid: &VelocityGrid, eps: f64) -> DistributionState {
        let g = |c: f64| {
            let a = 0.5 * (2.0 * PI * 0.5f64).powf(-1.5);
            grid.tabulate(|v| a * (-(v - Vec3::new(c, 0.0, 0.0)).norm_squared()).exp())
        };
        let vals = g(1.0).iter().zip(g(-1.0)).map(|(a, b)| a + b).collect();
        DistributionState::new(grid.clone(), vals, eps).unwrap()
    }

    #[test]
    fn zero_state_stays_zero() {
        let g = VelocityGrid::new(3.0, 6).unwrap();
        let f = DistributionState::zeros(g, 0.5).unwrap();
        let mut ctl = StepControl::fixed(0.1);
        let r = step(&model(), &f, &mut ctl, 1.0).unwrap();
        assert!(r.state.values().iter().all(|&x| x == 0.0));
        assert_eq!(r.state.time(), 0.1);
    }

    #[test]
    fn equilibrium_is_nearly_stationary() {
        let g = VelocityGrid::new(5.0, 10).unwrap();
        let p = solve_fd_params(1.0, [0.0; 3], 0.8, 0.3 * epsilon_sat(1.0, 0.8)).unwrap();
        let f = p.sample(&g).unwrap();
        let m = model();
        let mut ctl = StepControl::fixed(0.01);
        let r = step(&m, &f, &mut ctl, 1.0).unwrap();
        let change = r.state.values().iter().zip(f.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        // One step moves the sample by dt times the (small) discretization residual of Q.
        let residual = m.rhs(&f).unwrap().0.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        assert!(change <= 0.011 * residual + 1e-15, "{change} {residual}");
    }

    #[test]
    fn steps_conserve_invariants() {
        let g = VelocityGrid::new(4.0, 8).unwrap();
        let f0 = mixture(&g, 3.0);
        let m0 = invariant_moments(&g, f0.values());
        let mut f = f0;
        let mut ctl = StepControl::default();
        let m = model();
        for _ in 0..5 {
            f = step(&m, &f, &mut ctl, 1.0).unwrap().state;
            let mk = invariant_moments(&g, f.values());
            for (a, b) in m0.iter().zip(&mk) {
                assert!((a - b).abs() <= 1e-11 * (m0[0] + m0[4]), "{m0:?} {mk:?}");
            }
        }
        assert!(f.time() > 0.0);
    }

    #[test]
    fn initial_dt_follows_loss_rate() {
        let g = VelocityGrid::new(4.0, 8).unwrap();
        let f = mixture(&g, 1.0);
        let m = model();
        let (_, rates) = m.rhs(&f).unwrap();
        let top = rates.iter().copied().fold(0.0, f64::max);
        let mut ctl = StepControl { dt_max: 10.0, ..StepControl::default() };
        let r = step(&m, &f, &mut ctl, 10.0).unwrap();
        assert_eq!(r.dt, 0.1 / top);
    }

    #[test]
    fn halving_then_failure() {
        // A state touching the Pauli bound with a large step must shrink dt;
        // with no halvings allowed it fails loudly.
        let g = VelocityGrid::new(3.0, 6).unwrap();
        let eps = 4.0;
        let vals = g.tabulate(|v| if v.norm() < 1.2 { 1.0 / eps } else { 0.05 * (-v.norm_squared()).exp() });
        let f = DistributionState::new(g, vals, eps).unwrap();
        let m = model();
        let mut ctl = StepControl { dt: 50.0, dt_max: 50.0, max_halvings: 0, ..StepControl::default() };
        assert!(matches!(step(&m, &f, &mut ctl, 50.0), Err(Error::StepFailure { .. })));
        let mut ctl = StepControl { dt: 50.0, dt_max: 50.0, ..StepControl::default() };
        let r = step(&m, &f, &mut ctl, 50.0).unwrap();
        assert!(r.halvings > 0 && r.dt < 50.0);
        assert!(r.state.values().iter().all(|&x| (0.0..=1.0 / eps).contains(&x)));
    }

    #[test]
    fn zero_horizon_records_initial_state() {
        let g = VelocityGrid::new(4.0, 6).unwrap();
        let f = mixture(&g, 1.0);
        let ts = integrate(&model(), &f, 0.0, &[], &StepControl::default(), &RecordOptions::default()).unwrap();
        assert_eq!(ts.records.len(), 1);
        assert_eq!(ts.records[0].t, 0.0);
        assert!(ts.steps.is_empty());
    }

    #[test]
    fn integrate_lands_on_outputs() {
        let g = VelocityGrid::new(4.0, 6).unwrap();
        let f = mixture(&g, 1.0);
        let ctl = StepControl::fixed(0.04);
        let ts = integrate(&model(), &f, 0.2, &[0.05, 0.1], &ctl, &RecordOptions::default()).unwrap();
        let times: Vec<f64> = ts.records.iter().map(|r| r.t).collect();
        assert_eq!(times, vec![0.0, 0.05, 0.1, 0.2]);
        let (ds, int_d) = ts.entropy_balance();
        assert!(ds > 0.0 && int_d > 0.0);
        assert!(ts.h_rel_violations.is_empty());
    }

    #[test]
    fn scheme_entropy_balance_closes_in_time() {
        let g = VelocityGrid::new(4.0, 6).unwrap();
        let f = mixture(&g, 1.0);
        let m = model();
        let opts = RecordOptions { per_step_production: false, ..RecordOptions::default() };
        let gap = |dt: f64| {
            let (ds, rate) = integrate(&m, &f, 0.4, &[], &StepControl::fixed(dt), &opts).unwrap().scheme_balance();
            (ds - rate).abs() / ds.abs()
        };
        let (a, b) = (gap(0.1), gap(0.05));
        assert!(b < 1e-2 && a / b > 3.0, "{a} {b}");
    }

    #[test]
    fn second_order_in_time() {
        let g = VelocityGrid::new(4.0, 6).unwrap();
        let f = mixture(&g, 1.0);
        let m = model();
        let opts = RecordOptions { per_step_production: false, ..RecordOptions::default() };
        let run = |dt: f64| {
            integrate(&m, &f, 0.4, &[], &StepControl::fixed(dt), &opts).unwrap().final_state.into_values()
        };
        let (a, b, c) = (run(0.1), run(0.05), run(0.025));
        let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let ratio = d(&a, &b) / d(&b, &c);
        assert!(ratio > 3.5 && ratio < 4.5, "{ratio}");
    }

    #[test]
    fn classical_path_matches_generic_bitwise() {
        let g = VelocityGrid::new(4.0, 6).unwrap();
        let f = mixture(&g, 0.0);
        let m = model();
        let run = |classical| {
            let opts = RecordOptions { classical_path: classical, ..RecordOptions::default() };
            integrate(&m, &f, 0.1, &[], &StepControl::fixed(0.05), &opts).unwrap().final_state.into_values()
        };
        assert_eq!(run(false), run(true));
        let quantum = mixture(&g, 1.0);
        let opts = RecordOptions { classical_path: true, ..RecordOptions::default() };
        assert!(integrate(&m, &quantum, 0.1, &[], &StepControl::default(), &opts).is_err());
    }

    #[test]
    fn picard_basics() {
        let g = VelocityGrid::new(4.0, 6).unwrap();
        let f = mixture(&g, 1.0);
        let m = model();
        let r = picard_solve(&m, &f, 0.0, 8, 10, 1e-13).unwrap();
        assert!(r.converged && r.differences == vec![0.0]);
        assert_eq!(r.trajectory[0], f.values());

        // One application to the constant trajectory is f_in + t Q(f_in).
        let traj = vec![f.values().to_vec(); 5];
        let out = picard_apply(&m, &traj, &f, 0.2).unwrap();
        let q = m.rhs(&f).unwrap().0;
        for (mi, row) in out.iter().enumerate() {
            let t = 0.05 * mi as f64;
            for (i, x) in row.iter().enumerate() {
                assert!((x - (f.values()[i] + t * q[i])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn picard_contraction_scales_with_delta() {
        let g = VelocityGrid::new(4.0, 6).unwrap();
        let f = mixture(&g, 1.0);
        let m = model();
        let a = picard_solve(&m, &f, 0.2, 8, 6, 0.0).unwrap();
        let b = picard_solve(&m, &f, 0.1, 8, 6, 0.0).unwrap();
        let (ra, rb) = (a.ratios[1], b.ratios[1]);
        assert!(ra < 1.0 && rb < ra, "{ra} {rb}");
        assert!((ra / rb - 2.0).abs() < 0.6, "{ra} {rb}");
    }

    #[test]
    fn picard_fixed_point_matches_rk() {
        let g = VelocityGrid::new(4.0, 6).unwrap();
        let f = mixture(&g, 1.0);
        let m = model();
        let err = |delta: f64| {
            let p = picard_solve(&m, &f, delta, 8, 60, 1e-15).unwrap();
            let opts = RecordOptions { per_step_production: false, ..RecordOptions::default() };
            let rk = integrate(&m, &f, delta, &[], &StepControl::fixed(delta / 8.0), &opts).unwrap().final_state;
            let d: Vec<f64> = p.at_end().iter().zip(rk.values()).map(|(a, b)| a - b).collect();
            weighted_l1(&g, &d, 2.0).unwrap()
        };
        let (e1, e2) = (err(0.1), err(0.05));
        assert!(e1 / e2 >= 3.5, "{e1} {e2}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = VelocityGrid::new(3.5, 6).unwrap();
        let f = mixture(&g, 0.7).with_time(1.25);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        write_checkpoint(&path, &f).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, f);
        std::fs::write(&path, b"garbage").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
