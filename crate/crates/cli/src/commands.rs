//! The `run`, `sweep`, `equilibrium` and `cancellation-check` subcommands.

use std::path::{Path, PathBuf};

use bfd_core::collision::{
    cancellation_oracle, invariant_moments, CancellationSide, CancellationVariant, CutoffWindow, DistributionState,
};
use bfd_core::diagnostics::{
    decay_fit, epsilon_sweep, expected_decay_exponent, moment_inequality_monitor, DecayFit, DecayQuantity, Exponent,
    MomentMonitor, SweepSetup,
};
use bfd_core::equilibria::{saturated_state, solve_fd_params, FermiDiracParams};
use bfd_core::functionals::level_energy_functional;
use bfd_core::integrator::{integrate, write_checkpoint, TimeSeries};
use bfd_core::quadrature::Vec3;
use serde::Serialize;

use crate::config::{RunConfig, Setup};
use crate::error::{CliError, Result};
use crate::output::{create_dir, write_json, write_timeseries};

/// Relative tolerance below which a negative `D_gamma` counts as round-off.
const PRODUCTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct EntropySummary {
    pub delta_s: f64,
    pub int_d: f64,
    /// `|delta_s - int_d| / |delta_s|`.
    pub relative_gap: f64,
    pub int_scheme_rate: f64,
    pub scheme_relative_gap: f64,
    pub step_decreases: usize,
    pub min_d_gamma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub epsilon: f64,
    pub epsilon_sat: Option<f64>,
    pub reference: Option<FermiDiracParams>,
    pub steps: usize,
    pub entropy: EntropySummary,
    pub h_rel_initial: Option<f64>,
    pub h_rel_final: Option<f64>,
    pub h_rel_increases: usize,
    pub min_kappa0: f64,
    pub max_f: f64,
    pub fit_h_rel: Option<DecayFit>,
    pub fit_l1_dist: Option<DecayFit>,
    pub expected_exponent: Exponent,
    pub moment_monitor: Option<MomentMonitor>,
    /// `(K, E_K)` over the whole run.
    pub level_energy: Vec<(f64, f64)>,
    /// Invariants broken during the run; the command fails if non-empty.
    pub violations: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub series: TimeSeries,
    pub summary: RunSummary,
}

fn summarize(cfg: &RunConfig, setup: &Setup, series: &TimeSeries, f0: &DistributionState) -> Result<RunSummary> {
    let records = &series.records;
    let first = &records[0];
    let last = records.last().unwrap_or(first);
    let (delta_s, int_d) = series.entropy_balance();
    let (_, int_rate) = series.scheme_balance();
    let gap = |a: f64, b: f64| if a == 0.0 { (a - b).abs() } else { (a - b).abs() / a.abs() };
    let d_scale = records.iter().map(|r| r.d_gamma.abs()).fold(0.0, f64::max);
    let min_d = records.iter().map(|r| r.d_gamma).fold(f64::INFINITY, f64::min);
    let gamma = cfg.kernel.gamma;
    let d = &cfg.diagnostics;
    let mut violations = Vec::new();
    for v in &series.entropy_violations {
        violations.push(format!("S_eps decreased by {:e} at t = {}", v.increase, v.t));
    }
    for v in &series.h_rel_violations {
        violations.push(format!("H_rel increased by {:e} at t = {}", v.increase, v.t));
    }
    if min_d < -PRODUCTION_TOL * d_scale.max(1.0) {
        violations.push(format!("D_gamma = {min_d:e} < 0"));
    }
    let moment_monitor = match d.monitor_s {
        Some(s) => Some(moment_inequality_monitor(series, f0, setup.model.kernel(), s, d.c1_prime)?),
        None => None,
    };
    let t_end = setup.t_end + f0.time();
    let level_energy = d
        .levels
        .iter()
        .map(|&k| Ok((k, level_energy_functional(&series.states, k, f0.time(), t_end, d.level_c0, gamma, cfg.kernel.nu)?)))
        .collect::<Result<_>>()?;
    Ok(RunSummary {
        config: cfg.clone(),
        epsilon: f0.epsilon(),
        epsilon_sat: setup.epsilon_sat,
        reference: series.reference.clone(),
        steps: last.steps,
        entropy: EntropySummary {
            delta_s,
            int_d,
            relative_gap: gap(delta_s, int_d),
            int_scheme_rate: int_rate,
            scheme_relative_gap: gap(delta_s, int_rate),
            step_decreases: series.entropy_violations.len(),
            min_d_gamma: min_d,
        },
        h_rel_initial: first.h_rel,
        h_rel_final: last.h_rel,
        h_rel_increases: series.h_rel_violations.len(),
        min_kappa0: records.iter().map(|r| r.kappa0).fold(f64::INFINITY, f64::min),
        max_f: records.iter().map(|r| r.max_f).fold(0.0, f64::max),
        fit_h_rel: decay_fit(series, DecayQuantity::HRel, setup.fit_window, d.fit_s, gamma).ok(),
        fit_l1_dist: decay_fit(series, DecayQuantity::L1Dist, setup.fit_window, d.fit_s, gamma).ok(),
        expected_exponent: expected_decay_exponent(d.fit_s, gamma),
        moment_monitor,
        level_energy,
        violations,
    })
}

fn write_run(dir: &Path, cfg: &RunConfig, setup: &Setup, series: &TimeSeries, f0: &DistributionState) -> Result<RunSummary> {
    create_dir(dir)?;
    write_timeseries(dir, series, &cfg.diagnostics.etas, &cfg.diagnostics.levels)?;
    let summary = summarize(cfg, setup, series, f0)?;
    write_json(&dir.join("summary.json"), &summary)?;
    write_checkpoint(&dir.join("final_state.ckpt"), &series.final_state)?;
    Ok(summary)
}

/// Integrates the configured datum and writes `timeseries.csv`, its schema,
/// `summary.json` and `final_state.ckpt` into `cfg.output_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let setup = cfg.setup()?;
    let series = integrate(&setup.model, &setup.initial, setup.t_end, &setup.output_times, &setup.control, &setup.record)?;
    let summary = write_run(&cfg.output_dir, cfg, &setup, &series, &setup.initial)?;
    Ok(RunOutcome { dir: cfg.output_dir.clone(), series, summary })
}

/// Quantum parameters of a sweep, absolute or as fractions of `eps_sat`.
#[derive(Debug, Clone, PartialEq)]
pub enum EpsilonList {
    Absolute(Vec<f64>),
    Fractions(Vec<f64>),
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub fraction: Option<f64>,
    pub kappa0: f64,
    pub fit_exponent: Option<f64>,
    pub fit_residual: Option<f64>,
    pub final_h_rel: Option<f64>,
    pub max_linf: f64,
    pub dir: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub sup_linf: Vec<f64>,
    pub linf_cap: f64,
    pub linf_bounded: bool,
    pub linf_monotone_growth: bool,
    pub violations: Vec<String>,
}

/// Runs one member per quantum parameter from the datum sampled at the
/// configured `eps`, each into `out/eps_<k>`, plus `sweep.csv` and
/// `sweep.json` comparing them.
pub fn sweep(cfg: &RunConfig, list: &EpsilonList) -> Result<SweepSummary> {
    let setup = cfg.setup()?;
    let (epsilons, fractions): (Vec<f64>, Vec<Option<f64>>) = match list {
        EpsilonList::Absolute(e) => (e.clone(), e.iter().map(|x| setup.epsilon_sat.map(|s| x / s)).collect()),
        EpsilonList::Fractions(fr) => {
            let sat = setup.epsilon_sat.ok_or_else(|| {
                CliError::Argument("fractions of eps_sat are undefined for a saturated datum".into())
            })?;
            (fr.iter().map(|x| x * sat).collect(), fr.iter().map(|&x| Some(x)).collect())
        }
    };
    if let Some(e) = epsilons.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
        return Err(CliError::Argument(format!("epsilon {e} must be finite and >= 0")));
    }
    let d = &cfg.diagnostics;
    let sweep_setup = SweepSetup {
        model: &setup.model,
        t_end: setup.t_end,
        output_times: &setup.output_times,
        control: setup.control,
        record: setup.record.clone(),
        fit_window: setup.fit_window,
        fit_s: d.fit_s,
    };
    let report = epsilon_sweep(&setup.initial, &epsilons, &sweep_setup)?;
    create_dir(&cfg.output_dir)?;
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for (k, m) in report.members.iter().enumerate() {
        let name = format!("eps_{k}");
        let mut member_cfg = cfg.clone();
        member_cfg.physics.epsilon = Some(m.epsilon);
        member_cfg.physics.epsilon_fraction = None;
        member_cfg.output_dir = cfg.output_dir.join(&name);
        let f0 = DistributionState::new(setup.grid.clone(), setup.initial.values().to_vec(), m.epsilon)?;
        let summary = write_run(&member_cfg.output_dir, &member_cfg, &setup, &m.series, &f0)?;
        violations.extend(summary.violations.iter().map(|v| format!("eps = {}: {v}", m.epsilon)));
        rows.push(SweepRow {
            epsilon: m.epsilon,
            fraction: fractions[k],
            kappa0: m.kappa0,
            fit_exponent: m.fit.map(|f| f.exponent),
            fit_residual: m.fit.map(|f| f.residual),
            final_h_rel: m.final_h_rel,
            max_linf: m.max_linf,
            dir: name,
        });
    }
    let path = cfg.output_dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["epsilon", "fraction", "kappa0", "fit_exponent", "fit_residual", "final_h_rel", "max_linf", "dir"])?;
    let opt = |x: Option<f64>| x.map_or_else(String::new, |v| format!("{v:e}"));
    for r in &rows {
        w.write_record([
            format!("{:e}", r.epsilon),
            opt(r.fraction),
            format!("{:e}", r.kappa0),
            opt(r.fit_exponent),
            opt(r.fit_residual),
            opt(r.final_h_rel),
            format!("{:e}", r.max_linf),
            r.dir.clone(),
        ])?;
    }
    w.flush().map_err(crate::error::io_at(&path))?;
    let summary = SweepSummary {
        rows,
        sup_linf: report.sup_linf,
        linf_cap: report.linf_cap,
        linf_bounded: report.linf_bounded,
        linf_monotone_growth: report.linf_monotone_growth,
        violations,
    };
    write_json(&cfg.output_dir.join("sweep.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscreteCheck {
    /// Discrete `(mass, momentum, energy)` minus the prescribed values.
    pub moment_errors: [f64; 5],
    /// `||Q(M)||_{L^1}` without projection.
    pub collision_l1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReport {
    pub rho: f64,
    pub u: [f64; 3],
    pub theta: Option<f64>,
    pub epsilon: f64,
    pub epsilon_sat: Option<f64>,
    pub params: Option<FermiDiracParams>,
    pub max_density: Option<f64>,
    /// Radius and discrete mass defect of the saturated state, when
    /// `eps >= eps_sat`.
    pub saturated: Option<(f64, f64)>,
    pub discrete: Option<DiscreteCheck>,
}

/// Fermi-Dirac statistics (or the saturated state) with the datum's nominal
/// moments, sampled and checked on the configured grid.
pub fn equilibrium(cfg: &RunConfig) -> Result<EquilibriumReport> {
    let grid = cfg.grid()?;
    let model = cfg.model()?;
    let eps = cfg.epsilon()?;
    let (rho, u, theta) = cfg.initial.nominal_moments();
    let sat = theta.map(|t| bfd_core::equilibria::epsilon_sat(rho, t));
    let mut report = EquilibriumReport {
        rho,
        u,
        theta,
        epsilon: eps,
        epsilon_sat: sat,
        params: None,
        max_density: None,
        saturated: None,
        discrete: None,
    };
    let state = match theta {
        Some(t) if sat.is_some_and(|s| eps < s) => {
            let p = solve_fd_params(rho, u, t, eps)?;
            report.max_density = Some(p.max_density());
            let s = p.sample(&grid)?;
            report.params = Some(p);
            s
        }
        _ => {
            let s = saturated_state(rho, u, eps, &grid)?;
            report.saturated = Some((s.radius, s.mass_defect));
            s.state
        }
    };
    let m = invariant_moments(&grid, state.values());
    let target_energy = theta.map_or(m[4], |t| rho * (3.0 * t + u.iter().map(|x| x * x).sum::<f64>()));
    let q = model.collide(&state, false)?.values;
    report.discrete = Some(DiscreteCheck {
        moment_errors: [m[0] - rho, m[1] - rho * u[0], m[2] - rho * u[1], m[3] - rho * u[2], m[4] - target_energy],
        collision_l1: grid.integrate(&q.iter().map(|x| x.abs()).collect::<Vec<_>>())?,
    });
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("equilibrium.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct CancellationRow {
    pub variant: String,
    pub direct: f64,
    pub reduced: Option<f64>,
    pub relative_gap: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CancellationReport {
    pub lambda: f64,
    pub upper: Option<f64>,
    pub probe: [f64; 3],
    pub tolerance: f64,
    pub rows: Vec<CancellationRow>,
    pub pass: bool,
}

/// Direct and reduced sides of both cancellation identities for the
/// configured datum and kernel, with `Phi(r) = r^gamma` on `lambda < r <= upper`.
pub fn cancellation_check(
    cfg: &RunConfig,
    lambda: f64,
    upper: Option<f64>,
    probe: [f64; 3],
    tolerance: f64,
) -> Result<CancellationReport> {
    let setup = cfg.setup()?;
    let window = match upper {
        Some(u) => CutoffWindow::between(lambda, u),
        None => CutoffWindow::above(lambda),
    };
    let p = Vec3::from(probe);
    let kernel = setup.model.kernel();
    let sphere = setup.model.sphere();
    let mut rows = Vec::new();
    for (name, variant) in [("gain", CancellationVariant::Gain), ("partner", CancellationVariant::Partner)] {
        let direct = cancellation_oracle(&setup.initial, kernel, sphere, window, &p, variant, CancellationSide::Direct)?;
        let (reduced, error) =
            match cancellation_oracle(&setup.initial, kernel, sphere, window, &p, variant, CancellationSide::Reduced) {
                Ok(x) => (Some(x), None),
                Err(e) => (None, Some(e.to_string())),
            };
        let relative_gap = reduced.map(|r| (direct - r).abs() / r.abs().max(f64::MIN_POSITIVE));
        rows.push(CancellationRow { variant: name.into(), direct, reduced, relative_gap, error });
    }
    let pass = rows.iter().all(|r| r.relative_gap.is_some_and(|g| g <= tolerance));
    let report = CancellationReport { lambda, upper, probe, tolerance, rows, pass };
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("cancellation.json"), &report)?;
    Ok(report)
}
