//! Direct quadrature of the Boltzmann-Fermi-Dirac collision operator
//!
//! `Q(f)(v) = int int B [f' f'_* (1 - eps f)(1 - eps f_*) - f f_* (1 - eps f')(1 - eps f'_*)] dsigma dv_*`
//!
//! on a [`VelocityGrid`]: `v_*` runs over the grid nodes (the coincident node
//! excluded), the angular integral uses a [`SphereQuadrature`], and the
//! post-collision values are trilinear samples of the node values.

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::CollisionKernelSpec;
use crate::quadrature::{adaptive, SphereQuadrature, Vec3, VelocityGrid};

/// Absolute slack allowed on `0 <= f <= 1/eps` when validating states.
pub const BOUND_TOL: f64 = 1e-12;

/// Floor applied to `f` and `1 - eps f` inside entropy log-ratios.
pub const LOG_FLOOR: f64 = 1e-30;

/// Fixed number of work units in the pair sweeps.
const SWEEP_TASKS: usize = 64;

/// Node values of a distribution together with its grid, `eps` and time.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionState {
    grid: VelocityGrid,
    values: Vec<f64>,
    epsilon: f64,
    time: f64,
}

impl DistributionState {
    /// Validates `0 <= f <= 1/eps` (up to [`BOUND_TOL`]) and finiteness.
    pub fn new(grid: VelocityGrid, values: Vec<f64>, epsilon: f64) -> Result<Self> {
        let state = Self::new_unchecked(grid, values, epsilon)?;
        state.validate(BOUND_TOL)?;
        Ok(state)
    }

    /// Checks only the length and `eps`; bounds are left to the caller.
    pub fn new_unchecked(grid: VelocityGrid, values: Vec<f64>, epsilon: f64) -> Result<Self> {
        grid.check_len(&values)?;
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon = {epsilon} must be finite and >= 0")));
        }
        Ok(Self { grid, values, epsilon, time: 0.0 })
    }

    pub fn zeros(grid: VelocityGrid, epsilon: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![0.0; n], epsilon)
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    /// Same grid, `eps` and time with new node values (validated).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Ok(Self::new(self.grid.clone(), values, self.epsilon)?.with_time(self.time))
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    /// `1/eps`, or infinity in the classical case.
    pub fn pauli_bound(&self) -> f64 {
        if self.epsilon > 0.0 {
            1.0 / self.epsilon
        } else {
            f64::INFINITY
        }
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let bound = self.pauli_bound();
        for (node, &value) in self.values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("f = {value} at node {node}")));
            }
            if value < -tol || value > bound + tol {
                return Err(Error::BoundViolation { node, value, bound });
            }
        }
        Ok(())
    }

    pub fn same_frame(&self, other: &Self) -> bool {
        self.grid == other.grid && self.epsilon == other.epsilon
    }
}

/// Parametrization of the post-collision velocities used by the quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// `sigma` nodes of the sphere rule used directly.
    Sigma,
    /// `omega` nodes mapped through `sigma = n - 2 <n, omega> omega`, with
    /// Jacobian `2 |<n, omega>|` over the full sphere. Each node then
    /// defines a linear measure-preserving involution of `(v, v_*)`, so the
    /// discrete operator inherits the collision symmetries and its
    /// conservation defects are pure interpolation error.
    #[default]
    Omega,
}

/// Discrete moments `int f (1, v, |v|^2)` as `[mass, p_x, p_y, p_z, energy]`.
pub fn invariant_moments(grid: &VelocityGrid, values: &[f64]) -> [f64; 5] {
    let w = grid.cell_weight();
    let mut m = [0.0; 5];
    for (idx, &x) in values.iter().enumerate() {
        let v = grid.node(idx);
        m[0] += x;
        m[1] += x * v.x;
        m[2] += x * v.y;
        m[3] += x * v.z;
        m[4] += x * v.norm_squared();
    }
    m.map(|x| x * w)
}

/// Mass, momentum and energy of a collision term before projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservationDefects {
    pub mass: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
}

impl ConservationDefects {
    pub fn of(grid: &VelocityGrid, q: &[f64]) -> Self {
        let m = invariant_moments(grid, q);
        Self { mass: m[0], momentum: [m[1], m[2], m[3]], energy: m[4] }
    }

    pub fn max_abs(&self) -> f64 {
        [self.mass, self.momentum[0], self.momentum[1], self.momentum[2], self.energy]
            .iter()
            .fold(0.0, |a, b| a.max(b.abs()))
    }
}

/// Natural size of the invariant moments of `q`: `int |q| (1 + |v|^2)`.
pub fn moment_scale(grid: &VelocityGrid, q: &[f64]) -> f64 {
    let w = grid.cell_weight();
    q.iter().enumerate().map(|(i, x)| x.abs() * (1.0 + grid.node(i).norm_squared())).sum::<f64>() * w
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionResult {
    pub values: Vec<f64>,
    /// Defects of the raw quadrature, before any projection.
    pub defects: ConservationDefects,
    pub corrected: bool,
}

fn basis(v: &Vec3) -> [f64; 5] {
    [1.0, v.x, v.y, v.z, v.norm_squared()]
}

/// Subtracts from `q` the component `mu * sum_a lambda_a phi_a` with
/// `phi in {1, v, |v|^2}` that zeroes its discrete invariant moments; this
/// is the projection minimizing `sum w |dq|^2 / mu`. `mu = None` means
/// `mu = 1`, the plain orthogonal projection.
fn project(grid: &VelocityGrid, q: &[f64], mu: Option<&[f64]>) -> Result<Vec<f64>> {
    grid.check_len(q)?;
    if let Some(m) = mu {
        grid.check_len(m)?;
    }
    if let Some(i) = q.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteIntegrand(i));
    }
    let nodes = grid.nodes();
    let mut gram = SMatrix::<f64, 5, 5>::zeros();
    for (i, v) in nodes.iter().enumerate() {
        let p = basis(v);
        let m = mu.map_or(1.0, |m| m[i]);
        for a in 0..5 {
            for b in 0..5 {
                gram[(a, b)] += m * p[a] * p[b];
            }
        }
    }
    // Unit diagonal before factoring, so the pivot test is scale free.
    let diag: Vec<f64> = (0..5).map(|a| gram[(a, a)]).collect();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::SingularGram);
    }
    let s = SVector::<f64, 5>::from_iterator(diag.iter().map(|d| 1.0 / d.sqrt()));
    let scaled = SMatrix::<f64, 5, 5>::from_fn(|a, b| gram[(a, b)] * s[a] * s[b]);
    let chol = scaled.cholesky().ok_or(Error::SingularGram)?;
    if (0..5).any(|a| chol.l_dirty()[(a, a)] < 1e-7) {
        return Err(Error::SingularGram);
    }
    let mut out = q.to_vec();
    // A second sweep removes the rounding left by the first.
    for _ in 0..2 {
        let mut rhs = SVector::<f64, 5>::zeros();
        for (i, v) in nodes.iter().enumerate() {
            let p = basis(v);
            for a in 0..5 {
                rhs[a] += out[i] * p[a];
            }
        }
        let lambda = chol.solve(&rhs.component_mul(&s)).component_mul(&s);
        for (i, v) in nodes.iter().enumerate() {
            let p = basis(v);
            let m = mu.map_or(1.0, |m| m[i]);
            let shift: f64 = (0..5).map(|a| lambda[a] * p[a]).sum();
            out[i] -= m * shift;
        }
    }
    Ok(out)
}

/// Plain least-squares projection of `q` onto the complement of
/// `span{1, v_x, v_y, v_z, |v|^2}` in the grid inner product.
pub fn conservation_correction(q: &[f64], grid: &VelocityGrid) -> Result<Vec<f64>> {
    project(grid, q, None)
}

/// Projection with per-node weight `mu >= 0`: the correction is
/// proportional to `mu` pointwise, so it vanishes wherever `mu` does.
pub fn conservation_correction_weighted(q: &[f64], grid: &VelocityGrid, mu: &[f64]) -> Result<Vec<f64>> {
    project(grid, q, Some(mu))
}

/// Geometry shared by every node pair with the same lattice offset.
struct PairTable {
    n: usize,
    span: usize,
    gnorm: Vec<f64>,
    phi: Vec<f64>,
    unit: Vec<Vec3>,
    eta_pows: Vec<Vec<f64>>,
}

impl PairTable {
    fn new(grid: &VelocityGrid, kernel: &CollisionKernelSpec, etas: &[f64]) -> Self {
        let n = grid.points_per_axis();
        let span = 2 * n - 1;
        let h = grid.spacing();
        let len = span * span * span;
        let mut gnorm = Vec::with_capacity(len);
        let mut unit = Vec::with_capacity(len);
        for a in 0..span {
            for b in 0..span {
                for c in 0..span {
                    let g = Vec3::new(
                        (a as f64 - (n - 1) as f64) * h,
                        (b as f64 - (n - 1) as f64) * h,
                        (c as f64 - (n - 1) as f64) * h,
                    );
                    let r = g.norm();
                    gnorm.push(r);
                    unit.push(if r > 0.0 { g / r } else { Vec3::zeros() });
                }
            }
        }
        let phi = gnorm.iter().map(|&r| kernel.kinetic_factor(r)).collect();
        let eta_pows = etas
            .iter()
            .map(|&eta| gnorm.iter().map(|&r| if r > 0.0 { r.powf(eta) } else { 0.0 }).collect())
            .collect();
        Self { n, span, gnorm, phi, unit, eta_pows }
    }

    #[inline(always)]
    fn offset(&self, i: usize, j: usize) -> usize {
        let n = self.n;
        let (ia, ib, ic) = (i / (n * n), (i / n) % n, i % n);
        let (ja, jb, jc) = (j / (n * n), (j / n) % n, j % n);
        ((ia + n - 1 - ja) * self.span + (ib + n - 1 - jb)) * self.span + (ic + n - 1 - jc)
    }
}

/// Per-node output of one quadrature sweep.
#[derive(Debug, Clone, Copy, Default)]
struct NodeSums {
    q: f64,
    loss_rate: f64,
}

/// Kernel, sphere rule and representation: everything needed to evaluate
/// `Q` and the entropy production on a given state.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionModel {
    kernel: CollisionKernelSpec,
    sphere: SphereQuadrature,
    representation: Representation,
    corrupt_projection: bool,
    directions: Vec<Vec3>,
    weights: Vec<f64>,
}

/// Nodes actually visited by the sweep. `omega` and `-omega` describe the
/// same collision, so antipodal pairs are merged into one node carrying both
/// weights.
fn effective_rule(sphere: &SphereQuadrature, representation: Representation) -> (Vec<Vec3>, Vec<f64>) {
    let dirs = sphere.directions();
    let wts = sphere.weights();
    if representation == Representation::Sigma {
        return (dirs.to_vec(), wts.to_vec());
    }
    let upper = |d: &Vec3| d.z > 0.0 || (d.z == 0.0 && (d.y > 0.0 || (d.y == 0.0 && d.x > 0.0)));
    let mut out_d = Vec::new();
    let mut out_w = Vec::new();
    let mut used = vec![false; dirs.len()];
    for k in 0..dirs.len() {
        if used[k] {
            continue;
        }
        used[k] = true;
        let partner = (0..dirs.len()).find(|&m| !used[m] && (dirs[m] + dirs[k]).norm() < 1e-12);
        match partner {
            Some(m) => {
                used[m] = true;
                let d = if upper(&dirs[k]) { dirs[k] } else { dirs[m] };
                out_d.push(d);
                out_w.push(wts[k] + wts[m]);
            }
            None => {
                out_d.push(dirs[k]);
                out_w.push(wts[k]);
            }
        }
    }
    (out_d, out_w)
}

impl CollisionModel {
    pub fn new(kernel: CollisionKernelSpec, sphere: SphereQuadrature) -> Self {
        let representation = Representation::default();
        let (directions, weights) = effective_rule(&sphere, representation);
        Self { kernel, sphere, representation, corrupt_projection: false, directions, weights }
    }

    pub fn with_representation(mut self, representation: Representation) -> Self {
        self.representation = representation;
        let (directions, weights) = effective_rule(&self.sphere, representation);
        self.directions = directions;
        self.weights = weights;
        self
    }

    /// Number of angular nodes visited per pair of velocities.
    pub fn angular_nodes(&self) -> usize {
        self.directions.len()
    }

    /// Fault injection for the verification suite: the projection forgets
    /// the energy constraint.
    #[doc(hidden)]
    pub fn with_corrupted_projection(mut self) -> Self {
        self.corrupt_projection = true;
        self
    }

    pub fn kernel(&self) -> &CollisionKernelSpec {
        &self.kernel
    }

    pub fn sphere(&self) -> &SphereQuadrature {
        &self.sphere
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    /// Same model with the kernel's angular part scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Ok(Self { kernel: self.kernel.scaled(factor)?, ..self.clone() })
    }

    fn correct(&self, grid: &VelocityGrid, q: &[f64], mu: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut out = project(grid, q, mu)?;
        if self.corrupt_projection {
            let e = invariant_moments(grid, q)[4];
            let total = grid.len() as f64 * grid.cell_weight();
            out.iter_mut().for_each(|x| *x += 1e-3 * (e.abs() + 1.0) / total);
        }
        Ok(out)
    }

    /// `Q(f, f)` at every node; with `correct` the plain conservation
    /// projection is applied.
    pub fn collide(&self, f: &DistributionState, correct: bool) -> Result<CollisionResult> {
        f.validate(BOUND_TOL)?;
        let sums = self.sweep::<false>(f)?;
        self.finish(f, sums, correct)
    }

    /// Dedicated classical (`eps = 0`) evaluation without blocking factors.
    pub fn collide_classical(&self, f: &DistributionState, correct: bool) -> Result<CollisionResult> {
        if f.epsilon() != 0.0 {
            return Err(Error::InvalidArgument("classical path requires eps = 0".into()));
        }
        f.validate(BOUND_TOL)?;
        let sums = self.sweep::<true>(f)?;
        self.finish(f, sums, correct)
    }

    fn finish(&self, f: &DistributionState, sums: Vec<NodeSums>, correct: bool) -> Result<CollisionResult> {
        let q: Vec<f64> = sums.iter().map(|s| s.q).collect();
        let defects = ConservationDefects::of(f.grid(), &q);
        let values = if correct { self.correct(f.grid(), &q, None)? } else { q };
        Ok(CollisionResult { values, defects, corrected: correct })
    }

    /// Right-hand side used by the time integrators: `Q` projected with
    /// weight `f (1 - eps f)`, plus the per-node loss rates
    /// (coefficient of `-f_i` in the loss term).
    pub fn rhs(&self, f: &DistributionState) -> Result<(Vec<f64>, Vec<f64>)> {
        self.rhs_with::<false>(f)
    }

    /// [`rhs`](Self::rhs) through the dedicated classical sweep (`eps = 0` only).
    pub fn rhs_classical(&self, f: &DistributionState) -> Result<(Vec<f64>, Vec<f64>)> {
        if f.epsilon() != 0.0 {
            return Err(Error::InvalidArgument("classical path requires eps = 0".into()));
        }
        self.rhs_with::<true>(f)
    }

    fn rhs_with<const CLASSICAL: bool>(&self, f: &DistributionState) -> Result<(Vec<f64>, Vec<f64>)> {
        f.validate(BOUND_TOL)?;
        let sums = self.sweep::<CLASSICAL>(f)?;
        let q: Vec<f64> = sums.iter().map(|s| s.q).collect();
        let rates = sums.iter().map(|s| s.loss_rate).collect();
        let eps = f.epsilon();
        let mu: Vec<f64> = f.values().iter().map(|&x| (x * (1.0 - eps * x)).max(0.0)).collect();
        let corrected = match self.correct(f.grid(), &q, Some(&mu)) {
            Ok(v) => v,
            // Near-saturated or nearly empty states: fall back to the plain projection.
            Err(Error::SingularGram) => self.correct(f.grid(), &q, None)?,
            Err(e) => return Err(e),
        };
        Ok((corrected, rates))
    }

    fn sweep<const CLASSICAL: bool>(&self, f: &DistributionState) -> Result<Vec<NodeSums>> {
        let grid = f.grid();
        let table = PairTable::new(grid, &self.kernel, &[]);
        let nodes = grid.nodes();
        let vals = f.values();
        let sums: Vec<NodeSums> = match self.representation {
            Representation::Omega => {
                let partials: Vec<Vec<NodeSums>> = (0..SWEEP_TASKS)
                    .into_par_iter()
                    .map(|t| {
                        let mut acc = vec![NodeSums::default(); nodes.len()];
                        for i in (t..nodes.len()).step_by(SWEEP_TASKS) {
                            self.pair_row::<CLASSICAL>(grid, &table, &nodes, vals, f.epsilon(), i, &mut acc);
                        }
                        acc
                    })
                    .collect();
                // Summed in task order, so the result does not depend on the thread count.
                let mut sums = vec![NodeSums::default(); nodes.len()];
                for part in &partials {
                    for (s, p) in sums.iter_mut().zip(part) {
                        s.q += p.q;
                        s.loss_rate += p.loss_rate;
                    }
                }
                sums
            }
            Representation::Sigma => (0..grid.len())
                .into_par_iter()
                .map(|i| self.node_sums::<CLASSICAL>(grid, &table, &nodes, vals, f.epsilon(), i))
                .collect(),
        };
        if let Some(i) = sums.iter().position(|s| !s.q.is_finite() || !s.loss_rate.is_finite()) {
            return Err(Error::NonFiniteIntegrand(i));
        }
        Ok(sums)
    }

    /// Post-collision pair and quadrature weight (including `b`) for sphere
    /// node `k` and pair `(vi, vj)` with `|g| = gn`, `g / |g| = n`.
    #[inline(always)]
    fn collision_point(&self, k: usize, vi: &Vec3, vj: &Vec3, gn: f64, n: &Vec3) -> (Vec3, Vec3, f64) {
        let d = self.directions[k];
        let w = self.weights[k];
        match self.representation {
            Representation::Sigma => {
                let centre = (vi + vj) * 0.5;
                let half = 0.5 * gn;
                let b = self.kernel.angular_unchecked(n.dot(&d));
                (centre + d * half, centre - d * half, w * b)
            }
            Representation::Omega => {
                let c = n.dot(&d);
                let p = gn * c;
                let b = self.kernel.angular_unchecked(1.0 - 2.0 * c * c);
                (vi - d * p, vj + d * p, w * 2.0 * c.abs() * b)
            }
        }
    }

    /// Contributions of the pairs `(i, j)`, `j > i`, to both nodes. With an
    /// `omega` node the pair `(j, i)` reaches the same post-collision pair
    /// (swapped) with the same weight, so one set of samples serves both.
    #[allow(clippy::too_many_arguments)]
    fn pair_row<const CLASSICAL: bool>(
        &self,
        grid: &VelocityGrid,
        table: &PairTable,
        nodes: &[Vec3],
        vals: &[f64],
        eps: f64,
        i: usize,
        acc: &mut [NodeSums],
    ) {
        let w = grid.cell_weight();
        let vi = nodes[i];
        let fi = vals[i];
        let bi = 1.0 - eps * fi;
        for j in i + 1..nodes.len() {
            let fj = vals[j];
            let vj = nodes[j];
            let o = table.offset(i, j);
            let gn = table.gnorm[o];
            let n = table.unit[o];
            let bij = bi * (1.0 - eps * fj);
            let mut gain = 0.0;
            let mut blocked = 0.0;
            for k in 0..self.directions.len() {
                let (vp, vps, wk) = self.collision_point(k, &vi, &vj, gn, &n);
                let fp = grid.sample(vals, &vp);
                let fps = grid.sample(vals, &vps);
                gain += wk * (fp * fps);
                if CLASSICAL {
                    blocked += wk;
                } else {
                    blocked += wk * ((1.0 - eps * fp) * (1.0 - eps * fps));
                }
            }
            let pref = w * table.phi[o];
            let gain = if CLASSICAL { gain } else { gain * bij };
            let c = pref * (gain - fi * fj * blocked);
            acc[i].q += c;
            acc[j].q += c;
            acc[i].loss_rate += pref * fj * blocked;
            acc[j].loss_rate += pref * fi * blocked;
        }
    }

    fn node_sums<const CLASSICAL: bool>(
        &self,
        grid: &VelocityGrid,
        table: &PairTable,
        nodes: &[Vec3],
        vals: &[f64],
        eps: f64,
        i: usize,
    ) -> NodeSums {
        let w = grid.cell_weight();
        let vi = nodes[i];
        let fi = vals[i];
        let bi = 1.0 - eps * fi;
        let mut q = 0.0;
        let mut rate = 0.0;
        for j in 0..nodes.len() {
            if j == i {
                continue;
            }
            let fj = vals[j];
            let vj = nodes[j];
            let o = table.offset(i, j);
            let gn = table.gnorm[o];
            let n = table.unit[o];
            let bij = bi * (1.0 - eps * fj);
            let mut gain = 0.0;
            let mut loss = 0.0;
            for k in 0..self.directions.len() {
                let (vp, vps, wk) = self.collision_point(k, &vi, &vj, gn, &n);
                let fp = grid.sample(vals, &vp);
                let fps = grid.sample(vals, &vps);
                if CLASSICAL {
                    gain += wk * (fp * fps);
                    loss += wk * fj;
                } else {
                    gain += wk * ((fp * fps) * bij);
                    loss += wk * (fj * (1.0 - eps * fp) * (1.0 - eps * fps));
                }
            }
            let pref = w * table.phi[o];
            q += pref * (gain - fi * loss);
            rate += pref * loss;
        }
        NodeSums { q, loss_rate: rate }
    }

    /// Entropy production `D^(eta)` for each exponent in `etas`, with the same
    /// quadrature as [`collide`](Self::collide). `eta = gamma` gives the
    /// physical dissipation.
    pub fn entropy_production(&self, f: &DistributionState, etas: &[f64]) -> Result<Vec<f64>> {
        f.validate(BOUND_TOL)?;
        let grid = f.grid();
        let table = PairTable::new(grid, &self.kernel, etas);
        let nodes = grid.nodes();
        let vals = f.values();
        let eps = f.epsilon();
        // The pair term is symmetric in (i, j) for omega nodes.
        let symmetric = self.representation == Representation::Omega;
        let per_node: Vec<Vec<f64>> = (0..grid.len())
            .into_par_iter()
            .map(|i| self.node_production(grid, &table, &nodes, vals, eps, i, symmetric))
            .collect();
        let w = grid.cell_weight();
        let mut out = vec![0.0; etas.len()];
        for (i, row) in per_node.iter().enumerate() {
            for (e, x) in row.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::NonFiniteIntegrand(i));
                }
                out[e] += x;
            }
        }
        Ok(out.into_iter().map(|x| 0.25 * w * x).collect())
    }

    #[allow(clippy::too_many_arguments)]
    fn node_production(
        &self,
        grid: &VelocityGrid,
        table: &PairTable,
        nodes: &[Vec3],
        vals: &[f64],
        eps: f64,
        i: usize,
        symmetric: bool,
    ) -> Vec<f64> {
        let w = if symmetric { 2.0 * grid.cell_weight() } else { grid.cell_weight() };
        let vi = nodes[i];
        let fi = vals[i];
        let bi = 1.0 - eps * fi;
        let mut acc = vec![0.0; table.eta_pows.len()];
        let first = if symmetric { i + 1 } else { 0 };
        for j in first..nodes.len() {
            if j == i {
                continue;
            }
            let fj = vals[j];
            let vj = nodes[j];
            let o = table.offset(i, j);
            let gn = table.gnorm[o];
            let n = table.unit[o];
            let bj = 1.0 - eps * fj;
            let lower_fl = fi.max(LOG_FLOOR) * fj.max(LOG_FLOOR);
            let upper_fl = bi.max(LOG_FLOOR) * bj.max(LOG_FLOOR);
            let mut pair = 0.0;
            for k in 0..self.directions.len() {
                let (vp, vps, wk) = self.collision_point(k, &vi, &vj, gn, &n);
                let fp = grid.sample(vals, &vp);
                let fps = grid.sample(vals, &vps);
                let bp = 1.0 - eps * fp;
                let bps = 1.0 - eps * fps;
                let plus = fp * fps * bi * bj;
                let minus = fi * fj * bp * bps;
                if plus < LOG_FLOOR && minus < LOG_FLOOR {
                    continue;
                }
                let num = fp.max(LOG_FLOOR) * fps.max(LOG_FLOOR) * upper_fl;
                let den = lower_fl * bp.max(LOG_FLOOR) * bps.max(LOG_FLOOR);
                let psi = (plus - minus) * (num / den).ln();
                // Flooring can only misorder pairs whose products are both
                // negligible; such pairs carry no dissipation.
                if psi > 0.0 {
                    pair += wk * psi;
                }
            }
            for (e, pows) in table.eta_pows.iter().enumerate() {
                acc[e] += w * pows[o] * pair;
            }
        }
        acc
    }
}

/// `Q(f, f)` for a kernel and sphere rule with the default representation.
pub fn collision_operator(
    f: &DistributionState,
    kernel: &CollisionKernelSpec,
    sphere: &SphereQuadrature,
    correct: bool,
) -> Result<CollisionResult> {
    CollisionModel::new(kernel.clone(), sphere.clone()).collide(f, correct)
}

/// `max_i |Q_{B/eps,1}(eps f)_i - eps Q_{B,eps}(f)_i| / max_i |eps Q_{B,eps}(f)_i|`.
pub fn scaling_identity_check(f: &DistributionState, model: &CollisionModel) -> Result<f64> {
    let eps = f.epsilon();
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("scaling identity needs eps > 0".into()));
    }
    let d1 = model.collide(f, false)?.values;
    let scaled_values: Vec<f64> = f.values().iter().map(|x| eps * x).collect();
    let g = DistributionState::new(f.grid().clone(), scaled_values, 1.0)?;
    let d2 = model.scaled(1.0 / eps)?.collide(&g, false)?.values;
    let scale = d1.iter().fold(0.0f64, |m, x| m.max((eps * x).abs()));
    if scale == 0.0 {
        let dev = d2.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        return Ok(dev);
    }
    let dev = d1.iter().zip(&d2).fold(0.0f64, |m, (a, b)| m.max((b - eps * a).abs()));
    Ok(dev / scale)
}

/// Sub-cells per axis for cells crossed by a cancellation window edge.
const CUT_CELL_SUBDIVISIONS: usize = 8;

/// Relative-speed window of the cancellation identities:
/// `Phi(r) = r^gamma` on `lower < r <= upper`, zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffWindow {
    pub lower: f64,
    pub upper: Option<f64>,
}

impl CutoffWindow {
    pub fn above(lower: f64) -> Self {
        Self { lower, upper: None }
    }

    pub fn between(lower: f64, upper: f64) -> Self {
        Self { lower, upper: Some(upper) }
    }

    fn contains(&self, r: f64) -> bool {
        r > self.lower && self.upper.is_none_or(|u| r <= u)
    }
}

/// Which post-collision velocity the integrand is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CancellationVariant {
    /// `int int B f(v') dsigma dv_*`, reduced with `sin(theta/2)`.
    Gain,
    /// `int int B f(v'_*) dsigma dv_*`, reduced with `cos(theta/2)`.
    Partner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CancellationSide {
    Direct,
    Reduced,
}

/// Both sides of the cancellation identities at a probe velocity.
///
/// `Direct` sums `b Phi f(v')` (or `f(v'_*)`) over grid nodes `v_*` and the
/// sphere rule; cells crossed by an edge of the window are integrated on a
/// finer sub-lattice, since the indicator is discontinuous there. `Reduced` sums `f(v_*) I(|v - v_*|)` over the nodes, where
/// `I(r) = 2 pi int_0^pi b sin(theta) / s^3 Phi(r / s) d theta` with
/// `s = sin(theta/2)` (or `cos(theta/2)`) is integrated adaptively. Without
/// an upper cutoff and with `gamma >= -1` that integral diverges at the
/// grazing (respectively head-on) end, which is reported as an error.
pub fn cancellation_oracle(
    f: &DistributionState,
    kernel: &CollisionKernelSpec,
    sphere: &SphereQuadrature,
    window: CutoffWindow,
    probe: &Vec3,
    variant: CancellationVariant,
    side: CancellationSide,
) -> Result<f64> {
    if !(window.lower > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda = {} must be positive", window.lower)));
    }
    if let Some(u) = window.upper {
        if !(u > window.lower) {
            return Err(Error::InvalidArgument(format!("upper cutoff {u} must exceed lambda")));
        }
    }
    let grid = f.grid();
    let vals = f.values();
    let w = grid.cell_weight();
    let gamma = kernel.gamma();
    match side {
        CancellationSide::Direct => {
            let integrand = |vj: Vec3| -> f64 {
                let r = (probe - vj).norm();
                if !window.contains(r) {
                    return 0.0;
                }
                let n = (probe - vj) / r;
                let centre = (probe + vj) * 0.5;
                let mut s = 0.0;
                for (d, wk) in sphere.directions().iter().zip(sphere.weights()) {
                    let b = kernel.angular_unchecked(n.dot(d));
                    let point = match variant {
                        CancellationVariant::Gain => centre + d * (0.5 * r),
                        CancellationVariant::Partner => centre - d * (0.5 * r),
                    };
                    s += wk * b * grid.sample(vals, &point);
                }
                r.powf(gamma) * s
            };
            // The window cuts cells along spheres around the probe; those
            // cells are integrated on a sub-lattice instead of at the node.
            let h = grid.spacing();
            let reach = 0.5 * 3f64.sqrt() * h;
            let near = |r: f64, edge: f64| (r - edge).abs() <= reach;
            let total: f64 = (0..grid.len())
                .into_par_iter()
                .map(|j| {
                    let vj = grid.node(j);
                    let r = (probe - vj).norm();
                    if !(near(r, window.lower) || window.upper.is_some_and(|u| near(r, u))) {
                        return integrand(vj);
                    }
                    let m = CUT_CELL_SUBDIVISIONS;
                    let offset = |a: usize| h * ((a as f64 + 0.5) / m as f64 - 0.5);
                    let mut acc = 0.0;
                    for a in 0..m {
                        for b in 0..m {
                            for c in 0..m {
                                acc += integrand(vj + Vec3::new(offset(a), offset(b), offset(c)));
                            }
                        }
                    }
                    acc / (m * m * m) as f64
                })
                .sum();
            Ok(w * total)
        }
        CancellationSide::Reduced => {
            if window.upper.is_none() && gamma >= -1.0 {
                return Err(Error::Divergent(format!(
                    "with Phi(r) = r^gamma 1(r > lambda) and gamma = {gamma} >= -1 the reduced angular integral \
                     behaves like s^(-2-gamma) as s -> 0 and is not integrable"
                )));
            }
            let nodes: Vec<usize> = (0..grid.len()).filter(|&j| vals[j] != 0.0).collect();
            let terms: Result<Vec<f64>> = nodes
                .par_iter()
                .map(|&j| {
                    let r = (probe - grid.node(j)).norm();
                    Ok(vals[j] * reduced_weight(kernel, window, r, variant)?)
                })
                .collect();
            Ok(w * terms?.iter().sum::<f64>())
        }
    }
}

/// `I(r)` after the substitution `s = sin(theta/2)` (or `cos(theta/2)`),
/// `sin(theta) d theta = 4 s ds`:
/// `I(r) = 8 pi r^gamma int b(cos theta(s)) s^(-2-gamma) ds` over
/// `r / upper <= s < r / lower`, `s in (0, 1]`.
fn reduced_weight(kernel: &CollisionKernelSpec, window: CutoffWindow, r: f64, variant: CancellationVariant) -> Result<f64> {
    if r == 0.0 {
        return Ok(0.0);
    }
    let gamma = kernel.gamma();
    let s_hi = (r / window.lower).min(1.0);
    let s_lo = window.upper.map_or(0.0, |u| (r / u).min(1.0));
    if s_lo >= s_hi {
        return Ok(0.0);
    }
    let cos_theta = |s: f64| match variant {
        CancellationVariant::Gain => 1.0 - 2.0 * s * s,
        CancellationVariant::Partner => 2.0 * s * s - 1.0,
    };
    // t = s^q with q = -1 - gamma turns s^(-2-gamma) ds into dt / q and
    // removes the endpoint singularity at s = 0.
    let q = -1.0 - gamma;
    let b = |s: f64| kernel.angular_unchecked(cos_theta(s));
    let scale = kernel.b_l1_norm();
    let inner = if q.abs() < 1e-12 {
        adaptive(|u: f64| b(u.exp()), s_lo.ln(), s_hi.ln(), 1e-14 * scale)?
    } else {
        let (t_lo, t_hi) = (s_lo.powf(q), s_hi.powf(q));
        adaptive(|t: f64| b(t.powf(1.0 / q)), t_lo, t_hi, 1e-14 * scale * (t_hi - t_lo).abs())? / q
    };
    Ok(8.0 * std::f64::consts::PI * r.powf(gamma) * inner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(order: usize, rep: Representation) -> CollisionModel {
        let k = CollisionKernelSpec::constant(-0.5, 0.75, 1.0).unwrap();
        CollisionModel::new(k, SphereQuadrature::new(order).unwrap()).with_representation(rep)
    }

    fn gaussian(grid: &VelocityGrid, centre: Vec3, theta: f64, rho: f64) -> Vec<f64> {
        let a = rho * (2.0 * std::f64::consts::PI * theta).powf(-1.5);
        grid.tabulate(|v| a * (-(v - centre).norm_squared() / (2.0 * theta)).exp())
    }

    fn bimodal(grid: &VelocityGrid) -> Vec<f64> {
        let a = gaussian(grid, Vec3::new(1.0, 0.0, 0.0), 0.5, 0.5);
        let b = gaussian(grid, Vec3::new(-1.0, 0.3, 0.0), 0.5, 0.5);
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    }

    fn random_state(grid: &VelocityGrid, eps: f64, seed: u64) -> DistributionState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = grid.tabulate(|v| {
            let env = (-0.5 * v.norm_squared()).exp();
            env * rng.random::<f64>() / eps
        });
        DistributionState::new(grid.clone(), vals, eps).unwrap()
    }

    #[test]
    fn state_validation() {
        let g = VelocityGrid::new(2.0, 4).unwrap();
        let mut v = vec![0.5; g.len()];
        assert!(DistributionState::new(g.clone(), v.clone(), 1.0).is_ok());
        v[5] = 1.5;
        assert!(matches!(DistributionState::new(g.clone(), v.clone(), 1.0), Err(Error::BoundViolation { node: 5, .. })));
        assert!(DistributionState::new(g.clone(), v.clone(), 0.0).is_ok());
        v[5] = -0.1;
        assert!(DistributionState::new(g.clone(), v.clone(), 0.0).is_err());
        v[5] = f64::NAN;
        assert!(DistributionState::new(g, v, 0.0).is_err());
    }

    #[test]
    fn zero_state_gives_zero() {
        let g = VelocityGrid::new(3.0, 6).unwrap();
        let f = DistributionState::zeros(g, 0.5).unwrap();
        let q = model(3, Representation::Omega).collide(&f, true).unwrap();
        assert!(q.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn classical_path_is_bit_identical() {
        let g = VelocityGrid::new(4.0, 8).unwrap();
        let f = DistributionState::new(g.clone(), bimodal(&g), 0.0).unwrap();
        for rep in [Representation::Sigma, Representation::Omega] {
            let m = model(3, rep);
            let a = m.collide(&f, false).unwrap();
            let b = m.collide_classical(&f, false).unwrap();
            let d = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert_eq!(a.values, b.values, "{rep:?} {d}");
        }
    }

    #[test]
    fn correction_zeroes_invariants() {
        let g = VelocityGrid::new(4.0, 8).unwrap();
        let f = DistributionState::new(g.clone(), bimodal(&g), 0.3).unwrap();
        let q = model(3, Representation::Sigma).collide(&f, true).unwrap();
        let scale = moment_scale(&g, &q.values);
        let d = ConservationDefects::of(&g, &q.values);
        assert!(d.max_abs() <= 1e-12 * scale, "{d:?}");
        assert!(q.defects.max_abs() > 1e-8 * scale);
    }

    #[test]
    fn correction_leaves_conservative_input_unchanged() {
        let g = VelocityGrid::new(3.0, 6).unwrap();
        let raw = g.tabulate(|v| (v.x * v.y + v.z.powi(3) * v.y) * (-v.norm_squared()).exp());
        let q = conservation_correction(&raw, &g).unwrap();
        for (a, b) in raw.iter().zip(&q) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn correction_of_constant_matches_hand_solution() {
        let g = VelocityGrid::new(2.0, 4).unwrap();
        // Odd moments vanish by symmetry; the even block is the 2x2 system
        // [n, s2; s2, s4] (alpha, beta) = c (n, s2) whose solution is alpha = c, beta = 0.
        // So a constant is fully removed.
        let c = 0.7;
        let q = conservation_correction(&vec![c; g.len()], &g).unwrap();
        assert!(q.iter().all(|x| x.abs() < 1e-13));
        // A |v|^4 input: solve the 2x2 block by Cramer's rule.
        let raw = g.tabulate(|v| v.norm_squared().powi(2));
        let (mut n, mut s2, mut s4, mut s6) = (0.0, 0.0, 0.0, 0.0);
        for v in g.nodes() {
            let r2 = v.norm_squared();
            n += 1.0;
            s2 += r2;
            s4 += r2 * r2;
            s6 += r2 * r2 * r2;
        }
        let det = n * s4 - s2 * s2;
        let alpha = (s4 * s4 - s2 * s6) / det;
        let beta = (n * s6 - s2 * s4) / det;
        let q = conservation_correction(&raw, &g).unwrap();
        for (idx, v) in g.nodes().iter().enumerate() {
            let want = raw[idx] - alpha - beta * v.norm_squared();
            assert!((q[idx] - want).abs() < 1e-12 * (1.0 + raw[idx].abs()));
        }
        assert!(invariant_moments(&g, &q)[0].abs() < 1e-12);
    }

    #[test]
    fn correction_of_odd_input_only_touches_momentum() {
        let g = VelocityGrid::new(3.0, 6).unwrap();
        let raw = g.tabulate(|v| v.x * (-v.norm_squared()).exp());
        let d = ConservationDefects::of(&g, &raw);
        assert!(d.mass.abs() < 1e-15 && d.energy.abs() < 1e-15);
        assert!(d.momentum[0].abs() > 1e-3);
        let q = conservation_correction(&raw, &g).unwrap();
        let diff: Vec<f64> = raw.iter().zip(&q).map(|(a, b)| a - b).collect();
        // the removed part is a multiple of v_x
        let ratio = diff[g.index(5, 2, 3)] / g.node(g.index(5, 2, 3)).x;
        for (idx, v) in g.nodes().iter().enumerate() {
            assert!((diff[idx] - ratio * v.x).abs() < 1e-14);
        }
    }

    #[test]
    fn weighted_correction_vanishes_where_weight_does() {
        let g = VelocityGrid::new(3.0, 6).unwrap();
        let raw = g.tabulate(|v| v.x + v.norm_squared());
        let mu = g.tabulate(|v| if v.norm() < 2.0 { 1.0 } else { 0.0 });
        let q = conservation_correction_weighted(&raw, &g, &mu).unwrap();
        for (idx, v) in g.nodes().iter().enumerate() {
            if v.norm() >= 2.0 {
                assert_eq!(q[idx], raw[idx]);
            }
        }
        let m = invariant_moments(&g, &q);
        assert!(m.iter().all(|x| x.abs() < 1e-11));
    }

    #[test]
    fn saturated_ball_is_nearly_stationary() {
        let g = VelocityGrid::new(2.0, 8).unwrap();
        let vals = g.tabulate(|v| if v.norm() <= 1.2 { 1.0 } else { 0.0 });
        let f = DistributionState::new(g.clone(), vals.clone(), 1.0).unwrap();
        let q = model(3, Representation::Omega).collide(&f, false).unwrap();
        // Every gain/loss product vanishes unless a post-collision point lands
        // in the interpolation shell around the ball's surface.
        for (idx, v) in g.nodes().iter().enumerate() {
            if v.norm() < 1.2 - 2.0 * g.spacing() {
                assert!(q.values[idx].abs() < 1e-14, "node {idx} q = {}", q.values[idx]);
            }
        }
    }

    #[test]
    fn reflection_symmetry() {
        let g = VelocityGrid::new(4.0, 8).unwrap();
        let vals = bimodal(&g);
        let n = g.points_per_axis();
        let refl = |idx: usize| {
            let (i, j, k) = g.coords(idx);
            g.index(n - 1 - i, n - 1 - j, n - 1 - k)
        };
        let flipped: Vec<f64> = (0..g.len()).map(|i| vals[refl(i)]).collect();
        for rep in [Representation::Sigma, Representation::Omega] {
            let m = model(3, rep);
            let a = m.collide(&DistributionState::new(g.clone(), vals.clone(), 0.2).unwrap(), false).unwrap().values;
            let b = m.collide(&DistributionState::new(g.clone(), flipped.clone(), 0.2).unwrap(), false).unwrap().values;
            let scale = a.iter().fold(0.0f64, |x, y| x.max(y.abs()));
            for i in 0..g.len() {
                assert!((b[i] - a[refl(i)]).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn scaling_identity_examples() {
        let g = VelocityGrid::new(3.0, 6).unwrap();
        let m = model(3, Representation::Omega);
        let f = random_state(&g, 0.25, 1);
        assert!(scaling_identity_check(&f, &m).unwrap() <= 1e-12);
        let f = random_state(&g, 1.0, 2);
        assert!(scaling_identity_check(&f, &m).unwrap() == 0.0);
        let f = DistributionState::zeros(g.clone(), 0.25).unwrap();
        assert_eq!(scaling_identity_check(&f, &m).unwrap(), 0.0);
        let f = DistributionState::zeros(g, 0.0).unwrap();
        assert!(scaling_identity_check(&f, &m).is_err());
    }

    #[test]
    fn entropy_production_of_zero_and_equilibrium() {
        let g = VelocityGrid::new(5.0, 10).unwrap();
        let m = model(3, Representation::Omega);
        let z = DistributionState::zeros(g.clone(), 0.5).unwrap();
        assert_eq!(m.entropy_production(&z, &[-0.5]).unwrap(), vec![0.0]);
        // At equilibrium only interpolation error is left, which shrinks fast
        // under refinement.
        let mut ratios = Vec::new();
        for n in [8, 14] {
            let g = VelocityGrid::new(5.0, n).unwrap();
            let eq = DistributionState::new(g.clone(), gaussian(&g, Vec3::zeros(), 1.0, 1.0), 0.0).unwrap();
            let neq = DistributionState::new(g.clone(), bimodal(&g), 0.0).unwrap();
            let d_eq = m.entropy_production(&eq, &[-0.5]).unwrap()[0];
            let d_neq = m.entropy_production(&neq, &[-0.5]).unwrap()[0];
            assert!(d_eq >= 0.0 && d_neq > 0.0);
            ratios.push(d_eq / d_neq);
        }
        assert!(ratios[1] < 0.25 * ratios[0], "{ratios:?}");
    }

    #[test]
    fn cancellation_sides_vanish_for_zero_state() {
        let g = VelocityGrid::new(3.0, 6).unwrap();
        let k = CollisionKernelSpec::constant(-1.0, 0.9, 1.0).unwrap();
        let s = SphereQuadrature::new(7).unwrap();
        let f = DistributionState::zeros(g, 0.0).unwrap();
        for side in [CancellationSide::Direct, CancellationSide::Reduced] {
            let x = cancellation_oracle(&f, &k, &s, CutoffWindow::between(1.0, 2.0), &Vec3::zeros(), CancellationVariant::Gain, side).unwrap();
            assert_eq!(x, 0.0);
        }
        assert!(cancellation_oracle(&f, &k, &s, CutoffWindow::above(0.0), &Vec3::zeros(), CancellationVariant::Gain, CancellationSide::Direct).is_err());
    }

    #[test]
    fn reduced_weight_closed_form_for_constant_b() {
        // b = b0: I(r) = 8 pi b0 r^gamma [s^(-1-gamma) / (-1-gamma)] between the limits
        let k = CollisionKernelSpec::constant(-1.5, 0.9, 0.7).unwrap();
        let win = CutoffWindow::between(0.5, 3.0);
        for r in [0.2, 0.5, 1.0, 2.9] {
            let hi = (r / 0.5f64).min(1.0);
            let lo = (r / 3.0f64).min(1.0);
            let p = 0.5f64; // -1 - gamma
            let want = 8.0 * std::f64::consts::PI * 0.7 * r.powf(-1.5) * (hi.powf(p) - lo.powf(p)) / p;
            let got = reduced_weight(&k, win, r, CancellationVariant::Gain).unwrap();
            assert!((got - want).abs() <= 1e-10 * want.abs(), "r={r}: {got} vs {want}");
        }
    }

    #[test]
    fn reduced_side_diverges_without_upper_cutoff() {
        let g = VelocityGrid::new(3.0, 6).unwrap();
        let k = CollisionKernelSpec::constant(-1.0, 0.9, 1.0).unwrap();
        let s = SphereQuadrature::new(7).unwrap();
        let f = DistributionState::new(g.clone(), gaussian(&g, Vec3::zeros(), 1.0, 1.0), 0.0).unwrap();
        let r = cancellation_oracle(&f, &k, &s, CutoffWindow::above(1.0), &Vec3::zeros(), CancellationVariant::Gain, CancellationSide::Reduced);
        assert!(matches!(r, Err(Error::Divergent(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn corrected_operator_is_conservative(seed in 0u64..10_000, eps in 0.05f64..2.0) {
            let g = VelocityGrid::new(3.0, 6).unwrap();
            let f = random_state(&g, eps, seed);
            let q = model(3, Representation::Omega).collide(&f, true).unwrap();
            let scale = moment_scale(&g, &q.values).max(1e-300);
            prop_assert!(ConservationDefects::of(&g, &q.values).max_abs() <= 1e-12 * scale);
        }

        #[test]
        fn entropy_production_is_nonnegative(seed in 0u64..10_000, eps in 0.05f64..2.0, eta in -1.5f64..1.0) {
            let g = VelocityGrid::new(3.0, 6).unwrap();
            let f = random_state(&g, eps, seed);
            let d = model(3, Representation::Omega).entropy_production(&f, &[eta]).unwrap()[0];
            prop_assert!(d >= 0.0);
        }

        #[test]
        fn scaling_identity_holds(seed in 0u64..10_000, eps in 0.05f64..4.0) {
            let g = VelocityGrid::new(3.0, 6).unwrap();
            let f = random_state(&g, eps, seed);
            prop_assert!(scaling_identity_check(&f, &model(3, Representation::Sigma)).unwrap() <= 1e-12);
        }
    }
}
