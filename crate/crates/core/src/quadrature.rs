//! Velocity grid, grid integration, trilinear sampling and sphere rules.
//!
//! The velocity box `[-L, L]^3` is split into `N^3` cubic cells of side
//! `h = 2L / N`; node `(i, j, k)` sits at the cell centre
//! `(-L + (i + 1/2) h, ...)` and carries the weight `h^3`. Node values are
//! stored in a flat vector with the last axis fastest:
//! `index = (i * N + j) * N + k`.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Cell-centred uniform grid on `[-L, L]^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    half_width: f64,
    points_per_axis: usize,
    spacing: f64,
    inv_spacing: f64,
    offset: f64,
}

impl VelocityGrid {
    /// Builds the grid with `n` cells per axis on `[-half_width, half_width]^3`.
    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        if !half_width.is_finite() || half_width <= 0.0 {
            return Err(Error::InvalidGrid(format!("half width must be positive, got {half_width}")));
        }
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!("points per axis must be even and at least 4, got {n}")));
        }
        let spacing = 2.0 * half_width / n as f64;
        Ok(Self {
            half_width,
            points_per_axis: n,
            spacing,
            inv_spacing: 1.0 / spacing,
            offset: 0.5 * (n - 1) as f64,
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Quadrature weight `h^3` shared by every node.
    pub fn cell_weight(&self) -> f64 {
        self.spacing * self.spacing * self.spacing
    }

    /// Total number of nodes, `N^3`.
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(3)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn axis_node(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.points_per_axis + j) * self.points_per_axis + k
    }

    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let n = self.points_per_axis;
        (index / (n * n), (index / n) % n, index % n)
    }

    pub fn node(&self, index: usize) -> Vec3 {
        let (i, j, k) = self.coords(index);
        Vec3::new(self.axis_node(i), self.axis_node(j), self.axis_node(k))
    }

    /// All nodes in storage order.
    pub fn nodes(&self) -> Vec<Vec3> {
        (0..self.len()).map(|idx| self.node(idx)).collect()
    }

    /// Evaluates `g` at every node.
    pub fn tabulate(&self, mut g: impl FnMut(&Vec3) -> f64) -> Vec<f64> {
        (0..self.len()).map(|idx| g(&self.node(idx))).collect()
    }

    pub fn check_len(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), got: values.len() });
        }
        Ok(())
    }

    /// Midpoint-rule integral `sum_i h^3 values[i]`.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        self.check_len(values)?;
        let mut sum = 0.0;
        for (idx, &x) in values.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("grid value at node {idx} is {x}")));
            }
            sum += x;
        }
        Ok(sum * self.cell_weight())
    }

    /// Trilinear interpolation of node values at an arbitrary velocity.
    ///
    /// Returns 0 outside the hull of the nodes, `[-L + h/2, L - h/2]^3`.
    pub fn trilinear_sample(&self, values: &[f64], v: &Vec3) -> Result<f64> {
        self.check_len(values)?;
        if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
            return Err(Error::NonFinite(format!("sample point {v:?}")));
        }
        Ok(self.sample(values, v))
    }

    /// Unchecked variant of [`trilinear_sample`](Self::trilinear_sample) for
    /// hot loops; `values` must have length `N^3`.
    #[inline(always)]
    pub(crate) fn sample(&self, values: &[f64], v: &Vec3) -> f64 {
        let n = self.points_per_axis;
        // The hull test is done on centred coordinates so that it is exactly
        // symmetric under v -> -v.
        let (ux, uy, uz) = (v.x * self.inv_spacing, v.y * self.inv_spacing, v.z * self.inv_spacing);
        let c = self.offset;
        if !(ux.abs() <= c && uy.abs() <= c && uz.abs() <= c) {
            return 0.0;
        }
        let (x, y, z) = (ux + c, uy + c, uz + c);
        let ix = (x as usize).min(n - 2);
        let iy = (y as usize).min(n - 2);
        let iz = (z as usize).min(n - 2);
        let tx = x - ix as f64;
        let ty = y - iy as f64;
        let tz = z - iz as f64;
        let b = (ix * n + iy) * n + iz;
        let nn = n * n;
        let c00 = values[b] + tz * (values[b + 1] - values[b]);
        let c01 = values[b + n] + tz * (values[b + n + 1] - values[b + n]);
        let c10 = values[b + nn] + tz * (values[b + nn + 1] - values[b + nn]);
        let c11 = values[b + nn + n] + tz * (values[b + nn + n + 1] - values[b + nn + n]);
        let c0 = c00 + ty * (c01 - c00);
        let c1 = c10 + ty * (c11 - c10);
        c0 + tx * (c1 - c0)
    }
}

/// Product rule on the unit sphere: Gauss-Legendre in `cos(theta)` times a
/// uniform rule in `phi`.
///
/// Order `p` (odd) uses `p/2 + 1` polar and `p + 1` azimuthal nodes, which
/// integrates every polynomial of degree `<= p` exactly. The azimuthal count
/// is even, so the node set is closed under `x -> -x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereQuadrature {
    order: usize,
    directions: Vec<Vec3>,
    weights: Vec<f64>,
}

impl SphereQuadrature {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 || order % 2 == 0 {
            return Err(Error::UnsupportedOrder(order));
        }
        let n_theta = order / 2 + 1;
        let n_phi = order + 1;
        let rule = gauss_legendre(n_theta);
        let mut directions = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        let dphi = 2.0 * PI / n_phi as f64;
        for &(mu, w) in &rule {
            let s = (1.0 - mu * mu).max(0.0).sqrt();
            for k in 0..n_phi {
                let phi = (k as f64 + 0.5) * dphi;
                directions.push(Vec3::new(s * phi.cos(), s * phi.sin(), mu));
                weights.push(w * dphi);
            }
        }
        Ok(Self { order, directions, weights })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.directions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate(&self, g: impl Fn(&Vec3) -> f64) -> f64 {
        self.directions.iter().zip(&self.weights).map(|(d, w)| w * g(d)).sum()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(points: usize) -> Vec<(f64, f64)> {
    let degree = NonZeroUsize::new(points.max(1)).expect("nonzero");
    GaussLegendre::new(degree).into_iter().collect()
}

/// Composite Gauss-Legendre rule for a smooth integrand on `[a, b]`.
pub fn composite_gauss(g: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, points: usize) -> f64 {
    let rule = gauss_legendre(points);
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let mid = lo + 0.5 * width;
        let half = 0.5 * width;
        for &(x, w) in &rule {
            total += half * w * g(mid + half * x);
        }
    }
    total
}

/// Adaptive double-exponential quadrature on `[a, b]` for integrands that are
/// smooth in the interior. Endpoint singularities should be removed by a
/// change of variables first.
pub fn adaptive(g: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let out = quadrature::double_exponential::integrate(g, a, b, abs_tol);
    if !out.integral.is_finite() {
        return Err(Error::Quadrature(format!("non-finite integral on [{a}, {b}]")));
    }
    if out.error_estimate > 1e3 * abs_tol.max(1e-300) && out.error_estimate > 1e-10 * out.integral.abs() {
        return Err(Error::Quadrature(format!(
            "error estimate {:e} exceeds tolerance {:e} on [{a}, {b}]",
            out.error_estimate, abs_tol
        )));
    }
    Ok(out.integral)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn grid_spacing_and_nodes() {
        let g = VelocityGrid::new(4.0, 4).unwrap();
        assert_eq!(g.spacing(), 2.0);
        let axis: Vec<f64> = (0..4).map(|i| g.axis_node(i)).collect();
        assert_eq!(axis, vec![-3.0, -1.0, 1.0, 3.0]);
        assert_eq!(g.len(), 64);
        assert!(VelocityGrid::new(1.0, 2).is_err());
        assert!(VelocityGrid::new(1.0, 5).is_err());
        assert!(VelocityGrid::new(-1.0, 4).is_err());
        assert!(VelocityGrid::new(f64::NAN, 4).is_err());
    }

    #[test]
    fn index_round_trip() {
        let g = VelocityGrid::new(3.0, 6).unwrap();
        for idx in 0..g.len() {
            let (i, j, k) = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
    }

    #[test]
    fn integrates_constant_to_box_volume() {
        let g = VelocityGrid::new(2.0, 6).unwrap();
        let ones = vec![1.0; g.len()];
        assert_relative_eq!(g.integrate(&ones).unwrap(), 64.0, max_relative = 1e-13);
    }

    #[test]
    fn integrates_gaussian_spectrally() {
        let g = VelocityGrid::new(6.0, 24).unwrap();
        let vals = g.tabulate(|v| (-v.norm_squared()).exp());
        let exact = PI.powf(1.5);
        assert_relative_eq!(g.integrate(&vals).unwrap(), exact, max_relative = 1e-10);
    }

    #[test]
    fn integrate_rejects_bad_input() {
        let g = VelocityGrid::new(2.0, 4).unwrap();
        assert!(g.integrate(&[0.0; 63]).is_err());
        let mut v = vec![0.0; 64];
        v[3] = f64::NAN;
        assert!(g.integrate(&v).is_err());
    }

    #[test]
    fn sample_at_node_returns_node_value() {
        let g = VelocityGrid::new(2.0, 4).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|i| i as f64).collect();
        for idx in 0..g.len() {
            let s = g.trilinear_sample(&vals, &g.node(idx)).unwrap();
            assert_relative_eq!(s, idx as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn sample_outside_hull_is_zero() {
        let g = VelocityGrid::new(2.0, 4).unwrap();
        let vals = vec![1.0; g.len()];
        assert_eq!(g.trilinear_sample(&vals, &Vec3::new(1.9, 0.0, 0.0)).unwrap(), 0.0);
        assert_eq!(g.trilinear_sample(&vals, &Vec3::new(0.0, 0.0, 1.5)).unwrap(), 1.0);
        assert!(g.trilinear_sample(&vals, &Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn sphere_weights_sum_to_area() {
        for p in [1, 3, 5, 7, 11] {
            let s = SphereQuadrature::new(p).unwrap();
            let total: f64 = s.weights().iter().sum();
            assert_relative_eq!(total, 4.0 * PI, max_relative = 1e-13);
        }
        assert!(SphereQuadrature::new(4).is_err());
        assert!(SphereQuadrature::new(0).is_err());
    }

    // Exact monomial integrals over S^2: for even (a, b, c),
    // 2 G(A) G(B) G(C) / G(A + B + C) with A = (a + 1)/2 etc.
    fn monomial_oracle(a: u32, b: u32, c: u32) -> f64 {
        if a % 2 == 1 || b % 2 == 1 || c % 2 == 1 {
            return 0.0;
        }
        // Gamma of half-integers via the double factorial recursion.
        fn gamma_half(twice: u32) -> f64 {
            // returns Gamma(twice / 2)
            if twice == 1 {
                return PI.sqrt();
            }
            if twice == 2 {
                return 1.0;
            }
            (twice as f64 / 2.0 - 1.0) * gamma_half(twice - 2)
        }
        2.0 * gamma_half(a + 1) * gamma_half(b + 1) * gamma_half(c + 1) / gamma_half(a + b + c + 3)
    }

    #[test]
    fn sphere_rule_exact_to_its_order() {
        for p in [1usize, 3, 5, 7] {
            let s = SphereQuadrature::new(p).unwrap();
            for a in 0..=p as u32 {
                for b in 0..=(p as u32 - a) {
                    for c in 0..=(p as u32 - a - b) {
                        let got = s.integrate(|d| d.x.powi(a as i32) * d.y.powi(b as i32) * d.z.powi(c as i32));
                        let want = monomial_oracle(a, b, c);
                        assert!((got - want).abs() < 1e-12, "p={p} ({a},{b},{c}): {got} vs {want}");
                    }
                }
            }
        }
    }

    #[test]
    fn sphere_rule_is_antipodal() {
        let s = SphereQuadrature::new(5).unwrap();
        for d in s.directions() {
            assert!(s.directions().iter().any(|e| (e + d).norm() < 1e-14));
        }
    }

    #[test]
    fn adaptive_gaussian_moment() {
        let got = adaptive(|x: f64| x * x * (-x * x).exp(), 0.0, 10.0, 1e-15).unwrap();
        assert_relative_eq!(got, PI.sqrt() / 4.0, max_relative = 1e-13);
    }

    proptest! {
        #[test]
        fn spacing_times_count_is_box_width(l in 0.1f64..50.0, half in 2usize..100) {
            let n = 2 * half;
            let g = VelocityGrid::new(l, n).unwrap();
            let width = g.spacing() * n as f64;
            prop_assert!((width - 2.0 * l).abs() <= 4.0 * f64::EPSILON * l);
        }

        #[test]
        fn sample_reproduces_affine_functions(
            x in -1.4f64..1.4, y in -1.4f64..1.4, z in -1.4f64..1.4,
            a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0,
        ) {
            let g = VelocityGrid::new(2.0, 6).unwrap();
            let vals = g.tabulate(|v| 1.0 + a * v.x + b * v.y + c * v.z);
            let s = g.trilinear_sample(&vals, &Vec3::new(x, y, z)).unwrap();
            prop_assert!((s - (1.0 + a * x + b * y + c * z)).abs() < 1e-12);
        }

        #[test]
        fn sample_is_bounded_by_node_values(
            x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0, seed in 0u64..1000,
        ) {
            let g = VelocityGrid::new(2.0, 4).unwrap();
            let vals: Vec<f64> = (0..g.len()).map(|i| ((i as u64 * 2654435761 + seed) % 97) as f64 / 97.0).collect();
            let s = g.trilinear_sample(&vals, &Vec3::new(x, y, z)).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}
