//! Shipped manifold backends.
//!
//! Two families are provided: flat n-tori with an optional precomposed
//! conformal bump (single periodic chart), and embedded hypersurfaces in
//! Euclidean space through stereographic parametrization charts with the
//! induced metric (round spheres, ellipsoids, and the product S^1 x S^2).
//! Analytic oracles exist for the flat and round instances, which is why the
//! test suite leans on them.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{GeonetError, Result};
use crate::metric::{MetricBackend, MetricField};

/// Smooth periodic conformal bump `u(x) = a * prod_i sin(2 pi w_i x_i / L_i + phase_i)`
/// over axes with nonzero wave number; the torus metric becomes `e^{2u} I`.
#[derive(Debug, Clone)]
pub struct TorusBump {
    pub amplitude: f64,
    pub waves: Vec<i32>,
    pub phases: Vec<f64>,
}

impl TorusBump {
    fn eval(&self, x: &DVector<f64>, periods: &[f64]) -> (f64, DVector<f64>) {
        let n = x.len();
        let mut factors = vec![1.0; n];
        let mut dfactors = vec![0.0; n];
        for i in 0..n {
            if self.waves[i] != 0 {
                let om = 2.0 * std::f64::consts::PI * self.waves[i] as f64 / periods[i];
                let arg = om * x[i] + self.phases[i];
                factors[i] = arg.sin();
                dfactors[i] = om * arg.cos();
            }
        }
        let mut u = self.amplitude;
        for f in &factors {
            u *= f;
        }
        let mut du = DVector::zeros(n);
        for k in 0..n {
            if self.waves[k] != 0 {
                let mut d = self.amplitude * dfactors[k];
                for (i, f) in factors.iter().enumerate() {
                    if i != k {
                        d *= f;
                    }
                }
                du[k] = d;
            }
        }
        (u, du)
    }
}

/// Flat n-torus `R^n / (L_1 Z x ... x L_n Z)` in a single periodic chart,
/// optionally precomposed with a conformal bump.
pub struct FlatTorus {
    periods: Vec<f64>,
    bump: Option<TorusBump>,
}

impl FlatTorus {
    pub fn new(periods: Vec<f64>) -> Self {
        FlatTorus {
            periods,
            bump: None,
        }
    }

    pub fn unit(dim: usize) -> Self {
        Self::new(vec![1.0; dim])
    }

    pub fn with_bump(periods: Vec<f64>, bump: TorusBump) -> Result<Self> {
        let n = periods.len();
        if bump.waves.len() != n || bump.phases.len() != n {
            return Err(GeonetError::Input(
                "torus bump wave/phase length must match dimension".into(),
            ));
        }
        Ok(FlatTorus {
            periods,
            bump: Some(bump),
        })
    }

    /// Convenience: wrap into a `MetricField` with the natural bound
    /// `min(period)/2` unless overridden.
    pub fn field(self, injectivity_radius_bound: Option<f64>) -> Result<MetricField> {
        let natural = self.periods.iter().cloned().fold(f64::INFINITY, f64::min) / 2.0;
        MetricField::new(
            Arc::new(self),
            injectivity_radius_bound.unwrap_or(natural),
        )
    }
}

impl MetricBackend for FlatTorus {
    fn dim(&self) -> usize {
        self.periods.len()
    }

    fn chart_count(&self) -> usize {
        1
    }

    fn chart_contains(&self, chart: usize, _x: &DVector<f64>) -> bool {
        chart == 0
    }

    fn transition(
        &self,
        _from: usize,
        _to: usize,
        _x: &DVector<f64>,
    ) -> Option<(DVector<f64>, DMatrix<f64>)> {
        None
    }

    fn eval(&self, _chart: usize, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        match &self.bump {
            None => DMatrix::identity(n, n),
            Some(b) => {
                let (u, _) = b.eval(x, &self.periods);
                DMatrix::identity(n, n) * (2.0 * u).exp()
            }
        }
    }

    fn eval_d1(&self, _chart: usize, x: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = self.dim();
        match &self.bump {
            None => (
                DMatrix::identity(n, n),
                vec![DMatrix::zeros(n, n); n],
            ),
            Some(b) => {
                let (u, du) = b.eval(x, &self.periods);
                let e = (2.0 * u).exp();
                let g = DMatrix::identity(n, n) * e;
                let dg = (0..n)
                    .map(|k| DMatrix::identity(n, n) * (2.0 * du[k] * e))
                    .collect();
                (g, dg)
            }
        }
    }

    fn is_flat(&self) -> bool {
        self.bump.is_none()
    }

    fn periods(&self, _chart: usize) -> Option<Vec<f64>> {
        Some(self.periods.clone())
    }

    fn describe(&self) -> String {
        match &self.bump {
            None => format!("flat torus, periods {:?}", self.periods),
            Some(b) => format!(
                "conformally bumped torus, periods {:?}, amplitude {}",
                self.periods, b.amplitude
            ),
        }
    }
}

// ---------------------------------------------------------------------------
// Stereographic hypersurfaces
// ---------------------------------------------------------------------------

/// Inverse stereographic parametrization of the unit sphere S^n in R^{n+1}.
/// Chart 0 projects from the north pole (misses it, x = 0 is the south pole);
/// chart 1 projects from the south pole. Transition both ways: x -> x/|x|^2.
fn stereo_point(chart: usize, x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    let q = 1.0 + x.norm_squared();
    let mut p = DVector::zeros(n + 1);
    for i in 0..n {
        p[i] = 2.0 * x[i] / q;
    }
    p[n] = (x.norm_squared() - 1.0) / q;
    if chart == 1 {
        p[n] = -p[n];
    }
    p
}

/// First derivatives of the sphere parametrization: `out[(a, j)] = dS_a/dx_j`.
fn stereo_d1(chart: usize, x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let q = 1.0 + x.norm_squared();
    let q2 = q * q;
    let mut d = DMatrix::zeros(n + 1, n);
    for a in 0..n {
        for j in 0..n {
            let kr = if a == j { 2.0 / q } else { 0.0 };
            d[(a, j)] = kr - 4.0 * x[a] * x[j] / q2;
        }
    }
    for j in 0..n {
        d[(n, j)] = 4.0 * x[j] / q2;
    }
    if chart == 1 {
        for j in 0..n {
            d[(n, j)] = -d[(n, j)];
        }
    }
    d
}

/// Second derivatives: `out[k][(a, j)] = d^2 S_a / dx_k dx_j`.
fn stereo_d2(chart: usize, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
    let n = x.len();
    let q = 1.0 + x.norm_squared();
    let q2 = q * q;
    let q3 = q2 * q;
    let kd = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    let mut out = vec![DMatrix::zeros(n + 1, n); n];
    for k in 0..n {
        for a in 0..n {
            for j in 0..n {
                out[k][(a, j)] = -4.0 * (kd(a, j) * x[k] + kd(a, k) * x[j] + kd(j, k) * x[a]) / q2
                    + 16.0 * x[a] * x[j] * x[k] / q3;
            }
        }
        for j in 0..n {
            let mut v = 4.0 * kd(j, k) / q2 - 16.0 * x[j] * x[k] / q3;
            if chart == 1 {
                v = -v;
            }
            out[k][(n, j)] = v;
        }
    }
    out
}

fn inversion_jacobian(x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let r2 = x.norm_squared();
    let mut j = DMatrix::identity(n, n) * (1.0 / r2);
    for a in 0..n {
        for b in 0..n {
            j[(a, b)] -= 2.0 * x[a] * x[b] / (r2 * r2);
        }
    }
    j
}

/// Embedded hypersurface `diag(A) * S^n` in `R^{n+1}` via two stereographic
/// charts with induced metric. Equal semi-axes give the round sphere, for
/// which the conformal closed form `4R^2/q^2 I` is used.
pub struct StereoHypersurface {
    semi_axes: Vec<f64>,
    round_radius: Option<f64>,
}

impl StereoHypersurface {
    pub fn sphere(dim: usize, radius: f64) -> Self {
        StereoHypersurface {
            semi_axes: vec![radius; dim + 1],
            round_radius: Some(radius),
        }
    }

    pub fn ellipsoid(semi_axes: Vec<f64>) -> Result<Self> {
        if semi_axes.len() < 3 {
            return Err(GeonetError::Input(
                "ellipsoid needs at least 3 semi-axes (surface dim >= 2)".into(),
            ));
        }
        let first = semi_axes[0];
        let round = semi_axes.iter().all(|a| (*a - first).abs() < 1e-15);
        Ok(StereoHypersurface {
            round_radius: if round { Some(first) } else { None },
            semi_axes,
        })
    }

    pub fn field(self, injectivity_radius_bound: f64) -> Result<MetricField> {
        MetricField::new(Arc::new(self), injectivity_radius_bound)
    }

    fn param_d1(&self, chart: usize, x: &DVector<f64>) -> DMatrix<f64> {
        let mut d = stereo_d1(chart, x);
        for a in 0..self.semi_axes.len() {
            for j in 0..x.len() {
                d[(a, j)] *= self.semi_axes[a];
            }
        }
        d
    }
}

impl MetricBackend for StereoHypersurface {
    fn dim(&self) -> usize {
        self.semi_axes.len() - 1
    }

    fn chart_count(&self) -> usize {
        2
    }

    fn chart_contains(&self, chart: usize, x: &DVector<f64>) -> bool {
        chart < 2 && x.norm() < 8.0
    }

    fn comfortable(&self, chart: usize, x: &DVector<f64>) -> bool {
        chart < 2 && x.norm() <= 1.6
    }

    fn preferred_chart(&self, chart: usize, x: &DVector<f64>) -> usize {
        if x.norm() > 1.6 {
            1 - chart
        } else {
            chart
        }
    }

    fn transition(
        &self,
        from: usize,
        to: usize,
        x: &DVector<f64>,
    ) -> Option<(DVector<f64>, DMatrix<f64>)> {
        if from == to || from > 1 || to > 1 {
            return None;
        }
        let r2 = x.norm_squared();
        if r2 < 1e-12 {
            return None;
        }
        Some((x / r2, inversion_jacobian(x)))
    }

    fn eval(&self, chart: usize, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        if let Some(r) = self.round_radius {
            let q = 1.0 + x.norm_squared();
            return DMatrix::identity(n, n) * (4.0 * r * r / (q * q));
        }
        let d = self.param_d1(chart, x);
        d.transpose() * d
    }

    fn eval_d1(&self, chart: usize, x: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = self.dim();
        if let Some(r) = self.round_radius {
            let q = 1.0 + x.norm_squared();
            let g = DMatrix::identity(n, n) * (4.0 * r * r / (q * q));
            let dg = (0..n)
                .map(|k| DMatrix::identity(n, n) * (-16.0 * r * r * x[k] / (q * q * q)))
                .collect();
            return (g, dg);
        }
        let d1 = self.param_d1(chart, x);
        let mut d2 = stereo_d2(chart, x);
        for k in 0..n {
            for a in 0..=n {
                for j in 0..n {
                    d2[k][(a, j)] *= self.semi_axes[a];
                }
            }
        }
        let g = d1.transpose() * &d1;
        let mut dg = Vec::with_capacity(n);
        for k in 0..n {
            let m = d2[k].transpose() * &d1 + d1.transpose() * &d2[k];
            dg.push(m);
        }
        (g, dg)
    }

    fn embed(&self, chart: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
        let mut p = stereo_point(chart, x);
        for a in 0..self.semi_axes.len() {
            p[a] *= self.semi_axes[a];
        }
        Some(p)
    }

    fn describe(&self) -> String {
        match self.round_radius {
            Some(r) => format!("round S^{} of radius {}", self.dim(), r),
            None => format!("ellipsoid with semi-axes {:?}", self.semi_axes),
        }
    }
}

// ---------------------------------------------------------------------------
// Product S^1 x S^2
// ---------------------------------------------------------------------------

/// Product of a circle of radius `r1` with a round 2-sphere of radius `r2`,
/// embedded in R^5. Coordinates `(psi, y1, y2)`: `psi` periodic of period
/// `2 pi`, `y` stereographic on the sphere factor (two charts).
pub struct ProductS1S2 {
    pub r1: f64,
    pub r2: f64,
}

impl ProductS1S2 {
    pub fn new(r1: f64, r2: f64) -> Self {
        ProductS1S2 { r1, r2 }
    }

    pub fn field(self, injectivity_radius_bound: f64) -> Result<MetricField> {
        MetricField::new(Arc::new(self), injectivity_radius_bound)
    }

    fn y(x: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[x[1], x[2]])
    }
}

impl MetricBackend for ProductS1S2 {
    fn dim(&self) -> usize {
        3
    }

    fn chart_count(&self) -> usize {
        2
    }

    fn chart_contains(&self, chart: usize, x: &DVector<f64>) -> bool {
        chart < 2 && Self::y(x).norm() < 8.0
    }

    fn comfortable(&self, chart: usize, x: &DVector<f64>) -> bool {
        chart < 2 && Self::y(x).norm() <= 1.6
    }

    fn preferred_chart(&self, chart: usize, x: &DVector<f64>) -> usize {
        if Self::y(x).norm() > 1.6 {
            1 - chart
        } else {
            chart
        }
    }

    fn transition(
        &self,
        from: usize,
        to: usize,
        x: &DVector<f64>,
    ) -> Option<(DVector<f64>, DMatrix<f64>)> {
        if from == to || from > 1 || to > 1 {
            return None;
        }
        let y = Self::y(x);
        let r2 = y.norm_squared();
        if r2 < 1e-12 {
            return None;
        }
        let ynew = &y / r2;
        let jy = inversion_jacobian(&y);
        let mut out = DVector::zeros(3);
        out[0] = x[0];
        out[1] = ynew[0];
        out[2] = ynew[1];
        let mut j = DMatrix::identity(3, 3);
        for a in 0..2 {
            for b in 0..2 {
                j[(a + 1, b + 1)] = jy[(a, b)];
            }
        }
        Some((out, j))
    }

    fn eval(&self, _chart: usize, x: &DVector<f64>) -> DMatrix<f64> {
        let q = 1.0 + Self::y(x).norm_squared();
        let c = 4.0 * self.r2 * self.r2 / (q * q);
        DMatrix::from_diagonal(&DVector::from_column_slice(&[self.r1 * self.r1, c, c]))
    }

    fn eval_d1(&self, chart: usize, x: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let g = self.eval(chart, x);
        let q = 1.0 + Self::y(x).norm_squared();
        let dc = |yk: f64| -16.0 * self.r2 * self.r2 * yk / (q * q * q);
        let mut dg = vec![DMatrix::zeros(3, 3); 3];
        for k in 1..3 {
            let d = dc(x[k]);
            dg[k][(1, 1)] = d;
            dg[k][(2, 2)] = d;
        }
        (g, dg)
    }

    fn embed(&self, chart: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
        let sp = stereo_point(chart, &Self::y(x));
        let mut p = DVector::zeros(5);
        p[0] = self.r1 * x[0].cos();
        p[1] = self.r1 * x[0].sin();
        for a in 0..3 {
            p[2 + a] = self.r2 * sp[a];
        }
        Some(p)
    }

    fn periods(&self, _chart: usize) -> Option<Vec<f64>> {
        Some(vec![2.0 * std::f64::consts::PI, 0.0, 0.0])
    }

    fn describe(&self) -> String {
        format!("S^1({}) x S^2({})", self.r1, self.r2)
    }
}

// ---------------------------------------------------------------------------
// Explicit single-chart metric (mostly for tests and custom instances)
// ---------------------------------------------------------------------------

type GFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type DomainFn = dyn Fn(&DVector<f64>) -> bool + Send + Sync;

/// A metric given by an explicit closure on one chart. First derivatives are
/// centered differences of the closure (consistent with `eval` by
/// construction).
pub struct ExplicitMetric {
    dim: usize,
    g: Box<GFn>,
    domain: Box<DomainFn>,
    label: String,
    fd_step: f64,
}

impl ExplicitMetric {
    pub fn new<F>(dim: usize, label: &str, g: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        ExplicitMetric {
            dim,
            g: Box::new(g),
            domain: Box::new(|_| true),
            label: label.to_string(),
            fd_step: 1e-6,
        }
    }

    pub fn with_domain<D>(mut self, domain: D) -> Self
    where
        D: Fn(&DVector<f64>) -> bool + Send + Sync + 'static,
    {
        self.domain = Box::new(domain);
        self
    }

    pub fn field(self, injectivity_radius_bound: f64) -> Result<MetricField> {
        MetricField::new(Arc::new(self), injectivity_radius_bound)
    }
}

impl MetricBackend for ExplicitMetric {
    fn dim(&self) -> usize {
        self.dim
    }

    fn chart_count(&self) -> usize {
        1
    }

    fn chart_contains(&self, chart: usize, x: &DVector<f64>) -> bool {
        chart == 0 && (self.domain)(x)
    }

    fn transition(
        &self,
        _from: usize,
        _to: usize,
        _x: &DVector<f64>,
    ) -> Option<(DVector<f64>, DMatrix<f64>)> {
        None
    }

    fn eval(&self, _chart: usize, x: &DVector<f64>) -> DMatrix<f64> {
        (self.g)(x)
    }

    fn eval_d1(&self, _chart: usize, x: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let g = (self.g)(x);
        let h = self.fd_step;
        let mut dg = Vec::with_capacity(self.dim);
        for k in 0..self.dim {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            dg.push(((self.g)(&xp) - (self.g)(&xm)) / (2.0 * h));
        }
        (g, dg)
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{verify_metric_derivatives, verify_positive_definite, ChartPoint};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn probe_backend(field: &MetricField, center: ChartPoint, radius: f64) {
        let mut rng = StdRng::seed_from_u64(7);
        verify_metric_derivatives(field, &center, radius, 24, &mut rng, 1e-6).unwrap();
        verify_positive_definite(field, &center, radius, 24, &mut rng).unwrap();
    }

    #[test]
    fn flat_torus_identity_metric() {
        let field = FlatTorus::unit(3).field(None).unwrap();
        let p = ChartPoint::from_slice(0, &[0.3, 0.7, 0.1]);
        let g = field.eval(&p).unwrap();
        assert_eq!(g, DMatrix::identity(3, 3));
        assert!(field.is_flat());
        assert_eq!(field.injectivity_radius_bound(), 0.5);
    }

    #[test]
    fn bumped_torus_derivatives_match_finite_differences() {
        let bump = TorusBump {
            amplitude: 0.05,
            waves: vec![1, 1, 1],
            phases: vec![0.2, 0.4, 0.8],
        };
        let field = FlatTorus::with_bump(vec![1.0; 3], bump)
            .unwrap()
            .field(Some(0.4))
            .unwrap();
        assert!(!field.is_flat());
        probe_backend(&field, ChartPoint::from_slice(0, &[0.5, 0.5, 0.5]), 0.4);
    }

    #[test]
    fn sphere_round_and_embedding_metrics_agree() {
        // The conformal closed form must match the induced-metric sums.
        let round = StereoHypersurface::sphere(2, 1.7);
        let via_embedding = StereoHypersurface {
            semi_axes: vec![1.7; 3],
            round_radius: None,
        };
        let x = DVector::from_column_slice(&[0.3, -0.8]);
        for chart in 0..2 {
            let a = round.eval(chart, &x);
            let b = via_embedding.eval(chart, &x);
            assert!((a - b).amax() < 1e-12);
            let (_, da) = round.eval_d1(chart, &x);
            let (_, db) = via_embedding.eval_d1(chart, &x);
            for k in 0..2 {
                assert!((&da[k] - &db[k]).amax() < 1e-11);
            }
        }
    }

    #[test]
    fn ellipsoid_derivatives_match_finite_differences() {
        let field = StereoHypersurface::ellipsoid(vec![1.0, 1.1, 1.2])
            .unwrap()
            .field(1.0)
            .unwrap();
        probe_backend(&field, ChartPoint::from_slice(0, &[0.2, -0.4]), 0.5);
        probe_backend(&field, ChartPoint::from_slice(1, &[0.1, 0.3]), 0.5);
    }

    #[test]
    fn s3_derivatives_match_finite_differences() {
        let field = StereoHypersurface::sphere(3, 1.0).field(3.0).unwrap();
        probe_backend(&field, ChartPoint::from_slice(0, &[0.2, -0.1, 0.4]), 0.4);
    }

    #[test]
    fn product_derivatives_match_finite_differences() {
        let field = ProductS1S2::new(1.0, 0.7).field(1.0).unwrap();
        probe_backend(&field, ChartPoint::from_slice(0, &[1.0, 0.2, -0.3]), 0.4);
    }

    #[test]
    fn stereo_transition_roundtrip_and_jacobian() {
        let s = StereoHypersurface::sphere(2, 1.0);
        let x = DVector::from_column_slice(&[1.3, -0.4]);
        let (y, j) = s.transition(0, 1, &x).unwrap();
        let (back, jback) = s.transition(1, 0, &y).unwrap();
        assert!((&back - &x).norm() < 1e-14);
        // Jacobians must compose to the identity.
        let prod = jback * j;
        assert!((prod - DMatrix::identity(2, 2)).amax() < 1e-12);
        // Same embedded point in both charts.
        let pa = s.embed(0, &x).unwrap();
        let pb = s.embed(1, &y).unwrap();
        assert!((pa - pb).norm() < 1e-14);
    }

    #[test]
    fn transition_is_metric_isometry() {
        let s = StereoHypersurface::ellipsoid(vec![1.0, 1.3, 0.9]).unwrap();
        let x = DVector::from_column_slice(&[0.9, 0.7]);
        let (y, j) = s.transition(0, 1, &x).unwrap();
        let g0 = s.eval(0, &x);
        let g1 = s.eval(1, &y);
        // g0 = J^T g1 J
        let pulled = j.transpose() * g1 * &j;
        assert!((pulled - g0).amax() < 1e-12);
    }

    #[test]
    fn explicit_theta_phi_sphere_christoffel() {
        // Round S^2 in colatitude/longitude coordinates: the classical
        // Gamma^theta_{phi phi} = -sin(theta) cos(theta).
        let field = ExplicitMetric::new(2, "S^2 (theta, phi)", |x| {
            let mut g = DMatrix::zeros(2, 2);
            g[(0, 0)] = 1.0;
            g[(1, 1)] = x[0].sin().powi(2);
            g
        })
        .with_domain(|x| x[0] > 0.05 && x[0] < std::f64::consts::PI - 0.05)
        .field(3.0)
        .unwrap();
        for theta in [0.4, 1.0, 2.3] {
            let p = ChartPoint::from_slice(0, &[theta, 1.1]);
            let gamma = field.christoffel(&p).unwrap();
            let expected = -theta.sin() * theta.cos();
            assert!(
                (gamma[0][(1, 1)] - expected).abs() < 1e-7,
                "theta={theta}: {} vs {expected}",
                gamma[0][(1, 1)]
            );
            // symmetry in the lower indices
            for k in 0..2 {
                assert!((gamma[k][(0, 1)] - gamma[k][(1, 0)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conformal_christoffel_closed_form_oracle() {
        // For g = e^{2u} delta the Levi-Civita symbols are
        // Gamma^k_ij = d_ik du_j + d_jk du_i - d_ij du_k.
        let bump = TorusBump {
            amplitude: 0.08,
            waves: vec![1, 2, 1],
            phases: vec![0.0, 0.7, 1.9],
        };
        let torus = FlatTorus::with_bump(vec![1.0; 3], bump.clone()).unwrap();
        let field = FlatTorus::with_bump(vec![1.0; 3], bump.clone())
            .unwrap()
            .field(Some(0.4))
            .unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        use rand::Rng;
        for _ in 0..10 {
            let x = DVector::from_fn(3, |_, _| rng.gen_range(0.0..1.0));
            let p = ChartPoint::new(0, x.clone());
            let gamma = field.christoffel(&p).unwrap();
            let (_, du) = bump.eval(&x, &torus.periods);
            for k in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        let kd = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                        let expected =
                            kd(i, k) * du[j] + kd(j, k) * du[i] - kd(i, j) * du[k];
                        assert!(
                            (gamma[k][(i, j)] - expected).abs() < 1e-9,
                            "Gamma^{k}_{i}{j}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn flat_christoffel_all_zero() {
        let field = FlatTorus::unit(3).field(None).unwrap();
        let p = ChartPoint::from_slice(0, &[0.9, 0.2, 0.6]);
        let gamma = field.christoffel(&p).unwrap();
        for k in 0..3 {
            assert_eq!(gamma[k].amax(), 0.0);
        }
    }

    #[test]
    fn domain_error_outside_atlas() {
        let field = ExplicitMetric::new(2, "box", |_| DMatrix::identity(2, 2))
            .with_domain(|x| x.norm() < 1.0)
            .field(0.5)
            .unwrap();
        let err = field
            .eval(&ChartPoint::from_slice(0, &[2.0, 0.0]))
            .unwrap_err();
        assert!(matches!(err, GeonetError::Domain(_)));
    }
}
