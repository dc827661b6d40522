//! Metric fields on chart atlases.
//!
//! A [`MetricField`] evaluates the metric tensor and its coordinate
//! derivatives on an atlas of charts. Backends provide analytic first
//! derivatives; higher orders fall back to nested centered differences with
//! Richardson extrapolation. The injectivity radius lower bound is supplied
//! by the caller per manifold instance and is only used as a threshold.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{GeonetError, Result};

/// A point expressed in one chart of an atlas.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint {
    pub chart: usize,
    pub coords: DVector<f64>,
}

impl ChartPoint {
    pub fn new(chart: usize, coords: DVector<f64>) -> Self {
        ChartPoint { chart, coords }
    }

    pub fn from_slice(chart: usize, coords: &[f64]) -> Self {
        ChartPoint {
            chart,
            coords: DVector::from_column_slice(coords),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Chart-level metric data provider.
///
/// Chart conventions: `chart_contains` is the full (open) domain;
/// `comfortable` is a strict subdomain with hysteresis so that integration
/// does not thrash between overlapping charts.
pub trait MetricBackend: Send + Sync {
    fn dim(&self) -> usize;
    fn chart_count(&self) -> usize;

    fn chart_contains(&self, chart: usize, x: &DVector<f64>) -> bool;

    fn comfortable(&self, chart: usize, x: &DVector<f64>) -> bool {
        self.chart_contains(chart, x)
    }

    /// Map chart coordinates into another chart, with the transition Jacobian.
    fn transition(
        &self,
        from: usize,
        to: usize,
        x: &DVector<f64>,
    ) -> Option<(DVector<f64>, DMatrix<f64>)>;

    /// Chart to move to when `x` is no longer comfortable in `chart`.
    fn preferred_chart(&self, chart: usize, _x: &DVector<f64>) -> usize {
        chart
    }

    fn eval(&self, chart: usize, x: &DVector<f64>) -> DMatrix<f64>;

    /// Metric and its first coordinate derivatives: `dg[k] = ∂_k g`.
    fn eval_d1(&self, chart: usize, x: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>);

    /// True when geodesics in chart coordinates are straight lines.
    fn is_flat(&self) -> bool {
        false
    }

    /// Euclidean embedding of a point, when the backend carries one.
    fn embed(&self, _chart: usize, _x: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    /// Coordinate periods for single-chart periodic backends.
    fn periods(&self, _chart: usize) -> Option<Vec<f64>> {
        None
    }

    /// Short human-readable backend tag for reports.
    fn describe(&self) -> String;
}

/// An evaluable metric tensor with derivatives on a chart atlas, together
/// with a user-supplied positive lower bound for the injectivity radius.
#[derive(Clone)]
pub struct MetricField {
    backend: Arc<dyn MetricBackend>,
    injectivity_radius_bound: f64,
}

impl std::fmt::Debug for MetricField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricField")
            .field("backend", &self.backend.describe())
            .field("r_inj", &self.injectivity_radius_bound)
            .finish()
    }
}

impl MetricField {
    pub fn new(backend: Arc<dyn MetricBackend>, injectivity_radius_bound: f64) -> Result<Self> {
        if !(injectivity_radius_bound > 0.0) {
            return Err(GeonetError::Input(
                "injectivity radius bound must be positive".into(),
            ));
        }
        Ok(MetricField {
            backend,
            injectivity_radius_bound,
        })
    }

    pub fn backend(&self) -> &Arc<dyn MetricBackend> {
        &self.backend
    }

    pub fn dim(&self) -> usize {
        self.backend.dim()
    }

    pub fn injectivity_radius_bound(&self) -> f64 {
        self.injectivity_radius_bound
    }

    pub fn is_flat(&self) -> bool {
        self.backend.is_flat()
    }

    pub fn describe(&self) -> String {
        self.backend.describe()
    }

    pub fn contains(&self, p: &ChartPoint) -> bool {
        p.chart < self.backend.chart_count() && self.backend.chart_contains(p.chart, &p.coords)
    }

    pub fn eval(&self, p: &ChartPoint) -> Result<DMatrix<f64>> {
        self.check_domain(p)?;
        Ok(self.backend.eval(p.chart, &p.coords))
    }

    pub fn eval_d1(&self, p: &ChartPoint) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        self.check_domain(p)?;
        Ok(self.backend.eval_d1(p.chart, &p.coords))
    }

    fn check_domain(&self, p: &ChartPoint) -> Result<()> {
        if !self.contains(p) {
            return Err(GeonetError::Domain(format!(
                "point {:?} (chart {}) outside atlas",
                p.coords.as_slice(),
                p.chart
            )));
        }
        Ok(())
    }

    /// Metric derivatives up to `order` by nested centered differences on top
    /// of the analytic first order. `derivs[m]` is the list of order-m
    /// multi-partials in lexicographic axis order (m <= 2 supported).
    pub fn eval_derivs(&self, p: &ChartPoint, order: usize) -> Result<MetricJet> {
        self.check_domain(p)?;
        let (g, dg) = self.backend.eval_d1(p.chart, &p.coords);
        let mut jet = MetricJet {
            g,
            dg: if order >= 1 { Some(dg) } else { None },
            d2g: None,
        };
        if order >= 2 {
            let n = self.dim();
            let h = 1e-4;
            let mut d2 = vec![vec![DMatrix::zeros(n, n); n]; n];
            for k in 0..n {
                // Richardson-extrapolated centered difference of ∂g in
                // direction k, applied to the analytic first derivatives.
                let diff = |step: f64| -> Vec<DMatrix<f64>> {
                    let mut xp = p.coords.clone();
                    xp[k] += step;
                    let mut xm = p.coords.clone();
                    xm[k] -= step;
                    let (_, dgp) = self.backend.eval_d1(p.chart, &xp);
                    let (_, dgm) = self.backend.eval_d1(p.chart, &xm);
                    (0..n)
                        .map(|l| (&dgp[l] - &dgm[l]) / (2.0 * step))
                        .collect()
                };
                let c1 = diff(h);
                let c2 = diff(h / 2.0);
                for l in 0..n {
                    d2[k][l] = (&c2[l] * 4.0 - &c1[l]) / 3.0;
                }
            }
            jet.d2g = Some(d2);
        }
        if order >= 3 {
            return Err(GeonetError::Resolution(
                "metric derivatives above order 2 are not provided".into(),
            ));
        }
        Ok(jet)
    }

    /// Inner product of tangent vectors at `p`.
    pub fn inner(&self, p: &ChartPoint, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        let g = self.eval(p)?;
        Ok((u.transpose() * g * v)[(0, 0)])
    }

    pub fn norm(&self, p: &ChartPoint, v: &DVector<f64>) -> Result<f64> {
        Ok(self.inner(p, v, v)?.max(0.0).sqrt())
    }

    /// Christoffel symbols at `p`: `gamma[k][(i, j)] = Γ^k_ij`.
    pub fn christoffel(&self, p: &ChartPoint) -> Result<Vec<DMatrix<f64>>> {
        let (g, dg) = self.eval_d1(p)?;
        let n = self.dim();
        let ginv = g.clone().try_inverse().ok_or_else(|| {
            GeonetError::Geometry("metric not invertible at requested point".into())
        })?;
        let mut gamma = vec![DMatrix::zeros(n, n); n];
        for i in 0..n {
            for j in i..n {
                for l in 0..n {
                    let c = 0.5 * (dg[i][(l, j)] + dg[j][(i, l)] - dg[l][(i, j)]);
                    for k in 0..n {
                        gamma[k][(i, j)] += ginv[(k, l)] * c;
                    }
                }
                if i != j {
                    for k in 0..n {
                        gamma[k][(j, i)] = gamma[k][(i, j)];
                    }
                }
            }
        }
        Ok(gamma)
    }

    /// Geodesic acceleration `-Γ^k_ij v^i v^j` at `p`.
    pub fn geodesic_acceleration(&self, p: &ChartPoint, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(-self.christoffel_apply_raw(p.chart, &p.coords, v, v))
    }

    /// Contraction `Γ^k_ij v^i w^j` without materializing the symbols:
    /// solves `g·out = ½ Σ_ij v^i w^j (∂_i g_·j + ∂_j g_i· − ∇ g_ij)`.
    pub fn christoffel_apply_raw(
        &self,
        chart: usize,
        x: &DVector<f64>,
        v: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        let n = x.len();
        let (g, dg) = self.backend.eval_d1(chart, x);
        let mut rhs = DVector::zeros(n);
        for i in 0..n {
            rhs.axpy(0.5 * v[i], &(&dg[i] * w), 1.0);
        }
        for j in 0..n {
            rhs.axpy(0.5 * w[j], &(&dg[j] * v), 1.0);
        }
        for l in 0..n {
            rhs[l] -= 0.5 * (v.transpose() * &dg[l] * w)[(0, 0)];
        }
        g.lu().solve(&rhs).expect("metric positive definite")
    }

    /// Move a point (with optional tangent vectors) into a comfortable chart.
    /// Tangent vectors are pushed forward by the transition Jacobian.
    pub fn normalize_chart(
        &self,
        p: &ChartPoint,
        vectors: &mut [&mut DVector<f64>],
    ) -> Result<ChartPoint> {
        if self.backend.comfortable(p.chart, &p.coords) {
            return Ok(p.clone());
        }
        let to = self.backend.preferred_chart(p.chart, &p.coords);
        if to == p.chart {
            return Ok(p.clone());
        }
        let (coords, jac) = self
            .backend
            .transition(p.chart, to, &p.coords)
            .ok_or_else(|| {
                GeonetError::Integration(format!(
                    "chart exit without valid transition (chart {} -> {})",
                    p.chart, to
                ))
            })?;
        for v in vectors.iter_mut() {
            **v = &jac * &**v;
        }
        Ok(ChartPoint::new(to, coords))
    }

    /// Express `p` in chart `to` (no comfort logic).
    pub fn to_chart(&self, p: &ChartPoint, to: usize) -> Option<(ChartPoint, DMatrix<f64>)> {
        if p.chart == to {
            return Some((p.clone(), DMatrix::identity(self.dim(), self.dim())));
        }
        self.backend
            .transition(p.chart, to, &p.coords)
            .map(|(c, j)| (ChartPoint::new(to, c), j))
    }

    /// Coordinate displacement `to - from` within one chart, wrapped to the
    /// nearest periodic image when the chart is periodic.
    pub fn chart_displacement(
        &self,
        chart: usize,
        from: &DVector<f64>,
        to: &DVector<f64>,
    ) -> DVector<f64> {
        let mut d = to - from;
        if let Some(periods) = self.backend.periods(chart) {
            for (i, p) in periods.iter().enumerate() {
                if *p > 0.0 {
                    d[i] -= (d[i] / p).round() * p;
                }
            }
        }
        d
    }

    /// Euclidean embedding when available (hypersurface backends).
    pub fn embed(&self, p: &ChartPoint) -> Option<DVector<f64>> {
        self.backend.embed(p.chart, &p.coords)
    }

    /// Cheap chart-space distance proxy between two points, using the
    /// embedding when present and periodic-wrapped coordinates otherwise.
    /// Only meaningful for coarse searches; not a geodesic distance.
    pub fn proxy_distance(&self, a: &ChartPoint, b: &ChartPoint) -> f64 {
        if let (Some(ea), Some(eb)) = (self.embed(a), self.embed(b)) {
            return (ea - eb).norm();
        }
        if a.chart == b.chart {
            return self.chart_displacement(a.chart, &a.coords, &b.coords).norm();
        }
        if let Some((b_in_a, _)) = self.to_chart(b, a.chart) {
            return self
                .chart_displacement(a.chart, &a.coords, &b_in_a.coords)
                .norm();
        }
        f64::INFINITY
    }
}

/// Metric value with optional derivative tensors.
pub struct MetricJet {
    pub g: DMatrix<f64>,
    pub dg: Option<Vec<DMatrix<f64>>>,
    pub d2g: Option<Vec<Vec<DMatrix<f64>>>>,
}

/// Check that analytic first derivatives agree with centered differences of
/// `eval` at `n_probes` random points near `center`, to relative tolerance
/// `rel_tol`. Returns the worst relative deviation.
pub fn verify_metric_derivatives<R: Rng>(
    metric: &MetricField,
    center: &ChartPoint,
    probe_radius: f64,
    n_probes: usize,
    rng: &mut R,
    rel_tol: f64,
) -> Result<f64> {
    let n = metric.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..n_probes {
        let mut x = center.coords.clone();
        for i in 0..n {
            x[i] += rng.gen_range(-probe_radius..probe_radius);
        }
        let p = ChartPoint::new(center.chart, x.clone());
        if !metric.contains(&p) {
            continue;
        }
        let (_, dg) = metric.eval_d1(&p)?;
        let h = 1e-5 * probe_radius.max(1e-2);
        let mut scale: f64 = 1e-12;
        for k in 0..n {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let gp = metric.eval(&ChartPoint::new(center.chart, xp))?;
            let gm = metric.eval(&ChartPoint::new(center.chart, xm))?;
            let fd = (gp - gm) / (2.0 * h);
            scale = scale.max(dg[k].amax()).max(1.0);
            worst = worst.max((&fd - &dg[k]).amax() / scale);
        }
    }
    if worst > rel_tol {
        return Err(GeonetError::Consistency(format!(
            "analytic metric derivatives deviate from finite differences by {worst:.3e} (tol {rel_tol:.1e})"
        )));
    }
    Ok(worst)
}

/// Check positive definiteness of the metric at random probes near `center`.
pub fn verify_positive_definite<R: Rng>(
    metric: &MetricField,
    center: &ChartPoint,
    probe_radius: f64,
    n_probes: usize,
    rng: &mut R,
) -> Result<f64> {
    let n = metric.dim();
    let mut min_eig = f64::INFINITY;
    for _ in 0..n_probes {
        let mut x = center.coords.clone();
        for i in 0..n {
            x[i] += rng.gen_range(-probe_radius..probe_radius);
        }
        let p = ChartPoint::new(center.chart, x);
        if !metric.contains(&p) {
            continue;
        }
        let g = metric.eval(&p)?;
        let sym = (&g + g.transpose()) * 0.5;
        let eigs = sym.symmetric_eigenvalues();
        for e in eigs.iter() {
            min_eig = min_eig.min(*e);
        }
        let asym = (&g - g.transpose()).amax();
        if asym > 1e-10 {
            return Err(GeonetError::Consistency(format!(
                "metric not symmetric: asymmetry {asym:.3e}"
            )));
        }
    }
    if !(min_eig > 0.0) {
        return Err(GeonetError::Geometry(format!(
            "metric not positive definite: min eigenvalue {min_eig:.3e}"
        )));
    }
    Ok(min_eig)
}
