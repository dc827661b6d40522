//! Discretized curves on a chart atlas.
//!
//! A curve stores a strictly increasing parameter grid, chart coordinates per
//! sample, the chart id per sample, and optionally exact velocities (always
//! available when the curve came out of the geodesic integrator or an
//! analytic construction). Spline evaluation and quadrature treat the curve
//! as a single-chart object; multi-chart curves must be split into runs
//! first.

use std::sync::OnceLock;

use nalgebra::DVector;

use crate::error::{GeonetError, Result};
use crate::metric::{ChartPoint, MetricField};
use crate::spline::{Boundary, CubicSpline};

#[derive(Debug, Clone)]
pub struct DiscretizedCurve {
    params: Vec<f64>,
    chart_ids: Vec<usize>,
    points: Vec<DVector<f64>>,
    velocities: Option<Vec<DVector<f64>>>,
    closed: bool,
    spline: OnceLock<CurveSpline>,
}

#[derive(Debug, Clone)]
pub struct CurveSpline {
    pub position: CubicSpline,
    /// Velocity spline: interpolates stored velocities when present, and is
    /// therefore one order more accurate than differentiating positions.
    pub velocity: Option<CubicSpline>,
}

impl DiscretizedCurve {
    pub fn new(
        params: Vec<f64>,
        chart_ids: Vec<usize>,
        points: Vec<DVector<f64>>,
        velocities: Option<Vec<DVector<f64>>>,
        closed: bool,
    ) -> Result<Self> {
        let n = params.len();
        if n < 2 {
            return Err(GeonetError::Input("curve needs at least 2 samples".into()));
        }
        if chart_ids.len() != n || points.len() != n {
            return Err(GeonetError::Input("curve sample length mismatch".into()));
        }
        if let Some(v) = &velocities {
            if v.len() != n {
                return Err(GeonetError::Input("curve velocity length mismatch".into()));
            }
        }
        for w in params.windows(2) {
            if w[1] <= w[0] {
                return Err(GeonetError::Input(
                    "curve parameters must be strictly increasing".into(),
                ));
            }
        }
        Ok(DiscretizedCurve {
            params,
            chart_ids,
            points,
            velocities,
            closed,
            spline: OnceLock::new(),
        })
    }

    /// Build a single-chart curve by sampling closures for position and
    /// velocity on a given parameter grid.
    pub fn from_fn(
        chart: usize,
        params: Vec<f64>,
        mut pos: impl FnMut(f64) -> DVector<f64>,
        mut vel: impl FnMut(f64) -> DVector<f64>,
        closed: bool,
    ) -> Result<Self> {
        let points: Vec<_> = params.iter().map(|&s| pos(s)).collect();
        let velocities: Vec<_> = params.iter().map(|&s| vel(s)).collect();
        let n = params.len();
        DiscretizedCurve::new(params, vec![chart; n], points, Some(velocities), closed)
    }

    pub fn sample_count(&self) -> usize {
        self.params.len()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn chart_ids(&self) -> &[usize] {
        &self.chart_ids
    }

    pub fn velocities(&self) -> Option<&[DVector<f64>]> {
        self.velocities.as_deref()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn point(&self, i: usize) -> ChartPoint {
        ChartPoint::new(self.chart_ids[i], self.points[i].clone())
    }

    pub fn start(&self) -> ChartPoint {
        self.point(0)
    }

    pub fn end(&self) -> ChartPoint {
        self.point(self.sample_count() - 1)
    }

    pub fn param_span(&self) -> (f64, f64) {
        (self.params[0], self.params[self.params.len() - 1])
    }

    /// The single chart id if all samples share one, else `None`.
    pub fn single_chart(&self) -> Option<usize> {
        let c = self.chart_ids[0];
        if self.chart_ids.iter().all(|&i| i == c) {
            Some(c)
        } else {
            None
        }
    }

    pub fn require_single_chart(&self) -> Result<usize> {
        self.single_chart().ok_or_else(|| {
            GeonetError::Input("operation requires a single-chart curve".into())
        })
    }

    /// Velocity at sample `i`: stored when available, else one-sided/central
    /// spline derivative.
    pub fn velocity_at_sample(&self, i: usize) -> DVector<f64> {
        if let Some(v) = &self.velocities {
            return v[i].clone();
        }
        let sp = self.spline();
        let n = self.dim();
        let mut out = DVector::zeros(n);
        for c in 0..n {
            out[c] = sp.position.eval_d(c, self.params[i]).1;
        }
        out
    }

    pub fn start_velocity(&self) -> DVector<f64> {
        self.velocity_at_sample(0)
    }

    pub fn end_velocity(&self) -> DVector<f64> {
        self.velocity_at_sample(self.sample_count() - 1)
    }

    /// Lazily built spline over the full parameter range. Requires a
    /// single-chart curve; panics otherwise (callers check first).
    pub fn spline(&self) -> &CurveSpline {
        self.spline.get_or_init(|| {
            assert!(
                self.single_chart().is_some(),
                "spline evaluation requires a single-chart curve"
            );
            let n = self.dim();
            let channels: Vec<Vec<f64>> = (0..n)
                .map(|c| self.points.iter().map(|p| p[c]).collect())
                .collect();
            let position = match &self.velocities {
                Some(v) => {
                    let d0: Vec<f64> = (0..n).map(|c| v[0][c]).collect();
                    let d1: Vec<f64> = (0..n).map(|c| v[v.len() - 1][c]).collect();
                    CubicSpline::new(
                        self.params.clone(),
                        channels,
                        Boundary::Clamped(&d0, &d1),
                    )
                    .expect("valid spline input")
                }
                None => CubicSpline::new(self.params.clone(), channels, Boundary::Estimated)
                    .expect("valid spline input"),
            };
            let velocity = self.velocities.as_ref().map(|v| {
                let channels: Vec<Vec<f64>> =
                    (0..n).map(|c| v.iter().map(|w| w[c]).collect()).collect();
                CubicSpline::new(self.params.clone(), channels, Boundary::Estimated)
                    .expect("valid spline input")
            });
            CurveSpline { position, velocity }
        })
    }

    /// Position at parameter `s` (single-chart curves only).
    pub fn position_at(&self, s: f64) -> DVector<f64> {
        let sp = self.spline();
        let n = self.dim();
        let mut out = DVector::zeros(n);
        for c in 0..n {
            out[c] = sp.position.eval(c, s);
        }
        out
    }

    /// Velocity dγ/ds at parameter `s` (single-chart curves only).
    pub fn velocity_at(&self, s: f64) -> DVector<f64> {
        let sp = self.spline();
        let n = self.dim();
        let mut out = DVector::zeros(n);
        match &sp.velocity {
            Some(v) => {
                for c in 0..n {
                    out[c] = v.eval(c, s);
                }
            }
            None => {
                for c in 0..n {
                    out[c] = sp.position.eval_d(c, s).1;
                }
            }
        }
        out
    }

    /// Acceleration d²γ/ds² at parameter `s`, from the velocity spline when
    /// stored (one order more accurate than the position spline).
    pub fn acceleration_at(&self, s: f64) -> DVector<f64> {
        let sp = self.spline();
        let n = self.dim();
        let mut out = DVector::zeros(n);
        match &sp.velocity {
            Some(v) => {
                for c in 0..n {
                    out[c] = v.eval_d(c, s).1;
                }
            }
            None => {
                for c in 0..n {
                    out[c] = sp.position.eval_d2(c, s).2;
                }
            }
        }
        out
    }

    /// Speeds |dγ/ds|_g at the samples.
    pub fn speeds(&self, metric: &MetricField) -> Result<Vec<f64>> {
        (0..self.sample_count())
            .map(|i| {
                let p = self.point(i);
                let v = self.velocity_at_sample(i);
                metric.norm(&p, &v)
            })
            .collect()
    }

    pub fn min_speed(&self, metric: &MetricField) -> Result<f64> {
        Ok(self
            .speeds(metric)?
            .into_iter()
            .fold(f64::INFINITY, f64::min))
    }

    /// Curve length via per-interval 4-node Gauss-Legendre quadrature on the
    /// spline representation.
    pub fn length(&self, metric: &MetricField) -> Result<f64> {
        self.require_single_chart()?;
        let table = self.cumulative_lengths(metric)?;
        Ok(table[table.len() - 1])
    }

    /// Cumulative arclength at each sample parameter.
    pub fn cumulative_lengths(&self, metric: &MetricField) -> Result<Vec<f64>> {
        let chart = self.require_single_chart()?;
        // 4-point Gauss-Legendre nodes/weights on [-1, 1].
        const X: [f64; 4] = [
            -0.861136311594052575,
            -0.339981043584856265,
            0.339981043584856265,
            0.861136311594052575,
        ];
        const W: [f64; 4] = [
            0.347854845137453857,
            0.652145154862546143,
            0.652145154862546143,
            0.347854845137453857,
        ];
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.sample_count());
        out.push(0.0);
        for i in 0..self.sample_count() - 1 {
            let (a, b) = (self.params[i], self.params[i + 1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            let mut seg = 0.0;
            for k in 0..4 {
                let s = mid + half * X[k];
                let x = self.position_at(s);
                let v = self.velocity_at(s);
                let speed = metric.norm(&ChartPoint::new(chart, x), &v)?;
                seg += W[k] * speed;
            }
            acc += seg * half;
            out.push(acc);
        }
        Ok(out)
    }

    /// Resample to `n` samples uniformly in the existing parameter.
    pub fn resample(&self, n: usize) -> Result<Self> {
        self.require_single_chart()?;
        if n < 2 {
            return Err(GeonetError::Input("resample needs n >= 2".into()));
        }
        let (s0, s1) = self.param_span();
        let params: Vec<f64> = (0..n)
            .map(|i| s0 + (s1 - s0) * i as f64 / (n - 1) as f64)
            .collect();
        let points: Vec<_> = params.iter().map(|&s| self.position_at(s)).collect();
        let velocities = if self.velocities.is_some() {
            Some(params.iter().map(|&s| self.velocity_at(s)).collect())
        } else {
            None
        };
        DiscretizedCurve::new(
            params,
            vec![self.chart_ids[0]; n],
            points,
            velocities,
            self.closed,
        )
    }

    /// Reparametrize by arclength with `n` uniform samples. Velocities become
    /// unit vectors; endpoint directions are kept exact (renormalized stored
    /// end velocities).
    pub fn reparametrize_by_arclength(&self, metric: &MetricField, n: usize) -> Result<Self> {
        let chart = self.require_single_chart()?;
        let table = self.cumulative_lengths(metric)?;
        let total = table[table.len() - 1];
        if !(total > 0.0) {
            return Err(GeonetError::Parametrization(
                "cannot arclength-parametrize a zero-length curve".into(),
            ));
        }
        // Invert s(arclength) per target by bisection + Newton on the table.
        let mut params = Vec::with_capacity(n);
        let mut points = Vec::with_capacity(n);
        let mut velocities = Vec::with_capacity(n);
        for i in 0..n {
            let target = total * i as f64 / (n - 1) as f64;
            let s = invert_monotone(&self.params, &table, target);
            let x = self.position_at(s);
            let v = self.velocity_at(s);
            let speed = metric.norm(&ChartPoint::new(chart, x.clone()), &v)?;
            params.push(target);
            points.push(x);
            velocities.push(v / speed.max(1e-300));
        }
        // Keep exact endpoint data.
        points[0] = self.points[0].clone();
        let last = self.sample_count() - 1;
        points[n - 1] = self.points[last].clone();
        let v0 = self.velocity_at_sample(0);
        let s0 = metric.norm(&self.point(0), &v0)?;
        velocities[0] = v0 / s0.max(1e-300);
        let v1 = self.velocity_at_sample(last);
        let s1 = metric.norm(&self.point(last), &v1)?;
        velocities[n - 1] = v1 / s1.max(1e-300);
        DiscretizedCurve::new(params, vec![chart; n], points, Some(velocities), self.closed)
    }

    /// Same samples with the closed flag set.
    pub fn with_closed(self, closed: bool) -> Self {
        DiscretizedCurve {
            closed,
            spline: OnceLock::new(),
            ..self
        }
    }

    /// Orientation-reversed copy.
    pub fn reversed(&self) -> Self {
        let (s0, s1) = self.param_span();
        let params: Vec<f64> = self.params.iter().rev().map(|&s| s0 + s1 - s).collect();
        let points: Vec<_> = self.points.iter().rev().cloned().collect();
        let chart_ids: Vec<_> = self.chart_ids.iter().rev().cloned().collect();
        let velocities = self
            .velocities
            .as_ref()
            .map(|v| v.iter().rev().map(|w| -w).collect());
        DiscretizedCurve::new(params, chart_ids, points, velocities, self.closed)
            .expect("reversal preserves validity")
    }

    /// Concatenate single-chart pieces that share endpoints, shifting
    /// parameters so the result is continuous. Endpoint agreement is checked
    /// against `tol` in chart coordinates.
    pub fn concatenate(pieces: &[&DiscretizedCurve], tol: f64, closed: bool) -> Result<Self> {
        if pieces.is_empty() {
            return Err(GeonetError::Input("nothing to concatenate".into()));
        }
        let chart = pieces[0].require_single_chart()?;
        let mut params = Vec::new();
        let mut points: Vec<DVector<f64>> = Vec::new();
        let mut velocities = Vec::new();
        let mut offset = 0.0;
        for (k, piece) in pieces.iter().enumerate() {
            if piece.require_single_chart()? != chart {
                return Err(GeonetError::Assembly(
                    "concatenation requires a common chart".into(),
                ));
            }
            let (a, b) = piece.param_span();
            if k > 0 {
                let gap = (points.last().unwrap() - &piece.points[0]).norm();
                if gap > tol {
                    return Err(GeonetError::Assembly(format!(
                        "piece {k} starts {gap:.3e} away from previous endpoint (tol {tol:.1e})"
                    )));
                }
            }
            let start_idx = if k == 0 { 0 } else { 1 };
            for i in start_idx..piece.sample_count() {
                params.push(offset + piece.params[i] - a);
                points.push(piece.points[i].clone());
                velocities.push(piece.velocity_at_sample(i));
            }
            offset += b - a;
        }
        DiscretizedCurve::new(
            params,
            vec![chart; points.len()],
            points,
            Some(velocities),
            closed,
        )
    }

    /// Validate the curve invariants against a metric: chart membership,
    /// positive speed, and closure (up to periodic identification).
    pub fn validate(&self, metric: &MetricField, closure_tol: f64) -> Result<()> {
        for i in 0..self.sample_count() {
            let p = self.point(i);
            if !metric.contains(&p) {
                return Err(GeonetError::Domain(format!(
                    "curve sample {i} outside atlas"
                )));
            }
        }
        let min_speed = self.min_speed(metric)?;
        if !(min_speed > 0.0) {
            return Err(GeonetError::Parametrization(
                "curve has a zero-speed sample".into(),
            ));
        }
        if self.closed {
            let first = self.point(0);
            let last = self.end();
            let gap = if first.chart == last.chart {
                metric
                    .chart_displacement(first.chart, &first.coords, &last.coords)
                    .norm()
            } else {
                metric.proxy_distance(&first, &last)
            };
            if gap > closure_tol {
                return Err(GeonetError::Input(format!(
                    "closed curve endpoints differ by {gap:.3e}"
                )));
            }
        }
        Ok(())
    }
}

/// Invert a monotone table: find x with table(x) = target (linear + local
/// refinement on the piecewise-linear interpolant).
pub fn invert_monotone(xs: &[f64], table: &[f64], target: f64) -> f64 {
    let n = xs.len();
    if target <= table[0] {
        return xs[0];
    }
    if target >= table[n - 1] {
        return xs[n - 1];
    }
    let mut lo = 0;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if table[mid] <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let f = (target - table[lo]) / (table[hi] - table[lo]).max(1e-300);
    xs[lo] + f * (xs[hi] - xs[lo])
}

/// Euclidean distance between segments [a0, a1] and [b0, b1].
pub fn segment_distance(
    a0: &DVector<f64>,
    a1: &DVector<f64>,
    b0: &DVector<f64>,
    b1: &DVector<f64>,
) -> f64 {
    let d1 = a1 - a0;
    let d2 = b1 - b0;
    let r = a0 - b0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let (mut s, mut t);
    if a <= 1e-300 && e <= 1e-300 {
        return r.norm();
    }
    if a <= 1e-300 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= 1e-300 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            s = if denom > 1e-300 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
        }
    }
    let pa = a0 + d1 * s;
    let pb = b0 + d2 * t;
    (pa - pb).norm()
}
