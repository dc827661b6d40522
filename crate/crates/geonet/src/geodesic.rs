//! Geodesic integration, exponential map, parallel transport, and the
//! two-point boundary value problem.
//!
//! The integrator is a classic fixed-step RK4 on (position, velocity); the
//! step is derived from a spatial resolution parameter so residuals are
//! reproducible run to run. Chart transitions happen between steps, with
//! velocities pushed forward by the transition Jacobian. On flat backends
//! geodesics are emitted analytically.

use nalgebra::{DMatrix, DVector};

use crate::curve::DiscretizedCurve;
use crate::error::{GeonetError, Result};
use crate::metric::{ChartPoint, MetricField};

#[derive(Debug, Clone, Copy)]
pub struct IntegrationParams {
    /// Target spatial step (arclength units per RK4 step).
    pub step: f64,
    pub max_steps: usize,
    /// Exact step count override. Newton solvers shooting through the flow
    /// set this so the discrete flow is a smooth function of its initial
    /// data (the ceil-derived count makes it piecewise).
    pub fixed_steps: Option<usize>,
}

impl Default for IntegrationParams {
    fn default() -> Self {
        IntegrationParams {
            step: 1e-3,
            max_steps: 4_000_000,
            fixed_steps: None,
        }
    }
}

impl IntegrationParams {
    pub fn with_step(step: f64) -> Self {
        IntegrationParams {
            step,
            ..Default::default()
        }
    }

    pub fn with_fixed_steps(self, n: usize) -> Self {
        IntegrationParams {
            fixed_steps: Some(n),
            ..self
        }
    }
}

/// Geodesic acceleration `-Γ(v, v)` in chart coordinates.
fn geo_acc(metric: &MetricField, chart: usize, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    -metric.christoffel_apply_raw(chart, x, v, v)
}

/// Integrate the geodesic with initial data `(p, v)` over affine parameter
/// span `[0, span]`. The returned curve is parametrized by the affine
/// parameter and carries exact per-sample velocities.
pub fn integrate_geodesic(
    metric: &MetricField,
    p: &ChartPoint,
    v: &DVector<f64>,
    span: f64,
    params: IntegrationParams,
) -> Result<DiscretizedCurve> {
    let speed = metric.norm(p, v)?;
    if !(speed > 0.0) {
        return Err(GeonetError::Precondition(
            "geodesic initial velocity must be nonzero".into(),
        ));
    }
    if !(span > 0.0) {
        return Err(GeonetError::Input("integration span must be positive".into()));
    }
    let n_steps = match params.fixed_steps {
        Some(n) => n.max(2),
        None => ((span * speed / params.step).ceil() as usize).clamp(8, params.max_steps),
    };
    if metric.is_flat() {
        let params_grid: Vec<f64> = (0..=n_steps)
            .map(|i| span * i as f64 / n_steps as f64)
            .collect();
        let points: Vec<DVector<f64>> = params_grid.iter().map(|&t| &p.coords + v * t).collect();
        let velocities = vec![v.clone(); n_steps + 1];
        return DiscretizedCurve::new(
            params_grid,
            vec![p.chart; n_steps + 1],
            points,
            Some(velocities),
            false,
        );
    }

    let dt = span / n_steps as f64;
    let mut chart = p.chart;
    let mut x = p.coords.clone();
    let mut vv = v.clone();
    let mut params_grid = Vec::with_capacity(n_steps + 1);
    let mut chart_ids = Vec::with_capacity(n_steps + 1);
    let mut points = Vec::with_capacity(n_steps + 1);
    let mut velocities = Vec::with_capacity(n_steps + 1);
    params_grid.push(0.0);
    chart_ids.push(chart);
    points.push(x.clone());
    velocities.push(vv.clone());
    for i in 0..n_steps {
        // RK4 on (x, v).
        let k1x = vv.clone();
        let k1v = geo_acc(metric, chart, &x, &vv);
        let x2 = &x + &k1x * (dt / 2.0);
        let v2 = &vv + &k1v * (dt / 2.0);
        let k2x = v2.clone();
        let k2v = geo_acc(metric, chart, &x2, &v2);
        let x3 = &x + &k2x * (dt / 2.0);
        let v3 = &vv + &k2v * (dt / 2.0);
        let k3x = v3.clone();
        let k3v = geo_acc(metric, chart, &x3, &v3);
        let x4 = &x + &k3x * dt;
        let v4 = &vv + &k3v * dt;
        let k4x = v4.clone();
        let k4v = geo_acc(metric, chart, &x4, &v4);
        x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0);
        vv += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);
        if !x.iter().all(|c| c.is_finite()) {
            return Err(GeonetError::Integration(format!(
                "non-finite state at step {i}"
            )));
        }
        // Chart management between steps.
        if !metric.backend().comfortable(chart, &x) {
            let cp = ChartPoint::new(chart, x.clone());
            let moved = metric.normalize_chart(&cp, &mut [&mut vv])?;
            chart = moved.chart;
            x = moved.coords;
            if !metric.backend().chart_contains(chart, &x) {
                return Err(GeonetError::Integration(
                    "chart exit without valid transition".into(),
                ));
            }
        }
        params_grid.push(dt * (i + 1) as f64);
        chart_ids.push(chart);
        points.push(x.clone());
        velocities.push(vv.clone());
    }
    DiscretizedCurve::new(params_grid, chart_ids, points, Some(velocities), false)
}

/// Endpoint of the unit-time geodesic with initial velocity `w`.
/// Requires `|w|_g` strictly below the injectivity radius bound.
pub fn exp_map(
    metric: &MetricField,
    p: &ChartPoint,
    w: &DVector<f64>,
    params: IntegrationParams,
) -> Result<ChartPoint> {
    let len = metric.norm(p, w)?;
    if len == 0.0 {
        return Ok(p.clone());
    }
    if len >= metric.injectivity_radius_bound() {
        return Err(GeonetError::Precondition(format!(
            "|w|_g = {len:.6} >= injectivity bound {}; exp uniqueness not guaranteed",
            metric.injectivity_radius_bound()
        )));
    }
    let curve = integrate_geodesic(metric, p, w, 1.0, params)?;
    Ok(curve.end())
}

/// Relative speed drift of an integrated geodesic (diagnostic).
pub fn speed_drift(metric: &MetricField, curve: &DiscretizedCurve) -> Result<f64> {
    let speeds = curve.speeds(metric)?;
    let s0 = speeds[0];
    Ok(speeds
        .iter()
        .map(|s| (s - s0).abs() / s0)
        .fold(0.0, f64::max))
}

/// Split a (possibly multi-chart) curve into single-chart runs. Consecutive
/// runs overlap at the switch sample, expressed in both charts, so transport
/// can cross with the transition Jacobian.
pub fn split_single_chart_runs(
    metric: &MetricField,
    curve: &DiscretizedCurve,
) -> Result<Vec<DiscretizedCurve>> {
    let n = curve.sample_count();
    let charts = curve.chart_ids();
    let mut runs = Vec::new();
    let mut start = 0usize;
    for i in 0..n - 1 {
        if charts[i + 1] != charts[i] {
            // Run covers [start ..= i] plus the transitioned image of sample
            // i is the first point of the next run.
            runs.push(slice_curve(curve, start, i)?);
            start = i;
        }
    }
    runs.push(slice_curve(curve, start, n - 1)?);
    // Convert the first sample of each later run into its own chart.
    let mut fixed = Vec::with_capacity(runs.len());
    for (k, run) in runs.iter().enumerate() {
        if k == 0 {
            fixed.push(run.clone());
            continue;
        }
        let target_chart = run.chart_ids()[1];
        let p0 = run.point(0);
        let (q, jac) = metric.to_chart(&p0, target_chart).ok_or_else(|| {
            GeonetError::Integration("no transition at chart switch sample".into())
        })?;
        let mut points = run.points().to_vec();
        points[0] = q.coords;
        let mut chart_ids = run.chart_ids().to_vec();
        chart_ids[0] = target_chart;
        let velocities = run.velocities().map(|v| {
            let mut v = v.to_vec();
            v[0] = &jac * &v[0];
            v
        });
        fixed.push(DiscretizedCurve::new(
            run.params().to_vec(),
            chart_ids,
            points,
            velocities,
            false,
        )?);
    }
    Ok(fixed)
}

fn slice_curve(curve: &DiscretizedCurve, i0: usize, i1: usize) -> Result<DiscretizedCurve> {
    DiscretizedCurve::new(
        curve.params()[i0..=i1].to_vec(),
        curve.chart_ids()[i0..=i1].to_vec(),
        curve.points()[i0..=i1].to_vec(),
        curve.velocities().map(|v| v[i0..=i1].to_vec()),
        false,
    )
}

/// Parallel-transport `w` from the curve's start to its end along the curve.
/// Returns the transported vector expressed in the end sample's chart.
pub fn parallel_transport(
    metric: &MetricField,
    along: &DiscretizedCurve,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    if along.sample_count() < 2 {
        return Err(GeonetError::Input(
            "transport needs a curve with at least 2 samples".into(),
        ));
    }
    let runs = split_single_chart_runs(metric, along)?;
    let mut carried = w.clone();
    for (k, run) in runs.iter().enumerate() {
        if k > 0 {
            // The vector arrives in the previous run's final chart; move it
            // through the transition at the shared point.
            let prev_end = runs[k - 1].end();
            let (_, jac) = metric
                .to_chart(&prev_end, run.chart_ids()[0])
                .ok_or_else(|| {
                    GeonetError::Integration("no transition at chart switch".into())
                })?;
            carried = &jac * carried;
        }
        carried = transport_single_chart(metric, run, &carried)?;
    }
    Ok(carried)
}

fn transport_single_chart(
    metric: &MetricField,
    run: &DiscretizedCurve,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let chart = run.require_single_chart()?;
    if metric.is_flat() {
        return Ok(w.clone());
    }
    let deriv = |s: f64, wv: &DVector<f64>| -> DVector<f64> {
        let x = run.position_at(s);
        let v = run.velocity_at(s);
        transport_rate(metric, chart, &x, &v, wv)
    };
    let mut carried = w.clone();
    let params = run.params();
    for i in 0..params.len() - 1 {
        let (a, b) = (params[i], params[i + 1]);
        let h = b - a;
        let k1 = deriv(a, &carried);
        let k2 = deriv(a + h / 2.0, &(&carried + &k1 * (h / 2.0)));
        let k3 = deriv(a + h / 2.0, &(&carried + &k2 * (h / 2.0)));
        let k4 = deriv(b, &(&carried + &k3 * h));
        carried += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(carried)
}

/// Transport rate `dw/ds = -Γ(x)(ẋ, w)`.
fn transport_rate(
    metric: &MetricField,
    chart: usize,
    x: &DVector<f64>,
    v: &DVector<f64>,
    w: &DVector<f64>,
) -> DVector<f64> {
    -metric.christoffel_apply_raw(chart, x, v, w)
}

// ---------------------------------------------------------------------------
// Two-point boundary value problem
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct BvpOptions {
    pub integration: IntegrationParams,
    /// Endpoint tolerance in chart coordinates.
    pub endpoint_tol: f64,
    pub max_iterations: usize,
}

impl Default for BvpOptions {
    fn default() -> Self {
        BvpOptions {
            integration: IntegrationParams::default(),
            endpoint_tol: 1e-11,
            max_iterations: 60,
        }
    }
}

/// Minimizing geodesic from `p` to `q` by shooting. Without a `guess` the
/// distance must be below the injectivity radius bound (otherwise the
/// minimizer is not guaranteed unique and an ambiguity error is raised).
pub fn geodesic_bvp(
    metric: &MetricField,
    p: &ChartPoint,
    q: &ChartPoint,
    guess: Option<&DVector<f64>>,
    opts: BvpOptions,
) -> Result<DiscretizedCurve> {
    if metric.is_flat() {
        return flat_bvp(metric, p, q, guess, opts);
    }
    // Initial shot: user guess, else the chart displacement toward q.
    let mut w = match guess {
        Some(g) => g.clone(),
        None => {
            let q_in_p = metric
                .to_chart(q, p.chart)
                .map(|(cp, _)| cp)
                .ok_or_else(|| {
                    GeonetError::Input("endpoints not expressible in a common chart".into())
                })?;
            metric.chart_displacement(p.chart, &p.coords, &q_in_p.coords)
        }
    };
    if w.norm() < opts.endpoint_tol {
        return Err(GeonetError::Input(
            "bvp endpoints coincide; geodesic is a point".into(),
        ));
    }
    let n = metric.dim();
    let mut last_curve = None;
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let (f, curve) = shoot_residual(metric, p, q, &w, opts.integration)?;
        residual = f.norm();
        last_curve = Some(curve);
        if residual < opts.endpoint_tol {
            break;
        }
        // Forward-difference Jacobian of the endpoint defect in w.
        let eps = 1e-7 * w.norm().max(1.0);
        let mut jac = DMatrix::zeros(n, n);
        for k in 0..n {
            let mut wk = w.clone();
            wk[k] += eps;
            let (fk, _) = shoot_residual(metric, p, q, &wk, opts.integration)?;
            for r in 0..n {
                jac[(r, k)] = (fk[r] - f[r]) / eps;
            }
        }
        // Damped Gauss-Newton step with backtracking.
        let jt = jac.transpose();
        let mut lhs = &jt * &jac;
        let damp = 1e-12 * lhs.diagonal().amax().max(1e-12);
        for d in 0..n {
            lhs[(d, d)] += damp;
        }
        let rhs = -(&jt * &f);
        let delta = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| GeonetError::Convergence("singular shooting Jacobian".into()))?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
            let trial = &w + &delta * alpha;
            let (ft, _) = shoot_residual(metric, p, q, &trial, opts.integration)?;
            if ft.norm() < residual {
                w = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let curve = last_curve.ok_or_else(|| GeonetError::Convergence("no shooting iterate".into()))?;
    let length = metric.norm(p, &w)?;
    if residual >= opts.endpoint_tol {
        if guess.is_none() && length >= metric.injectivity_radius_bound() - 1e-6 {
            return Err(GeonetError::Ambiguity(format!(
                "distance {length:.6} reaches the injectivity bound {}; minimizer not unique",
                metric.injectivity_radius_bound()
            )));
        }
        return Err(GeonetError::Convergence(format!(
            "shooting stalled at endpoint error {residual:.3e}"
        )));
    }
    if guess.is_none() && length >= metric.injectivity_radius_bound() - 1e-9 {
        return Err(GeonetError::Ambiguity(format!(
            "distance {length:.6} >= injectivity bound {}; minimizer not unique",
            metric.injectivity_radius_bound()
        )));
    }
    Ok(curve)
}

fn shoot_residual(
    metric: &MetricField,
    p: &ChartPoint,
    q: &ChartPoint,
    w: &DVector<f64>,
    params: IntegrationParams,
) -> Result<(DVector<f64>, DiscretizedCurve)> {
    let curve = integrate_geodesic(metric, p, w, 1.0, params)?;
    let end = curve.end();
    // Express the defect in q's chart when possible, else in the end chart.
    let defect = match metric.to_chart(&end, q.chart) {
        Some((e_in_q, _)) => metric.chart_displacement(q.chart, &q.coords, &e_in_q.coords),
        None => {
            let (q_in_e, _) = metric.to_chart(q, end.chart).ok_or_else(|| {
                GeonetError::Integration("endpoint and target share no chart".into())
            })?;
            metric.chart_displacement(end.chart, &q_in_e.coords, &end.coords)
        }
    };
    Ok((defect, curve))
}

/// Flat backends: the minimizing geodesic is the straight segment toward the
/// nearest periodic image (or the image selected by the guess direction).
fn flat_bvp(
    metric: &MetricField,
    p: &ChartPoint,
    q: &ChartPoint,
    guess: Option<&DVector<f64>>,
    opts: BvpOptions,
) -> Result<DiscretizedCurve> {
    if p.chart != q.chart {
        return Err(GeonetError::Input(
            "flat backend is single-chart; endpoints must share it".into(),
        ));
    }
    let mut d = metric.chart_displacement(p.chart, &p.coords, &q.coords);
    if let Some(g) = guess {
        // Re-select the periodic image per axis to best match the guess.
        if let Some(periods) = metric.backend().periods(p.chart) {
            for (i, per) in periods.iter().enumerate() {
                if *per > 0.0 {
                    for k in [-1.0f64, 1.0] {
                        if (d[i] + k * per - g[i]).abs() < (d[i] - g[i]).abs() {
                            d[i] += k * per;
                        }
                    }
                }
            }
        }
    }
    let length = d.norm();
    if length < opts.endpoint_tol {
        return Err(GeonetError::Input(
            "bvp endpoints coincide; geodesic is a point".into(),
        ));
    }
    if guess.is_none() && length >= metric.injectivity_radius_bound() - 1e-9 {
        return Err(GeonetError::Ambiguity(format!(
            "distance {length:.6} >= injectivity bound {}; minimizer not unique",
            metric.injectivity_radius_bound()
        )));
    }
    integrate_geodesic(metric, p, &d, 1.0, opts.integration)
}

/// Initial velocity of the minimizing geodesic from `p` to `q` (the
/// logarithm map under the BVP tolerance).
pub fn geodesic_log(
    metric: &MetricField,
    p: &ChartPoint,
    q: &ChartPoint,
    guess: Option<&DVector<f64>>,
    opts: BvpOptions,
) -> Result<DVector<f64>> {
    Ok(geodesic_bvp(metric, p, q, guess, opts)?.start_velocity())
}
