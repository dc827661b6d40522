//! Fermi tube coordinates along a curve.
//!
//! A tube carries an orthonormal normal frame, parallel in the normal
//! connection, along a single-chart base curve, plus a tube radius. For
//! geodesic bases the normal connection coincides with full parallel
//! transport; for curved bases the two notions differ by exactly the amount
//! needed to keep the frame normal, which is the frame used for the
//! constructions here.
//!
//! Tube coordinates `(s, h_1, ..., h_{n-1})` of a point `x` satisfy
//! `x = exp_{c(s)}(Σ h_i n_i(s))`; `s` is the nearest-point projection
//! parameter inside the tube.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::curve::DiscretizedCurve;
use crate::error::{GeonetError, Result};
use crate::geodesic::{integrate_geodesic, IntegrationParams};
use crate::metric::{ChartPoint, MetricField};
use crate::spline::{Boundary, CubicSpline};

#[derive(Debug, Clone)]
pub struct FermiTube {
    base: DiscretizedCurve,
    /// Per sample: n x (n-1) matrix whose columns are the normal frame.
    frame: Vec<DMatrix<f64>>,
    radius: f64,
    chart: usize,
    frame_spline: OnceLock<CubicSpline>,
}

#[derive(Debug, Clone, Copy)]
pub struct FermiOptions {
    /// Exclusion window (arclength) for the self-overlap scan.
    pub overlap_window_factor: f64,
    /// Skip the sampled injectivity check (used when the caller guarantees it).
    pub skip_overlap_check: bool,
}

impl Default for FermiOptions {
    fn default() -> Self {
        FermiOptions {
            overlap_window_factor: 8.0,
            skip_overlap_check: false,
        }
    }
}

/// Build a Fermi tube: an orthonormal normal frame transported in the normal
/// connection along `base`, with the stated tube radius.
pub fn fermi_tube(
    metric: &MetricField,
    base: &DiscretizedCurve,
    radius: f64,
    opts: FermiOptions,
) -> Result<FermiTube> {
    let chart = base.require_single_chart()?;
    if !(radius > 0.0) {
        return Err(GeonetError::Input("tube radius must be positive".into()));
    }
    if radius >= metric.injectivity_radius_bound() / 2.0 {
        return Err(GeonetError::Precondition(format!(
            "tube radius {radius} must be below half the injectivity bound {}",
            metric.injectivity_radius_bound() / 2.0
        )));
    }
    let min_speed = base.min_speed(metric)?;
    if !(min_speed > 0.0) {
        return Err(GeonetError::Parametrization(
            "tube base has vanishing speed".into(),
        ));
    }

    let n = metric.dim();
    let params = base.params();
    // Initial frame: Gram-Schmidt of the least-parallel coordinate axes
    // against the unit tangent (deterministic axis order).
    let p0 = base.point(0);
    let v0 = base.velocity_at_sample(0);
    let t0 = &v0 / metric.norm(&p0, &v0)?;
    let mut axes: Vec<usize> = (0..n).collect();
    let alignment = |i: usize| -> f64 {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        let ni = metric.inner(&p0, &e, &e).unwrap_or(1.0).sqrt();
        (metric.inner(&p0, &e, &t0).unwrap_or(0.0) / ni).abs()
    };
    axes.sort_by(|&a, &b| alignment(a).partial_cmp(&alignment(b)).unwrap());
    let mut frame0 = Vec::with_capacity(n - 1);
    for &ax in axes.iter().take(n - 1) {
        let mut e = DVector::zeros(n);
        e[ax] = 1.0;
        // reject tangent component
        let mut u = &e - &t0 * metric.inner(&p0, &e, &t0)?;
        for f in &frame0 {
            u -= f * metric.inner(&p0, &u, f)?;
        }
        let norm = metric.norm(&p0, &u)?;
        if norm < 1e-10 {
            return Err(GeonetError::Geometry(
                "degenerate initial frame construction".into(),
            ));
        }
        frame0.push(u / norm);
    }

    // Normal-connection transport: dn/ds = -Γ(ẋ, n) - <n, D_s T̂>_g T̂.
    let rate = |s: f64, cols: &[DVector<f64>]| -> Result<Vec<DVector<f64>>> {
        let x = base.position_at(s);
        let v = base.velocity_at(s);
        let a = base.acceleration_at(s);
        let p = ChartPoint::new(chart, x.clone());
        let g = metric.eval(&p)?;
        let speed2 = (v.transpose() * &g * &v)[(0, 0)];
        let speed = speed2.sqrt();
        let that = &v / speed;
        let dsv = &a + metric.christoffel_apply_raw(chart, &x, &v, &v);
        let dspeed = (dsv.transpose() * &g * &v)[(0, 0)] / speed;
        let dst = &dsv / speed - &v * (dspeed / speed2);
        let mut out = Vec::with_capacity(cols.len());
        for nv in cols {
            let gamma_term = metric.christoffel_apply_raw(chart, &x, &v, nv);
            let proj = (nv.transpose() * &g * &dst)[(0, 0)];
            out.push(-gamma_term - &that * proj);
        }
        Ok(out)
    };

    let mut frames = Vec::with_capacity(params.len());
    frames.push(frame0.clone());
    let mut cols = frame0;
    for i in 0..params.len() - 1 {
        let (s0, s1) = (params[i], params[i + 1]);
        let h = s1 - s0;
        let k1 = rate(s0, &cols)?;
        let mid1: Vec<_> = cols
            .iter()
            .zip(&k1)
            .map(|(c, k)| c + k * (h / 2.0))
            .collect();
        let k2 = rate(s0 + h / 2.0, &mid1)?;
        let mid2: Vec<_> = cols
            .iter()
            .zip(&k2)
            .map(|(c, k)| c + k * (h / 2.0))
            .collect();
        let k3 = rate(s0 + h / 2.0, &mid2)?;
        let end: Vec<_> = cols.iter().zip(&k3).map(|(c, k)| c + k * h).collect();
        let k4 = rate(s1, &end)?;
        for (j, c) in cols.iter_mut().enumerate() {
            *c += (&k1[j] + &k2[j] * 2.0 + &k3[j] * 2.0 + &k4[j]) * (h / 6.0);
        }
        frames.push(cols.clone());
    }

    let frame: Vec<DMatrix<f64>> = frames
        .into_iter()
        .map(|cols| {
            let mut m = DMatrix::zeros(n, n - 1);
            for (j, c) in cols.iter().enumerate() {
                m.set_column(j, c);
            }
            m
        })
        .collect();

    let tube = FermiTube {
        base: base.clone(),
        frame,
        radius,
        chart,
        frame_spline: OnceLock::new(),
    };

    if !opts.skip_overlap_check {
        tube.check_injectivity(metric, opts.overlap_window_factor)?;
    }
    Ok(tube)
}

impl FermiTube {
    pub fn base(&self) -> &DiscretizedCurve {
        &self.base
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn chart(&self) -> usize {
        self.chart
    }

    pub fn frame_at_sample(&self, i: usize) -> &DMatrix<f64> {
        &self.frame[i]
    }

    pub fn frames(&self) -> &[DMatrix<f64>] {
        &self.frame
    }

    fn frame_spline(&self) -> &CubicSpline {
        self.frame_spline.get_or_init(|| {
            let n = self.frame[0].nrows();
            let m = self.frame[0].ncols();
            let channels: Vec<Vec<f64>> = (0..n * m)
                .map(|c| {
                    let (r, col) = (c % n, c / n);
                    self.frame.iter().map(|f| f[(r, col)]).collect()
                })
                .collect();
            CubicSpline::new(self.base.params().to_vec(), channels, Boundary::Estimated)
                .expect("valid frame spline")
        })
    }

    /// Interpolated frame at parameter `s`.
    pub fn frame_at(&self, s: f64) -> DMatrix<f64> {
        let sp = self.frame_spline();
        let n = self.frame[0].nrows();
        let m = self.frame[0].ncols();
        let mut out = DMatrix::zeros(n, m);
        for c in 0..n * m {
            out[(c % n, c / n)] = sp.eval(c, s);
        }
        out
    }

    /// Frame derivative d/ds at parameter `s`.
    pub fn frame_derivative_at(&self, s: f64) -> DMatrix<f64> {
        let sp = self.frame_spline();
        let n = self.frame[0].nrows();
        let m = self.frame[0].ncols();
        let mut out = DMatrix::zeros(n, m);
        for c in 0..n * m {
            out[(c % n, c / n)] = sp.eval_d(c, s).1;
        }
        out
    }

    /// Wrap a parameter into the base's span for closed bases.
    pub fn wrap_param(&self, s: f64) -> f64 {
        let (s0, s1) = self.base.param_span();
        if self.base.is_closed() {
            s0 + (s - s0).rem_euclid(s1 - s0)
        } else {
            s.clamp(s0, s1)
        }
    }

    /// Worst orthonormality defect `max |<n_i, n_j>_g - δ_ij|` and worst
    /// normality defect `max |<n_i, T̂>_g|` over the samples.
    pub fn frame_defects(&self, metric: &MetricField) -> Result<(f64, f64)> {
        let mut ortho: f64 = 0.0;
        let mut normal: f64 = 0.0;
        for i in 0..self.base.sample_count() {
            let p = self.base.point(i);
            let g = metric.eval(&p)?;
            let v = self.base.velocity_at_sample(i);
            let that = &v / metric.norm(&p, &v)?;
            let f = &self.frame[i];
            let gram = f.transpose() * &g * f;
            let m = f.ncols();
            for a in 0..m {
                for b in 0..m {
                    let expect = if a == b { 1.0 } else { 0.0 };
                    ortho = ortho.max((gram[(a, b)] - expect).abs());
                }
                let t_comp = (f.column(a).transpose() * &g * &that)[(0, 0)];
                normal = normal.max(t_comp.abs());
            }
        }
        Ok((ortho, normal))
    }

    /// Residual of the normal-connection transport law between consecutive
    /// samples, per unit step (diagnostic for the parallelism invariant).
    pub fn transport_residual_per_step(&self, metric: &MetricField) -> Result<f64> {
        // Compare the stored frame against a fresh one-interval RK4 transport
        // starting from the previous sample, on a subsample of intervals.
        let params = self.base.params();
        let stride = (params.len() / 32).max(1);
        let mut worst: f64 = 0.0;
        for i in (0..params.len() - 1).step_by(stride) {
            let h = params[i + 1] - params[i];
            // One explicit Euler + midpoint correction is enough for a
            // residual estimate at O(h^3) below the 1e-6*step target.
            let cols: Vec<DVector<f64>> =
                (0..self.frame[i].ncols()).map(|c| self.frame[i].column(c).into()).collect();
            let mut advanced = cols.clone();
            let rate_at = |s: f64, cs: &[DVector<f64>]| -> Result<Vec<DVector<f64>>> {
                let x = self.base.position_at(s);
                let v = self.base.velocity_at(s);
                let a = self.base.acceleration_at(s);
                let p = ChartPoint::new(self.chart, x.clone());
                let g = metric.eval(&p)?;
                let speed2 = (v.transpose() * &g * &v)[(0, 0)];
                let speed = speed2.sqrt();
                let that = &v / speed;
                let dsv = &a + metric.christoffel_apply_raw(self.chart, &x, &v, &v);
                let dspeed = (dsv.transpose() * &g * &v)[(0, 0)] / speed;
                let dst = &dsv / speed - &v * (dspeed / speed2);
                cs.iter()
                    .map(|nv| {
                        let gamma = metric.christoffel_apply_raw(self.chart, &x, &v, nv);
                        let proj = (nv.transpose() * &g * &dst)[(0, 0)];
                        Ok(-gamma - &that * proj)
                    })
                    .collect()
            };
            let k1 = rate_at(params[i], &advanced)?;
            let mid: Vec<_> = advanced
                .iter()
                .zip(&k1)
                .map(|(c, k)| c + k * (h / 2.0))
                .collect();
            let k2 = rate_at(params[i] + h / 2.0, &mid)?;
            for (j, c) in advanced.iter_mut().enumerate() {
                *c += &k2[j] * h;
                let _ = &k1[j];
            }
            for (j, c) in advanced.iter().enumerate() {
                let stored: DVector<f64> = self.frame[i + 1].column(j).into();
                worst = worst.max((c - stored).norm() / h);
            }
        }
        Ok(worst)
    }

    /// Sampled injectivity: for distant parameter pairs whose chord is shorter
    /// than `2r` (a necessary condition for two tube slices to meet), check
    /// whether the chord is actually resolvable by normal offsets within the
    /// radius. Tangential chords (a curve wrapping around a torus) pass.
    fn check_injectivity(&self, metric: &MetricField, window_factor: f64) -> Result<()> {
        let (s0, s1) = self.base.param_span();
        let total = s1 - s0;
        let window = (window_factor * self.radius).min(total / 3.0);
        let params = self.base.params();
        let n = metric.dim();
        let stride = (params.len() / 512).max(1);
        for i in (0..params.len()).step_by(stride) {
            for j in ((i + 1)..params.len()).step_by(stride) {
                let mut sep = (params[j] - params[i]).abs();
                if self.base.is_closed() {
                    sep = sep.min(total - sep);
                }
                if sep <= window {
                    continue;
                }
                let d = metric.proxy_distance(&self.base.point(i), &self.base.point(j));
                if d >= 2.0 * self.radius {
                    continue;
                }
                // Candidate pair: try chord = N_j h_j - N_i h_i.
                let chord = metric.chart_displacement(
                    self.chart,
                    &self.base.points()[i],
                    &self.base.points()[j],
                );
                let m = n - 1;
                let mut mat = DMatrix::zeros(n, 2 * m);
                for c in 0..m {
                    let col_j = self.frame[j].column(c);
                    let col_i = self.frame[i].column(c);
                    for r in 0..n {
                        mat[(r, c)] = col_j[r];
                        mat[(r, m + c)] = -col_i[r];
                    }
                }
                let svd = mat.clone().svd(true, true);
                let xi = svd
                    .solve(&chord, 1e-10)
                    .unwrap_or_else(|_| DVector::zeros(2 * m));
                let residual = (&mat * &xi - &chord).norm();
                if residual > 0.05 * chord.norm() + 1e-12 {
                    continue; // chord is essentially tangential; no collision
                }
                let hj = xi.rows(0, m).norm();
                let hi = xi.rows(m, m).norm();
                if hi < self.radius && hj < self.radius {
                    return Err(GeonetError::Geometry(format!(
                        "tube self-overlap: slices at parameters {:.4} and {:.4} meet (chord {d:.4} < 2r = {})",
                        params[i], params[j], 2.0 * self.radius
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Point of the tube at coordinates `(s, h)`: `exp_{c(s)}(Σ h_i n_i(s))`.
pub fn tube_point(
    metric: &MetricField,
    tube: &FermiTube,
    s: f64,
    h: &DVector<f64>,
) -> Result<ChartPoint> {
    if h.norm() > tube.radius() + 1e-12 {
        return Err(GeonetError::Domain(format!(
            "offset |h| = {} exceeds tube radius {}",
            h.norm(),
            tube.radius()
        )));
    }
    let sw = tube.wrap_param(s);
    let c = tube.base().position_at(sw);
    let frame = tube.frame_at(sw);
    let w = &frame * h;
    let p = ChartPoint::new(tube.chart(), c);
    if w.norm() < 1e-300 {
        return Ok(p);
    }
    if metric.is_flat() {
        return Ok(ChartPoint::new(tube.chart(), &p.coords + &w));
    }
    let step = (tube.radius() / 64.0).max(1e-5);
    let curve = integrate_geodesic(metric, &p, &w, 1.0, IntegrationParams::with_step(step))?;
    Ok(curve.end())
}

#[derive(Debug, Clone)]
pub struct TubeCoordinates {
    pub s: f64,
    pub h: DVector<f64>,
}

/// Invert the tube map: nearest-point projection parameter and frame offsets.
pub fn tube_coordinates(
    metric: &MetricField,
    tube: &FermiTube,
    x: &ChartPoint,
) -> Result<TubeCoordinates> {
    tube_coordinates_in_window(metric, tube, x, None)
}

/// Like [`tube_coordinates`], with the coarse projection scan restricted to a
/// sample index range (callers that know where the point projects use this to
/// avoid scanning the whole base).
pub fn tube_coordinates_in_window(
    metric: &MetricField,
    tube: &FermiTube,
    x: &ChartPoint,
    scan_window: Option<(usize, usize)>,
) -> Result<TubeCoordinates> {
    let x_in = if x.chart == tube.chart() {
        x.coords.clone()
    } else {
        metric
            .to_chart(x, tube.chart())
            .ok_or_else(|| GeonetError::Domain("point not expressible in tube chart".into()))?
            .0
            .coords
    };
    let base = tube.base();
    let params = base.params();
    let (s0, s1) = base.param_span();
    let total = s1 - s0;

    // Coarse scan for the nearest sample (wrapped chart metric proxy).
    let (scan_lo, scan_hi) = match scan_window {
        Some((lo, hi)) => (lo, hi.min(params.len() - 1)),
        None => (0, params.len() - 1),
    };
    let mut best = f64::INFINITY;
    let mut best_i = scan_lo;
    let mut dists = Vec::with_capacity(scan_hi - scan_lo + 1);
    for i in scan_lo..=scan_hi {
        let d = metric
            .chart_displacement(tube.chart(), &base.points()[i], &x_in)
            .norm();
        dists.push(d);
        if d < best {
            best = d;
            best_i = i;
        }
    }
    // Ambiguity at the cut radius: a genuinely distant part of the base is
    // equally close.
    let window = (8.0 * tube.radius()).min(total / 3.0);
    for i in scan_lo..=scan_hi {
        let mut sep = (params[i] - params[best_i]).abs();
        if base.is_closed() {
            sep = sep.min(total - sep);
        }
        if sep > window && dists[i - scan_lo] < best + 1e-9 {
            return Err(GeonetError::Ambiguity(format!(
                "projection not unique: parameters {:.4} and {:.4} are equidistant",
                params[best_i], params[i]
            )));
        }
    }

    let mut s = params[best_i];
    if metric.is_flat() {
        // Newton on <x - c(s), c'(s)> = 0 against the periodic image of x
        // nearest to the initial sample.
        let image = &base.points()[best_i]
            + metric.chart_displacement(tube.chart(), &base.points()[best_i], &x_in);
        for _ in 0..60 {
            let sw = tube.wrap_param(s);
            let c = base.position_at(sw);
            let v = base.velocity_at(sw);
            let a = base.acceleration_at(sw);
            let r = &image - &c;
            let f = r.dot(&v);
            let df = r.dot(&a) - v.dot(&v);
            if df.abs() < 1e-300 {
                break;
            }
            let step = f / df;
            s -= step;
            if step.abs() < 1e-14 * (1.0 + total) {
                break;
            }
        }
        let sw = tube.wrap_param(s);
        let c = base.position_at(sw);
        let v = base.velocity_at(sw);
        let r = &image - &c;
        let tang = r.dot(&v) / v.norm();
        if tang.abs() > 1e-8 * (1.0 + r.norm()) {
            return Err(GeonetError::Convergence(format!(
                "projection Newton stalled (tangential residual {tang:.3e})"
            )));
        }
        let frame = tube.frame_at(sw);
        let h = frame.transpose() * &r;
        let recon = &frame * &h;
        if (recon - &r).norm() > 1e-8 * (1.0 + r.norm()) {
            return Err(GeonetError::Domain(
                "offset not in the normal bundle (projection failed)".into(),
            ));
        }
        if h.norm() > tube.radius() + 1e-12 {
            return Err(GeonetError::Domain(format!(
                "point outside tube: |h| = {} > radius {}",
                h.norm(),
                tube.radius()
            )));
        }
        return Ok(TubeCoordinates { s: sw, h });
    }

    // Curved backends: Newton on Φ(s, h) = x over (s, h).
    let n = metric.dim();
    let mut h = {
        // Flat-style first guess in chart coordinates.
        let c = base.position_at(s);
        let frame = tube.frame_at(s);
        frame.transpose() * (&x_in - &c)
    };
    let residual = |s: f64, h: &DVector<f64>| -> Result<DVector<f64>> {
        let p = tube_point(metric, tube, s, h)?;
        let p_in = if p.chart == tube.chart() {
            p.coords
        } else {
            metric
                .to_chart(&p, tube.chart())
                .ok_or_else(|| GeonetError::Domain("tube point left the chart".into()))?
                .0
                .coords
        };
        Ok(metric.chart_displacement(tube.chart(), &x_in, &p_in))
    };
    let mut f = residual(s, &h)?;
    for _ in 0..50 {
        if f.norm() < 1e-11 {
            break;
        }
        let eps_s = 1e-6 * (1.0 + total);
        let eps_h = 1e-7 * (1.0 + tube.radius());
        let mut jac = DMatrix::zeros(n, n);
        let fps = residual(s + eps_s, &h)?;
        for r in 0..n {
            jac[(r, 0)] = (fps[r] - f[r]) / eps_s;
        }
        for c in 0..n - 1 {
            let mut hp = h.clone();
            hp[c] += eps_h;
            let fph = residual(s, &hp)?;
            for r in 0..n {
                jac[(r, c + 1)] = (fph[r] - f[r]) / eps_h;
            }
        }
        let delta = jac
            .lu()
            .solve(&(-&f))
            .ok_or_else(|| GeonetError::Convergence("singular tube Jacobian".into()))?;
        s += delta[0];
        for c in 0..n - 1 {
            h[c] += delta[c + 1];
        }
        f = residual(s, &h)?;
    }
    if f.norm() >= 1e-9 {
        return Err(GeonetError::Convergence(format!(
            "tube inversion stalled at residual {:.3e}",
            f.norm()
        )));
    }
    if h.norm() > tube.radius() + 1e-12 {
        return Err(GeonetError::Domain(format!(
            "point outside tube: |h| = {} > radius {}",
            h.norm(),
            tube.radius()
        )));
    }
    Ok(TubeCoordinates {
        s: tube.wrap_param(s),
        h,
    })
}

// ---------------------------------------------------------------------------
// Curvature profiles
// ---------------------------------------------------------------------------

/// Normal components `k^i(s)` of the curvature vector along a curve, in the
/// tube's frame. Tangential components are excluded by construction.
#[derive(Debug, Clone)]
pub struct CurvatureProfile {
    params: Vec<f64>,
    components: Vec<DVector<f64>>,
    spline: OnceLock<CubicSpline>,
}

impl CurvatureProfile {
    pub fn new(params: Vec<f64>, components: Vec<DVector<f64>>) -> Result<Self> {
        if params.len() != components.len() || params.len() < 2 {
            return Err(GeonetError::Input("profile sample mismatch".into()));
        }
        Ok(CurvatureProfile {
            params,
            components,
            spline: OnceLock::new(),
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn components(&self) -> &[DVector<f64>] {
        &self.components
    }

    pub fn component_count(&self) -> usize {
        self.components[0].len()
    }

    fn spline(&self) -> &CubicSpline {
        self.spline.get_or_init(|| {
            let m = self.component_count();
            let channels: Vec<Vec<f64>> = (0..m)
                .map(|c| self.components.iter().map(|k| k[c]).collect())
                .collect();
            CubicSpline::new(self.params.clone(), channels, Boundary::Estimated)
                .expect("valid profile spline")
        })
    }

    pub fn eval(&self, s: f64) -> DVector<f64> {
        let sp = self.spline();
        let m = self.component_count();
        DVector::from_fn(m, |c, _| sp.eval(c, s))
    }

    pub fn eval_d(&self, s: f64) -> (DVector<f64>, DVector<f64>) {
        let sp = self.spline();
        let m = self.component_count();
        let mut v = DVector::zeros(m);
        let mut d = DVector::zeros(m);
        for c in 0..m {
            let (a, b) = sp.eval_d(c, s);
            v[c] = a;
            d[c] = b;
        }
        (v, d)
    }

    /// Sup over samples of the Euclidean norm of the component vector (the
    /// frame is orthonormal, so this is the g-norm of the normal curvature).
    pub fn sup_norm(&self) -> f64 {
        self.components
            .iter()
            .map(|k| k.norm())
            .fold(0.0, f64::max)
    }

    /// `C^k` norm over the (uniform) profile grid, max over components.
    pub fn ck_norm(&self, k: usize) -> Result<f64> {
        let spacing = self.params[1] - self.params[0];
        let m = self.component_count();
        let mut worst: f64 = 0.0;
        for c in 0..m {
            let vals: Vec<f64> = self.components.iter().map(|kv| kv[c]).collect();
            worst = worst.max(crate::cknorm::ck_norm_1d(&vals, spacing, k)?);
        }
        Ok(worst)
    }
}

/// Curvature vector `(∇_γ' γ')^⊥ / |γ'|²` at every sample, in chart
/// coordinates (frame-free form).
pub fn curvature_vectors(
    metric: &MetricField,
    curve: &DiscretizedCurve,
) -> Result<Vec<DVector<f64>>> {
    let chart = curve.require_single_chart()?;
    let mut out = Vec::with_capacity(curve.sample_count());
    for i in 0..curve.sample_count() {
        let s = curve.params()[i];
        let x = curve.points()[i].clone();
        let v = curve.velocity_at_sample(i);
        let a = curve.acceleration_at(s);
        let p = ChartPoint::new(chart, x.clone());
        let g = metric.eval(&p)?;
        let speed2 = (v.transpose() * &g * &v)[(0, 0)];
        if !(speed2 > 0.0) {
            return Err(GeonetError::Parametrization(format!(
                "zero-speed sample {i} in curvature evaluation"
            )));
        }
        let dsv = &a + metric.christoffel_apply_raw(chart, &x, &v, &v);
        // Remove the tangential part.
        let vt = (dsv.transpose() * &g * &v)[(0, 0)] / speed2;
        let k = (&dsv - &v * vt) / speed2;
        out.push(k);
    }
    Ok(out)
}

/// Sup over samples of the g-norm of the curvature vector (geodesic residual).
pub fn geodesic_residual_sup(metric: &MetricField, curve: &DiscretizedCurve) -> Result<f64> {
    let chart = curve.require_single_chart()?;
    let ks = curvature_vectors(metric, curve)?;
    let mut sup: f64 = 0.0;
    for (i, k) in ks.iter().enumerate() {
        let p = ChartPoint::new(chart, curve.points()[i].clone());
        sup = sup.max(metric.norm(&p, k)?);
    }
    Ok(sup)
}

/// Project the curvature vectors of `curve` onto the tube frame, producing
/// the profile `k^i(s)`. The tube must be built along the same curve (same
/// parameter grid).
pub fn geodesic_curvature(
    metric: &MetricField,
    curve: &DiscretizedCurve,
    tube: &FermiTube,
) -> Result<CurvatureProfile> {
    if curve.params() != tube.base().params() {
        return Err(GeonetError::Input(
            "curvature profile requires the tube built along the same curve".into(),
        ));
    }
    let chart = curve.require_single_chart()?;
    let ks = curvature_vectors(metric, curve)?;
    let mut comps = Vec::with_capacity(ks.len());
    for (i, k) in ks.iter().enumerate() {
        let p = ChartPoint::new(chart, curve.points()[i].clone());
        let g = metric.eval(&p)?;
        let f = tube.frame_at_sample(i);
        comps.push(f.transpose() * &g * k);
    }
    CurvatureProfile::new(curve.params().to_vec(), comps)
}
