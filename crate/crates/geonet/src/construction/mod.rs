//! The two explicit builds: the eyeglass net from two disjoint closed
//! geodesics and the twisted figure-eight from two intersecting ones,
//! together with the shared machinery (junction geometry, rational tilt,
//! branch geodesics, graphs over curves, Taylor-cutoff connectors, and the
//! rescaled exponential chart).
//!
//! Sign conventions for the eyeglass junction: the bridge `ρ` is oriented
//! from `a` to `b` with unit tangent `ρ̇`; the tilted vertex is
//! `a_t = exp_a(t ρ̇)` (between `a` and `b`), and the branch geodesics start
//! at `a_t` with velocities `±r P_{a→a_t}(v) − t ρ̇|_{a_t}`. With these signs
//! the two inward unit tangents of the loop at `a_t` sum to
//! `−λ(t) ρ̇|_{a_t}`, `λ(t) = 2t/√(r²+t²)`, while the bridge contributes
//! `+ρ̇|_{a_t}`, so multiplicities `m·λ = n` balance the vertex exactly.

mod eyeglass;
mod figure_eight;

pub use eyeglass::{
    assemble_eyeglass_loop, build_eyeglass, default_region, EyeglassBuild, EyeglassPlan,
    EyeglassReport, JunctionSide, ModifiedLoop,
};
pub use figure_eight::{build_figure_eight, FigureEightBuild, FigureEightPlan, FigureEightReport};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::sync::Arc;

use crate::bump::PsiBump;
use crate::cknorm::ck_norm_1d;
use crate::curve::DiscretizedCurve;
use crate::distance::{distance_between_curves, CurveDistance, CurveDistanceOptions};
use crate::error::{GeonetError, Result};
use crate::fermi::{tube_coordinates, FermiTube};
use crate::geodesic::{
    exp_map, integrate_geodesic, parallel_transport, BvpOptions, IntegrationParams,
};
use crate::metric::{ChartPoint, MetricBackend, MetricField};
use crate::spline::{Boundary, CubicSpline};

/// Tunables shared by both builds.
#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    /// Samples per unit arclength for curves produced by the pipeline.
    pub samples_per_unit: usize,
    /// Residual bound required of the input closed geodesics.
    pub input_residual_tol: f64,
    /// Orthogonality residual required of the junction geometry.
    pub orthogonality_tol: f64,
    /// Denominator cap for the rational tilt.
    pub m_max: u32,
    /// Tolerance for the final stationarity verification.
    pub stationarity_tol: f64,
    /// Required vertex-defect bound under the perturbed metric.
    pub defect_tol: f64,
    /// Two-route curvature agreement tolerance.
    pub route_agreement_tol: f64,
    /// Connector matching tolerance (relative, per order).
    pub connector_match_tol: f64,
    /// Case-1 connector span (defaults to r/2; the knots s0, s4 are free).
    pub connector_span: Option<f64>,
    pub integration: IntegrationParams,
    pub bvp: BvpOptions,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            samples_per_unit: 2048,
            input_residual_tol: 1e-6,
            orthogonality_tol: 1e-6,
            m_max: 64,
            stationarity_tol: 1e-6,
            defect_tol: 1e-8,
            route_agreement_tol: 1e-5,
            connector_match_tol: 1e-5,
            connector_span: None,
            integration: IntegrationParams::default(),
            bvp: BvpOptions::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Junction geometry (Case 1 entry)
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct JunctionGeometry {
    pub distance: CurveDistance,
}

/// Distance realization between two disjoint closed geodesics, with the
/// first-order orthogonality residuals required below `opts.orthogonality_tol`.
/// Intersecting inputs raise an intersection error (the figure-eight case
/// applies instead).
pub fn junction_geometry(
    metric: &MetricField,
    alpha: &DiscretizedCurve,
    beta: &DiscretizedCurve,
    opts: &BuildOptions,
) -> Result<JunctionGeometry> {
    let d = distance_between_curves(
        metric,
        alpha,
        beta,
        CurveDistanceOptions {
            bvp: opts.bvp,
            ..Default::default()
        },
    )?;
    let (ra, rb) = d.orthogonality_residuals;
    if ra > opts.orthogonality_tol || rb > opts.orthogonality_tol {
        return Err(GeonetError::Convergence(format!(
            "junction orthogonality residuals ({ra:.3e}, {rb:.3e}) exceed {:.1e}",
            opts.orthogonality_tol
        )));
    }
    Ok(JunctionGeometry { distance: d })
}

// ---------------------------------------------------------------------------
// Rational tilt
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RationalTilt {
    /// Exact tilt recomputed from the rational ratio: `t = λ r / √(4 − λ²)`.
    pub t: f64,
    pub lambda: f64,
    /// λ = n/m in lowest terms.
    pub n: u32,
    pub m: u32,
    pub t_target: f64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// Best rational approximation `λ = n/m` (denominator capped by `m_max`) of
/// `λ(t*) = 2 t*/√(r² + t*²)`, then the tilt inverted exactly from λ. The
/// scan over denominators keeps the first (smallest-m) minimizer, so the
/// multiplicities are the smallest achieving the accuracy.
pub fn choose_rational_tilt(r: f64, target_t: f64, m_max: u32) -> Result<RationalTilt> {
    if !(target_t > 0.0) || !(r > 0.0) {
        return Err(GeonetError::Input(
            "rational tilt needs positive r and target_t".into(),
        ));
    }
    let lambda_star = 2.0 * target_t / (r * r + target_t * target_t).sqrt();
    assert!(
        lambda_star > 0.0 && lambda_star < 2.0,
        "lambda(t) lies in (0, 2) for positive t, r"
    );
    let mut best: Option<(u64, u64, f64)> = None;
    for m in 1..=m_max as u64 {
        let n_raw = (lambda_star * m as f64).round() as i64;
        let n = n_raw.clamp(1, (2 * m - 1) as i64) as u64;
        let err = (n as f64 / m as f64 - lambda_star).abs();
        if best.map_or(true, |(_, _, e)| err < e - 1e-18) {
            best = Some((n, m, err));
        }
    }
    let (n, m, _) = best.expect("m_max >= 1");
    let g = gcd(n, m);
    let (n, m) = (n / g, m / g);
    let lambda = n as f64 / m as f64;
    let t = lambda * r / (4.0 - lambda * lambda).sqrt();
    Ok(RationalTilt {
        t,
        lambda,
        n: n as u32,
        m: m as u32,
        t_target: target_t,
    })
}

// ---------------------------------------------------------------------------
// Branch geodesics at a tilted junction
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct BranchGeodesics {
    pub a_t: ChartPoint,
    /// Branch starting velocities `w_± = ±r P(v) − t ρ̇` at `a_t`.
    pub w_plus: DVector<f64>,
    pub w_minus: DVector<f64>,
    pub gamma_plus: DiscretizedCurve,
    pub gamma_minus: DiscretizedCurve,
    /// Unit tangent of the bridge at `a_t`, pointing along ρ̇ (toward the far
    /// junction).
    pub bridge_inward: DVector<f64>,
    /// Measured inward-tangent sum of the two loop ends at `a_t`.
    pub inward_sum: DVector<f64>,
    /// `|inward_sum + λ ρ̇|_g` (the balance identity residual).
    pub balance_error: f64,
    pub speed_error: f64,
}

/// Construct the tilted junction `a_t = exp_a(t ρ̇)` and the two branch
/// geodesics with velocities `±r P_{a→a_t}(v) − t ρ̇|_{a_t}` (see the module
/// docs for the sign conventions). `rho` must be arclength-parametrized from
/// `a` with unit speed.
pub fn branch_geodesics(
    metric: &MetricField,
    rho: &DiscretizedCurve,
    v_unit: &DVector<f64>,
    t: f64,
    r: f64,
    opts: &BuildOptions,
) -> Result<BranchGeodesics> {
    if t >= metric.injectivity_radius_bound() / 4.0 {
        return Err(GeonetError::Precondition(format!(
            "tilt t = {t} must stay below r_inj/4 = {}",
            metric.injectivity_radius_bound() / 4.0
        )));
    }
    let a = rho.start();
    let e = rho.start_velocity();
    let ortho = metric.inner(&a, &e, v_unit)?;
    if ortho.abs() > 1e-6 {
        return Err(GeonetError::Precondition(format!(
            "bridge tangent not orthogonal to the loop: <ρ̇, v> = {ortho:.3e}"
        )));
    }
    let (a_t, p_v, rho_dot_at) = if t == 0.0 {
        (a.clone(), v_unit.clone(), e.clone())
    } else {
        let a_t = exp_map(metric, &a, &(&e * t), opts.integration)?;
        // Transport v and ρ̇ along ρ from a to a_t.
        let subrho = rho_prefix(metric, rho, t, opts)?;
        let p_v = parallel_transport(metric, &subrho, v_unit)?;
        let rho_dot_at = parallel_transport(metric, &subrho, &e)?;
        (a_t, p_v, rho_dot_at)
    };
    let w_plus = &p_v * r - &rho_dot_at * t;
    let w_minus = -(&p_v * r) - &rho_dot_at * t;
    let speed = (r * r + t * t).sqrt();
    let speed_error = (metric.norm(&a_t, &w_plus)? - speed)
        .abs()
        .max((metric.norm(&a_t, &w_minus)? - speed).abs());
    // Integrate both branches past the half-span footprint.
    let span = 0.75;
    let gamma_plus = integrate_geodesic(metric, &a_t, &w_plus, span, opts.integration)?;
    let gamma_minus = integrate_geodesic(metric, &a_t, &w_minus, span, opts.integration)?;
    // inward tangents of the loop ends are the normalized start velocities
    let inward_sum = (&w_plus + &w_minus) / speed;
    let lambda = 2.0 * t / speed;
    let target = &rho_dot_at * (-lambda);
    let balance_error = metric.norm(&a_t, &(&inward_sum - &target))?;
    Ok(BranchGeodesics {
        a_t,
        w_plus,
        w_minus,
        gamma_plus,
        gamma_minus,
        bridge_inward: rho_dot_at,
        inward_sum,
        balance_error,
        speed_error,
    })
}

/// Prefix of an arclength-parametrized curve up to arclength `t`.
fn rho_prefix(
    metric: &MetricField,
    rho: &DiscretizedCurve,
    t: f64,
    opts: &BuildOptions,
) -> Result<DiscretizedCurve> {
    let _ = metric;
    let (s0, _) = rho.param_span();
    let n = ((t * opts.samples_per_unit as f64).ceil() as usize).clamp(8, 1 << 20);
    let params: Vec<f64> = (0..=n).map(|i| s0 + t * i as f64 / n as f64).collect();
    let points: Vec<DVector<f64>> = params.iter().map(|&s| rho.position_at(s)).collect();
    let velocities: Vec<DVector<f64>> = params.iter().map(|&s| rho.velocity_at(s)).collect();
    DiscretizedCurve::new(
        params,
        vec![rho.chart_ids()[0]; n + 1],
        points,
        Some(velocities),
        false,
    )
}

// ---------------------------------------------------------------------------
// Graphs over a curve
// ---------------------------------------------------------------------------

/// Vector-valued offsets of a curve written as a graph over a tube base:
/// `γ(s) = exp_{c(s)}(Σ h_i(s) n_i(s))` on the parameter window.
#[derive(Debug, Clone)]
pub struct GraphOffsets {
    /// Base parameters (within the tube base's span, wrapped).
    pub params: Vec<f64>,
    /// Offsets per sample (frame components, length n−1).
    pub offsets: Vec<DVector<f64>>,
    offset_spline: CubicSpline,
    pub ck_norms: Vec<f64>,
}

impl GraphOffsets {
    pub fn eval(&self, s: f64) -> DVector<f64> {
        let m = self.offsets[0].len();
        DVector::from_fn(m, |c, _| self.offset_spline.eval(c, s))
    }

    pub fn eval_d(&self, s: f64) -> (DVector<f64>, DVector<f64>) {
        let m = self.offsets[0].len();
        let mut v = DVector::zeros(m);
        let mut d = DVector::zeros(m);
        for c in 0..m {
            let (a, b) = self.offset_spline.eval_d(c, s);
            v[c] = a;
            d[c] = b;
        }
        (v, d)
    }

    /// ‖h‖_{C^j} on the sampled grid, for j up to the precomputed order.
    pub fn ck_norm(&self, j: usize) -> Result<f64> {
        self.ck_norms.get(j).copied().ok_or_else(|| {
            GeonetError::Resolution(format!("C^{j} norm not precomputed for this graph"))
        })
    }
}

/// Express `gamma` as a graph over the tube base on the parameter window
/// `[s_lo, s_hi]`, resampled on a uniform grid of the base parameter.
/// `ck_order` controls how many norms ‖h‖_{C^j} are recorded (j <= ck_order).
pub fn graph_over_curve(
    metric: &MetricField,
    gamma: &DiscretizedCurve,
    tube: &FermiTube,
    s_lo: f64,
    s_hi: f64,
    samples: usize,
    ck_order: usize,
) -> Result<GraphOffsets> {
    // Project every gamma sample into the tube.
    let mut proj: Vec<(f64, DVector<f64>)> = Vec::with_capacity(gamma.sample_count());
    for i in 0..gamma.sample_count() {
        let p = gamma.point(i);
        let tc = tube_coordinates(metric, tube, &p).map_err(|e| match e {
            GeonetError::Domain(msg) => GeonetError::TubeExit(format!(
                "graph curve leaves the tube at sample {i}: {msg}"
            )),
            other => other,
        })?;
        proj.push((tc.s, tc.h));
    }
    // The projection parameters must be strictly monotone for a graph.
    let increasing = proj.windows(2).all(|w| w[1].0 > w[0].0);
    let decreasing = proj.windows(2).all(|w| w[1].0 < w[0].0);
    if !increasing && !decreasing {
        return Err(GeonetError::TubeExit(
            "curve is not a graph over the base (non-monotone projection)".into(),
        ));
    }
    if decreasing {
        proj.reverse();
    }
    let m = metric.dim() - 1;
    let knots: Vec<f64> = proj.iter().map(|(s, _)| *s).collect();
    let channels: Vec<Vec<f64>> = (0..m)
        .map(|c| proj.iter().map(|(_, h)| h[c]).collect())
        .collect();
    let source = CubicSpline::new(knots.clone(), channels, Boundary::Estimated)?;
    if s_lo < knots[0] - 1e-9 || s_hi > knots[knots.len() - 1] + 1e-9 {
        return Err(GeonetError::TubeExit(format!(
            "requested window [{s_lo:.4}, {s_hi:.4}] exceeds the graph footprint [{:.4}, {:.4}]",
            knots[0],
            knots[knots.len() - 1]
        )));
    }
    // Resample on the uniform grid.
    let params: Vec<f64> = (0..samples)
        .map(|i| s_lo + (s_hi - s_lo) * i as f64 / (samples - 1) as f64)
        .collect();
    let offsets: Vec<DVector<f64>> = params
        .iter()
        .map(|&s| DVector::from_fn(m, |c, _| source.eval(c, s)))
        .collect();
    let spacing = params[1] - params[0];
    let mut ck_norms = Vec::with_capacity(ck_order + 1);
    for j in 0..=ck_order {
        let mut worst: f64 = 0.0;
        for c in 0..m {
            let vals: Vec<f64> = offsets.iter().map(|h| h[c]).collect();
            worst = worst.max(ck_norm_1d(&vals, spacing, j)?);
        }
        ck_norms.push(worst);
    }
    let channels: Vec<Vec<f64>> = (0..m)
        .map(|c| offsets.iter().map(|h| h[c]).collect())
        .collect();
    let offset_spline = CubicSpline::new(params.clone(), channels, Boundary::Estimated)?;
    Ok(GraphOffsets {
        params,
        offsets,
        offset_spline,
        ck_norms,
    })
}

// ---------------------------------------------------------------------------
// Taylor-cutoff connectors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ConnectorMatching {
    pub order: usize,
    /// |D^j (h − u)| at the match point, relative to the derivative scale.
    pub relative_residual: f64,
}

/// A connector offset function `u(s) = ψ(|s − s_match|) T_{k+2}[h](s)` on the
/// span between the far knot and the match knot. It matches `h` at the match
/// point up to order k+2 and vanishes with all those derivatives at the far
/// end.
#[derive(Debug, Clone)]
pub struct Connector {
    pub s_match: f64,
    pub s_far: f64,
    /// Derivatives of the matched offsets at `s_match`, orders 0..=k+2.
    pub taylor: Vec<DVector<f64>>,
    psi: PsiBump,
    pub matching: Vec<ConnectorMatching>,
    /// ‖u‖_{C^{k+2}} on the connector grid.
    pub ck2_norm: f64,
    /// Reported bound constant ‖u‖_{C^{k+2}} / max(‖h‖_{C^{k+2}}, ε).
    pub bound_constant: f64,
}

impl Connector {
    fn extends_left(&self) -> bool {
        self.s_far < self.s_match
    }

    pub fn span(&self) -> (f64, f64) {
        if self.extends_left() {
            (self.s_far, self.s_match)
        } else {
            (self.s_match, self.s_far)
        }
    }

    /// Offset value and derivative at base parameter `s`.
    pub fn eval_d(&self, s: f64) -> (DVector<f64>, DVector<f64>) {
        let m = self.taylor[0].len();
        let d = s - self.s_match;
        let arg = if self.extends_left() { -d } else { d };
        let psi = self.psi.eval_deriv(arg, 0);
        let dpsi_ds = self.psi.eval_deriv(arg, 1) * if self.extends_left() { -1.0 } else { 1.0 };
        // terms[j] = d^j / j!, so T = Σ c_j terms[j], T' = Σ_{j>=1} c_j terms[j-1].
        let mut terms = vec![1.0; self.taylor.len()];
        for j in 1..self.taylor.len() {
            terms[j] = terms[j - 1] * d / j as f64;
        }
        let mut t = DVector::zeros(m);
        let mut tp = DVector::zeros(m);
        for (j, coeff) in self.taylor.iter().enumerate() {
            t += coeff * terms[j];
            if j >= 1 {
                tp += coeff * terms[j - 1];
            }
        }
        (&t * psi, &t * dpsi_ds + &tp * psi)
    }
}

/// Build the connector matching `h` at `s_match` up to order `k + 2`, with
/// the standard ψ profile (plateau on the first quarter of the span, support
/// ending at half span). The matching residuals are verified by finite
/// differences of `h − T` on the branch side of the match point.
pub fn taylor_cutoff_connector(
    h: &GraphOffsets,
    s_match: f64,
    s_far: f64,
    k: usize,
    match_tol: f64,
) -> Result<Connector> {
    let order = k + 2;
    let m = h.offsets[0].len();
    let span = (s_far - s_match).abs();
    let psi = PsiBump::for_span(span, order)?;
    // Derivatives of h at the match point by least-squares polynomial fit on
    // the branch-side window (one-sided data).
    let grid = &h.params;
    let spacing = grid[1] - grid[0];
    let window = ((4 * (order + 2)) as f64 * spacing).min((grid[grid.len() - 1] - grid[0]).abs());
    let side_right = (s_match - grid[0]).abs() < (grid[grid.len() - 1] - s_match).abs();
    let fit_points: Vec<f64> = grid
        .iter()
        .cloned()
        .filter(|&s| {
            if side_right {
                s >= s_match - 1e-12 && s <= s_match + window
            } else {
                s <= s_match + 1e-12 && s >= s_match - window
            }
        })
        .collect();
    if fit_points.len() < 2 * (order + 1) {
        return Err(GeonetError::Resolution(format!(
            "not enough samples ({}) near the match point for order {order} derivatives",
            fit_points.len()
        )));
    }
    let scale = window;
    let deg = order;
    let rows = fit_points.len();
    let mut a = DMatrix::zeros(rows, deg + 1);
    for (r, &s) in fit_points.iter().enumerate() {
        let x = (s - s_match) / scale;
        let mut p = 1.0;
        for c in 0..=deg {
            a[(r, c)] = p;
            p *= x;
        }
    }
    let svd = a.clone().svd(true, true);
    let mut taylor: Vec<DVector<f64>> = vec![DVector::zeros(m); order + 1];
    for c in 0..m {
        let b = DVector::from_fn(rows, |r, _| h.eval(fit_points[r])[c]);
        let coeffs = svd
            .solve(&b, 1e-12)
            .map_err(|e| GeonetError::Resolution(format!("derivative fit failed: {e}")))?;
        let mut fact = 1.0;
        for j in 0..=order {
            if j > 0 {
                fact *= j as f64;
            }
            taylor[j][c] = coeffs[j] * fact / scale.powi(j as i32);
        }
    }

    let mut conn = Connector {
        s_match,
        s_far,
        taylor,
        psi,
        matching: Vec::new(),
        ck2_norm: 0.0,
        bound_constant: 0.0,
    };

    // Matching check: finite differences of Δ(s) = h(s) − T(s) on the
    // branch side of the match point (ψ ≡ 1 there, so u = T). The step is a
    // fraction of the available branch range: Δ vanishes to order k+3, so
    // large steps cost no accuracy while keeping roundoff amplification
    // (∝ h^{-j}) harmless.
    let branch_range = if side_right {
        grid[grid.len() - 1] - s_match
    } else {
        s_match - grid[0]
    };
    let fd_h = (branch_range / (order as f64 + 1.0)).max(6.0 * spacing);
    let delta = |s: f64| -> DVector<f64> {
        let hv = h.eval(s);
        let d = s - s_match;
        let mut term = 1.0;
        let mut t = DVector::zeros(m);
        for (j, coeff) in conn.taylor.iter().enumerate() {
            if j > 0 {
                term *= d / j as f64;
            }
            t += coeff * term;
        }
        hv - t
    };
    let dir: f64 = if side_right { 1.0 } else { -1.0 };
    let h_ck2 = h.ck_norm(order).unwrap_or(0.0);
    let floor = h_ck2.max(1e-12);
    let mut matching = Vec::new();
    for j in 0..=order {
        // One-sided stencil from the branch side: forward differences of
        // order j (Δ vanishes to order k+3 at the match point, so any
        // consistent stencil reads ~0).
        let mut acc = DVector::zeros(m);
        for i in 0..=j {
            let sign = if (j - i) % 2 == 0 { 1.0 } else { -1.0 };
            let binom = {
                let mut b = 1.0;
                for q in 0..i {
                    b = b * (j - q) as f64 / (q + 1) as f64;
                }
                b
            };
            acc += delta(s_match + dir * i as f64 * fd_h) * (sign * binom);
        }
        let d_j = acc.norm() / fd_h.powi(j as i32);
        let scale_j = floor.max(conn.taylor[j].norm());
        let rel = d_j / scale_j;
        matching.push(ConnectorMatching {
            order: j,
            relative_residual: rel,
        });
        if rel > match_tol {
            return Err(GeonetError::Resolution(format!(
                "connector matching at order {j} has relative residual {rel:.3e} (tol {match_tol:.1e})"
            )));
        }
    }
    conn.matching = matching;

    // ‖u‖_{C^{k+2}} on a uniform connector grid.
    let ngrid = 257;
    let (lo, hi) = conn.span();
    let gspace = (hi - lo) / (ngrid - 1) as f64;
    let mut worst: f64 = 0.0;
    for c in 0..m {
        let vals: Vec<f64> = (0..ngrid)
            .map(|i| conn.eval_d(lo + gspace * i as f64).0[c])
            .collect();
        worst = worst.max(ck_norm_1d(&vals, gspace, order)?);
    }
    conn.ck2_norm = worst;
    conn.bound_constant = worst / floor;
    Ok(conn)
}

// ---------------------------------------------------------------------------
// Rescaled exponential chart (Case 2 entry)
// ---------------------------------------------------------------------------

/// The chart `φ(x) = exp_v((2r/3) R x)` on `B_{3/2}(0)` with the metric
/// `(9/4r²) φ*g`; `R` is a g-orthonormal rotation chosen by the caller (for
/// the figure-eight: span{x₁, x₂} = span{α̇, β̇}).
pub struct RescaledChart {
    pub base: MetricField,
    pub center: ChartPoint,
    pub scale: f64,
    pub rotation: DMatrix<f64>,
    integration: IntegrationParams,
}

/// Build the rescaled exponential chart at `v` with physical radius `r`.
/// `frame` columns must be g-orthonormal at `v`; they become the coordinate
/// directions.
pub fn rescaled_chart(
    metric: &MetricField,
    v: &ChartPoint,
    r: f64,
    frame: DMatrix<f64>,
    integration: IntegrationParams,
) -> Result<RescaledChart> {
    if r >= metric.injectivity_radius_bound() {
        return Err(GeonetError::Precondition(format!(
            "chart radius {r} must stay below the injectivity bound {}",
            metric.injectivity_radius_bound()
        )));
    }
    let g = metric.eval(v)?;
    let gram = frame.transpose() * &g * &frame;
    let defect = (&gram - DMatrix::identity(frame.ncols(), frame.ncols())).amax();
    if defect > 1e-8 {
        return Err(GeonetError::Input(format!(
            "chart frame not g-orthonormal (defect {defect:.3e})"
        )));
    }
    Ok(RescaledChart {
        base: metric.clone(),
        center: v.clone(),
        scale: 2.0 * r / 3.0,
        rotation: frame,
        integration,
    })
}

impl RescaledChart {
    /// Map rescaled-chart coordinates to a base-manifold point.
    pub fn to_base(&self, x: &DVector<f64>) -> Result<ChartPoint> {
        let w = &self.rotation * x * self.scale;
        if w.norm() < 1e-300 {
            return Ok(self.center.clone());
        }
        exp_map(&self.base, &self.center, &w, self.integration)
    }

    /// Push a chart tangent vector at the origin to the base chart.
    pub fn tangent_at_center(&self, u: &DVector<f64>) -> DVector<f64> {
        // dφ(0) = scale · R; the rescaled metric makes this an isometry.
        &self.rotation * u
    }

    /// The rescaled chart as an evaluable metric field (identity at 0).
    pub fn metric(self: Arc<Self>) -> Result<MetricField> {
        let bound = 1.4; // chart units; B_{3/2} with margin
        MetricField::new(
            Arc::new(RescaledChartBackend { chart: self }),
            bound,
        )
    }
}

struct RescaledChartBackend {
    chart: Arc<RescaledChart>,
}

impl RescaledChartBackend {
    fn phi(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.chart.to_base(x)?.coords)
    }
}

impl MetricBackend for RescaledChartBackend {
    fn dim(&self) -> usize {
        self.chart.base.dim()
    }

    fn chart_count(&self) -> usize {
        1
    }

    fn chart_contains(&self, chart: usize, x: &DVector<f64>) -> bool {
        chart == 0 && x.norm() < 1.5
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
        let c = &self.chart;
        if c.base.is_flat() {
            // φ is affine: pullback is exactly the identity.
            return DMatrix::identity(n, n);
        }
        // J columns: dφ/dx_i by Richardson-extrapolated centered
        // differences of the exponential.
        let h = 1e-4;
        let mut jac = DMatrix::zeros(n, n);
        for i in 0..n {
            let col_at = |step: f64| {
                let mut xp = x.clone();
                xp[i] += step;
                let mut xm = x.clone();
                xm[i] -= step;
                let fp = self.phi(&xp).expect("chart domain");
                let fm = self.phi(&xm).expect("chart domain");
                (fp - fm) / (2.0 * step)
            };
            let c1 = col_at(h);
            let c2 = col_at(h / 2.0);
            jac.set_column(i, &((c2 * 4.0 - c1) / 3.0));
        }
        let base_point = self.chart.to_base(x).expect("chart domain");
        let g = c.base.eval(&base_point).expect("chart domain");
        // 9/(4r^2) with r = 1.5*scale collapses to 1/scale^2.
        let factor = 1.0 / (c.scale * c.scale);
        jac.transpose() * g * jac * factor
    }

    fn eval_d1(&self, chart: usize, x: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = self.dim();
        let g = self.eval(chart, x);
        if self.chart.base.is_flat() {
            return (g, vec![DMatrix::zeros(n, n); n]);
        }
        // Richardson-extrapolated centered differences of eval.
        let h = 2e-3;
        let mut dg = Vec::with_capacity(n);
        for k in 0..n {
            let diff = |step: f64| -> DMatrix<f64> {
                let mut xp = x.clone();
                xp[k] += step;
                let mut xm = x.clone();
                xm[k] -= step;
                (self.eval(chart, &xp) - self.eval(chart, &xm)) / (2.0 * step)
            };
            let c1 = diff(h);
            let c2 = diff(h / 2.0);
            dg.push((c2 * 4.0 - c1) / 3.0);
        }
        (g, dg)
    }

    fn is_flat(&self) -> bool {
        self.chart.base.is_flat()
    }

    fn describe(&self) -> String {
        format!(
            "rescaled exp chart (scale {}) over {}",
            self.chart.scale,
            self.chart.base.describe()
        )
    }
}

// ---------------------------------------------------------------------------
// Loop assembly (shared by both cases)
// ---------------------------------------------------------------------------

/// Offset function pieces in the seam-relative coordinate λ ∈ [0, L).
pub(crate) enum OffsetPiece {
    Graph {
        lo: f64,
        hi: f64,
        graph: GraphOffsets,
        /// base parameter of the seam (graph params are absolute base params)
        seam: f64,
        wrap: f64,
    },
    Connector {
        lo: f64,
        hi: f64,
        conn: Connector,
        seam: f64,
        wrap: f64,
    },
}

impl OffsetPiece {
    fn window(&self) -> (f64, f64) {
        match self {
            OffsetPiece::Graph { lo, hi, .. } => (*lo, *hi),
            OffsetPiece::Connector { lo, hi, .. } => (*lo, *hi),
        }
    }

    fn eval_d(&self, lambda: f64) -> (DVector<f64>, DVector<f64>) {
        match self {
            OffsetPiece::Graph {
                graph, seam, wrap, ..
            } => {
                let s = unwrap_param(seam + lambda, *wrap, &graph.params);
                graph.eval_d(s)
            }
            OffsetPiece::Connector {
                conn, seam, wrap, ..
            } => {
                let (lo, hi) = conn.span();
                let s = unwrap_param(seam + lambda, *wrap, &[lo, hi]);
                conn.eval_d(s)
            }
        }
    }
}

/// Map an absolute parameter onto the representative range covering `window`
/// modulo the base period.
fn unwrap_param(s: f64, period: f64, window: &[f64]) -> f64 {
    let lo = window[0];
    let hi = window[window.len() - 1];
    let mut v = s;
    while v > hi + period / 2.0 {
        v -= period;
    }
    while v < lo - period / 2.0 {
        v += period;
    }
    v.clamp(lo, hi)
}

/// Assemble a modified loop from a closed base curve, a seam parameter, and
/// offset pieces in seam-relative coordinates; the two exact end velocities
/// (in base-parameter rate) are stamped onto the seam samples.
pub(crate) fn assemble_offset_loop(
    metric: &MetricField,
    base: &DiscretizedCurve,
    tube: &FermiTube,
    seam: f64,
    pieces: &[OffsetPiece],
    end_velocity_start: Option<DVector<f64>>,
    end_velocity_end: Option<DVector<f64>>,
    samples: usize,
    continuity_tol: f64,
) -> Result<DiscretizedCurve> {
    let chart = base.require_single_chart()?;
    let (b0, b1) = base.param_span();
    let total = b1 - b0;
    // Validate piece continuity at the internal knots.
    let mut sorted: Vec<&OffsetPiece> = pieces.iter().collect();
    sorted.sort_by(|a, b| a.window().0.partial_cmp(&b.window().0).unwrap());
    for w in sorted.windows(2) {
        let (_, hi_a) = w[0].window();
        let (lo_b, _) = w[1].window();
        if (hi_a - lo_b).abs() < 1e-9 {
            let (va, _) = w[0].eval_d(hi_a);
            let (vb, _) = w[1].eval_d(lo_b);
            let gap = (va - vb).norm();
            if gap > continuity_tol {
                return Err(GeonetError::Assembly(format!(
                    "offset pieces disagree by {gap:.3e} at the knot λ = {hi_a:.4}"
                )));
            }
        }
    }
    let offset_at = |lambda: f64| -> (DVector<f64>, DVector<f64>) {
        for p in pieces {
            let (lo, hi) = p.window();
            if lambda >= lo - 1e-12 && lambda <= hi + 1e-12 {
                return p.eval_d(lambda.clamp(lo, hi));
            }
        }
        (
            DVector::zeros(metric.dim() - 1),
            DVector::zeros(metric.dim() - 1),
        )
    };
    let mut params = Vec::with_capacity(samples + 1);
    let mut points = Vec::with_capacity(samples + 1);
    let mut velocities = Vec::with_capacity(samples + 1);
    // Lattice translation of one traversal of the closed lift: positions past
    // the base seam continue with this shift so the loop stays continuous in
    // unwrapped coordinates.
    let lattice = &base.points()[base.sample_count() - 1] - &base.points()[0];
    for i in 0..=samples {
        let lambda = total * i as f64 / samples as f64;
        let raw = seam - b0 + lambda;
        let wraps = (raw / total).floor();
        let s = b0 + raw - wraps * total;
        let c = base.position_at(s) + &lattice * wraps;
        let cv = base.velocity_at(s);
        let frame = tube.frame_at(s);
        let dframe = tube.frame_derivative_at(s);
        let (w, wp) = offset_at(lambda);
        let x = if metric.is_flat() {
            &c + &frame * &w
        } else {
            crate::fermi::tube_point(metric, tube, s, &w)?.coords
        };
        // dγ/dλ = c' + N' w + N w' (exact on flat backends; the leading-order
        // expression elsewhere, corrected below by exact end data).
        let v = &cv + &dframe * &w + &frame * &wp;
        params.push(lambda);
        points.push(x);
        velocities.push(v);
    }
    if let Some(v0) = end_velocity_start {
        velocities[0] = v0;
    }
    if let Some(v1) = end_velocity_end {
        let last = velocities.len() - 1;
        velocities[last] = v1;
    }
    // Snap the seam closed.
    let last = points.len() - 1;
    let gap = metric
        .chart_displacement(chart, &points[0], &points[last])
        .norm();
    if gap > continuity_tol {
        return Err(GeonetError::Assembly(format!(
            "loop failed to close: seam gap {gap:.3e}"
        )));
    }
    let first = points[0].clone();
    let wrap_fix = metric.chart_displacement(chart, &points[last], &first);
    points[last] = &points[last] + &wrap_fix;
    let loop_curve = DiscretizedCurve::new(
        params,
        vec![chart; samples + 1],
        points,
        Some(velocities),
        true,
    )?;
    loop_curve.reparametrize_by_arclength(metric, samples + 1)
}
