//! Case 2: the twisted figure-eight from two closed geodesics crossing
//! transversally at a point `v`.
//!
//! In the rescaled exponential chart at `v` the loops are tilted out of
//! their common plane by `±t` along the third frame direction: the α-loop
//! leaves `v` with velocities `ω_± = ±α̇(v) + t u₃` and the β-loop with
//! `τ_± = ±β̇(v) − t u₃`, so the four inward unit tangents cancel exactly at
//! the vertex before any metric perturbation. Each tilted loop is then made
//! geodesic by its own curvature-kill factor; the two supports stay a
//! positive distance apart by the choice of the cutoff `d/4`.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::conformal::{
    apply_conformal, conformal_geodesic_curvature, curvature_kill_factor, metric_ck_distance,
    ConformalStack,
};
use crate::curve::DiscretizedCurve;
use crate::distance::min_polyline_separation;
use crate::error::{GeonetError, Result};
use crate::geodesic::integrate_geodesic;
use crate::metric::{ChartPoint, MetricField};
use crate::net::{
    is_stationary_with, EdgeId, EdgeSpec, GammaNet, ReportOptions, StationarityReport, VertexId,
    WeightedMultigraph,
};

use super::eyeglass::{center_closed_at, modified_loop, ModifiedLoop};
use super::{BuildOptions, ConnectorMatching};

pub struct FigureEightPlan {
    pub v: ChartPoint,
    /// Physical radius of the rescaled chart.
    pub chart_radius: f64,
    /// g-orthonormal frame at v: columns u₁ = α̇, u₂ (Gram-Schmidt of β̇),
    /// u₃ = the tilt direction, ...
    pub rotation: DMatrix<f64>,
    pub t: f64,
    pub omega_plus: DVector<f64>,
    pub omega_minus: DVector<f64>,
    pub tau_plus: DVector<f64>,
    pub tau_minus: DVector<f64>,
    /// Separation d of the connector-carrying arcs.
    pub separation: f64,
    pub alpha_side: ModifiedLoop,
    pub beta_side: ModifiedLoop,
    pub k: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FigureEightReport {
    pub t: f64,
    pub chart_radius: f64,
    pub intersection_angle: f64,
    /// |ω₊ + ω₋ + τ₊ + τ₋| before normalization (chart-exact cancellation).
    pub raw_velocity_cancellation: f64,
    /// g-norm of the sum of the four inward unit tangents at v (base metric).
    pub vertex_balance_pre: f64,
    pub separation: f64,
    pub support_separation: f64,
    pub connector_matching: Vec<Vec<ConnectorMatching>>,
    pub u_ck2_norm: f64,
    pub h_ck2_norm: f64,
    pub k_ck_norm: f64,
    pub f_ck_norm: f64,
    pub g_ck_distance: Option<f64>,
    pub kill_residual_direct: f64,
    pub kill_residual_formula: f64,
    pub route_agreement: f64,
    pub stationarity: StationarityReport,
    pub vertex_defect_sup: f64,
    pub runtime_seconds: f64,
    pub loop_samples: usize,
    pub f_grid: (usize, usize),
    pub g_grid: Option<Vec<usize>>,
    pub g_grid_spacing: Option<Vec<f64>>,
}

pub struct FigureEightBuild {
    pub plan: FigureEightPlan,
    pub stack: ConformalStack,
    pub perturbed_metric: MetricField,
    pub net: GammaNet,
    pub report: FigureEightReport,
}

impl FigureEightBuild {
    pub fn verified(&self) -> Result<()> {
        let st = &self.report.stationarity;
        if !st.stationary || !st.embedded || !st.essential {
            return Err(GeonetError::Verification(format!(
                "figure-eight verification failed: stationary={} (residual {:.3e}, defect {:.3e}), embedded={}, essential={}",
                st.stationary, st.max_edge_residual, st.max_vertex_defect, st.embedded, st.essential
            )));
        }
        Ok(())
    }
}

/// Parameter of the point on a closed curve nearest to `x`; the distance must
/// be below `tol`.
fn locate_on_curve(
    metric: &MetricField,
    curve: &DiscretizedCurve,
    x: &ChartPoint,
    tol: f64,
) -> Result<f64> {
    let chart = curve.require_single_chart()?;
    let x_in = if x.chart == chart {
        x.coords.clone()
    } else {
        metric
            .to_chart(x, chart)
            .ok_or_else(|| GeonetError::Input("point not expressible in curve chart".into()))?
            .0
            .coords
    };
    let mut best = f64::INFINITY;
    let mut best_i = 0;
    for i in 0..curve.sample_count() {
        let d = metric
            .chart_displacement(chart, &curve.points()[i], &x_in)
            .norm();
        if d < best {
            best = d;
            best_i = i;
        }
    }
    let (s0, s1) = curve.param_span();
    let total = s1 - s0;
    let image = &curve.points()[best_i]
        + metric.chart_displacement(chart, &curve.points()[best_i], &x_in);
    let mut s = curve.params()[best_i];
    for _ in 0..50 {
        let sw = s0 + (s - s0).rem_euclid(total);
        let c = curve.position_at(sw);
        let vel = curve.velocity_at(sw);
        let acc = curve.acceleration_at(sw);
        let rvec = &image - &c;
        let f = rvec.dot(&vel);
        let df = rvec.dot(&acc) - vel.dot(&vel);
        if df.abs() < 1e-300 {
            break;
        }
        let step = f / df;
        s -= step;
        if step.abs() < 1e-14 * (1.0 + total) {
            break;
        }
    }
    let sw = s0 + (s - s0).rem_euclid(total);
    let gap = (curve.position_at(sw) - &image).norm();
    if gap > tol {
        return Err(GeonetError::Input(format!(
            "point is {gap:.3e} away from the curve (tol {tol:.1e})"
        )));
    }
    Ok(sw)
}

/// The full Case-2 pipeline. `v` must be a transversal intersection point of
/// the two closed geodesics; `chart_radius` (when given) is the physical
/// radius of the rescaled chart, otherwise a conservative default below the
/// injectivity bound is used.
pub fn build_figure_eight(
    metric: &MetricField,
    alpha: &DiscretizedCurve,
    beta: &DiscretizedCurve,
    v: &ChartPoint,
    t: f64,
    k: usize,
    chart_radius: Option<f64>,
    opts: &BuildOptions,
) -> Result<FigureEightBuild> {
    let started = Instant::now();
    let stage = |e: GeonetError, s: &'static str| e.in_stage(s);

    if metric.dim() < 3 {
        return Err(GeonetError::Precondition(
            "the figure-eight construction needs dimension n >= 3 (a third direction for the tilt)"
                .into(),
        )
        .in_stage("input-validation"));
    }
    if !(t > 0.0) {
        return Err(
            GeonetError::Input("tilt t must be positive".into()).in_stage("input-validation")
        );
    }
    for (name, c) in [("alpha", alpha), ("beta", beta)] {
        let resid = crate::fermi::geodesic_residual_sup(metric, c)
            .map_err(|e| stage(e, "input-validation"))?;
        if resid > opts.input_residual_tol {
            return Err(GeonetError::Precondition(format!(
                "input {name} has geodesic residual {resid:.3e} (tol {:.1e})",
                opts.input_residual_tol
            ))
            .in_stage("input-validation"));
        }
    }
    let alpha_len = alpha.length(metric).map_err(|e| stage(e, "input-validation"))?;
    let beta_len = beta.length(metric).map_err(|e| stage(e, "input-validation"))?;
    let n_alpha = (alpha_len * opts.samples_per_unit as f64).ceil() as usize;
    let n_beta = (beta_len * opts.samples_per_unit as f64).ceil() as usize;
    let alpha = alpha
        .reparametrize_by_arclength(metric, n_alpha)
        .map_err(|e| stage(e, "input-validation"))?;
    let beta = beta
        .reparametrize_by_arclength(metric, n_beta)
        .map_err(|e| stage(e, "input-validation"))?;

    // Locate v on both curves and check transversality.
    let s_av = locate_on_curve(metric, &alpha, v, 1e-8).map_err(|e| stage(e, "intersection"))?;
    let s_bv = locate_on_curve(metric, &beta, v, 1e-8).map_err(|e| stage(e, "intersection"))?;
    let g_v = metric.eval(v).map_err(|e| stage(e, "intersection"))?;
    let unit = |w: &DVector<f64>| -> DVector<f64> {
        let n = ((w.transpose() * &g_v * w)[(0, 0)]).sqrt();
        w / n
    };
    let ta = unit(&alpha.velocity_at(s_av));
    let tb = unit(&beta.velocity_at(s_bv));
    let cos_angle = ((ta.transpose() * &g_v * &tb)[(0, 0)]).clamp(-1.0, 1.0);
    let sin_angle = (1.0 - cos_angle * cos_angle).max(0.0).sqrt();
    if sin_angle < 1e-3 {
        return Err(GeonetError::Degeneracy(format!(
            "intersection is tangential: |sin angle| = {sin_angle:.3e} < 1e-3"
        ))
        .in_stage("intersection"));
    }

    // Orthonormal frame at v: u1 = α̇, u2 from β̇, then the least-aligned
    // coordinate axes.
    let n = metric.dim();
    let mut frame_cols: Vec<DVector<f64>> = vec![ta.clone()];
    {
        let mut u2 = &tb - &ta * ((ta.transpose() * &g_v * &tb)[(0, 0)]);
        let norm = ((u2.transpose() * &g_v * &u2)[(0, 0)]).sqrt();
        u2 /= norm;
        frame_cols.push(u2);
    }
    let mut axes: Vec<usize> = (0..n).collect();
    let align = |i: usize, cols: &[DVector<f64>]| -> f64 {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        cols.iter()
            .map(|c| ((e.transpose() * &g_v * c)[(0, 0)]).abs())
            .fold(0.0, f64::max)
    };
    axes.sort_by(|&a, &b| {
        align(a, &frame_cols)
            .partial_cmp(&align(b, &frame_cols))
            .unwrap()
    });
    for &ax in &axes {
        if frame_cols.len() == n {
            break;
        }
        let mut e = DVector::zeros(n);
        e[ax] = 1.0;
        for c in &frame_cols {
            let proj = (c.transpose() * &g_v * &e)[(0, 0)];
            e -= c * proj;
        }
        let norm = ((e.transpose() * &g_v * &e)[(0, 0)]).sqrt();
        if norm > 1e-8 {
            frame_cols.push(e / norm);
        }
    }
    if frame_cols.len() < n {
        return Err(GeonetError::Geometry("frame completion failed at v".into())
            .in_stage("intersection"));
    }
    let mut rotation = DMatrix::zeros(n, n);
    for (j, c) in frame_cols.iter().enumerate() {
        rotation.set_column(j, c);
    }
    let u3: DVector<f64> = rotation.column(2).into();

    // Chart radius: footprints 2r/3 on each side must stay well inside the
    // loops; default keeps them below 35% of the shorter loop.
    let r = chart_radius.unwrap_or_else(|| {
        (0.9 * metric.injectivity_radius_bound()).min(0.35 * alpha_len.min(beta_len))
    });
    if r >= metric.injectivity_radius_bound() {
        return Err(GeonetError::Precondition(format!(
            "chart radius {r} must stay below the injectivity bound {}",
            metric.injectivity_radius_bound()
        ))
        .in_stage("rescaled-chart"));
    }
    let half_span = r / 3.0;
    let conn_span = r / 3.0;

    // Tilted velocities (physical chart components; u3 is g-unit at v).
    let omega_plus = &ta + &u3 * t;
    let omega_minus = -&ta + &u3 * t;
    let tau_plus = &tb - &u3 * t;
    let tau_minus = -&tb - &u3 * t;
    let raw_sum = &omega_plus + &omega_minus + &tau_plus + &tau_minus;
    let raw_velocity_cancellation = raw_sum.norm();
    let speed = (1.0 + t * t).sqrt();
    let balance_pre = {
        let s = (&omega_plus + &omega_minus + &tau_plus + &tau_minus) / speed;
        ((s.transpose() * &g_v * &s)[(0, 0)]).max(0.0).sqrt()
    };

    // Center loops at v and build the tilted modified loops.
    let (alpha_c, s_a) =
        center_closed_at(&alpha, s_av, n_alpha).map_err(|e| stage(e, "alpha-side"))?;
    let (beta_c, s_b) =
        center_closed_at(&beta, s_bv, n_beta).map_err(|e| stage(e, "beta-side"))?;
    let span = 0.9 * r; // integration span comfortably past the footprint
    let sigma_plus = integrate_geodesic(metric, v, &omega_plus, span, opts.integration)
        .map_err(|e| stage(e, "alpha-side"))?;
    let sigma_minus = integrate_geodesic(metric, v, &omega_minus, span, opts.integration)
        .map_err(|e| stage(e, "alpha-side"))?;
    let eta_plus = integrate_geodesic(metric, v, &tau_plus, span, opts.integration)
        .map_err(|e| stage(e, "beta-side"))?;
    let eta_minus = integrate_geodesic(metric, v, &tau_minus, span, opts.integration)
        .map_err(|e| stage(e, "beta-side"))?;

    let graph_radius =
        (4.0 * t * r + 0.1 * r).min(0.49 * metric.injectivity_radius_bound());
    // Separation d of the connector-carrying arcs decides the tube radius.
    let arcs = |c: &DiscretizedCurve, s_at: f64| -> Result<Vec<DiscretizedCurve>> {
        let mut out = Vec::new();
        for (lo, hi) in [
            (s_at + half_span, s_at + half_span + conn_span),
            (s_at - half_span - conn_span, s_at - half_span),
        ] {
            out.push(extract_subcurve(c, lo, hi)?);
        }
        Ok(out)
    };
    let alpha_arcs = arcs(&alpha_c, s_a).map_err(|e| stage(e, "separation"))?;
    let beta_arcs = arcs(&beta_c, s_b).map_err(|e| stage(e, "separation"))?;
    let mut separation = f64::INFINITY;
    for pa in &alpha_arcs {
        for pb in &beta_arcs {
            separation = separation.min(min_polyline_separation(metric, pa, pb));
        }
    }
    if !(separation > 0.0) {
        return Err(GeonetError::Separation(format!(
            "connector arcs are not separated (d = {separation:.3e})"
        ))
        .in_stage("separation"));
    }
    let cutoff = separation / 4.0;
    let loop_tube_radius = (separation / 3.0).min(0.49 * metric.injectivity_radius_bound());

    let alpha_side = modified_loop(
        metric,
        &alpha_c,
        s_a,
        v.clone(),
        &sigma_plus,
        &sigma_minus,
        omega_plus.clone(),
        omega_minus.clone(),
        half_span,
        conn_span,
        graph_radius,
        loop_tube_radius,
        k,
        opts,
    )
    .map_err(|e| stage(e, "alpha-side"))?;
    let beta_side = modified_loop(
        metric,
        &beta_c,
        s_b,
        v.clone(),
        &eta_plus,
        &eta_minus,
        tau_plus.clone(),
        tau_minus.clone(),
        half_span,
        conn_span,
        graph_radius,
        loop_tube_radius,
        k,
        opts,
    )
    .map_err(|e| stage(e, "beta-side"))?;

    // Disjointly supported conformal factors with the d/4 cutoff.
    let mut stack = ConformalStack::new(metric.clone());
    stack.declared_disjoint = true;
    let f_a = curvature_kill_factor(
        metric,
        &alpha_side.loop_curve,
        &alpha_side.loop_tube,
        cutoff,
        k + 2,
        Some(&alpha_side.support_hint),
    )
    .map_err(|e| stage(e, "conformal"))?;
    let f_b = curvature_kill_factor(
        metric,
        &beta_side.loop_curve,
        &beta_side.loop_tube,
        cutoff,
        k + 2,
        Some(&beta_side.support_hint),
    )
    .map_err(|e| stage(e, "conformal"))?;
    let f_ck_norm = f_a
        .ck_norm_fermi(k, 96, 9)
        .map_err(|e| stage(e, "conformal"))?
        .max(
            f_b.ck_norm_fermi(k, 96, 9)
                .map_err(|e| stage(e, "conformal"))?,
        );
    stack.push(f_a);
    stack.push(f_b);
    let support_separation = stack
        .support_separation(0, 1)
        .map_err(|e| stage(e, "conformal"))?;
    let gstar = apply_conformal(&stack).map_err(|e| stage(e, "conformal"))?;

    let field = stack.sum_field();
    let check_a = conformal_geodesic_curvature(
        metric,
        field.clone(),
        &alpha_side.loop_curve,
        opts.route_agreement_tol,
    )
    .map_err(|e| stage(e, "conformal"))?;
    let check_b = conformal_geodesic_curvature(
        metric,
        field,
        &beta_side.loop_curve,
        opts.route_agreement_tol,
    )
    .map_err(|e| stage(e, "conformal"))?;

    // Net: one vertex, two unit-multiplicity loops.
    let graph = WeightedMultigraph::new(
        vec![VertexId(0)],
        vec![
            EdgeSpec {
                id: EdgeId(0),
                endpoints: [VertexId(0), VertexId(0)],
                multiplicity: 1,
            },
            EdgeSpec {
                id: EdgeId(1),
                endpoints: [VertexId(0), VertexId(0)],
                multiplicity: 1,
            },
        ],
    )
    .map_err(|e| stage(e, "net-assembly"))?;
    let mut positions = BTreeMap::new();
    positions.insert(VertexId(0), v.clone());
    let mut curves = BTreeMap::new();
    curves.insert(EdgeId(0), alpha_side.loop_curve.clone());
    curves.insert(EdgeId(1), beta_side.loop_curve.clone());
    let net = GammaNet::new(graph, positions, curves).map_err(|e| stage(e, "net-assembly"))?;
    net.validate(&gstar, 1e-9)
        .map_err(|e| stage(e, "net-assembly"))?;

    let stationarity =
        is_stationary_with(&gstar, &net, opts.stationarity_tol, ReportOptions::default())
            .map_err(|e| stage(e, "verification"))?;
    let vertex_defect_sup = stationarity.max_vertex_defect;

    let (g_ck_distance, g_grid, g_grid_spacing) =
        match crate::conformal::stack_support_region(&stack, 8)
            .map_err(|e| stage(e, "conformal"))?
        {
            Some(region) => {
                let dist = metric_ck_distance(metric, &gstar, k, &region)
                    .map_err(|e| stage(e, "conformal"))?;
                (
                    Some(dist),
                    Some(region.shape.clone()),
                    Some(region.spacing.clone()),
                )
            }
            None => (None, None, None),
        };

    let u_ck2 = alpha_side
        .connectors
        .iter()
        .chain(beta_side.connectors.iter())
        .map(|c| c.ck2_norm)
        .fold(0.0f64, f64::max);
    let report = FigureEightReport {
        t,
        chart_radius: r,
        intersection_angle: cos_angle.acos(),
        raw_velocity_cancellation,
        vertex_balance_pre: balance_pre,
        separation,
        support_separation,
        connector_matching: alpha_side
            .connectors
            .iter()
            .chain(beta_side.connectors.iter())
            .map(|c| c.matching.clone())
            .collect(),
        u_ck2_norm: u_ck2,
        h_ck2_norm: alpha_side.h_ck2_norm.max(beta_side.h_ck2_norm),
        k_ck_norm: alpha_side.k_ck_norm.max(beta_side.k_ck_norm),
        f_ck_norm,
        g_ck_distance,
        kill_residual_direct: check_a.sup_direct.max(check_b.sup_direct),
        kill_residual_formula: check_a.sup_formula.max(check_b.sup_formula),
        route_agreement: check_a.max_disagreement.max(check_b.max_disagreement),
        stationarity,
        vertex_defect_sup,
        runtime_seconds: started.elapsed().as_secs_f64(),
        loop_samples: alpha_side.loop_curve.sample_count(),
        f_grid: (96, 9),
        g_grid,
        g_grid_spacing,
    };

    let plan = FigureEightPlan {
        v: v.clone(),
        chart_radius: r,
        rotation,
        t,
        omega_plus,
        omega_minus,
        tau_plus,
        tau_minus,
        separation,
        alpha_side,
        beta_side,
        k,
    };
    Ok(FigureEightBuild {
        plan,
        stack,
        perturbed_metric: gstar,
        net,
        report,
    })
}

/// Extract a single-chart subcurve on a (possibly wrapping) parameter window
/// of a closed curve.
fn extract_subcurve(curve: &DiscretizedCurve, lo: f64, hi: f64) -> Result<DiscretizedCurve> {
    let chart = curve.require_single_chart()?;
    let (s0, s1) = curve.param_span();
    let total = s1 - s0;
    let shift = &curve.points()[curve.sample_count() - 1] - &curve.points()[0];
    let n = ((hi - lo) / (curve.params()[1] - curve.params()[0])).ceil() as usize + 2;
    let params: Vec<f64> = (0..=n)
        .map(|i| lo + (hi - lo) * i as f64 / n as f64)
        .collect();
    let mut points = Vec::with_capacity(n + 1);
    let mut velocities = Vec::with_capacity(n + 1);
    for &s in &params {
        let mut wraps = 0i32;
        let mut sw = s;
        while sw < s0 {
            sw += total;
            wraps -= 1;
        }
        while sw > s1 {
            sw -= total;
            wraps += 1;
        }
        points.push(curve.position_at(sw) + &shift * wraps as f64);
        velocities.push(curve.velocity_at(sw));
    }
    DiscretizedCurve::new(
        params,
        vec![chart; n + 1],
        points,
        Some(velocities),
        false,
    )
}
