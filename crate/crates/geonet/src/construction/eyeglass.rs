//! Case 1: the eyeglass net from two disjoint closed geodesics.
//!
//! Both junctions are mirrored: the full pipeline runs at `a` with the bridge
//! oriented away from it, and again at `b` with the bridge reversed. The
//! bridge edge is re-solved as a geodesic of the perturbed metric before the
//! final stationarity check (the original bridge passes through the
//! conformal tubes, so the edge-geodesic condition is verified rather than
//! assumed).

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;

use crate::conformal::{
    apply_conformal, conformal_geodesic_curvature, curvature_kill_factor, metric_ck_distance,
    ConformalStack, RegionGrid,
};
use crate::curve::DiscretizedCurve;
use crate::error::{GeonetError, Result};
use crate::fermi::{fermi_tube, FermiOptions, FermiTube};
use crate::geodesic::geodesic_bvp;
use crate::metric::{ChartPoint, MetricField};
use crate::net::{
    is_stationary_with, EdgeId, EdgeSpec, GammaNet, ReportOptions, StationarityReport, VertexId,
    WeightedMultigraph,
};

use super::{
    assemble_offset_loop, branch_geodesics, choose_rational_tilt, graph_over_curve,
    junction_geometry, taylor_cutoff_connector, BuildOptions, Connector, ConnectorMatching,
    GraphOffsets, OffsetPiece, RationalTilt,
};

/// One corner vertex with its modified loop (shared by both cases).
pub struct ModifiedLoop {
    pub vertex: ChartPoint,
    pub w_plus: DVector<f64>,
    pub w_minus: DVector<f64>,
    /// The modified loop (closed; corner at the parameter seam).
    pub loop_curve: DiscretizedCurve,
    pub corner_angle: f64,
    pub connectors: Vec<Connector>,
    pub h_ck2_norm: f64,
    /// ‖k_loop‖_{C^k} of the loop's curvature profile.
    pub k_ck_norm: f64,
    pub loop_tube: FermiTube,
    pub h_minus: GraphOffsets,
    pub h_plus: GraphOffsets,
    /// Arclength windows of the assembled loop that carry curvature (the
    /// connector spans, padded); everything else is geodesic.
    pub support_hint: Vec<(f64, f64)>,
}

/// Build a modified loop: represent the two corner geodesics as graphs over
/// the base on `[s_at - half_span, s_at + half_span]`, attach Taylor-cutoff
/// connectors of length `conn_span`, splice the far arc, and stamp the exact
/// corner velocities.
#[allow(clippy::too_many_arguments)]
pub(crate) fn modified_loop(
    metric: &MetricField,
    base_loop: &DiscretizedCurve,
    s_at: f64,
    vertex: ChartPoint,
    gamma_plus: &DiscretizedCurve,
    gamma_minus: &DiscretizedCurve,
    w_plus: DVector<f64>,
    w_minus: DVector<f64>,
    half_span: f64,
    conn_span: f64,
    graph_radius: f64,
    loop_tube_radius: f64,
    k: usize,
    opts: &BuildOptions,
) -> Result<ModifiedLoop> {
    let tube = fermi_tube(metric, base_loop, graph_radius, FermiOptions::default())?;
    let window_samples = (half_span * opts.samples_per_unit as f64).ceil() as usize + 2;
    let h_minus = graph_over_curve(
        metric,
        gamma_minus,
        &tube,
        s_at - half_span,
        s_at,
        window_samples,
        k + 2,
    )?;
    let h_plus = graph_over_curve(
        metric,
        gamma_plus,
        &tube,
        s_at,
        s_at + half_span,
        window_samples,
        k + 2,
    )?;
    let conn_minus = taylor_cutoff_connector(
        &h_minus,
        s_at - half_span,
        s_at - half_span - conn_span,
        k,
        opts.connector_match_tol,
    )?;
    let conn_plus = taylor_cutoff_connector(
        &h_plus,
        s_at + half_span,
        s_at + half_span + conn_span,
        k,
        opts.connector_match_tol,
    )?;
    let (b0, b1) = base_loop.param_span();
    let total = b1 - b0;
    let pieces = vec![
        OffsetPiece::Graph {
            lo: 0.0,
            hi: half_span,
            graph: h_plus.clone(),
            seam: s_at,
            wrap: total,
        },
        OffsetPiece::Connector {
            lo: half_span,
            hi: half_span + conn_span,
            conn: conn_plus.clone(),
            seam: s_at,
            wrap: total,
        },
        OffsetPiece::Connector {
            lo: total - half_span - conn_span,
            hi: total - half_span,
            conn: conn_minus.clone(),
            seam: s_at,
            wrap: total,
        },
        OffsetPiece::Graph {
            lo: total - half_span,
            hi: total,
            graph: h_minus.clone(),
            seam: s_at,
            wrap: total,
        },
    ];
    let loop_samples = (total * opts.samples_per_unit as f64).ceil() as usize;
    let loop_curve = assemble_offset_loop(
        metric,
        base_loop,
        &tube,
        s_at,
        &pieces,
        Some(w_plus.clone()),
        Some(-&w_minus),
        loop_samples,
        1e-8,
    )?;

    // Corner angle between the two inward branch tangents.
    let g_at = metric.eval(&vertex)?;
    let dot = (w_plus.transpose() * &g_at * &w_minus)[(0, 0)];
    let na = metric.norm(&vertex, &w_plus)?;
    let nb = metric.norm(&vertex, &w_minus)?;
    let corner_angle = (dot / (na * nb)).clamp(-1.0, 1.0).acos();

    let loop_tube = fermi_tube(metric, &loop_curve, loop_tube_radius, FermiOptions::default())?;
    let profile = crate::fermi::geodesic_curvature(metric, &loop_curve, &loop_tube)?;
    let k_ck_norm = profile.ck_norm(k)?;
    let h_ck2_norm = h_minus.ck_norm(k + 2)?.max(h_plus.ck_norm(k + 2)?);
    // Curvature lives on the connector spans only (branches and the far arc
    // are geodesics). On flat backends it is further confined to the active
    // ramp of ψ: the plateau piece is the exact polynomial continuation of a
    // straight branch, hence itself straight. Window edges must clear (a) the
    // arclength-reparametrization shift (the loop is longer than the base)
    // and (b) the spline-smoothing zone around the ramp kinks, where the
    // measured profile carries the contamination that the kill factor must
    // keep to cancel it.
    let (_, loop_len) = loop_curve.param_span();
    let (b0c, b1c) = base_loop.param_span();
    let spacing = 1.0 / opts.samples_per_unit as f64;
    let margin = ((loop_len - (b1c - b0c)).max(0.0) + 2.0 * spacing).max(12.0 * spacing);
    let (inner, outer) = if metric.is_flat() {
        (conn_plus.psi.plateau, conn_plus.psi.cut)
    } else {
        (0.0, conn_span)
    };
    let lo1 = (half_span + inner - margin).max(8.0 * spacing);
    let hi1 = half_span + outer + margin;
    let support_hint = vec![
        (lo1, hi1),
        (loop_len - hi1, loop_len - lo1),
    ];
    Ok(ModifiedLoop {
        vertex,
        w_plus,
        w_minus,
        loop_curve,
        corner_angle,
        connectors: vec![conn_minus, conn_plus],
        h_ck2_norm,
        k_ck_norm,
        loop_tube,
        h_minus,
        h_plus,
        support_hint,
    })
}

/// One eyeglass junction side: the tilted vertex plus its modified loop and
/// the measured balance identity.
pub struct JunctionSide {
    pub modified: ModifiedLoop,
    /// `|Σ inward tangents + λ ρ̇|_g` at the tilted vertex.
    pub balance_error: f64,
    pub speed_error: f64,
}

#[allow(clippy::too_many_arguments)]
fn junction_side(
    metric: &MetricField,
    base_loop: &DiscretizedCurve,
    s_at: f64,
    rho: &DiscretizedCurve,
    tilt: &RationalTilt,
    r: f64,
    k: usize,
    opts: &BuildOptions,
) -> Result<JunctionSide> {
    let at_point = ChartPoint::new(base_loop.chart_ids()[0], base_loop.position_at(s_at));
    let v_raw = base_loop.velocity_at(s_at);
    let v_unit = &v_raw / metric.norm(&at_point, &v_raw)?;
    let branches = branch_geodesics(metric, rho, &v_unit, tilt.t, r, opts)?;
    let graph_radius = (3.0 * tilt.t + 0.05 * r)
        .max(0.3 * r)
        .min(0.49 * metric.injectivity_radius_bound());
    let loop_tube_radius = (r / 2.5).min(0.49 * metric.injectivity_radius_bound());
    let conn_span = opts.connector_span.unwrap_or(r / 2.0);
    let (b0, b1) = base_loop.param_span();
    if 2.0 * (r / 2.0 + conn_span) >= (b1 - b0) * 0.95 {
        return Err(GeonetError::Precondition(format!(
            "modified arc 2(r/2 + {conn_span}) does not fit the loop of length {}",
            b1 - b0
        )));
    }
    let modified = modified_loop(
        metric,
        base_loop,
        s_at,
        branches.a_t.clone(),
        &branches.gamma_plus,
        &branches.gamma_minus,
        branches.w_plus.clone(),
        branches.w_minus.clone(),
        r / 2.0,
        conn_span,
        graph_radius,
        loop_tube_radius,
        k,
        opts,
    )?;
    Ok(JunctionSide {
        modified,
        balance_error: branches.balance_error,
        speed_error: branches.speed_error,
    })
}

pub struct EyeglassPlan {
    pub a: ChartPoint,
    pub b: ChartPoint,
    pub r: f64,
    /// Bridge geodesic of the base metric, arclength-parametrized a → b.
    pub rho: DiscretizedCurve,
    pub tilt: RationalTilt,
    pub orthogonality_residuals: (f64, f64),
    /// Seam-relative knots s0..s4: branch half-spans at ±r/2, connector spans
    /// of r/2 beyond.
    pub knots: [f64; 5],
    pub a_side: JunctionSide,
    pub b_side: JunctionSide,
    pub k: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EyeglassReport {
    pub r: f64,
    pub t_target: f64,
    pub t: f64,
    pub lambda: f64,
    pub multiplicity_m: u32,
    pub multiplicity_n: u32,
    pub orthogonality_residuals: (f64, f64),
    pub junction_balance_error_a: f64,
    pub junction_balance_error_b: f64,
    pub branch_speed_error: f64,
    pub corner_angle_a: f64,
    pub corner_angle_expected: f64,
    pub connector_matching: Vec<Vec<ConnectorMatching>>,
    pub u_ck2_norm: f64,
    pub h_ck2_norm: f64,
    pub k_ck_norm: f64,
    pub f_ck_norm: f64,
    pub g_ck_distance: Option<f64>,
    pub kill_residual_direct: f64,
    pub kill_residual_formula: f64,
    pub route_agreement: f64,
    pub support_separation: f64,
    pub bridge_endpoint_error: f64,
    pub bridge_length: f64,
    pub stationarity: StationarityReport,
    pub vertex_defect_sup: f64,
    pub runtime_seconds: f64,
    pub loop_samples: usize,
    pub f_grid: (usize, usize),
    pub g_grid: Option<Vec<usize>>,
    pub g_grid_spacing: Option<Vec<f64>>,
}

pub struct EyeglassBuild {
    pub plan: EyeglassPlan,
    pub stack: ConformalStack,
    pub perturbed_metric: MetricField,
    pub net: GammaNet,
    pub report: EyeglassReport,
}

impl EyeglassBuild {
    /// Error out unless the final verification passed.
    pub fn verified(&self) -> Result<()> {
        let st = &self.report.stationarity;
        if !st.stationary || !st.embedded || !st.essential {
            return Err(GeonetError::Verification(format!(
                "eyeglass verification failed: stationary={} (residual {:.3e}, defect {:.3e}), embedded={}, essential={}",
                st.stationary, st.max_edge_residual, st.max_vertex_defect, st.embedded, st.essential
            )));
        }
        Ok(())
    }
}

/// Rotate the parametrization of a closed curve so `at_param` lands at the
/// parameter midpoint (keeps construction windows away from the seam).
pub(crate) fn center_closed_at(
    curve: &DiscretizedCurve,
    at_param: f64,
    samples: usize,
) -> Result<(DiscretizedCurve, f64)> {
    let chart = curve.require_single_chart()?;
    let (s0, s1) = curve.param_span();
    let total = s1 - s0;
    let origin = at_param - total / 2.0;
    // Lattice translation of one full traversal of the closed lift.
    let shift = &curve.points()[curve.sample_count() - 1] - &curve.points()[0];
    let eval = |s: f64| -> (DVector<f64>, DVector<f64>) {
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
        let p = curve.position_at(sw) + &shift * wraps as f64;
        (p, curve.velocity_at(sw))
    };
    let params: Vec<f64> = (0..=samples)
        .map(|i| total * i as f64 / samples as f64)
        .collect();
    let mut points = Vec::with_capacity(samples + 1);
    let mut velocities = Vec::with_capacity(samples + 1);
    for &p in &params {
        let (x, v) = eval(origin + p);
        points.push(x);
        velocities.push(v);
    }
    let rotated = DiscretizedCurve::new(
        params,
        vec![chart; samples + 1],
        points,
        Some(velocities),
        true,
    )?;
    Ok((rotated, total / 2.0))
}

/// Assemble the eyeglass loop from precomputed graph offsets and connectors
/// (the untilted limit and curvature-localization tests drive this
/// directly).
#[allow(clippy::too_many_arguments)]
pub fn assemble_eyeglass_loop(
    metric: &MetricField,
    base_loop: &DiscretizedCurve,
    tube: &FermiTube,
    s_at: f64,
    half_span: f64,
    conn_span: f64,
    h_minus: &GraphOffsets,
    h_plus: &GraphOffsets,
    conn_minus: &Connector,
    conn_plus: &Connector,
    end_velocity_start: Option<DVector<f64>>,
    end_velocity_end: Option<DVector<f64>>,
    samples: usize,
) -> Result<DiscretizedCurve> {
    let (b0, b1) = base_loop.param_span();
    let total = b1 - b0;
    let pieces = vec![
        OffsetPiece::Graph {
            lo: 0.0,
            hi: half_span,
            graph: h_plus.clone(),
            seam: s_at,
            wrap: total,
        },
        OffsetPiece::Connector {
            lo: half_span,
            hi: half_span + conn_span,
            conn: conn_plus.clone(),
            seam: s_at,
            wrap: total,
        },
        OffsetPiece::Connector {
            lo: total - half_span - conn_span,
            hi: total - half_span,
            conn: conn_minus.clone(),
            seam: s_at,
            wrap: total,
        },
        OffsetPiece::Graph {
            lo: total - half_span,
            hi: total,
            graph: h_minus.clone(),
            seam: s_at,
            wrap: total,
        },
    ];
    assemble_offset_loop(
        metric,
        base_loop,
        tube,
        s_at,
        &pieces,
        end_velocity_start,
        end_velocity_end,
        samples,
        1e-8,
    )
}

/// The full Case-1 pipeline: junction geometry, rational tilt, both mirrored
/// junction sides, conformal factors, the perturbed metric, the re-solved
/// bridge, and the verified net `m α_t ∪ n ρ|_{b_t→a_t} ∪ m β_t`.
pub fn build_eyeglass(
    metric: &MetricField,
    alpha: &DiscretizedCurve,
    beta: &DiscretizedCurve,
    target_t: f64,
    k: usize,
    opts: &BuildOptions,
) -> Result<EyeglassBuild> {
    let started = Instant::now();
    let stage = |e: GeonetError, s: &'static str| e.in_stage(s);

    // Inputs must be closed geodesics.
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

    // Junction geometry.
    let junction =
        junction_geometry(metric, &alpha, &beta, opts).map_err(|e| stage(e, "junction"))?;
    let d = junction.distance;
    let r = d.r;
    let rho = d
        .rho
        .reparametrize_by_arclength(metric, ((r * opts.samples_per_unit as f64).ceil() as usize).max(64))
        .map_err(|e| stage(e, "junction"))?;

    // Rational tilt.
    let tilt =
        choose_rational_tilt(r, target_t, opts.m_max).map_err(|e| stage(e, "rational-tilt"))?;
    if tilt.t >= r / 2.0 {
        return Err(GeonetError::Precondition(format!(
            "tilt t = {} leaves no bridge (needs t < r/2 = {})",
            tilt.t,
            r / 2.0
        ))
        .in_stage("rational-tilt"));
    }

    // Center the loops' parametrizations on their junction points.
    let (alpha_c, s_a) =
        center_closed_at(&alpha, d.s_alpha, n_alpha).map_err(|e| stage(e, "junction"))?;
    let (beta_c, s_b) =
        center_closed_at(&beta, d.s_beta, n_beta).map_err(|e| stage(e, "junction"))?;

    // Both junction sides (the b side sees the bridge reversed).
    let a_side = junction_side(metric, &alpha_c, s_a, &rho, &tilt, r, k, opts)
        .map_err(|e| stage(e, "a-side"))?;
    let rho_rev = rho
        .reversed()
        .reparametrize_by_arclength(metric, rho.sample_count() - 1)
        .map_err(|e| stage(e, "b-side"))?;
    let b_side = junction_side(metric, &beta_c, s_b, &rho_rev, &tilt, r, k, opts)
        .map_err(|e| stage(e, "b-side"))?;

    // Conformal factors with the paper's r/4 cutoff.
    let cutoff = (r / 4.0)
        .min(a_side.modified.loop_tube.radius())
        .min(b_side.modified.loop_tube.radius());
    let mut stack = ConformalStack::new(metric.clone());
    stack.declared_disjoint = true;
    let f_a = curvature_kill_factor(
        metric,
        &a_side.modified.loop_curve,
        &a_side.modified.loop_tube,
        cutoff,
        k + 2,
        Some(&a_side.modified.support_hint),
    )
    .map_err(|e| stage(e, "conformal"))?;
    let f_b = curvature_kill_factor(
        metric,
        &b_side.modified.loop_curve,
        &b_side.modified.loop_tube,
        cutoff,
        k + 2,
        Some(&b_side.modified.support_hint),
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

    // Kill identity, both routes, under the full perturbed field.
    let field = stack.sum_field();
    let check_a = conformal_geodesic_curvature(
        metric,
        field.clone(),
        &a_side.modified.loop_curve,
        opts.route_agreement_tol,
    )
    .map_err(|e| stage(e, "conformal"))?;
    let check_b = conformal_geodesic_curvature(
        metric,
        field,
        &b_side.modified.loop_curve,
        opts.route_agreement_tol,
    )
    .map_err(|e| stage(e, "conformal"))?;

    // Re-solve the bridge as a geodesic of g* from b_t to a_t.
    let guess = rho_rev.start_velocity() * (r - 2.0 * tilt.t);
    let bridge = geodesic_bvp(
        &gstar,
        &b_side.modified.vertex,
        &a_side.modified.vertex,
        Some(&guess),
        opts.bvp,
    )
    .map_err(|e| stage(e, "bridge"))?;
    let bridge_endpoint_error = gstar.proxy_distance(&bridge.end(), &a_side.modified.vertex);
    let bridge_length = bridge.length(&gstar).map_err(|e| stage(e, "bridge"))?;

    // Assemble the net.
    let graph = WeightedMultigraph::new(
        vec![VertexId(0), VertexId(1)],
        vec![
            EdgeSpec {
                id: EdgeId(0),
                endpoints: [VertexId(0), VertexId(0)],
                multiplicity: tilt.m,
            },
            EdgeSpec {
                id: EdgeId(1),
                endpoints: [VertexId(1), VertexId(0)],
                multiplicity: tilt.n,
            },
            EdgeSpec {
                id: EdgeId(2),
                endpoints: [VertexId(1), VertexId(1)],
                multiplicity: tilt.m,
            },
        ],
    )
    .map_err(|e| stage(e, "net-assembly"))?;
    let mut positions = BTreeMap::new();
    positions.insert(VertexId(0), a_side.modified.vertex.clone());
    positions.insert(VertexId(1), b_side.modified.vertex.clone());
    let mut curves = BTreeMap::new();
    curves.insert(EdgeId(0), a_side.modified.loop_curve.clone());
    curves.insert(EdgeId(1), bridge);
    curves.insert(EdgeId(2), b_side.modified.loop_curve.clone());
    let net = GammaNet::new(graph, positions, curves).map_err(|e| stage(e, "net-assembly"))?;
    net.validate(&gstar, 1e-9)
        .map_err(|e| stage(e, "net-assembly"))?;

    // Final verification under g*.
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

    let u_ck2 = a_side
        .modified
        .connectors
        .iter()
        .chain(b_side.modified.connectors.iter())
        .map(|c| c.ck2_norm)
        .fold(0.0f64, f64::max);
    let report = EyeglassReport {
        r,
        t_target: target_t,
        t: tilt.t,
        lambda: tilt.lambda,
        multiplicity_m: tilt.m,
        multiplicity_n: tilt.n,
        orthogonality_residuals: d.orthogonality_residuals,
        junction_balance_error_a: a_side.balance_error,
        junction_balance_error_b: b_side.balance_error,
        branch_speed_error: a_side.speed_error.max(b_side.speed_error),
        corner_angle_a: a_side.modified.corner_angle,
        corner_angle_expected: std::f64::consts::PI - 2.0 * (tilt.t / r).atan(),
        connector_matching: a_side
            .modified
            .connectors
            .iter()
            .chain(b_side.modified.connectors.iter())
            .map(|c| c.matching.clone())
            .collect(),
        u_ck2_norm: u_ck2,
        h_ck2_norm: a_side.modified.h_ck2_norm.max(b_side.modified.h_ck2_norm),
        k_ck_norm: a_side.modified.k_ck_norm.max(b_side.modified.k_ck_norm),
        f_ck_norm,
        g_ck_distance,
        kill_residual_direct: check_a.sup_direct.max(check_b.sup_direct),
        kill_residual_formula: check_a.sup_formula.max(check_b.sup_formula),
        route_agreement: check_a.max_disagreement.max(check_b.max_disagreement),
        support_separation,
        bridge_endpoint_error,
        bridge_length,
        stationarity,
        vertex_defect_sup,
        runtime_seconds: started.elapsed().as_secs_f64(),
        loop_samples: a_side.modified.loop_curve.sample_count(),
        f_grid: (96, 9),
        g_grid,
        g_grid_spacing,
    };

    let plan = EyeglassPlan {
        a: d.a,
        b: d.b,
        r,
        rho,
        tilt,
        orthogonality_residuals: d.orthogonality_residuals,
        knots: [-r, -r / 2.0, 0.0, r / 2.0, r],
        a_side,
        b_side,
        k,
    };
    Ok(EyeglassBuild {
        plan,
        stack,
        perturbed_metric: gstar,
        net,
        report,
    })
}

/// Default C^k-distance evaluation region: the fundamental domain of
/// single-chart periodic backends (None elsewhere; the caller supplies one).
pub fn default_region(metric: &MetricField) -> Option<RegionGrid> {
    let periods = metric.backend().periods(0)?;
    if periods.iter().any(|p| !(*p > 0.0)) {
        return None;
    }
    let shape: Vec<usize> = periods.iter().map(|_| 36usize).collect();
    let spacing: Vec<f64> = periods
        .iter()
        .zip(&shape)
        .map(|(p, n)| p / *n as f64)
        .collect();
    Some(RegionGrid {
        chart: 0,
        origin: vec![0.0; periods.len()],
        spacing,
        shape,
    })
}
