//! Closed-geodesic search and stationary-net relaxation/continuation.
//!
//! `find_closed_geodesic` solves the periodic-orbit problem by damped
//! Gauss-Newton on (point, velocity, length); degenerate orbit families
//! (every great circle on a round sphere) are handled by the pseudo-inverse.
//!
//! `relax_net` follows the discrete first variation: per-sample curvature
//! forces on edge interiors and defect forces on free vertices, with the
//! step halved whenever the length fails to decrease, then an optional
//! Newton endgame on the vertex positions with every edge re-solved as a
//! geodesic between its endpoints. `continue_net` runs the same Newton
//! stationarization under a nearby metric, which is the numerical
//! counterpart of continuing a net by the Inverse Function Theorem.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::curve::DiscretizedCurve;
use crate::error::{GeonetError, Result};
use crate::fermi::{curvature_vectors, geodesic_residual_sup};
use crate::geodesic::{integrate_geodesic, BvpOptions, IntegrationParams};
use crate::metric::{ChartPoint, MetricField};
use crate::net::{EdgeId, GammaNet, VertexId};

// ---------------------------------------------------------------------------
// Closed geodesics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ClosedGeodesicOptions {
    pub integration: IntegrationParams,
    /// Periodic-orbit residual target (position + velocity defect).
    pub tol: f64,
    pub max_iterations: usize,
    /// Fraction of the seed length below which the orbit is declared
    /// collapsed.
    pub collapse_fraction: f64,
    /// Samples per unit length of the returned curve.
    pub samples_per_unit: usize,
}

impl Default for ClosedGeodesicOptions {
    fn default() -> Self {
        ClosedGeodesicOptions {
            integration: IntegrationParams::default(),
            tol: 1e-11,
            max_iterations: 60,
            collapse_fraction: 0.05,
            samples_per_unit: 4096,
        }
    }
}

/// Find a closed geodesic near a seed loop by periodic-orbit shooting.
pub fn find_closed_geodesic(
    metric: &MetricField,
    seed_loop: &DiscretizedCurve,
    opts: ClosedGeodesicOptions,
) -> Result<DiscretizedCurve> {
    seed_loop.require_single_chart()?;
    let seed_len = seed_loop.length(metric)?;
    if !(seed_len > 0.0) {
        return Err(GeonetError::Degeneration("seed loop has zero length".into()));
    }
    let collapse_at = opts.collapse_fraction * seed_len;

    let p0 = seed_loop.start();
    let v0_raw = seed_loop.start_velocity();
    let speed0 = metric.norm(&p0, &v0_raw)?;
    // State: (point coords, unit velocity, length).
    let n = metric.dim();
    let mut point = p0.clone();
    let mut vel = v0_raw / speed0;
    let mut length = seed_len;

    let residual = |point: &ChartPoint,
                    vel: &DVector<f64>,
                    length: f64|
     -> Result<(DVector<f64>, DiscretizedCurve)> {
        let curve = integrate_geodesic(metric, point, vel, length, opts.integration)?;
        let end = curve.end();
        let mut end_vel = curve.end_velocity();
        // Express the endpoint state in the start chart.
        let (end_in, jac) = metric.to_chart(&end, point.chart).ok_or_else(|| {
            GeonetError::Integration("orbit endpoint left the start chart region".into())
        })?;
        end_vel = match metric.to_chart(&end, point.chart) {
            Some(_) => &jac * &end_vel,
            None => end_vel,
        };
        let dpos = metric.chart_displacement(point.chart, &point.coords, &end_in.coords);
        let mut r = DVector::zeros(2 * n);
        for i in 0..n {
            r[i] = dpos[i];
            r[n + i] = end_vel[i] - vel[i];
        }
        Ok((r, curve))
    };

    let mut best_curve = None;
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        if length < collapse_at {
            return Err(GeonetError::Degeneration(format!(
                "orbit collapsed: length {length:.3e} below {collapse_at:.3e}"
            )));
        }
        let (r, curve) = residual(&point, &vel, length)?;
        let rnorm = r.norm();
        best_curve = Some(curve);
        if rnorm < opts.tol {
            converged = true;
            break;
        }
        // FD Jacobian over (point, vel, length).
        let mut jac = DMatrix::zeros(2 * n, 2 * n + 1);
        let eps_x = 1e-7 * (1.0 + point.coords.norm());
        let eps_v = 1e-7;
        let eps_l = 1e-7 * (1.0 + length);
        for c in 0..n {
            let mut p2 = point.clone();
            p2.coords[c] += eps_x;
            let (r2, _) = residual(&p2, &vel, length)?;
            for i in 0..2 * n {
                jac[(i, c)] = (r2[i] - r[i]) / eps_x;
            }
        }
        for c in 0..n {
            let mut v2 = vel.clone();
            v2[c] += eps_v;
            let (r2, _) = residual(&point, &v2, length)?;
            for i in 0..2 * n {
                jac[(i, n + c)] = (r2[i] - r[i]) / eps_v;
            }
        }
        {
            let (r2, _) = residual(&point, &vel, length + eps_l)?;
            for i in 0..2 * n {
                jac[(i, 2 * n)] = (r2[i] - r[i]) / eps_l;
            }
        }
        // Damped pseudo-inverse step (the orbit phase direction is null).
        let svd = jac.svd(true, true);
        let delta = svd
            .solve(&(-&r), 1e-9)
            .map_err(|e| GeonetError::Convergence(format!("orbit solve failed: {e}")))?;
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..10 {
            let mut p2 = point.clone();
            for c in 0..n {
                p2.coords[c] += alpha * delta[c];
            }
            let mut v2 = vel.clone();
            for c in 0..n {
                v2[c] += alpha * delta[n + c];
            }
            let l2 = (length + alpha * delta[2 * n]).max(collapse_at * 0.5);
            match residual(&p2, &v2, l2) {
                Ok((r2, _)) if r2.norm() < rnorm => {
                    // Renormalize to unit speed through the exact affine
                    // reparametrization (v, L) -> (v/s, L s), which leaves
                    // the traced geodesic unchanged.
                    let sp = metric.norm(&p2, &v2)?;
                    point = p2;
                    vel = v2 / sp;
                    length = l2 * sp;
                    improved = true;
                    break;
                }
                _ => alpha *= 0.5,
            }
        }
        if !improved {
            break;
        }
    }
    if !converged {
        // One more residual check at the final state.
        let (r, _) = residual(&point, &vel, length)?;
        if r.norm() >= opts.tol {
            return Err(GeonetError::Convergence(format!(
                "periodic orbit stalled at residual {:.3e} (tol {:.1e})",
                r.norm(),
                opts.tol
            )));
        }
    }
    // Final dense pass.
    let fine = IntegrationParams {
        step: (1.0 / opts.samples_per_unit as f64).min(opts.integration.step),
        ..opts.integration
    };
    let curve = integrate_geodesic(metric, &point, &vel, length, fine)?;
    let _ = best_curve;
    let curve = curve.with_closed(true);
    curve.validate(metric, 1e-8)?;
    Ok(curve)
}

// ---------------------------------------------------------------------------
// Newton stationarization (shared by the relaxation endgame and continuation)
// ---------------------------------------------------------------------------

/// Stationarize a net by Newton on the full shooting system: unknowns are
/// one initial velocity per edge plus the free vertex positions; equations
/// are the edge endpoint conditions plus the free-vertex defects. Each
/// residual evaluation costs one geodesic integration per edge, and the
/// finite-difference Jacobian is frozen across iterations (refreshed when a
/// step stalls).
fn newton_stationarize(
    metric: &MetricField,
    net: &GammaNet,
    bvp: BvpOptions,
    defect_tol: f64,
    max_iterations: usize,
) -> Result<(GammaNet, usize, f64)> {
    let n = metric.dim();
    let free: Vec<VertexId> = net
        .graph()
        .vertices()
        .iter()
        .filter(|v| !net.pinned().contains(v))
        .cloned()
        .collect();
    let free_index = |v: VertexId| free.iter().position(|f| *f == v);
    let edges: Vec<_> = net.graph().edges().to_vec();
    let n_edges = edges.len();
    let dim = n * (n_edges + free.len());

    // State: per-edge velocities, then free vertex coordinates. Loop edges
    // warm-start from their stored velocity; ordinary edges from the chord,
    // which is robust against kinked descent-phase curves.
    let mut state = DVector::zeros(dim);
    for (k, e) in edges.iter().enumerate() {
        let c = net.edge_curve(e.id);
        let w = if e.endpoints[0] == e.endpoints[1] {
            let (a, b) = c.param_span();
            c.start_velocity() * (b - a)
        } else {
            let from = net.vertex_position(e.endpoints[0]);
            let to = net.vertex_position(e.endpoints[1]);
            metric.chart_displacement(from.chart, &from.coords, &to.coords)
        };
        for i in 0..n {
            state[k * n + i] = w[i];
        }
    }
    for (k, v) in free.iter().enumerate() {
        let p = net.vertex_position(*v);
        for i in 0..n {
            state[(n_edges + k) * n + i] = p.coords[i];
        }
    }
    let vertex_position = |state: &DVector<f64>, v: VertexId| -> ChartPoint {
        match free_index(v) {
            Some(k) => {
                let base = net.vertex_position(v);
                let mut coords = base.coords.clone();
                for i in 0..n {
                    coords[i] = state[(n_edges + k) * n + i];
                }
                ChartPoint::new(base.chart, coords)
            }
            None => net.vertex_position(v).clone(),
        }
    };

    // Per-edge step counts frozen from the warm start: the discrete flow
    // must be a smooth function of the state for Newton to bottom out. The
    // system is solved on the coarse counts first, then re-solved on an
    // 8x refinement so the converged state is stationary for the honestly
    // discretized flow as well.
    let coarse_steps: Vec<usize> = edges
        .iter()
        .enumerate()
        .map(|(k, _)| {
            let mut wnorm = 0.0;
            for i in 0..n {
                wnorm += state[k * n + i] * state[k * n + i];
            }
            let wnorm = wnorm.sqrt();
            ((wnorm / bvp.integration.step).ceil() as usize).clamp(8, bvp.integration.max_steps)
        })
        .collect();
    let fine_steps: Vec<usize> = coarse_steps.iter().map(|nn| nn * 8).collect();

    // One integration per edge; returns the stacked residual and the curves.
    let residual = |edge_steps: &[usize],
                    state: &DVector<f64>|
     -> Result<(DVector<f64>, Vec<DiscretizedCurve>)> {
        let mut r = DVector::zeros(dim);
        let mut curves = Vec::with_capacity(n_edges);
        // Defect accumulators per free vertex.
        let mut defects: Vec<DVector<f64>> = free.iter().map(|_| DVector::zeros(n)).collect();
        for (k, e) in edges.iter().enumerate() {
            let from = vertex_position(state, e.endpoints[0]);
            let to = vertex_position(state, e.endpoints[1]);
            let mut w = DVector::zeros(n);
            for i in 0..n {
                w[i] = state[k * n + i];
            }
            let curve = integrate_geodesic(
                metric,
                &from,
                &w,
                1.0,
                bvp.integration.with_fixed_steps(edge_steps[k]),
            )?;
            let end = curve.end();
            let (end_in, jac_t) = metric.to_chart(&end, to.chart).ok_or_else(|| {
                GeonetError::Integration("edge endpoint left the target chart region".into())
            })?;
            let gap = metric.chart_displacement(to.chart, &to.coords, &end_in.coords);
            for i in 0..n {
                r[k * n + i] = gap[i];
            }
            // Defect contributions: inward tangents at both ends.
            let mult = e.multiplicity as f64;
            if let Some(ki) = free_index(e.endpoints[0]) {
                let norm = metric.norm(&from, &w)?;
                defects[ki] += &w * (mult / norm);
            }
            if let Some(ki) = free_index(e.endpoints[1]) {
                let mut vin = -(&jac_t * curve.end_velocity());
                let norm = metric.norm(&to, &vin)?;
                vin /= norm;
                defects[ki] += vin * mult;
            }
            curves.push(curve);
        }
        for (k, d) in defects.iter().enumerate() {
            for i in 0..n {
                r[(n_edges + k) * n + i] = d[i];
            }
        }
        Ok((r, curves))
    };

    let mut iterations = 0usize;
    let mut jac: Option<DMatrix<f64>> = None;
    let mut curves;
    let mut r;
    {
        let (r0, c0) = residual(&coarse_steps, &state)?;
        r = r0;
        curves = c0;
    }
    for stage_steps in [&coarse_steps, &fine_steps] {
        // Entering a stage re-evaluates the residual on its discretization
        // (the Jacobian carries over; it differs only at the flow's
        // truncation order).
        let (r0, c0) = residual(stage_steps, &state)?;
        r = r0;
        curves = c0;
        for _ in 0..max_iterations {
            if r.amax() < defect_tol {
                break;
            }
            iterations += 1;
            let mut refreshed = false;
            if jac.is_none() {
                // Central differences: the slope noise floor decides how far
                // the Newton contraction can reach.
                let mut j = DMatrix::zeros(dim, dim);
                for c in 0..dim {
                    let eps = 1e-5 * (1.0 + state[c].abs());
                    let mut sp = state.clone();
                    sp[c] += eps;
                    let mut sm = state.clone();
                    sm[c] -= eps;
                    let (rp, _) = residual(stage_steps, &sp)?;
                    let (rm, _) = residual(stage_steps, &sm)?;
                    for i in 0..dim {
                        j[(i, c)] = (rp[i] - rm[i]) / (2.0 * eps);
                    }
                }
                jac = Some(j);
                refreshed = true;
            }
            let step = solve_damped(jac.as_ref().unwrap(), &r)?;
            let mut alpha = 1.0;
            let mut improved = false;
            for _ in 0..8 {
                let trial = &state + &step * alpha;
                if let Ok((r2, c2)) = residual(stage_steps, &trial) {
                    if r2.norm() < r.norm() {
                        // Poor contraction means the frozen Jacobian is
                        // stale (large moves); refresh it next iteration.
                        if r2.norm() > 0.25 * r.norm() {
                            jac = None;
                        }
                        state = trial;
                        r = r2;
                        curves = c2;
                        improved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !improved {
                if refreshed {
                    break;
                }
                jac = None;
            }
        }
    }
    // Assemble the final net: converged vertex positions plus edges
    // re-integrated at a finer step (the Newton loop's working step is
    // enough for endpoint/defect accuracy, but the curvature estimator needs
    // denser samples to read the residual honestly).
    let _ = curves;
    let mut out = net.clone();
    for v in &free {
        out.set_vertex_position(*v, vertex_position(&state, *v));
    }
    // The spline curvature estimator truncates at O(step^2); the final
    // curves are sampled 4x beyond the solve discretization so residual
    // measurements read the geodesics honestly.
    for (k, e) in edges.iter().enumerate() {
        let from = vertex_position(&state, e.endpoints[0]);
        let mut w = DVector::zeros(n);
        for i in 0..n {
            w[i] = state[k * n + i];
        }
        let is_loop = e.endpoints[0] == e.endpoints[1];
        let curve = integrate_geodesic(
            metric,
            &from,
            &w,
            1.0,
            bvp.integration.with_fixed_steps(fine_steps[k] * 4),
        )?;
        out.set_edge_curve(e.id, curve.with_closed(is_loop));
    }
    // Final defect in metric norm.
    let mut final_defect = 0.0f64;
    for v in &free {
        let d = out.vertex_defect(metric, *v)?;
        final_defect = final_defect.max(metric.norm(out.vertex_position(*v), &d)?);
    }
    Ok((out, iterations, final_defect))
}

fn solve_damped(jac: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    let jt = jac.transpose();
    let mut lhs = &jt * jac;
    let damp = 1e-12 * lhs.diagonal().amax().max(1e-12);
    for d in 0..lhs.nrows() {
        lhs[(d, d)] += damp;
    }
    let rhs = -(&jt * r);
    lhs.lu()
        .solve(&rhs)
        .ok_or_else(|| GeonetError::Convergence("singular stationarity Jacobian".into()))
}

// ---------------------------------------------------------------------------
// relax_net
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct RelaxOptions {
    /// Residual+defect target.
    pub tol: f64,
    /// Explicit-descent iterations before the Newton endgame.
    pub max_iterations: usize,
    /// Working resolution (samples per edge) for the descent phase.
    pub descent_samples: usize,
    pub initial_step: f64,
    /// Switch to the Newton endgame below this defect (0 disables it).
    pub polish_below: f64,
    pub max_polish_iterations: usize,
    /// An edge shrinking below this fraction of its initial length is a
    /// degeneration.
    pub collapse_fraction: f64,
    pub bvp: BvpOptions,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        RelaxOptions {
            tol: 1e-8,
            max_iterations: 400,
            descent_samples: 96,
            initial_step: 1e-3,
            polish_below: 1e-2,
            max_polish_iterations: 40,
            collapse_fraction: 1e-3,
            bvp: BvpOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelaxInfo {
    pub descent_iterations: usize,
    pub polish_iterations: usize,
    /// Net length after every accepted descent iteration (non-increasing).
    pub lengths: Vec<f64>,
    pub final_max_residual: f64,
    pub final_max_defect: f64,
}

fn net_state(metric: &MetricField, net: &GammaNet) -> Result<(f64, f64)> {
    let mut max_res = 0.0f64;
    for e in net.graph().edges() {
        max_res = max_res.max(geodesic_residual_sup(metric, net.edge_curve(e.id))?);
    }
    let mut max_def = 0.0f64;
    for v in net.graph().vertices() {
        if net.pinned().contains(v) {
            continue;
        }
        let d = net.vertex_defect(metric, *v)?;
        max_def = max_def.max(metric.norm(net.vertex_position(*v), &d)?);
    }
    Ok((max_res, max_def))
}

/// Length-descent relaxation with fixed combinatorial type. Returns the
/// relaxed net and the iteration record; the multigraph is never changed.
pub fn relax_net(
    metric: &MetricField,
    net: &GammaNet,
    opts: RelaxOptions,
) -> Result<(GammaNet, RelaxInfo)> {
    let (res0, def0) = net_state(metric, net)?;
    if res0 + def0 < opts.tol {
        return Ok((
            net.clone(),
            RelaxInfo {
                descent_iterations: 0,
                polish_iterations: 0,
                lengths: vec![net.length(metric)?],
                final_max_residual: res0,
                final_max_defect: def0,
            },
        ));
    }

    // Coarse working copy for the descent phase.
    let mut work = net.clone();
    for e in net.graph().edges() {
        let c = net.edge_curve(e.id).resample(opts.descent_samples)?;
        work.set_edge_curve(e.id, c);
    }
    let initial_lengths: BTreeMap<EdgeId, f64> = net
        .graph()
        .edges()
        .iter()
        .map(|e| Ok((e.id, net.edge_curve(e.id).length(metric)?)))
        .collect::<Result<_>>()?;

    let mut lengths = vec![work.length(metric)?];
    let mut step = opts.initial_step;
    let mut descent_iterations = 0usize;
    for _ in 0..opts.max_iterations {
        let (res, def) = net_state(metric, &work)?;
        if res + def < opts.tol || (opts.polish_below > 0.0 && def < opts.polish_below) {
            break;
        }
        descent_iterations += 1;
        let trial = descent_step(metric, &work, step)?;
        // Collapse guard.
        for e in trial.graph().edges() {
            let len = trial.edge_curve(e.id).length(metric)?;
            if len < opts.collapse_fraction * initial_lengths[&e.id] {
                return Err(GeonetError::Degeneration(format!(
                    "edge {:?} collapsed to {len:.3e} during relaxation",
                    e.id
                )));
            }
        }
        let new_len = trial.length(metric)?;
        if new_len <= *lengths.last().unwrap() {
            work = trial;
            lengths.push(new_len);
            step = (step * 1.2).min(opts.initial_step * 10.0);
        } else {
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
    }

    // Newton endgame on the vertices, edges re-solved as geodesics.
    let mut polish_iterations = 0;
    if opts.polish_below > 0.0 {
        let (polished, iters, _) = newton_stationarize(
            metric,
            &work,
            opts.bvp,
            (opts.tol * 0.05).max(1e-12),
            opts.max_polish_iterations,
        )?;
        for e in polished.graph().edges() {
            let len = polished.edge_curve(e.id).length(metric)?;
            if len < opts.collapse_fraction * initial_lengths[&e.id] {
                return Err(GeonetError::Degeneration(format!(
                    "edge {:?} collapsed to {len:.3e} during polish",
                    e.id
                )));
            }
        }
        work = polished;
        polish_iterations = iters;
        lengths.push(work.length(metric)?);
    }
    let (res, def) = net_state(metric, &work)?;
    Ok((
        work,
        RelaxInfo {
            descent_iterations,
            polish_iterations,
            lengths,
            final_max_residual: res,
            final_max_defect: def,
        },
    ))
}

/// One explicit descent step: curvature forces on edge interiors, defect
/// forces on free vertices.
fn descent_step(metric: &MetricField, net: &GammaNet, step: f64) -> Result<GammaNet> {
    let mut out = net.clone();
    // Vertex moves.
    let mut new_positions: BTreeMap<VertexId, ChartPoint> = BTreeMap::new();
    for v in net.graph().vertices() {
        let p = net.vertex_position(*v).clone();
        if net.pinned().contains(v) {
            new_positions.insert(*v, p);
            continue;
        }
        let d = net.vertex_defect(metric, *v)?;
        new_positions.insert(*v, ChartPoint::new(p.chart, &p.coords + &d * step));
    }
    for (v, p) in &new_positions {
        out.set_vertex_position(*v, p.clone());
    }
    // Edge moves: curvature force on the interior plus the endpoint motion
    // tapered linearly along the edge (so re-attachment never kinks it).
    for e in net.graph().edges() {
        let curve = net.edge_curve(e.id);
        let ks = curvature_vectors(metric, curve)?;
        let m = curve.sample_count();
        let chart = curve.chart_ids()[0];
        let end_shift = |end: usize, idx: usize, pts: &[DVector<f64>]| -> DVector<f64> {
            let vnew = &new_positions[&e.endpoints[end]];
            metric.chart_displacement(chart, &pts[idx], &vnew.coords)
        };
        let mut pts = curve.points().to_vec();
        let d0 = end_shift(0, 0, &pts);
        let d1 = end_shift(1, m - 1, &pts);
        for (i, pt) in pts.iter_mut().enumerate() {
            let f = i as f64 / (m - 1) as f64;
            *pt += &d0 * (1.0 - f) + &d1 * f;
            if i > 0 && i < m - 1 {
                *pt += &ks[i] * step;
            }
        }
        let moved = DiscretizedCurve::new(
            curve.params().to_vec(),
            curve.chart_ids().to_vec(),
            pts,
            None,
            curve.is_closed(),
        )?;
        out.set_edge_curve(e.id, moved);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// continue_net
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ContinuationOptions {
    /// Reject continuations that move the net farther than this (max vertex
    /// displacement + max edge sup-distance).
    pub max_displacement: f64,
    pub defect_tol: f64,
    pub max_iterations: usize,
    pub bvp: BvpOptions,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            max_displacement: 0.05,
            defect_tol: 1e-9,
            max_iterations: 16,
            bvp: BvpOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationInfo {
    pub newton_iterations: usize,
    pub final_defect: f64,
    pub max_vertex_displacement: f64,
    pub max_edge_displacement: f64,
    /// displacement = vertex + edge sup distance.
    pub displacement: f64,
}

/// Continue a stationary net to a nearby metric with identical combinatorial
/// type.
pub fn continue_net(
    metric_new: &MetricField,
    net: &GammaNet,
    opts: ContinuationOptions,
) -> Result<(GammaNet, ContinuationInfo)> {
    let (continued, iterations, final_defect) = newton_stationarize(
        metric_new,
        net,
        opts.bvp,
        opts.defect_tol,
        opts.max_iterations,
    )?;
    // Displacement: vertices plus edge sup-distance at matched parameter
    // fractions.
    let mut max_v: f64 = 0.0;
    for v in net.graph().vertices() {
        let before = net.vertex_position(*v);
        let after = continued.vertex_position(*v);
        max_v = max_v.max(metric_new.proxy_distance(before, after));
    }
    let mut max_e: f64 = 0.0;
    for e in net.graph().edges() {
        let before = net.edge_curve(e.id);
        let after = continued.edge_curve(e.id);
        let (a0, a1) = before.param_span();
        let (b0, b1) = after.param_span();
        for i in 0..64 {
            let f = i as f64 / 63.0;
            let pa = ChartPoint::new(
                before.chart_ids()[0],
                before.position_at(a0 + f * (a1 - a0)),
            );
            let pb = ChartPoint::new(
                after.chart_ids()[0],
                after.position_at(b0 + f * (b1 - b0)),
            );
            max_e = max_e.max(metric_new.proxy_distance(&pa, &pb));
        }
    }
    let displacement = max_v + max_e;
    if displacement > opts.max_displacement {
        return Err(GeonetError::Continuation(format!(
            "continued net moved by {displacement:.3e} (bound {:.1e}); left the local basin",
            opts.max_displacement
        )));
    }
    if final_defect > opts.defect_tol {
        return Err(GeonetError::Continuation(format!(
            "continuation stalled at defect {final_defect:.3e} (tol {:.1e})",
            opts.defect_tol
        )));
    }
    Ok((
        continued,
        ContinuationInfo {
            newton_iterations: iterations,
            final_defect,
            max_vertex_displacement: max_v,
            max_edge_displacement: max_e,
            displacement,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{FlatTorus, StereoHypersurface};
    use crate::net::{EdgeSpec, WeightedMultigraph};
    use std::collections::BTreeMap;

    fn flat3() -> MetricField {
        FlatTorus::unit(3).field(None).unwrap()
    }

    #[test]
    fn flat_seed_near_x_circle_recovers_it() {
        let metric = flat3();
        let n = 256;
        let params: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        // Wobbly non-geodesic seed around the x-circle.
        let seed = DiscretizedCurve::from_fn(
            0,
            params,
            |s| {
                DVector::from_column_slice(&[
                    s,
                    0.02 * (std::f64::consts::TAU * s).sin(),
                    -0.01 * (std::f64::consts::TAU * 2.0 * s).sin(),
                ])
            },
            |s| {
                DVector::from_column_slice(&[
                    1.0,
                    0.02 * std::f64::consts::TAU * (std::f64::consts::TAU * s).cos(),
                    -0.02 * std::f64::consts::TAU * (std::f64::consts::TAU * 2.0 * s).cos(),
                ])
            },
            true,
        )
        .unwrap();
        let geo = find_closed_geodesic(&metric, &seed, Default::default()).unwrap();
        let resid = geodesic_residual_sup(&metric, &geo).unwrap();
        assert!(resid < 1e-8, "residual {resid}");
        let len = geo.length(&metric).unwrap();
        assert!((len - 1.0).abs() < 1e-9, "length {len}");
    }

    #[test]
    fn sphere_great_circle_length() {
        let metric = StereoHypersurface::sphere(2, 1.0)
            .field(std::f64::consts::PI)
            .unwrap();
        // Seed: slightly off the chart-0 equator |x| = 1.
        let n = 512;
        let total = std::f64::consts::TAU;
        let params: Vec<f64> = (0..=n).map(|i| total * i as f64 / n as f64).collect();
        let seed = DiscretizedCurve::from_fn(
            0,
            params,
            |s| {
                let rho = 1.0 + 0.03 * (2.0 * s).sin();
                DVector::from_column_slice(&[rho * s.cos(), rho * s.sin()])
            },
            |s| DVector::from_column_slice(&[-s.sin(), s.cos()]),
            true,
        )
        .unwrap();
        let geo = find_closed_geodesic(&metric, &seed, Default::default()).unwrap();
        let len = geo.length(&metric).unwrap();
        assert!(
            (len - std::f64::consts::TAU).abs() < 1e-6,
            "great-circle length {len}"
        );
        let resid = geodesic_residual_sup(&metric, &geo).unwrap();
        assert!(resid < 1e-8, "residual {resid}");
    }

    #[test]
    fn ellipsoid_principal_ellipse_matches_quadrature() {
        let metric = StereoHypersurface::ellipsoid(vec![1.0, 1.1, 1.2])
            .unwrap()
            .field(1.0)
            .unwrap();
        // The z = 0 section is the chart-0 unit circle; perturb the seed.
        let n = 512;
        let total = std::f64::consts::TAU;
        let params: Vec<f64> = (0..=n).map(|i| total * i as f64 / n as f64).collect();
        let seed = DiscretizedCurve::from_fn(
            0,
            params,
            |s| {
                let rho = 1.0 + 0.01 * s.sin();
                DVector::from_column_slice(&[rho * s.cos(), rho * s.sin()])
            },
            |s| DVector::from_column_slice(&[-s.sin(), s.cos()]),
            true,
        )
        .unwrap();
        let geo = find_closed_geodesic(&metric, &seed, Default::default()).unwrap();
        let len = geo.length(&metric).unwrap();
        // Independent oracle: Gauss-Legendre quadrature of the ellipse
        // circumference with semi-axes 1.0 and 1.1.
        let (a, b) = (1.0f64, 1.1f64);
        let mut oracle = 0.0;
        let nq = 512;
        for i in 0..nq {
            let t0 = std::f64::consts::TAU * i as f64 / nq as f64;
            let t1 = std::f64::consts::TAU * (i + 1) as f64 / nq as f64;
            // 4-point GL per panel
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
            let half = 0.5 * (t1 - t0);
            let mid = 0.5 * (t0 + t1);
            for k in 0..4 {
                let t = mid + half * X[k];
                oracle += W[k] * half * ((a * t.sin()).powi(2) + (b * t.cos()).powi(2)).sqrt();
            }
        }
        assert!(
            (len - oracle).abs() < 1e-5,
            "ellipse length {len} vs quadrature {oracle}"
        );
    }

    #[test]
    fn contractible_seed_collapses() {
        let metric = flat3();
        let n = 128;
        let total = std::f64::consts::TAU * 0.05;
        let params: Vec<f64> = (0..=n).map(|i| total * i as f64 / n as f64).collect();
        let seed = DiscretizedCurve::from_fn(
            0,
            params,
            |s| {
                let a = s / 0.05;
                DVector::from_column_slice(&[
                    0.5 + 0.05 * a.cos(),
                    0.5 + 0.05 * a.sin(),
                    0.0,
                ])
            },
            |s| {
                let a = s / 0.05;
                DVector::from_column_slice(&[-a.sin(), a.cos(), 0.0])
            },
            true,
        )
        .unwrap();
        let err = find_closed_geodesic(&metric, &seed, Default::default()).unwrap_err();
        assert!(
            matches!(err, GeonetError::Degeneration(_) | GeonetError::Convergence(_)),
            "{err:?}"
        );
    }

    fn tripod_net(metric: &MetricField, center: &[f64], corners: &[[f64; 3]]) -> GammaNet {
        let c = ChartPoint::from_slice(0, center);
        let mut vertices = vec![VertexId(0)];
        let mut edges = Vec::new();
        let mut positions = BTreeMap::new();
        let mut curves = BTreeMap::new();
        positions.insert(VertexId(0), c.clone());
        for (i, corner) in corners.iter().enumerate() {
            let vid = VertexId(1 + i as u32);
            vertices.push(vid);
            let p = ChartPoint::from_slice(0, corner);
            positions.insert(vid, p.clone());
            let d = &p.coords - &c.coords;
            let curve =
                integrate_geodesic(metric, &c, &d, 1.0, IntegrationParams::default()).unwrap();
            edges.push(EdgeSpec {
                id: EdgeId(i as u32),
                endpoints: [VertexId(0), vid],
                multiplicity: 1,
            });
            curves.insert(EdgeId(i as u32), curve);
        }
        let graph = WeightedMultigraph::new(vertices, edges).unwrap();
        GammaNet::new(graph, positions, curves)
            .unwrap()
            .with_pinned([VertexId(1), VertexId(2), VertexId(3)])
    }

    /// Weiszfeld iteration: the Fermat point of three points in a flat chart.
    fn weiszfeld(corners: &[[f64; 3]]) -> DVector<f64> {
        let pts: Vec<DVector<f64>> = corners
            .iter()
            .map(|c| DVector::from_column_slice(c))
            .collect();
        let mut x = (&pts[0] + &pts[1] + &pts[2]) / 3.0;
        for _ in 0..200 {
            let mut num = DVector::zeros(3);
            let mut den = 0.0;
            for p in &pts {
                let d = (&x - p).norm().max(1e-15);
                num += p / d;
                den += 1.0 / d;
            }
            let next = num / den;
            if (&next - &x).norm() < 1e-14 {
                x = next;
                break;
            }
            x = next;
        }
        x
    }

    #[test]
    fn stationary_input_returns_unchanged() {
        let metric = flat3();
        // 120-degree tripod: already stationary.
        let corners = [
            [0.5 + 0.2, 0.5, 0.5],
            [0.5 + 0.2 * (2.0 * std::f64::consts::FRAC_PI_3).cos(),
             0.5 + 0.2 * (2.0 * std::f64::consts::FRAC_PI_3).sin(), 0.5],
            [0.5 + 0.2 * (4.0 * std::f64::consts::FRAC_PI_3).cos(),
             0.5 + 0.2 * (4.0 * std::f64::consts::FRAC_PI_3).sin(), 0.5],
        ];
        let net = tripod_net(&metric, &[0.5, 0.5, 0.5], &corners);
        let (out, info) = relax_net(&metric, &net, Default::default()).unwrap();
        assert_eq!(info.descent_iterations, 0);
        assert_eq!(info.polish_iterations, 0);
        let before = net.vertex_position(VertexId(0));
        let after = out.vertex_position(VertexId(0));
        assert_eq!(before.coords, after.coords);
    }

    #[test]
    fn tripod_relaxes_to_fermat_point() {
        let metric = flat3();
        let corners = [
            [0.62, 0.48, 0.5],
            [0.43, 0.66, 0.5],
            [0.40, 0.41, 0.5],
        ];
        // Displace the junction from the Fermat point.
        let net = tripod_net(&metric, &[0.55, 0.60, 0.5], &corners);
        let (out, info) = relax_net(&metric, &net, Default::default()).unwrap();
        assert!(
            info.final_max_defect < 1e-8,
            "final defect {}",
            info.final_max_defect
        );
        // Monotone descent along the recorded lengths.
        for w in info.lengths.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "length increased: {} -> {}", w[0], w[1]);
        }
        let fermat = weiszfeld(&corners);
        let junction = out.vertex_position(VertexId(0));
        assert!(
            (&junction.coords - &fermat).norm() < 1e-7,
            "junction {:?} vs Fermat {:?}",
            junction.coords.as_slice(),
            fermat.as_slice()
        );
        // 120-degree angles: every pairwise tangent angle is 2π/3.
        let d = out.vertex_defect(&metric, VertexId(0)).unwrap();
        assert!(d.norm() < 1e-8);
    }

    #[test]
    fn obtuse_corner_collapses_an_edge() {
        let metric = flat3();
        // Fermat point of a triangle with an angle above 120 degrees sits at
        // the obtuse corner: the incident edge collapses.
        let corners = [
            [0.5 + 0.25, 0.5 + 0.004, 0.5],
            [0.5 - 0.25, 0.5 + 0.004, 0.5],
            [0.5, 0.5 - 0.002, 0.5],
        ];
        let net = tripod_net(&metric, &[0.5, 0.5 + 0.002, 0.5], &corners);
        let err = relax_net(
            &metric,
            &net,
            RelaxOptions {
                max_iterations: 4000,
                collapse_fraction: 0.05,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, GeonetError::Degeneration(_)), "{err:?}");
    }

    #[test]
    fn continuation_identity_is_small() {
        let metric = flat3();
        let corners = [
            [0.62, 0.48, 0.5],
            [0.43, 0.66, 0.5],
            [0.40, 0.41, 0.5],
        ];
        let net = tripod_net(&metric, &[0.55, 0.60, 0.5], &corners);
        let (relaxed, _) = relax_net(&metric, &net, Default::default()).unwrap();
        let (cont, info) = continue_net(&metric, &relaxed, Default::default()).unwrap();
        assert!(info.displacement < 1e-8, "identity moved by {}", info.displacement);
        let d = cont.vertex_defect(&metric, VertexId(0)).unwrap();
        assert!(d.norm() < 1e-10);
    }
}

