//! Weighted multigraphs, Γ-nets, and the stationarity report.
//!
//! A net is stationary exactly when every edge is a geodesic and at every
//! vertex the multiplicity-weighted sum of inward unit tangent vectors
//! vanishes. Essentiality is decided by the opposite-pairing criterion: a
//! stationary net is a union of closed geodesics iff at every vertex the
//! edge-ends can be paired with matched multiplicities and antiparallel
//! tangents, so a net with no such pairing is essential.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::curve::{segment_distance, DiscretizedCurve};
use crate::error::{GeonetError, Result};
use crate::fermi::geodesic_residual_sup;
use crate::metric::{ChartPoint, MetricField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub u32);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub id: EdgeId,
    /// Incidence map: image of the edge endpoints 0 and 1.
    pub endpoints: [VertexId; 2],
    /// Multiplicity n(E) >= 1.
    pub multiplicity: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedMultigraph {
    vertices: Vec<VertexId>,
    edges: Vec<EdgeSpec>,
}

impl WeightedMultigraph {
    pub fn new(vertices: Vec<VertexId>, edges: Vec<EdgeSpec>) -> Result<Self> {
        let vset: BTreeSet<_> = vertices.iter().cloned().collect();
        if vset.len() != vertices.len() {
            return Err(GeonetError::Input("duplicate vertex ids".into()));
        }
        let mut eset = BTreeSet::new();
        for e in &edges {
            if !eset.insert(e.id) {
                return Err(GeonetError::Input(format!("duplicate edge id {:?}", e.id)));
            }
            if e.multiplicity == 0 {
                return Err(GeonetError::Input(format!(
                    "edge {:?} has zero multiplicity",
                    e.id
                )));
            }
            for v in &e.endpoints {
                if !vset.contains(v) {
                    return Err(GeonetError::Input(format!(
                        "edge {:?} references missing vertex {:?}",
                        e.id, v
                    )));
                }
            }
        }
        Ok(WeightedMultigraph { vertices, edges })
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn edges(&self) -> &[EdgeSpec] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> Option<&EdgeSpec> {
        self.edges.iter().find(|e| e.id == id)
    }

    /// Edge-ends incident to `v`: (edge id, end index 0|1).
    pub fn ends_at(&self, v: VertexId) -> Vec<(EdgeId, usize)> {
        let mut out = Vec::new();
        for e in &self.edges {
            for end in 0..2 {
                if e.endpoints[end] == v {
                    out.push((e.id, end));
                }
            }
        }
        out
    }
}

/// A discretized immersion of a weighted multigraph: vertex positions plus an
/// oriented curve per edge (from endpoint 0 to endpoint 1).
#[derive(Debug, Clone)]
pub struct GammaNet {
    graph: WeightedMultigraph,
    vertex_positions: BTreeMap<VertexId, ChartPoint>,
    edge_curves: BTreeMap<EdgeId, DiscretizedCurve>,
    /// Boundary vertices excluded from the stationarity defect (pinned during
    /// relaxation).
    pinned: BTreeSet<VertexId>,
}

impl GammaNet {
    pub fn new(
        graph: WeightedMultigraph,
        vertex_positions: BTreeMap<VertexId, ChartPoint>,
        edge_curves: BTreeMap<EdgeId, DiscretizedCurve>,
    ) -> Result<Self> {
        for v in graph.vertices() {
            if !vertex_positions.contains_key(v) {
                return Err(GeonetError::Input(format!("missing position for {v:?}")));
            }
        }
        for e in graph.edges() {
            if !edge_curves.contains_key(&e.id) {
                return Err(GeonetError::Input(format!("missing curve for {:?}", e.id)));
            }
        }
        Ok(GammaNet {
            graph,
            vertex_positions,
            edge_curves,
            pinned: BTreeSet::new(),
        })
    }

    pub fn with_pinned(mut self, pinned: impl IntoIterator<Item = VertexId>) -> Self {
        self.pinned = pinned.into_iter().collect();
        self
    }

    pub fn graph(&self) -> &WeightedMultigraph {
        &self.graph
    }

    pub fn pinned(&self) -> &BTreeSet<VertexId> {
        &self.pinned
    }

    pub fn vertex_position(&self, v: VertexId) -> &ChartPoint {
        &self.vertex_positions[&v]
    }

    pub fn vertex_positions(&self) -> &BTreeMap<VertexId, ChartPoint> {
        &self.vertex_positions
    }

    pub fn edge_curve(&self, e: EdgeId) -> &DiscretizedCurve {
        &self.edge_curves[&e]
    }

    pub fn edge_curves(&self) -> &BTreeMap<EdgeId, DiscretizedCurve> {
        &self.edge_curves
    }

    pub fn set_vertex_position(&mut self, v: VertexId, p: ChartPoint) {
        self.vertex_positions.insert(v, p);
    }

    pub fn set_edge_curve(&mut self, e: EdgeId, c: DiscretizedCurve) {
        self.edge_curves.insert(e, c);
    }

    /// Net invariants: endpoint coincidence (< tol) and positive edge speed.
    pub fn validate(&self, metric: &MetricField, tol: f64) -> Result<()> {
        for e in self.graph.edges() {
            let curve = &self.edge_curves[&e.id];
            let min_speed = curve.min_speed(metric)?;
            if !(min_speed > 0.0) {
                return Err(GeonetError::Parametrization(format!(
                    "edge {:?} is not an immersion (zero speed sample)",
                    e.id
                )));
            }
            for (end, point) in [(0usize, curve.start()), (1usize, curve.end())] {
                let v = e.endpoints[end];
                let vp = &self.vertex_positions[&v];
                let gap = metric.proxy_distance(&point, vp);
                if gap > tol {
                    return Err(GeonetError::Input(format!(
                        "edge {:?} end {end} is {gap:.3e} from vertex {v:?} (tol {tol:.1e})",
                        e.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Inward unit tangent of the given edge-end, expressed in the chart of
    /// the incident vertex.
    pub fn inward_unit_tangent(
        &self,
        metric: &MetricField,
        edge: EdgeId,
        end: usize,
    ) -> Result<DVector<f64>> {
        let spec = self
            .graph
            .edge(edge)
            .ok_or_else(|| GeonetError::Input(format!("unknown edge {edge:?}")))?;
        let curve = &self.edge_curves[&edge];
        let v_id = spec.endpoints[end];
        let vertex = &self.vertex_positions[&v_id];
        let (point, mut tangent) = if end == 0 {
            (curve.start(), curve.start_velocity())
        } else {
            let mut t = curve.end_velocity();
            t.neg_mut();
            (curve.end(), t)
        };
        if point.chart != vertex.chart {
            let (_, jac) = metric.to_chart(&point, vertex.chart).ok_or_else(|| {
                GeonetError::Input("edge end not expressible in vertex chart".into())
            })?;
            tangent = &jac * tangent;
        }
        let norm = metric.norm(vertex, &tangent)?;
        if !(norm > 0.0) {
            return Err(GeonetError::Parametrization(format!(
                "zero-speed edge end at {edge:?}[{end}]"
            )));
        }
        Ok(tangent / norm)
    }

    /// Stationary-defect vector at `v`: sum over incident edge-ends of
    /// multiplicity times the inward unit tangent (loops contribute both
    /// ends).
    pub fn vertex_defect(&self, metric: &MetricField, v: VertexId) -> Result<DVector<f64>> {
        let mut defect = DVector::zeros(metric.dim());
        for (e, end) in self.graph.ends_at(v) {
            let mult = self.graph.edge(e).unwrap().multiplicity as f64;
            defect += self.inward_unit_tangent(metric, e, end)? * mult;
        }
        Ok(defect)
    }

    /// Multiplicity-weighted total length.
    pub fn length(&self, metric: &MetricField) -> Result<f64> {
        let mut total = 0.0;
        for e in self.graph.edges() {
            total += e.multiplicity as f64 * self.edge_curves[&e.id].length(metric)?;
        }
        Ok(total)
    }
}

/// Multiplicity-weighted length functional.
pub fn net_length(metric: &MetricField, net: &GammaNet) -> Result<f64> {
    net.length(metric)
}

/// Stationary-defect vector at vertex `v` (see [`GammaNet::vertex_defect`]).
pub fn vertex_defect(metric: &MetricField, net: &GammaNet, v: VertexId) -> Result<DVector<f64>> {
    net.vertex_defect(metric, v)
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityReport {
    /// Sup geodesic-curvature residual per edge.
    pub edge_residuals: Vec<(EdgeId, f64)>,
    /// Defect vector (chart components) and its g-norm per vertex; pinned
    /// vertices are reported but excluded from the flag.
    pub vertex_defects: Vec<(VertexId, Vec<f64>, f64)>,
    pub total_length: f64,
    pub tolerance: f64,
    pub stationary: bool,
    pub embedded: bool,
    pub essential: bool,
    pub max_edge_residual: f64,
    pub max_vertex_defect: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    /// Embeddedness clearance in chart/embedding units.
    pub embed_clearance: f64,
    /// Angular tolerance for the opposite-pairing essentiality test.
    pub essential_angle_tol: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            embed_clearance: 1e-4,
            essential_angle_tol: 1e-3,
        }
    }
}

/// Evaluate stationarity, embeddedness and essentiality of a net.
pub fn is_stationary(
    metric: &MetricField,
    net: &GammaNet,
    tol: f64,
) -> Result<StationarityReport> {
    is_stationary_with(metric, net, tol, ReportOptions::default())
}

pub fn is_stationary_with(
    metric: &MetricField,
    net: &GammaNet,
    tol: f64,
    opts: ReportOptions,
) -> Result<StationarityReport> {
    let mut edge_residuals = Vec::new();
    let mut max_edge = 0.0f64;
    for e in net.graph().edges() {
        let r = geodesic_residual_sup(metric, net.edge_curve(e.id))?;
        max_edge = max_edge.max(r);
        edge_residuals.push((e.id, r));
    }
    let mut vertex_defects = Vec::new();
    let mut max_defect = 0.0f64;
    for v in net.graph().vertices() {
        let d = net.vertex_defect(metric, *v)?;
        let norm = metric.norm(net.vertex_position(*v), &d)?;
        if !net.pinned().contains(v) {
            max_defect = max_defect.max(norm);
        }
        vertex_defects.push((*v, d.as_slice().to_vec(), norm));
    }
    let stationary = max_edge < tol && max_defect < tol;
    let embedded = is_embedded(metric, net, opts.embed_clearance)?;
    let essential = if stationary {
        essential_by_pairing(metric, net, opts.essential_angle_tol)?
    } else {
        false
    };
    Ok(StationarityReport {
        edge_residuals,
        vertex_defects,
        total_length: net.length(metric)?,
        tolerance: tol,
        stationary,
        embedded,
        essential,
        max_edge_residual: max_edge,
        max_vertex_defect: max_defect,
    })
}

/// Injectivity of the net image up to `clearance`, by a pairwise proximity
/// sweep over edge sample segments. Incidences at shared vertices are
/// excluded; everything else closer than the clearance fails.
pub fn is_embedded(metric: &MetricField, net: &GammaNet, clearance: f64) -> Result<bool> {
    // Proximity polylines (embedding coordinates when available).
    let mut polylines: BTreeMap<EdgeId, Vec<DVector<f64>>> = BTreeMap::new();
    for e in net.graph().edges() {
        let c = net.edge_curve(e.id);
        let pts = (0..c.sample_count())
            .map(|i| {
                let p = c.point(i);
                metric.embed(&p).unwrap_or(p.coords)
            })
            .collect();
        polylines.insert(e.id, pts);
    }
    let vertex_pts: BTreeMap<VertexId, DVector<f64>> = net
        .vertex_positions()
        .iter()
        .map(|(v, p)| (*v, metric.embed(p).unwrap_or_else(|| p.coords.clone())))
        .collect();
    let periods = {
        let any_edge = net.graph().edges().first();
        match any_edge {
            Some(e) => {
                let c = net.edge_curve(e.id);
                if metric.embed(&c.point(0)).is_none() {
                    metric.backend().periods(c.chart_ids()[0])
                } else {
                    None
                }
            }
            None => None,
        }
    };
    // Whole-period shift moving `anchor` closest to `target`; applied to a
    // whole segment at once so segments are never torn at the wrap boundary.
    let wrap_shift = |target: &DVector<f64>, anchor: &DVector<f64>| -> Option<DVector<f64>> {
        periods.as_ref().map(|per| {
            let mut shift = DVector::zeros(target.len());
            for (k, period) in per.iter().enumerate() {
                if *period > 0.0 {
                    shift[k] = -((anchor[k] - target[k]) / period).round() * period;
                }
            }
            shift
        })
    };

    // Two-phase sweep: a strided point-distance prefilter finds candidate
    // index windows; the exact segment check runs only on those.
    let dim = match net.graph().edges().first() {
        Some(e) => polylines[&e.id][0].len(),
        None => return Ok(true),
    };
    let wrapped_point_dist2 = |a: &DVector<f64>, b: &DVector<f64>| -> f64 {
        let mut d2 = 0.0;
        for c in 0..dim {
            let mut diff = a[c] - b[c];
            if let Some(per) = &periods {
                if per[c] > 0.0 {
                    diff -= (diff / per[c]).round() * per[c];
                }
            }
            d2 += diff * diff;
        }
        d2
    };
    let edges: Vec<&EdgeSpec> = net.graph().edges().iter().collect();
    for (ia, ea) in edges.iter().enumerate() {
        for eb in edges.iter().skip(ia) {
            let pa = &polylines[&ea.id];
            let pb = &polylines[&eb.id];
            let same = ea.id == eb.id;
            // Shared vertex positions to exclude.
            let shared: Vec<&DVector<f64>> = ea
                .endpoints
                .iter()
                .filter(|v| eb.endpoints.contains(v))
                .map(|v| &vertex_pts[v])
                .collect();
            let spacing_a = (pa[1].clone() - &pa[0]).norm().max(1e-12);
            let spacing_b = (pb[1].clone() - &pb[0]).norm().max(1e-12);
            let exclusion = (3.0 * spacing_a).max(4.0 * clearance);
            let stride = 6usize;
            // Anything below this point distance at stride resolution could
            // hide a segment pair within the clearance.
            let prefilter =
                clearance + (stride as f64 + 1.0) * (spacing_a + spacing_b);
            let pre2 = prefilter * prefilter;
            for ci in (0..pa.len() - 1).step_by(stride) {
                let cj_start = if same { ci } else { 0 };
                for cj in (cj_start..pb.len() - 1).step_by(stride) {
                    if wrapped_point_dist2(&pa[ci], &pb[cj]) > pre2 {
                        continue;
                    }
                    // Exact pass over the local window.
                    for i in ci..(ci + stride).min(pa.len() - 1) {
                        let j_lo = if same { i } else { cj };
                        for j in j_lo.max(cj)..(cj + stride).min(pb.len() - 1) {
                            if same && j <= i + 2 {
                                continue;
                            }
                            let mid = (&pa[i] + &pa[i + 1]) * 0.5;
                            let mb = (&pb[j] + &pb[j + 1]) * 0.5;
                            let (b0, b1) = match wrap_shift(&mid, &mb) {
                                Some(shift) => (&pb[j] + &shift, &pb[j + 1] + &shift),
                                None => (pb[j].clone(), pb[j + 1].clone()),
                            };
                            let d = segment_distance(&pa[i], &pa[i + 1], &b0, &b1);
                            if d >= clearance {
                                continue;
                            }
                            // Near a shared vertex both curves legitimately
                            // meet.
                            let near_shared = shared.iter().any(|vp| {
                                let vp_w = match wrap_shift(&mid, vp) {
                                    Some(shift) => *vp + &shift,
                                    None => (*vp).clone(),
                                };
                                let da = (&pa[i] - &vp_w)
                                    .norm()
                                    .min((&pa[i + 1] - &vp_w).norm());
                                let db =
                                    (&b0 - &vp_w).norm().min((&b1 - &vp_w).norm());
                                da < exclusion && db < exclusion
                            });
                            // A closed loop edge meets itself at its base
                            // vertex.
                            let near_own_seam = same
                                && net.edge_curve(ea.id).is_closed()
                                && (i < 3 || j + 3 >= pb.len() - 1);
                            if near_shared || near_own_seam {
                                continue;
                            }
                            return Ok(false);
                        }
                    }
                }
            }
        }
    }
    Ok(true)
}

/// Essentiality by the opposite-pairing criterion. Precondition: the net is
/// stationary at `tol` (checked; violating it is an error).
pub fn is_essential(metric: &MetricField, net: &GammaNet, tol: f64) -> Result<bool> {
    let report = is_stationary(metric, net, tol)?;
    if !report.stationary {
        return Err(GeonetError::Precondition(format!(
            "is_essential requires a stationary net (max residual {:.3e}, max defect {:.3e}, tol {tol:.1e})",
            report.max_edge_residual, report.max_vertex_defect
        )));
    }
    essential_by_pairing(metric, net, ReportOptions::default().essential_angle_tol)
}

/// True when NO vertex-by-vertex antiparallel pairing with matched
/// multiplicities exists (such a pairing would exhibit the net as a union of
/// closed geodesics).
fn essential_by_pairing(metric: &MetricField, net: &GammaNet, angle_tol: f64) -> Result<bool> {
    for v in net.graph().vertices() {
        let ends = net.graph().ends_at(*v);
        let mut dirs: Vec<(DVector<f64>, i64)> = Vec::new();
        for (e, end) in ends {
            let mult = net.graph().edge(e).unwrap().multiplicity as i64;
            let u = net.inward_unit_tangent(metric, e, end)?;
            dirs.push((u, mult));
        }
        if !directions_pairable(metric, net.vertex_position(*v), &dirs, angle_tol)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Decide whether unit directions with multiplicities can be split into
/// antiparallel pairs. Directions are clustered by axis (up to sign, within
/// the angular tolerance); a pairing exists iff each cluster balances its
/// plus and minus multiplicities.
fn directions_pairable(
    metric: &MetricField,
    at: &ChartPoint,
    dirs: &[(DVector<f64>, i64)],
    angle_tol: f64,
) -> Result<bool> {
    let g = metric.eval(at)?;
    let cos_between = |a: &DVector<f64>, b: &DVector<f64>| -> f64 {
        (a.transpose() * &g * b)[(0, 0)].clamp(-1.0, 1.0)
    };
    // clusters: (representative direction, plus weight, minus weight)
    let mut clusters: Vec<(DVector<f64>, i64, i64)> = Vec::new();
    for (u, m) in dirs {
        let mut placed = false;
        for (rep, plus, minus) in clusters.iter_mut() {
            let c = cos_between(rep, u);
            if c.acos() <= angle_tol {
                *plus += m;
                placed = true;
                break;
            }
            if (std::f64::consts::PI - c.acos()).abs() <= angle_tol {
                *minus += m;
                placed = true;
                break;
            }
        }
        if !placed {
            clusters.push((u.clone(), *m, 0));
        }
    }
    Ok(clusters.iter().all(|(_, plus, minus)| plus == minus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::FlatTorus;
    use crate::geodesic::{integrate_geodesic, IntegrationParams};

    fn flat3() -> MetricField {
        FlatTorus::unit(3).field(None).unwrap()
    }

    fn x_circle_net(metric: &MetricField, multiplicity: u32) -> GammaNet {
        let p = ChartPoint::from_slice(0, &[0.0, 0.0, 0.0]);
        let v = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        let curve = integrate_geodesic(metric, &p, &v, 1.0, IntegrationParams::default())
            .unwrap()
            .with_closed(true);
        let graph = WeightedMultigraph::new(
            vec![VertexId(0)],
            vec![EdgeSpec {
                id: EdgeId(0),
                endpoints: [VertexId(0), VertexId(0)],
                multiplicity,
            }],
        )
        .unwrap();
        let mut positions = BTreeMap::new();
        positions.insert(VertexId(0), p);
        let mut curves = BTreeMap::new();
        curves.insert(EdgeId(0), curve);
        GammaNet::new(graph, positions, curves).unwrap()
    }

    /// Straight unit-multiplicity edges from `v` to given offsets.
    fn star_net(metric: &MetricField, center: &[f64], arms: &[&[f64]], mults: &[u32]) -> GammaNet {
        let c = ChartPoint::from_slice(0, center);
        let mut vertices = vec![VertexId(0)];
        let mut edges = Vec::new();
        let mut positions = BTreeMap::new();
        let mut curves = BTreeMap::new();
        positions.insert(VertexId(0), c.clone());
        for (i, arm) in arms.iter().enumerate() {
            let vid = VertexId(1 + i as u32);
            vertices.push(vid);
            let dir = DVector::from_column_slice(arm);
            let end = &c.coords + &dir;
            positions.insert(vid, ChartPoint::new(0, end));
            let curve = integrate_geodesic(metric, &c, &dir, 1.0, IntegrationParams::default())
                .unwrap();
            edges.push(EdgeSpec {
                id: EdgeId(i as u32),
                endpoints: [VertexId(0), vid],
                multiplicity: mults[i],
            });
            curves.insert(EdgeId(i as u32), curve);
        }
        let graph = WeightedMultigraph::new(vertices, edges).unwrap();
        GammaNet::new(graph, positions, curves).unwrap()
    }

    #[test]
    fn net_length_respects_multiplicity() {
        let metric = flat3();
        let net1 = x_circle_net(&metric, 1);
        let net3 = x_circle_net(&metric, 3);
        let l1 = net_length(&metric, &net1).unwrap();
        let l3 = net_length(&metric, &net3).unwrap();
        assert!((l1 - 1.0).abs() < 1e-10);
        assert!((l3 - 3.0).abs() < 1e-10);
    }

    #[test]
    fn two_edge_net_weighted_sum() {
        let metric = flat3();
        let net = star_net(
            &metric,
            &[0.1, 0.1, 0.1],
            &[&[0.2, 0.0, 0.0], &[0.0, 0.31, 0.0]],
            &[2, 5],
        );
        let l = net_length(&metric, &net).unwrap();
        let expected = 2.0 * 0.2 + 5.0 * 0.31;
        assert!((l - expected).abs() < 1e-9, "{l} vs {expected}");
    }

    #[test]
    fn collinear_edges_have_zero_defect() {
        let metric = flat3();
        let net = star_net(
            &metric,
            &[0.5, 0.5, 0.5],
            &[&[0.2, 0.0, 0.0], &[-0.2, 0.0, 0.0]],
            &[1, 1],
        );
        let d = vertex_defect(&metric, &net, VertexId(0)).unwrap();
        assert!(d.norm() < 1e-14);
    }

    #[test]
    fn tripod_at_120_degrees_is_balanced() {
        let metric = flat3();
        let arms: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / 3.0;
                vec![0.2 * a.cos(), 0.2 * a.sin(), 0.0]
            })
            .collect();
        let arm_refs: Vec<&[f64]> = arms.iter().map(|a| a.as_slice()).collect();
        let net = star_net(&metric, &[0.5, 0.5, 0.5], &arm_refs, &[1, 1, 1]);
        let d = vertex_defect(&metric, &net, VertexId(0)).unwrap();
        assert!(d.norm() < 1e-14, "tripod defect {}", d.norm());
    }

    #[test]
    fn defect_is_orientation_invariant() {
        let metric = flat3();
        let net = star_net(
            &metric,
            &[0.5, 0.5, 0.5],
            &[&[0.2, 0.0, 0.0], &[0.0, 0.25, 0.0]],
            &[1, 2],
        );
        let d1 = vertex_defect(&metric, &net, VertexId(0)).unwrap();
        // Reverse the second edge (so the center becomes endpoint 1).
        let mut net2 = net.clone();
        let e1 = net2.edge_curve(EdgeId(1)).reversed();
        net2.set_edge_curve(EdgeId(1), e1);
        let graph2 = WeightedMultigraph::new(
            net2.graph().vertices().to_vec(),
            net2.graph()
                .edges()
                .iter()
                .map(|e| {
                    let mut e = e.clone();
                    if e.id == EdgeId(1) {
                        e.endpoints = [e.endpoints[1], e.endpoints[0]];
                    }
                    e
                })
                .collect(),
        )
        .unwrap();
        let net2 = GammaNet::new(
            graph2,
            net2.vertex_positions().clone(),
            net2.edge_curves().clone(),
        )
        .unwrap();
        let d2 = vertex_defect(&metric, &net2, VertexId(0)).unwrap();
        assert!((d1 - d2).norm() < 1e-12);
    }

    #[test]
    fn closed_geodesic_is_stationary_never_essential() {
        let metric = flat3();
        for mult in [1u32, 2, 5] {
            let net = x_circle_net(&metric, mult);
            let report = is_stationary(&metric, &net, 1e-6).unwrap();
            assert!(report.stationary);
            assert!(report.embedded);
            assert!(!report.essential, "multiplicity {mult}");
            assert!(!is_essential(&metric, &net, 1e-6).unwrap());
        }
    }

    #[test]
    fn ellipse_loop_not_stationary_residual_is_curvature() {
        let metric = flat3();
        let (a, b) = (0.2, 0.12);
        let n = 2048;
        let params: Vec<f64> = (0..=n)
            .map(|i| std::f64::consts::TAU * i as f64 / n as f64)
            .collect();
        let curve = DiscretizedCurve::from_fn(
            0,
            params,
            |t| {
                DVector::from_column_slice(&[
                    0.5 + a * t.cos(),
                    0.5 + b * t.sin(),
                    0.0,
                ])
            },
            |t| DVector::from_column_slice(&[-a * t.sin(), b * t.cos(), 0.0]),
            true,
        )
        .unwrap();
        let graph = WeightedMultigraph::new(
            vec![VertexId(0)],
            vec![EdgeSpec {
                id: EdgeId(0),
                endpoints: [VertexId(0), VertexId(0)],
                multiplicity: 1,
            }],
        )
        .unwrap();
        let mut positions = BTreeMap::new();
        positions.insert(VertexId(0), curve.start());
        let mut curves = BTreeMap::new();
        curves.insert(EdgeId(0), curve);
        let net = GammaNet::new(graph, positions, curves).unwrap();
        let report = is_stationary(&metric, &net, 1e-6).unwrap();
        assert!(!report.stationary);
        // Max planar-ellipse curvature is a/b².
        let expected = a / (b * b);
        assert!(
            (report.max_edge_residual - expected).abs() / expected < 1e-3,
            "residual {} vs max curvature {expected}",
            report.max_edge_residual
        );
    }

    #[test]
    fn transversal_crossing_is_not_embedded() {
        let metric = flat3();
        // Two straight edges crossing at (0.5, 0.5, 0.5) which is NOT a vertex.
        let net = {
            let p0 = ChartPoint::from_slice(0, &[0.3, 0.5, 0.5]);
            let p1 = ChartPoint::from_slice(0, &[0.5, 0.3, 0.5]);
            let d0 = DVector::from_column_slice(&[0.4, 0.0, 0.0]);
            let d1 = DVector::from_column_slice(&[0.0, 0.4, 0.0]);
            let c0 = integrate_geodesic(&metric, &p0, &d0, 1.0, IntegrationParams::default())
                .unwrap();
            let c1 = integrate_geodesic(&metric, &p1, &d1, 1.0, IntegrationParams::default())
                .unwrap();
            let graph = WeightedMultigraph::new(
                vec![VertexId(0), VertexId(1), VertexId(2), VertexId(3)],
                vec![
                    EdgeSpec {
                        id: EdgeId(0),
                        endpoints: [VertexId(0), VertexId(1)],
                        multiplicity: 1,
                    },
                    EdgeSpec {
                        id: EdgeId(1),
                        endpoints: [VertexId(2), VertexId(3)],
                        multiplicity: 1,
                    },
                ],
            )
            .unwrap();
            let mut positions = BTreeMap::new();
            positions.insert(VertexId(0), c0.start());
            positions.insert(VertexId(1), c0.end());
            positions.insert(VertexId(2), c1.start());
            positions.insert(VertexId(3), c1.end());
            let mut curves = BTreeMap::new();
            curves.insert(EdgeId(0), c0);
            curves.insert(EdgeId(1), c1);
            GammaNet::new(graph, positions, curves).unwrap()
        };
        assert!(!is_embedded(&metric, &net, 1e-4).unwrap());
    }

    #[test]
    fn promoted_crossing_with_opposite_pairing_is_not_essential() {
        let metric = flat3();
        // x-circle and y-circle through the origin, with the crossing point
        // promoted to a shared vertex: tangent pairs (±x̂), (±ŷ) pair up.
        let p = ChartPoint::from_slice(0, &[0.0, 0.0, 0.0]);
        let cx = integrate_geodesic(
            &metric,
            &p,
            &DVector::from_column_slice(&[1.0, 0.0, 0.0]),
            1.0,
            IntegrationParams::default(),
        )
        .unwrap()
        .with_closed(true);
        let cy = integrate_geodesic(
            &metric,
            &p,
            &DVector::from_column_slice(&[0.0, 1.0, 0.0]),
            1.0,
            IntegrationParams::default(),
        )
        .unwrap()
        .with_closed(true);
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
        .unwrap();
        let mut positions = BTreeMap::new();
        positions.insert(VertexId(0), p);
        let mut curves = BTreeMap::new();
        curves.insert(EdgeId(0), cx);
        curves.insert(EdgeId(1), cy);
        let net = GammaNet::new(graph, positions, curves).unwrap();
        let report = is_stationary(&metric, &net, 1e-6).unwrap();
        assert!(report.stationary, "two crossing geodesics balance at the vertex");
        assert!(report.embedded, "vertex identification is allowed");
        assert!(!report.essential);
    }

    #[test]
    fn first_variation_bounded_by_residual_and_defect() {
        let metric = flat3();
        // Slightly non-stationary star: arms at almost-120 degrees.
        let arms: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / 3.0 + if k == 0 { 0.01 } else { 0.0 };
                vec![0.2 * a.cos(), 0.2 * a.sin(), 0.0]
            })
            .collect();
        let arm_refs: Vec<&[f64]> = arms.iter().map(|a| a.as_slice()).collect();
        let net = star_net(&metric, &[0.5, 0.5, 0.5], &arm_refs, &[1, 1, 1]);
        let report = is_stationary(&metric, &net, 1e-6).unwrap();
        let eps1 = report.max_edge_residual;
        let eps2: f64 = report
            .vertex_defects
            .iter()
            .map(|(_, _, n)| *n)
            .sum();
        // Weighted length plus vertex count bounds the variation constant.
        let weighted_len: f64 = net
            .graph()
            .edges()
            .iter()
            .map(|e| {
                e.multiplicity as f64 * net.edge_curve(e.id).length(&metric).unwrap()
            })
            .sum();
        let c_bound = 1.5 * (weighted_len + net.graph().vertices().len() as f64);
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..5 {
            // Smooth bounded deformation field phi(x) with |phi| <= 1.
            let coef: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let phi = |x: &DVector<f64>| -> DVector<f64> {
                let mut out = DVector::zeros(3);
                for c in 0..3 {
                    out[c] = (coef[3 * c]
                        * (std::f64::consts::TAU * x[0] + coef[3 * c + 1]).sin()
                        * (std::f64::consts::TAU * x[1] + coef[3 * c + 2]).cos())
                        / 3.0;
                }
                out
            };
            let deform = |net: &GammaNet, eps: f64| -> GammaNet {
                let mut out = net.clone();
                for (vid, p) in net.vertex_positions() {
                    out.set_vertex_position(
                        *vid,
                        ChartPoint::new(p.chart, &p.coords + phi(&p.coords) * eps),
                    );
                }
                for (eid, c) in net.edge_curves() {
                    let pts: Vec<DVector<f64>> = c
                        .points()
                        .iter()
                        .map(|x| x + phi(x) * eps)
                        .collect();
                    let deformed = DiscretizedCurve::new(
                        c.params().to_vec(),
                        c.chart_ids().to_vec(),
                        pts,
                        None,
                        c.is_closed(),
                    )
                    .unwrap();
                    out.set_edge_curve(*eid, deformed);
                }
                out
            };
            let eps = 1e-5;
            let lp = net_length(&metric, &deform(&net, eps)).unwrap();
            let lm = net_length(&metric, &deform(&net, -eps)).unwrap();
            let dl = (lp - lm) / (2.0 * eps);
            assert!(
                dl.abs() <= c_bound * (eps1 + eps2) + 1e-6,
                "variation {dl} exceeds bound {}",
                c_bound * (eps1 + eps2)
            );
        }
    }
}
