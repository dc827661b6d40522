//! Geometry file formats: nets (JSON, lossless), metric specs (manifold plus
//! conformal-factor data, enough to rebuild the perturbed metric
//! deterministically), OBJ polylines and CSV samples.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::backends::{FlatTorus, ProductS1S2, StereoHypersurface, TorusBump};
use crate::conformal::{apply_conformal, curvature_kill_factor, ConformalStack};
use crate::curve::DiscretizedCurve;
use crate::error::{GeonetError, Result};
use crate::fermi::{fermi_tube, FermiOptions};
use crate::metric::{ChartPoint, MetricField};
use crate::net::{EdgeId, EdgeSpec, GammaNet, VertexId, WeightedMultigraph};
use crate::report::write_json;

pub const SCHEMA_VERSION: &str = "1";

// ---------------------------------------------------------------------------
// Manifold specs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BumpSpec {
    pub amplitude: f64,
    pub waves: Vec<i32>,
    pub phases: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ManifoldSpec {
    FlatTorus {
        periods: Vec<f64>,
        #[serde(default)]
        bump: Option<BumpSpec>,
        injectivity_radius: f64,
    },
    Hypersurface {
        shape: HypersurfaceShape,
        injectivity_radius: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum HypersurfaceShape {
    Sphere { dim: usize, radius: f64 },
    Ellipsoid { semi_axes: Vec<f64> },
    ProductS1S2 { r1: f64, r2: f64 },
}

impl ManifoldSpec {
    pub fn build(&self) -> Result<MetricField> {
        match self {
            ManifoldSpec::FlatTorus {
                periods,
                bump,
                injectivity_radius,
            } => {
                let torus = match bump {
                    None => FlatTorus::new(periods.clone()),
                    Some(b) => FlatTorus::with_bump(
                        periods.clone(),
                        TorusBump {
                            amplitude: b.amplitude,
                            waves: b.waves.clone(),
                            phases: b.phases.clone(),
                        },
                    )?,
                };
                torus.field(Some(*injectivity_radius))
            }
            ManifoldSpec::Hypersurface {
                shape,
                injectivity_radius,
            } => match shape {
                HypersurfaceShape::Sphere { dim, radius } => {
                    StereoHypersurface::sphere(*dim, *radius).field(*injectivity_radius)
                }
                HypersurfaceShape::Ellipsoid { semi_axes } => {
                    StereoHypersurface::ellipsoid(semi_axes.clone())?.field(*injectivity_radius)
                }
                HypersurfaceShape::ProductS1S2 { r1, r2 } => {
                    ProductS1S2::new(*r1, *r2).field(*injectivity_radius)
                }
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Curves and nets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveData {
    pub params: Vec<f64>,
    pub chart_ids: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub velocities: Option<Vec<Vec<f64>>>,
    pub closed: bool,
}

impl CurveData {
    pub fn from_curve(c: &DiscretizedCurve) -> Self {
        CurveData {
            params: c.params().to_vec(),
            chart_ids: c.chart_ids().to_vec(),
            points: c.points().iter().map(|p| p.as_slice().to_vec()).collect(),
            velocities: c
                .velocities()
                .map(|v| v.iter().map(|w| w.as_slice().to_vec()).collect()),
            closed: c.is_closed(),
        }
    }

    pub fn to_curve(&self) -> Result<DiscretizedCurve> {
        DiscretizedCurve::new(
            self.params.clone(),
            self.chart_ids.clone(),
            self.points
                .iter()
                .map(|p| DVector::from_column_slice(p))
                .collect(),
            self.velocities.as_ref().map(|v| {
                v.iter()
                    .map(|w| DVector::from_column_slice(w))
                    .collect()
            }),
            self.closed,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetVertexData {
    pub id: u32,
    pub chart: usize,
    pub coords: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetEdgeData {
    pub id: u32,
    pub endpoints: [u32; 2],
    pub multiplicity: u32,
    pub curve: CurveData,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetFile {
    pub schema_version: String,
    pub vertices: Vec<NetVertexData>,
    pub edges: Vec<NetEdgeData>,
    #[serde(default)]
    pub pinned: Vec<u32>,
}

impl NetFile {
    pub fn from_net(net: &GammaNet) -> Self {
        NetFile {
            schema_version: SCHEMA_VERSION.to_string(),
            vertices: net
                .graph()
                .vertices()
                .iter()
                .map(|v| {
                    let p = net.vertex_position(*v);
                    NetVertexData {
                        id: v.0,
                        chart: p.chart,
                        coords: p.coords.as_slice().to_vec(),
                    }
                })
                .collect(),
            edges: net
                .graph()
                .edges()
                .iter()
                .map(|e| NetEdgeData {
                    id: e.id.0,
                    endpoints: [e.endpoints[0].0, e.endpoints[1].0],
                    multiplicity: e.multiplicity,
                    curve: CurveData::from_curve(net.edge_curve(e.id)),
                })
                .collect(),
            pinned: net.pinned().iter().map(|v| v.0).collect(),
        }
    }

    pub fn to_net(&self) -> Result<GammaNet> {
        let graph = WeightedMultigraph::new(
            self.vertices.iter().map(|v| VertexId(v.id)).collect(),
            self.edges
                .iter()
                .map(|e| EdgeSpec {
                    id: EdgeId(e.id),
                    endpoints: [VertexId(e.endpoints[0]), VertexId(e.endpoints[1])],
                    multiplicity: e.multiplicity,
                })
                .collect(),
        )?;
        let mut positions = BTreeMap::new();
        for v in &self.vertices {
            positions.insert(
                VertexId(v.id),
                ChartPoint::new(v.chart, DVector::from_column_slice(&v.coords)),
            );
        }
        let mut curves = BTreeMap::new();
        for e in &self.edges {
            curves.insert(EdgeId(e.id), e.curve.to_curve()?);
        }
        Ok(GammaNet::new(graph, positions, curves)?
            .with_pinned(self.pinned.iter().map(|v| VertexId(*v))))
    }
}

pub fn save_net(path: &Path, net: &GammaNet) -> Result<()> {
    write_json(path, &NetFile::from_net(net))
}

pub fn load_net(path: &Path) -> Result<NetFile> {
    let data = std::fs::read_to_string(path)?;
    let file: NetFile =
        serde_json::from_str(&data).map_err(|e| GeonetError::Schema(format!("{path:?}: {e}")))?;
    Ok(file)
}

// ---------------------------------------------------------------------------
// Metric spec files (base manifold plus conformal factors)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorSpec {
    /// Tube base curve (the factor kills this curve's curvature).
    pub base_curve: CurveData,
    pub tube_radius: f64,
    pub cutoff: f64,
    pub smoothness: usize,
    #[serde(default)]
    pub support_hint: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSpecFile {
    pub schema_version: String,
    pub manifold: ManifoldSpec,
    #[serde(default)]
    pub conformal_factors: Vec<FactorSpec>,
    #[serde(default)]
    pub declared_disjoint: bool,
}

impl MetricSpecFile {
    /// Rebuild the (possibly perturbed) metric. Frames and curvature
    /// profiles are reconstructed deterministically from the stored curves.
    pub fn build(&self) -> Result<MetricField> {
        let base = self.manifold.build()?;
        if self.conformal_factors.is_empty() {
            return Ok(base);
        }
        let mut stack = ConformalStack::new(base.clone());
        stack.declared_disjoint = self.declared_disjoint;
        for f in &self.conformal_factors {
            let curve = f.base_curve.to_curve()?;
            let tube = fermi_tube(&base, &curve, f.tube_radius, FermiOptions::default())?;
            let factor = curvature_kill_factor(
                &base,
                &curve,
                &tube,
                f.cutoff,
                f.smoothness,
                f.support_hint.as_deref(),
            )?;
            stack.push(factor);
        }
        apply_conformal(&stack)
    }
}

/// Capture a conformal stack (with its base manifold spec) into a file.
pub fn metric_spec_from_stack(
    manifold: ManifoldSpec,
    stack: &ConformalStack,
    smoothness: usize,
) -> MetricSpecFile {
    MetricSpecFile {
        schema_version: SCHEMA_VERSION.to_string(),
        manifold,
        conformal_factors: stack
            .factors
            .iter()
            .map(|f| FactorSpec {
                base_curve: CurveData::from_curve(f.tube().base()),
                tube_radius: f.tube().radius(),
                cutoff: f.cutoff(),
                smoothness,
                support_hint: f
                    .support_hint()
                    .map(|h| h.to_vec())
                    .or(Some(vec![f.support_span()])),
            })
            .collect(),
        declared_disjoint: stack.declared_disjoint,
    }
}

pub fn load_metric_spec(path: &Path) -> Result<MetricSpecFile> {
    let data = std::fs::read_to_string(path)?;
    let file: MetricSpecFile =
        serde_json::from_str(&data).map_err(|e| GeonetError::Schema(format!("{path:?}: {e}")))?;
    Ok(file)
}

// ---------------------------------------------------------------------------
// OBJ and CSV
// ---------------------------------------------------------------------------

/// OBJ polyline export: one `l` record per sample segment, multiplicities in
/// comments. Coordinates beyond the third are dropped; 2-dimensional charts
/// are padded with z = 0.
pub fn net_to_obj(net: &GammaNet) -> String {
    let mut out = String::new();
    out.push_str("# geonet net export\n");
    let mut vertex_index = 1usize;
    for e in net.graph().edges() {
        let c = net.edge_curve(e.id);
        let _ = writeln!(
            out,
            "# edge {} multiplicity {} samples {}",
            e.id.0,
            e.multiplicity,
            c.sample_count()
        );
        let start = vertex_index;
        for p in c.points() {
            let x = p.get(0).copied().unwrap_or(0.0);
            let y = p.get(1).copied().unwrap_or(0.0);
            let z = p.get(2).copied().unwrap_or(0.0);
            let _ = writeln!(out, "v {x:.16e} {y:.16e} {z:.16e}");
            vertex_index += 1;
        }
        for i in 0..c.sample_count() - 1 {
            let _ = writeln!(out, "l {} {}", start + i, start + i + 1);
        }
    }
    out
}

/// CSV export: `edge_id, s, x1..xn` per sample.
pub fn net_to_csv(net: &GammaNet) -> String {
    let dim = net
        .graph()
        .edges()
        .first()
        .map(|e| net.edge_curve(e.id).dim())
        .unwrap_or(0);
    let mut out = String::new();
    out.push_str("edge_id,s");
    for i in 1..=dim {
        let _ = write!(out, ",x{i}");
    }
    out.push('\n');
    for e in net.graph().edges() {
        let c = net.edge_curve(e.id);
        for (i, p) in c.points().iter().enumerate() {
            let _ = write!(out, "{},{:.16e}", e.id.0, c.params()[i]);
            for v in p.iter() {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::{integrate_geodesic, IntegrationParams};

    fn sample_net() -> (MetricField, GammaNet) {
        let metric = FlatTorus::unit(3).field(None).unwrap();
        let p = ChartPoint::from_slice(0, &[0.0, 0.0, 0.0]);
        let v = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        let curve = integrate_geodesic(&metric, &p, &v, 1.0, IntegrationParams::default())
            .unwrap()
            .with_closed(true);
        let graph = WeightedMultigraph::new(
            vec![VertexId(0)],
            vec![EdgeSpec {
                id: EdgeId(0),
                endpoints: [VertexId(0), VertexId(0)],
                multiplicity: 3,
            }],
        )
        .unwrap();
        let mut positions = BTreeMap::new();
        positions.insert(VertexId(0), p);
        let mut curves = BTreeMap::new();
        curves.insert(EdgeId(0), curve);
        (metric, GammaNet::new(graph, positions, curves).unwrap())
    }

    #[test]
    fn net_json_roundtrip_is_exact() {
        let (_, net) = sample_net();
        let file = NetFile::from_net(&net);
        let json = crate::report::to_json_string(&file).unwrap();
        let back: NetFile = serde_json::from_str(&json).unwrap();
        let net2 = back.to_net().unwrap();
        let c1 = net.edge_curve(EdgeId(0));
        let c2 = net2.edge_curve(EdgeId(0));
        assert_eq!(c1.params(), c2.params());
        for (a, b) in c1.points().iter().zip(c2.points()) {
            assert_eq!(a, b, "coordinates must round-trip bit-exactly");
        }
    }

    #[test]
    fn obj_segment_count_matches_samples() {
        let (_, net) = sample_net();
        let obj = net_to_obj(&net);
        let l_count = obj.lines().filter(|l| l.starts_with("l ")).count();
        let expected: usize = net
            .graph()
            .edges()
            .iter()
            .map(|e| net.edge_curve(e.id).sample_count() - 1)
            .sum();
        assert_eq!(l_count, expected);
        assert!(obj.contains("multiplicity 3"));
    }

    #[test]
    fn csv_has_declared_columns() {
        let (_, net) = sample_net();
        let csv = net_to_csv(&net);
        let header = csv.lines().next().unwrap();
        assert_eq!(header, "edge_id,s,x1,x2,x3");
        let rows = csv.lines().count() - 1;
        assert_eq!(rows, net.edge_curve(EdgeId(0)).sample_count());
    }

    #[test]
    fn manifold_specs_build() {
        let specs = [
            r#"{"type":"flat_torus","periods":[1.0,1.0,1.0],"injectivity_radius":0.5}"#,
            r#"{"type":"hypersurface","shape":{"shape":"sphere","dim":2,"radius":1.0},"injectivity_radius":3.1}"#,
            r#"{"type":"hypersurface","shape":{"shape":"ellipsoid","semi_axes":[1.0,1.1,1.2]},"injectivity_radius":1.0}"#,
            r#"{"type":"hypersurface","shape":{"shape":"product_s1_s2","r1":1.0,"r2":0.7},"injectivity_radius":1.0}"#,
        ];
        for s in specs {
            let spec: ManifoldSpec = serde_json::from_str(s).unwrap();
            spec.build().unwrap();
        }
    }
}
