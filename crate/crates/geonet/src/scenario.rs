//! Scenario ingestion, pipeline orchestration, and verification reporting.
//!
//! A scenario names a manifold, two closed-geodesic seeds, the case to build
//! (eyeglass or figure-eight), a tilt (single value or a dyadic sweep), the
//! smoothness order k, and tolerance overrides. Reports carry every residual,
//! norm, and trend, each with its tolerance and grid, and are deterministic
//! given the scenario and the probe seed.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construction::{
    build_eyeglass, build_figure_eight, BuildOptions, EyeglassReport, FigureEightReport,
};
use crate::curve::DiscretizedCurve;
use crate::error::{GeonetError, Result};
use crate::export::{
    load_metric_spec, load_net, metric_spec_from_stack, net_to_csv, net_to_obj, save_net,
    ManifoldSpec, MetricSpecFile, NetFile,
};
use crate::geodesic::{integrate_geodesic, IntegrationParams};
use crate::metric::{ChartPoint, MetricField};
use crate::net::{is_stationary_with, ReportOptions, StationarityReport};
use crate::report::write_json;
use crate::solver::{find_closed_geodesic, ClosedGeodesicOptions};

pub const DEFAULT_SEED: u64 = 1729;

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub stationarity: f64,
    pub defect: f64,
    pub orthogonality: f64,
    pub connector_match: f64,
    pub route_agreement: f64,
    pub embed_clearance: f64,
    pub essential_angle: f64,
    pub input_residual: f64,
    pub trend_slack: f64,
    pub trend_final_ratio: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            stationarity: 1e-6,
            defect: 1e-8,
            orthogonality: 1e-6,
            connector_match: 1e-5,
            route_agreement: 1e-5,
            embed_clearance: 1e-4,
            essential_angle: 1e-3,
            input_residual: 1e-6,
            trend_slack: 0.05,
            trend_final_ratio: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SeedSpec {
    /// Coordinate-axis circle on a flat torus through `offset` (an exact
    /// geodesic).
    CoordinateCircle { axis: usize, offset: Vec<f64> },
    /// The |x| = 1 circle of chart 0: the equator of a sphere, a principal
    /// section of an ellipsoid.
    ChartUnitCircle {
        #[serde(default)]
        samples: Option<usize>,
    },
    /// Explicit samples, relaxed to a closed geodesic.
    Points {
        chart: usize,
        points: Vec<Vec<f64>>,
        #[serde(default)]
        relax: Option<bool>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TiltSpec {
    Single(f64),
    Sweep { sweep: [i32; 2] },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioInputs {
    pub alpha: SeedSpec,
    pub beta: SeedSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_schema")]
    pub schema_version: String,
    pub manifold: ManifoldSpec,
    pub case: CaseKind,
    pub inputs: ScenarioInputs,
    pub t: TiltSpec,
    pub k: usize,
    #[serde(default = "default_m_max")]
    pub m_max: u32,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub out_dir: Option<String>,
    /// Figure-eight: intersection point (auto-detected when omitted).
    #[serde(default)]
    pub intersection: Option<Vec<f64>>,
    /// Figure-eight: physical radius of the rescaled chart.
    #[serde(default)]
    pub chart_radius: Option<f64>,
    #[serde(default)]
    pub samples_per_unit: Option<usize>,
    /// Case-1 connector span override (the knots s0, s4 are free).
    #[serde(default)]
    pub connector_span: Option<f64>,
}

fn default_schema() -> String {
    crate::export::SCHEMA_VERSION.to_string()
}

fn default_m_max() -> u32 {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    Eyeglass,
    FigureEight,
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let data = std::fs::read_to_string(path)
        .map_err(|e| GeonetError::Schema(format!("cannot read scenario {path:?}: {e}")))?;
    let scenario: Scenario = serde_json::from_str(&data)
        .map_err(|e| GeonetError::Schema(format!("scenario {path:?}: {e}")))?;
    validate_scenario(&scenario)?;
    Ok(scenario)
}

pub fn validate_scenario(s: &Scenario) -> Result<()> {
    if s.schema_version != crate::export::SCHEMA_VERSION {
        return Err(GeonetError::Schema(format!(
            "unsupported schema_version {:?}",
            s.schema_version
        )));
    }
    if s.k == 0 || s.k > 2 {
        return Err(GeonetError::Schema(format!(
            "k = {} out of the supported range 1..=2",
            s.k
        )));
    }
    if s.m_max == 0 {
        return Err(GeonetError::Schema("m_max must be positive".into()));
    }
    match &s.t {
        TiltSpec::Single(t) if !(*t > 0.0) => {
            return Err(GeonetError::Schema("t must be positive".into()))
        }
        TiltSpec::Sweep { sweep } if sweep[0] > sweep[1] => {
            return Err(GeonetError::Schema(
                "sweep bounds must satisfy j_min <= j_max".into(),
            ))
        }
        _ => {}
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Seed materialization
// ---------------------------------------------------------------------------

pub fn materialize_seed(
    metric: &MetricField,
    seed: &SeedSpec,
    samples_per_unit: usize,
) -> Result<DiscretizedCurve> {
    match seed {
        SeedSpec::CoordinateCircle { axis, offset } => {
            if metric.backend().periods(0).is_none() {
                return Err(GeonetError::Schema(
                    "coordinate_circle seeds need a periodic (torus) backend".into(),
                ));
            }
            let periods = metric.backend().periods(0).unwrap();
            if *axis >= metric.dim() {
                return Err(GeonetError::Schema(format!(
                    "axis {axis} out of range for dimension {}",
                    metric.dim()
                )));
            }
            let p = ChartPoint::from_slice(0, offset);
            let mut v = DVector::zeros(metric.dim());
            v[*axis] = 1.0;
            let curve = integrate_geodesic(
                metric,
                &p,
                &v,
                periods[*axis],
                IntegrationParams::with_step(1.0 / samples_per_unit as f64),
            )?;
            Ok(curve.with_closed(true))
        }
        SeedSpec::ChartUnitCircle { samples } => {
            let n = samples.unwrap_or(8 * samples_per_unit);
            if metric.dim() != 2 {
                return Err(GeonetError::Schema(
                    "chart_unit_circle seeds target 2-dimensional chart backends".into(),
                ));
            }
            let total = std::f64::consts::TAU;
            let params: Vec<f64> = (0..=n).map(|i| total * i as f64 / n as f64).collect();
            let seed_curve = DiscretizedCurve::from_fn(
                0,
                params,
                |s| DVector::from_column_slice(&[s.cos(), s.sin()]),
                |s| DVector::from_column_slice(&[-s.sin(), s.cos()]),
                true,
            )?;
            find_closed_geodesic(metric, &seed_curve, ClosedGeodesicOptions::default())
        }
        SeedSpec::Points {
            chart,
            points,
            relax,
        } => {
            let n = points.len();
            if n < 8 {
                return Err(GeonetError::Schema(
                    "points seeds need at least 8 samples".into(),
                ));
            }
            let params: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let curve = DiscretizedCurve::new(
                params,
                vec![*chart; n],
                points.iter().map(|p| DVector::from_column_slice(p)).collect(),
                None,
                true,
            )?;
            if relax.unwrap_or(true) {
                find_closed_geodesic(metric, &curve, ClosedGeodesicOptions::default())
            } else {
                Ok(curve)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Run reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CaseRun {
    pub t_target: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eyeglass: Option<EyeglassReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub figure_eight: Option<FigureEightReport>,
    pub pass: bool,
    pub failures: Vec<String>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendReport {
    pub t_targets: Vec<f64>,
    pub u_ck2_norms: Vec<f64>,
    pub k_ck_norms: Vec<f64>,
    pub f_ck_norms: Vec<f64>,
    pub g_ck_distances: Vec<f64>,
    pub h_ck2_norms: Vec<f64>,
    pub slack: f64,
    pub final_ratio_bound: f64,
    pub monotone_within_slack: bool,
    pub final_ratios: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub seed: u64,
    pub metric_derivative_consistency: f64,
    pub min_metric_eigenvalue: f64,
    pub probes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: String,
    pub case: String,
    pub manifold: String,
    pub seed: u64,
    pub k: usize,
    pub tolerances: Tolerances,
    pub runs: Vec<CaseRun>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trends: Option<TrendReport>,
    pub probes: ProbeReport,
    pub pass: bool,
    pub failures: Vec<String>,
}

fn tilt_targets(t: &TiltSpec) -> Vec<f64> {
    match t {
        TiltSpec::Single(v) => vec![*v],
        TiltSpec::Sweep { sweep } => (sweep[0]..=sweep[1]).map(|j| 2.0f64.powi(-j)).collect(),
    }
}

fn build_options(s: &Scenario) -> BuildOptions {
    BuildOptions {
        samples_per_unit: s.samples_per_unit.unwrap_or(2048),
        input_residual_tol: s.tolerances.input_residual,
        orthogonality_tol: s.tolerances.orthogonality,
        m_max: s.m_max,
        stationarity_tol: s.tolerances.stationarity,
        defect_tol: s.tolerances.defect,
        route_agreement_tol: s.tolerances.route_agreement,
        connector_match_tol: s.tolerances.connector_match,
        connector_span: s.connector_span,
        ..Default::default()
    }
}

fn eyeglass_run_failures(rep: &EyeglassReport, tol: &Tolerances) -> Vec<String> {
    let mut f = Vec::new();
    if !rep.stationarity.stationary {
        f.push(format!(
            "not stationary: max edge residual {:.3e}, max defect {:.3e} (tol {:.1e})",
            rep.stationarity.max_edge_residual, rep.stationarity.max_vertex_defect, tol.stationarity
        ));
    }
    if !rep.stationarity.embedded {
        f.push("not embedded".into());
    }
    if !rep.stationarity.essential {
        f.push("not essential".into());
    }
    if rep.vertex_defect_sup >= tol.defect {
        f.push(format!(
            "vertex defect {:.3e} >= {:.1e}",
            rep.vertex_defect_sup, tol.defect
        ));
    }
    if rep.junction_balance_error_a >= tol.defect || rep.junction_balance_error_b >= tol.defect {
        f.push(format!(
            "junction balance errors ({:.3e}, {:.3e}) >= {:.1e}",
            rep.junction_balance_error_a, rep.junction_balance_error_b, tol.defect
        ));
    }
    if rep.kill_residual_direct >= tol.stationarity || rep.kill_residual_formula >= tol.stationarity
    {
        f.push(format!(
            "kill residuals ({:.3e}, {:.3e}) >= {:.1e}",
            rep.kill_residual_direct, rep.kill_residual_formula, tol.stationarity
        ));
    }
    if rep.route_agreement >= tol.route_agreement {
        f.push(format!(
            "route disagreement {:.3e} >= {:.1e}",
            rep.route_agreement, tol.route_agreement
        ));
    }
    for set in &rep.connector_matching {
        for m in set {
            if m.relative_residual >= tol.connector_match {
                f.push(format!(
                    "connector matching order {} residual {:.3e} >= {:.1e}",
                    m.order, m.relative_residual, tol.connector_match
                ));
            }
        }
    }
    if !(rep.support_separation > 0.0) {
        f.push("conformal supports are not separated".into());
    }
    f
}

fn figure_eight_run_failures(rep: &FigureEightReport, tol: &Tolerances) -> Vec<String> {
    let mut f = Vec::new();
    if !rep.stationarity.stationary {
        f.push(format!(
            "not stationary: max edge residual {:.3e}, max defect {:.3e} (tol {:.1e})",
            rep.stationarity.max_edge_residual, rep.stationarity.max_vertex_defect, tol.stationarity
        ));
    }
    if !rep.stationarity.embedded {
        f.push("not embedded".into());
    }
    if !rep.stationarity.essential {
        f.push("not essential".into());
    }
    if rep.vertex_defect_sup >= tol.defect {
        f.push(format!(
            "vertex defect {:.3e} >= {:.1e}",
            rep.vertex_defect_sup, tol.defect
        ));
    }
    if rep.vertex_balance_pre >= 1e-12 {
        f.push(format!(
            "pre-perturbation vertex balance {:.3e} not exact",
            rep.vertex_balance_pre
        ));
    }
    if rep.kill_residual_direct >= tol.stationarity || rep.kill_residual_formula >= tol.stationarity
    {
        f.push(format!(
            "kill residuals ({:.3e}, {:.3e}) >= {:.1e}",
            rep.kill_residual_direct, rep.kill_residual_formula, tol.stationarity
        ));
    }
    if rep.route_agreement >= tol.route_agreement {
        f.push(format!(
            "route disagreement {:.3e} >= {:.1e}",
            rep.route_agreement, tol.route_agreement
        ));
    }
    for set in &rep.connector_matching {
        for m in set {
            if m.relative_residual >= tol.connector_match {
                f.push(format!(
                    "connector matching order {} residual {:.3e} >= {:.1e}",
                    m.order, m.relative_residual, tol.connector_match
                ));
            }
        }
    }
    if !(rep.separation > 0.0) {
        f.push("arc separation d is not positive".into());
    }
    if rep.support_separation <= rep.separation / 2.0 {
        f.push(format!(
            "support separation {:.3e} <= d/2 = {:.3e}",
            rep.support_separation,
            rep.separation / 2.0
        ));
    }
    f
}

fn trend_check(values: &[f64], slack: f64, final_ratio_bound: f64) -> (bool, f64) {
    if values.len() < 2 {
        return (true, 0.0);
    }
    let monotone = values
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + slack));
    let ratio = values[values.len() - 1] / values[0].max(1e-300);
    (monotone && ratio < final_ratio_bound, ratio)
}

/// Execute a scenario: build the requested nets over the tilt targets, write
/// the report and geometry exports into `out_dir`, and return the report.
pub fn run_scenario(
    scenario: &Scenario,
    out_dir: &Path,
    jobs: usize,
    seed: u64,
) -> Result<RunReport> {
    validate_scenario(scenario)?;
    std::fs::create_dir_all(out_dir)?;
    let metric = scenario.manifold.build().map_err(|e| e.in_stage("manifold"))?;
    let opts = build_options(scenario);
    let alpha = materialize_seed(&metric, &scenario.inputs.alpha, opts.samples_per_unit)
        .map_err(|e| e.in_stage("seed-alpha"))?;
    let beta = materialize_seed(&metric, &scenario.inputs.beta, opts.samples_per_unit)
        .map_err(|e| e.in_stage("seed-beta"))?;
    let targets = tilt_targets(&scenario.t);
    let tol = scenario.tolerances;

    // Figure-eight: locate the intersection once.
    let intersection = if scenario.case == CaseKind::FigureEight {
        Some(match &scenario.intersection {
            Some(coords) => ChartPoint::from_slice(0, coords),
            None => detect_intersection(&metric, &alpha, &beta)?,
        })
    } else {
        None
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| GeonetError::Input(format!("thread pool: {e}")))?;

    struct RunSlot {
        t: f64,
        run: Result<CaseRunData>,
    }
    enum CaseRunData {
        Eyeglass(Box<crate::construction::EyeglassBuild>),
        FigureEight(Box<crate::construction::FigureEightBuild>),
    }

    let slots: Vec<RunSlot> = pool.install(|| {
        targets
            .par_iter()
            .map(|&t| {
                let run = match scenario.case {
                    CaseKind::Eyeglass => {
                        build_eyeglass(&metric, &alpha, &beta, t, scenario.k, &opts)
                            .map(|b| CaseRunData::Eyeglass(Box::new(b)))
                    }
                    CaseKind::FigureEight => build_figure_eight(
                        &metric,
                        &alpha,
                        &beta,
                        intersection.as_ref().unwrap(),
                        t,
                        scenario.k,
                        scenario.chart_radius,
                        &opts,
                    )
                    .map(|b| CaseRunData::FigureEight(Box::new(b))),
                };
                RunSlot { t, run }
            })
            .collect()
    });

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let single = targets.len() == 1;
    let mut last_metric: Option<MetricField> = None;
    let mut trend_rows: Vec<(f64, f64, f64, f64, f64, f64)> = Vec::new();
    for slot in slots {
        match slot.run {
            Err(e) => return Err(e),
            Ok(CaseRunData::Eyeglass(build)) => {
                let rep = build.report.clone();
                let run_failures = eyeglass_run_failures(&rep, &tol);
                let suffix = if single {
                    String::new()
                } else {
                    format!("_j{}", (-slot.t.log2()).round() as i32)
                };
                let artifacts = export_build_artifacts(
                    out_dir,
                    &suffix,
                    &build.net,
                    &scenario.manifold,
                    &build.stack,
                    scenario.k + 2,
                )?;
                trend_rows.push((
                    slot.t,
                    rep.u_ck2_norm,
                    rep.k_ck_norm,
                    rep.f_ck_norm,
                    rep.g_ck_distance.unwrap_or(0.0),
                    rep.h_ck2_norm,
                ));
                last_metric = Some(build.perturbed_metric.clone());
                runs.push(CaseRun {
                    t_target: slot.t,
                    eyeglass: Some(rep),
                    figure_eight: None,
                    pass: run_failures.is_empty(),
                    failures: run_failures,
                    artifacts,
                });
            }
            Ok(CaseRunData::FigureEight(build)) => {
                let rep = build.report.clone();
                let run_failures = figure_eight_run_failures(&rep, &tol);
                let suffix = if single {
                    String::new()
                } else {
                    format!("_j{}", (-slot.t.log2()).round() as i32)
                };
                let artifacts = export_build_artifacts(
                    out_dir,
                    &suffix,
                    &build.net,
                    &scenario.manifold,
                    &build.stack,
                    scenario.k + 2,
                )?;
                trend_rows.push((
                    slot.t,
                    rep.u_ck2_norm,
                    rep.k_ck_norm,
                    rep.f_ck_norm,
                    rep.g_ck_distance.unwrap_or(0.0),
                    rep.h_ck2_norm,
                ));
                last_metric = Some(build.perturbed_metric.clone());
                runs.push(CaseRun {
                    t_target: slot.t,
                    eyeglass: None,
                    figure_eight: Some(rep),
                    pass: run_failures.is_empty(),
                    failures: run_failures,
                    artifacts,
                });
            }
        }
    }
    for r in &runs {
        for f in &r.failures {
            failures.push(format!("t = {}: {f}", r.t_target));
        }
    }

    // Smallness trends over the sweep.
    let trends = if targets.len() >= 2 {
        trend_rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap()); // t decreasing
        let u: Vec<f64> = trend_rows.iter().map(|r| r.1).collect();
        let kk: Vec<f64> = trend_rows.iter().map(|r| r.2).collect();
        let ff: Vec<f64> = trend_rows.iter().map(|r| r.3).collect();
        let gg: Vec<f64> = trend_rows.iter().map(|r| r.4).collect();
        let hh: Vec<f64> = trend_rows.iter().map(|r| r.5).collect();
        let (pu, ru) = trend_check(&u, tol.trend_slack, tol.trend_final_ratio);
        let (pk, rk) = trend_check(&kk, tol.trend_slack, tol.trend_final_ratio);
        let (pf, rf) = trend_check(&ff, tol.trend_slack, tol.trend_final_ratio);
        let (pg, rg) = trend_check(&gg, tol.trend_slack, tol.trend_final_ratio);
        let pass = pu && pk && pf && pg;
        if !pass {
            failures.push("smallness trends violated".into());
        }
        Some(TrendReport {
            t_targets: trend_rows.iter().map(|r| r.0).collect(),
            u_ck2_norms: u,
            k_ck_norms: kk,
            f_ck_norms: ff,
            g_ck_distances: gg,
            h_ck2_norms: hh,
            slack: tol.trend_slack,
            final_ratio_bound: tol.trend_final_ratio,
            monotone_within_slack: pass,
            final_ratios: vec![ru, rk, rf, rg],
            pass,
        })
    } else {
        None
    };

    // Deterministic seeded probes of the final perturbed metric.
    let probes = {
        let m = last_metric.as_ref().unwrap_or(&metric);
        let mut rng = StdRng::seed_from_u64(seed);
        let center = alpha.start();
        let n_probes = 64;
        let radius = 0.2 * metric.injectivity_radius_bound();
        let consistency =
            crate::metric::verify_metric_derivatives(m, &center, radius, n_probes, &mut rng, 1e-5)
                .unwrap_or(f64::NAN);
        let min_eig =
            crate::metric::verify_positive_definite(m, &center, radius, n_probes, &mut rng)
                .unwrap_or(f64::NAN);
        ProbeReport {
            seed,
            metric_derivative_consistency: consistency,
            min_metric_eigenvalue: min_eig,
            probes: n_probes,
        }
    };

    let pass = failures.is_empty();
    let report = RunReport {
        schema_version: crate::export::SCHEMA_VERSION.to_string(),
        case: format!("{:?}", scenario.case),
        manifold: metric.describe(),
        seed,
        k: scenario.k,
        tolerances: tol,
        runs,
        trends,
        probes,
        pass,
        failures,
    };
    write_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}

fn export_build_artifacts(
    out_dir: &Path,
    suffix: &str,
    net: &crate::net::GammaNet,
    manifold: &ManifoldSpec,
    stack: &crate::conformal::ConformalStack,
    smoothness: usize,
) -> Result<Vec<String>> {
    let mut artifacts = Vec::new();
    let net_path = out_dir.join(format!("net{suffix}.json"));
    save_net(&net_path, net)?;
    artifacts.push(net_path.to_string_lossy().into_owned());
    let metric_path = out_dir.join(format!("metric{suffix}.json"));
    write_json(
        &metric_path,
        &metric_spec_from_stack(manifold.clone(), stack, smoothness),
    )?;
    artifacts.push(metric_path.to_string_lossy().into_owned());
    let obj_path = out_dir.join(format!("net{suffix}.obj"));
    std::fs::write(&obj_path, net_to_obj(net))?;
    artifacts.push(obj_path.to_string_lossy().into_owned());
    let csv_path = out_dir.join(format!("net{suffix}.csv"));
    std::fs::write(&csv_path, net_to_csv(net))?;
    artifacts.push(csv_path.to_string_lossy().into_owned());
    Ok(artifacts)
}

/// Locate a transversal intersection of two curves by the closest sample
/// pair.
fn detect_intersection(
    metric: &MetricField,
    alpha: &DiscretizedCurve,
    beta: &DiscretizedCurve,
) -> Result<ChartPoint> {
    let mut best = f64::INFINITY;
    let mut best_point = alpha.start();
    for i in 0..alpha.sample_count() {
        let pa = alpha.point(i);
        for j in 0..beta.sample_count() {
            let d = metric.proxy_distance(&pa, &beta.point(j));
            if d < best {
                best = d;
                best_point = pa.clone();
            }
        }
    }
    if best > 1e-6 {
        return Err(GeonetError::Input(format!(
            "curves do not intersect (closest samples {best:.3e} apart)"
        )));
    }
    Ok(best_point)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub schema_version: String,
    pub metric: String,
    pub stationarity: StationarityReport,
    pub net_edges: usize,
    pub net_vertices: usize,
}

/// Evaluate a stored net against a stored metric spec.
pub fn verify_net_file(
    net_path: &Path,
    metric_path: &Path,
    tol: &Tolerances,
) -> Result<VerifyReport> {
    let net_file = load_net(net_path)?;
    let metric_spec: MetricSpecFile = load_metric_spec(metric_path)?;
    let metric = metric_spec.build().map_err(|e| e.in_stage("metric-build"))?;
    let net = net_file.to_net().map_err(|e| e.in_stage("net-build"))?;
    net.validate(&metric, 1e-8).map_err(|e| e.in_stage("net-build"))?;
    let stationarity = is_stationary_with(
        &metric,
        &net,
        tol.stationarity,
        ReportOptions {
            embed_clearance: tol.embed_clearance,
            essential_angle_tol: tol.essential_angle,
        },
    )?;
    Ok(VerifyReport {
        schema_version: crate::export::SCHEMA_VERSION.to_string(),
        metric: metric.describe(),
        stationarity,
        net_edges: net.graph().edges().len(),
        net_vertices: net.graph().vertices().len(),
    })
}

/// Export a stored net into the requested format; returns the output path.
pub fn export_net_file(net_path: &Path, format: &str, out: Option<&Path>) -> Result<PathBuf> {
    let net_file = load_net(net_path)?;
    let net = net_file.to_net()?;
    let (data, ext) = match format {
        "json" => (crate::report::to_json_string(&NetFile::from_net(&net))?, "json"),
        "obj-polyline" => (net_to_obj(&net), "obj"),
        "csv" => (net_to_csv(&net), "csv"),
        other => {
            return Err(GeonetError::Schema(format!(
                "unknown export format {other:?} (expected json | obj-polyline | csv)"
            )))
        }
    };
    let out_path = match out {
        Some(p) => p.to_path_buf(),
        None => net_path.with_extension(format!("export.{ext}")),
    };
    std::fs::write(&out_path, data)?;
    Ok(out_path)
}

/// Resolve the probe seed: `GEONET_SEED` overrides the default.
pub fn probe_seed() -> u64 {
    std::env::var("GEONET_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DEFAULT_SEED)
}
