//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Shared pipeline outputs (the shipped single-tilt scenarios and the dyadic
//! tilt sweep) are computed once and reused across criteria.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use geonet::backends::{FlatTorus, StereoHypersurface};
use geonet::conformal::{conformal_metric, ScalarField};
use geonet::construction::{build_eyeglass, build_figure_eight, choose_rational_tilt, BuildOptions};
use geonet::curve::DiscretizedCurve;
use geonet::error::GeonetError;
use geonet::geodesic::{
    exp_map, geodesic_bvp, geodesic_log, integrate_geodesic, parallel_transport, BvpOptions,
    IntegrationParams,
};
use geonet::metric::{ChartPoint, MetricField};
use geonet::net::{is_stationary, EdgeId, EdgeSpec, GammaNet, VertexId, WeightedMultigraph};
use geonet::scenario::{load_scenario, run_scenario, RunReport};
use geonet::solver::{continue_net, ContinuationOptions};
use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn out_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("geonet-acceptance-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn flat3() -> MetricField {
    FlatTorus::unit(3).field(None).unwrap()
}

fn coord_circle(metric: &MetricField, axis: usize, offset: &[f64]) -> DiscretizedCurve {
    let p = ChartPoint::from_slice(0, offset);
    let mut v = DVector::zeros(offset.len());
    v[axis] = 1.0;
    let period = metric.backend().periods(0).unwrap()[axis];
    integrate_geodesic(metric, &p, &v, period, IntegrationParams::default())
        .unwrap()
        .with_closed(true)
}

struct ScenarioOutcome {
    report: RunReport,
    elapsed_s: f64,
}

fn eyeglass_scenario() -> &'static ScenarioOutcome {
    static CELL: OnceLock<ScenarioOutcome> = OnceLock::new();
    CELL.get_or_init(|| {
        let sc = load_scenario(&scenario_dir().join("flat_t3_eyeglass.json")).unwrap();
        let t0 = Instant::now();
        let report = run_scenario(&sc, &out_dir("eyeglass"), 1, 7).unwrap();
        ScenarioOutcome {
            report,
            elapsed_s: t0.elapsed().as_secs_f64(),
        }
    })
}

fn figure8_scenario() -> &'static ScenarioOutcome {
    static CELL: OnceLock<ScenarioOutcome> = OnceLock::new();
    CELL.get_or_init(|| {
        let sc = load_scenario(&scenario_dir().join("flat_t3_figure8.json")).unwrap();
        let t0 = Instant::now();
        let report = run_scenario(&sc, &out_dir("figure8"), 1, 7).unwrap();
        ScenarioOutcome {
            report,
            elapsed_s: t0.elapsed().as_secs_f64(),
        }
    })
}

fn eyeglass_sweep() -> &'static RunReport {
    static CELL: OnceLock<RunReport> = OnceLock::new();
    CELL.get_or_init(|| {
        // The timed single-tilt scenarios go first so their runtime
        // measurements are not distorted by sweep contention.
        let _ = eyeglass_scenario();
        let _ = figure8_scenario();
        let sc = load_scenario(&scenario_dir().join("flat_t3_eyeglass_sweep.json")).unwrap();
        run_scenario(&sc, &out_dir("eyeglass-sweep"), 2, 7).unwrap()
    })
}

#[test]
fn criterion_01_conformal_kill_identity() {
    let eg = eyeglass_scenario();
    let f8 = figure8_scenario();
    let er = eg.report.runs[0].eyeglass.as_ref().unwrap();
    let fr = f8.report.runs[0].figure_eight.as_ref().unwrap();
    for (name, direct, formula, agree) in [
        ("eyeglass", er.kill_residual_direct, er.kill_residual_formula, er.route_agreement),
        ("figure-eight", fr.kill_residual_direct, fr.kill_residual_formula, fr.route_agreement),
    ] {
        assert!(direct < 1e-6, "{name}: direct-route residual {direct:.3e}");
        assert!(formula < 1e-6, "{name}: formula-route residual {formula:.3e}");
        assert!(agree < 1e-5, "{name}: route disagreement {agree:.3e}");
    }
    assert!(
        eg.elapsed_s < 60.0 && f8.elapsed_s < 60.0,
        "runtimes: eyeglass {:.1}s, figure-eight {:.1}s",
        eg.elapsed_s,
        f8.elapsed_s
    );
    println!(
        "[criterion 01] PASS conformal kill identity: residuals (eyeglass {:.2e}/{:.2e}, figure-eight {:.2e}/{:.2e}) < 1e-6, route agreement < 1e-5, runtimes {:.1}s/{:.1}s < 60s",
        er.kill_residual_direct, er.kill_residual_formula,
        fr.kill_residual_direct, fr.kill_residual_formula,
        eg.elapsed_s, f8.elapsed_s
    );
}

#[test]
fn criterion_02_junction_balance_over_sweep() {
    let sweep = eyeglass_sweep();
    assert_eq!(sweep.runs.len(), 6, "sweep covers t = 2^-3 .. 2^-8");
    let mut worst_balance = 0.0f64;
    let mut worst_defect = 0.0f64;
    for run in &sweep.runs {
        let rep = run.eyeglass.as_ref().unwrap();
        worst_balance = worst_balance
            .max(rep.junction_balance_error_a)
            .max(rep.junction_balance_error_b);
        worst_defect = worst_defect.max(rep.vertex_defect_sup);
    }
    assert!(
        worst_balance < 1e-8,
        "inward-tangent sum vs -lambda rho_dot error {worst_balance:.3e}"
    );
    assert!(worst_defect < 1e-8, "full vertex defect {worst_defect:.3e}");
    println!(
        "[criterion 02] PASS junction balance: worst branch-sum error {worst_balance:.2e}, worst full defect {worst_defect:.2e} over t = 2^-3..2^-8"
    );
}

#[test]
fn criterion_03_rational_multiplicity_exactness() {
    // The stated instance: r = 4, t = 3 gives lambda = 6/5 with (m, n) = (5, 6).
    let rt = choose_rational_tilt(4.0, 3.0, 64).unwrap();
    assert_eq!((rt.m, rt.n), (5, 6));
    assert!((rt.t - 3.0).abs() < 1e-12);
    // Every produced plan: n/m in lowest terms and the tilt inverted from the
    // rational, so lambda(t) m = n holds identically; verified numerically to
    // a few ulp on every sweep plan.
    fn gcd(mut a: u64, mut b: u64) -> u64 {
        while b != 0 {
            let r = a % b;
            a = b;
            b = r;
        }
        a
    }
    let sweep = eyeglass_sweep();
    for run in &sweep.runs {
        let rep = run.eyeglass.as_ref().unwrap();
        assert_eq!(gcd(rep.multiplicity_n as u64, rep.multiplicity_m as u64), 1);
        let lambda_of_t = 2.0 * rep.t / (rep.r * rep.r + rep.t * rep.t).sqrt();
        let defect = (lambda_of_t * rep.multiplicity_m as f64 - rep.multiplicity_n as f64).abs();
        assert!(
            defect < 1e-12,
            "m lambda(t) - n = {defect:.3e} for (m, n) = ({}, {})",
            rep.multiplicity_m,
            rep.multiplicity_n
        );
    }
    println!(
        "[criterion 03] PASS rational multiplicities: (m, n) = (5, 6) at r=4, t=3; m·lambda = n exact (reduced pairs, tilt inverted from the rational) on all sweep plans"
    );
}

#[test]
fn criterion_04_figure_eight_vertex_balance_and_supports() {
    let f8 = figure8_scenario();
    let rep = f8.report.runs[0].figure_eight.as_ref().unwrap();
    assert_eq!(
        rep.raw_velocity_cancellation, 0.0,
        "chart-level cancellation must be exact to machine precision"
    );
    assert!(rep.vertex_defect_sup < 1e-8, "defect {:.3e}", rep.vertex_defect_sup);
    assert!(rep.separation > 0.0);
    assert!(
        rep.support_separation > rep.separation / 2.0,
        "support separation {:.4} vs d/2 = {:.4}",
        rep.support_separation,
        rep.separation / 2.0
    );
    println!(
        "[criterion 04] PASS figure-eight balance: exact chart cancellation, defect {:.2e} < 1e-8 under g*, support separation {:.3} > d/2 = {:.3}",
        rep.vertex_defect_sup, rep.support_separation, rep.separation / 2.0
    );
}

#[test]
fn criterion_05_smallness_trends() {
    let sweep = eyeglass_sweep();
    let trends = sweep.trends.as_ref().expect("sweep produces trends");
    let slack = 0.05;
    let names = ["u_ck2", "k_ck", "f_ck", "g_ck"];
    let series = [
        &trends.u_ck2_norms,
        &trends.k_ck_norms,
        &trends.f_ck_norms,
        &trends.g_ck_distances,
    ];
    for (name, values) in names.iter().zip(series) {
        for w in values.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + slack),
                "{name} not non-increasing within 5%: {} -> {}",
                w[0],
                w[1]
            );
        }
        let ratio = values[values.len() - 1] / values[0];
        assert!(ratio < 0.1, "{name} final/first = {ratio:.3} >= 10%");
    }
    println!(
        "[criterion 05] PASS smallness trends over t = 2^-3..2^-8 (k=1): final/first ratios u {:.3e}, k {:.3e}, f {:.3e}, g {:.3e} (all < 0.1, monotone within 5%)",
        trends.u_ck2_norms[5] / trends.u_ck2_norms[0],
        trends.k_ck_norms[5] / trends.k_ck_norms[0],
        trends.f_ck_norms[5] / trends.f_ck_norms[0],
        trends.g_ck_distances[5] / trends.g_ck_distances[0],
    );
}

#[test]
fn criterion_06_connector_matching_k1_and_k2() {
    // k = 1 from the shipped scenario.
    let eg = eyeglass_scenario();
    let _ = figure8_scenario();
    let rep = eg.report.runs[0].eyeglass.as_ref().unwrap();
    let mut worst_k1 = 0.0f64;
    for set in &rep.connector_matching {
        assert_eq!(set.len(), 1 + 1 + 2, "orders 0..k+2 with k = 1");
        for m in set {
            worst_k1 = worst_k1.max(m.relative_residual);
        }
    }
    assert!(worst_k1 < 1e-5, "k=1 worst matching residual {worst_k1:.3e}");
    // k = 2 build.
    let metric = flat3();
    let alpha = coord_circle(&metric, 0, &[0.0, 0.0, 0.0]);
    let beta = coord_circle(&metric, 0, &[0.0, 0.3, 0.0]);
    let build = build_eyeglass(
        &metric,
        &alpha,
        &beta,
        0.06,
        2,
        &BuildOptions {
            connector_span: Some(0.3),
            ..Default::default()
        },
    )
    .unwrap();
    let mut worst_k2 = 0.0f64;
    for set in &build.report.connector_matching {
        assert_eq!(set.len(), 5, "orders 0..k+2 with k = 2");
        for m in set {
            worst_k2 = worst_k2.max(m.relative_residual);
        }
    }
    assert!(worst_k2 < 1e-5, "k=2 worst matching residual {worst_k2:.3e}");
    build.verified().unwrap();
    println!(
        "[criterion 06] PASS connector matching orders 0..k+2: worst relative residual {worst_k1:.2e} (k=1), {worst_k2:.2e} (k=2), both < 1e-5"
    );
}

#[test]
fn criterion_07_net_classification() {
    let metric = flat3();
    // Closed geodesics at several multiplicities are never essential.
    for mult in 1..=5u32 {
        let curve = coord_circle(&metric, 0, &[0.0, 0.0, 0.0]);
        let graph = WeightedMultigraph::new(
            vec![VertexId(0)],
            vec![EdgeSpec {
                id: EdgeId(0),
                endpoints: [VertexId(0), VertexId(0)],
                multiplicity: mult,
            }],
        )
        .unwrap();
        let mut positions = std::collections::BTreeMap::new();
        positions.insert(VertexId(0), curve.start());
        let mut curves = std::collections::BTreeMap::new();
        curves.insert(EdgeId(0), curve);
        let net = GammaNet::new(graph, positions, curves).unwrap();
        let rep = is_stationary(&metric, &net, 1e-6).unwrap();
        assert!(rep.stationary && rep.embedded && !rep.essential, "multiplicity {mult}");
    }
    // Every shipped construction is essential and embedded.
    let eg = eyeglass_scenario().report.runs[0].eyeglass.as_ref().unwrap().clone();
    let f8 = figure8_scenario().report.runs[0].figure_eight.as_ref().unwrap().clone();
    assert!(eg.stationarity.essential && eg.stationarity.embedded);
    assert!(f8.stationarity.essential && f8.stationarity.embedded);
    for run in &eyeglass_sweep().runs {
        let rep = run.eyeglass.as_ref().unwrap();
        assert!(rep.stationarity.essential && rep.stationarity.embedded, "t = {}", run.t_target);
    }
    println!(
        "[criterion 07] PASS net classification: closed geodesics (multiplicity 1..5) never essential; all 8 shipped constructions essential and embedded"
    );
}

#[test]
fn criterion_08_numerical_geometry_oracles() {
    // Great-circle BVP on the unit sphere.
    let s2 = StereoHypersurface::sphere(2, 1.0)
        .field(std::f64::consts::PI)
        .unwrap();
    let mut rng = StdRng::seed_from_u64(11);
    let mut worst_bvp = 0.0f64;
    for _ in 0..4 {
        let a = ChartPoint::from_slice(0, &[rng.gen_range(0.6..1.1), rng.gen_range(-0.3..0.3)]);
        let b = ChartPoint::from_slice(0, &[rng.gen_range(-1.1..-0.6), rng.gen_range(-0.3..0.3)]);
        let ea = s2.embed(&a).unwrap();
        let eb = s2.embed(&b).unwrap();
        let theta = ea.dot(&eb).clamp(-1.0, 1.0).acos();
        let c = geodesic_bvp(&s2, &a, &b, None, BvpOptions::default()).unwrap();
        let (s0, s1) = c.param_span();
        for i in 0..c.sample_count() {
            let f = (c.params()[i] - s0) / (s1 - s0);
            let arc = (&ea * ((1.0 - f) * theta).sin() + &eb * (f * theta).sin()) / theta.sin();
            worst_bvp = worst_bvp.max((s2.embed(&c.point(i)).unwrap() - arc).norm());
        }
    }
    assert!(worst_bvp < 1e-7, "great-circle BVP error {worst_bvp:.3e}");

    // Parallel-transport inner products on the ellipsoid.
    let ell = StereoHypersurface::ellipsoid(vec![1.0, 1.1, 1.2])
        .unwrap()
        .field(1.0)
        .unwrap();
    let p = ChartPoint::from_slice(0, &[0.15, 0.25]);
    let c = integrate_geodesic(
        &ell,
        &p,
        &DVector::from_column_slice(&[0.5, -0.3]),
        1.5,
        IntegrationParams::default(),
    )
    .unwrap();
    let g0 = ell.eval(&p).unwrap();
    let gend = ell.eval(&c.end()).unwrap();
    let mut worst_drift = 0.0f64;
    for _ in 0..5 {
        let u = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let w = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let before = (u.transpose() * &g0 * &w)[(0, 0)];
        let tu = parallel_transport(&ell, &c, &u).unwrap();
        let tw = parallel_transport(&ell, &c, &w).unwrap();
        let after = (tu.transpose() * &gend * &tw)[(0, 0)];
        worst_drift = worst_drift.max((before - after).abs() / before.abs().max(1.0));
    }
    assert!(worst_drift < 1e-10, "transport drift {worst_drift:.3e}");

    // exp/BVP velocity round-trip on S^3.
    let s3 = StereoHypersurface::sphere(3, 1.0)
        .field(std::f64::consts::PI)
        .unwrap();
    let mut worst_rt = 0.0f64;
    for _ in 0..3 {
        let p = ChartPoint::from_slice(
            0,
            &[rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)],
        );
        let mut w = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        w *= rng.gen_range(0.3..1.2) / s3.norm(&p, &w).unwrap();
        let q = exp_map(&s3, &p, &w, IntegrationParams::default()).unwrap();
        let v = geodesic_log(&s3, &p, &q, None, BvpOptions::default()).unwrap();
        worst_rt = worst_rt.max((&v - &w).norm() / w.norm());
    }
    assert!(worst_rt < 1e-7, "exp/BVP round-trip error {worst_rt:.3e}");

    // Refinement order: endpoint error drops at the integrator's nominal
    // order (4) within ±1 when the step halves.
    let p = ChartPoint::from_slice(0, &[0.2, -0.1]);
    let v = DVector::from_column_slice(&[0.7, 0.4]);
    let reference = integrate_geodesic(&ell, &p, &v, 1.0, IntegrationParams::with_step(1e-4))
        .unwrap()
        .end()
        .coords;
    let err = |step: f64| {
        (integrate_geodesic(&ell, &p, &v, 1.0, IntegrationParams::with_step(step))
            .unwrap()
            .end()
            .coords
            - &reference)
            .norm()
    };
    let e1 = err(8e-3);
    let e2 = err(4e-3);
    let order = (e1 / e2).log2();
    assert!(
        (3.0..=5.0).contains(&order),
        "observed refinement order {order:.2} outside 4 ± 1"
    );
    println!(
        "[criterion 08] PASS geometry oracles: BVP sup error {worst_bvp:.2e} < 1e-7, transport drift {worst_drift:.2e} < 1e-10, exp/BVP round-trip {worst_rt:.2e} < 1e-7, refinement order {order:.2} in 4±1"
    );
}

struct ScaledField {
    inner: std::sync::Arc<dyn ScalarField>,
    scale: f64,
}

impl ScalarField for ScaledField {
    fn eval(&self, p: &ChartPoint) -> geonet::error::Result<f64> {
        Ok(self.scale * self.inner.eval(p)?)
    }
    fn eval_with_gradient(&self, p: &ChartPoint) -> geonet::error::Result<(f64, DVector<f64>)> {
        let (v, g) = self.inner.eval_with_gradient(p)?;
        Ok((self.scale * v, g * self.scale))
    }
    fn describe(&self) -> String {
        format!("{} x {}", self.scale, self.inner.describe())
    }
}

#[test]
fn criterion_09_continuation() {
    // Wait for the timed scenarios (runtime fairness on a small machine).
    let _ = eyeglass_scenario();
    let _ = figure8_scenario();
    let metric = flat3();
    let alpha = coord_circle(&metric, 0, &[0.0, 0.0, 0.0]);
    let beta = coord_circle(&metric, 0, &[0.0, 0.3, 0.0]);
    // A gentle tilt with generous connector spans keeps the perturbed
    // metric mild enough for the continuation integrations.
    let opts = BuildOptions {
        connector_span: Some(0.3),
        ..Default::default()
    };
    let base = build_eyeglass(&metric, &alpha, &beta, 0.02, 1, &opts).unwrap();
    base.verified().unwrap();

    // (a) Metric change from a genuinely different tilt: g_{t'}* with
    // |t - t'| = 1e-3. The continued net keeps the original multiplicities
    // and combinatorial type.
    let shifted = build_eyeglass(&metric, &alpha, &beta, 0.021, 1, &opts).unwrap();
    assert!(
        (shifted.report.t - base.report.t).abs() > 1e-4,
        "tilts must differ: {} vs {}",
        base.report.t,
        shifted.report.t
    );
    let cont_opts = ContinuationOptions::default();
    let (continued, info) =
        continue_net(&shifted.perturbed_metric, &base.net, cont_opts).unwrap();
    assert_eq!(
        continued.graph().edges().len(),
        base.net.graph().edges().len()
    );
    for (e_old, e_new) in base
        .net
        .graph()
        .edges()
        .iter()
        .zip(continued.graph().edges())
    {
        assert_eq!(e_old.multiplicity, e_new.multiplicity);
        assert_eq!(e_old.endpoints, e_new.endpoints);
    }
    let rep = is_stationary(&shifted.perturbed_metric, &continued, 1e-6).unwrap();
    assert!(rep.stationary, "continued net not stationary: {rep:?}");
    assert!(rep.essential && rep.embedded);
    assert!(info.displacement > 0.0 && info.displacement < 0.05);

    // (b) Linear displacement scaling across three decades of a smooth
    // conformal perturbation family through g*.
    let field = base.stack.sum_field();
    let mut rates = Vec::new();
    for delta in [1e-3, 1e-4, 1e-5] {
        let scaled = conformal_metric(
            &metric,
            std::sync::Arc::new(ScaledField {
                inner: field.clone(),
                scale: 1.0 + delta,
            }),
        )
        .unwrap();
        let (_, info) = continue_net(&scaled, &base.net, cont_opts).unwrap();
        rates.push(info.max_vertex_displacement / delta);
    }
    let rate_max = rates.iter().cloned().fold(f64::MIN, f64::max);
    let rate_min = rates.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        rate_max / rate_min < 2.0,
        "displacement/delta rates {rates:?} vary by more than 2x"
    );
    println!(
        "[criterion 09] PASS continuation: |Δt| = 1e-3 metric change continued with identical combinatorial type (displacement {:.2e}); vertex displacement/Δ rates {:.3?} within factor {:.2} over three decades",
        info.displacement, rates, rate_max / rate_min
    );
}

#[test]
fn criterion_10_degenerate_input_handling() {
    let metric = flat3();
    // Intersecting curves into Case 1.
    let alpha = coord_circle(&metric, 0, &[0.0, 0.0, 0.0]);
    let crossing = coord_circle(&metric, 1, &[0.0, 0.0, 0.0]);
    let err = match build_eyeglass(&metric, &alpha, &crossing, 0.05, 1, &BuildOptions::default()) {
        Err(e) => e,
        Ok(_) => panic!("intersecting inputs must fail Case 1"),
    };
    let intersects = matches!(
        &err,
        GeonetError::Stage { source, .. } if matches!(**source, GeonetError::Intersection(_))
    );
    assert!(intersects, "{err:?}");

    // Tangential intersection into Case 2.
    let same = coord_circle(&metric, 0, &[0.0, 0.0, 0.0]);
    let v = ChartPoint::from_slice(0, &[0.0, 0.0, 0.0]);
    let err = match build_figure_eight(
        &metric,
        &alpha,
        &same,
        &v,
        0.1,
        1,
        None,
        &BuildOptions::default(),
    ) {
        Err(e) => e,
        Ok(_) => panic!("tangential intersection must fail Case 2"),
    };
    let degenerate = matches!(
        &err,
        GeonetError::Stage { source, .. } if matches!(**source, GeonetError::Degeneracy(_))
    );
    assert!(degenerate, "{err:?}");

    // Antipodal BVP ambiguity.
    let s2 = StereoHypersurface::sphere(2, 1.0)
        .field(std::f64::consts::PI)
        .unwrap();
    let p = ChartPoint::from_slice(0, &[0.3, 0.0]);
    let q = ChartPoint::from_slice(0, &[-0.3 / 0.09, 0.0]);
    let err = geodesic_bvp(&s2, &p, &q, None, BvpOptions::default()).unwrap_err();
    assert!(matches!(err, GeonetError::Ambiguity(_)), "{err:?}");

    println!(
        "[criterion 10] PASS degenerate inputs: Case 1 intersection error, Case 2 degeneracy error, antipodal BVP ambiguity error"
    );
}
