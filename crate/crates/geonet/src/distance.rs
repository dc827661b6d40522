//! Distance between disjoint closed curves, with first-order optimality.
//!
//! The realizing pair is located by a coarse sweep over sample pairs
//! (lexicographic tie-breaking on the grid indices keeps the result
//! deterministic when the minimizer is non-unique) and then polished by a
//! damped Newton iteration on the two orthogonality residuals
//! <rho', alpha'>_a and <rho', beta'>_b, which vanish at the minimum.

use nalgebra::{DMatrix, DVector};

use crate::curve::{segment_distance, DiscretizedCurve};
use crate::error::{GeonetError, Result};
use crate::geodesic::{geodesic_bvp, BvpOptions};
use crate::metric::{ChartPoint, MetricField};

#[derive(Debug, Clone, Copy)]
pub struct CurveDistanceOptions {
    pub bvp: BvpOptions,
    /// Below this separation the curves are reported as intersecting.
    pub intersection_clearance: f64,
    /// Convergence tolerance for the orthogonality residuals.
    pub orthogonality_tol: f64,
    pub max_iterations: usize,
}

impl Default for CurveDistanceOptions {
    fn default() -> Self {
        CurveDistanceOptions {
            bvp: BvpOptions::default(),
            intersection_clearance: 1e-6,
            orthogonality_tol: 1e-9,
            max_iterations: 40,
        }
    }
}

#[derive(Debug)]
pub struct CurveDistance {
    pub a: ChartPoint,
    pub b: ChartPoint,
    pub r: f64,
    pub rho: DiscretizedCurve,
    pub s_alpha: f64,
    pub s_beta: f64,
    /// |<unit rho', unit alpha'>| at a and |<unit rho', unit beta'>| at b.
    pub orthogonality_residuals: (f64, f64),
}

/// Proximity polyline for coarse sweeps: embedded coordinates when the
/// backend has an embedding, raw chart coordinates otherwise.
fn proximity_polyline(metric: &MetricField, curve: &DiscretizedCurve) -> Vec<DVector<f64>> {
    (0..curve.sample_count())
        .map(|i| {
            let p = curve.point(i);
            metric.embed(&p).unwrap_or(p.coords)
        })
        .collect()
}

/// Minimum Euclidean separation between two sample polylines, segment by
/// segment, with periodic images handled through a midpoint wrap correction.
pub fn min_polyline_separation(
    metric: &MetricField,
    alpha: &DiscretizedCurve,
    beta: &DiscretizedCurve,
) -> f64 {
    let pa = proximity_polyline(metric, alpha);
    let pb = proximity_polyline(metric, beta);
    let periods = if metric.embed(&alpha.point(0)).is_none() {
        metric.backend().periods(alpha.chart_ids()[0])
    } else {
        None
    };
    let mut min = f64::INFINITY;
    for i in 0..pa.len() - 1 {
        for j in 0..pb.len() - 1 {
            let (b0, b1) = match &periods {
                Some(per) => {
                    // Shift segment j by whole periods so its midpoint is the
                    // nearest image of segment i's midpoint.
                    let ma = (&pa[i] + &pa[i + 1]) * 0.5;
                    let mb = (&pb[j] + &pb[j + 1]) * 0.5;
                    let mut shift = DVector::zeros(ma.len());
                    for (k, p) in per.iter().enumerate() {
                        if *p > 0.0 {
                            shift[k] = -((mb[k] - ma[k]) / p).round() * p;
                        }
                    }
                    (&pb[j] + &shift, &pb[j + 1] + &shift)
                }
                None => (pb[j].clone(), pb[j + 1].clone()),
            };
            let d = segment_distance(&pa[i], &pa[i + 1], &b0, &b1);
            if d < min {
                min = d;
            }
        }
    }
    min
}

/// Wrapped parameter evaluation for closed curves.
fn eval_wrapped(curve: &DiscretizedCurve, s: f64) -> (DVector<f64>, DVector<f64>) {
    let (s0, s1) = curve.param_span();
    let len = s1 - s0;
    let sw = if curve.is_closed() {
        s0 + (s - s0).rem_euclid(len)
    } else {
        s.clamp(s0, s1)
    };
    (curve.position_at(sw), curve.velocity_at(sw))
}

/// Find points `a` on `alpha` and `b` on `beta` realizing the distance, the
/// minimizing geodesic between them, and the first-order optimality
/// residuals. Ties on the coarse grid are broken lexicographically in the
/// sample indices (s_alpha first).
pub fn distance_between_curves(
    metric: &MetricField,
    alpha: &DiscretizedCurve,
    beta: &DiscretizedCurve,
    opts: CurveDistanceOptions,
) -> Result<CurveDistance> {
    alpha.require_single_chart()?;
    beta.require_single_chart()?;

    let proxy_min = min_polyline_separation(metric, alpha, beta);
    if proxy_min < opts.intersection_clearance {
        return Err(GeonetError::Intersection(format!(
            "curves come within {proxy_min:.3e} (clearance {:.1e})",
            opts.intersection_clearance
        )));
    }

    // Coarse sweep with lexicographic tie-breaking.
    let pa = proximity_polyline(metric, alpha);
    let pb = proximity_polyline(metric, beta);
    let mut best = f64::INFINITY;
    let mut best_ij = (0usize, 0usize);
    for i in 0..pa.len() {
        for j in 0..pb.len() {
            let d = metric.proxy_distance(&alpha.point(i), &beta.point(j));
            let _ = (&pa, &pb);
            if d < best - 1e-9 * (1.0 + best) {
                best = d;
                best_ij = (i, j);
            }
        }
    }
    let mut s = alpha.params()[best_ij.0];
    let mut u = beta.params()[best_ij.1];

    // Damped Newton on the orthogonality residuals.
    let bvp_between = |s: f64, u: f64, guess: Option<&DVector<f64>>| -> Result<DiscretizedCurve> {
        let (xa, _) = eval_wrapped(alpha, s);
        let (xb, _) = eval_wrapped(beta, u);
        geodesic_bvp(
            metric,
            &ChartPoint::new(alpha.chart_ids()[0], xa),
            &ChartPoint::new(beta.chart_ids()[0], xb),
            guess,
            opts.bvp,
        )
        .map_err(|e| match e {
            // Beyond the injectivity bound this op reports out-of-range.
            GeonetError::Ambiguity(msg) => GeonetError::OutOfRange(msg),
            other => other,
        })
    };
    let mut warm: Option<DVector<f64>> = None;
    let residuals = |s: f64,
                     u: f64,
                     warm: &mut Option<DVector<f64>>|
     -> Result<(DVector<f64>, DiscretizedCurve)> {
        let rho = bvp_between(s, u, warm.as_ref())?;
        *warm = Some(rho.start_velocity());
        let (xa, ta) = eval_wrapped(alpha, s);
        let (xb, tb) = eval_wrapped(beta, u);
        let pa = ChartPoint::new(alpha.chart_ids()[0], xa);
        let pb = ChartPoint::new(beta.chart_ids()[0], xb);
        let va = rho.start_velocity();
        let vb = rho.end_velocity();
        let ga = metric.inner(&pa, &va, &ta)?
            / (metric.norm(&pa, &va)? * metric.norm(&pa, &ta)?).max(1e-300);
        let gb = metric.inner(&pb, &vb, &tb)?
            / (metric.norm(&pb, &vb)? * metric.norm(&pb, &tb)?).max(1e-300);
        Ok((DVector::from_column_slice(&[ga, gb]), rho))
    };

    let step_a = alpha.params()[1] - alpha.params()[0];
    let step_b = beta.params()[1] - beta.params()[0];
    let mut rho;
    let mut g;
    let (g0, rho0) = residuals(s, u, &mut warm)?;
    g = g0;
    rho = rho0;
    for _ in 0..opts.max_iterations {
        if g.amax() < opts.orthogonality_tol {
            break;
        }
        let eps_a = 1e-6_f64.max(1e-9 * step_a);
        let eps_b = 1e-6_f64.max(1e-9 * step_b);
        let (gpa, _) = residuals(s + eps_a, u, &mut warm)?;
        let (gpb, _) = residuals(s, u + eps_b, &mut warm)?;
        let mut jac = DMatrix::zeros(2, 2);
        jac[(0, 0)] = (gpa[0] - g[0]) / eps_a;
        jac[(1, 0)] = (gpa[1] - g[1]) / eps_a;
        jac[(0, 1)] = (gpb[0] - g[0]) / eps_b;
        jac[(1, 1)] = (gpb[1] - g[1]) / eps_b;
        let jt = jac.transpose();
        let mut lhs = &jt * &jac;
        let damp = 1e-10 * lhs.diagonal().amax().max(1e-10);
        lhs[(0, 0)] += damp;
        lhs[(1, 1)] += damp;
        let rhs = -(&jt * &g);
        let delta = match lhs.lu().solve(&rhs) {
            Some(d) => d,
            None => break,
        };
        // Keep steps within one coarse cell.
        let cap_a = 2.0 * step_a.max(step_b);
        let scale = (delta.amax() / cap_a).max(1.0);
        let ds = delta[0] / scale;
        let du = delta[1] / scale;
        let mut alpha_ls = 1.0;
        let mut improved = false;
        for _ in 0..8 {
            let (gt, rt) = residuals(s + alpha_ls * ds, u + alpha_ls * du, &mut warm)?;
            if gt.amax() < g.amax() {
                s += alpha_ls * ds;
                u += alpha_ls * du;
                g = gt;
                rho = rt;
                improved = true;
                break;
            }
            alpha_ls *= 0.5;
        }
        if !improved {
            break;
        }
    }

    let r = rho.length(metric)?;
    if r >= metric.injectivity_radius_bound() {
        return Err(GeonetError::OutOfRange(format!(
            "curve distance {r:.6} >= injectivity bound {}",
            metric.injectivity_radius_bound()
        )));
    }
    if r < opts.intersection_clearance {
        return Err(GeonetError::Intersection(format!(
            "refined distance {r:.3e} below clearance"
        )));
    }
    Ok(CurveDistance {
        a: rho.start(),
        b: rho.end(),
        r,
        s_alpha: s,
        s_beta: u,
        orthogonality_residuals: (g[0].abs(), g[1].abs()),
        rho,
    })
}
