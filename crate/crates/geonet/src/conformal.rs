//! Compactly supported conformal factors and perturbed metrics.
//!
//! A curvature-kill factor is the scalar field
//! `f(s, h) = χ(|h|) Σ_i h_i k^i(s)` in Fermi coordinates along a curve; its
//! normal gradient on the curve equals the curvature vector, so the curve
//! becomes a geodesic of `e^{2f} g` (the conformal transformation law
//! `k_f = e^{-f}(k - (∇_g f)^⊥)` vanishes there). Factors are evaluated
//! through tube coordinates with analytic differentiation of the (s, h)
//! expression composed with the differential of the tube map; outside their
//! support they are exactly zero.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bump::ChiBump;
use crate::cknorm::{ck_norm, GridField};
use crate::curve::DiscretizedCurve;
use crate::error::{GeonetError, Result};
use crate::fermi::{
    curvature_vectors, geodesic_curvature, tube_coordinates_in_window, tube_point,
    CurvatureProfile, FermiTube,
};
use crate::metric::{ChartPoint, MetricBackend, MetricField};

/// A scalar field on the manifold with chart-coordinate gradients.
pub trait ScalarField: Send + Sync {
    fn eval(&self, p: &ChartPoint) -> Result<f64>;
    fn eval_with_gradient(&self, p: &ChartPoint) -> Result<(f64, DVector<f64>)>;
    fn describe(&self) -> String;
}

/// Spatially constant field (mostly for tests: `e^{2c} g` scales lengths).
pub struct ConstantField {
    pub value: f64,
    pub dim: usize,
}

impl ScalarField for ConstantField {
    fn eval(&self, _p: &ChartPoint) -> Result<f64> {
        Ok(self.value)
    }

    fn eval_with_gradient(&self, _p: &ChartPoint) -> Result<(f64, DVector<f64>)> {
        Ok((self.value, DVector::zeros(self.dim)))
    }

    fn describe(&self) -> String {
        format!("constant {}", self.value)
    }
}

/// Conformal factor killing the geodesic curvature of its base curve.
pub struct ConformalFactor {
    base_metric: MetricField,
    tube: FermiTube,
    profile: CurvatureProfile,
    chi: ChiBump,
    /// Parameter range outside which the profile vanishes identically.
    support_span: (f64, f64),
    /// Sample indices of the tube base within the padded support span.
    support_range: (usize, usize),
    /// True when the profile is identically zero (factor evaluates to 0).
    trivial: bool,
    /// The structural support windows supplied at construction, if any.
    hint: Option<Vec<(f64, f64)>>,
    /// Flattened copy of the support-range base points for the alloc-free
    /// quick-rejection scan.
    scan_points: Vec<f64>,
    scan_periods: Option<Vec<f64>>,
}

impl ConformalFactor {
    pub fn tube(&self) -> &FermiTube {
        &self.tube
    }

    pub fn profile(&self) -> &CurvatureProfile {
        &self.profile
    }

    pub fn cutoff(&self) -> f64 {
        self.chi.cutoff
    }

    pub fn support_span(&self) -> (f64, f64) {
        self.support_span
    }

    pub fn support_hint(&self) -> Option<&[(f64, f64)]> {
        self.hint.as_deref()
    }

    pub fn is_trivial(&self) -> bool {
        self.trivial
    }

    /// ‖f‖_{C^k} on a declared Fermi-coordinate grid over the support:
    /// s over the support span, offsets in the cutoff box. The (s, h)
    /// expression is evaluated directly (no tube inversion involved).
    pub fn ck_norm_fermi(&self, k: usize, s_samples: usize, h_samples: usize) -> Result<f64> {
        if self.trivial {
            return Ok(0.0);
        }
        let m = self.profile.component_count();
        let (s_lo, s_hi) = self.support_span;
        let ds = (s_hi - s_lo) / (s_samples - 1) as f64;
        let h_half = self.chi.cutoff;
        let dh = 2.0 * h_half / (h_samples - 1) as f64;
        let mut origin = vec![s_lo];
        let mut spacing = vec![ds];
        let mut shape = vec![s_samples];
        for _ in 0..m {
            origin.push(-h_half);
            spacing.push(dh);
            shape.push(h_samples);
        }
        let field = crate::cknorm::GridField::sample(
            &origin,
            &spacing,
            &shape,
            1,
            |coords, out| {
                let s = coords[0];
                let h = DVector::from_column_slice(&coords[1..]);
                let kv = self.profile.eval(s);
                out[0] = self.chi.eval_radial(h.norm()) * h.dot(&kv);
            },
        )?;
        crate::cknorm::ck_norm(&field, k)
    }

    /// Points on the support boundary (for sampled separation checks):
    /// the base samples in the support span pushed out to the cutoff radius
    /// along the frame axes and diagonals.
    pub fn support_boundary_samples(&self, metric: &MetricField) -> Result<Vec<ChartPoint>> {
        if self.trivial {
            return Ok(Vec::new());
        }
        let m = metric.dim() - 1;
        let mut dirs: Vec<DVector<f64>> = Vec::new();
        for i in 0..m {
            let mut e = DVector::zeros(m);
            e[i] = 1.0;
            dirs.push(e.clone());
            dirs.push(-e);
        }
        if m >= 2 {
            for si in [-1.0, 1.0] {
                for sj in [-1.0, 1.0] {
                    let mut e = DVector::zeros(m);
                    e[0] = si;
                    e[1] = sj;
                    dirs.push(e / (2.0f64).sqrt());
                }
            }
        }
        let (i0, i1) = self.support_range;
        let stride = ((i1 - i0) / 48).max(1);
        let mut out = Vec::new();
        for i in (i0..=i1).step_by(stride) {
            let s = self.tube.base().params()[i];
            out.push(self.tube.base().point(i));
            for d in &dirs {
                out.push(tube_point(metric, &self.tube, s, &(d * self.chi.cutoff))?);
            }
        }
        Ok(out)
    }

    /// Locate `p` in tube coordinates if it can lie inside the support;
    /// `None` means the factor is exactly zero there.
    fn locate(&self, p: &ChartPoint) -> Result<Option<(f64, DVector<f64>)>> {
        if self.trivial {
            return Ok(None);
        }
        let p_in = if p.chart == self.tube.chart() {
            p.clone()
        } else {
            match self.base_metric.to_chart(p, self.tube.chart()) {
                Some((q, _)) => q,
                None => return Ok(None),
            }
        };
        // Quick rejection against the support polyline (alloc-free scan).
        let base = self.tube.base();
        let (i0, i1) = self.support_range;
        let n = p_in.coords.len();
        let x = p_in.coords.as_slice();
        let mut min_d2 = f64::INFINITY;
        for chunk in self.scan_points.chunks_exact(n) {
            let mut d2 = 0.0;
            for c in 0..n {
                let mut diff = x[c] - chunk[c];
                if let Some(per) = &self.scan_periods {
                    if per[c] > 0.0 {
                        diff -= (diff / per[c]).round() * per[c];
                    }
                }
                d2 += diff * diff;
            }
            if d2 < min_d2 {
                min_d2 = d2;
            }
        }
        let spacing = base.params()[1] - base.params()[0];
        let reject = self.chi.cutoff + 2.0 * spacing;
        if min_d2 > reject * reject {
            return Ok(None);
        }
        // Points within the cutoff of the support project at most about a
        // cutoff-length beyond it; pad the scan window accordingly.
        let pad = ((2.0 * self.chi.cutoff / spacing).ceil() as usize) + 8;
        let window = (i0.saturating_sub(pad), i1 + pad);
        let tc = match tube_coordinates_in_window(&self.base_metric, &self.tube, &p_in, Some(window))
        {
            Ok(tc) => tc,
            Err(GeonetError::Domain(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        if tc.s < self.support_span.0 || tc.s > self.support_span.1 {
            return Ok(None);
        }
        if tc.h.norm() >= self.chi.cutoff {
            return Ok(None);
        }
        Ok(Some((tc.s, tc.h)))
    }

    /// Differential of the tube map at (s, h): columns `[∂Φ/∂s, ∂Φ/∂h_i]` in
    /// tube-chart coordinates. Analytic for flat backends, centered
    /// differences of the exponential otherwise.
    fn tube_jacobian(&self, s: f64, h: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.base_metric.dim();
        let mut jac = DMatrix::zeros(n, n);
        if self.base_metric.is_flat() {
            let cprime = self.tube.base().velocity_at(s);
            let frame = self.tube.frame_at(s);
            let dframe = self.tube.frame_derivative_at(s);
            let col0 = cprime + &dframe * h;
            jac.set_column(0, &col0);
            for i in 0..n - 1 {
                jac.set_column(i + 1, &frame.column(i).into_owned());
            }
            return Ok(jac);
        }
        let delta_s = 1e-5;
        let delta_h = 1e-6;
        let at = |s: f64, h: &DVector<f64>| -> Result<DVector<f64>> {
            let p = tube_point(&self.base_metric, &self.tube, s, h)?;
            Ok(if p.chart == self.tube.chart() {
                p.coords
            } else {
                self.base_metric
                    .to_chart(&p, self.tube.chart())
                    .ok_or_else(|| GeonetError::Domain("tube point left the chart".into()))?
                    .0
                    .coords
            })
        };
        let c0 = at(s + delta_s, h)?;
        let c1 = at(s - delta_s, h)?;
        jac.set_column(0, &((c0 - c1) / (2.0 * delta_s)));
        for i in 0..n - 1 {
            let mut hp = h.clone();
            hp[i] += delta_h;
            let mut hm = h.clone();
            hm[i] -= delta_h;
            let cp = at(s, &hp)?;
            let cm = at(s, &hm)?;
            jac.set_column(i + 1, &((cp - cm) / (2.0 * delta_h)));
        }
        Ok(jac)
    }
}

impl ScalarField for ConformalFactor {
    fn eval(&self, p: &ChartPoint) -> Result<f64> {
        match self.locate(p)? {
            None => Ok(0.0),
            Some((s, h)) => {
                let k = self.profile.eval(s);
                Ok(self.chi.eval_radial(h.norm()) * h.dot(&k))
            }
        }
    }

    fn eval_with_gradient(&self, p: &ChartPoint) -> Result<(f64, DVector<f64>)> {
        let n = self.base_metric.dim();
        match self.locate(p)? {
            None => Ok((0.0, DVector::zeros(n))),
            Some((s, h)) => {
                let (k, dk) = self.profile.eval_d(s);
                let (chi, dchi) = self.chi.eval_with_gradient(&h);
                let hk = h.dot(&k);
                let value = chi * hk;
                // Partials in (s, h) coordinates.
                let df_ds = chi * h.dot(&dk);
                let df_dh = &k * chi + &dchi * hk;
                let mut rhs = DVector::zeros(n);
                rhs[0] = df_ds;
                for i in 0..n - 1 {
                    rhs[i + 1] = df_dh[i];
                }
                // Chart gradient: J^{-T} (df/ds, df/dh).
                let jac = self.tube_jacobian(s, &h)?;
                let grad_tube_chart = jac
                    .transpose()
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| GeonetError::Geometry("degenerate tube Jacobian".into()))?;
                // Pull back to the chart of `p` if it differs.
                let grad = if p.chart == self.tube.chart() {
                    grad_tube_chart
                } else {
                    let (_, j) = self
                        .base_metric
                        .to_chart(p, self.tube.chart())
                        .ok_or_else(|| {
                            GeonetError::Domain("point not expressible in tube chart".into())
                        })?;
                    j.transpose() * grad_tube_chart
                };
                Ok((value, grad))
            }
        }
    }

    fn describe(&self) -> String {
        format!(
            "curvature-kill factor (cutoff {}, span [{:.4}, {:.4}])",
            self.chi.cutoff, self.support_span.0, self.support_span.1
        )
    }
}

/// Build the factor `f = χ_cutoff(h) Σ h_i k^i(s)` for `curve` inside `tube`.
/// `smoothness` is the number of continuous derivatives of the radial cutoff
/// (use k + 2 when C^{k+2} control is needed). A `support_hint` lists the
/// parameter windows known to carry curvature: outside their union the
/// profile is zeroed exactly, which removes curvature-estimator noise from
/// geodesic stretches of the curve (constructions know their connector
/// windows; pass `None` for generic curves).
pub fn curvature_kill_factor(
    metric: &MetricField,
    curve: &DiscretizedCurve,
    tube: &FermiTube,
    cutoff: f64,
    smoothness: usize,
    support_hint: Option<&[(f64, f64)]>,
) -> Result<ConformalFactor> {
    if cutoff > tube.radius() + 1e-15 {
        return Err(GeonetError::Geometry(format!(
            "cutoff {cutoff} exceeds tube radius {}",
            tube.radius()
        )));
    }
    let mut profile = geodesic_curvature(metric, curve, tube)?;
    if let Some(windows) = support_hint {
        let params = profile.params().to_vec();
        let mut comps = profile.components().to_vec();
        for (i, s) in params.iter().enumerate() {
            let inside = windows.iter().any(|(lo, hi)| *s >= *lo && *s <= *hi);
            if !inside {
                comps[i].fill(0.0);
            }
        }
        profile = CurvatureProfile::new(params, comps)?;
    }
    let params = profile.params();
    let zero_tol = 1e-13;
    let mut lo = None;
    let mut hi = None;
    for (i, k) in profile.components().iter().enumerate() {
        if k.norm() > zero_tol {
            if lo.is_none() {
                lo = Some(i);
            }
            hi = Some(i);
        }
    }
    let trivial = lo.is_none();
    let pad = 8usize;
    let (i0, i1) = match (lo, hi) {
        (Some(l), Some(h)) => (l.saturating_sub(pad), (h + pad).min(params.len() - 1)),
        _ => (0, params.len() - 1),
    };
    let support_span = (params[i0], params[i1]);
    let n = metric.dim();
    let mut scan_points = Vec::with_capacity((i1 - i0 + 1) * n);
    for p in &tube.base().points()[i0..=i1] {
        scan_points.extend_from_slice(p.as_slice());
    }
    let scan_periods = metric.backend().periods(tube.chart());
    Ok(ConformalFactor {
        base_metric: metric.clone(),
        tube: tube.clone(),
        profile,
        chi: ChiBump::new(cutoff, smoothness)?,
        support_span,
        support_range: (i0, i1),
        trivial,
        hint: support_hint.map(|h| h.to_vec()),
        scan_points,
        scan_periods,
    })
}

// ---------------------------------------------------------------------------
// Conformal metric backend
// ---------------------------------------------------------------------------

struct SumField {
    terms: Vec<Arc<dyn ScalarField>>,
    dim: usize,
}

impl ScalarField for SumField {
    fn eval(&self, p: &ChartPoint) -> Result<f64> {
        let mut acc = 0.0;
        for t in &self.terms {
            acc += t.eval(p)?;
        }
        Ok(acc)
    }

    fn eval_with_gradient(&self, p: &ChartPoint) -> Result<(f64, DVector<f64>)> {
        let mut acc = 0.0;
        let mut grad = DVector::zeros(self.dim);
        for t in &self.terms {
            let (v, g) = t.eval_with_gradient(p)?;
            acc += v;
            grad += g;
        }
        Ok((acc, grad))
    }

    fn describe(&self) -> String {
        format!("sum of {} factors", self.terms.len())
    }
}

struct ConformalBackend {
    base: MetricField,
    field: Arc<dyn ScalarField>,
}

impl MetricBackend for ConformalBackend {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn chart_count(&self) -> usize {
        self.base.backend().chart_count()
    }

    fn chart_contains(&self, chart: usize, x: &DVector<f64>) -> bool {
        self.base.backend().chart_contains(chart, x)
    }

    fn comfortable(&self, chart: usize, x: &DVector<f64>) -> bool {
        self.base.backend().comfortable(chart, x)
    }

    fn preferred_chart(&self, chart: usize, x: &DVector<f64>) -> usize {
        self.base.backend().preferred_chart(chart, x)
    }

    fn transition(
        &self,
        from: usize,
        to: usize,
        x: &DVector<f64>,
    ) -> Option<(DVector<f64>, DMatrix<f64>)> {
        self.base.backend().transition(from, to, x)
    }

    fn eval(&self, chart: usize, x: &DVector<f64>) -> DMatrix<f64> {
        let g = self.base.backend().eval(chart, x);
        let f = self
            .field
            .eval(&ChartPoint::new(chart, x.clone()))
            .unwrap_or(0.0);
        if f == 0.0 {
            return g;
        }
        g * (2.0 * f).exp()
    }

    fn eval_d1(&self, chart: usize, x: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let (g, dg) = self.base.backend().eval_d1(chart, x);
        let (f, grad) = self
            .field
            .eval_with_gradient(&ChartPoint::new(chart, x.clone()))
            .unwrap_or_else(|_| (0.0, DVector::zeros(x.len())));
        if f == 0.0 && grad.iter().all(|c| *c == 0.0) {
            return (g, dg);
        }
        let e = (2.0 * f).exp();
        let gstar = &g * e;
        let dgstar = (0..x.len())
            .map(|k| (&dg[k] + &g * (2.0 * grad[k])) * e)
            .collect();
        (gstar, dgstar)
    }

    fn embed(&self, chart: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
        self.base.backend().embed(chart, x)
    }

    fn periods(&self, chart: usize) -> Option<Vec<f64>> {
        self.base.backend().periods(chart)
    }

    fn describe(&self) -> String {
        format!(
            "e^{{2f}} ({}) over {}",
            self.field.describe(),
            self.base.describe()
        )
    }
}

/// Wrap a base metric as `e^{2f} g`. The injectivity bound of the base is
/// kept (valid for the small perturbations produced here; the bound is a
/// caller-supplied threshold, not an estimate).
pub fn conformal_metric(base: &MetricField, field: Arc<dyn ScalarField>) -> Result<MetricField> {
    MetricField::new(
        Arc::new(ConformalBackend {
            base: base.clone(),
            field,
        }),
        base.injectivity_radius_bound(),
    )
}

/// Base metric plus compactly supported factors realizing `e^{2Σf} g`.
pub struct ConformalStack {
    pub base: MetricField,
    pub factors: Vec<Arc<ConformalFactor>>,
    /// When set, factor supports are required pairwise disjoint.
    pub declared_disjoint: bool,
}

impl ConformalStack {
    pub fn new(base: MetricField) -> Self {
        ConformalStack {
            base,
            factors: Vec::new(),
            declared_disjoint: false,
        }
    }

    pub fn push(&mut self, factor: ConformalFactor) {
        self.factors.push(Arc::new(factor));
    }

    /// The combined scalar field `Σ f` over the stack's factors.
    pub fn sum_field(&self) -> Arc<dyn ScalarField> {
        Arc::new(SumField {
            terms: self
                .factors
                .iter()
                .map(|f| f.clone() as Arc<dyn ScalarField>)
                .collect(),
            dim: self.base.dim(),
        })
    }

    /// Minimum sampled distance between the supports of factors `i` and `j`.
    pub fn support_separation(&self, i: usize, j: usize) -> Result<f64> {
        let a = self.factors[i].support_boundary_samples(&self.base)?;
        let b = self.factors[j].support_boundary_samples(&self.base)?;
        let mut min = f64::INFINITY;
        for p in &a {
            for q in &b {
                min = min.min(self.base.proxy_distance(p, q));
            }
        }
        Ok(min)
    }
}

/// Realize the stack as an evaluable metric. With `declared_disjoint`, a
/// sampled pairwise check rejects overlapping supports.
pub fn apply_conformal(stack: &ConformalStack) -> Result<MetricField> {
    if stack.declared_disjoint {
        for i in 0..stack.factors.len() {
            for j in i + 1..stack.factors.len() {
                if stack.factors[i].is_trivial() || stack.factors[j].is_trivial() {
                    continue;
                }
                let sep = stack.support_separation(i, j)?;
                if !(sep > 0.0) {
                    return Err(GeonetError::SupportOverlap(format!(
                        "factors {i} and {j} have overlapping supports (sampled separation {sep:.3e})"
                    )));
                }
            }
        }
    }
    let dim = stack.base.dim();
    let field = SumField {
        terms: stack
            .factors
            .iter()
            .map(|f| f.clone() as Arc<dyn ScalarField>)
            .collect(),
        dim,
    };
    conformal_metric(&stack.base, Arc::new(field))
}

// ---------------------------------------------------------------------------
// Two-route conformal curvature
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct ConformalCurvatureCheck {
    /// Transformation-formula route: `e^{-f}(k - (∇_g f)^⊥)` per sample.
    pub formula: Vec<DVector<f64>>,
    /// Direct route: curvature of the curve under `e^{2f} g` per sample.
    pub direct: Vec<DVector<f64>>,
    /// Sup of the g-norm difference between the two routes.
    pub max_disagreement: f64,
    /// Sup g-norm of the direct-route curvature.
    pub sup_direct: f64,
    /// Sup g-norm of the formula-route curvature.
    pub sup_formula: f64,
}

/// Curvature of `curve` in the metric `e^{2f} g`, computed both by the
/// conformal transformation law and directly under the perturbed metric,
/// with a consistency check at `agreement_tol`.
///
/// As chart vectors the law reads `k̂ = e^{-2f}(k - (∇_g f)^⊥)`; expressed in
/// an orthonormal frame of the perturbed metric the components are
/// `e^{-f}(k^i - (∇_g f)^i)`, which is the magnitude form. Norms below are
/// taken in the perturbed metric, so `sup_*` agree with the magnitude form.
pub fn conformal_geodesic_curvature(
    metric: &MetricField,
    field: Arc<dyn ScalarField>,
    curve: &DiscretizedCurve,
    agreement_tol: f64,
) -> Result<ConformalCurvatureCheck> {
    let chart = curve.require_single_chart()?;
    let base_curv = curvature_vectors(metric, curve)?;
    let perturbed = conformal_metric(metric, field.clone())?;
    let direct = curvature_vectors(&perturbed, curve)?;
    let mut formula = Vec::with_capacity(base_curv.len());
    let mut max_disagreement: f64 = 0.0;
    let mut sup_direct: f64 = 0.0;
    let mut sup_formula: f64 = 0.0;
    for i in 0..curve.sample_count() {
        let p = ChartPoint::new(chart, curve.points()[i].clone());
        let g = metric.eval(&p)?;
        let (f, df) = field.eval_with_gradient(&p)?;
        // Raise the gradient: ∇f = g^{-1} df, then project off the tangent.
        let grad = g
            .clone()
            .lu()
            .solve(&df)
            .ok_or_else(|| GeonetError::Geometry("metric not invertible".into()))?;
        let v = curve.velocity_at_sample(i);
        let speed2 = (v.transpose() * &g * &v)[(0, 0)];
        let tang = (grad.transpose() * &g * &v)[(0, 0)] / speed2;
        let grad_perp = &grad - &v * tang;
        let kf = (&base_curv[i] - &grad_perp) * (-2.0 * f).exp();
        // Norms in the perturbed metric: |w|_ĝ = e^f |w|_g.
        let ef = f.exp();
        let gnorm = |w: &DVector<f64>| (w.transpose() * &g * w)[(0, 0)].max(0.0).sqrt() * ef;
        max_disagreement = max_disagreement.max(gnorm(&(&kf - &direct[i])));
        sup_formula = sup_formula.max(gnorm(&kf));
        sup_direct = sup_direct.max(gnorm(&direct[i]));
        formula.push(kf);
    }
    if max_disagreement > agreement_tol {
        return Err(GeonetError::Consistency(format!(
            "conformal curvature routes disagree by {max_disagreement:.3e} (tol {agreement_tol:.1e})"
        )));
    }
    Ok(ConformalCurvatureCheck {
        formula,
        direct,
        max_disagreement,
        sup_direct,
        sup_formula,
    })
}

// ---------------------------------------------------------------------------
// C^k distances between metrics
// ---------------------------------------------------------------------------

/// A declared evaluation grid in one chart.
#[derive(Debug, Clone)]
pub struct RegionGrid {
    pub chart: usize,
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub shape: Vec<usize>,
}

/// Evaluation region covering the union of the stack's supports, with the
/// spacing a fixed fraction of the smallest cutoff so the radial ramp of χ
/// is resolved. The metrics agree exactly outside the supports, so the sup
/// over this region is the sup over the manifold. Returns `None` for an
/// empty stack or factors spread across different charts.
pub fn stack_support_region(
    stack: &ConformalStack,
    points_per_cutoff: usize,
) -> Result<Option<RegionGrid>> {
    let active: Vec<_> = stack.factors.iter().filter(|f| !f.is_trivial()).collect();
    if active.is_empty() {
        return Ok(None);
    }
    let chart = active[0].tube().chart();
    if active.iter().any(|f| f.tube().chart() != chart) {
        return Ok(None);
    }
    let n = stack.base.dim();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    let mut min_cutoff = f64::INFINITY;
    for f in &active {
        min_cutoff = min_cutoff.min(f.cutoff());
        for p in f.support_boundary_samples(&stack.base)? {
            for c in 0..n {
                lo[c] = lo[c].min(p.coords[c]);
                hi[c] = hi[c].max(p.coords[c]);
            }
        }
    }
    let spacing_val = min_cutoff / points_per_cutoff as f64;
    let mut origin = Vec::with_capacity(n);
    let mut spacing = Vec::with_capacity(n);
    let mut shape = Vec::with_capacity(n);
    for c in 0..n {
        let pad = 0.5 * min_cutoff;
        let a = lo[c] - pad;
        let b = hi[c] + pad;
        let count = ((b - a) / spacing_val).ceil() as usize + 1;
        origin.push(a);
        spacing.push((b - a) / (count - 1) as f64);
        shape.push(count);
    }
    Ok(Some(RegionGrid {
        chart,
        origin,
        spacing,
        shape,
    }))
}

/// `C^k` norm of the component-wise difference `g* - g` on the declared
/// grid, in the grid's chart coordinates.
pub fn metric_ck_distance(
    g: &MetricField,
    gstar: &MetricField,
    k: usize,
    region: &RegionGrid,
) -> Result<f64> {
    let n = g.dim();
    let comps = n * n;
    let field = GridField::sample(
        &region.origin,
        &region.spacing,
        &region.shape,
        comps,
        |coords, out| {
            let p = ChartPoint::from_slice(region.chart, coords);
            let a = g.eval(&p).expect("grid point in atlas");
            let b = gstar.eval(&p).expect("grid point in atlas");
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = b[(i, j)] - a[(i, j)];
                }
            }
        },
    )?;
    ck_norm(&field, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::FlatTorus;
    use crate::fermi::fermi_tube;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn flat3() -> MetricField {
        FlatTorus::unit(3).field(None).unwrap()
    }

    fn flat_circle(radius: f64, n: usize) -> DiscretizedCurve {
        let total = std::f64::consts::TAU * radius;
        let params: Vec<f64> = (0..=n).map(|i| total * i as f64 / n as f64).collect();
        DiscretizedCurve::from_fn(
            0,
            params,
            |s| {
                let a = s / radius;
                DVector::from_column_slice(&[
                    0.5 + radius * a.cos(),
                    0.5 + radius * a.sin(),
                    0.0,
                ])
            },
            |s| {
                let a = s / radius;
                DVector::from_column_slice(&[-a.sin(), a.cos(), 0.0])
            },
            true,
        )
        .unwrap()
    }

    fn straight_line(n: usize) -> DiscretizedCurve {
        let params: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        DiscretizedCurve::from_fn(
            0,
            params,
            |s| DVector::from_column_slice(&[s, 0.0, 0.0]),
            |_| DVector::from_column_slice(&[1.0, 0.0, 0.0]),
            true,
        )
        .unwrap()
    }

    #[test]
    fn kill_factor_of_geodesic_is_identically_zero() {
        let metric = flat3();
        let line = straight_line(256);
        let tube = fermi_tube(&metric, &line, 0.1, Default::default()).unwrap();
        let f = curvature_kill_factor(&metric, &line, &tube, 0.08, 3, None).unwrap();
        assert!(f.is_trivial());
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..50 {
            let p = ChartPoint::from_slice(
                0,
                &[
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                ],
            );
            assert_eq!(f.eval(&p).unwrap(), 0.0);
        }
    }

    #[test]
    fn kill_factor_gradient_on_circle_is_curvature() {
        let metric = flat3();
        let radius = 0.15;
        let circle = flat_circle(radius, 2048);
        let tube = fermi_tube(&metric, &circle, 0.05, Default::default()).unwrap();
        let f = curvature_kill_factor(&metric, &circle, &tube, 0.05, 3, None).unwrap();
        // At a point on the circle the gradient's inward normal component
        // equals the curvature 1/R.
        let s = 0.3;
        let x = circle.position_at(s);
        let p = ChartPoint::new(0, x.clone());
        let (val, grad) = f.eval_with_gradient(&p).unwrap();
        assert!(val.abs() < 1e-12, "f vanishes on the curve, got {val}");
        let center = DVector::from_column_slice(&[0.5, 0.5, 0.0]);
        let inward = (&center - &x) / (&center - &x).norm();
        let normal_component = grad.dot(&inward);
        assert!(
            (normal_component - 1.0 / radius).abs() < 1e-6 * (1.0 / radius),
            "∂f/∂h inward = {normal_component} vs {}",
            1.0 / radius
        );
    }

    #[test]
    fn factor_vanishes_outside_cutoff_tube() {
        let metric = flat3();
        let radius = 0.15;
        let circle = flat_circle(radius, 1024);
        let tube = fermi_tube(&metric, &circle, 0.06, Default::default()).unwrap();
        let cutoff = 0.04;
        let f = curvature_kill_factor(&metric, &circle, &tube, cutoff, 3, None).unwrap();
        let mut rng = StdRng::seed_from_u64(2);
        let mut checked = 0;
        while checked < 1000 {
            let p = ChartPoint::from_slice(
                0,
                &[
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(-0.5..0.5),
                ],
            );
            // distance from the circle (exact in the flat chart)
            let dx = p.coords[0] - 0.5;
            let dy = p.coords[1] - 0.5;
            let in_plane = (dx * dx + dy * dy).sqrt();
            let d = ((in_plane - radius).powi(2) + p.coords[2].powi(2)).sqrt();
            if d <= cutoff {
                continue;
            }
            checked += 1;
            assert_eq!(f.eval(&p).unwrap(), 0.0, "nonzero outside support at {p:?}");
        }
    }

    #[test]
    fn conformal_curvature_zero_field_unchanged() {
        let metric = flat3();
        let circle = flat_circle(0.2, 1024);
        let field = Arc::new(ConstantField {
            value: 0.0,
            dim: 3,
        });
        let check =
            conformal_geodesic_curvature(&metric, field, &circle, 1e-9).unwrap();
        assert!((check.sup_direct - 5.0).abs() < 1e-4); // 1/R = 5
        assert!(check.max_disagreement < 1e-9);
    }

    #[test]
    fn constant_field_scales_curvature_and_keeps_geodesics() {
        let metric = flat3();
        let c = 0.3;
        let field = Arc::new(ConstantField { value: c, dim: 3 });
        let circle = flat_circle(0.2, 1024);
        let check =
            conformal_geodesic_curvature(&metric, field.clone(), &circle, 1e-8).unwrap();
        let expected = 5.0 * (-c as f64).exp();
        assert!(
            (check.sup_direct - expected).abs() < 1e-3,
            "scaled curvature {} vs {expected}",
            check.sup_direct
        );
        // Geodesics stay geodesics.
        let line = straight_line(256);
        let check =
            conformal_geodesic_curvature(&metric, field, &line, 1e-9).unwrap();
        assert!(check.sup_direct < 1e-12);
    }

    #[test]
    fn kill_identity_on_circle_both_routes() {
        let metric = flat3();
        let radius = 0.15;
        let circle = flat_circle(radius, 2048);
        let tube = fermi_tube(&metric, &circle, 0.05, Default::default()).unwrap();
        let f = Arc::new(curvature_kill_factor(&metric, &circle, &tube, 0.05, 3, None).unwrap());
        let check = conformal_geodesic_curvature(&metric, f, &circle, 1e-5).unwrap();
        assert!(
            check.sup_direct < 1e-6,
            "direct-route residual {}",
            check.sup_direct
        );
        assert!(
            check.sup_formula < 1e-6,
            "formula-route residual {}",
            check.sup_formula
        );
    }

    #[test]
    fn apply_conformal_empty_stack_is_base() {
        let metric = flat3();
        let stack = ConformalStack::new(metric.clone());
        let gstar = apply_conformal(&stack).unwrap();
        let p = ChartPoint::from_slice(0, &[0.3, 0.7, 0.2]);
        assert_eq!(metric.eval(&p).unwrap(), gstar.eval(&p).unwrap());
    }

    #[test]
    fn perturbed_metric_exact_outside_support_and_positive_definite() {
        let metric = flat3();
        let circle = flat_circle(0.15, 1024);
        let tube = fermi_tube(&metric, &circle, 0.05, Default::default()).unwrap();
        let mut stack = ConformalStack::new(metric.clone());
        stack.push(curvature_kill_factor(&metric, &circle, &tube, 0.04, 3, None).unwrap());
        let gstar = apply_conformal(&stack).unwrap();
        let mut rng = StdRng::seed_from_u64(4);
        let mut outside = 0;
        let mut checked = 0;
        while checked < 1000 {
            let p = ChartPoint::from_slice(
                0,
                &[
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(-0.5..0.5),
                ],
            );
            let g = gstar.eval(&p).unwrap();
            let eigs = ((&g + g.transpose()) * 0.5).symmetric_eigenvalues();
            assert!(eigs.iter().all(|e| *e > 0.0), "not positive definite");
            checked += 1;
            let dx = p.coords[0] - 0.5;
            let dy = p.coords[1] - 0.5;
            let in_plane = (dx * dx + dy * dy).sqrt();
            let d = ((in_plane - 0.15).powi(2) + p.coords[2].powi(2)).sqrt();
            if d > 0.04 {
                outside += 1;
                assert_eq!(
                    gstar.eval(&p).unwrap(),
                    metric.eval(&p).unwrap(),
                    "g* must equal g exactly outside the support"
                );
            }
        }
        assert!(outside > 800);
    }

    #[test]
    fn ck_distance_zero_and_constant_cases() {
        let metric = flat3();
        let region = RegionGrid {
            chart: 0,
            origin: vec![0.0, 0.0, -0.2],
            spacing: vec![0.05, 0.05, 0.05],
            shape: vec![16, 16, 9],
        };
        let d0 = metric_ck_distance(&metric, &metric, 1, &region).unwrap();
        assert_eq!(d0, 0.0);
        let c = 0.2;
        let gstar = conformal_metric(
            &metric,
            Arc::new(ConstantField { value: c, dim: 3 }),
        )
        .unwrap();
        let d = metric_ck_distance(&metric, &gstar, 0, &region).unwrap();
        let expected = (2.0 * c as f64).exp() - 1.0;
        assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");
    }

    #[test]
    fn metric_derivatives_of_conformal_stack_are_consistent() {
        let metric = flat3();
        let circle = flat_circle(0.15, 1024);
        let tube = fermi_tube(&metric, &circle, 0.06, Default::default()).unwrap();
        let mut stack = ConformalStack::new(metric.clone());
        stack.push(curvature_kill_factor(&metric, &circle, &tube, 0.05, 3, None).unwrap());
        let gstar = apply_conformal(&stack).unwrap();
        // Probe inside the support where the factor is active.
        let mut rng = StdRng::seed_from_u64(6);
        let center = ChartPoint::from_slice(0, &[0.5 + 0.15, 0.5, 0.0]);
        let worst = crate::metric::verify_metric_derivatives(
            &gstar, &center, 0.02, 20, &mut rng, 1e-6,
        )
        .unwrap();
        assert!(worst < 1e-6, "analytic vs FD derivative deviation {worst}");
    }
}
