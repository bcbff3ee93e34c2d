//! The Finsler tensor pipeline.
//!
//! Everything downstream of the fundamental function F^2 is computed from
//! one truncated Taylor jet per site: the fundamental tensor and geodesic
//! spray, the Berwald and Douglas tensors, the Riemann curvature operator
//! with its four-index family, the S-, E- and H-curvatures built on the
//! Busemann-Hausdorff volume form, and the two projective curvature
//! tensors whose vanishing characterizes scalar respectively constant flag
//! curvature. Every quantity is published as plain values at the site;
//! the internal consistency identities that tie the quantities together
//! are evaluated alongside and reported as residuals, never assumed.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::jet::{materialize, Jet, JetScope, JetTable, Region, Strategy, Validity};
use crate::linalg;
use crate::oracles::{self, McVolume};
use crate::sample::{self, Chart, Sweep, TangentSample};
use crate::scene::{Expr, SharedScene};

/// Which tensor groups a site evaluation should produce.
///
/// Requests are closed over prerequisites before use, so asking for the
/// H-curvature alone also produces E, the spray and the fundamental
/// tensor. The jet order of the F^2 expansion is sized from the closed
/// request, never larger.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OutputSet {
    /// Geodesic spray coefficients G^i and their first y-derivatives.
    pub spray: bool,
    /// Berwald connection G^i_jk and the Berwald tensor G^i_jkl.
    pub berwald: bool,
    /// Douglas tensor, the trace-adjusted third y-derivative of the spray.
    pub douglas: bool,
    /// Riemann curvature operator K^i_k, Ricci scalar, flag scalar.
    pub riemann: bool,
    /// Four-index curvature K^i_jkl and its trace K_jl.
    pub riemann_tensor: bool,
    /// S-curvature by both the flow route and the trace route.
    pub s_curv: bool,
    /// E-curvature, half the second y-derivative of the spray part of S.
    pub e_curv: bool,
    /// H-curvature, the y-contracted horizontal derivative of E.
    pub h_curv: bool,
    /// The two curvature-derivative contraction identities relating the
    /// y-derivative of K_jl to zero and to the H-curvature.
    pub ricci_identities: bool,
    /// Projective curvature tensors W and *W together with the relation
    /// expressing their difference through H and the skew part of K_jl.
    pub weyl: bool,
    /// Deep W checks: reconstruction of W^i_jkl from its y-contracted
    /// part and agreement of the two scalar parts.
    pub weyl_deep: bool,
}

impl OutputSet {
    /// Fundamental tensor only.
    pub fn fundamental() -> OutputSet {
        OutputSet::default()
    }

    /// Every output group, including the deep W checks.
    pub fn all() -> OutputSet {
        OutputSet {
            spray: true,
            berwald: true,
            douglas: true,
            riemann: true,
            riemann_tensor: true,
            s_curv: true,
            e_curv: true,
            h_curv: true,
            ricci_identities: true,
            weyl: true,
            weyl_deep: true,
        }
    }

    /// Add the prerequisites each requested group relies on.
    pub fn closure(mut self) -> OutputSet {
        if self.weyl_deep {
            self.weyl = true;
        }
        if self.weyl {
            // The W / *W relation residual consumes H values.
            self.riemann_tensor = true;
            self.h_curv = true;
        }
        if self.ricci_identities {
            self.riemann_tensor = true;
            self.h_curv = true;
        }
        if self.h_curv {
            self.e_curv = true;
        }
        if self.e_curv {
            // The E cross-check traces the Berwald tensor.
            self.berwald = true;
        }
        if self.riemann_tensor {
            self.riemann = true;
        }
        if self.berwald
            || self.douglas
            || self.riemann
            || self.s_curv
            || self.e_curv
        {
            self.spray = true;
        }
        self
    }

    /// Jet caps (x-order, y-order) the F^2 expansion needs for this
    /// request. Derived by walking each output's derivative consumption
    /// back to F^2; the maximum over all requested groups wins.
    pub fn caps(&self) -> (u8, u8) {
        let r = self.closure();
        let mut x = 0u8;
        let mut y = 2u8;
        let mut up = |cx: u8, cy: u8, on: bool| {
            if on {
                if cx > x {
                    x = cx;
                }
                if cy > y {
                    y = cy;
                }
            }
        };
        // The spray group publishes the Jacobian G^i_j, and inverting g
        // consumes two y-orders, so one more is needed beyond the two
        // eaten by the fundamental tensor.
        up(1, 3, r.spray);
        up(1, 5, r.berwald);
        up(1, 6, r.douglas);
        up(2, 4, r.riemann);
        up(2, 6, r.riemann_tensor);
        up(1, 3, r.s_curv);
        up(1, 5, r.e_curv);
        up(2, 6, r.h_curv);
        up(2, 7, r.ricci_identities);
        up(2, 8, r.weyl);
        up(2, 10, r.weyl_deep);
        (x, y)
    }
}

/// How the Busemann-Hausdorff density sigma_F is obtained.
#[derive(Clone, Debug)]
pub enum VolumeSpec {
    /// Exact density in closed form. Available for every scene-backed
    /// metric; custom metrics need an explicit density callback.
    ClosedForm,
    /// Hit-or-miss estimate of the indicatrix volume, reproducible for a
    /// given seed. The x-derivatives come from a common-random-number
    /// central stencil and are only first-order trustworthy, which the
    /// resulting jet's validity records.
    MonteCarlo { samples: usize, seed: u64 },
}

type F2Fn = dyn Fn(&JetScope) -> Result<Jet> + Send + Sync;
type AdmitFn = dyn Fn(&[f64]) -> bool + Send + Sync;

/// A norm supplied directly as an F^2 jet evaluator rather than through
/// the scene DSL. Used for metrics that are not of Randers type.
pub struct CustomMetric {
    pub name: String,
    pub dim: usize,
    pub chart: Chart,
    /// Sampling margin, same meaning as for scenes.
    pub margin: f64,
    /// Builds the F^2 jet at the scope's center. Must return a jet whose
    /// value is positive; the evaluator checks and refuses otherwise.
    pub f2: Arc<F2Fn>,
    /// Closed-form ln sigma_F as a jet, when known.
    pub ln_sigma: Option<Arc<F2Fn>>,
    /// Extra admissibility constraint on base points.
    pub admit: Option<Arc<AdmitFn>>,
}

enum MetricBackend {
    Scene(SharedScene),
    Custom(Arc<CustomMetric>),
}

/// A Finsler metric ready for site evaluation: a norm backend, a chart
/// with sampling margin, and a volume density source.
pub struct FinslerMetric {
    name: String,
    dim: usize,
    chart: Chart,
    margin: f64,
    backend: MetricBackend,
    volume: VolumeSpec,
}

impl FinslerMetric {
    /// Wrap a parsed scene: F = sqrt(a_ij y^i y^j) + b_i y^i, with the
    /// exact Busemann-Hausdorff density of such a norm in closed form.
    pub fn from_scene(scene: SharedScene) -> FinslerMetric {
        FinslerMetric {
            name: scene.name.clone(),
            dim: scene.dim,
            chart: scene.chart.clone(),
            margin: scene.margin,
            backend: MetricBackend::Scene(scene),
            volume: VolumeSpec::ClosedForm,
        }
    }

    /// Wrap a custom norm. Falls back to Monte Carlo volume when no
    /// closed-form density is supplied.
    pub fn custom(custom: Arc<CustomMetric>) -> FinslerMetric {
        let volume = if custom.ln_sigma.is_some() {
            VolumeSpec::ClosedForm
        } else {
            VolumeSpec::MonteCarlo {
                samples: 200_000,
                seed: 42,
            }
        };
        FinslerMetric {
            name: custom.name.clone(),
            dim: custom.dim,
            chart: custom.chart.clone(),
            margin: custom.margin,
            backend: MetricBackend::Custom(custom),
            volume,
        }
    }

    /// Override the volume density source.
    pub fn with_volume(mut self, volume: VolumeSpec) -> FinslerMetric {
        self.volume = volume;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// The scene behind this metric, when it is scene-backed.
    pub fn scene(&self) -> Option<&SharedScene> {
        match &self.backend {
            MetricBackend::Scene(s) => Some(s),
            MetricBackend::Custom(_) => None,
        }
    }

    /// Margin-strict chart membership plus any backend constraint.
    pub fn admits(&self, x: &[f64]) -> bool {
        match &self.backend {
            MetricBackend::Scene(s) => s.admits(x),
            MetricBackend::Custom(c) => {
                inside_margin(&self.chart, self.margin, x)
                    && c.admit.as_ref().map_or(true, |a| a(x))
            }
        }
    }

    /// Plain norm value F(x, y).
    pub fn norm(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let f = self.norm_fn_at(x)?;
        f(y)
    }

    /// A fast norm evaluator with the base point frozen, for indicatrix
    /// sampling. Scene backends reduce to plain matrix arithmetic.
    pub fn norm_fn_at(
        &self,
        x: &[f64],
    ) -> Result<Box<dyn Fn(&[f64]) -> Result<f64> + Send + Sync>> {
        let n = self.dim;
        match &self.backend {
            MetricBackend::Scene(scene) => {
                let a = scene.metric_at(x)?;
                let b = scene.oneform_at(x)?;
                Ok(Box::new(move |y: &[f64]| {
                    let mut q = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            q += a[(i, j)] * y[i] * y[j];
                        }
                    }
                    if !(q > 0.0) {
                        return Err(Error::DomainError {
                            op: "norm",
                            detail: format!("quadratic part {q} is not positive"),
                        });
                    }
                    let f = q.sqrt() + b.iter().zip(y).map(|(bi, yi)| bi * yi).sum::<f64>();
                    if !(f > 0.0) {
                        return Err(Error::DomainError {
                            op: "norm",
                            detail: format!("norm value {f} is not positive"),
                        });
                    }
                    Ok(f)
                }))
            }
            MetricBackend::Custom(c) => {
                let c = c.clone();
                let x = x.to_vec();
                Ok(Box::new(move |y: &[f64]| {
                    let site = Arc::new(TangentSample::new(x.clone(), y.to_vec())?);
                    let scope = JetScope::new(JetTable::grouped(n, 0, 0), site)?;
                    let f2 = (c.f2)(&scope)?;
                    if !(f2.value() > 0.0) {
                        return Err(Error::DomainError {
                            op: "norm",
                            detail: format!("F^2 value {} is not positive", f2.value()),
                        });
                    }
                    Ok(f2.value().sqrt())
                }))
            }
        }
    }

    /// Closed-form sigma_F(x), if this metric has one.
    pub fn sigma_closed(&self, x: &[f64]) -> Result<f64> {
        let mut y0 = vec![0.0; self.dim];
        y0[0] = 1.0;
        let site = Arc::new(TangentSample::new(x.to_vec(), y0)?);
        let scope = JetScope::new(JetTable::grouped(self.dim, 0, 0), site)?;
        let j = self.ln_sigma_closed_in_scope(&scope)?;
        Ok(j.value().exp())
    }

    /// Monte Carlo estimate of sigma_F(x) = Vol(B^n) / Vol(indicatrix).
    /// The returned volume field holds the sigma estimate itself, with
    /// the standard error propagated through the reciprocal.
    pub fn sigma_monte_carlo(
        &self,
        x: &[f64],
        samples: usize,
        seed: u64,
    ) -> Result<McVolume> {
        let norm = self.norm_fn_at(x)?;
        let mc = oracles::mc_body_volume(self.dim, &*norm, samples, seed)?;
        if !(mc.volume > 0.0) {
            return Err(Error::VolumeUnavailable(format!(
                "indicatrix volume estimate {} at {:?}",
                mc.volume, x
            )));
        }
        let ball = oracles::unit_ball_volume(self.dim);
        let sigma = ball / mc.volume;
        Ok(McVolume {
            volume: sigma,
            stderr: sigma * mc.stderr / mc.volume,
            hit_rate: mc.hit_rate,
        })
    }

    /// F^2 as a jet at the scope's center.
    fn f2_in_scope(&self, scope: &JetScope) -> Result<Jet> {
        match &self.backend {
            MetricBackend::Scene(scene) => {
                let n = scene.dim;
                let mut y = Vec::with_capacity(n);
                for i in 0..n {
                    y.push(scope.coordinate(scope.yslot(i))?);
                }
                let mut alpha2 = scope.constant(0.0);
                for i in 0..n {
                    for j in 0..n {
                        let aij = scene.metric_entry(i, j).eval_jet(scope, &scene.params)?;
                        alpha2 = alpha2.try_add(&aij.try_mul(&y[i])?.try_mul(&y[j])?)?;
                    }
                }
                if !(alpha2.value() > 0.0) {
                    return Err(Error::DomainError {
                        op: "f2",
                        detail: format!("quadratic part {} is not positive", alpha2.value()),
                    });
                }
                if beta_is_zero(scene) {
                    // Riemannian case: avoid the sqrt/square round trip.
                    return Ok(alpha2);
                }
                let mut f = alpha2.sqrt()?;
                for i in 0..n {
                    let bi = scene.oneform[i].eval_jet(scope, &scene.params)?;
                    f = f.try_add(&bi.try_mul(&y[i])?)?;
                }
                if !(f.value() > 0.0) {
                    return Err(Error::DomainError {
                        op: "f2",
                        detail: format!("norm value {} is not positive", f.value()),
                    });
                }
                f.try_mul(&f)
            }
            MetricBackend::Custom(c) => (c.f2)(scope),
        }
    }

    /// Closed-form ln sigma_F as a jet. For a scene-backed norm this is
    /// (n+1)/2 ln(1 - ||beta||^2) + 1/2 ln det a.
    fn ln_sigma_closed_in_scope(&self, scope: &JetScope) -> Result<Jet> {
        match &self.backend {
            MetricBackend::Scene(scene) => {
                let n = scene.dim;
                let mut a = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        a.push(scene.metric_entry(i, j).eval_jet(scope, &scene.params)?);
                    }
                }
                let det = linalg::determinant(&a, n, "volume density")?;
                if !(det.value() > 0.0) {
                    return Err(Error::NonPositiveDefinite {
                        context: "volume density determinant",
                        min_eig: det.value(),
                    });
                }
                let mut ln_sigma = det.ln()?.scale(0.5);
                if !beta_is_zero(scene) {
                    let (a_inv, _) = linalg::invert(&a, n, "volume density")?;
                    let mut b = Vec::with_capacity(n);
                    for i in 0..n {
                        b.push(scene.oneform[i].eval_jet(scope, &scene.params)?);
                    }
                    let mut bn2 = scope.constant(0.0);
                    for i in 0..n {
                        for j in 0..n {
                            bn2 = bn2
                                .try_add(&a_inv[i * n + j].try_mul(&b[i])?.try_mul(&b[j])?)?;
                        }
                    }
                    if bn2.value() >= 1.0 {
                        return Err(Error::NormViolation {
                            norm: bn2.value().sqrt(),
                            point: format!("{:?}", scope.center.x),
                        });
                    }
                    let one_minus = bn2.neg().add_scalar(1.0).ln()?;
                    ln_sigma = ln_sigma.try_add(&one_minus.scale((n as f64 + 1.0) / 2.0))?;
                }
                Ok(ln_sigma)
            }
            MetricBackend::Custom(c) => match &c.ln_sigma {
                Some(f) => f(scope),
                None => Err(Error::VolumeUnavailable(format!(
                    "metric {} has no closed-form density",
                    self.name
                ))),
            },
        }
    }

    /// ln sigma_F as a jet in the evaluation scope, honoring the volume
    /// specification. The Monte Carlo variant assembles value plus
    /// common-random-number gradient and restricts the jet's validity to
    /// first x-order so untrusted coefficients can never be read.
    fn ln_sigma_jet(
        &self,
        strategy: Strategy,
        center: &Arc<TangentSample>,
        table: &Arc<JetTable>,
    ) -> Result<Jet> {
        match self.volume {
            VolumeSpec::ClosedForm => materialize(strategy, center, table, &|s| {
                self.ln_sigma_closed_in_scope(s)
            }),
            VolumeSpec::MonteCarlo { samples, seed } => {
                let (x_cap, y_cap) = match table.region {
                    Region::Grouped { x_cap, y_cap, .. } => (x_cap, y_cap),
                    Region::Box { .. } => {
                        return Err(Error::InvalidConfig(
                            "sampled volume jets need a grouped target".into(),
                        ))
                    }
                };
                let scope = JetScope::new(table.clone(), center.clone())?;
                let x = &center.x;
                let n = self.dim;
                let v0 = self.sigma_monte_carlo(x, samples, seed)?.volume.ln();
                let mut jet = scope.constant(v0);
                if x_cap >= 1 {
                    let mut h0 = 0.01 * chart_half_width(&self.chart);
                    for k in 0..n {
                        let mut h = h0;
                        let mut fits = false;
                        for _ in 0..8 {
                            if self.admits(&bumped(x, k, h)) && self.admits(&bumped(x, k, -h))
                            {
                                fits = true;
                                break;
                            }
                            h *= 0.5;
                        }
                        if !fits {
                            return Err(Error::StencilOutsideChart {
                                point: format!("{x:?}"),
                            });
                        }
                        h0 = h0.min(h);
                        let up = self
                            .sigma_monte_carlo(&bumped(x, k, h), samples, seed)?
                            .volume
                            .ln();
                        let dn = self
                            .sigma_monte_carlo(&bumped(x, k, -h), samples, seed)?
                            .volume
                            .ln();
                        let grad = (up - dn) / (2.0 * h);
                        let dev = scope.coordinate(scope.xslot(k))?.add_scalar(-x[k]);
                        jet = jet.try_add(&dev.scale(grad))?;
                    }
                }
                Ok(jet.restrict_validity(&Validity::Grouped(x_cap.min(1), y_cap)))
            }
        }
    }
}

fn beta_is_zero(scene: &SharedScene) -> bool {
    scene
        .oneform
        .iter()
        .all(|e| matches!(e, Expr::Num(v) if *v == 0.0))
}

fn inside_margin(chart: &Chart, margin: f64, x: &[f64]) -> bool {
    match chart {
        Chart::Ball { r } => {
            let s: f64 = x.iter().map(|a| a * a).sum();
            s.sqrt() < r * margin
        }
        Chart::Box { lo, hi } => x.iter().all(|a| {
            let c = (lo + hi) / 2.0;
            let h = (hi - lo) / 2.0 * margin;
            (*a - c).abs() < h
        }),
    }
}

fn chart_half_width(chart: &Chart) -> f64 {
    match chart {
        Chart::Ball { r } => *r,
        Chart::Box { lo, hi } => (hi - lo) / 2.0,
    }
}

fn bumped(x: &[f64], k: usize, h: f64) -> Vec<f64> {
    let mut v = x.to_vec();
    v[k] += h;
    v
}

/// Max-absolute residuals of the consistency identities evaluated at one
/// site. `None` means the identity's inputs were not part of the request.
#[derive(Clone, Debug, Default)]
pub struct IdentityResiduals {
    /// |g_ij y^i y^j - F^2| / F^2.
    pub homogeneity: f64,
    /// max_i |G^i_j y^j - 2 G^i|.
    pub euler_spray: Option<f64>,
    /// max_i |K^i_k y^k|.
    pub ray_annihilation: Option<f64>,
    /// max |y^j y^l K^i_jkl - K^i_k|.
    pub tensor_reconstruction: Option<f64>,
    /// |S by flow route - S by trace route|.
    pub s_route_gap: Option<f64>,
    /// max |E_ij - (1/2) G^m_mij| (Berwald-tensor trace route).
    pub e_trace_gap: Option<f64>,
    /// max |y^j K_jl.m| (first contraction identity).
    pub first_contraction: Option<f64>,
    /// max |y^l K_jl.m + 2 H_jm| (second contraction identity).
    pub second_contraction: Option<f64>,
    /// max |y^l H_jl|.
    pub h_ray_null: Option<f64>,
    /// max |D^m_jml| (the Douglas construction removes this trace).
    pub douglas_trace: Option<f64>,
    /// max residual of W expressed through *W, H and the skew K_jl part.
    pub weyl_h_relation: Option<f64>,
    /// max |W^i_jkl - (1/3)(W^i_k.l.j - W^i_l.k.j)|.
    pub weyl_reconstruction: Option<f64>,
    /// max |y^j y^l W^i_jkl - y^j y^l *W^i_jkl|.
    pub scalar_part_match: Option<f64>,
}

/// Tensor values at one tangent-bundle site. Rank-2 tensors are row-major
/// n*n; rank-3 ((i*n+j)*n+k); rank-4 (((i*n+j)*n+k)*n+l).
#[derive(Clone, Debug)]
pub struct SiteTensors {
    pub dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Norm value F(x, y).
    pub f: f64,
    /// Fundamental tensor g_ij.
    pub g: Vec<f64>,
    pub g_inv: Vec<f64>,
    pub g_cond: f64,
    pub g_min_eig: f64,
    /// Geodesic spray coefficients G^i.
    pub spray: Option<Vec<f64>>,
    /// G^i_j.
    pub spray_jacobian: Option<Vec<f64>>,
    /// Berwald connection G^i_jk.
    pub berwald_connection: Option<Vec<f64>>,
    /// Berwald tensor G^i_jkl; identically zero iff the metric is Berwald.
    pub berwald_tensor: Option<Vec<f64>>,
    /// Douglas tensor D^i_jkl.
    pub douglas: Option<Vec<f64>>,
    /// Riemann curvature operator K^i_k.
    pub riemann: Option<Vec<f64>>,
    /// Ricci scalar K^k_k.
    pub ric: Option<f64>,
    /// Flag scalar Ric / ((n-1) F^2).
    pub flag: Option<f64>,
    /// Four-index curvature K^i_jkl.
    pub riemann_tensor: Option<Vec<f64>>,
    /// Trace K_jl = K^i_jil.
    pub ricci_lower: Option<Vec<f64>>,
    /// ln sigma_F at the base point.
    pub ln_sigma: Option<f64>,
    /// S-curvature, flow route (primary).
    pub s: Option<f64>,
    /// S-curvature, trace route.
    pub s_alt: Option<f64>,
    /// E-curvature E_ij.
    pub e: Option<Vec<f64>>,
    /// H-curvature H_ij.
    pub h: Option<Vec<f64>>,
    /// Projective curvature tensor W^i_jkl.
    pub weyl: Option<Vec<f64>>,
    /// Companion projective tensor *W^i_jkl.
    pub star_weyl: Option<Vec<f64>>,
    pub residuals: IdentityResiduals,
}

fn i2(n: usize, i: usize, j: usize) -> usize {
    i * n + j
}

fn i3(n: usize, i: usize, j: usize, k: usize) -> usize {
    (i * n + j) * n + k
}

fn i4(n: usize, i: usize, j: usize, k: usize, l: usize) -> usize {
    ((i * n + j) * n + k) * n + l
}

fn values_of(jets: &[Jet]) -> Vec<f64> {
    jets.iter().map(|j| j.value()).collect()
}

fn max_abs(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// The fundamental-tensor level of a site evaluation: the F^2 jet, the
/// fundamental tensor g and its inverse as jets, all sharing one scope.
#[derive(Clone)]
pub struct FundamentalJets {
    pub scope: JetScope,
    pub f2: Jet,
    /// g_ij jets, row major.
    pub g: Vec<Jet>,
    /// g^ij jets, row major.
    pub g_inv: Vec<Jet>,
    pub g_cond: f64,
    pub g_min_eig: f64,
    /// |g_ij y^i y^j - F^2| / F^2 at the center.
    pub homogeneity: f64,
}

/// Build the F^2 jet and the fundamental tensor of `metric` at `sample`
/// in a fresh scope with the given caps.
pub fn fundamental_jets(
    metric: &FinslerMetric,
    sample: &TangentSample,
    x_cap: u8,
    y_cap: u8,
    strategy: Strategy,
) -> Result<FundamentalJets> {
    let n = metric.dim();
    if sample.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "site has dim {}, metric {} has dim {n}",
            sample.dim(),
            metric.name()
        )));
    }
    if !metric.admits(&sample.x) {
        return Err(Error::OutsideChart {
            point: format!("{:?}", sample.x),
            chart: metric.chart().describe(),
        });
    }
    if y_cap < 2 {
        return Err(Error::InvalidConfig(
            "the fundamental tensor needs at least two y-orders".into(),
        ));
    }
    let table = JetTable::grouped(n, x_cap, y_cap);
    let center = Arc::new(sample.clone());
    let scope = JetScope::new(table.clone(), center.clone())?;
    let f2 = materialize(strategy, &center, &table, &|s| metric.f2_in_scope(s))?;
    if !(f2.value() > 0.0) {
        return Err(Error::DomainError {
            op: "fundamental_jets",
            detail: format!("F^2 = {} at {}", f2.value(), sample.describe()),
        });
    }
    let mut g = vec![scope.constant(0.0); n * n];
    for i in 0..n {
        let f2_yi = f2.deriv(scope.yslot(i))?;
        for j in i..n {
            let gij = f2_yi.deriv(scope.yslot(j))?.scale(0.5);
            g[i2(n, i, j)] = gij.clone();
            if j != i {
                g[i2(n, j, i)] = gij;
            }
        }
    }
    let g_mat = linalg::value_matrix(&g, n);
    let g_min_eig = g_mat
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(*v));
    if !(g_min_eig > 0.0) {
        return Err(Error::NonPositiveDefinite {
            context: "fundamental tensor",
            min_eig: g_min_eig,
        });
    }
    let (g_inv, g_cond) = linalg::invert(&g, n, "fundamental tensor")?;
    let homogeneity = {
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += g[i2(n, i, j)].value() * sample.y[i] * sample.y[j];
            }
        }
        (q - f2.value()).abs() / f2.value()
    };
    Ok(FundamentalJets {
        scope,
        f2,
        g,
        g_inv,
        g_cond,
        g_min_eig,
        homogeneity,
    })
}

/// Geodesic spray coefficients as jets:
/// G^i = (1/4) g^il (y^m [F^2]_{x^m y^l} - [F^2]_{x^l}).
pub fn spray_from_fundamental(fj: &FundamentalJets) -> Result<Vec<Jet>> {
    let scope = &fj.scope;
    let n = scope.dim();
    let mut f2_x = Vec::with_capacity(n);
    for m in 0..n {
        f2_x.push(fj.f2.deriv(scope.xslot(m))?);
    }
    let mut rhs = Vec::with_capacity(n);
    for l in 0..n {
        let mut acc = f2_x[l].neg();
        for m in 0..n {
            let ym = scope.coordinate(scope.yslot(m))?;
            acc = acc.try_add(&ym.try_mul(&f2_x[m].deriv(scope.yslot(l))?)?)?;
        }
        rhs.push(acc);
    }
    let mut spray = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = scope.constant(0.0);
        for l in 0..n {
            acc = acc.try_add(&fj.g_inv[i2(n, i, l)].try_mul(&rhs[l])?)?;
        }
        spray.push(acc.scale(0.25));
    }
    Ok(spray)
}

/// Evaluate the requested tensor groups at one site.
pub fn evaluate_site(
    metric: &FinslerMetric,
    sample: &TangentSample,
    request: OutputSet,
    strategy: Strategy,
) -> Result<SiteTensors> {
    let n = metric.dim();
    if sample.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "site has dim {}, metric {} has dim {n}",
            sample.dim(),
            metric.name()
        )));
    }
    if !metric.admits(&sample.x) {
        return Err(Error::OutsideChart {
            point: format!("{:?}", sample.x),
            chart: metric.chart().describe(),
        });
    }
    let r = request.closure();
    let (x_cap, y_cap) = request.caps();
    let fj = fundamental_jets(metric, sample, x_cap, y_cap, strategy)?;
    let scope = fj.scope.clone();
    let f2 = fj.f2.clone();
    let g = fj.g.clone();
    let g_inv = fj.g_inv.clone();
    let g_cond = fj.g_cond;
    let min_eig = fj.g_min_eig;
    let homogeneity = fj.homogeneity;
    let f_val = f2.value().sqrt();
    let ys = |i: usize| scope.yslot(i);
    let xs = |i: usize| scope.xslot(i);
    let mut y_jets = Vec::with_capacity(n);
    for i in 0..n {
        y_jets.push(scope.coordinate(ys(i))?);
    }
    let g_values = values_of(&g);

    let mut st = SiteTensors {
        dim: n,
        x: sample.x.clone(),
        y: sample.y.clone(),
        f: f_val,
        g: g_values,
        g_inv: values_of(&g_inv),
        g_cond,
        g_min_eig: min_eig,
        spray: None,
        spray_jacobian: None,
        berwald_connection: None,
        berwald_tensor: None,
        douglas: None,
        riemann: None,
        ric: None,
        flag: None,
        riemann_tensor: None,
        ricci_lower: None,
        ln_sigma: None,
        s: None,
        s_alt: None,
        e: None,
        h: None,
        weyl: None,
        star_weyl: None,
        residuals: IdentityResiduals {
            homogeneity,
            ..IdentityResiduals::default()
        },
    };
    if !r.spray {
        return Ok(st);
    }

    let spray = spray_from_fundamental(&fj)?;
    st.spray = Some(values_of(&spray));

    // G^i_j and the Euler relation G^i_j y^j = 2 G^i (degree-2 homogeneity).
    let mut b1 = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            b1.push(spray[i].deriv(ys(j))?);
        }
    }
    st.spray_jacobian = Some(values_of(&b1));
    st.residuals.euler_spray = Some(max_abs((0..n).map(|i| {
        let mut acc = -2.0 * spray[i].value();
        for j in 0..n {
            acc += b1[i2(n, i, j)].value() * sample.y[j];
        }
        acc
    })));

    // Berwald connection and tensor.
    let need_b2 = r.berwald || r.riemann || r.e_curv;
    let mut b2: Vec<Jet> = Vec::new();
    if need_b2 {
        b2.reserve(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    b2.push(b1[i2(n, i, j)].deriv(ys(k))?);
                }
            }
        }
    }
    if r.berwald {
        st.berwald_connection = Some(values_of(&b2));
        let mut b3v = vec![0.0; n * n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        b3v[i4(n, i, j, k, l)] = b2[i3(n, i, j, k)].d(&[ys(l)])?;
                    }
                }
            }
        }
        st.berwald_tensor = Some(b3v);
    }

    // Douglas tensor: third y-derivatives of G^i - (tr G^._.) y^i / (n+1).
    if r.douglas {
        let mut trace = scope.constant(0.0);
        for m in 0..n {
            trace = trace.try_add(&b1[i2(n, m, m)])?;
        }
        let scale = -1.0 / (n as f64 + 1.0);
        let mut d = vec![0.0; n * n * n * n];
        for i in 0..n {
            let proj = spray[i].try_add(&trace.try_mul(&y_jets[i])?.scale(scale))?;
            for j in 0..n {
                let pj = proj.deriv(ys(j))?;
                for k in j..n {
                    let pjk = pj.deriv(ys(k))?;
                    for l in k..n {
                        let v = pjk.d(&[ys(l)])?;
                        // Symmetric in (j, k, l): fill every ordering.
                        for (a, b, c) in [
                            (j, k, l),
                            (j, l, k),
                            (k, j, l),
                            (k, l, j),
                            (l, j, k),
                            (l, k, j),
                        ] {
                            d[i4(n, i, a, b, c)] = v;
                        }
                    }
                }
            }
        }
        st.residuals.douglas_trace = Some(max_abs((0..n).flat_map(|j| {
            let d = &d;
            (0..n).map(move |l| (0..n).map(|m| d[i4(n, m, j, m, l)]).sum::<f64>())
        })));
        st.douglas = Some(d);
    }

    // Riemann curvature operator:
    // K^i_k = 2 dG^i/dx^k - y^j d2G^i/dx^j dy^k
    //       + 2 G^j d2G^i/dy^j dy^k - dG^i/dy^j dG^j/dy^k.
    let mut kk: Vec<Jet> = Vec::new();
    if r.riemann {
        let mut spray_x = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                spray_x.push(spray[i].deriv(xs(j))?);
            }
        }
        kk.reserve(n * n);
        for i in 0..n {
            for k in 0..n {
                let mut acc = spray_x[i2(n, i, k)].scale(2.0);
                for j in 0..n {
                    acc = acc
                        .try_sub(&y_jets[j].try_mul(&spray_x[i2(n, i, j)].deriv(ys(k))?)?)?;
                    acc = acc
                        .try_add(&spray[j].try_mul(&b2[i3(n, i, j, k)])?.scale(2.0))?;
                    acc = acc.try_sub(&b1[i2(n, i, j)].try_mul(&b1[i2(n, j, k)])?)?;
                }
                kk.push(acc);
            }
        }
        st.riemann = Some(values_of(&kk));
        let ric: f64 = (0..n).map(|k| kk[i2(n, k, k)].value()).sum();
        st.ric = Some(ric);
        st.flag = Some(ric / ((n as f64 - 1.0) * f2.value()));
        st.residuals.ray_annihilation = Some(max_abs((0..n).map(|i| {
            (0..n)
                .map(|k| kk[i2(n, i, k)].value() * sample.y[k])
                .sum::<f64>()
        })));
    }

    // Spray part of the S-curvature along the geodesic flow field
    // y^k d/dx^k - 2 G^k d/dy^k, applied to (1/2) ln det g. The volume
    // density contributes -y^k d ln sigma / dx^k on top; it is linear in
    // the x-derivative of a y-independent function, so E and H below are
    // built from the spray part alone, exactly.
    let mut s_geom: Option<Jet> = None;
    if r.s_curv || r.e_curv {
        let tau_geom = linalg::determinant(&g, n, "fundamental tensor")?
            .ln()?
            .scale(0.5);
        let mut acc = scope.constant(0.0);
        for k in 0..n {
            acc = acc.try_add(&y_jets[k].try_mul(&tau_geom.deriv(xs(k))?)?)?;
            acc = acc.try_sub(&spray[k].try_mul(&tau_geom.deriv(ys(k))?)?.scale(2.0))?;
        }
        let trace: f64 = (0..n).map(|m| b1[i2(n, m, m)].value()).sum();
        st.residuals.s_route_gap = Some((acc.value() - trace).abs());
        s_geom = Some(acc);
    }
    if r.s_curv {
        let ln_sigma = metric.ln_sigma_jet(strategy, &scope.center, &scope.table)?;
        st.ln_sigma = Some(ln_sigma.value());
        let mut drift = 0.0;
        for k in 0..n {
            drift += sample.y[k] * ln_sigma.d(&[xs(k)])?;
        }
        let s_flow = s_geom.as_ref().map(|j| j.value()).unwrap_or(0.0) - drift;
        let trace: f64 = (0..n).map(|m| b1[i2(n, m, m)].value()).sum();
        st.s = Some(s_flow);
        st.s_alt = Some(trace - drift);
    }

    // E-curvature from the spray part of S, cross-checked against the
    // Berwald-tensor trace E_ij = (1/2) G^m_mij.
    let mut e_jets: Vec<Jet> = Vec::new();
    if r.e_curv {
        let sg = s_geom.as_ref().expect("s_geom computed with e_curv");
        e_jets.reserve(n * n);
        for i in 0..n {
            let si = sg.deriv(ys(i))?;
            for j in 0..n {
                e_jets.push(si.deriv(ys(j))?.scale(0.5));
            }
        }
        st.e = Some(values_of(&e_jets));
        let mut gap = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let mut tr = 0.0;
                for m in 0..n {
                    tr += b2[i3(n, m, m, i)].d(&[ys(j)])?;
                }
                gap = gap.max((e_jets[i2(n, i, j)].value() - 0.5 * tr).abs());
            }
        }
        st.residuals.e_trace_gap = Some(gap);
    }

    // H-curvature: H_ij = y^k delta E_ij / delta x^k - E_rj G^r_i - E_ir G^r_j,
    // with the horizontal derivative delta/dx^k = d/dx^k - G^m_k d/dy^m.
    let mut h_values: Vec<f64> = Vec::new();
    if r.h_curv {
        h_values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let e_ij = &e_jets[i2(n, i, j)];
                let mut acc = 0.0;
                for k in 0..n {
                    let mut horiz = e_ij.d(&[xs(k)])?;
                    for m in 0..n {
                        horiz -= b1[i2(n, m, k)].value() * e_ij.d(&[ys(m)])?;
                    }
                    acc += sample.y[k] * horiz;
                }
                for m in 0..n {
                    acc -= e_jets[i2(n, m, j)].value() * b1[i2(n, m, i)].value();
                    acc -= e_jets[i2(n, i, m)].value() * b1[i2(n, m, j)].value();
                }
                h_values[i2(n, i, j)] = acc;
            }
        }
        st.residuals.h_ray_null = Some(max_abs((0..n).map(|j| {
            (0..n)
                .map(|l| h_values[i2(n, j, l)] * sample.y[l])
                .sum::<f64>()
        })));
        st.h = Some(h_values.clone());
    }

    // Four-index curvature K^i_jkl = (1/3)(K^i_k.j.l - K^i_l.j.k),
    // antisymmetric in (k, l), and its trace K_jl = K^i_jil.
    let mut kt: Vec<Jet> = Vec::new();
    let mut k_low: Vec<Jet> = Vec::new();
    if r.riemann_tensor {
        kt = vec![scope.constant(0.0); n * n * n * n];
        for i in 0..n {
            for k in 0..n {
                for l in 0..k {
                    let a = kk[i2(n, i, k)].deriv(ys(l))?;
                    let b = kk[i2(n, i, l)].deriv(ys(k))?;
                    for j in 0..n {
                        let t = a
                            .deriv(ys(j))?
                            .try_sub(&b.deriv(ys(j))?)?
                            .scale(1.0 / 3.0);
                        kt[i4(n, i, j, l, k)] = t.neg();
                        kt[i4(n, i, j, k, l)] = t;
                    }
                }
            }
        }
        k_low.reserve(n * n);
        for j in 0..n {
            for l in 0..n {
                let mut acc = scope.constant(0.0);
                for i in 0..n {
                    acc = acc.try_add(&kt[i4(n, i, j, i, l)])?;
                }
                k_low.push(acc);
            }
        }
        st.riemann_tensor = Some(values_of(&kt));
        st.ricci_lower = Some(values_of(&k_low));
        st.residuals.tensor_reconstruction = Some(max_abs((0..n).flat_map(|i| {
            let kt = &kt;
            let kk = &kk;
            let y = &sample.y;
            (0..n).map(move |k| {
                let mut acc = -kk[i2(n, i, k)].value();
                for j in 0..n {
                    for l in 0..n {
                        acc += y[j] * y[l] * kt[i4(n, i, j, k, l)].value();
                    }
                }
                acc
            })
        })));
    }

    // The two contraction identities: y^j K_jl.m = 0 and
    // y^l K_jl.m = -2 H_jm (dot = y-derivative).
    if r.ricci_identities {
        let mut dk = vec![0.0; n * n * n];
        for j in 0..n {
            for l in 0..n {
                for m in 0..n {
                    dk[i3(n, j, l, m)] = k_low[i2(n, j, l)].d(&[ys(m)])?;
                }
            }
        }
        st.residuals.first_contraction = Some(max_abs((0..n).flat_map(|l| {
            let dk = &dk;
            let y = &sample.y;
            (0..n).map(move |m| (0..n).map(|j| y[j] * dk[i3(n, j, l, m)]).sum::<f64>())
        })));
        st.residuals.second_contraction = Some(max_abs((0..n).flat_map(|j| {
            let dk = &dk;
            let h = &h_values;
            let y = &sample.y;
            (0..n).map(move |m| {
                let c: f64 = (0..n).map(|l| y[l] * dk[i3(n, j, l, m)]).sum();
                c + 2.0 * h[i2(n, j, m)]
            })
        })));
    }

    // Projective curvature tensors. With the contracted family
    // A_jk = n K_jk + K_kj + y^r K_kr.j:
    //   W^i_jkl  = K^i_jkl - (1/(n^2-1)) { delta^i_j (A_kl - A_lk)
    //            + delta^i_k A_jl - delta^i_l A_jk
    //            + y^i (A_kl - A_lk).j }
    //   *W^i_jkl = K^i_jkl - (1/(n^2-1)) { delta^i_k (n K_jl + K_lj)
    //            - delta^i_l (n K_jk + K_kj)
    //            + (n-1) delta^i_j (K_kl - K_lk) }.
    if r.weyl {
        let c = 1.0 / ((n * n) as f64 - 1.0);
        let mut hat = Vec::with_capacity(n * n);
        for j in 0..n {
            for k in 0..n {
                let mut acc = k_low[i2(n, j, k)]
                    .scale(n as f64)
                    .try_add(&k_low[i2(n, k, j)])?;
                for rr in 0..n {
                    acc = acc
                        .try_add(&y_jets[rr].try_mul(&k_low[i2(n, k, rr)].deriv(ys(j))?)?)?;
                }
                hat.push(acc);
            }
        }
        let mut w = vec![scope.constant(0.0); n * n * n * n];
        for k in 0..n {
            for l in 0..k {
                // Assemble the (l, k) orientation directly; the mirrored
                // (k, l) entry is its negative by antisymmetry.
                let skew = hat[i2(n, l, k)].try_sub(&hat[i2(n, k, l)])?;
                for j in 0..n {
                    let skew_dj = skew.deriv(ys(j))?;
                    for i in 0..n {
                        let mut t = kt[i4(n, i, j, l, k)].clone();
                        if i == j {
                            t = t.try_sub(&skew.scale(c))?;
                        }
                        if i == l {
                            t = t.try_sub(&hat[i2(n, j, k)].scale(c))?;
                        }
                        if i == k {
                            t = t.try_add(&hat[i2(n, j, l)].scale(c))?;
                        }
                        t = t.try_sub(&y_jets[i].try_mul(&skew_dj)?.scale(c))?;
                        w[i4(n, i, j, k, l)] = t.neg();
                        w[i4(n, i, j, l, k)] = t;
                    }
                }
            }
        }
        let kl = |j: usize, l: usize| k_low[i2(n, j, l)].value();
        let mut sw = vec![0.0; n * n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let mut t = kt[i4(n, i, j, k, l)].value();
                        if i == k {
                            t -= c * (n as f64 * kl(j, l) + kl(l, j));
                        }
                        if i == l {
                            t += c * (n as f64 * kl(j, k) + kl(k, j));
                        }
                        if i == j {
                            t -= c * (n as f64 - 1.0) * (kl(k, l) - kl(l, k));
                        }
                        sw[i4(n, i, j, k, l)] = t;
                    }
                }
            }
        }
        // Relation residual: W^i_jkl = *W^i_jkl
        //   - 2/(n^2-1) (delta^i_l H_jk - delta^i_k H_jl)
        //   - y^i/(n+1) (K_kl - K_lk).j.
        let mut rel = 0.0f64;
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let skew_dj = k_low[i2(n, k, l)].d(&[ys(j)])?
                        - k_low[i2(n, l, k)].d(&[ys(j)])?;
                    for i in 0..n {
                        let mut t = sw[i4(n, i, j, k, l)];
                        if i == l {
                            t -= 2.0 * c * h_values[i2(n, j, k)];
                        }
                        if i == k {
                            t += 2.0 * c * h_values[i2(n, j, l)];
                        }
                        t -= sample.y[i] / (n as f64 + 1.0) * skew_dj;
                        rel = rel.max((w[i4(n, i, j, k, l)].value() - t).abs());
                    }
                }
            }
        }
        st.residuals.weyl_h_relation = Some(rel);
        st.weyl = Some(values_of(&w));
        st.star_weyl = Some(sw.clone());

        // Deep checks on the y-contracted part W^i_k = y^j y^l W^i_jkl.
        if r.weyl_deep {
            let mut yy = Vec::with_capacity(n * n);
            for j in 0..n {
                for l in 0..n {
                    yy.push(y_jets[j].try_mul(&y_jets[l])?);
                }
            }
            let mut wsc = Vec::with_capacity(n * n);
            for i in 0..n {
                for k in 0..n {
                    let mut acc = scope.constant(0.0);
                    for j in 0..n {
                        for l in 0..n {
                            if k == l {
                                continue;
                            }
                            acc = acc
                                .try_add(&yy[i2(n, j, l)].try_mul(&w[i4(n, i, j, k, l)])?)?;
                        }
                    }
                    wsc.push(acc);
                }
            }
            let mut recon = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for l in 0..k {
                            let a = wsc[i2(n, i, k)].d(&[ys(l), ys(j)])?;
                            let b = wsc[i2(n, i, l)].d(&[ys(k), ys(j)])?;
                            let t = (a - b) / 3.0;
                            recon = recon.max((w[i4(n, i, j, k, l)].value() - t).abs());
                        }
                    }
                }
            }
            st.residuals.weyl_reconstruction = Some(recon);
            let mut scalar_gap = 0.0f64;
            for i in 0..n {
                for k in 0..n {
                    let mut star = 0.0;
                    for j in 0..n {
                        for l in 0..n {
                            star += sample.y[j] * sample.y[l] * sw[i4(n, i, j, k, l)];
                        }
                    }
                    scalar_gap = scalar_gap.max((wsc[i2(n, i, k)].value() - star).abs());
                }
            }
            st.residuals.scalar_part_match = Some(scalar_gap);
        }
    }

    Ok(st)
}

/// Evaluate many sites in parallel. Order matches the input order.
pub fn evaluate_sweep(
    metric: &FinslerMetric,
    sites: &[TangentSample],
    request: OutputSet,
    strategy: Strategy,
) -> Vec<Result<SiteTensors>> {
    sites
        .par_iter()
        .map(|s| evaluate_site(metric, s, request, strategy))
        .collect()
}

/// Draw admissible tangent samples for this metric: Halton base points on
/// the margin-shrunk chart, Gaussian directions normalized to F = 1.
pub fn metric_sites(metric: &FinslerMetric, seed: u64, count: usize) -> Result<Sweep> {
    sample::sweep(
        metric.dim(),
        metric.chart(),
        metric.margin(),
        seed,
        count,
        &|x, z| metric.norm(x, z),
        &|site| metric.admits(&site.x),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::parse_scene_strict;
    use crate::tol;

    const EUCLID3: &str = "dim 3; chart box -1 1;\n\
        metric a[1][1]=1 a[2][2]=1 a[3][3]=1;";

    const SPHERE3: &str = "dim 3; chart ball 2;\n\
        metric a[1][1]=1/(1+(x1^2+x2^2+x3^2)/4)^2\n\
               a[2][2]=1/(1+(x1^2+x2^2+x3^2)/4)^2\n\
               a[3][3]=1/(1+(x1^2+x2^2+x3^2)/4)^2;";

    const HYPERBOLIC3: &str = "dim 3; chart ball 2;\n\
        metric a[1][1]=1/(1-(x1^2+x2^2+x3^2)/4)^2\n\
               a[2][2]=1/(1-(x1^2+x2^2+x3^2)/4)^2\n\
               a[3][3]=1/(1-(x1^2+x2^2+x3^2)/4)^2;";

    const GENERIC3: &str = "dim 3; chart box -0.7 0.7;\n\
        metric a[1][1]=2+0.3*sin(x2) a[2][2]=1+x1^2/2 a[3][3]=1+0.2*exp(x1)\n\
               a[1][2]=0.1*x1*x3 a[2][3]=0.05*x2;";

    const ROT_RANDERS3: &str = "dim 3; chart ball 1; param c = 0.2;\n\
        metric a[1][1]=1 a[2][2]=1 a[3][3]=1;\n\
        oneform b[1]=-c*x2 b[2]=c*x1 b[3]=0;";

    fn metric_from(text: &str) -> FinslerMetric {
        FinslerMetric::from_scene(Arc::new(parse_scene_strict(text).unwrap()))
    }

    fn site(x: &[f64], y: &[f64]) -> TangentSample {
        TangentSample::new(x.to_vec(), y.to_vec()).unwrap()
    }

    fn assert_small(tag: &str, v: Option<f64>, tol: f64) {
        let v = v.unwrap_or_else(|| panic!("{tag} was not computed"));
        assert!(v.abs() <= tol, "{tag} = {v:e} exceeds {tol:e}");
    }

    #[test]
    fn flat_metric_produces_no_curvature_anywhere() {
        let m = metric_from(EUCLID3);
        let s = site(&[0.3, -0.5, 0.1], &[1.0, 0.4, -0.8]);
        let t = evaluate_site(&m, &s, OutputSet::all(), Strategy::DenseTaylor).unwrap();
        assert!(max_abs(t.spray.unwrap()) < 1e-14);
        assert!(max_abs(t.riemann.unwrap()) < 1e-13);
        assert!(max_abs(t.riemann_tensor.unwrap()) < 1e-13);
        assert!(max_abs(t.berwald_tensor.unwrap()) < 1e-13);
        assert!(max_abs(t.douglas.unwrap()) < 1e-13);
        assert!(max_abs(t.e.unwrap()) < 1e-13);
        assert!(max_abs(t.h.unwrap()) < 1e-13);
        assert!(max_abs(t.weyl.unwrap()) < 1e-13);
        assert!(max_abs(t.star_weyl.unwrap()) < 1e-13);
        assert!(t.s.unwrap().abs() < 1e-13);
        assert!(t.s_alt.unwrap().abs() < 1e-13);
        assert!(t.ln_sigma.unwrap().abs() < 1e-15);
        assert!(t.residuals.homogeneity < 1e-13);
    }

    #[test]
    fn sphere_chart_has_flag_curvature_one_and_no_projective_curvature() {
        let m = metric_from(SPHERE3);
        let req = OutputSet {
            weyl: true,
            s_curv: true,
            douglas: true,
            ..OutputSet::default()
        };
        for (x, y) in [
            ([0.3, -0.2, 0.5], [1.0, 0.2, -0.4]),
            ([-0.6, 0.1, 0.2], [0.3, -1.0, 0.5]),
        ] {
            let t = evaluate_site(&m, &site(&x, &y), req, Strategy::DenseTaylor).unwrap();
            let flag = t.flag.unwrap();
            assert!(
                (flag - 1.0).abs() < tol::CLOSED_FORM_REL,
                "flag {flag} at {x:?}"
            );
            // Constant flag curvature: both projective tensors vanish,
            // and a Riemannian metric is Berwald with zero S.
            assert!(max_abs(t.weyl.unwrap()) < tol::VANISHING_ABS);
            assert!(max_abs(t.star_weyl.unwrap()) < tol::VANISHING_ABS);
            assert!(max_abs(t.douglas.unwrap()) < 1e-10);
            assert!(t.s.unwrap().abs() < 1e-10);
            assert!(max_abs(t.h.unwrap()) < 1e-10);
        }
    }

    #[test]
    fn hyperbolic_chart_has_flag_curvature_minus_one() {
        let m = metric_from(HYPERBOLIC3);
        let req = OutputSet {
            riemann: true,
            ..OutputSet::default()
        };
        let t = evaluate_site(
            &m,
            &site(&[0.4, 0.3, -0.2], &[0.6, -1.0, 0.2]),
            req,
            Strategy::DenseTaylor,
        )
        .unwrap();
        let flag = t.flag.unwrap();
        assert!((flag + 1.0).abs() < tol::CLOSED_FORM_REL, "flag {flag}");
    }

    #[test]
    fn riemannian_limit_matches_levi_civita_curvature() {
        // For a metric with no one-form the pipeline must reproduce the
        // Levi-Civita spray and curvature tensor of the base metric.
        use crate::riemann::AlphaFrame;
        let scene = Arc::new(parse_scene_strict(GENERIC3).unwrap());
        let m = FinslerMetric::from_scene(scene.clone());
        let x = [0.25, -0.4, 0.3];
        let y = [0.7, 0.2, -1.1];
        let req = OutputSet {
            riemann_tensor: true,
            ..OutputSet::default()
        };
        let t = evaluate_site(&m, &site(&x, &y), req, Strategy::DenseTaylor).unwrap();
        let frame = AlphaFrame::new(&scene, &x, 2).unwrap();
        let spray_alpha = frame.spray_values(&y).unwrap();
        let spray = t.spray.as_ref().unwrap();
        for i in 0..3 {
            assert!(
                (spray[i] - spray_alpha[i]).abs() < tol::CROSS_ROUTE_ABS,
                "spray[{i}]: {} vs {}",
                spray[i],
                spray_alpha[i]
            );
        }
        let r = frame.curvature_values().unwrap();
        let kt = t.riemann_tensor.as_ref().unwrap();
        let worst = kt
            .iter()
            .zip(&r)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst < tol::CROSS_ROUTE_ABS, "curvature gap {worst:e}");
    }

    #[test]
    fn randers_scene_satisfies_every_internal_identity() {
        let m = metric_from(ROT_RANDERS3);
        for (x, y) in [
            ([0.3, -0.2, 0.4], [1.0, 0.3, -0.5]),
            ([-0.1, 0.5, 0.2], [-0.4, 0.9, 0.7]),
        ] {
            let t =
                evaluate_site(&m, &site(&x, &y), OutputSet::all(), Strategy::DenseTaylor)
                    .unwrap();
            let res = &t.residuals;
            assert!(res.homogeneity < 1e-12);
            assert_small("euler_spray", res.euler_spray, 1e-12);
            assert_small("ray_annihilation", res.ray_annihilation, 1e-11);
            assert_small("tensor_reconstruction", res.tensor_reconstruction, 1e-10);
            assert_small("s_route_gap", res.s_route_gap, tol::CROSS_ROUTE_ABS);
            assert_small("e_trace_gap", res.e_trace_gap, tol::CROSS_ROUTE_ABS);
            assert_small("first_contraction", res.first_contraction, 1e-9);
            assert_small("second_contraction", res.second_contraction, 1e-9);
            assert_small("h_ray_null", res.h_ray_null, 1e-10);
            assert_small("douglas_trace", res.douglas_trace, 1e-11);
            assert_small("weyl_h_relation", res.weyl_h_relation, 1e-9);
            assert_small("weyl_reconstruction", res.weyl_reconstruction, 1e-9);
            assert_small("scalar_part_match", res.scalar_part_match, 1e-9);
        }
    }

    #[test]
    fn outputs_scale_correctly_when_y_is_doubled() {
        let m = metric_from(ROT_RANDERS3);
        let x = [0.2, 0.3, -0.4];
        let y1 = [0.8, -0.3, 0.5];
        let y2: Vec<f64> = y1.iter().map(|v| 2.0 * v).collect();
        let req = OutputSet {
            riemann: true,
            s_curv: true,
            e_curv: true,
            douglas: true,
            ..OutputSet::default()
        };
        let a = evaluate_site(&m, &site(&x, &y1), req, Strategy::DenseTaylor).unwrap();
        let b = evaluate_site(&m, &site(&x, &y2), req, Strategy::DenseTaylor).unwrap();
        // Degrees in y: spray 2, K 2, S 1, E -1, D -1, flag 0.
        let sa = a.spray.unwrap();
        let sb = b.spray.unwrap();
        for i in 0..3 {
            assert!((4.0 * sa[i] - sb[i]).abs() < 1e-11);
        }
        let ka = a.riemann.unwrap();
        let kb = b.riemann.unwrap();
        for i in 0..9 {
            assert!((4.0 * ka[i] - kb[i]).abs() < 1e-10);
        }
        assert!((2.0 * a.s.unwrap() - b.s.unwrap()).abs() < 1e-11);
        assert!((a.flag.unwrap() - b.flag.unwrap()).abs() < 1e-12);
        let ea = a.e.unwrap();
        let eb = b.e.unwrap();
        for i in 0..9 {
            assert!((0.5 * ea[i] - eb[i]).abs() < 1e-12);
        }
        let da = a.douglas.unwrap();
        let db = b.douglas.unwrap();
        for i in 0..81 {
            assert!((0.5 * da[i] - db[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn both_jet_strategies_agree_on_every_output() {
        let m = metric_from(ROT_RANDERS3);
        let s = site(&[0.25, -0.3, 0.15], &[0.9, 0.4, -0.6]);
        let a = evaluate_site(&m, &s, OutputSet::all(), Strategy::DenseTaylor).unwrap();
        let b =
            evaluate_site(&m, &s, OutputSet::all(), Strategy::DirectionalNested).unwrap();
        let pairs: [(&str, &Option<Vec<f64>>, &Option<Vec<f64>>); 10] = [
            ("spray", &a.spray, &b.spray),
            ("berwald_connection", &a.berwald_connection, &b.berwald_connection),
            ("berwald_tensor", &a.berwald_tensor, &b.berwald_tensor),
            ("douglas", &a.douglas, &b.douglas),
            ("riemann", &a.riemann, &b.riemann),
            ("riemann_tensor", &a.riemann_tensor, &b.riemann_tensor),
            ("e", &a.e, &b.e),
            ("h", &a.h, &b.h),
            ("weyl", &a.weyl, &b.weyl),
            ("star_weyl", &a.star_weyl, &b.star_weyl),
        ];
        for (tag, va, vb) in pairs {
            let va = va.as_ref().unwrap();
            let vb = vb.as_ref().unwrap();
            let gap = va
                .iter()
                .zip(vb)
                .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
            assert!(gap < 1e-11, "{tag} strategy gap {gap:e}");
        }
        assert!((a.s.unwrap() - b.s.unwrap()).abs() < 1e-11);
        assert!((a.flag.unwrap() - b.flag.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_volume_reproduces_flat_density_and_zero_s() {
        // On a Euclidean scene the indicatrix is the same ball at every
        // base point, so the common-random-number stencil sees identical
        // estimates on both sides and the sampled gradient is exactly 0.
        let m = metric_from(EUCLID3).with_volume(VolumeSpec::MonteCarlo {
            samples: 60_000,
            seed: 9,
        });
        let s = site(&[0.2, -0.1, 0.3], &[1.0, 0.5, -0.2]);
        let req = OutputSet {
            s_curv: true,
            ..OutputSet::default()
        };
        let t = evaluate_site(&m, &s, req, Strategy::DenseTaylor).unwrap();
        assert!(t.ln_sigma.unwrap().abs() < 0.05, "ln sigma should be near 0");
        assert!(t.s.unwrap().abs() < 1e-12);
        assert!(t.s_alt.unwrap().abs() < 1e-12);
    }

    #[test]
    fn closed_form_density_matches_monte_carlo_estimate() {
        let m = metric_from(ROT_RANDERS3);
        let x = [0.3, 0.2, -0.1];
        let closed = m.sigma_closed(&x).unwrap();
        let mc = m.sigma_monte_carlo(&x, 120_000, 42).unwrap();
        let rel = (closed - mc.volume).abs() / closed;
        assert!(
            rel < tol::MC_VOLUME_REL,
            "closed {closed} vs sampled {} (rel {rel:e})",
            mc.volume
        );
    }

    #[test]
    fn f2_jet_coefficients_match_finite_differences() {
        let m = metric_from(ROT_RANDERS3);
        let x = [0.2, -0.3, 0.1];
        let y = [0.7, 0.4, -0.5];
        let table = JetTable::grouped(3, 2, 3);
        let center = Arc::new(site(&x, &y));
        let scope = JetScope::new(table.clone(), center.clone()).unwrap();
        let f2 = m.f2_in_scope(&scope).unwrap();
        let func = |px: &[f64], py: &[f64]| -> Result<f64> {
            let f = m.norm(px, py)?;
            Ok(f * f)
        };
        for slot in 0..6 {
            let fd = oracles::fd_partial(&func, &x, &y, slot, 1e-3).unwrap();
            let jet = f2.d(&[slot]).unwrap();
            let scale = jet.abs().max(1.0);
            assert!(
                (fd - jet).abs() / scale < tol::FD_REL,
                "slot {slot}: fd {fd} vs jet {jet}"
            );
        }
        let fd2 = oracles::fd_partial2(&func, &x, &y, 0, 4, 1e-3).unwrap();
        let jet2 = f2.d(&[0, 4]).unwrap();
        assert!((fd2 - jet2).abs() / jet2.abs().max(1.0) < tol::FD_REL);
    }

    #[test]
    fn request_closure_pulls_in_prerequisites() {
        let r = OutputSet {
            h_curv: true,
            ..OutputSet::default()
        }
        .closure();
        assert!(r.e_curv && r.berwald && r.spray);
        assert!(!r.weyl && !r.riemann_tensor);
        let w = OutputSet {
            weyl: true,
            ..OutputSet::default()
        };
        assert_eq!(w.caps(), (2, 8));
        assert_eq!(OutputSet::all().caps(), (2, 10));
        assert_eq!(OutputSet::fundamental().caps(), (0, 2));
    }

    #[test]
    fn sites_are_admissible_and_normalized() {
        let m = metric_from(ROT_RANDERS3);
        let sweep = metric_sites(&m, 11, 12).unwrap();
        assert_eq!(sweep.sites.len(), 12);
        for s in &sweep.sites {
            assert!(m.admits(&s.x));
            let f = m.norm(&s.x, &s.y).unwrap();
            assert!((f - 1.0).abs() < 1e-12);
        }
    }
}
