//! Symmetry analysis for Finsler metrics.
//!
//! A vector field V on the base manifold lifts to the complete lift
//! V-hat = V^i d/dx^i + y^k (dV^i/dx^k) d/dy^i on the slit tangent
//! bundle. V is a projective symmetry when the Lie derivative of the
//! spray along V-hat is radial, L_{V-hat} G^i = P y^i for some factor
//! P(x, y), and an affine symmetry when P vanishes. This module fits P
//! by g-orthogonal projection, measures the orthogonal remainder, and
//! builds the higher level verdicts on top: the projective criterion
//! that splits a Randers symmetry into a quadratic-norm symmetry plus a
//! torsion condition, the homothety fit for the underlying quadratic
//! norm, and the rank of the span of all passing candidate fields.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::finsler::{
    fundamental_jets, spray_from_fundamental, FinslerMetric, FundamentalJets,
};
use crate::jet::{Jet, JetScope, Strategy};
use crate::riemann::{AlphaFrame, BetaFrame};
use crate::sample::TangentSample;
use crate::scene::{bracket, Expr, SceneSpec, SharedScene};
use crate::tol;

/// Jet caps used by the symmetry checks. Two x-orders feed the second
/// mixed derivatives in the lift term, and five y-orders leave the
/// fitted factor twice y-differentiable after the fundamental tensor
/// inversion has consumed its share.
pub const SYMMETRY_X_CAP: u8 = 2;
pub const SYMMETRY_Y_CAP: u8 = 5;

/// A vector field on the base manifold with expression components.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub name: String,
    /// components[i] is V^i as an expression in the chart coordinates.
    pub components: Vec<Expr>,
}

impl VectorField {
    pub fn new(name: impl Into<String>, components: Vec<Expr>) -> Self {
        VectorField {
            name: name.into(),
            components,
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// Component values at a base point.
    pub fn values(&self, x: &[f64], params: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        self.components.iter().map(|c| c.eval(x, params)).collect()
    }

    /// Component jets in a scope centered at the evaluation site. The
    /// components depend on x only, so the jets carry the full validity
    /// of the scope's table.
    pub fn jets(&self, scope: &JetScope, params: &BTreeMap<String, f64>) -> Result<Vec<Jet>> {
        self.components
            .iter()
            .map(|c| c.eval_jet(scope, params))
            .collect()
    }

    /// Lie bracket [self, other] as a new field.
    pub fn bracket(&self, other: &VectorField) -> VectorField {
        VectorField::new(
            format!("[{},{}]", self.name, other.name),
            bracket(&self.components, &other.components),
        )
    }
}

/// The projective algebra of a flat chart: n translations d/dx^k, the
/// n^2 linear fields x^b d/dx^a, and n quadratic fields x^k x^i d/dx^i,
/// n(n + 2) fields in total. Every projective symmetry of a
/// projectively flat metric on the chart is a constant combination of
/// these.
pub fn flat_projective_basis(n: usize) -> Vec<VectorField> {
    let mut out = Vec::with_capacity(n * (n + 2));
    for k in 0..n {
        let comps = (0..n)
            .map(|i| Expr::Num(if i == k { 1.0 } else { 0.0 }))
            .collect();
        out.push(VectorField::new(format!("t{}", k + 1), comps));
    }
    for a in 0..n {
        for b in 0..n {
            let comps = (0..n)
                .map(|i| {
                    if i == a {
                        Expr::coord(b)
                    } else {
                        Expr::Num(0.0)
                    }
                })
                .collect();
            out.push(VectorField::new(format!("l{}{}", a + 1, b + 1), comps));
        }
    }
    for k in 0..n {
        let comps = (0..n)
            .map(|i| Expr::Mul(Box::new(Expr::coord(k)), Box::new(Expr::coord(i))))
            .collect();
        out.push(VectorField::new(format!("s{}", k + 1), comps));
    }
    out
}

/// The rotation generator x^a d/dx^b - x^b d/dx^a (1-based indices).
pub fn rotation_field(n: usize, a: usize, b: usize) -> VectorField {
    let comps = (0..n)
        .map(|i| {
            if i + 1 == b {
                Expr::coord(a - 1)
            } else if i + 1 == a {
                Expr::Neg(Box::new(Expr::coord(b - 1)))
            } else {
                Expr::Num(0.0)
            }
        })
        .collect();
    VectorField::new(format!("rot{a}{b}"), comps)
}

/// The dilation field x^i d/dx^i.
pub fn dilation_field(n: usize) -> VectorField {
    VectorField::new("dilation", (0..n).map(Expr::coord).collect())
}

/// Resolve a named field from the flat-chart families: `t<k>`,
/// `l<a><b>`, `s<k>`, `rot<a><b>`, `dilation`. Indices are single
/// digits, which covers every supported dimension.
pub fn named_field(n: usize, name: &str) -> Option<VectorField> {
    if name == "dilation" {
        return Some(dilation_field(n));
    }
    let index = |s: &str| -> Option<usize> {
        let k: usize = s.parse().ok()?;
        (1..=n).contains(&k).then_some(k)
    };
    if let Some(rest) = name.strip_prefix("rot") {
        if rest.len() == 2 {
            let a = index(&rest[..1])?;
            let b = index(&rest[1..])?;
            if a != b {
                return Some(rotation_field(n, a, b));
            }
        }
        return None;
    }
    if let Some(rest) = name.strip_prefix('t') {
        if rest.len() == 1 {
            let k = index(rest)?;
            return flat_projective_basis(n).into_iter().nth(k - 1);
        }
        return None;
    }
    if let Some(rest) = name.strip_prefix('l') {
        if rest.len() == 2 {
            let a = index(&rest[..1])?;
            let b = index(&rest[1..])?;
            return flat_projective_basis(n).into_iter().nth(n + (a - 1) * n + (b - 1));
        }
        return None;
    }
    if let Some(rest) = name.strip_prefix('s') {
        if rest.len() == 1 {
            let k = index(rest)?;
            return flat_projective_basis(n).into_iter().nth(n + n * n + (k - 1));
        }
        return None;
    }
    None
}

/// Look up a field by name: scene-declared fields win, then the named
/// flat-chart families.
pub fn resolve_field(scene: Option<&SceneSpec>, n: usize, name: &str) -> Result<VectorField> {
    if let Some(sc) = scene {
        if let Some(comps) = sc.vectorfields.get(name) {
            return Ok(VectorField::new(name, comps.clone()));
        }
    }
    named_field(n, name).ok_or_else(|| Error::UnknownField(name.to_string()))
}

/// Lie derivative along the complete lift of V of a fiber-wise vector
/// field T^i(x, y):
///
/// ```text
/// L T^i = V^r dT^i/dx^r + y^b (dV^r/dx^b) dT^i/dy^r - T^r dV^i/dx^r.
/// ```
///
/// Applied to T^i = y^i this vanishes identically, and applied to a
/// spray it gives the Lie derivative up to the second-order lift term
/// handled by [`lie_spray_jets`].
pub fn lie_lifted_vector(scope: &JetScope, v: &[Jet], t: &[Jet]) -> Result<Vec<Jet>> {
    let n = scope.dim();
    let mut y = Vec::with_capacity(n);
    for b in 0..n {
        y.push(scope.coordinate(scope.yslot(b))?);
    }
    // (y^b dV^r/dx^b) per r.
    let mut vdot = Vec::with_capacity(n);
    for r in 0..n {
        let mut acc = scope.constant(0.0);
        for b in 0..n {
            acc = acc.try_add(&y[b].try_mul(&v[r].deriv(scope.xslot(b))?)?)?;
        }
        vdot.push(acc);
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = scope.constant(0.0);
        for r in 0..n {
            acc = acc.try_add(&v[r].try_mul(&t[i].deriv(scope.xslot(r))?)?)?;
            acc = acc.try_add(&vdot[r].try_mul(&t[i].deriv(scope.yslot(r))?)?)?;
            acc = acc.try_sub(&t[r].try_mul(&v[i].deriv(scope.xslot(r))?)?)?;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Lie derivative of the spray along the complete lift of V:
///
/// ```text
/// L G^i = V^r dG^i/dx^r + y^b (dV^r/dx^b) dG^i/dy^r
///         - G^r dV^i/dx^r + (1/2) y^j y^k d^2 V^i / dx^j dx^k.
/// ```
///
/// The first three terms are the lifted-vector derivative; the last is
/// the second-order piece of the lift acting on the spray's role as a
/// connection object rather than a tensor.
pub fn lie_spray_jets(fund: &FundamentalJets, spray: &[Jet], v: &[Jet]) -> Result<Vec<Jet>> {
    let scope = &fund.scope;
    let n = scope.dim();
    let base = lie_lifted_vector(scope, v, spray)?;
    let mut y = Vec::with_capacity(n);
    for b in 0..n {
        y.push(scope.coordinate(scope.yslot(b))?);
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut quad = scope.constant(0.0);
        for j in 0..n {
            let dj = v[i].deriv(scope.xslot(j))?;
            for k in 0..n {
                let d2 = dj.deriv(scope.xslot(k))?;
                quad = quad.try_add(&y[j].try_mul(&y[k])?.try_mul(&d2)?)?;
            }
        }
        out.push(base[i].try_add(&quad.scale(0.5))?);
    }
    Ok(out)
}

/// Per-site projective data for one field.
#[derive(Clone, Copy, Debug)]
pub struct SiteProjective {
    /// Fitted factor P = g(L, y) / F^2.
    pub p: f64,
    /// g-norm of the component of L_{V-hat} G orthogonal to y.
    pub residual: f64,
    /// Largest second y-derivative of the fitted factor.
    pub p_nonlinearity: f64,
    /// Largest component of L_{V-hat} G, used to scale tolerances.
    pub lie_norm: f64,
}

/// Fit the projective factor at one site and measure what is left over.
pub fn projective_at_site(
    metric: &FinslerMetric,
    field: &VectorField,
    site: &TangentSample,
    strategy: Strategy,
) -> Result<SiteProjective> {
    let n = metric.dim();
    if field.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "field {} has {} components, metric {} has dim {n}",
            field.name,
            field.dim(),
            metric.name()
        )));
    }
    let fund = fundamental_jets(metric, site, SYMMETRY_X_CAP, SYMMETRY_Y_CAP, strategy)?;
    let spray = spray_from_fundamental(&fund)?;
    let params = metric
        .scene()
        .map(|s| s.params.clone())
        .unwrap_or_default();
    let v = field.jets(&fund.scope, &params)?;
    let lie = lie_spray_jets(&fund, &spray, &v)?;

    let mut y = Vec::with_capacity(n);
    for j in 0..n {
        y.push(fund.scope.coordinate(fund.scope.yslot(j))?);
    }
    let mut num = fund.scope.constant(0.0);
    for i in 0..n {
        for j in 0..n {
            num = num.try_add(&fund.g[i * n + j].try_mul(&lie[i])?.try_mul(&y[j])?)?;
        }
    }
    let p = num.try_div(&fund.f2)?;

    let pv = p.value();
    let lv: Vec<f64> = lie.iter().map(Jet::value).collect();
    let mut res2 = 0.0;
    for i in 0..n {
        let ri = lv[i] - pv * site.y[i];
        for j in 0..n {
            let rj = lv[j] - pv * site.y[j];
            res2 += fund.g[i * n + j].value() * ri * rj;
        }
    }
    let mut nonlin = 0.0f64;
    for j in 0..n {
        for k in j..n {
            let d2 = p.d(&[fund.scope.yslot(j), fund.scope.yslot(k)])?;
            nonlin = nonlin.max(d2.abs());
        }
    }
    let lie_norm = lv.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    Ok(SiteProjective {
        p: pv,
        residual: res2.max(0.0).sqrt(),
        p_nonlinearity: nonlin,
        lie_norm,
    })
}

/// Sweep-level verdict for one candidate field.
#[derive(Clone, Debug)]
pub struct ProjectiveVerdict {
    pub field: String,
    pub sites: usize,
    /// Largest residual / (1 + |L_{V-hat} G|) over the sweep.
    pub max_scaled_residual: f64,
    /// Largest |P| over the sweep.
    pub max_p: f64,
    /// Largest second y-derivative of P over the sweep. For a
    /// quadratic-norm metric this vanishes whenever the field passes.
    pub p_linearity_residual: f64,
    pub is_projective: bool,
    pub is_affine: bool,
}

/// Run the projective fit over a sweep. A field passes when the scaled
/// orthogonal residual stays below `tol` at every site, and counts as
/// affine when the fitted factor itself stays below `tol` as well.
pub fn projective_verdict(
    metric: &FinslerMetric,
    field: &VectorField,
    sites: &[TangentSample],
    tol: f64,
    strategy: Strategy,
) -> Result<ProjectiveVerdict> {
    if sites.is_empty() {
        return Err(Error::InvalidConfig(
            "projective verdict needs a nonempty sweep".into(),
        ));
    }
    let mut max_scaled = 0.0f64;
    let mut max_p = 0.0f64;
    let mut nonlin = 0.0f64;
    for site in sites {
        let sp = projective_at_site(metric, field, site, strategy)?;
        max_scaled = max_scaled.max(sp.residual / (1.0 + sp.lie_norm));
        max_p = max_p.max(sp.p.abs());
        nonlin = nonlin.max(sp.p_nonlinearity);
    }
    let is_projective = max_scaled < tol;
    Ok(ProjectiveVerdict {
        field: field.name.clone(),
        sites: sites.len(),
        max_scaled_residual: max_scaled,
        max_p,
        p_linearity_residual: nonlin,
        is_projective,
        is_affine: is_projective && max_p < tol,
    })
}

/// The scene with the same quadratic part and the one-form dropped.
pub fn alpha_scene(scene: &SceneSpec) -> SharedScene {
    let mut plain = scene.clone();
    plain.oneform = vec![Expr::Num(0.0); plain.dim];
    plain.name = format!("{}:alpha", plain.name);
    std::sync::Arc::new(plain)
}

/// L_{V-hat} (alpha s^i_0) through the expansion
///
/// ```text
/// (t_00 / (2 alpha)) s^i_0 + alpha (L_V s^i_j) y^j,
/// t_ij = L_V a_ij,
/// L_V s^i_j = V^k d_k s^i_j - s^k_j d_k V^i + s^i_k d_j V^k,
/// ```
///
/// returned as component values at (x, y). For a closed one-form this
/// is identically zero.
pub fn lie_alpha_s(
    scene: &SceneSpec,
    field: &VectorField,
    x: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    let n = scene.dim;
    let frame = AlphaFrame::new(scene, x, 2)?;
    let beta = frame.beta_tensors()?;
    let params = &scene.params;
    let vj = field.jets(&frame.scope, params)?;
    let t = frame.lie_metric(&field.components, params)?;

    let a = frame.a_values();
    let mut alpha2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            alpha2 += a[(i, j)] * y[i] * y[j];
        }
    }
    let alpha = alpha2.sqrt();
    let t00 = BetaFrame::contract2(&t, n, y);

    let mut lie_s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                let xk = frame.scope.xslot(k);
                acc += vj[k].value() * beta.s_up[i * n + j].d(&[xk])?;
                acc -= beta.s_up[k * n + j].value() * vj[i].d(&[xk])?;
                acc += beta.s_up[i * n + k].value() * vj[k].d(&[frame.scope.xslot(j)])?;
            }
            lie_s[i * n + j] = acc;
        }
    }

    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut s0 = 0.0;
        let mut ls0 = 0.0;
        for j in 0..n {
            s0 += beta.s_up[i * n + j].value() * y[j];
            ls0 += lie_s[i * n + j] * y[j];
        }
        out[i] = t00 / (2.0 * alpha) * s0 + alpha * ls0;
    }
    Ok(out)
}

/// Sitewise record for the projective splitting criterion.
#[derive(Clone, Copy, Debug, Default)]
pub struct SplitSite {
    /// Scaled orthogonal residual for the full metric.
    pub full_residual: f64,
    /// Scaled orthogonal residual for the quadratic norm alone.
    pub alpha_residual: f64,
    /// Largest component of L_{V-hat}(alpha s^i_0).
    pub torsion_norm: f64,
}

/// Verdict of the splitting criterion for one field: projective for
/// F = alpha + beta exactly when projective for alpha and the lifted
/// derivative of alpha s^i_0 vanishes.
#[derive(Clone, Debug)]
pub struct SplitReport {
    pub field: String,
    pub sites: usize,
    /// Sweep-level verdicts for the three clauses.
    pub full_projective: bool,
    pub alpha_projective: bool,
    pub torsion_vanishes: bool,
    /// Sites where the full verdict disagrees with the conjunction of
    /// the other two. Any nonzero count is a genuine counterexample.
    pub equivalence_violations: usize,
    /// Worst values of the three residuals over the sweep.
    pub worst: SplitSite,
}

/// Evaluate all three clauses of the splitting criterion sitewise and
/// report any disagreement between the full projective property and
/// the conjunction of the quadratic-norm property with the torsion
/// condition.
pub fn projective_split_check(
    scene: &SharedScene,
    field: &VectorField,
    sites: &[TangentSample],
    tol: f64,
    strategy: Strategy,
) -> Result<SplitReport> {
    if sites.is_empty() {
        return Err(Error::InvalidConfig(
            "splitting criterion needs a nonempty sweep".into(),
        ));
    }
    let full = FinslerMetric::from_scene(scene.clone());
    let plain = FinslerMetric::from_scene(alpha_scene(scene));
    let mut worst = SplitSite::default();
    let mut violations = 0usize;
    let mut all_a = true;
    let mut all_b = true;
    let mut all_c = true;
    for site in sites {
        let fa = projective_at_site(&full, field, site, strategy)?;
        let fb = projective_at_site(&plain, field, site, strategy)?;
        let torsion = lie_alpha_s(scene, field, &site.x, &site.y)?;
        let a_res = fa.residual / (1.0 + fa.lie_norm);
        let b_res = fb.residual / (1.0 + fb.lie_norm);
        let c_norm = torsion.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let a = a_res < tol;
        let b = b_res < tol;
        let c = c_norm < tol;
        if a != (b && c) {
            violations += 1;
        }
        all_a &= a;
        all_b &= b;
        all_c &= c;
        worst.full_residual = worst.full_residual.max(a_res);
        worst.alpha_residual = worst.alpha_residual.max(b_res);
        worst.torsion_norm = worst.torsion_norm.max(c_norm);
    }
    Ok(SplitReport {
        field: field.name.clone(),
        sites: sites.len(),
        full_projective: all_a,
        alpha_projective: all_b,
        torsion_vanishes: all_c,
        equivalence_violations: violations,
        worst,
    })
}

/// Result of fitting L_V a = 2 mu a over a sweep of base points.
#[derive(Clone, Debug)]
pub struct HomothetyReport {
    /// Fitted factor, averaged over the sweep.
    pub mu: f64,
    /// Whether L_V a = 2 mu a holds with a constant factor.
    pub is_homothety: bool,
    /// Whether L_V s_ij = mu s_ij holds across the sweep. For a
    /// homothety of a Randers norm this is forced; a failure here
    /// means mu was fitted from a field that is no homothety at all,
    /// or pinpoints the field's action on the torsion.
    pub torsion_scales: bool,
    /// Largest |t_ij - 2 mu(x) a_ij| over the sweep.
    pub max_conformal_residual: f64,
    /// Largest |mu(x) - mu| over the sweep.
    pub mu_spread: f64,
    /// Largest |L_V s_ij - mu s_ij| over the sweep.
    pub max_torsion_residual: f64,
}

/// Fit the conformal factor of L_V a at each base point of the sweep,
/// test it for constancy, and check whether the torsion two-form scales
/// with the same factor. Scenes whose one-form is closed have no
/// torsion to test, which is reported as [`Error::NotApplicable`].
pub fn homothety_check(
    scene: &SceneSpec,
    field: &VectorField,
    sites: &[TangentSample],
    tol: f64,
) -> Result<HomothetyReport> {
    if sites.is_empty() {
        return Err(Error::InvalidConfig(
            "homothety check needs a nonempty sweep".into(),
        ));
    }
    let n = scene.dim;
    let params = &scene.params;
    let mut mus = Vec::with_capacity(sites.len());
    let mut max_conf = 0.0f64;
    let mut t_norm = 0.0f64;
    let mut s_norm = 0.0f64;
    // (L_V s_ij, s_ij) values per site, compared once mu is known.
    let mut torsion_rows: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(sites.len());
    for site in sites {
        let frame = AlphaFrame::new(scene, &site.x, 2)?;
        let beta = frame.beta_tensors()?;
        let t = frame.lie_metric(&field.components, params)?;
        let vj = field.jets(&frame.scope, params)?;
        let a = frame.a_values();
        let a_inv = a.clone().try_inverse().ok_or(Error::SingularMetric {
            context: "homothety fit",
            cond: f64::INFINITY,
            limit: tol::METRIC_COND_LIMIT,
        })?;
        let mut mu_x = 0.0;
        for i in 0..n {
            for j in 0..n {
                mu_x += a_inv[(i, j)] * t[i * n + j].value();
            }
        }
        mu_x /= 2.0 * n as f64;
        for i in 0..n {
            for j in 0..n {
                let tv = t[i * n + j].value();
                t_norm = t_norm.max(tv.abs());
                max_conf = max_conf.max((tv - 2.0 * mu_x * a[(i, j)]).abs());
            }
        }
        let mut lie_s = vec![0.0; n * n];
        let mut s_val = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                s_val[i * n + j] = beta.s[i * n + j].value();
                s_norm = s_norm.max(s_val[i * n + j].abs());
                let mut acc = 0.0;
                for k in 0..n {
                    let xk = frame.scope.xslot(k);
                    acc += vj[k].value() * beta.s[i * n + j].d(&[xk])?;
                    acc += s_val[k * n + j] * vj[k].d(&[frame.scope.xslot(i)])?;
                    acc += s_val[i * n + k] * vj[k].d(&[frame.scope.xslot(j)])?;
                }
                lie_s[i * n + j] = acc;
            }
        }
        torsion_rows.push((lie_s, s_val));
        mus.push(mu_x);
    }
    if s_norm < 1e-12 {
        return Err(Error::NotApplicable(format!(
            "the one-form of scene {} is closed on this sweep, so the torsion-scaling check is vacuous",
            scene.name
        )));
    }
    let mu = mus.iter().sum::<f64>() / mus.len() as f64;
    let mu_spread = mus
        .iter()
        .fold(0.0f64, |m, v| m.max((v - mu).abs()));
    let mut max_torsion = 0.0f64;
    for (lie_s, s_val) in &torsion_rows {
        for (ls, sv) in lie_s.iter().zip(s_val) {
            max_torsion = max_torsion.max((ls - mu * sv).abs());
        }
    }
    let scale = 1.0 + t_norm;
    Ok(HomothetyReport {
        mu,
        is_homothety: max_conf < tol * scale && mu_spread < tol * scale,
        torsion_scales: max_torsion < tol * (1.0 + s_norm),
        max_conformal_residual: max_conf,
        mu_spread,
        max_torsion_residual: max_torsion,
    })
}

/// Residuals of the classical symmetry equations of the quadratic part
/// alone at one site: the Killing equation, its conformal refinement,
/// and the projective condition on the quadratic spray.
#[derive(Clone, Debug)]
pub struct AlphaSymmetry {
    /// max |L_V a_ij|, zero exactly for isometries.
    pub killing_residual: f64,
    /// mu(x) = a^{ij} (L_V a)_ij / (2n), the fitted conformal factor.
    pub conformal_factor: f64,
    /// max |(L_V a)_ij - 2 mu a_ij| after removing the trace part.
    pub conformal_residual: f64,
    /// Component of the lifted derivative of the quadratic spray that is
    /// orthogonal to the fiber direction, scaled by (1 + its own size).
    pub alpha_projective_residual: f64,
}

/// Sweep aggregate of [`AlphaSymmetry`] with the constancy decision on
/// the conformal factor.
#[derive(Clone, Debug)]
pub struct AlphaSymmetryReport {
    pub field: String,
    pub sites: usize,
    pub max_killing_residual: f64,
    pub max_conformal_residual: f64,
    pub mu_mean: f64,
    pub mu_spread: f64,
    /// True iff the field is conformal with a constant factor.
    pub homothety_flag: bool,
    pub max_alpha_projective_residual: f64,
    pub per_site: Vec<AlphaSymmetry>,
}

/// Evaluate the Killing, conformal and projective residuals of `field`
/// against the quadratic part of `scene` at one site.
pub fn alpha_symmetry_residuals(
    scene: &SceneSpec,
    field: &VectorField,
    site: &TangentSample,
    strategy: Strategy,
) -> Result<AlphaSymmetry> {
    let n = scene.dim;
    let params = &scene.params;
    let frame = AlphaFrame::new(scene, &site.x, 2)?;
    let t = frame.lie_metric(&field.components, params)?;
    let a = frame.a_values();
    let a_inv = a.clone().try_inverse().ok_or(Error::SingularMetric {
        context: "conformal fit",
        cond: f64::INFINITY,
        limit: tol::METRIC_COND_LIMIT,
    })?;
    let mut mu = 0.0;
    for i in 0..n {
        for j in 0..n {
            mu += a_inv[(i, j)] * t[i * n + j].value();
        }
    }
    mu /= 2.0 * n as f64;
    let mut killing = 0.0f64;
    let mut conformal = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let tv = t[i * n + j].value();
            killing = killing.max(tv.abs());
            conformal = conformal.max((tv - 2.0 * mu * a[(i, j)]).abs());
        }
    }
    let alpha_metric = FinslerMetric::from_scene(alpha_scene(scene));
    let sp = projective_at_site(&alpha_metric, field, site, strategy)?;
    Ok(AlphaSymmetry {
        killing_residual: killing,
        conformal_factor: mu,
        conformal_residual: conformal,
        alpha_projective_residual: sp.residual / (1.0 + sp.lie_norm),
    })
}

/// Run [`alpha_symmetry_residuals`] over a sweep and decide the
/// homothety flag: conformal at every site with a factor that does not
/// drift across base points.
pub fn alpha_symmetry_sweep(
    scene: &SceneSpec,
    field: &VectorField,
    sites: &[TangentSample],
    tol: f64,
    strategy: Strategy,
) -> Result<AlphaSymmetryReport> {
    if sites.is_empty() {
        return Err(Error::InvalidConfig(
            "the symmetry residual sweep needs at least one site".into(),
        ));
    }
    let per_site: Vec<AlphaSymmetry> = sites
        .par_iter()
        .map(|site| alpha_symmetry_residuals(scene, field, site, strategy))
        .collect::<Result<_>>()?;
    let mut max_killing = 0.0f64;
    let mut max_conformal = 0.0f64;
    let mut max_projective = 0.0f64;
    let mu_mean = per_site.iter().map(|s| s.conformal_factor).sum::<f64>() / per_site.len() as f64;
    let mut mu_spread = 0.0f64;
    for s in &per_site {
        max_killing = max_killing.max(s.killing_residual);
        max_conformal = max_conformal.max(s.conformal_residual);
        max_projective = max_projective.max(s.alpha_projective_residual);
        mu_spread = mu_spread.max((s.conformal_factor - mu_mean).abs());
    }
    let scale = 1.0 + max_killing;
    Ok(AlphaSymmetryReport {
        field: field.name.clone(),
        sites: per_site.len(),
        max_killing_residual: max_killing,
        max_conformal_residual: max_conformal,
        mu_mean,
        mu_spread,
        homothety_flag: max_conformal < tol * scale && mu_spread < tol * scale,
        max_alpha_projective_residual: max_projective,
        per_site,
    })
}

/// Outcome of screening a candidate family and measuring the dimension
/// of the span of the fields that pass.
#[derive(Clone, Debug)]
pub struct AlgebraRank {
    /// Numerical rank of the passing fields, evaluated componentwise
    /// over the sweep's base points.
    pub rank: usize,
    pub passing: Vec<String>,
    pub verdicts: Vec<ProjectiveVerdict>,
}

/// Screen every candidate with the projective fit, then compute the
/// rank of the matrix whose rows are the passing fields' component
/// values over the sweep. Linearly dependent candidates (a rotation
/// alongside the two linear fields it combines) do not inflate the
/// rank.
pub fn algebra_rank(
    metric: &FinslerMetric,
    candidates: &[VectorField],
    sites: &[TangentSample],
    tol: f64,
    strategy: Strategy,
) -> Result<AlgebraRank> {
    let verdicts: Vec<ProjectiveVerdict> = candidates
        .par_iter()
        .map(|field| projective_verdict(metric, field, sites, tol, strategy))
        .collect::<Result<_>>()?;
    let params = metric
        .scene()
        .map(|s| s.params.clone())
        .unwrap_or_default();
    let passing: Vec<&VectorField> = candidates
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| v.is_projective)
        .map(|(f, _)| f)
        .collect();
    let names = passing.iter().map(|f| f.name.clone()).collect();
    if passing.is_empty() {
        return Ok(AlgebraRank {
            rank: 0,
            passing: names,
            verdicts,
        });
    }
    let n = metric.dim();
    let mut rows = Vec::with_capacity(passing.len());
    for field in &passing {
        let mut row = Vec::with_capacity(sites.len() * n);
        for site in sites {
            row.extend(field.values(&site.x, &params)?);
        }
        rows.push(row);
    }
    let mat = DMatrix::from_fn(rows.len(), sites.len() * n, |r, c| rows[r][c]);
    let svd = mat.svd(false, false);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let rank = if sigma_max == 0.0 {
        0
    } else {
        svd.singular_values
            .iter()
            .filter(|s| **s > tol::RANK_CUT * sigma_max)
            .count()
    };
    Ok(AlgebraRank {
        rank,
        passing: names,
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finsler::metric_sites;
    use crate::jet::JetTable;
    use crate::linalg;
    use crate::randers::resolve_builtin;

    fn builtin(spec: &str) -> FinslerMetric {
        resolve_builtin(spec)
            .expect("builtin spec parses")
            .expect("builtin spec resolves")
    }

    fn sweep(metric: &FinslerMetric, seed: u64, count: usize) -> Vec<TangentSample> {
        metric_sites(metric, seed, count).expect("sweep").sites
    }

    #[test]
    fn lifted_derivative_of_the_fiber_coordinate_vanishes() {
        let n = 3;
        let table = JetTable::grouped(n, 2, 2);
        let center = std::sync::Arc::new(
            TangentSample::new(vec![0.2, -0.1, 0.3], vec![0.5, 0.4, -0.2]).unwrap(),
        );
        let scope = JetScope::new(table, center).unwrap();
        let field = named_field(n, "s1").unwrap();
        let v = field.jets(&scope, &BTreeMap::new()).unwrap();
        let mut y = Vec::new();
        for i in 0..n {
            y.push(scope.coordinate(scope.yslot(i)).unwrap());
        }
        let lie = lie_lifted_vector(&scope, &v, &y).unwrap();
        for comp in &lie {
            assert_eq!(comp.value(), 0.0);
            for k in 0..n {
                assert_eq!(comp.d(&[scope.xslot(k)]).unwrap(), 0.0);
                assert_eq!(comp.d(&[scope.yslot(k)]).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn lie_spray_scales_quadratically_in_the_fiber() {
        let metric = builtin("rot-randers:3:0.2");
        let field = named_field(3, "s2").unwrap();
        let x = [0.3, -0.2, 0.1];
        let y = [0.6, 0.3, -0.4];
        let y2: Vec<f64> = y.iter().map(|c| 2.0 * c).collect();
        let params = metric.scene().unwrap().params.clone();
        let lie_at = |yv: &[f64]| -> Vec<f64> {
            let site = TangentSample::new(x.to_vec(), yv.to_vec()).unwrap();
            let fund = fundamental_jets(
                &metric,
                &site,
                SYMMETRY_X_CAP,
                SYMMETRY_Y_CAP,
                Strategy::DenseTaylor,
            )
            .unwrap();
            let spray = spray_from_fundamental(&fund).unwrap();
            let v = field.jets(&fund.scope, &params).unwrap();
            lie_spray_jets(&fund, &spray, &v)
                .unwrap()
                .iter()
                .map(Jet::value)
                .collect()
        };
        let base = lie_at(&y);
        let doubled = lie_at(&y2);
        for (b, d) in base.iter().zip(&doubled) {
            assert!(
                (4.0 * b - d).abs() <= 1e-9 * (1.0 + d.abs()),
                "expected homogeneity of degree two: 4*{b} vs {d}"
            );
        }
    }

    #[test]
    fn flat_fields_have_their_classical_verdicts() {
        let metric = builtin("euclidean:3");
        let sites = sweep(&metric, 31, 12);
        let affine = ["t1", "dilation", "l23"];
        for name in affine {
            let field = named_field(3, name).unwrap();
            let v = projective_verdict(
                &metric,
                &field,
                &sites,
                tol::PROJECTIVE_ABS,
                Strategy::DenseTaylor,
            )
            .unwrap();
            assert!(v.is_projective && v.is_affine, "{name}: {v:?}");
        }
        let field = named_field(3, "s1").unwrap();
        for site in &sites {
            let sp =
                projective_at_site(&metric, &field, site, Strategy::DenseTaylor).unwrap();
            assert!(sp.residual < 1e-10, "residual {}", sp.residual);
            assert!(
                (sp.p - site.y[0]).abs() < 1e-10,
                "expected the factor y^1, got {} at y = {:?}",
                sp.p,
                site.y
            );
            assert!(sp.p_nonlinearity < 1e-10);
        }
        let v = projective_verdict(
            &metric,
            &field,
            &sites,
            tol::PROJECTIVE_ABS,
            Strategy::DenseTaylor,
        )
        .unwrap();
        assert!(v.is_projective && !v.is_affine);
    }

    #[test]
    fn flat_basis_has_full_rank() {
        let metric = builtin("euclidean:3");
        let sites = sweep(&metric, 77, 15);
        let mut candidates = flat_projective_basis(3);
        candidates.push(rotation_field(3, 1, 2));
        candidates.push(dilation_field(3));
        let out = algebra_rank(
            &metric,
            &candidates,
            &sites,
            tol::PROJECTIVE_ABS,
            Strategy::DenseTaylor,
        )
        .unwrap();
        assert_eq!(out.passing.len(), 17, "passing: {:?}", out.passing);
        assert_eq!(out.rank, 15);
    }

    #[test]
    fn funk_admits_the_full_flat_family() {
        let metric = builtin("funk:3");
        let sites = sweep(&metric, 5, 10);
        let candidates = flat_projective_basis(3);
        let out = algebra_rank(
            &metric,
            &candidates,
            &sites,
            tol::PROJECTIVE_ABS,
            Strategy::DenseTaylor,
        )
        .unwrap();
        assert_eq!(out.passing.len(), 15, "passing: {:?}", out.passing);
        assert_eq!(out.rank, 15);
        // Translations are projective but not special: their factor is
        // genuinely nonlinear in y.
        let worst_translation = out
            .verdicts
            .iter()
            .filter(|v| v.field.starts_with('t'))
            .map(|v| v.p_linearity_residual)
            .fold(0.0f64, f64::max);
        assert!(
            worst_translation > 1e-4,
            "translation factors should be nonlinear, got {worst_translation:.3e}"
        );
    }

    #[test]
    fn rotation_randers_keeps_only_the_drift_symmetries() {
        let metric = builtin("rot-randers:3:0.2");
        let sites = sweep(&metric, 11, 10);
        let mut candidates = flat_projective_basis(3);
        candidates.push(rotation_field(3, 1, 2));
        candidates.push(rotation_field(3, 1, 3));
        candidates.push(rotation_field(3, 2, 3));
        candidates.push(dilation_field(3));
        let out = algebra_rank(
            &metric,
            &candidates,
            &sites,
            tol::PROJECTIVE_ABS,
            Strategy::DenseTaylor,
        )
        .unwrap();
        assert_eq!(
            out.passing,
            vec!["t1", "t2", "t3", "rot12"],
            "verdicts: {:?}",
            out.verdicts
                .iter()
                .map(|v| (v.field.clone(), v.max_scaled_residual))
                .collect::<Vec<_>>()
        );
        assert_eq!(out.rank, 4);
    }

    #[test]
    fn splitting_criterion_agrees_sitewise() {
        let metric = builtin("rot-randers:3:0.2");
        let scene = metric.scene().unwrap().clone();
        let sites = sweep(&metric, 23, 8);
        // (field, full, alpha, torsion)
        let cases = [
            ("t1", true, true, true),
            ("rot12", true, true, true),
            ("dilation", false, true, false),
            ("l12", false, true, false),
            ("s1", false, true, false),
        ];
        for (name, full, alpha, torsion) in cases {
            let field = named_field(3, name).unwrap();
            let report = projective_split_check(
                &scene,
                &field,
                &sites,
                tol::PROJECTIVE_ABS,
                Strategy::DenseTaylor,
            )
            .unwrap();
            assert_eq!(report.equivalence_violations, 0, "{name}: {report:?}");
            assert_eq!(report.full_projective, full, "{name}: {report:?}");
            assert_eq!(report.alpha_projective, alpha, "{name}: {report:?}");
            assert_eq!(report.torsion_vanishes, torsion, "{name}: {report:?}");
        }
    }

    #[test]
    fn splitting_criterion_is_vacuous_for_closed_one_forms() {
        let metric = builtin("funk:3");
        let scene = metric.scene().unwrap().clone();
        let sites = sweep(&metric, 41, 6);
        let field = dilation_field(3);
        for site in &sites {
            let torsion = lie_alpha_s(&scene, &field, &site.x, &site.y).unwrap();
            for c in &torsion {
                assert!(c.abs() < 1e-13, "closed one-form should kill the term: {c}");
            }
        }
        let report = projective_split_check(
            &scene,
            &field,
            &sites,
            tol::PROJECTIVE_ABS,
            Strategy::DenseTaylor,
        )
        .unwrap();
        assert_eq!(report.equivalence_violations, 0);
        assert!(report.full_projective && report.alpha_projective && report.torsion_vanishes);
    }

    #[test]
    fn torsion_term_expansion_matches_the_direct_lift() {
        let metric = builtin("rot-randers:3:0.2");
        let scene = metric.scene().unwrap().clone();
        let n = 3;
        let field = named_field(n, "l12").unwrap();
        let x = vec![0.25, -0.15, 0.2];
        let y = vec![0.5, -0.3, 0.7];
        let expansion = lie_alpha_s(&scene, &field, &x, &y).unwrap();

        // Direct route: build alpha s^i_0 as jets on the tangent bundle
        // and apply the lifted-vector derivative.
        let table = JetTable::grouped(n, 2, 2);
        let center =
            std::sync::Arc::new(TangentSample::new(x.clone(), y.clone()).unwrap());
        let scope = JetScope::new(table, center).unwrap();
        let params = &scene.params;
        let mut a = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                a.push(scene.metric_entry(i, j).eval_jet(&scope, params).unwrap());
            }
        }
        let (a_inv, _) = linalg::invert(&a, n, "torsion cross-check").unwrap();
        let b: Vec<Jet> = (0..n)
            .map(|i| scene.oneform[i].eval_jet(&scope, params).unwrap())
            .collect();
        let yj: Vec<Jet> = (0..n)
            .map(|i| scope.coordinate(scope.yslot(i)).unwrap())
            .collect();
        let mut alpha2 = scope.constant(0.0);
        for i in 0..n {
            for j in 0..n {
                alpha2 = alpha2
                    .try_add(&a[i * n + j].try_mul(&yj[i]).unwrap().try_mul(&yj[j]).unwrap())
                    .unwrap();
            }
        }
        let alpha = alpha2.sqrt().unwrap();
        let mut t = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = scope.constant(0.0);
            for j in 0..n {
                let mut s_up = scope.constant(0.0);
                for h in 0..n {
                    let s_hj = b[h]
                        .deriv(scope.xslot(j))
                        .unwrap()
                        .try_sub(&b[j].deriv(scope.xslot(h)).unwrap())
                        .unwrap()
                        .scale(0.5);
                    s_up = s_up
                        .try_add(&a_inv[i * n + h].try_mul(&s_hj).unwrap())
                        .unwrap();
                }
                acc = acc.try_add(&s_up.try_mul(&yj[j]).unwrap()).unwrap();
            }
            t.push(alpha.try_mul(&acc).unwrap());
        }
        let v = field.jets(&scope, params).unwrap();
        let direct = lie_lifted_vector(&scope, &v, &t).unwrap();
        for (e, d) in expansion.iter().zip(&direct) {
            assert!(
                (e - d.value()).abs() < 1e-10,
                "expansion {e} vs direct {}",
                d.value()
            );
        }
    }

    #[test]
    fn homothety_fit_behaves_on_the_rotation_drift() {
        let metric = builtin("rot-randers:3:0.2");
        let scene = metric.scene().unwrap().clone();
        let sites = sweep(&metric, 53, 8);
        let tol = tol::PROJECTIVE_ABS;

        let dil = homothety_check(&scene, &dilation_field(3), &sites, tol).unwrap();
        assert!((dil.mu - 1.0).abs() < 1e-10, "{dil:?}");
        assert!(dil.is_homothety, "{dil:?}");
        assert!(!dil.torsion_scales, "{dil:?}");
        assert!(dil.max_torsion_residual > 0.1, "{dil:?}");

        let rot = homothety_check(&scene, &rotation_field(3, 1, 2), &sites, tol).unwrap();
        assert!(rot.mu.abs() < 1e-10, "{rot:?}");
        assert!(rot.is_homothety && rot.torsion_scales, "{rot:?}");

        let tr = homothety_check(&scene, &named_field(3, "t1").unwrap(), &sites, tol).unwrap();
        assert!(tr.mu.abs() < 1e-10 && tr.is_homothety && tr.torsion_scales, "{tr:?}");

        let sp = homothety_check(&scene, &named_field(3, "s1").unwrap(), &sites, tol).unwrap();
        assert!(!sp.is_homothety, "{sp:?}");
    }

    #[test]
    fn homothety_fit_rejects_closed_one_forms() {
        let metric = builtin("funk:3");
        let scene = metric.scene().unwrap().clone();
        let sites = sweep(&metric, 67, 5);
        let err = homothety_check(&scene, &dilation_field(3), &sites, tol::PROJECTIVE_ABS)
            .unwrap_err();
        assert!(matches!(err, Error::NotApplicable(_)), "{err}");
    }

    #[test]
    fn fiber_derivative_commutes_with_the_lift() {
        // d/dy^j of L G^i equals the Lie derivative of the connection
        // coefficients G^i_j along the lift:
        // V d_x G^i_j + (y dV) d_y G^i_j - G^k_j d_k V^i + G^i_k d_j V^k
        // + y^k d^2 V^i / dx^j dx^k.
        let metric = builtin("rot-randers:3:0.2");
        let n = 3;
        let field = named_field(n, "s1").unwrap();
        let site = TangentSample::new(vec![0.2, 0.1, -0.3], vec![0.4, -0.5, 0.6]).unwrap();
        let fund = fundamental_jets(
            &metric,
            &site,
            SYMMETRY_X_CAP,
            SYMMETRY_Y_CAP,
            Strategy::DenseTaylor,
        )
        .unwrap();
        let scope = fund.scope.clone();
        let spray = spray_from_fundamental(&fund).unwrap();
        let params = metric.scene().unwrap().params.clone();
        let v = field.jets(&scope, &params).unwrap();
        let lie = lie_spray_jets(&fund, &spray, &v).unwrap();
        for i in 0..n {
            for j in 0..n {
                let lhs = lie[i].d(&[scope.yslot(j)]).unwrap();
                let gj: Vec<Jet> = (0..n)
                    .map(|k| spray[k].deriv(scope.yslot(j)).unwrap())
                    .collect();
                let mut rhs = 0.0;
                for r in 0..n {
                    rhs += v[r].value() * gj[i].d(&[scope.xslot(r)]).unwrap();
                    let mut vdot = 0.0;
                    for b in 0..n {
                        vdot += site.y[b] * v[r].d(&[scope.xslot(b)]).unwrap();
                    }
                    rhs += vdot * gj[i].d(&[scope.yslot(r)]).unwrap();
                    rhs -= gj[r].value() * v[i].d(&[scope.xslot(r)]).unwrap();
                    rhs += spray[i].d(&[scope.yslot(r)]).unwrap()
                        * v[r].d(&[scope.xslot(j)]).unwrap();
                    rhs += site.y[r]
                        * v[i]
                            .d(&[scope.xslot(j), scope.xslot(r)])
                            .unwrap();
                }
                assert!(
                    (lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()),
                    "component ({i},{j}): {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn bracket_of_passing_fields_stays_projective() {
        let metric = builtin("rot-randers:3:0.2");
        let sites = sweep(&metric, 89, 8);
        let rot = rotation_field(3, 1, 2);
        let t1 = named_field(3, "t1").unwrap();
        let br = rot.bracket(&t1);
        // [rot12, t1] = -t2 on the nose.
        let vals = br.values(&[0.3, 0.4, 0.5], &BTreeMap::new()).unwrap();
        assert_eq!(vals, vec![0.0, -1.0, 0.0]);
        let v = projective_verdict(
            &metric,
            &br,
            &sites,
            tol::PROJECTIVE_ABS,
            Strategy::DenseTaylor,
        )
        .unwrap();
        assert!(v.is_projective, "{v:?}");
    }

    #[test]
    fn riemannian_projective_factors_are_linear() {
        let metric = builtin("sphere:3");
        let sites = sweep(&metric, 97, 8);
        let rot = rotation_field(3, 1, 2);
        let v = projective_verdict(
            &metric,
            &rot,
            &sites,
            tol::PROJECTIVE_ABS,
            Strategy::DenseTaylor,
        )
        .unwrap();
        // Rotations about the chart origin are isometries of the round
        // metric, hence affine with a vanishing factor.
        assert!(v.is_projective && v.is_affine, "{v:?}");
        assert!(v.p_linearity_residual < 1e-9, "{v:?}");
    }

    #[test]
    fn named_field_resolves_and_rejects() {
        assert!(named_field(3, "t2").is_some());
        assert!(named_field(3, "l31").is_some());
        assert!(named_field(3, "s3").is_some());
        assert!(named_field(3, "rot23").is_some());
        assert!(named_field(3, "dilation").is_some());
        assert!(named_field(3, "t4").is_none());
        assert!(named_field(3, "rot11").is_none());
        assert!(named_field(3, "q1").is_none());
        assert!(named_field(2, "rot12").is_some());
        let l = named_field(3, "l12").unwrap();
        // l12 is x^2 d/dx^1.
        let vals = l.values(&[0.0, 0.7, 0.0], &BTreeMap::new()).unwrap();
        assert_eq!(vals, vec![0.7, 0.0, 0.0]);
    }

    #[test]
    fn quadratic_residuals_separate_killing_conformal_and_projective() {
        let metric = builtin("euclidean:3");
        let scene = metric.scene().unwrap().clone();
        let sites = sweep(&metric, 9, 6);
        let strategy = Strategy::DenseTaylor;

        let rot = named_field(3, "rot12").unwrap();
        let r = alpha_symmetry_sweep(&scene, &rot, &sites, tol::PROJECTIVE_ABS, strategy).unwrap();
        assert!(r.max_killing_residual < 1e-12, "rotations are isometries");
        assert!(r.homothety_flag && r.mu_mean.abs() < 1e-12);

        let dil = named_field(3, "dilation").unwrap();
        let r = alpha_symmetry_sweep(&scene, &dil, &sites, tol::PROJECTIVE_ABS, strategy).unwrap();
        assert!(r.max_killing_residual > 1.9, "L_V a = 2a for the dilation");
        assert!(r.max_conformal_residual < 1e-12);
        assert!((r.mu_mean - 1.0).abs() < 1e-12 && r.homothety_flag);
        assert!(r.max_alpha_projective_residual < tol::PROJECTIVE_ABS);

        let s1 = named_field(3, "s1").unwrap();
        let r = alpha_symmetry_sweep(&scene, &s1, &sites, tol::PROJECTIVE_ABS, strategy).unwrap();
        assert!(
            r.max_conformal_residual > tol::NONVANISHING_MIN,
            "x1 x^i is not conformal, residual {}",
            r.max_conformal_residual
        );
        assert!(!r.homothety_flag);
        assert!(
            r.max_alpha_projective_residual < tol::PROJECTIVE_ABS,
            "x1 x^i is projective for the flat metric, residual {}",
            r.max_alpha_projective_residual
        );
    }

    #[test]
    fn conformal_factor_of_a_curved_scene_varies_with_position() {
        // On the round-sphere chart the dilation is conformal at the
        // origin only; the sweep must catch the drift of the factor.
        let metric = builtin("sphere:3");
        let scene = metric.scene().unwrap().clone();
        let sites = sweep(&metric, 11, 6);
        let dil = named_field(3, "dilation").unwrap();
        let r = alpha_symmetry_sweep(
            &scene,
            &dil,
            &sites,
            tol::PROJECTIVE_ABS,
            Strategy::DenseTaylor,
        )
        .unwrap();
        assert!(!r.homothety_flag);
        assert!(r.mu_spread > tol::NONVANISHING_MIN);
    }
}
