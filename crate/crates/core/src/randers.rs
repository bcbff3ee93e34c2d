//! Closed-form structures of Randers metrics F = alpha + beta, and the
//! built-in metric catalog.
//!
//! For a Randers norm the geodesic spray and the S-curvature have closed
//! forms in the data of the base metric and the one-form. They are
//! computed here independently of the jet pipeline so the two routes can
//! arbitrate each other. The catalog covers flat, spherical and
//! hyperbolic base metrics, a rotation one-form family, the Funk norm on
//! the unit ball together with its linearly shifted companions, and one
//! projectively flat companion that is not of Randers type at all.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::finsler::{CustomMetric, FinslerMetric};
use crate::jet::{Jet, JetScope, JetTable, Region};
use crate::riemann::{AlphaFrame, BetaFrame};
use crate::sample::Chart;
use crate::scene::{parse_scene_strict, Expr, SceneSpec};

/// Convention for the logarithmic density term rho entering the closed
/// S-curvature formula of a Randers norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RhoConvention {
    /// rho = ln sqrt(1 - ||beta||^2). This matches the exact
    /// Busemann-Hausdorff density of a Randers norm and is the default.
    NormSquared,
    /// rho = ln sqrt(1 - ||beta||), a commonly mistyped variant. Kept so
    /// tests can demonstrate it disagrees with the flow-derivative route
    /// wherever ||beta|| varies.
    NormLinear,
}

/// Closed-form spray and S-curvature of a Randers scene at one site.
#[derive(Clone, Debug)]
pub struct RandersClosedForm {
    pub spray: Vec<f64>,
    pub s: f64,
    /// e_00 = e_ij y^i y^j.
    pub e00: f64,
    /// s_0 = s_i y^i.
    pub s0: f64,
    /// rho_0 = (d rho / dx^k) y^k under the chosen convention.
    pub rho0: f64,
    pub alpha: f64,
    pub f: f64,
}

/// Evaluate the closed Randers formulas
///   G^i = G_alpha^i + (e_00 / (2F) - s_0) y^i + alpha s^i_0,
///   S   = (n+1) { e_00 / (2F) - s_0 - rho_0 }
/// at one site of a scene with a nonzero one-form.
pub fn randers_closed_form(
    scene: &SceneSpec,
    x: &[f64],
    y: &[f64],
    rho: RhoConvention,
) -> Result<RandersClosedForm> {
    let n = scene.dim;
    let frame = AlphaFrame::new(scene, x, 1)?;
    let beta = frame.beta_tensors()?;
    let spray_alpha = frame.spray_values(y)?;
    let a = frame.a_values();
    let mut alpha2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            alpha2 += a[(i, j)] * y[i] * y[j];
        }
    }
    if !(alpha2 > 0.0) {
        return Err(Error::DomainError {
            op: "randers_closed_form",
            detail: format!("quadratic part {alpha2} is not positive"),
        });
    }
    let alpha = alpha2.sqrt();
    let b = scene.oneform_at(x)?;
    let f = alpha + b.iter().zip(y).map(|(bi, yi)| bi * yi).sum::<f64>();
    if !(f > 0.0) {
        return Err(Error::DomainError {
            op: "randers_closed_form",
            detail: format!("norm value {f} is not positive"),
        });
    }
    let e00 = BetaFrame::contract2(&beta.e, n, y);
    let s0 = BetaFrame::contract1(&beta.s_low, y);
    let factor = e00 / (2.0 * f) - s0;
    let mut spray = Vec::with_capacity(n);
    for i in 0..n {
        let mut sup0 = 0.0;
        for j in 0..n {
            sup0 += beta.s_up[i * n + j].value() * y[j];
        }
        spray.push(spray_alpha[i] + factor * y[i] + alpha * sup0);
    }
    // rho as a jet in x so rho_0 comes out exactly (the frame's slots
    // 0..n are the x-coordinates).
    let rho_jet: Jet = match rho {
        RhoConvention::NormSquared => beta
            .beta_norm2
            .neg()
            .add_scalar(1.0)
            .ln()?
            .scale(0.5),
        RhoConvention::NormLinear => beta
            .beta_norm2
            .sqrt()?
            .neg()
            .add_scalar(1.0)
            .ln()?
            .scale(0.5),
    };
    let mut rho0 = 0.0;
    for k in 0..n {
        rho0 += y[k] * rho_jet.d(&[k])?;
    }
    let s = (n as f64 + 1.0) * (e00 / (2.0 * f) - s0 - rho0);
    Ok(RandersClosedForm {
        spray,
        s,
        e00,
        s0,
        rho0,
        alpha,
        f,
    })
}

/// Families the built-in resolver understands, for help texts.
pub const BUILTIN_FAMILIES: &[&str] = &[
    "euclidean:<n>",
    "sphere:<n>",
    "hyperbolic:<n>",
    "rot-randers:<n>:<c>",
    "funk:<n>",
    "funk-a:<n>:<a1,...,an>",
    "example2:<n>:<a1,...,an>",
];

/// Resolve a builtin metric spec such as `funk:3` or
/// `rot-randers:3:0.2`. Returns Ok(None) when the leading family name is
/// not a builtin, so callers can fall back to treating the spec as a
/// file path.
pub fn resolve_builtin(spec: &str) -> Result<Option<FinslerMetric>> {
    let mut parts = spec.split(':');
    let family = parts.next().unwrap_or("");
    let known = [
        "euclidean",
        "sphere",
        "hyperbolic",
        "rot-randers",
        "funk",
        "funk-a",
        "example2",
    ];
    if !known.contains(&family) {
        return Ok(None);
    }
    let dim: usize = parts
        .next()
        .ok_or_else(|| {
            Error::InvalidConfig(format!("builtin spec `{spec}` is missing a dimension"))
        })?
        .parse()
        .map_err(|_| {
            Error::InvalidConfig(format!("builtin spec `{spec}` has a malformed dimension"))
        })?;
    if dim < 2 {
        return Err(Error::InvalidConfig(format!(
            "builtin spec `{spec}`: dimension must be at least 2"
        )));
    }
    let params: Vec<f64> = match parts.next() {
        None => Vec::new(),
        Some(tail) => tail
            .split(',')
            .map(|t| {
                t.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidConfig(format!(
                        "builtin spec `{spec}`: bad numeric parameter `{t}`"
                    ))
                })
            })
            .collect::<Result<_>>()?,
    };
    if parts.next().is_some() {
        return Err(Error::InvalidConfig(format!(
            "builtin spec `{spec}` has too many `:` sections"
        )));
    }
    let metric = match family {
        "euclidean" => {
            expect_params(spec, &params, 0)?;
            scene_metric(spec, &euclidean_text(dim), None)?
        }
        "sphere" => {
            expect_params(spec, &params, 0)?;
            scene_metric(spec, &conformal_text(dim, '+'), None)?
        }
        "hyperbolic" => {
            expect_params(spec, &params, 0)?;
            scene_metric(spec, &conformal_text(dim, '-'), None)?
        }
        "rot-randers" => {
            expect_params(spec, &params, 1)?;
            let c = params[0];
            if !(c.abs() < 1.0) {
                return Err(Error::ParameterDomain(format!(
                    "rot-randers coefficient {c} must satisfy |c| < 1 on the unit ball"
                )));
            }
            scene_metric(spec, &rot_randers_text(dim, c), None)?
        }
        "funk" => {
            expect_params(spec, &params, 0)?;
            scene_metric(spec, &funk_text(dim, None), Some(0.8))?
        }
        "funk-a" => {
            expect_params(spec, &params, dim)?;
            check_shift(spec, &params)?;
            let mut m = scene_metric(spec, &funk_text(dim, Some(&params)), Some(0.8))?;
            m = attach_shift_admission(m, &params)?;
            m
        }
        "example2" => {
            expect_params(spec, &params, dim)?;
            check_shift(spec, &params)?;
            example2_metric(spec, dim, params)
        }
        _ => unreachable!("family list checked above"),
    };
    Ok(Some(metric))
}

fn expect_params(spec: &str, params: &[f64], want: usize) -> Result<()> {
    if params.len() != want {
        return Err(Error::InvalidConfig(format!(
            "builtin spec `{spec}` wants {want} numeric parameter(s), got {}",
            params.len()
        )));
    }
    Ok(())
}

fn check_shift(spec: &str, a: &[f64]) -> Result<()> {
    let norm2: f64 = a.iter().map(|v| v * v).sum();
    if norm2 >= 1.0 {
        return Err(Error::ParameterDomain(format!(
            "builtin spec `{spec}`: shift vector must satisfy |a| < 1, got |a| = {}",
            norm2.sqrt()
        )));
    }
    Ok(())
}

fn scene_metric(spec: &str, text: &str, margin: Option<f64>) -> Result<FinslerMetric> {
    let mut scene = parse_scene_strict(text)?;
    scene.name = spec.to_string();
    if let Some(m) = margin {
        scene.margin = m;
    }
    Ok(FinslerMetric::from_scene(Arc::new(scene)))
}

/// Add the admission constraint 1 + <a, x> >= 1/2 used by the shifted
/// Funk metrics, keeping the shift term well away from its pole.
fn attach_shift_admission(metric: FinslerMetric, a: &[f64]) -> Result<FinslerMetric> {
    let scene = metric
        .scene()
        .expect("shift admission applies to scene metrics")
        .as_ref()
        .clone();
    let mut scene = scene;
    scene.admit_min = Some((shift_expr(a), 0.5));
    Ok(FinslerMetric::from_scene(Arc::new(scene)))
}

fn shift_expr(a: &[f64]) -> Expr {
    let mut lin = Expr::Num(1.0);
    for (i, ai) in a.iter().enumerate() {
        if *ai != 0.0 {
            lin = Expr::Add(
                Box::new(lin),
                Box::new(Expr::Mul(
                    Box::new(Expr::Num(*ai)),
                    Box::new(Expr::coord(i)),
                )),
            );
        }
    }
    lin
}

fn r2_text(n: usize) -> String {
    let terms: Vec<String> = (1..=n).map(|i| format!("x{i}^2")).collect();
    format!("({})", terms.join("+"))
}

fn euclidean_text(n: usize) -> String {
    let mut t = format!("dim {n}; chart box -1 1;\nmetric");
    for i in 1..=n {
        t.push_str(&format!(" a[{i}][{i}]=1"));
    }
    t.push(';');
    t
}

/// Conformally flat constant-curvature chart: a_ij = delta_ij / (1 +- R^2/4)^2.
fn conformal_text(n: usize, sign: char) -> String {
    let r2 = r2_text(n);
    let mut t = format!("dim {n}; chart ball 2;\nmetric");
    for i in 1..=n {
        t.push_str(&format!(" a[{i}][{i}]=1/(1{sign}{r2}/4)^2"));
    }
    t.push(';');
    t
}

fn rot_randers_text(n: usize, c: f64) -> String {
    let mut t = format!("dim {n}; chart ball 1; param c = {c};\nmetric");
    for i in 1..=n {
        t.push_str(&format!(" a[{i}][{i}]=1"));
    }
    t.push_str(";\noneform b[1]=-c*x2 b[2]=c*x1");
    for i in 3..=n {
        t.push_str(&format!(" b[{i}]=0"));
    }
    t.push(';');
    t
}

/// The Funk norm of the unit ball as a Randers scene over the Klein
/// metric: a_ij = ((1-R^2) delta_ij + x_i x_j) / (1-R^2)^2 and
/// b_i = x_i / (1-R^2), optionally shifted by the differential of
/// ln(1 + <a, x>).
fn funk_text(n: usize, shift: Option<&[f64]>) -> String {
    let r2 = r2_text(n);
    let mut t = format!("dim {n}; chart ball 1;\nmetric");
    for i in 1..=n {
        t.push_str(&format!(
            "\n  a[{i}][{i}]=((1-{r2})+x{i}^2)/(1-{r2})^2"
        ));
        for j in (i + 1)..=n {
            t.push_str(&format!(" a[{i}][{j}]=x{i}*x{j}/(1-{r2})^2"));
        }
    }
    t.push_str(";\noneform");
    let lin = shift.map(|a| {
        let mut s = String::from("(1");
        for (i, ai) in a.iter().enumerate() {
            if *ai != 0.0 {
                s.push_str(&format!("+({ai})*x{}", i + 1));
            }
        }
        s.push(')');
        s
    });
    for i in 1..=n {
        t.push_str(&format!(" b[{i}]=x{i}/(1-{r2})"));
        if let (Some(lin), Some(a)) = (&lin, shift) {
            if a[i - 1] != 0.0 {
                t.push_str(&format!("+({})/{lin}", a[i - 1]));
            }
        }
    }
    t.push(';');
    t
}

/// The Funk norm Theta (optionally with the shift one-form added) as a
/// jet at the scope's center.
pub fn theta_jet(scope: &JetScope, shift: Option<&[f64]>) -> Result<Jet> {
    let n = scope.dim();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        xs.push(scope.coordinate(scope.xslot(i))?);
        ys.push(scope.coordinate(scope.yslot(i))?);
    }
    let mut x2 = scope.constant(0.0);
    let mut y2 = scope.constant(0.0);
    let mut xy = scope.constant(0.0);
    for i in 0..n {
        x2 = x2.try_add(&xs[i].try_mul(&xs[i])?)?;
        y2 = y2.try_add(&ys[i].try_mul(&ys[i])?)?;
        xy = xy.try_add(&xs[i].try_mul(&ys[i])?)?;
    }
    // Theta = (sqrt((1-|x|^2)|y|^2 + <x,y>^2) + <x,y>) / (1 - |x|^2).
    let disc = x2
        .neg()
        .add_scalar(1.0)
        .try_mul(&y2)?
        .try_add(&xy.try_mul(&xy)?)?;
    let denom = x2.neg().add_scalar(1.0);
    let mut theta = disc.sqrt()?.try_add(&xy)?.try_div(&denom)?;
    if let Some(a) = shift {
        let mut lin = scope.constant(1.0);
        let mut ay = scope.constant(0.0);
        for i in 0..n {
            if a[i] != 0.0 {
                lin = lin.try_add(&xs[i].scale(a[i]))?;
                ay = ay.try_add(&ys[i].scale(a[i]))?;
            }
        }
        theta = theta.try_add(&ay.try_div(&lin)?)?;
    }
    Ok(theta)
}

fn enlarge_x(region: &Region) -> Region {
    match region {
        Region::Grouped { n, x_cap, y_cap } => Region::Grouped {
            n: *n,
            x_cap: x_cap + 1,
            y_cap: *y_cap,
        },
        Region::Box { caps } => {
            let n = caps.len() / 2;
            let mut caps = caps.clone();
            for c in caps.iter_mut().take(n) {
                *c += 1;
            }
            Region::Box { caps }
        }
    }
}

/// Projectively flat companion metric that is not of Randers type:
/// F = Theta + Theta_{x^k} (x^k + a^k) on the unit ball, equivalently
/// Theta (1 + Theta_{y^k} (x^k + a^k)).
///
/// Its projective factor is Theta itself, which satisfies
/// Theta_{x^k} = Theta Theta_{y^k}, so the flag curvature vanishes
/// identically. At a = 0 this is the classical projectively flat norm
/// with quartic indicatrix on the unit ball.
///
/// The inner x-contraction costs one extra x-order, so the evaluator
/// works in an enlarged scope and copies the finished F^2 jet back down.
fn example2_metric(spec: &str, n: usize, a: Vec<f64>) -> FinslerMetric {
    let a_admit = a.clone();
    let f2 = move |scope: &JetScope| -> Result<Jet> {
        let etable = JetTable::get(enlarge_x(&scope.table.region));
        let escope = JetScope::new(etable, scope.center.clone())?;
        let theta = theta_jet(&escope, None)?;
        let mut f = theta.clone();
        for k in 0..n {
            let shifted = escope.coordinate(escope.xslot(k))?.add_scalar(a[k]);
            f = f.try_add(&theta.deriv(escope.xslot(k))?.try_mul(&shifted)?)?;
        }
        if !(f.value() > 0.0) {
            return Err(Error::DomainError {
                op: "example2",
                detail: format!("norm value {} is not positive", f.value()),
            });
        }
        f.try_mul(&f)?.retable(&scope.table)
    };
    let admit = move |x: &[f64]| -> bool {
        let lin: f64 = 1.0 + x.iter().zip(&a_admit).map(|(xi, ai)| xi * ai).sum::<f64>();
        lin >= 0.5
    };
    FinslerMetric::custom(Arc::new(CustomMetric {
        name: spec.to_string(),
        dim: n,
        chart: Chart::Ball { r: 1.0 },
        margin: 0.8,
        f2: Arc::new(f2),
        ln_sigma: None,
        admit: Some(Arc::new(admit)),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finsler::{evaluate_site, metric_sites, OutputSet};
    use crate::jet::Strategy;
    use crate::sample::TangentSample;
    use crate::scene::validate_scene;
    use crate::tol;

    fn site(x: &[f64], y: &[f64]) -> TangentSample {
        TangentSample::new(x.to_vec(), y.to_vec()).unwrap()
    }

    fn builtin(spec: &str) -> FinslerMetric {
        resolve_builtin(spec).unwrap().expect("builtin spec")
    }

    #[test]
    fn resolver_accepts_builtins_and_rejects_garbage() {
        assert!(resolve_builtin("euclidean:3").unwrap().is_some());
        assert!(resolve_builtin("funk-a:3:0.3,0,0").unwrap().is_some());
        assert!(resolve_builtin("scenes/custom.fsl").unwrap().is_none());
        assert!(resolve_builtin("funk").is_err());
        assert!(resolve_builtin("funk:one").is_err());
        assert!(resolve_builtin("rot-randers:3").is_err());
        assert!(resolve_builtin("rot-randers:3:2.0").is_err());
        assert!(resolve_builtin("funk-a:3:0.3").is_err());
        assert!(resolve_builtin("euclidean:1").is_err());
    }

    #[test]
    fn builtin_scenes_validate() {
        for spec in [
            "euclidean:3",
            "sphere:3",
            "hyperbolic:3",
            "rot-randers:3:0.2",
            "funk:3",
            "funk-a:3:0.3,0,0",
        ] {
            let m = builtin(spec);
            let scene = m.scene().expect("scene-backed");
            let v = validate_scene(scene, 40, 7).unwrap_or_else(|e| {
                panic!("{spec} failed validation: {e}");
            });
            assert!(v.max_beta_norm < 1.0, "{spec}: beta norm {}", v.max_beta_norm);
        }
    }

    #[test]
    fn closed_spray_matches_variational_spray() {
        for spec in ["rot-randers:3:0.2", "funk:3"] {
            let m = builtin(spec);
            let scene = m.scene().unwrap().clone();
            let sweep = metric_sites(&m, 3, 4).unwrap();
            for s in &sweep.sites {
                let t = evaluate_site(
                    &m,
                    s,
                    OutputSet {
                        spray: true,
                        ..OutputSet::default()
                    },
                    Strategy::DenseTaylor,
                )
                .unwrap();
                let closed =
                    randers_closed_form(&scene, &s.x, &s.y, RhoConvention::NormSquared)
                        .unwrap();
                let spray = t.spray.unwrap();
                for i in 0..3 {
                    assert!(
                        (spray[i] - closed.spray[i]).abs() < tol::CROSS_ROUTE_ABS,
                        "{spec}: spray[{i}] {} vs closed {}",
                        spray[i],
                        closed.spray[i]
                    );
                }
            }
        }
    }

    #[test]
    fn closed_s_curvature_matches_flow_route() {
        for spec in ["rot-randers:3:0.2", "funk:3", "funk-a:3:0.3,0,0"] {
            let m = builtin(spec);
            let scene = m.scene().unwrap().clone();
            let sweep = metric_sites(&m, 5, 4).unwrap();
            for s in &sweep.sites {
                let t = evaluate_site(
                    &m,
                    s,
                    OutputSet {
                        s_curv: true,
                        ..OutputSet::default()
                    },
                    Strategy::DenseTaylor,
                )
                .unwrap();
                let closed =
                    randers_closed_form(&scene, &s.x, &s.y, RhoConvention::NormSquared)
                        .unwrap();
                let gap = (t.s.unwrap() - closed.s).abs();
                assert!(
                    gap < 1e-8,
                    "{spec} at {}: flow S {} vs closed S {} (gap {gap:e})",
                    s.describe(),
                    t.s.unwrap(),
                    closed.s
                );
            }
        }
    }

    #[test]
    fn mistyped_rho_convention_disagrees_with_the_flow_route() {
        let m = builtin("funk:3");
        let scene = m.scene().unwrap().clone();
        let sweep = metric_sites(&m, 8, 4).unwrap();
        let mut worst = 0.0f64;
        for s in &sweep.sites {
            let t = evaluate_site(
                &m,
                s,
                OutputSet {
                    s_curv: true,
                    ..OutputSet::default()
                },
                Strategy::DenseTaylor,
            )
            .unwrap();
            let wrong =
                randers_closed_form(&scene, &s.x, &s.y, RhoConvention::NormLinear).unwrap();
            worst = worst.max((t.s.unwrap() - wrong.s).abs());
        }
        assert!(
            worst > tol::NONVANISHING_MIN,
            "the mistyped convention should break somewhere, worst gap {worst:e}"
        );
    }

    #[test]
    fn funk_spray_is_half_theta_times_y() {
        let m = builtin("funk:3");
        let sweep = metric_sites(&m, 4, 4).unwrap();
        for s in &sweep.sites {
            let t = evaluate_site(
                &m,
                s,
                OutputSet {
                    spray: true,
                    ..OutputSet::default()
                },
                Strategy::DenseTaylor,
            )
            .unwrap();
            // For the Funk norm F itself is the projective factor source:
            // G^i = (F/2) y^i, and sites are normalized to F = 1.
            let f = m.norm(&s.x, &s.y).unwrap();
            let spray = t.spray.unwrap();
            for i in 0..3 {
                let want = 0.5 * f * s.y[i];
                assert!(
                    (spray[i] - want).abs() < tol::CROSS_ROUTE_ABS,
                    "spray[{i}] {} vs (F/2) y {}",
                    spray[i],
                    want
                );
            }
        }
    }

    #[test]
    fn funk_has_constant_negative_flag_curvature_and_no_projective_curvature() {
        let m = builtin("funk:3");
        let sweep = metric_sites(&m, 6, 3).unwrap();
        for s in &sweep.sites {
            let t = evaluate_site(
                &m,
                s,
                OutputSet {
                    weyl: true,
                    ..OutputSet::default()
                },
                Strategy::DenseTaylor,
            )
            .unwrap();
            let flag = t.flag.unwrap();
            assert!(
                (flag + 0.25).abs() < tol::CLOSED_FORM_REL,
                "flag {flag} should be -1/4"
            );
            assert!(
                t.weyl.unwrap().iter().all(|v| v.abs() < tol::VANISHING_ABS),
                "W should vanish for constant flag curvature"
            );
            assert!(t
                .star_weyl
                .unwrap()
                .iter()
                .all(|v| v.abs() < tol::VANISHING_ABS));
        }
    }

    #[test]
    fn funk_s_curvature_and_density_have_their_known_values() {
        let m = builtin("funk:3");
        // The Funk indicatrix at x is the unit ball translated by -x, so
        // the density is exactly 1 everywhere.
        let x = [0.3, -0.2, 0.4];
        assert!((m.sigma_closed(&x).unwrap() - 1.0).abs() < 1e-12);
        let sweep = metric_sites(&m, 9, 3).unwrap();
        for s in &sweep.sites {
            let t = evaluate_site(
                &m,
                s,
                OutputSet {
                    s_curv: true,
                    ..OutputSet::default()
                },
                Strategy::DenseTaylor,
            )
            .unwrap();
            // S = (n+1) F / 2 with F = 1 on normalized sites.
            let f = m.norm(&s.x, &s.y).unwrap();
            let want = 2.0 * f;
            assert!(
                (t.s.unwrap() - want).abs() < 1e-8,
                "S {} vs closed {}",
                t.s.unwrap(),
                want
            );
        }
    }

    #[test]
    fn funk_scene_norm_agrees_with_theta_jet() {
        for (spec, shift) in [
            ("funk:3", None),
            ("funk-a:3:0.3,0,0", Some(vec![0.3, 0.0, 0.0])),
        ] {
            let m = builtin(spec);
            let x = [0.25, -0.3, 0.1];
            let y = [0.7, 0.4, -0.5];
            let scope = JetScope::new(
                JetTable::grouped(3, 0, 0),
                Arc::new(site(&x, &y)),
            )
            .unwrap();
            let theta = theta_jet(&scope, shift.as_deref()).unwrap();
            let f = m.norm(&x, &y).unwrap();
            assert!(
                (theta.value() - f).abs() < 1e-12,
                "{spec}: theta {} vs scene norm {f}",
                theta.value()
            );
        }
    }

    #[test]
    fn shifted_funk_keeps_the_h_curvature_of_funk() {
        let funk = builtin("funk:3");
        let shifted = builtin("funk-a:3:0.3,0,0");
        let sweep = metric_sites(&shifted, 12, 3).unwrap();
        let req = OutputSet {
            h_curv: true,
            ..OutputSet::default()
        };
        for s in &sweep.sites {
            let h0 = evaluate_site(&funk, s, req, Strategy::DenseTaylor)
                .unwrap()
                .h
                .unwrap();
            let h1 = evaluate_site(&shifted, s, req, Strategy::DenseTaylor)
                .unwrap()
                .h
                .unwrap();
            let gap = h0
                .iter()
                .zip(&h1)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(gap < 1e-7, "H gap {gap:e} at {}", s.describe());
        }
    }

    #[test]
    fn companion_metric_is_projectively_flat_with_zero_curvature() {
        let m = builtin("example2:3:0.1,0,0");
        let sweep = metric_sites(&m, 14, 3).unwrap();
        let req = OutputSet {
            riemann: true,
            douglas: true,
            ..OutputSet::default()
        };
        for s in &sweep.sites {
            let t = evaluate_site(&m, s, req, Strategy::DenseTaylor).unwrap();
            assert!(
                t.flag.unwrap().abs() < 1e-7,
                "flag {} should vanish",
                t.flag.unwrap()
            );
            assert!(
                t.douglas.unwrap().iter().all(|v| v.abs() < 1e-7),
                "a projectively flat metric has no Douglas curvature"
            );
            assert!(t.residuals.homogeneity < 1e-10);
            // The projective factor is the Funk norm itself: G^i = Theta y^i.
            let scope = JetScope::new(
                JetTable::grouped(3, 0, 0),
                Arc::new(s.clone()),
            )
            .unwrap();
            let theta = theta_jet(&scope, None).unwrap().value();
            let spray = t.spray.unwrap();
            for i in 0..3 {
                assert!(
                    (spray[i] - theta * s.y[i]).abs() < tol::CROSS_ROUTE_ABS,
                    "spray[{i}] {} vs Theta y {}",
                    spray[i],
                    theta * s.y[i]
                );
            }
        }
    }

    #[test]
    fn companion_metric_star_weyl_vanishes() {
        let m = builtin("example2:3:0.1,0,0");
        let s = site(&[0.2, -0.25, 0.3], &[0.8, 0.3, -0.6]);
        let t = evaluate_site(
            &m,
            &s,
            OutputSet {
                weyl: true,
                ..OutputSet::default()
            },
            Strategy::DenseTaylor,
        )
        .unwrap();
        assert!(t
            .star_weyl
            .unwrap()
            .iter()
            .all(|v| v.abs() < tol::VANISHING_ABS));
        assert!(t
            .weyl
            .unwrap()
            .iter()
            .all(|v| v.abs() < tol::VANISHING_ABS));
    }
}
