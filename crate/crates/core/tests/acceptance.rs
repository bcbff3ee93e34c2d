//! Full-scale acceptance sweep for the tensor engine.
//!
//! Each test exercises one end-to-end guarantee at desk scale (dimension
//! 3, sweeps of 60 to 100 tangent-bundle sites) and prints exactly one
//! summary line; run `cargo test --test acceptance -- --nocapture` to see
//! the whole scoreboard at once. The checks pin the engine against
//! independent oracles (finite differences, Monte Carlo volumes, geodesic
//! integration), against closed-form values of the built-in metrics, and
//! against structural identities that must hold for every metric.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use finsler_core::classify::{classify, ClassifyReport};
use finsler_core::finsler::{
    evaluate_site, evaluate_sweep, fundamental_jets, metric_sites, FinslerMetric, OutputSet,
    SiteTensors,
};
use finsler_core::jet::Strategy;
use finsler_core::lorentz::{
    boost, em_projective_membership, spatial_rotation, subgroup_closure, Spacetime,
};
use finsler_core::oracles::{fd_partial, fd_partial2, flow_derivative_oracle};
use finsler_core::randers::{randers_closed_form, resolve_builtin, RhoConvention};
use finsler_core::sample::{site_rng, TangentSample};
use finsler_core::scene::{parse_scene_strict, Expr};
use finsler_core::symmetry::{algebra_rank, flat_projective_basis, projective_split_check};
use finsler_core::{tol, Result};
use nalgebra::DMatrix;
use rand::Rng;

/// Every built-in family instantiated at dimension 3.
const BUILTINS3: [&str; 7] = [
    "euclidean:3",
    "sphere:3",
    "hyperbolic:3",
    "rot-randers:3:0.2",
    "funk:3",
    "funk-a:3:0.3,0,0",
    "example2:3:0.1,0,0",
];

fn builtin(spec: &str) -> FinslerMetric {
    resolve_builtin(spec)
        .expect("builtin spec parses")
        .expect("spec names a builtin family")
}

fn strategy() -> Strategy {
    Strategy::default_for(3)
}

fn ok_all(results: Vec<Result<SiteTensors>>) -> Vec<SiteTensors> {
    results
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .expect("every site evaluates")
}

/// Print the one-line verdict for a check and fail the test if it did
/// not hold.
fn verdict(name: &str, pass: bool, detail: &str) {
    println!(
        "[acceptance] {name}: {} ({detail})",
        if pass { "pass" } else { "FAIL" }
    );
    assert!(pass, "{name}: {detail}");
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, c| m.max(c.abs()))
}

fn det3(g: &[f64]) -> f64 {
    g[0] * (g[4] * g[8] - g[5] * g[7]) - g[1] * (g[3] * g[8] - g[5] * g[6])
        + g[2] * (g[3] * g[7] - g[4] * g[6])
}

/// Deep evaluation (curvature identities and both projective tensors) of
/// all builtins, shared by the identity checks so the expensive sweep
/// runs once per process.
fn deep_tensors() -> &'static Vec<(String, Vec<SiteTensors>)> {
    static DEEP: OnceLock<Vec<(String, Vec<SiteTensors>)>> = OnceLock::new();
    DEEP.get_or_init(|| {
        BUILTINS3
            .iter()
            .map(|spec| {
                let m = builtin(spec);
                let sweep = metric_sites(&m, 31, 60).expect("sweep");
                let request = OutputSet {
                    ricci_identities: true,
                    weyl_deep: true,
                    ..OutputSet::default()
                };
                let ts = ok_all(evaluate_sweep(&m, &sweep.sites, request, strategy()));
                (spec.to_string(), ts)
            })
            .collect()
    })
}

#[test]
fn acceptance_01_funk_family_has_constant_s_curvature() {
    let mut worst_closed = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for spec in ["funk:3", "funk-a:3:0.3,0,0"] {
        let m = builtin(spec);
        let sweep = metric_sites(&m, 11, 100).unwrap();
        let request = OutputSet {
            s_curv: true,
            ..OutputSet::default()
        };
        let ts = ok_all(evaluate_sweep(&m, &sweep.sites, request, strategy()));
        for t in &ts {
            // S = 2 F at every site, with F = 1 on normalized sweeps.
            worst_closed = worst_closed.max((t.s.unwrap() - 2.0 * t.f).abs());
        }
        // Independent route: S is the derivative of the distortion
        // ln(sqrt(det g) / sigma) along the geodesic flow. Integrate
        // geodesics with RK4 and difference the distortion numerically.
        let spray_at = |x: &[f64], y: &[f64]| -> Result<Vec<f64>> {
            let s = TangentSample::new(x.to_vec(), y.to_vec())?;
            let t = evaluate_site(
                &m,
                &s,
                OutputSet {
                    spray: true,
                    ..OutputSet::default()
                },
                strategy(),
            )?;
            Ok(t.spray.unwrap())
        };
        let distortion = |x: &[f64], y: &[f64]| -> Result<f64> {
            let s = TangentSample::new(x.to_vec(), y.to_vec())?;
            let t = evaluate_site(&m, &s, OutputSet::fundamental(), strategy())?;
            Ok(0.5 * det3(&t.g).ln() - m.sigma_closed(x)?.ln())
        };
        for (site, t) in sweep.sites.iter().zip(&ts).take(6) {
            let flow =
                flow_derivative_oracle(&spray_at, &distortion, &site.x, &site.y, 0.01, 8)
                    .unwrap();
            worst_oracle = worst_oracle.max((flow - t.s.unwrap()).abs());
        }
    }
    let pass = worst_closed < 1e-6 && worst_oracle < tol::GEODESIC_S_ABS;
    verdict(
        "01 funk family keeps S = 2F",
        pass,
        &format!(
            "100 sites per scene, max |S - 2F| {worst_closed:.2e}, geodesic oracle gap {worst_oracle:.2e}"
        ),
    );
}

#[test]
fn acceptance_02_flat_example_has_zero_flag_curvature() {
    let m = builtin("example2:3:0.1,0,0");
    let sweep = metric_sites(&m, 21, 60).unwrap();
    let request = OutputSet {
        riemann: true,
        weyl: true,
        ..OutputSet::default()
    };
    let ts = ok_all(evaluate_sweep(&m, &sweep.sites, request, strategy()));
    let worst_flag = ts
        .iter()
        .fold(0.0f64, |m, t| m.max(t.flag.unwrap().abs()));
    let worst_sw = ts
        .iter()
        .fold(0.0f64, |m, t| m.max(max_abs(t.star_weyl.as_ref().unwrap())));
    let pass = worst_flag < 1e-6 && worst_sw < 1e-6;
    verdict(
        "02 shifted-funk difference metric is flat",
        pass,
        &format!("60 sites, max |flag| {worst_flag:.2e}, max |*W| {worst_sw:.2e}"),
    );
}

#[test]
fn acceptance_03_star_weyl_separates_constant_flag_curvature() {
    let request = OutputSet {
        weyl: true,
        ..OutputSet::default()
    };
    let mut worst_constant = 0.0f64;
    for spec in ["funk:3", "sphere:3"] {
        let m = builtin(spec);
        let sweep = metric_sites(&m, 23, 60).unwrap();
        let ts = ok_all(evaluate_sweep(&m, &sweep.sites, request, strategy()));
        for t in &ts {
            worst_constant = worst_constant.max(max_abs(t.star_weyl.as_ref().unwrap()));
        }
    }
    let m = builtin("rot-randers:3:0.2");
    let sweep = metric_sites(&m, 23, 60).unwrap();
    let ts = ok_all(evaluate_sweep(&m, &sweep.sites, request, strategy()));
    let loud = ts
        .iter()
        .filter(|t| max_abs(t.star_weyl.as_ref().unwrap()) > tol::NONVANISHING_MIN)
        .count();
    let pass = worst_constant < tol::VANISHING_ABS && loud * 10 >= ts.len() * 9;
    verdict(
        "03 *W vanishes exactly on constant-flag metrics",
        pass,
        &format!(
            "funk/sphere max |*W| {worst_constant:.2e}; drift scene loud at {loud}/{} sites",
            ts.len()
        ),
    );
}

#[test]
fn acceptance_04_curvature_contractions_hold_on_every_builtin() {
    let mut worst = 0.0f64;
    let mut sites = 0usize;
    for (spec, ts) in deep_tensors() {
        for t in ts {
            let first = t.residuals.first_contraction.unwrap();
            let second = t.residuals.second_contraction.unwrap();
            let site_worst = first.max(second);
            if site_worst > worst {
                worst = site_worst;
            }
            assert!(
                site_worst < tol::VANISHING_ABS,
                "{spec}: contraction residual {site_worst:e} at an accepted site"
            );
            sites += 1;
        }
    }
    verdict(
        "04 Ricci contraction identities",
        worst < tol::VANISHING_ABS,
        &format!("{sites} sites over {} builtins, max residual {worst:.2e}", BUILTINS3.len()),
    );
}

#[test]
fn acceptance_05_weyl_tensor_rebuilds_from_its_contraction() {
    let mut worst = 0.0f64;
    let mut sites = 0usize;
    for (spec, ts) in deep_tensors() {
        for t in ts {
            let recon = t.residuals.weyl_reconstruction.unwrap();
            if recon > worst {
                worst = recon;
            }
            assert!(
                recon < tol::VANISHING_ABS,
                "{spec}: reconstruction residual {recon:e} at an accepted site"
            );
            sites += 1;
        }
    }
    verdict(
        "05 W reconstruction from W^i_k",
        worst < tol::VANISHING_ABS,
        &format!("{sites} sites over {} builtins, max residual {worst:.2e}", BUILTINS3.len()),
    );
}

#[test]
fn acceptance_06_projective_criterion_splits_into_quadratic_and_drift_parts() {
    let basis = flat_projective_basis(3);
    let mut violations = 0usize;
    let mut checked = 0usize;
    for spec in ["rot-randers:3:0.2", "funk:3"] {
        let m = builtin(spec);
        let scene = m.scene().unwrap().clone();
        let sweep = metric_sites(&m, 41, 60).unwrap();
        for field in &basis {
            let rep = projective_split_check(
                &scene,
                field,
                &sweep.sites,
                tol::PROJECTIVE_ABS,
                strategy(),
            )
            .unwrap();
            violations += rep.equivalence_violations;
            checked += rep.sites;
        }
    }
    verdict(
        "06 full projective = quadratic projective + drift condition",
        violations == 0,
        &format!(
            "{} fields over 2 scenes, {checked} site checks, {violations} equivalence violations",
            basis.len()
        ),
    );
}

#[test]
fn acceptance_07_projective_algebra_rank_drops_under_the_drift_term() {
    let basis = flat_projective_basis(3);
    let flat = builtin("euclidean:3");
    let sweep = metric_sites(&flat, 43, 60).unwrap();
    let full = algebra_rank(&flat, &basis, &sweep.sites, tol::PROJECTIVE_ABS, strategy()).unwrap();
    let drift = builtin("rot-randers:3:0.2");
    let sweep = metric_sites(&drift, 43, 60).unwrap();
    let cut = algebra_rank(&drift, &basis, &sweep.sites, tol::PROJECTIVE_ABS, strategy()).unwrap();
    let pass = full.rank == 15 && cut.rank <= 6;
    verdict(
        "07 projective algebra ranks",
        pass,
        &format!(
            "flat rank {} (want 15), drift scene rank {} via {:?} (want <= 6)",
            full.rank, cut.rank, cut.passing
        ),
    );
}

#[test]
fn acceptance_08_randers_closed_forms_match_the_variational_routes() {
    let randers_scenes = [
        "euclidean:3",
        "sphere:3",
        "hyperbolic:3",
        "rot-randers:3:0.2",
        "funk:3",
        "funk-a:3:0.3,0,0",
    ];
    let request = OutputSet {
        spray: true,
        s_curv: true,
        ..OutputSet::default()
    };
    let mut worst_spray = 0.0f64;
    let mut worst_s = 0.0f64;
    for spec in randers_scenes {
        let m = builtin(spec);
        let scene = m.scene().unwrap().clone();
        let sweep = metric_sites(&m, 47, 60).unwrap();
        let ts = ok_all(evaluate_sweep(&m, &sweep.sites, request, strategy()));
        for (site, t) in sweep.sites.iter().zip(&ts) {
            let closed =
                randers_closed_form(&scene, &site.x, &site.y, RhoConvention::NormSquared)
                    .unwrap();
            let spray = t.spray.as_ref().unwrap();
            for i in 0..3 {
                worst_spray = worst_spray.max((spray[i] - closed.spray[i]).abs());
            }
            worst_s = worst_s.max((t.s.unwrap() - closed.s).abs());
        }
    }
    // The same closed form with the mistyped density convention has to
    // disagree with the flow route somewhere, otherwise the convention
    // check tests nothing.
    let m = builtin("funk:3");
    let scene = m.scene().unwrap().clone();
    let sweep = metric_sites(&m, 47, 60).unwrap();
    let ts = ok_all(evaluate_sweep(
        &m,
        &sweep.sites,
        OutputSet {
            s_curv: true,
            ..OutputSet::default()
        },
        strategy(),
    ));
    let mut wrong_gap = 0.0f64;
    for (site, t) in sweep.sites.iter().zip(&ts) {
        let wrong =
            randers_closed_form(&scene, &site.x, &site.y, RhoConvention::NormLinear).unwrap();
        wrong_gap = wrong_gap.max((t.s.unwrap() - wrong.s).abs());
    }
    let pass = worst_spray < tol::CROSS_ROUTE_ABS
        && worst_s < tol::VANISHING_ABS
        && wrong_gap > tol::NONVANISHING_MIN;
    verdict(
        "08 closed-form spray and S-curvature",
        pass,
        &format!(
            "6 scenes x 60 sites: spray gap {worst_spray:.2e}, S gap {worst_s:.2e}, mistyped density off by {wrong_gap:.2e}"
        ),
    );
}

#[test]
fn acceptance_09_shift_preserves_the_h_curvature() {
    let funk = builtin("funk:3");
    let shifted = builtin("funk-a:3:0.3,0,0");
    let sweep = metric_sites(&shifted, 51, 60).unwrap();
    let request = OutputSet {
        h_curv: true,
        ..OutputSet::default()
    };
    let mut worst = 0.0f64;
    let mut shared = 0usize;
    for site in &sweep.sites {
        if !funk.admits(&site.x) {
            continue;
        }
        let a = evaluate_site(&funk, site, request, strategy()).unwrap();
        let b = evaluate_site(&shifted, site, request, strategy()).unwrap();
        let ha = a.h.unwrap();
        let hb = b.h.unwrap();
        for (u, v) in ha.iter().zip(&hb) {
            worst = worst.max((u - v).abs());
        }
        shared += 1;
    }
    let pass = shared == 60 && worst < tol::VANISHING_ABS;
    verdict(
        "09 H-curvature shared by funk and its shift",
        pass,
        &format!("{shared} shared sites, max |H gap| {worst:.2e}"),
    );
}

#[test]
fn acceptance_10_volume_density_matches_monte_carlo() {
    // Third scene: constant one-form of norm exactly 0.5 on a flat
    // background, the hardest case for the closed-form density.
    let half = parse_scene_strict(
        "dim 3; chart box -1 1;\n\
         metric a[1][1] = 1 a[2][2] = 1 a[3][3] = 1;\n\
         oneform b[1] = 0.5;\n",
    )
    .unwrap();
    let scenes = [
        builtin("rot-randers:3:0.2"),
        builtin("funk:3"),
        FinslerMetric::from_scene(std::sync::Arc::new(half)),
    ];
    let mut worst = 0.0f64;
    let mut probes = 0usize;
    for m in &scenes {
        let sweep = metric_sites(m, 53, 3).unwrap();
        for site in &sweep.sites {
            let closed = m.sigma_closed(&site.x).unwrap();
            let mc = m.sigma_monte_carlo(&site.x, 200_000, 42).unwrap();
            let rel = (closed - mc.volume).abs() / closed;
            worst = worst.max(rel);
            probes += 1;
        }
    }
    verdict(
        "10 density sigma vs Monte Carlo",
        worst < tol::MC_VOLUME_REL,
        &format!("{probes} base points over 3 scenes (one with |b| = 0.5), worst rel {worst:.2e}"),
    );
}

#[test]
fn acceptance_11_field_preserving_transformations_form_a_subgroup() {
    // Uniform magnetic field along the third spatial axis: A = (0, 0, B x, 0).
    let b = 0.8;
    let st = Spacetime::new(
        vec![
            Expr::Num(0.0),
            Expr::Num(0.0),
            Expr::Mul(Box::new(Expr::Num(b)), Box::new(Expr::coord(1))),
            Expr::Num(0.0),
        ],
        BTreeMap::new(),
    )
    .unwrap();
    let probes = vec![
        vec![0.0, 0.0, 0.0, 0.0],
        vec![1.0, -0.5, 0.3, 2.0],
        vec![-2.0, 1.5, -0.7, 0.4],
        vec![0.3, 0.9, -1.1, -0.6],
    ];
    let f = st.uniform_two_form(&probes).unwrap();
    let tol = tol::MATRIX_GROUP_ABS;
    let mut rotations_pass = true;
    for theta in [0.0, 0.4, 1.3, -2.2, std::f64::consts::PI] {
        rotations_pass &=
            em_projective_membership(&spatial_rotation(1, 2, theta), &f, tol).unwrap();
    }
    let mut boosts_fail = true;
    for w in [0.3, 0.9, -1.4] {
        boosts_fail &= !em_projective_membership(&boost(1, w), &f, tol).unwrap();
    }
    let candidates = vec![
        DMatrix::identity(4, 4),
        spatial_rotation(1, 2, 0.4),
        spatial_rotation(1, 2, 1.9),
        spatial_rotation(1, 2, -0.8),
        boost(1, 0.5),
        boost(2, 1.1),
        spatial_rotation(1, 3, 0.7),
    ];
    let closure = subgroup_closure(&candidates, &f, tol).unwrap();
    let pass = rotations_pass
        && boosts_fail
        && closure.passing == vec![0, 1, 2, 3]
        && closure.closed;
    verdict(
        "11 symmetries of a uniform magnetic field",
        pass,
        &format!(
            "axis rotations pass {rotations_pass}, boosts rejected {boosts_fail}, closure {} with residuals {:.1e}/{:.1e}",
            closure.closed, closure.worst_product_residual, closure.worst_inverse_residual
        ),
    );
}

fn verdict_bits(r: &ClassifyReport) -> Vec<(&'static str, bool)> {
    vec![
        ("identity", r.identity.pass),
        (r.berwald.name, r.berwald.pass),
        (r.weakly_berwald.name, r.weakly_berwald.pass),
        (r.isotropic_s.name, r.isotropic_s.pass),
        (r.constant_s.name, r.constant_s.pass),
        (r.einstein.name, r.einstein.pass),
        (r.scalar_flag.name, r.scalar_flag.pass),
        (r.constant_flag.name, r.constant_flag.pass),
    ]
}

#[test]
fn acceptance_12_jets_match_finite_differences_and_strategies_agree() {
    // Part one: randomly sampled first and second partials of F^2
    // against central finite differences, all builtins.
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for (si, spec) in BUILTINS3.iter().enumerate() {
        let m = builtin(spec);
        let sweep = metric_sites(&m, 61 + si as u64, 8).unwrap();
        let func = |px: &[f64], py: &[f64]| -> Result<f64> {
            let f = m.norm(px, py)?;
            Ok(f * f)
        };
        for (k, site) in sweep.sites.iter().enumerate() {
            let fj = fundamental_jets(&m, site, 2, 3, strategy()).unwrap();
            let jet_slot = |s: usize| {
                if s < 3 {
                    fj.scope.xslot(s)
                } else {
                    fj.scope.yslot(s - 3)
                }
            };
            let mut rng = site_rng(97, (si * 100 + k) as u64);
            for _ in 0..5 {
                let s = rng.gen_range(0..6);
                let jet = fj.f2.d(&[jet_slot(s)]).unwrap();
                let fd = fd_partial(&func, &site.x, &site.y, s, 1e-3).unwrap();
                worst = worst.max((fd - jet).abs() / jet.abs().max(1.0));
                checked += 1;
            }
            for _ in 0..4 {
                let a = rng.gen_range(0..6);
                let b = rng.gen_range(0..6);
                let jet = fj.f2.d(&[jet_slot(a), jet_slot(b)]).unwrap();
                let fd = fd_partial2(&func, &site.x, &site.y, a, b, 1e-3).unwrap();
                worst = worst.max((fd - jet).abs() / jet.abs().max(1.0));
                checked += 1;
            }
        }
    }
    // Part two: the dense and the nested-directional jet strategies must
    // reach identical verdicts on scenes with mixed outcomes.
    let mut strategies_agree = true;
    for spec in ["funk:3", "rot-randers:3:0.2"] {
        let m = builtin(spec);
        let sweep = metric_sites(&m, 67, 10).unwrap();
        let dense = classify(&m, &sweep, Strategy::DenseTaylor).unwrap();
        let nested = classify(&m, &sweep, Strategy::DirectionalNested).unwrap();
        strategies_agree &= verdict_bits(&dense) == verdict_bits(&nested);
    }
    let pass = checked >= 500 && worst < tol::FD_REL && strategies_agree;
    verdict(
        "12 jet derivatives vs finite differences",
        pass,
        &format!(
            "{checked} partials checked, worst rel gap {worst:.2e}, strategies agree {strategies_agree}"
        ),
    );
}
