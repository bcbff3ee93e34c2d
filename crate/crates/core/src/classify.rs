//! Sweep-level structure verdicts: Berwald and weakly-Berwald tests,
//! isotropy and constancy of the S-curvature factor, the Einstein fit of
//! the Ricci scalar, and the two projective curvature verdicts (scalar
//! flag curvature, constant flag curvature).
//!
//! Each verdict reduces per-site tensor values to a single residual
//! statistic with a pass flag. The isotropy checks additionally fit the
//! scalar factor at every base point and probe a second, independently
//! drawn direction at the same point, so "depends only on x" is tested
//! directly instead of being inferred from smallness.

use crate::error::{Error, Result};
use crate::finsler::{evaluate_sweep, FinslerMetric, OutputSet, SiteTensors};
use crate::jet::Strategy;
use crate::sample::{self, Sweep, TangentSample};
use crate::tol;

/// One named residual statistic with its decision.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub name: &'static str,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Verdict {
    fn bounded(name: &'static str, max_residual: f64, tolerance: f64) -> Verdict {
        Verdict {
            name,
            max_residual,
            tolerance,
            pass: max_residual < tolerance,
        }
    }
}

/// Fit of a scalar factor sigma(x) defined by quantity = sigma(x) * scale.
///
/// `sigma` holds the fitted value at each sweep site in site order.
/// `direction_residual` is the largest change of the fit when only the
/// direction moves (paired probe at the same base point); `variance` is
/// the population variance across base points, the constancy signal.
#[derive(Debug, Clone)]
pub struct FactorFit {
    pub sigma: Vec<f64>,
    pub direction_residual: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Residual maxima of identities that hold for every metric. A failure
/// here indicates an engine defect, never a geometric finding, so
/// callers gate on it separately from the structure verdicts.
#[derive(Debug, Clone)]
pub struct IdentityGate {
    /// max |y^j K_jl.m| over the sweep.
    pub max_first_contraction: f64,
    /// max |y^l K_jl.m + 2 H_jm| over the sweep.
    pub max_second_contraction: f64,
    /// max |W^i_jkl - (1/3)(W^i_k.l.j - W^i_l.k.j)| over the sweep.
    pub max_weyl_reconstruction: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Aggregated verdicts over one sweep.
#[derive(Debug, Clone)]
pub struct ClassifyReport {
    pub sites: usize,
    pub rejected: usize,
    pub identity: IdentityGate,
    pub berwald: Verdict,
    pub weakly_berwald: Verdict,
    pub isotropic_s: Verdict,
    pub constant_s: Verdict,
    pub s_factor: FactorFit,
    pub einstein: Verdict,
    pub einstein_factor: FactorFit,
    pub scalar_flag: Verdict,
    pub constant_flag: Verdict,
    /// Sweep variance of the flag scalar, the second constancy signal
    /// behind the constant-flag verdict.
    pub flag_variance: f64,
}

fn collect_sites(results: Vec<Result<SiteTensors>>) -> Result<Vec<SiteTensors>> {
    results.into_iter().collect()
}

fn need_vec<'a>(v: &'a Option<Vec<f64>>, what: &'static str) -> Result<&'a [f64]> {
    v.as_deref().ok_or(Error::DomainError {
        op: "classify",
        detail: format!("{what} missing from an evaluated site"),
    })
}

fn need_val(v: Option<f64>, what: &'static str) -> Result<f64> {
    v.ok_or(Error::DomainError {
        op: "classify",
        detail: format!("{what} missing from an evaluated site"),
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Single-pass mean and population variance in fixed site order.
fn mean_variance(values: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (k as f64 + 1.0);
        m2 += delta * (v - mean);
    }
    if values.is_empty() {
        (0.0, 0.0)
    } else {
        (mean, m2 / values.len() as f64)
    }
}

/// A second direction at each base point, drawn from a stream decoupled
/// from the sweep's own so the pair is never degenerate by construction.
fn companion_sites(
    metric: &FinslerMetric,
    sites: &[TangentSample],
    seed: u64,
) -> Result<Vec<TangentSample>> {
    let mut out = Vec::with_capacity(sites.len());
    for (i, site) in sites.iter().enumerate() {
        let mut rng = sample::site_rng(seed ^ 0x7061_6972, i as u64);
        let mut chosen = None;
        for _ in 0..32 {
            let z = sample::gaussian(&mut rng, site.x.len());
            let norm = metric.norm(&site.x, &z)?;
            if norm.is_finite() && norm > 1e-9 {
                let y: Vec<f64> = z.iter().map(|v| v / norm).collect();
                chosen = Some(TangentSample::new(site.x.clone(), y)?);
                break;
            }
        }
        out.push(chosen.ok_or(Error::SamplingExhausted {
            attempts: 32,
            accepted: i,
            needed: sites.len(),
        })?);
    }
    Ok(out)
}

/// Run the verdict bundle over an admissible sweep.
///
/// The primary evaluation carries the Berwald tensor, the S/E pair and
/// the projective curvature tensors; a cheaper second evaluation at the
/// paired directions carries only what the isotropy fits need.
pub fn classify(
    metric: &FinslerMetric,
    sweep: &Sweep,
    strategy: Strategy,
) -> Result<ClassifyReport> {
    if sweep.sites.is_empty() {
        return Err(Error::InvalidConfig(
            "classification needs a nonempty sweep".into(),
        ));
    }
    let n = metric.dim() as f64;
    let request = OutputSet {
        berwald: true,
        s_curv: true,
        e_curv: true,
        riemann: true,
        weyl: true,
        ricci_identities: true,
        weyl_deep: true,
        ..OutputSet::default()
    };
    let primary = collect_sites(evaluate_sweep(metric, &sweep.sites, request, strategy))?;
    let probe_request = OutputSet {
        s_curv: true,
        riemann: true,
        ..OutputSet::default()
    };
    let companions = companion_sites(metric, &sweep.sites, sweep.seed)?;
    let probes = collect_sites(evaluate_sweep(metric, &companions, probe_request, strategy))?;

    let mut berwald_max = 0.0f64;
    let mut e_max = 0.0f64;
    let mut weyl_max = 0.0f64;
    let mut star_weyl_max = 0.0f64;
    let mut s_sigma = Vec::with_capacity(primary.len());
    let mut s_dir = 0.0f64;
    let mut ric_sigma = Vec::with_capacity(primary.len());
    let mut ric_dir = 0.0f64;
    let mut flags = Vec::with_capacity(primary.len());
    let mut first_contraction = 0.0f64;
    let mut second_contraction = 0.0f64;
    let mut weyl_reconstruction = 0.0f64;

    for (site, probe) in primary.iter().zip(&probes) {
        first_contraction = first_contraction.max(need_val(
            site.residuals.first_contraction,
            "first contraction residual",
        )?);
        second_contraction = second_contraction.max(need_val(
            site.residuals.second_contraction,
            "second contraction residual",
        )?);
        weyl_reconstruction = weyl_reconstruction.max(need_val(
            site.residuals.weyl_reconstruction,
            "projective reconstruction residual",
        )?);
        berwald_max = berwald_max.max(max_abs(need_vec(&site.berwald_tensor, "Berwald tensor")?));
        e_max = e_max.max(max_abs(need_vec(&site.e, "E-curvature")?));
        weyl_max = weyl_max.max(max_abs(need_vec(&site.weyl, "projective tensor")?));
        star_weyl_max =
            star_weyl_max.max(max_abs(need_vec(&site.star_weyl, "companion projective tensor")?));

        let sig = need_val(site.s, "S-curvature")? / ((n + 1.0) * site.f);
        let sig_probe = need_val(probe.s, "S-curvature probe")? / ((n + 1.0) * probe.f);
        s_dir = s_dir.max((sig - sig_probe).abs());
        s_sigma.push(sig);

        let ric_fit = need_val(site.ric, "Ricci scalar")? / (site.f * site.f);
        let ric_probe = need_val(probe.ric, "Ricci probe")? / (probe.f * probe.f);
        ric_dir = ric_dir.max((ric_fit - ric_probe).abs());
        ric_sigma.push(ric_fit);

        flags.push(need_val(site.flag, "flag scalar")?);
    }

    let (s_mean, s_var) = mean_variance(&s_sigma);
    let (ric_mean, ric_var) = mean_variance(&ric_sigma);
    let (_, flag_var) = mean_variance(&flags);

    let isotropic_s = Verdict::bounded("isotropic-s-curvature", s_dir, tol::SHALLOW_ABS);
    let mut constant_s = Verdict::bounded("constant-s-curvature", s_var, tol::CONSTANCY_VAR);
    constant_s.pass &= isotropic_s.pass;
    let mut constant_flag =
        Verdict::bounded("constant-flag-curvature", star_weyl_max, tol::VANISHING_ABS);
    constant_flag.pass &= flag_var < tol::CONSTANCY_VAR;

    let identity_worst = first_contraction
        .max(second_contraction)
        .max(weyl_reconstruction);
    Ok(ClassifyReport {
        sites: primary.len(),
        rejected: sweep.rejected,
        identity: IdentityGate {
            max_first_contraction: first_contraction,
            max_second_contraction: second_contraction,
            max_weyl_reconstruction: weyl_reconstruction,
            tolerance: tol::VANISHING_ABS,
            pass: identity_worst < tol::VANISHING_ABS,
        },
        berwald: Verdict::bounded("berwald", berwald_max, tol::SHALLOW_ABS),
        weakly_berwald: Verdict::bounded("weakly-berwald", e_max, tol::SHALLOW_ABS),
        isotropic_s,
        constant_s,
        s_factor: FactorFit {
            sigma: s_sigma,
            direction_residual: s_dir,
            mean: s_mean,
            variance: s_var,
        },
        einstein: Verdict::bounded("einstein", ric_dir, tol::VANISHING_ABS),
        einstein_factor: FactorFit {
            sigma: ric_sigma,
            direction_residual: ric_dir,
            mean: ric_mean,
            variance: ric_var,
        },
        scalar_flag: Verdict::bounded("scalar-flag-curvature", weyl_max, tol::VANISHING_ABS),
        constant_flag,
        flag_variance: flag_var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finsler::metric_sites;
    use crate::randers::resolve_builtin;

    fn run(name: &str, count: usize) -> ClassifyReport {
        let metric = resolve_builtin(name).unwrap().unwrap();
        let sweep = metric_sites(&metric, 42, count).unwrap();
        let strategy = Strategy::default_for(metric.dim());
        classify(&metric, &sweep, strategy).unwrap()
    }

    #[test]
    fn euclidean_passes_every_structure_verdict() {
        let r = run("euclidean:3", 12);
        assert!(r.identity.pass);
        assert!(r.berwald.pass, "flat spray is quadratic");
        assert!(r.weakly_berwald.pass);
        assert!(r.isotropic_s.pass && r.constant_s.pass);
        assert!(r.einstein.pass && r.scalar_flag.pass && r.constant_flag.pass);
        assert!(r.s_factor.mean.abs() < 1e-10);
        assert!(r.einstein_factor.mean.abs() < 1e-10);
    }

    #[test]
    fn funk_has_constant_factors_but_is_not_berwald() {
        let r = run("funk:3", 16);
        assert!(!r.berwald.pass, "the Funk spray is not quadratic in y");
        assert!(
            r.berwald.max_residual > tol::NONVANISHING_MIN,
            "Berwald tensor should be decisively nonzero, got {}",
            r.berwald.max_residual
        );
        assert!(r.isotropic_s.pass && r.constant_s.pass);
        assert!(
            (r.s_factor.mean - 0.5).abs() < 1e-8,
            "fitted S factor should be 1/2, got {}",
            r.s_factor.mean
        );
        assert!(r.scalar_flag.pass && r.constant_flag.pass);
        assert!(r.einstein.pass);
        assert!(
            (r.einstein_factor.mean + 0.5).abs() < 1e-6,
            "Ricci fit should sit at (n-1) * (-1/4), got {}",
            r.einstein_factor.mean
        );
        assert!(r.flag_variance < tol::CONSTANCY_VAR);
    }

    #[test]
    fn rotation_drift_fails_berwald_and_constant_flag() {
        let r = run("rot-randers:3:0.2", 16);
        assert!(r.identity.pass, "structural identities hold regardless");
        assert!(!r.berwald.pass);
        assert!(!r.constant_flag.pass);
        assert!(
            r.constant_flag.max_residual > tol::NONVANISHING_MIN,
            "companion projective tensor should be decisively nonzero"
        );
    }
}
