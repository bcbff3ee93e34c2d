//! Flat-spacetime checks: the electromagnetic two-form of a potential,
//! Lorentz-group membership, the subgroup preserving a uniform field,
//! and the Lorentz nonlinear connection of an (alpha, beta)-metric.
//!
//! The spacetime part is plain matrix and form algebra over Cartesian
//! coordinates (t, x, y, z) with the inner product diag(-1, 1, 1, 1).
//! The connection part runs on positive-definite scenes only; feeding
//! it an indefinite quadratic form is reported as an unsupported
//! signature rather than silently producing complex norms.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::jet::{Jet, JetScope, JetTable};
use crate::riemann::AlphaFrame;
use crate::sample::TangentSample;
use crate::scene::{Expr, SceneSpec};

pub const SPACETIME_DIM: usize = 4;

/// diag(-1, 1, 1, 1), the flat spacetime inner product in Cartesian
/// coordinates (t, x, y, z).
pub fn minkowski_eta() -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 1.0, 1.0, 1.0]))
}

fn expect_4x4(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != SPACETIME_DIM || m.ncols() != SPACETIME_DIM {
        return Err(Error::MalformedMatrix(format!(
            "{what} must be 4x4, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// A covariant potential on flat spacetime with expression components
/// A_mu(t, x, y, z).
#[derive(Clone, Debug)]
pub struct Spacetime {
    pub potential: Vec<Expr>,
    pub params: BTreeMap<String, f64>,
}

impl Spacetime {
    pub fn new(potential: Vec<Expr>, params: BTreeMap<String, f64>) -> Result<Self> {
        if potential.len() != SPACETIME_DIM {
            return Err(Error::DimensionMismatch(format!(
                "spacetime potential needs {SPACETIME_DIM} components, got {}",
                potential.len()
            )));
        }
        Ok(Spacetime { potential, params })
    }

    fn potential_jets(&self, x: &[f64], x_cap: u8) -> Result<(JetScope, Vec<Jet>)> {
        if x.len() != SPACETIME_DIM {
            return Err(Error::DimensionMismatch(format!(
                "spacetime point needs {SPACETIME_DIM} coordinates, got {}",
                x.len()
            )));
        }
        let table = JetTable::grouped(SPACETIME_DIM, x_cap, 0);
        let center = Arc::new(TangentSample::new(x.to_vec(), vec![1.0, 0.0, 0.0, 0.0])?);
        let scope = JetScope::new(table, center)?;
        let jets = self
            .potential
            .iter()
            .map(|a| a.eval_jet(&scope, &self.params))
            .collect::<Result<Vec<_>>>()?;
        Ok((scope, jets))
    }

    /// Field strength F_{mu nu} = d_mu A_nu - d_nu A_mu at a point,
    /// antisymmetric by construction.
    pub fn two_form(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (scope, a) = self.potential_jets(x, 1)?;
        let mut f = DMatrix::zeros(SPACETIME_DIM, SPACETIME_DIM);
        for mu in 0..SPACETIME_DIM {
            for nu in mu + 1..SPACETIME_DIM {
                let v = a[nu].d(&[scope.xslot(mu)])? - a[mu].d(&[scope.xslot(nu)])?;
                f[(mu, nu)] = v;
                f[(nu, mu)] = -v;
            }
        }
        Ok(f)
    }

    /// Largest cyclic sum |d_lam F_{mu nu} + d_mu F_{nu lam} +
    /// d_nu F_{lam mu}| at a point. Exact two-forms make this vanish
    /// identically; the jets reproduce that to machine precision.
    pub fn bianchi_residual(&self, x: &[f64]) -> Result<f64> {
        let (scope, a) = self.potential_jets(x, 2)?;
        // d_lam F_{mu nu} from the second partials of the potential.
        let df = |lam: usize, mu: usize, nu: usize| -> Result<f64> {
            Ok(a[nu].d(&[scope.xslot(lam), scope.xslot(mu)])?
                - a[mu].d(&[scope.xslot(lam), scope.xslot(nu)])?)
        };
        let mut worst = 0.0f64;
        for lam in 0..SPACETIME_DIM {
            for mu in lam + 1..SPACETIME_DIM {
                for nu in mu + 1..SPACETIME_DIM {
                    let cyc = df(lam, mu, nu)? + df(mu, nu, lam)? + df(nu, lam, mu)?;
                    worst = worst.max(cyc.abs());
                }
            }
        }
        Ok(worst)
    }

    /// The field strength under the assumption that it is uniform,
    /// verified over the given probe points. The global membership test
    /// only makes sense for a constant two-form.
    pub fn uniform_two_form(&self, probes: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let mut iter = probes.iter();
        let first = iter.next().ok_or_else(|| {
            Error::InvalidConfig("uniform field check needs at least one probe point".into())
        })?;
        let f = self.two_form(first)?;
        for p in iter {
            let g = self.two_form(p)?;
            let dev = (&g - &f).abs().max();
            if dev > 1e-10 {
                return Err(Error::InvalidConfig(format!(
                    "field strength is not uniform: deviation {dev:.3e} between probe points"
                )));
            }
        }
        Ok(f)
    }
}

/// max |Lambda^T eta Lambda - eta|.
pub fn lorentz_residual(lambda: &DMatrix<f64>) -> Result<f64> {
    expect_4x4(lambda, "transformation")?;
    let eta = minkowski_eta();
    Ok((lambda.transpose() * &eta * lambda - eta).abs().max())
}

/// True iff Lambda preserves the spacetime inner product to `tol`.
pub fn lorentz_membership(lambda: &DMatrix<f64>, tol: f64) -> Result<bool> {
    Ok(lorentz_residual(lambda)? < tol)
}

/// max |Lambda^T F Lambda - F| for a constant field strength.
pub fn em_invariance_residual(lambda: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<f64> {
    expect_4x4(lambda, "transformation")?;
    expect_4x4(f, "field strength")?;
    Ok((lambda.transpose() * f * lambda - f).abs().max())
}

/// True iff Lambda is a Lorentz transformation that also preserves the
/// constant field strength, i.e. a projective symmetry of the
/// spacetime Randers metric built from the potential.
pub fn em_projective_membership(
    lambda: &DMatrix<f64>,
    f: &DMatrix<f64>,
    tol: f64,
) -> Result<bool> {
    Ok(lorentz_membership(lambda, tol)? && em_invariance_residual(lambda, f)? < tol)
}

/// Closure data for the set of candidates passing the field-preserving
/// membership test.
#[derive(Clone, Debug)]
pub struct SubgroupCheck {
    /// Indices into the candidate list that pass individually.
    pub passing: Vec<usize>,
    /// Whether every product and inverse of passing members passes.
    pub closed: bool,
    pub worst_product_residual: f64,
    pub worst_inverse_residual: f64,
}

/// Test the passing subset of `lambdas` for closure under products and
/// inverses, the defining property of a subgroup.
pub fn subgroup_closure(
    lambdas: &[DMatrix<f64>],
    f: &DMatrix<f64>,
    tol: f64,
) -> Result<SubgroupCheck> {
    let mut passing = Vec::new();
    for (k, lam) in lambdas.iter().enumerate() {
        if em_projective_membership(lam, f, tol)? {
            passing.push(k);
        }
    }
    let residual = |m: &DMatrix<f64>| -> Result<f64> {
        Ok(lorentz_residual(m)?.max(em_invariance_residual(m, f)?))
    };
    let mut worst_product = 0.0f64;
    let mut worst_inverse = 0.0f64;
    for &i in &passing {
        let inv = lambdas[i].clone().try_inverse().ok_or_else(|| {
            Error::MalformedMatrix(format!("candidate {i} is not invertible"))
        })?;
        worst_inverse = worst_inverse.max(residual(&inv)?);
        for &j in &passing {
            worst_product = worst_product.max(residual(&(&lambdas[i] * &lambdas[j]))?);
        }
    }
    Ok(SubgroupCheck {
        passing,
        closed: worst_product < tol && worst_inverse < tol,
        worst_product_residual: worst_product,
        worst_inverse_residual: worst_inverse,
    })
}

/// Pure boost along spatial axis `axis` (1, 2, or 3) with the given
/// rapidity.
pub fn boost(axis: usize, rapidity: f64) -> DMatrix<f64> {
    assert!((1..=3).contains(&axis), "boost axis must be 1, 2, or 3");
    let mut m = DMatrix::identity(SPACETIME_DIM, SPACETIME_DIM);
    let (c, s) = (rapidity.cosh(), rapidity.sinh());
    m[(0, 0)] = c;
    m[(0, axis)] = s;
    m[(axis, 0)] = s;
    m[(axis, axis)] = c;
    m
}

/// Spatial rotation by `angle` in the plane of axes `a`, `b` (1..=3).
pub fn spatial_rotation(a: usize, b: usize, angle: f64) -> DMatrix<f64> {
    assert!(
        (1..=3).contains(&a) && (1..=3).contains(&b) && a != b,
        "rotation plane needs two distinct spatial axes"
    );
    let mut m = DMatrix::identity(SPACETIME_DIM, SPACETIME_DIM);
    let (c, s) = (angle.cos(), angle.sin());
    m[(a, a)] = c;
    m[(b, b)] = c;
    m[(a, b)] = -s;
    m[(b, a)] = s;
    m
}

/// A two-variable norm template F(alpha, beta) whose first partials
/// feed the drift coefficient sigma = alpha F_beta^2 / F_alpha^2.
pub trait AlphaBetaTemplate: Sync {
    fn name(&self) -> &'static str;
    /// (F, dF/dalpha, dF/dbeta) at a point with alpha > 0.
    fn eval(&self, alpha: f64, beta: f64) -> (f64, f64, f64);
}

/// F = alpha + beta.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandersTemplate;

impl AlphaBetaTemplate for RandersTemplate {
    fn name(&self) -> &'static str {
        "randers"
    }

    fn eval(&self, alpha: f64, beta: f64) -> (f64, f64, f64) {
        (alpha + beta, 1.0, 1.0)
    }
}

/// The Lorentz nonlinear connection and its semispray at one site.
///
/// The torsion entering both objects is the un-halved antisymmetrized
/// derivative of the one-form; the frames in this crate halve it, so
/// the drift terms below carry a factor two relative to the stored
/// tensors.
#[derive(Clone, Debug)]
pub struct LorentzConnection {
    /// Nonlinear connection values Gamma^i_jk y^k + 2 sigma s^i_j,
    /// row-major.
    pub nonlinear: Vec<f64>,
    /// Semispray values (1/2) Gamma^i_jk y^j y^k + alpha s^i_0.
    pub semispray: Vec<f64>,
    /// Drift coefficient sigma = alpha F_beta^2 / F_alpha^2.
    pub sigma: f64,
    /// The quadratic norm of y at the site.
    pub alpha: f64,
    /// Drift direction s^i_0 (half-antisymmetrized convention).
    pub s_drift: Vec<f64>,
}

/// Evaluate the Lorentz nonlinear connection of an (alpha, beta)-norm
/// on a positive-definite scene. The autoparallels of the connection
/// are the Lorentz force equations: Levi-Civita transport plus the
/// sigma-weighted torsion drift.
pub fn lorentz_connection(
    scene: &SceneSpec,
    site: &TangentSample,
    template: &dyn AlphaBetaTemplate,
) -> Result<LorentzConnection> {
    let n = scene.dim;
    if site.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "site has dim {}, scene {} has dim {n}",
            site.dim(),
            scene.name
        )));
    }
    let a = scene.metric_at(&site.x)?;
    let min_eig = a
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig <= 0.0 {
        return Err(Error::SignatureUnsupported(format!(
            "the quadratic form of scene {} is not positive definite at this site (min eigenvalue {min_eig:.3e})",
            scene.name
        )));
    }
    let frame = AlphaFrame::new(scene, &site.x, 1)?;
    let beta_frame = frame.beta_tensors()?;
    let mut alpha2 = 0.0;
    let mut beta = 0.0;
    for i in 0..n {
        beta += frame.b[i].value() * site.y[i];
        for j in 0..n {
            alpha2 += a[(i, j)] * site.y[i] * site.y[j];
        }
    }
    let alpha = alpha2.sqrt();
    let (_, f_alpha, f_beta) = template.eval(alpha, beta);
    if f_alpha.abs() < 1e-14 {
        return Err(Error::DomainError {
            op: "lorentz connection",
            detail: format!(
                "template {} has a vanishing alpha-partial at alpha = {alpha:.4}, beta = {beta:.4}",
                template.name()
            ),
        });
    }
    let sigma = alpha * (f_beta / f_alpha).powi(2);

    let s_val: Vec<f64> = beta_frame.s_up.iter().map(Jet::value).collect();
    let mut s_drift = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            s_drift[i] += s_val[i * n + j] * site.y[j];
        }
    }
    let mut nonlinear = vec![0.0; n * n];
    let mut semispray = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let mut gy = 0.0;
            for k in 0..n {
                gy += frame.gamma[(i * n + j) * n + k].value() * site.y[k];
            }
            nonlinear[i * n + j] = gy + 2.0 * sigma * s_val[i * n + j];
            semispray[i] += 0.5 * gy * site.y[j];
        }
        semispray[i] += alpha * s_drift[i];
    }
    Ok(LorentzConnection {
        nonlinear,
        semispray,
        sigma,
        alpha,
        s_drift,
    })
}
