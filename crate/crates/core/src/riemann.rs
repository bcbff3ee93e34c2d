//! Classical Riemannian operators for the base metric a_ij: Levi-Civita
//! connection, curvature, covariant derivatives of the one-form b, the
//! associated r/s/e tensor family, sectional curvature and Lie
//! derivatives of the metric along vector fields.
//!
//! Everything is computed from x-jets of the scene expressions at one
//! base point; the y-group of the jet algebra is unused here (y_cap 0).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::jet::{Jet, JetScope, JetTable};
use crate::linalg;
use crate::sample::TangentSample;
use crate::scene::{Expr, SceneSpec};

/// Jets of the base-metric data at one point, deep enough in x for the
/// requested derived tensors (curvature needs x_cap >= 2).
pub struct AlphaFrame {
    pub scope: JetScope,
    pub n: usize,
    x_cap: u8,
    /// a_ij, row-major.
    pub a: Vec<Jet>,
    /// a^ij, row-major.
    pub a_inv: Vec<Jet>,
    pub det_a: Jet,
    /// b_i.
    pub b: Vec<Jet>,
    /// Christoffel symbols of a: gamma[(i*n + j)*n + k] = Gamma^i_jk,
    /// symmetric in (j, k); valid to x-order x_cap - 1.
    pub gamma: Vec<Jet>,
}

impl AlphaFrame {
    /// Expand the scene's metric and one-form at base point `x`.
    pub fn new(spec: &SceneSpec, x: &[f64], x_cap: u8) -> Result<AlphaFrame> {
        let n = spec.dim;
        if x.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "point of length {} in a {n}-dimensional scene",
                x.len()
            )));
        }
        // The fiber direction is irrelevant; jets here are y-independent.
        let center = Arc::new(TangentSample::new(x.to_vec(), unit_y(n))?);
        let table = JetTable::grouped(n, x_cap, 0);
        let scope = JetScope::new(table, center)?;
        let mut a = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                a.push(spec.metric_entry(i, j).eval_jet(&scope, &spec.params)?);
            }
        }
        let (a_inv, _cond) = linalg::invert(&a, n, "base metric")?;
        let det_a = linalg::determinant(&a, n, "base metric")?;
        if det_a.value() <= 0.0 {
            return Err(Error::NonPositiveDefinite {
                context: "base metric determinant",
                min_eig: det_a.value(),
            });
        }
        let mut b = Vec::with_capacity(n);
        for i in 0..n {
            b.push(spec.oneform[i].eval_jet(&scope, &spec.params)?);
        }
        // Gamma^i_jk = 1/2 a^il (d_j a_lk + d_k a_jl - d_l a_jk).
        let mut gamma = Vec::with_capacity(n * n * n);
        if x_cap >= 1 {
            let mut da = Vec::with_capacity(n * n * n);
            for l in 0..n {
                for k in 0..n {
                    let alk = &a[l * n + k];
                    for j in 0..n {
                        da.push(alk.deriv(scope.xslot(j))?);
                    }
                }
            }
            let d = |l: usize, k: usize, j: usize| &da[(l * n + k) * n + j];
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let mut acc: Option<Jet> = None;
                        for l in 0..n {
                            let sum = d(l, k, j)
                                .try_add(d(j, l, k))?
                                .try_sub(d(j, k, l))?;
                            let term = a_inv[i * n + l].try_mul(&sum)?;
                            acc = Some(match acc {
                                Some(t) => t.try_add(&term)?,
                                None => term,
                            });
                        }
                        gamma.push(acc.unwrap().scale(0.5));
                    }
                }
            }
        }
        Ok(AlphaFrame {
            scope,
            n,
            x_cap,
            a,
            a_inv,
            det_a,
            b,
            gamma,
        })
    }

    pub fn gamma_at(&self, i: usize, j: usize, k: usize) -> &Jet {
        &self.gamma[(i * self.n + j) * self.n + k]
    }

    /// Value matrix of a_ij.
    pub fn a_values(&self) -> DMatrix<f64> {
        linalg::value_matrix(&self.a, self.n)
    }

    /// Geodesic coefficients of alpha as plain values:
    /// G_alpha^i = 1/2 Gamma^i_jk y^j y^k.
    pub fn spray_values(&self, y: &[f64]) -> Result<Vec<f64>> {
        if self.x_cap < 1 {
            return Err(Error::OrderExceeded {
                requested: (1, 0),
                valid: (0, 0),
            });
        }
        let n = self.n;
        let mut g = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                for k in 0..n {
                    acc += self.gamma_at(i, j, k).value() * y[j] * y[k];
                }
            }
            g[i] = 0.5 * acc;
        }
        Ok(g)
    }

    /// Curvature values R^i_jkl with R(d_k, d_l)d_j = R^i_jkl d_i:
    /// R^i_jkl = d_k Gamma^i_lj - d_l Gamma^i_kj
    ///         + Gamma^i_km Gamma^m_lj - Gamma^i_lm Gamma^m_kj.
    /// Requires x_cap >= 2. Index layout ((i*n + j)*n + k)*n + l.
    pub fn curvature_values(&self) -> Result<Vec<f64>> {
        if self.x_cap < 2 {
            return Err(Error::OrderExceeded {
                requested: (2, 0),
                valid: (self.x_cap as usize, 0),
            });
        }
        let n = self.n;
        let mut r = vec![0.0; n * n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..k {
                        // Antisymmetric in (k, l): fill both at once.
                        let mut v = self.gamma_at(i, l, j).d(&[self.scope.xslot(k)])?
                            - self.gamma_at(i, k, j).d(&[self.scope.xslot(l)])?;
                        for m in 0..n {
                            v += self.gamma_at(i, k, m).value() * self.gamma_at(m, l, j).value()
                                - self.gamma_at(i, l, m).value()
                                    * self.gamma_at(m, k, j).value();
                        }
                        r[((i * n + j) * n + k) * n + l] = v;
                        r[((i * n + j) * n + l) * n + k] = -v;
                    }
                }
            }
        }
        Ok(r)
    }

    /// Sectional curvature of the plane spanned by u and v.
    pub fn sectional(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        let n = self.n;
        let r = self.curvature_values()?;
        let a = self.a_values();
        let uu = DVector::from_column_slice(u);
        let vv = DVector::from_column_slice(v);
        let gu = &a * &uu;
        let gv = &a * &vv;
        let denom = gu.dot(&uu) * gv.dot(&vv) - gu.dot(&vv) * gu.dot(&vv);
        if denom.abs() < 1e-12 {
            return Err(Error::DomainError {
                op: "sectional",
                detail: "u and v do not span a plane".into(),
            });
        }
        let mut num = 0.0;
        for p in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        num += gu[p] * v[j] * u[k] * v[l] * r[((p * n + j) * n + k) * n + l];
                    }
                }
            }
        }
        Ok(num / denom)
    }

    /// Covariant derivative of the one-form: jets of b_{i;j} = nabla_j b_i
    /// = d_j b_i - Gamma^m_ji b_m, laid out i*n + j. One x-order shallower
    /// than the frame.
    pub fn nabla_b(&self) -> Result<Vec<Jet>> {
        let n = self.n;
        let mut nb = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let mut t = self.b[i].deriv(self.scope.xslot(j))?;
                for m in 0..n {
                    let c = self.gamma_at(m, j, i).try_mul(&self.b[m])?;
                    t = t.try_sub(&c)?;
                }
                nb.push(t);
            }
        }
        Ok(nb)
    }

    /// The r/s/e family attached to (a, b), as jets sharing this frame's
    /// scope (valid one x-order below the frame).
    pub fn beta_tensors(&self) -> Result<BetaFrame> {
        let n = self.n;
        let nb = self.nabla_b()?;
        fn at(m: &[Jet], n: usize, i: usize, j: usize) -> &Jet {
            &m[i * n + j]
        }
        let mut r = Vec::with_capacity(n * n);
        let mut s = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                r.push(at(&nb, n, i, j).try_add(at(&nb, n, j, i))?.scale(0.5));
                s.push(at(&nb, n, i, j).try_sub(at(&nb, n, j, i))?.scale(0.5));
            }
        }
        // s^i_j = a^ih s_hj
        let mut s_up = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let mut acc: Option<Jet> = None;
                for h in 0..n {
                    let t = self.a_inv[i * n + h].try_mul(at(&s, n, h, j))?;
                    acc = Some(match acc {
                        Some(p) => p.try_add(&t)?,
                        None => t,
                    });
                }
                s_up.push(acc.unwrap());
            }
        }
        // s_j = b_i s^i_j
        let mut s_low = Vec::with_capacity(n);
        for j in 0..n {
            let mut acc: Option<Jet> = None;
            for i in 0..n {
                let t = self.b[i].try_mul(at(&s_up, n, i, j))?;
                acc = Some(match acc {
                    Some(p) => p.try_add(&t)?,
                    None => t,
                });
            }
            s_low.push(acc.unwrap());
        }
        // e_ij = r_ij + b_i s_j + b_j s_i
        let mut e = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let t1 = self.b[i].try_mul(&s_low[j])?;
                let t2 = self.b[j].try_mul(&s_low[i])?;
                e.push(at(&r, n, i, j).try_add(&t1)?.try_add(&t2)?);
            }
        }
        // ||beta||^2 = a^ij b_i b_j
        let mut norm2: Option<Jet> = None;
        for i in 0..n {
            for j in 0..n {
                let t = self.a_inv[i * n + j]
                    .try_mul(&self.b[i])?
                    .try_mul(&self.b[j])?;
                norm2 = Some(match norm2 {
                    Some(p) => p.try_add(&t)?,
                    None => t,
                });
            }
        }
        let beta_norm2 = norm2.unwrap();
        if beta_norm2.value() >= 1.0 {
            return Err(Error::NormViolation {
                norm: beta_norm2.value().max(0.0).sqrt(),
                point: self.scope.center.describe(),
            });
        }
        Ok(BetaFrame {
            n,
            r,
            s,
            s_up,
            s_low,
            e,
            beta_norm2,
        })
    }

    /// Lie derivative of the metric along a vector field with expression
    /// components: t_ij = V^k d_k a_ij + a_kj d_i V^k + a_ik d_j V^k,
    /// as jets one x-order below the frame.
    pub fn lie_metric(&self, v: &[Expr], params: &std::collections::BTreeMap<String, f64>) -> Result<Vec<Jet>> {
        let n = self.n;
        let mut vj = Vec::with_capacity(n);
        for comp in v {
            vj.push(comp.eval_jet(&self.scope, params)?);
        }
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let mut t: Option<Jet> = None;
                for k in 0..n {
                    let adv = self.a[i * n + j].deriv(self.scope.xslot(k))?;
                    let t0 = vj[k].try_mul(&adv)?;
                    let t1 = self.a[k * n + j].try_mul(&vj[k].deriv(self.scope.xslot(i))?)?;
                    let t2 = self.a[i * n + k].try_mul(&vj[k].deriv(self.scope.xslot(j))?)?;
                    let sum = t0.try_add(&t1)?.try_add(&t2)?;
                    t = Some(match t {
                        Some(p) => p.try_add(&sum)?,
                        None => sum,
                    });
                }
                out.push(t.unwrap());
            }
        }
        Ok(out)
    }
}

/// The r/s/e tensors of a Randers pair (a, b) at one point, as jets.
/// Layouts are row-major; `s_up[i*n + j]` is s^i_j.
pub struct BetaFrame {
    pub n: usize,
    /// Symmetrized covariant derivative r_ij.
    pub r: Vec<Jet>,
    /// Antisymmetrized covariant derivative s_ij.
    pub s: Vec<Jet>,
    /// s^i_j with the first index raised by a^{-1}.
    pub s_up: Vec<Jet>,
    /// s_j = b_i s^i_j.
    pub s_low: Vec<Jet>,
    /// e_ij = r_ij + b_i s_j + b_j s_i.
    pub e: Vec<Jet>,
    /// ||beta||^2 at the point (value < 1 guaranteed).
    pub beta_norm2: Jet,
}

impl BetaFrame {
    /// Contract a symmetric rank-2 value table with y twice, e.g. e_00.
    pub fn contract2(m: &[Jet], n: usize, y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += m[i * n + j].value() * y[i] * y[j];
            }
        }
        acc
    }

    /// Contract a rank-1 value table with y, e.g. s_0.
    pub fn contract1(v: &[Jet], y: &[f64]) -> f64 {
        v.iter().zip(y).map(|(j, yi)| j.value() * yi).sum()
    }
}

fn unit_y(n: usize) -> Vec<f64> {
    let mut y = vec![0.0; n];
    y[0] = 1.0;
    y
}
