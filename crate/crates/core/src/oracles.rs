//! Independent numeric oracles used to validate the jet pipeline.
//!
//! Nothing in here touches the jet algebra. Finite differences, Monte
//! Carlo volume estimation and geodesic integration are deliberately
//! separate codepaths, so an agreement between an oracle and the engine
//! is evidence rather than circularity. The tensor pipeline itself never
//! calls into this module except for the Monte Carlo volume provider of
//! metrics that have no closed-form volume ratio.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::sample::site_rng;

/// Central finite difference with one Richardson step: combines steps h
/// and h/2 to cancel the leading h^2 term, giving an O(h^4) estimate.
pub fn fd_partial(
    f: &dyn Fn(&[f64], &[f64]) -> Result<f64>,
    x: &[f64],
    y: &[f64],
    slot: usize,
    h: f64,
) -> Result<f64> {
    let n = x.len();
    let eval = |t: f64| -> Result<f64> {
        let mut xx = x.to_vec();
        let mut yy = y.to_vec();
        if slot < n {
            xx[slot] += t;
        } else {
            yy[slot - n] += t;
        }
        f(&xx, &yy)
    };
    let d = |s: f64| -> Result<f64> { Ok((eval(s)? - eval(-s)?) / (2.0 * s)) };
    let coarse = d(h)?;
    let fine = d(h / 2.0)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Mixed second partial by two slots (equal slots allowed): central
/// differences at steps h and h/2, combined by one Richardson step to
/// cancel the h^2 term. Matches the O(h^4) accuracy of [`fd_partial`],
/// which matters near chart boundaries where fourth derivatives blow up.
pub fn fd_partial2(
    f: &dyn Fn(&[f64], &[f64]) -> Result<f64>,
    x: &[f64],
    y: &[f64],
    slot_a: usize,
    slot_b: usize,
    h: f64,
) -> Result<f64> {
    let n = x.len();
    let eval = |ta: f64, tb: f64| -> Result<f64> {
        let mut xx = x.to_vec();
        let mut yy = y.to_vec();
        let mut bump = |slot: usize, t: f64| {
            if slot < n {
                xx[slot] += t;
            } else {
                yy[slot - n] += t;
            }
        };
        bump(slot_a, ta);
        bump(slot_b, tb);
        f(&xx, &yy)
    };
    let stencil = |s: f64| -> Result<f64> {
        if slot_a == slot_b {
            Ok((eval(s, 0.0)? - 2.0 * eval(0.0, 0.0)? + eval(-s, 0.0)?) / (s * s))
        } else {
            Ok((eval(s, s)? - eval(s, -s)? - eval(-s, s)? + eval(-s, -s)?) / (4.0 * s * s))
        }
    };
    let coarse = stencil(h)?;
    let fine = stencil(h / 2.0)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Volume of the Euclidean unit ball in `n` dimensions, by the standard
/// two-step recursion.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(n - 2) * 2.0 * std::f64::consts::PI / n as f64,
    }
}

/// Result of a Monte Carlo volume estimation.
#[derive(Debug, Clone, Copy)]
pub struct McVolume {
    /// Estimated volume of the sampled body.
    pub volume: f64,
    /// One-sigma absolute standard error of `volume`.
    pub stderr: f64,
    /// Fraction of box samples that landed inside the body.
    pub hit_rate: f64,
}

/// Hit-or-miss volume of the star-shaped body `{ v : norm(v) < 1 }`,
/// where `norm` is positively 1-homogeneous and positive away from the
/// origin (a Minkowski norm on one tangent space).
///
/// The bounding box is fitted per axis from deterministic direction
/// probes of the boundary point `d / norm(d)` and inflated slightly;
/// a tight box keeps the hit rate high and the standard error small.
/// Fully reproducible for a given seed.
pub fn mc_body_volume(
    dim: usize,
    norm: &dyn Fn(&[f64]) -> Result<f64>,
    samples: usize,
    seed: u64,
) -> Result<McVolume> {
    if dim == 0 || samples == 0 {
        return Err(Error::InvalidConfig(
            "volume estimation needs dim >= 1 and samples >= 1".into(),
        ));
    }
    // Probe pass: low-discrepancy-ish random directions plus the axes.
    let mut rng: ChaCha8Rng = site_rng(seed, 0xb0c5);
    let probes = 4096usize.max(64 * dim);
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    let mut visit = |d: &[f64]| -> Result<()> {
        let f = norm(d)?;
        if !(f > 0.0) || !f.is_finite() {
            return Err(Error::DomainError {
                op: "mc_body_volume",
                detail: format!("norm returned {f} on a probe direction"),
            });
        }
        for i in 0..dim {
            let p = d[i] / f;
            lo[i] = lo[i].min(p);
            hi[i] = hi[i].max(p);
        }
        Ok(())
    };
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        visit(&e)?;
        e[i] = -1.0;
        visit(&e)?;
    }
    for _ in 0..probes {
        let mut d = vec![0.0; dim];
        let mut nrm = 0.0;
        for di in d.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *di = g;
            nrm += g * g;
        }
        if nrm < 1e-12 {
            continue;
        }
        let nrm = nrm.sqrt();
        for di in d.iter_mut() {
            *di /= nrm;
        }
        visit(&d)?;
    }
    // Inflate: probe gaps can miss the true extremum by a little.
    let mut box_vol = 1.0;
    for i in 0..dim {
        let w = hi[i] - lo[i];
        let pad = 0.02 * w;
        lo[i] -= pad;
        hi[i] += pad;
        box_vol *= hi[i] - lo[i];
    }
    // Hit-or-miss pass.
    let mut hits = 0usize;
    for _ in 0..samples {
        let mut v = vec![0.0; dim];
        let mut zero = true;
        for i in 0..dim {
            v[i] = rng.gen_range(lo[i]..hi[i]);
            if v[i] != 0.0 {
                zero = false;
            }
        }
        if zero {
            continue;
        }
        if norm(&v)? < 1.0 {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    let volume = box_vol * p;
    let stderr = box_vol * (p * (1.0 - p) / samples as f64).sqrt();
    Ok(McVolume {
        volume,
        stderr,
        hit_rate: p,
    })
}

/// One classical fourth-order Runge-Kutta step of the geodesic system
/// xdot = y, ydot = -2 G(x, y).
fn rk4_step(
    spray: &dyn Fn(&[f64], &[f64]) -> Result<Vec<f64>>,
    x: &mut Vec<f64>,
    y: &mut Vec<f64>,
    dt: f64,
) -> Result<()> {
    let n = x.len();
    let deriv = |x: &[f64], y: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let g = spray(x, y)?;
        if g.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "spray returned {} components for dimension {n}",
                g.len()
            )));
        }
        Ok((y.to_vec(), g.iter().map(|gi| -2.0 * gi).collect()))
    };
    let (k1x, k1y) = deriv(x, y)?;
    let ax: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k1x[i]).collect();
    let ay: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * dt * k1y[i]).collect();
    let (k2x, k2y) = deriv(&ax, &ay)?;
    let bx: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k2x[i]).collect();
    let by: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * dt * k2y[i]).collect();
    let (k3x, k3y) = deriv(&bx, &by)?;
    let cx: Vec<f64> = (0..n).map(|i| x[i] + dt * k3x[i]).collect();
    let cy: Vec<f64> = (0..n).map(|i| y[i] + dt * k3y[i]).collect();
    let (k4x, k4y) = deriv(&cx, &cy)?;
    for i in 0..n {
        x[i] += dt / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
        y[i] += dt / 6.0 * (k1y[i] + 2.0 * k2y[i] + 2.0 * k3y[i] + k4y[i]);
    }
    Ok(())
}

/// Integrate the geodesic through (x, y) to parameter time `t` with
/// `steps` RK4 substeps; returns the endpoint position and velocity.
pub fn geodesic_endpoint(
    spray: &dyn Fn(&[f64], &[f64]) -> Result<Vec<f64>>,
    x: &[f64],
    y: &[f64],
    t: f64,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut gx = x.to_vec();
    let mut gy = y.to_vec();
    let dt = t / steps.max(1) as f64;
    for _ in 0..steps.max(1) {
        rk4_step(spray, &mut gx, &mut gy, dt)?;
    }
    Ok((gx, gy))
}

/// Derivative of a scalar along the geodesic flow, evaluated without any
/// jet machinery: integrates the geodesic to the four nodes +-dt, +-2dt
/// and applies the five-point first-derivative stencil. Both the RK4
/// integrator and the stencil are fourth-order accurate.
pub fn flow_derivative_oracle(
    spray: &dyn Fn(&[f64], &[f64]) -> Result<Vec<f64>>,
    scalar: &dyn Fn(&[f64], &[f64]) -> Result<f64>,
    x: &[f64],
    y: &[f64],
    dt: f64,
    substeps: usize,
) -> Result<f64> {
    let node = |t: f64| -> Result<f64> {
        let (gx, gy) = geodesic_endpoint(spray, x, y, t, substeps)?;
        scalar(&gx, &gy)
    };
    let f1 = node(dt)?;
    let f2 = node(2.0 * dt)?;
    let fm1 = node(-dt)?;
    let fm2 = node(-2.0 * dt)?;
    Ok((-f2 + 8.0 * f1 - 8.0 * fm1 + fm2) / (12.0 * dt))
}

/// Uniform random direction on the unit sphere from a caller-owned RNG;
/// shared by samplers and probe loops elsewhere.
pub fn random_direction<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let mut d = vec![0.0; dim];
        let mut nrm = 0.0;
        for di in d.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *di = g;
            nrm += g * g;
        }
        if nrm > 1e-12 {
            let nrm = nrm.sqrt();
            for di in d.iter_mut() {
                *di /= nrm;
            }
            return d;
        }
    }
}
