//! Sites on the slit tangent bundle and deterministic sweep generation.
//!
//! A sweep visits quasi-random base points of the chart (Halton sequence,
//! offset derived from the seed) and pairs each with a direction drawn
//! uniformly on the alpha-unit sphere from a per-site counter RNG, so runs
//! are reproducible for a given (scene, seed, sweep size) regardless of
//! thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// One point (x, y) of the slit tangent bundle: base point `x` on the chart
/// and a nonzero tangent direction `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl TangentSample {
    /// Both halves must be finite, of equal length, and `y` must not vanish.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "base point has {} components, direction has {}",
                x.len(),
                y.len()
            )));
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(Error::DimensionMismatch(
                "non-finite component in tangent sample".into(),
            ));
        }
        if y.iter().all(|v| *v == 0.0) {
            return Err(Error::DomainError {
                op: "tangent sample",
                detail: "direction y = 0 is outside the slit bundle".into(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn describe(&self) -> String {
        format!("x={:?}, y={:?}", self.x, self.y)
    }
}

/// Chart of a scene: where base points live.
#[derive(Debug, Clone, PartialEq)]
pub enum Chart {
    /// Open Euclidean ball of radius `r` around the origin.
    Ball { r: f64 },
    /// Axis-aligned box `[lo, hi]^n`.
    Box { lo: f64, hi: f64 },
}

impl Chart {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Chart::Ball { r } => x.iter().map(|v| v * v).sum::<f64>() < r * r,
            Chart::Box { lo, hi } => x.iter().all(|v| *lo < *v && *v < *hi),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Chart::Ball { r } => format!("ball r={r}"),
            Chart::Box { lo, hi } => format!("box [{lo}, {hi}]^n"),
        }
    }
}

/// First `k` primes, bases for the Halton sequence.
fn primes(k: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(k);
    let mut c = 2u64;
    while out.len() < k {
        if (2..c).take_while(|d| d * d <= c).all(|d| c % d != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

/// Radical-inverse of `i` in base `b`, the Halton coordinate in [0, 1).
fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

/// Deterministic low-discrepancy stream of base points inside a chart,
/// shrunk toward the center by `margin` so jets and difference stencils
/// never touch the boundary.
pub struct HaltonChart {
    bases: Vec<u64>,
    chart: Chart,
    margin: f64,
    next: u64,
}

impl HaltonChart {
    pub fn new(dim: usize, chart: Chart, margin: f64, seed: u64) -> Self {
        // The seed shifts the start index; any shift keeps the
        // low-discrepancy property of the tail.
        let next = 101 + (seed % 9973) * 7;
        Self {
            bases: primes(dim),
            chart,
            margin,
            next,
        }
    }

    /// Next base point, strictly inside the margin-shrunk chart.
    pub fn next_point(&mut self) -> Vec<f64> {
        loop {
            let i = self.next;
            self.next += 1;
            let u: Vec<f64> = self
                .bases
                .iter()
                .map(|b| radical_inverse(i, *b))
                .collect();
            match &self.chart {
                Chart::Ball { r } => {
                    let bound = r * self.margin;
                    let x: Vec<f64> = u.iter().map(|v| bound * (2.0 * v - 1.0)).collect();
                    if x.iter().map(|v| v * v).sum::<f64>() < bound * bound {
                        return x;
                    }
                }
                Chart::Box { lo, hi } => {
                    let c = 0.5 * (lo + hi);
                    let h = 0.5 * (hi - lo) * self.margin;
                    return u.iter().map(|v| c + h * (2.0 * v - 1.0)).collect();
                }
            }
        }
    }
}

/// Per-site RNG: the sweep seed xored with the site counter, so any site can
/// be regenerated in isolation and parallel order does not matter.
pub fn site_rng(seed: u64, site: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (site.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Standard-normal vector of length `n` from `rng`.
pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Outcome of sweep generation: accepted sites plus how many candidates the
/// admissibility predicate rejected (reported, never hidden).
pub struct Sweep {
    pub sites: Vec<TangentSample>,
    pub rejected: usize,
    pub seed: u64,
}

/// Draw `count` admissible sites.
///
/// `alpha_norm(x, z)` must return the Riemannian norm used to place `z` on
/// the alpha-unit sphere; `admit(site)` applies the scene's acceptance rule
/// (F bounded away from zero, fundamental tensor regular, extra scene
/// constraints). Rejected candidates are counted and resampled.
pub fn sweep(
    dim: usize,
    chart: &Chart,
    margin: f64,
    seed: u64,
    count: usize,
    alpha_norm: &dyn Fn(&[f64], &[f64]) -> Result<f64>,
    admit: &dyn Fn(&TangentSample) -> bool,
) -> Result<Sweep> {
    let mut halton = HaltonChart::new(dim, chart.clone(), margin, seed);
    let mut sites = Vec::with_capacity(count);
    let mut rejected = 0usize;
    let mut attempts = 0usize;
    let max_attempts = 200 * count.max(8);
    let mut counter = 0u64;
    while sites.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::SamplingExhausted {
                attempts,
                accepted: sites.len(),
                needed: count,
            });
        }
        let x = halton.next_point();
        let mut rng = site_rng(seed, counter);
        counter += 1;
        let z = gaussian(&mut rng, dim);
        let norm = alpha_norm(&x, &z)?;
        if !(norm.is_finite() && norm > 1e-12) {
            rejected += 1;
            continue;
        }
        let y: Vec<f64> = z.iter().map(|v| v / norm).collect();
        let site = TangentSample { x, y };
        if admit(&site) {
            sites.push(site);
        } else {
            rejected += 1;
        }
    }
    Ok(Sweep {
        sites,
        rejected,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_points_stay_inside_margin() {
        let mut h = HaltonChart::new(3, Chart::Ball { r: 1.0 }, 0.8, 7);
        for _ in 0..200 {
            let x = h.next_point();
            let r2: f64 = x.iter().map(|v| v * v).sum();
            assert!(r2 < 0.8 * 0.8);
        }
    }

    #[test]
    fn halton_deterministic_per_seed() {
        let mut a = HaltonChart::new(2, Chart::Box { lo: -1.0, hi: 1.0 }, 0.9, 42);
        let mut b = HaltonChart::new(2, Chart::Box { lo: -1.0, hi: 1.0 }, 0.9, 42);
        for _ in 0..50 {
            assert_eq!(a.next_point(), b.next_point());
        }
        let mut c = HaltonChart::new(2, Chart::Box { lo: -1.0, hi: 1.0 }, 0.9, 43);
        assert_ne!(a.next_point(), c.next_point());
    }

    #[test]
    fn site_rng_reproducible() {
        let mut r1 = site_rng(5, 17);
        let mut r2 = site_rng(5, 17);
        assert_eq!(gaussian(&mut r1, 4), gaussian(&mut r2, 4));
    }

    #[test]
    fn zero_direction_rejected() {
        assert!(TangentSample::new(vec![0.0, 0.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn sweep_counts_rejections() {
        // Euclidean norm; admit only sites in the right half-space, so the
        // sampler must reject roughly half of the candidates.
        let alpha = |_x: &[f64], z: &[f64]| Ok(z.iter().map(|v| v * v).sum::<f64>().sqrt());
        let admit = |s: &TangentSample| s.x[0] > 0.0;
        let sweep = sweep(
            2,
            &Chart::Ball { r: 1.0 },
            0.9,
            11,
            40,
            &alpha,
            &admit,
        )
        .unwrap();
        assert_eq!(sweep.sites.len(), 40);
        assert!(sweep.rejected > 0);
        for s in &sweep.sites {
            assert!(s.x[0] > 0.0);
            let ny: f64 = s.y.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((ny - 1.0).abs() < 1e-12);
        }
    }
}
