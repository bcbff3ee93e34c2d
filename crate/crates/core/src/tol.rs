//! Central numeric tolerances.
//!
//! Every comparison threshold in the engine and its tests lives here so a
//! reader can see at a glance how tight each check is and why. Checks fall
//! into three bands:
//!
//! * algebraic identities evaluated in one jet algebra, where the only
//!   error source is f64 roundoff amplified by the tensor contractions;
//! * cross-route comparisons (two independent formulas or two strategies
//!   for the same quantity), where truncation and ordering differ;
//! * stochastic or discretized oracles (Monte Carlo volume, geodesic
//!   integration, finite differences), where the method error dominates.
//!
//! The CLI exposes a global multiplier that scales all of these uniformly;
//! the constants below are the multiplier-1 baseline.

/// Identities that hold exactly in exact arithmetic inside one jet
/// computation (trace-free checks, homogeneity contractions, curvature
/// antisymmetry). Pure roundoff, generously padded.
pub const IDENTITY_ABS: f64 = 1e-12;

/// Internal cross-formula consistency at one site, e.g. the two
/// curvature-derivative contraction identities or the two routes to the
/// mean Berwald curvature. Slightly looser than `IDENTITY_ABS` because
/// the routes traverse different contraction orders.
pub const CROSS_ROUTE_ABS: f64 = 1e-9;

/// Relative agreement between closed-form tensors and the differentiation
/// engine (closed spray vs variational spray, closed volume form vs its
/// definition).
pub const CLOSED_FORM_REL: f64 = 1e-9;

/// Residual below which a curvature-type tensor counts as vanishing when
/// a structural claim says it must (projective flatness tests, Berwald
/// checks on flat data). Scaled by the local tensor magnitude.
pub const VANISHING_ABS: f64 = 1e-7;

/// Relative error allowed against finite-difference oracles at their
/// optimal step; limited by FD truncation, not by the engine.
pub const FD_REL: f64 = 1e-5;

/// Absolute tolerance on S-curvature values verified by integrating
/// geodesics and differencing the distortion along them.
pub const GEODESIC_S_ABS: f64 = 1e-4;

/// Relative tolerance for Monte Carlo volume ratios at the default
/// sample budget (2e5 points); about three standard errors.
pub const MC_VOLUME_REL: f64 = 1e-2;

/// Matrix membership and group-closure residuals in the field-symmetry
/// checks (Frobenius norms of defect matrices).
pub const MATRIX_GROUP_ABS: f64 = 1e-10;

/// Absolute residual bound for a vector field to count as a projective
/// symmetry at a site, applied to the g-orthogonal component of the
/// spray Lie derivative after scaling by (1 + |L_V̂ G|), and to the
/// fitted factor's linearity defect.
pub const PROJECTIVE_ABS: f64 = 1e-8;

/// Residual above which a tensor is confidently nonzero; used when a
/// check requires a quantity NOT to vanish (discriminating scenes).
pub const NONVANISHING_MIN: f64 = 1e-3;

/// Absolute bound for tensors built from at most three derivative
/// orders of the squared norm (Berwald tensor, E-curvature, fitted
/// S-curvature factors); these carry less jet amplification than the
/// deep projective tensors.
pub const SHALLOW_ABS: f64 = 1e-8;

/// Sweep-variance ceiling for constancy verdicts (the fitted S factor
/// and the flag scalar must not drift across base points).
pub const CONSTANCY_VAR: f64 = 1e-8;

/// Singular-value cutoff factor for the rank of a stacked coefficient
/// matrix: singular values below `RANK_CUT * sigma_max` count as zero.
pub const RANK_CUT: f64 = 1e-6;

/// Condition-number ceiling for fundamental-tensor inversion; beyond
/// this the site is reported as metrically degenerate.
pub const METRIC_COND_LIMIT: f64 = 1e12;

/// Tolerances bundle resolved at run time: the baseline constants above
/// scaled by the CLI multiplier.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub identity_abs: f64,
    pub cross_route_abs: f64,
    pub closed_form_rel: f64,
    pub vanishing_abs: f64,
    pub fd_rel: f64,
    pub geodesic_s_abs: f64,
    pub mc_volume_rel: f64,
    pub matrix_group_abs: f64,
    pub projective_abs: f64,
    pub nonvanishing_min: f64,
}

impl Tolerances {
    pub fn scaled(multiplier: f64) -> Self {
        let m = if multiplier > 0.0 { multiplier } else { 1.0 };
        Tolerances {
            identity_abs: IDENTITY_ABS * m,
            cross_route_abs: CROSS_ROUTE_ABS * m,
            closed_form_rel: CLOSED_FORM_REL * m,
            vanishing_abs: VANISHING_ABS * m,
            fd_rel: FD_REL * m,
            geodesic_s_abs: GEODESIC_S_ABS * m,
            mc_volume_rel: MC_VOLUME_REL * m,
            matrix_group_abs: MATRIX_GROUP_ABS * m,
            projective_abs: PROJECTIVE_ABS * m,
            nonvanishing_min: NONVANISHING_MIN * m,
        }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances::scaled(1.0)
    }
}
