//! Command-line front end for the Finsler tensor engine.
//!
//! Four subcommands: `validate` parses a scene and probes its numeric
//! health, `classify` runs the curvature structure verdicts over a
//! sweep, `symmetry` screens candidate vector fields for projective
//! invariance, and `lorentz` tests 4x4 matrices for invariance of an
//! electromagnetic two-form. The last three emit a deterministic JSON
//! report (stdout by default, `--out` for a file).
//!
//! Exit codes: 0 = the run completed (negative verdicts are findings,
//! not failures), 1 = input error, 2 = violation of an internal
//! consistency identity that must hold for every metric (an engine
//! defect rather than a property of the input).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use finsler_core::classify::{classify, ClassifyReport, Verdict};
use finsler_core::error::Error;
use finsler_core::finsler::{evaluate_sweep, metric_sites, FinslerMetric, OutputSet};
use finsler_core::jet::Strategy;
use finsler_core::lorentz::{
    em_invariance_residual, lorentz_residual, subgroup_closure, Spacetime, SPACETIME_DIM,
};
use finsler_core::randers::{randers_closed_form, resolve_builtin, RhoConvention, BUILTIN_FAMILIES};
use finsler_core::report::{CheckEntry, ReportDocument};
use finsler_core::sample::Sweep;
use finsler_core::scene::{parse_expression, parse_scene, validate_scene, SceneSpec};
use finsler_core::symmetry::{
    algebra_rank, flat_projective_basis, homothety_check, projective_split_check, resolve_field,
    VectorField,
};
use finsler_core::tol::Tolerances;

#[derive(Parser)]
#[command(
    name = "finsler",
    version,
    about = "Tensor suite for Randers-type Finsler metrics: curvature verdicts, projective symmetries, field invariance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a scene and probe its numeric health.
    Validate {
        /// Builtin spec (e.g. funk:3, rot-randers:3:0.2) or scene file path.
        scene: String,
        /// Number of probe points.
        #[arg(long, default_value_t = 200)]
        probes: usize,
        /// Probe sequence seed.
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Curvature structure verdicts over a sample sweep.
    Classify {
        /// Builtin spec or scene file path.
        scene: String,
        #[command(flatten)]
        cfg: RunConfig,
    },
    /// Projective-symmetry verdicts for candidate vector fields.
    Symmetry {
        /// Builtin spec or scene file path.
        scene: String,
        /// Comma-separated field names (t1, l12, s1, rot12, dilation or
        /// scene-defined names), or `flat-basis` for the full classical
        /// family of the flat space.
        #[arg(long, default_value = "flat-basis")]
        fields: String,
        #[command(flatten)]
        cfg: RunConfig,
    },
    /// Electromagnetic-field invariance of candidate 4x4 matrices.
    Lorentz {
        /// JSON file with the vector potential (see --help for schema).
        #[arg(long)]
        potential: PathBuf,
        /// JSON file with the candidate matrices.
        #[arg(long)]
        lambdas: PathBuf,
        #[command(flatten)]
        cfg: RunConfig,
    },
}

#[derive(Args)]
struct RunConfig {
    /// Accepted sample sites per sweep.
    #[arg(long, default_value_t = 60)]
    sweep: usize,
    /// Seed for the deterministic sweep.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Multiplier applied to the built-in tolerance table.
    #[arg(long, default_value_t = 1.0)]
    tol: f64,
    /// Jet expansion strategy; defaults by dimension.
    #[arg(long, value_enum)]
    jet_strategy: Option<StrategyArg>,
    /// Write the JSON report to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Dense,
    Directional,
}

impl RunConfig {
    fn strategy(&self, dim: usize) -> Strategy {
        match self.jet_strategy {
            Some(StrategyArg::Dense) => Strategy::DenseTaylor,
            Some(StrategyArg::Directional) => Strategy::DirectionalNested,
            None => Strategy::default_for(dim),
        }
    }

    fn tolerances(&self) -> Result<Tolerances, CliError> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(CliError::input(format!(
                "--tol must be a positive finite multiplier, got {}",
                self.tol
            )));
        }
        Ok(Tolerances::scaled(self.tol))
    }

    fn check(&self) -> Result<(), CliError> {
        if self.sweep == 0 {
            return Err(CliError::input("--sweep must be at least 1"));
        }
        Ok(())
    }
}

/// Input-side failure: bad flags, bad scene, unreadable file. Exit 1.
struct CliError {
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> CliError {
        CliError {
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> CliError {
        CliError {
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version land here; they are not errors.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("finsler: {}", e.message);
        return ExitCode::from(1);
    }
    let outcome = match cli.command {
        Command::Validate {
            scene,
            probes,
            seed,
        } => cmd_validate(&scene, probes, seed),
        Command::Classify { scene, cfg } => cmd_classify(&scene, &cfg),
        Command::Symmetry { scene, fields, cfg } => cmd_symmetry(&scene, &fields, &cfg),
        Command::Lorentz {
            potential,
            lambdas,
            cfg,
        } => cmd_lorentz(&potential, &lambdas, &cfg),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("finsler: {}", e.message);
            ExitCode::from(1)
        }
    }
}

/// Honor FINSLER_THREADS before the first parallel sweep touches the
/// global pool.
fn configure_threads() -> Result<(), CliError> {
    match std::env::var("FINSLER_THREADS") {
        Err(_) => Ok(()),
        Ok(v) => {
            let n: usize = v.parse().map_err(|_| {
                CliError::input(format!("FINSLER_THREADS must be a thread count, got `{v}`"))
            })?;
            if n == 0 {
                return Err(CliError::input("FINSLER_THREADS must be at least 1"));
            }
            // A second initialization in the same process is harmless.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Ok(())
        }
    }
}

/// Resolve a scene argument: builtin spec first, file path second.
fn load_metric(spec: &str) -> Result<FinslerMetric, CliError> {
    if let Some(metric) = resolve_builtin(spec)? {
        return Ok(metric);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::input(format!(
            "`{spec}` is neither a builtin metric nor an existing scene file; builtins: {}",
            BUILTIN_FAMILIES.join(", ")
        )));
    }
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read `{spec}`: {e}")))?;
    let scene = parse_scene(&text).map_err(|errors| {
        let mut msg = format!("scene `{spec}` has {} problem(s):", errors.len());
        for e in errors {
            msg.push_str("\n  ");
            msg.push_str(&e.to_string());
        }
        CliError::input(msg)
    })?;
    Ok(FinslerMetric::from_scene(std::sync::Arc::new(scene)))
}

fn emit_report(doc: &ReportDocument, out: Option<&PathBuf>) -> Result<(), CliError> {
    let text = doc.to_json();
    match out {
        None => {
            print!("{text}");
        }
        Some(path) => {
            fs::write(path, &text)
                .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
            let passed = doc.checks.iter().filter(|c| c.pass).count();
            println!(
                "report written to {} ({passed}/{} checks passed)",
                path.display(),
                doc.checks.len()
            );
        }
    }
    Ok(())
}

fn cmd_validate(spec: &str, probes: usize, seed: u64) -> Result<u8, CliError> {
    let metric = load_metric(spec)?;
    match metric.scene() {
        Some(scene) => {
            let v = validate_scene(scene, probes, seed)?;
            println!(
                "scene `{spec}` is healthy: dim {}, {} probes, min metric eigenvalue {:.3e}, \
                 max condition {:.3e}, max one-form norm {:.4}",
                metric.dim(),
                v.probes,
                v.min_metric_eigenvalue,
                v.max_condition,
                v.max_beta_norm
            );
        }
        None => {
            // Closed-form builtins carry no scene document; probing a
            // sweep exercises the same admissibility machinery.
            let sweep = metric_sites(&metric, seed, probes.max(1))?;
            println!(
                "metric `{spec}` is healthy: dim {}, {} sites accepted, {} rejected",
                metric.dim(),
                sweep.sites.len(),
                sweep.rejected
            );
        }
    }
    Ok(0)
}

fn verdict_entry(v: &Verdict, anchor: &str, report: &ClassifyReport) -> CheckEntry {
    CheckEntry::new(v.name, anchor, v.max_residual, v.tolerance, v.pass)
        .with_samples(report.sites, report.rejected)
}

fn cmd_classify(spec: &str, cfg: &RunConfig) -> Result<u8, CliError> {
    cfg.check()?;
    let tols = cfg.tolerances()?;
    let start = Instant::now();
    let metric = load_metric(spec)?;
    let strategy = cfg.strategy(metric.dim());
    let sweep = metric_sites(&metric, cfg.seed, cfg.sweep)?;
    let report = classify(&metric, &sweep, strategy)?;

    let mut doc = ReportDocument::new("classify", spec, metric.dim(), cfg.seed, cfg.sweep);
    doc.strategy = strategy.name().to_string();
    let g = &report.identity;
    doc.checks.push(
        CheckEntry::new(
            "identity-first-contraction",
            "y^j K_jl.m = 0",
            g.max_first_contraction,
            g.tolerance,
            g.max_first_contraction < g.tolerance,
        )
        .with_samples(report.sites, report.rejected),
    );
    doc.checks.push(
        CheckEntry::new(
            "identity-second-contraction",
            "y^l K_jl.m = -2 H_jm",
            g.max_second_contraction,
            g.tolerance,
            g.max_second_contraction < g.tolerance,
        )
        .with_samples(report.sites, report.rejected),
    );
    doc.checks.push(
        CheckEntry::new(
            "identity-projective-reconstruction",
            "W^i_jkl = (1/3)(W^i_k.l.j - W^i_l.k.j)",
            g.max_weyl_reconstruction,
            g.tolerance,
            g.max_weyl_reconstruction < g.tolerance,
        )
        .with_samples(report.sites, report.rejected),
    );
    doc.checks
        .push(verdict_entry(&report.berwald, "G^i_jkl = 0", &report));
    doc.checks
        .push(verdict_entry(&report.weakly_berwald, "E_ij = 0", &report));
    doc.checks.push(
        verdict_entry(
            &report.isotropic_s,
            "S = (n+1) sigma(x) F",
            &report,
        )
        .with_note(format!(
            "sigma mean {:.6}, direction residual {:.3e}",
            report.s_factor.mean, report.s_factor.direction_residual
        )),
    );
    doc.checks.push(
        verdict_entry(
            &report.constant_s,
            "S = (n+1) sigma F with sigma constant",
            &report,
        )
        .with_note(format!(
            "sigma mean {:.6}, cross-site variance {:.3e}",
            report.s_factor.mean, report.s_factor.variance
        )),
    );
    doc.checks.push(
        verdict_entry(&report.einstein, "Ric = sigma(x) F^2", &report).with_note(format!(
            "sigma mean {:.6}, direction residual {:.3e}",
            report.einstein_factor.mean, report.einstein_factor.direction_residual
        )),
    );
    doc.checks
        .push(verdict_entry(&report.scalar_flag, "W = 0", &report));
    doc.checks.push(
        verdict_entry(
            &report.constant_flag,
            "*W = 0 and the flag scalar has no sweep variance",
            &report,
        )
        .with_note(format!("flag variance {:.3e}", report.flag_variance)),
    );
    push_randers_cross_checks(&mut doc, &metric, &sweep, strategy, &tols)?;

    doc.timing_ms = start.elapsed().as_millis() as u64;
    emit_report(&doc, cfg.out.as_ref())?;
    Ok(if report.identity.pass { 0 } else { 2 })
}

/// When the scene carries an explicit one-form, compare the engine spray
/// and S-curvature against the closed-form expressions at every site.
fn push_randers_cross_checks(
    doc: &mut ReportDocument,
    metric: &FinslerMetric,
    sweep: &Sweep,
    strategy: Strategy,
    tols: &Tolerances,
) -> Result<(), CliError> {
    let Some(scene) = metric.scene() else {
        return Ok(());
    };
    if !scene.has_oneform() {
        return Ok(());
    }
    let request = OutputSet {
        spray: true,
        s_curv: true,
        ..OutputSet::default()
    };
    let mut spray_gap = 0.0f64;
    let mut s_gap = 0.0f64;
    for (site, tensors) in sweep
        .sites
        .iter()
        .zip(evaluate_sweep(metric, &sweep.sites, request, strategy))
    {
        let t = tensors?;
        let closed = randers_closed_form(scene, &site.x, &site.y, RhoConvention::NormSquared)?;
        let engine_spray = t.spray.as_deref().unwrap_or(&[]);
        for (a, b) in closed.spray.iter().zip(engine_spray) {
            spray_gap = spray_gap.max((a - b).abs() / (1.0 + a.abs()));
        }
        if let Some(s) = t.s {
            s_gap = s_gap.max((closed.s - s).abs() / (1.0 + closed.s.abs()));
        }
    }
    doc.checks.push(
        CheckEntry::new(
            "randers-closed-spray",
            "G^i = G_alpha^i + (e_00/(2F) - s_0) y^i + alpha s^i_0",
            spray_gap,
            tols.closed_form_rel,
            spray_gap < tols.closed_form_rel,
        )
        .with_samples(sweep.sites.len(), sweep.rejected),
    );
    doc.checks.push(
        CheckEntry::new(
            "randers-closed-s-curvature",
            "S = (n+1)(e_00/(2F) - s_0 - rho_0)",
            s_gap,
            tols.vanishing_abs,
            s_gap < tols.vanishing_abs,
        )
        .with_samples(sweep.sites.len(), sweep.rejected),
    );
    Ok(())
}

fn parse_field_list(
    scene: Option<&SceneSpec>,
    n: usize,
    fields: &str,
) -> Result<Vec<VectorField>, CliError> {
    let mut out: Vec<VectorField> = Vec::new();
    for token in fields.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        if token == "flat-basis" {
            out.extend(flat_projective_basis(n));
        } else {
            out.push(resolve_field(scene, n, token)?);
        }
    }
    if out.is_empty() {
        return Err(CliError::input("--fields resolved to an empty list"));
    }
    Ok(out)
}

fn cmd_symmetry(spec: &str, fields: &str, cfg: &RunConfig) -> Result<u8, CliError> {
    cfg.check()?;
    let tols = cfg.tolerances()?;
    let start = Instant::now();
    let metric = load_metric(spec)?;
    let n = metric.dim();
    let strategy = cfg.strategy(n);
    let scene = metric.scene().cloned();
    let candidates = parse_field_list(scene.as_deref(), n, fields)?;
    let sweep = metric_sites(&metric, cfg.seed, cfg.sweep)?;

    let mut doc = ReportDocument::new("symmetry", spec, n, cfg.seed, cfg.sweep);
    doc.strategy = strategy.name().to_string();

    let rank = algebra_rank(
        &metric,
        &candidates,
        &sweep.sites,
        tols.projective_abs,
        strategy,
    )?;
    for verdict in &rank.verdicts {
        let note = if verdict.is_affine {
            format!("affine (P = 0); factor linearity residual {:.3e}", verdict.p_linearity_residual)
        } else if verdict.is_projective {
            format!(
                "projective with max |P| {:.4}; factor linearity residual {:.3e}",
                verdict.max_p, verdict.p_linearity_residual
            )
        } else {
            "not projective".to_string()
        };
        doc.checks.push(
            CheckEntry::new(
                format!("projective:{}", verdict.field),
                "L_V G^i = P y^i for the complete lift of V",
                verdict.max_scaled_residual,
                tols.projective_abs,
                verdict.is_projective,
            )
            .with_samples(verdict.sites, sweep.rejected)
            .with_note(note),
        );
    }

    if let Some(scene) = &scene {
        if scene.has_oneform() {
            for field in &candidates {
                let split = projective_split_check(
                    scene,
                    field,
                    &sweep.sites,
                    tols.projective_abs,
                    strategy,
                )?;
                doc.checks.push(
                    CheckEntry::new(
                        format!("split:{}", field.name),
                        "V is projective iff it is projective for the quadratic part and the \
                         lifted derivative of the drift term vanishes",
                        split.worst.full_residual,
                        tols.projective_abs,
                        split.equivalence_violations == 0,
                    )
                    .with_samples(split.sites, sweep.rejected)
                    .with_note(format!(
                        "full {}, quadratic {}, drift-term {}, violations {}",
                        split.full_projective,
                        split.alpha_projective,
                        split.torsion_vanishes,
                        split.equivalence_violations
                    )),
                );
            }
            for (field, verdict) in candidates.iter().zip(&rank.verdicts) {
                let entry = match homothety_check(scene, field, &sweep.sites, tols.projective_abs)
                {
                    Ok(h) => {
                        let implication = !(verdict.is_projective && h.is_homothety)
                            || h.torsion_scales;
                        CheckEntry::new(
                            format!("homothety:{}", field.name),
                            "a projective homothety of the quadratic part scales the drift \
                             two-form, L_V s_ij = mu s_ij",
                            h.max_torsion_residual,
                            tols.projective_abs,
                            implication,
                        )
                        .with_samples(sweep.sites.len(), sweep.rejected)
                        .with_note(format!(
                            "mu {:.6}, homothety {}, torsion scales {}",
                            h.mu, h.is_homothety, h.torsion_scales
                        ))
                    }
                    Err(Error::NotApplicable(why)) => CheckEntry::new(
                        format!("homothety:{}", field.name),
                        "a projective homothety of the quadratic part scales the drift \
                         two-form, L_V s_ij = mu s_ij",
                        0.0,
                        tols.projective_abs,
                        true,
                    )
                    .with_samples(sweep.sites.len(), sweep.rejected)
                    .with_note(format!("not applicable: {why}")),
                    Err(e) => return Err(e.into()),
                };
                doc.checks.push(entry);
            }
        }
    }

    let passing_names = rank.passing.join(", ");
    doc.checks.push(
        CheckEntry::new(
            "projective-algebra-rank",
            "dimension of the span of the passing candidate fields",
            0.0,
            1.0,
            true,
        )
        .with_samples(sweep.sites.len(), sweep.rejected)
        .with_note(format!(
            "rank {} from {} passing of {} candidates: [{}]",
            rank.rank,
            rank.passing.len(),
            candidates.len(),
            passing_names
        )),
    );

    doc.timing_ms = start.elapsed().as_millis() as u64;
    emit_report(&doc, cfg.out.as_ref())?;
    Ok(0)
}

/// Default probe points for checking that a potential's field strength
/// is uniform: deterministic, spread across the unit box.
fn default_probes() -> Vec<Vec<f64>> {
    vec![
        vec![0.0, 0.0, 0.0, 0.0],
        vec![0.3, -0.2, 0.1, 0.4],
        vec![-0.5, 0.4, -0.3, 0.2],
        vec![0.1, 0.7, 0.2, -0.6],
        vec![-0.2, -0.5, 0.6, 0.3],
        vec![0.45, 0.15, -0.35, -0.25],
    ]
}

fn json_file(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::input(format!("{} is not valid JSON: {e}", path.display())))
}

/// Potential schema: {"potential": [4 expression strings],
/// "params": {name: number, ...}?, "probes": [[4 numbers], ...]?}.
/// Expressions use the scene coordinate names x1..x4, where x1 is the
/// time coordinate; `potential[k]` is the component A_k in that order.
fn load_spacetime(path: &Path) -> Result<(Spacetime, Vec<Vec<f64>>), CliError> {
    let v = json_file(path)?;
    let comps = v
        .get("potential")
        .and_then(|p| p.as_array())
        .ok_or_else(|| {
            CliError::input(format!(
                "{}: expected a `potential` array of {SPACETIME_DIM} expression strings",
                path.display()
            ))
        })?;
    let mut params = BTreeMap::new();
    if let Some(obj) = v.get("params") {
        let obj = obj.as_object().ok_or_else(|| {
            CliError::input(format!("{}: `params` must be an object", path.display()))
        })?;
        for (k, val) in obj {
            let num = val.as_f64().ok_or_else(|| {
                CliError::input(format!("{}: parameter `{k}` is not a number", path.display()))
            })?;
            params.insert(k.clone(), num);
        }
    }
    let mut exprs = Vec::with_capacity(comps.len());
    for (i, c) in comps.iter().enumerate() {
        let text = c.as_str().ok_or_else(|| {
            CliError::input(format!(
                "{}: potential component {i} is not a string",
                path.display()
            ))
        })?;
        exprs.push(parse_expression(text, &params)?);
    }
    let probes = match v.get("probes") {
        None => default_probes(),
        Some(p) => {
            let rows = p.as_array().ok_or_else(|| {
                CliError::input(format!("{}: `probes` must be an array", path.display()))
            })?;
            let mut out = Vec::with_capacity(rows.len());
            for row in rows {
                let pt: Option<Vec<f64>> = row
                    .as_array()
                    .map(|r| r.iter().filter_map(|x| x.as_f64()).collect());
                match pt {
                    Some(pt) if pt.len() == SPACETIME_DIM => out.push(pt),
                    _ => {
                        return Err(CliError::input(format!(
                            "{}: each probe must be {SPACETIME_DIM} numbers",
                            path.display()
                        )))
                    }
                }
            }
            if out.is_empty() {
                return Err(CliError::input(format!(
                    "{}: `probes` must not be empty",
                    path.display()
                )));
            }
            out
        }
    };
    Ok((Spacetime::new(exprs, params)?, probes))
}

/// Candidate schema: {"lambdas": [{"name": str?, "matrix": [[4x4]]}, ...]}
fn load_lambdas(path: &Path) -> Result<Vec<(String, DMatrix<f64>)>, CliError> {
    let v = json_file(path)?;
    let list = v
        .get("lambdas")
        .and_then(|l| l.as_array())
        .ok_or_else(|| {
            CliError::input(format!(
                "{}: expected a `lambdas` array of candidate matrices",
                path.display()
            ))
        })?;
    if list.is_empty() {
        return Err(CliError::input(format!(
            "{}: the candidate list is empty",
            path.display()
        )));
    }
    let mut out = Vec::with_capacity(list.len());
    for (k, item) in list.iter().enumerate() {
        let name = item
            .get("name")
            .and_then(|n| n.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| format!("lambda{k}"));
        let rows = item
            .get("matrix")
            .and_then(|m| m.as_array())
            .ok_or_else(|| {
                CliError::input(format!(
                    "{}: candidate {k} needs a `matrix` of {SPACETIME_DIM} rows",
                    path.display()
                ))
            })?;
        let mut flat = Vec::with_capacity(SPACETIME_DIM * SPACETIME_DIM);
        for row in rows {
            let row = row.as_array().ok_or_else(|| {
                CliError::input(format!("{}: candidate {k} has a malformed row", path.display()))
            })?;
            for x in row {
                flat.push(x.as_f64().ok_or_else(|| {
                    CliError::input(format!(
                        "{}: candidate {k} has a non-numeric entry",
                        path.display()
                    ))
                })?);
            }
        }
        if flat.len() != SPACETIME_DIM * SPACETIME_DIM {
            return Err(CliError::input(format!(
                "{}: candidate {k} ({name}) is not {SPACETIME_DIM}x{SPACETIME_DIM}",
                path.display()
            )));
        }
        out.push((
            name,
            DMatrix::from_row_slice(SPACETIME_DIM, SPACETIME_DIM, &flat),
        ));
    }
    Ok(out)
}

fn cmd_lorentz(potential: &Path, lambdas: &Path, cfg: &RunConfig) -> Result<u8, CliError> {
    let tols = cfg.tolerances()?;
    let start = Instant::now();
    let (spacetime, probes) = load_spacetime(potential)?;
    let candidates = load_lambdas(lambdas)?;
    let field = spacetime.uniform_two_form(&probes)?;

    let mut doc = ReportDocument::new(
        "lorentz",
        &potential.display().to_string(),
        SPACETIME_DIM,
        cfg.seed,
        probes.len(),
    );
    doc.strategy = "exact".to_string();

    let mut bianchi = 0.0f64;
    for p in &probes {
        bianchi = bianchi.max(spacetime.bianchi_residual(p)?);
    }
    doc.checks.push(
        CheckEntry::new(
            "field-two-form-closed",
            "cyclic sum of the partial derivatives of F_munu vanishes",
            bianchi,
            tols.matrix_group_abs,
            bianchi < tols.matrix_group_abs,
        )
        .with_samples(probes.len(), 0),
    );

    for (name, lambda) in &candidates {
        let metric_residual = lorentz_residual(lambda)?;
        let field_residual = em_invariance_residual(lambda, &field)?;
        let worst = metric_residual.max(field_residual);
        doc.checks.push(
            CheckEntry::new(
                format!("membership:{name}"),
                "Lambda^T eta Lambda = eta and Lambda^T F Lambda = F",
                worst,
                tols.matrix_group_abs,
                worst < tols.matrix_group_abs,
            )
            .with_samples(probes.len(), 0)
            .with_note(format!(
                "metric residual {metric_residual:.3e}, field residual {field_residual:.3e}"
            )),
        );
    }

    let matrices: Vec<DMatrix<f64>> = candidates.iter().map(|(_, m)| m.clone()).collect();
    let closure = subgroup_closure(&matrices, &field, tols.matrix_group_abs)?;
    let passing_names: Vec<&str> = closure
        .passing
        .iter()
        .map(|&k| candidates[k].0.as_str())
        .collect();
    doc.checks.push(
        CheckEntry::new(
            "subgroup-closure",
            "products and inverses of passing candidates stay in the passing set",
            closure
                .worst_product_residual
                .max(closure.worst_inverse_residual),
            tols.matrix_group_abs,
            closure.closed,
        )
        .with_samples(closure.passing.len(), 0)
        .with_note(format!("passing: [{}]", passing_names.join(", "))),
    );

    doc.timing_ms = start.elapsed().as_millis() as u64;
    emit_report(&doc, cfg.out.as_ref())?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
