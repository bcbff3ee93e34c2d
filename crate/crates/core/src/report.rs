//! Deterministic JSON run reports.
//!
//! The writer is hand rolled so the byte stream is a pure function of
//! the report contents: keys appear in declaration order, floats carry
//! 17 significant digits, strings get minimal escaping. Two runs with
//! the same scene, seed and configuration therefore produce identical
//! bytes except for the timing field. Non-finite floats (which no
//! healthy run produces) serialize as `null` rather than breaking the
//! document.

use std::fmt::Write as _;

/// One check line: what was tested, against which formula, and how it
/// came out.
#[derive(Clone, Debug)]
pub struct CheckEntry {
    pub name: String,
    /// The condition the check enforces, quoted as a formula or short
    /// sentence, so a failing line is traceable without the source.
    pub anchor: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Accepted sample sites behind the residual.
    pub samples: usize,
    /// Candidate sites the admissibility rule rejected and resampled.
    pub rejected: usize,
    /// Optional context: fitted factors, ranks, counterexample counts.
    pub note: Option<String>,
}

impl CheckEntry {
    pub fn new(
        name: impl Into<String>,
        anchor: impl Into<String>,
        max_residual: f64,
        tolerance: f64,
        pass: bool,
    ) -> CheckEntry {
        CheckEntry {
            name: name.into(),
            anchor: anchor.into(),
            max_residual,
            tolerance,
            pass,
            samples: 0,
            rejected: 0,
            note: None,
        }
    }

    pub fn with_samples(mut self, samples: usize, rejected: usize) -> CheckEntry {
        self.samples = samples;
        self.rejected = rejected;
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> CheckEntry {
        self.note = Some(note.into());
        self
    }
}

/// A complete run report.
#[derive(Clone, Debug)]
pub struct ReportDocument {
    pub tool_version: String,
    /// Which subcommand produced the report.
    pub command: String,
    /// Scene descriptor: builtin spec string or file path.
    pub scene: String,
    pub dim: usize,
    pub seed: u64,
    /// Requested sweep size.
    pub sweep: usize,
    /// Jet expansion strategy name.
    pub strategy: String,
    /// Wall-clock milliseconds; the single field allowed to differ
    /// between otherwise identical runs.
    pub timing_ms: u64,
    pub checks: Vec<CheckEntry>,
}

impl ReportDocument {
    pub fn new(command: &str, scene: &str, dim: usize, seed: u64, sweep: usize) -> ReportDocument {
        ReportDocument {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            scene: scene.to_string(),
            dim,
            seed,
            sweep,
            strategy: String::new(),
            timing_ms: 0,
            checks: Vec::new(),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Serialize with a fixed schema. Pretty-printed with two-space
    /// indentation; field order matches the struct declaration.
    pub fn to_json(&self) -> String {
        let mut out = String::with_capacity(1024);
        out.push_str("{\n");
        push_str_field(&mut out, 1, "tool_version", &self.tool_version, true);
        push_str_field(&mut out, 1, "command", &self.command, true);
        push_str_field(&mut out, 1, "scene", &self.scene, true);
        push_uint_field(&mut out, 1, "dim", self.dim as u64, true);
        push_uint_field(&mut out, 1, "seed", self.seed, true);
        push_uint_field(&mut out, 1, "sweep", self.sweep as u64, true);
        push_str_field(&mut out, 1, "strategy", &self.strategy, true);
        push_uint_field(&mut out, 1, "timing_ms", self.timing_ms, true);
        indent(&mut out, 1);
        out.push_str("\"checks\": [");
        for (k, check) in self.checks.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            out.push('\n');
            indent(&mut out, 2);
            out.push_str("{\n");
            push_str_field(&mut out, 3, "name", &check.name, true);
            push_str_field(&mut out, 3, "anchor", &check.anchor, true);
            push_float_field(&mut out, 3, "max_residual", check.max_residual, true);
            push_float_field(&mut out, 3, "tolerance", check.tolerance, true);
            push_bool_field(&mut out, 3, "pass", check.pass, true);
            push_uint_field(&mut out, 3, "samples", check.samples as u64, true);
            push_uint_field(&mut out, 3, "rejected", check.rejected as u64, check.note.is_some());
            if let Some(note) = &check.note {
                push_str_field(&mut out, 3, "note", note, false);
            }
            indent(&mut out, 2);
            out.push('}');
        }
        if !self.checks.is_empty() {
            out.push('\n');
            indent(&mut out, 1);
        }
        out.push_str("]\n}\n");
        out
    }
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn push_key(out: &mut String, level: usize, key: &str) {
    indent(out, level);
    out.push('"');
    out.push_str(key);
    out.push_str("\": ");
}

fn finish_field(out: &mut String, comma: bool) {
    if comma {
        out.push(',');
    }
    out.push('\n');
}

fn push_str_field(out: &mut String, level: usize, key: &str, value: &str, comma: bool) {
    push_key(out, level, key);
    push_escaped(out, value);
    finish_field(out, comma);
}

fn push_uint_field(out: &mut String, level: usize, key: &str, value: u64, comma: bool) {
    push_key(out, level, key);
    let _ = write!(out, "{value}");
    finish_field(out, comma);
}

fn push_bool_field(out: &mut String, level: usize, key: &str, value: bool, comma: bool) {
    push_key(out, level, key);
    out.push_str(if value { "true" } else { "false" });
    finish_field(out, comma);
}

fn push_float_field(out: &mut String, level: usize, key: &str, value: f64, comma: bool) {
    push_key(out, level, key);
    push_float(out, value);
    finish_field(out, comma);
}

/// 17 significant digits: enough to reconstruct any f64 exactly.
fn push_float(out: &mut String, value: f64) {
    if value.is_finite() {
        let _ = write!(out, "{value:.16e}");
    } else {
        out.push_str("null");
    }
}

fn push_escaped(out: &mut String, value: &str) {
    out.push('"');
    for ch in value.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_doc() -> ReportDocument {
        let mut doc = ReportDocument::new("classify", "funk:3", 3, 42, 60);
        doc.strategy = "dense".to_string();
        doc.timing_ms = 118;
        doc.checks.push(
            CheckEntry::new(
                "constant-s-curvature",
                "S = (n+1) sigma(x) F with sigma constant",
                3.2e-11,
                1e-8,
                true,
            )
            .with_samples(60, 2)
            .with_note("sigma mean 0.5"),
        );
        doc.checks.push(CheckEntry::new(
            "berwald",
            "G^i_jkl = 0",
            0.5,
            1e-8,
            false,
        ));
        doc
    }

    #[test]
    fn report_is_valid_json_and_round_trips() {
        let doc = sample_doc();
        let text = doc.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).expect("valid JSON");
        assert_eq!(v["tool_version"], env!("CARGO_PKG_VERSION"));
        assert_eq!(v["seed"], 42);
        assert_eq!(v["checks"][0]["samples"], 60);
        assert_eq!(v["checks"][0]["note"], "sigma mean 0.5");
        assert_eq!(v["checks"][1]["pass"], false);
        let back = v["checks"][0]["max_residual"].as_f64().unwrap();
        assert_eq!(back, 3.2e-11, "17 digits reconstruct the float exactly");
    }

    #[test]
    fn identical_documents_serialize_to_identical_bytes() {
        let a = sample_doc().to_json();
        let b = sample_doc().to_json();
        assert_eq!(a, b);
        assert!(a.contains("5.0000000000000000e-1"), "float format is fixed");
    }

    #[test]
    fn strings_are_escaped_and_non_finite_floats_become_null() {
        let mut doc = sample_doc();
        doc.scene = "line1\n\"quoted\"\\x".to_string();
        doc.checks[0].max_residual = f64::NAN;
        let text = doc.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).expect("valid JSON");
        assert_eq!(v["scene"], "line1\n\"quoted\"\\x");
        assert!(v["checks"][0]["max_residual"].is_null());
    }

    #[test]
    fn empty_check_list_is_still_valid() {
        let mut doc = sample_doc();
        doc.checks.clear();
        let v: serde_json::Value = serde_json::from_str(&doc.to_json()).unwrap();
        assert_eq!(v["checks"].as_array().unwrap().len(), 0);
    }
}
