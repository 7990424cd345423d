//! File formats: the native automaton serialization, the model-checker XML
//! export with integer-scaled constants, and report rendering.
//!
//! The native format is a single JSON document (field-by-field description
//! in the README) carrying the automaton, the abstraction map, the slice
//! bounds, per-location concretization volumes, and the partition
//! fingerprint. Loading it back reproduces reachability bit for bit, since
//! all clock constants are stored as exact rationals.
//!
//! The XML export is an UPPAAL-flavored `<nta>` document. Clock constants
//! there must be integers, so every constant is multiplied by the least
//! common multiple of the denominators; the factor is recorded in the
//! `scale` attribute (interpret exported constants as `value × scale`).

use crate::automaton::{AbstractionMap, Cmp, TimedAutomaton};
use crate::bounds::{BoundsTable, Mode};
use crate::error::{Error, Result};
use crate::problem::Summary;
use crate::rat::{denominator_lcm, Rat};
use crate::reach::{Concretization, ReachResult};
use num::BigInt;
use serde::{Deserialize, Serialize};

pub const AUTOMATON_FORMAT: &str = "lyapta-automaton-v1";

/// The native automaton file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutomatonFile {
    pub format: String,
    pub name: String,
    pub fingerprint: String,
    pub mode: Mode,
    pub automaton: TimedAutomaton,
    pub map: AbstractionMap,
    pub bounds: BoundsTable,
    /// Concretization volume per location, aligned with `automaton.locations`.
    pub location_volumes: Vec<f64>,
    /// Grid-mask size per location, aligned with `automaton.locations`.
    pub location_grid_points: Vec<usize>,
    pub summary: Summary,
}

impl AutomatonFile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<AutomatonFile> {
        let file: AutomatonFile = serde_json::from_str(text)?;
        if file.format != AUTOMATON_FORMAT {
            return Err(Error::Spec(format!(
                "unsupported automaton format `{}`",
                file.format
            )));
        }
        file.automaton.validate()?;
        if file.location_volumes.len() != file.automaton.locations.len()
            || file.location_grid_points.len() != file.automaton.locations.len()
            || file.map.len() != file.automaton.locations.len()
        {
            return Err(Error::Spec(
                "automaton file tables are inconsistent".into(),
            ));
        }
        Ok(file)
    }

    /// Total concretization volume of a set of locations (masks are
    /// disjoint, so volumes add).
    pub fn volume_of(&self, locations: impl Iterator<Item = usize> + Clone) -> (f64, usize) {
        (
            locations.clone().map(|l| self.location_volumes[l]).sum(),
            locations.map(|l| self.location_grid_points[l]).sum(),
        )
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn xml_name(s: &str) -> String {
    let mut out: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    if out.chars().next().is_some_and(|c| c.is_ascii_digit()) {
        out.insert(0, '_');
    }
    out
}

fn cmp_xml(cmp: Cmp) -> &'static str {
    match cmp {
        Cmp::Le => "&lt;=",
        Cmp::Lt => "&lt;",
        Cmp::Eq => "==",
        Cmp::Gt => "&gt;",
        Cmp::Ge => "&gt;=",
    }
}

/// Integer scale factor: the least common multiple of all constant
/// denominators, so `constant × factor` is an integer for every constant.
pub fn integer_scale(ta: &TimedAutomaton) -> BigInt {
    denominator_lcm(ta.constants().into_iter())
}

/// UPPAAL-flavored XML with integer constants. Constants are multiplied by
/// the denominator LCM `D`; the header records `scale="1/D"` and time unit
/// semantics are `exported × 1/D`.
pub fn to_xml(file: &AutomatonFile) -> String {
    let ta = &file.automaton;
    let d = integer_scale(ta);
    let factor = Rat::from_bigint(d.clone());
    let scaled = ta.scale_constants(&factor);
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n");
    out.push_str(&format!(
        "<nta scale=\"1/{d}\" fingerprint=\"{}\">\n",
        xml_escape(&file.fingerprint)
    ));
    out.push_str("  <declaration>");
    out.push_str(&format!("// clock unit: 1/{d}\n"));
    for c in &scaled.clocks {
        out.push_str(&format!("clock {};\n", xml_name(c)));
    }
    for s in &scaled.alphabet {
        out.push_str(&format!("broadcast chan {};\n", xml_name(s)));
    }
    out.push_str("</declaration>\n");
    out.push_str("  <template>\n    <name>abstraction</name>\n");
    let constraint_xml = |cc: &crate::automaton::ClockConstraint| -> String {
        cc.atoms
            .iter()
            .map(|a| {
                let lhs = match a.minus {
                    None => xml_name(&scaled.clocks[a.clock]),
                    Some(m) => format!(
                        "{} - {}",
                        xml_name(&scaled.clocks[a.clock]),
                        xml_name(&scaled.clocks[m])
                    ),
                };
                format!("{lhs} {} {}", cmp_xml(a.cmp), a.constant)
            })
            .collect::<Vec<_>>()
            .join(" &amp;&amp; ")
    };
    for (i, loc) in scaled.locations.iter().enumerate() {
        out.push_str(&format!(
            "    <location id=\"id{i}\">\n      <name>{}</name>\n",
            xml_name(&loc.name)
        ));
        if !loc.invariant.is_true() {
            out.push_str(&format!(
                "      <label kind=\"invariant\">{}</label>\n",
                constraint_xml(&loc.invariant)
            ));
        }
        out.push_str("    </location>\n");
    }
    for &l0 in &scaled.initial {
        out.push_str(&format!("    <init ref=\"id{l0}\"/>\n"));
    }
    for t in &scaled.transitions {
        out.push_str("    <transition>\n");
        out.push_str(&format!("      <source ref=\"id{}\"/>\n", t.source));
        out.push_str(&format!("      <target ref=\"id{}\"/>\n", t.target));
        if !t.guard.is_true() {
            out.push_str(&format!(
                "      <label kind=\"guard\">{}</label>\n",
                constraint_xml(&t.guard)
            ));
        }
        out.push_str(&format!(
            "      <label kind=\"synchronisation\">{}!</label>\n",
            xml_name(&t.symbol)
        ));
        if !t.resets.is_empty() {
            let assign: Vec<String> = t
                .resets
                .iter()
                .map(|&c| format!("{} = 0", xml_name(&scaled.clocks[c])))
                .collect();
            out.push_str(&format!(
                "      <label kind=\"assignment\">{}</label>\n",
                assign.join(", ")
            ));
        }
        out.push_str("    </transition>\n");
    }
    out.push_str("  </template>\n");
    out.push_str("  <system>system abstraction;</system>\n");
    out.push_str("</nta>\n");
    out
}

/// Reach query result as written to report files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachReport {
    pub fingerprint: String,
    pub window: (Rat, Rat),
    pub locations: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concretized: Option<Concretization>,
}

impl ReachReport {
    pub fn new(
        file: &AutomatonFile,
        result: &ReachResult,
        concretized: Option<Concretization>,
    ) -> ReachReport {
        ReachReport {
            fingerprint: file.fingerprint.clone(),
            window: result.window.clone(),
            locations: result
                .locations
                .iter()
                .map(|&l| file.automaton.locations[l].name.clone())
                .collect(),
            concretized,
        }
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "reach [{}, {}] fingerprint {}\n",
            self.window.0.to_f64(),
            self.window.1.to_f64(),
            self.fingerprint
        ));
        out.push_str(&format!("locations ({}):\n", self.locations.len()));
        for l in &self.locations {
            out.push_str(&format!("  {l}\n"));
        }
        if let Some(c) = &self.concretized {
            out.push_str(&format!(
                "concretized volume: {} ({} grid points)\n",
                c.volume, c.grid_points
            ));
        }
        out
    }
}

/// Pass/fail table printed by the `abstract` command.
pub fn render_summary(name: &str, fingerprint: &str, mode: Mode, summary: &Summary) -> String {
    let yes_no = |b: bool| if b { "yes" } else { "no" };
    let mut out = String::new();
    out.push_str(&format!("abstraction `{name}` (mode: {mode:?})\n"));
    out.push_str(&format!("fingerprint      : {fingerprint}\n"));
    out.push_str(&format!(
        "deterministic    : {}{}\n",
        yes_no(summary.deterministic),
        summary
            .determinism_witness
            .as_ref()
            .map(|w| format!("  ({w})"))
            .unwrap_or_default()
    ));
    out.push_str(&format!(
        "bisim-condition  : {}\n",
        yes_no(summary.bisimilarity_condition)
    ));
    out.push_str(&format!(
        "refinable-pre    : {}\n",
        yes_no(summary.refinable_precondition)
    ));
    for (i, j, ok) in &summary.transversal_pairs {
        out.push_str(&format!(
            "transversal {i},{j}  : {}\n",
            yes_no(*ok)
        ));
    }
    out
}
