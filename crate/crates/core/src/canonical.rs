//! Canonical JSON: the byte-stable serialization that content hashes and
//! stored records are defined over.
//!
//! Rules: object fields in fixed declaration order, no whitespace, UTF-8.
//! Coverages print with exactly three decimals; every other real prints in
//! Rust's shortest round-trip `Display` form, so integral values like `20`
//! carry no decimal point and no value in the validated ranges prints in
//! exponent form. The scenario hash input is the document body *without*
//! `scenario_id`; the id is the lowercase-hex SHA-256 of those bytes.
//!
//! Any change to these functions changes every content hash downstream, so
//! they are pinned by byte-for-byte golden tests.

use alloc::string::String;
use core::fmt::Write;

use sha2::{Digest, Sha256};

use crate::econ::CostPerDaly;
use crate::policy::Policy;
use crate::result::EvaluationResult;
use crate::scenario::{EpiParameters, InterventionEffects, ScenarioDocument};

/// Lowercase-hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest.iter() {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// Canonical scenario body — every field except `scenario_id`, in order.
/// This is the hash input that defines scenario identity.
pub fn scenario_body(doc: &ScenarioDocument) -> String {
    let mut out = String::with_capacity(512);
    out.push_str("{\"policy\":");
    write_policy(&mut out, &doc.policy);
    out.push_str(",\"epi\":");
    write_epi(&mut out, &doc.epi);
    out.push_str(",\"effects\":");
    write_effects(&mut out, &doc.effects);
    out.push_str(",\"horizon_days\":");
    let _ = write!(out, "{}", doc.horizon_days);
    out.push_str(",\"seed\":");
    let _ = write!(out, "{}", doc.seed);
    out.push_str(",\"mode\":\"");
    out.push_str(doc.mode.as_str());
    out.push_str("\"}");
    out
}

/// Canonical full document: `scenario_id` first, then the body fields.
pub fn scenario_document(doc: &ScenarioDocument) -> String {
    let body = scenario_body(doc);
    let mut out = String::with_capacity(body.len() + doc.scenario_id.len() + 20);
    out.push_str("{\"scenario_id\":");
    push_json_str(&mut out, &doc.scenario_id);
    out.push(',');
    out.push_str(&body[1..]);
    out
}

/// Canonical evaluation-result record. Optional fields are omitted when
/// absent; the `INEFFECTIVE` sentinel serializes as a string.
pub fn evaluation_result(res: &EvaluationResult) -> String {
    let mut out = String::with_capacity(512);
    out.push_str("{\"scenario_id\":");
    push_json_str(&mut out, &res.scenario_id);
    out.push_str(",\"policy\":");
    write_policy(&mut out, &res.policy);
    out.push_str(",\"total_cases\":");
    push_f64(&mut out, res.total_cases);
    out.push_str(",\"total_deaths\":");
    push_f64(&mut out, res.total_deaths);
    out.push_str(",\"dalys\":");
    push_f64(&mut out, res.dalys);
    out.push_str(",\"cost\":");
    push_f64(&mut out, res.cost);
    if let Some(averted) = res.dalys_averted {
        out.push_str(",\"dalys_averted\":");
        push_f64(&mut out, averted);
    }
    if let Some(cpda) = res.cost_per_daly_averted {
        out.push_str(",\"cost_per_daly_averted\":");
        match cpda {
            CostPerDaly::Finite(v) => push_f64(&mut out, v),
            CostPerDaly::Ineffective => out.push_str("\"INEFFECTIVE\""),
        }
    }
    out.push_str(",\"wall_time_ms\":");
    let _ = write!(out, "{}", res.wall_time_ms);
    out.push_str(",\"worker_id\":");
    push_json_str(&mut out, &res.worker_id);
    if let Some(error) = &res.error {
        out.push_str(",\"error\":");
        push_json_str(&mut out, error);
    }
    out.push('}');
    out
}

fn write_policy(out: &mut String, p: &Policy) {
    let _ = write!(
        out,
        "{{\"itn_coverage\":{},\"irs_coverage\":{}}}",
        p.itn_coverage, p.irs_coverage
    );
}

fn write_epi(out: &mut String, epi: &EpiParameters) {
    out.push_str("{\"m\":");
    push_f64(out, epi.m);
    out.push_str(",\"a\":");
    push_f64(out, epi.a);
    out.push_str(",\"b\":");
    push_f64(out, epi.b);
    out.push_str(",\"c\":");
    push_f64(out, epi.c);
    out.push_str(",\"g\":");
    push_f64(out, epi.g);
    out.push_str(",\"n_eip\":");
    push_f64(out, epi.n_eip);
    out.push_str(",\"r\":");
    push_f64(out, epi.r);
    out.push_str(",\"population\":");
    let _ = write!(out, "{}", epi.population);
    out.push_str(",\"cfr\":");
    push_f64(out, epi.cfr);
    out.push_str(",\"disability_weight\":");
    push_f64(out, epi.disability_weight);
    out.push_str(",\"episode_duration_days\":");
    push_f64(out, epi.episode_duration_days);
    out.push_str(",\"yll_per_death\":");
    push_f64(out, epi.yll_per_death);
    out.push('}');
}

fn write_effects(out: &mut String, effects: &InterventionEffects) {
    out.push_str("{\"kappa_bite\":");
    push_f64(out, effects.kappa_bite);
    out.push_str(",\"kappa_kill_itn\":");
    push_f64(out, effects.kappa_kill_itn);
    out.push_str(",\"kappa_kill_irs\":");
    push_f64(out, effects.kappa_kill_irs);
    out.push_str(",\"unit_cost_itn\":");
    push_f64(out, effects.unit_cost_itn);
    out.push_str(",\"unit_cost_irs\":");
    push_f64(out, effects.unit_cost_irs);
    out.push('}');
}

/// Shortest round-trip decimal form. The value must be finite, and the
/// debug assertion rejects exponent notation — validated inputs never reach
/// the magnitudes where `Display` switches to it.
fn push_f64(out: &mut String, v: f64) {
    debug_assert!(v.is_finite(), "canonical JSON cannot carry {v}");
    let start = out.len();
    let _ = write!(out, "{v}");
    debug_assert!(
        !out[start..].contains(['e', 'E']),
        "exponent form in canonical output: {}",
        &out[start..]
    );
}

/// JSON string literal with standard escaping.
fn push_json_str(out: &mut String, s: &str) {
    out.push('"');
    for ch in s.chars() {
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
