use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};
use smce_core::catalog_store::Metacatalog;
use smce_core::enforcement::{ConstraintState, Member};
use smce_core::rule_catalog::{RuleCatalog, Verdict};
use smce_core::semantics;
use smce_core::ConstraintType;

use crate::cell;

/// Every flag abbreviation mapped to `off`, `asserted` or `implied`.
pub fn flag_cells(state: &ConstraintState) -> BTreeMap<&'static str, &'static str> {
    ConstraintType::ALL
        .iter()
        .map(|c| (c.abbrev(), cell(state.member(*c))))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct StateView {
    pub mapping: String,
    pub name: String,
    pub system: bool,
    pub flags: BTreeMap<&'static str, &'static str>,
    pub members: Vec<Member>,
    /// Truth value of each member on the current instance, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub satisfaction: Option<BTreeMap<&'static str, bool>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub advisories: Vec<String>,
}

impl StateView {
    pub fn of(meta: &Metacatalog, mapping: &str) -> Self {
        let m = &meta.mappings[mapping];
        let state = &meta.states[mapping];
        let satisfaction = meta.effective_instance(mapping).map(|inst| {
            semantics::check_report(&inst, state.flags())
                .map(|r| r.into_iter().map(|(c, ok)| (c.abbrev(), ok)).collect())
                .unwrap_or_else(|_| state.flags().iter().map(|c| (c.abbrev(), false)).collect())
        });
        StateView {
            mapping: mapping.to_string(),
            name: m.name.clone(),
            system: m.system.any(),
            flags: flag_cells(state),
            members: state.members.clone(),
            satisfaction,
            advisories: meta.advisories.get(mapping).cloned().unwrap_or_default(),
        }
    }
}

/// JSON form of a verdict with corollary ids and descriptions.
pub fn verdict_view(cat: &RuleCatalog, v: &Verdict) -> Value {
    match v {
        Verdict::Coherent { redundant } => json!({
            "verdict": "coherent",
            "redundant": redundant
                .iter()
                .map(|i| json!({
                    "flag": i.flag.abbrev(),
                    "note": cat.corollary(i.note).id,
                    "additional": i.additional.iter().map(|k| cat.corollary(*k).id.clone()).collect::<Vec<_>>(),
                }))
                .collect::<Vec<_>>(),
        }),
        other => {
            let rec = cat.corollary(other.note().expect("non-coherent verdicts carry notes"));
            let kind = match other {
                Verdict::TriviallyIncoherent { .. } => "trivially_incoherent",
                Verdict::Incoherent { .. } => "incoherent",
                _ => "rejected",
            };
            json!({ "verdict": kind, "note": rec.id, "description": rec.description })
        }
    }
}
