//! Interactive constraint-set maintenance: adding or removing one constraint
//! at a time while keeping every mapping's set coherent, minimal, and
//! satisfied by its current instance, and propagating the effects along
//! composition links.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog_store::{MappingDescriptor, Metacatalog, StoreError};
use crate::constraint_model::{encode, variant_for, ConstraintFlags, ConstraintType};
use crate::rule_catalog::{Compoundness, CorKey, Implied, RuleCatalog, RuleSet, Verdict};
use crate::semantics::{self, MappingInstance};

use ConstraintType::*;

#[derive(Debug, Error)]
pub enum EnforcementError {
    #[error("{0} is a system constraint and cannot be toggled")]
    SystemConstraint(ConstraintType),
    #[error("`{0}` is maintained by the system and cannot be modified")]
    ReadOnly(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0} is already a member of the constraint set of `{1}`")]
    AlreadyMember(ConstraintType, String),
    #[error("{0} is not a member of the constraint set of `{1}`")]
    NotMember(ConstraintType, String),
    #[error("{0}")]
    Conflict(String),
}

pub type Result<T, E = EnforcementError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Asserted,
    Implied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub constraint: ConstraintType,
    pub provenance: Provenance,
    /// Corollary id of the rule that implies the member.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub additional: Vec<String>,
}

/// Constraint set of one mapping. Asserted members form an irredundant
/// basis; implied members are what the rules derive from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintState {
    pub mapping: String,
    /// Sorted in canonical (descending weight) order.
    pub members: Vec<Member>,
}

impl ConstraintState {
    pub fn asserted(mapping: &str, flags: ConstraintFlags) -> Self {
        ConstraintState {
            mapping: mapping.to_string(),
            members: flags
                .iter_canonical()
                .map(|c| Member {
                    constraint: c,
                    provenance: Provenance::Asserted,
                    note: None,
                    additional: Vec::new(),
                })
                .collect(),
        }
    }

    fn build(mapping: &str, rules: &RuleSet, asserted: ConstraintFlags, implied: &[Implied]) -> Self {
        let mut state = Self::asserted(mapping, asserted);
        state.members.extend(implied.iter().map(|i| Member {
            constraint: i.flag,
            provenance: Provenance::Implied,
            note: Some(rules.corollary(i.note).id.clone()),
            additional: i.additional.iter().map(|k| rules.corollary(*k).id.clone()).collect(),
        }));
        state
            .members
            .sort_by_key(|m| std::cmp::Reverse(m.constraint.weight()));
        state
    }

    pub fn flags(&self) -> ConstraintFlags {
        self.members.iter().fold(ConstraintFlags::EMPTY, |f, m| f.with(m.constraint))
    }

    fn with_provenance(&self, p: Provenance) -> ConstraintFlags {
        self.members
            .iter()
            .filter(|m| m.provenance == p)
            .fold(ConstraintFlags::EMPTY, |f, m| f.with(m.constraint))
    }

    pub fn asserted_flags(&self) -> ConstraintFlags {
        self.with_provenance(Provenance::Asserted)
    }

    pub fn implied_flags(&self) -> ConstraintFlags {
        self.with_provenance(Provenance::Implied)
    }

    pub fn member(&self, c: ConstraintType) -> Option<&Member> {
        self.members.iter().find(|m| m.constraint == c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Accepted,
    Unchanged,
    RejectedIncoherent,
    RejectedTrivial,
    RejectedUnity,
    RejectedUnsatisfied,
    RejectedRedundantRemoval,
}

impl Status {
    pub fn is_rejection(self) -> bool {
        !matches!(self, Status::Accepted | Status::Unchanged)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanAction {
    InstallCheck,
    RemoveCheck,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub constraint: ConstraintType,
    pub action: PlanAction,
}

/// Enforcement code to install or remove for one mapping.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EnforcementPlan {
    pub mapping: String,
    pub steps: Vec<PlanStep>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub advisories: Vec<String>,
}

impl EnforcementPlan {
    /// Checks to install for members that became asserted, and to remove for
    /// members that stopped being asserted. System constraints need no code.
    pub fn between(mapping: &str, before: &ConstraintState, after: &ConstraintState) -> Self {
        let (old, new) = (before.asserted_flags(), after.asserted_flags());
        let steps = new
            .difference(old)
            .iter_canonical()
            .map(|c| (c, PlanAction::InstallCheck))
            .chain(old.difference(new).iter_canonical().map(|c| (c, PlanAction::RemoveCheck)))
            .filter(|(c, _)| !c.is_system())
            .map(|(constraint, action)| PlanStep { constraint, action })
            .collect();
        EnforcementPlan {
            mapping: mapping.to_string(),
            steps,
            advisories: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty() && self.advisories.is_empty()
    }
}

/// Work done by one single-mapping request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WorkStats {
    pub lookups: u32,
    pub closures: u32,
    pub instance_scans: u32,
}

pub const UNCHECKED_NOTE: &str = "unchecked against data";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub mapping: String,
    pub constraint: Option<ConstraintType>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub message: String,
    /// Label of the corollary behind a rejection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub state: ConstraintState,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plans: Vec<EnforcementPlan>,
    pub work: WorkStats,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Outcome {
    fn new(mapping: &str, c: Option<ConstraintType>, status: Status, state: ConstraintState) -> Self {
        Outcome {
            mapping: mapping.to_string(),
            constraint: c,
            status,
            message: String::new(),
            note: None,
            state,
            plans: Vec::new(),
            work: WorkStats::default(),
            notes: Vec::new(),
        }
    }

    fn rejected(
        mapping: &str,
        c: ConstraintType,
        status: Status,
        state: &ConstraintState,
        message: String,
        note: Option<String>,
    ) -> Self {
        Outcome {
            message,
            note,
            ..Outcome::new(mapping, Some(c), status, state.clone())
        }
    }
}

pub fn incoherent_message(c: ConstraintType, label: &str, f: &str) -> String {
    format!(
        "{} cannot be added, as, according to {label}, the constraint set of {f} would become incoherent!",
        c.display_name()
    )
}

pub fn trivial_message(c: ConstraintType, f: &str) -> String {
    format!(
        "{} cannot be added, as the constraint set of {f} would become incoherent!",
        c.display_name()
    )
}

pub fn unity_message(c: ConstraintType, label: &str, f: &str) -> String {
    format!(
        "{} cannot be added, as, according to {label}, {f} would become a unity mapping!",
        c.display_name()
    )
}

pub fn unsatisfied_message(c: ConstraintType, f: &str) -> String {
    format!(
        "{} cannot be added to the constraint set of {f} , as its current instance does not satisfy it!",
        c.display_name()
    )
}

pub fn redundant_removal_message(c: ConstraintType, label: &str) -> String {
    format!(
        "{} cannot be removed as it is implied by other constraints, according to {label}",
        c.display_name()
    )
}

pub fn incoherent_removal_message(c: ConstraintType, label: &str, f: &str) -> String {
    format!(
        "{} cannot be removed, as, according to {label}, the constraint set of {f} would become incoherent!",
        c.display_name()
    )
}

fn label_of(rules: &RuleSet, id: &str) -> String {
    rules
        .key_of(id)
        .map(|k| rules.corollary(k).label())
        .unwrap_or_else(|| id.to_string())
}

/// Whether the instance satisfies `c` once the set is `flags`. Adding
/// totality switches null-capable members to their plain reading, so those
/// are rechecked too.
fn instance_satisfies(instance: &MappingInstance, c: ConstraintType, flags: ConstraintFlags) -> bool {
    let total = flags.contains(Total);
    let mut todo = vec![c];
    if c == Total {
        todo.extend(flags.iter().filter(|x| x.has_null_variant()));
    }
    todo.into_iter()
        .all(|x| semantics::check_constraint(instance, x, variant_for(x, total)).unwrap_or(false))
}

/// Adds `c` to one mapping's set, consulting the generated tables.
pub fn add_constraint(
    cat: &RuleCatalog,
    state: &ConstraintState,
    name: &str,
    compound: Compoundness,
    c: ConstraintType,
    instance: Option<&MappingInstance>,
) -> Result<Outcome> {
    if c.is_system() {
        return Err(EnforcementError::SystemConstraint(c));
    }
    let rules = cat.rules();
    let id = state.mapping.as_str();
    if state.flags().contains(c) {
        return Err(EnforcementError::AlreadyMember(c, name.to_string()));
    }
    let new = state.flags().with(c);
    let mut work = WorkStats {
        lookups: 1,
        ..WorkStats::default()
    };
    let verdict = cat.lookup(encode(new), compound);
    let mut out = match verdict {
        Verdict::TriviallyIncoherent { note } => Outcome::rejected(
            id,
            c,
            Status::RejectedTrivial,
            state,
            trivial_message(c, name),
            Some(rules.corollary(note).label()),
        ),
        Verdict::Incoherent { note } => {
            let label = rules.corollary(note).label();
            Outcome::rejected(id, c, Status::RejectedIncoherent, state, incoherent_message(c, &label, name), Some(label))
        }
        Verdict::Rejected { note } => {
            let label = rules.corollary(note).label();
            Outcome::rejected(id, c, Status::RejectedUnity, state, unity_message(c, &label, name), Some(label))
        }
        Verdict::Coherent { redundant } => {
            let satisfied = instance.map(|inst| {
                work.instance_scans += 1;
                instance_satisfies(inst, c, new)
            });
            if satisfied == Some(false) {
                Outcome::rejected(id, c, Status::RejectedUnsatisfied, state, unsatisfied_message(c, name), None)
            } else {
                work.closures += 1;
                let closure = rules.closure(new);
                let implied: ConstraintFlags = redundant.iter().fold(ConstraintFlags::EMPTY, |f, i| f.with(i.flag));
                let next = ConstraintState::build(id, rules, closure.difference(implied), &redundant);
                let mut out = Outcome::new(id, Some(c), Status::Accepted, next);
                out.plans = vec![EnforcementPlan::between(id, state, &out.state)];
                if satisfied.is_none() {
                    out.notes.push(UNCHECKED_NOTE.to_string());
                }
                out
            }
        }
    };
    out.work = work;
    Ok(out)
}

/// Removes `c` from one mapping's set. Implied members cannot be removed;
/// a removal that would leave an incoherent set is refused as well.
pub fn remove_constraint(
    cat: &RuleCatalog,
    state: &ConstraintState,
    name: &str,
    compound: Compoundness,
    c: ConstraintType,
) -> Result<Outcome> {
    if c.is_system() {
        return Err(EnforcementError::SystemConstraint(c));
    }
    let rules = cat.rules();
    let id = state.mapping.as_str();
    let Some(member) = state.member(c) else {
        return Err(EnforcementError::NotMember(c, name.to_string()));
    };
    if member.provenance == Provenance::Implied {
        let label = label_of(rules, member.note.as_deref().unwrap_or_default());
        return Ok(Outcome::rejected(
            id,
            c,
            Status::RejectedRedundantRemoval,
            state,
            redundant_removal_message(c, &label),
            Some(label),
        ));
    }
    let rest = state.asserted_flags().without(c);
    let mut work = WorkStats {
        lookups: 1,
        ..WorkStats::default()
    };
    let mut out = match cat.lookup(encode(rest), compound) {
        Verdict::Coherent { redundant } => {
            work.closures += 1;
            let closure = rules.closure(rest);
            let implied: ConstraintFlags = redundant.iter().fold(ConstraintFlags::EMPTY, |f, i| f.with(i.flag));
            let next = ConstraintState::build(id, rules, closure.difference(implied), &redundant);
            let mut out = Outcome::new(id, Some(c), Status::Accepted, next);
            out.plans = vec![EnforcementPlan::between(id, state, &out.state)];
            out
        }
        verdict => {
            let label = rules.corollary(verdict.note().expect("rejections carry notes")).label();
            let status = match verdict {
                Verdict::TriviallyIncoherent { .. } => Status::RejectedTrivial,
                _ => Status::RejectedIncoherent,
            };
            Outcome::rejected(id, c, status, state, incoherent_removal_message(c, &label, name), Some(label))
        }
    };
    out.work = work;
    Ok(out)
}

/// A derived flag set that some mapping of a component cannot accept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conflict {
    pub mapping: String,
    pub status: Status,
    pub corollary: String,
}

const CROSS_ALL_UK: &str = "A.6.1.2 (ii)";
const CROSS_INNER_UK: &str = "A.6.1.2 (iv)";
const CROSS_OUTER_UK: &str = "A.6.1.2 (vi)";
const CROSS_ALL_OT: &str = "A.6.1.2 (vii)";
const CROSS_OUTER_OT: &str = "A.6.1.2 (viii)";
const CROSS_INNER_OT: &str = "A.6.1.2 (ix)";
const CROSS_R_OUTER_OT: &str = "A.6.1.2 (x)";
const CROSS_R_REVERSE_I: &str = "A.6.1.2 (xi)";
const CROSS_I_REVERSE_R: &str = "A.6.1.2 (xii)";
const CROSS_MIDDLE_OT: &str = "A.6.1.3";

/// A component of mappings linked by composition, with fixed system members.
struct Component<'a> {
    meta: &'a Metacatalog,
    rules: &'a RuleSet,
    /// Compounds first, then atomic mappings, each by id.
    order: Vec<String>,
    compounds: Vec<&'a MappingDescriptor>,
    fixed: BTreeSet<String>,
}

type Known = BTreeMap<String, ConstraintFlags>;
type Notes = BTreeMap<(String, ConstraintType), CorKey>;

fn is_fixed(m: &MappingDescriptor) -> bool {
    m.is_unity() || m.system.canonical_injection
}

impl<'a> Component<'a> {
    fn new(meta: &'a Metacatalog, rules: &'a RuleSet, ids: &BTreeSet<String>) -> Self {
        let ms: Vec<&MappingDescriptor> = ids.iter().filter_map(|id| meta.mappings.get(id)).collect();
        let compounds: Vec<_> = ms.iter().copied().filter(|m| m.is_compound).collect();
        let order = compounds
            .iter()
            .chain(ms.iter().filter(|m| !m.is_compound))
            .map(|m| m.id.clone())
            .collect();
        let fixed = ms.iter().filter(|m| is_fixed(m)).map(|m| m.id.clone()).collect();
        Component {
            meta,
            rules,
            order,
            compounds,
            fixed,
        }
    }

    fn reverse_of(&self, cm: &MappingDescriptor) -> Option<&'a MappingDescriptor> {
        self.compounds
            .iter()
            .copied()
            .find(|r| r.members.len() == 2 && r.members[0] == cm.members[1] && r.members[1] == cm.members[0])
    }

    /// Consequents of the composition rules for one compound.
    fn cross(&self, cm: &MappingDescriptor, k: &Known) -> Vec<(String, ConstraintType, &'static str)> {
        let f = |id: &str| k.get(id).copied().unwrap_or_default();
        let ms = &cm.members;
        let n = ms.len();
        let (inner, outer) = (&ms[0], &ms[n - 1]);
        let me = f(&cm.id);
        let all = |c| ms.iter().all(|m| f(m).contains(c));
        let mut out = Vec::new();
        let mut push = |id: &str, c, cor| out.push((id.to_string(), c, cor));
        if all(OneToOne) {
            push(&cm.id, OneToOne, CROSS_ALL_UK);
        }
        if me.contains(OneToOne) {
            push(inner, OneToOne, CROSS_INNER_UK);
            if n == 2 && f(inner).contains(Onto) {
                push(outer, OneToOne, CROSS_OUTER_UK);
            }
        }
        if all(Onto) {
            push(&cm.id, Onto, CROSS_ALL_OT);
        }
        if me.contains(Onto) {
            push(outer, Onto, CROSS_OUTER_OT);
            if f(outer).contains(OneToOne) {
                match n {
                    2 => push(inner, Onto, CROSS_INNER_OT),
                    3 => push(&ms[1], Onto, CROSS_MIDDLE_OT),
                    _ => {}
                }
            }
        }
        if n == 2 && me.contains_all(ConstraintFlags::of(&[SelfMap, Total, Reflexive])) {
            push(outer, Onto, CROSS_R_OUTER_OT);
            if let Some(r) = self.reverse_of(cm) {
                push(&r.id, Idempotent, CROSS_R_REVERSE_I);
            }
        }
        if n == 2 && me.contains_all(ConstraintFlags::of(&[SelfMap, Total, Idempotent])) {
            if let Some(r) = self.reverse_of(cm) {
                push(&r.id, Reflexive, CROSS_I_REVERSE_R);
            }
        }
        out
    }

    /// Least fixpoint of single-mapping and composition rules over the
    /// component, with the first rule to derive each flag.
    fn closure(&self, asserted: &Known) -> (Known, Notes) {
        let mut known = asserted.clone();
        let mut notes = Notes::new();
        loop {
            let mut changed = false;
            for id in &self.order {
                if self.fixed.contains(id) {
                    continue;
                }
                let flags = known.get_mut(id).expect("component member");
                let mut local = BTreeMap::new();
                while self.rules.chain_pass(flags, &mut local) {
                    changed = true;
                }
                for (c, k) in local {
                    notes.entry((id.clone(), c)).or_insert(k);
                }
            }
            for cm in &self.compounds {
                for (target, c, cor) in self.cross(cm, &known) {
                    if self.fixed.contains(&target) {
                        continue;
                    }
                    let flags = known.get_mut(&target).expect("component member");
                    if flags.insert(c) {
                        notes.insert((target, c), self.rules.key(cor));
                        changed = true;
                    }
                }
            }
            if !changed {
                return (known, notes);
            }
        }
    }

    fn conflict(&self, known: &Known) -> Option<Conflict> {
        let f = |id: &str| known.get(id).copied().unwrap_or_default();
        let incoherent = |mapping: &str, cor: &str| Conflict {
            mapping: mapping.to_string(),
            status: Status::RejectedIncoherent,
            corollary: cor.to_string(),
        };
        for cm in &self.compounds {
            let ms = &cm.members;
            let me = f(&cm.id);
            if me.contains(NonPrime) && ms.iter().all(|m| f(m).contains(OneToOne)) {
                return Some(incoherent(&cm.id, "A.6.1.2 (i)"));
            }
            if me.contains(OneToOne) && f(&ms[0]).contains(NonPrime) {
                return Some(incoherent(&ms[0], "A.6.1.2 (iii)"));
            }
            if ms.len() == 2 && me.contains(OneToOne) && f(&ms[0]).contains(Onto) && f(&ms[1]).contains(NonPrime) {
                return Some(incoherent(&ms[1], "A.6.1.2 (v)"));
            }
        }
        for id in &self.order {
            if self.fixed.contains(id) {
                continue;
            }
            let m = &self.meta.mappings[id];
            let verdict = self.rules.classify(f(id), m.compoundness());
            let status = match verdict {
                Verdict::Coherent { .. } => continue,
                Verdict::TriviallyIncoherent { .. } => Status::RejectedTrivial,
                Verdict::Incoherent { .. } => Status::RejectedIncoherent,
                Verdict::Rejected { .. } => Status::RejectedUnity,
            };
            let note = verdict.note().expect("non-coherent verdicts carry notes");
            return Some(Conflict {
                mapping: id.clone(),
                status,
                corollary: self.rules.corollary(note).id.clone(),
            });
        }
        None
    }

    fn advisories(&self, known: &Known) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for cm in &self.compounds {
            if cm.members.len() != 2 || !known[&cm.id].contains(OneToOne) {
                continue;
            }
            let (f, g) = (&self.meta.mappings[&cm.members[0]], &self.meta.mappings[&cm.members[1]]);
            let mut text = format!(
                "{} restricted to the image of {} must be one-to-one ({})",
                g.name, f.name, CROSS_INNER_UK
            );
            if let (Some(fi), Some(gi)) = (self.meta.instances.get(&f.id), self.meta.instances.get(&g.id)) {
                let ok = semantics::restrict(gi, &semantics::image(fi))
                    .map(|r| semantics::is_one_to_one(r.graph()))
                    .unwrap_or(false);
                if !ok {
                    text.push_str("; violated by the current instances");
                }
            } else {
                text.push_str("; unverifiable without instances");
            }
            out.entry(cm.id.clone()).or_default().push(text);
        }
        out
    }
}

/// Recomputes the states of every mapping linked to `seeds`: derives the
/// joint closure, rejects conflicting sets, then demotes asserted members
/// that the rest of the component already implies.
pub fn reconcile(meta: &mut Metacatalog, cat: &RuleCatalog, seeds: &[String]) -> Result<(), Conflict> {
    let rules = cat.rules();
    let mut ids = BTreeSet::new();
    for s in seeds {
        if meta.mappings.contains_key(s) && !ids.contains(s) {
            ids.extend(meta.component(s));
        }
    }
    let comp = Component::new(meta, rules, &ids);
    let mut asserted: Known = ids
        .iter()
        .map(|id| {
            let st = &meta.states[id];
            let flags = if comp.fixed.contains(id) {
                st.flags()
            } else {
                st.asserted_flags()
            };
            (id.clone(), flags)
        })
        .collect();
    let (known, _) = comp.closure(&asserted);
    if let Some(conflict) = comp.conflict(&known) {
        return Err(conflict);
    }
    for id in &comp.order {
        if comp.fixed.contains(id) {
            continue;
        }
        let a = asserted.get_mut(id).expect("component member");
        if known[id].contains_all(ConstraintFlags::of(&[SelfMap, Total])) && a.intersects(ConstraintFlags::of(&[Onto, Bijective])) {
            a.insert(OneToOne);
        }
    }
    for id in comp.order.clone() {
        if comp.fixed.contains(&id) {
            continue;
        }
        for c in RuleSet::drop_order(known[&id]) {
            if c.is_system() || !asserted[&id].contains(c) {
                continue;
            }
            let mut trial = asserted.clone();
            trial.get_mut(&id).expect("component member").remove(c);
            if comp.closure(&trial).0[&id].contains(c) {
                asserted = trial;
            }
        }
    }
    let (known, notes) = comp.closure(&asserted);
    let advisories = comp.advisories(&known);
    let mut states = Vec::new();
    for id in &comp.order {
        if comp.fixed.contains(id) {
            continue;
        }
        let closure = known[id];
        let implied: Vec<Implied> = closure
            .difference(asserted[id])
            .iter_canonical()
            .map(|c| {
                let note = notes[&(id.clone(), c)];
                Implied {
                    flag: c,
                    note,
                    additional: rules.additional_notes(c, closure, note),
                }
            })
            .collect();
        states.push(ConstraintState::build(id, rules, asserted[id], &implied));
    }
    drop(comp);
    for st in states {
        meta.states.insert(st.mapping.clone(), st);
    }
    for (id, adv) in advisories {
        meta.advisories.insert(id, adv);
    }
    Ok(())
}

/// Re-derives every state linked to `changed` through compositions and
/// returns outcomes for the mappings whose sets changed. Nothing is modified
/// when a conflict is found.
pub fn propagate_composition(meta: &mut Metacatalog, cat: &RuleCatalog, changed: &str) -> Result<Vec<Outcome>> {
    meta.mapping(changed)?;
    let mut next = meta.clone();
    reconcile(&mut next, cat, &[changed.to_string()]).map_err(|c| conflict_error(cat, &next, &c))?;
    let out = changes(meta, &next, None);
    *meta = next;
    Ok(out)
}

fn conflict_error(cat: &RuleCatalog, meta: &Metacatalog, c: &Conflict) -> EnforcementError {
    let name = meta.mappings.get(&c.mapping).map_or(c.mapping.as_str(), |m| m.name.as_str());
    EnforcementError::Conflict(format!(
        "the constraint set of {name} would become incoherent, according to {}",
        label_of(cat.rules(), &c.corollary)
    ))
}

/// Outcomes for mappings whose state differs between two snapshots.
fn changes(before: &Metacatalog, after: &Metacatalog, skip: Option<&str>) -> Vec<Outcome> {
    after
        .states
        .iter()
        .filter(|(id, _)| Some(id.as_str()) != skip)
        .filter_map(|(id, st)| {
            let old = before.states.get(id)?;
            if old == st {
                return None;
            }
            let mut o = Outcome::new(id, None, Status::Accepted, st.clone());
            let mut plan = EnforcementPlan::between(id, old, st);
            plan.advisories = after.advisories.get(id).cloned().unwrap_or_default();
            o.plans = vec![plan];
            Some(o)
        })
        .collect()
}

/// Result of a toggle on a stored mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToggleReport {
    pub outcome: Outcome,
    /// Other mappings whose sets changed through composition links.
    pub propagated: Vec<Outcome>,
}

/// Turns constraint `c` of a stored mapping on or off. The metacatalog is
/// only modified when the whole change, propagation included, is accepted.
pub fn toggle(meta: &mut Metacatalog, cat: &RuleCatalog, mapping: &str, c: ConstraintType, on: bool) -> Result<ToggleReport> {
    let m = meta.mapping(mapping)?.clone();
    if is_fixed(&m) {
        return Err(EnforcementError::ReadOnly(m.name));
    }
    if c.is_system() {
        return Err(EnforcementError::SystemConstraint(c));
    }
    let state = meta.state(mapping)?.clone();
    if state.flags().contains(c) == on {
        return Ok(ToggleReport {
            outcome: Outcome::new(mapping, Some(c), Status::Unchanged, state),
            propagated: Vec::new(),
        });
    }
    let instance = meta.effective_instance(mapping);
    let mut outcome = if on {
        add_constraint(cat, &state, &m.name, m.compoundness(), c, instance.as_ref())?
    } else {
        remove_constraint(cat, &state, &m.name, m.compoundness(), c)?
    };
    if outcome.status != Status::Accepted {
        return Ok(ToggleReport {
            outcome,
            propagated: Vec::new(),
        });
    }
    let mut next = meta.clone();
    next.states.insert(mapping.to_string(), outcome.state.clone());
    if next.component(mapping).len() > 1 {
        if let Err(conflict) = reconcile(&mut next, cat, &[mapping.to_string()]) {
            let rules = cat.rules();
            let label = label_of(rules, &conflict.corollary);
            let target = &meta.mappings[&conflict.mapping].name;
            let message = if on {
                if conflict.status == Status::RejectedUnity {
                    unity_message(c, &label, target)
                } else {
                    incoherent_message(c, &label, target)
                }
            } else {
                incoherent_removal_message(c, &label, target)
            };
            let mut rejected = Outcome::rejected(mapping, c, conflict.status, &state, message, Some(label));
            rejected.work = outcome.work;
            return Ok(ToggleReport {
                outcome: rejected,
                propagated: Vec::new(),
            });
        }
        outcome.state = next.states[mapping].clone();
        let mut plan = EnforcementPlan::between(mapping, &state, &outcome.state);
        plan.advisories = next.advisories.get(mapping).cloned().unwrap_or_default();
        outcome.plans = vec![plan];
    }
    let propagated = changes(meta, &next, Some(mapping));
    *meta = next;
    Ok(ToggleReport { outcome, propagated })
}

/// Deletes a mapping. Compounds listing it lose that member and are
/// deleted when what remains no longer composes to the same ends.
pub fn delete_mapping(meta: &mut Metacatalog, cat: &RuleCatalog, mapping: &str) -> Result<Vec<Outcome>> {
    let m = meta.mapping(mapping)?.clone();
    if m.is_unity() {
        return Err(EnforcementError::ReadOnly(m.name));
    }
    let mut next = meta.clone();
    let affected: Vec<String> = next.component(mapping).into_iter().filter(|id| id != mapping).collect();
    for cm in next.compounds_of(mapping).into_iter().map(|c| c.id.clone()).collect::<Vec<_>>() {
        drop_member(&mut next, &cm, mapping);
    }
    next.mappings.remove(mapping);
    next.states.remove(mapping);
    next.instances.remove(mapping);
    next.advisories.remove(mapping);
    finish_structural(meta, next, cat, &affected)
}

/// Removes `member` from the composition of `compound`.
pub fn remove_member(meta: &mut Metacatalog, cat: &RuleCatalog, compound: &str, member: &str) -> Result<Vec<Outcome>> {
    let cm = meta.mapping(compound)?;
    if !cm.members.iter().any(|m| m == member) {
        return Err(StoreError::NotFound {
            kind: "member",
            id: member.to_string(),
        }
        .into());
    }
    let mut next = meta.clone();
    let affected: Vec<String> = next.component(compound).into_iter().collect();
    drop_member(&mut next, compound, member);
    finish_structural(meta, next, cat, &affected)
}

fn drop_member(meta: &mut Metacatalog, compound: &str, member: &str) {
    let cm = meta.mappings[compound].clone();
    let rest: Vec<String> = cm.members.iter().filter(|m| *m != member).cloned().collect();
    let keeps = rest.len() >= 2
        && rest.windows(2).all(|w| meta.is_subset(&meta.mappings[&w[0]].codomain, &meta.mappings[&w[1]].domain))
        && meta.mappings[&rest[0]].domain == cm.domain
        && meta.mappings[&rest[rest.len() - 1]].codomain == cm.codomain;
    if keeps {
        meta.mappings.get_mut(compound).expect("compound").members = rest;
    } else {
        meta.mappings.remove(compound);
        meta.states.remove(compound);
        meta.instances.remove(compound);
        meta.advisories.remove(compound);
    }
}

fn finish_structural(meta: &mut Metacatalog, mut next: Metacatalog, cat: &RuleCatalog, affected: &[String]) -> Result<Vec<Outcome>> {
    for id in affected {
        next.advisories.remove(id);
    }
    reconcile(&mut next, cat, affected).map_err(|c| conflict_error(cat, &next, &c))?;
    next.validate()?;
    let out = changes(meta, &next, None);
    *meta = next;
    Ok(out)
}

/// Changes the superset of a set, then retypes every mapping whose
/// self-map status flips.
pub fn set_subset_of(meta: &mut Metacatalog, cat: &RuleCatalog, set: &str, parent: Option<&str>) -> Result<Vec<Outcome>> {
    meta.set(set)?;
    if let Some(p) = parent {
        meta.set(p)?;
        if meta.is_subset(p, set) {
            return Err(StoreError::Integrity(format!("`{set}` cannot be a subset of its own subset `{p}`")).into());
        }
    }
    let mut next = meta.clone();
    next.sets.get_mut(set).expect("set").subset_of = parent.map(str::to_string);
    let ids: Vec<String> = next.mappings.keys().cloned().collect();
    let seeds = retype(&mut next, cat, &ids)?;
    finish_structural(meta, next, cat, &seeds)
}

/// Recomputes the self-map status of one mapping from its current domain,
/// codomain and set inclusions, and reconciles its constraint set.
pub fn retype_mapping(meta: &mut Metacatalog, cat: &RuleCatalog, mapping: &str) -> Result<Vec<Outcome>> {
    meta.mapping(mapping)?;
    let mut next = meta.clone();
    let seeds = retype(&mut next, cat, &[mapping.to_string()])?;
    finish_structural(meta, next, cat, &seeds)
}

/// Mappings gaining self-map status get the self-map constraint; those
/// losing it drop it together with every dyadic constraint.
fn retype(next: &mut Metacatalog, cat: &RuleCatalog, ids: &[String]) -> Result<Vec<String>> {
    let rules = cat.rules();
    let mut seeds = Vec::new();
    for id in ids {
        let m = &next.mappings[id];
        let now = next.derive_self_map(&m.domain, &m.codomain);
        if now == m.is_self_map || is_fixed(m) {
            continue;
        }
        let name = m.name.clone();
        let compound = m.compoundness();
        let asserted = next.states[id].asserted_flags();
        let flags = if now {
            asserted.with(SelfMap)
        } else {
            asserted.difference(ConstraintFlags::of(&ConstraintType::DYADIC)).without(SelfMap)
        };
        match rules.classify(flags, compound) {
            Verdict::Coherent { .. } => {}
            v => {
                let label = rules.corollary(v.note().expect("note")).label();
                return Err(EnforcementError::Conflict(format!(
                    "the constraint set of {name} would become incoherent, according to {label}"
                )));
            }
        }
        let min = rules.minimize(flags);
        next.states.insert(id.clone(), ConstraintState::build(id, rules, min.basis, &min.implied));
        next.mappings.get_mut(id).expect("mapping").is_self_map = now;
        seeds.push(id.clone());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog_store::{MappingKind, SetType};
    use crate::rule_catalog::generate_catalog;
    use std::sync::OnceLock;

    fn cat() -> &'static RuleCatalog {
        static CAT: OnceLock<RuleCatalog> = OnceLock::new();
        CAT.get_or_init(generate_catalog)
    }

    fn fl(t: &[ConstraintType]) -> ConstraintFlags {
        ConstraintFlags::of(t)
    }

    fn add(state: &ConstraintState, c: ConstraintType) -> Outcome {
        add_constraint(cat(), state, "f", Compoundness::Single, c, None).unwrap()
    }

    #[test]
    fn uk_after_total() {
        let st = ConstraintState::asserted("f", fl(&[SelfMap, Total]));
        let out = add(&st, OneToOne);
        assert_eq!(out.status, Status::Accepted);
        assert_eq!(out.state.asserted_flags(), fl(&[SelfMap, Total, OneToOne]));
        assert_eq!(out.state.implied_flags(), fl(&[Onto, Bijective]));
        assert_eq!(out.work, WorkStats { lookups: 1, closures: 1, instance_scans: 0 });
        assert_eq!(out.notes, vec![UNCHECKED_NOTE.to_string()]);
        assert_eq!(out.plans[0].steps, vec![PlanStep { constraint: OneToOne, action: PlanAction::InstallCheck }]);
    }

    #[test]
    fn onto_is_traded_for_one_to_one() {
        let st = ConstraintState::asserted("f", fl(&[SelfMap, Total]));
        let out = add(&st, Onto);
        assert_eq!(out.state.asserted_flags(), fl(&[SelfMap, Total, OneToOne]));
        assert_eq!(out.state.member(Onto).unwrap().provenance, Provenance::Implied);
    }

    #[test]
    fn rejections_have_verbatim_messages() {
        let st = ConstraintState::asserted("f", fl(&[SelfMap, Total, Onto]));
        let out = add(&st, NonPrime);
        assert_eq!(out.status, Status::RejectedIncoherent);
        assert_eq!(
            out.message,
            "Non-prime cannot be added, as, according to A.6.1.1 (viii). non-prime ^ total ^ onto ^ self-map, the constraint set of f would become incoherent!"
        );
        assert_eq!(out.state, st);

        let st = ConstraintState::asserted("f", fl(&[SelfMap, Total]));
        let out = add(&st, DefaultValue);
        assert_eq!(out.status, Status::RejectedTrivial);
        assert_eq!(out.message, "Default value cannot be added, as the constraint set of f would become incoherent!");

        let out = add(&st, Reflexive);
        assert_eq!(out.status, Status::RejectedUnity);
        assert!(out.message.ends_with("f would become a unity mapping!"), "{}", out.message);
        let out = add_constraint(cat(), &st, "f", Compoundness::Compound, Reflexive, None).unwrap();
        assert_eq!(out.status, Status::Accepted);
    }

    #[test]
    fn unsatisfied_instance() {
        let st = ConstraintState::asserted("f", fl(&[SelfMap]));
        let inst = semantics::parse_inline("1>2,2>2,3>1").unwrap();
        let out = add_constraint(cat(), &st, "f", Compoundness::Single, OneToOne, Some(&inst)).unwrap();
        assert_eq!(out.status, Status::RejectedUnsatisfied);
        assert_eq!(
            out.message,
            "One-to-one cannot be added to the constraint set of f , as its current instance does not satisfy it!"
        );
        assert_eq!(out.work.instance_scans, 1);
        let out = add_constraint(cat(), &st, "f", Compoundness::Single, Total, Some(&inst)).unwrap();
        assert_eq!(out.status, Status::Accepted);
        assert!(out.notes.is_empty());
    }

    #[test]
    fn implied_member_cannot_be_removed() {
        let st = ConstraintState::asserted("f", fl(&[SelfMap, Total]));
        let st = add(&st, OneToOne).state;
        let out = remove_constraint(cat(), &st, "f", Compoundness::Single, Onto).unwrap();
        assert_eq!(out.status, Status::RejectedRedundantRemoval);
        assert_eq!(
            out.message,
            "Onto cannot be removed as it is implied by other constraints, according to A.6.1.4 (i). self-map ^ total ^ onto <=> self-map ^ total ^ one-to-one"
        );
        let out = remove_constraint(cat(), &st, "f", Compoundness::Single, OneToOne).unwrap();
        assert_eq!(out.status, Status::Accepted);
        assert_eq!(out.state, ConstraintState::asserted("f", fl(&[SelfMap, Total])));
    }

    #[test]
    fn removal_into_incoherence_is_refused() {
        let st = ConstraintState::asserted("f", fl(&[SelfMap, Total, Reflexive, NonPrime]));
        let out = remove_constraint(cat(), &st, "f", Compoundness::Compound, Total).unwrap();
        assert_eq!(out.status, Status::RejectedIncoherent);
    }

    #[test]
    fn toggles_on_unity_are_refused() {
        let mut meta = Metacatalog::new("t", "t").unwrap();
        meta.register_set("S", SetType::Entity).unwrap();
        let unity = meta.mapping_by_name("1_S").unwrap().id.clone();
        assert!(matches!(
            toggle(&mut meta, cat(), &unity, Acyclic, true),
            Err(EnforcementError::ReadOnly(_))
        ));
    }

    #[test]
    fn compound_propagation() {
        let mut meta = Metacatalog::new("t", "t").unwrap();
        let a = meta.register_set("A", SetType::Entity).unwrap().id;
        let b = meta.register_set("B", SetType::Entity).unwrap().id;
        let c = meta.register_set("C", SetType::Entity).unwrap().id;
        let h = meta.register_mapping("h", &a, &b, MappingKind::Plain).unwrap().id;
        let g = meta.register_mapping("g", &b, &c, MappingKind::Plain).unwrap().id;
        let f = meta.register_compound("f", &[h.clone(), g.clone()]).unwrap().id;
        toggle(&mut meta, cat(), &g, OneToOne, true).unwrap();
        toggle(&mut meta, cat(), &h, Onto, true).unwrap();
        let r = toggle(&mut meta, cat(), &f, OneToOne, true).unwrap();
        assert_eq!(r.outcome.status, Status::Accepted);
        let g_state = meta.state(&g).unwrap();
        assert_eq!(g_state.member(OneToOne).unwrap().provenance, Provenance::Implied);
        assert_eq!(g_state.member(OneToOne).unwrap().note.as_deref(), Some(CROSS_OUTER_UK));
        assert!(r.propagated.iter().any(|o| o.mapping == g
            && o.plans[0].steps == vec![PlanStep { constraint: OneToOne, action: PlanAction::RemoveCheck }]));
        meta.validate().unwrap();
    }
}
