//! Corollary records, the single-mapping rule set, and the generated
//! coherence / redundancy / rejection tables keyed by combination code.
//!
//! Rules are bitmask patterns over a flag set. Redundancy rules form a Horn
//! system whose least fixpoint is the *closure* of a set; a *basis* is an
//! irredundant subset with the same closure. Incoherence is decided on the
//! set itself and then on its closure, so a set whose implications collide
//! with an incoherence pattern is incoherent too.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint_model::{
    decode, encode, CombinationCode, ConstraintFlags, ConstraintType, MAX_CODE,
};

use ConstraintType::*;

/// Surrogate key of a corollary record.
pub type CorKey = u32;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("constraint set {flags} is not coherent: {reason}")]
    NotCoherent { flags: String, reason: String },
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("json export failed: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorollaryKind {
    Incoherence,
    Redundancy,
    Rejection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorollaryRecord {
    pub key: CorKey,
    pub id: String,
    pub kind: CorollaryKind,
    pub description: String,
    pub section: String,
}

impl CorollaryRecord {
    /// `"<id>. <description>"`, the form shown in notes and messages.
    pub fn label(&self) -> String {
        format!("{}. {}", self.id, self.description)
    }
}

/// Whether a mapping is atomic or a composition of several.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compoundness {
    Single,
    Compound,
}

/// Conjunction of `all`, absence of every flag in `none`, and, when either
/// disjunct list is nonempty, at least one flag of `any_of` present or one
/// flag of `any_absent` missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pattern {
    pub all: ConstraintFlags,
    pub none: ConstraintFlags,
    pub any_of: ConstraintFlags,
    pub any_absent: ConstraintFlags,
}

impl Pattern {
    pub fn matches(&self, f: ConstraintFlags) -> bool {
        let (f, all, none) = (f.bits(), self.all.bits(), self.none.bits());
        let (any_of, any_absent) = (self.any_of.bits(), self.any_absent.bits());
        f & all == all
            && f & none == 0
            && ((any_of == 0 && any_absent == 0)
                || f & any_of != 0
                || f & any_absent != any_absent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    /// Incoherence so obvious the combination is never stored.
    Trivial,
    Incoherence,
    Redundancy,
    Rejection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rule {
    pub corollary: CorKey,
    pub kind: RuleKind,
    pub when: Pattern,
    /// Consequents of a redundancy rule; empty otherwise.
    pub then: ConstraintFlags,
    /// Rejection applies to single (non-compound) mappings only.
    pub single_only: bool,
}

/// A flag derivable from the basis, with the rule that first derives it and
/// any other rules that also imply it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Implied {
    pub flag: ConstraintType,
    pub note: CorKey,
    pub additional: Vec<CorKey>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Minimal {
    pub basis: ConstraintFlags,
    pub closure: ConstraintFlags,
    pub implied: Vec<Implied>,
}

impl Minimal {
    pub fn implied_flags(&self) -> ConstraintFlags {
        self.closure.difference(self.basis)
    }

    pub fn note_for(&self, c: ConstraintType) -> Option<CorKey> {
        self.implied.iter().find(|i| i.flag == c).map(|i| i.note)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    TriviallyIncoherent { note: CorKey },
    Incoherent { note: CorKey },
    Rejected { note: CorKey },
    Coherent { redundant: Vec<Implied> },
}

impl Verdict {
    pub fn is_coherent(&self) -> bool {
        matches!(self, Verdict::Coherent { .. })
    }

    pub fn note(&self) -> Option<CorKey> {
        match self {
            Verdict::TriviallyIncoherent { note }
            | Verdict::Incoherent { note }
            | Verdict::Rejected { note } => Some(*note),
            Verdict::Coherent { .. } => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::TriviallyIncoherent { .. } => "trivially incoherent",
            Verdict::Incoherent { .. } => "incoherent",
            Verdict::Rejected { .. } => "rejected",
            Verdict::Coherent { .. } => "coherent",
        }
    }
}

fn fl(types: &[ConstraintType]) -> ConstraintFlags {
    ConstraintFlags::of(types)
}

/// The corollary records and single-mapping rules.
#[derive(Debug, Clone)]
pub struct RuleSet {
    corollaries: Vec<CorollaryRecord>,
    rules: Vec<Rule>,
    by_id: BTreeMap<String, CorKey>,
}

struct Builder {
    corollaries: Vec<CorollaryRecord>,
    rules: Vec<Rule>,
}

impl Builder {
    fn record(&mut self, id: &str, kind: CorollaryKind, description: &str) -> CorKey {
        let key = self.corollaries.len() as CorKey + 1;
        let section = id.splitn(4, '.').take(3).collect::<Vec<_>>().join(".");
        self.corollaries.push(CorollaryRecord {
            key,
            id: id.to_string(),
            kind,
            description: description.to_string(),
            section,
        });
        key
    }

    fn rule(&mut self, corollary: CorKey, kind: RuleKind, when: Pattern, then: ConstraintFlags) {
        self.rules.push(Rule {
            corollary,
            kind,
            when,
            then,
            single_only: false,
        });
    }

    fn trivial(&mut self, id: &str, description: &str, when: Pattern) {
        let k = self.record(id, CorollaryKind::Incoherence, description);
        self.rule(k, RuleKind::Trivial, when, ConstraintFlags::EMPTY);
    }

    fn incoherent(&mut self, id: &str, description: &str, when: &[Pattern]) {
        let k = self.record(id, CorollaryKind::Incoherence, description);
        for p in when {
            self.rule(k, RuleKind::Incoherence, *p, ConstraintFlags::EMPTY);
        }
    }

    fn redundant(&mut self, id: &str, description: &str, when: Pattern, then: &[ConstraintType]) {
        let k = self.record(id, CorollaryKind::Redundancy, description);
        self.rule(k, RuleKind::Redundancy, when, fl(then));
    }

    fn rejected(&mut self, id: &str, description: &str, all: &[ConstraintType], single_only: bool) {
        let k = self.record(id, CorollaryKind::Rejection, description);
        self.rules.push(Rule {
            corollary: k,
            kind: RuleKind::Rejection,
            when: all_of(all),
            then: ConstraintFlags::EMPTY,
            single_only,
        });
    }

    /// Records a corollary that only cross-mapping propagation uses.
    fn cross(&mut self, id: &str, kind: CorollaryKind, description: &str) {
        self.record(id, kind, description);
    }
}

fn all_of(types: &[ConstraintType]) -> Pattern {
    Pattern {
        all: fl(types),
        ..Pattern::default()
    }
}

fn all_none(all: &[ConstraintType], none: &[ConstraintType]) -> Pattern {
    Pattern {
        all: fl(all),
        none: fl(none),
        ..Pattern::default()
    }
}

fn all_any(all: &[ConstraintType], any_of: &[ConstraintType]) -> Pattern {
    Pattern {
        all: fl(all),
        any_of: fl(any_of),
        ..Pattern::default()
    }
}

impl RuleSet {
    /// The shared standard rule set.
    pub fn standard() -> &'static RuleSet {
        static RULES: OnceLock<RuleSet> = OnceLock::new();
        RULES.get_or_init(RuleSet::build)
    }

    fn build() -> RuleSet {
        use CorollaryKind as K;
        let mut b = Builder {
            corollaries: Vec::new(),
            rules: Vec::new(),
        };
        let dyadic = ConstraintFlags::of(&ConstraintType::DYADIC);

        b.trivial("A.6.1.1 (i)", "total ^ default", all_of(&[Total, DefaultValue]));
        b.trivial(
            "A.6.1.1 (ii)",
            "non-prime ^ (one-to-one v bijective)",
            all_any(&[NonPrime], &[OneToOne, Bijective]),
        );
        b.trivial(
            "A.6.1.1 (iii)",
            "canonical projection ^ (not total v non-prime)",
            Pattern {
                all: fl(&[CanonicalProjection]),
                any_of: fl(&[NonPrime]),
                any_absent: fl(&[Total]),
                ..Pattern::default()
            },
        );
        b.trivial(
            "A.6.1.1 (iv)",
            "not self-map ^ (reflexive v irreflexive v symmetric v asymmetric v idempotent v equivalence v acyclic v representative system mapping)",
            Pattern {
                none: fl(&[SelfMap]),
                any_of: dyadic,
                ..Pattern::default()
            },
        );
        b.trivial(
            "A.6.1.1 (v)",
            "canonical injection ^ (onto v not total v not one-to-one v not reflexive v not idempotent)",
            Pattern {
                all: fl(&[CanonicalInjection]),
                any_of: fl(&[Onto]),
                any_absent: fl(&[Total, OneToOne, Reflexive, Idempotent]),
                ..Pattern::default()
            },
        );
        b.trivial(
            "A.6.1.1 (vi)",
            "self-map ^ reflexive ^ irreflexive",
            all_of(&[SelfMap, Reflexive, Irreflexive]),
        );
        b.trivial(
            "A.6.1.1 (vii)",
            "self-map ^ symmetric ^ asymmetric",
            all_of(&[SelfMap, Symmetric, Asymmetric]),
        );
        b.incoherent(
            "A.6.1.1 (viii)",
            "non-prime ^ total ^ onto ^ self-map",
            &[all_of(&[SelfMap, Total, Onto, NonPrime])],
        );
        b.trivial(
            "A.6.1.1 (ix)",
            "self-map ^ canonical projection",
            all_of(&[SelfMap, CanonicalProjection]),
        );
        b.redundant(
            "A.6.1.1 (x)",
            "one-to-one ^ onto => bijective",
            all_of(&[OneToOne, Onto]),
            &[Bijective],
        );
        b.redundant(
            "A.6.1.1 (xi)",
            "bijective => one-to-one ^ onto",
            all_of(&[Bijective]),
            &[OneToOne, Onto],
        );
        b.redundant(
            "A.6.1.1 (xii)",
            "self-map ^ reflexive ^ symmetric ^ idempotent => equivalence",
            all_of(&[SelfMap, Reflexive, Symmetric, Idempotent]),
            &[Equivalence],
        );
        b.redundant(
            "A.6.1.1 (xiii)",
            "self-map ^ equivalence => reflexive ^ symmetric ^ idempotent",
            all_of(&[SelfMap, Equivalence]),
            &[Reflexive, Symmetric, Idempotent],
        );

        b.cross("A.6.1.2 (i)", K::Incoherence, "f one-to-one ^ g one-to-one ^ g o f non-prime");
        b.cross("A.6.1.2 (ii)", K::Redundancy, "f one-to-one ^ g one-to-one => g o f one-to-one");
        b.cross("A.6.1.2 (iii)", K::Incoherence, "g o f one-to-one ^ (f non-prime v g Im(f) non-prime)");
        b.cross("A.6.1.2 (iv)", K::Redundancy, "g o f one-to-one => f one-to-one ^ g Im(f) one-to-one");
        b.cross("A.6.1.2 (v)", K::Incoherence, "g o f one-to-one ^ f onto ^ g non-prime");
        b.cross("A.6.1.2 (vi)", K::Redundancy, "g o f one-to-one ^ f onto => g one-to-one");
        b.cross("A.6.1.2 (vii)", K::Redundancy, "f onto ^ g onto => g o f onto");
        b.cross("A.6.1.2 (viii)", K::Redundancy, "g o f onto => g onto");
        b.cross("A.6.1.2 (ix)", K::Redundancy, "g o f onto ^ g one-to-one => f onto");
        b.cross("A.6.1.2 (x)", K::Redundancy, "g o f reflexive ^ g o f self-map => g onto");
        b.cross(
            "A.6.1.2 (xi)",
            K::Redundancy,
            "g o f reflexive ^ g o f self-map => f o g idempotent ^ f o g self-map",
        );
        b.cross(
            "A.6.1.2 (xii)",
            K::Redundancy,
            "g o f idempotent ^ g o f self-map => f o g reflexive ^ f o g self-map",
        );
        b.cross("A.6.1.3", K::Redundancy, "h o g o f onto ^ h one-to-one => g onto");

        b.redundant(
            "A.6.1.4 (i)",
            "self-map ^ total ^ onto <=> self-map ^ total ^ one-to-one",
            all_of(&[SelfMap, Total, OneToOne]),
            &[Onto, Bijective],
        );
        b.redundant(
            "A.6.1.4 (ii)",
            "self-map ^ total ^ (onto v bijective) => self-map ^ total ^ one-to-one",
            all_any(&[SelfMap, Total], &[Onto, Bijective]),
            &[OneToOne, Onto, Bijective],
        );

        b.rejected("A.6.2.1 (i)", "self-map ^ total ^ equivalence", &[SelfMap, Total, Equivalence], false);
        b.rejected(
            "A.6.2.1 (ii)",
            "self-map ^ total ^ single ^ reflexive",
            &[SelfMap, Total, Reflexive],
            true,
        );
        b.rejected(
            "A.6.2.1 (iii)",
            "self-map ^ total ^ one-to-one ^ representative system mapping",
            &[SelfMap, Total, OneToOne, RepresentativeSystemMapping],
            false,
        );
        b.rejected(
            "A.6.2.1 (iv)",
            "self-map ^ total ^ symmetric ^ idempotent",
            &[SelfMap, Total, Symmetric, Idempotent],
            false,
        );
        b.incoherent(
            "A.6.2.1 (v)",
            "self-map ^ total ^ one-to-one ^ idempotent",
            &[all_of(&[SelfMap, Total, OneToOne, Idempotent])],
        );

        b.incoherent(
            "A.6.2.2 (i)",
            "self-map ^ asymmetric ^ reflexive",
            &[all_of(&[SelfMap, Asymmetric, Reflexive])],
        );
        b.redundant(
            "A.6.2.2 (ii)",
            "self-map ^ asymmetric => irreflexive",
            all_of(&[SelfMap, Asymmetric]),
            &[Irreflexive],
        );
        b.incoherent(
            "A.6.2.2 (iii)",
            "self-map ^ acyclic ^ ((total ^ idempotent) v symmetric v reflexive)",
            &[
                all_any(&[SelfMap, Acyclic], &[Symmetric, Reflexive]),
                all_of(&[SelfMap, Acyclic, Idempotent, Total]),
            ],
        );
        b.redundant(
            "A.6.2.2 (iv)",
            "self-map ^ acyclic => asymmetric ^ irreflexive",
            all_of(&[SelfMap, Acyclic]),
            &[Asymmetric, Irreflexive],
        );
        b.incoherent(
            "A.6.2.3 (i)",
            "self-map ^ irreflexive ^ idempotent ^ symmetric",
            &[all_of(&[SelfMap, Irreflexive, Idempotent, Symmetric])],
        );
        b.redundant(
            "A.6.2.3 (ii)",
            "self-map ^ irreflexive ^ idempotent => asymmetric",
            all_of(&[SelfMap, Irreflexive, Idempotent]),
            &[Asymmetric],
        );
        b.redundant(
            "A.6.2.4",
            "self-map ^ asymmetric ^ idempotent => acyclic",
            all_of(&[SelfMap, Asymmetric, Idempotent]),
            &[Acyclic],
        );
        b.redundant(
            "A.6.2.5",
            "self-map ^ representative system mapping => idempotent",
            all_of(&[SelfMap, RepresentativeSystemMapping]),
            &[Idempotent],
        );
        b.incoherent(
            "A.6.2.6 (i)",
            "self-map ^ not total ^ reflexive ^ non-prime",
            &[all_none(&[SelfMap, Reflexive, NonPrime], &[Total])],
        );
        b.redundant(
            "A.6.2.6 (ii)",
            "self-map ^ not total ^ reflexive => one-to-one",
            all_none(&[SelfMap, Reflexive], &[Total]),
            &[OneToOne],
        );
        b.incoherent(
            "A.6.2.6 (iii)",
            "self-map ^ not total ^ representative system mapping ^ one-to-one ^ irreflexive",
            &[all_none(
                &[SelfMap, RepresentativeSystemMapping, OneToOne, Irreflexive],
                &[Total],
            )],
        );
        b.redundant(
            "A.6.2.6 (iv)",
            "self-map ^ not total ^ representative system mapping ^ one-to-one => reflexive",
            all_none(&[SelfMap, RepresentativeSystemMapping, OneToOne], &[Total]),
            &[Reflexive],
        );
        b.incoherent(
            "A.6.2.6 (v)",
            "self-map ^ not total ^ symmetric ^ idempotent ^ irreflexive",
            &[all_none(&[SelfMap, Symmetric, Idempotent, Irreflexive], &[Total])],
        );
        b.redundant(
            "A.6.2.6 (vi)",
            "self-map ^ not total ^ symmetric ^ idempotent => reflexive",
            all_none(&[SelfMap, Symmetric, Idempotent], &[Total]),
            &[Reflexive],
        );

        let by_id = b
            .corollaries
            .iter()
            .map(|c| (c.id.clone(), c.key))
            .collect();
        RuleSet {
            corollaries: b.corollaries,
            rules: b.rules,
            by_id,
        }
    }

    pub fn corollaries(&self) -> &[CorollaryRecord] {
        &self.corollaries
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn corollary(&self, key: CorKey) -> &CorollaryRecord {
        &self.corollaries[key as usize - 1]
    }

    pub fn key_of(&self, id: &str) -> Option<CorKey> {
        self.by_id.get(id).copied()
    }

    /// Looks a corollary up by id; panics on unknown ids. Meant for ids fixed
    /// in the engine itself.
    pub fn key(&self, id: &str) -> CorKey {
        self.key_of(id)
            .unwrap_or_else(|| panic!("no corollary with id `{id}`"))
    }

    fn of_kind(&self, kind: RuleKind) -> impl Iterator<Item = &Rule> + '_ {
        self.rules.iter().filter(move |r| r.kind == kind)
    }

    /// First trivial-incoherence rule matching `flags`.
    pub fn trivial_note(&self, flags: ConstraintFlags) -> Option<CorKey> {
        self.of_kind(RuleKind::Trivial)
            .find(|r| r.when.matches(flags))
            .map(|r| r.corollary)
    }

    /// Least fixpoint of the redundancy rules.
    pub fn closure(&self, flags: ConstraintFlags) -> ConstraintFlags {
        let mut known = flags;
        loop {
            let before = known;
            for r in self.of_kind(RuleKind::Redundancy) {
                if r.when.matches(known) {
                    known = known.union(r.then);
                }
            }
            if known == before {
                return known;
            }
        }
    }

    /// Incoherence note for a stored (non-trivial) combination: a direct
    /// incoherence rule on the set itself, otherwise any incoherence pattern
    /// hit by its closure.
    pub fn incoherence_note(&self, flags: ConstraintFlags, closure: ConstraintFlags) -> Option<CorKey> {
        self.of_kind(RuleKind::Incoherence)
            .find(|r| r.when.matches(flags))
            .or_else(|| {
                self.rules
                    .iter()
                    .filter(|r| matches!(r.kind, RuleKind::Trivial | RuleKind::Incoherence))
                    .find(|r| r.when.matches(closure))
            })
            .map(|r| r.corollary)
    }

    /// Rejection notes matching `closure`: the first one that applies to
    /// any mapping, and the first that applies to single mappings only.
    pub fn rejection_notes(&self, closure: ConstraintFlags) -> (Option<CorKey>, Option<CorKey>) {
        let mut any = None;
        let mut single = None;
        for r in self.of_kind(RuleKind::Rejection) {
            if r.when.matches(closure) {
                let slot = if r.single_only { &mut single } else { &mut any };
                slot.get_or_insert(r.corollary);
            }
        }
        (any, single)
    }

    /// Order in which redundant members are dropped when minimizing.
    pub fn drop_order(closure: ConstraintFlags) -> Vec<ConstraintType> {
        let mut order = vec![
            Reflexive,
            Symmetric,
            Idempotent,
            OneToOne,
            Onto,
            Acyclic,
            Asymmetric,
            Irreflexive,
            RepresentativeSystemMapping,
            Bijective,
            Equivalence,
            Total,
            DefaultValue,
            NonPrime,
            SelfMap,
            CanonicalProjection,
            CanonicalInjection,
        ];
        // A total self-map keeps one-to-one, the constraint a DBMS enforces
        // natively, in favour of onto and bijective.
        if closure.contains_all(fl(&[SelfMap, Total])) {
            order.retain(|c| !matches!(c, Bijective | Onto));
            order.splice(0..0, [Bijective, Onto]);
        }
        order
    }

    /// Irredundant subset of `flags` (plus one-to-one when a total self-map
    /// is onto or bijective) with the same closure.
    pub fn basis(&self, flags: ConstraintFlags, closure: ConstraintFlags) -> ConstraintFlags {
        let mut basis = flags;
        if closure.contains_all(fl(&[SelfMap, Total])) && closure.intersects(fl(&[Onto, Bijective])) {
            basis.insert(OneToOne);
        }
        for c in Self::drop_order(closure) {
            if basis.contains(c) {
                let rest = basis.without(c);
                if self.closure(rest).contains(c) {
                    basis = rest;
                }
            }
        }
        basis
    }

    /// One pass of the redundancy rules over `known`, in ledger order. The
    /// first rule to derive a flag is recorded in `notes`. Returns whether
    /// anything was derived.
    pub fn chain_pass(&self, known: &mut ConstraintFlags, notes: &mut BTreeMap<ConstraintType, CorKey>) -> bool {
        let before = *known;
        for r in self.of_kind(RuleKind::Redundancy) {
            if r.when.matches(*known) {
                for c in r.then.difference(*known).iter() {
                    notes.entry(c).or_insert(r.corollary);
                }
                *known = known.union(r.then);
            }
        }
        *known != before
    }

    /// Redundancy rules other than `primary` that also derive `c` from the
    /// rest of `closure`.
    pub fn additional_notes(&self, c: ConstraintType, closure: ConstraintFlags, primary: CorKey) -> Vec<CorKey> {
        let mut additional: Vec<CorKey> = self
            .of_kind(RuleKind::Redundancy)
            .filter(|r| r.corollary != primary && r.then.contains(c) && r.when.matches(closure.without(c)))
            .map(|r| r.corollary)
            .collect();
        additional.dedup();
        additional
    }

    /// Notes for every implied flag: forward chaining from the basis, rules
    /// in ledger order, the first rule to derive a flag gives its note.
    pub fn implied_notes(&self, basis: ConstraintFlags, closure: ConstraintFlags) -> Vec<Implied> {
        let mut known = basis;
        let mut primary: BTreeMap<ConstraintType, CorKey> = BTreeMap::new();
        while self.chain_pass(&mut known, &mut primary) {}
        debug_assert_eq!(known, closure);
        closure
            .difference(basis)
            .iter_canonical()
            .map(|c| {
                let note = primary[&c];
                Implied {
                    flag: c,
                    note,
                    additional: self.additional_notes(c, closure, note),
                }
            })
            .collect()
    }

    pub fn minimize(&self, flags: ConstraintFlags) -> Minimal {
        let closure = self.closure(flags);
        let basis = self.basis(flags, closure);
        let implied = self.implied_notes(basis, closure);
        Minimal {
            basis,
            closure,
            implied,
        }
    }

    /// Verdict computed straight from the rules, without a generated table.
    pub fn classify(&self, flags: ConstraintFlags, compound: Compoundness) -> Verdict {
        if flags.is_empty() {
            return Verdict::Coherent { redundant: Vec::new() };
        }
        if let Some(note) = self.trivial_note(flags) {
            return Verdict::TriviallyIncoherent { note };
        }
        let closure = self.closure(flags);
        if let Some(note) = self.incoherence_note(flags, closure) {
            return Verdict::Incoherent { note };
        }
        let (any, single) = self.rejection_notes(closure);
        let single = single.filter(|_| compound == Compoundness::Single);
        if let Some(note) = [any, single].into_iter().flatten().min() {
            return Verdict::Rejected { note };
        }
        Verdict::Coherent {
            redundant: self.minimize(flags).implied,
        }
    }
}

/// One stored row of the coherence table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoherenceRow {
    pub x: CombinationCode,
    pub coherent: bool,
    /// Incoherence note, or for coherent but non-minimal rows the first
    /// redundancy note.
    pub note: Option<CorKey>,
    pub rejection: Option<CorKey>,
    pub single_rejection: Option<CorKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RedundancyRow {
    pub x: CombinationCode,
    pub redundancy: ConstraintType,
    pub note: CorKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionRow {
    pub pattern: ConstraintFlags,
    pub single_only: bool,
    pub note: CorKey,
}

/// Generated coherence, redundancy, additional-redundancy, and rejection tables.
#[derive(Debug, Clone)]
pub struct RuleCatalog {
    rules: &'static RuleSet,
    rows: Vec<Option<CoherenceRow>>,
    redundancies: Vec<RedundancyRow>,
    additional: Vec<RedundancyRow>,
    rejections: Vec<RejectionRow>,
    enumerated: u32,
}

struct Generated {
    row: CoherenceRow,
    redundant: Vec<Implied>,
}

fn generate_row(rules: &RuleSet, x: u32) -> Option<Generated> {
    let flags = ConstraintFlags::from_bits_truncate(x);
    let code = encode(flags);
    if rules.trivial_note(flags).is_some() {
        return None;
    }
    let closure = rules.closure(flags);
    if let Some(note) = rules.incoherence_note(flags, closure) {
        return Some(Generated {
            row: CoherenceRow {
                x: code,
                coherent: false,
                note: Some(note),
                rejection: None,
                single_rejection: None,
            },
            redundant: Vec::new(),
        });
    }
    let (rejection, single_rejection) = rules.rejection_notes(closure);
    let basis = rules.basis(flags, closure);
    let redundant = rules.implied_notes(basis, closure);
    Some(Generated {
        row: CoherenceRow {
            x: code,
            coherent: true,
            note: redundant.iter().map(|r| r.note).min(),
            rejection,
            single_rejection,
        },
        redundant,
    })
}

/// Builds every table by enumerating all nonempty combinations.
pub fn generate_catalog() -> RuleCatalog {
    let rules = RuleSet::standard();
    let generated: Vec<Option<Generated>> = (1..=MAX_CODE)
        .into_par_iter()
        .map(|x| generate_row(rules, x))
        .collect();
    let mut rows = vec![None; MAX_CODE as usize + 1];
    let mut redundancies = Vec::new();
    let mut additional = Vec::new();
    for g in generated.into_iter().flatten() {
        let x = g.row.x;
        rows[x.value() as usize] = Some(g.row);
        for imp in g.redundant {
            redundancies.push(RedundancyRow {
                x,
                redundancy: imp.flag,
                note: imp.note,
            });
            additional.extend(imp.additional.into_iter().map(|note| RedundancyRow {
                x,
                redundancy: imp.flag,
                note,
            }));
        }
    }
    let rejections = rules
        .of_kind(RuleKind::Rejection)
        .map(|r| RejectionRow {
            pattern: r.when.all,
            single_only: r.single_only,
            note: r.corollary,
        })
        .collect();
    RuleCatalog {
        rules,
        rows,
        redundancies,
        additional,
        rejections,
        enumerated: MAX_CODE,
    }
}

#[derive(Serialize)]
struct CoherenceExport<'a> {
    x: u32,
    flags: ConstraintFlags,
    coherent: bool,
    note: Option<&'a str>,
}

#[derive(Serialize)]
struct RedundancyExport<'a> {
    x: u32,
    redundancy: &'a str,
    note: &'a str,
}

#[derive(Serialize)]
struct RejectionExport<'a> {
    pattern: ConstraintFlags,
    single_only: bool,
    note: &'a str,
}

#[derive(Serialize)]
struct CatalogExport<'a> {
    corollaries: &'a [CorollaryRecord],
    coherencies: Vec<CoherenceExport<'a>>,
    redundancies: Vec<RedundancyExport<'a>>,
    additional_redundancies: Vec<RedundancyExport<'a>>,
    rejections: Vec<RejectionExport<'a>>,
}

/// Column order of the coherence table export, after `x` and `Ch`.
pub const COHERENCE_COLUMNS: [ConstraintType; 17] = [
    SelfMap,
    CanonicalProjection,
    CanonicalInjection,
    RepresentativeSystemMapping,
    Acyclic,
    Equivalence,
    Idempotent,
    Asymmetric,
    Symmetric,
    Irreflexive,
    Reflexive,
    Bijective,
    Onto,
    OneToOne,
    NonPrime,
    DefaultValue,
    Total,
];

impl RuleCatalog {
    pub fn rules(&self) -> &'static RuleSet {
        self.rules
    }

    pub fn corollary(&self, key: CorKey) -> &CorollaryRecord {
        self.rules.corollary(key)
    }

    /// Number of nonempty combinations enumerated during generation.
    pub fn enumerated(&self) -> u32 {
        self.enumerated
    }

    pub fn row(&self, x: CombinationCode) -> Option<&CoherenceRow> {
        self.rows[x.value() as usize].as_ref()
    }

    pub fn stored_rows(&self) -> impl Iterator<Item = &CoherenceRow> + '_ {
        self.rows.iter().flatten()
    }

    pub fn stored_count(&self) -> usize {
        self.stored_rows().count()
    }

    pub fn redundancies(&self) -> &[RedundancyRow] {
        &self.redundancies
    }

    pub fn additional_redundancies(&self) -> &[RedundancyRow] {
        &self.additional
    }

    pub fn rejections(&self) -> &[RejectionRow] {
        &self.rejections
    }

    fn rows_for(rows: &[RedundancyRow], x: CombinationCode) -> &[RedundancyRow] {
        let start = rows.partition_point(|r| r.x < x);
        let end = rows.partition_point(|r| r.x <= x);
        &rows[start..end]
    }

    pub fn redundancy_rows(&self, x: CombinationCode) -> &[RedundancyRow] {
        Self::rows_for(&self.redundancies, x)
    }

    pub fn additional_rows(&self, x: CombinationCode) -> &[RedundancyRow] {
        Self::rows_for(&self.additional, x)
    }

    /// Redundant flags of a stored coherent row with their notes.
    pub fn implied_for(&self, x: CombinationCode) -> Vec<Implied> {
        let extra = self.additional_rows(x);
        self.redundancy_rows(x)
            .iter()
            .map(|r| Implied {
                flag: r.redundancy,
                note: r.note,
                additional: extra
                    .iter()
                    .filter(|a| a.redundancy == r.redundancy)
                    .map(|a| a.note)
                    .collect(),
            })
            .collect()
    }

    /// Table lookup: missing rows are trivially incoherent (their note is
    /// recovered from the trivial patterns); the empty set is coherent.
    pub fn lookup(&self, x: CombinationCode, compound: Compoundness) -> Verdict {
        if x.value() == 0 {
            return Verdict::Coherent { redundant: Vec::new() };
        }
        let Some(row) = self.row(x) else {
            let note = self
                .rules
                .trivial_note(decode(x))
                .expect("every missing row matches a trivial pattern");
            return Verdict::TriviallyIncoherent { note };
        };
        if !row.coherent {
            return Verdict::Incoherent {
                note: row.note.expect("incoherent rows carry a note"),
            };
        }
        let single = row
            .single_rejection
            .filter(|_| compound == Compoundness::Single);
        if let Some(note) = [row.rejection, single].into_iter().flatten().min() {
            return Verdict::Rejected { note };
        }
        Verdict::Coherent {
            redundant: self.implied_for(x),
        }
    }

    /// Implied flags of a coherent set, with notes.
    pub fn redundancy_closure(&self, flags: ConstraintFlags) -> Result<Vec<Implied>, CatalogError> {
        match self.lookup(encode(flags), Compoundness::Compound) {
            Verdict::Coherent { redundant } => Ok(redundant),
            other => Err(CatalogError::NotCoherent {
                flags: flags.to_string(),
                reason: match other.note() {
                    Some(k) => self.corollary(k).label(),
                    None => other.label().to_string(),
                },
            }),
        }
    }

    pub fn write_corollaries_csv<W: Write>(&self, w: W) -> Result<(), CatalogError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["CorId", "CorType", "CorDescription", "CorSection"])?;
        for c in self.rules.corollaries() {
            let kind = format!("{:?}", c.kind);
            out.write_record([c.id.as_str(), kind.as_str(), c.description.as_str(), c.section.as_str()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_coherencies_csv<W: Write>(&self, w: W) -> Result<(), CatalogError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["x", "Ch"];
        header.extend(COHERENCE_COLUMNS.iter().map(|c| c.abbrev()));
        header.push("Notes");
        out.write_record(&header)?;
        for row in self.stored_rows() {
            let flags = decode(row.x);
            let mut rec = vec![row.x.to_string(), bit(row.coherent).to_string()];
            rec.extend(COHERENCE_COLUMNS.iter().map(|c| bit(flags.contains(*c)).to_string()));
            rec.push(row.note.map(|k| self.corollary(k).label()).unwrap_or_default());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_redundancies_csv<W: Write>(&self, w: W) -> Result<(), CatalogError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["SMCCombination", "Redundancy", "Notes"])?;
        for r in &self.redundancies {
            out.write_record([
                r.x.to_string(),
                r.redundancy.display_name().to_string(),
                self.corollary(r.note).label(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, CatalogError> {
        let label = |k: CorKey| self.corollary(k).id.as_str();
        let red = |rows: &[RedundancyRow]| -> Vec<RedundancyExport<'_>> {
            rows.iter()
                .map(|r| RedundancyExport {
                    x: r.x.value(),
                    redundancy: r.redundancy.abbrev(),
                    note: label(r.note),
                })
                .collect()
        };
        let export = CatalogExport {
            corollaries: self.rules.corollaries(),
            coherencies: self
                .stored_rows()
                .map(|r| CoherenceExport {
                    x: r.x.value(),
                    flags: decode(r.x),
                    coherent: r.coherent,
                    note: r.note.map(label),
                })
                .collect(),
            redundancies: red(&self.redundancies),
            additional_redundancies: red(&self.additional),
            rejections: self
                .rejections
                .iter()
                .map(|r| RejectionExport {
                    pattern: r.pattern,
                    single_only: r.single_only,
                    note: label(r.note),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&export)?)
    }
}

fn bit(b: bool) -> u8 {
    u8::from(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(types: &[ConstraintType]) -> CombinationCode {
        encode(fl(types))
    }

    fn rules() -> &'static RuleSet {
        RuleSet::standard()
    }

    fn implied_flags(v: &[Implied]) -> ConstraintFlags {
        v.iter().map(|i| i.flag).collect()
    }

    #[test]
    fn corollary_ids_unique_and_keys_dense() {
        let r = rules();
        for (i, c) in r.corollaries().iter().enumerate() {
            assert_eq!(c.key as usize, i + 1);
            assert_eq!(r.key(&c.id), c.key);
        }
        assert_eq!(r.by_id.len(), r.corollaries().len());
        assert_eq!(r.corollary(r.key("A.6.1.1 (viii)")).section, "A.6.1");
        assert_eq!(r.corollary(r.key("A.6.2.4")).section, "A.6.2");
    }

    #[test]
    fn pattern_disjunctions() {
        let p = Pattern {
            all: fl(&[CanonicalProjection]),
            any_of: fl(&[NonPrime]),
            any_absent: fl(&[Total]),
            ..Pattern::default()
        };
        assert!(p.matches(fl(&[CanonicalProjection])));
        assert!(p.matches(fl(&[CanonicalProjection, Total, NonPrime])));
        assert!(!p.matches(fl(&[CanonicalProjection, Total])));
        assert!(!p.matches(fl(&[Total])));
    }

    #[test]
    fn closure_examples() {
        let r = rules();
        assert_eq!(r.closure(fl(&[OneToOne, Onto])), fl(&[OneToOne, Onto, Bijective]));
        assert_eq!(
            r.closure(fl(&[SelfMap, Acyclic])),
            fl(&[SelfMap, Acyclic, Asymmetric, Irreflexive])
        );
        assert_eq!(r.closure(ConstraintFlags::EMPTY), ConstraintFlags::EMPTY);
        assert_eq!(
            r.closure(fl(&[SelfMap, Total, OneToOne])),
            fl(&[SelfMap, Total, OneToOne, Onto, Bijective])
        );
    }

    #[test]
    fn minimize_prefers_one_to_one_for_total_self_maps() {
        let r = rules();
        let m = r.minimize(fl(&[SelfMap, Total, Onto]));
        assert_eq!(m.basis, fl(&[SelfMap, Total, OneToOne]));
        assert_eq!(m.implied_flags(), fl(&[Onto, Bijective]));
        let m = r.minimize(fl(&[SelfMap, Total, Bijective]));
        assert_eq!(m.basis, fl(&[SelfMap, Total, OneToOne]));
        let m = r.minimize(fl(&[OneToOne, Onto, Bijective]));
        assert_eq!(m.basis, fl(&[Bijective]));
        assert_eq!(m.note_for(Onto), Some(r.key("A.6.1.1 (xi)")));
        let m = r.minimize(fl(&[OneToOne, Onto]));
        assert_eq!(m.basis, fl(&[OneToOne, Onto]));
        assert_eq!(m.note_for(Bijective), Some(r.key("A.6.1.1 (x)")));
    }

    #[test]
    fn classify_examples() {
        let r = rules();
        assert_eq!(
            r.classify(fl(&[Total, DefaultValue]), Compoundness::Single),
            Verdict::TriviallyIncoherent { note: r.key("A.6.1.1 (i)") }
        );
        assert_eq!(
            r.classify(fl(&[SelfMap, Total, Symmetric, Idempotent]), Compoundness::Single),
            Verdict::Rejected { note: r.key("A.6.2.1 (iv)") }
        );
        assert!(r
            .classify(fl(&[SelfMap, Total, Reflexive]), Compoundness::Compound)
            .is_coherent());
        assert_eq!(
            r.classify(fl(&[SelfMap, Total, Reflexive]), Compoundness::Single),
            Verdict::Rejected { note: r.key("A.6.2.1 (ii)") }
        );
        assert_eq!(
            r.classify(fl(&[SelfMap, Equivalence, Irreflexive]), Compoundness::Single),
            Verdict::Incoherent { note: r.key("A.6.1.1 (vi)") }
        );
    }

    #[test]
    fn implied_notes_follow_derivation() {
        let r = rules();
        let m = r.minimize(fl(&[SelfMap, Total, OneToOne]));
        let four = r.key("A.6.1.4 (i)");
        assert_eq!(m.note_for(Onto), Some(four));
        assert_eq!(m.note_for(Bijective), Some(four));
        let b = m.implied.iter().find(|i| i.flag == Bijective).unwrap();
        assert!(b.additional.contains(&r.key("A.6.1.1 (x)")));
        let m = r.minimize(fl(&[Bijective]));
        assert_eq!(m.note_for(Onto), Some(r.key("A.6.1.1 (xi)")));
        assert_eq!(implied_flags(&m.implied), fl(&[OneToOne, Onto]));
    }

    #[test]
    fn catalog_spot_values() {
        let cat = generate_catalog();
        let r = cat.rules();
        assert_eq!(cat.enumerated(), 131_071);
        assert!(cat.lookup(CombinationCode::new(65552).unwrap(), Compoundness::Single).is_coherent());
        assert!(cat.lookup(CombinationCode::new(65556).unwrap(), Compoundness::Single).is_coherent());
        assert_eq!(
            cat.lookup(CombinationCode::new(65557).unwrap(), Compoundness::Single),
            Verdict::Incoherent { note: r.key("A.6.1.1 (viii)") }
        );
        let rows = |x: u64| -> Vec<ConstraintType> {
            cat.redundancy_rows(CombinationCode::new(x).unwrap())
                .iter()
                .map(|r| r.redundancy)
                .collect()
        };
        assert_eq!(rows(65545), vec![Bijective, Onto]);
        assert_eq!(rows(24), vec![Bijective]);
        assert_eq!(rows(40), vec![Onto, OneToOne]);
        assert_eq!(
            cat.lookup(code(&[Total, DefaultValue]), Compoundness::Single),
            Verdict::TriviallyIncoherent { note: r.key("A.6.1.1 (i)") }
        );
        assert_eq!(
            cat.lookup(code(&[SelfMap, Total, Symmetric, Idempotent]), Compoundness::Single),
            Verdict::Rejected { note: r.key("A.6.2.1 (iv)") }
        );
        assert!(cat
            .lookup(code(&[SelfMap, Total, Reflexive]), Compoundness::Compound)
            .is_coherent());
        assert_eq!(
            cat.lookup(CombinationCode::new(0).unwrap(), Compoundness::Single),
            Verdict::Coherent { redundant: vec![] }
        );
    }

    #[test]
    fn catalog_matches_direct_classification() {
        let cat = generate_catalog();
        let r = cat.rules();
        for x in (0..=MAX_CODE).step_by(7) {
            let code = CombinationCode::new(x as u64).unwrap();
            for c in [Compoundness::Single, Compoundness::Compound] {
                assert_eq!(cat.lookup(code, c), r.classify(decode(code), c), "x={x}");
            }
        }
    }

    #[test]
    fn redundancy_closure_examples() {
        let cat = generate_catalog();
        let f = |t: &[ConstraintType]| implied_flags(&cat.redundancy_closure(fl(t)).unwrap());
        assert_eq!(f(&[OneToOne, Onto]), fl(&[Bijective]));
        assert_eq!(f(&[SelfMap, Acyclic]), fl(&[Asymmetric, Irreflexive]));
        assert_eq!(f(&[]), ConstraintFlags::EMPTY);
        assert_eq!(f(&[SelfMap, Total, OneToOne]), fl(&[Onto, Bijective]));
        assert!(matches!(
            cat.redundancy_closure(fl(&[SelfMap, Reflexive, Irreflexive])),
            Err(CatalogError::NotCoherent { .. })
        ));
    }

    #[test]
    fn csv_headers() {
        let cat = generate_catalog();
        let mut buf = Vec::new();
        cat.write_coherencies_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,Ch,SM,CP,CI,RS,A,Q,I,AS,S,IR,R,B,OT,UK,NP,DV,T,Notes\n"));
        assert!(text.contains("\n65557,0,1,0,0,0,0,0,0,0,0,0,0,0,1,0,1,0,1,A.6.1.1 (viii). non-prime ^ total ^ onto ^ self-map\n"));
        let mut buf = Vec::new();
        cat.write_redundancies_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("SMCCombination,Redundancy,Notes\n"));
        assert!(text.contains("\n24,Bijective,A.6.1.1 (x). one-to-one ^ onto => bijective\n"));
    }
}
