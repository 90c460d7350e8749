//! Exhaustive small-model checking: every (partial) self-map on an `n`-element
//! set is enumerated and used to verify propositions, audit the incoherence
//! markings of a catalog, and validate redundancy rules.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::constraint_model::{ConstraintFlags, ConstraintType, Variant};
use crate::rule_catalog::{Compoundness, CorKey, RuleCatalog, RuleKind, RuleSet, Verdict};
use crate::semantics::{self, check_dyadic, FiniteSet, MappingInstance};

use ConstraintType::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("proposition {id} refers to {constraint}, which cannot be decided from instance data")]
    Uncheckable { id: String, constraint: String },
}

/// Odometer over all maps `{0..n} -> {0..n} ∪ {null}`.
pub struct SelfMaps {
    set: FiniteSet,
    digits: Vec<usize>,
    base: usize,
    done: bool,
}

impl Iterator for SelfMaps {
    type Item = MappingInstance;

    fn next(&mut self) -> Option<MappingInstance> {
        if self.done {
            return None;
        }
        let n = self.set.len();
        // Digit `n` encodes null when nulls are allowed.
        let graph = self
            .digits
            .iter()
            .map(|&d| if d == n { None } else { Some(d) })
            .collect();
        let item = MappingInstance::self_map(self.set.clone(), graph).expect("odometer digits are in range");
        self.done = true;
        for d in self.digits.iter_mut() {
            *d += 1;
            if *d < self.base {
                self.done = false;
                break;
            }
            *d = 0;
        }
        Some(item)
    }
}

/// Every self-map of `{1..n}` (n^n of them), or every partial one ((n+1)^n),
/// each exactly once, in a fixed order.
pub fn enumerate_selfmaps(n: usize, allow_nulls: bool) -> SelfMaps {
    SelfMaps {
        set: FiniteSet::numbered("S", n),
        digits: vec![0; n],
        base: if allow_nulls { n + 1 } else { n },
        done: false,
    }
}

fn endo_graphs(n: usize, allow_nulls: bool) -> Vec<Vec<Option<usize>>> {
    enumerate_selfmaps(n, allow_nulls)
        .map(|m| m.graph().to_vec())
        .collect()
}

/// Atomic statements about a self-map given as domain indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Literal {
    Flag(ConstraintType, Variant),
    Not(Box<Literal>),
    IsIdentity,
    NotIdentity,
    /// `s ∘ s` is the identity.
    SquareIsIdentity,
    /// `s^k(x) ≠ x` for every `x` and `k ≥ 1`.
    IterateNeverReturns,
    /// `s^k(x) = s(x)` for every `x` and `k ≥ 1`, all values defined.
    IteratesEqualImage,
    /// `s(s(x))` is null for every `x`.
    SquareAllNull,
    Transitive,
    AntiIdempotent,
    LeftInEuclidean,
    EuclideanInEuclidean,
}

impl Literal {
    fn flag(c: ConstraintType) -> Literal {
        Literal::Flag(c, Variant::Plain)
    }

    fn null(c: ConstraintType) -> Literal {
        Literal::Flag(c, Variant::Null)
    }

    fn not(self) -> Literal {
        Literal::Not(Box::new(self))
    }

    fn uncheckable(&self) -> Option<ConstraintType> {
        match self {
            Literal::Flag(c, _) if !c.is_checkable() => Some(*c),
            Literal::Not(inner) => inner.uncheckable(),
            _ => None,
        }
    }

    pub fn eval(&self, s: &[Option<usize>]) -> bool {
        match self {
            Literal::Flag(c, v) => check_dyadic(s, *c, *v),
            Literal::Not(inner) => !inner.eval(s),
            Literal::IsIdentity => semantics::is_identity(s),
            Literal::NotIdentity => !semantics::is_identity(s),
            Literal::SquareIsIdentity => s
                .iter()
                .enumerate()
                .all(|(x, y)| matches!(y, Some(y) if s[*y] == Some(x))),
            Literal::IterateNeverReturns => (0..s.len()).all(|x| {
                let mut cur = s[x];
                for _ in 0..s.len() {
                    match cur {
                        Some(y) if y == x => return false,
                        Some(y) => cur = s[y],
                        None => return true,
                    }
                }
                true
            }),
            Literal::IteratesEqualImage => (0..s.len()).all(|x| {
                let Some(first) = s[x] else { return false };
                let mut cur = first;
                for _ in 0..=s.len() {
                    match s[cur] {
                        Some(next) if next == first => cur = next,
                        _ => return false,
                    }
                }
                true
            }),
            Literal::SquareAllNull => s.iter().all(|y| match y {
                Some(y) => s[*y].is_none(),
                None => true,
            }),
            // Pairs (x, s(x)) form a transitive relation.
            Literal::Transitive => s.iter().all(|y| match y {
                Some(y) => match s[*y] {
                    Some(z) => z == *y,
                    None => true,
                },
                None => true,
            }),
            Literal::AntiIdempotent => semantics::is_anti_idempotent(s),
            // s(y) = x = s(z) implies y ≠ x ≠ z.
            Literal::LeftInEuclidean => s
                .iter()
                .enumerate()
                .all(|(y, x)| *x != Some(y)),
            // Distinct elements never share a defined image.
            Literal::EuclideanInEuclidean => (0..s.len()).all(|y| {
                (0..s.len()).all(|z| y == z || s[y].is_none() || s[y] != s[z])
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Implication,
    Equivalence,
    /// The two sides never hold together.
    Exclusion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Proposition {
    pub id: String,
    pub form: Form,
    pub lhs: Vec<Literal>,
    pub rhs: Vec<Literal>,
}

impl Proposition {
    pub fn new(id: &str, form: Form, lhs: Vec<Literal>, rhs: Vec<Literal>) -> Self {
        Proposition {
            id: id.to_string(),
            form,
            lhs,
            rhs,
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        match self.lhs.iter().chain(&self.rhs).find_map(Literal::uncheckable) {
            Some(c) => Err(OracleError::Uncheckable {
                id: self.id.clone(),
                constraint: c.display_name().to_string(),
            }),
            None => Ok(()),
        }
    }

    pub fn holds_on(&self, s: &[Option<usize>]) -> bool {
        let lhs = self.lhs.iter().all(|l| l.eval(s));
        let rhs = || self.rhs.iter().all(|l| l.eval(s));
        match self.form {
            Form::Implication => !lhs || rhs(),
            Form::Equivalence => lhs == rhs(),
            Form::Exclusion => !(lhs && rhs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub id: String,
    pub n: usize,
    pub instances_checked: usize,
    pub counterexamples: Vec<MappingInstance>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// Propositions about self-maps that instance data can decide.
pub fn standard_propositions() -> Vec<Proposition> {
    use Literal as L;
    let p = Proposition::new;
    let f = L::flag;
    let nl = L::null;
    vec![
        p("P0.ii", Form::Equivalence, vec![nl(Idempotent)], vec![L::Transitive]),
        p(
            "P0.iv(a)",
            Form::Equivalence,
            vec![nl(Idempotent), L::AntiIdempotent],
            vec![L::SquareAllNull],
        ),
        p("P0.iv(b)", Form::Implication, vec![L::SquareAllNull], vec![nl(Idempotent)]),
        p("P0.vii", Form::Equivalence, vec![L::LeftInEuclidean], vec![f(Irreflexive)]),
        p("P0.ix", Form::Equivalence, vec![L::EuclideanInEuclidean], vec![f(OneToOne)]),
        p("P1.vi", Form::Exclusion, vec![f(Reflexive)], vec![f(Irreflexive)]),
        p("P1.vii", Form::Exclusion, vec![f(Symmetric)], vec![f(Asymmetric)]),
        p(
            "P3.i",
            Form::Equivalence,
            vec![f(Onto), f(Total)],
            vec![f(OneToOne), f(Total)],
        ),
        p(
            "P3.ii",
            Form::Implication,
            vec![L::IsIdentity],
            vec![f(Total), f(OneToOne), f(Reflexive), f(Idempotent)],
        ),
        p("P3.iii", Form::Equivalence, vec![L::IsIdentity], vec![f(Equivalence)]),
        p("P3.iv", Form::Equivalence, vec![f(Reflexive)], vec![L::IsIdentity]),
        p(
            "P3.v",
            Form::Implication,
            vec![f(RepresentativeSystemMapping), f(OneToOne)],
            vec![f(Reflexive)],
        ),
        p(
            "P3.vi",
            Form::Implication,
            vec![f(OneToOne), L::NotIdentity],
            vec![f(Irreflexive), f(Idempotent).not()],
        ),
        p("P4", Form::Equivalence, vec![f(Symmetric)], vec![L::SquareIsIdentity]),
        p("P5", Form::Equivalence, vec![f(Acyclic)], vec![L::IterateNeverReturns]),
        p(
            "P6",
            Form::Equivalence,
            vec![f(Total), f(Idempotent)],
            vec![L::IteratesEqualImage],
        ),
        p("P7.i", Form::Implication, vec![f(Asymmetric)], vec![f(Irreflexive)]),
        p("P7.ii", Form::Equivalence, vec![L::AntiIdempotent], vec![f(Irreflexive)]),
        p(
            "P7.iii",
            Form::Implication,
            vec![f(Acyclic)],
            vec![f(Asymmetric), f(Idempotent).not()],
        ),
        p(
            "P8",
            Form::Implication,
            vec![f(Irreflexive), f(Idempotent)],
            vec![f(Asymmetric)],
        ),
        p("P9", Form::Implication, vec![f(Symmetric), f(Idempotent)], vec![f(Reflexive)]),
        p("P10", Form::Implication, vec![f(Asymmetric), f(Idempotent)], vec![f(Acyclic)]),
        p(
            "P11",
            Form::Implication,
            vec![f(RepresentativeSystemMapping)],
            vec![f(Idempotent)],
        ),
        p("P12.i", Form::Equivalence, vec![nl(Reflexive), f(Total)], vec![f(Reflexive)]),
        p("P12.ii", Form::Equivalence, vec![nl(Symmetric), f(Total)], vec![f(Symmetric)]),
        p("P12.iii", Form::Equivalence, vec![nl(Idempotent), f(Total)], vec![f(Idempotent)]),
        p(
            "P12.iv",
            Form::Equivalence,
            vec![nl(Equivalence), f(Total)],
            vec![f(Equivalence)],
        ),
        p(
            "P12.v",
            Form::Equivalence,
            vec![nl(RepresentativeSystemMapping), f(Total)],
            vec![f(RepresentativeSystemMapping)],
        ),
        p(
            "P13.i",
            Form::Implication,
            vec![nl(Reflexive)],
            vec![f(OneToOne), nl(Idempotent)],
        ),
        p(
            "P13.ii",
            Form::Implication,
            vec![nl(RepresentativeSystemMapping), f(OneToOne)],
            vec![nl(Reflexive)],
        ),
        p(
            "P13.iii",
            Form::Implication,
            vec![f(Irreflexive), nl(Idempotent)],
            vec![f(Asymmetric)],
        ),
        p(
            "P13.iv",
            Form::Implication,
            vec![nl(Symmetric), nl(Idempotent)],
            vec![nl(Reflexive)],
        ),
        p(
            "P13.v",
            Form::Implication,
            vec![f(Asymmetric), nl(Idempotent)],
            vec![f(Acyclic)],
        ),
        p(
            "P13.vi",
            Form::Implication,
            vec![nl(RepresentativeSystemMapping)],
            vec![nl(Idempotent)],
        ),
    ]
}

pub fn verify_proposition(prop: &Proposition, n: usize) -> Result<VerificationReport, OracleError> {
    prop.validate()?;
    let instances: Vec<MappingInstance> = enumerate_selfmaps(n, true).collect();
    Ok(verify_on(prop, n, &instances))
}

fn verify_on(prop: &Proposition, n: usize, instances: &[MappingInstance]) -> VerificationReport {
    let counterexamples = instances
        .iter()
        .filter(|m| !prop.holds_on(m.graph()))
        .cloned()
        .collect();
    VerificationReport {
        id: prop.id.clone(),
        n,
        instances_checked: instances.len(),
        counterexamples,
    }
}

/// Verifies every proposition over the partial self-maps of an `n`-element set.
pub fn verify_all(props: &[Proposition], n: usize) -> Result<Vec<VerificationReport>, OracleError> {
    for s in props {
        s.validate()?;
    }
    let instances: Vec<MappingInstance> = enumerate_selfmaps(n, true).collect();
    Ok(props
        .par_iter()
        .map(|s| verify_on(s, n, &instances))
        .collect())
}

/// The twelve flags an instance can decide, SelfMap aside.
pub const AUDIT_FLAGS: [ConstraintType; 12] = ConstraintType::CHECKABLE;

#[derive(Debug, Clone, Copy)]
struct Masks {
    /// Checkable flags true under the plain reading.
    plain: u32,
    /// Checkable flags true with null variants for the null-capable ones.
    partial: u32,
    nonempty: bool,
    identity: bool,
}

fn masks_for(s: &[Option<usize>]) -> Masks {
    let mut plain = 0;
    let mut partial = 0;
    for c in AUDIT_FLAGS {
        if check_dyadic(s, c, Variant::Plain) {
            plain |= c.weight();
        }
        if check_dyadic(s, c, crate::constraint_model::variant_for(c, false)) {
            partial |= c.weight();
        }
    }
    Masks {
        plain,
        partial,
        nonempty: s.iter().any(Option::is_some),
        identity: semantics::is_identity(s),
    }
}

impl Masks {
    /// Satisfaction of the checkable part of `flags`, each member read in
    /// the variant `flags` selects.
    fn satisfies(&self, flags: ConstraintFlags) -> bool {
        let mask = if flags.contains(Total) { self.plain } else { self.partial };
        let need = flags.bits() & checkable_bits();
        mask & need == need
    }
}

fn checkable_bits() -> u32 {
    AUDIT_FLAGS.iter().map(|c| c.weight()).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Refutation {
    pub flags: ConstraintFlags,
    pub note: CorKey,
    pub witness: MappingInstance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleViolation {
    pub corollary: CorKey,
    pub premises: ConstraintFlags,
    pub witness: MappingInstance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub n: usize,
    pub instances: usize,
    pub combinations: usize,
    pub marked_incoherent: usize,
    /// Marked incoherent and satisfied by no instance with a defined image.
    pub without_model: usize,
    /// Marked incoherent and satisfied only by the identity.
    pub policy_incoherent: Vec<ConstraintFlags>,
    pub refutations: Vec<Refutation>,
}

impl AuditReport {
    pub fn clean(&self) -> bool {
        self.refutations.is_empty()
    }
}

fn instance_of(n: usize, graph: &[Option<usize>]) -> MappingInstance {
    MappingInstance::self_map(FiniteSet::numbered("S", n), graph.to_vec()).expect("enumerated graphs are valid")
}

/// Checks every self-map combination over the twelve checkable flags that
/// the catalog marks incoherent against the partial self-maps on `n`
/// elements. A model with at least one defined image refutes the marking
/// unless the identity is the only such model, which is reported as a
/// policy incoherence.
pub fn audit_catalog(cat: &RuleCatalog, n: usize) -> AuditReport {
    let graphs = endo_graphs(n, true);
    let masks: Vec<Masks> = graphs.iter().map(|g| masks_for(g)).collect();
    let combos: Vec<ConstraintFlags> = (0u32..1 << AUDIT_FLAGS.len())
        .map(|bits| {
            AUDIT_FLAGS
                .iter()
                .enumerate()
                .filter(|(i, _)| bits & (1 << i) != 0)
                .map(|(_, c)| *c)
                .collect::<ConstraintFlags>()
                .with(SelfMap)
        })
        .collect();

    enum Outcome {
        Coherent,
        NoModel,
        Policy(ConstraintFlags),
        Refuted(Refutation),
    }

    let outcomes: Vec<Outcome> = combos
        .par_iter()
        .map(|&flags| {
            let note = match cat.lookup(flags.code(), Compoundness::Single) {
                Verdict::TriviallyIncoherent { note } | Verdict::Incoherent { note } => note,
                _ => return Outcome::Coherent,
            };
            let models: Vec<usize> = masks
                .iter()
                .enumerate()
                .filter(|(_, m)| m.nonempty && m.satisfies(flags))
                .map(|(i, _)| i)
                .collect();
            match models.iter().find(|&&i| !masks[i].identity) {
                Some(&i) => Outcome::Refuted(Refutation {
                    flags,
                    note,
                    witness: instance_of(n, &graphs[i]),
                }),
                None if models.is_empty() => Outcome::NoModel,
                None => Outcome::Policy(flags),
            }
        })
        .collect();

    let mut report = AuditReport {
        n,
        instances: graphs.len(),
        combinations: combos.len(),
        marked_incoherent: 0,
        without_model: 0,
        policy_incoherent: Vec::new(),
        refutations: Vec::new(),
    };
    for o in outcomes {
        match o {
            Outcome::Coherent => {}
            Outcome::NoModel => {
                report.marked_incoherent += 1;
                report.without_model += 1;
            }
            Outcome::Policy(f) => {
                report.marked_incoherent += 1;
                report.policy_incoherent.push(f);
            }
            Outcome::Refuted(r) => {
                report.marked_incoherent += 1;
                report.refutations.push(r);
            }
        }
    }
    report
}

/// Checks every redundancy rule on the partial self-maps of `n` elements,
/// in each totality context its pattern allows: any instance satisfying the
/// premises but not the consequents is a violation.
pub fn audit_rules(rules: &RuleSet, n: usize) -> Vec<RuleViolation> {
    let graphs = endo_graphs(n, true);
    let masks: Vec<Masks> = graphs.iter().map(|g| masks_for(g)).collect();
    let mut violations = Vec::new();
    for rule in rules.rules().iter().filter(|r| r.kind == RuleKind::Redundancy) {
        let p = rule.when;
        let contexts: Vec<ConstraintFlags> = [ConstraintFlags::EMPTY, ConstraintFlags::of(&[Total])]
            .into_iter()
            .filter(|ctx| !p.none.intersects(*ctx))
            .filter(|ctx| !(ctx.is_empty() && p.all.contains(Total)))
            .collect();
        let disjuncts: Vec<ConstraintFlags> = if p.any_of.is_empty() {
            vec![ConstraintFlags::EMPTY]
        } else {
            p.any_of.iter().map(|c| ConstraintFlags::of(&[c])).collect()
        };
        for ctx in &contexts {
            for d in &disjuncts {
                let premises = p.all.union(*ctx).union(*d).with(SelfMap);
                let conclusion = premises.union(rule.then);
                if let Some(i) = masks
                    .iter()
                    .position(|m| m.satisfies(premises) && !m.satisfies(conclusion))
                {
                    violations.push(RuleViolation {
                        corollary: rule.corollary,
                        premises,
                        witness: instance_of(n, &graphs[i]),
                    });
                }
            }
        }
    }
    violations
}

/// Rejection patterns that the identity on `n` elements fails to satisfy.
/// Rejections are policy: each pattern should describe a copy of the identity.
pub fn rejections_not_met_by_identity(cat: &RuleCatalog, n: usize) -> Vec<CorKey> {
    let id = semantics::identity_of(&FiniteSet::numbered("S", n));
    cat.rejections()
        .iter()
        .filter(|r| !semantics::satisfies_set(&id, r.pattern).unwrap_or(false))
        .map(|r| r.note)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_selfmaps(2, false).count(), 4);
        assert_eq!(enumerate_selfmaps(3, true).count(), 64);
        assert_eq!(enumerate_selfmaps(4, true).count(), 625);
        assert_eq!(enumerate_selfmaps(4, false).count(), 256);
        assert_eq!(enumerate_selfmaps(0, true).count(), 1);
    }

    #[test]
    fn enumeration_has_no_duplicates() {
        let all: Vec<_> = enumerate_selfmaps(4, true).map(|m| m.graph().to_vec()).collect();
        let distinct: HashSet<_> = all.iter().cloned().collect();
        assert_eq!(distinct.len(), all.len());
        assert!(enumerate_selfmaps(3, false).all(|m| m.graph().iter().all(Option::is_some)));
    }

    #[test]
    fn uncheckable_literal_is_a_spec_error() {
        let prop = Proposition::new(
            "bad",
            Form::Implication,
            vec![Literal::flag(NonPrime)],
            vec![Literal::flag(Total)],
        );
        assert!(matches!(
            verify_proposition(&prop, 2),
            Err(OracleError::Uncheckable { .. })
        ));
    }

    #[test]
    fn reflexive_instances_are_exactly_the_identity() {
        let reflexive: Vec<_> = enumerate_selfmaps(4, true)
            .filter(|m| check_dyadic(m.graph(), Reflexive, Variant::Plain))
            .collect();
        assert_eq!(reflexive.len(), 1);
        assert!(reflexive[0].is_identity());
    }

    #[test]
    fn selected_propositions_hold() {
        let props = standard_propositions();
        for id in ["P7.i", "P3.i", "P3.iv", "P13.iv", "P0.iv(a)"] {
            let prop = props.iter().find(|s| s.id == id).unwrap();
            let report = verify_proposition(prop, 4).unwrap();
            assert_eq!(report.instances_checked, 625);
            assert!(report.passed(), "{id}: {:?}", report.counterexamples.first());
        }
    }

    #[test]
    fn iterate_literals() {
        let s = [Some(1), Some(1), None];
        assert!(!Literal::IteratesEqualImage.eval(&s));
        assert!(Literal::IteratesEqualImage.eval(&[Some(1), Some(1)]));
        assert!(Literal::IterateNeverReturns.eval(&s[1..2].iter().map(|_| None).collect::<Vec<_>>()));
        assert!(!Literal::IterateNeverReturns.eval(&[Some(1), Some(0)]));
        assert!(Literal::SquareIsIdentity.eval(&[Some(1), Some(0)]));
        assert!(!Literal::SquareIsIdentity.eval(&[Some(1), None]));
    }
}
