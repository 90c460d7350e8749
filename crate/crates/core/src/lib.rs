//! Constraint-set reasoning for mappings and self-maps over finite sets:
//! satisfiability against data, coherence and minimality against a rule
//! catalog, and validated add/remove of constraints.

pub mod catalog_store;
pub mod constraint_model;
pub mod enforcement;
pub mod oracle;
pub mod rule_catalog;
pub mod semantics;

pub use constraint_model::{
    decode, effective_semantics, encode, CombinationCode, ConstraintFlags, ConstraintType,
    ModelError, Variant, MAX_CODE,
};
pub use rule_catalog::{
    generate_catalog, Compoundness, CorKey, CorollaryKind, CorollaryRecord, Implied, RuleCatalog,
    RuleSet, Verdict,
};
pub use semantics::{FiniteSet, MappingInstance, SemanticsError};
pub use catalog_store::{
    states_fixture, Database, MappingDescriptor, MappingKind, Metacatalog, Registry, SetCategory, SetRecord, SetType, StoreError,
};
pub use enforcement::{
    add_constraint, propagate_composition, remove_constraint, retype_mapping, toggle, ConstraintState, EnforcementError, EnforcementPlan, Outcome,
    Provenance, Status, ToggleReport, WorkStats,
};
