//! Constraint types for mappings and self-maps, flag sets over them, and the
//! integer combination code used as the key of the coherence catalog.
//!
//! Every constraint type owns a fixed bit. A [`ConstraintFlags`] value is a
//! 17-bit word and its [`CombinationCode`] is that word read as an integer, so
//! `{SelfMap, Onto}` encodes to `65536 + 16 = 65552`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest valid combination code: all 17 flags set.
pub const MAX_CODE: u32 = (1 << 17) - 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("combination code {0} is outside 0..={MAX_CODE}")]
    CodeOutOfRange(u64),
    #[error("unknown constraint abbreviation `{0}`")]
    UnknownAbbreviation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintType {
    Total,
    DefaultValue,
    NonPrime,
    OneToOne,
    Onto,
    Bijective,
    Reflexive,
    Irreflexive,
    Symmetric,
    Asymmetric,
    Idempotent,
    Equivalence,
    Acyclic,
    RepresentativeSystemMapping,
    CanonicalInjection,
    CanonicalProjection,
    SelfMap,
}

use ConstraintType::*;

impl ConstraintType {
    /// All types in ascending bit order.
    pub const ALL: [ConstraintType; 17] = [
        Total,
        DefaultValue,
        NonPrime,
        OneToOne,
        Onto,
        Bijective,
        Reflexive,
        Irreflexive,
        Symmetric,
        Asymmetric,
        Idempotent,
        Equivalence,
        Acyclic,
        RepresentativeSystemMapping,
        CanonicalInjection,
        CanonicalProjection,
        SelfMap,
    ];

    /// The twelve types whose truth can be decided from a finite instance.
    pub const CHECKABLE: [ConstraintType; 12] = [
        Total,
        OneToOne,
        Onto,
        Bijective,
        Reflexive,
        Irreflexive,
        Symmetric,
        Asymmetric,
        Idempotent,
        Equivalence,
        Acyclic,
        RepresentativeSystemMapping,
    ];

    /// Types that only self-maps may carry.
    pub const DYADIC: [ConstraintType; 8] = [
        Reflexive,
        Irreflexive,
        Symmetric,
        Asymmetric,
        Idempotent,
        Equivalence,
        Acyclic,
        RepresentativeSystemMapping,
    ];

    pub const fn bit(self) -> u32 {
        self as u32
    }

    pub const fn weight(self) -> u32 {
        1 << self.bit()
    }

    /// Column abbreviation used in the coherence table and on the command line.
    pub const fn abbrev(self) -> &'static str {
        match self {
            Total => "T",
            DefaultValue => "DV",
            NonPrime => "NP",
            OneToOne => "UK",
            Onto => "OT",
            Bijective => "B",
            Reflexive => "R",
            Irreflexive => "IR",
            Symmetric => "S",
            Asymmetric => "AS",
            Idempotent => "I",
            Equivalence => "Q",
            Acyclic => "A",
            RepresentativeSystemMapping => "RS",
            CanonicalInjection => "CI",
            CanonicalProjection => "CP",
            SelfMap => "SM",
        }
    }

    /// Human readable name, as shown in user-facing messages.
    pub const fn display_name(self) -> &'static str {
        match self {
            Total => "Total",
            DefaultValue => "Default value",
            NonPrime => "Non-prime",
            OneToOne => "One-to-one",
            Onto => "Onto",
            Bijective => "Bijective",
            Reflexive => "Reflexive",
            Irreflexive => "Irreflexive",
            Symmetric => "Symmetric",
            Asymmetric => "Asymmetric",
            Idempotent => "Idempotent",
            Equivalence => "Equivalence",
            Acyclic => "Acyclic",
            RepresentativeSystemMapping => "Representative system mapping",
            CanonicalInjection => "Canonical injection",
            CanonicalProjection => "Canonical projection",
            SelfMap => "Self-map",
        }
    }

    /// System flags are maintained by the engine and are read-only for users.
    pub const fn is_system(self) -> bool {
        matches!(self, SelfMap | CanonicalProjection | CanonicalInjection)
    }

    pub const fn is_dyadic(self) -> bool {
        matches!(
            self,
            Reflexive
                | Irreflexive
                | Symmetric
                | Asymmetric
                | Idempotent
                | Equivalence
                | Acyclic
                | RepresentativeSystemMapping
        )
    }

    /// Whether a null-tolerant variant exists (used when the mapping is not total).
    pub const fn has_null_variant(self) -> bool {
        matches!(
            self,
            Reflexive | Symmetric | Idempotent | Equivalence | RepresentativeSystemMapping
        )
    }

    /// Whether the type's truth value is decidable from instance data alone.
    pub const fn is_checkable(self) -> bool {
        !matches!(
            self,
            DefaultValue | NonPrime | CanonicalInjection | CanonicalProjection | SelfMap
        )
    }

    pub fn from_abbrev(s: &str) -> Result<Self, ModelError> {
        let t = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.abbrev().eq_ignore_ascii_case(t))
            .ok_or_else(|| ModelError::UnknownAbbreviation(t.to_string()))
    }
}

impl fmt::Display for ConstraintType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for ConstraintType {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_abbrev(s)
    }
}

/// A set of constraint types stored as a 17-bit word.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConstraintFlags(u32);

impl ConstraintFlags {
    pub const EMPTY: ConstraintFlags = ConstraintFlags(0);

    pub const fn bits(self) -> u32 {
        self.0
    }

    pub const fn from_bits_truncate(bits: u32) -> Self {
        ConstraintFlags(bits & MAX_CODE)
    }

    pub fn of(types: &[ConstraintType]) -> Self {
        types.iter().copied().collect()
    }

    pub const fn contains(self, c: ConstraintType) -> bool {
        self.0 & c.weight() != 0
    }

    pub const fn contains_all(self, other: ConstraintFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub const fn intersects(self, other: ConstraintFlags) -> bool {
        self.0 & other.0 != 0
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub const fn len(self) -> u32 {
        self.0.count_ones()
    }

    pub const fn with(self, c: ConstraintType) -> Self {
        ConstraintFlags(self.0 | c.weight())
    }

    pub const fn without(self, c: ConstraintType) -> Self {
        ConstraintFlags(self.0 & !c.weight())
    }

    pub fn insert(&mut self, c: ConstraintType) -> bool {
        let had = self.contains(c);
        self.0 |= c.weight();
        !had
    }

    pub fn remove(&mut self, c: ConstraintType) -> bool {
        let had = self.contains(c);
        self.0 &= !c.weight();
        had
    }

    pub const fn union(self, other: ConstraintFlags) -> Self {
        ConstraintFlags(self.0 | other.0)
    }

    pub const fn intersection(self, other: ConstraintFlags) -> Self {
        ConstraintFlags(self.0 & other.0)
    }

    pub const fn difference(self, other: ConstraintFlags) -> Self {
        ConstraintFlags(self.0 & !other.0)
    }

    /// Members in ascending bit order.
    pub fn iter(self) -> impl DoubleEndedIterator<Item = ConstraintType> + Clone {
        ConstraintType::ALL
            .into_iter()
            .filter(move |c| self.contains(*c))
    }

    /// Members in descending bit weight, the canonical output order.
    pub fn iter_canonical(self) -> impl Iterator<Item = ConstraintType> + Clone {
        self.iter().rev()
    }

    pub fn system(self) -> Self {
        self.iter().filter(|c| c.is_system()).collect()
    }

    pub fn code(self) -> CombinationCode {
        encode(self)
    }
}

impl FromIterator<ConstraintType> for ConstraintFlags {
    fn from_iter<I: IntoIterator<Item = ConstraintType>>(iter: I) -> Self {
        let mut f = ConstraintFlags::EMPTY;
        for c in iter {
            f.insert(c);
        }
        f
    }
}

impl fmt::Display for ConstraintFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for c in self.iter_canonical() {
            if !first {
                f.write_str(",")?;
            }
            first = false;
            f.write_str(c.abbrev())?;
        }
        Ok(())
    }
}

impl fmt::Debug for ConstraintFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{self}}}")
    }
}

/// Parses comma-separated abbreviations, case-insensitively. The empty string
/// is the empty set.
impl FromStr for ConstraintFlags {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(ConstraintType::from_abbrev)
            .collect()
    }
}

impl Serialize for ConstraintFlags {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter_canonical().map(ConstraintType::abbrev))
    }
}

impl<'de> Deserialize<'de> for ConstraintFlags {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let items = Vec::<String>::deserialize(deserializer)?;
        items
            .iter()
            .map(|s| ConstraintType::from_abbrev(s))
            .collect::<Result<_, _>>()
            .map_err(serde::de::Error::custom)
    }
}

/// The integer key `x` of a flag combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u32")]
pub struct CombinationCode(u32);

impl CombinationCode {
    pub fn new(x: u64) -> Result<Self, ModelError> {
        if x > MAX_CODE as u64 {
            return Err(ModelError::CodeOutOfRange(x));
        }
        Ok(CombinationCode(x as u32))
    }

    pub const fn value(self) -> u32 {
        self.0
    }
}

impl TryFrom<u64> for CombinationCode {
    type Error = ModelError;

    fn try_from(x: u64) -> Result<Self, Self::Error> {
        CombinationCode::new(x)
    }
}

impl From<CombinationCode> for u32 {
    fn from(c: CombinationCode) -> u32 {
        c.0
    }
}

impl fmt::Display for CombinationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn encode(flags: ConstraintFlags) -> CombinationCode {
    CombinationCode(flags.iter().map(ConstraintType::weight).sum())
}

pub fn decode(x: CombinationCode) -> ConstraintFlags {
    ConstraintFlags::from_bits_truncate(x.0)
}

/// Decodes a raw integer, rejecting values outside the 17-bit range.
pub fn decode_raw(x: u64) -> Result<ConstraintFlags, ModelError> {
    CombinationCode::new(x).map(decode)
}

/// Which reading of a dyadic property applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Null,
}

/// Per-member interpretation of a flag set: the null-tolerant variant of a
/// property is meant whenever `Total` is absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffectiveSemantics {
    flags: ConstraintFlags,
}

impl EffectiveSemantics {
    pub fn flags(&self) -> ConstraintFlags {
        self.flags
    }

    pub fn variant_of(&self, c: ConstraintType) -> Variant {
        variant_for(c, self.flags.contains(Total))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ConstraintType, Variant)> + '_ {
        self.flags.iter().map(|c| (c, self.variant_of(c)))
    }
}

pub fn variant_for(c: ConstraintType, total: bool) -> Variant {
    if c.has_null_variant() && !total {
        Variant::Null
    } else {
        Variant::Plain
    }
}

pub fn effective_semantics(flags: ConstraintFlags) -> EffectiveSemantics {
    EffectiveSemantics { flags }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weights_match_multipliers() {
        let expected = [
            (Total, 1),
            (DefaultValue, 2),
            (NonPrime, 4),
            (OneToOne, 8),
            (Onto, 16),
            (Bijective, 32),
            (Reflexive, 64),
            (Irreflexive, 128),
            (Symmetric, 256),
            (Asymmetric, 512),
            (Idempotent, 1024),
            (Equivalence, 2048),
            (Acyclic, 4096),
            (RepresentativeSystemMapping, 8192),
            (CanonicalInjection, 16384),
            (CanonicalProjection, 32768),
            (SelfMap, 65536),
        ];
        for (c, w) in expected {
            assert_eq!(c.weight(), w, "{c:?}");
        }
        let total: u32 = ConstraintType::ALL.iter().map(|c| c.weight()).sum();
        assert_eq!(total, MAX_CODE);
    }

    #[test]
    fn system_flags() {
        let sys: Vec<_> = ConstraintType::ALL.iter().filter(|c| c.is_system()).collect();
        assert_eq!(sys, [&CanonicalInjection, &CanonicalProjection, &SelfMap]);
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode(ConstraintFlags::of(&[Total])).value(), 1);
        assert_eq!(encode(ConstraintFlags::EMPTY).value(), 0);
        assert_eq!(encode(ConstraintFlags::of(&[SelfMap, Onto])).value(), 65552);
        assert_eq!(
            encode(ConstraintFlags::of(&[SelfMap, Total, OneToOne])).value(),
            65545
        );
    }

    #[test]
    fn decode_examples() {
        let c = |x| decode(CombinationCode::new(x).unwrap());
        assert_eq!(c(65556), ConstraintFlags::of(&[SelfMap, Onto, NonPrime]));
        assert_eq!(c(0), ConstraintFlags::EMPTY);
        assert_eq!(c(24), ConstraintFlags::of(&[OneToOne, Onto]));
        assert!(matches!(
            decode_raw(131072),
            Err(ModelError::CodeOutOfRange(131072))
        ));
    }

    #[test]
    fn round_trip_is_exhaustive_bijection() {
        for x in 0..=MAX_CODE {
            let code = CombinationCode::new(x as u64).unwrap();
            assert_eq!(encode(decode(code)), code);
        }
    }

    #[test]
    fn parse_and_display() {
        let f: ConstraintFlags = "sm, ot,NP,t".parse().unwrap();
        assert_eq!(f, ConstraintFlags::of(&[SelfMap, Onto, NonPrime, Total]));
        assert_eq!(f.to_string(), "SM,OT,NP,T");
        assert_eq!("".parse::<ConstraintFlags>().unwrap(), ConstraintFlags::EMPTY);
        assert!(matches!(
            "SM,XX".parse::<ConstraintFlags>(),
            Err(ModelError::UnknownAbbreviation(s)) if s == "XX"
        ));
    }

    #[test]
    fn effective_semantics_examples() {
        let total_r = effective_semantics(ConstraintFlags::of(&[SelfMap, Total, Reflexive]));
        assert_eq!(total_r.variant_of(Reflexive), Variant::Plain);
        let partial_r = effective_semantics(ConstraintFlags::of(&[SelfMap, Reflexive]));
        assert_eq!(partial_r.variant_of(Reflexive), Variant::Null);
        let acyclic = effective_semantics(ConstraintFlags::of(&[SelfMap, Total, Acyclic]));
        assert_eq!(acyclic.variant_of(Acyclic), Variant::Plain);
        assert_eq!(
            effective_semantics(ConstraintFlags::of(&[SelfMap, Acyclic])).variant_of(Acyclic),
            Variant::Plain
        );
    }

    #[test]
    fn effective_semantics_total_over_all_sets() {
        for x in 0..=MAX_CODE {
            let flags = ConstraintFlags::from_bits_truncate(x);
            let sem = effective_semantics(flags);
            assert_eq!(effective_semantics(sem.flags()), sem);
            for (c, v) in sem.iter() {
                let expect_null = c.has_null_variant() && !flags.contains(Total);
                assert_eq!(v == Variant::Null, expect_null);
            }
        }
    }

    proptest! {
        #[test]
        fn serde_round_trip(bits in 0u32..=MAX_CODE) {
            let f = ConstraintFlags::from_bits_truncate(bits);
            let json = serde_json::to_string(&f).unwrap();
            prop_assert_eq!(serde_json::from_str::<ConstraintFlags>(&json).unwrap(), f);
            prop_assert_eq!(f.to_string().parse::<ConstraintFlags>().unwrap(), f);
        }
    }
}
