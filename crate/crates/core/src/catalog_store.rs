//! Persistent metacatalog: databases, set categories, sets, mappings with
//! composition membership, constraint states, and optional instances.
//!
//! A [`Metacatalog`] holds one database and is stored as one JSON document,
//! `<db>.matbase.json`. A [`Registry`] groups several of them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint_model::{ConstraintFlags, ConstraintType};
use crate::enforcement::ConstraintState;
use crate::rule_catalog::{Compoundness, RuleCatalog};
use crate::semantics::{self, MappingInstance};

use ConstraintType::*;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error("`{name}` already exists in database `{database}`")]
    Conflict { database: String, name: String },
    #[error("composition error: {0}")]
    Composition(String),
    #[error("coherence error: {0}")]
    Coherence(String),
    #[error("unknown {kind} `{id}`")]
    NotFound { kind: &'static str, id: String },
    #[error("`{0}` is a unity mapping and cannot be modified")]
    ReadOnly(String),
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Export(#[from] crate::rule_catalog::CatalogError),
    #[error(transparent)]
    Semantics(#[from] semantics::SemanticsError),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

fn integrity(msg: impl Into<String>) -> StoreError {
    StoreError::Integrity(msg.into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Database {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub path: String,
    #[serde(default)]
    pub db_type: String,
    #[serde(default)]
    pub system: bool,
    #[serde(default)]
    pub semantics: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetCategory {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub system: bool,
    #[serde(default)]
    pub semantics: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SetType {
    Entity,
    Relationship,
    Value,
    Calculated,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetRecord {
    pub id: String,
    pub name: String,
    pub database: String,
    #[serde(default)]
    pub category: Option<String>,
    pub set_type: SetType,
    #[serde(default)]
    pub cardinal: Option<u64>,
    #[serde(default, rename = "static")]
    pub is_static: bool,
    /// Direct superset, if the set is declared a subset of another one.
    #[serde(default)]
    pub subset_of: Option<String>,
    #[serde(default)]
    pub synonym: Option<String>,
    #[serde(default)]
    pub semantics: String,
    /// Columns carried without interpretation (form names, predicates, ...).
    #[serde(default)]
    pub annotations: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemKind {
    #[serde(default)]
    pub canonical_projection: bool,
    #[serde(default)]
    pub canonical_injection: bool,
    #[serde(default)]
    pub unity: bool,
}

impl SystemKind {
    pub fn any(&self) -> bool {
        self.canonical_projection || self.canonical_injection || self.unity
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingDescriptor {
    pub id: String,
    pub name: String,
    pub database: String,
    pub domain: String,
    pub codomain: String,
    /// Derived from domain, codomain and set inclusions; checked on load.
    pub is_self_map: bool,
    pub is_compound: bool,
    /// Members in application order: `members[0]` is applied first.
    #[serde(default)]
    pub members: Vec<String>,
    #[serde(default)]
    pub system: SystemKind,
    #[serde(default = "one")]
    pub arity: u32,
    #[serde(default)]
    pub annotations: BTreeMap<String, String>,
}

fn one() -> u32 {
    1
}

impl MappingDescriptor {
    pub fn compoundness(&self) -> Compoundness {
        if self.is_compound {
            Compoundness::Compound
        } else {
            Compoundness::Single
        }
    }

    pub fn is_unity(&self) -> bool {
        self.system.unity
    }
}

/// How a new atomic mapping is flagged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MappingKind {
    Plain,
    CanonicalProjection,
    CanonicalInjection,
}

/// Flags carried by every unity mapping.
pub fn unity_flags() -> ConstraintFlags {
    ConstraintFlags::of(&[
        SelfMap,
        Total,
        OneToOne,
        Onto,
        Bijective,
        Reflexive,
        Symmetric,
        Idempotent,
        Equivalence,
        RepresentativeSystemMapping,
    ])
}

/// One database and everything it describes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metacatalog {
    pub database: Database,
    #[serde(default)]
    pub categories: BTreeMap<String, SetCategory>,
    #[serde(default)]
    pub sets: BTreeMap<String, SetRecord>,
    #[serde(default)]
    pub mappings: BTreeMap<String, MappingDescriptor>,
    #[serde(default)]
    pub states: BTreeMap<String, ConstraintState>,
    #[serde(default)]
    pub instances: BTreeMap<String, MappingInstance>,
    /// Composition checks a DBMS cannot express as a mapping constraint.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub advisories: BTreeMap<String, Vec<String>>,
    next_id: u64,
}

impl Metacatalog {
    /// Database ids appear inside every object id, so they are restricted to
    /// ASCII letters, digits, `_` and `-`.
    pub fn new(id: &str, name: &str) -> Result<Self> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(integrity(format!("invalid database id `{id}`")));
        }
        Ok(Metacatalog {
            database: Database {
                id: id.to_string(),
                name: name.to_string(),
                path: String::new(),
                db_type: String::new(),
                system: false,
                semantics: String::new(),
            },
            categories: BTreeMap::new(),
            sets: BTreeMap::new(),
            mappings: BTreeMap::new(),
            states: BTreeMap::new(),
            instances: BTreeMap::new(),
            advisories: BTreeMap::new(),
            next_id: 1,
        })
    }

    pub fn id(&self) -> &str {
        &self.database.id
    }

    fn fresh_id(&mut self, prefix: char) -> String {
        let id = format!("{}.{}{}", self.database.id, prefix, self.next_id);
        self.next_id += 1;
        id
    }

    pub fn add_category(&mut self, name: &str) -> Result<SetCategory> {
        if self.categories.values().any(|c| c.name == name) {
            return Err(StoreError::Conflict {
                database: self.database.id.clone(),
                name: name.to_string(),
            });
        }
        let cat = SetCategory {
            id: self.fresh_id('c'),
            name: name.to_string(),
            system: false,
            semantics: String::new(),
        };
        self.categories.insert(cat.id.clone(), cat.clone());
        Ok(cat)
    }

    pub fn set(&self, id: &str) -> Result<&SetRecord> {
        self.sets.get(id).ok_or_else(|| StoreError::NotFound {
            kind: "set",
            id: id.to_string(),
        })
    }

    pub fn set_by_name(&self, name: &str) -> Option<&SetRecord> {
        self.sets.values().find(|s| s.name == name)
    }

    pub fn mapping(&self, id: &str) -> Result<&MappingDescriptor> {
        self.mappings.get(id).ok_or_else(|| StoreError::NotFound {
            kind: "mapping",
            id: id.to_string(),
        })
    }

    pub fn mapping_by_name(&self, name: &str) -> Option<&MappingDescriptor> {
        self.mappings.values().find(|m| m.name == name)
    }

    pub fn state(&self, mapping: &str) -> Result<&ConstraintState> {
        self.states.get(mapping).ok_or_else(|| StoreError::NotFound {
            kind: "constraint state",
            id: mapping.to_string(),
        })
    }

    /// Registers a set and its unity mapping `1_<NAME>`.
    pub fn register_set(&mut self, name: &str, set_type: SetType) -> Result<SetRecord> {
        if self.set_by_name(name).is_some() {
            return Err(StoreError::Conflict {
                database: self.database.id.clone(),
                name: name.to_string(),
            });
        }
        let set = SetRecord {
            id: self.fresh_id('s'),
            name: name.to_string(),
            database: self.database.id.clone(),
            category: None,
            set_type,
            cardinal: None,
            is_static: false,
            subset_of: None,
            synonym: None,
            semantics: String::new(),
            annotations: BTreeMap::new(),
        };
        self.sets.insert(set.id.clone(), set.clone());
        let unity = MappingDescriptor {
            id: self.fresh_id('m'),
            name: format!("1_{name}"),
            database: self.database.id.clone(),
            domain: set.id.clone(),
            codomain: set.id.clone(),
            is_self_map: true,
            is_compound: false,
            members: Vec::new(),
            system: SystemKind {
                unity: true,
                ..SystemKind::default()
            },
            arity: 1,
            annotations: BTreeMap::new(),
        };
        self.states
            .insert(unity.id.clone(), ConstraintState::asserted(&unity.id, unity_flags()));
        self.mappings.insert(unity.id.clone(), unity);
        Ok(set)
    }

    /// Whether `sub` equals `sup` or reaches it through `subset_of` links.
    pub fn is_subset(&self, sub: &str, sup: &str) -> bool {
        let mut cur = Some(sub.to_string());
        let mut seen = BTreeSet::new();
        while let Some(id) = cur {
            if id == sup {
                return true;
            }
            if !seen.insert(id.clone()) {
                return false;
            }
            cur = self.sets.get(&id).and_then(|s| s.subset_of.clone());
        }
        false
    }

    /// A mapping is a self-map when its domain and codomain coincide or one
    /// includes the other.
    pub fn derive_self_map(&self, domain: &str, codomain: &str) -> bool {
        self.is_subset(domain, codomain) || self.is_subset(codomain, domain)
    }

    /// Registers an atomic mapping of the given kind.
    pub fn register_mapping(
        &mut self,
        name: &str,
        domain: &str,
        codomain: &str,
        kind: MappingKind,
    ) -> Result<MappingDescriptor> {
        let dom = self.set(domain)?.clone();
        self.set(codomain)?;
        self.ensure_unused_mapping_name(name)?;
        let is_self_map = self.derive_self_map(domain, codomain);
        let mut system = SystemKind::default();
        let mut flags = ConstraintFlags::EMPTY;
        match kind {
            MappingKind::Plain => {}
            MappingKind::CanonicalProjection => {
                if dom.set_type != SetType::Relationship {
                    return Err(StoreError::Coherence(format!(
                        "canonical projection `{name}` needs a relationship domain, `{}` is {:?}",
                        dom.name, dom.set_type
                    )));
                }
                if is_self_map {
                    return Err(StoreError::Coherence(format!(
                        "canonical projection `{name}` would be a self-map; no relation may be defined over itself"
                    )));
                }
                system.canonical_projection = true;
                flags = ConstraintFlags::of(&[CanonicalProjection, Total]);
            }
            MappingKind::CanonicalInjection => {
                if domain == codomain || !self.is_subset(domain, codomain) {
                    return Err(StoreError::Coherence(format!(
                        "canonical injection `{name}` needs a domain strictly included in its codomain"
                    )));
                }
                system.canonical_injection = true;
                flags = ConstraintFlags::of(&[CanonicalInjection, Total, OneToOne, Reflexive, Idempotent]);
            }
        }
        if is_self_map {
            flags.insert(SelfMap);
        }
        let m = MappingDescriptor {
            id: self.fresh_id('m'),
            name: name.to_string(),
            database: self.database.id.clone(),
            domain: domain.to_string(),
            codomain: codomain.to_string(),
            is_self_map,
            is_compound: false,
            members: Vec::new(),
            system,
            arity: 1,
            annotations: BTreeMap::new(),
        };
        self.states.insert(m.id.clone(), ConstraintState::asserted(&m.id, flags));
        self.mappings.insert(m.id.clone(), m.clone());
        Ok(m)
    }

    fn ensure_unused_mapping_name(&self, name: &str) -> Result<()> {
        if self.mapping_by_name(name).is_some() {
            return Err(StoreError::Conflict {
                database: self.database.id.clone(),
                name: name.to_string(),
            });
        }
        Ok(())
    }

    fn check_chain(&self, members: &[String]) -> Result<(String, String)> {
        if members.len() < 2 {
            return Err(StoreError::Composition(
                "a compound mapping needs at least two members".into(),
            ));
        }
        let ms = members
            .iter()
            .map(|id| self.mapping(id))
            .collect::<Result<Vec<_>>>()?;
        if let Some(m) = ms.iter().find(|m| m.is_compound) {
            return Err(StoreError::Composition(format!(
                "member `{}` is itself compound; only atomic mappings compose",
                m.name
            )));
        }
        for w in ms.windows(2) {
            if !self.is_subset(&w[0].codomain, &w[1].domain) {
                return Err(StoreError::Composition(format!(
                    "codomain of `{}` is not included in the domain of `{}`",
                    w[0].name, w[1].name
                )));
            }
        }
        Ok((ms[0].domain.clone(), ms[ms.len() - 1].codomain.clone()))
    }

    /// Registers the composition of `members`, listed in application order.
    pub fn register_compound(&mut self, name: &str, members: &[String]) -> Result<MappingDescriptor> {
        let (domain, codomain) = self.check_chain(members)?;
        self.ensure_unused_mapping_name(name)?;
        let is_self_map = self.derive_self_map(&domain, &codomain);
        let m = MappingDescriptor {
            id: self.fresh_id('m'),
            name: name.to_string(),
            database: self.database.id.clone(),
            domain,
            codomain,
            is_self_map,
            is_compound: true,
            members: members.to_vec(),
            system: SystemKind::default(),
            arity: 1,
            annotations: BTreeMap::new(),
        };
        let flags = if is_self_map {
            ConstraintFlags::of(&[SelfMap])
        } else {
            ConstraintFlags::EMPTY
        };
        self.states.insert(m.id.clone(), ConstraintState::asserted(&m.id, flags));
        self.mappings.insert(m.id.clone(), m.clone());
        Ok(m)
    }

    /// Compounds that list `member`.
    pub fn compounds_of(&self, member: &str) -> Vec<&MappingDescriptor> {
        self.mappings
            .values()
            .filter(|m| m.is_compound && m.members.iter().any(|x| x == member))
            .collect()
    }

    /// Mappings linked to `id` through composition membership, `id` included.
    pub fn component(&self, id: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![id.to_string()];
        while let Some(cur) = stack.pop() {
            if !seen.insert(cur.clone()) {
                continue;
            }
            if let Some(m) = self.mappings.get(&cur) {
                stack.extend(m.members.iter().cloned());
            }
            stack.extend(self.compounds_of(&cur).into_iter().map(|c| c.id.clone()));
        }
        seen
    }

    /// The stored instance, or for a compound the composition of its
    /// members' instances when all of them are known.
    pub fn effective_instance(&self, mapping: &str) -> Option<MappingInstance> {
        if let Some(inst) = self.instances.get(mapping) {
            return Some(inst.clone());
        }
        let m = self.mappings.get(mapping)?;
        if !m.is_compound {
            return None;
        }
        let mut acc = self.instances.get(m.members.first()?)?.clone();
        for next in &m.members[1..] {
            acc = semantics::compose(self.instances.get(next)?, &acc).ok()?;
        }
        Some(acc)
    }

    pub fn set_instance(&mut self, mapping: &str, instance: MappingInstance) -> Result<()> {
        let m = self.mapping(mapping)?;
        if m.is_unity() {
            return Err(StoreError::ReadOnly(m.name.clone()));
        }
        self.instances.insert(mapping.to_string(), instance);
        Ok(())
    }

    /// Checks referential integrity, derived flags, and unity mappings.
    pub fn validate(&self) -> Result<()> {
        let db = &self.database.id;
        for s in self.sets.values() {
            if &s.database != db {
                return Err(integrity(format!("set `{}` belongs to unknown database `{}`", s.id, s.database)));
            }
            if let Some(c) = &s.category {
                if !self.categories.contains_key(c) {
                    return Err(integrity(format!("set `{}` refers to unknown category `{c}`", s.id)));
                }
            }
            if let Some(sup) = &s.subset_of {
                if !self.sets.contains_key(sup) {
                    return Err(integrity(format!("set `{}` is a subset of unknown set `{sup}`", s.id)));
                }
            }
            let unities = self
                .mappings
                .values()
                .filter(|m| m.is_unity() && m.domain == s.id)
                .count();
            if unities != 1 {
                return Err(integrity(format!("set `{}` has {unities} unity mappings", s.id)));
            }
        }
        for m in self.mappings.values() {
            if &m.database != db {
                return Err(integrity(format!("mapping `{}` belongs to unknown database `{}`", m.id, m.database)));
            }
            for end in [&m.domain, &m.codomain] {
                if !self.sets.contains_key(end) {
                    return Err(integrity(format!("mapping `{}` refers to unknown set `{end}`", m.id)));
                }
            }
            for member in &m.members {
                if !self.mappings.contains_key(member) {
                    return Err(integrity(format!("mapping `{}` has unknown member `{member}`", m.id)));
                }
            }
            if m.is_compound != (m.members.len() > 1) {
                return Err(integrity(format!("mapping `{}` has an inconsistent compound flag", m.id)));
            }
            if m.is_compound {
                let (d, c) = self
                    .check_chain(&m.members)
                    .map_err(|e| integrity(format!("mapping `{}`: {e}", m.id)))?;
                if d != m.domain || c != m.codomain {
                    return Err(integrity(format!("mapping `{}` disagrees with its members' ends", m.id)));
                }
            }
            if m.is_self_map != self.derive_self_map(&m.domain, &m.codomain) {
                return Err(integrity(format!("mapping `{}` has a stale self-map flag", m.id)));
            }
            let state = self
                .states
                .get(&m.id)
                .ok_or_else(|| integrity(format!("mapping `{}` has no constraint state", m.id)))?;
            if m.is_unity() && state.flags() != unity_flags() {
                return Err(integrity(format!("unity mapping `{}` has altered flags", m.id)));
            }
            if state.flags().contains(SelfMap) != m.is_self_map {
                return Err(integrity(format!("mapping `{}` disagrees with its self-map constraint", m.id)));
            }
        }
        for id in self.states.keys().chain(self.instances.keys()).chain(self.advisories.keys()) {
            if !self.mappings.contains_key(id) {
                return Err(integrity(format!("state or instance for unknown mapping `{id}`")));
            }
        }
        for (id, state) in &self.states {
            if &state.mapping != id {
                return Err(integrity(format!("state keyed `{id}` names mapping `{}`", state.mapping)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self).expect("metacatalog serializes") + "\n")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let meta: Metacatalog = serde_json::from_str(text).map_err(|e| StoreError::Parse {
            path: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn file_name(&self) -> String {
        format!("{}.matbase.json", self.database.id)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Several databases, each persisted to its own file in one directory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    pub databases: BTreeMap<String, Metacatalog>,
}

impl Registry {
    pub fn insert(&mut self, meta: Metacatalog) -> Result<()> {
        let id = meta.database.id.clone();
        if self.databases.contains_key(&id) {
            return Err(StoreError::Conflict {
                database: id.clone(),
                name: id,
            });
        }
        self.databases.insert(id, meta);
        Ok(())
    }

    pub fn database_mut(&mut self, id: &str) -> Result<&mut Metacatalog> {
        self.databases
            .get_mut(id)
            .ok_or_else(|| integrity(format!("unknown database `{id}`")))
    }

    /// Database owning a mapping id.
    pub fn owner_of(&self, mapping: &str) -> Option<&str> {
        let db = mapping.split('.').next()?;
        self.databases
            .get(db)
            .filter(|m| m.mappings.contains_key(mapping))
            .map(|m| m.database.id.as_str())
    }

    pub fn save_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|source| StoreError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        self.databases
            .values()
            .map(|m| {
                let path = dir.join(m.file_name());
                m.save(&path)?;
                Ok(path)
            })
            .collect()
    }

    /// Loads every `*.matbase.json` file of `dir`, in file name order.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let io = |source| StoreError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".matbase.json"))
            .collect();
        paths.sort();
        let mut reg = Registry::default();
        for p in paths {
            reg.insert(Metacatalog::load(&p)?)?;
        }
        Ok(reg)
    }
}

type TableWriter = fn(&RuleCatalog, &mut Vec<u8>) -> Result<(), crate::rule_catalog::CatalogError>;

/// Writes `corollaries.csv`, `smccoherencies.csv` and `smcredundancies.csv`.
pub fn write_rule_tables(cat: &RuleCatalog, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| StoreError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    let tables: [(&str, TableWriter); 3] = [
        ("corollaries.csv", |c, w| c.write_corollaries_csv(w)),
        ("smccoherencies.csv", |c, w| c.write_coherencies_csv(w)),
        ("smcredundancies.csv", |c, w| c.write_redundancies_csv(w)),
    ];
    for (name, write) in tables {
        let mut buf = Vec::new();
        write(cat, &mut buf)?;
        let path = dir.join(name);
        write_file(&path, &buf)?;
        written.push(path);
    }
    Ok(written)
}

/// Sample database with the STATES schema: sets STATES and CITIES, their
/// unity mappings, StateCapital : STATES -> CITIES, State : CITIES -> STATES
/// and the compound self-map State∘StateCapital.
pub fn states_fixture() -> Metacatalog {
    let mut meta = Metacatalog::new("geo", "Geography").expect("valid id");
    let states = meta.register_set("STATES", SetType::Entity).expect("fresh");
    let cities = meta.register_set("CITIES", SetType::Entity).expect("fresh");
    let capital = meta
        .register_mapping("StateCapital", &states.id, &cities.id, MappingKind::Plain)
        .expect("fresh");
    let state = meta
        .register_mapping("State", &cities.id, &states.id, MappingKind::Plain)
        .expect("fresh");
    meta.register_compound("State\u{2218}StateCapital", &[capital.id, state.id])
        .expect("chain");
    meta
}
