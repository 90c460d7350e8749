//! Finite mapping instances with explicit nulls and the truth value of every
//! constraint type on them.
//!
//! An instance stores its graph as codomain indices, `None` standing for the
//! null value. Dyadic properties are evaluated on the "endo" view of a
//! self-map, where every non-null image is re-expressed as a domain index.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint_model::{effective_semantics, ConstraintFlags, ConstraintType, Variant};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SemanticsError {
    #[error("set `{set}` lists element `{element}` more than once")]
    DuplicateElement { set: String, element: String },
    #[error("`{element}` is not an element of `{set}`")]
    NotAnElement { set: String, element: String },
    #[error("domain element `{0}` has no image")]
    MissingImage(String),
    #[error("{constraint} requires a self-map, but image `{element}` lies outside the domain")]
    NotSelfMap { constraint: String, element: String },
    #[error("cannot compose: image value `{0}` is outside the outer mapping's domain")]
    Composition(String),
    #[error("malformed instance: {0}")]
    Parse(String),
}

pub type Result<T, E = SemanticsError> = std::result::Result<T, E>;

/// A named finite set of opaque, pairwise distinct element ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiniteSet {
    pub name: String,
    elements: Vec<String>,
}

impl FiniteSet {
    pub fn new<I, S>(name: impl Into<String>, elements: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let name = name.into();
        let elements: Vec<String> = elements.into_iter().map(Into::into).collect();
        let mut seen = HashSet::with_capacity(elements.len());
        for e in &elements {
            if !seen.insert(e.as_str()) {
                return Err(SemanticsError::DuplicateElement {
                    set: name,
                    element: e.clone(),
                });
            }
        }
        Ok(FiniteSet { name, elements })
    }

    /// The set `{"1", …, "n"}`.
    pub fn numbered(name: impl Into<String>, n: usize) -> Self {
        FiniteSet {
            name: name.into(),
            elements: (1..=n).map(|i| i.to_string()).collect(),
        }
    }

    pub fn elements(&self) -> &[String] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn position(&self, element: &str) -> Option<usize> {
        self.elements.iter().position(|e| e == element)
    }

    pub fn contains(&self, element: &str) -> bool {
        self.position(element).is_some()
    }

    fn index(&self) -> HashMap<&str, usize> {
        self.elements
            .iter()
            .enumerate()
            .map(|(i, e)| (e.as_str(), i))
            .collect()
    }

    /// Same elements, regardless of order.
    pub fn same_elements(&self, other: &FiniteSet) -> bool {
        self.len() == other.len() && self.elements.iter().all(|e| other.contains(e))
    }
}

/// A partition of a carrier set into disjoint nonempty blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub blocks: Vec<Vec<String>>,
}

/// A finite partial mapping `domain -> codomain ∪ {null}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "InstanceRepr", try_from = "InstanceRepr")]
pub struct MappingInstance {
    domain: FiniteSet,
    codomain: FiniteSet,
    graph: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
struct InstanceRepr {
    domain: FiniteSet,
    codomain: FiniteSet,
    map: BTreeMap<String, Option<String>>,
}

impl From<MappingInstance> for InstanceRepr {
    fn from(m: MappingInstance) -> Self {
        let map = m
            .domain
            .elements
            .iter()
            .zip(&m.graph)
            .map(|(x, y)| (x.clone(), y.map(|j| m.codomain.elements[j].clone())))
            .collect();
        InstanceRepr {
            domain: m.domain,
            codomain: m.codomain,
            map,
        }
    }
}

impl TryFrom<InstanceRepr> for MappingInstance {
    type Error = SemanticsError;

    fn try_from(r: InstanceRepr) -> Result<Self> {
        let domain = FiniteSet::new(r.domain.name, r.domain.elements)?;
        let codomain = FiniteSet::new(r.codomain.name, r.codomain.elements)?;
        MappingInstance::from_pairs(domain, codomain, r.map)
    }
}

impl MappingInstance {
    /// Builds an instance from a graph of codomain indices.
    pub fn from_indices(domain: FiniteSet, codomain: FiniteSet, graph: Vec<Option<usize>>) -> Result<Self> {
        if graph.len() != domain.len() {
            let missing = domain
                .elements
                .get(graph.len())
                .cloned()
                .unwrap_or_else(|| format!("#{}", domain.len()));
            return Err(SemanticsError::MissingImage(missing));
        }
        if let Some(bad) = graph.iter().flatten().find(|&&j| j >= codomain.len()) {
            return Err(SemanticsError::NotAnElement {
                set: codomain.name.clone(),
                element: format!("#{bad}"),
            });
        }
        Ok(MappingInstance {
            domain,
            codomain,
            graph,
        })
    }

    /// Self-map over `set` with images given as element indices.
    pub fn self_map(set: FiniteSet, graph: Vec<Option<usize>>) -> Result<Self> {
        Self::from_indices(set.clone(), set, graph)
    }

    /// Builds an instance from `element -> image` pairs. Every domain element
    /// must be mapped, and every key must belong to the domain.
    pub fn from_pairs<I, K, V>(domain: FiniteSet, codomain: FiniteSet, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, Option<V>)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let dom_index = domain.index();
        let cod_index = codomain.index();
        let mut graph: Vec<Option<Option<usize>>> = vec![None; domain.len()];
        for (k, v) in pairs {
            let k = k.as_ref();
            let &i = dom_index.get(k).ok_or_else(|| SemanticsError::NotAnElement {
                set: domain.name.clone(),
                element: k.to_string(),
            })?;
            let image = match v {
                None => None,
                Some(v) => {
                    let v = v.as_ref();
                    Some(*cod_index.get(v).ok_or_else(|| SemanticsError::NotAnElement {
                        set: codomain.name.clone(),
                        element: v.to_string(),
                    })?)
                }
            };
            graph[i] = Some(image);
        }
        let graph = graph
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.ok_or_else(|| SemanticsError::MissingImage(domain.elements[i].clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(MappingInstance {
            domain,
            codomain,
            graph,
        })
    }

    pub fn domain(&self) -> &FiniteSet {
        &self.domain
    }

    pub fn codomain(&self) -> &FiniteSet {
        &self.codomain
    }

    /// Codomain indices per domain element.
    pub fn graph(&self) -> &[Option<usize>] {
        &self.graph
    }

    /// Image of a domain element: `None` if not in the domain, `Some(None)` for null.
    pub fn value_of(&self, x: &str) -> Option<Option<&str>> {
        let i = self.domain.position(x)?;
        Some(self.graph[i].map(|j| self.codomain.elements[j].as_str()))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, Option<&str>)> + '_ {
        self.domain
            .elements
            .iter()
            .zip(&self.graph)
            .map(|(x, y)| (x.as_str(), y.map(|j| self.codomain.elements[j].as_str())))
    }

    /// Re-expresses the graph over domain indices, failing if some non-null
    /// image is not a domain element.
    pub fn endo(&self) -> Result<Vec<Option<usize>>> {
        if self.domain.elements == self.codomain.elements {
            return Ok(self.graph.clone());
        }
        let dom_index = self.domain.index();
        self.graph
            .iter()
            .map(|y| match y {
                None => Ok(None),
                Some(j) => {
                    let e = &self.codomain.elements[*j];
                    dom_index
                        .get(e.as_str())
                        .map(|&i| Some(i))
                        .ok_or_else(|| SemanticsError::NotSelfMap {
                            constraint: "self-map view".into(),
                            element: e.clone(),
                        })
                }
            })
            .collect()
    }

    pub fn is_self_map(&self) -> bool {
        self.endo().is_ok()
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.endo(), Ok(s) if is_identity(&s))
    }
}

impl fmt::Display for MappingInstance {
    /// Inline `a>b,c>null` form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (x, y) in self.pairs() {
            if !first {
                f.write_str(",")?;
            }
            first = false;
            write!(f, "{x}>{}", y.unwrap_or("null"))?;
        }
        Ok(())
    }
}

pub fn identity_of(s: &FiniteSet) -> MappingInstance {
    MappingInstance {
        domain: s.clone(),
        codomain: s.clone(),
        graph: (0..s.len()).map(Some).collect(),
    }
}

/// Non-null values attained by the graph, in codomain order.
pub fn image(f: &MappingInstance) -> Vec<String> {
    let mut hit = vec![false; f.codomain.len()];
    for j in f.graph.iter().flatten() {
        hit[*j] = true;
    }
    f.codomain
        .elements
        .iter()
        .zip(hit)
        .filter(|(_, h)| *h)
        .map(|(e, _)| e.clone())
        .collect()
}

pub fn restrict<S: AsRef<str>>(f: &MappingInstance, b: &[S]) -> Result<MappingInstance> {
    let mut elements = Vec::with_capacity(b.len());
    let mut graph = Vec::with_capacity(b.len());
    for x in b {
        let x = x.as_ref();
        let i = f.domain.position(x).ok_or_else(|| SemanticsError::NotAnElement {
            set: f.domain.name.clone(),
            element: x.to_string(),
        })?;
        elements.push(x.to_string());
        graph.push(f.graph[i]);
    }
    let domain = FiniteSet::new(f.domain.name.clone(), elements)?;
    Ok(MappingInstance {
        domain,
        codomain: f.codomain.clone(),
        graph,
    })
}

/// `g ∘ f`: apply `f` first, then `g`.
pub fn compose(g: &MappingInstance, f: &MappingInstance) -> Result<MappingInstance> {
    let g_index = g.domain.index();
    let graph = f
        .graph
        .iter()
        .map(|y| match y {
            None => Ok(None),
            Some(j) => {
                let e = &f.codomain.elements[*j];
                let &i = g_index
                    .get(e.as_str())
                    .ok_or_else(|| SemanticsError::Composition(e.clone()))?;
                Ok(g.graph[i])
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MappingInstance {
        domain: f.domain.clone(),
        codomain: g.codomain.clone(),
        graph,
    })
}

/// Partition of the domain by equal images; null images share one block.
pub fn kernel_quotient(sm: &MappingInstance) -> Result<Partition> {
    sm.endo()?;
    let mut order: Vec<Option<usize>> = Vec::new();
    let mut blocks: HashMap<Option<usize>, Vec<String>> = HashMap::new();
    for (x, y) in sm.domain.elements.iter().zip(&sm.graph) {
        blocks
            .entry(*y)
            .or_insert_with(|| {
                order.push(*y);
                Vec::new()
            })
            .push(x.clone());
    }
    Ok(Partition {
        blocks: order.into_iter().map(|k| blocks.remove(&k).unwrap_or_default()).collect(),
    })
}

/// Truth value of `c` (under `variant`) on `f`. Declaration-only types are
/// always true; dyadic types require a self-map instance.
pub fn check_constraint(f: &MappingInstance, c: ConstraintType, variant: Variant) -> Result<bool> {
    use ConstraintType::*;
    Ok(match c {
        Total => is_total(&f.graph),
        OneToOne => is_one_to_one(&f.graph),
        Onto => is_onto(&f.graph, f.codomain.len()),
        Bijective => is_one_to_one(&f.graph) && is_onto(&f.graph, f.codomain.len()),
        DefaultValue | NonPrime | CanonicalInjection | CanonicalProjection | SelfMap => true,
        _ => {
            let s = f.endo().map_err(|e| match e {
                SemanticsError::NotSelfMap { element, .. } => SemanticsError::NotSelfMap {
                    constraint: c.display_name().to_string(),
                    element,
                },
                other => other,
            })?;
            check_dyadic(&s, c, variant)
        }
    })
}

/// Dyadic check on a self-map given as domain indices.
pub fn check_dyadic(s: &[Option<usize>], c: ConstraintType, variant: Variant) -> bool {
    use ConstraintType::*;
    let null = variant == Variant::Null;
    match c {
        Reflexive => is_reflexive(s, null),
        Irreflexive => is_irreflexive(s),
        Symmetric => is_symmetric(s, null),
        Asymmetric => is_asymmetric(s),
        Idempotent => is_idempotent(s, null),
        Equivalence => is_reflexive(s, null) && is_symmetric(s, null) && is_idempotent(s, null),
        Acyclic => is_acyclic(s),
        RepresentativeSystemMapping => is_representative(s, null),
        Total => is_total(s),
        OneToOne => is_one_to_one(s),
        Onto => is_onto(s, s.len()),
        Bijective => is_one_to_one(s) && is_onto(s, s.len()),
        DefaultValue | NonPrime | CanonicalInjection | CanonicalProjection | SelfMap => true,
    }
}

/// Every member of `flags` holds, each read in its effective variant.
pub fn satisfies_set(f: &MappingInstance, flags: ConstraintFlags) -> Result<bool> {
    for (c, v) in effective_semantics(flags).iter() {
        if !check_constraint(f, c, v)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Per-member truth values, in canonical order.
pub fn check_report(f: &MappingInstance, flags: ConstraintFlags) -> Result<Vec<(ConstraintType, bool)>> {
    let sem = effective_semantics(flags);
    flags
        .iter_canonical()
        .map(|c| Ok((c, check_constraint(f, c, sem.variant_of(c))?)))
        .collect()
}

pub fn is_total(s: &[Option<usize>]) -> bool {
    s.iter().all(Option::is_some)
}

pub fn is_one_to_one(s: &[Option<usize>]) -> bool {
    let mut seen = HashSet::with_capacity(s.len());
    s.iter().flatten().all(|y| seen.insert(*y))
}

pub fn is_onto(s: &[Option<usize>], codomain_len: usize) -> bool {
    let mut hit = vec![false; codomain_len];
    for y in s.iter().flatten() {
        hit[*y] = true;
    }
    hit.into_iter().all(|h| h)
}

pub fn is_identity(s: &[Option<usize>]) -> bool {
    s.iter().enumerate().all(|(x, y)| *y == Some(x))
}

pub fn is_reflexive(s: &[Option<usize>], null: bool) -> bool {
    s.iter()
        .enumerate()
        .all(|(x, y)| *y == Some(x) || (null && y.is_none()))
}

pub fn is_irreflexive(s: &[Option<usize>]) -> bool {
    s.iter().enumerate().all(|(x, y)| *y != Some(x))
}

/// Plain: total and `s(s(x)) = x`. Null variant: every non-null pair
/// `s(x) = y` is matched by `s(y) = x`.
pub fn is_symmetric(s: &[Option<usize>], null: bool) -> bool {
    s.iter().enumerate().all(|(x, y)| match y {
        Some(y) => s[*y] == Some(x),
        None => null,
    })
}

pub fn is_asymmetric(s: &[Option<usize>]) -> bool {
    s.iter().enumerate().all(|(x, y)| match y {
        Some(y) => s[*y] != Some(x),
        None => true,
    })
}

/// Plain: total and `s(s(x)) = s(x)`. Null variant: `s(s(x))` is `s(x)` or null.
pub fn is_idempotent(s: &[Option<usize>], null: bool) -> bool {
    s.iter().all(|y| match y {
        Some(y) => s[*y] == Some(*y) || (null && s[*y].is_none()),
        None => null,
    })
}

/// `s(s(x)) ≠ s(x)` wherever `s(s(x))` is defined.
pub fn is_anti_idempotent(s: &[Option<usize>]) -> bool {
    s.iter().all(|y| match y {
        Some(y) => match s[*y] {
            Some(z) => z != *y,
            None => true,
        },
        None => true,
    })
}

/// Idempotence with respect to the kernel partition: every defined image is
/// a fixed point. The null variant tolerates null images but not null
/// second iterates.
pub fn is_representative(s: &[Option<usize>], null: bool) -> bool {
    s.iter().all(|y| match y {
        Some(y) => s[*y] == Some(*y),
        None => null,
    })
}

/// No orbit revisits an element. Each element is walked at most once thanks
/// to the `done` memo.
pub fn is_acyclic(s: &[Option<usize>]) -> bool {
    const NEW: u8 = 0;
    const ON_PATH: u8 = 1;
    const DONE: u8 = 2;
    let mut state = vec![NEW; s.len()];
    let mut path = Vec::new();
    for start in 0..s.len() {
        if state[start] != NEW {
            continue;
        }
        let mut x = Some(start);
        while let Some(cur) = x {
            match state[cur] {
                ON_PATH => return false,
                DONE => break,
                _ => {
                    state[cur] = ON_PATH;
                    path.push(cur);
                    x = s[cur];
                }
            }
        }
        for p in path.drain(..) {
            state[p] = DONE;
        }
    }
    true
}

/// Parses the inline `a>b,c>null` form into a self-map over the listed keys.
pub fn parse_inline(text: &str) -> Result<MappingInstance> {
    let mut keys = Vec::new();
    let mut pairs = Vec::new();
    for item in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (k, v) = item
            .split_once('>')
            .ok_or_else(|| SemanticsError::Parse(format!("expected `x>y`, found `{item}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(SemanticsError::Parse(format!("empty element in `{item}`")));
        }
        let v = if v.eq_ignore_ascii_case("null") {
            None
        } else {
            Some(v.to_string())
        };
        keys.push(k.to_string());
        pairs.push((k.to_string(), v));
    }
    let set = FiniteSet::new("S", keys)?;
    MappingInstance::from_pairs(set.clone(), set, pairs)
}

#[derive(Deserialize)]
struct InstanceFile {
    set: Option<Vec<serde_json::Value>>,
    domain: Option<Vec<serde_json::Value>>,
    codomain: Option<Vec<serde_json::Value>>,
    map: BTreeMap<String, serde_json::Value>,
}

fn element_id(v: &serde_json::Value) -> Result<Option<String>> {
    match v {
        serde_json::Value::Null => Ok(None),
        serde_json::Value::String(s) => Ok(Some(s.clone())),
        serde_json::Value::Number(n) => Ok(Some(n.to_string())),
        other => Err(SemanticsError::Parse(format!(
            "element ids must be strings or numbers, found {other}"
        ))),
    }
}

fn id_list(name: &str, values: &[serde_json::Value]) -> Result<FiniteSet> {
    let ids = values
        .iter()
        .map(|v| element_id(v)?.ok_or_else(|| SemanticsError::Parse("null is not an element".into())))
        .collect::<Result<Vec<_>>>()?;
    FiniteSet::new(name, ids)
}

/// Parses the JSON instance format: either `{"set": [...], "map": {...}}`
/// for self-maps or `{"domain": [...], "codomain": [...], "map": {...}}`.
/// Ids may be strings or numbers.
pub fn parse_instance_json(text: &str) -> Result<MappingInstance> {
    let file: InstanceFile =
        serde_json::from_str(text).map_err(|e| SemanticsError::Parse(e.to_string()))?;
    let (domain, codomain) = match (&file.set, &file.domain, &file.codomain) {
        (Some(set), None, None) => {
            let s = id_list("S", set)?;
            (s.clone(), s)
        }
        (None, Some(d), Some(c)) => (id_list("D", d)?, id_list("C", c)?),
        _ => {
            return Err(SemanticsError::Parse(
                "expected either `set` or both `domain` and `codomain`".into(),
            ))
        }
    };
    let pairs = file
        .map
        .iter()
        .map(|(k, v)| Ok((k.clone(), element_id(v)?)))
        .collect::<Result<Vec<_>>>()?;
    MappingInstance::from_pairs(domain, codomain, pairs)
}

/// JSON instance format with string ids; self-maps use the `set` form.
pub fn instance_to_json(f: &MappingInstance) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> = f
        .pairs()
        .map(|(x, y)| (x.to_string(), y.map_or(serde_json::Value::Null, |y| y.into())))
        .collect();
    if f.domain.elements == f.codomain.elements {
        serde_json::json!({ "set": f.domain.elements, "map": map })
    } else {
        serde_json::json!({ "domain": f.domain.elements, "codomain": f.codomain.elements, "map": map })
    }
}
