//! Exit-gate checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Tolerances are fixed here, not configurable.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use smce_api::{router, AppState};
use smce_core::catalog_store::{states_fixture, MappingKind, Metacatalog, Registry, SetType};
use smce_core::enforcement::{add_constraint, remove_constraint, toggle, ConstraintState, Provenance, Status};
use smce_core::oracle::{audit_catalog, standard_propositions, verify_all};
use smce_core::rule_catalog::RuleSet;
use smce_core::{
    encode, generate_catalog, CombinationCode, Compoundness, ConstraintFlags, ConstraintType, RuleCatalog, Verdict,
};
use tower::ServiceExt;

use ConstraintType::*;

const CATALOG_BUDGET: Duration = Duration::from_secs(5);
const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const ORACLE_N: usize = 4;
const ORACLE_INSTANCES: usize = 625;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn fl(t: &[ConstraintType]) -> ConstraintFlags {
    ConstraintFlags::of(t)
}

fn code(x: u64) -> CombinationCode {
    CombinationCode::new(x).unwrap()
}

fn catalog_generation() -> Check {
    let start = Instant::now();
    let a = generate_catalog();
    let took = start.elapsed();
    let b = generate_catalog();
    ensure!(a.enumerated() == 131_071, "enumerated {}", a.enumerated());
    ensure!(took < CATALOG_BUDGET, "took {took:?}");
    let bytes = |c: &RuleCatalog| {
        let mut v = Vec::new();
        c.write_coherencies_csv(&mut v).unwrap();
        c.write_redundancies_csv(&mut v).unwrap();
        c.write_corollaries_csv(&mut v).unwrap();
        v.extend(c.to_json().unwrap().into_bytes());
        v
    };
    ensure!(bytes(&a) == bytes(&b), "two runs differ");
    Ok(format!("131071 enumerated, {} stored, {took:.2?}", a.stored_count()))
}

fn spot_values(cat: &RuleCatalog) -> Check {
    for x in [65552, 65556] {
        ensure!(cat.row(code(x)).is_some_and(|r| r.coherent), "{x} not coherent");
    }
    let row = cat.row(code(65557)).ok_or("65557 missing")?;
    ensure!(!row.coherent, "65557 coherent");
    let id = &cat.corollary(row.note.ok_or("65557 has no note")?).id;
    ensure!(id == "A.6.1.1 (viii)", "65557 note {id}");
    let rows = |x| cat.redundancy_rows(code(x)).iter().map(|r| r.redundancy).collect::<Vec<_>>();
    ensure!(cat.row(code(65545)).is_some_and(|r| r.coherent), "65545 not coherent");
    ensure!(rows(65545) == [Bijective, Onto], "65545 -> {:?}", rows(65545));
    ensure!(rows(24) == [Bijective], "24 -> {:?}", rows(24));
    ensure!(rows(40) == [Onto, OneToOne], "40 -> {:?}", rows(40));
    Ok("65552 65556 65557 65545 24 40".into())
}

fn single(cat: &RuleCatalog, st: &ConstraintState, c: ConstraintType, on: bool) -> smce_core::Outcome {
    if on {
        add_constraint(cat, st, "f", Compoundness::Single, c, None).unwrap()
    } else {
        remove_constraint(cat, st, "f", Compoundness::Single, c).unwrap()
    }
}

fn scenarios(cat: &RuleCatalog) -> Check {
    let a = single(cat, &ConstraintState::asserted("f", fl(&[SelfMap, Total])), OneToOne, true);
    ensure!(a.status == Status::Accepted, "(a) {:?}", a.status);
    ensure!(
        a.state.asserted_flags() == fl(&[SelfMap, Total, OneToOne]) && a.state.implied_flags() == fl(&[Onto, Bijective]),
        "(a) end state {}; {}",
        a.state.asserted_flags(),
        a.state.implied_flags()
    );

    let acyclic = single(cat, &ConstraintState::asserted("f", fl(&[SelfMap])), Acyclic, true).state;
    ensure!(acyclic.implied_flags() == fl(&[Asymmetric, Irreflexive]), "(b) setup {}", acyclic.implied_flags());
    let b = single(cat, &acyclic, Acyclic, false);
    ensure!(
        b.status == Status::Accepted && b.state == ConstraintState::asserted("f", fl(&[SelfMap])),
        "(b) end state {}",
        b.state.flags()
    );

    let c = single(cat, &acyclic, Irreflexive, false);
    ensure!(c.status == Status::RejectedRedundantRemoval && c.state == acyclic, "(c) {:?}", c.status);
    let expected = "Irreflexive cannot be removed as it is implied by other constraints, according to A.6.2.2 (iv). self-map ^ acyclic => asymmetric ^ irreflexive";
    ensure!(c.message == expected, "(c) message {}", c.message);

    let d = single(cat, &ConstraintState::asserted("f", fl(&[SelfMap, Total])), Reflexive, true);
    ensure!(d.status == Status::RejectedUnity, "(d) {:?}", d.status);
    ensure!(d.note.as_deref().is_some_and(|n| n.starts_with("A.6.2.1 (ii)")), "(d) note {:?}", d.note);
    ensure!(d.message.ends_with("f would become a unity mapping!"), "(d) message {}", d.message);
    Ok("(a) (b) (c) (d)".into())
}

/// f = g∘h, members [h, g].
fn chain() -> (Metacatalog, String, String, String) {
    let mut meta = Metacatalog::new("t", "t").unwrap();
    let a = meta.register_set("A", SetType::Entity).unwrap().id;
    let b = meta.register_set("B", SetType::Entity).unwrap().id;
    let c = meta.register_set("C", SetType::Entity).unwrap().id;
    let h = meta.register_mapping("h", &a, &b, MappingKind::Plain).unwrap().id;
    let g = meta.register_mapping("g", &b, &c, MappingKind::Plain).unwrap().id;
    let f = meta.register_compound("f", &[h.clone(), g.clone()]).unwrap().id;
    (meta, f, g, h)
}

fn compound_propagation(cat: &RuleCatalog) -> Check {
    let (mut meta, f, g, h) = chain();
    toggle(&mut meta, cat, &g, OneToOne, true).unwrap();
    toggle(&mut meta, cat, &h, Onto, true).unwrap();
    let r = toggle(&mut meta, cat, &f, OneToOne, true).unwrap();
    ensure!(r.outcome.status == Status::Accepted, "f gains UK: {:?}", r.outcome.status);
    let gs = meta.state(&g).unwrap();
    let uk = gs.member(OneToOne).ok_or("g lost UK entirely")?;
    ensure!(
        uk.provenance == Provenance::Implied && uk.note.as_deref() == Some("A.6.1.2 (vi)"),
        "g UK {:?} {:?}",
        uk.provenance,
        uk.note
    );

    let (mut meta, f, g, h) = chain();
    toggle(&mut meta, cat, &g, OneToOne, true).unwrap();
    toggle(&mut meta, cat, &f, Onto, true).unwrap();
    let ot = meta.state(&h).unwrap().member(Onto).cloned().ok_or("h never gained OT")?;
    ensure!(ot.note.as_deref() == Some("A.6.1.2 (ix)"), "h OT note {:?}", ot.note);
    let r = toggle(&mut meta, cat, &f, Onto, false).unwrap();
    ensure!(r.outcome.status == Status::Accepted, "f loses OT: {:?}", r.outcome.status);
    ensure!(meta.state(&h).unwrap().member(Onto).is_none(), "h kept OT");
    Ok("2(vi) demotion, 2(ix) release".into())
}

fn oracle() -> Check {
    let start = Instant::now();
    let reports = verify_all(&standard_propositions(), ORACLE_N).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let wrong_size: Vec<_> = reports.iter().filter(|r| r.instances_checked != ORACLE_INSTANCES).collect();
    ensure!(wrong_size.is_empty(), "{} checked over the wrong instance count", wrong_size[0].id);
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} has {} counterexamples, first {}", r.id, r.counterexamples.len(), r.counterexamples[0]))
        .collect();
    ensure!(failed.is_empty(), "{}", failed.join("; "));
    ensure!(took < ORACLE_BUDGET, "took {took:?}");
    Ok(format!("{} propositions over {ORACLE_INSTANCES} self-maps, {took:.2?}", reports.len()))
}

fn audit(cat: &RuleCatalog) -> Check {
    let r = audit_catalog(cat, ORACLE_N);
    ensure!(r.refutations.is_empty(), "{} refutations", r.refutations.len());
    ensure!(
        r.without_model + r.policy_incoherent.len() == r.marked_incoherent,
        "{} marked, {} without model, {} policy",
        r.marked_incoherent,
        r.without_model,
        r.policy_incoherent.len()
    );
    Ok(format!(
        "{} marked: {} without model, {} identity-only",
        r.marked_incoherent,
        r.without_model,
        r.policy_incoherent.len()
    ))
}

fn with_sm(bits: u32) -> ConstraintFlags {
    ConstraintType::CHECKABLE
        .iter()
        .enumerate()
        .filter(|(i, _)| bits & (1 << i) != 0)
        .fold(fl(&[SelfMap]), |f, (_, c)| f.with(*c))
}

fn fixpoint(cat: &RuleCatalog) -> Check {
    let rules = RuleSet::standard();
    let mut coherent = 0;
    for bits in 0u32..(1 << 12) {
        let f = with_sm(bits);
        let Ok(first) = cat.redundancy_closure(f) else { continue };
        coherent += 1;
        let once = first.iter().fold(f, |a, i| a.with(i.flag));
        let again = cat.redundancy_closure(once).map_err(|e| format!("{f}: closed set rejected: {e}"))?;
        let twice = again.iter().fold(once, |a, i| a.with(i.flag));
        ensure!(twice == once, "{f}: {once} then {twice}");
    }
    // Build every subset flag by flag; each accepted state must re-derive its implied members.
    let mut accepted = 0;
    for bits in 0u32..(1 << 12) {
        let mut st = ConstraintState::asserted("f", fl(&[SelfMap]));
        for c in with_sm(bits).iter().filter(|c| *c != SelfMap) {
            if st.flags().contains(c) {
                continue;
            }
            let out = add_constraint(cat, &st, "f", Compoundness::Compound, c, None).unwrap();
            if out.status != Status::Accepted {
                continue;
            }
            accepted += 1;
            let closure = rules.closure(out.state.asserted_flags());
            ensure!(closure == out.state.flags(), "closure {closure} vs state {}", out.state.flags());
            let stored = out.state.implied_flags();
            ensure!(closure.difference(out.state.asserted_flags()) == stored, "implied {stored} vs {closure}");
            ensure!(
                matches!(cat.lookup(encode(out.state.flags()), Compoundness::Compound), Verdict::Coherent { .. }),
                "accepted state {} not coherent",
                out.state.flags()
            );
            st = out.state;
        }
    }
    Ok(format!("{coherent} coherent subsets idempotent, {accepted} accepted states re-derived"))
}

fn persistence() -> Check {
    let meta = states_fixture();
    for name in ["1_STATES", "StateCapital", "State\u{2218}StateCapital"] {
        ensure!(meta.mapping_by_name(name).is_some(), "fixture lacks {name}");
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join(meta.file_name());
    meta.save(&path).map_err(|e| e.to_string())?;
    let back = Metacatalog::load(&path).map_err(|e| e.to_string())?;
    ensure!(back == meta, "loaded metacatalog differs");
    let again = dir.path().join("again.json");
    back.save(&again).map_err(|e| e.to_string())?;
    let (x, y) = (std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    ensure!(x == y, "re-export differs");
    Ok(format!("{} bytes, byte-identical", x.len()))
}

async fn call(app: &axum::Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn api_atomicity(cat: Arc<RuleCatalog>) -> Check {
    let mut meta = states_fixture();
    let states = meta.set_by_name("STATES").unwrap().id.clone();
    let neighbor = meta.register_mapping("Neighbor", &states, &states, MappingKind::Plain).unwrap().id;
    let sm = meta.mapping_by_name("State\u{2218}StateCapital").unwrap().id.clone();
    let mut reg = Registry::default();
    reg.insert(meta).unwrap();
    let app = router(Arc::new(AppState::new(cat, reg, None)));
    let post = |m: &str, c: &str, on: bool| {
        (format!("/mappings/{m}/toggle"), json!({"constraint": c, "desired": on}))
    };
    for (m, c) in [(&sm, "A"), (&sm, "T"), (&sm, "OT"), (&neighbor, "T")] {
        let (uri, body) = post(m, c, true);
        let (s, v) = call(&app, Method::POST, &uri, Some(body)).await;
        ensure!(s == StatusCode::OK, "setup {c}: {v}");
    }
    let (s, _) = call(
        &app,
        Method::PUT,
        &format!("/mappings/{neighbor}/instance"),
        Some(json!({"set": [1, 2, 3], "map": {"1": 2, "2": 2, "3": 1}})),
    )
    .await;
    ensure!(s == StatusCode::OK, "instance upload {s}");
    let cases = [
        ("incoherent", &sm, "Q", true, "rejected_incoherent"),
        ("trivial", &sm, "NP", true, "rejected_trivial"),
        ("unity", &neighbor, "R", true, "rejected_unity"),
        ("unsatisfied", &neighbor, "UK", true, "rejected_unsatisfied"),
        ("implied removal", &sm, "IR", false, "rejected_redundant_removal"),
    ];
    let mut seen = Vec::new();
    for (class, m, c, on, status) in cases {
        let get = format!("/mappings/{m}/constraints");
        let (_, before) = call(&app, Method::GET, &get, None).await;
        let (uri, body) = post(m, c, on);
        let (s, v) = call(&app, Method::POST, &uri, Some(body)).await;
        ensure!(s == StatusCode::CONFLICT, "{class}: {s} {v}");
        ensure!(v["status"] == status, "{class}: status {}", v["status"]);
        let (_, after) = call(&app, Method::GET, &get, None).await;
        ensure!(before == after, "{class}: state changed");
        seen.push(class);
    }
    Ok(format!("{} unchanged after rejection, no UI build involved", seen.join(", ")))
}

fn main() -> ExitCode {
    let cat = Arc::new(generate_catalog());
    let rt = tokio::runtime::Runtime::new().expect("runtime");
    let results: Vec<(&str, Check)> = vec![
        ("catalog generation", catalog_generation()),
        ("spot values", spot_values(&cat)),
        ("single-mapping scenarios", scenarios(&cat)),
        ("compound propagation", compound_propagation(&cat)),
        ("oracle n=4", oracle()),
        ("catalog audit n=4", audit(&cat)),
        ("fixpoint", fixpoint(&cat)),
        ("persistence", persistence()),
        ("api atomicity", rt.block_on(api_atomicity(cat.clone()))),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
