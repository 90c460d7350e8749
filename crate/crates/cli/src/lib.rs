//! The `smce` command line. Exit codes: 0 success, 1 when the engine says
//! no (incoherent, rejected, unsatisfied, failed check), 2 on usage or input
//! errors.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use smce_core::catalog_store::{self, states_fixture, Metacatalog, Registry};
use smce_core::enforcement::{self, Status};
use smce_core::oracle;
use smce_core::rule_catalog::{Compoundness, RuleSet, Verdict};
use smce_core::semantics::{self, MappingInstance};
use smce_core::{generate_catalog, ConstraintFlags, ConstraintType};

#[derive(Debug, Parser)]
#[command(name = "smce", version, about = "Coherence and minimality engine for mapping constraint sets")]
pub struct Cli {
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Append elapsed times to reports.
    #[arg(long, global = true)]
    pub timestamps: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Table {
    Coherencies,
    Redundancies,
    Corollaries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the rule tables and write the three CSV files.
    GenCatalog {
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Classify a constraint set, e.g. `--flags SM,OT,NP,T`.
    Verdict {
        #[arg(long, allow_hyphen_values = true)]
        flags: String,
        /// Treat the mapping as compound (single-only rejections do not apply).
        #[arg(long)]
        compound: bool,
    },
    /// Evaluate a constraint set against an instance (inline `1>2,2>null` or a JSON file).
    Check {
        #[arg(long)]
        flags: String,
        #[arg(long)]
        instance: String,
    },
    /// Add or remove one constraint of a mapping stored in a `.matbase.json` file.
    Toggle {
        #[arg(long)]
        db: PathBuf,
        /// Mapping id or name.
        #[arg(long)]
        mapping: String,
        #[arg(long)]
        constraint: String,
        /// Remove instead of add.
        #[arg(long)]
        off: bool,
    },
    /// Check the propositions against every partial self-map on `n` elements.
    Verify {
        #[arg(long, default_value_t = 4)]
        n: usize,
    },
    /// Check the catalog's incoherence marks and redundancy rules against instances.
    Audit {
        #[arg(long, default_value_t = 4)]
        n: usize,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "SMCE_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "SMCE_DATA", default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Print one rule table.
    Export {
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long, value_enum, default_value_t = Table::Coherencies)]
        table: Table,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_flags(text: &str) -> Result<ConstraintFlags> {
    text.parse().map_err(|e| anyhow!("{e}"))
}

fn load_instance(arg: &str) -> Result<MappingInstance> {
    let path = std::path::Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
        return Ok(semantics::parse_instance_json(&text)?);
    }
    Ok(semantics::parse_inline(arg)?)
}

fn elapsed(out: &mut dyn Write, on: bool, start: Instant) -> Result<()> {
    if on {
        writeln!(out, "elapsed {} ms", start.elapsed().as_millis())?;
    }
    Ok(())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<u8> {
    let start = Instant::now();
    let json = cli.json;
    match cli.command {
        Command::GenCatalog { out: dir } => {
            let cat = generate_catalog();
            let files = catalog_store::write_rule_tables(&cat, &dir)?;
            if json {
                writeln!(
                    out,
                    "{}",
                    json!({
                        "enumerated": cat.enumerated(),
                        "stored": cat.stored_count(),
                        "redundancies": cat.redundancies().len(),
                        "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
                    })
                )?;
            } else {
                writeln!(
                    out,
                    "enumerated {} combinations, stored {} rows, {} redundancy rows",
                    cat.enumerated(),
                    cat.stored_count(),
                    cat.redundancies().len()
                )?;
                for f in files {
                    writeln!(out, "wrote {}", f.display())?;
                }
            }
            elapsed(out, cli.timestamps, start)?;
            Ok(0)
        }
        Command::Verdict { flags, compound } => {
            let flags = parse_flags(&flags)?;
            let cat = generate_catalog();
            let compound = if compound {
                Compoundness::Compound
            } else {
                Compoundness::Single
            };
            let v = cat.lookup(flags.code(), compound);
            if json {
                writeln!(out, "{}", smce_api::verdict_view(&cat, &v))?;
            } else {
                match &v {
                    Verdict::Coherent { redundant } => {
                        writeln!(out, "coherent")?;
                        for i in redundant {
                            let rec = cat.corollary(i.note);
                            writeln!(out, "  implied {}: {} {}", i.flag.abbrev(), rec.id, rec.description)?;
                        }
                    }
                    other => {
                        let rec = cat.corollary(other.note().expect("note"));
                        writeln!(out, "{}: {} {}", other.label(), rec.id, rec.description)?;
                    }
                }
            }
            Ok(if v.is_coherent() { 0 } else { 1 })
        }
        Command::Check { flags, instance } => {
            let flags = parse_flags(&flags)?;
            let inst = load_instance(&instance)?;
            let report = semantics::check_report(&inst, flags)?;
            let failed: Vec<ConstraintType> = report.iter().filter(|(_, ok)| !ok).map(|(c, _)| *c).collect();
            if json {
                let rows: serde_json::Map<String, serde_json::Value> =
                    report.iter().map(|(c, ok)| (c.abbrev().to_string(), json!(ok))).collect();
                writeln!(out, "{}", json!({ "satisfied": failed.is_empty(), "constraints": rows }))?;
            } else if failed.is_empty() {
                writeln!(out, "satisfied")?;
            } else {
                let names: Vec<&str> = failed.iter().map(|c| c.display_name()).collect();
                writeln!(out, "not satisfied: {}", names.join(", "))?;
            }
            Ok(if failed.is_empty() { 0 } else { 1 })
        }
        Command::Toggle {
            db,
            mapping,
            constraint,
            off,
        } => {
            let c: ConstraintType = constraint.parse().map_err(|e| anyhow!("{e}"))?;
            let mut meta = Metacatalog::load(&db)?;
            let id = match meta.mappings.get(&mapping) {
                Some(m) => m.id.clone(),
                None => meta
                    .mapping_by_name(&mapping)
                    .ok_or_else(|| anyhow!("unknown mapping `{mapping}`"))?
                    .id
                    .clone(),
            };
            let cat = generate_catalog();
            let report = enforcement::toggle(&mut meta, &cat, &id, c, !off)?;
            if report.outcome.status == Status::Accepted {
                meta.save(&db)?;
            }
            if json {
                writeln!(out, "{}", serde_json::to_string(&report)?)?;
            } else {
                let o = &report.outcome;
                match o.status {
                    Status::Accepted | Status::Unchanged => {
                        writeln!(out, "{}: {}", status_word(o.status), o.state_line())?;
                        for p in &report.propagated {
                            let name = &meta.mappings[&p.mapping].name;
                            writeln!(out, "  {name}: {}", p.state_line())?;
                        }
                    }
                    _ => writeln!(out, "{}", o.message)?,
                }
            }
            Ok(if report.outcome.status.is_rejection() { 1 } else { 0 })
        }
        Command::Verify { n } => {
            let reports = oracle::verify_all(&oracle::standard_propositions(), n)?;
            let mut failed = 0;
            if json {
                writeln!(out, "{}", serde_json::to_string(&reports)?)?;
                failed = reports.iter().filter(|r| !r.passed()).count();
            } else {
                for r in &reports {
                    if r.passed() {
                        writeln!(out, "PASS {} ({} instances)", r.id, r.instances_checked)?;
                    } else {
                        failed += 1;
                        writeln!(
                            out,
                            "FAIL {} ({} counterexamples, first {})",
                            r.id,
                            r.counterexamples.len(),
                            r.counterexamples[0]
                        )?;
                    }
                }
            }
            elapsed(out, cli.timestamps, start)?;
            Ok(if failed == 0 { 0 } else { 1 })
        }
        Command::Audit { n } => {
            let cat = generate_catalog();
            let report = oracle::audit_catalog(&cat, n);
            let violations = oracle::audit_rules(RuleSet::standard(), n);
            if json {
                writeln!(
                    out,
                    "{}",
                    json!({
                        "catalog": report,
                        "rule_violations": violations,
                    })
                )?;
            } else {
                writeln!(out, "instances {}", report.instances)?;
                writeln!(out, "combinations {}", report.combinations)?;
                writeln!(out, "marked incoherent {}", report.marked_incoherent)?;
                writeln!(out, "without model {}", report.without_model)?;
                writeln!(out, "policy-incoherent {}", report.policy_incoherent.len())?;
                writeln!(out, "refutations {}", report.refutations.len())?;
                for r in &report.refutations {
                    writeln!(out, "  {} marked by {} has model {}", r.flags, cat.corollary(r.note).id, r.witness)?;
                }
                writeln!(out, "rule violations {}", violations.len())?;
                for v in &violations {
                    writeln!(out, "  {} from {} fails on {}", cat.corollary(v.corollary).id, v.premises, v.witness)?;
                }
            }
            elapsed(out, cli.timestamps, start)?;
            Ok(if report.clean() && violations.is_empty() { 0 } else { 1 })
        }
        Command::Serve { port, data_dir, host } => {
            serve(port, data_dir, &host)?;
            Ok(0)
        }
        Command::Export { format, table, out: path } => {
            let cat = generate_catalog();
            let mut buf = Vec::new();
            match format {
                Format::Json => buf.extend(cat.to_json()?.into_bytes()),
                Format::Csv => match table {
                    Table::Coherencies => cat.write_coherencies_csv(&mut buf)?,
                    Table::Redundancies => cat.write_redundancies_csv(&mut buf)?,
                    Table::Corollaries => cat.write_corollaries_csv(&mut buf)?,
                },
            }
            match path {
                Some(p) => std::fs::write(&p, &buf).with_context(|| format!("writing {}", p.display()))?,
                None => out.write_all(&buf)?,
            }
            Ok(0)
        }
    }
}

fn status_word(s: Status) -> &'static str {
    match s {
        Status::Accepted => "accepted",
        Status::Unchanged => "unchanged",
        _ => "rejected",
    }
}

trait StateLine {
    fn state_line(&self) -> String;
}

impl StateLine for enforcement::Outcome {
    /// `{SM,UK,T; implied B,OT}`
    fn state_line(&self) -> String {
        let asserted = self.state.asserted_flags();
        let implied = self.state.implied_flags();
        match (asserted.is_empty(), implied.is_empty()) {
            (_, true) => format!("{{{asserted}}}"),
            (true, false) => format!("{{implied {implied}}}"),
            (false, false) => format!("{{{asserted}; implied {implied}}}"),
        }
    }
}

/// Loads every database under `data_dir`; an empty directory is seeded
/// with the STATES sample.
fn serve(port: u16, data_dir: PathBuf, host: &str) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    std::fs::create_dir_all(&data_dir).with_context(|| format!("creating {}", data_dir.display()))?;
    let mut registry = Registry::load_dir(&data_dir)?;
    if registry.databases.is_empty() {
        registry.insert(states_fixture())?;
        registry.save_dir(&data_dir)?;
    }
    let state = Arc::new(smce_api::AppState::new(Arc::new(generate_catalog()), registry, Some(data_dir)));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .with_context(|| format!("binding {host}:{port}"))?;
        smce_api::serve(state, listener).await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(())
}
