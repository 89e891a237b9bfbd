//! The `qmf` command-line tool and its model-file codec.
//!
//! [`run`] is the whole program: it parses arguments, writes the report to
//! `out` and diagnostics to `err`, and returns the exit code (0 success, 1 a
//! check failed, 2 usage or parse error).

pub mod model_file;
pub mod shipped;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use qmf_core::classical::{enumerate_configurations, ConfigTable, ENUMERATION_CAP};
use qmf_core::graph::FactorGraph;
use qmf_core::measure::{
    converge, family_of_instance, kappa, separation_violations, undo_check, CONVERGENCE_THRESHOLD,
};
use qmf_core::models::fr::{fr_model_with_seed, fr_report, FrReport};
use qmf_core::numfmt;
use qmf_core::qmf::{certify_sqmf, is_psd_kernel, marginalize, measurement_pmf, pairs_of, QmfError, DEFAULT_TOL};
use serde_json::{json, Value};

pub use model_file::{parse_model, serialize_model, ModelFileError};

pub const TOL_ENV: &str = "QMF_TOL";

#[derive(Parser, Debug)]
#[command(name = "qmf", version, about = "Quantum mass functions on factor graphs")]
struct Cli {
    /// Emit JSON instead of text.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Certify the exterior function as a simple quantum mass function.
    Check {
        file: PathBuf,
        /// Pairs to keep (default: the measured pairs, else all pairs).
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        pairs: Vec<String>,
    },
    /// Marginal onto a subset of pairs, as a configuration table.
    Marginalize {
        file: PathBuf,
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
        keep: Vec<String>,
    },
    /// Valid configurations of the exterior function.
    Configs {
        file: PathBuf,
        /// Variables to keep, in column order.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        columns: Vec<String>,
    },
    /// Joint probabilities of jointly classicable pairs.
    Pmf {
        file: PathBuf,
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        pairs: Vec<String>,
    },
    /// Decoherence matrix of every interaction gadget.
    Kappa { file: PathBuf },
    /// Repeated interactions until the decoherence matrix is diagonal.
    Converge {
        file: PathBuf,
        #[arg(long, default_value_t = 1000)]
        max_n: usize,
        #[arg(long, default_value_t = CONVERGENCE_THRESHOLD)]
        threshold: f64,
    },
    /// Whether the adjoint of each interaction restores the system.
    UndoCheck { file: PathBuf },
    /// Whether probe and system stay apart after each gadget instance.
    SeparationCheck {
        file: PathBuf,
        /// Instance prefixes (default: all).
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        instance: Vec<String>,
        /// Factor ids that end the search (default: ids starting with `term.`).
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        terminations: Vec<String>,
    },
    /// The two-agent paradox model.
    Fr {
        /// Full report instead of the stopping probability alone.
        #[arg(long)]
        report: bool,
        /// Seed for the unitary completions of `U` and `B` (0: fixed choice).
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Outcome of a subcommand that ran to completion.
struct Report {
    text: String,
    json: Value,
    /// Set when a check failed: the diagnostic for stderr.
    failure: Option<String>,
}

impl Report {
    fn ok(text: String, json: Value) -> Self {
        Report { text, json, failure: None }
    }
}

enum CliError {
    /// Bad input: exit 2.
    Usage(String),
    /// The analysis itself failed: exit 1.
    Failed(String),
}

fn usage(e: impl ToString) -> CliError {
    CliError::Usage(e.to_string())
}

fn failed(e: impl ToString) -> CliError {
    CliError::Failed(e.to_string())
}

/// Runs the tool on `args` (including the program name).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(rendered.as_bytes())
            } else {
                err.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    let result = tolerance().and_then(|tol| dispatch(&cli.command, tol));
    match result {
        Ok(report) => {
            let body = if cli.json {
                let mut s = serde_json::to_string_pretty(&round_json(report.json)).expect("json");
                s.push('\n');
                s
            } else {
                report.text
            };
            let _ = out.write_all(body.as_bytes());
            match report.failure {
                Some(msg) => {
                    let _ = writeln!(err, "qmf: {msg}");
                    1
                }
                None => 0,
            }
        }
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "qmf: {msg}");
            2
        }
        Err(CliError::Failed(msg)) => {
            let _ = writeln!(err, "qmf: {msg}");
            1
        }
    }
}

fn tolerance() -> Result<f64, CliError> {
    match std::env::var(TOL_ENV) {
        Ok(s) => match s.trim().parse::<f64>() {
            Ok(t) if t.is_finite() && t >= 0.0 => Ok(t),
            _ => Err(usage(format!("{TOL_ENV}={s:?} is not a non-negative number"))),
        },
        Err(_) => Ok(DEFAULT_TOL),
    }
}

/// Every float through the fixed formatter so JSON matches the text output.
fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = numfmt::rounded(n.as_f64().expect("f64"));
            if x.fract() == 0.0 && x.abs() < 1e15 {
                json!(x as i64)
            } else {
                json!(x)
            }
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

fn dispatch(cmd: &Command, tol: f64) -> Result<Report, CliError> {
    match cmd {
        Command::Check { file, pairs } => check(&load(file)?, pairs, tol),
        Command::Marginalize { file, keep } => marginal(&load(file)?, keep, tol),
        Command::Configs { file, columns } => configs(&load(file)?, columns, tol),
        Command::Pmf { file, pairs } => pmf(&load(file)?, pairs, tol),
        Command::Kappa { file } => kappas(&load(file)?),
        Command::Converge { file, max_n, threshold } => convergence(&load(file)?, *max_n, *threshold),
        Command::UndoCheck { file } => undo(&load(file)?, tol),
        Command::SeparationCheck {
            file,
            instance,
            terminations,
        } => separation(&load(file)?, instance, terminations),
        Command::Fr { report, seed } => fr(*report, *seed),
    }
}

fn load(path: &PathBuf) -> Result<FactorGraph, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    parse_model(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// The requested pairs, checked against the graph; default measured, else all.
fn select_pairs(g: &FactorGraph, requested: &[String]) -> Result<Vec<String>, CliError> {
    let all = g.pairs();
    let chosen = if !requested.is_empty() {
        requested.to_vec()
    } else if !g.measured().is_empty() {
        g.measured().to_vec()
    } else {
        all.clone()
    };
    if chosen.is_empty() {
        return Err(usage("the model has no variable pairs"));
    }
    for p in &chosen {
        if !all.contains(p) {
            return Err(usage(format!("`{p}` is not a variable pair of the model")));
        }
    }
    guard_size(g, &g.pair_axes(&chosen).map_err(usage)?)?;
    Ok(chosen)
}

fn guard_size(g: &FactorGraph, axes: &[String]) -> Result<(), CliError> {
    let mut size: usize = 1;
    for a in axes {
        size = size.saturating_mul(g.card(a).map_err(usage)?);
    }
    if size > ENUMERATION_CAP {
        return Err(usage(format!("{size} entries exceed the enumeration cap {ENUMERATION_CAP}")));
    }
    Ok(())
}

fn yes(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn check(g: &FactorGraph, requested: &[String], tol: f64) -> Result<Report, CliError> {
    let pairs = select_pairs(g, requested)?;
    let axes = g.pair_axes(&pairs).map_err(usage)?;
    let t = g.exterior(&axes).map_err(failed)?;
    let named = pairs_of(&pairs);
    let psd = is_psd_kernel(&t, &named, tol).map_err(failed)?;
    let sum = t.sum();
    let certified = certify_sqmf(&t, &named, tol);
    let failure = match &certified {
        Ok(_) => None,
        Err(e @ QmfError::NotHermitian { .. }) => Some(format!("check failed: hermitian: {e}")),
        Err(e @ QmfError::NotPsd { .. }) => Some(format!("check failed: psd: {e}")),
        Err(e @ QmfError::NotNormalized { .. }) => Some(format!("check failed: normalized: {e}")),
        Err(e) => return Err(failed(e)),
    };
    let normalized = !matches!(certified, Err(QmfError::NotNormalized { .. }));
    let mut text = format!("pairs: {}\n", pairs.join(", "));
    text += &format!(
        "hermitian: {} (deviation {})\n",
        yes(psd.hermitian),
        numfmt::real(psd.hermitian_deviation)
    );
    text += &format!(
        "psd: {} (min eigenvalue {}, spectral radius {})\n",
        yes(psd.psd),
        numfmt::real(psd.min_eigenvalue),
        numfmt::real(psd.spectral_radius)
    );
    text += &format!("normalized: {} (sum {})\n", yes(normalized), numfmt::complex(sum));
    if let Ok(q) = &certified {
        for w in q.warnings() {
            text += &format!("warning: {w}\n");
        }
    }
    text += &format!("sqmf: {}\n", yes(certified.is_ok()));
    let json = json!({
        "pairs": pairs,
        "hermitian": psd.hermitian,
        "hermitian_deviation": psd.hermitian_deviation,
        "worst_entry": psd.worst_entry,
        "psd": psd.psd,
        "min_eigenvalue": psd.min_eigenvalue,
        "spectral_radius": psd.spectral_radius,
        "normalized": normalized,
        "sum": [sum.re, sum.im],
        "sqmf": certified.is_ok(),
    });
    Ok(Report { text, json, failure })
}

fn table_report(title: String, table: ConfigTable) -> Report {
    let text = format!("{title}\n{}", table.to_text());
    let json = json!({ "title": title, "table": serde_json::to_value(&table).expect("json") });
    Report::ok(text, json)
}

fn marginal(g: &FactorGraph, keep: &[String], tol: f64) -> Result<Report, CliError> {
    let pairs = select_pairs(g, &[])?;
    let all = g.pairs();
    for k in keep {
        if !all.contains(k) {
            return Err(usage(format!("`{k}` is not a variable pair of the model")));
        }
        if !pairs.contains(k) {
            return Err(usage(format!("`{k}` is not among the pairs {}", pairs.join(", "))));
        }
    }
    let axes = g.pair_axes(&pairs).map_err(usage)?;
    let q = certify_sqmf(&g.exterior(&axes).map_err(failed)?, &pairs_of(&pairs), tol).map_err(failed)?;
    let m = marginalize(&q, keep).map_err(failed)?;
    let columns = g.pair_axes(keep).map_err(usage)?;
    let table = enumerate_configurations(m.tensor(), &columns, tol).map_err(failed)?;
    Ok(table_report(format!("marginal onto {}", keep.join(", ")), table))
}

fn configs(g: &FactorGraph, requested: &[String], tol: f64) -> Result<Report, CliError> {
    let columns: Vec<String> = if !requested.is_empty() {
        for c in requested {
            if g.variable(c).is_none() {
                return Err(usage(format!("unknown variable `{c}`")));
            }
        }
        requested.to_vec()
    } else if g.pairs().is_empty() {
        g.variables().map(|v| v.name.clone()).collect()
    } else {
        g.pair_axes(&select_pairs(g, &[])?).map_err(usage)?
    };
    guard_size(g, &columns)?;
    let t = g.exterior(&columns).map_err(failed)?;
    let table = enumerate_configurations(&t, &columns, tol).map_err(failed)?;
    Ok(table_report(format!("valid configurations over {}", columns.join(", ")), table))
}

fn pmf(g: &FactorGraph, requested: &[String], tol: f64) -> Result<Report, CliError> {
    let pairs = select_pairs(g, requested)?;
    let axes = g.pair_axes(&pairs).map_err(usage)?;
    let q = certify_sqmf(&g.exterior(&axes).map_err(failed)?, &pairs_of(&pairs), tol).map_err(failed)?;
    let p = measurement_pmf(&q, &pairs).map_err(failed)?;
    let mut text = format!("pmf of {}\n", pairs.join(", "));
    let mut entries = Vec::new();
    for (idx, v) in p.entries() {
        let assignment: Vec<String> = pairs.iter().zip(&idx).map(|(n, i)| format!("{n}={i}")).collect();
        text += &format!("{}  {}\n", assignment.join(" "), numfmt::real(v));
        entries.push(json!({ "values": idx, "p": v }));
    }
    Ok(Report::ok(text, json!({ "pairs": pairs, "entries": entries })))
}

fn interaction_prefixes(g: &FactorGraph) -> Result<Vec<String>, CliError> {
    let v: Vec<String> = g
        .instances()
        .filter(|i| i.kind == "interaction")
        .map(|i| i.prefix.clone())
        .collect();
    if v.is_empty() {
        return Err(usage("the model has no interaction gadget instances"));
    }
    Ok(v)
}

fn kappas(g: &FactorGraph) -> Result<Report, CliError> {
    let mut text = String::new();
    let mut out = Vec::new();
    for prefix in interaction_prefixes(g)? {
        let (fam, _) = family_of_instance(g, &prefix).map_err(failed)?;
        let k = kappa(&fam);
        text += &format!("{prefix}: kappa ({0}x{0})\n", k.dim());
        let mut rows = Vec::new();
        for z in 0..k.dim() {
            let row: Vec<_> = (0..k.dim()).map(|zp| k.get(z, zp)).collect();
            text += &format!("  {}\n", row.iter().map(|c| numfmt::complex(*c)).collect::<Vec<_>>().join("  "));
            rows.push(row.iter().map(|c| json!([c.re, c.im])).collect::<Vec<_>>());
        }
        text += &format!("  max off-diagonal {}\n", numfmt::real(k.max_off_diagonal()));
        out.push(json!({
            "instance": prefix,
            "kappa": rows,
            "max_off_diagonal": k.max_off_diagonal(),
            "invariant_error": k.invariant_error(),
        }));
    }
    Ok(Report::ok(text, json!({ "instances": out })))
}

fn convergence(g: &FactorGraph, max_n: usize, threshold: f64) -> Result<Report, CliError> {
    if max_n == 0 {
        return Err(usage("--max-n must be positive"));
    }
    let mut text = String::new();
    let mut out = Vec::new();
    for prefix in interaction_prefixes(g)? {
        let (fam, _) = family_of_instance(g, &prefix).map_err(failed)?;
        let c = converge(&fam, max_n, threshold);
        text += &if c.converged {
            format!(
                "{prefix}: converged after {} interactions (max off-diagonal {})\n",
                c.n,
                numfmt::real(c.max_off_diagonal)
            )
        } else {
            format!(
                "{prefix}: not converged within {} interactions (max off-diagonal {})\n",
                c.n,
                numfmt::real(c.max_off_diagonal)
            )
        };
        let mut v = serde_json::to_value(&c).expect("json");
        v["instance"] = json!(prefix);
        out.push(v);
    }
    Ok(Report::ok(text, json!({ "threshold": threshold, "instances": out })))
}

fn undo(g: &FactorGraph, tol: f64) -> Result<Report, CliError> {
    let mut text = String::new();
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for prefix in interaction_prefixes(g)? {
        let (fam, joint) = family_of_instance(g, &prefix).map_err(failed)?;
        let ok = undo_check(&joint, fam.p_xi(), tol.max(1e-12)).map_err(failed)?;
        text += &format!("{prefix}: adjoint restores the system: {}\n", yes(ok));
        if !ok {
            bad.push(prefix.clone());
        }
        out.push(json!({ "instance": prefix, "restores": ok }));
    }
    let failure = (!bad.is_empty()).then(|| format!("undo check failed for {}", bad.join(", ")));
    Ok(Report {
        text,
        json: json!({ "instances": out }),
        failure,
    })
}

fn separation(g: &FactorGraph, instances: &[String], terminations: &[String]) -> Result<Report, CliError> {
    let prefixes: Vec<String> = if instances.is_empty() {
        g.instances().map(|i| i.prefix.clone()).collect()
    } else {
        instances.to_vec()
    };
    if prefixes.is_empty() {
        return Err(usage("the model has no gadget instances"));
    }
    let terms: Vec<String> = if terminations.is_empty() {
        g.factors()
            .filter(|f| f.id.starts_with("term."))
            .map(|f| f.id.clone())
            .collect()
    } else {
        terminations.to_vec()
    };
    let mut text = String::new();
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for prefix in &prefixes {
        g.instance(prefix).map_err(usage)?;
        let v = separation_violations(g, prefix, &terms).map_err(failed)?;
        if v.is_empty() {
            text += &format!("{prefix}: separated\n");
        } else {
            text += &format!("{prefix}: probe and system meet at {}\n", v.join(", "));
            bad.push(prefix.clone());
        }
        out.push(json!({ "instance": prefix, "separated": v.is_empty(), "meeting_factors": v }));
    }
    let failure = (!bad.is_empty()).then(|| format!("separation fails for {}", bad.join(", ")));
    Ok(Report {
        text,
        json: json!({ "terminations": terms, "instances": out }),
        failure,
    })
}

const TWELFTH_TOL: f64 = 1e-9;

fn pr_line(r: &FrReport) -> (String, bool) {
    let p = r.pr_y1_0_y2_1;
    let ok = (p - 1.0 / 12.0).abs() <= TWELFTH_TOL;
    let line = if ok {
        format!("Pr = 1/12: Pr(Y1b=0, Y2b=1) = {}\n", numfmt::real(p))
    } else {
        format!("Pr != 1/12: Pr(Y1b=0, Y2b=1) = {}\n", numfmt::real(p))
    };
    (line, ok)
}

fn fr(full: bool, seed: u64) -> Result<Report, CliError> {
    let m = fr_model_with_seed(seed);
    let r = fr_report(&m).map_err(failed)?;
    let (pr, ok) = pr_line(&r);
    let failure = (!ok).then(|| "stopping probability differs from 1/12".to_string());
    let json = serde_json::to_value(&r).expect("json");
    if !full {
        return Ok(Report { text: pr, json, failure });
    }
    let mut t = format!("fr model, completion seed {}\n\n", r.seed);
    t += "table1: preparation with Y1 = 0\n";
    t += &r.table1.to_text();
    t += "\ntable2: table1 with Y2 = 1\n";
    t += &r.table2.to_text();
    t += &format!("sum = {}\n\n", numfmt::complex(r.table2_sum));
    t += &format!("psi(S=0, Y1=0) = {}\n", numfmt::complex(r.psi_00));
    t += &format!("Pr(R=1) = {}\n\n", numfmt::real(r.pr_r1));
    t += "implications:\n";
    for i in &r.implications.implications {
        t += &format!(
            "  {}: {} {} (premise configurations {}, violations {})\n",
            i.view,
            i.statement(),
            if i.holds { "holds" } else { "fails" },
            i.premise_configs,
            i.violations
        );
    }
    let imp = &r.implications;
    t += &format!(
        "jointly classicable {}: {} (witness {} at {})\n",
        imp.pairs.join(", "),
        yes(imp.jointly_classicable),
        numfmt::real(imp.witness.magnitude),
        imp.witness.at
    );
    t += &format!(
        "jointly classicable {}: {} (witness {} at {})\n\n",
        imp.record_pairs.join(", "),
        yes(imp.record_witness.magnitude <= DEFAULT_TOL),
        numfmt::real(imp.record_witness.magnitude),
        imp.record_witness.at
    );
    t += "views against the full model:\n";
    for v in &r.views {
        t += &format!(
            "  {} [{}] vs full [{}]: max diff {}\n",
            v.view,
            v.pairs.join(", "),
            v.full_pairs.join(", "),
            numfmt::real(v.max_diff)
        );
    }
    t += "\nstopping condition: Y1b=0 and Y2b=1\n";
    t += &pr;
    t += &format!("without copies and undos: {}\n", numfmt::real(r.pr_direct));
    t += &format!("largest intermediate tensor: {} entries\n", r.peak_entries);
    Ok(Report { text: t, json, failure })
}
