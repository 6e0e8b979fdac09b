use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use taxarb::arbitrage::{LocalConditionReport, Status};
use taxarb::bidask::{bidask_check_na, embed_tax_market, perturb_robust};
use taxarb::foundry::{
    gen_grigoriev_counterexample, gen_hedge_example, gen_infinite_example, gen_kappa_maximality, DEFAULT_DEPTH,
};
use taxarb::io;
use taxarb::measures::{max_expected_value, verify_stopping_constraints, StoppingCheck};
use taxarb::{
    arbitrage_scale, check_na, check_na_reduced, check_never_sure, check_one_period, check_rlna_sufficient,
    find_separating_measure, format_rational, parse_rational, snell_martingale_part, validate_market, Error,
    Rational, ScenarioTree, TaxMarket,
};

#[derive(Parser)]
#[command(name = "taxarb", version, about = "No-arbitrage analysis for markets with a capital gains tax")]
struct Cli {
    /// Write the report here instead of stdout.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

fn rational_arg(s: &str) -> Result<Rational, String> {
    parse_rational(s).map_err(|e| e.to_string())
}

#[derive(Clone, Copy, ValueEnum)]
enum Example {
    Hedge,
    KappaMaximality,
    Infinite,
    Grigoriev,
}

#[derive(Subcommand)]
enum Command {
    /// Report every violated market invariant.
    Validate { market: PathBuf },
    /// Decide (NA) exactly; attaches a strategy or a separating measure.
    CheckNa {
        market: PathBuf,
        /// Read a bid-ask market instead of a tax market.
        #[arg(long)]
        bid_ask: bool,
        /// Cap every trade (bid-ask markets only).
        #[arg(long, value_parser = rational_arg)]
        bound: Option<Rational>,
        /// Also write the certificate (strategy or measure file) here.
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// No one-period arbitrage in period t.
    CheckOnePeriod {
        market: PathBuf,
        #[arg(long)]
        t: usize,
    },
    /// Sufficient local condition for robust local no-arbitrage in period t.
    CheckRlna {
        market: PathBuf,
        #[arg(long)]
        t: usize,
    },
    /// Some return at most (1-alpha) r in every atom.
    CheckNeverSure { market: PathBuf },
    /// (NA) of a market with one period eliminated.
    CheckNaReduced {
        reduced: PathBuf,
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Separating measure from the LP dual.
    FindMeasure {
        market: PathBuf,
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Check a measure against every stopped lot gain.
    VerifyMeasure { market: PathBuf, measure: PathBuf },
    /// Snell envelope of one lot's gains and its martingale part.
    Snell {
        market: PathBuf,
        measure: PathBuf,
        #[arg(long)]
        start: usize,
    },
    /// Generate a certified example instance into a directory.
    GenExample {
        example: Example,
        #[arg(long, value_parser = rational_arg)]
        alpha: Option<Rational>,
        #[arg(long, value_parser = rational_arg)]
        r: Option<Rational>,
        #[arg(long)]
        t: Option<usize>,
        #[arg(long = "horizon")]
        horizon: Option<usize>,
        #[arg(long, value_parser = rational_arg)]
        kappa: Option<Rational>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rewrite a tax market as a bid-ask market with one asset per purchase date.
    Embed {
        market: PathBuf,
        /// Apply the robust perturbation of the embedded prices.
        #[arg(long)]
        perturb: bool,
    },
    /// Smallest purchase bound admitting an arbitrage with unit profit.
    ArbitrageScale {
        market: PathBuf,
        #[arg(long, value_parser = rational_arg)]
        bound: Option<Rational>,
    },
}

/// Failure with exit code 2.
struct Failure(String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(e.to_string())
    }
}

struct Outcome {
    report: Value,
    violated: bool,
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn load<T>(path: &Path, parse: impl FnOnce(&str) -> Result<T, Error>) -> Result<T, Failure> {
    parse(&read(path)?).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn load_market(path: &Path) -> Result<TaxMarket, Failure> {
    let m = load(path, io::read_market)?;
    m.ensure_valid().map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    Ok(m)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn q(x: &Rational) -> Value {
    Value::String(format_rational(x))
}

fn per_leaf(tree: &ScenarioTree, values: &[Rational]) -> Value {
    let map: BTreeMap<String, Value> =
        tree.leaves().iter().zip(values).map(|(&l, v)| (tree.label(l).to_string(), q(v))).collect();
    json!(map)
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable")
}

fn local_report(tree: &ScenarioTree, r: &LocalConditionReport) -> Value {
    let atoms: Vec<Value> = r
        .atoms
        .iter()
        .map(|a| {
            json!({
                "node": tree.label(a.node),
                "returns": a.returns.iter().map(q).collect::<Vec<_>>(),
                "branch": a.branch.map(|b| b.as_str()),
            })
        })
        .collect();
    json!({ "period": r.period, "overall": r.overall, "atoms": atoms })
}

fn run(cli: Cli) -> Result<Outcome, Failure> {
    match cli.command {
        Command::Validate { market } => {
            let m = load(&market, io::read_market)?;
            let report = validate_market(&m);
            let violations: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
            Ok(Outcome {
                violated: !violations.is_empty(),
                report: json!({ "verb": "validate", "ok": violations.is_empty(), "violations": violations }),
            })
        }
        Command::CheckNa { market, bid_ask: true, bound, certificate } => {
            let m = load(&market, io::read_bidask)?;
            let v = bidask_check_na(&m, bound.as_ref())?;
            let arb = v.status == Status::Arbitrage;
            let mut report = json!({
                "verb": "check-na",
                "market": "bid-ask",
                "bound": bound.as_ref().map(q),
                "verdict": v.status.as_str(),
            });
            if let Some(s) = &v.certificate {
                let file = io::bidask_strategy_file(&m, s);
                report["certificate"] = to_value(&file);
                if let Some(values) = &v.values {
                    report["values"] = per_leaf(&m.tree, values);
                }
                if let Some(path) = certificate {
                    write(&path, &(serde_json::to_string_pretty(&file).unwrap() + "\n"))?;
                }
            }
            if let Some(w) = &v.dual_weights {
                report["dual_weights"] = per_leaf(&m.tree, w);
            }
            Ok(Outcome { report, violated: arb })
        }
        Command::CheckNa { market, bid_ask: false, bound, certificate } => {
            if bound.is_some() {
                return Err(Failure("--bound applies to bid-ask markets; use arbitrage-scale".into()));
            }
            let m = load_market(&market)?;
            let v = check_na(&m)?;
            let mut report = json!({
                "verb": "check-na",
                "verdict": v.status.as_str(),
                "lp_value": q(&v.lp_value),
            });
            match v.status {
                Status::Arbitrage => {
                    let s = v.certificate.as_ref().expect("arbitrage certificate");
                    report["certificate"] = to_value(&io::strategy_file(&m.tree, s));
                    report["values"] = per_leaf(&m.tree, v.values.as_deref().unwrap_or_default());
                    if let Some(path) = certificate {
                        write(&path, &io::write_strategy(&m.tree, s))?;
                    }
                }
                Status::NoArbitrage => {
                    let qm = find_separating_measure(&m)?.expect("measure under no arbitrage");
                    report["measure"] = to_value(&io::measure_file(&m.tree, &qm));
                    if let Some(path) = certificate {
                        write(&path, &io::write_measure(&m.tree, &qm))?;
                    }
                }
            }
            Ok(Outcome { violated: v.status == Status::Arbitrage, report })
        }
        Command::CheckOnePeriod { market, t } => {
            let m = load_market(&market)?;
            let r = check_one_period(&m, t)?;
            let mut report = local_report(&m.tree, &r);
            report["verb"] = json!("check-one-period");
            Ok(Outcome { violated: !r.overall, report })
        }
        Command::CheckRlna { market, t } => {
            let m = load_market(&market)?;
            let r = check_rlna_sufficient(&m, t)?;
            let mut report = local_report(&m.tree, &r);
            report["verb"] = json!("check-rlna");
            report["kappa"] = q(&taxarb::kappa(t, m.horizon(), &m.tax, &m.rate)?);
            Ok(Outcome { violated: !r.overall, report })
        }
        Command::CheckNeverSure { market } => {
            let m = load_market(&market)?;
            let r = check_never_sure(&m)?;
            let periods: Vec<Value> = r.periods.iter().map(|p| local_report(&m.tree, p)).collect();
            Ok(Outcome {
                violated: !r.overall,
                report: json!({ "verb": "check-never-sure", "overall": r.overall, "periods": periods }),
            })
        }
        Command::CheckNaReduced { reduced, certificate } => {
            let red = load(&reduced, io::read_reduced)?;
            red.base.ensure_valid()?;
            let v = check_na_reduced(&red)?;
            let tree = &red.base.tree;
            let mut report = json!({
                "verb": "check-na-reduced",
                "eliminated_period": red.t,
                "verdict": v.status.as_str(),
                "lp_value": q(&v.lp_value),
            });
            if let Some(s) = &v.certificate {
                report["certificate"] = to_value(&io::strategy_file(tree, s));
                report["values"] = per_leaf(tree, v.values.as_deref().unwrap_or_default());
                if let Some(path) = certificate {
                    write(&path, &io::write_strategy(tree, s))?;
                }
            }
            if let Some(w) = &v.dual_weights {
                report["dual_weights"] = per_leaf(tree, w);
            }
            Ok(Outcome { violated: v.status == Status::Arbitrage, report })
        }
        Command::FindMeasure { market, certificate } => {
            let m = load_market(&market)?;
            let found = find_separating_measure(&m)?;
            if let (Some(qm), Some(path)) = (&found, certificate) {
                write(&path, &io::write_measure(&m.tree, qm))?;
            }
            Ok(Outcome {
                violated: found.is_none(),
                report: json!({
                    "verb": "find-measure",
                    "measure": found.as_ref().map(|qm| to_value(&io::measure_file(&m.tree, qm))),
                }),
            })
        }
        Command::VerifyMeasure { market, measure } => {
            let m = load_market(&market)?;
            let qm = load(&measure, |text| io::read_measure(&m.tree, text))?;
            qm.validate(&m.tree).map_err(|e| Failure(format!("{}: {e}", measure.display())))?;
            let lp = max_expected_value(&m, &qm)?;
            let check = verify_stopping_constraints(&m, &qm)?;
            let (ok, stopping) = match &check {
                StoppingCheck::Ok { counts } => (
                    true,
                    json!({ "status": "ok", "counts": counts.iter().map(|c| c.to_string()).collect::<Vec<_>>() }),
                ),
                StoppingCheck::Violated { start, stop_nodes, expectation } => (
                    false,
                    json!({
                        "status": "violated",
                        "start": start,
                        "stop_nodes": stop_nodes.iter().map(|&v| m.tree.label(v)).collect::<Vec<_>>(),
                        "expectation": q(expectation),
                    }),
                ),
            };
            Ok(Outcome {
                violated: !ok,
                report: json!({
                    "verb": "verify-measure",
                    "separating": ok,
                    "stopping_times": stopping,
                    "max_expected_value": q(&lp),
                }),
            })
        }
        Command::Snell { market, measure, start } => {
            let m = load_market(&market)?;
            let qm = load(&measure, |text| io::read_measure(&m.tree, text))?;
            qm.validate(&m.tree).map_err(|e| Failure(format!("{}: {e}", measure.display())))?;
            let env = snell_martingale_part(&m, &qm, start)?;
            let violations = env.violations(&m.tree, &qm);
            let dominates = env.dominates(&m.tree);
            let nodes: Vec<Value> = env
                .u
                .keys()
                .map(|&v| {
                    json!({
                        "node": m.tree.label(v),
                        "time": m.tree.time(v),
                        "u": q(&env.u[&v]),
                        "m": q(&env.m[&v]),
                        "x": q(&env.x[&v]),
                    })
                })
                .collect();
            Ok(Outcome {
                violated: !violations.is_empty() || !dominates,
                report: json!({
                    "verb": "snell",
                    "start": start,
                    "dominates": dominates,
                    "violations": violations,
                    "nodes": nodes,
                }),
            })
        }
        Command::GenExample { example, alpha, r, t, horizon, kappa, depth, out } => {
            gen_example(example, alpha, r, t, horizon, kappa, depth, &out)
        }
        Command::Embed { market, perturb } => {
            let m = load_market(&market)?;
            let mut e = embed_tax_market(&m)?;
            if perturb {
                e = perturb_robust(&m)?.apply(&e);
            }
            let text = io::write_bidask(&e);
            Ok(Outcome { report: serde_json::from_str(&text).expect("valid json"), violated: false })
        }
        Command::ArbitrageScale { market, bound } => {
            let m = load_market(&market)?;
            let s = arbitrage_scale(&m, bound.as_ref())?;
            let mut report = json!({
                "verb": "arbitrage-scale",
                "threshold": s.threshold.as_ref().map(q),
                "leaf": s.leaf.map(|l| m.tree.label(l)),
                "bound": bound.as_ref().map(q),
                "status_at_bound": s.status_at_bound.map(|st| st.as_str()),
            });
            if let Some(c) = &s.certificate {
                report["certificate"] = to_value(&io::strategy_file(&m.tree, c));
                report["values"] = per_leaf(&m.tree, s.values.as_deref().unwrap_or_default());
            }
            let violated = match s.status_at_bound {
                Some(st) => st == Status::Arbitrage,
                None => s.threshold.is_some(),
            };
            Ok(Outcome { report, violated })
        }
    }
}

fn need<T>(x: Option<T>, flag: &str) -> Result<T, Failure> {
    x.ok_or_else(|| Failure(format!("missing --{flag}")))
}

#[allow(clippy::too_many_arguments)]
fn gen_example(
    example: Example,
    alpha: Option<Rational>,
    r: Option<Rational>,
    t: Option<usize>,
    horizon: Option<usize>,
    kappa: Option<Rational>,
    depth: Option<usize>,
    out: &Path,
) -> Result<Outcome, Failure> {
    fs::create_dir_all(out).map_err(|e| Failure(format!("{}: {e}", out.display())))?;
    let mut files: BTreeMap<String, String> = BTreeMap::new();
    let mut report = json!({ "verb": "gen-example" });
    match example {
        Example::Grigoriev => {
            let depth = depth.unwrap_or(DEFAULT_DEPTH);
            let ex = gen_grigoriev_counterexample(depth)?;
            files.insert("bidask.json".into(), io::write_bidask(&ex.market));
            for m in 1..=depth as u64 {
                let s = ex.strategy(m);
                let text = serde_json::to_string_pretty(&io::bidask_strategy_file(&ex.market, &s)).unwrap() + "\n";
                files.insert(format!("strategy-phi_{m}.json"), text);
            }
            report["example"] = json!("grigoriev");
            report["depth"] = json!(depth);
        }
        _ => {
            let alpha = need(alpha, "alpha")?;
            let r = need(r, "r")?;
            let instance = match example {
                Example::Hedge => gen_hedge_example(&alpha, &r)?,
                Example::KappaMaximality => {
                    gen_kappa_maximality(need(t, "t")?, need(horizon, "horizon")?, &alpha, &r, &need(kappa, "kappa")?)?
                }
                Example::Infinite => gen_infinite_example(&alpha, &r, depth.unwrap_or(DEFAULT_DEPTH))?.instance,
                Example::Grigoriev => unreachable!(),
            };
            files = io::instance_files(&instance);
            report["example"] = json!(instance.name);
            report["parameters"] =
                json!(instance.parameters.iter().map(|(k, v)| (k.clone(), q(v))).collect::<BTreeMap<_, _>>());
            report["certified"] = json!(instance.certified.len());
            report["verdicts"] = json!(instance
                .verdicts
                .iter()
                .map(|(k, s)| (k.clone(), s.as_str()))
                .collect::<BTreeMap<_, _>>());
        }
    }
    for (name, text) in &files {
        write(&out.join(name), text)?;
    }
    report["files"] = json!(files.keys().collect::<Vec<_>>());
    Ok(Outcome { report, violated: false })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let output = cli.output.clone();
    match run(cli) {
        Ok(outcome) => {
            let text = serde_json::to_string_pretty(&outcome.report).expect("serializable") + "\n";
            match output {
                Some(path) => {
                    if let Err(Failure(msg)) = write(&path, &text) {
                        eprintln!("error: {msg}");
                        return ExitCode::from(2);
                    }
                }
                None => print!("{text}"),
            }
            ExitCode::from(if outcome.violated { 1 } else { 0 })
        }
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
