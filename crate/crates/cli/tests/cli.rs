use std::path::Path;
use std::process::{Command, Output};

use num_traits::Zero;
use serde_json::Value;
use taxarb::io;
use taxarb::{liquidation_value, rat, TaxMarket, TreeBuilder};

fn taxarb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taxarb")).args(args).output().expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json report")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn deterministic_market(dir: &Path) -> std::path::PathBuf {
    let r = rat(1, 10);
    let mut b = TreeBuilder::new();
    let mut v = b.root();
    for _ in 0..2 {
        v = b.child(v, rat(1, 1));
    }
    let tree = b.build();
    let g = rat(11, 10);
    let price = vec![rat(1, 1), g.clone(), &g * &g];
    let m = TaxMarket::new(tree, price, r, rat(1, 4));
    let path = dir.join("deterministic.json");
    std::fs::write(&path, io::write_market(&m)).unwrap();
    path
}

#[test]
fn hedge_round_trip_is_arbitrage_free() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hedge");
    let gen = taxarb(&["gen-example", "hedge", "--alpha", "1/4", "--r", "1/10", "--out", p(&out)]);
    assert_eq!(gen.status.code(), Some(0));
    assert!(out.join("certification.json").exists());
    let market = out.join("market.json");
    let measure = dir.path().join("q.json");
    let na = taxarb(&["check-na", p(&market), "--certificate", p(&measure)]);
    assert_eq!(na.status.code(), Some(0));
    let rep = report(&na);
    assert_eq!(rep["verdict"], "no_arbitrage");
    assert!(rep["measure"].is_object());
    let verify = taxarb(&["verify-measure", p(&market), p(&measure)]);
    assert_eq!(verify.status.code(), Some(0));
    assert_eq!(report(&verify)["max_expected_value"], "0/1");
    let snell = taxarb(&["snell", p(&market), p(&measure), "--start", "1"]);
    assert_eq!(snell.status.code(), Some(0));
    assert_eq!(report(&snell)["dominates"], true);
}

#[test]
fn deterministic_growth_is_an_arbitrage() {
    let dir = tempfile::tempdir().unwrap();
    let market = deterministic_market(dir.path());
    let cert = dir.path().join("s.json");
    let out = taxarb(&["check-na", p(&market), "--certificate", p(&cert)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(&out)["verdict"], "arbitrage");
    let m = io::read_market(&std::fs::read_to_string(&market).unwrap()).unwrap();
    let s = io::read_strategy(&m, &std::fs::read_to_string(&cert).unwrap()).unwrap();
    let v = liquidation_value(&m, &s).unwrap();
    assert!(v.iter().all(|x| x >= &Zero::zero()) && v.iter().any(|x| !x.is_zero()));
    assert_eq!(taxarb(&["find-measure", p(&market)]).status.code(), Some(1));
    let scale = taxarb(&["arbitrage-scale", p(&market)]);
    assert_eq!(scale.status.code(), Some(1));
    assert!(report(&scale)["threshold"].is_string());
}

#[test]
fn reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let market = deterministic_market(dir.path());
    for verb in [&["check-na"][..], &["check-never-sure"], &["check-rlna", "--t", "1"], &["embed"]] {
        let mut args = verb.to_vec();
        args.push(p(&market));
        assert_eq!(taxarb(&args).stdout, taxarb(&args).stdout);
    }
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n \"horizon\": 0,\n \"nodes\": [{\"id\": \"r\", \"time\": 0, \"parent\": null, \"branch_prob\": \"1\", \"price\": 1.5}],\n \"rate\": \"1/10\", \"tax\": \"0\"}").unwrap();
    let out = taxarb(&["check-na", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
    assert_eq!(taxarb(&["check-na", "/nonexistent.json"]).status.code(), Some(2));
    let float_flag = taxarb(&["gen-example", "hedge", "--alpha", "0.25", "--r", "1/10", "--out", p(dir.path())]);
    assert_eq!(float_flag.status.code(), Some(2));
}

#[test]
fn validate_flags_absorbing_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(
        &path,
        r#"{"horizon": 1, "rate": "1/25", "tax": "1/4", "nodes": [
            {"id": "a", "time": 0, "parent": null, "branch_prob": "1", "price": "0"},
            {"id": "b", "time": 1, "parent": "a", "branch_prob": "1", "price": "1"}]}"#,
    )
    .unwrap();
    let out = taxarb(&["validate", p(&path)]);
    assert_eq!(out.status.code(), Some(1));
    let text = report(&out)["violations"][0].as_str().unwrap().to_string();
    assert!(text.contains("zero price followed by positive price"), "{text}");
    assert_eq!(taxarb(&["check-na", p(&path)]).status.code(), Some(2));
}

#[test]
fn kappa_example_verdicts_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k");
    let gen = taxarb(&[
        "gen-example", "kappa-maximality", "--alpha", "1/2", "--r", "1/10", "--t", "2", "--horizon", "4", "--kappa", "1",
        "--out", p(&out),
    ]);
    assert_eq!(gen.status.code(), Some(0));
    assert_eq!(taxarb(&["check-na-reduced", p(&out.join("reduced.json"))]).status.code(), Some(0));
    assert_eq!(taxarb(&["check-na", p(&out.join("pasted.json"))]).status.code(), Some(1));
    let below = taxarb(&[
        "gen-example", "kappa-maximality", "--alpha", "1/2", "--r", "1/10", "--t", "2", "--horizon", "4", "--kappa=-1",
        "--out", p(&out),
    ]);
    assert_eq!(below.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&below.stderr).contains("kappa not above maximality bound"));
}

#[test]
fn grigoriev_bounded_and_unbounded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    assert_eq!(taxarb(&["gen-example", "grigoriev", "--depth", "5", "--out", p(&out)]).status.code(), Some(0));
    let market = out.join("bidask.json");
    assert_eq!(taxarb(&["check-na", "--bid-ask", p(&market)]).status.code(), Some(1));
    assert_eq!(taxarb(&["check-na", "--bid-ask", "--bound", "2", p(&market)]).status.code(), Some(0));
}

#[test]
fn embedding_reloads_with_the_same_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h");
    taxarb(&["gen-example", "hedge", "--alpha", "1/5", "--r", "1/20", "--out", p(&out)]);
    let embedded = dir.path().join("e.json");
    let emb = taxarb(&["-o", p(&embedded), "embed", p(&out.join("market.json"))]);
    assert_eq!(emb.status.code(), Some(0));
    assert_eq!(taxarb(&["check-na", "--bid-ask", p(&embedded)]).status.code(), Some(0));
    let det = deterministic_market(dir.path());
    let e2 = dir.path().join("e2.json");
    taxarb(&["-o", p(&e2), "embed", p(&det)]);
    assert_eq!(taxarb(&["check-na", "--bid-ask", p(&e2)]).status.code(), Some(1));
}

#[test]
fn stopping_cap_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h");
    taxarb(&["gen-example", "hedge", "--alpha", "1/4", "--r", "1/10", "--out", p(&out)]);
    let market = out.join("market.json");
    let q = dir.path().join("q.json");
    taxarb(&["find-measure", p(&market), "--certificate", p(&q)]);
    let capped = Command::new(env!("CARGO_BIN_EXE_taxarb"))
        .args(["verify-measure", p(&market), p(&q)])
        .env("TAXARB_STOPPING_CAP", "2")
        .output()
        .unwrap();
    assert_eq!(capped.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&capped.stderr).contains("cap"));
}
