use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const NOW: &str = "1700000000";

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn run_with(&self, secret: Option<&str>, args: &[&str]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ssi"));
        cmd.current_dir(self.dir.path()).args(args).env_remove("WALLET_SECRET").env_remove("VERIFIER_WALLET_SECRET");
        if let Some(s) = secret {
            cmd.env("WALLET_SECRET", s);
        }
        cmd.output().unwrap()
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_with(Some("pw"), args)
    }

    /// Runs with --json and asserts the exit code.
    fn json(&self, code: i32, args: &[&str]) -> Value {
        let mut all = vec!["--json", "--now", NOW];
        all.extend_from_slice(args);
        let out = self.run(&all);
        assert_eq!(
            out.status.code(),
            Some(code),
            "{args:?}\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(v: &Value) -> &str {
    v.as_str().unwrap()
}

#[test]
fn sim_run_writes_identical_reports() {
    let env = Env::new();
    for out in ["a.json", "b.json"] {
        let o = env.run(&["sim", "run", "--seed", "42", "--out", out]);
        assert_eq!(code(&o), 0);
    }
    let a = std::fs::read(env.path("a.json")).unwrap();
    assert_eq!(a, std::fs::read(env.path("b.json")).unwrap());
    assert!(env.path("a.json.events.jsonl").exists());
    let report: Value = serde_json::from_slice(&a).unwrap();
    let nodes = report["nodes"].as_array().unwrap();
    assert_eq!(nodes.len(), 4);
    assert!(nodes.iter().all(|n| n["chain_digest"] == nodes[0]["chain_digest"]));
    assert_eq!(report["safety_violations"], 0);
}

#[test]
fn sim_run_rejects_bad_config() {
    let env = Env::new();
    std::fs::write(env.path("bad.json"), r#"{"consensus":{"n":3}}"#).unwrap();
    let o = env.run(&["sim", "run", "--config", "bad.json"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    std::fs::write(env.path("typo.json"), r#"{"duraton_ms":5}"#).unwrap();
    assert_eq!(code(&env.run(&["sim", "run", "--config", "typo.json"])), 1);
    assert_eq!(code(&env.run(&["sim", "run", "--config", "missing.json"])), 1);
}

#[test]
fn sim_runs_generated_workload_under_fault() {
    let env = Env::new();
    env.json(0, &["sim", "workload", "--count", "15", "--seed", "3", "--out", "w.json"]);
    std::fs::write(
        env.path("eq.json"),
        r#"{"faults":[{"node":0,"kind":"equivocate"}],"duration_ms":20000}"#,
    )
    .unwrap();
    let r = env.json(0, &["sim", "run", "--config", "eq.json", "--workload", "w.json", "--seed", "3"]);
    assert_eq!(r["decided"], 15);
    assert_eq!(r["honest_chains_agree"], true);
}

struct Parties {
    env: Env,
    issuer_did: String,
    alice_did: String,
    verifier_did: String,
    cred_def: String,
}

fn parties() -> Parties {
    let env = Env::new();
    for (w, label) in [("issuer", "Issuer"), ("alice", "Alice"), ("verifier", "Verifier")] {
        let r = env.json(0, &["wallet", "create", "--wallet", &env.p(w), "--label", label]);
        assert_eq!(r["label"], label);
    }
    let did = |w: &str, rel: &str| {
        let r = env.json(0, &["did", "new", "--wallet", w, "--relation", rel, "--ledger", "net.ledger.jsonl"]);
        assert_eq!(r["relation"], rel);
        s(&r["did"]).to_string()
    };
    let issuer_did = did("issuer", "public");
    let verifier_did = did("verifier", "public");
    let alice_did = did("alice", "issuer");
    did("alice", "verifier");
    let schema = env.json(
        0,
        &[
            "schema", "publish", "--wallet", "issuer", "--relation", "public", "--ledger", "net.ledger.jsonl", "--name",
            "license", "--attr", "holder:string", "--attr", "class:string", "--attr", "points:integer",
        ],
    );
    let def = env.json(
        0,
        &[
            "cred", "define", "--wallet", "issuer", "--relation", "public", "--ledger", "net.ledger.jsonl", "--schema",
            s(&schema["schema_id"]), "--tag", "v1",
        ],
    );
    Parties {
        issuer_did,
        alice_did,
        verifier_did,
        cred_def: s(&def["cred_def_id"]).to_string(),
        env,
    }
}

fn issue_license(p: &Parties, out: &str) -> Value {
    p.env.json(
        0,
        &[
            "cred", "issue", "--wallet", "issuer", "--relation", "public", "--ledger", "net.ledger.jsonl", "--cred-def",
            &p.cred_def, "--subject", &p.alice_did, "--attr", "holder=Alice", "--attr", "class=B", "--attr", "points=12",
            "--out", out,
        ],
    )
}

#[test]
fn credential_lifecycle() {
    let p = parties();
    let env = &p.env;
    let issued = issue_license(&p, "alice.cred.json");
    assert_eq!(s(&issued["credential_hash"]).len(), 64);
    let cred: Value = serde_json::from_str(&std::fs::read_to_string(env.path("alice.cred.json")).unwrap()).unwrap();
    assert_eq!(cred["issuer_did"], p.issuer_did.as_str());
    assert_eq!(cred["attributes"]["points"], 12);

    let v = env.json(0, &["cred", "verify", "alice.cred.json", "--ledger", "net.ledger.jsonl"]);
    assert_eq!(v["verdict"], "valid");

    let mut forged = cred.clone();
    forged["attributes"]["class"] = "A".into();
    std::fs::write(env.path("forged.cred.json"), forged.to_string()).unwrap();
    let v = env.json(3, &["cred", "verify", "forged.cred.json", "--ledger", "net.ledger.jsonl"]);
    assert_eq!(v["verdict"], "invalid");

    env.json(0, &["cred", "store", "alice.cred.json", "--wallet", "alice", "--ledger", "net.ledger.jsonl"]);
    let listed = env.json(0, &["wallet", "list", "--wallet", "alice"]);
    assert_eq!(listed["credentials"].as_array().unwrap().len(), 1);
    assert_eq!(listed["relations"]["issuer"], p.alice_did.as_str());

    let pres = env.json(
        0,
        &[
            "cred", "present", "--wallet", "alice", "--relation", "verifier", "--audience", &p.verifier_did, "--out",
            "p.pres.json", "alice.cred.json",
        ],
    );
    assert_eq!(pres["credentials"], 1);
    let args = ["cred", "verify-presentation", "p.pres.json", "--audience", &p.verifier_did, "--ledger", "net.ledger.jsonl"];
    assert_eq!(env.json(0, &args)["verdict"], "valid");
    let wrong = [
        "cred", "verify-presentation", "p.pres.json", "--audience", &p.issuer_did, "--ledger", "net.ledger.jsonl",
    ];
    assert_eq!(env.json(3, &wrong)["reason"], "wrong_audience");

    env.json(0, &["cred", "revoke", "alice.cred.json", "--wallet", "issuer", "--ledger", "net.ledger.jsonl"]);
    let v = env.json(4, &["cred", "verify", "alice.cred.json", "--ledger", "net.ledger.jsonl"]);
    assert_eq!(v["reason"], "revoked");
    assert_eq!(env.json(4, &args)["reason"], "revoked");
    let r = env.json(4, &["cred", "store", "alice.cred.json", "--wallet", "alice", "--ledger", "net.ledger.jsonl"]);
    assert_eq!(r["rejected"], "revoked");

    let info = env.json(0, &["ledger", "info", "--ledger", "net.ledger.jsonl"]);
    assert_eq!(info["transactions"], 7);
}

#[test]
fn wallet_secret_handling() {
    let env = Env::new();
    assert_eq!(code(&env.run_with(None, &["wallet", "create", "--wallet", "w", "--label", "x"])), 1);
    env.json(0, &["wallet", "create", "--wallet", "w", "--label", "x"]);
    assert_eq!(code(&env.run(&["wallet", "create", "--wallet", "w", "--label", "x"])), 1);
    assert_eq!(env.json(0, &["wallet", "unlock", "--wallet", "w"])["unlocked"], true);
    assert_eq!(code(&env.run_with(Some("wrong"), &["wallet", "unlock", "--wallet", "w"])), 5);
    assert_eq!(code(&env.run_with(None, &["wallet", "unlock", "--wallet", "w"])), 1);
    let text = std::fs::read_to_string(env.path("w")).unwrap();
    assert!(!text.contains("pw"));
}

#[test]
fn challenge_response() {
    let p = parties();
    let env = &p.env;
    let challenge = |out: &str, ttl: &str| {
        env.json(
            0,
            &[
                "auth", "challenge", "--did", &p.alice_did, "--ledger", "net.ledger.jsonl", "--state", "v.state.json",
                "--verifier-did", &p.verifier_did, "--ttl", ttl, "--out", out,
            ],
        )
    };
    let c = challenge("c1.json", "60");
    assert_eq!(s(&c["challenge_id"]).len(), 64);
    env.json(0, &["auth", "respond", "c1.json", "--wallet", "alice", "--relation", "issuer", "--out", "r1.json"]);
    let ok = env.json(0, &["auth", "check", "r1.json", "--state", "v.state.json"]);
    assert_eq!(ok["outcome"], "authenticated");
    let replay = env.json(5, &["auth", "check", "r1.json", "--state", "v.state.json"]);
    assert_eq!(replay["reason"], "replayed");

    challenge("c2.json", "10");
    env.json(0, &["auth", "respond", "c2.json", "--wallet", "alice", "--relation", "issuer", "--out", "r2.json"]);
    let late = env.run(&["--json", "--now", "1700000011", "auth", "check", "r2.json", "--state", "v.state.json"]);
    assert_eq!(code(&late), 5);
    let late: Value = serde_json::from_slice(&late.stdout).unwrap();
    assert_eq!(late["reason"], "expired");

    challenge("c3.json", "60");
    let o = env.run(&["auth", "respond", "c3.json", "--wallet", "alice", "--relation", "verifier", "--out", "r3.json"]);
    assert_eq!(code(&o), 5);
}

#[test]
fn consent_receipt_round_trip() {
    let p = parties();
    let env = &p.env;
    std::fs::copy(env.path("net.ledger.jsonl"), env.path("before.ledger.jsonl")).unwrap();
    let r = env.json(
        0,
        &[
            "consent", "record", "--wallet", "alice", "--relation", "verifier", "--verifier-wallet", "verifier",
            "--verifier-relation", "public", "--attr", "class:string", "--purpose", "rental", "--ledger",
            "net.ledger.jsonl", "--out", "r.receipt.json",
        ],
    );
    let hash = s(&r["receipt_hash"]).to_string();
    let check = env.json(0, &["consent", "check", "r.receipt.json", "--ledger", "net.ledger.jsonl"]);
    assert_eq!(check["on_ledger"], true);
    assert_eq!(check["receipt_hash"], hash.as_str());
    let before = env.json(3, &["consent", "check", "r.receipt.json", "--ledger", "before.ledger.jsonl"]);
    assert_eq!(before["on_ledger"], false);
    let ledger = std::fs::read_to_string(env.path("net.ledger.jsonl")).unwrap();
    assert!(ledger.contains(&hash));
    assert!(!ledger.contains("rental"));
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}_seed1.txt"))
}

#[test]
fn scenario_transcripts_match_golden() {
    let env = Env::new();
    for name in ["medical", "employment", "loan"] {
        let o = env.run(&["scenario", "run", name, "--seed", "1"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
        let got = String::from_utf8(o.stdout).unwrap();
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::write(golden(name), &got).unwrap();
        }
        assert_eq!(got, std::fs::read_to_string(golden(name)).unwrap(), "{name}");
    }
}

#[test]
fn scenario_json_and_failures() {
    let env = Env::new();
    let r = env.json(0, &["scenario", "run", "loan", "--seed", "2"]);
    assert_eq!(r["passed"], true);
    assert_eq!(r["privacy"]["hits"].as_array().unwrap().len(), 0);
    assert!(r["steps"].as_array().unwrap().iter().all(|s| s["ok"] == true));

    let o = env.run(&["scenario", "run", "loan", "--skip-consent"]);
    assert_eq!(code(&o), 6);
    assert!(String::from_utf8_lossy(&o.stderr).contains("step 11"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("failing step: 11"));

    assert_eq!(code(&env.run(&["scenario", "run", "mortgage"])), 1);
}

#[test]
fn help_on_every_subcommand() {
    let env = Env::new();
    let paths: &[&[&str]] = &[
        &[],
        &["sim", "run"],
        &["sim", "workload"],
        &["wallet", "create"],
        &["wallet", "unlock"],
        &["wallet", "list"],
        &["did", "new"],
        &["schema", "publish"],
        &["cred", "define"],
        &["cred", "issue"],
        &["cred", "verify"],
        &["cred", "revoke"],
        &["cred", "store"],
        &["cred", "present"],
        &["cred", "verify-presentation"],
        &["consent", "record"],
        &["consent", "check"],
        &["auth", "challenge"],
        &["auth", "respond"],
        &["auth", "check"],
        &["ledger", "info"],
        &["scenario", "run"],
    ];
    for path in paths {
        let mut args = path.to_vec();
        args.push("--help");
        let o = env.run(&args);
        assert_eq!(code(&o), 0, "{path:?}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"));
    }
    assert_eq!(code(&env.run(&["cred", "frobnicate"])), 1);
    assert_eq!(code(&env.run(&[])), 1);
}
