use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::rngs::OsRng;
use rand::RngCore;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use ssi_core::auth::{AuthOutcome, Challenge, ChallengeVerifier};
use ssi_core::consensus::{did_workload, run_simulation, workload_from_json, workload_to_json, SimConfig};
use ssi_core::consent::{record_consent, ConsentReceipt};
use ssi_core::credential::{
    issue, present, revoke, verify_credential, verify_presentation, CredentialInvalid, Presentation,
    VerifiableCredential, Verdict,
};
use ssi_core::crypto::Digest;
use ssi_core::flow::{LedgerAccess, LocalLedger};
use ssi_core::scenario::{run_scenario, ScenarioOptions};
use ssi_core::state::{txn, AttributeSpec, AttributeType, CredDefBody, SchemaBody};
use ssi_core::wallet::{create_wallet, KdfParams, StoreRejection, Wallet, WalletError};
use ssi_core::{canonicalize, to_canonical};

use crate::*;

pub const USAGE: u8 = 1;
pub const SAFETY: u8 = 2;
pub const VERIFICATION: u8 = 3;
pub const REVOKED: u8 = 4;
pub const AUTH: u8 = 5;
pub const SCENARIO: u8 = 6;

pub struct Fail {
    pub code: u8,
    pub msg: String,
}

fn usage(msg: impl std::fmt::Display) -> Fail {
    Fail {
        code: USAGE,
        msg: msg.to_string(),
    }
}

type Res<T> = Result<T, Fail>;

struct Ctx {
    json: bool,
    now: Option<u64>,
}

impl Ctx {
    fn clock(&self) -> u64 {
        self.now.unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
    }

    /// Prints `value` as canonical JSON under --json, else `text`.
    fn emit(&self, value: Value, text: impl FnOnce() -> String) {
        if self.json {
            println!("{}", canonicalize(&value).expect("output is canonicalizable").as_str());
        } else {
            println!("{}", text());
        }
    }

    fn ledger(&self, l: &LedgerArg, create: bool) -> Res<LocalLedger> {
        let mut ledger = if l.ledger.exists() {
            LocalLedger::load(&l.ledger).map_err(|e| usage(format!("{}: {e}", l.ledger.display())))?
        } else if create {
            LocalLedger::new(0)
        } else {
            return Err(usage(format!("{}: no such ledger", l.ledger.display())));
        };
        ledger.clock = ledger.clock.max(self.clock());
        Ok(ledger)
    }
}

fn save_ledger(ledger: &LocalLedger, l: &LedgerArg) -> Res<()> {
    ledger.save(&l.ledger).map_err(usage)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Res<T> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Res<()> {
    std::fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Res<()> {
    write(path, to_canonical(value).map_err(usage)?.as_str())
}

fn secret(var: &str) -> Res<String> {
    std::env::var(var).map_err(|_| usage(format!("{var} is not set")))
}

fn wallet_error(e: WalletError) -> Fail {
    match e {
        WalletError::UnlockFailed => Fail {
            code: AUTH,
            msg: e.to_string(),
        },
        other => usage(other),
    }
}

fn open_wallet_with(path: &Path, var: &str) -> Res<Wallet> {
    let mut w = Wallet::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    w.unlock(secret(var)?.as_bytes()).map_err(wallet_error)?;
    Ok(w)
}

fn open_wallet(w: &WalletArg) -> Res<Wallet> {
    open_wallet_with(&w.wallet, "WALLET_SECRET")
}

fn save_wallet(wallet: &Wallet, w: &WalletArg) -> Res<()> {
    wallet.save(&w.wallet).map_err(usage)
}

fn digest_arg(s: &str) -> Res<Digest> {
    Digest::from_hex(s).map_err(|e| usage(format!("{s:?}: {e}")))
}

fn attribute_specs(attrs: &[String]) -> Res<Vec<AttributeSpec>> {
    attrs
        .iter()
        .map(|a| {
            let (name, ty) = a.split_once(':').ok_or_else(|| usage(format!("{a:?}: expected name:type")))?;
            let ty: AttributeType = ty.parse().map_err(|e| usage(format!("{a:?}: {e}")))?;
            Ok(AttributeSpec::new(name, ty))
        })
        .collect()
}

fn verdict_code(v: &Verdict) -> u8 {
    match v {
        Verdict::Valid => 0,
        Verdict::Invalid(CredentialInvalid::Revoked) => REVOKED,
        Verdict::Invalid(_) => VERIFICATION,
    }
}

fn verdict_text(v: &Verdict) -> String {
    match v {
        Verdict::Valid => "valid".into(),
        Verdict::Invalid(r) => format!("invalid: {r}"),
    }
}

pub fn dispatch(cli: Cli) -> Res<u8> {
    let ctx = Ctx {
        json: cli.json,
        now: cli.now,
    };
    match cli.command {
        Command::Sim(c) => sim(&ctx, c),
        Command::Wallet(c) => wallet(&ctx, c),
        Command::Did(DidCmd::New { w, relation, l }) => did_new(&ctx, &w, &relation, &l),
        Command::Schema(c) => schema(&ctx, c),
        Command::Cred(c) => cred(&ctx, c),
        Command::Consent(c) => consent(&ctx, c),
        Command::Auth(c) => auth(&ctx, c),
        Command::Ledger(LedgerCmd::Info { l }) => {
            let ledger = ctx.ledger(&l, false)?;
            let (height, txns, digest) = (ledger.chain.height(), ledger.chain.txn_count(), ledger.chain.digest());
            ctx.emit(
                json!({"height": height, "transactions": txns, "chain_digest": digest, "state_digest": ledger.state.digest()}),
                || format!("height {height}, {txns} transactions, chain digest {}", digest.to_hex()),
            );
            Ok(0)
        }
        Command::Scenario(ScenarioCmd::Run {
            name,
            seed,
            skip_consent,
        }) => {
            let report = run_scenario(name, seed, ScenarioOptions { skip_consent });
            if ctx.json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.transcript());
            }
            if report.passed {
                Ok(0)
            } else {
                let at = report
                    .failed_step
                    .map_or_else(|| "privacy scan".to_string(), |s| format!("step {s}"));
                Err(Fail {
                    code: SCENARIO,
                    msg: format!("scenario {name} failed at {at}"),
                })
            }
        }
    }
}

fn sim(ctx: &Ctx, c: SimCmd) -> Res<u8> {
    match c {
        SimCmd::Run {
            config,
            seed,
            workload,
            count,
            out,
        } => {
            let cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                    SimConfig::from_json(&text).map_err(usage)?
                }
                None => SimConfig::default(),
            };
            let items = match workload {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                    workload_from_json(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
                }
                None => did_workload(count, 10, seed, cfg.start_time_s),
            };
            let sim = run_simulation(&cfg, seed, &items).map_err(usage)?;
            let report = sim.report();
            if let Some(out) = &out {
                write(out, &report.to_json())?;
                let mut events = out.clone().into_os_string();
                events.push(".events.jsonl");
                write(&PathBuf::from(events), &sim.events_jsonl())?;
            }
            let unsafe_run = report.safety_violations > 0 || !report.honest_chains_agree;
            if ctx.json || out.is_none() {
                println!("{}", report.to_json());
            } else {
                println!(
                    "seed {seed}: {}/{} decided, {} instance changes, {} safety violations",
                    report.decided,
                    report.submitted,
                    report.instance_changes.len(),
                    report.safety_violations
                );
            }
            if unsafe_run {
                return Err(Fail {
                    code: SAFETY,
                    msg: "consensus safety violation detected".into(),
                });
            }
            Ok(0)
        }
        SimCmd::Workload {
            count,
            interval_ms,
            seed,
            start_time_s,
            out,
        } => {
            write(&out, &workload_to_json(&did_workload(count, interval_ms, seed, start_time_s)))?;
            ctx.emit(json!({"items": count}), || format!("wrote {count} requests"));
            Ok(0)
        }
    }
}

fn wallet(ctx: &Ctx, c: WalletCmd) -> Res<u8> {
    match c {
        WalletCmd::Create { w, label } => {
            if w.wallet.exists() {
                return Err(usage(format!("{} already exists", w.wallet.display())));
            }
            let wallet = create_wallet(&label, secret("WALLET_SECRET")?.as_bytes(), KdfParams::interactive(&mut OsRng))
                .map_err(usage)?;
            save_wallet(&wallet, &w)?;
            ctx.emit(json!({"label": label}), || format!("created wallet {label}"));
            Ok(0)
        }
        WalletCmd::Unlock { w } => {
            let wallet = open_wallet(&w)?;
            ctx.emit(json!({"unlocked": true, "label": wallet.owner_label}), || "unlocked".into());
            Ok(0)
        }
        WalletCmd::List { w } => {
            let wallet = Wallet::load(&w.wallet).map_err(usage)?;
            let relations: BTreeMap<_, _> = wallet.relations.iter().map(|(r, p)| (r.clone(), p.did.clone())).collect();
            let creds: Vec<_> = wallet
                .credentials
                .iter()
                .map(|s| json!({"credential_hash": s.credential.credential_hash, "issuer_did": s.credential.issuer_did, "subject_did": s.credential.subject_did}))
                .collect();
            ctx.emit(json!({"label": wallet.owner_label, "relations": relations, "credentials": creds}), || {
                let mut out = format!("wallet {}", wallet.owner_label);
                for (r, did) in &relations {
                    out.push_str(&format!("\n  {r}: {did}"));
                }
                for s in &wallet.credentials {
                    out.push_str(&format!("\n  credential {} from {}", s.credential.credential_hash.to_hex(), s.credential.issuer_did));
                }
                out
            });
            Ok(0)
        }
    }
}

fn publish(ledger: &mut LocalLedger, t: ssi_core::LedgerTransaction) -> Res<()> {
    ledger.publish(t).map_err(usage)
}

fn did_new(ctx: &Ctx, w: &WalletArg, relation: &str, l: &LedgerArg) -> Res<u8> {
    let mut wallet = open_wallet(w)?;
    let mut ledger = ctx.ledger(l, true)?;
    let mut seed = [0u8; 32];
    OsRng.fill_bytes(&mut seed);
    let (did, _) = wallet.new_pairwise(relation, &seed).map_err(usage)?;
    let reg = wallet.identity(relation).map_err(usage)?.did_reg(ledger.now());
    publish(&mut ledger, reg)?;
    save_ledger(&ledger, l)?;
    save_wallet(&wallet, w)?;
    ctx.emit(json!({"relation": relation, "did": did}), || did.clone());
    Ok(0)
}

fn schema(ctx: &Ctx, c: SchemaCmd) -> Res<u8> {
    let SchemaCmd::Publish {
        w,
        relation,
        l,
        name,
        version,
        attrs,
    } = c;
    let wallet = open_wallet(&w)?;
    let id = wallet.identity(&relation).map_err(usage)?;
    let mut ledger = ctx.ledger(&l, true)?;
    let body = SchemaBody {
        name,
        version,
        attributes: attribute_specs(&attrs)?,
    };
    let t = txn::schema(&body, &id.did, &id.signing, ledger.now()).map_err(usage)?;
    publish(&mut ledger, t)?;
    save_ledger(&ledger, &l)?;
    let schema_id = body.id();
    ctx.emit(json!({"schema_id": schema_id}), || schema_id.to_hex());
    Ok(0)
}

fn cred(ctx: &Ctx, c: CredCmd) -> Res<u8> {
    match c {
        CredCmd::Define {
            w,
            relation,
            l,
            schema,
            tag,
        } => {
            let wallet = open_wallet(&w)?;
            let id = wallet.identity(&relation).map_err(usage)?;
            let mut ledger = ctx.ledger(&l, true)?;
            let body = CredDefBody {
                schema_id: digest_arg(&schema)?,
                issuer_did: id.did.clone(),
                issuer_verification_key: id.signing.public(),
                tag,
            };
            let t = txn::cred_def(&body, &id.signing, ledger.now()).map_err(usage)?;
            publish(&mut ledger, t)?;
            save_ledger(&ledger, &l)?;
            let cred_def_id = body.id();
            ctx.emit(json!({"cred_def_id": cred_def_id}), || cred_def_id.to_hex());
            Ok(0)
        }
        CredCmd::Issue {
            w,
            relation,
            l,
            cred_def,
            subject,
            attrs,
            out,
        } => {
            let wallet = open_wallet(&w)?;
            let id = wallet.identity(&relation).map_err(usage)?;
            let ledger = ctx.ledger(&l, false)?;
            let cd = ledger
                .state
                .cred_def(&digest_arg(&cred_def)?)
                .ok_or_else(|| usage("credential definition not on the ledger"))?;
            let schema = ledger
                .state
                .schema(&cd.body.schema_id)
                .ok_or_else(|| usage("schema not on the ledger"))?;
            let mut values = BTreeMap::new();
            for a in &attrs {
                let (name, raw) = a.split_once('=').ok_or_else(|| usage(format!("{a:?}: expected name=value")))?;
                let value = match schema.body.attributes.iter().find(|s| s.name == name).map(|s| s.attr_type) {
                    Some(AttributeType::Integer) => json!(raw.parse::<i64>().map_err(|e| usage(format!("{a:?}: {e}")))?),
                    Some(AttributeType::Boolean) => json!(raw.parse::<bool>().map_err(|e| usage(format!("{a:?}: {e}")))?),
                    _ => json!(raw),
                };
                values.insert(name.to_string(), value);
            }
            let cred = issue(&id.signing, cd, schema, &subject, values, ledger.now()).map_err(usage)?;
            write(&out, &cred.to_json())?;
            ctx.emit(json!({"credential_hash": cred.credential_hash}), || cred.credential_hash.to_hex());
            Ok(0)
        }
        CredCmd::Verify { file, l } => {
            let cred: VerifiableCredential = read_json(&file)?;
            let ledger = ctx.ledger(&l, false)?;
            let v = verify_credential(&cred, &ledger.state, ledger.now());
            ctx.emit(json!(v), || verdict_text(&v));
            Ok(verdict_code(&v))
        }
        CredCmd::Revoke { file, w, l } => {
            let cred: VerifiableCredential = read_json(&file)?;
            let wallet = open_wallet(&w)?;
            let mut ledger = ctx.ledger(&l, false)?;
            let cd = ledger
                .state
                .cred_def(&cred.cred_def_id)
                .cloned()
                .ok_or_else(|| usage("credential definition not on the ledger"))?;
            let relation = wallet
                .relation_for_did(&cd.body.issuer_did)
                .ok_or_else(|| usage("wallet does not hold the issuer DID"))?;
            let id = wallet.identity(relation).map_err(usage)?;
            let t = revoke(&id.signing, &cd, &[cred.credential_hash], ledger.now()).map_err(usage)?;
            publish(&mut ledger, t)?;
            save_ledger(&ledger, &l)?;
            ctx.emit(json!({"revoked": cred.credential_hash}), || {
                format!("revoked {}", cred.credential_hash.to_hex())
            });
            Ok(0)
        }
        CredCmd::Store { file, w, l } => {
            let cred: VerifiableCredential = read_json(&file)?;
            let mut wallet = open_wallet(&w)?;
            let ledger = ctx.ledger(&l, false)?;
            let hash = cred.credential_hash;
            match wallet.store_credential(cred, &ledger.state, ledger.now()) {
                Ok(()) => {
                    save_wallet(&wallet, &w)?;
                    ctx.emit(json!({"stored": hash}), || format!("stored {}", hash.to_hex()));
                    Ok(0)
                }
                Err(r) => {
                    ctx.emit(json!({"rejected": r}), || format!("rejected: {r}"));
                    Ok(if r == StoreRejection::Revoked { REVOKED } else { VERIFICATION })
                }
            }
        }
        CredCmd::Present {
            w,
            relation,
            audience,
            out,
            credentials,
        } => {
            let wallet = open_wallet(&w)?;
            let creds = credentials.iter().map(|p| read_json(p)).collect::<Res<Vec<VerifiableCredential>>>()?;
            let p = present(&wallet, &relation, &creds, &audience, ctx.clock()).map_err(usage)?;
            write(&out, &p.to_json())?;
            ctx.emit(json!({"holder_did": p.holder_did, "credentials": creds.len()}), || {
                format!("presented {} credentials as {}", creds.len(), p.holder_did)
            });
            Ok(0)
        }
        CredCmd::VerifyPresentation { file, audience, l } => {
            let p: Presentation = read_json(&file)?;
            let ledger = ctx.ledger(&l, false)?;
            let v = verify_presentation(&p, &ledger.state, &audience, ledger.now());
            ctx.emit(json!(v), || verdict_text(&v));
            Ok(verdict_code(&v))
        }
    }
}

fn consent(ctx: &Ctx, c: ConsentCmd) -> Res<u8> {
    match c {
        ConsentCmd::Record {
            w,
            relation,
            verifier_wallet,
            verifier_relation,
            attrs,
            purpose,
            l,
            out,
        } => {
            let owner = open_wallet(&w)?;
            let var = if std::env::var_os("VERIFIER_WALLET_SECRET").is_some() {
                "VERIFIER_WALLET_SECRET"
            } else {
                "WALLET_SECRET"
            };
            let verifier = open_wallet_with(&verifier_wallet, var)?
                .identity(&verifier_relation)
                .map_err(usage)?;
            let mut ledger = ctx.ledger(&l, false)?;
            let (receipt, t) = record_consent(&owner, &relation, &verifier, attribute_specs(&attrs)?, &purpose, ledger.now())
                .map_err(usage)?;
            publish(&mut ledger, t)?;
            save_ledger(&ledger, &l)?;
            write(&out, &receipt.to_json())?;
            let hash = receipt.hash();
            ctx.emit(json!({"receipt_hash": hash}), || hash.to_hex());
            Ok(0)
        }
        ConsentCmd::Check { file, l } => {
            let receipt: ConsentReceipt = read_json(&file)?;
            let ledger = ctx.ledger(&l, false)?;
            let signed = receipt.verify_signatures(&ledger.state);
            let on_ledger = receipt.matches_ledger(&ledger.state);
            let ok = signed.is_ok() && on_ledger;
            ctx.emit(
                json!({"signatures_valid": signed.is_ok(), "on_ledger": on_ledger, "receipt_hash": receipt.hash()}),
                || match (&signed, on_ledger) {
                    (Err(e), _) => format!("invalid: {e}"),
                    (Ok(()), false) => "invalid: hash not on the ledger".into(),
                    (Ok(()), true) => "valid".into(),
                },
            );
            Ok(if ok { 0 } else { VERIFICATION })
        }
    }
}

fn load_verifier(path: &Path, did: &str) -> Res<ChallengeVerifier> {
    if path.exists() {
        read_json(path)
    } else {
        Ok(ChallengeVerifier::new(did))
    }
}

fn auth(ctx: &Ctx, c: AuthCmd) -> Res<u8> {
    match c {
        AuthCmd::Challenge {
            did,
            l,
            state,
            verifier_did,
            ttl,
            out,
        } => {
            let ledger = ctx.ledger(&l, false)?;
            let doc = ledger
                .state
                .resolve_did(&did)
                .ok_or_else(|| usage(format!("{did} is not on the ledger")))?;
            let mut verifier = load_verifier(&state, &verifier_did)?;
            let ch = verifier
                .issue_challenge(&doc.agreement_key, ttl, ctx.clock(), &mut OsRng)
                .map_err(usage)?;
            write_json(&state, &verifier)?;
            write_json(&out, &ch)?;
            ctx.emit(json!({"challenge_id": ch.challenge_id}), || ch.challenge_id.to_hex());
            Ok(0)
        }
        AuthCmd::Respond { file, w, relation, out } => {
            let ch: Challenge = read_json(&file)?;
            let wallet = open_wallet(&w)?;
            let response = wallet.respond_challenge(&relation, &ch.ciphertext).map_err(|e| Fail {
                code: AUTH,
                msg: e.to_string(),
            })?;
            write_json(&out, &json!({"challenge_id": ch.challenge_id, "response": hex::encode(response)}))?;
            ctx.emit(json!({"challenge_id": ch.challenge_id}), || "responded".into());
            Ok(0)
        }
        AuthCmd::Check { file, state } => {
            let resp: Value = read_json(&file)?;
            let id = digest_arg(resp["challenge_id"].as_str().unwrap_or_default())?;
            let bytes = hex::decode(resp["response"].as_str().unwrap_or_default()).map_err(usage)?;
            let mut verifier: ChallengeVerifier = read_json(&state)?;
            let outcome = verifier.check_response(&id, &bytes, ctx.clock());
            write_json(&state, &verifier)?;
            ctx.emit(json!(outcome), || match outcome {
                AuthOutcome::Authenticated => "authenticated".into(),
                AuthOutcome::Rejected(r) => format!("rejected: {r:?}"),
            });
            Ok(match outcome {
                AuthOutcome::Authenticated => 0,
                AuthOutcome::Rejected(_) => AUTH,
            })
        }
    }
}
