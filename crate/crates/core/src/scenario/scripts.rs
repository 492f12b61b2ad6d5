use std::collections::BTreeMap;

use serde_json::Value;

use super::{Action, Expect, ScenarioName, ScenarioScript, ScriptStep};
use crate::crypto::sha256;
use crate::state::{AttributeSpec, AttributeType};

use AttributeType::{Date, Integer, String as Text};

pub fn script(name: ScenarioName, seed: u64) -> ScenarioScript {
    let mut b = Builder { seed, steps: Vec::new() };
    let actors = match name {
        ScenarioName::Medical => medical(&mut b),
        ScenarioName::Employment => employment(&mut b),
        ScenarioName::Loan => loan(&mut b),
    };
    ScenarioScript {
        name,
        actors: actors.iter().map(|a| a.to_string()).collect(),
        steps: b.steps,
    }
}

struct Builder {
    seed: u64,
    steps: Vec<ScriptStep>,
}

/// Attribute values are derived from the seed so the privacy scan can look
/// for them byte-for-byte.
impl Builder {
    fn bytes(&self, tag: &str) -> [u8; 32] {
        let mut m = b"ssi/sentinel".to_vec();
        m.extend_from_slice(&self.seed.to_be_bytes());
        m.extend_from_slice(tag.as_bytes());
        sha256(&m).0
    }

    fn text(&self, tag: &str) -> Value {
        Value::String(format!("sv-{tag}-{}", hex::encode(&self.bytes(tag)[..5])))
    }

    fn date(&self, tag: &str) -> Value {
        let h = self.bytes(tag);
        Value::String(format!(
            "{}-{:02}-{:02}",
            1950 + u32::from(h[0]) % 60,
            1 + h[1] % 12,
            1 + h[2] % 28
        ))
    }

    fn int(&self, tag: &str) -> Value {
        let h = self.bytes(tag);
        Value::from(100_000_000 + u32::from_be_bytes([h[0], h[1], h[2], h[3]]) % 900_000_000)
    }

    fn step(&mut self, actor: &str, action: Action, expect: Expect) {
        self.steps.push(ScriptStep {
            actor: actor.to_string(),
            action,
            expect,
        });
    }

    fn join(&mut self, actor: &str, relation: &str) {
        self.step(
            actor,
            Action::Join {
                relation: relation.into(),
            },
            Expect::Ok,
        );
    }

    fn institution(&mut self, actor: &str, schema: &str, attrs: &[(&str, AttributeType)]) {
        self.join(actor, "public");
        self.publish(actor, "public", schema, attrs);
    }

    fn publish(&mut self, actor: &str, relation: &str, schema: &str, attrs: &[(&str, AttributeType)]) {
        self.step(
            actor,
            Action::PublishSchema {
                relation: relation.into(),
                schema: schema.into(),
                version: "1.0".into(),
                attributes: attrs.iter().map(|(n, t)| AttributeSpec::new(*n, *t)).collect(),
            },
            Expect::Ok,
        );
        self.define(actor, relation, schema, actor);
    }

    fn define(&mut self, actor: &str, relation: &str, schema: &str, tag: &str) {
        self.step(
            actor,
            Action::DefineCredential {
                relation: relation.into(),
                schema: schema.into(),
                tag: tag.into(),
            },
            Expect::Ok,
        );
    }

    fn authenticate(&mut self, verifier: &str, owner: &str, relation: &str) {
        self.step(
            verifier,
            Action::Authenticate {
                owner: owner.into(),
                relation: relation.into(),
            },
            Expect::Authenticated,
        );
    }

    /// Issue and store, with the subject's pairwise DID for `relation`.
    fn issue(&mut self, issuer: &str, label: &str, schema: &str, subject: &str, relation: &str, attrs: Vec<(&str, Value)>) {
        self.step(
            issuer,
            Action::Issue {
                label: label.into(),
                schema: schema.into(),
                subject: subject.into(),
                relation: relation.into(),
                attributes: to_map(attrs),
            },
            Expect::Ok,
        );
        self.step(
            subject,
            Action::Store {
                credential: label.into(),
            },
            Expect::Ok,
        );
    }

    fn present(&mut self, holder: &str, label: &str, creds: &[&str], audience: &str, relation: &str) {
        self.step(
            holder,
            Action::Present {
                label: label.into(),
                credentials: creds.iter().map(|c| c.to_string()).collect(),
                audience: audience.into(),
                relation: relation.into(),
            },
            Expect::Ok,
        );
    }

    fn verify(&mut self, verifier: &str, presentation: &str, expect: Expect) {
        self.step(
            verifier,
            Action::Verify {
                presentation: presentation.into(),
            },
            expect,
        );
    }
}

fn to_map(attrs: Vec<(&str, Value)>) -> BTreeMap<String, Value> {
    attrs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Two hospitals hand Alice her records; a third checks both before
/// treating her.
fn medical(b: &mut Builder) -> Vec<&'static str> {
    let record = [
        ("patient_name", Text),
        ("diagnosis", Text),
        ("treatment", Text),
        ("visit_date", Date),
    ];
    b.institution("hospital-a", "medical-record", &record);
    b.join("hospital-b", "public");
    b.define("hospital-b", "public", "medical-record", "hospital-b");
    b.join("hospital-c", "public");
    for rel in ["hospital-a", "hospital-b", "hospital-c"] {
        b.join("alice", rel);
    }
    for (hospital, label) in [("hospital-a", "record-a"), ("hospital-b", "record-b")] {
        b.authenticate(hospital, "alice", hospital);
        let attrs = vec![
            ("patient_name", b.text(&format!("{label}/name"))),
            ("diagnosis", b.text(&format!("{label}/diagnosis"))),
            ("treatment", b.text(&format!("{label}/treatment"))),
            ("visit_date", b.date(&format!("{label}/visit"))),
        ];
        b.issue(hospital, label, "medical-record", "alice", hospital, attrs);
    }
    b.authenticate("hospital-c", "alice", "hospital-c");
    b.present("alice", "history", &["record-a", "record-b"], "hospital-c", "hospital-c");
    b.verify("hospital-c", "history", Expect::Valid);
    vec!["alice", "hospital-a", "hospital-b", "hospital-c"]
}

/// Bob applies for a job with a degree, past employment, lab results, a
/// background check and a self-attested address. The former employer later
/// withdraws its reference.
fn employment(b: &mut Builder) -> Vec<&'static str> {
    b.institution(
        "university",
        "degree",
        &[
            ("holder_name", Text),
            ("degree", Text),
            ("field", Text),
            ("graduated_on", Date),
        ],
    );
    b.institution(
        "former-employer",
        "employment",
        &[("employee_name", Text), ("position", Text), ("start_date", Date), ("end_date", Date)],
    );
    b.institution(
        "hospital-lab",
        "lab-result",
        &[("test", Text), ("result", Text), ("sampled_on", Date)],
    );
    b.institution(
        "background-agency",
        "background-check",
        &[("record_status", Text), ("reference_number", Integer), ("checked_on", Date)],
    );
    b.join("company", "public");
    for rel in ["university", "former-employer", "hospital-lab", "background-agency", "company", "self"] {
        b.join("bob", rel);
    }
    b.authenticate("university", "bob", "university");
    let attrs = vec![
        ("holder_name", b.text("degree/name")),
        ("degree", b.text("degree/degree")),
        ("field", b.text("degree/field")),
        ("graduated_on", b.date("degree/date")),
    ];
    b.issue("university", "degree", "degree", "bob", "university", attrs);
    b.authenticate("former-employer", "bob", "former-employer");
    let attrs = vec![
        ("employee_name", b.text("employment/name")),
        ("position", b.text("employment/position")),
        ("start_date", b.date("employment/start")),
        ("end_date", b.date("employment/end")),
    ];
    b.issue("former-employer", "employment", "employment", "bob", "former-employer", attrs);
    b.authenticate("hospital-lab", "bob", "hospital-lab");
    let attrs = vec![
        ("test", b.text("lab/test")),
        ("result", b.text("lab/result")),
        ("sampled_on", b.date("lab/date")),
    ];
    b.issue("hospital-lab", "lab", "lab-result", "bob", "hospital-lab", attrs);
    b.authenticate("background-agency", "bob", "background-agency");
    let attrs = vec![
        ("record_status", b.text("background/status")),
        ("reference_number", b.int("background/reference")),
        ("checked_on", b.date("background/date")),
    ];
    b.issue("background-agency", "background", "background-check", "bob", "background-agency", attrs);
    b.publish("bob", "self", "postal-address", &[("street", Text), ("city", Text), ("postal_code", Text)]);
    let attrs = vec![
        ("street", b.text("address/street")),
        ("city", b.text("address/city")),
        ("postal_code", b.text("address/postal")),
    ];
    b.issue("bob", "address", "postal-address", "bob", "self", attrs);

    let all = ["degree", "employment", "lab", "background", "address"];
    b.authenticate("company", "bob", "company");
    b.present("bob", "application", &all, "company", "company");
    b.verify("company", "application", Expect::Valid);
    b.step(
        "former-employer",
        Action::Revoke {
            credential: "employment".into(),
        },
        Expect::Ok,
    );
    b.verify("company", "application", Expect::Revoked);
    b.present("bob", "amended", &["degree", "lab", "background", "address"], "company", "company");
    b.verify("company", "amended", Expect::Valid);
    vec![
        "bob",
        "university",
        "former-employer",
        "hospital-lab",
        "background-agency",
        "company",
    ]
}

/// Bank B asks for Alice's credit score from Bank A and her land title from
/// the registry; each share is backed by a consent receipt on the ledger.
fn loan(b: &mut Builder) -> Vec<&'static str> {
    b.institution(
        "bank-a",
        "credit-report",
        &[("credit_score", Integer), ("customer_since", Date), ("account_number", Text)],
    );
    b.institution(
        "land-registry",
        "land-title",
        &[("parcel_id", Text), ("owner_name", Text), ("area_m2", Integer)],
    );
    b.join("bank-b", "public");
    for rel in ["bank-a", "land-registry", "bank-b"] {
        b.join("alice", rel);
    }
    let credit = to_map(vec![
        ("credit_score", b.int("credit/score")),
        ("customer_since", b.date("credit/since")),
        ("account_number", b.text("credit/account")),
    ]);
    let title = to_map(vec![
        ("parcel_id", b.text("title/parcel")),
        ("owner_name", b.text("title/owner")),
        ("area_m2", b.int("title/area")),
    ]);
    for (provider, schema, attributes, requested) in [
        ("bank-a", "credit-report", credit, vec!["credit_score"]),
        ("land-registry", "land-title", title, vec!["parcel_id", "area_m2"]),
    ] {
        b.step(
            "bank-b",
            Action::ConsentFlow {
                provider: provider.into(),
                owner: "alice".into(),
                schema: schema.into(),
                owner_requester_relation: "bank-b".into(),
                owner_provider_relation: provider.into(),
                attributes,
                requested: requested.into_iter().map(String::from).collect(),
                purpose: "loan-application".into(),
            },
            Expect::ConsentRecorded,
        );
    }
    b.step("bank-b", Action::CheckConsents, Expect::Ok);
    vec!["alice", "bank-a", "land-registry", "bank-b"]
}
