//! Shared helpers for the CLI integration tests, including the rule-based
//! "fixture author" that stands in for a model when (re)recording
//! `fixtures/script.json`.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use radar_core::provider::{ChatProvider, ChatRequest, ChatResponse, ProviderError, Role, Usage};
use serde_json::{json, Value};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixtures().join(name)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Disease {
    Glioblastoma,
    Meningioma,
    Abscess,
}

fn disease_of(text: &str) -> Disease {
    if text.contains("dural tail") {
        Disease::Meningioma
    } else if text.contains("mastoid") {
        Disease::Abscess
    } else {
        Disease::Glioblastoma
    }
}

fn candidates(d: Disease) -> [&'static str; 10] {
    match d {
        Disease::Glioblastoma => [
            "Glioblastoma",
            "Brain metastasis",
            "Primary CNS lymphoma",
            "Brain abscess",
            "Tumefactive demyelination",
            "Anaplastic astrocytoma",
            "Gliosarcoma",
            "Radiation necrosis",
            "Subacute infarct",
            "Resolving haematoma",
        ],
        Disease::Meningioma => [
            "Meningioma",
            "Dural metastasis",
            "Solitary fibrous tumour",
            "Dural lymphoma",
            "Schwannoma",
            "Sarcoidosis",
            "Plasmacytoma",
            "Idiopathic hypertrophic pachymeningitis",
            "Gliosarcoma",
            "Ewing sarcoma",
        ],
        Disease::Abscess => [
            "Glioblastoma",
            "Brain abscess",
            "Brain metastasis",
            "Tumefactive demyelination",
            "Primary CNS lymphoma",
            "Tuberculoma",
            "Neurocysticercosis",
            "Toxoplasmosis",
            "Resolving haematoma",
            "Radiation necrosis",
        ],
    }
}

fn queries(d: Disease) -> Value {
    let pairs: [(&str, &str); 5] = match d {
        Disease::Glioblastoma => [
            ("Does glioblastoma cross the corpus callosum?", "glioblastoma"),
            ("What does the necrotic centre of glioblastoma look like?", "glioblastoma"),
            ("How does a brain abscess wall differ from a tumour rim?", "brain abscess"),
            ("Which perfusion findings favour glioblastoma?", "glioblastoma"),
            ("How is lymphoma told apart from glioblastoma?", "primary CNS lymphoma"),
        ],
        Disease::Meningioma => [
            ("Is a dural tail typical of meningioma?", "meningioma"),
            ("Does meningioma cause hyperostosis?", "meningioma"),
            ("What signal does meningioma have on T2?", "meningioma"),
            ("Which signs confirm an extra-axial location?", "meningioma"),
            ("Does glioblastoma ever appear extra-axial?", "glioblastoma"),
        ],
        Disease::Abscess => [
            ("Does a brain abscess restrict diffusion centrally?", "brain abscess"),
            ("Can otogenic infection cause a temporal abscess?", "brain abscess"),
            ("Does glioblastoma restrict diffusion in its necrotic core?", "glioblastoma"),
            ("What is the dual rim sign?", "brain abscess"),
            ("Is the glioblastoma rim thick and irregular?", "glioblastoma"),
        ],
    };
    json!({"queries": pairs.iter().map(|(q, k)| json!({"question": q, "keyword": k})).collect::<Vec<_>>()})
}

fn report(labels: [&str; 5]) -> Value {
    let conf = [0.55, 0.2, 0.1, 0.08, 0.07];
    json!({
        "primary": {"label": labels[0], "confidence": conf[0]},
        "differentials": (1..5).map(|i| json!({"label": labels[i], "confidence": conf[i]})).collect::<Vec<_>>(),
    })
}

/// Final RADAR opinion; the abscess case is missed at Top-1 but kept in the
/// differential under a synonym.
fn radar_report(d: Disease) -> Value {
    match d {
        Disease::Glioblastoma => report([
            "Glioblastoma multiforme",
            "Brain metastasis",
            "Primary CNS lymphoma",
            "Brain abscess",
            "Tumefactive demyelination",
        ]),
        Disease::Meningioma => report([
            "Meningioma",
            "Dural metastasis",
            "Solitary fibrous tumour",
            "Dural lymphoma",
            "Schwannoma",
        ]),
        Disease::Abscess => report([
            "Glioblastoma",
            "Brain abscess",
            "Brain metastasis",
            "Tumefactive demyelination",
            "Tuberculoma",
        ]),
    }
}

fn single_report(d: Disease) -> Value {
    match d {
        Disease::Glioblastoma => report(["GBM", "Brain metastasis", "Lymphoma", "Abscess", "Demyelination"]),
        Disease::Meningioma => report(["Dural metastasis", "Meningioma", "Lymphoma", "Schwannoma", "Sarcoidosis"]),
        Disease::Abscess => report(["Glioblastoma", "Brain metastasis", "Lymphoma", "Demyelination", "Tuberculoma"]),
    }
}

fn section<'a>(text: &'a str, heading: &str) -> &'a str {
    let Some(start) = text.find(heading) else { return "" };
    let rest = &text[start + heading.len()..];
    rest.split("\n\n").next().unwrap_or("").trim()
}

fn answer(user: &str) -> Value {
    let block = user
        .split_once("Reference excerpts:")
        .and_then(|(_, rest)| rest.split_once("Answer concisely"))
        .map_or("", |(b, _)| b);
    let excerpts: Vec<(&str, &str)> = block
        .lines()
        .filter_map(|l| l.strip_prefix('[').and_then(|r| r.split_once("] ")))
        .collect();
    match excerpts.first() {
        None => json!({"answer": "No evidence found.", "supporting_chunk_ids": []}),
        Some((_, text)) => {
            let sentence = text.split(". ").next().unwrap_or(text).trim_end_matches('.');
            json!({
                "answer": format!("{sentence}."),
                "supporting_chunk_ids": excerpts.iter().take(2).map(|(id, _)| *id).collect::<Vec<_>>(),
            })
        }
    }
}

fn agent_number(system: &str) -> usize {
    system
        .strip_prefix("You are doctor ")
        .and_then(|r| r.split(' ').next())
        .and_then(|n| n.parse().ok())
        .unwrap_or(1)
}

/// Rule-based stand-in for a chat model, keyed on which template a request
/// was rendered from.
pub struct FixtureAuthor;

impl FixtureAuthor {
    fn reply(&self, system: &str, user: &str) -> Value {
        let d = disease_of(section(user, "Imaging findings:"));
        if system.starts_with("You are an experienced radiologist. You read") {
            json!({"candidates": candidates(d)})
        } else if system.starts_with("You are a radiology research assistant") {
            queries(d)
        } else if system.starts_with("You answer questions using only") {
            answer(user)
        } else if system.starts_with("You are a senior radiologist") {
            radar_report(d)
        } else if system.starts_with("You are an experienced radiologist making") {
            single_report(d)
        } else if system.starts_with("You are doctor") {
            // The abscess panel starts split and agrees after one discussion round.
            let split = d == Disease::Abscess && !user.contains("Discussion round");
            if split && agent_number(system) == 2 {
                report(["Tuberculoma", "Brain abscess", "Glioblastoma", "Toxoplasmosis", "Brain metastasis"])
            } else {
                radar_report(d)
            }
        } else if system.starts_with("You are a critical reviewer") {
            json!({"objections": ["The restricted diffusion and mastoid opacification are not explained by the primary diagnosis."]})
        } else if system.starts_with("You are an experienced radiologist revising") {
            radar_report(d)
        } else if system.starts_with("You map diagnosis names") {
            let label = section(user, "Diagnosis as written:").to_lowercase();
            json!({"canonical": label})
        } else {
            json!({})
        }
    }
}

impl ChatProvider for FixtureAuthor {
    fn id(&self) -> &str {
        "fixture-author"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let text = |role: Role| {
            request
                .messages
                .iter()
                .find(|m| m.role == role)
                .map(|m| m.content.as_str())
                .unwrap_or("")
        };
        let reply = self.reply(text(Role::System), text(Role::User));
        Ok(ChatResponse {
            content: serde_json::to_string(&reply).expect("reply serializes"),
            provider_id: self.id().to_string(),
            usage: Usage::default(),
        })
    }
}
