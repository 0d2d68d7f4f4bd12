use std::sync::Arc;

use proptest::prelude::*;
use sha2::{Digest, Sha256};

use privstory_core::gateway::{
    bundle_fingerprint, fingerprint, CompletionProvider, GatewayError, ModelConfig, ProviderKind, RawResponse,
    ReplayProvider, ReplayStore,
};
use privstory_core::prompt::{PromptBundle, TemplateVariant};

/// Length-prefixed encoding rebuilt by hand.
fn reference(system: &str, user: &str, model: &str, temperature: f64, index: u32) -> String {
    let mut buf = Vec::new();
    for field in [
        b"privstory-request-v1".to_vec(),
        system.as_bytes().to_vec(),
        user.as_bytes().to_vec(),
        model.as_bytes().to_vec(),
        temperature.to_bits().to_le_bytes().to_vec(),
        index.to_le_bytes().to_vec(),
    ] {
        buf.extend_from_slice(&(field.len() as u64).to_le_bytes());
        buf.extend_from_slice(&field);
    }
    hex::encode(Sha256::digest(&buf))
}

proptest! {
    #[test]
    fn fingerprint_matches_reference(s in ".{0,40}", u in ".{0,80}", m in "[a-z0-9-]{1,12}", temp in 0.0..2.0f64, i in 0u32..8) {
        prop_assert_eq!(fingerprint(&s, &u, &m, temp, i).0, reference(&s, &u, &m, temp, i));
    }

    #[test]
    fn field_boundaries_matter(a in "[ab]{0,6}", b in "[ab]{0,6}") {
        // moving text between system and user must change the key
        let joined = format!("{a}{b}");
        if !b.is_empty() {
            prop_assert_ne!(fingerprint(&a, &b, "m", 0.7, 0), fingerprint(&joined, "", "m", 0.7, 0));
        }
    }
}

#[test]
fn every_request_field_is_keyed() {
    let base = fingerprint("s", "u", "m", 0.7, 0);
    assert_ne!(base, fingerprint("s", "u", "m", 0.7, 1));
    assert_ne!(base, fingerprint("s", "u", "m", 0.5, 0));
    assert_ne!(base, fingerprint("s", "u", "m2", 0.7, 0));
    assert_ne!(base, fingerprint("s", "u2", "m", 0.7, 0));
    assert_eq!(base, fingerprint("s", "u", "m", 0.7, 0));
    assert_eq!(base.0.len(), 64);
}

fn bundle(id: &str, user: &str) -> PromptBundle {
    PromptBundle {
        document_id: id.into(),
        system_text: "system".into(),
        user_text: user.into(),
        icl_document_ids: vec![],
        tag_contract: vec![],
        taxonomy_version: "t".into(),
        template_version: "v".into(),
        variant: TemplateVariant::Full,
        warnings: vec![],
    }
}

#[test]
fn store_survives_reopen_and_serves_replay() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ModelConfig::new("model-x");
    cfg.provider_kind = ProviderKind::Replay;
    let b = bundle("app/README.md", "document text");
    {
        let store = ReplayStore::open(dir.path()).unwrap();
        for i in 0..2 {
            let resp = RawResponse {
                document_id: b.document_id.clone(),
                response_index: i,
                request_fingerprint: bundle_fingerprint(&b, &cfg, i),
                model_name: cfg.model_name.clone(),
                text: format!("answer {i}"),
                latency_ms: None,
                prompt_tokens: None,
                completion_tokens: None,
                attempt: 1,
            };
            store.put(&b, &cfg, &resp).unwrap();
        }
    }
    let store = Arc::new(ReplayStore::open_existing(dir.path()).unwrap());
    assert_eq!(store.len(), 2);
    let (_, entry) = store.find("app/README.md", 1, Some("model-x")).unwrap();
    assert_eq!(store.prompt(&entry).unwrap().user_text, "document text");

    let replay = ReplayProvider::new(cfg.clone(), store);
    assert_eq!(replay.complete(&b, 1).unwrap().text, "answer 1");
    match replay.complete(&bundle("app/README.md", "edited"), 0) {
        Err(GatewayError::MissingRecord { document_id, .. }) => assert_eq!(document_id, "app/README.md"),
        other => panic!("expected a missing record, got {other:?}"),
    }
}

#[test]
fn open_existing_requires_an_index() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ReplayStore::open_existing(dir.path()).is_err());
}
