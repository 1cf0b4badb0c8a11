mod common;

use std::collections::BTreeSet;

use common::*;
use oppweb_core::apps::{demo_messages, DEMO_COUNT};
use oppweb_core::keys::verify_message;
use oppweb_core::message::KEY_DESCRIPTION;
use oppweb_core::{CacheEventKind, CacheStore, InsertOutcome, KeySet, Message, StateDigest, VerifyOutcome};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[test]
fn demo_set_has_twenty_distinct_messages() {
    let msgs = demo_messages(&sandbox(), &identity(1), NOW).unwrap();
    assert_eq!(msgs.len(), DEMO_COUNT);
    let ids: BTreeSet<_> = msgs.iter().map(|m| m.id()).collect();
    assert_eq!(ids.len(), DEMO_COUNT);
}

/// The documented digest: sha256 over the concatenated sorted raw ids.
fn digest_oracle(ids: &BTreeSet<[u8; 32]>) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update(id);
    }
    hex::encode(h.finalize())
}

#[test]
fn insertion_order_does_not_change_state() {
    let msgs = demo_messages(&sandbox(), &identity(1), NOW).unwrap();
    let raw: BTreeSet<[u8; 32]> = msgs.iter().map(|m| *m.id().as_bytes()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut digests = BTreeSet::new();
    let mut listings = BTreeSet::new();
    for _ in 0..100 {
        let mut order = msgs.clone();
        order.shuffle(&mut rng);
        let cache = CacheStore::in_memory();
        for m in order {
            assert_eq!(cache.insert((*m).clone(), NOW + 100).unwrap(), InsertOutcome::New);
        }
        digests.insert(cache.state_digest().to_hex());
        let services = cache.services();
        listings.insert(format!("{services:?}{:?}", services.iter().map(|(s, _)| cache.list_service(s)).collect::<Vec<_>>()));
    }
    assert_eq!(digests.len(), 1);
    assert_eq!(listings.len(), 1);
    assert_eq!(digests.into_iter().next().unwrap(), digest_oracle(&raw));
}

#[test]
fn every_insert_is_announced_exactly_once() {
    let cache = CacheStore::in_memory();
    let subs = [cache.subscribe(), cache.subscribe()];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut new = 0;
    let mut pool = Vec::new();
    for i in 0..300u64 {
        let m = if !pool.is_empty() && rng.gen_bool(0.3) {
            pool.choose(&mut rng).cloned().unwrap()
        } else {
            let created = NOW - rng.gen_range(0..10_000);
            Message::builder("s").created_at(created).ttl(5400).payload("p", i.to_be_bytes().to_vec()).build().unwrap()
        };
        pool.push(m.clone());
        if cache.insert(m, NOW).unwrap() == InsertOutcome::New {
            new += 1;
        }
    }
    for s in &subs {
        let events = s.drain();
        assert_eq!(events.iter().filter(|e| e.kind == CacheEventKind::Inserted).count(), new);
        let ids: BTreeSet<_> = events.iter().map(|e| e.id).collect();
        assert_eq!(ids.len(), new);
    }
}

#[test]
fn persisted_state_recovers_to_the_same_digest() {
    let dir = tempfile::tempdir().unwrap();
    let msgs = demo_messages(&sandbox(), &identity(2), NOW).unwrap();
    let digest = {
        let (cache, _) = CacheStore::open(dir.path()).unwrap();
        for m in &msgs {
            cache.insert((**m).clone(), NOW).unwrap();
        }
        cache.persist().unwrap();
        cache.state_digest()
    };
    let (cache, report) = CacheStore::open(dir.path()).unwrap();
    assert_eq!(report.loaded, DEMO_COUNT);
    assert!(report.discarded.is_empty());
    assert_eq!(cache.state_digest(), digest);
}

#[test]
fn hundred_thousand_messages_have_distinct_ids() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ids = BTreeSet::new();
    for _ in 0..100_000 {
        let m = Message::builder("s").created_at(rng.gen()).payload("p", rng.gen::<[u8; 8]>().to_vec()).build().unwrap();
        ids.insert(m.id());
    }
    assert_eq!(ids.len(), 100_000);
}

#[test]
fn mutated_encodings_are_structured_errors() {
    let msgs = demo_messages(&sandbox(), &identity(3), NOW).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut errors = 0;
    for i in 0..10_000 {
        let mut bytes = msgs[i % msgs.len()].encode_canonical();
        match rng.gen_range(0..3) {
            0 => bytes.truncate(rng.gen_range(0..bytes.len())),
            1 => {
                // corrupt a length prefix region near the front
                let at = rng.gen_range(5..bytes.len().min(64));
                bytes[at] = rng.gen();
            }
            _ => {
                for _ in 0..rng.gen_range(1..5) {
                    let at = rng.gen_range(0..bytes.len());
                    bytes[at] ^= 1 << rng.gen_range(0..8);
                }
            }
        }
        match Message::decode(&bytes) {
            Err(e) => {
                assert!(!e.to_string().is_empty());
                errors += 1;
            }
            // whatever still decodes is canonical
            Ok(m) => assert_eq!(m.encode_canonical(), bytes),
        }
    }
    assert!(errors > 3_000, "{errors}");
}

#[test]
fn editing_a_signed_description_breaks_the_signature() {
    let id = identity(7);
    let keys: KeySet = [id.key_record()].into_iter().collect();
    let signed = id.sign(&Message::builder("s").originator(id.fingerprint()).created_at(NOW).meta(KEY_DESCRIPTION, "original").build().unwrap());
    assert_eq!(verify_message(&signed, &keys), VerifyOutcome::Verified);
    let forged = signed
        .to_builder()
        .meta(KEY_DESCRIPTION, "edited")
        .signature(signed.signature().unwrap().to_vec())
        .build()
        .unwrap();
    assert_eq!(verify_message(&forged, &keys), VerifyOutcome::BadSignature);
    assert_eq!(verify_message(&signed, &KeySet::new()), VerifyOutcome::UnknownOriginator);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sign_then_verify(seed in any::<u64>(), body in proptest::collection::vec(any::<u8>(), 0..256), service in "[a-z]{1,8}") {
        let id = identity(seed);
        let keys: KeySet = [id.key_record()].into_iter().collect();
        let m = id.sign(&Message::builder(service).originator(id.fingerprint()).payload("p", body).build().unwrap());
        prop_assert_eq!(verify_message(&m, &keys), VerifyOutcome::Verified);
    }

    #[test]
    fn sweep_leaves_nothing_expired(lifetimes in proptest::collection::vec((0u64..200, 0u64..200), 0..30), now in 0u64..400) {
        let cache = CacheStore::in_memory();
        for (i, (created, ttl)) in lifetimes.iter().enumerate() {
            let m = Message::builder("s").created_at(*created).ttl(*ttl).payload("i", vec![i as u8]).build().unwrap();
            let _ = cache.insert(m, 0);
        }
        let removed = cache.expire_sweep(now).unwrap();
        let mut sorted = removed.clone();
        sorted.sort();
        prop_assert_eq!(&removed, &sorted);
        for m in cache.messages() {
            prop_assert!(now <= m.created_at() + m.ttl_seconds());
        }
        prop_assert!(cache.expire_sweep(now).unwrap().is_empty());
        let ids: BTreeSet<_> = cache.ids().into_iter().collect();
        prop_assert_eq!(cache.state_digest(), StateDigest::of_ids(&ids));
    }

    #[test]
    fn any_permutation_gives_the_same_digest(n in 1usize..20, seeds in proptest::collection::vec(any::<u64>(), 2)) {
        let msgs: Vec<Message> = (0..n)
            .map(|i| Message::builder(["a", "b", "c"][i % 3]).created_at((i % 4) as u64).payload("i", vec![i as u8]).build().unwrap())
            .collect();
        let digest = |seed: u64| {
            let mut order = msgs.clone();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let c = CacheStore::in_memory();
            for m in order {
                c.insert(m, 0).unwrap();
            }
            (c.state_digest(), c.list_service("a"), c.list_service("b"))
        };
        prop_assert_eq!(digest(seeds[0]), digest(seeds[1]));
    }
}
