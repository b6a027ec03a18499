// SPDX-License-Identifier: Apache-2.0
use super::*;
use crate::blindsig::{blind, keygen_seeded, sign_blinded, unblind};
use crate::urs::{keygen, UrsKeyPair};

const B_WAIT: u64 = 3;

struct World {
    ledger: Ledger,
    citizens: Vec<SigningKey>,
    voters: Vec<UrsKeyPair>,
    rng: ChaCha20Rng,
}

impl World {
    /// `n` voters on topic 1, registered in block 1.
    fn new(n: usize) -> Self {
        let citizens: Vec<SigningKey> = (0..n + 2).map(|i| SigningKey::from_bytes(&[i as u8 + 1; 32])).collect();
        let mut cfg = LedgerConfig::permissionless([1, 2], citizens.iter().map(|c| c.verifying_key().to_bytes()));
        cfg.b_wait = B_WAIT;
        cfg.epoch_length = 20;
        let mut w = World { ledger: Ledger::new(cfg), citizens, voters: Vec::new(), rng: ChaCha20Rng::seed_from_u64(7) };
        let params = w.ledger.config().urs.clone();
        w.voters = (0..n).map(|_| keygen(&params, &mut w.rng)).collect();
        let txs = (0..n).map(|i| w.register(i, 1)).collect();
        w.ledger.apply_block(txs, b"p").unwrap();
        w
    }

    fn register(&self, i: usize, topic: Topic) -> Transaction {
        Transaction::signed_by(Message::RegisterVoter { pk: self.voters[i].pk.to_bytes(), topic }, &self.citizens[i])
    }

    fn creator(&self) -> &SigningKey {
        self.citizens.last().unwrap()
    }

    fn poll(&self, pid: PollId, n_req: u32, b_vw: u32) -> Transaction {
        Transaction::signed_by(Message::create_poll(pid, 1, n_req, b_vw, "how was it?"), self.creator())
    }

    fn empty_blocks(&mut self, k: u64) {
        for _ in 0..k {
            self.ledger.apply_block(Vec::new(), b"p").unwrap();
        }
    }

    /// Vote by the `j`-th member of the poll's ring.
    fn vote(&mut self, pid: PollId, j: usize, rating: u8) -> Transaction {
        let ring = self.ledger.poll(&pid).unwrap().ring().unwrap().clone();
        let member = ring.keys()[j];
        let sk = self.voters.iter().find(|v| v.pk.to_bytes() == member).unwrap().sk;
        let params = self.ledger.config().urs.clone();
        Transaction::vote(&params, pid, VoteValue::new(rating, "c"), &ring, &sk, &mut self.rng).unwrap()
    }

    /// Create a poll in the next block and wait until its window opens.
    fn open_poll(&mut self, pid: PollId, n_req: u32, b_vw: u32) -> u64 {
        let tx = self.poll(pid, n_req, b_vw);
        // Voters registered at block 1 are eligible from block 1 + B_WAIT.
        while self.ledger.height() + 1 < 1 + B_WAIT {
            self.empty_blocks(1);
        }
        self.ledger.apply_block(vec![tx], b"p").unwrap();
        let b_p = self.ledger.height();
        self.empty_blocks(B_WAIT);
        b_p
    }
}

#[test]
fn create_poll_writes_entries_and_ring_after_wait() {
    let mut w = World::new(6);
    w.empty_blocks(B_WAIT - 1);
    w.ledger.apply_block(vec![w.poll(*b"poll0001", 3, 4)], b"p").unwrap();
    let b_p = w.ledger.height();
    let entry = w.ledger.poll_entry(b"poll0001").unwrap();
    assert_eq!((entry.b_n, entry.topic, entry.n_req, entry.n_seen, entry.b_vw), (b_p, 1, 3, 0, 4));
    assert_eq!(entry.ring_hash, None);
    assert!(w.ledger.store().get(&GsKey::PollData(*b"poll0001").to_bytes()).is_some());
    let bp = w.ledger.store().get(&GsKey::BlockwisePolls(b_p, 1).to_bytes()).unwrap();
    assert_eq!(bp, poll_list_hash(&[*b"poll0001"]));

    w.empty_blocks(B_WAIT - 1);
    assert_eq!(w.ledger.poll_entry(b"poll0001").unwrap().ring_hash, None);
    w.empty_blocks(1);
    let rec = w.ledger.poll(b"poll0001").unwrap();
    let ring = rec.ring().unwrap();
    assert_eq!(ring.len(), 3);
    assert_eq!(w.ledger.poll_entry(b"poll0001").unwrap().ring_hash, Some(ring.hash()));
    // Oracle: the draw from the block's seed over the topic audience.
    let seed = *w.ledger.seeds().get(b_p + B_WAIT).unwrap();
    let aud = w.ledger.audience(1, b_p);
    assert_eq!(aud.len(), 6);
    let expect = crate::sortition::top_k(&seed, b"poll0001", &aud, 3);
    assert_eq!(rec.ring_keys.as_ref().unwrap(), &expect);
}

#[test]
fn vote_window_is_strict_at_open_and_inclusive_at_close() {
    let mut w = World::new(6);
    let b_p = w.open_poll(*b"poll0002", 3, 2);
    assert_eq!(w.ledger.height(), b_p + B_WAIT);
    // Ring drawn at B_p + B_wait; votes from the next block.
    let rec = w.ledger.poll(b"poll0002").unwrap();
    assert_eq!(rec.window(B_WAIT), (b_p + B_WAIT + 1, b_p + B_WAIT + 2));

    let v0 = w.vote(*b"poll0002", 0, 5);
    w.ledger.apply_block(vec![v0], b"p").unwrap();
    let v1 = w.vote(*b"poll0002", 1, 5);
    w.ledger.apply_block(vec![v1], b"p").unwrap();
    let late = w.vote(*b"poll0002", 2, 5);
    assert_eq!(w.ledger.validate(&late), Err(Reject::WindowClosed));
    assert_eq!(w.ledger.poll_entry(b"poll0002").unwrap().n_seen, 2);
    w.ledger.check_invariants().unwrap();
}

#[test]
fn vote_before_window_rejected() {
    let mut w = World::new(6);
    w.empty_blocks(B_WAIT - 1);
    w.ledger.apply_block(vec![w.poll(*b"poll0003", 3, 4)], b"p").unwrap();
    w.empty_blocks(B_WAIT - 1);
    // Next block is B_p + B_wait: ring not drawn and window not open.
    let keys: Vec<_> = w.voters[..3].iter().map(|v| v.pk).collect();
    let ring = Ring::new(keys).unwrap();
    let params = w.ledger.config().urs.clone();
    let tx = Transaction::vote(&params, *b"poll0003", VoteValue::new(1, ""), &ring, &w.voters[0].sk, &mut w.rng).unwrap();
    assert_eq!(w.ledger.validate(&tx), Err(Reject::WindowNotOpen));
    let unknown = w.vote_unknown();
    assert_eq!(w.ledger.validate(&unknown), Err(Reject::UnknownPoll));
}

impl World {
    fn vote_unknown(&mut self) -> Transaction {
        let keys: Vec<_> = self.voters[..2].iter().map(|v| v.pk).collect();
        let ring = Ring::new(keys).unwrap();
        let params = self.ledger.config().urs.clone();
        Transaction::vote(&params, *b"nosuchpl", VoteValue::new(1, ""), &ring, &self.voters[0].sk, &mut self.rng).unwrap()
    }
}

#[test]
fn duplicate_tags_rejected_within_and_across_blocks() {
    let mut w = World::new(6);
    w.open_poll(*b"poll0004", 4, 5);
    let a = w.vote(*b"poll0004", 0, 1);
    let b = w.vote(*b"poll0004", 0, 2);
    assert_eq!(w.ledger.filter_valid(&[a.clone(), b.clone()]), vec![Ok(()), Err(Reject::DuplicateTag)]);
    let before = w.ledger.root().to_vec();
    let err = w.ledger.apply_block(vec![a.clone(), b.clone()], b"p").unwrap_err();
    assert_eq!(err, BlockError::Rejected { index: 1, reason: Reject::DuplicateTag });
    assert_eq!(w.ledger.root(), &before[..]);
    w.ledger.apply_block(vec![a.clone()], b"p").unwrap();
    assert_eq!(w.ledger.validate(&b), Err(Reject::DuplicateTag));
    assert_eq!(w.ledger.validate(&a), Err(Reject::DuplicateTag));
    // Vote and tag entries are present and provable.
    let Authenticator::Ring(sig) = &a.auth else { unreachable!() };
    let key = GsKey::VoteTag(*b"poll0004", sig.nu().to_bytes());
    let (v, proof) = w.ledger.gs_read(&key);
    assert_eq!(v.as_deref(), Some(&[1u8][..]));
    assert!(gs_verify(w.ledger.root(), &key.to_bytes(), v.as_deref(), &proof));
    let (v0, _) = w.ledger.gs_read(&GsKey::Vote(*b"poll0004", 0));
    assert_eq!(VoteValue::from_bytes(&v0.unwrap()).unwrap().rating, 1);
    w.ledger.check_invariants().unwrap();
}

#[test]
fn ring_mismatch_fails_verification() {
    let mut w = World::new(6);
    w.open_poll(*b"poll0005", 3, 5);
    // Sign over a different ring of the same size.
    let ring = w.ledger.poll(b"poll0005").unwrap().ring().unwrap().clone();
    let outsider = w.voters.iter().find(|v| ring.index_of(&v.pk).is_none()).unwrap();
    let mut keys = vec![outsider.pk];
    keys.extend(ring.members()[1..].iter().copied());
    let other = Ring::new(keys).unwrap();
    let params = w.ledger.config().urs.clone();
    let sk = outsider.sk;
    let tx = Transaction::vote(&params, *b"poll0005", VoteValue::new(1, ""), &other, &sk, &mut w.rng).unwrap();
    assert_eq!(w.ledger.validate(&tx), Err(Reject::UrsVerifyFailed));
    // Tampered vote value.
    let mut good = w.vote(*b"poll0005", 0, 3);
    good.message = Message::CreateVote { pid: *b"poll0005", vote: VoteValue::new(4, "c") };
    assert_eq!(w.ledger.validate(&good), Err(Reject::UrsVerifyFailed));
}

#[test]
fn batched_and_delegated_verdicts() {
    let mut w = World::new(8);
    w.open_poll(*b"poll0006", 5, 5);
    let mut txs: Vec<_> = (0..4).map(|j| w.vote(*b"poll0006", j, j as u8)).collect();
    txs[2].message = Message::CreateVote { pid: *b"poll0006", vote: VoteValue::new(99, "x") };
    let r = w.ledger.filter_valid(&txs);
    assert_eq!(r, vec![Ok(()), Ok(()), Err(Reject::UrsVerifyFailed), Ok(())]);
    // A false verdict on a valid vote is taken at face value.
    let verdicts = [Some(false), None, Some(false), Some(true)];
    let r = w.ledger.filter_valid_with(&txs, SigCheck::Delegated(&verdicts));
    assert_eq!(r, vec![Err(Reject::UrsVerifyFailed), Ok(()), Err(Reject::UrsVerifyFailed), Ok(())]);
    assert!(matches!(
        w.ledger.apply_block_with(txs.clone(), b"p", SigCheck::Delegated(&verdicts[..2])),
        Err(BlockError::VerdictCount { .. })
    ));
}

#[test]
fn empty_block_keeps_root() {
    let mut w = World::new(3);
    let root = w.ledger.root().to_vec();
    w.empty_blocks(2);
    assert_eq!(w.ledger.root(), &root[..]);
    assert_eq!(w.ledger.height(), 3);
}

#[test]
fn replicas_agree() {
    let build = || {
        let mut w = World::new(6);
        w.open_poll(*b"poll0007", 3, 4);
        let txs: Vec<_> = (0..3).map(|j| w.vote(*b"poll0007", j, 2)).collect();
        (w, txs)
    };
    let (mut a, txs) = build();
    let (mut b, _) = build();
    a.ledger.apply_block(txs.clone(), b"p").unwrap();
    b.ledger.apply_block(txs, b"p").unwrap();
    assert_eq!(a.ledger.root(), b.ledger.root());
    assert_eq!(a.ledger.blocks().last().unwrap().header_hash(), b.ledger.blocks().last().unwrap().header_hash());
}

#[test]
fn registration_rules() {
    let mut w = World::new(3);
    let params = w.ledger.config().urs.clone();
    let fresh = keygen(&params, &mut w.rng);
    let c = &w.citizens[0];
    // Citizen 0 already registered.
    let tx = Transaction::signed_by(Message::RegisterVoter { pk: fresh.pk.to_bytes(), topic: 1 }, c);
    assert_eq!(w.ledger.validate(&tx), Err(Reject::CitizenAlreadyRegistered));
    let c3 = &w.citizens[3];
    let dup = Transaction::signed_by(Message::RegisterVoter { pk: w.voters[0].pk.to_bytes(), topic: 1 }, c3);
    assert_eq!(w.ledger.validate(&dup), Err(Reject::DuplicateVoterKey));
    let ident = Transaction::signed_by(Message::RegisterVoter { pk: [0; 32], topic: 1 }, c3);
    assert_eq!(w.ledger.validate(&ident), Err(Reject::MalformedVoterKey));
    let bad_topic = Transaction::signed_by(Message::RegisterVoter { pk: fresh.pk.to_bytes(), topic: 9 }, c3);
    assert_eq!(w.ledger.validate(&bad_topic), Err(Reject::UnknownTopic));
    let stranger = SigningKey::from_bytes(&[200; 32]);
    let tx = Transaction::signed_by(Message::RegisterVoter { pk: fresh.pk.to_bytes(), topic: 1 }, &stranger);
    assert_eq!(w.ledger.validate(&tx), Err(Reject::UnknownCitizen));
    let mut forged = Transaction::signed_by(Message::RegisterVoter { pk: fresh.pk.to_bytes(), topic: 1 }, c3);
    forged.message = Message::RegisterVoter { pk: fresh.pk.to_bytes(), topic: 2 };
    assert_eq!(w.ledger.validate(&forged), Err(Reject::BadCitizenSignature));
    let cert = Transaction::certified(fresh.pk.to_bytes(), 1, vec![1; 256]);
    assert_eq!(w.ledger.validate(&cert), Err(Reject::WrongAuthenticator));
    // Same citizen twice in one block.
    let other = keygen(&params, &mut w.rng);
    let a = Transaction::signed_by(Message::RegisterVoter { pk: fresh.pk.to_bytes(), topic: 1 }, c3);
    let b = Transaction::signed_by(Message::RegisterVoter { pk: other.pk.to_bytes(), topic: 1 }, c3);
    assert_eq!(w.ledger.filter_valid(&[a, b]), vec![Ok(()), Err(Reject::CitizenAlreadyRegistered)]);
}

#[test]
fn poll_rules() {
    let mut w = World::new(4);
    // Audience is empty until B_wait blocks after registration.
    assert_eq!(w.ledger.validate(&w.poll(*b"pollaaaa", 1, 3)), Err(Reject::InvalidNreq));
    w.empty_blocks(B_WAIT);
    assert_eq!(w.ledger.validate(&w.poll(*b"pollaaaa", 4, 3)), Err(Reject::InvalidNreq));
    assert_eq!(w.ledger.validate(&w.poll(*b"pollaaaa", 0, 3)), Err(Reject::InvalidNreq));
    assert_eq!(w.ledger.validate(&w.poll(*b"pollaaaa", 3, 0)), Err(Reject::EmptyVotingWindow));
    let t = Transaction::signed_by(Message::create_poll(*b"pollaaaa", 7, 1, 1, ""), w.creator());
    assert_eq!(w.ledger.validate(&t), Err(Reject::UnknownTopic));
    let p = w.poll(*b"pollaaaa", 3, 3);
    assert_eq!(w.ledger.filter_valid(&[p.clone(), p.clone()]), vec![Ok(()), Err(Reject::DuplicatePoll)]);
    w.ledger.apply_block(vec![p.clone()], b"p").unwrap();
    assert_eq!(w.ledger.validate(&p), Err(Reject::DuplicatePoll));
}

#[test]
fn subscription_change_delays_eligibility() {
    let mut w = World::new(4);
    w.empty_blocks(B_WAIT);
    let h = w.ledger.height() + 1;
    assert_eq!(w.ledger.audience(1, h).len(), 4);
    let sub = Transaction::signed_by(Message::ModifySubscription { topic: 2 }, &w.citizens[0]);
    let blk = w.ledger.apply_block(vec![sub], b"p").unwrap();
    assert_eq!(blk.identity[0].kind, IdentityKind::Subscription);
    let s = w.ledger.height();
    assert_eq!(w.ledger.audience(1, s).len(), 3);
    assert_eq!(w.ledger.audience(2, s).len(), 0);
    assert_eq!(w.ledger.audience(2, s + B_WAIT - 1).len(), 0);
    assert_eq!(w.ledger.audience(2, s + B_WAIT).len(), 1);
    let stray = Transaction::signed_by(Message::ModifySubscription { topic: 1 }, &w.citizens[5]);
    assert_eq!(w.ledger.validate(&stray), Err(Reject::NotRegistered));
}

#[test]
fn permissioned_registration() {
    let role = keygen_seeded(2048, 11).unwrap();
    let creator = SigningKey::from_bytes(&[9; 32]);
    let mut cfg = LedgerConfig::permissioned(
        [(1u32, role.public.clone())].into_iter().collect(),
        [creator.verifying_key().to_bytes()],
        2,
    );
    cfg.b_wait = B_WAIT;
    let mut ledger = Ledger::new(cfg);
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let params = ledger.config().urs.clone();
    let user = keygen(&params, &mut rng);
    let pk = user.pk.to_bytes();
    let (blinded, r) = blind(&role.public, &pk, &mut rng);
    let s = unblind(&role.public, &sign_blinded(&role, &blinded), &r);
    let tx = Transaction::certified(pk, 1, role.public.encode(&s));
    assert_eq!(ledger.validate(&tx), Err(Reject::SetupWindowOpen));
    ledger.apply_block(Vec::new(), b"p").unwrap();
    ledger.apply_block(Vec::new(), b"p").unwrap();
    let mut wrong = tx.clone();
    wrong.message = Message::RegisterVoter { pk: keygen(&params, &mut rng).pk.to_bytes(), topic: 1 };
    assert_eq!(ledger.validate(&wrong), Err(Reject::BadCertificate));
    let signed = Transaction::signed_by(Message::RegisterVoter { pk, topic: 1 }, &creator);
    assert_eq!(ledger.validate(&signed), Err(Reject::WrongAuthenticator));
    ledger.apply_block(vec![tx], b"p").unwrap();
    assert_eq!(ledger.voters().count(), 1);
    let sub = Transaction::signed_by(Message::ModifySubscription { topic: 1 }, &creator);
    assert_eq!(ledger.validate(&sub), Err(Reject::SubscriptionChangeForbidden));
}

#[test]
fn threshold_updates_at_epoch_end() {
    let mut w = World::new(8);
    // Epoch 0 is blocks 1..=20. Window of 2 blocks, half turnout.
    w.open_poll(*b"pollthr1", 4, 2);
    let txs: Vec<_> = (0..2).map(|j| w.vote(*b"pollthr1", j, 1)).collect();
    w.ledger.apply_block(txs, b"p").unwrap();
    w.empty_blocks(1);
    let th = w.ledger.threshold(1).unwrap();
    assert_eq!((th.v_exp, th.v_seen), (4, 2));
    let (u, _) = w.ledger.gs_read(&GsKey::ScalingFactor(1));
    assert_eq!(GsValue::decode(&GsKey::ScalingFactor(1), &u.unwrap()).unwrap(), GsValue::ScalingFactor { v_exp: 4, v_seen: 2 });
    while w.ledger.height() < 20 {
        w.empty_blocks(1);
    }
    // Reciprocal rule, lambda 1: W doubles.
    assert_eq!(w.ledger.threshold(1).unwrap().w, 2.0);
    let (v, _) = w.ledger.gs_read(&GsKey::Thresholds(1));
    assert_eq!(GsValue::decode(&GsKey::Thresholds(1), &v.unwrap()).unwrap(), GsValue::Thresholds(2.0));
    // Topic without polls keeps its multiplier.
    assert_eq!(w.ledger.threshold(2).unwrap().w, 1.0);
}

#[test]
fn blocks_chain_and_carry_committee_signatures() {
    let mut w = World::new(3);
    w.empty_blocks(2);
    let keys = w.ledger.committee_keys();
    let blocks = w.ledger.blocks();
    assert_eq!(blocks.len(), 3);
    assert_eq!(blocks[0].identity.len(), 3);
    for pair in blocks.windows(2) {
        assert_eq!(pair[1].prev_hash, pair[0].header_hash());
    }
    for b in blocks {
        assert!(b.verify_committee(&keys));
        assert_eq!(decode_tx_list(&b.payload()).unwrap(), b.txs);
    }
    let mut forged = blocks[0].clone();
    forged.state_root[0] ^= 1;
    assert!(!forged.verify_committee(&keys));
}

#[test]
fn oversized_block_rejected() {
    let w = World::new(3);
    let mut cfg = w.ledger.config().clone();
    cfg.max_block_bytes = 100;
    let mut small = Ledger::new(cfg);
    let tx = w.register(0, 1);
    let err = small.apply_block(vec![tx.clone(), tx], b"p").map(|_| ()).unwrap_err();
    assert!(matches!(err, BlockError::TooLarge { .. }));
    assert_eq!(small.height(), 0);
}

#[test]
fn snapshot_round_trip_and_absent_key() {
    let mut w = World::new(6);
    w.open_poll(*b"pollsnap", 3, 3);
    let snap = w.ledger.snapshot();
    let mut store = snap.check_root().unwrap();
    let key = GsKey::Poll(*b"pollsnap").to_bytes();
    let (v, p) = store.read(&key);
    assert!(gs_verify(&snap.root, &key, v.as_deref(), &p));
    let missing = GsKey::Poll(*b"pollnone").to_bytes();
    let (v, p) = store.read(&missing);
    assert!(v.is_none());
    assert!(gs_verify(&snap.root, &missing, None, &p));
}

#[test]
fn delegated_rings_are_committed_as_given() {
    let mut w = World::new(6);
    w.empty_blocks(B_WAIT - 1);
    w.ledger.apply_block(vec![w.poll(*b"polldelg", 3, 4)], b"p").unwrap();
    w.empty_blocks(B_WAIT - 1);
    let tasks = w.ledger.ring_tasks(b"p").unwrap();
    assert_eq!(tasks.len(), 1);
    assert_eq!(tasks[0].ring_size(), 3);
    let honest = tasks[0].draw();
    // A different ring of the right size is taken at face value.
    let mut other: Vec<[u8; 32]> = w.voters.iter().map(|v| v.pk.to_bytes()).filter(|k| !honest.contains(k)).take(3).collect();
    other.sort_unstable();
    let given: BTreeMap<PollId, Vec<[u8; 32]>> = [(*b"polldelg", other.clone())].into_iter().collect();
    w.ledger.apply_block_full(Vec::new(), b"p", SigCheck::Local, RingSource::Delegated(&given)).unwrap();
    assert_eq!(w.ledger.poll(b"polldelg").unwrap().ring_keys.as_ref(), Some(&other));
    assert_ne!(other, honest);
}
