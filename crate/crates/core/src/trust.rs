//! Paranoid trust model.
//!
//! A client only trusts what it has observed itself: comrades of campaigns
//! it measured as successful, and peers that solved one of its challenges.
//! Repeated failures wipe the database.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::CampaignStart;
use crate::crypto::{self, Challenge, ChallengeSolution, ClientIdentity, CryptoError, Digest32};
use crate::dht::{self, Dht, DhtError};

pub type PublicKey = Vec<u8>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrustError {
    #[error("peer shares no campaign with this client")]
    NotAComrade,
    #[error("no pending challenge for this peer")]
    NoPendingChallenge,
    #[error(transparent)]
    Dht(#[from] DhtError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustConfig {
    pub success_trust: u32,
    pub challenge_trust: u32,
    /// Consecutive failed campaigns before the database is reset.
    pub failures_before_reset: u32,
    pub ramp_step: u64,
    pub ramp_cap: u64,
    /// Minutes before an unanswered challenge may be re-issued.
    pub challenge_timeout: u64,
    pub probe_count: u32,
    /// Length in minutes of the baseline and in-campaign probe windows.
    pub probe_window: u64,
    /// Slowdown factor that counts as success.
    pub alpha: f64,
    pub max_rand: u64,
}

impl Default for TrustConfig {
    fn default() -> Self {
        Self {
            success_trust: 1,
            challenge_trust: 1,
            failures_before_reset: 3,
            ramp_step: 1,
            ramp_cap: 10,
            challenge_timeout: 120,
            probe_count: 5,
            probe_window: 30,
            alpha: 2.0,
            max_rand: 1000,
        }
    }
}

impl TrustConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 1.0) || !self.alpha.is_finite() {
            return Err(format!("trust.alpha must be > 1 (got {})", self.alpha));
        }
        if self.failures_before_reset == 0 {
            return Err("trust.failures_before_reset must be >= 1".into());
        }
        if self.probe_count == 0 {
            return Err("trust.probe_count must be >= 1".into());
        }
        if self.probe_window < u64::from(self.probe_count) {
            return Err("trust.probe_window must be >= trust.probe_count".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PeerTrust {
    pub trust: u32,
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustDb {
    records: BTreeMap<PublicKey, PeerTrust>,
    consecutive_failures: u32,
    threshold_floor: u64,
    current_min_accumulated_trust: u64,
}

impl TrustDb {
    /// `threshold_floor` is both the starting participation threshold and
    /// its lower bound.
    pub fn new(threshold_floor: u64) -> Self {
        Self {
            records: BTreeMap::new(),
            consecutive_failures: 0,
            threshold_floor,
            current_min_accumulated_trust: threshold_floor,
        }
    }

    /// Unknown peers have trust 0.
    pub fn trust(&self, peer: &[u8]) -> u32 {
        self.records.get(peer).map_or(0, |r| r.trust)
    }

    pub fn is_verified(&self, peer: &[u8]) -> bool {
        self.records.get(peer).is_some_and(|r| r.verified)
    }

    pub fn records(&self) -> &BTreeMap<PublicKey, PeerTrust> {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn consecutive_failures(&self) -> u32 {
        self.consecutive_failures
    }

    pub fn current_min_accumulated_trust(&self) -> u64 {
        self.current_min_accumulated_trust
    }

    pub fn threshold_floor(&self) -> u64 {
        self.threshold_floor
    }

    fn mark_verified(&mut self, peer: &[u8], challenge_trust: u32) {
        let rec = self.records.entry(peer.to_vec()).or_default();
        rec.verified = true;
        rec.trust = rec.trust.max(challenge_trust);
    }
}

pub fn accumulated_trust<K: AsRef<[u8]>>(db: &TrustDb, comrades: &[K]) -> u64 {
    comrades.iter().map(|c| u64::from(db.trust(c.as_ref()))).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignOutcome {
    pub campaign: CampaignStart,
    /// Median of the probes before the start, in ms.
    pub baseline_latency: f64,
    /// Median of the probes during the campaign, in ms.
    pub during_latency: f64,
    #[serde(skip)]
    pub comrades: Vec<PublicKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Success,
    Failure,
}

pub fn judge_outcome(outcome: &CampaignOutcome, alpha: f64) -> Verdict {
    if outcome.during_latency >= alpha * outcome.baseline_latency {
        Verdict::Success
    } else {
        Verdict::Failure
    }
}

pub fn apply_outcome(db: &mut TrustDb, verdict: Verdict, outcome: &CampaignOutcome, cfg: &TrustConfig) {
    match verdict {
        Verdict::Success => {
            for comrade in &outcome.comrades {
                let rec = db.records.entry(comrade.clone()).or_default();
                rec.trust = rec.trust.saturating_add(cfg.success_trust);
            }
            db.consecutive_failures = 0;
            let raised = db.current_min_accumulated_trust.saturating_add(cfg.ramp_step);
            db.current_min_accumulated_trust = raised.min(cfg.ramp_cap.max(db.threshold_floor));
        }
        Verdict::Failure => {
            db.consecutive_failures += 1;
            if db.consecutive_failures >= cfg.failures_before_reset {
                db.records.clear();
                db.consecutive_failures = 0;
            }
        }
    }
}

/// Median of a non-empty sample; the mean of the two middle values for
/// even sizes.
pub fn median(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

const TAG_CHALLENGE: u8 = 0x01;
const TAG_RESPONSE: u8 = 0x02;

/// Decrypted inbox message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InboxPayload {
    /// `0x01 ‖ issuer_pk ‖ LE8(rand1) ‖ target_hash(32)`
    Challenge(Challenge),
    /// `0x02 ‖ solver_pk ‖ LE8(rand2)`
    Response(ChallengeSolution),
}

impl InboxPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            InboxPayload::Challenge(c) => {
                out.push(TAG_CHALLENGE);
                out.extend_from_slice(&c.issuer_public_key);
                out.extend_from_slice(&c.rand1.to_le_bytes());
                out.extend_from_slice(&c.target_hash);
            }
            InboxPayload::Response(r) => {
                out.push(TAG_RESPONSE);
                out.extend_from_slice(&r.solver_public_key);
                out.extend_from_slice(&r.rand2.to_le_bytes());
            }
        }
        out
    }

    /// The receive time becomes the challenge's `issued_at`; it is not part
    /// of the wire form.
    pub fn decode(bytes: &[u8], received_at: u64) -> Option<Self> {
        let (&tag, rest) = bytes.split_first()?;
        let le8 = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
        match tag {
            TAG_CHALLENGE => {
                let pk_len = rest.len().checked_sub(8 + 32)?;
                if !(crypto::MIN_PUBLIC_KEY_LEN..=crypto::MAX_PUBLIC_KEY_LEN).contains(&pk_len) {
                    return None;
                }
                let (pk, tail) = rest.split_at(pk_len);
                let mut target_hash: Digest32 = [0; 32];
                target_hash.copy_from_slice(&tail[8..]);
                Some(InboxPayload::Challenge(Challenge {
                    issuer_public_key: pk.to_vec(),
                    rand1: le8(&tail[..8]),
                    target_hash,
                    issued_at: received_at,
                }))
            }
            TAG_RESPONSE => {
                let pk_len = rest.len().checked_sub(8)?;
                if !(crypto::MIN_PUBLIC_KEY_LEN..=crypto::MAX_PUBLIC_KEY_LEN).contains(&pk_len) {
                    return None;
                }
                let (pk, tail) = rest.split_at(pk_len);
                Some(InboxPayload::Response(ChallengeSolution {
                    solver_public_key: pk.to_vec(),
                    rand2: le8(tail),
                }))
            }
            _ => None,
        }
    }
}

/// Seals `payload` for `recipient` and drops it into their inbox.
pub fn deliver<D: Dht + ?Sized>(dht: &mut D, recipient: &[u8], payload: &InboxPayload, now: u64) -> Result<(), TrustError> {
    let sealed = crypto::seal(recipient, &payload.encode())?;
    dht.put(dht::inbox_key(recipient)?, &sealed.to_bytes(), now)?;
    Ok(())
}

/// Distinct public keys registered for `campaign`.
pub fn comrades_of<D: Dht + ?Sized>(dht: &D, campaign: &CampaignStart, now: u64) -> Result<Vec<PublicKey>, DhtError> {
    let key = dht::comrades_table_key(campaign.start, &campaign.url.render())?;
    let mut keys: Vec<PublicKey> = dht.get(&key, now);
    keys.sort();
    keys.dedup();
    Ok(keys)
}

fn is_comrade_in_any<D: Dht + ?Sized>(dht: &D, peer: &[u8], campaigns: &[CampaignStart], now: u64) -> Result<bool, DhtError> {
    for c in campaigns {
        if comrades_of(dht, c, now)?.iter().any(|k| k == peer) {
            return Ok(true);
        }
    }
    Ok(false)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingChallenge {
    pub expected_rand2: u64,
    pub issued_at: u64,
    pub campaign: CampaignStart,
}

/// Outstanding challenges this client issued, plus the sliding one-hour
/// budget for challenges it answers.
#[derive(Debug, Clone)]
pub struct Verifier {
    pending: BTreeMap<PublicKey, PendingChallenge>,
    answered: VecDeque<u64>,
    max_answers_per_hour: u32,
}

const BUDGET_WINDOW: u64 = 60;

impl Verifier {
    pub fn new(max_answers_per_hour: u32) -> Self {
        Self {
            pending: BTreeMap::new(),
            answered: VecDeque::new(),
            max_answers_per_hour,
        }
    }

    pub fn pending(&self) -> &BTreeMap<PublicKey, PendingChallenge> {
        &self.pending
    }

    pub fn is_pending(&self, peer: &[u8]) -> bool {
        self.pending.contains_key(peer)
    }

    /// Forgets challenges older than `timeout` minutes.
    pub fn expire(&mut self, now: u64, timeout: u64) {
        self.pending.retain(|_, p| now < p.issued_at.saturating_add(timeout));
    }

    /// Consumes one unit of answer budget if any remains in the trailing
    /// 60 minutes.
    fn take_budget(&mut self, now: u64) -> bool {
        while self.answered.front().is_some_and(|&t| t + BUDGET_WINDOW <= now) {
            self.answered.pop_front();
        }
        if self.answered.len() < self.max_answers_per_hour as usize {
            self.answered.push_back(now);
            true
        } else {
            false
        }
    }

    pub fn answers_in_window(&self, now: u64) -> usize {
        self.answered.iter().filter(|&&t| t + BUDGET_WINDOW > now).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Initiated {
    Sent,
    AlreadyPending,
    AlreadyVerified,
}

/// Sends a fresh challenge to `peer`, who must be registered for
/// `shared_campaign`, one of `my_campaigns`.
#[allow(clippy::too_many_arguments)]
pub fn initiate_verification<D: Dht + ?Sized, R: Rng + ?Sized>(
    me: &ClientIdentity,
    verifier: &mut Verifier,
    db: &TrustDb,
    peer: &[u8],
    shared_campaign: &CampaignStart,
    my_campaigns: &[CampaignStart],
    dht: &mut D,
    cfg: &TrustConfig,
    rng: &mut R,
    now: u64,
) -> Result<Initiated, TrustError> {
    if peer == me.public_key()
        || !my_campaigns.contains(shared_campaign)
        || !comrades_of(dht, shared_campaign, now)?.iter().any(|k| k == peer)
    {
        return Err(TrustError::NotAComrade);
    }
    if db.is_verified(peer) {
        return Ok(Initiated::AlreadyVerified);
    }
    verifier.expire(now, cfg.challenge_timeout);
    if verifier.is_pending(peer) {
        return Ok(Initiated::AlreadyPending);
    }
    let (challenge, expected_rand2) = crypto::generate_challenge(me, cfg.max_rand, now, rng);
    deliver(dht, peer, &InboxPayload::Challenge(challenge), now)?;
    verifier.pending.insert(
        peer.to_vec(),
        PendingChallenge {
            expected_rand2,
            issued_at: now,
            campaign: shared_campaign.clone(),
        },
    );
    Ok(Initiated::Sent)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChallengeDrop {
    NotAComrade,
    BudgetExhausted,
    NoSolution { work: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Answered {
    pub rand2: u64,
    pub work: u64,
}

/// Solves a challenge from a comrade and posts the response to the
/// issuer's inbox. Challenges from strangers are dropped before any work
/// is spent; a solve attempt consumes budget whether or not it succeeds.
pub fn handle_challenge<D: Dht + ?Sized>(
    me: &ClientIdentity,
    verifier: &mut Verifier,
    challenge: &Challenge,
    my_campaigns: &[CampaignStart],
    dht: &mut D,
    cfg: &TrustConfig,
    now: u64,
) -> Result<Result<Answered, ChallengeDrop>, TrustError> {
    let issuer = &challenge.issuer_public_key;
    if issuer.as_slice() == me.public_key() || !is_comrade_in_any(dht, issuer, my_campaigns, now)? {
        return Ok(Err(ChallengeDrop::NotAComrade));
    }
    if !verifier.take_budget(now) {
        return Ok(Err(ChallengeDrop::BudgetExhausted));
    }
    match crypto::solve_challenge(challenge, cfg.max_rand) {
        Ok(solved) => {
            let response = InboxPayload::Response(ChallengeSolution {
                solver_public_key: me.public_key().to_vec(),
                rand2: solved.solution,
            });
            deliver(dht, issuer, &response, now)?;
            Ok(Ok(Answered {
                rand2: solved.solution,
                work: solved.work,
            }))
        }
        Err(CryptoError::NoSolution { work, .. }) => Ok(Err(ChallengeDrop::NoSolution { work })),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationVerdict {
    Verified,
    Mismatch,
}

/// Compares a response with the answer stored for the responding key.
pub fn handle_response(
    verifier: &mut Verifier,
    db: &mut TrustDb,
    response: &ChallengeSolution,
    cfg: &TrustConfig,
) -> Result<VerificationVerdict, TrustError> {
    let pending = verifier
        .pending
        .remove(&response.solver_public_key)
        .ok_or(TrustError::NoPendingChallenge)?;
    if pending.expected_rand2 == response.rand2 {
        db.mark_verified(&response.solver_public_key, cfg.challenge_trust);
        Ok(VerificationVerdict::Verified)
    } else {
        Ok(VerificationVerdict::Mismatch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dht::SimDht;
    use crate::target::canonicalize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn campaign(start: u64) -> CampaignStart {
        CampaignStart::new(canonicalize("http://pills.example/").unwrap(), start)
    }

    fn outcome(baseline: f64, during: f64, comrades: &[&[u8]]) -> CampaignOutcome {
        CampaignOutcome {
            campaign: campaign(500),
            baseline_latency: baseline,
            during_latency: during,
            comrades: comrades.iter().map(|c| c.to_vec()).collect(),
        }
    }

    fn id(seed: u64) -> ClientIdentity {
        ClientIdentity::generate(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn judging() {
        assert_eq!(judge_outcome(&outcome(100.0, 250.0, &[]), 2.0), Verdict::Success);
        assert_eq!(judge_outcome(&outcome(100.0, 150.0, &[]), 2.0), Verdict::Failure);
        assert_eq!(judge_outcome(&outcome(100.0, 200.0, &[]), 2.0), Verdict::Success);
    }

    #[test]
    fn success_raises_comrades_and_threshold() {
        let cfg = TrustConfig::default();
        let mut db = TrustDb::new(0);
        let o = outcome(100.0, 300.0, &[b"a", b"b", b"c"]);
        apply_outcome(&mut db, Verdict::Success, &o, &cfg);
        for k in [b"a", b"b", b"c"] {
            assert_eq!(db.trust(k), 1);
        }
        assert_eq!(db.current_min_accumulated_trust(), 1);
        for _ in 0..20 {
            apply_outcome(&mut db, Verdict::Success, &o, &cfg);
        }
        assert_eq!(db.current_min_accumulated_trust(), cfg.ramp_cap);
    }

    #[test]
    fn failure_counter_semantics() {
        let cfg = TrustConfig::default();
        let o = outcome(100.0, 100.0, &[b"a"]);
        let mut db = TrustDb::new(0);
        apply_outcome(&mut db, Verdict::Success, &o, &cfg);
        for _ in 0..3 {
            apply_outcome(&mut db, Verdict::Failure, &o, &cfg);
        }
        assert!(db.is_empty());

        let mut db = TrustDb::new(0);
        apply_outcome(&mut db, Verdict::Success, &o, &cfg);
        for v in [Verdict::Failure, Verdict::Failure, Verdict::Success, Verdict::Failure] {
            apply_outcome(&mut db, v, &o, &cfg);
        }
        assert_eq!(db.trust(b"a"), 2);
        assert_eq!(db.consecutive_failures(), 1);
    }

    #[test]
    fn accumulated() {
        let mut db = TrustDb::new(0);
        assert_eq!(accumulated_trust(&db, &[b"x"]), 0);
        assert_eq!(accumulated_trust::<&[u8]>(&db, &[]), 0);
        let cfg = TrustConfig::default();
        apply_outcome(&mut db, Verdict::Success, &outcome(1.0, 5.0, &[b"a", b"b"]), &cfg);
        apply_outcome(&mut db, Verdict::Success, &outcome(1.0, 5.0, &[b"b"]), &cfg);
        assert_eq!(accumulated_trust(&db, &[b"a".as_slice(), b"b", b"zz"]), 3);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn payload_wire_format() {
        let c = Challenge {
            issuer_public_key: vec![7; 32],
            rand1: 0x0102,
            target_hash: [9; 32],
            issued_at: 5,
        };
        let bytes = InboxPayload::Challenge(c.clone()).encode();
        assert_eq!(bytes.len(), 1 + 32 + 8 + 32);
        assert_eq!(bytes[0], 0x01);
        assert_eq!(&bytes[33..41], &[0x02, 0x01, 0, 0, 0, 0, 0, 0]);
        assert_eq!(InboxPayload::decode(&bytes, 5), Some(InboxPayload::Challenge(c)));

        let r = ChallengeSolution {
            solver_public_key: vec![1; 32],
            rand2: 42,
        };
        let bytes = InboxPayload::Response(r.clone()).encode();
        assert_eq!(bytes.len(), 1 + 32 + 8);
        assert_eq!(InboxPayload::decode(&bytes, 0), Some(InboxPayload::Response(r)));

        assert_eq!(InboxPayload::decode(&[], 0), None);
        assert_eq!(InboxPayload::decode(&[0x03, 1, 2], 0), None);
        assert_eq!(InboxPayload::decode(&[0x02, 1, 2], 0), None);
    }

    fn register(dht: &mut SimDht, c: &CampaignStart, who: &ClientIdentity) {
        let key = dht::comrades_table_key(c.start, &c.url.render()).unwrap();
        dht.put(key, who.public_key(), 0).unwrap();
    }

    fn inbox_of(dht: &SimDht, who: &ClientIdentity) -> Vec<InboxPayload> {
        dht.get(&dht::inbox_key(who.public_key()).unwrap(), 0)
            .iter()
            .map(|raw| {
                let msg = crypto::SealedMessage::from_bytes(raw).unwrap();
                InboxPayload::decode(&crypto::open(who, &msg).unwrap(), 0).unwrap()
            })
            .collect()
    }

    #[test]
    fn full_handshake() {
        let cfg = TrustConfig {
            max_rand: 300,
            ..TrustConfig::default()
        };
        let (a, b) = (id(1), id(2));
        let c = campaign(1000);
        let mut dht = SimDht::default();
        register(&mut dht, &c, &a);
        register(&mut dht, &c, &b);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut va, mut vb) = (Verifier::new(10), Verifier::new(10));
        let mut dba = TrustDb::new(0);
        let mine = [c.clone()];

        let sent = initiate_verification(&a, &mut va, &dba, b.public_key(), &c, &mine, &mut dht, &cfg, &mut rng, 0);
        assert_eq!(sent, Ok(Initiated::Sent));
        let again = initiate_verification(&a, &mut va, &dba, b.public_key(), &c, &mine, &mut dht, &cfg, &mut rng, 1);
        assert_eq!(again, Ok(Initiated::AlreadyPending));

        let inbox = inbox_of(&dht, &b);
        assert_eq!(inbox.len(), 1);
        let InboxPayload::Challenge(ch) = &inbox[0] else { panic!() };
        let answered = handle_challenge(&b, &mut vb, ch, &mine, &mut dht, &cfg, 0).unwrap().unwrap();
        assert_eq!(answered.rand2, va.pending()[b.public_key()].expected_rand2);

        let responses = inbox_of(&dht, &a);
        let InboxPayload::Response(r) = &responses[0] else { panic!() };
        assert_eq!(handle_response(&mut va, &mut dba, r, &cfg), Ok(VerificationVerdict::Verified));
        assert_eq!(dba.trust(b.public_key()), 1);
        assert!(dba.is_verified(b.public_key()));
        assert_eq!(handle_response(&mut va, &mut dba, r, &cfg), Err(TrustError::NoPendingChallenge));
    }

    #[test]
    fn wrong_answer_clears_pending() {
        let cfg = TrustConfig::default();
        let (a, b) = (id(1), id(2));
        let c = campaign(1000);
        let mut dht = SimDht::default();
        register(&mut dht, &c, &b);
        let mut va = Verifier::new(10);
        let mut db = TrustDb::new(0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        initiate_verification(&a, &mut va, &db, b.public_key(), &c, &[c.clone()], &mut dht, &cfg, &mut rng, 0).unwrap();
        let expected = va.pending()[b.public_key()].expected_rand2;
        let wrong = ChallengeSolution {
            solver_public_key: b.public_key().to_vec(),
            rand2: expected + 1,
        };
        assert_eq!(handle_response(&mut va, &mut db, &wrong, &cfg), Ok(VerificationVerdict::Mismatch));
        assert_eq!(db.trust(b.public_key()), 0);
        assert!(!va.is_pending(b.public_key()));
    }

    #[test]
    fn strangers_are_not_comrades() {
        let cfg = TrustConfig::default();
        let (a, b) = (id(1), id(2));
        let c = campaign(1000);
        let mut dht = SimDht::default();
        let mut va = Verifier::new(10);
        let db = TrustDb::new(0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = initiate_verification(&a, &mut va, &db, b.public_key(), &c, &[c.clone()], &mut dht, &cfg, &mut rng, 0);
        assert_eq!(r, Err(TrustError::NotAComrade));

        let (ch, _) = crypto::generate_challenge(&a, 10, 0, &mut rng);
        let mut vb = Verifier::new(10);
        let dropped = handle_challenge(&b, &mut vb, &ch, &[c], &mut dht, &cfg, 0).unwrap();
        assert_eq!(dropped, Err(ChallengeDrop::NotAComrade));
        assert_eq!(vb.answers_in_window(0), 0);
    }

    #[test]
    fn forwarded_challenge_is_unsolvable() {
        let cfg = TrustConfig {
            max_rand: 100,
            ..TrustConfig::default()
        };
        let (a, b, m) = (id(1), id(2), id(3));
        let c = campaign(1000);
        let mut dht = SimDht::default();
        register(&mut dht, &c, &m);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut ch, _) = crypto::generate_challenge(&a, 100, 0, &mut rng);
        ch.issuer_public_key = m.public_key().to_vec();
        let mut vb = Verifier::new(10);
        let dropped = handle_challenge(&b, &mut vb, &ch, &[c], &mut dht, &cfg, 0).unwrap();
        assert_eq!(dropped, Err(ChallengeDrop::NoSolution { work: 101 }));
    }

    #[test]
    fn budget_slides_over_an_hour() {
        let mut v = Verifier::new(2);
        assert!(v.take_budget(0));
        assert!(v.take_budget(30));
        assert!(!v.take_budget(59));
        assert!(v.take_budget(60));
        assert!(!v.take_budget(89));
        assert!(v.take_budget(90));
    }

    #[test]
    fn pending_expires_after_timeout() {
        let cfg = TrustConfig::default();
        let (a, b) = (id(1), id(2));
        let c = campaign(1000);
        let mut dht = SimDht::default();
        register(&mut dht, &c, &b);
        let mut va = Verifier::new(10);
        let db = TrustDb::new(0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mine = [c.clone()];
        initiate_verification(&a, &mut va, &db, b.public_key(), &c, &mine, &mut dht, &cfg, &mut rng, 0).unwrap();
        let r = initiate_verification(&a, &mut va, &db, b.public_key(), &c, &mine, &mut dht, &cfg, &mut rng, 119);
        assert_eq!(r, Ok(Initiated::AlreadyPending));
        let r = initiate_verification(&a, &mut va, &db, b.public_key(), &c, &mine, &mut dht, &cfg, &mut rng, 120);
        assert_eq!(r, Ok(Initiated::Sent));
    }
}
