//! Scripted attackers. Each one only talks to the world through the DHT,
//! exactly like an honest client would.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::scenario::AdversarySpec;
use crate::coordinator::{parse_start, CampaignStart};
use crate::crypto::{self, Challenge, ClientIdentity, SealedMessage};
use crate::dht::{self, Dht, SimDht};
use crate::target::CanonicalUrl;
use crate::trust::{self, InboxPayload, PublicKey};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AdversaryStats {
    pub starts_injected: u64,
    pub comrade_registrations: u64,
    pub challenges_sent: u64,
    pub challenges_received: u64,
    pub forwarded_trials: u64,
    pub responses_relayed: u64,
}

/// What an adversary did in one minute, for the event stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AdversaryAction {
    pub adversary: usize,
    pub strategy: &'static str,
    pub injected_starts: Vec<u64>,
    pub registrations: u64,
    pub challenges_sent: u64,
    pub forwarded: u64,
}

pub(crate) struct Adversary {
    index: usize,
    spec: AdversarySpec,
    rng: ChaCha8Rng,
    identity: ClientIdentity,
    sybils: Vec<PublicKey>,
    /// Starts this adversary put into the Campaign Table.
    injected: BTreeSet<u64>,
    /// Starts it already registered its keys on.
    registered: BTreeSet<u64>,
    /// Comrades seen next to this adversary, candidates for relaying.
    neighbours: BTreeSet<PublicKey>,
    /// Per relay target, originators of rewritten challenges, oldest first.
    relayed: BTreeMap<PublicKey, VecDeque<PublicKey>>,
    pub(crate) stats: AdversaryStats,
}

pub(crate) struct World<'a> {
    pub client_keys: &'a [PublicKey],
}

impl Adversary {
    pub(crate) fn new(index: usize, spec: AdversarySpec, mut rng: ChaCha8Rng) -> Self {
        let identity = ClientIdentity::generate(&mut rng);
        let sybil_count = match &spec {
            AdversarySpec::SybilFlood { identity_count, .. } => *identity_count,
            AdversarySpec::Separation { sybil_comrades, .. } => *sybil_comrades,
            _ => 0,
        };
        let sybils = (0..sybil_count)
            .map(|_| ClientIdentity::generate(&mut rng).public_key().to_vec())
            .collect();
        Self {
            index,
            spec,
            rng,
            identity,
            sybils,
            injected: BTreeSet::new(),
            registered: BTreeSet::new(),
            neighbours: BTreeSet::new(),
            relayed: BTreeMap::new(),
            stats: AdversaryStats::default(),
        }
    }

    pub(crate) fn spec(&self) -> &AdversarySpec {
        &self.spec
    }

    pub(crate) fn injected_starts(&self) -> &BTreeSet<u64> {
        &self.injected
    }

    /// Every key this adversary controls.
    pub(crate) fn keys(&self) -> Vec<PublicKey> {
        let mut keys = vec![self.identity.public_key().to_vec()];
        keys.extend(self.sybils.iter().cloned());
        keys
    }

    pub(crate) fn own_key(&self) -> &[u8] {
        self.identity.public_key()
    }

    fn listed_starts(&self, dht: &SimDht, url: &CanonicalUrl, now: u64) -> BTreeSet<u64> {
        let key = dht::campaign_table_key(&url.render()).expect("non-empty url");
        dht.get(&key, now).iter().filter_map(|v| parse_start(v)).collect()
    }

    fn inject(&mut self, dht: &mut SimDht, url: &CanonicalUrl, start: u64, now: u64) {
        let key = dht::campaign_table_key(&url.render()).expect("non-empty url");
        dht.put(key, start.to_string().as_bytes(), now).expect("non-empty value");
        self.injected.insert(start);
        self.stats.starts_injected += 1;
    }

    fn register(&mut self, dht: &mut SimDht, campaign: &CampaignStart, keys: &[PublicKey], now: u64) -> u64 {
        let key = campaign.comrades_key().expect("non-empty url");
        for k in keys {
            dht.put(key, k, now).expect("non-empty key");
        }
        self.stats.comrade_registrations += keys.len() as u64;
        keys.len() as u64
    }

    /// Registers `keys` on every listed start not yet registered on.
    fn register_everywhere(&mut self, dht: &mut SimDht, url: &CanonicalUrl, keys: &[PublicKey], now: u64) -> u64 {
        let mut n = 0;
        for start in self.listed_starts(dht, url, now) {
            if start < now || !self.registered.insert(start) {
                continue;
            }
            n += self.register(dht, &CampaignStart::new(url.clone(), start), keys, now);
        }
        n
    }

    fn due(start_minute: u64, period: u64, t: u64) -> bool {
        t >= start_minute && (if period == 0 { t == start_minute } else { (t - start_minute) % period == 0 })
    }

    /// Runs this adversary for minute offset `t` (absolute minute `now`).
    pub(crate) fn step(&mut self, t: u64, now: u64, dht: &mut SimDht, world: &World<'_>) -> Option<AdversaryAction> {
        let mut action = AdversaryAction {
            adversary: self.index,
            strategy: self.spec.name(),
            injected_starts: Vec::new(),
            registrations: 0,
            challenges_sent: 0,
            forwarded: 0,
        };
        match self.spec.clone() {
            AdversarySpec::TimePortal {
                url,
                offset_minutes,
                start_minute,
                period,
            } => {
                if Self::due(start_minute, period, t) {
                    let start = now + offset_minutes;
                    self.inject(dht, &url, start, now);
                    action.injected_starts.push(start);
                }
            }
            AdversarySpec::Separation {
                url,
                injection_period,
                lead_minutes,
                start_minute,
                ..
            } => {
                if Self::due(start_minute, injection_period, t) {
                    let start = now + lead_minutes;
                    self.inject(dht, &url, start, now);
                    action.injected_starts.push(start);
                    let sybils = self.sybils.clone();
                    if !sybils.is_empty() {
                        self.registered.insert(start);
                        action.registrations += self.register(dht, &CampaignStart::new(url, start), &sybils, now);
                    }
                }
            }
            AdversarySpec::ChallengeFlood {
                url,
                victim,
                count,
                start_minute,
                spread_minutes,
                max_rand,
            } => {
                let me = vec![self.own_key().to_vec()];
                action.registrations += self.register_everywhere(dht, &url, &me, now);
                if t >= start_minute && t < start_minute + spread_minutes {
                    // Spread `count` evenly over the window.
                    let i = t - start_minute;
                    let due = (i + 1) * count / spread_minutes - i * count / spread_minutes;
                    let target = &world.client_keys[victim];
                    for _ in 0..due {
                        let (challenge, _) = crypto::generate_challenge(&self.identity, max_rand, now, &mut self.rng);
                        trust::deliver(dht, target, &InboxPayload::Challenge(challenge), now).expect("valid key");
                    }
                    self.stats.challenges_sent += due;
                    action.challenges_sent = due;
                }
            }
            AdversarySpec::MitmForwarder {
                url,
                start_minute,
                rewrite_issuer,
            } => {
                if t >= start_minute {
                    let me = vec![self.own_key().to_vec()];
                    action.registrations += self.register_everywhere(dht, &url, &me, now);
                    self.refresh_neighbours(dht, &url, now);
                    action.forwarded = self.relay(dht, now, rewrite_issuer);
                }
            }
            AdversarySpec::SybilFlood {
                url,
                start_minute,
                period,
                ..
            } => {
                if Self::due(start_minute, period, t) {
                    let sybils = self.sybils.clone();
                    action.registrations += self.register_everywhere(dht, &url, &sybils, now);
                }
            }
        }
        let idle = action.injected_starts.is_empty()
            && action.registrations == 0
            && action.challenges_sent == 0
            && action.forwarded == 0;
        (!idle).then_some(action)
    }

    fn refresh_neighbours(&mut self, dht: &SimDht, url: &CanonicalUrl, now: u64) {
        for &start in &self.registered {
            if start + 60 < now {
                continue;
            }
            let campaign = CampaignStart::new(url.clone(), start);
            if let Ok(keys) = trust::comrades_of(dht, &campaign, now) {
                self.neighbours.extend(keys.into_iter().filter(|k| k.as_slice() != self.identity.public_key()));
            }
        }
    }

    /// Drains the own inbox. Each challenge is relayed to another comrade
    /// twice: untouched, and with the issuer replaced by the own key. Any
    /// response to a rewritten copy is passed on as the adversary's own.
    fn relay(&mut self, dht: &mut SimDht, now: u64, rewrite_issuer: bool) -> u64 {
        let key = dht::inbox_key(self.identity.public_key()).expect("valid key");
        let raw = dht.get(&key, now);
        let mut forwarded = 0;
        for value in raw {
            dht.remove(&key, &value);
            let Some(payload) = SealedMessage::from_bytes(&value)
                .and_then(|msg| crypto::open(&self.identity, &msg))
                .ok()
                .and_then(|plain| InboxPayload::decode(&plain, now))
            else {
                continue;
            };
            match payload {
                InboxPayload::Challenge(challenge) => {
                    self.stats.challenges_received += 1;
                    let originator = challenge.issuer_public_key.clone();
                    let candidates: Vec<&PublicKey> = self.neighbours.iter().filter(|k| **k != originator).collect();
                    let Some(&relay) = candidates.choose(&mut self.rng) else {
                        continue;
                    };
                    let relay = relay.clone();
                    trust::deliver(dht, &relay, &InboxPayload::Challenge(challenge.clone()), now).expect("valid key");
                    if rewrite_issuer {
                        let rewritten = Challenge {
                            issuer_public_key: self.identity.public_key().to_vec(),
                            ..challenge
                        };
                        trust::deliver(dht, &relay, &InboxPayload::Challenge(rewritten), now).expect("valid key");
                        self.relayed.entry(relay).or_default().push_back(originator);
                    }
                    forwarded += 1;
                }
                InboxPayload::Response(response) => {
                    let Some(queue) = self.relayed.get_mut(&response.solver_public_key) else {
                        continue;
                    };
                    let Some(originator) = queue.pop_front() else {
                        continue;
                    };
                    let claimed = crypto::ChallengeSolution {
                        solver_public_key: self.identity.public_key().to_vec(),
                        rand2: response.rand2,
                    };
                    trust::deliver(dht, &originator, &InboxPayload::Response(claimed), now).expect("valid key");
                    self.stats.responses_relayed += 1;
                }
            }
        }
        self.stats.forwarded_trials += forwarded;
        forwarded
    }
}
