//! Campaign Coordinator: picks or proposes start times for a URL, registers
//! as a comrade, and decides at start time whether to take part.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, ClientIdentity, SealedMessage};
use crate::dht::{self, Dht, DhtError};
use crate::target::CanonicalUrl;
use crate::trust::{
    self, ChallengeDrop, InboxPayload, Initiated, PublicKey, TrustConfig, TrustDb, TrustError, VerificationVerdict,
    Verifier,
};

pub const MINUTES_PER_WEEK: u64 = 10_080;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoordinatorError {
    #[error("no feasible start between now+{min_wait} and now+{max_wait} inside the usage windows")]
    NoFeasibleStart { min_wait: u64, max_wait: u64 },
    #[error(transparent)]
    Dht(#[from] DhtError),
    #[error(transparent)]
    Trust(#[from] TrustError),
}

/// Weekly recurring `[start, end)` in minutes since the start of the week.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UsageWindow {
    pub start: u64,
    pub end: u64,
}

impl UsageWindow {
    pub const ALL_WEEK: UsageWindow = UsageWindow {
        start: 0,
        end: MINUTES_PER_WEEK,
    };

    pub fn new(start: u64, end: u64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, minute_of_week: u64) -> bool {
        (self.start..self.end).contains(&minute_of_week)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinPolicy {
    #[default]
    JoinAll,
    HighestTrust,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinatorConfig {
    pub min_wait: u64,
    pub max_wait: u64,
    pub min_comrades: usize,
    pub min_accumulated_trust: u64,
    pub usage_windows: Vec<UsageWindow>,
    pub join_policy: JoinPolicy,
    pub poll_interval: u64,
    pub max_challenges_answered: u32,
    /// Minutes after the start during which a tick still counts as "recently
    /// started".
    pub launch_grace: u64,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        Self {
            min_wait: 60,
            max_wait: 1440,
            min_comrades: 5,
            min_accumulated_trust: 0,
            usage_windows: vec![UsageWindow::ALL_WEEK],
            join_policy: JoinPolicy::JoinAll,
            poll_interval: 10,
            max_challenges_answered: 10,
            launch_grace: 5,
        }
    }
}

impl CoordinatorConfig {
    /// Returns the first violated invariant.
    pub fn validate(&self) -> Result<(), String> {
        if self.min_wait == 0 {
            return Err("min_wait must be > 0".into());
        }
        if self.min_wait >= self.max_wait {
            return Err(format!(
                "min_wait ({}) must be < max_wait ({})",
                self.min_wait, self.max_wait
            ));
        }
        if self.min_comrades == 0 {
            return Err("min_comrades must be >= 1".into());
        }
        if self.poll_interval == 0 {
            return Err("poll_interval must be >= 1".into());
        }
        if self.usage_windows.is_empty() {
            return Err("usage_windows must not be empty".into());
        }
        let mut windows = self.usage_windows.clone();
        windows.sort();
        for w in &windows {
            if w.start >= w.end || w.end > MINUTES_PER_WEEK {
                return Err(format!(
                    "usage window [{}, {}) must satisfy start < end <= {MINUTES_PER_WEEK}",
                    w.start, w.end
                ));
            }
        }
        for pair in windows.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(format!(
                    "usage windows [{}, {}) and [{}, {}) overlap",
                    pair[0].start, pair[0].end, pair[1].start, pair[1].end
                ));
            }
        }
        Ok(())
    }
}

/// One target URL plus one start instant, the unit comrades rally around.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CampaignStart {
    pub url: CanonicalUrl,
    pub start: u64,
}

impl CampaignStart {
    pub fn new(url: CanonicalUrl, start: u64) -> Self {
        Self { url, start }
    }

    pub fn comrades_key(&self) -> Result<dht::DhtKey, DhtError> {
        dht::comrades_table_key(self.start, &self.url.render())
    }
}

pub fn is_suitable(start: u64, now: u64, cfg: &CoordinatorConfig) -> bool {
    let in_range = now.saturating_add(cfg.min_wait) <= start && start <= now.saturating_add(cfg.max_wait);
    in_range && cfg.usage_windows.iter().any(|w| w.contains(start % MINUTES_PER_WEEK))
}

/// Maximal runs of suitable minutes in `[now+min_wait, now+max_wait]`,
/// as inclusive `(first, last)` pairs in ascending order.
pub fn feasible_intervals(now: u64, cfg: &CoordinatorConfig) -> Vec<(u64, u64)> {
    let lo = now.saturating_add(cfg.min_wait);
    let hi = now.saturating_add(cfg.max_wait);
    let mut windows = cfg.usage_windows.clone();
    windows.sort();
    let mut out: Vec<(u64, u64)> = Vec::new();
    let mut week = lo / MINUTES_PER_WEEK;
    while week * MINUTES_PER_WEEK <= hi {
        let base = week * MINUTES_PER_WEEK;
        for w in &windows {
            if w.start >= w.end {
                continue;
            }
            let first = (base + w.start).max(lo);
            let last = (base + w.end - 1).min(hi);
            if first > last {
                continue;
            }
            match out.last_mut() {
                Some(prev) if prev.1 + 1 == first => prev.1 = last,
                _ => out.push((first, last)),
            }
        }
        week += 1;
    }
    out
}

/// A minute drawn uniformly from the suitable minutes.
pub fn propose_start<R: Rng + ?Sized>(now: u64, cfg: &CoordinatorConfig, rng: &mut R) -> Result<u64, CoordinatorError> {
    let intervals = feasible_intervals(now, cfg);
    let total: u64 = intervals.iter().map(|(a, b)| b - a + 1).sum();
    if total == 0 {
        return Err(CoordinatorError::NoFeasibleStart {
            min_wait: cfg.min_wait,
            max_wait: cfg.max_wait,
        });
    }
    let mut pick = rng.gen_range(0..total);
    for (first, last) in intervals {
        let len = last - first + 1;
        if pick < len {
            return Ok(first + pick);
        }
        pick -= len;
    }
    unreachable!("pick < total")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignState {
    Pending,
    Launched,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalEntry {
    pub joined_at: u64,
    pub state: CampaignState,
    pub proposed: bool,
}

/// Campaigns this client has joined. Terminal states are never left.
#[derive(Debug, Clone, Default)]
pub struct LocalCampaignDb {
    entries: BTreeMap<CampaignStart, LocalEntry>,
}

impl LocalCampaignDb {
    pub fn entries(&self) -> &BTreeMap<CampaignStart, LocalEntry> {
        &self.entries
    }

    pub fn get(&self, campaign: &CampaignStart) -> Option<&LocalEntry> {
        self.entries.get(campaign)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns false if the campaign was already recorded.
    fn record(&mut self, campaign: CampaignStart, joined_at: u64, proposed: bool) -> bool {
        if self.entries.contains_key(&campaign) {
            return false;
        }
        self.entries.insert(
            campaign,
            LocalEntry {
                joined_at,
                state: CampaignState::Pending,
                proposed,
            },
        );
        true
    }

    fn finish(&mut self, campaign: &CampaignStart, state: CampaignState) {
        if let Some(e) = self.entries.get_mut(campaign) {
            if e.state == CampaignState::Pending {
                e.state = state;
            }
        }
    }

    pub fn pending(&self) -> Vec<CampaignStart> {
        self.entries
            .iter()
            .filter(|(_, e)| e.state == CampaignState::Pending)
            .map(|(c, _)| c.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HandleOutcome {
    pub joined: Vec<CampaignStart>,
    /// Start this client put into the Campaign Table, if any.
    pub proposed: Option<u64>,
    /// Starts found in the Campaign Table and rejected as unsuitable.
    pub rejected_unsuitable: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionReason {
    Launched,
    TooFewComrades,
    InsufficientTrust,
    Late,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LaunchDecision {
    pub campaign: CampaignStart,
    pub decided_at: u64,
    pub comrade_count: usize,
    pub accumulated_trust: u64,
    pub required_trust: u64,
    pub launched: bool,
    pub reason: DecisionReason,
    #[serde(skip)]
    pub comrades: Vec<PublicKey>,
}

/// The participation rule: strictly more than `min_comrades` distinct keys
/// and an accumulated trust at or above the current threshold.
pub fn launch_decision(
    campaign: &CampaignStart,
    comrades: Vec<PublicKey>,
    db: &TrustDb,
    min_comrades: usize,
    now: u64,
) -> LaunchDecision {
    let distinct: BTreeSet<PublicKey> = comrades.into_iter().collect();
    let comrades: Vec<PublicKey> = distinct.into_iter().collect();
    let accumulated = trust::accumulated_trust(db, &comrades);
    let required = db.current_min_accumulated_trust();
    let reason = if comrades.len() <= min_comrades {
        DecisionReason::TooFewComrades
    } else if accumulated < required {
        DecisionReason::InsufficientTrust
    } else {
        DecisionReason::Launched
    };
    LaunchDecision {
        campaign: campaign.clone(),
        decided_at: now,
        comrade_count: comrades.len(),
        accumulated_trust: accumulated,
        required_trust: required,
        launched: reason == DecisionReason::Launched,
        reason,
        comrades,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InboxReport {
    pub messages: usize,
    pub undecodable: usize,
    pub challenges: usize,
    pub solve_attempts: usize,
    pub solved: usize,
    pub hash_evaluations: u64,
    pub dropped_not_comrade: usize,
    pub dropped_budget: usize,
    pub dropped_no_solution: usize,
    pub verified: Vec<PublicKey>,
    pub mismatched: usize,
    pub unsolicited: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClientStats {
    pub challenges_sent: u64,
    pub solve_attempts: u64,
    pub challenges_solved: u64,
    pub hash_evaluations: u64,
    pub dropped_not_comrade: u64,
    pub dropped_budget: u64,
    pub dropped_no_solution: u64,
    pub undecodable_messages: u64,
    pub verifications: u64,
    pub mismatches: u64,
}

/// One client's coordinator: identity, local campaigns, trust state.
#[derive(Debug, Clone)]
pub struct Coordinator {
    identity: ClientIdentity,
    cfg: CoordinatorConfig,
    trust_cfg: TrustConfig,
    local: LocalCampaignDb,
    trust: TrustDb,
    verifier: Verifier,
    stats: ClientStats,
}

impl Coordinator {
    pub fn new(identity: ClientIdentity, cfg: CoordinatorConfig, trust_cfg: TrustConfig) -> Self {
        let trust = TrustDb::new(cfg.min_accumulated_trust);
        let verifier = Verifier::new(cfg.max_challenges_answered);
        Self {
            identity,
            cfg,
            trust_cfg,
            local: LocalCampaignDb::default(),
            trust,
            verifier,
            stats: ClientStats::default(),
        }
    }

    pub fn identity(&self) -> &ClientIdentity {
        &self.identity
    }

    pub fn public_key(&self) -> &[u8] {
        self.identity.public_key()
    }

    pub fn config(&self) -> &CoordinatorConfig {
        &self.cfg
    }

    pub fn trust_config(&self) -> &TrustConfig {
        &self.trust_cfg
    }

    pub fn local_db(&self) -> &LocalCampaignDb {
        &self.local
    }

    pub fn trust_db(&self) -> &TrustDb {
        &self.trust
    }

    pub fn trust_db_mut(&mut self) -> &mut TrustDb {
        &mut self.trust
    }

    pub fn verifier(&self) -> &Verifier {
        &self.verifier
    }

    pub fn stats(&self) -> &ClientStats {
        &self.stats
    }

    /// Steps 1 to 3 for one URL: read the Campaign Table, keep the suitable
    /// starts (or propose a new one), register as comrade and remember the
    /// joins locally.
    pub fn handle_url<D: Dht + ?Sized, R: Rng + ?Sized>(
        &mut self,
        url: &CanonicalUrl,
        now: u64,
        dht: &mut D,
        rng: &mut R,
    ) -> Result<HandleOutcome, CoordinatorError> {
        let rendered = url.render();
        let table_key = dht::campaign_table_key(&rendered)?;
        let listed: BTreeSet<u64> = dht
            .get(&table_key, now)
            .iter()
            .filter_map(|v| parse_start(v))
            .collect();

        let mut outcome = HandleOutcome::default();
        let mut suitable = Vec::new();
        for start in listed {
            if is_suitable(start, now, &self.cfg) {
                suitable.push(start);
            } else {
                outcome.rejected_unsuitable.push(start);
            }
        }

        let mut proposed_now = false;
        if suitable.is_empty() {
            if self.has_outstanding_proposal(url, now) {
                return Ok(outcome);
            }
            let start = propose_start(now, &self.cfg, rng)?;
            dht.put(table_key, start.to_string().as_bytes(), now)?;
            outcome.proposed = Some(start);
            suitable.push(start);
            proposed_now = true;
        }

        let selected = match self.cfg.join_policy {
            JoinPolicy::JoinAll => suitable,
            JoinPolicy::HighestTrust => {
                let mut best: Option<(u64, u64)> = None;
                for &start in &suitable {
                    let campaign = CampaignStart::new(url.clone(), start);
                    let comrades = trust::comrades_of(dht, &campaign, now)?;
                    let score = trust::accumulated_trust(&self.trust, &comrades);
                    // Ties go to the earliest start.
                    if best.is_none_or(|(_, s)| score > s) {
                        best = Some((start, score));
                    }
                }
                best.map(|(start, _)| vec![start]).unwrap_or_default()
            }
        };

        for start in selected {
            let campaign = CampaignStart::new(url.clone(), start);
            dht.put(campaign.comrades_key()?, self.identity.public_key(), now)?;
            self.local.record(campaign.clone(), now, proposed_now);
            outcome.joined.push(campaign);
        }
        Ok(outcome)
    }

    fn has_outstanding_proposal(&self, url: &CanonicalUrl, now: u64) -> bool {
        self.local
            .entries
            .iter()
            .any(|(c, e)| &c.url == url && e.proposed && e.state == CampaignState::Pending && c.start > now)
    }

    /// Decides every pending campaign whose start has been reached.
    pub fn tick<D: Dht + ?Sized>(&mut self, now: u64, dht: &D) -> Result<Vec<LaunchDecision>, CoordinatorError> {
        let due: Vec<CampaignStart> = self
            .local
            .pending()
            .into_iter()
            .filter(|c| c.start <= now)
            .collect();
        let mut decisions = Vec::with_capacity(due.len());
        for campaign in due {
            let decision = if now < campaign.start.saturating_add(self.cfg.launch_grace) {
                let comrades = trust::comrades_of(dht, &campaign, now)?;
                launch_decision(&campaign, comrades, &self.trust, self.cfg.min_comrades, now)
            } else {
                LaunchDecision {
                    campaign: campaign.clone(),
                    decided_at: now,
                    comrade_count: 0,
                    accumulated_trust: 0,
                    required_trust: self.trust.current_min_accumulated_trust(),
                    launched: false,
                    reason: DecisionReason::Late,
                    comrades: Vec::new(),
                }
            };
            let state = if decision.launched {
                CampaignState::Launched
            } else {
                CampaignState::Skipped
            };
            self.local.finish(&campaign, state);
            decisions.push(decision);
        }
        Ok(decisions)
    }

    /// Reads and removes every message in this client's inbox.
    pub fn poll_inbox<D: Dht + ?Sized>(&mut self, now: u64, dht: &mut D) -> Result<Vec<InboxPayload>, CoordinatorError> {
        let (payloads, _) = self.drain_inbox(now, dht)?;
        Ok(payloads)
    }

    fn drain_inbox<D: Dht + ?Sized>(&mut self, now: u64, dht: &mut D) -> Result<(Vec<InboxPayload>, usize), CoordinatorError> {
        let key = dht::inbox_key(self.identity.public_key())?;
        let raw = dht.get(&key, now);
        let mut payloads = Vec::with_capacity(raw.len());
        let mut undecodable = 0;
        for value in raw {
            dht.remove(&key, &value);
            let decoded = SealedMessage::from_bytes(&value)
                .and_then(|msg| crypto::open(&self.identity, &msg))
                .ok()
                .and_then(|plain| InboxPayload::decode(&plain, now));
            match decoded {
                Some(p) => payloads.push(p),
                None => {
                    log::debug!("dropping undecodable inbox message ({} bytes)", value.len());
                    undecodable += 1;
                }
            }
        }
        self.stats.undecodable_messages += undecodable as u64;
        Ok((payloads, undecodable))
    }

    /// Polls the inbox and acts on everything in it: answers challenges from
    /// comrades within the hourly budget and checks responses.
    pub fn process_inbox<D: Dht + ?Sized>(&mut self, now: u64, dht: &mut D) -> Result<InboxReport, CoordinatorError> {
        let (payloads, undecodable) = self.drain_inbox(now, dht)?;
        let mut report = InboxReport {
            messages: payloads.len() + undecodable,
            undecodable,
            ..InboxReport::default()
        };
        let mine = self.local.pending();
        for payload in payloads {
            match payload {
                InboxPayload::Challenge(challenge) => {
                    report.challenges += 1;
                    let result = trust::handle_challenge(
                        &self.identity,
                        &mut self.verifier,
                        &challenge,
                        &mine,
                        dht,
                        &self.trust_cfg,
                        now,
                    )?;
                    match result {
                        Ok(answered) => {
                            report.solve_attempts += 1;
                            report.solved += 1;
                            report.hash_evaluations += answered.work;
                        }
                        Err(ChallengeDrop::NoSolution { work }) => {
                            report.solve_attempts += 1;
                            report.dropped_no_solution += 1;
                            report.hash_evaluations += work;
                        }
                        Err(ChallengeDrop::BudgetExhausted) => report.dropped_budget += 1,
                        Err(ChallengeDrop::NotAComrade) => report.dropped_not_comrade += 1,
                    }
                }
                InboxPayload::Response(response) => {
                    match trust::handle_response(&mut self.verifier, &mut self.trust, &response, &self.trust_cfg) {
                        Ok(VerificationVerdict::Verified) => report.verified.push(response.solver_public_key),
                        Ok(VerificationVerdict::Mismatch) => report.mismatched += 1,
                        Err(TrustError::NoPendingChallenge) => report.unsolicited += 1,
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
        let s = &mut self.stats;
        s.solve_attempts += report.solve_attempts as u64;
        s.challenges_solved += report.solved as u64;
        s.hash_evaluations += report.hash_evaluations;
        s.dropped_not_comrade += report.dropped_not_comrade as u64;
        s.dropped_budget += report.dropped_budget as u64;
        s.dropped_no_solution += report.dropped_no_solution as u64;
        s.verifications += report.verified.len() as u64;
        s.mismatches += report.mismatched as u64;
        Ok(report)
    }

    /// Challenges every unverified comrade of every pending campaign.
    /// Returns how many challenges were sent.
    pub fn verify_comrades<D: Dht + ?Sized, R: Rng + ?Sized>(
        &mut self,
        now: u64,
        dht: &mut D,
        rng: &mut R,
    ) -> Result<usize, CoordinatorError> {
        let mine = self.local.pending();
        self.verifier.expire(now, self.trust_cfg.challenge_timeout);
        let mut sent = 0;
        for campaign in &mine {
            for peer in trust::comrades_of(dht, campaign, now)? {
                if peer.as_slice() == self.identity.public_key()
                    || self.trust.is_verified(&peer)
                    || self.verifier.is_pending(&peer)
                {
                    continue;
                }
                let r = trust::initiate_verification(
                    &self.identity,
                    &mut self.verifier,
                    &self.trust,
                    &peer,
                    campaign,
                    &mine,
                    dht,
                    &self.trust_cfg,
                    rng,
                    now,
                )?;
                if r == Initiated::Sent {
                    sent += 1;
                }
            }
        }
        self.stats.challenges_sent += sent as u64;
        Ok(sent)
    }
}

/// Campaign Table values are decimal epoch-minutes; anything else is
/// ignored.
pub fn parse_start(value: &[u8]) -> Option<u64> {
    let s = std::str::from_utf8(value).ok()?;
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok().filter(|&v| v > 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dht::SimDht;
    use crate::target::canonicalize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> CoordinatorConfig {
        CoordinatorConfig {
            min_wait: 60,
            max_wait: 600,
            min_comrades: 2,
            ..CoordinatorConfig::default()
        }
    }

    fn url() -> CanonicalUrl {
        canonicalize("http://pills.example/buy").unwrap()
    }

    fn coordinator(seed: u64, cfg: CoordinatorConfig) -> Coordinator {
        let id = ClientIdentity::generate(&mut ChaCha8Rng::seed_from_u64(seed));
        Coordinator::new(id, cfg, TrustConfig::default())
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn suitability() {
        let c = cfg();
        let now = 1000;
        assert!(!is_suitable(now + c.max_wait + 1, now, &c));
        assert!(is_suitable(now + c.max_wait, now, &c));
        assert!(is_suitable(now + c.min_wait, now, &c));
        assert!(!is_suitable(now + c.min_wait - 1, now, &c));

        let windowed = CoordinatorConfig {
            usage_windows: vec![UsageWindow::new(0, 100)],
            ..cfg()
        };
        // now+200 is in range but minute-of-week 1200 lies outside [0, 100).
        assert!(!is_suitable(1200, 1000, &windowed));
        assert!(is_suitable(MINUTES_PER_WEEK + 50, MINUTES_PER_WEEK - 100, &windowed));
    }

    #[test]
    fn proposals() {
        let c = cfg();
        let a = propose_start(1000, &c, &mut rng(1)).unwrap();
        let b = propose_start(1000, &c, &mut rng(1)).unwrap();
        assert_eq!(a, b);
        assert!((1060..=1600).contains(&a));

        let single = CoordinatorConfig {
            usage_windows: vec![UsageWindow::new(1100, 1101)],
            ..cfg()
        };
        for seed in 0..10 {
            assert_eq!(propose_start(1000, &single, &mut rng(seed)).unwrap(), 1100);
        }

        let disjoint = CoordinatorConfig {
            usage_windows: vec![UsageWindow::new(5000, 6000)],
            ..cfg()
        };
        assert!(matches!(
            propose_start(1000, &disjoint, &mut rng(1)),
            Err(CoordinatorError::NoFeasibleStart { .. })
        ));
    }

    #[test]
    fn feasible_intervals_wrap_weeks() {
        let c = CoordinatorConfig {
            min_wait: 10,
            max_wait: 200,
            usage_windows: vec![UsageWindow::new(0, 50), UsageWindow::new(10_000, MINUTES_PER_WEEK)],
            ..cfg()
        };
        let now = MINUTES_PER_WEEK - 100;
        // [9990, 10180] ∩ windows = [10000, 10079] ∪ [10080, 10129], merged.
        assert_eq!(feasible_intervals(now, &c), vec![(10_000, 10_129)]);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let bad = CoordinatorConfig {
            min_wait: 600,
            max_wait: 600,
            ..cfg()
        };
        assert!(bad.validate().unwrap_err().contains("min_wait"));
        let overlap = CoordinatorConfig {
            usage_windows: vec![UsageWindow::new(0, 100), UsageWindow::new(50, 200)],
            ..cfg()
        };
        assert!(overlap.validate().unwrap_err().contains("overlap"));
    }

    #[test]
    fn empty_table_proposes_and_joins() {
        let mut dht = SimDht::default();
        let mut a = coordinator(1, cfg());
        let out = a.handle_url(&url(), 1000, &mut dht, &mut rng(2)).unwrap();
        let start = out.proposed.unwrap();
        assert_eq!(out.joined, vec![CampaignStart::new(url(), start)]);
        let table = dht.get(&dht::campaign_table_key(&url().render()).unwrap(), 1000);
        assert_eq!(table, vec![start.to_string().into_bytes()]);
        let comrades = trust::comrades_of(&dht, &out.joined[0], 1000).unwrap();
        assert_eq!(comrades, vec![a.public_key().to_vec()]);
        assert_eq!(a.local_db().len(), 1);
    }

    #[test]
    fn existing_start_is_joined_without_proposing() {
        let mut dht = SimDht::default();
        let mut a = coordinator(1, cfg());
        let mut b = coordinator(2, cfg());
        let first = a.handle_url(&url(), 1000, &mut dht, &mut rng(2)).unwrap();
        let second = b.handle_url(&url(), 1001, &mut dht, &mut rng(3)).unwrap();
        assert_eq!(second.proposed, None);
        assert_eq!(second.joined, first.joined);
        assert_eq!(trust::comrades_of(&dht, &first.joined[0], 1001).unwrap().len(), 2);
    }

    #[test]
    fn registration_is_idempotent() {
        let mut dht = SimDht::default();
        let mut a = coordinator(1, cfg());
        let first = a.handle_url(&url(), 1000, &mut dht, &mut rng(2)).unwrap();
        let again = a.handle_url(&url(), 1000, &mut dht, &mut rng(2)).unwrap();
        assert_eq!(first.joined, again.joined);
        assert_eq!(trust::comrades_of(&dht, &first.joined[0], 1000).unwrap().len(), 1);
        assert_eq!(a.local_db().len(), 1);
    }

    #[test]
    fn unsuitable_starts_are_rejected() {
        let mut dht = SimDht::default();
        let key = dht::campaign_table_key(&url().render()).unwrap();
        let far = 1000 + 10 * 525_600;
        dht.put(key, far.to_string().as_bytes(), 0).unwrap();
        dht.put(key, b"garbage", 0).unwrap();
        let mut a = coordinator(1, cfg());
        let out = a.handle_url(&url(), 1000, &mut dht, &mut rng(2)).unwrap();
        assert_eq!(out.rejected_unsuitable, vec![far]);
        assert!(out.proposed.is_some());
        assert!(out.joined.iter().all(|c| c.start != far));
    }

    #[test]
    fn outstanding_proposal_blocks_a_second_one() {
        let mut dht = SimDht::default();
        let c = CoordinatorConfig {
            min_wait: 60,
            max_wait: 120,
            ..cfg()
        };
        let mut a = coordinator(1, c);
        let first = a.handle_url(&url(), 1000, &mut dht, &mut rng(2)).unwrap();
        let start = first.proposed.unwrap();
        // Later, the own proposal is too close to count as suitable.
        let later = a.handle_url(&url(), start - 30, &mut dht, &mut rng(3)).unwrap();
        assert_eq!(later.proposed, None);
        assert!(later.joined.is_empty());
    }

    #[test]
    fn highest_trust_policy() {
        let mut dht = SimDht::default();
        let c = CoordinatorConfig {
            join_policy: JoinPolicy::HighestTrust,
            ..cfg()
        };
        let mut me = coordinator(9, c);
        let (s1, s2) = (1200u64, 1300u64);
        let key = dht::campaign_table_key(&url().render()).unwrap();
        for s in [s1, s2] {
            dht.put(key, s.to_string().as_bytes(), 0).unwrap();
        }
        let c1 = CampaignStart::new(url(), s1);
        let c2 = CampaignStart::new(url(), s2);
        dht.put(c1.comrades_key().unwrap(), b"peer-three", 0).unwrap();
        dht.put(c2.comrades_key().unwrap(), b"peer-five", 0).unwrap();
        let tc = TrustConfig::default();
        let give = |db: &mut TrustDb, who: &[u8], n: usize| {
            let o = trust::CampaignOutcome {
                campaign: c1.clone(),
                baseline_latency: 1.0,
                during_latency: 10.0,
                comrades: vec![who.to_vec()],
            };
            for _ in 0..n {
                trust::apply_outcome(db, trust::Verdict::Success, &o, &tc);
            }
        };
        give(me.trust_db_mut(), b"peer-three", 3);
        give(me.trust_db_mut(), b"peer-five", 5);
        let out = me.handle_url(&url(), 1000, &mut dht, &mut rng(1)).unwrap();
        assert_eq!(out.joined, vec![c2]);
    }

    fn seeded_campaign(dht: &mut SimDht, me: &mut Coordinator, extra: usize) -> CampaignStart {
        let out = me.handle_url(&url(), 1000, dht, &mut rng(2)).unwrap();
        let c = out.joined[0].clone();
        for i in 0..extra {
            dht.put(c.comrades_key().unwrap(), format!("comrade-{i}").as_bytes(), 1000).unwrap();
        }
        c
    }

    #[test]
    fn tick_thresholds() {
        // min_comrades = 2; self plus one other = 2 → skipped.
        let mut dht = SimDht::default();
        let mut a = coordinator(1, cfg());
        let c = seeded_campaign(&mut dht, &mut a, 1);
        assert!(a.tick(c.start - 1, &dht).unwrap().is_empty());
        let d = a.tick(c.start, &dht).unwrap();
        assert_eq!((d[0].comrade_count, d[0].launched), (2, false));
        assert_eq!(d[0].reason, DecisionReason::TooFewComrades);
        assert_eq!(a.local_db().get(&c).unwrap().state, CampaignState::Skipped);
        assert!(a.tick(c.start + 1, &dht).unwrap().is_empty());

        let mut dht = SimDht::default();
        let mut b = coordinator(2, cfg());
        let c = seeded_campaign(&mut dht, &mut b, 2);
        let d = b.tick(c.start, &dht).unwrap();
        assert_eq!((d[0].comrade_count, d[0].launched), (3, true));
        assert_eq!(b.local_db().get(&c).unwrap().state, CampaignState::Launched);

        let mut dht = SimDht::default();
        let demanding = CoordinatorConfig {
            min_accumulated_trust: 1,
            ..cfg()
        };
        let mut e = coordinator(3, demanding);
        let c = seeded_campaign(&mut dht, &mut e, 4);
        let d = e.tick(c.start, &dht).unwrap();
        assert_eq!(d[0].reason, DecisionReason::InsufficientTrust);
        assert!(!d[0].launched);
    }

    #[test]
    fn late_ticks_skip() {
        let mut dht = SimDht::default();
        let mut a = coordinator(1, cfg());
        let c = seeded_campaign(&mut dht, &mut a, 5);
        let d = a.tick(c.start + a.config().launch_grace, &dht).unwrap();
        assert_eq!(d[0].reason, DecisionReason::Late);
    }

    #[test]
    fn inbox_polling_removes_messages() {
        let mut dht = SimDht::default();
        let mut a = coordinator(1, cfg());
        assert!(a.poll_inbox(0, &mut dht).unwrap().is_empty());

        let issuer = ClientIdentity::generate(&mut rng(50));
        let (ch, _) = crypto::generate_challenge(&issuer, 10, 0, &mut rng(51));
        trust::deliver(&mut dht, a.public_key(), &InboxPayload::Challenge(ch), 0).unwrap();
        dht.put(dht::inbox_key(a.public_key()).unwrap(), b"junk", 0).unwrap();
        let got = a.poll_inbox(0, &mut dht).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(a.stats().undecodable_messages, 1);
        assert!(a.poll_inbox(1, &mut dht).unwrap().is_empty());
    }

    #[test]
    fn challenge_budget_caps_solving() {
        let mut dht = SimDht::default();
        let mut victim = coordinator(1, cfg());
        let c = seeded_campaign(&mut dht, &mut victim, 0);
        let attacker = ClientIdentity::generate(&mut rng(60));
        dht.put(c.comrades_key().unwrap(), attacker.public_key(), 1000).unwrap();
        let mut r = rng(61);
        let cap = victim.config().max_challenges_answered as usize;
        for _ in 0..cap + 5 {
            let (ch, _) = crypto::generate_challenge(&attacker, 50, 1000, &mut r);
            trust::deliver(&mut dht, victim.public_key(), &InboxPayload::Challenge(ch), 1000).unwrap();
        }
        let report = victim.process_inbox(1000, &mut dht).unwrap();
        assert_eq!(report.solve_attempts, cap);
        assert_eq!(report.dropped_budget, 5);
        assert!(victim.poll_inbox(1001, &mut dht).unwrap().is_empty());
    }

    #[test]
    fn parse_start_values() {
        assert_eq!(parse_start(b"1440"), Some(1440));
        assert_eq!(parse_start(b"0"), None);
        assert_eq!(parse_start(b"-5"), None);
        assert_eq!(parse_start(b"+5"), None);
        assert_eq!(parse_start(b""), None);
        assert_eq!(parse_start(b"99999999999999999999999"), None);
    }
}
