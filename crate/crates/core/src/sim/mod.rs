//! Deterministic minute-by-minute simulation of honest clients, target
//! sites and adversaries sharing one DHT.
//!
//! Within a minute the phases run in a fixed order: adversary actions,
//! spam delivery, inbox polls, coordinator ticks, opt-out bursts, probes,
//! site settlement. Clients are always visited in index order.

mod adversary;
mod metrics;
mod scenario;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coordinator::{is_suitable, CampaignStart, CampaignState, Coordinator, CoordinatorError, DecisionReason};
use crate::crypto::{hash_bytes, ClientIdentity};
use crate::dht::SimDht;
use crate::site::{self, EconomicsDelta, TargetSite, TrafficLedger};
use crate::target::{self, CanonicalUrl, Whitelist};
use crate::trust::{self, CampaignOutcome, PublicKey, Verdict};

pub use adversary::{AdversaryAction, AdversaryStats};
pub use metrics::{
    convergence, AdversaryReport, AttackMetrics, CampaignMetrics, ClientMetrics, Event, MetricsError, MetricsReport,
    SiteMetrics, UrlMetrics,
};
pub use scenario::{AdversarySpec, ClientSelector, ClientSpec, Scenario, ScenarioError, SpamInjection};

use adversary::{Adversary, World};

/// Independent RNG stream per simulated entity, so adding an adversary
/// does not shift what honest clients draw.
fn stream(seed: u64, label: &str, index: usize) -> ChaCha8Rng {
    let mut material = b"comrades-sim/".to_vec();
    material.extend_from_slice(label.as_bytes());
    material.push(0);
    material.extend_from_slice(&seed.to_le_bytes());
    material.extend_from_slice(&(index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(hash_bytes(&material))
}

struct Client {
    coord: Coordinator,
    rng: ChaCha8Rng,
}

#[derive(Default)]
struct ProbeLog {
    baseline: Vec<f64>,
    during: Vec<f64>,
    /// Comrades seen at launch, self excluded. `None` until launched.
    comrades: Option<Vec<PublicKey>>,
    judged: bool,
}

struct SiteState {
    site: TargetSite,
    ledger: TrafficLedger,
    total: EconomicsDelta,
}

struct Run<'a> {
    scenario: &'a Scenario,
    clients: Vec<Client>,
    client_keys: Vec<PublicKey>,
    honest: BTreeSet<PublicKey>,
    adversaries: Vec<Adversary>,
    adversary_keys: BTreeSet<PublicKey>,
    dht: SimDht,
    sites: Vec<SiteState>,
    site_index: BTreeMap<CanonicalUrl, usize>,
    whitelist: Whitelist,
    deliveries: BTreeMap<u64, Vec<(usize, usize)>>,
    probes: BTreeMap<(usize, CampaignStart), ProbeLog>,
    /// Launched participations still sending opt-outs.
    active: Vec<(usize, CampaignStart)>,
    reporters: BTreeMap<CanonicalUrl, BTreeSet<usize>>,
    rejected_unsuitable: BTreeMap<CanonicalUrl, usize>,
    outcomes: BTreeMap<(usize, CampaignStart), Verdict>,
    attack: AttackMetrics,
    events: Vec<Event>,
}

/// Runs `scenario` to completion.
pub fn run(scenario: &Scenario) -> Result<MetricsReport, ScenarioError> {
    let warnings = scenario.validate()?;
    let mut run = Run::new(scenario);
    for t in 0..scenario.duration {
        run.step(t).map_err(|e| ScenarioError::Runtime(format!("minute {t}: {e}")))?;
    }
    Ok(run.finish(warnings))
}

impl<'a> Run<'a> {
    fn new(scenario: &'a Scenario) -> Self {
        let seed = scenario.seed;
        let clients: Vec<Client> = scenario
            .expanded_clients()
            .into_iter()
            .enumerate()
            .map(|(i, spec)| {
                let identity = ClientIdentity::generate(&mut stream(seed, "identity", i));
                Client {
                    coord: Coordinator::new(identity, spec.config.clone(), spec.trust.clone()),
                    rng: stream(seed, "client", i),
                }
            })
            .collect();
        let client_keys: Vec<PublicKey> = clients.iter().map(|c| c.coord.public_key().to_vec()).collect();
        let honest = client_keys.iter().cloned().collect();

        let adversaries: Vec<Adversary> = scenario
            .adversaries
            .iter()
            .enumerate()
            .map(|(i, spec)| Adversary::new(i, spec.clone(), stream(seed, "adversary", i)))
            .collect();
        let adversary_keys = adversaries.iter().flat_map(|a| a.keys()).collect();

        let mut spam_rng = stream(seed, "spam", 0);
        let mut deliveries: BTreeMap<u64, Vec<(usize, usize)>> = BTreeMap::new();
        for (j, inj) in scenario.spam_injections.iter().enumerate() {
            for client in inj.clients.resolve(clients.len()) {
                let delay = if inj.spread > 0 { spam_rng.gen_range(0..inj.spread) } else { 0 };
                deliveries.entry(inj.minute + delay).or_default().push((client, j));
            }
        }

        let sites: Vec<SiteState> = scenario
            .target_sites
            .iter()
            .map(|s| SiteState {
                site: s.clone(),
                ledger: TrafficLedger::default(),
                total: EconomicsDelta::default(),
            })
            .collect();
        let site_index = sites.iter().enumerate().map(|(i, s)| (s.site.url.clone(), i)).collect();

        Self {
            scenario,
            clients,
            client_keys,
            honest,
            adversaries,
            adversary_keys,
            dht: SimDht::new(scenario.effective_dht_ttl()).with_latency(scenario.dht_latency),
            sites,
            site_index,
            whitelist: Whitelist::new(scenario.whitelist.iter().map(String::as_str)),
            deliveries,
            probes: BTreeMap::new(),
            active: Vec::new(),
            reporters: BTreeMap::new(),
            rejected_unsuitable: BTreeMap::new(),
            outcomes: BTreeMap::new(),
            attack: AttackMetrics::default(),
            events: Vec::new(),
        }
    }

    fn is_adversarial(&self, campaign: &CampaignStart) -> bool {
        self.adversaries
            .iter()
            .any(|a| a.spec().url() == &campaign.url && a.injected_starts().contains(&campaign.start))
    }

    fn step(&mut self, t: u64) -> Result<(), CoordinatorError> {
        let now = self.scenario.epoch_start + t;
        self.adversary_phase(t, now);
        self.spam_phase(t, now)?;
        self.inbox_phase(now)?;
        self.tick_phase(now)?;
        self.burst_phase(now);
        self.probe_phase(t, now);
        self.settle_phase(t, now);
        Ok(())
    }

    fn adversary_phase(&mut self, t: u64, now: u64) {
        let world = World {
            client_keys: &self.client_keys,
        };
        for adv in &mut self.adversaries {
            if let Some(a) = adv.step(t, now, &mut self.dht, &world) {
                self.events.push(Event::Adversary {
                    minute: now,
                    adversary: a.adversary,
                    strategy: a.strategy,
                    injected_starts: a.injected_starts,
                    registrations: a.registrations,
                    challenges_sent: a.challenges_sent,
                    forwarded: a.forwarded,
                });
            }
        }
    }

    fn spam_phase(&mut self, t: u64, now: u64) -> Result<(), CoordinatorError> {
        let Some(batch) = self.deliveries.remove(&t) else {
            return Ok(());
        };
        for (ci, inj) in batch {
            let mail = &self.scenario.spam_injections[inj].email;
            let eval = target::evaluate(mail, &self.scenario.redirect_map, &self.whitelist, &self.scenario.confirm);
            self.events.push(Event::Spam {
                minute: now,
                client: ci,
                targets: eval.targets.clone(),
                dropped: eval.dropped.len(),
            });
            for url in eval.targets {
                self.reporters.entry(url.clone()).or_default().insert(ci);
                let client = &mut self.clients[ci];
                let outcome = match client.coord.handle_url(&url, now, &mut self.dht, &mut client.rng) {
                    Ok(o) => o,
                    Err(CoordinatorError::NoFeasibleStart { .. }) => {
                        self.events.push(Event::NoFeasibleStart {
                            minute: now,
                            client: ci,
                            url,
                        });
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                if !outcome.rejected_unsuitable.is_empty() {
                    *self.rejected_unsuitable.entry(url.clone()).or_default() += outcome.rejected_unsuitable.len();
                    self.events.push(Event::Rejected {
                        minute: now,
                        client: ci,
                        url: url.clone(),
                        starts: outcome.rejected_unsuitable.clone(),
                    });
                }
                let cfg = self.clients[ci].coord.config().clone();
                for campaign in outcome.joined {
                    let adversarial = self.is_adversarial(&campaign);
                    if adversarial {
                        self.attack.honest_joins_on_adversarial_starts += 1;
                    }
                    self.events.push(Event::Join {
                        minute: now,
                        client: ci,
                        suitable: is_suitable(campaign.start, now, &cfg),
                        proposed: outcome.proposed == Some(campaign.start),
                        url: campaign.url,
                        start: campaign.start,
                        adversarial,
                    });
                }
            }
        }
        Ok(())
    }

    fn inbox_phase(&mut self, now: u64) -> Result<(), CoordinatorError> {
        for ci in 0..self.clients.len() {
            let client = &mut self.clients[ci];
            if now % client.coord.config().poll_interval != 0 {
                continue;
            }
            let report = client.coord.process_inbox(now, &mut self.dht)?;
            let adversary_verified = report
                .verified
                .iter()
                .filter(|k| self.adversary_keys.contains(*k))
                .count();
            self.attack.adversary_verifications += adversary_verified;
            if report.messages > 0 {
                self.events.push(Event::Inbox {
                    minute: now,
                    client: ci,
                    challenges: report.challenges,
                    solve_attempts: report.solve_attempts,
                    solved: report.solved,
                    hash_evaluations: report.hash_evaluations,
                    dropped_not_comrade: report.dropped_not_comrade,
                    dropped_budget: report.dropped_budget,
                    dropped_no_solution: report.dropped_no_solution,
                    verified: report.verified.len(),
                    adversary_verified,
                    mismatched: report.mismatched,
                });
            }
            if self.scenario.verification {
                let client = &mut self.clients[ci];
                let sent = client.coord.verify_comrades(now, &mut self.dht, &mut client.rng)?;
                if sent > 0 {
                    self.events.push(Event::ChallengesSent {
                        minute: now,
                        client: ci,
                        count: sent,
                    });
                }
            }
        }
        Ok(())
    }

    fn tick_phase(&mut self, now: u64) -> Result<(), CoordinatorError> {
        for ci in 0..self.clients.len() {
            let decisions = self.clients[ci].coord.tick(now, &self.dht)?;
            for d in decisions {
                let own = self.client_keys[ci].clone();
                let db = self.clients[ci].coord.trust_db();
                let adversarial: Vec<&PublicKey> =
                    d.comrades.iter().filter(|k| self.adversary_keys.contains(*k)).collect();
                let adversary_trust = trust::accumulated_trust(db, &adversarial);
                let honest_comrades = d.comrades.iter().filter(|k| self.honest.contains(*k)).count();
                if d.launched {
                    self.attack.max_adversary_trust_at_decision =
                        self.attack.max_adversary_trust_at_decision.max(adversary_trust);
                    if self.is_adversarial(&d.campaign) {
                        self.attack.launches_on_adversarial_starts += 1;
                    }
                    self.active.push((ci, d.campaign.clone()));
                    let log = self.probes.entry((ci, d.campaign.clone())).or_default();
                    log.comrades = Some(d.comrades.iter().filter(|k| **k != own).cloned().collect());
                }
                if d.reason == DecisionReason::Late {
                    log::debug!("client {ci} missed the start of {:?}", d.campaign);
                }
                self.events.push(Event::Decision {
                    minute: now,
                    client: ci,
                    url: d.campaign.url.clone(),
                    start: d.campaign.start,
                    comrade_count: d.comrade_count,
                    honest_comrades,
                    accumulated_trust: d.accumulated_trust,
                    adversary_trust,
                    required_trust: d.required_trust,
                    launched: d.launched,
                    reason: d.reason,
                });
            }
        }
        Ok(())
    }

    fn burst_phase(&mut self, now: u64) {
        let duration = self.scenario.campaign_duration;
        self.active.retain(|(_, c)| now < c.start + duration);
        let mut per_site: BTreeMap<usize, u64> = BTreeMap::new();
        for (_, c) in &self.active {
            if c.start <= now {
                if let Some(&si) = self.site_index.get(&c.url) {
                    *per_site.entry(si).or_default() += 1;
                }
            }
        }
        for (si, comrades) in per_site {
            site::send_opt_out_burst(&mut self.sites[si].ledger, comrades, self.scenario.opt_out_rate, now);
        }
    }

    /// Baseline probes run before the start while still pending, campaign
    /// probes after a launch; the verdict lands one probe window after the
    /// start.
    fn probe_phase(&mut self, t: u64, now: u64) {
        for ci in 0..self.clients.len() {
            let coord = &self.clients[ci].coord;
            let tc = coord.trust_config();
            let (count, window) = (tc.probe_count as u64, tc.probe_window);
            if count == 0 || window == 0 {
                continue;
            }
            let step = (window / count).max(1);
            let relevant: Vec<(CampaignStart, CampaignState)> = coord
                .local_db()
                .entries()
                .iter()
                .filter(|(c, _)| {
                    self.site_index.contains_key(&c.url) && now + window >= c.start && now <= c.start + window
                })
                .map(|(c, e)| (c.clone(), e.state))
                .collect();
            for (campaign, state) in relevant {
                let si = self.site_index[&campaign.url];
                let key = (ci, campaign.clone());
                let baseline_from = campaign.start.checked_sub(window);
                let site_state = &mut self.sites[si];
                let capacity = site_state.site.capacity_at(t);
                if let Some(from) = baseline_from {
                    if now >= from && now < campaign.start && (now - from) % step == 0 && (now - from) / step < count {
                        let rt = site::probe(&site_state.site, &mut site_state.ledger, now, capacity);
                        self.probes.entry(key.clone()).or_default().baseline.push(rt);
                    }
                }
                if state == CampaignState::Launched
                    && now >= campaign.start
                    && (now - campaign.start) % step == 0
                    && (now - campaign.start) / step < count
                {
                    let rt = site::probe(&site_state.site, &mut site_state.ledger, now, capacity);
                    self.probes.entry(key.clone()).or_default().during.push(rt);
                }
                if now == campaign.start + window {
                    self.judge(ci, &campaign, now);
                }
            }
        }
    }

    fn judge(&mut self, ci: usize, campaign: &CampaignStart, now: u64) {
        let key = (ci, campaign.clone());
        let Some(log) = self.probes.get_mut(&key) else {
            return;
        };
        let coord = &mut self.clients[ci].coord;
        let tc = coord.trust_config().clone();
        let complete = log.baseline.len() == tc.probe_count as usize && log.during.len() == tc.probe_count as usize;
        if log.judged || !complete {
            return;
        }
        let Some(comrades) = log.comrades.clone() else {
            return;
        };
        log.judged = true;
        let outcome = CampaignOutcome {
            campaign: campaign.clone(),
            baseline_latency: trust::median(&log.baseline).unwrap_or_default(),
            during_latency: trust::median(&log.during).unwrap_or_default(),
            comrades,
        };
        let verdict = trust::judge_outcome(&outcome, tc.alpha);
        let before = coord.trust_db().consecutive_failures();
        trust::apply_outcome(coord.trust_db_mut(), verdict, &outcome, &tc);
        let db = coord.trust_db();
        let trust_reset = verdict == Verdict::Failure && before + 1 >= tc.failures_before_reset;
        self.outcomes.insert(key, verdict);
        self.events.push(Event::Outcome {
            minute: now,
            client: ci,
            url: campaign.url.clone(),
            start: campaign.start,
            baseline_latency: outcome.baseline_latency,
            during_latency: outcome.during_latency,
            verdict,
            trust_reset,
            threshold: db.current_min_accumulated_trust(),
        });
    }

    fn settle_phase(&mut self, t: u64, now: u64) {
        for s in &mut self.sites {
            let capacity = s.site.capacity_at(t);
            let delta = site::settle_minute(&s.site, &mut s.ledger, now, capacity);
            s.total += delta;
            let m = s.ledger.minute(now);
            if m.opt_out_requests > 0 || m.probe_requests > 0 || m.visitors_lost > 0 {
                self.events.push(Event::Site {
                    minute: now,
                    url: s.site.url.clone(),
                    opt_out_requests: m.opt_out_requests,
                    probe_requests: m.probe_requests,
                    visitors_served: m.visitors_served,
                    visitors_lost: m.visitors_lost,
                    response_time: delta.response_time,
                    traffic_bytes: delta.traffic_bytes,
                    traffic_cost: delta.traffic_cost,
                    lost_revenue: delta.lost_revenue,
                });
            }
        }
    }

    fn finish(mut self, warnings: Vec<String>) -> MetricsReport {
        // Every campaign any honest client joined or any adversary injected.
        let mut all: BTreeSet<CampaignStart> = self
            .clients
            .iter()
            .flat_map(|c| c.coord.local_db().entries().keys().cloned())
            .collect();
        for a in &self.adversaries {
            all.extend(a.injected_starts().iter().map(|&s| CampaignStart::new(a.spec().url().clone(), s)));
        }

        let campaigns: Vec<CampaignMetrics> = all
            .iter()
            .map(|c| {
                let entries: Vec<CampaignState> = self
                    .clients
                    .iter()
                    .filter_map(|cl| cl.coord.local_db().get(c).map(|e| e.state))
                    .collect();
                let launched_clients = entries.iter().filter(|s| **s == CampaignState::Launched).count();
                let verdicts: Vec<Verdict> = self
                    .outcomes
                    .iter()
                    .filter(|((_, oc), _)| oc == c)
                    .map(|(_, v)| *v)
                    .collect();
                CampaignMetrics {
                    url: c.url.clone(),
                    start: c.start,
                    adversarial: self.is_adversarial(c),
                    honest_joined: entries.len(),
                    comrades_at_start: trust::comrades_of(&self.dht, c, c.start).map_or(0, |v| v.len()),
                    launched_clients,
                    skipped_clients: entries.iter().filter(|s| **s == CampaignState::Skipped).count(),
                    launched: launched_clients > 0,
                    successes: verdicts.iter().filter(|v| **v == Verdict::Success).count(),
                    failures: verdicts.iter().filter(|v| **v == Verdict::Failure).count(),
                }
            })
            .collect();

        let mut url_set: BTreeSet<CanonicalUrl> = self.reporters.keys().cloned().collect();
        url_set.extend(campaigns.iter().map(|c| c.url.clone()));
        let urls = url_set
            .into_iter()
            .map(|url| {
                let reporters = self.reporters.get(&url).map_or(0, BTreeSet::len);
                let largest = metrics::largest_honest_campaign(&campaigns, &url);
                UrlMetrics {
                    reporters,
                    largest_honest_campaign: largest,
                    convergence: if reporters == 0 { 0.0 } else { largest as f64 / reporters as f64 },
                    launched_campaigns: campaigns.iter().filter(|c| c.url == url && c.launched).count(),
                    joins_rejected_unsuitable: self.rejected_unsuitable.get(&url).copied().unwrap_or(0),
                    url,
                }
            })
            .collect();

        let sites = self
            .sites
            .iter()
            .map(|s| {
                let totals = s.ledger.totals();
                SiteMetrics {
                    url: s.site.url.clone(),
                    opt_out_requests: totals.opt_out_requests,
                    probe_requests: totals.probe_requests,
                    visitors_served: totals.visitors_served,
                    visitors_lost: totals.visitors_lost,
                    traffic_bytes: s.total.traffic_bytes,
                    traffic_cost: s.total.traffic_cost,
                    lost_revenue: s.total.lost_revenue,
                    peak_response_time: s.total.response_time,
                }
            })
            .collect();

        let clients = self
            .clients
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let db = c.coord.trust_db();
                let local = c.coord.local_db();
                let mine: Vec<Verdict> = self
                    .outcomes
                    .iter()
                    .filter(|((ci, _), _)| *ci == i)
                    .map(|(_, v)| *v)
                    .collect();
                ClientMetrics {
                    index: i,
                    public_key: hex::encode(c.coord.public_key()),
                    stats: *c.coord.stats(),
                    campaigns_joined: local.len(),
                    launched: local.entries().values().filter(|e| e.state == CampaignState::Launched).count(),
                    skipped: local.entries().values().filter(|e| e.state == CampaignState::Skipped).count(),
                    successes: mine.iter().filter(|v| **v == Verdict::Success).count(),
                    failures: mine.iter().filter(|v| **v == Verdict::Failure).count(),
                    threshold: db.current_min_accumulated_trust(),
                    verified_peers: db.records().values().filter(|r| r.verified).count(),
                    trust: db
                        .records()
                        .iter()
                        .filter(|(_, r)| r.trust > 0)
                        .map(|(k, r)| (hex::encode(k), r.trust))
                        .collect(),
                }
            })
            .collect();

        self.attack.adversary_trust_held = self
            .clients
            .iter()
            .map(|c| trust::accumulated_trust(c.coord.trust_db(), &self.adversary_keys.iter().collect::<Vec<_>>()))
            .sum();
        self.attack.forwarded_trials = self.adversaries.iter().map(|a| a.stats.forwarded_trials).sum();
        self.attack.flood_challenges_sent = self.adversaries.iter().map(|a| a.stats.challenges_sent).sum();

        let adversaries = self
            .adversaries
            .iter()
            .enumerate()
            .map(|(i, a)| AdversaryReport {
                index: i,
                strategy: a.spec().name(),
                url: a.spec().url().clone(),
                stats: a.stats.clone(),
            })
            .collect();

        MetricsReport {
            seed: self.scenario.seed,
            duration: self.scenario.duration,
            epoch_start: self.scenario.epoch_start,
            client_count: self.clients.len(),
            warnings,
            campaigns,
            urls,
            sites,
            clients,
            adversaries,
            attack: self.attack,
            events: self.events,
        }
    }
}
