//! What a simulation run reports: a per-minute event stream plus a
//! summary. Everything is keyed or sorted deterministically so two runs
//! with the same seed serialize to identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use super::adversary::AdversaryStats;
use crate::coordinator::{ClientStats, DecisionReason};
use crate::target::CanonicalUrl;
use crate::trust::Verdict;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Spam {
        minute: u64,
        client: usize,
        targets: Vec<CanonicalUrl>,
        dropped: usize,
    },
    Join {
        minute: u64,
        client: usize,
        url: CanonicalUrl,
        start: u64,
        proposed: bool,
        /// Whether the start satisfied the client's suitability rule at join time.
        suitable: bool,
        adversarial: bool,
    },
    Rejected {
        minute: u64,
        client: usize,
        url: CanonicalUrl,
        starts: Vec<u64>,
    },
    NoFeasibleStart {
        minute: u64,
        client: usize,
        url: CanonicalUrl,
    },
    Decision {
        minute: u64,
        client: usize,
        url: CanonicalUrl,
        start: u64,
        comrade_count: usize,
        honest_comrades: usize,
        accumulated_trust: u64,
        adversary_trust: u64,
        required_trust: u64,
        launched: bool,
        reason: DecisionReason,
    },
    ChallengesSent {
        minute: u64,
        client: usize,
        count: usize,
    },
    Inbox {
        minute: u64,
        client: usize,
        challenges: usize,
        solve_attempts: usize,
        solved: usize,
        hash_evaluations: u64,
        dropped_not_comrade: usize,
        dropped_budget: usize,
        dropped_no_solution: usize,
        verified: usize,
        adversary_verified: usize,
        mismatched: usize,
    },
    Outcome {
        minute: u64,
        client: usize,
        url: CanonicalUrl,
        start: u64,
        baseline_latency: f64,
        during_latency: f64,
        verdict: Verdict,
        trust_reset: bool,
        threshold: u64,
    },
    Adversary {
        minute: u64,
        adversary: usize,
        strategy: &'static str,
        injected_starts: Vec<u64>,
        registrations: u64,
        challenges_sent: u64,
        forwarded: u64,
    },
    Site {
        minute: u64,
        url: CanonicalUrl,
        opt_out_requests: u64,
        probe_requests: u64,
        visitors_served: u64,
        visitors_lost: u64,
        response_time: f64,
        traffic_bytes: u64,
        traffic_cost: f64,
        lost_revenue: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignMetrics {
    pub url: CanonicalUrl,
    pub start: u64,
    /// Injected by an adversary rather than proposed by an honest client.
    pub adversarial: bool,
    pub honest_joined: usize,
    /// Distinct keys in the Comrades Table at the start.
    pub comrades_at_start: usize,
    pub launched_clients: usize,
    pub skipped_clients: usize,
    pub launched: bool,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UrlMetrics {
    pub url: CanonicalUrl,
    /// Honest clients whose spam pointed at this URL.
    pub reporters: usize,
    pub largest_honest_campaign: usize,
    pub convergence: f64,
    pub launched_campaigns: usize,
    pub joins_rejected_unsuitable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteMetrics {
    pub url: CanonicalUrl,
    pub opt_out_requests: u64,
    pub probe_requests: u64,
    pub visitors_served: u64,
    pub visitors_lost: u64,
    pub traffic_bytes: u64,
    pub traffic_cost: f64,
    pub lost_revenue: f64,
    pub peak_response_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientMetrics {
    pub index: usize,
    pub public_key: String,
    pub stats: ClientStats,
    pub campaigns_joined: usize,
    pub launched: usize,
    pub skipped: usize,
    pub successes: usize,
    pub failures: usize,
    pub threshold: u64,
    pub verified_peers: usize,
    /// Non-zero trust values by hex public key.
    pub trust: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AttackMetrics {
    pub honest_joins_on_adversarial_starts: usize,
    pub launches_on_adversarial_starts: usize,
    /// Successful verifications of an adversary-controlled key.
    pub adversary_verifications: usize,
    /// Sum over clients of the trust they give adversary keys at the end.
    pub adversary_trust_held: u64,
    /// Largest trust adversary keys contributed to any launch decision.
    pub max_adversary_trust_at_decision: u64,
    pub forwarded_trials: u64,
    pub flood_challenges_sent: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AdversaryReport {
    pub index: usize,
    pub strategy: &'static str,
    pub url: CanonicalUrl,
    pub stats: AdversaryStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub duration: u64,
    pub epoch_start: u64,
    pub client_count: usize,
    pub warnings: Vec<String>,
    pub campaigns: Vec<CampaignMetrics>,
    pub urls: Vec<UrlMetrics>,
    pub sites: Vec<SiteMetrics>,
    pub clients: Vec<ClientMetrics>,
    pub adversaries: Vec<AdversaryReport>,
    pub attack: AttackMetrics,
    #[serde(skip)]
    pub events: Vec<Event>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no campaign for {0} in this run")]
    NoSuchCampaign(String),
}

/// Share of the reporting clients that ended up in the largest honest
/// campaign for `url`.
pub fn convergence(report: &MetricsReport, url: &CanonicalUrl) -> Result<f64, MetricsError> {
    let reporters = report
        .urls
        .iter()
        .find(|u| &u.url == url && u.reporters > 0)
        .map(|u| u.reporters)
        .ok_or_else(|| MetricsError::NoSuchCampaign(url.to_string()))?;
    Ok(largest_honest_campaign(&report.campaigns, url) as f64 / reporters as f64)
}

pub(crate) fn largest_honest_campaign(campaigns: &[CampaignMetrics], url: &CanonicalUrl) -> usize {
    campaigns
        .iter()
        .filter(|c| &c.url == url)
        .map(|c| c.honest_joined)
        .max()
        .unwrap_or(0)
}

impl MetricsReport {
    pub fn launched_campaigns(&self) -> usize {
        self.campaigns.iter().filter(|c| c.launched).count()
    }

    pub fn total_traffic_cost(&self) -> f64 {
        self.sites.iter().map(|s| s.traffic_cost).sum()
    }

    pub fn total_lost_revenue(&self) -> f64 {
        self.sites.iter().map(|s| s.lost_revenue).sum()
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Newline-delimited JSON: every event, then one `summary` record.
    pub fn write_stream<W: Write>(&self, mut out: W) -> io::Result<()> {
        for event in &self.events {
            serde_json::to_writer(&mut out, event)?;
            out.write_all(b"\n")?;
        }
        let serde_json::Value::Object(fields) = serde_json::to_value(self)? else {
            unreachable!("report is a struct")
        };
        let mut ordered = serde_json::Map::new();
        ordered.insert("event".into(), "summary".into());
        ordered.extend(fields);
        serde_json::to_writer(&mut out, &ordered)?;
        out.write_all(b"\n")
    }

    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed {}  clients {}  duration {} min", self.seed, self.client_count, self.duration);
        let _ = writeln!(
            s,
            "campaigns {}  launched {}",
            self.campaigns.len(),
            self.launched_campaigns()
        );
        for u in &self.urls {
            let _ = writeln!(
                s,
                "  {}  reporters {}  largest {}  convergence {:.3}  unsuitable joins rejected {}",
                u.url, u.reporters, u.largest_honest_campaign, u.convergence, u.joins_rejected_unsuitable
            );
        }
        for site in &self.sites {
            let _ = writeln!(
                s,
                "site {}  opt-outs {}  traffic cost {:.6}  lost revenue {:.2}  peak {:.0} ms",
                site.url, site.opt_out_requests, site.traffic_cost, site.lost_revenue, site.peak_response_time
            );
        }
        if !self.adversaries.is_empty() {
            let a = &self.attack;
            let _ = writeln!(
                s,
                "attack  adversarial joins {}  adversary verifications {}  forwarded {}  flood sent {}  max adversary trust {}",
                a.honest_joins_on_adversarial_starts,
                a.adversary_verifications,
                a.forwarded_trials,
                a.flood_challenges_sent,
                a.max_adversary_trust_at_decision
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}
