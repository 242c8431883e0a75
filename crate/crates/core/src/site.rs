//! The advertised website under opt-out load, and what that load costs it.
//!
//! Congestion model: `min(timeout, base_latency * (1 + (load / capacity)^2))`
//! with `load` in requests per minute. Legitimate visitors leave without
//! buying when the response time exceeds their patience.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::target::CanonicalUrl;

pub const GIB: f64 = (1u64 << 30) as f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSite {
    pub url: CanonicalUrl,
    /// ms
    pub base_latency: f64,
    /// requests per minute
    pub capacity: f64,
    /// ms
    pub timeout: f64,
    pub request_bytes: u64,
    pub cost_per_gib: f64,
    /// legitimate visitors per minute
    pub visitor_rate: u64,
    pub revenue_per_visit: f64,
    /// ms a visitor waits before giving up
    pub patience: f64,
    /// `(minute offset, new capacity)` pairs, e.g. an operator adding servers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub capacity_changes: Vec<(u64, f64)>,
}

impl TargetSite {
    pub fn new(url: CanonicalUrl) -> Self {
        Self {
            url,
            base_latency: 100.0,
            capacity: 600.0,
            timeout: 10_000.0,
            request_bytes: 2048,
            cost_per_gib: 0.05,
            visitor_rate: 10,
            revenue_per_visit: 0.5,
            patience: 2_000.0,
            capacity_changes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = [
            self.base_latency,
            self.capacity,
            self.timeout,
            self.cost_per_gib,
            self.revenue_per_visit,
            self.patience,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(format!("site {}: all numeric fields must be finite", self.url));
        }
        if self.base_latency <= 0.0 {
            return Err(format!("site {}: base_latency must be > 0", self.url));
        }
        if self.capacity < 1.0 || self.capacity_changes.iter().any(|&(_, c)| !(c >= 1.0)) {
            return Err(format!("site {}: capacity must be >= 1", self.url));
        }
        if self.timeout <= self.base_latency {
            return Err(format!("site {}: timeout must be > base_latency", self.url));
        }
        Ok(())
    }

    /// Capacity in effect `offset` minutes after the simulation started.
    pub fn capacity_at(&self, offset: u64) -> f64 {
        self.capacity_changes
            .iter()
            .filter(|(at, _)| *at <= offset)
            .max_by_key(|(at, _)| *at)
            .map_or(self.capacity, |&(_, c)| c)
    }
}

pub fn response_time(site: &TargetSite, load: f64) -> f64 {
    response_time_with_capacity(site, load, site.capacity)
}

pub fn response_time_with_capacity(site: &TargetSite, load: f64, capacity: f64) -> f64 {
    let ratio = load.max(0.0) / capacity;
    (site.base_latency * (1.0 + ratio * ratio)).min(site.timeout)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinuteTraffic {
    pub opt_out_requests: u64,
    pub probe_requests: u64,
    pub visitors_served: u64,
    pub visitors_lost: u64,
}

impl MinuteTraffic {
    pub fn visitors(&self) -> u64 {
        self.visitors_served + self.visitors_lost
    }
}

/// Per-minute request counts for one site.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrafficLedger {
    minutes: BTreeMap<u64, MinuteTraffic>,
    settled: BTreeSet<u64>,
}

impl TrafficLedger {
    pub fn minute(&self, minute: u64) -> MinuteTraffic {
        self.minutes.get(&minute).copied().unwrap_or_default()
    }

    pub fn minutes(&self) -> &BTreeMap<u64, MinuteTraffic> {
        &self.minutes
    }

    fn entry(&mut self, minute: u64) -> &mut MinuteTraffic {
        self.minutes.entry(minute).or_default()
    }

    pub fn totals(&self) -> MinuteTraffic {
        self.minutes.values().fold(MinuteTraffic::default(), |acc, m| MinuteTraffic {
            opt_out_requests: acc.opt_out_requests + m.opt_out_requests,
            probe_requests: acc.probe_requests + m.probe_requests,
            visitors_served: acc.visitors_served + m.visitors_served,
            visitors_lost: acc.visitors_lost + m.visitors_lost,
        })
    }

    pub fn is_settled(&self, minute: u64) -> bool {
        self.settled.contains(&minute)
    }
}

/// Load seen within `minute` before visitors are accounted: opt-outs,
/// probes, and the minute's visitor arrivals.
fn minute_load(site: &TargetSite, ledger: &TrafficLedger, minute: u64) -> f64 {
    let m = ledger.minute(minute);
    (m.opt_out_requests + m.probe_requests + site.visitor_rate) as f64
}

pub fn send_opt_out_burst(ledger: &mut TrafficLedger, comrade_count: u64, rate: u64, minute: u64) {
    let requests = comrade_count.saturating_mul(rate);
    if requests > 0 {
        ledger.entry(minute).opt_out_requests += requests;
    }
}

/// Measures the response time at `minute`; the probe itself adds one
/// request to that minute's load.
pub fn probe(site: &TargetSite, ledger: &mut TrafficLedger, minute: u64, capacity: f64) -> f64 {
    ledger.entry(minute).probe_requests += 1;
    response_time_with_capacity(site, minute_load(site, ledger, minute), capacity)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EconomicsDelta {
    pub traffic_bytes: u64,
    pub traffic_cost: f64,
    pub lost_revenue: f64,
    pub response_time: f64,
}

impl std::ops::AddAssign for EconomicsDelta {
    fn add_assign(&mut self, rhs: Self) {
        self.traffic_bytes += rhs.traffic_bytes;
        self.traffic_cost += rhs.traffic_cost;
        self.lost_revenue += rhs.lost_revenue;
        self.response_time = self.response_time.max(rhs.response_time);
    }
}

/// Closes the books for `minute`: this minute's visitors arrive and are all
/// lost if the site is slower than their patience. Every request (opt-out,
/// probe, visitor) is billed as `request_bytes` of traffic. Settling a
/// minute twice is a no-op.
pub fn settle_minute(site: &TargetSite, ledger: &mut TrafficLedger, minute: u64, capacity: f64) -> EconomicsDelta {
    if ledger.is_settled(minute) {
        return EconomicsDelta::default();
    }
    let rt = response_time_with_capacity(site, minute_load(site, ledger, minute), capacity);
    let lost = rt > site.patience;
    let m = ledger.entry(minute);
    if lost {
        m.visitors_lost += site.visitor_rate;
    } else {
        m.visitors_served += site.visitor_rate;
    }
    let requests = m.opt_out_requests + m.probe_requests + site.visitor_rate;
    let lost_visitors = m.visitors_lost;
    ledger.settled.insert(minute);
    let traffic_bytes = requests * site.request_bytes;
    EconomicsDelta {
        traffic_bytes,
        traffic_cost: traffic_bytes as f64 * site.cost_per_gib / GIB,
        lost_revenue: lost_visitors as f64 * site.revenue_per_visit,
        response_time: rt,
    }
}
