//! Declarative scenario input, its JSON form and validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::CoordinatorConfig;
use crate::site::TargetSite;
use crate::target::{CanonicalUrl, ConfirmPolicy, EmailDocument, RedirectMap};
use crate::trust::TrustConfig;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
    /// The scenario was valid but the run itself failed.
    #[error("simulation failed: {0}")]
    Runtime(String),
}

impl ScenarioError {
    pub fn diagnostics(&self) -> Vec<String> {
        match self {
            ScenarioError::Invalid(d) => d.clone(),
            _ => vec![self.to_string()],
        }
    }
}

fn one() -> usize {
    1
}

fn default_opt_out_rate() -> u64 {
    6
}

fn default_campaign_duration() -> u64 {
    30
}

fn default_true() -> bool {
    true
}

fn default_period() -> u64 {
    60
}

fn default_flood_max_rand() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    /// Number of identical clients this entry stands for.
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default)]
    pub config: CoordinatorConfig,
    #[serde(default)]
    pub trust: TrustConfig,
}

impl Default for ClientSpec {
    fn default() -> Self {
        Self {
            count: 1,
            config: CoordinatorConfig::default(),
            trust: TrustConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientSelector {
    #[default]
    All,
    /// Half-open index range `[from, to)` over the expanded client list.
    Range { from: usize, to: usize },
    List(Vec<usize>),
}

impl ClientSelector {
    pub fn resolve(&self, total: usize) -> Vec<usize> {
        match self {
            ClientSelector::All => (0..total).collect(),
            ClientSelector::Range { from, to } => (*from..(*to).min(total)).collect(),
            ClientSelector::List(ids) => ids.iter().copied().filter(|&i| i < total).collect(),
        }
    }
}

/// Already-classified spam delivered to a set of clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpamInjection {
    /// Minute offset from the start of the run.
    pub minute: u64,
    #[serde(default)]
    pub clients: ClientSelector,
    pub email: EmailDocument,
    /// Each recipient gets the mail at a uniformly drawn minute in
    /// `[minute, minute + spread)`; 0 delivers to all at `minute`.
    #[serde(default)]
    pub spread: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversarySpec {
    /// Puts far-future starts into the Campaign Table.
    TimePortal {
        url: CanonicalUrl,
        offset_minutes: u64,
        #[serde(default)]
        start_minute: u64,
        /// Re-injection period; 0 injects once.
        #[serde(default = "default_period")]
        period: u64,
    },
    /// Keeps injecting near-term starts to split comrades.
    Separation {
        url: CanonicalUrl,
        injection_period: u64,
        lead_minutes: u64,
        #[serde(default)]
        start_minute: u64,
        /// Fake comrades registered on every injected start.
        #[serde(default)]
        sybil_comrades: usize,
    },
    /// Registers as comrade next to `victim` and floods its inbox.
    ChallengeFlood {
        url: CanonicalUrl,
        victim: usize,
        count: u64,
        #[serde(default)]
        start_minute: u64,
        #[serde(default = "default_period")]
        spread_minutes: u64,
        #[serde(default = "default_flood_max_rand")]
        max_rand: u64,
    },
    /// Registers as comrade and relays every challenge it receives to
    /// another comrade, hoping to get it solved for free.
    MitmForwarder {
        url: CanonicalUrl,
        #[serde(default)]
        start_minute: u64,
        #[serde(default = "default_true")]
        rewrite_issuer: bool,
    },
    /// Registers many fresh keys as comrades without ever solving anything.
    SybilFlood {
        url: CanonicalUrl,
        identity_count: usize,
        #[serde(default)]
        start_minute: u64,
        #[serde(default = "default_period")]
        period: u64,
    },
}

impl AdversarySpec {
    pub fn name(&self) -> &'static str {
        match self {
            AdversarySpec::TimePortal { .. } => "time_portal",
            AdversarySpec::Separation { .. } => "separation",
            AdversarySpec::ChallengeFlood { .. } => "challenge_flood",
            AdversarySpec::MitmForwarder { .. } => "mitm_forwarder",
            AdversarySpec::SybilFlood { .. } => "sybil_flood",
        }
    }

    pub fn url(&self) -> &CanonicalUrl {
        match self {
            AdversarySpec::TimePortal { url, .. }
            | AdversarySpec::Separation { url, .. }
            | AdversarySpec::ChallengeFlood { url, .. }
            | AdversarySpec::MitmForwarder { url, .. }
            | AdversarySpec::SybilFlood { url, .. } => url,
        }
    }

    fn validate(&self, index: usize, clients: usize, errors: &mut Vec<String>) {
        let at = format!("adversaries[{index}] ({})", self.name());
        match self {
            AdversarySpec::TimePortal { offset_minutes, .. } => {
                if *offset_minutes == 0 {
                    errors.push(format!("{at}: offset_minutes must be > 0"));
                }
            }
            AdversarySpec::Separation {
                injection_period,
                lead_minutes,
                sybil_comrades,
                ..
            } => {
                if *injection_period == 0 {
                    errors.push(format!("{at}: injection_period must be >= 1"));
                }
                if *lead_minutes == 0 {
                    errors.push(format!("{at}: lead_minutes must be >= 1"));
                }
                if *sybil_comrades > MAX_SYBILS {
                    errors.push(format!("{at}: sybil_comrades must be <= {MAX_SYBILS}"));
                }
            }
            AdversarySpec::ChallengeFlood {
                victim,
                spread_minutes,
                count,
                ..
            } => {
                if *victim >= clients {
                    errors.push(format!("{at}: victim {victim} does not exist ({clients} clients)"));
                }
                if *spread_minutes == 0 {
                    errors.push(format!("{at}: spread_minutes must be >= 1"));
                }
                if *count > MAX_FLOOD {
                    errors.push(format!("{at}: count must be <= {MAX_FLOOD}"));
                }
            }
            AdversarySpec::MitmForwarder { .. } => {}
            AdversarySpec::SybilFlood {
                identity_count, period, ..
            } => {
                if *identity_count == 0 || *identity_count > MAX_SYBILS {
                    errors.push(format!("{at}: identity_count must be in [1, {MAX_SYBILS}]"));
                }
                if *period == 0 {
                    errors.push(format!("{at}: period must be >= 1"));
                }
            }
        }
    }
}

const MAX_SYBILS: usize = 100_000;
const MAX_FLOOD: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    /// Run length in minutes.
    pub duration: u64,
    /// Absolute simulation minute of the first step.
    #[serde(default)]
    pub epoch_start: u64,
    pub clients: Vec<ClientSpec>,
    #[serde(default)]
    pub target_sites: Vec<TargetSite>,
    #[serde(default)]
    pub spam_injections: Vec<SpamInjection>,
    #[serde(default)]
    pub redirect_map: RedirectMap,
    #[serde(default)]
    pub whitelist: Vec<String>,
    #[serde(default)]
    pub confirm: ConfirmPolicy,
    #[serde(default)]
    pub adversaries: Vec<AdversarySpec>,
    /// Opt-out requests per minute per launched comrade.
    #[serde(default = "default_opt_out_rate")]
    pub opt_out_rate: u64,
    /// Minutes a launched client keeps sending opt-outs.
    #[serde(default = "default_campaign_duration")]
    pub campaign_duration: u64,
    /// Challenge-response between comrades.
    #[serde(default = "default_true")]
    pub verification: bool,
    #[serde(default)]
    pub dht_latency: u64,
    /// Record lifetime in the DHT; defaults to the largest max_wait + 1440.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dht_ttl: Option<u32>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn client_count(&self) -> usize {
        self.clients.iter().map(|c| c.count).sum()
    }

    /// One `ClientSpec` per simulated client.
    pub fn expanded_clients(&self) -> Vec<&ClientSpec> {
        self.clients
            .iter()
            .flat_map(|c| std::iter::repeat_n(c, c.count))
            .collect()
    }

    pub fn max_wait(&self) -> u64 {
        self.clients.iter().map(|c| c.config.max_wait).max().unwrap_or(0)
    }

    pub fn effective_dht_ttl(&self) -> u32 {
        self.dht_ttl
            .unwrap_or_else(|| u32::try_from(self.max_wait() + 1440).unwrap_or(u32::MAX))
    }

    /// Errors make the scenario unrunnable; the returned warnings do not.
    pub fn validate(&self) -> Result<Vec<String>, ScenarioError> {
        let mut errors = Vec::new();
        let mut warnings = Vec::new();
        if self.duration == 0 {
            errors.push("duration must be > 0".to_string());
        }
        if self.clients.is_empty() {
            errors.push("clients must not be empty".to_string());
        }
        for (i, c) in self.clients.iter().enumerate() {
            if c.count == 0 {
                errors.push(format!("clients[{i}].count must be >= 1"));
            }
            if let Err(e) = c.config.validate() {
                errors.push(format!("clients[{i}].config: {e}"));
            }
            if let Err(e) = c.trust.validate() {
                errors.push(format!("clients[{i}]: {e}"));
            }
        }
        let total = self.client_count();
        if self.duration < self.max_wait() {
            warnings.push(format!(
                "duration ({}) is shorter than the largest max_wait ({}); late campaigns will not start within the run",
                self.duration,
                self.max_wait()
            ));
        }
        let mut seen_sites = std::collections::BTreeSet::new();
        for (i, s) in self.target_sites.iter().enumerate() {
            if let Err(e) = s.validate() {
                errors.push(format!("target_sites[{i}]: {e}"));
            }
            if !seen_sites.insert(s.url.clone()) {
                errors.push(format!("target_sites[{i}]: duplicate url {}", s.url));
            }
        }
        for (i, inj) in self.spam_injections.iter().enumerate() {
            match &inj.clients {
                ClientSelector::All => {}
                ClientSelector::Range { from, to } => {
                    if from >= to || *to > total {
                        errors.push(format!(
                            "spam_injections[{i}].clients: range [{from}, {to}) must be non-empty and within {total} clients"
                        ));
                    }
                }
                ClientSelector::List(ids) => {
                    if let Some(bad) = ids.iter().find(|&&id| id >= total) {
                        errors.push(format!(
                            "spam_injections[{i}].clients: client {bad} does not exist ({total} clients)"
                        ));
                    }
                }
            }
            if inj.minute >= self.duration && self.duration > 0 {
                warnings.push(format!("spam_injections[{i}] is scheduled after the run ends"));
            }
        }
        for (i, a) in self.adversaries.iter().enumerate() {
            a.validate(i, total, &mut errors);
        }
        if errors.is_empty() {
            Ok(warnings)
        } else {
            Err(ScenarioError::Invalid(errors))
        }
    }
}
