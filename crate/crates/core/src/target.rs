//! Turns a spam email into the canonical URLs of the advertised websites.
//!
//! Pipeline: extract → unwrap redirectors → canonicalize → drop
//! whitelisted hosts → user confirmation. Each surviving URL starts one
//! coordinator run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TargetError {
    #[error("invalid url {0:?}: {1}")]
    InvalidUrl(String, String),
    #[error("redirect loop at {0:?}")]
    RedirectLoop(String),
    #[error("max_depth must be at least 1")]
    InvalidDepth,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmailDocument {
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footer_hint: Option<String>,
}

impl EmailDocument {
    pub fn new(body: impl Into<String>) -> Self {
        Self {
            body: body.into(),
            footer_hint: None,
        }
    }
}

/// An http(s) URL reduced to the parts that identify a website: no query,
/// fragment, userinfo or default port, and no trailing slash except for the
/// root path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalUrl {
    scheme: String,
    host: String,
    port: Option<u16>,
    path: String,
}

impl CanonicalUrl {
    pub fn scheme(&self) -> &str {
        &self.scheme
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn port(&self) -> Option<u16> {
        self.port
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for CanonicalUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}://{}", self.scheme, self.host)?;
        if let Some(port) = self.port {
            write!(f, ":{port}")?;
        }
        f.write_str(&self.path)
    }
}

impl FromStr for CanonicalUrl {
    type Err = TargetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        canonicalize(s)
    }
}

impl Serialize for CanonicalUrl {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CanonicalUrl {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        canonicalize(&raw).map_err(serde::de::Error::custom)
    }
}

pub fn canonicalize(raw: &str) -> Result<CanonicalUrl, TargetError> {
    let invalid = |why: &str| TargetError::InvalidUrl(raw.to_string(), why.to_string());
    let parsed = Url::parse(raw.trim()).map_err(|e| invalid(&e.to_string()))?;
    let scheme = parsed.scheme().to_ascii_lowercase();
    if scheme != "http" && scheme != "https" {
        return Err(invalid("scheme must be http or https"));
    }
    let host = match parsed.host_str() {
        Some(h) if !h.is_empty() => h.trim_end_matches('.').to_ascii_lowercase(),
        _ => return Err(invalid("missing host")),
    };
    if host.is_empty() {
        return Err(invalid("missing host"));
    }
    // `Url::port` already hides the scheme's default port.
    let port = parsed.port();
    let trimmed = parsed.path().trim_end_matches('/');
    let path = if trimmed.is_empty() {
        "/".to_string()
    } else {
        trimmed.to_string()
    };
    Ok(CanonicalUrl {
        scheme,
        host,
        port,
        path,
    })
}

fn url_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?i)\bhttps?://[^\s<>"'`()\[\]{}|\\^]+"#).expect("url regex"))
}

const TRAILING_PUNCTUATION: &[char] = &['.', ',', '!', ';'];

/// All http(s) URLs in the body and footer, in order of appearance,
/// deduplicated, with trailing sentence punctuation removed.
pub fn extract_urls(mail: &EmailDocument) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let texts = std::iter::once(mail.body.as_str()).chain(mail.footer_hint.as_deref());
    for text in texts {
        for m in url_pattern().find_iter(text) {
            let candidate = m.as_str().trim_end_matches(TRAILING_PUNCTUATION);
            if candidate.split_once("://").is_none_or(|(_, rest)| rest.is_empty()) {
                continue;
            }
            if seen.insert(candidate.to_string()) {
                out.push(candidate.to_string());
            }
        }
    }
    out
}

/// Short-URL → destination table standing in for live redirector lookups.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RedirectMap {
    pub mapping: BTreeMap<String, String>,
}

impl RedirectMap {
    pub fn insert(&mut self, from: impl Into<String>, to: impl Into<String>) {
        self.mapping.insert(from.into(), to.into());
    }

    fn lookup(&self, url: &str) -> Option<&String> {
        self.mapping
            .get(url)
            .or_else(|| self.mapping.get(url.trim_end_matches('/')))
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for RedirectMap {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Self {
            mapping: iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }
}

pub fn unwrap_redirects(url: &str, map: &RedirectMap, max_depth: u8) -> Result<String, TargetError> {
    if max_depth == 0 {
        return Err(TargetError::InvalidDepth);
    }
    let mut current = url.to_string();
    let mut visited = BTreeSet::from([current.clone()]);
    for _ in 0..max_depth {
        let Some(next) = map.lookup(&current) else {
            break;
        };
        if !visited.insert(next.clone()) {
            return Err(TargetError::RedirectLoop(next.clone()));
        }
        current = next.clone();
    }
    Ok(current)
}

/// Host suffixes that must never become campaign targets. A suffix matches
/// the host itself and any of its subdomains.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Whitelist {
    suffixes: BTreeSet<String>,
}

impl Whitelist {
    pub fn new<I, S>(hosts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            suffixes: hosts
                .into_iter()
                .map(|h| normalize_suffix(h.as_ref()))
                .filter(|h| !h.is_empty())
                .collect(),
        }
    }

    /// One host suffix per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        Self::new(text.lines().map(|line| match line.find('#') {
            Some(i) => &line[..i],
            None => line,
        }))
    }

    pub fn contains(&self, host: &str) -> bool {
        let host = host.trim_end_matches('.').to_ascii_lowercase();
        self.suffixes.iter().any(|suffix| {
            host == *suffix
                || (host.len() > suffix.len()
                    && host.ends_with(suffix.as_str())
                    && host.as_bytes()[host.len() - suffix.len() - 1] == b'.')
        })
    }

    pub fn len(&self) -> usize {
        self.suffixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.suffixes.is_empty()
    }
}

fn normalize_suffix(raw: &str) -> String {
    raw.trim().trim_start_matches('.').trim_end_matches('.').to_ascii_lowercase()
}

/// The user's final say on whether a URL becomes a target.
pub trait Confirm {
    fn confirm(&self, url: &CanonicalUrl) -> bool;
}

impl<F: Fn(&CanonicalUrl) -> bool> Confirm for F {
    fn confirm(&self, url: &CanonicalUrl) -> bool {
        self(url)
    }
}

/// Declarative confirmation policy used by scenarios.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "hosts")]
pub enum ConfirmPolicy {
    #[default]
    AcceptAll,
    RejectAll,
    RejectHosts(Vec<String>),
}

impl Confirm for ConfirmPolicy {
    fn confirm(&self, url: &CanonicalUrl) -> bool {
        match self {
            ConfirmPolicy::AcceptAll => true,
            ConfirmPolicy::RejectAll => false,
            ConfirmPolicy::RejectHosts(hosts) => !Whitelist::new(hosts).contains(url.host()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    RedirectLoop,
    InvalidUrl,
    Whitelisted,
    Rejected,
    Duplicate,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Evaluation {
    pub targets: Vec<CanonicalUrl>,
    pub dropped: Vec<(String, DropReason)>,
}

pub const DEFAULT_MAX_REDIRECT_DEPTH: u8 = 8;

pub fn evaluate(mail: &EmailDocument, map: &RedirectMap, whitelist: &Whitelist, confirm: &dyn Confirm) -> Evaluation {
    evaluate_with_depth(mail, map, whitelist, confirm, DEFAULT_MAX_REDIRECT_DEPTH)
}

pub fn evaluate_with_depth(
    mail: &EmailDocument,
    map: &RedirectMap,
    whitelist: &Whitelist,
    confirm: &dyn Confirm,
    max_depth: u8,
) -> Evaluation {
    let mut eval = Evaluation::default();
    for raw in extract_urls(mail) {
        let resolved = match unwrap_redirects(&raw, map, max_depth) {
            Ok(u) => u,
            Err(e) => {
                log::debug!("dropping {raw}: {e}");
                eval.dropped.push((raw, DropReason::RedirectLoop));
                continue;
            }
        };
        let canonical = match canonicalize(&resolved) {
            Ok(c) => c,
            Err(e) => {
                log::debug!("dropping {raw}: {e}");
                eval.dropped.push((raw, DropReason::InvalidUrl));
                continue;
            }
        };
        let reason = if whitelist.contains(canonical.host()) {
            Some(DropReason::Whitelisted)
        } else if eval.targets.contains(&canonical) {
            Some(DropReason::Duplicate)
        } else if !confirm.confirm(&canonical) {
            Some(DropReason::Rejected)
        } else {
            None
        };
        match reason {
            Some(reason) => eval.dropped.push((raw, reason)),
            None => eval.targets.push(canonical),
        }
    }
    eval
}
