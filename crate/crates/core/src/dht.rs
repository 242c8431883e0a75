//! PUT/GET multimap DHT abstraction and an in-process simulated backend.
//!
//! Only hashed keys ever reach the store; the logical keys (URLs, start
//! times, public keys) are hashed by [`derive_key`] and then discarded.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::crypto::hash20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DhtError {
    #[error("logical key is empty")]
    EmptyKey,
    #[error("value is empty")]
    EmptyValue,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DhtKey([u8; 20]);

impl DhtKey {
    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }
}

impl fmt::Debug for DhtKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DhtKey({})", hex::encode(self.0))
    }
}

/// First 20 bytes of SHA-256 over the logical key.
pub fn derive_key(logical_key: &[u8]) -> Result<DhtKey, DhtError> {
    if logical_key.is_empty() {
        return Err(DhtError::EmptyKey);
    }
    Ok(DhtKey(hash20(logical_key)))
}

/// Campaign Table: logical key is the canonical URL.
pub fn campaign_table_key(url: &str) -> Result<DhtKey, DhtError> {
    derive_key(url.as_bytes())
}

/// Comrades Table: logical key is `<decimal epoch-minutes>|<canonical URL>`.
pub fn comrades_table_key(start: u64, url: &str) -> Result<DhtKey, DhtError> {
    derive_key(format!("{start}|{url}").as_bytes())
}

/// Inbox: logical key is the raw public key.
pub fn inbox_key(public_key: &[u8]) -> Result<DhtKey, DhtError> {
    derive_key(public_key)
}

/// The only two verbs the coordination protocol needs, plus removal of
/// read inbox messages.
pub trait Dht {
    fn put(&mut self, key: DhtKey, value: &[u8], now: u64) -> Result<(), DhtError>;
    fn get(&self, key: &DhtKey, now: u64) -> Vec<Vec<u8>>;
    fn remove(&mut self, key: &DhtKey, value: &[u8]);
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DhtRecord {
    pub value: Vec<u8>,
    pub stored_at: u64,
    pub ttl_minutes: u32,
}

impl DhtRecord {
    fn visible(&self, now: u64, latency: u64) -> bool {
        let from = self.stored_at.saturating_add(latency);
        let until = self.stored_at.saturating_add(u64::from(self.ttl_minutes));
        now >= from && now <= until
    }
}

/// Single authoritative store. Values under one key have set semantics;
/// `get` returns them in first-insertion order.
#[derive(Debug, Clone)]
pub struct SimDht {
    records: BTreeMap<DhtKey, Vec<DhtRecord>>,
    default_ttl: u32,
    latency: u64,
    stats: DhtStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DhtStats {
    pub puts: u64,
    pub removes: u64,
}

impl SimDht {
    pub fn new(default_ttl: u32) -> Self {
        Self {
            records: BTreeMap::new(),
            default_ttl,
            latency: 0,
            stats: DhtStats::default(),
        }
    }

    /// Writes become visible `latency` minutes after they are stored.
    pub fn with_latency(mut self, latency: u64) -> Self {
        self.latency = latency;
        self
    }

    pub fn default_ttl(&self) -> u32 {
        self.default_ttl
    }

    pub fn put_with_ttl(&mut self, key: DhtKey, value: &[u8], now: u64, ttl_minutes: u32) -> Result<(), DhtError> {
        if value.is_empty() {
            return Err(DhtError::EmptyValue);
        }
        self.stats.puts += 1;
        let bucket = self.records.entry(key).or_default();
        match bucket.iter_mut().find(|r| r.value == value) {
            // Re-put extends the lifetime without resetting visibility.
            Some(existing) => {
                let extended = now.saturating_sub(existing.stored_at) + u64::from(ttl_minutes);
                existing.ttl_minutes = existing.ttl_minutes.max(u32::try_from(extended).unwrap_or(u32::MAX));
            }
            None => bucket.push(DhtRecord {
                value: value.to_vec(),
                stored_at: now,
                ttl_minutes,
            }),
        }
        Ok(())
    }

    /// Drops every expired record.
    pub fn purge_expired(&mut self, now: u64) {
        self.records.retain(|_, bucket| {
            bucket.retain(|r| now <= r.stored_at.saturating_add(u64::from(r.ttl_minutes)));
            !bucket.is_empty()
        });
    }

    pub fn key_count(&self) -> usize {
        self.records.len()
    }

    pub fn stats(&self) -> DhtStats {
        self.stats
    }
}

impl Default for SimDht {
    fn default() -> Self {
        Self::new(u32::MAX)
    }
}

impl Dht for SimDht {
    fn put(&mut self, key: DhtKey, value: &[u8], now: u64) -> Result<(), DhtError> {
        self.put_with_ttl(key, value, now, self.default_ttl)
    }

    fn get(&self, key: &DhtKey, now: u64) -> Vec<Vec<u8>> {
        self.records
            .get(key)
            .map(|bucket| {
                bucket
                    .iter()
                    .filter(|r| r.visible(now, self.latency))
                    .map(|r| r.value.clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    fn remove(&mut self, key: &DhtKey, value: &[u8]) {
        self.stats.removes += 1;
        if let Some(bucket) = self.records.get_mut(key) {
            bucket.retain(|r| r.value != value);
            if bucket.is_empty() {
                self.records.remove(key);
            }
        }
    }
}
