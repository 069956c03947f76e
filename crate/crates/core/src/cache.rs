//! Bounded result cache ranked by exponentially smoothed hit frequency.
//!
//! Time is a logical query counter. Each key carries an [`EstimationRecord`]
//! updated by [`mses_update`] whenever the key is requested, hit or miss.
//! Under [`Policy::Mses`] the cache keeps the `capacity` entries with the
//! largest decayed estimate `E·(1−α)^(now − last_hit)`; records of evicted
//! keys stay in a ledger bounded by `ledger_capacity`. [`Policy::Lru`] keeps
//! the most recently used entries instead.
//!
//! Decayed estimates are compared in the log domain,
//! `ln E + (now − last_hit)·ln(1−α)`, which orders keys identically and
//! cannot underflow.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use crate::query::CanonicalKey;
use crate::Scalar;

pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_MAX_ENTRY_BYTES: usize = 4 * 1024 * 1024;

/// Bytes charged per ledger record on top of its key text.
const RECORD_OVERHEAD: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CacheError {
    #[error("logical time {now} is not after the last hit at {last_hit}")]
    NonMonotonicTime { now: u64, last_hit: u64 },
    #[error("entry of {size} bytes exceeds the {max} byte limit")]
    OversizedEntry { size: usize, max: usize },
    #[error("invalid cache configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    Mses,
    Lru,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Mses => "mses",
            Policy::Lru => "lru",
        })
    }
}

impl std::str::FromStr for Policy {
    type Err = CacheError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mses" => Ok(Policy::Mses),
            "lru" => Ok(Policy::Lru),
            other => Err(CacheError::InvalidConfig(format!("unknown policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachePolicyConfig {
    pub alpha: f64,
    pub capacity: usize,
    pub ledger_capacity: usize,
    pub policy: Policy,
    pub max_entry_bytes: usize,
}

impl CachePolicyConfig {
    /// MSES with the default α, a ledger four times the capacity and the
    /// default entry size limit.
    pub fn new(capacity: usize) -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            capacity,
            ledger_capacity: capacity.saturating_mul(4),
            policy: Policy::Mses,
            max_entry_bytes: DEFAULT_MAX_ENTRY_BYTES,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_policy(mut self, policy: Policy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_ledger_capacity(mut self, r: usize) -> Self {
        self.ledger_capacity = r;
        self
    }

    pub fn with_max_entry_bytes(mut self, max: usize) -> Self {
        self.max_entry_bytes = max;
        self
    }

    pub fn validate(&self) -> Result<(), CacheError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CacheError::InvalidConfig(format!("alpha {} is not in (0, 1)", self.alpha)));
        }
        if self.capacity == 0 {
            return Err(CacheError::InvalidConfig("capacity must be at least 1".into()));
        }
        if self.ledger_capacity < self.capacity {
            return Err(CacheError::InvalidConfig(format!(
                "ledger capacity {} is below cache capacity {}",
                self.ledger_capacity, self.capacity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationRecord<F> {
    pub estimate: F,
    pub last_hit: u64,
}

impl<F: Scalar> EstimationRecord<F> {
    /// `E·(1−α)^(now − last_hit)`.
    pub fn decayed(&self, alpha: F, now: u64) -> F {
        self.estimate * (F::one() - alpha).powf(F::of_usize((now - self.last_hit) as usize))
    }

    /// Natural log of [`decayed`](Self::decayed), computed without forming
    /// the power.
    pub fn log_decayed(&self, alpha: F, now: u64) -> F {
        self.estimate.ln() + F::of_usize((now - self.last_hit) as usize) * (F::one() - alpha).ln()
    }
}

/// One smoothing step: `E = α` for a first hit, otherwise
/// `E = α + E_prev·(1−α)^(now − last_hit)`.
pub fn mses_update<F: Scalar>(
    prev: Option<&EstimationRecord<F>>,
    alpha: F,
    now: u64,
) -> Result<EstimationRecord<F>, CacheError> {
    let estimate = match prev {
        None => alpha,
        Some(p) if now <= p.last_hit => {
            return Err(CacheError::NonMonotonicTime { now, last_hit: p.last_hit })
        }
        Some(p) => alpha + p.decayed(alpha, now),
    };
    Ok(EstimationRecord { estimate, last_hit: now })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Direct,
    Prefetch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub key: CanonicalKey,
    pub result: Arc<[u8]>,
    pub media_type: String,
    pub inserted_at: u64,
    pub origin: Origin,
}

impl CacheEntry {
    pub fn new(key: CanonicalKey, result: impl Into<Arc<[u8]>>, media_type: impl Into<String>, origin: Origin) -> Self {
        Self {
            key,
            result: result.into(),
            media_type: media_type.into(),
            inserted_at: 0,
            origin,
        }
    }

    /// Result length plus key length.
    pub fn size_bytes(&self) -> usize {
        self.result.len() + self.key.as_str().len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CacheStats {
    pub entry_count: usize,
    pub cached_bytes: usize,
    pub ledger_bytes: usize,
    pub ledger_records: usize,
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
    pub evictions: u64,
    pub prefetch_inserts: u64,
}

/// Ascending eviction order: log score, then last hit, then key.
#[derive(Debug, Clone)]
struct Rank<F> {
    score: F,
    last_hit: u64,
    key: String,
}

impl<F: Scalar> PartialEq for Rank<F> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl<F: Scalar> Eq for Rank<F> {}
impl<F: Scalar> PartialOrd for Rank<F> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<F: Scalar> Ord for Rank<F> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.score
            .cmp_total(&other.score)
            .then(self.last_hit.cmp(&other.last_hit))
            .then_with(|| self.key.cmp(&other.key))
    }
}

#[derive(Debug, Clone)]
struct Slot<F> {
    record: EstimationRecord<F>,
    score: F,
}

/// Single-threaded cache store; see [`SharedCache`] for the locked wrapper.
#[derive(Debug, Clone)]
pub struct CacheStore<F> {
    config: CachePolicyConfig,
    alpha: F,
    log_keep: F,
    now: u64,
    entries: HashMap<String, CacheEntry>,
    records: HashMap<String, Slot<F>>,
    cached_rank: BTreeSet<Rank<F>>,
    ledger_rank: BTreeSet<Rank<F>>,
    recency: BTreeMap<u64, String>,
    recency_of: HashMap<String, u64>,
    next_seq: u64,
    cached_bytes: usize,
    ledger_bytes: usize,
    hits: u64,
    misses: u64,
    evictions: u64,
    prefetch_inserts: u64,
}

impl<F: Scalar> CacheStore<F> {
    pub fn new(config: CachePolicyConfig) -> Result<Self, CacheError> {
        config.validate()?;
        let alpha = F::from_f64_lossy(config.alpha);
        Ok(Self {
            alpha,
            log_keep: (F::one() - alpha).ln(),
            config,
            now: 0,
            entries: HashMap::new(),
            records: HashMap::new(),
            cached_rank: BTreeSet::new(),
            ledger_rank: BTreeSet::new(),
            recency: BTreeMap::new(),
            recency_of: HashMap::new(),
            next_seq: 0,
            cached_bytes: 0,
            ledger_bytes: 0,
            hits: 0,
            misses: 0,
            evictions: 0,
            prefetch_inserts: 0,
        })
    }

    pub fn config(&self) -> &CachePolicyConfig {
        &self.config
    }

    /// The latest logical time seen by any operation.
    pub fn now(&self) -> u64 {
        self.now
    }

    /// Advances the logical clock by one query and returns the new time.
    pub fn tick(&mut self) -> u64 {
        self.now += 1;
        self.now
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &CanonicalKey) -> bool {
        self.entries.contains_key(key.as_str())
    }

    pub fn get(&self, key: &CanonicalKey) -> Option<&CacheEntry> {
        self.entries.get(key.as_str())
    }

    pub fn record(&self, key: &CanonicalKey) -> Option<EstimationRecord<F>> {
        self.records.get(key.as_str()).map(|s| s.record)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn records(&self) -> impl Iterator<Item = (&str, EstimationRecord<F>)> {
        self.records.iter().map(|(k, s)| (k.as_str(), s.record))
    }

    /// Registers a request for `key` at `now`. Updates its estimate (skipped
    /// when `now` is not after the last hit) and returns the entry if cached.
    pub fn lookup(&mut self, key: &CanonicalKey, now: u64) -> Option<CacheEntry> {
        self.now = self.now.max(now);
        self.touch_record(key.as_str(), now);
        self.trim_ledger();
        match self.entries.get(key.as_str()) {
            Some(entry) => {
                self.hits += 1;
                let entry = entry.clone();
                self.touch_recency(key.as_str());
                Some(entry)
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    /// Adds or replaces an entry and returns the keys evicted to respect the
    /// capacity, possibly including the inserted key itself.
    pub fn insert(&mut self, mut entry: CacheEntry, now: u64) -> Result<Vec<CanonicalKey>, CacheError> {
        let size = entry.size_bytes();
        if size > self.config.max_entry_bytes {
            return Err(CacheError::OversizedEntry { size, max: self.config.max_entry_bytes });
        }
        self.now = self.now.max(now);
        entry.inserted_at = now;
        let key = entry.key.as_str().to_string();
        if entry.origin == Origin::Prefetch {
            self.prefetch_inserts += 1;
        }
        self.touch_record(&key, now);

        if let Some(old) = self.entries.remove(&key) {
            self.cached_bytes -= old.size_bytes();
        } else {
            let slot = &self.records[&key];
            let rank = self.rank(&key, slot);
            self.ledger_rank.remove(&rank);
            self.cached_rank.insert(rank);
        }
        self.cached_bytes += size;
        self.entries.insert(key.clone(), entry);
        self.touch_recency(&key);

        let mut evicted = Vec::new();
        while self.entries.len() > self.config.capacity {
            let victim = match self.config.policy {
                Policy::Mses => self.mses_victim(),
                Policy::Lru => self.recency.values().next().cloned().expect("non-empty"),
            };
            tracing::debug!(
                key = victim.as_str(),
                log_estimate = ?self.records.get(&victim).map(|s| s.record.log_decayed(self.alpha, self.now)),
                reason = "capacity",
                policy = %self.config.policy,
                "evicting cache entry"
            );
            self.evict(&victim);
            evicted.push(CanonicalKey(victim));
        }
        self.trim_ledger();
        Ok(evicted)
    }

    /// Drops every entry and record. Counters are reset unless `keep_counters`.
    pub fn flush(&mut self, keep_counters: bool) {
        self.entries.clear();
        self.records.clear();
        self.cached_rank.clear();
        self.ledger_rank.clear();
        self.recency.clear();
        self.recency_of.clear();
        self.cached_bytes = 0;
        self.ledger_bytes = 0;
        if !keep_counters {
            self.hits = 0;
            self.misses = 0;
            self.evictions = 0;
            self.prefetch_inserts = 0;
        }
    }

    /// Zeroes hit, miss, eviction and prefetch counters only.
    pub fn reset_counters(&mut self) {
        self.hits = 0;
        self.misses = 0;
        self.evictions = 0;
        self.prefetch_inserts = 0;
    }

    pub fn stats(&self) -> CacheStats {
        let total = self.hits + self.misses;
        CacheStats {
            entry_count: self.entries.len(),
            cached_bytes: self.cached_bytes,
            ledger_bytes: self.ledger_bytes,
            ledger_records: self.records.len(),
            hits: self.hits,
            misses: self.misses,
            hit_rate: if total == 0 { 0.0 } else { self.hits as f64 / total as f64 },
            evictions: self.evictions,
            prefetch_inserts: self.prefetch_inserts,
        }
    }

    fn rank(&self, key: &str, slot: &Slot<F>) -> Rank<F> {
        Rank {
            score: slot.score,
            last_hit: slot.record.last_hit,
            key: key.to_string(),
        }
    }

    /// `ln E − last_hit·ln(1−α)`: the log-decayed estimate minus the
    /// `now·ln(1−α)` term shared by every key.
    fn score(&self, r: &EstimationRecord<F>) -> F {
        r.estimate.ln() - F::of_usize(r.last_hit as usize) * self.log_keep
    }

    fn touch_record(&mut self, key: &str, now: u64) {
        let prev = self.records.get(key).map(|s| s.record);
        if prev.is_some_and(|p| now <= p.last_hit) {
            return;
        }
        let record = mses_update(prev.as_ref(), self.alpha, now).expect("time checked above");
        let cached = self.entries.contains_key(key);
        if let Some(old) = self.records.get(key) {
            let rank = self.rank(key, old);
            if cached {
                self.cached_rank.remove(&rank);
            } else {
                self.ledger_rank.remove(&rank);
            }
        } else {
            self.ledger_bytes += key.len() + RECORD_OVERHEAD;
        }
        let slot = Slot { score: self.score(&record), record };
        let rank = self.rank(key, &slot);
        self.records.insert(key.to_string(), slot);
        if cached {
            self.cached_rank.insert(rank);
        } else {
            self.ledger_rank.insert(rank);
        }
    }

    fn touch_recency(&mut self, key: &str) {
        if let Some(seq) = self.recency_of.remove(key) {
            self.recency.remove(&seq);
        }
        self.next_seq += 1;
        self.recency.insert(self.next_seq, key.to_string());
        self.recency_of.insert(key.to_string(), self.next_seq);
    }

    /// Minimum log-decayed estimate at `now`, then oldest last hit, then key.
    /// The static score order narrows the search to near-minimal candidates,
    /// which are then compared on the exactly recomputed value.
    fn mses_victim(&self) -> String {
        let mut iter = self.cached_rank.iter();
        let first = iter.next().expect("non-empty");
        let tolerance = F::from_f64_lossy(1e-9) * (F::one() + first.score.abs());
        let limit = first.score + tolerance;
        let key_of = |r: &Rank<F>| {
            let value = self.records[&r.key].record.log_decayed(self.alpha, self.now);
            (value, r.last_hit)
        };
        let mut best = first;
        let mut best_key = key_of(first);
        for r in iter.take_while(|r| r.score <= limit) {
            let k = key_of(r);
            let better = k
                .0
                .cmp_total(&best_key.0)
                .then(k.1.cmp(&best_key.1))
                .then_with(|| r.key.cmp(&best.key))
                .is_lt();
            if better {
                best = r;
                best_key = k;
            }
        }
        best.key.clone()
    }

    fn evict(&mut self, key: &str) {
        let entry = self.entries.remove(key).expect("victim is cached");
        self.cached_bytes -= entry.size_bytes();
        if let Some(seq) = self.recency_of.remove(key) {
            self.recency.remove(&seq);
        }
        let slot = &self.records[key];
        let rank = self.rank(key, slot);
        self.cached_rank.remove(&rank);
        self.ledger_rank.insert(rank);
        self.evictions += 1;
    }

    fn trim_ledger(&mut self) {
        while self.records.len() > self.config.ledger_capacity {
            let Some(rank) = self.ledger_rank.pop_first() else { break };
            self.records.remove(&rank.key);
            self.ledger_bytes -= rank.key.len() + RECORD_OVERHEAD;
        }
    }
}

/// A [`CacheStore`] behind a mutex that owns the logical clock.
#[derive(Debug)]
pub struct SharedCache<F> {
    inner: Mutex<CacheStore<F>>,
}

impl<F: Scalar> SharedCache<F> {
    pub fn new(config: CachePolicyConfig) -> Result<Self, CacheError> {
        Ok(Self { inner: Mutex::new(CacheStore::new(config)?) })
    }

    pub fn lock(&self) -> MutexGuard<'_, CacheStore<F>> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Advances the clock by one query and looks the key up at the new time.
    pub fn request(&self, key: &CanonicalKey) -> Option<CacheEntry> {
        let mut store = self.lock();
        let now = store.tick();
        store.lookup(key, now)
    }

    /// Inserts at the current logical time.
    pub fn insert(&self, entry: CacheEntry) -> Result<Vec<CanonicalKey>, CacheError> {
        let mut store = self.lock();
        let now = store.now();
        store.insert(entry, now)
    }

    pub fn contains(&self, key: &CanonicalKey) -> bool {
        self.lock().contains(key)
    }

    pub fn stats(&self) -> CacheStats {
        self.lock().stats()
    }

    pub fn flush(&self, keep_counters: bool) {
        self.lock().flush(keep_counters)
    }

    pub fn reset_counters(&self) {
        self.lock().reset_counters()
    }
}
