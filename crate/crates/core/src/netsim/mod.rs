//! Deterministic simulation of regional mobile links and per-region
//! provider selection.
//!
//! All time is virtual and integral (nanoseconds internally, milliseconds at
//! the API). Every random draw comes from [`SplitMix64`] streams derived from
//! the caller's seed, so identical inputs give identical outputs.

mod scenario;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backoff::Backoff;
use crate::rng::{derive_seed, mix, SplitMix64};
use crate::transport::{Direction, LinkModel, Transmission};

pub use scenario::{
    canonical_scenario, run_scenario, ProfileEntry, RegionReport, Scenario, ScenarioReport, Strategy, StrategyOutcome,
    WorkItem,
};

/// Payload bytes per simulated link frame.
pub const FRAME_BYTES: usize = 1200;
pub const PROBE_BYTES: usize = 64 * 1024;
pub const PROBE_COUNT: usize = 3;
pub const PROBE_RETRIES: u32 = 8;

const NS_PER_MS: u64 = 1_000_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NetsimError {
    #[error("invalid {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("no link profile for region {region:?} and provider {provider:?}")]
    MissingProfile { region: String, provider: String },
    #[error("unknown provider {0:?}")]
    UnknownProvider(String),
}

pub(crate) fn config_err(field: impl Into<String>, reason: impl Into<String>) -> NetsimError {
    NetsimError::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkProfile {
    pub bandwidth_bps: u64,
    pub latency_ms: u64,
    pub loss: f64,
    /// `[start_ms, end_ms)` windows during which nothing gets through.
    #[serde(default)]
    pub blackholes: Vec<(u64, u64)>,
}

impl LinkProfile {
    pub fn new(bandwidth_bps: u64, latency_ms: u64, loss: f64) -> Self {
        Self {
            bandwidth_bps,
            latency_ms,
            loss,
            blackholes: Vec::new(),
        }
    }

    pub fn with_blackhole(mut self, start_ms: u64, end_ms: u64) -> Self {
        self.blackholes.push((start_ms, end_ms));
        self
    }

    pub fn validate(&self) -> Result<(), NetsimError> {
        if self.bandwidth_bps == 0 {
            return Err(config_err("bandwidth_bps", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(config_err("loss", format!("{} is outside [0, 1]", self.loss)));
        }
        let mut windows = self.blackholes.clone();
        windows.sort_unstable();
        for (i, &(s, e)) in windows.iter().enumerate() {
            if s >= e {
                return Err(config_err("blackholes", format!("window [{s}, {e}) is empty")));
            }
            if i > 0 && s < windows[i - 1].1 {
                return Err(config_err("blackholes", "windows overlap"));
            }
        }
        Ok(())
    }

    pub fn in_blackhole(&self, t_ms: u64) -> bool {
        self.blackholes.iter().any(|&(s, e)| s <= t_ms && t_ms < e)
    }

    /// Serialization time of `bytes`, rounded up to whole nanoseconds.
    pub fn serialization_ns(&self, bytes: usize) -> u64 {
        let bits = bytes as u128 * 8 * 1_000_000_000;
        bits.div_ceil(self.bandwidth_bps as u128) as u64
    }

    fn latency_ns(&self) -> u64 {
        self.latency_ms * NS_PER_MS
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferResult {
    pub delivered: bool,
    pub elapsed_ms: f64,
    pub frames_sent: u64,
    pub frames_delivered: u64,
    pub frames_lost: u64,
}

/// Push `bytes` over `link` starting at `start_ms`, stop-and-wait, one
/// 1200-byte frame at a time.
///
/// Each attempt costs the frame's serialization time plus the one-way
/// latency. A lost frame is resent after a backoff delay, up to
/// `max_retries` times; if it is still lost the transfer gives up. Attempt
/// `j` of frame `k` always uses the same loss and jitter draws for a given
/// seed, so raising `loss` can only add attempts.
pub fn simulate_transfer(
    link: &LinkProfile,
    bytes: usize,
    start_ms: u64,
    seed: u64,
    max_retries: u32,
) -> TransferResult {
    let backoff = Backoff::default();
    let start = start_ms * NS_PER_MS;
    let mut t = start;
    let mut res = TransferResult {
        delivered: bytes > 0,
        elapsed_ms: 0.0,
        frames_sent: 0,
        frames_delivered: 0,
        frames_lost: 0,
    };
    let frames = bytes.div_ceil(FRAME_BYTES);
    'frames: for k in 0..frames {
        let size = FRAME_BYTES.min(bytes - k * FRAME_BYTES);
        let cost = link.serialization_ns(size) + link.latency_ns();
        let mut rng = SplitMix64::new(seed ^ mix(k as u64 + 1));
        for attempt in 0..=max_retries {
            let (u, v) = (rng.next_f64(), rng.next_f64());
            let lost = link.in_blackhole(t / NS_PER_MS) || u < link.loss;
            res.frames_sent += 1;
            t += cost;
            if !lost {
                res.frames_delivered += 1;
                continue 'frames;
            }
            res.frames_lost += 1;
            if attempt < max_retries {
                t += backoff.delay_from_unit(attempt + 1, v) * NS_PER_MS;
            }
        }
        res.delivered = false;
        break;
    }
    res.elapsed_ms = (t - start) as f64 / NS_PER_MS as f64;
    res
}

pub type Profiles = BTreeMap<(String, String), LinkProfile>;

fn profile<'a>(profiles: &'a Profiles, region: &str, provider: &str) -> Result<&'a LinkProfile, NetsimError> {
    profiles
        .get(&(region.to_owned(), provider.to_owned()))
        .ok_or_else(|| NetsimError::MissingProfile {
            region: region.into(),
            provider: provider.into(),
        })
}

/// Estimated throughput of `provider` in `region` from three 64 KiB probe
/// transfers at t = 0: delivered payload bits over total elapsed seconds.
pub fn probe_provider(profiles: &Profiles, region: &str, provider: &str, seed: u64) -> Result<f64, NetsimError> {
    let link = profile(profiles, region, provider)?;
    let (mut bits, mut ns) = (0u64, 0f64);
    for i in 0..PROBE_COUNT {
        let s = derive_seed(seed, &format!("probe/{region}/{provider}/{i}"));
        let r = simulate_transfer(link, PROBE_BYTES, 0, s, PROBE_RETRIES);
        if r.delivered {
            bits += PROBE_BYTES as u64 * 8;
        }
        ns += r.elapsed_ms * NS_PER_MS as f64;
    }
    if bits == 0 || ns == 0.0 {
        return Ok(0.0);
    }
    Ok(bits as f64 / (ns / 1e9))
}

/// The provider with the highest estimate; ties go to the smallest id.
pub fn pick_best(estimates: &BTreeMap<String, f64>) -> Option<&str> {
    let mut best: Option<(&str, f64)> = None;
    for (p, &e) in estimates {
        if best.is_none_or(|(_, b)| e > b) {
            best = Some((p, e));
        }
    }
    best.map(|(p, _)| p)
}

/// Which provider each region uses under `strategy`, and the probe table
/// behind that choice (empty for a single-provider strategy).
pub fn select_providers(
    profiles: &Profiles,
    regions: &[String],
    providers: &[String],
    seed: u64,
    strategy: &Strategy,
) -> Result<BTreeMap<String, String>, NetsimError> {
    if regions.is_empty() || providers.is_empty() {
        return Err(config_err("regions/providers", "must be non-empty"));
    }
    match strategy {
        Strategy::SingleProvider(p) => {
            if !providers.contains(p) {
                return Err(NetsimError::UnknownProvider(p.clone()));
            }
            Ok(regions.iter().map(|r| (r.clone(), p.clone())).collect())
        }
        Strategy::PerRegionBest => {
            let table = probe_table(profiles, regions, providers, seed)?;
            Ok(select_from_estimates(&table))
        }
    }
}

/// Probe estimates for every (region, provider) pair.
pub fn probe_table(
    profiles: &Profiles,
    regions: &[String],
    providers: &[String],
    seed: u64,
) -> Result<BTreeMap<String, BTreeMap<String, f64>>, NetsimError> {
    regions
        .iter()
        .map(|r| {
            let row = providers
                .iter()
                .map(|p| Ok((p.clone(), probe_provider(profiles, r, p, seed)?)))
                .collect::<Result<BTreeMap<_, _>, NetsimError>>()?;
            Ok((r.clone(), row))
        })
        .collect()
}

pub fn select_from_estimates(table: &BTreeMap<String, BTreeMap<String, f64>>) -> BTreeMap<String, String> {
    table
        .iter()
        .filter_map(|(r, row)| pick_best(row).map(|p| (r.clone(), p.to_owned())))
        .collect()
}

/// A [`LinkProfile`] as a wire for [`crate::transport::MemTransport`]:
/// serialization at the link bandwidth, fixed latency, independent loss per
/// protocol frame, and total loss for frames that start inside a blackhole.
#[derive(Debug)]
pub struct ProfileLink {
    profile: LinkProfile,
    rng: SplitMix64,
}

impl ProfileLink {
    pub fn new(profile: LinkProfile, seed: u64) -> Self {
        Self {
            profile,
            rng: SplitMix64::new(seed),
        }
    }
}

impl LinkModel for ProfileLink {
    fn transmit(&mut self, _dir: Direction, ready_ns: u64, frame: &[u8]) -> Transmission {
        let sent_ns = ready_ns + self.profile.serialization_ns(frame.len());
        let lost = self.profile.in_blackhole(ready_ns / NS_PER_MS) | (self.rng.next_f64() < self.profile.loss);
        Transmission {
            sent_ns,
            arrival_ns: (!lost).then_some(sent_ns + self.profile.latency_ns()),
        }
    }
}
