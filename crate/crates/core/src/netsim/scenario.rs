use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{config_err, probe_table, select_from_estimates, LinkProfile, NetsimError, ProfileLink, Profiles};
use crate::backoff::Backoff;
use crate::hash::sha256_hex;
use crate::middleware::{CoreEvent, CoreStub, Middleware};
use crate::records::{ApplicationRecord, DocumentKind, DocumentRef, Status};
use crate::rng::{derive_seed, SplitMix64};
use crate::syncq::{status_pull, sync_session, MemStorage, Queue, SyncConfig};
use crate::transport::{MemTransport, Transport};

pub const DEFAULT_HORIZON_MS: u64 = 3_600_000;
const STATUS_TRIES: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    SingleProvider(String),
    PerRegionBest,
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::SingleProvider(p) => format!("single-provider:{p}"),
            Strategy::PerRegionBest => "per-region-best".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileEntry {
    pub region: String,
    pub provider: String,
    pub link: LinkProfile,
}

/// One application to upload: a record manifest of about `record_bytes`
/// and one document per entry of `document_bytes`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkItem {
    pub record_bytes: usize,
    pub document_bytes: Vec<usize>,
}

fn default_horizon() -> u64 {
    DEFAULT_HORIZON_MS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub regions: Vec<String>,
    pub providers: Vec<String>,
    pub profiles: Vec<ProfileEntry>,
    pub workload: BTreeMap<String, Vec<WorkItem>>,
    pub strategy: Strategy,
    /// No new sync session starts after this simulated time.
    #[serde(default = "default_horizon")]
    pub horizon_ms: u64,
}

impl Scenario {
    /// Parse and validate a scenario file. Errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self, NetsimError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "scenario".to_owned() } else { path };
            config_err(field, e.into_inner().to_string())
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), NetsimError> {
        if self.regions.is_empty() {
            return Err(config_err("regions", "must be non-empty"));
        }
        if self.providers.is_empty() {
            return Err(config_err("providers", "must be non-empty"));
        }
        if self.regions.iter().collect::<BTreeSet<_>>().len() != self.regions.len() {
            return Err(config_err("regions", "duplicate region id"));
        }
        if self.providers.iter().collect::<BTreeSet<_>>().len() != self.providers.len() {
            return Err(config_err("providers", "duplicate provider id"));
        }
        let mut seen = BTreeSet::new();
        for e in &self.profiles {
            let field = format!("profiles[{}/{}]", e.region, e.provider);
            if !self.regions.contains(&e.region) || !self.providers.contains(&e.provider) {
                return Err(config_err(field, "unknown region or provider"));
            }
            if !seen.insert((&e.region, &e.provider)) {
                return Err(config_err(field, "duplicate profile"));
            }
            e.link.validate().map_err(|err| match err {
                NetsimError::Config { field: f, reason } => config_err(format!("{field}.{f}"), reason),
                other => other,
            })?;
        }
        for r in &self.regions {
            for p in &self.providers {
                if !seen.contains(&(r, p)) {
                    return Err(NetsimError::MissingProfile {
                        region: r.clone(),
                        provider: p.clone(),
                    });
                }
            }
        }
        let mut items = 0;
        for (region, work) in &self.workload {
            if !self.regions.contains(region) {
                return Err(config_err(format!("workload[{region}]"), "unknown region"));
            }
            for w in work {
                if w.document_bytes.contains(&0) {
                    return Err(config_err(
                        format!("workload[{region}].document_bytes"),
                        "sizes must be positive",
                    ));
                }
            }
            items += work.len();
        }
        if items == 0 {
            return Err(config_err("workload", "must contain at least one item"));
        }
        if let Strategy::SingleProvider(p) = &self.strategy {
            if !self.providers.contains(p) {
                return Err(NetsimError::UnknownProvider(p.clone()));
            }
        }
        Ok(())
    }

    pub fn profile_map(&self) -> Profiles {
        self.profiles
            .iter()
            .map(|e| ((e.region.clone(), e.provider.clone()), e.link.clone()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionReport {
    pub region: String,
    pub provider: String,
    pub applications: u64,
    pub applications_delivered: u64,
    pub items: u64,
    pub items_acked: u64,
    pub delivery_fraction: f64,
    /// Simulated time at which the last item was acked, if all were.
    pub completion_ms: Option<u64>,
    pub bytes_sent: u64,
    pub frames_sent: u64,
    pub frames_lost: u64,
    pub sessions: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategyOutcome {
    pub strategy: String,
    pub selection: BTreeMap<String, String>,
    pub delivery_fraction: f64,
    pub total_completion_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub seed: u64,
    pub strategy: String,
    pub horizon_ms: u64,
    pub probes: BTreeMap<String, BTreeMap<String, f64>>,
    pub selection: BTreeMap<String, String>,
    pub regions: Vec<RegionReport>,
    pub delivery_fraction: f64,
    /// Latest region completion; a region that never finished counts as the horizon.
    pub total_completion_ms: u64,
    /// Events the core stub received from anything other than the
    /// middleware's forward/decide path.
    pub core_frames_from_clients: u64,
    /// Approved/Rejected answers clients received in the post-sync status pull.
    pub decisions_observed: u64,
    /// Every observed decision is in the middleware's status trace, matches
    /// its store, and was decided by the core stub.
    pub decisions_verified: bool,
    pub middleware_invariants_hold: bool,
    pub comparison: Vec<StrategyOutcome>,
}

impl ScenarioReport {
    /// Compact JSON with sorted keys.
    pub fn to_canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("report serializes");
        let mut s = serde_json::to_string(&v).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "strategy {}  seed {}", self.strategy, self.seed);
        let _ = writeln!(
            out,
            "{:<8} {:<8} {:>9} {:>9} {:>13} {:>10} {:>8} {:>8}",
            "region", "provider", "delivered", "fraction", "completion_ms", "bytes", "frames", "lost"
        );
        for r in &self.regions {
            let completion = r.completion_ms.map_or_else(|| "-".to_owned(), |c| c.to_string());
            let _ = writeln!(
                out,
                "{:<8} {:<8} {:>4}/{:<4} {:>9.3} {:>13} {:>10} {:>8} {:>8}",
                r.region,
                r.provider,
                r.items_acked,
                r.items,
                r.delivery_fraction,
                completion,
                r.bytes_sent,
                r.frames_sent,
                r.frames_lost
            );
        }
        let _ = writeln!(
            out,
            "delivery {:.3}  total completion {} ms  core frames from clients {}  decisions verified {}",
            self.delivery_fraction, self.total_completion_ms, self.core_frames_from_clients, self.decisions_verified
        );
        let _ = writeln!(out, "comparison:");
        for c in &self.comparison {
            let _ = writeln!(
                out,
                "  {:<24} delivery {:.3}  total completion {} ms",
                c.strategy, c.delivery_fraction, c.total_completion_ms
            );
        }
        out
    }
}

fn uuid_from(seed: u64) -> String {
    let mut r = SplitMix64::new(seed);
    let (a, b) = (r.next_u64(), r.next_u64());
    format!(
        "{:08x}-{:04x}-4{:03x}-{:04x}-{:012x}",
        a >> 32,
        (a >> 16) & 0xffff,
        a & 0xfff,
        0x8000 | ((b >> 48) & 0x3fff),
        b & 0xffff_ffff_ffff
    )
}

fn payload(seed: u64, len: usize) -> Vec<u8> {
    let mut r = SplitMix64::new(seed);
    let mut out = Vec::with_capacity(len + 8);
    while out.len() < len {
        out.extend_from_slice(&r.next_u64().to_le_bytes());
    }
    out.truncate(len);
    out
}

/// The deterministic application behind workload item `index` of `region`.
pub(crate) fn build_application(
    seed: u64,
    region: &str,
    index: usize,
    item: &WorkItem,
) -> (ApplicationRecord, Vec<Vec<u8>>) {
    let base = derive_seed(seed, &format!("app/{region}/{index}"));
    let app_id = uuid_from(base);
    let mut rec = ApplicationRecord::with_id(
        app_id.clone(),
        &format!("Customer {region}-{index}"),
        region,
        10_000 + base % 90_000,
        "working capital",
        0,
    )
    .expect("generated record is valid");
    let mut docs = Vec::new();
    for (j, &size) in item.document_bytes.iter().enumerate() {
        let bytes = payload(derive_seed(base, &format!("doc/{j}")), size);
        let kind = [
            DocumentKind::IdentityProof,
            DocumentKind::AddressProof,
            DocumentKind::IncomeProof,
        ][j % 3];
        rec = rec
            .attach_document_ref(
                DocumentRef {
                    doc_id: format!("{app_id}-{j}"),
                    kind,
                    digest: sha256_hex(&bytes),
                    size_bytes: size as u64,
                },
                0,
            )
            .expect("generated document is valid");
        docs.push(bytes);
    }
    let short = item.record_bytes.saturating_sub(rec.to_manifest().len());
    if short > 0 {
        rec.need_details.push_str(&" ".repeat(short));
    }
    (rec, docs)
}

struct Run {
    regions: Vec<RegionReport>,
    delivery_fraction: f64,
    total_completion_ms: u64,
    core_frames_from_clients: u64,
    decisions_observed: u64,
    decisions_verified: bool,
    invariants_hold: bool,
}

fn simulate(sc: &Scenario, selection: &BTreeMap<String, String>, profiles: &Profiles) -> Result<Run, NetsimError> {
    let mw = Arc::new(Middleware::in_memory());
    let mut regions = Vec::new();
    let mut transports = Vec::new();
    let reconnect = Backoff::default();
    for region in &sc.regions {
        let provider = &selection[region];
        let link = profiles[&(region.clone(), provider.clone())].clone();
        let mut q = Queue::recover(MemStorage::default()).map_err(sync_err)?;
        let work = sc.workload.get(region).map(Vec::as_slice).unwrap_or_default();
        let mut app_ids = Vec::new();
        for (i, item) in work.iter().enumerate() {
            let (rec, docs) = build_application(sc.seed, region, i, item);
            let docs: Vec<&[u8]> = docs.iter().map(Vec::as_slice).collect();
            q.enqueue_application(&rec, &docs, 0).map_err(sync_err)?;
            app_ids.push(rec.app_id);
        }
        let link_seed = derive_seed(sc.seed, &format!("link/{region}"));
        let mut t = MemTransport::new(mw.session(), ProfileLink::new(link, link_seed));
        let mut wait_rng = SplitMix64::new(derive_seed(sc.seed, &format!("reconnect/{region}")));
        let (mut sessions, mut bytes) = (0u64, 0u64);
        let mut completion = None;
        while q.pending_count() > 0 && t.now_ms() < sc.horizon_ms {
            t.reconnect(mw.session());
            let cfg = SyncConfig {
                device_id: format!("device-{region}"),
                seed: derive_seed(sc.seed, &format!("session/{region}/{sessions}")),
                ..SyncConfig::default()
            };
            let report = sync_session(&mut q, &mut t, &cfg).map_err(sync_err)?;
            sessions += 1;
            bytes += report.bytes_sent;
            if q.pending_count() == 0 {
                completion = Some(t.now_ms());
                break;
            }
            let retry = sessions.min(u32::MAX as u64) as u32;
            t.sleep_ms(reconnect.delay_ms(retry, &mut wait_rng));
        }
        if work.is_empty() {
            completion = Some(0);
        }
        let items = q.len() as u64;
        let items_acked = items - q.pending_count() as u64;
        let delivered_apps = app_ids
            .iter()
            .filter(|id| {
                q.items()
                    .iter()
                    .filter(|i| &i.app_id == *id)
                    .all(|i| i.state == crate::syncq::ItemState::Acked)
            })
            .count() as u64;
        let stats = t.stats();
        regions.push(RegionReport {
            region: region.clone(),
            provider: provider.clone(),
            applications: app_ids.len() as u64,
            applications_delivered: delivered_apps,
            items,
            items_acked,
            delivery_fraction: if items == 0 {
                1.0
            } else {
                items_acked as f64 / items as f64
            },
            completion_ms: completion,
            bytes_sent: bytes,
            frames_sent: stats.frames_sent(),
            frames_lost: stats.frames_lost(),
            sessions,
        });
        transports.push((t, app_ids));
    }

    let mut core = CoreStub::new();
    let forwarded = mw
        .forward_to_core(&mut core)
        .map_err(|e| config_err("middleware", e.to_string()))?;
    let decided = mw
        .core_decide(&mut core)
        .map_err(|e| config_err("middleware", e.to_string()))?;
    let core_frames_from_clients = core.received().len().saturating_sub(forwarded + decided) as u64;

    let mut observed: Vec<(String, Status)> = Vec::new();
    for (t, app_ids) in &mut transports {
        if app_ids.is_empty() {
            continue;
        }
        for attempt in 0..STATUS_TRIES {
            t.reconnect(mw.session());
            let cfg = SyncConfig {
                seed: derive_seed(sc.seed, &format!("status/{attempt}")),
                ..SyncConfig::default()
            };
            if let Ok(map) = status_pull(t, app_ids, &cfg) {
                observed.extend(
                    map.into_iter()
                        .filter_map(|(id, s)| s.filter(|s| s.is_terminal()).map(|s| (id, s))),
                );
                break;
            }
        }
    }
    let trace = mw.status_trace();
    let decisions_verified = observed.iter().all(|(id, s)| {
        trace.iter().any(|o| &o.app_id == id && o.status == Some(*s))
            && mw.record(id).is_some_and(|r| r.status == *s)
            && core.received().contains(&CoreEvent::Decided {
                app_id: id.clone(),
                status: *s,
            })
    });

    let items: u64 = regions.iter().map(|r| r.items).sum();
    let acked: u64 = regions.iter().map(|r| r.items_acked).sum();
    let total_completion_ms = regions
        .iter()
        .map(|r| r.completion_ms.unwrap_or(sc.horizon_ms))
        .max()
        .unwrap_or(0);
    Ok(Run {
        regions,
        delivery_fraction: if items == 0 { 1.0 } else { acked as f64 / items as f64 },
        total_completion_ms,
        core_frames_from_clients,
        decisions_observed: observed.len() as u64,
        decisions_verified,
        invariants_hold: mw.check_invariants().is_ok(),
    })
}

fn sync_err(e: impl std::fmt::Display) -> NetsimError {
    config_err("sync", e.to_string())
}

/// Simulate `sc` under its own strategy and, for comparison, under
/// PerRegionBest and every SingleProvider choice.
pub fn run_scenario(sc: &Scenario) -> Result<ScenarioReport, NetsimError> {
    sc.validate()?;
    let profiles = sc.profile_map();
    let probes = probe_table(&profiles, &sc.regions, &sc.providers, sc.seed)?;
    let select = |s: &Strategy| match s {
        Strategy::PerRegionBest => select_from_estimates(&probes),
        Strategy::SingleProvider(p) => sc.regions.iter().map(|r| (r.clone(), p.clone())).collect(),
    };
    let mut strategies = vec![Strategy::PerRegionBest];
    strategies.extend(sc.providers.iter().cloned().map(Strategy::SingleProvider));

    let selection = select(&sc.strategy);
    let main = simulate(sc, &selection, &profiles)?;
    let mut comparison = Vec::new();
    for s in &strategies {
        let sel = select(s);
        let (delivery_fraction, total_completion_ms) = if *s == sc.strategy {
            (main.delivery_fraction, main.total_completion_ms)
        } else {
            let r = simulate(sc, &sel, &profiles)?;
            (r.delivery_fraction, r.total_completion_ms)
        };
        comparison.push(StrategyOutcome {
            strategy: s.label(),
            selection: sel,
            delivery_fraction,
            total_completion_ms,
        });
    }
    Ok(ScenarioReport {
        seed: sc.seed,
        strategy: sc.strategy.label(),
        horizon_ms: sc.horizon_ms,
        probes,
        selection,
        regions: main.regions,
        delivery_fraction: main.delivery_fraction,
        total_completion_ms: main.total_completion_ms,
        core_frames_from_clients: main.core_frames_from_clients,
        decisions_observed: main.decisions_observed,
        decisions_verified: main.decisions_verified,
        middleware_invariants_hold: main.invariants_hold,
        comparison,
    })
}

/// Three regions, two providers. P1 is the fastest network in R1 but has no
/// coverage at all in R3; P2 is best in R2 and the only option in R3.
pub fn canonical_scenario(strategy: Strategy) -> Scenario {
    let day = 24 * 3_600_000;
    let entry = |region: &str, provider: &str, link: LinkProfile| ProfileEntry {
        region: region.into(),
        provider: provider.into(),
        link,
    };
    let app = WorkItem {
        record_bytes: 600,
        document_bytes: vec![96_000, 48_000],
    };
    Scenario {
        seed: 2024,
        regions: vec!["R1".into(), "R2".into(), "R3".into()],
        providers: vec!["P1".into(), "P2".into()],
        profiles: vec![
            entry("R1", "P1", LinkProfile::new(2_000_000, 80, 0.02)),
            entry("R1", "P2", LinkProfile::new(512_000, 150, 0.05)),
            entry("R2", "P1", LinkProfile::new(1_000_000, 100, 0.05)),
            entry("R2", "P2", LinkProfile::new(1_500_000, 60, 0.02)),
            entry("R3", "P1", LinkProfile::new(2_000_000, 80, 0.02).with_blackhole(0, day)),
            entry("R3", "P2", LinkProfile::new(384_000, 200, 0.10)),
        ],
        workload: ["R1", "R2", "R3"]
            .into_iter()
            .map(|r| (r.to_owned(), vec![app.clone(); 4]))
            .collect(),
        strategy,
        horizon_ms: DEFAULT_HORIZON_MS,
    }
}
