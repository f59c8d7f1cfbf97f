use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use super::engine::{Network, WINDOW};
use super::topology::LinkState;
use super::{Mode, SimTime};

/// Delivery latency above this multiple of the steady-state median counts as stutter.
pub const STUTTER_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeMetrics {
    pub name: String,
    /// From the node's first declaration to the first remote delivery it takes part in.
    pub startup_time_ms: Option<f64>,
    /// Control-plane bytes carried on the node's links before the first link event.
    pub startup_bytes: u64,
    pub stutter_window_ms: f64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub deliveries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkMetrics {
    pub name: String,
    pub bytes_transferred: u64,
    pub control_bytes: u64,
    pub data_bytes: u64,
    pub startup_control_bytes: u64,
    pub messages_dropped: u64,
    pub peak_kbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryMetric {
    pub link: String,
    pub down_at_ms: f64,
    pub up_at_ms: f64,
    pub affected_flows: usize,
    pub recovered: bool,
    pub recovery_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalMetrics {
    pub published: u64,
    pub expected_deliveries: u64,
    pub delivered: u64,
    pub remote_deliveries: u64,
    pub mean_latency_ms: f64,
    pub median_latency_ms: f64,
    pub peak_bandwidth_kbps: f64,
    pub control_bytes: u64,
    pub data_bytes: u64,
    pub startup_bytes: u64,
    pub nodes_declared: usize,
    pub nodes_started: usize,
    /// Slowest node startup; only meaningful when every declared node started.
    pub startup_time_ms: f64,
    pub stutter_ms: f64,
    pub messages_dropped: u64,
    pub recovery: Vec<RecoveryMetric>,
}

impl GlobalMetrics {
    pub fn all_started(&self) -> bool {
        self.nodes_started == self.nodes_declared
    }

    /// Worst recovery time over every link-up event, if any happened.
    pub fn worst_recovery_ms(&self) -> Option<f64> {
        self.recovery
            .iter()
            .map(|r| r.recovery_time_ms)
            .reduce(f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FabricMetrics {
    pub mode: Mode,
    pub now_ms: f64,
    pub nodes: Vec<NodeMetrics>,
    pub links: Vec<LinkMetrics>,
    pub global: GlobalMetrics,
}

impl FabricMetrics {
    pub fn node(&self, name: &str) -> Option<&NodeMetrics> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn link(&self, name: &str) -> Option<&LinkMetrics> {
        self.links.iter().find(|l| l.name == name)
    }

    /// One row per node and per link.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scope,name,startup_time_ms,startup_bytes,stutter_window_ms,bytes_transferred,control_bytes,data_bytes,messages_dropped,peak_kbps\n",
        );
        for n in &self.nodes {
            let startup = n.startup_time_ms.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "node,{},{},{},{},{},,,,",
                n.name,
                startup,
                n.startup_bytes,
                n.stutter_window_ms,
                n.bytes_sent + n.bytes_received
            );
        }
        for l in &self.links {
            let _ = writeln!(
                out,
                "link,{},,,,{},{},{},{},{}",
                l.name,
                l.bytes_transferred,
                l.control_bytes,
                l.data_bytes,
                l.messages_dropped,
                l.peak_kbps
            );
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.global).expect("metrics serialize")
    }
}

fn median(values: &mut [u64]) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    Some(values[values.len() / 2])
}

fn window_kbps(bytes: f64) -> f64 {
    bytes * 8.0 / (WINDOW as f64 / 1000.0)
}

pub(super) fn collect(net: &Network) -> FabricMetrics {
    let now = net.now();
    let deliveries = net.deliveries();
    let half = SimTime(now.0 / 2);

    let mut per_sink: BTreeMap<usize, Vec<(SimTime, u64)>> = BTreeMap::new();
    let mut latencies = Vec::new();
    for d in deliveries.iter().filter(|d| d.remote) {
        let lat = d.latency().0;
        latencies.push(lat);
        per_sink
            .entry(d.sink)
            .or_default()
            .push((d.delivered_at, lat));
    }

    let mut nodes = Vec::with_capacity(net.node_count());
    let mut nodes_declared = 0;
    let mut nodes_started = 0;
    let mut slowest = 0.0f64;
    let mut stutter_max = 0.0f64;
    for idx in 0..net.node_count() {
        let v = net.node_view(idx);
        let startup = match (v.first_declared, v.first_delivery) {
            (Some(d), Some(f)) => Some(f.saturating_sub(d).as_millis_f64()),
            _ => None,
        };
        if v.declared {
            nodes_declared += 1;
            if let Some(s) = startup {
                nodes_started += 1;
                slowest = slowest.max(s);
            }
        }
        let received = per_sink.get(&idx).map(Vec::as_slice).unwrap_or(&[]);
        let stutter = stutter_window(received, half, v.first_declared.unwrap_or(SimTime::ZERO));
        stutter_max = stutter_max.max(stutter);
        nodes.push(NodeMetrics {
            name: v.name.to_owned(),
            startup_time_ms: startup,
            startup_bytes: v.startup_bytes,
            stutter_window_ms: stutter,
            bytes_sent: v.bytes_sent,
            bytes_received: v.bytes_received,
            deliveries: received.len() as u64,
        });
    }

    let mut links = Vec::with_capacity(net.link_count());
    let mut totals: BTreeMap<u64, f64> = BTreeMap::new();
    let (mut control, mut data, mut startup_bytes, mut dropped) = (0, 0, 0, 0);
    for idx in 0..net.link_count() {
        let v = net.link_view(idx);
        let mut peak = 0.0f64;
        for (w, b) in v.windows {
            peak = peak.max(*b);
            *totals.entry(*w).or_default() += *b;
        }
        control += v.control_bytes;
        data += v.data_bytes;
        startup_bytes += v.startup_control_bytes;
        dropped += v.dropped;
        links.push(LinkMetrics {
            name: v.name,
            bytes_transferred: v.bytes,
            control_bytes: v.control_bytes,
            data_bytes: v.data_bytes,
            startup_control_bytes: v.startup_control_bytes,
            messages_dropped: v.dropped,
            peak_kbps: window_kbps(peak),
        });
    }
    let peak_total = totals.values().copied().fold(0.0, f64::max);

    let published = net.publishes().len() as u64;
    let expected: u64 = net.publishes().iter().map(|p| p.expected as u64).sum();
    let delivered = deliveries.len() as u64;
    let mean_latency = if latencies.is_empty() {
        0.0
    } else {
        latencies.iter().sum::<u64>() as f64 / latencies.len() as f64 / 1000.0
    };
    let median_latency = median(&mut latencies).map_or(0.0, |m| m as f64 / 1000.0);

    FabricMetrics {
        mode: net.mode(),
        now_ms: now.as_millis_f64(),
        nodes,
        links,
        global: GlobalMetrics {
            published,
            expected_deliveries: expected,
            delivered,
            remote_deliveries: deliveries.iter().filter(|d| d.remote).count() as u64,
            mean_latency_ms: mean_latency,
            median_latency_ms: median_latency,
            peak_bandwidth_kbps: window_kbps(peak_total),
            control_bytes: control,
            data_bytes: data,
            startup_bytes,
            nodes_declared,
            nodes_started,
            startup_time_ms: slowest,
            stutter_ms: stutter_max,
            messages_dropped: dropped,
            recovery: recoveries(net),
        },
    }
}

/// Time from `start` to the last delivery whose latency exceeded
/// [`STUTTER_FACTOR`] times the steady-state median (deliveries in the second
/// half of the run, or all of them if none are that late).
fn stutter_window(received: &[(SimTime, u64)], half: SimTime, start: SimTime) -> f64 {
    let mut steady: Vec<u64> = received
        .iter()
        .filter(|(t, _)| *t >= half)
        .map(|(_, l)| *l)
        .collect();
    if steady.is_empty() {
        steady = received.iter().map(|(_, l)| *l).collect();
    }
    let Some(m) = median(&mut steady) else {
        return 0.0;
    };
    let threshold = m as f64 * STUTTER_FACTOR;
    received
        .iter()
        .filter(|(_, l)| *l as f64 > threshold)
        .map(|(t, _)| t.saturating_sub(start).as_millis_f64())
        .fold(0.0, f64::max)
}

fn recoveries(net: &Network) -> Vec<RecoveryMetric> {
    let history = net.link_history();
    let deliveries = net.deliveries();
    let now = net.now();
    let mut out = Vec::new();
    for (i, &(link, up_at, state)) in history.iter().enumerate() {
        if state != LinkState::Up {
            continue;
        }
        let Some(&(_, down_at, _)) = history[..i]
            .iter()
            .rev()
            .find(|(l, _, s)| *l == link && *s == LinkState::Down)
        else {
            continue;
        };
        let flow = |d: &super::DeliveryRecord| (d.source, d.sink, d.sample.key.to_string());
        let before: BTreeSet<_> = deliveries
            .iter()
            .filter(|d| d.remote && d.delivered_at < down_at)
            .map(flow)
            .collect();
        let during: BTreeSet<_> = deliveries
            .iter()
            .filter(|d| d.remote && d.delivered_at >= down_at && d.delivered_at <= up_at)
            .map(flow)
            .collect();
        let affected: BTreeSet<_> = before.difference(&during).cloned().collect();
        let mut first_after: BTreeMap<_, SimTime> = BTreeMap::new();
        for d in deliveries
            .iter()
            .filter(|d| d.remote && d.delivered_at > up_at)
        {
            let f = flow(d);
            if affected.contains(&f) {
                first_after.entry(f).or_insert(d.delivered_at);
            }
        }
        let recovered = first_after.len() == affected.len();
        let worst = if recovered {
            first_after
                .values()
                .map(|t| t.saturating_sub(up_at))
                .max()
                .unwrap_or(SimTime::ZERO)
        } else {
            now.saturating_sub(up_at)
        };
        out.push(RecoveryMetric {
            link: net.spec().links[link].name(),
            down_at_ms: down_at.as_millis_f64(),
            up_at_ms: up_at.as_millis_f64(),
            affected_flows: affected.len(),
            recovered,
            recovery_time_ms: worst.as_millis_f64(),
        });
    }
    out
}
