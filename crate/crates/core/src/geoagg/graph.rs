//! Per-subject probabilistic mobility graph over place categories.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::location::PointOfInterest;
use crate::transport::Trip;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub visits: usize,
    pub dwell_min_total: f64,
    pub dwell_min_mean: f64,
    /// Mean of each per-visit activity indicator over the visits that report it.
    pub activity: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub count: usize,
    pub probability: f64,
    pub mean_distance_m: Option<f64>,
    /// Share of classified travel seconds per mode over the matched trips.
    pub mode_distribution: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MobilityGraph {
    pub nodes: BTreeMap<String, NodeStats>,
    pub edges: Vec<Edge>,
}

impl MobilityGraph {
    /// Outgoing probability mass per node with at least one transition.
    pub fn row_sums(&self) -> BTreeMap<String, f64> {
        let mut sums = BTreeMap::new();
        for e in &self.edges {
            *sums.entry(e.from.clone()).or_insert(0.0) += e.probability;
        }
        sums
    }
}

fn node_name(p: &PointOfInterest) -> String {
    p.category.map(|c| c.as_str().to_string()).unwrap_or_else(|| "unknown".to_string())
}

#[derive(Default)]
struct EdgeAcc {
    count: usize,
    distance_sum: f64,
    distance_n: usize,
    mode_seconds: BTreeMap<String, f64>,
}

/// Builds the graph from consecutive stays; `activity` maps poi_id to per-visit indicators.
pub fn build_mobility_graph(
    pois: &[PointOfInterest],
    trips: &[Trip],
    activity: &BTreeMap<String, BTreeMap<String, f64>>,
) -> MobilityGraph {
    let mut order: Vec<&PointOfInterest> = pois.iter().collect();
    order.sort_by_key(|p| (p.arrive_t, p.depart_t));

    let mut nodes: BTreeMap<String, NodeStats> = BTreeMap::new();
    let mut activity_n: BTreeMap<(String, String), usize> = BTreeMap::new();
    for p in &order {
        let name = node_name(p);
        let node = nodes.entry(name.clone()).or_default();
        node.visits += 1;
        node.dwell_min_total += (p.depart_t - p.arrive_t) as f64 / 60_000.0;
        for (k, v) in activity.get(&p.poi_id).into_iter().flatten() {
            *node.activity.entry(k.clone()).or_insert(0.0) += v;
            *activity_n.entry((name.clone(), k.clone())).or_insert(0) += 1;
        }
    }
    for (name, node) in nodes.iter_mut() {
        node.dwell_min_mean = node.dwell_min_total / node.visits as f64;
        for (k, v) in node.activity.iter_mut() {
            *v /= activity_n[&(name.clone(), k.clone())] as f64;
        }
    }

    let mut acc: BTreeMap<(String, String), EdgeAcc> = BTreeMap::new();
    for w in order.windows(2) {
        let (a, b) = (w[0], w[1]);
        let e = acc.entry((node_name(a), node_name(b))).or_default();
        e.count += 1;
        let trip = trips
            .iter()
            .find(|t| t.origin_poi.as_deref() == Some(a.poi_id.as_str()) && t.dest_poi.as_deref() == Some(b.poi_id.as_str()));
        let distance = trip
            .and_then(|t| t.distance_m)
            .or_else(|| Some(a.center?.distance_m(&b.center?)));
        if let Some(d) = distance {
            e.distance_sum += d;
            e.distance_n += 1;
        }
        if let Some(t) = trip {
            for (m, s) in t.mode_seconds() {
                *e.mode_seconds.entry(m.as_str().to_string()).or_insert(0.0) += f64::from(s);
            }
        }
    }
    let mut outgoing: BTreeMap<String, usize> = BTreeMap::new();
    for ((from, _), e) in &acc {
        *outgoing.entry(from.clone()).or_insert(0) += e.count;
    }
    let edges = acc
        .into_iter()
        .map(|((from, to), e)| {
            let total: f64 = e.mode_seconds.values().sum();
            let mode_distribution = if total > 0.0 {
                e.mode_seconds.into_iter().map(|(m, s)| (m, s / total)).collect()
            } else {
                BTreeMap::new()
            };
            Edge {
                probability: e.count as f64 / outgoing[&from] as f64,
                from,
                to,
                count: e.count,
                mean_distance_m: (e.distance_n > 0).then(|| e.distance_sum / e.distance_n as f64),
                mode_distribution,
            }
        })
        .collect();
    MobilityGraph { nodes, edges }
}
