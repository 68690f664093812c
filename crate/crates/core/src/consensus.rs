//! Synchronous max- and min-consensus over an undirected communication graph.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::agents::FlexVector;
use crate::error::{Error, Result};
use crate::grid::Scenario;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    adjacency: Vec<Vec<usize>>,
}

impl CommGraph {
    /// Nodes are `0..n`. Rejects self-loops, unknown nodes and disconnected
    /// graphs.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Graph("graph has no nodes".into()));
        }
        let mut sets = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Graph(format!("edge ({a}, {b}) references a missing node")));
            }
            if a == b {
                return Err(Error::Graph(format!("self-loop at node {a}")));
            }
            sets[a].insert(b);
            sets[b].insert(a);
        }
        let g = CommGraph {
            adjacency: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        };
        if g.bfs(0).iter().any(Option::is_none) {
            return Err(Error::Graph("communication graph is not connected".into()));
        }
        Ok(g)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                edges.push((a, b));
            }
        }
        Self::new(n, &edges)
    }

    /// Default graph for a scenario: agents on one bus talk to each other, and
    /// to all agents on the nearest agent-bearing buses (buses without agents
    /// are passed through). Agent `i` is the scenario's `i`-th asset.
    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let n = scenario.assets.len();
        let mut by_bus: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, a) in scenario.assets.iter().enumerate() {
            let b = scenario
                .bus_index(a.bus())
                .ok_or_else(|| Error::Graph(format!("asset {} is on a missing bus", a.id())))?;
            by_bus.entry(b).or_default().push(i);
        }
        let adj = scenario.bus_adjacency();
        let mut edges = Vec::new();
        for (&bus, members) in &by_bus {
            for (k, &a) in members.iter().enumerate() {
                for &b in &members[k + 1..] {
                    edges.push((a, b));
                }
            }
            let mut seen = BTreeSet::from([bus]);
            let mut queue = VecDeque::from([bus]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen.insert(v) {
                        continue;
                    }
                    match by_bus.get(&v) {
                        Some(others) if v > bus => {
                            for &a in members {
                                for &b in others {
                                    edges.push((a, b));
                                }
                            }
                        }
                        Some(_) => {}
                        None => queue.push_back(v),
                    }
                }
            }
        }
        Self::new(n, &edges)
    }

    /// Reads `{"edges": [["asset-a", "asset-b"], ...]}` against a scenario's
    /// asset ids.
    pub fn from_json(scenario: &Scenario, json: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct File {
            edges: Vec<(String, String)>,
        }
        let file: File = serde_json::from_str(json).map_err(|e| Error::Parse {
            context: "communication graph".into(),
            message: e.to_string(),
        })?;
        let index: BTreeMap<&str, usize> = scenario
            .assets
            .iter()
            .enumerate()
            .map(|(i, a)| (a.id(), i))
            .collect();
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::Graph(format!("unknown agent {id:?} in communication graph")))
        };
        let mut edges = Vec::with_capacity(file.edges.len());
        for (a, b) in &file.edges {
            edges.push((lookup(a)?, lookup(b)?));
        }
        Self::new(scenario.assets.len(), &edges)
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, ns) in self.adjacency.iter().enumerate() {
            out.extend(ns.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }

    fn bfs(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap_or(0);
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

/// Largest eccentricity, from a BFS out of every node.
pub fn graph_diameter(g: &CommGraph) -> Result<usize> {
    let mut diam = 0;
    for s in 0..g.len() {
        for d in g.bfs(s) {
            diam = diam.max(d.ok_or_else(|| Error::Graph("communication graph is not connected".into()))?);
        }
    }
    Ok(diam)
}

pub fn manhattan_distance(r: &FlexVector, a: &FlexVector) -> f64 {
    (r.power_kw - a.power_kw).abs() + (r.value - a.value).abs()
}

/// Minimal control interval in ms: two consensus phases of `diameter` hops each.
pub fn feasible_delta_t(diameter: usize, delay_ms: f64, margin_ms: f64) -> f64 {
    2.0 * diameter as f64 * delay_ms + margin_ms
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Max,
    Min,
}

/// One message on the wire, as written to the line-delimited log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub round: usize,
    pub from: usize,
    pub to: usize,
    pub kind: Phase,
    pub power_kw: f64,
    pub value: f64,
    pub owner: usize,
    pub priority: u32,
}

pub trait MessageSink {
    fn send(&mut self, m: &Message);
}

impl MessageSink for Vec<Message> {
    fn send(&mut self, m: &Message) {
        self.push(m.clone());
    }
}

/// Writes messages as JSON lines; the first I/O error is kept and later
/// messages are dropped.
pub struct JsonLines<W: Write> {
    out: W,
    pub error: Option<std::io::Error>,
}

impl<W: Write> JsonLines<W> {
    pub fn new(out: W) -> Self {
        JsonLines { out, error: None }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> MessageSink for JsonLines<W> {
    fn send(&mut self, m: &Message) {
        if self.error.is_some() {
            return;
        }
        let line = serde_json::to_string(m).expect("message serializes");
        if let Err(e) = writeln!(self.out, "{line}") {
            self.error = Some(e);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    /// The agreed vector; `None` when nobody held a candidate.
    pub winner: Option<FlexVector>,
    /// What each agent holds after the last round.
    pub held: Vec<Option<FlexVector>>,
    pub rounds: usize,
    /// Last round in which any agent changed its value.
    pub converged_after: usize,
    pub messages_per_round: usize,
}

impl RoundOutcome {
    pub fn agreed(&self) -> bool {
        self.held.iter().all(|h| h == &self.winner)
    }
}

/// Max-consensus order: real vectors beat empty ones, then higher value, then
/// lower priority integer.
pub fn max_order(a: &FlexVector, b: &FlexVector) -> Ordering {
    (!a.is_none())
        .cmp(&!b.is_none())
        .then(a.value.total_cmp(&b.value))
        .then(b.priority.cmp(&a.priority))
}

/// Min-consensus order as a "better" ordering: shorter distance wins, then the
/// lower priority integer.
fn min_better(request: &FlexVector, a: &FlexVector, b: &FlexVector) -> Ordering {
    let da = distance_or_sentinel(request, a);
    let db = distance_or_sentinel(request, b);
    db.total_cmp(&da).then(b.priority.cmp(&a.priority))
}

fn distance_or_sentinel(request: &FlexVector, a: &FlexVector) -> f64 {
    if a.is_none() {
        f64::INFINITY
    } else {
        manhattan_distance(request, a)
    }
}

fn run_rounds(
    g: &CommGraph,
    initial: &[FlexVector],
    iter_max: usize,
    phase: Phase,
    better: impl Fn(&FlexVector, &FlexVector) -> Ordering,
    is_candidate: impl Fn(&FlexVector) -> bool,
    mut sink: Option<&mut dyn MessageSink>,
) -> RoundOutcome {
    assert_eq!(initial.len(), g.len(), "one vector per agent");
    let mut held: Vec<FlexVector> = initial.to_vec();
    let mut converged_after = 0;
    for round in 1..=iter_max {
        if let Some(s) = sink.as_deref_mut() {
            for (from, v) in held.iter().enumerate() {
                for &to in g.neighbors(from) {
                    s.send(&Message {
                        round,
                        from,
                        to,
                        kind: phase,
                        power_kw: v.power_kw,
                        value: v.value,
                        owner: v.owner,
                        priority: v.priority,
                    });
                }
            }
        }
        let next: Vec<FlexVector> = (0..g.len())
            .map(|i| {
                g.neighbors(i)
                    .iter()
                    .map(|&j| &held[j])
                    .fold(held[i], |best, v| {
                        if better(v, &best) == Ordering::Greater {
                            *v
                        } else {
                            best
                        }
                    })
            })
            .collect();
        if next != held {
            converged_after = round;
        }
        held = next;
    }
    let wrap = |v: &FlexVector| is_candidate(v).then_some(*v);
    let held: Vec<Option<FlexVector>> = held.iter().map(wrap).collect();
    RoundOutcome {
        winner: held.first().copied().flatten(),
        held,
        rounds: iter_max,
        converged_after,
        messages_per_round: 2 * g.edge_count(),
    }
}

/// Every agent ends up holding the highest-valued request.
pub fn max_consensus(
    g: &CommGraph,
    requests: &[FlexVector],
    iter_max: usize,
    sink: Option<&mut dyn MessageSink>,
) -> RoundOutcome {
    run_rounds(g, requests, iter_max, Phase::Max, max_order, |v| !v.is_none(), sink)
}

/// Every agent ends up holding the response closest (L1) to `request`.
pub fn min_consensus(
    g: &CommGraph,
    request: &FlexVector,
    responses: &[FlexVector],
    iter_max: usize,
    sink: Option<&mut dyn MessageSink>,
) -> RoundOutcome {
    run_rounds(
        g,
        responses,
        iter_max,
        Phase::Min,
        |a, b| min_better(request, a, b),
        |v| !v.is_none(),
        sink,
    )
}

/// Round limit used when none is configured.
pub fn default_iter_max(g: &CommGraph) -> Result<usize> {
    Ok(graph_diameter(g)? + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(owner: usize, p: f64, value: f64, priority: u32) -> FlexVector {
        FlexVector {
            power_kw: p,
            value,
            owner,
            priority,
        }
    }

    #[test]
    fn path_and_complete_diameters() {
        let path = CommGraph::new(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(graph_diameter(&path).unwrap(), 3);
        assert_eq!(graph_diameter(&CommGraph::complete(5).unwrap()).unwrap(), 1);
        assert_eq!(graph_diameter(&CommGraph::complete(1).unwrap()).unwrap(), 0);
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(CommGraph::new(3, &[(0, 1)]).is_err());
        assert!(CommGraph::new(2, &[(0, 0), (0, 1)]).is_err());
        assert!(CommGraph::new(2, &[(0, 2)]).is_err());
    }

    #[test]
    fn single_agent_keeps_its_request() {
        let g = CommGraph::complete(1).unwrap();
        let out = max_consensus(&g, &[v(0, 1.0, 5.0, 1)], 1, None);
        assert_eq!(out.winner.unwrap().value, 5.0);
        assert_eq!(out.rounds, 1);
        assert_eq!(out.messages_per_round, 0);
    }

    #[test]
    fn star_leaf_maximum_spreads_in_two_rounds() {
        let g = CommGraph::new(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let req = [v(0, 1.0, 1.0, 1), v(1, 1.0, 2.0, 2), v(2, 1.0, 9.0, 3), v(3, 1.0, 3.0, 4)];
        let out = max_consensus(&g, &req, 3, None);
        assert!(out.agreed());
        assert_eq!(out.winner.unwrap().owner, 2);
        assert_eq!(out.converged_after, 2);
        assert_eq!(out.messages_per_round, 6);
    }

    #[test]
    fn equal_values_go_to_lower_priority_integer() {
        let g = CommGraph::complete(2).unwrap();
        let out = max_consensus(&g, &[v(0, 1.0, 4.0, 7), v(1, 2.0, 4.0, 3)], 2, None);
        assert_eq!(out.winner.unwrap().owner, 1);
    }

    #[test]
    fn zero_valued_request_beats_no_request() {
        let g = CommGraph::complete(2).unwrap();
        let out = max_consensus(&g, &[FlexVector::none(0, 1), v(1, 9.0, 0.0, 2)], 2, None);
        assert_eq!(out.winner.unwrap().owner, 1);
    }

    #[test]
    fn no_requests_means_no_winner() {
        let g = CommGraph::complete(3).unwrap();
        let none: Vec<_> = (0..3).map(|i| FlexVector::none(i, i as u32 + 1)).collect();
        assert!(max_consensus(&g, &none, 2, None).winner.is_none());
        assert!(min_consensus(&g, &v(0, 1.0, 1.0, 1), &none, 2, None).winner.is_none());
    }

    #[test]
    fn manhattan_examples() {
        assert_eq!(manhattan_distance(&v(0, 5.0, 2.0, 1), &v(1, 5.0, 2.0, 2)), 0.0);
        assert_eq!(manhattan_distance(&v(0, 5.0, 2.0, 1), &v(1, 4.0, 1.0, 2)), 2.0);
    }

    #[test]
    fn closest_response_wins() {
        let g = CommGraph::new(3, &[(0, 1), (1, 2)]).unwrap();
        let r = v(0, 5.0, 2.0, 1);
        let resp = [FlexVector::none(0, 1), v(1, 10.0, 0.0, 2), v(2, 4.0, 1.0, 3)];
        let out = min_consensus(&g, &r, &resp, 3, None);
        assert!(out.agreed());
        assert_eq!(out.winner.unwrap().owner, 2);
    }

    #[test]
    fn l1_prefers_full_power_cheap_offer() {
        // The request asks for 4 kW at value 1. Offer j gives all 4 kW but
        // costs 1.6; offer k is closer in the Euclidean sense (1.5 kW short,
        // costs 0.2) but further under L1.
        let r = v(0, 4.0, 1.0, 1);
        let j = v(1, 4.0, -0.6, 2);
        let k = v(2, 2.5, 0.8, 3);
        let euclid = |a: &FlexVector| ((r.power_kw - a.power_kw).powi(2) + (r.value - a.value).powi(2)).sqrt();
        assert!(euclid(&k) < euclid(&j));
        assert!(manhattan_distance(&r, &j) < manhattan_distance(&r, &k));
        let g = CommGraph::complete(3).unwrap();
        let out = min_consensus(&g, &r, &[FlexVector::none(0, 1), j, k], 2, None);
        assert_eq!(out.winner.unwrap().owner, 1);
    }

    #[test]
    fn feasibility_closed_form() {
        assert_eq!(feasible_delta_t(10, 100.0, 0.0), 2000.0);
        assert_eq!(feasible_delta_t(1, 1.0, 0.0), 2.0);
        assert_eq!(feasible_delta_t(10, 3000.0, 0.0), 60_000.0);
    }

    #[test]
    fn message_log_has_one_line_per_directed_edge() {
        let g = CommGraph::new(3, &[(0, 1), (1, 2)]).unwrap();
        let mut sink = JsonLines::new(Vec::new());
        let req = [v(0, 1.0, 1.0, 1), v(1, 1.0, 2.0, 2), v(2, 1.0, 3.0, 3)];
        max_consensus(&g, &req, 3, Some(&mut sink));
        let text = String::from_utf8(sink.into_inner()).unwrap();
        assert_eq!(text.lines().count(), 3 * 4);
        let first: Message = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first.kind, Phase::Max);
        assert!(text.contains("\"kind\":\"max\""));
    }
}
