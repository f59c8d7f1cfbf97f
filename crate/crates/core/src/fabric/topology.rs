use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{FabricError, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Peer,
    Client,
    Router,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub role: Role,
}

impl NodeSpec {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        NodeSpec {
            name: name.into(),
            role,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkState {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledLinkEvent {
    pub at_ms: f64,
    pub state: LinkState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub endpoints: [String; 2],
    #[serde(default)]
    pub latency_ms: f64,
    pub bandwidth_kbps: f64,
    #[serde(default)]
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<ScheduledLinkEvent>,
    /// Links naming the same medium share one transmission queue (radio airtime).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub medium: Option<String>,
}

impl LinkSpec {
    pub fn new(
        a: impl Into<String>,
        b: impl Into<String>,
        latency_ms: f64,
        bandwidth_kbps: f64,
    ) -> Self {
        LinkSpec {
            endpoints: [a.into(), b.into()],
            latency_ms,
            bandwidth_kbps,
            loss: 0.0,
            schedule: Vec::new(),
            medium: None,
        }
    }

    pub fn with_loss(mut self, loss: f64) -> Self {
        self.loss = loss;
        self
    }

    pub fn on_medium(mut self, medium: impl Into<String>) -> Self {
        self.medium = Some(medium.into());
        self
    }

    pub fn name(&self) -> String {
        format!("{}--{}", self.endpoints[0], self.endpoints[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    FullMesh,
    Routed,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::FullMesh => "full_mesh",
            Mode::Routed => "routed",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full_mesh" | "full-mesh" => Ok(Mode::FullMesh),
            "routed" => Ok(Mode::Routed),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyWarning {
    /// Routed mode only: these node pairs cannot reach each other through routers.
    DisconnectedRoutedGraph {
        unreachable_pairs: Vec<(String, String)>,
    },
}

impl TopologySpec {
    pub fn from_json(text: &str) -> Result<Self, FabricError> {
        serde_json::from_str(text).map_err(|e| FabricError::Parse(e.to_string()))
    }

    pub fn node_index(&self) -> BTreeMap<&str, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.name.as_str(), i))
            .collect()
    }

    /// Checks the hard invariants; returns soft warnings.
    pub fn validate(&self) -> Result<Vec<TopologyWarning>, FabricError> {
        let mut names = BTreeSet::new();
        for n in &self.nodes {
            if n.name.is_empty() {
                return Err(FabricError::InvalidSpec("empty node name".into()));
            }
            if !names.insert(n.name.as_str()) {
                return Err(FabricError::DuplicateNode(n.name.clone()));
            }
        }
        for l in &self.links {
            for e in &l.endpoints {
                if !names.contains(e.as_str()) {
                    return Err(FabricError::DanglingLink {
                        link: l.name(),
                        node: e.clone(),
                    });
                }
            }
            if l.endpoints[0] == l.endpoints[1] {
                return Err(FabricError::InvalidSpec(format!(
                    "link {} is a self-loop",
                    l.name()
                )));
            }
            if !(l.latency_ms.is_finite() && l.latency_ms >= 0.0) {
                return Err(FabricError::InvalidSpec(format!(
                    "link {} latency must be >= 0",
                    l.name()
                )));
            }
            if !(l.bandwidth_kbps.is_finite() && l.bandwidth_kbps > 0.0) {
                return Err(FabricError::InvalidSpec(format!(
                    "link {} bandwidth must be > 0",
                    l.name()
                )));
            }
            if !(0.0..=1.0).contains(&l.loss) {
                return Err(FabricError::InvalidSpec(format!(
                    "link {} loss must be in [0,1]",
                    l.name()
                )));
            }
            if l.schedule
                .windows(2)
                .any(|w| w[0].at_ms.partial_cmp(&w[1].at_ms) != Some(std::cmp::Ordering::Less))
            {
                return Err(FabricError::InvalidSpec(format!(
                    "link {} schedule times must be strictly increasing",
                    l.name()
                )));
            }
            if l.schedule.iter().any(|e| e.at_ms < 0.0) {
                return Err(FabricError::InvalidSpec(format!(
                    "link {} schedules a negative time",
                    l.name()
                )));
            }
        }
        let mut warnings = Vec::new();
        if self.mode == Mode::Routed {
            let pairs = self.unreachable_routed_pairs();
            if !pairs.is_empty() {
                warnings.push(TopologyWarning::DisconnectedRoutedGraph {
                    unreachable_pairs: pairs,
                });
            }
        }
        Ok(warnings)
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let idx = self.node_index();
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for l in &self.links {
            let a = idx[l.endpoints[0].as_str()];
            let b = idx[l.endpoints[1].as_str()];
            adj[a].push(b);
            adj[b].push(a);
        }
        for v in &mut adj {
            v.sort_unstable();
            v.dedup();
        }
        adj
    }

    /// Pairs of non-router nodes with no path whose interior nodes are all routers.
    fn unreachable_routed_pairs(&self) -> Vec<(String, String)> {
        let adj = self.adjacency();
        let endpoints: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| self.nodes[i].role != Role::Router)
            .collect();
        let mut out = Vec::new();
        for &s in &endpoints {
            let mut seen = vec![false; self.nodes.len()];
            seen[s] = true;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                if u != s && self.nodes[u].role != Role::Router {
                    continue;
                }
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            for &t in &endpoints {
                if t > s && !seen[t] {
                    out.push((self.nodes[s].name.clone(), self.nodes[t].name.clone()));
                }
            }
        }
        out
    }

    /// All simple paths between two nodes, as node-name sequences.
    pub fn simple_paths(&self, from: &str, to: &str) -> Vec<Vec<String>> {
        let idx = self.node_index();
        let (Some(&s), Some(&t)) = (idx.get(from), idx.get(to)) else {
            return Vec::new();
        };
        let adj = self.adjacency();
        let mut out = Vec::new();
        let mut path = vec![s];
        let mut on_path = vec![false; self.nodes.len()];
        on_path[s] = true;
        fn walk(
            u: usize,
            t: usize,
            adj: &[Vec<usize>],
            path: &mut Vec<usize>,
            on_path: &mut [bool],
            out: &mut Vec<Vec<usize>>,
        ) {
            if u == t {
                out.push(path.clone());
                return;
            }
            for &v in &adj[u] {
                if !on_path[v] {
                    on_path[v] = true;
                    path.push(v);
                    walk(v, t, adj, path, on_path, out);
                    path.pop();
                    on_path[v] = false;
                }
            }
        }
        walk(s, t, &adj, &mut path, &mut on_path, &mut out);
        out.into_iter()
            .map(|p| p.into_iter().map(|i| self.nodes[i].name.clone()).collect())
            .collect()
    }
}

pub(crate) fn ms_to_time(ms: f64) -> SimTime {
    SimTime::from_millis_f64(ms)
}
