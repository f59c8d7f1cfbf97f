//! Workload builders shared by the criterion benchmarks.

use std::path::PathBuf;

use modstack_core::fabric::{EndpointKind, LinkSpec, Mode, Network, NodeSpec, Role, TopologySpec};
use modstack_core::KeyExpr;

/// Fixture workspace shipped with the repository.
pub fn workspace_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/workspace")
}

/// `n` peers around one router, each publishing its own state and
/// subscribing to everyone's.
pub fn star_storm(n: usize, mode: Mode) -> Network {
    let mut nodes = vec![NodeSpec::new("hub", Role::Router)];
    let mut links = Vec::new();
    for i in 0..n {
        nodes.push(NodeSpec::new(format!("p{i}"), Role::Peer));
        links.push(LinkSpec::new("hub", format!("p{i}"), 2.0, 10_000.0));
    }
    let mut net = Network::new(TopologySpec {
        nodes,
        links,
        mode,
        seed: 0,
    })
    .expect("valid star");
    let all = KeyExpr::parse("robot/*/state").expect("literal key");
    for i in 0..n {
        let node = format!("p{i}");
        let own = KeyExpr::parse(&format!("robot/{i}/state")).expect("literal key");
        net.declare_endpoint(&node, EndpointKind::Publisher, own)
            .expect("known node");
        net.declare_endpoint(&node, EndpointKind::Subscriber, all.clone())
            .expect("known node");
    }
    net
}
