//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls into the implementation paths it is used to check,
//! except `checks`, which runs the implementation against these oracles.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

// ------------------------------------------------------------------ keys

/// Brute-force alignment: tries every way each `**` can swallow chunks.
pub fn key_matches(pattern: &[&str], key: &[&str]) -> bool {
    match pattern.split_first() {
        None => key.is_empty(),
        Some((&"**", rest)) => (0..=key.len()).any(|n| key_matches(rest, &key[n..])),
        Some((&"*", rest)) => !key.is_empty() && key_matches(rest, &key[1..]),
        Some((lit, rest)) => key.first() == Some(lit) && key_matches(rest, &key[1..]),
    }
}

/// Recursive chunk alignment of two patterns: is there a key both match?
pub fn patterns_intersect(p: &[&str], q: &[&str]) -> bool {
    match (p.split_first(), q.split_first()) {
        (None, None) => true,
        (Some((&"**", pr)), _) if patterns_intersect(pr, q) => true,
        (_, Some((&"**", qr))) if patterns_intersect(p, qr) => true,
        (Some((&"**", _)), Some((_, qr))) => patterns_intersect(p, qr),
        (Some((_, pr)), Some((&"**", _))) => patterns_intersect(pr, q),
        (Some((a, pr)), Some((b, qr))) => {
            (a == b || *a == "*" || *b == "*") && patterns_intersect(pr, qr)
        }
        _ => false,
    }
}

pub fn split(text: &str) -> Vec<&str> {
    text.split('/').collect()
}

/// All strings over `alphabet` with between 1 and `max_len` chunks.
pub fn enumerate_keys(alphabet: &[&str], max_len: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut layer: Vec<String> = alphabet.iter().map(|s| s.to_string()).collect();
    for _ in 0..max_len {
        out.extend(layer.iter().cloned());
        layer = layer
            .iter()
            .flat_map(|p| alphabet.iter().map(move |a| format!("{p}/{a}")))
            .collect();
    }
    out
}

/// Canonical expressions (no `**/**`) over `alphabet` with 1..=max_len chunks.
pub fn enumerate_exprs(alphabet: &[&str], max_len: usize) -> Vec<String> {
    enumerate_keys(alphabet, max_len)
        .into_iter()
        .filter(|e| !e.contains("**/**"))
        .collect()
}

// ----------------------------------------------------------------- graphs

/// Simple paths by exhaustive DFS over an undirected edge list.
pub fn simple_paths(edges: &[(String, String)], from: &str, to: &str) -> Vec<Vec<String>> {
    let mut adj: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (a, b) in edges {
        adj.entry(a).or_default().insert(b);
        adj.entry(b).or_default().insert(a);
    }
    let mut out = Vec::new();
    let mut path = vec![from.to_string()];
    fn go<'a>(
        u: &'a str,
        to: &str,
        adj: &BTreeMap<&'a str, BTreeSet<&'a str>>,
        path: &mut Vec<String>,
        out: &mut Vec<Vec<String>>,
    ) {
        if u == to {
            out.push(path.clone());
            return;
        }
        for v in adj.get(u).into_iter().flatten() {
            if !path.iter().any(|p| p == v) {
                path.push(v.to_string());
                go(v, to, adj, path, out);
                path.pop();
            }
        }
    }
    go(from, to, &adj, &mut path, &mut out);
    out
}

/// Least-squares slope of ln(y) against ln(x).
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

// -------------------------------------------------------------- fixtures

pub mod checks;
pub mod gen;

pub fn workspace_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/workspace")
}

// ------------------------------------------------------------ kinematics

pub type Mat4 = [[f64; 4]; 4];

pub fn mat_identity() -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn mat_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                m[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    m
}

pub fn mat_translation(t: [f64; 3]) -> Mat4 {
    let mut m = mat_identity();
    m[0][3] = t[0];
    m[1][3] = t[1];
    m[2][3] = t[2];
    m
}

/// Rodrigues' formula for a rotation of `angle` about unit `axis`.
pub fn mat_rotation(axis: [f64; 3], angle: f64) -> Mat4 {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
    let (s, c) = angle.sin_cos();
    let v = 1.0 - c;
    [
        [c + x * x * v, x * y * v - z * s, x * z * v + y * s, 0.0],
        [y * x * v + z * s, c + y * y * v, y * z * v - x * s, 0.0],
        [z * x * v - y * s, z * y * v + x * s, c + z * z * v, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

/// Serial chain: each joint translates by its offset, then rotates.
pub fn chain_matrix(joints: &[([f64; 3], f64, [f64; 3])]) -> Mat4 {
    joints
        .iter()
        .fold(mat_identity(), |m, (axis, angle, offset)| {
            mat_mul(
                &mat_mul(&m, &mat_translation(*offset)),
                &mat_rotation(*axis, *angle),
            )
        })
}

/// Rotation matrix of a unit quaternion `[w, x, y, z]`.
pub fn quat_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

// ----------------------------------------------------------------- graphs

/// Every dependency appears before its dependent, and `order` is a
/// permutation of the task ids.
pub fn is_topological(order: &[String], deps: &BTreeMap<String, Vec<String>>) -> bool {
    if order.len() != deps.len() || order.iter().collect::<BTreeSet<_>>().len() != order.len() {
        return false;
    }
    let pos: BTreeMap<&str, usize> = order
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    deps.iter().all(|(t, ds)| {
        let Some(&pt) = pos.get(t.as_str()) else {
            return false;
        };
        ds.iter()
            .all(|d| pos.get(d.as_str()).is_some_and(|&pd| pd < pt))
    })
}

/// `start` and everything that transitively depends on it.
pub fn reverse_reachable(deps: &BTreeMap<String, Vec<String>>, start: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::from([start.to_owned()]);
    loop {
        let before = out.len();
        for (t, ds) in deps {
            if ds.iter().any(|d| out.contains(d)) {
                out.insert(t.clone());
            }
        }
        if out.len() == before {
            return out;
        }
    }
}

/// Every topological order, by exhaustive permutation.
pub fn all_topological_orders(deps: &BTreeMap<String, Vec<String>>) -> Vec<Vec<String>> {
    fn permute(items: &mut Vec<String>, k: usize, out: &mut Vec<Vec<String>>) {
        if k == items.len() {
            out.push(items.clone());
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, out);
            items.swap(k, i);
        }
    }
    let mut items: Vec<String> = deps.keys().cloned().collect();
    let mut perms = Vec::new();
    permute(&mut items, 0, &mut perms);
    perms.retain(|p| is_topological(p, deps));
    perms.sort();
    perms
}
