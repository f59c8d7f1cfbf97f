//! Hierarchical key expressions.
//!
//! Keys are slash-separated chunks. A chunk is a literal, `*` (exactly one
//! chunk) or `**` (zero or more chunks). Concrete keys contain no wildcard and
//! always have at least one chunk.
//!
//! Matching between two expressions is decided on the regular languages they
//! denote. Because an expression only ever compares a chunk for equality with
//! its own literals, every chunk outside the union of literals of both sides
//! behaves identically, so one extra "other" symbol is enough to make the
//! alphabet finite. `intersects` is then a reachability question on the product
//! automaton and `includes` a subset-construction inclusion check.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const SEPARATOR: char = '/';

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KeyError {
    #[error("key expression is empty")]
    EmptyKey,
    #[error("key expression `{0}` contains an empty chunk")]
    EmptyChunk(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Chunk {
    Literal(String),
    Star,
    DoubleStar,
}

impl Chunk {
    pub fn is_wild(&self) -> bool {
        !matches!(self, Chunk::Literal(_))
    }

    fn as_str(&self) -> &str {
        match self {
            Chunk::Literal(s) => s,
            Chunk::Star => "*",
            Chunk::DoubleStar => "**",
        }
    }
}

/// A canonical key expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyExpr {
    chunks: Vec<Chunk>,
}

impl KeyExpr {
    pub fn parse(text: &str) -> Result<Self, KeyError> {
        if text.is_empty() {
            return Err(KeyError::EmptyKey);
        }
        let mut chunks: Vec<Chunk> = Vec::new();
        for raw in text.split(SEPARATOR) {
            let chunk = match raw {
                "" => return Err(KeyError::EmptyChunk(text.to_owned())),
                "*" => Chunk::Star,
                "**" => Chunk::DoubleStar,
                lit => Chunk::Literal(lit.to_owned()),
            };
            if chunk == Chunk::DoubleStar && chunks.last() == Some(&Chunk::DoubleStar) {
                continue;
            }
            chunks.push(chunk);
        }
        Ok(KeyExpr { chunks })
    }

    /// Builds a key from literal parts, each of which may itself contain `/`.
    pub fn join<I, S>(parts: I) -> Result<Self, KeyError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let text = parts
            .into_iter()
            .map(|p| p.as_ref().to_owned())
            .collect::<Vec<_>>()
            .join("/");
        Self::parse(&text)
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// True when the expression contains no wildcard.
    pub fn is_concrete(&self) -> bool {
        self.chunks.iter().all(|c| !c.is_wild())
    }

    /// Number of bytes of the rendered form.
    pub fn encoded_len(&self) -> usize {
        self.chunks.iter().map(|c| c.as_str().len()).sum::<usize>() + self.chunks.len() - 1
    }

    /// Whether the concrete key `key` is matched by `self`.
    pub fn matches(&self, key: &KeyExpr) -> bool {
        debug_assert!(key.is_concrete());
        if self.is_concrete() {
            return self == key;
        }
        let pat = &self.chunks;
        let key = &key.chunks;
        // reachable[j]: pattern prefix consumed so far can align with key[..j]
        let mut reach = vec![false; key.len() + 1];
        reach[0] = true;
        for chunk in pat {
            let mut next = vec![false; key.len() + 1];
            match chunk {
                Chunk::DoubleStar => {
                    let mut on = false;
                    for j in 0..=key.len() {
                        on |= reach[j];
                        next[j] = on;
                    }
                }
                Chunk::Star => {
                    next[1..=key.len()].copy_from_slice(&reach[..key.len()]);
                }
                Chunk::Literal(l) => {
                    for j in 0..key.len() {
                        next[j + 1] = reach[j] && matches!(&key[j], Chunk::Literal(x) if x == l);
                    }
                }
            }
            reach = next;
        }
        reach[key.len()]
    }

    /// True iff some concrete key is matched by both expressions.
    pub fn intersects(&self, other: &KeyExpr) -> bool {
        if self.is_concrete() {
            return other.matches(self);
        }
        if other.is_concrete() {
            return self.matches(other);
        }
        let alphabet = Alphabet::of(self, other);
        let a = Nfa::new(self);
        let b = Nfa::new(other);
        // state: (pos in a, pos in b, consumed at least one chunk)
        let mut seen = HashSet::new();
        let mut queue = VecDeque::new();
        for &i in &a.closure(&[0]) {
            for &j in &b.closure(&[0]) {
                if seen.insert((i, j, false)) {
                    queue.push_back((i, j, false));
                }
            }
        }
        while let Some((i, j, any)) = queue.pop_front() {
            if any && a.accepts(i) && b.accepts(j) {
                return true;
            }
            for sym in alphabet.symbols() {
                let na = a.step(&[i], sym);
                if na.is_empty() {
                    continue;
                }
                let nb = b.step(&[j], sym);
                for &x in &na {
                    for &y in &nb {
                        if seen.insert((x, y, true)) {
                            queue.push_back((x, y, true));
                        }
                    }
                }
            }
        }
        false
    }

    /// True iff every concrete key matched by `other` is matched by `self`.
    pub fn includes(&self, other: &KeyExpr) -> bool {
        if other.is_concrete() {
            return self.matches(other);
        }
        if self.chunks == [Chunk::DoubleStar] {
            return true;
        }
        let alphabet = Alphabet::of(self, other);
        let a = Nfa::new(self);
        let b = Nfa::new(other);
        let start = (a.closure(&[0]), b.closure(&[0]), false);
        let mut seen = HashSet::new();
        seen.insert(start.clone());
        let mut queue = VecDeque::from([start]);
        while let Some((sa, sb, any)) = queue.pop_front() {
            let b_acc = sb.iter().any(|&j| b.accepts(j));
            let a_acc = sa.iter().any(|&i| a.accepts(i));
            if any && b_acc && !a_acc {
                return false;
            }
            for sym in alphabet.symbols() {
                let nb = b.step(&sb, sym);
                if nb.is_empty() {
                    continue;
                }
                let na = a.step(&sa, sym);
                let next = (na, nb, true);
                if seen.insert(next.clone()) {
                    queue.push_back(next);
                }
            }
        }
        true
    }
}

/// Literals of both expressions plus one symbol standing for every other chunk.
struct Alphabet {
    literals: Vec<String>,
}

#[derive(Clone, Copy)]
enum Sym<'a> {
    Lit(&'a str),
    Other,
}

impl Alphabet {
    fn of(a: &KeyExpr, b: &KeyExpr) -> Self {
        let literals: BTreeSet<String> = a
            .chunks
            .iter()
            .chain(&b.chunks)
            .filter_map(|c| match c {
                Chunk::Literal(l) => Some(l.clone()),
                _ => None,
            })
            .collect();
        Alphabet {
            literals: literals.into_iter().collect(),
        }
    }

    fn symbols(&self) -> impl Iterator<Item = Sym<'_>> {
        self.literals
            .iter()
            .map(|l| Sym::Lit(l))
            .chain(std::iter::once(Sym::Other))
    }
}

struct Nfa<'a> {
    chunks: &'a [Chunk],
}

impl<'a> Nfa<'a> {
    fn new(expr: &'a KeyExpr) -> Self {
        Nfa {
            chunks: &expr.chunks,
        }
    }

    fn accepts(&self, pos: usize) -> bool {
        pos == self.chunks.len()
    }

    /// Epsilon closure: a `**` may match nothing.
    fn closure(&self, states: &[usize]) -> Vec<usize> {
        let mut out = BTreeSet::new();
        for &s in states {
            let mut p = s;
            out.insert(p);
            while p < self.chunks.len() && self.chunks[p] == Chunk::DoubleStar {
                p += 1;
                out.insert(p);
            }
        }
        out.into_iter().collect()
    }

    fn step(&self, states: &[usize], sym: Sym<'_>) -> Vec<usize> {
        let mut next = Vec::new();
        for &s in states {
            match self.chunks.get(s) {
                None => {}
                Some(Chunk::DoubleStar) => next.push(s),
                Some(Chunk::Star) => next.push(s + 1),
                Some(Chunk::Literal(l)) => {
                    if matches!(sym, Sym::Lit(x) if x == l) {
                        next.push(s + 1);
                    }
                }
            }
        }
        self.closure(&next)
    }
}

impl fmt::Display for KeyExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.chunks.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            f.write_str(c.as_str())?;
        }
        Ok(())
    }
}

impl FromStr for KeyExpr {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        KeyExpr::parse(s)
    }
}

impl Serialize for KeyExpr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KeyExpr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        KeyExpr::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Put,
    Delete,
    Query,
    Reply,
}

/// A timestamped payload on a concrete key.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub key: KeyExpr,
    pub payload: Vec<u8>,
    pub kind: SampleKind,
    pub source: String,
    pub sequence: u64,
    /// Simulated publish time in milliseconds.
    pub timestamp: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(s: &str) -> KeyExpr {
        KeyExpr::parse(s).unwrap()
    }

    #[test]
    fn parse_literal_chunks() {
        let key = k("robot1/joints/3/state");
        assert_eq!(key.len(), 4);
        assert!(key.is_concrete());
    }

    #[test]
    fn parse_collapses_double_wildcards() {
        assert_eq!(
            k("a/**/**/b").chunks(),
            &[
                Chunk::Literal("a".into()),
                Chunk::DoubleStar,
                Chunk::Literal("b".into())
            ]
        );
        assert_eq!(k("a/**/**/b").to_string(), "a/**/b");
    }

    #[test]
    fn parse_errors() {
        assert_eq!(KeyExpr::parse(""), Err(KeyError::EmptyKey));
        assert!(matches!(
            KeyExpr::parse("a//b"),
            Err(KeyError::EmptyChunk(_))
        ));
        assert!(matches!(KeyExpr::parse("/a"), Err(KeyError::EmptyChunk(_))));
        assert!(matches!(KeyExpr::parse("a/"), Err(KeyError::EmptyChunk(_))));
    }

    #[test]
    fn intersects_examples() {
        assert!(k("a/b").intersects(&k("a/b")));
        assert!(k("robot1/joints/**").intersects(&k("robot1/joints/3/position")));
        assert!(!k("robot1/*/state").intersects(&k("robot2/joint/state")));
        assert!(k("a/*/c").intersects(&k("**/c")));
        assert!(!k("a/*").intersects(&k("a")));
        assert!(k("a/**").intersects(&k("a")));
    }

    #[test]
    fn includes_examples() {
        assert!(k("**").includes(&k("anything/at/all")));
        assert!(!k("a/*").includes(&k("a/b/c")));
        assert!(k("a/**/c").includes(&k("a/b/c")));
        assert!(k("*/**").includes(&k("**")));
        assert!(k("*/**").includes(&k("**/x")));
        assert!(!k("*").includes(&k("**")));
        assert!(k("a/**").includes(&k("a/*/b")));
        assert!(!k("a/*/b").includes(&k("a/**/b")));
    }

    #[test]
    fn matching_is_case_sensitive() {
        assert!(!k("Robot").intersects(&k("robot")));
    }

    #[test]
    fn encoded_len_matches_display() {
        for s in ["a", "a/b/c", "**/x", "tf/world/robot1_base"] {
            assert_eq!(k(s).encoded_len(), s.len());
        }
    }

    #[test]
    fn serde_uses_text_form() {
        let json = serde_json::to_string(&k("a/**/b")).unwrap();
        assert_eq!(json, "\"a/**/b\"");
        let back: KeyExpr = serde_json::from_str("\"a/**/**/b\"").unwrap();
        assert_eq!(back, k("a/**/b"));
        assert!(serde_json::from_str::<KeyExpr>("\"a//b\"").is_err());
    }
}
