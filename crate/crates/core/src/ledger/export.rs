//! Ledger dumps. JSON has `nodes` and `edges`; every hash is lowercase hex.
//!
//! Node fields: `id`, `kind` (`"block"` or `"cblock"`), `tournament_no`, and
//! for blocks `bucket_id`, `proposer`, `byte_size`, `tx_count`, `fouls`,
//! `powin`; for C-Blocks `included_count`.
//! Edge fields: `from`, `to`, `kind`. A `"prev"` edge runs from a block or
//! C-Block to the C-Block it extends; an `"include"` edge runs from a C-Block
//! to a block it includes. All edges point back in time.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;

use super::LedgerStore;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerDump {
    pub nodes: Vec<DumpNode>,
    pub edges: Vec<DumpEdge>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpNode {
    pub id: Digest,
    pub kind: String,
    pub tournament_no: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposer: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub byte_size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fouls: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub powin: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub included_count: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpEdge {
    pub from: Digest,
    pub to: Digest,
    pub kind: String,
}

impl LedgerDump {
    /// Nodes ordered by tournament, C-Blocks after blocks, then by hash.
    pub fn from_store(store: &LedgerStore) -> LedgerDump {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for b in store.blocks() {
            nodes.push(DumpNode {
                id: b.hash.0,
                kind: "block".into(),
                tournament_no: b.tournament_no,
                bucket_id: Some(b.bucket_id),
                proposer: Some(b.proposer.0),
                byte_size: Some(b.byte_size),
                tx_count: Some(b.txs.len()),
                fouls: Some(store.fouls_for(b.tournament_no, b.proposer)),
                powin: Some(b.powin.id()),
                included_count: None,
            });
            edges.push(DumpEdge {
                from: b.hash.0,
                to: b.prev_cblock.0,
                kind: "prev".into(),
            });
        }
        for c in store.cblocks() {
            nodes.push(DumpNode {
                id: c.hash.0,
                kind: "cblock".into(),
                tournament_no: c.tournament_no,
                bucket_id: None,
                proposer: None,
                byte_size: None,
                tx_count: None,
                fouls: None,
                powin: None,
                included_count: Some(c.included.len()),
            });
            if !c.is_genesis() {
                edges.push(DumpEdge {
                    from: c.hash.0,
                    to: c.prev_cblock.0,
                    kind: "prev".into(),
                });
            }
            for b in &c.included {
                edges.push(DumpEdge {
                    from: c.hash.0,
                    to: b.0,
                    kind: "include".into(),
                });
            }
        }
        nodes.sort_by(|a, b| {
            (a.tournament_no, a.kind == "cblock", a.id).cmp(&(b.tournament_no, b.kind == "cblock", b.id))
        });
        edges.sort_by(|a, b| (a.from, a.to, &a.kind).cmp(&(b.from, b.to, &b.kind)));
        LedgerDump { nodes, edges }
    }
}

pub fn ledger_to_json(store: &LedgerStore) -> serde_json::Result<String> {
    serde_json::to_string_pretty(&LedgerDump::from_store(store))
}

/// Graphviz rendering: blocks are boxes, C-Blocks ellipses, one rank per
/// tournament layer.
pub fn ledger_to_dot(store: &LedgerStore) -> String {
    let dump = LedgerDump::from_store(store);
    let short = |d: &Digest| d.to_hex()[..12].to_string();
    let mut out = String::from("digraph cdag {\n  rankdir=RL;\n");
    let mut layer: Option<(u64, bool)> = None;
    for n in &dump.nodes {
        let key = (n.tournament_no, n.kind == "cblock");
        if layer != Some(key) {
            if layer.is_some() {
                out.push_str("  }\n");
            }
            let _ = writeln!(out, "  {{ rank=same;");
            layer = Some(key);
        }
        let (shape, label) = if n.kind == "cblock" {
            ("ellipse", format!("C{} {}", n.tournament_no, short(&n.id)))
        } else {
            (
                "box",
                format!(
                    "t{} b{} p{}\\n{}",
                    n.tournament_no,
                    n.bucket_id.unwrap_or(0),
                    n.proposer.unwrap_or(0),
                    short(&n.id)
                ),
            )
        };
        let _ = writeln!(out, "    \"{}\" [shape={shape}, label=\"{label}\"];", n.id);
    }
    if layer.is_some() {
        out.push_str("  }\n");
    }
    for e in &dump.edges {
        let style = if e.kind == "include" { " [style=dashed]" } else { "" };
        let _ = writeln!(out, "  \"{}\" -> \"{}\"{style};", e.from, e.to);
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::super::fixtures::*;
    use super::*;

    fn three_slots() -> LedgerStore {
        let mut s = LedgerStore::new(3);
        let mut prev = s.genesis();
        for t in 1..=3u64 {
            let bs: Vec<_> = (0..2).map(|i| block(prev, t, i, i, &[t * 10 + i as u64], 3)).collect();
            prev = converge(&mut s, t, prev, &bs);
        }
        s
    }

    #[test]
    fn json_round_trips() {
        let s = three_slots();
        let json = ledger_to_json(&s).unwrap();
        let back: LedgerDump = serde_json::from_str(&json).unwrap();
        assert_eq!(back, LedgerDump::from_store(&s));
        assert_eq!(back.nodes.len(), 6 + 4);
    }

    /// Every edge goes from a later layer to an earlier one, with C-Block
    /// layers sitting between block layers: block t -> C-Block t-1 and
    /// C-Block t -> block t or C-Block t-1.
    #[test]
    fn layering_is_acyclic() {
        let s = three_slots();
        let d = LedgerDump::from_store(&s);
        let layer: BTreeMap<Digest, u64> = d
            .nodes
            .iter()
            .map(|n| (n.id, 2 * n.tournament_no + (n.kind == "cblock") as u64))
            .collect();
        for e in &d.edges {
            assert!(layer[&e.from] > layer[&e.to], "{e:?}");
        }
        let dot = ledger_to_dot(&s);
        assert!(dot.starts_with("digraph cdag {"));
        assert_eq!(dot.matches(" -> ").count(), d.edges.len());
    }
}
