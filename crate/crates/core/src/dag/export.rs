//! Offline export: one JSON document per node, plus an edge list.

use std::io::{BufRead, Write};

use super::{Dag, DagNode};

pub fn export_jsonl<W: Write>(dag: &Dag, mut out: W) -> std::io::Result<()> {
    for n in dag.iter() {
        serde_json::to_writer(&mut out, n)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// `node,source` rows, one per reference.
pub fn export_edges_csv<W: Write>(dag: &Dag, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "source"])?;
    for n in dag.iter() {
        for s in &n.sources {
            w.write_record([n.id.to_hex(), s.to_hex()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> std::io::Result<Vec<DagNode>> {
    let mut nodes = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        nodes.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Keypair;
    use crate::dag::{NodeDraft, NodeKind, Payload};

    #[test]
    fn test_export_roundtrip() {
        let k = Keypair::derive(0, 0);
        let mut dag = Dag::new();
        let g = dag
            .append_node(NodeDraft::bare(k.id(), NodeKind::Genesis, vec![], 0, Payload::None).sign(&k))
            .unwrap();
        let mut d = NodeDraft::bare(k.id(), NodeKind::ModelUpdate, vec![g], 1, Payload::None);
        d.source_evals = vec![0.25];
        dag.append_node(d.sign(&k)).unwrap();

        let mut buf = Vec::new();
        export_jsonl(&dag, &mut buf).unwrap();
        let back = read_jsonl(buf.as_slice()).unwrap();
        let mut rebuilt = Dag::new();
        for n in back {
            rebuilt.append_node(n).unwrap();
        }
        assert_eq!(rebuilt.len(), 2);

        let mut edges = Vec::new();
        export_edges_csv(&dag, &mut edges).unwrap();
        assert_eq!(String::from_utf8(edges).unwrap().lines().count(), 2);
    }
}
