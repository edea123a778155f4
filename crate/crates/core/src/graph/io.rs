//! Readers and writers for edge lists, the TU benchmark layout and graph6.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{Dataset, Graph, Task};
use crate::error::{CocnError, Result};

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CocnError::io(path, e))
}

/// Loads a whitespace-separated edge list, one `i j` pair per line.
///
/// An optional `n=<count>` header fixes the node count; otherwise it is the
/// largest index plus one. Blank lines and `#` comments are ignored.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Graph> {
    parse_edge_list(&read_to_string(path.as_ref())?)
}

pub fn parse_edge_list(text: &str) -> Result<Graph> {
    let mut header_n = None;
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("n=") {
            if header_n.is_some() || !edges.is_empty() {
                return Err(CocnError::Parse {
                    line: lineno + 1,
                    msg: "node-count header must come first".into(),
                });
            }
            header_n = Some(rest.trim().parse::<usize>().map_err(|e| CocnError::Parse {
                line: lineno + 1,
                msg: format!("bad node count: {e}"),
            })?);
            continue;
        }
        let mut parts = line.split_whitespace();
        let mut next = || -> Result<usize> {
            let tok = parts.next().ok_or_else(|| CocnError::Parse {
                line: lineno + 1,
                msg: "expected two node indices".into(),
            })?;
            tok.parse::<usize>().map_err(|e| CocnError::Parse {
                line: lineno + 1,
                msg: format!("bad node index {tok:?}: {e}"),
            })
        };
        let (a, b) = (next()?, next()?);
        if parts.next().is_some() {
            return Err(CocnError::Parse {
                line: lineno + 1,
                msg: "trailing tokens after edge".into(),
            });
        }
        edges.push((a, b));
    }
    let n = match header_n {
        Some(n) => n,
        None => edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(1),
    };
    Graph::new(n, edges)
}

/// Writes `g` as an edge list with an explicit `n=` header.
pub fn write_edge_list(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("n={}\n", g.n());
    for &(a, b) in g.edges() {
        let _ = writeln!(out, "{a} {b}");
    }
    fs::write(path.as_ref(), out).map_err(|e| CocnError::io(path.as_ref(), e))
}

fn find_prefix(dir: &Path) -> Result<String> {
    let entries = fs::read_dir(dir).map_err(|e| CocnError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CocnError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(prefix) = name.strip_suffix("_A.txt") {
            return Ok(prefix.to_string());
        }
    }
    Err(CocnError::MissingFile(dir.join("<DS>_A.txt")))
}

fn read_int_lines(path: &Path) -> Result<Vec<i64>> {
    if !path.exists() {
        return Err(CocnError::MissingFile(path.to_path_buf()));
    }
    read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<i64>().map_err(|e| CocnError::Parse {
                line: i + 1,
                msg: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

/// Loads a graph-classification benchmark stored in the TU text layout.
///
/// Graph labels are remapped to `[0, num_classes)` in sorted order and node
/// labels, when present, become one-hot feature columns in sorted order.
pub fn load_tu_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let prefix = find_prefix(dir)?;
    let file = |suffix: &str| -> PathBuf { dir.join(format!("{prefix}_{suffix}.txt")) };

    let indicator = read_int_lines(&file("graph_indicator"))?;
    let graph_labels = read_int_lines(&file("graph_labels"))?;
    let node_label_path = file("node_labels");
    let node_labels = if node_label_path.exists() {
        Some(read_int_lines(&node_label_path)?)
    } else {
        None
    };

    let num_graphs = graph_labels.len();
    // Node ids are 1-based in the file; graph ids are 1-based and contiguous.
    let mut graph_of = Vec::with_capacity(indicator.len());
    let mut counts = vec![0usize; num_graphs];
    let mut local = Vec::with_capacity(indicator.len());
    for (node, &gid) in indicator.iter().enumerate() {
        if gid < 1 || gid as usize > num_graphs {
            return Err(CocnError::Integrity(format!(
                "node {} assigned to graph {gid}, but only {num_graphs} graph labels exist",
                node + 1
            )));
        }
        let g = gid as usize - 1;
        graph_of.push(g);
        local.push(counts[g]);
        counts[g] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(CocnError::Integrity(format!(
            "graph {} has no nodes",
            empty + 1
        )));
    }
    if let Some(labels) = &node_labels {
        if labels.len() != indicator.len() {
            return Err(CocnError::Integrity(format!(
                "{} node labels for {} nodes",
                labels.len(),
                indicator.len()
            )));
        }
    }

    let a_path = file("A");
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (lineno, line) in read_to_string(&a_path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| CocnError::Parse {
            line: lineno + 1,
            msg: format!("{}: {msg}", a_path.display()),
        };
        let (l, r) = line
            .split_once(',')
            .ok_or_else(|| parse_err("expected `i, j`".into()))?;
        let a: usize = l.trim().parse().map_err(|e| parse_err(format!("{e}")))?;
        let b: usize = r.trim().parse().map_err(|e| parse_err(format!("{e}")))?;
        if a == 0 || b == 0 || a > indicator.len() || b > indicator.len() {
            return Err(CocnError::Integrity(format!(
                "edge ({a}, {b}) references a node outside 1..={}",
                indicator.len()
            )));
        }
        let (ga, gb) = (graph_of[a - 1], graph_of[b - 1]);
        if ga != gb {
            return Err(CocnError::Integrity(format!(
                "edge ({a}, {b}) joins graphs {} and {}",
                ga + 1,
                gb + 1
            )));
        }
        edges[ga].push((local[a - 1], local[b - 1]));
    }

    let class_ids: BTreeSet<i64> = graph_labels.iter().copied().collect();
    let class_index: BTreeMap<i64, usize> =
        class_ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let feature_index: Option<BTreeMap<i64, usize>> = node_labels.as_ref().map(|ls| {
        let set: BTreeSet<i64> = ls.iter().copied().collect();
        set.into_iter().enumerate().map(|(i, c)| (c, i)).collect()
    });

    let mut features: Vec<Option<Array2<f64>>> = match &feature_index {
        Some(idx) => counts
            .iter()
            .map(|&c| Some(Array2::zeros((c, idx.len()))))
            .collect(),
        None => vec![None; num_graphs],
    };
    if let (Some(labels), Some(idx)) = (&node_labels, &feature_index) {
        for (node, &lab) in labels.iter().enumerate() {
            let g = graph_of[node];
            if let Some(x) = features[g].as_mut() {
                x[[local[node], idx[&lab]]] = 1.0;
            }
        }
    }

    let mut graphs = Vec::with_capacity(num_graphs);
    for (g, (edge_list, feats)) in edges.into_iter().zip(features).enumerate() {
        let mut graph =
            Graph::new(counts[g], edge_list)?.with_graph_label(class_index[&graph_labels[g]]);
        if let Some(x) = feats {
            graph = graph.with_features(x)?;
        }
        graphs.push(graph);
    }
    Dataset::new(graphs, Task::GraphClassification, class_index.len())
}

/// Decodes a single graph6 line (small graphs, n < 63).
pub fn parse_graph6_line(line: &str) -> Result<Graph> {
    let line = line.trim();
    let line = line.strip_prefix(">>graph6<<").unwrap_or(line);
    let bytes = line.as_bytes();
    let bad = |msg: &str| CocnError::Parse {
        line: 1,
        msg: format!("graph6: {msg}"),
    };
    let first = *bytes.first().ok_or_else(|| bad("empty line"))?;
    if !(63..=125).contains(&first) {
        return Err(bad("only graphs with fewer than 63 nodes are supported"));
    }
    let n = (first - 63) as usize;
    let mut bits = Vec::with_capacity(6 * (bytes.len() - 1));
    for &b in &bytes[1..] {
        if !(63..=126).contains(&b) {
            return Err(bad("byte outside the printable graph6 range"));
        }
        let v = b - 63;
        for k in (0..6).rev() {
            bits.push((v >> k) & 1 == 1);
        }
    }
    let needed = n * n.saturating_sub(1) / 2;
    if bits.len() < needed {
        return Err(bad("truncated adjacency data"));
    }
    let mut edges = Vec::new();
    let mut k = 0;
    for j in 1..n {
        for i in 0..j {
            if bits[k] {
                edges.push((i, j));
            }
            k += 1;
        }
    }
    Graph::new(n.max(1), edges)
}

pub fn write_graph6_line(g: &Graph) -> String {
    let n = g.n();
    assert!(n < 63, "graph6 writer handles n < 63");
    let adj = g.adjacency_dense();
    let mut bits = Vec::new();
    for j in 1..n {
        for i in 0..j {
            bits.push(adj[[i, j]] != 0.0);
        }
    }
    while bits.len() % 6 != 0 {
        bits.push(false);
    }
    let mut out = String::new();
    out.push((n as u8 + 63) as char);
    for chunk in bits.chunks(6) {
        let v = chunk.iter().fold(0u8, |acc, &b| (acc << 1) | b as u8);
        out.push((v + 63) as char);
    }
    out
}

/// Loads every graph in a graph6 file (one per line).
pub fn load_graph6(path: impl AsRef<Path>) -> Result<Vec<Graph>> {
    let text = read_to_string(path.as_ref())?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_graph6_line(l).map_err(|e| match e {
                CocnError::Parse { msg, .. } => CocnError::Parse { line: i + 1, msg },
                other => other,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_pairs() {
        let g = parse_edge_list("0 1\n1 2").unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn reverse_duplicate_is_dropped() {
        let g = parse_edge_list("0 1\n1 0").unwrap();
        assert_eq!(g.n(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn header_overrides_node_count() {
        let g = parse_edge_list("n=5\n0 4\n").unwrap();
        assert_eq!(g.n(), 5);
        assert_eq!(g.edges(), &[(0, 4)]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match parse_edge_list("0 1\n1 x\n") {
            Err(CocnError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn index_beyond_header_is_a_bounds_error() {
        assert!(matches!(
            parse_edge_list("n=3\n0 3\n"),
            Err(CocnError::Bounds { index: 3, n: 3 })
        ));
    }

    #[test]
    fn graph6_known_encoding() {
        // Path on three nodes: edges (0,1), (1,2) -> bits 1,0,1.
        let g = parse_graph6_line("Bg").unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(write_graph6_line(&g), "Bg");
    }

    fn write_tu(dir: &Path, a: &str, ind: &str, gl: &str, nl: Option<&str>) {
        fs::write(dir.join("TOY_A.txt"), a).unwrap();
        fs::write(dir.join("TOY_graph_indicator.txt"), ind).unwrap();
        fs::write(dir.join("TOY_graph_labels.txt"), gl).unwrap();
        if let Some(nl) = nl {
            fs::write(dir.join("TOY_node_labels.txt"), nl).unwrap();
        }
    }

    #[test]
    fn tu_two_graph_partition() {
        let dir = tempfile::tempdir().unwrap();
        write_tu(
            dir.path(),
            "1, 2\n2, 1\n3, 4\n4, 5\n",
            "1\n1\n2\n2\n2\n",
            "-1\n1\n",
            Some("3\n0\n0\n3\n7\n"),
        );
        let ds = load_tu_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.graphs[0].n(), 2);
        assert_eq!(ds.graphs[1].n(), 3);
        assert_eq!(ds.graphs[1].edges(), &[(0, 1), (1, 2)]);
        assert_eq!(ds.graphs[0].graph_label(), Some(0));
        assert_eq!(ds.graphs[1].graph_label(), Some(1));
        // labels {0, 3, 7} -> columns 0, 1, 2
        let x = ds.graphs[1].features().unwrap();
        assert_eq!(x.row(0).to_vec(), vec![1.0, 0.0, 0.0]);
        assert_eq!(x.row(1).to_vec(), vec![0.0, 1.0, 0.0]);
        assert_eq!(x.row(2).to_vec(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn tu_missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("TOY_A.txt"), "1, 2\n").unwrap();
        fs::write(dir.path().join("TOY_graph_indicator.txt"), "1\n1\n").unwrap();
        match load_tu_dataset(dir.path()) {
            Err(CocnError::MissingFile(p)) => {
                assert!(p.ends_with("TOY_graph_labels.txt"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tu_cross_graph_edge_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        write_tu(dir.path(), "1, 3\n", "1\n1\n2\n", "0\n1\n", None);
        assert!(matches!(
            load_tu_dataset(dir.path()),
            Err(CocnError::Integrity(_))
        ));
    }
}
