//! TUDataset flat files, JSON and CSV exports.
//!
//! Floats are written in their shortest round-trip form, so every exported
//! value parses back to the identical `f64`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowTrajectory;
use crate::generators::{DatasetRecord, LabeledDataset};
use crate::graph::{Graph, GraphError, GraphRecord};
use crate::kernels::{GramMatrix, KernelKind};
use crate::svm::CvReport;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("missing file {0}")]
    Missing(PathBuf),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("edge on line {line} names node {node}, but there are {total} nodes")]
    DanglingNode { line: usize, node: usize, total: usize },
    #[error("edge on line {line} joins nodes of graphs {first} and {second}")]
    CrossGraphEdge { line: usize, first: usize, second: usize },
    #[error("graph indicator is not contiguous at line {line}")]
    NonContiguous { line: usize },
    #[error("{graphs} graphs but {labels} graph labels")]
    LabelCount { graphs: usize, labels: usize },
    #[error("{nodes} nodes but {labels} node labels")]
    NodeLabelCount { nodes: usize, labels: usize },
    #[error("schema version {found}, expected {expected}")]
    Schema { found: u32, expected: u32 },
    #[error("expected a {expected} document, found {found}")]
    Kind { expected: String, found: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Shortest decimal that parses back to `x`; exponent form for very small or
/// very large magnitudes.
pub fn format_float(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let a = x.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// Serde adapter writing non-finite floats as the strings `inf`, `-inf` and
/// `nan`, which plain JSON cannot hold.
pub mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&super::format_float(*x))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a float: {other}"))),
            },
        }
    }
}

/// A TUDataset collection.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub graphs: Vec<Graph>,
    /// Graph labels as written in the file.
    pub raw_labels: Vec<i64>,
    /// Graph labels mapped to `0..k` in ascending order of the raw value.
    pub targets: Vec<usize>,
    /// Per-node labels, only when requested; the graphs then carry them too,
    /// mapped to `0..m` in ascending order of the raw value.
    pub node_labels: Option<Vec<Vec<i64>>>,
    pub source: PathBuf,
}

impl DatasetBundle {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn mean_order(&self) -> f64 {
        if self.graphs.is_empty() {
            return 0.0;
        }
        self.graphs.iter().map(Graph::order).sum::<usize>() as f64 / self.graphs.len() as f64
    }

    pub fn class_counts(&self) -> BTreeMap<i64, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.raw_labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    pub fn into_dataset(self) -> LabeledDataset {
        LabeledDataset {
            provenance: format!("tudataset({})", self.name),
            graphs: self.graphs,
            targets: self.targets,
            seed: 0,
        }
    }
}

fn read(path: &Path) -> Result<String, IoError> {
    if !path.exists() {
        return Err(IoError::Missing(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(io_err(path))
}

fn parse_column<T: std::str::FromStr>(path: &Path, text: &str) -> Result<Vec<T>, IoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| IoError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected a number, got {l:?}"),
            })
        })
        .collect()
}

fn rank_map(values: &[i64]) -> BTreeMap<i64, usize> {
    let mut distinct: Vec<i64> = values.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    distinct.into_iter().enumerate().map(|(i, v)| (v, i)).collect()
}

/// Looks for `<name>_A.txt` in `dir`, then in `dir/<name>`.
fn dataset_dir(dir: &Path, name: &str) -> PathBuf {
    let direct = dir.join(format!("{name}_A.txt"));
    if direct.exists() {
        dir.to_path_buf()
    } else {
        dir.join(name)
    }
}

/// Loads a TUDataset without vertex or edge labels.
pub fn load_tudataset(dir: &Path, name: &str) -> Result<DatasetBundle, IoError> {
    load_tudataset_with(dir, name, false)
}

/// Loads a TUDataset. Node ids are 1-based and global; the graph indicator
/// must list each graph's nodes as one contiguous block. Repeated and
/// reversed edges collapse to one undirected edge, self-loops are dropped.
pub fn load_tudataset_with(dir: &Path, name: &str, node_labels: bool) -> Result<DatasetBundle, IoError> {
    let root = dataset_dir(dir, name);
    let file = |suffix: &str| root.join(format!("{name}_{suffix}.txt"));

    let ind_path = file("graph_indicator");
    let indicator: Vec<usize> = parse_column(&ind_path, &read(&ind_path)?)?;
    let mut starts = Vec::new();
    let mut graph_of = Vec::with_capacity(indicator.len());
    for (i, &g) in indicator.iter().enumerate() {
        let current = starts.len();
        if g == current + 1 {
            starts.push(i);
        } else if g != current || current == 0 {
            return Err(IoError::NonContiguous { line: i + 1 });
        }
        graph_of.push(g - 1);
    }
    let count = starts.len();
    let total = indicator.len();
    let order = |g: usize| starts.get(g + 1).copied().unwrap_or(total) - starts[g];

    let lab_path = file("graph_labels");
    let raw_labels: Vec<i64> = parse_column(&lab_path, &read(&lab_path)?)?;
    if raw_labels.len() != count {
        return Err(IoError::LabelCount {
            graphs: count,
            labels: raw_labels.len(),
        });
    }

    let a_path = file("A");
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); count];
    for (i, line) in read(&a_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = || IoError::Parse {
            path: a_path.clone(),
            line: i + 1,
            message: format!("expected \"i, j\", got {line:?}"),
        };
        let mut parts = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err());
        };
        let (a, b): (usize, usize) = (a.parse().map_err(|_| parse_err())?, b.parse().map_err(|_| parse_err())?);
        for node in [a, b] {
            if node == 0 || node > total {
                return Err(IoError::DanglingNode {
                    line: i + 1,
                    node,
                    total,
                });
            }
        }
        let (ga, gb) = (graph_of[a - 1], graph_of[b - 1]);
        if ga != gb {
            return Err(IoError::CrossGraphEdge {
                line: i + 1,
                first: ga + 1,
                second: gb + 1,
            });
        }
        if a == b {
            continue;
        }
        let (u, v) = (a - 1 - starts[ga], b - 1 - starts[ga]);
        edges[ga].push((u.min(v), u.max(v)));
    }

    let node_values = if node_labels {
        let path = file("node_labels");
        let values: Vec<i64> = parse_column(&path, &read(&path)?)?;
        if values.len() != total {
            return Err(IoError::NodeLabelCount {
                nodes: total,
                labels: values.len(),
            });
        }
        Some(values)
    } else {
        None
    };
    let node_rank = node_values.as_deref().map(rank_map);

    let mut graphs = Vec::with_capacity(count);
    let mut per_graph_labels = Vec::new();
    for (g, mut es) in edges.into_iter().enumerate() {
        es.sort_unstable();
        es.dedup();
        let n = order(g);
        let labels = node_values.as_ref().map(|vals| {
            let slice = &vals[starts[g]..starts[g] + n];
            per_graph_labels.push(slice.to_vec());
            let rank = node_rank.as_ref().expect("built with the values");
            slice.iter().map(|v| rank[v] as u32).collect::<Vec<u32>>()
        });
        graphs.push(Graph::new(n, es, labels)?);
    }
    let rank = rank_map(&raw_labels);
    Ok(DatasetBundle {
        name: name.to_string(),
        targets: raw_labels.iter().map(|l| rank[l]).collect(),
        raw_labels,
        graphs,
        node_labels: node_values.map(|_| per_graph_labels),
        source: root,
    })
}

fn write(path: &Path, content: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    fs::write(path, content).map_err(io_err(path))
}

/// Writes `graphs` in TUDataset format into `dir`, listing both directions of
/// every edge. Vertex labels are written when every graph carries them.
pub fn write_tudataset(dir: &Path, name: &str, graphs: &[Graph], labels: &[i64]) -> Result<(), IoError> {
    if graphs.len() != labels.len() {
        return Err(IoError::LabelCount {
            graphs: graphs.len(),
            labels: labels.len(),
        });
    }
    let (mut a, mut ind, mut nodes, mut gl) = (String::new(), String::new(), String::new(), String::new());
    let labeled = !graphs.is_empty() && graphs.iter().all(|g| g.labels().is_some());
    let mut offset = 0;
    for (i, (g, l)) in graphs.iter().zip(labels).enumerate() {
        for &(u, v) in g.edges() {
            let _ = writeln!(a, "{}, {}", u + offset + 1, v + offset + 1);
            let _ = writeln!(a, "{}, {}", v + offset + 1, u + offset + 1);
        }
        for v in 0..g.order() {
            let _ = writeln!(ind, "{}", i + 1);
            if labeled {
                let _ = writeln!(nodes, "{}", g.label(v));
            }
        }
        let _ = writeln!(gl, "{l}");
        offset += g.order();
    }
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));
    write(&file("A"), &a)?;
    write(&file("graph_indicator"), &ind)?;
    write(&file("graph_labels"), &gl)?;
    if labeled {
        write(&file("node_labels"), &nodes)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    schema_version: u32,
    kind: &'a str,
    data: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    schema_version: u32,
    kind: String,
    data: T,
}

/// Pretty JSON wrapped as `{"schema_version", "kind", "data"}`.
pub fn to_json<T: Serialize>(kind: &str, value: &T) -> Result<String, IoError> {
    Ok(serde_json::to_string_pretty(&EnvelopeOut {
        schema_version: SCHEMA_VERSION,
        kind,
        data: value,
    })?)
}

pub fn from_json<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T, IoError> {
    let env: EnvelopeIn<T> = serde_json::from_str(text)?;
    if env.schema_version != SCHEMA_VERSION {
        return Err(IoError::Schema {
            found: env.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    if env.kind != kind {
        return Err(IoError::Kind {
            expected: kind.to_string(),
            found: env.kind,
        });
    }
    Ok(env.data)
}

pub fn write_json<T: Serialize>(path: &Path, kind: &str, value: &T) -> Result<(), IoError> {
    write(path, &(to_json(kind, value)? + "\n"))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, IoError> {
    from_json(kind, &read(path)?)
}

pub fn write_text(path: &Path, content: &str) -> Result<(), IoError> {
    write(path, content)
}

/// Datasets use the flat [`DatasetRecord`] layout, which carries its own
/// schema version.
pub fn dataset_json(d: &LabeledDataset) -> Result<String, IoError> {
    Ok(serde_json::to_string(&DatasetRecord::from(d))?)
}

pub fn parse_dataset_json(text: &str) -> Result<LabeledDataset, IoError> {
    let r: DatasetRecord = serde_json::from_str(text)?;
    if r.schema_version != SCHEMA_VERSION {
        return Err(IoError::Schema {
            found: r.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let graphs = r
        .graphs
        .into_iter()
        .map(Graph::try_from)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LabeledDataset {
        graphs,
        targets: r.targets,
        seed: r.seed,
        provenance: r.provenance,
    })
}

pub fn graph_records(graphs: &[Graph]) -> Vec<GraphRecord> {
    graphs.iter().map(GraphRecord::from).collect()
}

/// One matrix row per line, no header.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format_float(m[(r, c)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramRecord {
    pub kind: KernelKind,
    pub normalized: bool,
    pub iterations: usize,
    pub with_patterns: bool,
    pub values: Vec<Vec<f64>>,
}

impl From<&GramMatrix> for GramRecord {
    fn from(g: &GramMatrix) -> Self {
        Self {
            kind: g.kind,
            normalized: g.normalized,
            iterations: g.iterations,
            with_patterns: g.with_patterns,
            values: g.values.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

impl From<GramRecord> for GramMatrix {
    fn from(r: GramRecord) -> Self {
        let n = r.values.len();
        Self {
            values: DMatrix::from_fn(n, n, |i, j| r.values[i][j]),
            kind: r.kind,
            normalized: r.normalized,
            iterations: r.iterations,
            with_patterns: r.with_patterns,
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One line per fold after a `#` metadata line and a header row.
pub fn cv_report_csv(report: &CvReport, dataset: &str) -> String {
    let kernel = match report.kernel {
        KernelKind::Wl => "wl",
        KernelKind::Wloa => "wloa",
    };
    let patterns = report.patterns.join(" ");
    let mut out = format!(
        "# schema_version={SCHEMA_VERSION} kind=cv-report multiclass={}\n\
         dataset,kernel,patterns,repetition,fold,t,c,train_acc,test_acc,margin\n",
        report.multiclass
    );
    for f in &report.folds {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            csv_field(dataset),
            kernel,
            csv_field(&patterns),
            f.repetition,
            f.fold,
            f.t,
            format_float(f.c),
            format_float(f.train_accuracy),
            format_float(f.test_accuracy),
            f.margin.map_or_else(|| "NLS".to_string(), format_float),
        );
    }
    out
}

/// Trajectory records as CSV; per-layer columns are numbered from 1.
pub fn flow_csv(t: &FlowTrajectory) -> String {
    let depth = t.last.depth();
    let mut header = vec!["step".to_string(), "time".into(), "risk".into(), "log_risk".into()];
    header.extend((1..=depth).map(|j| format!("norm_{j}")));
    header.extend((1..=depth).map(|j| format!("residual_{j}")));
    header.extend(["product_alignment".into(), "reference_alignment".into(), "drift".into()]);
    let mut out = format!("# schema_version={SCHEMA_VERSION} kind=flow\n{}\n", header.join(","));
    let opt = |x: Option<f64>| x.map_or_else(String::new, format_float);
    for r in &t.records {
        let mut row = vec![
            r.step.to_string(),
            format_float(r.time),
            format_float(r.risk),
            format_float(r.log_risk),
        ];
        row.extend(r.norms.iter().map(|&x| format_float(x)));
        row.extend(r.residuals.iter().map(|&x| opt(x)));
        row.push(opt(r.product_alignment));
        row.push(opt(r.reference_alignment));
        row.push(format_float(r.drift));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::er_dataset;
    use crate::subgraph::named_pattern;
    use crate::graph::is_isomorphic_small;
    use crate::margin::{hard_margin, LabeledPoints, MarginResult, Points};

    fn mutag_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.0, 1.0, -2.5, 0.1, 1.0 / 3.0, 1e-300, 6.02e23, f64::MIN_POSITIVE, 123456.789] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(format_float(1.0), "1");
        assert_eq!(format_float(f64::INFINITY), "inf");
    }

    #[test]
    fn identity_gram_csv() {
        assert_eq!(matrix_csv(&DMatrix::identity(2, 2)), "1,0\n0,1\n");
    }

    #[test]
    fn mutag_statistics() {
        let b = load_tudataset(&mutag_dir(), "MUTAG").unwrap();
        assert_eq!(b.len(), 188);
        assert_eq!(b.class_counts().len(), 2);
        assert_eq!(b.class_counts()[&1], 125);
        assert!((b.mean_order() - 17.93).abs() < 0.01);
        assert!(b.graphs.iter().all(|g| g.labels().is_none()));
        let labeled = load_tudataset_with(&mutag_dir(), "MUTAG", true).unwrap();
        assert!(labeled.graphs.iter().all(|g| g.labels().is_some()));
        assert_eq!(labeled.node_labels.unwrap().len(), 188);
    }

    fn write_fixture(dir: &Path, a: &str, ind: &str, labels: &str) {
        fs::write(dir.join("T_A.txt"), a).unwrap();
        fs::write(dir.join("T_graph_indicator.txt"), ind).unwrap();
        fs::write(dir.join("T_graph_labels.txt"), labels).unwrap();
    }

    #[test]
    fn two_triangles() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            "1, 2\n2, 1\n2,3\n3, 1\n4, 5\n5, 6\n6, 4\n4,6\n",
            "1\n1\n1\n2\n2\n2\n",
            "0\n1\n",
        );
        let b = load_tudataset(dir.path(), "T").unwrap();
        assert_eq!(b.len(), 2);
        assert!(b.graphs.iter().all(|g| g.order() == 3 && g.edge_count() == 3));
        assert_eq!(b.targets, vec![0, 1]);
    }

    #[test]
    fn loader_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), "1, 9\n", "1\n1\n", "0\n");
        assert!(matches!(load_tudataset(dir.path(), "T"), Err(IoError::DanglingNode { node: 9, .. })));
        write_fixture(dir.path(), "1, 2\n", "1\n2\n1\n", "0\n1\n");
        assert!(matches!(load_tudataset(dir.path(), "T"), Err(IoError::NonContiguous { line: 3 })));
        write_fixture(dir.path(), "1, 2\n", "1\n2\n", "0\n1\n");
        assert!(matches!(load_tudataset(dir.path(), "T"), Err(IoError::CrossGraphEdge { .. })));
        write_fixture(dir.path(), "1, 2\n", "1\n1\n", "0\n1\n");
        assert!(matches!(load_tudataset(dir.path(), "T"), Err(IoError::LabelCount { .. })));
        assert!(matches!(load_tudataset(dir.path(), "U"), Err(IoError::Missing(_))));
    }

    #[test]
    fn tudataset_round_trip() {
        let f = named_pattern("c3").unwrap();
        let d = er_dataset(12, 9, 0.3, &f, 4, Default::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let labels: Vec<i64> = d.targets.iter().map(|&t| t as i64).collect();
        write_tudataset(dir.path(), "ER", &d.graphs, &labels).unwrap();
        let b = load_tudataset(dir.path(), "ER").unwrap();
        assert_eq!(b.raw_labels, labels);
        for (g, h) in d.graphs.iter().zip(&b.graphs) {
            assert!(is_isomorphic_small(g, h).unwrap());
        }
    }

    #[test]
    fn margin_json_round_trip() {
        let data = LabeledPoints {
            points: Points::Dense(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.3, 0.3]]),
            labels: vec![1, 0, 0],
        };
        let r = hard_margin(&data).unwrap();
        let text = to_json("margin", &r).unwrap();
        let back: MarginResult = from_json("margin", &text).unwrap();
        assert_eq!(back, r);
        let flat = LabeledPoints {
            points: Points::Dense(vec![vec![1.0], vec![1.0]]),
            labels: vec![1, 0],
        };
        let r = hard_margin(&flat).unwrap();
        let back: MarginResult = from_json("margin", &to_json("margin", &r).unwrap()).unwrap();
        assert_eq!(back.ratio, f64::INFINITY);
        assert!(matches!(from_json::<MarginResult>("gram", &text), Err(IoError::Kind { .. })));
    }

    #[test]
    fn dataset_json_round_trip() {
        let f = named_pattern("k3").unwrap();
        let d = er_dataset(5, 7, 0.4, &f, 1, Default::default()).unwrap();
        let back = parse_dataset_json(&dataset_json(&d).unwrap()).unwrap();
        assert_eq!(back, d);
    }
}
