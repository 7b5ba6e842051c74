//! Named graph families, the fixed constructions used by the separation and
//! margin arguments, and seeded Erdős–Rényi datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{disjoint_union, Graph, GraphRecord};
use crate::subgraph::{count_occurrences, CountMode, SubgraphError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("{kind} needs n >= {min}, got {n}")]
    TooSmall { kind: &'static str, min: usize, n: usize },
    #[error("invalid skip {skip} for circulant on {n} vertices")]
    InvalidSkip { n: usize, skip: usize },
    #[error("single-orbit regular graphs need an even order, got {0}")]
    OddOrder(usize),
    #[error("degree {degree} out of range for order {n}")]
    DegreeOutOfRange { n: usize, degree: usize },
    #[error("edge probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("separability set needs at least 2 graphs, got {0}")]
    TooFewGraphs(usize),
    #[error(transparent)]
    Subgraph(#[from] SubgraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasicKind {
    Cycle,
    Complete,
    Path,
    Empty,
}

pub fn basic(kind: BasicKind, n: usize) -> Result<Graph, GeneratorError> {
    let min = match kind {
        BasicKind::Cycle => 3,
        _ => 1,
    };
    if n < min {
        return Err(GeneratorError::TooSmall {
            kind: match kind {
                BasicKind::Cycle => "cycle",
                BasicKind::Complete => "complete graph",
                BasicKind::Path => "path",
                BasicKind::Empty => "empty graph",
            },
            min,
            n,
        });
    }
    let edges: Vec<(usize, usize)> = match kind {
        BasicKind::Cycle => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        BasicKind::Complete => (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .collect(),
        BasicKind::Path => (1..n).map(|i| (i - 1, i)).collect(),
        BasicKind::Empty => Vec::new(),
    };
    Ok(Graph::unlabeled(n, edges).expect("named families are simple graphs"))
}

pub fn cycle(n: usize) -> Result<Graph, GeneratorError> {
    basic(BasicKind::Cycle, n)
}

pub fn complete(n: usize) -> Result<Graph, GeneratorError> {
    basic(BasicKind::Complete, n)
}

/// Union of the edge sets `{(i, i + s mod n)}` over `skips`. A skip of exactly
/// `n / 2` (for even `n`) contributes the perfect matching of antipodal
/// vertices, adding one to every degree instead of two.
pub fn circulant(n: usize, skips: &[usize]) -> Result<Graph, GeneratorError> {
    if n < 3 {
        return Err(GeneratorError::TooSmall {
            kind: "circulant",
            min: 3,
            n,
        });
    }
    let mut skips = skips.to_vec();
    skips.sort_unstable();
    skips.dedup();
    let mut edges = Vec::new();
    for &s in &skips {
        if s == 0 || 2 * s > n {
            return Err(GeneratorError::InvalidSkip { n, skip: s });
        }
        if 2 * s == n {
            edges.extend((0..n / 2).map(|i| (i, i + n / 2)));
        } else {
            edges.extend((0..n).map(|i| (i, (i + s) % n)));
        }
    }
    Ok(Graph::unlabeled(n, edges).expect("distinct skips give disjoint edge sets"))
}

/// An `degree`-regular graph on `n` (even) vertices whose rotation
/// `v -> v + 1 mod n` is an automorphism, so all vertices share one orbit.
pub fn regular_single_orbit(n: usize, degree: usize) -> Result<Graph, GeneratorError> {
    if n % 2 == 1 {
        return Err(GeneratorError::OddOrder(n));
    }
    if n == 0 || degree >= n {
        return Err(GeneratorError::DegreeOutOfRange { n, degree });
    }
    let mut skips: Vec<usize> = (1..=degree / 2).collect();
    if degree % 2 == 1 {
        skips.push(n / 2);
    }
    if skips.is_empty() {
        return Ok(Graph::empty(n));
    }
    if n == 2 {
        return Ok(Graph::unlabeled(2, [(0, 1)]).expect("single edge"));
    }
    circulant(n, &skips)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstructionKind {
    /// `C_n` against `C_⌈n/2⌉ ⊍ C_⌊n/2⌋`, pattern `C_⌊n/2⌋`.
    SeparatorPair,
    /// `count` graphs of growing order whose plain WL vectors are colinear
    /// but whose classes split on containing `C_{n-4}`.
    SeparabilitySet { count: usize },
    /// `K_n ⊍ n·K_1` against `K_3 ⊍ C_{n-3} ⊍ n·K_1`, pattern `C_3`.
    ShrinkPair,
    /// Circulants on 8 vertices with skips {1,2} (triangles) and {1,3}
    /// (triangle-free), pattern `C_3`.
    Circulant8Pair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Construction {
    pub graphs: Vec<Graph>,
    pub pattern: Graph,
    pub targets: Vec<usize>,
}

fn isolated_plus(isolated: usize, g: Graph) -> Graph {
    disjoint_union(&Graph::empty(isolated), &g)
}

pub fn construction(kind: ConstructionKind, n: usize) -> Result<Construction, GeneratorError> {
    match kind {
        ConstructionKind::SeparatorPair => {
            if n < 6 {
                return Err(GeneratorError::TooSmall {
                    kind: "separator pair",
                    min: 6,
                    n,
                });
            }
            let big = cycle(n)?;
            let split = disjoint_union(&cycle(n.div_ceil(2))?, &cycle(n / 2)?);
            Ok(Construction {
                graphs: vec![big, split],
                pattern: cycle(n / 2)?,
                targets: vec![1, 0],
            })
        }
        ConstructionKind::SeparabilitySet { count } => {
            if n < 10 {
                return Err(GeneratorError::TooSmall {
                    kind: "separability set",
                    min: 10,
                    n,
                });
            }
            if count < 2 {
                return Err(GeneratorError::TooFewGraphs(count));
            }
            let halves = disjoint_union(&cycle(n.div_ceil(2) - 2)?, &cycle(n / 2 - 2)?);
            let long = cycle(n - 4)?;
            let mut graphs = Vec::with_capacity(count);
            let mut targets = Vec::with_capacity(count);
            for i in 1..=count {
                if i % 2 == 1 {
                    graphs.push(isolated_plus(i, halves.clone()));
                    targets.push(0);
                } else {
                    graphs.push(isolated_plus(i, long.clone()));
                    targets.push(1);
                }
            }
            Ok(Construction {
                graphs,
                pattern: long,
                targets,
            })
        }
        ConstructionKind::ShrinkPair => {
            if n < 10 {
                return Err(GeneratorError::TooSmall {
                    kind: "shrink pair",
                    min: 10,
                    n,
                });
            }
            let g = disjoint_union(&complete(n)?, &Graph::empty(n));
            let h = disjoint_union(
                &disjoint_union(&complete(3)?, &cycle(n - 3)?),
                &Graph::empty(n),
            );
            Ok(Construction {
                graphs: vec![g, h],
                pattern: cycle(3)?,
                targets: vec![1, 0],
            })
        }
        ConstructionKind::Circulant8Pair => Ok(Construction {
            graphs: vec![circulant(8, &[1, 2])?, circulant(8, &[1, 3])?],
            pattern: cycle(3)?,
            targets: vec![1, 0],
        }),
    }
}

/// Graphs with class labels plus enough provenance to regenerate them.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub graphs: Vec<Graph>,
    pub targets: Vec<usize>,
    pub seed: u64,
    pub provenance: String,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn from_construction(c: Construction, provenance: impl Into<String>) -> Self {
        Self {
            graphs: c.graphs,
            targets: c.targets,
            seed: 0,
            provenance: provenance.into(),
        }
    }

    pub fn class_counts(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut counts = std::collections::BTreeMap::new();
        for &t in &self.targets {
            *counts.entry(t).or_insert(0) += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub schema_version: u32,
    pub provenance: String,
    pub seed: u64,
    pub graphs: Vec<GraphRecord>,
    pub targets: Vec<usize>,
}

impl From<&LabeledDataset> for DatasetRecord {
    fn from(d: &LabeledDataset) -> Self {
        Self {
            schema_version: crate::io::SCHEMA_VERSION,
            provenance: d.provenance.clone(),
            seed: d.seed,
            graphs: d.graphs.iter().map(GraphRecord::from).collect(),
            targets: d.targets.clone(),
        }
    }
}

/// Random number stream for graph `index` of a dataset drawn with `seed`.
/// Every graph gets its own ChaCha8 stream, so datasets are reproducible
/// bit-for-bit regardless of generation order or thread count.
pub fn graph_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// G(n, p): each pair `u < v`, visited in lexicographic order, is an edge iff
/// a uniform draw from [0, 1) falls below `p`.
pub fn gnp(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::unlabeled(n, edges).expect("G(n,p) is simple")
}

/// `count` independent G(n, p) graphs; the target of each graph is its number
/// of occurrences of `pattern` under `mode`.
pub fn er_dataset(
    count: usize,
    n: usize,
    p: f64,
    pattern: &Graph,
    seed: u64,
    mode: CountMode,
) -> Result<LabeledDataset, GeneratorError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(GeneratorError::Probability(p));
    }
    let rows: Vec<Result<(Graph, usize), GeneratorError>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let g = gnp(n, p, &mut graph_rng(seed, i));
            let target = count_occurrences(&g, pattern, mode)?;
            Ok((g, target as usize))
        })
        .collect();
    let mut graphs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for row in rows {
        let (g, t) = row?;
        graphs.push(g);
        targets.push(t);
    }
    Ok(LabeledDataset {
        graphs,
        targets,
        seed,
        provenance: format!(
            "er(count={count}, n={n}, p={p}, pattern_order={}, pattern_edges={}, mode={mode:?})",
            pattern.order(),
            pattern.edge_count()
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::is_isomorphic_small;

    fn has_triangle(g: &Graph) -> bool {
        g.edges()
            .iter()
            .any(|&(u, v)| g.neighbors(u).iter().any(|w| g.has_edge(*w, v)))
    }

    #[test]
    fn basic_families() {
        let c6 = basic(BasicKind::Cycle, 6).unwrap();
        assert_eq!((c6.order(), c6.edge_count()), (6, 6));
        assert!(c6.is_regular(2));
        assert_eq!(basic(BasicKind::Complete, 4).unwrap().edge_count(), 6);
        assert_eq!(basic(BasicKind::Path, 3).unwrap().adjacency().degrees(), vec![1, 2, 1]);
        assert_eq!(basic(BasicKind::Empty, 3).unwrap().edge_count(), 0);
        assert!(basic(BasicKind::Cycle, 2).is_err());
    }

    #[test]
    fn circulant_examples() {
        let g = circulant(8, &[1, 2]).unwrap();
        assert!(g.is_regular(4));
        assert!(has_triangle(&g));
        let h = circulant(8, &[1, 3]).unwrap();
        assert!(h.is_regular(4));
        assert!(!has_triangle(&h));
        assert_eq!(circulant(6, &[1]).unwrap(), cycle(6).unwrap());
        assert!(circulant(8, &[0]).is_err());
        assert!(circulant(8, &[5]).is_err());
    }

    #[test]
    fn regular_single_orbit_examples() {
        let g = regular_single_orbit(8, 0).unwrap();
        assert_eq!((g.order(), g.edge_count()), (8, 0));
        let g = regular_single_orbit(8, 3).unwrap();
        assert!((0..8).all(|v| g.degree(v) == 3));
        assert_eq!(regular_single_orbit(6, 5).unwrap(), complete(6).unwrap());
        assert_eq!(regular_single_orbit(7, 2), Err(GeneratorError::OddOrder(7)));
        assert!(regular_single_orbit(8, 8).is_err());
    }

    #[test]
    fn rotation_is_an_automorphism() {
        for i in 0..10 {
            let g = regular_single_orbit(10, i).unwrap();
            assert!(g.is_regular(i));
            let rot: Vec<usize> = (0..10).map(|v| (v + 1) % 10).collect();
            assert_eq!(g.permuted(&rot), g);
        }
    }

    #[test]
    fn separator_pair_shape() {
        let c = construction(ConstructionKind::SeparatorPair, 6).unwrap();
        assert_eq!(c.graphs[0], cycle(6).unwrap());
        let two = disjoint_union(&cycle(3).unwrap(), &cycle(3).unwrap());
        assert!(is_isomorphic_small(&c.graphs[1], &two).unwrap());
        assert_eq!(c.pattern, cycle(3).unwrap());
        for n in [6, 7, 16, 33] {
            let c = construction(ConstructionKind::SeparatorPair, n).unwrap();
            assert!(c.graphs.iter().all(|g| g.is_regular(2) && g.order() == n));
        }
        assert!(construction(ConstructionKind::SeparatorPair, 5).is_err());
    }

    #[test]
    fn separability_set_shape() {
        let c = construction(ConstructionKind::SeparabilitySet { count: 4 }, 16).unwrap();
        assert_eq!(c.targets, vec![0, 1, 0, 1]);
        for (i, g) in c.graphs.iter().enumerate() {
            assert_eq!(g.order(), 16 - 4 + i + 1);
            let isolated = (0..g.order()).filter(|&v| g.degree(v) == 0).count();
            assert_eq!(isolated, i + 1);
        }
        assert_eq!(c.pattern, cycle(12).unwrap());
        assert!(construction(ConstructionKind::SeparabilitySet { count: 4 }, 9).is_err());
    }

    #[test]
    fn shrink_pair_shape() {
        let c = construction(ConstructionKind::ShrinkPair, 10).unwrap();
        assert!(c.graphs.iter().all(|g| g.order() == 20));
        assert_eq!(c.graphs[0].edge_count(), 45);
        assert_eq!(c.graphs[1].edge_count(), 3 + 7);
    }

    #[test]
    fn er_edge_cases() {
        let c3 = cycle(3).unwrap();
        let d = er_dataset(10, 5, 0.0, &c3, 7, CountMode::Induced).unwrap();
        assert!(d.targets.iter().all(|&t| t == 0));
        let d = er_dataset(10, 4, 1.0, &c3, 7, CountMode::Induced).unwrap();
        assert!(d.targets.iter().all(|&t| t == 4));
        assert!(er_dataset(1, 4, 1.5, &c3, 7, CountMode::Induced).is_err());
    }

    #[test]
    fn er_is_reproducible_per_index() {
        let c3 = cycle(3).unwrap();
        let a = er_dataset(20, 12, 0.3, &c3, 42, CountMode::Induced).unwrap();
        let b = er_dataset(20, 12, 0.3, &c3, 42, CountMode::Induced).unwrap();
        assert_eq!(a, b);
        let prefix = er_dataset(5, 12, 0.3, &c3, 42, CountMode::Induced).unwrap();
        assert_eq!(&a.graphs[..5], &prefix.graphs[..]);
        let other = er_dataset(20, 12, 0.3, &c3, 43, CountMode::Induced).unwrap();
        assert_ne!(a.graphs, other.graphs);
    }
}
