//! Color refinement (1-WL) run jointly over a collection of graphs.
//!
//! All graphs of a collection share one relabel table, so a color id means the
//! same thing in every graph of the collection. Ids from different traces are
//! not comparable; every trace carries a collection id so that downstream code
//! can refuse to mix them.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::graph::Graph;

pub type Color = u32;

static NEXT_COLLECTION: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RefineError {
    #[error("graph {graph} has {expected} vertices but {got} initial labels")]
    LabelLength {
        graph: usize,
        expected: usize,
        got: usize,
    },
    #[error("{got} initial label vectors for {expected} graphs")]
    LabelCount { expected: usize, got: usize },
    #[error("graph index {index} out of range for a collection of {len}")]
    GraphIndex { index: usize, len: usize },
    #[error("iteration {requested} beyond the horizon {horizon} of this trace")]
    BeyondHorizon { requested: usize, horizon: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    /// Exactly this many refinement rounds.
    Fixed(usize),
    /// Refine until the joint partition stops changing.
    UntilStable,
}

/// Per-iteration colorings of a graph collection.
#[derive(Debug, Clone)]
pub struct ColoringTrace {
    collection: u64,
    orders: Vec<usize>,
    /// `colors[t][g][v]`.
    colors: Vec<Vec<Vec<Color>>>,
    /// Sorted color alphabet per computed iteration.
    sigma: Vec<Vec<Color>>,
    /// `signatures[t - 1][c - first_id[t]]` is the (previous color, sorted
    /// neighbor multiset) pair that was relabeled to `c` in iteration `t`.
    signatures: Vec<Vec<(Color, Vec<Color>)>>,
    /// Initial label value behind each iteration-0 color.
    initial_values: Vec<u64>,
    stable_at: Option<usize>,
    horizon: Horizon,
}

/// Refines `graphs` starting from their own vertex labels (0 when unlabeled).
pub fn refine_plain(graphs: &[Graph], horizon: Horizon) -> ColoringTrace {
    let initial: Vec<Vec<u64>> = graphs
        .iter()
        .map(|g| (0..g.order()).map(|v| u64::from(g.label(v))).collect())
        .collect();
    refine(graphs, &initial, horizon).expect("labels derived from the graphs match")
}

/// Runs color refinement on all `graphs` in parallel from `initial` labels.
///
/// Iteration 0 re-encodes the distinct initial label values in ascending
/// order. Each later iteration maps `(own color, sorted neighbor colors)` to a
/// fresh id, assigned in first-encounter order while scanning graphs and then
/// vertices in index order; ids are never reused across iterations.
pub fn refine(
    graphs: &[Graph],
    initial: &[Vec<u64>],
    horizon: Horizon,
) -> Result<ColoringTrace, RefineError> {
    if initial.len() != graphs.len() {
        return Err(RefineError::LabelCount {
            expected: graphs.len(),
            got: initial.len(),
        });
    }
    for (i, (g, l)) in graphs.iter().zip(initial).enumerate() {
        if g.order() != l.len() {
            return Err(RefineError::LabelLength {
                graph: i,
                expected: g.order(),
                got: l.len(),
            });
        }
    }

    let mut initial_values: Vec<u64> = initial.iter().flatten().copied().collect();
    initial_values.sort_unstable();
    initial_values.dedup();
    let code: HashMap<u64, Color> = initial_values
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, i as Color))
        .collect();
    let level0: Vec<Vec<Color>> = initial
        .iter()
        .map(|l| l.iter().map(|x| code[x]).collect())
        .collect();

    let mut trace = ColoringTrace {
        collection: NEXT_COLLECTION.fetch_add(1, Ordering::Relaxed),
        orders: graphs.iter().map(Graph::order).collect(),
        sigma: vec![(0..initial_values.len() as Color).collect()],
        colors: vec![level0],
        signatures: Vec::new(),
        initial_values,
        stable_at: None,
        horizon,
    };

    let mut next_id = trace.sigma[0].len() as Color;
    let mut t = 0;
    loop {
        if let Horizon::Fixed(limit) = horizon {
            if t >= limit {
                break;
            }
        }
        let prev = &trace.colors[t];
        let mut table: HashMap<(Color, Vec<Color>), Color> = HashMap::new();
        let mut sigs = Vec::new();
        let mut level = Vec::with_capacity(graphs.len());
        for (g, prev_g) in graphs.iter().zip(prev) {
            let mut row = Vec::with_capacity(g.order());
            for v in 0..g.order() {
                let mut multiset: Vec<Color> =
                    g.neighbors(v).iter().map(|&u| prev_g[u]).collect();
                multiset.sort_unstable();
                let key = (prev_g[v], multiset);
                let id = match table.get(&key) {
                    Some(&id) => id,
                    None => {
                        let id = next_id;
                        next_id += 1;
                        sigs.push(key.clone());
                        table.insert(key, id);
                        id
                    }
                };
                row.push(id);
            }
            level.push(row);
        }
        let mut alphabet: Vec<Color> = table.into_values().collect();
        alphabet.sort_unstable();
        let unchanged = alphabet.len() == trace.sigma[t].len();
        trace.colors.push(level);
        trace.sigma.push(alphabet);
        trace.signatures.push(sigs);
        if unchanged && trace.stable_at.is_none() {
            trace.stable_at = Some(t);
            if horizon == Horizon::UntilStable {
                break;
            }
        }
        t += 1;
    }
    Ok(trace)
}

impl ColoringTrace {
    /// Identifier of the collection this trace was built over.
    pub fn collection(&self) -> u64 {
        self.collection
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    pub fn order(&self, g: usize) -> usize {
        self.orders[g]
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    /// Number of refinement rounds actually computed.
    pub fn computed_rounds(&self) -> usize {
        self.colors.len() - 1
    }

    /// First iteration `t` whose partition equals that of `t + 1`, if reached.
    pub fn stable_at(&self) -> Option<usize> {
        self.stable_at
    }

    /// Largest iteration that can be queried, `None` when unbounded (an
    /// until-stable trace repeats its stable coloring forever).
    pub fn max_iteration(&self) -> Option<usize> {
        match self.horizon {
            Horizon::Fixed(t) => Some(t),
            Horizon::UntilStable => None,
        }
    }

    pub fn check_iteration(&self, t: usize) -> Result<(), RefineError> {
        match self.max_iteration() {
            Some(h) if t > h => Err(RefineError::BeyondHorizon {
                requested: t,
                horizon: h,
            }),
            _ => Ok(()),
        }
    }

    pub fn check_graph(&self, g: usize) -> Result<(), RefineError> {
        if g >= self.len() {
            return Err(RefineError::GraphIndex {
                index: g,
                len: self.len(),
            });
        }
        Ok(())
    }

    fn level(&self, t: usize) -> usize {
        t.min(self.computed_rounds())
    }

    /// Colors of graph `g` at iteration `t`. Past the computed rounds of an
    /// until-stable trace this is the stable coloring.
    pub fn colors(&self, t: usize, g: usize) -> Result<&[Color], RefineError> {
        self.check_iteration(t)?;
        self.check_graph(g)?;
        Ok(&self.colors[self.level(t)][g])
    }

    /// Sorted color alphabet of the whole collection at iteration `t`.
    pub fn sigma(&self, t: usize) -> Result<&[Color], RefineError> {
        self.check_iteration(t)?;
        Ok(&self.sigma[self.level(t)])
    }

    /// `(color, count)` pairs of graph `g` at iteration `t`, sorted by color.
    pub fn histogram(&self, g: usize, t: usize) -> Result<Vec<(Color, u32)>, RefineError> {
        let mut cs = self.colors(t, g)?.to_vec();
        cs.sort_unstable();
        let mut out: Vec<(Color, u32)> = Vec::new();
        for c in cs {
            match out.last_mut() {
                Some((last, k)) if *last == c => *k += 1,
                _ => out.push((c, 1)),
            }
        }
        Ok(out)
    }

    /// True iff some color occurs a different number of times in `g` and `h`
    /// at iteration `t`.
    pub fn distinguishes(&self, g: usize, h: usize, t: usize) -> Result<bool, RefineError> {
        Ok(self.histogram(g, t)? != self.histogram(h, t)?)
    }

    /// Relabel-table entry behind color `c` of iteration `t >= 1`.
    pub fn signature(&self, t: usize, c: Color) -> Option<&(Color, Vec<Color>)> {
        if t == 0 || t > self.computed_rounds() {
            return None;
        }
        let first = *self.sigma[t].first()?;
        self.signatures[t - 1].get(c.checked_sub(first)? as usize)
    }

    /// Initial label value encoded by iteration-0 color `c`.
    pub fn initial_value(&self, c: Color) -> Option<u64> {
        self.initial_values.get(c as usize).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{basic, cycle, BasicKind};
    use crate::graph::disjoint_union;

    fn star3() -> Graph {
        Graph::unlabeled(4, [(0, 1), (0, 2), (0, 3)]).unwrap()
    }

    fn counts(trace: &ColoringTrace, g: usize, t: usize) -> Vec<u32> {
        let mut c: Vec<u32> = trace.histogram(g, t).unwrap().into_iter().map(|x| x.1).collect();
        c.sort_unstable();
        c
    }

    #[test]
    fn regular_pair_is_stable_immediately() {
        let graphs = vec![
            cycle(6).unwrap(),
            disjoint_union(&cycle(3).unwrap(), &cycle(3).unwrap()),
        ];
        let trace = refine_plain(&graphs, Horizon::UntilStable);
        assert_eq!(trace.stable_at(), Some(0));
        for t in 0..4 {
            assert_eq!(trace.sigma(t).unwrap().len(), 1);
            assert!(!trace.distinguishes(0, 1, t).unwrap());
        }
    }

    #[test]
    fn path_refines_ends_from_middle() {
        let trace = refine_plain(&[basic(BasicKind::Path, 3).unwrap()], Horizon::Fixed(1));
        let c = trace.colors(1, 0).unwrap();
        assert_eq!(c[0], c[2]);
        assert_ne!(c[0], c[1]);
        assert_eq!(counts(&trace, 0, 1), vec![1, 2]);
    }

    #[test]
    fn star_center_and_leaves() {
        let trace = refine_plain(&[star3()], Horizon::Fixed(1));
        let c = trace.colors(1, 0).unwrap();
        assert!(c[1] == c[2] && c[2] == c[3] && c[0] != c[1]);
        assert_eq!(counts(&trace, 0, 1), vec![1, 3]);
    }

    #[test]
    fn triangle_vs_path() {
        let graphs = vec![
            basic(BasicKind::Complete, 3).unwrap(),
            basic(BasicKind::Path, 3).unwrap(),
        ];
        let trace = refine_plain(&graphs, Horizon::Fixed(2));
        assert!(!trace.distinguishes(0, 1, 0).unwrap());
        assert!(trace.distinguishes(0, 1, 1).unwrap());
        assert!(!trace.distinguishes(1, 1, 1).unwrap());
    }

    #[test]
    fn errors() {
        let g = cycle(4).unwrap();
        assert!(matches!(
            refine(std::slice::from_ref(&g), &[vec![0; 3]], Horizon::Fixed(1)),
            Err(RefineError::LabelLength { .. })
        ));
        assert!(matches!(
            refine(std::slice::from_ref(&g), &[], Horizon::Fixed(1)),
            Err(RefineError::LabelCount { .. })
        ));
        let trace = refine_plain(&[g], Horizon::Fixed(2));
        assert_eq!(
            trace.colors(3, 0).unwrap_err(),
            RefineError::BeyondHorizon {
                requested: 3,
                horizon: 2
            }
        );
        assert!(matches!(
            trace.distinguishes(0, 1, 0),
            Err(RefineError::GraphIndex { .. })
        ));
    }

    #[test]
    fn colors_are_fresh_per_iteration() {
        let trace = refine_plain(&[star3()], Horizon::Fixed(3));
        for t in 0..3 {
            let a = trace.sigma(t).unwrap();
            let b = trace.sigma(t + 1).unwrap();
            assert!(a.last().unwrap() < b.first().unwrap());
        }
        let c = trace.colors(1, 0).unwrap()[0];
        let (prev, multiset) = trace.signature(1, c).unwrap();
        assert_eq!(*prev, 0);
        assert_eq!(multiset, &vec![0, 0, 0]);
    }

    #[test]
    fn initial_labels_are_ranked() {
        let g = cycle(3).unwrap();
        let trace = refine(&[g], &[vec![9, 4, 9]], Horizon::Fixed(0)).unwrap();
        assert_eq!(trace.colors(0, 0).unwrap(), &[1, 0, 1]);
        assert_eq!(trace.initial_value(1), Some(9));
    }

    #[test]
    fn until_stable_extends_beyond_computed_rounds() {
        let trace = refine_plain(&[basic(BasicKind::Path, 5).unwrap()], Horizon::UntilStable);
        let s = trace.stable_at().unwrap();
        assert_eq!(s, 2);
        let last = trace.computed_rounds();
        assert_eq!(last, s + 1);
        assert_eq!(trace.histogram(0, 50).unwrap(), trace.histogram(0, last).unwrap());
        assert_eq!(counts(&trace, 0, 50), counts(&trace, 0, s));
        assert!(trace.max_iteration().is_none());
    }
}
