//! Predicates behind the margin-growth results: how pattern-aware refinement
//! splits plain WL colors, when the WLOA distance is preserved by the split,
//! and whether a feature change grows the margin.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::graph::Graph;
use crate::kernels::{build_trace, k_wloa, KernelError};
use crate::refinement::{Color, ColoringTrace, Horizon, RefineError};
use crate::subgraph::{contains_induced_at, PatternSet, SubgraphError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Subgraph(#[from] SubgraphError),
    #[error("graphs have {0} and {1} vertices, expected equal orders")]
    OrderMismatch(usize, usize),
    #[error("traces cover different collections")]
    TraceMismatch,
    #[error(
        "iteration {t}: color {child} has parents {first} and {second}, the refined partition does not refine the plain one"
    )]
    RefinementViolation {
        t: usize,
        child: Color,
        first: Color,
        second: Color,
    },
    #[error("{0} feature rows but {1} labels")]
    LabelCount(usize, usize),
    #[error("label {0} is not 0 or 1")]
    NonBinaryLabel(usize),
}

/// For each iteration, the plain color each refined color descends from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorSplitMap {
    parents: Vec<BTreeMap<Color, Color>>,
}

impl ColorSplitMap {
    pub fn iterations(&self) -> usize {
        self.parents.len().saturating_sub(1)
    }

    pub fn parent(&self, t: usize, child: Color) -> Option<Color> {
        self.parents.get(t)?.get(&child).copied()
    }

    /// Refined colors that color `c` splits into at iteration `t`.
    pub fn children(&self, t: usize, c: Color) -> Vec<Color> {
        self.parents
            .get(t)
            .map(|m| m.iter().filter(|(_, &p)| p == c).map(|(&k, _)| k).collect())
            .unwrap_or_default()
    }

    /// Parent to children lists at iteration `t`.
    pub fn splits(&self, t: usize) -> BTreeMap<Color, Vec<Color>> {
        let mut out: BTreeMap<Color, Vec<Color>> = BTreeMap::new();
        if let Some(m) = self.parents.get(t) {
            for (&child, &parent) in m {
                out.entry(parent).or_default().push(child);
            }
        }
        out
    }
}

/// Builds the split map from a plain trace and a pattern-aware trace over the
/// same graphs. Every vertex carries one color in each trace, which fixes the
/// parent of its refined color.
pub fn color_split_map(
    plain: &ColoringTrace,
    refined: &ColoringTrace,
    t_max: usize,
) -> Result<ColorSplitMap, TheoryError> {
    if plain.len() != refined.len() || (0..plain.len()).any(|g| plain.order(g) != refined.order(g)) {
        return Err(TheoryError::TraceMismatch);
    }
    let mut parents = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        let mut map: BTreeMap<Color, Color> = BTreeMap::new();
        for g in 0..plain.len() {
            let a = plain.colors(t, g)?;
            let b = refined.colors(t, g)?;
            for (&c, &child) in a.iter().zip(b) {
                match map.get(&child) {
                    Some(&p) if p != c => {
                        return Err(TheoryError::RefinementViolation {
                            t,
                            child,
                            first: p,
                            second: c,
                        })
                    }
                    Some(_) => {}
                    None => {
                        map.insert(child, c);
                    }
                }
            }
        }
        parents.push(map);
    }
    Ok(ColorSplitMap { parents })
}

/// Where the distance-preservation condition fails: plain color `color` at
/// iteration `t` has refined children whose count differences disagree in
/// sign, e.g. `child` against the parent's direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitWitness {
    pub t: usize,
    pub color: Color,
    pub child: Color,
    /// Counts `(G, H)` of the parent and of the child.
    pub parent_counts: (u32, u32),
    pub child_counts: (u32, u32),
}

fn counts(trace: &ColoringTrace, g: usize, t: usize) -> Result<BTreeMap<Color, u32>, TheoryError> {
    Ok(trace.histogram(g, t)?.into_iter().collect())
}

/// Squared WLOA distance between graphs `g` and `h` of a trace, in integers.
pub fn wloa_distance_sq(trace: &ColoringTrace, g: usize, h: usize, t_max: usize) -> Result<u64, TheoryError> {
    let k = k_wloa(trace, g, h, t_max)?;
    let norms = ((t_max + 1) * (trace.order(g) + trace.order(h))) as u64;
    Ok(norms - 2 * k)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceCheck {
    /// Whether every split keeps all count differences on one side.
    pub preserved: bool,
    pub witness: Option<SplitWitness>,
    pub plain_distance_sq: u64,
    pub refined_distance_sq: u64,
}

/// Evaluates, for two graphs of equal order, the combinatorial condition
/// under which pattern-aware refinement leaves their WLOA distance unchanged:
/// for every iteration and plain color `c` with counts `a` (in `g`) and `b`
/// (in `h`), no child color may have its `g` count below its `h` count when
/// `a >= b`, nor above it when `a <= b`. The squared distances themselves are
/// reported so callers can cross-check.
pub fn wloa_distance_preserved(
    g: &Graph,
    h: &Graph,
    patterns: &PatternSet,
    t_max: usize,
) -> Result<DistanceCheck, TheoryError> {
    if g.order() != h.order() {
        return Err(TheoryError::OrderMismatch(g.order(), h.order()));
    }
    let graphs = [g.clone(), h.clone()];
    let plain = build_trace(&graphs, None, Horizon::Fixed(t_max));
    let refined = build_trace(&graphs, Some(patterns), Horizon::Fixed(t_max));
    let split = color_split_map(&plain, &refined, t_max)?;
    let mut witness = None;
    'outer: for t in 0..=t_max {
        let (pg, ph) = (counts(&plain, 0, t)?, counts(&plain, 1, t)?);
        let (rg, rh) = (counts(&refined, 0, t)?, counts(&refined, 1, t)?);
        for (c, children) in split.splits(t) {
            let a = pg.get(&c).copied().unwrap_or(0);
            let b = ph.get(&c).copied().unwrap_or(0);
            for child in children {
                let x = rg.get(&child).copied().unwrap_or(0);
                let y = rh.get(&child).copied().unwrap_or(0);
                if (a >= b && x < y) || (a <= b && x > y) {
                    witness = Some(SplitWitness {
                        t,
                        color: c,
                        child,
                        parent_counts: (a, b),
                        child_counts: (x, y),
                    });
                    break 'outer;
                }
            }
        }
    }
    Ok(DistanceCheck {
        preserved: witness.is_none(),
        witness,
        plain_distance_sq: wloa_distance_sq(&plain, 0, 1, t_max)?,
        refined_distance_sq: wloa_distance_sq(&refined, 0, 1, t_max)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthCondition {
    pub holds: bool,
    /// Smallest increase of a squared distance between classes.
    pub delta_min: f64,
    /// Largest increase of a squared distance within a class, at least 0
    /// because every point is paired with itself.
    pub delta_max: f64,
}

fn dist_sq(k: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)]
}

/// Compares squared distances before and after a feature change, both given
/// as Gram matrices over the same labeled points.
pub fn margin_growth_condition(
    before: &DMatrix<f64>,
    after: &DMatrix<f64>,
    labels: &[usize],
) -> Result<GrowthCondition, TheoryError> {
    let n = labels.len();
    if before.nrows() != n {
        return Err(TheoryError::LabelCount(before.nrows(), n));
    }
    if after.nrows() != n {
        return Err(TheoryError::LabelCount(after.nrows(), n));
    }
    let mut delta_min = f64::INFINITY;
    let mut delta_max = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let delta = dist_sq(after, i, j) - dist_sq(before, i, j);
            if labels[i] == labels[j] {
                delta_max = delta_max.max(delta);
            } else {
                delta_min = delta_min.min(delta);
            }
        }
    }
    Ok(GrowthCondition {
        holds: delta_min > delta_max,
        delta_min,
        delta_max,
    })
}

/// True iff every class-0 graph has a vertex in an induced copy of some
/// pattern and no class-1 graph has one.
pub fn f_condition_holds(
    graphs: &[Graph],
    labels: &[usize],
    patterns: &PatternSet,
) -> Result<bool, TheoryError> {
    if graphs.len() != labels.len() {
        return Err(TheoryError::LabelCount(graphs.len(), labels.len()));
    }
    for (g, &y) in graphs.iter().zip(labels) {
        if y > 1 {
            return Err(TheoryError::NonBinaryLabel(y));
        }
        let mut hit = false;
        'search: for f in patterns.patterns() {
            for v in 0..g.order() {
                if contains_induced_at(g, v, f)? {
                    hit = true;
                    break 'search;
                }
            }
        }
        if hit != (y == 0) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{construction, cycle, ConstructionKind};
    use crate::graph::disjoint_union;
    use crate::kernels::{build_trace, densify, collection_features, KernelKind};
    use crate::margin::{hard_margin_gram, Points};

    fn c3() -> PatternSet {
        PatternSet::single(cycle(3).unwrap()).unwrap()
    }

    #[test]
    fn split_of_triangle_plus_square() {
        let g = disjoint_union(&cycle(3).unwrap(), &cycle(4).unwrap());
        let graphs = [g];
        let plain = build_trace(&graphs, None, Horizon::Fixed(0));
        let refined = build_trace(&graphs, Some(&c3()), Horizon::Fixed(0));
        let split = color_split_map(&plain, &refined, 0).unwrap();
        let s = split.splits(0);
        assert_eq!(s.len(), 1);
        let children = &s[&0];
        let mut sizes: Vec<u32> = children
            .iter()
            .map(|&c| refined.histogram(0, 0).unwrap().into_iter().find(|x| x.0 == c).unwrap().1)
            .collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 4]);
        for &c in children {
            assert_eq!(split.parent(0, c), Some(0));
        }
    }

    #[test]
    fn empty_pattern_set_is_identity() {
        let c = construction(ConstructionKind::Circulant8Pair, 0).unwrap();
        let plain = build_trace(&c.graphs, None, Horizon::Fixed(2));
        let refined = build_trace(&c.graphs, Some(&PatternSet::empty()), Horizon::Fixed(2));
        let split = color_split_map(&plain, &refined, 2).unwrap();
        for t in 0..=2 {
            for (_, children) in split.splits(t) {
                assert_eq!(children.len(), 1);
            }
        }
        let check = wloa_distance_preserved(&c.graphs[0], &c.graphs[1], &PatternSet::empty(), 3).unwrap();
        assert!(check.preserved);
        assert_eq!(check.plain_distance_sq, check.refined_distance_sq);
    }

    #[test]
    fn circulant_pair_witness() {
        let c = construction(ConstructionKind::Circulant8Pair, 0).unwrap();
        let plain = build_trace(&c.graphs, None, Horizon::Fixed(0));
        let refined = build_trace(&c.graphs, Some(&c3()), Horizon::Fixed(0));
        let split = color_split_map(&plain, &refined, 0).unwrap();
        let children = split.children(0, 0);
        assert_eq!(children.len(), 2);
        let mut per_child: Vec<(u32, u32)> = children
            .iter()
            .map(|&ch| {
                let get = |g| {
                    refined
                        .histogram(g, 0)
                        .unwrap()
                        .into_iter()
                        .find(|x| x.0 == ch)
                        .map_or(0, |x| x.1)
                };
                (get(0), get(1))
            })
            .collect();
        per_child.sort_unstable();
        assert_eq!(per_child, vec![(0, 8), (8, 0)]);

        let check = wloa_distance_preserved(&c.graphs[0], &c.graphs[1], &c3(), 2).unwrap();
        assert!(!check.preserved);
        assert_eq!(check.witness.unwrap().t, 0);
        assert!(check.refined_distance_sq > check.plain_distance_sq);
        let same = wloa_distance_preserved(&c.graphs[0], &c.graphs[0], &c3(), 2).unwrap();
        assert!(same.preserved);
        assert_eq!(same.refined_distance_sq, 0);
    }

    #[test]
    fn order_mismatch() {
        let err = wloa_distance_preserved(&cycle(3).unwrap(), &cycle(4).unwrap(), &c3(), 1);
        assert_eq!(err.unwrap_err(), TheoryError::OrderMismatch(3, 4));
    }

    #[test]
    fn growth_condition_examples() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let r = margin_growth_condition(&k, &k, &[0, 1]).unwrap();
        assert_eq!((r.holds, r.delta_min, r.delta_max), (false, 0.0, 0.0));

        let c = construction(ConstructionKind::Circulant8Pair, 0).unwrap();
        let gram = |fs: Option<&PatternSet>| {
            let trace = build_trace(&c.graphs, fs, Horizon::Fixed(2));
            let feats = collection_features(&trace, KernelKind::Wloa, 2, false).unwrap();
            Points::Dense(densify(&feats).1).gram().unwrap()
        };
        let before = gram(None);
        let after = gram(Some(&c3()));
        let r = margin_growth_condition(&before, &after, &c.targets).unwrap();
        assert!(r.holds && r.delta_min > 0.0 && r.delta_max == 0.0);
        let m0 = hard_margin_gram(&before, &c.targets).unwrap();
        let m1 = hard_margin_gram(&after, &c.targets).unwrap();
        assert!(m1.lambda > m0.lambda);
    }

    #[test]
    fn growth_within_one_class_only() {
        // Class 1 spreads out while the classes stay put: no growth.
        let before = Points::Dense(vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![3.0, 0.0], vec![3.0, 1.0]]);
        let after = Points::Dense(vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![3.0, -2.0], vec![3.0, 3.0]]);
        let labels = [0, 0, 1, 1];
        let r = margin_growth_condition(&before.gram().unwrap(), &after.gram().unwrap(), &labels).unwrap();
        assert!(!r.holds);
        let m0 = hard_margin_gram(&before.gram().unwrap(), &labels).unwrap();
        let m1 = hard_margin_gram(&after.gram().unwrap(), &labels).unwrap();
        assert!((m0.lambda - 1.5).abs() < 1e-9 && (m1.lambda - 1.5).abs() < 1e-9);
    }

    #[test]
    fn f_condition() {
        let c = construction(ConstructionKind::SeparabilitySet { count: 6 }, 16).unwrap();
        let fs = PatternSet::single(c.pattern.clone()).unwrap();
        // The long cycle sits in the class-1 graphs, so the condition holds
        // once the labels are swapped.
        assert!(!f_condition_holds(&c.graphs, &c.targets, &fs).unwrap());
        let swapped: Vec<usize> = c.targets.iter().map(|y| 1 - y).collect();
        assert!(f_condition_holds(&c.graphs, &swapped, &fs).unwrap());

        let tri = disjoint_union(&cycle(3).unwrap(), &cycle(4).unwrap());
        assert!(!f_condition_holds(&[tri.clone(), tri], &[0, 1], &c3()).unwrap());

        let s = construction(ConstructionKind::ShrinkPair, 10).unwrap();
        assert_eq!(s.targets, vec![1, 0]);
        assert!(!f_condition_holds(&s.graphs, &s.targets, &c3()).unwrap());
        // Both graphs contain triangles, so neither labeling qualifies.
        assert!(!f_condition_holds(&s.graphs, &[0, 1], &c3()).unwrap());
        assert_eq!(
            f_condition_holds(&s.graphs, &[0, 2], &c3()).unwrap_err(),
            TheoryError::NonBinaryLabel(2)
        );
    }
}
