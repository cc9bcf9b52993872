//! Market states: bisecting k-means over correlation vectors, state labels
//! and hierarchy classes, pair-admission masks for state-conditioned
//! estimation, and day-to-day steps and increments.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::corrwin::{normalized_distance_unchecked, CorrelationVector, MeanCorrelationSeries};
use crate::error::{Error, Result};

/// Clustering threshold that yields eight states on the full-period panel.
pub const DEFAULT_THRESHOLD: f64 = 0.164;

/// States shorter than this many days are merged into a sibling state of the
/// same class for estimation.
pub const DEFAULT_MIN_STATE_DAYS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Option<[usize; 2]>,
    pub depth: usize,
    /// Indices into the clustered vectors, ascending.
    pub members: Vec<usize>,
    #[serde(skip)]
    pub center: Vec<f64>,
    /// Mean normalized distance of the members to the center.
    pub radius: f64,
    /// Mean of the center's coordinates, i.e. the members' mean correlation.
    pub center_mean: f64,
}

impl ClusterNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Binary bisection tree. Nodes are stored in creation order, so the root is
/// node 0 and split `s` creates nodes `2s + 1` and `2s + 2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterTree {
    pub nodes: Vec<ClusterNode>,
    /// Node ids in the order they were split.
    pub split_order: Vec<usize>,
    pub threshold: f64,
    pub n_points: usize,
    /// Warnings raised while clustering (e.g. 2-means hitting its iteration cap).
    pub diagnostics: Vec<String>,
}

impl ClusterTree {
    pub fn leaves(&self) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.is_leaf()).map(|n| n.id).collect()
    }

    /// Leaf id per clustered vector.
    pub fn leaf_of_points(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.n_points];
        for leaf in self.leaves() {
            for &m in &self.nodes[leaf].members {
                out[m] = leaf;
            }
        }
        out
    }

    /// Nested text rendering, one node per line.
    pub fn dendrogram(&self) -> String {
        let mut out = String::new();
        self.render(0, &mut out);
        out
    }

    fn render(&self, id: usize, out: &mut String) {
        let n = &self.nodes[id];
        out.push_str(&format!(
            "{}node {} (size {}, radius {:.6}, mean {:.6})\n",
            "  ".repeat(n.depth),
            n.id,
            n.size(),
            n.radius,
            n.center_mean
        ));
        if let Some([a, b]) = n.children {
            self.render(a, out);
            self.render(b, out);
        }
    }
}

/// Bisecting k-means with the normalized Euclidean metric.
///
/// Starting from one cluster holding every vector, the leaf with the largest
/// radius (ties: lower mean correlation, then lower id) is split by 2-means
/// until every leaf radius is below `threshold`.
pub fn bisect_kmeans(vectors: &[CorrelationVector], threshold: f64, seed: u64) -> Result<ClusterTree> {
    let rows: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
    bisect_kmeans_rows(&rows, threshold, seed, KMeansOptions::default())
}

pub fn bisect_kmeans_rows(rows: &[&[f64]], threshold: f64, seed: u64, opts: KMeansOptions) -> Result<ClusterTree> {
    if rows.is_empty() {
        return Err(Error::InsufficientData {
            what: "clustering",
            needed: 1,
            got: 0,
        });
    }
    if !(threshold > 0.0) {
        return Err(Error::validation("clustering threshold must be positive"));
    }
    let d = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: bad.len(),
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut tree = ClusterTree {
        nodes: vec![make_node(rows, 0, None, 0, (0..rows.len()).collect())],
        split_order: Vec::new(),
        threshold,
        n_points: rows.len(),
        diagnostics: Vec::new(),
    };
    loop {
        let next = tree
            .nodes
            .iter()
            .filter(|n| n.is_leaf() && n.radius >= threshold && n.size() >= 2)
            .min_by(|a, b| {
                b.radius
                    .total_cmp(&a.radius)
                    .then(a.center_mean.total_cmp(&b.center_mean))
                    .then(a.id.cmp(&b.id))
            })
            .map(|n| n.id);
        let Some(id) = next else { break };
        let members = tree.nodes[id].members.clone();
        let split = two_means(rows, &members, &mut rng, opts);
        if !split.converged {
            let msg = format!("2-means on node {id} hit the iteration cap; kept best split");
            log::warn!("{msg}");
            tree.diagnostics.push(msg);
        }
        let (left, right): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&m| !split.assignment[m]);
        let depth = tree.nodes[id].depth + 1;
        let a = tree.nodes.len();
        tree.nodes.push(make_node(rows, a, Some(id), depth, left));
        tree.nodes.push(make_node(rows, a + 1, Some(id), depth, right));
        tree.nodes[id].children = Some([a, a + 1]);
        tree.split_order.push(id);
    }
    Ok(tree)
}

fn make_node(rows: &[&[f64]], id: usize, parent: Option<usize>, depth: usize, members: Vec<usize>) -> ClusterNode {
    let center = centroid(rows, &members);
    let radius = members
        .iter()
        .map(|&m| normalized_distance_unchecked(rows[m], &center))
        .sum::<f64>()
        / members.len() as f64;
    let center_mean = if center.is_empty() {
        0.0
    } else {
        center.iter().sum::<f64>() / center.len() as f64
    };
    ClusterNode {
        id,
        parent,
        children: None,
        depth,
        members,
        center,
        radius,
        center_mean,
    }
}

fn centroid(rows: &[&[f64]], members: &[usize]) -> Vec<f64> {
    let d = rows[0].len();
    let mut c = vec![0.0; d];
    for &m in members {
        c.iter_mut().zip(rows[m]).for_each(|(a, b)| *a += b);
    }
    c.iter_mut().for_each(|a| *a /= members.len() as f64);
    c
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct Split {
    /// Indexed by global point id; `true` means the second cluster.
    assignment: Vec<bool>,
    converged: bool,
}

/// Best of `opts.restarts` Lloyd runs with k = 2. The first run starts from
/// the farthest pair seeded at the point farthest from the centroid, later
/// runs seed the farthest-pair search at a random member.
fn two_means(rows: &[&[f64]], members: &[usize], rng: &mut ChaCha20Rng, opts: KMeansOptions) -> Split {
    let farthest_from = |p: &[f64]| -> usize {
        let mut best = members[0];
        let mut best_d = -1.0;
        for &m in members {
            let dd = sq_dist(rows[m], p);
            if dd > best_d {
                best_d = dd;
                best = m;
            }
        }
        best
    };
    let mut best: Option<(f64, Vec<bool>, bool)> = None;
    for restart in 0..opts.restarts.max(1) {
        let start: Vec<f64> = if restart == 0 {
            let c = centroid(rows, members);
            rows[farthest_from(&c)].to_vec()
        } else {
            rows[members[rng.random_range(0..members.len())]].to_vec()
        };
        let a = farthest_from(&start);
        let b = farthest_from(rows[a]);
        let mut centers = [rows[a].to_vec(), rows[b].to_vec()];
        let mut assignment = vec![false; rows.len()];
        let mut converged = false;
        for iter in 0..opts.max_iter {
            let mut changed = false;
            for &m in members {
                let second = sq_dist(rows[m], &centers[1]) < sq_dist(rows[m], &centers[0]);
                changed |= assignment[m] != second;
                assignment[m] = second;
            }
            let (g0, g1): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&m| !assignment[m]);
            // Empty cluster: move the point farthest from the other center.
            if g0.is_empty() || g1.is_empty() {
                let (full, empty_second) = if g0.is_empty() { (1, false) } else { (0, true) };
                let mut far = members[0];
                let mut far_d = -1.0;
                for &m in members {
                    let dd = sq_dist(rows[m], &centers[full]);
                    if dd > far_d {
                        far_d = dd;
                        far = m;
                    }
                }
                assignment[far] = empty_second;
                changed = true;
            }
            let (g0, g1): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&m| !assignment[m]);
            centers = [centroid(rows, &g0), centroid(rows, &g1)];
            if iter > 0 && !changed {
                converged = true;
                break;
            }
        }
        let sse: f64 = members
            .iter()
            .map(|&m| sq_dist(rows[m], &centers[assignment[m] as usize]))
            .sum();
        if best.as_ref().is_none_or(|(b, _, _)| sse < *b) {
            best = Some((sse, assignment, converged));
        }
    }
    let (_, assignment, converged) = best.expect("at least one restart");
    Split { assignment, converged }
}

/// Hierarchy class of a market state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StateClass {
    Calm,
    Intermediate,
    Turbulent,
}

impl fmt::Display for StateClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateClass::Calm => "calm",
            StateClass::Intermediate => "intermediate",
            StateClass::Turbulent => "turbulent",
        })
    }
}

impl std::str::FromStr for StateClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calm" => Ok(Self::Calm),
            "intermediate" => Ok(Self::Intermediate),
            "turbulent" => Ok(Self::Turbulent),
            other => Err(Error::validation(format!("unknown state class `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateInfo {
    /// 1-based state label.
    pub label: usize,
    /// Leaf node of the cluster tree, when the assignment came from a tree.
    pub node: Option<usize>,
    pub days: usize,
    pub mean_cbar: f64,
    pub class: StateClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateAssignment {
    pub dates: Vec<String>,
    /// 1-based state label per date.
    pub labels: Vec<usize>,
    /// Indexed by `label - 1`.
    pub states: Vec<StateInfo>,
}

impl StateAssignment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn class_of_label(&self, label: usize) -> StateClass {
        self.states[label - 1].class
    }

    pub fn classes(&self) -> Vec<StateClass> {
        self.labels.iter().map(|&l| self.class_of_label(l)).collect()
    }

    /// Rebuilds an assignment from per-date labels and classes, e.g. when
    /// reading a state timeline back from disk.
    pub fn from_timeline(dates: Vec<String>, labels: Vec<usize>, classes: Vec<StateClass>, cbar: &[f64]) -> Result<Self> {
        if labels.len() != dates.len() || classes.len() != dates.len() || cbar.len() != dates.len() {
            return Err(Error::Alignment("timeline columns differ in length".into()));
        }
        let n_states = labels.iter().copied().max().unwrap_or(0);
        let mut states: Vec<Option<StateInfo>> = vec![None; n_states];
        let mut sums = vec![0.0; n_states];
        for ((&l, &c), &v) in labels.iter().zip(&classes).zip(cbar) {
            if l == 0 {
                return Err(Error::validation("state labels are 1-based"));
            }
            let s = states[l - 1].get_or_insert(StateInfo {
                label: l,
                node: None,
                days: 0,
                mean_cbar: 0.0,
                class: c,
            });
            if s.class != c {
                return Err(Error::validation(format!("state {l} assigned to two classes")));
            }
            s.days += 1;
            sums[l - 1] += v;
        }
        let states = states
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.map(|mut s| {
                    s.mean_cbar = sums[i] / s.days as f64;
                    s
                })
                .ok_or_else(|| Error::validation(format!("state {} never occupied", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dates, labels, states })
    }
}

/// Labels the leaves of `tree`: the state occupied on the first date is 1,
/// the rest are numbered by ascending within-state mean of `cbar`.
///
/// Classes come from the first two bisections. They leave three subtrees,
/// which ordered by mean `cbar` are calm, intermediate and turbulent. With
/// only two leaves the lower one is calm and the upper one turbulent; a
/// single leaf is calm.
pub fn label_states(tree: &ClusterTree, cbar: &MeanCorrelationSeries) -> Result<StateAssignment> {
    if tree.n_points != cbar.len() {
        return Err(Error::Alignment(format!(
            "tree clusters {} points but the mean correlation series has {}",
            tree.n_points,
            cbar.len()
        )));
    }
    if cbar.is_empty() {
        return Err(Error::InsufficientData {
            what: "state labels",
            needed: 1,
            got: 0,
        });
    }
    let mean_over = |members: &[usize]| members.iter().map(|&m| cbar.values[m]).sum::<f64>() / members.len() as f64;
    let leaf_of = tree.leaf_of_points();
    let first = leaf_of[0];
    let mut others: Vec<(usize, f64)> = tree
        .leaves()
        .into_iter()
        .filter(|&l| l != first)
        .map(|l| (l, mean_over(&tree.nodes[l].members)))
        .collect();
    others.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut order = vec![(first, mean_over(&tree.nodes[first].members))];
    order.extend(others);

    // Class subtrees.
    let groups: Vec<usize> = match tree.split_order.len() {
        0 => vec![0],
        1 => vec![1, 2],
        _ => {
            let second = tree.split_order[1];
            let [a, b] = tree.nodes[second].children.expect("split node has children");
            let sibling = if second == 1 { 2 } else { 1 };
            vec![sibling, a, b]
        }
    };
    let mut ranked: Vec<(usize, f64)> = groups.iter().map(|&g| (g, mean_over(&tree.nodes[g].members))).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let class_names: &[StateClass] = match ranked.len() {
        1 => &[StateClass::Calm],
        2 => &[StateClass::Calm, StateClass::Turbulent],
        _ => &[StateClass::Calm, StateClass::Intermediate, StateClass::Turbulent],
    };
    let class_of_node = |mut id: usize| -> StateClass {
        loop {
            if let Some(pos) = ranked.iter().position(|(g, _)| *g == id) {
                return class_names[pos];
            }
            id = tree.nodes[id].parent.expect("every leaf descends from a class subtree");
        }
    };

    let mut labels = vec![0; cbar.len()];
    let states = order
        .iter()
        .enumerate()
        .map(|(i, &(leaf, mean))| {
            for &m in &tree.nodes[leaf].members {
                labels[m] = i + 1;
            }
            StateInfo {
                label: i + 1,
                node: Some(leaf),
                days: tree.nodes[leaf].size(),
                mean_cbar: mean,
                class: class_of_node(leaf),
            }
        })
        .collect();
    Ok(StateAssignment {
        dates: cbar.dates.clone(),
        labels,
        states,
    })
}

/// Admission rule for displacement pairs `(t, t + tau)`: every day in
/// `[t, t + tau]` must belong to the group.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMask {
    pub name: String,
    member: Vec<bool>,
    /// Last index of the contiguous member run starting at each member day.
    run_end: Vec<usize>,
}

impl PairMask {
    pub fn from_membership(name: impl Into<String>, member: Vec<bool>) -> Self {
        let n = member.len();
        let mut run_end = vec![0; n];
        for t in (0..n).rev() {
            run_end[t] = if member[t] && t + 1 < n && member[t + 1] { run_end[t + 1] } else { t };
        }
        Self {
            name: name.into(),
            member,
            run_end,
        }
    }

    /// Admits every pair.
    pub fn all(n: usize) -> Self {
        Self::from_membership("all", vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.member.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member.is_empty()
    }

    pub fn is_member(&self, t: usize) -> bool {
        self.member[t]
    }

    pub fn admits(&self, t: usize, tau: usize) -> bool {
        t + tau < self.member.len() && self.member[t] && self.run_end[t] >= t + tau
    }

    /// Number of admitted pairs at lag `tau`.
    pub fn count(&self, tau: usize) -> usize {
        (0..self.len()).filter(|&t| self.admits(t, tau)).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionMode {
    /// No state transitions inside a displacement.
    PerState,
    /// Transitions allowed between states of the same class.
    PerClass,
}

impl std::str::FromStr for ConditionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-state" | "state" => Ok(Self::PerState),
            "per-class" | "class" => Ok(Self::PerClass),
            other => Err(Error::validation(format!("unknown condition mode `{other}`"))),
        }
    }
}

/// One mask per state (named `state <label>`) or per occupied class.
pub fn condition_masks(assign: &StateAssignment, mode: ConditionMode) -> Vec<PairMask> {
    match mode {
        ConditionMode::PerState => (1..=assign.n_states())
            .map(|l| {
                PairMask::from_membership(format!("state {l}"), assign.labels.iter().map(|&x| x == l).collect())
            })
            .collect(),
        ConditionMode::PerClass => {
            let classes = assign.classes();
            [StateClass::Calm, StateClass::Intermediate, StateClass::Turbulent]
                .into_iter()
                .filter(|c| classes.contains(c))
                .map(|c| PairMask::from_membership(c.to_string(), classes.iter().map(|x| *x == c).collect()))
                .collect()
        }
    }
}

/// A set of state labels estimated together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateGroup {
    pub labels: Vec<usize>,
}

impl StateGroup {
    pub fn name(&self) -> String {
        let parts: Vec<String> = self.labels.iter().map(usize::to_string).collect();
        format!("state {}", parts.join("+"))
    }

    pub fn mask(&self, assign: &StateAssignment) -> PairMask {
        PairMask::from_membership(self.name(), assign.labels.iter().map(|l| self.labels.contains(l)).collect())
    }
}

/// Groups states for per-state estimation. Explicit merge lists are applied
/// first; any remaining state with fewer than `min_days` days is merged into
/// the same-class group whose mean correlation is closest. States with no
/// same-class partner stay alone.
pub fn merge_short_states(assign: &StateAssignment, explicit: &[Vec<usize>], min_days: usize) -> Result<Vec<StateGroup>> {
    let n = assign.n_states();
    let mut group_of: Vec<usize> = (0..n).collect();
    for merge in explicit {
        let Some(&head) = merge.first() else { continue };
        for &l in merge {
            if l == 0 || l > n {
                return Err(Error::validation(format!("merge list names unknown state {l}")));
            }
        }
        let target = group_of[head - 1];
        for &l in merge {
            let old = group_of[l - 1];
            group_of.iter_mut().filter(|g| **g == old).for_each(|g| *g = target);
        }
    }
    let days_of = |g: usize, group_of: &[usize]| -> usize {
        (0..n).filter(|&i| group_of[i] == g).map(|i| assign.states[i].days).sum()
    };
    let mean_of = |g: usize, group_of: &[usize]| -> f64 {
        let (s, c) = (0..n)
            .filter(|&i| group_of[i] == g)
            .fold((0.0, 0usize), |(s, c), i| {
                let st = &assign.states[i];
                (s + st.mean_cbar * st.days as f64, c + st.days)
            });
        s / c as f64
    };
    loop {
        let mut roots: Vec<usize> = group_of.clone();
        roots.sort_unstable();
        roots.dedup();
        // Shortest group that still has a same-class partner, with its closest partner.
        let candidate = roots
            .iter()
            .copied()
            .filter(|&g| days_of(g, &group_of) < min_days)
            .filter_map(|g| {
                let mean = mean_of(g, &group_of);
                roots
                    .iter()
                    .copied()
                    .filter(|&h| h != g && assign.states[h].class == assign.states[g].class)
                    .min_by(|&a, &b| {
                        (mean_of(a, &group_of) - mean)
                            .abs()
                            .total_cmp(&(mean_of(b, &group_of) - mean).abs())
                            .then(a.cmp(&b))
                    })
                    .map(|h| (g, h))
            })
            .min_by_key(|&(g, _)| (days_of(g, &group_of), g));
        let Some((g, h)) = candidate else { break };
        let (keep, drop) = (g.min(h), g.max(h));
        group_of.iter_mut().filter(|x| **x == drop).for_each(|x| *x = keep);
    }
    let mut roots = group_of.clone();
    roots.sort_unstable();
    roots.dedup();
    Ok(roots
        .into_iter()
        .map(|g| StateGroup {
            labels: (0..n).filter(|&i| group_of[i] == g).map(|i| i + 1).collect(),
        })
        .collect())
}

/// Daily steps of the correlation vector and absolute increments of the mean
/// correlation. Entry `t` describes the move from day `t` to day `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSeries {
    pub dates: Vec<String>,
    /// `||c(t+1) - c(t)|| / sqrt(d)`
    pub steps: Vec<f64>,
    /// `|cbar(t+1) - cbar(t)|`
    pub increments: Vec<f64>,
    /// State changes between `t` and `t + 1`.
    pub transition: Vec<bool>,
}

pub fn steps_and_increments(
    vectors: &[CorrelationVector],
    cbar: &MeanCorrelationSeries,
    assign: &StateAssignment,
) -> Result<StepSeries> {
    let rows: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
    steps_and_increments_rows(&rows, cbar, assign)
}

pub fn steps_and_increments_rows(
    rows: &[&[f64]],
    cbar: &MeanCorrelationSeries,
    assign: &StateAssignment,
) -> Result<StepSeries> {
    let n = rows.len();
    if cbar.len() != n || assign.len() != n {
        return Err(Error::Alignment(format!(
            "{} vectors, {} mean correlations, {} state labels",
            n,
            cbar.len(),
            assign.len()
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientData {
            what: "steps",
            needed: 2,
            got: n,
        });
    }
    let mut series = StepSeries {
        dates: cbar.dates[..n - 1].to_vec(),
        steps: Vec::with_capacity(n - 1),
        increments: Vec::with_capacity(n - 1),
        transition: Vec::with_capacity(n - 1),
    };
    for t in 0..n - 1 {
        series.steps.push(normalized_distance_unchecked(rows[t + 1], rows[t]));
        series.increments.push((cbar.values[t + 1] - cbar.values[t]).abs());
        series.transition.push(assign.labels[t + 1] != assign.labels[t]);
    }
    Ok(series)
}

/// Histograms of steps and increments split by transition flag, over the
/// common range `[0, max]` of each quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepHistograms {
    pub step_edges: Vec<f64>,
    pub steps_within: Vec<usize>,
    pub steps_transition: Vec<usize>,
    pub increment_edges: Vec<f64>,
    pub increments_within: Vec<usize>,
    pub increments_transition: Vec<usize>,
}

impl StepSeries {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn split(&self, values: &[f64], transition: bool) -> Vec<f64> {
        values
            .iter()
            .zip(&self.transition)
            .filter(|(_, f)| **f == transition)
            .map(|(v, _)| *v)
            .collect()
    }

    /// Mean increment within states and on transition days.
    pub fn mean_increments(&self) -> (Option<f64>, Option<f64>) {
        let m = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        (m(self.split(&self.increments, false)), m(self.split(&self.increments, true)))
    }

    pub fn histograms(&self, bins: usize) -> StepHistograms {
        let bins = bins.max(1);
        let smax = self.steps.iter().fold(0.0_f64, |a, b| a.max(*b));
        let imax = self.increments.iter().fold(0.0_f64, |a, b| a.max(*b));
        StepHistograms {
            step_edges: edges(smax, bins),
            steps_within: histogram(&self.split(&self.steps, false), smax, bins),
            steps_transition: histogram(&self.split(&self.steps, true), smax, bins),
            increment_edges: edges(imax, bins),
            increments_within: histogram(&self.split(&self.increments, false), imax, bins),
            increments_transition: histogram(&self.split(&self.increments, true), imax, bins),
        }
    }
}

fn edges(max: f64, bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| max * i as f64 / bins as f64).collect()
}

fn histogram(values: &[f64], max: f64, bins: usize) -> Vec<usize> {
    let mut h = vec![0; bins];
    for v in values {
        let i = if max > 0.0 { ((v / max) * bins as f64) as usize } else { 0 };
        h[i.min(bins - 1)] += 1;
    }
    h
}
