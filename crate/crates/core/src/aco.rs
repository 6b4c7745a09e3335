//! Multi-agent ant colony feature selection across interconnected per-omic
//! feature networks.
//!
//! Each iteration places `agents_per_omic` agents on distinct start features
//! of every omic. An agent extends its solution one feature at a time, either
//! greedily inside its current omic or by a probabilistic jump that first
//! draws an omic from the importance vector `p`. Solutions are scored by
//! `(Q + R) / 3` and then node/edge desirabilities and `p` are updated.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{min_max_normalize, SimilarityGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcoConfig {
    pub iterations: usize,
    pub agents_per_omic: usize,
    pub c_v: f64,
    pub c_e: f64,
    pub rho_v: f64,
    pub rho_e: f64,
    pub rho_m: f64,
    pub q0: f64,
    pub budget_per_agent: usize,
    /// Total number of features kept, split equally over omics.
    pub top_b: usize,
    /// Set per fold by the pipeline, not read from configuration files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for AcoConfig {
    fn default() -> Self {
        AcoConfig {
            iterations: 50,
            agents_per_omic: 10,
            c_v: 0.2,
            c_e: 0.2,
            rho_v: 0.1,
            rho_e: 0.1,
            rho_m: 0.1,
            q0: 0.8,
            budget_per_agent: 30,
            top_b: 300,
            seed: 0,
        }
    }
}

impl AcoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.iterations == 0 {
            return bad("aco iterations must be at least 1".into());
        }
        if self.agents_per_omic == 0 || self.budget_per_agent == 0 {
            return bad("agents_per_omic and budget_per_agent must be positive".into());
        }
        for (name, rho) in [("rho_v", self.rho_v), ("rho_e", self.rho_e), ("rho_m", self.rho_m)] {
            if !(rho > 0.0 && rho <= 1.0) {
                return bad(format!("{name}={rho} outside (0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.q0) {
            return bad(format!("q0={} outside [0, 1]", self.q0));
        }
        if !(self.c_v > 0.0 && self.c_e > 0.0 && self.c_v.is_finite() && self.c_e.is_finite()) {
            return bad("initial desirabilities must be positive".into());
        }
        Ok(())
    }
}

/// Node and edge desirabilities plus the omic importance vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesirabilityState {
    pub node_tau: Vec<Vec<f64>>,
    /// Indexed like the edges of the corresponding feature net.
    pub edge_tau: Vec<Vec<f64>>,
    pub p: Vec<f64>,
}

impl DesirabilityState {
    pub fn new(nets: &[SimilarityGraph], c_v: f64, c_e: f64) -> DesirabilityState {
        let m = nets.len();
        DesirabilityState {
            node_tau: nets.iter().map(|n| vec![c_v; n.node_count]).collect(),
            edge_tau: nets.iter().map(|n| vec![c_e; n.edges.len()]).collect(),
            p: vec![1.0 / m as f64; m],
        }
    }

    /// CSV with columns `omic,kind,u,v,tau`; nodes use `v = u`.
    pub fn write_csv(&self, path: &Path, nets: &[SimilarityGraph], omic_names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["omic", "kind", "u", "v", "tau"])?;
        for (m, name) in omic_names.iter().enumerate() {
            for (i, t) in self.node_tau[m].iter().enumerate() {
                w.write_record([name.as_str(), "node", &i.to_string(), &i.to_string(), &t.to_string()])?;
            }
            for (e, t) in nets[m].edges.iter().zip(&self.edge_tau[m]) {
                w.write_record([name.as_str(), "edge", &e.u.to_string(), &e.v.to_string(), &t.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSolution {
    /// `(omic, feature)` in selection order; the start node comes first.
    pub selected: Vec<(usize, usize)>,
    /// `(omic, edge index)` of every intra-omic stored edge walked.
    pub traversed_edges: Vec<(usize, usize)>,
    pub fitness: f64,
}

/// What one iteration produced; kept for inspection and tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub solutions: Vec<AgentSolution>,
    pub best: usize,
    pub best_fitness: f64,
    pub p: Vec<f64>,
}

/// Inputs of a selection run. `matrices[m]` is patients × features (already
/// scaled), `train`/`valid` index patients for the fitness classifier.
pub struct SelectionProblem<'a> {
    pub matrices: Vec<&'a Array2<f64>>,
    pub labels: &'a [usize],
    pub class_count: usize,
    pub train: &'a [usize],
    pub valid: &'a [usize],
    pub nets: &'a [SimilarityGraph],
    pub relevance: &'a [Vec<f64>],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Per omic, kept feature indices by descending final score.
    pub ranked: Vec<Vec<usize>>,
    /// Per omic, final score of every feature.
    pub scores: Vec<Vec<f64>>,
    pub state: DesirabilityState,
    pub history: Vec<IterationRecord>,
}

impl SelectionResult {
    /// Kept features per omic in ascending index order.
    pub fn selected_sorted(&self) -> Vec<Vec<usize>> {
        self.ranked
            .iter()
            .map(|r| {
                let mut s = r.clone();
                s.sort_unstable();
                s
            })
            .collect()
    }
}

/// Mean stored edge weight between `candidate` and `selected` (same omic);
/// absent edges count 0, an empty selection gives 0.
pub fn avg_redundancy(net: &SimilarityGraph, candidate: usize, selected: &[usize]) -> f64 {
    if selected.is_empty() {
        return 0.0;
    }
    let total: f64 = selected
        .iter()
        .filter_map(|&s| {
            let (u, v) = if s < candidate { (s, candidate) } else { (candidate, s) };
            net.edges.iter().find(|e| e.u == u && e.v == v).map(|e| e.weight)
        })
        .sum();
    total / selected.len() as f64
}

/// Index with the highest score; ties go to the lowest index.
pub fn greedy_pick(candidates: &[(usize, f64)]) -> Option<usize> {
    candidates
        .iter()
        .copied()
        .fold(None, |best: Option<(usize, f64)>, (j, s)| match best {
            Some((bj, bs)) if bs > s || (bs == s && bj < j) => Some((bj, bs)),
            _ => Some((j, s)),
        })
        .map(|(j, _)| j)
}

/// Negative numerators clamp to 0; all-zero numerators give a uniform
/// distribution.
pub fn transition_probabilities(numerators: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = numerators.iter().map(|&n| n.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total > 0.0 {
        clamped.iter().map(|c| c / total).collect()
    } else {
        vec![1.0 / numerators.len() as f64; numerators.len()]
    }
}

fn draw<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left `u` beyond the cumulative sum: last positive entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub fn fitness_value(q: f64, r: f64) -> f64 {
    (q + r) / 3.0
}

/// Nearest-centroid accuracy on `valid` using `columns` (omic, feature).
/// Ties go to the lower class; a single-class training set predicts that class.
pub fn nearest_centroid_accuracy(
    matrices: &[&Array2<f64>],
    columns: &[(usize, usize)],
    labels: &[usize],
    class_count: usize,
    train: &[usize],
    valid: &[usize],
) -> f64 {
    if valid.is_empty() {
        return 0.0;
    }
    let d = columns.len();
    let mut centroids = vec![vec![0.0; d]; class_count];
    let mut counts = vec![0usize; class_count];
    for &r in train {
        let c = labels[r];
        counts[c] += 1;
        for (k, &(m, f)) in columns.iter().enumerate() {
            centroids[c][k] += matrices[m][[r, f]];
        }
    }
    let present: Vec<usize> = (0..class_count).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        let majority = present.first().copied().unwrap_or(0);
        return valid.iter().filter(|&&r| labels[r] == majority).count() as f64 / valid.len() as f64;
    }
    for &c in &present {
        for v in &mut centroids[c] {
            *v /= counts[c] as f64;
        }
    }
    let correct = valid
        .iter()
        .filter(|&&r| {
            let mut best = (usize::MAX, f64::INFINITY);
            for &c in &present {
                let dist: f64 = columns
                    .iter()
                    .enumerate()
                    .map(|(k, &(m, f))| (matrices[m][[r, f]] - centroids[c][k]).powi(2))
                    .sum();
                if dist < best.1 {
                    best = (c, dist);
                }
            }
            best.0 == labels[r]
        })
        .count();
    correct as f64 / valid.len() as f64
}

/// Mean relevance of the selection minus mean weight of traversed edges.
pub fn relevance_term(problem: &SelectionProblem, selected: &[(usize, usize)], edges: &[(usize, usize)]) -> f64 {
    let rel = selected.iter().map(|&(m, f)| problem.relevance[m][f]).sum::<f64>() / selected.len() as f64;
    let red = if edges.is_empty() {
        0.0
    } else {
        edges.iter().map(|&(m, e)| problem.nets[m].edges[e].weight).sum::<f64>() / edges.len() as f64
    };
    rel - red
}

pub fn fitness(problem: &SelectionProblem, selected: &[(usize, usize)], edges: &[(usize, usize)]) -> f64 {
    let q = nearest_centroid_accuracy(
        &problem.matrices,
        selected,
        problem.labels,
        problem.class_count,
        problem.train,
        problem.valid,
    );
    fitness_value(q, relevance_term(problem, selected, edges))
}

/// `(1-ρ)τ + ρ(share + bonus)`.
pub fn decay_update(tau: f64, rho: f64, share: f64, bonus: f64) -> f64 {
    (1.0 - rho) * tau + rho * (share + bonus)
}

/// Blends `p` toward the share of selections per omic and renormalises.
pub fn update_omic_importance(p: &[f64], selections_per_omic: &[usize], rho_m: f64) -> Vec<f64> {
    let total: usize = selections_per_omic.iter().sum();
    let blended: Vec<f64> = p
        .iter()
        .zip(selections_per_omic)
        .map(|(&pm, &c)| {
            let share = if total == 0 { pm } else { c as f64 / total as f64 };
            ((1.0 - rho_m) * pm + rho_m * share).max(1e-6)
        })
        .collect();
    let s: f64 = blended.iter().sum();
    blended.into_iter().map(|v| v / s).collect()
}

/// Applies the node/edge rules for one iteration's solutions.
pub fn update_desirability(state: &mut DesirabilityState, solutions: &[AgentSolution], best: usize, cfg: &AcoConfig) {
    let total_nodes: usize = solutions.iter().map(|s| s.selected.len()).sum();
    let total_edges: usize = solutions.iter().map(|s| s.traversed_edges.len()).sum();
    let mut node_count: Vec<Vec<usize>> = state.node_tau.iter().map(|t| vec![0; t.len()]).collect();
    let mut edge_count: Vec<Vec<usize>> = state.edge_tau.iter().map(|t| vec![0; t.len()]).collect();
    for s in solutions {
        for &(m, f) in &s.selected {
            node_count[m][f] += 1;
        }
        for &(m, e) in &s.traversed_edges {
            edge_count[m][e] += 1;
        }
    }
    let bonus = solutions[best].fitness.max(0.0);
    let mut node_bonus: Vec<Vec<bool>> = state.node_tau.iter().map(|t| vec![false; t.len()]).collect();
    let mut edge_bonus: Vec<Vec<bool>> = state.edge_tau.iter().map(|t| vec![false; t.len()]).collect();
    for &(m, f) in &solutions[best].selected {
        node_bonus[m][f] = true;
    }
    for &(m, e) in &solutions[best].traversed_edges {
        edge_bonus[m][e] = true;
    }
    let share = |count: usize, total: usize| if total == 0 { 0.0 } else { count as f64 / total as f64 };
    for (m, taus) in state.node_tau.iter_mut().enumerate() {
        for (f, tau) in taus.iter_mut().enumerate() {
            let b = if node_bonus[m][f] { bonus } else { 0.0 };
            *tau = decay_update(*tau, cfg.rho_v, share(node_count[m][f], total_nodes), b);
        }
    }
    for (m, taus) in state.edge_tau.iter_mut().enumerate() {
        for (e, tau) in taus.iter_mut().enumerate() {
            let b = if edge_bonus[m][e] { bonus } else { 0.0 };
            *tau = decay_update(*tau, cfg.rho_e, share(edge_count[m][e], total_edges), b);
        }
    }
}

/// Seed of an agent's stream from `(seed, iteration, omic, agent)`.
pub fn agent_seed(seed: u64, iteration: usize, omic: usize, agent: usize) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [iteration as u64, omic as u64, agent as u64] {
        h = splitmix(h ^ v.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-omic neighbour lists `(neighbour, edge index)`.
struct Neighbours(Vec<Vec<Vec<(usize, usize)>>>);

struct Agent<'p, 'a> {
    problem: &'p SelectionProblem<'a>,
    nb: &'p Neighbours,
    state: &'p DesirabilityState,
    cfg: &'p AcoConfig,
    chosen: Vec<Vec<bool>>,
    /// Sum of stored edge weights from selected features, per omic/feature.
    redundancy: Vec<Vec<f64>>,
    per_omic: Vec<usize>,
    solution: AgentSolution,
}

impl<'p, 'a> Agent<'p, 'a> {
    fn new(problem: &'p SelectionProblem<'a>, nb: &'p Neighbours, state: &'p DesirabilityState, cfg: &'p AcoConfig) -> Self {
        let dims: Vec<usize> = problem.nets.iter().map(|n| n.node_count).collect();
        Agent {
            problem,
            nb,
            state,
            cfg,
            chosen: dims.iter().map(|&d| vec![false; d]).collect(),
            redundancy: dims.iter().map(|&d| vec![0.0; d]).collect(),
            per_omic: vec![0; dims.len()],
            solution: AgentSolution { selected: Vec::new(), traversed_edges: Vec::new(), fitness: 0.0 },
        }
    }

    fn eta2(&self, m: usize, j: usize) -> f64 {
        if self.per_omic[m] == 0 {
            0.0
        } else {
            self.redundancy[m][j] / self.per_omic[m] as f64
        }
    }

    fn exhausted(&self, m: usize) -> bool {
        self.per_omic[m] == self.chosen[m].len()
    }

    fn select(&mut self, m: usize, j: usize, from: Option<(usize, usize)>) {
        if let Some((fm, i)) = from {
            if fm == m {
                if let Some(&(_, e)) = self.nb.0[m][i].iter().find(|(n, _)| *n == j) {
                    self.solution.traversed_edges.push((m, e));
                }
            }
        }
        self.chosen[m][j] = true;
        self.per_omic[m] += 1;
        for &(n, e) in &self.nb.0[m][j] {
            self.redundancy[m][n] += self.problem.nets[m].edges[e].weight;
        }
        self.solution.selected.push((m, j));
    }

    fn greedy(&self, m: usize, i: usize) -> Option<usize> {
        let mut edge_tau = vec![0.0; self.chosen[m].len()];
        for &(n, e) in &self.nb.0[m][i] {
            edge_tau[n] = self.state.edge_tau[m][e];
        }
        let cands: Vec<(usize, f64)> = (0..self.chosen[m].len())
            .filter(|&j| !self.chosen[m][j])
            .map(|j| (j, self.problem.relevance[m][j] + self.state.node_tau[m][j] + edge_tau[j] - self.eta2(m, j)))
            .collect();
        greedy_pick(&cands)
    }

    fn probabilistic<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        let omic_w: Vec<f64> =
            (0..self.per_omic.len()).map(|m| if self.exhausted(m) { 0.0 } else { self.state.p[m] }).collect();
        let m = draw(&transition_probabilities(&omic_w), rng);
        let feasible: Vec<usize> = (0..self.chosen[m].len()).filter(|&j| !self.chosen[m][j]).collect();
        let nums: Vec<f64> = feasible
            .iter()
            .map(|&j| self.problem.relevance[m][j] + self.state.node_tau[m][j] - self.eta2(m, j))
            .collect();
        (m, feasible[draw(&transition_probabilities(&nums), rng)])
    }

    fn construct(mut self, omic: usize, start: usize, rng: &mut ChaCha8Rng) -> AgentSolution {
        self.select(omic, start, None);
        let (mut m, mut i) = (omic, start);
        while self.solution.selected.len() < self.cfg.budget_per_agent {
            let q: f64 = rng.random();
            let next = if q <= self.cfg.q0 {
                self.greedy(m, i).map(|j| (m, j))
            } else {
                None
            };
            let (nm, j) = match next {
                Some(x) => x,
                None => self.probabilistic(rng),
            };
            self.select(nm, j, Some((m, i)));
            (m, i) = (nm, j);
        }
        let f = fitness(self.problem, &self.solution.selected, &self.solution.traversed_edges);
        self.solution.fitness = f;
        self.solution
    }
}

fn check_problem(problem: &SelectionProblem, cfg: &AcoConfig) -> Result<()> {
    cfg.validate()?;
    let m = problem.nets.len();
    if m == 0 || problem.matrices.len() != m || problem.relevance.len() != m {
        return Err(Error::shape("selection needs one matrix, net and relevance vector per omic"));
    }
    for k in 0..m {
        let d = problem.nets[k].node_count;
        if problem.matrices[k].ncols() != d || problem.relevance[k].len() != d {
            return Err(Error::shape(format!("omic {k}: net has {d} nodes, matrix/relevance disagree")));
        }
        if cfg.agents_per_omic > d {
            return Err(Error::Config(format!("{} agents cannot start on distinct nodes of {d} features", cfg.agents_per_omic)));
        }
        if cfg.top_b / m > d {
            return Err(Error::Config(format!("cannot keep {} of {d} features in omic {k}", cfg.top_b / m)));
        }
    }
    let total: usize = problem.nets.iter().map(|n| n.node_count).sum();
    if cfg.budget_per_agent > total {
        return Err(Error::Config(format!("agent budget {} exceeds {total} available features", cfg.budget_per_agent)));
    }
    if cfg.top_b < m {
        return Err(Error::Config(format!("top_b {} smaller than the number of omics", cfg.top_b)));
    }
    if problem.train.is_empty() || problem.valid.is_empty() {
        return Err(Error::data("fitness needs non-empty train and validation patients"));
    }
    Ok(())
}

/// Runs the colony and returns the kept features per omic.
pub fn run_selection(problem: &SelectionProblem, cfg: &AcoConfig) -> Result<SelectionResult> {
    check_problem(problem, cfg)?;
    let n_omics = problem.nets.len();
    let nb = Neighbours(
        problem
            .nets
            .iter()
            .map(|net| {
                let mut adj = vec![Vec::new(); net.node_count];
                for (k, e) in net.edges.iter().enumerate() {
                    adj[e.u].push((e.v, k));
                    adj[e.v].push((e.u, k));
                }
                adj
            })
            .collect(),
    );
    let mut state = DesirabilityState::new(problem.nets, cfg.c_v, cfg.c_e);
    let mut history = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let mut placement = ChaCha8Rng::seed_from_u64(agent_seed(cfg.seed, t, usize::MAX, usize::MAX));
        let starts: Vec<(usize, usize, usize)> = (0..n_omics)
            .flat_map(|m| {
                sample(&mut placement, problem.nets[m].node_count, cfg.agents_per_omic)
                    .into_iter()
                    .enumerate()
                    .map(move |(a, f)| (m, a, f))
                    .collect::<Vec<_>>()
            })
            .collect();
        let solutions: Vec<AgentSolution> = starts
            .par_iter()
            .map(|&(m, a, f)| {
                let mut rng = ChaCha8Rng::seed_from_u64(agent_seed(cfg.seed, t, m, a));
                Agent::new(problem, &nb, &state, cfg).construct(m, f, &mut rng)
            })
            .collect();
        let best = greedy_pick(&solutions.iter().map(|s| s.fitness).enumerate().collect::<Vec<_>>()).expect("agents");
        if !solutions[best].fitness.is_finite() {
            return Err(Error::Numeric(format!("non-finite fitness at iteration {t}")));
        }
        update_desirability(&mut state, &solutions, best, cfg);
        let mut per_omic = vec![0usize; n_omics];
        for s in &solutions {
            for &(m, _) in &s.selected {
                per_omic[m] += 1;
            }
        }
        state.p = update_omic_importance(&state.p, &per_omic, cfg.rho_m);
        log::debug!("aco iteration {t}: best fitness {:.4}, p = {:?}", solutions[best].fitness, state.p);
        history.push(IterationRecord { best_fitness: solutions[best].fitness, best, solutions, p: state.p.clone() });
    }
    let keep = cfg.top_b / n_omics;
    let mut ranked = Vec::with_capacity(n_omics);
    let mut scores = Vec::with_capacity(n_omics);
    for m in 0..n_omics {
        let s = final_scores(&state.node_tau[m], &problem.relevance[m]);
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        order.truncate(keep);
        ranked.push(order);
        scores.push(s);
    }
    Ok(SelectionResult { ranked, scores, state, history })
}

/// `0.5·minmax(τ) + 0.5·relevance`.
pub fn final_scores(node_tau: &[f64], relevance: &[f64]) -> Vec<f64> {
    min_max_normalize(node_tau).iter().zip(relevance).map(|(t, r)| 0.5 * t + 0.5 * r).collect()
}

#[derive(Serialize)]
struct SelectedOmic<'a> {
    omic: &'a str,
    features: Vec<SelectedFeature<'a>>,
}

#[derive(Serialize)]
struct SelectedFeature<'a> {
    id: &'a str,
    index: usize,
    score: f64,
    tau: f64,
    relevance: f64,
}

/// Writes the kept features per omic as JSON, in rank order.
pub fn write_selected_json(
    path: &Path,
    result: &SelectionResult,
    relevance: &[Vec<f64>],
    omic_names: &[String],
    feature_ids: &[Vec<String>],
) -> Result<()> {
    let out: Vec<SelectedOmic> = omic_names
        .iter()
        .enumerate()
        .map(|(m, name)| SelectedOmic {
            omic: name,
            features: result.ranked[m]
                .iter()
                .map(|&f| SelectedFeature {
                    id: &feature_ids[m][f],
                    index: f,
                    score: result.scores[m][f],
                    tau: result.state.node_tau[m][f],
                    relevance: relevance[m][f],
                })
                .collect(),
        })
        .collect();
    let text = serde_json::to_string_pretty(&out)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::{Edge, NetKind};
    use ndarray::Array2;

    fn net(n: usize, edges: &[(usize, usize, f64)]) -> SimilarityGraph {
        SimilarityGraph {
            node_count: n,
            edges: edges.iter().map(|&(u, v, weight)| Edge { u, v, weight }).collect(),
            kind: NetKind::FeatureNet,
            parameter: 0.0,
        }
    }

    #[test]
    fn redundancy_examples() {
        let g = net(4, &[(0, 3, 0.2), (1, 3, 0.4), (0, 1, 0.9)]);
        assert_eq!(avg_redundancy(&g, 3, &[]), 0.0);
        assert!((avg_redundancy(&g, 3, &[0, 1]) - 0.3).abs() < 1e-15);
        assert!((avg_redundancy(&g, 3, &[0, 2]) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn greedy_argmax_and_ties() {
        assert_eq!(greedy_pick(&[(0, 0.9), (1, 0.7)]), Some(0));
        assert_eq!(greedy_pick(&[(3, 0.5), (1, 0.5), (2, 0.1)]), Some(1));
        assert_eq!(greedy_pick(&[]), None);
    }

    #[test]
    fn transition_probability_examples() {
        let p = transition_probabilities(&[0.6, 0.2]);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        assert_eq!(transition_probabilities(&[0.3]), vec![1.0]);
        assert_eq!(transition_probabilities(&[-0.5, 0.2]), vec![0.0, 1.0]);
        assert_eq!(transition_probabilities(&[0.0, -1.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn sampling_frequencies_within_three_sigma() {
        let nums = [0.6, 0.2, 0.1, 0.0, 0.3];
        let probs = transition_probabilities(&nums);
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[draw(&probs, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() <= 3.0 * sigma + 1e-9, "{c} vs {p}");
        }
    }

    #[test]
    fn fitness_arithmetic() {
        assert!((fitness_value(1.0, 0.0) - 1.0 / 3.0).abs() < 1e-15);
        let g = net(3, &[(0, 1, 0.2)]);
        let m = Array2::zeros((4, 3));
        let problem = SelectionProblem {
            matrices: vec![&m],
            labels: &[0, 1, 0, 1],
            class_count: 2,
            train: &[0, 1],
            valid: &[2, 3],
            nets: std::slice::from_ref(&g),
            relevance: &[vec![0.7, 0.9, 0.0]],
        };
        assert!((relevance_term(&problem, &[(0, 0), (0, 1)], &[(0, 0)]) - 0.6).abs() < 1e-12);
        assert!((relevance_term(&problem, &[(0, 0), (0, 1)], &[]) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn nearest_centroid_cases() {
        let m = ndarray::array![[0.0, 5.0], [1.0, 5.0], [0.1, 1.0], [0.9, 0.0], [0.5, 3.0]];
        let labels = [0, 1, 0, 1, 0];
        let acc = nearest_centroid_accuracy(&[&m], &[(0, 0)], &labels, 2, &[0, 1], &[2, 3]);
        assert_eq!(acc, 1.0);
        // 0.5 is equidistant from both centroids: the lower class wins
        let acc = nearest_centroid_accuracy(&[&m], &[(0, 0)], &labels, 2, &[0, 1], &[4]);
        assert_eq!(acc, 1.0);
        // single-class training set predicts the majority
        let acc = nearest_centroid_accuracy(&[&m], &[(0, 0)], &labels, 2, &[0, 2], &[3, 4]);
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn desirability_update_examples() {
        assert!((decay_update(0.2, 0.1, 0.05, 0.5) - 0.235).abs() < 1e-15);
        assert!((decay_update(0.2, 0.1, 0.0, 0.0) - 0.18).abs() < 1e-15);
        let mut tau = 0.2;
        for _ in 0..2000 {
            tau = decay_update(tau, 0.1, 0.0, 0.0);
            assert!(tau > 0.0);
        }
    }

    #[test]
    fn omic_importance_examples() {
        let p = update_omic_importance(&[0.5, 0.5], &[10, 0], 0.1);
        assert!((p[0] - 0.55).abs() < 1e-12 && (p[1] - 0.45).abs() < 1e-12);
        let p = update_omic_importance(&[0.2, 0.3, 0.5], &[4, 4, 4], 0.1);
        let q = update_omic_importance(&p, &[4, 4, 4], 0.1);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = vec![1.0 / 3.0; 3];
        for _ in 0..50 {
            let counts: Vec<usize> = (0..3).map(|_| rng.random_range(0..20)).collect();
            p = update_omic_importance(&p, &counts, 1.0);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| v > 0.0));
        }
    }

    fn toy_problem_data() -> (Vec<Array2<f64>>, Vec<usize>, Vec<SimilarityGraph>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 40;
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mats: Vec<Array2<f64>> = [12, 8]
            .iter()
            .map(|&d| {
                Array2::from_shape_fn((n, d), |(r, c)| {
                    let signal = if c < 2 { labels[r] as f64 } else { 0.0 };
                    signal + rng.random::<f64>()
                })
            })
            .collect();
        let rows: Vec<usize> = (0..n).collect();
        let nets: Vec<SimilarityGraph> =
            mats.iter().map(|m| crate::similarity::build_feature_net(m, &rows, 0.5).unwrap()).collect();
        let rel: Vec<Vec<f64>> =
            mats.iter().map(|m| crate::similarity::anova_relevance(m, &rows, &labels, 2).unwrap()).collect();
        (mats, labels, nets, rel)
    }

    #[test]
    fn run_invariants_and_determinism() {
        let (mats, labels, nets, rel) = toy_problem_data();
        let train: Vec<usize> = (0..30).collect();
        let valid: Vec<usize> = (30..40).collect();
        let problem = SelectionProblem {
            matrices: mats.iter().collect(),
            labels: &labels,
            class_count: 2,
            train: &train,
            valid: &valid,
            nets: &nets,
            relevance: &rel,
        };
        let cfg = AcoConfig { iterations: 8, agents_per_omic: 3, budget_per_agent: 6, top_b: 8, seed: 4, ..Default::default() };
        let a = run_selection(&problem, &cfg).unwrap();
        let b = run_selection(&problem, &cfg).unwrap();
        assert_eq!(a, b);
        for rec in &a.history {
            for s in &rec.solutions {
                assert_eq!(s.selected.len(), 6);
                let mut uniq = s.selected.clone();
                uniq.sort_unstable();
                uniq.dedup();
                assert_eq!(uniq.len(), 6);
            }
            let max = rec.solutions.iter().map(|s| s.fitness).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(rec.best_fitness, max);
            assert!((rec.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let max_fit = a.history.iter().map(|r| r.best_fitness).fold(0.0, f64::max);
        for t in a.state.node_tau.iter().chain(&a.state.edge_tau).flatten() {
            assert!(*t > 0.0 && *t <= cfg.c_v.max(cfg.c_e) + 1.0 + max_fit);
        }
        assert_eq!(a.ranked.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4]);
        // the planted features carry the highest relevance
        assert!(a.ranked[0][..2].iter().all(|&f| f < 2));
    }

    #[test]
    fn invalid_budgets_rejected() {
        let (mats, labels, nets, rel) = toy_problem_data();
        let rows: Vec<usize> = (0..40).collect();
        let problem = SelectionProblem {
            matrices: mats.iter().collect(),
            labels: &labels,
            class_count: 2,
            train: &rows[..30],
            valid: &rows[30..],
            nets: &nets,
            relevance: &rel,
        };
        for cfg in [
            AcoConfig { budget_per_agent: 21, ..Default::default() },
            AcoConfig { top_b: 20, ..Default::default() },
            AcoConfig { agents_per_omic: 9, top_b: 4, ..Default::default() },
            AcoConfig { rho_v: 0.0, ..Default::default() },
        ] {
            assert!(run_selection(&problem, &cfg).is_err(), "{cfg:?}");
        }
    }
}
