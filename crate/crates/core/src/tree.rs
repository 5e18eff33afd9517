//! The search tree and its three mechanical moves: walking to a frontier,
//! attaching a scored child, and flowing values back toward the root.
//!
//! Selection treats expansion as a virtual arm of the current node, so a
//! visited node with a promising score keeps competing against its own
//! children instead of being abandoned the moment it has one. Visit counts
//! are incremented on arrival during the walk.

use thiserror::Error;

use crate::env::EnvSnapshot;
use crate::model::{
    Action, BackpropMode, Effect, Intent, Observation, QSeed, Scores, SearchConfig, SelectionMode,
};

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("search tree exhausted: no live nodes remain")]
    Exhausted,
}

#[derive(Debug)]
pub struct SearchNode {
    pub index: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Action that produced this node; `None` at the root.
    pub action: Option<Action>,
    pub intent: Option<Intent>,
    pub observation: Observation,
    pub snapshot: EnvSnapshot,
    pub effect: Option<Effect>,
    pub depth: u32,
    /// Arrival count during selection walks.
    pub visits: u32,
    /// Node value used by selection; starts at the node's own total score
    /// and is updated by backpropagation.
    pub q: f64,
    pub scores: Option<Scores>,
    /// No expansion may happen at or below this node anymore.
    pub terminal: bool,
    exhausted: bool,
    sum_rewards: f64,
    reward_count: u32,
    /// Advice for proposals made at this node, written by the reflection of
    /// the expansion that created it.
    pub guidance: Option<String>,
    /// What earlier expansions at this node said about their actions.
    pub sibling_reflections: Vec<String>,
    /// One-shot lookahead advice; consumed by this node's next expansion.
    simulation_advice: Option<String>,
}

impl SearchNode {
    pub fn s_total(&self) -> f64 {
        self.scores.map(|s| s.s_total).unwrap_or(0.0)
    }

    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }

    pub fn is_root(&self) -> bool {
        self.parent.is_none()
    }
}

/// What to do at a node during the selection walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmChoice {
    DescendTo(usize),
    ExpandHere,
}

/// Result of a selection walk: the node to expand and the arrival path from
/// the root to it, inclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub frontier: usize,
    pub path: Vec<usize>,
}

/// Everything needed to attach one freshly executed action as a child node.
#[derive(Debug)]
pub struct ChildSeed {
    pub action: Action,
    pub intent: Intent,
    pub observation: Observation,
    pub snapshot: EnvSnapshot,
    pub effect: Effect,
}

/// Exploration bonus for one arm. `parent_visits` is the arrival count of
/// the node whose arms are being compared, `edge_visits` the chosen arm's
/// own count (0 for the expansion arm and for fresh children).
pub fn exploration_bonus(
    mode: SelectionMode,
    w_puct: f64,
    parent_visits: u32,
    edge_visits: u32,
) -> f64 {
    let scale = w_puct * (parent_visits as f64).sqrt();
    match mode {
        SelectionMode::Gos => scale / (1.0 + edge_visits as f64),
        SelectionMode::ClassicUct => {
            if edge_visits == 0 {
                f64::INFINITY
            } else {
                scale / edge_visits as f64
            }
        }
    }
}

#[derive(Debug)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub fn new(observation: Observation, snapshot: EnvSnapshot) -> Self {
        let root = SearchNode {
            index: 0,
            parent: None,
            children: Vec::new(),
            action: None,
            intent: None,
            observation,
            snapshot,
            effect: None,
            depth: 0,
            visits: 0,
            q: 0.0,
            scores: None,
            terminal: false,
            exhausted: false,
            sum_rewards: 0.0,
            reward_count: 0,
            guidance: None,
            sibling_reflections: Vec::new(),
            simulation_advice: None,
        };
        SearchTree { nodes: vec![root] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, index: usize) -> &SearchNode {
        &self.nodes[index]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SearchNode> {
        self.nodes.iter()
    }

    /// Fresh actions may still be tried here.
    pub fn expandable(&self, index: usize, cfg: &SearchConfig) -> bool {
        let n = &self.nodes[index];
        !n.terminal && !n.exhausted && n.children.len() < cfg.branch_limit as usize
    }

    /// A node is live while something below it (or the node itself) can
    /// still grow.
    pub fn is_live(&self, index: usize, cfg: &SearchConfig) -> bool {
        let n = &self.nodes[index];
        if n.terminal {
            return false;
        }
        self.expandable(index, cfg) || n.children.iter().any(|&c| self.is_live(c, cfg))
    }

    /// Compares the live child arms and, when this node can still take a new
    /// action, the virtual expansion arm. Ties prefer expansion, then the
    /// earliest child.
    pub fn select_arm(&self, index: usize, cfg: &SearchConfig) -> Option<ArmChoice> {
        let node = &self.nodes[index];
        let mut best: Option<(f64, ArmChoice)> = None;
        if self.expandable(index, cfg) {
            let seed = match cfg.q_seed {
                QSeed::ParentTotal => node.s_total(),
                QSeed::Zero => 0.0,
            };
            let score =
                seed + exploration_bonus(cfg.selection, cfg.w_puct, node.visits, 0);
            best = Some((score, ArmChoice::ExpandHere));
        }
        for &child in &node.children {
            if !self.is_live(child, cfg) {
                continue;
            }
            let c = &self.nodes[child];
            let score = c.q
                + exploration_bonus(cfg.selection, cfg.w_puct, node.visits, c.visits);
            match best {
                Some((b, _)) if score <= b => {}
                _ => best = Some((score, ArmChoice::DescendTo(child))),
            }
        }
        best.map(|(_, arm)| arm)
    }

    /// Walks from the root to the node the next expansion should happen at,
    /// incrementing arrival counts along the way.
    pub fn select_frontier(&mut self, cfg: &SearchConfig) -> Result<Selection, TreeError> {
        if !self.is_live(0, cfg) {
            return Err(TreeError::Exhausted);
        }
        let mut path = Vec::new();
        let mut current = 0;
        loop {
            self.nodes[current].visits += 1;
            path.push(current);
            match self.select_arm(current, cfg) {
                Some(ArmChoice::ExpandHere) => {
                    return Ok(Selection { frontier: current, path })
                }
                Some(ArmChoice::DescendTo(child)) => current = child,
                None => return Err(TreeError::Exhausted),
            }
        }
    }

    /// Attaches a new child under `parent`. The child is terminal when it
    /// stops or hits the depth ceiling.
    pub fn attach_child(&mut self, parent: usize, seed: ChildSeed, cfg: &SearchConfig) -> usize {
        let index = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        let terminal = seed.action.is_stop() || depth >= cfg.depth_max;
        self.nodes.push(SearchNode {
            index,
            parent: Some(parent),
            children: Vec::new(),
            action: Some(seed.action),
            intent: Some(seed.intent),
            observation: seed.observation,
            snapshot: seed.snapshot,
            effect: Some(seed.effect),
            depth,
            visits: 0,
            q: 0.0,
            scores: None,
            terminal,
            exhausted: false,
            sum_rewards: 0.0,
            reward_count: 0,
            guidance: None,
            sibling_reflections: Vec::new(),
            simulation_advice: None,
        });
        self.nodes[parent].children.push(index);
        index
    }

    pub fn record_scores(&mut self, index: usize, scores: Scores) {
        let node = &mut self.nodes[index];
        node.scores = Some(scores);
        node.q = scores.s_total;
    }

    /// Flows the node's own total score up to the root and returns the
    /// updated values along the way, node by node.
    pub fn backpropagate(&mut self, from: usize, mode: BackpropMode) -> Vec<(usize, f64)> {
        let reward = self.nodes[from].s_total();
        let mut updated = Vec::new();
        match mode {
            BackpropMode::Max => {
                self.nodes[from].q = self.nodes[from].q.max(reward);
                updated.push((from, self.nodes[from].q));
                let mut current = from;
                while let Some(parent) = self.nodes[current].parent {
                    let child_q = self.nodes[current].q;
                    let p = &mut self.nodes[parent];
                    p.q = p.q.max(child_q);
                    updated.push((parent, p.q));
                    current = parent;
                }
            }
            BackpropMode::Average => {
                let start = self.nodes[from].parent;
                {
                    let n = &mut self.nodes[from];
                    n.q = (n.s_total() + n.sum_rewards) / (1.0 + n.reward_count as f64);
                    updated.push((from, n.q));
                }
                let mut cursor = start;
                while let Some(index) = cursor {
                    let n = &mut self.nodes[index];
                    n.sum_rewards += reward;
                    n.reward_count += 1;
                    n.q = (n.s_total() + n.sum_rewards) / (1.0 + n.reward_count as f64);
                    updated.push((index, n.q));
                    cursor = n.parent;
                }
            }
        }
        updated
    }

    /// Records that the proposer has nothing new to offer at this node.
    pub fn mark_exhausted(&mut self, index: usize) {
        self.nodes[index].exhausted = true;
    }

    pub fn set_guidance(&mut self, index: usize, text: String) {
        self.nodes[index].guidance = Some(text);
    }

    pub fn add_sibling_reflection(&mut self, index: usize, text: String) {
        self.nodes[index].sibling_reflections.push(text);
    }

    pub fn set_simulation_advice(&mut self, index: usize, text: String) {
        self.nodes[index].simulation_advice = Some(text);
    }

    pub fn take_simulation_advice(&mut self, index: usize) -> Option<String> {
        self.nodes[index].simulation_advice.take()
    }

    /// Scored node with the best own total score; earlier nodes win ties.
    pub fn best_scored(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter(|n| n.scores.is_some())
            .max_by(|a, b| {
                a.s_total()
                    .partial_cmp(&b.s_total())
                    .expect("scores are never NaN")
                    .then(b.index.cmp(&a.index))
            })
            .map(|n| n.index)
    }

    /// Actions along the root-to-node path.
    pub fn action_path(&self, index: usize) -> Vec<Action> {
        let mut actions = Vec::new();
        let mut cursor = Some(index);
        while let Some(i) = cursor {
            if let Some(a) = &self.nodes[i].action {
                actions.push(a.clone());
            }
            cursor = self.nodes[i].parent;
        }
        actions.reverse();
        actions
    }
}
