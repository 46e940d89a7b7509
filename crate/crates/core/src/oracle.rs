//! Extensive-form reference solutions on an observation scenario tree.
//!
//! Every node of the tree is an observation history; its decision block reads
//! the parent's post-decision resources directly, so nonanticipativity holds
//! by construction and the whole tree is one linear program.

use hmsddp_lp::{solve, ConvexSubproblem};
use serde::{Deserialize, Serialize};

use crate::crossing::{ErrorModel, KnowledgeState};
use crate::error::{Error, Result};
use crate::grid_env::{Decision, GridInstance, ResourceState, StageInput, StageLayout};
use crate::sddp::Policy;

pub const DEFAULT_MAX_LEAVES: usize = 100_000;

/// How branch probabilities are propagated down the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchLaw {
    /// Knowledge-state filter along each history: the true observation law.
    Filter,
    /// Compact information-state law: the node's information distribution is
    /// the posterior given its last observation. This is the law the
    /// backward pass's cuts are exact for.
    Compact,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Belief {
    Knowledge(KnowledgeState),
    Info(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub stage: usize,
    /// Grid index of the observation at this node.
    pub obs: usize,
    /// Unconditional probability of the history.
    pub prob: f64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub belief: Belief,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    pub nodes: Vec<TreeNode>,
    pub first_stage: usize,
    pub last_stage: usize,
}

impl ScenarioTree {
    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&n| self.nodes[n].children.is_empty())
    }

    /// Total probability per depth.
    pub fn depth_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.last_stage - self.first_stage + 1];
        for n in &self.nodes {
            s[n.stage - self.first_stage] += n.prob;
        }
        s
    }

    /// Node indices from the root to `leaf`.
    pub fn history(&self, leaf: usize) -> Vec<usize> {
        let mut h = vec![leaf];
        let mut n = leaf;
        while let Some(p) = self.nodes[n].parent {
            h.push(p);
            n = p;
        }
        h.reverse();
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    pub tree: ScenarioTree,
    pub decisions: Vec<Decision>,
    /// Post-decision resources per node.
    pub post: Vec<Vec<f64>>,
    /// ∂value/∂(starting resources).
    pub coupling_duals: Vec<f64>,
}

fn branch(model: &ErrorModel, belief: &Belief) -> Result<Vec<(usize, f64, Belief)>> {
    let mut out = Vec::new();
    match belief {
        Belief::Knowledge(k) => {
            let p = model.predict_next_error(k);
            for (w, &pw) in p.iter().enumerate() {
                if pw > 0.0 {
                    out.push((w, pw, Belief::Knowledge(model.knowledge_update(k, w)?)));
                }
            }
        }
        Belief::Info(info) => {
            let k = model.grid().len();
            let mut p = vec![0.0; k];
            for (i, &pi) in info.iter().enumerate() {
                if pi > 0.0 {
                    for (acc, q) in p.iter_mut().zip(model.compact_error_dist(i)) {
                        *acc += pi * q;
                    }
                }
            }
            for (w, &pw) in p.iter().enumerate() {
                if pw > 0.0 {
                    out.push((w, pw, Belief::Info(model.posterior_info_probs(w)?)));
                }
            }
        }
    }
    Ok(out)
}

/// Builds the tree from `roots` (observation, probability, belief) at
/// `first_stage` down to `last_stage`, refusing trees with more than
/// `max_leaves` leaves.
pub fn build_tree(
    model: &ErrorModel,
    roots: Vec<(usize, f64, Belief)>,
    first_stage: usize,
    last_stage: usize,
    max_leaves: usize,
) -> Result<ScenarioTree> {
    let mut nodes: Vec<TreeNode> = roots
        .into_iter()
        .map(|(obs, prob, belief)| TreeNode {
            stage: first_stage,
            obs,
            prob,
            parent: None,
            children: Vec::new(),
            belief,
        })
        .collect();
    let mut level: Vec<usize> = (0..nodes.len()).collect();
    for stage in first_stage + 1..=last_stage {
        let mut next_level = Vec::new();
        let mut expansions = Vec::new();
        let mut count = 0;
        for &n in &level {
            let b = branch(model, &nodes[n].belief)?;
            count += b.len();
            if count > max_leaves {
                let width = model.grid().len();
                return Err(Error::InvalidInput(format!(
                    "scenario tree exceeds {max_leaves} leaves at stage {stage} ({} nodes at stage {}, up to {width} branches each, {} stages)",
                    level.len(),
                    stage - 1,
                    last_stage - first_stage + 1
                )));
            }
            expansions.push((n, b));
        }
        for (n, b) in expansions {
            for (obs, pw, belief) in b {
                let id = nodes.len();
                let prob = nodes[n].prob * pw;
                nodes.push(TreeNode {
                    stage,
                    obs,
                    prob,
                    parent: Some(n),
                    children: Vec::new(),
                    belief,
                });
                nodes[n].children.push(id);
                next_level.push(id);
            }
        }
        level = next_level;
    }
    Ok(ScenarioTree {
        nodes,
        first_stage,
        last_stage,
    })
}

/// Solves the deterministic equivalent over `tree`, every root starting
/// from resources `start`.
pub fn solve_tree(inst: &GridInstance, model: &ErrorModel, tree: ScenarioTree, start: &ResourceState) -> Result<OracleResult> {
    let grid = model.grid();
    let mut p = ConvexSubproblem::new();
    let start_v = start.to_vec();
    let dims = start_v.len();
    let mut layouts: Vec<StageLayout> = Vec::with_capacity(tree.nodes.len());
    let mut root_vars: Option<Vec<usize>> = None;
    for node in &tree.nodes {
        let wind = inst.wind(node.stage, grid.points[node.obs]);
        let layout = match node.parent {
            None => match &root_vars {
                // Several roots share one set of starting-resource variables.
                Some(v) => inst.add_stage_block(&mut p, node.stage, StageInput::Linked(v), wind, node.prob),
                None => {
                    let l = inst.add_stage_block(&mut p, node.stage, StageInput::Fixed(&start_v), wind, node.prob);
                    root_vars = Some(l.r_in.clone());
                    l
                }
            },
            Some(par) => {
                let parent_out = layouts[par].r_out.clone();
                inst.add_stage_block(&mut p, node.stage, StageInput::Linked(&parent_out), wind, node.prob)
            }
        };
        layouts.push(layout);
    }
    let sol = solve(&p).map_err(|e| Error::solver("extensive form", e))?;
    let decisions = layouts.iter().map(|l| inst.decision_from(l, &sol.primal)).collect();
    let post = layouts
        .iter()
        .map(|l| l.r_out.iter().map(|&v| sol.primal[v]).collect())
        .collect();
    debug_assert_eq!(sol.coupling_duals.len(), dims);
    Ok(OracleResult {
        value: sol.objective,
        tree,
        decisions,
        post,
        coupling_duals: sol.coupling_duals,
    })
}

/// The whole problem from stage 0 with initial observation `w0`.
pub fn extensive_form_oracle(
    inst: &GridInstance,
    model: &ErrorModel,
    w0: usize,
    law: BranchLaw,
    max_leaves: usize,
) -> Result<OracleResult> {
    let k0 = model.init_knowledge(w0);
    let belief = match law {
        BranchLaw::Filter => Belief::Knowledge(k0),
        BranchLaw::Compact => Belief::Info(model.info_weights(&k0)),
    };
    let tree = build_tree(model, vec![(w0, 1.0, belief)], 0, inst.horizon, max_leaves)?;
    solve_tree(inst, model, tree, &inst.initial_state())
}

/// Exact cost-to-go after stage t under the compact law: the expected
/// optimal cost of stages t+1..=T given post-decision resources `r` and
/// information state `i`. Zero at the horizon.
pub fn value_function(
    inst: &GridInstance,
    model: &ErrorModel,
    t: usize,
    r: &[f64],
    i: usize,
    max_leaves: usize,
) -> Result<f64> {
    if t >= inst.horizon {
        return Ok(0.0);
    }
    let dist = model.compact_error_dist(i);
    let mut roots = Vec::new();
    for (w, &pw) in dist.iter().enumerate() {
        if pw > 0.0 {
            roots.push((w, pw, Belief::Info(model.posterior_info_probs(w)?)));
        }
    }
    let tree = build_tree(model, roots, t + 1, inst.horizon, max_leaves)?;
    Ok(solve_tree(inst, model, tree, &ResourceState::from_slice(r))?.value)
}

/// Expected total cost of a policy over every leaf history of `tree`,
/// simulating each history with the policy's own filtering.
pub fn policy_expected_cost(policy: &mut Policy<'_>, model: &ErrorModel, tree: &ScenarioTree) -> Result<f64> {
    if tree.first_stage != 0 {
        return Err(Error::InvalidInput("policy evaluation needs a tree rooted at stage 0".into()));
    }
    let mut total = 0.0;
    for leaf in tree.leaves().collect::<Vec<_>>() {
        let path: Vec<usize> = tree.history(leaf).iter().map(|&n| tree.nodes[n].obs).collect();
        let f = policy.simulate(model, &path, &|_| None)?;
        total += tree.nodes[leaf].prob * f.total;
    }
    Ok(total)
}
