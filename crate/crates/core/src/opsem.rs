//! Structural equivalence, step derivation, executable steps, step
//! probabilities and transition systems.
//!
//! A dynamic expression is a set of bars on the nodes of a shared
//! skeleton. Every inaction rule rewrites a small set of bars, so the
//! closure under the rules (both directions) is a plain graph search.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use crate::expr::{
    subtree_bars, sync_activities, ActionSym, Activity, Bar, Bars, DynamicExpr, Kind, NodeOp, Skeleton, StaticExpr,
    Step,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OpsemError {
    #[error("expression is not regular")]
    NotRegular,
    #[error("state space exceeds {0} states")]
    TooManyStates(usize),
    #[error("structural-equivalence class exceeds {0} members")]
    ClosureTooLarge(usize),
    #[error("step {0} leads to different states")]
    Nondeterministic(String),
    #[error("expression structure differs from the transition system's")]
    StructureMismatch,
}

pub const DEFAULT_MAX_STATES: usize = 100_000;
pub const DEFAULT_MAX_CLOSURE: usize = 1_000_000;

#[derive(Clone, Debug)]
struct Rule {
    lhs: Vec<(u32, Bar)>,
    rhs: Vec<(u32, Bar)>,
}

/// Inaction rules over one skeleton, indexed for both directions.
#[derive(Clone, Debug)]
pub struct RuleSet {
    rules: Vec<Rule>,
    fwd: HashMap<(u32, Bar), Vec<usize>>,
    bwd: HashMap<(u32, Bar), Vec<usize>>,
}

impl RuleSet {
    pub fn new(skel: &Skeleton) -> RuleSet {
        use Bar::{Over as O, Under as U};
        let mut rules = Vec::new();
        let mut add = |lhs: Vec<(u32, Bar)>, rhs: Vec<(u32, Bar)>| rules.push(Rule { lhs, rhs });
        for (n, node) in skel.nodes.iter().enumerate() {
            let n = n as u32;
            let c = &node.children;
            match node.op {
                NodeOp::Act(_) => {}
                NodeOp::Seq => {
                    add(vec![(n, O)], vec![(c[0], O)]);
                    add(vec![(c[0], U)], vec![(c[1], O)]);
                    add(vec![(c[1], U)], vec![(n, U)]);
                }
                NodeOp::Choice => {
                    add(vec![(n, O)], vec![(c[0], O)]);
                    add(vec![(n, O)], vec![(c[1], O)]);
                    add(vec![(c[0], U)], vec![(n, U)]);
                    add(vec![(c[1], U)], vec![(n, U)]);
                }
                NodeOp::Par => {
                    add(vec![(n, O)], vec![(c[0], O), (c[1], O)]);
                    add(vec![(c[0], U), (c[1], U)], vec![(n, U)]);
                }
                NodeOp::Relabel(_) | NodeOp::Restrict(_) | NodeOp::Sync(_) => {
                    add(vec![(n, O)], vec![(c[0], O)]);
                    add(vec![(c[0], U)], vec![(n, U)]);
                }
                NodeOp::Iter => {
                    add(vec![(n, O)], vec![(c[0], O)]);
                    add(vec![(c[0], U)], vec![(c[1], O)]);
                    add(vec![(c[1], U)], vec![(c[1], O)]);
                    add(vec![(c[1], U)], vec![(c[2], O)]);
                    add(vec![(c[2], U)], vec![(n, U)]);
                }
            }
        }
        let mut fwd: HashMap<(u32, Bar), Vec<usize>> = HashMap::new();
        let mut bwd: HashMap<(u32, Bar), Vec<usize>> = HashMap::new();
        for (i, r) in rules.iter().enumerate() {
            fwd.entry(r.lhs[0]).or_default().push(i);
            bwd.entry(r.rhs[0]).or_default().push(i);
        }
        RuleSet { rules, fwd, bwd }
    }

    /// True when no inaction rule applies forward.
    pub fn is_operative(&self, bars: &[(u32, Bar)]) -> bool {
        bars.iter().all(|b| {
            self.fwd.get(b).is_none_or(|ids| ids.iter().all(|&i| !contains_all(bars, &self.rules[i].lhs)))
        })
    }

    fn neighbours(&self, bars: &[(u32, Bar)], out: &mut Vec<Bars>) {
        for b in bars {
            for (index, forward) in [(&self.fwd, true), (&self.bwd, false)] {
                let Some(ids) = index.get(b) else { continue };
                for &i in ids {
                    let r = &self.rules[i];
                    let (from, to) = if forward { (&r.lhs, &r.rhs) } else { (&r.rhs, &r.lhs) };
                    if contains_all(bars, from) {
                        out.push(replace(bars, from, to));
                    }
                }
            }
        }
    }

    /// Every dynamic expression structurally equivalent to `start`.
    pub fn closure(&self, start: &[(u32, Bar)], limit: usize) -> Result<Vec<Bars>, OpsemError> {
        let mut seen: HashSet<Bars> = HashSet::new();
        let mut queue = VecDeque::new();
        seen.insert(start.to_vec());
        queue.push_back(start.to_vec());
        let mut next = Vec::new();
        while let Some(x) = queue.pop_front() {
            next.clear();
            self.neighbours(&x, &mut next);
            for y in next.drain(..) {
                if !seen.contains(&y) {
                    if seen.len() >= limit {
                        return Err(OpsemError::ClosureTooLarge(limit));
                    }
                    seen.insert(y.clone());
                    queue.push_back(y);
                }
            }
        }
        let mut all: Vec<Bars> = seen.into_iter().collect();
        all.sort();
        Ok(all)
    }
}

fn contains_all(bars: &[(u32, Bar)], items: &[(u32, Bar)]) -> bool {
    items.iter().all(|x| bars.binary_search(x).is_ok())
}

fn replace(bars: &[(u32, Bar)], from: &[(u32, Bar)], to: &[(u32, Bar)]) -> Bars {
    let mut out: Bars = bars.iter().copied().filter(|x| !from.contains(x)).collect();
    out.extend_from_slice(to);
    out.sort_unstable();
    out
}

/// Steps derivable from an operative dynamic expression by the action
/// rules, without the priority preconditions. Each step comes with the
/// bars of the resulting expression.
pub fn derive(skel: &Skeleton, bars: &[(u32, Bar)]) -> Vec<(Step, Bars)> {
    derive_at(skel, 0, bars)
}

fn derive_at(skel: &Skeleton, id: u32, bars: &[(u32, Bar)]) -> Vec<(Step, Bars)> {
    let sub = subtree_bars(skel, id, bars);
    if sub.is_empty() {
        return Vec::new();
    }
    let node = skel.node(id);
    if sub[0].0 == id {
        return match (&node.op, sub[0].1) {
            (NodeOp::Act(a), Bar::Over) => vec![(Step::single(a.clone()), vec![(id, Bar::Under)])],
            _ => Vec::new(),
        };
    }
    if let NodeOp::Par = node.op {
        let (l, r) = (node.children[0], node.children[1]);
        let lb = subtree_bars(skel, l, bars);
        let rb = subtree_bars(skel, r, bars);
        let ls = derive_at(skel, l, bars);
        let rs = derive_at(skel, r, bars);
        let mut out = Vec::with_capacity(ls.len() + rs.len() + ls.len() * rs.len());
        for (s, b) in &ls {
            out.push((s.clone(), concat(b, rb)));
        }
        for (s, b) in &rs {
            out.push((s.clone(), concat(lb, b)));
        }
        for (s1, b1) in &ls {
            for (s2, b2) in &rs {
                out.push((s1.union(s2), concat(b1, b2)));
            }
        }
        return out;
    }
    let Some(&child) = node.children.iter().find(|&&c| !subtree_bars(skel, c, bars).is_empty()) else {
        return Vec::new();
    };
    let inner = derive_at(skel, child, bars);
    match &node.op {
        NodeOp::Relabel(f) => inner.into_iter().map(|(s, b)| (f.step(&s), b)).collect(),
        NodeOp::Restrict(a) => {
            let pos = ActionSym { name: a.clone(), conjugated: false };
            let neg = pos.conjugate();
            inner
                .into_iter()
                .filter(|(s, _)| s.activities().iter().all(|x| !x.part().contains(&pos) && !x.part().contains(&neg)))
                .collect()
        }
        NodeOp::Sync(a) => {
            let mut out = Vec::new();
            for (s, b) in inner {
                for t in saturate_sync(&s, a) {
                    out.push((t, b.clone()));
                }
            }
            out
        }
        _ => inner,
    }
}

fn concat(a: &[(u32, Bar)], b: &[(u32, Bar)]) -> Bars {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v.sort_unstable();
    v
}

/// All steps obtained from `step` by repeatedly replacing two distinct
/// activities carrying `a` and its conjugate with their synchronization.
pub fn saturate_sync(step: &Step, a: &str) -> Vec<Step> {
    let pos = ActionSym::new(a);
    let neg = pos.conjugate();
    let mut seen = vec![step.clone()];
    let mut i = 0;
    while i < seen.len() {
        let acts = seen[i].activities().to_vec();
        for (x, u) in acts.iter().enumerate() {
            if !u.part().contains(&pos) {
                continue;
            }
            for (y, v) in acts.iter().enumerate() {
                if x == y || !v.part().contains(&neg) || u.is_immediate() != v.is_immediate() {
                    continue;
                }
                let w = sync_activities(u, v, a).expect("parts checked");
                let mut rest: Vec<Activity> =
                    acts.iter().enumerate().filter(|&(k, _)| k != x && k != y).map(|(_, t)| t.clone()).collect();
                rest.push(w);
                let t = Step::new(rest);
                if !seen.contains(&t) {
                    seen.push(t);
                }
            }
        }
        i += 1;
    }
    seen
}

/// Can(G): non-empty steps derivable from an operative expression.
pub fn can(g: &DynamicExpr) -> Vec<Step> {
    let mut v: Vec<Step> = derive(&g.skel, &g.bars).into_iter().map(|(s, _)| s).collect();
    v.sort();
    v.dedup();
    v
}

/// Now(G): Can(G) when homogeneous, else its immediate-only steps.
pub fn now(g: &DynamicExpr) -> Vec<Step> {
    let c = can(g);
    let homogeneous = c.iter().all(|s| s.all_immediate()) || c.iter().all(|s| s.all_stochastic());
    if homogeneous {
        c
    } else {
        c.into_iter().filter(|s| s.all_immediate()).collect()
    }
}

/// One state of a transition system.
#[derive(Clone, Debug)]
pub struct State {
    pub tangible: bool,
    /// Operative members of the class (empty for net markings).
    pub members: Vec<Bars>,
    /// Display label for states that are not expression classes.
    pub label: Option<String>,
}

#[derive(Clone, Debug)]
pub struct StepTransition {
    pub source: usize,
    pub step: Step,
    pub prob: f64,
    pub target: usize,
}

/// Labeled probabilistic transition system. Transitions are grouped by
/// source and sorted by step within each group.
#[derive(Clone, Debug)]
pub struct TransitionSystem {
    pub states: Vec<State>,
    pub transitions: Vec<StepTransition>,
    pub initial: usize,
    pub skeleton: Option<Arc<Skeleton>>,
    offsets: Vec<usize>,
}

impl TransitionSystem {
    pub fn from_parts(
        states: Vec<State>,
        mut transitions: Vec<StepTransition>,
        initial: usize,
        skeleton: Option<Arc<Skeleton>>,
    ) -> TransitionSystem {
        transitions.sort_by(|a, b| (a.source, &a.step).cmp(&(b.source, &b.step)));
        let mut offsets = vec![0; states.len() + 1];
        for t in &transitions {
            offsets[t.source + 1] += 1;
        }
        for i in 0..states.len() {
            offsets[i + 1] += offsets[i];
        }
        TransitionSystem { states, transitions, initial, skeleton, offsets }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn outgoing(&self, s: usize) -> &[StepTransition] {
        &self.transitions[self.offsets[s]..self.offsets[s + 1]]
    }

    /// Exec(s).
    pub fn exec(&self, s: usize) -> Vec<&Step> {
        self.outgoing(s).iter().map(|t| &t.step).collect()
    }

    /// PT(Υ, s); zero when Υ is not executable in s.
    pub fn pt(&self, step: &Step, s: usize) -> f64 {
        self.outgoing(s).iter().find(|t| &t.step == step).map_or(0.0, |t| t.prob)
    }

    /// PM(s, t).
    pub fn pm(&self, s: usize, t: usize) -> f64 {
        self.outgoing(s).iter().filter(|x| x.target == t).map(|x| x.prob).sum()
    }

    pub fn tangible_count(&self) -> usize {
        self.states.iter().filter(|s| s.tangible).count()
    }

    /// Canonical key: least serialization over the operative members.
    pub fn key(&self, s: usize) -> String {
        let st = &self.states[s];
        if let Some(l) = &st.label {
            return l.clone();
        }
        let skel = self.skeleton.as_ref().expect("expression states carry a skeleton");
        st.members
            .iter()
            .map(|m| crate::parser::serialize_dynamic(skel, m))
            .min()
            .unwrap_or_default()
    }

    /// Re-evaluates probabilities for an expression that differs from the
    /// original only in probabilities and weights. The state space does not
    /// depend on those values, so only PF/PT are recomputed.
    pub fn reweight(&self, e: &StaticExpr) -> Result<TransitionSystem, OpsemError> {
        let old = self.skeleton.as_ref().ok_or(OpsemError::StructureMismatch)?;
        let skel = Skeleton::new(e);
        if skel.len() != old.len() {
            return Err(OpsemError::StructureMismatch);
        }
        let mut leaf: BTreeMap<u32, Kind> = BTreeMap::new();
        for (a, b) in old.nodes.iter().zip(&skel.nodes) {
            let same = match (&a.op, &b.op) {
                (NodeOp::Act(x), NodeOp::Act(y)) => {
                    leaf.insert(content_leaf(y), y.kind());
                    x.part() == y.part() && x.is_immediate() == y.is_immediate() && x.num() == y.num()
                }
                (x, y) => x == y,
            };
            if !same {
                return Err(OpsemError::StructureMismatch);
            }
        }
        let kind_of = |a: &Activity| -> Kind {
            let kinds = a.content().iter().map(|n| leaf[n].value());
            if a.is_immediate() {
                Kind::Immediate(kinds.sum())
            } else {
                Kind::Stochastic(kinds.product())
            }
        };
        let mut transitions = Vec::with_capacity(self.transitions.len());
        for s in 0..self.len() {
            let steps: Vec<(Step, usize)> = self
                .outgoing(s)
                .iter()
                .map(|t| (t.step.map(|a| a.with_kind(kind_of(a))), t.target))
                .collect();
            let probs = step_probabilities(self.states[s].tangible, steps.iter().map(|(st, _)| st));
            for ((step, target), prob) in steps.into_iter().zip(probs) {
                transitions.push(StepTransition { source: s, step, prob, target });
            }
        }
        Ok(TransitionSystem::from_parts(
            self.states.clone(),
            transitions,
            self.initial,
            Some(Arc::new(skel)),
        ))
    }
}

fn content_leaf(a: &Activity) -> u32 {
    a.content()[0]
}

/// PF(Υ, s) for every step of Exec(s).
pub fn step_factors<'a>(tangible: bool, exec: impl Iterator<Item = &'a Step> + Clone) -> Vec<f64> {
    if !tangible {
        return exec.map(|s| s.activities().iter().map(|a| a.kind().value()).sum()).collect();
    }
    let singles: Vec<&Activity> = exec.clone().filter(|s| s.len() == 1).map(|s| &s.activities()[0]).collect();
    exec.map(|s| {
        let mut pf: f64 = s.activities().iter().map(|a| a.kind().value()).product();
        for a in &singles {
            if !s.contains(a) {
                pf *= 1.0 - a.kind().value();
            }
        }
        pf
    })
    .collect()
}

/// PT(Υ, s) = PF(Υ, s) / Σ PF over Exec(s).
pub fn step_probabilities<'a>(tangible: bool, exec: impl Iterator<Item = &'a Step> + Clone) -> Vec<f64> {
    let pf = step_factors(tangible, exec);
    let total: f64 = pf.iter().sum();
    pf.into_iter().map(|x| x / total).collect()
}

/// Executable steps of a class and their target bars. Mixed steps never
/// execute; immediate steps pre-empt stochastic ones across the whole
/// class; a tangible class also gets the empty step.
fn exec_of_class(skel: &Skeleton, members: &[Bars]) -> (bool, Vec<(Step, Bars)>) {
    let mut derived: Vec<(Step, Bars)> = Vec::new();
    for m in members {
        derived.extend(derive(skel, m));
    }
    let vanishing = derived.iter().any(|(s, _)| s.all_immediate());
    derived.retain(|(s, _)| if vanishing { s.all_immediate() } else { s.all_stochastic() });
    derived.sort();
    derived.dedup();
    (!vanishing, derived)
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub max_states: usize,
    pub max_closure: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { max_states: DEFAULT_MAX_STATES, max_closure: DEFAULT_MAX_CLOSURE }
    }
}

/// Structural-equivalence class of a dynamic expression: its operative members.
pub fn inaction_closure(g: &DynamicExpr) -> Result<Vec<Bars>, OpsemError> {
    if !g.is_regular() {
        return Err(OpsemError::NotRegular);
    }
    let rules = RuleSet::new(&g.skel);
    let all = rules.closure(&g.bars, DEFAULT_MAX_CLOSURE)?;
    Ok(all.into_iter().filter(|m| rules.is_operative(m)).collect())
}

/// Exec for the class of `g`.
pub fn exec(g: &DynamicExpr) -> Result<Vec<Step>, OpsemError> {
    let members = inaction_closure(g)?;
    let (tangible, steps) = exec_of_class(&g.skel, &members);
    let mut v: Vec<Step> = steps.into_iter().map(|(s, _)| s).collect();
    v.dedup();
    if tangible {
        v.insert(0, Step::empty());
    }
    Ok(v)
}

pub fn build_ts(e: &StaticExpr) -> Result<TransitionSystem, OpsemError> {
    build_ts_with(e, &BuildOptions::default())
}

/// Transition system of overline(e), explored breadth-first.
pub fn build_ts_with(e: &StaticExpr, opts: &BuildOptions) -> Result<TransitionSystem, OpsemError> {
    if !e.is_regular() {
        return Err(OpsemError::NotRegular);
    }
    let skel = Arc::new(Skeleton::new(e));
    let rules = RuleSet::new(&skel);
    let mut index: HashMap<Bars, usize> = HashMap::new();
    let mut states: Vec<State> = Vec::new();
    let mut pending: Vec<Vec<Bars>> = Vec::new();
    let mut transitions = Vec::new();

    let mut intern = |bars: &Bars,
                      states: &mut Vec<State>,
                      pending: &mut Vec<Vec<Bars>>|
     -> Result<usize, OpsemError> {
        if let Some(&i) = index.get(bars) {
            return Ok(i);
        }
        if states.len() >= opts.max_states {
            return Err(OpsemError::TooManyStates(opts.max_states));
        }
        let all = rules.closure(bars, opts.max_closure)?;
        let id = states.len();
        let members: Vec<Bars> = all.iter().filter(|m| rules.is_operative(m)).cloned().collect();
        for m in all {
            index.insert(m, id);
        }
        states.push(State { tangible: true, members: members.clone(), label: None });
        pending.push(members);
        Ok(id)
    };

    let initial = intern(&vec![(0, Bar::Over)], &mut states, &mut pending)?;
    let mut s = 0;
    while s < states.len() {
        let members = std::mem::take(&mut pending[s]);
        let (tangible, derived) = exec_of_class(&skel, &members);
        states[s].tangible = tangible;
        let mut moves: BTreeMap<Step, usize> = BTreeMap::new();
        if tangible {
            moves.insert(Step::empty(), s);
        }
        for (step, bars) in derived {
            let t = intern(&bars, &mut states, &mut pending)?;
            match moves.get(&step) {
                Some(&old) if old != t => return Err(OpsemError::Nondeterministic(step.to_string())),
                _ => {
                    moves.insert(step, t);
                }
            }
        }
        let probs = step_probabilities(tangible, moves.keys());
        for ((step, target), prob) in moves.into_iter().zip(probs) {
            transitions.push(StepTransition { source: s, step, prob, target });
        }
        s += 1;
    }
    Ok(TransitionSystem::from_parts(states, transitions, initial, Some(skel)))
}

/// State bijection preserving the initial state, step labels and
/// probabilities (within `tol`), if one exists.
///
/// Step labels out of a state are distinct, so the bijection is forced
/// along the exploration from the initial states.
pub fn ts_isomorphic(a: &TransitionSystem, b: &TransitionSystem, tol: f64) -> Option<Vec<usize>> {
    if a.len() != b.len() || a.transitions.len() != b.transitions.len() {
        return None;
    }
    let mut map = vec![usize::MAX; a.len()];
    let mut used = vec![false; b.len()];
    let mut queue = VecDeque::new();
    map[a.initial] = b.initial;
    used[b.initial] = true;
    queue.push_back(a.initial);
    while let Some(s) = queue.pop_front() {
        let s2 = map[s];
        let (out1, out2) = (a.outgoing(s), b.outgoing(s2));
        if out1.len() != out2.len() || a.states[s].tangible != b.states[s2].tangible {
            return None;
        }
        for (x, y) in out1.iter().zip(out2) {
            if x.step != y.step || (x.prob - y.prob).abs() > tol {
                return None;
            }
            if map[x.target] == usize::MAX {
                if used[y.target] {
                    return None;
                }
                map[x.target] = y.target;
                used[y.target] = true;
                queue.push_back(x.target);
            } else if map[x.target] != y.target {
                return None;
            }
        }
    }
    if map.contains(&usize::MAX) {
        return None;
    }
    Some(map)
}
