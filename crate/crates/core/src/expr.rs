//! Actions, activities, numberings and the static/dynamic expression trees.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::multiset::Multiset;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("not synchronizable on {0}")]
    NotSynchronizable(String),
    #[error("cannot synchronize stochastic with immediate")]
    MixedKinds,
    #[error("relabeling is not a bijection: {0}")]
    NotBijective(String),
    #[error("probability {0} outside (0;1)")]
    BadProbability(f64),
    #[error("weight {0} must be positive")]
    BadWeight(f64),
    #[error("expression is not regular")]
    NotRegular,
    #[error("malformed dynamic expression: {0}")]
    BadBars(String),
}

/// Reserved action used by the `Stop` abbreviation.
pub const STOP_ACTION: &str = "g";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionSym {
    pub name: Arc<str>,
    pub conjugated: bool,
}

impl ActionSym {
    pub fn new(name: &str) -> Self {
        ActionSym { name: Arc::from(name), conjugated: false }
    }

    pub fn conj(name: &str) -> Self {
        ActionSym { name: Arc::from(name), conjugated: true }
    }

    pub fn conjugate(&self) -> Self {
        ActionSym { name: self.name.clone(), conjugated: !self.conjugated }
    }
}

impl fmt::Display for ActionSym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.conjugated {
            write!(f, "{}^", self.name)
        } else {
            f.write_str(&self.name)
        }
    }
}

pub type Multiaction = Multiset<ActionSym>;

/// Builds a multiaction from names; a trailing `^` marks a conjugate.
pub fn multiaction(names: &[&str]) -> Multiaction {
    names
        .iter()
        .map(|n| match n.strip_suffix('^') {
            Some(base) => ActionSym::conj(base),
            None => ActionSym::new(n),
        })
        .collect()
}

/// α ⊕_a β = α + β − {a, â}.
pub fn sync_parts(alpha: &Multiaction, beta: &Multiaction, a: &str) -> Result<Multiaction, ExprError> {
    let pos = ActionSym::new(a);
    let neg = pos.conjugate();
    let ok = (alpha.contains(&pos) && beta.contains(&neg)) || (alpha.contains(&neg) && beta.contains(&pos));
    if !ok {
        return Err(ExprError::NotSynchronizable(a.to_string()));
    }
    let mut out = alpha.sum(beta);
    out.remove(&pos, 1);
    out.remove(&neg, 1);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kind {
    Stochastic(f64),
    Immediate(f64),
}

impl Kind {
    pub fn stochastic(p: f64) -> Result<Kind, ExprError> {
        if p > 0.0 && p < 1.0 {
            Ok(Kind::Stochastic(p))
        } else {
            Err(ExprError::BadProbability(p))
        }
    }

    pub fn immediate(w: f64) -> Result<Kind, ExprError> {
        if w > 0.0 && w.is_finite() {
            Ok(Kind::Immediate(w))
        } else {
            Err(ExprError::BadWeight(w))
        }
    }

    pub fn is_immediate(&self) -> bool {
        matches!(self, Kind::Immediate(_))
    }

    /// Probability for stochastic kinds, weight for immediate ones.
    pub fn value(&self) -> f64 {
        match *self {
            Kind::Stochastic(p) | Kind::Immediate(p) => p,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Numbering {
    Leaf(u32),
    Pair(Box<Numbering>, Box<Numbering>),
}

impl Numbering {
    pub fn pair(a: Numbering, b: Numbering) -> Numbering {
        Numbering::Pair(Box::new(a), Box::new(b))
    }

    /// Sorted leaf labels.
    pub fn content(&self) -> Vec<u32> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect(&self, out: &mut Vec<u32>) {
        match self {
            Numbering::Leaf(n) => out.push(*n),
            Numbering::Pair(a, b) => {
                a.collect(out);
                b.collect(out);
            }
        }
    }
}

impl fmt::Display for Numbering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Numbering::Leaf(n) => write!(f, "{n}"),
            Numbering::Pair(a, b) => write!(f, "({a})({b})"),
        }
    }
}

/// Identity of an activity: part, kind type and numbering content.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActivityKey {
    pub part: Multiaction,
    pub immediate: bool,
    pub content: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct Activity {
    part: Multiaction,
    kind: Kind,
    num: Numbering,
    content: Vec<u32>,
}

impl Activity {
    pub fn new(part: Multiaction, kind: Kind, num: Numbering) -> Activity {
        let content = num.content();
        Activity { part, kind, num, content }
    }

    pub fn part(&self) -> &Multiaction {
        &self.part
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn num(&self) -> &Numbering {
        &self.num
    }

    pub fn content(&self) -> &[u32] {
        &self.content
    }

    pub fn is_immediate(&self) -> bool {
        self.kind.is_immediate()
    }

    pub fn key(&self) -> ActivityKey {
        ActivityKey { part: self.part.clone(), immediate: self.is_immediate(), content: self.content.clone() }
    }

    pub fn with_part(&self, part: Multiaction) -> Activity {
        Activity { part, kind: self.kind, num: self.num.clone(), content: self.content.clone() }
    }

    pub fn with_kind(&self, kind: Kind) -> Activity {
        Activity { part: self.part.clone(), kind, num: self.num.clone(), content: self.content.clone() }
    }

    pub fn with_num(&self, num: Numbering) -> Activity {
        Activity::new(self.part.clone(), self.kind, num)
    }

    fn ident(&self) -> (&Multiaction, bool, &[u32]) {
        (&self.part, self.is_immediate(), &self.content)
    }
}

impl PartialEq for Activity {
    fn eq(&self, other: &Self) -> bool {
        self.ident() == other.ident()
    }
}

impl Eq for Activity {}

impl PartialOrd for Activity {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Activity {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.ident().cmp(&other.ident())
    }
}

impl std::hash::Hash for Activity {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.ident().hash(state)
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            Kind::Stochastic(p) => write!(f, "({},{})", self.part, p),
            Kind::Immediate(w) => write!(f, "({},#{})", self.part, w),
        }
    }
}

/// Synchronization of two activities on `a`: probabilities multiply,
/// weights add, numberings pair up.
pub fn sync_activities(u: &Activity, v: &Activity, a: &str) -> Result<Activity, ExprError> {
    let kind = match (u.kind, v.kind) {
        (Kind::Stochastic(p), Kind::Stochastic(q)) => Kind::Stochastic(p * q),
        (Kind::Immediate(l), Kind::Immediate(m)) => Kind::Immediate(l + m),
        _ => return Err(ExprError::MixedKinds),
    };
    let part = sync_parts(&u.part, &v.part, a)?;
    Ok(Activity::new(part, kind, Numbering::pair(u.num.clone(), v.num.clone())))
}

/// A set of activities executed together. Kept sorted by activity identity.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Step(Vec<Activity>);

impl Step {
    pub fn empty() -> Step {
        Step(Vec::new())
    }

    pub fn new(mut acts: Vec<Activity>) -> Step {
        acts.sort();
        acts.dedup();
        Step(acts)
    }

    pub fn single(a: Activity) -> Step {
        Step(vec![a])
    }

    pub fn activities(&self) -> &[Activity] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn all_immediate(&self) -> bool {
        !self.0.is_empty() && self.0.iter().all(|a| a.is_immediate())
    }

    pub fn all_stochastic(&self) -> bool {
        self.0.iter().all(|a| !a.is_immediate())
    }

    pub fn contains(&self, a: &Activity) -> bool {
        self.0.binary_search(a).is_ok()
    }

    pub fn union(&self, other: &Step) -> Step {
        let mut v = self.0.clone();
        v.extend(other.0.iter().cloned());
        Step::new(v)
    }

    /// Multiaction part L(Υ).
    pub fn labels(&self) -> Multiset<Multiaction> {
        self.0.iter().map(|a| a.part.clone()).collect()
    }

    pub fn keys(&self) -> Vec<ActivityKey> {
        self.0.iter().map(Activity::key).collect()
    }

    pub fn map(&self, f: impl FnMut(&Activity) -> Activity) -> Step {
        Step::new(self.0.iter().map(f).collect())
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str("}")
    }
}

/// Conjugate-preserving bijection on actions, identity outside its support.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Relabeling {
    map: BTreeMap<Arc<str>, Arc<str>>,
}

impl Relabeling {
    pub fn identity() -> Relabeling {
        Relabeling { map: BTreeMap::new() }
    }

    /// Builds a relabeling from `from -> to` pairs on action names.
    pub fn new<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<Relabeling, ExprError> {
        let mut map = BTreeMap::new();
        for (a, b) in pairs {
            let (a, b) = (a.as_ref(), b.as_ref());
            if map.insert(Arc::<str>::from(a), Arc::<str>::from(b)).is_some() {
                return Err(ExprError::NotBijective(format!("{a} mapped twice")));
            }
        }
        let sources: BTreeSet<&Arc<str>> = map.keys().collect();
        let targets: BTreeSet<&Arc<str>> = map.values().collect();
        if targets.len() != map.len() {
            return Err(ExprError::NotBijective("two actions share an image".into()));
        }
        if sources != targets {
            let stray = targets.difference(&sources).next().expect("sets differ");
            return Err(ExprError::NotBijective(format!("{stray} is an image but is not remapped")));
        }
        map.retain(|a, b| a != b);
        Ok(Relabeling { map })
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(a, b)| (&**a, &**b))
    }

    pub fn action(&self, x: &ActionSym) -> ActionSym {
        match self.map.get(&x.name) {
            Some(y) => ActionSym { name: y.clone(), conjugated: x.conjugated },
            None => x.clone(),
        }
    }

    pub fn part(&self, alpha: &Multiaction) -> Multiaction {
        alpha.map(|x| self.action(x))
    }

    pub fn activity(&self, a: &Activity) -> Activity {
        a.with_part(self.part(&a.part))
    }

    pub fn step(&self, s: &Step) -> Step {
        s.map(|a| self.activity(a))
    }
}

/// f(Υ) for a multiset of activities.
pub fn apply_relabel(f: &Relabeling, acts: &Multiset<Activity>) -> Multiset<Activity> {
    acts.map(|a| f.activity(a))
}

#[derive(Clone, Debug, PartialEq)]
pub enum StaticExpr {
    Act(Activity),
    Seq(Box<StaticExpr>, Box<StaticExpr>),
    Choice(Box<StaticExpr>, Box<StaticExpr>),
    Par(Box<StaticExpr>, Box<StaticExpr>),
    Relabel(Box<StaticExpr>, Relabeling),
    Restrict(Box<StaticExpr>, Arc<str>),
    Sync(Box<StaticExpr>, Arc<str>),
    Iter(Box<StaticExpr>, Box<StaticExpr>, Box<StaticExpr>),
}

impl StaticExpr {
    pub fn act(part: Multiaction, kind: Kind) -> StaticExpr {
        StaticExpr::Act(Activity::new(part, kind, Numbering::Leaf(0)))
    }

    pub fn seq(a: StaticExpr, b: StaticExpr) -> StaticExpr {
        StaticExpr::Seq(Box::new(a), Box::new(b))
    }

    pub fn choice(a: StaticExpr, b: StaticExpr) -> StaticExpr {
        StaticExpr::Choice(Box::new(a), Box::new(b))
    }

    pub fn par(a: StaticExpr, b: StaticExpr) -> StaticExpr {
        StaticExpr::Par(Box::new(a), Box::new(b))
    }

    pub fn relabel(a: StaticExpr, f: Relabeling) -> StaticExpr {
        StaticExpr::Relabel(Box::new(a), f)
    }

    pub fn restrict(a: StaticExpr, x: &str) -> StaticExpr {
        StaticExpr::Restrict(Box::new(a), Arc::from(x))
    }

    pub fn sync(a: StaticExpr, x: &str) -> StaticExpr {
        StaticExpr::Sync(Box::new(a), Arc::from(x))
    }

    pub fn iter(i: StaticExpr, b: StaticExpr, t: StaticExpr) -> StaticExpr {
        StaticExpr::Iter(Box::new(i), Box::new(b), Box::new(t))
    }

    /// Stop = ({g},½) rs g.
    pub fn stop() -> StaticExpr {
        StaticExpr::restrict(StaticExpr::act(multiaction(&[STOP_ACTION]), Kind::Stochastic(0.5)), STOP_ACTION)
    }

    pub fn is_stop(&self) -> bool {
        match self {
            StaticExpr::Restrict(inner, a) if &**a == STOP_ACTION => match &**inner {
                StaticExpr::Act(act) => {
                    act.kind == Kind::Stochastic(0.5) && act.part == multiaction(&[STOP_ACTION])
                }
                _ => false,
            },
            _ => false,
        }
    }

    pub fn children(&self) -> Vec<&StaticExpr> {
        match self {
            StaticExpr::Act(_) => vec![],
            StaticExpr::Seq(a, b) | StaticExpr::Choice(a, b) | StaticExpr::Par(a, b) => vec![a, b],
            StaticExpr::Relabel(a, _) | StaticExpr::Restrict(a, _) | StaticExpr::Sync(a, _) => vec![a],
            StaticExpr::Iter(a, b, c) => vec![a, b, c],
        }
    }

    fn children_mut(&mut self) -> Vec<&mut StaticExpr> {
        match self {
            StaticExpr::Act(_) => vec![],
            StaticExpr::Seq(a, b) | StaticExpr::Choice(a, b) | StaticExpr::Par(a, b) => vec![a, b],
            StaticExpr::Relabel(a, _) | StaticExpr::Restrict(a, _) | StaticExpr::Sync(a, _) => vec![a],
            StaticExpr::Iter(a, b, c) => vec![a, b, c],
        }
    }

    /// Activity leaves in source order.
    pub fn leaves(&self) -> Vec<&Activity> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a Activity>) {
        match self {
            StaticExpr::Act(a) => out.push(a),
            _ => self.children().into_iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    /// Assigns leaf numbers 1..n left to right.
    pub fn renumber(&mut self) {
        let mut next = 0;
        self.renumber_from(&mut next);
    }

    fn renumber_from(&mut self, next: &mut u32) {
        match self {
            StaticExpr::Act(a) => {
                *next += 1;
                *a = a.with_num(Numbering::Leaf(*next));
            }
            _ => self.children_mut().into_iter().for_each(|c| c.renumber_from(next)),
        }
    }

    /// Rewrites every leaf, in source order.
    pub fn map_leaves(&self, f: &mut impl FnMut(&Activity) -> Activity) -> StaticExpr {
        let mut e = self.clone();
        e.map_leaves_mut(f);
        e
    }

    fn map_leaves_mut(&mut self, f: &mut impl FnMut(&Activity) -> Activity) {
        match self {
            StaticExpr::Act(a) => *a = f(a),
            _ => self.children_mut().into_iter().for_each(|c| c.map_leaves_mut(f)),
        }
    }

    /// Regular iff it conforms to the E/D grammar: iteration bodies are
    /// D-terms, which never have a parallel composition at their top level.
    pub fn is_regular(&self) -> bool {
        is_e(self)
    }

    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }
}

fn is_e(e: &StaticExpr) -> bool {
    match e {
        StaticExpr::Iter(i, b, t) => is_e(i) && is_d(b) && is_e(t),
        _ => e.children().into_iter().all(is_e),
    }
}

fn is_d(e: &StaticExpr) -> bool {
    match e {
        StaticExpr::Act(_) => true,
        StaticExpr::Seq(a, b) => is_d(a) && is_e(b),
        StaticExpr::Choice(a, b) => is_d(a) && is_d(b),
        StaticExpr::Par(..) => false,
        StaticExpr::Relabel(a, _) | StaticExpr::Restrict(a, _) | StaticExpr::Sync(a, _) => is_d(a),
        StaticExpr::Iter(i, b, t) => is_d(i) && is_d(b) && is_e(t),
    }
}

impl fmt::Display for StaticExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::parser::serialize_static(self))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bar {
    Over,
    Under,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeOp {
    Act(Activity),
    Seq,
    Choice,
    Par,
    Relabel(Relabeling),
    Restrict(Arc<str>),
    Sync(Arc<str>),
    Iter,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: NodeOp,
    pub children: Vec<u32>,
    pub parent: Option<u32>,
    /// One past the last node id of this subtree (ids are preorder).
    pub end: u32,
}

/// A static expression flattened into a preorder arena; dynamic
/// expressions over it are sets of barred node ids.
#[derive(Clone, Debug)]
pub struct Skeleton {
    pub nodes: Vec<Node>,
    expr: StaticExpr,
}

impl Skeleton {
    pub fn new(expr: &StaticExpr) -> Skeleton {
        let mut nodes = Vec::with_capacity(expr.size());
        build_nodes(expr, None, &mut nodes);
        Skeleton { nodes, expr: expr.clone() }
    }

    pub fn expr(&self) -> &StaticExpr {
        &self.expr
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: u32) -> &Node {
        &self.nodes[id as usize]
    }

    /// Leaf node ids in source order.
    pub fn leaf_ids(&self) -> Vec<u32> {
        (0..self.nodes.len() as u32).filter(|&i| matches!(self.node(i).op, NodeOp::Act(_))).collect()
    }
}

fn build_nodes(e: &StaticExpr, parent: Option<u32>, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    let op = match e {
        StaticExpr::Act(a) => NodeOp::Act(a.clone()),
        StaticExpr::Seq(..) => NodeOp::Seq,
        StaticExpr::Choice(..) => NodeOp::Choice,
        StaticExpr::Par(..) => NodeOp::Par,
        StaticExpr::Relabel(_, f) => NodeOp::Relabel(f.clone()),
        StaticExpr::Restrict(_, a) => NodeOp::Restrict(a.clone()),
        StaticExpr::Sync(_, a) => NodeOp::Sync(a.clone()),
        StaticExpr::Iter(..) => NodeOp::Iter,
    };
    nodes.push(Node { op, children: Vec::new(), parent, end: 0 });
    let kids: Vec<u32> = e.children().into_iter().map(|c| build_nodes(c, Some(id), nodes)).collect();
    let end = nodes.len() as u32;
    let n = &mut nodes[id as usize];
    n.children = kids;
    n.end = end;
    id
}

/// Bars placed on nodes of a skeleton, sorted by node id.
pub type Bars = Vec<(u32, Bar)>;

#[derive(Clone, Debug)]
pub struct DynamicExpr {
    pub skel: Arc<Skeleton>,
    pub bars: Bars,
}

impl DynamicExpr {
    pub fn new(skel: Arc<Skeleton>, mut bars: Bars) -> Result<DynamicExpr, ExprError> {
        bars.sort_unstable();
        check_bars(&skel, 0, &bars)?;
        Ok(DynamicExpr { skel, bars })
    }

    /// overline(e)
    pub fn initial(e: &StaticExpr) -> DynamicExpr {
        DynamicExpr { skel: Arc::new(Skeleton::new(e)), bars: vec![(0, Bar::Over)] }
    }

    /// underline(e)
    pub fn terminal(e: &StaticExpr) -> DynamicExpr {
        DynamicExpr { skel: Arc::new(Skeleton::new(e)), bars: vec![(0, Bar::Under)] }
    }

    pub fn underlying(&self) -> &StaticExpr {
        self.skel.expr()
    }

    pub fn is_regular(&self) -> bool {
        self.underlying().is_regular()
    }
}

impl PartialEq for DynamicExpr {
    fn eq(&self, other: &Self) -> bool {
        self.bars == other.bars && self.skel.expr() == other.skel.expr()
    }
}

impl fmt::Display for DynamicExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::parser::serialize_dynamic(&self.skel, &self.bars))
    }
}

/// Bars inside the subtree rooted at `id`.
pub fn subtree_bars<'a>(skel: &Skeleton, id: u32, bars: &'a [(u32, Bar)]) -> &'a [(u32, Bar)] {
    let end = skel.node(id).end;
    let lo = bars.partition_point(|&(n, _)| n < id);
    let hi = bars.partition_point(|&(n, _)| n < end);
    &bars[lo..hi]
}

/// Checks the bar set against the dynamic-expression grammar.
fn check_bars(skel: &Skeleton, id: u32, bars: &[(u32, Bar)]) -> Result<(), ExprError> {
    let here = subtree_bars(skel, id, bars);
    if here.is_empty() {
        return Err(ExprError::BadBars(format!("node {id} has no bars")));
    }
    if here[0].0 == id {
        return if here.len() == 1 {
            Ok(())
        } else {
            Err(ExprError::BadBars(format!("node {id} is barred and has barred subterms")))
        };
    }
    let node = skel.node(id);
    let active: Vec<u32> =
        node.children.iter().copied().filter(|&c| !subtree_bars(skel, c, bars).is_empty()).collect();
    match node.op {
        NodeOp::Act(_) => unreachable!("leaf without own bar has empty subtree"),
        NodeOp::Par => {
            if active.len() != 2 {
                return Err(ExprError::BadBars(format!("parallel node {id} needs bars on both sides")));
            }
        }
        _ => {
            if active.len() != 1 {
                return Err(ExprError::BadBars(format!("node {id} needs bars in exactly one operand")));
            }
        }
    }
    active.into_iter().try_for_each(|c| check_bars(skel, c, bars))
}
