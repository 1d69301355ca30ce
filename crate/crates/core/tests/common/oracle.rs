//! Brute-force step semantics for sy-free regular terms.
//!
//! Dynamic expressions are explicit trees. Structural equivalence classes
//! are found by applying every inaction rewrite forwards and backwards, and
//! executable steps come from the action rules applied literally, side
//! conditions included, to every operative member of a class. Nothing here
//! shares code with the library's bar-set engine.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::rc::Rc;

use super::gen::Term;

#[derive(Clone, Debug)]
enum Op {
    Act(usize),
    Seq,
    Choice,
    Par,
    Relabel(String, String),
    Rs(String),
    Iter,
}

struct SNode {
    op: Op,
    kids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dyn {
    Over(usize),
    Under(usize),
    /// Node, index of the dynamic argument, that argument.
    In(usize, usize, Box<Dyn>),
    Par(usize, Box<Dyn>, Box<Dyn>),
}

use Dyn::*;

fn bx(d: Dyn) -> Box<Dyn> {
    Box::new(d)
}

/// An activity of the original term, with the multiaction part it has
/// where it is observed (after the relabelings above it).
#[derive(Clone, Debug)]
pub struct OAct {
    pub leaf: u32,
    pub part: Vec<(String, bool)>,
    pub imm: bool,
    pub val: f64,
}

impl OAct {
    pub fn part_text(&self) -> String {
        let mut p = self.part.clone();
        p.sort();
        let items: Vec<String> =
            p.iter().map(|(n, c)| if *c { format!("{n}^") } else { n.clone() }).collect();
        format!("{{{}}}", items.join(","))
    }
}

#[derive(Clone, Debug)]
pub struct OStep {
    /// Leaf numbers, sorted; empty for the empty step.
    pub leaves: Vec<u32>,
    /// Multiaction parts in leaf order.
    pub parts: Vec<String>,
    pub prob: f64,
    pub target: usize,
}

#[derive(Clone, Debug)]
pub struct OState {
    pub tangible: bool,
    pub steps: Vec<OStep>,
}

pub struct Oracle {
    nodes: Vec<SNode>,
    leaves: Vec<(Vec<(String, bool)>, bool, f64)>,
    classes: RefCell<HashMap<Dyn, Rc<BTreeSet<Dyn>>>>,
    literal: bool,
}

impl Oracle {
    /// Immediate steps take priority per state, as in the net semantics:
    /// the action rules run without their tangibility guards and
    /// stochastic steps are dropped from states with an immediate one.
    /// Panics on `sy`: the oracle covers sy-free terms only.
    pub fn new(t: &Term) -> Oracle {
        Self::build(t, false)
    }

    /// The action rules with their tangibility side conditions, applied
    /// locally. Under `rs` this blocks stochastic steps whose immediate
    /// rivals are restricted away, which the net semantics does not.
    pub fn literal(t: &Term) -> Oracle {
        Self::build(t, true)
    }

    fn build(t: &Term, literal: bool) -> Oracle {
        let mut o = Oracle { nodes: Vec::new(), leaves: Vec::new(), classes: RefCell::new(HashMap::new()), literal };
        o.add(t);
        o
    }

    fn add(&mut self, t: &Term) -> usize {
        let id = self.nodes.len();
        self.nodes.push(SNode { op: Op::Seq, kids: Vec::new() });
        let (op, kids): (Op, Vec<&Term>) = match t {
            Term::Act { part, imm, val } => {
                let p = part
                    .iter()
                    .map(|s| match s.strip_suffix('^') {
                        Some(n) => (n.to_string(), true),
                        None => (s.clone(), false),
                    })
                    .collect();
                self.leaves.push((p, *imm, *val));
                (Op::Act(self.leaves.len()), vec![])
            }
            Term::Seq(x, y) => (Op::Seq, vec![x, y]),
            Term::Choice(x, y) => (Op::Choice, vec![x, y]),
            Term::Par(x, y) => (Op::Par, vec![x, y]),
            Term::Relabel(x, p, q) => (Op::Relabel(p.clone(), q.clone()), vec![x]),
            Term::Rs(x, a) => (Op::Rs(a.clone()), vec![x]),
            Term::Sy(..) => panic!("oracle does not cover sy"),
            Term::Iter(x, y, z) => (Op::Iter, vec![x, y, z]),
        };
        let kids: Vec<usize> = kids.into_iter().map(|k| self.add(k)).collect();
        self.nodes[id] = SNode { op, kids };
        id
    }

    fn kid(&self, n: usize, i: usize) -> usize {
        self.nodes[n].kids[i]
    }

    fn top_fwd(&self, g: &Dyn) -> Vec<Dyn> {
        match g {
            Over(n) => match self.nodes[*n].op {
                Op::Act(_) => vec![],
                Op::Par => vec![Par(*n, bx(Over(self.kid(*n, 0))), bx(Over(self.kid(*n, 1))))],
                Op::Choice => vec![In(*n, 0, bx(Over(self.kid(*n, 0)))), In(*n, 1, bx(Over(self.kid(*n, 1))))],
                _ => vec![In(*n, 0, bx(Over(self.kid(*n, 0))))],
            },
            In(n, i, x) if matches!(**x, Under(_)) => match (&self.nodes[*n].op, *i) {
                (Op::Seq, 0) => vec![In(*n, 1, bx(Over(self.kid(*n, 1))))],
                (Op::Iter, 0) => vec![In(*n, 1, bx(Over(self.kid(*n, 1))))],
                (Op::Iter, 1) => vec![In(*n, 1, bx(Over(self.kid(*n, 1)))), In(*n, 2, bx(Over(self.kid(*n, 2))))],
                _ => vec![Under(*n)],
            },
            Par(n, x, y) if matches!(**x, Under(_)) && matches!(**y, Under(_)) => vec![Under(*n)],
            _ => vec![],
        }
    }

    fn top_bwd(&self, g: &Dyn) -> Vec<Dyn> {
        match g {
            Under(n) => match self.nodes[*n].op {
                Op::Act(_) => vec![],
                Op::Seq => vec![In(*n, 1, bx(Under(self.kid(*n, 1))))],
                Op::Choice => vec![In(*n, 0, bx(Under(self.kid(*n, 0)))), In(*n, 1, bx(Under(self.kid(*n, 1))))],
                Op::Par => vec![Par(*n, bx(Under(self.kid(*n, 0))), bx(Under(self.kid(*n, 1))))],
                Op::Iter => vec![In(*n, 2, bx(Under(self.kid(*n, 2))))],
                _ => vec![In(*n, 0, bx(Under(self.kid(*n, 0))))],
            },
            In(n, i, x) if matches!(**x, Over(_)) => match (&self.nodes[*n].op, *i) {
                (Op::Seq, 1) => vec![In(*n, 0, bx(Under(self.kid(*n, 0))))],
                (Op::Iter, 1) => vec![In(*n, 0, bx(Under(self.kid(*n, 0)))), In(*n, 1, bx(Under(self.kid(*n, 1))))],
                (Op::Iter, 2) => vec![In(*n, 1, bx(Under(self.kid(*n, 1))))],
                _ => vec![Over(*n)],
            },
            Par(n, x, y) if matches!(**x, Over(_)) && matches!(**y, Over(_)) => vec![Over(*n)],
            _ => vec![],
        }
    }

    /// One-step rewrites anywhere in `g`, in one direction.
    fn rewrites(&self, g: &Dyn, forward: bool) -> Vec<Dyn> {
        let mut out = if forward { self.top_fwd(g) } else { self.top_bwd(g) };
        match g {
            In(n, i, x) => out.extend(self.rewrites(x, forward).into_iter().map(|y| In(*n, *i, bx(y)))),
            Par(n, x, y) => {
                out.extend(self.rewrites(x, forward).into_iter().map(|x2| Par(*n, bx(x2), y.clone())));
                out.extend(self.rewrites(y, forward).into_iter().map(|y2| Par(*n, x.clone(), bx(y2))));
            }
            _ => {}
        }
        out
    }

    pub fn class(&self, g: &Dyn) -> Rc<BTreeSet<Dyn>> {
        if let Some(c) = self.classes.borrow().get(g) {
            return c.clone();
        }
        let mut seen = BTreeSet::from([g.clone()]);
        let mut queue = VecDeque::from([g.clone()]);
        while let Some(h) = queue.pop_front() {
            for k in self.rewrites(&h, true).into_iter().chain(self.rewrites(&h, false)) {
                if seen.insert(k.clone()) {
                    queue.push_back(k);
                }
            }
            assert!(seen.len() < 100_000, "class too large");
        }
        let c = Rc::new(seen);
        let mut cache = self.classes.borrow_mut();
        for m in c.iter() {
            cache.insert(m.clone(), c.clone());
        }
        c
    }

    fn is_operative(&self, g: &Dyn) -> bool {
        self.rewrites(g, true).is_empty()
    }

    fn root(g: &Dyn) -> usize {
        match g {
            Over(n) | Under(n) | In(n, ..) | Par(n, ..) => *n,
        }
    }

    fn init(&self, g: &Dyn) -> bool {
        self.class(&Over(Self::root(g))).contains(g)
    }

    fn act(&self, n: usize) -> OAct {
        let Op::Act(leaf) = self.nodes[n].op else { unreachable!() };
        let (part, imm, val) = self.leaves[leaf - 1].clone();
        OAct { leaf: leaf as u32, part, imm, val }
    }

    fn relabel(a: &mut OAct, p: &str, q: &str) {
        for (name, _) in &mut a.part {
            if name == p {
                *name = q.to_string();
            } else if name == q {
                *name = p.to_string();
            }
        }
    }

    fn restricted(u: &[OAct], a: &str) -> bool {
        u.iter().any(|x| x.part.iter().any(|(n, _)| n == a))
    }

    /// Singleton sets of Can(g) for operative g.
    fn can_singletons(&self, g: &Dyn) -> Vec<OAct> {
        match g {
            Over(n) if matches!(self.nodes[*n].op, Op::Act(_)) => vec![self.act(*n)],
            Over(_) | Under(_) => vec![],
            Par(_, x, y) => [self.can_singletons(x), self.can_singletons(y)].concat(),
            In(n, _, x) => {
                let mut v = self.can_singletons(x);
                match &self.nodes[*n].op {
                    Op::Relabel(p, q) => v.iter_mut().for_each(|a| Self::relabel(a, p, q)),
                    Op::Rs(a) => v.retain(|x| !Self::restricted(std::slice::from_ref(x), a)),
                    _ => {}
                }
                v
            }
        }
    }

    /// tang(g) for operative g: Now(g) has no immediate sets.
    fn tang_op(&self, g: &Dyn) -> bool {
        self.can_singletons(g).iter().all(|a| !a.imm)
    }

    /// tang of a possibly non-operative expression: every operative
    /// member of its class is tangible.
    fn tang_class(&self, g: &Dyn) -> bool {
        self.class(g).iter().filter(|h| self.is_operative(h)).all(|h| self.tang_op(h))
    }

    /// Action rules on an operative expression.
    fn derive(&self, g: &Dyn) -> Vec<(Vec<OAct>, Dyn)> {
        let stoch = |u: &[OAct]| !u[0].imm;
        match g {
            Over(n) if matches!(self.nodes[*n].op, Op::Act(_)) => vec![(vec![self.act(*n)], Under(*n))],
            Over(_) | Under(_) => vec![],
            In(n, i, x) => {
                let sub = self.derive(x);
                let wrap = |y: Dyn| In(*n, *i, bx(y));
                match &self.nodes[*n].op {
                    Op::Seq => sub.into_iter().map(|(u, y)| (u, wrap(y))).collect(),
                    Op::Choice => {
                        let other = Over(self.kid(*n, 1 - *i));
                        let guard = !self.literal || !self.init(x) || self.tang_class(&other);
                        sub.into_iter().filter(|(u, _)| !stoch(u) || guard).map(|(u, y)| (u, wrap(y))).collect()
                    }
                    Op::Relabel(p, q) => sub
                        .into_iter()
                        .map(|(mut u, y)| {
                            u.iter_mut().for_each(|a| Self::relabel(a, p, q));
                            (u, wrap(y))
                        })
                        .collect(),
                    Op::Rs(a) => {
                        sub.into_iter().filter(|(u, _)| !Self::restricted(u, a)).map(|(u, y)| (u, wrap(y))).collect()
                    }
                    Op::Iter => {
                        let guard = !self.literal || match *i {
                            0 => true,
                            1 => !self.init(x) || self.tang_class(&Over(self.kid(*n, 2))),
                            _ => !self.init(x) || self.tang_class(&Over(self.kid(*n, 1))),
                        };
                        sub.into_iter().filter(|(u, _)| !stoch(u) || guard).map(|(u, y)| (u, wrap(y))).collect()
                    }
                    Op::Act(_) | Op::Par => unreachable!(),
                }
            }
            Par(n, x, y) => {
                let dx = self.derive(x);
                let dy = self.derive(y);
                let mut out = Vec::new();
                for (u, x2) in &dx {
                    if !stoch(u) || !self.literal || self.tang_class(y) {
                        out.push((u.clone(), Par(*n, bx(x2.clone()), y.clone())));
                    }
                }
                for (v, y2) in &dy {
                    if !stoch(v) || !self.literal || self.tang_class(x) {
                        out.push((v.clone(), Par(*n, x.clone(), bx(y2.clone()))));
                    }
                }
                for (u, x2) in &dx {
                    for (v, y2) in &dy {
                        if u[0].imm == v[0].imm {
                            out.push(([u.clone(), v.clone()].concat(), Par(*n, bx(x2.clone()), bx(y2.clone()))));
                        }
                    }
                }
                out
            }
        }
    }

    fn canon(&self, g: &Dyn) -> Dyn {
        self.class(g).iter().next().expect("non-empty class").clone()
    }

    /// Reachable states from the overlined term, in BFS order.
    pub fn explore(&self) -> Vec<OState> {
        let start = self.canon(&Over(0));
        let mut index: HashMap<Dyn, usize> = HashMap::from([(start.clone(), 0)]);
        let mut order = vec![start];
        let mut states = Vec::new();
        let mut k = 0;
        while k < order.len() {
            let class = self.class(&order[k]);
            // step (as leaf set) -> (activities, target class)
            let mut steps: BTreeMap<Vec<u32>, (Vec<OAct>, Dyn)> = BTreeMap::new();
            for h in class.iter().filter(|h| self.is_operative(h)) {
                for (mut u, h2) in self.derive(h) {
                    u.sort_by_key(|a| a.leaf);
                    let key: Vec<u32> = u.iter().map(|a| a.leaf).collect();
                    let target = self.canon(&h2);
                    if let Some((_, t)) = steps.get(&key) {
                        assert_eq!(t, &target, "one step, two target classes");
                    }
                    steps.insert(key, (u, target));
                }
            }
            if !self.literal && steps.values().any(|(u, _)| u[0].imm) {
                steps.retain(|_, (u, _)| u[0].imm);
            }
            let tangible = steps.values().all(|(u, _)| !u[0].imm);
            let pf = |u: &[OAct]| -> f64 {
                if tangible {
                    let singles = steps.values().map(|(v, _)| v).filter(|v| v.len() == 1);
                    let mut x: f64 = u.iter().map(|a| a.val).product();
                    for v in singles {
                        if !u.iter().any(|a| a.leaf == v[0].leaf) {
                            x *= 1.0 - v[0].val;
                        }
                    }
                    x
                } else {
                    u.iter().map(|a| a.val).sum()
                }
            };
            let mut raw: Vec<(Vec<u32>, Vec<String>, f64, Dyn)> = steps
                .iter()
                .map(|(key, (u, t))| (key.clone(), u.iter().map(|a| a.part_text()).collect(), pf(u), t.clone()))
                .collect();
            if tangible {
                raw.push((vec![], vec![], pf(&[]), order[k].clone()));
            }
            let total: f64 = raw.iter().map(|r| r.2).sum();
            let mut out = Vec::new();
            for (leaves, parts, w, t) in raw {
                let target = *index.entry(t.clone()).or_insert_with(|| {
                    order.push(t);
                    order.len() - 1
                });
                out.push(OStep { leaves, parts, prob: w / total, target });
            }
            states.push(OState { tangible, steps: out });
            k += 1;
        }
        states
    }
}
