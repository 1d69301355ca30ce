//! dtsi-boxes, the firing rule and reachability graphs.
//!
//! Boxes are built compositionally in the usual Petri box style: operator
//! boxes glue operand interfaces by taking cross products of entry and
//! exit place sets. Iteration uses the three-transition operator box, so
//! the initial part's exits, the body's entries and exits and the final
//! part's entries are all fused into one set of loop places.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{sync_activities, ActionSym, Activity, StaticExpr, Step};
use crate::opsem::{State, StepTransition, TransitionSystem, DEFAULT_MAX_STATES};

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("expression is not regular")]
    NotRegular,
    #[error("reachability graph exceeds {0} markings")]
    TooManyMarkings(usize),
    #[error("transition set is not fireable in the given marking")]
    NotFireable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaceKind {
    Entry,
    Internal,
    Exit,
}

#[derive(Clone, Debug, Serialize)]
pub struct Place {
    pub name: String,
    pub kind: PlaceKind,
}

/// A net transition: its activity label (carrying the Enu numbering) and
/// weighted pre- and postsets.
#[derive(Clone, Debug)]
pub struct NetTransition {
    pub activity: Activity,
    pub pre: Vec<(usize, u32)>,
    pub post: Vec<(usize, u32)>,
}

#[derive(Clone, Debug)]
pub struct DtsiBox {
    pub places: Vec<Place>,
    pub transitions: Vec<NetTransition>,
}

/// Token count per place.
pub type Marking = Vec<u32>;

impl DtsiBox {
    fn leaf(a: &Activity) -> DtsiBox {
        let n = a.content()[0];
        DtsiBox {
            places: vec![
                Place { name: format!("e{n}"), kind: PlaceKind::Entry },
                Place { name: format!("x{n}"), kind: PlaceKind::Exit },
            ],
            transitions: vec![NetTransition { activity: a.clone(), pre: vec![(0, 1)], post: vec![(1, 1)] }],
        }
    }

    fn places_of(&self, kind: PlaceKind) -> Vec<usize> {
        (0..self.places.len()).filter(|&p| self.places[p].kind == kind).collect()
    }

    pub fn entries(&self) -> Vec<usize> {
        self.places_of(PlaceKind::Entry)
    }

    pub fn exits(&self) -> Vec<usize> {
        self.places_of(PlaceKind::Exit)
    }

    /// °N: one token on every entry place.
    pub fn initial_marking(&self) -> Marking {
        self.places.iter().map(|p| u32::from(p.kind == PlaceKind::Entry)).collect()
    }

    pub fn final_marking(&self) -> Marking {
        self.places.iter().map(|p| u32::from(p.kind == PlaceKind::Exit)).collect()
    }

    pub fn marking_label(&self, m: &Marking) -> String {
        let mut s = String::from("{");
        let mut first = true;
        for (p, &c) in m.iter().enumerate() {
            if c == 0 {
                continue;
            }
            if !first {
                s.push(',');
            }
            first = false;
            s.push_str(&self.places[p].name);
            if c > 1 {
                let _ = write!(s, "^{c}");
            }
        }
        s.push('}');
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let transitions: Vec<serde_json::Value> = self
            .transitions
            .iter()
            .map(|t| {
                serde_json::json!({
                    "activity": t.activity.to_string(),
                    "numbering": t.activity.num().to_string(),
                    "pre": t.pre.iter().map(|&(p, w)| serde_json::json!([self.places[p].name, w])).collect::<Vec<_>>(),
                    "post": t.post.iter().map(|&(p, w)| serde_json::json!([self.places[p].name, w])).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({ "places": self.places, "transitions": transitions })
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph box {\n  rankdir=TB;\n");
        for (i, p) in self.places.iter().enumerate() {
            let shape = match p.kind {
                PlaceKind::Entry => "doublecircle",
                PlaceKind::Exit => "doublecircle",
                PlaceKind::Internal => "circle",
            };
            let _ = writeln!(s, "  p{i} [shape={shape}, label=\"{}\\n{:?}\"];", p.name, p.kind);
        }
        for (i, t) in self.transitions.iter().enumerate() {
            let style = if t.activity.is_immediate() { ", style=filled, fillcolor=black, fontcolor=white" } else { "" };
            let _ = writeln!(s, "  t{i} [shape=box{style}, label=\"{}\"];", t.activity);
            for &(p, w) in &t.pre {
                let _ = writeln!(s, "  p{p} -> t{i}{};", weight_attr(w));
            }
            for &(p, w) in &t.post {
                let _ = writeln!(s, "  t{i} -> p{p}{};", weight_attr(w));
            }
        }
        s.push_str("}\n");
        s
    }
}

fn weight_attr(w: u32) -> String {
    if w == 1 {
        String::new()
    } else {
        format!(" [label=\"{w}\"]")
    }
}

/// Disjoint union; returns the place offset of every operand.
fn union(nets: Vec<DtsiBox>) -> (DtsiBox, Vec<usize>) {
    let mut out = DtsiBox { places: Vec::new(), transitions: Vec::new() };
    let mut offsets = Vec::with_capacity(nets.len());
    for n in nets {
        let off = out.places.len();
        offsets.push(off);
        out.places.extend(n.places);
        for mut t in n.transitions {
            for a in t.pre.iter_mut().chain(t.post.iter_mut()) {
                a.0 += off;
            }
            out.transitions.push(t);
        }
    }
    (out, offsets)
}

/// Replaces each group's place sets by their cross product. A transition
/// arc to a fused place is the sum of its arcs to the tuple's components.
fn fuse(net: DtsiBox, groups: &[(Vec<Vec<usize>>, PlaceKind)]) -> DtsiBox {
    let mut fused_into: Vec<Vec<usize>> = vec![Vec::new(); net.places.len()];
    let mut places = Vec::new();
    let mut in_group = vec![false; net.places.len()];
    for (sets, _) in groups {
        for s in sets {
            for &p in s {
                in_group[p] = true;
            }
        }
    }
    let mut keep = vec![usize::MAX; net.places.len()];
    for (p, place) in net.places.iter().enumerate() {
        if !in_group[p] {
            keep[p] = places.len();
            places.push(place.clone());
        }
    }
    for (sets, kind) in groups {
        for tuple in cartesian(sets) {
            let id = places.len();
            let name = format!("({})", tuple.iter().map(|&p| net.places[p].name.as_str()).collect::<Vec<_>>().join(","));
            places.push(Place { name, kind: *kind });
            for &p in &tuple {
                fused_into[p].push(id);
            }
        }
    }
    let remap = |arcs: &[(usize, u32)]| -> Vec<(usize, u32)> {
        let mut m: BTreeMap<usize, u32> = BTreeMap::new();
        for &(p, w) in arcs {
            if keep[p] != usize::MAX {
                *m.entry(keep[p]).or_insert(0) += w;
            }
            for &q in &fused_into[p] {
                *m.entry(q).or_insert(0) += w;
            }
        }
        m.into_iter().collect()
    };
    let transitions = net
        .transitions
        .iter()
        .map(|t| NetTransition { activity: t.activity.clone(), pre: remap(&t.pre), post: remap(&t.post) })
        .collect();
    DtsiBox { places, transitions }
}

fn cartesian(sets: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for s in sets {
        let mut next = Vec::with_capacity(out.len() * s.len());
        for prefix in &out {
            for &p in s {
                let mut v = prefix.clone();
                v.push(p);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

fn shift(v: Vec<usize>, off: usize) -> Vec<usize> {
    v.into_iter().map(|p| p + off).collect()
}

/// Box_dtsi(e) with the leaf numbering of `e` as transition numbering.
pub fn box_of(e: &StaticExpr) -> Result<DtsiBox, NetError> {
    if !e.is_regular() {
        return Err(NetError::NotRegular);
    }
    Ok(build_box(e))
}

fn build_box(e: &StaticExpr) -> DtsiBox {
    match e {
        StaticExpr::Act(a) => DtsiBox::leaf(a),
        StaticExpr::Seq(a, b) => {
            let (n1, n2) = (build_box(a), build_box(b));
            let (x1, e2) = (n1.exits(), n2.entries());
            let (u, off) = union(vec![n1, n2]);
            fuse(u, &[(vec![shift(x1, off[0]), shift(e2, off[1])], PlaceKind::Internal)])
        }
        StaticExpr::Choice(a, b) => {
            let (n1, n2) = (build_box(a), build_box(b));
            let (e1, x1, e2, x2) = (n1.entries(), n1.exits(), n2.entries(), n2.exits());
            let (u, off) = union(vec![n1, n2]);
            fuse(
                u,
                &[
                    (vec![shift(e1, off[0]), shift(e2, off[1])], PlaceKind::Entry),
                    (vec![shift(x1, off[0]), shift(x2, off[1])], PlaceKind::Exit),
                ],
            )
        }
        StaticExpr::Par(a, b) => union(vec![build_box(a), build_box(b)]).0,
        StaticExpr::Relabel(a, f) => {
            let mut n = build_box(a);
            for t in &mut n.transitions {
                t.activity = f.activity(&t.activity);
            }
            n
        }
        StaticExpr::Restrict(a, x) => {
            let mut n = build_box(a);
            let pos = ActionSym::new(x);
            let neg = pos.conjugate();
            n.transitions.retain(|t| !t.activity.part().contains(&pos) && !t.activity.part().contains(&neg));
            n
        }
        StaticExpr::Sync(a, x) => {
            let mut n = build_box(a);
            sync_close(&mut n, x);
            n
        }
        StaticExpr::Iter(a, b, c) => {
            let (n1, n2, n3) = (build_box(a), build_box(b), build_box(c));
            let x1 = n1.exits();
            let (e2, x2) = (n2.entries(), n2.exits());
            let e3 = n3.entries();
            let (u, off) = union(vec![n1, n2, n3]);
            fuse(
                u,
                &[(
                    vec![shift(x1, off[0]), shift(e2, off[1]), shift(x2, off[1]), shift(e3, off[2])],
                    PlaceKind::Internal,
                )],
            )
        }
    }
}

/// Adds synchronized transitions for every pair carrying `a` and its
/// conjugate until no new activity appears. Pairs must come from disjoint
/// leaf sets; duplicates are identified by activity identity.
fn sync_close(n: &mut DtsiBox, a: &str) {
    let pos = ActionSym::new(a);
    let neg = pos.conjugate();
    let mut seen: HashMap<Activity, usize> = n.transitions.iter().enumerate().map(|(i, t)| (t.activity.clone(), i)).collect();
    let mut done = 0;
    loop {
        let len = n.transitions.len();
        let mut added = Vec::new();
        for i in 0..len {
            if !n.transitions[i].activity.part().contains(&pos) {
                continue;
            }
            // only pairs involving at least one transition new in this round
            for j in 0..len {
                if i == j || (i < done && j < done) {
                    continue;
                }
                let (t, u) = (&n.transitions[i], &n.transitions[j]);
                if !u.activity.part().contains(&neg)
                    || t.activity.is_immediate() != u.activity.is_immediate()
                    || t.activity.content().iter().any(|c| u.activity.content().contains(c))
                {
                    continue;
                }
                let w = sync_activities(&t.activity, &u.activity, a).expect("parts checked");
                if seen.contains_key(&w) {
                    continue;
                }
                seen.insert(w.clone(), len + added.len());
                added.push(NetTransition { activity: w, pre: sum_arcs(&t.pre, &u.pre), post: sum_arcs(&t.post, &u.post) });
            }
        }
        if added.is_empty() {
            break;
        }
        done = len;
        n.transitions.extend(added);
    }
}

fn sum_arcs(a: &[(usize, u32)], b: &[(usize, u32)]) -> Vec<(usize, u32)> {
    let mut m: BTreeMap<usize, u32> = BTreeMap::new();
    for &(p, w) in a.iter().chain(b) {
        *m.entry(p).or_insert(0) += w;
    }
    m.into_iter().collect()
}

fn covers(m: &Marking, arcs: &[(usize, u32)]) -> bool {
    arcs.iter().all(|&(p, w)| m[p] >= w)
}

/// Ena(M): transitions whose preset is covered by M, restricted to the
/// immediate ones whenever one of them is enabled.
pub fn enabled(n: &DtsiBox, m: &Marking) -> Vec<usize> {
    let all: Vec<usize> = (0..n.transitions.len()).filter(|&t| covers(m, &n.transitions[t].pre)).collect();
    if all.iter().any(|&t| n.transitions[t].activity.is_immediate()) {
        all.into_iter().filter(|&t| n.transitions[t].activity.is_immediate()).collect()
    } else {
        all
    }
}

/// M is tangible iff no immediate transition is enabled.
pub fn is_tangible(n: &DtsiBox, m: &Marking) -> bool {
    enabled(n, m).iter().all(|&t| !n.transitions[t].activity.is_immediate())
}

/// Transition sets fireable in M: subsets of Ena(M) whose summed preset
/// is covered by M, plus the empty set when M is tangible.
pub fn fireable(n: &DtsiBox, m: &Marking) -> Vec<Vec<usize>> {
    let ena = enabled(n, m);
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut left = m.clone();
    fn dfs(n: &DtsiBox, ena: &[usize], i: usize, left: &mut Marking, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == ena.len() {
            out.push(cur.clone());
            return;
        }
        dfs(n, ena, i + 1, left, cur, out);
        let pre = &n.transitions[ena[i]].pre;
        if covers(left, pre) {
            for &(p, w) in pre {
                left[p] -= w;
            }
            cur.push(ena[i]);
            dfs(n, ena, i + 1, left, cur, out);
            cur.pop();
            for &(p, w) in pre {
                left[p] += w;
            }
        }
    }
    dfs(n, &ena, 0, &mut left, &mut cur, &mut out);
    if !is_tangible(n, m) {
        out.retain(|u| !u.is_empty());
    }
    out
}

/// M − •U + U•.
pub fn fire(n: &DtsiBox, m: &Marking, u: &[usize]) -> Result<Marking, NetError> {
    let ena = enabled(n, m);
    let mut next = m.clone();
    for &t in u {
        if !ena.contains(&t) {
            return Err(NetError::NotFireable);
        }
        for &(p, w) in &n.transitions[t].pre {
            if next[p] < w {
                return Err(NetError::NotFireable);
            }
            next[p] -= w;
        }
    }
    for &t in u {
        for &(p, w) in &n.transitions[t].post {
            next[p] += w;
        }
    }
    Ok(next)
}

/// PF(U, M): for tangible M the product of the probabilities in U and of
/// the complements over the other enabled transitions; for vanishing M
/// the weight sum of U.
pub fn pf_net(n: &DtsiBox, u: &[usize], m: &Marking) -> f64 {
    let ena = enabled(n, m);
    if is_tangible(n, m) {
        ena.iter()
            .map(|&t| {
                let v = n.transitions[t].activity.kind().value();
                if u.contains(&t) {
                    v
                } else {
                    1.0 - v
                }
            })
            .product()
    } else {
        u.iter().map(|&t| n.transitions[t].activity.kind().value()).sum()
    }
}

/// PT(U, M) = PF(U, M) / Σ PF over all fireable sets.
pub fn pt_net(n: &DtsiBox, u: &[usize], m: &Marking) -> Result<f64, NetError> {
    let all = fireable(n, m);
    let mut key = u.to_vec();
    key.sort_unstable();
    if !all.contains(&key) {
        return Err(NetError::NotFireable);
    }
    let total: f64 = all.iter().map(|v| pf_net(n, v, m)).sum();
    Ok(pf_net(n, &key, m) / total)
}

/// Safety and cleanness over the reachable markings.
#[derive(Clone, Debug, Serialize)]
pub struct NetReport {
    pub markings: usize,
    pub safe: bool,
    pub clean: bool,
    /// First marking violating safety or cleanness.
    pub witness: Option<String>,
}

pub fn build_rg(n: &DtsiBox) -> Result<TransitionSystem, NetError> {
    build_rg_with(n, DEFAULT_MAX_STATES)
}

/// Reachability graph from °N as a transition system whose state labels
/// are markings and whose steps are the activity labels of fired sets.
pub fn build_rg_with(n: &DtsiBox, max_markings: usize) -> Result<TransitionSystem, NetError> {
    Ok(explore(n, max_markings)?.0)
}

fn explore(n: &DtsiBox, max_markings: usize) -> Result<(TransitionSystem, Vec<Marking>), NetError> {
    let m0 = n.initial_marking();
    let mut index: HashMap<Marking, usize> = HashMap::new();
    let mut markings = vec![m0.clone()];
    index.insert(m0, 0);
    let mut queue = VecDeque::from([0usize]);
    let mut transitions = Vec::new();
    while let Some(i) = queue.pop_front() {
        let m = markings[i].clone();
        let sets = fireable(n, &m);
        let pf: Vec<f64> = sets.iter().map(|u| pf_net(n, u, &m)).collect();
        let total: f64 = pf.iter().sum();
        for (u, f) in sets.iter().zip(pf) {
            let next = fire(n, &m, u).expect("fireable set");
            let target = match index.get(&next) {
                Some(&j) => j,
                None => {
                    if markings.len() >= max_markings {
                        return Err(NetError::TooManyMarkings(max_markings));
                    }
                    let j = markings.len();
                    index.insert(next.clone(), j);
                    markings.push(next);
                    queue.push_back(j);
                    j
                }
            };
            let step = Step::new(u.iter().map(|&t| n.transitions[t].activity.clone()).collect());
            transitions.push(StepTransition { source: i, step, prob: f / total, target });
        }
    }
    let states: Vec<State> = markings
        .iter()
        .map(|m| State { tangible: is_tangible(n, m), members: Vec::new(), label: Some(n.marking_label(m)) })
        .collect();
    Ok((TransitionSystem::from_parts(states, transitions, 0, None), markings))
}

/// Checks every reachable marking for at most one token per place and for
/// cleanness: a marking covering °N (or N°) must equal it.
pub fn check_safe_clean(n: &DtsiBox) -> Result<NetReport, NetError> {
    check_safe_clean_with(n, DEFAULT_MAX_STATES)
}

pub fn check_safe_clean_with(n: &DtsiBox, max_markings: usize) -> Result<NetReport, NetError> {
    let (_, markings) = explore(n, max_markings)?;
    let (start, end) = (n.initial_marking(), n.final_marking());
    let mut report = NetReport { markings: markings.len(), safe: true, clean: true, witness: None };
    let cover = |m: &Marking, k: &Marking| m.iter().zip(k).all(|(a, b)| a >= b);
    for m in &markings {
        let unsafe_m = m.iter().any(|&c| c > 1);
        let unclean = (cover(m, &start) && m != &start) || (cover(m, &end) && m != &end);
        if unsafe_m {
            report.safe = false;
        }
        if unclean {
            report.clean = false;
        }
        if (unsafe_m || unclean) && report.witness.is_none() {
            report.witness = Some(n.marking_label(m));
        }
    }
    Ok(report)
}
