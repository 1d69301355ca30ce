//! Sojourn times, embedded and full discrete time Markov chains, their
//! stationary and transient solutions, and performance indices.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;
use thiserror::Error;

use crate::expr::Multiaction;
use crate::multiset::Multiset;
use crate::opsem::TransitionSystem;
use crate::parser::{IndexExpr, IndexFunc, StateSel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarkovError {
    #[error("chain has several closed communication classes: {0:?}")]
    MultipleClosedClasses(Vec<Vec<usize>>),
    #[error("closed class contains no tangible state")]
    NoTangibleState,
    #[error("linear system is singular")]
    Singular,
    #[error("power iteration did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("state selector {0} out of range")]
    BadSelector(String),
    #[error("block selectors need a quotient")]
    NoQuotient,
    #[error("unknown index {0}")]
    UnknownIndex(String),
    #[error("index {0} refers to itself")]
    RecursiveIndex(String),
}

/// Arc of a chain labeled by the multiaction part of the steps it sums.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledArc {
    pub labels: Multiset<Multiaction>,
    pub prob: f64,
    pub target: usize,
}

/// A transition system (or a quotient of one) viewed as a Markov chain.
#[derive(Clone, Debug)]
pub struct Chain {
    /// PM: the TPM of the DTMC.
    pub pm: DMatrix<f64>,
    pub tangible: Vec<bool>,
    pub initial: usize,
    /// Outgoing arcs per state, aggregated by (labels, target).
    pub arcs: Vec<Vec<LabeledArc>>,
}

impl Chain {
    pub fn from_ts(ts: &TransitionSystem) -> Chain {
        let n = ts.len();
        let mut pm = DMatrix::zeros(n, n);
        let mut arcs = Vec::with_capacity(n);
        for s in 0..n {
            let mut agg: BTreeMap<(Multiset<Multiaction>, usize), f64> = BTreeMap::new();
            for t in ts.outgoing(s) {
                pm[(s, t.target)] += t.prob;
                *agg.entry((t.step.labels(), t.target)).or_insert(0.0) += t.prob;
            }
            arcs.push(agg.into_iter().map(|((labels, target), prob)| LabeledArc { labels, prob, target }).collect());
        }
        Chain { pm, tangible: ts.states.iter().map(|s| s.tangible).collect(), initial: ts.initial, arcs }
    }

    pub fn len(&self) -> usize {
        self.tangible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tangible.is_empty()
    }

    /// Σ over the other states of PM(s, ·), i.e. 1 − PM(s,s) without cancellation.
    fn leave(&self, s: usize) -> f64 {
        (0..self.len()).filter(|&t| t != s).map(|t| self.pm[(s, t)]).sum()
    }

    pub fn sojourn(&self) -> Sojourn {
        let n = self.len();
        let mut sj = vec![0.0; n];
        let mut var = vec![0.0; n];
        let mut sl = vec![1.0; n];
        for s in 0..n {
            let stay = self.pm[(s, s)];
            let out = self.leave(s);
            if stay > 0.0 {
                sl[s] = 1.0 / out;
            }
            if self.tangible[s] {
                sj[s] = 1.0 / out;
                var[s] = stay / (out * out);
            }
        }
        Sojourn { sj, var, sl }
    }

    /// P*: self-loops abstracted; absorbing states get a zero row.
    pub fn edtmc(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut p = DMatrix::zeros(n, n);
        for s in 0..n {
            let out = self.leave(s);
            if out <= 0.0 {
                continue;
            }
            for t in 0..n {
                if t != s {
                    p[(s, t)] = self.pm[(s, t)] / out;
                }
            }
        }
        p
    }

    /// P: the PM values themselves.
    pub fn dtmc(&self) -> DMatrix<f64> {
        self.pm.clone()
    }

    pub fn initial_pmf(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        v[self.initial] = 1.0;
        v
    }
}

/// Per-state sojourn time average, variance and self-loop abstraction factor.
#[derive(Clone, Debug, Serialize)]
pub struct Sojourn {
    pub sj: Vec<f64>,
    pub var: Vec<f64>,
    pub sl: Vec<f64>,
}

/// Stationary PMF of the unique closed class.
#[derive(Clone, Debug, Serialize)]
pub struct Stationary {
    pub pmf: Vec<f64>,
    pub closed_class: Vec<usize>,
    /// Period of the closed class; above 1 the PMF is stationary but not limiting.
    pub period: usize,
}

impl Stationary {
    pub fn is_periodic(&self) -> bool {
        self.period > 1
    }
}

fn support_graph(p: &DMatrix<f64>) -> DiGraph<(), ()> {
    let n = p.nrows();
    let mut g = DiGraph::with_capacity(n, n * 2);
    for _ in 0..n {
        g.add_node(());
    }
    for i in 0..n {
        for j in 0..n {
            if p[(i, j)] > 0.0 {
                g.add_edge((i as u32).into(), (j as u32).into(), ());
            }
        }
    }
    g
}

/// Closed communication classes, each sorted, in order of least member.
pub fn closed_classes(p: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = p.nrows();
    let g = support_graph(p);
    let mut comp = vec![0usize; n];
    let sccs = tarjan_scc(&g);
    for (c, scc) in sccs.iter().enumerate() {
        for v in scc {
            comp[v.index()] = c;
        }
    }
    let mut out: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, scc)| {
            scc.iter().all(|v| (0..n).all(|j| p[(v.index(), j)] <= 0.0 || comp[j] == *c))
        })
        .map(|(_, scc)| {
            let mut v: Vec<usize> = scc.iter().map(|x| x.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    out.sort();
    out
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Period of a closed class: gcd of level differences along its edges.
fn period(p: &DMatrix<f64>, class: &[usize]) -> usize {
    let mut level = vec![usize::MAX; p.nrows()];
    level[class[0]] = 0;
    let mut queue = std::collections::VecDeque::from([class[0]]);
    let mut g = 0;
    while let Some(u) = queue.pop_front() {
        for &v in class {
            if p[(u, v)] <= 0.0 {
                continue;
            }
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            } else {
                g = gcd(g, (level[u] + 1).abs_diff(level[v]));
            }
        }
    }
    // a lone state without a self-loop is absorbing in the embedded chain
    g.max(1)
}

/// Stationary PMF of a chain with exactly one closed class, by LU on the
/// closed-class block with one balance equation replaced by normalization.
/// Zero rows (absorbing states of an embedded chain) count as self-loops.
pub fn steady_state(p: &DMatrix<f64>) -> Result<Stationary, MarkovError> {
    let n = p.nrows();
    let mut q = p.clone();
    for i in 0..n {
        if q.row(i).iter().all(|&x| x <= 0.0) {
            q[(i, i)] = 1.0;
        }
    }
    let classes = closed_classes(&q);
    if classes.len() != 1 {
        return Err(MarkovError::MultipleClosedClasses(classes));
    }
    let class = classes.into_iter().next().expect("one class");
    let k = class.len();
    let mut a = DMatrix::zeros(k, k);
    for (r, &i) in class.iter().enumerate() {
        for (c, &j) in class.iter().enumerate() {
            // row j of the transposed system collects inflow into j
            a[(c, r)] = q[(i, j)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for c in 0..k {
        a[(k - 1, c)] = 1.0;
    }
    let mut b = DVector::zeros(k);
    b[k - 1] = 1.0;
    let x = a.lu().solve(&b).ok_or(MarkovError::Singular)?;
    let mut pmf = vec![0.0; n];
    for (r, &i) in class.iter().enumerate() {
        pmf[i] = x[r].max(0.0);
    }
    let per = period(&q, &class);
    Ok(Stationary { pmf, closed_class: class, period: per })
}

/// Stationary PMF by power iteration on the lazy chain (P+I)/2, which has
/// the same stationary vectors as P and is aperiodic.
pub fn power_iteration(p: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<Vec<f64>, MarkovError> {
    let n = p.nrows();
    let mut q = p.clone();
    for i in 0..n {
        if q.row(i).iter().all(|&x| x <= 0.0) {
            q[(i, i)] = 1.0;
        }
    }
    let lazy = (q + DMatrix::identity(n, n)) * 0.5;
    let lazy_t = lazy.transpose();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..max_iter {
        let next = &lazy_t * &x;
        let diff = (&next - &x).amax();
        x = next;
        if diff < tol {
            let total = x.sum();
            return Ok(x.iter().map(|v| v / total).collect());
        }
    }
    Err(MarkovError::NoConvergence(max_iter))
}

/// ψ[k] = ψ[0]·Pᵏ.
pub fn transient(p: &DMatrix<f64>, psi0: &[f64], k: usize) -> Vec<f64> {
    let pt = p.transpose();
    let mut x = DVector::from_column_slice(psi0);
    for _ in 0..k {
        x = &pt * &x;
    }
    x.iter().copied().collect()
}

/// Everything derived from one chain at once.
#[derive(Clone, Debug, Serialize)]
pub struct Solution {
    pub sojourn: Sojourn,
    /// ψ* (EDTMC)
    pub psi_star: Stationary,
    /// ψ (DTMC)
    pub psi: Stationary,
    /// φ (SMC) via ψ* weighted by SJ
    pub phi: Vec<f64>,
    /// φ via ψ restricted to tangible states
    pub phi_dtmc: Vec<f64>,
}

impl Solution {
    /// Largest deviation between the two φ routes.
    pub fn route_gap(&self) -> f64 {
        self.phi.iter().zip(&self.phi_dtmc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// φ from ψ* and SJ.
pub fn phi_from_edtmc(psi_star: &[f64], sojourn: &Sojourn, tangible: &[bool]) -> Result<Vec<f64>, MarkovError> {
    let n = psi_star.len();
    // an absorbing tangible state carries all the mass if reached
    let absorbing: Vec<usize> = (0..n).filter(|&s| psi_star[s] > 0.0 && sojourn.sj[s].is_infinite()).collect();
    if !absorbing.is_empty() {
        let mut v = vec![0.0; n];
        for &s in &absorbing {
            v[s] = 1.0 / absorbing.len() as f64;
        }
        return Ok(v);
    }
    let w: Vec<f64> = (0..n).map(|s| if tangible[s] { psi_star[s] * sojourn.sj[s] } else { 0.0 }).collect();
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(MarkovError::NoTangibleState);
    }
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// φ from ψ: restrict to tangible states and renormalize.
pub fn phi_from_dtmc(psi: &[f64], tangible: &[bool]) -> Result<Vec<f64>, MarkovError> {
    let total: f64 = psi.iter().zip(tangible).filter(|(_, &t)| t).map(|(x, _)| x).sum();
    if total <= 0.0 {
        return Err(MarkovError::NoTangibleState);
    }
    Ok(psi.iter().zip(tangible).map(|(&x, &t)| if t { x / total } else { 0.0 }).collect())
}

pub fn solve(chain: &Chain) -> Result<Solution, MarkovError> {
    let sojourn = chain.sojourn();
    let psi_star = steady_state(&chain.edtmc())?;
    let psi = steady_state(&chain.dtmc())?;
    let phi = phi_from_edtmc(&psi_star.pmf, &sojourn, &chain.tangible)?;
    let phi_dtmc = phi_from_dtmc(&psi.pmf, &chain.tangible)?;
    Ok(Solution { sojourn, psi_star, psi, phi, phi_dtmc })
}

/// PT(Σ, s): total probability of step paths from s whose multiaction
/// parts spell the trace.
pub fn trace_prob(chain: &Chain, s: usize, trace: &[Multiset<Multiaction>]) -> f64 {
    let Some((first, rest)) = trace.split_first() else {
        return 1.0;
    };
    chain.arcs[s]
        .iter()
        .filter(|a| &a.labels == first)
        .map(|a| a.prob * trace_prob(chain, a.target, rest))
        .sum()
}

/// Inputs for index evaluation. Block selectors (`K3`) refer to the states
/// of the quotient chain when one is supplied.
pub struct IndexCtx<'a> {
    pub chain: &'a Chain,
    pub solution: &'a Solution,
    pub quotient: Option<(&'a Chain, &'a Solution)>,
    pub named: &'a [(String, IndexExpr)],
}

impl IndexCtx<'_> {
    fn resolve(&self, sel: &StateSel) -> Result<(&Chain, &Solution, usize), MarkovError> {
        let (c, sol, i) = match *sel {
            StateSel::State(i) => (self.chain, self.solution, i),
            StateSel::Block(i) => {
                let (c, sol) = self.quotient.ok_or(MarkovError::NoQuotient)?;
                (c, sol, i)
            }
        };
        if i == 0 || i > c.len() {
            return Err(MarkovError::BadSelector(sel_text(sel)));
        }
        Ok((c, sol, i - 1))
    }

    pub fn eval(&self, e: &IndexExpr) -> Result<f64, MarkovError> {
        self.eval_in(e, &mut Vec::new())
    }

    fn eval_in(&self, e: &IndexExpr, stack: &mut Vec<String>) -> Result<f64, MarkovError> {
        Ok(match e {
            IndexExpr::Num(x) => *x,
            IndexExpr::Named(n) => {
                if stack.contains(n) {
                    return Err(MarkovError::RecursiveIndex(n.clone()));
                }
                let body = self
                    .named
                    .iter()
                    .find(|(m, _)| m == n)
                    .map(|(_, b)| b)
                    .ok_or_else(|| MarkovError::UnknownIndex(n.clone()))?;
                stack.push(n.clone());
                let v = self.eval_in(body, stack)?;
                stack.pop();
                v
            }
            IndexExpr::Neg(a) => -self.eval_in(a, stack)?,
            IndexExpr::Bin(op, a, b) => {
                let (x, y) = (self.eval_in(a, stack)?, self.eval_in(b, stack)?);
                match op {
                    '+' => x + y,
                    '-' => x - y,
                    '*' => x * y,
                    _ => x / y,
                }
            }
            IndexExpr::States(f, sels) => {
                let mut total = 0.0;
                for sel in sels {
                    let (_, sol, i) = self.resolve(sel)?;
                    total += match f {
                        IndexFunc::Phi | IndexFunc::Recurrence => sol.phi[i],
                        IndexFunc::Psi => sol.psi.pmf[i],
                        IndexFunc::PsiStar => sol.psi_star.pmf[i],
                        IndexFunc::LeaveRate => {
                            let sj = sol.sojourn.sj[i];
                            if sj > 0.0 {
                                sol.phi[i] / sj
                            } else {
                                0.0
                            }
                        }
                        IndexFunc::Sj => sol.sojourn.sj[i],
                        IndexFunc::Var => sol.sojourn.var[i],
                    };
                }
                if *f == IndexFunc::Recurrence {
                    1.0 / total
                } else {
                    total
                }
            }
            IndexExpr::Step(xi) => {
                let xi: Multiset<Multiaction> = xi.iter().cloned().collect();
                let mut total = 0.0;
                for s in 0..self.chain.len() {
                    let p: f64 =
                        self.chain.arcs[s].iter().filter(|a| xi.is_subset(&a.labels)).map(|a| a.prob).sum();
                    total += self.solution.phi[s] * p;
                }
                total
            }
            IndexExpr::Reward(r) => {
                let mut total = 0.0;
                for (sel, w) in r {
                    let (_, sol, i) = self.resolve(sel)?;
                    total += sol.phi[i] * w;
                }
                total
            }
        })
    }
}

fn sel_text(s: &StateSel) -> String {
    match s {
        StateSel::State(i) => format!("s{i}"),
        StateSel::Block(i) => format!("K{i}"),
    }
}
