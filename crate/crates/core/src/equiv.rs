//! Step stochastic bisimulation: signature refinement, cross-expression
//! checks on disjoint unions and quotient chains.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Multiaction, StaticExpr};
use crate::markov::{Chain, LabeledArc};
use crate::multiset::Multiset;
use crate::opsem::{build_ts_with, BuildOptions, OpsemError, TransitionSystem};

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EquivError {
    #[error("states {0} and {1} share a block but differ on label {2} into block {3}")]
    NotBisimulation(usize, usize, String, usize),
    #[error(transparent)]
    Opsem(#[from] OpsemError),
}

/// Blocks of states, numbered by least member.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Partition {
    pub block_of: Vec<usize>,
    pub blocks: Vec<Vec<usize>>,
}

impl Partition {
    /// Renumbers arbitrary block ids by first appearance.
    pub fn from_ids(ids: &[usize]) -> Partition {
        let mut map: HashMap<usize, usize> = HashMap::new();
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut block_of = Vec::with_capacity(ids.len());
        for (s, id) in ids.iter().enumerate() {
            let b = *map.entry(*id).or_insert_with(|| {
                blocks.push(Vec::new());
                blocks.len() - 1
            });
            blocks[b].push(s);
            block_of.push(b);
        }
        Partition { block_of, blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// PM_A(s, H): probability of moving from s into H by steps with
/// multiaction part A.
pub fn pm_a(ts: &TransitionSystem, s: usize, a: &Multiset<Multiaction>, h: &[usize]) -> f64 {
    ts.outgoing(s)
        .iter()
        .filter(|t| &t.step.labels() == a && h.contains(&t.target))
        .map(|t| t.prob)
        .sum()
}

fn quantize(p: f64, tol: f64) -> i64 {
    (p / tol).round() as i64
}

/// Aggregated (label, block) → probability for one state.
fn block_arcs(chain: &Chain, s: usize, block_of: &[usize]) -> BTreeMap<(Multiset<Multiaction>, usize), f64> {
    let mut m = BTreeMap::new();
    for a in &chain.arcs[s] {
        *m.entry((a.labels.clone(), block_of[a.target])).or_insert(0.0) += a.prob;
    }
    m
}

/// Coarsest partition whose blocks agree on PM_A into every block, starting
/// from the tangible/vanishing split. Probabilities are compared after
/// rounding to multiples of `tol`.
pub fn largest_autobisim(chain: &Chain, tol: f64) -> Partition {
    let n = chain.len();
    let mut ids: Vec<usize> = chain.tangible.iter().map(|&t| usize::from(!t)).collect();
    let mut count = Partition::from_ids(&ids).len();
    loop {
        let mut sigs: HashMap<(usize, Vec<(Multiset<Multiaction>, usize, i64)>), usize> = HashMap::new();
        let mut next = Vec::with_capacity(n);
        for s in 0..n {
            let sig: Vec<_> = block_arcs(chain, s, &ids)
                .into_iter()
                .map(|((l, b), p)| (l, b, quantize(p, tol)))
                .filter(|x| x.2 != 0)
                .collect();
            let k = sigs.len();
            next.push(*sigs.entry((ids[s], sig)).or_insert(k));
        }
        let p = Partition::from_ids(&next);
        ids = p.block_of.clone();
        if p.len() == count {
            return p;
        }
        count = p.len();
    }
}

impl Chain {
    /// Disjoint union; the second chain's states are shifted by `self.len()`.
    /// The initial state is the first chain's.
    pub fn disjoint_union(&self, other: &Chain) -> Chain {
        let (n1, n2) = (self.len(), other.len());
        let mut pm = DMatrix::zeros(n1 + n2, n1 + n2);
        pm.view_mut((0, 0), (n1, n1)).copy_from(&self.pm);
        pm.view_mut((n1, n1), (n2, n2)).copy_from(&other.pm);
        let mut arcs = self.arcs.clone();
        for row in &other.arcs {
            arcs.push(row.iter().map(|a| LabeledArc { target: a.target + n1, ..a.clone() }).collect());
        }
        let mut tangible = self.tangible.clone();
        tangible.extend(&other.tangible);
        Chain { pm, tangible, initial: self.initial, arcs }
    }
}

/// Result of comparing two expressions.
#[derive(Clone, Debug)]
pub struct BisimCheck {
    pub equivalent: bool,
    /// Partition of the union; states of the right operand are offset by `offset`.
    pub partition: Partition,
    pub offset: usize,
}

pub fn bisim_equivalent(e1: &StaticExpr, e2: &StaticExpr, tol: f64) -> Result<BisimCheck, EquivError> {
    let opts = BuildOptions::default();
    let c1 = Chain::from_ts(&build_ts_with(e1, &opts)?);
    let c2 = Chain::from_ts(&build_ts_with(e2, &opts)?);
    Ok(chains_bisimilar(&c1, &c2, tol))
}

pub fn chains_bisimilar(c1: &Chain, c2: &Chain, tol: f64) -> BisimCheck {
    let u = c1.disjoint_union(c2);
    let partition = largest_autobisim(&u, tol);
    let equivalent = partition.block_of[c1.initial] == partition.block_of[c2.initial + c1.len()];
    BisimCheck { equivalent, partition, offset: c1.len() }
}

/// Quotient of a chain by a partition, checked to be a bisimulation: every
/// member of a block must agree with the block's least member on PM_A into
/// every block within `tol`.
pub fn quotient(chain: &Chain, part: &Partition, tol: f64) -> Result<Chain, EquivError> {
    let k = part.len();
    let mut pm = DMatrix::zeros(k, k);
    let mut arcs = Vec::with_capacity(k);
    let mut tangible = Vec::with_capacity(k);
    for block in &part.blocks {
        let rep = block[0];
        let m = block_arcs(chain, rep, &part.block_of);
        for &s in &block[1..] {
            if chain.tangible[s] != chain.tangible[rep] {
                return Err(EquivError::NotBisimulation(rep, s, "tangibility".into(), part.block_of[s]));
            }
            let other = block_arcs(chain, s, &part.block_of);
            for key in m.keys().chain(other.keys()) {
                let (x, y) = (m.get(key).copied().unwrap_or(0.0), other.get(key).copied().unwrap_or(0.0));
                if (x - y).abs() > tol {
                    return Err(EquivError::NotBisimulation(rep, s, key.0.to_string(), key.1));
                }
            }
        }
        let b = part.block_of[rep];
        for ((_, t), p) in &m {
            pm[(b, *t)] += p;
        }
        arcs.push(m.into_iter().map(|((labels, target), prob)| LabeledArc { labels, prob, target }).collect());
        tangible.push(chain.tangible[rep]);
    }
    Ok(Chain { pm, tangible, initial: part.block_of[chain.initial], arcs })
}
