//! Test-side static terms: a random generator for regular terms and an
//! exhaustive enumerator for tiny ones. Terms are printed fully
//! parenthesized and handed to the library parser.

use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub enum Term {
    /// Actions are written `a` or `a^`.
    Act { part: Vec<String>, imm: bool, val: f64 },
    Seq(Box<Term>, Box<Term>),
    Choice(Box<Term>, Box<Term>),
    Par(Box<Term>, Box<Term>),
    /// Swap of two action names.
    Relabel(Box<Term>, String, String),
    Rs(Box<Term>, String),
    Sy(Box<Term>, String),
    Iter(Box<Term>, Box<Term>, Box<Term>),
}

use Term::*;

fn b(t: Term) -> Box<Term> {
    Box::new(t)
}

impl Term {
    pub fn to_source(&self) -> String {
        match self {
            Act { part, imm, val } => {
                let kind = if *imm { format!("#{val}") } else { format!("{val}") };
                format!("({{{}}},{kind})", part.join(","))
            }
            Seq(x, y) => format!("({};{})", x.to_source(), y.to_source()),
            Choice(x, y) => format!("({} [] {})", x.to_source(), y.to_source()),
            Par(x, y) => format!("({} || {})", x.to_source(), y.to_source()),
            Relabel(x, p, q) => format!("({})[f: {p}->{q}, {q}->{p}]", x.to_source()),
            Rs(x, a) => format!("({}) rs {a}", x.to_source()),
            Sy(x, a) => format!("({}) sy {a}", x.to_source()),
            Iter(x, y, z) => format!("[{} * {} * {}]", x.to_source(), y.to_source(), z.to_source()),
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            Act { .. } => 1,
            Seq(x, y) | Choice(x, y) | Par(x, y) => x.leaves() + y.leaves(),
            Relabel(x, ..) | Rs(x, _) | Sy(x, _) => x.leaves(),
            Iter(x, y, z) => x.leaves() + y.leaves() + z.leaves(),
        }
    }

    pub fn sy_count(&self) -> usize {
        match self {
            Act { .. } => 0,
            Seq(x, y) | Choice(x, y) | Par(x, y) => x.sy_count() + y.sy_count(),
            Relabel(x, ..) | Rs(x, _) => x.sy_count(),
            Sy(x, _) => 1 + x.sy_count(),
            Iter(x, y, z) => x.sy_count() + y.sy_count() + z.sy_count(),
        }
    }

    /// Leaves in source order.
    pub fn leaf_list(&self) -> Vec<&Term> {
        match self {
            Act { .. } => vec![self],
            Seq(x, y) | Choice(x, y) | Par(x, y) => [x.leaf_list(), y.leaf_list()].concat(),
            Relabel(x, ..) | Rs(x, _) | Sy(x, _) => x.leaf_list(),
            Iter(x, y, z) => [x.leaf_list(), y.leaf_list(), z.leaf_list()].concat(),
        }
    }

    fn map_leaves(&self, f: &mut impl FnMut(&Term) -> Term) -> Term {
        match self {
            Act { .. } => f(self),
            Seq(x, y) => Seq(b(x.map_leaves(f)), b(y.map_leaves(f))),
            Choice(x, y) => Choice(b(x.map_leaves(f)), b(y.map_leaves(f))),
            Par(x, y) => Par(b(x.map_leaves(f)), b(y.map_leaves(f))),
            Relabel(x, p, q) => Relabel(b(x.map_leaves(f)), p.clone(), q.clone()),
            Rs(x, a) => Rs(b(x.map_leaves(f)), a.clone()),
            Sy(x, a) => Sy(b(x.map_leaves(f)), a.clone()),
            Iter(x, y, z) => Iter(b(x.map_leaves(f)), b(y.map_leaves(f)), b(z.map_leaves(f))),
        }
    }

    /// Same term with leaf `k` (source order) replaced.
    pub fn with_leaf(&self, k: usize, leaf: Term) -> Term {
        let mut i = 0;
        self.map_leaves(&mut |t| {
            let out = if i == k { leaf.clone() } else { t.clone() };
            i += 1;
            out
        })
    }

    fn count_nodes(&self) -> usize {
        match self {
            Act { .. } => 1,
            Seq(x, y) | Choice(x, y) | Par(x, y) => 1 + x.count_nodes() + y.count_nodes(),
            Relabel(x, ..) | Rs(x, _) | Sy(x, _) => 1 + x.count_nodes(),
            Iter(x, y, z) => 1 + x.count_nodes() + y.count_nodes() + z.count_nodes(),
        }
    }

    /// Wraps the subterm at preorder position `pos` with `wrap`.
    fn wrap_at(&self, pos: &mut usize, wrap: &dyn Fn(Term) -> Term) -> Term {
        if *pos == 0 {
            *pos = usize::MAX;
            return wrap(self.clone());
        }
        *pos = pos.wrapping_sub(1);
        match self {
            Act { .. } => self.clone(),
            Seq(x, y) => Seq(b(x.wrap_at(pos, wrap)), b(y.wrap_at(pos, wrap))),
            Choice(x, y) => Choice(b(x.wrap_at(pos, wrap)), b(y.wrap_at(pos, wrap))),
            Par(x, y) => Par(b(x.wrap_at(pos, wrap)), b(y.wrap_at(pos, wrap))),
            Relabel(x, p, q) => Relabel(b(x.wrap_at(pos, wrap)), p.clone(), q.clone()),
            Rs(x, a) => Rs(b(x.wrap_at(pos, wrap)), a.clone()),
            Sy(x, a) => Sy(b(x.wrap_at(pos, wrap)), a.clone()),
            Iter(x, y, z) => Iter(b(x.wrap_at(pos, wrap)), b(y.wrap_at(pos, wrap)), b(z.wrap_at(pos, wrap))),
        }
    }

    /// Whether the term fits the regular grammar (iteration bodies are
    /// D-terms: no parallel composition at their top level).
    pub fn is_regular(&self) -> bool {
        fn e(t: &Term) -> bool {
            match t {
                Act { .. } => true,
                Seq(x, y) | Choice(x, y) | Par(x, y) => e(x) && e(y),
                Relabel(x, ..) | Rs(x, _) | Sy(x, _) => e(x),
                Iter(x, y, z) => e(x) && d(y) && e(z),
            }
        }
        fn d(t: &Term) -> bool {
            match t {
                Act { .. } => true,
                Seq(x, y) => d(x) && e(y),
                Choice(x, y) => d(x) && d(y),
                Par(..) => false,
                Relabel(x, ..) | Rs(x, _) | Sy(x, _) => d(x),
                Iter(x, y, z) => d(x) && d(y) && e(z),
            }
        }
        e(self)
    }
}

pub const ACTIONS: [&str; 3] = ["a", "b", "c"];

pub fn leaf<R: Rng>(rng: &mut R) -> Term {
    let n = rng.gen_range(0..=2);
    let mut part: Vec<String> = (0..n)
        .map(|_| {
            let a = ACTIONS.choose(rng).unwrap();
            if rng.gen_bool(0.4) {
                format!("{a}^")
            } else {
                a.to_string()
            }
        })
        .collect();
    part.sort();
    let imm = rng.gen_bool(0.3);
    let val = if imm { rng.gen_range(1..=3) as f64 } else { rng.gen_range(5..=95) as f64 / 100.0 };
    Act { part, imm, val }
}

/// Splits `n` leaves into `k` positive parts.
fn split<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut parts = vec![1; k];
    for _ in k..n {
        let i = rng.gen_range(0..k);
        parts[i] += 1;
    }
    parts
}

pub struct GenConfig {
    pub max_sy: usize,
    pub wrap_prob: f64,
}

/// Random regular term with exactly `n` leaves.
pub fn random_term<R: Rng>(rng: &mut R, n: usize, cfg: &GenConfig) -> Term {
    let mut sy_left = cfg.max_sy;
    gen_e(rng, n, cfg, &mut sy_left)
}

fn wrap<R: Rng>(rng: &mut R, t: Term, cfg: &GenConfig, sy_left: &mut usize) -> Term {
    if !rng.gen_bool(cfg.wrap_prob) {
        return t;
    }
    let a = ACTIONS.choose(rng).unwrap().to_string();
    match rng.gen_range(0..3) {
        0 => Rs(b(t), a),
        1 => {
            let mut q = ACTIONS.choose(rng).unwrap().to_string();
            if q == a {
                q = "d".into();
            }
            Relabel(b(t), a, q)
        }
        _ if *sy_left > 0 => {
            *sy_left -= 1;
            Sy(b(t), a)
        }
        _ => Rs(b(t), a),
    }
}

fn gen_e<R: Rng>(rng: &mut R, n: usize, cfg: &GenConfig, sy_left: &mut usize) -> Term {
    let t = if n == 1 {
        leaf(rng)
    } else {
        let ops = if n >= 3 { 4 } else { 3 };
        match rng.gen_range(0..ops) {
            3 => {
                let p = split(rng, n, 3);
                Iter(b(gen_e(rng, p[0], cfg, sy_left)), b(gen_d(rng, p[1], cfg, sy_left)), b(gen_e(rng, p[2], cfg, sy_left)))
            }
            op => {
                let p = split(rng, n, 2);
                let x = b(gen_e(rng, p[0], cfg, sy_left));
                let y = b(gen_e(rng, p[1], cfg, sy_left));
                match op {
                    0 => Seq(x, y),
                    1 => Choice(x, y),
                    _ => Par(x, y),
                }
            }
        }
    };
    wrap(rng, t, cfg, sy_left)
}

fn gen_d<R: Rng>(rng: &mut R, n: usize, cfg: &GenConfig, sy_left: &mut usize) -> Term {
    let t = if n == 1 {
        leaf(rng)
    } else {
        let ops = if n >= 3 { 3 } else { 2 };
        match rng.gen_range(0..ops) {
            0 => {
                let p = split(rng, n, 2);
                Seq(b(gen_d(rng, p[0], cfg, sy_left)), b(gen_e(rng, p[1], cfg, sy_left)))
            }
            1 => {
                let p = split(rng, n, 2);
                Choice(b(gen_d(rng, p[0], cfg, sy_left)), b(gen_d(rng, p[1], cfg, sy_left)))
            }
            _ => {
                let p = split(rng, n, 3);
                Iter(b(gen_d(rng, p[0], cfg, sy_left)), b(gen_d(rng, p[1], cfg, sy_left)), b(gen_e(rng, p[2], cfg, sy_left)))
            }
        }
    };
    wrap(rng, t, cfg, sy_left)
}

fn placeholder() -> Term {
    Act { part: Vec::new(), imm: false, val: 0.5 }
}

/// All operator shapes with exactly `n` leaves over `;`, `[]`, `||` and
/// iteration, in E position (`d` selects the D grammar).
fn shapes(n: usize, d: bool) -> Vec<Term> {
    let mut out = Vec::new();
    if n == 1 {
        out.push(placeholder());
        return out;
    }
    for k in 1..n {
        let lefts = shapes(k, d);
        let rights_e = shapes(n - k, false);
        for x in &lefts {
            for y in &rights_e {
                out.push(Seq(b(x.clone()), b(y.clone())));
            }
        }
        let rights = shapes(n - k, d);
        for x in &lefts {
            for y in &rights {
                out.push(Choice(b(x.clone()), b(y.clone())));
                if !d {
                    out.push(Par(b(x.clone()), b(y.clone())));
                }
            }
        }
    }
    for i in 1..n {
        for j in 1..n - i {
            let k = n - i - j;
            for x in shapes(i, d) {
                for y in shapes(j, true) {
                    for z in shapes(k, false) {
                        out.push(Iter(b(x.clone()), b(y.clone()), b(z)));
                    }
                }
            }
        }
    }
    out
}

/// The exhaustive family of tiny sy-free terms: every shape with up to
/// three leaves, every stochastic/immediate assignment of the leaves, and
/// for each a plain copy, a copy restricted on `a` at the root, a copy
/// relabeled at the root, and copies with `rs a` inserted at every inner
/// position.
pub fn tiny_terms() -> Vec<Term> {
    const PARTS: [&str; 3] = ["a", "b", "a"];
    const PROBS: [f64; 3] = [0.3, 0.6, 0.45];
    const WEIGHTS: [f64; 3] = [1.0, 2.0, 3.0];
    let mut out = Vec::new();
    for n in 1..=3 {
        for shape in shapes(n, false) {
            for mask in 0..(1u32 << n) {
                let mut i = 0;
                let filled = shape.map_leaves(&mut |_| {
                    let imm = mask >> i & 1 == 1;
                    let t = Act {
                        part: vec![PARTS[i].to_string()],
                        imm,
                        val: if imm { WEIGHTS[i] } else { PROBS[i] },
                    };
                    i += 1;
                    t
                });
                out.push(filled.clone());
                out.push(Rs(b(filled.clone()), "a".into()));
                out.push(Relabel(b(filled.clone()), "a".into(), "b".into()));
                for pos in 1..filled.count_nodes() {
                    let mut p = pos;
                    out.push(filled.wrap_at(&mut p, &|t| Rs(b(t), "a".into())));
                }
            }
        }
    }
    out.retain(|t| t.is_regular());
    out
}
