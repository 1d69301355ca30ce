//! JSON, CSV and DOT renderings. Output order follows state and transition
//! order, so identical inputs give byte-identical files.

use std::fmt::Write as _;

use serde_json::{json, Value};

use crate::analysis::{Analysis, SweepRow};
use crate::markov::Chain;
use crate::opsem::TransitionSystem;

fn kind(tangible: bool) -> &'static str {
    if tangible {
        "tangible"
    } else {
        "vanishing"
    }
}

/// States are numbered from 1 as in the text output.
pub fn ts_json(ts: &TransitionSystem) -> Value {
    let states: Vec<Value> = (0..ts.len())
        .map(|s| json!({ "id": s + 1, "key": ts.key(s), "kind": kind(ts.states[s].tangible) }))
        .collect();
    let transitions: Vec<Value> = ts
        .transitions
        .iter()
        .map(|t| {
            json!({
                "source": t.source + 1,
                "step": t.step.activities().iter().map(|a| a.to_string()).collect::<Vec<_>>(),
                "prob": t.prob,
                "target": t.target + 1,
            })
        })
        .collect();
    json!({ "initial": ts.initial + 1, "states": states, "transitions": transitions })
}

pub fn ts_dot(ts: &TransitionSystem) -> String {
    let mut s = String::from("digraph ts {\n");
    for i in 0..ts.len() {
        let style = if ts.states[i].tangible { "" } else { ", style=filled, fillcolor=lightgray" };
        let _ = writeln!(s, "  s{} [label=\"s{}\"{style}];", i + 1, i + 1);
    }
    for t in &ts.transitions {
        let _ = writeln!(s, "  s{} -> s{} [label=\"{} {:.6}\"];", t.source + 1, t.target + 1, t.step, t.prob);
    }
    s.push_str("}\n");
    s
}

fn chain_arcs(c: &Chain) -> Vec<Value> {
    let mut out = Vec::new();
    for (s, row) in c.arcs.iter().enumerate() {
        for a in row {
            out.push(json!({ "source": s + 1, "labels": a.labels.to_string(), "prob": a.prob, "target": a.target + 1 }));
        }
    }
    out
}

/// Row-major copy of a dense matrix.
pub fn matrix(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Full solution report: sojourn vectors, both TPMs and all stationary PMFs.
pub fn solution_json(a: &Analysis, indices: &[(String, f64)]) -> Value {
    let sol = &a.solution;
    json!({
        "states": a.ts.len(),
        "tangible": a.ts.tangible_count(),
        "sj": sol.sojourn.sj.iter().map(|&x| finite(x)).collect::<Vec<_>>(),
        "var": sol.sojourn.var.iter().map(|&x| finite(x)).collect::<Vec<_>>(),
        "sl": sol.sojourn.sl.iter().map(|&x| finite(x)).collect::<Vec<_>>(),
        "p": matrix(&a.chain.dtmc()),
        "p_star": matrix(&a.chain.edtmc()),
        "psi": sol.psi.pmf,
        "psi_star": sol.psi_star.pmf,
        "phi": sol.phi,
        "period_dtmc": sol.psi.period,
        "period_edtmc": sol.psi_star.period,
        "limiting": sol.psi.period == 1,
        "indices": indices.iter().map(|(n, v)| json!({ "name": n, "value": finite(*v) })).collect::<Vec<_>>(),
    })
}

/// Infinite values (absorbing states) are written as strings.
fn finite(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

pub fn quotient_json(a: &Analysis) -> Value {
    let q = &a.quotient;
    let sol = &a.quotient_solution;
    json!({
        "blocks": a.partition.blocks.iter().map(|b| b.iter().map(|s| s + 1).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "kinds": q.tangible.iter().map(|&t| kind(t)).collect::<Vec<_>>(),
        "initial": q.initial + 1,
        "arcs": chain_arcs(q),
        "sj": sol.sojourn.sj.iter().map(|&x| finite(x)).collect::<Vec<_>>(),
        "var": sol.sojourn.var.iter().map(|&x| finite(x)).collect::<Vec<_>>(),
        "p": matrix(&q.dtmc()),
        "p_star": matrix(&q.edtmc()),
        "psi": sol.psi.pmf,
        "psi_star": sol.psi_star.pmf,
        "phi": sol.phi,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per state: key, kind, SJ, VAR, ψ*, ψ, φ.
pub fn states_csv(a: &Analysis) -> String {
    let mut s = String::from("state,key,kind,sj,var,psi_star,psi,phi\n");
    let sol = &a.solution;
    for i in 0..a.ts.len() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            i + 1,
            csv_field(&a.ts.key(i)),
            kind(a.ts.states[i].tangible),
            num(sol.sojourn.sj[i]),
            num(sol.sojourn.var[i]),
            num(sol.psi_star.pmf[i]),
            num(sol.psi.pmf[i]),
            num(sol.phi[i])
        );
    }
    s
}

/// Plain decimals in the usual range, exponent form for tiny or huge values.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e9).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

/// Aggregate sweep table: parameters then index values, one row per point.
pub fn sweep_csv(rows: &[SweepRow], names: &[String]) -> String {
    let mut s = String::new();
    let params: Vec<&String> = rows.first().map(|r| r.params.keys().collect()).unwrap_or_default();
    let header: Vec<String> = params.iter().map(|p| csv_field(p)).chain(names.iter().map(|n| csv_field(n))).collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for r in rows {
        let cells: Vec<String> =
            r.params.values().map(|&v| num(v)).chain(r.values.iter().map(|&v| num(v))).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}
