//! One-call analysis of an expression and parameter sweeps over model files.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::equiv::{largest_autobisim, quotient, EquivError, Partition};
use crate::expr::StaticExpr;
use crate::markov::{solve, Chain, IndexCtx, MarkovError, Solution};
use crate::netsem::NetError;
use crate::opsem::{build_ts_with, BuildOptions, OpsemError, TransitionSystem};
use crate::parser::{parse_index, IndexExpr, ModelFile, ParseError};

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Opsem(#[from] OpsemError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Equiv(#[from] EquivError),
}

impl Error {
    /// Problems with the input itself, as opposed to failed analyses.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse(_)
                | Error::Opsem(OpsemError::NotRegular)
                | Error::Net(NetError::NotRegular)
                | Error::Markov(MarkovError::BadSelector(_) | MarkovError::UnknownIndex(_) | MarkovError::RecursiveIndex(_))
        )
    }
}

/// A transition system with its chains solved, both in full and modulo
/// the largest step stochastic autobisimulation.
pub struct Analysis {
    pub ts: TransitionSystem,
    pub chain: Chain,
    pub solution: Solution,
    pub partition: Partition,
    pub quotient: Chain,
    pub quotient_solution: Solution,
}

impl Analysis {
    pub fn new(ts: TransitionSystem, tol: f64) -> Result<Analysis, Error> {
        let chain = Chain::from_ts(&ts);
        let solution = solve(&chain)?;
        let partition = largest_autobisim(&chain, tol);
        let quotient = quotient(&chain, &partition, tol)?;
        let quotient_solution = solve(&quotient)?;
        Ok(Analysis { ts, chain, solution, partition, quotient, quotient_solution })
    }

    pub fn of_expr(e: &StaticExpr, opts: &BuildOptions, tol: f64) -> Result<Analysis, Error> {
        Analysis::new(build_ts_with(e, opts)?, tol)
    }

    pub fn eval(&self, e: &IndexExpr, named: &[(String, IndexExpr)]) -> Result<f64, Error> {
        let ctx = IndexCtx {
            chain: &self.chain,
            solution: &self.solution,
            quotient: Some((&self.quotient, &self.quotient_solution)),
            named,
        };
        Ok(ctx.eval(e)?)
    }
}

/// Resolves `--index` arguments: a name defined in the model or an index
/// expression. Returns (label, expression).
pub fn resolve_indices(model: &ModelFile, specs: &[String]) -> Result<Vec<(String, IndexExpr)>, Error> {
    specs
        .iter()
        .map(|s| match model.index(s) {
            Some(e) => Ok((s.clone(), e.clone())),
            None => Ok((s.clone(), parse_index(s)?)),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub params: BTreeMap<String, f64>,
    /// One value per requested index; NaN where the point failed.
    pub values: Vec<f64>,
}

/// Evaluates indices at every grid point. The state space is built once at
/// the first point; other points only recompute probabilities.
pub fn sweep(
    model: &ModelFile,
    indices: &[(String, IndexExpr)],
    opts: &BuildOptions,
    tol: f64,
) -> Result<Vec<SweepRow>, Error> {
    sweep_with(model, indices, opts, tol, |_, _, _| {})
}

/// As [`sweep`], calling `visit(point, params, analysis)` at every grid
/// point that could be solved. Points run in parallel.
pub fn sweep_with<F>(
    model: &ModelFile,
    indices: &[(String, IndexExpr)],
    opts: &BuildOptions,
    tol: f64,
    visit: F,
) -> Result<Vec<SweepRow>, Error>
where
    F: Fn(usize, &BTreeMap<String, f64>, &Analysis) + Sync,
{
    let grid = model.grid();
    let first = model.instantiate(&grid[0])?;
    let base = build_ts_with(&first, opts)?;
    // surface bad selectors and unknown names once instead of as NaN columns
    if let Ok(a) = Analysis::new(base.clone(), tol) {
        for (_, ix) in indices {
            match a.eval(ix, &model.indices) {
                Err(e) if e.is_input_error() => return Err(e),
                _ => {}
            }
        }
    }
    grid.into_par_iter()
        .enumerate()
        .map(|(i, params)| {
            let e = model.instantiate(&params)?;
            let ts = base.reweight(&e)?;
            let values = match Analysis::new(ts, tol) {
                Ok(a) => {
                    visit(i, &params, &a);
                    indices.iter().map(|(_, ix)| a.eval(ix, &model.indices).unwrap_or(f64::NAN)).collect()
                }
                Err(_) => vec![f64::NAN; indices.len()],
            };
            Ok(SweepRow { params, values })
        })
        .collect()
}

/// Grid argmin and argmax of index `k`, ignoring NaN points.
pub fn extrema(rows: &[SweepRow], k: usize) -> Option<(usize, usize)> {
    let finite: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].values[k].is_finite()).collect();
    let lo = *finite.iter().min_by(|&&a, &&b| rows[a].values[k].total_cmp(&rows[b].values[k]))?;
    let hi = *finite.iter().max_by(|&&a, &&b| rows[a].values[k].total_cmp(&rows[b].values[k]).then(b.cmp(&a)))?;
    Some((lo, hi))
}
