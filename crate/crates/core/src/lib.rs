//! Discrete time stochastic and immediate Petri box calculus.
//!
//! Expressions are parsed ([`parser`]), given a step semantics as labeled
//! probabilistic transition systems ([`opsem`]) and a net semantics as
//! dtsi-boxes with reachability graphs ([`netsem`]). Transition systems are
//! analysed as semi-Markov and discrete time Markov chains ([`markov`]) and
//! reduced modulo step stochastic bisimulation ([`equiv`]).

pub mod analysis;
pub mod equiv;
pub mod export;
pub mod expr;
pub mod markov;
pub mod models;
pub mod multiset;
pub mod netsem;
pub mod opsem;
pub mod parser;

pub use expr::{ActionSym, Activity, Bar, DynamicExpr, Kind, Multiaction, Numbering, StaticExpr, Step};
pub use multiset::Multiset;
pub use opsem::{build_ts, TransitionSystem};
pub use parser::{parse_dynamic, parse_model, parse_static, ModelFile};
pub use analysis::{Analysis, Error};
pub use equiv::{bisim_equivalent, largest_autobisim, Partition};
pub use markov::{Chain, Solution};
pub use netsem::{box_of, build_rg, DtsiBox};
