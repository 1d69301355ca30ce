use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dtsipbc::analysis::{extrema, resolve_indices, sweep_with, Analysis, Error};
use dtsipbc::equiv::chains_bisimilar;
use dtsipbc::export;
use dtsipbc::markov::Chain;
use dtsipbc::netsem::{box_of, build_rg_with, check_safe_clean_with};
use dtsipbc::opsem::{build_ts_with, ts_isomorphic, BuildOptions, DEFAULT_MAX_CLOSURE, DEFAULT_MAX_STATES};
use dtsipbc::parser::{parse_model, ModelFile, ParamValue, ParseError};

#[derive(Parser)]
#[command(name = "dtsipbc", version, about = "Step semantics, nets and Markov analysis of dtsiPBC models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Transition system of the root expression
    Ts(Common),
    /// dtsi-box of the root expression
    Box(Common),
    /// Reachability graph of the box
    Rg(Common),
    /// Checks TS ≃ RG and that the box is safe and clean
    Checkiso(Common),
    /// Sojourn vectors, chains, stationary PMFs and indices
    Solve(Common),
    /// Quotient by the largest step stochastic bisimulation
    Quotient(Common),
    /// Indices over a parameter grid, with grid extrema
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Also write a state table per grid point (needs --out)
        #[arg(long)]
        per_point: bool,
    },
    /// Step stochastic bisimulation between two definitions
    Equiv {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        left: String,
        #[arg(long)]
        right: String,
    },
}

#[derive(Args)]
struct Common {
    /// Model file, or the name of a bundled model
    model: String,
    /// name=value, name=p/q or name=start:stop:step
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    /// Index name from the model or an index expression
    #[arg(long = "index")]
    indices: Vec<String>,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_STATES)]
    max_states: usize,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write files here instead of printing
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Dot,
}

enum Failure {
    Input(String),
    Analysis(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Analysis(e.to_string())
        }
    }
}

impl From<ParseError> for Failure {
    fn from(e: ParseError) -> Failure {
        Failure::Input(e.to_string())
    }
}

fn io_err(e: std::io::Error) -> Failure {
    Failure::Input(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Analysis(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

struct Loaded {
    stem: String,
    model: ModelFile,
}

fn load(c: &Common) -> Result<Loaded, Failure> {
    let path = Path::new(&c.model);
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
    let text = if path.exists() {
        fs::read_to_string(path).map_err(io_err)?
    } else if let Some(src) = dtsipbc::models::get(&stem) {
        src.to_string()
    } else {
        return Err(Failure::Input(format!("no such model file or bundled model: {}", c.model)));
    };
    let mut model = parse_model(&text).map_err(|e| Failure::Input(format!("{}: {e}", c.model)))?;
    for p in &c.params {
        let (name, value) =
            p.split_once('=').ok_or_else(|| Failure::Input(format!("--param expects NAME=VALUE, got {p}")))?;
        let v = ParamValue::parse(value)?;
        if let ParamValue::Range { step, start, stop } = v {
            if step <= 0.0 || stop < start {
                return Err(Failure::Input(format!("empty or infinite grid for {name}")));
            }
        }
        model.set_param(name.trim(), v);
    }
    Ok(Loaded { stem, model })
}

fn opts(c: &Common) -> BuildOptions {
    BuildOptions { max_states: c.max_states, max_closure: DEFAULT_MAX_CLOSURE }
}

/// Prints to stdout, or writes `<out>/<name>` when --out is given.
fn emit(c: &Common, name: &str, body: &str) -> Result<(), Failure> {
    match &c.out {
        None => {
            // a closed pipe (e.g. `| head`) is not an error
            let _ = std::io::Write::write_all(&mut std::io::stdout().lock(), body.as_bytes());
            Ok(())
        }
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err)?;
            fs::write(dir.join(name), body).map_err(io_err)
        }
    }
}

fn json_text(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    s
}

fn check_tol(c: &Common) -> Result<(), Failure> {
    if c.tol > 0.0 && c.tol.is_finite() {
        Ok(())
    } else {
        Err(Failure::Input("--tol must be positive".into()))
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Ts(c) => {
            check_tol(&c)?;
            let l = load(&c)?;
            let ts = build_ts_with(&l.model.instantiate_default()?, &opts(&c)).map_err(Error::from)?;
            let fmt = c.format.unwrap_or(Format::Json);
            let body = match fmt {
                Format::Dot => export::ts_dot(&ts),
                _ => json_text(&export::ts_json(&ts)),
            };
            emit(&c, &format!("{}.ts.{}", l.stem, if fmt == Format::Dot { "dot" } else { "json" }), &body)
        }
        Cmd::Box(c) => {
            let l = load(&c)?;
            let n = box_of(&l.model.instantiate_default()?).map_err(Error::from)?;
            let fmt = c.format.unwrap_or(Format::Json);
            let body = match fmt {
                Format::Dot => n.to_dot(),
                _ => json_text(&n.to_json()),
            };
            emit(&c, &format!("{}.box.{}", l.stem, if fmt == Format::Dot { "dot" } else { "json" }), &body)
        }
        Cmd::Rg(c) => {
            let l = load(&c)?;
            let n = box_of(&l.model.instantiate_default()?).map_err(Error::from)?;
            let rg = build_rg_with(&n, c.max_states).map_err(Error::from)?;
            let fmt = c.format.unwrap_or(Format::Json);
            let body = match fmt {
                Format::Dot => export::ts_dot(&rg),
                _ => json_text(&export::ts_json(&rg)),
            };
            emit(&c, &format!("{}.rg.{}", l.stem, if fmt == Format::Dot { "dot" } else { "json" }), &body)
        }
        Cmd::Checkiso(c) => {
            check_tol(&c)?;
            let l = load(&c)?;
            let e = l.model.instantiate_default()?;
            let ts = build_ts_with(&e, &opts(&c)).map_err(Error::from)?;
            let n = box_of(&e).map_err(Error::from)?;
            let rg = build_rg_with(&n, c.max_states).map_err(Error::from)?;
            let report = check_safe_clean_with(&n, c.max_states).map_err(Error::from)?;
            let map = ts_isomorphic(&ts, &rg, c.tol);
            let v = serde_json::json!({
                "ts_states": ts.len(),
                "rg_markings": rg.len(),
                "isomorphic": map.is_some(),
                "mapping": map.as_ref().map(|m| m.iter().enumerate().map(|(s, t)| serde_json::json!([s + 1, rg.key(*t)])).collect::<Vec<_>>()),
                "safe": report.safe,
                "clean": report.clean,
                "witness": report.witness,
            });
            emit(&c, &format!("{}.checkiso.json", l.stem), &json_text(&v))?;
            if map.is_none() {
                return Err(Failure::Analysis(format!("TS ({} states) and RG ({} markings) are not isomorphic", ts.len(), rg.len())));
            }
            if !report.safe || !report.clean {
                return Err(Failure::Analysis("box is not safe and clean".into()));
            }
            Ok(())
        }
        Cmd::Solve(c) => {
            check_tol(&c)?;
            let l = load(&c)?;
            let ix = resolve_indices(&l.model, &c.indices)?;
            let a = Analysis::of_expr(&l.model.instantiate_default()?, &opts(&c), c.tol)?;
            let mut values = Vec::new();
            for (name, e) in &ix {
                values.push((name.clone(), a.eval(e, &l.model.indices)?));
            }
            match c.format.unwrap_or(Format::Json) {
                Format::Csv => {
                    let mut body = export::states_csv(&a);
                    for (n, v) in &values {
                        body.push_str(&format!("# {n} = {v}\n"));
                    }
                    emit(&c, &format!("{}.solve.csv", l.stem), &body)
                }
                Format::Json => emit(&c, &format!("{}.solve.json", l.stem), &json_text(&export::solution_json(&a, &values))),
                Format::Dot => Err(Failure::Input("solve writes json or csv".into())),
            }
        }
        Cmd::Quotient(c) => {
            check_tol(&c)?;
            let l = load(&c)?;
            let a = Analysis::of_expr(&l.model.instantiate_default()?, &opts(&c), c.tol)?;
            emit(&c, &format!("{}.quotient.json", l.stem), &json_text(&export::quotient_json(&a)))
        }
        Cmd::Sweep { common: c, per_point } => {
            check_tol(&c)?;
            let l = load(&c)?;
            if c.indices.is_empty() {
                return Err(Failure::Input("sweep needs at least one --index".into()));
            }
            if per_point && c.out.is_none() {
                return Err(Failure::Input("--per-point needs --out".into()));
            }
            let ix = resolve_indices(&l.model, &c.indices)?;
            let names: Vec<String> = ix.iter().map(|(n, _)| n.clone()).collect();
            let points_dir = c.out.as_ref().map(|d| d.join(format!("{}.points", l.stem)));
            if per_point {
                fs::create_dir_all(points_dir.as_ref().expect("checked")).map_err(io_err)?;
            }
            let rows = sweep_with(&l.model, &ix, &opts(&c), c.tol, |i, _params, a| {
                if per_point {
                    let dir = points_dir.as_ref().expect("checked");
                    let _ = fs::write(dir.join(format!("{:06}.csv", i + 1)), export::states_csv(a));
                }
            })?;
            let mut head = format!("# model: {}\n", l.stem);
            for (name, v) in &l.model.params {
                if let ParamValue::Range { start, stop, step } = v {
                    head.push_str(&format!("# grid: {name} = {start}:{stop}:{step} ({} points)\n", v.points().len()));
                }
            }
            for (k, n) in names.iter().enumerate() {
                if let Some((lo, hi)) = extrema(&rows, k) {
                    head.push_str(&format!(
                        "# {n}: min {} at {}; max {} at {}\n",
                        export::num(rows[lo].values[k]),
                        point_text(&rows[lo].params),
                        export::num(rows[hi].values[k]),
                        point_text(&rows[hi].params)
                    ));
                }
            }
            let body = head + &export::sweep_csv(&rows, &names);
            emit(&c, &format!("{}.sweep.csv", l.stem), &body)
        }
        Cmd::Equiv { common: c, left, right } => {
            check_tol(&c)?;
            let l = load(&c)?;
            let b = l.model.default_bindings()?;
            let (e1, e2) = (l.model.instantiate_named(&left, &b)?, l.model.instantiate_named(&right, &b)?);
            let t1 = build_ts_with(&e1, &opts(&c)).map_err(Error::from)?;
            let t2 = build_ts_with(&e2, &opts(&c)).map_err(Error::from)?;
            let r = chains_bisimilar(&Chain::from_ts(&t1), &Chain::from_ts(&t2), c.tol);
            let blocks: Vec<Vec<String>> = r
                .partition
                .blocks
                .iter()
                .map(|b| {
                    b.iter()
                        .map(|&s| if s < r.offset { format!("{left}:s{}", s + 1) } else { format!("{right}:s{}", s - r.offset + 1) })
                        .collect()
                })
                .collect();
            let v = serde_json::json!({
                "left": left,
                "right": right,
                "bisimilar": r.equivalent,
                "isomorphic": ts_isomorphic(&t1, &t2, c.tol).is_some(),
                "blocks": blocks,
            });
            emit(&c, &format!("{}.equiv.json", l.stem), &json_text(&v))
        }
    }
}

fn point_text(p: &BTreeMap<String, f64>) -> String {
    p.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}
