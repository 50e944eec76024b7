//! Batch front end: config in, `results.csv`, `results.json` and
//! `run-manifest.json` out.

mod config;

pub use config::{validate, Command, Grids, Numeric, Output, Ranges, RunConfig, Tolerances};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::cell::{whom_estimate_with, HomDensityTable};
use crate::descent::DescentOptions;
use crate::envelope::{write_envelope_csv, zf_estimate_with, zf_refine_with, EnvelopeOptions};
use crate::error::Error;
use crate::gamma::gamma_run_with;
use crate::integrand::check_conditions;
use crate::laminate::{
    det_target_laminate, fmt_num, growth_certificate_with, laminate_field_build, rconv_lattice, MatrixGrid,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Exit status and the diagnostics that explain it.
#[derive(Debug, Clone)]
pub struct RunStatus {
    pub code: i32,
    pub out_dir: PathBuf,
    pub diagnostics: Vec<String>,
}

struct Artifacts {
    csv: String,
    json: Value,
    notes: Vec<String>,
}

fn descent_options(n: &Numeric) -> DescentOptions {
    DescentOptions { rel_tol: n.tolerances.rel_tol, max_iters: n.tolerances.max_iters, ..DescentOptions::default() }
}

fn to_json(v: &impl Serialize) -> Result<Value, Error> {
    Ok(serde_json::to_value(v)?)
}

fn run_check(cfg: &RunConfig) -> Result<Artifacts, Error> {
    let report = check_conditions(&cfg.integrand, cfg.numeric.sample_size, cfg.numeric.seed);
    let mut csv = String::from("quantity,value\n");
    let opt = |b: Option<bool>| b.map_or("".to_string(), |b| b.to_string());
    csv += &format!("coercivity_ok,{}\n", report.coercivity_ok);
    csv += &format!("worst_coercivity_ratio,{}\n", fmt_num(report.worst_coercivity_ratio));
    csv += &format!("periodicity_ok,{}\n", report.periodicity_ok);
    csv += &format!("c1_ok,{}\n", report.c1.ok);
    csv += &format!("growth_ok,{}\n", opt(report.growth_ok));
    if let Some(c) = &report.chat2 {
        csv += &format!("alpha,{}\nbeta,{}\nchat2_holds,{}\n", fmt_num(c.alpha), fmt_num(c.beta), c.holds_on_sample);
    }
    Ok(Artifacts { csv, json: to_json(&report)?, notes: report.notes.clone() })
}

fn run_envelope(cfg: &RunConfig) -> Result<Artifacts, Error> {
    let spec = &cfg.integrand;
    let n = &cfg.numeric;
    if n.lattice {
        let r = cfg.grids.ranges.as_ref().expect("validated");
        let grid = MatrixGrid { rows: spec.m, cols: spec.n, lo: r.lo.clone(), hi: r.hi.clone(), nodes: r.nodes.clone() };
        let x = cfg.x.clone();
        let env = rconv_lattice(
            |xi| spec.eval_entries(&x, xi.entries()),
            &grid,
            n.tolerances.lattice_iters,
            n.tolerances.lattice_tol,
        )?;
        let mut buf = Vec::new();
        env.write_csv(&mut buf)?;
        let notes = if env.converged { Vec::new() } else { vec!["lattice iteration hit its limit".into()] };
        return Ok(Artifacts { csv: String::from_utf8(buf).expect("ascii"), json: to_json(&env)?, notes });
    }
    let opts = EnvelopeOptions { descent: descent_options(n), ..EnvelopeOptions::default() };
    let estimates = cfg
        .matrices()
        .par_iter()
        .map(|xi| match &n.mesh_chain {
            Some(chain) => zf_refine_with(spec, &cfg.x, xi, chain, n.starts, n.seed, &opts),
            None => zf_estimate_with(spec, &cfg.x, xi, n.mesh_n, n.starts, n.seed, &opts),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut buf = Vec::new();
    write_envelope_csv(&estimates, &mut buf)?;
    let notes = estimates
        .iter()
        .flat_map(|e| e.diagnostics.iter().map(move |d| format!("xi {:?}: {d}", e.xi.entries())))
        .collect();
    Ok(Artifacts { csv: String::from_utf8(buf).expect("ascii"), json: to_json(&estimates)?, notes })
}

fn run_laminate(cfg: &RunConfig) -> Result<Artifacts, Error> {
    let spec = &cfg.integrand;
    let n = &cfg.numeric;
    let [t1, t2] = match n.det_window {
        Some(w) => w,
        None => {
            let (alpha, _) = spec.chat2_constants().expect("validated");
            [-alpha, alpha]
        }
    };
    let rows = cfg
        .matrices()
        .par_iter()
        .map(|xi| -> Result<Value, Error> {
            let det = xi.det()?;
            let cert = match spec.chat2_constants() {
                Some(_) => Some(growth_certificate_with(spec, &cfg.x, xi, n.mesh_n, n.max_depth)?),
                None => None,
            };
            let mut row = json!({
                "xi": xi,
                "det": det,
                "certificate": cert,
            });
            match det_target_laminate(xi, t1, t2, n.max_depth) {
                Ok(tree) => {
                    let field = laminate_field_build(xi, &tree, n.mesh_n, 1.0)?;
                    row["status"] = json!("laminated");
                    row["two_valued_fraction"] = json!(field.volume_with_dets(&[t1, t2], 1e-8));
                    row["layer_volume"] = json!(field.layer_volume);
                    row["histogram"] = to_json(&field.det_histogram())?;
                    row["leaves"] = json!(tree.leaves().len());
                    row["depth"] = json!(tree.depth());
                    row["tree"] = to_json(&tree)?;
                }
                Err(Error::Precondition(_)) => row["status"] = json!("outside-window"),
                Err(e) => return Err(e),
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let dof = spec.dof_per_point();
    let names: Vec<String> = (0..dof).map(|i| format!("xi_{}{}", i / spec.n + 1, i % spec.n + 1)).collect();
    let mut csv = format!(
        "{},det,status,depth,leaves,layer_volume,two_valued_fraction,certificate_bound\n",
        names.join(",")
    );
    let num = |v: &Value| v.as_f64().map(fmt_num).unwrap_or_default();
    let int = |v: &Value| v.as_u64().map(|u| u.to_string()).unwrap_or_default();
    for (xi, row) in cfg.matrices().iter().zip(&rows) {
        let xs: Vec<String> = xi.entries().iter().map(|v| fmt_num(*v)).collect();
        csv += &format!(
            "{},{},{},{},{},{},{},{}\n",
            xs.join(","),
            num(&row["det"]),
            row["status"].as_str().unwrap_or_default(),
            int(&row["depth"]),
            int(&row["leaves"]),
            num(&row["layer_volume"]),
            num(&row["two_valued_fraction"]),
            num(&row["certificate"]["bound"]),
        );
    }
    Ok(Artifacts { csv, json: json!({ "det_window": [t1, t2], "rows": rows }), notes: Vec::new() })
}

fn run_whom(cfg: &RunConfig, echo: &Value) -> Result<Artifacts, Error> {
    let spec = &cfg.integrand;
    let n = &cfg.numeric;
    let opts = descent_options(n);
    let entries = cfg
        .matrices()
        .par_iter()
        .map(|xi| whom_estimate_with(spec, xi, n.k_max, n.mesh_n, n.starts, n.seed, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    let notes = entries.iter().flat_map(|e| e.diagnostics.clone()).collect();
    let table = HomDensityTable::new(spec, echo.clone(), entries)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    Ok(Artifacts { csv: String::from_utf8(buf).expect("ascii"), json: to_json(&table)?, notes })
}

fn run_gamma(cfg: &RunConfig) -> Result<Artifacts, Error> {
    let n = &cfg.numeric;
    let xi = &cfg.matrices()[0];
    let report = gamma_run_with(&cfg.integrand, xi, &n.eps_list, n.mesh_n, n.k_max, n.starts, n.seed, &descent_options(n))?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    Ok(Artifacts { csv: String::from_utf8(buf).expect("ascii"), json: to_json(&report)?, notes: report.diagnostics.clone() })
}

fn execute(cfg: &RunConfig, echo: &Value) -> Result<Artifacts, Error> {
    match cfg.command {
        Command::Check => run_check(cfg),
        Command::Envelope => run_envelope(cfg),
        Command::Laminate => run_laminate(cfg),
        Command::Whom => run_whom(cfg, echo),
        Command::Gamma => run_gamma(cfg),
    }
}

fn write_json(path: &Path, v: &Value) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(v).expect("serializable");
    text.push('\n');
    std::fs::write(path, text)
}

/// Runs the config at `config_path`. `out` overrides the config's output
/// directory. Never panics on bad input; the manifest is always attempted.
pub fn run(config_path: &Path, out: Option<&Path>) -> RunStatus {
    let started = Instant::now();
    let text = std::fs::read(config_path);
    let parsed = match &text {
        Ok(bytes) => validate(bytes),
        Err(e) => Err(vec![format!("cannot read config {}: {e}", config_path.display())]),
    };
    let raw_echo = text.as_ref().ok().and_then(|b| serde_json::from_slice::<Value>(b).ok()).unwrap_or(Value::Null);

    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| parsed.as_ref().ok().and_then(|c| c.output.dir.as_ref().map(PathBuf::from)))
        .unwrap_or_else(|| PathBuf::from("out"));

    let mut manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": raw_echo,
    });
    let (code, diagnostics) = match &parsed {
        Err(diags) => {
            manifest["status"] = json!("validation-error");
            (EXIT_VALIDATION, diags.clone())
        }
        Ok(cfg) => {
            let echo = serde_json::to_value(cfg).expect("serializable");
            manifest["config"] = echo.clone();
            manifest["command"] = json!(cfg.command);
            manifest["spec_hash"] = json!(cfg.integrand.hash_hex());
            match execute(cfg, &echo) {
                Err(e) => {
                    manifest["status"] = json!("numerical-failure");
                    (EXIT_NUMERICAL, vec![e.to_string()])
                }
                Ok(art) => {
                    let mut written = Vec::new();
                    let res = std::fs::create_dir_all(&out_dir).and_then(|_| {
                        if cfg.output.csv {
                            std::fs::write(out_dir.join("results.csv"), &art.csv)?;
                            written.push("results.csv");
                        }
                        if cfg.output.json {
                            write_json(&out_dir.join("results.json"), &art.json)?;
                            written.push("results.json");
                        }
                        Ok(())
                    });
                    manifest["outputs"] = json!(written);
                    match res {
                        Ok(()) => {
                            manifest["status"] = json!("ok");
                            (EXIT_OK, art.notes)
                        }
                        Err(e) => {
                            manifest["status"] = json!("io-error");
                            (EXIT_NUMERICAL, vec![format!("cannot write results: {e}")])
                        }
                    }
                }
            }
        }
    };
    manifest["exit_code"] = json!(code);
    manifest["diagnostics"] = json!(diagnostics);
    manifest["wall_time_seconds"] = json!(started.elapsed().as_secs_f64());
    let mut diagnostics = diagnostics;
    if let Err(e) = std::fs::create_dir_all(&out_dir).and_then(|_| write_json(&out_dir.join("run-manifest.json"), &manifest)) {
        diagnostics.push(format!("cannot write run-manifest.json: {e}"));
    }
    RunStatus { code, out_dir, diagnostics }
}
