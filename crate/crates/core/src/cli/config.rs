//! Run configuration: one JSON document per run, validated in full before
//! anything is computed.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::integrand::{IntegrandSpec, MatrixMN};

pub const MAX_MESH_N: usize = 256;
pub const MAX_K: usize = 4;
pub const MAX_STARTS: usize = 64;
pub const MAX_GRID_POINTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Check,
    Envelope,
    Laminate,
    Whom,
    Gamma,
}

/// Matrix samples: an explicit list or a tensor product of entry ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Grids {
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub ranges: Option<Ranges>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ranges {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes: Vec<usize>,
}

impl Ranges {
    fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    fn point(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut out = vec![0.0; self.nodes.len()];
        for k in (0..self.nodes.len()).rev() {
            let i = rem % self.nodes[k];
            rem /= self.nodes[k];
            out[k] = if self.nodes[k] == 1 {
                self.lo[k]
            } else {
                self.lo[k] + (self.hi[k] - self.lo[k]) * i as f64 / (self.nodes[k] - 1) as f64
            };
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct NumericDoc {
    mesh_n: Option<usize>,
    mesh_chain: Option<Vec<usize>>,
    k_max: Option<usize>,
    eps_list: Option<Vec<f64>>,
    starts: Option<usize>,
    seed: Option<u64>,
    sample_size: Option<usize>,
    max_depth: Option<usize>,
    det_window: Option<[f64; 2]>,
    lattice: Option<bool>,
    tolerances: Option<Tolerances>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_lattice_tol")]
    pub lattice_tol: f64,
    #[serde(default = "default_lattice_iters")]
    pub lattice_iters: usize,
}

fn default_rel_tol() -> f64 {
    1e-6
}
fn default_max_iters() -> usize {
    3000
}
fn default_lattice_tol() -> f64 {
    1e-12
}
fn default_lattice_iters() -> usize {
    200
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rel_tol: default_rel_tol(),
            max_iters: default_max_iters(),
            lattice_tol: default_lattice_tol(),
            lattice_iters: default_lattice_iters(),
        }
    }
}

/// Numeric parameters with defaults filled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Numeric {
    pub mesh_n: usize,
    pub mesh_chain: Option<Vec<usize>>,
    pub k_max: usize,
    pub eps_list: Vec<f64>,
    pub starts: usize,
    pub seed: u64,
    pub sample_size: usize,
    pub max_depth: usize,
    /// Determinant window (t₁, t₂) for `laminate`; defaults to (−α, α).
    pub det_window: Option<[f64; 2]>,
    /// `envelope` on the ranges grid by lattice rank-one convexification.
    pub lattice: bool,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Output {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default = "yes")]
    pub csv: bool,
    #[serde(default = "yes")]
    pub json: bool,
}

fn yes() -> bool {
    true
}

impl Default for Output {
    fn default() -> Self {
        Self { dir: None, csv: true, json: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    pub command: Command,
    pub integrand: IntegrandSpec,
    pub grids: Grids,
    /// Frozen point for `envelope` and `laminate`; the origin by default.
    pub x: Vec<f64>,
    pub numeric: Numeric,
    pub output: Output,
}

impl RunConfig {
    /// Every matrix sample of the grid.
    pub fn matrices(&self) -> Vec<MatrixMN> {
        let (m, n) = (self.integrand.m, self.integrand.n);
        let raw: Vec<Vec<f64>> = match (&self.grids.points, &self.grids.ranges) {
            (Some(p), _) => p.clone(),
            (None, Some(r)) => (0..r.len()).map(|i| r.point(i)).collect(),
            (None, None) => Vec::new(),
        };
        raw.into_iter().map(|e| MatrixMN::new(m, n, e).expect("validated shape")).collect()
    }
}

fn field<T: serde::de::DeserializeOwned>(doc: &Value, key: &str, diags: &mut Vec<String>) -> Option<T> {
    let v = doc.get(key)?;
    match serde_json::from_value(v.clone()) {
        Ok(t) => Some(t),
        Err(e) => {
            diags.push(format!("{key}: {e}"));
            None
        }
    }
}

/// Parses and validates a config document. All problems are collected; the
/// config is returned only when there are none.
pub fn validate(text: &[u8]) -> std::result::Result<RunConfig, Vec<String>> {
    let doc: Value = match serde_json::from_slice(text) {
        Ok(v) => v,
        Err(e) => return Err(vec![format!("config is not valid JSON (line {}, column {}): {e}", e.line(), e.column())]),
    };
    let Some(obj) = doc.as_object() else {
        return Err(vec!["config must be a JSON object".into()]);
    };
    let mut diags = Vec::new();
    for key in obj.keys() {
        if !["command", "integrand", "grids", "x", "numeric", "output"].contains(&key.as_str()) {
            diags.push(format!("unknown top-level field \"{key}\""));
        }
    }

    let command: Option<Command> = field(&doc, "command", &mut diags);
    if doc.get("command").is_none() {
        diags.push("command required (one of check, envelope, laminate, whom, gamma)".into());
    }
    let integrand: Option<IntegrandSpec> = field(&doc, "integrand", &mut diags);
    if doc.get("integrand").is_none() {
        diags.push("integrand required".into());
    }
    if let Some(spec) = &integrand {
        if let Err(e) = spec.validate() {
            diags.push(format!("integrand: {e}"));
        }
    }
    let grids: Grids = field(&doc, "grids", &mut diags).unwrap_or(Grids { points: None, ranges: None });
    let x: Option<Vec<f64>> = field(&doc, "x", &mut diags);
    let output: Output = field(&doc, "output", &mut diags).unwrap_or_default();
    let num: Option<NumericDoc> = match doc.get("numeric") {
        None => Some(serde_json::from_value(Value::Object(Default::default())).expect("all optional")),
        Some(_) => field(&doc, "numeric", &mut diags),
    };

    let mut numeric = None;
    if let Some(nd) = num {
        if nd.seed.is_none() {
            diags.push("numeric.seed required".into());
        }
        let n = Numeric {
            mesh_n: nd.mesh_n.unwrap_or(16),
            mesh_chain: nd.mesh_chain,
            k_max: nd.k_max.unwrap_or(crate::cell::DEFAULT_K_MAX),
            eps_list: nd.eps_list.unwrap_or_else(|| vec![1.0, 0.5, 0.25]),
            starts: nd.starts.unwrap_or(8),
            seed: nd.seed.unwrap_or(0),
            sample_size: nd.sample_size.unwrap_or(256),
            max_depth: nd.max_depth.unwrap_or(crate::laminate::DEFAULT_MAX_DEPTH),
            det_window: nd.det_window,
            lattice: nd.lattice.unwrap_or(false),
            tolerances: nd.tolerances.unwrap_or_default(),
        };
        if n.mesh_n < 2 || n.mesh_n > MAX_MESH_N {
            diags.push(format!("numeric.mesh-n must lie in [2, {MAX_MESH_N}], got {}", n.mesh_n));
        }
        if let Some(chain) = &n.mesh_chain {
            if chain.is_empty() || chain.iter().any(|c| !(2..=MAX_MESH_N).contains(c)) {
                diags.push(format!("numeric.mesh-chain entries must lie in [2, {MAX_MESH_N}]"));
            }
            if chain.windows(2).any(|w| w[1] % w[0] != 0 || w[1] <= w[0]) {
                diags.push("numeric.mesh-chain must be increasing with each entry dividing the next".into());
            }
        }
        if n.k_max == 0 || n.k_max > MAX_K {
            diags.push(format!("numeric.k-max must lie in [1, {MAX_K}], got {}", n.k_max));
        }
        if n.starts == 0 || n.starts > MAX_STARTS {
            diags.push(format!("numeric.starts must lie in [1, {MAX_STARTS}], got {}", n.starts));
        }
        if n.sample_size == 0 {
            diags.push("numeric.sample-size must be positive".into());
        }
        if n.eps_list.is_empty() {
            diags.push("eps-list must not be empty".into());
        }
        if n.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            diags.push("eps-list must be strictly decreasing".into());
        }
        for &e in &n.eps_list {
            if crate::gamma::eps_to_period_count(e).is_err() {
                diags.push(format!("eps-list entry {e} is not 1/j for a positive integer j"));
            }
        }
        if let Some([t1, t2]) = n.det_window {
            if !(t1 < t2) {
                diags.push("numeric.det-window must satisfy t1 < t2".into());
            }
        }
        let t = &n.tolerances;
        if !(t.rel_tol > 0.0 && t.lattice_tol >= 0.0) || t.max_iters == 0 || t.lattice_iters == 0 {
            diags.push("numeric.tolerances must be positive".into());
        }
        numeric = Some(n);
    }

    if let Some(spec) = &integrand {
        let dof = spec.dof_per_point();
        let mut count = 0;
        match (&grids.points, &grids.ranges) {
            (Some(_), Some(_)) => diags.push("grids: give either points or ranges, not both".into()),
            (Some(p), None) => {
                count = p.len();
                if p.iter().any(|e| e.len() != dof) {
                    diags.push(format!("grids.points: every matrix needs {dof} entries (m*N, row-major)"));
                }
                if p.iter().flatten().any(|v| !v.is_finite()) {
                    diags.push("grids.points: entries must be finite".into());
                }
            }
            (None, Some(r)) => {
                if r.lo.len() != dof || r.hi.len() != dof || r.nodes.len() != dof {
                    diags.push(format!("grids.ranges: lo, hi and nodes need {dof} entries each"));
                } else if r.nodes.contains(&0) || r.lo.iter().zip(&r.hi).any(|(a, b)| !(a <= b)) {
                    diags.push("grids.ranges: nodes must be positive and lo <= hi".into());
                } else {
                    count = r.nodes.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).unwrap_or(usize::MAX);
                }
            }
            (None, None) => {
                if command.is_some_and(|c| c != Command::Check) {
                    diags.push("grids required for this command".into());
                }
            }
        }
        if count > MAX_GRID_POINTS {
            diags.push(format!("grids: {count} samples exceed the limit {MAX_GRID_POINTS}"));
        }
        if let Some(x) = &x {
            if x.len() != spec.n {
                diags.push(format!("x needs {} coordinates", spec.n));
            }
        }
        if let (Some(cmd), Some(n)) = (command, &numeric) {
            match cmd {
                Command::Laminate if spec.m != spec.n => diags.push("laminate needs square matrices".into()),
                Command::Laminate if n.det_window.is_none() && spec.chat2_constants().is_none() => {
                    diags.push("laminate needs numeric.det-window or an integrand with (alpha, beta)".into())
                }
                Command::Gamma if count != 1 => {
                    diags.push("gamma runs one matrix per config".into())
                }
                Command::Envelope if n.lattice && grids.ranges.is_none() => {
                    diags.push("numeric.lattice needs grids.ranges".into())
                }
                Command::Whom | Command::Gamma => {
                    let lat = spec.a.lattice();
                    if n.mesh_n % lat != 0 {
                        diags.push(format!("numeric.mesh-n must be a multiple of the coefficient lattice {lat}"));
                    }
                }
                _ => {}
            }
        }
    }

    if !diags.is_empty() {
        return Err(diags);
    }
    let integrand = integrand.expect("checked");
    let x = x.unwrap_or_else(|| vec![0.0; integrand.n]);
    Ok(RunConfig {
        command: command.expect("checked"),
        integrand,
        grids,
        x,
        numeric: numeric.expect("checked"),
        output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "command": "check",
        "integrand": {"m": 1, "N": 1, "p": 2.0, "form": "power",
                      "a": {"kind": "constant", "value": 1.0}, "C": 1.0},
        "numeric": {"seed": 7}
    }"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let c = validate(MINIMAL.as_bytes()).unwrap();
        assert_eq!(c.command, Command::Check);
        assert_eq!(c.numeric.mesh_n, 16);
        assert_eq!(c.numeric.k_max, 3);
        assert_eq!(c.numeric.seed, 7);
        assert_eq!(c.x, vec![0.0]);
        assert!(c.output.csv && c.output.json);
    }

    #[test]
    fn missing_seed() {
        let text = MINIMAL.replace(r#""seed": 7"#, r#""starts": 4"#);
        let d = validate(text.as_bytes()).unwrap_err();
        assert!(d.contains(&"numeric.seed required".to_string()), "{d:?}");
    }

    #[test]
    fn diagnostics_are_aggregated() {
        let text = MINIMAL.replace(r#""seed": 7"#, r#""eps-list": [0.5, 0.5], "mesh-n": 1000"#);
        let d = validate(text.as_bytes()).unwrap_err();
        assert!(d.contains(&"numeric.seed required".to_string()));
        assert!(d.contains(&"eps-list must be strictly decreasing".to_string()));
        assert!(d.iter().any(|s| s.starts_with("numeric.mesh-n")));
    }

    #[test]
    fn syntax_error_has_position() {
        let d = validate(b"{\n  \"command\": }").unwrap_err();
        assert!(d[0].contains("line 2"), "{d:?}");
    }

    #[test]
    fn ranges_expand_in_order() {
        let r = Ranges { lo: vec![0.0, -1.0], hi: vec![1.0, 1.0], nodes: vec![2, 3] };
        assert_eq!(r.point(0), vec![0.0, -1.0]);
        assert_eq!(r.point(1), vec![0.0, 0.0]);
        assert_eq!(r.point(5), vec![1.0, 1.0]);
    }
}
