//! Experiment configuration: a TOML file with optional top-level defaults
//! and one `[[experiment]]` table per experiment.

use homlab::fields::{construct_field, CoefficientField, FieldSpec, Mat};
use homlab::twoscale::Manufactured;
use homlab::verify::suites::Theorem11Norm;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("experiment {id}: {reason}")]
    Invalid { id: String, reason: String },
}

fn invalid(id: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        id: id.to_string(),
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Theorem11,
    Green,
    Oracle1d,
    Counterexamples,
    Assumptions,
}

impl Suite {
    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Theorem11 => "theorem11",
            Suite::Green => "green",
            Suite::Oracle1d => "oracle1d",
            Suite::Counterexamples => "counterexamples",
            Suite::Assumptions => "assumptions",
        }
    }
}

/// Solver and check tolerances; every field falls back to the top-level
/// table, then to the built-in default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesConfig {
    pub solver: Option<f64>,
    pub max_iter: Option<usize>,
    pub oracle_rel: Option<f64>,
    pub dyadic: Option<f64>,
    pub reciprocity: Option<f64>,
    pub a_star: Option<f64>,
    pub residual_factor: Option<f64>,
    pub lipschitz_spread: Option<f64>,
    pub sublinearity_slack: Option<f64>,
}

/// Resolved tolerances, recorded in the summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    pub solver: f64,
    pub max_iter: Option<usize>,
    pub oracle_rel: f64,
    pub dyadic: f64,
    pub reciprocity: f64,
    pub a_star: f64,
    pub residual_factor: f64,
    pub lipschitz_spread: f64,
    pub sublinearity_slack: f64,
}

impl TolerancesConfig {
    fn or(&self, base: &TolerancesConfig) -> TolerancesConfig {
        TolerancesConfig {
            solver: self.solver.or(base.solver),
            max_iter: self.max_iter.or(base.max_iter),
            oracle_rel: self.oracle_rel.or(base.oracle_rel),
            dyadic: self.dyadic.or(base.dyadic),
            reciprocity: self.reciprocity.or(base.reciprocity),
            a_star: self.a_star.or(base.a_star),
            residual_factor: self.residual_factor.or(base.residual_factor),
            lipschitz_spread: self.lipschitz_spread.or(base.lipschitz_spread),
            sublinearity_slack: self.sublinearity_slack.or(base.sublinearity_slack),
        }
    }

    fn resolve(&self) -> Tolerances {
        Tolerances {
            solver: self.solver.unwrap_or(1e-10),
            max_iter: self.max_iter,
            oracle_rel: self.oracle_rel.unwrap_or(1e-6),
            dyadic: self.dyadic.unwrap_or(1e-10),
            reciprocity: self.reciprocity.unwrap_or(1e-6),
            a_star: self.a_star.unwrap_or(1e-4),
            residual_factor: self.residual_factor.unwrap_or(1.8),
            lipschitz_spread: self.lipschitz_spread.unwrap_or(4.0),
            sublinearity_slack: self.sublinearity_slack.unwrap_or(0.1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub family: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub background: Option<String>,
}

/// `Ω = (-half_width, half_width)^d`, `Ω₁` the concentric box scaled by
/// `inner_fraction`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    #[serde(default = "one")]
    pub half_width: f64,
    #[serde(default = "half")]
    pub inner_fraction: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig {
            half_width: 1.0,
            inner_fraction: 0.5,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

/// Grid sizes; unset entries take the per-suite defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionConfig {
    /// Fine cells per period, `h = ε / cells_per_period`.
    pub cells_per_period: Option<usize>,
    /// Defect box half-width in units of `half_width / ε_min`.
    pub box_margin: Option<f64>,
    /// Torus size of the cell problem in the assumption checks.
    pub cell_n: Option<usize>,
    /// Cells per side of the Green probe grid.
    pub green_cells: Option<usize>,
    /// Green pair separation in cells.
    pub green_pair_cells: Option<usize>,
    /// Cells per period of the residual refinement sequence.
    pub residual_cells: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub dim: usize,
    pub field: FieldConfig,
    pub eps: Vec<f64>,
    #[serde(default)]
    pub suites: Vec<Suite>,
    #[serde(default)]
    pub domain: DomainConfig,
    /// Manufactured `u*`; the source is `f = -div(a* ∇u*)`.
    pub source: Option<Manufactured>,
    #[serde(default)]
    pub resolution: ResolutionConfig,
    #[serde(default)]
    pub tolerances: TolerancesConfig,
    /// Norms of the theorem11 sweep.
    pub norms: Option<Vec<Theorem11Norm>>,
    /// Fixed `ε` of the residual refinement (theorem11); skipped if unset.
    pub residual_eps: Option<f64>,
    /// Evaluation points of the 1D oracle.
    pub oracle_x: Option<Vec<f64>>,
    /// Ball radius of the Lipschitz check.
    pub lipschitz_radius: Option<f64>,
    /// Rows of the expected homogenized matrix (assumptions).
    pub expected_a_star: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub tolerances: TolerancesConfig,
    #[serde(default, rename = "experiment")]
    pub experiments: Vec<ExperimentConfig>,
}

/// A validated experiment with its constructed field.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub field: CoefficientField,
    pub tolerances: Tolerances,
    pub suites: Vec<Suite>,
}

impl Experiment {
    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn expected_a_star(&self) -> Option<Mat> {
        self.config.expected_a_star.as_ref().map(|rows| {
            let rows: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            Mat::from_rows(&rows)
        })
    }
}

pub fn default_norms() -> Vec<Theorem11Norm> {
    vec![
        Theorem11Norm::RL2,
        Theorem11Norm::GradL2,
        Theorem11Norm::GradLq { q: 4.0 },
        Theorem11Norm::HL2,
    ]
}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    Ok(toml::from_str(text)?)
}

/// Checks every experiment and constructs its field; experiments come back
/// sorted by id.
pub fn validate(run: &RunConfig) -> Result<Vec<Experiment>, ConfigError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(run.experiments.len());
    for e in &run.experiments {
        if e.id.is_empty() || e.id.contains(['/', '\\', ',', '"']) {
            return Err(invalid(&e.id, "id must be non-empty without '/', '\\', ',' or '\"'"));
        }
        if !seen.insert(e.id.clone()) {
            return Err(invalid(&e.id, "duplicate experiment id"));
        }
        out.push(validate_one(e, &run.tolerances)?);
    }
    out.sort_by(|a, b| a.config.id.cmp(&b.config.id));
    Ok(out)
}

fn validate_one(e: &ExperimentConfig, base: &TolerancesConfig) -> Result<Experiment, ConfigError> {
    let id = e.id.as_str();
    let spec = FieldSpec {
        family: e.field.family.clone(),
        dim: e.dim,
        params: e.field.params.clone(),
        background: e.field.background.clone(),
    };
    let field = construct_field(&spec).map_err(|err| invalid(id, format!("field: {err}")))?;
    let tolerances = e.tolerances.or(base).resolve();
    if !(tolerances.solver > 0.0) {
        return Err(invalid(id, "tolerances.solver must be positive"));
    }
    if tolerances.max_iter == Some(0) {
        return Err(invalid(id, "tolerances.max_iter must be at least 1"));
    }
    if e.eps.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(invalid(id, "eps entries must be positive and finite"));
    }
    let mut sorted = e.eps.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid(id, "eps entries must be distinct"));
    }
    if !(e.domain.half_width > 0.0) || !(e.domain.inner_fraction > 0.0 && e.domain.inner_fraction <= 1.0) {
        return Err(invalid(id, "domain needs half_width > 0 and inner_fraction in (0, 1]"));
    }
    if let Some(u) = &e.source {
        check_source(id, u, e.dim)?;
    }
    if e.resolution.cells_per_period == Some(0) || e.resolution.cell_n == Some(0) {
        return Err(invalid(id, "resolutions must be positive"));
    }
    let mut suites = e.suites.clone();
    suites.sort();
    suites.dedup();
    for &s in &suites {
        let need_eps = |n: usize| {
            if e.eps.len() < n {
                Err(invalid(id, format!("suite {} needs at least {n} eps", s.as_str())))
            } else {
                Ok(())
            }
        };
        match s {
            Suite::Theorem11 => {
                need_eps(1)?;
                field.ensure_solvable().map_err(|err| invalid(id, err.to_string()))?;
                if matches!(&e.norms, Some(n) if n.is_empty()) {
                    return Err(invalid(id, "norms must not be empty"));
                }
                if let Some(r) = &e.resolution.residual_cells {
                    if r.len() < 2 {
                        return Err(invalid(id, "residual_cells needs at least 2 resolutions"));
                    }
                }
            }
            Suite::Green => {
                need_eps(1)?;
                if !(2..=3).contains(&e.dim) {
                    return Err(invalid(id, "green runs in d = 2 or 3"));
                }
                field.ensure_solvable().map_err(|err| invalid(id, err.to_string()))?;
            }
            Suite::Oracle1d => {
                need_eps(1)?;
                if e.field.family != "slow-decay" {
                    return Err(invalid(id, "oracle1d needs the slow-decay family"));
                }
                if !field.r().is_some_and(|r| r > 1.0) {
                    return Err(invalid(id, "oracle1d needs r > 1"));
                }
            }
            Suite::Counterexamples => {
                if !matches!(e.field.family.as_str(), "dyadic" | "triangular") {
                    return Err(invalid(id, "counterexamples need the dyadic or triangular family"));
                }
            }
            Suite::Assumptions => {
                field.ensure_solvable().map_err(|err| invalid(id, err.to_string()))?;
                if e.dim == 2 {
                    need_eps(2)?;
                }
                if let Some(rows) = &e.expected_a_star {
                    if rows.len() != e.dim || rows.iter().any(|r| r.len() != e.dim) {
                        return Err(invalid(id, format!("expected_a_star must be {d}x{d}", d = e.dim)));
                    }
                }
            }
        }
    }
    Ok(Experiment {
        config: e.clone(),
        field,
        tolerances,
        suites,
    })
}

fn check_source(id: &str, u: &Manufactured, d: usize) -> Result<(), ConfigError> {
    match u {
        Manufactured::Cosine { half_width } if !(*half_width > 0.0) => {
            Err(invalid(id, "source.half_width must be positive"))
        }
        Manufactured::Quadratic { b, q, .. } if b.len() != d || q.len() != d * d => {
            Err(invalid(id, format!("quadratic source needs b of length {d} and q of length {}", d * d)))
        }
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [[experiment]]
        id = "id2"
        dim = 2
        eps = [0.25, 0.125]
        suites = ["theorem11"]
        field = { family = "identity" }
    "#;

    #[test]
    fn minimal_config_validates() {
        let run = parse(MINIMAL).unwrap();
        let ex = validate(&run).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].tolerances.solver, 1e-10);
        assert_eq!(ex[0].suites, vec![Suite::Theorem11]);
    }

    #[test]
    fn missing_eps_is_a_parse_error() {
        let text = MINIMAL.replace("eps = [0.25, 0.125]", "");
        assert!(matches!(parse(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn tolerances_fall_back_to_top_level() {
        let text = format!("tolerances = {{ solver = 1e-8, max_iter = 5 }}\n{MINIMAL}");
        let ex = validate(&parse(&text).unwrap()).unwrap();
        assert_eq!(ex[0].tolerances.solver, 1e-8);
        assert_eq!(ex[0].tolerances.max_iter, Some(5));
    }

    #[test]
    fn duplicate_ids_and_bad_prerequisites_are_rejected() {
        let dup = format!("{MINIMAL}{MINIMAL}");
        assert!(validate(&parse(&dup).unwrap()).is_err());
        let oracle = MINIMAL.replace("\"theorem11\"", "\"oracle1d\"");
        assert!(validate(&parse(&oracle).unwrap()).is_err());
        let diag = MINIMAL.replace("\"identity\"", "\"triangular\"");
        assert!(validate(&parse(&diag).unwrap()).is_err());
    }

    #[test]
    fn norms_parse_by_tag() {
        let text = MINIMAL.replace(
            "suites = [\"theorem11\"]",
            "suites = [\"theorem11\"]\nnorms = [{ norm = \"grad_lq\", q = 4.0 }, { norm = \"h_l2\" }]",
        );
        let run = parse(&text).unwrap();
        assert_eq!(
            run.experiments[0].norms.as_deref(),
            Some(&[Theorem11Norm::GradLq { q: 4.0 }, Theorem11Norm::HL2][..])
        );
    }
}
